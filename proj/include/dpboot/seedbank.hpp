#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

namespace dpboot {

// Counter-based pseudo-random stream. Every output is a pure function of
// (key, position), so draws are reproducible under any threading layout and
// a stream can be re-derived at any time to replay its sequence.
class Stream {
 public:
  explicit Stream(std::uint64_t key, std::uint64_t position = 0)
      : key_(key), pos_(position) {}

  std::uint64_t next_u64();

  // Uniform on [0, 1) with 53-bit resolution.
  double uniform01();
  // Uniform on (0, 1); never returns an exact endpoint.
  double uniform_open();
  // Uniform on (-1, 1).
  double uniform_sym();
  // Standard normal via inverse-CDF, one draw consumed per variate.
  double normal01();
  // Gamma with given shape and *rate* (mean = shape / rate).
  double gamma(double shape, double rate);
  // Zero-mean Laplace with scale b (variance 2 b^2).
  double laplace(double scale);

  // Advances the counter as if n single-draw variates had been consumed.
  // Valid because every fixed-width draw above consumes exactly one counter
  // step; gamma consumes a variable number, so skipping past one is not
  // meaningful.
  void skip(std::uint64_t n) { pos_ += n; }

  std::uint64_t key() const { return key_; }
  std::uint64_t position() const { return pos_; }

 private:
  std::uint64_t key_;
  std::uint64_t pos_;
};

// Derives independent tagged substreams from one master seed. The channel
// convention used throughout: "...'/data'" streams drive synthetic data,
// "...'/dp'" streams drive privacy noise; callers encode that in the tag.
class SeedBank {
 public:
  explicit SeedBank(std::uint64_t master_seed) : master_(master_seed) {}

  // tag must be nonempty; indices select replicate/draw coordinates.
  Stream derive(std::string_view tag, std::span<const std::uint64_t> indices) const;
  Stream derive(std::string_view tag, std::initializer_list<std::uint64_t> indices) const;

  std::uint64_t master_seed() const { return master_; }

 private:
  std::uint64_t master_;
};

enum class DrawKind { Normal01, Uniform01, UniformSym, Gamma };

struct DrawParams {
  double shape = 1.0;  // Gamma only
  double rate = 1.0;   // Gamma only
};

// Bulk sampling front-end over Stream; count >= 0, Gamma needs shape, rate > 0.
std::vector<double> draw_standard(Stream& stream, DrawKind kind, std::size_t count,
                                  const DrawParams& params = {});

}  // namespace dpboot
