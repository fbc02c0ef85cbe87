#include "dpboot/seedbank.hpp"

#include <cmath>
#include <stdexcept>

#include "dpboot/special.hpp"

namespace dpboot {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;

// SplitMix64 finalizer; full-avalanche 64-bit mix.
inline std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ull;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebull;
  z ^= z >> 31;
  return z;
}

// Order-sensitive absorption of one word into a running hash.
inline std::uint64_t absorb(std::uint64_t h, std::uint64_t v) {
  return mix64((h ^ v) * 0x2545f4914f6cdd1dull + kGolden);
}

}  // namespace

std::uint64_t Stream::next_u64() {
  ++pos_;
  return mix64(key_ + pos_ * kGolden);
}

double Stream::uniform01() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Stream::uniform_open() {
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double Stream::uniform_sym() { return 2.0 * uniform_open() - 1.0; }

double Stream::normal01() { return norm_ppf(uniform_open()); }

double Stream::gamma(double shape, double rate) {
  if (!(shape > 0.0) || !(rate > 0.0))
    throw std::invalid_argument("Stream::gamma: shape and rate must be positive");
  if (shape < 1.0) {
    const double u = uniform_open();
    return gamma(shape + 1.0, rate) * std::pow(u, 1.0 / shape);
  }
  // Marsaglia-Tsang squeeze method.
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal01();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform_open();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v / rate;
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v / rate;
  }
}

double Stream::laplace(double scale) {
  if (scale < 0.0) throw std::invalid_argument("Stream::laplace: scale must be >= 0");
  const double u = uniform_open() - 0.5;
  const double mag = -std::log1p(-2.0 * std::fabs(u));
  return (u < 0.0 ? -scale : scale) * mag;
}

Stream SeedBank::derive(std::string_view tag, std::span<const std::uint64_t> indices) const {
  if (tag.empty()) throw std::invalid_argument("SeedBank::derive: tag must be nonempty");
  std::uint64_t h = mix64(master_ ^ 0x6a09e667f3bcc909ull);
  h = absorb(h, static_cast<std::uint64_t>(tag.size()));
  std::uint64_t chunk = 0;
  int nb = 0;
  for (unsigned char ch : tag) {
    chunk |= static_cast<std::uint64_t>(ch) << (8 * nb);
    if (++nb == 8) {
      h = absorb(h, chunk);
      chunk = 0;
      nb = 0;
    }
  }
  if (nb > 0) h = absorb(h, chunk);
  h = absorb(h, 0xd6e8feb86659fd93ull ^ static_cast<std::uint64_t>(indices.size()));
  for (std::uint64_t ix : indices) h = absorb(h, ix);
  return Stream(mix64(h));
}

Stream SeedBank::derive(std::string_view tag, std::initializer_list<std::uint64_t> indices) const {
  return derive(tag, std::span<const std::uint64_t>(indices.begin(), indices.size()));
}

std::vector<double> draw_standard(Stream& stream, DrawKind kind, std::size_t count,
                                  const DrawParams& params) {
  std::vector<double> out(count);
  switch (kind) {
    case DrawKind::Normal01:
      for (auto& v : out) v = stream.normal01();
      break;
    case DrawKind::Uniform01:
      for (auto& v : out) v = stream.uniform01();
      break;
    case DrawKind::UniformSym:
      for (auto& v : out) v = stream.uniform_sym();
      break;
    case DrawKind::Gamma:
      if (!(params.shape > 0.0) || !(params.rate > 0.0))
        throw std::invalid_argument("draw_standard: Gamma needs shape, rate > 0");
      for (auto& v : out) v = stream.gamma(params.shape, params.rate);
      break;
  }
  return out;
}

}  // namespace dpboot
