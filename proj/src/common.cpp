#include "medfuse/common.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>

namespace medfuse {

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out << " x ";
    out << shape[i];
  }
  out << "]";
  return out.str();
}

namespace {

// splitmix64 finalizer; decorrelates derived stream seeds.
std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

std::uint64_t Rng::next_u64() { return engine_(); }

Scalar Rng::uniform() {
  // 53 mantissa bits -> uniform in [0, 1).
  return static_cast<Scalar>(next_u64() >> 11) * 0x1.0p-53;
}

Scalar Rng::uniform(Scalar lo, Scalar hi) { return lo + (hi - lo) * uniform(); }

Scalar Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // u in (0, 1] so the log is finite.
  const Scalar u = static_cast<Scalar>((next_u64() >> 11) + 1) * 0x1.0p-53;
  const Scalar v = uniform();
  const Scalar r = std::sqrt(-2.0 * std::log(u));
  const Scalar theta = 2.0 * M_PI * v;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

Scalar Rng::normal(Scalar mean, Scalar stddev) { return mean + stddev * normal(); }

Index Rng::uniform_index(Index n) {
  if (n <= 0) throw ContractError("Rng::uniform_index requires n > 0");
  return static_cast<Index>(next_u64() % static_cast<std::uint64_t>(n));
}

bool Rng::bernoulli(Scalar p) { return uniform() < p; }

Rng Rng::derive(std::uint64_t stream) const {
  return Rng(mix64(seed_ ^ mix64(stream)));
}

std::uint64_t fnv1a64(const void* data, std::size_t n) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    hash ^= bytes[i];
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::uint64_t fnv1a64(const std::string& text) { return fnv1a64(text.data(), text.size()); }

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return std::string(buf);
}

Scalar inverse_normal_cdf(Scalar p) {
  if (!(p > 0.0 && p < 1.0)) throw ValidationError("inverse_normal_cdf requires p in (0,1)");
  static const Scalar a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const Scalar b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const Scalar c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const Scalar d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const Scalar p_low = 0.02425;
  Scalar q, r, x;
  if (p < p_low) {
    q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    q = p - 0.5;
    r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  return x;
}

}  // namespace medfuse
