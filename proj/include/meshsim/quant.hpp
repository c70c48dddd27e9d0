#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace meshsim {

// Simulated payload quantization. Values stay doubles; quantize() snaps them
// to the target format's grid with round-to-nearest-even and saturation at
// the max finite value (no Inf is ever produced).
enum class QuantScheme { none, bf16, fp8_e4m3 };

namespace detail {

// Round-to-nearest-even onto a minifloat grid with `mant_bits` stored
// mantissa bits and minimum normal exponent `min_exp` (subnormals keep the
// quantum of the smallest normal binade).
inline double quantize_minifloat(double v, int mant_bits, int min_exp, double max_finite) {
  if (v == 0.0) return v;
  const double a = std::fabs(v);
  if (a >= max_finite) return std::copysign(max_finite, v);
  int e = std::ilogb(a);
  if (e < min_exp) e = min_exp;
  const double step = std::ldexp(1.0, e - mant_bits);
  double q = std::nearbyint(a / step) * step;
  if (q > max_finite) q = max_finite;
  return std::copysign(q, v);
}

}  // namespace detail

// bf16: 8 exponent bits (min normal 2^-126), 7 mantissa bits, max finite
// 2^127 * (255/128).
inline double quantize_bf16(double v) {
  return detail::quantize_minifloat(v, 7, -126, 0x1.fep127);
}

// fp8 E4M3 (OCP convention): 4 exponent bits biased 7, 3 mantissa bits,
// max finite 448, no Inf encoding.
inline double quantize_fp8_e4m3(double v) {
  return detail::quantize_minifloat(v, 3, -6, 448.0);
}

inline double quantize(double v, QuantScheme scheme) {
  if (!std::isfinite(v)) throw std::invalid_argument("quantize: non-finite input");
  switch (scheme) {
    case QuantScheme::none:
      return v;
    case QuantScheme::bf16:
      return quantize_bf16(v);
    case QuantScheme::fp8_e4m3:
      return quantize_fp8_e4m3(v);
  }
  throw std::logic_error("quantize: bad scheme");
}

inline std::string to_string(QuantScheme s) {
  switch (s) {
    case QuantScheme::none: return "none";
    case QuantScheme::bf16: return "bf16";
    case QuantScheme::fp8_e4m3: return "fp8_e4m3";
  }
  return "?";
}

inline QuantScheme quant_scheme_from_string(const std::string& s) {
  if (s == "none") return QuantScheme::none;
  if (s == "bf16") return QuantScheme::bf16;
  if (s == "fp8_e4m3" || s == "fp8") return QuantScheme::fp8_e4m3;
  throw std::invalid_argument("unknown quant scheme: " + s);
}

}  // namespace meshsim
