#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptqrel/error.hpp"
#include "ptqrel/hash.hpp"
#include "ptqrel/tensor.hpp"

namespace ptqrel {

inline constexpr int kMinBits = 2;
inline constexpr int kMaxBits = 8;

constexpr bool supported_bitwidth(int k) noexcept { return k >= kMinBits && k <= kMaxBits; }

// Uniform quantizer with the zero point fixed at 0. Signed grids are
// symmetric-by-scale with the usual two's-complement range.
struct QuantParams {
  int bits = 8;
  double scale = 1.0;
  bool is_signed = true;

  std::int64_t qmin() const noexcept { return is_signed ? -(std::int64_t{1} << (bits - 1)) : 0; }
  std::int64_t qmax() const noexcept {
    return is_signed ? (std::int64_t{1} << (bits - 1)) - 1 : (std::int64_t{1} << bits) - 1;
  }

  bool operator==(const QuantParams&) const = default;
};

// Largest positive grid level for a k-bit grid.
constexpr std::int64_t positive_levels(int bits, bool is_signed) noexcept {
  return is_signed ? (std::int64_t{1} << (bits - 1)) - 1 : (std::int64_t{1} << bits) - 1;
}

inline void validate(const QuantParams& p) {
  if (!supported_bitwidth(p.bits)) {
    throw Error(ErrorKind::InvalidArgument, "unsupported bit-width " + std::to_string(p.bits));
  }
  if (!(p.scale > 0.0) || !std::isfinite(p.scale)) {
    throw Error(ErrorKind::InvalidArgument, "scale must be positive and finite");
  }
}

// clamp(round(x / s), qmin, qmax) with round-half-away-from-zero. The ratio is
// formed in double so the rounding decision is exact for float inputs.
inline std::int64_t quantize(float x, const QuantParams& p) noexcept {
  const double r = std::round(static_cast<double>(x) / p.scale);
  if (!(r > static_cast<double>(p.qmin()))) return p.qmin();
  if (r >= static_cast<double>(p.qmax())) return p.qmax();
  return static_cast<std::int64_t>(r);
}

inline double dequantize(std::int64_t q, const QuantParams& p) {
  if (q < p.qmin() || q > p.qmax()) {
    throw Error(ErrorKind::OutOfRange, std::to_string(q) + " outside [" +
                                           std::to_string(p.qmin()) + ", " +
                                           std::to_string(p.qmax()) + "]");
  }
  return p.scale * static_cast<double>(q);
}

inline float fake_quant(float x, const QuantParams& p) noexcept {
  return static_cast<float>(p.scale * static_cast<double>(quantize(x, p)));
}

inline void fake_quant_inplace(std::span<float> values, const QuantParams& p) noexcept {
  for (float& v : values) v = fake_quant(v, p);
}

inline Tensor fake_quant(const Tensor& t, const QuantParams& p) {
  Tensor out = t;
  fake_quant_inplace(out.data(), p);
  return out;
}

// A quantizable site: the weight of, or the input activation into, one
// linear/conv2d layer.
enum class SiteKind { Weight, Input };

struct SiteId {
  std::size_t layer = 0;
  SiteKind kind = SiteKind::Input;

  auto operator<=>(const SiteId&) const = default;

  std::string str() const {
    return "layers." + std::to_string(layer) + (kind == SiteKind::Weight ? ".weight" : ".input");
  }

  static SiteId parse(const std::string& s) {
    const auto bad = [&] { return Error(ErrorKind::UnknownSite, "malformed site id '" + s + "'"); };
    if (s.rfind("layers.", 0) != 0) throw bad();
    const auto dot = s.find('.', 7);
    if (dot == std::string::npos || dot == 7) throw bad();
    const std::string index = s.substr(7, dot - 7);
    if (index.find_first_not_of("0123456789") != std::string::npos) throw bad();
    const std::string tail = s.substr(dot + 1);
    SiteId id{std::stoull(index), SiteKind::Input};
    if (tail == "weight") {
      id.kind = SiteKind::Weight;
    } else if (tail != "input") {
      throw bad();
    }
    return id;
  }
};

struct QuantConfig {
  std::map<SiteId, QuantParams> sites;

  const QuantParams* find(const SiteId& id) const {
    auto it = sites.find(id);
    return it == sites.end() ? nullptr : &it->second;
  }

  bool operator==(const QuantConfig&) const = default;
};

// {"sites": {"layers.0.input": {"bits": 4, "scale": 0.0625, "signed": false}, ...}}
// Keys are emitted in lexicographic order; scales use shortest round-trip form.
inline nlohmann::json to_json(const QuantConfig& config) {
  nlohmann::json sites = nlohmann::json::object();
  for (const auto& [id, p] : config.sites) {
    sites[id.str()] = {{"bits", p.bits}, {"scale", p.scale}, {"signed", p.is_signed}};
  }
  return {{"sites", std::move(sites)}};
}

inline QuantConfig quant_config_from_json(const nlohmann::json& j) {
  QuantConfig config;
  try {
    for (const auto& [key, v] : j.at("sites").items()) {
      QuantParams p{v.at("bits").get<int>(), v.at("scale").get<double>(), v.at("signed").get<bool>()};
      validate(p);
      config.sites.emplace(SiteId::parse(key), p);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, std::string("malformed quant config: ") + e.what());
  }
  return config;
}

inline std::string config_digest(const QuantConfig& config) {
  return hex64(fnv1a64(to_json(config).dump()));
}

}  // namespace ptqrel
