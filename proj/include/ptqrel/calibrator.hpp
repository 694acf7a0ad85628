#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ptqrel/engine.hpp"
#include "ptqrel/error.hpp"
#include "ptqrel/model.hpp"
#include "ptqrel/quantizer.hpp"
#include "ptqrel/tensor.hpp"

namespace ptqrel {

enum class MetricKind { MinMax, MSE, Cosine, KL };

constexpr std::string_view to_string(MetricKind m) noexcept {
  switch (m) {
    case MetricKind::MinMax: return "minmax";
    case MetricKind::MSE: return "mse";
    case MetricKind::Cosine: return "cosine";
    case MetricKind::KL: return "kl";
  }
  return "?";
}

inline MetricKind metric_from_string(std::string_view s) {
  for (auto m : {MetricKind::MinMax, MetricKind::MSE, MetricKind::Cosine, MetricKind::KL}) {
    if (to_string(m) == s) return m;
  }
  throw Error(ErrorKind::InvalidArgument, "unknown metric '" + std::string(s) + "'");
}

enum class TieRule { PreferSmaller, PreferLarger };

struct SearchConfig {
  std::size_t candidate_count = 100;
  std::size_t kl_bins = 2048;
  TieRule tie_rule = TieRule::PreferSmaller;
};

// Clip candidate i of the uniform grid over (0, peak]; i runs 1..count.
inline double search_candidate(std::size_t i, std::size_t count, double peak) noexcept {
  return static_cast<double>(i) / static_cast<double>(count) * peak;
}

// Clipped reference histogram for a KL candidate: samples are clamped to the
// grid's clip range [-c, c] (or [0, c]) with c = scale * qmax, so saturated
// mass piles up in the edge bins. Bins span [lo, hi] regardless of the clip.
inline Histogram clipped_histogram(const Tensor& samples, const QuantParams& p, std::size_t bins,
                                   double lo, double hi) {
  const double clip = p.scale * static_cast<double>(p.qmax());
  Histogram h = histogram(std::span<const float>{}, bins, lo, hi);
  for (float x : samples.data()) {
    ++h.counts[histogram_bin(std::clamp(static_cast<double>(x), p.is_signed ? -clip : 0.0, clip),
                             bins, lo, hi)];
  }
  return h;
}

// Expanded quantized histogram for a KL candidate, built from the samples
// inside the clip range only. Each grid level's count is spread evenly over
// the bins whose centres fall in that level's rounding cell and that hold at
// least one in-range sample; a cell with no such bin spreads over all its
// bins, and a cell narrower than a bin lands in the bin holding the level.
// Samples beyond the clip contribute nothing, which is what penalises
// aggressive clipping against the reference.
inline std::vector<double> quantized_histogram(const Tensor& samples, const QuantParams& p,
                                               std::size_t bins, double lo, double hi) {
  const double clip = p.scale * static_cast<double>(p.qmax());
  const double width = (hi - lo) / static_cast<double>(bins);
  const std::int64_t qmin = p.qmin();
  std::vector<double> level_counts(static_cast<std::size_t>(p.qmax() - qmin + 1), 0.0);
  std::vector<bool> occupied(bins, false);
  for (float x : samples.data()) {
    if (std::fabs(static_cast<double>(x)) > clip) continue;
    level_counts[static_cast<std::size_t>(quantize(x, p) - qmin)] += 1.0;
    occupied[histogram_bin(x, bins, lo, hi)] = true;
  }

  std::vector<double> q(bins, 0.0);
  const auto first_bin_at_or_after = [&](double x) -> std::size_t {
    const double pos = std::ceil((x - lo) / width - 0.5);
    if (!(pos > 0.0)) return 0;
    return pos >= static_cast<double>(bins) ? bins : static_cast<std::size_t>(pos);
  };
  for (std::size_t k = 0; k < level_counts.size(); ++k) {
    if (level_counts[k] == 0.0) continue;
    const auto level = static_cast<std::int64_t>(k) + qmin;
    const double value = p.scale * static_cast<double>(level);
    const std::size_t begin = first_bin_at_or_after(value - 0.5 * p.scale);
    const std::size_t end = first_bin_at_or_after(value + 0.5 * p.scale);
    if (begin >= end) {
      q[histogram_bin(value, bins, lo, hi)] += level_counts[k];
      continue;
    }
    std::size_t hits = 0;
    for (std::size_t b = begin; b < end; ++b) hits += occupied[b] ? 1 : 0;
    const double share = level_counts[k] / static_cast<double>(hits ? hits : end - begin);
    for (std::size_t b = begin; b < end; ++b) {
      if (!hits || occupied[b]) q[b] += share;
    }
  }
  return q;
}

// Distortion between `samples` and their fake-quantized copy under `p`.
// For KL both histograms use `kl_bins` bins over [0, peak] (or [-peak, peak]
// for a signed grid); an all-saturated candidate has an empty quantized
// histogram and scores +inf.
inline double quantization_objective(MetricKind metric, const Tensor& samples,
                                     const QuantParams& p, double peak, std::size_t kl_bins) {
  switch (metric) {
    case MetricKind::MSE: return mse(samples, fake_quant(samples, p));
    case MetricKind::Cosine: return cosine_distance(samples, fake_quant(samples, p));
    case MetricKind::KL: {
      const double lo = p.is_signed ? -peak : 0.0;
      const std::vector<double> q = quantized_histogram(samples, p, kl_bins, lo, peak);
      if (std::all_of(q.begin(), q.end(), [](double v) { return v == 0.0; })) {
        return std::numeric_limits<double>::infinity();
      }
      return kl_divergence(to_masses(clipped_histogram(samples, p, kl_bins, lo, peak)), q);
    }
    case MetricKind::MinMax: break;
  }
  throw Error(ErrorKind::InvalidArgument, "MinMax has no search objective");
}

namespace detail {

inline QuantParams grid_search(const Tensor& samples, int bits, bool is_signed, MetricKind metric,
                               const SearchConfig& search) {
  if (metric == MetricKind::MinMax) {
    throw Error(ErrorKind::InvalidArgument, "grid search needs MSE, Cosine or KL");
  }
  if (search.candidate_count == 0 || (metric == MetricKind::KL && search.kl_bins == 0)) {
    throw Error(ErrorKind::InvalidArgument, "search needs at least one candidate and bin");
  }
  if (!supported_bitwidth(bits)) {
    throw Error(ErrorKind::InvalidArgument, "unsupported bit-width " + std::to_string(bits));
  }
  require_finite(samples, "calibration samples");
  const double peak = max_abs(samples);
  if (peak == 0.0) {
    if (metric == MetricKind::Cosine) throw Error(ErrorKind::ZeroNorm, "all-zero calibration samples");
    throw Error(ErrorKind::DegenerateRange, "all-zero calibration samples");
  }
  const auto levels = static_cast<double>(positive_levels(bits, is_signed));
  QuantParams best{bits, 0.0, is_signed};
  double best_objective = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i <= search.candidate_count; ++i) {
    const QuantParams p{bits, search_candidate(i, search.candidate_count, peak) / levels, is_signed};
    const double objective = quantization_objective(metric, samples, p, peak, search.kl_bins);
    const bool better = search.tie_rule == TieRule::PreferSmaller ? objective < best_objective
                                                                  : objective <= best_objective;
    if (better || best.scale == 0.0) {
      best = p;
      best_objective = objective;
    }
  }
  return best;
}

}  // namespace detail

// Activation MinMax. The zero point is fixed at 0, so the range is widened to
// include 0 before applying (max - min) / (2^k - 1); inputs with negative
// values fall back to the signed symmetric grid, max|x| / (2^(k-1) - 1).
inline QuantParams calibrate_minmax(const Tensor& samples, int bits) {
  if (!supported_bitwidth(bits)) {
    throw Error(ErrorKind::InvalidArgument, "unsupported bit-width " + std::to_string(bits));
  }
  require_finite(samples, "calibration samples");
  const auto [lo, hi] = minmax(samples);
  if (lo == hi) throw Error(ErrorKind::DegenerateRange, "constant calibration samples");
  if (lo < 0.0f) {
    const double m = std::max(-static_cast<double>(lo), static_cast<double>(hi));
    return {bits, m / static_cast<double>(positive_levels(bits, true)), true};
  }
  const double span = static_cast<double>(hi) - std::min(static_cast<double>(lo), 0.0);
  return {bits, span / static_cast<double>(positive_levels(bits, false)), false};
}

// Activation grid search: unsigned unless the samples contain negatives.
inline QuantParams calibrate_search(const Tensor& samples, int bits, MetricKind metric,
                                    const SearchConfig& search = {}) {
  if (samples.empty()) throw Error(ErrorKind::EmptyTensor, "no calibration samples");
  const bool is_signed = minmax(samples).first < 0.0f;
  return detail::grid_search(samples, bits, is_signed, metric, search);
}

inline QuantParams calibrate_activation(const Tensor& samples, int bits, MetricKind metric,
                                        const SearchConfig& search = {}) {
  return metric == MetricKind::MinMax ? calibrate_minmax(samples, bits)
                                      : calibrate_search(samples, bits, metric, search);
}

// Weights are always on the signed symmetric grid.
inline QuantParams calibrate_weights(const Tensor& w, int bits, MetricKind metric,
                                     const SearchConfig& search = {}) {
  if (w.empty()) throw Error(ErrorKind::EmptyTensor, "empty weight tensor");
  if (!supported_bitwidth(bits)) {
    throw Error(ErrorKind::InvalidArgument, "unsupported bit-width " + std::to_string(bits));
  }
  require_finite(w, "weights");
  const double m = max_abs(w);
  if (m == 0.0) throw Error(ErrorKind::DegenerateRange, "all-zero weight tensor");
  if (metric == MetricKind::MinMax) {
    return {bits, m / static_cast<double>(positive_levels(bits, true)), true};
  }
  return detail::grid_search(w, bits, true, metric, search);
}

// Layer-wise calibration: one full-precision pass over the calibration images
// collects every activation site; each site and each weight is then
// calibrated independently.
inline QuantConfig calibrate_network(const ModelGraph& model, const LabeledDataset& calib,
                                     MetricKind metric, int weight_bits, int act_bits,
                                     const SearchConfig& search = {}) {
  if (calib.empty()) throw Error(ErrorKind::EmptyDataset, "calibration set is empty");
  const ExecutionPlan plan = make_plan(model);
  const CaptureResult captured = forward_with_capture(model, calib.images, plan.capture_sites);
  QuantConfig config;
  for (const SiteId& id : plan.all_sites()) {
    try {
      if (id.kind == SiteKind::Weight) {
        config.sites.emplace(id, calibrate_weights(model.layers[id.layer].param("weight"),
                                                   weight_bits, metric, search));
      } else {
        const Tensor& act = captured.activations.at(id);
        config.sites.emplace(id, calibrate_activation(act.reshaped({act.size()}), act_bits,
                                                      metric, search));
      }
    } catch (const Error& e) {
      throw Error(e.kind(), "site " + id.str() + ": " + e.what());
    }
  }
  return config;
}

}  // namespace ptqrel
