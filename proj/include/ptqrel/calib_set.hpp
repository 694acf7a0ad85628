#pragma once

#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "ptqrel/error.hpp"
#include "ptqrel/model.hpp"
#include "ptqrel/rng.hpp"

namespace ptqrel {

struct ClassBias {
  int class_id = 0;
  double probability = 0.5;
};

// Recipe for one calibration set: `size` images drawn from the training split
// (uniformly, or with one class over-represented), then a `noise_fraction`
// share of them replaced by uniform-noise images.
struct CalibSpec {
  std::size_t size = 256;
  double noise_fraction = 0.0;
  std::optional<ClassBias> bias;
  std::uint64_t seed = 0;
};

inline void validate(const CalibSpec& spec) {
  if (spec.size == 0) throw Error(ErrorKind::InvalidArgument, "calibration size must be >= 1");
  if (!(spec.noise_fraction >= 0.0 && spec.noise_fraction <= 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "noise fraction must lie in [0, 1]");
  }
  if (spec.bias && !(spec.bias->probability > 0.0 && spec.bias->probability < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "bias probability must lie in (0, 1)");
  }
}

// n distinct indices without replacement (partial Fisher-Yates).
inline LabeledDataset sample_random(const LabeledDataset& train, std::size_t n, std::uint64_t seed) {
  if (n > train.size()) {
    throw Error(ErrorKind::OverDraw, "cannot draw " + std::to_string(n) + " of " +
                                         std::to_string(train.size()) + " samples");
  }
  std::vector<std::size_t> idx(train.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto rng = make_stream(seed, "calib-draw");
  for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + rng.below(train.size() - i)]);
  idx.resize(n);
  return train.subset(idx);
}

// Positions replaced by inject_noise: the first round(fraction * n) entries of
// a seeded partial shuffle.
inline std::vector<std::size_t> noise_positions(std::size_t n, double fraction, std::uint64_t seed) {
  const auto m = static_cast<std::size_t>(std::round(fraction * static_cast<double>(n)));
  std::vector<std::size_t> pos(n);
  std::iota(pos.begin(), pos.end(), std::size_t{0});
  auto rng = make_stream(seed, "noise-positions");
  for (std::size_t i = 0; i < m; ++i) std::swap(pos[i], pos[i + rng.below(n - i)]);
  pos.resize(m);
  return pos;
}

// Replaces round(fraction * n) images with i.i.d. uniform(0, 1) pixels.
// Labels are kept; calibration ignores them.
inline LabeledDataset inject_noise(const LabeledDataset& calib, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "noise fraction must lie in [0, 1]");
  }
  LabeledDataset out = calib;
  for (std::size_t p : noise_positions(calib.size(), fraction, seed)) {
    auto pixels = make_stream(seed, "noise-pixels", p);
    for (float& v : out.image(p)) v = static_cast<float>(pixels.uniform());
  }
  return out;
}

// Each draw independently: with probability p from class_id's pool, otherwise
// from one of the remaining classes chosen with equal probability. Draws are
// with replacement.
inline LabeledDataset sample_class_biased(const LabeledDataset& train, std::size_t n, int class_id,
                                          double p, std::uint64_t seed) {
  if (class_id < 0 || static_cast<std::size_t>(class_id) >= train.class_count) {
    throw Error(ErrorKind::InvalidArgument, "bias class " + std::to_string(class_id) + " out of range");
  }
  if (!(p > 0.0 && p < 1.0)) throw Error(ErrorKind::InvalidArgument, "bias probability must lie in (0, 1)");
  if (train.class_count < 2) throw Error(ErrorKind::MissingClass, "biased sampling needs two classes");
  std::vector<std::vector<std::size_t>> pools(train.class_count);
  for (std::size_t i = 0; i < train.size(); ++i) pools[static_cast<std::size_t>(train.labels[i])].push_back(i);
  for (std::size_t c = 0; c < pools.size(); ++c) {
    if (pools[c].empty()) throw Error(ErrorKind::MissingClass, "class " + std::to_string(c) + " has no samples");
  }
  const auto target = static_cast<std::size_t>(class_id);
  auto rng = make_stream(seed, "calib-biased");
  std::vector<std::size_t> idx(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t cls = target;
    if (!(rng.uniform() < p)) {
      cls = rng.below(train.class_count - 1);
      if (cls >= target) ++cls;
    }
    idx[k] = pools[cls][rng.below(pools[cls].size())];
  }
  return train.subset(idx);
}

inline LabeledDataset build_calibration_set(const LabeledDataset& train, const CalibSpec& spec) {
  validate(spec);
  LabeledDataset calib = spec.bias ? sample_class_biased(train, spec.size, spec.bias->class_id,
                                                         spec.bias->probability, spec.seed)
                                   : sample_random(train, spec.size, spec.seed);
  return inject_noise(calib, spec.noise_fraction, spec.seed);
}

}  // namespace ptqrel
