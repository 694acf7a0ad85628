#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ptqrel/engine.hpp"
#include "ptqrel/error.hpp"
#include "ptqrel/format.hpp"
#include "ptqrel/model.hpp"
#include "ptqrel/rng.hpp"
#include "ptqrel/tensor.hpp"

namespace ptqrel {

// Ten-class synthetic image task. Each class owns a smooth template (a coarse
// uniform grid upsampled bilinearly); samples add i.i.d. Gaussian pixel noise
// and clip to [0, 1].
struct SyntheticSpec {
  std::size_t class_count = 10;
  std::size_t channels = 1;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t template_grid = 4;
  double template_contrast = 1.0;
  double noise_sigma = 0.6;
  // Templates depend only on this seed, so every data seed shares the classes.
  std::uint64_t template_seed = 0;
  std::size_t train_size = 5000;
  std::size_t test_size = 2000;
};

inline void validate(const SyntheticSpec& s) {
  if (s.class_count == 0 || s.channels == 0 || s.height == 0 || s.width == 0 || s.template_grid < 2) {
    throw Error(ErrorKind::InvalidArgument, "synthetic spec dimensions must be positive");
  }
  if (s.train_size % s.class_count || s.test_size % s.class_count) {
    throw Error(ErrorKind::InvalidArgument, "split sizes must be multiples of class_count");
  }
  if (!(s.noise_sigma >= 0.0) || !(s.template_contrast > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "noise sigma must be non-negative and contrast positive");
  }
}

inline std::vector<float> class_template(const SyntheticSpec& spec, std::size_t cls) {
  const std::size_t g = spec.template_grid;
  std::vector<float> out(spec.channels * spec.height * spec.width);
  auto rng = make_stream(spec.template_seed, "class-template", cls);
  for (std::size_t ch = 0; ch < spec.channels; ++ch) {
    std::vector<double> grid(g * g);
    for (double& v : grid) v = rng.uniform();
    for (std::size_t y = 0; y < spec.height; ++y) {
      const double gy = spec.height > 1 ? static_cast<double>(y) * static_cast<double>(g - 1) /
                                              static_cast<double>(spec.height - 1)
                                        : 0.0;
      const auto y0 = std::min(static_cast<std::size_t>(gy), g - 2);
      const double ty = gy - static_cast<double>(y0);
      for (std::size_t x = 0; x < spec.width; ++x) {
        const double gx = spec.width > 1 ? static_cast<double>(x) * static_cast<double>(g - 1) /
                                               static_cast<double>(spec.width - 1)
                                         : 0.0;
        const auto x0 = std::min(static_cast<std::size_t>(gx), g - 2);
        const double tx = gx - static_cast<double>(x0);
        const double v = (1 - ty) * ((1 - tx) * grid[y0 * g + x0] + tx * grid[y0 * g + x0 + 1]) +
                         ty * ((1 - tx) * grid[(y0 + 1) * g + x0] + tx * grid[(y0 + 1) * g + x0 + 1]);
        out[(ch * spec.height + y) * spec.width + x] =
            static_cast<float>(0.5 + spec.template_contrast * (v - 0.5));
      }
    }
  }
  return out;
}

namespace detail {

inline LabeledDataset synth_split(const SyntheticSpec& spec, std::uint64_t seed, Split split,
                                  const std::vector<std::vector<float>>& templates) {
  const std::size_t n = split == Split::Train ? spec.train_size : spec.test_size;
  const std::size_t per = spec.channels * spec.height * spec.width;
  LabeledDataset ds{Tensor({n, spec.channels, spec.height, spec.width}), {}, spec.class_count, split};
  ds.labels.resize(n);
  const char* purpose = split == Split::Train ? "train-noise" : "test-noise";
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cls = i % spec.class_count;
    ds.labels[i] = static_cast<int>(cls);
    auto rng = make_stream(seed, purpose, i);
    auto img = ds.image(i);
    for (std::size_t k = 0; k < per; ++k) {
      const double v = templates[cls][k] + spec.noise_sigma * rng.normal();
      img[k] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return ds;
}

}  // namespace detail

// Deterministic in (spec, seed); every sample's noise comes from its own
// (seed, split, index) stream.
inline std::pair<LabeledDataset, LabeledDataset> gen_synthetic(const SyntheticSpec& spec,
                                                               std::uint64_t seed) {
  validate(spec);
  std::vector<std::vector<float>> templates;
  for (std::size_t c = 0; c < spec.class_count; ++c) templates.push_back(class_template(spec, c));
  return {detail::synth_split(spec, seed, Split::Train, templates),
          detail::synth_split(spec, seed, Split::Test, templates)};
}

struct TrainConfig {
  std::vector<std::size_t> hidden{64, 64};
  std::size_t epochs = 20;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

inline void validate(const TrainConfig& c) {
  if (c.hidden.empty() || std::find(c.hidden.begin(), c.hidden.end(), 0u) != c.hidden.end()) {
    throw Error(ErrorKind::InvalidArgument, "hidden sizes must be positive");
  }
  if (!(c.learning_rate > 0.0) || c.batch_size == 0 || !(c.momentum >= 0.0 && c.momentum < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "learning rate, batch size and momentum out of range");
  }
}

// Dense ReLU MLP parameters, generic over the arithmetic type so the same
// forward/backward code serves float training and double gradient checks.
template <typename Real>
struct MlpParams {
  std::vector<std::size_t> sizes;          // input, hidden..., classes
  std::vector<std::vector<Real>> weights;  // [out * in], row-major
  std::vector<std::vector<Real>> biases;

  static MlpParams zeros(std::vector<std::size_t> sizes) {
    MlpParams p;
    p.sizes = std::move(sizes);
    for (std::size_t l = 0; l + 1 < p.sizes.size(); ++l) {
      p.weights.emplace_back(p.sizes[l] * p.sizes[l + 1], Real{0});
      p.biases.emplace_back(p.sizes[l + 1], Real{0});
    }
    return p;
  }

  std::size_t layer_count() const noexcept { return weights.size(); }
};

// He-uniform weights, zero biases.
template <typename Real>
MlpParams<Real> init_mlp(std::vector<std::size_t> sizes, std::uint64_t seed) {
  auto p = MlpParams<Real>::zeros(std::move(sizes));
  auto rng = make_stream(seed, "mlp-init");
  for (std::size_t l = 0; l < p.layer_count(); ++l) {
    const double limit = std::sqrt(6.0 / static_cast<double>(p.sizes[l]));
    for (Real& w : p.weights[l]) w = static_cast<Real>(rng.uniform(-limit, limit));
  }
  return p;
}

// Mean softmax cross-entropy over the batch. When `grad` is non-null it
// receives d(loss)/d(params), shaped like `p`.
template <typename Real>
Real mlp_loss_and_grad(const MlpParams<Real>& p, std::span<const float> inputs,
                       std::span<const int> labels, MlpParams<Real>* grad) {
  const std::size_t n = labels.size(), layers = p.layer_count();
  std::vector<std::vector<Real>> acts(layers + 1);
  acts[0].assign(inputs.begin(), inputs.end());
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = p.sizes[l], out = p.sizes[l + 1];
    acts[l + 1].assign(n * out, Real{0});
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t o = 0; o < out; ++o) {
        Real acc = 0;
        for (std::size_t i = 0; i < in; ++i) acc += p.weights[l][o * in + i] * acts[l][s * in + i];
        acc += p.biases[l][o];
        acts[l + 1][s * out + o] = (l + 1 < layers && acc < Real{0}) ? Real{0} : acc;
      }
    }
  }

  const std::size_t classes = p.sizes.back();
  std::vector<Real> delta(n * classes);
  Real loss = 0;
  for (std::size_t s = 0; s < n; ++s) {
    const Real* z = &acts[layers][s * classes];
    const Real zmax = *std::max_element(z, z + classes);
    Real denom = 0;
    for (std::size_t c = 0; c < classes; ++c) denom += std::exp(z[c] - zmax);
    const auto label = static_cast<std::size_t>(labels[s]);
    loss += std::log(denom) - (z[label] - zmax);
    for (std::size_t c = 0; c < classes; ++c) {
      const Real prob = std::exp(z[c] - zmax) / denom;
      delta[s * classes + c] = (prob - (c == label ? Real{1} : Real{0})) / static_cast<Real>(n);
    }
  }
  loss /= static_cast<Real>(n);
  if (!grad) return loss;

  *grad = MlpParams<Real>::zeros(p.sizes);
  for (std::size_t l = layers; l-- > 0;) {
    const std::size_t in = p.sizes[l], out = p.sizes[l + 1];
    std::vector<Real> prev(l > 0 ? n * in : 0, Real{0});
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t o = 0; o < out; ++o) {
        const Real d = delta[s * out + o];
        if (d == Real{0}) continue;
        grad->biases[l][o] += d;
        Real* gw = &grad->weights[l][o * in];
        const Real* a = &acts[l][s * in];
        for (std::size_t i = 0; i < in; ++i) gw[i] += d * a[i];
        if (l > 0) {
          const Real* w = &p.weights[l][o * in];
          Real* pd = &prev[s * in];
          for (std::size_t i = 0; i < in; ++i) pd[i] += d * w[i];
        }
      }
    }
    if (l > 0) {
      for (std::size_t k = 0; k < prev.size(); ++k) {
        if (acts[l][k] <= Real{0}) prev[k] = Real{0};
      }
      delta = std::move(prev);
    }
  }
  return loss;
}

// flatten -> (linear -> relu)* -> linear
inline ModelGraph mlp_to_graph(const MlpParams<float>& p, const Shape& input_shape) {
  ModelGraph g;
  g.input_shape = input_shape;
  g.class_count = p.sizes.back();
  g.layers.push_back({LayerKind::Flatten, {}, {}});
  for (std::size_t l = 0; l < p.layer_count(); ++l) {
    LayerSpec lin{LayerKind::Linear, {}, {}};
    lin.params.emplace("weight", Tensor({p.sizes[l + 1], p.sizes[l]}, p.weights[l]));
    lin.params.emplace("bias", Tensor({p.sizes[l + 1]}, p.biases[l]));
    g.layers.push_back(std::move(lin));
    if (l + 1 < p.layer_count()) g.layers.push_back({LayerKind::Relu, {}, {}});
  }
  validate(g);
  return g;
}

struct TrainResult {
  ModelGraph model;
  std::vector<double> epoch_losses;  // mean mini-batch loss per epoch
};

// Seeded mini-batch SGD with momentum on softmax cross-entropy; single
// threaded so the final weights are a pure function of (data, config).
inline TrainResult train_mlp_traced(const LabeledDataset& train, const TrainConfig& config) {
  validate(config);
  if (train.empty()) throw Error(ErrorKind::EmptyDataset, "training set is empty");
  std::vector<std::size_t> sizes{train.image_numel()};
  sizes.insert(sizes.end(), config.hidden.begin(), config.hidden.end());
  sizes.push_back(train.class_count);
  auto params = init_mlp<float>(sizes, config.seed);
  auto velocity = MlpParams<float>::zeros(sizes);
  MlpParams<float> grad;

  const std::size_t n = train.size(), per = train.image_numel();
  std::vector<std::size_t> order(n);
  std::vector<float> batch_x;
  std::vector<int> batch_y;
  TrainResult result;
  const auto lr = static_cast<float>(config.learning_rate);
  const auto mu = static_cast<float>(config.momentum);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = make_stream(config.seed, "shuffle", epoch);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, n - start);
      batch_x.resize(count * per);
      batch_y.resize(count);
      for (std::size_t k = 0; k < count; ++k) {
        const auto img = train.image(order[start + k]);
        std::copy(img.begin(), img.end(), batch_x.begin() + static_cast<std::ptrdiff_t>(k * per));
        batch_y[k] = train.labels[order[start + k]];
      }
      const float loss = mlp_loss_and_grad<float>(params, batch_x, batch_y, &grad);
      if (!std::isfinite(loss)) {
        throw Error(ErrorKind::DivergedLoss, "non-finite loss in epoch " + std::to_string(epoch));
      }
      loss_sum += loss;
      ++batches;
      for (std::size_t l = 0; l < params.layer_count(); ++l) {
        for (std::size_t k = 0; k < params.weights[l].size(); ++k) {
          velocity.weights[l][k] = mu * velocity.weights[l][k] - lr * grad.weights[l][k];
          params.weights[l][k] += velocity.weights[l][k];
        }
        for (std::size_t k = 0; k < params.biases[l].size(); ++k) {
          velocity.biases[l][k] = mu * velocity.biases[l][k] - lr * grad.biases[l][k];
          params.biases[l][k] += velocity.biases[l][k];
        }
      }
    }
    result.epoch_losses.push_back(loss_sum / static_cast<double>(batches));
  }
  result.model = mlp_to_graph(params, train.image_shape());
  return result;
}

inline ModelGraph train_mlp(const LabeledDataset& train, const TrainConfig& config) {
  return train_mlp_traced(train, config).model;
}

// Trains the built-in model and stamps its metadata, including the FP test
// accuracy in shortest round-trip form.
struct ReferenceWorkload {
  ModelGraph model;
  LabeledDataset train;
  LabeledDataset test;
  PerClassAccuracy fp_accuracy;
};

inline ReferenceWorkload build_reference(const SyntheticSpec& spec, std::uint64_t data_seed,
                                         const TrainConfig& config) {
  auto [train, test] = gen_synthetic(spec, data_seed);
  ModelGraph model = train_mlp(train, config);
  PerClassAccuracy fp = evaluate(model, test);
  model.metadata = {{"name", "reference-mlp"},
                    {"source", "built-in synthetic workload (data seed " +
                                   std::to_string(data_seed) + ", train seed " +
                                   std::to_string(config.seed) + ")"},
                    {"reported_fp_accuracy", format_shortest(fp.average)}};
  return {std::move(model), std::move(train), std::move(test), std::move(fp)};
}

}  // namespace ptqrel
