#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "ptqrel/error.hpp"
#include "ptqrel/model.hpp"
#include "ptqrel/quantizer.hpp"
#include "ptqrel/tensor.hpp"

namespace ptqrel {

// Layer schedule (graphs are stored in execution order) plus the quantizable
// sites: one weight and one input-activation site per linear/conv2d layer.
struct ExecutionPlan {
  std::vector<std::size_t> schedule;
  std::vector<SiteId> capture_sites;
  std::vector<SiteId> weight_sites;
  std::vector<Shape> output_shapes;
  std::vector<bool> keep_output;  // referenced later by an add layer

  std::vector<SiteId> all_sites() const {
    std::vector<SiteId> sites = capture_sites;
    sites.insert(sites.end(), weight_sites.begin(), weight_sites.end());
    std::sort(sites.begin(), sites.end());
    return sites;
  }
};

inline ExecutionPlan make_plan(const ModelGraph& model) {
  ExecutionPlan plan;
  plan.output_shapes = infer_shapes(model);
  plan.keep_output.assign(model.layers.size(), false);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& l = model.layers[i];
    plan.schedule.push_back(i);
    if (is_quantizable(l.kind)) {
      plan.capture_sites.push_back({i, SiteKind::Input});
      plan.weight_sites.push_back({i, SiteKind::Weight});
    }
    if (l.kind == LayerKind::Add) {
      const auto from = l.attr("from", -1);
      if (from >= 0) plan.keep_output[static_cast<std::size_t>(from)] = true;
    }
  }
  return plan;
}

namespace kernels {

// out[n, o] = sum_i w[o, i] * x[n, i] + b[o], summed in index order.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor* b) {
  const std::size_t n = x.dim(0), in = w.dim(1), out = w.dim(0);
  Tensor y({n, out});
  const float* xs = x.data().data();
  const float* ws = w.data().data();
  float* ys = y.data().data();
  for (std::size_t s = 0; s < n; ++s) {
    const float* xr = xs + s * in;
    for (std::size_t o = 0; o < out; ++o) {
      const float* wr = ws + o * in;
      float acc = 0.0f;
      for (std::size_t i = 0; i < in; ++i) acc += wr[i] * xr[i];
      ys[s * out + o] = b ? acc + (*b)[o] : acc;
    }
  }
  return y;
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* b, std::size_t stride,
                     std::size_t pad) {
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::size_t ow = (wd + 2 * pad - kw) / stride + 1;
  Tensor y({n, cout, oh, ow});
  const float* xs = x.data().data();
  const float* ws = w.data().data();
  float* ys = y.data().data();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t o = 0; o < cout; ++o) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          float acc = 0.0f;
          for (std::size_t c = 0; c < cin; ++c) {
            for (std::size_t ky = 0; ky < kh; ++ky) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                acc += ws[((o * cin + c) * kh + ky) * kw + kx] *
                       xs[((s * cin + c) * h + static_cast<std::size_t>(iy)) * wd + static_cast<std::size_t>(ix)];
              }
            }
          }
          ys[((s * cout + o) * oh + oy) * ow + ox] = b ? acc + (*b)[o] : acc;
        }
      }
    }
  }
  return y;
}

inline void relu(Tensor& x, float cap) noexcept {
  for (float& v : x.data()) v = std::min(std::max(v, 0.0f), cap);
}

// Inference-mode normalisation over axis 1 of [n, c, ...].
inline void batchnorm(Tensor& x, const LayerSpec& l) {
  const std::size_t n = x.dim(0), c = x.dim(1), inner = x.size() / (n * c);
  const Tensor &g = l.param("weight"), &beta = l.param("bias");
  const Tensor &mean = l.param("running_mean"), &var = l.param("running_var");
  std::vector<float> mul(c), add(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double f = g[ch] / std::sqrt(static_cast<double>(var[ch]) + l.epsilon);
    mul[ch] = static_cast<float>(f);
    add[ch] = static_cast<float>(beta[ch] - mean[ch] * f);
  }
  float* p = x.data().data();
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t k = 0; k < inner; ++k, ++p) *p = *p * mul[ch] + add[ch];
}

// Zero padding is counted in the divisor.
inline Tensor avgpool2d(const Tensor& x, std::size_t k, std::size_t stride, std::size_t pad) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (w + 2 * pad - k) / stride + 1;
  Tensor y({n, c, oh, ow});
  const float inv = 1.0f / static_cast<float>(k * k);
  for (std::size_t p = 0; p < n * c; ++p) {
    const float* src = x.data().data() + p * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        float acc = 0.0f;
        for (std::size_t ky = 0; ky < k; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < k; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            acc += src[static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)];
          }
        }
        y[(p * oh + oy) * ow + ox] = acc * inv;
      }
    }
  }
  return y;
}

inline Tensor global_avgpool(const Tensor& x) {
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor y({n, c});
  for (std::size_t p = 0; p < n * c; ++p) {
    float acc = 0.0f;
    for (std::size_t k = 0; k < hw; ++k) acc += x[p * hw + k];
    y[p] = acc / static_cast<float>(hw);
  }
  return y;
}

}  // namespace kernels

// A model bound to an optional QuantConfig. Weights are fake-quantized once at
// construction; activation sites are fake-quantized on every forward pass.
class PreparedModel {
 public:
  explicit PreparedModel(const ModelGraph& model, const QuantConfig* config = nullptr)
      : model_(&model), plan_(make_plan(model)), weights_(model.layers.size()),
        input_quant_(model.layers.size()) {
    if (!config) return;
    for (const auto& [id, p] : config->sites) {
      if (id.layer >= model.layers.size() || !is_quantizable(model.layers[id.layer].kind)) {
        throw Error(ErrorKind::UnknownSite, "model has no site " + id.str());
      }
      validate(p);
    }
    for (const SiteId& id : plan_.all_sites()) {
      const QuantParams* p = config->find(id);
      if (!p) throw Error(ErrorKind::IncompleteConfig, "no quantization parameters for " + id.str());
      if (id.kind == SiteKind::Weight) {
        weights_[id.layer] = fake_quant(model.layers[id.layer].param("weight"), *p);
      } else {
        input_quant_[id.layer] = *p;
      }
    }
  }

  const ExecutionPlan& plan() const noexcept { return plan_; }
  const ModelGraph& model() const noexcept { return *model_; }

  // Runs the graph; when `captures` is given, the tensor consumed by each
  // requested linear/conv2d layer (after input fake-quant, if any) is recorded.
  Tensor forward(const Tensor& batch, const std::set<std::size_t>* capture_layers = nullptr,
                 std::map<SiteId, Tensor>* captures = nullptr) const {
    const ModelGraph& m = *model_;
    if (batch.rank() != m.input_shape.size() + 1 ||
        !std::equal(m.input_shape.begin(), m.input_shape.end(), batch.shape().begin() + 1)) {
      throw Error(ErrorKind::ShapeMismatch, "batch " + shape_to_string(batch.shape()) +
                                                " does not match model input " +
                                                shape_to_string(m.input_shape));
    }
    require_finite(batch, "input batch");
    const std::size_t n = batch.dim(0);
    std::vector<Tensor> kept(m.layers.size());
    Tensor x = batch;
    for (std::size_t i : plan_.schedule) {
      const LayerSpec& l = m.layers[i];
      switch (l.kind) {
        case LayerKind::Linear:
        case LayerKind::Conv2d: {
          if (input_quant_[i]) fake_quant_inplace(x.data(), *input_quant_[i]);
          if (capture_layers && capture_layers->count(i)) captures->insert_or_assign({i, SiteKind::Input}, x);
          const Tensor& w = weights_[i] ? *weights_[i] : l.param("weight");
          x = l.kind == LayerKind::Linear
                  ? kernels::linear(x, w, l.find_param("bias"))
                  : kernels::conv2d(x, w, l.find_param("bias"),
                                    static_cast<std::size_t>(l.attr("stride", 1)),
                                    static_cast<std::size_t>(l.attr("padding", 0)));
          break;
        }
        case LayerKind::Relu:
          kernels::relu(x, std::numeric_limits<float>::infinity());
          break;
        case LayerKind::Relu6:
          kernels::relu(x, 6.0f);
          break;
        case LayerKind::BatchNorm:
          kernels::batchnorm(x, l);
          break;
        case LayerKind::AvgPool2d: {
          const auto k = static_cast<std::size_t>(l.attr("kernel", 1));
          x = kernels::avgpool2d(x, k, static_cast<std::size_t>(l.attr("stride", static_cast<std::int64_t>(k))),
                                 static_cast<std::size_t>(l.attr("padding", 0)));
          break;
        }
        case LayerKind::GlobalAvgPool:
          x = kernels::global_avgpool(x);
          break;
        case LayerKind::Add: {
          const auto from = l.attr("from", -1);
          const Tensor& other = from < 0 ? batch : kept[static_cast<std::size_t>(from)];
          for (std::size_t k = 0; k < x.size(); ++k) x[k] += other[k];
          break;
        }
        case LayerKind::Flatten:
          x = x.reshaped({n, x.size() / std::max<std::size_t>(n, 1)});
          break;
      }
      if (plan_.keep_output[i]) kept[i] = x;
    }
    return x;
  }

 private:
  const ModelGraph* model_;
  ExecutionPlan plan_;
  std::vector<std::optional<Tensor>> weights_;
  std::vector<std::optional<QuantParams>> input_quant_;
};

inline Tensor forward(const ModelGraph& model, const Tensor& batch) {
  return PreparedModel(model).forward(batch);
}

struct CaptureResult {
  Tensor logits;
  std::map<SiteId, Tensor> activations;
};

inline CaptureResult forward_with_capture(const ModelGraph& model, const Tensor& batch,
                                          const std::vector<SiteId>& sites) {
  PreparedModel prepared(model);
  std::set<std::size_t> layers;
  for (const SiteId& id : sites) {
    const auto& known = prepared.plan().capture_sites;
    if (std::find(known.begin(), known.end(), id) == known.end()) {
      throw Error(ErrorKind::UnknownSite, "no capture site " + id.str());
    }
    layers.insert(id.layer);
  }
  CaptureResult result;
  result.logits = prepared.forward(batch, &layers, &result.activations);
  return result;
}

inline Tensor quantized_forward(const ModelGraph& model, const QuantConfig& config,
                                const Tensor& batch) {
  return PreparedModel(model, &config).forward(batch);
}

// Removes every batchnorm by rescaling the immediately preceding linear/conv2d.
inline ModelGraph fold_batchnorm(const ModelGraph& model) {
  const std::size_t count = model.layers.size();
  std::vector<bool> referenced(count, false);
  for (const auto& l : model.layers) {
    if (l.kind == LayerKind::Add && l.attr("from", -1) >= 0) {
      referenced[static_cast<std::size_t>(l.attr("from", -1))] = true;
    }
  }

  ModelGraph out;
  out.input_shape = model.input_shape;
  out.class_count = model.class_count;
  out.metadata = model.metadata;
  std::vector<std::int64_t> new_index(count, -1);
  for (std::size_t i = 0; i < count; ++i) {
    const LayerSpec& l = model.layers[i];
    if (l.kind != LayerKind::BatchNorm) {
      LayerSpec copy = l;
      if (copy.kind == LayerKind::Add) {
        const auto from = copy.attr("from", -1);
        if (from >= 0) copy.attrs["from"] = new_index[static_cast<std::size_t>(from)];
      }
      new_index[i] = static_cast<std::int64_t>(out.layers.size());
      out.layers.push_back(std::move(copy));
      continue;
    }
    if (i == 0 || !is_quantizable(model.layers[i - 1].kind)) {
      throw Error(ErrorKind::UnfoldablePattern,
                  "batchnorm at layer " + std::to_string(i) + " has no linear/conv2d predecessor");
    }
    if (referenced[i - 1]) {
      throw Error(ErrorKind::UnfoldablePattern, "layer " + std::to_string(i - 1) +
                                                    " output is used before its batchnorm");
    }
    LayerSpec& target = out.layers.back();
    Tensor& w = target.params.at("weight");
    const std::size_t channels = w.dim(0), per_channel = w.size() / channels;
    if (!target.find_param("bias")) target.params.emplace("bias", Tensor({channels}, 0.0f));
    Tensor& b = target.params.at("bias");
    const Tensor &g = l.param("weight"), &beta = l.param("bias");
    const Tensor &mean = l.param("running_mean"), &var = l.param("running_var");
    if (g.size() != channels) {
      throw Error(ErrorKind::UnfoldablePattern, "batchnorm width disagrees with predecessor");
    }
    for (std::size_t c = 0; c < channels; ++c) {
      const double f = g[c] / std::sqrt(static_cast<double>(var[c]) + l.epsilon);
      for (std::size_t k = 0; k < per_channel; ++k) {
        w[c * per_channel + k] = static_cast<float>(w[c * per_channel + k] * f);
      }
      b[c] = static_cast<float>((static_cast<double>(b[c]) - mean[c]) * f + beta[c]);
    }
    new_index[i] = new_index[i - 1];
  }
  validate(out);
  return out;
}

struct PerClassAccuracy {
  std::vector<double> per_class;
  double average = 0.0;
  std::vector<std::size_t> correct;
  std::vector<std::size_t> total;
};

// Index of the largest logit; the lowest index wins ties.
inline std::size_t argmax(std::span<const float> logits) noexcept {
  std::size_t best = 0;
  for (std::size_t c = 1; c < logits.size(); ++c) {
    if (logits[c] > logits[best]) best = c;
  }
  return best;
}

inline PerClassAccuracy tally_accuracy(const std::vector<std::size_t>& correct,
                                       const std::vector<std::size_t>& total) {
  PerClassAccuracy acc{std::vector<double>(total.size(), 0.0), 0.0, correct, total};
  std::size_t all_correct = 0, all = 0;
  for (std::size_t c = 0; c < total.size(); ++c) {
    if (total[c]) acc.per_class[c] = static_cast<double>(correct[c]) / static_cast<double>(total[c]);
    all_correct += correct[c];
    all += total[c];
  }
  acc.average = all ? static_cast<double>(all_correct) / static_cast<double>(all) : 0.0;
  return acc;
}

inline std::vector<std::size_t> predict(const PreparedModel& prepared, const LabeledDataset& data,
                                        std::size_t batch_size = 256) {
  std::vector<std::size_t> predictions;
  predictions.reserve(data.size());
  const std::size_t classes = prepared.model().class_count;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, data.size() - start);
    Shape shape = data.images.shape();
    shape[0] = count;
    const std::size_t per = data.image_numel();
    auto first = data.images.data().begin() + static_cast<std::ptrdiff_t>(start * per);
    Tensor batch(shape, std::vector<float>(first, first + static_cast<std::ptrdiff_t>(count * per)));
    const Tensor logits = prepared.forward(batch);
    for (std::size_t s = 0; s < count; ++s) {
      predictions.push_back(argmax(logits.data().subspan(s * classes, classes)));
    }
  }
  return predictions;
}

// Top-1 accuracy per class and overall. Classes with no samples report 0.
inline PerClassAccuracy evaluate(const ModelGraph& model, const LabeledDataset& data,
                                 const QuantConfig* quant = nullptr) {
  if (data.empty()) throw Error(ErrorKind::EmptyDataset, "evaluate needs at least one sample");
  if (data.class_count != model.class_count) {
    throw Error(ErrorKind::ShapeMismatch, "dataset and model disagree on class_count");
  }
  const PreparedModel prepared(model, quant);
  const auto predictions = predict(prepared, data);
  std::vector<std::size_t> correct(model.class_count, 0), total(model.class_count, 0);
  for (std::size_t s = 0; s < data.size(); ++s) {
    const auto label = static_cast<std::size_t>(data.labels[s]);
    ++total[label];
    if (predictions[s] == label) ++correct[label];
  }
  return tally_accuracy(correct, total);
}

}  // namespace ptqrel
