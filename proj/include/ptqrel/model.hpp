#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ptqrel/error.hpp"
#include "ptqrel/tensor.hpp"

namespace ptqrel {

enum class LayerKind { Linear, Conv2d, Relu, Relu6, BatchNorm, AvgPool2d, GlobalAvgPool, Add, Flatten };

constexpr std::string_view to_string(LayerKind kind) noexcept {
  switch (kind) {
    case LayerKind::Linear: return "linear";
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::Relu: return "relu";
    case LayerKind::Relu6: return "relu6";
    case LayerKind::BatchNorm: return "batchnorm";
    case LayerKind::AvgPool2d: return "avgpool2d";
    case LayerKind::GlobalAvgPool: return "global_avgpool";
    case LayerKind::Add: return "add";
    case LayerKind::Flatten: return "flatten";
  }
  return "?";
}

inline LayerKind layer_kind_from_string(std::string_view name) {
  for (auto kind : {LayerKind::Linear, LayerKind::Conv2d, LayerKind::Relu, LayerKind::Relu6,
                    LayerKind::BatchNorm, LayerKind::AvgPool2d, LayerKind::GlobalAvgPool,
                    LayerKind::Add, LayerKind::Flatten}) {
    if (to_string(kind) == name) return kind;
  }
  throw Error(ErrorKind::ShapeContractViolation, "unknown layer kind '" + std::string(name) + "'");
}

constexpr bool is_quantizable(LayerKind kind) noexcept {
  return kind == LayerKind::Linear || kind == LayerKind::Conv2d;
}

// Parameter names follow the usual checkpoint conventions:
//   linear     weight [out, in], bias [out] (optional)
//   conv2d     weight [out_ch, in_ch, kh, kw], bias [out_ch] (optional); attrs stride, padding
//   batchnorm  weight, bias, running_mean, running_var, all [channels]; epsilon
//   avgpool2d  attrs kernel, stride (defaults to kernel), padding
//   add        attr from: index of the layer whose output is added, -1 for the graph input
struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  std::map<std::string, Tensor> params;
  std::map<std::string, std::int64_t> attrs;
  double epsilon = 1e-5;

  const Tensor& param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) {
      throw Error(ErrorKind::ShapeContractViolation,
                  std::string(to_string(kind)) + " layer is missing parameter '" + name + "'");
    }
    return it->second;
  }

  const Tensor* find_param(const std::string& name) const {
    auto it = params.find(name);
    return it == params.end() ? nullptr : &it->second;
  }

  std::int64_t attr(const std::string& name, std::int64_t fallback) const {
    auto it = attrs.find(name);
    return it == attrs.end() ? fallback : it->second;
  }
};

struct ModelGraph {
  std::vector<LayerSpec> layers;
  Shape input_shape;  // per sample, without the batch dimension
  std::size_t class_count = 0;
  std::map<std::string, std::string> metadata;
};

namespace detail {

[[noreturn]] inline void contract_violation(std::size_t layer, const std::string& msg) {
  throw Error(ErrorKind::ShapeContractViolation, "layer " + std::to_string(layer) + ": " + msg);
}

inline void expect_shape(std::size_t layer, const LayerSpec& spec, const std::string& name,
                         const Shape& expected) {
  const Tensor& t = spec.param(name);
  if (t.shape() != expected) {
    contract_violation(layer, std::string(to_string(spec.kind)) + " parameter '" + name +
                                  "' has shape " + shape_to_string(t.shape()) + ", expected " +
                                  shape_to_string(expected));
  }
}

inline std::size_t pooled_extent(std::size_t layer, std::size_t in, std::int64_t kernel,
                                 std::int64_t stride, std::int64_t padding) {
  if (kernel < 1 || stride < 1 || padding < 0) contract_violation(layer, "invalid window attributes");
  const auto padded = static_cast<std::int64_t>(in) + 2 * padding;
  if (padded < kernel) contract_violation(layer, "window larger than padded input");
  return static_cast<std::size_t>((padded - kernel) / stride + 1);
}

}  // namespace detail

// Per-sample output shape of every layer; throws ShapeContractViolation when a
// parameter or the layer chain is inconsistent.
inline std::vector<Shape> infer_shapes(const ModelGraph& model) {
  using detail::contract_violation;
  if (model.input_shape.empty() || shape_numel(model.input_shape) == 0) {
    throw Error(ErrorKind::ShapeContractViolation, "model input shape must be non-empty");
  }
  std::vector<Shape> out;
  out.reserve(model.layers.size());
  Shape cur = model.input_shape;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& l = model.layers[i];
    switch (l.kind) {
      case LayerKind::Linear: {
        const Tensor& w = l.param("weight");
        if (w.rank() != 2) contract_violation(i, "linear weight must be [out, in]");
        if (cur.size() != 1 || cur[0] != w.dim(1)) {
          contract_violation(i, "linear expects input [" + std::to_string(w.dim(1)) + "], got " +
                                    shape_to_string(cur));
        }
        if (l.find_param("bias")) detail::expect_shape(i, l, "bias", {w.dim(0)});
        cur = {w.dim(0)};
        break;
      }
      case LayerKind::Conv2d: {
        const Tensor& w = l.param("weight");
        if (w.rank() != 4) contract_violation(i, "conv2d weight must be [out_ch, in_ch, kh, kw]");
        if (cur.size() != 3 || cur[0] != w.dim(1)) {
          contract_violation(i, "conv2d expects " + std::to_string(w.dim(1)) +
                                    " input channels, got " + shape_to_string(cur));
        }
        if (l.find_param("bias")) detail::expect_shape(i, l, "bias", {w.dim(0)});
        const auto stride = l.attr("stride", 1), pad = l.attr("padding", 0);
        const auto kh = static_cast<std::int64_t>(w.dim(2));
        const auto kw = static_cast<std::int64_t>(w.dim(3));
        cur = {w.dim(0), detail::pooled_extent(i, cur[1], kh, stride, pad),
               detail::pooled_extent(i, cur[2], kw, stride, pad)};
        break;
      }
      case LayerKind::BatchNorm: {
        if (cur.empty()) contract_violation(i, "batchnorm on a scalar");
        const Shape ch{cur[0]};
        for (const char* name : {"weight", "bias", "running_mean", "running_var"}) {
          detail::expect_shape(i, l, name, ch);
        }
        if (!(l.epsilon > 0.0)) contract_violation(i, "batchnorm epsilon must be positive");
        break;
      }
      case LayerKind::Relu:
      case LayerKind::Relu6:
        break;
      case LayerKind::AvgPool2d: {
        if (cur.size() != 3) contract_violation(i, "avgpool2d expects [c, h, w]");
        const auto k = l.attr("kernel", 0);
        const auto s = l.attr("stride", k), p = l.attr("padding", 0);
        cur = {cur[0], detail::pooled_extent(i, cur[1], k, s, p),
               detail::pooled_extent(i, cur[2], k, s, p)};
        break;
      }
      case LayerKind::GlobalAvgPool:
        if (cur.size() != 3) contract_violation(i, "global_avgpool expects [c, h, w]");
        cur = {cur[0]};
        break;
      case LayerKind::Add: {
        const auto from = l.attr("from", -2);
        if (from < -1 || from >= static_cast<std::int64_t>(i)) {
          contract_violation(i, "add must reference an earlier layer or -1");
        }
        const Shape& other = from < 0 ? model.input_shape : out[static_cast<std::size_t>(from)];
        if (other != cur) {
          contract_violation(i, "add operands " + shape_to_string(cur) + " and " +
                                    shape_to_string(other) + " differ");
        }
        break;
      }
      case LayerKind::Flatten:
        cur = {shape_numel(cur)};
        break;
    }
    out.push_back(cur);
  }
  return out;
}

inline void validate(const ModelGraph& model) {
  if (model.class_count == 0) {
    throw Error(ErrorKind::ShapeContractViolation, "class_count must be positive");
  }
  const auto shapes = infer_shapes(model);
  const Shape& last = shapes.empty() ? model.input_shape : shapes.back();
  if (last != Shape{model.class_count}) {
    throw Error(ErrorKind::ShapeContractViolation,
                "model output " + shape_to_string(last) + " is not [" +
                    std::to_string(model.class_count) + "]");
  }
  for (const auto& layer : model.layers) {
    for (const auto& [name, t] : layer.params) require_finite(t, name.c_str());
  }
}

enum class Split { Train, Test };

constexpr std::string_view to_string(Split split) noexcept {
  return split == Split::Train ? "train" : "test";
}

inline Split split_from_string(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw Error(ErrorKind::ShapeContractViolation, "unknown split '" + std::string(s) + "'");
}

struct LabeledDataset {
  Tensor images;  // [n, ...image dims]; n may be zero
  std::vector<int> labels;
  std::size_t class_count = 0;
  Split split = Split::Train;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }

  Shape image_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }
  std::size_t image_numel() const { return shape_numel(image_shape()); }

  std::span<const float> image(std::size_t i) const {
    const std::size_t n = image_numel();
    return images.data().subspan(i * n, n);
  }
  std::span<float> image(std::size_t i) {
    const std::size_t n = image_numel();
    return images.data().subspan(i * n, n);
  }

  LabeledDataset subset(std::span<const std::size_t> indices) const {
    Shape shape = images.shape();
    shape[0] = indices.size();
    LabeledDataset out{Tensor(shape), {}, class_count, split};
    out.labels.reserve(indices.size());
    const std::size_t n = image_numel();
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const auto src = image(indices[k]);
      std::copy(src.begin(), src.end(), out.images.data().begin() + static_cast<std::ptrdiff_t>(k * n));
      out.labels.push_back(labels[indices[k]]);
    }
    return out;
  }
};

inline void validate(const LabeledDataset& ds) {
  if (ds.images.rank() < 2) {
    throw Error(ErrorKind::ShapeContractViolation, "dataset images must be [n, ...]");
  }
  if (ds.images.dim(0) != ds.labels.size()) {
    throw Error(ErrorKind::ShapeContractViolation,
                std::to_string(ds.labels.size()) + " labels for " +
                    std::to_string(ds.images.dim(0)) + " images");
  }
  if (ds.class_count == 0) {
    throw Error(ErrorKind::ShapeContractViolation, "class_count must be positive");
  }
  for (int label : ds.labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= ds.class_count) {
      throw Error(ErrorKind::ShapeContractViolation,
                  "label " + std::to_string(label) + " outside [0, class_count)");
    }
  }
  require_finite(ds.images, "dataset images");
}

inline std::vector<std::size_t> class_counts(const LabeledDataset& ds) {
  std::vector<std::size_t> counts(ds.class_count, 0);
  for (int label : ds.labels) ++counts[static_cast<std::size_t>(label)];
  return counts;
}

}  // namespace ptqrel
