#pragma once

// Test-only helpers. The generator is deliberately unrelated to the library's
// SplitMix64 streams so fixtures never share randomness with the code under
// test.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ptqrel/model.hpp"
#include "ptqrel/tensor.hpp"

namespace ptqtest {

// PCG32 (XSH-RR), O'Neill 2014.
class Pcg32 {
 public:
  explicit Pcg32(std::uint64_t seed, std::uint64_t stream = 54) : inc_((stream << 1) | 1) {
    next();
    state_ += seed;
    next();
  }

  std::uint32_t next() {
    const std::uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    const auto xorshifted = static_cast<std::uint32_t>(((old >> 18) ^ old) >> 27);
    const auto rot = static_cast<std::uint32_t>(old >> 59);
    return (xorshifted >> rot) | (xorshifted << ((32 - rot) & 31));
  }

  // [0, 1) with 32 bits of resolution.
  double unit() { return next() * 0x1.0p-32; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(unit() * static_cast<double>(n)); }

  double normal() {
    double u = unit();
    while (u == 0.0) u = unit();
    return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * 3.14159265358979323846 * unit());
  }

 private:
  std::uint64_t state_ = 0;
  std::uint64_t inc_;
};

inline ptqrel::Tensor uniform_tensor(Pcg32& rng, ptqrel::Shape shape, double lo, double hi) {
  ptqrel::Tensor t(std::move(shape));
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// Post-ReLU-looking activations: a share of exact zeros plus a skewed
// positive tail.
inline ptqrel::Tensor relu_activations(Pcg32& rng, std::size_t n) {
  ptqrel::Tensor t({n});
  const double spread = rng.uniform(0.2, 4.0);
  for (float& v : t.data()) {
    const double z = rng.normal() * spread + rng.uniform(-0.5, 0.5);
    v = z > 0.0 ? static_cast<float>(z * (1.0 + 0.3 * z)) : 0.0f;
  }
  if (t[0] == 0.0f) t[0] = 0.5f;  // keep the tensor non-zero
  return t;
}

inline ptqrel::Tensor signed_activations(Pcg32& rng, std::size_t n) {
  ptqrel::Tensor t({n});
  const double spread = rng.uniform(0.1, 3.0);
  for (float& v : t.data()) v = static_cast<float>(rng.normal() * spread);
  return t;
}

inline ptqrel::LayerSpec make_layer(ptqrel::LayerKind kind,
                                    std::map<std::string, std::int64_t> attrs = {}) {
  ptqrel::LayerSpec l;
  l.kind = kind;
  l.attrs = std::move(attrs);
  return l;
}

// flatten -> linear -> relu -> linear with weights in [-1, 1].
inline ptqrel::ModelGraph random_mlp(Pcg32& rng, ptqrel::Shape input, std::size_t hidden,
                                     std::size_t classes) {
  using ptqrel::LayerKind;
  const std::size_t in = ptqrel::shape_numel(input);
  ptqrel::ModelGraph m;
  m.input_shape = std::move(input);
  m.class_count = classes;
  auto a = make_layer(LayerKind::Linear);
  a.params["weight"] = uniform_tensor(rng, {hidden, in}, -1.0, 1.0);
  a.params["bias"] = uniform_tensor(rng, {hidden}, -0.5, 0.5);
  auto b = make_layer(LayerKind::Linear);
  b.params["weight"] = uniform_tensor(rng, {classes, hidden}, -1.0, 1.0);
  b.params["bias"] = uniform_tensor(rng, {classes}, -0.5, 0.5);
  m.layers = {make_layer(LayerKind::Flatten), a, make_layer(LayerKind::Relu), b};
  return m;
}

inline std::filesystem::path data_dir() { return PTQREL_TEST_DATA_DIR; }

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("ptqrel-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Balanced dataset of `per_class` images per class drawn uniformly in [0, 1).
inline ptqrel::LabeledDataset random_dataset(Pcg32& rng, std::size_t classes, std::size_t per_class,
                                             ptqrel::Shape image_shape,
                                             ptqrel::Split split = ptqrel::Split::Train) {
  const std::size_t n = classes * per_class;
  ptqrel::Shape shape{n};
  shape.insert(shape.end(), image_shape.begin(), image_shape.end());
  ptqrel::LabeledDataset ds{uniform_tensor(rng, shape, 0.0, 1.0), {}, classes, split};
  for (std::size_t i = 0; i < n; ++i) ds.labels.push_back(static_cast<int>(i % classes));
  return ds;
}

}  // namespace ptqtest
