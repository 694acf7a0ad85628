#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ptqrel/error.hpp"

namespace ptqrel {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Dense row-major float32 array.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, float fill = 0.0f)
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

  Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
      throw Error(ErrorKind::ShapeMismatch, "buffer of " + std::to_string(data_.size()) +
                                                " elements does not fit shape " +
                                                shape_to_string(shape_));
    }
  }

  // 1-D convenience constructor.
  static Tensor from(std::vector<float> values) {
    Shape shape{values.size()};
    return Tensor(std::move(shape), std::move(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  std::vector<float>& storage() noexcept { return data_; }
  const std::vector<float>& storage() const noexcept { return data_; }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  // Same buffer, new shape with the same element count.
  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
      throw Error(ErrorKind::ShapeMismatch,
                  "cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Shape equality plus byte equality of the payload (distinguishes -0.0/0.0
// and compares NaN payloads).
inline bool bitwise_equal(const Tensor& a, const Tensor& b) noexcept {
  return a.shape() == b.shape() &&
         (a.size() == 0 ||
          std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(float)) == 0);
}

inline bool all_finite(std::span<const float> values) noexcept {
  return std::all_of(values.begin(), values.end(), [](float v) { return std::isfinite(v); });
}

inline void require_finite(const Tensor& t, const char* what) {
  if (!all_finite(t.data())) {
    throw Error(ErrorKind::NonFinite, std::string(what) + " contains NaN or Inf");
  }
}

struct Histogram {
  std::size_t bin_count = 0;
  double range_lo = 0.0;
  double range_hi = 0.0;
  std::vector<std::uint64_t> counts;

  std::uint64_t total() const noexcept {
    return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
  }
};

inline std::pair<float, float> minmax(const Tensor& t) {
  if (t.empty()) throw Error(ErrorKind::EmptyTensor, "minmax of a zero-element tensor");
  const auto [lo, hi] = std::minmax_element(t.data().begin(), t.data().end());
  return {*lo, *hi};
}

inline float max_abs(const Tensor& t) {
  if (t.empty()) throw Error(ErrorKind::EmptyTensor, "max_abs of a zero-element tensor");
  float m = 0.0f;
  for (float v : t.data()) m = std::max(m, std::fabs(v));
  return m;
}

// Bin index floor((x - lo) / (hi - lo) * bins); values at or beyond either
// edge clamp into the boundary bin so every sample is counted.
inline std::size_t histogram_bin(double x, std::size_t bin_count, double lo, double hi) noexcept {
  const double pos = std::floor((x - lo) / (hi - lo) * static_cast<double>(bin_count));
  if (!(pos > 0.0)) return 0;
  if (pos >= static_cast<double>(bin_count)) return bin_count - 1;
  return static_cast<std::size_t>(pos);
}

inline Histogram histogram(std::span<const float> values, std::size_t bin_count, double lo,
                           double hi) {
  if (!(lo < hi)) {
    throw Error(ErrorKind::InvalidRange,
                "histogram range [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  if (bin_count == 0) throw Error(ErrorKind::InvalidRange, "histogram needs at least one bin");
  Histogram h{bin_count, lo, hi, std::vector<std::uint64_t>(bin_count, 0)};
  for (float v : values) ++h.counts[histogram_bin(v, bin_count, lo, hi)];
  return h;
}

inline Histogram histogram(const Tensor& t, std::size_t bin_count, double lo, double hi) {
  return histogram(t.data(), bin_count, lo, hi);
}

inline void require_same_shape(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorKind::ShapeMismatch,
                shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
}

// Mean of squared differences, accumulated sequentially in double.
inline double mse(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::ShapeMismatch, "mse operands differ in length");
  if (a.empty()) throw Error(ErrorKind::EmptyTensor, "mse of zero-element tensors");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

inline double mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b);
  return mse(a.data(), b.data());
}

inline double cosine_distance(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::ShapeMismatch, "cosine operands differ in length");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i], y = b[i];
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  if (na == 0.0 || nb == 0.0) throw Error(ErrorKind::ZeroNorm, "cosine distance of a zero vector");
  const double d = 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(d, 0.0, 2.0);
}

inline double cosine_distance(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b);
  return cosine_distance(a.data(), b.data());
}

inline constexpr double kKlSmoothing = 1e-9;

// KL(p || q) in nats over non-negative weights (counts or masses). Both are
// normalised, every bin receives kKlSmoothing, and the result is renormalised
// before the sum.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) {
    throw Error(ErrorKind::BinMismatch,
                std::to_string(p.size()) + " vs " + std::to_string(q.size()) + " bins");
  }
  double p_total = 0.0, q_total = 0.0;
  for (double v : p) p_total += v;
  for (double v : q) q_total += v;
  if (p_total == 0.0 || q_total == 0.0) {
    throw Error(ErrorKind::AllZero, "kl_divergence of an empty histogram");
  }
  const double norm = 1.0 + kKlSmoothing * static_cast<double>(p.size());
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = (p[i] / p_total + kKlSmoothing) / norm;
    const double qi = (q[i] / q_total + kKlSmoothing) / norm;
    kl += pi * std::log(pi / qi);
  }
  return kl;
}

inline std::vector<double> to_masses(const Histogram& h) {
  return std::vector<double>(h.counts.begin(), h.counts.end());
}

inline double kl_divergence(const Histogram& p, const Histogram& q) {
  if (p.bin_count != q.bin_count || p.counts.size() != q.counts.size()) {
    throw Error(ErrorKind::BinMismatch, std::to_string(p.bin_count) + " vs " +
                                            std::to_string(q.bin_count) + " bins");
  }
  return kl_divergence(to_masses(p), to_masses(q));
}

}  // namespace ptqrel
