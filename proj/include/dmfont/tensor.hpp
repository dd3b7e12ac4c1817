#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "dmfont/common.hpp"
#include "dmfont/rng.hpp"

namespace dmfont {

// Dense n-d array, contiguous row-major, storage shared between copies.
// Tensors produced by an operation are treated as immutable afterwards;
// in-place mutation is reserved for parameter updates and gradient buffers.
template <typename S>
class TensorT {
 public:
  using Scalar = S;

  TensorT() = default;

  explicit TensorT(Shape shape)
      : shape_(std::move(shape)),
        storage_(std::make_shared<std::vector<S>>(shape_numel(shape_), S(0))) {}

  TensorT(Shape shape, S fill_value)
      : shape_(std::move(shape)),
        storage_(std::make_shared<std::vector<S>>(shape_numel(shape_), fill_value)) {}

  static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }
  static TensorT full(Shape shape, S value) { return TensorT(std::move(shape), value); }

  static TensorT from_vector(Shape shape, std::vector<S> values) {
    DMFONT_CHECK(int64_t(values.size()) == shape_numel(shape), ErrorCode::ShapeMismatch,
                 "from_vector: " + shape_str(shape) + " vs " + std::to_string(values.size()) +
                     " values");
    TensorT t;
    t.shape_ = std::move(shape);
    t.storage_ = std::make_shared<std::vector<S>>(std::move(values));
    return t;
  }

  static TensorT randn(Shape shape, Rng& rng, double stddev = 1.0) {
    TensorT t(std::move(shape));
    for (auto& v : *t.storage_) v = S(rng.normal() * stddev);
    return t;
  }

  static TensorT rand_uniform(Shape shape, Rng& rng, double lo, double hi) {
    TensorT t(std::move(shape));
    for (auto& v : *t.storage_) v = S(rng.uniform(lo, hi));
    return t;
  }

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int dim() const { return int(shape_.size()); }
  int64_t size(int axis) const { return shape_[size_t(axis)]; }
  int64_t numel() const { return storage_ ? int64_t(storage_->size()) : 0; }

  S* data() { return storage_->data(); }
  const S* data() const { return storage_->data(); }

  S& operator[](int64_t i) { return (*storage_)[size_t(i)]; }
  const S& operator[](int64_t i) const { return (*storage_)[size_t(i)]; }

  // 4-d convenience accessor (NCHW).
  S& at(int64_t n, int64_t c, int64_t h, int64_t w) {
    return (*storage_)[size_t(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  const S& at(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return (*storage_)[size_t(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }

  TensorT clone() const {
    TensorT t;
    t.shape_ = shape_;
    t.storage_ = std::make_shared<std::vector<S>>(*storage_);
    return t;
  }

  // Shares storage; numel must match.
  TensorT reshaped(Shape shape) const {
    DMFONT_CHECK(shape_numel(shape) == numel(), ErrorCode::ShapeMismatch,
                 "reshape " + shape_str(shape_) + " -> " + shape_str(shape));
    TensorT t;
    t.shape_ = std::move(shape);
    t.storage_ = storage_;
    return t;
  }

  void fill(S value) { std::fill(storage_->begin(), storage_->end(), value); }
  void zero() { fill(S(0)); }

  // Reductions accumulate in double.
  double sum() const {
    double acc = 0.0;
    for (const S& v : *storage_) acc += double(v);
    return acc;
  }
  double mean() const { return numel() ? sum() / double(numel()) : 0.0; }

  double abs_max() const {
    double m = 0.0;
    for (const S& v : *storage_) m = std::max(m, std::abs(double(v)));
    return m;
  }

  bool all_finite() const {
    for (const S& v : *storage_)
      if (!std::isfinite(double(v))) return false;
    return true;
  }

  bool same_values(const TensorT& other) const {
    if (shape_ != other.shape_) return false;
    for (int64_t i = 0; i < numel(); ++i)
      if ((*storage_)[size_t(i)] != (*other.storage_)[size_t(i)]) return false;
    return true;
  }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<S>> storage_;
};

using Tensor = TensorT<float>;

}  // namespace dmfont
