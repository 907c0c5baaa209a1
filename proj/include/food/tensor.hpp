#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "food/error.hpp"

namespace food {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& s);

// Dense row-major n-d array. The first dimension is the batch dimension
// wherever a tensor carries samples.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    require(shape_size(shape_) == data_.size(), ErrorKind::kShape,
            "tensor data length " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& vec() const noexcept { return data_; }
  T* ptr() noexcept { return data_.data(); }
  const T* ptr() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Number of values per sample (product of all but the first dimension).
  std::size_t sample_size() const { return shape_.empty() ? 0 : data_.size() / std::max<std::size_t>(shape_[0], 1); }
  Shape sample_shape() const { return shape_.empty() ? Shape{} : Shape(shape_.begin() + 1, shape_.end()); }

  std::span<T> sample(std::size_t n) { return std::span<T>(data_).subspan(n * sample_size(), sample_size()); }
  std::span<const T> sample(std::size_t n) const {
    return std::span<const T>(data_).subspan(n * sample_size(), sample_size());
  }

  BasicTensor reshaped(Shape s) const {
    require(shape_size(s) == data_.size(), ErrorKind::kShape,
            "cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    return BasicTensor(std::move(s), data_);
  }

  // Samples [begin, end) along the batch dimension.
  BasicTensor slice_batch(std::size_t begin, std::size_t end) const {
    require(!shape_.empty() && begin <= end && end <= shape_[0], ErrorKind::kShape, "batch slice out of range");
    Shape s = shape_;
    s[0] = end - begin;
    const std::size_t n = sample_size();
    return BasicTensor(std::move(s), std::vector<T>(data_.begin() + begin * n, data_.begin() + end * n));
  }

  BasicTensor gather(std::span<const std::size_t> rows) const {
    Shape s = shape_;
    s[0] = rows.size();
    const std::size_t n = sample_size();
    std::vector<T> out(rows.size() * n);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      require(rows[i] < shape_[0], ErrorKind::kShape, "gather index out of range");
      std::copy_n(data_.begin() + rows[i] * n, n, out.begin() + i * n);
    }
    return BasicTensor(std::move(s), std::move(out));
  }

  static BasicTensor concat_batch(std::span<const BasicTensor> parts) {
    require(!parts.empty(), ErrorKind::kShape, "concat of zero tensors");
    Shape s = parts[0].shape();
    std::size_t total = 0;
    std::vector<T> out;
    for (const auto& p : parts) {
      require(p.sample_shape() == parts[0].sample_shape(), ErrorKind::kShape, "concat sample shape mismatch");
      total += p.dim(0);
      out.insert(out.end(), p.data_.begin(), p.data_.end());
    }
    s[0] = total;
    return BasicTensor(std::move(s), std::move(out));
  }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return BasicTensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

}  // namespace food
