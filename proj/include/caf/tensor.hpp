#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace caf {

class Rng;

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_volume(const Shape& shape);

/// Dense row-major array of doubles. The only numeric carrier in the library:
/// activations, parameters and gradients are all Tensors.
///
/// Extents must be positive. There is no broadcasting; every op states its
/// shapes explicitly and reports mismatches with both shapes in the message.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor identity(std::size_t n);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& vec() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Multi-index access; bounds checked.
  double& at(std::initializer_list<std::size_t> index);
  double at(std::initializer_list<std::size_t> index) const;

  /// Same values, new extents of equal volume.
  Tensor reshaped(Shape shape) const;

  void fill(double value);
  bool all_finite() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<double> data_;
};

/// Throws NumericError naming `where` if any value is NaN or infinite.
void require_finite(const Tensor& t, const std::string& where);

/// [B,m,k] x [B,k,n] -> [B,m,n].
Tensor matmul_batched(const Tensor& a, const Tensor& b);

/// Swaps the last two axes of a rank-3 tensor: [B,m,n] -> [B,n,m].
Tensor transpose_last2(const Tensor& t);

/// Arithmetic mean along `axis`; the output drops that axis. Reducing a
/// rank-1 tensor yields shape {1}.
Tensor reduce_mean(const Tensor& t, std::size_t axis);

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& t, double factor);

/// a += b, shapes must match exactly.
void accumulate(Tensor& into, const Tensor& from);

/// Standard-normal samples drawn from `rng` in row-major order.
Tensor randn(Rng& rng, const Shape& shape);

}  // namespace caf
