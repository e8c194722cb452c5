#include "caf/tensor.hpp"

#include <cmath>
#include <sstream>

#include "caf/error.hpp"
#include "caf/rng.hpp"

namespace caf {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_volume(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

namespace {

void check_extents(const Shape& shape) {
  if (shape.empty()) throw UsageError("tensor shape must have at least one axis");
  for (auto e : shape) {
    if (e == 0) throw UsageError("tensor extents must be positive, got " + shape_string(shape));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw UsageError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_volume(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  check_extents(shape_);
  if (data_.size() != shape_volume(shape_)) {
    throw UsageError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
  return t;
}

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw UsageError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_string(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw UsageError("index rank " + std::to_string(index.size()) + " vs tensor " +
                     shape_string(shape_));
  }
  std::size_t off = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) throw UsageError("index out of bounds for " + shape_string(shape_));
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

double& Tensor::at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
double Tensor::at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

Tensor Tensor::reshaped(Shape shape) const {
  check_extents(shape);
  if (shape_volume(shape) != data_.size()) {
    throw UsageError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) {
  for (auto& v : data_) v = value;
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void require_finite(const Tensor& t, const std::string& where) {
  if (!t.all_finite()) throw NumericError(where + ": non-finite value in " + shape_string(t.shape()));
}

Tensor matmul_batched(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.extent(0) != b.extent(0) || a.extent(2) != b.extent(1)) {
    throw UsageError("matmul_batched: incompatible shapes " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  const std::size_t batch = a.extent(0), m = a.extent(1), k = a.extent(2), n = b.extent(2);
  Tensor out({batch, m, n});
  const auto av = a.values();
  const auto bv = b.values();
  auto ov = out.values();
  for (std::size_t s = 0; s < batch; ++s) {
    const double* ap = av.data() + s * m * k;
    const double* bp = bv.data() + s * k * n;
    double* op = ov.data() + s * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double x = ap[i * k + p];
        for (std::size_t j = 0; j < n; ++j) op[i * n + j] += x * bp[p * n + j];
      }
    }
  }
  require_finite(out, "matmul_batched");
  return out;
}

Tensor transpose_last2(const Tensor& t) {
  if (t.rank() != 3) throw UsageError("transpose_last2: expected rank 3, got " + shape_string(t.shape()));
  const std::size_t batch = t.extent(0), m = t.extent(1), n = t.extent(2);
  Tensor out({batch, n, m});
  for (std::size_t s = 0; s < batch; ++s)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[(s * n + j) * m + i] = t[(s * m + i) * n + j];
  return out;
}

Tensor reduce_mean(const Tensor& t, std::size_t axis) {
  if (axis >= t.rank()) {
    throw UsageError("reduce_mean: axis " + std::to_string(axis) + " out of range for shape " +
                     shape_string(t.shape()));
  }
  const Shape& s = t.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];

  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out_shape.push_back(s[i]);
  if (out_shape.empty()) out_shape.push_back(1);

  Tensor out(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      double sum = 0.0;
      for (std::size_t l = 0; l < len; ++l) sum += t[(o * len + l) * inner + i];
      out[o * inner + i] = sum / static_cast<double>(len);
    }
  }
  require_finite(out, "reduce_mean");
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  require_finite(out, "add");
  return out;
}

Tensor scale(const Tensor& t, double factor) {
  Tensor out = t;
  for (auto& v : out.values()) v *= factor;
  require_finite(out, "scale");
  return out;
}

void accumulate(Tensor& into, const Tensor& from) {
  require_same_shape(into, from, "accumulate");
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += from[i];
}

Tensor randn(Rng& rng, const Shape& shape) {
  Tensor out(shape);
  for (auto& v : out.values()) v = rng.normal();
  return out;
}

}  // namespace caf
