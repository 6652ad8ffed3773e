#pragma once

// Dense row-major tensor on a flat buffer. Binary elementwise ops require
// identical shapes; the only broadcasting is scalar-tensor. Matrix products
// go through Eigen maps over the flat storage.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace xmask {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

template <typename Scalar>
class Tensor {
 public:
  using EigenMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using EigenArray = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), Scalar(0)) {}
  Tensor(Shape shape, std::vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size())
      throw std::invalid_argument("tensor: shape " + shape_str(shape_) + " expects " +
                                  std::to_string(shape_numel(shape_)) + " values, got " +
                                  std::to_string(data_.size()));
  }
  Tensor(Shape shape, std::initializer_list<Scalar> vals)
      : Tensor(std::move(shape), std::vector<Scalar>(vals)) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, Scalar v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }
  static Tensor ones(Shape shape) { return full(std::move(shape), Scalar(1)); }
  static Tensor scalar(Scalar v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::vector<Scalar>& vec() { return data_; }
  const std::vector<Scalar>& vec() const { return data_; }

  Scalar& operator[](std::size_t i) { return data_[i]; }
  Scalar operator[](std::size_t i) const { return data_[i]; }

  Scalar item() const {
    if (numel() != 1) throw std::invalid_argument("item(): tensor " + shape_str(shape_) + " is not scalar");
    return data_[0];
  }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != numel())
      throw std::invalid_argument("reshape: " + shape_str(shape_) + " -> " + shape_str(s) + " changes element count");
    return Tensor(std::move(s), data_);
  }

  template <typename T>
  Tensor<T> cast() const {
    std::vector<T> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<T>(data_[i]);
    return Tensor<T>(shape_, std::move(out));
  }

  // Eigen views over the flat buffer.
  Eigen::Map<EigenMatrix> mat(std::size_t rows, std::size_t cols) {
    if (rows * cols != numel()) throw std::invalid_argument("mat(): view size mismatch");
    return Eigen::Map<EigenMatrix>(data_.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  }
  Eigen::Map<const EigenMatrix> mat(std::size_t rows, std::size_t cols) const {
    if (rows * cols != numel()) throw std::invalid_argument("mat(): view size mismatch");
    return Eigen::Map<const EigenMatrix>(data_.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  }
  Eigen::Map<EigenArray> array() { return Eigen::Map<EigenArray>(data_.data(), static_cast<Eigen::Index>(numel())); }
  Eigen::Map<const EigenArray> array() const {
    return Eigen::Map<const EigenArray>(data_.data(), static_cast<Eigen::Index>(numel()));
  }

  bool all_finite() const {
    for (Scalar v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

 private:
  Shape shape_;
  std::vector<Scalar> data_;
};

namespace detail {
inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}
template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (!same_shape(a.shape(), b.shape()))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}
}  // namespace detail

// ---- plain (non-recorded) elementwise helpers ----

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<S> out(a.shape());
  out.array() = a.array() + b.array();
  return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<S> out(a.shape());
  out.array() = a.array() - b.array();
  return out;
}

// Hadamard product.
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<S> out(a.shape());
  out.array() = a.array() * b.array();
  return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  Tensor<S> out(a.shape());
  out.array() = a.array() * c;
  return out;
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
  Tensor<S> out(a.shape());
  out.array() = a.array() + c;
  return out;
}

// sign(0) = 0, matching the subgradient convention used by the attacks.
template <typename S>
Tensor<S> sign(const Tensor<S>& a) {
  Tensor<S> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] > S(0) ? S(1) : (a[i] < S(0) ? S(-1) : S(0));
  return out;
}

template <typename S>
Tensor<S> clamp(const Tensor<S>& a, S lo, S hi) {
  Tensor<S> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] < lo ? lo : (a[i] > hi ? hi : a[i]);
  return out;
}

// Per-element bounds.
template <typename S>
Tensor<S> clamp(const Tensor<S>& a, const Tensor<S>& lo, const Tensor<S>& hi) {
  detail::require_same_shape(a, lo, "clamp");
  detail::require_same_shape(a, hi, "clamp");
  Tensor<S> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] < lo[i] ? lo[i] : (a[i] > hi[i] ? hi[i] : a[i]);
  return out;
}

template <typename S>
S min_value(const Tensor<S>& a) {
  return a.array().minCoeff();
}
template <typename S>
S max_value(const Tensor<S>& a) {
  return a.array().maxCoeff();
}
template <typename S>
S sum_value(const Tensor<S>& a) {
  return a.array().sum();
}
template <typename S>
S mean_value(const Tensor<S>& a) {
  return a.numel() ? a.array().sum() / static_cast<S>(a.numel()) : S(0);
}

template <typename S>
S max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "max_abs_diff");
  return (a.array() - b.array()).abs().maxCoeff();
}

template <typename S>
bool bitwise_equal(const Tensor<S>& a, const Tensor<S>& b) {
  if (!same_shape(a.shape(), b.shape())) return false;
  return std::memcmp(a.data(), b.data(), a.numel() * sizeof(S)) == 0;
}

// Row argmax for [N, K] logits.
template <typename S>
std::vector<int> argmax_rows(const Tensor<S>& t) {
  detail::require(t.rank() == 2, "argmax_rows: rank-2 tensor expected, got " + shape_str(t.shape()));
  const std::size_t n = t.dim(0), k = t.dim(1);
  std::vector<int> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    const S* row = t.data() + r * k;
    int best = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (row[c] > row[best]) best = static_cast<int>(c);
    out[r] = best;
  }
  return out;
}

// Numerically stable row softmax for [N, K].
template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& t) {
  detail::require(t.rank() == 2, "softmax_rows: rank-2 tensor expected");
  const std::size_t n = t.dim(0), k = t.dim(1);
  Tensor<S> out(t.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const S* row = t.data() + r * k;
    S* orow = out.data() + r * k;
    S m = row[0];
    for (std::size_t c = 1; c < k; ++c) m = std::max(m, row[c]);
    S z = S(0);
    for (std::size_t c = 0; c < k; ++c) {
      orow[c] = std::exp(row[c] - m);
      z += orow[c];
    }
    for (std::size_t c = 0; c < k; ++c) orow[c] /= z;
  }
  return out;
}

}  // namespace xmask
