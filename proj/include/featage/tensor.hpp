#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace featage::num {

// Dense row-major tensor. The scalar type is a template parameter so the
// gradient checker can run the exact same op implementations in double
// precision while production code stays in float.
template <typename S>
struct TensorT {
  std::vector<int> shape;
  std::vector<S> data;

  TensorT() = default;

  explicit TensorT(std::vector<int> shape_, S fill = S(0))
      : shape(std::move(shape_)) {
    data.assign(static_cast<size_t>(count(shape)), fill);
  }

  static TensorT zeros(std::vector<int> shape_) { return TensorT(std::move(shape_)); }

  static TensorT from(std::vector<int> shape_, std::vector<S> values) {
    TensorT t;
    t.shape = std::move(shape_);
    if (static_cast<int64_t>(values.size()) != count(t.shape)) {
      throw std::invalid_argument("tensor: value count " + std::to_string(values.size()) +
                                  " does not match shape " + shape_str(t.shape));
    }
    t.data = std::move(values);
    return t;
  }

  static int64_t count(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      if (d < 0) throw std::invalid_argument("tensor: negative dimension in shape " + shape_str(s));
      n *= d;
    }
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }

  int dim(int i) const {
    if (i < 0 || i >= ndim()) throw std::invalid_argument("tensor: dim index out of range");
    return shape[i];
  }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  S& at(int i) { return data[static_cast<size_t>(i)]; }
  S at(int i) const { return data[static_cast<size_t>(i)]; }

  S& at(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
  S at(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }

  S& at(int i, int j, int k) {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  S at(int i, int j, int k) const {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }

  S& at(int i, int j, int k, int l) {
    return data[((static_cast<size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }
  S at(int i, int j, int k, int l) const {
    return data[((static_cast<size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }

  bool all_finite() const {
    for (S v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename T>
  TensorT<T> cast() const {
    TensorT<T> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
    return out;
  }

  static std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
      if (i) os << "x";
      os << s[i];
    }
    os << "]";
    return os.str();
  }

  std::string shape_str() const { return shape_str(shape); }
};

using Tensor = TensorT<float>;

}  // namespace featage::num
