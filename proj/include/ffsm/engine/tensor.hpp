#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ffsm {

// (batch, channels, height, width)
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t numel() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  std::string str() const {
    return "[" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + "]";
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

template <typename T>
class Tape;

// Dense NCHW tensor. A Tensor is a handle: copies share the same storage,
// which is what lets the tape and the parameter registry refer to one
// buffer. Use clone() for an independent copy.
template <typename T>
class Tensor {
 public:
  Tensor() : s_(std::make_shared<Storage>()) {}
  explicit Tensor(Shape shape, T fill = T(0)) : s_(std::make_shared<Storage>()) {
    s_->shape = shape;
    s_->values.assign(shape.numel(), fill);
  }
  Tensor(Shape shape, std::vector<T> values);

  const Shape& shape() const { return s_->shape; }
  std::size_t numel() const { return s_->values.size(); }

  T* data() { return s_->values.data(); }
  const T* data() const { return s_->values.data(); }
  std::span<T> values() { return s_->values; }
  std::span<const T> values() const { return s_->values; }
  T& operator[](std::size_t i) { return s_->values[i]; }
  T operator[](std::size_t i) const { return s_->values[i]; }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    const Shape& s = s_->shape;
    return ((n * s.c + c) * s.h + h) * s.w + w;
  }
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return s_->values[offset(n, c, h, w)];
  }
  T at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return s_->values[offset(n, c, h, w)];
  }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool on) {
    s_->requires_grad = on;
    s_->tracked = on;
  }

  // True when gradients must flow into this tensor: either a leaf that
  // requires grad or the output of a recorded operation.
  bool tracked() const { return s_->tracked; }

  bool has_grad() const { return !s_->grad.empty(); }
  std::span<T> grad() { return s_->grad; }
  std::span<const T> grad() const { return s_->grad; }
  std::span<T> ensure_grad() {
    if (s_->grad.size() != s_->values.size()) s_->grad.assign(s_->values.size(), T(0));
    return s_->grad;
  }
  void zero_grad() {
    if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
  }
  void clear_grad() { std::vector<T>().swap(s_->grad); }

  Tensor clone() const {
    Tensor out(s_->shape, s_->values);
    return out;
  }

  bool same_storage(const Tensor& other) const { return s_ == other.s_; }

 private:
  struct Storage {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;
    bool requires_grad = false;
    bool tracked = false;
    const Tape<T>* tape = nullptr;
    std::size_t node = 0;
  };
  std::shared_ptr<Storage> s_;

  friend class Tape<T>;
};

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : s_(std::make_shared<Storage>()) {
  if (values.size() != shape.numel()) {
    throw std::invalid_argument("tensor value count " + std::to_string(values.size()) +
                                " does not match shape " + shape.str());
  }
  s_->shape = shape;
  s_->values = std::move(values);
}

// Converts element type, dropping gradient and tape links.
template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  std::vector<To> v(t.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<To>(t[i]);
  Tensor<To> out(t.shape(), std::move(v));
  out.set_requires_grad(t.requires_grad());
  return out;
}

}  // namespace ffsm
