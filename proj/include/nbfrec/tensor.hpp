#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace nbfrec {

/// Dense row-major tensor. Rank 1 and 2 cover everything the model needs.
template <class Real>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, Real fill = Real(0))
      : shape_(std::move(shape)), data_(count(shape_), fill) {}

  static Tensor scalar(Real v) {
    Tensor t({1});
    t.data_[0] = v;
    return t;
  }

  static Tensor vector1d(std::initializer_list<Real> vs) {
    Tensor t({vs.size()});
    std::size_t i = 0;
    for (Real v : vs) t.data_[i++] = v;
    return t;
  }

  static Tensor from_rows(std::initializer_list<std::initializer_list<Real>> rows) {
    std::size_t r = rows.size();
    std::size_t c = r ? rows.begin()->size() : 0;
    Tensor t({r, c});
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != c) throw std::invalid_argument("ragged row initializer");
      for (Real v : row) t.data_[i++] = v;
    }
    return t;
  }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const { return shape_.size() < 2 ? 1 : shape_[1]; }

  Real* data() noexcept { return data_.data(); }
  const Real* data() const noexcept { return data_.data(); }

  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  Real& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  Real operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return s.empty() ? 0 : n;
  }

  std::vector<std::size_t> shape_;
  std::vector<Real> data_;
};

}  // namespace nbfrec
