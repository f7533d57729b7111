// SPDX-FileCopyrightText: 2026 mms contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense little row-major f64 tensor. Rank 1 and 2 cover everything this
// library does; higher ranks are allowed but no op requires them. Data is
// shared (copy-on-write never happens: ops always allocate fresh outputs
// and nothing mutates a tensor after construction, except the optimizer
// which owns its parameters).

#include <cstddef>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "mms/errors.hpp"
#include "mms/rng.hpp"

namespace mms {

class Tensor {
 public:
  Tensor() : data_(std::make_shared<std::vector<double>>()) {}

  Tensor(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(std::move(data))) {
    check_shape();
  }

  Tensor(std::vector<int> shape, std::shared_ptr<std::vector<double>> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
  }

  static Tensor zeros(std::vector<int> shape) {
    const std::size_t n = count(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
  }

  static Tensor constant(std::vector<int> shape, double value) {
    const std::size_t n = count(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
  }

  static Tensor scalar(double value) { return Tensor({1}, {value}); }

  static Tensor uniform(std::vector<int> shape, double lo, double hi,
                        std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t n = count(shape);
    std::vector<double> d(n);
    for (auto& x : d) x = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(d));
  }

  static Tensor gaussian(std::vector<int> shape, double mean, double stddev,
                         std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t n = count(shape);
    std::vector<double> d(n);
    for (auto& x : d) x = rng.gaussian(mean, stddev);
    return Tensor(std::move(shape), std::move(d));
  }

  static Tensor trunc_gaussian(std::vector<int> shape, double mean,
                               double stddev, std::uint64_t seed,
                               double clip = 2.0) {
    Rng rng(seed);
    const std::size_t n = count(shape);
    std::vector<double> d(n);
    for (auto& x : d) x = rng.trunc_gaussian(mean, stddev, clip);
    return Tensor(std::move(shape), std::move(d));
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return int(shape_.size()); }
  int dim(int i) const {
    if (i < 0 || i >= rank()) throw IndexError("Tensor::dim: axis out of range");
    return shape_[std::size_t(i)];
  }
  std::size_t size() const { return data_->size(); }

  // Rank-2 conveniences; a rank-1 tensor acts as a single row.
  int rows() const { return rank() == 2 ? shape_[0] : 1; }
  int cols() const {
    if (rank() == 2) return shape_[1];
    if (rank() == 1) return shape_[0];
    throw ShapeError("Tensor::cols: rank > 2");
  }

  const double* data() const { return data_->data(); }
  double* mutable_data() { return data_->data(); }
  const std::vector<double>& vec() const { return *data_; }
  const std::shared_ptr<std::vector<double>>& storage() const { return data_; }

  double at(int i) const {
    if (i < 0 || std::size_t(i) >= size()) throw IndexError("Tensor::at");
    return (*data_)[std::size_t(i)];
  }
  double at(int r, int c) const {
    if (rank() != 2) throw ShapeError("Tensor::at(r,c): not rank-2");
    if (r < 0 || r >= shape_[0] || c < 0 || c >= shape_[1])
      throw IndexError("Tensor::at(r,c)");
    return (*data_)[std::size_t(r) * std::size_t(shape_[1]) + std::size_t(c)];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ", ";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

  // Tape bookkeeping, set by Tape::watch and by recorded ops. node is -1
  // for constants; tape_id pins the node to one tape generation so a stale
  // tensor from last step's tape degrades to a constant instead of aliasing
  // a foreign node id.
  int node = -1;
  std::uint64_t tape_id = 0;
  bool requires_grad = false;

 private:
  static std::size_t count(const std::vector<int>& shape) {
    if (shape.empty()) throw InvalidShape("tensor shape must have rank >= 1");
    std::size_t n = 1;
    for (int d : shape) {
      if (d < 1) throw InvalidShape("tensor dims must be positive");
      n *= std::size_t(d);
    }
    return n;
  }

  void check_shape() const {
    if (count(shape_) != data_->size())
      throw InvalidShape("tensor data size does not match shape");
  }

  std::vector<int> shape_;
  std::shared_ptr<std::vector<double>> data_;
};

}  // namespace mms
