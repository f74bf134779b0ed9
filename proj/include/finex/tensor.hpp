#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <vector>

namespace finex {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

// Dense row-major float64 matrix. Scalars are 1x1, vectors 1xN or Nx1.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> d;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), d(static_cast<std::size_t>(r) * c, 0.0) {}

  static Tensor zeros(int r, int c) { return Tensor(r, c); }
  static Tensor scalar(double v) {
    Tensor t(1, 1);
    t.d[0] = v;
    return t;
  }

  bool empty() const { return d.empty(); }
  std::size_t size() const { return d.size(); }

  double& at(int r, int c) { return d[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return d[static_cast<std::size_t>(r) * cols + c]; }

  double item() const {
    assert(rows == 1 && cols == 1);
    return d[0];
  }

  EMap m() { return EMap(d.data(), rows, cols); }
  ECMap m() const { return ECMap(d.data(), rows, cols); }

  void setZero() { std::fill(d.begin(), d.end(), 0.0); }

  bool allFinite() const {
    for (double v : d)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

}  // namespace finex
