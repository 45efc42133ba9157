#pragma once

#include <cstddef>
#include <vector>

namespace dccf {

// Dense row-major matrix. Deliberately minimal: the numeric kernels in this
// project are explicit loops, not an expression library.
template <class S>
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<S> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, S(0)) {}

  S* row(int i) { return data.data() + static_cast<std::size_t>(i) * cols; }
  const S* row(int i) const { return data.data() + static_cast<std::size_t>(i) * cols; }
  S& at(int i, int j) { return data[static_cast<std::size_t>(i) * cols + j]; }
  S at(int i, int j) const { return data[static_cast<std::size_t>(i) * cols + j]; }
  std::size_t size() const { return data.size(); }
};

}  // namespace dccf
