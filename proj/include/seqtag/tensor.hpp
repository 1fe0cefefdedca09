#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <string>
#include <vector>

namespace seqtag {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// Non-owning named view of a parameter tensor. Vectors appear as 1 x n.
struct TensorRef {
  std::string name;
  double* data;
  std::size_t rows;
  std::size_t cols;

  std::size_t size() const { return rows * cols; }
};

inline TensorRef tensor_ref(std::string name, Matrix& m) {
  return {std::move(name), m.data(), static_cast<std::size_t>(m.rows()),
          static_cast<std::size_t>(m.cols())};
}
inline TensorRef tensor_ref(std::string name, Vector& v) {
  return {std::move(name), v.data(), 1, static_cast<std::size_t>(v.size())};
}

using TensorList = std::vector<TensorRef>;

}  // namespace seqtag
