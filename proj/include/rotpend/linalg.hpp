#pragma once
// Small dense linear algebra on row-major std::vector storage (Eigen underneath).

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rotpend/errors.hpp"

namespace rotpend::linalg {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<const RowMajor> view(const std::vector<double>& A, std::size_t n) {
  return {A.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)};
}

inline double det(const std::vector<double>& A, std::size_t n) { return view(A, n).determinant(); }

/// x with A x = b; NumericalError("singular system", stage) when A is singular.
inline std::vector<double> solve(const std::vector<double>& A, const std::vector<double>& b,
                                 const std::string& stage = "linear solve") {
  const std::size_t n = b.size();
  const Eigen::FullPivLU<RowMajor> lu(view(A, n));
  if (!lu.isInvertible()) throw NumericalError("singular system", stage, "");
  const Eigen::VectorXd x = lu.solve(Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(n)));
  return {x.data(), x.data() + n};
}

}  // namespace rotpend::linalg
