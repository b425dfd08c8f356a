#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace heavytail {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Raised when an argument lies outside the documented domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw DomainError(what);
}

inline bool all_finite(const Matrix& a) { return a.allFinite(); }

/// Checks that `theta` has unit norm (within `tol`) and returns it unchanged.
inline const Vector& require_unit(const Vector& theta, const char* who, double tol = 1e-12) {
  const double nrm = theta.norm();
  if (!(nrm > 0.0)) throw DomainError(std::string(who) + ": zero-norm direction");
  if (std::abs(nrm - 1.0) > tol) throw DomainError(std::string(who) + ": direction is not unit norm");
  return theta;
}

/// Fit bookkeeping shared by the minimax center fits.
struct FitDiagnostics {
  int iterations = 0;     ///< outer cutting-plane iterations
  int oracle_calls = 0;   ///< worst-direction searches
  int cuts = 0;           ///< cuts alive at exit
  double gap = 0.0;       ///< achieved sup gap at the returned point
  double target = 0.0;    ///< gap level that was requested
  bool reached_target = false;
};

}  // namespace heavytail
