#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

namespace cranbf {

using cmat = Eigen::MatrixXcd;
using cvec = Eigen::VectorXcd;
using rvec = Eigen::VectorXd;
using cplx = std::complex<double>;

struct DimensionMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NotPositiveDefinite : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NoBracket : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline bool all_finite(const cmat& a) {
  return a.allFinite();
}

inline void require_finite(const cmat& a, const char* what) {
  if (!a.allFinite())
    throw std::invalid_argument(std::string(what) + ": non-finite entries");
}

namespace detail {

// Hermiticity is checked relative to the magnitude of A so that roundoff
// accumulated while assembling large quadratic forms does not trip it.
inline void require_hermitian(const cmat& a, const char* what) {
  if (a.rows() != a.cols())
    throw DimensionMismatch(std::string(what) + ": matrix is " +
                            std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + ", expected square");
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  const double dev = (a - a.adjoint()).cwiseAbs().maxCoeff();
  if (dev > 1e-10 * scale)
    throw std::invalid_argument(std::string(what) +
                                ": matrix is not Hermitian (max deviation " +
                                std::to_string(dev) + ")");
}

}  // namespace detail

/// Solves A X = B for Hermitian positive definite A via a Cholesky
/// factorization followed by one step of iterative refinement. A is never
/// inverted explicitly.
inline cmat hermitian_solve(const cmat& a, const cmat& b) {
  require_finite(a, "hermitian_solve: A");
  require_finite(b, "hermitian_solve: B");
  detail::require_hermitian(a, "hermitian_solve");
  if (a.rows() != b.rows())
    throw DimensionMismatch("hermitian_solve: A is " +
                            std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + " but B has " +
                            std::to_string(b.rows()) + " rows");
  Eigen::LLT<cmat> llt(a);
  if (llt.info() != Eigen::Success)
    throw NotPositiveDefinite("hermitian_solve: Cholesky failed, matrix is "
                              "not positive definite");
  cmat x = llt.solve(b);
  x += llt.solve(b - a * x);
  return x;
}

/// Base-2 log-determinant of a Hermitian positive definite matrix, computed
/// from the Cholesky diagonal.
inline double logdet2_pd(const cmat& a) {
  require_finite(a, "logdet2_pd: A");
  detail::require_hermitian(a, "logdet2_pd");
  Eigen::LLT<cmat> llt(a);
  if (llt.info() != Eigen::Success)
    throw NotPositiveDefinite("logdet2_pd: Cholesky failed, matrix is not "
                              "positive definite");
  double acc = 0.0;
  const auto& l = llt.matrixLLT();
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    const double d = l(i, i).real();
    if (!(d > 0.0) || !std::isfinite(d))
      throw NotPositiveDefinite("logdet2_pd: nonpositive Cholesky pivot");
    acc += std::log2(d);
  }
  return 2.0 * acc;
}

/// Bisection for a root of a monotone scalar function on [lo, hi]. The
/// endpoints must bracket a sign change; f is never evaluated outside the
/// interval. Returns the final midpoint once the interval width is <= tol.
inline double bisect_monotone(const std::function<double(double)>& f,
                              double lo, double hi, double tol) {
  if (!(lo <= hi) || !std::isfinite(lo) || !std::isfinite(hi))
    throw std::invalid_argument("bisect_monotone: invalid interval");
  if (!(tol > 0.0))
    throw std::invalid_argument("bisect_monotone: tol must be positive");
  double flo = f(lo);
  double fhi = f(hi);
  if (flo == 0.0) return lo;
  if (fhi == 0.0) return hi;
  if ((flo > 0.0) == (fhi > 0.0))
    throw NoBracket("bisect_monotone: f(lo) and f(hi) have the same sign");
  for (int it = 0; it < 200 && (hi - lo) > tol; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if (fm == 0.0) return mid;
    if ((fm > 0.0) == (flo > 0.0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace cranbf
