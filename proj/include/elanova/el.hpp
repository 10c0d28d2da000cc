#pragma once
// Empirical likelihood dual solve and profile minimization. solve_lambda finds
// the multiplier of the convex dual by damped Newton inside the domain
// 1 + lambda'Z_i > 0; when zero is outside the convex hull of the Z_i the
// result carries boundary_hit and a +infinity sentinel statistic.
// profile_minimize is a BFGS quasi-Newton loop with numerical gradients over a
// caller-supplied statistic.

#include <Eigen/Dense>

#include <functional>

namespace elanova {

struct ELSolveOptions {
  double tol = 1e-11;     // on the mean residual norm, relative to the Z scale
  int max_iter = 100;
  bool log_star = false;  // quadratic extension below 1/n instead of sentinel
};

struct ELSolveResult {
  Eigen::VectorXd lambda;
  double neg2logratio = 0.0;  // 2 sum log(1 + lambda'Z_i); +inf on hull failure
  bool converged = false;
  bool boundary_hit = false;
  int iterations = 0;
};

// rows of Z are the moment vectors Z_i
ELSolveResult solve_lambda(const Eigen::MatrixXd& Z, const ELSolveOptions& opts = {});

// convenience: the -2 log EL ratio for testing mean zero
double neg2_log_el(const Eigen::MatrixXd& Z, const ELSolveOptions& opts = {});

struct ProfileOptions {
  double stat_tol = 1e-7;  // stop when successive statistic change is below this
  int max_iter = 200;
  double grad_step = 1e-6;
};

struct ProfileResult {
  Eigen::VectorXd minimizer;
  double statistic = 0.0;
  bool converged = false;
  int evaluations = 0;
};

// minimizes f starting from init; f may return +inf outside the feasible set
// (the line search backtracks); if f(init) is +inf the caller should try a
// different start
ProfileResult profile_minimize(const std::function<double(const Eigen::VectorXd&)>& f,
                               Eigen::VectorXd init, const ProfileOptions& opts = {});

}  // namespace elanova
