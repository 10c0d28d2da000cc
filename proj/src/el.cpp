#include "elanova/el.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace elanova {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// concave objective L(lambda) = sum log(1 + lambda'Z_i), optionally with the
// quadratic extension below s = 1/n
struct DualEval {
  double value;
  bool in_domain;
};

DualEval eval_L(const Eigen::MatrixXd& Z, const Eigen::VectorXd& lambda,
                bool log_star, double s) {
  const int n = static_cast<int>(Z.rows());
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const double w = 1.0 + Z.row(i).dot(lambda);
    if (log_star) {
      if (w < s) {
        const double ls = std::log(s) - 1.5 + 2.0 * w / s - w * w / (2.0 * s * s);
        total += ls;
      } else {
        total += std::log(w);
      }
    } else {
      if (w <= 0.0) return {0.0, false};
      total += std::log(w);
    }
  }
  return {total, true};
}

}  // namespace

ELSolveResult solve_lambda(const Eigen::MatrixXd& Z, const ELSolveOptions& opts) {
  const int n = static_cast<int>(Z.rows());
  const int r = static_cast<int>(Z.cols());
  ELSolveResult res;
  res.lambda = Eigen::VectorXd::Zero(r);
  if (n == 0) {
    res.converged = true;
    return res;
  }
  const double scale = Z.cwiseAbs().maxCoeff();
  if (scale == 0.0) {
    res.converged = true;  // all moment vectors zero
    return res;
  }
  const double s_floor = 1.0 / n;

  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(r);
  Eigen::VectorXd w(n), g(r), step(r);
  Eigen::MatrixXd H(r, r);
  auto grad_hess = [&](const Eigen::VectorXd& at) {
    w = (Z * at).array() + 1.0;
    g.setZero();
    H.setZero();
    for (int i = 0; i < n; ++i) {
      double wi = w(i);
      double d1, d2;  // derivatives of the per-point log term wrt w
      if (opts.log_star && wi < s_floor) {
        d1 = 2.0 / s_floor - wi / (s_floor * s_floor);
        d2 = 1.0 / (s_floor * s_floor);
      } else {
        d1 = 1.0 / wi;
        d2 = 1.0 / (wi * wi);
      }
      g.noalias() += d1 * Z.row(i).transpose();
      H.noalias() += d2 * Z.row(i).transpose() * Z.row(i);
    }
  };
  auto newton_step = [&]() {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    if (ldlt.info() != Eigen::Success) {
      H.diagonal().array() += 1e-10 * (1.0 + H.trace());
      ldlt.compute(H);
    }
    step = ldlt.solve(g);
  };
  // the Newton decrement g'H^{-1}g is scale-free (log-likelihood units) and
  // bounds 2(L* - L); line searches stall one ulp from the optimum, so an
  // absolute gradient test cannot distinguish convergence from a boundary
  const double dec_tol = 2.0 * opts.tol;
  for (int it = 0; it < opts.max_iter; ++it) {
    res.iterations = it;
    grad_hess(lambda);
    newton_step();
    const double dec = g.dot(step);
    if (std::isfinite(dec) && dec <= dec_tol) {
      res.converged = true;
      break;
    }
    double tau = 1.0;
    const double L0 = eval_L(Z, lambda, opts.log_star, s_floor).value;
    bool moved = false;
    for (int half = 0; half < 60; ++half) {
      const Eigen::VectorXd cand = lambda + tau * step;
      const DualEval e = eval_L(Z, cand, opts.log_star, s_floor);
      if (e.in_domain && e.value >= L0) {
        lambda = cand;
        moved = true;
        break;
      }
      tau *= 0.5;
    }
    if (!moved) {
      // cannot ascend: either at the optimum to machine precision or pinned
      // against the domain boundary; the decrement separates the two
      res.converged = std::isfinite(dec) && dec <= 1e-6;
      break;
    }
    if (lambda.norm() * scale > 1e10) break;  // recession direction: no interior root
  }
  if (res.converged) {
    // two full Newton polish steps sharpen the root to near machine precision
    for (int t = 0; t < 2; ++t) {
      grad_hess(lambda);
      newton_step();
      const Eigen::VectorXd cand = lambda + step;
      if (!eval_L(Z, cand, opts.log_star, s_floor).in_domain) break;
      lambda = cand;
    }
  }
  w = (Z * lambda).array() + 1.0;
  const bool domain_ok = opts.log_star ? (w.minCoeff() >= s_floor * (1.0 - 1e-9))
                                       : (w.minCoeff() > 0.0);
  if (!res.converged || !domain_ok) {
    // either zero lies outside the convex hull of the Z_i or the solve stalled
    // at the domain boundary; report the sentinel
    res.lambda = lambda;
    res.boundary_hit = true;
    res.converged = false;
    res.neg2logratio = kInf;
    return res;
  }
  res.lambda = lambda;
  res.neg2logratio = 2.0 * eval_L(Z, lambda, opts.log_star, s_floor).value;
  if (res.neg2logratio < 0.0 && res.neg2logratio > -1e-9) res.neg2logratio = 0.0;
  return res;
}

double neg2_log_el(const Eigen::MatrixXd& Z, const ELSolveOptions& opts) {
  return solve_lambda(Z, opts).neg2logratio;
}

ProfileResult profile_minimize(const std::function<double(const Eigen::VectorXd&)>& f,
                               Eigen::VectorXd init, const ProfileOptions& opts) {
  ProfileResult res;
  const int dim = static_cast<int>(init.size());
  int evals = 0;
  auto F = [&](const Eigen::VectorXd& x) {
    ++evals;
    return f(x);
  };
  Eigen::VectorXd x = std::move(init);
  double fx = F(x);
  res.minimizer = x;
  res.statistic = fx;
  if (!std::isfinite(fx)) {
    res.evaluations = evals;
    return res;  // infeasible start; caller picks a different one
  }
  auto gradient = [&](const Eigen::VectorXd& at, double fat) {
    Eigen::VectorXd g(dim);
    for (int i = 0; i < dim; ++i) {
      const double hstep = opts.grad_step * (1.0 + std::abs(at(i)));
      Eigen::VectorXd xp = at, xm = at;
      xp(i) += hstep;
      xm(i) -= hstep;
      const double fp = F(xp), fm = F(xm);
      if (std::isfinite(fp) && std::isfinite(fm)) {
        g(i) = (fp - fm) / (2.0 * hstep);
      } else if (std::isfinite(fp)) {
        g(i) = (fp - fat) / hstep;
      } else if (std::isfinite(fm)) {
        g(i) = (fat - fm) / hstep;
      } else {
        g(i) = 0.0;
      }
    }
    return g;
  };

  Eigen::VectorXd g = gradient(x, fx);
  Eigen::MatrixXd B = Eigen::MatrixXd::Identity(dim, dim);  // inverse Hessian
  int stall = 0;
  for (int it = 0; it < opts.max_iter; ++it) {
    Eigen::VectorXd dir = -(B * g);
    double slope = dir.dot(g);
    if (!(slope < 0)) {
      B.setIdentity();
      dir = -g;
      slope = dir.dot(g);
      if (!(slope < 0)) break;  // gradient numerically zero
    }
    double tau = 1.0;
    double fnew = kInf;
    Eigen::VectorXd xnew;
    bool ok = false;
    for (int half = 0; half < 45; ++half) {
      xnew = x + tau * dir;
      fnew = F(xnew);
      if (std::isfinite(fnew) && fnew <= fx + 1e-4 * tau * slope) {
        ok = true;
        break;
      }
      tau *= 0.5;
    }
    if (!ok) {
      if (++stall >= 2) break;
      B.setIdentity();
      continue;
    }
    const Eigen::VectorXd gnew = gradient(xnew, fnew);
    const Eigen::VectorXd sv = xnew - x;
    const Eigen::VectorXd yv = gnew - g;
    const double sy = sv.dot(yv);
    if (sy > 1e-12 * sv.norm() * yv.norm()) {
      // inverse BFGS update
      const Eigen::VectorXd By = B * yv;
      const double yBy = yv.dot(By);
      B += ((sy + yBy) / (sy * sy)) * (sv * sv.transpose()) -
           (By * sv.transpose() + sv * By.transpose()) / sy;
    }
    const double drop = fx - fnew;
    x = xnew;
    fx = fnew;
    g = gnew;
    if (drop < opts.stat_tol) {
      res.converged = true;
      break;
    }
    stall = 0;
  }
  res.minimizer = x;
  res.statistic = fx;
  res.evaluations = evals;
  return res;
}

}  // namespace elanova
