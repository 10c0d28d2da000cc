#include "elanova/covariate.hpp"

#include "elanova/stats.hpp"

#include <cmath>
#include <limits>

namespace elanova {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// unnormalized covariate moment S_j = sum c Xc Xc' (the (n_j T_j)^(-1/2)
// factors of the displayed quantities cancel in every weight product)
Eigen::MatrixXd S_beta(const EstimatingContext& ctx) {
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(ctx.p, ctx.p);
  for (int v = 0; v < ctx.V(); ++v)
    S.noalias() += ctx.c[v] * ctx.Xc.row(v).transpose() * ctx.Xc.row(v);
  return S;
}

Eigen::MatrixXd S_gamma(const EstimatingContext& ctx) {
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(ctx.q, ctx.q);
  for (int v = 0; v < ctx.V(); ++v)
    S.noalias() += ctx.c[v] * ctx.Mc.row(v).transpose() * ctx.Mc.row(v);
  return S;
}

Eigen::MatrixXd moment_outer(const Eigen::MatrixXd& Z) {
  return Z.transpose() * Z;
}

// generic inverse-variance one-step combination with graceful degradation
Eigen::VectorXd combine(const std::vector<Eigen::VectorXd>& est,
                        const std::vector<Eigen::MatrixXd>& S,
                        const std::vector<Eigen::MatrixXd>& C) {
  const int dim = static_cast<int>(est[0].size());
  Eigen::MatrixXd WS = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::VectorXd Wb = Eigen::VectorXd::Zero(dim);
  for (std::size_t j = 0; j < est.size(); ++j) {
    Eigen::MatrixXd W;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(C[j]);
    if (ldlt.info() == Eigen::Success && ldlt.vectorD().minCoeff() > 1e-12)
      W = S[j] * ldlt.solve(S[j]);
    else
      W = S[j];
    WS += W;
    Wb += W * est[j];
  }
  Eigen::LDLT<Eigen::MatrixXd> sol(WS);
  if (sol.info() != Eigen::Success || sol.vectorD().minCoeff() <= 0) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
    for (const auto& e : est) mean += e;
    return mean / static_cast<double>(est.size());
  }
  return sol.solve(Wb);
}

// Per-sample log-likelihood ratio with two small-sample adjustments shared by
// the whole covariate-test family. The moment rows are augmented with the
// adjusted-EL pseudo-observation -a/n * sum(rows), a = log(n)/2 (Chen,
// Variyath and Abraham), which tempers the convex-hull boundary, and the
// result is divided by the sample's smoothing calibration factor. Both
// adjustments vanish as the sample grows.
double sample_neg2(double calib, Eigen::MatrixXd Z, const ELSolveOptions& opts) {
  const int n = static_cast<int>(Z.rows());
  const Eigen::RowVectorXd pseudo =
      (-0.5 * std::log(static_cast<double>(n))) * Z.colwise().mean();
  Z.conservativeResize(n + 1, Eigen::NoChange);
  Z.row(n) = pseudo;
  return neg2_log_el(Z, opts) / calib;
}

}  // namespace

double el_stat_beta(const StudyFit& fit, const Eigen::VectorXd& beta,
                    const ELSolveOptions& opts) {
  double total = 0.0;
  for (const auto& sf : fit.samples) {
    const double v = sample_neg2(sf.ctx.calib, sf.ctx.Z_of_beta(beta), opts);
    if (!std::isfinite(v)) return kInf;
    total += v;
  }
  return total;
}

double el_stat_gamma(const StudyFit& fit, const Eigen::VectorXd& gamma,
                     const ELSolveOptions& opts) {
  double total = 0.0;
  for (const auto& sf : fit.samples) {
    const double v = sample_neg2(sf.ctx.calib, sf.ctx.phi_of_gamma(gamma), opts);
    if (!std::isfinite(v)) return kInf;
    total += v;
  }
  return total;
}

Eigen::VectorXd one_step_beta(const StudyFit& fit) {
  std::vector<Eigen::VectorXd> est;
  std::vector<Eigen::MatrixXd> S, C;
  for (const auto& sf : fit.samples) {
    est.push_back(sf.ctx.beta_hat);
    S.push_back(S_beta(sf.ctx));
    C.push_back(sf.ctx.calib * moment_outer(sf.ctx.Z_of_beta(sf.ctx.beta_hat)));
  }
  return combine(est, S, C);
}

Eigen::VectorXd one_step_gamma(const StudyFit& fit) {
  std::vector<Eigen::VectorXd> est;
  std::vector<Eigen::MatrixXd> S, C;
  for (const auto& sf : fit.samples) {
    est.push_back(sf.ctx.gamma_hat);
    S.push_back(S_gamma(sf.ctx));
    C.push_back(sf.ctx.calib * moment_outer(sf.ctx.phi_of_gamma(sf.ctx.gamma_hat)));
  }
  return combine(est, S, C);
}

namespace {

// feasibility scan over candidate starts, then exact profile minimization;
// when no candidate (nor any segment between candidates) is feasible the
// samples' moment hulls share no common coefficient and the profiled
// statistic is infinite: report certain rejection
TestReport profile_report(const std::string& name, double df,
                          const std::function<double(const Eigen::VectorXd&)>& F,
                          const std::vector<Eigen::VectorXd>& cand,
                          const AnovaOptions& opts) {
  Eigen::VectorXd init;
  bool feasible = false;
  for (const auto& c : cand)
    if (std::isfinite(F(c))) {
      init = c;
      feasible = true;
      break;
    }
  for (std::size_t a = 0; !feasible && a < cand.size(); ++a)
    for (std::size_t b = a + 1; !feasible && b < cand.size(); ++b)
      for (int s = 1; s < 16; ++s) {
        const double w = s / 16.0;
        Eigen::VectorXd c = (1.0 - w) * cand[a] + w * cand[b];
        if (std::isfinite(F(c))) {
          init = c;
          feasible = true;
          break;
        }
      }

  TestReport rep;
  rep.test = name;
  rep.df = df;
  rep.null_dist = "chi-square";
  nlohmann::ordered_json meta;
  if (!feasible) {
    rep.statistic = kInf;
    rep.p_value = 0.0;
    meta["feasible"] = false;
  } else {
    const ProfileResult pr = profile_minimize(F, init, opts.profile);
    rep.statistic = pr.statistic;
    rep.p_value = std::isfinite(pr.statistic) ? chi2_sf(pr.statistic, rep.df) : 0.0;
    std::vector<double> mini(pr.minimizer.data(),
                             pr.minimizer.data() + pr.minimizer.size());
    meta["common_estimate"] = mini;
    meta["profile_converged"] = pr.converged;
    meta["profile_evaluations"] = pr.evaluations;
  }
  for (double a : opts.levels) rep.reject[a] = rep.p_value <= a;
  rep.meta = meta;
  return rep;
}

TestReport profile_anova(const StudyFit& fit, const AnovaOptions& opts, bool on_beta) {
  const int k = fit.k();
  if (k < 2) throw Error("InvalidModel", "ANOVA needs at least two treatments");
  const int dim = on_beta ? fit.samples[0].ctx.p : fit.samples[0].ctx.q;
  if (dim == 0) throw Error("InvalidModel", "tested coefficient block is empty");
  auto F = [&](const Eigen::VectorXd& par) {
    return on_beta ? el_stat_beta(fit, par, opts.el)
                   : el_stat_gamma(fit, par, opts.el);
  };
  // starts: one-step combination, the plain average, every per-sample estimate
  std::vector<Eigen::VectorXd> cand;
  cand.push_back(on_beta ? one_step_beta(fit) : one_step_gamma(fit));
  {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
    for (const auto& sf : fit.samples)
      mean += on_beta ? sf.ctx.beta_hat : sf.ctx.gamma_hat;
    cand.push_back(mean / static_cast<double>(k));
  }
  for (const auto& sf : fit.samples)
    cand.push_back(on_beta ? sf.ctx.beta_hat : sf.ctx.gamma_hat);
  return profile_report(on_beta ? "covariate-effect" : "interaction-equality",
                        static_cast<double>((k - 1) * dim), F, cand, opts);
}

}  // namespace

TestReport anova_beta_test(const StudyFit& fit, const AnovaOptions& opts) {
  return profile_anova(fit, opts, true);
}

TestReport anova_gamma_test(const StudyFit& fit, const AnovaOptions& opts) {
  return profile_anova(fit, opts, false);
}

TestReport interaction_presence_test(const StudyFit& fit, int label,
                                     const AnovaOptions& opts) {
  const SampleFit* target = nullptr;
  for (const auto& sf : fit.samples)
    if (sf.ctx.label == label) target = &sf;
  if (!target) throw Error("UnknownTreatment", "no treatment labelled " + std::to_string(label));
  const int q = target->ctx.q;
  if (q == 0) throw Error("InvalidModel", "model has no interaction terms");
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(q);
  const double stat =
      sample_neg2(target->ctx.calib, target->ctx.phi_of_gamma(zero), opts.el);
  TestReport rep;
  rep.test = "interaction-presence";
  rep.statistic = stat;
  rep.df = static_cast<double>(q);
  rep.null_dist = "chi-square";
  rep.p_value = std::isfinite(stat) ? chi2_sf(stat, rep.df) : 0.0;
  for (double a : opts.levels) rep.reject[a] = rep.p_value <= a;
  nlohmann::ordered_json meta;
  meta["treatment"] = label;
  std::vector<double> gh(target->ctx.gamma_hat.data(),
                         target->ctx.gamma_hat.data() + q);
  meta["gamma_hat"] = gh;
  rep.meta = meta;
  return rep;
}

TestReport parametric_anova_test(const StudyFit& fit, const CurveBasis& basis,
                                 const AnovaOptions& opts) {
  const int k = fit.k();
  if (k < 2) throw Error("InvalidModel", "ANOVA needs at least two treatments");
  if (basis.dim < 0 || (basis.dim > 0 && !basis.eval))
    throw Error("InvalidModel", "curve basis has no evaluator");
  const int p = fit.samples[0].ctx.p;
  const int d = p + basis.dim;
  if (d == 0) throw Error("InvalidModel", "tested coefficient block is empty");

  // per-subject affine blocks on the extended rows (x, basis(t)):
  // Z_i(theta) = z0[i] - Z1[i] theta with theta = (beta, eta)
  struct Blocks {
    std::vector<Eigen::VectorXd> z0;
    std::vector<Eigen::MatrixXd> Z1;
  };
  std::vector<Blocks> blocks(k);
  std::vector<Eigen::VectorXd> roots;
  Eigen::MatrixXd pooled_A = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd pooled_b = Eigen::VectorXd::Zero(d);
  for (int j = 0; j < k; ++j) {
    const EstimatingContext& ctx = fit.samples[j].ctx;
    Blocks& blk = blocks[j];
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(d, d);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(d);
    for (int i = 0; i < ctx.n; ++i) {
      Eigen::VectorXd z0 = Eigen::VectorXd::Zero(d);
      Eigen::MatrixXd Z1 = Eigen::MatrixXd::Zero(d, d);
      for (int v = ctx.start[i]; v < ctx.start[i + 1]; ++v) {
        Eigen::VectorXd a(d);
        if (p > 0) a.head(p) = ctx.X.row(v).transpose();
        if (basis.dim > 0) a.tail(basis.dim) = basis.eval(ctx.t[v]);
        z0.noalias() += ctx.c[v] * ctx.y[v] * a;
        Z1.noalias() += ctx.c[v] * a * a.transpose();
      }
      A += Z1;
      b += z0;
      blk.z0.push_back(std::move(z0));
      blk.Z1.push_back(std::move(Z1));
    }
    pooled_A += A;
    pooled_b += b;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 0)
      throw Error("SingularSystem", "extended moment matrix is singular");
    roots.push_back(ldlt.solve(b));
  }

  auto F = [&](const Eigen::VectorXd& theta) {
    double total = 0.0;
    for (const auto& blk : blocks) {
      const int n = static_cast<int>(blk.z0.size());
      Eigen::MatrixXd Z(n, d);
      for (int i = 0; i < n; ++i)
        Z.row(i) = (blk.z0[i] - blk.Z1[i] * theta).transpose();
      const double v = sample_neg2(1.0, std::move(Z), opts.el);
      if (!std::isfinite(v)) return kInf;
      total += v;
    }
    return total;
  };

  std::vector<Eigen::VectorXd> cand;
  {
    Eigen::LDLT<Eigen::MatrixXd> pooled(pooled_A);
    if (pooled.info() == Eigen::Success && pooled.vectorD().minCoeff() > 0)
      cand.push_back(pooled.solve(pooled_b));
  }
  {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
    for (const auto& r : roots) mean += r;
    cand.push_back(mean / static_cast<double>(k));
  }
  for (const auto& r : roots) cand.push_back(r);

  TestReport rep = profile_report("covariate-curve-effect",
                                  static_cast<double>((k - 1) * d), F, cand, opts);
  rep.meta["curve_dim"] = basis.dim;
  return rep;
}

double local_power_beta(const LocalPowerInput& input) {
  const int df = static_cast<int>(input.delta_beta.size());
  if (input.sigma_D.rows() != df || input.sigma_D.cols() != df)
    throw Error("SingularSigmaD", "Sigma_D dimension mismatch");
  Eigen::LDLT<Eigen::MatrixXd> ldlt(input.sigma_D);
  if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 0)
    throw Error("SingularSigmaD", "Sigma_D must be positive definite");
  const double gamma2 = input.delta_beta.dot(ldlt.solve(input.delta_beta));
  const double crit = chi2_quantile(1.0 - input.level, df);
  return noncentral_chi2_sf(crit, df, gamma2);
}

Eigen::MatrixXd estimate_sigma_D(const StudyFit& fit) {
  const int k = fit.k();
  if (k < 2) throw Error("InvalidModel", "Sigma_D needs at least two treatments");
  const int p = fit.samples[0].ctx.p;
  std::vector<Eigen::MatrixXd> A;  // S_j^{-1} C_j S_j^{-1} per sample
  for (const auto& sf : fit.samples) {
    const Eigen::MatrixXd S = S_beta(sf.ctx);
    const Eigen::MatrixXd C =
        sf.ctx.calib * moment_outer(sf.ctx.Z_of_beta(sf.ctx.beta_hat));
    Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
    if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 0)
      throw Error("SingularSystem", "covariate moment matrix is singular");
    A.push_back(ldlt.solve(ldlt.solve(C).transpose()));
  }
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero((k - 1) * p, (k - 1) * p);
  for (int a = 0; a < k - 1; ++a)
    for (int b = 0; b < k - 1; ++b) {
      out.block(a * p, b * p, p, p) = A[0];
      if (a == b) out.block(a * p, b * p, p, p) += A[a + 1];
    }
  return out;
}

}  // namespace elanova
