#include "elanova/fit.hpp"

#include "elanova/bandwidth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace elanova {

Eigen::VectorXd EstimatingContext::gamma_tilde(const Eigen::VectorXd& beta) const {
  if (q == 0) return Eigen::VectorXd();
  return gA - gB * beta;
}

Eigen::VectorXd EstimatingContext::beta_tilde(const Eigen::VectorXd& gamma) const {
  if (q == 0) return bA;
  return bA - bB * gamma;
}

Eigen::MatrixXd EstimatingContext::Z_of_beta(const Eigen::VectorXd& beta) const {
  Eigen::MatrixXd Z(n, p);
  for (int i = 0; i < n; ++i) Z.row(i) = (z0[i] - Z1[i] * beta).transpose();
  return Z;
}

Eigen::MatrixXd EstimatingContext::phi_of_gamma(const Eigen::VectorXd& gamma) const {
  Eigen::MatrixXd Ph(n, q);
  for (int i = 0; i < n; ++i) Ph.row(i) = (f0[i] - F1[i] * gamma).transpose();
  return Ph;
}

namespace {

// Ratio of Var(sum of subject moments) to the summed subject-level second
// moment under a working model where visits share one kernel smoother R = I-S
// and the errors have a two-parameter within-subject covariance (variance
// sd2, common within-subject covariance so). Both moments involve the same
// instrument scale, which cancels, leaving weighted sums of entrywise
// products of M1 = R Sigma R' and M2 = R R'. M2 vanishes beyond twice the
// kernel support, so everything is banded in the time-sorted order.
double smoothing_calibration(const std::vector<double>& ts, const std::vector<double>& cs,
                             const std::vector<int>& sid, const std::vector<double>& rs,
                             int n, double h) {
  const int V = static_cast<int>(ts.size());

  double sw = 0.0, swr2 = 0.0;
  for (int j = 0; j < V; ++j) {
    sw += cs[j];
    swr2 += cs[j] * rs[j] * rs[j];
  }
  if (!(sw > 0.0) || !(swr2 > 0.0)) return 1.0;
  const double sd2 = swr2 / sw;
  double cw = 0.0, cwr = 0.0;
  {
    std::vector<double> Sr(n, 0.0), Sc(n, 0.0), Sr2(n, 0.0), Sc2(n, 0.0);
    for (int j = 0; j < V; ++j) {
      const int s = sid[j];
      Sr[s] += cs[j] * rs[j];
      Sc[s] += cs[j];
      Sr2[s] += cs[j] * cs[j] * rs[j] * rs[j];
      Sc2[s] += cs[j] * cs[j];
    }
    for (int s = 0; s < n; ++s) {
      cwr += Sr[s] * Sr[s] - Sr2[s];
      cw += Sc[s] * Sc[s] - Sc2[s];
    }
  }
  double so = cw > 0.0 ? cwr / cw : 0.0;
  so = std::min(std::max(so, 0.0), 0.99 * sd2);

  // banded smoother rows: S_jk = w_k / D_j over |t_k - t_j| <= h
  std::vector<int> l1(V), n1(V);
  std::vector<std::vector<double>> S(V);
  for (int j = 0; j < V; ++j) {
    const auto lo = std::lower_bound(ts.begin(), ts.end(), ts[j] - h) - ts.begin();
    const auto hi = std::upper_bound(ts.begin(), ts.end(), ts[j] + h) - ts.begin();
    l1[j] = static_cast<int>(lo);
    n1[j] = static_cast<int>(hi - lo);
    S[j].resize(n1[j]);
    double D = 0.0;
    for (int k = 0; k < n1[j]; ++k) {
      const double z = (ts[l1[j] + k] - ts[j]) / h;
      const double w = std::max(0.0, 1.0 - z * z) * cs[l1[j] + k];
      S[j][k] = w;
      D += w;
    }
    if (!(D > 0.0)) return 1.0;
    for (double& v : S[j]) v /= D;
  }
  auto S_at = [&](int j, int k) {
    const int off = k - l1[j];
    return (off >= 0 && off < n1[j]) ? S[j][off] : 0.0;
  };

  // M2 = (I-S)(I-S)' on the doubled band
  std::vector<int> l2(V), n2(V);
  std::vector<std::vector<double>> M2(V);
  for (int j = 0; j < V; ++j) {
    const auto lo = std::lower_bound(ts.begin(), ts.end(), ts[j] - 2.0 * h) - ts.begin();
    const auto hi = std::upper_bound(ts.begin(), ts.end(), ts[j] + 2.0 * h) - ts.begin();
    l2[j] = static_cast<int>(lo);
    n2[j] = static_cast<int>(hi - lo);
    M2[j].assign(n2[j], 0.0);
  }
  for (int j = 0; j < V; ++j) {
    for (int k = j; k < l2[j] + n2[j]; ++k) {
      const int a = std::max(l1[j], l1[k]);
      const int b = std::min(l1[j] + n1[j], l1[k] + n1[k]);
      double dot = 0.0;
      for (int w = a; w < b; ++w) dot += S[j][w - l1[j]] * S[k][w - l1[k]];
      const double val = (j == k ? 1.0 : 0.0) - S_at(j, k) - S_at(k, j) + dot;
      M2[j][k - l2[j]] = val;
      if (k != j) M2[k][j - l2[k]] = val;
    }
  }

  // columns of R applied to each subject's visit indicator
  std::vector<Eigen::VectorXd> R1(n, Eigen::VectorXd::Zero(V));
  for (int j = 0; j < V; ++j) {
    R1[sid[j]][j] += 1.0;
    for (int k = 0; k < n1[j]; ++k) R1[sid[l1[j] + k]][j] -= S[j][k];
  }

  // num = sum over all visit pairs of c c M1 M2, with
  // M1 = (sd2 - so) M2 + so * sum_s (R 1_s)(R 1_s)'
  double S1 = 0.0;
  for (int j = 0; j < V; ++j)
    for (int k = 0; k < n2[j]; ++k)
      S1 += cs[j] * cs[l2[j] + k] * M2[j][k] * M2[j][k];
  double Q = 0.0;
  for (int s = 0; s < n; ++s) {
    const Eigen::VectorXd& r1 = R1[s];
    for (int j = 0; j < V; ++j) {
      const double wj = cs[j] * r1[j];
      if (wj == 0.0) continue;
      double acc = 0.0;
      for (int k = 0; k < n2[j]; ++k) acc += M2[j][k] * cs[l2[j] + k] * r1[l2[j] + k];
      Q += wj * acc;
    }
  }
  const double num = (sd2 - so) * S1 + so * Q;

  // den = the same sum restricted to within-subject pairs
  std::vector<std::vector<int>> pos(n);
  for (int j = 0; j < V; ++j) pos[sid[j]].push_back(j);
  double den = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int a : pos[i])
      for (int b : pos[i]) {
        const int off = b - l2[a];
        if (off < 0 || off >= n2[a]) continue;
        const double m2 = M2[a][off];
        if (m2 == 0.0) continue;
        double g = 0.0;
        for (int s = 0; s < n; ++s) g += R1[s][a] * R1[s][b];
        den += cs[a] * cs[b] * ((sd2 - so) * m2 + so * g) * m2;
      }
  }
  if (!(den > 0.0)) return 1.0;
  const double ratio = num / den;
  if (!std::isfinite(ratio)) return 1.0;
  return std::min(std::max(ratio, 1.0), 1.5);
}

}  // namespace

EstimatingContext build_context(const TreatmentSample& sample, const PropensityFit& prop,
                                double h, int p, int q, const KernelSpec& kernel,
                                bool xi_zero, bool calibrate) {
  if (!(h > 0)) throw Error("InvalidBandwidth", "bandwidth must be positive");
  EstimatingContext ctx;
  ctx.label = sample.label;
  ctx.p = p;
  ctx.q = q;
  ctx.n = sample.n();
  ctx.h = h;
  ctx.start.assign(1, 0);
  for (int i = 0; i < sample.n(); ++i) {
    const auto& subj = sample.subjects[i];
    if (subj.delta_eff.empty())
      throw Error("NotPreprocessed", "preprocess_missingness must run before fitting");
    for (int m = 0; m < subj.T(); ++m)
      if (subj.delta_eff[m]) ctx.t.push_back(subj.times[m]);
    ctx.start.push_back(static_cast<int>(ctx.t.size()));
  }
  const int V = ctx.V();
  ctx.c.resize(V);
  ctx.X.resize(V, p);
  ctx.M.resize(V, q);
  ctx.y.resize(V);
  {
    int v = 0;
    for (int i = 0; i < sample.n(); ++i) {
      const auto& subj = sample.subjects[i];
      for (int m = 0; m < subj.T(); ++m) {
        if (!subj.delta_eff[m]) continue;
        ctx.c[v] = 1.0 / prop.pi[i][m];
        ctx.X.row(v) = subj.X.row(m);
        if (q > 0) ctx.M.row(v) = subj.M.row(m);
        ctx.y(v) = subj.y(m);
        ++v;
      }
    }
  }

  // kernel centering at every visit; window located through a time-sorted index
  ctx.Xc.resize(V, p);
  ctx.Mc.resize(V, q);
  ctx.yc.resize(V);
  std::vector<int> ord(V);
  std::iota(ord.begin(), ord.end(), 0);
  std::sort(ord.begin(), ord.end(),
            [&ctx](int a, int b) { return ctx.t[a] < ctx.t[b]; });
  std::vector<double> ts(V);
  for (int j = 0; j < V; ++j) ts[j] = ctx.t[ord[j]];
  (void)kernel;  // Epanechnikov weight written inline below
  Eigen::VectorXd numX(p), numM(q);
  for (int v = 0; v < V; ++v) {
    const double tv = ctx.t[v];
    const auto lo = std::lower_bound(ts.begin(), ts.end(), tv - h) - ts.begin();
    const auto hi = std::upper_bound(ts.begin(), ts.end(), tv + h) - ts.begin();
    double D = 0.0, numY = 0.0;
    numX.setZero();
    numM.setZero();
    for (auto j = lo; j < hi; ++j) {
      const int u = ord[j];
      const double z = (ctx.t[u] - tv) / h;
      const double w = (1.0 - z * z) * ctx.c[u];
      if (w <= 0.0) continue;
      D += w;
      numY += w * ctx.y(u);
      numX.noalias() += w * ctx.X.row(u).transpose();
      if (q > 0) numM.noalias() += w * ctx.M.row(u).transpose();
    }
    // the target visit itself is always in-window, so D > 0
    ctx.Xc.row(v) = ctx.X.row(v) - numX.transpose() / D;
    if (q > 0) ctx.Mc.row(v) = ctx.M.row(v) - numM.transpose() / D;
    ctx.yc(v) = ctx.y(v) - numY / D;
  }

  // stacked IPW least squares for (beta, gamma)
  const int dim = p + q;
  if (xi_zero) {
    ctx.beta_hat = Eigen::VectorXd::Zero(p);
    ctx.gamma_hat = Eigen::VectorXd::Zero(q);
  } else {
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(dim);
    Eigen::VectorXd row(dim);
    for (int v = 0; v < V; ++v) {
      row.head(p) = ctx.Xc.row(v).transpose();
      if (q > 0) row.tail(q) = ctx.Mc.row(v).transpose();
      A.noalias() += ctx.c[v] * row * row.transpose();
      b.noalias() += ctx.c[v] * ctx.yc(v) * row;
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    if (ldlt.info() != Eigen::Success ||
        ldlt.vectorD().minCoeff() < 1e-10 * std::max(1.0, A.trace() / dim))
      throw Error("SingularSystem", "centered design moment is singular");
    const Eigen::VectorXd xi = ldlt.solve(b);
    ctx.beta_hat = xi.head(p);
    ctx.gamma_hat = xi.tail(q);
  }

  // affine blocks for the profile moment functions
  if (q > 0) {
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(q, q);
    Eigen::VectorXd ry = Eigen::VectorXd::Zero(q);
    Eigen::MatrixXd rX = Eigen::MatrixXd::Zero(q, p);
    for (int v = 0; v < V; ++v) {
      const Eigen::VectorXd mv = ctx.Mc.row(v).transpose();
      G.noalias() += ctx.c[v] * mv * mv.transpose();
      ry.noalias() += ctx.c[v] * ctx.yc(v) * mv;
      rX.noalias() += ctx.c[v] * mv * ctx.Xc.row(v);
    }
    Eigen::LDLT<Eigen::MatrixXd> gl(G);
    if (gl.info() != Eigen::Success ||
        gl.vectorD().minCoeff() < 1e-10 * std::max(1.0, G.trace() / q))
      throw Error("SingularSystem", "interaction moment matrix is singular");
    ctx.gA = gl.solve(ry);
    ctx.gB = gl.solve(rX);
  } else {
    ctx.gA.resize(0);
    ctx.gB.resize(0, p);
  }
  {
    Eigen::MatrixXd Gx = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd ry = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd rM = Eigen::MatrixXd::Zero(p, q);
    for (int v = 0; v < V; ++v) {
      const Eigen::VectorXd xv = ctx.Xc.row(v).transpose();
      Gx.noalias() += ctx.c[v] * xv * xv.transpose();
      ry.noalias() += ctx.c[v] * ctx.yc(v) * xv;
      if (q > 0) rM.noalias() += ctx.c[v] * xv * ctx.Mc.row(v);
    }
    Eigen::LDLT<Eigen::MatrixXd> xl(Gx);
    if (xl.info() != Eigen::Success ||
        xl.vectorD().minCoeff() < 1e-10 * std::max(1.0, Gx.trace() / p))
      throw Error("SingularSystem", "covariate moment matrix is singular");
    ctx.bA = xl.solve(ry);
    ctx.bB = q > 0 ? Eigen::MatrixXd(xl.solve(rM)) : Eigen::MatrixXd(p, 0);
  }
  // The leading factor of each subject moment is residualized against the
  // other covariate block (x* = x - Cxm m, m* = m - Cmx x). The residualized
  // terms sum to zero at the profiled nuisance, so subject sums, estimating
  // roots and profile paths are untouched; what changes is the subject-level
  // spread, which now matches the sampling variance of the profiled moment.
  // Without this the EL internal variance overstates Var(ΣZ_i) whenever the
  // two covariate blocks are correlated after centering, deflating the
  // statistic below its chi-square limit.
  Eigen::MatrixXd Cxm(p, q), Cmx(q, p);
  if (q > 0) {
    Eigen::MatrixXd Sxm = Eigen::MatrixXd::Zero(p, q);
    Eigen::MatrixXd Smm = Eigen::MatrixXd::Zero(q, q);
    Eigen::MatrixXd Sxx = Eigen::MatrixXd::Zero(p, p);
    for (int v = 0; v < V; ++v) {
      const Eigen::VectorXd xv = ctx.Xc.row(v).transpose();
      const Eigen::VectorXd mv = ctx.Mc.row(v).transpose();
      Sxm.noalias() += ctx.c[v] * xv * mv.transpose();
      Smm.noalias() += ctx.c[v] * mv * mv.transpose();
      Sxx.noalias() += ctx.c[v] * xv * xv.transpose();
    }
    Cxm = Eigen::LDLT<Eigen::MatrixXd>(Smm).solve(Sxm.transpose()).transpose();
    Cmx = Eigen::LDLT<Eigen::MatrixXd>(Sxx).solve(Sxm).transpose();
  }
  ctx.z0.resize(ctx.n);
  ctx.Z1.resize(ctx.n);
  ctx.f0.resize(ctx.n);
  ctx.F1.resize(ctx.n);
  for (int i = 0; i < ctx.n; ++i) {
    Eigen::VectorXd z0 = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd Z1 = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd f0 = Eigen::VectorXd::Zero(q);
    Eigen::MatrixXd F1 = Eigen::MatrixXd::Zero(q, q);
    for (int v = ctx.start[i]; v < ctx.start[i + 1]; ++v) {
      const Eigen::VectorXd xv = ctx.Xc.row(v).transpose();
      const double cv = ctx.c[v];
      if (q > 0) {
        const Eigen::VectorXd mv = ctx.Mc.row(v).transpose();
        const Eigen::VectorXd xs = xv - Cxm * mv;
        const Eigen::VectorXd ms = mv - Cmx * xv;
        z0.noalias() += cv * (ctx.yc(v) - mv.dot(ctx.gA)) * xs;
        Z1.noalias() += cv * xs * (xv.transpose() - mv.transpose() * ctx.gB);
        f0.noalias() += cv * (ctx.yc(v) - xv.dot(ctx.bA)) * ms;
        F1.noalias() += cv * ms * (mv.transpose() - xv.transpose() * ctx.bB);
      } else {
        z0.noalias() += cv * ctx.yc(v) * xv;
        Z1.noalias() += cv * xv * xv.transpose();
      }
    }
    ctx.z0[i] = std::move(z0);
    ctx.Z1[i] = std::move(Z1);
    ctx.f0[i] = std::move(f0);
    ctx.F1[i] = std::move(F1);
  }

  if (calibrate && dim > 0 && ctx.n > 1) {
    std::vector<int> sv(V);
    for (int i = 0; i < ctx.n; ++i)
      for (int v = ctx.start[i]; v < ctx.start[i + 1]; ++v) sv[v] = i;
    std::vector<double> cs(V), rs(V);
    std::vector<int> sid(V);
    for (int j = 0; j < V; ++j) {
      const int v = ord[j];
      cs[j] = ctx.c[v];
      sid[j] = sv[v];
      double r = ctx.yc(v) - ctx.Xc.row(v).dot(ctx.beta_hat);
      if (q > 0) r -= ctx.Mc.row(v).dot(ctx.gamma_hat);
      rs[j] = r;
    }
    ctx.calib = smoothing_calibration(ts, cs, sid, rs, ctx.n, h);
  }
  return ctx;
}

StudyFit fit_study(const Study& study, FitOptions opts) {
  if (!study.preprocessed)
    throw Error("NotPreprocessed", "call preprocess_missingness before fitting");
  const int k = study.k();
  if (k == 0) throw Error("EmptyStudy", "no treatment samples");
  if (opts.propensity.empty()) opts.propensity = {"auto"};
  if (opts.propensity.size() == 1)
    opts.propensity.assign(static_cast<std::size_t>(k), opts.propensity[0]);
  if (static_cast<int>(opts.propensity.size()) != k)
    throw Error("InvalidModel", "propensity spec count must be 1 or k");
  if (opts.bandwidths.size() == 1)
    opts.bandwidths.assign(static_cast<std::size_t>(k), opts.bandwidths[0]);
  if (!opts.bandwidths.empty() && static_cast<int>(opts.bandwidths.size()) != k)
    throw Error("InvalidBandwidth", "bandwidth count must be 1 or k");

  StudyFit fit;
  fit.study = &study;
  fit.opts = opts;
  for (int j = 0; j < k; ++j) {
    const auto& sample = study.samples[j];
    SampleFit sf;
    sf.sample = &sample;
    std::string spec_name = opts.propensity[j];
    if (spec_name == "auto") {
      bool any_missing = false;
      for (const auto& subj : sample.subjects)
        for (auto dv : subj.delta)
          if (!dv) any_missing = true;
      spec_name = any_missing ? "lag1-x" : "none";
    }
    const PropensitySpec spec = PropensitySpec::by_name(spec_name, study.p);
    sf.prop = spec.dim == 0 ? unit_propensity(sample)
                            : fit_propensity(sample, spec, study.d, opts.prop_opts);
    if (opts.bandwidths.empty()) {
      CVOptions cv;
      cv.grid = opts.bw_grid;
      cv.kernel = opts.kernel;
      cv.use_covariates = !opts.xi_zero;
      sf.h = cv_bandwidth(sample, sf.prop, cv).h;
    } else {
      sf.h = opts.bandwidths[static_cast<std::size_t>(j)];
    }
    sf.ctx = build_context(sample, sf.prop, sf.h, study.p, study.q, opts.kernel,
                           opts.xi_zero, opts.covariate_calibration);
    fit.samples.push_back(std::move(sf));
  }
  return fit;
}

}  // namespace elanova
