#include "elanova/bootstrap.hpp"

#include "elanova/kernel.hpp"
#include "elanova/parallel.hpp"
#include "elanova/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace elanova {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double wild_draw(RngStream& r, WildWeights w) {
  switch (w) {
    case WildWeights::Mammen: {
      // two-point law with mean zero and unit second moment
      static const double lo = -(std::sqrt(5.0) - 1.0) / 2.0;
      static const double hi = (std::sqrt(5.0) + 1.0) / 2.0;
      static const double p_lo = (std::sqrt(5.0) + 1.0) / (2.0 * std::sqrt(5.0));
      return r.uniform() < p_lo ? lo : hi;
    }
    case WildWeights::Rademacher:
      return r.uniform() < 0.5 ? -1.0 : 1.0;
    case WildWeights::Normal:
      return r.normal();
  }
  return 0.0;
}

// partial residuals of one sample in context order
Eigen::VectorXd partial_residuals(const EstimatingContext& ctx) {
  Eigen::VectorXd u = ctx.y;
  if (ctx.p > 0) u -= ctx.X * ctx.beta_hat;
  if (ctx.q > 0) u -= ctx.M * ctx.gamma_hat;
  return u;
}

std::vector<int> sorted_order(const EstimatingContext& ctx) {
  std::vector<int> ord(ctx.V());
  std::iota(ord.begin(), ord.end(), 0);
  std::sort(ord.begin(), ord.end(),
            [&](int a, int b) { return ctx.t[a] < ctx.t[b]; });
  return ord;
}

}  // namespace

WildWeights wild_weights_by_name(const std::string& name) {
  if (name == "mammen") return WildWeights::Mammen;
  if (name == "rademacher") return WildWeights::Rademacher;
  if (name == "normal") return WildWeights::Normal;
  throw Error("InvalidModel", "unknown wild weight family '" + name + "'");
}

std::string wild_weights_name(WildWeights w) {
  switch (w) {
    case WildWeights::Mammen:
      return "mammen";
    case WildWeights::Rademacher:
      return "rademacher";
    case WildWeights::Normal:
      return "normal";
  }
  return "?";
}

struct ResidualMoments::Impl {
  KernelSpec kern;
  double h = 0.0, b = 0.0;
  int d = 1;
  double s2_global = 1e-12;
  // time-sorted effective-observed visits
  std::vector<double> t, c, e2;
  struct Visit {
    double t, ehat, pi;
    int m;
  };
  std::vector<std::vector<Visit>> by_subject;

  double sigma2(double at) const {
    double D = 0.0, N = 0.0;
    auto lo = std::lower_bound(t.begin(), t.end(), at - h);
    auto hi = std::upper_bound(t.begin(), t.end(), at + h);
    for (auto it = lo; it != hi; ++it) {
      size_t v = it - t.begin();
      double kv = c[v] * kernel_eval(kern, (t[v] - at) / h);
      D += kv;
      N += kv * e2[v];
    }
    double s2 = D > 0.0 ? N / D : s2_global;
    return std::max(s2, 1e-12);
  }

  double rho(double s, double at) const {
    double num = 0.0, den = 0.0;
    for (const auto& visits : by_subject) {
      for (const auto& va : visits) {
        double ka = kernel_eval(kern, (va.t - s) / b);
        if (ka <= 0.0) continue;
        for (const auto& vb : visits) {
          if (&vb == &va) continue;
          double kb = kernel_eval(kern, (vb.t - at) / b);
          if (kb <= 0.0) continue;
          double pi_pair = std::abs(va.m - vb.m) > d
                               ? va.pi * vb.pi
                               : (va.m > vb.m ? va.pi : vb.pi);
          double w = ka * kb / std::max(pi_pair, 1e-12);
          num += w * va.ehat * vb.ehat;
          den += w;
        }
      }
    }
    if (den <= 0.0) return 0.0;
    return std::clamp(num / den, -1.0, 1.0);
  }
};

ResidualMoments::ResidualMoments(const StudyFit& fit, const TimeEffect& curves,
                                 int sample_idx, double corr_bw_mult) {
  const SampleFit& sf = fit.samples[sample_idx];
  const EstimatingContext& ctx = sf.ctx;
  const TreatmentSample& sample = *sf.sample;
  const int V = ctx.V();

  auto impl = std::make_shared<Impl>();
  impl->kern = fit.opts.kernel;
  impl->h = ctx.h;
  impl->b = corr_bw_mult * ctx.h;
  impl->d = fit.study->d;

  Eigen::VectorXd u = partial_residuals(ctx);
  Eigen::VectorXd gh = curves.g_hat_at_visits(sample_idx);
  std::vector<int> ord = sorted_order(ctx);
  impl->t.resize(V);
  impl->c.resize(V);
  impl->e2.resize(V);
  for (int r = 0; r < V; ++r) {
    int v = ord[r];
    double e = u[v] - gh[v];
    impl->t[r] = ctx.t[v];
    impl->c[r] = ctx.c[v];
    impl->e2[r] = e * e;
  }
  {
    double num = 0.0, den = 0.0;
    for (int r = 0; r < V; ++r) {
      num += impl->c[r] * impl->e2[r];
      den += impl->c[r];
    }
    if (den > 0.0) impl->s2_global = std::max(num / den, 1e-12);
  }

  impl->by_subject.resize(sample.subjects.size());
  std::vector<int> owner(V);
  for (int i = 0; i < ctx.n; ++i)
    for (int v = ctx.start[i]; v < ctx.start[i + 1]; ++v) owner[v] = i;
  // schedule index of each flattened visit, via per-subject cursors over the
  // effective-observed slots
  std::vector<std::vector<int>> mlist(sample.subjects.size());
  for (size_t i = 0; i < sample.subjects.size(); ++i)
    for (int m = 0; m < sample.schedule_len; ++m)
      if (sample.subjects[i].delta_eff[m]) mlist[i].push_back(m);
  std::vector<int> cursor(sample.subjects.size(), 0);
  for (int v = 0; v < V; ++v) {
    int i = owner[v];
    int m = mlist[i][cursor[i]++];
    double e = u[v] - gh[v];
    double sd = std::sqrt(impl->sigma2(ctx.t[v]));
    impl->by_subject[i].push_back({ctx.t[v], e / sd, sf.prop.pi[i][m], m});
  }
  impl_ = impl;
}

double ResidualMoments::sigma2(double t) const { return impl_->sigma2(t); }
double ResidualMoments::rho(double s, double t) const { return impl_->rho(s, t); }
double ResidualMoments::sigma2_global() const { return impl_->s2_global; }

SubjectCovariance subject_covariance(const Eigen::MatrixXd& raw, double eig_floor) {
  SubjectCovariance out;
  Eigen::MatrixXd sym = 0.5 * (raw + raw.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  Eigen::VectorXd ev = eig.eigenvalues();
  double top = std::max(ev.maxCoeff(), 0.0);
  double floor = eig_floor * std::max(top, 1e-300);
  for (int i = 0; i < ev.size(); ++i) ev[i] = std::max(ev[i], floor);
  out.C = eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
  out.C = 0.5 * (out.C + out.C.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(out.C);
  if (llt.info() == Eigen::Success) {
    out.L = llt.matrixL();
  } else {
    out.L = eig.eigenvectors() * ev.cwiseSqrt().asDiagonal();
  }
  return out;
}

std::vector<SubjectCovariance> build_subject_covariance(const StudyFit& fit,
                                                        const ResidualMoments& moments,
                                                        int sample_idx,
                                                        double eig_floor) {
  const TreatmentSample& sample = *fit.samples[sample_idx].sample;
  std::vector<SubjectCovariance> out;
  out.reserve(sample.subjects.size());
  for (const auto& subj : sample.subjects) {
    const int T = subj.T();
    Eigen::MatrixXd cov(T, T);
    for (int m = 0; m < T; ++m) cov(m, m) = moments.sigma2(subj.times[m]);
    for (int m = 0; m < T; ++m)
      for (int m2 = m + 1; m2 < T; ++m2) {
        double r = moments.rho(subj.times[m], subj.times[m2]);
        double v = r * std::sqrt(cov(m, m) * cov(m2, m2));
        cov(m, m2) = v;
        cov(m2, m) = v;
      }
    out.push_back(subject_covariance(cov, eig_floor));
  }
  return out;
}

std::vector<Eigen::MatrixXd> impute_missing_covariates(const StudyFit& fit,
                                                       int sample_idx) {
  const SampleFit& sf = fit.samples[sample_idx];
  const EstimatingContext& ctx = sf.ctx;
  const TreatmentSample& sample = *sf.sample;
  const int V = ctx.V();
  const int p = ctx.p;

  // time-sorted observed covariate values for the smoother
  std::vector<int> ord = sorted_order(ctx);
  std::vector<double> ts(V), cs(V);
  std::vector<std::vector<double>> cols(p, std::vector<double>(V));
  for (int r = 0; r < V; ++r) {
    int v = ord[r];
    ts[r] = ctx.t[v];
    cs[r] = ctx.c[v];
    for (int j = 0; j < p; ++j) cols[j][r] = ctx.X(v, j);
  }
  std::vector<double> fallback(std::max(p, 1), 0.0);
  for (int j = 0; j < p; ++j) {
    double num = 0.0, den = 0.0;
    for (int r = 0; r < V; ++r) {
      num += cs[r] * cols[j][r];
      den += cs[r];
    }
    fallback[j] = den > 0.0 ? num / den : 0.0;
  }
  auto smooth_at = [&](double at, double* out) {
    double D = 0.0;
    std::vector<double> N(p, 0.0);
    auto lo = std::lower_bound(ts.begin(), ts.end(), at - ctx.h);
    auto hi = std::upper_bound(ts.begin(), ts.end(), at + ctx.h);
    for (auto it = lo; it != hi; ++it) {
      size_t r = it - ts.begin();
      double kv = cs[r] * kernel_eval(fit.opts.kernel, (ts[r] - at) / ctx.h);
      if (kv <= 0.0) continue;
      D += kv;
      for (int j = 0; j < p; ++j) N[j] += kv * cols[j][r];
    }
    for (int j = 0; j < p; ++j) out[j] = D > 0.0 ? N[j] / D : fallback[j];
  };

  std::vector<Eigen::MatrixXd> out;
  out.reserve(sample.subjects.size());
  std::vector<double> row(std::max(p, 1), 0.0);
  for (const auto& subj : sample.subjects) {
    const int T = subj.T();
    Eigen::MatrixXd Xc(T, p);
    for (int m = 0; m < T; ++m) {
      if (subj.delta[m]) {
        for (int j = 0; j < p; ++j) Xc(m, j) = subj.X(m, j);
      } else {
        smooth_at(subj.times[m], row.data());
        for (int j = 0; j < p; ++j) Xc(m, j) = row[j];
      }
    }
    out.push_back(std::move(Xc));
  }
  return out;
}

BootstrapResult wild_bootstrap_time_test(const Study& study, const FitOptions& fit_opts,
                                         const BootstrapOptions& opts) {
  if (opts.B < 1) throw Error("InvalidModel", "bootstrap needs B >= 1");
  StudyFit fit0 = fit_study(study, fit_opts);
  const int k = fit0.k();

  FitOptions fixed = fit_opts;
  // resamples feed the curve statistic only; skip the covariate-test
  // calibration work in each refit
  fixed.covariate_calibration = false;
  fixed.bandwidths.clear();
  fixed.propensity.clear();
  for (const auto& sf : fit0.samples) {
    fixed.bandwidths.push_back(sf.h);
    fixed.propensity.push_back(sf.prop.spec_name);
  }

  TimeEffect te0(fit0, opts.stat);
  TimeEffectResult obs = te0.integrated_statistic();

  BootstrapResult result;
  result.Tn = obs.Tn;
  result.bandwidths = fixed.bandwidths;
  result.propensity = fixed.propensity;

  // per-subject resampling ingredients
  struct SubjectPlan {
    std::vector<double> mean;    // full-schedule conditional mean under the null
    Eigen::MatrixXd L;           // covariance factor
    std::vector<double> p_miss;  // per-visit propensity for the resampled pattern
    Eigen::MatrixXd Xc;          // completed covariates
  };
  std::vector<std::vector<SubjectPlan>> plans(k);
  for (int j = 0; j < k; ++j) {
    const SampleFit& sf = fit0.samples[j];
    const EstimatingContext& ctx = sf.ctx;
    const TreatmentSample& sample = *sf.sample;
    const int T = sample.schedule_len;

    ResidualMoments moments(fit0, te0, j, opts.corr_bw_mult);
    std::vector<SubjectCovariance> covs =
        build_subject_covariance(fit0, moments, j, opts.eig_floor);
    std::vector<Eigen::MatrixXd> Xc = impute_missing_covariates(fit0, j);

    double fallback_mean = 0.0;
    {
      Eigen::VectorXd u = partial_residuals(ctx);
      if (u.size() > 0) fallback_mean = u.mean();
    }

    plans[j].resize(sample.subjects.size());
    std::vector<double> mrow(std::max(ctx.q, 1), 0.0);
    for (size_t i = 0; i < sample.subjects.size(); ++i) {
      const SubjectTrajectory& subj = sample.subjects[i];
      SubjectPlan& plan = plans[j][i];
      plan.Xc = Xc[i];
      plan.L = covs[i].L;
      plan.mean.resize(T);
      plan.p_miss.assign(T, 1.0);
      for (int m = 0; m < T; ++m) {
        double tm = subj.times[m];
        double mean = 0.0;
        for (int pcol = 0; pcol < ctx.p; ++pcol)
          mean += plan.Xc(m, pcol) * ctx.beta_hat[pcol];
        if (ctx.q > 0) {
          study.interaction(plan.Xc.row(m).data(), ctx.p, tm, mrow.data());
          for (int qcol = 0; qcol < ctx.q; ++qcol)
            mean += mrow[qcol] * ctx.gamma_hat[qcol];
        }
        // the first treatment's curve is the common curve under the null
        double g1 = te0.g_hat(0, tm);
        if (!std::isfinite(g1)) g1 = te0.g_hat(j, tm);
        if (!std::isfinite(g1)) g1 = fallback_mean;
        plan.mean[m] = mean + g1;
      }
      for (int m = 1; m < T; ++m) {
        double pv = sf.prop.p_visit[i][m];
        plan.p_miss[m] = std::isfinite(pv) ? pv : 1.0;
      }
    }
  }

  // global subject index for per-unit RNG streams
  std::vector<int> unit_base(k, 0);
  for (int j = 1; j < k; ++j)
    unit_base[j] = unit_base[j - 1] + static_cast<int>(plans[j - 1].size());

  std::vector<double> slots(opts.B, kNaN);
  std::vector<std::uint8_t> done(opts.B, 0);
  parallel_for(opts.B, opts.threads, [&](int bidx) {
    Study bs;
    bs.p = study.p;
    bs.q = study.q;
    bs.d = study.d;
    bs.interaction = study.interaction;
    bs.interaction_name = study.interaction_name;
    bs.time_offset = study.time_offset;
    bs.time_scale = study.time_scale;
    bs.samples.resize(k);
    for (int j = 0; j < k; ++j) {
      const TreatmentSample& src = *fit0.samples[j].sample;
      TreatmentSample& dst = bs.samples[j];
      dst.label = src.label;
      dst.schedule_len = src.schedule_len;
      dst.subjects.resize(src.subjects.size());
      for (size_t i = 0; i < src.subjects.size(); ++i) {
        const SubjectTrajectory& ssub = src.subjects[i];
        const SubjectPlan& plan = plans[j][i];
        SubjectTrajectory& dsub = dst.subjects[i];
        const int T = src.schedule_len;
        std::uint64_t unit = static_cast<std::uint64_t>(unit_base[j] + i);
        RngStream rw(opts.seed, rng_stage::wild, bidx, unit);
        RngStream rm(opts.seed, rng_stage::boot_missing, bidx, unit);
        Eigen::VectorXd e(T);
        for (int m = 0; m < T; ++m) e[m] = wild_draw(rw, opts.wild);
        Eigen::VectorXd noise = plan.L * e;
        dsub.id = ssub.id;
        dsub.times = ssub.times;
        dsub.delta.assign(T, 1);
        for (int m = 1; m < T; ++m)
          dsub.delta[m] = rm.bernoulli(plan.p_miss[m]) ? 1 : 0;
        dsub.X.resize(T, std::max(bs.p, 0));
        dsub.M.resize(T, std::max(bs.q, 0));
        dsub.y.resize(T);
        for (int m = 0; m < T; ++m) {
          if (dsub.delta[m]) {
            for (int pcol = 0; pcol < bs.p; ++pcol) dsub.X(m, pcol) = plan.Xc(m, pcol);
            dsub.y[m] = plan.mean[m] + noise[m];
          } else {
            for (int pcol = 0; pcol < bs.p; ++pcol) dsub.X(m, pcol) = kNaN;
            dsub.y[m] = kNaN;
          }
        }
      }
    }
    try {
      preprocess_missingness(bs, bs.d);
      refresh_interactions(bs);
      StudyFit bf = fit_study(bs, fixed);
      TimeEffect te(bf, opts.stat);
      slots[bidx] = te.integrated_statistic().Tn;
      done[bidx] = 1;
    } catch (const Error&) {
      done[bidx] = 0;
    }
  });

  result.attempted = opts.B;
  for (int bidx = 0; bidx < opts.B; ++bidx) {
    if (done[bidx]) {
      result.Tn_boot.push_back(slots[bidx]);
    } else {
      ++result.failed;
    }
  }
  if (result.failed > opts.max_fail_rate * opts.B)
    throw Error("BootstrapUnstable",
                "more than " + std::to_string(static_cast<int>(100 * opts.max_fail_rate)) +
                    "% of bootstrap replicates failed to refit");
  int ge = 0;
  for (double v : result.Tn_boot)
    if (v >= result.Tn) ++ge;
  result.p_value = (1.0 + ge) / (static_cast<double>(result.Tn_boot.size()) + 1.0);
  return result;
}

TestReport bootstrap_g_test(const Study& study, const FitOptions& fit_opts,
                            const BootstrapOptions& opts, const GTestOptions& g) {
  BootstrapResult br = wild_bootstrap_time_test(study, fit_opts, opts);
  TestReport rep;
  rep.test = "time-effect-bootstrap";
  rep.statistic = br.Tn;
  rep.df = 0.0;
  rep.null_dist = "bootstrap";
  rep.p_value = br.p_value;
  for (double a : g.levels) rep.reject[a] = rep.p_value <= a;
  rep.meta["B"] = br.attempted;
  rep.meta["failed"] = br.failed;
  rep.meta["wild"] = wild_weights_name(opts.wild);
  rep.meta["seed"] = opts.seed;
  rep.meta["bandwidths"] = br.bandwidths;
  rep.meta["propensity"] = br.propensity;
  std::vector<double> sorted = br.Tn_boot;
  std::sort(sorted.begin(), sorted.end());
  auto quant = [&](double q) {
    if (sorted.empty()) return kNaN;
    double pos = q * (sorted.size() - 1);
    size_t lo = static_cast<size_t>(pos);
    size_t hi = std::min(lo + 1, sorted.size() - 1);
    double f = pos - lo;
    return (1.0 - f) * sorted[lo] + f * sorted[hi];
  };
  rep.meta["boot_q90"] = quant(0.90);
  rep.meta["boot_q95"] = quant(0.95);
  rep.meta["boot_q99"] = quant(0.99);
  return rep;
}

}  // namespace elanova
