#pragma once
// Nonparametric time-effect ANOVA. Builds per-treatment curve state from a
// fitted study: plug-in and bias-corrected curve estimates, the local EL
// ratio profiled over the common curve value (the subject moment R_ji is
// affine in g, so each sample contributes an exact feasible interval given by
// the range of its subjects' smoothed residual ratios), the weighted
// integrated statistic, its asymptotic normal calibration, and the
// cumulative-difference comparator test.

#include "elanova/fit.hpp"
#include "elanova/report.hpp"

#include <Eigen/Dense>

#include <memory>
#include <vector>

namespace elanova {

struct WeightFunction {
  enum class Kind { Uniform, PooledKDE, Table };
  Kind kind = Kind::Uniform;
  std::vector<double> table_t, table_w;  // piecewise-linear user weight

  static WeightFunction uniform() { return {}; }
  static WeightFunction pooled_kde() { return {Kind::PooledKDE, {}, {}}; }
};

struct IntegratedStatConfig {
  int grid_size = 101;
  WeightFunction weight;
  bool restrict_to_valid = true;
  double bracket_mult = 3.0;  // curve-range inflation for the inner search
};

struct LocalRatio {
  double value = 0.0;  // +inf when no common curve value is feasible
  double g_star = 0.0;
  bool feasible = false;
};

struct TimeEffectResult {
  double Tn = 0.0;
  std::vector<double> grid;
  std::vector<std::uint8_t> valid;
  std::vector<double> Ln;      // local ratio at valid points (NaN elsewhere)
  std::vector<double> weight;  // normalized over the valid region
};

struct Sigma0Estimate {
  double sigma0_sq = 0.0;
  double h_ref = 0.0;  // common-h convention (geometric mean); h^(1/2)*sigma0 is invariant
  double K2_0 = 0.0;
  std::vector<double> sigma2_eps;  // per treatment
  std::vector<double> a, b, rho;   // per treatment constants
};

class TimeEffect {
 public:
  TimeEffect(const StudyFit& fit, const IntegratedStatConfig& cfg);
  ~TimeEffect();
  TimeEffect(TimeEffect&&) noexcept;

  const std::vector<double>& grid() const;
  const std::vector<std::uint8_t>& valid() const;
  // curve values at an arbitrary time; NaN when the kernel window is empty
  double g_tilde(int sample_idx, double t) const;
  double g_hat(int sample_idx, double t) const;
  // bias-corrected curve at a subject's visit times (used by residual fits)
  Eigen::VectorXd g_hat_at_visits(int sample_idx) const;
  LocalRatio local_el_ratio(double t) const;
  TimeEffectResult integrated_statistic() const;
  Sigma0Estimate estimate_sigma0() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct GTestOptions {
  std::vector<double> levels{0.01, 0.05, 0.10};
};

// one-sided normal calibration from the first-order limit of the integrated
// statistic (the curvature constant of the drift is not estimated; the
// bootstrap test is the recommended calibration)
TestReport asymptotic_g_test(const StudyFit& fit, const IntegratedStatConfig& cfg,
                             const GTestOptions& opts = {});

// two-treatment comparator: cumulative curve difference T(z) with plug-in
// variance, two-sided normal
TestReport cumulative_difference_test(const StudyFit& fit, int label1, int label2,
                                      double trim = 0.0, const GTestOptions& opts = {});

// conventional name of the comparator (Scheike-Zhang cumulative test); the
// trim argument is the lower integration endpoint a
inline TestReport scheike_zhang_test(const StudyFit& fit, int label1, int label2,
                                     double a = 0.0, const GTestOptions& opts = {}) {
  return cumulative_difference_test(fit, label1, label2, a, opts);
}

}  // namespace elanova
