#pragma once
// Wild bootstrap calibration of the integrated curve statistic. Resamples are
// generated under the common-curve null: responses are rebuilt from the
// fitted regression plus the first treatment's curve and correlated wild
// noise (per-subject covariance factor from smoothed residual moments), the
// missingness pattern is regenerated from the fitted visit propensities, and
// the whole estimation pipeline is rerun on each resample with the original
// bandwidths and propensity model.

#include "elanova/fit.hpp"
#include "elanova/report.hpp"
#include "elanova/time_effect.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace elanova {

enum class WildWeights { Mammen, Rademacher, Normal };

WildWeights wild_weights_by_name(const std::string& name);
std::string wild_weights_name(WildWeights w);

struct BootstrapOptions {
  int B = 500;
  WildWeights wild = WildWeights::Mammen;
  std::uint64_t seed = 1;
  int threads = 0;            // 0 resolves to hardware concurrency
  double corr_bw_mult = 2.0;  // pair-smoothing bandwidth, multiple of h_j
  double eig_floor = 1e-10;   // relative eigenvalue clip for subject covariances
  double max_fail_rate = 0.10;
  IntegratedStatConfig stat;
};

struct BootstrapResult {
  double Tn = 0.0;
  std::vector<double> Tn_boot;  // completed replicates only
  int attempted = 0;
  int failed = 0;
  double p_value = 1.0;
  std::vector<double> bandwidths;
  std::vector<std::string> propensity;
};

// pointwise variance and pair correlation of the regression errors of one
// fitted treatment, smoothed under the visit propensities; the pair weight
// respects the lag window (overlapping visits share one cumulative propensity)
class ResidualMoments {
 public:
  ResidualMoments(const StudyFit& fit, const TimeEffect& curves, int sample_idx,
                  double corr_bw_mult = 2.0);
  double sigma2(double t) const;          // floored at 1e-12
  double rho(double s, double t) const;   // clamped to [-1, 1]
  double sigma2_global() const;

 private:
  struct Impl;
  std::shared_ptr<const Impl> impl_;
};

// spectral floor (relative to the largest eigenvalue) followed by a Cholesky
// factorization; L * L^T reproduces C
struct SubjectCovariance {
  Eigen::MatrixXd C;
  Eigen::MatrixXd L;
};

SubjectCovariance subject_covariance(const Eigen::MatrixXd& raw, double eig_floor);

// per-subject covariance of the error vector on the subject's own schedule
std::vector<SubjectCovariance> build_subject_covariance(const StudyFit& fit,
                                                        const ResidualMoments& moments,
                                                        int sample_idx,
                                                        double eig_floor = 1e-10);

// full-schedule covariate trajectories: observed rows kept, missing rows
// filled by the propensity-weighted kernel smoother of the observed values
std::vector<Eigen::MatrixXd> impute_missing_covariates(const StudyFit& fit,
                                                       int sample_idx);

BootstrapResult wild_bootstrap_time_test(const Study& study, const FitOptions& fit_opts,
                                         const BootstrapOptions& opts);

TestReport bootstrap_g_test(const Study& study, const FitOptions& fit_opts,
                            const BootstrapOptions& opts, const GTestOptions& g = {});

inline TestReport bootstrap_timeeffect_test(const Study& study, const FitOptions& fit_opts,
                                            const BootstrapOptions& opts,
                                            const GTestOptions& g = {}) {
  return bootstrap_g_test(study, fit_opts, opts, g);
}

}  // namespace elanova
