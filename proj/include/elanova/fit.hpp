#pragma once
// Per-sample estimation state: flattened effective-observed visits, kernel
// centering, the stacked weighted least squares fit of (beta, gamma), and the
// cached affine blocks that make the EL moment functions cheap to evaluate at
// any candidate parameter. gamma_tilde(beta) is linear in beta (and vice
// versa), so profile evaluations reduce to per-subject matrix-vector products.

#include "elanova/data.hpp"
#include "elanova/kernel.hpp"
#include "elanova/propensity.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace elanova {

struct EstimatingContext {
  int label = 0;
  int p = 0, q = 0, n = 0;
  double h = 0.0;
  // flattened effective-observed visits, grouped by subject: subject i owns
  // [start[i], start[i+1])
  std::vector<int> start;
  std::vector<double> t;  // visit times
  std::vector<double> c;  // delta_eff / pi
  Eigen::MatrixXd X, M;   // raw values (V x p, V x q)
  Eigen::VectorXd y;
  Eigen::MatrixXd Xc, Mc;  // centered
  Eigen::VectorXd yc;
  // stacked WLS estimate (zero vectors under xi_zero)
  Eigen::VectorXd beta_hat, gamma_hat;
  // gamma_tilde(beta) = gA - gB beta; beta_tilde(gamma) = bA - bB gamma
  Eigen::VectorXd gA, bA;
  Eigen::MatrixXd gB, bB;
  // subject moment blocks: Z_i(beta) = z0[i] - Z1[i] beta,
  //                        phi_i(gamma) = f0[i] - F1[i] gamma
  std::vector<Eigen::VectorXd> z0, f0;
  std::vector<Eigen::MatrixXd> Z1, F1;
  // variance ratio of the summed moment to the subject-level spread induced
  // by sharing one kernel smoother across subjects; divides the per-sample
  // log-likelihood ratios in the covariate-test family (1 when not computed)
  double calib = 1.0;

  int V() const { return static_cast<int>(t.size()); }
  Eigen::VectorXd gamma_tilde(const Eigen::VectorXd& beta) const;
  Eigen::VectorXd beta_tilde(const Eigen::VectorXd& gamma) const;
  // rows are per-subject moment vectors
  Eigen::MatrixXd Z_of_beta(const Eigen::VectorXd& beta) const;
  Eigen::MatrixXd phi_of_gamma(const Eigen::VectorXd& gamma) const;
};

struct FitOptions {
  // per-sample bandwidths (single value broadcasts); empty selects by CV
  std::vector<double> bandwidths;
  std::vector<double> bw_grid;  // optional explicit CV grid
  // per-sample propensity spec names (single value broadcasts); "auto" fits
  // lag1-x when a sample has missing visits and uses pi==1 otherwise
  std::vector<std::string> propensity{"auto"};
  bool xi_zero = false;  // pure nonparametric mode: beta = gamma = 0
  // compute the smoothing calibration factor for the covariate tests; callers
  // that only consume curve statistics (wild bootstrap resamples) switch this
  // off to avoid the banded smoother products
  bool covariate_calibration = true;
  KernelSpec kernel;
  PropensityOptions prop_opts;
};

struct SampleFit {
  const TreatmentSample* sample = nullptr;
  PropensityFit prop;
  double h = 0.0;
  EstimatingContext ctx;
};

struct StudyFit {
  const Study* study = nullptr;
  FitOptions opts;
  std::vector<SampleFit> samples;
  int k() const { return static_cast<int>(samples.size()); }
};

// builds the context for one sample given its cumulative propensities
EstimatingContext build_context(const TreatmentSample& sample, const PropensityFit& prop,
                                double h, int p, int q, const KernelSpec& kernel,
                                bool xi_zero, bool calibrate = true);

StudyFit fit_study(const Study& study, FitOptions opts);

}  // namespace elanova
