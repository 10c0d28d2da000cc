#pragma once
// Finite-dimensional EL ANOVA: equality of covariate coefficients across
// treatments (profile over a common beta), equality of interaction
// coefficients (profile over a common gamma), and the single-treatment test
// that an interaction vector is zero. Statistics are calibrated by chi-square
// limits; local power comes from the noncentral chi-square.

#include "elanova/el.hpp"
#include "elanova/fit.hpp"
#include "elanova/report.hpp"

#include <Eigen/Dense>

#include <functional>
#include <vector>

namespace elanova {

// sum over samples of the -2 log EL ratio at a common beta (resp. gamma)
double el_stat_beta(const StudyFit& fit, const Eigen::VectorXd& beta,
                    const ELSolveOptions& opts = {});
double el_stat_gamma(const StudyFit& fit, const Eigen::VectorXd& gamma,
                     const ELSolveOptions& opts = {});

// inverse-variance weighted one-step combination of the per-sample estimates
// used to start the profile search; falls back to the pooled WLS estimate
Eigen::VectorXd one_step_beta(const StudyFit& fit);
Eigen::VectorXd one_step_gamma(const StudyFit& fit);

struct AnovaOptions {
  ELSolveOptions el;
  ProfileOptions profile;
  std::vector<double> levels{0.01, 0.05, 0.10};
};

// H0: beta_1 = ... = beta_k; chi-square with (k-1) p degrees of freedom
TestReport anova_beta_test(const StudyFit& fit, const AnovaOptions& opts = {});

// H0: gamma_1 = ... = gamma_k; chi-square with (k-1) q degrees of freedom
TestReport anova_gamma_test(const StudyFit& fit, const AnovaOptions& opts = {});

// H0: gamma_j = 0 for one treatment label; chi-square with q degrees of freedom
TestReport interaction_presence_test(const StudyFit& fit, int label,
                                     const AnovaOptions& opts = {});

// parametric time curve g(t) = basis(t)' eta of dimension s
struct CurveBasis {
  int dim = 0;
  std::function<Eigen::VectorXd(double)> eval;
};

// H0: (beta_1, eta_1) = ... = (beta_k, eta_k) when the time effect is a
// parametric curve instead of a kernel-smoothed nuisance. The moment rows
// stack the raw covariates with the basis gradient against the residual
// y - x'beta - basis(t)'eta, so no centering is involved and the chi-square
// degrees of freedom become (k-1)(p+s).
TestReport parametric_anova_test(const StudyFit& fit, const CurveBasis& basis,
                                 const AnovaOptions& opts = {});

struct LocalPowerInput {
  Eigen::VectorXd delta_beta;  // stacked (k-1)p departures
  Eigen::MatrixXd sigma_D;     // asymptotic covariance of the stacked contrasts
  double level = 0.05;
};

// P{chi^2_df(gamma2) > chi^2_{df,level}} with gamma2 = delta' Sigma_D^{-1} delta
double local_power_beta(const LocalPowerInput& input);

// plug-in estimate of Sigma_D from the fitted study (contrast covariance of
// beta_2 - beta_1, ..., beta_k - beta_1)
Eigen::MatrixXd estimate_sigma_D(const StudyFit& fit);

}  // namespace elanova
