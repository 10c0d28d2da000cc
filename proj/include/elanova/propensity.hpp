#pragma once
// Visit-level missingness propensity under the d-lag MAR model: a logistic
// model fitted by Newton with step halving on the binary conditional
// likelihood. Likelihood terms exist only at visits whose past-d raw window is
// fully observed; the response is the raw indicator at the visit. The
// cumulative propensity pi multiplies the per-visit probabilities over
// l = max(1, m-d)..m and is clamped to [pi_floor, 1].

#include "elanova/data.hpp"

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <vector>

namespace elanova {

struct PropensitySpec {
  std::string name = "none";
  int dim = 0;
  // writes dim features for subject visit m (m >= 1, lag window raw-observed)
  std::function<void(const SubjectTrajectory&, int m, int d, double* out)> features;
  bool response_dependent = false;

  static PropensitySpec none();
  static PropensitySpec intercept_only();
  // logit = theta' x_{m-1}
  static PropensitySpec lag_covariate(int p);
  // logit = theta1' x_{m-1} + theta2 (y_{m-1} - y_{m-2}); the difference term
  // is zero at the first eligible visit, matching the staged dropout model
  static PropensitySpec lag_cov_response_diff(int p);
  // observational-style shapes: baseline first covariate or intercept plus up
  // to three response lags (unavailable lags enter as zero), and a quadratic
  // expansion of the most recent lag
  static PropensitySpec baseline_cov_ylags();   // (x1 at visit 0, y lags 1..3)
  static PropensitySpec intercept_ylags();      // (1, y lags 1..3)
  static PropensitySpec intercept_ylags_quad(); // adds ylag1^2, ylag1*ylag2
  static PropensitySpec by_name(const std::string& name, int p);
};

struct PropensityFit {
  std::string spec_name;
  Eigen::VectorXd theta;
  double loglik = 0.0;
  double aic = 0.0;
  double bic = 0.0;
  int n_terms = 0;  // likelihood terms entering the fit
  int iterations = 0;
  bool converged = false;
  bool any_clamped = false;  // some pi hit the floor
  // per subject, per visit: fitted per-visit probability (NaN if not evaluable)
  std::vector<std::vector<double>> p_visit;
  // per subject, per visit: cumulative propensity, clamped; 1 at visit 0
  std::vector<std::vector<double>> pi;
};

struct PropensityOptions {
  double grad_tol = 1e-8;
  int max_iter = 100;
  double separation_norm = 1e4;
  double pi_floor = 1e-3;
};

// throws CompleteSeparation / SingularHessian / NoLikelihoodTerms
PropensityFit fit_propensity(const TreatmentSample& sample, const PropensitySpec& spec,
                             int d, const PropensityOptions& opts = {});

// pi == 1 everywhere without fitting (complete data or explicit override)
PropensityFit unit_propensity(const TreatmentSample& sample);

struct ModelComparisonRow {
  std::string name;
  double aic = 0.0;
  double bic = 0.0;
  double loglik = 0.0;
  int dim = 0;
  bool converged = false;
  std::string error;  // nonempty when the fit failed
};

std::vector<ModelComparisonRow> compare_propensity_models(
    const TreatmentSample& sample, const std::vector<PropensitySpec>& specs, int d,
    const PropensityOptions& opts = {});

}  // namespace elanova
