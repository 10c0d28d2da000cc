#pragma once
// Data model for multi-treatment longitudinal samples on a common scheduled
// visit layout. Times live on [0,1] after an affine rescale recorded at load.
// Raw observation indicators are immutable; preprocessing derives the d-lag
// window products and the forced (effective) indicators that every downstream
// weight and likelihood uses.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace elanova {

// all library failures carry a stable code plus a human message
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(code + ": " + message), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

struct SubjectTrajectory {
  std::string id;
  std::vector<double> times;        // ascending, length T_j
  Eigen::MatrixXd X;                // T_j x p, NaN rows where unobserved
  Eigen::MatrixXd M;                // T_j x q interaction terms
  Eigen::VectorXd y;                // NaN where unobserved
  std::vector<std::uint8_t> delta;  // raw indicators; delta[0] == 1
  // derived by preprocess_missingness:
  std::vector<std::uint8_t> delta_lag;  // product over the past min(d,m) raw indicators
  std::vector<std::uint8_t> delta_eff;  // delta masked by delta_lag

  int T() const { return static_cast<int>(times.size()); }
};

struct TreatmentSample {
  int label = 0;
  std::vector<SubjectTrajectory> subjects;
  int schedule_len = 0;  // common T_j across subjects (ragged rejected at load)

  int n() const { return static_cast<int>(subjects.size()); }
};

// maps (covariate row, time) to the q interaction regressors
using InteractionRule = std::function<void(const double* x, int p, double t, double* out)>;

struct Study {
  std::vector<TreatmentSample> samples;
  int p = 0;
  int q = 0;
  int d = 1;  // missingness lag window
  InteractionRule interaction;  // empty when q == 0
  std::string interaction_name = "none";
  // original_time = time_offset + time_scale * t
  double time_offset = 0.0;
  double time_scale = 1.0;
  bool preprocessed = false;

  int k() const { return static_cast<int>(samples.size()); }
  const TreatmentSample& by_label(int label) const;
};

// named interaction rules usable from the CLI; "design" is t*(x1-1.5)^2,
// "linear-time:<i>" is x_i * t (1-based covariate index), "none" has q=0
InteractionRule make_interaction_rule(const std::string& name, int p, int& q_out);

// recompute M for every subject from the study's interaction rule (used after
// covariate imputation); rows with NaN covariates get NaN interactions
void refresh_interactions(Study& study);

// derive delta_lag / delta_eff under lag window d; idempotent; validates that
// every first visit is observed
void preprocess_missingness(Study& study, int d);

struct ValidationSummary {
  struct PerTreatment {
    int treatment = 0;
    int n = 0;
    int T = 0;
    double missing_rate = 0.0;  // raw fraction of delta == 0
  };
  std::vector<PerTreatment> treatments;
  double sigma_x_min_eig = 0.0;  // pooled centered design moment, min eigenvalue
  std::vector<std::string> warnings;
};

// structural diagnostics; usable before any propensity/bandwidth fitting
// (centering for the design moment uses a rule-of-thumb pilot bandwidth)
ValidationSummary validate_study(const Study& study);

}  // namespace elanova
