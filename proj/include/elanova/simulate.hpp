#pragma once
// Simulation designs and the Monte Carlo driver. A design describes the
// three-treatment partially linear response surface (linear covariate,
// time-interaction regressor, shifted sine curves), the noise decomposition
// (subject intercept plus visit noise), and a staged dropout mechanism whose
// hazard depends on the last covariate and optionally the last response
// change. The driver freezes bandwidths on replicate zero, runs the selected
// tests replicate-parallel, and reports rejection rates with binomial SEs.

#include "elanova/bootstrap.hpp"
#include "elanova/data.hpp"
#include "elanova/fit.hpp"
#include "elanova/time_effect.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace elanova {

enum class Mechanism { None, I, II };

Mechanism mechanism_by_name(const std::string& name);
std::string mechanism_name(Mechanism m);

// difference applied to the reference curve: g_j(t) = 2 sin(2 pi t) - shift(t)
struct CurveShift {
  enum class Kind { Zero, Amplitude, Phase, Offset };
  Kind kind = Kind::Zero;
  double value = 0.0;

  double operator()(double t) const;
  static CurveShift zero() { return {}; }
  static CurveShift amplitude(double u) { return {Kind::Amplitude, u}; }
  static CurveShift phase(double v) { return {Kind::Phase, v}; }
  static CurveShift offset(double c) { return {Kind::Offset, c}; }
};

struct TreatmentDesign {
  int n = 0;
  double beta = 2.0;
  double gamma = 1.0;
  double sigma_a = 0.5;  // covariate noise
  double sigma_b = 0.5;  // subject intercept
  double sigma_c = 0.2;  // visit noise
  CurveShift shift;
  std::vector<double> theta;  // dropout hazard parameters
};

struct SimDesign {
  std::vector<TreatmentDesign> treatments;
  int T = 5;
  Mechanism mech = Mechanism::None;
  bool pure_curves = false;  // no regression part: q = 0 and xi fixed at zero
  // pinned per-treatment bandwidths (single value broadcasts); empty selects
  // by cross-validation on replicate zero and freezes the result
  std::vector<double> bandwidths;
  std::uint64_t seed = 1;

  int k() const { return static_cast<int>(treatments.size()); }
  int d() const { return mech == Mechanism::II ? 2 : 1; }
  std::string propensity_name() const;
  FitOptions fit_options() const;  // propensity/kernel/xi mode; bandwidths empty
};

// the standard three-treatment layout: covariate offsets D2, D3 shift both
// the linear and the interaction coefficients of treatments 2 and 3
SimDesign standard_design(const std::array<int, 3>& n, int T, Mechanism mech,
                          double D2, double D3, CurveShift s2 = {},
                          CurveShift s3 = {});
// treatment 2 carries interaction coefficient gamma2 (its linear coefficient
// moves in step), for testing the presence of the interaction
SimDesign interaction_design(const std::array<int, 3>& n, int T, Mechanism mech,
                             double gamma2);
// two treatments, complete data, no regression part; curve comparison only
SimDesign comparator_design(int n1, int n2, int T, CurveShift s2);

// complete-data draw, deterministic given (design.seed, replicate)
Study generate_dataset(const SimDesign& design, int replicate);
// staged dropout: first visit always observed, hazard per the design
// mechanism, missing once dropped; runs the lag preprocessing afterwards
void apply_missingness(Study& study, const SimDesign& design, int replicate);

struct TestSelector {
  bool beta_equal = false;
  bool gamma_equal = false;
  bool gamma_zero = false;
  int gamma_zero_label = 2;
  bool time_bootstrap = false;
  bool time_asymptotic = false;
  bool comparator = false;  // first two treatments, cumulative difference
  int bootstrap_B = 100;
  WildWeights wild = WildWeights::Mammen;
  IntegratedStatConfig stat;
};

struct MCResult {
  std::string test;
  int reps = 0;
  int rejections = 0;
  int failures = 0;
  double rate = 0.0;   // rejections / (reps - failures)
  double mc_se = 0.0;  // sqrt(rate (1-rate) / (reps - failures))
  double wall_seconds = 0.0;
};

struct MonteCarloOptions {
  int reps = 500;
  double level = 0.05;
  int threads = 0;
};

struct MonteCarloRun {
  std::vector<MCResult> results;
  std::vector<double> bandwidths;  // frozen from replicate 0
  std::vector<std::string> propensity;
  std::vector<double> missing_rate;  // raw per treatment, averaged over reps
};

MonteCarloRun monte_carlo(const SimDesign& design, const TestSelector& tests,
                          const MonteCarloOptions& opts);

}  // namespace elanova
