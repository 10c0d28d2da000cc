#include "elanova/simulate.hpp"

#include "elanova/covariate.hpp"
#include "elanova/parallel.hpp"
#include "elanova/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

namespace elanova {

namespace {

constexpr double kTwoPi = 6.283185307179586;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double reference_curve(double t) { return 2.0 * std::sin(kTwoPi * t); }

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t x = seed ^ (salt * 0xda942042e4dd58b5ULL);
  return splitmix64(x);
}

}  // namespace

Mechanism mechanism_by_name(const std::string& name) {
  if (name == "none") return Mechanism::None;
  if (name == "I" || name == "i" || name == "1") return Mechanism::I;
  if (name == "II" || name == "ii" || name == "2") return Mechanism::II;
  throw Error("InvalidModel", "unknown missingness mechanism '" + name + "'");
}

std::string mechanism_name(Mechanism m) {
  switch (m) {
    case Mechanism::None:
      return "none";
    case Mechanism::I:
      return "I";
    case Mechanism::II:
      return "II";
  }
  return "?";
}

double CurveShift::operator()(double t) const {
  switch (kind) {
    case Kind::Zero:
      return 0.0;
    case Kind::Amplitude:
      return value * std::sin(kTwoPi * t);
    case Kind::Phase:
      return 2.0 * std::sin(kTwoPi * t) - 2.0 * std::sin(kTwoPi * (t + value));
    case Kind::Offset:
      return value;
  }
  return 0.0;
}

std::string SimDesign::propensity_name() const {
  switch (mech) {
    case Mechanism::None:
      return "none";
    case Mechanism::I:
      return "lag1-x";
    case Mechanism::II:
      return "lag1-x+ydiff";
  }
  return "none";
}

FitOptions SimDesign::fit_options() const {
  FitOptions fo;
  fo.propensity = {propensity_name()};
  fo.xi_zero = pure_curves;
  fo.bandwidths = bandwidths;
  return fo;
}

SimDesign standard_design(const std::array<int, 3>& n, int T, Mechanism mech,
                          double D2, double D3, CurveShift s2, CurveShift s3) {
  SimDesign design;
  design.T = T;
  design.mech = mech;
  design.treatments.resize(3);
  auto& t1 = design.treatments[0];
  auto& t2 = design.treatments[1];
  auto& t3 = design.treatments[2];
  t1 = {n[0], 2.0, 1.0, 0.5, 0.5, 0.2, CurveShift::zero(), {}};
  t2 = {n[1], 2.0 + D2, 1.0 + D2, 0.5, 0.5, 0.2, s2, {}};
  t3 = {n[2], 2.0 + D3, 1.0 + D3, 0.6, 0.6, 0.3, s3, {}};
  switch (mech) {
    case Mechanism::None:
      break;
    case Mechanism::I:
      t1.theta = {3.0};
      t2.theta = {2.0};
      t3.theta = {2.0};
      break;
    case Mechanism::II:
      t1.theta = {2.0, -1.0};
      t2.theta = {2.0, -1.5};
      t3.theta = {2.0, -1.5};
      break;
  }
  return design;
}

SimDesign interaction_design(const std::array<int, 3>& n, int T, Mechanism mech,
                             double gamma2) {
  SimDesign design = standard_design(n, T, mech, 0.0, 0.0);
  design.treatments[1].beta = 2.0 + gamma2;
  design.treatments[1].gamma = gamma2;
  return design;
}

SimDesign comparator_design(int n1, int n2, int T, CurveShift s2) {
  SimDesign design;
  design.T = T;
  design.mech = Mechanism::None;
  design.pure_curves = true;
  design.treatments.resize(2);
  design.treatments[0] = {n1, 0.0, 0.0, 0.5, 0.5, 0.2, CurveShift::zero(), {}};
  design.treatments[1] = {n2, 0.0, 0.0, 0.5, 0.5, 0.2, s2, {}};
  return design;
}

Study generate_dataset(const SimDesign& design, int replicate) {
  Study study;
  study.p = 1;
  study.d = design.d();
  if (design.pure_curves) {
    study.q = 0;
    study.interaction_name = "none";
  } else {
    study.interaction_name = "design";
    study.interaction = make_interaction_rule("design", 1, study.q);
  }
  study.samples.resize(design.k());
  int unit = 0;
  for (int j = 0; j < design.k(); ++j) {
    const TreatmentDesign& td = design.treatments[j];
    TreatmentSample& sample = study.samples[j];
    sample.label = j + 1;
    sample.schedule_len = design.T;
    sample.subjects.resize(td.n);
    for (int i = 0; i < td.n; ++i, ++unit) {
      RngStream rs(design.seed, rng_stage::generate, replicate, unit);
      SubjectTrajectory& subj = sample.subjects[i];
      subj.id = std::to_string(sample.label) + ":" + std::to_string(i + 1);
      subj.times.resize(design.T);
      for (int m = 0; m < design.T; ++m) subj.times[m] = rs.uniform();
      std::sort(subj.times.begin(), subj.times.end());
      subj.X.resize(design.T, 1);
      subj.M.resize(design.T, study.q);
      subj.y.resize(design.T);
      std::vector<double> u(design.T), nu(design.T);
      for (int m = 0; m < design.T; ++m) u[m] = rs.normal(0.0, td.sigma_a);
      const double e_subj = rs.normal(0.0, td.sigma_b);
      for (int m = 0; m < design.T; ++m) nu[m] = rs.normal(0.0, td.sigma_c);
      for (int m = 0; m < design.T; ++m) {
        const double t = subj.times[m];
        const double x = 2.0 - 1.5 * t + u[m];
        subj.X(m, 0) = x;
        double mout = 0.0;
        if (study.q > 0) {
          study.interaction(&x, 1, t, &mout);
          subj.M(m, 0) = mout;
        }
        const double g = reference_curve(t) - td.shift(t);
        subj.y[m] = td.beta * x + (study.q > 0 ? td.gamma * mout : 0.0) + g +
                    e_subj + nu[m];
      }
      subj.delta.assign(design.T, 1);
    }
  }
  return study;
}

void apply_missingness(Study& study, const SimDesign& design, int replicate) {
  if (design.mech != Mechanism::None) {
    int unit = 0;
    for (int j = 0; j < design.k(); ++j) {
      const TreatmentDesign& td = design.treatments[j];
      for (auto& subj : study.samples[j].subjects) {
        RngStream rm(design.seed, rng_stage::missingness, replicate, unit++);
        bool active = true;
        for (int m = 1; m < design.T && active; ++m) {
          double logit = 0.0;
          if (design.mech == Mechanism::I) {
            logit = td.theta[0] * subj.X(m - 1, 0);
          } else {
            logit = td.theta[0] * subj.X(m - 1, 0);
            if (m >= 2) logit += td.theta[1] * (subj.y[m - 1] - subj.y[m - 2]);
          }
          if (!rm.bernoulli(sigmoid(logit))) active = false;
          if (!active) {
            for (int mm = m; mm < design.T; ++mm) subj.delta[mm] = 0;
          }
        }
        for (int m = 0; m < design.T; ++m) {
          if (subj.delta[m]) continue;
          subj.X(m, 0) = kNaN;
          if (study.q > 0) subj.M(m, 0) = kNaN;
          subj.y[m] = kNaN;
        }
      }
    }
  }
  preprocess_missingness(study, study.d);
}

MonteCarloRun monte_carlo(const SimDesign& design, const TestSelector& tests,
                          const MonteCarloOptions& opts) {
  if (opts.reps < 1) throw Error("InvalidModel", "monte_carlo needs reps >= 1");
  // bandwidths are selected once on replicate zero and frozen
  Study rep0 = generate_dataset(design, 0);
  apply_missingness(rep0, design, 0);
  FitOptions base = design.fit_options();
  StudyFit fit0 = fit_study(rep0, base);
  FitOptions frozen = base;
  frozen.bandwidths.clear();
  frozen.propensity.clear();
  for (const auto& sf : fit0.samples) {
    frozen.bandwidths.push_back(sf.h);
    frozen.propensity.push_back(sf.prop.spec_name);
  }

  struct TestSlot {
    std::string name;
    std::vector<std::int8_t> outcome;  // 1 reject, 0 accept, -1 failure
    double seconds = 0.0;
  };
  std::vector<TestSlot> slots;
  auto add_slot = [&](const std::string& name) {
    slots.push_back({name, std::vector<std::int8_t>(opts.reps, -1), 0.0});
    return slots.size() - 1;
  };
  std::size_t i_beta = tests.beta_equal ? add_slot("covariate-anova") : SIZE_MAX;
  std::size_t i_geq = tests.gamma_equal ? add_slot("interaction-anova") : SIZE_MAX;
  std::size_t i_gz = tests.gamma_zero ? add_slot("interaction-presence") : SIZE_MAX;
  std::size_t i_tb = tests.time_bootstrap ? add_slot("time-effect-bootstrap") : SIZE_MAX;
  std::size_t i_ta = tests.time_asymptotic ? add_slot("time-effect-asymptotic") : SIZE_MAX;
  std::size_t i_cmp = tests.comparator ? add_slot("cumulative-difference") : SIZE_MAX;

  const int k = design.k();
  std::vector<double> miss_acc(static_cast<std::size_t>(opts.reps) * k, 0.0);
  auto wall0 = std::chrono::steady_clock::now();

  parallel_for(opts.reps, opts.threads, [&](int rep) {
    Study st = generate_dataset(design, rep);
    apply_missingness(st, design, rep);
    for (int j = 0; j < k; ++j) {
      double miss = 0.0;
      for (const auto& subj : st.samples[j].subjects)
        for (int m = 0; m < design.T; ++m) miss += subj.delta[m] ? 0.0 : 1.0;
      miss_acc[static_cast<std::size_t>(rep) * k + j] =
          miss / (static_cast<double>(st.samples[j].n()) * design.T);
    }
    auto decide = [&](std::size_t slot, double p_value) {
      slots[slot].outcome[rep] = (p_value <= opts.level) ? 1 : 0;
    };
    bool need_fit = tests.beta_equal || tests.gamma_equal || tests.gamma_zero ||
                    tests.time_asymptotic || tests.comparator;
    StudyFit fit;
    bool fit_ok = false;
    if (need_fit) {
      try {
        fit = fit_study(st, frozen);
        fit_ok = true;
      } catch (const Error&) {
      }
    }
    if (tests.beta_equal && fit_ok) {
      try {
        decide(i_beta, anova_beta_test(fit).p_value);
      } catch (const Error&) {
      }
    }
    if (tests.gamma_equal && fit_ok) {
      try {
        decide(i_geq, anova_gamma_test(fit).p_value);
      } catch (const Error&) {
      }
    }
    if (tests.gamma_zero && fit_ok) {
      try {
        decide(i_gz, interaction_presence_test(fit, tests.gamma_zero_label).p_value);
      } catch (const Error&) {
      }
    }
    if (tests.time_asymptotic && fit_ok) {
      try {
        decide(i_ta, asymptotic_g_test(fit, tests.stat).p_value);
      } catch (const Error&) {
      }
    }
    if (tests.comparator && fit_ok) {
      try {
        int l1 = st.samples[0].label, l2 = st.samples[1].label;
        decide(i_cmp, cumulative_difference_test(fit, l1, l2).p_value);
      } catch (const Error&) {
      }
    }
    if (tests.time_bootstrap) {
      try {
        BootstrapOptions bo;
        bo.B = tests.bootstrap_B;
        bo.wild = tests.wild;
        bo.stat = tests.stat;
        bo.threads = 1;  // replicates are already parallel
        bo.seed = mix_seed(design.seed, static_cast<std::uint64_t>(rep) + 1);
        decide(i_tb, bootstrap_g_test(st, frozen, bo).p_value);
      } catch (const Error&) {
      }
    }
  });

  double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0)
                    .count();

  MonteCarloRun run;
  run.bandwidths = frozen.bandwidths;
  run.propensity = frozen.propensity;
  run.missing_rate.assign(k, 0.0);
  for (int rep = 0; rep < opts.reps; ++rep)
    for (int j = 0; j < k; ++j)
      run.missing_rate[j] += miss_acc[static_cast<std::size_t>(rep) * k + j];
  for (int j = 0; j < k; ++j) run.missing_rate[j] /= opts.reps;

  for (auto& slot : slots) {
    MCResult res;
    res.test = slot.name;
    res.reps = opts.reps;
    for (auto o : slot.outcome) {
      if (o < 0) {
        ++res.failures;
      } else if (o == 1) {
        ++res.rejections;
      }
    }
    int done = res.reps - res.failures;
    if (res.failures > 0.10 * res.reps)
      throw Error("MonteCarloUnstable",
                  "more than 10% of replicates failed for test " + slot.name);
    res.rate = done > 0 ? static_cast<double>(res.rejections) / done : 0.0;
    res.mc_se = done > 0 ? std::sqrt(std::max(res.rate * (1.0 - res.rate), 0.0) / done)
                         : 0.0;
    res.wall_seconds = wall;
    run.results.push_back(res);
  }
  return run;
}

}  // namespace elanova
