#include "elanova/propensity.hpp"

#include <algorithm>
#include <cmath>

namespace elanova {

namespace {

inline double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// log(sigmoid(z)) and log(1-sigmoid(z)) without overflow
inline double log_sigmoid(double z) { return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); }

// y lags 1..3 with zero fill where the scheduled lag does not exist
inline void y_lags(const SubjectTrajectory& s, int m, double* out) {
  for (int l = 1; l <= 3; ++l) out[l - 1] = (m - l >= 0) ? s.y(m - l) : 0.0;
}

}  // namespace

PropensitySpec PropensitySpec::none() { return {}; }

PropensitySpec PropensitySpec::intercept_only() {
  PropensitySpec s;
  s.name = "intercept";
  s.dim = 1;
  s.features = [](const SubjectTrajectory&, int, int, double* out) { out[0] = 1.0; };
  return s;
}

PropensitySpec PropensitySpec::lag_covariate(int p) {
  PropensitySpec s;
  s.name = "lag1-x";
  s.dim = p;
  s.features = [p](const SubjectTrajectory& subj, int m, int, double* out) {
    for (int j = 0; j < p; ++j) out[j] = subj.X(m - 1, j);
  };
  return s;
}

PropensitySpec PropensitySpec::lag_cov_response_diff(int p) {
  PropensitySpec s;
  s.name = "lag1-x+ydiff";
  s.dim = p + 1;
  s.response_dependent = true;
  s.features = [p](const SubjectTrajectory& subj, int m, int, double* out) {
    for (int j = 0; j < p; ++j) out[j] = subj.X(m - 1, j);
    out[p] = (m >= 2) ? subj.y(m - 1) - subj.y(m - 2) : 0.0;
  };
  return s;
}

PropensitySpec PropensitySpec::baseline_cov_ylags() {
  PropensitySpec s;
  s.name = "baseline-x+ylags";
  s.dim = 4;
  s.response_dependent = true;
  s.features = [](const SubjectTrajectory& subj, int m, int, double* out) {
    out[0] = subj.X(0, 0);
    y_lags(subj, m, out + 1);
  };
  return s;
}

PropensitySpec PropensitySpec::intercept_ylags() {
  PropensitySpec s;
  s.name = "intercept+ylags";
  s.dim = 4;
  s.response_dependent = true;
  s.features = [](const SubjectTrajectory& subj, int m, int, double* out) {
    out[0] = 1.0;
    y_lags(subj, m, out + 1);
  };
  return s;
}

PropensitySpec PropensitySpec::intercept_ylags_quad() {
  PropensitySpec s;
  s.name = "intercept+ylags+quad";
  s.dim = 6;
  s.response_dependent = true;
  s.features = [](const SubjectTrajectory& subj, int m, int, double* out) {
    out[0] = 1.0;
    y_lags(subj, m, out + 1);
    out[4] = out[1] * out[1];
    out[5] = out[1] * out[2];
  };
  return s;
}

PropensitySpec PropensitySpec::by_name(const std::string& name, int p) {
  if (name == "none") return none();
  if (name == "intercept") return intercept_only();
  if (name == "lag1-x") return lag_covariate(p);
  if (name == "lag1-x+ydiff") return lag_cov_response_diff(p);
  if (name == "baseline-x+ylags") return baseline_cov_ylags();
  if (name == "intercept+ylags") return intercept_ylags();
  if (name == "intercept+ylags+quad") return intercept_ylags_quad();
  throw Error("InvalidModel", "unknown propensity spec '" + name + "'");
}

PropensityFit unit_propensity(const TreatmentSample& sample) {
  PropensityFit fit;
  fit.spec_name = "none";
  fit.converged = true;
  fit.p_visit.resize(sample.n());
  fit.pi.resize(sample.n());
  for (int i = 0; i < sample.n(); ++i) {
    fit.p_visit[i].assign(sample.subjects[i].T(), 1.0);
    fit.pi[i].assign(sample.subjects[i].T(), 1.0);
  }
  return fit;
}

namespace {

// a visit's feature window is evaluable when its truncated raw lag window is
// fully observed
bool window_observed(const SubjectTrajectory& subj, int m, int d) {
  const int win = std::min(d, m);
  for (int l = 1; l <= win; ++l)
    if (!subj.delta[m - l]) return false;
  return true;
}

}  // namespace

PropensityFit fit_propensity(const TreatmentSample& sample, const PropensitySpec& spec,
                             int d, const PropensityOptions& opts) {
  if (spec.dim == 0 || !spec.features) {
    return unit_propensity(sample);
  }
  const int r = spec.dim;
  // gather likelihood terms: visits m >= 1 with delta_lag[m] == 1
  std::vector<Eigen::VectorXd> F;
  std::vector<std::uint8_t> resp;
  Eigen::VectorXd f(r);
  for (const auto& subj : sample.subjects) {
    if (subj.delta_lag.empty())
      throw Error("NotPreprocessed", "preprocess_missingness must run before fitting");
    for (int m = 1; m < subj.T(); ++m) {
      if (!subj.delta_lag[m]) continue;
      spec.features(subj, m, d, f.data());
      F.push_back(f);
      resp.push_back(subj.delta[m]);
    }
  }
  const int N = static_cast<int>(F.size());
  if (N == 0) throw Error("NoLikelihoodTerms", "no eligible visits for propensity fit");

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(r);
  auto loglik = [&](const Eigen::VectorXd& th) {
    double ll = 0;
    for (int i = 0; i < N; ++i) {
      const double z = F[i].dot(th);
      ll += resp[i] ? log_sigmoid(z) : log_sigmoid(-z);
    }
    return ll;
  };
  double ll = loglik(theta);
  PropensityFit fit;
  fit.spec_name = spec.name;
  int it = 0;
  for (; it < opts.max_iter; ++it) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(r);
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(r, r);
    for (int i = 0; i < N; ++i) {
      const double pi = sigmoid(F[i].dot(theta));
      g.noalias() += (static_cast<double>(resp[i]) - pi) * F[i];
      H.noalias() += pi * (1.0 - pi) * F[i] * F[i].transpose();
    }
    if (g.lpNorm<Eigen::Infinity>() <= opts.grad_tol) {
      fit.converged = true;
      break;
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
        H.diagonal().minCoeff() < 1e-12)
      throw Error("SingularHessian", "flat propensity likelihood");
    Eigen::VectorXd step = ldlt.solve(g);
    double scale = 1.0;
    double new_ll = loglik(theta + step);
    int halvings = 0;
    while (new_ll < ll && halvings < 40) {
      scale *= 0.5;
      new_ll = loglik(theta + scale * step);
      ++halvings;
    }
    theta += scale * step;
    ll = new_ll;
    if (theta.norm() > opts.separation_norm)
      throw Error("CompleteSeparation", "propensity estimate diverged (separated data)");
  }
  if (!fit.converged && loglik(theta) > -1e-12) {
    // perfectly fit responses: treat like separation
    throw Error("CompleteSeparation", "propensity likelihood attained its bound");
  }
  fit.theta = theta;
  fit.loglik = ll;
  fit.iterations = it;
  fit.n_terms = N;
  fit.aic = -2.0 * ll + 2.0 * r;
  fit.bic = -2.0 * ll + std::log(static_cast<double>(N)) * r;

  // per-visit probabilities and cumulative propensities
  fit.p_visit.resize(sample.n());
  fit.pi.resize(sample.n());
  for (int i = 0; i < sample.n(); ++i) {
    const auto& subj = sample.subjects[i];
    const int T = subj.T();
    auto& pv = fit.p_visit[i];
    auto& pc = fit.pi[i];
    pv.assign(T, std::nan(""));
    pc.assign(T, 1.0);
    for (int m = 1; m < T; ++m) {
      if (!window_observed(subj, m, d)) continue;
      spec.features(subj, m, d, f.data());
      pv[m] = sigmoid(f.dot(theta));
    }
    for (int m = 1; m < T; ++m) {
      double prod = 1.0;
      for (int l = std::max(1, m - d); l <= m; ++l)
        if (!std::isnan(pv[l])) prod *= pv[l];  // unevaluable factors skip
      if (prod < opts.pi_floor) {
        prod = opts.pi_floor;
        fit.any_clamped = true;
      }
      pc[m] = std::min(prod, 1.0);
    }
  }
  return fit;
}

std::vector<ModelComparisonRow> compare_propensity_models(
    const TreatmentSample& sample, const std::vector<PropensitySpec>& specs, int d,
    const PropensityOptions& opts) {
  std::vector<ModelComparisonRow> rows;
  for (const auto& spec : specs) {
    ModelComparisonRow row;
    row.name = spec.name;
    row.dim = spec.dim;
    try {
      auto fit = fit_propensity(sample, spec, d, opts);
      row.aic = fit.aic;
      row.bic = fit.bic;
      row.loglik = fit.loglik;
      row.converged = fit.converged;
    } catch (const Error& e) {
      row.error = e.code();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace elanova
