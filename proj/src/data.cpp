#include "elanova/data.hpp"

#include "elanova/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace elanova {

const TreatmentSample& Study::by_label(int label) const {
  for (const auto& s : samples)
    if (s.label == label) return s;
  throw Error("UnknownTreatment", "no treatment labelled " + std::to_string(label));
}

InteractionRule make_interaction_rule(const std::string& name, int p, int& q_out) {
  if (name == "none") {
    q_out = 0;
    return {};
  }
  if (name == "design") {
    // t * (x1 - 1.5)^2, the simulation design interaction
    if (p < 1) throw Error("InvalidModel", "interaction 'design' needs p >= 1");
    q_out = 1;
    return [](const double* x, int, double t, double* out) {
      const double s = x[0] - 1.5;
      out[0] = t * s * s;
    };
  }
  const std::string prefix = "linear-time:";
  if (name.rfind(prefix, 0) == 0) {
    const int idx = std::stoi(name.substr(prefix.size()));
    if (idx < 1 || idx > p)
      throw Error("InvalidModel", "interaction covariate index out of range");
    q_out = 1;
    return [idx](const double* x, int, double t, double* out) {
      out[0] = x[idx - 1] * t;
    };
  }
  throw Error("InvalidModel", "unknown interaction rule '" + name + "'");
}

void refresh_interactions(Study& study) {
  for (auto& sample : study.samples) {
    for (auto& subj : sample.subjects) {
      subj.M.resize(subj.T(), study.q);
      for (int m = 0; m < subj.T(); ++m) {
        if (study.q == 0) continue;
        bool have_x = true;
        for (int j = 0; j < study.p; ++j)
          if (std::isnan(subj.X(m, j))) have_x = false;
        if (!have_x) {
          subj.M.row(m).setConstant(std::nan(""));
          continue;
        }
        study.interaction(subj.X.row(m).data(), study.p, subj.times[m],
                          subj.M.row(m).data());
      }
    }
  }
}

void preprocess_missingness(Study& study, int d) {
  if (d < 1) throw Error("InvalidModel", "lag window d must be >= 1");
  study.d = d;
  for (auto& sample : study.samples) {
    for (auto& subj : sample.subjects) {
      const int T = subj.T();
      if (T == 0) throw Error("EmptySubject", "subject with no visits");
      if (subj.delta.empty() || subj.delta[0] == 0)
        throw Error("FirstVisitMissing",
                    "subject " + subj.id + ": first scheduled visit must be observed");
      subj.delta_lag.assign(T, 1);
      subj.delta_eff.assign(T, 1);
      subj.delta_eff[0] = subj.delta[0];
      for (int m = 1; m < T; ++m) {
        const int win = std::min(d, m);  // truncated window at early visits
        std::uint8_t lag = 1;
        for (int l = 1; l <= win; ++l) lag &= subj.delta[m - l];
        subj.delta_lag[m] = lag;
        subj.delta_eff[m] = static_cast<std::uint8_t>(subj.delta[m] & lag);
      }
    }
  }
  study.preprocessed = true;
}

ValidationSummary validate_study(const Study& study) {
  ValidationSummary out;
  if (study.samples.empty()) throw Error("EmptyStudy", "no treatment samples");
  const int p = study.p, q = study.q;
  const int dim = p + q;
  Eigen::MatrixXd pooled = Eigen::MatrixXd::Zero(dim, dim);
  double pooled_rows = 0;
  const KernelSpec kern;
  for (const auto& sample : study.samples) {
    ValidationSummary::PerTreatment row;
    row.treatment = sample.label;
    row.n = sample.n();
    row.T = sample.schedule_len;
    int miss = 0, total = 0;
    // flatten observed visits
    std::vector<double> t;
    std::vector<Eigen::VectorXd> v;
    for (const auto& subj : sample.subjects) {
      for (int m = 0; m < subj.T(); ++m) {
        ++total;
        if (!subj.delta[m]) {
          ++miss;
          continue;
        }
        t.push_back(subj.times[m]);
        Eigen::VectorXd row_v(dim);
        row_v.head(p) = subj.X.row(m).transpose();
        if (q > 0) row_v.tail(q) = subj.M.row(m).transpose();
        v.push_back(std::move(row_v));
      }
    }
    row.missing_rate = total ? static_cast<double>(miss) / total : 0.0;
    if (row.missing_rate > 0.5)
      out.warnings.push_back("treatment " + std::to_string(sample.label) +
                             ": missing rate above 50%");
    out.treatments.push_back(row);
    if (v.empty()) continue;
    // pilot-bandwidth centering for the pooled design moment
    double mean = std::accumulate(t.begin(), t.end(), 0.0) / t.size();
    double var = 0;
    for (double x : t) var += (x - mean) * (x - mean);
    var = t.size() > 1 ? var / (t.size() - 1) : 0.0;
    const double h =
        std::max(1e-3, 1.06 * std::sqrt(var) *
                           std::pow(static_cast<double>(t.size()), -0.2));
    const int V = static_cast<int>(v.size());
    for (int a = 0; a < V; ++a) {
      Eigen::VectorXd num = Eigen::VectorXd::Zero(dim);
      double den = 0;
      for (int b = 0; b < V; ++b) {
        const double w = kernel_eval(kern, (t[b] - t[a]) / h);
        if (w <= 0) continue;
        den += w;
        num += w * v[b];
      }
      const Eigen::VectorXd centered = v[a] - num / den;  // den>0: includes a
      pooled.noalias() += centered * centered.transpose();
      pooled_rows += 1;
    }
  }
  if (pooled_rows > 0 && dim > 0) {
    pooled /= pooled_rows;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(pooled);
    out.sigma_x_min_eig = es.eigenvalues().minCoeff();
    if (out.sigma_x_min_eig < 1e-8)
      out.warnings.push_back(
          "centered design moment nearly singular; interaction terms may be "
          "functions of time only");
  }
  return out;
}

}  // namespace elanova
