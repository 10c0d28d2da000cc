#include "elanova/bandwidth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

namespace elanova {

std::vector<double> default_bandwidth_grid(const TreatmentSample& sample) {
  std::vector<double> times;
  for (const auto& subj : sample.subjects)
    for (int m = 0; m < subj.T(); ++m)
      if (!subj.delta_eff.empty() ? subj.delta_eff[m] : subj.delta[m])
        times.push_back(subj.times[m]);
  if (times.size() < 2) throw Error("AllWindowsEmpty", "too few observed visits");
  const double mean = std::accumulate(times.begin(), times.end(), 0.0) / times.size();
  double var = 0;
  for (double t : times) var += (t - mean) * (t - mean);
  var /= (times.size() - 1);
  const double base =
      std::sqrt(var) * std::pow(static_cast<double>(sample.n()), -0.2);
  std::vector<double> grid(12);
  const double lo = std::log(0.5 * base), hi = std::log(8.0 * base);
  for (int i = 0; i < 12; ++i)
    grid[i] = std::exp(lo + (hi - lo) * i / 11.0);
  return grid;
}

CVResult cv_bandwidth(const TreatmentSample& sample, const PropensityFit& prop,
                      const CVOptions& opts) {
  const int n = sample.n();
  if (n < 2) throw Error("AllWindowsEmpty", "cross-validation needs >= 2 subjects");
  // flatten effective-observed visits
  std::vector<int> start(1, 0);
  std::vector<double> t, c, y;
  std::vector<Eigen::VectorXd> xm;  // stacked (x, m) regressors per visit
  int p = 0, q = 0;
  for (int i = 0; i < n; ++i) {
    const auto& subj = sample.subjects[i];
    if (subj.delta_eff.empty())
      throw Error("NotPreprocessed", "preprocess_missingness must run before CV");
    p = static_cast<int>(subj.X.cols());
    q = static_cast<int>(subj.M.cols());
    for (int m = 0; m < subj.T(); ++m) {
      if (!subj.delta_eff[m]) continue;
      t.push_back(subj.times[m]);
      c.push_back(1.0 / prop.pi[i][m]);
      y.push_back(subj.y(m));
      Eigen::VectorXd v(p + q);
      v.head(p) = subj.X.row(m).transpose();
      if (q > 0) v.tail(q) = subj.M.row(m).transpose();
      xm.push_back(std::move(v));
    }
    start.push_back(static_cast<int>(t.size()));
  }
  const int V = static_cast<int>(t.size());
  const int dim = opts.use_covariates ? p + q : 0;

  CVResult out;
  out.grid = opts.grid.empty() ? default_bandwidth_grid(sample) : opts.grid;
  out.scores.assign(out.grid.size(), std::numeric_limits<double>::infinity());

  // full kernel sums and per-subject corrections, O(V^2) per candidate
  std::vector<double> D(V), NY(V);
  std::vector<Eigen::VectorXd> NXM(V);
  std::vector<double> Di(V), NYi(V);
  std::vector<Eigen::VectorXd> NXMi(V);
  for (std::size_t gi = 0; gi < out.grid.size(); ++gi) {
    const double h = out.grid[gi];
    bool empty_window = false;
    for (int v = 0; v < V; ++v) {
      double Dv = 0, Nv = 0;
      Eigen::VectorXd NX = Eigen::VectorXd::Zero(dim);
      for (int u = 0; u < V; ++u) {
        const double z = (t[u] - t[v]) / h;
        if (z <= -1.0 || z >= 1.0) continue;
        const double w = (1.0 - z * z) * c[u];
        Dv += w;
        Nv += w * y[u];
        if (dim > 0) NX.noalias() += w * xm[u];
      }
      D[v] = Dv;
      NY[v] = Nv;
      NXM[v] = std::move(NX);
    }
    double score = 0.0;
    for (int i = 0; i < n && !empty_window; ++i) {
      // subject i's contribution to every window
      for (int v = 0; v < V; ++v) {
        Di[v] = 0;
        NYi[v] = 0;
        if (dim > 0) NXMi[v] = Eigen::VectorXd::Zero(dim);
      }
      for (int u = start[i]; u < start[i + 1]; ++u) {
        for (int v = 0; v < V; ++v) {
          const double z = (t[u] - t[v]) / h;
          if (z <= -1.0 || z >= 1.0) continue;
          const double w = (1.0 - z * z) * c[u];
          Di[v] += w;
          NYi[v] += w * y[u];
          if (dim > 0) NXMi[v].noalias() += w * xm[u];
        }
      }
      Eigen::VectorXd xi = Eigen::VectorXd::Zero(dim);
      if (dim > 0) {
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(dim, dim);
        Eigen::VectorXd b = Eigen::VectorXd::Zero(dim);
        for (int j2 = 0; j2 < n; ++j2) {
          if (j2 == i) continue;
          for (int v = start[j2]; v < start[j2 + 1]; ++v) {
            const double Dr = D[v] - Di[v];
            if (Dr <= 0) continue;  // visit sees only subject i: skip row
            const Eigen::VectorXd vc = xm[v] - (NXM[v] - NXMi[v]) / Dr;
            const double yc = y[v] - (NY[v] - NYi[v]) / Dr;
            A.noalias() += c[v] * vc * vc.transpose();
            b.noalias() += c[v] * yc * vc;
          }
        }
        Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
        if (ldlt.info() != Eigen::Success ||
            ldlt.vectorD().minCoeff() < 1e-10 * std::max(1.0, A.trace() / dim)) {
          empty_window = true;  // degenerate refit at this candidate
          break;
        }
        xi = ldlt.solve(b);
      }
      for (int v = start[i]; v < start[i + 1]; ++v) {
        const double Dr = D[v] - Di[v];
        if (Dr <= 0) {
          empty_window = true;
          break;
        }
        double gt = (NY[v] - NYi[v]) / Dr;
        if (dim > 0) gt -= (NXM[v] - NXMi[v]).dot(xi) / Dr;
        const double pred = (dim > 0 ? xm[v].dot(xi) : 0.0) + gt;
        const double e = y[v] - pred;
        score += c[v] * e * e;
      }
    }
    if (!empty_window) out.scores[gi] = score;
  }
  // smallest score; ties go to the larger bandwidth (grid is ascending)
  int best = -1;
  for (int gi = 0; gi < static_cast<int>(out.grid.size()); ++gi) {
    if (!std::isfinite(out.scores[gi])) continue;
    if (best < 0 || out.scores[gi] <= out.scores[best]) best = gi;
  }
  if (best < 0)
    throw Error("AllWindowsEmpty", "every candidate bandwidth left empty windows");
  out.h = out.grid[best];
  return out;
}

}  // namespace elanova
