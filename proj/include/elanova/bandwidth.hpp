#pragma once
// Leave-one-subject-out cross-validation bandwidth selection. The score for a
// candidate h sums inverse-propensity-weighted squared prediction errors of
// the partially linear fit with subject i removed from the centering sums, the
// (beta, gamma) solve, and the plug-in curve. Ties prefer the larger h;
// candidates where some window empties score +infinity.

#include "elanova/data.hpp"
#include "elanova/kernel.hpp"
#include "elanova/propensity.hpp"

#include <vector>

namespace elanova {

struct CVOptions {
  std::vector<double> grid;  // empty: 12 log-spaced in [0.5,8] * n^(-1/5) * sd(t)
  KernelSpec kernel;
  bool use_covariates = true;  // false: pure nonparametric score
};

struct CVResult {
  double h = 0.0;
  std::vector<double> grid;
  std::vector<double> scores;
};

std::vector<double> default_bandwidth_grid(const TreatmentSample& sample);

CVResult cv_bandwidth(const TreatmentSample& sample, const PropensityFit& prop,
                      const CVOptions& opts = {});

}  // namespace elanova
