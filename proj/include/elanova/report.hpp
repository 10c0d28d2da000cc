#pragma once
// Uniform result record for every hypothesis test: statistic, reference null,
// p-value, and fixed-level decisions, serializable to ordered JSON so reports
// are byte-stable across runs.

#include <json.hpp>

#include <map>
#include <string>

namespace elanova {

struct TestReport {
  std::string test;       // e.g. "covariate-effect"
  double statistic = 0.0;
  double df = 0.0;        // 0 when the null is not chi-square
  std::string null_dist;  // "chi-square", "normal", "bootstrap"
  double p_value = 1.0;
  std::map<double, bool> reject;  // level -> decision
  nlohmann::ordered_json meta;    // bandwidths, propensity, seeds, B, ...

  nlohmann::ordered_json to_json() const;
};

}  // namespace elanova
