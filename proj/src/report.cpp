#include "elanova/report.hpp"

#include <cmath>
#include <cstdio>

namespace elanova {

nlohmann::ordered_json TestReport::to_json() const {
  nlohmann::ordered_json j;
  j["test"] = test;
  j["statistic"] = statistic;
  if (df > 0) j["df"] = df;
  j["null"] = null_dist;
  j["p_value"] = p_value;
  nlohmann::ordered_json rj;
  char key[16];
  for (const auto& [level, dec] : reject) {
    std::snprintf(key, sizeof(key), "%g", level);
    rj[key] = dec;
  }
  j["reject"] = rj;
  if (!meta.is_null()) j["meta"] = meta;
  return j;
}

}  // namespace elanova
