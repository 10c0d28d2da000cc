#pragma once
// Long-format CSV ingestion and emission. Schema:
//   treatment,subject,time,observed,y,x1,...,xp
// Missing visits keep their row with observed=0 and empty y/x fields. Errors
// carry 1-based line numbers. Loading then saving then loading round-trips
// bit-exactly (times are written post-rescale; a [0,1] range reloads as-is).

#include "elanova/data.hpp"

#include <string>

namespace elanova {

struct LoadOptions {
  int d = 1;
  std::string interaction = "none";
  bool preprocess = true;
};

Study load_long_csv(const std::string& path, const LoadOptions& opts = {});
void save_long_csv(const Study& study, const std::string& path);

}  // namespace elanova
