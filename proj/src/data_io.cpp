#include "elanova/data_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace elanova {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.erase(f.begin());
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t')) f.pop_back();
  }
  return out;
}

double parse_double(const std::string& s, int line, const char* what) {
  double v = 0;
  const auto* b = s.data();
  const auto* e = s.data() + s.size();
  auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc() || res.ptr != e)
    throw Error("MalformedRow", "line " + std::to_string(line) + ": bad " +
                                    what + " value '" + s + "'");
  return v;
}

long parse_int(const std::string& s, int line, const char* what) {
  long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw Error("MalformedRow", "line " + std::to_string(line) + ": bad " +
                                    what + " value '" + s + "'");
  return v;
}

struct RawRow {
  int line;
  double time;
  int observed;
  double y;
  std::vector<double> x;
};

}  // namespace

Study load_long_csv(const std::string& path, const LoadOptions& opts) {
  std::ifstream in(path);
  if (!in) throw Error("FileNotFound", "cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line))
    throw Error("MalformedRow", "empty file '" + path + "'");
  auto header = split_csv(line);
  if (header.size() < 5 || header[0] != "treatment" || header[1] != "subject" ||
      header[2] != "time" || header[3] != "observed" || header[4] != "y")
    throw Error("MalformedRow",
                "header must be treatment,subject,time,observed,y,x1,...");
  const int p = static_cast<int>(header.size()) - 5;
  for (int j = 0; j < p; ++j)
    if (header[5 + j] != "x" + std::to_string(j + 1))
      throw Error("MalformedRow", "covariate columns must be x1..xp in order");
  if (p < 1) throw Error("MalformedRow", "at least one covariate column required");

  // treatment -> subject -> rows, preserving first-appearance order
  std::map<int, std::vector<std::pair<std::string, std::vector<RawRow>>>> data;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = split_csv(line);
    if (static_cast<int>(f.size()) != 5 + p)
      throw Error("MalformedRow", "line " + std::to_string(lineno) +
                                      ": expected " + std::to_string(5 + p) +
                                      " fields, got " + std::to_string(f.size()));
    RawRow r;
    r.line = lineno;
    const int trt = static_cast<int>(parse_int(f[0], lineno, "treatment"));
    const std::string& subj = f[1];
    r.time = parse_double(f[2], lineno, "time");
    const long obs = parse_int(f[3], lineno, "observed");
    if (obs != 0 && obs != 1)
      throw Error("MalformedRow",
                  "line " + std::to_string(lineno) + ": observed must be 0 or 1");
    r.observed = static_cast<int>(obs);
    const bool y_present = !f[4].empty();
    bool x_present = false, x_missing = false;
    r.x.resize(p);
    for (int j = 0; j < p; ++j) {
      if (f[5 + j].empty()) {
        x_missing = true;
        r.x[j] = std::numeric_limits<double>::quiet_NaN();
      } else {
        x_present = true;
        r.x[j] = parse_double(f[5 + j], lineno, "covariate");
      }
    }
    if (r.observed == 0 && (y_present || x_present))
      throw Error("ContradictoryFlag", "line " + std::to_string(lineno) +
                                           ": contradictory missingness flag "
                                           "(observed=0 with nonempty values)");
    if (r.observed == 1 && (!y_present || x_missing))
      throw Error("ContradictoryFlag", "line " + std::to_string(lineno) +
                                           ": observed=1 requires y and all "
                                           "covariates present");
    r.y = y_present ? parse_double(f[4], lineno, "response")
                    : std::numeric_limits<double>::quiet_NaN();
    auto& subjects = data[trt];
    auto it = std::find_if(subjects.begin(), subjects.end(),
                           [&](const auto& s) { return s.first == subj; });
    if (it == subjects.end()) {
      subjects.push_back({subj, {}});
      it = std::prev(subjects.end());
    }
    it->second.push_back(std::move(r));
  }
  if (data.empty()) throw Error("EmptyStudy", "no data rows in '" + path + "'");

  // global affine rescale only when some time falls outside [0,1]
  double tmin = std::numeric_limits<double>::infinity();
  double tmax = -std::numeric_limits<double>::infinity();
  for (auto& [trt, subjects] : data)
    for (auto& [id, rows] : subjects)
      for (auto& r : rows) {
        tmin = std::min(tmin, r.time);
        tmax = std::max(tmax, r.time);
      }
  Study study;
  study.p = p;
  if (tmin < 0.0 || tmax > 1.0) {
    if (!(tmax > tmin))
      throw Error("DuplicateTime", "all times identical; cannot rescale");
    study.time_offset = tmin;
    study.time_scale = tmax - tmin;
    for (auto& [trt, subjects] : data)
      for (auto& [id, rows] : subjects)
        for (auto& r : rows) r.time = (r.time - tmin) / (tmax - tmin);
  }

  study.interaction = make_interaction_rule(opts.interaction, p, study.q);
  study.interaction_name = opts.interaction;

  for (auto& [trt, subjects] : data) {
    TreatmentSample sample;
    sample.label = trt;
    for (auto& [id, rows] : subjects) {
      std::stable_sort(rows.begin(), rows.end(),
                       [](const RawRow& a, const RawRow& b) { return a.time < b.time; });
      for (std::size_t i = 1; i < rows.size(); ++i)
        if (rows[i].time == rows[i - 1].time)
          throw Error("DuplicateTime",
                      "line " + std::to_string(rows[i].line) + ": duplicate time for subject '" +
                          id + "'");
      SubjectTrajectory subj;
      subj.id = id;
      const int T = static_cast<int>(rows.size());
      subj.times.resize(T);
      subj.X.resize(T, p);
      subj.y.resize(T);
      subj.delta.resize(T);
      for (int m = 0; m < T; ++m) {
        subj.times[m] = rows[m].time;
        subj.y(m) = rows[m].y;
        subj.delta[m] = static_cast<std::uint8_t>(rows[m].observed);
        for (int j = 0; j < p; ++j) subj.X(m, j) = rows[m].x[j];
      }
      if (subj.delta[0] == 0)
        throw Error("FirstVisitMissing",
                    "line " + std::to_string(rows[0].line) + ": subject '" + id +
                        "' first visit unobserved");
      if (sample.subjects.empty()) {
        sample.schedule_len = T;
      } else if (T != sample.schedule_len) {
        throw Error("InconsistentSchedule",
                    "treatment " + std::to_string(trt) + ": subject '" + id +
                        "' has " + std::to_string(T) + " visits, expected " +
                        std::to_string(sample.schedule_len));
      }
      sample.subjects.push_back(std::move(subj));
    }
    study.samples.push_back(std::move(sample));
  }
  refresh_interactions(study);
  if (opts.preprocess) preprocess_missingness(study, opts.d);
  return study;
}

void save_long_csv(const Study& study, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("FileNotFound", "cannot write '" + path + "'");
  out << "treatment,subject,time,observed,y";
  for (int j = 1; j <= study.p; ++j) out << ",x" << j;
  out << "\n";
  char buf[40];
  auto fmt = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (const auto& sample : study.samples) {
    for (const auto& subj : sample.subjects) {
      for (int m = 0; m < subj.T(); ++m) {
        out << sample.label << ',' << subj.id << ',' << fmt(subj.times[m])
            << ',' << static_cast<int>(subj.delta[m]) << ',';
        if (subj.delta[m]) out << fmt(subj.y(m));
        for (int j = 0; j < study.p; ++j) {
          out << ',';
          if (subj.delta[m]) out << fmt(subj.X(m, j));
        }
        out << "\n";
      }
    }
  }
}

}  // namespace elanova
