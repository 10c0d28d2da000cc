// Command-line front end: CSV in, JSON (or CSV tables) out. Subcommands cover
// the analysis workflow (anova, fit-propensity, bandwidth, validate) and the
// simulation harness (simulate). Exit codes: 0 success, 2 usage or data
// errors, 1 computational failures.

#include "elanova/bandwidth.hpp"
#include "elanova/bootstrap.hpp"
#include "elanova/covariate.hpp"
#include "elanova/data_io.hpp"
#include "elanova/rng.hpp"
#include "elanova/simulate.hpp"
#include "elanova/time_effect.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#ifndef ELANOVA_VERSION
#define ELANOVA_VERSION "0.0.0"
#endif

namespace {

using elanova::Error;
using nlohmann::ordered_json;

int classify_exit(const Error& e) {
  static const std::set<std::string> usage = {
      "FileNotFound",     "MalformedRow",   "DuplicateTime",
      "FirstVisitMissing", "InconsistentSchedule", "EmptyStudy",
      "EmptySubject",     "NotPreprocessed", "InvalidModel",
      "UnknownTreatment", "BadWeightTable", "BadTrim",
      "ContradictoryFlag", "InvalidBandwidth"};
  return usage.count(e.code()) ? 2 : 1;
}

std::string iso_utc_now() {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string join_argv(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

ordered_json provenance_block(const std::string& cmdline, std::uint64_t seed,
                              int threads, int d) {
  ordered_json p;
  p["tool"] = "elanova";
  p["version"] = ELANOVA_VERSION;
  p["command"] = cmdline;
  p["seed"] = seed;
  p["threads"] = threads;
  p["d"] = d;
  p["kernel"] = "epanechnikov";
  p["generated_at"] = iso_utc_now();
  return p;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("FileNotFound", "cannot open output file '" + path + "'");
  out << text;
}

void write_json(const std::string& path, const ordered_json& j) {
  write_text(path, j.dump(2) + "\n");
}

elanova::Study subset_study(const elanova::Study& full, const std::vector<int>& groups) {
  if (groups.empty()) return full;
  std::set<int> seen;
  for (int g : groups)
    if (!seen.insert(g).second)
      throw Error("ContradictoryFlag", "duplicate treatment label in --groups");
  elanova::Study out = full;
  out.samples.clear();
  for (int g : groups) out.samples.push_back(full.by_label(g));
  return out;
}

elanova::WeightFunction load_weight_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("FileNotFound", "cannot open weight table '" + path + "'");
  elanova::WeightFunction wf;
  wf.kind = elanova::WeightFunction::Kind::Table;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    double t, w;
    if (!(ls >> t >> w)) {
      if (lineno == 1) continue;  // header row
      throw Error("BadWeightTable",
                  "line " + std::to_string(lineno) + " of '" + path +
                      "' is not a time,weight pair");
    }
    wf.table_t.push_back(t);
    wf.table_w.push_back(w);
  }
  return wf;
}

std::string fmt_num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// shared ingestion flags
struct InputFlags {
  std::string input;
  int d = 1;
  std::string interaction = "none";
  std::vector<int> groups;

  void attach(CLI::App* cmd, bool with_groups = true) {
    cmd->add_option("--input,-i", input, "long-format CSV file")->required();
    cmd->add_option("--d", d, "missingness lag window")->check(CLI::PositiveNumber);
    cmd->add_option("--interaction", interaction,
                    "interaction term: none, design, or linear-time:<i>");
    if (with_groups)
      cmd->add_option("--groups", groups,
                      "comma-separated treatment labels to keep (subset tests)")
          ->delimiter(',');
  }

  elanova::Study load() const {
    elanova::LoadOptions opts;
    opts.d = d;
    opts.interaction = interaction;
    opts.preprocess = true;
    return subset_study(elanova::load_long_csv(input, opts), groups);
  }
};

struct FitFlags {
  std::vector<double> bandwidths;
  std::vector<double> bw_grid;
  std::vector<std::string> propensity{"auto"};
  bool xi_zero = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--bandwidth", bandwidths,
                    "per-treatment bandwidths (one value broadcasts; omit for CV)")
        ->delimiter(',');
    cmd->add_option("--bw-grid", bw_grid, "explicit bandwidth grid for CV")
        ->delimiter(',');
    cmd->add_option("--propensity", propensity,
                    "per-treatment propensity model (auto, none, intercept, lag1-x, "
                    "lag1-x+ydiff, baseline-x+ylags, intercept+ylags, "
                    "intercept+ylags+quad)")
        ->delimiter(',');
    cmd->add_flag("--xi-zero", xi_zero,
                  "pure curve mode: fix the regression coefficients at zero");
  }

  elanova::FitOptions options() const {
    elanova::FitOptions fo;
    fo.bandwidths = bandwidths;
    fo.bw_grid = bw_grid;
    fo.propensity = propensity;
    fo.xi_zero = xi_zero;
    return fo;
  }
};

void add_fit_provenance(ordered_json& prov, const elanova::StudyFit& fit) {
  ordered_json bw = ordered_json::array();
  ordered_json pr = ordered_json::array();
  ordered_json labels = ordered_json::array();
  for (const auto& sf : fit.samples) {
    labels.push_back(sf.sample->label);
    bw.push_back(sf.h);
    pr.push_back(sf.prop.spec_name);
  }
  prov["treatments"] = labels;
  prov["bandwidths"] = bw;
  prov["propensity"] = pr;
}

// ---------------------------------------------------------------- anova ----

struct AnovaArgs {
  InputFlags in;
  FitFlags fitf;
  std::string hypothesis;
  int treatment = 0;
  int bootstrap_B = 500;
  std::string wild = "mammen";
  std::string weight = "uniform";
  std::string weight_table;
  int grid = 101;
  double trim = 0.0;
  std::uint64_t seed = 1;
  int threads = 0;
  std::vector<double> alpha{0.01, 0.05, 0.10};
  std::string output;
  std::string curves;
};

int run_anova(const AnovaArgs& a, const std::string& cmdline) {
  elanova::Study study = a.in.load();

  elanova::WeightFunction wf;
  if (!a.weight_table.empty()) {
    if (a.weight != "uniform" && a.weight != "table")
      throw Error("ContradictoryFlag", "--weight and --weight-table conflict");
    wf = load_weight_table(a.weight_table);
  } else if (a.weight == "uniform") {
    wf = elanova::WeightFunction::uniform();
  } else if (a.weight == "kde") {
    wf = elanova::WeightFunction::pooled_kde();
  } else {
    throw Error("ContradictoryFlag", "--weight table needs --weight-table FILE");
  }
  elanova::IntegratedStatConfig cfg;
  cfg.grid_size = a.grid;
  cfg.weight = wf;

  elanova::FitOptions fo = a.fitf.options();
  elanova::StudyFit fit = elanova::fit_study(study, fo);
  elanova::FitOptions frozen = fo;
  frozen.bandwidths.clear();
  frozen.propensity.clear();
  for (const auto& sf : fit.samples) {
    frozen.bandwidths.push_back(sf.h);
    frozen.propensity.push_back(sf.prop.spec_name);
  }

  elanova::AnovaOptions aopts;
  aopts.levels = a.alpha;
  elanova::GTestOptions gopts;
  gopts.levels = a.alpha;

  elanova::TestReport rep;
  if (a.hypothesis == "beta") {
    rep = elanova::anova_beta_test(fit, aopts);
  } else if (a.hypothesis == "gamma") {
    rep = elanova::anova_gamma_test(fit, aopts);
  } else if (a.hypothesis == "interaction") {
    if (a.treatment == 0)
      throw Error("ContradictoryFlag",
                  "--hypothesis interaction needs --treatment LABEL");
    rep = elanova::interaction_presence_test(fit, a.treatment, aopts);
  } else if (a.hypothesis == "g") {
    elanova::BootstrapOptions bo;
    bo.B = a.bootstrap_B;
    bo.wild = elanova::wild_weights_by_name(a.wild);
    bo.seed = a.seed;
    bo.threads = a.threads;
    bo.stat = cfg;
    rep = elanova::bootstrap_g_test(study, frozen, bo, gopts);
  } else if (a.hypothesis == "g-asymptotic") {
    rep = elanova::asymptotic_g_test(fit, cfg, gopts);
  } else if (a.hypothesis == "curve-diff") {
    int l1 = 0, l2 = 0;
    if (a.in.groups.size() == 2) {
      l1 = a.in.groups[0];
      l2 = a.in.groups[1];
    } else if (study.k() == 2) {
      l1 = study.samples[0].label;
      l2 = study.samples[1].label;
    } else {
      throw Error("ContradictoryFlag",
                  "--hypothesis curve-diff needs exactly two groups "
                  "(use --groups A,B)");
    }
    rep = elanova::cumulative_difference_test(fit, l1, l2, a.trim, gopts);
  } else {
    throw Error("ContradictoryFlag",
                "unknown --hypothesis '" + a.hypothesis +
                    "' (beta, gamma, interaction, g, g-asymptotic, curve-diff)");
  }

  ordered_json out = rep.to_json();
  ordered_json prov = provenance_block(cmdline, a.seed, a.threads, study.d);
  add_fit_provenance(prov, fit);
  out["provenance"] = prov;
  write_json(a.output, out);

  if (!a.curves.empty()) {
    elanova::TimeEffect te(fit, cfg);
    elanova::TimeEffectResult res = [&] {
      try {
        return te.integrated_statistic();
      } catch (const Error&) {
        elanova::TimeEffectResult empty;
        empty.grid = te.grid();
        empty.valid = te.valid();
        empty.Ln.assign(empty.grid.size(), std::nan(""));
        empty.weight.assign(empty.grid.size(), std::nan(""));
        return empty;
      }
    }();
    std::ostringstream cs;
    cs << "t,valid,Ln,weight";
    for (const auto& sf : fit.samples)
      cs << ",ghat_" << sf.sample->label << ",gtilde_" << sf.sample->label;
    cs << "\n";
    for (std::size_t i = 0; i < res.grid.size(); ++i) {
      double t = res.grid[i];
      cs << fmt_num(t) << ',' << int(res.valid[i]) << ',' << fmt_num(res.Ln[i])
         << ',' << fmt_num(res.weight[i]);
      for (int j = 0; j < fit.k(); ++j)
        cs << ',' << fmt_num(te.g_hat(j, t)) << ',' << fmt_num(te.g_tilde(j, t));
      cs << "\n";
    }
    write_text(a.curves, cs.str());
  }
  return 0;
}

// ------------------------------------------------------- fit-propensity ----

struct PropArgs {
  InputFlags in;
  std::vector<std::string> models;
  std::string output;
};

int run_fit_propensity(const PropArgs& a, const std::string& cmdline) {
  elanova::Study study = a.in.load();
  std::vector<std::string> names = a.models;
  if (names.empty())
    names = {"intercept",        "lag1-x",
             "lag1-x+ydiff",     "baseline-x+ylags",
             "intercept+ylags",  "intercept+ylags+quad"};

  std::vector<elanova::PropensitySpec> specs;
  for (const auto& nm : names) {
    elanova::PropensitySpec spec = elanova::PropensitySpec::by_name(nm, study.p);
    if (spec.dim == 0)
      throw Error("InvalidModel", "'" + nm + "' is not a likelihood model");
    specs.push_back(std::move(spec));
  }

  ordered_json out;
  out["models"] = names;
  ordered_json table = ordered_json::array();
  for (const auto& sample : study.samples) {
    auto rows = elanova::compare_propensity_models(sample, specs, study.d);
    ordered_json tj;
    tj["treatment"] = sample.label;
    ordered_json rj = ordered_json::array();
    std::string best_aic, best_bic;
    double aic_min = std::numeric_limits<double>::infinity();
    double bic_min = std::numeric_limits<double>::infinity();
    for (const auto& row : rows) {
      ordered_json r;
      r["model"] = row.name;
      r["dim"] = row.dim;
      if (row.error.empty()) {
        r["loglik"] = row.loglik;
        r["aic"] = row.aic;
        r["bic"] = row.bic;
        r["converged"] = row.converged;
        if (row.converged && row.aic < aic_min) {
          aic_min = row.aic;
          best_aic = row.name;
        }
        if (row.converged && row.bic < bic_min) {
          bic_min = row.bic;
          best_bic = row.name;
        }
      } else {
        r["error"] = row.error;
      }
      rj.push_back(r);
    }
    tj["rows"] = rj;
    tj["best_aic"] = best_aic;
    tj["best_bic"] = best_bic;
    table.push_back(tj);
  }
  out["comparison"] = table;
  out["provenance"] = provenance_block(cmdline, 0, 0, study.d);
  write_json(a.output, out);
  return 0;
}

// ------------------------------------------------------------ bandwidth ----

struct BandwidthArgs {
  InputFlags in;
  FitFlags fitf;
  std::string output;
};

int run_bandwidth(const BandwidthArgs& a, const std::string& cmdline) {
  elanova::Study study = a.in.load();
  std::vector<std::string> prop = a.fitf.propensity;
  if (prop.empty()) prop = {"auto"};
  if (prop.size() == 1) prop.assign(study.samples.size(), prop[0]);
  if (prop.size() != study.samples.size())
    throw Error("InvalidModel", "propensity spec count must be 1 or k");

  ordered_json out;
  ordered_json table = ordered_json::array();
  for (std::size_t j = 0; j < study.samples.size(); ++j) {
    const auto& sample = study.samples[j];
    std::string spec_name = prop[j];
    if (spec_name == "auto") {
      bool any_missing = false;
      for (const auto& subj : sample.subjects)
        for (auto dv : subj.delta)
          if (!dv) any_missing = true;
      spec_name = any_missing ? "lag1-x" : "none";
    }
    elanova::PropensitySpec spec = elanova::PropensitySpec::by_name(spec_name, study.p);
    elanova::PropensityFit pf = spec.dim == 0
                                    ? elanova::unit_propensity(sample)
                                    : elanova::fit_propensity(sample, spec, study.d);
    elanova::CVOptions cv;
    cv.grid = a.fitf.bw_grid;
    cv.use_covariates = !a.fitf.xi_zero;
    elanova::CVResult res = elanova::cv_bandwidth(sample, pf, cv);
    ordered_json tj;
    tj["treatment"] = sample.label;
    tj["propensity"] = spec_name;
    tj["h"] = res.h;
    tj["grid"] = res.grid;
    tj["scores"] = res.scores;
    table.push_back(tj);
  }
  out["cv"] = table;
  out["provenance"] = provenance_block(cmdline, 0, 0, study.d);
  write_json(a.output, out);
  return 0;
}

// ------------------------------------------------------------- simulate ----

struct SimulateArgs {
  int table = 1;
  int reps = 500;
  std::uint64_t seed = 1;
  int threads = 0;
  std::vector<int> T_filter;
  std::vector<std::string> mech_filter;
  std::vector<std::string> nset_filter;
  int B = 100;
  double level = 0.05;
  int grid = 101;
  std::string format = "json";
  std::string output;
};

struct SimCell {
  std::array<int, 3> n{};
  double a = 0.0, b = 0.0;  // table-specific varying parameters
  int T = 5;
  elanova::Mechanism mech = elanova::Mechanism::None;
  elanova::SimDesign design;
  elanova::TestSelector tests;
};

int run_simulate(const SimulateArgs& a, const std::string& cmdline) {
  using elanova::CurveShift;
  using elanova::Mechanism;

  std::vector<int> Ts = a.T_filter.empty() ? std::vector<int>{5, 10} : a.T_filter;
  std::vector<Mechanism> mechs;
  if (a.mech_filter.empty()) {
    mechs = {Mechanism::I, Mechanism::II};
  } else {
    for (const auto& m : a.mech_filter) mechs.push_back(elanova::mechanism_by_name(m));
  }
  std::vector<std::array<int, 3>> nsets;
  {
    std::vector<std::string> sel =
        a.nset_filter.empty() ? std::vector<std::string>{"small", "large"} : a.nset_filter;
    for (const auto& s : sel) {
      if (s == "small")
        nsets.push_back({60, 65, 55});
      else if (s == "large")
        nsets.push_back({100, 110, 105});
      else
        throw Error("ContradictoryFlag", "--n-set takes small and/or large");
    }
  }

  elanova::IntegratedStatConfig stat;
  stat.grid_size = a.grid;
  stat.weight = elanova::WeightFunction::pooled_kde();

  std::vector<SimCell> cells;
  auto push = [&](SimCell c) {
    std::uint64_t s = a.seed + 0xf1ea5eedULL * (cells.size() + 1);
    c.design.seed = elanova::splitmix64(s);
    cells.push_back(std::move(c));
  };

  static const std::array<std::array<double, 2>, 9> d_pairs = {{{0.0, 0.0},
                                                                {0.2, 0.0},
                                                                {0.3, 0.0},
                                                                {0.0, 0.2},
                                                                {0.0, 0.3},
                                                                {0.2, 0.2},
                                                                {0.2, 0.3},
                                                                {0.3, 0.2},
                                                                {0.3, 0.3}}};

  if (a.table == 1 || a.table == 3) {
    for (const auto& n : nsets)
      for (const auto& dp : d_pairs)
        for (int T : Ts)
          for (Mechanism mech : mechs) {
            SimCell c;
            c.n = n;
            c.a = dp[0];
            c.b = dp[1];
            c.T = T;
            c.mech = mech;
            c.design = elanova::standard_design(n, T, mech, dp[0], dp[1]);
            if (a.table == 1)
              c.tests.beta_equal = true;
            else
              c.tests.gamma_equal = true;
            push(std::move(c));
          }
  } else if (a.table == 2) {
    static const std::array<double, 4> g2 = {0.0, 0.2, 0.3, 0.4};
    for (const auto& n : nsets)
      for (double g : g2)
        for (int T : Ts)
          for (Mechanism mech : mechs) {
            SimCell c;
            c.n = n;
            c.a = g;
            c.T = T;
            c.mech = mech;
            c.design = elanova::interaction_design(n, T, mech, g);
            c.tests.gamma_zero = true;
            c.tests.gamma_zero_label = 2;
            push(std::move(c));
          }
  } else if (a.table == 4) {
    static const std::array<std::array<double, 2>, 5> uv = {
        {{0.0, 0.0}, {0.30, 0.0}, {0.50, 0.0}, {0.0, 0.05}, {0.0, 0.10}}};
    for (const auto& n : nsets)
      for (const auto& p : uv)
        for (int T : Ts)
          for (Mechanism mech : mechs) {
            SimCell c;
            c.n = n;
            c.a = p[0];
            c.b = p[1];
            c.T = T;
            c.mech = mech;
            c.design = elanova::standard_design(n, T, mech, 0.0, 0.2,
                                                CurveShift::amplitude(p[0]),
                                                CurveShift::phase(p[1]));
            c.tests.time_bootstrap = true;
            c.tests.bootstrap_B = a.B;
            c.tests.stat = stat;
            push(std::move(c));
          }
  } else if (a.table == 5) {
    // two-group curve comparison; a encodes the shift family, b its size
    static const std::array<std::array<double, 2>, 7> cases = {{{1, 0.0},
                                                               {1, 0.30},
                                                               {1, 0.50},
                                                               {2, 0.05},
                                                               {2, 0.10},
                                                               {3, 0.10},
                                                               {3, 0.20}}};
    for (const auto& n : nsets)
      for (const auto& cs : cases)
        for (int T : Ts) {
          SimCell c;
          c.n = {n[0], n[1], 0};
          c.a = cs[0];
          c.b = cs[1];
          c.T = T;
          c.mech = Mechanism::None;
          CurveShift shift;
          if (cs[0] == 1)
            shift = CurveShift::amplitude(cs[1]);
          else if (cs[0] == 2)
            shift = CurveShift::phase(cs[1]);
          else
            shift = CurveShift::offset(-cs[1]);
          c.design = elanova::comparator_design(n[0], n[1], T, shift);
          c.tests.time_bootstrap = true;
          c.tests.bootstrap_B = a.B;
          c.tests.stat = stat;
          c.tests.comparator = true;
          push(std::move(c));
        }
  } else {
    throw Error("ContradictoryFlag", "--table takes 1..5");
  }

  elanova::MonteCarloOptions mco;
  mco.reps = a.reps;
  mco.level = a.level;
  mco.threads = a.threads;

  ordered_json rows = ordered_json::array();
  for (const auto& cell : cells) {
    elanova::MonteCarloRun run = elanova::monte_carlo(cell.design, cell.tests, mco);
    for (const auto& res : run.results) {
      ordered_json r;
      r["table"] = a.table;
      r["n1"] = cell.n[0];
      r["n2"] = cell.n[1];
      r["n3"] = cell.n[2];
      if (a.table == 1 || a.table == 3) {
        r["D2"] = cell.a;
        r["D3"] = cell.b;
      } else if (a.table == 2) {
        r["gamma2"] = cell.a;
      } else if (a.table == 4) {
        r["U"] = cell.a;
        r["V"] = cell.b;
      } else {
        r["case"] = static_cast<int>(cell.a);
        r["U"] = cell.b;
      }
      r["T"] = cell.T;
      r["mech"] = elanova::mechanism_name(cell.mech);
      r["test"] = res.test;
      r["reps"] = res.reps;
      r["failures"] = res.failures;
      r["rate"] = res.rate;
      r["mc_se"] = res.mc_se;
      r["missing_rate"] = run.missing_rate;
      rows.push_back(std::move(r));
    }
  }

  if (a.format == "csv") {
    std::ostringstream cs;
    cs << "table,n1,n2,n3,a,b,T,mech,test,reps,failures,rate,mc_se";
    int kmax = 3;
    for (int j = 0; j < kmax; ++j) cs << ",miss" << (j + 1);
    cs << "\n";
    for (const auto& r : rows) {
      cs << r["table"] << ',' << r["n1"] << ',' << r["n2"] << ',' << r["n3"] << ',';
      if (r.contains("D2"))
        cs << fmt_num(r["D2"].get<double>()) << ',' << fmt_num(r["D3"].get<double>());
      else if (r.contains("gamma2"))
        cs << fmt_num(r["gamma2"].get<double>()) << ',';
      else if (r.contains("V"))
        cs << fmt_num(r["U"].get<double>()) << ',' << fmt_num(r["V"].get<double>());
      else
        cs << r["case"] << ',' << fmt_num(r["U"].get<double>());
      cs << ',' << r["T"] << ',' << r["mech"].get<std::string>() << ','
         << r["test"].get<std::string>() << ',' << r["reps"] << ',' << r["failures"]
         << ',' << fmt_num(r["rate"].get<double>()) << ','
         << fmt_num(r["mc_se"].get<double>());
      const auto& miss = r["missing_rate"];
      for (int j = 0; j < kmax; ++j)
        cs << ','
           << (j < static_cast<int>(miss.size()) ? fmt_num(miss[j].get<double>())
                                                 : std::string("nan"));
      cs << "\n";
    }
    write_text(a.output, cs.str());
  } else {
    ordered_json out;
    out["table"] = a.table;
    out["rows"] = rows;
    ordered_json prov = provenance_block(cmdline, a.seed, a.threads, 0);
    prov["reps"] = a.reps;
    prov["B"] = a.B;
    prov["level"] = a.level;
    out["provenance"] = prov;
    write_json(a.output, out);
  }
  return 0;
}

// ------------------------------------------------------------- validate ----

struct ValidateArgs {
  InputFlags in;
  std::string output;
};

int run_validate(const ValidateArgs& a, const std::string& cmdline) {
  elanova::Study study = a.in.load();
  elanova::ValidationSummary sum = elanova::validate_study(study);
  ordered_json out;
  out["treatments"] = ordered_json::array();
  for (const auto& tr : sum.treatments) {
    ordered_json tj;
    tj["treatment"] = tr.treatment;
    tj["n"] = tr.n;
    tj["T"] = tr.T;
    tj["missing_rate"] = tr.missing_rate;
    out["treatments"].push_back(tj);
  }
  out["p"] = study.p;
  out["q"] = study.q;
  out["interaction"] = study.interaction_name;
  out["time_offset"] = study.time_offset;
  out["time_scale"] = study.time_scale;
  out["sigma_x_min_eig"] = sum.sigma_x_min_eig;
  out["warnings"] = sum.warnings;
  out["valid"] = true;
  out["provenance"] = provenance_block(cmdline, 0, 0, study.d);
  write_json(a.output, out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Empirical-likelihood ANOVA for longitudinal treatment comparisons"};
  app.require_subcommand(1);
  app.set_version_flag("--version", ELANOVA_VERSION);
  std::string cmdline = join_argv(argc, argv);

  AnovaArgs an;
  CLI::App* anova = app.add_subcommand("anova", "hypothesis tests on a CSV dataset");
  an.in.attach(anova);
  an.fitf.attach(anova);
  anova->add_option("--hypothesis", an.hypothesis,
                    "beta | gamma | interaction | g | g-asymptotic | curve-diff")
      ->required();
  anova->add_option("--treatment", an.treatment,
                    "treatment label for --hypothesis interaction");
  anova->add_option("--bootstrap", an.bootstrap_B, "bootstrap replicates for g");
  anova->add_option("--wild", an.wild, "wild weights: mammen, rademacher, normal");
  anova->add_option("--weight", an.weight, "integration weight: uniform or kde");
  anova->add_option("--weight-table", an.weight_table,
                    "CSV of time,weight pairs for a custom integration weight");
  anova->add_option("--grid", an.grid, "integration grid size");
  anova->add_option("--trim", an.trim, "lower integration endpoint for curve-diff");
  anova->add_option("--seed", an.seed, "bootstrap RNG seed");
  anova->add_option("--threads", an.threads, "worker cap (0 = hardware)");
  anova->add_option("--alpha", an.alpha, "decision levels")->delimiter(',');
  anova->add_option("--output,-o", an.output, "report path (default stdout)");
  anova->add_option("--curves", an.curves, "write fitted curves and local ratios (CSV)");

  PropArgs pa;
  CLI::App* fitp = app.add_subcommand("fit-propensity",
                                      "compare visit-level missingness models");
  pa.in.attach(fitp);
  fitp->add_option("--models", pa.models, "model names to compare")->delimiter(',');
  fitp->add_option("--output,-o", pa.output, "report path (default stdout)");

  BandwidthArgs ba;
  CLI::App* bw = app.add_subcommand("bandwidth", "cross-validation bandwidth table");
  ba.in.attach(bw);
  ba.fitf.attach(bw);
  bw->add_option("--output,-o", ba.output, "report path (default stdout)");

  SimulateArgs sa;
  CLI::App* sim = app.add_subcommand(
      "simulate",
      "Monte Carlo tables: 1 covariate equality, 2 interaction presence, "
      "3 interaction equality, 4 time-effect bootstrap, 5 two-group comparison");
  sim->add_option("--table", sa.table, "table number 1..5")->required();
  sim->add_option("--reps", sa.reps, "Monte Carlo replicates per cell");
  sim->add_option("--seed", sa.seed, "base RNG seed");
  sim->add_option("--threads", sa.threads, "worker cap (0 = hardware)");
  sim->add_option("--T", sa.T_filter, "restrict schedule lengths (default 5,10)")
      ->delimiter(',');
  sim->add_option("--mech", sa.mech_filter, "restrict dropout mechanisms (I,II)")
      ->delimiter(',');
  sim->add_option("--n-set", sa.nset_filter, "restrict sample sizes (small,large)")
      ->delimiter(',');
  sim->add_option("--B", sa.B, "bootstrap replicates inside tables 4 and 5");
  sim->add_option("--level", sa.level, "nominal test level");
  sim->add_option("--grid", sa.grid, "integration grid size");
  sim->add_option("--format", sa.format, "json or csv");
  sim->add_option("--output,-o", sa.output, "report path (default stdout)");

  ValidateArgs va;
  CLI::App* val = app.add_subcommand("validate", "structural checks on a CSV dataset");
  va.in.attach(val, false);
  val->add_option("--output,-o", va.output, "report path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(anova)) return run_anova(an, cmdline);
    if (app.got_subcommand(fitp)) return run_fit_propensity(pa, cmdline);
    if (app.got_subcommand(bw)) return run_bandwidth(ba, cmdline);
    if (app.got_subcommand(sim)) return run_simulate(sa, cmdline);
    if (app.got_subcommand(val)) return run_validate(va, cmdline);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return classify_exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
