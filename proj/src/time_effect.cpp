#include "elanova/time_effect.hpp"

#include "elanova/kernel.hpp"
#include "elanova/stats.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <utility>
#include <vector>

namespace elanova {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// time-sorted view of one sample's effective-observed visits with partial
// residuals and the plug-in curve at visit times
struct CurveState {
  double h = 0.0;
  int n = 0;        // subjects (including those without observed visits)
  int T = 0;        // scheduled visits per subject
  std::vector<int> subj;
  std::vector<double> t, w, u;
  std::vector<double> gt;  // plug-in curve at visit times
};

struct LocalSums {
  double D = 0.0;   // sum w K
  double Nu = 0.0;  // sum w K u
  double Ng = 0.0;  // sum w K gt
  int subjects = 0;  // distinct subjects carrying kernel mass
};

struct Window {
  int lo = 0, hi = 0;
};

Window window_of(const CurveState& s, double t) {
  auto lo = std::lower_bound(s.t.begin(), s.t.end(), t - s.h);
  auto hi = std::upper_bound(s.t.begin(), s.t.end(), t + s.h);
  return {static_cast<int>(lo - s.t.begin()), static_cast<int>(hi - s.t.begin())};
}

LocalSums local_sums(const KernelSpec& kern, const CurveState& s, double t) {
  LocalSums out;
  Window win = window_of(s, t);
  int last = -1;
  bool multi = false;
  for (int v = win.lo; v < win.hi; ++v) {
    double kv = s.w[v] * kernel_eval(kern, (s.t[v] - t) / s.h);
    if (kv <= 0.0) continue;
    out.D += kv;
    out.Nu += kv * s.u[v];
    out.Ng += kv * s.gt[v];
    if (last < 0) {
      last = s.subj[v];
      out.subjects = 1;
    } else if (!multi && s.subj[v] != last) {
      multi = true;
      out.subjects = 2;
    }
  }
  return out;
}

// per-sample state of the local EL at a fixed time: compact per-subject
// moment coefficients R_i(g) = a[i] - g * b[i] with b > 0, the exact feasible
// interval for g, and the curve values at that time
struct SampleLocal {
  std::vector<double> a, b;
  double lo = 0.0, hi = 0.0;  // (min, max) of a/b over contributing subjects
  double g_tilde = 0.0, g_hat = 0.0;
  bool ok = false;
};

// log EL ratio for a scalar mean-zero constraint: 2 sup_eta sum log(1 + eta R).
// R must carry both signs (or be all zero). eta_warm is updated in place.
double scalar_el_ratio(const std::vector<double>& R, double& eta_warm) {
  double rmin = kInf, rmax = -kInf;
  for (double r : R) {
    rmin = std::min(rmin, r);
    rmax = std::max(rmax, r);
  }
  if (rmin == 0.0 && rmax == 0.0) return 0.0;
  if (rmin >= 0.0 || rmax <= 0.0) return kInf;
  double scale = std::max(-rmin, rmax);
  double lo = -scale / rmax, hi = -scale / rmin;  // domain of eta * scale
  double margin = 1e-12 * (hi - lo);
  lo += margin;
  hi -= margin;
  double eta = eta_warm * scale;
  if (!(eta > lo && eta < hi)) eta = 0.0;
  auto dL = [&](double e) {
    double s = 0.0;
    for (double r : R) {
      double rs = r / scale;
      s += rs / (1.0 + e * rs);
    }
    return s;
  };
  // safeguarded Newton on the decreasing function dL
  double flo = dL(lo), fhi = dL(hi);
  if (flo <= 0.0) {
    eta = lo;
  } else if (fhi >= 0.0) {
    eta = hi;
  } else {
    for (int it = 0; it < 100; ++it) {
      double f = dL(eta);
      if (f > 0.0) {
        lo = eta;
      } else {
        hi = eta;
      }
      double d2 = 0.0;
      for (double r : R) {
        double rs = r / scale;
        double q = rs / (1.0 + eta * rs);
        d2 += q * q;
      }
      double step = (d2 > 0.0) ? f / d2 : 0.0;
      double next = eta + step;
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
      if (std::abs(next - eta) < 1e-14 * (1.0 + std::abs(eta))) {
        eta = next;
        break;
      }
      eta = next;
    }
  }
  eta_warm = eta / scale;
  double ell = 0.0;
  for (double r : R) ell += std::log1p(eta * (r / scale));
  return 2.0 * ell;
}

// bounded scalar minimization, golden section with parabolic steps
template <typename F>
double brent_min(F f, double a, double b, double tol, double* fmin) {
  const double gold = 0.3819660112501051;
  double x = a + gold * (b - a), w = x, v = x;
  double fx = f(x), fw = fx, fv = fx;
  double d = 0.0, e = 0.0;
  for (int it = 0; it < 80; ++it) {
    double m = 0.5 * (a + b);
    double t1 = tol * (std::abs(x) + 1e-12), t2 = 2.0 * t1;
    if (std::abs(x - m) <= t2 - 0.5 * (b - a)) break;
    bool golden = true;
    if (std::abs(e) > t1) {
      double r = (x - w) * (fx - fv);
      double q = (x - v) * (fx - fw);
      double p = (x - v) * q - (x - w) * r;
      q = 2.0 * (q - r);
      if (q > 0.0) p = -p;
      q = std::abs(q);
      if (std::abs(p) < std::abs(0.5 * q * e) && p > q * (a - x) && p < q * (b - x)) {
        e = d;
        d = p / q;
        double u = x + d;
        if (u - a < t2 || b - u < t2) d = (m > x) ? t1 : -t1;
        golden = false;
      }
    }
    if (golden) {
      e = (x < m) ? b - x : a - x;
      d = gold * e;
    }
    double u = (std::abs(d) >= t1) ? x + d : x + ((d > 0.0) ? t1 : -t1);
    double fu = f(u);
    if (fu <= fx) {
      if (u < x) {
        b = x;
      } else {
        a = x;
      }
      v = w;
      fv = fw;
      w = x;
      fw = fx;
      x = u;
      fx = fu;
    } else {
      if (u < x) {
        a = u;
      } else {
        b = u;
      }
      if (fu <= fw || w == x) {
        v = w;
        fv = fw;
        w = u;
        fw = fu;
      } else if (fu <= fv || v == x || v == w) {
        v = u;
        fv = fu;
      }
    }
  }
  if (fmin) *fmin = fx;
  return x;
}

double trapz_valid(const std::vector<double>& f, const std::vector<std::uint8_t>& valid,
                   double dt) {
  double s = 0.0;
  for (size_t i = 0; i + 1 < f.size(); ++i)
    if (valid[i] && valid[i + 1]) s += 0.5 * dt * (f[i] + f[i + 1]);
  return s;
}

// K^(4)_c(0), cached by the symmetric ratio min(c, 1/c)
double k4_cached(const KernelSpec& kern, double c) {
  double key = std::min(c, 1.0 / c);
  static thread_local std::map<long long, double> cache;
  long long q = std::llround(key * 1e9);
  auto it = cache.find(q);
  if (it != cache.end()) return it->second;
  double val = kernel_convolutions(kern, key, 1e-8).K4_c0;
  cache.emplace(q, val);
  return val;
}

}  // namespace

struct TimeEffect::Impl {
  const StudyFit* fit = nullptr;
  IntegratedStatConfig cfg;
  KernelSpec kern;
  int k = 0;
  std::vector<CurveState> cs;
  std::vector<double> grid;
  std::vector<std::uint8_t> valid;
  std::vector<double> wgt;  // normalized weight, zero where invalid
  bool weight_ok = false;
  int valid_count = 0;

  // scratch reused by the local profile
  mutable std::vector<SampleLocal> sl;
  mutable std::vector<double> accA, accB, R;
  mutable std::vector<double> eta_warm;

  void build();
  void build_weight();
  bool prepare_local(double t) const;  // fills sl; false when a window is empty
  double objective(double g) const;    // sum of per-sample EL ratios at common g
  LocalRatio profile(double t) const;
  std::vector<double> design_density(int j) const;  // on grid
};

void TimeEffect::Impl::build() {
  k = fit->k();
  cs.resize(k);
  int max_n = 0;
  for (int j = 0; j < k; ++j) {
    const EstimatingContext& ctx = fit->samples[j].ctx;
    CurveState& s = cs[j];
    s.h = ctx.h;
    s.n = ctx.n;
    s.T = fit->samples[j].sample->schedule_len;
    int V = ctx.V();
    Eigen::VectorXd u = ctx.y;
    if (ctx.p > 0) u -= ctx.X * ctx.beta_hat;
    if (ctx.q > 0) u -= ctx.M * ctx.gamma_hat;
    std::vector<int> ord(V);
    std::iota(ord.begin(), ord.end(), 0);
    std::sort(ord.begin(), ord.end(),
              [&](int a, int b) { return ctx.t[a] < ctx.t[b]; });
    s.subj.resize(V);
    s.t.resize(V);
    s.w.resize(V);
    s.u.resize(V);
    std::vector<int> owner(V);
    for (int i = 0; i < ctx.n; ++i)
      for (int v = ctx.start[i]; v < ctx.start[i + 1]; ++v) owner[v] = i;
    for (int r = 0; r < V; ++r) {
      int v = ord[r];
      s.subj[r] = owner[v];
      s.t[r] = ctx.t[v];
      s.w[r] = ctx.c[v];
      s.u[r] = u[v];
    }
    // plug-in curve at the visit times themselves
    s.gt.assign(V, 0.0);
    for (int r = 0; r < V; ++r) {
      Window win = window_of(s, s.t[r]);
      double D = 0.0, N = 0.0;
      for (int v = win.lo; v < win.hi; ++v) {
        double kv = s.w[v] * kernel_eval(kern, (s.t[v] - s.t[r]) / s.h);
        D += kv;
        N += kv * s.u[v];
      }
      s.gt[r] = N / D;  // D > 0: the visit itself has positive weight
    }
    max_n = std::max(max_n, ctx.n);
  }

  int G = std::max(2, cfg.grid_size);
  grid.resize(G);
  for (int g = 0; g < G; ++g) grid[g] = static_cast<double>(g) / (G - 1);
  valid.assign(G, 1);
  for (int g = 0; g < G; ++g) {
    for (int j = 0; j < k && valid[g]; ++j) {
      LocalSums ls = local_sums(kern, cs[j], grid[g]);
      if (ls.D <= 0.0 || ls.subjects < 2) valid[g] = 0;
    }
    if (valid[g]) ++valid_count;
  }
  build_weight();

  sl.resize(k);
  accA.resize(max_n);
  accB.resize(max_n);
  eta_warm.assign(k, 0.0);
}

void TimeEffect::Impl::build_weight() {
  int G = static_cast<int>(grid.size());
  std::vector<double> raw(G, 0.0);
  switch (cfg.weight.kind) {
    case WeightFunction::Kind::Uniform:
      std::fill(raw.begin(), raw.end(), 1.0);
      break;
    case WeightFunction::Kind::PooledKDE: {
      std::vector<double> pool;
      for (const auto& sample : fit->study->samples)
        for (const auto& subj : sample.subjects)
          pool.insert(pool.end(), subj.times.begin(), subj.times.end());
      double n = static_cast<double>(pool.size());
      if (n < 2) throw Error("EmptyWeightRegion", "too few visit times for a pooled density weight");
      double mean = std::accumulate(pool.begin(), pool.end(), 0.0) / n;
      double ss = 0.0;
      for (double v : pool) ss += (v - mean) * (v - mean);
      double sd = std::sqrt(ss / (n - 1));
      std::vector<double> sorted = pool;
      std::sort(sorted.begin(), sorted.end());
      double iqr = sorted[static_cast<size_t>(0.75 * (n - 1))] -
                   sorted[static_cast<size_t>(0.25 * (n - 1))];
      double spread = std::min(sd, iqr / 1.34);
      if (spread <= 0.0) spread = std::max(sd, 1e-3);
      double hw = 0.9 * spread * std::pow(n, -0.2);
      for (int g = 0; g < G; ++g) {
        double acc = 0.0;
        for (double v : pool) acc += kernel_eval(kern, (v - grid[g]) / hw);
        raw[g] = acc / (n * hw);
      }
      break;
    }
    case WeightFunction::Kind::Table: {
      const auto& tt = cfg.weight.table_t;
      const auto& tw = cfg.weight.table_w;
      if (tt.size() != tw.size() || tt.size() < 2 ||
          !std::is_sorted(tt.begin(), tt.end()))
        throw Error("BadWeightTable", "weight table needs sorted times and matching values");
      for (double v : tw)
        if (!(v >= 0.0)) throw Error("BadWeightTable", "weight values must be nonnegative");
      for (int g = 0; g < G; ++g) {
        double t = grid[g];
        if (t <= tt.front()) {
          raw[g] = tw.front();
        } else if (t >= tt.back()) {
          raw[g] = tw.back();
        } else {
          auto it = std::upper_bound(tt.begin(), tt.end(), t);
          size_t i = it - tt.begin();
          double f = (t - tt[i - 1]) / (tt[i] - tt[i - 1]);
          raw[g] = (1.0 - f) * tw[i - 1] + f * tw[i];
        }
      }
      break;
    }
  }
  double dt = grid[1] - grid[0];
  double norm = trapz_valid(raw, valid, dt);
  wgt.assign(G, 0.0);
  weight_ok = norm > 0.0;
  if (weight_ok)
    for (int g = 0; g < G; ++g)
      if (valid[g]) wgt[g] = raw[g] / norm;
}

bool TimeEffect::Impl::prepare_local(double t) const {
  for (int j = 0; j < k; ++j) {
    const CurveState& s = cs[j];
    SampleLocal& loc = sl[j];
    loc.ok = false;
    LocalSums ls = local_sums(kern, s, t);
    if (ls.D <= 0.0) return false;
    loc.g_tilde = ls.Nu / ls.D;
    loc.g_hat = 2.0 * loc.g_tilde - ls.Ng / ls.D;
    std::fill(accA.begin(), accA.begin() + s.n, 0.0);
    std::fill(accB.begin(), accB.begin() + s.n, 0.0);
    Window win = window_of(s, t);
    for (int v = win.lo; v < win.hi; ++v) {
      double kv = s.w[v] * kernel_eval(kern, (s.t[v] - t) / s.h);
      if (kv <= 0.0) continue;
      accA[s.subj[v]] += kv * (s.u[v] - s.gt[v]);
      accB[s.subj[v]] += kv;
    }
    loc.a.clear();
    loc.b.clear();
    loc.lo = kInf;
    loc.hi = -kInf;
    for (int i = 0; i < s.n; ++i) {
      if (accB[i] <= 0.0) continue;
      double ai = accA[i] + accB[i] * loc.g_tilde;
      loc.a.push_back(ai);
      loc.b.push_back(accB[i]);
      double r = ai / accB[i];
      loc.lo = std::min(loc.lo, r);
      loc.hi = std::max(loc.hi, r);
    }
    if (loc.a.empty()) return false;
    loc.ok = true;
  }
  return true;
}

double TimeEffect::Impl::objective(double g) const {
  double total = 0.0;
  for (int j = 0; j < k; ++j) {
    const SampleLocal& loc = sl[j];
    R.resize(loc.a.size());
    for (size_t i = 0; i < loc.a.size(); ++i) R[i] = loc.a[i] - g * loc.b[i];
    double ell = scalar_el_ratio(R, eta_warm[j]);
    if (!std::isfinite(ell)) return kInf;
    total += ell;
  }
  return total;
}

LocalRatio TimeEffect::Impl::profile(double t) const {
  LocalRatio out;
  out.value = kInf;
  out.g_star = kNaN;
  if (!prepare_local(t)) return out;
  double glo = -kInf, ghi = kInf;
  double gmin = kInf, gmax = -kInf;
  for (int j = 0; j < k; ++j) {
    glo = std::max(glo, sl[j].lo);
    ghi = std::min(ghi, sl[j].hi);
    gmin = std::min(gmin, sl[j].g_hat);
    gmax = std::max(gmax, sl[j].g_hat);
  }
  if (glo > ghi) return out;  // the feasible intervals do not intersect
  if (ghi - glo < 1e-13 * (1.0 + std::abs(glo))) {
    double g = 0.5 * (glo + ghi);
    double v = objective(g);
    if (std::isfinite(v)) {
      out.value = v;
      out.g_star = g;
      out.feasible = true;
    }
    return out;
  }
  double margin = 1e-9 * (ghi - glo);
  double span = gmax - gmin;
  double pad = 0.5 * (cfg.bracket_mult - 1.0) * span + 1e-8 * (1.0 + std::abs(gmin));
  double a = std::max(glo + margin, gmin - pad);
  double b = std::min(ghi - margin, gmax + pad);
  if (!(a < b)) {  // the curve bracket misses the feasible set; search all of it
    a = glo + margin;
    b = ghi - margin;
  }
  const int nc = 17;
  int best = 0;
  double fbest = kInf;
  std::vector<double> xs(nc), fs(nc);
  for (int i = 0; i < nc; ++i) {
    xs[i] = a + (b - a) * i / (nc - 1);
    fs[i] = objective(xs[i]);
    if (fs[i] < fbest) {
      fbest = fs[i];
      best = i;
    }
  }
  if (!std::isfinite(fbest)) return out;
  double ba = xs[std::max(0, best - 1)];
  double bb = xs[std::min(nc - 1, best + 1)];
  double fmin = fbest;
  double gstar = brent_min([&](double g) { return objective(g); }, ba, bb, 1e-8, &fmin);
  if (fmin > fbest) {
    fmin = fbest;
    gstar = xs[best];
  }
  out.value = fmin;
  out.g_star = gstar;
  out.feasible = true;
  return out;
}

std::vector<double> TimeEffect::Impl::design_density(int j) const {
  const CurveState& s = cs[j];
  std::vector<double> f(grid.size(), 0.0);
  double denom = static_cast<double>(s.n) * s.T * s.h;
  for (size_t g = 0; g < grid.size(); ++g) {
    Window win = window_of(s, grid[g]);
    double acc = 0.0;
    for (int v = win.lo; v < win.hi; ++v)
      acc += s.w[v] * kernel_eval(kern, (s.t[v] - grid[g]) / s.h);
    f[g] = acc / denom;
  }
  return f;
}

TimeEffect::TimeEffect(const StudyFit& fit, const IntegratedStatConfig& cfg)
    : impl_(new Impl) {
  impl_->fit = &fit;
  impl_->cfg = cfg;
  impl_->kern = fit.opts.kernel;
  impl_->build();
}

TimeEffect::~TimeEffect() = default;
TimeEffect::TimeEffect(TimeEffect&&) noexcept = default;

const std::vector<double>& TimeEffect::grid() const { return impl_->grid; }
const std::vector<std::uint8_t>& TimeEffect::valid() const { return impl_->valid; }

double TimeEffect::g_tilde(int sample_idx, double t) const {
  LocalSums ls = local_sums(impl_->kern, impl_->cs[sample_idx], t);
  return ls.D > 0.0 ? ls.Nu / ls.D : kNaN;
}

double TimeEffect::g_hat(int sample_idx, double t) const {
  LocalSums ls = local_sums(impl_->kern, impl_->cs[sample_idx], t);
  return ls.D > 0.0 ? 2.0 * ls.Nu / ls.D - ls.Ng / ls.D : kNaN;
}

Eigen::VectorXd TimeEffect::g_hat_at_visits(int sample_idx) const {
  const CurveState& s = impl_->cs[sample_idx];
  const EstimatingContext& ctx = impl_->fit->samples[sample_idx].ctx;
  int V = static_cast<int>(s.t.size());
  // values computed on the sorted view, then scattered back to context order
  std::vector<int> ord(V);
  std::iota(ord.begin(), ord.end(), 0);
  std::sort(ord.begin(), ord.end(),
            [&](int a, int b) { return ctx.t[a] < ctx.t[b]; });
  Eigen::VectorXd out(V);
  for (int r = 0; r < V; ++r) {
    LocalSums ls = local_sums(impl_->kern, s, s.t[r]);
    out[ord[r]] = 2.0 * ls.Nu / ls.D - ls.Ng / ls.D;
  }
  return out;
}

LocalRatio TimeEffect::local_el_ratio(double t) const { return impl_->profile(t); }

TimeEffectResult TimeEffect::integrated_statistic() const {
  const auto& grid = impl_->grid;
  const auto& valid = impl_->valid;
  TimeEffectResult res;
  res.grid = grid;
  res.valid = valid;
  res.weight = impl_->wgt;
  res.Ln.assign(grid.size(), kNaN);
  if (!impl_->cfg.restrict_to_valid && impl_->valid_count < static_cast<int>(grid.size()))
    throw Error("EmptyWindow", "some grid times have an empty kernel window; "
                               "enlarge bandwidths or allow restriction");
  if (impl_->valid_count < 2 || !impl_->weight_ok)
    throw Error("EmptyWeightRegion", "no valid integration segment on the time grid");
  std::fill(impl_->eta_warm.begin(), impl_->eta_warm.end(), 0.0);
  std::vector<double> integrand(grid.size(), 0.0);
  for (size_t g = 0; g < grid.size(); ++g) {
    if (!valid[g]) continue;
    LocalRatio lr = impl_->profile(grid[g]);
    res.Ln[g] = lr.feasible ? lr.value : kInf;
    integrand[g] = res.Ln[g] * impl_->wgt[g];
  }
  double dt = grid[1] - grid[0];
  res.Tn = trapz_valid(integrand, valid, dt);
  return res;
}

Sigma0Estimate TimeEffect::estimate_sigma0() const {
  const auto& grid = impl_->grid;
  const auto& valid = impl_->valid;
  int k = impl_->k;
  if (impl_->valid_count < 2 || !impl_->weight_ok)
    throw Error("EmptyWeightRegion", "no valid integration segment on the time grid");
  Sigma0Estimate est;
  est.sigma2_eps.resize(k);
  est.a.resize(k);
  est.b.resize(k);
  est.rho.resize(k);

  long long Tl = 1;
  double Ntot = 0.0;
  for (int j = 0; j < k; ++j) {
    Tl = std::lcm(Tl, static_cast<long long>(impl_->cs[j].T));
    Ntot += impl_->cs[j].n;
  }
  double log_h = 0.0;
  for (int j = 0; j < k; ++j) log_h += std::log(impl_->cs[j].h);
  est.h_ref = std::exp(log_h / k);
  est.K2_0 = kernel_convolutions(impl_->kern, 1.0, 1e-9).K2_0;

  std::vector<std::vector<double>> f(k);
  for (int j = 0; j < k; ++j) {
    const CurveState& s = impl_->cs[j];
    Eigen::VectorXd gh = g_hat_at_visits(j);
    const EstimatingContext& ctx = impl_->fit->samples[j].ctx;
    Eigen::VectorXd u = ctx.y;
    if (ctx.p > 0) u -= ctx.X * ctx.beta_hat;
    if (ctx.q > 0) u -= ctx.M * ctx.gamma_hat;
    double acc = 0.0;
    for (int v = 0; v < ctx.V(); ++v) {
      double e = u[v] - gh[v];
      acc += ctx.c[v] * e * e;
    }
    est.sigma2_eps[j] = acc / (static_cast<double>(s.n) * s.T);
    if (!(est.sigma2_eps[j] > 0.0))
      throw Error("DegenerateResiduals", "residual variance vanished in one treatment");
    est.rho[j] = s.n / Ntot;
    est.a[j] = (static_cast<double>(Tl) / s.T) / est.rho[j];
    est.b[j] = est.h_ref / s.h;
    f[j] = impl_->design_density(j);
  }

  std::vector<double> lam(grid.size(), 0.0);
  std::vector<double> W(k);
  for (size_t g = 0; g < grid.size(); ++g) {
    if (!valid[g]) continue;
    double S = 0.0;
    for (int j = 0; j < k; ++j) {
      W[j] = f[j][g] / (est.a[j] * est.b[j] * est.sigma2_eps[j]);
      S += W[j];
    }
    for (int j = 0; j < k; ++j) W[j] /= S;
    double v = 0.0;
    for (int j = 0; j < k; ++j)
      v += k4_cached(impl_->kern, 1.0) / est.b[j] * (1.0 - W[j]) * (1.0 - W[j]);
    for (int j = 0; j < k; ++j)
      for (int l = 0; l < k; ++l) {
        if (l == j) continue;
        v += k4_cached(impl_->kern, est.b[j] / est.b[l]) /
             std::sqrt(est.b[j] * est.b[l]) * W[j] * W[l];
      }
    lam[g] = v * impl_->wgt[g] * impl_->wgt[g];
  }
  double dt = grid[1] - grid[0];
  est.sigma0_sq = 2.0 / (est.K2_0 * est.K2_0) * trapz_valid(lam, valid, dt);
  return est;
}

TestReport asymptotic_g_test(const StudyFit& fit, const IntegratedStatConfig& cfg,
                             const GTestOptions& opts) {
  TimeEffect te(fit, cfg);
  TimeEffectResult res = te.integrated_statistic();
  Sigma0Estimate s0 = te.estimate_sigma0();
  int k = fit.k();
  double denom = std::sqrt(s0.h_ref) * std::sqrt(s0.sigma0_sq);
  double z = (res.Tn - (k - 1)) / denom;
  TestReport rep;
  rep.test = "time-effect-asymptotic";
  rep.statistic = res.Tn;
  rep.df = 0.0;
  rep.null_dist = "normal";
  rep.p_value = std::isfinite(z) ? normal_sf(z) : (z > 0 ? 0.0 : 1.0);
  for (double a : opts.levels) rep.reject[a] = rep.p_value <= a;
  rep.meta["z"] = z;
  rep.meta["sigma0_sq"] = s0.sigma0_sq;
  rep.meta["h_ref"] = s0.h_ref;
  rep.meta["grid_size"] = static_cast<int>(res.grid.size());
  int nv = 0;
  for (auto v : res.valid) nv += v;
  rep.meta["valid_fraction"] = static_cast<double>(nv) / res.grid.size();
  return rep;
}

TestReport cumulative_difference_test(const StudyFit& fit, int label1, int label2,
                                      double trim, const GTestOptions& opts) {
  int i1 = -1, i2 = -1;
  for (int j = 0; j < fit.k(); ++j) {
    if (fit.samples[j].sample->label == label1) i1 = j;
    if (fit.samples[j].sample->label == label2) i2 = j;
  }
  if (i1 < 0 || i2 < 0)
    throw Error("UnknownTreatment", "cumulative difference needs two known treatment labels");
  if (!(trim >= 0.0 && trim < 0.5))
    throw Error("BadTrim", "trim must lie in [0, 0.5)");

  const KernelSpec& kern = fit.opts.kernel;
  const int G = 101;
  std::array<int, 2> idx{i1, i2};
  std::vector<double> grid(G);
  for (int g = 0; g < G; ++g)
    grid[g] = trim + (1.0 - 2.0 * trim) * g / (G - 1);

  std::array<std::vector<double>, 2> gh, s2, fd;
  std::array<int, 2> nsub{};
  std::vector<std::uint8_t> ok(G, 1);
  for (int a = 0; a < 2; ++a) {
    const EstimatingContext& ctx = fit.samples[idx[a]].ctx;
    int T = fit.samples[idx[a]].sample->schedule_len;
    nsub[a] = ctx.n;
    CurveState s;
    s.h = ctx.h;
    s.n = ctx.n;
    s.T = T;
    int V = ctx.V();
    Eigen::VectorXd u = ctx.y;
    if (ctx.p > 0) u -= ctx.X * ctx.beta_hat;
    if (ctx.q > 0) u -= ctx.M * ctx.gamma_hat;
    std::vector<int> ord(V);
    std::iota(ord.begin(), ord.end(), 0);
    std::sort(ord.begin(), ord.end(),
              [&](int x, int y) { return ctx.t[x] < ctx.t[y]; });
    s.subj.assign(V, 0);
    s.t.resize(V);
    s.w.resize(V);
    s.u.resize(V);
    for (int r = 0; r < V; ++r) {
      s.t[r] = ctx.t[ord[r]];
      s.w[r] = ctx.c[ord[r]];
      s.u[r] = u[ord[r]];
    }
    // plug-in curve and squared residuals at visit times
    std::vector<double> res2(V, 0.0);
    for (int r = 0; r < V; ++r) {
      Window win = window_of(s, s.t[r]);
      double D = 0.0, N = 0.0;
      for (int v = win.lo; v < win.hi; ++v) {
        double kv = s.w[v] * kernel_eval(kern, (s.t[v] - s.t[r]) / s.h);
        D += kv;
        N += kv * s.u[v];
      }
      double e = s.u[r] - N / D;
      res2[r] = e * e;
    }
    gh[a].assign(G, 0.0);
    s2[a].assign(G, 0.0);
    fd[a].assign(G, 0.0);
    double denom = static_cast<double>(s.n) * T * s.h;
    for (int g = 0; g < G; ++g) {
      Window win = window_of(s, grid[g]);
      double D = 0.0, N = 0.0, Q = 0.0;
      for (int v = win.lo; v < win.hi; ++v) {
        double kv = s.w[v] * kernel_eval(kern, (s.t[v] - grid[g]) / s.h);
        D += kv;
        N += kv * s.u[v];
        Q += kv * res2[v];
      }
      if (D <= 0.0) {
        ok[g] = 0;
        continue;
      }
      gh[a][g] = N / D;
      s2[a][g] = Q / D;
      fd[a][g] = D / denom;
      if (fd[a][g] < 1e-10) ok[g] = 0;
    }
  }
  int nok = 0;
  for (auto v : ok) nok += v;
  if (nok < 2)
    throw Error("DegenerateDensity", "design density vanishes over the whole trimmed range");

  double dt = grid[1] - grid[0];
  std::vector<double> diff(G, 0.0), varint(G, 0.0);
  for (int g = 0; g < G; ++g) {
    if (!ok[g]) continue;
    diff[g] = gh[0][g] - gh[1][g];
    varint[g] = s2[0][g] / (fd[0][g] * nsub[0]) + s2[1][g] / (fd[1][g] * nsub[1]);
  }
  double T = trapz_valid(diff, ok, dt);
  double V = trapz_valid(varint, ok, dt);
  if (!(V > 0.0))
    throw Error("DegenerateDensity", "cumulative difference variance vanished");
  double z = T / std::sqrt(V);
  TestReport rep;
  rep.test = "cumulative-difference";
  rep.statistic = z;
  rep.df = 0.0;
  rep.null_dist = "normal";
  rep.p_value = 2.0 * normal_sf(std::abs(z));
  for (double a : opts.levels) rep.reject[a] = rep.p_value <= a;
  rep.meta["T"] = T;
  rep.meta["var"] = V;
  rep.meta["trim"] = trim;
  rep.meta["labels"] = {label1, label2};
  return rep;
}

}  // namespace elanova
