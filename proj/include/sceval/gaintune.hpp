#pragma once

// Short-circuit-level probing via dQ/dV, gain selection from a calibration
// table, the gain<->reactance calibration sweep with polynomial fitting and
// monotone inversion, and the passive stepwise gain-reduction scheme.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sceval/errors.hpp"
#include "sceval/simcore.hpp"

namespace sceval::gaintune {

struct CalibrationPoint {
  double l_henry = 0.0;
  double dqdv = 0.0;  // GVAR per pu volt
  double gain = 0.0;
};

struct CalibrationTable {
  std::vector<CalibrationPoint> points;  // ascending l_henry

  void validate() const {
    if (points.size() < 3) throw RangeError("calibration table needs >= 3 points");
    for (const auto& pt : points)
      if (!(pt.l_henry > 0.0) || !(pt.dqdv > 0.0) || !(pt.gain > 0.0))
        throw RangeError("calibration point fields must be positive");
    for (std::size_t i = 1; i < points.size(); ++i) {
      if (!(points[i].l_henry > points[i - 1].l_henry))
        throw NonMonotonic("l_henry must be strictly increasing");
      if (!(points[i].dqdv < points[i - 1].dqdv))
        throw NonMonotonic("dqdv must be strictly decreasing in l_henry");
      if (!(points[i].gain < points[i - 1].gain))
        throw NonMonotonic("gain must be strictly decreasing in l_henry");
    }
  }
};

// The published project-specific table for the 230 kV / 125 MVAR device; the
// vendor lookup intervals it came with are documented in docs/formats.md.
inline CalibrationTable default_vendor_table() {
  return CalibrationTable{{{0.01, 14.3, 23.35},
                           {0.02, 7.0, 16.25},
                           {0.025, 5.342857143, 14.06}}};
}

// gain as polynomial in l_henry, ascending powers
struct PolyFit {
  std::vector<double> coeffs;
  int degree = 2;
  std::pair<double, double> valid_gain_range{0.0, 25.0};
  double residual_rms = 0.0;

  double eval(double l) const {
    double acc = 0.0;
    for (std::size_t k = coeffs.size(); k-- > 0;) acc = acc * l + coeffs[k];
    return acc;
  }
  double deriv(double l) const {
    double acc = 0.0;
    for (std::size_t k = coeffs.size(); k-- > 1;)
      acc = acc * l + coeffs[k] * static_cast<double>(k);
    return acc;
  }
};

struct ProbeConfig {
  double delta_q_mvar = 5.0;          // open-loop injection, ~4% of nominal
  double hold_s = 0.5;
  double settle_tol_pu_per_s = 2e-5;  // |dV/dt| threshold for "settled"
  double max_settle_s = 8.0;
  double dt = 1.0 / 9600.0;
};

struct ProbeResult {
  double dqdv = 0.0;      // GVAR per pu volt
  double elapsed_s = 0.0;
  double v_settled = 0.0;
  double q_settled = 0.0;
  simcore::StatcomState state{};
};

namespace detail {

// Runs the closed loop until the bus voltage stops moving, then injects a
// fixed open-loop Q offset through the converter lag and measures the settled
// voltage change.
inline ProbeResult run_probe(const simcore::StatcomParams& p,
                             const simcore::GridEquivalent& g,
                             const ProbeConfig& cfg) {
  if (g.mode != simcore::GridMode::thevenin)
    throw RangeError("dQ/dV probing needs a thevenin grid");
  p.validate();
  g.validate();

  const double dt = cfg.dt;
  auto s = simcore::StatcomState::initial(p);
  const auto window = static_cast<std::size_t>(std::llround(0.1 / dt));
  const auto max_steps = static_cast<std::size_t>(std::llround(cfg.max_settle_s / dt));

  // settled = the voltage's full excursion over a trailing window stays under
  // the tolerance; endpoint slopes alone would alias on an oscillating bus
  std::vector<double> recent(window + 1, 0.0);
  std::size_t filled = 0;
  double v = simcore::grid_voltage(g, s.q_act);
  bool settled = false;
  std::size_t k = 0;
  for (; k < max_steps; ++k) {
    s = simcore::controller_step(s, p, v, dt);
    v = simcore::grid_voltage(g, s.q_act);
    recent[k % (window + 1)] = v;
    if (filled <= window) ++filled;
    if (filled > window) {
      auto [lo, hi] = std::minmax_element(recent.begin(), recent.end());
      double excursion_rate = (*hi - *lo) / (static_cast<double>(window) * dt);
      if (excursion_rate < cfg.settle_tol_pu_per_s) {
        settled = true;
        break;
      }
    }
  }
  if (!settled) throw NotSettled("bus voltage did not settle before probing");

  const double v0 = v;
  const double q_frozen = s.q_cmd + cfg.delta_q_mvar;
  const auto hold_steps = static_cast<std::size_t>(std::llround(cfg.hold_s / dt));
  for (std::size_t h = 0; h < hold_steps; ++h) {
    // open loop: command frozen, only the converter lag and the grid respond
    s.q_cmd = q_frozen;
    s.q_act += (s.q_cmd - s.q_act) * dt / p.tau_conv;
    s.t += dt;
    v = simcore::grid_voltage(g, s.q_act);
  }
  const double dv = v - v0;
  if (std::abs(dv) < 1e-9)
    throw ZeroDeltaV("voltage did not respond to the probe injection");

  ProbeResult r;
  r.dqdv = (cfg.delta_q_mvar / dv) / 1000.0;
  r.elapsed_s = (static_cast<double>(k) + static_cast<double>(hold_steps)) * dt;
  r.v_settled = v0;
  r.q_settled = s.q_act;
  r.state = s;
  return r;
}

}  // namespace detail

inline double probe_dqdv(const simcore::StatcomParams& p, const simcore::GridEquivalent& g,
                         const ProbeConfig& cfg = {}) {
  return detail::run_probe(p, g, cfg).dqdv;
}

inline bool dqdv_within_span(double dqdv, const CalibrationTable& table) {
  return dqdv >= table.points.back().dqdv && dqdv <= table.points.front().dqdv;
}

// Gain for a measured dQ/dV: quadratic through the three table nodes adjacent
// to the query, with the end quadratic continued a bounded distance past the
// span (the query is clamped 30% beyond the end nodes) and the result capped
// at the fit-validity ceiling of 25. The triple is fixed per node interval so
// the map stays continuous; any interval where the quadratic is not monotone
// falls back to linear interpolation.
inline double gain_from_dqdv(double dqdv, const CalibrationTable& table) {
  table.validate();
  struct Node { double d, g; };
  std::vector<Node> nodes;
  nodes.reserve(table.points.size());
  for (auto it = table.points.rbegin(); it != table.points.rend(); ++it)
    nodes.push_back({it->dqdv, it->gain});  // ascending dqdv
  const std::size_t count = nodes.size();

  const double lo = nodes.front().d, hi = nodes.back().d;
  const double ext = 0.30;
  const double dom_lo = lo * (1.0 - ext), dom_hi = hi * (1.0 + ext);
  const double x = std::clamp(dqdv, dom_lo, dom_hi);

  // containing node interval; end intervals extend over the clamped domain
  std::size_t i = 0;
  while (i + 2 < count && x > nodes[i + 1].d) ++i;
  const double seg_lo = (i == 0) ? dom_lo : nodes[i].d;
  const double seg_hi = (i + 2 == count) ? dom_hi : nodes[i + 1].d;

  const std::size_t t0 = std::min((i == 0) ? 0 : i - 1, count - 3);
  const Node n0 = nodes[t0], n1 = nodes[t0 + 1], n2 = nodes[t0 + 2];

  auto lagrange = [&](double q) {
    double l0 = (q - n1.d) * (q - n2.d) / ((n0.d - n1.d) * (n0.d - n2.d));
    double l1 = (q - n0.d) * (q - n2.d) / ((n1.d - n0.d) * (n1.d - n2.d));
    double l2 = (q - n0.d) * (q - n1.d) / ((n2.d - n0.d) * (n2.d - n1.d));
    return n0.g * l0 + n1.g * l1 + n2.g * l2;
  };
  auto lagrange_deriv = [&](double q) {
    double l0 = (2.0 * q - n1.d - n2.d) / ((n0.d - n1.d) * (n0.d - n2.d));
    double l1 = (2.0 * q - n0.d - n2.d) / ((n1.d - n0.d) * (n1.d - n2.d));
    double l2 = (2.0 * q - n0.d - n1.d) / ((n2.d - n0.d) * (n2.d - n1.d));
    return n0.g * l0 + n1.g * l1 + n2.g * l2;
  };

  double result;
  if (lagrange_deriv(seg_lo) >= 0.0 && lagrange_deriv(seg_hi) >= 0.0) {
    result = lagrange(x);
  } else {
    // monotone fallback: linear through the interval's nodes
    const Node a = nodes[i], b = nodes[i + 1];
    result = a.g + (b.g - a.g) * (x - a.d) / (b.d - a.d);
  }
  const double floor_gain = 0.5 * nodes.front().g;
  return std::clamp(result, floor_gain, 25.0);
}

// Sweeps the external reactance, probing dQ/dV at each value and selecting
// the gain from the seed table. The resulting columns must stay monotone.
inline CalibrationTable calibrate(std::vector<double> l_values,
                                  const simcore::StatcomParams& p,
                                  const ProbeConfig& cfg = {},
                                  const CalibrationTable& seed = default_vendor_table()) {
  std::sort(l_values.begin(), l_values.end());
  l_values.erase(std::unique(l_values.begin(), l_values.end()), l_values.end());
  if (l_values.size() < 3)
    throw RangeError("calibration needs >= 3 distinct inductance values");

  CalibrationTable out;
  for (double l : l_values) {
    if (!(l > 0.0)) throw RangeError("inductance values must be > 0");
    simcore::GridEquivalent g;
    g.mode = simcore::GridMode::thevenin;
    g.l_henry = l;
    double dqdv = probe_dqdv(p, g, cfg);
    out.points.push_back({l, dqdv, gain_from_dqdv(dqdv, seed)});
  }
  out.validate();  // throws NonMonotonic if probing broke the ordering
  return out;
}

namespace detail {

// least squares via normal equations on centered/scaled abscissae
inline std::vector<double> polyfit_raw(const std::vector<double>& xs,
                                       const std::vector<double>& ys, int degree) {
  const std::size_t n = xs.size();
  const auto m = static_cast<std::size_t>(degree) + 1;

  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(n);
  double scale = 0.0;
  for (double x : xs) scale = std::max(scale, std::abs(x - mean));
  if (scale < 1e-12) throw IllConditioned("near-duplicate abscissae");

  std::vector<std::vector<double>> ata(m, std::vector<double>(m, 0.0));
  std::vector<double> atb(m, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    double u = (xs[r] - mean) / scale;
    std::vector<double> pow(m, 1.0);
    for (std::size_t k = 1; k < m; ++k) pow[k] = pow[k - 1] * u;
    for (std::size_t a = 0; a < m; ++a) {
      atb[a] += pow[a] * ys[r];
      for (std::size_t b = 0; b < m; ++b) ata[a][b] += pow[a] * pow[b];
    }
  }

  // Gaussian elimination, partial pivoting
  for (std::size_t col = 0; col < m; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < m; ++r)
      if (std::abs(ata[r][col]) > std::abs(ata[piv][col])) piv = r;
    if (std::abs(ata[piv][col]) < 1e-12)
      throw IllConditioned("singular normal equations (near-duplicate abscissae?)");
    std::swap(ata[col], ata[piv]);
    std::swap(atb[col], atb[piv]);
    for (std::size_t r = 0; r < m; ++r) {
      if (r == col) continue;
      double f = ata[r][col] / ata[col][col];
      for (std::size_t c = col; c < m; ++c) ata[r][c] -= f * ata[col][c];
      atb[r] -= f * atb[col];
    }
  }
  std::vector<double> scaled(m);
  for (std::size_t k = 0; k < m; ++k) scaled[k] = atb[k] / ata[k][k];

  // expand sum b_k ((x-mean)/scale)^k back to ascending powers of x
  std::vector<double> raw(m, 0.0);
  std::vector<double> term{1.0};  // ((x-mean)/scale)^k expanded
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t c = 0; c < term.size(); ++c) raw[c] += scaled[k] * term[c];
    if (k + 1 < m) {
      std::vector<double> next(term.size() + 1, 0.0);
      for (std::size_t c = 0; c < term.size(); ++c) {
        next[c] += term[c] * (-mean / scale);
        next[c + 1] += term[c] / scale;
      }
      term = std::move(next);
    }
  }
  return raw;
}

// first stationary point of the fit inside [lo, hi], or hi if none
inline double monotone_branch_end(const PolyFit& fit, double lo, double hi) {
  const int grid = 2048;
  double prev = fit.deriv(lo);
  for (int k = 1; k <= grid; ++k) {
    double x = lo + (hi - lo) * static_cast<double>(k) / grid;
    double d = fit.deriv(x);
    if (prev != 0.0 && d != 0.0 && (prev > 0.0) != (d > 0.0)) {
      double a = lo + (hi - lo) * static_cast<double>(k - 1) / grid, b = x;
      for (int it = 0; it < 64; ++it) {
        double m = 0.5 * (a + b);
        if ((fit.deriv(a) > 0.0) == (fit.deriv(m) > 0.0)) a = m; else b = m;
      }
      return 0.5 * (a + b);
    }
    prev = d;
  }
  return hi;
}

}  // namespace detail

inline constexpr std::pair<double, double> kDefaultReactanceBracket{0.005, 0.05};

// Least-squares polynomial gain(L). The validity range is taken over the
// decreasing branch within the inversion bracket and capped at 25, past which
// the polynomial model is known to break down.
inline PolyFit fit_gain_reactance(const CalibrationTable& table, int degree = 2,
                                  std::pair<double, double> bracket = kDefaultReactanceBracket) {
  table.validate();
  if (degree < 1) throw RangeError("fit degree must be >= 1");
  if (table.points.size() < static_cast<std::size_t>(degree) + 1)
    throw RangeError("fit needs at least degree+1 points");

  std::vector<double> xs, ys;
  for (const auto& pt : table.points) {
    xs.push_back(pt.l_henry);
    ys.push_back(pt.gain);
  }
  for (std::size_t i = 1; i < xs.size(); ++i)
    if (xs[i] - xs[i - 1] < 1e-9) throw IllConditioned("near-duplicate abscissae");

  PolyFit fit;
  fit.degree = degree;
  fit.coeffs = detail::polyfit_raw(xs, ys, degree);

  double ss = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double r = ys[i] - fit.eval(xs[i]);
    ss += r * r;
  }
  fit.residual_rms = std::sqrt(ss / static_cast<double>(xs.size()));

  double branch_end = detail::monotone_branch_end(fit, bracket.first, bracket.second);
  double g_hi = fit.eval(bracket.first);
  double g_lo = fit.eval(branch_end);
  if (g_lo > g_hi) std::swap(g_lo, g_hi);
  fit.valid_gain_range = {g_lo, std::min(25.0, g_hi)};
  return fit;
}

// Inverts gain(L) on the monotone branch of the fit by bisection.
inline double reactance_from_gain(double gain, const PolyFit& fit,
                                  std::pair<double, double> bracket = kDefaultReactanceBracket) {
  if (gain < fit.valid_gain_range.first || gain > fit.valid_gain_range.second)
    throw GainOutOfRange("gain " + std::to_string(gain) + " outside fit validity range [" +
                         std::to_string(fit.valid_gain_range.first) + ", " +
                         std::to_string(fit.valid_gain_range.second) + "]");
  double lo = bracket.first;
  double hi = detail::monotone_branch_end(fit, bracket.first, bracket.second);
  double flo = fit.eval(lo) - gain;
  double fhi = fit.eval(hi) - gain;
  if (flo == 0.0) return lo;
  if (fhi == 0.0) return hi;
  if ((flo > 0.0) == (fhi > 0.0))
    throw NoRootInBracket("gain(L) = gain has no root on the monotone branch of the bracket");
  for (int it = 0; it < 64; ++it) {
    double mid = 0.5 * (lo + hi);
    double fm = fit.eval(mid) - gain;
    if (fm == 0.0) return mid;
    if ((fm > 0.0) == (flo > 0.0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

// Probe the grid, pick the gain from the table. Mirrors what the device does
// during its prelude: the returned gain is what playback should run with.
inline std::pair<double, simcore::GainEvent> auto_gain_adjust(
    const simcore::StatcomParams& p, const simcore::GridEquivalent& g,
    const CalibrationTable& table, const ProbeConfig& cfg = {}) {
  ProbeResult probe = detail::run_probe(p, g, cfg);
  double new_gain = gain_from_dqdv(probe.dqdv, table);
  return {new_gain, simcore::GainEvent{probe.elapsed_s, p.gain, new_gain}};
}

struct PassiveGainConfig {
  int reversal_count = 5;
  double step_frac = 0.2;
  double floor_frac = 0.4;
  double restore_after_s = 5.0;
};

// Stepwise gain reduction on sustained control-signal oscillation, restored
// to the default once the disturbance has been quiet for restore_after_s.
inline double passive_gain_adjust(std::span<const double> signal, double dt,
                                  double gain, double gain_default,
                                  const PassiveGainConfig& cfg = {}) {
  if (!(dt > 0.0)) throw RangeError("dt must be > 0");
  double g = gain;
  const double floor = gain_default * cfg.floor_frac;
  int run = 0;
  double prev_diff = 0.0;
  double last_trigger = -1.0;
  bool any_trigger = false;
  for (std::size_t i = 1; i < signal.size(); ++i) {
    double d = signal[i] - signal[i - 1];
    if (d * prev_diff < 0.0) ++run; else if (d * prev_diff >= 0.0 && d != 0.0) run = 0;
    if (d != 0.0) prev_diff = d;
    double t = static_cast<double>(i) * dt;
    if (run >= cfg.reversal_count) {
      g = std::max(g * (1.0 - cfg.step_frac), floor);
      run = 0;
      last_trigger = t;
      any_trigger = true;
    }
    if (any_trigger && t - last_trigger >= cfg.restore_after_s) {
      g = gain_default;
      any_trigger = false;
    }
  }
  return g;
}

// --- JSON (site-specific vendor tables and fits are supplied as files) -----

inline nlohmann::json to_json(const CalibrationTable& t) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : t.points)
    pts.push_back({{"l_henry", p.l_henry}, {"dqdv", p.dqdv}, {"gain", p.gain}});
  return {{"points", pts}};
}

inline CalibrationTable table_from_json(const nlohmann::json& j) {
  CalibrationTable t;
  if (!j.contains("points") || !j["points"].is_array())
    throw SchemaError("calibration table JSON needs a 'points' array");
  for (const auto& p : j["points"]) {
    if (!p.contains("l_henry") || !p.contains("dqdv") || !p.contains("gain"))
      throw SchemaError("calibration point needs l_henry, dqdv, gain");
    t.points.push_back({p["l_henry"].get<double>(), p["dqdv"].get<double>(),
                        p["gain"].get<double>()});
  }
  t.validate();
  return t;
}

inline nlohmann::json to_json(const PolyFit& f) {
  return {{"coeffs", f.coeffs},
          {"degree", f.degree},
          {"valid_gain_range", {f.valid_gain_range.first, f.valid_gain_range.second}},
          {"residual_rms", f.residual_rms}};
}

inline PolyFit fit_from_json(const nlohmann::json& j) {
  PolyFit f;
  if (!j.contains("coeffs") || !j["coeffs"].is_array() || j["coeffs"].empty())
    throw SchemaError("fit JSON needs a 'coeffs' array");
  f.coeffs = j["coeffs"].get<std::vector<double>>();
  f.degree = j.value("degree", static_cast<int>(f.coeffs.size()) - 1);
  if (j.contains("valid_gain_range")) {
    auto r = j["valid_gain_range"];
    if (!r.is_array() || r.size() != 2) throw SchemaError("valid_gain_range must be [min, max]");
    f.valid_gain_range = {r[0].get<double>(), r[1].get<double>()};
  }
  f.residual_rms = j.value("residual_rms", 0.0);
  return f;
}

}  // namespace sceval::gaintune
