#pragma once

// Fixed-step average-value STATCOM simulation: droop voltage control (fast),
// Q-setpoint restoration (slow), output limits and a first-order converter
// lag, against either a quasi-static Thevenin grid or a played-back recorded
// voltage. Everything here is a pure function over plain value types.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "sceval/errors.hpp"

namespace sceval::simcore {

struct StatcomParams {
  double v_ref = 1.0;        // pu voltage setpoint
  double q_ref = 0.0;        // MVAR setpoint for the slow Q mode
  double slope = 0.01;       // pu voltage per unit of nominal Q (droop)
  double gain = 12.75;       // controller gain K
  double q_nominal = 125.0;  // MVAR
  double q_max = 125.0;      // MVAR output limit
  double t_resp = 0.05;      // s, voltage-regulator integrator base time
  double tau_conv = 0.010;   // s, converter lag
  double t_qcm = 30.0;       // s, Q-restoration time constant

  void validate() const {
    if (!(slope > 0.0)) throw RangeError("slope must be > 0");
    if (!(q_nominal > 0.0)) throw RangeError("q_nominal must be > 0");
    // q_max == 0 is allowed as a degenerate (output-disabled) limit
    if (q_max < 0.0 || q_max > 1.2 * q_nominal)
      throw RangeError("q_max must be in [0, 1.2*q_nominal]");
    if (!(gain > 0.0)) throw RangeError("gain must be > 0");
    if (!(t_resp > 0.0) || !(tau_conv > 0.0) || !(t_qcm > 0.0))
      throw RangeError("time constants must be > 0");
  }
};

struct StatcomState {
  double q_cmd = 0.0;      // MVAR, regulator integrator output
  double q_act = 0.0;      // MVAR, converter output after lag
  double v_ref_adj = 1.0;  // pu, setpoint as shifted by the slow Q mode
  double t = 0.0;          // s

  static StatcomState initial(const StatcomParams& p) {
    return {0.0, 0.0, p.v_ref, 0.0};
  }
};

enum class GridMode { thevenin, playback };

// Thevenin source (quasi-static linearization) or playback of a recorded
// voltage. In playback mode the bus voltage ignores device feedback entirely.
struct GridEquivalent {
  GridMode mode = GridMode::thevenin;
  double r_ohm = 0.1;
  double l_henry = 0.02;
  double v_src = 1.0;        // pu
  double v_base_kv = 230.0;  // line-line RMS
  double f0 = 60.0;

  double reactance_ohm() const { return 2.0 * std::numbers::pi * f0 * l_henry; }
  // short-circuit capacity in MVA (kV^2/ohm == MVA)
  double scc_mva() const { return v_base_kv * v_base_kv / reactance_ohm(); }

  std::vector<std::string> validate() const {
    if (!(v_base_kv > 0.0) || !(f0 > 0.0))
      throw RangeError("v_base_kv and f0 must be > 0");
    std::vector<std::string> warnings;
    if (mode == GridMode::thevenin) {
      if (!(l_henry > 0.0)) throw RangeError("thevenin mode needs l_henry > 0");
      if (r_ohm > 0.1 * reactance_ohm())
        warnings.push_back("grid resistance exceeds 10% of reactance; "
                           "quasi-static model neglects it");
    }
    return warnings;
  }
};

struct GainEvent {
  double t = 0.0;
  double old_gain = 0.0;
  double new_gain = 0.0;
};

struct SimTrace {
  std::vector<double> times;
  std::vector<double> v_meas;  // pu
  std::vector<double> q_act;   // MVAR
  std::vector<double> q_cmd;   // MVAR
  std::vector<GainEvent> gain_events;
  std::vector<std::string> warnings;

  std::size_t size() const { return times.size(); }
};

// V_target = v_ref_adj - slope * q_act / q_nominal
inline double droop_target(const StatcomParams& p, double v_ref_adj, double q_act) {
  return v_ref_adj - p.slope * q_act / p.q_nominal;
}

// One Euler step of the voltage regulator (integral path scaled by gain) and
// the converter lag. The integrator state stores the clamped command, so it
// never winds further into saturation.
inline StatcomState controller_step(const StatcomState& s, const StatcomParams& p,
                                    double v_meas, double dt) {
  if (!(dt > 0.0) || dt > p.tau_conv / 2.0)
    throw StepTooLarge("dt must be in (0, tau_conv/2]");
  StatcomState out = s;
  const double e = droop_target(p, s.v_ref_adj, s.q_act) - v_meas;
  const double candidate = s.q_cmd + p.gain * e * p.q_nominal * dt / p.t_resp;
  out.q_cmd = std::clamp(candidate, -p.q_max, p.q_max);
  out.q_act = s.q_act + (out.q_cmd - s.q_act) * dt / p.tau_conv;
  out.t = s.t + dt;
  return out;
}

// Slow Q-restoration: nudges the voltage setpoint so q_act drifts toward
// q_ref. Clamped to a sane regulation band.
inline StatcomState qcm_step(const StatcomState& s, const StatcomParams& p, double dt) {
  if (!(dt > 0.0)) throw StepTooLarge("dt must be > 0");
  StatcomState out = s;
  out.v_ref_adj = std::clamp(
      s.v_ref_adj + (p.q_ref - s.q_act) / p.q_nominal * p.slope * dt / p.t_qcm,
      0.9, 1.1);
  return out;
}

// Bus voltage seen by the device. Thevenin: v_src + q/scc (pu rise per MVAR
// equals 1/SCC). Playback: the recorded sample, independent of q_act.
inline double grid_voltage(const GridEquivalent& g, double q_act,
                           std::optional<double> playback_v = std::nullopt) {
  if (g.mode == GridMode::playback) {
    if (!playback_v) throw MissingPlaybackSample("playback mode needs a playback sample");
    return *playback_v;
  }
  return g.v_src + q_act / g.scc_mva();
}

// Positive-sequence bus-voltage magnitude over time, per unit.
struct PlaybackSeries {
  std::vector<double> times;
  std::vector<double> v_pu;

  // linear interpolation; values held at the ends
  double at(double t, bool* past_end = nullptr) const {
    if (times.empty()) throw MissingPlaybackSample("empty playback series");
    if (t <= times.front()) return v_pu.front();
    if (t >= times.back()) {
      if (past_end && t > times.back()) *past_end = true;
      return v_pu.back();
    }
    auto it = std::upper_bound(times.begin(), times.end(), t);
    std::size_t hi = static_cast<std::size_t>(it - times.begin());
    std::size_t lo = hi - 1;
    double f = (t - times[lo]) / (times[hi] - times[lo]);
    return v_pu[lo] + f * (v_pu[hi] - v_pu[lo]);
  }
};

struct GainHook {
  double at_s = 0.0;
  std::function<double(const StatcomState&, const StatcomParams&)> adjust;
};

struct SimOptions {
  double duration_s = 1.0;
  double dt = 1.0 / 9600.0;
  double t0 = 0.0;  // trace clock origin
  bool qcm_enabled = true;
  const PlaybackSeries* playback = nullptr;  // required iff grid mode is playback
  std::vector<GainHook> hooks;
  StatcomState initial_state{};
  bool use_initial_state = false;
};

// Deterministic fixed-step loop: grid voltage -> regulator step -> slow Q
// step, firing gain hooks as their times are crossed. Identical inputs give
// bit-identical traces.
inline SimTrace simulate(StatcomParams p, const GridEquivalent& g, const SimOptions& opt) {
  p.validate();
  SimTrace trace;
  for (auto& w : g.validate()) trace.warnings.push_back(w);
  if (!(opt.dt > 0.0)) throw StepTooLarge("dt must be > 0");
  if ((g.mode == GridMode::playback) != (opt.playback != nullptr))
    throw MissingPlaybackSample("playback series must be given exactly in playback mode");

  auto hooks = opt.hooks;
  std::sort(hooks.begin(), hooks.end(),
            [](const GainHook& a, const GainHook& b) { return a.at_s < b.at_s; });
  std::size_t next_hook = 0;

  const auto n = static_cast<std::size_t>(std::llround(opt.duration_s / opt.dt));
  trace.times.reserve(n);
  trace.v_meas.reserve(n);
  trace.q_act.reserve(n);
  trace.q_cmd.reserve(n);

  StatcomState s = opt.use_initial_state ? opt.initial_state : StatcomState::initial(p);
  bool warned_past_end = false;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = opt.t0 + static_cast<double>(k) * opt.dt;
    while (next_hook < hooks.size() && hooks[next_hook].at_s <= t) {
      double new_gain = hooks[next_hook].adjust(s, p);
      trace.gain_events.push_back({t, p.gain, new_gain});
      p.gain = new_gain;
      ++next_hook;
    }
    std::optional<double> pv;
    if (opt.playback) {
      bool past = false;
      pv = opt.playback->at(t, &past);
      if (past && !warned_past_end) {
        trace.warnings.push_back("playback series ends before the simulation; holding last sample");
        warned_past_end = true;
      }
    }
    const double v = grid_voltage(g, s.q_act, pv);
    s = controller_step(s, p, v, opt.dt);
    if (opt.qcm_enabled) s = qcm_step(s, p, opt.dt);
    trace.times.push_back(t);
    trace.v_meas.push_back(v);
    trace.q_act.push_back(s.q_act);
    trace.q_cmd.push_back(s.q_cmd);
  }
  return trace;
}

// Settled reactive output for a Thevenin grid with the slow Q mode off:
// the droop line / system load line intersection.
inline double droop_equilibrium_q(const StatcomParams& p, const GridEquivalent& g) {
  return (p.v_ref - g.v_src) / (p.slope / p.q_nominal + 1.0 / g.scc_mva());
}

}  // namespace sceval::simcore
