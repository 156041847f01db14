#pragma once

// End-to-end evaluation: ingest EMS settings and a fault recording, estimate
// the pre-fault external reactance from the stored gain, run the model
// through a thevenin prelude with automatic gain adjustment, play back the
// recorded positive-sequence voltage, and score simulated vs recorded Q.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sceval/errors.hpp"
#include "sceval/gaintune.hpp"
#include "sceval/records.hpp"
#include "sceval/simcore.hpp"

namespace sceval::evalpipe {

struct EmsSettings {
  double v_ref = 1.0;
  double q_ref = 0.0;       // MVAR
  double slope = 0.01;
  double gain = 0.0;        // mandatory: drives the reactance estimate
  double q_nominal = 125.0; // MVAR
  double v_base_kv = 230.0;
  double f0 = 60.0;

  void validate() const {
    if (!(gain > 0.0)) throw RangeError("gain must be > 0");
    if (!(slope > 0.0)) throw RangeError("slope must be > 0");
    if (!(q_nominal > 0.0)) throw RangeError("q_nominal must be > 0");
    if (!(v_base_kv > 0.0)) throw RangeError("v_base_kv must be > 0");
    if (!(f0 > 0.0)) throw RangeError("f0 must be > 0");
    if (v_ref < 0.8 || v_ref > 1.2) throw RangeError("v_ref out of [0.8, 1.2] pu");
  }
};

inline EmsSettings load_ems_settings(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("EMS settings are not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw SchemaError("EMS settings must be a JSON object");
  if (!j.contains("gain")) throw SchemaError("EMS settings must include 'gain'");
  EmsSettings s;
  try {
    s.gain = j["gain"].get<double>();
    s.v_ref = j.value("v_ref", s.v_ref);
    s.q_ref = j.value("q_ref", s.q_ref);
    s.slope = j.value("slope", s.slope);
    s.q_nominal = j.value("q_nominal", s.q_nominal);
    s.v_base_kv = j.value("v_base_kv", s.v_base_kv);
    s.f0 = j.value("f0", s.f0);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("EMS settings field has wrong type: ") + e.what());
  }
  s.validate();
  return s;
}

inline nlohmann::json to_json(const EmsSettings& s) {
  return {{"v_ref", s.v_ref},   {"q_ref", s.q_ref},         {"slope", s.slope},
          {"gain", s.gain},     {"q_nominal", s.q_nominal}, {"v_base_kv", s.v_base_kv},
          {"f0", s.f0}};
}

inline simcore::StatcomParams params_from_ems(const EmsSettings& s) {
  simcore::StatcomParams p;
  p.v_ref = s.v_ref;
  p.q_ref = s.q_ref;
  p.slope = s.slope;
  p.q_nominal = s.q_nominal;
  p.q_max = s.q_nominal;
  // gain left at the model default; the prelude's automatic adjustment sets it
  return p;
}

struct Metrics {
  double rmse = 0.0;            // MVAR
  double nrmse = 0.0;           // rmse / max|q_meas|
  double pearson_r = 1.0;
  double max_q_meas = 0.0;      // signed value of the largest-|q| sample
  double max_q_sim = 0.0;
  double max_q_abs_diff = 0.0;  // |max_q_meas - max_q_sim|
  double max_q_rel_diff = 0.0;  // ... / |max_q_meas|
};

inline Metrics compare_series(std::span<const double> q_meas,
                              std::span<const double> q_sim) {
  if (q_meas.size() != q_sim.size() || q_meas.empty())
    throw LengthMismatch("series must be non-empty and equal length");
  const auto n = static_cast<double>(q_meas.size());

  Metrics m;
  double ss = 0.0, mean_m = 0.0, mean_s = 0.0;
  std::size_t arg_m = 0, arg_s = 0;
  for (std::size_t i = 0; i < q_meas.size(); ++i) {
    double d = q_sim[i] - q_meas[i];
    ss += d * d;
    mean_m += q_meas[i];
    mean_s += q_sim[i];
    if (std::abs(q_meas[i]) > std::abs(q_meas[arg_m])) arg_m = i;
    if (std::abs(q_sim[i]) > std::abs(q_sim[arg_s])) arg_s = i;
  }
  mean_m /= n;
  mean_s /= n;
  m.rmse = std::sqrt(ss / n);
  m.max_q_meas = q_meas[arg_m];
  m.max_q_sim = q_sim[arg_s];
  m.max_q_abs_diff = std::abs(m.max_q_meas - m.max_q_sim);
  const double denom = std::abs(m.max_q_meas);
  m.nrmse = denom > 1e-12 ? m.rmse / denom : (m.rmse > 1e-12 ? INFINITY : 0.0);
  m.max_q_rel_diff = denom > 1e-12 ? m.max_q_abs_diff / denom
                                   : (m.max_q_abs_diff > 1e-12 ? INFINITY : 0.0);

  double cov = 0.0, var_m = 0.0, var_s = 0.0;
  for (std::size_t i = 0; i < q_meas.size(); ++i) {
    cov += (q_meas[i] - mean_m) * (q_sim[i] - mean_s);
    var_m += (q_meas[i] - mean_m) * (q_meas[i] - mean_m);
    var_s += (q_sim[i] - mean_s) * (q_sim[i] - mean_s);
  }
  if (var_m < 1e-24 && var_s < 1e-24)
    m.pearson_r = m.rmse < 1e-12 ? 1.0 : 0.0;
  else if (var_m < 1e-24 || var_s < 1e-24)
    m.pearson_r = 0.0;
  else
    m.pearson_r = std::clamp(cov / std::sqrt(var_m * var_s), -1.0, 1.0);
  return m;
}

enum class Verdict { PASS, FAIL };

struct EvaluationReport {
  Metrics metrics;
  double estimated_l_henry = 0.0;
  std::vector<simcore::GainEvent> gain_events;
  Verdict verdict = Verdict::FAIL;
  double nrmse_max = 0.05;
  double maxq_rel_max = 0.05;
  std::vector<double> times;   // recording clock, post-prelude window
  std::vector<double> q_meas;  // MVAR
  std::vector<double> q_sim;   // MVAR
  std::vector<std::string> warnings;
};

struct EvalConfig {
  double nrmse_max = 0.05;
  double maxq_rel_max = 0.05;
  double prelude_s = 10.0;  // budget for settle + probe before playback
  gaintune::ProbeConfig probe;
  records::Orientation orientation = records::Orientation::out_of_device;
  double gain_scale = 1.0;  // diagnostic knob: scales the adjusted gain
  bool qcm_enabled = true;
  double dt = 0.0;          // 0 -> recording sample spacing
};

// The full workflow. The thevenin prelude exists only to let the automatic
// gain adjustment act; playback then drives the bus voltage directly from the
// recording, so the estimated reactance is bypassed for the event itself.
inline EvaluationReport evaluate(const records::Recording& rec, const EmsSettings& ems,
                                 const gaintune::PolyFit& fit,
                                 const gaintune::CalibrationTable& table,
                                 const EvalConfig& cfg = {}) {
  ems.validate();
  auto v_names = records::find_phase_channels(rec, records::Unit::kV);
  auto i_names = records::find_phase_channels(rec, records::Unit::kA);

  EvaluationReport rep;
  rep.nrmse_max = cfg.nrmse_max;
  rep.maxq_rel_max = cfg.maxq_rel_max;
  rep.estimated_l_henry = gaintune::reactance_from_gain(ems.gain, fit);

  auto params = params_from_ems(ems);

  simcore::GridEquivalent prelude_grid;
  prelude_grid.mode = simcore::GridMode::thevenin;
  prelude_grid.l_henry = rep.estimated_l_henry;
  prelude_grid.v_src = 1.0;
  prelude_grid.v_base_kv = ems.v_base_kv;
  prelude_grid.f0 = ems.f0;

  auto probe_cfg = cfg.probe;
  probe_cfg.max_settle_s =
      std::max(1.0, cfg.prelude_s - probe_cfg.hold_s - 0.5);
  double adjusted_gain;
  try {
    auto [new_gain, event] = gaintune::auto_gain_adjust(params, prelude_grid, table, probe_cfg);
    adjusted_gain = new_gain;
    rep.gain_events.push_back(event);
  } catch (const NotSettled& e) {
    throw PreludeUnstable(std::string("prelude did not settle: ") + e.what());
  }
  params.gain = adjusted_gain * cfg.gain_scale;
  if (cfg.gain_scale != 1.0)
    rep.warnings.push_back("model gain scaled by a diagnostic factor");

  // recorded phasors -> measured Q and the playback voltage
  auto vps = records::positive_sequence_series(records::extract_phasors(rec, v_names, ems.f0));
  auto ips = records::positive_sequence_series(records::extract_phasors(rec, i_names, ems.f0));
  const std::size_t n = vps.values.size();

  simcore::PlaybackSeries playback;
  playback.times = vps.times;
  playback.v_pu.reserve(n);
  const double v_base_ph = ems.v_base_kv / std::sqrt(3.0);
  for (const auto& ph : vps.values) playback.v_pu.push_back(ph.magnitude / v_base_ph);

  simcore::GridEquivalent play_grid;
  play_grid.mode = simcore::GridMode::playback;
  play_grid.v_base_kv = ems.v_base_kv;
  play_grid.f0 = ems.f0;

  simcore::SimOptions sim_opt;
  sim_opt.dt = cfg.dt > 0.0 ? cfg.dt : 1.0 / rec.sample_rate;
  sim_opt.t0 = vps.times.front();
  sim_opt.duration_s = static_cast<double>(n) * sim_opt.dt;
  sim_opt.playback = &playback;
  sim_opt.qcm_enabled = cfg.qcm_enabled;
  auto trace = simcore::simulate(params, play_grid, sim_opt);
  for (auto& w : trace.warnings) rep.warnings.push_back(w);

  rep.times = vps.times;
  rep.q_meas.reserve(n);
  for (std::size_t k = 0; k < n; ++k)
    rep.q_meas.push_back(records::compute_q(vps.values[k], ips.values[k], cfg.orientation));

  // resample the simulated trace onto the recording instants
  rep.q_sim.reserve(n);
  {
    std::size_t j = 0;
    for (std::size_t k = 0; k < n; ++k) {
      double t = vps.times[k];
      while (j + 1 < trace.times.size() && trace.times[j + 1] <= t) ++j;
      if (j + 1 >= trace.times.size() || trace.times[j] >= t) {
        rep.q_sim.push_back(trace.q_act[std::min(j, trace.times.size() - 1)]);
      } else {
        double f = (t - trace.times[j]) / (trace.times[j + 1] - trace.times[j]);
        rep.q_sim.push_back(trace.q_act[j] + f * (trace.q_act[j + 1] - trace.q_act[j]));
      }
    }
  }

  rep.metrics = compare_series(rep.q_meas, rep.q_sim);
  rep.verdict = (rep.metrics.nrmse <= cfg.nrmse_max &&
                 rep.metrics.max_q_rel_diff <= cfg.maxq_rel_max)
                    ? Verdict::PASS
                    : Verdict::FAIL;
  return rep;
}

// --- rendering --------------------------------------------------------------

enum class Format { json, csv, svg };

inline nlohmann::json report_to_json(const EvaluationReport& rep) {
  nlohmann::json events = nlohmann::json::array();
  for (const auto& e : rep.gain_events)
    events.push_back({{"t", e.t}, {"old_gain", e.old_gain}, {"new_gain", e.new_gain}});
  return {{"max_q_meas", rep.metrics.max_q_meas},
          {"max_q_sim", rep.metrics.max_q_sim},
          {"max_q_abs_diff", rep.metrics.max_q_abs_diff},
          {"max_q_rel_diff", rep.metrics.max_q_rel_diff},
          {"rmse", rep.metrics.rmse},
          {"nrmse", rep.metrics.nrmse},
          {"pearson_r", rep.metrics.pearson_r},
          {"estimated_l_henry", rep.estimated_l_henry},
          {"gain_events", events},
          {"verdict", rep.verdict == Verdict::PASS ? "PASS" : "FAIL"},
          {"nrmse_max", rep.nrmse_max},
          {"maxq_rel_max", rep.maxq_rel_max},
          {"warnings", rep.warnings},
          {"series", {{"t", rep.times}, {"q_meas", rep.q_meas}, {"q_sim", rep.q_sim}}}};
}

inline EvaluationReport report_from_json(const nlohmann::json& j) {
  EvaluationReport rep;
  try {
    rep.metrics.max_q_meas = j.at("max_q_meas").get<double>();
    rep.metrics.max_q_sim = j.at("max_q_sim").get<double>();
    rep.metrics.max_q_abs_diff = j.at("max_q_abs_diff").get<double>();
    rep.metrics.max_q_rel_diff = j.at("max_q_rel_diff").get<double>();
    rep.metrics.rmse = j.at("rmse").get<double>();
    rep.metrics.nrmse = j.at("nrmse").get<double>();
    rep.metrics.pearson_r = j.at("pearson_r").get<double>();
    rep.estimated_l_henry = j.at("estimated_l_henry").get<double>();
    for (const auto& e : j.at("gain_events"))
      rep.gain_events.push_back({e.at("t").get<double>(), e.at("old_gain").get<double>(),
                                 e.at("new_gain").get<double>()});
    rep.verdict = j.at("verdict").get<std::string>() == "PASS" ? Verdict::PASS : Verdict::FAIL;
    rep.nrmse_max = j.value("nrmse_max", rep.nrmse_max);
    rep.maxq_rel_max = j.value("maxq_rel_max", rep.maxq_rel_max);
    rep.warnings = j.value("warnings", rep.warnings);
    rep.times = j.at("series").at("t").get<std::vector<double>>();
    rep.q_meas = j.at("series").at("q_meas").get<std::vector<double>>();
    rep.q_sim = j.at("series").at("q_sim").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("bad report JSON: ") + e.what());
  }
  return rep;
}

inline std::string render_report_csv(const EvaluationReport& rep) {
  std::string out = "t,q_meas,q_sim\n";
  char buf[40];
  auto put = [&](double v) {
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, ptr);
  };
  for (std::size_t i = 0; i < rep.times.size(); ++i) {
    put(rep.times[i]);
    out += ',';
    put(rep.q_meas[i]);
    out += ',';
    put(rep.q_sim[i]);
    out += '\n';
  }
  return out;
}

namespace detail {

inline std::string fmt(double v, int prec = 2) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
  return buf;
}

inline void polyline(std::string& svg, const std::vector<double>& ts,
                     const std::vector<double>& qs, double t0, double t1, double q0,
                     double q1, double x0, double y0, double w, double h,
                     const char* color) {
  svg += "<polyline fill=\"none\" stroke=\"";
  svg += color;
  svg += "\" stroke-width=\"1.2\" points=\"";
  const std::size_t step = std::max<std::size_t>(1, ts.size() / 2000);
  for (std::size_t i = 0; i < ts.size(); i += step) {
    double x = x0 + (ts[i] - t0) / (t1 - t0) * w;
    double y = y0 + h - (qs[i] - q0) / (q1 - q0) * h;
    svg += fmt(x) + "," + fmt(y) + " ";
  }
  svg += "\"/>\n";
}

}  // namespace detail

// Static dual-trace overlay with a verdict banner.
inline std::string render_report_svg(const EvaluationReport& rep) {
  using detail::fmt;
  const double W = 960, H = 460, x0 = 70, y0 = 60, pw = W - x0 - 30, ph = H - y0 - 60;

  double t0 = rep.times.empty() ? 0.0 : rep.times.front();
  double t1 = rep.times.empty() ? 1.0 : rep.times.back();
  if (t1 <= t0) t1 = t0 + 1.0;
  double q_lo = 0.0, q_hi = 1.0;
  if (!rep.q_meas.empty()) {
    q_lo = std::min(*std::min_element(rep.q_meas.begin(), rep.q_meas.end()),
                    *std::min_element(rep.q_sim.begin(), rep.q_sim.end()));
    q_hi = std::max(*std::max_element(rep.q_meas.begin(), rep.q_meas.end()),
                    *std::max_element(rep.q_sim.begin(), rep.q_sim.end()));
  }
  double pad = std::max(1.0, 0.05 * (q_hi - q_lo));
  q_lo -= pad;
  q_hi += pad;

  const bool pass = rep.verdict == Verdict::PASS;
  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(W, 0) +
         "\" height=\"" + fmt(H, 0) + "\" viewBox=\"0 0 " + fmt(W, 0) + " " + fmt(H, 0) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + fmt(x0) + "\" y=\"28\" font-family=\"sans-serif\" font-size=\"18\">"
         "Reactive power: recorded vs simulated</text>\n";
  svg += "<rect x=\"" + fmt(W - 170) + "\" y=\"10\" width=\"140\" height=\"30\" rx=\"4\" fill=\"" +
         (pass ? std::string("#2e7d32") : std::string("#c62828")) + "\"/>\n";
  svg += "<text x=\"" + fmt(W - 100) + "\" y=\"31\" font-family=\"sans-serif\" font-size=\"16\" "
         "fill=\"white\" text-anchor=\"middle\">" + (pass ? "PASS" : "FAIL") + "</text>\n";
  svg += "<text x=\"" + fmt(x0) + "\" y=\"48\" font-family=\"sans-serif\" font-size=\"12\" "
         "fill=\"#555\">nrmse " + fmt(rep.metrics.nrmse * 100.0) + "% | max Q recorded " +
         fmt(rep.metrics.max_q_meas) + " MVAR | max Q simulated " + fmt(rep.metrics.max_q_sim) +
         " MVAR | r " + fmt(rep.metrics.pearson_r, 3) + "</text>\n";

  svg += "<rect x=\"" + fmt(x0) + "\" y=\"" + fmt(y0) + "\" width=\"" + fmt(pw) +
         "\" height=\"" + fmt(ph) + "\" fill=\"none\" stroke=\"#999\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    double q = q_lo + (q_hi - q_lo) * k / 4.0;
    double y = y0 + ph - ph * k / 4.0;
    svg += "<line x1=\"" + fmt(x0 - 4) + "\" y1=\"" + fmt(y) + "\" x2=\"" + fmt(x0) +
           "\" y2=\"" + fmt(y) + "\" stroke=\"#999\"/>\n";
    svg += "<text x=\"" + fmt(x0 - 8) + "\" y=\"" + fmt(y + 4) +
           "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" + fmt(q, 1) +
           "</text>\n";
    double t = t0 + (t1 - t0) * k / 4.0;
    double x = x0 + pw * k / 4.0;
    svg += "<text x=\"" + fmt(x) + "\" y=\"" + fmt(y0 + ph + 18) +
           "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">" + fmt(t, 3) +
           "</text>\n";
  }
  svg += "<text x=\"" + fmt(x0 + pw / 2) + "\" y=\"" + fmt(H - 14) +
         "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">time (s)</text>\n";
  svg += "<text x=\"18\" y=\"" + fmt(y0 + ph / 2) + "\" font-family=\"sans-serif\" "
         "font-size=\"12\" transform=\"rotate(-90 18 " + fmt(y0 + ph / 2) + ")\" "
         "text-anchor=\"middle\">Q (MVAR)</text>\n";

  if (!rep.times.empty()) {
    detail::polyline(svg, rep.times, rep.q_meas, t0, t1, q_lo, q_hi, x0, y0, pw, ph, "#1f77b4");
    detail::polyline(svg, rep.times, rep.q_sim, t0, t1, q_lo, q_hi, x0, y0, pw, ph, "#d62728");
  }
  svg += "<rect x=\"" + fmt(x0 + 10) + "\" y=\"" + fmt(y0 + 8) +
         "\" width=\"14\" height=\"3\" fill=\"#1f77b4\"/>\n";
  svg += "<text x=\"" + fmt(x0 + 30) + "\" y=\"" + fmt(y0 + 13) +
         "\" font-family=\"sans-serif\" font-size=\"11\">recorded</text>\n";
  svg += "<rect x=\"" + fmt(x0 + 100) + "\" y=\"" + fmt(y0 + 8) +
         "\" width=\"14\" height=\"3\" fill=\"#d62728\"/>\n";
  svg += "<text x=\"" + fmt(x0 + 120) + "\" y=\"" + fmt(y0 + 13) +
         "\" font-family=\"sans-serif\" font-size=\"11\">simulated</text>\n";
  svg += "</svg>\n";
  return svg;
}

inline std::string render_report(const EvaluationReport& rep, Format fmt) {
  switch (fmt) {
    case Format::json: return report_to_json(rep).dump(2) + "\n";
    case Format::csv: return render_report_csv(rep);
    case Format::svg: return render_report_svg(rep);
  }
  throw RangeError("unknown report format");
}

}  // namespace sceval::evalpipe
