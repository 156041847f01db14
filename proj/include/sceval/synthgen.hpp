#pragma once

// Synthetic three-phase fault recordings (voltage dips, recloser double-dips)
// plus companion current channels built from a reference device response, so
// the whole pipeline can be exercised without proprietary field data.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "sceval/errors.hpp"
#include "sceval/records.hpp"
#include "sceval/simcore.hpp"

namespace sceval::synthgen {

struct Dip {
  double start_s = 0.0;     // relative to the end of the steady pre-window
  double duration_s = 0.1;
  double depth_pu = 0.5;    // affected phases scale by (1 - depth)
  std::string phases = "ABC";
};

struct EventSpec {
  std::string station_id = "SYNTH";
  double pre_s = 1.0;
  std::vector<Dip> dips;
  double recovery_overshoot_pu = 0.02;
  double v_nominal_pu = 1.0;
  double sample_rate = 9600.0;
  double f0 = 60.0;
  double v_base_kv = 230.0;
  double noise_std_pu = 0.0;  // optional Gaussian noise, off by default
  std::uint32_t noise_seed = 0;

  void validate() const {
    if (!(sample_rate > 0.0) || !(f0 > 0.0) || !(v_base_kv > 0.0))
      throw RangeError("sample_rate, f0, v_base_kv must be > 0");
    if (pre_s < 0.0 || !(v_nominal_pu > 0.0) || recovery_overshoot_pu < 0.0 ||
        noise_std_pu < 0.0)
      throw RangeError("bad event spec field");
    const double cycle_s = 1.0 / f0;
    double prev_end = -cycle_s;
    for (const auto& d : dips) {
      if (!(d.depth_pu > 0.0) || !(d.depth_pu < 1.0))
        throw RangeError("dip depth must be in (0, 1)");
      if (d.start_s < 0.0 || !(d.duration_s > 0.0))
        throw RangeError("dip start/duration out of range");
      if (d.phases.empty()) throw RangeError("dip must affect at least one phase");
      for (char c : d.phases)
        if (c != 'A' && c != 'B' && c != 'C')
          throw RangeError("dip phases must be a subset of ABC");
      // reclose gaps must clear the one-cycle recovery ramp
      if (d.start_s < prev_end + cycle_s)
        throw OverlappingDips("dips overlap (including the one-cycle ramp)");
      prev_end = d.start_s + d.duration_s;
    }
  }
};

namespace detail {

// cosine ramp: 0 at x<=0, 1 at x>=1
inline double smooth01(double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  return 0.5 * (1.0 - std::cos(std::numbers::pi * x));
}

// per-phase magnitude envelope in pu of nominal
inline double envelope(const EventSpec& spec, char phase, double t) {
  const double cycle_s = 1.0 / spec.f0;
  double m = 1.0;
  for (const auto& d : spec.dips) {
    if (d.phases.find(phase) == std::string::npos) continue;
    double s = spec.pre_s + d.start_s;
    double e = s + d.duration_s;
    double down = smooth01((t - s) / cycle_s);       // into the dip
    double up = smooth01((t - e) / cycle_s);         // out of it
    m *= 1.0 - d.depth_pu * down * (1.0 - up);
  }
  if (!spec.dips.empty() && spec.recovery_overshoot_pu > 0.0) {
    const auto& last = spec.dips.back();
    double t_clear = spec.pre_s + last.start_s + last.duration_s;
    double x = t - t_clear;
    if (x > 0.0)
      m *= 1.0 + spec.recovery_overshoot_pu * smooth01(x / cycle_s) * std::exp(-x / 0.1);
  }
  return m;
}

}  // namespace detail

// Balanced three-phase voltage channels with dip envelopes, one-cycle cosine
// ramps and a brief recovery overshoot after the final clearing.
inline records::Recording gen_event(const EventSpec& spec) {
  spec.validate();
  double last_end = 0.0;
  for (const auto& d : spec.dips) last_end = std::max(last_end, d.start_s + d.duration_s);
  const double total_s = spec.pre_s + last_end + 0.5;
  const auto n = static_cast<std::size_t>(std::ceil(total_s * spec.sample_rate));

  records::Recording rec;
  rec.station_id = spec.station_id;
  rec.sample_rate = spec.sample_rate;
  rec.n_samples = n;

  const double amp = std::numbers::sqrt2 * spec.v_nominal_pu * spec.v_base_kv / std::sqrt(3.0);
  const double w = 2.0 * std::numbers::pi * spec.f0;
  const std::array<char, 3> phases{'A', 'B', 'C'};
  const std::array<double, 3> offsets{0.0, -2.0 * std::numbers::pi / 3.0,
                                      2.0 * std::numbers::pi / 3.0};
  const std::array<records::PhaseTag, 3> tags{records::PhaseTag::A, records::PhaseTag::B,
                                              records::PhaseTag::C};

  std::mt19937 rng(spec.noise_seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int p = 0; p < 3; ++p) {
    records::AnalogChannel ch;
    ch.name = std::string("V") + phases[static_cast<std::size_t>(p)];
    ch.unit = records::Unit::kV;
    ch.phase = tags[static_cast<std::size_t>(p)];
    ch.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      double t = static_cast<double>(k) / spec.sample_rate;
      double m = detail::envelope(spec, phases[static_cast<std::size_t>(p)], t);
      double v = amp * m * std::cos(w * t + offsets[static_cast<std::size_t>(p)]);
      if (spec.noise_std_pu > 0.0)
        v += spec.noise_std_pu * (spec.v_base_kv / std::sqrt(3.0)) * noise(rng);
      ch.values[k] = v;
    }
    rec.channels.push_back(std::move(ch));
  }
  return rec;
}

struct SynthQOptions {
  double f0 = 60.0;
  double v_base_kv = 230.0;
  bool qcm_enabled = true;
};

// Runs the reference model in playback against the recording's own
// positive-sequence voltage and synthesizes balanced, purely reactive current
// channels whose extracted phasors reproduce that reference Q trace. The
// instantaneous amplitude is sampled half a cycle ahead so the one-cycle
// extraction window lands on the intended value.
inline records::Recording synth_measured_q(const records::Recording& rec,
                                           const simcore::StatcomParams& reference,
                                           const SynthQOptions& opt = {}) {
  auto v_names = records::find_phase_channels(rec, records::Unit::kV);
  auto ps = records::positive_sequence_series(
      records::extract_phasors(rec, v_names, opt.f0));
  const std::size_t n_ph = ps.values.size();
  if (n_ph == 0) throw IncommensurateRate("recording shorter than one cycle");

  simcore::PlaybackSeries playback;
  playback.times = ps.times;
  playback.v_pu.reserve(n_ph);
  const double v_base_ph = opt.v_base_kv / std::sqrt(3.0);
  for (const auto& ph : ps.values) playback.v_pu.push_back(ph.magnitude / v_base_ph);

  simcore::GridEquivalent grid;
  grid.mode = simcore::GridMode::playback;
  grid.v_base_kv = opt.v_base_kv;
  grid.f0 = opt.f0;

  simcore::SimOptions sim_opt;
  sim_opt.dt = 1.0 / rec.sample_rate;
  sim_opt.t0 = ps.times.front();
  sim_opt.duration_s = static_cast<double>(n_ph) * sim_opt.dt;
  sim_opt.playback = &playback;
  sim_opt.qcm_enabled = opt.qcm_enabled;
  auto trace = simcore::simulate(reference, grid, sim_opt);

  const std::size_t cycle =
      records::detail::samples_per_cycle(rec.sample_rate, opt.f0);
  const std::array<char, 3> phases{'A', 'B', 'C'};
  const std::array<records::PhaseTag, 3> tags{records::PhaseTag::A, records::PhaseTag::B,
                                              records::PhaseTag::C};

  // phasor index whose extraction window is centered on sample m
  auto centered_index = [&](std::size_t m) {
    auto j = static_cast<long long>(m) - static_cast<long long>(cycle - 1) +
             static_cast<long long>(cycle / 2);
    return static_cast<std::size_t>(
        std::clamp<long long>(j, 0, static_cast<long long>(n_ph) - 1));
  };
  auto v1_sq = [&](std::size_t j) {
    double v = std::max(ps.values[j].magnitude, 1e-6);
    return v * v;
  };

  // The current is an instantaneous scaled quadrature of the voltage:
  // i_a = kappa*(v_b - v_c)/sqrt(3) and cyclic. The quadrature of a
  // positive-sequence set lags it by exactly 90 degrees, so for kappa > 0 the
  // extracted Q is capacitive, and the extracted V*I product rides the same
  // window as the voltage itself. That keeps the reconstruction faithful even
  // through deep dips, where a synthetic smooth-envelope carrier would
  // decouple from the recorded ramp. kappa carries the Q target:
  // Q = 3 * kappa * |V1|^2.
  // local envelope of the reference |Q|: the reconstruction may never report
  // more than the reference does anywhere nearby, which pins the extracted
  // peaks to the reference peaks and clips deconvolution ringing
  std::vector<double> q_cap(n_ph);
  {
    const auto r = static_cast<long long>(cycle);
    for (std::size_t j = 0; j < n_ph; ++j) {
      auto lo = std::max<long long>(0, static_cast<long long>(j) - r);
      auto hi = std::min<long long>(static_cast<long long>(n_ph) - 1,
                                    static_cast<long long>(j) + r);
      double cap = 0.0;
      for (long long k = lo; k <= hi; ++k)
        cap = std::max(cap, std::abs(trace.q_act[static_cast<std::size_t>(k)]));
      q_cap[j] = cap + 0.25;
    }
  }

  std::vector<double> kappa(rec.n_samples);
  auto clamp_kappa = [&](std::size_t m) {
    std::size_t j = centered_index(m);
    double bound = q_cap[j] / (3.0 * v1_sq(j));
    kappa[m] = std::clamp(kappa[m], -bound, bound);
  };
  for (std::size_t m = 0; m < rec.n_samples; ++m) {
    std::size_t j = centered_index(m);
    kappa[m] = trace.q_act[j] / (3.0 * v1_sq(j));
    clamp_kappa(m);
  }

  const auto& va = rec.channel(v_names[0]).values;
  const auto& vb = rec.channel(v_names[1]).values;
  const auto& vc = rec.channel(v_names[2]).values;
  const double inv_sqrt3 = 1.0 / std::sqrt(3.0);
  auto synth_channel = [&](int p) {
    const std::vector<double>& y = (p == 0) ? vb : (p == 1) ? vc : va;
    const std::vector<double>& z = (p == 0) ? vc : (p == 1) ? va : vb;
    std::vector<double> values(rec.n_samples);
    for (std::size_t m = 0; m < rec.n_samples; ++m)
      values[m] = kappa[m] * (y[m] - z[m]) * inv_sqrt3;
    return values;
  };

  auto achieved_q = [&]() {
    std::array<std::vector<records::Phasor>, 3> iph;
    for (int p = 0; p < 3; ++p)
      iph[static_cast<std::size_t>(p)] =
          records::detail::sliding_fundamental(synth_channel(p), cycle);
    std::vector<double> q(n_ph);
    for (std::size_t j = 0; j < n_ph; ++j) {
      auto i1 = records::positive_sequence(iph[0][j], iph[1][j], iph[2][j]);
      q[j] = records::compute_q(ps.values[j], i1, records::Orientation::out_of_device);
    }
    return q;
  };

  // The one-cycle window still smears fast changes of kappa itself; measure
  // the Q the phasor pipeline would report and fold the residual back in.
  for (int pass = 0; pass < 3; ++pass) {
    auto q_ach = achieved_q();
    for (std::size_t m = 0; m < rec.n_samples; ++m) {
      std::size_t j = centered_index(m);
      kappa[m] += 0.7 * (trace.q_act[j] - q_ach[j]) / (3.0 * v1_sq(j));
      clamp_kappa(m);
    }
  }

  // Deconvolution ringing can still push single windows past the local
  // envelope; shrink every sample such a window touches until none exceed it.
  for (int pass = 0; pass < 2; ++pass) {
    auto q_ach = achieved_q();
    std::vector<double> factor(n_ph, 1.0);
    bool any = false;
    for (std::size_t j = 0; j < n_ph; ++j) {
      if (std::abs(q_ach[j]) > q_cap[j]) {
        factor[j] = q_cap[j] / std::abs(q_ach[j]);
        any = true;
      }
    }
    if (!any) break;
    for (std::size_t m = 0; m < rec.n_samples; ++m) {
      auto j_hi = std::min<long long>(static_cast<long long>(m),
                                      static_cast<long long>(n_ph) - 1);
      auto j_lo = std::max<long long>(0, static_cast<long long>(m) -
                                             static_cast<long long>(cycle) + 1);
      double f = 1.0;
      for (long long j = j_lo; j <= j_hi; ++j)
        f = std::min(f, factor[static_cast<std::size_t>(j)]);
      kappa[m] *= f;
    }
  }

  records::Recording out = rec;
  for (int p = 0; p < 3; ++p) {
    records::AnalogChannel ch;
    ch.name = std::string("I") + phases[static_cast<std::size_t>(p)];
    ch.unit = records::Unit::kA;
    ch.phase = tags[static_cast<std::size_t>(p)];
    ch.values = synth_channel(p);
    out.channels.push_back(std::move(ch));
  }
  out.n_samples = rec.n_samples;
  return out;
}

// --- JSON event specs (see docs/formats.md) --------------------------------

inline EventSpec event_spec_from_json(const nlohmann::json& j) {
  EventSpec spec;
  spec.station_id = j.value("station_id", spec.station_id);
  spec.pre_s = j.value("pre_s", spec.pre_s);
  spec.recovery_overshoot_pu = j.value("recovery_overshoot_pu", spec.recovery_overshoot_pu);
  spec.v_nominal_pu = j.value("v_nominal_pu", spec.v_nominal_pu);
  spec.sample_rate = j.value("sample_rate", spec.sample_rate);
  spec.f0 = j.value("f0", spec.f0);
  spec.v_base_kv = j.value("v_base_kv", spec.v_base_kv);
  spec.noise_std_pu = j.value("noise_std_pu", spec.noise_std_pu);
  spec.noise_seed = j.value("noise_seed", spec.noise_seed);
  if (j.contains("dips")) {
    if (!j["dips"].is_array()) throw SchemaError("'dips' must be an array");
    for (const auto& dj : j["dips"]) {
      Dip d;
      if (!dj.contains("start_s") || !dj.contains("duration_s") || !dj.contains("depth_pu"))
        throw SchemaError("dip needs start_s, duration_s, depth_pu");
      d.start_s = dj["start_s"].get<double>();
      d.duration_s = dj["duration_s"].get<double>();
      d.depth_pu = dj["depth_pu"].get<double>();
      d.phases = dj.value("phases", std::string("ABC"));
      spec.dips.push_back(std::move(d));
    }
  }
  spec.validate();
  return spec;
}

inline nlohmann::json to_json(const EventSpec& spec) {
  nlohmann::json dips = nlohmann::json::array();
  for (const auto& d : spec.dips)
    dips.push_back({{"start_s", d.start_s},
                    {"duration_s", d.duration_s},
                    {"depth_pu", d.depth_pu},
                    {"phases", d.phases}});
  return {{"station_id", spec.station_id},
          {"pre_s", spec.pre_s},
          {"dips", dips},
          {"recovery_overshoot_pu", spec.recovery_overshoot_pu},
          {"v_nominal_pu", spec.v_nominal_pu},
          {"sample_rate", spec.sample_rate},
          {"f0", spec.f0},
          {"v_base_kv", spec.v_base_kv},
          {"noise_std_pu", spec.noise_std_pu},
          {"noise_seed", spec.noise_seed}};
}

}  // namespace sceval::synthgen
