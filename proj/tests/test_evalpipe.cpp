#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "sceval/evalpipe.hpp"
#include "sceval/gaintune.hpp"
#include "sceval/synthgen.hpp"

using namespace sceval;
using namespace sceval::evalpipe;
using doctest::Approx;

namespace {

struct Fixture {
  gaintune::CalibrationTable table = gaintune::default_vendor_table();
  gaintune::PolyFit fit = gaintune::fit_gain_reactance(table, 2);

  // A recording whose current channels were produced by the same model the
  // evaluator will configure: EMS gain chosen so the reactance estimate lands
  // on l_true, reference gain set to the auto-adjusted value.
  records::Recording matched_recording(const synthgen::EventSpec& spec, double l_true,
                                       EmsSettings& ems_out) const {
    EmsSettings ems;
    ems.gain = fit.eval(l_true);
    auto rec = synthgen::gen_event(spec);
    auto reference = params_from_ems(ems);
    simcore::GridEquivalent grid;
    grid.mode = simcore::GridMode::thevenin;
    grid.l_henry = l_true;
    reference.gain = gaintune::auto_gain_adjust(reference, grid, table).first;
    ems_out = ems;
    return synthgen::synth_measured_q(rec, reference);
  }
};

synthgen::EventSpec single_dip_spec(double depth = 0.6, double duration = 0.15) {
  synthgen::EventSpec spec;
  spec.pre_s = 0.3;
  spec.dips.push_back({0.05, duration, depth, "ABC"});
  return spec;
}

}  // namespace

TEST_CASE("load_ems_settings: defaults, mandatory gain, range checks") {
  auto s = load_ems_settings(R"({"gain": 14.2, "v_ref": 1.0, "q_ref": 0})");
  CHECK(s.gain == 14.2);
  CHECK(s.slope == 0.01);
  CHECK(s.q_nominal == 125.0);
  CHECK(s.v_base_kv == 230.0);
  CHECK(s.f0 == 60.0);

  CHECK_THROWS_AS(load_ems_settings(R"({"v_ref": 1.0})"), SchemaError);
  CHECK_THROWS_AS(load_ems_settings("not json at all"), SchemaError);
  CHECK_THROWS_AS(load_ems_settings(R"({"gain": 14.2, "slope": -0.01})"), RangeError);
  CHECK_THROWS_AS(load_ems_settings(R"({"gain": "fourteen"})"), SchemaError);
}

TEST_CASE("compare_series: identities, offsets and the hand-computed rmse") {
  std::vector<double> a{1.0, 2.0, 3.0, 4.0};
  auto m = compare_series(a, a);
  CHECK(m.rmse == 0.0);
  CHECK(m.pearson_r == 1.0);
  CHECK(m.nrmse == 0.0);
  CHECK(m.max_q_abs_diff == 0.0);

  std::vector<double> b{11.0, 12.0, 13.0, 14.0};
  m = compare_series(a, b);
  CHECK(m.rmse == Approx(10.0));
  CHECK(m.pearson_r == Approx(1.0));

  std::vector<double> q_meas{0.0, 10.0, 20.0};
  std::vector<double> q_sim{0.0, 12.0, 18.0};
  m = compare_series(q_meas, q_sim);
  CHECK(m.rmse == Approx(std::sqrt(8.0 / 3.0)));
  CHECK(m.max_q_meas == 20.0);
  CHECK(m.max_q_sim == 18.0);
  CHECK(m.max_q_abs_diff == Approx(2.0));
  CHECK(m.max_q_rel_diff == Approx(0.1));

  CHECK_THROWS_AS(compare_series(a, q_meas), LengthMismatch);
}

TEST_CASE("compare_series: the published max-Q pair gives 0.81% relative difference") {
  // same arithmetic as the report table: |153.53 - 154.77| / 153.53
  std::vector<double> meas{10.0, 153.53, 20.0};
  std::vector<double> sim{10.0, 154.77, 20.0};
  auto m = compare_series(meas, sim);
  CHECK(m.max_q_rel_diff == Approx(0.008077).epsilon(1e-3));
}

TEST_CASE("evaluate: matched synthetic recording passes with small error") {
  Fixture fx;
  EmsSettings ems;
  auto rec = fx.matched_recording(single_dip_spec(), 0.02454, ems);
  auto rep = evaluate(rec, ems, fx.fit, fx.table);
  CHECK(rep.metrics.nrmse < 0.02);
  CHECK(rep.metrics.max_q_abs_diff < 2.0);
  CHECK(rep.verdict == Verdict::PASS);
  CHECK(rep.estimated_l_henry == Approx(0.02454).epsilon(1e-3));
  REQUIRE(rep.gain_events.size() == 1);
  CHECK(rep.gain_events[0].new_gain == Approx(14.5746).epsilon(1e-3));
}

TEST_CASE("evaluate: inflated EMS gain is detected as FAIL") {
  Fixture fx;
  EmsSettings ems;
  auto rec = fx.matched_recording(single_dip_spec(), 0.02454, ems);
  EmsSettings wrong = ems;
  wrong.gain = ems.gain * 1.5;
  auto rep = evaluate(rec, wrong, fx.fit, fx.table);
  CHECK(rep.metrics.nrmse > 0.05);
  CHECK(rep.verdict == Verdict::FAIL);
}

TEST_CASE("evaluate: deterministic") {
  Fixture fx;
  EmsSettings ems;
  auto rec = fx.matched_recording(single_dip_spec(0.5, 0.1), 0.021, ems);
  auto a = evaluate(rec, ems, fx.fit, fx.table);
  auto b = evaluate(rec, ems, fx.fit, fx.table);
  CHECK(report_to_json(a).dump() == report_to_json(b).dump());
}

TEST_CASE("evaluate: prelude budget does not leak into the metrics") {
  Fixture fx;
  EmsSettings ems;
  auto rec = fx.matched_recording(single_dip_spec(), 0.022, ems);
  EvalConfig c5, c15;
  c5.prelude_s = 5.0;
  c15.prelude_s = 15.0;
  auto r5 = evaluate(rec, ems, fx.fit, fx.table, c5);
  auto r15 = evaluate(rec, ems, fx.fit, fx.table, c15);
  CHECK(r5.metrics.nrmse == Approx(r15.metrics.nrmse).epsilon(0.005));
}

TEST_CASE("evaluate: sensitivity grows monotonically with gain mis-scaling") {
  Fixture fx;
  EmsSettings ems;
  auto rec = fx.matched_recording(single_dip_spec(), 0.02454, ems);
  auto nrmse_at = [&](double scale) {
    EvalConfig cfg;
    cfg.gain_scale = scale;
    return evaluate(rec, ems, fx.fit, fx.table, cfg).metrics.nrmse;
  };
  double n050 = nrmse_at(0.5);
  double n075 = nrmse_at(0.75);
  double n100 = nrmse_at(1.0);
  double n125 = nrmse_at(1.25);
  double n150 = nrmse_at(1.5);
  CHECK(n100 < n075);
  CHECK(n075 < n050);
  CHECK(n100 < n125);
  CHECK(n125 < n150);
}

TEST_CASE("evaluate: input validation") {
  Fixture fx;
  EmsSettings ems;
  ems.gain = 14.2;
  synthgen::EventSpec spec = single_dip_spec();
  auto rec = synthgen::gen_event(spec);  // voltage only: no current channels
  CHECK_THROWS_AS(evaluate(rec, ems, fx.fit, fx.table), MissingPhaseChannels);

  EmsSettings out_of_range = ems;
  out_of_range.gain = 11.0;  // below the fit's invertible range
  EmsSettings dummy;
  auto full = fx.matched_recording(spec, 0.021, dummy);
  CHECK_THROWS_AS(evaluate(full, out_of_range, fx.fit, fx.table), GainOutOfRange);
}

TEST_CASE("render_report: json round-trip, csv shape, svg content") {
  Fixture fx;
  EmsSettings ems;
  auto rec = fx.matched_recording(single_dip_spec(0.5, 0.1), 0.022, ems);
  auto rep = evaluate(rec, ems, fx.fit, fx.table);

  auto j = report_to_json(rep);
  auto back = report_from_json(j);
  CHECK(report_to_json(back).dump() == j.dump());

  auto csv = render_report(rep, Format::csv);
  std::size_t rows = 0;
  for (char c : csv)
    if (c == '\n') ++rows;
  CHECK(rows == rep.times.size() + 1);
  CHECK(csv.rfind("t,q_meas,q_sim\n", 0) == 0);

  auto svg = render_report(rep, Format::svg);
  CHECK(svg.find("PASS") != std::string::npos);
  CHECK(svg.find("<polyline") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);

  // a FAIL report carries the FAIL banner
  EmsSettings wrong = ems;
  wrong.gain = ems.gain * 1.5;
  auto bad = evaluate(rec, wrong, fx.fit, fx.table);
  CHECK(render_report(bad, Format::svg).find("FAIL") != std::string::npos);
}

TEST_CASE("report JSON rejects junk") {
  CHECK_THROWS_AS(report_from_json(nlohmann::json::object()), SchemaError);
}
