// sceval: replay fault-recorder waveforms through a STATCOM model and score
// the reactive-power response. Subcommands: probe, calibrate, synth,
// evaluate, batch-evaluate.
//
// Exit codes: 0 success (evaluate: PASS), 1 evaluation FAIL, 2 input error,
// 3 internal error.

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sceval/errors.hpp"
#include "sceval/evalpipe.hpp"
#include "sceval/gaintune.hpp"
#include "sceval/records.hpp"
#include "sceval/simcore.hpp"
#include "sceval/synthgen.hpp"
#include "sceval/version.hpp"

namespace fs = std::filesystem;
using namespace sceval;

namespace {

constexpr int kExitPass = 0;
constexpr int kExitFail = 1;
constexpr int kExitInput = 2;
constexpr int kExitInternal = 3;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RangeError("cannot open file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RangeError("cannot write file: " + path.string());
  out << text;
}

evalpipe::EmsSettings load_ems(const std::string& path) {
  if (path.empty()) {
    evalpipe::EmsSettings s;
    s.gain = 12.75;  // model default when no EMS document is supplied
    return s;
  }
  return evalpipe::load_ems_settings(read_file(path));
}

struct FitBundle {
  gaintune::CalibrationTable table;
  gaintune::PolyFit fit;
};

// {"table": {...}, "fit": {...}} as written by `sceval calibrate`
FitBundle load_fit_bundle(const std::string& path) {
  FitBundle b;
  if (path.empty()) {
    b.table = gaintune::default_vendor_table();
    b.fit = gaintune::fit_gain_reactance(b.table);
    return b;
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("fit file is not valid JSON: ") + e.what());
  }
  if (!j.contains("table") || !j.contains("fit"))
    throw SchemaError("fit file needs 'table' and 'fit' objects");
  b.table = gaintune::table_from_json(j["table"]);
  b.fit = gaintune::fit_from_json(j["fit"]);
  return b;
}

records::Recording load_recording(const std::string& prefix) {
  return records::parse_comtrade(read_file(prefix + ".cfg"), read_file(prefix + ".dat"));
}

struct EvalJob {
  std::string recording;
  std::string ems;
  std::string report;
  std::string plot;
  std::string csv;
};

evalpipe::EvaluationReport run_evaluation(const EvalJob& job, const FitBundle& bundle,
                                          const evalpipe::EvalConfig& cfg) {
  auto rec = load_recording(job.recording);
  auto ems = load_ems(job.ems);
  auto rep = evalpipe::evaluate(rec, ems, bundle.fit, bundle.table, cfg);
  if (!job.report.empty())
    write_file(job.report, evalpipe::render_report(rep, evalpipe::Format::json));
  if (!job.plot.empty())
    write_file(job.plot, evalpipe::render_report(rep, evalpipe::Format::svg));
  if (!job.csv.empty())
    write_file(job.csv, evalpipe::render_report(rep, evalpipe::Format::csv));
  return rep;
}

void print_summary(const evalpipe::EvaluationReport& rep, const std::string& label) {
  std::printf("%s%sverdict %s | nrmse %.4f%% | max Q recorded %.3f MVAR | "
              "max Q simulated %.3f MVAR | L %.5f H\n",
              label.c_str(), label.empty() ? "" : ": ",
              rep.verdict == evalpipe::Verdict::PASS ? "PASS" : "FAIL",
              rep.metrics.nrmse * 100.0, rep.metrics.max_q_meas, rep.metrics.max_q_sim,
              rep.estimated_l_henry);
  for (const auto& e : rep.gain_events)
    std::printf("  gain adjusted %.4f -> %.4f (prelude t=%.2f s)\n", e.old_gain, e.new_gain, e.t);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"STATCOM field-performance evaluation from fault-recorder waveforms"};
  app.set_version_flag("--version", std::string("sceval ") + kVersion);
  app.require_subcommand(1);

  // probe
  auto* probe = app.add_subcommand("probe", "probe dQ/dV for a Thevenin reactance and pick a gain");
  double probe_l = 0.0;
  std::string probe_settings;
  probe->add_option("--l-henry", probe_l, "external inductance in H")->required();
  probe->add_option("--settings", probe_settings, "EMS settings JSON");

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "sweep reactance values, probe dQ/dV, fit gain(L)");
  std::vector<double> cal_l;
  std::string cal_settings, cal_out;
  int cal_degree = 2;
  cal->add_option("--l-values", cal_l, "inductance values in H (comma separated)")
      ->required()
      ->delimiter(',');
  cal->add_option("--settings", cal_settings, "EMS settings JSON");
  cal->add_option("--out", cal_out, "output JSON (table + fit)")->required();
  cal->add_option("--degree", cal_degree, "fit polynomial degree (default 2)");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic event recording (cfg/dat)");
  std::string synth_spec, synth_settings, synth_out, synth_fit;
  double synth_l = 0.0;
  bool synth_no_currents = false;
  synth->add_option("--spec", synth_spec, "event spec JSON")->required();
  synth->add_option("--settings", synth_settings, "EMS settings JSON for the reference response");
  synth->add_option("--out", synth_out, "output path prefix (writes .cfg and .dat)")->required();
  synth->add_option("--fit", synth_fit, "calibration JSON for the reference gain (default: built-in)");
  synth->add_option("--l-henry", synth_l, "override the external inductance used for the reference");
  synth->add_flag("--no-currents", synth_no_currents, "write voltage channels only");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "run the evaluation workflow on one recording");
  EvalJob ev_job;
  std::string ev_fit;
  evalpipe::EvalConfig ev_cfg;
  ev->add_option("--recording", ev_job.recording, "recording path prefix (expects .cfg/.dat)")
      ->required();
  ev->add_option("--ems", ev_job.ems, "EMS settings JSON")->required();
  ev->add_option("--fit", ev_fit, "calibration JSON from `sceval calibrate` (default: built-in)");
  ev->add_option("--report", ev_job.report, "write the full report JSON here");
  ev->add_option("--plot", ev_job.plot, "write an SVG overlay plot here");
  ev->add_option("--csv", ev_job.csv, "write the aligned t,q_meas,q_sim CSV here");
  ev->add_option("--nrmse-max", ev_cfg.nrmse_max, "PASS threshold on nrmse (default 0.05)");
  ev->add_option("--maxq-rel-max", ev_cfg.maxq_rel_max,
                 "PASS threshold on relative max-Q difference (default 0.05)");
  ev->add_option("--prelude-s", ev_cfg.prelude_s, "prelude budget in s (default 10)");

  // batch-evaluate
  auto* batch = app.add_subcommand("batch-evaluate", "evaluate a manifest of recordings");
  std::string batch_manifest, batch_fit;
  unsigned batch_jobs = 1;
  evalpipe::EvalConfig batch_cfg;
  batch->add_option("--manifest", batch_manifest,
                    "JSON array of {recording, ems, report?, plot?, csv?}")
      ->required();
  batch->add_option("--fit", batch_fit, "calibration JSON (default: built-in)");
  batch->add_option("--jobs", batch_jobs, "parallel evaluations (default 1)");
  batch->add_option("--nrmse-max", batch_cfg.nrmse_max, "PASS threshold on nrmse");
  batch->add_option("--maxq-rel-max", batch_cfg.maxq_rel_max,
                    "PASS threshold on relative max-Q difference");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }

  try {
    if (*probe) {
      if (!(probe_l > 0.0)) throw RangeError("--l-henry must be > 0");
      auto ems = load_ems(probe_settings);
      auto params = evalpipe::params_from_ems(ems);
      simcore::GridEquivalent grid;
      grid.mode = simcore::GridMode::thevenin;
      grid.l_henry = probe_l;
      grid.v_base_kv = ems.v_base_kv;
      grid.f0 = ems.f0;
      double dqdv = gaintune::probe_dqdv(params, grid);
      double gain = gaintune::gain_from_dqdv(dqdv, gaintune::default_vendor_table());
      std::printf("dqdv_gvar_per_pu %.6f\n", dqdv);
      std::printf("gain %.6f\n", gain);
      return kExitPass;
    }

    if (*cal) {
      auto ems = load_ems(cal_settings);
      auto params = evalpipe::params_from_ems(ems);
      auto table = gaintune::calibrate(cal_l, params);
      auto fit = gaintune::fit_gain_reactance(table, cal_degree);
      nlohmann::json out{{"table", gaintune::to_json(table)}, {"fit", gaintune::to_json(fit)}};
      write_file(cal_out, out.dump(2) + "\n");
      std::printf("calibrated %zu points, fit degree %d, residual rms %.3e, "
                  "valid gain range [%.3f, %.3f]\n",
                  table.points.size(), fit.degree, fit.residual_rms,
                  fit.valid_gain_range.first, fit.valid_gain_range.second);
      return kExitPass;
    }

    if (*synth) {
      auto spec = synthgen::event_spec_from_json(nlohmann::json::parse(read_file(synth_spec)));
      auto rec = synthgen::gen_event(spec);
      if (!synth_no_currents) {
        auto ems = load_ems(synth_settings);
        auto reference = evalpipe::params_from_ems(ems);
        auto bundle = load_fit_bundle(synth_fit);
        double l = synth_l;
        if (!(l > 0.0)) l = gaintune::reactance_from_gain(ems.gain, bundle.fit);
        simcore::GridEquivalent grid;
        grid.mode = simcore::GridMode::thevenin;
        grid.l_henry = l;
        grid.v_base_kv = spec.v_base_kv;
        grid.f0 = spec.f0;
        reference.gain = gaintune::auto_gain_adjust(reference, grid, bundle.table).first;
        synthgen::SynthQOptions opt;
        opt.f0 = spec.f0;
        opt.v_base_kv = spec.v_base_kv;
        rec = synthgen::synth_measured_q(rec, reference, opt);
      }
      auto [cfg_text, dat_text] = records::write_comtrade(rec);
      write_file(synth_out + ".cfg", cfg_text);
      write_file(synth_out + ".dat", dat_text);
      std::printf("wrote %s.cfg and %s.dat (%zu channels, %zu samples)\n", synth_out.c_str(),
                  synth_out.c_str(), rec.channels.size(), rec.n_samples);
      return kExitPass;
    }

    if (*ev) {
      auto bundle = load_fit_bundle(ev_fit);
      auto rep = run_evaluation(ev_job, bundle, ev_cfg);
      print_summary(rep, "");
      return rep.verdict == evalpipe::Verdict::PASS ? kExitPass : kExitFail;
    }

    if (*batch) {
      auto bundle = load_fit_bundle(batch_fit);
      nlohmann::json mj;
      try {
        mj = nlohmann::json::parse(read_file(batch_manifest));
      } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("manifest is not valid JSON: ") + e.what());
      }
      if (!mj.is_array()) throw SchemaError("manifest must be a JSON array");
      std::vector<EvalJob> jobs;
      for (const auto& e : mj) {
        if (!e.contains("recording") || !e.contains("ems"))
          throw SchemaError("manifest entry needs 'recording' and 'ems'");
        jobs.push_back({e["recording"].get<std::string>(), e["ems"].get<std::string>(),
                        e.value("report", ""), e.value("plot", ""), e.value("csv", "")});
      }
      std::vector<std::optional<evalpipe::EvaluationReport>> results(jobs.size());
      std::vector<std::string> failures(jobs.size());
      std::atomic<std::size_t> next{0};
      auto worker = [&] {
        for (;;) {
          std::size_t i = next.fetch_add(1);
          if (i >= jobs.size()) return;
          try {
            results[i] = run_evaluation(jobs[i], bundle, batch_cfg);
          } catch (const std::exception& e) {
            failures[i] = e.what();
          }
        }
      };
      unsigned n_threads = std::max(1u, std::min<unsigned>(batch_jobs,
                                    static_cast<unsigned>(jobs.size())));
      std::vector<std::thread> pool;
      for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
      for (auto& t : pool) t.join();

      bool any_fail = false, any_error = false;
      for (std::size_t i = 0; i < jobs.size(); ++i) {
        if (!failures[i].empty()) {
          std::fprintf(stderr, "error: %s: %s\n", jobs[i].recording.c_str(), failures[i].c_str());
          any_error = true;
          continue;
        }
        print_summary(*results[i], jobs[i].recording);
        if (results[i]->verdict != evalpipe::Verdict::PASS) any_fail = true;
      }
      if (any_error) return kExitInput;
      return any_fail ? kExitFail : kExitPass;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;
}
