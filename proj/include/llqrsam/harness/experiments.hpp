#pragma once

// Experiment registry for `run <config>`. Every experiment writes its CSVs,
// a summary.json and a manifest.json; nothing time- or host-dependent goes
// into any of them, so identical configs give byte-identical directories.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "llqrsam/harness/config.hpp"
#include "llqrsam/harness/io.hpp"
#include "llqrsam/harness/studies.hpp"

namespace llqrsam::harness {

inline constexpr const char* kToolVersion = "1.0.0";

struct RunOutcome {
  std::vector<std::string> files;
  std::vector<std::string> aborted;  // "<run>: <reason>"
  json summary;
};

namespace detail {

class ArtifactSink {
 public:
  explicit ArtifactSink(std::filesystem::path dir) : dir_(std::move(dir)) { ensure_dir(dir_); }

  void put(const std::string& name, const std::string& text) {
    write_file(dir_ / name, text);
    files_.push_back(name);
  }
  std::vector<std::string>& files() { return files_; }

 private:
  std::filesystem::path dir_;
  std::vector<std::string> files_;
};

inline std::string trajectory_csv(const TrajectoryRecord& rec) {
  std::vector<std::string> header{"step"};
  const std::size_t dim = rec.rows.empty() ? 0 : rec.rows.front().theta.size();
  for (std::size_t k = 0; k < dim; ++k) header.push_back("theta_" + std::to_string(k));
  for (const char* h : {"loss", "grad_norm", "grad_dual_norm", "perturbation_norm", "path_length",
                        "region"})
    header.push_back(h);
  CsvWriter w(header);
  for (const auto& r : rec.rows) {
    w.cell(r.step);
    for (double x : r.theta) w.cell(x);
    w.cell(r.loss).cell(r.grad_norm).cell(r.grad_dual_norm).cell(r.perturbation_norm)
        .cell(r.path_length).cell(to_string(r.region));
    w.end_row();
  }
  return w.text();
}

inline json optimizer_json(const VariantSpec& v) {
  return json{{"name", v.name},
              {"rule", to_string(v.opt.rule)},
              {"lr", v.opt.lr},
              {"rho", v.opt.rho},
              {"momentum", v.opt.momentum}};
}

}  // namespace detail

// ---------------------------------------------------------------------------

inline RunOutcome run_toy(const ExperimentConfig& c, const std::filesystem::path& out,
                          std::size_t jobs) {
  const ToyParams p = parse_toy(c.raw);
  const SharpWell2D well(p.landscape);
  const MetricState u = parse_fixed_metric(p.metric, 2, "metric");
  const Vec start = p.start.empty() ? Vec{well.ring_minimum_radius(), 0.0} : p.start;
  const bool noisy = c.experiment == "noise-toy";
  const std::vector<std::uint64_t> seeds =
      p.seeds.empty() ? std::vector<std::uint64_t>{c.seed} : p.seeds;

  struct Job {
    std::size_t variant;
    std::uint64_t seed;
  };
  std::vector<Job> runs;
  for (std::size_t v = 0; v < p.variants.size(); ++v) {
    if (noisy)
      for (auto s : seeds) runs.push_back({v, s});
    else
      runs.push_back({v, c.seed});
  }
  std::vector<TrajectoryRecord> recs(runs.size());
  std::vector<std::string> errors(runs.size());
  TrajectoryOptions opt;
  opt.horizon = p.horizon;
  opt.stride = p.stride;
  opt.injection = p.injection;
  opt.classify = [&](std::span<const double> th) { return well.region(th); };
  opt.exit_from = Region::sharp;
  parallel_for(runs.size(), jobs, [&](std::size_t i) {
    const NoiseSchedule sched{runs[i].seed, noisy ? p.noise_variance : 0.0, 2};
    try {
      recs[i] = run_noisy_trajectory(well, p.variants[runs[i].variant].opt, u, start, sched, opt);
    } catch (const StepAborted& e) {
      errors[i] = e.what();
    }
  });

  detail::ArtifactSink sink(out);
  RunOutcome o;
  json rows = json::array();
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& v = p.variants[runs[i].variant];
    const std::string tag = noisy ? v.name + "_seed" + std::to_string(runs[i].seed) : v.name;
    json row{{"variant", v.name}, {"rule", to_string(v.opt.rule)}, {"seed", runs[i].seed},
             {"variance", noisy ? p.noise_variance : 0.0}};
    if (!errors[i].empty()) {
      row["aborted"] = errors[i];
      o.aborted.push_back(tag + ": " + errors[i]);
    } else {
      const auto& r = recs[i];
      sink.put("trajectory_" + tag + ".csv", detail::trajectory_csv(r));
      row["exit_step"] = r.exit_step ? json(*r.exit_step) : json(nullptr);
      row["path_length"] = r.path_length;
      row["final_region"] = to_string(r.final_region);
      row["final_loss"] = r.final_loss;
      row["final_theta"] = r.final_theta;
      row["mean_grad_dual_sq"] = r.mean_dual_sq;
    }
    rows.push_back(row);
  }
  o.summary = json{{"landscape",
                    {{"ring_minimum_radius", well.ring_minimum_radius()},
                     {"barrier_radius", well.barrier_radius()},
                     {"basin_radius", well.basin_radius()}}},
                   {"start", start},
                   {"runs", rows}};
  o.files = std::move(sink.files());
  return o;
}

inline RunOutcome run_envelope(const ExperimentConfig& c, const std::filesystem::path& out,
                               std::size_t jobs) {
  const EnvelopeParams p = parse_envelope(c.raw);
  const auto cells = envelope_cells(p.eta, p.mu, p.rho, p.lambda_bar);
  std::vector<EnvelopeCell> res(cells.size());
  parallel_for(cells.size(), jobs,
               [&](std::size_t i) { res[i] = envelope_cell(cells[i], p.steps, p.window, p.z0); });
  CsvWriter w({"eta", "mu", "rho", "lambda_bar", "a", "b", "measured", "predicted", "abs_error",
               "hovering_envelope"});
  double worst = 0.0;
  for (const auto& r : res) {
    w.cell(r.p.eta).cell(r.p.mu).cell(r.p.rho).cell(r.p.lambda_bar).cell(r.p.a()).cell(r.p.b())
        .cell(r.measured).cell(r.predicted).cell(r.abs_error)
        .cell(analysis::hovering_envelope(r.p.rho, r.p.lambda_bar));
    w.end_row();
    worst = std::max(worst, r.abs_error);
  }
  detail::ArtifactSink sink(out);
  sink.put("envelope.csv", w.text());
  RunOutcome o;
  o.summary = json{{"cells", res.size()}, {"steps", p.steps}, {"window", p.window},
                   {"max_abs_error", worst}};
  o.files = std::move(sink.files());
  return o;
}

inline RunOutcome run_amplification(const ExperimentConfig& c, const std::filesystem::path& out,
                                    std::size_t jobs) {
  const AmplificationParams p = parse_amplification(c.raw);
  std::vector<AmplificationRow> rows(p.lambda_eps.size());
  parallel_for(rows.size(), jobs, [&](std::size_t i) {
    rows[i] = amplification_row(p.eta, p.rho, p.lambda_bar, p.lambda_eps[i], p.steps, p.window, p.z0);
  });
  CsvWriter w({"lambda_eps", "mu", "eta_mu", "llqr_sam_measured", "llqr_sam_predicted",
               "llqr_sam_abs_error", "leading_scale", "scale_recovered", "sam_measured",
               "sam_predicted", "sam_abs_error", "amplification_ratio", "llqr_sam_diverged",
               "sam_diverged"});
  for (const auto& r : rows) {
    w.cell(r.lambda_eps).cell(r.mu).cell(r.eta_mu).cell(r.llqr_measured).cell(r.llqr_predicted)
        .cell(r.llqr_abs_error).cell(r.leading_scale).cell(r.scale_recovered)
        .cell(r.vanilla_measured).cell(r.vanilla_predicted).cell(r.vanilla_abs_error)
        .cell(r.amplification).cell(r.llqr_diverged ? 1 : 0).cell(r.vanilla_diverged ? 1 : 0);
    w.end_row();
  }
  detail::ArtifactSink sink(out);
  sink.put("amplification.csv", w.text());
  RunOutcome o;
  json diverged = json::array();
  for (const auto& r : rows)
    if (r.llqr_diverged || r.vanilla_diverged) diverged.push_back(r.lambda_eps);
  o.summary = json{{"eta", p.eta},
                   {"rho", p.rho},
                   {"lambda_bar", p.lambda_bar},
                   {"hovering_envelope", analysis::hovering_envelope(p.rho, p.lambda_bar)},
                   {"vanilla_envelope", analysis::vanilla_envelope(p.rho)},
                   {"amplification_ratio", analysis::amplification_ratio(p.lambda_bar)},
                   {"diverged_lambda_eps", diverged}};
  o.files = std::move(sink.files());
  return o;
}

inline RunOutcome run_whitening(const ExperimentConfig& c, const std::filesystem::path& out,
                                std::size_t jobs) {
  const WhiteningParams p = parse_whitening(c.raw);
  std::vector<WhiteningRow> rows(p.instances);
  parallel_for(rows.size(), jobs, [&](std::size_t i) {
    rows[i] = whitening_row(c.seed, i, p.min_dim, p.max_dim, p.steps, p.eta_scale, p.rho);
  });
  CsvWriter w({"instance", "dim", "eta", "max_mu", "commutator", "whitening_max_dev",
               "optimizer_max_step_dev", "optimizer_max_traj_dev"});
  double wmax = 0.0, smax = 0.0;
  for (const auto& r : rows) {
    w.cell(r.instance).cell(r.dim).cell(r.eta).cell(r.max_mu).cell(r.commutator)
        .cell(r.whitening_max_dev).cell(r.optimizer_max_step_dev).cell(r.optimizer_max_traj_dev);
    w.end_row();
    wmax = std::max(wmax, r.whitening_max_dev);
    smax = std::max(smax, r.optimizer_max_step_dev);
  }
  detail::ArtifactSink sink(out);
  sink.put("whitening.csv", w.text());
  RunOutcome o;
  o.summary = json{{"instances", p.instances},
                   {"steps", p.steps},
                   {"max_whitening_dev", wmax},
                   {"max_optimizer_step_dev", smax}};
  o.files = std::move(sink.files());
  return o;
}

inline RunOutcome run_damping(const ExperimentConfig& c, const std::filesystem::path& out,
                              std::size_t jobs) {
  const DampingParams p = parse_damping(c.raw);
  std::vector<analysis::Ar1Stats> th(p.d.size());
  std::vector<Ar1Empirical> em(p.d.size());
  parallel_for(p.d.size(), jobs, [&](std::size_t i) {
    const analysis::Ar1Params a{p.eta, p.lambda, p.d[i], p.tau2};
    th[i] = analysis::ar1_stationary_stats(a);
    em[i] = ar1_simulate(a, p.steps, hash_key(c.seed, 9, i));
  });
  CsvWriter w({"d", "variance_theory", "variance_empirical", "variance_rel_error",
               "motion_theory", "motion_empirical", "motion_rel_error"});
  for (std::size_t i = 0; i < p.d.size(); ++i) {
    w.cell(p.d[i]).cell(th[i].variance).cell(em[i].variance)
        .cell(std::abs(em[i].variance / th[i].variance - 1.0)).cell(th[i].one_step_motion)
        .cell(em[i].one_step_motion).cell(std::abs(em[i].one_step_motion / th[i].one_step_motion - 1.0));
    w.end_row();
  }
  detail::ArtifactSink sink(out);
  sink.put("damping.csv", w.text());
  RunOutcome o;
  o.summary = json{{"eta", p.eta}, {"lambda", p.lambda}, {"tau2", p.tau2}, {"steps", p.steps}};
  o.files = std::move(sink.files());
  return o;
}

inline RunOutcome run_selection(const ExperimentConfig& c, const std::filesystem::path& out,
                                std::size_t jobs) {
  const SelectionParams p = parse_selection(c.raw);
  std::vector<ExitStats> stats(p.sigma.size());
  parallel_for(p.sigma.size(), jobs, [&](std::size_t i) {
    RegenerativeConfig rc{p.wells, p.sigma[i], p.metric, p.max_cycles, p.max_steps_per_cycle,
                          hash_key(c.seed, 3, i), p.injection};
    stats[i] = regenerative_simulate(rc, p.optimizer);
  });
  Vec nu;
  for (const auto& w : p.wells) nu.push_back(w.nu);
  CsvWriter w({"sigma", "well", "nu", "cycles", "censored", "mean_exit_time", "mean_path_length",
               "occupancy", "predicted_occupancy", "standard_error"});
  json sweep = json::array();
  for (std::size_t i = 0; i < p.sigma.size(); ++i) {
    json cell{{"sigma", p.sigma[i]}, {"censored_cycles", stats[i].censored_cycles}};
    bool all_visited = true;
    for (const auto& ws : stats[i].wells) all_visited = all_visited && ws.cycles > 0;
    std::optional<RenewalCheck> chk;
    if (all_visited) chk = renewal_check(stats[i], nu);
    for (std::size_t m = 0; m < p.wells.size(); ++m) {
      const auto& ws = stats[i].wells[m];
      w.cell(p.sigma[i]).cell(p.wells[m].name).cell(nu[m]).cell(ws.cycles).cell(ws.censored)
          .cell(ws.mean_exit_time).cell(ws.mean_path_length).cell(ws.occupancy)
          .cell(chk ? chk->predicted[m] : std::nan("")).cell(chk ? chk->standard_error[m] : std::nan(""));
      w.end_row();
    }
    cell["max_z"] = chk ? json(chk->max_z) : json(nullptr);
    sweep.push_back(cell);
  }
  detail::ArtifactSink sink(out);
  sink.put("selection.csv", w.text());
  RunOutcome o;
  o.summary = json{{"sweep", sweep}};
  o.files = std::move(sink.files());
  return o;
}

inline MetricState initial_learned_metric(const LearnedMetricSpec& m, const LayeredNet& net) {
  MetricState u;
  switch (m.structure) {
    case MetricStructure::diagonal: u = MetricState::diagonal(Vec(net.dim(), m.init)); break;
    case MetricStructure::dense:
      u = MetricState::dense(m.init * SymMatrix::identity(net.dim()));
      break;
    default: u = MetricState::layer_blocks(net, m.block, m.init); break;
  }
  u.ema_beta = m.beta;
  u.cadence = m.cadence;
  u.bounds = m.bounds;
  return u;
}

inline RunOutcome run_mlp(const ExperimentConfig& c, const std::filesystem::path& out,
                          std::size_t jobs) {
  const MlpParams p = parse_mlp(c.raw);
  const LayeredNet net(p.net.layers, p.net.input, p.net.target, p.net.loss);
  CounterRng init_rng(c.seed, 41);
  const Vec theta0 = net.random_parameters(init_rng, p.net.init_gain);

  struct Trace {
    std::string csv;
    json summary;
    std::string error;
  };
  std::vector<Trace> traces(p.variants.size());
  parallel_for(p.variants.size(), jobs, [&](std::size_t i) {
    const auto& v = p.variants[i];
    MetricState u = initial_learned_metric(p.metric, net);
    const bool learns = v.opt.rule != Rule::sgdm && v.opt.rule != Rule::sam;
    Vec theta = theta0;
    OptimizerState st = OptimizerState::zeros(net.dim());
    CsvWriter w({"step", "loss", "grad_norm", "grad_dual_norm", "refreshed", "objective_start",
                 "objective_end", "u_min", "u_max"});
    std::size_t refreshes = 0, warnings = 0;
    double dual_sum = 0.0;
    try {
      for (std::size_t t = 0; t < p.horizon; ++t) {
        bool refreshed = false;
        double j0 = 0.0, jt = 0.0;
        if (learns && u.refresh_due()) {
          auto rep = learn_preconditioner(u, net, theta, p.metric.divergence, p.inner, p.metric.damping);
          const std::size_t counter = u.step_counter;
          u = std::move(rep.state);
          u.step_counter = counter;
          refreshed = true;
          ++refreshes;
          warnings += rep.warnings.size();
          j0 = rep.objective_start;
          jt = rep.objective_end;
        }
        const auto info = step(v.opt, st, u, net, theta);
        ++u.step_counter;
        dual_sum += info.grad_dual_norm * info.grad_dual_norm;
        if (t % p.stride == 0 || refreshed) {
          const auto [lo, hi] = u.extreme_eigenvalues();
          w.cell(t).cell(info.loss).cell(info.grad_norm).cell(info.grad_dual_norm)
              .cell(refreshed ? 1 : 0).cell(j0).cell(jt).cell(lo).cell(hi);
          w.end_row();
        }
      }
    } catch (const StepAborted& e) {
      traces[i].error = e.what();
    }
    traces[i].csv = w.text();
    traces[i].summary = json{{"variant", v.name},
                             {"rule", to_string(v.opt.rule)},
                             {"final_loss", net.evaluate(theta).loss},
                             {"refreshes", refreshes},
                             {"metric_warnings", warnings},
                             {"mean_grad_dual_sq", dual_sum / static_cast<double>(p.horizon)}};
  });

  detail::ArtifactSink sink(out);
  RunOutcome o;
  json runs = json::array();
  for (std::size_t i = 0; i < traces.size(); ++i) {
    sink.put("training_" + p.variants[i].name + ".csv", traces[i].csv);
    if (!traces[i].error.empty()) {
      traces[i].summary["aborted"] = traces[i].error;
      o.aborted.push_back(p.variants[i].name + ": " + traces[i].error);
    }
    runs.push_back(traces[i].summary);
  }
  o.summary = json{{"parameters", net.dim()}, {"runs", runs}};
  if (p.oracles) {
    const auto s = scalar_learner_oracle();
    const auto d = dense_learner_oracle(c.seed);
    o.summary["oracles"] = json{
        {"scalar", {{"learned_u", s.learned_u}, {"target_u", s.target_u}, {"abs_error", s.abs_error},
                    {"theta_after_unit_step", s.theta_after_step}}},
        {"two_layer_dense", {{"angle_over_pi", d.angle_fraction}, {"objective_start", d.objective_start},
                             {"objective_end", d.objective_end}, {"clamped", d.clamped}}}};
  }
  o.files = std::move(sink.files());
  return o;
}

inline RunOutcome run_transfer(const ExperimentConfig& c, const std::filesystem::path& out,
                               std::size_t jobs) {
  const TransferParams p = parse_transfer(c.raw);
  const auto q = TwoScaleQuadratic::rotated(p.hbar_eigs, p.heps_eigs, p.rotation);
  const SymMatrix u_sym = q.average_inverse();
  const MetricState u = MetricState::dense(u_sym);
  CounterRng rng(c.seed, 17);
  Vec theta0(q.dim());
  for (double& x : theta0) x = rng.normal();

  struct Trace {
    std::string csv;
    json summary;
    std::string error;
  };
  std::vector<Trace> traces(p.variants.size());
  parallel_for(p.variants.size(), jobs, [&](std::size_t i) {
    const auto& v = p.variants[i];
    const NoiseSchedule sched{c.seed, p.noise_variance, q.dim()};
    Vec theta = theta0, e = theta0, noise(q.dim());
    OptimizerState st = OptimizerState::zeros(q.dim());
    const bool compare = v.opt.rule == Rule::llqr_sam && v.opt.momentum == 0.0 &&
                         v.opt.weight_decay == 0.0 && p.noise_variance == 0.0;
    CsvWriter w({"step", "loss", "grad_dual_sq", "running_mean_grad_dual_sq", "recursion_dev"});
    double sum = 0.0, dev_max = 0.0;
    try {
      for (std::size_t t = 0; t < p.horizon; ++t) {
        sched.fill(t, noise);
        const auto info = step(v.opt, st, u, q, theta, noise, p.injection);
        sum += info.grad_dual_norm * info.grad_dual_norm;
        double dev = std::nan("");
        if (compare) {
          e = analysis::matrix_recursion_step(q, u_sym, v.opt.lr, v.opt.rho, e);
          dev = 0.0;
          for (std::size_t k = 0; k < e.size(); ++k) dev = std::max(dev, std::abs(e[k] - theta[k]));
          dev_max = std::max(dev_max, dev);
        }
        if (t % p.stride == 0) {
          w.cell(t).cell(info.loss).cell(info.grad_dual_norm * info.grad_dual_norm)
              .cell(sum / static_cast<double>(t + 1)).cell(dev);
          w.end_row();
        }
      }
    } catch (const StepAborted& ex) {
      traces[i].error = ex.what();
    }
    traces[i].csv = w.text();
    traces[i].summary = json{{"variant", v.name},
                             {"rule", to_string(v.opt.rule)},
                             {"mean_grad_dual_sq", sum / static_cast<double>(p.horizon)},
                             {"final_loss", q.evaluate(theta).loss},
                             {"max_recursion_dev", compare ? json(dev_max) : json(nullptr)}};
  });
  detail::ArtifactSink sink(out);
  RunOutcome o;
  json runs = json::array();
  for (std::size_t i = 0; i < traces.size(); ++i) {
    sink.put("diagnostic_" + p.variants[i].name + ".csv", traces[i].csv);
    if (!traces[i].error.empty()) {
      traces[i].summary["aborted"] = traces[i].error;
      o.aborted.push_back(p.variants[i].name + ": " + traces[i].error);
    }
    runs.push_back(traces[i].summary);
  }
  o.summary = json{{"commuting", q.commuting()},
                   {"perceived_sharpness", q.perceived_sharpness()},
                   {"runs", runs}};
  o.files = std::move(sink.files());
  return o;
}

/// Dispatch, then write summary.json and manifest.json.
inline RunOutcome run_experiment(const ExperimentConfig& c, const std::filesystem::path& out,
                                 std::size_t jobs = 1) {
  RunOutcome o;
  const std::string& t = c.experiment;
  if (t == "escape-toy" || t == "noise-toy") o = run_toy(c, out, jobs);
  else if (t == "envelope-sweep") o = run_envelope(c, out, jobs);
  else if (t == "amplification-sweep") o = run_amplification(c, out, jobs);
  else if (t == "whitening-check") o = run_whitening(c, out, jobs);
  else if (t == "damping-check") o = run_damping(c, out, jobs);
  else if (t == "selection-sweep") o = run_selection(c, out, jobs);
  else if (t == "llqr-mlp-check") o = run_mlp(c, out, jobs);
  else if (t == "transfer-diagnostic") o = run_transfer(c, out, jobs);
  else throw ConfigError("unknown experiment '" + t + "'");

  json summary{{"experiment", t}, {"seed", c.seed}, {"config_hash", c.hash},
               {"aborted", o.aborted}};
  for (auto& [k, v] : o.summary.items()) summary[k] = v;
  write_file(out / "summary.json", dump_json(summary));
  o.files.push_back("summary.json");
  json files = o.files;
  const json manifest{{"experiment", t},      {"seed", c.seed},   {"config_hash", c.hash},
                      {"config", c.raw},      {"files", files},   {"tool_version", kToolVersion}};
  write_file(out / "manifest.json", dump_json(manifest));
  o.files.push_back("manifest.json");
  o.summary = std::move(summary);
  return o;
}

}  // namespace llqrsam::harness
