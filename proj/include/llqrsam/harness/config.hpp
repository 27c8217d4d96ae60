#pragma once

// Experiment configuration: one JSON document per experiment. Every
// section is parsed into a typed struct up front so a bad file fails with
// exit code 1 before any simulation runs.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "llqrsam/errors.hpp"
#include "llqrsam/harness/io.hpp"
#include "llqrsam/landscapes.hpp"
#include "llqrsam/metric.hpp"
#include "llqrsam/optimizers.hpp"
#include "llqrsam/stochsim.hpp"

namespace llqrsam::harness {

struct ExperimentInfo {
  const char* tag;
  const char* summary;
  const char* criteria;
};

inline constexpr ExperimentInfo kExperiments[] = {
    {"escape-toy", "deterministic sharp-well escape, four variants", "6"},
    {"noise-toy", "sharp-well escape under a shared Gaussian schedule", "7"},
    {"envelope-sweep", "scalar-map limsup vs exact two-cycle amplitude", "1"},
    {"amplification-sweep", "LLQR+SAM vs SAM envelopes across sharpness", "2, 3"},
    {"whitening-check", "whitened, direct and optimizer recursions agree", "4, 5"},
    {"damping-check", "AR(1) stationary statistics vs closed form", "8"},
    {"selection-sweep", "regenerative two-well occupancy across noise scales", "9"},
    {"llqr-mlp-check", "LLQR learner oracles and metric-refreshed training", "10, 11"},
    {"transfer-diagnostic", "running mean of g^T U g under a frozen metric", "5"},
};

inline bool known_experiment(std::string_view tag) {
  for (const auto& e : kExperiments)
    if (tag == e.tag) return true;
  return false;
}

// ---------------------------------------------------------------------------
// JSON access with path-qualified errors

namespace cfg {

inline void check_keys(const json& j, std::initializer_list<std::string_view> allowed,
                       const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || k == a;
    if (!ok) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

inline const json& require(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing required key '" + key + "'");
  return j.at(key);
}

inline double number(const json& v, const std::string& where) {
  if (!v.is_number()) throw ConfigError(where + ": expected a number");
  return v.get<double>();
}

inline double number(const json& j, const char* key, double def, const std::string& where) {
  return j.contains(key) ? number(j.at(key), where + "." + key) : def;
}

inline std::uint64_t unsigned_int(const json& v, const std::string& where) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
    throw ConfigError(where + ": expected a non-negative integer");
  return v.get<std::uint64_t>();
}

inline std::uint64_t unsigned_int(const json& j, const char* key, std::uint64_t def,
                                  const std::string& where) {
  return j.contains(key) ? unsigned_int(j.at(key), where + "." + key) : def;
}

inline bool boolean(const json& j, const char* key, bool def, const std::string& where) {
  if (!j.contains(key)) return def;
  if (!j.at(key).is_boolean()) throw ConfigError(where + "." + key + ": expected true/false");
  return j.at(key).get<bool>();
}

inline std::string string(const json& j, const char* key, const std::string& def,
                          const std::string& where) {
  if (!j.contains(key)) return def;
  if (!j.at(key).is_string()) throw ConfigError(where + "." + key + ": expected a string");
  return j.at(key).get<std::string>();
}

inline Vec numbers(const json& v, const std::string& where) {
  if (!v.is_array()) throw ConfigError(where + ": expected an array of numbers");
  Vec out;
  for (std::size_t i = 0; i < v.size(); ++i)
    out.push_back(number(v[i], where + "[" + std::to_string(i) + "]"));
  return out;
}

inline Vec numbers(const json& j, const char* key, const Vec& def, const std::string& where) {
  return j.contains(key) ? numbers(j.at(key), where + "." + key) : def;
}

inline void positive(double x, const std::string& where) {
  if (!(x > 0.0)) throw ConfigError(where + ": must be > 0");
}

}  // namespace cfg

// ---------------------------------------------------------------------------
// Shared sections

struct VariantSpec {
  std::string name;
  OptimizerConfig opt;
};

inline OptimizerConfig parse_optimizer(const json& j, const std::string& where) {
  cfg::check_keys(j, {"name", "rule", "lr", "rho", "momentum", "fsam_lambda", "weight_decay",
                      "norm_floor", "fsam_transport", "fsam_order"},
                  where);
  OptimizerConfig o;
  const std::string rule = cfg::string(j, "rule", "", where);
  const auto r = parse_rule(rule);
  if (!r)
    throw ConfigError(where + ".rule: unknown rule '" + rule +
                      "' (expected sgdm, llqr, sam, llqr_sam, llqr_delta_sam or fsam)");
  o.rule = *r;
  o.lr = cfg::number(j, "lr", o.lr, where);
  o.rho = cfg::number(j, "rho", o.rho, where);
  o.momentum = cfg::number(j, "momentum", o.momentum, where);
  o.fsam_lambda = cfg::number(j, "fsam_lambda", o.fsam_lambda, where);
  o.weight_decay = cfg::number(j, "weight_decay", o.weight_decay, where);
  o.norm_floor = cfg::number(j, "norm_floor", o.norm_floor, where);
  const std::string tr = cfg::string(j, "fsam_transport", "identity", where);
  if (tr != "identity" && tr != "metric")
    throw ConfigError(where + ".fsam_transport: expected 'identity' or 'metric'");
  o.fsam_transport_metric = tr == "metric";
  const std::string ord = cfg::string(j, "fsam_order", "filter_then_transport", where);
  if (ord == "filter_then_transport") o.fsam_order = FsamOrder::filter_then_transport;
  else if (ord == "transport_then_filter") o.fsam_order = FsamOrder::transport_then_filter;
  else throw ConfigError(where + ".fsam_order: expected filter_then_transport or transport_then_filter");
  try {
    o.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return o;
}

inline std::vector<VariantSpec> parse_variants(const json& root) {
  if (!root.contains("variants")) throw ConfigError("variants: missing optimizer variant list");
  const json& v = root.at("variants");
  if (!v.is_array()) throw ConfigError("variants: expected an array");
  if (v.empty()) throw ConfigError("variants: at least one optimizer variant is required");
  std::vector<VariantSpec> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::string where = "variants[" + std::to_string(i) + "]";
    VariantSpec s;
    s.opt = parse_optimizer(v[i], where);
    s.name = cfg::string(v[i], "name", to_string(s.opt.rule), where);
    if (s.name.empty() || s.name.find_first_of("/\\ ,") != std::string::npos)
      throw ConfigError(where + ".name: must be non-empty without spaces, commas or slashes");
    for (const auto& prev : out)
      if (prev.name == s.name) throw ConfigError(where + ".name: duplicate variant '" + s.name + "'");
    out.push_back(std::move(s));
  }
  return out;
}

inline NoiseInjection parse_injection(const json& j, const std::string& where) {
  const std::string s = cfg::string(j, "injection", "post_transport", where);
  if (s == "post_transport") return NoiseInjection::post_transport;
  if (s == "pre_transport") return NoiseInjection::pre_transport;
  throw ConfigError(where + ".injection: expected post_transport or pre_transport");
}

/// Fixed metric on a flat parameter vector: identity, scalar * I,
/// diagonal, or dense.
inline MetricState parse_fixed_metric(const json& j, std::size_t dim, const std::string& where) {
  cfg::check_keys(j, {"structure", "value", "values", "matrix"}, where);
  const std::string s = cfg::string(j, "structure", "identity", where);
  try {
    if (s == "identity") return MetricState::identity(dim);
    if (s == "scalar") {
      const double v = cfg::number(cfg::require(j, "value", where), where + ".value");
      cfg::positive(v, where + ".value");
      return MetricState::diagonal(Vec(dim, v));
    }
    if (s == "diagonal") {
      Vec d = cfg::numbers(cfg::require(j, "values", where), where + ".values");
      if (d.size() != dim) throw ConfigError(where + ".values: expected " + std::to_string(dim) + " entries");
      for (double x : d) cfg::positive(x, where + ".values");
      return MetricState::diagonal(std::move(d));
    }
    if (s == "dense") {
      const json& m = cfg::require(j, "matrix", where);
      if (!m.is_array() || m.size() != dim) throw ConfigError(where + ".matrix: expected " + std::to_string(dim) + " rows");
      Matrix a(dim, dim);
      for (std::size_t r = 0; r < dim; ++r) {
        const Vec row = cfg::numbers(m[r], where + ".matrix");
        if (row.size() != dim) throw ConfigError(where + ".matrix: ragged row");
        for (std::size_t c = 0; c < dim; ++c) a(r, c) = row[c];
      }
      SymMatrix sm(a);
      require_spd(sym_eig(sm), "metric.matrix");
      return MetricState::dense(std::move(sm));
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
  throw ConfigError(where + ".structure: expected identity, scalar, diagonal or dense");
}

inline SharpWellParams parse_sharp_well(const json& j, const std::string& where) {
  cfg::check_keys(j, {"type", "lambda_flat", "ring_radius", "ring_depth", "ring_width"}, where);
  if (cfg::string(j, "type", "sharp_well", where) != "sharp_well")
    throw ConfigError(where + ".type: this experiment needs a sharp_well landscape");
  SharpWellParams p;
  p.lambda_flat = cfg::number(j, "lambda_flat", p.lambda_flat, where);
  p.ring_radius = cfg::number(j, "ring_radius", p.ring_radius, where);
  p.ring_depth = cfg::number(j, "ring_depth", p.ring_depth, where);
  p.ring_width = cfg::number(j, "ring_width", p.ring_width, where);
  try {
    SharpWell2D probe(p);
  } catch (const std::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return p;
}

// ---------------------------------------------------------------------------
// Per-experiment parameter blocks

struct ToyParams {
  SharpWellParams landscape;
  json metric;
  Vec start;             // empty = ring minimum on the x axis
  std::size_t horizon = 20000;
  std::size_t stride = 100;
  double noise_variance = 0.0;
  NoiseInjection injection = NoiseInjection::post_transport;
  std::vector<std::uint64_t> seeds;
  std::vector<VariantSpec> variants;
};

struct EnvelopeParams {
  Vec eta, mu, rho, lambda_bar;
  std::size_t steps = 100000;
  std::size_t window = 1000;
  double z0 = 0.70710678118654752;
};

struct AmplificationParams {
  double eta = 0.01;
  double rho = 0.1;
  double lambda_bar = 1.0;
  Vec lambda_eps;
  std::size_t steps = 100000;
  std::size_t window = 1000;
  double z0 = 0.70710678118654752;
};

struct WhiteningParams {
  std::size_t instances = 20;
  std::size_t min_dim = 2;
  std::size_t max_dim = 8;
  std::size_t steps = 100;
  double eta_scale = 0.25;  // eta = eta_scale / max perceived sharpness
  double rho = 1e-3;
};

struct DampingParams {
  double eta = 0.1;
  double lambda = 1.0;
  double tau2 = 1.0;
  Vec d;
  std::size_t steps = 1000000;
};

struct SelectionParams {
  std::vector<WellSpec> wells;
  Vec sigma;
  double metric = 1.0;
  std::size_t max_cycles = 4000;
  std::size_t max_steps_per_cycle = 2000000;
  NoiseInjection injection = NoiseInjection::post_transport;
  OptimizerConfig optimizer;
};

struct NetSpec {
  std::vector<LayerSpec> layers;
  Vec input;
  Vec target;
  LossKind loss = LossKind::squared;
  double init_gain = 1.0;
};

struct LearnedMetricSpec {
  MetricStructure structure = MetricStructure::layer_blocks;
  BlockKind block = BlockKind::kronecker;
  double init = 1.0;
  double beta = 0.95;
  std::size_t cadence = 500;
  double damping = 1e-3;
  Divergence divergence = Divergence::ngd;
  SpectralBounds bounds;
};

struct MlpParams {
  NetSpec net;
  LearnedMetricSpec metric;
  InnerSolverConfig inner;
  std::vector<VariantSpec> variants;
  std::size_t horizon = 1000;
  std::size_t stride = 10;
  bool oracles = true;
};

struct TransferParams {
  Vec hbar_eigs;
  Vec heps_eigs;
  double rotation = 0.0;
  std::size_t horizon = 1000;
  std::size_t stride = 10;
  double noise_variance = 0.0;
  NoiseInjection injection = NoiseInjection::post_transport;
  std::vector<VariantSpec> variants;
};

struct ExperimentConfig {
  std::string experiment;
  std::uint64_t seed = 0;
  json raw;
  std::string hash;  // FNV-1a of the canonical JSON dump
};

// ---------------------------------------------------------------------------

inline std::size_t positive_count(const json& j, const char* key, std::size_t def,
                                  const std::string& where) {
  const auto v = cfg::unsigned_int(j, key, def, where);
  if (v < 1) throw ConfigError(where + "." + key + ": must be >= 1");
  return static_cast<std::size_t>(v);
}

inline ToyParams parse_toy(const json& j) {
  cfg::check_keys(j, {"experiment", "seed", "landscape", "metric", "start", "horizon", "stride",
                      "noise", "seeds", "variants", "description"},
                  "config");
  ToyParams p;
  p.landscape = parse_sharp_well(j.value("landscape", json::object()), "landscape");
  p.metric = j.value("metric", json{{"structure", "identity"}});
  parse_fixed_metric(p.metric, 2, "metric");
  if (j.contains("start")) {
    const json& s = j.at("start");
    if (s.is_string()) {
      if (s.get<std::string>() != "ring_minimum")
        throw ConfigError("start: expected a 2-vector or \"ring_minimum\"");
    } else {
      p.start = cfg::numbers(s, "start");
      if (p.start.size() != 2) throw ConfigError("start: expected 2 coordinates");
    }
  }
  p.horizon = positive_count(j, "horizon", p.horizon, "config");
  p.stride = positive_count(j, "stride", p.stride, "config");
  if (j.contains("noise")) {
    const json& n = j.at("noise");
    cfg::check_keys(n, {"variance", "injection"}, "noise");
    p.noise_variance = cfg::number(n, "variance", 0.0, "noise");
    if (!(p.noise_variance >= 0.0)) throw ConfigError("noise.variance: must be >= 0");
    p.injection = parse_injection(n, "noise");
  }
  if (j.contains("seeds")) {
    const json& s = j.at("seeds");
    if (!s.is_array() || s.empty()) throw ConfigError("seeds: expected a non-empty array");
    for (std::size_t i = 0; i < s.size(); ++i)
      p.seeds.push_back(cfg::unsigned_int(s[i], "seeds[" + std::to_string(i) + "]"));
  }
  p.variants = parse_variants(j);
  return p;
}

inline EnvelopeParams parse_envelope(const json& j) {
  cfg::check_keys(j, {"experiment", "seed", "grid", "steps", "window", "z0", "description"}, "config");
  EnvelopeParams p;
  const json& g = cfg::require(j, "grid", "config");
  cfg::check_keys(g, {"eta", "mu", "rho", "lambda_bar"}, "grid");
  p.eta = cfg::numbers(cfg::require(g, "eta", "grid"), "grid.eta");
  p.mu = cfg::numbers(cfg::require(g, "mu", "grid"), "grid.mu");
  p.rho = cfg::numbers(cfg::require(g, "rho", "grid"), "grid.rho");
  p.lambda_bar = cfg::numbers(cfg::require(g, "lambda_bar", "grid"), "grid.lambda_bar");
  for (const Vec* v : {&p.eta, &p.mu, &p.lambda_bar})
    for (double x : *v) cfg::positive(x, "grid");
  for (double x : p.rho)
    if (!(x >= 0.0)) throw ConfigError("grid.rho: must be >= 0");
  p.steps = positive_count(j, "steps", p.steps, "config");
  p.window = positive_count(j, "window", p.window, "config");
  if (p.window > p.steps) throw ConfigError("window: must not exceed steps");
  p.z0 = cfg::number(j, "z0", p.z0, "config");
  return p;
}

inline AmplificationParams parse_amplification(const json& j) {
  cfg::check_keys(j, {"experiment", "seed", "eta", "rho", "lambda_bar", "lambda_eps", "steps",
                      "window", "z0", "description"},
                  "config");
  AmplificationParams p;
  p.eta = cfg::number(j, "eta", p.eta, "config");
  p.rho = cfg::number(j, "rho", p.rho, "config");
  p.lambda_bar = cfg::number(j, "lambda_bar", p.lambda_bar, "config");
  cfg::positive(p.eta, "eta");
  cfg::positive(p.lambda_bar, "lambda_bar");
  if (!(p.rho >= 0.0)) throw ConfigError("rho: must be >= 0");
  p.lambda_eps = cfg::numbers(cfg::require(j, "lambda_eps", "config"), "lambda_eps");
  if (p.lambda_eps.empty()) throw ConfigError("lambda_eps: expected at least one value");
  for (double x : p.lambda_eps)
    if (!(x >= 0.0)) throw ConfigError("lambda_eps: values must be >= 0");
  p.steps = positive_count(j, "steps", p.steps, "config");
  p.window = positive_count(j, "window", p.window, "config");
  if (p.window > p.steps) throw ConfigError("window: must not exceed steps");
  p.z0 = cfg::number(j, "z0", p.z0, "config");
  return p;
}

inline WhiteningParams parse_whitening(const json& j) {
  cfg::check_keys(j, {"experiment", "seed", "instances", "min_dim", "max_dim", "steps",
                      "eta_scale", "rho", "description"},
                  "config");
  WhiteningParams p;
  p.instances = positive_count(j, "instances", p.instances, "config");
  p.min_dim = positive_count(j, "min_dim", p.min_dim, "config");
  p.max_dim = positive_count(j, "max_dim", p.max_dim, "config");
  if (p.min_dim > p.max_dim) throw ConfigError("min_dim: must not exceed max_dim");
  if (p.max_dim > 64) throw ConfigError("max_dim: at most 64");
  p.steps = positive_count(j, "steps", p.steps, "config");
  p.eta_scale = cfg::number(j, "eta_scale", p.eta_scale, "config");
  if (!(p.eta_scale > 0.0 && p.eta_scale < 2.0)) throw ConfigError("eta_scale: must be in (0, 2)");
  p.rho = cfg::number(j, "rho", p.rho, "config");
  if (!(p.rho >= 0.0)) throw ConfigError("rho: must be >= 0");
  return p;
}

inline DampingParams parse_damping(const json& j) {
  cfg::check_keys(j, {"experiment", "seed", "eta", "lambda", "tau2", "d", "steps", "description"},
                  "config");
  DampingParams p;
  p.eta = cfg::number(j, "eta", p.eta, "config");
  p.lambda = cfg::number(j, "lambda", p.lambda, "config");
  p.tau2 = cfg::number(j, "tau2", p.tau2, "config");
  p.d = cfg::numbers(cfg::require(j, "d", "config"), "d");
  if (p.d.empty()) throw ConfigError("d: expected at least one value");
  p.steps = positive_count(j, "steps", p.steps, "config");
  for (double d : p.d) {
    try {
      analysis::Ar1Params{p.eta, p.lambda, d, p.tau2}.validate();
    } catch (const std::exception& e) {
      throw ConfigError(std::string("d: ") + e.what());
    }
  }
  return p;
}

inline SelectionParams parse_selection(const json& j) {
  cfg::check_keys(j, {"experiment", "seed", "wells", "sigma", "metric", "max_cycles",
                      "max_steps_per_cycle", "injection", "optimizer", "description"},
                  "config");
  SelectionParams p;
  const json& w = cfg::require(j, "wells", "config");
  if (!w.is_array() || w.empty()) throw ConfigError("wells: expected a non-empty array");
  for (std::size_t i = 0; i < w.size(); ++i) {
    const std::string where = "wells[" + std::to_string(i) + "]";
    cfg::check_keys(w[i], {"name", "nu", "curvature", "exit_radius"}, where);
    WellSpec s;
    s.name = cfg::string(w[i], "name", "well" + std::to_string(i), where);
    s.nu = cfg::number(cfg::require(w[i], "nu", where), where + ".nu");
    s.curvature = cfg::number(cfg::require(w[i], "curvature", where), where + ".curvature");
    s.exit_radius = cfg::number(cfg::require(w[i], "exit_radius", where), where + ".exit_radius");
    p.wells.push_back(s);
  }
  p.sigma = cfg::numbers(cfg::require(j, "sigma", "config"), "sigma");
  if (p.sigma.empty()) throw ConfigError("sigma: expected at least one value");
  for (double s : p.sigma) cfg::positive(s, "sigma");
  p.metric = cfg::number(j, "metric", p.metric, "config");
  p.max_cycles = positive_count(j, "max_cycles", p.max_cycles, "config");
  p.max_steps_per_cycle = positive_count(j, "max_steps_per_cycle", p.max_steps_per_cycle, "config");
  p.injection = parse_injection(j, "config");
  p.optimizer = parse_optimizer(cfg::require(j, "optimizer", "config"), "optimizer");
  RegenerativeConfig probe{p.wells, p.sigma.front(), p.metric, p.max_cycles, p.max_steps_per_cycle, 0,
                           p.injection};
  try {
    probe.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return p;
}

inline NetSpec parse_net(const json& j, const std::string& where) {
  cfg::check_keys(j, {"layers", "input", "target", "loss", "init_gain"}, where);
  NetSpec n;
  const json& ls = cfg::require(j, "layers", where);
  if (!ls.is_array() || ls.empty()) throw ConfigError(where + ".layers: expected a non-empty array");
  for (std::size_t i = 0; i < ls.size(); ++i) {
    const std::string lw = where + ".layers[" + std::to_string(i) + "]";
    cfg::check_keys(ls[i], {"in", "out", "activation", "bias"}, lw);
    LayerSpec l;
    l.in = positive_count(ls[i], "in", 0, lw);
    l.out = positive_count(ls[i], "out", 0, lw);
    const std::string act = cfg::string(ls[i], "activation", "identity", lw);
    if (act == "identity") l.activation = Activation::identity;
    else if (act == "tanh") l.activation = Activation::tanh;
    else throw ConfigError(lw + ".activation: expected identity or tanh");
    l.bias = cfg::boolean(ls[i], "bias", true, lw);
    n.layers.push_back(l);
  }
  n.input = cfg::numbers(cfg::require(j, "input", where), where + ".input");
  n.target = cfg::numbers(cfg::require(j, "target", where), where + ".target");
  const std::string loss = cfg::string(j, "loss", "squared", where);
  if (loss == "squared") n.loss = LossKind::squared;
  else if (loss == "softmax_cross_entropy") n.loss = LossKind::softmax_cross_entropy;
  else throw ConfigError(where + ".loss: expected squared or softmax_cross_entropy");
  n.init_gain = cfg::number(j, "init_gain", n.init_gain, where);
  try {
    LayeredNet probe(n.layers, n.input, n.target, n.loss);
  } catch (const std::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return n;
}

inline MlpParams parse_mlp(const json& j) {
  cfg::check_keys(j, {"experiment", "seed", "net", "metric", "inner", "variants", "horizon",
                      "stride", "oracles", "description"},
                  "config");
  MlpParams p;
  p.net = parse_net(cfg::require(j, "net", "config"), "net");
  if (j.contains("metric")) {
    const json& m = j.at("metric");
    cfg::check_keys(m, {"structure", "block", "init", "beta", "cadence", "damping", "divergence",
                        "u_min", "u_max"},
                    "metric");
    const std::string s = cfg::string(m, "structure", "layer_blocks", "metric");
    if (s == "diagonal") p.metric.structure = MetricStructure::diagonal;
    else if (s == "dense") p.metric.structure = MetricStructure::dense;
    else if (s == "layer_blocks") p.metric.structure = MetricStructure::layer_blocks;
    else throw ConfigError("metric.structure: expected diagonal, dense or layer_blocks");
    const std::string b = cfg::string(m, "block", "kronecker", "metric");
    if (b == "diagonal") p.metric.block = BlockKind::diagonal;
    else if (b == "dense") p.metric.block = BlockKind::dense;
    else if (b == "kronecker") p.metric.block = BlockKind::kronecker;
    else throw ConfigError("metric.block: expected diagonal, dense or kronecker");
    p.metric.init = cfg::number(m, "init", p.metric.init, "metric");
    cfg::positive(p.metric.init, "metric.init");
    const std::string div = cfg::string(m, "divergence", "ngd", "metric");
    if (div == "ngd") p.metric.divergence = Divergence::ngd;
    else if (div == "newton") p.metric.divergence = Divergence::newton;
    else throw ConfigError("metric.divergence: expected ngd or newton");
    p.metric.beta = cfg::number(m, "beta", p.metric.divergence == Divergence::ngd ? 0.95 : 0.9, "metric");
    if (!(p.metric.beta >= 0.0 && p.metric.beta < 1.0)) throw ConfigError("metric.beta: must be in [0,1)");
    p.metric.cadence = positive_count(m, "cadence", p.metric.cadence, "metric");
    p.metric.damping = cfg::number(m, "damping", p.metric.damping, "metric");
    if (!(p.metric.damping >= 0.0)) throw ConfigError("metric.damping: must be >= 0");
    p.metric.bounds.lo = cfg::number(m, "u_min", p.metric.bounds.lo, "metric");
    p.metric.bounds.hi = cfg::number(m, "u_max", p.metric.bounds.hi, "metric");
    if (!(p.metric.bounds.lo > 0.0 && p.metric.bounds.hi > p.metric.bounds.lo))
      throw ConfigError("metric: need 0 < u_min < u_max");
  }
  if (j.contains("inner")) {
    const json& in = j.at("inner");
    cfg::check_keys(in, {"steps", "lr", "momentum", "max_halvings"}, "inner");
    p.inner.steps = positive_count(in, "steps", p.inner.steps, "inner");
    p.inner.lr = cfg::number(in, "lr", p.inner.lr, "inner");
    p.inner.momentum = cfg::number(in, "momentum", p.inner.momentum, "inner");
    p.inner.max_halvings = static_cast<int>(cfg::unsigned_int(in, "max_halvings", 10, "inner"));
    try {
      p.inner.validate();
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }
  p.variants = parse_variants(j);
  p.horizon = positive_count(j, "horizon", p.horizon, "config");
  p.stride = positive_count(j, "stride", p.stride, "config");
  p.oracles = cfg::boolean(j, "oracles", p.oracles, "config");
  return p;
}

inline TransferParams parse_transfer(const json& j) {
  cfg::check_keys(j, {"experiment", "seed", "landscape", "horizon", "stride", "noise", "variants",
                      "description"},
                  "config");
  TransferParams p;
  const json& l = cfg::require(j, "landscape", "config");
  cfg::check_keys(l, {"type", "hbar_eigs", "heps_eigs", "rotation"}, "landscape");
  if (cfg::string(l, "type", "two_scale", "landscape") != "two_scale")
    throw ConfigError("landscape.type: this experiment needs a two_scale landscape");
  p.hbar_eigs = cfg::numbers(cfg::require(l, "hbar_eigs", "landscape"), "landscape.hbar_eigs");
  p.heps_eigs = cfg::numbers(cfg::require(l, "heps_eigs", "landscape"), "landscape.heps_eigs");
  p.rotation = cfg::number(l, "rotation", 0.0, "landscape");
  try {
    TwoScaleQuadratic::rotated(p.hbar_eigs, p.heps_eigs, p.rotation);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("landscape: ") + e.what());
  }
  p.horizon = positive_count(j, "horizon", p.horizon, "config");
  p.stride = positive_count(j, "stride", p.stride, "config");
  if (j.contains("noise")) {
    const json& n = j.at("noise");
    cfg::check_keys(n, {"variance", "injection"}, "noise");
    p.noise_variance = cfg::number(n, "variance", 0.0, "noise");
    if (!(p.noise_variance >= 0.0)) throw ConfigError("noise.variance: must be >= 0");
    p.injection = parse_injection(n, "noise");
  }
  p.variants = parse_variants(j);
  return p;
}

/// Dry-parse the experiment-specific section so errors surface at load.
inline void validate_experiment(const ExperimentConfig& c) {
  const std::string& t = c.experiment;
  if (t == "escape-toy" || t == "noise-toy") parse_toy(c.raw);
  else if (t == "envelope-sweep") parse_envelope(c.raw);
  else if (t == "amplification-sweep") parse_amplification(c.raw);
  else if (t == "whitening-check") parse_whitening(c.raw);
  else if (t == "damping-check") parse_damping(c.raw);
  else if (t == "selection-sweep") parse_selection(c.raw);
  else if (t == "llqr-mlp-check") parse_mlp(c.raw);
  else if (t == "transfer-diagnostic") parse_transfer(c.raw);
}

inline ExperimentConfig config_from_json(json raw) {
  if (!raw.is_object()) throw ConfigError("config: top level must be an object");
  ExperimentConfig c;
  c.experiment = cfg::string(raw, "experiment", "", "config");
  if (c.experiment.empty()) throw ConfigError("config: missing 'experiment' tag");
  if (!known_experiment(c.experiment))
    throw ConfigError("config: unknown experiment '" + c.experiment + "' (see `list`)");
  if (!raw.contains("seed")) throw ConfigError("config: 'seed' is required (no implicit seeds)");
  c.seed = cfg::unsigned_int(raw.at("seed"), "seed");
  c.raw = std::move(raw);
  c.hash = hex64(fnv1a(c.raw.dump()));
  validate_experiment(c);
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  json raw;
  try {
    raw = json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
  return config_from_json(std::move(raw));
}

/// Apply a --seed override and rehash.
inline ExperimentConfig with_seed(ExperimentConfig c, std::uint64_t seed) {
  c.seed = seed;
  c.raw["seed"] = seed;
  if (c.raw.contains("seeds")) c.raw["seeds"] = json::array({seed});
  c.hash = hex64(fnv1a(c.raw.dump()));
  return c;
}

}  // namespace llqrsam::harness
