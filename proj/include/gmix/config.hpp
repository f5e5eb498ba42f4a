#pragma once

// JSON experiment configs: strict-key readers with JSON-path diagnostics,
// vector/covariance generators, problem builders, and the config hash that
// stamps every output file.

#include "gmix/data_pipeline.hpp"
#include "gmix/families.hpp"
#include "gmix/model.hpp"
#include "gmix/replica.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#ifndef GMIX_VERSION
#define GMIX_VERSION "0.0.0"
#endif

namespace gmix {

inline constexpr const char* kVersion = GMIX_VERSION;

class ConfigError : public Error {
 public:
  using Error::Error;
};

using Json = nlohmann::json;

/// Reads one JSON object, remembering which keys were consumed so that
/// leftovers can be rejected with their path.
class JsonObject {
 public:
  JsonObject(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }

  [[noreturn]] static void fail(const std::string& path, const std::string& what) {
    throw ConfigError(path + ": " + what);
  }

  const std::string& path() const { return path_; }
  std::string child(const std::string& key) const { return path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }

  const Json& raw(const std::string& key) {
    if (!j_.contains(key)) fail(child(key), "required key is missing");
    seen_.insert(key);
    return j_.at(key);
  }

  double number(const std::string& key) {
    const Json& v = raw(key);
    if (!v.is_number()) fail(child(key), "expected a number");
    return v.get<double>();
  }
  double number(const std::string& key, double dflt) { return has(key) ? number(key) : dflt; }

  std::int64_t integer(const std::string& key) {
    const Json& v = raw(key);
    if (!v.is_number_integer()) fail(child(key), "expected an integer");
    return v.get<std::int64_t>();
  }
  std::int64_t integer(const std::string& key, std::int64_t dflt) { return has(key) ? integer(key) : dflt; }

  bool boolean(const std::string& key, bool dflt) {
    if (!has(key)) return dflt;
    const Json& v = raw(key);
    if (!v.is_boolean()) fail(child(key), "expected true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key) {
    const Json& v = raw(key);
    if (!v.is_string()) fail(child(key), "expected a string");
    return v.get<std::string>();
  }
  std::string string(const std::string& key, const std::string& dflt) { return has(key) ? string(key) : dflt; }

  std::vector<double> numbers(const std::string& key) {
    const Json& v = raw(key);
    if (!v.is_array()) fail(child(key), "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) fail(child(key) + "[" + std::to_string(i) + "]", "expected a number");
      out.push_back(v[i].get<double>());
    }
    return out;
  }

  JsonObject object(const std::string& key) { return JsonObject(raw(key), child(key)); }

  /// Throws on any key that was never read.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) fail(child(it.key()), "unknown key");
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

// ---------------------------------------------------------------------------
// Hash and headers
// ---------------------------------------------------------------------------

/// FNV-1a over the canonical (sorted-key, compact) dump.
inline std::string config_hash(const Json& j) {
  const std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string csv_header_comment(const std::string& hash) {
  return std::string("# gmix ") + kVersion + " config_hash=" + hash;
}

inline Json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError("$: malformed JSON in " + path + " (" + e.what() + ")");
  }
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

/// Vector forms: a literal array of length d, or an object
/// {"kind": constant|alternating|zeros|block|gaussian, ...}.
inline Vector parse_vector(const Json& j, const std::string& path, Index d) {
  if (j.is_array()) {
    if (Index(j.size()) != d)
      JsonObject::fail(path, "expected " + std::to_string(d) + " entries, got " + std::to_string(j.size()));
    Vector v(d);
    for (Index i = 0; i < d; ++i) {
      if (!j[std::size_t(i)].is_number())
        JsonObject::fail(path + "[" + std::to_string(i) + "]", "expected a number");
      v[i] = j[std::size_t(i)].get<double>();
    }
    return v;
  }
  JsonObject o(j, path);
  const std::string kind = o.string("kind");
  Vector v;
  if (kind == "constant") {
    v = Vector::Constant(d, o.number("value"));
  } else if (kind == "alternating") {
    v = o.number("value") * detail::alternating(d);
  } else if (kind == "zeros") {
    v = Vector::Zero(d);
  } else if (kind == "block") {
    const double a = o.number("first"), b = o.number("second");
    v.resize(d);
    for (Index i = 0; i < d; ++i) v[i] = i < d / 2 ? a : b;
  } else if (kind == "gaussian") {
    const auto seed = o.integer("seed");
    const double scale = o.number("scale", 1.0);
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    std::normal_distribution<double> normal;
    v.resize(d);
    for (Index i = 0; i < d; ++i) v[i] = scale * normal(rng);
  } else {
    JsonObject::fail(o.child("kind"), "unknown vector kind '" + kind + "'");
  }
  o.finish();
  return v;
}

inline Covariance parse_covariance(const Json& j, const std::string& path, Index d) {
  JsonObject o(j, path);
  const std::string kind = o.string("kind");
  try {
    if (kind == "isotropic") {
      const double s = o.number("scale", 1.0);
      o.finish();
      return Covariance::isotropic(s);
    }
    if (kind == "diagonal") {
      Vector e = parse_vector(o.raw("entries"), o.child("entries"), d);
      o.finish();
      return Covariance::diagonal(std::move(e));
    }
    if (kind == "dense") {
      const Json& rows = o.raw("rows");
      if (!rows.is_array() || Index(rows.size()) != d) JsonObject::fail(o.child("rows"), "expected d rows");
      Matrix M(d, d);
      for (Index i = 0; i < d; ++i) M.row(i) = parse_vector(rows[std::size_t(i)], o.child("rows") + "[" + std::to_string(i) + "]", d).transpose();
      o.finish();
      return Covariance::dense(std::move(M));
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    JsonObject::fail(path, e.what());
  }
  JsonObject::fail(o.child("kind"), "unknown covariance kind '" + kind + "'");
}

// ---------------------------------------------------------------------------
// Problem
// ---------------------------------------------------------------------------

/// Problem description that can be instantiated at any dimension and Omega.
struct ProblemSpec {
  std::string family;  // mixture | gaussian | two_cluster | omega | heteroscedastic
  Index dimension = 0;
  LossKind loss = LossKind::SquareHalf;
  std::optional<Metric> metric;
  ChannelKind channel = ChannelKind::GaussianNoise;
  double delta = 0.0;
  // two_cluster / omega
  double rho = 1.0, gamma = 1.0, pi = 0.0, omega = 1.0;
  // mixture / gaussian (kept as JSON so they can be regenerated at another d)
  Json clusters;
  Json theta0;
  // corpus: files written by the features subcommand
  std::string features_path, labels_path, theta0_path;
  SurrogateMode surrogate = SurrogateMode::Matched;

  Problem build(Index d, double delta_value, std::optional<double> omega_value = std::nullopt) const {
    const auto ch = TeacherChannel::make(channel, delta_value);
    if (family == "two_cluster") return two_cluster_isotropic(d, rho, gamma, pi, ch);
    if (family == "omega") return omega_family(d, gamma, omega_value.value_or(omega), ch);
    if (family == "heteroscedastic") return heteroscedastic_mixture(d, ch);
    if (family == "corpus") throw ConfigError("$.problem.model.family: corpus problems have no synthetic law");
    std::vector<ClusterSpec> cl;
    for (std::size_t c = 0; c < clusters.size(); ++c) {
      const std::string p = "$.problem.clusters[" + std::to_string(c) + "]";
      JsonObject o(clusters[c], p);
      ClusterSpec s;
      s.weight = o.number("weight", clusters.size() == 1 ? 1.0 : 0.0);
      s.mean = o.has("mean") ? parse_vector(o.raw("mean"), o.child("mean"), d) : Vector::Zero(d);
      s.covariance = o.has("covariance") ? parse_covariance(o.raw("covariance"), o.child("covariance"), d)
                                         : Covariance::isotropic(1.0);
      o.finish();
      cl.push_back(std::move(s));
    }
    Vector th = parse_vector(theta0, "$.problem.teacher.theta0", d);
    try {
      return {MixtureModel(std::move(cl), d), TeacherSpec{std::move(th), ch}};
    } catch (const Error& e) {
      throw ConfigError(std::string("$.problem: ") + e.what());
    }
  }

  Metric resolved_metric() const {
    return metric.value_or(channel == ChannelKind::SignNoise ? Metric::Classification : Metric::Regression);
  }
};

inline LossKind parse_loss(const std::string& s, const std::string& path) {
  if (s == "square") return LossKind::SquareHalf;
  if (s == "logistic") return LossKind::Logistic;
  JsonObject::fail(path, "unknown loss '" + s + "' (expected square or logistic)");
}

inline Metric parse_metric(const std::string& s, const std::string& path) {
  if (s == "regression") return Metric::Regression;
  if (s == "classification") return Metric::Classification;
  if (s == "loss") return Metric::Loss;
  JsonObject::fail(path, "unknown metric '" + s + "'");
}

inline ProblemSpec parse_problem(JsonObject o) {
  ProblemSpec p;
  p.dimension = o.integer("dimension");
  if (p.dimension < 1) JsonObject::fail(o.child("dimension"), "must be >= 1");
  p.loss = parse_loss(o.string("loss", "square"), o.child("loss"));
  if (o.has("metric")) p.metric = parse_metric(o.string("metric"), o.child("metric"));

  auto t = o.object("teacher");
  const std::string ch = t.string("channel", "gaussian");
  if (ch == "gaussian") p.channel = ChannelKind::GaussianNoise;
  else if (ch == "sign") p.channel = ChannelKind::SignNoise;
  else JsonObject::fail(t.child("channel"), "unknown channel '" + ch + "' (expected gaussian or sign)");
  p.delta = t.number("delta", 0.0);
  if (!(p.delta >= 0.0)) JsonObject::fail(t.child("delta"), "must be nonnegative");

  auto m = o.object("model");
  p.family = m.string("family");
  if (p.family == "two_cluster") {
    p.rho = m.number("rho", 1.0);
    p.gamma = m.number("gamma", 1.0);
    p.pi = m.number("pi", 0.0);
  } else if (p.family == "omega") {
    p.gamma = m.number("gamma", 1.0);
    p.omega = m.number("omega", 1.0);
  } else if (p.family == "heteroscedastic") {
  } else if (p.family == "mixture") {
    p.clusters = m.raw("clusters");
    if (!p.clusters.is_array() || p.clusters.empty())
      JsonObject::fail(m.child("clusters"), "expected a non-empty array");
  } else if (p.family == "corpus") {
    p.features_path = m.string("features");
    p.labels_path = m.string("labels");
    p.theta0_path = m.string("theta0");
    const std::string mode = m.string("surrogate", "matched");
    if (mode == "matched") p.surrogate = SurrogateMode::Matched;
    else if (mode == "identity") p.surrogate = SurrogateMode::Identity;
    else JsonObject::fail(m.child("surrogate"), "expected matched or identity");
    for (const auto* f : {&p.features_path, &p.labels_path, &p.theta0_path}) {
      std::ifstream probe(*f);
      if (!probe) JsonObject::fail(m.path(), "cannot open " + *f);
    }
  } else if (p.family == "gaussian") {
    Json c = Json::object();
    if (m.has("mean")) c["mean"] = m.raw("mean");
    if (m.has("covariance")) c["covariance"] = m.raw("covariance");
    p.clusters = Json::array({c});
  } else {
    JsonObject::fail(m.child("family"), "unknown family '" + p.family + "'");
  }
  m.finish();
  const bool needs_theta = p.family == "mixture" || p.family == "gaussian";
  if (needs_theta) p.theta0 = t.raw("theta0");
  else if (t.has("theta0")) JsonObject::fail(t.child("theta0"), "the '" + p.family + "' family fixes the teacher");
  t.finish();
  if (p.metric == Metric::Classification && p.channel != ChannelKind::SignNoise)
    JsonObject::fail(o.child("metric"), "classification metric needs the sign channel");
  if (p.loss == LossKind::Logistic && p.channel != ChannelKind::SignNoise)
    JsonObject::fail(o.child("loss"), "logistic loss needs the sign channel");
  o.finish();
  if (p.family == "corpus") return p;
  // instantiate once so that shape errors surface as config errors
  try {
    (void)p.build(p.dimension, p.delta);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("$.problem: ") + e.what());
  }
  return p;
}

inline SolverConfig parse_solver(JsonObject o) {
  SolverConfig s;
  s.alpha = o.number("alpha", s.alpha);
  s.lambda = o.number("lambda", s.lambda);
  s.tolerance = o.number("tolerance", s.tolerance);
  s.max_iterations = int(o.integer("max_iterations", s.max_iterations));
  s.damping = o.number("damping", s.damping);
  s.anderson_depth = int(o.integer("anderson_depth", s.anderson_depth));
  s.xi_order = int(o.integer("xi_order", s.xi_order));
  s.y_order = int(o.integer("y_order", s.y_order));
  s.divergence_threshold = o.number("divergence_threshold", s.divergence_threshold);
  o.finish();
  try {
    s.validate();
    (void)gauss_hermite(s.xi_order);
    (void)gauss_hermite(s.y_order);
  } catch (const Error& e) {
    throw ConfigError(o.path() + ": " + e.what());
  }
  return s;
}

struct GridSpec {
  std::vector<double> alpha, lambda, delta, omega;
};

struct SimulationSpec {
  bool enabled = false;
  Index d = 0;
  int reps = 30;
  std::uint64_t master_seed = 0;
  Index test_size = 0;
};

struct ClosedFormSpec {
  bool enabled = false;
  double rho = 1.0, gamma = 1.0;
  std::optional<double> pi, omega;
};

struct FeaturesSpec {
  bool enabled = false;
  std::string input, format = "csv", labels;
  bool header = false;
  Index max_rows = 0;
  FeatureMapSpec map;
  std::uint64_t teacher_seed = 0;
  ChannelKind channel = ChannelKind::GaussianNoise;
  double delta = 0.0;
};

struct OutputSpec {
  std::string dir = ".";
};

struct ExperimentConfig {
  Json json;  // after CLI overrides; the hash is taken over this
  std::string hash;
  std::optional<ProblemSpec> problem;
  SolverConfig solver;
  GridSpec grid;
  SimulationSpec simulation;
  ClosedFormSpec closed_form;
  FeaturesSpec features;
  OutputSpec output;
};

struct Corpus {
  Matrix X;
  Vector y;
  Vector theta0;
  MomentSummary summary;
};

inline Corpus load_corpus(const ProblemSpec& p) {
  Corpus c;
  c.X = load_csv_matrix(p.features_path);
  const Matrix y = load_csv_matrix(p.labels_path);
  const Matrix th = load_csv_matrix(p.theta0_path);
  if (y.cols() != 1 || y.rows() != c.X.rows()) throw DataError(p.labels_path + ": expected one label per feature row");
  if (th.cols() != 1 || th.rows() != c.X.cols()) throw DataError(p.theta0_path + ": expected one entry per feature");
  c.y = y.col(0);
  c.theta0 = th.col(0);
  c.summary = moment_summary(c.X);
  return c;
}

/// Single-Gaussian stand-in for a corpus with its synthetic teacher.
inline Problem corpus_surrogate(const ProblemSpec& p, const Corpus& c, double delta) {
  TeacherSpec t{c.theta0, TeacherChannel::make(p.channel, delta)};
  return {gcm_surrogate(c.summary, t, p.surrogate), t};
}

inline FeaturesSpec parse_features(JsonObject o) {
  FeaturesSpec f;
  f.enabled = true;
  f.input = o.string("input");
  f.format = o.string("format", "csv");
  if (f.format != "csv" && f.format != "idx") JsonObject::fail(o.child("format"), "expected csv or idx");
  f.header = o.boolean("header", false);
  f.labels = o.string("labels", "");
  f.max_rows = o.integer("max_rows", 0);
  f.map.output_dim = o.integer("output_dim");
  if (f.map.output_dim < 1) JsonObject::fail(o.child("output_dim"), "must be >= 1");
  try {
    f.map.activation = activation_from_string(o.string("activation", "erf"));
  } catch (const Error& e) {
    JsonObject::fail(o.child("activation"), e.what());
  }
  f.map.seed = static_cast<std::uint64_t>(o.integer("seed", 0));
  f.map.standardize = o.boolean("standardize", true);
  f.teacher_seed = static_cast<std::uint64_t>(o.integer("teacher_seed", 0));
  const std::string ch = o.string("channel", "gaussian");
  if (ch == "gaussian") f.channel = ChannelKind::GaussianNoise;
  else if (ch == "sign") f.channel = ChannelKind::SignNoise;
  else JsonObject::fail(o.child("channel"), "unknown channel '" + ch + "'");
  f.delta = o.number("delta", 0.0);
  if (!(f.delta >= 0.0)) JsonObject::fail(o.child("delta"), "must be nonnegative");
  o.finish();
  return f;
}

/// Parses and validates a whole config. `overrides` are applied before hashing.
inline ExperimentConfig parse_config(Json j, std::optional<std::uint64_t> seed_override = std::nullopt,
                                     std::optional<double> tolerance_override = std::nullopt) {
  if (!j.is_object()) throw ConfigError("$: expected a JSON object at top level");
  if (seed_override) {
    if (!j.contains("simulation")) j["simulation"] = Json::object();
    j["simulation"]["master_seed"] = *seed_override;
  }
  if (tolerance_override) {
    if (!j.contains("solver")) j["solver"] = Json::object();
    j["solver"]["tolerance"] = *tolerance_override;
  }
  ExperimentConfig cfg;
  cfg.json = j;
  cfg.hash = config_hash(j);
  JsonObject root(cfg.json, "$");
  if (root.has("problem")) cfg.problem = parse_problem(root.object("problem"));
  if (root.has("solver")) cfg.solver = parse_solver(root.object("solver"));
  if (root.has("grid")) {
    auto g = root.object("grid");
    if (g.has("alpha")) cfg.grid.alpha = g.numbers("alpha");
    if (g.has("lambda")) cfg.grid.lambda = g.numbers("lambda");
    if (g.has("delta")) cfg.grid.delta = g.numbers("delta");
    if (g.has("omega")) cfg.grid.omega = g.numbers("omega");
    g.finish();
    for (double a : cfg.grid.alpha) if (!(a > 0.0)) JsonObject::fail("$.grid.alpha", "entries must be positive");
    for (double l : cfg.grid.lambda) if (!(l >= 0.0)) JsonObject::fail("$.grid.lambda", "entries must be nonnegative");
    for (double v : cfg.grid.delta) if (!(v >= 0.0)) JsonObject::fail("$.grid.delta", "entries must be nonnegative");
    for (double w : cfg.grid.omega) if (!(w >= 0.0 && w <= 1.0)) JsonObject::fail("$.grid.omega", "entries must lie in [0,1]");
  }
  if (root.has("simulation")) {
    auto s = root.object("simulation");
    cfg.simulation.enabled = true;
    cfg.simulation.d = s.integer("d", cfg.problem ? cfg.problem->dimension : 0);
    cfg.simulation.reps = int(s.integer("reps", 30));
    cfg.simulation.master_seed = static_cast<std::uint64_t>(s.integer("master_seed", 0));
    cfg.simulation.test_size = s.integer("test_size", 0);
    s.finish();
    if (cfg.simulation.reps < 2) JsonObject::fail("$.simulation.reps", "must be >= 2");
    if (cfg.simulation.d < 1) JsonObject::fail("$.simulation.d", "must be >= 1");
  }
  if (root.has("closed_form")) {
    auto c = root.object("closed_form");
    cfg.closed_form.enabled = true;
    cfg.closed_form.rho = c.number("rho", 1.0);
    cfg.closed_form.gamma = c.number("gamma", 1.0);
    if (c.has("pi")) cfg.closed_form.pi = c.number("pi");
    if (c.has("omega")) cfg.closed_form.omega = c.number("omega");
    c.finish();
  }
  if (root.has("features")) cfg.features = parse_features(root.object("features"));
  if (root.has("output")) {
    auto o = root.object("output");
    cfg.output.dir = o.string("dir", ".");
    o.finish();
  }
  root.finish();
  if (cfg.grid.alpha.empty()) cfg.grid.alpha = {cfg.solver.alpha};
  if (cfg.grid.lambda.empty()) cfg.grid.lambda = {cfg.solver.lambda};
  if (cfg.grid.delta.empty()) cfg.grid.delta = {cfg.problem ? cfg.problem->delta : 0.0};
  if (cfg.grid.omega.empty() && cfg.problem && cfg.problem->family == "omega")
    cfg.grid.omega = {cfg.problem->omega};
  return cfg;
}

}  // namespace gmix
