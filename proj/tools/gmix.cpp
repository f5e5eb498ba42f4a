// gmix command-line driver. Every subcommand reads one JSON config and writes
// CSV files whose first line is "# gmix <version> config_hash=<hash>".
// Exit codes: 0 success, 1 numerical failure, 2 config error.

#include "gmix/gmix.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace gmix;

namespace {

constexpr int kOk = 0;
constexpr int kNumerical = 1;
constexpr int kConfig = 2;

struct CommonArgs {
  std::string config;
  std::string out;
  int workers = default_workers();
  std::optional<std::uint64_t> seed;
  std::optional<double> tolerance;
};

std::string num(double x) { return std::isnan(x) ? std::string() : format_double(x); }

class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::string& hash, const std::vector<std::string>& columns)
      : path_(path) {
    std::ostringstream h;
    h << csv_header_comment(hash) << '\n';
    for (std::size_t i = 0; i < columns.size(); ++i) h << (i ? "," : "") << columns[i];
    buf_ << h.str() << '\n';
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) buf_ << (i ? "," : "") << cells[i];
    buf_ << '\n';
  }
  void write() const {
    std::ofstream out(path_);
    if (!out) throw DataError("cannot write " + path_.string());
    out << buf_.str();
  }

 private:
  fs::path path_;
  std::ostringstream buf_;
};

fs::path output_dir(const CommonArgs& args, const ExperimentConfig& cfg) {
  fs::path dir = cfg.output.dir;
  if (const char* env = std::getenv("GMIX_OUT_DIR"); env && *env) dir = env;
  if (!args.out.empty()) dir = args.out;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + dir.string());
  return dir;
}

const ProblemSpec& need_problem(const ExperimentConfig& cfg) {
  if (!cfg.problem) throw ConfigError("$.problem: required key is missing");
  return *cfg.problem;
}

struct GridPoint {
  double alpha, lambda, delta;
  double omega;  // NaN when not applicable
};

/// Grid order: lambda, delta, omega, alpha (alpha fastest).
std::vector<GridPoint> grid_points(const ExperimentConfig& cfg, bool with_alpha) {
  std::vector<double> omegas = cfg.grid.omega;
  if (omegas.empty()) omegas = {std::nan("")};
  std::vector<double> alphas = with_alpha ? cfg.grid.alpha : std::vector<double>{std::nan("")};
  std::vector<GridPoint> pts;
  for (double l : cfg.grid.lambda)
    for (double dl : cfg.grid.delta)
      for (double w : omegas)
        for (double a : alphas) pts.push_back({a, l, dl, w});
  return pts;
}

std::optional<double> opt_omega(double w) {
  return std::isnan(w) ? std::nullopt : std::optional<double>(w);
}

SolverConfig solver_at(const ExperimentConfig& cfg, double alpha, double lambda) {
  SolverConfig s = cfg.solver;
  s.alpha = alpha;
  s.lambda = lambda;
  return s;
}

// ---------------------------------------------------------------------------

int cmd_solve(const CommonArgs& args, const ExperimentConfig& cfg) {
  const auto& prob = need_problem(cfg);
  if (prob.family == "corpus") throw ConfigError("$.problem.model.family: solve needs a synthetic family");
  const auto pts = grid_points(cfg, true);
  const auto K = prob.build(prob.dimension, prob.delta, opt_omega(pts.front().omega)).model.size();
  std::vector<std::string> cols{"alpha", "lambda", "delta", "omega", "status", "converged", "iterations",
                                "residual", "eps_tr", "eps_gen"};
  for (std::size_t c = 0; c < K; ++c)
    for (const char* n : {"V", "q", "m", "h", "Vhat", "qhat", "mhat", "hhat", "rho", "pi"})
      cols.push_back(std::string(n) + "_" + std::to_string(c));
  std::vector<std::vector<std::string>> rows(pts.size());
  std::vector<int> ok(pts.size(), 0);
  parallel_for(pts.size(), args.workers, [&](std::size_t i) {
    const auto& p = pts[i];
    std::vector<std::string> r{num(p.alpha), num(p.lambda), num(p.delta), num(p.omega)};
    try {
      const auto pb = prob.build(prob.dimension, p.delta, opt_omega(p.omega));
      const auto sol = solve(pb.model, pb.teacher, prob.loss, solver_at(cfg, p.alpha, p.lambda),
                             prob.resolved_metric());
      r.insert(r.end(), {to_string(sol.status), sol.converged ? "1" : "0", std::to_string(sol.iterations),
                         num(sol.residual), num(sol.train_error), num(sol.gen_error)});
      for (const auto& o : sol.overlaps.clusters)
        for (double v : {o.V, o.q, o.m, o.h, o.Vhat, o.qhat, o.mhat, o.hhat, o.rho, o.pi}) r.push_back(num(v));
      ok[i] = sol.converged;
    } catch (const NumericalError& e) {
      r.insert(r.end(), {"error", "0", "0", "", "", ""});
      r.resize(cols.size());
      std::cerr << "solve: row " << i << ": " << e.what() << '\n';
    }
    rows[i] = std::move(r);
  });
  CsvWriter w(output_dir(args, cfg) / "solve.csv", cfg.hash, cols);
  bool all = true;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    w.row(rows[i]);
    all = all && ok[i];
  }
  w.write();
  if (!all) std::cerr << "solve: some grid points did not converge\n";
  return all ? kOk : kNumerical;
}

int cmd_closed_form(const CommonArgs& args, const ExperimentConfig& cfg) {
  if (!cfg.closed_form.enabled) throw ConfigError("$.closed_form: required key is missing");
  const auto& cf = cfg.closed_form;
  CsvWriter w(output_dir(args, cfg) / "closed_form.csv", cfg.hash,
              {"alpha", "lambda", "delta", "omega", "rho", "gamma", "pi", "eta", "eps_gen", "eps_tr", "status"});
  bool all = true;
  for (const auto& p : grid_points(cfg, true)) {
    double pi = cf.pi.value_or(0.0);
    double omega = p.omega;
    if (!cf.pi) {
      if (std::isnan(omega)) omega = cf.omega.value_or(1.0);
      pi = pi_from_omega(omega, cf.rho, cf.gamma);
    }
    IsotropicMixtureParams params{p.alpha, p.lambda, cf.rho, cf.gamma, pi, p.delta};
    try {
      params.validate();
    } catch (const Error& e) {
      throw ConfigError(std::string("$.closed_form: ") + e.what());
    }
    std::vector<std::string> r{num(p.alpha), num(p.lambda), num(p.delta), num(cf.pi ? std::nan("") : omega),
                               num(cf.rho), num(cf.gamma), num(pi), num(eta(p.alpha, p.lambda))};
    try {
      const auto e = mixture_errors(params);
      r.insert(r.end(), {num(e.gen), num(e.train), "ok"});
    } catch (const NumericalError&) {
      r.insert(r.end(), {"", "", "pole"});
      all = false;
    }
    w.row(r);
  }
  w.write();
  return all ? kOk : kNumerical;
}

struct SimRow {
  GridPoint p;
  MonteCarloRow mc;
  std::uint64_t seed = 0;
};

std::vector<SimRow> run_simulation(const CommonArgs& args, const ExperimentConfig& cfg) {
  const auto& prob = need_problem(cfg);
  if (!cfg.simulation.enabled) throw ConfigError("$.simulation: required key is missing");
  const Metric metric = prob.resolved_metric();
  std::vector<SimRow> out;
  const auto combos = grid_points(cfg, false);
  for (std::size_t k = 0; k < combos.size(); ++k) {
    const auto& p = combos[k];
    const std::uint64_t seed = derive_seed(cfg.simulation.master_seed, 0x51u, k);
    std::vector<MonteCarloRow> rows;
    if (prob.family == "corpus") {
      const auto corpus = load_corpus(prob);
      CorpusCurveConfig cc;
      cc.alpha_grid = cfg.grid.alpha;
      cc.lambda = p.lambda;
      cc.reps = cfg.simulation.reps;
      cc.master_seed = seed;
      cc.test_size = cfg.simulation.test_size;
      cc.workers = args.workers;
      cc.metric = metric;
      rows = corpus_learning_curve(corpus.X, corpus.y, prob.loss, cc);
    } else {
      const auto pb = prob.build(cfg.simulation.d, p.delta, opt_omega(p.omega));
      MonteCarloConfig mc;
      mc.alpha_grid = cfg.grid.alpha;
      mc.lambda = p.lambda;
      mc.reps = cfg.simulation.reps;
      mc.master_seed = seed;
      mc.test_size = cfg.simulation.test_size;
      mc.workers = args.workers;
      mc.metric = metric;
      rows = monte_carlo(pb.model, pb.teacher, prob.loss, mc);
    }
    for (const auto& r : rows) out.push_back({{r.alpha, p.lambda, p.delta, p.omega}, r, seed});
  }
  return out;
}

std::string seed_info(const ExperimentConfig& cfg, std::uint64_t derived) {
  return "master=" + std::to_string(cfg.simulation.master_seed) + ";stream=" + std::to_string(derived) +
         ";reps=" + std::to_string(cfg.simulation.reps);
}

int cmd_simulate(const CommonArgs& args, const ExperimentConfig& cfg) {
  const auto rows = run_simulation(args, cfg);
  CsvWriter w(output_dir(args, cfg) / "simulate.csv", cfg.hash,
              {"alpha", "lambda", "delta", "omega", "n", "ok_reps", "failed_reps", "eps_tr", "eps_tr_se",
               "eps_gen", "eps_gen_se", "seed_info"});
  bool all = true;
  for (const auto& r : rows) {
    const bool failed = r.mc.failed();
    all = all && !failed;
    w.row({num(r.p.alpha), num(r.p.lambda), num(r.p.delta), num(r.p.omega), std::to_string(r.mc.n),
           std::to_string(r.mc.ok_reps), std::to_string(r.mc.failed_reps),
           failed ? "" : num(r.mc.train_mean), failed ? "" : num(r.mc.train_se),
           failed ? "" : num(r.mc.gen_mean), failed ? "" : num(r.mc.gen_se), seed_info(cfg, r.seed)});
    if (failed) std::cerr << "simulate: alpha=" << r.p.alpha << " failed: " << r.mc.first_error << '\n';
  }
  w.write();
  return all ? kOk : kNumerical;
}

int cmd_sweep(const CommonArgs& args, const ExperimentConfig& cfg) {
  const auto& prob = need_problem(cfg);
  const Metric metric = prob.resolved_metric();
  const auto pts = grid_points(cfg, true);
  struct TheoryRows {
    std::vector<std::vector<std::string>> rows;
    bool ok = true;
  };
  std::vector<TheoryRows> theory(pts.size());
  std::optional<Corpus> corpus;
  if (prob.family == "corpus") corpus = load_corpus(prob);
  parallel_for(pts.size(), args.workers, [&](std::size_t i) {
    const auto& p = pts[i];
    auto& tr = theory[i];
    auto key = [&](const char* source) {
      return std::vector<std::string>{source, num(p.alpha), num(p.lambda), num(p.delta), num(p.omega)};
    };
    auto emit = [&](const char* source, const SaddleSolution& s) {
      auto r = key(source);
      r.insert(r.end(), {num(s.train_error), "", num(s.gen_error), "", "", to_string(s.status)});
      tr.rows.push_back(r);
      tr.ok = tr.ok && s.converged;
    };
    const auto sc = solver_at(cfg, p.alpha, p.lambda);
    try {
      if (corpus) {
        const auto pb = corpus_surrogate(prob, *corpus, p.delta);
        emit("theory_gcm", solve(pb.model, pb.teacher, prob.loss, sc, metric));
        return;
      }
      const auto pb = prob.build(prob.dimension, p.delta, opt_omega(p.omega));
      emit("theory_gmm", solve(pb.model, pb.teacher, prob.loss, sc, metric));
      emit("theory_gcm", solve(gcm_baseline(pb.model), pb.teacher, prob.loss, sc, metric));
      const bool closed = (prob.family == "two_cluster" || prob.family == "omega") &&
                          prob.loss == LossKind::SquareHalf && prob.channel == ChannelKind::GaussianNoise;
      if (closed) {
        const double rho = prob.family == "omega" ? prob.gamma : prob.rho;
        const double pi = prob.family == "omega"
                              ? pi_from_omega(opt_omega(p.omega).value_or(prob.omega), prob.gamma, prob.gamma)
                              : prob.pi;
        auto r = key("closed_form");
        try {
          const auto e = mixture_errors({p.alpha, p.lambda, rho, prob.gamma, pi, p.delta});
          r.insert(r.end(), {num(e.train), "", num(e.gen), "", "", "ok"});
        } catch (const NumericalError&) {
          r.insert(r.end(), {"", "", "", "", "", "pole"});
        }
        tr.rows.push_back(r);
      }
    } catch (const NumericalError& e) {
      auto r = key("theory_gmm");
      r.insert(r.end(), {"", "", "", "", "", "error"});
      tr.rows.push_back(r);
      tr.ok = false;
      std::cerr << "sweep: " << e.what() << '\n';
    }
  });
  std::vector<SimRow> sim;
  if (cfg.simulation.enabled) sim = run_simulation(args, cfg);

  CsvWriter w(output_dir(args, cfg) / "sweep.csv", cfg.hash,
              {"source", "alpha", "lambda", "delta", "omega", "eps_tr", "eps_tr_se", "eps_gen", "eps_gen_se",
               "seed_info", "status"});
  bool all = true;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (const auto& r : theory[i].rows) w.row(r);
    all = all && theory[i].ok;
  }
  for (const auto& r : sim) {
    const bool failed = r.mc.failed();
    w.row({"simulation", num(r.p.alpha), num(r.p.lambda), num(r.p.delta), num(r.p.omega),
           failed ? "" : num(r.mc.train_mean), failed ? "" : num(r.mc.train_se),
           failed ? "" : num(r.mc.gen_mean), failed ? "" : num(r.mc.gen_se), seed_info(cfg, r.seed),
           failed ? "failed" : (r.mc.failed_reps ? "partial" : "ok")});
  }
  w.write();
  if (!all) std::cerr << "sweep: some theory rows failed\n";
  return all ? kOk : kNumerical;
}

int cmd_universality(const CommonArgs& args, const ExperimentConfig& cfg) {
  const auto& prob = need_problem(cfg);
  if (prob.family == "corpus") throw ConfigError("$.problem.model.family: universality needs a synthetic family");
  const Metric metric = prob.resolved_metric();
  CsvWriter w(output_dir(args, cfg) / "universality.csv", cfg.hash,
              {"check", "alpha", "lambda", "delta", "omega", "value", "reference", "gap", "tolerance", "result"});
  const double tol = std::max(1e-6, 100.0 * cfg.solver.tolerance);
  bool all_ran = true;
  for (const auto& p : grid_points(cfg, true)) {
    const auto pb = prob.build(prob.dimension, p.delta, opt_omega(p.omega));
    const auto sc = solver_at(cfg, p.alpha, p.lambda);
    auto row = [&](const char* check, double value, double ref, double gap, double t, const char* result) {
      w.row({check, num(p.alpha), num(p.lambda), num(p.delta), num(p.omega), num(value), num(ref), num(gap),
             num(t), result});
    };
    const auto rep = mean_universality_check(pb.model, pb.teacher, prob.loss, sc);
    double leak = 0.0;
    for (double a : rep.a) leak = std::max(leak, std::abs(a));
    if (rep.b.size() > 0) leak = std::max(leak, rep.b.cwiseAbs().maxCoeff());
    if (rep.centered_status != SolveStatus::Converged) {
      row("mean_assumption", std::nan(""), 0.0, std::nan(""), rep.tolerance, "error");
      all_ran = false;
      continue;
    }
    row("mean_assumption", leak, 0.0, leak, rep.tolerance, rep.holds ? "pass" : "fail");

    const auto gmm = solve(pb.model, pb.teacher, prob.loss, sc, metric);
    const auto gcm = solve(gcm_baseline(pb.model), pb.teacher, prob.loss, sc, metric);
    if (!gmm.converged || !gcm.converged) {
      row("train_universality", std::nan(""), std::nan(""), std::nan(""), tol, "error");
      all_ran = false;
      continue;
    }
    const double gtr = std::abs(gmm.train_error - gcm.train_error);
    const double ggen = std::abs(gmm.gen_error - gcm.gen_error);
    row("train_universality", gmm.train_error, gcm.train_error, gtr, tol, gtr <= tol ? "pass" : "fail");
    row("gen_universality", gmm.gen_error, gcm.gen_error, ggen, tol, ggen <= tol ? "pass" : "fail");
    const bool strong = prob.loss == LossKind::SquareHalf && prob.channel == ChannelKind::GaussianNoise &&
                        p.alpha > 1.0 && p.lambda <= 1e-8;
    if (strong) {
      const double ref = strong_universality_train(p.alpha, p.delta);
      const double gap = std::abs(gmm.train_error - ref);
      row("strong_universality_train", gmm.train_error, ref, gap, 1e-5, gap <= 1e-5 ? "pass" : "fail");
    } else {
      row("strong_universality_train", std::nan(""), std::nan(""), std::nan(""), 1e-5, "skip");
    }
  }
  w.write();
  return all_ran ? kOk : kNumerical;
}

int cmd_features(const CommonArgs& args, const ExperimentConfig& cfg) {
  if (!cfg.features.enabled) throw ConfigError("$.features: required key is missing");
  const auto& f = cfg.features;
  Matrix raw;
  try {
    raw = f.format == "idx" ? load_idx_images(f.input) : load_csv_matrix(f.input, f.header);
  } catch (const DataError& e) {
    throw ConfigError(std::string("$.features.input: ") + e.what());
  }
  std::vector<int> classes;
  if (!f.labels.empty()) {
    try {
      classes = load_idx_labels(f.labels);
    } catch (const DataError& e) {
      throw ConfigError(std::string("$.features.labels: ") + e.what());
    }
  }
  if (f.max_rows > 0 && raw.rows() > f.max_rows) {
    raw.conservativeResize(f.max_rows, Eigen::NoChange);
    if (classes.size() > std::size_t(f.max_rows)) classes.resize(std::size_t(f.max_rows));
  }
  const Matrix X = apply_feature_map(f.map, raw);
  const auto labels = synth_labels(X, f.teacher_seed, TeacherChannel::make(f.channel, f.delta));
  const auto dir = output_dir(args, cfg);
  const auto header = csv_header_comment(cfg.hash);
  save_csv_matrix((dir / "features.csv").string(), X, header);
  save_csv_matrix((dir / "labels.csv").string(), Matrix(labels.y), header);
  save_csv_matrix((dir / "theta0.csv").string(), Matrix(labels.theta0), header);
  save_summary(moment_summary(X), (dir / "summary.json").string(), (dir / "covariance.csv").string(), header);
  if (!classes.empty()) {
    if (classes.size() != std::size_t(raw.rows())) throw ConfigError("$.features.labels: row count differs from input");
    const auto before = class_mean_ratios(raw, classes);
    const auto after = class_mean_ratios(X, classes);
    CsvWriter w(dir / "class_means.csv", cfg.hash, {"class", "ratio_input", "ratio_features"});
    for (std::size_t i = 0; i < before.size(); ++i)
      w.row({std::to_string(before[i].first), num(before[i].second), num(after[i].second)});
    w.write();
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gmix: replica asymptotics and ERM simulations for GLMs on Gaussian mixtures"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  CommonArgs args;
  std::uint64_t seed = 0;
  double tolerance = 0.0;
  struct Sub {
    const char* name;
    const char* help;
    int (*fn)(const CommonArgs&, const ExperimentConfig&);
  };
  const std::vector<Sub> subs{
      {"solve", "solve the saddle-point equations over the grid", cmd_solve},
      {"closed-form", "evaluate the isotropic two-cluster ridge closed forms", cmd_closed_form},
      {"simulate", "Monte Carlo ERM over the grid", cmd_simulate},
      {"sweep", "theory and simulation rows in one tidy CSV", cmd_sweep},
      {"universality", "pass/fail table of the universality checks", cmd_universality},
      {"features", "random-feature map, teacher labels and moment summary of a corpus", cmd_features},
  };
  std::vector<CLI::App*> handles;
  std::vector<CLI::Option*> seed_opts, tol_opts;
  for (const auto& s : subs) {
    auto* sc = app.add_subcommand(s.name, s.help);
    sc->add_option("--config", args.config, "JSON config file")->required();
    sc->add_option("--out", args.out, "output directory (overrides output.dir and GMIX_OUT_DIR)");
    sc->add_option("--workers", args.workers, "worker threads")->check(CLI::PositiveNumber);
    seed_opts.push_back(sc->add_option("--seed", seed, "override simulation.master_seed"));
    tol_opts.push_back(sc->add_option("--tolerance", tolerance, "override solver.tolerance")->check(CLI::PositiveNumber));
    handles.push_back(sc);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }
  for (std::size_t i = 0; i < subs.size(); ++i) {
    if (!handles[i]->parsed()) continue;
    if (seed_opts[i]->count()) args.seed = seed;
    if (tol_opts[i]->count()) args.tolerance = tolerance;
    try {
      const auto cfg = parse_config(load_json_file(args.config), args.seed, args.tolerance);
      return subs[i].fn(args, cfg);
    } catch (const ConfigError& e) {
      std::cerr << "config error: " << e.what() << '\n';
      return kConfig;
    } catch (const DataError& e) {
      std::cerr << "data error: " << e.what() << '\n';
      return kConfig;
    } catch (const std::exception& e) {
      std::cerr << "numerical failure: " << e.what() << '\n';
      return kNumerical;
    }
  }
  return kConfig;
}
