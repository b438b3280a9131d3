#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "cli.hpp"
#include "nmg/bath.hpp"
#include "nmg/noise.hpp"
#include "CLI11.hpp"

namespace nmg::cli {

using nlohmann::json;

namespace {

constexpr const char* kVersion = "1.0.0";

/// Everything needed to run trajectories for one S choice.
struct Setup {
  HeisenbergFamily family;
  std::unique_ptr<TrajectoryEngine> engine;
  json notes = json::object();
};

Setup make_setup(const RunConfig& c, const SChoice& s, EngineKind kind, std::size_t depth) {
  const KernelSpec D = build_kernel(c);
  std::vector<bool> hermitian(engine_channels(c).size(), true);
  Setup out{heisenberg_evolve(c.hamiltonian, engine_channels(c), c.grid), nullptr};
  if (kind == EngineKind::Hierarchy) {
    if (const auto* tab = std::get_if<Tabulated>(&D.form)) {
      const auto max_terms = c.kernel.value("max_terms", std::size_t{6});
      const auto tol = c.kernel.value("fit_tolerance", 1e-5);
      const PronyFit fit = prony_fit_adaptive(*tab, max_terms, tol);
      out.notes["memory_terms"] = fit.sum.terms.size();
      out.notes["memory_fit_residual"] = fit.max_residual;
      out.engine = make_hierarchy_engine(out.family, discretize(D, s, c.grid), memory_kernel(KernelSpec{fit.sum}, s),
                                         depth, c.max_hierarchy_indices);
      return out;
    }
  }
  TrajectoryConfig tc;
  tc.engine = kind;
  tc.s_choice = s;
  tc.depth = depth;
  tc.max_hierarchy_indices = c.max_hierarchy_indices;
  out.engine = make_engine(out.family, D, tc);
  return out;
}

std::uint64_t require_seed(const RunConfig& c) {
  if (!c.seed) throw ConfigError("seed", "required for Monte Carlo runs (set it in the config or pass --seed)");
  return *c.seed;
}

DensitySeries run_density(const RunConfig& c, const TrajectoryEngine& engine, std::uint64_t seed) {
  EnsembleOptions opts;
  opts.threads = c.threads;
  return estimate_density(engine, c.rho0, c.trajectories, seed, opts);
}

double check_param(const json& check, const char* key, double fallback) {
  if (!check.contains(key)) return fallback;
  if (!check.at(key).is_number()) throw ConfigError(std::string("verify.") + key, "expected a number");
  return check.at(key).get<double>();
}

/// Entrywise |a - b| <= sigma * se + floor over every time; returns max z.
struct EntryGate {
  bool pass = true;
  double max_z = 0.0;
  double max_abs = 0.0;
};

EntryGate entry_gate(const DensitySeries& mc, const std::vector<CMatrix>& reference, double sigma, double floor) {
  EntryGate g;
  for (std::size_t n = 0; n < mc.rho.size(); ++n) {
    const CMatrix diff = mc.rho[n] - reference[n];
    for (Eigen::Index i = 0; i < diff.rows(); ++i)
      for (Eigen::Index j = 0; j < diff.cols(); ++j) {
        const double re = std::abs(diff(i, j).real()), im = std::abs(diff(i, j).imag());
        const double sr = mc.se_re[n](i, j), si = mc.se_im[n](i, j);
        g.max_abs = std::max({g.max_abs, re, im});
        if (sr > 0.0) g.max_z = std::max(g.max_z, re / sr);
        if (si > 0.0) g.max_z = std::max(g.max_z, im / si);
        if (re > sigma * sr + floor || im > sigma * si + floor) g.pass = false;
      }
  }
  return g;
}

/// 5-sigma band for the trace distance of two independent estimates.
double trace_distance_band(const DensitySeries& a, const DensitySeries* b, std::size_t n, double sigma) {
  double var = a.se_re[n].squaredNorm() + a.se_im[n].squaredNorm();
  if (b) var += b->se_re[n].squaredNorm() + b->se_im[n].squaredNorm();
  return sigma * 0.5 * std::sqrt(static_cast<double>(a.dim())) * std::sqrt(var);
}

bool is_sigma_z_dephasing(const RunConfig& c) {
  return !c.jump_operator && c.channels.size() == 1 && c.hamiltonian.rows() == 2 &&
         max_abs(CMatrix(c.channels[0] - ops::sigma_z())) < 1e-12 &&
         max_abs(commutator(c.hamiltonian, ops::sigma_z())) < 1e-12;
}

BathSpec bath_from_config(const RunConfig& c, const json& check) {
  const json& k = c.kernel;
  if (k.at("type") != "bath") throw ConfigError("kernel.type", "the bath oracle needs a bath kernel");
  auto bath = modes_from_spectrum(lorentzian_spectrum(k.at("strength").get<double>(), k.at("lambda").get<double>(),
                                                      k.value("center", 0.0)),
                                  1, k.value("modes", std::size_t{32}), k.value("omega_min", -8.0),
                                  k.value("omega_max", 8.0));
  bath.dimension_cap = static_cast<std::size_t>(check_param(check, "dimension_cap", 4096));
  return bath;
}

Check evaluate(const RunConfig& c, const json& check, const DensitySeries* mc, std::uint64_t seed,
               const std::optional<std::filesystem::path>& out_dir, bool verify_only, json& artifacts) {
  const std::string type = check.at("type").get<std::string>();
  const double sigma = check_param(check, "sigma", 5.0);
  Check r{type, false, json::object()};
  r.details["sigma"] = sigma;
  auto need_mc = [&] {
    if (!mc) throw ConfigError("verify", "check '" + type + "' needs a Monte Carlo ensemble");
  };

  if (type == "dephasing_closed_form") {
    need_mc();
    if (c.kernel.at("type") != "ou" || !is_sigma_z_dephasing(c))
      throw ConfigError("verify", "dephasing_closed_form needs a sigma_z channel, commuting H and an ou kernel");
    const double gamma = c.kernel.at("gamma").get<double>(), lambda = c.kernel.at("lambda").get<double>();
    const double floor = check_param(check, "floor", 0.0);
    std::vector<CMatrix> expected;
    for (std::size_t n = 0; n < c.grid.size(); ++n) {
      const double t = c.grid.time(n);
      const double factor = std::exp(-2.0 * gamma * (t - (1.0 - std::exp(-lambda * t)) / lambda));
      CMatrix rho = c.rho0;
      // The Hamiltonian commutes with sigma_z, so in the interaction picture only the coherence decays.
      rho(0, 1) *= factor;
      rho(1, 0) *= factor;
      expected.push_back(rho);
    }
    const auto g = entry_gate(*mc, expected, sigma, floor);
    r.pass = g.pass;
    r.details["max_z"] = g.max_z;
    r.details["max_abs_deviation"] = g.max_abs;
    r.details["floor"] = floor;
    const std::size_t mid = std::min(c.grid.size() - 1, static_cast<std::size_t>(std::llround(1.0 / c.grid.dt())));
    r.details["coherence_ratio_at_t"] = c.grid.time(mid);
    r.details["expected_ratio"] = std::exp(-2.0 * gamma * (c.grid.time(mid) - (1.0 - std::exp(-lambda * c.grid.time(mid))) / lambda));
    if (std::abs(c.rho0(0, 1)) > 0.0) r.details["estimated_ratio"] = std::abs(mc->rho[mid](0, 1) / c.rho0(0, 1));
  } else if (type == "exact_commuting") {
    need_mc();
    DiscretizeOptions opts;
    opts.certify = false;
    const auto family = heisenberg_evolve(c.hamiltonian, engine_channels(c), c.grid);
    const auto exact = commuting_density(family, discretize(build_kernel(c), SChoice::qsd(), c.grid, opts), c.rho0);
    const auto g = entry_gate(*mc, exact.rho, sigma, check_param(check, "floor", 1e-10));
    r.pass = g.pass;
    r.details["max_z"] = g.max_z;
    r.details["max_abs_deviation"] = g.max_abs;
  } else if (type == "trace") {
    need_mc();
    double max_z = 0.0, max_dev = 0.0;
    bool pass = true;
    for (std::size_t n = 0; n < mc->rho.size(); ++n) {
      const double dev = std::abs(mc->rho[n].trace() - 1.0);
      max_dev = std::max(max_dev, dev);
      if (mc->trace_se[n] > 0.0) max_z = std::max(max_z, dev / mc->trace_se[n]);
      if (dev > sigma * mc->trace_se[n] + 1e-10) pass = false;
    }
    r.pass = pass;
    r.details["max_z"] = max_z;
    r.details["max_abs_deviation"] = max_dev;
  } else if (type == "s_independence") {
    if (!check.contains("choices") || !check.at("choices").is_array() || check.at("choices").size() < 2)
      throw ConfigError("verify.choices", "need at least two S choices");
    std::vector<std::string> names;
    std::vector<DensitySeries> series;
    for (std::size_t i = 0; i < check.at("choices").size(); ++i) {
      const auto& node = check.at("choices")[i];
      if (!node.is_string()) throw ConfigError("verify.choices", "expected S choice names");
      const SChoice s = parse_s(node, "verify.choices");
      const auto setup = make_setup(c, s, c.engine, c.depth);
      names.push_back(node.get<std::string>());
      series.push_back(run_density(c, *setup.engine, stream_seed(seed, 1000 + i)));
    }
    bool pass = true;
    json pairs = json::array();
    for (std::size_t a = 0; a < series.size(); ++a)
      for (std::size_t b = a + 1; b < series.size(); ++b) {
        double worst = 0.0, worst_dist = 0.0, worst_band = 0.0;
        for (std::size_t n = 0; n < c.grid.size(); ++n) {
          const double dist = trace_distance(series[a].rho[n], series[b].rho[n]);
          const double band = trace_distance_band(series[a], &series[b], n, sigma) + 1e-10;
          if (dist / band > worst) {
            worst = dist / band;
            worst_dist = dist;
            worst_band = band;
          }
          if (dist > band) pass = false;
        }
        pairs.push_back({{"a", names[a]}, {"b", names[b]}, {"worst_ratio_to_band", worst},
                         {"distance", worst_dist}, {"band", worst_band}});
      }
    r.pass = pass;
    r.details["pairs"] = pairs;
  } else if (type == "cp_tp") {
    const auto setup = make_setup(c, c.s_choice, c.engine, c.depth);
    EnsembleOptions opts;
    opts.threads = c.threads;
    const auto n = static_cast<std::size_t>(check_param(check, "trajectories", static_cast<double>(c.trajectories)));
    const ChoiSeries choi = mc_choi(*setup.engine, n, stream_seed(seed, 2000), opts);
    const CpTpReport rep = verify_cp_tp(choi, sigma);
    r.pass = rep.pass;
    r.details["trajectories"] = n;
    r.details["max_tp_z"] = *std::max_element(rep.tp_max_z.begin(), rep.tp_max_z.end());
    r.details["min_cp_z"] = *std::min_element(rep.cp_z.begin(), rep.cp_z.end());
    r.details["min_eigenvalue"] = *std::min_element(choi.min_eigenvalue.begin(), choi.min_eigenvalue.end());
    if (out_dir && !verify_only) {
      std::ofstream f(*out_dir / "choi.json");
      write_choi_json(f, choi);
      artifacts.push_back("choi.json");
    }
  } else if (type == "lindblad") {
    need_mc();
    const KernelSpec D = build_kernel(c);
    const auto* tl = std::get_if<TimeLocal>(&D.form);
    if (!tl) throw ConfigError("verify", "lindblad check needs a time_local kernel");
    const LindbladSpec spec{c.hamiltonian, engine_channels(c), tl->matrix};
    const auto reference = to_interaction_picture(integrate_lindblad(spec, c.rho0, c.grid), c.hamiltonian);
    const auto g = entry_gate(*mc, reference.rho, sigma, check_param(check, "floor", 1e-10));
    r.pass = g.pass;
    r.details["max_z"] = g.max_z;
    r.details["max_abs_deviation"] = g.max_abs;
  } else if (type == "hierarchy_gate") {
    RunConfig inst = c;
    inst.hamiltonian = CMatrix::Zero(2, 2);
    inst.channels = {ops::sigma_z()};
    inst.jump_operator.reset();
    inst.rho0 = CMatrix::Constant(2, 2, 0.5);
    if (c.hamiltonian.rows() != 2 || c.kernel.at("type") == "time_local" || c.kernel.at("type") == "bath")
      throw ConfigError("verify", "hierarchy_gate needs a qubit system with an exponential kernel");
    const auto n = static_cast<std::size_t>(check_param(check, "trajectories", static_cast<double>(c.trajectories)));
    const double tol = check_param(check, "relative_tolerance", 0.01);
    inst.trajectories = n;
    const auto hier = make_setup(inst, SChoice::qsd(), EngineKind::Hierarchy, c.depth);
    const auto comm = make_setup(inst, SChoice::qsd(), EngineKind::Commuting, c.depth);
    const auto gate_seed = stream_seed(seed, 3000);
    const auto a = run_density(inst, *hier.engine, gate_seed);
    const auto b = run_density(inst, *comm.engine, gate_seed);
    double worst = 0.0;
    for (std::size_t k = 0; k < c.grid.size(); ++k)
      worst = std::max(worst, std::abs(a.rho[k](0, 1) - b.rho[k](0, 1)) / std::abs(b.rho[k](0, 1)));
    r.pass = worst <= tol;
    r.details["depth"] = c.depth;
    r.details["max_relative_difference"] = worst;
    r.details["tolerance"] = tol;
  } else if (type == "bath_oracle") {
    need_mc();
    if (engine_channels(c).size() != 1) throw ConfigError("verify", "bath_oracle supports one channel");
    const auto bath = bath_from_config(c, check);
    const auto cutoff = converge_cutoff(c.hamiltonian, engine_channels(c), bath, c.rho0, c.grid,
                                        static_cast<std::size_t>(check_param(check, "first_cap", 1)),
                                        check_param(check, "cutoff_tolerance", 1e-4));
    const double tol = check_param(check, "tolerance", 0.02);
    const std::size_t last = c.grid.size() - 1;
    const double dist = trace_distance(mc->rho[last], cutoff.series.rho[last]);
    const double band = std::max(tol, trace_distance_band(*mc, nullptr, last, sigma));
    r.pass = cutoff.converged && dist <= band;
    r.details["trace_distance"] = dist;
    r.details["allowed"] = band;
    r.details["cutoff_converged"] = cutoff.converged;
    r.details["excitation_cap"] = cutoff.converged_cap;
    r.details["cutoff_changes"] = cutoff.changes;
    r.details["modes"] = bath.modes.size();
    if (out_dir && !verify_only) {
      std::ofstream f(*out_dir / "oracle_density.csv");
      write_density_csv(f, cutoff.series);
      artifacts.push_back("oracle_density.csv");
    }
  } else {
    throw ConfigError("verify.type", "unknown check '" + type + "'");
  }
  return r;
}

json base_report(const RunConfig& c) {
  return {{"format", "run_report/1"},
          {"version", kVersion},
          {"name", c.name},
          {"config_hash", config_hash(c)},
          {"seed", c.seed ? json(*c.seed) : json(nullptr)},
          {"engine", to_string(c.engine)},
          {"s_choice", to_string(c.s_choice.kind)},
          {"trajectories", c.trajectories},
          {"dt", c.grid.dt()},
          {"n_steps", c.grid.n_steps()}};
}

void finish(RunResult& result, const std::optional<std::filesystem::path>& out_dir) {
  json checks = json::array();
  for (const auto& ch : result.checks) checks.push_back({{"name", ch.name}, {"pass", ch.pass}, {"details", ch.details}});
  result.report["checks"] = checks;
  result.report["pass"] = result.pass();
  if (!result.report.contains("artifacts")) result.report["artifacts"] = json::array();
  if (!out_dir) return;
  result.report["artifacts"].push_back("report.txt");
  {
    std::ofstream f(*out_dir / "report.json");
    f << result.report.dump(2) << '\n';
  }
  std::ofstream f(*out_dir / "report.txt");
  f << std::setprecision(6) << result.report.at("name").get<std::string>() << " (config " << result.report.at("config_hash").get<std::string>()
    << ")\n";
  for (const auto& ch : result.checks) f << (ch.pass ? "PASS " : "FAIL ") << ch.name << ' ' << ch.details.dump() << '\n';
  f << (result.pass() ? "verdict: PASS\n" : "verdict: FAIL\n");
}

std::optional<std::filesystem::path> prepare_out(const RunOptions& options) {
  if (!options.out) return std::nullopt;
  std::filesystem::create_directories(*options.out);
  return options.out;
}

}  // namespace

bool RunResult::pass() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
}

RunResult run(const RunConfig& c, const RunOptions& options) {
  const auto out_dir = prepare_out(options);
  const std::uint64_t seed = require_seed(c);
  RunResult result;
  result.report = base_report(c);
  json artifacts = json::array();

  const auto setup = make_setup(c, c.s_choice, c.engine, c.depth);
  if (!setup.notes.empty()) result.report["engine_notes"] = setup.notes;
  const DensitySeries density = run_density(c, *setup.engine, seed);
  for (const auto& check : c.verify)
    result.checks.push_back(evaluate(c, check, &density, seed, out_dir, options.verify_only, artifacts));

  if (out_dir && !options.verify_only) {
    {
      std::ofstream f(*out_dir / "density.csv");
      write_density_csv(f, density);
    }
    {
      std::ofstream f(*out_dir / "density.json");
      write_density_json(f, density);
    }
    artifacts.push_back("density.csv");
    artifacts.push_back("density.json");
    if (c.write_paths) {
      std::ofstream f(*out_dir / "paths.csv");
      write_paths_csv(f, simulate(*setup.engine, pure_decomposition(c.rho0), c.trajectories, seed));
      artifacts.push_back("paths.csv");
    }
  }
  result.report["artifacts"] = artifacts;
  finish(result, out_dir);
  return result;
}

RunResult sweep(const RunConfig& c, const RunOptions& options) {
  if (!c.sweep) throw ConfigError("sweep", "no sweep axis configured");
  const auto out_dir = prepare_out(options);
  const Sweep& sw = *c.sweep;
  RunResult result;
  result.report = base_report(c);
  result.report["axis"] = sw.axis;
  result.report["values"] = sw.values;
  json artifacts = json::array();
  json table = json::array();

  if (sw.axis == "lambda") {
    if (c.kernel.at("type") != "ou") throw ConfigError("kernel.type", "the lambda sweep needs an ou kernel");
    MarkovSweepScenario sc{c.hamiltonian, engine_channels(c), c.rho0, c.kernel.at("gamma").get<double>(),
                           c.grid.final_time(), c.grid.dt()};
    const auto rep = markov_limit_sweep(sc, sw.values);
    for (std::size_t i = 0; i < sw.values.size(); ++i)
      table.push_back({{"lambda", sw.values[i]}, {"distance", rep.distances[i]},
                       {"ratio_to_next", i < rep.ratios.size() ? json(rep.ratios[i]) : json(nullptr)}});
    result.checks.push_back({"markov_limit", rep.pass, {{"monotone", rep.monotone}, {"ratio_band", {2.5, 6.0}}}});
  } else if (sw.axis == "depth") {
    const std::uint64_t seed = require_seed(c);
    std::vector<DensitySeries> series;
    std::optional<DensitySeries> configured;
    for (double v : sw.values) {
      if (v < 1 || v != std::floor(v)) throw ConfigError("sweep.values", "depths must be positive integers");
      const auto setup = make_setup(c, c.s_choice, EngineKind::Hierarchy, static_cast<std::size_t>(v));
      series.push_back(run_density(c, *setup.engine, seed));
      if (static_cast<std::size_t>(v) == c.depth) configured = series.back();
    }
    std::vector<double> diffs;
    for (std::size_t i = 0; i < series.size(); ++i) {
      json row = {{"depth", sw.values[i]}, {"final_rho", json::array()}};
      const CMatrix& last = series[i].rho.back();
      for (Eigen::Index a = 0; a < last.rows(); ++a)
        for (Eigen::Index b = 0; b < last.cols(); ++b) row["final_rho"].push_back({last(a, b).real(), last(a, b).imag()});
      if (i > 0) {
        double diff = 0.0;
        for (std::size_t n = 0; n < series[i].rho.size(); ++n)
          diff = std::max(diff, max_abs(CMatrix(series[i].rho[n] - series[i - 1].rho[n])));
        diffs.push_back(diff);
        row["difference_to_previous"] = diff;
      }
      table.push_back(row);
    }
    bool monotone = diffs.size() >= 1;
    for (std::size_t i = 0; i + 1 < diffs.size(); ++i) monotone = monotone && diffs[i + 1] < diffs[i];
    result.checks.push_back({"depth_convergence", monotone, {{"differences", diffs}}});
    for (const auto& check : c.verify)
      result.checks.push_back(evaluate(c, check, configured ? &*configured : nullptr, seed, out_dir,
                                       options.verify_only, artifacts));
  } else {
    const json dummy = {{"type", "bath_oracle"}};
    auto bath = bath_from_config(c, c.verify.empty() ? dummy : c.verify.front());
    bath.dimension_cap = std::max<std::size_t>(bath.dimension_cap, 20000);
    std::vector<DensitySeries> series;
    for (double v : sw.values) {
      if (v < 1 || v != std::floor(v)) throw ConfigError("sweep.values", "caps must be positive integers");
      bath.excitation_cap = static_cast<std::size_t>(v);
      series.push_back(evolve_joint(c.hamiltonian, engine_channels(c), bath, c.rho0, c.grid));
    }
    double last_change = 0.0;
    for (std::size_t i = 0; i < series.size(); ++i) {
      json row = {{"excitation_cap", sw.values[i]}};
      if (i > 0) {
        double change = 0.0;
        for (std::size_t n = 0; n < series[i].rho.size(); ++n)
          change = std::max(change, max_abs(CMatrix(series[i].rho[n] - series[i - 1].rho[n])));
        row["change"] = change;
        last_change = change;
      }
      table.push_back(row);
    }
    result.checks.push_back({"cutoff_convergence", series.size() >= 2 && last_change < 1e-4, {{"last_change", last_change}}});
  }

  result.report["table"] = table;
  result.report["artifacts"] = artifacts;
  if (out_dir && !options.verify_only) {
    std::ofstream f(*out_dir / "sweep.csv");
    f << std::setprecision(17) << sw.axis << ",value\n";
    for (const auto& row : table) f << row.dump() << '\n';
    result.report["artifacts"].push_back("sweep.csv");
  }
  finish(result, out_dir);
  return result;
}

RunResult summarize(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ConfigError("results", "'" + dir.string() + "' is not a directory");
  std::vector<std::filesystem::path> reports;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().filename() == "report.json") reports.push_back(entry.path());
  std::sort(reports.begin(), reports.end());
  if (reports.empty()) throw ConfigError("results", "no report.json found under '" + dir.string() + "'");

  RunResult result;
  result.report = {{"format", "summary/1"}, {"version", kVersion}, {"runs", json::array()}};
  std::vector<std::string> missing;
  for (const auto& path : reports) {
    std::ifstream in(path);
    json rep;
    try {
      rep = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError(path.string(), std::string("unreadable report: ") + e.what());
    }
    for (const auto& a : rep.value("artifacts", json::array()))
      if (!std::filesystem::exists(path.parent_path() / a.get<std::string>()))
        missing.push_back((path.parent_path() / a.get<std::string>()).string());
    const std::string rel = std::filesystem::relative(path.parent_path(), dir).string();
    for (const auto& ch : rep.value("checks", json::array()))
      result.checks.push_back({rel + "/" + ch.at("name").get<std::string>(), ch.at("pass").get<bool>(),
                               ch.value("details", json::object())});
    result.report["runs"].push_back({{"directory", rel},
                                     {"name", rep.value("name", "")},
                                     {"config_hash", rep.value("config_hash", "")},
                                     {"seed", rep.value("seed", json(nullptr))},
                                     {"engine", rep.value("engine", "")},
                                     {"version", rep.value("version", "")},
                                     {"pass", rep.value("pass", false)}});
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += "\n  " + m;
    throw ConfigError("results", "missing artifacts:" + list);
  }
  json checks = json::array();
  for (const auto& ch : result.checks) checks.push_back({{"name", ch.name}, {"pass", ch.pass}, {"details", ch.details}});
  result.report["checks"] = checks;
  result.report["pass"] = result.pass();
  {
    std::ofstream f(dir / "summary.json");
    f << result.report.dump(2) << '\n';
  }
  std::ofstream f(dir / "summary.txt");
  for (const auto& run : result.report["runs"])
    f << run.at("name").get<std::string>() << " seed=" << run.at("seed").dump() << " engine="
      << run.at("engine").get<std::string>() << " config=" << run.at("config_hash").get<std::string>()
      << " version=" << run.at("version").get<std::string>() << '\n';
  for (const auto& ch : result.checks) f << (ch.pass ? "PASS " : "FAIL ") << ch.name << '\n';
  f << (result.pass() ? "verdict: PASS\n" : "verdict: FAIL\n");
  return result;
}

}  // namespace nmg::cli

namespace nmg::cli {

namespace {

void print_checks(const RunResult& result, std::ostream& out) {
  for (const auto& ch : result.checks) out << (ch.pass ? "PASS " : "FAIL ") << ch.name << ' ' << ch.details.dump() << '\n';
  out << (result.pass() ? "verdict: PASS" : "verdict: FAIL") << '\n';
}

}  // namespace

int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Gaussian non-Markovian open-system simulator"};
  app.require_subcommand(1);
  bool list_presets = false;
  app.add_flag("--list-presets", list_presets, "Print the built-in scenario names");

  std::string config_path, preset_name, out_dir, engine;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> trajectories;
  bool verify_only = false;
  auto add_run_options = [&](CLI::App* sub) {
    auto* cfg = sub->add_option("--config", config_path, "JSON configuration file");
    sub->add_option("--preset", preset_name, "Built-in scenario")->excludes(cfg);
    sub->add_option("--seed", seed, "Master seed");
    sub->add_option("--trajectories", trajectories, "Number of trajectories");
    sub->add_option("--engine", engine, "unitary, commuting, hierarchy or markov_sse");
    sub->add_option("--out", out_dir, "Output directory");
    sub->add_flag("--verify-only", verify_only, "Run the checks without writing bulk artifacts");
  };
  auto* run_cmd = app.add_subcommand("run", "Run an engine and its verification checks");
  auto* sweep_cmd = app.add_subcommand("sweep", "Run the configured parameter sweep");
  auto* report_cmd = app.add_subcommand("report", "Summarize a results directory");
  add_run_options(run_cmd);
  add_run_options(sweep_cmd);
  std::string results_dir;
  report_cmd->add_option("dir", results_dir, "Results directory")->required();
  app.add_subcommand("presets", "List the built-in scenarios");

  std::vector<std::string> args(argv + 1, argv + argc);
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (list_presets || app.got_subcommand("presets")) {
      for (const auto& n : preset_names()) out << n << '\n';
      return 0;
    }
    if (report_cmd->parsed()) {
      const auto result = summarize(results_dir);
      print_checks(result, out);
      return result.pass() ? 0 : 1;
    }
    if (config_path.empty() == preset_name.empty()) throw ConfigError("", "give exactly one of --config or --preset");
    nlohmann::json tree = config_path.empty() ? preset(preset_name) : load_config_file(config_path);
    if (seed) tree["seed"] = *seed;
    if (trajectories) tree["trajectories"] = *trajectories;
    if (!engine.empty()) {
      if (tree.contains("engine") && tree["engine"].is_object())
        tree["engine"]["type"] = engine;
      else
        tree["engine"] = engine;
    }
    const RunConfig config = parse_config(tree);
    RunOptions options;
    if (!out_dir.empty()) options.out = out_dir;
    options.verify_only = verify_only;
    const auto result = sweep_cmd->parsed() ? sweep(config, options) : run(config, options);
    out << config.name << " seed=" << (config.seed ? std::to_string(*config.seed) : "none")
        << " engine=" << to_string(config.engine) << " config=" << config_hash(config) << '\n';
    print_checks(result, out);
    return result.pass() ? 0 : 1;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const InvalidInput& e) {
    err << "invalid input: " << e.what() << '\n';
    return 2;
  } catch (const NumericalRefusal& e) {
    err << "numerical refusal: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  }
}

}  // namespace nmg::cli
