#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "cli.hpp"
#include "nmg/bath.hpp"

namespace nmg::cli {

using nlohmann::json;

namespace {

std::string join(const std::string& base, const std::string& key) { return base.empty() ? key : base + "." + key; }

const json& require(const json& node, const std::string& key, const std::string& base) {
  if (!node.is_object() || !node.contains(key)) throw ConfigError(join(base, key), "required field is missing");
  return node.at(key);
}

double number(const json& node, const std::string& field) {
  if (!node.is_number()) throw ConfigError(field, "expected a number");
  const double v = node.get<double>();
  if (!std::isfinite(v)) throw ConfigError(field, "expected a finite number");
  return v;
}

double number_or(const json& node, const std::string& key, double fallback, const std::string& base) {
  return node.contains(key) ? number(node.at(key), join(base, key)) : fallback;
}

std::uint64_t count(const json& node, const std::string& field) {
  if (!node.is_number_integer() || node.get<long long>() < 0) throw ConfigError(field, "expected a nonnegative integer");
  return node.get<std::uint64_t>();
}

std::uint64_t count_or(const json& node, const std::string& key, std::uint64_t fallback, const std::string& base) {
  return node.contains(key) ? count(node.at(key), join(base, key)) : fallback;
}

Complex complex_value(const json& node, const std::string& field) {
  if (node.is_number()) return {number(node, field), 0.0};
  if (node.is_array() && node.size() == 2) return {number(node[0], field + "[0]"), number(node[1], field + "[1]")};
  throw ConfigError(field, "expected a number or a [re, im] pair");
}

void check_keys(const json& node, std::initializer_list<const char*> allowed, const std::string& base) {
  if (!node.is_object()) throw ConfigError(base, "expected an object");
  for (const auto& [key, value] : node.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) throw ConfigError(join(base, key), "unknown field");
  }
}

CMatrix parse_state(const json& node, Eigen::Index d, const std::string& field) {
  if (node.is_string()) {
    const auto name = node.get<std::string>();
    CVector v = CVector::Zero(d);
    if (name == "up") v(0) = 1.0;
    else if (name == "down" && d >= 2) v(1) = 1.0;
    else if (name == "plus" && d >= 2) v(0) = v(1) = std::sqrt(0.5);
    else throw ConfigError(field, "unknown state preset '" + name + "' (expected up, down or plus)");
    return v * v.adjoint();
  }
  if (node.is_object() && node.contains("vector")) {
    const auto& arr = node.at("vector");
    if (!arr.is_array() || static_cast<Eigen::Index>(arr.size()) != d)
      throw ConfigError(field + ".vector", "expected " + std::to_string(d) + " amplitudes");
    CVector v(d);
    for (Eigen::Index i = 0; i < d; ++i)
      v(i) = complex_value(arr[static_cast<std::size_t>(i)], field + ".vector[" + std::to_string(i) + "]");
    if (std::abs(v.squaredNorm() - 1.0) > 1e-12) throw ConfigError(field + ".vector", "state must have unit norm");
    return v * v.adjoint();
  }
  if (node.is_object() && node.contains("density")) {
    const CMatrix rho = parse_operator(node.at("density"), d, field + ".density");
    if (!is_hermitian(rho) || std::abs(rho.trace() - 1.0) > 1e-12)
      throw ConfigError(field + ".density", "density matrix must be Hermitian with unit trace");
    if (hermitian_eigen(rho).values(0) < -1e-12) throw ConfigError(field + ".density", "density matrix is not PSD");
    return rho;
  }
  throw ConfigError(field, "expected a state preset, {\"vector\": ...} or {\"density\": ...}");
}

}  // namespace

SChoice parse_s(const json& node, const std::string& field) {
  if (!node.is_string()) throw ConfigError(field, "expected one of unitary, qsd, collapse");
  const auto name = node.get<std::string>();
  try {
    const SKind kind = parse_s_kind(name);
    if (kind == SKind::Custom) throw ConfigError(field, "custom S kernels are not configurable from files");
    return SChoice{kind, std::nullopt};
  } catch (const InvalidInput& e) {
    throw ConfigError(field, e.what());
  }
}

CMatrix parse_operator(const json& node, Eigen::Index dim, const std::string& field) {
  if (node.is_string()) {
    const auto name = node.get<std::string>();
    if (name == "zero") return CMatrix::Zero(dim, dim);
    CMatrix m;
    try {
      m = ops::named(name, dim);
    } catch (const InvalidInput& e) {
      throw ConfigError(field, e.what());
    }
    if (m.rows() != dim) throw ConfigError(field, "operator '" + name + "' has dimension " + std::to_string(m.rows()) +
                                                      ", system dimension is " + std::to_string(dim));
    return m;
  }
  if (node.is_object()) {
    check_keys(node, {"name", "scale"}, field);
    const CMatrix base = parse_operator(require(node, "name", field), dim, join(field, "name"));
    const Complex scale = node.contains("scale") ? complex_value(node.at("scale"), join(field, "scale")) : Complex(1.0);
    return scale * base;
  }
  if (node.is_array()) {
    if (static_cast<Eigen::Index>(node.size()) != dim) throw ConfigError(field, "expected " + std::to_string(dim) + " rows");
    CMatrix m(dim, dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
      const auto& row = node[static_cast<std::size_t>(i)];
      const std::string rf = field + "[" + std::to_string(i) + "]";
      if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != dim)
        throw ConfigError(rf, "expected " + std::to_string(dim) + " entries");
      for (Eigen::Index j = 0; j < dim; ++j)
        m(i, j) = complex_value(row[static_cast<std::size_t>(j)], rf + "[" + std::to_string(j) + "]");
    }
    return m;
  }
  throw ConfigError(field, "expected an operator name, {\"name\", \"scale\"} or a matrix of [re, im] pairs");
}

json load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, column = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    throw ConfigError("", path.string() + ":" + std::to_string(line) + ":" + std::to_string(column) +
                              ": JSON syntax error: " + e.what());
  }
}

RunConfig parse_config(const json& tree) {
  check_keys(tree, {"name", "system", "initial_state", "kernel", "s_choice", "grid", "engine", "trajectories", "seed",
                    "threads", "verify", "sweep", "outputs"},
             "");
  RunConfig c;
  c.source = tree;
  if (tree.contains("name")) {
    if (!tree.at("name").is_string()) throw ConfigError("name", "expected a string");
    c.name = tree.at("name").get<std::string>();
  }

  const json& system = require(tree, "system", "");
  check_keys(system, {"dim", "hamiltonian", "channels", "jump_operator"}, "system");
  const auto d = static_cast<Eigen::Index>(count_or(system, "dim", 2, "system"));
  if (d < 1 || d > 64) throw ConfigError("system.dim", "dimension must be between 1 and 64");
  c.hamiltonian = system.contains("hamiltonian") ? parse_operator(system.at("hamiltonian"), d, "system.hamiltonian")
                                                 : CMatrix::Zero(d, d);
  if (!is_hermitian(c.hamiltonian)) throw ConfigError("system.hamiltonian", "Hamiltonian must be Hermitian");
  if (system.contains("jump_operator")) {
    if (system.contains("channels")) throw ConfigError("system.channels", "give either channels or jump_operator");
    c.jump_operator = parse_operator(system.at("jump_operator"), d, "system.jump_operator");
  } else {
    const json& ch = require(system, "channels", "system");
    if (!ch.is_array() || ch.empty()) throw ConfigError("system.channels", "expected a nonempty list of operators");
    for (std::size_t j = 0; j < ch.size(); ++j) {
      const std::string f = "system.channels[" + std::to_string(j) + "]";
      c.channels.push_back(parse_operator(ch[j], d, f));
      if (!is_hermitian(c.channels.back()))
        throw ConfigError(f, "channels must be Hermitian; use jump_operator for a non-Hermitian coupling");
    }
  }

  c.rho0 = parse_state(require(tree, "initial_state", ""), d, "initial_state");
  c.kernel = require(tree, "kernel", "");
  if (!c.kernel.is_object() || !c.kernel.contains("type") || !c.kernel.at("type").is_string())
    throw ConfigError("kernel.type", "required string field is missing");
  if (tree.contains("s_choice")) c.s_choice = parse_s(tree.at("s_choice"), "s_choice");

  const json& grid = require(tree, "grid", "");
  check_keys(grid, {"dt", "n_steps", "t_final"}, "grid");
  const double dt = number(require(grid, "dt", "grid"), "grid.dt");
  if (!(dt > 0.0)) throw ConfigError("grid.dt", "must be positive");
  std::size_t steps = 0;
  if (grid.contains("n_steps")) {
    steps = count(grid.at("n_steps"), "grid.n_steps");
  } else {
    const double t = number(require(grid, "t_final", "grid"), "grid.t_final");
    const double ratio = t / dt;
    if (!(t > 0.0) || std::abs(ratio - std::round(ratio)) > 1e-9 * ratio)
      throw ConfigError("grid.t_final", "must be a positive multiple of dt");
    steps = static_cast<std::size_t>(std::llround(ratio));
  }
  if (steps < 1) throw ConfigError("grid.n_steps", "need at least one step");
  c.grid = TimeGrid(dt, steps);

  if (tree.contains("engine")) {
    const json& e = tree.at("engine");
    const json* type = &e;
    if (e.is_object()) {
      check_keys(e, {"type", "depth", "max_indices"}, "engine");
      type = &require(e, "type", "engine");
      c.depth = count_or(e, "depth", c.depth, "engine");
      c.max_hierarchy_indices = count_or(e, "max_indices", c.max_hierarchy_indices, "engine");
    }
    if (!type->is_string()) throw ConfigError("engine", "expected an engine name");
    try {
      c.engine = parse_engine_kind(type->get<std::string>());
    } catch (const InvalidInput& ex) {
      throw ConfigError("engine", ex.what());
    }
  }
  c.trajectories = count_or(tree, "trajectories", c.trajectories, "");
  if (tree.contains("seed")) c.seed = count(tree.at("seed"), "seed");
  c.threads = static_cast<unsigned>(count_or(tree, "threads", 0, ""));

  if (tree.contains("verify")) {
    const json& v = tree.at("verify");
    if (!v.is_array()) throw ConfigError("verify", "expected a list of checks");
    for (std::size_t i = 0; i < v.size(); ++i) {
      const std::string f = "verify[" + std::to_string(i) + "]";
      if (!v[i].is_object() || !v[i].contains("type") || !v[i].at("type").is_string())
        throw ConfigError(f + ".type", "required string field is missing");
      c.verify.push_back(v[i]);
    }
  }
  if (tree.contains("sweep")) {
    const json& s = tree.at("sweep");
    check_keys(s, {"axis", "values"}, "sweep");
    Sweep sw;
    const json& axis = require(s, "axis", "sweep");
    if (!axis.is_string()) throw ConfigError("sweep.axis", "expected lambda, depth or excitation_cap");
    sw.axis = axis.get<std::string>();
    if (sw.axis != "lambda" && sw.axis != "depth" && sw.axis != "excitation_cap")
      throw ConfigError("sweep.axis", "unknown axis '" + sw.axis + "' (expected lambda, depth or excitation_cap)");
    const json& values = require(s, "values", "sweep");
    if (!values.is_array()) throw ConfigError("sweep.values", "expected a list");
    if (values.empty()) throw ConfigError("sweep.values", "sweep axis is empty");
    for (std::size_t i = 0; i < values.size(); ++i)
      sw.values.push_back(number(values[i], "sweep.values[" + std::to_string(i) + "]"));
    c.sweep = std::move(sw);
  }
  if (tree.contains("outputs")) {
    const json& o = tree.at("outputs");
    check_keys(o, {"paths"}, "outputs");
    if (o.contains("paths")) {
      if (!o.at("paths").is_boolean()) throw ConfigError("outputs.paths", "expected true or false");
      c.write_paths = o.at("paths").get<bool>();
    }
  }

  // Resolve the kernel once so that schema errors surface before any work.
  (void)build_kernel(c);
  return c;
}

std::vector<CMatrix> engine_channels(const RunConfig& config) {
  if (!config.jump_operator) return config.channels;
  const auto nh = make_nonhermitian_channels(*config.jump_operator);
  return {nh.a1, nh.a2};
}

KernelSpec build_kernel(const RunConfig& config) {
  const json& k = config.kernel;
  const std::string type = k.at("type").get<std::string>();
  const std::size_t J = config.jump_operator ? 1 : config.channels.size();
  KernelSpec scalar;

  if (type == "ou") {
    check_keys(k, {"type", "gamma", "lambda"}, "kernel");
    const double gamma = number(require(k, "gamma", "kernel"), "kernel.gamma");
    const double lambda = number(require(k, "lambda", "kernel"), "kernel.lambda");
    if (gamma < 0.0) throw ConfigError("kernel.gamma", "must be nonnegative");
    if (!(lambda > 0.0)) throw ConfigError("kernel.lambda", "must be positive");
    PronySum p;
    p.channels = J;
    for (std::size_t j = 0; j < J; ++j) p.terms.push_back({j, j, Complex(0.5 * gamma * lambda), Complex(lambda)});
    scalar = KernelSpec{p};
  } else if (type == "lorentzian") {
    check_keys(k, {"type", "strength", "lambda", "center"}, "kernel");
    const double c = number(require(k, "strength", "kernel"), "kernel.strength");
    const double lambda = number(require(k, "lambda", "kernel"), "kernel.lambda");
    const double center = number_or(k, "center", 0.0, "kernel");
    if (!(lambda > 0.0)) throw ConfigError("kernel.lambda", "must be positive");
    PronySum p;
    p.channels = J;
    for (std::size_t j = 0; j < J; ++j) p.terms.push_back({j, j, Complex(c * c), Complex(lambda, center)});
    scalar = KernelSpec{p};
  } else if (type == "prony") {
    check_keys(k, {"type", "terms"}, "kernel");
    const json& terms = require(k, "terms", "kernel");
    if (!terms.is_array()) throw ConfigError("kernel.terms", "expected a list");
    PronySum p;
    p.channels = J;
    for (std::size_t i = 0; i < terms.size(); ++i) {
      const std::string f = "kernel.terms[" + std::to_string(i) + "]";
      check_keys(terms[i], {"left", "right", "weight", "rate"}, f);
      const auto left = count_or(terms[i], "left", 0, f), right = count_or(terms[i], "right", 0, f);
      if (left >= J || right >= J) throw ConfigError(f, "channel index out of range");
      const Complex rate = complex_value(require(terms[i], "rate", f), f + ".rate");
      if (rate.real() < 0.0) throw ConfigError(f + ".rate", "real part must be nonnegative");
      p.terms.push_back({left, right, complex_value(require(terms[i], "weight", f), f + ".weight"), rate});
    }
    scalar = KernelSpec{p};
  } else if (type == "time_local") {
    check_keys(k, {"type", "rate"}, "kernel");
    const json& rate = require(k, "rate", "kernel");
    CMatrix m = rate.is_number() ? CMatrix(number(rate, "kernel.rate") * CMatrix::Identity(static_cast<Eigen::Index>(J),
                                                                                           static_cast<Eigen::Index>(J)))
                                 : parse_operator(rate, static_cast<Eigen::Index>(J), "kernel.rate");
    if (!is_hermitian(m) || hermitian_eigen(m).values(0) < -1e-12)
      throw ConfigError("kernel.rate", "rate matrix must be Hermitian and PSD");
    scalar = KernelSpec{TimeLocal{J, [m](double) { return m; }}};
  } else if (type == "bath") {
    check_keys(k, {"type", "strength", "lambda", "center", "modes", "omega_min", "omega_max", "max_terms",
                   "fit_tolerance"},
               "kernel");
    if (J != 1) throw ConfigError("kernel.type", "bath kernels support a single channel");
    const double c = number(require(k, "strength", "kernel"), "kernel.strength");
    const double lambda = number(require(k, "lambda", "kernel"), "kernel.lambda");
    if (!(lambda > 0.0)) throw ConfigError("kernel.lambda", "must be positive");
    const auto bath = modes_from_spectrum(lorentzian_spectrum(c, lambda, number_or(k, "center", 0.0, "kernel")), 1,
                                          count_or(k, "modes", 32, "kernel"), number_or(k, "omega_min", -8.0, "kernel"),
                                          number_or(k, "omega_max", 8.0, "kernel"));
    scalar = KernelSpec{bath_kernel(bath, config.grid)};
  } else {
    throw ConfigError("kernel.type", "unknown kernel type '" + type + "' (expected ou, lorentzian, prony, time_local or bath)");
  }

  if (!config.jump_operator) return scalar;
  if (const auto* tl = std::get_if<TimeLocal>(&scalar.form)) {
    const auto nh = make_nonhermitian_channels(*config.jump_operator);
    auto f = tl->matrix;
    return KernelSpec{TimeLocal{2, [nh, f](double t) { return nh.rates(f(t)(0, 0)); }}};
  }
  return make_nonhermitian_channels(*config.jump_operator).kernel(scalar);
}

std::string config_hash(const RunConfig& config) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : config.source.dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

std::vector<std::string> preset_names() {
  return {"dephasing-ou", "qsd-vs-collapse", "markov-limit", "hierarchy-depth", "amplitude-damping", "bath-oracle",
          "markov-sse"};
}

json preset(const std::string& name) {
  const json dephasing_system = {{"channels", {"sigma_z"}}};
  const json qubit_grid = {{"dt", 0.01}, {"n_steps", 200}};
  if (name == "dephasing-ou")
    return {{"name", name},
            {"system", dephasing_system},
            {"initial_state", "plus"},
            {"kernel", {{"type", "ou"}, {"gamma", 2.0}, {"lambda", 1.0}}},
            {"s_choice", "qsd"},
            {"grid", qubit_grid},
            {"engine", "commuting"},
            {"trajectories", 10000},
            {"seed", 1},
            {"verify", {{{"type", "dephasing_closed_form"}}, {{"type", "exact_commuting"}}, {{"type", "trace"}}}}};
  if (name == "qsd-vs-collapse")
    return {{"name", name},
            {"system", dephasing_system},
            {"initial_state", "plus"},
            {"kernel", {{"type", "ou"}, {"gamma", 2.0}, {"lambda", 1.0}}},
            {"s_choice", "qsd"},
            {"grid", qubit_grid},
            {"engine", "commuting"},
            {"trajectories", 10000},
            {"seed", 2},
            {"verify", {{{"type", "s_independence"}, {"choices", {"qsd", "unitary", "collapse"}}}}}};
  if (name == "markov-limit")
    return {{"name", name},
            {"system", dephasing_system},
            {"initial_state", "plus"},
            {"kernel", {{"type", "ou"}, {"gamma", 1.0}, {"lambda", 1.0}}},
            {"grid", {{"dt", 0.001}, {"n_steps", 1000}}},
            {"engine", "commuting"},
            {"sweep", {{"axis", "lambda"}, {"values", {2.0, 8.0, 32.0}}}}};
  if (name == "hierarchy-depth")
    return {{"name", name},
            {"system", {{"hamiltonian", {{"name", "sigma_z"}, {"scale", 0.5}}}, {"channels", {"sigma_x"}}}},
            {"initial_state", "up"},
            {"kernel", {{"type", "ou"}, {"gamma", 2.0}, {"lambda", 1.0}}},
            {"s_choice", "qsd"},
            {"grid", qubit_grid},
            {"engine", {{"type", "hierarchy"}, {"depth", 4}}},
            {"trajectories", 1000},
            {"seed", 4},
            {"verify", {{{"type", "hierarchy_gate"}, {"trajectories", 1000}}}},
            {"sweep", {{"axis", "depth"}, {"values", {2, 4, 6}}}}};
  if (name == "amplitude-damping")
    return {{"name", name},
            {"system", {{"jump_operator", "sigma_minus"}}},
            {"initial_state", "up"},
            {"kernel", {{"type", "ou"}, {"gamma", 1.0}, {"lambda", 2.0}}},
            {"s_choice", "qsd"},
            {"grid", {{"dt", 0.01}, {"n_steps", 100}}},
            {"engine", {{"type", "hierarchy"}, {"depth", 4}}},
            {"trajectories", 2000},
            {"seed", 5},
            {"verify", {{{"type", "trace"}}, {{"type", "cp_tp"}, {"trajectories", 1000}}}}};
  if (name == "bath-oracle")
    return {{"name", name},
            {"system", {{"hamiltonian", {{"name", "sigma_z"}, {"scale", 0.5}}}, {"channels", {"sigma_x"}}}},
            {"initial_state", {{"vector", {std::sqrt(0.8), std::sqrt(0.2)}}}},
            {"kernel",
             {{"type", "bath"},
              {"strength", std::sqrt(0.1)},
              {"lambda", 1.0},
              {"center", 1.0},
              {"modes", 32},
              {"omega_min", -8.0},
              {"omega_max", 8.0},
              {"max_terms", 6},
              {"fit_tolerance", 1e-5}}},
            {"s_choice", "qsd"},
            {"grid", {{"dt", 0.01}, {"n_steps", 100}}},
            {"engine", {{"type", "hierarchy"}, {"depth", 4}}},
            {"trajectories", 10000},
            {"seed", 6},
            {"verify",
             {{{"type", "bath_oracle"}, {"tolerance", 0.02}, {"first_cap", 2}, {"cutoff_tolerance", 1e-4},
               {"dimension_cap", 20000}}}}};
  if (name == "markov-sse")
    return {{"name", name},
            {"system", dephasing_system},
            {"initial_state", "plus"},
            {"kernel", {{"type", "time_local"}, {"rate", 0.5}}},
            {"s_choice", "qsd"},
            {"grid", qubit_grid},
            {"engine", "markov_sse"},
            {"trajectories", 10000},
            {"seed", 7},
            {"verify", {{{"type", "lindblad"}}, {{"type", "trace"}}}}};
  throw ConfigError("preset", "unknown preset '" + name + "'");
}

}  // namespace nmg::cli
