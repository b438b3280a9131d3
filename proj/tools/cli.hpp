#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nmg/engines.hpp"
#include "nmg/kernels.hpp"
#include "nmg/trajectories.hpp"

namespace nmg::cli {

/// Malformed or inconsistent configuration; `field` is a dotted path.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& field, const std::string& message)
      : Error(field.empty() ? message : field + ": " + message), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct Sweep {
  std::string axis;  ///< "lambda", "depth" or "excitation_cap"
  std::vector<double> values;
};

struct RunConfig {
  std::string name = "run";
  CMatrix hamiltonian;
  std::vector<CMatrix> channels;
  std::optional<CMatrix> jump_operator;  ///< non-Hermitian L split into two channels
  CMatrix rho0;
  nlohmann::json kernel;
  SChoice s_choice = SChoice::qsd();
  TimeGrid grid;
  EngineKind engine = EngineKind::Commuting;
  std::size_t depth = 4;
  std::size_t max_hierarchy_indices = 200000;
  std::size_t trajectories = 1000;
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
  std::vector<nlohmann::json> verify;
  std::optional<Sweep> sweep;
  bool write_paths = false;
  nlohmann::json source;  ///< the validated input tree, used for the config hash
};

/// Parses and validates a configuration tree.
RunConfig parse_config(const nlohmann::json& tree);
/// Reads a JSON file; syntax errors report line and column.
nlohmann::json load_config_file(const std::filesystem::path& path);

/// Names of the built-in scenarios.
std::vector<std::string> preset_names();
nlohmann::json preset(const std::string& name);

/// "unitary", "qsd" or "collapse".
SChoice parse_s(const nlohmann::json& node, const std::string& field);

/// Operator from a preset name, {"name", "scale"} object or a dense matrix of [re, im] pairs.
CMatrix parse_operator(const nlohmann::json& node, Eigen::Index dim, const std::string& field);

/// Kernel of the configured system: channels already split for a jump operator.
KernelSpec build_kernel(const RunConfig& config);
/// Channels handed to the engines (the jump operator expanded when present).
std::vector<CMatrix> engine_channels(const RunConfig& config);

/// 64-bit FNV-1a of the compact dump of the validated tree, as hex.
std::string config_hash(const RunConfig& config);

struct Check {
  std::string name;
  bool pass = false;
  nlohmann::json details;
};

struct RunResult {
  std::vector<Check> checks;
  nlohmann::json report;
  bool pass() const;
};

struct RunOptions {
  std::optional<std::filesystem::path> out;
  bool verify_only = false;
};

/// Executes the engine and every requested verification, writing artifacts
/// into options.out when given.
RunResult run(const RunConfig& config, const RunOptions& options);
/// Executes the configured sweep axis.
RunResult sweep(const RunConfig& config, const RunOptions& options);

/// Summarizes the report.json files found in a results directory.
RunResult summarize(const std::filesystem::path& dir);

/// Entry point behind the executable: exit 0 pass, 1 verification failure,
/// 2 configuration error, 3 numerical refusal.
int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace nmg::cli
