#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "autodml/autodml.hpp"
#include "autodml/gmm.hpp"

namespace autodml::cli {

// Flat key = value text. '#' starts a comment line, "[name]" prefixes the
// following keys with "name.". Keys are case sensitive; duplicates are errors.
class Config {
 public:
  static Config parse(const std::string& text, const std::string& origin = "config");
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& key) const;
  std::optional<std::string> get(const std::string& key) const;
  std::string require(const std::string& key) const;
  std::string text(const std::string& key, const std::string& fallback) const;
  double number(const std::string& key, double fallback) const;
  std::optional<double> number(const std::string& key) const;
  std::size_t count(const std::string& key, std::size_t fallback) const;
  bool flag(const std::string& key, bool fallback) const;
  std::vector<std::string> list(const std::string& key) const;
  std::vector<double> numbers(const std::string& key) const;
  // Keys starting with prefix + "."; marks none of them as used.
  std::vector<std::string> keys_under(const std::string& prefix) const;

  // Relative paths resolve against the config file's directory.
  std::filesystem::path path(const std::string& key) const;

  // ValidationError listing every key nobody asked for.
  void reject_unused() const;

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
  std::filesystem::path base_;
  std::string origin_;
};

enum class TransformChoice { none, att, elasticity, decomposition };

struct EstimateJob {
  Dataset data;
  std::shared_ptr<const Dictionary> dictionary;
  MomentFunctional functional = MomentFunctional::mean();
  FoldPlan folds;
  RieszSpec riesz;
  RegressionSpec regression;
  EstimateOptions options;
  TransformChoice transform = TransformChoice::none;
  ElasticityKind elasticity = ElasticityKind::own_price;
  std::filesystem::path report_path;
  std::optional<std::filesystem::path> influence_path;
};

struct GmmJob {
  Dataset data;
  std::shared_ptr<const Dictionary> dictionary;
  std::unique_ptr<GmmModel> model;
  FoldPlan folds;
  GmmConfig config;
  std::filesystem::path report_path;
  std::optional<std::filesystem::path> influence_path;
};

// Everything is read and checked here, before any fitting.
EstimateJob build_estimate_job(const Config& cfg);
GmmJob build_gmm_job(const Config& cfg);

nlohmann::json to_json(const EstimateReport& rep, const Dictionary& dict);
nlohmann::json to_json(const TransformReport& rep);
nlohmann::json to_json(const GmmReport& rep);

// Influence rows as CSV text: row_id, cluster (when present), psi columns.
std::string influence_csv(const EstimateReport& rep, const Dataset& data);
std::string influence_csv(const GmmReport& rep, const Dataset& data);

// All files appear or none do: each is written to a sibling temporary and
// renamed once every write succeeded.
void write_files_atomically(const std::vector<std::pair<std::filesystem::path, std::string>>& files);

// Human-readable summary of a report written by estimate or gmm.
std::string render_report(const nlohmann::json& report);

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kValidation = 2;
inline constexpr int kNumerical = 3;
inline constexpr int kIo = 4;

struct RunResult {
  int code = kOk;
  std::string summary;
};

RunResult run_estimate(const Config& cfg, bool allow_flags);
RunResult run_gmm(const Config& cfg, bool allow_flags);

struct SimulateOptions {
  std::string design;
  std::size_t reps = 100;
  std::vector<std::string> variants;
  std::optional<std::size_t> n;
  std::uint64_t seed = 1;
  std::size_t threads = 0;
  std::optional<std::filesystem::path> output;
};
// Canonical variant name for user spellings such as "theoretical r_L".
std::string canonical_variant(const std::string& name);
RunResult run_simulate(const SimulateOptions& opt);

}  // namespace autodml::cli
