#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "icce/featstore.hpp"
#include "icce/heads.hpp"
#include "icce/selftrain.hpp"

namespace icce {

/// Flat "section.key" -> value store. The file syntax is INI-like:
///
///   # comment
///   [heads]
///   num_heads = 50
///
/// Keys outside any section are stored without a prefix.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text, std::string_view origin = "<text>");
  static KeyValueConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  /// Parses "section.key=value".
  void apply_override(std::string_view assignment);
  std::optional<std::string> get(const std::string& key) const;
  bool contains(const std::string& key) const { return values_.contains(key); }
  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

double parse_double(const std::string& key, const std::string& value);
std::uint64_t parse_uint(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);
std::vector<double> parse_double_list(const std::string& key, const std::string& value);

/// Sets one TrainConfig field by its key name; false if the key is unknown.
bool apply_train_setting(TrainConfig& cfg, const std::string& key, const std::string& value);
/// "key=value" lines, round-trippable through train_config_from_text.
std::string train_config_to_text(const TrainConfig& cfg);
TrainConfig train_config_from_text(std::string_view text);

bool apply_selftrain_setting(SelfTrainConfig& cfg, const std::string& key,
                             const std::string& value);

enum class NeighborSource { adaptive, ground_truth };
enum class NeighborSpace { raw, standardized };

struct PipelineConfig {
  std::filesystem::path features;
  std::optional<FeatureFormat> features_format;  // from extension when unset
  std::optional<std::filesystem::path> labels;
  std::filesystem::path output_dir = "icce_out";

  std::uint64_t seed = 0;
  std::size_t threads = 1;

  double theta = 0.3;
  std::size_t k_min = 50;
  NeighborSource neighbor_source = NeighborSource::adaptive;
  NeighborSpace neighbor_space = NeighborSpace::raw;

  TrainConfig heads;
  std::size_t ensemble_k = 0;  // 0: use heads.num_clusters
  SelfTrainConfig selftrain;
  bool metrics = true;

  /// Builds from sections data, run, neighbors, heads, ensemble, selftrain,
  /// metrics. Unknown keys and invalid values throw ConfigError. Keys under
  /// `ignore_sections` are skipped (used for the ablate section).
  static PipelineConfig from(const KeyValueConfig& kv,
                             const std::vector<std::string>& ignore_sections = {"ablate"});

  std::size_t target_k() const { return ensemble_k == 0 ? heads.num_clusters : ensemble_k; }
  void validate() const;
  /// Canonical text of every effective setting; its hash identifies a run.
  std::string to_text() const;
};

}  // namespace icce
