#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "icce/config.hpp"
#include "icce/ensemble.hpp"
#include "icce/eval.hpp"
#include "icce/heads.hpp"
#include "icce/neighbors.hpp"
#include "icce/selftrain.hpp"

namespace icce {

// Each stage reads its inputs from files and writes its outputs to files, so
// any stage can be re-run from its predecessor's artifacts alone.

EmbeddingMatrix load_pipeline_features(const PipelineConfig& cfg);

/// Mines neighbor sets per the config (adaptive or ground truth).
NeighborSets compute_neighbors(const PipelineConfig& cfg, const EmbeddingMatrix& features,
                               const std::optional<Labeling>& truth);

/// Parsed form of train_report.txt.
struct StoredTrainReport {
  std::vector<double> per_head_loss;
  std::size_t best_head = 0;
  std::vector<std::filesystem::path> labeling_paths;
  std::vector<Labeling> labelings;
};

/// Writes heads.hdb, head_XX.lbl and train_report.txt into `dir`; returns
/// the written paths (report first).
std::vector<std::filesystem::path> write_train_outputs(const TrainResult& result,
                                                       const std::filesystem::path& dir);
std::string format_train_report(const TrainReport& report,
                                const std::vector<std::string>& labeling_files);
StoredTrainReport read_train_report(const std::filesystem::path& path);

/// Stage 2 on stored labelings: all heads as inputs, best head as the extra
/// candidate.
ConsensusResult consensus_from_report(const StoredTrainReport& report, std::size_t k);
std::string format_anmi_table(const ConsensusResult& r);

struct StageRecord {
  std::string name;
  std::vector<std::filesystem::path> outputs;
  std::vector<std::string> digests;
  double seconds = 0.0;
  std::optional<MetricsReport> metrics;
};

struct RunManifest {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<StageRecord> stages;
  std::size_t selftrain_rounds = 0;

  const StageRecord* stage(const std::string& name) const;
  std::string to_text() const;
};

/// Stage 1 (neighbors + heads) -> stage 2 (supra-consensus) -> stage 3
/// (self-training + prediction). Writes every artifact plus manifest.txt to
/// cfg.output_dir. A stage failure is rethrown as Error naming the stage;
/// earlier outputs stay on disk.
RunManifest run_pipeline(const PipelineConfig& cfg);

}  // namespace icce
