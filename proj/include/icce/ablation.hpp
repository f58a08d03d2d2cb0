#pragma once

#include <optional>
#include <string>
#include <vector>

#include "icce/config.hpp"
#include "icce/eval.hpp"
#include "icce/neighbors.hpp"

namespace icce {

enum class AblationKind { threshold_sweep, head_count_sweep, gt_neighbors };

AblationKind parse_ablation_kind(const std::string& name);
std::string to_string(AblationKind kind);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

/// Metrics of one trained head bank: the lowest-loss head plus mean and
/// (population) standard deviation across all heads.
struct HeadSummary {
  MetricsReport best;
  MeanStd acc, nmi, ari;
};

struct AblationRow {
  std::string setting;  // threshold, head count or neighbor source
  HeadSummary heads;
  std::optional<NeighborStats> neighbors;
  std::optional<MetricsReport> ensemble;
};

struct AblationTable {
  AblationKind kind = AblationKind::threshold_sweep;
  std::vector<AblationRow> rows;

  /// Tab-separated table followed by a key=value block.
  std::string to_text() const;
};

/// Default sweep values: thresholds 1.0, 0.9, ..., 0.1; head counts
/// 10, 20, ..., 80. Ignored for gt_neighbors.
std::vector<double> default_sweep(AblationKind kind);

/// Trains heads for every swept setting against the config's features and
/// ground-truth labels (required). gt_neighbors compares the configured
/// adaptive sets with ground-truth sets; head_count_sweep also reports the
/// consensus of each bank.
AblationTable run_ablation(AblationKind kind, const PipelineConfig& cfg,
                           std::vector<double> values = {});

}  // namespace icce
