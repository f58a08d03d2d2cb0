#include "icce/ablation.hpp"

#include <cmath>

#include <fmt/format.h>

#include "icce/ensemble.hpp"
#include "icce/error.hpp"
#include "icce/heads.hpp"
#include "icce/pipeline.hpp"

namespace icce {

AblationKind parse_ablation_kind(const std::string& name) {
  if (name == "threshold_sweep") return AblationKind::threshold_sweep;
  if (name == "head_count_sweep") return AblationKind::head_count_sweep;
  if (name == "gt_neighbors") return AblationKind::gt_neighbors;
  throw ConfigError("unknown ablation kind '" + name +
                    "' (threshold_sweep, head_count_sweep, gt_neighbors)");
}

std::string to_string(AblationKind kind) {
  switch (kind) {
    case AblationKind::threshold_sweep:
      return "threshold_sweep";
    case AblationKind::head_count_sweep:
      return "head_count_sweep";
    case AblationKind::gt_neighbors:
      return "gt_neighbors";
  }
  return "?";
}

std::vector<double> default_sweep(AblationKind kind) {
  std::vector<double> v;
  if (kind == AblationKind::threshold_sweep) {
    for (int i = 10; i >= 1; --i) v.push_back(i / 10.0);
  } else if (kind == AblationKind::head_count_sweep) {
    for (int h = 10; h <= 80; h += 10) v.push_back(h);
  }
  return v;
}

namespace {

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd r;
  for (const double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  for (const double x : xs) r.std += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(r.std / static_cast<double>(xs.size()));
  return r;
}

HeadSummary summarize(const TrainReport& report, const Labeling& truth) {
  HeadSummary s;
  std::vector<double> acc, nmi_v, ari_v;
  for (const auto& l : report.per_head_labeling) {
    const auto m = evaluate(l, truth);
    acc.push_back(m.acc);
    nmi_v.push_back(m.nmi);
    ari_v.push_back(m.ari);
  }
  s.best = evaluate(report.per_head_labeling[report.best_head], truth);
  s.acc = mean_std(acc);
  s.nmi = mean_std(nmi_v);
  s.ari = mean_std(ari_v);
  return s;
}

std::string pct(double v) { return fmt::format("{:.2f}", 100.0 * v); }
std::string pct(const MeanStd& v) {
  return fmt::format("{:.2f}±{:.2f}", 100.0 * v.mean, 100.0 * v.std);
}

}  // namespace

AblationTable run_ablation(AblationKind kind, const PipelineConfig& cfg,
                           std::vector<double> values) {
  cfg.validate();
  if (!cfg.labels) throw ConfigError("ablations need ground-truth labels (data.labels)");
  const auto features = load_pipeline_features(cfg);
  const auto truth = load_labeling(*cfg.labels);
  if (truth.size() != features.rows()) {
    throw ConfigError("label count does not match the feature rows");
  }
  if (values.empty()) values = default_sweep(kind);

  AblationTable table;
  table.kind = kind;

  auto train_row = [&](const std::string& setting, const NeighborSets& sets,
                       const TrainConfig& tc, bool with_ensemble) {
    AblationRow row;
    row.setting = setting;
    const auto result = train_heads(features, sets, tc);
    row.heads = summarize(result.report, truth);
    row.neighbors = neighbor_accuracy(sets, truth);
    if (with_ensemble) {
      const std::vector<Labeling> extras{result.report.per_head_labeling[result.report.best_head]};
      const auto c = supra_consensus(result.report.per_head_labeling, cfg.target_k(), extras);
      row.ensemble = evaluate(c.labeling, truth);
    }
    table.rows.push_back(std::move(row));
  };

  switch (kind) {
    case AblationKind::threshold_sweep:
      for (const double theta : values) {
        auto c = cfg;
        c.theta = theta;
        c.neighbor_source = NeighborSource::adaptive;
        train_row(fmt::format("{:.1f}", theta), compute_neighbors(c, features, truth), c.heads,
                  false);
      }
      break;
    case AblationKind::head_count_sweep: {
      const auto sets = compute_neighbors(cfg, features, truth);
      for (const double h : values) {
        if (!(h >= 1.0) || h != std::floor(h)) throw ConfigError("head counts must be integers >= 1");
        auto tc = cfg.heads;
        tc.num_heads = static_cast<std::size_t>(h);
        train_row(std::to_string(tc.num_heads), sets, tc, true);
      }
      break;
    }
    case AblationKind::gt_neighbors: {
      auto adaptive = cfg;
      adaptive.neighbor_source = NeighborSource::adaptive;
      train_row("adaptive", compute_neighbors(adaptive, features, truth), cfg.heads, false);
      train_row("ground_truth", ground_truth_neighbors(truth), cfg.heads, false);
      break;
    }
  }
  return table;
}

std::string AblationTable::to_text() const {
  std::string s;
  const bool ens = kind == AblationKind::head_count_sweep;
  const char* first = kind == AblationKind::threshold_sweep   ? "threshold"
                      : kind == AblationKind::head_count_sweep ? "heads"
                                                               : "neighbors";
  s += fmt::format("{}\tbest_nmi\tbest_acc\tbest_ari\tnmi\tacc\tari", first);
  s += ens ? "\tens_nmi\tens_acc\tens_ari\n" : "\tavg_nn_count\tnn_acc\n";
  for (const auto& r : rows) {
    s += fmt::format("{}\t{}\t{}\t{}\t{}\t{}\t{}", r.setting, pct(r.heads.best.nmi),
                     pct(r.heads.best.acc), pct(r.heads.best.ari), pct(r.heads.nmi),
                     pct(r.heads.acc), pct(r.heads.ari));
    if (ens && r.ensemble) {
      s += fmt::format("\t{}\t{}\t{}\n", pct(r.ensemble->nmi), pct(r.ensemble->acc),
                       pct(r.ensemble->ari));
    } else if (r.neighbors) {
      s += fmt::format("\t{:.1f}\t{}\n", r.neighbors->avg_count, pct(r.neighbors->pair_accuracy));
    } else {
      s += "\n";
    }
  }
  s += "\n";
  s += fmt::format("kind={}\nrows={}\n", to_string(kind), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    s += fmt::format("row.{}.setting={}\nrow.{}.best_acc={}\nrow.{}.mean_acc={:.2f}\n", i,
                     r.setting, i, pct(r.heads.best.acc), i, 100.0 * r.heads.acc.mean);
    if (r.neighbors) {
      s += fmt::format("row.{}.avg_nn_count={:.2f}\nrow.{}.nn_acc={}\n", i, r.neighbors->avg_count,
                       i, pct(r.neighbors->pair_accuracy));
    }
    if (r.ensemble) s += fmt::format("row.{}.ens_acc={}\n", i, pct(r.ensemble->acc));
  }
  return s;
}

}  // namespace icce
