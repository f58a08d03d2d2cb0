// icce: command-line front end for the three-stage clustering pipeline.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "icce/ablation.hpp"
#include "icce/config.hpp"
#include "icce/ensemble.hpp"
#include "icce/error.hpp"
#include "icce/eval.hpp"
#include "icce/featstore.hpp"
#include "icce/heads.hpp"
#include "icce/labeling.hpp"
#include "icce/neighbors.hpp"
#include "icce/pipeline.hpp"
#include "icce/selftrain.hpp"

namespace fs = std::filesystem;
using namespace icce;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct CommonOptions {
  std::string config;
  std::vector<std::string> sets;
  std::string features;
  std::string labels;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

void add_config_flags(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "Config file (INI-style sections)");
  cmd->add_option("--set", o.sets, "Override, e.g. --set heads.epochs=50")->take_all();
}

void add_data_flags(CLI::App* cmd, CommonOptions& o, bool with_labels) {
  cmd->add_option("--features", o.features, "Feature file (data.features)");
  if (with_labels) cmd->add_option("--labels", o.labels, "Ground-truth labeling (data.labels)");
  cmd->add_option("--seed", o.seed, "run.seed");
  cmd->add_option("--threads", o.threads, "run.threads");
}

KeyValueConfig build_kv(const CommonOptions& o) {
  KeyValueConfig kv;
  if (!o.config.empty()) kv = KeyValueConfig::load(o.config);
  for (const auto& s : o.sets) kv.apply_override(s);
  if (!o.features.empty()) kv.set("data.features", o.features);
  if (!o.labels.empty()) kv.set("data.labels", o.labels);
  if (o.seed) kv.set("run.seed", std::to_string(*o.seed));
  if (o.threads) kv.set("run.threads", std::to_string(*o.threads));
  return kv;
}

PipelineConfig build_config(const CommonOptions& o) {
  auto cfg = PipelineConfig::from(build_kv(o));
  if (!o.out.empty()) cfg.output_dir = o.out;
  return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw Error("cannot write " + path.string());
}

std::optional<Labeling> load_truth(const PipelineConfig& cfg) {
  if (!cfg.labels) return std::nullopt;
  return load_labeling(*cfg.labels);
}

// ---- subcommands ----------------------------------------------------------

struct SynthOptions {
  SynthSpec spec;
  std::string features_out = "synth.fpk";
  std::string labels_out = "synth_labels.lbl";
  std::string format;
};

int cmd_gen_synth(const SynthOptions& o) {
  const auto [features, labels] = gen_synthetic(o.spec);
  const fs::path fpath = o.features_out;
  const fs::path lpath = o.labels_out;
  for (const auto& p : {fpath, lpath}) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
  }
  const auto format = o.format.empty() ? format_from_extension(fpath) : parse_feature_format(o.format);
  if (format == FeatureFormat::csv) {
    save_features_csv(features, fpath);
  } else if (format == FeatureFormat::featpack) {
    save_features(features, fpath, FeatpackDtype::float64);
  } else {
    throw ConfigError("gen-synth writes featpack or csv, not npy");
  }
  if (lpath.extension() == ".txt") save_labeling_text(labels, lpath);
  else save_labeling(labels, lpath);
  std::cout << fmt::format("wrote {} x {} features to {}\n\n", features.rows(), features.cols(),
                           fpath.string());
  std::cout << fmt::format("features={}\nlabels={}\nn={}\nd={}\nk={}\n", fpath.string(),
                           lpath.string(), o.spec.n, o.spec.d, o.spec.k);
  return 0;
}

int cmd_train(const CommonOptions& o, const std::string& neighbors_path) {
  const auto cfg = build_config(o);
  cfg.validate();
  const auto features = load_pipeline_features(cfg);
  const auto truth = load_truth(cfg);
  const auto sets = neighbors_path.empty() ? compute_neighbors(cfg, features, truth)
                                           : load_neighbor_sets(neighbors_path);
  if (sets.size() != features.rows()) {
    throw ConfigError("neighbor file does not match the feature rows");
  }
  const auto result = train_heads(features, sets, cfg.heads);
  const auto paths = write_train_outputs(result, cfg.output_dir);
  std::ifstream report(paths.front());
  std::cout << report.rdbuf();
  if (truth && cfg.metrics) {
    const auto m = evaluate(result.report.per_head_labeling[result.report.best_head], *truth);
    std::cout << format_metrics(m, "best_head.");
  }
  return 0;
}

int cmd_ensemble(const CommonOptions& o, const std::string& report_path, std::size_t k) {
  auto kv = build_kv(o);
  const auto cfg = PipelineConfig::from(kv);
  const fs::path out = o.out.empty() ? cfg.output_dir : fs::path(o.out);
  if (k == 0) k = cfg.target_k();
  if (k < 2) throw ConfigError("ensemble k must be >= 2");
  const auto stored = read_train_report(report_path);
  const auto result = consensus_from_report(stored, k);
  fs::create_directories(out);
  save_labeling(result.labeling, out / "consensus.lbl");
  const auto table = format_anmi_table(result);
  write_file(out / "anmi.tsv", table);
  std::cout << table << "\n";
  std::cout << fmt::format("consensus={}\nchosen={}\nanmi={:.6f}\n",
                           (out / "consensus.lbl").string(), result.names[result.chosen],
                           result.anmi[result.chosen]);
  if (const auto truth = load_truth(cfg); truth && cfg.metrics) {
    std::cout << format_metrics(evaluate(result.labeling, *truth), "consensus.");
  }
  return 0;
}

int cmd_selftrain(const CommonOptions& o, const std::string& pseudo_path, const std::string& model) {
  const auto cfg = build_config(o);
  cfg.validate();
  const auto features = load_pipeline_features(cfg);
  const auto pseudo = load_labeling(pseudo_path);
  if (pseudo.size() != features.rows()) {
    throw ConfigError("pseudo-label count does not match the feature rows");
  }
  const auto clf = self_train(features, pseudo, cfg.selftrain);
  const fs::path path = model.empty() ? cfg.output_dir / "classifier.clf" : fs::path(model);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_classifier(clf, path);
  std::cout << fmt::format("trained linear probe on {} samples, {} classes\n\n", features.rows(),
                           clf.num_classes());
  std::cout << fmt::format("classifier={}\nlr={}\nfinal_loss={:.6f}\n", path.string(), clf.lr,
                           clf.final_loss);
  return 0;
}

int cmd_predict(const CommonOptions& o, const std::string& model, const std::string& out) {
  const auto cfg = build_config(o);
  cfg.validate();
  const auto features = load_pipeline_features(cfg);
  const auto clf = load_classifier(model);
  const auto pred = predict(clf, features);
  const fs::path path = out.empty() ? cfg.output_dir / "predictions.lbl" : fs::path(out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (path.extension() == ".txt") save_labeling_text(pred, path);
  else save_labeling(pred, path);
  std::cout << fmt::format("predicted {} samples\n\n", pred.size());
  std::cout << fmt::format("predictions={}\nclusters={}\n", path.string(), pred.num_clusters());
  if (const auto truth = load_truth(cfg); truth && cfg.metrics) {
    std::cout << format_metrics(evaluate(pred, *truth));
  }
  return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& truth_path) {
  const auto pred = load_labeling(pred_path);
  const auto truth = load_labeling(truth_path);
  std::cout << format_metrics(evaluate(pred, truth));
  return 0;
}

int cmd_pipeline(const CommonOptions& o) {
  const auto cfg = build_config(o);
  const auto manifest = run_pipeline(cfg);
  for (const auto& st : manifest.stages) {
    std::cout << fmt::format("stage {}: {:.2f}s", st.name, st.seconds);
    if (st.metrics) {
      std::cout << fmt::format("  ACC {:.2f}  NMI {:.2f}  ARI {:.2f}", 100.0 * st.metrics->acc,
                               100.0 * st.metrics->nmi, 100.0 * st.metrics->ari);
    }
    std::cout << "\n";
  }
  std::cout << "\n" << manifest.to_text();
  return 0;
}

int cmd_nn_analysis(const CommonOptions& o, std::vector<double> thetas) {
  const auto cfg = build_config(o);
  cfg.validate();
  if (!cfg.labels) throw ConfigError("nn-analysis needs ground-truth labels (data.labels)");
  const auto features = load_pipeline_features(cfg);
  const auto truth = load_labeling(*cfg.labels);
  if (truth.size() != features.rows()) throw ConfigError("label count does not match the feature rows");
  if (thetas.empty()) thetas = default_sweep(AblationKind::threshold_sweep);
  std::string table = "theta\tavg_count\tpair_accuracy\n";
  std::string kv;
  for (std::size_t i = 0; i < thetas.size(); ++i) {
    auto c = cfg;
    c.theta = thetas[i];
    c.neighbor_source = NeighborSource::adaptive;
    const auto stats = neighbor_accuracy(compute_neighbors(c, features, truth), truth);
    table += fmt::format("{:.2f}\t{:.2f}\t{:.4f}\n", thetas[i], stats.avg_count, stats.pair_accuracy);
    kv += fmt::format("theta.{}={}\navg_count.{}={:.2f}\npair_accuracy.{}={:.4f}\n", i, thetas[i], i,
                      stats.avg_count, i, stats.pair_accuracy);
  }
  std::cout << table << "\n" << fmt::format("rows={}\n", thetas.size()) << kv;
  return 0;
}

int cmd_ablate(const CommonOptions& o, const std::string& kind_name, const std::vector<double>& values) {
  const auto kv = build_kv(o);
  auto cfg = PipelineConfig::from(kv);
  if (!o.out.empty()) cfg.output_dir = o.out;
  std::string name = kind_name;
  if (name.empty()) {
    const auto k = kv.get("ablate.kind");
    if (!k) throw ConfigError("ablate needs --kind or ablate.kind");
    name = *k;
  }
  const auto kind = parse_ablation_kind(name);
  auto sweep = values;
  if (sweep.empty()) {
    if (const auto v = kv.get("ablate.values")) sweep = parse_double_list("ablate.values", *v);
  }
  const auto table = run_ablation(kind, cfg, sweep);
  std::cout << table.to_text();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"icce: multi-head clustering, cluster ensembles and self-training over embeddings"};
  app.require_subcommand(1);

  CommonOptions common;

  SynthOptions synth;
  auto* gen = app.add_subcommand("gen-synth", "Write Gaussian-blob features and labels");
  gen->add_option("--n", synth.spec.n, "Samples")->capture_default_str();
  gen->add_option("--d", synth.spec.d, "Dimensions")->capture_default_str();
  gen->add_option("--k", synth.spec.k, "Clusters")->capture_default_str();
  gen->add_option("--separation", synth.spec.separation, "Center separation")->capture_default_str();
  gen->add_option("--seed", synth.spec.seed, "Seed")->capture_default_str();
  gen->add_option("--out", synth.features_out, "Feature file (.fpk or .csv)")->capture_default_str();
  gen->add_option("--labels-out", synth.labels_out, "Label file (.lbl or .txt)")->capture_default_str();
  gen->add_option("--format", synth.format, "featpack or csv (default: from extension)");

  std::string neighbors_path;
  auto* train = app.add_subcommand("train", "Stage 1: train the clustering heads");
  add_config_flags(train, common);
  add_data_flags(train, common, true);
  train->add_option("--neighbors", neighbors_path, "Precomputed neighbor file (NNS1)");
  train->add_option("--out-dir", common.out, "Output directory (data.output_dir)");

  std::string report_path;
  std::size_t ensemble_k = 0;
  auto* ens = app.add_subcommand("ensemble", "Stage 2: consensus over a train report");
  add_config_flags(ens, common);
  ens->add_option("--report", report_path, "train_report.txt")->required();
  ens->add_option("--k", ensemble_k, "Target cluster count (ensemble.k)");
  ens->add_option("--labels", common.labels, "Ground-truth labeling for metrics");
  ens->add_option("--out-dir", common.out, "Output directory");

  std::string pseudo_path, model_path;
  auto* st = app.add_subcommand("selftrain", "Stage 3: fit a classifier to pseudo-labels");
  add_config_flags(st, common);
  add_data_flags(st, common, false);
  st->add_option("--pseudo", pseudo_path, "Pseudo-label file")->required();
  st->add_option("--model", model_path, "Classifier output (default <out-dir>/classifier.clf)");
  st->add_option("--out-dir", common.out, "Output directory");

  std::string predict_out;
  auto* pr = app.add_subcommand("predict", "Label features with a trained classifier");
  add_config_flags(pr, common);
  add_data_flags(pr, common, true);
  pr->add_option("--model", model_path, "Classifier file")->required();
  pr->add_option("--out", predict_out, "Labeling output (.lbl or .txt)");

  std::string pred_path, truth_path;
  auto* ev = app.add_subcommand("eval", "Compare a labeling against ground truth");
  ev->add_option("--pred", pred_path, "Predicted labeling")->required();
  ev->add_option("--truth", truth_path, "Ground-truth labeling")->required();

  auto* pipe = app.add_subcommand("pipeline", "Run all three stages");
  add_config_flags(pipe, common);
  add_data_flags(pipe, common, true);
  pipe->add_option("--out-dir", common.out, "Output directory");

  std::vector<double> thetas;
  auto* nn = app.add_subcommand("nn-analysis", "Neighbor count and accuracy per threshold");
  add_config_flags(nn, common);
  add_data_flags(nn, common, true);
  nn->add_option("--thetas", thetas, "Thresholds (default 1.0 down to 0.1)")->delimiter(',');

  std::string ablate_kind;
  std::vector<double> ablate_values;
  auto* ab = app.add_subcommand("ablate", "Threshold, head-count or ground-truth-neighbor sweeps");
  add_config_flags(ab, common);
  add_data_flags(ab, common, true);
  ab->add_option("--kind", ablate_kind, "threshold_sweep, head_count_sweep or gt_neighbors");
  ab->add_option("--values", ablate_values, "Swept values")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*gen) return cmd_gen_synth(synth);
    if (*train) return cmd_train(common, neighbors_path);
    if (*ens) return cmd_ensemble(common, report_path, ensemble_k);
    if (*st) return cmd_selftrain(common, pseudo_path, model_path);
    if (*pr) return cmd_predict(common, model_path, predict_out);
    if (*ev) return cmd_eval(pred_path, truth_path);
    if (*pipe) return cmd_pipeline(common);
    if (*nn) return cmd_nn_analysis(common, thetas);
    if (*ab) return cmd_ablate(common, ablate_kind, ablate_values);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
