#include "icce/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "icce/binary_io.hpp"
#include "icce/error.hpp"

namespace icce {

namespace fs = std::filesystem;

EmbeddingMatrix load_pipeline_features(const PipelineConfig& cfg) {
  const auto format = cfg.features_format.value_or(format_from_extension(cfg.features));
  return load_features(cfg.features, format);
}

NeighborSets compute_neighbors(const PipelineConfig& cfg, const EmbeddingMatrix& features,
                               const std::optional<Labeling>& truth) {
  if (cfg.neighbor_source == NeighborSource::ground_truth) {
    if (!truth) throw ConfigError("ground-truth neighbors need labels");
    return ground_truth_neighbors(*truth);
  }
  if (cfg.neighbor_space == NeighborSpace::standardized) {
    return build_neighbor_sets(apply_standardizer(features, fit_standardizer(features)), cfg.theta,
                               cfg.k_min, cfg.threads);
  }
  return build_neighbor_sets(features, cfg.theta, cfg.k_min, cfg.threads);
}

std::string format_train_report(const TrainReport& report,
                                const std::vector<std::string>& labeling_files) {
  std::string s = "# stage-1 clustering heads\n";
  s += fmt::format("{:>6}  {:>14}\n", "head", "final loss");
  for (std::size_t h = 0; h < report.per_head_loss.size(); ++h) {
    s += fmt::format("{:>6}  {:>14.6f}{}\n", h, report.per_head_loss[h],
                     h == report.best_head ? "  *best" : "");
  }
  s += "\n";
  s += fmt::format("num_heads={}\n", report.per_head_loss.size());
  s += fmt::format("best_head={}\n", report.best_head);
  s += fmt::format("steps={}\n", report.steps);
  for (std::size_t h = 0; h < report.per_head_loss.size(); ++h) {
    s += fmt::format("loss.{}={:.17g}\n", h, report.per_head_loss[h]);
  }
  for (std::size_t h = 0; h < labeling_files.size(); ++h) {
    s += fmt::format("labeling.{}={}\n", h, labeling_files[h]);
  }
  return s;
}

std::vector<fs::path> write_train_outputs(const TrainResult& result, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<fs::path> written;
  std::vector<std::string> names;
  for (std::size_t h = 0; h < result.report.per_head_labeling.size(); ++h) {
    names.push_back(fmt::format("head_{:02}.lbl", h));
  }
  const auto report_path = dir / "train_report.txt";
  {
    std::ofstream out(report_path);
    if (!out) throw Error("cannot write " + report_path.string());
    out << format_train_report(result.report, names);
  }
  written.push_back(report_path);
  const auto bank_path = dir / "heads.hdb";
  save_head_bank(result.bank, bank_path);
  written.push_back(bank_path);
  for (std::size_t h = 0; h < names.size(); ++h) {
    save_labeling(result.report.per_head_labeling[h], dir / names[h]);
    written.push_back(dir / names[h]);
  }
  return written;
}

StoredTrainReport read_train_report(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open train report " + path.string());
  KeyValueConfig kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#' || line.find('=') == std::string::npos) continue;
    kv.apply_override(line);
  }
  StoredTrainReport r;
  const auto heads = kv.get("num_heads");
  const auto best = kv.get("best_head");
  if (!heads || !best) throw LoadError(path.string() + ": missing num_heads/best_head");
  const auto H = parse_uint("num_heads", *heads);
  r.best_head = parse_uint("best_head", *best);
  if (H == 0 || r.best_head >= H) throw LoadError(path.string() + ": best_head out of range");
  for (std::size_t h = 0; h < H; ++h) {
    const auto loss = kv.get(fmt::format("loss.{}", h));
    const auto file = kv.get(fmt::format("labeling.{}", h));
    if (!loss || !file) throw LoadError(path.string() + fmt::format(": head {} incomplete", h));
    r.per_head_loss.push_back(parse_double("loss", *loss));
    fs::path p = *file;
    if (p.is_relative()) p = path.parent_path() / p;
    r.labeling_paths.push_back(p);
    r.labelings.push_back(load_labeling(p));
    if (r.labelings.back().size() != r.labelings.front().size()) {
      throw LoadError(p.string() + ": labeling length differs from head 0");
    }
  }
  return r;
}

ConsensusResult consensus_from_report(const StoredTrainReport& report, std::size_t k) {
  const std::vector<Labeling> extras{report.labelings[report.best_head]};
  return supra_consensus(report.labelings, k, extras);
}

std::string format_anmi_table(const ConsensusResult& r) {
  std::string s = "candidate\tANMI\n";
  for (std::size_t i = 0; i < r.candidates.size(); ++i) {
    const auto name = r.names[i] == "extra0" ? std::string("best_head") : r.names[i];
    s += fmt::format("{}\t{:.6f}{}\n", name, r.anmi[i], i == r.chosen ? "\t*" : "");
  }
  return s;
}

const StageRecord* RunManifest::stage(const std::string& name) const {
  for (const auto& s : stages) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

std::string RunManifest::to_text() const {
  std::string s = "# run manifest\n";
  for (const auto& st : stages) {
    s += fmt::format("stage {} ({:.2f} s)\n", st.name, st.seconds);
    for (std::size_t i = 0; i < st.outputs.size(); ++i) {
      s += fmt::format("  {}  {}\n", st.digests[i], st.outputs[i].string());
    }
    if (st.metrics) {
      s += fmt::format("  ACC {:.2f}%  NMI {:.2f}%  ARI {:.2f}%\n", 100.0 * st.metrics->acc,
                       100.0 * st.metrics->nmi, 100.0 * st.metrics->ari);
    }
  }
  s += "\n";
  s += fmt::format("config_hash={}\nseed={}\nselftrain_rounds={}\n", config_hash, seed,
                   selftrain_rounds);
  for (const auto& st : stages) {
    s += fmt::format("{}.seconds={:.3f}\n", st.name, st.seconds);
    for (std::size_t i = 0; i < st.outputs.size(); ++i) {
      s += fmt::format("{}.output.{}={}\n{}.sha256.{}={}\n", st.name, i, st.outputs[i].string(),
                       st.name, i, st.digests[i]);
    }
    if (st.metrics) {
      s += fmt::format("{}.acc={:.2f}\n{}.nmi={:.2f}\n{}.ari={:.2f}\n", st.name,
                       100.0 * st.metrics->acc, st.name, 100.0 * st.metrics->nmi, st.name,
                       100.0 * st.metrics->ari);
    }
  }
  return s;
}

namespace {

template <typename Fn>
StageRecord run_stage(const std::string& name, Fn&& fn) {
  StageRecord rec;
  rec.name = name;
  const auto start = std::chrono::steady_clock::now();
  try {
    fn(rec);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw Error("stage '" + name + "' failed: " + e.what());
  }
  rec.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (const auto& p : rec.outputs) rec.digests.push_back(io::sha256_file(p));
  return rec;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

}  // namespace

RunManifest run_pipeline(const PipelineConfig& cfg) {
  cfg.validate();
  const auto out = cfg.output_dir;
  fs::create_directories(out);

  RunManifest manifest;
  manifest.config_hash = io::sha256_text(cfg.to_text());
  manifest.seed = cfg.seed;
  write_text(out / "config.txt", cfg.to_text());

  std::optional<Labeling> truth;
  if (cfg.labels) truth = load_labeling(*cfg.labels);
  const bool score = cfg.metrics && truth.has_value();

  // Stage 1: neighbor mining and multi-head training.
  manifest.stages.push_back(run_stage("train", [&](StageRecord& rec) {
    const auto features = load_pipeline_features(cfg);
    if (truth && truth->size() != features.rows()) {
      throw ConfigError("label file has " + std::to_string(truth->size()) + " entries for " +
                        std::to_string(features.rows()) + " samples");
    }
    const auto sets = compute_neighbors(cfg, features, truth);
    save_neighbor_sets(sets, out / "neighbors.nns");
    rec.outputs.push_back(out / "neighbors.nns");
    auto heads_cfg = cfg.heads;
    const auto result = train_heads(features, load_neighbor_sets(out / "neighbors.nns"), heads_cfg);
    for (auto& p : write_train_outputs(result, out)) rec.outputs.push_back(p);
    if (score) rec.metrics = evaluate(result.report.per_head_labeling[result.report.best_head], *truth);
  }));

  // Stage 2: consensus over all head labelings.
  manifest.stages.push_back(run_stage("ensemble", [&](StageRecord& rec) {
    const auto report = read_train_report(out / "train_report.txt");
    const auto consensus = consensus_from_report(report, cfg.target_k());
    save_labeling(consensus.labeling, out / "consensus.lbl");
    write_text(out / "anmi.tsv", format_anmi_table(consensus));
    rec.outputs = {out / "consensus.lbl", out / "anmi.tsv"};
    if (score) rec.metrics = evaluate(consensus.labeling, *truth);
  }));

  // Stage 3: one self-training round, then inference.
  manifest.stages.push_back(run_stage("selftrain", [&](StageRecord& rec) {
    const auto features = load_pipeline_features(cfg);
    const auto pseudo = load_labeling(out / "consensus.lbl");
    const auto clf = self_train(features, pseudo, cfg.selftrain);
    ++manifest.selftrain_rounds;
    save_classifier(clf, out / "classifier.clf");
    const auto pred = predict(load_classifier(out / "classifier.clf"), features);
    save_labeling(pred, out / "predictions.lbl");
    rec.outputs = {out / "classifier.clf", out / "predictions.lbl"};
    if (score) rec.metrics = evaluate(pred, *truth);
  }));

  write_text(out / "manifest.txt", manifest.to_text());
  return manifest;
}

}  // namespace icce
