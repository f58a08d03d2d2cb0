#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <gtest/gtest.h>

#include "icce/ablation.hpp"
#include "icce/binary_io.hpp"
#include "icce/error.hpp"
#include "icce/eval.hpp"
#include "icce/pipeline.hpp"
#include "test_util.hpp"

using namespace icce;
namespace fs = std::filesystem;

namespace {

const std::string kCli = ICCE_CLI_PATH;

struct Fixture {
  icce::test::TempDir tmp;
  PipelineConfig cfg;

  Fixture() {
    const auto [x, y] = gen_synthetic({.n = 300, .d = 16, .k = 3, .separation = 20.0, .seed = 2});
    save_features(x, tmp / "x.fpk");
    save_labeling(y, tmp / "y.lbl");
    write_config(tmp / "run.cfg", (tmp / "out").string());
    cfg = PipelineConfig::from(KeyValueConfig::load(tmp / "run.cfg"));
  }

  void write_config(const fs::path& path, const std::string& out_dir) const {
    std::ofstream f(path);
    f << "[data]\nfeatures = " << (tmp / "x.fpk").string() << "\nlabels = "
      << (tmp / "y.lbl").string() << "\noutput_dir = " << out_dir << "\n"
      << "[run]\nseed = 3\n[neighbors]\nk_min = 10\n"
      << "[heads]\nnum_heads = 3\nnum_clusters = 3\nepochs = 8\nwarmup_epochs = 1\n"
      << "batch_size = 64\nlr = 0.001\n"
      << "[selftrain]\nsteps = 200\nbatch_size = 64\n";
  }
};

struct Run {
  int code;
  std::string out;
};

Run run_cli(const std::string& args, const fs::path& dir) {
  const auto log = dir / "cli.log";
  const int status = std::system((kCli + " " + args + " > " + log.string() + " 2>&1").c_str());
  std::ifstream f(log);
  std::stringstream ss;
  ss << f.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string fmt_pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

std::string value_of(const std::string& text, const std::string& key) {
  const auto pos = text.find("\n" + key + "=");
  if (pos == std::string::npos) return {};
  const auto start = pos + key.size() + 2;
  return text.substr(start, text.find('\n', start) - start);
}

}  // namespace

TEST(Pipeline, RunsThreeStagesWithVerifiableManifest) {
  Fixture fx;
  const auto m = run_pipeline(fx.cfg);
  ASSERT_EQ(m.stages.size(), 3u);
  EXPECT_EQ(m.stages[0].name, "train");
  EXPECT_EQ(m.stages[1].name, "ensemble");
  EXPECT_EQ(m.stages[2].name, "selftrain");
  EXPECT_EQ(m.selftrain_rounds, 1u);
  for (const auto& st : m.stages) {
    ASSERT_TRUE(st.metrics.has_value()) << st.name;
    EXPECT_GE(st.metrics->acc, 0.95) << st.name;
    for (std::size_t i = 0; i < st.outputs.size(); ++i) {
      ASSERT_TRUE(fs::exists(st.outputs[i]));
      EXPECT_EQ(io::sha256_file(st.outputs[i]), st.digests[i]);
    }
  }
  EXPECT_TRUE(fs::exists(fx.tmp / "out" / "manifest.txt"));
  const auto pred = load_labeling(fx.tmp / "out" / "predictions.lbl");
  EXPECT_EQ(evaluate(pred, load_labeling(fx.tmp / "y.lbl")).acc, m.stages[2].metrics->acc);
}

TEST(Pipeline, RerunIsBitIdentical) {
  Fixture fx;
  const auto a = run_pipeline(fx.cfg);
  auto cfg_b = fx.cfg;
  cfg_b.output_dir = fx.tmp / "out_b";
  const auto b = run_pipeline(cfg_b);
  for (std::size_t s = 0; s < 3; ++s) EXPECT_EQ(a.stages[s].digests, b.stages[s].digests);
  const auto c = run_pipeline(fx.cfg);
  EXPECT_EQ(a.config_hash, c.config_hash);
}

TEST(Pipeline, MissingFeaturesFailBeforeAnyStage) {
  Fixture fx;
  fx.cfg.features = fx.tmp / "gone.fpk";
  EXPECT_THROW(run_pipeline(fx.cfg), ConfigError);
  EXPECT_FALSE(fs::exists(fx.tmp / "out"));
}

TEST(Pipeline, StageFailureNamesStageAndKeepsEarlierOutputs) {
  Fixture fx;
  fx.cfg.ensemble_k = 1000;  // more clusters than samples
  try {
    run_pipeline(fx.cfg);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("ensemble"), std::string::npos) << e.what();
  }
  EXPECT_TRUE(fs::exists(fx.tmp / "out" / "heads.hdb"));
  EXPECT_TRUE(fs::exists(fx.tmp / "out" / "train_report.txt"));
  EXPECT_FALSE(fs::exists(fx.tmp / "out" / "consensus.lbl"));
}

TEST(Pipeline, TrainReportRoundTrip) {
  Fixture fx;
  run_pipeline(fx.cfg);
  const auto r = read_train_report(fx.tmp / "out" / "train_report.txt");
  ASSERT_EQ(r.labelings.size(), 3u);
  const auto bank = load_head_bank(fx.tmp / "out" / "heads.hdb");
  const auto x = load_features(fx.tmp / "x.fpk", FeatureFormat::featpack);
  for (std::size_t h = 0; h < 3; ++h) EXPECT_EQ(r.labelings[h], predict_labeling(bank, h, x));
  EXPECT_EQ(r.best_head, select_best_head(r.per_head_loss));
}

TEST(Cli, StagesReproducePipelineFromFiles) {
  Fixture fx;
  run_pipeline(fx.cfg);
  const auto out = fx.tmp / "out";
  const auto cli = fx.tmp / "cli";
  const std::string cfg = " --config " + (fx.tmp / "run.cfg").string();

  auto r = run_cli("train" + cfg + " --out-dir " + cli.string() + " --neighbors " +
                       (out / "neighbors.nns").string(), fx.tmp.path());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(io::sha256_file(cli / "heads.hdb"), io::sha256_file(out / "heads.hdb"));
  EXPECT_FALSE(value_of(r.out, "best_head").empty()) << r.out;

  r = run_cli("ensemble" + cfg + " --report " + (out / "train_report.txt").string() +
                  " --out-dir " + cli.string(), fx.tmp.path());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(load_labeling(cli / "consensus.lbl"), load_labeling(out / "consensus.lbl"));
  EXPECT_NE(r.out.find("cspa\t"), std::string::npos) << r.out;

  r = run_cli("selftrain" + cfg + " --pseudo " + (out / "consensus.lbl").string() + " --model " +
                  (cli / "c.clf").string(), fx.tmp.path());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(io::sha256_file(cli / "c.clf"), io::sha256_file(out / "classifier.clf"));

  r = run_cli("predict" + cfg + " --model " + (cli / "c.clf").string() + " --out " +
                  (cli / "p.txt").string(), fx.tmp.path());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(load_labeling(cli / "p.txt"), load_labeling(out / "predictions.lbl"));
}

TEST(Cli, EvalMatchesLibraryToTwoDecimals) {
  Fixture fx;
  const Labeling pred{1, 1, 2, 2, 2, 3}, truth{1, 1, 1, 2, 2, 3};
  save_labeling_text(pred, fx.tmp / "p.txt");
  save_labeling(truth, fx.tmp / "t.lbl");
  const auto r = run_cli("eval --pred " + (fx.tmp / "p.txt").string() + " --truth " +
                             (fx.tmp / "t.lbl").string(), fx.tmp.path());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto m = evaluate(pred, truth);
  EXPECT_EQ(value_of(r.out, "acc"), fmt_pct(m.acc));
  EXPECT_EQ(value_of(r.out, "nmi"), fmt_pct(m.nmi));
  EXPECT_EQ(value_of(r.out, "ari"), fmt_pct(m.ari));
}

TEST(Cli, ExitCodes) {
  Fixture fx;
  EXPECT_EQ(run_cli("", fx.tmp.path()).code, 1);
  EXPECT_EQ(run_cli("frobnicate", fx.tmp.path()).code, 1);
  EXPECT_EQ(run_cli("eval --pred x", fx.tmp.path()).code, 1);
  EXPECT_EQ(run_cli("pipeline --features " + (fx.tmp / "nope.fpk").string(), fx.tmp.path()).code, 1);
  EXPECT_EQ(run_cli("pipeline --config " + (fx.tmp / "run.cfg").string() + " --set heads.bogus=1",
                    fx.tmp.path()).code,
            1);
  icce::test::write_text(fx.tmp / "junk.lbl", "LBL1garbage");
  EXPECT_EQ(run_cli("eval --pred " + (fx.tmp / "junk.lbl").string() + " --truth " +
                        (fx.tmp / "y.lbl").string(), fx.tmp.path()).code,
            2);
  EXPECT_EQ(run_cli("--help", fx.tmp.path()).code, 0);
}

TEST(Cli, GenSynthThenPipeline) {
  Fixture fx;
  auto r = run_cli("gen-synth --n 200 --d 8 --k 2 --seed 1 --out " + (fx.tmp / "s.csv").string() +
                       " --labels-out " + (fx.tmp / "s.txt").string(), fx.tmp.path());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto [x, y] = gen_synthetic({.n = 200, .d = 8, .k = 2, .separation = 20.0, .seed = 1});
  EXPECT_EQ(load_features(fx.tmp / "s.csv", FeatureFormat::csv).data(), x.data());
  EXPECT_EQ(load_labeling(fx.tmp / "s.txt"), y);

  r = run_cli("pipeline --config " + (fx.tmp / "run.cfg").string() + " --features " +
                  (fx.tmp / "s.csv").string() + " --labels " + (fx.tmp / "s.txt").string() +
                  " --set heads.num_clusters=2 --out-dir " + (fx.tmp / "p").string(),
              fx.tmp.path());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(value_of(r.out, "selftrain_rounds"), "1");
  EXPECT_EQ(value_of(r.out, "selftrain.acc"), "100.00") << r.out;
}

TEST(Cli, NnAnalysisTable) {
  Fixture fx;
  const auto r = run_cli("nn-analysis --config " + (fx.tmp / "run.cfg").string() +
                             " --thetas 1.0,0.5,0.1", fx.tmp.path());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out.rfind("theta\tavg_count\tpair_accuracy\n1.00\t10.00\t", 0), 0u) << r.out;
  EXPECT_EQ(value_of(r.out, "rows"), "3");
  EXPECT_LE(std::stod(value_of(r.out, "avg_count.0")), std::stod(value_of(r.out, "avg_count.2")));
}

TEST(Ablation, ThresholdSweepIsMonotone) {
  Fixture fx;
  const auto t = run_ablation(AblationKind::threshold_sweep, fx.cfg, {1.0, 0.6, 0.3});
  ASSERT_EQ(t.rows.size(), 3u);
  EXPECT_EQ(t.rows[0].neighbors->avg_count, 10.0);
  for (std::size_t i = 1; i < 3; ++i) {
    EXPECT_GE(t.rows[i].neighbors->avg_count, t.rows[i - 1].neighbors->avg_count);
  }
  EXPECT_NE(t.to_text().find("threshold\tbest_nmi"), std::string::npos);
}

TEST(Ablation, HeadCountSweepReportsSpread) {
  Fixture fx;
  fx.cfg.heads.epochs = 2;
  const auto t = run_ablation(AblationKind::head_count_sweep, fx.cfg, {2, 5});
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[1].setting, "5");
  EXPECT_TRUE(t.rows[0].ensemble.has_value());
  EXPECT_GE(t.rows[1].heads.acc.std, 0.0);
  EXPECT_THROW(run_ablation(AblationKind::head_count_sweep, fx.cfg, {2.5}), ConfigError);
}

TEST(Ablation, GroundTruthNeighborsAreExact) {
  Fixture fx;
  const auto t = run_ablation(AblationKind::gt_neighbors, fx.cfg);
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[1].setting, "ground_truth");
  EXPECT_EQ(t.rows[1].neighbors->pair_accuracy, 1.0);
  EXPECT_GE(t.rows[1].heads.best.acc, t.rows[0].heads.best.acc);
  fx.cfg.labels.reset();
  EXPECT_THROW(run_ablation(AblationKind::gt_neighbors, fx.cfg), ConfigError);
}
