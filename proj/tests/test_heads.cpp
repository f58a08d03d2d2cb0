#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "grad_check.hpp"
#include "icce/error.hpp"
#include "icce/eval.hpp"
#include "icce/heads.hpp"
#include "icce/heads_loss.hpp"
#include "icce/neighbors.hpp"
#include "test_util.hpp"

using namespace icce;

namespace {

ProbVector vec(std::initializer_list<double> v) {
  ProbVector p(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) p[i++] = x;
  return p;
}

ProbVector one_hot(Eigen::Index c, Eigen::Index k) {
  ProbVector p = ProbVector::Zero(k);
  p[c] = 1;
  return p;
}

double column_deviation(const RowMatrix& q) {
  const double target = static_cast<double>(q.rows()) / static_cast<double>(q.cols());
  return (q.colwise().sum().array() - target).abs().maxCoeff();
}

NormStats identity_norm(std::size_t d) {
  NormStats s;
  s.mean = Eigen::VectorXd::Zero(d);
  s.var = Eigen::VectorXd::Ones(d);
  s.gamma = Eigen::VectorXd::Ones(d);
  s.beta = Eigen::VectorXd::Zero(d);
  return s;
}

}  // namespace

TEST(HeadForward, ZeroParamsGiveUniform) {
  HeadParams h{RowMatrix::Zero(4, 3), Eigen::VectorXd::Zero(4)};
  const std::vector<double> z{1, -2, 3};
  const auto q = head_forward(h, identity_norm(3), z, 0.1);
  for (Eigen::Index c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(q[c], 0.25);
}

TEST(HeadForward, MatchesLogSumExpOracle) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    HeadParams h{icce::test::random_matrix(4, 5, rng), icce::test::random_matrix(4, 1, rng).col(0)};
    NormStats s = identity_norm(5);
    s.mean = icce::test::random_matrix(5, 1, rng).col(0);
    s.var = icce::test::random_matrix(5, 1, rng).col(0).cwiseAbs().array() + 0.5;
    s.gamma = icce::test::random_matrix(5, 1, rng).col(0);
    s.beta = icce::test::random_matrix(5, 1, rng).col(0);
    std::vector<double> z(5);
    for (auto& v : z) v = std::normal_distribution<double>()(rng);
    const double tau = 0.3;
    std::vector<long double> logits(4);
    for (int c = 0; c < 4; ++c) {
      long double acc = h.bias[c];
      for (int j = 0; j < 5; ++j) {
        acc += h.weight(c, j) *
               ((z[j] - s.mean[j]) / std::sqrt((long double)s.var[j]) * s.gamma[j] + s.beta[j]);
      }
      logits[c] = acc / tau;
    }
    long double mx = *std::max_element(logits.begin(), logits.end()), lse = 0;
    for (auto l : logits) lse += std::exp(l - mx);
    const auto q = head_forward(h, s, z, tau);
    EXPECT_NEAR(q.sum(), 1.0, 1e-9);
    for (int c = 0; c < 4; ++c) EXPECT_NEAR(q[c], (double)(std::exp(logits[c] - mx) / lse), 1e-10);
  }
}

TEST(HeadForward, LowTemperatureApproachesOneHot) {
  HeadParams h{RowMatrix::Zero(3, 2), vec({0.1, 0.5, 0.2})};
  const auto q = head_forward(h, identity_norm(2), std::vector<double>{0, 0}, 1e-3);
  EXPECT_GE(q[1], 0.999);
}

TEST(HeadForward, NonFiniteLogitsThrow) {
  HeadParams h{RowMatrix::Constant(2, 1, 1e308), Eigen::VectorXd::Zero(2)};
  EXPECT_THROW(head_forward(h, identity_norm(1), std::vector<double>{1e10}, 1e-3), TrainingError);
}

TEST(Sinkhorn, ZeroItersIsRowSoftmax) {
  std::mt19937_64 rng(2);
  const RowMatrix s = icce::test::random_matrix(6, 3, rng, 3.0);
  const auto q = sinkhorn_knopp(s, 0);
  for (Eigen::Index i = 0; i < 6; ++i) {
    EXPECT_LE((q.row(i).transpose() - softmax(s.row(i).transpose())).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Sinkhorn, UniformIsFixedPoint) {
  const auto q = sinkhorn_knopp(RowMatrix::Constant(8, 4, 0.7), 5);
  EXPECT_LE((q.array() - 0.25).abs().maxCoeff(), 1e-15);
}

TEST(Sinkhorn, ConvergesAndImproves) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const RowMatrix s = icce::test::random_matrix(64, 10, rng, 2.0);
    const auto q50 = sinkhorn_knopp(s, 50);
    EXPECT_LE(column_deviation(q50), 1e-6);
    EXPECT_LE((q50.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
    EXPECT_LT(column_deviation(sinkhorn_knopp(s, 3)), column_deviation(sinkhorn_knopp(s, 0)));
  }
}

TEST(Sinkhorn, LargeLogitsStayFinite) {
  RowMatrix s(2, 2);
  s << 1000, -1000, -1000, 1000;
  EXPECT_TRUE(sinkhorn_knopp(s, 3).allFinite());
}

TEST(TemiPairLoss, HandValues) {
  const auto oh = one_hot(3, 10);
  const ProbVector uni10 = ProbVector::Constant(10, 0.1);
  EXPECT_NEAR(temi_pair_loss(oh, oh, oh, oh, uni10, 1.0), -std::log(10.0), 1e-12);
  EXPECT_EQ(temi_pair_loss(oh, oh, one_hot(2, 10), oh, uni10, 0.6), 0.0);
  const ProbVector u4 = ProbVector::Constant(4, 0.25);
  EXPECT_NEAR(temi_pair_loss(u4, u4, u4, u4, u4, 1.0), 0.0, 1e-15);
  ProbVector bad = u4;
  bad[0] = 0;
  EXPECT_THROW(temi_pair_loss(u4, u4, u4, u4, bad, 1.0), Error);
}

TEST(CeTerm, HandValuesAndTies) {
  EXPECT_NEAR(ce_term(ProbVector::Constant(4, 0.25), one_hot(2, 4)), std::log(4.0), 1e-15);
  EXPECT_EQ(ce_term(one_hot(1, 3), one_hot(1, 3)), 0.0);
  // Uniform teacher: the tie resolves to class 0.
  EXPECT_NEAR(ce_term(vec({0.5, 0.25, 0.25}), ProbVector::Constant(3, 1.0 / 3)), std::log(2.0), 1e-15);
  EXPECT_NEAR(ce_term(one_hot(1, 3), one_hot(0, 3)), -std::log(1e-12), 1e-9);
}

TEST(LambdaSchedule, Endpoints) {
  EXPECT_EQ(lambda_schedule(0, 100, 0.5), 0.0);
  EXPECT_EQ(lambda_schedule(100, 100, 0.5), 0.5);
  EXPECT_NEAR(lambda_schedule(50, 100, 0.5), 0.25, 1e-15);
  double prev = 0;
  for (std::size_t s = 0; s <= 100; ++s) {
    EXPECT_GE(lambda_schedule(s, 100, 0.5), prev);
    prev = lambda_schedule(s, 100, 0.5);
  }
}

TEST(SmoothTeacher, Means) {
  const std::vector<ProbVector> one{vec({0.2, 0.8})};
  EXPECT_EQ(smooth_teacher(one), one[0]);
  const std::vector<ProbVector> two{one_hot(0, 3), one_hot(2, 3)};
  EXPECT_EQ(smooth_teacher(two), vec({0.5, 0, 0.5}));
  EXPECT_THROW(smooth_teacher(std::span<const ProbVector>{}), Error);
}

TEST(Ema, Endpoints) {
  Eigen::ArrayXd t = Eigen::ArrayXd::Zero(3), s = Eigen::ArrayXd::Ones(3);
  ema_update(t, s, 1.0);
  EXPECT_EQ(t.abs().maxCoeff(), 0.0);
  ema_update(t, s, 0.996);
  EXPECT_NEAR(t[0], 0.004, 1e-15);
  ema_update(t, s, 0.0);
  EXPECT_EQ(t[1], 1.0);
  HeadParams a{RowMatrix::Zero(2, 2), Eigen::VectorXd::Zero(2)};
  HeadParams b{RowMatrix::Ones(2, 3), Eigen::VectorXd::Ones(2)};
  EXPECT_THROW(ema_update(a, b, 0.5), Error);
}

TEST(CompositeLoss, MatchesPairwiseOracle) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    auto inst = icce::test::random_loss_instance(rng);
    const auto& st = inst.settings;
    const auto m = static_cast<Eigen::Index>(st.smoothing_m);
    const auto res = composite_loss(inst.params, inst.anchors, inst.batches, st);
    double mean = 0;
    for (std::size_t h = 0; h < inst.params.heads.size(); ++h) {
      const auto& hp = inst.params.heads[h];
      const auto& hb = inst.batches[h];
      auto student = [&](const Eigen::RowVectorXd& raw) {
        const Eigen::VectorXd z = raw.transpose().cwiseProduct(inst.params.gamma) + inst.params.beta;
        return softmax(hp.weight * z + hp.bias, st.tau_student);
      };
      double sum = 0;
      for (Eigen::Index i = 0; i < inst.anchors.rows(); ++i) {
        const ProbVector qs_x = student(inst.anchors.row(i));
        const ProbVector qt_x = hb.teacher_anchor.row(i).transpose();
        std::vector<ProbVector> draws;
        for (Eigen::Index j = 0; j < m; ++j) draws.push_back(hb.teacher_neighbor.row(i * m + j).transpose());
        const ProbVector qt_bar = smooth_teacher(draws);
        double term;
        if (m == 1) {
          term = temi_pair_loss(qs_x, student(hb.neighbors.row(i)), qt_x, qt_bar, hb.marginal, st.beta);
        } else {
          // Smoothed form: first half against the averaged teacher, partner
          // half averaged over the draws.
          const double w = qt_x.dot(qt_bar);
          auto inner = [&](const ProbVector& qs, const ProbVector& qt) {
            return std::log(((qs.array() * qt.array()).pow(st.beta) / hb.marginal.array()).sum());
          };
          double partner = 0;
          for (Eigen::Index j = 0; j < m; ++j) partner += inner(student(hb.neighbors.row(i * m + j)), qt_x);
          term = -w / 2 * (inner(qs_x, qt_bar) + partner / static_cast<double>(m));
        }
        sum += term + st.lambda * ce_term(qs_x, qt_bar);
      }
      const double head_mean = sum / static_cast<double>(inst.anchors.rows());
      EXPECT_NEAR(res.per_head[h], head_mean, 1e-10);
      mean += head_mean;
    }
    EXPECT_NEAR(res.loss, mean / static_cast<double>(inst.params.heads.size()), 1e-10);
  }
}

TEST(CompositeLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 40; ++trial) {
    EXPECT_LE(icce::test::composite_gradient_error(icce::test::random_loss_instance(rng)), 1e-4)
        << "trial " << trial;
  }
}

TEST(CompositeLoss, ThreadCountDoesNotChangeResult) {
  std::mt19937_64 rng(4);
  auto inst = icce::test::random_loss_instance(rng);
  const auto a = composite_loss(inst.params, inst.anchors, inst.batches, inst.settings, 1);
  const auto b = composite_loss(inst.params, inst.anchors, inst.batches, inst.settings, 3);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.grad.gamma, b.grad.gamma);
}

TEST(TrainConfig, ValidationRejectsBadValues) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.num_clusters = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.beta = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.teacher_momentum = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(SelectBestHead, LowestLossLowestIndex) {
  EXPECT_EQ(select_best_head({0.5, -1.0, -1.0, 2.0}), 1u);
  EXPECT_EQ(select_best_head({3.0}), 0u);
}

namespace {

struct SmallRun {
  EmbeddingMatrix x;
  Labeling y;
  NeighborSets sets;
  TrainConfig cfg;
};

SmallRun small_run(std::size_t epochs) {
  auto [x, y] = gen_synthetic({.n = 300, .d = 16, .k = 3, .separation = 20.0, .seed = 3});
  auto cfg = TrainConfig::desk_scale(3);
  cfg.num_heads = 3;
  cfg.epochs = epochs;
  cfg.warmup_epochs = std::min<std::size_t>(2, epochs);
  cfg.batch_size = 64;
  cfg.seed = 17;
  auto sets = build_neighbor_sets(x, 0.3, 10);
  return {std::move(x), std::move(y), std::move(sets), cfg};
}

}  // namespace

TEST(TrainHeads, RecoversSeparatedBlobs) {
  auto r = small_run(15);
  const auto res = train_heads(r.x, r.sets, r.cfg);
  ASSERT_EQ(res.report.per_head_labeling.size(), 3u);
  EXPECT_EQ(res.report.epoch_loss.size(), 15u);
  EXPECT_EQ(res.report.best_head, select_best_head(res.report.per_head_loss));
  const auto acc = clustering_accuracy(res.report.per_head_labeling[res.report.best_head], r.y).acc;
  EXPECT_GE(acc, 0.95);
  EXPECT_EQ(predict_labeling(res.bank, res.report.best_head, r.x),
            res.report.per_head_labeling[res.report.best_head]);
}

TEST(TrainHeads, DeterministicUnderSeedAndThreads) {
  auto r = small_run(3);
  const auto a = train_heads(r.x, r.sets, r.cfg);
  r.cfg.threads = 3;
  const auto b = train_heads(r.x, r.sets, r.cfg);
  EXPECT_EQ(a.report.per_head_loss, b.report.per_head_loss);
  EXPECT_EQ(a.report.per_head_labeling, b.report.per_head_labeling);
  r.cfg.seed = 18;
  EXPECT_NE(train_heads(r.x, r.sets, r.cfg).report.per_head_loss, a.report.per_head_loss);
}

TEST(TrainHeads, ZeroEpochsReportsInitialHeads) {
  auto r = small_run(0);
  const auto res = train_heads(r.x, r.sets, r.cfg);
  EXPECT_EQ(res.report.steps, 0u);
  ASSERT_EQ(res.report.per_head_loss.size(), 3u);
  for (double l : res.report.per_head_loss) EXPECT_TRUE(std::isfinite(l));
  const auto init = init_head_bank(r.x, r.cfg);
  for (std::size_t h = 0; h < 3; ++h) {
    EXPECT_EQ(res.report.per_head_labeling[h], predict_labeling(init, h, r.x));
  }
}

TEST(TrainHeads, MismatchedNeighborSetsRejected) {
  auto r = small_run(1);
  r.sets.sets.pop_back();
  EXPECT_THROW(train_heads(r.x, r.sets, r.cfg), Error);
}

TEST(HeadBank, CheckpointRoundTrip) {
  icce::test::TempDir tmp;
  auto r = small_run(2);
  const auto res = train_heads(r.x, r.sets, r.cfg);
  save_head_bank(res.bank, tmp / "b.hdb");
  const auto back = load_head_bank(tmp / "b.hdb");
  EXPECT_EQ(back.num_heads(), 3u);
  EXPECT_EQ(back.config.lr, r.cfg.lr);
  EXPECT_EQ(back.config.num_heads, r.cfg.num_heads);
  for (std::size_t h = 0; h < 3; ++h) {
    EXPECT_EQ(back.student.heads[h].weight, res.bank.student.heads[h].weight);
    EXPECT_EQ(back.teacher.heads[h].bias, res.bank.teacher.heads[h].bias);
    EXPECT_EQ(back.marginals[h], res.bank.marginals[h]);
    EXPECT_EQ(predict_labeling(back, h, r.x), res.report.per_head_labeling[h]);
  }
  std::filesystem::resize_file(tmp / "b.hdb", 40);
  EXPECT_THROW(load_head_bank(tmp / "b.hdb"), LoadError);
}
