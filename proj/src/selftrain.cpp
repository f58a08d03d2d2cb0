#include "icce/selftrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "icce/binary_io.hpp"
#include "icce/error.hpp"

namespace icce {

void SelfTrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("selftrain: batch_size must be >= 1");
  if (lrs.empty()) throw ConfigError("selftrain: at least one learning rate is required");
  for (const double lr : lrs) {
    if (!(lr >= 0.0)) throw ConfigError("selftrain: learning rates must be >= 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("selftrain: momentum in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("selftrain: weight_decay must be >= 0");
}

double cross_entropy_loss(const HeadParams& params, const RowMatrix& z,
                          std::span<const std::uint32_t> targets, HeadParams* grad) {
  const auto B = z.rows();
  RowMatrix logits = (z * params.weight.transpose()).rowwise() + params.bias.transpose();
  if (!logits.allFinite()) throw TrainingError("self_train: non-finite logits");
  logits.colwise() -= logits.rowwise().maxCoeff();
  RowMatrix prob = logits.array().exp().matrix();
  const Eigen::VectorXd norm = prob.rowwise().sum();
  prob.array().colwise() /= norm.array();
  double loss = 0.0;
  for (Eigen::Index i = 0; i < B; ++i) {
    const auto t = static_cast<Eigen::Index>(targets[static_cast<std::size_t>(i)]);
    loss += std::log(norm[i]) - logits(i, t);
  }
  loss /= static_cast<double>(B);
  if (grad != nullptr) {
    RowMatrix g = prob;
    for (Eigen::Index i = 0; i < B; ++i) {
      g(i, static_cast<Eigen::Index>(targets[static_cast<std::size_t>(i)])) -= 1.0;
    }
    g /= static_cast<double>(B);
    grad->weight = g.transpose() * z;
    grad->bias = g.colwise().sum().transpose();
  }
  return loss;
}

namespace {

struct Run {
  HeadParams params;
  double loss = 0.0;
};

Run train_one(const RowMatrix& z, const std::vector<std::uint32_t>& targets, std::size_t classes,
              double lr, const SelfTrainConfig& cfg) {
  const auto n = static_cast<std::size_t>(z.rows());
  const auto d = z.cols();
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    0x5e1fu};
  std::mt19937_64 rng(seq);
  Run run;
  run.params.weight = RowMatrix::Zero(static_cast<Eigen::Index>(classes), d);
  run.params.bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(classes));
  RowMatrix vel_w = RowMatrix::Zero(run.params.weight.rows(), d);
  Eigen::VectorXd vel_b = Eigen::VectorXd::Zero(run.params.bias.size());

  const std::size_t batch = std::min(cfg.batch_size, n);
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0U);
  std::size_t cursor = n;
  RowMatrix zb(static_cast<Eigen::Index>(batch), d);
  std::vector<std::uint32_t> tb(batch);
  HeadParams grad;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (std::size_t r = 0; r < batch; ++r) {
      if (cursor == n) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const auto i = order[cursor++];
      zb.row(static_cast<Eigen::Index>(r)) = z.row(i);
      tb[r] = targets[i];
    }
    const double loss = cross_entropy_loss(run.params, zb, tb, &grad);
    if (!std::isfinite(loss)) {
      throw TrainingError("self_train: non-finite loss at step " + std::to_string(step) +
                          " (lr " + std::to_string(lr) + ")");
    }
    grad.weight += cfg.weight_decay * run.params.weight;
    vel_w = cfg.momentum * vel_w + grad.weight;
    vel_b = cfg.momentum * vel_b + grad.bias;
    run.params.weight -= lr * vel_w;
    run.params.bias -= lr * vel_b;
  }
  run.loss = cross_entropy_loss(run.params, z, targets, nullptr);
  return run;
}

}  // namespace

Classifier self_train(const EmbeddingMatrix& features, const Labeling& pseudo,
                      const SelfTrainConfig& cfg) {
  cfg.validate();
  if (pseudo.size() != features.rows()) {
    throw Error("self_train: " + std::to_string(pseudo.size()) + " pseudo-labels for " +
                std::to_string(features.rows()) + " samples");
  }
  const auto dl = dense(pseudo);
  Classifier clf;
  clf.class_ids.resize(dl.k);
  for (std::size_t i = 0; i < pseudo.size(); ++i) clf.class_ids[dl.ids[i]] = pseudo[i];

  if (features.rows() >= 2) {
    clf.norm = fit_standardizer(features);
  } else {
    const auto d = static_cast<Eigen::Index>(features.cols());
    clf.norm.mean = Eigen::VectorXd::Zero(d);
    clf.norm.var = Eigen::VectorXd::Ones(d);
    clf.norm.gamma = Eigen::VectorXd::Ones(d);
    clf.norm.beta = Eigen::VectorXd::Zero(d);
  }
  const RowMatrix z = apply_standardizer(features.data(), clf.norm);

  bool have = false;
  for (const double lr : cfg.lrs) {
    auto run = train_one(z, dl.ids, dl.k, lr, cfg);
    if (!have || run.loss < clf.final_loss) {
      clf.params = std::move(run.params);
      clf.final_loss = run.loss;
      clf.lr = lr;
      have = true;
    }
  }
  return clf;
}

Labeling predict(const Classifier& clf, const EmbeddingMatrix& features) {
  if (features.cols() != clf.params.dim()) {
    throw Error("predict: feature dimension " + std::to_string(features.cols()) +
                " does not match the classifier (" + std::to_string(clf.params.dim()) + ")");
  }
  const RowMatrix z = apply_standardizer(features.data(), clf.norm);
  const RowMatrix logits = (z * clf.params.weight.transpose()).rowwise() + clf.params.bias.transpose();
  std::vector<std::uint32_t> ids(features.rows());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    ids[static_cast<std::size_t>(i)] = clf.class_ids[argmax(logits.row(i).transpose())];
  }
  return Labeling(std::move(ids));
}

void save_classifier(const Classifier& clf, const std::filesystem::path& path) {
  io::BinaryWriter w(path);
  w.magic("CLF1");
  w.u32(static_cast<std::uint32_t>(clf.num_classes()));
  w.u32(static_cast<std::uint32_t>(clf.params.dim()));
  w.f64(clf.lr);
  w.f64(clf.final_loss);
  for (const auto id : clf.class_ids) w.u32(id);
  auto vec = [&w](const auto& v) {
    w.f64s(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
  };
  vec(clf.params.weight);
  vec(clf.params.bias);
  vec(clf.norm.mean);
  vec(clf.norm.var);
  vec(clf.norm.gamma);
  vec(clf.norm.beta);
  w.close();
}

Classifier load_classifier(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  r.expect_magic("CLF1");
  Classifier clf;
  const auto C = static_cast<Eigen::Index>(r.u32());
  const auto d = static_cast<Eigen::Index>(r.u32());
  if (C == 0 || d == 0) throw LoadError(path.string() + ": empty classifier");
  clf.lr = r.f64();
  clf.final_loss = r.f64();
  clf.class_ids.resize(static_cast<std::size_t>(C));
  for (auto& id : clf.class_ids) id = r.u32();
  auto vec = [&r](Eigen::Index len) {
    const auto v = r.f64s(static_cast<std::size_t>(len));
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), len));
  };
  const auto w = r.f64s(static_cast<std::size_t>(C * d));
  clf.params.weight = Eigen::Map<const RowMatrix>(w.data(), C, d);
  clf.params.bias = vec(C);
  clf.norm.mean = vec(d);
  clf.norm.var = vec(d);
  clf.norm.gamma = vec(d);
  clf.norm.beta = vec(d);
  if (!r.at_end()) throw LoadError(path.string() + ": trailing bytes after classifier");
  return clf;
}

}  // namespace icce
