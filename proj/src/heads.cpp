#include "icce/heads.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "icce/binary_io.hpp"
#include "icce/config.hpp"
#include "icce/error.hpp"
#include "icce/parallel.hpp"

namespace icce {

namespace {

// Independent deterministic streams derived from the run seed.
enum class Stream : std::uint32_t { init = 1, draws = 2, shuffle = 3 };

std::mt19937_64 make_rng(std::uint64_t seed, Stream stream, std::size_t head = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(head)};
  return std::mt19937_64(seq);
}

RowMatrix gather_rows(const RowMatrix& src, std::span<const std::uint32_t> idx) {
  RowMatrix out(static_cast<Eigen::Index>(idx.size()), src.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    out.row(static_cast<Eigen::Index>(r)) = src.row(idx[r]);
  }
  return out;
}

RowMatrix affine_logits(const HeadParams& head, const RowMatrix& rows,
                        const Eigen::VectorXd& gamma, const Eigen::VectorXd& beta) {
  RowMatrix z = rows;
  z.array().rowwise() *= gamma.transpose().array();
  z.rowwise() += beta.transpose();
  return (z * head.weight.transpose()).rowwise() + head.bias.transpose();
}

RowMatrix teacher_probs(const StudentParams& teacher, std::size_t h, const RowMatrix& rows,
                        const TrainConfig& cfg) {
  RowMatrix logits = affine_logits(teacher.heads[h], rows, teacher.gamma, teacher.beta);
  logits /= cfg.tau_teacher;
  if (!logits.allFinite()) {
    throw TrainingError("non-finite teacher logits in head " + std::to_string(h));
  }
  return sinkhorn_knopp(logits, cfg.sk_iters);
}

void adam_step(Eigen::Map<Eigen::ArrayXd> param, const Eigen::Map<const Eigen::ArrayXd>& grad,
               AdamSlot& slot, const TrainConfig& cfg, double lr, double decay,
               std::uint64_t t) {
  slot.m = cfg.adam_beta1 * slot.m + (1.0 - cfg.adam_beta1) * grad;
  slot.v = cfg.adam_beta2 * slot.v + (1.0 - cfg.adam_beta2) * grad.square();
  const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(t));
  if (decay > 0.0) param -= lr * decay * param;
  param -= lr * (slot.m / c1) / ((slot.v / c2).sqrt() + cfg.adam_eps);
}

template <typename M>
Eigen::Map<Eigen::ArrayXd> flat(M& m) {
  return Eigen::Map<Eigen::ArrayXd>(m.data(), m.size());
}
template <typename M>
Eigen::Map<const Eigen::ArrayXd> flat_c(const M& m) {
  return Eigen::Map<const Eigen::ArrayXd>(m.data(), m.size());
}

void optimizer_step(HeadBank& bank, const StudentParams& grad, double lr) {
  const auto& cfg = bank.config;
  const auto t = bank.step + 1;
  adam_step(flat(bank.student.gamma), flat_c(grad.gamma), bank.adam[0], cfg, lr, 0.0, t);
  adam_step(flat(bank.student.beta), flat_c(grad.beta), bank.adam[1], cfg, lr, 0.0, t);
  for (std::size_t h = 0; h < bank.num_heads(); ++h) {
    auto& head = bank.student.heads[h];
    adam_step(flat(head.weight), flat_c(grad.heads[h].weight), bank.adam[2 + 2 * h], cfg, lr,
              cfg.weight_decay, t);
    adam_step(flat(head.bias), flat_c(grad.heads[h].bias), bank.adam[3 + 2 * h], cfg, lr, 0.0,
              t);
  }
}

void teacher_step(HeadBank& bank) {
  const double mom = bank.config.teacher_momentum;
  ema_update(flat(bank.teacher.gamma), flat_c(bank.student.gamma), mom);
  ema_update(flat(bank.teacher.beta), flat_c(bank.student.beta), mom);
  for (std::size_t h = 0; h < bank.num_heads(); ++h) {
    ema_update(bank.teacher.heads[h], bank.student.heads[h], mom);
  }
}

// Builds the per-head inputs for one batch: neighbor draws and teacher
// outputs. The draw RNGs advance even when a batch is only evaluated.
std::vector<HeadBatch> prepare_batch(const HeadBank& bank, const RowMatrix& z_norm,
                                     const RowMatrix& anchors,
                                     std::span<const std::uint32_t> anchor_idx,
                                     const NeighborSets& sets,
                                     std::vector<std::mt19937_64>& draw_rngs) {
  const auto& cfg = bank.config;
  const std::size_t H = bank.num_heads();
  const std::size_t m = cfg.smoothing_m;
  std::vector<HeadBatch> batches(H);
  parallel_for(H, cfg.threads, [&](std::size_t h) {
    auto& rng = draw_rngs[h];
    std::vector<std::uint32_t> nb_idx;
    nb_idx.reserve(anchor_idx.size() * m);
    for (const auto a : anchor_idx) {
      const auto& s = sets[a];
      for (std::size_t j = 0; j < m; ++j) {
        if (s.empty()) {
          nb_idx.push_back(a);  // singleton: pair the sample with itself
        } else {
          std::uniform_int_distribution<std::size_t> pick(0, s.size() - 1);
          nb_idx.push_back(s[pick(rng)]);
        }
      }
    }
    auto& hb = batches[h];
    hb.neighbors = gather_rows(z_norm, nb_idx);
    hb.teacher_anchor = teacher_probs(bank.teacher, h, anchors, cfg);
    hb.teacher_neighbor = teacher_probs(bank.teacher, h, hb.neighbors, cfg);
    hb.marginal = bank.marginals[h];
  });
  return batches;
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("heads: " + what); };
  if (num_heads < 1) fail("num_heads must be >= 1");
  if (num_clusters < 2) fail("num_clusters must be >= 2");
  if (!(tau_student > 0.0) || !(tau_teacher > 0.0)) fail("temperatures must be > 0");
  if (!(beta > 0.0 && beta <= 1.0)) fail("beta must be in (0, 1]");
  if (!(lambda_max >= 0.0)) fail("lambda_max must be >= 0");
  if (!(teacher_momentum >= 0.0 && teacher_momentum <= 1.0)) {
    fail("teacher_momentum must be in [0, 1]");
  }
  if (!(marginal_momentum >= 0.0 && marginal_momentum <= 1.0)) {
    fail("marginal_momentum must be in [0, 1]");
  }
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (smoothing_m < 1) fail("smoothing_m must be >= 1");
  if (!(lr >= 0.0) || !(weight_decay >= 0.0)) fail("lr and weight_decay must be >= 0");
}

TrainConfig TrainConfig::desk_scale(std::size_t num_clusters) {
  TrainConfig c;
  c.num_clusters = num_clusters;
  c.num_heads = 10;
  c.epochs = 50;
  c.warmup_epochs = 5;
  c.batch_size = 256;
  c.lr = 1e-3;
  return c;
}

NormStats HeadBank::student_norm() const {
  NormStats s = norm;
  s.gamma = student.gamma;
  s.beta = student.beta;
  return s;
}

NormStats HeadBank::teacher_norm() const {
  NormStats s = norm;
  s.gamma = teacher.gamma;
  s.beta = teacher.beta;
  return s;
}

HeadBank init_head_bank(const EmbeddingMatrix& features, const TrainConfig& cfg) {
  cfg.validate();
  HeadBank bank;
  bank.config = cfg;
  bank.norm = fit_standardizer(features);
  const auto d = static_cast<Eigen::Index>(features.cols());
  const auto C = static_cast<Eigen::Index>(cfg.num_clusters);
  bank.student.gamma = Eigen::VectorXd::Ones(d);
  bank.student.beta = Eigen::VectorXd::Zero(d);
  bank.student.heads.resize(cfg.num_heads);
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t h = 0; h < cfg.num_heads; ++h) {
    auto rng = make_rng(cfg.seed, Stream::init, h);
    std::normal_distribution<double> normal(0.0, sd);
    auto& head = bank.student.heads[h];
    head.weight.resize(C, d);
    for (Eigen::Index i = 0; i < head.weight.size(); ++i) head.weight.data()[i] = normal(rng);
    head.bias = Eigen::VectorXd::Zero(C);
  }
  bank.teacher = bank.student;
  bank.marginals.assign(cfg.num_heads,
                        Eigen::VectorXd::Constant(C, 1.0 / static_cast<double>(C)));
  bank.adam.push_back({Eigen::ArrayXd::Zero(d), Eigen::ArrayXd::Zero(d)});
  bank.adam.push_back({Eigen::ArrayXd::Zero(d), Eigen::ArrayXd::Zero(d)});
  for (std::size_t h = 0; h < cfg.num_heads; ++h) {
    bank.adam.push_back({Eigen::ArrayXd::Zero(C * d), Eigen::ArrayXd::Zero(C * d)});
    bank.adam.push_back({Eigen::ArrayXd::Zero(C), Eigen::ArrayXd::Zero(C)});
  }
  return bank;
}

std::size_t select_best_head(const std::vector<double>& per_head_loss) {
  if (per_head_loss.empty()) throw Error("select_best_head: no heads");
  std::size_t best = 0;
  for (std::size_t h = 1; h < per_head_loss.size(); ++h) {
    if (per_head_loss[h] < per_head_loss[best]) best = h;
  }
  return best;
}

TrainResult train_heads(const EmbeddingMatrix& features, const NeighborSets& sets,
                        const TrainConfig& cfg) {
  const std::size_t n = features.rows();
  if (sets.size() != n) {
    throw Error("train_heads: neighbor sets cover " + std::to_string(sets.size()) +
                " samples, features " + std::to_string(n));
  }
  TrainResult out;
  auto& bank = out.bank;
  bank = init_head_bank(features, cfg);
  auto& report = out.report;
  const std::size_t H = cfg.num_heads;

  const RowMatrix z_norm = normalize_only(features.data(), bank.norm);
  const std::size_t batch = std::min(cfg.batch_size, n);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const std::size_t total_steps = std::max<std::size_t>(1, cfg.epochs * steps_per_epoch);
  const std::size_t warmup_steps = cfg.warmup_epochs * steps_per_epoch;

  auto shuffle_rng = make_rng(cfg.seed, Stream::shuffle);
  std::vector<std::mt19937_64> draw_rngs;
  for (std::size_t h = 0; h < H; ++h) draw_rngs.push_back(make_rng(cfg.seed, Stream::draws, h));

  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0U);

  LossSettings settings{cfg.tau_student, cfg.beta, 0.0, cfg.smoothing_m};
  std::vector<double> head_sum(H);

  auto run_epoch = [&](bool update) {
    std::fill(head_sum.begin(), head_sum.end(), 0.0);
    if (update) std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t len = std::min(batch, n - start);
      const std::span<const std::uint32_t> idx(order.data() + start, len);
      const RowMatrix anchors = gather_rows(z_norm, idx);
      auto batches = prepare_batch(bank, z_norm, anchors, idx, sets, draw_rngs);
      settings.lambda = lambda_schedule(bank.step, total_steps, cfg.lambda_max);
      auto res = composite_loss(bank.student, anchors, batches, settings, cfg.threads);
      for (std::size_t h = 0; h < H; ++h) {
        if (!std::isfinite(res.per_head[h])) {
          throw TrainingError("non-finite loss in head " + std::to_string(h) + " at step " +
                              std::to_string(bank.step));
        }
        head_sum[h] += res.per_head[h] * static_cast<double>(len);
      }
      if (!update) continue;

      double lr = cfg.lr;
      if (warmup_steps > 0 && bank.step < warmup_steps) {
        lr *= static_cast<double>(bank.step + 1) / static_cast<double>(warmup_steps);
      }
      optimizer_step(bank, res.grad, lr);
      teacher_step(bank);
      const double mm = cfg.marginal_momentum;
      for (std::size_t h = 0; h < H; ++h) {
        const auto& hb = batches[h];
        const Eigen::VectorXd batch_mean =
            (hb.teacher_anchor.colwise().sum() + hb.teacher_neighbor.colwise().sum())
                .transpose() /
            static_cast<double>(hb.teacher_anchor.rows() + hb.teacher_neighbor.rows());
        bank.marginals[h] = mm * bank.marginals[h] + (1.0 - mm) * batch_mean;
      }
      ++bank.step;
    }
    for (auto& s : head_sum) s /= static_cast<double>(n);
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    run_epoch(true);
    report.epoch_loss.push_back(std::accumulate(head_sum.begin(), head_sum.end(), 0.0) /
                                static_cast<double>(H));
  }
  if (cfg.epochs == 0) run_epoch(false);

  report.per_head_loss = head_sum;
  report.best_head = select_best_head(report.per_head_loss);
  report.steps = bank.step;
  report.per_head_labeling.resize(H);
  parallel_for(H, cfg.threads, [&](std::size_t h) {
    report.per_head_labeling[h] = predict_labeling(bank, h, features);
  });
  return out;
}

RowMatrix head_probabilities(const HeadBank& bank, std::size_t head,
                             const EmbeddingMatrix& features) {
  if (head >= bank.num_heads()) {
    throw Error("head index " + std::to_string(head) + " out of range");
  }
  if (features.cols() != bank.dim()) {
    throw Error("predict: feature dimension " + std::to_string(features.cols()) +
                " does not match the bank (" + std::to_string(bank.dim()) + ")");
  }
  const RowMatrix z = normalize_only(features.data(), bank.norm);
  RowMatrix s = affine_logits(bank.student.heads[head], z, bank.student.gamma, bank.student.beta);
  s /= bank.config.tau_student;
  if (!s.allFinite()) throw TrainingError("non-finite logits in head " + std::to_string(head));
  return sinkhorn_knopp(s, 0);
}

Labeling predict_labeling(const HeadBank& bank, std::size_t head,
                          const EmbeddingMatrix& features) {
  const RowMatrix p = head_probabilities(bank, head, features);
  std::vector<std::uint32_t> ids(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    ids[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(argmax(p.row(i).transpose())) + 1;
  }
  return Labeling(std::move(ids));
}

void save_head_bank(const HeadBank& bank, const std::filesystem::path& path) {
  io::BinaryWriter w(path);
  w.magic("HDB1");
  w.string(train_config_to_text(bank.config));
  const auto H = bank.num_heads();
  w.u32(static_cast<std::uint32_t>(H));
  w.u32(static_cast<std::uint32_t>(bank.num_clusters()));
  w.u32(static_cast<std::uint32_t>(bank.dim()));
  auto vec = [&w](const Eigen::VectorXd& v) {
    w.f64s(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
  };
  auto head = [&w, &vec](const HeadParams& p) {
    w.f64s(std::span<const double>(p.weight.data(), static_cast<std::size_t>(p.weight.size())));
    vec(p.bias);
  };
  vec(bank.norm.mean);
  vec(bank.norm.var);
  vec(bank.student.gamma);
  vec(bank.student.beta);
  vec(bank.teacher.gamma);
  vec(bank.teacher.beta);
  for (std::size_t h = 0; h < H; ++h) {
    head(bank.student.heads[h]);
    head(bank.teacher.heads[h]);
    vec(bank.marginals[h]);
  }
  w.close();
}

HeadBank load_head_bank(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  r.expect_magic("HDB1");
  HeadBank bank;
  bank.config = train_config_from_text(r.string());
  const auto H = r.u32();
  const auto C = static_cast<Eigen::Index>(r.u32());
  const auto d = static_cast<Eigen::Index>(r.u32());
  if (H == 0 || C == 0 || d == 0) throw LoadError(path.string() + ": empty head bank");
  auto vec = [&r](Eigen::Index len) {
    const auto v = r.f64s(static_cast<std::size_t>(len));
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), len));
  };
  auto head = [&](HeadParams& p) {
    const auto w = r.f64s(static_cast<std::size_t>(C * d));
    p.weight = Eigen::Map<const RowMatrix>(w.data(), C, d);
    p.bias = vec(C);
  };
  bank.norm.mean = vec(d);
  bank.norm.var = vec(d);
  bank.norm.gamma = Eigen::VectorXd::Ones(d);
  bank.norm.beta = Eigen::VectorXd::Zero(d);
  bank.student.gamma = vec(d);
  bank.student.beta = vec(d);
  bank.teacher.gamma = vec(d);
  bank.teacher.beta = vec(d);
  bank.student.heads.resize(H);
  bank.teacher.heads.resize(H);
  bank.marginals.resize(H);
  for (std::uint32_t h = 0; h < H; ++h) {
    head(bank.student.heads[h]);
    head(bank.teacher.heads[h]);
    bank.marginals[h] = vec(C);
  }
  if (!r.at_end()) throw LoadError(path.string() + ": trailing bytes after head bank");
  bank.config.num_heads = H;
  bank.config.num_clusters = static_cast<std::size_t>(C);
  return bank;
}

}  // namespace icce
