#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "icce/featstore.hpp"
#include "icce/heads_loss.hpp"
#include "icce/labeling.hpp"
#include "icce/neighbors.hpp"

namespace icce {

/// Stage-1 hyperparameters. Defaults follow the reference training table;
/// `desk_scale()` gives the settings used for synthetic runs.
struct TrainConfig {
  std::size_t num_heads = 50;
  std::size_t num_clusters = 10;
  double tau_student = 0.1;
  double tau_teacher = 0.1;
  double beta = 0.6;
  double lambda_max = 0.5;
  double teacher_momentum = 0.996;
  std::size_t sk_iters = 3;
  std::size_t epochs = 400;
  std::size_t warmup_epochs = 100;
  std::size_t batch_size = 1024;
  double lr = 1.25e-6;
  double weight_decay = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double marginal_momentum = 0.9;
  std::size_t smoothing_m = 1;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  /// Throws ConfigError describing the first violated invariant.
  void validate() const;

  static TrainConfig desk_scale(std::size_t num_clusters);
};

struct AdamSlot {
  Eigen::ArrayXd m;
  Eigen::ArrayXd v;
};

/// Everything stage 1 learns: frozen standardization statistics, student and
/// teacher parameters, optimizer moments and the per-head marginals p(c).
struct HeadBank {
  NormStats norm;  // mean/var frozen; gamma/beta unused (see student/teacher)
  StudentParams student;
  StudentParams teacher;
  std::vector<Eigen::VectorXd> marginals;
  std::vector<AdamSlot> adam;  // gamma, beta, then (W, b) per head
  std::uint64_t step = 0;
  TrainConfig config;

  std::size_t num_heads() const { return student.heads.size(); }
  std::size_t num_clusters() const {
    return student.heads.empty() ? 0 : student.heads.front().num_clusters();
  }
  std::size_t dim() const { return static_cast<std::size_t>(norm.mean.size()); }

  /// NormStats carrying the student's (or teacher's) affine, for head_forward.
  NormStats student_norm() const;
  NormStats teacher_norm() const;
};

struct TrainReport {
  std::vector<double> per_head_loss;
  std::vector<Labeling> per_head_labeling;
  std::size_t best_head = 0;
  std::vector<double> epoch_loss;  // mean over heads, one entry per epoch
  std::uint64_t steps = 0;
};

/// Fresh bank: statistics fitted on `features`, gamma = 1, beta = 0, head
/// weights drawn N(0, 1/d) from per-head seeded streams, teacher = student.
HeadBank init_head_bank(const EmbeddingMatrix& features, const TrainConfig& cfg);

struct TrainResult {
  HeadBank bank;
  TrainReport report;
};

TrainResult train_heads(const EmbeddingMatrix& features, const NeighborSets& sets,
                        const TrainConfig& cfg);

/// Student class probabilities for every row (n x C) of one head.
RowMatrix head_probabilities(const HeadBank& bank, std::size_t head,
                             const EmbeddingMatrix& features);

/// Argmax of the student head (ties to the lowest class); ids are class + 1.
Labeling predict_labeling(const HeadBank& bank, std::size_t head,
                          const EmbeddingMatrix& features);

/// Lowest loss, ties to the lowest index.
std::size_t select_best_head(const std::vector<double>& per_head_loss);

/// "HDB1" checkpoint: magic, config echo (u32 length + key=value text),
/// u32 H, u32 C, u32 d, then float64 mean, var, student gamma/beta, teacher
/// gamma/beta and per head student W, b, teacher W, b, p(c).
void save_head_bank(const HeadBank& bank, const std::filesystem::path& path);
HeadBank load_head_bank(const std::filesystem::path& path);

}  // namespace icce
