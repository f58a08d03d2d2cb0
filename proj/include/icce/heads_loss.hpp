#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "icce/featstore.hpp"

namespace icce {

using ProbVector = Eigen::VectorXd;

/// One clustering head: logits = W * z + b, W is C x d.
struct HeadParams {
  RowMatrix weight;
  Eigen::VectorXd bias;

  std::size_t num_clusters() const { return static_cast<std::size_t>(weight.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(weight.cols()); }
};

/// Numerically stable softmax(logits / tau).
ProbVector softmax(const Eigen::VectorXd& logits, double tau = 1.0);

/// softmax((W * standardize(z) + b) / tau), where standardize applies the
/// mean/var and gamma/beta in `norm`. Throws TrainingError on non-finite logits.
ProbVector head_forward(const HeadParams& head, const NormStats& norm,
                        std::span<const double> z, double tau);

/// Row softmax followed by `iters` rounds of (column-normalize to B/C,
/// row-normalize to 1). Logits are expected already divided by temperature.
RowMatrix sinkhorn_knopp(const RowMatrix& logits, std::size_t iters);

/// Symmetrised, teacher-agreement weighted PMI loss for one (x, x') pair and
/// one head:
///   w = sum_c qt_x(c) qt_xp(c)
///   loss = -w/2 [ log sum_c (qs_x qt_xp)^beta / p(c)
///               + log sum_c (qs_xp qt_x)^beta / p(c) ]
double temi_pair_loss(const ProbVector& qs_x, const ProbVector& qs_xp,
                      const ProbVector& qt_x, const ProbVector& qt_xp,
                      const ProbVector& p_c, double beta);

/// -log qs_x(argmax qt_xp), probability clamped at 1e-12.
double ce_term(const ProbVector& qs_x, const ProbVector& qt_xp);

/// lambda_max * (1 - cos(pi * step / total_steps)) / 2.
double lambda_schedule(std::size_t step, std::size_t total_steps, double lambda_max);

/// Elementwise mean of teacher distributions.
ProbVector smooth_teacher(std::span<const ProbVector> qt_list);

/// Index of the largest entry; ties resolve to the lowest index.
std::size_t argmax(const Eigen::Ref<const Eigen::VectorXd>& v);

/// teacher <- momentum * teacher + (1 - momentum) * student.
void ema_update(Eigen::Ref<Eigen::ArrayXd> teacher,
                const Eigen::Ref<const Eigen::ArrayXd>& student, double momentum);
void ema_update(HeadParams& teacher, const HeadParams& student, double momentum);

inline constexpr double kMarginalFloor = 1e-6;
inline constexpr double kCeProbFloor = 1e-12;

// ---------------------------------------------------------------------------
// Batched composite loss with analytic gradients.

/// Trainable student state: the shared standardizer affine plus H heads.
struct StudentParams {
  Eigen::VectorXd gamma;
  Eigen::VectorXd beta;
  std::vector<HeadParams> heads;
};

/// Inputs specific to one head for one batch of B anchors and m neighbor
/// draws per anchor. Neighbor row i * m + j is the j-th draw for anchor i.
struct HeadBatch {
  RowMatrix neighbors;        // (B*m) x d, standardized without affine
  RowMatrix teacher_anchor;   // B x C teacher probabilities
  RowMatrix teacher_neighbor; // (B*m) x C teacher probabilities
  Eigen::VectorXd marginal;   // p(c), used after clamping at kMarginalFloor
};

struct LossSettings {
  double tau_student = 0.1;
  double beta = 0.6;
  double lambda = 0.0;
  std::size_t smoothing_m = 1;
};

struct LossResult {
  double loss = 0.0;              // mean over heads of per-head batch means
  std::vector<double> per_head;   // per-head batch mean
  StudentParams grad;             // d loss / d params
};

/// Composite loss (weighted PMI + lambda * CE) over a batch, averaged over anchors and
/// heads. Teacher quantities are constants. With smoothing the teacher
/// neighbor distributions are averaged and the partner PMI term is averaged
/// over the m draws.
LossResult composite_loss(const StudentParams& student, const RowMatrix& anchors,
                          std::span<const HeadBatch> batches,
                          const LossSettings& settings, std::size_t threads = 1);

}  // namespace icce
