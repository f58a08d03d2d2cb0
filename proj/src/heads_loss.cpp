#include "icce/heads_loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "icce/error.hpp"
#include "icce/parallel.hpp"

namespace icce {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(const Eigen::Ref<const Eigen::ArrayXd>& a) {
  const double mx = a.maxCoeff();
  if (mx == kNegInf) return kNegInf;
  return mx + std::log((a - mx).exp().sum());
}

Eigen::ArrayXd safe_log(const Eigen::Ref<const Eigen::ArrayXd>& p) {
  return p.unaryExpr([](double v) { return v > 0.0 ? std::log(v) : kNegInf; });
}

// beta * (log q + log t) - log p, with -inf propagated from zero entries.
Eigen::ArrayXd pmi_terms(const Eigen::ArrayXd& log_q, const Eigen::ArrayXd& log_t,
                         const Eigen::ArrayXd& log_p, double beta) {
  Eigen::ArrayXd a(log_q.size());
  for (Eigen::Index c = 0; c < a.size(); ++c) {
    const double s = log_q[c] + log_t[c];
    a[c] = s == kNegInf ? kNegInf : beta * s - log_p[c];
  }
  return a;
}

Eigen::ArrayXd clamped_log_marginal(const Eigen::VectorXd& p) {
  return p.array().max(kMarginalFloor).log();
}

void check_distribution(const ProbVector& v, const char* name) {
  if (v.size() == 0 || !v.allFinite() || (v.array() < 0.0).any()) {
    throw Error(std::string(name) + " is not a valid distribution");
  }
}

}  // namespace

std::size_t argmax(const Eigen::Ref<const Eigen::VectorXd>& v) {
  std::size_t best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[static_cast<Eigen::Index>(best)]) best = static_cast<std::size_t>(i);
  }
  return best;
}

ProbVector softmax(const Eigen::VectorXd& logits, double tau) {
  const Eigen::ArrayXd s = logits.array() / tau;
  const Eigen::ArrayXd e = (s - s.maxCoeff()).exp();
  return (e / e.sum()).matrix();
}

ProbVector head_forward(const HeadParams& head, const NormStats& norm,
                        std::span<const double> z, double tau) {
  if (!(tau > 0.0)) throw Error("head_forward: temperature must be positive");
  if (z.size() != head.dim() || norm.dim() != head.dim()) {
    throw Error("head_forward: dimension mismatch");
  }
  const Eigen::Map<const Eigen::VectorXd> zv(z.data(), static_cast<Eigen::Index>(z.size()));
  const Eigen::VectorXd zs =
      ((zv - norm.mean).array() / norm.var.array().sqrt() * norm.gamma.array() +
       norm.beta.array())
          .matrix();
  const Eigen::VectorXd logits = head.weight * zs + head.bias;
  if (!logits.allFinite()) throw TrainingError("head_forward: non-finite logits");
  return softmax(logits, tau);
}

RowMatrix sinkhorn_knopp(const RowMatrix& logits, std::size_t iters) {
  if (logits.rows() < 1 || logits.cols() < 1) {
    throw Error("sinkhorn_knopp: empty logit batch");
  }
  const double rows = static_cast<double>(logits.rows());
  const double cols = static_cast<double>(logits.cols());
  RowMatrix q = (logits.colwise() - logits.rowwise().maxCoeff()).array().exp().matrix();
  if (iters == 0) {
    q.array().colwise() /= q.rowwise().sum().array();
    return q;
  }
  for (std::size_t it = 0; it < iters; ++it) {
    const Eigen::RowVectorXd col = q.colwise().sum();
    q.array().rowwise() /= (col.array() * (cols / rows));
    q.array().colwise() /= q.rowwise().sum().array();
  }
  return q;
}

double temi_pair_loss(const ProbVector& qs_x, const ProbVector& qs_xp,
                      const ProbVector& qt_x, const ProbVector& qt_xp,
                      const ProbVector& p_c, double beta) {
  const auto c = qs_x.size();
  if (qs_xp.size() != c || qt_x.size() != c || qt_xp.size() != c || p_c.size() != c) {
    throw Error("temi_pair_loss: size mismatch");
  }
  if (!(beta > 0.0 && beta <= 1.0)) throw Error("temi_pair_loss: beta must be in (0, 1]");
  check_distribution(qs_x, "qs_x");
  check_distribution(qs_xp, "qs_xp");
  check_distribution(qt_x, "qt_x");
  check_distribution(qt_xp, "qt_xp");
  if ((p_c.array() <= 0.0).any()) {
    throw Error("temi_pair_loss: marginal p(c) has a zero entry");
  }
  const double w = qt_x.dot(qt_xp);
  if (w == 0.0) return 0.0;
  const Eigen::ArrayXd log_p = p_c.array().log();
  const double a = log_sum_exp(pmi_terms(safe_log(qs_x), safe_log(qt_xp), log_p, beta));
  const double b = log_sum_exp(pmi_terms(safe_log(qs_xp), safe_log(qt_x), log_p, beta));
  return -0.5 * w * (a + b);
}

double ce_term(const ProbVector& qs_x, const ProbVector& qt_xp) {
  if (qs_x.size() != qt_xp.size()) throw Error("ce_term: size mismatch");
  const auto c_hat = static_cast<Eigen::Index>(argmax(qt_xp));
  return -std::log(std::max(qs_x[c_hat], kCeProbFloor));
}

double lambda_schedule(std::size_t step, std::size_t total_steps, double lambda_max) {
  if (total_steps == 0) throw Error("lambda_schedule: total_steps must be >= 1");
  step = std::min(step, total_steps);
  if (step == total_steps) return lambda_max;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return lambda_max * (1.0 - std::cos(std::numbers::pi * frac)) / 2.0;
}

ProbVector smooth_teacher(std::span<const ProbVector> qt_list) {
  if (qt_list.empty()) throw Error("smooth_teacher: empty list");
  ProbVector acc = qt_list.front();
  for (std::size_t i = 1; i < qt_list.size(); ++i) {
    if (qt_list[i].size() != acc.size()) throw Error("smooth_teacher: size mismatch");
    acc += qt_list[i];
  }
  return acc / static_cast<double>(qt_list.size());
}

void ema_update(Eigen::Ref<Eigen::ArrayXd> teacher,
                const Eigen::Ref<const Eigen::ArrayXd>& student, double momentum) {
  if (teacher.size() != student.size()) throw Error("ema_update: shape mismatch");
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw Error("ema_update: momentum outside [0, 1]");
  if (momentum == 1.0) return;
  teacher = momentum * teacher + (1.0 - momentum) * student;
}

void ema_update(HeadParams& teacher, const HeadParams& student, double momentum) {
  if (teacher.weight.rows() != student.weight.rows() ||
      teacher.weight.cols() != student.weight.cols() ||
      teacher.bias.size() != student.bias.size()) {
    throw Error("ema_update: shape mismatch");
  }
  Eigen::Map<Eigen::ArrayXd> tw(teacher.weight.data(), teacher.weight.size());
  Eigen::Map<const Eigen::ArrayXd> sw(student.weight.data(), student.weight.size());
  ema_update(tw, sw, momentum);
  Eigen::Map<Eigen::ArrayXd> tb(teacher.bias.data(), teacher.bias.size());
  Eigen::Map<const Eigen::ArrayXd> sb(student.bias.data(), student.bias.size());
  ema_update(tb, sb, momentum);
}

namespace {

struct HeadTerms {
  double loss = 0.0;
  HeadParams grad;
  Eigen::VectorXd dgamma;
  Eigen::VectorXd dbeta;
};

// Row-wise log-softmax of logits already divided by temperature.
RowMatrix log_softmax_rows(const RowMatrix& s) {
  RowMatrix out = s.colwise() - s.rowwise().maxCoeff();
  const Eigen::VectorXd lse = out.array().exp().rowwise().sum().log().matrix();
  out.colwise() -= lse;
  return out;
}

HeadTerms head_terms(const HeadParams& head, const RowMatrix& anchors_affine,
                     const RowMatrix& anchors, const HeadBatch& hb,
                     const Eigen::VectorXd& gamma, const Eigen::VectorXd& beta_shift,
                     const LossSettings& st, double scale) {
  const auto B = anchors.rows();
  const auto m = static_cast<Eigen::Index>(st.smoothing_m);
  const auto C = head.weight.rows();

  RowMatrix nb_affine = hb.neighbors;
  nb_affine.array().rowwise() *= gamma.transpose().array();
  nb_affine.rowwise() += beta_shift.transpose();

  RowMatrix s_a = (anchors_affine * head.weight.transpose()).rowwise() + head.bias.transpose();
  RowMatrix s_n = (nb_affine * head.weight.transpose()).rowwise() + head.bias.transpose();
  s_a /= st.tau_student;
  s_n /= st.tau_student;
  if (!s_a.allFinite() || !s_n.allFinite()) {
    throw TrainingError("non-finite student logits");
  }
  const RowMatrix lq_a = log_softmax_rows(s_a);
  const RowMatrix lq_n = log_softmax_rows(s_n);
  const Eigen::ArrayXd log_p = clamped_log_marginal(hb.marginal);

  RowMatrix g_a = RowMatrix::Zero(B, C);
  RowMatrix g_n = RowMatrix::Zero(B * m, C);
  double total = 0.0;

  for (Eigen::Index i = 0; i < B; ++i) {
    const Eigen::ArrayXd t_x = hb.teacher_anchor.row(i).transpose().array();
    Eigen::ArrayXd t_bar = Eigen::ArrayXd::Zero(C);
    for (Eigen::Index j = 0; j < m; ++j) t_bar += hb.teacher_neighbor.row(i * m + j).transpose().array();
    t_bar /= static_cast<double>(m);

    const Eigen::ArrayXd lqa = lq_a.row(i).transpose().array();
    const Eigen::ArrayXd qa = lqa.exp();
    const double w = (t_x * t_bar).sum();

    double temi = 0.0;
    if (w != 0.0) {
      const Eigen::ArrayXd a = pmi_terms(lqa, safe_log(t_bar), log_p, st.beta);
      const double log_a = log_sum_exp(a);
      const Eigen::ArrayXd r_a = (a - log_a).exp();
      double partner = 0.0;
      const Eigen::ArrayXd log_tx = safe_log(t_x);
      for (Eigen::Index j = 0; j < m; ++j) {
        const Eigen::ArrayXd lqn = lq_n.row(i * m + j).transpose().array();
        const Eigen::ArrayXd b = pmi_terms(lqn, log_tx, log_p, st.beta);
        const double log_b = log_sum_exp(b);
        partner += log_b;
        const Eigen::ArrayXd r_b = (b - log_b).exp();
        g_n.row(i * m + j) = (-0.5 * w / static_cast<double>(m) * st.beta * (r_b - lqn.exp()))
                                 .matrix()
                                 .transpose();
      }
      partner /= static_cast<double>(m);
      temi = -0.5 * w * (log_a + partner);
      g_a.row(i) = (-0.5 * w * st.beta * (r_a - qa)).matrix().transpose();
    }

    const auto c_hat = static_cast<Eigen::Index>(argmax(t_bar.matrix()));
    double ce;
    if (qa[c_hat] < kCeProbFloor) {
      ce = -std::log(kCeProbFloor);
    } else {
      ce = -lqa[c_hat];
      Eigen::RowVectorXd d = qa.matrix().transpose();
      d[c_hat] -= 1.0;
      g_a.row(i) += st.lambda * d;
    }
    total += temi + st.lambda * ce;
  }

  HeadTerms out;
  out.loss = total / static_cast<double>(B);
  // d loss / d raw logits = d loss / d s / tau, then scaled to the global mean.
  const double k = scale / st.tau_student;
  g_a *= k;
  g_n *= k;
  out.grad.weight = g_a.transpose() * anchors_affine + g_n.transpose() * nb_affine;
  out.grad.bias = (g_a.colwise().sum() + g_n.colwise().sum()).transpose();
  const RowMatrix dz_a = g_a * head.weight;
  const RowMatrix dz_n = g_n * head.weight;
  out.dgamma = (dz_a.cwiseProduct(anchors).colwise().sum() +
                dz_n.cwiseProduct(hb.neighbors).colwise().sum())
                   .transpose();
  out.dbeta = (dz_a.colwise().sum() + dz_n.colwise().sum()).transpose();
  return out;
}

}  // namespace

LossResult composite_loss(const StudentParams& student, const RowMatrix& anchors,
                          std::span<const HeadBatch> batches,
                          const LossSettings& settings, std::size_t threads) {
  const std::size_t H = student.heads.size();
  if (H == 0 || batches.size() != H) throw Error("composite_loss: head count mismatch");
  if (anchors.rows() < 1) throw Error("composite_loss: empty batch");
  if (settings.smoothing_m < 1) throw Error("composite_loss: smoothing_m must be >= 1");
  const auto B = anchors.rows();
  const auto m = static_cast<Eigen::Index>(settings.smoothing_m);
  for (const auto& hb : batches) {
    if (hb.neighbors.rows() != B * m || hb.teacher_anchor.rows() != B ||
        hb.teacher_neighbor.rows() != B * m) {
      throw Error("composite_loss: batch shape mismatch");
    }
  }

  RowMatrix anchors_affine = anchors;
  anchors_affine.array().rowwise() *= student.gamma.transpose().array();
  anchors_affine.rowwise() += student.beta.transpose();

  const double scale = 1.0 / (static_cast<double>(B) * static_cast<double>(H));
  std::vector<HeadTerms> terms(H);
  parallel_for(H, threads, [&](std::size_t h) {
    terms[h] = head_terms(student.heads[h], anchors_affine, anchors, batches[h],
                          student.gamma, student.beta, settings, scale);
  });

  LossResult res;
  res.per_head.resize(H);
  res.grad.gamma = Eigen::VectorXd::Zero(student.gamma.size());
  res.grad.beta = Eigen::VectorXd::Zero(student.beta.size());
  res.grad.heads.resize(H);
  for (std::size_t h = 0; h < H; ++h) {
    res.per_head[h] = terms[h].loss;
    res.loss += terms[h].loss;
    res.grad.gamma += terms[h].dgamma;
    res.grad.beta += terms[h].dbeta;
    res.grad.heads[h] = std::move(terms[h].grad);
  }
  res.loss /= static_cast<double>(H);
  return res;
}

}  // namespace icce
