#include "icce/eval.hpp"

#include <algorithm>
#include <limits>

#include <fmt/format.h>

#include "icce/ensemble.hpp"
#include "icce/error.hpp"

namespace icce {

Assignment hungarian(const Eigen::MatrixXd& cost) {
  const auto rows = static_cast<std::size_t>(cost.rows());
  const auto cols = static_cast<std::size_t>(cost.cols());
  if (rows == 0 || cols == 0) throw Error("hungarian: empty cost matrix");
  if (!cost.allFinite()) throw Error("hungarian: non-finite cost");
  const std::size_t n = std::max(rows, cols);
  auto c = [&](std::size_t i, std::size_t j) {
    return (i < rows && j < cols) ? cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))
                                  : 0.0;
  };

  // 1-based potentials formulation; p[j] is the row matched to column j.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = c(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  Assignment a;
  a.row_to_col.assign(rows, -1);
  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t i = p[j];
    if (i >= 1 && i - 1 < rows && j - 1 < cols) {
      a.row_to_col[i - 1] = static_cast<std::int64_t>(j - 1);
      a.cost += cost(static_cast<Eigen::Index>(i - 1), static_cast<Eigen::Index>(j - 1));
    }
  }
  return a;
}

AccuracyResult clustering_accuracy(const Labeling& pred, const Labeling& truth) {
  if (pred.size() != truth.size()) {
    throw Error("clustering_accuracy: length mismatch (" + std::to_string(pred.size()) + " vs " +
                std::to_string(truth.size()) + ")");
  }
  if (pred.empty()) throw Error("clustering_accuracy: empty labelings");
  const auto t = contingency(pred, truth);
  Eigen::MatrixXd cost(static_cast<Eigen::Index>(t.rows), static_cast<Eigen::Index>(t.cols));
  for (std::size_t h = 0; h < t.rows; ++h) {
    for (std::size_t l = 0; l < t.cols; ++l) {
      cost(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(l)) =
          -static_cast<double>(t.at(h, l));
    }
  }
  const auto assign = hungarian(cost);

  // Table rows/cols follow first-appearance order; recover the original ids.
  std::vector<std::uint32_t> pred_ids(t.rows), truth_ids(t.cols);
  const auto dp = dense(pred);
  const auto dt = dense(truth);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    pred_ids[dp.ids[i]] = pred[i];
    truth_ids[dt.ids[i]] = truth[i];
  }
  AccuracyResult r;
  std::uint64_t hit = 0;
  for (std::size_t h = 0; h < t.rows; ++h) {
    const auto col = assign.row_to_col[h];
    if (col < 0) continue;
    hit += t.at(h, static_cast<std::size_t>(col));
    r.matching[pred_ids[h]] = truth_ids[static_cast<std::size_t>(col)];
  }
  r.acc = static_cast<double>(hit) / static_cast<double>(pred.size());
  return r;
}

namespace {
double choose2(std::uint64_t x) {
  const double d = static_cast<double>(x);
  return d * (d - 1.0) / 2.0;
}
}  // namespace

double ari(const Labeling& a, const Labeling& b) {
  if (a.size() < 2) throw Error("ari: needs at least two samples");
  const auto t = contingency(a, b);
  double index = 0.0;
  for (const auto c : t.counts) index += choose2(c);
  double sa = 0.0, sb = 0.0;
  for (const auto r : t.row_sums) sa += choose2(r);
  for (const auto c : t.col_sums) sb += choose2(c);
  const double expected = sa * sb / choose2(t.n);
  const double max_index = 0.5 * (sa + sb);
  const double denom = max_index - expected;
  if (denom == 0.0) {
    // Only reachable when both partitions are the same trivial partition.
    return 1.0;
  }
  return (index - expected) / denom;
}

MetricsReport evaluate(const Labeling& pred, const Labeling& truth) {
  MetricsReport m;
  auto acc = clustering_accuracy(pred, truth);
  m.acc = acc.acc;
  m.matching = std::move(acc.matching);
  m.nmi = nmi(pred, truth);
  m.ari = pred.size() >= 2 ? ari(pred, truth) : 1.0;
  return m;
}

std::string format_metrics(const MetricsReport& m, const std::string& prefix) {
  std::string out;
  out += fmt::format("ACC {:6.2f}%  NMI {:6.2f}%  ARI {:6.2f}%\n", 100.0 * m.acc, 100.0 * m.nmi,
                     100.0 * m.ari);
  out += "matching:";
  for (const auto& [p, g] : m.matching) out += fmt::format(" {}->{}", p, g);
  out += "\n";
  out += fmt::format("{}acc={:.2f}\n{}nmi={:.2f}\n{}ari={:.2f}\n", prefix, 100.0 * m.acc, prefix,
                     100.0 * m.nmi, prefix, 100.0 * m.ari);
  return out;
}

}  // namespace icce
