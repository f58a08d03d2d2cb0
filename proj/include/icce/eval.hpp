#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "icce/featstore.hpp"
#include "icce/labeling.hpp"

namespace icce {

struct Assignment {
  std::vector<std::int64_t> row_to_col;  // -1 when a row is left unmatched
  double cost = 0.0;
};

/// Minimum-cost one-to-one assignment (Kuhn-Munkres with potentials,
/// O(n^3)). Rectangular inputs are zero-padded to square; every row of the
/// smaller dimension is matched.
Assignment hungarian(const Eigen::MatrixXd& cost);

struct AccuracyResult {
  double acc = 0.0;
  std::map<std::uint32_t, std::uint32_t> matching;  // predicted id -> truth id
};

AccuracyResult clustering_accuracy(const Labeling& pred, const Labeling& truth);

/// Adjusted Rand index (permutation-model adjustment). Needs n >= 2.
double ari(const Labeling& a, const Labeling& b);

struct MetricsReport {
  double acc = 0.0;
  double nmi = 0.0;
  double ari = 0.0;
  std::map<std::uint32_t, std::uint32_t> matching;
};

MetricsReport evaluate(const Labeling& pred, const Labeling& truth);

/// Human-readable block followed by "<prefix>acc=..", ".nmi", ".ari" lines,
/// values as percentages with two decimals.
std::string format_metrics(const MetricsReport& m, const std::string& prefix = "");

}  // namespace icce
