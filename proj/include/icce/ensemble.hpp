#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "icce/featstore.hpp"
#include "icce/labeling.hpp"

namespace icce {

/// Co-occurrence counts between two labelings over the same samples. Rows
/// follow the first-appearance order of a's clusters, columns b's.
struct ContingencyTable {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint64_t> counts;  // row-major rows x cols
  std::vector<std::uint64_t> row_sums;
  std::vector<std::uint64_t> col_sums;
  std::uint64_t n = 0;

  std::uint64_t at(std::size_t h, std::size_t l) const { return counts[h * cols + l]; }
};

ContingencyTable contingency(const Labeling& a, const Labeling& b);

/// Count-form mutual information: sum n_hl log(n n_hl / (n_h n_l)).
double mutual_information(const ContingencyTable& table);

/// Count-form "entropy": sum n_h log(n_h / n). Nonpositive.
double entropy_count(const Labeling& labeling);

/// MI / sqrt(H(a) H(b)) with the count forms above; 0 if either labeling has
/// a single cluster.
double nmi(const Labeling& a, const Labeling& b);

/// Sum over inputs of nmi(candidate, input).
double anmi(const Labeling& candidate, std::span<const Labeling> inputs);

/// S_ij = fraction of inputs that put i and j in the same cluster.
RowMatrix co_association(std::span<const Labeling> inputs);

/// Average-linkage clustering of the co-association matrix (distance 1 - S)
/// into k groups. Output is canonical.
Labeling cspa(std::span<const Labeling> inputs, std::size_t k);

/// Meta-clustering: every input cluster is a hyperedge; hyperedges are
/// grouped into k meta-clusters by average linkage on 1 - Jaccard, and each
/// sample joins the meta-cluster holding most of its hyperedges (relative to
/// meta-cluster size). Output is canonical and may use fewer than k ids.
Labeling mcla(std::span<const Labeling> inputs, std::size_t k);

struct ConsensusResult {
  Labeling labeling;
  std::size_t chosen = 0;
  std::vector<std::string> names;  // "cspa", "mcla", "extra0", ...
  std::vector<Labeling> candidates;
  std::vector<double> anmi;
};

/// Evaluates {cspa, mcla} + extras by ANMI against the inputs and returns the
/// maximiser; ties keep the earlier candidate.
ConsensusResult supra_consensus(std::span<const Labeling> inputs, std::size_t k,
                                std::span<const Labeling> extra_candidates = {});

}  // namespace icce
