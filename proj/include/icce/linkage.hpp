#pragma once

#include <cstdint>
#include <vector>

#include "icce/featstore.hpp"

namespace icce {

struct Merge {
  std::uint32_t a = 0;
  std::uint32_t b = 0;
  double height = 0.0;
};

/// Full average-linkage dendrogram over a symmetric distance matrix via the
/// nearest-neighbor-chain algorithm, O(n^2) time. Merges are returned sorted
/// by height (stable); a and b name one member item of each merged cluster.
/// Nearest-neighbor ties prefer the chain predecessor, then the lowest index.
std::vector<Merge> average_linkage(RowMatrix dist);

/// Applies the first n - k merges and returns zero-based ids (first
/// appearance order) for the resulting k clusters.
std::vector<std::uint32_t> cut_dendrogram(const std::vector<Merge>& merges,
                                          std::size_t n, std::size_t k);

}  // namespace icce
