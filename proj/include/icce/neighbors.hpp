#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "icce/featstore.hpp"
#include "icce/labeling.hpp"

namespace icce {

/// Per-sample neighbor index lists, each sorted by descending similarity to
/// the anchor (ties by ascending index). An anchor never lists itself.
struct NeighborSets {
  std::vector<std::vector<std::uint32_t>> sets;
  double theta = 0.0;
  std::size_t k_min = 0;

  std::size_t size() const { return sets.size(); }
  const std::vector<std::uint32_t>& operator[](std::size_t i) const { return sets[i]; }
  bool operator==(const NeighborSets&) const = default;
};

struct NeighborStats {
  double avg_count = 0.0;
  double pair_accuracy = 0.0;
  std::size_t empty_sets = 0;
};

/// dot(u, v) / (|u| |v|) clamped to [-1, 1]. Throws on a zero-norm input.
double cosine_similarity(std::span<const double> u, std::span<const double> v);

/// S_x = { x' != x : cos(z_x, z_x') >= theta }, falling back to the k_min most
/// similar samples when fewer qualify. Exhaustive O(n^2 d).
NeighborSets build_neighbor_sets(const EmbeddingMatrix& features, double theta,
                                 std::size_t k_min, std::size_t threads = 1);

/// Every other sample with the same label. Singleton classes get empty sets.
NeighborSets ground_truth_neighbors(const Labeling& labels);

NeighborStats neighbor_accuracy(const NeighborSets& sets, const Labeling& labels);

/// "NNS1": u32 n, then per sample u32 count + u32 indices. theta/k_min are not
/// part of the format and load back as NaN/0.
void save_neighbor_sets(const NeighborSets& sets, const std::filesystem::path& path);
NeighborSets load_neighbor_sets(const std::filesystem::path& path);

}  // namespace icce
