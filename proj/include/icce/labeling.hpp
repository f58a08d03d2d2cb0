#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace icce {

/// A hard cluster assignment: one cluster id per sample.
///
/// Ids are arbitrary non-negative integers; two labelings that differ only
/// by a permutation of ids describe the same partition. `canonicalize`
/// produces the representative with ids 1..k in order of first appearance.
class Labeling {
 public:
  Labeling() = default;
  explicit Labeling(std::vector<std::uint32_t> ids) : ids_(std::move(ids)) {}
  Labeling(std::initializer_list<std::uint32_t> ids) : ids_(ids) {}

  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  std::uint32_t operator[](std::size_t i) const { return ids_[i]; }
  std::span<const std::uint32_t> ids() const { return ids_; }

  /// Number of distinct ids.
  std::size_t num_clusters() const;

  bool operator==(const Labeling&) const = default;

 private:
  std::vector<std::uint32_t> ids_;
};

/// Remaps ids to 1..k in order of first appearance; grouping is unchanged.
Labeling canonicalize(const Labeling& labeling);

/// Zero-based dense ids (canonical id - 1) plus the cluster count.
struct DenseLabels {
  std::vector<std::uint32_t> ids;
  std::size_t k = 0;
};
DenseLabels dense(const Labeling& labeling);

/// "LBL1" binary: u32 n, then n u32 ids, little-endian.
void save_labeling(const Labeling& labeling, const std::filesystem::path& path);
/// One id per line.
void save_labeling_text(const Labeling& labeling,
                        const std::filesystem::path& path);
/// Reads either encoding; binary is detected by its magic.
Labeling load_labeling(const std::filesystem::path& path);

}  // namespace icce
