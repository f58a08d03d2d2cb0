#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "icce/labeling.hpp"

namespace icce {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// n x d frozen-backbone features, one sample per row. Row index is the
/// sample identity for every later stage. Immutable once built.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  /// Throws LoadError if the matrix is empty or holds non-finite values.
  explicit EmbeddingMatrix(RowMatrix data);

  std::size_t rows() const { return static_cast<std::size_t>(data_.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(data_.cols()); }
  const RowMatrix& data() const { return data_; }
  auto row(std::size_t i) const { return data_.row(static_cast<Eigen::Index>(i)); }

 private:
  RowMatrix data_;
};

enum class FeatureFormat { featpack, csv, npy };

FeatureFormat parse_feature_format(const std::string& name);
/// Picks the format from the extension (.fpk, .csv, .npy); featpack otherwise.
FeatureFormat format_from_extension(const std::filesystem::path& path);

enum class FeatpackDtype : std::uint8_t { float32 = 1, float64 = 2 };

EmbeddingMatrix load_features(const std::filesystem::path& path,
                              FeatureFormat format);
void save_features(const EmbeddingMatrix& features,
                   const std::filesystem::path& path,
                   FeatpackDtype dtype = FeatpackDtype::float64);
void save_features_csv(const EmbeddingMatrix& features,
                       const std::filesystem::path& path);

inline constexpr double kVarianceEpsilon = 1e-5;

/// Per-dimension standardization statistics plus a learnable affine.
struct NormStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;  // population variance, clamped below at kVarianceEpsilon
  Eigen::VectorXd gamma;
  Eigen::VectorXd beta;
  double momentum = 0.1;
  std::vector<std::string> warnings;

  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
};

/// Full-dataset mean/variance. Requires n >= 2.
NormStats fit_standardizer(const EmbeddingMatrix& features, double momentum = 0.1);

/// (x - mean) / sqrt(var) * gamma + beta, per dimension.
RowMatrix apply_standardizer(const RowMatrix& features, const NormStats& stats);
EmbeddingMatrix apply_standardizer(const EmbeddingMatrix& features,
                                   const NormStats& stats);

/// Standardization without the affine part; shared by training code that
/// owns its own gamma/beta.
RowMatrix normalize_only(const RowMatrix& features, const NormStats& stats);

struct SynthSpec {
  std::size_t n = 200;
  std::size_t d = 16;
  std::size_t k = 4;
  double separation = 20.0;
  std::uint64_t seed = 0;
};

/// k isotropic unit-variance Gaussian blobs. Centers sit at pairwise distance
/// separation * sqrt(d) (orthogonal when k <= d). Cluster sizes differ by at
/// most one; rows are shuffled by the seed. Labels are 1..k.
std::pair<EmbeddingMatrix, Labeling> gen_synthetic(const SynthSpec& spec);

}  // namespace icce
