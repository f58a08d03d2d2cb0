#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "icce/featstore.hpp"
#include "icce/heads_loss.hpp"
#include "icce/labeling.hpp"

namespace icce {

struct SelfTrainConfig {
  std::size_t steps = 12500;
  std::size_t batch_size = 256;
  std::vector<double> lrs{1e-3, 1e-2, 1e-1};  // swept; best final loss wins
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Linear probe over standardized features. Class index c predicts the
/// pseudo-label id class_ids[c].
struct Classifier {
  HeadParams params;
  NormStats norm;
  std::vector<std::uint32_t> class_ids;
  double lr = 0.0;          // the sweep winner
  double final_loss = 0.0;  // mean cross-entropy over the training set

  std::size_t num_classes() const { return class_ids.size(); }
};

/// Mean cross-entropy of softmax(W z + b) against dense targets, and its
/// gradient with respect to W and b. `z` is already standardized.
double cross_entropy_loss(const HeadParams& params, const RowMatrix& z,
                          std::span<const std::uint32_t> targets, HeadParams* grad);

/// One supervised round on the pseudo-labels; one run per swept learning
/// rate, keeping the lowest final training loss (ties to the earlier rate).
Classifier self_train(const EmbeddingMatrix& features, const Labeling& pseudo,
                      const SelfTrainConfig& cfg);

/// Per-row argmax mapped back to pseudo-label ids.
Labeling predict(const Classifier& clf, const EmbeddingMatrix& features);

/// "CLF1": u32 C, u32 d, f64 lr, f64 final_loss, u32 class ids, float64
/// W (C x d) and b, then norm mean, var, gamma, beta.
void save_classifier(const Classifier& clf, const std::filesystem::path& path);
Classifier load_classifier(const std::filesystem::path& path);

}  // namespace icce
