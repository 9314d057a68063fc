#pragma once

#include <string>
#include <vector>

#include "histo/classifier.hpp"
#include "histo/ml.hpp"
#include "histo/stain.hpp"

namespace histo {

enum class BinaryLabel { benign = 0, normal = 1 };

std::string to_string(BinaryLabel label);
BinaryLabel binary_label_from_string(const std::string& name);

inline constexpr int kNumRefinementFeatures = 2 * kNumPatchFeatures;  // mean + std pooling

/// 38 descriptors: per-component mean and standard deviation of the 19-dim
/// patch features over the image's non-overlapping 512 tiles. Pooling makes
/// the result invariant to tile order.
std::vector<double> extract_refinement_features(const RgbImage& image, const StainMatrix& stains);

struct RefinementModels {
  FeatureScaler scaler;
  ml::GbmModel gbm;
  ml::SvmModel svm;
  ml::LinearModel lr;
};

struct RefinementTrainOptions {
  int gbm_estimators = 280;
  int gbm_max_depth = 4;
  double gbm_learning_rate = 0.9;
  double svm_c = 1.0;
  int svm_epochs = 200;
  double lr_lambda = 0.01;
  int lr_epochs = 400;
  double lr_step = 0.5;
  std::uint64_t seed = 0;
};

/// Trains the three binary models (GBM, SVM, L1-LR) on standardized features.
/// Both labels must be present; DegenerateTrainingError otherwise.
RefinementModels train_refinement(const ml::Matrix& features,
                                  const std::vector<BinaryLabel>& labels,
                                  const RefinementTrainOptions& options = {});

/// 2-of-3 majority over the three model predictions. Per-model exact ties
/// resolve to benign, the more severe reading.
BinaryLabel refine_predict(const std::vector<double>& features, const RefinementModels& models);

void save_refinement_models(const RefinementModels& models, const std::string& path);
RefinementModels load_refinement_models(const std::string& path);

struct RefinementFeatureRow {
  std::string slide;
  int label = -1;  // BinaryLabel index, or -1 when unknown
  std::vector<double> features;
};

/// Inspection dump: slide id, label, then the 38 feature columns.
void write_refinement_features_csv(const std::vector<RefinementFeatureRow>& rows,
                                   const std::string& path);

}  // namespace histo
