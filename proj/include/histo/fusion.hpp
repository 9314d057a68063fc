#pragma once

#include <array>
#include <string>
#include <vector>

#include "histo/classifier.hpp"
#include "histo/ml.hpp"

namespace histo {

/// Per-image class probabilities indexed [orientation][class][row][col].
/// Rows and cols come from non-overlapping 512 tiling with edge clamp.
struct HeatmapTensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> probs;  // size 8 * 4 * rows * cols, index order above

  HeatmapTensor() = default;
  HeatmapTensor(int r, int c);

  std::size_t index(int o, int k, int r, int c) const {
    return ((static_cast<std::size_t>(o) * kNumClasses + k) * rows + r) * cols + c;
  }
  double at(int o, int k, int r, int c) const { return probs[index(o, k, r, c)]; }
  double& at(int o, int k, int r, int c) { return probs[index(o, k, r, c)]; }

  /// Checks every (orientation, row, col) class slice: nonnegative entries
  /// summing to 1 within 1e-6. Throws std::invalid_argument otherwise.
  void validate() const;
};

/// Grid of per-tile argmax labels.
struct ClassMap {
  int rows = 0;
  int cols = 0;
  std::vector<ClassLabel> cells;  // row-major

  ClassLabel at(int r, int c) const { return cells[static_cast<std::size_t>(r) * cols + c]; }
};

/// Counts per class over all cells of all 8 per-orientation maps; sums to
/// 8 * rows * cols.
using ClassHistogram = std::array<long long, kNumClasses>;

enum class PredictorSource {
  macenko_mv,
  macenko_lr,
  macenko_gbm,
  vahadane_mv,
  vahadane_lr,
  vahadane_gbm,
  ensemble,
  refined,
};

std::string to_string(PredictorSource s);

struct ImagePrediction {
  ClassLabel label = ClassLabel::normal;
  PredictorSource source = PredictorSource::ensemble;
  bool refined = false;
};

// ---------------------------------------------------------------------------
// Heatmap construction and the three fusion strategies
// ---------------------------------------------------------------------------

/// Tiles the image (size 512, stride 512, edge clamp) and classifies all 8
/// orientations of every tile. Images smaller than one tile are an error.
HeatmapTensor build_heatmap(const RgbImage& image, const PatchClassifier& classifier);

/// Argmax with exact ties resolved toward the more severe label
/// (invasive > in_situ > benign > normal).
ClassLabel severity_argmax(const std::array<double, kNumClasses>& scores);
ClassLabel severity_argmax(const std::vector<double>& scores);

/// Mean probabilities over the 8 orientations, then per-cell argmax.
ClassMap average_class_map(const HeatmapTensor& h);

/// Most frequent label in the map; plurality ties go to the more severe label.
ClassLabel majority_vote(const ClassMap& m);

/// Per-orientation argmax maps.
std::array<ClassMap, kNumOrientations> per_orientation_class_maps(const HeatmapTensor& h);

/// Label counts over all cells of all 8 maps. Maps must share dimensions.
ClassHistogram class_histogram(const std::array<ClassMap, kNumOrientations>& maps);

std::vector<double> histogram_features(const ClassHistogram& hist);

struct FusionModels {
  ml::LinearModel lr;
  ml::GbmModel gbm;
};

struct FusionTrainOptions {
  double lr_lambda = 0.01;
  int lr_epochs = 400;
  double lr_step = 0.5;
  int gbm_estimators = 280;
  int gbm_max_depth = 4;
  double gbm_learning_rate = 0.9;
  std::uint64_t seed = 0;
};

/// L1 logistic regression plus boosted trees over raw histogram counts.
FusionModels train_fusion_models(const std::vector<ClassHistogram>& histograms,
                                 const std::vector<ClassLabel>& labels,
                                 const FusionTrainOptions& options = {});

ClassLabel predict_majority(const HeatmapTensor& h);
ClassLabel predict_histogram_lr(const HeatmapTensor& h, const ml::LinearModel& model);
ClassLabel predict_histogram_gbm(const HeatmapTensor& h, const ml::GbmModel& model);

/// Plurality over exactly six predictor outputs; ties go to severity.
ImagePrediction ensemble_predict(const std::vector<ImagePrediction>& preds);

/// True iff the label should pass through the benign/normal refinement stage.
bool route_refinement(const ImagePrediction& p);

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

void write_heatmap(const HeatmapTensor& h, const std::string& path);
HeatmapTensor read_heatmap(const std::string& path);

void write_class_map_csv(const ClassMap& m, const std::string& path);
void write_histogram_csv(const ClassHistogram& hist, const std::string& path);

void save_fusion_models(const FusionModels& models, const std::string& path);
FusionModels load_fusion_models(const std::string& path);

}  // namespace histo
