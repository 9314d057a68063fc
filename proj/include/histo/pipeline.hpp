#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "histo/classifier.hpp"
#include "histo/dataset.hpp"
#include "histo/fusion.hpp"
#include "histo/refinement.hpp"
#include "histo/stain.hpp"

namespace histo {

/// All knobs in one place, populated from an INI-style config file. Every
/// field has a config key; unknown keys are a parse error.
struct PipelineConfig {
  std::uint64_t seed = 1;
  std::string classifier = "baseline";  // baseline | fixed-truth | random | external
  std::string target_image;             // empty: first training slide
  std::string external_probs_macenko;
  std::string external_probs_vahadane;

  SnmfOptions stain;
  int train_stride = 256;
  int random_patches_per_slide = 0;
  bool jitter = false;
  JitterParams jitter_params;
  BaselineOptions baseline;
  FusionTrainOptions fusion;
  RefinementTrainOptions refinement;
};

PipelineConfig parse_config_text(const std::string& text);
PipelineConfig load_config(const std::string& path);

/// The six per-normalization fusion strategies, in report column order.
inline constexpr std::array<PredictorSource, 6> kPredictorOrder = {
    PredictorSource::macenko_mv,  PredictorSource::macenko_lr, PredictorSource::macenko_gbm,
    PredictorSource::vahadane_mv, PredictorSource::vahadane_lr, PredictorSource::vahadane_gbm,
};

struct SlidePrediction {
  std::string slide;
  ClassLabel truth = ClassLabel::normal;
  std::array<ClassLabel, 6> predictor{};  // kPredictorOrder
  ClassLabel ensemble = ClassLabel::normal;
  bool refined = false;
  ClassLabel final_label = ClassLabel::normal;
};

struct PipelineResult {
  std::vector<SlidePrediction> predictions;  // test slides, manifest order
  EvaluationReport report;
};

/// Full train-and-evaluate pass: fits both normalization targets, trains the
/// configured patch classifier, the per-scheme fusion models, and the
/// benign/normal refinement stage, then predicts every test slide. Writes
/// normalized images, model files, predictions.csv, report.txt, and
/// report.json under out_dir. Single-threaded and deterministic: rerunning
/// with the same inputs reproduces every output byte.
PipelineResult run_pipeline(const DatasetManifest& manifest, const PipelineConfig& config,
                            const std::string& out_dir);

void write_predictions_csv(const std::vector<SlidePrediction>& rows, const std::string& path);

}  // namespace histo
