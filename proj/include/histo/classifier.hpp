#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <tuple>
#include <vector>

#include "histo/ml.hpp"
#include "histo/patch.hpp"
#include "histo/stain.hpp"

namespace histo {

inline constexpr int kPatchSide = 512;
inline constexpr int kNumPatchFeatures = 19;

/// Four-class distribution in ClassLabel order (normal, benign, insitu, invasive).
struct PatchProbabilities {
  std::array<double, kNumClasses> p{0.0, 0.0, 0.0, 0.0};

  double operator[](int i) const { return p[static_cast<std::size_t>(i)]; }
  double& operator[](int i) { return p[static_cast<std::size_t>(i)]; }

  /// Throws std::invalid_argument unless every component is >= 0 and the sum
  /// is within 1e-6 of 1.
  void validate() const;
};

/// Source of per-patch class probabilities. Implementations must be
/// deterministic for a fixed model and accept exactly 512x512 patches.
class PatchClassifier {
 public:
  virtual ~PatchClassifier() = default;
  virtual PatchProbabilities classify(const Patch& patch) const = 0;
};

/// 19 descriptors: H mean/std/p10/p50/p90, E mean/std/p10/p50/p90, fraction of
/// pixels with H concentration above 0.5, and an 8-bin luminance histogram
/// normalized to sum 1. Concentrations come from per-pixel NNLS against
/// `stains` with no rescaling.
std::vector<double> extract_patch_features(const Patch& patch, const StainMatrix& stains);

/// Per-feature standardization fitted on a training matrix.
struct FeatureScaler {
  std::vector<double> mean;
  std::vector<double> stddev;  // zero-variance features keep stddev 1

  void fit(const ml::Matrix& rows);
  std::vector<double> transform(const std::vector<double>& x) const;
};

void write_feature_scaler(std::ostream& out, const FeatureScaler& scaler);
FeatureScaler read_feature_scaler(std::istream& in);

struct BaselineOptions {
  double lambda = 0.01;
  int epochs = 300;
  double step = 0.5;
  std::uint64_t seed = 0;
};

/// extract_patch_features + scaling + multinomial L1 logistic regression.
/// With all-zero weights classify returns the uniform distribution.
class BaselineClassifier : public PatchClassifier {
 public:
  BaselineClassifier() = default;
  BaselineClassifier(StainMatrix stains, FeatureScaler scaler, ml::LinearModel model);

  PatchProbabilities classify(const Patch& patch) const override;

  const StainMatrix& stains() const { return stains_; }
  const FeatureScaler& scaler() const { return scaler_; }
  const ml::LinearModel& model() const { return model_; }

  void save(const std::string& path) const;
  static BaselineClassifier load(const std::string& path);

 private:
  StainMatrix stains_;
  FeatureScaler scaler_;
  ml::LinearModel model_;
};

/// Trains the baseline on labeled patches. Throws std::invalid_argument on an
/// unlabeled patch and DegenerateTrainingError when fewer than two classes are
/// present. The model always emits all four classes.
BaselineClassifier train_baseline(const std::vector<Patch>& patches, const StainMatrix& stains,
                                  const BaselineOptions& options = {});

/// Always answers with the same one-hot distribution; stands in for an oracle
/// that knows the slide's true label.
class FixedLabelClassifier : public PatchClassifier {
 public:
  explicit FixedLabelClassifier(ClassLabel label) : label_(label) {}
  PatchProbabilities classify(const Patch& patch) const override;

 private:
  ClassLabel label_;
};

/// Hash-driven distribution over the patch origin, orientation, and a pixel
/// sample. Stable across runs; useful for exercising downstream plumbing.
class PseudorandomClassifier : public PatchClassifier {
 public:
  explicit PseudorandomClassifier(std::uint64_t seed = 0) : seed_(seed) {}
  PatchProbabilities classify(const Patch& patch) const override;

 private:
  std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// External probability exchange
// ---------------------------------------------------------------------------

struct ProbabilityRecord {
  std::string slide;
  int x = 0;
  int y = 0;
  int orientation = 0;
  PatchProbabilities probs;
};

using ProbabilityKey = std::tuple<std::string, int, int, int>;

/// Lookup from (slide, x, y, orientation) to a probability vector.
struct ExternalProbabilityTable {
  std::map<ProbabilityKey, PatchProbabilities> rows;

  const PatchProbabilities& at(const std::string& slide, int x, int y, int orientation) const;
};

void write_probability_file(const std::string& path, const std::vector<ProbabilityRecord>& rows);
std::vector<ProbabilityRecord> read_probability_file(const std::string& path);

/// Joins a manifest against a probability file. Every manifest record must
/// have a matching row (missing-probability error otherwise). Rows whose
/// probabilities miss sum 1 by at most 1e-3 are renormalized; worse rows are
/// a parse error carrying the line number.
ExternalProbabilityTable load_external_probabilities(const std::vector<PatchRecord>& manifest,
                                                     const std::string& path);

/// Serves stored probabilities for one slide; the patch supplies (x, y,
/// orientation). Unknown keys raise MissingProbabilityError.
class ExternalProbabilityClassifier : public PatchClassifier {
 public:
  ExternalProbabilityClassifier(std::shared_ptr<const ExternalProbabilityTable> table,
                                std::string slide);
  PatchProbabilities classify(const Patch& patch) const override;

 private:
  std::shared_ptr<const ExternalProbabilityTable> table_;
  std::string slide_;
};

}  // namespace histo
