#include "histo/refinement.hpp"

#include <cmath>
#include <fstream>

#include "histo/fusion.hpp"
#include "histo/util.hpp"

namespace histo {

std::string to_string(BinaryLabel label) {
  return label == BinaryLabel::benign ? "benign" : "normal";
}

BinaryLabel binary_label_from_string(const std::string& name) {
  if (name == "benign") return BinaryLabel::benign;
  if (name == "normal") return BinaryLabel::normal;
  throw std::invalid_argument("unknown binary label '" + name + "'");
}

std::vector<double> extract_refinement_features(const RgbImage& image,
                                                const StainMatrix& stains) {
  if (image.width < kPatchSide || image.height < kPatchSide)
    throw std::invalid_argument("image smaller than one tile");
  const std::vector<Patch> tiles = grid_patches(image, kPatchSide, kPatchSide, true);

  ml::Matrix per_tile;
  per_tile.reserve(tiles.size());
  for (const Patch& tile : tiles) per_tile.push_back(extract_patch_features(tile, stains));

  const double n = static_cast<double>(per_tile.size());
  std::vector<double> out(kNumRefinementFeatures, 0.0);
  for (int j = 0; j < kNumPatchFeatures; ++j) {
    double mean = 0.0;
    for (const auto& row : per_tile) mean += row[j];
    mean /= n;
    double var = 0.0;
    for (const auto& row : per_tile) var += (row[j] - mean) * (row[j] - mean);
    out[static_cast<std::size_t>(2 * j)] = mean;
    out[static_cast<std::size_t>(2 * j + 1)] = std::sqrt(var / n);
  }
  return out;
}

RefinementModels train_refinement(const ml::Matrix& features,
                                  const std::vector<BinaryLabel>& labels,
                                  const RefinementTrainOptions& options) {
  if (features.size() != labels.size())
    throw std::invalid_argument("feature and label counts differ");
  if (features.empty()) throw std::invalid_argument("empty refinement training set");

  RefinementModels models;
  models.scaler.fit(features);
  ml::Matrix X;
  X.reserve(features.size());
  for (const auto& row : features) X.push_back(models.scaler.transform(row));

  std::vector<int> y01;
  std::vector<int> ypm;
  y01.reserve(labels.size());
  ypm.reserve(labels.size());
  for (BinaryLabel label : labels) {
    y01.push_back(static_cast<int>(label));
    ypm.push_back(label == BinaryLabel::benign ? 1 : -1);
  }

  models.gbm = ml::train_gbm(X, y01, options.gbm_estimators, options.gbm_max_depth,
                             options.gbm_learning_rate, options.seed, nullptr, 2);
  models.svm = ml::train_svm(X, ypm, options.svm_c, options.svm_epochs, options.seed);
  models.lr = ml::train_logistic_l1(X, y01, options.lr_lambda, options.lr_epochs,
                                    options.lr_step, options.seed, nullptr, 2);
  return models;
}

BinaryLabel refine_predict(const std::vector<double>& features, const RefinementModels& models) {
  const std::vector<double> x = models.scaler.transform(features);

  // Index 0 is benign; ties fall to benign in all three voters.
  const std::vector<double> p_gbm = ml::predict_gbm(models.gbm, x);
  const std::vector<double> p_lr = ml::predict_logistic(models.lr, x);
  int benign_votes = 0;
  if (p_gbm[0] >= p_gbm[1]) ++benign_votes;
  if (p_lr[0] >= p_lr[1]) ++benign_votes;
  if (ml::svm_predict(models.svm, x) == 1) ++benign_votes;
  return benign_votes >= 2 ? BinaryLabel::benign : BinaryLabel::normal;
}

namespace {
constexpr const char* kRefinementMagic = "histopipe-refinement 1";
}

void save_refinement_models(const RefinementModels& models, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write refinement models: " + path);
  out << kRefinementMagic << "\n";
  write_feature_scaler(out, models.scaler);
  ml::write_gbm_model(out, models.gbm);
  ml::write_svm_model(out, models.svm);
  ml::write_linear_model(out, models.lr);
  if (!out) throw std::runtime_error("short write to refinement models: " + path);
}

RefinementModels load_refinement_models(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open refinement models: " + path);
  std::string line;
  if (!std::getline(in, line) || trim(line) != kRefinementMagic)
    throw FormatVersionError("not a '" + std::string(kRefinementMagic) + "' file: " + path);
  RefinementModels models;
  models.scaler = read_feature_scaler(in);
  models.gbm = ml::read_gbm_model(in);
  models.svm = ml::read_svm_model(in);
  models.lr = ml::read_linear_model(in);
  return models;
}

void write_refinement_features_csv(const std::vector<RefinementFeatureRow>& rows,
                                   const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write refinement features: " + path);
  out << "slide,label";
  for (int j = 0; j < kNumRefinementFeatures; ++j) out << ",f" << j;
  out << "\n";
  for (const RefinementFeatureRow& row : rows) {
    if (row.slide.empty() || row.slide.find(',') != std::string::npos)
      throw std::invalid_argument("bad slide id '" + row.slide + "'");
    if (row.features.size() != kNumRefinementFeatures)
      throw std::invalid_argument("refinement feature row has wrong dimension");
    out << row.slide << ",";
    if (row.label < 0)
      out << -1;
    else
      out << to_string(static_cast<BinaryLabel>(row.label));
    for (double v : row.features) out << "," << format_double(v);
    out << "\n";
  }
  if (!out) throw std::runtime_error("short write to refinement features: " + path);
}

}  // namespace histo
