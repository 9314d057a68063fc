#include "histo/fusion.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "histo/util.hpp"

namespace histo {

HeatmapTensor::HeatmapTensor(int r, int c) : rows(r), cols(c) {
  if (r < 1 || c < 1) throw std::invalid_argument("heatmap dimensions must be positive");
  probs.assign(static_cast<std::size_t>(kNumOrientations) * kNumClasses * r * c, 0.0);
}

void HeatmapTensor::validate() const {
  if (rows < 1 || cols < 1 ||
      probs.size() != static_cast<std::size_t>(kNumOrientations) * kNumClasses * rows * cols)
    throw std::invalid_argument("malformed heatmap tensor");
  for (int o = 0; o < kNumOrientations; ++o) {
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        double sum = 0.0;
        for (int k = 0; k < kNumClasses; ++k) {
          const double v = at(o, k, r, c);
          if (!(v >= 0.0)) throw std::invalid_argument("negative heatmap probability");
          sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-6)
          throw std::invalid_argument("heatmap class slice sums to " + format_double(sum));
      }
    }
  }
}

std::string to_string(PredictorSource s) {
  switch (s) {
    case PredictorSource::macenko_mv: return "macenko_mv";
    case PredictorSource::macenko_lr: return "macenko_lr";
    case PredictorSource::macenko_gbm: return "macenko_gbm";
    case PredictorSource::vahadane_mv: return "vahadane_mv";
    case PredictorSource::vahadane_lr: return "vahadane_lr";
    case PredictorSource::vahadane_gbm: return "vahadane_gbm";
    case PredictorSource::ensemble: return "ensemble";
    case PredictorSource::refined: return "refined";
  }
  throw std::invalid_argument("unknown predictor source");
}

HeatmapTensor build_heatmap(const RgbImage& image, const PatchClassifier& classifier) {
  if (image.width < kPatchSide || image.height < kPatchSide)
    throw std::invalid_argument("image smaller than one tile");
  const std::vector<int> xs = grid_starts(image.width, kPatchSide, kPatchSide, true);
  const std::vector<int> ys = grid_starts(image.height, kPatchSide, kPatchSide, true);

  HeatmapTensor h(static_cast<int>(ys.size()), static_cast<int>(xs.size()));
  for (int r = 0; r < h.rows; ++r) {
    for (int c = 0; c < h.cols; ++c) {
      const Patch tile = extract_patch(image, xs[c], ys[r], kPatchSide);
      for (int o = 0; o < kNumOrientations; ++o) {
        const PatchProbabilities p = classifier.classify(apply_orientation(tile, o));
        p.validate();
        for (int k = 0; k < kNumClasses; ++k) h.at(o, k, r, c) = p[k];
      }
    }
  }
  return h;
}

ClassLabel severity_argmax(const std::array<double, kNumClasses>& scores) {
  int best = 0;
  for (int k = 1; k < kNumClasses; ++k)
    if (scores[k] >= scores[best]) best = k;  // >=: higher index = higher severity
  return class_label_from_index(best);
}

ClassLabel severity_argmax(const std::vector<double>& scores) {
  if (scores.size() != kNumClasses) throw std::invalid_argument("expected 4 class scores");
  std::array<double, kNumClasses> a;
  std::copy(scores.begin(), scores.end(), a.begin());
  return severity_argmax(a);
}

ClassMap average_class_map(const HeatmapTensor& h) {
  h.validate();
  ClassMap m;
  m.rows = h.rows;
  m.cols = h.cols;
  m.cells.reserve(static_cast<std::size_t>(h.rows) * h.cols);
  for (int r = 0; r < h.rows; ++r) {
    for (int c = 0; c < h.cols; ++c) {
      std::array<double, kNumClasses> mean{};
      for (int o = 0; o < kNumOrientations; ++o)
        for (int k = 0; k < kNumClasses; ++k) mean[k] += h.at(o, k, r, c);
      for (double& v : mean) v /= kNumOrientations;
      m.cells.push_back(severity_argmax(mean));
    }
  }
  return m;
}

ClassLabel majority_vote(const ClassMap& m) {
  if (m.cells.empty()) throw std::invalid_argument("empty class map");
  std::array<long long, kNumClasses> counts{};
  for (ClassLabel label : m.cells) ++counts[static_cast<std::size_t>(label)];
  int best = 0;
  for (int k = 1; k < kNumClasses; ++k)
    if (counts[k] >= counts[best]) best = k;
  return class_label_from_index(best);
}

std::array<ClassMap, kNumOrientations> per_orientation_class_maps(const HeatmapTensor& h) {
  h.validate();
  std::array<ClassMap, kNumOrientations> maps;
  for (int o = 0; o < kNumOrientations; ++o) {
    ClassMap& m = maps[static_cast<std::size_t>(o)];
    m.rows = h.rows;
    m.cols = h.cols;
    m.cells.reserve(static_cast<std::size_t>(h.rows) * h.cols);
    for (int r = 0; r < h.rows; ++r) {
      for (int c = 0; c < h.cols; ++c) {
        std::array<double, kNumClasses> p;
        for (int k = 0; k < kNumClasses; ++k) p[static_cast<std::size_t>(k)] = h.at(o, k, r, c);
        m.cells.push_back(severity_argmax(p));
      }
    }
  }
  return maps;
}

ClassHistogram class_histogram(const std::array<ClassMap, kNumOrientations>& maps) {
  ClassHistogram hist{};
  const int rows = maps[0].rows;
  const int cols = maps[0].cols;
  for (const ClassMap& m : maps) {
    if (m.rows != rows || m.cols != cols ||
        m.cells.size() != static_cast<std::size_t>(rows) * cols)
      throw std::invalid_argument("class map dimension mismatch");
    for (ClassLabel label : m.cells) ++hist[static_cast<std::size_t>(label)];
  }
  return hist;
}

std::vector<double> histogram_features(const ClassHistogram& hist) {
  std::vector<double> out(kNumClasses);
  for (int k = 0; k < kNumClasses; ++k) out[k] = static_cast<double>(hist[k]);
  return out;
}

FusionModels train_fusion_models(const std::vector<ClassHistogram>& histograms,
                                 const std::vector<ClassLabel>& labels,
                                 const FusionTrainOptions& options) {
  if (histograms.size() != labels.size())
    throw std::invalid_argument("histogram and label counts differ");
  ml::Matrix X;
  std::vector<int> y;
  X.reserve(histograms.size());
  y.reserve(labels.size());
  for (std::size_t i = 0; i < histograms.size(); ++i) {
    X.push_back(histogram_features(histograms[i]));
    y.push_back(static_cast<int>(labels[i]));
  }
  FusionModels models;
  models.lr = ml::train_logistic_l1(X, y, options.lr_lambda, options.lr_epochs, options.lr_step,
                                    options.seed, nullptr, kNumClasses);
  models.gbm = ml::train_gbm(X, y, options.gbm_estimators, options.gbm_max_depth,
                             options.gbm_learning_rate, options.seed, nullptr, kNumClasses);
  return models;
}

ClassLabel predict_majority(const HeatmapTensor& h) { return majority_vote(average_class_map(h)); }

ClassLabel predict_histogram_lr(const HeatmapTensor& h, const ml::LinearModel& model) {
  const ClassHistogram hist = class_histogram(per_orientation_class_maps(h));
  return severity_argmax(ml::predict_logistic(model, histogram_features(hist)));
}

ClassLabel predict_histogram_gbm(const HeatmapTensor& h, const ml::GbmModel& model) {
  const ClassHistogram hist = class_histogram(per_orientation_class_maps(h));
  return severity_argmax(ml::predict_gbm(model, histogram_features(hist)));
}

ImagePrediction ensemble_predict(const std::vector<ImagePrediction>& preds) {
  if (preds.size() != 6) throw std::invalid_argument("ensemble expects exactly 6 predictions");
  std::array<long long, kNumClasses> counts{};
  for (const ImagePrediction& p : preds) ++counts[static_cast<std::size_t>(p.label)];
  int best = 0;
  for (int k = 1; k < kNumClasses; ++k)
    if (counts[k] >= counts[best]) best = k;
  return ImagePrediction{class_label_from_index(best), PredictorSource::ensemble, false};
}

bool route_refinement(const ImagePrediction& p) {
  return p.label == ClassLabel::benign || p.label == ClassLabel::normal;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {
constexpr const char* kHeatmapMagic = "histopipe-heatmap 1";
constexpr const char* kFusionMagic = "histopipe-fusion 1";
}  // namespace

void write_heatmap(const HeatmapTensor& h, const std::string& path) {
  h.validate();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write heatmap: " + path);
  out << kHeatmapMagic << "\n";
  out << kNumOrientations << " " << kNumClasses << " " << h.rows << " " << h.cols << "\n";
  for (int o = 0; o < kNumOrientations; ++o) {
    for (int k = 0; k < kNumClasses; ++k) {
      for (int r = 0; r < h.rows; ++r) {
        for (int c = 0; c < h.cols; ++c) {
          out << format_double(h.at(o, k, r, c));
          out << (c + 1 == h.cols ? "\n" : " ");
        }
      }
    }
  }
  if (!out) throw std::runtime_error("short write to heatmap: " + path);
}

HeatmapTensor read_heatmap(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open heatmap: " + path);
  std::string line;
  if (!std::getline(in, line) || trim(line) != kHeatmapMagic)
    throw FormatVersionError("not a '" + std::string(kHeatmapMagic) + "' file: " + path);
  const long long orientations = read_int_token(in, "heatmap shape");
  const long long classes = read_int_token(in, "heatmap shape");
  const long long rows = read_int_token(in, "heatmap shape");
  const long long cols = read_int_token(in, "heatmap shape");
  if (orientations != kNumOrientations || classes != kNumClasses || rows < 1 || cols < 1)
    throw ParseError("unsupported heatmap shape");
  HeatmapTensor h(static_cast<int>(rows), static_cast<int>(cols));
  for (double& v : h.probs) v = read_double_token(in, "heatmap payload");
  h.validate();
  return h;
}

void write_class_map_csv(const ClassMap& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write class map: " + path);
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c < m.cols; ++c) out << to_string(m.at(r, c)) << (c + 1 == m.cols ? "\n" : ",");
  }
  if (!out) throw std::runtime_error("short write to class map: " + path);
}

void write_histogram_csv(const ClassHistogram& hist, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write histogram: " + path);
  out << "normal,benign,insitu,invasive\n";
  for (int k = 0; k < kNumClasses; ++k) out << hist[k] << (k + 1 == kNumClasses ? "\n" : ",");
  if (!out) throw std::runtime_error("short write to histogram: " + path);
}

void save_fusion_models(const FusionModels& models, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write fusion models: " + path);
  out << kFusionMagic << "\n";
  ml::write_linear_model(out, models.lr);
  ml::write_gbm_model(out, models.gbm);
  if (!out) throw std::runtime_error("short write to fusion models: " + path);
}

FusionModels load_fusion_models(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open fusion models: " + path);
  std::string line;
  if (!std::getline(in, line) || trim(line) != kFusionMagic)
    throw FormatVersionError("not a '" + std::string(kFusionMagic) + "' file: " + path);
  FusionModels models;
  models.lr = ml::read_linear_model(in);
  models.gbm = ml::read_gbm_model(in);
  return models;
}

}  // namespace histo
