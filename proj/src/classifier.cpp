#include "histo/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "histo/util.hpp"

namespace histo {

namespace {

constexpr double kHConcentrationThreshold = 0.5;

void require_patch_size(const Patch& patch) {
  if (patch.image.width != kPatchSide || patch.image.height != kPatchSide)
    throw std::invalid_argument("classifier expects " + std::to_string(kPatchSide) + "x" +
                                std::to_string(kPatchSide) + " patches");
}

PatchProbabilities uniform_probabilities() {
  PatchProbabilities out;
  out.p.fill(1.0 / kNumClasses);
  return out;
}

double mean_of(const std::vector<double>& v) {
  double total = 0.0;
  for (double x : v) total += x;
  return total / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v, double mean) {
  double total = 0.0;
  for (double x : v) total += (x - mean) * (x - mean);
  return std::sqrt(total / static_cast<double>(v.size()));
}

}  // namespace

void PatchProbabilities::validate() const {
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw std::invalid_argument("negative class probability");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw std::invalid_argument("class probabilities sum to " + format_double(sum));
}

std::vector<double> extract_patch_features(const Patch& patch, const StainMatrix& stains) {
  const RgbImage& img = patch.image;
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  if (n == 0) throw std::invalid_argument("empty patch");

  const ConcentrationMap cmap = compute_concentrations(img, stains);
  std::vector<double> h(n), e(n);
  for (std::size_t i = 0; i < n; ++i) {
    h[i] = cmap.conc[2 * i];
    e[i] = cmap.conc[2 * i + 1];
  }

  std::vector<double> features;
  features.reserve(kNumPatchFeatures);
  for (const std::vector<double>* stain : {&h, &e}) {
    const double mean = mean_of(*stain);
    features.push_back(mean);
    features.push_back(stddev_of(*stain, mean));
    features.push_back(percentile(*stain, 10.0));
    features.push_back(percentile(*stain, 50.0));
    features.push_back(percentile(*stain, 90.0));
  }

  std::size_t above = 0;
  for (double v : h)
    if (v > kHConcentrationThreshold) ++above;
  features.push_back(static_cast<double>(above) / static_cast<double>(n));

  std::array<double, 8> hist{};
  const std::uint8_t* px = img.pixels.data();
  for (std::size_t i = 0; i < n; ++i, px += 3) {
    const double luma = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
    const int bin = std::min(7, static_cast<int>(luma / 32.0));
    hist[static_cast<std::size_t>(bin)] += 1.0;
  }
  for (double bin : hist) features.push_back(bin / static_cast<double>(n));
  return features;
}

// ---------------------------------------------------------------------------
// Feature scaling
// ---------------------------------------------------------------------------

void FeatureScaler::fit(const ml::Matrix& rows) {
  if (rows.empty()) throw std::invalid_argument("cannot fit scaler on empty matrix");
  const std::size_t f = rows[0].size();
  mean.assign(f, 0.0);
  stddev.assign(f, 0.0);
  for (const auto& row : rows) {
    if (row.size() != f) throw std::invalid_argument("ragged feature matrix");
    for (std::size_t j = 0; j < f; ++j) mean[j] += row[j];
  }
  for (double& m : mean) m /= static_cast<double>(rows.size());
  for (const auto& row : rows)
    for (std::size_t j = 0; j < f; ++j) stddev[j] += (row[j] - mean[j]) * (row[j] - mean[j]);
  for (double& s : stddev) {
    s = std::sqrt(s / static_cast<double>(rows.size()));
    if (s < 1e-12) s = 1.0;
  }
}

std::vector<double> FeatureScaler::transform(const std::vector<double>& x) const {
  if (x.size() != mean.size())
    throw std::invalid_argument("feature dimension mismatch in scaler");
  std::vector<double> out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - mean[j]) / stddev[j];
  return out;
}

void write_feature_scaler(std::ostream& out, const FeatureScaler& scaler) {
  out << "scaler 1\n";
  out << "dim " << scaler.mean.size() << "\n";
  out << "mean";
  for (double v : scaler.mean) out << " " << format_double(v);
  out << "\nstd";
  for (double v : scaler.stddev) out << " " << format_double(v);
  out << "\nend scaler\n";
}

FeatureScaler read_feature_scaler(std::istream& in) {
  expect_token(in, "scaler", "feature scaler");
  expect_token(in, "1", "feature scaler");
  expect_token(in, "dim", "feature scaler");
  const long long dim = read_int_token(in, "scaler dim");
  if (dim < 1) throw ParseError("bad scaler dimension");
  FeatureScaler scaler;
  scaler.mean.resize(static_cast<std::size_t>(dim));
  scaler.stddev.resize(static_cast<std::size_t>(dim));
  expect_token(in, "mean", "feature scaler");
  for (double& v : scaler.mean) v = read_double_token(in, "scaler mean");
  expect_token(in, "std", "feature scaler");
  for (double& v : scaler.stddev) v = read_double_token(in, "scaler std");
  expect_token(in, "end", "feature scaler");
  expect_token(in, "scaler", "feature scaler");
  return scaler;
}

// ---------------------------------------------------------------------------
// Baseline classifier
// ---------------------------------------------------------------------------

BaselineClassifier::BaselineClassifier(StainMatrix stains, FeatureScaler scaler,
                                       ml::LinearModel model)
    : stains_(stains), scaler_(std::move(scaler)), model_(std::move(model)) {}

PatchProbabilities BaselineClassifier::classify(const Patch& patch) const {
  require_patch_size(patch);
  if (model_.weights.empty()) return uniform_probabilities();
  const std::vector<double> x = scaler_.transform(extract_patch_features(patch, stains_));
  const std::vector<double> scores = ml::predict_logistic(model_, x);
  if (scores.size() != kNumClasses)
    throw std::invalid_argument("baseline model does not emit four classes");
  PatchProbabilities out;
  std::copy(scores.begin(), scores.end(), out.p.begin());
  out.validate();
  return out;
}

void BaselineClassifier::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write baseline model: " + path);
  out << "histopipe-baseline 1\n";
  out << "hematoxylin";
  for (int i = 0; i < 3; ++i) out << " " << format_double(stains_.hematoxylin[i]);
  out << "\neosin";
  for (int i = 0; i < 3; ++i) out << " " << format_double(stains_.eosin[i]);
  out << "\n";
  write_feature_scaler(out, scaler_);
  ml::write_linear_model(out, model_);
  if (!out) throw std::runtime_error("short write to baseline model: " + path);
}

BaselineClassifier BaselineClassifier::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open baseline model: " + path);
  std::string line;
  if (!std::getline(in, line) || trim(line) != "histopipe-baseline 1")
    throw FormatVersionError("not a 'histopipe-baseline 1' file: " + path);
  StainMatrix stains;
  expect_token(in, "hematoxylin", "baseline model");
  for (int i = 0; i < 3; ++i) stains.hematoxylin[i] = read_double_token(in, "baseline stains");
  expect_token(in, "eosin", "baseline model");
  for (int i = 0; i < 3; ++i) stains.eosin[i] = read_double_token(in, "baseline stains");
  stains.validate();
  FeatureScaler scaler = read_feature_scaler(in);
  ml::LinearModel model = ml::read_linear_model(in);
  return BaselineClassifier(stains, std::move(scaler), std::move(model));
}

BaselineClassifier train_baseline(const std::vector<Patch>& patches, const StainMatrix& stains,
                                  const BaselineOptions& options) {
  if (patches.empty()) throw std::invalid_argument("no patches to train on");
  ml::Matrix features;
  std::vector<int> labels;
  features.reserve(patches.size());
  labels.reserve(patches.size());
  for (const Patch& patch : patches) {
    if (!patch.label) throw std::invalid_argument("unlabeled patch in baseline training set");
    features.push_back(extract_patch_features(patch, stains));
    labels.push_back(static_cast<int>(*patch.label));
  }
  FeatureScaler scaler;
  scaler.fit(features);
  for (auto& row : features) row = scaler.transform(row);
  ml::LinearModel model =
      ml::train_logistic_l1(features, labels, options.lambda, options.epochs, options.step,
                            options.seed, nullptr, kNumClasses);
  return BaselineClassifier(stains, std::move(scaler), std::move(model));
}

// ---------------------------------------------------------------------------
// Stand-in classifiers
// ---------------------------------------------------------------------------

PatchProbabilities FixedLabelClassifier::classify(const Patch& patch) const {
  require_patch_size(patch);
  PatchProbabilities out;
  out[static_cast<int>(label_)] = 1.0;
  return out;
}

PatchProbabilities PseudorandomClassifier::classify(const Patch& patch) const {
  require_patch_size(patch);
  std::ostringstream key;
  key << patch.x << ":" << patch.y << ":" << static_cast<int>(patch.orientation);
  const int last = kPatchSide - 1;
  for (auto [px, py] : {std::pair{0, 0}, {last, 0}, {0, last}, {last, last},
                        {kPatchSide / 2, kPatchSide / 2}}) {
    const std::uint8_t* p = patch.image.at(px, py);
    key << ":" << static_cast<int>(p[0]) << "," << static_cast<int>(p[1]) << ","
        << static_cast<int>(p[2]);
  }
  Rng rng(sub_seed(seed_, key.str()));
  PatchProbabilities out;
  double sum = 0.0;
  for (double& v : out.p) {
    v = uniform01(rng) + 1e-3;
    sum += v;
  }
  for (double& v : out.p) v /= sum;
  return out;
}

// ---------------------------------------------------------------------------
// External probability exchange
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kProbabilityHeader =
    "slide,x,y,orientation,p_normal,p_benign,p_insitu,p_invasive";

void check_probability_record(const ProbabilityRecord& r) {
  if (r.slide.empty() || r.slide.find(',') != std::string::npos)
    throw std::invalid_argument("bad slide id '" + r.slide + "'");
  if (r.x < 0 || r.y < 0) throw std::invalid_argument("negative patch origin");
  if (r.orientation < 0 || r.orientation > 7)
    throw std::invalid_argument("orientation out of range");
  r.probs.validate();
}

}  // namespace

const PatchProbabilities& ExternalProbabilityTable::at(const std::string& slide, int x, int y,
                                                       int orientation) const {
  auto it = rows.find(ProbabilityKey(slide, x, y, orientation));
  if (it == rows.end())
    throw MissingProbabilityError("no probability row for " + slide + " at (" +
                                  std::to_string(x) + "," + std::to_string(y) + ") orientation " +
                                  std::to_string(orientation));
  return it->second;
}

void write_probability_file(const std::string& path, const std::vector<ProbabilityRecord>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write probability file: " + path);
  out << kProbabilityHeader << "\n";
  for (const ProbabilityRecord& r : rows) {
    check_probability_record(r);
    out << r.slide << "," << r.x << "," << r.y << "," << r.orientation;
    for (double v : r.probs.p) out << "," << format_double(v);
    out << "\n";
  }
  if (!out) throw std::runtime_error("short write to probability file: " + path);
}

std::vector<ProbabilityRecord> read_probability_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open probability file: " + path);
  std::string line;
  long line_no = 1;
  if (!std::getline(in, line) || trim(line) != kProbabilityHeader)
    throw ParseError("missing probability header '" + std::string(kProbabilityHeader) + "'", 1);

  std::vector<ProbabilityRecord> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::vector<std::string> f = split_csv_line(line);
    if (f.size() != 8) throw ParseError("expected 8 fields in probability row", line_no);
    try {
      ProbabilityRecord r;
      r.slide = f[0];
      r.x = static_cast<int>(parse_int(f[1]));
      r.y = static_cast<int>(parse_int(f[2]));
      r.orientation = static_cast<int>(parse_int(f[3]));
      double sum = 0.0;
      for (int k = 0; k < kNumClasses; ++k) {
        r.probs[k] = parse_double(f[4 + k]);
        if (r.probs[k] < 0.0) throw std::invalid_argument("negative probability");
        sum += r.probs[k];
      }
      if (std::abs(sum - 1.0) > 1e-3)
        throw std::invalid_argument("probability row sums to " + format_double(sum));
      for (double& v : r.probs.p) v /= sum;
      if (r.slide.empty()) throw std::invalid_argument("empty slide id");
      if (r.x < 0 || r.y < 0) throw std::invalid_argument("negative patch origin");
      if (r.orientation < 0 || r.orientation > 7)
        throw std::invalid_argument("orientation out of range");
      rows.push_back(std::move(r));
    } catch (const std::invalid_argument& e) {
      throw ParseError(e.what(), line_no);
    } catch (const ParseError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return rows;
}

ExternalProbabilityTable load_external_probabilities(const std::vector<PatchRecord>& manifest,
                                                     const std::string& path) {
  ExternalProbabilityTable table;
  for (const ProbabilityRecord& r : read_probability_file(path)) {
    ProbabilityKey key(r.slide, r.x, r.y, r.orientation);
    if (!table.rows.emplace(std::move(key), r.probs).second)
      throw ParseError("duplicate probability row for " + r.slide + " at (" +
                       std::to_string(r.x) + "," + std::to_string(r.y) + ") orientation " +
                       std::to_string(r.orientation));
  }
  for (const PatchRecord& m : manifest) table.at(m.slide, m.x, m.y, m.orientation);
  return table;
}

ExternalProbabilityClassifier::ExternalProbabilityClassifier(
    std::shared_ptr<const ExternalProbabilityTable> table, std::string slide)
    : table_(std::move(table)), slide_(std::move(slide)) {
  if (!table_) throw std::invalid_argument("null probability table");
}

PatchProbabilities ExternalProbabilityClassifier::classify(const Patch& patch) const {
  require_patch_size(patch);
  return table_->at(slide_, patch.x, patch.y, patch.orientation);
}

}  // namespace histo
