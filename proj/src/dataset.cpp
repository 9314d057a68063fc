#include "histo/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

#include "histo/stain.hpp"
#include "histo/util.hpp"

namespace fs = std::filesystem;

namespace histo {

std::string to_string(SplitKind split) {
  switch (split) {
    case SplitKind::train: return "train";
    case SplitKind::val: return "val";
    case SplitKind::test: return "test";
  }
  throw std::invalid_argument("unknown split");
}

SplitKind split_from_string(const std::string& name) {
  if (name == "train") return SplitKind::train;
  if (name == "val") return SplitKind::val;
  if (name == "test") return SplitKind::test;
  throw std::invalid_argument("unknown split '" + name + "'");
}

std::vector<SlideEntry> DatasetManifest::subset(SplitKind split) const {
  std::vector<SlideEntry> out;
  for (const SlideEntry& e : slides)
    if (e.split == split) out.push_back(e);
  return out;
}

const SlideEntry& DatasetManifest::find(const std::string& slide) const {
  for (const SlideEntry& e : slides)
    if (e.slide == slide) return e;
  throw std::invalid_argument("unknown slide '" + slide + "'");
}

namespace {

void check_readable_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  char magic[2] = {0, 0};
  if (!in || !in.read(magic, 2) || magic[0] != 'P' || magic[1] != '6')
    throw std::runtime_error("unreadable image: " + path.string());
}

}  // namespace

DatasetManifest ingest_dataset(const std::string& root_dir, std::uint64_t seed) {
  DatasetManifest manifest;
  std::set<std::string> seen;
  for (int k = 0; k < kNumClasses; ++k) {
    const ClassLabel label = class_label_from_index(k);
    fs::path dir = fs::path(root_dir) / to_string(label);
    if (!fs::is_directory(dir) && label == ClassLabel::in_situ) {
      const fs::path alt = fs::path(root_dir) / "in_situ";
      if (fs::is_directory(alt)) dir = alt;
    }
    if (!fs::is_directory(dir))
      throw std::runtime_error("missing class directory: " + dir.string());

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_regular_file() && entry.path().extension() == ".ppm")
        files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("no .ppm images in " + dir.string());

    std::vector<SlideEntry> entries;
    entries.reserve(files.size());
    for (const fs::path& file : files) {
      check_readable_ppm(file);
      SlideEntry e;
      e.slide = file.stem().string();
      e.path = file.string();
      e.label = label;
      if (!seen.insert(e.slide).second)
        throw std::runtime_error("duplicate slide id '" + e.slide + "'");
      entries.push_back(std::move(e));
    }

    // 70/20/10 by floored integer fractions, leftovers to train.
    const std::size_t n = entries.size();
    std::size_t n_train = 7 * n / 10;
    const std::size_t n_val = 2 * n / 10;
    const std::size_t n_test = n / 10;
    n_train += n - (n_train + n_val + n_test);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(sub_seed(seed, "split/" + to_string(label)));
    shuffle_in_place(order, rng);
    for (std::size_t i = 0; i < n; ++i) {
      const SplitKind split = i < n_train              ? SplitKind::train
                              : i < n_train + n_val    ? SplitKind::val
                                                       : SplitKind::test;
      entries[order[i]].split = split;
    }
    for (SlideEntry& e : entries) manifest.slides.push_back(std::move(e));
  }
  return manifest;
}

namespace {
constexpr const char* kDatasetHeader = "slide,path,label,split";
}

void write_dataset_manifest(const DatasetManifest& manifest, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset manifest: " + path);
  out << kDatasetHeader << "\n";
  for (const SlideEntry& e : manifest.slides) {
    if (e.slide.empty() || e.slide.find(',') != std::string::npos ||
        e.path.find(',') != std::string::npos)
      throw std::invalid_argument("slide id and path must be comma-free");
    out << e.slide << "," << e.path << "," << to_string(e.label) << "," << to_string(e.split)
        << "\n";
  }
  if (!out) throw std::runtime_error("short write to dataset manifest: " + path);
}

DatasetManifest read_dataset_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset manifest: " + path);
  std::string line;
  long line_no = 1;
  if (!std::getline(in, line) || trim(line) != kDatasetHeader)
    throw ParseError("missing dataset manifest header '" + std::string(kDatasetHeader) + "'", 1);

  DatasetManifest manifest;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::vector<std::string> f = split_csv_line(line);
    if (f.size() != 4) throw ParseError("expected 4 fields in dataset manifest row", line_no);
    try {
      SlideEntry e;
      e.slide = f[0];
      e.path = f[1];
      e.label = class_label_from_string(f[2]);
      e.split = split_from_string(f[3]);
      if (e.slide.empty()) throw std::invalid_argument("empty slide id");
      manifest.slides.push_back(std::move(e));
    } catch (const std::invalid_argument& ex) {
      throw ParseError(ex.what(), line_no);
    }
  }
  return manifest;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

EvaluationReport evaluate(const std::vector<ClassLabel>& truth,
                          const std::vector<ClassLabel>& predictions) {
  if (truth.size() != predictions.size())
    throw std::invalid_argument("truth and prediction counts differ");
  if (truth.empty()) throw std::invalid_argument("nothing to evaluate");

  EvaluationReport report;
  for (std::size_t i = 0; i < truth.size(); ++i)
    ++report.table[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predictions[i])];

  long long trace = 0;
  for (int k = 0; k < kNumClasses; ++k) trace += report.table[k][k];
  report.accuracy = static_cast<double>(trace) / static_cast<double>(truth.size());

  for (int k = 0; k < kNumClasses; ++k) {
    long long row = 0;
    for (int j = 0; j < kNumClasses; ++j) row += report.table[k][j];
    report.sensitivity[k] =
        row > 0 ? static_cast<double>(report.table[k][k]) / static_cast<double>(row) : 0.0;
  }
  return report;
}

std::string report_to_text(const EvaluationReport& report) {
  std::ostringstream out;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "accuracy: %.4f\n\n", report.accuracy);
  out << buf;
  std::snprintf(buf, sizeof(buf), "%-12s", "truth\\pred");
  out << buf;
  for (int j = 0; j < kNumClasses; ++j) {
    std::snprintf(buf, sizeof(buf), "%10s", to_string(class_label_from_index(j)).c_str());
    out << buf;
  }
  out << "  sensitivity\n";
  for (int k = 0; k < kNumClasses; ++k) {
    std::snprintf(buf, sizeof(buf), "%-12s", to_string(class_label_from_index(k)).c_str());
    out << buf;
    for (int j = 0; j < kNumClasses; ++j) {
      std::snprintf(buf, sizeof(buf), "%10lld", report.table[k][j]);
      out << buf;
    }
    std::snprintf(buf, sizeof(buf), "  %11.4f\n", report.sensitivity[k]);
    out << buf;
  }
  return out.str();
}

std::string report_to_json_string(const EvaluationReport& report) {
  nlohmann::ordered_json j;
  j["accuracy"] = report.accuracy;
  j["classes"] = nlohmann::ordered_json::array();
  for (int k = 0; k < kNumClasses; ++k) j["classes"].push_back(to_string(class_label_from_index(k)));
  j["contingency"] = nlohmann::ordered_json::array();
  for (int k = 0; k < kNumClasses; ++k) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (int c = 0; c < kNumClasses; ++c) row.push_back(report.table[k][c]);
    j["contingency"].push_back(row);
  }
  j["sensitivity"] = nlohmann::ordered_json::object();
  for (int k = 0; k < kNumClasses; ++k)
    j["sensitivity"][to_string(class_label_from_index(k))] = report.sensitivity[k];
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

namespace {

Vec3 unit(Vec3 v) {
  const double norm = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  for (double& x : v) x /= norm;
  return v;
}

// Standard H&E reference directions, also the factorization warm start.
const Vec3 kCorpusHematoxylin = unit({0.65, 0.70, 0.29});
const Vec3 kCorpusEosin = unit({0.07, 0.99, 0.11});

void add_blobs(std::vector<double>& field, int width, int height, int count,
               const CorpusOptions& opt, Rng& rng) {
  for (int b = 0; b < count; ++b) {
    const double cx = uniform_real(rng, 0.0, static_cast<double>(width));
    const double cy = uniform_real(rng, 0.0, static_cast<double>(height));
    const double radius = uniform_real(rng, opt.blob_min_radius, opt.blob_max_radius);
    const double peak = uniform_real(rng, opt.peak_min, opt.peak_max);
    const double sigma = radius / 2.0;
    const int reach = static_cast<int>(std::ceil(3.0 * sigma));
    const int x0 = std::max(0, static_cast<int>(cx) - reach);
    const int x1 = std::min(width - 1, static_cast<int>(cx) + reach);
    const int y0 = std::max(0, static_cast<int>(cy) - reach);
    const int y1 = std::min(height - 1, static_cast<int>(cy) + reach);
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dx = x - cx;
        const double dy = y - cy;
        field[static_cast<std::size_t>(y) * width + x] +=
            peak * std::exp(-0.5 * (dx * dx + dy * dy) / (sigma * sigma));
      }
    }
  }
}

RgbImage render_two_stain_image(int h_blobs, int e_blobs, const CorpusOptions& opt, Rng& rng) {
  const int w = opt.width;
  const int h = opt.height;
  std::vector<double> ch(static_cast<std::size_t>(w) * h, 0.0);
  std::vector<double> ce(static_cast<std::size_t>(w) * h, 0.0);
  add_blobs(ch, w, h, h_blobs, opt, rng);
  add_blobs(ce, w, h, e_blobs, opt, rng);

  OdImage od(w, h);
  for (std::size_t i = 0; i < ch.size(); ++i)
    for (int ch3 = 0; ch3 < 3; ++ch3)
      od.od[3 * i + ch3] = ch[i] * kCorpusHematoxylin[ch3] + ce[i] * kCorpusEosin[ch3];
  return od_to_rgb(od);
}

}  // namespace

void generate_synthetic_corpus(const std::string& out_dir, const CorpusOptions& options,
                               std::uint64_t seed) {
  if (options.images_per_class < 1 || options.width < 1 || options.height < 1)
    throw std::invalid_argument("bad corpus options");
  fs::create_directories(out_dir);

  std::ofstream truth(fs::path(out_dir) / "truth.csv");
  if (!truth) throw std::runtime_error("cannot write truth.csv in " + out_dir);
  truth << "slide,label\n";

  for (int k = 0; k < kNumClasses; ++k) {
    const ClassLabel label = class_label_from_index(k);
    const std::string class_name = to_string(label);
    fs::create_directories(fs::path(out_dir) / class_name);
    const bool dense_h = label == ClassLabel::in_situ || label == ClassLabel::invasive;
    const bool dense_e = label == ClassLabel::benign || label == ClassLabel::invasive;
    const int h_blobs = dense_h ? options.dense_blobs : options.sparse_blobs;
    const int e_blobs = dense_e ? options.dense_blobs : options.sparse_blobs;

    for (int i = 0; i < options.images_per_class; ++i) {
      char name[64];
      std::snprintf(name, sizeof(name), "%s_%03d", class_name.c_str(), i);
      Rng rng(sub_seed(seed, std::string("corpus/") + name));
      const RgbImage image = render_two_stain_image(h_blobs, e_blobs, options, rng);
      write_ppm(image, (fs::path(out_dir) / class_name / (std::string(name) + ".ppm")).string());
      truth << name << "," << class_name << "\n";
    }
  }

  // Dense mixed-stain image for fitting normalization targets.
  Rng rng(sub_seed(seed, "corpus/target"));
  const RgbImage target =
      render_two_stain_image(options.dense_blobs, options.dense_blobs, options, rng);
  write_ppm(target, (fs::path(out_dir) / "target.ppm").string());
  if (!truth) throw std::runtime_error("short write to truth.csv in " + out_dir);
}

}  // namespace histo
