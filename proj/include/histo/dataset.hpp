#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "histo/patch.hpp"

namespace histo {

enum class SplitKind { train = 0, val = 1, test = 2 };

std::string to_string(SplitKind split);
SplitKind split_from_string(const std::string& name);

struct SlideEntry {
  std::string slide;  // unique id, the file stem
  std::string path;
  ClassLabel label = ClassLabel::normal;
  SplitKind split = SplitKind::train;

  bool operator==(const SlideEntry& other) const = default;
};

struct DatasetManifest {
  std::vector<SlideEntry> slides;

  std::vector<SlideEntry> subset(SplitKind split) const;
  const SlideEntry& find(const std::string& slide) const;
};

/// Scans one sub-directory per class (normal, benign, insitu, invasive;
/// "in_situ" is accepted too), sorts file names, and assigns a per-class
/// 70/20/10 split from a seeded shuffle. Fractions are floored with the
/// leftovers going to train, so 10 images split 7/2/1.
DatasetManifest ingest_dataset(const std::string& root_dir, std::uint64_t seed);

void write_dataset_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest read_dataset_manifest(const std::string& path);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvaluationReport {
  double accuracy = 0.0;
  std::array<std::array<long long, kNumClasses>, kNumClasses> table{};  // [truth][prediction]
  std::array<double, kNumClasses> sensitivity{};  // diagonal / row sum; 0 for empty rows

  bool operator==(const EvaluationReport& other) const = default;
};

/// Contingency table with rows = ground truth. Lists must align; empty input
/// or length mismatch is an error.
EvaluationReport evaluate(const std::vector<ClassLabel>& truth,
                          const std::vector<ClassLabel>& predictions);

std::string report_to_text(const EvaluationReport& report);
std::string report_to_json_string(const EvaluationReport& report);

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

/// Class appearance is a two-stain blob model. Classes differ by how much of
/// the image each stain covers, which survives per-stain concentration
/// rescaling during normalization: normal = sparse H + sparse E, benign =
/// sparse H + dense E, in_situ = dense H + sparse E, invasive = dense both.
struct CorpusOptions {
  int images_per_class = 10;
  int width = 768;
  int height = 768;
  int sparse_blobs = 3;
  int dense_blobs = 12;
  double blob_min_radius = 40.0;
  double blob_max_radius = 70.0;
  double peak_min = 0.7;
  double peak_max = 1.0;
};

/// Writes <class>/<class>_NNN.ppm per image, a mixed-stain target.ppm, and
/// truth.csv (slide,label). Byte-identical for a fixed seed and options.
void generate_synthetic_corpus(const std::string& out_dir, const CorpusOptions& options,
                               std::uint64_t seed);

}  // namespace histo
