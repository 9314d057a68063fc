#include "histo/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "histo/util.hpp"

namespace fs = std::filesystem;

namespace histo {

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

namespace {

bool parse_config_bool(const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ParseError("expected boolean, got '" + value + "'");
}

void apply_config_key(PipelineConfig& c, const std::string& section, const std::string& key,
                      const std::string& value) {
  if (section == "pipeline") {
    if (key == "seed") {
      c.seed = static_cast<std::uint64_t>(parse_int(value));
    } else if (key == "classifier") {
      if (value != "baseline" && value != "fixed-truth" && value != "random" &&
          value != "external")
        throw ParseError("unknown classifier kind '" + value + "'");
      c.classifier = value;
    } else if (key == "target_image") {
      c.target_image = value;
    } else if (key == "external_probs_macenko") {
      c.external_probs_macenko = value;
    } else if (key == "external_probs_vahadane") {
      c.external_probs_vahadane = value;
    } else {
      throw ParseError("unknown key '" + key + "' in [pipeline]");
    }
  } else if (section == "stain") {
    if (key == "od_threshold") c.stain.od_threshold = parse_double(value);
    else if (key == "angle_percentile") c.stain.angle_percentile = parse_double(value);
    else if (key == "snmf_sparsity") c.stain.sparsity = parse_double(value);
    else if (key == "snmf_max_outer_iters") c.stain.max_outer_iters = static_cast<int>(parse_int(value));
    else if (key == "snmf_tol") c.stain.tol = parse_double(value);
    else if (key == "snmf_max_fit_pixels") c.stain.max_fit_pixels = static_cast<int>(parse_int(value));
    else throw ParseError("unknown key '" + key + "' in [stain]");
  } else if (section == "patches") {
    if (key == "train_stride") c.train_stride = static_cast<int>(parse_int(value));
    else if (key == "random_per_slide") c.random_patches_per_slide = static_cast<int>(parse_int(value));
    else if (key == "jitter") c.jitter = parse_config_bool(value);
    else if (key == "jitter_brightness") c.jitter_params.brightness_delta = parse_double(value);
    else if (key == "jitter_contrast") c.jitter_params.contrast_delta = parse_double(value);
    else if (key == "jitter_saturation") c.jitter_params.saturation_delta = parse_double(value);
    else if (key == "jitter_hue") c.jitter_params.hue_delta = parse_double(value);
    else throw ParseError("unknown key '" + key + "' in [patches]");
  } else if (section == "baseline") {
    if (key == "lambda") c.baseline.lambda = parse_double(value);
    else if (key == "epochs") c.baseline.epochs = static_cast<int>(parse_int(value));
    else if (key == "step") c.baseline.step = parse_double(value);
    else throw ParseError("unknown key '" + key + "' in [baseline]");
  } else if (section == "fusion") {
    if (key == "lr_lambda") c.fusion.lr_lambda = parse_double(value);
    else if (key == "lr_epochs") c.fusion.lr_epochs = static_cast<int>(parse_int(value));
    else if (key == "lr_step") c.fusion.lr_step = parse_double(value);
    else if (key == "gbm_estimators") c.fusion.gbm_estimators = static_cast<int>(parse_int(value));
    else if (key == "gbm_max_depth") c.fusion.gbm_max_depth = static_cast<int>(parse_int(value));
    else if (key == "gbm_learning_rate") c.fusion.gbm_learning_rate = parse_double(value);
    else throw ParseError("unknown key '" + key + "' in [fusion]");
  } else if (section == "refinement") {
    if (key == "gbm_estimators") c.refinement.gbm_estimators = static_cast<int>(parse_int(value));
    else if (key == "gbm_max_depth") c.refinement.gbm_max_depth = static_cast<int>(parse_int(value));
    else if (key == "gbm_learning_rate") c.refinement.gbm_learning_rate = parse_double(value);
    else if (key == "svm_c") c.refinement.svm_c = parse_double(value);
    else if (key == "svm_epochs") c.refinement.svm_epochs = static_cast<int>(parse_int(value));
    else if (key == "lr_lambda") c.refinement.lr_lambda = parse_double(value);
    else if (key == "lr_epochs") c.refinement.lr_epochs = static_cast<int>(parse_int(value));
    else if (key == "lr_step") c.refinement.lr_step = parse_double(value);
    else throw ParseError("unknown key '" + key + "' in [refinement]");
  } else {
    throw ParseError("unknown config section [" + section + "]");
  }
}

}  // namespace

PipelineConfig parse_config_text(const std::string& text) {
  PipelineConfig config;
  std::istringstream in(text);
  std::string line;
  std::string section;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ParseError("unterminated section header", line_no);
      section = trim(t.substr(1, t.size() - 2));
      static const char* kSections[] = {"pipeline", "stain",  "patches",
                                        "baseline", "fusion", "refinement"};
      if (std::find(std::begin(kSections), std::end(kSections), section) ==
          std::end(kSections)) {
        throw ParseError("unknown config section [" + section + "]", line_no);
      }
      continue;
    }
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", line_no);
    if (section.empty()) throw ParseError("key before any [section]", line_no);
    try {
      apply_config_key(config, section, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    } catch (const ParseError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return config;
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

namespace {

struct SchemeData {
  StainMethod method{};
  std::string name;
  StainProfile profile;
  std::shared_ptr<BaselineClassifier> baseline;
  std::shared_ptr<const ExternalProbabilityTable> external;
  FusionModels fusion;
};

std::string normalized_path(const std::string& out_dir, const std::string& scheme,
                            const std::string& slide) {
  return (fs::path(out_dir) / "normalized" / scheme / (slide + ".ppm")).string();
}

ClassLabel binary_to_class(BinaryLabel b) {
  return b == BinaryLabel::benign ? ClassLabel::benign : ClassLabel::normal;
}

template <typename F>
auto with_slide_context(const std::string& slide, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const std::exception& e) {
    throw std::runtime_error("slide " + slide + ": " + e.what());
  }
}

std::unique_ptr<PatchClassifier> classifier_for(const SchemeData& scheme, const SlideEntry& slide,
                                                const PipelineConfig& config) {
  if (config.classifier == "fixed-truth") return std::make_unique<FixedLabelClassifier>(slide.label);
  if (config.classifier == "random")
    return std::make_unique<PseudorandomClassifier>(
        sub_seed(config.seed, "random/" + scheme.name));
  if (config.classifier == "external")
    return std::make_unique<ExternalProbabilityClassifier>(scheme.external, slide.slide);
  return std::make_unique<BaselineClassifier>(*scheme.baseline);
}

}  // namespace

PipelineResult run_pipeline(const DatasetManifest& manifest, const PipelineConfig& config,
                            const std::string& out_dir) {
  if (config.classifier != "baseline" && config.classifier != "fixed-truth" &&
      config.classifier != "random" && config.classifier != "external")
    throw std::invalid_argument("unknown classifier kind '" + config.classifier + "'");
  if (config.classifier == "external" &&
      (config.external_probs_macenko.empty() || config.external_probs_vahadane.empty()))
    throw std::invalid_argument("external classifier needs probability files for both schemes");
  const std::vector<SlideEntry> train = manifest.subset(SplitKind::train);
  const std::vector<SlideEntry> test = manifest.subset(SplitKind::test);
  if (train.empty()) throw std::invalid_argument("no training slides in manifest");
  if (test.empty()) throw std::invalid_argument("no test slides in manifest");

  const fs::path out(out_dir);
  fs::create_directories(out / "models");

  const std::string target_path =
      config.target_image.empty() ? train.front().path : config.target_image;
  const RgbImage target_image = read_ppm(target_path);

  std::array<SchemeData, 2> schemes;
  schemes[0].method = StainMethod::macenko;
  schemes[0].name = "macenko";
  schemes[1].method = StainMethod::vahadane;
  schemes[1].name = "vahadane";

  std::vector<const SlideEntry*> all_slides;
  for (const SlideEntry& e : train) all_slides.push_back(&e);
  for (const SlideEntry& e : test) all_slides.push_back(&e);

  ml::Matrix refine_features;
  std::vector<BinaryLabel> refine_labels;
  std::vector<PatchRecord> tile_records;  // heatmap tiles, for external tables

  for (SchemeData& scheme : schemes) {
    scheme.profile = fit_target_profile(target_image, scheme.method, config.stain);
    save_stain_profile(scheme.profile,
                       (out / "models" / ("target_" + scheme.name + ".profile")).string());
    fs::create_directories(out / "normalized" / scheme.name);

    std::vector<Patch> train_patches;
    for (const SlideEntry* slide : all_slides) {
      with_slide_context(slide->slide, [&] {
        const RgbImage image = read_ppm(slide->path);
        const RgbImage norm = normalize(image, scheme.method, scheme.profile, config.stain);
        write_ppm(norm, normalized_path(out_dir, scheme.name, slide->slide));

        if (scheme.method == StainMethod::macenko) {
          // Tile origins are normalization-invariant; collect them once.
          const std::vector<int> xs = grid_starts(norm.width, kPatchSide, kPatchSide, true);
          const std::vector<int> ys = grid_starts(norm.height, kPatchSide, kPatchSide, true);
          for (int o = 0; o < kNumOrientations; ++o)
            for (int y : ys)
              for (int x : xs) tile_records.push_back(PatchRecord{slide->slide, x, y, o, -1});
        }

        const bool is_train = slide->split == SplitKind::train;
        if (is_train && config.classifier == "baseline") {
          std::vector<Patch> patches = grid_patches(norm, kPatchSide, config.train_stride, true);
          if (config.random_patches_per_slide > 0) {
            const std::vector<Patch> extra = random_patches(
                norm, config.random_patches_per_slide,
                sub_seed(config.seed, "patches/" + scheme.name + "/" + slide->slide), kPatchSide);
            patches.insert(patches.end(), extra.begin(), extra.end());
          }
          patches = inherit_label(std::move(patches), slide->label);
          if (config.jitter) {
            for (std::size_t i = 0; i < patches.size(); ++i)
              patches[i] = color_jitter(patches[i], config.jitter_params,
                                        sub_seed(config.seed, "jitter/" + scheme.name + "/" +
                                                                  slide->slide + "/" +
                                                                  std::to_string(i)));
          }
          train_patches.insert(train_patches.end(), std::make_move_iterator(patches.begin()),
                               std::make_move_iterator(patches.end()));
        }
        if (is_train && scheme.method == StainMethod::vahadane &&
            (slide->label == ClassLabel::benign || slide->label == ClassLabel::normal)) {
          refine_features.push_back(
              extract_refinement_features(norm, scheme.profile.stain_matrix));
          refine_labels.push_back(slide->label == ClassLabel::benign ? BinaryLabel::benign
                                                                     : BinaryLabel::normal);
        }
      });
    }

    if (config.classifier == "baseline") {
      BaselineOptions opts = config.baseline;
      opts.seed = sub_seed(config.seed, "baseline/" + scheme.name);
      scheme.baseline = std::make_shared<BaselineClassifier>(
          train_baseline(train_patches, scheme.profile.stain_matrix, opts));
      scheme.baseline->save((out / "models" / ("baseline_" + scheme.name + ".txt")).string());
    }
  }

  if (config.classifier == "external") {
    schemes[0].external = std::make_shared<const ExternalProbabilityTable>(
        load_external_probabilities(tile_records, config.external_probs_macenko));
    schemes[1].external = std::make_shared<const ExternalProbabilityTable>(
        load_external_probabilities(tile_records, config.external_probs_vahadane));
  }

  for (SchemeData& scheme : schemes) {
    std::vector<ClassHistogram> histograms;
    std::vector<ClassLabel> labels;
    histograms.reserve(train.size());
    labels.reserve(train.size());
    for (const SlideEntry& slide : train) {
      with_slide_context(slide.slide, [&] {
        const RgbImage norm = read_ppm(normalized_path(out_dir, scheme.name, slide.slide));
        const std::unique_ptr<PatchClassifier> cls = classifier_for(scheme, slide, config);
        const HeatmapTensor h = build_heatmap(norm, *cls);
        histograms.push_back(class_histogram(per_orientation_class_maps(h)));
        labels.push_back(slide.label);
      });
    }
    FusionTrainOptions opts = config.fusion;
    opts.seed = sub_seed(config.seed, "fusion/" + scheme.name);
    scheme.fusion = train_fusion_models(histograms, labels, opts);
    save_fusion_models(scheme.fusion, (out / "models" / ("fusion_" + scheme.name + ".txt")).string());
  }

  bool refinement_trained = false;
  RefinementModels refinement;
  {
    bool has_benign = false;
    bool has_normal = false;
    for (BinaryLabel label : refine_labels)
      (label == BinaryLabel::benign ? has_benign : has_normal) = true;
    if (has_benign && has_normal) {
      RefinementTrainOptions opts = config.refinement;
      opts.seed = sub_seed(config.seed, "refinement");
      refinement = train_refinement(refine_features, refine_labels, opts);
      save_refinement_models(refinement, (out / "models" / "refinement.txt").string());
      refinement_trained = true;
    }
  }

  PipelineResult result;
  result.predictions.reserve(test.size());
  for (const SlideEntry& slide : test) {
    SlidePrediction pred;
    pred.slide = slide.slide;
    pred.truth = slide.label;
    with_slide_context(slide.slide, [&] {
      int column = 0;
      for (SchemeData& scheme : schemes) {
        const RgbImage norm = read_ppm(normalized_path(out_dir, scheme.name, slide.slide));
        const std::unique_ptr<PatchClassifier> cls = classifier_for(scheme, slide, config);
        const HeatmapTensor h = build_heatmap(norm, *cls);
        pred.predictor[static_cast<std::size_t>(column++)] = predict_majority(h);
        pred.predictor[static_cast<std::size_t>(column++)] =
            predict_histogram_lr(h, scheme.fusion.lr);
        pred.predictor[static_cast<std::size_t>(column++)] =
            predict_histogram_gbm(h, scheme.fusion.gbm);
      }
      std::vector<ImagePrediction> six;
      six.reserve(6);
      for (std::size_t i = 0; i < 6; ++i)
        six.push_back(ImagePrediction{pred.predictor[i], kPredictorOrder[i], false});
      const ImagePrediction ens = ensemble_predict(six);
      pred.ensemble = ens.label;
      pred.final_label = ens.label;
      if (refinement_trained && route_refinement(ens)) {
        const RgbImage vah = read_ppm(normalized_path(out_dir, "vahadane", slide.slide));
        const std::vector<double> features =
            extract_refinement_features(vah, schemes[1].profile.stain_matrix);
        pred.final_label = binary_to_class(refine_predict(features, refinement));
        pred.refined = true;
      }
    });
    result.predictions.push_back(std::move(pred));
  }

  std::vector<ClassLabel> truth;
  std::vector<ClassLabel> final_labels;
  truth.reserve(result.predictions.size());
  final_labels.reserve(result.predictions.size());
  for (const SlidePrediction& p : result.predictions) {
    truth.push_back(p.truth);
    final_labels.push_back(p.final_label);
  }
  result.report = evaluate(truth, final_labels);

  write_predictions_csv(result.predictions, (out / "predictions.csv").string());
  {
    std::ofstream txt(out / "report.txt");
    if (!txt) throw std::runtime_error("cannot write report.txt");
    txt << report_to_text(result.report);
    std::ofstream json(out / "report.json");
    if (!json) throw std::runtime_error("cannot write report.json");
    json << report_to_json_string(result.report);
  }
  return result;
}

void write_predictions_csv(const std::vector<SlidePrediction>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write predictions: " + path);
  out << "slide,truth";
  for (PredictorSource source : kPredictorOrder) out << "," << to_string(source);
  out << ",ensemble,refined,final\n";
  for (const SlidePrediction& p : rows) {
    out << p.slide << "," << to_string(p.truth);
    for (ClassLabel label : p.predictor) out << "," << to_string(label);
    out << "," << to_string(p.ensemble) << "," << (p.refined ? 1 : 0) << ","
        << to_string(p.final_label) << "\n";
  }
  if (!out) throw std::runtime_error("short write to predictions: " + path);
}

}  // namespace histo
