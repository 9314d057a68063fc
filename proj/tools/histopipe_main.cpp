// Command-line front end for the histology classification pipeline.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "histo/pipeline.hpp"
#include "histo/util.hpp"

namespace fs = std::filesystem;
using namespace histo;

namespace {

std::vector<StainMethod> methods_for(const std::string& name) {
  if (name == "macenko") return {StainMethod::macenko};
  if (name == "vahadane") return {StainMethod::vahadane};
  return {StainMethod::macenko, StainMethod::vahadane};
}

DatasetManifest manifest_from(const std::string& manifest_path, const std::string& dataset_dir,
                              std::uint64_t seed) {
  if (!manifest_path.empty()) return read_dataset_manifest(manifest_path);
  if (!dataset_dir.empty()) return ingest_dataset(dataset_dir, seed);
  throw std::invalid_argument("need --manifest or --dataset");
}

std::string profile_path(const std::string& models_dir, StainMethod method) {
  return (fs::path(models_dir) / ("target_" + to_string(method) + ".profile")).string();
}

// Loads a saved target profile, or fits one from the configured target image
// (first training slide when unset) and saves it for later stages.
StainProfile load_or_fit_profile(const std::string& models_dir, StainMethod method,
                                 const PipelineConfig& cfg, const DatasetManifest& manifest) {
  const std::string path = profile_path(models_dir, method);
  if (fs::exists(path)) return load_stain_profile(path);
  std::string target = cfg.target_image;
  if (target.empty()) {
    const std::vector<SlideEntry> train = manifest.subset(SplitKind::train);
    if (train.empty()) throw std::invalid_argument("no target image and no training slides");
    target = train.front().path;
  }
  const StainProfile profile = fit_target_profile(read_ppm(target), method, cfg.stain);
  fs::create_directories(models_dir);
  save_stain_profile(profile, path);
  return profile;
}

std::unique_ptr<PatchClassifier> stage_classifier(const PipelineConfig& cfg,
                                                  const std::string& models_dir,
                                                  StainMethod method, const SlideEntry& slide) {
  if (cfg.classifier == "fixed-truth") return std::make_unique<FixedLabelClassifier>(slide.label);
  if (cfg.classifier == "random")
    return std::make_unique<PseudorandomClassifier>(
        sub_seed(cfg.seed, "random/" + to_string(method)));
  if (cfg.classifier == "baseline")
    return std::make_unique<BaselineClassifier>(BaselineClassifier::load(
        (fs::path(models_dir) / ("baseline_" + to_string(method) + ".txt")).string()));
  throw std::invalid_argument("classifier kind '" + cfg.classifier +
                              "' is only available through predict");
}

std::vector<Patch> training_patches_for_slide(const RgbImage& norm, const SlideEntry& slide,
                                              StainMethod method, const PipelineConfig& cfg) {
  const std::string scheme = to_string(method);
  std::vector<Patch> patches = grid_patches(norm, kPatchSide, cfg.train_stride, true);
  if (cfg.random_patches_per_slide > 0) {
    const std::vector<Patch> extra =
        random_patches(norm, cfg.random_patches_per_slide,
                       sub_seed(cfg.seed, "patches/" + scheme + "/" + slide.slide), kPatchSide);
    patches.insert(patches.end(), extra.begin(), extra.end());
  }
  patches = inherit_label(std::move(patches), slide.label);
  if (cfg.jitter) {
    for (std::size_t i = 0; i < patches.size(); ++i)
      patches[i] = color_jitter(
          patches[i], cfg.jitter_params,
          sub_seed(cfg.seed, "jitter/" + scheme + "/" + slide.slide + "/" + std::to_string(i)));
  }
  return patches;
}

// slide -> label maps for `evaluate`. Accepts a plain slide,label file or the
// predictions.csv written by predict (keyed on its `final` column).
std::vector<std::pair<std::string, ClassLabel>> read_label_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty label file: " + path);
  const std::vector<std::string> header = split_csv_line(trim(line));
  std::size_t label_col = 1;
  if (header.size() >= 2 && header[0] == "slide" && header[1] == "label") {
    label_col = 1;
  } else if (header.size() >= 2 && header[0] == "slide") {
    label_col = header.size();
    for (std::size_t i = 1; i < header.size(); ++i)
      if (header[i] == "final" || header[i] == "label") label_col = i;
    if (label_col == header.size())
      throw ParseError("no label or final column in " + path);
  } else {
    throw ParseError("unrecognized header in " + path);
  }
  std::vector<std::pair<std::string, ClassLabel>> rows;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    const std::vector<std::string> fields = split_csv_line(t);
    if (fields.size() <= label_col) throw ParseError("short row in " + path, line_no);
    try {
      rows.emplace_back(fields[0], class_label_from_string(fields[label_col]));
    } catch (const std::exception& e) {
      throw ParseError(std::string(e.what()) + " in " + path, line_no);
    }
  }
  return rows;
}

struct CommonArgs {
  std::string config_path;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "pipeline config file");
    seed_opt = cmd->add_option("--seed", seed, "root RNG seed (overrides config)");
  }
  PipelineConfig load() const {
    PipelineConfig cfg = config_path.empty() ? PipelineConfig{} : load_config(config_path);
    if (seed_opt->count() > 0) cfg.seed = seed;
    return cfg;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-class breast histology image classifier"};
  app.require_subcommand(1);
  const std::vector<std::string> kMethods = {"macenko", "vahadane", "both"};

  // ---- fit-target ----
  auto* fit = app.add_subcommand("fit-target", "fit normalization target stain profiles");
  CommonArgs fit_args;
  fit_args.attach(fit);
  std::string fit_target_image, fit_method = "both", fit_out = ".";
  fit->add_option("--target", fit_target_image, "target image")->required();
  fit->add_option("--method", fit_method, "stain estimator(s) to fit")->check(CLI::IsMember(kMethods));
  fit->add_option("--out", fit_out, "output directory");
  fit->callback([&] {
    const PipelineConfig cfg = fit_args.load();
    const RgbImage target = read_ppm(fit_target_image);
    fs::create_directories(fit_out);
    for (StainMethod method : methods_for(fit_method)) {
      const StainProfile profile = fit_target_profile(target, method, cfg.stain);
      const std::string path = profile_path(fit_out, method);
      save_stain_profile(profile, path);
      std::printf("wrote %s\n", path.c_str());
    }
  });

  // ---- normalize ----
  auto* norm_cmd = app.add_subcommand("normalize", "normalize an image to a target profile");
  CommonArgs norm_args;
  norm_args.attach(norm_cmd);
  std::string norm_input, norm_profile, norm_out, norm_method;
  norm_cmd->add_option("--input", norm_input, "source image (PPM)")->required();
  norm_cmd->add_option("--profile", norm_profile, "saved target stain profile")->required();
  norm_cmd->add_option("--out", norm_out, "output image path")->required();
  norm_cmd->add_option("--method", norm_method, "source stain estimator (default: profile's)")
      ->check(CLI::IsMember(std::vector<std::string>{"macenko", "vahadane"}));
  norm_cmd->callback([&] {
    const PipelineConfig cfg = norm_args.load();
    const StainProfile profile = load_stain_profile(norm_profile);
    const StainMethod method =
        norm_method.empty() ? profile.method : stain_method_from_string(norm_method);
    const RgbImage out = normalize(read_ppm(norm_input), method, profile, cfg.stain);
    if (const fs::path parent = fs::path(norm_out).parent_path(); !parent.empty())
      fs::create_directories(parent);
    write_ppm(out, norm_out);
    std::printf("wrote %s\n", norm_out.c_str());
  });

  // ---- extract-patches ----
  auto* pat = app.add_subcommand("extract-patches", "tile an image into patches");
  CommonArgs pat_args;
  pat_args.attach(pat);
  std::string pat_input, pat_slide, pat_label, pat_out = ".";
  int pat_stride = 256, pat_size = kPatchSide, pat_random = 0;
  bool pat_save_images = false;
  pat->add_option("--input", pat_input, "image to tile (PPM)")->required();
  pat->add_option("--slide", pat_slide, "slide id (default: input stem)");
  pat->add_option("--stride", pat_stride, "tile stride in pixels");
  pat->add_option("--size", pat_size, "tile side in pixels");
  pat->add_option("--random", pat_random, "extra random patches");
  pat->add_option("--label", pat_label, "class label to stamp on every patch");
  pat->add_option("--out", pat_out, "output directory");
  pat->add_flag("--save-images", pat_save_images, "also write patch images");
  pat->callback([&] {
    const PipelineConfig cfg = pat_args.load();
    const RgbImage image = read_ppm(pat_input);
    const std::string slide = pat_slide.empty() ? fs::path(pat_input).stem().string() : pat_slide;
    std::vector<Patch> patches = grid_patches(image, pat_size, pat_stride, true);
    if (pat_random > 0) {
      const std::vector<Patch> extra =
          random_patches(image, pat_random, sub_seed(cfg.seed, "patches/" + slide), pat_size);
      patches.insert(patches.end(), extra.begin(), extra.end());
    }
    if (!pat_label.empty())
      patches = inherit_label(std::move(patches), class_label_from_string(pat_label));
    std::vector<PatchRecord> records;
    records.reserve(patches.size());
    for (const Patch& p : patches)
      records.push_back(PatchRecord{slide, p.x, p.y, p.orientation,
                                    p.label ? static_cast<int>(*p.label) : -1});
    fs::create_directories(pat_out);
    write_patch_manifest(records, (fs::path(pat_out) / "patches.csv").string());
    if (pat_save_images) {
      for (const Patch& p : patches) {
        char name[128];
        std::snprintf(name, sizeof(name), "%s_x%d_y%d.ppm", slide.c_str(), p.x, p.y);
        write_ppm(p.image, (fs::path(pat_out) / name).string());
      }
    }
    std::printf("%zu patches -> %s/patches.csv\n", patches.size(), pat_out.c_str());
  });

  // ---- train-baseline ----
  auto* tb = app.add_subcommand("train-baseline", "train the patch classifier");
  CommonArgs tb_args;
  tb_args.attach(tb);
  std::string tb_manifest, tb_dataset, tb_method = "both", tb_out = ".";
  tb->add_option("--manifest", tb_manifest, "dataset manifest CSV");
  tb->add_option("--dataset", tb_dataset, "dataset root (ingested with --seed)");
  tb->add_option("--method", tb_method, "stain scheme(s) to train on")->check(CLI::IsMember(kMethods));
  tb->add_option("--out", tb_out, "output directory");
  tb->callback([&] {
    const PipelineConfig cfg = tb_args.load();
    const DatasetManifest manifest = manifest_from(tb_manifest, tb_dataset, cfg.seed);
    const std::vector<SlideEntry> train = manifest.subset(SplitKind::train);
    if (train.empty()) throw std::invalid_argument("no training slides");
    const std::string models_dir = (fs::path(tb_out) / "models").string();
    for (StainMethod method : methods_for(tb_method)) {
      const std::string scheme = to_string(method);
      const StainProfile profile = load_or_fit_profile(models_dir, method, cfg, manifest);
      std::vector<Patch> all;
      for (const SlideEntry& slide : train) {
        const RgbImage norm = normalize(read_ppm(slide.path), method, profile, cfg.stain);
        std::vector<Patch> patches = training_patches_for_slide(norm, slide, method, cfg);
        all.insert(all.end(), std::make_move_iterator(patches.begin()),
                   std::make_move_iterator(patches.end()));
      }
      BaselineOptions opts = cfg.baseline;
      opts.seed = sub_seed(cfg.seed, "baseline/" + scheme);
      const BaselineClassifier model = train_baseline(all, profile.stain_matrix, opts);
      const std::string path = (fs::path(models_dir) / ("baseline_" + scheme + ".txt")).string();
      model.save(path);
      std::printf("wrote %s (%zu patches)\n", path.c_str(), all.size());
    }
  });

  // ---- build-heatmaps ----
  auto* bh = app.add_subcommand("build-heatmaps", "classify tiles and write heatmap tensors");
  CommonArgs bh_args;
  bh_args.attach(bh);
  std::string bh_manifest, bh_dataset, bh_method = "both", bh_out = ".", bh_models,
              bh_split = "all";
  bh->add_option("--manifest", bh_manifest, "dataset manifest CSV");
  bh->add_option("--dataset", bh_dataset, "dataset root (ingested with --seed)");
  bh->add_option("--method", bh_method, "stain scheme(s) to run")->check(CLI::IsMember(kMethods));
  bh->add_option("--models", bh_models, "models directory (default <out>/models)");
  bh->add_option("--split", bh_split, "restrict to one split")
      ->check(CLI::IsMember(std::vector<std::string>{"train", "val", "test", "all"}));
  bh->add_option("--out", bh_out, "output directory");
  bh->callback([&] {
    const PipelineConfig cfg = bh_args.load();
    const DatasetManifest manifest = manifest_from(bh_manifest, bh_dataset, cfg.seed);
    const std::string models_dir =
        bh_models.empty() ? (fs::path(bh_out) / "models").string() : bh_models;
    fs::create_directories(fs::path(bh_out) / "heatmaps");
    int written = 0;
    for (StainMethod method : methods_for(bh_method)) {
      const StainProfile profile = load_or_fit_profile(models_dir, method, cfg, manifest);
      for (const SlideEntry& slide : manifest.slides) {
        if (bh_split != "all" && slide.split != split_from_string(bh_split)) continue;
        const RgbImage norm = normalize(read_ppm(slide.path), method, profile, cfg.stain);
        const std::unique_ptr<PatchClassifier> cls =
            stage_classifier(cfg, models_dir, method, slide);
        const HeatmapTensor h = build_heatmap(norm, *cls);
        write_heatmap(h, (fs::path(bh_out) / "heatmaps" /
                          (slide.slide + "_" + to_string(method) + ".heatmap"))
                             .string());
        ++written;
      }
    }
    std::printf("wrote %d heatmaps under %s/heatmaps\n", written, bh_out.c_str());
  });

  // ---- train-fusion ----
  auto* tf = app.add_subcommand("train-fusion", "train the histogram fusion models");
  CommonArgs tf_args;
  tf_args.attach(tf);
  std::string tf_manifest, tf_dataset, tf_method = "both", tf_out = ".", tf_models;
  tf->add_option("--manifest", tf_manifest, "dataset manifest CSV");
  tf->add_option("--dataset", tf_dataset, "dataset root (ingested with --seed)");
  tf->add_option("--method", tf_method, "stain scheme(s) to train")->check(CLI::IsMember(kMethods));
  tf->add_option("--models", tf_models, "models directory (default <out>/models)");
  tf->add_option("--out", tf_out, "output directory");
  tf->callback([&] {
    const PipelineConfig cfg = tf_args.load();
    const DatasetManifest manifest = manifest_from(tf_manifest, tf_dataset, cfg.seed);
    const std::vector<SlideEntry> train = manifest.subset(SplitKind::train);
    if (train.empty()) throw std::invalid_argument("no training slides");
    const std::string models_dir =
        tf_models.empty() ? (fs::path(tf_out) / "models").string() : tf_models;
    for (StainMethod method : methods_for(tf_method)) {
      const std::string scheme = to_string(method);
      const StainProfile profile = load_or_fit_profile(models_dir, method, cfg, manifest);
      std::vector<ClassHistogram> histograms;
      std::vector<ClassLabel> labels;
      for (const SlideEntry& slide : train) {
        const RgbImage norm = normalize(read_ppm(slide.path), method, profile, cfg.stain);
        const std::unique_ptr<PatchClassifier> cls =
            stage_classifier(cfg, models_dir, method, slide);
        histograms.push_back(class_histogram(per_orientation_class_maps(build_heatmap(norm, *cls))));
        labels.push_back(slide.label);
      }
      FusionTrainOptions opts = cfg.fusion;
      opts.seed = sub_seed(cfg.seed, "fusion/" + scheme);
      const FusionModels models = train_fusion_models(histograms, labels, opts);
      const std::string path = (fs::path(models_dir) / ("fusion_" + scheme + ".txt")).string();
      save_fusion_models(models, path);
      std::printf("wrote %s\n", path.c_str());
    }
  });

  // ---- train-refinement ----
  auto* tr = app.add_subcommand("train-refinement", "train the benign/normal second stage");
  CommonArgs tr_args;
  tr_args.attach(tr);
  std::string tr_manifest, tr_dataset, tr_out = ".", tr_models;
  tr->add_option("--manifest", tr_manifest, "dataset manifest CSV");
  tr->add_option("--dataset", tr_dataset, "dataset root (ingested with --seed)");
  tr->add_option("--models", tr_models, "models directory (default <out>/models)");
  tr->add_option("--out", tr_out, "output directory");
  tr->callback([&] {
    const PipelineConfig cfg = tr_args.load();
    const DatasetManifest manifest = manifest_from(tr_manifest, tr_dataset, cfg.seed);
    const std::string models_dir =
        tr_models.empty() ? (fs::path(tr_out) / "models").string() : tr_models;
    const StainProfile profile =
        load_or_fit_profile(models_dir, StainMethod::vahadane, cfg, manifest);
    ml::Matrix features;
    std::vector<BinaryLabel> labels;
    std::vector<RefinementFeatureRow> rows;
    for (const SlideEntry& slide : manifest.subset(SplitKind::train)) {
      if (slide.label != ClassLabel::benign && slide.label != ClassLabel::normal) continue;
      const RgbImage norm =
          normalize(read_ppm(slide.path), StainMethod::vahadane, profile, cfg.stain);
      features.push_back(extract_refinement_features(norm, profile.stain_matrix));
      const BinaryLabel label =
          slide.label == ClassLabel::benign ? BinaryLabel::benign : BinaryLabel::normal;
      labels.push_back(label);
      rows.push_back(RefinementFeatureRow{slide.slide, static_cast<int>(label), features.back()});
    }
    fs::create_directories(tr_out);
    write_refinement_features_csv(rows, (fs::path(tr_out) / "refinement_features.csv").string());
    RefinementTrainOptions opts = cfg.refinement;
    opts.seed = sub_seed(cfg.seed, "refinement");
    const RefinementModels models = train_refinement(features, labels, opts);
    const std::string path = (fs::path(models_dir) / "refinement.txt").string();
    save_refinement_models(models, path);
    std::printf("wrote %s (%zu slides)\n", path.c_str(), labels.size());
  });

  // ---- predict ----
  auto* pr = app.add_subcommand("predict", "run the full pipeline and report accuracy");
  CommonArgs pr_args;
  pr_args.attach(pr);
  std::string pr_manifest, pr_dataset, pr_out = ".";
  std::vector<std::string> pr_external;
  pr->add_option("--manifest", pr_manifest, "dataset manifest CSV");
  pr->add_option("--dataset", pr_dataset, "dataset root (ingested with --seed)");
  pr->add_option("--external-probs", pr_external,
                 "patch probability file; give twice for macenko then vahadane")
      ->expected(0, 2);
  pr->add_option("--out", pr_out, "output directory");
  pr->callback([&] {
    PipelineConfig cfg = pr_args.load();
    if (pr_external.size() == 1) {
      cfg.external_probs_macenko = pr_external[0];
      cfg.external_probs_vahadane = pr_external[0];
    } else if (pr_external.size() == 2) {
      cfg.external_probs_macenko = pr_external[0];
      cfg.external_probs_vahadane = pr_external[1];
    }
    const DatasetManifest manifest = manifest_from(pr_manifest, pr_dataset, cfg.seed);
    const PipelineResult result = run_pipeline(manifest, cfg, pr_out);
    std::fputs(report_to_text(result.report).c_str(), stdout);
    std::printf("outputs under %s\n", pr_out.c_str());
  });

  // ---- evaluate ----
  auto* ev = app.add_subcommand("evaluate", "score predictions against ground truth");
  std::string ev_truth, ev_pred, ev_out;
  ev->add_option("--truth", ev_truth, "slide,label CSV")->required();
  ev->add_option("--predictions", ev_pred, "slide,label CSV or predictions.csv")->required();
  ev->add_option("--out", ev_out, "directory for report.txt / report.json");
  ev->callback([&] {
    const std::vector<std::pair<std::string, ClassLabel>> truth_rows = read_label_file(ev_truth);
    std::map<std::string, ClassLabel> predicted;
    for (const auto& [slide, label] : read_label_file(ev_pred)) predicted[slide] = label;
    std::vector<ClassLabel> truth, pred;
    for (const auto& [slide, label] : truth_rows) {
      const auto it = predicted.find(slide);
      if (it == predicted.end()) throw std::invalid_argument("no prediction for slide " + slide);
      truth.push_back(label);
      pred.push_back(it->second);
    }
    const EvaluationReport report = evaluate(truth, pred);
    std::fputs(report_to_text(report).c_str(), stdout);
    if (!ev_out.empty()) {
      fs::create_directories(ev_out);
      std::ofstream txt(fs::path(ev_out) / "report.txt");
      txt << report_to_text(report);
      std::ofstream json(fs::path(ev_out) / "report.json");
      json << report_to_json_string(report);
    }
  });

  // ---- make-fixtures ----
  auto* mf = app.add_subcommand("make-fixtures", "generate a synthetic two-stain corpus");
  std::string mf_out;
  std::uint64_t mf_seed = 1;
  CorpusOptions mf_opts;
  mf->add_option("--out", mf_out, "corpus directory")->required();
  mf->add_option("--seed", mf_seed, "generator seed");
  mf->add_option("--per-class", mf_opts.images_per_class, "images per class");
  mf->add_option("--width", mf_opts.width, "image width");
  mf->add_option("--height", mf_opts.height, "image height");
  mf->callback([&] {
    generate_synthetic_corpus(mf_out, mf_opts, mf_seed);
    const DatasetManifest manifest = ingest_dataset(mf_out, mf_seed);
    write_dataset_manifest(manifest, (fs::path(mf_out) / "manifest.csv").string());
    std::printf("wrote %d images + manifest.csv under %s\n", 4 * mf_opts.images_per_class,
                mf_out.c_str());
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
