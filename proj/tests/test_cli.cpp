#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "helpers.hpp"
#include "histo/dataset.hpp"
#include "histo/image.hpp"
#include "histo/patch.hpp"
#include "histo/pipeline.hpp"

namespace fs = std::filesystem;
using namespace histo;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr combined
};

CliResult run_cli(const std::string& args) {
  static const fs::path dir = testutil::fresh_dir("cli_logs");
  static int counter = 0;
  const fs::path log = dir / ("run_" + std::to_string(counter++) + ".log");
  const std::string cmd =
      std::string(HISTOPIPE_BIN) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  CliResult r;
  if (status != -1 && WIFEXITED(status)) r.exit_code = WEXITSTATUS(status);
  r.output = testutil::slurp(log.string());
  return r;
}

// Shared tiny corpus; images are 64x64 so only the tiling-agnostic commands
// use them directly.
const fs::path& fixture_corpus() {
  static const fs::path dir = [] {
    const fs::path d = testutil::fresh_dir("cli_corpus");
    const CliResult r = run_cli("make-fixtures --out " + d.string() +
                                " --per-class 2 --width 64 --height 64 --seed 3");
    REQUIRE(r.exit_code == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("make-fixtures writes a corpus plus manifest") {
  const fs::path& corpus = fixture_corpus();
  for (const char* rel : {"normal/normal_000.ppm", "benign/benign_001.ppm",
                          "insitu/insitu_000.ppm", "invasive/invasive_001.ppm", "target.ppm",
                          "truth.csv", "manifest.csv"})
    CHECK(fs::exists(corpus / rel));
  const DatasetManifest m = read_dataset_manifest((corpus / "manifest.csv").string());
  CHECK(m.slides.size() == 8u);
}

TEST_CASE("fit-target then normalize preserve geometry") {
  const fs::path& corpus = fixture_corpus();
  const fs::path models = testutil::fresh_dir("cli_models");
  const CliResult fit = run_cli("fit-target --target " + (corpus / "target.ppm").string() +
                                " --method both --out " + models.string());
  REQUIRE(fit.exit_code == 0);
  CHECK(fs::exists(models / "target_macenko.profile"));
  CHECK(fs::exists(models / "target_vahadane.profile"));

  const fs::path out_img = models / "norm" / "image.ppm";
  const CliResult norm =
      run_cli("normalize --input " + (corpus / "normal" / "normal_000.ppm").string() +
              " --profile " + (models / "target_macenko.profile").string() + " --out " +
              out_img.string());
  REQUIRE(norm.exit_code == 0);
  const RgbImage img = read_ppm(out_img.string());
  CHECK(img.width == 64);
  CHECK(img.height == 64);
}

TEST_CASE("extract-patches matches the grid oracle") {
  const fs::path& corpus = fixture_corpus();
  const fs::path out = testutil::fresh_dir("cli_patches");
  const CliResult r =
      run_cli("extract-patches --input " + (corpus / "benign" / "benign_000.ppm").string() +
              " --size 32 --stride 16 --label benign --out " + out.string());
  REQUIRE(r.exit_code == 0);
  const std::vector<PatchRecord> records =
      read_patch_manifest((out / "patches.csv").string());
  const std::size_t per_axis = grid_starts(64, 32, 16, true).size();
  CHECK(records.size() == per_axis * per_axis);
  for (const PatchRecord& rec : records) {
    CHECK(rec.slide == "benign_000");
    CHECK(rec.label == static_cast<int>(ClassLabel::benign));
  }
}

TEST_CASE("evaluate joins truth and prediction files") {
  const fs::path dir = testutil::fresh_dir("cli_eval");
  {
    std::ofstream truth(dir / "truth.csv");
    truth << "slide,label\na,normal\nb,benign\nc,insitu\nd,invasive\n";
    std::ofstream pred(dir / "pred.csv");
    pred << "slide,label\na,normal\nb,benign\nc,insitu\nd,normal\n";
  }
  const fs::path out = dir / "report";
  const CliResult r = run_cli("evaluate --truth " + (dir / "truth.csv").string() +
                              " --predictions " + (dir / "pred.csv").string() + " --out " +
                              out.string());
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("accuracy: 0.7500") != std::string::npos);
  CHECK(fs::exists(out / "report.txt"));
  CHECK(fs::exists(out / "report.json"));

  // predictions.csv from the pipeline is accepted via its `final` column.
  {
    std::ofstream pred(dir / "pipe.csv");
    pred << "slide,truth,macenko_mv,macenko_lr,macenko_gbm,vahadane_mv,vahadane_lr,"
            "vahadane_gbm,ensemble,refined,final\n";
    for (const char* row : {"a,normal,normal,normal,normal,normal,normal,normal,normal,0,normal",
                            "b,benign,benign,benign,benign,benign,benign,benign,benign,1,benign",
                            "c,insitu,insitu,insitu,insitu,insitu,insitu,insitu,insitu,0,insitu",
                            "d,invasive,invasive,invasive,invasive,invasive,invasive,invasive,"
                            "invasive,0,invasive"})
      pred << row << "\n";
  }
  const CliResult r2 = run_cli("evaluate --truth " + (dir / "truth.csv").string() +
                               " --predictions " + (dir / "pipe.csv").string());
  REQUIRE(r2.exit_code == 0);
  CHECK(r2.output.find("accuracy: 1.0000") != std::string::npos);
}

TEST_CASE("predict runs the oracle pipeline end to end") {
  const fs::path dir = testutil::fresh_dir("cli_predict");
  const fs::path corpus = dir / "corpus";
  CorpusOptions options;
  options.images_per_class = 2;
  options.width = 512;
  options.height = 512;
  generate_synthetic_corpus(corpus.string(), options, 31);
  DatasetManifest manifest = ingest_dataset(corpus.string(), 31);
  int seen = 0;
  for (SlideEntry& e : manifest.slides) e.split = seen++ % 2 ? SplitKind::test : SplitKind::train;
  write_dataset_manifest(manifest, (dir / "manifest.csv").string());
  {
    std::ofstream cfg(dir / "config.ini");
    cfg << "[pipeline]\nclassifier = fixed-truth\n"
        << "[stain]\nsnmf_max_fit_pixels = 4000\nsnmf_max_outer_iters = 30\n"
        << "[fusion]\ngbm_estimators = 40\n"
        << "[refinement]\ngbm_estimators = 40\n";
  }
  const fs::path out = dir / "out";
  const CliResult r = run_cli("predict --manifest " + (dir / "manifest.csv").string() +
                              " --config " + (dir / "config.ini").string() + " --out " +
                              out.string());
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("accuracy: 1.0000") != std::string::npos);
  CHECK(fs::exists(out / "predictions.csv"));
  CHECK(fs::exists(out / "report.json"));
}

TEST_CASE("bad invocations fail with a nonzero exit") {
  CHECK(run_cli("frobnicate").exit_code != 0);
  CHECK(run_cli("extract-patches").exit_code != 0);  // missing --input
  const CliResult r = run_cli("evaluate --truth /nonexistent/t.csv --predictions /nonexistent/p.csv");
  CHECK(r.exit_code != 0);
  CHECK(r.output.find("error:") != std::string::npos);
  CHECK(run_cli("fit-target --target /nonexistent/x.ppm").exit_code != 0);
  CHECK(run_cli("normalize --input a --profile b --out c --method banana").exit_code != 0);
}
