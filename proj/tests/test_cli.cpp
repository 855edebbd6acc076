#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "opcap/cli.hpp"
#include "opcap/metrics.hpp"
#include "opcap/util.hpp"

using namespace opcap;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("opcap_cli_" + name);
  fs::remove_all(p);
  return p;
}

const std::vector<std::string> kTinyModel = {
    "--set", "model.image_size=16", "--set", "model.conv=[{\"out_channels\":8,\"kernel\":2,\"stride\":2}]",
    "--set", "model.embed_dim=8",   "--set", "model.hidden_dim=16",
    "--set", "model.attention_dim=8", "--set", "train.epochs=1", "--set", "train.batch_size=8"};

}  // namespace

TEST_CASE("usage errors exit with status 1 and print help") {
  Run r = run({});
  CHECK(r.code == 1);
  CHECK(r.err.find("Usage") != std::string::npos);
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({"caption", "--checkpoint", "/nonexistent.ckpt", "--image-a", "a", "--image-b", "b"}).code == 1);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("gen-data is deterministic and rejects unknown settings") {
  const fs::path a = scratch("gen_a"), b = scratch("gen_b");
  const Run ra = run({"gen-data", "--out", a.string(), "--count", "1000", "--seed", "4", "--set", "resolution=16"});
  const Run rb = run({"gen-data", "--out", b.string(), "--count", "1000", "--seed", "4", "--set", "resolution=16",
                      "--workers", "2"});
  REQUIRE(ra.code == 0);
  CHECK(ra.out.find("850 train, 50 dev, 100 test") != std::string::npos);
  CHECK(ra.out.substr(ra.out.find("checksum")) == rb.out.substr(rb.out.find("checksum")));
  CHECK(read_text_file(a / "manifest.txt") == read_text_file(b / "manifest.txt"));

  const Run bad = run({"gen-data", "--out", scratch("gen_c").string(), "--set", "no_such_key=1"});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("unknown config key") != std::string::npos);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("extract-pairs writes TSV and reports skipped changes") {
  const fs::path dir = scratch("timeline");
  fs::create_directories(dir);
  write_text_file(dir / "t.json", R"({"start":0,"end":5,"fps":30,"events":[
    {"t":0.0,"triplet":["cup","on","table"]},
    {"t":2.0,"triplet":["person","holding","cup"]},
    {"t":4.9,"triplet":["cup","in","sink"]}]})");
  const Run r = run({"extract-pairs", "--timeline", (dir / "t.json").string()});
  CHECK(r.code == 0);
  CHECK(r.out.rfind("frame_before\tframe_after", 0) == 0);
  CHECK(r.out.find("45\t75\t1.5\t2.5\tperson\tholding\tcup") != std::string::npos);
  CHECK(r.err.find("skipped: t=4.9") != std::string::npos);

  write_text_file(dir / "bad.json", R"({"start":0,"end":5,"events":[{"t":3,"triplet":["a","b","c"]},{"t":1,"triplet":["a","b","c"]}]})");
  CHECK(run({"extract-pairs", "--timeline", (dir / "bad.json").string()}).code == 2);
}

TEST_CASE("train, caption, eval and report-plots end to end") {
  const fs::path data = scratch("e2e_data"), runs = scratch("e2e_run"), plots = scratch("e2e_plots");
  REQUIRE(run({"gen-data", "--out", data.string(), "--count", "30", "--set", "resolution=16"}).code == 0);

  std::vector<std::string> args{"train", "--data", data.string(), "--out", runs.string()};
  args.insert(args.end(), kTinyModel.begin(), kTinyModel.end());
  const Run t = run(args);
  REQUIRE(t.code == 0);
  CHECK(t.out.find("trained 1 epochs") != std::string::npos);
  const std::string ckpt = (runs / "checkpoints" / "last.ckpt").string();

  const Run c = run({"caption", "--checkpoint", ckpt, "--image-a", (data / "images" / "s000000_a.png").string(),
                     "--image-b", (data / "images" / "s000000_b.png").string()});
  CHECK(c.code == 0);
  CHECK(std::count(c.out.begin(), c.out.end(), '\n') == 1);
  const Run cb = run({"caption", "--checkpoint", ckpt, "--image-a", (data / "images" / "s000000_a.png").string(),
                      "--image-b", (data / "images" / "s000000_b.png").string(), "--beam", "3"});
  CHECK(cb.code == 0);
  CHECK(std::count(cb.out.begin(), cb.out.end(), '\n') == 1);

  const Run e = run({"eval", "--checkpoint", ckpt, "--data", data.string(), "--split", "test"});
  REQUIRE(e.code == 0);
  CHECK(e.out.find("BLEU-4\tROUGE-L\tCIDEr") != std::string::npos);
  CHECK(e.out.find("noun_F\tverb_P\tverb_R\tverb_F") != std::string::npos);
  CHECK(e.err.find("exact match") != std::string::npos);
  CHECK(parse_report(e.out).size() == 1u);

  const std::string report = (runs / "report.tsv").string();
  REQUIRE(run({"eval", "--checkpoint", ckpt, "--data", data.string(), "--report", report, "--system", "tiny"}).code ==
          0);
  CHECK(fs::exists(report + ".captions.tsv"));
  CHECK(fs::exists(report + ".config.json"));
  CHECK(parse_report(read_text_file(report))[0].system == "tiny");

  const std::string feats = (runs / "features.bin").string();
  REQUIRE(run({"extract-features", "--checkpoint", ckpt, "--data", data.string(), "--out", feats}).code == 0);
  const Run ef = run({"eval", "--checkpoint", ckpt, "--data", data.string(), "--features", feats});
  CHECK(ef.code == 0);
  CHECK(ef.out == e.out);

  const Run p = run({"report-plots", "--log", (runs / "train_log.tsv").string(), "--report", report, "--out",
                     plots.string()});
  CHECK(p.code == 0);
  for (const char* f : {"loss_curves.svg", "dev_bleu4.svg", "automatic_metrics.svg", "content_words.svg", "plots.json"}) {
    CHECK(fs::exists(plots / f));
  }
  CHECK(run({"report-plots", "--out", plots.string()}).code == 1);

  // A dataset with a different vocabulary is refused.
  const fs::path other = scratch("e2e_other");
  REQUIRE(run({"gen-data", "--out", other.string(), "--count", "30", "--seed", "9", "--set", "resolution=16"}).code == 0);
  const Run mismatch = run({"eval", "--checkpoint", ckpt, "--data", other.string()});
  CHECK(mismatch.code == 2);
  CHECK(mismatch.err.find("vocabulary mismatch") != std::string::npos);

  // Bad override type is a configuration error.
  const Run bad = run({"train", "--data", data.string(), "--out", runs.string(), "--set", "train.epochs=\"x\""});
  CHECK(bad.code == 1);
}
