#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "sr2seg/cli.hpp"

using namespace sr2seg;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream o, e;
  const int code = cmd_dispatch(args, o, e);
  return {code, o.str(), e.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string l; std::getline(in, l);) n += !l.empty();
  return n;
}

const std::vector<std::string> kTiny{"sr.feat0=8", "sr.nr=4", "sr.stages=1", "seg.encoder_plan=1x4,1x8",
                                     "data.tile=32", "epochs=2", "base_lr=1e-3", "checkpoint_every=1", "data.dataset=synthetic"};

std::vector<std::string> train_args(const fs::path& root, const fs::path& out, const std::string& mode) {
  std::vector<std::string> a{"train", "--mode", mode, "--out", out.string(), "--panels", "1",
                             "data.root=" + root.string()};
  a.insert(a.end(), kTiny.begin(), kTiny.end());
  return a;
}

struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / "sr2seg_cli";
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  fs::path data() const { return dir / "data"; }
};

}  // namespace

TEST_CASE("synth writes a manifest of the requested size", "[cli]") {
  Workspace w;
  const auto r = run({"synth", "--n", "16", "--n-test", "4", "--tile", "32", "--out",
                      (w.data() / "synthetic").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("manifest with 16 samples") != std::string::npos);
  const auto root = w.data() / "synthetic";
  CHECK(line_count(root / "train_manifest.tsv") == 16);
  CHECK(line_count(root / "test_manifest.tsv") == 4);
  CHECK(fs::exists(root / "run.json"));
  CHECK_FALSE(fs::exists(w.data() / "synthetic.partial"));
  const std::string listed = slurp(root / "artifacts.txt");
  CHECK(listed.find("classes.txt") != std::string::npos);
  CHECK(listed.find("train/images/") != std::string::npos);
  const auto meta = nlohmann::json::parse(slurp(root / "run.json"));
  CHECK(meta["command"] == "synth");
  CHECK(meta["seed"] == 0);
}

TEST_CASE("exit codes", "[cli]") {
  Workspace w;
  CHECK(run({"synth", "--bogus"}).code == 2);
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"--version"}).out.find(kVersion) != std::string::npos);
  const auto bad_key = run({"sweep", "--out", (w.dir / "s").string(), "no_such_key=1"});
  CHECK(bad_key.code == 2);
  CHECK(bad_key.err.find("no_such_key") != std::string::npos);
  CHECK(run({"sweep", "--out", (w.dir / "s").string(), "not-a-pair"}).code == 2);
  CHECK(run({"report"}).code == 2);
  const auto missing = run({"train", "--out", (w.dir / "r").string(), "data.root=" + (w.dir / "nowhere").string(),
                            "data.dataset=synthetic", "data.tile=32"});
  CHECK(missing.code == 1);
  CHECK(missing.err.find("nowhere") != std::string::npos);
  CHECK_FALSE(fs::exists(w.dir / "r"));
}

TEST_CASE("sweep writes the alpha/beta grid", "[cli]") {
  Workspace w;
  const auto r = run({"sweep", "--out", (w.dir / "sweep").string(), "epochs=10"});
  REQUIRE(r.code == 0);
  std::size_t cfgs = 0;
  for (const auto& e : fs::directory_iterator(w.dir / "sweep")) cfgs += e.path().extension() == ".cfg";
  CHECK(cfgs == 24);
  CHECK(line_count(w.dir / "sweep" / "sweep.tsv") == 25);
  RunConfig child = load_config_file((w.dir / "sweep" / "alpha0.01_beta100.cfg").string());
  CHECK(child.train.weights.alpha == 0.01);
  CHECK(child.train.weights.beta == 100);
  CHECK(child.train.epochs == 10);
  CHECK(child.train.mode == Mode::end2end);
  CHECK(line_count(w.dir / "sweep" / "artifacts.txt") == 24 + 3);
}

TEST_CASE("train, eval and report", "[cli]") {
  Workspace w;
  REQUIRE(run({"synth", "--n", "3", "--n-test", "2", "--tile", "32", "--out", (w.data() / "synthetic").string()})
              .code == 0);
  const auto lr_run = w.dir / "run_lr", e2e_run = w.dir / "run_e2e";
  const auto t1 = run(train_args(w.data(), lr_run, "lr"));
  REQUIRE(t1.code == 0);
  CHECK(t1.out.find("epoch 2/2") != std::string::npos);
  const auto t2 = run(train_args(w.data(), e2e_run, "end2end"));
  REQUIRE(t2.code == 0);
  for (const char* f : {"history.csv", "config.cfg", "train.log", "run.json", "artifacts.txt", "eval/metrics.json",
                        "eval/report.csv", "eval/confusion_counts.csv", "checkpoints/last.ckpt"})
    CHECK(fs::exists(e2e_run / f));
  CHECK(line_count(e2e_run / "history.csv") == 3);
  const std::string listed = slurp(e2e_run / "artifacts.txt");
  CHECK(listed.find("eval/metrics.json") != std::string::npos);
  CHECK(listed.find("checkpoints/last.ckpt") != std::string::npos);

  SECTION("eval of the last checkpoint reproduces the training evaluation") {
    const auto out1 = w.dir / "ev1", out2 = w.dir / "ev2";
    REQUIRE(run({"eval", "--run", e2e_run.string(), "--checkpoint", "last", "--panels", "1", "--out", out1.string()})
                .code == 0);
    REQUIRE(run({"eval", "--run", e2e_run.string(), "--panels", "1", "--out", out2.string()}).code == 0);
    CHECK(slurp(out1 / "metrics.json") == slurp(out2 / "metrics.json"));
    CHECK(slurp(out1 / "report.csv") == slurp(e2e_run / "eval" / "report.csv"));
    CHECK(slurp(out1 / "confusion_counts.csv") == slurp(e2e_run / "eval" / "confusion_counts.csv"));
    CHECK(run({"eval", "--run", e2e_run.string(), "--out", (w.dir / "ev3").string(), "alpha=0.5"}).code == 2);
  }

  SECTION("report orders LR before End-to-end") {
    const auto r = run({"report", "--runs", e2e_run.string(), lr_run.string(), "--out", (w.dir / "rep").string()});
    REQUIRE(r.code == 0);
    const auto lr_at = r.out.find(",LR,"), e2e_at = r.out.find(",End-to-end,");
    REQUIRE(lr_at != std::string::npos);
    REQUIRE(e2e_at != std::string::npos);
    CHECK(lr_at < e2e_at);
    CHECK(r.out.find("d_kappa") != std::string::npos);
    CHECK(slurp(w.dir / "rep" / "comparison.csv") == r.out);
    CHECK(fs::exists(w.dir / "rep" / "01_synthetic_x4_LR_confusion.csv"));
  }

  SECTION("report refuses runs with different class counts") {
    REQUIRE(run({"synth", "--n", "2", "--n-test", "1", "--tile", "32", "--classes", "4", "--out",
                 (w.dir / "data4" / "synthetic").string()})
                .code == 0);
    const auto four = w.dir / "run_four";
    REQUIRE(run(train_args(w.dir / "data4", four, "lr")).code == 0);
    const auto r = run({"report", "--runs", lr_run.string(), four.string(), "--out", (w.dir / "rep4").string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("class counts") != std::string::npos);
    CHECK_FALSE(fs::exists(w.dir / "rep4"));
  }

  SECTION("resume continues an interrupted run") {
    auto args = train_args(w.data(), w.dir / "resumed", "end2end");
    args.insert(args.begin() + 1, {"--resume", (e2e_run / "checkpoints" / "epoch_0001.ckpt").string()});
    const auto r = run(args);
    INFO(r.err);
    REQUIRE(r.code == 0);
    CHECK(r.out.find("epoch 1/2") == std::string::npos);
    CHECK(slurp(w.dir / "resumed" / "eval" / "metrics.json") != "");
    CHECK(nlohmann::json::parse(slurp(w.dir / "resumed" / "eval" / "metrics.json"))["confusion"] ==
          nlohmann::json::parse(slurp(e2e_run / "eval" / "metrics.json"))["confusion"]);
  }
}
