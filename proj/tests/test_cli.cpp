#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <string>

#include <json.hpp>

#include "support.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

Result run(const std::string& args, const fs::path& cwd, const std::string& env = "") {
  const fs::path o = cwd / ".stdout", e = cwd / ".stderr";
  const std::string cmd = "cd '" + cwd.string() + "' && " + env + " '" MEMR_CLI_PATH "' " + args + " >'" + o.string() +
                          "' 2>'" + e.string() + "'";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(o);
  r.err = slurp(e);
  fs::remove(o);
  fs::remove(e);
  return r;
}

const char* kTinyTrain =
    " --hidden 8 --embed 4 --critic-width 4 --epochs 1 --rounds 1 --critic-pretrain-steps 2 --rollouts 2"
    " --valid-samples 20 --bleu-samples 30 --bleu-bootstrap 3 --k 1,2 --prefixes-per-k 10 --kl-samples 100"
    " --t-max 16 --critic-batch 8";

void make_corpus(const fs::path& cwd, const std::string& out, int seed = 4) {
  const auto r = run("make-corpus --seed " + std::to_string(seed) +
                         " --n-train 150 --n-valid 30 --n-test 30 --alphabet 10 --groups 2 --t-max 16 --out " + out,
                     cwd);
  REQUIRE(r.code == 0);
}

}  // namespace

TEST_CASE("usage errors exit 1") {
  memr::test::TempDir dir("cli-usage");
  auto r = run("train --no-such-flag", dir.path());
  CHECK(r.code == 1);
  CHECK(r.err.find("--corpus") != std::string::npos);
  CHECK(run("", dir.path()).code == 1);
  CHECK(run("frobnicate", dir.path()).code == 1);
  r = run("gradcheck", dir.path());
  CHECK(r.code == 1);
  CHECK(r.err.find("--seed") != std::string::npos);
  CHECK(run("make-corpus --seed x --out c", dir.path()).code == 1);
  CHECK(run("make-corpus --seed 1", dir.path()).code == 1);
  CHECK(run("--help", dir.path()).code == 0);
}

TEST_CASE("gradcheck") {
  memr::test::TempDir dir("cli-grad");
  const auto r = run("gradcheck --seed 1", dir.path());
  CHECK(r.code == 0);
  CHECK(r.out.find("lstm_cell") != std::string::npos);
  CHECK(r.out.find("all components pass") != std::string::npos);
}

TEST_CASE("eval-bleu perfect match and missing input") {
  memr::test::TempDir dir("cli-bleu");
  make_corpus(dir.path(), "c");
  auto r = run("eval-bleu --samples c/test.txt --refs c/test.txt --n 5", dir.path());
  CHECK(r.code == 0);
  CHECK(r.out.find("bleu_f5=1.000000 bleu_b5=1.000000 bleu_ha5=1.000000") != std::string::npos);
  r = run("eval-bleu --samples missing.txt --refs c/test.txt", dir.path());
  CHECK(r.code == 2);
  CHECK(r.err.find("missing.txt") != std::string::npos);
}

TEST_CASE("train, outputs, manifests and reruns") {
  memr::test::TempDir dir("cli-train");
  make_corpus(dir.path(), "corpus");
  const fs::path run3 = dir / "run3";
  auto r = run(std::string("train --mode AC+MEMR --corpus corpus --seed 3 --out run3 --deterministic") + kTinyTrain,
               dir.path());
  REQUIRE(r.code == 0);
  for (const char* f : {"checkpoints/actor_final.ckpt", "checkpoints/critic_final.ckpt", "log.jsonl", "reports/bleu.json",
                        "reports/bleu.csv", "reports/completion.csv", "reports/completion.dat", "manifest.json"})
    CHECK(fs::exists(run3 / f));
  const json m = json::parse(slurp(run3 / "manifest.json"));
  CHECK(m["subcommand"] == "train");
  CHECK(m["state"] == "complete");
  CHECK(m["exit_status"] == 0);
  CHECK(m["seed"] == 3);
  CHECK(m["options"]["trainer"]["critic"]["layers"] == 8);
  CHECK(m["options"]["trainer"]["actor"]["hidden"] == 8);
  CHECK(m["artifacts"].size() >= 10);

  // Existing output without --force.
  r = run(std::string("train --corpus corpus --seed 3 --out run3") + kTinyTrain, dir.path());
  CHECK(r.code == 2);
  CHECK(r.err.find("--force") != std::string::npos);

  // Rerun from the manifest in another working directory.
  fs::create_directories(dir / "elsewhere");
  r = run("train --manifest ../run3/manifest.json --out ../rerun", dir / "elsewhere");
  REQUIRE(r.code == 0);
  for (const auto& a : m["artifacts"]) {
    const std::string f = a.get<std::string>();
    INFO(f);
    CHECK(slurp(run3 / f) == slurp(dir / "rerun" / f));
  }

  // Flags win over the config file.
  std::ofstream(dir / "cfg.json") << R"({"n": 2, "tau": 0.7})";
  r = run("generate --run run3 --seed 5 --config cfg.json --n 4", dir.path());
  CHECK(r.code == 0);
  CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 4);
  std::ofstream(dir / "bad.json") << R"({"nn": 2})";
  CHECK(run("generate --run run3 --seed 5 --config bad.json", dir.path()).code == 1);

  r = run("eval-completion --run run3 --corpus corpus --seed 1 --k 1,2 --prefixes-per-k 10 --bootstrap 3 --out comp",
          dir.path());
  CHECK(r.code == 0);
  CHECK(fs::exists(dir / "comp" / "completion.csv"));
  r = run("eval-kl --run run3 --grammar corpus/grammar.json --seed 1 --m 100", dir.path());
  CHECK(r.code == 0);
  CHECK(r.out.find("forward_kl") != std::string::npos);

  r = run("report run3 --out rep", dir.path());
  CHECK(r.code == 0);
  CHECK(r.out.find("AC+MEMR") != std::string::npos);
  CHECK(fs::exists(dir / "rep" / "report.csv"));

  // A run on a different corpus cannot be aggregated with run3.
  make_corpus(dir.path(), "corpus2", 5);
  REQUIRE(run(std::string("pretrain --corpus corpus2 --seed 1 --out other") + kTinyTrain, dir.path()).code == 0);
  r = run("report run3 other", dir.path());
  CHECK(r.code == 1);
  CHECK(r.err.find("different corpus") != std::string::npos);
}

TEST_CASE("output root from the environment") {
  memr::test::TempDir dir("cli-env");
  fs::create_directories(dir / "root");
  const auto r = run("gradcheck --seed 2 --out g", dir.path(), "MEMR_OUT_ROOT='" + (dir / "root").string() + "'");
  CHECK(r.code == 0);
  CHECK(fs::exists(dir / "root" / "g" / "gradcheck.json"));
  CHECK(fs::exists(dir / "root" / "g" / "manifest.json"));
}

TEST_CASE("manifest reruns keep non-default trainer flags") {
  memr::test::TempDir dir("cli-ss");
  make_corpus(dir.path(), "c");
  REQUIRE(run(std::string("pretrain --corpus c --seed 2 --mode SS --deterministic --out a") + kTinyTrain, dir.path())
              .code == 0);
  REQUIRE(run("pretrain --manifest a/manifest.json --out b", dir.path()).code == 0);
  const json m = json::parse(slurp(dir / "b" / "manifest.json"));
  CHECK(m["options"]["trainer"]["mode"] == "SS");
  CHECK(slurp(dir / "a" / "checkpoints" / "actor_pretrain.ckpt") == slurp(dir / "b" / "checkpoints" / "actor_pretrain.ckpt"));
  // An explicit flag still overrides the manifest.
  REQUIRE(run("pretrain --manifest a/manifest.json --mode TF --out t", dir.path()).code == 0);
  CHECK(json::parse(slurp(dir / "t" / "manifest.json"))["options"]["trainer"]["mode"] == "TF");
}
