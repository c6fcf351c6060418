#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "memr/error.hpp"
#include "memr/evalharness.hpp"
#include "support.hpp"

using namespace memr;

namespace {

CompletionCurve sample_curve(std::string model, PrefixSource src) {
  CompletionCurve c;
  c.model = std::move(model);
  c.mode = "TF";
  c.source = src;
  c.tau = 0.5;
  c.seed = 77;
  c.points = {{2, 0.75, 0.011, 500}, {4, 0.7123456789012345, 0.0125, 480}, {8, 0.6, 0.02, 300}};
  return c;
}

std::size_t count_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

}  // namespace

TEST_CASE("curve files") {
  test::TempDir dir("curves");
  const std::vector<CompletionCurve> one{sample_curve("lstm", PrefixSource::Seen)};
  write_curves_csv(one, dir / "c.csv");
  CHECK(count_lines(dir / "c.csv") == 4);
  CHECK(read_curves_csv(dir / "c.csv") == one);

  std::vector<CompletionCurve> grid;
  for (const char* m : {"TF", "AC", "AC+ME", "AC+MEMR"})
    for (auto s : {PrefixSource::Seen, PrefixSource::Unseen}) grid.push_back(sample_curve(m, s));
  write_curves_dat(grid, dir / "c.dat");
  std::ifstream in(dir / "c.dat");
  std::string line;
  int blocks = 0;
  while (std::getline(in, line))
    if (line.rfind("# model=", 0) == 0) ++blocks;
  CHECK(blocks == 8);
  write_curves_csv(grid, dir / "grid.csv");
  CHECK(read_curves_csv(dir / "grid.csv") == grid);
}

TEST_CASE("exposure gap of identical curves is zero") {
  const auto c = sample_curve("m", PrefixSource::Seen);
  auto u = c;
  u.source = PrefixSource::Unseen;
  const auto g = exposure_gap(c, u);
  for (double x : g.gap) CHECK(x == 0.0);
  CHECK(g.mean_gap == 0.0);
  CHECK(g.k == std::vector<std::size_t>{2, 4, 8});
}

TEST_CASE("completion config validation") {
  CompletionConfig c;
  CHECK_NOTHROW(c.validate());
  c.k_list = {4, 2};
  CHECK_THROWS_AS(c.validate(), Error);
  c.k_list = {32};
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("oracle-as-model shows no exposure gap") {
  const auto g = test::toy_grammar(16);
  const Vocabulary v = g.vocabulary();
  const ActorParams d = distill_first_order(g, v);
  const auto train = synth_generate(g, 5000, 3), test = synth_generate(g, 5000, 4, Split::Test);
  CompletionConfig cfg;
  cfg.k_list = {0, 2, 4, 6};
  cfg.t_max = 16;
  cfg.prefixes_per_k = 500;
  cfg.bootstrap = 200;
  const auto seen = completion_sweep(d, train.sentences, PrefixSource::Seen, cfg, 5, "oracle", "distilled");
  const auto unseen = completion_sweep(d, test.sentences, PrefixSource::Unseen, cfg, 5, "oracle", "distilled");
  REQUIRE(seen.points.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    INFO("k = " << seen.points[i].k);
    CHECK(seen.points[i].bleu > 0.0);
    // Overlapping 95% intervals.
    CHECK(std::abs(seen.points[i].bleu - unseen.points[i].bleu) <= 1.96 * (seen.points[i].se + unseen.points[i].se));
  }
  const auto gap = exposure_gap(seen, unseen);
  CHECK(std::abs(gap.mean_gap) <= 2 * gap.mean_se);
}

TEST_CASE("references are the prefix source split") {
  const auto g = test::toy_grammar(16);
  const ActorParams d = distill_first_order(g, g.vocabulary());
  const auto c = synth_generate(g, 200, 1);
  const auto other = synth_generate(g, 20, 2, Split::Test);
  CompletionConfig cfg;
  cfg.k_list = {1, 3};
  cfg.t_max = 16;
  cfg.prefixes_per_k = 50;
  cfg.bootstrap = 0;
  const auto own = completion_sweep(d, c.sentences, PrefixSource::Seen, cfg, 9);
  CHECK(completion_sweep(d, c.sentences, c.sentences, PrefixSource::Seen, cfg, 9, "model", "") == own);
  const auto swapped = completion_sweep(d, c.sentences, other.sentences, PrefixSource::Seen, cfg, 9, "model", "");
  CHECK(swapped.points[0].bleu != own.points[0].bleu);
}

TEST_CASE("completion sweep is reproducible") {
  const auto g = test::toy_grammar(16);
  const ActorParams d = distill_first_order(g, g.vocabulary());
  const auto c = synth_generate(g, 200, 1);
  CompletionConfig cfg;
  cfg.k_list = {1, 3};
  cfg.t_max = 16;
  cfg.prefixes_per_k = 50;
  cfg.bootstrap = 20;
  CHECK(completion_sweep(d, c.sentences, PrefixSource::Seen, cfg, 9) ==
        completion_sweep(d, c.sentences, PrefixSource::Seen, cfg, 9));
}
