#include <doctest.h>

#include <fstream>

#include <json.hpp>

#include "memr/error.hpp"
#include "memr/report.hpp"
#include "support.hpp"

using namespace memr;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path fake_run(const test::TempDir& dir, const std::string& name, const std::string& mode, double bleu,
                  const std::string& checksum = "00000000000000aa", bool complete = true) {
  const fs::path p = dir / name;
  fs::create_directories(p);
  json status{{"state", complete ? "complete" : "running"}, {"mode", mode}, {"corpus_checksum", checksum}};
  if (complete)
    status["metrics"] = {{"bleu_f", bleu},      {"bleu_b", bleu / 2},     {"bleu_ha", bleu / 1.5},
                         {"distinct4", 0.9},    {"kl_forward", 3.0},      {"exposure_gap", {{"mean_gap", 0.01}}}};
  std::ofstream(p / "status.json") << status.dump();
  return p;
}

}  // namespace

TEST_CASE("t quantiles") {
  CHECK(t_quantile_95(1) == 12.706);
  CHECK(t_quantile_95(2) == 4.303);
  CHECK(t_quantile_95(1000) == 1.96);
  CHECK_THROWS_AS(t_quantile_95(0), Error);
}

TEST_CASE("single run has no interval") {
  test::TempDir dir("report1");
  const std::vector<fs::path> runs{fake_run(dir, "a", "TF", 0.3)};
  const auto t = build_report(runs);
  REQUIRE(t.rows.size() == 1);
  CHECK(t.rows[0].metrics[0].mean == 0.3);
  CHECK_FALSE(t.rows[0].metrics[0].ci95.has_value());
  CHECK(report_csv(t).find("TF,1,0,0.29999999999999999,,") != std::string::npos);
}

TEST_CASE("seeds by modes") {
  test::TempDir dir("report2");
  std::vector<fs::path> runs;
  const std::vector<std::string> modes{"AC+MEMR", "TF", "AC", "AC+ME"};
  for (const auto& m : modes)
    for (int s = 0; s < 3; ++s) runs.push_back(fake_run(dir, m + std::to_string(s), m, 0.2 + 0.01 * s));
  const auto t = build_report(runs);
  REQUIRE(t.rows.size() == 4);
  CHECK(t.rows[0].mode == "TF");
  CHECK(t.rows[3].mode == "AC+MEMR");
  for (const auto& r : t.rows) {
    CHECK(r.runs == 3);
    CHECK(r.metrics[0].mean == doctest::Approx(0.21));
    // sd 0.01, n 3
    CHECK(*r.metrics[0].ci95 == doctest::Approx(4.303 * 0.01 / std::sqrt(3.0)));
  }
  CHECK(json::parse(report_json(t))["rows"].size() == 4);
}

TEST_CASE("incomplete runs are flagged and mixed corpora refused") {
  test::TempDir dir("report3");
  const std::vector<fs::path> runs{fake_run(dir, "a", "AC", 0.3), fake_run(dir, "b", "AC", 0, "00000000000000aa", false)};
  const auto t = build_report(runs);
  REQUIRE(t.rows.size() == 1);
  CHECK(t.rows[0].runs == 2);
  CHECK(t.rows[0].incomplete == 1);
  CHECK(t.rows[0].metrics[0].n == 1);
  CHECK(report_text(t).find("incomplete") != std::string::npos);

  const std::vector<fs::path> mixed{fake_run(dir, "c", "AC", 0.3), fake_run(dir, "d", "AC", 0.3, "00000000000000bb")};
  try {
    build_report(mixed);
    FAIL("expected refusal");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidArgument);
  }
}
