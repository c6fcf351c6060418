#include "memr/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "memr/error.hpp"
#include "memr/trainer.hpp"

namespace memr {

using nlohmann::json;

double t_quantile_95(std::size_t dof) {
  static const double table[] = {12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
                                 2.201,  2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
                                 2.080,  2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042};
  require(dof >= 1, ErrorCode::Domain, "t quantile needs at least one degree of freedom");
  return dof <= 30 ? table[dof - 1] : 1.96;
}

namespace {

json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot read " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidArgument, p.string() + ": " + e.what());
  }
}

const std::vector<std::string> kMetrics = {"bleu_f", "bleu_b", "bleu_ha", "distinct4", "mean_exposure_gap", "kl_forward"};

}  // namespace

ReportTable build_report(std::span<const std::filesystem::path> run_dirs) {
  require(!run_dirs.empty(), ErrorCode::InvalidArgument, "report: no run directories given");
  ReportTable table;
  table.metric_names = kMetrics;
  std::map<int, ReportRow> rows;
  std::map<int, std::vector<std::vector<double>>> values;
  std::string first_dir;
  for (const auto& dir : run_dirs) {
    const json status = read_json(dir / "status.json");
    const std::string checksum = status.value("corpus_checksum", "");
    if (first_dir.empty()) {
      first_dir = dir.string();
      table.corpus_checksum = checksum;
    }
    require(checksum == table.corpus_checksum, ErrorCode::InvalidArgument,
            "report: " + dir.string() + " used a different corpus than " + first_dir + "; refusing to aggregate");
    const Mode mode = parse_mode(status.at("mode").get<std::string>());
    const int key = static_cast<int>(mode);
    auto& row = rows[key];
    row.mode = std::string(mode_name(mode));
    ++row.runs;
    auto& vals = values[key];
    vals.resize(kMetrics.size());
    if (status.value("state", "") != "complete" || !status.contains("metrics")) {
      ++row.incomplete;
      continue;
    }
    const json& m = status["metrics"];
    for (std::size_t i = 0; i < kMetrics.size(); ++i) {
      const auto& name = kMetrics[i];
      if (name == "mean_exposure_gap") {
        if (m.contains("exposure_gap")) vals[i].push_back(m["exposure_gap"].at("mean_gap").get<double>());
      } else if (m.contains(name)) {
        vals[i].push_back(m[name].get<double>());
      }
    }
  }
  for (auto& [key, row] : rows) {
    for (const auto& v : values[key]) {
      MetricSummary s;
      s.n = v.size();
      if (!v.empty()) {
        double sum = 0.0;
        for (double x : v) sum += x;
        s.mean = sum / static_cast<double>(v.size());
        if (v.size() >= 2) {
          double ss = 0.0;
          for (double x : v) ss += (x - s.mean) * (x - s.mean);
          const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
          s.ci95 = t_quantile_95(v.size() - 1) * sd / std::sqrt(static_cast<double>(v.size()));
        }
      }
      row.metrics.push_back(s);
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string report_text(const ReportTable& t) {
  std::ostringstream out;
  char buf[96];
  std::snprintf(buf, sizeof buf, "%-9s %5s", "mode", "runs");
  out << buf;
  for (const auto& m : t.metric_names) {
    std::snprintf(buf, sizeof buf, "  %-20s", m.c_str());
    out << buf;
  }
  out << "  flags\n";
  for (const auto& r : t.rows) {
    std::snprintf(buf, sizeof buf, "%-9s %5zu", r.mode.c_str(), r.runs);
    out << buf;
    for (const auto& m : r.metrics) {
      if (m.n == 0) std::snprintf(buf, sizeof buf, "  %-20s", "-");
      else if (m.ci95) std::snprintf(buf, sizeof buf, "  %8.4f +- %-8.4f", m.mean, *m.ci95);
      else std::snprintf(buf, sizeof buf, "  %8.4f %-11s", m.mean, "");
      out << buf;
    }
    if (r.incomplete) out << "  incomplete runs: " << r.incomplete;
    out << '\n';
  }
  return out.str();
}

std::string report_csv(const ReportTable& t) {
  std::ostringstream out;
  out << "mode,runs,incomplete";
  for (const auto& m : t.metric_names) out << ',' << m << ',' << m << "_ci95";
  out << '\n';
  char buf[64];
  for (const auto& r : t.rows) {
    out << r.mode << ',' << r.runs << ',' << r.incomplete;
    for (const auto& m : r.metrics) {
      if (m.n == 0) {
        out << ",,";
        continue;
      }
      std::snprintf(buf, sizeof buf, ",%.17g,", m.mean);
      out << buf;
      if (m.ci95) {
        std::snprintf(buf, sizeof buf, "%.17g", *m.ci95);
        out << buf;
      }
    }
    out << '\n';
  }
  return out.str();
}

std::string report_json(const ReportTable& t) {
  json rows = json::array();
  for (const auto& r : t.rows) {
    json metrics = json::object();
    for (std::size_t i = 0; i < r.metrics.size(); ++i) {
      const auto& m = r.metrics[i];
      metrics[t.metric_names[i]] = {{"mean", m.n ? json(m.mean) : json(nullptr)},
                                    {"ci95", m.ci95 ? json(*m.ci95) : json(nullptr)},
                                    {"n", m.n}};
    }
    rows.push_back({{"mode", r.mode}, {"runs", r.runs}, {"incomplete", r.incomplete}, {"metrics", metrics}});
  }
  return json{{"corpus_checksum", t.corpus_checksum}, {"rows", rows}, {"table", report_text(t)}}.dump(2);
}

}  // namespace memr
