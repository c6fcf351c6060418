#include "memr/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "memr/error.hpp"
#include "memr/metrics.hpp"

namespace memr {

std::string_view source_name(PrefixSource s) { return s == PrefixSource::Seen ? "seen" : "unseen"; }

PrefixSource parse_source(std::string_view s) {
  if (s == "seen") return PrefixSource::Seen;
  if (s == "unseen") return PrefixSource::Unseen;
  fail(ErrorCode::InvalidArgument, "unknown prefix source '" + std::string(s) + "'");
}

void CompletionConfig::validate() const {
  require(!k_list.empty(), ErrorCode::InvalidArgument, "completion: k list is empty");
  for (std::size_t i = 0; i < k_list.size(); ++i) {
    require(k_list[i] < t_max, ErrorCode::InvalidArgument,
            "completion: k = " + std::to_string(k_list[i]) + " must be below t_max " + std::to_string(t_max));
    require(i == 0 || k_list[i] > k_list[i - 1], ErrorCode::InvalidArgument, "completion: k values must be strictly increasing");
  }
  require(tau > 0.0, ErrorCode::Domain, "completion: temperature must be > 0");
  require(prefixes_per_k > 0 && completions_per_prefix > 0, ErrorCode::InvalidArgument,
          "completion: prefix and completion counts must be positive");
  require(order >= 1, ErrorCode::InvalidArgument, "completion: BLEU order must be >= 1");
}

CompletionCurve completion_sweep(const ActorParams& actor, std::span<const Sentence> split, PrefixSource source,
                                 const CompletionConfig& config, std::uint64_t seed, std::string model, std::string mode) {
  return completion_sweep(actor, split, split, source, config, seed, std::move(model), std::move(mode));
}

CompletionCurve completion_sweep(const ActorParams& actor, std::span<const Sentence> prefix_split,
                                 std::span<const Sentence> references, PrefixSource source,
                                 const CompletionConfig& config, std::uint64_t seed, std::string model, std::string mode) {
  config.validate();
  require(!prefix_split.empty(), ErrorCode::InvalidArgument, "completion: prefix split is empty");
  const std::size_t max_k = config.k_list.back();
  std::vector<Tokens> eligible;
  for (const auto& s : prefix_split) {
    auto surf = surface(s);
    if (surf.size() >= max_k + 1) eligible.push_back(std::move(surf));
  }
  if (eligible.empty()) {
    std::string ks;
    for (auto k : config.k_list) ks += (ks.empty() ? "" : ",") + std::to_string(k);
    fail(ErrorCode::InvalidArgument, "completion: no sentence long enough for k in {" + ks + "}");
  }

  const auto refs_surface = surfaces(references);
  const BleuReferences refs(refs_surface, config.order);
  const auto src = static_cast<std::uint64_t>(source);
  Rng pick_rng(derive_seed(seed, "completion-prefixes", {src}));
  std::vector<std::size_t> chosen(config.prefixes_per_k);
  for (auto& c : chosen) c = pick_rng.below(eligible.size());

  CompletionCurve curve{std::move(model), std::move(mode), source, config.tau, seed, {}};
  const std::size_t per = config.completions_per_prefix;
  for (std::size_t k : config.k_list) {
    std::vector<std::vector<int>> prefixes;
    std::vector<Rng> streams;
    for (std::size_t i = 0; i < chosen.size(); ++i)
      for (std::size_t j = 0; j < per; ++j) {
        const auto& s = eligible[chosen[i]];
        prefixes.emplace_back(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(k));
        streams.emplace_back(derive_seed(seed, "completion", {src, k, i, j}));
      }
    const auto completed = sample_batch(actor, config.tau, config.t_max, prefixes, streams);
    std::vector<BleuStats> stats;
    stats.reserve(completed.size());
    for (const auto& c : completed) {
      Tokens cand = surface(c);
      if (config.score_completion_only) cand.erase(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k));
      stats.push_back(candidate_stats(refs, cand));
    }
    CurvePoint pt{k, combine_bleu(stats, config.order).score, 0.0, chosen.size()};
    if (config.bootstrap >= 2) {
      Rng boot(derive_seed(seed, "completion-bootstrap", {src, k}));
      std::vector<std::size_t> pick(chosen.size() * per);
      double sum = 0.0, sum2 = 0.0;
      for (std::size_t r = 0; r < config.bootstrap; ++r) {
        for (std::size_t i = 0; i < chosen.size(); ++i) {
          const std::size_t p = boot.below(chosen.size());
          for (std::size_t j = 0; j < per; ++j) pick[i * per + j] = p * per + j;
        }
        const double v = combine_bleu(stats, config.order, pick).score;
        sum += v;
        sum2 += v * v;
      }
      const double n = static_cast<double>(config.bootstrap);
      const double mean = sum / n;
      pt.se = std::sqrt(std::max(0.0, (sum2 - n * mean * mean) / (n - 1.0)));
    }
    curve.points.push_back(pt);
  }
  return curve;
}

ExposureGap exposure_gap(const CompletionCurve& seen, const CompletionCurve& unseen) {
  require(seen.points.size() == unseen.points.size() && !seen.points.empty(), ErrorCode::InvalidArgument,
          "exposure_gap: curves have different k lists");
  ExposureGap g;
  double se_sum = 0.0;
  for (std::size_t i = 0; i < seen.points.size(); ++i) {
    const auto& a = seen.points[i];
    const auto& b = unseen.points[i];
    require(a.k == b.k, ErrorCode::InvalidArgument, "exposure_gap: curves have different k lists");
    g.k.push_back(a.k);
    g.gap.push_back(a.bleu - b.bleu);
    g.se.push_back(std::sqrt(a.se * a.se + b.se * b.se));
    g.mean_gap += a.bleu - b.bleu;
    se_sum += g.se.back();
  }
  const double K = static_cast<double>(g.k.size());
  g.mean_gap /= K;
  // Points share their prefixes across k, so treat them as fully correlated.
  g.mean_se = se_sum / K;
  return g;
}

namespace {

void check_field(const std::string& s) {
  require(s.find_first_of(",\n\r") == std::string::npos, ErrorCode::InvalidArgument,
          "curve label '" + s + "' must not contain commas or line breaks");
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_curves_csv(std::span<const CompletionCurve> curves, const std::filesystem::path& path) {
  require(!curves.empty(), ErrorCode::InvalidArgument, "report: no curves to write");
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + path.string());
  out << "model,mode,source,k,tau,bleu_f4,stderr,n_prefixes,seed\n";
  for (const auto& c : curves) {
    check_field(c.model);
    check_field(c.mode);
    for (const auto& p : c.points)
      out << c.model << ',' << c.mode << ',' << source_name(c.source) << ',' << p.k << ',' << fmt(c.tau) << ','
          << fmt(p.bleu) << ',' << fmt(p.se) << ',' << p.n_prefixes << ',' << c.seed << '\n';
  }
  require(static_cast<bool>(out), ErrorCode::Io, "failed writing " + path.string());
}

std::vector<CompletionCurve> read_curves_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  require(line == "model,mode,source,k,tau,bleu_f4,stderr,n_prefixes,seed", ErrorCode::InvalidArgument,
          path.string() + ": unexpected header");
  std::vector<CompletionCurve> curves;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    require(f.size() == 9, ErrorCode::InvalidArgument, path.string() + ":" + std::to_string(lineno) + ": expected 9 fields");
    try {
      const auto source = parse_source(f[2]);
      const double tau = std::stod(f[4]);
      const std::uint64_t seed = std::stoull(f[8]);
      if (curves.empty() || curves.back().model != f[0] || curves.back().mode != f[1] || curves.back().source != source ||
          curves.back().seed != seed || curves.back().tau != tau)
        curves.push_back({f[0], f[1], source, tau, seed, {}});
      curves.back().points.push_back({std::stoull(f[3]), std::stod(f[5]), std::stod(f[6]), std::stoull(f[7])});
    } catch (const std::logic_error&) {
      fail(ErrorCode::InvalidArgument, path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  return curves;
}

void write_curves_dat(std::span<const CompletionCurve> curves, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + path.string());
  bool first = true;
  for (const auto& c : curves) {
    if (!first) out << "\n\n";
    first = false;
    out << "# model=" << c.model << " mode=" << c.mode << " source=" << source_name(c.source) << " tau=" << fmt(c.tau)
        << " seed=" << c.seed << "\n# k bleu_f4 stderr n_prefixes\n";
    for (const auto& p : c.points) out << p.k << ' ' << fmt(p.bleu) << ' ' << fmt(p.se) << ' ' << p.n_prefixes << '\n';
  }
  require(static_cast<bool>(out), ErrorCode::Io, "failed writing " + path.string());
}

}  // namespace memr
