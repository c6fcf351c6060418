#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "memr/actor.hpp"
#include "memr/corpus.hpp"

namespace memr {

enum class PrefixSource { Seen, Unseen };
std::string_view source_name(PrefixSource s);
PrefixSource parse_source(std::string_view s);

struct CompletionConfig {
  std::vector<std::size_t> k_list{2, 4, 8, 12, 16};
  double tau = 0.5;
  std::size_t prefixes_per_k = 500;
  std::size_t completions_per_prefix = 1;
  std::size_t bootstrap = 200;
  std::size_t order = 4;
  std::size_t t_max = 32;
  bool score_completion_only = false;

  void validate() const;
};

struct CurvePoint {
  std::size_t k = 0;
  double bleu = 0.0;
  double se = 0.0;
  std::size_t n_prefixes = 0;
  friend bool operator==(const CurvePoint&, const CurvePoint&) = default;
};

struct CompletionCurve {
  std::string model;
  std::string mode;
  PrefixSource source = PrefixSource::Seen;
  double tau = 0.5;
  std::uint64_t seed = 0;
  std::vector<CurvePoint> points;
  friend bool operator==(const CompletionCurve&, const CompletionCurve&) = default;
};

// Prefixes come from `split` and completions are scored against the same
// split. The same prefix sentences are reused for every k.
CompletionCurve completion_sweep(const ActorParams& actor, std::span<const Sentence> split, PrefixSource source,
                                 const CompletionConfig& config, std::uint64_t seed, std::string model = "model",
                                 std::string mode = "");

// Lower level form: completions scored against an explicit reference set.
CompletionCurve completion_sweep(const ActorParams& actor, std::span<const Sentence> prefix_split,
                                 std::span<const Sentence> references, PrefixSource source,
                                 const CompletionConfig& config, std::uint64_t seed, std::string model, std::string mode);

struct ExposureGap {
  std::vector<std::size_t> k;
  std::vector<double> gap;  // seen - unseen
  std::vector<double> se;
  double mean_gap = 0.0;
  double mean_se = 0.0;
};

ExposureGap exposure_gap(const CompletionCurve& seen, const CompletionCurve& unseen);

// model,mode,source,k,tau,bleu_f4,stderr,n_prefixes,seed
void write_curves_csv(std::span<const CompletionCurve> curves, const std::filesystem::path& path);
std::vector<CompletionCurve> read_curves_csv(const std::filesystem::path& path);
// Blank-line separated blocks, one per curve, with a comment header each.
void write_curves_dat(std::span<const CompletionCurve> curves, const std::filesystem::path& path);

}  // namespace memr
