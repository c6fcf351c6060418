#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "memr/actor.hpp"
#include "memr/critic.hpp"
#include "memr/evalharness.hpp"
#include "memr/metrics.hpp"
#include "memr/rollout.hpp"

namespace memr {

enum class Mode { TF, SS, AC, AC_ME, AC_MEMR };
std::string_view mode_name(Mode m);
Mode parse_mode(std::string_view s);
bool is_adversarial(Mode m);

struct TrainConfig {
  Mode mode = Mode::AC_MEMR;
  std::uint64_t seed = 0;
  std::string model = "lstm";

  ActorDims actor;    // vocab is taken from the data
  CriticDims critic;  // likewise
  std::size_t t_max = 32;

  std::size_t batch_size = 32;
  std::size_t pretrain_epochs = 20;
  double mle_lr = 5e-3;
  double ss_max = 0.5;  // replace probability reached on the last epoch

  std::size_t critic_batch = 32;
  std::size_t critic_pretrain_steps = 200;
  std::size_t rounds = 50;
  std::size_t actor_steps = 1;
  std::size_t critic_steps = 5;
  double actor_lr = 5e-3;
  double critic_lr = 1e-4;
  double clip = 5.0;

  EntropyLadder ladder = EntropyLadder::standard();
  HeadSet heads = all_heads();
  RolloutConfig rollout;

  std::size_t patience = 10;
  std::size_t valid_samples = 500;
  std::size_t bleu_order = 5;
  std::size_t bleu_samples = 1000;
  std::size_t bleu_bootstrap = 200;
  std::size_t distinct_samples = 500;
  double distinct_threshold = 0.2;
  CompletionConfig completion;
  std::size_t kl_samples = 1000;

  std::string init_actor;  // checkpoint replacing MLE pretraining when set
  bool deterministic = false;

  void validate() const;
  // Ladder and heads actually used by the mode.
  EntropyLadder active_ladder() const;
  HeadSet active_heads() const;
};

nlohmann::json config_to_json(const TrainConfig& c);
// Keys override the defaults; unknown keys are an error.
TrainConfig config_from_json(const nlohmann::json& j);

// Append-only structured log; one JSON object per line when backed by a file.
class TrainLog {
 public:
  TrainLog() = default;
  // Wall time is recorded as null in deterministic mode.
  TrainLog(const std::filesystem::path& path, bool deterministic, std::uint64_t seed);

  void append(nlohmann::json record);
  const std::vector<nlohmann::json>& records() const noexcept { return records_; }
  std::vector<nlohmann::json> phase(std::string_view name) const;

 private:
  std::vector<nlohmann::json> records_;
  std::ofstream file_;
  bool deterministic_ = true;
  std::uint64_t seed_ = 0;
  std::int64_t step_ = 0;
  double start_ = 0.0;
};

struct TrainData {
  Vocabulary vocab;
  std::vector<Sentence> train, valid, test;
  std::optional<OracleGrammar> grammar;  // enables KL diagnostics
  std::uint64_t checksum = 0;            // of the corpus files
};

// Reads train.txt / valid.txt / test.txt (and grammar.json when present); the
// vocabulary is built from the training split.
TrainData load_train_data(const std::filesystem::path& corpus_dir);

using EpochCallback = std::function<void(std::size_t epoch, const ActorParams&)>;

// MLE pretraining (teacher forcing, or scheduled sampling in SS mode). On a
// non-finite loss the epoch is abandoned and the last good parameters kept.
ActorParams pretrain_actor(const TrainConfig& config, const TrainData& data, TrainLog& log,
                           const EpochCallback& on_epoch = {});

struct CriticBatch {
  std::vector<Sentence> sentences;
  std::vector<Provenance> provenance;
  std::vector<double> targets;
};

// Half ground truth from `real`, half actor samples spread over the ladder
// rungs (earlier rungs take the remainder).
CriticBatch build_critic_batch(const ActorParams& actor, std::span<const Sentence> real, const EntropyLadder& ladder,
                               std::size_t size, std::size_t t_max, Rng& rng);

struct AdversarialState {
  ActorParams actor;
  CriticParams critic;
  AdamState actor_opt;
  AdamState critic_opt;
  std::size_t round = 0;
};

AdversarialState init_adversarial(const TrainConfig& config, const TrainData& data, ActorParams actor);

// Critic regression on ladder batches; returns the loss of the first and last
// step.
std::pair<double, double> pretrain_critic(const TrainConfig& config, AdversarialState& state, const TrainData& data,
                                          TrainLog& log);

struct RoundResult {
  bool ok = true;
  std::string error;
  double pg_loss = 0.0;
  double critic_loss = 0.0;
  double mean_q = 0.0;
};

// One actor phase then one critic phase. On failure the state is left as it
// was before the round.
RoundResult adversarial_round(const TrainConfig& config, AdversarialState& state, const TrainData& data, TrainLog& log);

struct RunOptions {
  bool force = false;
  // The caller already created out_dir (and may have written into it).
  bool dir_prepared = false;
  bool pretrain_only = false;
  EpochCallback on_epoch;
};

struct RunSummary {
  BleuReport bleu;
  std::vector<CompletionCurve> curves;
  std::optional<KlEstimate> kl_forward, kl_reverse;
  std::size_t rounds_run = 0;
  std::size_t best_round = 0;
  std::size_t collapse_warnings = 0;
  bool numeric_abort = false;
};

// Pretraining, adversarial rounds with early stopping, final evaluation; all
// artifacts go to out_dir (which must not exist unless force is set).
RunSummary run_experiment(const TrainConfig& config, const std::filesystem::path& corpus_dir,
                          const std::filesystem::path& out_dir, const RunOptions& options = {});

// Samples from an actor at temperature 1 for diagnostics.
std::vector<Tokens> sample_surfaces(const ActorParams& actor, std::size_t n, double tau, std::size_t t_max,
                                    std::uint64_t seed);

void prepare_out_dir(const std::filesystem::path& dir, bool force);

}  // namespace memr
