#include "memr/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <sstream>

#include "memr/error.hpp"

namespace memr {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view mode_name(Mode m) {
  switch (m) {
    case Mode::TF: return "TF";
    case Mode::SS: return "SS";
    case Mode::AC: return "AC";
    case Mode::AC_ME: return "AC+ME";
    case Mode::AC_MEMR: return "AC+MEMR";
  }
  return "?";
}

Mode parse_mode(std::string_view s) {
  for (Mode m : {Mode::TF, Mode::SS, Mode::AC, Mode::AC_ME, Mode::AC_MEMR})
    if (s == mode_name(m)) return m;
  fail(ErrorCode::InvalidArgument, "unknown mode '" + std::string(s) + "' (expected TF, SS, AC, AC+ME or AC+MEMR)");
}

bool is_adversarial(Mode m) { return m == Mode::AC || m == Mode::AC_ME || m == Mode::AC_MEMR; }

void TrainConfig::validate() const {
  require(actor.embed > 0 && actor.hidden > 0, ErrorCode::InvalidArgument, "config: actor sizes must be positive");
  require(critic.embed > 0 && critic.width > 0 && critic.filter % 2 == 1 && critic.layers >= kHeadLayers[2],
          ErrorCode::InvalidArgument, "config: critic needs positive sizes, an odd filter and at least 8 layers");
  require(t_max >= 2, ErrorCode::InvalidArgument, "config: t_max must be at least 2");
  require(batch_size > 0 && critic_batch >= 2, ErrorCode::InvalidArgument,
          "config: batch_size must be positive and critic_batch at least 2");
  require(mle_lr > 0 && actor_lr > 0 && critic_lr > 0, ErrorCode::Domain, "config: learning rates must be > 0");
  require(ss_max >= 0 && ss_max <= 1, ErrorCode::Domain, "config: ss_max must lie in [0,1]");
  require(clip > 0, ErrorCode::Domain, "config: clip must be > 0");
  require(bleu_order >= 1 && bleu_samples > 0 && valid_samples > 0 && distinct_samples > 0, ErrorCode::InvalidArgument,
          "config: evaluation sizes must be positive");
  require(kl_samples >= 100, ErrorCode::InvalidArgument, "config: kl_samples must be at least 100");
  ladder.validate();
  validate_heads(heads, critic.layers);
  RolloutConfig r = rollout;
  r.t_max = t_max;
  r.validate();
  CompletionConfig c = completion;
  c.t_max = t_max;
  c.validate();
}

EntropyLadder TrainConfig::active_ladder() const { return mode == Mode::AC ? EntropyLadder::collapsed() : ladder; }

HeadSet TrainConfig::active_heads() const { return mode == Mode::AC_MEMR ? heads : final_head(); }

json config_to_json(const TrainConfig& c) {
  return json{
      {"mode", mode_name(c.mode)},
      {"seed", c.seed},
      {"model", c.model},
      {"actor", {{"embed", c.actor.embed}, {"hidden", c.actor.hidden}}},
      {"critic", {{"embed", c.critic.embed}, {"width", c.critic.width}, {"layers", c.critic.layers}, {"filter", c.critic.filter}}},
      {"t_max", c.t_max},
      {"batch_size", c.batch_size},
      {"pretrain_epochs", c.pretrain_epochs},
      {"mle_lr", c.mle_lr},
      {"ss_max", c.ss_max},
      {"critic_batch", c.critic_batch},
      {"critic_pretrain_steps", c.critic_pretrain_steps},
      {"rounds", c.rounds},
      {"actor_steps", c.actor_steps},
      {"critic_steps", c.critic_steps},
      {"actor_lr", c.actor_lr},
      {"critic_lr", c.critic_lr},
      {"clip", c.clip},
      {"ladder", {{"tau", c.ladder.tau}, {"target", c.ladder.target}}},
      {"heads", c.heads},
      {"rollout",
       {{"n", c.rollout.n}, {"tau", c.rollout.tau}, {"aggregate", c.rollout.aggregate == Aggregation::Max ? "max" : "mean"}}},
      {"patience", c.patience},
      {"valid_samples", c.valid_samples},
      {"bleu_order", c.bleu_order},
      {"bleu_samples", c.bleu_samples},
      {"bleu_bootstrap", c.bleu_bootstrap},
      {"distinct_samples", c.distinct_samples},
      {"distinct_threshold", c.distinct_threshold},
      {"completion",
       {{"k_list", c.completion.k_list},
        {"tau", c.completion.tau},
        {"prefixes_per_k", c.completion.prefixes_per_k},
        {"completions_per_prefix", c.completion.completions_per_prefix},
        {"bootstrap", c.completion.bootstrap},
        {"order", c.completion.order},
        {"score_completion_only", c.completion.score_completion_only}}},
      {"kl_samples", c.kl_samples},
      {"init_actor", c.init_actor},
      {"deterministic", c.deterministic},
  };
}

namespace {

template <class T>
void take(const json& j, const char* key, T& out) {
  try {
    out = j.get<T>();
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("config: bad value for '") + key + "': " + e.what());
  }
}

void read_object(const json& j, const char* where, const std::map<std::string, std::function<void(const json&)>>& fields) {
  require(j.is_object(), ErrorCode::InvalidArgument, std::string("config: '") + where + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    auto it = fields.find(key);
    require(it != fields.end(), ErrorCode::InvalidArgument, std::string("config: unknown key '") + key + "' in " + where);
    it->second(value);
  }
}

}  // namespace

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  using F = std::function<void(const json&)>;
#define FIELD(name, target) {name, F([&](const json& v) { take(v, name, target); })}
  read_object(
      j, "config",
      {
          {"mode", F([&](const json& v) {
             std::string s;
             take(v, "mode", s);
             c.mode = parse_mode(s);
           })},
          FIELD("seed", c.seed),
          FIELD("model", c.model),
          {"actor", F([&](const json& v) {
             read_object(v, "actor", {FIELD("embed", c.actor.embed), FIELD("hidden", c.actor.hidden)});
           })},
          {"critic", F([&](const json& v) {
             read_object(v, "critic",
                         {FIELD("embed", c.critic.embed), FIELD("width", c.critic.width), FIELD("layers", c.critic.layers),
                          FIELD("filter", c.critic.filter)});
           })},
          FIELD("t_max", c.t_max),
          FIELD("batch_size", c.batch_size),
          FIELD("pretrain_epochs", c.pretrain_epochs),
          FIELD("mle_lr", c.mle_lr),
          FIELD("ss_max", c.ss_max),
          FIELD("critic_batch", c.critic_batch),
          FIELD("critic_pretrain_steps", c.critic_pretrain_steps),
          FIELD("rounds", c.rounds),
          FIELD("actor_steps", c.actor_steps),
          FIELD("critic_steps", c.critic_steps),
          FIELD("actor_lr", c.actor_lr),
          FIELD("critic_lr", c.critic_lr),
          FIELD("clip", c.clip),
          {"ladder", F([&](const json& v) {
             if (v.is_string()) {
               const auto s = v.get<std::string>();
               if (s == "standard") c.ladder = EntropyLadder::standard();
               else if (s == "literal") c.ladder = EntropyLadder::literal();
               else if (s == "collapsed") c.ladder = EntropyLadder::collapsed();
               else fail(ErrorCode::InvalidArgument, "config: unknown ladder '" + s + "'");
               return;
             }
             read_object(v, "ladder", {FIELD("tau", c.ladder.tau), FIELD("target", c.ladder.target)});
           })},
          FIELD("heads", c.heads),
          {"rollout", F([&](const json& v) {
             read_object(v, "rollout",
                         {FIELD("n", c.rollout.n), FIELD("tau", c.rollout.tau), {"aggregate", F([&](const json& a) {
                            std::string s;
                            take(a, "aggregate", s);
                            require(s == "max" || s == "mean", ErrorCode::InvalidArgument,
                                    "config: rollout aggregate must be 'max' or 'mean'");
                            c.rollout.aggregate = s == "max" ? Aggregation::Max : Aggregation::Mean;
                          })}});
           })},
          FIELD("patience", c.patience),
          FIELD("valid_samples", c.valid_samples),
          FIELD("bleu_order", c.bleu_order),
          FIELD("bleu_samples", c.bleu_samples),
          FIELD("bleu_bootstrap", c.bleu_bootstrap),
          FIELD("distinct_samples", c.distinct_samples),
          FIELD("distinct_threshold", c.distinct_threshold),
          {"completion", F([&](const json& v) {
             read_object(v, "completion",
                         {FIELD("k_list", c.completion.k_list), FIELD("tau", c.completion.tau),
                          FIELD("prefixes_per_k", c.completion.prefixes_per_k),
                          FIELD("completions_per_prefix", c.completion.completions_per_prefix),
                          FIELD("bootstrap", c.completion.bootstrap), FIELD("order", c.completion.order),
                          FIELD("score_completion_only", c.completion.score_completion_only)});
           })},
          FIELD("kl_samples", c.kl_samples),
          FIELD("init_actor", c.init_actor),
          FIELD("deterministic", c.deterministic),
      });
#undef FIELD
  c.rollout.t_max = c.t_max;
  c.completion.t_max = c.t_max;
  return c;
}

namespace {

double wall_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

}  // namespace

TrainLog::TrainLog(const fs::path& path, bool deterministic, std::uint64_t seed)
    : file_(path, std::ios::app), deterministic_(deterministic), seed_(seed), start_(wall_seconds()) {
  require(static_cast<bool>(file_), ErrorCode::Io, "cannot open log " + path.string());
}

void TrainLog::append(json record) {
  record["step"] = step_++;
  record["seed"] = seed_;
  record["wall"] = deterministic_ ? json(nullptr) : json(wall_seconds() - start_);
  if (file_.is_open()) {
    file_ << record.dump() << '\n';
    file_.flush();
  }
  records_.push_back(std::move(record));
}

std::vector<json> TrainLog::phase(std::string_view name) const {
  std::vector<json> out;
  for (const auto& r : records_)
    if (r.value("phase", "") == name) out.push_back(r);
  return out;
}

namespace {

std::uint64_t file_hash(const fs::path& p, std::uint64_t h) {
  std::ifstream in(p, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot read " + p.string());
  char buf[65536];
  while (in) {
    in.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace

TrainData load_train_data(const fs::path& corpus_dir) {
  require(fs::is_directory(corpus_dir), ErrorCode::Io, "corpus directory not found: " + corpus_dir.string());
  TrainData d;
  const auto train_lines = read_lines(corpus_dir / "train.txt");
  d.vocab = build_vocab(train_lines, 1);
  d.train = load_corpus(corpus_dir / "train.txt", d.vocab, Split::Train).sentences;
  d.valid = load_corpus(corpus_dir / "valid.txt", d.vocab, Split::Valid, UnknownTokens::MapToUnk).sentences;
  d.test = load_corpus(corpus_dir / "test.txt", d.vocab, Split::Test, UnknownTokens::MapToUnk).sentences;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char* f : {"train.txt", "valid.txt", "test.txt"}) h = file_hash(corpus_dir / f, h);
  if (fs::exists(corpus_dir / "grammar.json")) {
    d.grammar = OracleGrammar::load(corpus_dir / "grammar.json");
    h = file_hash(corpus_dir / "grammar.json", h);
  }
  d.checksum = h;
  return d;
}

namespace {

ActorDims actor_dims(const TrainConfig& c, const TrainData& d) { return {d.vocab.size(), c.actor.embed, c.actor.hidden}; }

CriticDims critic_dims(const TrainConfig& c, const TrainData& d) {
  CriticDims cd = c.critic;
  cd.vocab = d.vocab.size();
  return cd;
}

void check_finite(double loss, const char* what) {
  if (!std::isfinite(loss)) fail(ErrorCode::Numeric, std::string(what) + ": loss is not finite");
}

}  // namespace

ActorParams pretrain_actor(const TrainConfig& config, const TrainData& data, TrainLog& log, const EpochCallback& on_epoch) {
  require(!data.train.empty(), ErrorCode::InvalidArgument, "pretrain: training split is empty");
  const ActorDims dims = actor_dims(config, data);
  if (!config.init_actor.empty()) {
    ActorParams a = ActorParams::from_params(load_checkpoint(config.init_actor));
    require(a.dims().vocab == dims.vocab, ErrorCode::InvalidArgument,
            "pretrain: checkpoint " + config.init_actor + " has vocabulary " + std::to_string(a.dims().vocab) +
                ", corpus has " + std::to_string(dims.vocab));
    log.append({{"phase", "pretrain"}, {"epoch", 0}, {"init_actor", config.init_actor},
                {"valid_ppl", perplexity(a, data.valid)}});
    if (on_epoch) on_epoch(0, a);
    return a;
  }
  Rng init(derive_seed(config.seed, "actor-init"));
  ActorParams actor = ActorParams::init(dims, init);
  AdamState opt = AdamState::for_params(actor.params().values);
  const AdamConfig adam{config.mle_lr};
  log.append({{"phase", "pretrain"}, {"epoch", 0}, {"valid_ppl", perplexity(actor, data.valid)}});
  if (on_epoch) on_epoch(0, actor);

  const std::size_t E = config.pretrain_epochs;
  std::vector<std::size_t> order(data.train.size());
  for (std::size_t e = 0; e < E; ++e) {
    const double p = config.mode != Mode::SS ? 0.0 : E > 1 ? config.ss_max * static_cast<double>(e) / static_cast<double>(E - 1) : config.ss_max;
    Rng shuffle(derive_seed(config.seed, "mle-epoch", {e}));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    Rng ss(derive_seed(config.seed, "ss", {e}));

    const ActorParams snapshot = actor;
    const AdamState opt_snapshot = opt;
    double loss_sum = 0.0;
    std::size_t batches = 0;
    try {
      for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
        std::vector<Sentence> batch;
        for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i)
          batch.push_back(data.train[order[i]]);
        LossAndGrads lg;
        if (config.mode == Mode::SS) {
          auto r = scheduled_sampling_loss(actor, batch, p, ss);
          lg = {r.loss, std::move(r.grads)};
        } else {
          lg = teacher_forcing_loss(actor, batch);
        }
        check_finite(lg.loss, "pretrain");
        adam_step(actor.params().values, lg.grads, opt, adam);
        loss_sum += lg.loss;
        ++batches;
      }
    } catch (const Error& err) {
      if (err.code() != ErrorCode::Numeric) throw;
      actor = snapshot;
      opt = opt_snapshot;
      log.append({{"phase", "pretrain"}, {"epoch", e + 1}, {"event", "numeric_abort"}, {"error", err.what()}});
      break;
    }
    log.append({{"phase", "pretrain"},
                {"epoch", e + 1},
                {"train_loss", loss_sum / static_cast<double>(batches)},
                {"valid_ppl", perplexity(actor, data.valid)},
                {"ss_p", p}});
    if (on_epoch) on_epoch(e + 1, actor);
  }
  return actor;
}

CriticBatch build_critic_batch(const ActorParams& actor, std::span<const Sentence> real, const EntropyLadder& ladder,
                               std::size_t size, std::size_t t_max, Rng& rng) {
  ladder.validate();
  require(size >= 2 && !real.empty(), ErrorCode::InvalidArgument, "critic batch: need size >= 2 and real sentences");
  CriticBatch b;
  const std::size_t n_real = size / 2;
  for (std::size_t i = 0; i < n_real; ++i) {
    b.sentences.push_back(real[rng.below(real.size())]);
    b.provenance.push_back({true, 1.0});
  }
  const std::size_t n_fake = size - n_real, R = ladder.size();
  for (std::size_t r = 0; r < R; ++r) {
    const std::size_t count = n_fake / R + (r < n_fake % R ? 1 : 0);
    if (count == 0) continue;
    std::vector<std::vector<int>> prefixes(count);
    std::vector<Rng> streams;
    for (std::size_t i = 0; i < count; ++i) streams.emplace_back(rng.next_u64());
    for (auto& s : sample_batch(actor, ladder.tau[r], t_max, prefixes, streams)) {
      b.sentences.push_back(std::move(s));
      b.provenance.push_back({false, ladder.tau[r]});
    }
  }
  b.targets = assign_targets(ladder, b.provenance);
  return b;
}

AdversarialState init_adversarial(const TrainConfig& config, const TrainData& data, ActorParams actor) {
  Rng init(derive_seed(config.seed, "critic-init"));
  CriticParams critic = CriticParams::init(critic_dims(config, data), init);
  AdversarialState s{std::move(actor), std::move(critic), {}, {}, 0};
  s.actor_opt = AdamState::for_params(s.actor.params().values);
  s.critic_opt = AdamState::for_params(s.critic.params().values);
  return s;
}

namespace {

double critic_update(const TrainConfig& config, AdversarialState& state, const TrainData& data, const EntropyLadder& ladder,
                     const HeadSet& heads, std::uint64_t phase, std::uint64_t round, std::uint64_t step,
                     json* provenance_scores) {
  Rng rng(derive_seed(config.seed, "critic-batch", {phase, round, step}));
  const auto batch = build_critic_batch(state.actor, data.train, ladder, config.critic_batch, config.t_max, rng);
  auto lg = critic_loss(state.critic, batch.sentences, batch.targets, heads, config.t_max);
  check_finite(lg.loss, "critic");
  if (provenance_scores) {
    const auto scores = critic_scores(state.critic, batch.sentences, heads, config.t_max);
    std::map<std::string, std::pair<double, std::size_t>> acc;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const auto& p = batch.provenance[i];
      std::ostringstream key;
      if (p.ground_truth) key << "real";
      else key << "tau=" << p.tau;
      acc[key.str()].first += scores[i];
      acc[key.str()].second += 1;
    }
    for (const auto& [k, v] : acc) (*provenance_scores)[k] = v.first / static_cast<double>(v.second);
  }
  adam_step(state.critic.params().values, lg.grads, state.critic_opt, AdamConfig{config.critic_lr});
  return lg.loss;
}

}  // namespace

std::pair<double, double> pretrain_critic(const TrainConfig& config, AdversarialState& state, const TrainData& data,
                                          TrainLog& log) {
  const auto ladder = config.active_ladder();
  const auto heads = config.active_heads();
  double first = 0.0, last = 0.0;
  for (std::size_t s = 0; s < config.critic_pretrain_steps; ++s) {
    const bool report = s == 0 || (s + 1) % 20 == 0 || s + 1 == config.critic_pretrain_steps;
    json scores = json::object();
    last = critic_update(config, state, data, ladder, heads, 0, 0, s, report ? &scores : nullptr);
    if (s == 0) first = last;
    if (report) log.append({{"phase", "critic_pretrain"}, {"critic_step", s + 1}, {"critic_loss", last}, {"scores", scores}});
  }
  return {first, last};
}

RoundResult adversarial_round(const TrainConfig& config, AdversarialState& state, const TrainData& data, TrainLog& log) {
  const AdversarialState snapshot = state;
  const std::size_t r = state.round + 1;
  const auto ladder = config.active_ladder();
  const auto heads = config.active_heads();
  RolloutConfig rc = config.rollout;
  rc.t_max = config.t_max;
  RoundResult res;
  json scores = json::object();
  std::uint64_t checksum = 0;
  try {
    for (std::size_t s = 0; s < config.actor_steps; ++s) {
      checksum = state.actor.params().checksum();
      std::vector<std::vector<int>> prefixes(config.batch_size);
      std::vector<Rng> streams;
      std::vector<std::uint64_t> bases;
      for (std::size_t i = 0; i < config.batch_size; ++i) {
        streams.emplace_back(derive_seed(config.seed, "pg-sample", {r, s, i}));
        bases.push_back(derive_seed(config.seed, "rollout-base", {r, s, i}));
      }
      const auto samples = sample_batch(state.actor, 1.0, config.t_max, prefixes, streams);
      const auto detail = mc_action_values(state.actor, state.critic, heads, samples, rc, bases);
      require(state.actor.params().checksum() == checksum, ErrorCode::Contract,
              "round " + std::to_string(r) + ": rollout snapshot differs from the actor being updated");
      std::vector<std::vector<double>> q;
      double q_sum = 0.0;
      std::size_t q_n = 0;
      for (const auto& d : detail) {
        q.push_back(d.q);
        for (double v : d.q) q_sum += v;
        q_n += d.q.size();
      }
      auto lg = policy_gradient_loss(state.actor, samples, q);
      check_finite(lg.loss, "policy gradient");
      clip_global_norm(lg.grads, config.clip);
      adam_step(state.actor.params().values, lg.grads, state.actor_opt, AdamConfig{config.actor_lr});
      res.pg_loss = lg.loss;
      res.mean_q = q_sum / static_cast<double>(q_n);
    }
    for (std::size_t s = 0; s < config.critic_steps; ++s)
      res.critic_loss =
          critic_update(config, state, data, ladder, heads, 1, r, s, s + 1 == config.critic_steps ? &scores : nullptr);
  } catch (const Error& err) {
    if (err.code() != ErrorCode::Numeric) throw;
    state = snapshot;
    res.ok = false;
    res.error = err.what();
    log.append({{"phase", "adversarial"}, {"round", r}, {"event", "numeric_abort"}, {"error", res.error}});
    return res;
  }
  state.round = r;
  log.append({{"phase", "adversarial"},
              {"round", r},
              {"pg_loss", res.pg_loss},
              {"mean_q", res.mean_q},
              {"critic_loss", res.critic_loss},
              {"scores", scores},
              {"actor_checksum", checksum}});
  return res;
}

std::vector<Tokens> sample_surfaces(const ActorParams& actor, std::size_t n, double tau, std::size_t t_max,
                                    std::uint64_t seed) {
  std::vector<std::vector<int>> prefixes(n);
  std::vector<Rng> streams;
  for (std::size_t i = 0; i < n; ++i) streams.emplace_back(derive_seed(seed, "sample", {i}));
  const auto s = sample_batch(actor, tau, t_max, prefixes, streams);
  return surfaces(s);
}

void prepare_out_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    require(fs::is_directory(dir), ErrorCode::Exists, dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir)) {
      require(force, ErrorCode::Exists, dir.string() + " already exists; pass --force to overwrite");
      fs::remove_all(dir);
    }
  }
  fs::create_directories(dir);
}

namespace {

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + p.string());
  out << s;
  if (!s.empty() && s.back() != '\n') out << '\n';
  require(static_cast<bool>(out), ErrorCode::Io, "failed writing " + p.string());
}

struct Evaluation {
  double bleu_f = 0.0, bleu_b = 0.0, bleu_ha = 0.0, distinct4 = 0.0;
};

Evaluation evaluate_round(const TrainConfig& config, const ActorParams& actor, const TrainData& data, std::size_t round) {
  const std::size_t n = std::max(config.valid_samples, config.distinct_samples);
  const auto samples = sample_surfaces(actor, n, 1.0, config.t_max, derive_seed(config.seed, "valid-eval", {round}));
  const std::span<const Tokens> all(samples);
  const auto valid = surfaces(data.valid);
  Evaluation e;
  const auto v = all.first(config.valid_samples);
  e.bleu_f = corpus_bleu(v, valid, config.bleu_order).score;
  e.bleu_b = corpus_bleu(valid, v, config.bleu_order).score;
  e.bleu_ha = bleu_ha(e.bleu_f, e.bleu_b);
  e.distinct4 = distinct_n(all.first(config.distinct_samples), 4);
  return e;
}

json curve_gap_json(const ExposureGap& g) {
  return json{{"k", g.k}, {"gap", g.gap}, {"stderr", g.se}, {"mean_gap", g.mean_gap}, {"mean_stderr", g.mean_se}};
}

}  // namespace

RunSummary run_experiment(const TrainConfig& config_in, const fs::path& corpus_dir, const fs::path& out_dir,
                          const RunOptions& options) {
  TrainConfig config = config_in;
  config.rollout.t_max = config.t_max;
  config.completion.t_max = config.t_max;
  config.validate();
  TrainData data = load_train_data(corpus_dir);
  for (const auto* split : {&data.train, &data.valid, &data.test})
    for (const auto& s : *split)
      require(s.size() <= config.t_max, ErrorCode::InvalidArgument,
              "corpus has a sentence of " + std::to_string(s.size()) + " tokens (EOS included), above t_max " +
                  std::to_string(config.t_max));

  if (!options.dir_prepared) prepare_out_dir(out_dir, options.force);
  fs::create_directories(out_dir / "checkpoints");
  fs::create_directories(out_dir / "reports");
  write_text(out_dir / "config.json", config_to_json(config).dump(2));
  data.vocab.save(out_dir / "vocab.txt");
  char checksum_hex[17];
  std::snprintf(checksum_hex, sizeof checksum_hex, "%016llx", static_cast<unsigned long long>(data.checksum));
  json status{{"state", "running"},
              {"mode", mode_name(config.mode)},
              {"seed", config.seed},
              {"model", config.model},
              {"corpus", fs::absolute(corpus_dir).lexically_normal().string()},
              {"corpus_checksum", checksum_hex}};
  write_text(out_dir / "status.json", status.dump(2));

  RunSummary summary;
  try {
    TrainLog log(out_dir / "log.jsonl", config.deterministic, config.seed);
    auto on_epoch = [&](std::size_t epoch, const ActorParams& a) {
      if (data.grammar) {
        const auto kl = oracle_kl(*data.grammar, a, data.vocab, KlDirection::Forward, {config.kl_samples, -80.0},
                                  derive_seed(config.seed, "kl-epoch"));
        log.append({{"phase", "kl"}, {"epoch", epoch}, {"forward_kl", kl.value}, {"stderr", kl.se}});
      }
      if (options.on_epoch) options.on_epoch(epoch, a);
    };
    ActorParams actor = pretrain_actor(config, data, log, on_epoch);
    save_checkpoint(out_dir / "checkpoints" / "actor_pretrain.ckpt", actor.params());

    if (options.pretrain_only) {
      status["state"] = "complete";
      status["valid_ppl"] = perplexity(actor, data.valid);
      write_text(out_dir / "status.json", status.dump(2));
      return summary;
    }

    if (is_adversarial(config.mode)) {
      AdversarialState state = init_adversarial(config, data, std::move(actor));
      const auto [first, last] = pretrain_critic(config, state, data, log);
      (void)first;
      (void)last;
      save_checkpoint(out_dir / "checkpoints" / "critic_pretrain.ckpt", state.critic.params());

      auto record_eval = [&](std::size_t round, const Evaluation& e) {
        json rec{{"phase", "eval"},        {"round", round},        {"valid_bleu_f", e.bleu_f},
                 {"valid_bleu_b", e.bleu_b}, {"valid_bleu_ha", e.bleu_ha}, {"distinct4", e.distinct4}};
        log.append(rec);
        if (e.distinct4 < config.distinct_threshold) {
          ++summary.collapse_warnings;
          log.append({{"phase", "warning"}, {"round", round}, {"event", "mode_collapse"}, {"distinct4", e.distinct4},
                      {"threshold", config.distinct_threshold}});
        }
      };
      Evaluation e0 = evaluate_round(config, state.actor, data, 0);
      record_eval(0, e0);
      double best = e0.bleu_ha;
      ParamSet best_actor = state.actor.params(), best_critic = state.critic.params();
      std::size_t since = 0;
      for (std::size_t r = 1; r <= config.rounds; ++r) {
        const auto res = adversarial_round(config, state, data, log);
        if (!res.ok) {
          summary.numeric_abort = true;
          break;
        }
        summary.rounds_run = r;
        const Evaluation e = evaluate_round(config, state.actor, data, r);
        record_eval(r, e);
        if (e.bleu_ha > best) {
          best = e.bleu_ha;
          best_actor = state.actor.params();
          best_critic = state.critic.params();
          summary.best_round = r;
          since = 0;
        } else if (++since >= config.patience) {
          log.append({{"phase", "adversarial"}, {"round", r}, {"event", "early_stop"}, {"best_round", summary.best_round}});
          break;
        }
      }
      state.actor.params() = std::move(best_actor);
      state.critic.params() = std::move(best_critic);
      save_checkpoint(out_dir / "checkpoints" / "critic_final.ckpt", state.critic.params());
      actor = std::move(state.actor);
    }
    save_checkpoint(out_dir / "checkpoints" / "actor_final.ckpt", actor.params());

    // Final evaluation.
    const auto samples = sample_surfaces(actor, config.bleu_samples, 1.0, config.t_max, derive_seed(config.seed, "final-samples"));
    summary.bleu = bleu_report(samples, surfaces(data.test), config.bleu_order, config.seed, config.bleu_bootstrap);
    write_text(out_dir / "reports" / "bleu.json", bleu_report_json(summary.bleu));
    write_bleu_csv(summary.bleu, out_dir / "reports" / "bleu.csv");
    {
      std::ostringstream text;
      for (const auto& s : samples) text << decode(data.vocab, s) << '\n';
      write_text(out_dir / "reports" / "samples.txt", text.str());
    }
    const std::string mode(mode_name(config.mode));
    const auto cseed = derive_seed(config.seed, "completion-eval");
    summary.curves.push_back(completion_sweep(actor, data.train, PrefixSource::Seen, config.completion, cseed, config.model, mode));
    summary.curves.push_back(completion_sweep(actor, data.test, PrefixSource::Unseen, config.completion, cseed, config.model, mode));
    write_curves_csv(summary.curves, out_dir / "reports" / "completion.csv");
    write_curves_dat(summary.curves, out_dir / "reports" / "completion.dat");
    const auto gap = exposure_gap(summary.curves[0], summary.curves[1]);

    json final_metrics{{"bleu_f", summary.bleu.bleu_f},
                       {"bleu_b", summary.bleu.bleu_b},
                       {"bleu_ha", summary.bleu.bleu_ha},
                       {"bleu_order", summary.bleu.n},
                       {"distinct4", distinct_n(samples, 4)},
                       {"valid_ppl", perplexity(actor, data.valid)},
                       {"exposure_gap", curve_gap_json(gap)},
                       {"rounds_run", summary.rounds_run},
                       {"best_round", summary.best_round},
                       {"collapse_warnings", summary.collapse_warnings},
                       {"numeric_abort", summary.numeric_abort}};
    if (data.grammar) {
      const KlOptions ko{config.kl_samples, -80.0};
      summary.kl_forward = oracle_kl(*data.grammar, actor, data.vocab, KlDirection::Forward, ko, derive_seed(config.seed, "kl-final"));
      summary.kl_reverse = oracle_kl(*data.grammar, actor, data.vocab, KlDirection::Reverse, ko, derive_seed(config.seed, "kl-final"));
      json kl{{"forward", json::parse(kl_json(*summary.kl_forward))}, {"reverse", json::parse(kl_json(*summary.kl_reverse))}};
      write_text(out_dir / "reports" / "kl.json", kl.dump(2));
      final_metrics["kl_forward"] = summary.kl_forward->value;
      final_metrics["kl_reverse"] = summary.kl_reverse->value;
    }
    log.append({{"phase", "final"}, {"metrics", final_metrics}});
    status["state"] = "complete";
    status["metrics"] = final_metrics;
    write_text(out_dir / "status.json", status.dump(2));
  } catch (const std::exception& e) {
    status["state"] = "failed";
    status["error"] = e.what();
    write_text(out_dir / "status.json", status.dump(2));
    throw;
  }
  return summary;
}

}  // namespace memr
