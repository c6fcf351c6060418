#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "memr/error.hpp"
#include "memr/trainer.hpp"
#include "support.hpp"

using namespace memr;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path tiny_corpus(const test::TempDir& dir) {
  const fs::path p = dir / "corpus";
  fs::create_directories(p);
  SyntheticCorpusOptions o;
  o.grammar.alphabet = 12;
  o.grammar.groups = 3;
  o.grammar.t_max = 16;
  o.n_train = 300;
  o.n_valid = 60;
  o.n_test = 60;
  o.seed = 17;
  write_synthetic_corpus(o, p);
  return p;
}

TrainConfig tiny_config(Mode mode, std::uint64_t seed) {
  TrainConfig c;
  c.mode = mode;
  c.seed = seed;
  c.actor.embed = 8;
  c.actor.hidden = 16;
  c.critic.embed = 4;
  c.critic.width = 6;
  c.t_max = 16;
  c.batch_size = 16;
  c.pretrain_epochs = 2;
  c.critic_batch = 12;
  c.critic_pretrain_steps = 5;
  c.rounds = 2;
  c.rollout.n = 2;
  c.valid_samples = 50;
  c.bleu_samples = 60;
  c.bleu_bootstrap = 5;
  c.distinct_samples = 50;
  c.completion.k_list = {1, 3};
  c.completion.prefixes_per_k = 20;
  c.completion.bootstrap = 5;
  c.kl_samples = 100;
  c.deterministic = true;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("mode names") {
  for (auto m : {Mode::TF, Mode::SS, Mode::AC, Mode::AC_ME, Mode::AC_MEMR}) CHECK(parse_mode(mode_name(m)) == m);
  CHECK_THROWS_AS(parse_mode("GAN"), Error);
  CHECK_FALSE(is_adversarial(Mode::SS));
  CHECK(is_adversarial(Mode::AC_ME));
}

TEST_CASE("configuration JSON") {
  const TrainConfig c = tiny_config(Mode::AC_ME, 4);
  const TrainConfig back = config_from_json(config_to_json(c));
  CHECK(config_to_json(back) == config_to_json(c));
  CHECK_THROWS_AS(config_from_json(json{{"hiden", 3}}), Error);
  CHECK(config_from_json(json{{"ladder", "literal"}}).ladder == EntropyLadder::literal());
  CHECK(config_from_json(json{{"ladder", "collapsed"}}).ladder == EntropyLadder::collapsed());
  CHECK_THROWS_AS(config_from_json(json{{"ladder", "steep"}}), Error);
  CHECK(config_from_json(json{{"rollout", {{"aggregate", "mean"}}}}).rollout.aggregate == Aggregation::Mean);

  TrainConfig bad = c;
  bad.heads = {4};
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("modes select ladder and heads") {
  TrainConfig c;
  c.mode = Mode::AC;
  CHECK(c.active_ladder() == EntropyLadder::collapsed());
  CHECK(c.active_heads() == final_head());
  c.mode = Mode::AC_ME;
  CHECK(c.active_ladder() == EntropyLadder::standard());
  CHECK(c.active_heads() == final_head());
  c.mode = Mode::AC_MEMR;
  CHECK(c.active_heads() == all_heads());
}

TEST_CASE("train log") {
  test::TempDir dir("log");
  {
    TrainLog log(dir / "log.jsonl", true, 5);
    log.append({{"phase", "a"}});
    log.append({{"phase", "b"}, {"x", 1}});
    CHECK(log.phase("b").size() == 1);
    CHECK(log.records()[0]["wall"].is_null());
    CHECK(log.records()[1]["step"] == 1);
  }
  std::ifstream in(dir / "log.jsonl");
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    CHECK(json::parse(line)["seed"] == 5);
    ++n;
  }
  CHECK(n == 2);
  TrainLog timed(dir / "t.jsonl", false, 5);
  timed.append({{"phase", "a"}});
  CHECK(timed.records()[0]["wall"].is_number());
}

TEST_CASE("pretraining") {
  test::TempDir dir("pretrain");
  const TrainData data = load_train_data(tiny_corpus(dir));
  CHECK(data.grammar.has_value());
  TrainLog log;

  TrainConfig zero = tiny_config(Mode::TF, 1);
  zero.pretrain_epochs = 0;
  Rng init(derive_seed(1, "actor-init"));
  CHECK(pretrain_actor(zero, data, log).params() ==
        ActorParams::init({data.vocab.size(), 8, 16}, init).params());

  const TrainConfig c = tiny_config(Mode::TF, 1);
  TrainLog l1, l2;
  const ActorParams a = pretrain_actor(c, data, l1);
  CHECK(a.params() == pretrain_actor(c, data, l2).params());
  const auto epochs = l1.phase("pretrain");
  REQUIRE(epochs.size() == 3);
  CHECK(epochs.back()["valid_ppl"].get<double>() < epochs.front()["valid_ppl"].get<double>());

  TrainConfig ss = c;
  ss.mode = Mode::SS;
  TrainLog l3;
  CHECK(pretrain_actor(ss, data, l3).params() != a.params());
}

TEST_CASE("critic batches") {
  test::TempDir dir("cbatch");
  const TrainData data = load_train_data(tiny_corpus(dir));
  Rng init(1);
  const ActorParams a = ActorParams::init({data.vocab.size(), 8, 16}, init);
  Rng rng(2);
  const auto binary = build_critic_batch(a, data.train, EntropyLadder::collapsed(), 12, 16, rng);
  CHECK(std::set<double>(binary.targets.begin(), binary.targets.end()) == std::set<double>{0.0, 1.0});
  const auto me = build_critic_batch(a, data.train, EntropyLadder::standard(), 32, 16, rng);
  const std::set<double> allowed{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  std::size_t real = 0;
  for (std::size_t i = 0; i < me.targets.size(); ++i) {
    CHECK(allowed.count(me.targets[i]) == 1);
    real += me.provenance[i].ground_truth;
  }
  CHECK(me.sentences.size() == 32);
  CHECK(real == 16);
}

TEST_CASE("adversarial rounds") {
  test::TempDir dir("rounds");
  const TrainData data = load_train_data(tiny_corpus(dir));
  TrainConfig c = tiny_config(Mode::AC_MEMR, 2);
  TrainLog log;
  const ActorParams a = pretrain_actor(c, data, log);

  SUBCASE("no steps is the identity") {
    TrainConfig idle = c;
    idle.actor_steps = 0;
    idle.critic_steps = 0;
    AdversarialState s = init_adversarial(idle, data, a);
    const auto before_a = s.actor.params(), before_c = s.critic.params();
    CHECK(adversarial_round(idle, s, data, log).ok);
    CHECK(s.actor.params() == before_a);
    CHECK(s.critic.params() == before_c);
  }
  SUBCASE("fixed seed gives bit-identical rounds") {
    AdversarialState s1 = init_adversarial(c, data, a), s2 = init_adversarial(c, data, a);
    TrainLog l1, l2;
    pretrain_critic(c, s1, data, l1);
    pretrain_critic(c, s2, data, l2);
    const auto r1 = adversarial_round(c, s1, data, l1);
    const auto r2 = adversarial_round(c, s2, data, l2);
    CHECK(r1.pg_loss == r2.pg_loss);
    CHECK(s1.actor.params() == s2.actor.params());
    CHECK(s1.critic.params() == s2.critic.params());
    CHECK(s1.actor.params() != a.params());
  }
}

TEST_CASE("collapsed ladder with one head reproduces plain AC") {
  test::TempDir dir("reduce");
  const fs::path corpus = tiny_corpus(dir);
  TrainConfig ac = tiny_config(Mode::AC, 6);
  TrainConfig memr = tiny_config(Mode::AC_MEMR, 6);
  memr.ladder = EntropyLadder::collapsed();
  memr.heads = final_head();
  run_experiment(ac, corpus, dir / "ac");
  run_experiment(memr, corpus, dir / "memr");
  for (const char* f : {"actor_pretrain.ckpt", "critic_pretrain.ckpt", "critic_final.ckpt", "actor_final.ckpt"}) {
    INFO(f);
    CHECK(slurp(dir / "ac" / "checkpoints" / f) == slurp(dir / "memr" / "checkpoints" / f));
  }
}

TEST_CASE("experiment runs") {
  test::TempDir dir("experiment");
  const fs::path corpus = tiny_corpus(dir);
  SUBCASE("TF skips the adversarial loop") {
    run_experiment(tiny_config(Mode::TF, 1), corpus, dir / "tf");
    CHECK_FALSE(fs::exists(dir / "tf" / "checkpoints" / "critic_final.ckpt"));
    const std::string log = slurp(dir / "tf" / "log.jsonl");
    CHECK(log.find("\"adversarial\"") == std::string::npos);
    const json status = json::parse(slurp(dir / "tf" / "status.json"));
    CHECK(status["state"] == "complete");
    for (const char* f : {"bleu.json", "bleu.csv", "samples.txt", "completion.csv", "completion.dat", "kl.json"})
      CHECK(fs::exists(dir / "tf" / "reports" / f));
    try {
      run_experiment(tiny_config(Mode::TF, 1), corpus, dir / "tf");
      FAIL("expected refusal");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Exists);
    }
    RunOptions force;
    force.force = true;
    CHECK_NOTHROW(run_experiment(tiny_config(Mode::TF, 1), corpus, dir / "tf", force));
  }
  SUBCASE("collapse warnings land in the log") {
    TrainConfig c = tiny_config(Mode::AC_MEMR, 3);
    c.distinct_threshold = 1.01;
    const auto summary = run_experiment(c, corpus, dir / "warn");
    CHECK(summary.collapse_warnings >= 1);
    CHECK(slurp(dir / "warn" / "log.jsonl").find("mode_collapse") != std::string::npos);
  }
}
