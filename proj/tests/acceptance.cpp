// Acceptance suite: one PASS/FAIL line per criterion. The desk-scale runs take
// roughly half an hour on one core.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bleu_oracle.hpp"
#include "memr/actor.hpp"
#include "memr/critic.hpp"
#include "memr/evalharness.hpp"
#include "memr/gradcheck.hpp"
#include "memr/metrics.hpp"
#include "memr/rollout.hpp"
#include "memr/trainer.hpp"
#include "support.hpp"

using namespace memr;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

std::vector<json> log_phase(const fs::path& run, const std::string& phase) {
  std::vector<json> out;
  std::ifstream in(run / "log.jsonl");
  std::string line;
  while (std::getline(in, line)) {
    json j = json::parse(line);
    if (j.value("phase", "") == phase) out.push_back(std::move(j));
  }
  return out;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

void progress(const std::string& msg) { std::cerr << "[acceptance] " << msg << std::endl; }

// ---------------------------------------------------------------------------

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto entries = run_gradcheck_suite(1);
  const double secs = seconds_since(t0);
  double worst = 0.0;
  std::string worst_name;
  for (const auto& e : entries)
    if (!(e.max_rel_error <= worst)) {
      worst = e.max_rel_error;
      worst_name = e.component;
    }
  const bool ok = std::isfinite(worst) && worst < kGradCheckTolerance && secs < 60.0;
  return {ok, std::to_string(entries.size()) + " components, worst " + fmt("%.2e", worst) + " (" + worst_name +
                  "), " + fmt("%.1f s", secs)};
}

Outcome bleu_oracle() {
  Rng rng(derive_seed(2, "acceptance-bleu"));
  double worst = 0.0;
  for (int c = 0; c < 50; ++c) {
    const std::size_t alphabet = 1 + rng.below(5), n = 1 + rng.below(4);
    const auto cands = test::random_corpus(rng, 10, 8, alphabet);
    const auto refs = test::random_corpus(rng, 10, 8, alphabet);
    const double got = corpus_bleu(cands, refs, n).score;
    worst = std::max(worst, std::abs(got - test::naive_bleu(cands, refs, n)));
  }
  return {worst <= 1e-9, "50 cases, max |diff| " + fmt("%.1e", worst)};
}

std::vector<Sentence> random_batch(Rng& rng, std::size_t vocab, std::size_t n) {
  std::vector<Sentence> out(n);
  for (auto& s : out) {
    s.resize(1 + rng.below(7));
    for (auto& x : s) x = kReservedIds + static_cast<int>(rng.below(vocab - kReservedIds));
    s.push_back(kEos);
  }
  return out;
}

fs::path small_corpus(const fs::path& dir) {
  fs::create_directories(dir);
  SyntheticCorpusOptions o;
  o.grammar.alphabet = 12;
  o.grammar.groups = 3;
  o.grammar.t_max = 16;
  o.n_train = 300;
  o.n_valid = 60;
  o.n_test = 60;
  o.seed = 17;
  write_synthetic_corpus(o, dir);
  return dir;
}

TrainConfig small_config(Mode mode, std::uint64_t seed) {
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
  c.critic_pretrain_steps = 10;
  c.rounds = 4;
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

Outcome mode_reduction(const fs::path& work) {
  std::size_t cases = 0, equal = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    Rng rng(derive_seed(s, "acceptance-ss"));
    const ActorParams a = ActorParams::init({12, 5, 7}, rng);
    const auto batch = random_batch(rng, 12, 6);
    Rng ss_rng(s);
    const auto tf = teacher_forcing_loss(a, batch);
    const auto ss = scheduled_sampling_loss(a, batch, 0.0, ss_rng);
    ++cases;
    equal += tf.loss == ss.loss && tf.grads == ss.grads;
  }

  const fs::path corpus = small_corpus(work / "corpus");
  TrainConfig ac = small_config(Mode::AC, 6);
  TrainConfig reduced = small_config(Mode::AC_MEMR, 6);
  reduced.ladder = EntropyLadder::collapsed();
  reduced.heads = final_head();
  run_experiment(ac, corpus, work / "ac");
  run_experiment(reduced, corpus, work / "reduced");
  std::size_t ckpts = 0, same = 0;
  for (const auto& e : fs::directory_iterator(work / "ac" / "checkpoints")) {
    ++ckpts;
    same += slurp(e.path()) == slurp(work / "reduced" / "checkpoints" / e.path().filename());
  }
  const bool ok = equal == cases && ckpts >= 4 && same == ckpts;
  return {ok, "SS(p=0)=TF in " + std::to_string(equal) + "/" + std::to_string(cases) +
                  " batches (loss and gradients); reduced AC+MEMR = AC in " + std::to_string(same) + "/" +
                  std::to_string(ckpts) + " checkpoints"};
}

Outcome rollout_rule() {
  std::size_t positions = 0, dominated = 0, finals = 0, exact = 0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    Rng rng(derive_seed(s, "acceptance-rollout"));
    const ActorParams actor = ActorParams::init({14, 5, 8}, rng);
    const CriticParams critic = CriticParams::init({14, 4, 6, 8, 3}, rng);
    std::vector<std::vector<int>> prefixes(6);
    std::vector<Rng> streams;
    for (int i = 0; i < 6; ++i) streams.emplace_back(derive_seed(s, "acceptance-rollout-sample", {std::uint64_t(i)}));
    const auto sentences = sample_batch(actor, 1.0, 14, prefixes, streams);
    std::vector<std::uint64_t> bases;
    for (int i = 0; i < 6; ++i) bases.push_back(rng.next_u64());
    for (const auto& heads : {all_heads(), final_head()}) {
      const auto mx = mc_action_values(actor, critic, heads, sentences, {4, 14, 1.0, Aggregation::Max}, bases);
      const auto mn = mc_action_values(actor, critic, heads, sentences, {4, 14, 1.0, Aggregation::Mean}, bases);
      for (std::size_t b = 0; b < sentences.size(); ++b) {
        for (std::size_t t = 0; t < mx[b].q.size(); ++t) {
          ++positions;
          dominated += mx[b].q[t] >= mn[b].q[t];
        }
        ++finals;
        const double whole = critic_score(critic, sentences[b], heads, 14);
        exact += mx[b].q.back() == whole && mn[b].q.back() == whole;
      }
    }
  }
  return {dominated == positions && exact == finals,
          "max >= mean at " + std::to_string(dominated) + "/" + std::to_string(positions) +
              " positions; final value exact in " + std::to_string(exact) + "/" + std::to_string(finals)};
}

// ---------------------------------------------------------------------------

struct DeskRuns {
  std::vector<std::uint64_t> seeds;
  bool quick = false;
  fs::path corpus;
  std::map<std::string, std::vector<fs::path>> runs;  // mode -> one dir per seed
};

TrainConfig desk_config(Mode mode, std::uint64_t seed, bool quick) {
  TrainConfig c;
  c.mode = mode;
  c.seed = seed;
  c.actor.embed = 32;
  c.actor.hidden = 64;
  c.critic.embed = 32;
  c.critic.width = 32;
  c.t_max = 32;
  c.batch_size = 32;
  c.pretrain_epochs = 20;
  c.rounds = 30;
  c.patience = 10;
  c.deterministic = true;
  if (quick) {
    c.pretrain_epochs = 3;
    c.rounds = 3;
    c.critic_pretrain_steps = 20;
    c.bleu_samples = 300;
    c.valid_samples = 200;
    c.kl_samples = 200;
    c.completion.prefixes_per_k = 100;
    c.completion.bootstrap = 30;
  }
  return c;
}

DeskRuns desk_runs(const fs::path& work, std::size_t n_seeds, bool quick) {
  DeskRuns d;
  d.quick = quick;
  d.corpus = work / "desk-corpus";
  fs::create_directories(d.corpus);
  SyntheticCorpusOptions o;
  o.seed = 2024;
  if (quick) {
    o.n_train = 2000;
    o.n_valid = 400;
    o.n_test = 400;
  }
  write_synthetic_corpus(o, d.corpus);
  for (std::uint64_t i = 0; i < n_seeds; ++i) {
    const std::uint64_t seed = 101 + i;
    d.seeds.push_back(seed);
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path tf = work / ("TF-" + std::to_string(seed));
    run_experiment(desk_config(Mode::TF, seed, quick), d.corpus, tf);
    d.runs["TF"].push_back(tf);
    progress("seed " + std::to_string(seed) + " TF done " + fmt("(%.0f s)", seconds_since(t0)));
    for (Mode m : {Mode::AC, Mode::AC_ME, Mode::AC_MEMR}) {
      const auto t1 = std::chrono::steady_clock::now();
      TrainConfig c = desk_config(m, seed, quick);
      c.init_actor = (tf / "checkpoints" / "actor_pretrain.ckpt").string();
      const std::string name(mode_name(m));
      const fs::path dir = work / (name + "-" + std::to_string(seed));
      run_experiment(c, d.corpus, dir);
      d.runs[name].push_back(dir);
      progress("seed " + std::to_string(seed) + " " + name + " done " + fmt("(%.0f s)", seconds_since(t1)));
    }
  }
  return d;
}

double mean_metric(const std::vector<fs::path>& runs, const std::string& key) {
  double s = 0.0;
  for (const auto& r : runs) s += read_json(r / "status.json")["metrics"][key].get<double>();
  return s / static_cast<double>(runs.size());
}

Outcome ablation(const DeskRuns& d, std::vector<std::string>& notes) {
  const double f_ac = mean_metric(d.runs.at("AC"), "bleu_f"), f_memr = mean_metric(d.runs.at("AC+MEMR"), "bleu_f");
  const double h_ac = mean_metric(d.runs.at("AC"), "bleu_ha"), h_memr = mean_metric(d.runs.at("AC+MEMR"), "bleu_ha");
  const double f_me = mean_metric(d.runs.at("AC+ME"), "bleu_f"), h_me = mean_metric(d.runs.at("AC+ME"), "bleu_ha");
  const double f_tf = mean_metric(d.runs.at("TF"), "bleu_f"), h_tf = mean_metric(d.runs.at("TF"), "bleu_ha");
  notes.push_back(fmt("bleu_f5  TF %.4f  AC %.4f  AC+ME %.4f  AC+MEMR %.4f", f_tf, f_ac, f_me, f_memr));
  notes.push_back(fmt("bleu_ha5 TF %.4f  AC %.4f  AC+ME %.4f  AC+MEMR %.4f", h_tf, h_ac, h_me, h_memr));
  if (!(f_me > f_ac) || !(h_me > h_ac)) notes.push_back("flag: AC+ME does not exceed AC on both scores");
  return {f_memr >= f_ac && h_memr >= h_ac,
          fmt("mean over seeds: F5 %.4f vs %.4f, HA5 %.4f vs %.4f (AC+MEMR vs AC)", f_memr, f_ac, h_memr, h_ac)};
}

Outcome exposure_curves(const DeskRuns& d, std::vector<std::string>& notes) {
  std::size_t declines = 0, declines_tail = 0;
  double gap_sum = 0.0;
  for (const auto& run : d.runs.at("TF")) {
    const auto curves = read_curves_csv(run / "reports" / "completion.csv");
    const CompletionCurve* seen = nullptr;
    const CompletionCurve* unseen = nullptr;
    for (const auto& c : curves) (c.source == PrefixSource::Seen ? seen : unseen) = &c;
    declines += unseen->points.back().bleu < unseen->points.front().bleu;
    gap_sum += exposure_gap(*seen, *unseen).mean_gap;
    notes.push_back(fmt("TF unseen bleu_f4 k=%.0f %.4f -> k=%.0f %.4f", double(unseen->points.front().k),
                        unseen->points.front().bleu, double(unseen->points.back().k), unseen->points.back().bleu) +
                    fmt(", mean gap %.4f", exposure_gap(*seen, *unseen).mean_gap));

    // Alternative reading: score only the generated continuation.
    const TrainData data = load_train_data(d.corpus);
    const auto actor = ActorParams::from_params(load_checkpoint(run / "checkpoints" / "actor_final.ckpt"));
    CompletionConfig cfg = desk_config(Mode::TF, 0, d.quick).completion;
    cfg.score_completion_only = true;
    const auto alt = completion_sweep(actor, data.test, PrefixSource::Unseen, cfg, 7);
    declines_tail += alt.points.back().bleu < alt.points.front().bleu;
    notes.push_back(fmt("  continuation-only unseen bleu_f4 %.4f -> %.4f", alt.points.front().bleu,
                        alt.points.back().bleu));
  }
  const double mean_gap = gap_sum / static_cast<double>(d.runs.at("TF").size());
  notes.push_back("continuation-only scoring declines in " + std::to_string(declines_tail) + "/" +
                  std::to_string(d.seeds.size()) + " seeds");

  // Oracle-distilled model on a hand-sized grammar with equal-size splits.
  const auto g = test::toy_grammar(16);
  const ActorParams oracle = distill_first_order(g, g.vocabulary());
  const auto train = synth_generate(g, 5000, 3), test_split = synth_generate(g, 5000, 4, Split::Test);
  CompletionConfig cfg;
  cfg.k_list = {0, 2, 4, 6};
  cfg.t_max = 16;
  const auto seen = completion_sweep(oracle, train.sentences, PrefixSource::Seen, cfg, 5);
  const auto unseen = completion_sweep(oracle, test_split.sentences, PrefixSource::Unseen, cfg, 5);
  const auto og = exposure_gap(seen, unseen);
  const bool oracle_ok = std::abs(og.mean_gap) <= 2 * og.mean_se;

  const bool ok = 3 * declines >= 2 * d.seeds.size() && mean_gap > 0 && oracle_ok;
  return {ok, "unseen decline in " + std::to_string(declines) + "/" + std::to_string(d.seeds.size()) +
                  " seeds; mean TF gap " + fmt("%.4f", mean_gap) +
                  fmt("; oracle gap %.4f +- %.4f", og.mean_gap, og.mean_se)};
}

Outcome kl_diagnostics(const DeskRuns& d, std::vector<std::string>& notes) {
  bool ok = true;
  std::size_t estimates = 0, nonneg = 0;
  for (const auto& run : d.runs.at("TF")) {
    const auto kl = log_phase(run, "kl");
    std::size_t rises = 0;
    std::string trace;
    for (std::size_t i = 0; i < kl.size(); ++i) {
      const double v = kl[i]["forward_kl"].get<double>();
      trace += fmt(i ? " %.2f" : "%.2f", v);
      if (i > 0 && v > kl[i - 1]["forward_kl"].get<double>()) ++rises;
      ++estimates;
      nonneg += v >= -2 * kl[i]["stderr"].get<double>();
    }
    const std::size_t epochs = kl.empty() ? 0 : kl.size() - 1;
    const std::size_t allowed = (epochs + 19) / 20;
    ok = ok && epochs > 0 && rises <= allowed;
    notes.push_back(run.filename().string() + " forward KL by epoch: " + trace + " (" + std::to_string(rises) +
                    " rises)");
  }
  for (const auto& [mode, runs] : d.runs)
    for (const auto& run : runs) {
      const json k = read_json(run / "reports" / "kl.json");
      for (const char* dir : {"forward", "reverse"}) {
        ++estimates;
        nonneg += k[dir]["value"].get<double>() >= -2 * k[dir]["stderr"].get<double>();
      }
    }
  ok = ok && nonneg == estimates;
  return {ok, "forward KL monotone within tolerance in every TF run; " + std::to_string(nonneg) + "/" +
                  std::to_string(estimates) + " estimates >= -2 se"};
}

Outcome non_collapse(const DeskRuns& d) {
  std::size_t checks = 0, below = 0, warned = 0;
  double lowest = 1.0;
  for (const auto& run : d.runs.at("AC+MEMR")) {
    for (const auto& e : log_phase(run, "eval")) {
      const double v = e["distinct4"].get<double>();
      ++checks;
      lowest = std::min(lowest, v);
      below += v < 0.2;
    }
    const double final_v = read_json(run / "status.json")["metrics"]["distinct4"].get<double>();
    ++checks;
    lowest = std::min(lowest, final_v);
    below += final_v < 0.2;
    warned += log_phase(run, "warning").size();
  }
  return {below == 0 && checks > d.seeds.size(),
          std::to_string(checks) + " checks, lowest distinct-4 " + fmt("%.4f", lowest) + ", " +
              std::to_string(below) + " below 0.2, " + std::to_string(warned) + " warnings logged"};
}

// ---------------------------------------------------------------------------

struct Proc {
  int code = -1;
  std::string out;
};

Proc cli(const std::string& args, const fs::path& cwd) {
  const fs::path o = cwd / ".acc-stdout";
  const std::string cmd = "cd '" + cwd.string() + "' && '" MEMR_CLI_PATH "' " + args + " >'" + o.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  Proc p{WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(o)};
  fs::remove(o);
  return p;
}

Outcome determinism(const fs::path& work) {
  fs::create_directories(work / "a");
  fs::create_directories(work / "b");
  const std::string tiny =
      " --hidden 8 --embed 4 --critic-width 4 --epochs 1 --rounds 2 --critic-pretrain-steps 3 --rollouts 2"
      " --valid-samples 20 --bleu-samples 30 --bleu-bootstrap 3 --k 1,2 --prefixes-per-k 10 --kl-samples 100"
      " --t-max 16 --critic-batch 8";
  const std::vector<std::pair<std::string, std::string>> steps{
      {"make-corpus", "--seed 4 --n-train 150 --n-valid 30 --n-test 30 --alphabet 10 --groups 2 --t-max 16"},
      {"pretrain", "--corpus ../make-corpus --seed 2 --mode SS" + tiny},
      {"train", "--corpus ../make-corpus --seed 3 --mode AC+MEMR" + tiny},
      {"generate", "--run ../train --seed 5 --n 20"},
      {"eval-bleu", "--samples ../generate/samples.txt --refs ../make-corpus/test.txt --bootstrap 10 --seed 6"},
      {"eval-completion", "--run ../train --corpus ../make-corpus --seed 7 --k 1,2 --prefixes-per-k 10 --bootstrap 5"},
      {"eval-kl", "--run ../train --grammar ../make-corpus/grammar.json --seed 8 --m 100"},
      {"gradcheck", "--seed 9"},
      {"report", "../train ../pretrain"},
  };
  std::size_t ok = 0, files = 0;
  std::string bad;
  for (const auto& [name, args] : steps) {
    const fs::path first = work / "a" / name;
    fs::create_directories(first.parent_path() / "cwd");
    const Proc p = cli(name + " " + args + " --deterministic --out ../" + name, work / "a" / "cwd");
    if (p.code != 0) {
      bad += " " + name + "(exit " + std::to_string(p.code) + ": " + p.out.substr(0, 200) + ")";
      continue;
    }
    const json manifest = read_json(first / "manifest.json");
    const fs::path second = work / "b" / name;
    const Proc q = cli(name + " --manifest '" + (first / "manifest.json").string() + "' --out '" + second.string() + "'",
                       work / "b");
    // Output paths echoed on stdout are the only expected difference.
    std::string expected = p.out;
    for (std::size_t at; (at = expected.find(first.string())) != std::string::npos;)
      expected.replace(at, first.string().size(), second.string());
    bool same = q.code == 0 && q.out == expected && !manifest["artifacts"].empty();
    if (q.code == 0 && q.out != expected) bad += " " + name + "(stdout)";
    for (const auto& a : manifest["artifacts"]) {
      const std::string f = a.get<std::string>();
      ++files;
      if (!fs::exists(second / f) || slurp(first / f) != slurp(second / f)) {
        same = false;
        bad += " " + name + "/" + f;
      }
    }
    ok += same;
    if (!same && q.code != 0) bad += " " + name + "(rerun exit " + std::to_string(q.code) + ")";
  }
  return {ok == steps.size(), std::to_string(ok) + "/" + std::to_string(steps.size()) + " subcommands, " +
                                  std::to_string(files) + " artifacts compared" +
                                  (bad.empty() ? std::string() : "; mismatches:" + bad)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string work_arg;
  std::size_t n_seeds = 3;
  bool keep = false, quick = false;
  std::vector<int> expect_red;
  app.add_option("--work", work_arg, "working directory (default: a fresh temp dir)");
  app.add_option("--seeds", n_seeds, "desk seeds")->check(CLI::Range(1, 10));
  app.add_flag("--keep", keep, "keep the working directory");
  app.add_flag("--quick", quick, "tiny desk profile for smoke testing; results are not meaningful");
  app.add_option("--expect-red", expect_red, "criteria known to fail; they print FAIL but do not fail the run");
  CLI11_PARSE(app, argc, argv);

  const fs::path work = work_arg.empty() ? fs::temp_directory_path() / ("memr-acceptance-" + std::to_string(::getpid()))
                                         : fs::absolute(work_arg);
  fs::remove_all(work);
  fs::create_directories(work);
  const auto t_all = std::chrono::steady_clock::now();

  std::vector<std::pair<int, Outcome>> results;
  std::vector<std::string> notes;
  auto record = [&](int id, const char* what, auto&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    progress(std::string(what) + fmt(" (%.0f s)", seconds_since(t0)));
    results.emplace_back(id, o);
  };

  record(1, "gradients", gradients);
  record(2, "bleu oracle", bleu_oracle);
  record(3, "mode reduction", [&] { return mode_reduction(work / "reduction"); });
  record(4, "rollout rule", rollout_rule);
  record(8, "determinism", [&] { return determinism(work / "determinism"); });

  DeskRuns desk;
  std::string desk_error;
  try {
    desk = desk_runs(work / "desk", n_seeds, quick);
  } catch (const std::exception& e) {
    desk_error = e.what();
  }
  auto with_desk = [&](auto&& fn) {
    return [&, fn]() -> Outcome {
      if (!desk_error.empty()) return {false, "desk runs failed: " + desk_error};
      return fn();
    };
  };
  record(5, "ablation", with_desk([&] { return ablation(desk, notes); }));
  record(6, "exposure curves", with_desk([&] { return exposure_curves(desk, notes); }));
  record(7, "kl diagnostics", with_desk([&] { return kl_diagnostics(desk, notes); }));
  record(9, "non-collapse", with_desk([&] { return non_collapse(desk); }));

  std::sort(results.begin(), results.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  static const char* names[] = {"",
                                "gradient suite",
                                "BLEU oracle equivalence",
                                "mode-reduction identities",
                                "rollout max rule",
                                "desk ablation ordering",
                                "exposure-bias curve shape",
                                "KL diagnostics",
                                "determinism from manifests",
                                "non-collapse guard"};
  std::cout << "\n";
  for (const auto& n : notes) std::cout << "  note: " << n << "\n";
  std::cout << "\n";
  int unexpected = 0;
  const std::set<int> red(expect_red.begin(), expect_red.end());
  for (const auto& [id, o] : results) {
    const bool known = red.count(id) > 0;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << id << ". " << names[id] << ": " << o.detail;
    if (!o.pass && known) std::cout << "  [known red]";
    if (o.pass && known) std::cout << "  [listed as known red but passes]";
    std::cout << "\n";
    if (!o.pass && !known) ++unexpected;
  }
  std::cout << fmt("\ntotal %.0f s", seconds_since(t_all)) << (quick ? " (quick profile)" : "") << "\n";
  if (keep) std::cout << "work directory: " << work.string() << "\n";
  else fs::remove_all(work);
  return unexpected == 0 ? 0 : 1;
}
