#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "memr/memr.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RuntimeError : std::runtime_error {
  RuntimeError(const std::string& what, int code) : std::runtime_error(what), exit_code(code) {}
  int exit_code;
};

enum class Kind { Str, Path, Int, UInt, Real, Bool, UIntList };

struct OptSpec {
  std::string name;  // long flag without dashes; also the key in config files and manifests
  Kind kind;
  json def;  // null: no default (absent unless given)
  std::string help;
  std::string trainer_key;  // JSON pointer into the trainer settings, train/pretrain only
};

struct Command {
  std::string name;
  std::string help;
  bool stochastic = true;
  bool out_required = false;
  std::vector<OptSpec> opts;
};

// Trainer flags shared by pretrain and train; absent ones keep the trainer's defaults.
std::vector<OptSpec> trainer_opts() {
  return {
      {"model", Kind::Str, nullptr, "model label recorded in reports", "/model"},
      {"epochs", Kind::UInt, nullptr, "MLE pretraining epochs", "/pretrain_epochs"},
      {"batch-size", Kind::UInt, nullptr, "MLE batch size", "/batch_size"},
      {"embed", Kind::UInt, nullptr, "actor embedding size", "/actor/embed"},
      {"hidden", Kind::UInt, nullptr, "actor hidden size", "/actor/hidden"},
      {"t-max", Kind::UInt, nullptr, "maximum sentence length in tokens, EOS included", "/t_max"},
      {"mle-lr", Kind::Real, nullptr, "MLE learning rate", "/mle_lr"},
      {"ss-max", Kind::Real, nullptr, "final scheduled sampling probability", "/ss_max"},
      {"critic-embed", Kind::UInt, nullptr, "critic embedding size", "/critic/embed"},
      {"critic-width", Kind::UInt, nullptr, "critic channels per layer", "/critic/width"},
      {"critic-batch", Kind::UInt, nullptr, "critic batch size", "/critic_batch"},
      {"critic-pretrain-steps", Kind::UInt, nullptr, "critic regression steps before the rounds", "/critic_pretrain_steps"},
      {"rounds", Kind::UInt, nullptr, "adversarial rounds", "/rounds"},
      {"actor-steps", Kind::UInt, nullptr, "actor updates per round", "/actor_steps"},
      {"critic-steps", Kind::UInt, nullptr, "critic updates per round", "/critic_steps"},
      {"actor-lr", Kind::Real, nullptr, "actor learning rate in the rounds", "/actor_lr"},
      {"critic-lr", Kind::Real, nullptr, "critic learning rate", "/critic_lr"},
      {"clip", Kind::Real, nullptr, "actor gradient norm clip", "/clip"},
      {"ladder", Kind::Str, nullptr, "standard, literal or collapsed", "/ladder"},
      {"heads", Kind::UIntList, nullptr, "critic layers averaged into the reward, e.g. 3,5,8", "/heads"},
      {"rollouts", Kind::UInt, nullptr, "Monte Carlo completions per position", "/rollout/n"},
      {"rollout-aggregate", Kind::Str, nullptr, "max or mean", "/rollout/aggregate"},
      {"patience", Kind::UInt, nullptr, "rounds without validation improvement before stopping", "/patience"},
      {"valid-samples", Kind::UInt, nullptr, "samples per validation evaluation", "/valid_samples"},
      {"bleu-order", Kind::UInt, nullptr, "BLEU order of the final report", "/bleu_order"},
      {"bleu-samples", Kind::UInt, nullptr, "samples for the final BLEU report", "/bleu_samples"},
      {"bleu-bootstrap", Kind::UInt, nullptr, "bootstrap resamples for BLEU standard errors", "/bleu_bootstrap"},
      {"k", Kind::UIntList, nullptr, "completion prefix lengths", "/completion/k_list"},
      {"prefixes-per-k", Kind::UInt, nullptr, "completion prefixes per length", "/completion/prefixes_per_k"},
      {"score-completion-only", Kind::Bool, nullptr, "score only the generated part of completions",
       "/completion/score_completion_only"},
      {"kl-samples", Kind::UInt, nullptr, "samples per KL estimate", "/kl_samples"},
      {"init-actor", Kind::Path, nullptr, "actor checkpoint replacing MLE pretraining", "/init_actor"},
  };
}

std::vector<Command> commands() {
  std::vector<Command> cs;
  cs.push_back({"make-corpus",
                "generate a synthetic oracle-grammar corpus",
                true,
                true,
                {{"n-train", Kind::UInt, 10000, "training sentences", ""},
                 {"n-valid", Kind::UInt, 2000, "validation sentences", ""},
                 {"n-test", Kind::UInt, 2000, "test sentences", ""},
                 {"alphabet", Kind::UInt, 50, "grammar symbols", ""},
                 {"groups", Kind::UInt, 5, "phase groups", ""},
                 {"stay", Kind::Real, 0.75, "probability of staying in the current group", ""},
                 {"final-stop", Kind::Real, 0.25, "stop probability in the last group", ""},
                 {"stop-leak", Kind::Real, 0.002, "stop probability elsewhere", ""},
                 {"leak", Kind::Real, 0.01, "mass spread over every symbol", ""},
                 {"concentration", Kind::Real, 0.5, "Dirichlet concentration of transition rows", ""},
                 {"t-max", Kind::UInt, 32, "maximum sentence length in tokens, EOS included", ""}}});
  Command pre{"pretrain", "MLE pretraining only (TF or SS)", true, true, {}};
  pre.opts.push_back({"corpus", Kind::Path, nullptr, "corpus directory", ""});
  pre.opts.push_back({"mode", Kind::Str, "TF", "TF or SS", "/mode"});
  for (auto& o : trainer_opts()) pre.opts.push_back(o);
  cs.push_back(pre);
  Command tr{"train", "full training run with final evaluation", true, true, {}};
  tr.opts.push_back({"corpus", Kind::Path, nullptr, "corpus directory", ""});
  tr.opts.push_back({"mode", Kind::Str, "AC+MEMR", "TF, SS, AC, AC+ME or AC+MEMR", "/mode"});
  for (auto& o : trainer_opts()) tr.opts.push_back(o);
  cs.push_back(tr);
  cs.push_back({"generate",
                "sample sentences from a trained actor",
                true,
                false,
                {{"run", Kind::Path, nullptr, "run directory", ""},
                 {"checkpoint", Kind::Str, "", "checkpoint file (default: final, else pretrained)", ""},
                 {"n", Kind::UInt, 10, "number of sentences", ""},
                 {"tau", Kind::Real, 1.0, "sampling temperature", ""},
                 {"t-max", Kind::UInt, 0, "length cap (0: the run's)", ""},
                 {"prefix", Kind::Str, "", "tokens every sentence starts with", ""}}});
  cs.push_back({"eval-bleu",
                "BLEU_F, BLEU_B and BLEU_HA between two sentence-per-line files",
                false,
                false,
                {{"samples", Kind::Path, nullptr, "generated sentences", ""},
                 {"refs", Kind::Path, nullptr, "reference sentences", ""},
                 {"n", Kind::UInt, 5, "BLEU order", ""},
                 {"bootstrap", Kind::UInt, 0, "bootstrap resamples for standard errors (needs --seed)", ""},
                 {"seed", Kind::UInt, nullptr, "seed for bootstrap resampling", ""}}});
  cs.push_back({"eval-completion",
                "sentence-completion curves for seen and unseen prefixes",
                true,
                false,
                {{"run", Kind::Path, nullptr, "run directory", ""},
                 {"checkpoint", Kind::Str, "", "checkpoint file", ""},
                 {"corpus", Kind::Path, nullptr, "corpus directory (train.txt: seen, test.txt: unseen)", ""},
                 {"k", Kind::UIntList, json::array({2, 4, 8, 12, 16}), "prefix lengths", ""},
                 {"tau", Kind::Real, 0.5, "completion temperature", ""},
                 {"prefixes-per-k", Kind::UInt, 500, "prefixes per length", ""},
                 {"completions-per-prefix", Kind::UInt, 1, "completions per prefix", ""},
                 {"bootstrap", Kind::UInt, 200, "bootstrap resamples", ""},
                 {"order", Kind::UInt, 4, "BLEU order", ""},
                 {"score-completion-only", Kind::Bool, false, "score only the generated part", ""}}});
  cs.push_back({"eval-kl",
                "forward and reverse KL between the actor and an oracle grammar",
                true,
                false,
                {{"run", Kind::Path, nullptr, "run directory", ""},
                 {"checkpoint", Kind::Str, "", "checkpoint file", ""},
                 {"grammar", Kind::Path, nullptr, "grammar.json of the corpus", ""},
                 {"m", Kind::UInt, 1000, "samples per estimate", ""},
                 {"floor", Kind::Real, -80.0, "floor on log-probabilities", ""},
                 {"direction", Kind::Str, "both", "forward, reverse or both", ""}}});
  cs.push_back({"gradcheck", "finite-difference gradient suite", true, false, {}});
  cs.push_back({"report", "mode x metric table over run directories", false, false, {}});
  return cs;
}

std::vector<OptSpec> common_opts(const Command& c) {
  std::vector<OptSpec> o{
      {"out", Kind::Path, nullptr, "output directory (relative paths go under $MEMR_OUT_ROOT when set)", ""},
      {"jobs", Kind::UInt, 1, "worker cap", ""},
      {"deterministic", Kind::Bool, false, "single-threaded reproducible mode", ""},
  };
  if (c.stochastic) o.push_back({"seed", Kind::UInt, nullptr, "random seed (required)", ""});
  return o;
}

json parse_value(const OptSpec& o, const std::string& text) {
  auto bad = [&] { return UsageError("--" + o.name + ": invalid value '" + text + "'"); };
  auto parse_uint = [&](const std::string& s) -> std::uint64_t {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) throw bad();
    try {
      return std::stoull(s);
    } catch (const std::exception&) {
      throw bad();
    }
  };
  switch (o.kind) {
    case Kind::Str:
    case Kind::Path: return text;
    case Kind::UInt: return parse_uint(text);
    case Kind::Int: {
      std::size_t pos = 0;
      try {
        const long long v = std::stoll(text, &pos);
        if (pos != text.size()) throw bad();
        return v;
      } catch (const std::invalid_argument&) {
        throw bad();
      } catch (const std::out_of_range&) {
        throw bad();
      }
    }
    case Kind::Real: {
      char* end = nullptr;
      const double v = std::strtod(text.c_str(), &end);
      if (text.empty() || *end != '\0' || !std::isfinite(v)) throw bad();
      return v;
    }
    case Kind::Bool:
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw bad();
    case Kind::UIntList: {
      json arr = json::array();
      std::stringstream ss(text);
      std::string item;
      while (std::getline(ss, item, ',')) arr.push_back(parse_uint(item));
      if (arr.empty()) throw bad();
      return arr;
    }
  }
  throw bad();
}

void check_type(const OptSpec& o, const json& v, const std::string& where) {
  bool ok = false;
  switch (o.kind) {
    case Kind::Str:
    case Kind::Path: ok = v.is_string(); break;
    case Kind::UInt: ok = v.is_number_unsigned(); break;
    case Kind::Int: ok = v.is_number_integer(); break;
    case Kind::Real: ok = v.is_number(); break;
    case Kind::Bool: ok = v.is_boolean(); break;
    case Kind::UIntList:
      ok = v.is_array() && !v.empty();
      for (const auto& x : v) ok = ok && x.is_number_unsigned();
      break;
  }
  if (!ok) throw UsageError(where + ": bad value for '" + o.name + "'");
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw RuntimeError("cannot read " + p.string(), kExitRuntime);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

json read_json_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw RuntimeError(what + " not found: " + p.string(), kExitRuntime);
  try {
    return json::parse(read_text(p));
  } catch (const json::exception& e) {
    throw UsageError(what + " " + p.string() + " is not valid JSON: " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw RuntimeError("cannot write " + p.string(), kExitRuntime);
}

std::string now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

fs::path resolve_out(const std::string& s) {
  fs::path p(s);
  if (p.is_relative()) {
    const char* root = std::getenv("MEMR_OUT_ROOT");
    p = (root && *root) ? fs::path(root) / p : fs::current_path() / p;
  }
  return p.lexically_normal();
}

fs::path absolute_input(const std::string& s) { return fs::absolute(fs::path(s)).lexically_normal(); }

int exit_code_for(memr_status s) {
  return (s == MEMR_ERR_INVALID_ARGUMENT || s == MEMR_ERR_DOMAIN) ? kExitUsage : kExitRuntime;
}

void check(memr_status s) {
  if (s != MEMR_OK) throw RuntimeError(memr_last_error(), exit_code_for(s));
}

struct OwnedString {
  char* p = nullptr;
  ~OwnedString() { memr_string_free(p); }
  std::string str() const { return p ? std::string(p) : std::string(); }
};

struct Model {
  memr_model* m = nullptr;
  ~Model() { memr_model_free(m); }
};

json with_underscores(const json& o, std::initializer_list<const char*> skip) {
  json out = json::object();
  for (const auto& [k, v] : o.items()) {
    bool skipped = false;
    for (const char* s : skip) skipped = skipped || k == s;
    if (skipped || v.is_null()) continue;
    std::string key = k;
    for (auto& c : key)
      if (c == '-') c = '_';
    out[key] = v;
  }
  return out;
}

std::string fmt(double v, const char* f = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Context {
  std::string command;
  json options;            // resolved
  std::optional<fs::path> out;
  std::vector<std::string> positional;
};

// ---- subcommands ----------------------------------------------------------

int run_make_corpus(const Context& c) {
  json o = with_underscores(c.options, {"out", "jobs", "deterministic"});
  OwnedString res;
  check(memr_make_corpus(o.dump().c_str(), c.out->c_str(), MEMR_DIR_PREPARED, &res.p));
  const json r = json::parse(res.str());
  std::cout << "corpus written to " << c.out->string() << '\n';
  for (const char* k : {"expected_length", "entropy_rate", "mass_within_t_max"})
    if (r.contains(k)) std::cout << k << ' ' << r[k].dump() << '\n';
  return kExitOk;
}

int run_training(const Context& c, bool pretrain_only) {
  OwnedString res;
  check(memr_train(c.options["trainer"].dump().c_str(), c.options["corpus"].get<std::string>().c_str(), c.out->c_str(),
                   MEMR_DIR_PREPARED | (pretrain_only ? MEMR_PRETRAIN_ONLY : 0u), &res.p));
  const json status = json::parse(res.str());
  std::cout << "run " << status.value("state", "?") << ": " << c.out->string() << '\n';
  if (status.contains("valid_ppl")) std::cout << "valid_ppl " << fmt(status["valid_ppl"].get<double>()) << '\n';
  if (status.contains("metrics"))
    for (const auto& [k, v] : status["metrics"].items())
      if (v.is_number()) std::cout << k << ' ' << v.dump() << '\n';
  return kExitOk;
}

void load_model(const Context& c, Model& m) {
  check(memr_model_load(c.options["run"].get<std::string>().c_str(), c.options["checkpoint"].get<std::string>().c_str(),
                        &m.m));
}

int run_generate(const Context& c) {
  Model m;
  load_model(c, m);
  json o{{"seed", c.options["seed"]},
         {"n", c.options["n"]},
         {"tau", c.options["tau"]},
         {"prefix", c.options["prefix"]}};
  if (c.options["t-max"].get<std::uint64_t>() > 0) o["t_max"] = c.options["t-max"];
  OwnedString text;
  check(memr_model_generate(m.m, o.dump().c_str(), &text.p));
  if (c.out) write_text(*c.out / "samples.txt", text.str());
  else std::cout << text.str();
  return kExitOk;
}

int run_eval_bleu(const Context& c) {
  json o{{"n", c.options["n"]}, {"bootstrap", c.options["bootstrap"]}};
  if (!c.options["seed"].is_null()) o["seed"] = c.options["seed"];
  if (c.options["bootstrap"].get<std::uint64_t>() > 0 && c.options["seed"].is_null())
    throw UsageError("--seed is required when --bootstrap > 0");
  OwnedString res;
  check(memr_eval_bleu(c.options["samples"].get<std::string>().c_str(), c.options["refs"].get<std::string>().c_str(),
                       o.dump().c_str(), c.out ? c.out->c_str() : nullptr, &res.p));
  const json r = json::parse(res.str());
  const std::string n = std::to_string(r["n"].get<int>());
  std::cout << "bleu_f" << n << '=' << fmt(r["bleu_f"].get<double>()) << " bleu_b" << n << '='
            << fmt(r["bleu_b"].get<double>()) << " bleu_ha" << n << '=' << fmt(r["bleu_ha"].get<double>()) << '\n';
  if (c.options["bootstrap"].get<std::uint64_t>() > 0)
    std::cout << "stderr_f=" << fmt(r["stderr_f"].get<double>()) << " stderr_b=" << fmt(r["stderr_b"].get<double>())
              << '\n';
  if (r.value("too_short", false)) std::cerr << "warning: no sample is long enough for the BLEU order\n";
  return kExitOk;
}

int run_eval_completion(const Context& c) {
  Model m;
  load_model(c, m);
  json o = with_underscores(c.options, {"out", "jobs", "deterministic", "run", "checkpoint", "corpus"});
  OwnedString res;
  check(memr_eval_completion(m.m, c.options["corpus"].get<std::string>().c_str(), o.dump().c_str(),
                             c.out ? c.out->c_str() : nullptr, &res.p));
  const json r = json::parse(res.str());
  if (c.out) write_text(*c.out / "completion.json", r.dump(2));
  std::printf("%-7s %3s %9s %9s %8s\n", "source", "k", "bleu_f4", "stderr", "prefixes");
  for (const char* src : {"seen", "unseen"})
    for (const auto& p : r[src])
      std::printf("%-7s %3d %9.6f %9.6f %8d\n", src, p["k"].get<int>(), p["bleu"].get<double>(),
                  p["stderr"].get<double>(), p["n_prefixes"].get<int>());
  std::fflush(stdout);
  std::cout << "mean_exposure_gap " << fmt(r["exposure_gap"]["mean_gap"].get<double>()) << " +- "
            << fmt(r["exposure_gap"]["mean_stderr"].get<double>()) << '\n';
  return kExitOk;
}

int run_eval_kl(const Context& c) {
  Model m;
  load_model(c, m);
  json o{{"seed", c.options["seed"]}, {"m", c.options["m"]}, {"floor", c.options["floor"]},
         {"direction", c.options["direction"]}};
  OwnedString res;
  check(memr_eval_kl(m.m, c.options["grammar"].get<std::string>().c_str(), o.dump().c_str(), &res.p));
  const json r = json::parse(res.str());
  if (c.out) write_text(*c.out / "kl.json", r.dump(2));
  for (const char* d : {"forward", "reverse"})
    if (r.contains(d))
      std::cout << d << "_kl " << fmt(r[d]["value"].get<double>()) << " +- " << fmt(r[d]["stderr"].get<double>())
                << " (m=" << r[d]["m"].get<int>() << ", floored=" << r[d]["floored"].get<int>() << ")\n";
  return kExitOk;
}

int run_gradcheck(const Context& c) {
  int pass = 0;
  OwnedString res;
  check(memr_gradcheck(c.options["seed"].get<std::uint64_t>(), &pass, &res.p));
  const json r = json::parse(res.str());
  if (c.out) write_text(*c.out / "gradcheck.json", r.dump(2));
  for (const auto& e : r["components"])
    std::printf("%-26s %.3e %s\n", e["component"].get<std::string>().c_str(), e["max_rel_error"].get<double>(),
                e["pass"].get<bool>() ? "ok" : "FAIL");
  std::printf("%s (tolerance %.0e)\n", pass ? "all components pass" : "gradient check FAILED",
              r["tolerance"].get<double>());
  return pass ? kExitOk : kExitRuntime;
}

int run_report(const Context& c) {
  const auto& dirs = c.options["runs"];
  if (dirs.empty()) throw UsageError("report needs at least one run directory");
  std::vector<std::string> store;
  for (const auto& d : dirs) store.push_back(d.get<std::string>());
  std::vector<const char*> ptrs;
  for (const auto& s : store) ptrs.push_back(s.c_str());
  OwnedString res;
  check(memr_report(ptrs.data(), ptrs.size(), c.out ? c.out->c_str() : nullptr, &res.p));
  std::cout << json::parse(res.str())["table"].get<std::string>();
  return kExitOk;
}

// ---- option resolution -----------------------------------------------------

struct Parsed {
  std::map<std::string, std::string> values;
  std::map<std::string, bool> flags;
  std::string config, manifest;
  std::vector<std::string> runs;
  bool force = false;
};

void overlay(json& options, const json& src, const std::vector<OptSpec>& specs, const std::string& where,
             bool nested_trainer) {
  if (!src.is_object()) throw UsageError(where + ": expected a JSON object");
  for (const auto& [k, v] : src.items()) {
    if ((k == "trainer" && nested_trainer && v.is_object()) || (k == "runs" && options.contains("runs") && v.is_array())) {
      options[k] = v;
      continue;
    }
    const OptSpec* spec = nullptr;
    for (const auto& s : specs)
      if (s.name == k) spec = &s;
    if (!spec) throw UsageError(where + ": unknown option '" + k + "'");
    if (v.is_null()) continue;
    check_type(*spec, v, where);
    options[k] = v;
  }
}

json resolve(const Command& cmd, const std::vector<OptSpec>& specs, const Parsed& p, const json* manifest_options) {
  json o = json::object();
  for (const auto& s : specs) o[s.name] = s.def;
  if (cmd.name == "report") o["runs"] = json::array();
  const bool training = cmd.name == "train" || cmd.name == "pretrain";
  std::set<std::string> given;
  if (manifest_options) {
    overlay(o, *manifest_options, specs, "manifest", training);
    for (const auto& [k, v] : manifest_options->items()) given.insert(k);
  }
  if (!p.config.empty()) {
    const json cfg = read_json_file(absolute_input(p.config), "config file");
    overlay(o, cfg, specs, "config file", training);
    for (const auto& [k, v] : cfg.items()) given.insert(k);
  }
  for (const auto& s : specs) {
    if (s.kind == Kind::Bool) {
      auto it = p.flags.find(s.name);
      if (it != p.flags.end() && it->second) {
        o[s.name] = true;
        given.insert(s.name);
      }
    } else if (auto it = p.values.find(s.name); it != p.values.end()) {
      o[s.name] = parse_value(s, it->second);
      given.insert(s.name);
    }
  }
  if (!p.runs.empty()) o["runs"] = p.runs;

  for (const auto& s : specs) {
    if (s.kind == Kind::Path && o[s.name].is_string() && s.name != "out") o[s.name] = absolute_input(o[s.name]).string();
  }
  if (o.contains("runs"))
    for (auto& r : o["runs"]) r = absolute_input(r.get<std::string>()).string();
  if (o["out"].is_string()) o["out"] = resolve_out(o["out"]).string();

  if (cmd.stochastic && o["seed"].is_null()) throw UsageError("--seed is required for " + cmd.name);
  if (cmd.out_required && o["out"].is_null()) throw UsageError("--out is required for " + cmd.name);
  if (o["jobs"].get<std::uint64_t>() < 1) throw UsageError("--jobs must be at least 1");
  if (o["deterministic"].get<bool>()) o["jobs"] = 1;
  for (const char* req : {"corpus", "run", "samples", "refs", "grammar"})
    if (o.contains(req) && o[req].is_null()) throw UsageError("--" + std::string(req) + " is required for " + cmd.name);

  if (training) {
    json t = o.contains("trainer") && o["trainer"].is_object() ? o["trainer"] : json::object();
    // Explicit flags override a nested trainer object; defaults only fill gaps.
    for (const auto& s : specs) {
      if (s.trainer_key.empty() || o[s.name].is_null()) continue;
      const json::json_pointer ptr(s.trainer_key);
      if (given.count(s.name) || !t.contains(ptr)) t[ptr] = o[s.name];
    }
    t["seed"] = o["seed"];
    t["deterministic"] = o["deterministic"];
    if (cmd.name == "pretrain") {
      const std::string m = t.value("mode", "TF");
      if (m != "TF" && m != "SS") throw UsageError("pretrain supports --mode TF or SS, got " + m);
    }
    OwnedString res;
    check(memr_resolve_train_config(t.dump().c_str(), &res.p));
    o["trainer"] = json::parse(res.str());
    // Individual trainer flags are folded into "trainer"; keep only that copy.
    for (const auto& s : specs)
      if (!s.trainer_key.empty()) o.erase(s.name);
  }
  return o;
}

void prepare_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw RuntimeError(dir.string() + " exists and is not a directory", kExitRuntime);
    if (!fs::is_empty(dir)) {
      if (!force) throw RuntimeError(dir.string() + " already exists; pass --force to overwrite", kExitRuntime);
      fs::remove_all(dir);
    }
  }
  fs::create_directories(dir);
}

std::vector<std::string> list_artifacts(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "manifest.json")
      out.push_back(fs::relative(e.path(), dir).generic_string());
  std::sort(out.begin(), out.end());
  return out;
}

int dispatch(const Context& c) {
  if (c.command == "make-corpus") return run_make_corpus(c);
  if (c.command == "pretrain") return run_training(c, true);
  if (c.command == "train") return run_training(c, false);
  if (c.command == "generate") return run_generate(c);
  if (c.command == "eval-bleu") return run_eval_bleu(c);
  if (c.command == "eval-completion") return run_eval_completion(c);
  if (c.command == "eval-kl") return run_eval_kl(c);
  if (c.command == "gradcheck") return run_gradcheck(c);
  return run_report(c);
}

}  // namespace

int main(int argc, char** argv) {
  const auto cmds = commands();
  CLI::App app{"Actor-critic text generation with multi-entropy sampling and multi-range rewards"};
  app.set_version_flag("--version", std::string(memr_version()));
  app.require_subcommand(1);

  std::map<std::string, Parsed> parsed;
  std::map<std::string, std::vector<OptSpec>> specs;
  for (const auto& cmd : cmds) {
    auto* sub = app.add_subcommand(cmd.name, cmd.help);
    auto& p = parsed[cmd.name];
    auto& sp = specs[cmd.name];
    sp = cmd.opts;
    for (auto& o : common_opts(cmd)) sp.push_back(o);
    for (const auto& s : sp) {
      std::string help = s.help;
      if (!s.def.is_null() && !(s.kind == Kind::Str && s.def == "")) help += " [" + s.def.dump() + "]";
      if (s.kind == Kind::Bool) {
        sub->add_flag("--" + s.name, p.flags[s.name], help);
      } else {
        sub->add_option("--" + s.name, p.values[s.name], help);
      }
    }
    sub->add_option("--config", p.config, "JSON file of option values (flags win)");
    sub->add_option("--manifest", p.manifest, "rerun from a manifest.json (flags win)");
    sub->add_flag("--force", p.force, "replace an existing output directory");
    if (cmd.name == "report") sub->add_option("runs", p.runs, "run directories");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n";
    auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    std::cerr << sub->help();
    return kExitUsage;
  }

  const auto* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  const Command& cmd = *std::find_if(cmds.begin(), cmds.end(), [&](const Command& c) { return c.name == name; });
  Parsed& p = parsed[name];
  // CLI11 leaves untouched strings empty; only options actually given count.
  for (auto it = p.values.begin(); it != p.values.end();)
    it = sub->get_option("--" + it->first)->count() == 0 ? p.values.erase(it) : std::next(it);

  Context ctx;
  ctx.command = name;
  fs::path manifest_path;
  json manifest;
  try {
    json manifest_options;
    if (!p.manifest.empty()) {
      const json m = read_json_file(absolute_input(p.manifest), "manifest");
      if (m.value("subcommand", "") != name)
        throw UsageError("manifest is for '" + m.value("subcommand", "") + "', not '" + name + "'");
      manifest_options = m.at("options");
    }
    ctx.options = resolve(cmd, specs[name], p, p.manifest.empty() ? nullptr : &manifest_options);
    if (ctx.options["out"].is_string()) ctx.out = fs::path(ctx.options["out"].get<std::string>());

    if (ctx.out) {
      prepare_dir(*ctx.out, p.force);
      manifest_path = *ctx.out / "manifest.json";
      manifest = {{"tool", "memr"},
                  {"version", memr_version()},
                  {"subcommand", name},
                  {"options", ctx.options},
                  {"seed", ctx.options.contains("seed") ? ctx.options["seed"] : json(nullptr)},
                  {"out", ctx.out->string()},
                  {"started", now_iso()},
                  {"finished", nullptr},
                  {"state", "running"},
                  {"exit_status", nullptr},
                  {"artifacts", json::array()}};
      write_text(manifest_path, manifest.dump(2) + "\n");
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << sub->help();
    return kExitUsage;
  } catch (const RuntimeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }

  int code = kExitOk;
  std::string error;
  try {
    code = dispatch(ctx);
  } catch (const UsageError& e) {
    error = e.what();
    code = kExitUsage;
  } catch (const RuntimeError& e) {
    error = e.what();
    code = e.exit_code;
  } catch (const std::exception& e) {
    error = e.what();
    code = kExitRuntime;
  }
  if (!error.empty()) std::cerr << "error: " << error << '\n';

  if (ctx.out) {
    try {
      manifest["finished"] = now_iso();
      manifest["exit_status"] = code;
      manifest["state"] = code == kExitOk ? "complete" : "failed";
      if (!error.empty()) manifest["error"] = error;
      manifest["artifacts"] = list_artifacts(*ctx.out);
      write_text(manifest_path, manifest.dump(2) + "\n");
    } catch (const std::exception& e) {
      std::cerr << "error: cannot finalize manifest: " << e.what() << '\n';
      if (code == kExitOk) code = kExitRuntime;
    }
  }
  return code;
}
