#include "memr/memr.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <new>
#include <set>
#include <string>
#include <unordered_map>

#include <json.hpp>

#include "memr/actor.hpp"
#include "memr/corpus.hpp"
#include "memr/error.hpp"
#include "memr/evalharness.hpp"
#include "memr/gradcheck.hpp"
#include "memr/metrics.hpp"
#include "memr/report.hpp"
#include "memr/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace memr;

struct memr_model {
  ActorParams actor;
  Vocabulary vocab;
  TrainConfig config;
};

namespace {

thread_local std::string g_last_error;

memr_status to_status(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidArgument: return MEMR_ERR_INVALID_ARGUMENT;
    case ErrorCode::Domain: return MEMR_ERR_DOMAIN;
    case ErrorCode::Shape: return MEMR_ERR_SHAPE;
    case ErrorCode::Io: return MEMR_ERR_IO;
    case ErrorCode::Numeric: return MEMR_ERR_NUMERIC;
    case ErrorCode::Contract: return MEMR_ERR_CONTRACT;
    case ErrorCode::Exists: return MEMR_ERR_EXISTS;
  }
  return MEMR_ERR_INTERNAL;
}

template <class F>
memr_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return MEMR_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const json::exception& e) {
    g_last_error = std::string("malformed options: ") + e.what();
    return MEMR_ERR_INVALID_ARGUMENT;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return MEMR_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return MEMR_ERR_INTERNAL;
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.data(), s.size() + 1);
  return out;
}

void put(char** out, const std::string& s) {
  if (out) *out = dup_string(s);
}

json parse_options(const char* text, std::initializer_list<const char*> allowed) {
  json j = (text && *text) ? json::parse(text) : json::object();
  require(j.is_object(), ErrorCode::InvalidArgument, "options must be a JSON object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items()) require(ok.count(k) > 0, ErrorCode::InvalidArgument, "unknown option '" + k + "'");
  return j;
}

std::uint64_t required_seed(const json& j) {
  require(j.contains("seed"), ErrorCode::InvalidArgument, "a seed is required");
  return j["seed"].get<std::uint64_t>();
}

fs::path path_arg(const char* p, const char* what) {
  require(p && *p, ErrorCode::InvalidArgument, std::string(what) + " path is required");
  return fs::path(p);
}

void check_model(const memr_model* m) { require(m != nullptr, ErrorCode::InvalidArgument, "model handle is null"); }

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + p.string());
  out << text;
  require(static_cast<bool>(out), ErrorCode::Io, "write failed: " + p.string());
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot read " + p.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// Maps whitespace tokens to ids shared between both files. Blank lines are
// empty sentences (an actor may emit EOS first).
std::vector<Tokens> tokenize_file(const fs::path& p, std::unordered_map<std::string, int>& ids) {
  require(fs::exists(p), ErrorCode::Io, "no such file: " + p.string());
  std::ifstream in(p);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot read " + p.string());
  std::vector<Tokens> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    Tokens t;
    for (const auto& tok : split_tokens(line)) t.push_back(ids.emplace(tok, static_cast<int>(ids.size())).first->second);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

extern "C" {

const char* memr_last_error(void) { return g_last_error.c_str(); }

const char* memr_version(void) { return "0.1.0"; }

const char* memr_status_name(memr_status s) {
  switch (s) {
    case MEMR_OK: return "ok";
    case MEMR_ERR_INVALID_ARGUMENT: return "invalid argument";
    case MEMR_ERR_DOMAIN: return "domain error";
    case MEMR_ERR_SHAPE: return "shape mismatch";
    case MEMR_ERR_IO: return "i/o error";
    case MEMR_ERR_NUMERIC: return "numeric failure";
    case MEMR_ERR_CONTRACT: return "contract violation";
    case MEMR_ERR_EXISTS: return "already exists";
    case MEMR_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

void memr_string_free(char* s) { std::free(s); }

memr_status memr_make_corpus(const char* options_json, const char* out_dir, unsigned flags, char** result_json) {
  return guarded([&] {
    const json j = parse_options(options_json, {"seed", "n_train", "n_valid", "n_test", "alphabet", "groups", "stay",
                                                "final_stop", "stop_leak", "leak", "concentration", "t_max"});
    SyntheticCorpusOptions o;
    o.seed = required_seed(j);
    o.n_train = j.value("n_train", o.n_train);
    o.n_valid = j.value("n_valid", o.n_valid);
    o.n_test = j.value("n_test", o.n_test);
    auto& g = o.grammar;
    g.alphabet = j.value("alphabet", g.alphabet);
    g.groups = j.value("groups", g.groups);
    g.stay = j.value("stay", g.stay);
    g.final_stop = j.value("final_stop", g.final_stop);
    g.stop_leak = j.value("stop_leak", g.stop_leak);
    g.leak = j.value("leak", g.leak);
    g.concentration = j.value("concentration", g.concentration);
    g.t_max = j.value("t_max", g.t_max);
    const fs::path dir = path_arg(out_dir, "output");
    if (!(flags & MEMR_DIR_PREPARED)) prepare_out_dir(dir, flags & MEMR_FORCE);
    write_synthetic_corpus(o, dir);
    put(result_json, read_file(dir / "corpus.json"));
  });
}

memr_status memr_resolve_train_config(const char* config_json, char** resolved_json) {
  return guarded([&] {
    const json j = (config_json && *config_json) ? json::parse(config_json) : json::object();
    TrainConfig c = config_from_json(j);
    c.rollout.t_max = c.t_max;
    c.completion.t_max = c.t_max;
    c.validate();
    put(resolved_json, config_to_json(c).dump(2));
  });
}

memr_status memr_train(const char* config_json, const char* corpus_dir, const char* out_dir, unsigned flags,
                       char** result_json) {
  return guarded([&] {
    const json j = (config_json && *config_json) ? json::parse(config_json) : json::object();
    const TrainConfig config = config_from_json(j);
    RunOptions opts;
    opts.force = flags & MEMR_FORCE;
    opts.pretrain_only = flags & MEMR_PRETRAIN_ONLY;
    opts.dir_prepared = flags & MEMR_DIR_PREPARED;
    const fs::path corpus = path_arg(corpus_dir, "corpus");
    const fs::path out = path_arg(out_dir, "output");
    run_experiment(config, corpus, out, opts);
    put(result_json, read_file(out / "status.json"));
  });
}

memr_status memr_model_load(const char* run_dir, const char* checkpoint, memr_model** out) {
  return guarded([&] {
    require(out != nullptr, ErrorCode::InvalidArgument, "output handle pointer is null");
    *out = nullptr;
    const fs::path dir = path_arg(run_dir, "run directory");
    require(fs::is_directory(dir), ErrorCode::Io, "no such run directory: " + dir.string());
    fs::path ckpt;
    if (checkpoint && *checkpoint) {
      ckpt = fs::path(checkpoint);
      if (!fs::exists(ckpt)) ckpt = dir / "checkpoints" / checkpoint;
    } else {
      ckpt = dir / "checkpoints" / "actor_final.ckpt";
      if (!fs::exists(ckpt)) ckpt = dir / "checkpoints" / "actor_pretrain.ckpt";
    }
    require(fs::exists(ckpt), ErrorCode::Io, "no actor checkpoint found for " + dir.string());
    auto m = std::make_unique<memr_model>(memr_model{
        ActorParams::from_params(load_checkpoint(ckpt)), Vocabulary::load(dir / "vocab.txt"),
        config_from_json(json::parse(read_file(dir / "config.json")))});
    require(m->actor.dims().vocab == m->vocab.size(), ErrorCode::Shape,
            "checkpoint vocabulary size does not match vocab.txt");
    *out = m.release();
  });
}

void memr_model_free(memr_model* model) { delete model; }

size_t memr_model_vocab_size(const memr_model* model) { return model ? model->vocab.size() : 0; }

memr_status memr_model_generate(const memr_model* model, const char* options_json, char** text) {
  return guarded([&] {
    check_model(model);
    const json j = parse_options(options_json, {"seed", "n", "tau", "t_max", "prefix"});
    const std::uint64_t seed = required_seed(j);
    const std::size_t n = j.value("n", std::size_t{1});
    const double tau = j.value("tau", 1.0);
    const std::size_t t_max = j.value("t_max", model->config.t_max);
    require(tau > 0.0, ErrorCode::Domain, "temperature must be positive");
    require(t_max >= 1, ErrorCode::InvalidArgument, "t_max must be at least 1");
    std::vector<int> prefix;
    const std::string ptext = j.value("prefix", std::string());
    for (const auto& tok : split_tokens(ptext)) {
      const auto id = model->vocab.find(tok);
      require(id && !masked_at_sampling(*id) && *id != kEos, ErrorCode::InvalidArgument,
              "prefix token '" + tok + "' is not in the model vocabulary");
      prefix.push_back(*id);
    }
    require(prefix.size() < t_max, ErrorCode::InvalidArgument, "prefix is not shorter than t_max");
    std::vector<std::vector<int>> prefixes(n, prefix);
    std::vector<Rng> streams;
    for (std::size_t i = 0; i < n; ++i) streams.emplace_back(derive_seed(seed, "sample", {i}));
    const auto out = sample_batch(model->actor, tau, t_max, prefixes, streams);
    std::string s;
    for (const auto& sent : out) s += decode(model->vocab, sent) + '\n';
    put(text, s);
  });
}

memr_status memr_eval_bleu(const char* samples_path, const char* references_path, const char* options_json,
                           const char* out_dir, char** result_json) {
  return guarded([&] {
    const json j = parse_options(options_json, {"n", "seed", "bootstrap"});
    const std::size_t n = j.value("n", std::size_t{5});
    const std::size_t bootstrap = j.value("bootstrap", std::size_t{0});
    require(n >= 1, ErrorCode::InvalidArgument, "BLEU order must be at least 1");
    std::uint64_t seed = 0;
    if (bootstrap > 0) seed = required_seed(j);
    else seed = j.value("seed", std::uint64_t{0});
    std::unordered_map<std::string, int> ids;
    const auto samples = tokenize_file(path_arg(samples_path, "samples"), ids);
    const auto refs = tokenize_file(path_arg(references_path, "references"), ids);
    require(!samples.empty() && !refs.empty(), ErrorCode::InvalidArgument, "samples and references must be non-empty");
    const BleuReport r = bleu_report(samples, refs, n, seed, bootstrap);
    const std::string js = bleu_report_json(r);
    if (out_dir && *out_dir) {
      write_file(fs::path(out_dir) / "bleu.json", js);
      write_bleu_csv(r, fs::path(out_dir) / "bleu.csv");
    }
    put(result_json, js);
  });
}

memr_status memr_eval_completion(const memr_model* model, const char* corpus_dir, const char* options_json,
                                 const char* out_dir, char** result_json) {
  return guarded([&] {
    check_model(model);
    const json j = parse_options(options_json, {"seed", "k", "tau", "prefixes_per_k", "completions_per_prefix",
                                                "bootstrap", "order", "score_completion_only"});
    const std::uint64_t seed = required_seed(j);
    CompletionConfig c = model->config.completion;
    c.t_max = model->config.t_max;
    c.k_list = j.value("k", c.k_list);
    c.tau = j.value("tau", c.tau);
    c.prefixes_per_k = j.value("prefixes_per_k", c.prefixes_per_k);
    c.completions_per_prefix = j.value("completions_per_prefix", c.completions_per_prefix);
    c.bootstrap = j.value("bootstrap", c.bootstrap);
    c.order = j.value("order", c.order);
    c.score_completion_only = j.value("score_completion_only", c.score_completion_only);
    c.validate();
    const fs::path dir = path_arg(corpus_dir, "corpus");
    const auto train = load_corpus(dir / "train.txt", model->vocab, Split::Train, UnknownTokens::MapToUnk);
    const auto test = load_corpus(dir / "test.txt", model->vocab, Split::Test, UnknownTokens::MapToUnk);
    const std::string mode(mode_name(model->config.mode));
    std::vector<CompletionCurve> curves;
    curves.push_back(completion_sweep(model->actor, train.sentences, PrefixSource::Seen, c, seed, model->config.model, mode));
    curves.push_back(completion_sweep(model->actor, test.sentences, PrefixSource::Unseen, c, seed, model->config.model, mode));
    const auto gap = exposure_gap(curves[0], curves[1]);
    if (out_dir && *out_dir) {
      write_curves_csv(curves, fs::path(out_dir) / "completion.csv");
      write_curves_dat(curves, fs::path(out_dir) / "completion.dat");
    }
    json r{{"seed", seed}, {"tau", c.tau}, {"score_completion_only", c.score_completion_only}};
    for (const auto& curve : curves) {
      json pts = json::array();
      for (const auto& p : curve.points)
        pts.push_back({{"k", p.k}, {"bleu", p.bleu}, {"stderr", p.se}, {"n_prefixes", p.n_prefixes}});
      r[std::string(source_name(curve.source))] = pts;
    }
    r["exposure_gap"] = {{"k", gap.k}, {"gap", gap.gap}, {"stderr", gap.se}, {"mean_gap", gap.mean_gap},
                         {"mean_stderr", gap.mean_se}};
    put(result_json, r.dump(2));
  });
}

memr_status memr_eval_kl(const memr_model* model, const char* grammar_path, const char* options_json,
                         char** result_json) {
  return guarded([&] {
    check_model(model);
    const json j = parse_options(options_json, {"seed", "m", "floor", "direction"});
    const std::uint64_t seed = required_seed(j);
    KlOptions o;
    o.m = j.value("m", o.m);
    o.floor = j.value("floor", o.floor);
    const std::string dir = j.value("direction", std::string("both"));
    require(dir == "forward" || dir == "reverse" || dir == "both", ErrorCode::InvalidArgument,
            "direction must be forward, reverse or both");
    const OracleGrammar g = OracleGrammar::load(path_arg(grammar_path, "grammar"));
    json r = json::object();
    if (dir != "reverse")
      r["forward"] = json::parse(kl_json(oracle_kl(g, model->actor, model->vocab, KlDirection::Forward, o, seed)));
    if (dir != "forward")
      r["reverse"] = json::parse(kl_json(oracle_kl(g, model->actor, model->vocab, KlDirection::Reverse, o, seed)));
    put(result_json, r.dump(2));
  });
}

memr_status memr_gradcheck(uint64_t seed, int* all_pass, char** result_json) {
  return guarded([&] {
    const auto entries = run_gradcheck_suite(seed);
    bool ok = true;
    json list = json::array();
    for (const auto& e : entries) {
      const bool pass = e.max_rel_error < kGradCheckTolerance;
      ok = ok && pass;
      list.push_back({{"component", e.component}, {"max_rel_error", e.max_rel_error}, {"pass", pass}});
    }
    if (all_pass) *all_pass = ok ? 1 : 0;
    put(result_json, json{{"seed", seed}, {"tolerance", kGradCheckTolerance}, {"pass", ok}, {"components", list}}.dump(2));
  });
}

memr_status memr_report(const char* const* run_dirs, size_t n, const char* out_dir, char** result_json) {
  return guarded([&] {
    require(run_dirs != nullptr || n == 0, ErrorCode::InvalidArgument, "run directory list is null");
    std::vector<fs::path> dirs;
    for (size_t i = 0; i < n; ++i) dirs.emplace_back(path_arg(run_dirs[i], "run directory"));
    const ReportTable t = build_report(dirs);
    const std::string js = report_json(t);
    if (out_dir && *out_dir) {
      const fs::path o(out_dir);
      fs::create_directories(o);
      write_file(o / "report.txt", report_text(t));
      write_file(o / "report.csv", report_csv(t));
      write_file(o / "report.json", js);
    }
    put(result_json, js);
  });
}

}  // extern "C"
