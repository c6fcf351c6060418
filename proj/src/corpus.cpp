#include "memr/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "memr/error.hpp"

namespace memr {

namespace {

const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> r = {"<pad>", "<bos>", "<eos>", "<unk>"};
  return r;
}

void check_distribution(std::span<const double> p, const std::string& what) {
  double s = 0.0;
  for (double x : p) {
    if (!(x >= 0.0 && x <= 1.0)) fail(ErrorCode::InvalidArgument, "grammar: " + what + " has an entry outside [0,1]");
    s += x;
  }
  if (std::abs(s - 1.0) > 1e-12)
    fail(ErrorCode::InvalidArgument, "grammar: " + what + " sums to " + std::to_string(s) + ", not 1");
}

void normalize(std::span<double> p) {
  double s = 0.0;
  for (double x : p) s += x;
  for (auto& x : p) x /= s;
}

std::size_t categorical(std::span<const double> p, double u) {
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return i;
  }
  for (std::size_t i = p.size(); i-- > 0;)
    if (p[i] > 0.0) return i;
  return p.size() - 1;
}

}  // namespace

Vocabulary::Vocabulary() : tokens_(reserved_tokens()) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<int>(i));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  Vocabulary v;
  for (auto& t : tokens) {
    require(!t.empty() && t.find_first_of(" \t\r\n") == std::string::npos, ErrorCode::InvalidArgument,
            "vocabulary: token '" + t + "' is empty or contains whitespace");
    const int id = static_cast<int>(v.tokens_.size());
    require(v.index_.emplace(t, id).second, ErrorCode::InvalidArgument,
            "vocabulary: duplicate or reserved token '" + t + "'");
    v.tokens_.push_back(std::move(t));
  }
  return v;
}

std::optional<int> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::id(std::string_view token) const { return find(token).value_or(kUnk); }

const std::string& Vocabulary::token(int id) const {
  require(id >= 0 && static_cast<std::size_t>(id) < tokens_.size(), ErrorCode::InvalidArgument,
          "vocabulary: id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  auto lines = read_lines(path);
  const auto& r = reserved_tokens();
  require(lines.size() >= r.size() && std::equal(r.begin(), r.end(), lines.begin()), ErrorCode::Io,
          "vocabulary " + path.string() + " does not start with the reserved tokens");
  return from_tokens(std::vector<std::string>(lines.begin() + static_cast<std::ptrdiff_t>(r.size()), lines.end()));
}

std::vector<std::string> split_tokens(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

Vocabulary build_vocab(std::span<const std::string> lines, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& line : lines)
    for (auto& tok : split_tokens(line)) ++counts[tok];
  require(!counts.empty(), ErrorCode::InvalidArgument, "build_vocab: empty corpus");
  std::vector<std::pair<std::string, std::size_t>> items;
  const auto& reserved = reserved_tokens();
  for (auto& [tok, n] : counts)
    if (n >= min_count && std::find(reserved.begin(), reserved.end(), tok) == reserved.end()) items.emplace_back(tok, n);
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  tokens.reserve(items.size());
  for (auto& [tok, n] : items) tokens.push_back(tok);
  return Vocabulary::from_tokens(std::move(tokens));
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "train";
}

Sentence encode(const Vocabulary& vocab, std::string_view line, UnknownTokens policy) {
  Sentence s;
  for (const auto& tok : split_tokens(line)) {
    auto id = vocab.find(tok);
    if (!id || *id < kReservedIds) {
      if (policy == UnknownTokens::Error) fail(ErrorCode::InvalidArgument, "token '" + tok + "' is not in the vocabulary");
      s.push_back(kUnk);
    } else {
      s.push_back(*id);
    }
  }
  s.push_back(kEos);
  return s;
}

std::vector<int> surface(std::span<const int> sentence) {
  std::vector<int> out;
  for (int id : sentence) {
    if (id == kEos) break;
    if (id == kPad || id == kBos) continue;
    out.push_back(id);
  }
  return out;
}

std::string decode(const Vocabulary& vocab, std::span<const int> sentence) {
  std::string out;
  for (int id : surface(sentence)) {
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (split_tokens(line).empty())
      fail(ErrorCode::Io, path.string() + ":" + std::to_string(lineno) + ": blank line");
    lines.push_back(std::move(line));
  }
  require(!lines.empty(), ErrorCode::Io, path.string() + ": empty file");
  return lines;
}

Corpus load_corpus(const std::filesystem::path& path, const Vocabulary& vocab, Split split, UnknownTokens policy) {
  const auto lines = read_lines(path);
  Corpus c;
  c.split = split;
  c.sentences.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      c.sentences.push_back(encode(vocab, lines[i], policy));
    } catch (const Error& e) {
      fail(ErrorCode::Io, path.string() + ":" + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return c;
}

void save_corpus(const Corpus& corpus, const Vocabulary& vocab, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write corpus " + path.string());
  for (std::size_t i = 0; i < corpus.sentences.size(); ++i) {
    const std::string line = decode(vocab, corpus.sentences[i]);
    require(!line.empty(), ErrorCode::InvalidArgument, "save_corpus: sentence " + std::to_string(i) + " is empty");
    out << line << '\n';
  }
  require(static_cast<bool>(out), ErrorCode::Io, "failed writing corpus " + path.string());
}

// ---------------------------------------------------------------------------
// Oracle grammar

OracleGrammar::OracleGrammar(std::vector<std::string> alphabet, std::vector<double> initial,
                             std::vector<double> transitions, std::vector<double> stop, std::size_t t_max,
                             std::uint64_t seed)
    : alphabet_(std::move(alphabet)),
      initial_(std::move(initial)),
      transitions_(std::move(transitions)),
      stop_(std::move(stop)),
      t_max_(t_max),
      seed_(seed) {
  require(!alphabet_.empty(), ErrorCode::InvalidArgument, "grammar: empty alphabet");
  require(t_max_ >= 2, ErrorCode::InvalidArgument, "grammar: t_max must be at least 2");
  for (std::size_t i = 0; i < alphabet_.size(); ++i) {
    const auto& r = reserved_tokens();
    require(std::find(r.begin(), r.end(), alphabet_[i]) == r.end(), ErrorCode::InvalidArgument,
            "grammar: symbol '" + alphabet_[i] + "' collides with a reserved token");
    require(index_.emplace(alphabet_[i], static_cast<int>(i)).second, ErrorCode::InvalidArgument,
            "grammar: duplicate symbol '" + alphabet_[i] + "'");
  }
  const std::size_t A = alphabet_.size();
  require(initial_.size() == A, ErrorCode::Shape, "grammar: initial distribution must have one entry per symbol");
  require(transitions_.size() == context_count() * A, ErrorCode::Shape, "grammar: transition tensor has wrong size");
  require(stop_.size() == context_count(), ErrorCode::Shape, "grammar: stop vector has wrong size");
}

OracleGrammar OracleGrammar::first_order(std::vector<std::string> alphabet, std::vector<double> initial,
                                         const std::vector<std::vector<double>>& transitions,
                                         std::vector<double> stop, std::size_t t_max) {
  const std::size_t A = alphabet.size();
  require(transitions.size() == A && stop.size() == A, ErrorCode::Shape, "grammar: first-order tables must be A x A");
  std::vector<double> trans((A + 1) * A * A);
  std::vector<double> stops((A + 1) * A);
  for (std::size_t p = 0; p <= A; ++p)
    for (std::size_t c = 0; c < A; ++c) {
      const std::size_t ctx = p * A + c;
      require(transitions[c].size() == A, ErrorCode::Shape, "grammar: first-order row has wrong size");
      std::copy(transitions[c].begin(), transitions[c].end(), trans.begin() + static_cast<std::ptrdiff_t>(ctx * A));
      stops[ctx] = stop[c];
    }
  return OracleGrammar(std::move(alphabet), std::move(initial), std::move(trans), std::move(stops), t_max);
}

std::size_t OracleGrammar::context(int prev, int cur) const {
  const auto A = static_cast<int>(alphabet_.size());
  require(prev >= -1 && prev < A && cur >= 0 && cur < A, ErrorCode::InvalidArgument, "grammar: context out of range");
  return static_cast<std::size_t>((prev + 1) * A + cur);
}

std::span<const double> OracleGrammar::next(std::size_t ctx) const {
  const std::size_t A = alphabet_.size();
  return std::span<const double>(transitions_).subspan(ctx * A, A);
}

std::optional<int> OracleGrammar::symbol(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

bool OracleGrammar::is_first_order() const {
  const std::size_t A = alphabet_.size();
  for (std::size_t p = 1; p <= A; ++p)
    for (std::size_t c = 0; c < A; ++c) {
      const std::size_t ctx = p * A + c;
      if (stop_[ctx] != stop_[c]) return false;
      if (!std::equal(transitions_.begin() + static_cast<std::ptrdiff_t>(ctx * A),
                      transitions_.begin() + static_cast<std::ptrdiff_t>((ctx + 1) * A),
                      transitions_.begin() + static_cast<std::ptrdiff_t>(c * A)))
        return false;
    }
  return true;
}

void OracleGrammar::validate() const {
  check_distribution(initial_, "initial distribution");
  for (std::size_t ctx = 0; ctx < context_count(); ++ctx) {
    require(stop_[ctx] >= 0.0 && stop_[ctx] <= 1.0, ErrorCode::InvalidArgument,
            "grammar: stop probability of context " + std::to_string(ctx) + " outside [0,1]");
    if (stop_[ctx] < 1.0) check_distribution(next(ctx), "transition row " + std::to_string(ctx));
  }
}

Vocabulary OracleGrammar::vocabulary() const { return Vocabulary::from_tokens(alphabet_); }

namespace {
constexpr std::string_view kGrammarFormat = "memr-oracle-grammar";
constexpr int kGrammarVersion = 1;
}  // namespace

void OracleGrammar::save(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["format"] = kGrammarFormat;
  j["version"] = kGrammarVersion;
  j["order"] = 2;
  j["context_layout"] = "row (prev + 1) * A + cur; prev = -1 is sentence start";
  j["t_max"] = t_max_;
  j["seed"] = seed_;
  j["alphabet"] = alphabet_;
  j["initial"] = initial_;
  const std::size_t A = alphabet_.size();
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t ctx = 0; ctx < context_count(); ++ctx)
    rows.push_back(std::vector<double>(transitions_.begin() + static_cast<std::ptrdiff_t>(ctx * A),
                                       transitions_.begin() + static_cast<std::ptrdiff_t>((ctx + 1) * A)));
  j["transitions"] = std::move(rows);
  j["stop"] = stop_;
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write grammar " + path.string());
  out << j.dump(1) << '\n';
}

OracleGrammar OracleGrammar::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot open grammar " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    require(j.at("format").get<std::string>() == kGrammarFormat, ErrorCode::Io, "not a grammar file");
    require(j.at("version").get<int>() == kGrammarVersion, ErrorCode::Io, "unsupported grammar version");
    std::vector<double> trans;
    for (const auto& row : j.at("transitions"))
      for (double x : row) trans.push_back(x);
    OracleGrammar g(j.at("alphabet").get<std::vector<std::string>>(), j.at("initial").get<std::vector<double>>(),
                    std::move(trans), j.at("stop").get<std::vector<double>>(), j.at("t_max").get<std::size_t>(),
                    j.value("seed", std::uint64_t{0}));
    g.validate();
    return g;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Io, "malformed grammar " + path.string() + ": " + e.what());
  } catch (const Error& e) {
    fail(ErrorCode::Io, "invalid grammar " + path.string() + ": " + e.what());
  }
}

OracleGrammar random_desk_grammar(const DeskGrammarOptions& o, std::uint64_t seed) {
  require(o.alphabet >= o.groups && o.groups >= 1, ErrorCode::InvalidArgument, "desk grammar: need alphabet >= groups >= 1");
  const std::size_t A = o.alphabet, G = o.groups;
  Rng rng(derive_seed(seed, "desk-grammar"));

  auto group_of = [&](std::size_t s) { return s * G / A; };
  std::vector<std::vector<std::size_t>> members(G);
  std::vector<std::string> alphabet(A);
  for (std::size_t s = 0; s < A; ++s) {
    const std::size_t g = group_of(s);
    alphabet[s] = std::string(1, static_cast<char>('a' + g % 26)) + std::to_string(members[g].size());
    members[g].push_back(s);
  }

  auto dirichlet_over = [&](const std::vector<std::size_t>& support, std::span<double> out, double mass) {
    std::vector<double> w(support.size());
    for (auto& x : w) x = rng.gamma(o.concentration);
    double s = 0.0;
    for (double x : w) s += x;
    for (std::size_t i = 0; i < support.size(); ++i) out[support[i]] += mass * w[i] / s;
  };

  std::vector<double> initial(A, o.leak / static_cast<double>(A));
  dirichlet_over(members[0], initial, 1.0 - o.leak);
  normalize(initial);

  const std::size_t contexts = (A + 1) * A;
  std::vector<double> trans(contexts * A, 0.0);
  std::vector<double> stop(contexts, 0.0);
  for (std::size_t ctx = 0; ctx < contexts; ++ctx) {
    const std::size_t cur = ctx % A;
    const std::size_t g = group_of(cur);
    std::span<double> row(trans.data() + ctx * A, A);
    for (auto& x : row) x = o.leak / static_cast<double>(A);
    if (g + 1 < G) {
      dirichlet_over(members[g], row, (1.0 - o.leak) * o.stay);
      dirichlet_over(members[g + 1], row, (1.0 - o.leak) * (1.0 - o.stay));
      stop[ctx] = o.stop_leak;
    } else {
      dirichlet_over(members[g], row, 1.0 - o.leak);
      stop[ctx] = o.final_stop;
    }
    normalize(row);
  }
  OracleGrammar grammar(std::move(alphabet), std::move(initial), std::move(trans), std::move(stop), o.t_max, seed);
  grammar.validate();
  return grammar;
}

std::vector<int> sample_symbols(const OracleGrammar& grammar, Rng& rng) {
  for (;;) {
    std::vector<int> out;
    int prev = -1;
    int cur = static_cast<int>(categorical(grammar.initial(), rng.uniform()));
    out.push_back(cur);
    bool stopped = false;
    while (out.size() <= grammar.max_symbols()) {
      const std::size_t ctx = grammar.context(prev, cur);
      if (rng.uniform() < grammar.stop(ctx)) {
        stopped = true;
        break;
      }
      prev = cur;
      cur = static_cast<int>(categorical(grammar.next(ctx), rng.uniform()));
      out.push_back(cur);
    }
    if (stopped && out.size() <= grammar.max_symbols()) return out;
  }
}

namespace {
Sentence to_sentence(const std::vector<int>& symbols) {
  Sentence s;
  s.reserve(symbols.size() + 1);
  for (int x : symbols) s.push_back(x + kReservedIds);
  s.push_back(kEos);
  return s;
}
}  // namespace

Corpus synth_generate(const OracleGrammar& grammar, std::size_t n, std::uint64_t seed, Split split) {
  require(n > 0, ErrorCode::InvalidArgument, "synth_generate: n must be > 0");
  grammar.validate();
  Rng rng(derive_seed(seed, "synth-generate"));
  Corpus c;
  c.split = split;
  c.sentences.reserve(n);
  for (std::size_t i = 0; i < n; ++i) c.sentences.push_back(to_sentence(sample_symbols(grammar, rng)));
  return c;
}

CorpusSplits synth_splits(const OracleGrammar& grammar, std::size_t n_train, std::size_t n_valid, std::size_t n_test,
                          std::uint64_t seed) {
  require(n_train > 0 && n_valid > 0 && n_test > 0, ErrorCode::InvalidArgument, "synth_splits: split sizes must be > 0");
  grammar.validate();
  Rng rng(derive_seed(seed, "synth-splits"));
  std::set<Sentence> taken;
  CorpusSplits out;
  auto fill = [&](Corpus& c, Split split, std::size_t n) {
    c.split = split;
    std::set<Sentence> mine;
    std::size_t attempts = 0;
    while (c.sentences.size() < n) {
      require(++attempts < 1000 * n + 100000, ErrorCode::InvalidArgument,
              "synth_splits: grammar cannot supply enough distinct sentences");
      Sentence s = to_sentence(sample_symbols(grammar, rng));
      if (taken.count(s)) continue;
      mine.insert(s);
      c.sentences.push_back(std::move(s));
    }
    taken.insert(mine.begin(), mine.end());
  };
  fill(out.train, Split::Train, n_train);
  fill(out.valid, Split::Valid, n_valid);
  fill(out.test, Split::Test, n_test);
  return out;
}

double oracle_logprob_symbols(const OracleGrammar& grammar, std::span<const int> symbols) {
  require(!symbols.empty(), ErrorCode::InvalidArgument, "oracle_logprob: empty sentence");
  const auto A = static_cast<int>(grammar.alphabet_size());
  for (int x : symbols)
    require(x >= 0 && x < A, ErrorCode::InvalidArgument, "oracle_logprob: symbol " + std::to_string(x) + " outside the alphabet");
  double lp = std::log(grammar.initial()[static_cast<std::size_t>(symbols[0])]);
  int prev = -1;
  for (std::size_t t = 0; t + 1 < symbols.size(); ++t) {
    const std::size_t ctx = grammar.context(prev, symbols[t]);
    lp += std::log1p(-grammar.stop(ctx)) + std::log(grammar.next(ctx)[static_cast<std::size_t>(symbols[t + 1])]);
    prev = symbols[t];
  }
  lp += std::log(grammar.stop(grammar.context(prev, symbols.back())));
  return lp;
}

double oracle_logprob(const OracleGrammar& grammar, std::span<const int> sentence) {
  require(!sentence.empty() && sentence.back() == kEos, ErrorCode::InvalidArgument,
          "oracle_logprob: sentence must be EOS-terminated");
  std::vector<int> symbols;
  symbols.reserve(sentence.size() - 1);
  for (std::size_t i = 0; i + 1 < sentence.size(); ++i) {
    const int id = sentence[i];
    require(id >= kReservedIds && static_cast<std::size_t>(id - kReservedIds) < grammar.alphabet_size(),
            ErrorCode::InvalidArgument, "oracle_logprob: token id " + std::to_string(id) + " is outside the grammar alphabet");
    symbols.push_back(id - kReservedIds);
  }
  return oracle_logprob_symbols(grammar, symbols);
}

GrammarStats grammar_stats(const OracleGrammar& grammar) {
  const std::size_t A = grammar.alphabet_size();
  const std::size_t C = grammar.context_count();
  const std::size_t L = grammar.max_symbols();
  auto plogp = [](double p) { return p > 0.0 ? std::log(p) : 0.0; };

  // beta[t][ctx]: probability of stopping within the budget given t symbols
  // emitted and current context ctx (t = 1..L).
  std::vector<std::vector<double>> beta(L + 2, std::vector<double>(C, 0.0));
  for (std::size_t t = L; t >= 1; --t) {
    for (std::size_t ctx = 0; ctx < C; ++ctx) {
      double b = grammar.stop(ctx);
      if (t < L) {
        const std::size_t cur = ctx % A;
        const auto row = grammar.next(ctx);
        double cont = 0.0;
        for (std::size_t y = 0; y < A; ++y) cont += row[y] * beta[t + 1][(cur + 1) * A + y];
        b += (1.0 - grammar.stop(ctx)) * cont;
      }
      beta[t][ctx] = b;
    }
  }

  GrammarStats st;
  st.symbol_counts.assign(A, 0.0);
  std::vector<double> alpha(C, 0.0), next_alpha(C, 0.0);
  double elp = 0.0;
  for (std::size_t x = 0; x < A; ++x) {
    const double p = grammar.initial()[x];
    alpha[x] = p;  // context (start, x)
    st.z += p * beta[1][x];
    elp += p * beta[1][x] * plogp(p);
  }
  for (std::size_t t = 1; t <= L; ++t) {
    std::fill(next_alpha.begin(), next_alpha.end(), 0.0);
    for (std::size_t ctx = 0; ctx < C; ++ctx) {
      const double a = alpha[ctx];
      if (a == 0.0) continue;
      const std::size_t cur = ctx % A;
      const double s = grammar.stop(ctx);
      // Joint mass of histories reaching here that end within the budget.
      st.symbol_counts[cur] += a * beta[t][ctx];
      elp += a * s * plogp(s);
      if (t < L && s < 1.0) {
        const auto row = grammar.next(ctx);
        for (std::size_t y = 0; y < A; ++y) {
          if (row[y] == 0.0) continue;
          const std::size_t nctx = (cur + 1) * A + y;
          const double m = a * (1.0 - s) * row[y];
          next_alpha[nctx] += m;
          elp += m * beta[t + 1][nctx] * (std::log1p(-s) + std::log(row[y]));
        }
      }
    }
    std::swap(alpha, next_alpha);
  }
  for (auto& c : st.symbol_counts) c /= st.z;
  for (double c : st.symbol_counts) st.expected_symbols += c;
  st.expected_logprob = elp / st.z;
  st.entropy_per_sentence = -(st.expected_logprob - std::log(st.z));
  st.entropy_rate = st.entropy_per_sentence / (st.expected_symbols + 1.0);
  return st;
}

void write_synthetic_corpus(const SyntheticCorpusOptions& o, const std::filesystem::path& dir) {
  const OracleGrammar grammar = random_desk_grammar(o.grammar, derive_seed(o.seed, "grammar"));
  const CorpusSplits splits = synth_splits(grammar, o.n_train, o.n_valid, o.n_test, derive_seed(o.seed, "splits"));
  const Vocabulary vocab = grammar.vocabulary();
  save_corpus(splits.train, vocab, dir / "train.txt");
  save_corpus(splits.valid, vocab, dir / "valid.txt");
  save_corpus(splits.test, vocab, dir / "test.txt");
  grammar.save(dir / "grammar.json");
  const GrammarStats st = grammar_stats(grammar);
  nlohmann::json info{
      {"format", "memr-corpus"},
      {"version", 1},
      {"seed", o.seed},
      {"sizes", {{"train", o.n_train}, {"valid", o.n_valid}, {"test", o.n_test}}},
      {"grammar",
       {{"alphabet", o.grammar.alphabet},
        {"groups", o.grammar.groups},
        {"stay", o.grammar.stay},
        {"final_stop", o.grammar.final_stop},
        {"stop_leak", o.grammar.stop_leak},
        {"leak", o.grammar.leak},
        {"concentration", o.grammar.concentration},
        {"t_max", o.grammar.t_max}}},
      {"expected_length", st.expected_symbols},
      {"entropy_per_sentence", st.entropy_per_sentence},
      {"entropy_rate", st.entropy_rate},
      {"mass_within_t_max", st.z},
  };
  std::ofstream out(dir / "corpus.json");
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + (dir / "corpus.json").string());
  out << info.dump(2) << '\n';
}

}  // namespace memr
