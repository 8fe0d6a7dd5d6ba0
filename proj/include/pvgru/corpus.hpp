#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "pvgru/tensor.hpp"

namespace pvgru {

using Tokens = std::vector<std::string>;

struct Dialogue {
  std::vector<Tokens> context;
  Tokens response;
};

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
inline bool is_detached_punct(char c) { return c == '.' || c == ',' || c == '!' || c == '?' || c == '\''; }
}  // namespace detail

/// Lowercase whitespace split with . , ! ? ' split off as their own tokens.
inline Tokens tokenize(const std::string& text) {
  Tokens out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (detail::is_detached_punct(ch)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

/// Inverse of tokenize on normalised text: sentence punctuation attaches to the
/// preceding token, apostrophes join both neighbours.
inline std::string detokenize(const Tokens& tokens) {
  std::string out;
  bool glue_next = true;
  for (const auto& t : tokens) {
    const bool punct = t.size() == 1 && detail::is_detached_punct(t[0]);
    const bool attach_left = punct;
    if (!out.empty() && !attach_left && !glue_next) out.push_back(' ');
    out += t;
    glue_next = t == "'";
  }
  return out;
}

/// Canonical form that detokenize(tokenize(s)) reproduces.
inline std::string normalize_text(const std::string& text) { return detokenize(tokenize(text)); }

/// Reads JSON-lines records {"context": [str...], "response": str}. Blank lines
/// are skipped; utterances that tokenize to nothing are dropped.
inline std::vector<Dialogue> load_corpus_stream(std::istream& in, const std::string& name = "<stream>") {
  std::vector<Dialogue> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    auto fail = [&](const std::string& why) {
      return CorpusError(name + ":" + std::to_string(lineno) + ": " + why);
    };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw fail(std::string("malformed JSON (") + e.what() + ")");
    }
    if (!j.is_object()) throw fail("expected a JSON object");
    if (!j.contains("context") || !j["context"].is_array()) throw fail("missing \"context\" array");
    if (!j.contains("response") || !j["response"].is_string()) throw fail("missing \"response\" string");
    Dialogue d;
    for (const auto& u : j["context"]) {
      if (!u.is_string()) throw fail("context entries must be strings");
      Tokens toks = tokenize(u.get<std::string>());
      if (!toks.empty()) d.context.push_back(std::move(toks));
    }
    if (d.context.empty()) throw fail("context has no non-empty utterance");
    d.response = tokenize(j["response"].get<std::string>());
    out.push_back(std::move(d));
  }
  if (out.empty()) throw CorpusError(name + ": corpus is empty");
  return out;
}

inline std::vector<Dialogue> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open corpus file " + path);
  return load_corpus_stream(in, path);
}

/// Keeps the last max_turns utterances and the first max_tokens tokens of each
/// utterance and of the response.
inline Dialogue truncate(const Dialogue& d, std::size_t max_turns, std::size_t max_tokens) {
  Dialogue out;
  const std::size_t skip = d.context.size() > max_turns ? d.context.size() - max_turns : 0;
  for (std::size_t i = skip; i < d.context.size(); ++i) {
    const auto& u = d.context[i];
    out.context.emplace_back(u.begin(), u.begin() + static_cast<std::ptrdiff_t>(std::min(u.size(), max_tokens)));
  }
  out.response.assign(d.response.begin(),
                      d.response.begin() + static_cast<std::ptrdiff_t>(std::min(d.response.size(), max_tokens)));
  return out;
}

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kSep = 4;
  static constexpr std::size_t kReserved = 5;

  Vocab() {
    for (const char* t : {"<pad>", "<unk>", "<bos>", "<eos>", "<sep>"}) push(t);
  }

  std::size_t size() const { return id_to_token_.size(); }

  int id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
  }

  bool contains(const std::string& token) const { return token_to_id_.count(token) != 0; }

  const std::string& token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= size()) throw IndexError("vocab id " + std::to_string(id) + " out of range");
    return id_to_token_[static_cast<std::size_t>(id)];
  }

  std::vector<int> encode(const Tokens& tokens) const {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(id(t));
    return ids;
  }

  /// Tokens for ids, stopping at EOS and skipping PAD/BOS.
  Tokens decode(const std::vector<int>& ids) const {
    Tokens out;
    for (int i : ids) {
      if (i == kEos) break;
      if (i == kPad || i == kBos) continue;
      out.push_back(token(i));
    }
    return out;
  }

  void add(const std::string& token) {
    if (!contains(token)) push(token);
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw CorpusError("cannot write vocab file " + path);
    for (const auto& t : id_to_token_) out << t << '\n';
  }

  static Vocab load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CorpusError("cannot open vocab file " + path);
    Vocab v;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (lineno <= kReserved) {
        if (line != v.id_to_token_[lineno - 1]) {
          throw CorpusError(path + ":" + std::to_string(lineno) + ": expected reserved token " +
                            v.id_to_token_[lineno - 1]);
        }
        continue;
      }
      if (v.contains(line)) throw CorpusError(path + ":" + std::to_string(lineno) + ": duplicate token " + line);
      v.push(line);
    }
    if (lineno < kReserved) throw CorpusError(path + ": missing reserved tokens");
    return v;
  }

 private:
  void push(const std::string& t) {
    token_to_id_.emplace(t, static_cast<int>(id_to_token_.size()));
    id_to_token_.push_back(t);
  }

  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

/// Frequency-ranked vocabulary (ties broken lexicographically), keeping at most
/// max_size - 5 content tokens that occur at least min_count times.
inline Vocab build_vocab(const std::vector<Dialogue>& corpus, std::size_t max_size, std::size_t min_count = 1) {
  if (corpus.empty()) throw CorpusError("build_vocab: empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& d : corpus) {
    for (const auto& u : d.context)
      for (const auto& t : u) ++counts[t];
    for (const auto& t : d.response) ++counts[t];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v;
  const std::size_t room = max_size > Vocab::kReserved ? max_size - Vocab::kReserved : 0;
  std::size_t kept = 0;
  for (const auto& [tok, n] : ranked) {
    if (kept == room) break;
    if (n < min_count || v.contains(tok)) continue;
    v.add(tok);
    ++kept;
  }
  return v;
}

struct EncodedDialogue {
  std::vector<std::vector<int>> context;
  std::vector<int> response;
  std::size_t index = 0;  // position in the source corpus
};

inline EncodedDialogue encode_dialogue(const Dialogue& d, const Vocab& vocab, std::size_t index = 0) {
  EncodedDialogue e;
  for (const auto& u : d.context) e.context.push_back(vocab.encode(u));
  e.response = vocab.encode(d.response);
  e.index = index;
  return e;
}

/// Rectangular batch padded to the largest extents present. Layouts:
///   context / token_mask : [B x turns x tokens]
///   turn_mask            : [B x turns]
///   response_in / _out / response_mask : [B x steps], steps = longest response + 1,
///   response_in = BOS y_1..y_n, response_out = y_1..y_n EOS.
struct Batch {
  std::size_t size = 0;
  std::size_t turns = 0;
  std::size_t tokens = 0;
  std::size_t steps = 0;
  std::vector<int> context;
  std::vector<double> token_mask;
  std::vector<double> turn_mask;
  std::vector<int> response_in;
  std::vector<int> response_out;
  std::vector<double> response_mask;
  std::vector<std::size_t> source;  // corpus index of each row

  int context_id(std::size_t b, std::size_t turn, std::size_t tok) const {
    return context[(b * turns + turn) * tokens + tok];
  }
  std::size_t turn_count(std::size_t b) const {
    std::size_t n = 0;
    while (n < turns && turn_mask[b * turns + n] != 0.0) ++n;
    return n;
  }
  std::size_t utterance_length(std::size_t b, std::size_t turn) const {
    std::size_t n = 0;
    while (n < tokens && token_mask[(b * turns + turn) * tokens + n] != 0.0) ++n;
    return n;
  }
  std::size_t response_length(std::size_t b) const {
    std::size_t n = 0;
    while (n < steps && response_mask[b * steps + n] != 0.0) ++n;
    return n;
  }
};

inline Batch make_batch(const std::vector<EncodedDialogue>& data, std::span<const std::size_t> rows) {
  Batch b;
  b.size = rows.size();
  for (std::size_t r : rows) {
    const auto& d = data.at(r);
    b.turns = std::max(b.turns, d.context.size());
    for (const auto& u : d.context) b.tokens = std::max(b.tokens, u.size());
    b.steps = std::max(b.steps, d.response.size() + 1);
  }
  b.context.assign(b.size * b.turns * b.tokens, Vocab::kPad);
  b.token_mask.assign(b.context.size(), 0.0);
  b.turn_mask.assign(b.size * b.turns, 0.0);
  b.response_in.assign(b.size * b.steps, Vocab::kPad);
  b.response_out.assign(b.size * b.steps, Vocab::kPad);
  b.response_mask.assign(b.size * b.steps, 0.0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& d = data[rows[i]];
    b.source.push_back(d.index);
    for (std::size_t t = 0; t < d.context.size(); ++t) {
      b.turn_mask[i * b.turns + t] = 1.0;
      for (std::size_t k = 0; k < d.context[t].size(); ++k) {
        b.context[(i * b.turns + t) * b.tokens + k] = d.context[t][k];
        b.token_mask[(i * b.turns + t) * b.tokens + k] = 1.0;
      }
    }
    const std::size_t n = d.response.size();
    for (std::size_t k = 0; k <= n; ++k) {
      b.response_in[i * b.steps + k] = k == 0 ? Vocab::kBos : d.response[k - 1];
      b.response_out[i * b.steps + k] = k == n ? Vocab::kEos : d.response[k];
      b.response_mask[i * b.steps + k] = 1.0;
    }
  }
  return b;
}

/// Splits an index order into consecutive batches; the last one may be partial.
inline std::vector<Batch> batches_in_order(const std::vector<EncodedDialogue>& data,
                                           const std::vector<std::size_t>& order, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  std::vector<Batch> out;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const std::size_t n = std::min(batch_size, order.size() - i);
    out.push_back(make_batch(data, std::span<const std::size_t>(order).subspan(i, n)));
  }
  return out;
}

/// Encodes, optionally shuffles (deterministically under seed) and batches a corpus.
inline std::vector<Batch> batchify(const std::vector<Dialogue>& corpus, const Vocab& vocab, std::size_t batch_size,
                                   std::uint64_t seed, bool shuffle) {
  if (corpus.empty()) throw CorpusError("batchify: empty corpus");
  std::vector<EncodedDialogue> data;
  for (std::size_t i = 0; i < corpus.size(); ++i) data.push_back(encode_dialogue(corpus[i], vocab, i));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    std::mt19937_64 g(seed);
    std::shuffle(order.begin(), order.end(), g);
  }
  return batches_in_order(data, order, batch_size);
}

}  // namespace pvgru
