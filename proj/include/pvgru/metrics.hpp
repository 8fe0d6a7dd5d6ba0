#pragma once

// Automatic response-quality metrics and paired bootstrap significance.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "pvgru/corpus.hpp"
#include "pvgru/model.hpp"

namespace pvgru {

struct EvalPair {
  Tokens hypothesis;
  Tokens reference;
};

namespace detail {

inline std::map<Tokens, std::size_t> ngram_counts(const Tokens& s, std::size_t n) {
  std::map<Tokens, std::size_t> counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++counts[Tokens(s.begin() + i, s.begin() + i + n)];
  return counts;
}

inline std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace detail

/// Corpus BLEU over orders 1..n: clipped n-gram precisions (add-one smoothed for
/// orders >= 2), geometric mean, brevity penalty.
inline double bleu_n(const std::vector<EvalPair>& pairs, std::size_t n) {
  if (pairs.empty()) throw std::invalid_argument("bleu: empty corpus");
  if (n < 1 || n > 2) throw std::invalid_argument("bleu: order must be 1 or 2, got " + std::to_string(n));
  std::size_t hyp_len = 0, ref_len = 0;
  std::vector<double> matched(n + 1, 0.0), total(n + 1, 0.0);
  for (const auto& p : pairs) {
    hyp_len += p.hypothesis.size();
    ref_len += p.reference.size();
    for (std::size_t k = 1; k <= n; ++k) {
      auto hc = detail::ngram_counts(p.hypothesis, k);
      auto rc = detail::ngram_counts(p.reference, k);
      for (const auto& [gram, c] : hc) {
        total[k] += static_cast<double>(c);
        auto it = rc.find(gram);
        if (it != rc.end()) matched[k] += static_cast<double>(std::min(c, it->second));
      }
    }
  }
  if (hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    const double p = k == 1 ? matched[k] / total[k] : (matched[k] + 1.0) / (total[k] + 1.0);
    if (p == 0.0) return 0.0;
    log_sum += std::log(p);
  }
  const double bp = hyp_len >= ref_len ? 1.0
                                       : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return bp * std::exp(log_sum / static_cast<double>(n));
}

constexpr double kRougeBeta = 1.2;

/// LCS-based F-measure of one pair.
inline double rouge_l_pair(const Tokens& hypothesis, const Tokens& reference, double beta = kRougeBeta) {
  if (reference.empty()) throw std::invalid_argument("rouge_l: empty reference");
  if (hypothesis.empty()) return 0.0;
  const double lcs = static_cast<double>(detail::lcs_length(hypothesis, reference));
  const double r = lcs / static_cast<double>(reference.size());
  const double p = lcs / static_cast<double>(hypothesis.size());
  if (r == 0.0 && p == 0.0) return 0.0;
  const double b2 = beta * beta;
  return (1.0 + b2) * r * p / (r + b2 * p);
}

inline double rouge_l(const std::vector<EvalPair>& pairs, double beta = kRougeBeta) {
  if (pairs.empty()) throw std::invalid_argument("rouge_l: empty corpus");
  double s = 0.0;
  for (const auto& p : pairs) s += rouge_l_pair(p.hypothesis, p.reference, beta);
  return s / static_cast<double>(pairs.size());
}

/// Unique n-grams across all hypotheses divided by total generated tokens.
inline double distinct_n(const std::vector<Tokens>& hypotheses, std::size_t n) {
  if (n < 1 || n > 2) throw std::invalid_argument("distinct: order must be 1 or 2, got " + std::to_string(n));
  std::set<Tokens> unique;
  std::size_t tokens = 0;
  for (const auto& h : hypotheses) {
    tokens += h.size();
    for (std::size_t i = 0; i + n <= h.size(); ++i) unique.insert(Tokens(h.begin() + i, h.begin() + i + n));
  }
  if (tokens == 0) return 0.0;
  return static_cast<double>(unique.size()) / static_cast<double>(tokens);
}

// ---------------------------------------------------------------------------
// Perplexity

struct NllTotals {
  double nll = 0.0;
  std::size_t tokens = 0;
};

/// Teacher-forced summed token NLL in mean mode with v_0 = 0.
inline NllTotals corpus_nll(const Model& model, const std::vector<Batch>& batches) {
  NllTotals t;
  LossWeights ll_only;
  ll_only.use_reconstruction = false;
  ll_only.use_consistency = false;
  for (const auto& b : batches) {
    Tape tape;
    tape.set_recording(false);
    BoundModel m(tape, model);
    Sampler s = Sampler::mean();
    s.zero_initial_v = true;
    ForwardResult fr = forward_train(m, b, ll_only, s);
    for (double v : fr.ll_per_example.value().values()) t.nll += v;
    t.tokens += fr.target_tokens;
  }
  return t;
}

inline double perplexity(const NllTotals& t) {
  if (t.tokens == 0) throw std::invalid_argument("perplexity: no valid target tokens");
  return std::exp(t.nll / static_cast<double>(t.tokens));
}

inline double perplexity(const Model& model, const std::vector<Batch>& batches) {
  return perplexity(corpus_nll(model, batches));
}

// ---------------------------------------------------------------------------
// Embedding-based metrics

/// Word -> unit-norm vector table.
class WordVectors {
 public:
  explicit WordVectors(std::size_t dim = 0) : dim_(dim) {}

  void add(const std::string& word, std::vector<double> v) {
    if (dim_ == 0) dim_ = v.size();
    if (v.size() != dim_) {
      throw DimensionError("word vector for '" + word + "' has " + std::to_string(v.size()) + " dims, expected " +
                           std::to_string(dim_));
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0)
      for (double& x : v) x /= norm;
    table_[word] = std::move(v);
  }

  const std::vector<double>* find(const std::string& word) const {
    auto it = table_.find(word);
    return it == table_.end() ? nullptr : &it->second;
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return table_.size(); }
  bool empty() const { return table_.empty(); }

  /// Plain-text "word v1 ... vd" per line.
  static WordVectors load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open word vectors " + path);
    WordVectors wv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::istringstream is(line);
      std::string word;
      if (!(is >> word)) continue;
      std::vector<double> v;
      double x;
      while (is >> x) v.push_back(x);
      if (!is.eof() || v.empty()) throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed vector");
      wv.add(word, std::move(v));
    }
    if (wv.empty()) throw std::runtime_error(path + ": no word vectors");
    return wv;
  }

  /// Deterministic random table for the given words.
  static WordVectors random(const std::vector<std::string>& words, std::size_t dim, std::uint64_t seed) {
    WordVectors wv(dim);
    Rng rng(seed);
    for (const auto& w : words) {
      Tensor t = rng.normal(Shape{dim});
      wv.add(w, std::vector<double>(t.values().begin(), t.values().end()));
    }
    return wv;
  }

 private:
  std::size_t dim_;
  std::unordered_map<std::string, std::vector<double>> table_;
};

struct EmbeddingScores {
  double average = 0.0;
  double extrema = 0.0;
  double greedy = 0.0;
};

struct EmbeddingReport {
  EmbeddingScores mean;
  std::vector<EmbeddingScores> per_pair;  // scored pairs only
  std::vector<std::size_t> scored_index;  // index of each scored pair
  std::size_t skipped = 0;                // pairs with an all-OOV side
};

namespace detail {

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ab += a[i] * b[i], aa += a[i] * a[i], bb += b[i] * b[i];
  if (aa == 0 || bb == 0) return 0.0;
  return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}

inline std::vector<const std::vector<double>*> lookup(const Tokens& s, const WordVectors& wv) {
  std::vector<const std::vector<double>*> out;
  for (const auto& w : s)
    if (auto* v = wv.find(w)) out.push_back(v);
  return out;
}

inline std::vector<double> mean_vector(const std::vector<const std::vector<double>*>& vs, std::size_t dim) {
  std::vector<double> m(dim, 0.0);
  for (auto* v : vs)
    for (std::size_t i = 0; i < dim; ++i) m[i] += (*v)[i];
  for (double& x : m) x /= static_cast<double>(vs.size());
  return m;
}

inline std::vector<double> extrema_vector(const std::vector<const std::vector<double>*>& vs, std::size_t dim) {
  std::vector<double> e(dim, 0.0);
  for (auto* v : vs)
    for (std::size_t i = 0; i < dim; ++i)
      if (std::abs((*v)[i]) > std::abs(e[i])) e[i] = (*v)[i];
  return e;
}

inline double greedy_direction(const std::vector<const std::vector<double>*>& a,
                               const std::vector<const std::vector<double>*>& b) {
  double s = 0.0;
  for (auto* x : a) {
    double best = -1.0;
    for (auto* y : b) best = std::max(best, cosine(*x, *y));
    s += best;
  }
  return s / static_cast<double>(a.size());
}

}  // namespace detail

/// Average, extrema and (symmetric) greedy matching scores of one pair;
/// false when either side has no known word.
inline bool embedding_scores(const Tokens& hyp, const Tokens& ref, const WordVectors& wv, EmbeddingScores& out) {
  auto a = detail::lookup(hyp, wv);
  auto b = detail::lookup(ref, wv);
  if (a.empty() || b.empty()) return false;
  const std::size_t d = wv.dim();
  out.average = detail::cosine(detail::mean_vector(a, d), detail::mean_vector(b, d));
  out.extrema = detail::cosine(detail::extrema_vector(a, d), detail::extrema_vector(b, d));
  out.greedy = 0.5 * (detail::greedy_direction(a, b) + detail::greedy_direction(b, a));
  return true;
}

inline EmbeddingReport embedding_metrics(const std::vector<EvalPair>& pairs, const WordVectors& wv) {
  if (wv.empty()) throw std::invalid_argument("embedding_metrics: empty word vectors");
  EmbeddingReport rep;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    EmbeddingScores s;
    if (!embedding_scores(pairs[i].hypothesis, pairs[i].reference, wv, s)) {
      ++rep.skipped;
      continue;
    }
    rep.per_pair.push_back(s);
    rep.scored_index.push_back(i);
    rep.mean.average += s.average;
    rep.mean.extrema += s.extrema;
    rep.mean.greedy += s.greedy;
  }
  if (!rep.per_pair.empty()) {
    const double n = static_cast<double>(rep.per_pair.size());
    rep.mean.average /= n;
    rep.mean.extrema /= n;
    rep.mean.greedy /= n;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Significance

/// Two-sided paired bootstrap. f is the fraction of resamples whose mean
/// difference (a - b) is positive, counting exact ties as one half;
/// p = 2 min(f, 1 - f).
inline double paired_significance(const std::vector<double>& scores_a, const std::vector<double>& scores_b,
                                  std::size_t resamples, std::uint64_t seed) {
  if (scores_a.size() != scores_b.size()) {
    throw std::invalid_argument("paired_significance: " + std::to_string(scores_a.size()) + " vs " +
                                std::to_string(scores_b.size()) + " scores");
  }
  if (scores_a.empty()) throw std::invalid_argument("paired_significance: no scores");
  if (resamples < 100) throw std::invalid_argument("paired_significance: need at least 100 resamples");
  const std::size_t n = scores_a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = scores_a[i] - scores_b[i];
  Rng rng(seed);
  double positive = 0.0;
  for (std::size_t r = 0; r < resamples; ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += d[rng.index(n)];
    if (s > 0) positive += 1.0;
    else if (s == 0) positive += 0.5;
  }
  const double f = positive / static_cast<double>(resamples);
  return 2.0 * std::min(f, 1.0 - f);
}

}  // namespace pvgru
