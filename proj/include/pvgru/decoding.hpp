#pragma once

// Greedy and beam-search generation over any incremental step model.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <span>
#include <utility>
#include <vector>

#include "pvgru/model.hpp"

namespace pvgru {

/// An incremental scorer: start() yields a one-row state, step() consumes one
/// token per row and returns next-token logits [rows x V] with the advanced
/// state, select() gathers state rows (beam reordering).
template <class M>
concept StepModel = requires(M& m, const typename M::State& s, std::span<const int> tokens,
                             std::span<const std::size_t> rows) {
  { m.start() } -> std::same_as<typename M::State>;
  { m.step(s, tokens) } -> std::same_as<std::pair<Tensor, typename M::State>>;
  { m.select(s, rows) } -> std::same_as<typename M::State>;
  { m.vocab_size() } -> std::convertible_to<std::size_t>;
};

struct DecodeOptions {
  std::size_t max_len = 50;
  std::size_t beam = 5;
  double length_norm = 0.0;
  int bos = Vocab::kBos;
  int eos = Vocab::kEos;
};

struct Hypothesis {
  std::vector<int> tokens;  // without BOS/EOS
  double log_prob = 0.0;    // includes the EOS step when finished
  bool finished = false;

  double score(double length_norm) const {
    if (length_norm == 0.0) return log_prob;
    const double len = static_cast<double>(std::max<std::size_t>(1, tokens.size() + (finished ? 1 : 0)));
    return log_prob / std::pow(len, length_norm);
  }
};

namespace detail {

inline std::size_t argmax_lowest(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i)
    if (row[i] > row[best]) best = i;
  return best;
}

inline void check_logits(const Tensor& logits, std::size_t rows, std::size_t vocab) {
  if (logits.rank() != 2 || logits.rows() != rows || logits.cols() != vocab) {
    throw DimensionError("decoder step returned logits " + shape_string(logits.shape()) + ", expected [" +
                         std::to_string(rows) + "x" + std::to_string(vocab) + "]");
  }
}

}  // namespace detail

template <StepModel M>
Hypothesis greedy_decode(M& model, const DecodeOptions& opt) {
  if (opt.max_len == 0) throw std::invalid_argument("greedy_decode: max_len must be at least 1");
  const std::size_t V = model.vocab_size();
  auto state = model.start();
  Hypothesis hyp;
  int token = opt.bos;
  for (std::size_t t = 0; t < opt.max_len; ++t) {
    auto [logits, next] = model.step(state, std::span<const int>(&token, 1));
    detail::check_logits(logits, 1, V);
    Tensor logp = log_softmax_rows(logits);
    const std::size_t best = detail::argmax_lowest(logp.values());
    hyp.log_prob += logp[best];
    if (static_cast<int>(best) == opt.eos) {
      hyp.finished = true;
      break;
    }
    token = static_cast<int>(best);
    hyp.tokens.push_back(token);
    state = std::move(next);
  }
  return hyp;
}

/// Beam search with a shrinking beam: every hypothesis that emits EOS is retired
/// to the finished pool and reduces the live width by one. Returns all retired and
/// surviving hypotheses ranked by score / length^length_norm, ties broken by
/// lexicographic token order.
template <StepModel M>
std::vector<Hypothesis> beam_search(M& model, const DecodeOptions& opt) {
  if (opt.beam == 0) throw std::invalid_argument("beam_search: beam must be at least 1");
  if (opt.max_len == 0) throw std::invalid_argument("beam_search: max_len must be at least 1");
  const std::size_t V = model.vocab_size();

  struct Candidate {
    std::size_t parent;
    int token;
    double log_prob;
  };

  std::vector<Hypothesis> live(1), pool;
  auto state = model.start();
  for (std::size_t t = 0; t < opt.max_len && !live.empty() && pool.size() < opt.beam; ++t) {
    std::vector<int> last;
    for (const auto& h : live) last.push_back(h.tokens.empty() ? opt.bos : h.tokens.back());
    auto [logits, next] = model.step(state, last);
    detail::check_logits(logits, live.size(), V);
    Tensor logp = log_softmax_rows(logits);

    std::vector<Candidate> cands;
    cands.reserve(live.size() * V);
    for (std::size_t i = 0; i < live.size(); ++i)
      for (std::size_t w = 0; w < V; ++w) cands.push_back({i, static_cast<int>(w), live[i].log_prob + logp.at(i, w)});
    auto before = [&](const Candidate& a, const Candidate& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      const auto& ta = live[a.parent].tokens;
      const auto& tb = live[b.parent].tokens;
      if (ta != tb) return ta < tb;
      return a.token < b.token;
    };
    const std::size_t width = std::min(opt.beam - pool.size(), cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(width), cands.end(), before);

    std::vector<Hypothesis> survivors;
    std::vector<std::size_t> rows;
    for (std::size_t c = 0; c < width; ++c) {
      const auto& cand = cands[c];
      Hypothesis h = live[cand.parent];
      h.log_prob = cand.log_prob;
      if (cand.token == opt.eos) {
        h.finished = true;
        pool.push_back(std::move(h));
      } else {
        h.tokens.push_back(cand.token);
        survivors.push_back(std::move(h));
        rows.push_back(cand.parent);
      }
    }
    live = std::move(survivors);
    if (!live.empty()) state = model.select(next, rows);
  }
  for (auto& h : live) pool.push_back(std::move(h));
  std::stable_sort(pool.begin(), pool.end(), [&](const Hypothesis& a, const Hypothesis& b) {
    const double sa = a.score(opt.length_norm), sb = b.score(opt.length_norm);
    if (sa != sb) return sa > sb;
    return a.tokens < b.tokens;
  });
  return pool;
}

/// Sum of next-token log-probabilities along a fixed token path (EOS appended
/// when finished); used to score decoded outputs consistently.
template <StepModel M>
double sequence_log_prob(M& model, const std::vector<int>& tokens, bool finished, const DecodeOptions& opt) {
  auto state = model.start();
  double total = 0.0;
  int prev = opt.bos;
  const std::size_t n = tokens.size() + (finished ? 1 : 0);
  for (std::size_t t = 0; t < n; ++t) {
    auto [logits, next] = model.step(state, std::span<const int>(&prev, 1));
    Tensor logp = log_softmax_rows(logits);
    const int target = t < tokens.size() ? tokens[t] : opt.eos;
    total += logp[static_cast<std::size_t>(target)];
    prev = target;
    state = std::move(next);
  }
  return total;
}

/// Adapts a trained model to StepModel for one dialogue context. In sample
/// mode the sampler draws one noise row per step shared by every hypothesis,
/// unless shared_noise is off.
class ModelDecoder {
 public:
  struct State {
    std::vector<Tensor> h;  // per decoder layer [rows x d_h]
    std::vector<Tensor> v;
  };

  ModelDecoder(const Model& model, const std::vector<std::vector<int>>& context, Sampler sampler,
               bool shared_noise = true)
      : model_(model), sampler_(sampler) {
    if (context.empty()) throw std::invalid_argument("generate: empty context");
    sampler_.shared_rows = shared_noise;
    EncodedDialogue e;
    e.context = context;
    std::vector<EncodedDialogue> data{e};
    const std::size_t row = 0;
    Batch batch = make_batch(data, std::span<const std::size_t>(&row, 1));
    Tape tape;
    tape.set_recording(false);
    BoundModel m(tape, model_);
    ContextEncoding ce = encode_batch_context(m, batch, sampler_);
    init_h_ = ce.decoder_init.h.value();
    if (ce.decoder_init.v) init_v_ = ce.decoder_init.v.value();
  }

  State start() const {
    State s;
    for (std::size_t l = 0; l < model_.weights.decoder.size(); ++l) {
      s.h.push_back(init_h_);
      s.v.push_back(init_v_);
    }
    return s;
  }

  std::pair<Tensor, State> step(const State& s, std::span<const int> tokens) {
    Tape tape;
    tape.set_recording(false);
    BoundModel m(tape, model_);
    for (int id : tokens)
      if (id < 0 || static_cast<std::size_t>(id) >= model_.config.vocab_size) {
        throw IndexError("decoder token " + std::to_string(id) + " outside vocabulary");
      }
    Var x = embedding_lookup(m.w.embedding, tokens);
    State out;
    for (std::size_t l = 0; l < m.w.decoder.size(); ++l) {
      StepState prev;
      prev.h = tape.constant(s.h[l]);
      if (!s.v[l].empty()) prev.v = tape.constant(s.v[l]);
      StepState ns = cell_step(model_.config.cell, x, prev, m.w.decoder[l].cell, sampler_);
      out.h.push_back(ns.h.value());
      out.v.push_back(ns.v ? ns.v.value() : Tensor());
      x = ns.h;
    }
    return {output_logits(m, x).value(), std::move(out)};
  }

  State select(const State& s, std::span<const std::size_t> rows) const {
    auto pick = [&](const Tensor& t) {
      if (t.empty()) return Tensor();
      Tensor r(Shape{rows.size(), t.cols()});
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t c = 0; c < t.cols(); ++c) r.at(i, c) = t.at(rows[i], c);
      return r;
    };
    State out;
    for (std::size_t l = 0; l < s.h.size(); ++l) {
      out.h.push_back(pick(s.h[l]));
      out.v.push_back(pick(s.v[l]));
    }
    return out;
  }

  std::size_t vocab_size() const { return model_.config.vocab_size; }

 private:
  const Model& model_;
  Sampler sampler_;
  Tensor init_h_;
  Tensor init_v_;
};

static_assert(StepModel<ModelDecoder>);

/// Best response for one context: the greedy path or the top beam hypothesis.
inline std::vector<int> generate_response(const Model& model, const std::vector<std::vector<int>>& context,
                                          const DecodeOptions& opt, bool greedy, Sampler sampler) {
  ModelDecoder dec(model, context, sampler);
  if (greedy) return greedy_decode(dec, opt).tokens;
  return beam_search(dec, opt).front().tokens;
}

}  // namespace pvgru
