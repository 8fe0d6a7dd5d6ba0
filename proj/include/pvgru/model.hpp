#pragma once

// Dialogue architectures built from the cells:
//   seq2seq : context turns flattened into one token stream (SEP between turns)
//             -> bidirectional encoder -> decoder
//   hred    : bidirectional word-level encoder per utterance -> unidirectional
//             context cell over utterance vectors -> decoder
//   pvhd    : hred with PVGRU cells at every level
// The decoder starts from the final (h, v) of the context cell (or encoder for
// seq2seq) and is teacher-forced with BOS y_1 .. y_n.

#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "pvgru/cells.hpp"
#include "pvgru/corpus.hpp"
#include "pvgru/objectives.hpp"

namespace pvgru {

enum class Architecture { seq2seq, hred, pvhd };

inline const char* to_string(Architecture a) {
  switch (a) {
    case Architecture::seq2seq: return "seq2seq";
    case Architecture::hred: return "hred";
    case Architecture::pvhd: return "pvhd";
  }
  return "?";
}

inline Architecture parse_architecture(const std::string& s) {
  if (s == "seq2seq") return Architecture::seq2seq;
  if (s == "hred") return Architecture::hred;
  if (s == "pvhd") return Architecture::pvhd;
  throw std::invalid_argument("unknown architecture '" + s + "' (expected seq2seq, hred or pvhd)");
}

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  Architecture architecture = Architecture::pvhd;
  CellKind cell = CellKind::pvgru;
  std::size_t d_embed = 64;
  std::size_t d_hidden = 64;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 1;
  std::size_t vocab_size = 0;
  std::size_t max_turns = 10;
  std::size_t max_tokens = 50;
  bool tie_embeddings = false;
  bool use_bias = true;
  std::size_t head_depth = 1;
  bool context_input_v = false;  // feed the encoder's final v to the context cell as well

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (architecture == Architecture::pvhd && cell != CellKind::pvgru) v.push_back("cell: pvhd requires cell = pvgru");
    if (max_turns < 1) v.push_back("max_turns: must be >= 1");
    if (max_tokens < 1) v.push_back("max_tokens: must be >= 1");
    if (d_embed < 1) v.push_back("d_embed: must be >= 1");
    if (d_hidden < 1) v.push_back("d_hidden: must be >= 1");
    if (encoder_layers < 1) v.push_back("encoder_layers: must be >= 1");
    if (decoder_layers < 1) v.push_back("decoder_layers: must be >= 1");
    if (head_depth < 1) v.push_back("head_depth: must be >= 1");
    if (vocab_size <= Vocab::kReserved) v.push_back("vocab_size: must exceed the 5 reserved ids");
    if (tie_embeddings && d_embed != d_hidden) v.push_back("tie_embeddings: requires d_embed == d_hidden");
    if (context_input_v && cell != CellKind::pvgru) v.push_back("context_input_v: requires cell = pvgru");
    return v;
  }

  void validate() const {
    auto v = violations();
    if (v.empty()) return;
    std::string msg = "invalid model config:";
    for (const auto& s : v) msg += "\n  " + s;
    throw ConfigError(msg);
  }

  bool hierarchical() const { return architecture != Architecture::seq2seq; }

  /// Whether the encoder's final summarizing variable feeds a later cell
  /// (the decoder for seq2seq, the context cell with context_input_v).
  bool encoder_v_used() const { return cell == CellKind::pvgru && (!hierarchical() || context_input_v); }
};

/// One recurrent cell plus its objective heads (psi and f; pvgru only).
template <class T>
struct CellBlock {
  PvgruWeights<T> cell;
  FeedForward<T> input_dist;
  FeedForward<T> reconstruction;

  template <class Self, class F>
  static void fields(Self& s, const std::string& p, F& f) {
    for_each_param(s.cell, p, f);
    for_each_param(s.input_dist, p + "psi/", f);
    for_each_param(s.reconstruction, p + "recon/", f);
  }
  template <class F>
  auto transform(F& f) const -> CellBlock<decltype(f(cell.v_r))> {
    return {cell.transform(f), input_dist.transform(f), reconstruction.transform(f)};
  }
};

template <class T>
struct EncoderLayer {
  CellBlock<T> fwd;
  CellBlock<T> bwd;
  T proj_h;
  T proj_v;  // top layer only, and only when the encoder's final v is consumed

  template <class Self, class F>
  static void fields(Self& s, const std::string& p, F& f) {
    for_each_param(s.fwd, p + "fwd/", f);
    for_each_param(s.bwd, p + "bwd/", f);
    f(p + "proj_h", s.proj_h);
    f(p + "proj_v", s.proj_v);
  }
  template <class F>
  auto transform(F& f) const -> EncoderLayer<decltype(f(proj_h))> {
    return {fwd.transform(f), bwd.transform(f), f(proj_h), f(proj_v)};
  }
};

/// Every parameter of a model, addressable by hierarchical name via for_each_param.
template <class T>
struct ModelWeights {
  T embedding;
  std::vector<EncoderLayer<T>> encoder;
  CellBlock<T> context;
  std::vector<CellBlock<T>> decoder;
  Dense<T> output;

  template <class Self, class F>
  static void fields(Self& s, const std::string& p, F& f) {
    f(p + "embedding", s.embedding);
    for (std::size_t i = 0; i < s.encoder.size(); ++i) for_each_param(s.encoder[i], p + "encoder/" + std::to_string(i) + "/", f);
    for_each_param(s.context, p + "context/", f);
    for (std::size_t i = 0; i < s.decoder.size(); ++i) for_each_param(s.decoder[i], p + "decoder/" + std::to_string(i) + "/", f);
    for_each_param(s.output, p + "output/", f);
  }
  template <class F>
  auto transform(F& f) const -> ModelWeights<decltype(f(embedding))> {
    ModelWeights<decltype(f(embedding))> out;
    out.embedding = f(embedding);
    for (const auto& l : encoder) out.encoder.push_back(l.transform(f));
    out.context = context.transform(f);
    for (const auto& l : decoder) out.decoder.push_back(l.transform(f));
    out.output = output.transform(f);
    return out;
  }
};

/// Named view over the present (non-empty) parameter tensors.
template <class T, class F>
void for_each_present(ModelWeights<T>& w, F&& f) {
  for_each_param(w, "", [&](const std::string& name, T& t) {
    if (!t.empty()) f(name, t);
  });
}
template <class T, class F>
void for_each_present(const ModelWeights<T>& w, F&& f) {
  for_each_param(w, "", [&](const std::string& name, const T& t) {
    if (!t.empty()) f(name, t);
  });
}

inline CellBlock<Tensor> init_cell_block(CellKind kind, std::size_t d_x, std::size_t d_h, const ModelConfig& c,
                                         Rng& rng) {
  CellBlock<Tensor> b;
  if (kind == CellKind::pvgru) {
    b.cell = init_pvgru(d_x, d_h, rng, c.use_bias, c.head_depth);
    b.input_dist = init_input_dist_head(d_x, d_h, c.head_depth, rng);
    b.reconstruction = init_reconstruction_head(d_h, c.head_depth, rng);
  } else {
    b.cell.gru = init_gru(d_x, d_h, rng, c.use_bias);
  }
  return b;
}

struct Model {
  ModelConfig config;
  ModelWeights<Tensor> weights;

  static Model init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    Model m;
    m.config = config;
    const std::size_t dh = config.d_hidden, de = config.d_embed;
    auto& w = m.weights;
    w.embedding = rng.normal(Shape{config.vocab_size, de});
    for (std::size_t l = 0; l < config.encoder_layers; ++l) {
      const std::size_t dx = l == 0 ? de : dh;
      EncoderLayer<Tensor> layer;
      layer.fwd = init_cell_block(config.cell, dx, dh, config, rng);
      layer.bwd = init_cell_block(config.cell, dx, dh, config, rng);
      layer.proj_h = glorot(2 * dh, dh, rng);
      if (config.encoder_v_used() && l + 1 == config.encoder_layers) layer.proj_v = glorot(2 * dh, dh, rng);
      w.encoder.push_back(std::move(layer));
    }
    if (config.hierarchical()) {
      const std::size_t dx = config.context_input_v ? 2 * dh : dh;
      w.context = init_cell_block(config.cell, dx, dh, config, rng);
    }
    for (std::size_t l = 0; l < config.decoder_layers; ++l) {
      w.decoder.push_back(init_cell_block(config.cell, l == 0 ? de : dh, dh, config, rng));
    }
    if (!config.tie_embeddings) w.output.w = glorot(dh, config.vocab_size, rng);
    w.output.b = Tensor(Shape{config.vocab_size});
    return m;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_present(weights, [&](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
  }
};

/// Model weights bound as leaves on one tape.
struct BoundModel {
  const ModelConfig& config;
  ModelWeights<Var> w;
  Tape& tape;

  BoundModel(Tape& t, const Model& m) : config(m.config), w(bind(t, m.weights)), tape(t) {}

  static ModelWeights<Var> bind(Tape& t, const ModelWeights<Tensor>& weights) {
    Binder b{&t};
    return weights.transform(b);
  }
};

/// Gradients of every present parameter, in the same layout as the weights.
inline ModelWeights<Tensor> collect_gradients(const ModelWeights<Var>& bound, const Gradients& grads) {
  auto pick = [&](const Var& v) -> Tensor { return v ? grads[v] : Tensor(); };
  return bound.transform(pick);
}

// ---------------------------------------------------------------------------
// Encoders and decoder

/// Token rows to encode: ids are time-major [L x U], mask is [L x U].
struct TokenRows {
  std::size_t rows = 0;
  std::size_t steps = 0;
  std::vector<int> ids;
  Tensor mask;

  static TokenRows from_sequences(const std::vector<std::vector<int>>& seqs) {
    TokenRows r;
    r.rows = seqs.size();
    for (const auto& s : seqs) r.steps = std::max(r.steps, s.size());
    r.ids.assign(r.steps * r.rows, Vocab::kPad);
    r.mask = Tensor(Shape{r.steps, r.rows});
    for (std::size_t u = 0; u < r.rows; ++u)
      for (std::size_t t = 0; t < seqs[u].size(); ++t) {
        r.ids[t * r.rows + u] = seqs[u][t];
        r.mask.at(t, u) = 1.0;
      }
    return r;
  }

  std::span<const int> step_ids(std::size_t t) const { return {ids.data() + t * rows, rows}; }
};

/// A PVGRU instance's inputs and states over a sequence, tagged with its objective
/// heads and the example each row belongs to.
struct LevelTrace {
  const CellBlock<Var>* block = nullptr;
  CellTrace trace;
  std::vector<std::size_t> owner;  // row -> example
  enum class Level { encoder, context, decoder } level = Level::encoder;
};

struct EncoderOutput {
  std::vector<Var> outputs;        // top layer, per step [U x d_h]
  std::vector<Var> v_outputs;      // top layer [v_fwd ; v_bwd] per step (on request)
  StepState final;                 // [U x d_h]
  std::vector<BidirectionalResult> layers;
};

/// Embeds and runs the stacked bidirectional encoder over token rows.
inline EncoderOutput encode_utterance(BoundModel& m, const TokenRows& rows, Sampler& sampler,
                                      bool want_v_outputs = false) {
  if (rows.steps > m.config.max_tokens && m.config.hierarchical()) {
    throw std::invalid_argument("encode_utterance: utterance of " + std::to_string(rows.steps) +
                                " tokens exceeds max_tokens " + std::to_string(m.config.max_tokens) +
                                "; truncate first");
  }
  std::vector<Var> inputs;
  for (std::size_t t = 0; t < rows.steps; ++t) inputs.push_back(embedding_lookup(m.w.embedding, rows.step_ids(t)));
  EncoderOutput out;
  for (std::size_t l = 0; l < m.w.encoder.size(); ++l) {
    const auto& layer = m.w.encoder[l];
    const bool last = l + 1 == m.w.encoder.size();
    out.layers.push_back(bidirectional_encode(m.config.cell, inputs, rows.mask, layer.fwd.cell, layer.bwd.cell,
                                              layer.proj_h, layer.proj_v, sampler, want_v_outputs && last));
    inputs = out.layers.back().outputs;
  }
  out.outputs = out.layers.back().outputs;
  out.v_outputs = out.layers.back().v_outputs;
  out.final = out.layers.back().final;
  return out;
}

struct ContextOutput {
  CellTrace trace;
  StepState final;
};

/// Unidirectional context cell over per-turn utterance vectors ([B x d] each);
/// turn_mask is [turns x B].
inline ContextOutput encode_context(BoundModel& m, std::span<const Var> turn_inputs, const Tensor& turn_mask,
                                    Sampler& sampler) {
  if (turn_inputs.empty()) throw std::invalid_argument("encode_context: no turns");
  if (turn_inputs.size() > m.config.max_turns) {
    throw std::invalid_argument("encode_context: " + std::to_string(turn_inputs.size()) + " turns exceed max_turns " +
                                std::to_string(m.config.max_turns));
  }
  const std::size_t rows = turn_inputs[0].shape().at(0);
  for (std::size_t b = 0; b < rows; ++b) {
    if (turn_mask.at(0, b) == 0.0) throw std::invalid_argument("encode_context: dialogue without any turn");
  }
  ContextOutput out;
  StepState init = initial_state(m.tape, m.config.cell, rows, m.config.d_hidden, sampler);
  out.trace.inputs.assign(turn_inputs.begin(), turn_inputs.end());
  out.trace.mask = turn_mask;
  out.trace.states = unroll(m.config.cell, out.trace.inputs, init, turn_mask, m.w.context.cell, sampler);
  out.final = out.trace.states.back();
  return out;
}

struct DecoderOutput {
  Var logits;  // [(T * B) x V], time-major rows
  std::vector<CellTrace> layers;
};

inline Var output_logits(BoundModel& m, Var h) {
  Var w = m.w.output.w ? m.w.output.w : transpose(m.w.embedding);
  return linear(h, w, m.w.output.b);
}

/// Teacher-forced decoder: every layer starts from init (h, and v for pvgru);
/// inputs are the time-major ids [T x B] with mask [T x B].
inline DecoderOutput decode_teacher_forced(BoundModel& m, const StepState& init, const TokenRows& inputs,
                                           Sampler& sampler) {
  if (inputs.steps > m.config.max_tokens + 1) {
    throw std::invalid_argument("decode_teacher_forced: response of " + std::to_string(inputs.steps - 1) +
                                " tokens exceeds max_tokens; truncate first");
  }
  DecoderOutput out;
  std::vector<Var> xs;
  for (std::size_t t = 0; t < inputs.steps; ++t) xs.push_back(embedding_lookup(m.w.embedding, inputs.step_ids(t)));
  for (const auto& block : m.w.decoder) {
    CellTrace tr;
    tr.inputs = xs;
    tr.mask = inputs.mask;
    tr.states = unroll(m.config.cell, tr.inputs, init, inputs.mask, block.cell, sampler);
    xs.clear();
    for (const auto& s : tr.states) xs.push_back(s.h);
    out.layers.push_back(std::move(tr));
  }
  std::vector<RowRef> refs;
  for (std::size_t t = 0; t < inputs.steps; ++t)
    for (std::size_t b = 0; b < inputs.rows; ++b) refs.push_back({t, b});
  if (refs.empty()) throw std::invalid_argument("decode_teacher_forced: no decoder steps");
  out.logits = output_logits(m, gather_rows(xs, refs));
  return out;
}

// ---------------------------------------------------------------------------
// Training forward pass

struct ForwardResult {
  LossTerms terms;
  Var ll_per_example;   // [B] summed token NLL
  std::size_t target_tokens = 0;
  ContextOutput context;
  StepState decoder_init;
};

namespace detail {

inline std::vector<std::vector<int>> flatten_turns(const Batch& batch, std::size_t b) {
  std::vector<int> seq;
  for (std::size_t t = 0; t < batch.turn_count(b); ++t) {
    if (t) seq.push_back(Vocab::kSep);
    for (std::size_t k = 0; k < batch.utterance_length(b, t); ++k) seq.push_back(batch.context_id(b, t, k));
  }
  return {seq};
}

// Sums the masked per-step objectives of one cell instance into per-row totals.
inline void accumulate_objectives(const LevelTrace& lt, const LossWeights& w, Var& rec, Var& cons) {
  Tape& tape = *lt.trace.states.front().h.tape();
  const std::size_t rows = lt.trace.mask.shape()[1];
  Var rec_rows, cons_rows;
  for (std::size_t t = 0; t < lt.trace.states.size(); ++t) {
    const StepState& s = lt.trace.states[t];
    auto m = mask_row(lt.trace.mask, t);
    Var mask = tape.constant(Tensor(Shape{rows}, std::vector<double>(m.begin(), m.end())));
    if (w.use_reconstruction) {
      Var r = reconstruction_loss_rows(s.v, s.h, lt.block->reconstruction, w.delta) * mask;
      rec_rows = rec_rows ? rec_rows + r : r;
    }
    if (w.use_consistency) {
      Var c = consistency_loss_rows(lt.trace.inputs[t], s.mu, s.logvar, lt.block->input_dist) * mask;
      cons_rows = cons_rows ? cons_rows + c : c;
    }
  }
  auto fold = [&](Var& acc, Var rows_total) {
    if (!rows_total) return;
    Var per_example = segment_sum(rows_total, lt.owner, acc.value().size());
    acc = acc + per_example;
  };
  fold(rec, rec_rows);
  fold(cons, cons_rows);
}

}  // namespace detail

/// Everything computed from the dialogue contexts of a batch.
struct ContextEncoding {
  StepState decoder_init;               // [B x d_h]
  EncoderOutput encoder;                // rows = utterances (hred/pvhd) or examples (seq2seq)
  ContextOutput context;                // hierarchical models only
  std::vector<std::size_t> utterance_owner;
  std::vector<LevelTrace> levels;       // encoder and context cell instances
};

/// Runs the encoder (and the context cell for hierarchical models) over the
/// contexts of a batch. The response part of the batch is ignored.
inline ContextEncoding encode_batch_context(BoundModel& m, const Batch& batch, Sampler& sampler,
                                            bool want_word_v = false) {
  const auto& cfg = m.config;
  const std::size_t B = batch.size;
  if (B == 0) throw std::invalid_argument("encode_batch_context: empty batch");
  for (int id : batch.context)
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) {
      throw IndexError("context id " + std::to_string(id) + " outside vocabulary of " + std::to_string(cfg.vocab_size));
    }
  ContextEncoding ce;
  if (!cfg.hierarchical()) {
    std::vector<std::vector<int>> seqs;
    for (std::size_t b = 0; b < B; ++b) seqs.push_back(detail::flatten_turns(batch, b)[0]);
    ce.encoder = encode_utterance(m, TokenRows::from_sequences(seqs), sampler, want_word_v);
    ce.decoder_init = ce.encoder.final;
    ce.utterance_owner.resize(B);
    std::iota(ce.utterance_owner.begin(), ce.utterance_owner.end(), std::size_t{0});
  } else {
    if (batch.turns > cfg.max_turns) throw std::invalid_argument("batch exceeds max_turns; truncate first");
    std::vector<std::vector<int>> utts;
    std::vector<std::vector<std::size_t>> utt_index(B, std::vector<std::size_t>(batch.turns, 0));
    for (std::size_t b = 0; b < B; ++b) {
      if (batch.turn_count(b) == 0) throw std::invalid_argument("dialogue without any context turn");
      for (std::size_t t = 0; t < batch.turn_count(b); ++t) {
        std::vector<int> u;
        for (std::size_t k = 0; k < batch.utterance_length(b, t); ++k) u.push_back(batch.context_id(b, t, k));
        utt_index[b][t] = utts.size();
        utts.push_back(std::move(u));
        ce.utterance_owner.push_back(b);
      }
    }
    ce.encoder = encode_utterance(m, TokenRows::from_sequences(utts), sampler, want_word_v);
    Var utterance_vectors = ce.encoder.final.h;
    if (cfg.context_input_v) utterance_vectors = concat_cols(ce.encoder.final.h, ce.encoder.final.v);
    Tensor turn_mask(Shape{batch.turns, B});
    std::vector<Var> turn_inputs;
    const Var src[] = {utterance_vectors};
    for (std::size_t t = 0; t < batch.turns; ++t) {
      std::vector<RowRef> refs;
      for (std::size_t b = 0; b < B; ++b) {
        const bool present = t < batch.turn_count(b);
        turn_mask.at(t, b) = present ? 1.0 : 0.0;
        refs.push_back({0, present ? utt_index[b][t] : utt_index[b][0]});
      }
      turn_inputs.push_back(gather_rows(src, refs));
    }
    ce.context = encode_context(m, turn_inputs, turn_mask, sampler);
    ce.decoder_init = ce.context.final;
  }
  for (std::size_t l = 0; l < ce.encoder.layers.size(); ++l) {
    ce.levels.push_back({&m.w.encoder[l].fwd, ce.encoder.layers[l].forward, ce.utterance_owner, LevelTrace::Level::encoder});
    ce.levels.push_back({&m.w.encoder[l].bwd, ce.encoder.layers[l].backward, ce.utterance_owner, LevelTrace::Level::encoder});
  }
  if (cfg.hierarchical()) {
    std::vector<std::size_t> owner(B);
    std::iota(owner.begin(), owner.end(), std::size_t{0});
    ce.levels.push_back({&m.w.context, ce.context.trace, owner, LevelTrace::Level::context});
  }
  return ce;
}

/// Teacher-forced loss for a batch. All per-step objectives of every enabled
/// PVGRU level are summed per example, then every term is averaged over the batch.
inline ForwardResult forward_train(BoundModel& m, const Batch& batch, const LossWeights& weights, Sampler& sampler) {
  weights.validate();
  const auto& cfg = m.config;
  const std::size_t B = batch.size;
  ForwardResult res;
  ContextEncoding ce = encode_batch_context(m, batch, sampler);
  std::vector<LevelTrace> levels = std::move(ce.levels);
  res.context = ce.context;
  res.decoder_init = ce.decoder_init;

  // Decoder.
  TokenRows dec_in;
  dec_in.rows = B;
  dec_in.steps = batch.steps;
  dec_in.ids.resize(B * batch.steps);
  dec_in.mask = Tensor(Shape{batch.steps, B});
  std::vector<int> targets(B * batch.steps);
  std::vector<double> target_mask(B * batch.steps);
  for (std::size_t t = 0; t < batch.steps; ++t)
    for (std::size_t b = 0; b < B; ++b) {
      dec_in.ids[t * B + b] = batch.response_in[b * batch.steps + t];
      dec_in.mask.at(t, b) = batch.response_mask[b * batch.steps + t];
      targets[t * B + b] = batch.response_out[b * batch.steps + t];
      target_mask[t * B + b] = batch.response_mask[b * batch.steps + t];
      res.target_tokens += target_mask[t * B + b] != 0.0;
    }
  DecoderOutput dec = decode_teacher_forced(m, res.decoder_init, dec_in, sampler);
  std::vector<std::size_t> dec_owner(B);
  std::iota(dec_owner.begin(), dec_owner.end(), std::size_t{0});
  for (std::size_t l = 0; l < dec.layers.size(); ++l) {
    levels.push_back({&m.w.decoder[l], dec.layers[l], dec_owner, LevelTrace::Level::decoder});
  }
  Var token_nll = softmax_cross_entropy_rows(dec.logits, targets, target_mask);
  res.ll_per_example = sum(reshape(token_nll, Shape{batch.steps, B}), 0);

  // Summarizing-variable objectives.
  Var rec, cons;
  if (cfg.cell == CellKind::pvgru && (weights.use_reconstruction || weights.use_consistency)) {
    rec = m.tape.constant(Tensor(Shape{B}));
    cons = m.tape.constant(Tensor(Shape{B}));
    for (const auto& lt : levels) {
      const bool on = (lt.level == LevelTrace::Level::encoder && weights.levels.encoder) ||
                      (lt.level == LevelTrace::Level::context && weights.levels.context) ||
                      (lt.level == LevelTrace::Level::decoder && weights.levels.decoder);
      if (!on || lt.trace.states.empty()) continue;
      detail::accumulate_objectives(lt, weights, rec, cons);
    }
  }
  res.terms = total_loss(res.ll_per_example, rec, cons, weights);
  return res;
}

/// Loss values and parameter gradients for one batch.
struct LossAndGradients {
  LossValues loss;
  ModelWeights<Tensor> grads;
  std::size_t target_tokens = 0;
};

inline LossAndGradients loss_and_gradients(const Model& model, const Batch& batch, const LossWeights& weights,
                                           Sampler& sampler) {
  Tape tape;
  BoundModel m(tape, model);
  ForwardResult fr = forward_train(m, batch, weights, sampler);
  Gradients g = tape.backward(fr.terms.total);
  return {values_of(fr.terms), collect_gradients(m.w, g), fr.target_tokens};
}

inline LossValues loss_only(const Model& model, const Batch& batch, const LossWeights& weights, Sampler& sampler) {
  Tape tape;
  tape.set_recording(false);
  BoundModel m(tape, model);
  return values_of(forward_train(m, batch, weights, sampler).terms);
}

}  // namespace pvgru
