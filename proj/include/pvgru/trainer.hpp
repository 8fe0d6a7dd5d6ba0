#pragma once

// Training loop, evaluation, generation and variable export on top of the model.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvgru/checkpoint.hpp"
#include "pvgru/config.hpp"
#include "pvgru/decoding.hpp"
#include "pvgru/gradcheck.hpp"
#include "pvgru/metrics.hpp"
#include "pvgru/optim.hpp"

namespace pvgru {

using Json = nlohmann::json;

/// Present parameters in declaration order.
inline std::vector<std::pair<std::string, Tensor*>> flat_params(ModelWeights<Tensor>& w) {
  std::vector<std::pair<std::string, Tensor*>> out;
  for_each_present(w, [&](const std::string& name, Tensor& t) { out.emplace_back(name, &t); });
  return out;
}

/// Gradient tensors aligned with flat_params(weights).
inline std::vector<const Tensor*> flat_grads(const ModelWeights<Tensor>& weights, const ModelWeights<Tensor>& grads) {
  std::vector<const Tensor*> w, g;
  for_each_param(weights, "", [&](const std::string&, const Tensor& t) { w.push_back(&t); });
  for_each_param(grads, "", [&](const std::string&, const Tensor& t) { g.push_back(&t); });
  if (w.size() != g.size()) throw std::logic_error("gradient layout does not match parameters");
  std::vector<const Tensor*> out;
  for (std::size_t i = 0; i < w.size(); ++i)
    if (!w[i]->empty()) out.push_back(g[i]);
  return out;
}

inline std::vector<Dialogue> truncate_all(const std::vector<Dialogue>& corpus, const ModelConfig& m) {
  std::vector<Dialogue> out;
  out.reserve(corpus.size());
  for (const auto& d : corpus) out.push_back(truncate(d, m.max_turns, m.max_tokens));
  return out;
}

inline std::vector<EncodedDialogue> encode_all(const std::vector<Dialogue>& corpus, const Vocab& vocab) {
  std::vector<EncodedDialogue> out;
  for (std::size_t i = 0; i < corpus.size(); ++i) out.push_back(encode_dialogue(corpus[i], vocab, i));
  return out;
}

inline std::vector<Batch> sequential_batches(const std::vector<EncodedDialogue>& data, std::size_t batch_size) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  return batches_in_order(data, order, batch_size);
}

struct EpochRecord {
  std::size_t epoch = 0;
  LossValues loss;
  std::optional<double> valid_ppl;
};

inline Json to_json(const EpochRecord& r) {
  Json j;
  j["epoch"] = r.epoch;
  j["loss_total"] = r.loss.total;
  j["loss_ll"] = r.loss.ll;
  j["loss_r"] = r.loss.rec;
  j["loss_c"] = r.loss.cons;
  j["valid_ppl"] = r.valid_ppl ? Json(*r.valid_ppl) : Json(nullptr);
  return j;
}

/// Owns the model, optimizer moments and the single generator that drives
/// shuffling and sampling noise, so a checkpoint captures the full training state.
class Trainer {
 public:
  Trainer(RunConfig cfg, Vocab vocab, const std::vector<Dialogue>& train, const std::vector<Dialogue>& valid = {})
      : cfg_(std::move(cfg)), vocab_(std::move(vocab)), rng_(cfg_.train.seed + 1) {
    cfg_.model.vocab_size = vocab_.size();
    cfg_.validate();
    if (train.empty()) throw CorpusError("training corpus is empty");
    train_ = encode_all(truncate_all(train, cfg_.model), vocab_);
    valid_ = encode_all(truncate_all(valid, cfg_.model), vocab_);
    model_ = Model::init(cfg_.model, cfg_.train.seed);
    adam_ = AdamState::like(param_pointers());
  }

  EpochRecord run_epoch() {
    std::vector<std::size_t> order(train_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (cfg_.train.shuffle) std::shuffle(order.begin(), order.end(), rng_.engine());
    auto batches = batches_in_order(train_, order, cfg_.train.batch_size);
    const std::vector<Tensor*> ps = param_pointers();
    EpochRecord rec;
    rec.epoch = ++epoch_;
    double examples = 0;
    for (const auto& b : batches) {
      Sampler s;
      s.mode = cfg_.train.mode;
      s.rng = &rng_;
      LossAndGradients lg = loss_and_gradients(model_, b, cfg_.train.loss, s);
      adam_step(ps, flat_grads(model_.weights, lg.grads), adam_, cfg_.train.adam);
      const double n = static_cast<double>(b.size);
      rec.loss.total += lg.loss.total * n;
      rec.loss.ll += lg.loss.ll * n;
      rec.loss.rec += lg.loss.rec * n;
      rec.loss.cons += lg.loss.cons * n;
      examples += n;
    }
    rec.loss.total /= examples;
    rec.loss.ll /= examples;
    rec.loss.rec /= examples;
    rec.loss.cons /= examples;
    const auto every = cfg_.train.eval_every;
    if (!valid_.empty() && every != 0 && epoch_ % every == 0) rec.valid_ppl = valid_perplexity();
    return rec;
  }

  double valid_perplexity() const { return perplexity(model_, sequential_batches(valid_, cfg_.train.batch_size)); }
  double train_perplexity() const { return perplexity(model_, sequential_batches(train_, cfg_.train.batch_size)); }

  Checkpoint checkpoint(DType dtype = DType::f64) const {
    Checkpoint c;
    put_model(c, model_, dtype);
    std::size_t i = 0;
    for_each_present(model_.weights, [&](const std::string& name, const Tensor&) {
      c.put("adam_m/" + name, adam_.m[i]);
      c.put("adam_v/" + name, adam_.v[i]);
      ++i;
    });
    c.put_scalar("meta/step", static_cast<double>(adam_.step));
    c.put_scalar("meta/epoch", static_cast<double>(epoch_));
    auto words = rng_.state_words();
    c.put("meta/rng", Tensor(Shape{words.size()}, std::vector<double>(words.begin(), words.end())));
    return c;
  }

  void restore(const Checkpoint& c) {
    ModelConfig stored = get_model_config(c);
    if (stored.vocab_size != vocab_.size()) {
      throw CheckpointError("checkpoint vocabulary has " + std::to_string(stored.vocab_size) + " ids, vocab file has " +
                            std::to_string(vocab_.size()));
    }
    if (stored.architecture != cfg_.model.architecture || stored.cell != cfg_.model.cell) {
      throw CheckpointError(std::string("checkpoint holds a ") + to_string(stored.architecture) + "/" +
                            to_string(stored.cell) + " model, config asks for " + to_string(cfg_.model.architecture) +
                            "/" + to_string(cfg_.model.cell));
    }
    for_each_present(model_.weights, [&](const std::string& name, Tensor& t) {
      const Tensor& saved = c.get("param/" + name);
      if (saved.shape() != t.shape()) {
        throw CheckpointError("param/" + name + ": checkpoint shape " + shape_string(saved.shape()) +
                              " does not match config shape " + shape_string(t.shape()));
      }
      t = saved;
    });
    std::size_t i = 0;
    for_each_present(model_.weights, [&](const std::string& name, const Tensor&) {
      adam_.m[i] = c.get("adam_m/" + name);
      adam_.v[i] = c.get("adam_v/" + name);
      ++i;
    });
    adam_.step = static_cast<std::size_t>(c.scalar("meta/step"));
    epoch_ = static_cast<std::size_t>(c.scalar("meta/epoch"));
    std::vector<std::uint32_t> words;
    for (double w : c.get("meta/rng").values()) words.push_back(static_cast<std::uint32_t>(w));
    rng_.set_state_words(words);
  }

  const Model& model() const { return model_; }
  Model& model() { return model_; }
  const Vocab& vocab() const { return vocab_; }
  const RunConfig& config() const { return cfg_; }
  std::size_t epoch() const { return epoch_; }
  const std::vector<EncodedDialogue>& train_data() const { return train_; }

 private:
  std::vector<Tensor*> param_pointers() {
    std::vector<Tensor*> ps;
    for (auto& p : flat_params(model_.weights)) ps.push_back(p.second);
    return ps;
  }

  RunConfig cfg_;
  Vocab vocab_;
  std::vector<EncodedDialogue> train_, valid_;
  Model model_;
  AdamState adam_;
  Rng rng_;
  std::size_t epoch_ = 0;
};

struct TrainPaths {
  std::string corpus;
  std::string valid;  // optional
  std::string out_dir;
  bool resume = false;
};

/// Trains into out_dir: vocab.txt, config.json, metrics.jsonl (one record per
/// epoch) and model.ckpt. With resume, continues from model.ckpt and rewrites
/// the log to the checkpointed epoch before appending.
inline Trainer train_run(const RunConfig& cfg, const TrainPaths& paths, std::ostream* progress = nullptr) {
  namespace fs = std::filesystem;
  fs::create_directories(paths.out_dir);
  const fs::path out(paths.out_dir);
  auto corpus = load_corpus(paths.corpus);
  std::vector<Dialogue> valid;
  if (!paths.valid.empty()) valid = load_corpus(paths.valid);
  const fs::path ckpt_path = out / "model.ckpt", vocab_path = out / "vocab.txt", log_path = out / "metrics.jsonl";

  const bool resuming = paths.resume && fs::exists(ckpt_path);
  Vocab vocab = resuming ? Vocab::load(vocab_path.string())
                         : build_vocab(truncate_all(corpus, cfg.model), cfg.train.vocab_max_size,
                                       cfg.train.vocab_min_count);
  Trainer trainer(cfg, vocab, corpus, valid);
  std::vector<std::string> kept_lines;
  if (resuming) {
    trainer.restore(Checkpoint::load(ckpt_path.string()));
    std::ifstream old(log_path);
    std::string line;
    while (kept_lines.size() < trainer.epoch() && std::getline(old, line)) kept_lines.push_back(line);
  } else {
    vocab.save(vocab_path.string());
  }
  {
    std::ofstream cj(out / "config.json");
    cj << to_json(trainer.config()).dump(2) << "\n";
  }
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + log_path.string());
  for (const auto& l : kept_lines) log << l << "\n";
  log.flush();

  const auto every = cfg.train.checkpoint_every;
  while (trainer.epoch() < cfg.train.max_epochs) {
    EpochRecord rec = trainer.run_epoch();
    log << to_json(rec).dump() << "\n";
    log.flush();
    if (progress) *progress << to_json(rec).dump() << "\n";
    if (every != 0 && rec.epoch % every == 0) trainer.checkpoint().save(ckpt_path.string());
  }
  trainer.checkpoint().save(ckpt_path.string());
  return trainer;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalOptions {
  DecodeOptions decode;
  bool greedy = false;
  SampleMode mode = SampleMode::sample;
  bool zero_initial_v = false;
  std::uint64_t seed = 1;
};

/// Per-example sampler seed: independent of evaluation order.
inline std::uint64_t example_seed(std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

inline std::vector<int> generate_for(const Model& model, const std::vector<std::vector<int>>& context,
                                     const EvalOptions& opt, std::size_t index) {
  Rng rng(example_seed(opt.seed, index));
  Sampler s;
  s.mode = opt.mode;
  s.rng = &rng;
  s.zero_initial_v = opt.zero_initial_v;
  return generate_response(model, context, opt.decode, opt.greedy, s);
}

struct EvalResult {
  std::map<std::string, double> metrics;
  std::map<std::string, std::vector<std::optional<double>>> per_example;
  std::vector<std::string> generations;
  std::vector<Tokens> hypotheses;
};

inline EvalResult evaluate_model(const Model& model, const Vocab& vocab, const std::vector<Dialogue>& corpus,
                                 const WordVectors* vectors, const EvalOptions& opt) {
  if (corpus.empty()) throw CorpusError("evaluation corpus is empty");
  if (model.config.vocab_size != vocab.size()) {
    throw CheckpointError("vocabulary mismatch: checkpoint has " + std::to_string(model.config.vocab_size) +
                          " ids, vocab file has " + std::to_string(vocab.size()));
  }
  auto data = truncate_all(corpus, model.config);
  auto encoded = encode_all(data, vocab);
  EvalResult r;
  r.metrics["ppl"] = perplexity(model, sequential_batches(encoded, 16));

  std::vector<EvalPair> pairs;
  for (std::size_t i = 0; i < encoded.size(); ++i) {
    Tokens hyp = vocab.decode(generate_for(model, encoded[i].context, opt, i));
    r.generations.push_back(detokenize(hyp));
    r.hypotheses.push_back(hyp);
    pairs.push_back({hyp, data[i].response});
  }
  r.metrics["bleu1"] = bleu_n(pairs, 1);
  r.metrics["bleu2"] = bleu_n(pairs, 2);
  r.metrics["rouge_l"] = rouge_l(pairs);
  r.metrics["dist1"] = distinct_n(r.hypotheses, 1);
  r.metrics["dist2"] = distinct_n(r.hypotheses, 2);
  auto& pe = r.per_example;
  for (const auto& p : pairs) {
    std::vector<EvalPair> one{p};
    pe["bleu1"].push_back(bleu_n(one, 1));
    pe["bleu2"].push_back(bleu_n(one, 2));
    pe["rouge_l"].push_back(rouge_l_pair(p.hypothesis, p.reference));
    pe["dist1"].push_back(distinct_n({p.hypothesis}, 1));
    pe["dist2"].push_back(distinct_n({p.hypothesis}, 2));
  }
  if (vectors) {
    auto rep = embedding_metrics(pairs, *vectors);
    r.metrics["embed_average"] = rep.mean.average;
    r.metrics["embed_extrema"] = rep.mean.extrema;
    r.metrics["embed_greedy"] = rep.mean.greedy;
    r.metrics["embed_skipped"] = static_cast<double>(rep.skipped);
    for (const char* k : {"embed_average", "embed_extrema", "embed_greedy"})
      pe[k].assign(pairs.size(), std::nullopt);
    for (std::size_t k = 0; k < rep.per_pair.size(); ++k) {
      const std::size_t i = rep.scored_index[k];
      pe["embed_average"][i] = rep.per_pair[k].average;
      pe["embed_extrema"][i] = rep.per_pair[k].extrema;
      pe["embed_greedy"][i] = rep.per_pair[k].greedy;
    }
  }
  return r;
}

/// p-values of every per-example metric present in both results (pairs where
/// either side is missing are dropped).
inline std::map<std::string, double> compare_results(const EvalResult& a, const EvalResult& b,
                                                     std::size_t resamples = 10000, std::uint64_t seed = 1) {
  std::map<std::string, double> p;
  for (const auto& [name, sa] : a.per_example) {
    auto it = b.per_example.find(name);
    if (it == b.per_example.end()) continue;
    const auto& sb = it->second;
    if (sa.size() != sb.size()) throw std::invalid_argument("compare: results cover different corpora");
    std::vector<double> xa, xb;
    for (std::size_t i = 0; i < sa.size(); ++i)
      if (sa[i] && sb[i]) xa.push_back(*sa[i]), xb.push_back(*sb[i]);
    if (!xa.empty()) p[name] = paired_significance(xa, xb, resamples, seed);
  }
  return p;
}

inline Json to_json(const EvalResult& r) {
  Json j;
  j["metrics"] = r.metrics;
  Json pe = Json::object();
  for (const auto& [k, v] : r.per_example) {
    Json arr = Json::array();
    for (const auto& x : v) arr.push_back(x ? Json(*x) : Json(nullptr));
    pe[k] = arr;
  }
  j["per_example"] = pe;
  j["generations"] = r.generations;
  return j;
}

inline std::string key_value_block(const std::map<std::string, double>& m, const std::string& prefix = "") {
  std::ostringstream os;
  os << std::setprecision(6);
  for (const auto& [k, v] : m) os << prefix << k << "=" << v << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Summarizing-variable export

/// Writes "level<TAB>dialogue_id<TAB>step<TAB>v_0 ... v_{d-1}" rows: word-level
/// rows carry the top encoder layer's forward-direction v at every context token
/// (steps numbered across turns), utterance-level rows the context cell's v per
/// turn. Every row has d_hidden values.
inline std::size_t export_variables(const Model& model, const Vocab& vocab, const std::vector<Dialogue>& corpus,
                                    std::ostream& os, Sampler sampler) {
  if (model.config.cell != CellKind::pvgru) {
    throw std::invalid_argument("export-vars: unsupported for gru-cell checkpoints (no summarizing variable)");
  }
  auto data = encode_all(truncate_all(corpus, model.config), vocab);
  std::size_t rows = 0;
  os << std::setprecision(17);
  const std::size_t d = model.config.d_hidden;
  auto emit = [&](const char* level, std::size_t dialogue, std::size_t step, const Tensor& v, std::size_t r) {
    os << level << '\t' << dialogue << '\t' << step;
    for (std::size_t c = 0; c < d; ++c) os << '\t' << v.at(r, c);
    os << '\n';
    ++rows;
  };
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t row = 0;
    std::vector<EncodedDialogue> one{data[i]};
    Batch batch = make_batch(one, std::span<const std::size_t>(&row, 1));
    Tape tape;
    tape.set_recording(false);
    BoundModel m(tape, model);
    ContextEncoding ce = encode_batch_context(m, batch, sampler, true);
    const auto& vs = ce.encoder.v_outputs;
    if (model.config.hierarchical()) {
      std::size_t step = 0;
      for (std::size_t u = 0; u < data[i].context.size(); ++u)
        for (std::size_t t = 0; t < data[i].context[u].size(); ++t) emit("word", i, step++, vs[t].value(), u);
      for (std::size_t u = 0; u < data[i].context.size(); ++u) emit("utterance", i, u, ce.context.trace.states[u].v.value(), 0);
    } else {
      std::size_t len = 0;
      for (const auto& u : data[i].context) len += u.size();
      len += data[i].context.size() - 1;
      for (std::size_t t = 0; t < len; ++t) emit("word", i, t, vs[t].value(), 0);
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Gradient check entry point

struct TinySetup {
  Model model;
  Batch batch;
};

/// A tiny randomly initialised model of the given architecture and a two-dialogue batch.
inline TinySetup tiny_setup(Architecture arch, CellKind cell, std::size_t dim, std::uint64_t seed) {
  std::vector<Dialogue> corpus{{{{"a", "b", "c", "d"}, {"c", "e"}}, {"d", "e", "f"}},
                               {{{"f", "g"}, {"h"}}, {"i", "a", "b", "c"}}};
  Vocab vocab = build_vocab(corpus, 11);
  ModelConfig c;
  c.architecture = arch;
  c.cell = cell;
  c.d_embed = c.d_hidden = dim;
  c.vocab_size = vocab.size();
  auto enc = encode_all(corpus, vocab);
  return {Model::init(c, seed), sequential_batches(enc, enc.size()).front()};
}

inline bool gradcheck_all(std::ostream& os, const GradCheckOptions& opt = {}, std::uint64_t seed = 1) {
  bool ok = true;
  const std::pair<Architecture, CellKind> cases[] = {{Architecture::pvhd, CellKind::pvgru},
                                                     {Architecture::hred, CellKind::gru},
                                                     {Architecture::hred, CellKind::pvgru},
                                                     {Architecture::seq2seq, CellKind::gru},
                                                     {Architecture::seq2seq, CellKind::pvgru}};
  for (const auto& [arch, cell] : cases) {
    TinySetup s = tiny_setup(arch, cell, 6, seed);
    GradCheckReport r = check_model_gradients(s.model, s.batch, LossWeights{}, SampleMode::sample, seed, opt);
    os << to_string(arch) << "/" << to_string(cell) << " " << r << "\n";
    ok = ok && r.passed();
  }
  return ok;
}

}  // namespace pvgru
