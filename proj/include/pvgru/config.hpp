#pragma once

// JSON run configuration ("model" and "train" sections) with named presets.
// Unknown keys are rejected so that misspelled hyperparameters cannot pass silently.

#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvgru/model.hpp"
#include "pvgru/optim.hpp"

namespace pvgru {

struct TrainConfig {
  AdamConfig adam;
  std::size_t max_epochs = 100;
  std::size_t batch_size = 128;
  std::uint64_t seed = 1;
  LossWeights loss;
  SampleMode mode = SampleMode::sample;
  std::size_t checkpoint_every = 1;  // epochs; 0 = only at the end
  std::size_t eval_every = 1;        // epochs; 0 = never
  std::size_t vocab_max_size = 20000;
  std::size_t vocab_min_count = 1;
  bool shuffle = true;

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (!(adam.learning_rate > 0)) v.push_back("train.learning_rate: must be > 0");
    if (!(adam.beta1 > 0 && adam.beta1 < 1)) v.push_back("train.adam_beta1: must be in (0, 1)");
    if (!(adam.beta2 > 0 && adam.beta2 < 1)) v.push_back("train.adam_beta2: must be in (0, 1)");
    if (!(adam.eps > 0)) v.push_back("train.adam_eps: must be > 0");
    if (adam.clip_norm && !(*adam.clip_norm > 0)) v.push_back("train.grad_clip_norm: must be > 0 or null");
    if (batch_size < 1) v.push_back("train.batch_size: must be >= 1");
    if (!(loss.delta > 0)) v.push_back("train.delta: must be > 0");
    if (vocab_max_size <= Vocab::kReserved) v.push_back("train.vocab_max_size: must exceed 5");
    return v;
  }
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  void validate() const {
    auto v = model.violations();
    for (auto& s : v) s = "model." + s;
    auto t = train.violations();
    v.insert(v.end(), t.begin(), t.end());
    if (v.empty()) return;
    std::string msg = "invalid config:";
    for (const auto& s : v) msg += "\n  " + s;
    throw ConfigError(msg);
  }
};

enum class Preset { paper, desk };

inline Preset parse_preset(const std::string& s) {
  if (s == "paper") return Preset::paper;
  if (s == "desk") return Preset::desk;
  throw ConfigError("unknown preset '" + s + "' (expected paper or desk)");
}

/// paper: 512-wide, batch 128, 100 epochs. desk: 64-wide, batch 4, lr 5e-3, 500 epochs.
inline RunConfig preset_config(Preset p) {
  RunConfig c;
  if (p == Preset::paper) {
    c.model.d_embed = c.model.d_hidden = 512;
    c.train.batch_size = 128;
    c.train.max_epochs = 100;
  } else {
    c.model.d_embed = c.model.d_hidden = 64;
    c.train.batch_size = 4;
    c.train.adam.learning_rate = 5e-3;
    c.train.max_epochs = 500;
    c.train.checkpoint_every = 0;
    c.train.eval_every = 0;
  }
  return c;
}

namespace detail {

using nlohmann::json;

class Section {
 public:
  Section(const json& j, std::string name, std::vector<std::string>& errors)
      : j_(j), name_(std::move(name)), errors_(errors) {
    if (!j_.is_object()) errors_.push_back(name_ + ": must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.is_object() || !j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      errors_.push_back(name_ + "." + key + ": " + e.what());
    }
  }

  void get_optional(const char* key, std::optional<double>& out) {
    seen_.insert(key);
    if (!j_.is_object() || !j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    double v = 0;
    get(key, v);
    out = v;
  }

  template <class E, class Parse>
  void get_enum(const char* key, E& out, Parse parse) {
    seen_.insert(key);
    if (!j_.is_object() || !j_.contains(key)) return;
    try {
      out = parse(j_.at(key).get<std::string>());
    } catch (const std::exception& e) {
      errors_.push_back(name_ + "." + key + ": " + e.what());
    }
  }

  void finish() {
    if (!j_.is_object()) return;
    for (const auto& [k, _] : j_.items())
      if (!seen_.count(k)) errors_.push_back(name_ + "." + k + ": unknown key");
  }

 private:
  const json& j_;
  std::string name_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

}  // namespace detail

/// Applies a JSON document on top of base; every violated or unknown field is reported at once.
inline RunConfig parse_config(const nlohmann::json& doc, RunConfig base = {}) {
  using detail::Section;
  std::vector<std::string> errors;
  if (!doc.is_object()) throw ConfigError("config: top level must be an object");
  for (const auto& [k, _] : doc.items())
    if (k != "model" && k != "train") errors.push_back(k + ": unknown section");
  if (doc.contains("model")) {
    Section s(doc.at("model"), "model", errors);
    auto& m = base.model;
    s.get_enum("architecture", m.architecture, parse_architecture);
    s.get_enum("cell", m.cell, parse_cell_kind);
    s.get("d_embed", m.d_embed);
    s.get("d_hidden", m.d_hidden);
    s.get("encoder_layers", m.encoder_layers);
    s.get("decoder_layers", m.decoder_layers);
    s.get("max_turns", m.max_turns);
    s.get("max_tokens", m.max_tokens);
    s.get("tie_embeddings", m.tie_embeddings);
    s.get("use_bias", m.use_bias);
    s.get("head_depth", m.head_depth);
    s.get("context_input_v", m.context_input_v);
    s.finish();
  }
  if (doc.contains("train")) {
    Section s(doc.at("train"), "train", errors);
    auto& t = base.train;
    s.get("learning_rate", t.adam.learning_rate);
    s.get("adam_beta1", t.adam.beta1);
    s.get("adam_beta2", t.adam.beta2);
    s.get("adam_eps", t.adam.eps);
    s.get_optional("grad_clip_norm", t.adam.clip_norm);
    s.get("max_epochs", t.max_epochs);
    s.get("batch_size", t.batch_size);
    s.get("seed", t.seed);
    s.get("use_reconstruction", t.loss.use_reconstruction);
    s.get("use_consistency", t.loss.use_consistency);
    s.get("delta", t.loss.delta);
    s.get("loss_encoder", t.loss.levels.encoder);
    s.get("loss_context", t.loss.levels.context);
    s.get("loss_decoder", t.loss.levels.decoder);
    s.get_enum("mode", t.mode, parse_sample_mode);
    s.get("checkpoint_every", t.checkpoint_every);
    s.get("eval_every", t.eval_every);
    s.get("vocab_max_size", t.vocab_max_size);
    s.get("vocab_min_count", t.vocab_min_count);
    s.get("shuffle", t.shuffle);
    s.finish();
  }
  if (!errors.empty()) {
    std::string msg = "invalid config:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  // vocab_size is derived from the corpus; validation happens once it is known.
  return base;
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_config(doc, std::move(base));
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  const auto& m = c.model;
  j["model"] = {{"architecture", to_string(m.architecture)},
                {"cell", to_string(m.cell)},
                {"d_embed", m.d_embed},
                {"d_hidden", m.d_hidden},
                {"encoder_layers", m.encoder_layers},
                {"decoder_layers", m.decoder_layers},
                {"max_turns", m.max_turns},
                {"max_tokens", m.max_tokens},
                {"tie_embeddings", m.tie_embeddings},
                {"use_bias", m.use_bias},
                {"head_depth", m.head_depth},
                {"context_input_v", m.context_input_v}};
  const auto& t = c.train;
  j["train"] = {{"learning_rate", t.adam.learning_rate},
                {"adam_beta1", t.adam.beta1},
                {"adam_beta2", t.adam.beta2},
                {"adam_eps", t.adam.eps},
                {"grad_clip_norm", t.adam.clip_norm ? nlohmann::json(*t.adam.clip_norm) : nlohmann::json(nullptr)},
                {"max_epochs", t.max_epochs},
                {"batch_size", t.batch_size},
                {"seed", t.seed},
                {"use_reconstruction", t.loss.use_reconstruction},
                {"use_consistency", t.loss.use_consistency},
                {"delta", t.loss.delta},
                {"loss_encoder", t.loss.levels.encoder},
                {"loss_context", t.loss.levels.context},
                {"loss_decoder", t.loss.levels.decoder},
                {"mode", to_string(t.mode)},
                {"checkpoint_every", t.checkpoint_every},
                {"eval_every", t.eval_every},
                {"vocab_max_size", t.vocab_max_size},
                {"vocab_min_count", t.vocab_min_count},
                {"shuffle", t.shuffle}};
  return j;
}

}  // namespace pvgru
