// Command-line entry points: train, evaluate, generate, export-vars, gradcheck.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "pvgru/trainer.hpp"

namespace fs = std::filesystem;
using namespace pvgru;

namespace {

std::string vocab_beside(const std::string& checkpoint, const std::string& explicit_path) {
  if (!explicit_path.empty()) return explicit_path;
  return (fs::path(checkpoint).parent_path() / "vocab.txt").string();
}

RunConfig resolve_config(const std::string& preset, const std::string& path) {
  RunConfig base = preset.empty() ? RunConfig{} : preset_config(parse_preset(preset));
  return path.empty() ? base : load_config(path, base);
}

Model load_model(const std::string& path) { return get_model(Checkpoint::load(path)); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pseudo-variational GRU dialogue models: training, decoding and evaluation"};
  app.require_subcommand(1);

  std::string config_path, preset, corpus, valid, out, checkpoint, vocab_path, vectors_path, mode_name = "sample";
  std::string compare;
  std::uint64_t seed = 1;
  std::size_t beam = 5, max_len = 50;
  bool greedy = false, resume = false, zero_v = false;
  std::vector<std::string> context;

  auto* train = app.add_subcommand("train", "train a model and write vocab, log and checkpoint to --out");
  train->add_option("--config", config_path, "JSON config with model/train sections")->check(CLI::ExistingFile);
  train->add_option("--preset", preset, "base settings")->check(CLI::IsMember({"paper", "desk"}));
  train->add_option("--corpus", corpus, "training corpus (JSON lines)")->required()->check(CLI::ExistingFile);
  train->add_option("--valid", valid, "validation corpus for per-epoch perplexity")->check(CLI::ExistingFile);
  train->add_option("--out", out, "output directory")->required();
  auto* train_seed = train->add_option("--seed", seed, "overrides train.seed");
  train->add_flag("--resume", resume, "continue from <out>/model.ckpt");

  auto add_decode = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
    sub->add_option("--vocab", vocab_path, "vocab file (default: vocab.txt beside the checkpoint)");
    sub->add_option("--seed", seed, "sampling seed");
    sub->add_option("--beam", beam, "beam size")->check(CLI::PositiveNumber);
    sub->add_flag("--greedy", greedy, "greedy decoding instead of beam search");
    sub->add_option("--max-len", max_len, "maximum response length")->check(CLI::PositiveNumber);
    sub->add_option("--mode", mode_name, "summarizing-variable mode")->check(CLI::IsMember({"sample", "mean"}));
    sub->add_flag("--zero-v0", zero_v, "start every summarizing variable at zero");
  };

  auto* evaluate = app.add_subcommand("evaluate", "decode a corpus and report metrics as JSON");
  add_decode(evaluate);
  evaluate->add_option("--corpus", corpus, "evaluation corpus")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--vectors", vectors_path, "word vectors (word v1 ... vd per line)")->check(CLI::ExistingFile);
  evaluate->add_option("--compare", compare, "second checkpoint for paired significance")->check(CLI::ExistingFile);
  evaluate->add_option("--out", out, "JSON report path (default: stdout)");

  auto* generate = app.add_subcommand("generate", "respond to a context given as one --context per turn");
  add_decode(generate);
  generate->add_option("--context", context, "context turn (repeatable)")->required();

  auto* exportv = app.add_subcommand("export-vars", "dump word- and utterance-level summarizing variables");
  exportv->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  exportv->add_option("--vocab", vocab_path, "vocab file (default: vocab.txt beside the checkpoint)");
  exportv->add_option("--corpus", corpus, "corpus to encode")->required()->check(CLI::ExistingFile);
  exportv->add_option("--out", out, "output TSV path")->required();
  exportv->add_option("--seed", seed, "sampling seed");
  std::string export_mode = "mean";
  exportv->add_option("--mode", export_mode, "summarizing-variable mode")->check(CLI::IsMember({"sample", "mean"}));

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every architecture");
  double tol = 1e-4;
  gradcheck->add_option("--tol", tol, "relative error tolerance");
  gradcheck->add_option("--seed", seed, "initialisation and noise seed");
  gradcheck->add_option("--config", config_path, "unused; accepted for symmetry");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      RunConfig cfg = resolve_config(preset, config_path);
      if (*train_seed) cfg.train.seed = seed;
      Trainer t = train_run(cfg, {corpus, valid, out, resume}, &std::cout);
      std::cout << "train_ppl=" << t.train_perplexity() << "\n";
      return 0;
    }

    EvalOptions opt;
    opt.decode.beam = beam;
    opt.decode.max_len = max_len;
    opt.greedy = greedy;
    opt.mode = parse_sample_mode(mode_name);
    opt.zero_initial_v = zero_v;
    opt.seed = seed;

    if (evaluate->parsed()) {
      Model model = load_model(checkpoint);
      Vocab vocab = Vocab::load(vocab_beside(checkpoint, vocab_path));
      auto data = load_corpus(corpus);
      std::optional<WordVectors> wv;
      if (!vectors_path.empty()) wv = WordVectors::load(vectors_path);
      EvalResult r = evaluate_model(model, vocab, data, wv ? &*wv : nullptr, opt);
      Json report = to_json(r);
      std::cout << key_value_block(r.metrics);
      if (!compare.empty()) {
        Model other = load_model(compare);
        Vocab other_vocab = Vocab::load(vocab_beside(compare, ""));
        EvalResult r2 = evaluate_model(other, other_vocab, data, wv ? &*wv : nullptr, opt);
        auto p = compare_results(r, r2, 10000, seed);
        report["compare"] = {{"checkpoint", compare}, {"metrics", r2.metrics}, {"p_value", p}};
        std::cout << key_value_block(r2.metrics, "compare.") << key_value_block(p, "p_value.");
      }
      if (out.empty()) {
        std::cout << report.dump(2) << "\n";
      } else {
        std::ofstream os(out);
        os << report.dump(2) << "\n";
      }
      return 0;
    }

    if (generate->parsed()) {
      Model model = load_model(checkpoint);
      Vocab vocab = Vocab::load(vocab_beside(checkpoint, vocab_path));
      Dialogue d;
      for (const auto& c : context) {
        Tokens t = tokenize(c);
        if (!t.empty()) d.context.push_back(t);
      }
      if (d.context.empty()) throw std::invalid_argument("generate: empty context");
      d = truncate(d, model.config.max_turns, model.config.max_tokens);
      std::vector<std::vector<int>> ids;
      for (const auto& u : d.context) ids.push_back(vocab.encode(u));
      std::cout << detokenize(vocab.decode(generate_for(model, ids, opt, 0))) << "\n";
      return 0;
    }

    if (exportv->parsed()) {
      Model model = load_model(checkpoint);
      Vocab vocab = Vocab::load(vocab_beside(checkpoint, vocab_path));
      Rng rng(seed);
      Sampler s;
      s.mode = parse_sample_mode(export_mode);
      s.rng = &rng;
      std::ofstream os(out);
      if (!os) throw std::runtime_error("cannot write " + out);
      const std::size_t rows = export_variables(model, vocab, load_corpus(corpus), os, s);
      std::cout << "rows=" << rows << "\n";
      return 0;
    }

    if (gradcheck->parsed()) {
      GradCheckOptions g;
      g.tol = tol;
      return gradcheck_all(std::cout, g, seed) ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
