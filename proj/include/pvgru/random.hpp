#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pvgru/tensor.hpp"

namespace pvgru {

/// Seeded generator. Distribution objects are created per call so the engine
/// state alone determines every future draw (and can be checkpointed).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  Tensor normal(Shape shape) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, 1.0);
    for (double& v : t.values()) v = dist(engine_);
    return t;
  }

  double uniform(double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    return dist(engine_);
  }

  std::size_t index(std::size_t n) {
    std::uniform_int_distribution<std::size_t> dist(0, n - 1);
    return dist(engine_);
  }

  std::mt19937_64& engine() { return engine_; }

  /// Engine state as 32-bit words (each exactly representable as a double).
  std::vector<std::uint32_t> state_words() const {
    std::ostringstream os;
    os << engine_;
    std::istringstream is(os.str());
    std::vector<std::uint32_t> words;
    std::uint64_t w;
    while (is >> w) {
      words.push_back(static_cast<std::uint32_t>(w >> 32));
      words.push_back(static_cast<std::uint32_t>(w & 0xffffffffu));
    }
    return words;
  }

  void set_state_words(const std::vector<std::uint32_t>& words) {
    if (words.size() % 2 != 0) throw std::invalid_argument("rng state: odd word count");
    std::ostringstream os;
    for (std::size_t i = 0; i < words.size(); i += 2) {
      if (i) os << ' ';
      os << ((static_cast<std::uint64_t>(words[i]) << 32) | words[i + 1]);
    }
    std::istringstream is(os.str());
    is >> engine_;
    if (is.fail()) throw std::invalid_argument("rng state: malformed");
  }

 private:
  std::mt19937_64 engine_;
};

enum class SampleMode { sample, mean };

inline const char* to_string(SampleMode m) { return m == SampleMode::sample ? "sample" : "mean"; }

inline SampleMode parse_sample_mode(const std::string& s) {
  if (s == "sample") return SampleMode::sample;
  if (s == "mean") return SampleMode::mean;
  throw std::invalid_argument("unknown sampling mode '" + s + "' (expected sample or mean)");
}

/// Source of reparameterisation noise for the summarizing variable.
/// With shared_rows, a single row is drawn per request and repeated across rows,
/// so every hypothesis in a beam sees the same noise at a given step.
struct Sampler {
  SampleMode mode = SampleMode::mean;
  Rng* rng = nullptr;
  bool shared_rows = false;
  bool zero_initial_v = false;

  static Sampler mean() { return Sampler{}; }
  static Sampler sample(Rng& rng) { return Sampler{SampleMode::sample, &rng, false, false}; }

  bool stochastic() const { return mode == SampleMode::sample; }

  Tensor draw(std::size_t rows, std::size_t cols) {
    if (!stochastic() || rng == nullptr) return Tensor(Shape{rows, cols});
    if (!shared_rows) return rng->normal(Shape{rows, cols});
    Tensor one = rng->normal(Shape{1, cols});
    Tensor out(Shape{rows, cols});
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = one[c];
    return out;
  }
};

}  // namespace pvgru
