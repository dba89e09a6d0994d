#include "sled/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "sled/distmath.hpp"

namespace sled {

double SynthRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::uint32_t SynthRng::below(std::uint32_t n) {
  if (n == 0) throw std::invalid_argument("below(0)");
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return static_cast<std::uint32_t>(x % n);
}

void SynthSpec::validate() const {
  if (vocab_size < 4) throw std::invalid_argument("synth vocab_size must be >= 4");
  if (num_layers < 3) throw std::invalid_argument("synth num_layers must be >= 3");
  if (num_steps < 1) throw std::invalid_argument("synth num_steps must be >= 1");
  if (!(trap_margin > 0.0)) throw std::invalid_argument("trap_margin must be positive");
  if (!(alignment_strength > 0.0)) throw std::invalid_argument("alignment_strength must be positive");
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("noise_sigma must be nonnegative");
}

TrapTrace gen_trap_trace(const SynthSpec& spec) {
  spec.validate();
  const std::size_t d = spec.vocab_size;
  const std::size_t layers = spec.num_layers;
  SynthRng rng(spec.seed);

  TrapTrace out;
  auto& trace = out.trace;
  trace.header.num_layers = spec.num_layers;
  trace.header.vocab_size = spec.vocab_size;
  trace.header.num_steps = spec.num_steps;
  trace.header.metadata = nlohmann::json{{"generator", "synth-trap"},
                                         {"seed", spec.seed},
                                         {"trap_margin", spec.trap_margin},
                                         {"alignment_strength", spec.alignment_strength},
                                         {"noise_sigma", spec.noise_sigma},
                                         {"layers", "synthetic; row L-1 is final"}}
                              .dump();
  trace.logits.resize(static_cast<std::size_t>(spec.num_steps) * layers * d);

  std::vector<double> final_row(d);
  for (std::size_t t = 0; t < spec.num_steps; ++t) {
    for (double& v : final_row) v = rng.normal();
    const TokenId truth = rng.below(spec.vocab_size);
    TokenId distractor = rng.below(spec.vocab_size - 1);
    if (distractor >= truth) ++distractor;

    double top_other = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < d; ++j) {
      if (j != truth && j != distractor) top_other = std::max(top_other, final_row[j]);
    }
    final_row[truth] = top_other + 1.0;
    final_row[distractor] = final_row[truth] + spec.trap_margin;

    // Gradient of KL(e_truth, softmax(l)) at the final logits.
    const auto probs = softmax_temp(final_row, 1.0);
    const auto grad = kl_grad_onehot(probs, truth, 1.0);

    float* step = trace.logits.data() + t * layers * d;
    for (std::size_t r = 0; r + 1 < layers; ++r) {
      const double beta = static_cast<double>(layers - 1 - r) / static_cast<double>(layers - 1);
      for (std::size_t j = 0; j < d; ++j) {
        double v = final_row[j] + spec.alignment_strength * beta * grad[j];
        if (spec.noise_sigma > 0.0) v += spec.noise_sigma * rng.normal();
        step[r * d + j] = static_cast<float>(v);
      }
    }
    for (std::size_t j = 0; j < d; ++j) step[(layers - 1) * d + j] = static_cast<float>(final_row[j]);

    out.truth.push_back(truth);
    out.distractor.push_back(distractor);
  }
  trace.tokens = out.truth;
  return out;
}

LayerLogitsTrace gen_uniform_trace(std::uint32_t vocab_size, std::uint32_t num_layers,
                                   std::uint32_t num_steps, std::uint64_t seed) {
  LayerLogitsTrace trace;
  trace.header.num_layers = num_layers;
  trace.header.vocab_size = vocab_size;
  trace.header.num_steps = num_steps;
  trace.header.metadata =
      nlohmann::json{{"generator", "synth-uniform"}, {"seed", seed}}.dump();
  if (num_layers < 2 || vocab_size < 2 || num_steps < 1) {
    throw std::invalid_argument("uniform trace needs L >= 2, d >= 2, T >= 1");
  }
  SynthRng rng(seed);
  const std::size_t d = vocab_size;
  trace.logits.resize(static_cast<std::size_t>(num_steps) * num_layers * d);
  std::vector<float> row(d);
  for (std::size_t t = 0; t < num_steps; ++t) {
    for (float& v : row) v = static_cast<float>(2.0 * rng.normal());
    float* step = trace.logits.data() + t * num_layers * d;
    for (std::size_t r = 0; r < num_layers; ++r) std::copy(row.begin(), row.end(), step + r * d);
    trace.tokens.push_back(static_cast<TokenId>(argmax(row)));
  }
  return trace;
}

namespace {

McCandidate logprob_candidate(CandidateLabel label, std::vector<double> logprobs) {
  McCandidate c;
  c.label = label;
  c.logprobs = std::move(logprobs);
  return c;
}

template <typename T>
void shuffle(std::vector<T>& v, SynthRng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[rng.below(static_cast<std::uint32_t>(i))]);
  }
}

}  // namespace

McFixture gen_mc_fixture(std::uint64_t seed) {
  using L = CandidateLabel;
  McFixture fx;

  // Mean scores: best -0.5, true -1, false -2.5, false -4.
  fx.examples.push_back({"dominant",
                         {logprob_candidate(L::best, {-0.5, -0.5}),
                          logprob_candidate(L::truthful, {-1.0, -1.0}),
                          logprob_candidate(L::untruthful, {-2.0, -3.0}),
                          logprob_candidate(L::untruthful, {-4.0, -4.0})}});
  // Every mean score is -1.
  fx.examples.push_back({"symmetric",
                         {logprob_candidate(L::best, {-1.0, -1.0}),
                          logprob_candidate(L::truthful, {-1.0}),
                          logprob_candidate(L::untruthful, {-1.0, -1.0}),
                          logprob_candidate(L::untruthful, {-1.0})}});
  // Mean scores: best -1, true -3, false -2, false -4.
  fx.examples.push_back({"mixed",
                         {logprob_candidate(L::best, {-1.0}),
                          logprob_candidate(L::truthful, {-3.0, -3.0}),
                          logprob_candidate(L::untruthful, {-2.0, -2.0}),
                          logprob_candidate(L::untruthful, {-4.0})}});
  // Mean scores: best -2.5, true -0.5, false -1.
  fx.examples.push_back({"best-loses",
                         {logprob_candidate(L::best, {-2.5, -2.5}),
                          logprob_candidate(L::truthful, {-0.5}),
                          logprob_candidate(L::untruthful, {-1.0, -1.0})}});

  // Hand values per example:
  //   MC1: 1, 0, 1, 0
  //   MC3: 1, 0, 1/2, 1/2
  //   MC2: (e^-.5 + e^-1) / (e^-.5 + e^-1 + e^-2.5 + e^-4) = 0.906587612194496454
  //        1/2
  //        (e^-1 + e^-3) / (e^-1 + e^-3 + e^-2 + e^-4)     = 0.731058578630004879
  //        (e^-2.5 + e^-.5) / (e^-2.5 + e^-.5 + e^-1)     = 0.651792572116265148
  fx.expected.examples = 4;
  fx.expected.mc1 = 0.5;
  fx.expected.mc3 = 0.5;
  fx.expected.mc2 = 0.697359690735191620;

  SynthRng rng(seed);
  shuffle(fx.examples, rng);
  for (auto& ex : fx.examples) shuffle(ex.candidates, rng);
  return fx;
}

nlohmann::json trap_sidecar(const SynthSpec& spec, const TrapTrace& trap) {
  return {{"generator", "synth-trap"},
          {"vocab_size", spec.vocab_size},
          {"num_layers", spec.num_layers},
          {"num_steps", spec.num_steps},
          {"trap_margin", spec.trap_margin},
          {"alignment_strength", spec.alignment_strength},
          {"noise_sigma", spec.noise_sigma},
          {"seed", spec.seed},
          {"truth", trap.truth},
          {"distractor", trap.distractor}};
}

}  // namespace sled
