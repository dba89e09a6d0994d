#pragma once

// Comparator decoders: greedy, seeded temperature sampling and DoLa-style
// premature-layer contrast.

#include <cstdint>
#include <span>
#include <vector>

#include "sled/distmath.hpp"
#include "sled/trace.hpp"

namespace sled {

template <typename T>
TokenId greedy_step(std::span<const T> final_logits) {
  return static_cast<TokenId>(argmax(final_logits));
}

// Draws from softmax(final_logits / tau). The generator is MT19937-64
// (std::mt19937_64) seeded with `seed`; the top 53 bits of its first output
// form a uniform u in [0, 1), and the token is the first index whose
// cumulative probability exceeds u.
TokenId sample_step(std::span<const double> final_logits, double tau, std::uint64_t seed);
TokenId sample_step(std::span<const float> final_logits, double tau, std::uint64_t seed);

struct DolaConfig {
  std::vector<std::size_t> candidate_layers;  // empty means every early row
  double apc_ratio = 0.1;

  void validate(std::size_t layers) const;
  std::vector<std::size_t> resolved_layers(std::size_t layers) const;
};

struct DolaResult {
  // log p_final - log p_premature on the APC head, -inf elsewhere.
  std::vector<double> scores;
  std::size_t premature_layer = 0;
  std::vector<double> candidate_jsd;  // aligned with the resolved candidate rows
  TokenId token = 0;
};

template <typename T>
DolaResult dola_step(const LayerMatrixView<T>& step, const DolaConfig& cfg, double tau);

}  // namespace sled
