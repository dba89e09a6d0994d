#pragma once

// Self logits evolution: contrast the final layer with early layers to
// estimate a latent next-token distribution over the top-k final-layer
// tokens, then take one KL-gradient step on the final logits toward it.
//
//   I_k       top-k indices of the final logits
//   m_i^(n)   max(cos(l_n - l_N, softmax(l_n/tau) - e_i), 0)^2, i in I_k
//   m_i       sum_n m_i^(n) / sum_n sum_j m_j^(n)
//   s^(n)     sum_j m_j^(n) / sum_n sum_j m_j^(n)
//   l~_i      l_i - (alpha/tau)(p_i - m_i)  for i in I_k, eta otherwise
//
// sled_step is the production path (OpenMP over layers, O(d) per layer);
// sled_step_oracle scores every vocabulary token with explicit full-length
// vectors in O(d^2) per layer and is kept as the reference for tests.

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "sled/distmath.hpp"
#include "sled/trace.hpp"

namespace sled {

enum class Estimation { soft, hard };
enum class SimilaritySupport { topk_restricted, full_vocab };

Estimation parse_estimation(std::string_view name);
SimilaritySupport parse_support(std::string_view name);
std::string_view to_string(Estimation e);
std::string_view to_string(SimilaritySupport s);

struct EvolutionConfig {
  double alpha = 1.0;  // evolution rate
  std::size_t k = 5;   // evolution scale
  double tau = 1.0;
  double eta = -1000.0;
  // Early-layer rows to contrast with the final row. Empty means every row
  // except the final one.
  std::vector<std::size_t> layer_set;
  Estimation estimation = Estimation::soft;
  SimilaritySupport similarity_support = SimilaritySupport::topk_restricted;

  // Throws std::invalid_argument on a violated invariant for this shape.
  void validate(std::size_t layers, std::size_t vocab) const;
  // Explicit layer rows, sorted ascending.
  std::vector<std::size_t> resolved_layers(std::size_t layers) const;
};

// Scores of one early layer over the support.
struct LayerScores {
  std::size_t row = 0;
  std::vector<double> clamped_cosine;  // max(cos, 0) per support entry
  std::vector<double> mass;            // m_i^(n) per support entry
  double total = 0.0;                  // m^(n)
};

struct LatentDistribution {
  std::vector<TokenId> support;  // sorted ascending
  std::vector<double> masses;    // aligned with support
  std::vector<double> layer_weights;
  bool degenerate = false;
};

// Highest-mass token of one layer's own latent estimate.
struct LayerEstimate {
  std::size_t row = 0;
  std::optional<TokenId> token;  // empty when the layer contributed no mass
  double mass = 0.0;             // m_token^(n) / m^(n)
  double weight = 0.0;           // s^(n)
};

struct StepResult {
  std::vector<double> evolved_logits;
  TokenId chosen_token = 0;
  LatentDistribution latent;
  std::vector<LayerEstimate> per_layer_top_estimate;
};

// k largest entries, ties to the lower index, returned ascending.
template <typename T>
std::vector<TokenId> topk_indices(std::span<const T> final_logits, std::size_t k);

template <typename T>
LayerScores layer_latent(std::span<const T> logits_n, std::span<const T> logits_final,
                         const EvolutionConfig& cfg, std::span<const TokenId> support);

LatentDistribution ensemble_latent(std::span<const LayerScores> per_layer,
                                   std::span<const TokenId> support);

template <typename T>
std::vector<double> evolve_logits(std::span<const T> final_logits, const LatentDistribution& latent,
                                  const EvolutionConfig& cfg);

template <typename T>
StepResult sled_step(const LayerMatrixView<T>& step, const EvolutionConfig& cfg);

template <typename T>
StepResult sled_step_oracle(const LayerMatrixView<T>& step, const EvolutionConfig& cfg);

// Argmax of the evolved logits restricted to the support, ties to the lower index.
TokenId choose_token(std::span<const double> evolved, std::span<const TokenId> support);

// Layer diagnostics assembled from per-layer scores and the ensemble.
std::vector<LayerEstimate> layer_estimates(std::span<const LayerScores> per_layer,
                                           std::span<const TokenId> support,
                                           const LatentDistribution& latent);

}  // namespace sled
