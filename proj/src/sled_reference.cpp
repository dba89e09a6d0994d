// Serial reference for sled_step. Every vocabulary token is scored against
// explicitly materialized vectors; nothing is shared between
// candidates and no OpenMP is used. O(d^2) per layer.

#include <algorithm>
#include <numeric>

#include "sled/sled.hpp"
#include "sled_internal.hpp"

namespace sled {

template <typename T>
StepResult sled_step_oracle(const LayerMatrixView<T>& step, const EvolutionConfig& cfg) {
  cfg.validate(step.layers, step.vocab);
  const std::size_t d = step.vocab;
  const auto final_row = step.final_row();
  const auto rows = cfg.resolved_layers(step.layers);
  const auto support = topk_indices(final_row, cfg.k);

  std::vector<LayerScores> per_layer;
  per_layer.reserve(rows.size());
  for (std::size_t r : rows) {
    const auto early = step.row(r);
    const Distribution probs = softmax_temp(early, cfg.tau);

    // Coordinates the cosine is taken over: the whole vocabulary, or the
    // support itself with P left unrenormalized.
    std::vector<std::size_t> coords;
    if (cfg.similarity_support == SimilaritySupport::full_vocab) {
      coords.resize(d);
      std::iota(coords.begin(), coords.end(), std::size_t{0});
    } else {
      coords.assign(support.begin(), support.end());
    }

    std::vector<double> diff;
    for (std::size_t j : coords) {
      diff.push_back(static_cast<double>(early[j]) - static_cast<double>(final_row[j]));
    }

    std::vector<double> clamped_all(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
      std::vector<double> target;
      for (std::size_t j : coords) target.push_back(probs[j] - (j == i ? 1.0 : 0.0));
      clamped_all[i] = std::max(cosine_similarity(diff, target), 0.0);
    }

    LayerScores scores;
    scores.row = r;
    for (TokenId i : support) scores.clamped_cosine.push_back(clamped_all[i]);
    detail::apply_estimation(scores, cfg.estimation);
    per_layer.push_back(std::move(scores));
  }

  StepResult result;
  result.latent = ensemble_latent(per_layer, support);
  const Distribution p_final = softmax_temp(final_row, cfg.tau);
  result.evolved_logits = std::vector<double>(d, cfg.eta);
  for (std::size_t a = 0; a < support.size(); ++a) {
    const TokenId i = support[a];
    const double l = static_cast<double>(final_row[i]);
    result.evolved_logits[i] =
        result.latent.degenerate ? l : l - cfg.alpha / cfg.tau * (p_final[i] - result.latent.masses[a]);
  }
  result.chosen_token = choose_token(result.evolved_logits, support);
  result.per_layer_top_estimate = layer_estimates(per_layer, support, result.latent);
  return result;
}

template StepResult sled_step_oracle<float>(const LayerMatrixView<float>&, const EvolutionConfig&);
template StepResult sled_step_oracle<double>(const LayerMatrixView<double>&, const EvolutionConfig&);

}  // namespace sled
