#include "sled/sled.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "sled_internal.hpp"

namespace sled {

Estimation parse_estimation(std::string_view name) {
  if (name == "soft") return Estimation::soft;
  if (name == "hard") return Estimation::hard;
  throw std::invalid_argument("unknown estimation mode '" + std::string(name) + "'");
}

SimilaritySupport parse_support(std::string_view name) {
  if (name == "topk" || name == "topk_restricted") return SimilaritySupport::topk_restricted;
  if (name == "full" || name == "full_vocab") return SimilaritySupport::full_vocab;
  throw std::invalid_argument("unknown similarity support '" + std::string(name) + "'");
}

std::string_view to_string(Estimation e) { return e == Estimation::soft ? "soft" : "hard"; }

std::string_view to_string(SimilaritySupport s) {
  return s == SimilaritySupport::topk_restricted ? "topk" : "full";
}

void EvolutionConfig::validate(std::size_t layers, std::size_t vocab) const {
  if (layers < 2) throw std::invalid_argument("need at least two layers");
  if (k < 1 || k > vocab) {
    throw std::invalid_argument("k must be in [1, " + std::to_string(vocab) + "], got " +
                                std::to_string(k));
  }
  if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("tau must be positive");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
    throw std::invalid_argument("alpha must be nonnegative");
  }
  if (!(eta <= -100.0)) throw std::invalid_argument("eta must be <= -100");
  for (std::size_t row : layer_set) {
    if (row >= layers - 1) {
      throw std::invalid_argument("layer row " + std::to_string(row) +
                                  " is not an early layer (final row is " +
                                  std::to_string(layers - 1) + ")");
    }
  }
}

std::vector<std::size_t> EvolutionConfig::resolved_layers(std::size_t layers) const {
  std::vector<std::size_t> rows = layer_set;
  if (rows.empty()) {
    rows.resize(layers - 1);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
  }
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  return rows;
}

template <typename T>
std::vector<TokenId> topk_indices(std::span<const T> final_logits, std::size_t k) {
  const std::size_t d = final_logits.size();
  if (k < 1 || k > d) {
    throw std::invalid_argument("k must be in [1, " + std::to_string(d) + "], got " +
                                std::to_string(k));
  }
  std::vector<TokenId> idx(d);
  std::iota(idx.begin(), idx.end(), TokenId{0});
  auto before = [&](TokenId a, TokenId b) {
    return final_logits[a] > final_logits[b] || (final_logits[a] == final_logits[b] && a < b);
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), before);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

namespace detail {

void apply_estimation(LayerScores& scores, Estimation estimation) {
  const std::size_t n = scores.clamped_cosine.size();
  scores.mass.assign(n, 0.0);
  if (estimation == Estimation::soft) {
    for (std::size_t a = 0; a < n; ++a) scores.mass[a] = scores.clamped_cosine[a] * scores.clamped_cosine[a];
  } else {
    const std::size_t win = argmax(std::span<const double>(scores.clamped_cosine));
    scores.mass[win] = scores.clamped_cosine[win] * scores.clamped_cosine[win];
  }
  scores.total = std::accumulate(scores.mass.begin(), scores.mass.end(), 0.0);
}

// O(d) scoring: every candidate vector P_n - e_i differs from P_n in one
// coordinate, so its dot product and norm follow from shared sums.
template <typename T>
LayerScores layer_latent_fast(std::span<const T> logits_n, std::span<const T> logits_final,
                              const EvolutionConfig& cfg, std::span<const TokenId> support) {
  const double tau = cfg.tau;
  const double lse = logsumexp(logits_n, tau);

  double diff_sq = 0.0;
  double q_sq = 0.0;
  double diff_q = 0.0;
  auto accumulate_at = [&](std::size_t j) {
    const double diff = static_cast<double>(logits_n[j]) - static_cast<double>(logits_final[j]);
    const double q = std::exp(static_cast<double>(logits_n[j]) / tau - lse);
    diff_sq += diff * diff;
    q_sq += q * q;
    diff_q += diff * q;
  };
  if (cfg.similarity_support == SimilaritySupport::full_vocab) {
    for (std::size_t j = 0; j < logits_n.size(); ++j) accumulate_at(j);
  } else {
    for (TokenId j : support) accumulate_at(j);
  }

  LayerScores out;
  out.clamped_cosine.assign(support.size(), 0.0);
  const double diff_norm = std::sqrt(diff_sq);
  if (diff_norm >= kCosineNormFloor) {
    for (std::size_t a = 0; a < support.size(); ++a) {
      const TokenId i = support[a];
      const double diff_i = static_cast<double>(logits_n[i]) - static_cast<double>(logits_final[i]);
      const double log_q = static_cast<double>(logits_n[i]) / tau - lse;
      const double q_i = std::exp(log_q);
      const double one_minus_q = -std::expm1(log_q);
      const double v_sq = std::max(q_sq - q_i * q_i, 0.0) + one_minus_q * one_minus_q;
      const double v_norm = std::sqrt(v_sq);
      if (v_norm < kCosineNormFloor) continue;
      const double cos = std::clamp((diff_q - diff_i) / (diff_norm * v_norm), -1.0, 1.0);
      out.clamped_cosine[a] = std::max(cos, 0.0);
    }
  }
  apply_estimation(out, cfg.estimation);
  return out;
}

template <typename T>
std::vector<double> evolve_unchecked(std::span<const T> final_logits, std::span<const double> p_final,
                                     const LatentDistribution& latent, const EvolutionConfig& cfg) {
  std::vector<double> out(final_logits.size(), cfg.eta);
  const double step = cfg.alpha / cfg.tau;
  for (std::size_t a = 0; a < latent.support.size(); ++a) {
    const TokenId i = latent.support[a];
    const double l = static_cast<double>(final_logits[i]);
    out[i] = latent.degenerate ? l : l - step * (p_final[i] - latent.masses[a]);
  }
  return out;
}

template std::vector<double> evolve_unchecked<float>(std::span<const float>, std::span<const double>,
                                                     const LatentDistribution&,
                                                     const EvolutionConfig&);
template std::vector<double> evolve_unchecked<double>(std::span<const double>,
                                                      std::span<const double>,
                                                      const LatentDistribution&,
                                                      const EvolutionConfig&);

}  // namespace detail

template <typename T>
LayerScores layer_latent(std::span<const T> logits_n, std::span<const T> logits_final,
                         const EvolutionConfig& cfg, std::span<const TokenId> support) {
  detail::require_same_length(logits_n.size(), logits_final.size());
  detail::require_tau(cfg.tau);
  for (TokenId i : support) {
    if (i >= logits_n.size()) throw std::out_of_range("support index out of range");
  }
  return detail::layer_latent_fast(logits_n, logits_final, cfg, support);
}

LatentDistribution ensemble_latent(std::span<const LayerScores> per_layer,
                                   std::span<const TokenId> support) {
  if (per_layer.empty()) throw std::invalid_argument("ensemble needs at least one layer");
  LatentDistribution latent;
  latent.support.assign(support.begin(), support.end());
  latent.masses.assign(support.size(), 0.0);
  latent.layer_weights.assign(per_layer.size(), 0.0);

  double total = 0.0;
  for (const auto& layer : per_layer) {
    if (layer.mass.size() != support.size()) {
      throw std::invalid_argument("layer scores do not match the support");
    }
    total += layer.total;
  }
  if (!(total > 0.0)) {
    latent.degenerate = true;
    return latent;
  }
  for (std::size_t n = 0; n < per_layer.size(); ++n) {
    for (std::size_t a = 0; a < support.size(); ++a) latent.masses[a] += per_layer[n].mass[a];
    latent.layer_weights[n] = per_layer[n].total / total;
  }
  for (double& m : latent.masses) m /= total;
  return latent;
}

template <typename T>
std::vector<double> evolve_logits(std::span<const T> final_logits, const LatentDistribution& latent,
                                  const EvolutionConfig& cfg) {
  detail::require_tau(cfg.tau);
  if (latent.support != topk_indices(final_logits, cfg.k)) {
    throw std::logic_error("latent support does not match the top-k of the final logits");
  }
  if (latent.masses.size() != latent.support.size()) {
    throw std::logic_error("latent masses do not match the support");
  }
  const auto p_final = softmax_temp(final_logits, cfg.tau);
  return detail::evolve_unchecked(final_logits, std::span<const double>(p_final), latent, cfg);
}

TokenId choose_token(std::span<const double> evolved, std::span<const TokenId> support) {
  if (support.empty()) throw std::invalid_argument("empty support");
  TokenId best = support[0];
  for (TokenId i : support) {
    if (evolved[i] > evolved[best]) best = i;
  }
  return best;
}

std::vector<LayerEstimate> layer_estimates(std::span<const LayerScores> per_layer,
                                           std::span<const TokenId> support,
                                           const LatentDistribution& latent) {
  std::vector<LayerEstimate> out(per_layer.size());
  for (std::size_t n = 0; n < per_layer.size(); ++n) {
    const auto& layer = per_layer[n];
    out[n].row = layer.row;
    out[n].weight = latent.degenerate ? 0.0 : latent.layer_weights[n];
    if (layer.total > 0.0) {
      const std::size_t a = argmax(std::span<const double>(layer.mass));
      out[n].token = support[a];
      out[n].mass = layer.mass[a] / layer.total;
    }
  }
  return out;
}

template <typename T>
StepResult sled_step(const LayerMatrixView<T>& step, const EvolutionConfig& cfg) {
  cfg.validate(step.layers, step.vocab);
  const auto final_row = step.final_row();
  const auto rows = cfg.resolved_layers(step.layers);
  const auto support = topk_indices(final_row, cfg.k);

  std::vector<LayerScores> per_layer(rows.size());
  const std::ptrdiff_t count = static_cast<std::ptrdiff_t>(rows.size());
  const bool parallel = rows.size() > 1 && rows.size() * step.vocab >= detail::kParallelThreshold;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::ptrdiff_t n = 0; n < count; ++n) {
    const auto r = rows[static_cast<std::size_t>(n)];
    per_layer[static_cast<std::size_t>(n)] =
        detail::layer_latent_fast(step.row(r), final_row, cfg, std::span<const TokenId>(support));
    per_layer[static_cast<std::size_t>(n)].row = r;
  }

  StepResult result;
  result.latent = ensemble_latent(per_layer, support);
  const auto p_final = softmax_temp(final_row, cfg.tau);
  result.evolved_logits =
      detail::evolve_unchecked(final_row, std::span<const double>(p_final), result.latent, cfg);
  result.chosen_token = choose_token(result.evolved_logits, support);
  result.per_layer_top_estimate = layer_estimates(per_layer, support, result.latent);
  return result;
}

#define SLED_INSTANTIATE(T)                                                                     \
  template std::vector<TokenId> topk_indices<T>(std::span<const T>, std::size_t);               \
  template LayerScores layer_latent<T>(std::span<const T>, std::span<const T>,                  \
                                       const EvolutionConfig&, std::span<const TokenId>);       \
  template std::vector<double> evolve_logits<T>(std::span<const T>, const LatentDistribution&, \
                                                const EvolutionConfig&);                        \
  template StepResult sled_step<T>(const LayerMatrixView<T>&, const EvolutionConfig&);

SLED_INSTANTIATE(float)
SLED_INSTANTIATE(double)

#undef SLED_INSTANTIATE

}  // namespace sled
