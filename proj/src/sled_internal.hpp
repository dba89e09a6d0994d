#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sled/sled.hpp"

namespace sled::detail {

// Below this many scored logits per step the OpenMP fork costs more than it saves.
inline constexpr std::size_t kParallelThreshold = 1u << 16;

// Fills mass and total from clamped_cosine.
void apply_estimation(LayerScores& scores, Estimation estimation);

// Evolution update without the support/top-k contract check.
template <typename T>
std::vector<double> evolve_unchecked(std::span<const T> final_logits, std::span<const double> p_final,
                                     const LatentDistribution& latent, const EvolutionConfig& cfg);

}  // namespace sled::detail
