#include "sled/baselines.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace sled {

namespace {

template <typename T>
TokenId sample_impl(std::span<const T> final_logits, double tau, std::uint64_t seed) {
  const Distribution p = softmax_temp(final_logits, tau);
  std::mt19937_64 engine(seed);
  const double u = static_cast<double>(engine() >> 11) * 0x1.0p-53;
  double cumulative = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    cumulative += p[j];
    if (u < cumulative) return static_cast<TokenId>(j);
  }
  // Rounding left u above the final cumulative sum; take the last token with mass.
  for (std::size_t j = p.size(); j-- > 0;) {
    if (p[j] > 0.0) return static_cast<TokenId>(j);
  }
  return 0;
}

}  // namespace

TokenId sample_step(std::span<const double> final_logits, double tau, std::uint64_t seed) {
  return sample_impl(final_logits, tau, seed);
}

TokenId sample_step(std::span<const float> final_logits, double tau, std::uint64_t seed) {
  return sample_impl(final_logits, tau, seed);
}

void DolaConfig::validate(std::size_t layers) const {
  if (layers < 2) throw std::invalid_argument("need at least two layers");
  if (!(apc_ratio > 0.0 && apc_ratio <= 1.0)) {
    throw std::invalid_argument("apc_ratio must be in (0, 1]");
  }
  for (std::size_t row : candidate_layers) {
    if (row >= layers - 1) {
      throw std::invalid_argument("candidate row " + std::to_string(row) + " is not an early layer");
    }
  }
}

std::vector<std::size_t> DolaConfig::resolved_layers(std::size_t layers) const {
  std::vector<std::size_t> rows = candidate_layers;
  if (rows.empty()) {
    rows.resize(layers - 1);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
  }
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  return rows;
}

template <typename T>
DolaResult dola_step(const LayerMatrixView<T>& step, const DolaConfig& cfg, double tau) {
  cfg.validate(step.layers);
  const auto rows = cfg.resolved_layers(step.layers);
  if (rows.empty()) throw std::invalid_argument("empty DoLa candidate set");

  const auto final_row = step.final_row();
  const Distribution p_final = softmax_temp(final_row, tau);
  const std::vector<double> logp_final = log_softmax(final_row, tau);

  DolaResult out;
  out.candidate_jsd.resize(rows.size());
  std::size_t best = 0;
  for (std::size_t c = 0; c < rows.size(); ++c) {
    const Distribution p_early = softmax_temp(step.row(rows[c]), tau);
    out.candidate_jsd[c] = jsd(p_final, p_early);
    if (out.candidate_jsd[c] > out.candidate_jsd[best]) best = c;
  }
  out.premature_layer = rows[best];

  const std::vector<double> logp_premature = log_softmax(step.row(out.premature_layer), tau);
  const double threshold = cfg.apc_ratio * *std::max_element(p_final.begin(), p_final.end());
  out.scores.assign(final_row.size(), -std::numeric_limits<double>::infinity());
  for (std::size_t j = 0; j < final_row.size(); ++j) {
    if (p_final[j] >= threshold) out.scores[j] = logp_final[j] - logp_premature[j];
  }
  out.token = static_cast<TokenId>(argmax(out.scores));
  return out;
}

template DolaResult dola_step<float>(const LayerMatrixView<float>&, const DolaConfig&, double);
template DolaResult dola_step<double>(const LayerMatrixView<double>&, const DolaConfig&, double);

}  // namespace sled
