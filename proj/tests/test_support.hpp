#pragma once

// Shared fixtures and independent oracles for the test suites. Nothing here
// calls into the code paths it is used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include "sled/synth.hpp"
#include "sled/trace.hpp"

namespace sled::testing {

using Wide = boost::multiprecision::cpp_bin_float_50;

// Owned (layers x vocab) matrix in double precision.
struct Matrix {
  std::vector<double> values;
  std::size_t layers = 0;
  std::size_t vocab = 0;

  LayerMatrixView<double> view() const { return {values, layers, vocab}; }
  std::vector<double> row(std::size_t r) const {
    return {values.begin() + static_cast<std::ptrdiff_t>(r * vocab),
            values.begin() + static_cast<std::ptrdiff_t>((r + 1) * vocab)};
  }
};

// Final row ~ N(0, final_scale^2); early rows = final + N(0, spread^2).
inline Matrix random_matrix(SynthRng& rng, std::size_t layers, std::size_t vocab,
                            double final_scale = 2.0, double spread = 1.0) {
  Matrix m{std::vector<double>(layers * vocab), layers, vocab};
  const std::size_t fin = (layers - 1) * vocab;
  for (std::size_t j = 0; j < vocab; ++j) m.values[fin + j] = final_scale * rng.normal();
  for (std::size_t r = 0; r + 1 < layers; ++r) {
    for (std::size_t j = 0; j < vocab; ++j) {
      m.values[r * vocab + j] = m.values[fin + j] + spread * rng.normal();
    }
  }
  return m;
}

inline std::vector<double> random_simplex(SynthRng& rng, std::size_t d) {
  std::vector<double> p(d);
  double sum = 0.0;
  for (double& x : p) {
    x = -std::log(std::max(rng.uniform(), 1e-300));
    sum += x;
  }
  for (double& x : p) x /= sum;
  return p;
}

inline LayerLogitsTrace random_trace(SynthRng& rng, std::uint32_t layers, std::uint32_t vocab,
                                     std::uint32_t steps) {
  LayerLogitsTrace t;
  t.header.num_layers = layers;
  t.header.vocab_size = vocab;
  t.header.num_steps = steps;
  t.logits.resize(static_cast<std::size_t>(layers) * vocab * steps);
  for (float& v : t.logits) v = static_cast<float>(3.0 * rng.normal());
  for (std::uint32_t s = 0; s < steps; ++s) t.tokens.push_back(rng.below(vocab));
  return t;
}

// softmax(l / tau) in 50-digit arithmetic.
inline std::vector<Wide> wide_softmax(const std::vector<double>& logits, double tau) {
  std::vector<Wide> out(logits.size());
  Wide mx = Wide(*std::max_element(logits.begin(), logits.end())) / Wide(tau);
  Wide sum = 0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    out[j] = exp(Wide(logits[j]) / Wide(tau) - mx);
    sum += out[j];
  }
  for (auto& x : out) x /= sum;
  return out;
}

// KL(target || softmax(l / tau)) in double, straight from the definition.
inline double kl_target_softmax(const std::vector<double>& target, const std::vector<double>& logits,
                                double tau) {
  double mx = *std::max_element(logits.begin(), logits.end()) / tau;
  double z = 0.0;
  for (double l : logits) z += std::exp(l / tau - mx);
  const double log_z = mx + std::log(z);
  double kl = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (target[j] > 0.0) kl += target[j] * (std::log(target[j]) - (logits[j] / tau - log_z));
  }
  return kl;
}

// Central differences of f at x with step h.
inline std::vector<double> central_difference(const std::function<double(const std::vector<double>&)>& f,
                                              std::vector<double> x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double keep = x[j];
    x[j] = keep + h;
    const double up = f(x);
    x[j] = keep - h;
    const double down = f(x);
    x[j] = keep;
    g[j] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0;
  double norm = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    diff += (a[j] - b[j]) * (a[j] - b[j]);
    norm += b[j] * b[j];
  }
  return std::sqrt(diff) / std::max(std::sqrt(norm), 1e-300);
}

// Clamped cosine of (l_n - l_N) with (softmax(l_n/tau) - e_i) over the index
// set `coords`, evaluated in 50-digit arithmetic.
inline double wide_clamped_cosine(const std::vector<double>& early, const std::vector<double>& fin,
                                  double tau, std::size_t i, const std::vector<std::size_t>& coords) {
  const auto p = wide_softmax(early, tau);
  Wide dot = 0, aa = 0, bb = 0;
  for (std::size_t j : coords) {
    const Wide a = Wide(early[j]) - Wide(fin[j]);
    const Wide b = p[j] - (j == i ? Wide(1) : Wide(0));
    dot += a * b;
    aa += a * a;
    bb += b * b;
  }
  if (sqrt(aa) < Wide(1e-12) || sqrt(bb) < Wide(1e-12)) return 0.0;
  const Wide c = dot / (sqrt(aa) * sqrt(bb));
  return c > 0 ? static_cast<double>(c) : 0.0;
}

}  // namespace sled::testing
