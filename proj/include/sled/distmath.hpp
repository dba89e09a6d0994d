#pragma once

// Probability and divergence primitives. Inputs may be float or double spans;
// every result and every accumulation is double.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sled {

// Probabilities over the vocabulary (nonnegative, sum to one).
using Distribution = std::vector<double>;

namespace detail {

inline void require_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw std::invalid_argument("temperature must be positive, got " + std::to_string(tau));
  }
}

inline void require_same_length(std::size_t a, std::size_t b) {
  if (a != b) {
    throw std::invalid_argument("length mismatch: " + std::to_string(a) + " vs " +
                                std::to_string(b));
  }
}

}  // namespace detail

template <typename T>
double max_value(std::span<const T> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (T x : v) m = std::max(m, static_cast<double>(x));
  return m;
}

// log(sum_j exp(v_j / tau)).
template <typename T>
double logsumexp(std::span<const T> logits, double tau) {
  detail::require_tau(tau);
  const double m = max_value(logits) / tau;
  double sum = 0.0;
  for (T x : logits) sum += std::exp(static_cast<double>(x) / tau - m);
  return m + std::log(sum);
}

template <typename T>
Distribution softmax_temp(std::span<const T> logits, double tau) {
  detail::require_tau(tau);
  Distribution p(logits.size());
  const double m = max_value(logits) / tau;
  double sum = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    p[j] = std::exp(static_cast<double>(logits[j]) / tau - m);
    sum += p[j];
  }
  const double inv = 1.0 / sum;
  for (double& x : p) x *= inv;
  return p;
}

template <typename T>
std::vector<double> log_softmax(std::span<const T> logits, double tau) {
  const double lse = logsumexp(logits, tau);
  std::vector<double> out(logits.size());
  for (std::size_t j = 0; j < logits.size(); ++j) out[j] = static_cast<double>(logits[j]) / tau - lse;
  return out;
}

template <typename C>
Distribution softmax_temp(const C& logits, double tau) {
  return softmax_temp(std::span<const typename C::value_type>(logits), tau);
}

template <typename C>
std::vector<double> log_softmax(const C& logits, double tau) {
  return log_softmax(std::span<const typename C::value_type>(logits), tau);
}

// KL(p || q) with 0 log 0 = 0. Returns +inf when some p_i > 0 meets q_i = 0.
double kl_div(std::span<const double> p, std::span<const double> q);

// Jensen-Shannon divergence in nats, within [0, ln 2].
double jsd(std::span<const double> p, std::span<const double> q);

// a.b / (|a||b|); exactly 0 when either norm is below 1e-12.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

inline constexpr double kCosineNormFloor = 1e-12;

// Gradient of KL(e_i || softmax(l / tau)) with respect to l, evaluated where
// softmax(l / tau) == probs: (probs - e_i) / tau.
std::vector<double> kl_grad_onehot(std::span<const double> probs, std::size_t i, double tau);

// Gradient of KL(latent || softmax(l / tau)): (probs - latent) / tau.
std::vector<double> kl_grad_latent(std::span<const double> probs, std::span<const double> latent,
                                   double tau);

// Lowest index of the maximum.
template <typename T>
std::size_t argmax(std::span<const T> v) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < v.size(); ++j) {
    if (v[j] > v[best]) best = j;
  }
  return best;
}

template <typename C>
std::size_t argmax(const C& v) {
  return argmax(std::span<const typename C::value_type>(v));
}

// Shannon entropy in nats.
double entropy(std::span<const double> p);

}  // namespace sled
