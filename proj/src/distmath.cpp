#include "sled/distmath.hpp"

namespace sled {

double kl_div(std::span<const double> p, std::span<const double> q) {
  detail::require_same_length(p.size(), q.size());
  double sum = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] <= 0.0) continue;
    if (q[j] <= 0.0) return std::numeric_limits<double>::infinity();
    sum += p[j] * std::log(p[j] / q[j]);
  }
  return std::max(sum, 0.0);
}

double jsd(std::span<const double> p, std::span<const double> q) {
  detail::require_same_length(p.size(), q.size());
  // Each half-term is KL against the midpoint, which never vanishes where p or q is positive.
  double sum = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    const double m = 0.5 * (p[j] + q[j]);
    if (p[j] > 0.0) sum += 0.5 * p[j] * std::log(p[j] / m);
    if (q[j] > 0.0) sum += 0.5 * q[j] * std::log(q[j] / m);
  }
  return std::clamp(sum, 0.0, std::log(2.0));
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  detail::require_same_length(a.size(), b.size());
  double dot = 0.0;
  double aa = 0.0;
  double bb = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    dot += a[j] * b[j];
    aa += a[j] * a[j];
    bb += b[j] * b[j];
  }
  const double na = std::sqrt(aa);
  const double nb = std::sqrt(bb);
  if (na < kCosineNormFloor || nb < kCosineNormFloor) return 0.0;
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

std::vector<double> kl_grad_onehot(std::span<const double> probs, std::size_t i, double tau) {
  detail::require_tau(tau);
  if (i >= probs.size()) {
    throw std::out_of_range("token index " + std::to_string(i) + " out of range");
  }
  std::vector<double> g(probs.size());
  for (std::size_t j = 0; j < probs.size(); ++j) g[j] = probs[j] / tau;
  g[i] = (probs[i] - 1.0) / tau;
  return g;
}

std::vector<double> kl_grad_latent(std::span<const double> probs, std::span<const double> latent,
                                   double tau) {
  detail::require_tau(tau);
  detail::require_same_length(probs.size(), latent.size());
  std::vector<double> g(probs.size());
  for (std::size_t j = 0; j < probs.size(); ++j) g[j] = (probs[j] - latent[j]) / tau;
  return g;
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double x : p) {
    if (x > 0.0) h -= x * std::log(x);
  }
  return h;
}

}  // namespace sled
