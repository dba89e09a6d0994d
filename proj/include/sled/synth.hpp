#pragma once

// Deterministic synthetic traces with planted answers.

#include <cstdint>
#include <random>
#include <vector>

#include <json.hpp>

#include "sled/harness.hpp"
#include "sled/trace.hpp"

namespace sled {

// Seeded source used by every generator: MT19937-64 with 53-bit uniforms and
// Box-Muller normals, so output does not depend on the standard library's
// distribution implementations.
class SynthRng {
 public:
  explicit SynthRng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double normal();
  // Uniform integer in [0, n).
  std::uint32_t below(std::uint32_t n);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

struct SynthSpec {
  std::uint32_t vocab_size = 16;
  std::uint32_t num_layers = 8;
  std::uint32_t num_steps = 200;
  double trap_margin = 0.5;          // final-layer lead of the distractor
  double alignment_strength = 1.0;   // scale of the early-layer displacement
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrapTrace {
  LayerLogitsTrace trace;  // tokens hold the planted truth
  std::vector<TokenId> truth;
  std::vector<TokenId> distractor;
};

// Per step: the distractor leads the truth by trap_margin in the final row,
// and early row r is displaced from the final row by
//   alignment_strength * beta_r * (softmax(final) - e_truth) + noise,
// beta_r = (L-1-r)/(L-1).
TrapTrace gen_trap_trace(const SynthSpec& spec);

// Every layer of a step carries the same random logits.
LayerLogitsTrace gen_uniform_trace(std::uint32_t vocab_size, std::uint32_t num_layers,
                                   std::uint32_t num_steps, std::uint64_t seed);

struct McFixture {
  std::vector<McExample> examples;
  McMetrics expected;  // length-normalized scoring
};

// Four examples with fixed per-token log-probs (dominant, symmetric, mixed,
// best-loses); the seed only shuffles example and candidate order.
McFixture gen_mc_fixture(std::uint64_t seed);

nlohmann::json trap_sidecar(const SynthSpec& spec, const TrapTrace& trap);

}  // namespace sled
