#pragma once

// Teacher-forced evaluation over traces: per-step decoding, candidate
// scoring for multiple-choice factuality metrics, (alpha, k) sweeps and
// per-token latency measurement.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sled/baselines.hpp"
#include "sled/sled.hpp"
#include "sled/trace.hpp"

namespace sled {

enum class Method { greedy, dola, sled };

Method parse_method(std::string_view name);
std::string_view to_string(Method m);

struct MethodConfig {
  Method method = Method::greedy;
  double tau = 1.0;  // shared by every method; overrides sled.tau
  EvolutionConfig sled;
  DolaConfig dola;

  EvolutionConfig evolution() const {
    EvolutionConfig cfg = sled;
    cfg.tau = tau;
    return cfg;
  }
};

struct StepDiagnostics {
  TokenId token = 0;
  std::optional<LatentDistribution> latent;  // sled only
  std::vector<LayerEstimate> layers;         // sled only
  std::optional<std::size_t> premature_layer;  // dola only
};

struct DecodeResult {
  std::vector<TokenId> tokens;
  std::vector<StepDiagnostics> steps;
};

// Applies the method independently at each step. Steps run in parallel;
// results are ordered by step.
DecodeResult decode_trace(const LayerLogitsTrace& trace, const MethodConfig& cfg);

// Next-token log-probabilities at one step under the method's final
// distribution: softmax of the evolved logits for sled, the APC-masked
// renormalized contrast for dola, the plain softmax for greedy.
std::vector<double> step_log_probs(const StepView& step, const MethodConfig& cfg);

// Mean (or, without length normalization, sum) over steps of the log-prob of
// each step's stored token.
double score_candidate(const LayerLogitsTrace& candidate, const MethodConfig& cfg,
                       bool length_norm = true);

// ---------------------------------------------------------------------------
// Multiple choice

enum class CandidateLabel { best, truthful, untruthful };

CandidateLabel parse_label(std::string_view name);
std::string_view to_string(CandidateLabel label);

struct McCandidate {
  CandidateLabel label = CandidateLabel::untruthful;
  // Exactly one of these is used: a trace scored by the method, or
  // precomputed per-token log-probs (method-independent).
  std::optional<LayerLogitsTrace> trace;
  std::vector<double> logprobs;

  bool is_true() const { return label != CandidateLabel::untruthful; }
};

struct McExample {
  std::string id;
  std::vector<McCandidate> candidates;
};

struct McMetrics {
  std::optional<double> mc1;
  double mc2 = 0.0;
  double mc3 = 0.0;
  std::size_t examples = 0;
};

// Per-example metric values, before averaging.
struct McExampleMetrics {
  std::optional<double> mc1;
  double mc2 = 0.0;
  double mc3 = 0.0;
};

void validate_example(const McExample& example);

double score_mc_candidate(const McCandidate& candidate, const MethodConfig& cfg,
                          bool length_norm = true);

// scores[e][c] is the score of candidate c of example e.
McExampleMetrics mc_example_metrics(const McExample& example, std::span<const double> scores,
                                    bool require_mc1 = true);
McMetrics mc_metrics(std::span<const McExample> examples,
                     std::span<const std::vector<double>> scores, bool require_mc1 = true);

// Directory layout: <dir>/labels.json plus any candidate traces it names.
//   {"examples": [{"id": "...", "candidates": [
//       {"label": "best" | "true" | "false", "trace": "relative/path.slt"},
//       {"label": "...", "logprobs": [-1.0, ...]}]}],
//    "expected": {"mc1": ..., "mc2": ..., "mc3": ...}}      (optional)
inline constexpr std::string_view kLabelsFile = "labels.json";

struct McDirectory {
  std::vector<McExample> examples;
  std::optional<nlohmann::json> expected;
};

McDirectory load_mc_directory(const std::string& dir);
// Writes logprob candidates inline; trace candidates are written as
// <id>_c<index>.slt next to labels.json.
void write_mc_directory(const std::string& dir, std::span<const McExample> examples,
                        const std::optional<nlohmann::json>& expected);

// ---------------------------------------------------------------------------
// Sweeps

struct LabeledTrace {
  LayerLogitsTrace trace;
  std::vector<TokenId> labels;  // expected token per step
};

struct SweepRow {
  double alpha = 0.0;
  std::size_t k = 0;
  double accuracy = 0.0;
  double mean_latent_entropy = 0.0;  // over non-degenerate sled steps
  double degenerate_fraction = 0.0;
  double seconds_per_token = 0.0;
  std::size_t steps = 0;
};

struct SweepResult {
  Method method = Method::sled;
  std::vector<SweepRow> rows;  // alpha-major, then k, in grid order

  const SweepRow& best() const;
};

SweepRow evaluate_labeled(std::span<const LabeledTrace> data, const MethodConfig& cfg);

SweepResult sweep(std::span<const LabeledTrace> data, const MethodConfig& base,
                  std::span<const double> alpha_grid, std::span<const std::size_t> k_grid);

void write_sweep_csv(const SweepResult& result, std::ostream& out);
nlohmann::json sweep_json(const SweepResult& result);

// ---------------------------------------------------------------------------
// Latency

struct LatencyRow {
  Method method = Method::greedy;
  double mean_seconds = 0.0;  // per token
  double p50_seconds = 0.0;
  double p95_seconds = 0.0;
  double overhead_vs_greedy = 0.0;  // mean / greedy mean; 0 if greedy not measured
  std::size_t samples = 0;
};

struct BenchOptions {
  std::size_t repetitions = 5;
  int threads = 1;
};

// Times each method's per-step decision over every step of the trace, after
// one untimed warmup pass. Returns one row per method in the order given.
std::vector<LatencyRow> bench(const LayerLogitsTrace& trace, std::span<const Method> methods,
                              const MethodConfig& base, const BenchOptions& options);

void write_latency_csv(std::span<const LatencyRow> rows, std::ostream& out);
nlohmann::json latency_json(std::span<const LatencyRow> rows);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

// Ordinary least squares y = slope * x + intercept.
LinearFit linear_fit(std::span<const double> x, std::span<const double> y);

}  // namespace sled
