#include "sled/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <omp.h>

namespace sled {

namespace fs = std::filesystem;

Method parse_method(std::string_view name) {
  if (name == "greedy") return Method::greedy;
  if (name == "dola") return Method::dola;
  if (name == "sled") return Method::sled;
  throw std::invalid_argument("unknown method '" + std::string(name) + "'");
}

std::string_view to_string(Method m) {
  switch (m) {
    case Method::greedy: return "greedy";
    case Method::dola: return "dola";
    case Method::sled: return "sled";
  }
  return "?";
}

namespace {

StepDiagnostics decode_step(const StepView& step, const MethodConfig& cfg,
                            const EvolutionConfig& evolution) {
  StepDiagnostics diag;
  switch (cfg.method) {
    case Method::greedy:
      diag.token = greedy_step(step.matrix.final_row());
      break;
    case Method::dola: {
      const auto r = dola_step(step.matrix, cfg.dola, cfg.tau);
      diag.token = r.token;
      diag.premature_layer = r.premature_layer;
      break;
    }
    case Method::sled: {
      auto r = sled_step(step.matrix, evolution);
      diag.token = r.chosen_token;
      diag.latent = std::move(r.latent);
      diag.layers = std::move(r.per_layer_top_estimate);
      break;
    }
  }
  return diag;
}

void validate_method(const MethodConfig& cfg, std::size_t layers, std::size_t vocab) {
  detail::require_tau(cfg.tau);
  if (cfg.method == Method::sled) cfg.evolution().validate(layers, vocab);
  if (cfg.method == Method::dola) cfg.dola.validate(layers);
}

double log_sum_exp(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double sum = 0.0;
  for (double x : v) sum += std::exp(x - m);
  return m + std::log(sum);
}

}  // namespace

DecodeResult decode_trace(const LayerLogitsTrace& trace, const MethodConfig& cfg) {
  validate_trace(trace);
  validate_method(cfg, trace.header.num_layers, trace.header.vocab_size);
  const auto evolution = cfg.evolution();
  const std::ptrdiff_t steps = trace.header.num_steps;

  DecodeResult out;
  out.steps.resize(static_cast<std::size_t>(steps));
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t t = 0; t < steps; ++t) {
    const auto view = step_view(trace, static_cast<std::size_t>(t));
    out.steps[static_cast<std::size_t>(t)] = decode_step(view, cfg, evolution);
  }
  out.tokens.reserve(out.steps.size());
  for (const auto& s : out.steps) out.tokens.push_back(s.token);
  return out;
}

std::vector<double> step_log_probs(const StepView& step, const MethodConfig& cfg) {
  const auto final_row = step.matrix.final_row();
  switch (cfg.method) {
    case Method::greedy:
      return log_softmax(final_row, cfg.tau);
    case Method::sled: {
      const auto r = sled_step(step.matrix, cfg.evolution());
      return log_softmax(r.evolved_logits, cfg.tau);
    }
    case Method::dola: {
      auto scores = dola_step(step.matrix, cfg.dola, cfg.tau).scores;
      const double lse = log_sum_exp(scores);
      for (double& s : scores) s -= lse;  // masked entries stay -inf
      return scores;
    }
  }
  throw std::logic_error("unreachable");
}

double score_candidate(const LayerLogitsTrace& candidate, const MethodConfig& cfg,
                       bool length_norm) {
  validate_trace(candidate);
  validate_method(cfg, candidate.header.num_layers, candidate.header.vocab_size);
  const std::size_t steps = candidate.header.num_steps;
  double sum = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    const auto view = step_view(candidate, t);
    sum += step_log_probs(view, cfg)[view.token];
  }
  return length_norm ? sum / static_cast<double>(steps) : sum;
}

// ---------------------------------------------------------------------------

CandidateLabel parse_label(std::string_view name) {
  if (name == "best") return CandidateLabel::best;
  if (name == "true") return CandidateLabel::truthful;
  if (name == "false") return CandidateLabel::untruthful;
  throw std::invalid_argument("unknown candidate label '" + std::string(name) + "'");
}

std::string_view to_string(CandidateLabel label) {
  switch (label) {
    case CandidateLabel::best: return "best";
    case CandidateLabel::truthful: return "true";
    case CandidateLabel::untruthful: return "false";
  }
  return "?";
}

void validate_example(const McExample& example) {
  const auto n_true = std::count_if(example.candidates.begin(), example.candidates.end(),
                                    [](const McCandidate& c) { return c.is_true(); });
  if (n_true == 0) throw std::invalid_argument("example '" + example.id + "' has no true candidate");
  if (n_true == static_cast<std::ptrdiff_t>(example.candidates.size())) {
    throw std::invalid_argument("example '" + example.id + "' has no false candidate");
  }
  for (const auto& c : example.candidates) {
    if (!c.trace && c.logprobs.empty()) {
      throw std::invalid_argument("example '" + example.id + "' has an empty candidate");
    }
  }
}

double score_mc_candidate(const McCandidate& candidate, const MethodConfig& cfg, bool length_norm) {
  if (candidate.trace) return score_candidate(*candidate.trace, cfg, length_norm);
  if (candidate.logprobs.empty()) throw std::invalid_argument("empty candidate");
  const double sum = std::accumulate(candidate.logprobs.begin(), candidate.logprobs.end(), 0.0);
  return length_norm ? sum / static_cast<double>(candidate.logprobs.size()) : sum;
}

McExampleMetrics mc_example_metrics(const McExample& example, std::span<const double> scores,
                                    bool require_mc1) {
  validate_example(example);
  const auto& cands = example.candidates;
  if (scores.size() != cands.size()) throw std::invalid_argument("score count mismatch");

  double best_false = -std::numeric_limits<double>::infinity();
  double max_all = -std::numeric_limits<double>::infinity();
  std::size_t n_best = 0;
  std::size_t best_index = 0;
  for (std::size_t c = 0; c < cands.size(); ++c) {
    if (!cands[c].is_true()) best_false = std::max(best_false, scores[c]);
    if (cands[c].label == CandidateLabel::best) {
      ++n_best;
      best_index = c;
    }
    max_all = std::max(max_all, scores[c]);
  }

  McExampleMetrics m;
  if (n_best == 1) {
    m.mc1 = scores[best_index] > best_false ? 1.0 : 0.0;
  } else if (require_mc1) {
    throw std::invalid_argument("example '" + example.id + "' needs exactly one 'best' candidate");
  }

  std::size_t n_true = 0;
  std::size_t n_true_winning = 0;
  double true_mass = 0.0;
  double all_mass = 0.0;
  for (std::size_t c = 0; c < cands.size(); ++c) {
    // Every score -inf: treat as equal scores.
    const double w = std::isfinite(max_all) ? std::exp(scores[c] - max_all) : 1.0;
    all_mass += w;
    if (cands[c].is_true()) {
      ++n_true;
      true_mass += w;
      if (scores[c] > best_false) ++n_true_winning;
    }
  }
  m.mc2 = true_mass / all_mass;
  m.mc3 = static_cast<double>(n_true_winning) / static_cast<double>(n_true);
  return m;
}

McMetrics mc_metrics(std::span<const McExample> examples,
                     std::span<const std::vector<double>> scores, bool require_mc1) {
  if (examples.size() != scores.size()) throw std::invalid_argument("score count mismatch");
  if (examples.empty()) throw std::invalid_argument("no examples");
  McMetrics out;
  out.examples = examples.size();
  double mc1 = 0.0;
  bool have_mc1 = true;
  for (std::size_t e = 0; e < examples.size(); ++e) {
    const auto m = mc_example_metrics(examples[e], scores[e], require_mc1);
    if (m.mc1) {
      mc1 += *m.mc1;
    } else {
      have_mc1 = false;
    }
    out.mc2 += m.mc2;
    out.mc3 += m.mc3;
  }
  const double n = static_cast<double>(examples.size());
  if (have_mc1) out.mc1 = mc1 / n;
  out.mc2 /= n;
  out.mc3 /= n;
  return out;
}

McDirectory load_mc_directory(const std::string& dir) {
  const fs::path root(dir);
  const fs::path labels = root / kLabelsFile;
  std::ifstream in(labels);
  if (!in) throw std::runtime_error("cannot open '" + labels.string() + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("invalid labels file '" + labels.string() + "': " + e.what());
  }

  McDirectory out;
  for (const auto& ex : doc.at("examples")) {
    McExample example;
    example.id = ex.at("id").get<std::string>();
    for (const auto& c : ex.at("candidates")) {
      McCandidate cand;
      cand.label = parse_label(c.at("label").get<std::string>());
      if (c.contains("trace")) {
        cand.trace = read_trace_file((root / c.at("trace").get<std::string>()).string());
      } else {
        cand.logprobs = c.at("logprobs").get<std::vector<double>>();
      }
      example.candidates.push_back(std::move(cand));
    }
    validate_example(example);
    out.examples.push_back(std::move(example));
  }
  if (doc.contains("expected")) out.expected = doc.at("expected");
  return out;
}

void write_mc_directory(const std::string& dir, std::span<const McExample> examples,
                        const std::optional<nlohmann::json>& expected) {
  const fs::path root(dir);
  fs::create_directories(root);
  nlohmann::json doc;
  doc["examples"] = nlohmann::json::array();
  for (const auto& ex : examples) {
    nlohmann::json jex;
    jex["id"] = ex.id;
    jex["candidates"] = nlohmann::json::array();
    for (std::size_t c = 0; c < ex.candidates.size(); ++c) {
      const auto& cand = ex.candidates[c];
      nlohmann::json jc;
      jc["label"] = std::string(to_string(cand.label));
      if (cand.trace) {
        const std::string name = ex.id + "_c" + std::to_string(c) + ".slt";
        write_trace_file(*cand.trace, (root / name).string());
        jc["trace"] = name;
      } else {
        jc["logprobs"] = cand.logprobs;
      }
      jex["candidates"].push_back(std::move(jc));
    }
    doc["examples"].push_back(std::move(jex));
  }
  if (expected) doc["expected"] = *expected;
  std::ofstream out(root / kLabelsFile);
  out << doc.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write labels file in '" + dir + "'");
}

// ---------------------------------------------------------------------------

const SweepRow& SweepResult::best() const {
  if (rows.empty()) throw std::logic_error("empty sweep");
  // First row with the highest accuracy, in grid order.
  return *std::max_element(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
    return a.accuracy < b.accuracy;
  });
}

SweepRow evaluate_labeled(std::span<const LabeledTrace> data, const MethodConfig& cfg) {
  SweepRow row;
  row.alpha = cfg.sled.alpha;
  row.k = cfg.sled.k;
  std::size_t correct = 0;
  std::size_t degenerate = 0;
  std::size_t entropy_steps = 0;
  double entropy_sum = 0.0;

  const auto start = std::chrono::steady_clock::now();
  for (const auto& item : data) {
    if (item.labels.size() != item.trace.header.num_steps) {
      throw std::invalid_argument("label count does not match trace steps");
    }
    const auto decoded = decode_trace(item.trace, cfg);
    for (std::size_t t = 0; t < decoded.tokens.size(); ++t) {
      if (decoded.tokens[t] == item.labels[t]) ++correct;
      if (const auto& latent = decoded.steps[t].latent) {
        if (latent->degenerate) {
          ++degenerate;
        } else {
          entropy_sum += entropy(latent->masses);
          ++entropy_steps;
        }
      }
    }
    row.steps += decoded.tokens.size();
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  if (row.steps > 0) {
    const double n = static_cast<double>(row.steps);
    row.accuracy = static_cast<double>(correct) / n;
    row.degenerate_fraction = static_cast<double>(degenerate) / n;
    row.seconds_per_token = seconds / n;
  }
  if (entropy_steps > 0) row.mean_latent_entropy = entropy_sum / static_cast<double>(entropy_steps);
  return row;
}

SweepResult sweep(std::span<const LabeledTrace> data, const MethodConfig& base,
                  std::span<const double> alpha_grid, std::span<const std::size_t> k_grid) {
  if (alpha_grid.empty() || k_grid.empty()) throw std::invalid_argument("empty sweep grid");
  if (data.empty()) throw std::invalid_argument("no traces to sweep");
  SweepResult result;
  result.method = base.method;
  for (double alpha : alpha_grid) {
    for (std::size_t k : k_grid) {
      MethodConfig cfg = base;
      cfg.sled.alpha = alpha;
      cfg.sled.k = k;
      result.rows.push_back(evaluate_labeled(data, cfg));
    }
  }
  return result;
}

void write_sweep_csv(const SweepResult& result, std::ostream& out) {
  out << "method,alpha,k,accuracy,mean_latent_entropy,degenerate_fraction,seconds_per_token,steps\n";
  for (const auto& r : result.rows) {
    out << to_string(result.method) << ',' << r.alpha << ',' << r.k << ',' << r.accuracy << ','
        << r.mean_latent_entropy << ',' << r.degenerate_fraction << ',' << r.seconds_per_token
        << ',' << r.steps << '\n';
  }
}

nlohmann::json sweep_json(const SweepResult& result) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : result.rows) {
    rows.push_back({{"method", to_string(result.method)},
                    {"alpha", r.alpha},
                    {"k", r.k},
                    {"accuracy", r.accuracy},
                    {"mean_latent_entropy", r.mean_latent_entropy},
                    {"degenerate_fraction", r.degenerate_fraction},
                    {"seconds_per_token", r.seconds_per_token},
                    {"steps", r.steps}});
  }
  return rows;
}

// ---------------------------------------------------------------------------

namespace {

double percentile(std::vector<double> sorted_samples, double q) {
  std::sort(sorted_samples.begin(), sorted_samples.end());
  const double pos = q * static_cast<double>(sorted_samples.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted_samples.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted_samples[lo] * (1.0 - frac) + sorted_samples[hi] * frac;
}

// Keeps results observable so the timed call is not elided.
volatile TokenId g_sink = 0;

TokenId run_once(const StepView& step, const MethodConfig& cfg, const EvolutionConfig& evolution) {
  switch (cfg.method) {
    case Method::greedy: return greedy_step(step.matrix.final_row());
    case Method::dola: return dola_step(step.matrix, cfg.dola, cfg.tau).token;
    case Method::sled: return sled_step(step.matrix, evolution).chosen_token;
  }
  return 0;
}

class ThreadScope {
 public:
  explicit ThreadScope(int threads) : previous_(omp_get_max_threads()) {
    if (threads > 0) omp_set_num_threads(threads);
  }
  ~ThreadScope() { omp_set_num_threads(previous_); }
  ThreadScope(const ThreadScope&) = delete;
  ThreadScope& operator=(const ThreadScope&) = delete;

 private:
  int previous_;
};

}  // namespace

std::vector<LatencyRow> bench(const LayerLogitsTrace& trace, std::span<const Method> methods,
                              const MethodConfig& base, const BenchOptions& options) {
  if (options.repetitions < 3) throw std::invalid_argument("bench needs at least 3 repetitions");
  validate_trace(trace);
  ThreadScope scope(options.threads);
  const std::size_t steps = trace.header.num_steps;

  std::vector<LatencyRow> rows;
  for (Method method : methods) {
    MethodConfig cfg = base;
    cfg.method = method;
    validate_method(cfg, trace.header.num_layers, trace.header.vocab_size);
    const auto evolution = cfg.evolution();

    for (std::size_t t = 0; t < steps; ++t) g_sink = run_once(step_view(trace, t), cfg, evolution);

    std::vector<double> samples;
    samples.reserve(steps * options.repetitions);
    for (std::size_t rep = 0; rep < options.repetitions; ++rep) {
      for (std::size_t t = 0; t < steps; ++t) {
        const auto view = step_view(trace, t);
        const auto t0 = std::chrono::steady_clock::now();
        g_sink = run_once(view, cfg, evolution);
        const auto t1 = std::chrono::steady_clock::now();
        samples.push_back(std::chrono::duration<double>(t1 - t0).count());
      }
    }
    LatencyRow row;
    row.method = method;
    row.samples = samples.size();
    row.mean_seconds = std::accumulate(samples.begin(), samples.end(), 0.0) /
                       static_cast<double>(samples.size());
    row.p50_seconds = percentile(samples, 0.50);
    row.p95_seconds = percentile(samples, 0.95);
    rows.push_back(row);
  }

  const auto greedy = std::find_if(rows.begin(), rows.end(),
                                   [](const LatencyRow& r) { return r.method == Method::greedy; });
  if (greedy != rows.end() && greedy->mean_seconds > 0.0) {
    const double reference = greedy->mean_seconds;
    for (auto& r : rows) r.overhead_vs_greedy = r.mean_seconds / reference;
  }
  return rows;
}

void write_latency_csv(std::span<const LatencyRow> rows, std::ostream& out) {
  out << "method,mean_seconds,p50_seconds,p95_seconds,overhead_vs_greedy,samples\n";
  for (const auto& r : rows) {
    out << to_string(r.method) << ',' << r.mean_seconds << ',' << r.p50_seconds << ','
        << r.p95_seconds << ',' << r.overhead_vs_greedy << ',' << r.samples << '\n';
  }
}

nlohmann::json latency_json(std::span<const LatencyRow> rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    out.push_back({{"method", to_string(r.method)},
                   {"mean_seconds", r.mean_seconds},
                   {"p50_seconds", r.p50_seconds},
                   {"p95_seconds", r.p95_seconds},
                   {"overhead_vs_greedy", r.overhead_vs_greedy},
                   {"samples", r.samples}});
  }
  return out;
}

LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
  detail::require_same_length(x.size(), y.size());
  if (x.size() < 2) throw std::invalid_argument("linear fit needs at least two points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0;
  double sxy = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw std::invalid_argument("linear fit needs distinct x values");
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r_squared = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  return fit;
}

}  // namespace sled
