#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <json.hpp>
#include <omp.h>

#include "sled/baselines.hpp"
#include "sled/harness.hpp"
#include "sled/sled.hpp"
#include "sled/synth.hpp"
#include "sled/trace.hpp"

namespace sled::cli {

namespace {

using nlohmann::json;

// Raised for flag combinations CLI11 cannot express; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SledFlags {
  double alpha = 1.0;
  std::size_t k = 5;
  double eta = -1000.0;
  std::string layers = "all";
  std::string mode = "soft";
  std::string support = "topk";
  std::vector<CLI::Option*> options;

  void add(CLI::App* app) {
    options.push_back(app->add_option("--alpha", alpha, "Evolution rate")->capture_default_str());
    options.push_back(app->add_option("--k", k, "Evolution scale (top-k support size)")
                          ->capture_default_str());
    options.push_back(app->add_option("--eta", eta, "Logit assigned outside the top-k support")
                          ->capture_default_str());
    options.push_back(app->add_option("--layers", layers,
                                      "Early rows to contrast: 'all' or comma list")
                          ->capture_default_str());
    options.push_back(app->add_option("--mode", mode, "Latent estimation")
                          ->check(CLI::IsMember({"soft", "hard"}))
                          ->capture_default_str());
    options.push_back(app->add_option("--support", support, "Cosine support")
                          ->check(CLI::IsMember({"topk", "full"}))
                          ->capture_default_str());
  }

  bool any_given() const {
    return std::any_of(options.begin(), options.end(),
                       [](const CLI::Option* o) { return o->count() > 0; });
  }
};

struct DolaFlags {
  std::string layers = "all";
  double apc_ratio = 0.1;
  std::vector<CLI::Option*> options;

  void add(CLI::App* app) {
    options.push_back(app->add_option("--dola-layers", layers,
                                      "DoLa candidate rows: 'all' or comma list")
                          ->capture_default_str());
    options.push_back(app->add_option("--apc-ratio", apc_ratio,
                                      "DoLa adaptive plausibility ratio")
                          ->capture_default_str());
  }

  bool any_given() const {
    return std::any_of(options.begin(), options.end(),
                       [](const CLI::Option* o) { return o->count() > 0; });
  }
};

std::vector<std::size_t> parse_rows(const std::string& text) {
  std::vector<std::size_t> rows;
  if (text == "all" || text.empty()) return rows;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      rows.push_back(std::stoul(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("invalid layer list '" + text + "'");
    }
  }
  return rows;
}

template <typename T>
std::vector<T> parse_grid(const std::string& text, const char* name) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      if constexpr (std::is_floating_point_v<T>) {
        out.push_back(std::stod(item, &used));
      } else {
        out.push_back(static_cast<T>(std::stoul(item, &used)));
      }
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError(std::string("invalid ") + name + " '" + text + "'");
    }
  }
  if (out.empty()) throw UsageError(std::string("empty ") + name);
  return out;
}

MethodConfig make_method_config(const std::string& method, double tau, const SledFlags& sf,
                                const DolaFlags& df, bool strict = true) {
  MethodConfig cfg;
  cfg.method = parse_method(method);
  cfg.tau = tau;
  if (strict && cfg.method != Method::sled && sf.any_given()) {
    throw UsageError("SLED flags require --method sled");
  }
  if (strict && cfg.method != Method::dola && df.any_given()) {
    throw UsageError("DoLa flags require --method dola");
  }
  if (!(tau > 0.0)) throw UsageError("--tau must be positive");
  cfg.sled.alpha = sf.alpha;
  cfg.sled.k = sf.k;
  cfg.sled.eta = sf.eta;
  cfg.sled.tau = tau;
  cfg.sled.layer_set = parse_rows(sf.layers);
  cfg.sled.estimation = parse_estimation(sf.mode);
  cfg.sled.similarity_support = parse_support(sf.support);
  cfg.dola.candidate_layers = parse_rows(df.layers);
  cfg.dola.apc_ratio = df.apc_ratio;
  return cfg;
}

// Flag values that do not fit the trace shape are usage errors.
void check_config(const MethodConfig& cfg, const LayerLogitsTrace& trace, bool all_methods = false) {
  try {
    if (all_methods || cfg.method == Method::sled) {
      cfg.evolution().validate(trace.header.num_layers, trace.header.vocab_size);
    }
    if (all_methods || cfg.method == Method::dola) cfg.dola.validate(trace.header.num_layers);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

json latent_json(const LatentDistribution& latent) {
  return {{"support", latent.support},
          {"masses", latent.masses},
          {"layer_weights", latent.layer_weights},
          {"degenerate", latent.degenerate}};
}

json layers_json(const std::vector<LayerEstimate>& layers) {
  json out = json::array();
  for (const auto& l : layers) {
    out.push_back({{"row", l.row},
                   {"top_token", l.token ? json(*l.token) : json(nullptr)},
                   {"top_mass", l.mass},
                   {"weight", l.weight}});
  }
  return out;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

std::vector<TokenId> read_labels(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  const json doc = json::parse(f);
  if (doc.is_array()) return doc.get<std::vector<TokenId>>();
  return doc.at("truth").get<std::vector<TokenId>>();
}

// ---------------------------------------------------------------------------

int cmd_inspect(const std::string& path, std::ostream& out) {
  const auto trace = read_trace_file(path);
  const auto& h = trace.header;
  json doc = {{"path", path},
              {"version", kTraceVersion},
              {"num_layers", h.num_layers},
              {"vocab_size", h.vocab_size},
              {"num_steps", h.num_steps},
              {"bytes", trace_byte_size(h)}};
  doc["metadata"] = h.metadata.empty() ? json::object() : json::parse(h.metadata);
  out << doc.dump(2) << '\n';
  return 0;
}

int cmd_evolve(const std::string& path, std::size_t step, const MethodConfig& cfg,
               std::ostream& out) {
  const auto trace = read_trace_file(path);
  check_config(cfg, trace);
  if (step >= trace.header.num_steps) throw UsageError("--step out of range");
  const auto view = step_view(trace, step);
  const auto result = sled_step(view.matrix, cfg.evolution());
  json top = json::array();
  for (TokenId i : result.latent.support) {
    top.push_back({{"token", i}, {"logit", result.evolved_logits[i]}});
  }
  json doc = {{"step", step},
              {"chosen_token", result.chosen_token},
              {"evolved_topk", top},
              {"latent", latent_json(result.latent)},
              {"layers", layers_json(result.per_layer_top_estimate)}};
  out << doc.dump(2) << '\n';
  return 0;
}

int cmd_decode(const std::string& path, const MethodConfig& cfg, bool diagnostics, bool verbose,
               std::ostream& out, std::ostream& err) {
  const auto trace = read_trace_file(path);
  check_config(cfg, trace);
  const auto result = decode_trace(trace, cfg);
  json doc = {{"method", to_string(cfg.method)}, {"tokens", result.tokens}};
  if (diagnostics) {
    json steps = json::array();
    for (const auto& s : result.steps) {
      json js = {{"token", s.token}};
      if (s.latent) js["latent"] = latent_json(*s.latent);
      if (!s.layers.empty()) js["layers"] = layers_json(s.layers);
      if (s.premature_layer) js["premature_layer"] = *s.premature_layer;
      steps.push_back(std::move(js));
    }
    doc["steps"] = std::move(steps);
  }
  if (verbose) {
    std::size_t agree = 0;
    for (std::size_t t = 0; t < result.tokens.size(); ++t) agree += result.tokens[t] == trace.tokens[t];
    err << "steps " << result.tokens.size() << ", matching stored tokens " << agree << '\n';
  }
  out << doc.dump() << '\n';
  return 0;
}

int cmd_score_mc(const std::string& dir, const MethodConfig& cfg, bool length_norm,
                 const std::string& csv_path, bool verbose, std::ostream& out, std::ostream& err) {
  const auto loaded = load_mc_directory(dir);
  std::vector<std::vector<double>> scores(loaded.examples.size());
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(loaded.examples.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t e = 0; e < n; ++e) {
    const auto& ex = loaded.examples[static_cast<std::size_t>(e)];
    auto& row = scores[static_cast<std::size_t>(e)];
    for (const auto& c : ex.candidates) row.push_back(score_mc_candidate(c, cfg, length_norm));
  }
  const auto metrics = mc_metrics(loaded.examples, scores, false);

  json doc = {{"method", to_string(cfg.method)},
              {"examples", metrics.examples},
              {"mc1", metrics.mc1 ? json(*metrics.mc1) : json(nullptr)},
              {"mc2", metrics.mc2},
              {"mc3", metrics.mc3},
              {"length_norm", length_norm}};
  if (loaded.expected) doc["expected"] = *loaded.expected;

  if (!csv_path.empty() || verbose) {
    std::ostringstream csv;
    csv << std::setprecision(17) << "id,mc1,mc2,mc3\n";
    for (std::size_t e = 0; e < loaded.examples.size(); ++e) {
      const auto m = mc_example_metrics(loaded.examples[e], scores[e], false);
      csv << loaded.examples[e].id << ',' << (m.mc1 ? std::to_string(*m.mc1) : "") << ','
          << m.mc2 << ',' << m.mc3 << '\n';
    }
    if (!csv_path.empty()) write_text_file(csv_path, csv.str());
    if (verbose) err << csv.str();
  }
  out << std::setprecision(17) << doc.dump() << '\n';
  return 0;
}

int cmd_sweep(const std::vector<std::string>& traces, const std::vector<std::string>& labels,
              const MethodConfig& cfg, const std::string& alpha_grid, const std::string& k_grid,
              const std::string& csv_path, bool verbose, std::ostream& out, std::ostream& err) {
  if (!labels.empty() && labels.size() != traces.size()) {
    throw UsageError("--labels must be given once per --trace");
  }
  const auto alphas = parse_grid<double>(alpha_grid, "alpha grid");
  const auto ks = parse_grid<std::size_t>(k_grid, "k grid");
  std::vector<LabeledTrace> data;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    LabeledTrace item;
    item.trace = read_trace_file(traces[i]);
    check_config(cfg, item.trace);
    for (std::size_t k : ks) {
      if (k < 1 || k > item.trace.header.vocab_size) throw UsageError("k grid value out of range");
    }
    item.labels = labels.empty() ? item.trace.tokens : read_labels(labels[i]);
    data.push_back(std::move(item));
  }
  const auto result = sweep(data, cfg, alphas, ks);
  std::ostringstream csv;
  csv << std::setprecision(17);
  write_sweep_csv(result, csv);
  if (!csv_path.empty()) write_text_file(csv_path, csv.str());
  if (verbose) err << csv.str();
  const auto& best = result.best();
  json doc = {{"rows", sweep_json(result)},
              {"best", {{"alpha", best.alpha}, {"k", best.k}, {"accuracy", best.accuracy}}}};
  out << doc.dump() << '\n';
  return 0;
}

int cmd_bench(const std::string& path, const std::string& methods_text, const MethodConfig& cfg,
              std::size_t reps, int threads, const std::string& csv_path, bool verbose,
              std::ostream& out, std::ostream& err) {
  std::vector<Method> methods;
  std::stringstream ss(methods_text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      methods.push_back(parse_method(item));
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  if (methods.empty()) throw UsageError("no methods to bench");
  if (reps < 3) throw UsageError("--reps must be >= 3");
  const auto trace = read_trace_file(path);
  for (Method m : methods) {
    MethodConfig c = cfg;
    c.method = m;
    check_config(c, trace);
  }
  BenchOptions options;
  options.repetitions = reps;
  options.threads = threads;
  const auto rows = bench(trace, methods, cfg, options);
  std::ostringstream csv;
  csv << std::setprecision(9);
  write_latency_csv(rows, csv);
  if (!csv_path.empty()) write_text_file(csv_path, csv.str());
  if (verbose) err << csv.str();
  json doc = {{"vocab_size", trace.header.vocab_size},
              {"num_layers", trace.header.num_layers},
              {"num_steps", trace.header.num_steps},
              {"rows", latency_json(rows)}};
  out << doc.dump() << '\n';
  return 0;
}

struct SynthFlags {
  std::uint32_t vocab = 16;
  std::uint32_t layers = 8;
  std::uint32_t steps = 200;
  double margin = 0.5;
  double strength = 1.0;
  double sigma = 0.0;
  std::uint64_t seed = 0;
  std::string out_path;
  std::string sidecar;
};

int cmd_synth(const std::string& kind, const SynthFlags& f, std::ostream& out) {
  json doc = {{"kind", kind}, {"out", f.out_path}};
  if (kind == "trap") {
    SynthSpec spec;
    spec.vocab_size = f.vocab;
    spec.num_layers = f.layers;
    spec.num_steps = f.steps;
    spec.trap_margin = f.margin;
    spec.alignment_strength = f.strength;
    spec.noise_sigma = f.sigma;
    spec.seed = f.seed;
    const auto trap = gen_trap_trace(spec);
    write_trace_file(trap.trace, f.out_path);
    const std::string sidecar = f.sidecar.empty() ? f.out_path + ".json" : f.sidecar;
    write_text_file(sidecar, trap_sidecar(spec, trap).dump(2) + "\n");
    doc["sidecar"] = sidecar;
  } else if (kind == "uniform") {
    write_trace_file(gen_uniform_trace(f.vocab, f.layers, f.steps, f.seed), f.out_path);
  } else {
    const auto fx = gen_mc_fixture(f.seed);
    json expected = {{"mc1", *fx.expected.mc1},
                     {"mc2", fx.expected.mc2},
                     {"mc3", fx.expected.mc3},
                     {"examples", fx.expected.examples}};
    write_mc_directory(f.out_path, fx.examples, expected);
    doc["expected"] = expected;
  }
  out << doc.dump() << '\n';
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Layer-contrastive logit evolution decoding over per-layer logit traces", "sled"};
  app.require_subcommand(1);
  bool verbose = false;
  int threads = 0;
  app.add_flag("-v,--verbose", verbose, "Human-readable tables on stderr");
  app.add_option("--threads", threads, "OpenMP threads (0 = runtime default)");

  // inspect
  std::string inspect_trace;
  auto* inspect = app.add_subcommand("inspect", "Print trace header and metadata");
  inspect->add_option("--trace", inspect_trace, "Trace file")->required();

  // evolve
  std::string evolve_trace;
  std::size_t evolve_step = 0;
  double evolve_tau = 1.0;
  SledFlags evolve_flags;
  auto* evolve = app.add_subcommand("evolve", "Run one SLED step and print the evolved top-k logits");
  evolve->add_option("--trace", evolve_trace, "Trace file")->required();
  evolve->add_option("--step", evolve_step, "Step index")->required();
  evolve->add_option("--tau", evolve_tau, "Temperature")->capture_default_str();
  evolve_flags.add(evolve);

  // decode
  std::string decode_trace_path;
  std::string decode_method;
  double decode_tau = 1.0;
  bool decode_diag = false;
  SledFlags decode_sled;
  DolaFlags decode_dola;
  auto* decode = app.add_subcommand("decode", "Decode every step of a trace");
  decode->add_option("--trace", decode_trace_path, "Trace file")->required();
  decode->add_option("--method", decode_method, "Decoding method")
      ->required()
      ->check(CLI::IsMember({"greedy", "dola", "sled"}));
  decode->add_option("--tau", decode_tau, "Temperature")->capture_default_str();
  decode->add_flag("--diagnostics", decode_diag, "Include per-step diagnostics");
  decode_sled.add(decode);
  decode_dola.add(decode);

  // score-mc
  std::string mc_dir;
  std::string mc_method;
  std::string mc_csv;
  double mc_tau = 1.0;
  bool no_length_norm = false;
  SledFlags mc_sled;
  DolaFlags mc_dola;
  auto* score = app.add_subcommand("score-mc", "Score a multiple-choice directory (MC1/MC2/MC3)");
  score->add_option("--examples", mc_dir, "Directory containing labels.json")->required();
  score->add_option("--method", mc_method, "Scoring method")
      ->required()
      ->check(CLI::IsMember({"greedy", "dola", "sled"}));
  score->add_option("--tau", mc_tau, "Temperature")->capture_default_str();
  score->add_flag("--no-length-norm", no_length_norm, "Sum log-probs instead of averaging");
  score->add_option("--out", mc_csv, "Per-example CSV");
  mc_sled.add(score);
  mc_dola.add(score);

  // sweep
  std::vector<std::string> sweep_traces;
  std::vector<std::string> sweep_labels;
  std::string sweep_method = "sled";
  std::string alpha_grid = "0,0.5,1,2,4,8";
  std::string k_grid = "2,5";
  std::string sweep_csv;
  double sweep_tau = 1.0;
  SledFlags sweep_sled;
  DolaFlags sweep_dola;
  auto* sweep_cmd = app.add_subcommand("sweep", "Accuracy over an (alpha, k) grid");
  sweep_cmd->add_option("--trace", sweep_traces, "Trace file (repeatable)")->required();
  sweep_cmd->add_option("--labels", sweep_labels,
                        "Expected tokens: sidecar JSON with 'truth' or a JSON array "
                        "(default: the trace's stored tokens)");
  sweep_cmd->add_option("--method", sweep_method, "Method")
      ->check(CLI::IsMember({"greedy", "dola", "sled"}))
      ->capture_default_str();
  sweep_cmd->add_option("--alpha-grid", alpha_grid, "Comma-separated alphas")->capture_default_str();
  sweep_cmd->add_option("--k-grid", k_grid, "Comma-separated k values")->capture_default_str();
  sweep_cmd->add_option("--tau", sweep_tau, "Temperature")->capture_default_str();
  sweep_cmd->add_option("--out", sweep_csv, "CSV output path");
  sweep_sled.add(sweep_cmd);
  sweep_dola.add(sweep_cmd);

  // bench
  std::string bench_trace;
  std::string bench_methods = "greedy,dola,sled";
  std::size_t bench_reps = 5;
  std::string bench_csv;
  double bench_tau = 1.0;
  SledFlags bench_sled;
  DolaFlags bench_dola;
  auto* bench_cmd = app.add_subcommand("bench", "Per-token latency of each method");
  bench_cmd->add_option("--trace", bench_trace, "Trace file")->required();
  bench_cmd->add_option("--methods", bench_methods, "Comma-separated methods")->capture_default_str();
  bench_cmd->add_option("--reps", bench_reps, "Timed repetitions (>= 3)")->capture_default_str();
  bench_cmd->add_option("--tau", bench_tau, "Temperature")->capture_default_str();
  bench_cmd->add_option("--out", bench_csv, "CSV output path");
  bench_sled.add(bench_cmd);
  bench_dola.add(bench_cmd);

  // synth
  std::string synth_kind;
  SynthFlags synth_flags;
  auto* synth = app.add_subcommand("synth", "Generate synthetic traces or an MC fixture");
  synth->add_option("kind", synth_kind, "trap | uniform | mc")
      ->required()
      ->check(CLI::IsMember({"trap", "uniform", "mc"}));
  synth->add_option("--vocab", synth_flags.vocab, "Vocabulary size")->capture_default_str();
  synth->add_option("--layers", synth_flags.layers, "Layer rows")->capture_default_str();
  synth->add_option("--steps", synth_flags.steps, "Steps")->capture_default_str();
  synth->add_option("--margin", synth_flags.margin, "Trap margin")->capture_default_str();
  synth->add_option("--strength", synth_flags.strength, "Alignment strength")->capture_default_str();
  synth->add_option("--sigma", synth_flags.sigma, "Noise sigma")->capture_default_str();
  synth->add_option("--seed", synth_flags.seed, "Seed")->capture_default_str();
  synth->add_option("--out", synth_flags.out_path, "Output trace file (directory for mc)")
      ->required();
  synth->add_option("--sidecar", synth_flags.sidecar, "Truth sidecar path (default <out>.json)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
      out << app.help();
      return 0;
    }
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return 2;
  }

  try {
    if (threads > 0) omp_set_num_threads(threads);
    if (*inspect) return cmd_inspect(inspect_trace, out);
    if (*evolve) {
      return cmd_evolve(evolve_trace, evolve_step,
                        make_method_config("sled", evolve_tau, evolve_flags, DolaFlags{}), out);
    }
    if (*decode) {
      return cmd_decode(decode_trace_path,
                        make_method_config(decode_method, decode_tau, decode_sled, decode_dola),
                        decode_diag, verbose, out, err);
    }
    if (*score) {
      return cmd_score_mc(mc_dir, make_method_config(mc_method, mc_tau, mc_sled, mc_dola),
                          !no_length_norm, mc_csv, verbose, out, err);
    }
    if (*sweep_cmd) {
      return cmd_sweep(sweep_traces, sweep_labels,
                       make_method_config(sweep_method, sweep_tau, sweep_sled, sweep_dola),
                       alpha_grid, k_grid, sweep_csv, verbose, out, err);
    }
    if (*bench_cmd) {
      return cmd_bench(bench_trace, bench_methods,
                       make_method_config("greedy", bench_tau, bench_sled, bench_dola, false), bench_reps,
                       threads > 0 ? threads : 1, bench_csv, verbose, out, err);
    }
    if (*synth) return cmd_synth(synth_kind, synth_flags, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace sled::cli
