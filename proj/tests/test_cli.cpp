#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "../tools/cli.hpp"
#include "sled/synth.hpp"
#include "test_support.hpp"

using namespace sled;
using nlohmann::json;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

class TempDir {
 public:
  TempDir() : path_(std::filesystem::temp_directory_path() / "sled_cli_test") {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace

TEST_CASE("help and usage errors") {
  const auto help = run({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("decode") != std::string::npos);
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"inspect"}).code == 2);  // missing --trace
  CHECK(run({"decode", "--trace", "x.slt"}).code == 2);  // missing --method
  CHECK(run({"decode", "--trace", "x.slt", "--method", "beam"}).code == 2);
}

TEST_CASE("synth, inspect and decode") {
  TempDir tmp;
  const auto trace = tmp.file("trap.slt");
  auto r = run({"synth", "trap", "--out", trace, "--steps", "30", "--seed", "4"});
  REQUIRE(r.code == 0);
  CHECK(json::parse(r.out)["sidecar"] == trace + ".json");

  r = run({"inspect", "--trace", trace});
  REQUIRE(r.code == 0);
  const auto info = json::parse(r.out);
  CHECK(info["num_layers"] == 8);
  CHECK(info["vocab_size"] == 16);
  CHECK(info["num_steps"] == 30);
  CHECK(info["bytes"] == std::filesystem::file_size(trace));

  const auto greedy = json::parse(run({"decode", "--trace", trace, "--method", "greedy"}).out);
  const auto zero = json::parse(run({"decode", "--trace", trace, "--method", "sled", "--alpha", "0"}).out);
  CHECK(greedy["tokens"] == zero["tokens"]);
  CHECK(zero["method"] == "sled");

  const auto sidecar = json::parse(std::ifstream(trace + ".json"));
  const auto sled = json::parse(run({"decode", "--trace", trace, "--method", "sled"}).out);
  CHECK(sled["tokens"] == sidecar["truth"]);

  r = run({"decode", "--trace", trace, "--method", "sled", "--diagnostics"});
  REQUIRE(r.code == 0);
  const auto diag = json::parse(r.out);
  CHECK(diag["steps"].size() == 30);
  CHECK(diag["steps"][0].contains("latent"));

  r = run({"evolve", "--trace", trace, "--step", "3", "--k", "4"});
  REQUIRE(r.code == 0);
  const auto ev = json::parse(r.out);
  CHECK(ev["evolved_topk"].size() == 4);
  CHECK(ev["layers"].size() == 7);
  CHECK(ev["chosen_token"] == sidecar["truth"][3]);

  // Flag and value errors.
  CHECK(run({"decode", "--trace", trace, "--method", "greedy", "--alpha", "2"}).code == 2);  // sled flag on greedy
  CHECK(run({"decode", "--trace", trace, "--method", "sled", "--k", "17"}).code == 2);
  CHECK(run({"evolve", "--trace", trace, "--step", "30"}).code == 2);
  CHECK(run({"decode", "--trace", trace, "--method", "sled", "--layers", "7"}).code == 2);

  // Runtime failures.
  CHECK(run({"inspect", "--trace", tmp.file("missing.slt")}).code == 1);
  std::ofstream(tmp.file("junk.slt")) << "not a trace at all";
  r = run({"inspect", "--trace", tmp.file("junk.slt")});
  CHECK(r.code == 1);
  CHECK(r.err.find("not a trace file") != std::string::npos);
}

TEST_CASE("score-mc on the generated fixture") {
  TempDir tmp;
  const auto dir = tmp.file("mc");
  REQUIRE(run({"synth", "mc", "--out", dir, "--seed", "3"}).code == 0);
  const auto csv = tmp.file("mc.csv");
  const auto r = run({"score-mc", "--examples", dir, "--method", "greedy", "--out", csv});
  REQUIRE(r.code == 0);
  const auto doc = json::parse(r.out);
  CHECK(doc["mc1"] == 0.5);
  CHECK(doc["mc3"] == 0.5);
  CHECK(std::abs(doc["mc2"].get<double>() - 0.697359690735191620) <= 1e-9);
  CHECK(doc["expected"]["mc2"] == doc["mc2"]);
  CHECK(std::filesystem::exists(csv));
  CHECK(run({"score-mc", "--examples", tmp.file("nowhere"), "--method", "greedy"}).code == 1);
}

TEST_CASE("uniform trace, sweep and bench") {
  TempDir tmp;
  const auto uni = tmp.file("uni.slt");
  REQUIRE(run({"synth", "uniform", "--out", uni, "--vocab", "20", "--layers", "4", "--steps", "10"})
              .code == 0);
  const auto g = json::parse(run({"decode", "--trace", uni, "--method", "greedy"}).out);
  const auto s = json::parse(run({"decode", "--trace", uni, "--method", "sled", "--alpha", "5"}).out);
  CHECK(g["tokens"] == s["tokens"]);

  const auto trap = tmp.file("trap.slt");
  REQUIRE(run({"synth", "trap", "--out", trap, "--steps", "20"}).code == 0);
  const auto csv = tmp.file("sweep.csv");
  auto r = run({"sweep", "--trace", trap, "--labels", trap + ".json", "--alpha-grid", "0,1",
                "--k-grid", "2,5", "--out", csv});
  REQUIRE(r.code == 0);
  const auto sw = json::parse(r.out);
  CHECK(sw["rows"].size() == 4);
  CHECK(sw["rows"][0]["accuracy"] == 0.0);
  CHECK(sw["best"]["accuracy"] == 1.0);
  CHECK(std::filesystem::exists(csv));
  CHECK(run({"sweep", "--trace", trap, "--k-grid", "2,x"}).code == 2);

  r = run({"bench", "--trace", trap, "--reps", "3"});
  REQUIRE(r.code == 0);
  const auto b = json::parse(r.out);
  CHECK(b["rows"].size() == 3);
  CHECK(b["rows"][0]["method"] == "greedy");
  CHECK(b["rows"][0]["overhead_vs_greedy"] == 1.0);
}
