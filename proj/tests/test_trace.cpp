#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include "sled/trace.hpp"
#include "test_support.hpp"

using namespace sled;

namespace {

LayerLogitsTrace tiny_trace() {
  LayerLogitsTrace t;
  t.header.num_layers = 2;
  t.header.vocab_size = 2;
  t.header.num_steps = 1;
  t.tokens = {0};
  t.logits = {0.f, 0.f, 0.f, 0.f};
  return t;
}

std::string serialize(const LayerLogitsTrace& t) {
  std::ostringstream out;
  write_trace(t, out);
  return out.str();
}

LayerLogitsTrace parse(const std::string& bytes) {
  std::istringstream in(bytes);
  return read_trace(in);
}

void put_u32(std::string& s, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s[at + i] = static_cast<char>((v >> (8 * i)) & 0xFF);
}

}  // namespace

TEST_CASE("minimal trace has the declared byte layout") {
  const auto t = tiny_trace();
  std::ostringstream out;
  const auto n = write_trace(t, out);
  CHECK(n == 24 + 4 + 16);
  CHECK(out.str().size() == 44);
  CHECK(out.str().substr(0, 4) == "SLT1");
  CHECK(trace_byte_size(t.header) == 44);
  CHECK(static_cast<unsigned char>(out.str()[4]) == 1);  // version, little-endian
}

TEST_CASE("write then read is the identity, and output is deterministic") {
  auto t = tiny_trace();
  t.header.metadata = R"({"model":"toy","layers":[0,1]})";
  t.logits = {1.5f, -2.25f, 3.0f, 0.125f};
  const auto bytes = serialize(t);
  CHECK(bytes == serialize(t));
  CHECK(parse(bytes) == t);
}

TEST_CASE("non-finite logits are refused on write") {
  auto t = tiny_trace();
  t.logits[2] = std::numeric_limits<float>::quiet_NaN();
  std::ostringstream out;
  CHECK_THROWS_WITH_AS(write_trace(t, out), "non-finite value", TraceError);
  t.logits[2] = std::numeric_limits<float>::infinity();
  CHECK_THROWS_WITH_AS(write_trace(t, out), "non-finite value", TraceError);
}

TEST_CASE("read rejects each corruption class with its own message") {
  SynthRng rng(5);
  const auto t = testing::random_trace(rng, 3, 5, 4);
  const auto good = serialize(t);

  SUBCASE("bad magic") {
    auto bad = good;
    bad.replace(0, 4, "XXXX");
    CHECK_THROWS_WITH_AS(parse(bad), "not a trace file", TraceError);
  }
  SUBCASE("version") {
    auto bad = good;
    put_u32(bad, 4, 2);
    CHECK_THROWS_WITH_AS(parse(bad), "unsupported trace version 2", TraceError);
  }
  SUBCASE("layer count") {
    auto bad = good;
    put_u32(bad, 8, 1);
    CHECK_THROWS_WITH_AS(parse(bad), "invalid layer count (need >= 2)", TraceError);
  }
  SUBCASE("vocab size") {
    auto bad = good;
    put_u32(bad, 12, 1);
    CHECK_THROWS_WITH_AS(parse(bad), "invalid vocab size (need >= 2)", TraceError);
  }
  SUBCASE("step count") {
    auto bad = good;
    put_u32(bad, 16, 0);
    CHECK_THROWS_WITH_AS(parse(bad), "invalid step count (need >= 1)", TraceError);
  }
  SUBCASE("header fields inconsistent with the file size") {
    auto bigger = good;
    put_u32(bigger, 12, 6);
    CHECK_THROWS_WITH_AS(parse(bigger), "truncated at logits", TraceError);
    auto smaller = good;
    put_u32(smaller, 12, 4);
    for (std::size_t k = 0; k < 4; ++k) put_u32(smaller, 24 + 4 * k, 0);  // keep tokens in range
    CHECK_THROWS_WITH_AS(parse(smaller), "trailing bytes after logits", TraceError);
    auto huge_meta = good;
    put_u32(huge_meta, 20, 1u << 30);
    CHECK_THROWS_WITH_AS(parse(huge_meta), "truncated at metadata", TraceError);
  }
  SUBCASE("truncation names the section") {
    CHECK_THROWS_WITH_AS(parse(good.substr(0, 2)), "truncated at header", TraceError);
    CHECK_THROWS_WITH_AS(parse(good.substr(0, 20)), "truncated at header", TraceError);
    CHECK_THROWS_WITH_AS(parse(good.substr(0, 26)), "truncated at tokens", TraceError);
    CHECK_THROWS_WITH_AS(parse(good.substr(0, good.size() - 3)), "truncated at logits", TraceError);
  }
  SUBCASE("token out of range") {
    auto bad = good;
    put_u32(bad, 24, 5);
    CHECK_THROWS_WITH_AS(parse(bad), "token out of range", TraceError);
  }
  SUBCASE("NaN payload") {
    auto bad = good;
    put_u32(bad, bad.size() - 4, 0x7FC00000u);
    CHECK_THROWS_WITH_AS(parse(bad), "non-finite value", TraceError);
  }
  SUBCASE("metadata that is not JSON") {
    auto with_meta = t;
    with_meta.header.metadata = "{}";
    auto bad = serialize(with_meta);
    bad[24] = '[';
    bad[25] = '{';
    CHECK_THROWS_WITH_AS(parse(bad), "invalid metadata (not JSON)", TraceError);
  }
}

TEST_CASE("unseekable truncated streams still report the section") {
  SynthRng rng(6);
  const auto good = serialize(testing::random_trace(rng, 2, 3, 2));
  std::stringbuf buf(good.substr(0, good.size() - 1));
  std::istream in(&buf);
  CHECK_THROWS_WITH_AS(read_trace(in), "truncated at logits", TraceError);
}

TEST_CASE("step_view exposes one step with the final row last") {
  LayerLogitsTrace t;
  t.header = {2, 2, 3, ""};
  t.tokens = {0, 1, 1};
  t.logits = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
  const auto v = step_view(t, 2);
  CHECK(v.token == 1);
  CHECK(v.matrix.row(0)[0] == 8.f);
  CHECK(v.matrix.final_row()[0] == 10.f);
  CHECK(v.matrix.final_row()[1] == 11.f);
  CHECK_THROWS_AS(step_view(t, 3), std::out_of_range);
}

TEST_CASE("property: random traces round-trip bit-exactly") {
  SynthRng rng(1234);
  for (int i = 0; i < 200; ++i) {
    auto t = testing::random_trace(rng, 2 + rng.below(4), 2 + rng.below(20), 1 + rng.below(6));
    if (i % 3 == 0) t.header.metadata = R"({"i":)" + std::to_string(i) + "}";
    const auto bytes = serialize(t);
    CHECK(bytes.size() == trace_byte_size(t.header));
    const auto back = parse(bytes);
    REQUIRE(back == t);
  }
}
