#pragma once

// Binary layer-logits trace ("SLT1").
//
// Layout, all integers and floats little-endian:
//
//   magic        4 bytes   "SLT1"
//   version      u32       1
//   num_layers   u32       L >= 2, row L-1 is the final layer
//   vocab_size   u32       d >= 2
//   num_steps    u32       T >= 1
//   metadata_len u32
//   metadata     metadata_len bytes of UTF-8 JSON (may be empty)
//   tokens       T x u32
//   logits       T x L x d x f32, step-major, then layer, then vocab
//
// The file size is fully determined by the header; trailing bytes are rejected.

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sled {

using TokenId = std::uint32_t;

class TraceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::array<char, 4> kTraceMagic = {'S', 'L', 'T', '1'};
inline constexpr std::uint32_t kTraceVersion = 1;
inline constexpr std::size_t kTraceHeaderBytes = 24;

struct TraceHeader {
  std::uint32_t num_layers = 0;
  std::uint32_t vocab_size = 0;
  std::uint32_t num_steps = 0;
  std::string metadata;  // JSON text, never interpreted by the math

  bool operator==(const TraceHeader&) const = default;
};

// A read-only (layers x vocab) matrix of one decoding step. Row layers-1 is the
// final layer. T is float for on-disk traces and double for computed fixtures.
template <typename T>
struct LayerMatrixView {
  std::span<const T> values;
  std::size_t layers = 0;
  std::size_t vocab = 0;

  std::span<const T> row(std::size_t layer) const {
    return values.subspan(layer * vocab, vocab);
  }
  std::span<const T> final_row() const { return row(layers - 1); }
};

struct StepView {
  LayerMatrixView<float> matrix;
  TokenId token = 0;
};

struct LayerLogitsTrace {
  TraceHeader header;
  std::vector<TokenId> tokens;
  std::vector<float> logits;

  std::size_t step_size() const {
    return static_cast<std::size_t>(header.num_layers) * header.vocab_size;
  }

  bool operator==(const LayerLogitsTrace&) const = default;
};

// Throws TraceError describing the first violated invariant.
void validate_trace(const LayerLogitsTrace& trace);

// Exact on-disk size implied by a header.
std::uint64_t trace_byte_size(const TraceHeader& header);

std::uint64_t write_trace(const LayerLogitsTrace& trace, std::ostream& sink);
LayerLogitsTrace read_trace(std::istream& source);

std::uint64_t write_trace_file(const LayerLogitsTrace& trace, const std::string& path);
LayerLogitsTrace read_trace_file(const std::string& path);

// Throws std::out_of_range when t >= num_steps.
StepView step_view(const LayerLogitsTrace& trace, std::size_t t);

}  // namespace sled
