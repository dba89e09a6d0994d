#include "sled/trace.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <istream>
#include <ostream>

#include <json.hpp>

namespace sled {

namespace {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

std::uint32_t byteswap32(std::uint32_t v) {
  return ((v & 0x000000FFu) << 24) | ((v & 0x0000FF00u) << 8) | ((v & 0x00FF0000u) >> 8) |
         ((v & 0xFF000000u) >> 24);
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

// Reads exactly n bytes or reports truncation of the named section.
void read_section(std::istream& in, char* dst, std::size_t n, const char* section) {
  if (n == 0) return;
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw TraceError(std::string("truncated at ") + section);
  }
}

void check_header_fields(const TraceHeader& h) {
  if (h.num_layers < 2) throw TraceError("invalid layer count (need >= 2)");
  if (h.vocab_size < 2) throw TraceError("invalid vocab size (need >= 2)");
  if (h.num_steps < 1) throw TraceError("invalid step count (need >= 1)");
}

void check_metadata(const std::string& metadata) {
  if (metadata.empty()) return;
  if (!nlohmann::json::accept(metadata)) throw TraceError("invalid metadata (not JSON)");
}

}  // namespace

std::uint64_t trace_byte_size(const TraceHeader& header) {
  const std::uint64_t steps = header.num_steps;
  return kTraceHeaderBytes + header.metadata.size() + 4 * steps +
         4 * steps * header.num_layers * header.vocab_size;
}

void validate_trace(const LayerLogitsTrace& trace) {
  const auto& h = trace.header;
  check_header_fields(h);
  check_metadata(h.metadata);
  if (trace.tokens.size() != h.num_steps) throw TraceError("token count does not match num_steps");
  if (trace.logits.size() != static_cast<std::size_t>(h.num_steps) * trace.step_size()) {
    throw TraceError("logit count does not match header");
  }
  for (TokenId t : trace.tokens) {
    if (t >= h.vocab_size) throw TraceError("token out of range");
  }
  for (float v : trace.logits) {
    if (!std::isfinite(v)) throw TraceError("non-finite value");
  }
}

std::uint64_t write_trace(const LayerLogitsTrace& trace, std::ostream& sink) {
  validate_trace(trace);
  const auto& h = trace.header;

  std::string head;
  head.reserve(kTraceHeaderBytes + h.metadata.size() + 4 * trace.tokens.size());
  head.append(kTraceMagic.data(), kTraceMagic.size());
  put_u32(head, kTraceVersion);
  put_u32(head, h.num_layers);
  put_u32(head, h.vocab_size);
  put_u32(head, h.num_steps);
  put_u32(head, static_cast<std::uint32_t>(h.metadata.size()));
  head += h.metadata;
  for (TokenId t : trace.tokens) put_u32(head, t);
  sink.write(head.data(), static_cast<std::streamsize>(head.size()));

  const std::size_t logit_bytes = trace.logits.size() * sizeof(float);
  if constexpr (std::endian::native == std::endian::little) {
    sink.write(reinterpret_cast<const char*>(trace.logits.data()),
               static_cast<std::streamsize>(logit_bytes));
  } else {
    std::vector<std::uint32_t> swapped(trace.logits.size());
    for (std::size_t i = 0; i < swapped.size(); ++i) {
      swapped[i] = byteswap32(std::bit_cast<std::uint32_t>(trace.logits[i]));
    }
    sink.write(reinterpret_cast<const char*>(swapped.data()),
               static_cast<std::streamsize>(logit_bytes));
  }
  if (!sink) throw TraceError("write failed");
  return head.size() + logit_bytes;
}

LayerLogitsTrace read_trace(std::istream& source) {
  std::array<unsigned char, kTraceHeaderBytes> raw{};
  source.read(reinterpret_cast<char*>(raw.data()), 4);
  if (source.gcount() == 4 && !std::equal(kTraceMagic.begin(), kTraceMagic.end(), raw.begin())) {
    throw TraceError("not a trace file");
  }
  if (source.gcount() != 4) throw TraceError("truncated at header");
  read_section(source, reinterpret_cast<char*>(raw.data()) + 4, kTraceHeaderBytes - 4, "header");

  LayerLogitsTrace trace;
  auto& h = trace.header;
  const std::uint32_t version = get_u32(raw.data() + 4);
  if (version != kTraceVersion) {
    throw TraceError("unsupported trace version " + std::to_string(version));
  }
  h.num_layers = get_u32(raw.data() + 8);
  h.vocab_size = get_u32(raw.data() + 12);
  h.num_steps = get_u32(raw.data() + 16);
  const std::uint32_t metadata_len = get_u32(raw.data() + 20);
  check_header_fields(h);

  // Seekable sources are size-checked up front so a corrupted count cannot
  // trigger a huge allocation.
  if (const auto here = source.tellg(); here != std::streampos(-1)) {
    source.seekg(0, std::ios::end);
    const auto end = source.tellg();
    source.seekg(here);
    if (end != std::streampos(-1)) {
      const std::uint64_t remaining = static_cast<std::uint64_t>(end - here);
      const std::uint64_t token_bytes = 4ull * h.num_steps;
      const std::uint64_t logit_bytes = token_bytes * h.num_layers * h.vocab_size;
      if (remaining < metadata_len) throw TraceError("truncated at metadata");
      if (remaining < metadata_len + token_bytes) throw TraceError("truncated at tokens");
      if (remaining < metadata_len + token_bytes + logit_bytes) {
        throw TraceError("truncated at logits");
      }
    }
  }

  h.metadata.resize(metadata_len);
  read_section(source, h.metadata.data(), metadata_len, "metadata");
  check_metadata(h.metadata);

  std::vector<unsigned char> token_bytes(4ull * h.num_steps);
  read_section(source, reinterpret_cast<char*>(token_bytes.data()), token_bytes.size(), "tokens");
  trace.tokens.resize(h.num_steps);
  for (std::size_t t = 0; t < h.num_steps; ++t) {
    trace.tokens[t] = get_u32(token_bytes.data() + 4 * t);
    if (trace.tokens[t] >= h.vocab_size) throw TraceError("token out of range");
  }

  trace.logits.resize(static_cast<std::size_t>(h.num_steps) * trace.step_size());
  read_section(source, reinterpret_cast<char*>(trace.logits.data()),
               trace.logits.size() * sizeof(float), "logits");
  if constexpr (std::endian::native != std::endian::little) {
    for (float& v : trace.logits) {
      v = std::bit_cast<float>(byteswap32(std::bit_cast<std::uint32_t>(v)));
    }
  }
  if (source.peek() != std::char_traits<char>::eof()) {
    throw TraceError("trailing bytes after logits");
  }
  for (float v : trace.logits) {
    if (!std::isfinite(v)) throw TraceError("non-finite value");
  }
  return trace;
}

std::uint64_t write_trace_file(const LayerLogitsTrace& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw TraceError("cannot open '" + path + "' for writing");
  const auto n = write_trace(trace, out);
  out.flush();
  if (!out) throw TraceError("write failed for '" + path + "'");
  return n;
}

LayerLogitsTrace read_trace_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TraceError("cannot open '" + path + "'");
  return read_trace(in);
}

StepView step_view(const LayerLogitsTrace& trace, std::size_t t) {
  if (t >= trace.header.num_steps) {
    throw std::out_of_range("step " + std::to_string(t) + " out of range (num_steps " +
                            std::to_string(trace.header.num_steps) + ")");
  }
  const std::size_t n = trace.step_size();
  StepView view;
  view.matrix.values = std::span<const float>(trace.logits).subspan(t * n, n);
  view.matrix.layers = trace.header.num_layers;
  view.matrix.vocab = trace.header.vocab_size;
  view.token = trace.tokens[t];
  return view;
}

}  // namespace sled
