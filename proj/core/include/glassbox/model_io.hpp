#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "glassbox/nn.hpp"

namespace glassbox {

// Container layout shared by the model, trace, and dataset files:
//   8-byte magic | u64 manifest length | UTF-8 JSON manifest | payload | u32 CRC32(payload)
// All integers and floats are little-endian.

struct Container {
  std::string manifest;
  std::vector<std::uint8_t> payload;
};

std::vector<std::uint8_t> encode_container(std::string_view magic, const Container& c);
/// Throws FormatError naming the byte offset of the first inconsistency.
Container decode_container(std::string_view magic, const std::vector<std::uint8_t>& bytes);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
/// Writes to a sibling temp file and renames it into place.
void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes);
void write_text_file(const std::string& path, std::string_view text);
std::string read_text_file(const std::string& path);

namespace nn {

inline constexpr std::string_view kModelMagic = "GBOXMDL1";
inline constexpr std::string_view kTraceMagic = "GBOXACT1";

/// `provenance`, when non-empty, is a JSON document stored in the manifest.
std::vector<std::uint8_t> encode_model(const Model& model, std::string_view provenance = {});
Model decode_model(const std::vector<std::uint8_t>& bytes);
void save_model(const Model& model, const std::string& path, std::string_view provenance = {});
/// The provenance JSON of a model file, empty when absent.
std::string model_provenance(const std::string& path);
Model load_model(const std::string& path);

/// The interop subset of a forward trace.
struct TraceRecord {
  std::uint64_t sample_id = 0;
  Tensor conv_final;
  std::vector<float> softmax;

  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

std::vector<std::uint8_t> encode_traces(const std::vector<TraceRecord>& records, std::string_view provenance = {});
std::vector<TraceRecord> decode_traces(const std::vector<std::uint8_t>& bytes);
void save_traces(const std::vector<TraceRecord>& records, const std::string& path,
                 std::string_view provenance = {});
std::vector<TraceRecord> load_traces(const std::string& path);

}  // namespace nn
}  // namespace glassbox
