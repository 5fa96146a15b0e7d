#include "glassbox/model_io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <json.hpp>

#include "glassbox/checksum.hpp"
#include "glassbox/errors.hpp"

namespace glassbox {

using nlohmann::json;

std::vector<std::uint8_t> encode_container(std::string_view magic, const Container& c) {
  std::vector<std::uint8_t> out(magic.begin(), magic.end());
  append_u64(out, c.manifest.size());
  out.insert(out.end(), c.manifest.begin(), c.manifest.end());
  out.insert(out.end(), c.payload.begin(), c.payload.end());
  append_u32(out, crc32(c.payload));
  return out;
}

Container decode_container(std::string_view magic, const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < magic.size() || !std::equal(magic.begin(), magic.end(), bytes.begin())) {
    throw FormatError("bad magic at offset 0: expected \"" + std::string(magic) + "\"");
  }
  std::size_t at = magic.size();
  if (bytes.size() < at + 8) throw FormatError("truncated manifest length at offset " + std::to_string(at));
  const std::uint64_t manifest_len = read_u64(bytes.data() + at);
  at += 8;
  if (manifest_len > bytes.size() - at) {
    throw FormatError("manifest of " + std::to_string(manifest_len) + " bytes overruns file at offset " +
                      std::to_string(at));
  }
  Container c;
  c.manifest.assign(bytes.begin() + static_cast<std::ptrdiff_t>(at),
                    bytes.begin() + static_cast<std::ptrdiff_t>(at + manifest_len));
  at += manifest_len;
  if (bytes.size() < at + 4) throw FormatError("truncated payload at offset " + std::to_string(at));
  const std::size_t crc_at = bytes.size() - 4;
  c.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(at), bytes.begin() + static_cast<std::ptrdiff_t>(crc_at));
  const std::uint32_t stored = read_u32(bytes.data() + crc_at);
  const std::uint32_t actual = crc32(c.payload);
  if (stored != actual) {
    throw FormatError("payload checksum mismatch at offset " + std::to_string(crc_at) + " (stored " + hex32(stored) +
                      ", computed " + hex32(actual) + ")");
  }
  return c;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, target);
}

void write_text_file(const std::string& path, std::string_view text) {
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string read_text_file(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

namespace nn {

namespace {

json layer_to_json(const LayerSpec& l) {
  json j = {{"kind", to_string(l.kind)}, {"name", l.name}};
  switch (l.kind) {
    case LayerKind::conv:
      j["out_maps"] = l.out_maps;
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      j["padding"] = l.padding;
      break;
    case LayerKind::maxpool:
      j["window"] = l.window;
      j["stride"] = l.stride;
      break;
    case LayerKind::fc:
      j["out_dim"] = l.out_dim;
      break;
    default:
      break;
  }
  return j;
}

LayerSpec layer_from_json(const json& j) {
  LayerSpec l;
  l.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  l.name = j.at("name").get<std::string>();
  l.out_maps = j.value("out_maps", std::size_t{0});
  l.kernel = j.value("kernel", std::size_t{0});
  l.stride = j.value("stride", std::size_t{1});
  l.padding = j.value("padding", std::size_t{0});
  l.window = j.value("window", std::size_t{0});
  l.out_dim = j.value("out_dim", std::size_t{0});
  return l;
}

json parse_manifest(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what());
  }
}

/// Reads `count` floats declared at [offset, offset+bytes) of the payload.
std::vector<float> take_floats(const std::vector<std::uint8_t>& payload, std::size_t payload_base,
                               const std::string& name, std::uint64_t offset, std::uint64_t bytes,
                               std::size_t expected_count) {
  if (bytes != expected_count * 4) {
    throw FormatError("tensor '" + name + "' declares " + std::to_string(bytes) + " bytes but its shape needs " +
                      std::to_string(expected_count * 4));
  }
  if (offset > payload.size() || bytes > payload.size() - offset) {
    throw FormatError("tensor '" + name + "' overruns the payload at offset " +
                      std::to_string(payload_base + offset));
  }
  std::vector<float> out(expected_count);
  read_f32(payload.data() + offset, out);
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_model(const Model& model, std::string_view provenance) {
  json manifest;
  manifest["format"] = std::string(kModelMagic);
  manifest["version"] = 1;
  manifest["input_shape"] = model.input_shape();
  manifest["num_classes"] = model.num_classes();
  manifest["feature_dim"] = model.feature_dim();
  manifest["conv_final"] = model.layer(model.conv_final_index()).name;
  json layers = json::array();
  for (const auto& l : model.layers()) layers.push_back(layer_to_json(l));
  manifest["layers"] = layers;

  Container c;
  json tensors = json::array();
  for (const auto& [name, t] : model.weights()) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", c.payload.size()}, {"bytes", t.size() * 4}});
    append_f32(c.payload, t.data());
  }
  manifest["tensors"] = tensors;
  manifest["payload_bytes"] = c.payload.size();
  if (!provenance.empty()) manifest["provenance"] = json::parse(provenance);
  c.manifest = manifest.dump();
  return encode_container(kModelMagic, c);
}

Model decode_model(const std::vector<std::uint8_t>& bytes) {
  const Container c = decode_container(kModelMagic, bytes);
  const std::size_t payload_base = kModelMagic.size() + 8 + c.manifest.size();
  const json m = parse_manifest(c.manifest);
  try {
    if (m.at("payload_bytes").get<std::uint64_t>() != c.payload.size()) {
      throw FormatError("manifest declares " + std::to_string(m.at("payload_bytes").get<std::uint64_t>()) +
                        " payload bytes, found " + std::to_string(c.payload.size()) + " at offset " +
                        std::to_string(payload_base));
    }
    std::vector<LayerSpec> layers;
    for (const auto& jl : m.at("layers")) layers.push_back(layer_from_json(jl));
    std::map<std::string, Tensor> weights;
    for (const auto& jt : m.at("tensors")) {
      const auto name = jt.at("name").get<std::string>();
      const auto shape = jt.at("shape").get<Shape>();
      auto data = take_floats(c.payload, payload_base, name, jt.at("offset").get<std::uint64_t>(),
                              jt.at("bytes").get<std::uint64_t>(), shape_size(shape));
      weights.emplace(name, Tensor(shape, std::move(data)));
    }
    return Model(m.at("input_shape").get<Shape>(), std::move(layers), std::move(weights));
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed model manifest: ") + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(std::string("model file describes an invalid model: ") + e.what());
  }
}

void save_model(const Model& model, const std::string& path, std::string_view provenance) {
  write_file_bytes(path, encode_model(model, provenance));
}

std::string model_provenance(const std::string& path) {
  const json m = parse_manifest(decode_container(kModelMagic, read_file_bytes(path)).manifest);
  return m.contains("provenance") ? m["provenance"].dump() : std::string();
}

Model load_model(const std::string& path) { return decode_model(read_file_bytes(path)); }

std::vector<std::uint8_t> encode_traces(const std::vector<TraceRecord>& records, std::string_view provenance) {
  Container c;
  json list = json::array();
  for (const auto& r : records) {
    json jr = {{"sample_id", r.sample_id},
               {"conv_final_shape", r.conv_final.shape()},
               {"conv_final_offset", c.payload.size()},
               {"conv_final_bytes", r.conv_final.size() * 4}};
    append_f32(c.payload, r.conv_final.data());
    jr["softmax_offset"] = c.payload.size();
    jr["softmax_bytes"] = r.softmax.size() * 4;
    append_f32(c.payload, r.softmax);
    list.push_back(std::move(jr));
  }
  json manifest = {{"format", std::string(kTraceMagic)}, {"version", 1}, {"records", list},
                   {"payload_bytes", c.payload.size()}};
  if (!provenance.empty()) manifest["provenance"] = json::parse(provenance);
  c.manifest = manifest.dump();
  return encode_container(kTraceMagic, c);
}

std::vector<TraceRecord> decode_traces(const std::vector<std::uint8_t>& bytes) {
  const Container c = decode_container(kTraceMagic, bytes);
  const std::size_t payload_base = kTraceMagic.size() + 8 + c.manifest.size();
  const json m = parse_manifest(c.manifest);
  std::vector<TraceRecord> out;
  try {
    for (const auto& jr : m.at("records")) {
      TraceRecord r;
      r.sample_id = jr.at("sample_id").get<std::uint64_t>();
      const std::string label = "sample " + std::to_string(r.sample_id);
      const auto shape = jr.at("conv_final_shape").get<Shape>();
      r.conv_final = Tensor(shape, take_floats(c.payload, payload_base, label + " conv_final",
                                               jr.at("conv_final_offset").get<std::uint64_t>(),
                                               jr.at("conv_final_bytes").get<std::uint64_t>(), shape_size(shape)));
      const auto sm_bytes = jr.at("softmax_bytes").get<std::uint64_t>();
      r.softmax = take_floats(c.payload, payload_base, label + " softmax", jr.at("softmax_offset").get<std::uint64_t>(),
                              sm_bytes, sm_bytes / 4);
      out.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed trace manifest: ") + e.what());
  }
  return out;
}

void save_traces(const std::vector<TraceRecord>& records, const std::string& path, std::string_view provenance) {
  write_file_bytes(path, encode_traces(records, provenance));
}

std::vector<TraceRecord> load_traces(const std::string& path) { return decode_traces(read_file_bytes(path)); }

}  // namespace nn
}  // namespace glassbox
