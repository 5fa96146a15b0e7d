#include <gtest/gtest.h>

#include <filesystem>
#include <json.hpp>

#include "glassbox/checksum.hpp"
#include "glassbox/errors.hpp"
#include "glassbox/model_io.hpp"
#include "glassbox/rng.hpp"

using namespace glassbox;
using namespace glassbox::nn;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "glassbox_test_model_io";
  fs::create_directories(dir);
  return dir / name;
}

bool weights_bit_identical(const Model& a, const Model& b) {
  if (a.weights().size() != b.weights().size()) return false;
  for (const auto& [name, t] : a.weights()) {
    if (!bit_identical(t, b.weight(name))) return false;
  }
  return true;
}

}  // namespace

TEST(Crc32, KnownVector) {
  const std::string s = "123456789";
  EXPECT_EQ(crc32(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size())), 0xCBF43926u);
}

TEST(ModelIo, RoundTripIsBitExact) {
  const Model m = Model::reference(8, 7);
  const fs::path p = scratch("m.gbox");
  save_model(m, p.string());
  const Model back = load_model(p.string());
  EXPECT_TRUE(back == m);
  EXPECT_TRUE(weights_bit_identical(back, m));
  EXPECT_EQ(back.checksum(), m.checksum());
  EXPECT_EQ(encode_model(back), encode_model(m));
}

TEST(ModelIo, ProvenanceIsStoredInManifest) {
  const Model m = Model::reference(2, 1);
  const fs::path p = scratch("prov.gbox");
  save_model(m, p.string(), R"({"seed":1})");
  EXPECT_EQ(nlohmann::json::parse(model_provenance(p.string()))["seed"], 1);
  EXPECT_TRUE(load_model(p.string()) == m);
}

TEST(ModelIo, LayoutStartsWithMagicAndLength) {
  const auto bytes = encode_model(Model::reference(2, 1));
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "GBOXMDL1");
  const std::uint64_t len = read_u64(bytes.data() + 8);
  const auto manifest = nlohmann::json::parse(std::string(bytes.begin() + 16, bytes.begin() + 16 + len));
  EXPECT_EQ(manifest["feature_dim"], 64);
  const std::size_t payload = bytes.size() - 16 - len - 4;
  EXPECT_EQ(manifest["payload_bytes"], payload);
  std::vector<std::uint8_t> body(bytes.begin() + 16 + static_cast<long>(len), bytes.end() - 4);
  EXPECT_EQ(read_u32(bytes.data() + bytes.size() - 4), crc32(body));
}

TEST(ModelIo, TruncatedFileIsFormatError) {
  const auto bytes = encode_model(Model::reference(2, 1));
  for (std::size_t keep : {std::size_t{4}, std::size_t{12}, std::size_t{40}, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<long>(keep));
    EXPECT_THROW(decode_model(cut), FormatError) << keep;
  }
}

TEST(ModelIo, FlippedPayloadByteIsChecksumError) {
  auto bytes = encode_model(Model::reference(2, 1));
  bytes[bytes.size() - 100] ^= 0x40;
  try {
    decode_model(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
  }
}

TEST(ModelIo, DeclaredLengthMismatchNamesTensor) {
  const auto bytes = encode_model(Model::reference(2, 1));
  Container c = decode_container(kModelMagic, bytes);
  auto manifest = nlohmann::json::parse(c.manifest);
  const std::string target = manifest["tensors"][1]["name"];
  manifest["tensors"][1]["bytes"] = manifest["tensors"][1]["bytes"].get<std::size_t>() - 4;
  c.manifest = manifest.dump();
  try {
    decode_model(encode_container(kModelMagic, c));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(target), std::string::npos) << e.what();
  }
}

TEST(ModelIo, WrongMagic) {
  auto bytes = encode_model(Model::reference(2, 1));
  bytes[0] = 'X';
  EXPECT_THROW(decode_model(bytes), FormatError);
}

TEST(TraceIo, RoundTrip) {
  std::vector<TraceRecord> rs;
  Rng rng(3);
  for (std::uint64_t id = 0; id < 3; ++id) {
    TraceRecord r;
    r.sample_id = 10 + id;
    r.conv_final = Tensor({4, 2, 2});
    for (auto& v : r.conv_final.data()) v = static_cast<float>(uniform01(rng));
    r.softmax = {0.25f, 0.75f};
    rs.push_back(r);
  }
  const fs::path p = scratch("t.gbox");
  save_traces(rs, p.string());
  EXPECT_EQ(load_traces(p.string()), rs);
  auto bytes = read_file_bytes(p.string());
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "GBOXACT1");
  bytes.pop_back();
  EXPECT_THROW(decode_traces(bytes), FormatError);
}
