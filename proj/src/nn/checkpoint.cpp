#include "panodream/nn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace panodream::nn {

namespace {

constexpr char kMagic[8] = {'P', 'D', 'C', 'K', 'P', 'T', '0', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& store,
                     const nlohmann::json& meta) {
  nlohmann::json header;
  header["schema_version"] = kCheckpointSchemaVersion;
  header["dtype"] = "float64";
  header["meta"] = meta;
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& p : store.params()) {
    const auto& s = p.value.shape();
    tensors.push_back({{"name", p.name},
                       {"shape", {s.n, s.c, s.h, s.w}},
                       {"dtype", "float64"},
                       {"offset", offset},
                       {"count", p.value.size()}});
    offset += p.value.size() * sizeof(double);
  }
  header["tensors"] = tensors;
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : store.params()) {
    out.write(reinterpret_cast<const char*>(p.value.data()),
              static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  }
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw SchemaError("not a checkpoint file: " + path);
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1u << 30)) throw SchemaError("corrupt checkpoint header: " + path);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  Checkpoint ck;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("checkpoint header is not valid JSON: " + path + ": " + e.what());
  }
  const int version = header.value("schema_version", -1);
  if (version != kCheckpointSchemaVersion) {
    throw SchemaError("checkpoint schema version " + std::to_string(version) + " unsupported (expected " +
                      std::to_string(kCheckpointSchemaVersion) + "): " + path);
  }
  ck.meta = header.value("meta", nlohmann::json::object());
  const auto data_start = in.tellg();
  for (const auto& t : header.at("tensors")) {
    const auto dims = t.at("shape").get<std::vector<int>>();
    if (dims.size() != 4 || t.at("dtype") != "float64") throw SchemaError("bad tensor entry in " + path);
    Tensor value(dims[0], dims[1], dims[2], dims[3]);
    if (t.at("count").get<std::size_t>() != value.size()) throw SchemaError("tensor count mismatch in " + path);
    in.seekg(data_start + static_cast<std::streamoff>(t.at("offset").get<std::uint64_t>()));
    in.read(reinterpret_cast<char*>(value.data()),
            static_cast<std::streamsize>(value.size() * sizeof(double)));
    if (!in) throw IoError("truncated checkpoint: " + path);
    ck.store.add(t.at("name").get<std::string>(), std::move(value));
  }
  return ck;
}

void restore_values(ParamStore& target, const ParamStore& source) {
  if (target.size() != source.size()) {
    throw SchemaError("checkpoint has " + std::to_string(source.size()) + " tensors, model expects " +
                      std::to_string(target.size()));
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    auto& t = target.params()[i];
    const auto& s = source.params()[i];
    if (t.name != s.name || !(t.value.shape() == s.value.shape())) {
      throw SchemaError("checkpoint tensor " + s.name + " " + s.value.shape().str() +
                        " does not match model tensor " + t.name + " " + t.value.shape().str());
    }
    t.value = s.value;
  }
}

}  // namespace panodream::nn
