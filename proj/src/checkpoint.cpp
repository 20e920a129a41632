#include "ssl2/io/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace ssl2::detail {

using nlohmann::json;

namespace {
constexpr char kMagic[8] = {'S', 'S', 'L', '2', 'C', 'K', 'P', 'T'};
}

void write_checkpoint_file(const std::string& path, const CheckpointHeader& header,
                           const std::vector<std::pair<std::string, std::vector<float>>>& arrays) {
  std::vector<float> payload;
  json table = json::array();
  std::int64_t offset = 0;
  for (const auto& [name, data] : arrays) {
    table.push_back({{"name", name}, {"offset", offset}, {"count", static_cast<std::int64_t>(data.size())}});
    payload.insert(payload.end(), data.begin(), data.end());
    offset += static_cast<std::int64_t>(data.size());
  }
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size() * sizeof(float))));

  json h;
  h["schema_version"] = header.schema_version;
  h["config"] = header.config;
  h["training_stage"] = header.training_stage;
  h["step"] = header.step;
  h["arrays"] = std::move(table);
  h["payload_crc32"] = crc;
  const std::string hs = h.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IOError("cannot open checkpoint for write: " + path);
  f.write(kMagic, sizeof(kMagic));
  const std::uint64_t hlen = hs.size();
  f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  f.write(reinterpret_cast<const char*>(payload.data()),
          static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!f) throw IOError("checkpoint write failed: " + path);
}

RawCheckpoint read_checkpoint_file(const std::string& path) {
  if (!std::filesystem::exists(path)) throw MissingFile("no such checkpoint: " + path);
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IOError("cannot open checkpoint: " + path);

  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw SchemaMismatch("not a checkpoint file: " + path);
  std::uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!f || hlen == 0 || hlen > (1ULL << 24)) throw SchemaMismatch("corrupt checkpoint header: " + path);
  std::string hs(hlen, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw SchemaMismatch("corrupt checkpoint header: " + path);

  json h;
  try {
    h = json::parse(hs);
  } catch (const json::exception&) {
    throw SchemaMismatch("corrupt checkpoint header JSON: " + path);
  }

  RawCheckpoint out;
  try {
    out.header.schema_version = h.at("schema_version").get<int>();
    if (out.header.schema_version != 1)
      throw SchemaMismatch("unsupported checkpoint schema version in " + path);
    out.header.config = h.at("config").get<EncoderConfig>();
    out.header.training_stage = h.at("training_stage").get<std::string>();
    out.header.step = h.at("step").get<std::int64_t>();
  } catch (const json::exception&) {
    throw SchemaMismatch("checkpoint header missing fields: " + path);
  }

  std::int64_t total = 0;
  for (const auto& a : h.at("arrays")) total += a.at("count").get<std::int64_t>();
  std::vector<float> payload(static_cast<std::size_t>(total));
  f.read(reinterpret_cast<char*>(payload.data()),
         static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!f) throw SchemaMismatch("truncated checkpoint payload: " + path);

  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size() * sizeof(float))));
  if (crc != h.at("payload_crc32").get<std::uint32_t>())
    throw SchemaMismatch("checkpoint payload CRC mismatch (tampered or truncated): " + path);

  for (const auto& a : h.at("arrays")) {
    const auto name = a.at("name").get<std::string>();
    const auto off = a.at("offset").get<std::int64_t>();
    const auto cnt = a.at("count").get<std::int64_t>();
    if (off < 0 || cnt < 0 || off + cnt > total) throw SchemaMismatch("bad array table in " + path);
    out.arrays.emplace(name, std::vector<float>(payload.begin() + off, payload.begin() + off + cnt));
  }
  return out;
}

}  // namespace ssl2::detail
