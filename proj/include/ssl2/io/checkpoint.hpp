#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ssl2/nn/model.hpp"

namespace ssl2 {

// Checkpoint container: magic, a JSON header (schema version, encoder config,
// training stage, step, array table, payload CRC32), then the raw float32
// payload. The CRC is verified before any weight is applied, so a tampered
// file never partially loads.

struct CheckpointHeader {
  int schema_version = 1;
  EncoderConfig config;
  std::string training_stage;  // "pretrain" | "finetune"
  std::int64_t step = 0;
};

namespace detail {

struct RawCheckpoint {
  CheckpointHeader header;
  std::map<std::string, std::vector<float>> arrays;
};

void write_checkpoint_file(const std::string& path, const CheckpointHeader& header,
                           const std::vector<std::pair<std::string, std::vector<float>>>& arrays);
RawCheckpoint read_checkpoint_file(const std::string& path);

}  // namespace detail

template <typename Scalar>
void save_checkpoint(const SegModel<Scalar>& model, const std::string& path,
                     const std::string& training_stage, std::int64_t step) {
  CheckpointHeader h;
  h.config = model.config();
  h.training_stage = training_stage;
  h.step = step;
  std::vector<std::pair<std::string, std::vector<float>>> arrays;
  for (const auto& e : model.params().entries) {
    std::vector<float> data(static_cast<std::size_t>(e.size));
    for (index_t i = 0; i < e.size; ++i) data[static_cast<std::size_t>(i)] = static_cast<float>(e.value[i]);
    arrays.emplace_back(e.name, std::move(data));
  }
  detail::write_checkpoint_file(path, h, arrays);
}

inline CheckpointHeader read_checkpoint_header(const std::string& path) {
  return detail::read_checkpoint_file(path).header;
}

// Copies encoder.* arrays into the target; decoder and head weights are left
// untouched. Every encoder array must be present with a matching size.
template <typename Scalar>
void load_encoder_into(SegModel<Scalar>& target, const std::string& path) {
  const detail::RawCheckpoint ck = detail::read_checkpoint_file(path);
  if (!encoder_compatible(ck.header.config, target.config()))
    throw SchemaMismatch("checkpoint encoder config incompatible with target model");
  // validate everything before touching any weight
  for (const auto& e : target.params().entries) {
    if (e.name.rfind("encoder.", 0) != 0) continue;
    auto it = ck.arrays.find(e.name);
    if (it == ck.arrays.end()) throw SchemaMismatch("checkpoint missing array " + e.name);
    if (static_cast<index_t>(it->second.size()) != e.size)
      throw SchemaMismatch("checkpoint array size mismatch for " + e.name);
  }
  for (auto& e : target.params().entries) {
    if (e.name.rfind("encoder.", 0) != 0) continue;
    const auto& src = ck.arrays.at(e.name);
    for (index_t i = 0; i < e.size; ++i) e.value[i] = static_cast<Scalar>(src[static_cast<std::size_t>(i)]);
  }
}

// Full-model restore (all arrays must match the target registry exactly).
template <typename Scalar>
void load_checkpoint_into(SegModel<Scalar>& target, const std::string& path) {
  const detail::RawCheckpoint ck = detail::read_checkpoint_file(path);
  if (!encoder_compatible(ck.header.config, target.config()))
    throw SchemaMismatch("checkpoint encoder config incompatible with target model");
  for (const auto& e : target.params().entries) {
    auto it = ck.arrays.find(e.name);
    if (it == ck.arrays.end()) throw SchemaMismatch("checkpoint missing array " + e.name);
    if (static_cast<index_t>(it->second.size()) != e.size)
      throw SchemaMismatch("checkpoint array size mismatch for " + e.name);
  }
  for (auto& e : target.params().entries) {
    const auto& src = ck.arrays.at(e.name);
    for (index_t i = 0; i < e.size; ++i) e.value[i] = static_cast<Scalar>(src[static_cast<std::size_t>(i)]);
  }
}

// Encoder-only weight checksum, used to verify transfer.
template <typename Scalar>
std::uint64_t encoder_checksum(const SegModel<Scalar>& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& e : model.params().entries)
    if (e.name.rfind("encoder.", 0) == 0) h = hash_values(e.value, e.size, h);
  return h;
}

template <typename Scalar>
std::uint64_t section_checksum(const SegModel<Scalar>& model, const std::string& prefix) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& e : model.params().entries)
    if (e.name.rfind(prefix, 0) == 0) h = hash_values(e.value, e.size, h);
  return h;
}

}  // namespace ssl2
