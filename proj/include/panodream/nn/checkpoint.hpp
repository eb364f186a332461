#pragma once

#include <string>

#include "json.hpp"

#include "panodream/nn/params.hpp"

namespace panodream::nn {

inline constexpr int kCheckpointSchemaVersion = 1;

// Layout: 8-byte magic "PDCKPT01", little-endian uint64 header length, JSON
// header, then little-endian float64 arrays in header order. The header
// lists {name, shape, dtype, offset, count} per tensor plus a free-form
// "meta" object. Optimizer state is not stored.
void save_checkpoint(const std::string& path, const ParamStore& store,
                     const nlohmann::json& meta);

struct Checkpoint {
  ParamStore store;
  nlohmann::json meta;
};

Checkpoint load_checkpoint(const std::string& path);

// Copies values from a loaded checkpoint into an initialized store; names
// and shapes must match exactly.
void restore_values(ParamStore& target, const ParamStore& source);

}  // namespace panodream::nn
