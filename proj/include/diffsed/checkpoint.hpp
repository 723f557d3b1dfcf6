#pragma once

#include <string>

#include <json.hpp>

#include "diffsed/tensor.hpp"

namespace diffsed {

// Checkpoint container: an 8-byte magic, a little-endian u32 format version,
// a little-endian u64 manifest length, the manifest JSON (UTF-8), then one
// flat little-endian f64 payload per parameter, in manifest order. The
// manifest records parameter names and shapes plus an arbitrary metadata
// object (model config, arch hash). Byte layout is documented in the README;
// save -> load -> save must be bit-identical.

inline constexpr char kCheckpointMagic[8] = {'D', 'S', 'E', 'D', 'C', 'K', 'P', 'T'};
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const ParamStore& params,
                     const nlohmann::json& meta);

// Loads parameter values and metadata. Parameters are created in manifest
// order with requires_grad set.
struct Checkpoint {
    ParamStore params;
    nlohmann::json meta;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace diffsed
