#pragma once

#include <string>

#include "sacf/optim.hpp"

namespace sacf {

struct CheckpointMeta {
    std::string config_digest;
    int update = 0;
    int adam_step = 0;
};

// Single-file format: a text manifest (format version, config digest, update
// counter, named parameter list with shapes and byte offsets) followed by the
// raw payload of little-endian float32 values in manifest order; the Adam
// first/second moments follow the parameters at mirrored offsets.
void save_checkpoint(const std::string& path, const std::string& config_digest, int update,
                     const OptimizerState& opt);

// Restores parameters and moments in place. Refuses a checkpoint whose config
// digest differs from `expected_digest`, whose manifest does not match the
// registered parameters, or whose payload length disagrees with the manifest.
CheckpointMeta load_checkpoint(const std::string& path, const std::string& expected_digest,
                               OptimizerState& opt);

// Manifest header only (no payload validation).
CheckpointMeta peek_checkpoint(const std::string& path);

}  // namespace sacf
