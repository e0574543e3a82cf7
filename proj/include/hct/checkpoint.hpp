#pragma once

#include "hct/config.hpp"
#include "hct/optim.hpp"

namespace hct {

struct CheckpointMeta {
    int64_t epoch = 0;
    uint64_t config_hash = 0;
    std::string rng_state;
};

// Binary checkpoint ("HCTC", version 1): meta, every registered parameter
// by name, and the optimizer moments. Loading verifies names and shapes;
// a config-hash mismatch throws unless force is set.
void save_checkpoint(const std::string& path, const ParamRegistry& reg, AdamW* opt,
                     const CheckpointMeta& meta);
CheckpointMeta load_checkpoint(const std::string& path, const ParamRegistry& reg, AdamW* opt,
                               uint64_t expected_hash, bool force = false);

} // namespace hct
