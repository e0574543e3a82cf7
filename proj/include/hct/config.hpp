#pragma once

#include <map>
#include <string>

#include "hct/model.hpp"

namespace hct {

// Flat key=value view of a TOML-style file: '#' comments, [section]
// headers prefix keys with "section.".
std::map<std::string, std::string> parse_kv_file(const std::string& path);
void apply_override(std::map<std::string, std::string>& kv, const std::string& assignment);

enum class TrainStage { PhaseStep, InstrumentAction, Joint };
TrainStage stage_from_name(const std::string& name);
const char* stage_name(TrainStage s);

struct RunConfig {
    // data
    std::string data_path = "data/train.hctd";
    std::string out_dir = "runs/default";
    // model
    ModelConfig model;
    // optimization
    int64_t epochs = 4;
    int64_t warmup_epochs = 1;
    int64_t batch_size = 20;
    double lr = 1e-3;
    double weight_decay = 0.05;
    uint64_t seed = 1;
    TrainStage stage = TrainStage::Joint;
    std::string freeze; // comma-separated glob patterns of tunable params

    // builds from defaults + file keys + command line overrides, validates
    static RunConfig from_kv(const std::map<std::string, std::string>& kv);
    void validate() const;
};

uint64_t config_hash(const RunConfig& cfg);

} // namespace hct
