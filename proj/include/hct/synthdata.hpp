#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hct/rng.hpp"
#include "hct/tensor.hpp"

namespace hct {

struct TaxonomySizes {
    int64_t phases = 4, steps = 10, actions = 49, instruments = 13;
    bool operator==(const TaxonomySizes&) const = default;
};

// Hierarchical label space: each step belongs to exactly one phase; each
// step row lists the probability of its permitted actions/instruments
// (zero = not permitted).
struct Taxonomy {
    TaxonomySizes sizes;
    uint64_t seed = 0;
    std::vector<int64_t> step_parent;             // [steps]
    std::vector<std::vector<double>> action_prob; // [steps][actions]
    std::vector<std::vector<double>> instr_prob;  // [steps][instruments]
    std::vector<std::vector<float>> class_embed;  // [instruments][box_dim]

    static constexpr int64_t kBoxDim = 256;

    int64_t parent(int64_t step) const { return step_parent[size_t(step)]; }
};

struct Box {
    float x1, y1, x2, y2;
    int64_t cls;    // instrument class
    int64_t action; // box-level action assignment
    float confidence;
};

struct ClipSample {
    int64_t t = 16, h = 32, w = 32, cin = 3;
    std::vector<float> clip; // t*h*w*cin row-major
    int64_t phase = 0, step = 0;
    std::vector<uint8_t> action_multihot;
    std::vector<Box> boxes;
    std::vector<float> box_feats; // boxes.size() x kBoxDim
    uint32_t clip_id = 0;
    uint32_t video_id = 0;
    uint64_t seed = 0;

    Var clip_tensor() const;      // [T,H,W,Cin] float64
    Var box_feat_tensor() const;  // [B, kBoxDim] float64
};

struct DatasetManifest {
    TaxonomySizes sizes;
    uint64_t taxonomy_seed = 0, data_seed = 0;
    double noise = 0.0;
    std::vector<uint32_t> train_videos, test_videos;
    std::map<std::string, std::vector<int64_t>> class_freq; // phase/step/action/instrument
};

struct Dataset {
    Taxonomy taxonomy;
    std::vector<ClipSample> samples;
    DatasetManifest manifest;

    std::vector<size_t> split_indices(bool train) const;
};

// Deterministic taxonomy with each phase owning at least one step and
// sparse co-occurrence rows (2-6 actions, 1-3 instruments per step).
Taxonomy sample_taxonomy(uint64_t seed, const TaxonomySizes& sizes);

ClipSample generate_clip(const Taxonomy& tax, uint32_t clip_id, uint32_t video_id, uint64_t seed,
                         double noise, int64_t forced_step = -1);

struct GenerateOptions {
    uint64_t taxonomy_seed = 7;
    uint64_t data_seed = 11;
    int64_t n_clips = 640;
    TaxonomySizes sizes;
    double noise = 1.0;
    double test_fraction = 0.2;
    int64_t clips_per_video = 8;
    double step_label_noise = 0.0; // probability of flipping the step label
};

Dataset generate_dataset(const GenerateOptions& opt);

// Binary container ("HCTD", version 1) + UTF-8 JSON manifest sidecar
// at <path>.json.
void write_dataset(const Dataset& ds, const std::string& path);
Dataset read_dataset(const std::string& path);

// Detection confidence threshold for keeping a synthetic box.
constexpr double kBoxConfidenceThreshold = 0.75;

} // namespace hct
