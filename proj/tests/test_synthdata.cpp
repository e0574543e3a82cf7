#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "hct/synthdata.hpp"

using namespace hct;

namespace {

std::string temp_path(const std::string& stem) {
    return (std::filesystem::temp_directory_path() / stem).string();
}

} // namespace

TEST_CASE("taxonomy sampling is deterministic and validates its sizes") {
    auto a = sample_taxonomy(7, {});
    auto b = sample_taxonomy(7, {});
    CHECK(a.step_parent == b.step_parent);
    CHECK(a.action_prob == b.action_prob);
    CHECK(a.instr_prob == b.instr_prob);
    auto c = sample_taxonomy(8, {});
    CHECK(a.step_parent != c.step_parent);

    CHECK_THROWS_AS(sample_taxonomy(1, {5, 3, 10, 4}), ConfigError); // steps < phases
    CHECK_THROWS_AS(sample_taxonomy(1, {0, 1, 1, 1}), ConfigError);
}

TEST_CASE("every phase owns a step and every action is reachable") {
    auto tax = sample_taxonomy(7, {});
    std::set<int64_t> owners(tax.step_parent.begin(), tax.step_parent.end());
    CHECK(int64_t(owners.size()) == tax.sizes.phases);
    for (int64_t a = 0; a < tax.sizes.actions; ++a) {
        bool reachable = false;
        for (const auto& row : tax.action_prob) reachable = reachable || row[size_t(a)] > 0.0;
        CHECK(reachable);
    }
    // sparse co-occurrence rows: 2-6 actions and 1-3 instruments per step,
    // plus at most `actions` extra entries added by the reachability fix-up
    int64_t total_actions = 0;
    for (int64_t s = 0; s < tax.sizes.steps; ++s) {
        int64_t na = 0, ni = 0;
        for (double v : tax.action_prob[size_t(s)]) na += v > 0.0;
        for (double v : tax.instr_prob[size_t(s)]) ni += v > 0.0;
        CHECK(na >= 2);
        total_actions += na;
        CHECK(ni >= 1);
        CHECK(ni <= 3);
    }
    CHECK(total_actions <= 6 * tax.sizes.steps + tax.sizes.actions);
}

TEST_CASE("clips are deterministic and label-consistent") {
    auto tax = sample_taxonomy(7, {});
    auto a = generate_clip(tax, 1, 0, 99, 0.1);
    auto b = generate_clip(tax, 1, 0, 99, 0.1);
    CHECK(a.clip == b.clip);
    CHECK(a.box_feats == b.box_feats);
    CHECK(a.phase == tax.parent(a.step));

    // the multihot only marks permitted actions, and at least one
    int64_t n_on = 0;
    for (int64_t act = 0; act < tax.sizes.actions; ++act)
        if (a.action_multihot[size_t(act)]) {
            ++n_on;
            CHECK(tax.action_prob[size_t(a.step)][size_t(act)] > 0.0);
        }
    CHECK(n_on >= 1);

    for (const auto& bx : a.boxes) {
        CHECK(bx.confidence >= kBoxConfidenceThreshold);
        CHECK(bx.confidence <= 1.0f);
        CHECK(bx.x1 >= 0.0f);
        CHECK(bx.y1 >= 0.0f);
        CHECK(bx.x2 <= float(a.w));
        CHECK(bx.y2 <= float(a.h));
        CHECK(bx.x1 < bx.x2);
        CHECK(bx.y1 < bx.y2);
        CHECK(bx.cls >= 0);
        CHECK(bx.cls < tax.sizes.instruments);
        CHECK(tax.instr_prob[size_t(a.step)][size_t(bx.cls)] > 0.0);
    }
    CHECK(a.box_feats.size() == a.boxes.size() * size_t(Taxonomy::kBoxDim));
}

TEST_CASE("the dataset covers every class and splits by video") {
    GenerateOptions opt;
    auto ds = generate_dataset(opt);
    CHECK(int64_t(ds.samples.size()) == opt.n_clips);

    auto train = ds.split_indices(true);
    auto test = ds.split_indices(false);
    CHECK(train.size() + test.size() == ds.samples.size());

    std::vector<int64_t> phase_ct(size_t(opt.sizes.phases), 0), step_ct(size_t(opt.sizes.steps), 0);
    std::set<uint32_t> train_vids, test_vids;
    for (size_t i : train) {
        ++phase_ct[size_t(ds.samples[i].phase)];
        ++step_ct[size_t(ds.samples[i].step)];
        train_vids.insert(ds.samples[i].video_id);
    }
    for (size_t i : test) test_vids.insert(ds.samples[i].video_id);
    for (int64_t c : phase_ct) CHECK(c >= 5);
    for (int64_t c : step_ct) CHECK(c >= 5);
    for (uint32_t v : train_vids) CHECK(test_vids.count(v) == 0);

    // manifest frequencies agree with the samples
    std::vector<int64_t> all_steps(size_t(opt.sizes.steps), 0);
    for (const auto& s : ds.samples) ++all_steps[size_t(s.step)];
    CHECK(ds.manifest.class_freq.at("step") == all_steps);
}

TEST_CASE("noise-free phases are linearly separable through channel means") {
    GenerateOptions opt;
    opt.n_clips = 96;
    opt.noise = 0.0;
    auto ds = generate_dataset(opt);

    auto channel_means = [&](const ClipSample& s) {
        std::vector<double> m(size_t(s.cin), 0.0);
        for (size_t i = 0; i < s.clip.size(); ++i) m[i % size_t(s.cin)] += s.clip[i];
        for (auto& v : m) v /= double(s.clip.size() / size_t(s.cin));
        return m;
    };

    // centroids from the first half, nearest-centroid on the second half
    std::vector<std::vector<double>> centroid(size_t(opt.sizes.phases),
                                              std::vector<double>(3, 0.0));
    std::vector<int64_t> counts(size_t(opt.sizes.phases), 0);
    const size_t half = ds.samples.size() / 2;
    for (size_t i = 0; i < half; ++i) {
        auto m = channel_means(ds.samples[i]);
        for (size_t c = 0; c < 3; ++c) centroid[size_t(ds.samples[i].phase)][c] += m[c];
        ++counts[size_t(ds.samples[i].phase)];
    }
    for (size_t p = 0; p < centroid.size(); ++p) {
        REQUIRE(counts[p] > 0);
        for (auto& v : centroid[p]) v /= double(counts[p]);
    }
    size_t hit = 0;
    for (size_t i = half; i < ds.samples.size(); ++i) {
        auto m = channel_means(ds.samples[i]);
        size_t best = 0;
        double best_d = 1e300;
        for (size_t p = 0; p < centroid.size(); ++p) {
            double d = 0.0;
            for (size_t c = 0; c < 3; ++c)
                d += (m[c] - centroid[p][c]) * (m[c] - centroid[p][c]);
            if (d < best_d) {
                best_d = d;
                best = p;
            }
        }
        hit += int64_t(best) == ds.samples[i].phase;
    }
    CHECK(double(hit) / double(ds.samples.size() - half) == 1.0);
}

TEST_CASE("datasets round-trip bit-exactly through the container") {
    GenerateOptions opt;
    opt.n_clips = 24;
    auto ds = generate_dataset(opt);
    const std::string path = temp_path("hct_roundtrip.hctd");
    write_dataset(ds, path);
    auto back = read_dataset(path);

    CHECK(back.taxonomy.step_parent == ds.taxonomy.step_parent);
    CHECK(back.taxonomy.class_embed == ds.taxonomy.class_embed);
    REQUIRE(back.samples.size() == ds.samples.size());
    for (size_t i = 0; i < ds.samples.size(); ++i) {
        const auto& a = ds.samples[i];
        const auto& b = back.samples[i];
        CHECK(a.clip == b.clip);
        CHECK(a.box_feats == b.box_feats);
        CHECK(a.phase == b.phase);
        CHECK(a.step == b.step);
        CHECK(a.action_multihot == b.action_multihot);
        REQUIRE(a.boxes.size() == b.boxes.size());
        for (size_t k = 0; k < a.boxes.size(); ++k) {
            CHECK(a.boxes[k].cls == b.boxes[k].cls);
            CHECK(a.boxes[k].confidence == b.boxes[k].confidence);
            CHECK(a.boxes[k].x1 == b.boxes[k].x1);
        }
    }
    CHECK(back.manifest.train_videos == ds.manifest.train_videos);
    CHECK(back.manifest.test_videos == ds.manifest.test_videos);
    CHECK(back.manifest.class_freq == ds.manifest.class_freq);
    std::filesystem::remove(path);
    std::filesystem::remove(path + ".json");
}

TEST_CASE("corrupt containers fail loudly with a byte offset") {
    GenerateOptions opt;
    opt.n_clips = 8;
    auto ds = generate_dataset(opt);
    const std::string path = temp_path("hct_corrupt.hctd");
    write_dataset(ds, path);

    SUBCASE("bad magic") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.write("XXXX", 4);
        f.close();
        try {
            read_dataset(path);
            FAIL("expected DataError");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("byte offset 0") != std::string::npos);
        }
    }
    SUBCASE("bad version") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        const uint32_t v = 99;
        f.write(reinterpret_cast<const char*>(&v), 4);
        f.close();
        CHECK_THROWS_AS(read_dataset(path), DataError);
    }
    SUBCASE("truncation") {
        std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
        try {
            read_dataset(path);
            FAIL("expected DataError");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
        }
    }
    std::filesystem::remove(path);
    std::filesystem::remove(path + ".json");
}

TEST_CASE("step label noise flips labels while keeping the hierarchy consistent") {
    GenerateOptions clean, noisy;
    clean.n_clips = noisy.n_clips = 64;
    noisy.step_label_noise = 0.5;
    auto a = generate_dataset(clean);
    auto b = generate_dataset(noisy);
    int64_t flips = 0;
    for (size_t i = 0; i < a.samples.size(); ++i) {
        flips += a.samples[i].step != b.samples[i].step;
        CHECK(b.samples[i].phase == b.taxonomy.parent(b.samples[i].step));
    }
    CHECK(flips > 0);
}
