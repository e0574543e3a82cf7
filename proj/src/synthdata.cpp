#include "hct/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include <json.hpp>

namespace hct {

using nlohmann::json;

Var ClipSample::clip_tensor() const {
    std::vector<double> d(clip.begin(), clip.end());
    return make_tensor({t, h, w, cin}, std::move(d));
}

Var ClipSample::box_feat_tensor() const {
    std::vector<double> d(box_feats.begin(), box_feats.end());
    return make_tensor({int64_t(boxes.size()), Taxonomy::kBoxDim}, std::move(d));
}

std::vector<size_t> Dataset::split_indices(bool train) const {
    const auto& vids = train ? manifest.train_videos : manifest.test_videos;
    std::set<uint32_t> wanted(vids.begin(), vids.end());
    std::vector<size_t> out;
    for (size_t i = 0; i < samples.size(); ++i)
        if (wanted.count(samples[i].video_id)) out.push_back(i);
    return out;
}

Taxonomy sample_taxonomy(uint64_t seed, const TaxonomySizes& sizes) {
    if (sizes.phases < 1 || sizes.steps < 1 || sizes.actions < 1 || sizes.instruments < 1)
        throw ConfigError("taxonomy: all sizes must be >= 1");
    if (sizes.steps < sizes.phases)
        throw ConfigError("taxonomy: steps (" + std::to_string(sizes.steps) +
                          ") must be >= phases (" + std::to_string(sizes.phases) + ")");
    Rng rng(seed);
    Taxonomy tax;
    tax.sizes = sizes;
    tax.seed = seed;

    // each phase owns >= 1 step; remaining steps attach to random phases
    tax.step_parent.resize(size_t(sizes.steps));
    for (int64_t s = 0; s < sizes.steps; ++s)
        tax.step_parent[size_t(s)] =
            s < sizes.phases ? s : int64_t(rng.below(uint64_t(sizes.phases)));

    auto sparse_row = [&](int64_t width, int64_t lo, int64_t hi) {
        std::vector<double> row(size_t(width), 0.0);
        const int64_t take = std::min<int64_t>(width, lo + int64_t(rng.below(uint64_t(hi - lo + 1))));
        std::vector<int64_t> ids(size_t(width), 0);
        for (int64_t i = 0; i < width; ++i) ids[size_t(i)] = i;
        rng.shuffle(ids);
        for (int64_t i = 0; i < take; ++i) row[size_t(ids[size_t(i)])] = rng.uniform(0.3, 0.9);
        return row;
    };
    for (int64_t s = 0; s < sizes.steps; ++s) {
        tax.action_prob.push_back(sparse_row(sizes.actions, 2, 6));
        tax.instr_prob.push_back(sparse_row(sizes.instruments, 1, 3));
    }
    if (sizes.actions == 1 && sizes.steps == 1) tax.action_prob[0][0] = 1.0;
    if (sizes.instruments == 1 && sizes.steps == 1) tax.instr_prob[0][0] = 1.0;

    // every action must be reachable from at least one step
    for (int64_t a = 0; a < sizes.actions; ++a) {
        bool reachable = false;
        for (const auto& row : tax.action_prob) reachable = reachable || row[size_t(a)] > 0.0;
        if (!reachable)
            tax.action_prob[size_t(rng.below(uint64_t(sizes.steps)))][size_t(a)] =
                rng.uniform(0.3, 0.9);
    }

    Rng emb = rng.fork(0xb0f5);
    tax.class_embed.resize(size_t(sizes.instruments));
    for (auto& e : tax.class_embed) {
        e.resize(size_t(Taxonomy::kBoxDim));
        for (auto& v : e) v = float(emb.normal());
    }
    return tax;
}

namespace {

// Low-frequency pattern parameters keyed off the taxonomy seed + class id.
struct StepPattern {
    double ft, fy, fx, amp;
};
StepPattern step_pattern(const Taxonomy& tax, int64_t step) {
    Rng r = Rng(tax.seed).fork(0x57e0 + uint64_t(step));
    return {1.0 + double(r.below(3)), 1.0 + double(r.below(3)), 1.0 + double(r.below(3)),
            0.4 + 0.2 * r.uniform()};
}

} // namespace

ClipSample generate_clip(const Taxonomy& tax, uint32_t clip_id, uint32_t video_id, uint64_t seed,
                         double noise, int64_t forced_step) {
    Rng rng(seed);
    ClipSample s;
    s.clip_id = clip_id;
    s.video_id = video_id;
    s.seed = seed;

    const auto& sz = tax.sizes;
    s.step = forced_step >= 0 ? forced_step : int64_t(rng.below(uint64_t(sz.steps)));
    s.phase = tax.parent(s.step);

    // draw actions and instruments through the step's co-occurrence row
    s.action_multihot.assign(size_t(sz.actions), 0);
    const auto& arow = tax.action_prob[size_t(s.step)];
    for (int64_t a = 0; a < sz.actions; ++a)
        if (arow[size_t(a)] > 0.0 && rng.uniform() < arow[size_t(a)]) s.action_multihot[size_t(a)] = 1;
    if (std::find(s.action_multihot.begin(), s.action_multihot.end(), 1) ==
        s.action_multihot.end()) {
        const auto best = std::max_element(arow.begin(), arow.end());
        s.action_multihot[size_t(best - arow.begin())] = 1;
    }
    std::vector<int64_t> active_actions;
    for (int64_t a = 0; a < sz.actions; ++a)
        if (s.action_multihot[size_t(a)]) active_actions.push_back(a);

    std::vector<int64_t> active_instr;
    const auto& irow = tax.instr_prob[size_t(s.step)];
    for (int64_t k = 0; k < sz.instruments; ++k)
        if (irow[size_t(k)] > 0.0 && rng.uniform() < irow[size_t(k)]) active_instr.push_back(k);
    if (active_instr.empty()) {
        const auto best = std::max_element(irow.begin(), irow.end());
        active_instr.push_back(best - irow.begin());
    }

    // render: phase-keyed DC offset + step-keyed low-frequency wave +
    // one moving blob per instrument whose trajectory encodes its action
    const int64_t T = s.t, H = s.h, W = s.w, C = s.cin;
    s.clip.assign(size_t(T * H * W * C), 0.0f);
    Rng phase_rng = Rng(tax.seed).fork(0xdc0 + uint64_t(s.phase));
    std::vector<double> dc(size_t(C), 0.0);
    for (auto& v : dc) v = phase_rng.uniform(-1.0, 1.0);
    const StepPattern pat = step_pattern(tax, s.step);
    auto px = [&](int64_t t, int64_t y, int64_t x, int64_t c) -> float& {
        return s.clip[size_t(((t * H + y) * W + x) * C + c)];
    };
    const double two_pi = 6.283185307179586;
    for (int64_t t = 0; t < T; ++t)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x)
                for (int64_t c = 0; c < C; ++c) {
                    const double wave =
                        pat.amp * std::sin(two_pi * (pat.ft * t / double(T) + pat.fy * y / double(H) +
                                                     pat.fx * x / double(W) + 0.25 * c));
                    px(t, y, x, c) = float(dc[size_t(c)] + wave);
                }

    struct Traj {
        double x0, y0, vx, vy;
    };
    for (int64_t k : active_instr) {
        const int64_t action = active_actions[rng.below(active_actions.size())];
        const double angle = two_pi * double(action) / double(sz.actions);
        const double speed = 0.6 + 0.4 * double(action % 3);
        Traj tr{rng.uniform(6.0, double(W) - 6.0), rng.uniform(6.0, double(H) - 6.0),
                speed * std::cos(angle), speed * std::sin(angle)};
        const int64_t chan = k % C;
        const double radius = 2.5;
        double cx = tr.x0, cy = tr.y0;
        for (int64_t t = 0; t < T; ++t) {
            cx = std::clamp(tr.x0 + tr.vx * double(t), 3.0, double(W) - 3.0);
            cy = std::clamp(tr.y0 + tr.vy * double(t), 3.0, double(H) - 3.0);
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < W; ++x) {
                    const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                    if (d2 < 9.0 * radius * radius)
                        px(t, y, x, chan) += float(1.5 * std::exp(-d2 / (2.0 * radius * radius)));
                }
        }
        Box b;
        b.x1 = float(std::max(0.0, cx - 2.0 * radius));
        b.y1 = float(std::max(0.0, cy - 2.0 * radius));
        b.x2 = float(std::min(double(W), cx + 2.0 * radius));
        b.y2 = float(std::min(double(H), cy + 2.0 * radius));
        b.cls = k;
        b.action = action;
        b.confidence = float(kBoxConfidenceThreshold +
                             (1.0 - kBoxConfidenceThreshold) * rng.uniform());
        s.boxes.push_back(b);
    }

    if (noise > 0.0)
        for (auto& v : s.clip) v += float(rng.normal(0.0, noise));

    s.box_feats.resize(s.boxes.size() * size_t(Taxonomy::kBoxDim));
    for (size_t b = 0; b < s.boxes.size(); ++b) {
        const auto& emb = tax.class_embed[size_t(s.boxes[b].cls)];
        for (int64_t d = 0; d < Taxonomy::kBoxDim; ++d)
            s.box_feats[b * size_t(Taxonomy::kBoxDim) + size_t(d)] =
                emb[size_t(d)] + float(noise > 0.0 ? rng.normal(0.0, 0.1 * noise) : 0.0);
    }
    return s;
}

Dataset generate_dataset(const GenerateOptions& opt) {
    Dataset ds;
    ds.taxonomy = sample_taxonomy(opt.taxonomy_seed, opt.sizes);
    Rng rng(opt.data_seed);

    // stratified step assignment: round-robin through a seeded permutation
    // guarantees class coverage for every split of reasonable size
    std::vector<int64_t> perm(size_t(opt.sizes.steps), 0);
    for (int64_t i = 0; i < opt.sizes.steps; ++i) perm[size_t(i)] = i;
    rng.shuffle(perm);

    const int64_t n_videos = (opt.n_clips + opt.clips_per_video - 1) / opt.clips_per_video;
    for (int64_t k = 0; k < opt.n_clips; ++k) {
        int64_t step = perm[size_t(k % opt.sizes.steps)];
        if (opt.step_label_noise > 0.0 && rng.uniform() < opt.step_label_noise)
            step = int64_t(rng.below(uint64_t(opt.sizes.steps)));
        const uint64_t clip_seed = Rng(opt.data_seed).fork(uint64_t(k)).next_u64();
        ds.samples.push_back(generate_clip(ds.taxonomy, uint32_t(k),
                                           uint32_t(k / opt.clips_per_video), clip_seed, opt.noise,
                                           step));
    }

    // split by video id so no video straddles train/test
    std::vector<uint32_t> vids(size_t(n_videos), 0);
    for (int64_t v = 0; v < n_videos; ++v) vids[size_t(v)] = uint32_t(v);
    Rng split_rng = rng.fork(0x5b11);
    split_rng.shuffle(vids);
    const size_t n_test = size_t(double(n_videos) * opt.test_fraction + 0.5);
    auto& mf = ds.manifest;
    mf.test_videos.assign(vids.begin(), vids.begin() + long(n_test));
    mf.train_videos.assign(vids.begin() + long(n_test), vids.end());
    std::sort(mf.test_videos.begin(), mf.test_videos.end());
    std::sort(mf.train_videos.begin(), mf.train_videos.end());

    mf.sizes = opt.sizes;
    mf.taxonomy_seed = opt.taxonomy_seed;
    mf.data_seed = opt.data_seed;
    mf.noise = opt.noise;
    mf.class_freq["phase"].assign(size_t(opt.sizes.phases), 0);
    mf.class_freq["step"].assign(size_t(opt.sizes.steps), 0);
    mf.class_freq["action"].assign(size_t(opt.sizes.actions), 0);
    mf.class_freq["instrument"].assign(size_t(opt.sizes.instruments), 0);
    for (const auto& s : ds.samples) {
        ++mf.class_freq["phase"][size_t(s.phase)];
        ++mf.class_freq["step"][size_t(s.step)];
        for (int64_t a = 0; a < opt.sizes.actions; ++a)
            if (s.action_multihot[size_t(a)]) ++mf.class_freq["action"][size_t(a)];
        for (const auto& b : s.boxes) ++mf.class_freq["instrument"][size_t(b.cls)];
    }
    return ds;
}

namespace {

constexpr char kMagic[4] = {'H', 'C', 'T', 'D'};
constexpr uint32_t kVersion = 1;

struct Writer {
    std::ofstream f;
    explicit Writer(const std::string& path) : f(path, std::ios::binary) {
        if (!f) throw DataError("cannot open '" + path + "' for writing");
    }
    void bytes(const void* p, size_t n) { f.write(static_cast<const char*>(p), std::streamsize(n)); }
    template <typename T>
    void pod(T v) { bytes(&v, sizeof(T)); }
    void f32v(const std::vector<float>& v) { bytes(v.data(), v.size() * 4); }
};

struct Reader {
    std::ifstream f;
    std::string path;
    explicit Reader(const std::string& p) : f(p, std::ios::binary), path(p) {
        if (!f) throw DataError("cannot open '" + p + "' for reading");
    }
    size_t offset() { return size_t(f.tellg()); }
    void bytes(void* p, size_t n) {
        const size_t at = offset();
        f.read(static_cast<char*>(p), std::streamsize(n));
        if (size_t(f.gcount()) != n)
            throw DataError("dataset format error: truncated read at byte offset " +
                            std::to_string(at) + " in '" + path + "'");
    }
    template <typename T>
    T pod() {
        T v;
        bytes(&v, sizeof(T));
        return v;
    }
    std::vector<float> f32v(size_t n) {
        std::vector<float> v(n);
        bytes(v.data(), n * 4);
        return v;
    }
};

} // namespace

void write_dataset(const Dataset& ds, const std::string& path) {
    Writer w(path);
    w.bytes(kMagic, 4);
    w.pod<uint32_t>(kVersion);

    const auto& tax = ds.taxonomy;
    w.pod<uint64_t>(tax.seed);
    w.pod<uint32_t>(uint32_t(tax.sizes.phases));
    w.pod<uint32_t>(uint32_t(tax.sizes.steps));
    w.pod<uint32_t>(uint32_t(tax.sizes.actions));
    w.pod<uint32_t>(uint32_t(tax.sizes.instruments));
    for (auto p : tax.step_parent) w.pod<uint32_t>(uint32_t(p));
    for (const auto& row : tax.action_prob)
        for (double v : row) w.pod<float>(float(v));
    for (const auto& row : tax.instr_prob)
        for (double v : row) w.pod<float>(float(v));
    for (const auto& e : tax.class_embed) w.f32v(e);

    w.pod<uint32_t>(uint32_t(ds.samples.size()));
    for (const auto& s : ds.samples) {
        const uint32_t n_box = uint32_t(s.boxes.size());
        const uint32_t record_len =
            uint32_t(4 + 4 + 8 + 4 * 2 + 2 * 2 + s.action_multihot.size() + 2 +
                     size_t(n_box) * (4 * 4 + 2 + 2 + 4) + s.box_feats.size() * 4 +
                     s.clip.size() * 4);
        w.pod<uint32_t>(record_len);
        w.pod<uint32_t>(s.clip_id);
        w.pod<uint32_t>(s.video_id);
        w.pod<uint64_t>(s.seed);
        w.pod<uint16_t>(uint16_t(s.t));
        w.pod<uint16_t>(uint16_t(s.h));
        w.pod<uint16_t>(uint16_t(s.w));
        w.pod<uint16_t>(uint16_t(s.cin));
        w.pod<uint16_t>(uint16_t(s.phase));
        w.pod<uint16_t>(uint16_t(s.step));
        w.bytes(s.action_multihot.data(), s.action_multihot.size());
        w.pod<uint16_t>(uint16_t(n_box));
        for (const auto& b : s.boxes) {
            w.pod<float>(b.x1);
            w.pod<float>(b.y1);
            w.pod<float>(b.x2);
            w.pod<float>(b.y2);
            w.pod<uint16_t>(uint16_t(b.cls));
            w.pod<uint16_t>(uint16_t(b.action));
            w.pod<float>(b.confidence);
        }
        w.f32v(s.box_feats);
        w.f32v(s.clip);
    }

    json mf;
    mf["sizes"] = {{"phases", ds.manifest.sizes.phases},
                   {"steps", ds.manifest.sizes.steps},
                   {"actions", ds.manifest.sizes.actions},
                   {"instruments", ds.manifest.sizes.instruments}};
    mf["taxonomy_seed"] = ds.manifest.taxonomy_seed;
    mf["data_seed"] = ds.manifest.data_seed;
    mf["noise"] = ds.manifest.noise;
    mf["train_videos"] = ds.manifest.train_videos;
    mf["test_videos"] = ds.manifest.test_videos;
    mf["class_freq"] = ds.manifest.class_freq;
    std::ofstream mfs(path + ".json");
    mfs << mf.dump(2) << "\n";
}

Dataset read_dataset(const std::string& path) {
    Reader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("dataset format error: bad magic at byte offset 0 in '" + path + "'");
    const uint32_t version = r.pod<uint32_t>();
    if (version != kVersion)
        throw DataError("dataset format error: unsupported version " + std::to_string(version) +
                        " at byte offset 4 in '" + path + "'");

    Dataset ds;
    auto& tax = ds.taxonomy;
    tax.seed = r.pod<uint64_t>();
    tax.sizes.phases = r.pod<uint32_t>();
    tax.sizes.steps = r.pod<uint32_t>();
    tax.sizes.actions = r.pod<uint32_t>();
    tax.sizes.instruments = r.pod<uint32_t>();
    tax.step_parent.resize(size_t(tax.sizes.steps));
    for (auto& p : tax.step_parent) p = r.pod<uint32_t>();
    tax.action_prob.assign(size_t(tax.sizes.steps), std::vector<double>(size_t(tax.sizes.actions)));
    for (auto& row : tax.action_prob)
        for (auto& v : row) v = r.pod<float>();
    tax.instr_prob.assign(size_t(tax.sizes.steps),
                          std::vector<double>(size_t(tax.sizes.instruments)));
    for (auto& row : tax.instr_prob)
        for (auto& v : row) v = r.pod<float>();
    tax.class_embed.resize(size_t(tax.sizes.instruments));
    for (auto& e : tax.class_embed) e = r.f32v(size_t(Taxonomy::kBoxDim));

    const uint32_t n_samples = r.pod<uint32_t>();
    for (uint32_t i = 0; i < n_samples; ++i) {
        const size_t rec_at = r.offset();
        const uint32_t record_len = r.pod<uint32_t>();
        ClipSample s;
        s.clip_id = r.pod<uint32_t>();
        s.video_id = r.pod<uint32_t>();
        s.seed = r.pod<uint64_t>();
        s.t = r.pod<uint16_t>();
        s.h = r.pod<uint16_t>();
        s.w = r.pod<uint16_t>();
        s.cin = r.pod<uint16_t>();
        s.phase = r.pod<uint16_t>();
        s.step = r.pod<uint16_t>();
        s.action_multihot.resize(size_t(tax.sizes.actions));
        r.bytes(s.action_multihot.data(), s.action_multihot.size());
        const uint16_t n_box = r.pod<uint16_t>();
        for (uint16_t b = 0; b < n_box; ++b) {
            Box bx;
            bx.x1 = r.pod<float>();
            bx.y1 = r.pod<float>();
            bx.x2 = r.pod<float>();
            bx.y2 = r.pod<float>();
            bx.cls = r.pod<uint16_t>();
            bx.action = r.pod<uint16_t>();
            bx.confidence = r.pod<float>();
            s.boxes.push_back(bx);
        }
        s.box_feats = r.f32v(size_t(n_box) * size_t(Taxonomy::kBoxDim));
        s.clip = r.f32v(size_t(s.t * s.h * s.w * s.cin));
        const size_t got = r.offset() - rec_at - 4;
        if (got != record_len)
            throw DataError("dataset format error: record length mismatch at byte offset " +
                            std::to_string(rec_at) + " in '" + path + "'");
        ds.samples.push_back(std::move(s));
    }

    std::ifstream mfs(path + ".json");
    if (!mfs) throw DataError("missing manifest sidecar '" + path + ".json'");
    json mf = json::parse(mfs);
    auto& m = ds.manifest;
    m.sizes.phases = mf["sizes"]["phases"];
    m.sizes.steps = mf["sizes"]["steps"];
    m.sizes.actions = mf["sizes"]["actions"];
    m.sizes.instruments = mf["sizes"]["instruments"];
    m.taxonomy_seed = mf["taxonomy_seed"];
    m.data_seed = mf["data_seed"];
    m.noise = mf["noise"];
    m.train_videos = mf["train_videos"].get<std::vector<uint32_t>>();
    m.test_videos = mf["test_videos"].get<std::vector<uint32_t>>();
    m.class_freq = mf["class_freq"].get<std::map<std::string, std::vector<int64_t>>>();
    return ds;
}

} // namespace hct
