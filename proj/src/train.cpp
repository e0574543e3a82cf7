#include "hct/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hct/gradcheck.hpp"

namespace hct {

using namespace ops;

std::vector<double> inverse_freq_weights(const std::vector<int64_t>& counts) {
    std::vector<double> w(counts.size(), 1.0);
    double sum = 0.0;
    int64_t present = 0;
    for (size_t c = 0; c < counts.size(); ++c)
        if (counts[c] > 0) {
            w[c] = 1.0 / double(counts[c]);
            sum += w[c];
            ++present;
        }
    if (present == 0) throw DataError("class weights: no class has any sample");
    const double scale = double(present) / sum;
    for (size_t c = 0; c < counts.size(); ++c)
        if (counts[c] > 0) w[c] *= scale;
    return w;
}

std::string EpochStats::to_json() const {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "{\"epoch\":%lld,\"lr\":%.8g,\"l_phase\":%.8g,\"l_step\":%.8g,"
                  "\"l_action\":%.8g,\"l_instrument\":%.8g,\"l_contrastive\":%.8g,"
                  "\"l_total\":%.8g}",
                  (long long)epoch, lr, l_phase, l_step, l_action, l_instrument, l_contrastive,
                  l_total);
    return buf;
}

namespace {

struct ClassWeights {
    std::vector<double> phase, step, action, instrument;
};

ClassWeights compute_class_weights(const Dataset& ds, const std::vector<size_t>& train_idx,
                                   const TaxonomySizes& sz) {
    std::vector<int64_t> cp(size_t(sz.phases), 0), cs(size_t(sz.steps), 0),
        ca(size_t(sz.actions), 0), ci(size_t(sz.instruments), 0);
    for (size_t i : train_idx) {
        const auto& s = ds.samples[i];
        ++cp[size_t(s.phase)];
        ++cs[size_t(s.step)];
        for (int64_t a = 0; a < sz.actions; ++a)
            if (s.action_multihot[size_t(a)]) ++ca[size_t(a)];
        for (const auto& b : s.boxes) ++ci[size_t(b.cls)];
    }
    return {inverse_freq_weights(cp), inverse_freq_weights(cs), inverse_freq_weights(ca),
            inverse_freq_weights(ci)};
}

struct BatchLoss {
    Var total;
    double phase = 0, step = 0, action = 0, instrument = 0, contrastive = 0;
};

BatchLoss batch_loss(const Model& m, const Dataset& ds, const std::vector<size_t>& batch,
                     const ClassWeights& cw, TrainStage stage) {
    const auto& sz = m.cfg.sizes;
    std::vector<Var> phase_rows, step_rows, action_rows, inst_rows;
    std::vector<int64_t> phase_labels, step_labels, inst_labels;
    std::vector<std::string> clip_ids, box_clip_ids;
    std::vector<double> action_targets;
    std::map<TaskId, std::vector<Var>> embed_rows;

    for (size_t i : batch) {
        const auto& s = ds.samples[i];
        auto out = forward_clip(m, s.clip_tensor(), s.box_feat_tensor());
        phase_rows.push_back(out.phase_logits);
        step_rows.push_back(out.step_logits);
        action_rows.push_back(out.action_logits);
        phase_labels.push_back(s.phase);
        step_labels.push_back(s.step);
        clip_ids.push_back(std::to_string(s.clip_id));
        for (int64_t a = 0; a < sz.actions; ++a)
            action_targets.push_back(double(s.action_multihot[size_t(a)]));
        if (out.instrument_logits) {
            inst_rows.push_back(out.instrument_logits);
            for (const auto& b : s.boxes) {
                inst_labels.push_back(b.cls);
                box_clip_ids.push_back(std::to_string(s.clip_id));
            }
        }
        for (const auto& [t, e] : out.embeds)
            embed_rows[t].push_back(reshape(e, {1, e->shape[0]}));
    }

    const bool do_ps = stage != TrainStage::InstrumentAction;
    const bool do_ia = stage != TrainStage::PhaseStep;
    std::map<TaskId, Var> task_losses;
    BatchLoss out;
    if (do_ps) {
        task_losses[TaskId::Phase] =
            weighted_ce(concat_rows(phase_rows), phase_labels, cw.phase, &clip_ids);
        task_losses[TaskId::Step] =
            weighted_ce(concat_rows(step_rows), step_labels, cw.step, &clip_ids);
    }
    if (do_ia) {
        task_losses[TaskId::Action] =
            weighted_bce(concat_rows(action_rows), action_targets, cw.action);
        if (!inst_rows.empty())
            task_losses[TaskId::Instrument] =
                weighted_ce(concat_rows(inst_rows), inst_labels, cw.instrument, &box_clip_ids);
    }

    std::vector<Var> icl_losses;
    if (m.cfg.use_icl && batch.size() >= 2)
        for (const auto& [a, b] : m.cfg.icl.pairs) {
            const bool wanted = (a == TaskId::Phase || a == TaskId::Step) ? do_ps : do_ia;
            if (!wanted) continue;
            icl_losses.push_back(icl_pair_loss(concat_rows(embed_rows.at(a)),
                                               concat_rows(embed_rows.at(b)), m.cfg.icl.tau));
        }

    out.total = total_loss(task_losses, icl_losses, m.cfg.lambdas);
    auto val = [](const std::map<TaskId, Var>& ls, TaskId t) {
        auto it = ls.find(t);
        return it == ls.end() ? 0.0 : it->second->data[0];
    };
    out.phase = val(task_losses, TaskId::Phase);
    out.step = val(task_losses, TaskId::Step);
    out.action = val(task_losses, TaskId::Action);
    out.instrument = val(task_losses, TaskId::Instrument);
    for (const auto& l : icl_losses) out.contrastive += l->data[0];
    return out;
}

std::string rng_state_str(const Rng& rng) {
    auto st = rng.state();
    std::ostringstream s;
    s << st[0] << ',' << st[1] << ',' << st[2] << ',' << st[3];
    return s.str();
}

void rng_restore(Rng& rng, const std::string& str) {
    std::array<uint64_t, 4> st{};
    std::istringstream s(str);
    char comma;
    if (!(s >> st[0] >> comma >> st[1] >> comma >> st[2] >> comma >> st[3]))
        throw DataError("checkpoint: malformed rng state '" + str + "'");
    rng.set_state(st);
}

} // namespace

TrainResult train_run(const RunConfig& cfg, const Dataset& ds, const std::string& resume_path,
                      bool force_resume, bool quiet, int64_t stop_after_epoch) {
    std::filesystem::create_directories(cfg.out_dir);
    Model m = Model::create(cfg.model);
    FreezePlan plan;
    if (!cfg.freeze.empty()) {
        std::istringstream s(cfg.freeze);
        std::string pat;
        while (std::getline(s, pat, ','))
            if (!pat.empty()) plan.tunable_patterns.push_back(pat);
    }
    AdamWConfig oc;
    oc.lr = cfg.lr;
    oc.weight_decay = cfg.weight_decay;
    AdamW opt(m.params, oc, plan);

    Rng rng(cfg.seed);
    int64_t start_epoch = 0;
    if (!resume_path.empty()) {
        auto meta =
            load_checkpoint(resume_path, m.params, &opt, config_hash(cfg), force_resume);
        start_epoch = meta.epoch;
        rng_restore(rng, meta.rng_state);
    }

    auto train_idx = ds.split_indices(true);
    auto test_idx = ds.split_indices(false);
    if (train_idx.empty()) throw DataError("train: empty training split");
    const auto cw = compute_class_weights(ds, train_idx, cfg.model.sizes);

    const int64_t steps_per_epoch =
        std::max<int64_t>(1, int64_t(train_idx.size()) / cfg.batch_size);
    const int64_t max_steps = cfg.epochs * steps_per_epoch;
    const int64_t warmup_steps = cfg.warmup_epochs * steps_per_epoch;

    std::ofstream log(cfg.out_dir + "/train_log.jsonl",
                      start_epoch ? std::ios::app : std::ios::trunc);
    TrainResult result;
    int64_t global_step = start_epoch * steps_per_epoch;

    const int64_t end_epoch =
        stop_after_epoch >= 0 ? std::min(stop_after_epoch, cfg.epochs) : cfg.epochs;
    std::sort(train_idx.begin(), train_idx.end());
    for (int64_t epoch = start_epoch; epoch < end_epoch; ++epoch) {
        // pure function of (seed, epoch) so a resumed run sees the same order
        std::sort(train_idx.begin(), train_idx.end());
        Rng shuffle_rng = Rng(cfg.seed).fork(uint64_t(epoch));
        shuffle_rng.shuffle(train_idx);
        EpochStats stats;
        stats.epoch = epoch;
        for (int64_t bstep = 0; bstep < steps_per_epoch; ++bstep) {
            const auto lo = size_t(bstep * cfg.batch_size);
            const auto hi = std::min(train_idx.size(), size_t((bstep + 1) * cfg.batch_size));
            std::vector<size_t> batch(train_idx.begin() + long(lo), train_idx.begin() + long(hi));
            const double lr =
                cosine_warmup_lr(cfg.lr, global_step, warmup_steps, max_steps);
            m.params.zero_grads();
            BatchLoss bl;
            try {
                bl = batch_loss(m, ds, batch, cw, cfg.stage);
                if (!std::isfinite(bl.total->data[0]))
                    throw NumericError("non-finite loss");
                backward(bl.total);
                opt.step(lr);
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                                   ", step " + std::to_string(bstep) + ")");
            }
            stats.lr = lr;
            stats.l_phase += bl.phase;
            stats.l_step += bl.step;
            stats.l_action += bl.action;
            stats.l_instrument += bl.instrument;
            stats.l_contrastive += bl.contrastive;
            stats.l_total += bl.total->data[0];
            ++global_step;
        }
        const double inv = 1.0 / double(steps_per_epoch);
        stats.l_phase *= inv;
        stats.l_step *= inv;
        stats.l_action *= inv;
        stats.l_instrument *= inv;
        stats.l_contrastive *= inv;
        stats.l_total *= inv;
        log << stats.to_json() << "\n";
        log.flush();
        if (!quiet) std::fprintf(stderr, "%s\n", stats.to_json().c_str());
        result.history.push_back(stats);

        CheckpointMeta meta;
        meta.epoch = epoch + 1;
        meta.config_hash = config_hash(cfg);
        meta.rng_state = rng_state_str(rng);
        save_checkpoint(cfg.out_dir + "/checkpoint.hctc", m.params, &opt, meta);
    }

    if (!test_idx.empty()) {
        result.test_metrics = evaluate(m, ds, test_idx);
        std::ofstream mf(cfg.out_dir + "/metrics.json");
        mf << result.test_metrics.to_json() << "\n";
    }
    return result;
}

MetricsReport evaluate(const Model& m, const Dataset& ds, const std::vector<size_t>& indices) {
    if (indices.empty()) throw UsageError("evaluate: empty index list");
    const auto& sz = m.cfg.sizes;
    std::vector<int64_t> phase_pred, phase_true, step_pred, step_true, inst_pred, inst_true;
    std::vector<std::vector<double>> action_scores, phase_scores, step_scores;
    std::vector<std::vector<uint8_t>> action_targets, phase_onehot, step_onehot;
    std::vector<std::vector<DetBox>> detections, ground_truth;

    auto argmax_row = [](const Var& logits, int64_t row) {
        const int64_t k = logits->shape[1];
        int64_t best = 0;
        for (int64_t c = 1; c < k; ++c)
            if (logits->data[size_t(row * k + c)] > logits->data[size_t(row * k + best)]) best = c;
        return best;
    };

    for (size_t i : indices) {
        const auto& s = ds.samples[i];
        auto out = forward_clip(m, s.clip_tensor(), s.box_feat_tensor());
        phase_pred.push_back(argmax_row(out.phase_logits, 0));
        phase_true.push_back(s.phase);
        step_pred.push_back(argmax_row(out.step_logits, 0));
        step_true.push_back(s.step);

        auto softmax_scores = [](const Var& logits, int64_t k) {
            std::vector<double> p(size_t(k), 0.0);
            double mx = logits->data[0];
            for (int64_t c = 1; c < k; ++c) mx = std::max(mx, logits->data[size_t(c)]);
            double denom = 0.0;
            for (int64_t c = 0; c < k; ++c) {
                p[size_t(c)] = std::exp(logits->data[size_t(c)] - mx);
                denom += p[size_t(c)];
            }
            for (auto& v : p) v /= denom;
            return p;
        };
        phase_scores.push_back(softmax_scores(out.phase_logits, sz.phases));
        step_scores.push_back(softmax_scores(out.step_logits, sz.steps));
        std::vector<uint8_t> ph(size_t(sz.phases), 0), st(size_t(sz.steps), 0);
        ph[size_t(s.phase)] = 1;
        st[size_t(s.step)] = 1;
        phase_onehot.push_back(std::move(ph));
        step_onehot.push_back(std::move(st));

        std::vector<double> as(size_t(sz.actions));
        std::vector<uint8_t> at(size_t(sz.actions));
        for (int64_t a = 0; a < sz.actions; ++a) {
            const double z = out.action_logits->data[size_t(a)];
            as[size_t(a)] = 1.0 / (1.0 + std::exp(-z));
            at[size_t(a)] = s.action_multihot[size_t(a)];
        }
        action_scores.push_back(std::move(as));
        action_targets.push_back(std::move(at));

        std::vector<DetBox> det, gt;
        if (out.instrument_logits) {
            const int64_t k = out.instrument_logits->shape[1];
            for (size_t b = 0; b < s.boxes.size(); ++b) {
                const auto& bx = s.boxes[b];
                const int64_t pred = argmax_row(out.instrument_logits, int64_t(b));
                // softmax score of the predicted class
                double mx = out.instrument_logits->data[size_t(int64_t(b) * k)];
                for (int64_t c = 1; c < k; ++c)
                    mx = std::max(mx, out.instrument_logits->data[size_t(int64_t(b) * k + c)]);
                double denom = 0.0;
                for (int64_t c = 0; c < k; ++c)
                    denom +=
                        std::exp(out.instrument_logits->data[size_t(int64_t(b) * k + c)] - mx);
                const double score =
                    std::exp(out.instrument_logits->data[size_t(int64_t(b) * k + pred)] - mx) /
                    denom;
                inst_pred.push_back(pred);
                inst_true.push_back(bx.cls);
                det.push_back({bx.x1, bx.y1, bx.x2, bx.y2, pred, score});
                gt.push_back({bx.x1, bx.y1, bx.x2, bx.y2, bx.cls, 0.0});
            }
        }
        detections.push_back(std::move(det));
        ground_truth.push_back(std::move(gt));
    }

    MetricsReport r;
    r.values["phase_acc"] = accuracy(phase_pred, phase_true);
    r.values["phase_bacc"] = balanced_accuracy(phase_pred, phase_true, sz.phases);
    r.values["step_acc"] = accuracy(step_pred, step_true);
    r.values["step_bacc"] = balanced_accuracy(step_pred, step_true, sz.steps);
    r.values["phase_map"] = map_classification(phase_scores, phase_onehot);
    r.values["step_map"] = map_classification(step_scores, step_onehot);
    r.values["action_map"] = map_classification(action_scores, action_targets);
    r.values["action_recall"] = multilabel_recall(action_scores, action_targets);
    if (!inst_pred.empty()) {
        r.values["instrument_acc"] = accuracy(inst_pred, inst_true);
        r.values["instrument_map50"] =
            map_detection(detections, ground_truth, sz.instruments, 0.5);
    }
    return r;
}

double gradcheck_run(uint64_t seed, bool quiet) {
    ModelConfig mc;
    mc.trunk.clip_len = 4;
    mc.trunk.frame_h = 16;
    mc.trunk.frame_w = 16;
    mc.trunk.channels = 12;
    mc.trunk.heads = 4;
    mc.n_blocks = 1;
    mc.hram.mhpa_heads = 4;
    mc.sizes = {2, 2, 3, 3};
    mc.use_t_adapters = true;
    mc.use_s_adapters = true;
    mc.init_seed = seed;
    Model m = Model::create(mc);

    // one tiny two-clip batch with boxes on clip 0
    Taxonomy tax = sample_taxonomy(seed, mc.sizes);
    Dataset ds;
    ds.taxonomy = tax;
    for (uint32_t k = 0; k < 2; ++k) {
        ClipSample s = generate_clip(tax, k, k, seed + k, 0.05);
        s.t = mc.trunk.clip_len;
        s.h = mc.trunk.frame_h;
        s.w = mc.trunk.frame_w;
        // regenerate at the tiny resolution: keep the labels, shrink the clip
        Rng r(seed + 100 + k);
        s.clip.assign(size_t(s.t * s.h * s.w * s.cin), 0.0f);
        for (auto& v : s.clip) v = float(r.normal(0.0, 0.5));
        s.box_feats.assign(s.boxes.size() * size_t(Taxonomy::kBoxDim), 0.0f);
        for (auto& v : s.box_feats) v = float(r.normal(0.0, 0.5));
        ds.samples.push_back(std::move(s));
    }
    ClassWeights cw{std::vector<double>(size_t(mc.sizes.phases), 1.0),
                    std::vector<double>(size_t(mc.sizes.steps), 1.0),
                    std::vector<double>(size_t(mc.sizes.actions), 1.0),
                    std::vector<double>(size_t(mc.sizes.instruments), 1.0)};

    auto forward = [&]() {
        std::vector<size_t> batch{0, 1};
        return batch_loss(m, ds, batch, cw, TrainStage::Joint).total;
    };

    // representative leaf subset spanning every module
    std::vector<Var> leaves;
    const std::vector<std::string> names = {
        "trunk.embed.b",
        "trunk.block0.ln1.gamma",
        "trunk.block0.ffn2.b",
        "trunk.block0.t_ada.up.w",
        "trunk.block0.s_ada.up.w",
        "task_proj.phase.b",
        "hram.phase.from_step.wq.b",
        "hram.step.mlp_ij.b",
        "hram.inst_proj.lin2.b",
        "heads.phase.w",
        "heads.action.b",
        "icl.phase.proj.b",
    };
    for (const auto& n : names) leaves.push_back(m.params.find(n));

    const double err = grad_check(forward, leaves, 1e-5);
    if (!quiet) std::fprintf(stderr, "gradcheck max relative error: %.3e\n", err);
    return err;
}

} // namespace hct
