#include "hct/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace hct {

double accuracy(const std::vector<int64_t>& pred, const std::vector<int64_t>& label) {
    if (pred.size() != label.size())
        throw DimError("accuracy: " + std::to_string(pred.size()) + " predictions vs " +
                       std::to_string(label.size()) + " labels");
    if (pred.empty()) throw UsageError("accuracy: empty input");
    size_t hit = 0;
    for (size_t i = 0; i < pred.size(); ++i) hit += pred[i] == label[i];
    return double(hit) / double(pred.size());
}

double balanced_accuracy(const std::vector<int64_t>& pred, const std::vector<int64_t>& label,
                         int64_t n_classes) {
    if (pred.size() != label.size())
        throw DimError("balanced_accuracy: " + std::to_string(pred.size()) + " predictions vs " +
                       std::to_string(label.size()) + " labels");
    std::vector<int64_t> total(size_t(n_classes), 0), hit(size_t(n_classes), 0);
    for (size_t i = 0; i < label.size(); ++i) {
        const int64_t y = label[i];
        if (y < 0 || y >= n_classes)
            throw DataError("balanced_accuracy: label " + std::to_string(y) + " out of range [0," +
                            std::to_string(n_classes) + ")");
        ++total[size_t(y)];
        hit[size_t(y)] += pred[i] == y;
    }
    double acc = 0.0;
    int64_t present = 0;
    for (int64_t c = 0; c < n_classes; ++c)
        if (total[size_t(c)] > 0) {
            acc += double(hit[size_t(c)]) / double(total[size_t(c)]);
            ++present;
        }
    if (present == 0) throw UsageError("balanced_accuracy: no labels present");
    return acc / double(present);
}

double multilabel_recall(const std::vector<std::vector<double>>& scores,
                         const std::vector<std::vector<uint8_t>>& targets, double threshold) {
    if (scores.size() != targets.size())
        throw DimError("multilabel_recall: row count mismatch");
    int64_t tp = 0, pos = 0;
    for (size_t r = 0; r < scores.size(); ++r) {
        if (scores[r].size() != targets[r].size())
            throw DimError("multilabel_recall: row " + std::to_string(r) + " width mismatch");
        for (size_t c = 0; c < scores[r].size(); ++c)
            if (targets[r][c]) {
                ++pos;
                tp += scores[r][c] >= threshold;
            }
    }
    if (pos == 0) throw UsageError("multilabel_recall: no positive targets");
    return double(tp) / double(pos);
}

double average_precision(const std::vector<double>& scores, const std::vector<uint8_t>& targets) {
    if (scores.size() != targets.size())
        throw DimError("average_precision: " + std::to_string(scores.size()) + " scores vs " +
                       std::to_string(targets.size()) + " targets");
    const int64_t n_pos = std::accumulate(targets.begin(), targets.end(), int64_t(0));
    if (n_pos == 0) throw UsageError("average_precision: no positive targets");
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), size_t(0));
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return scores[a] > scores[b]; });
    double ap = 0.0;
    int64_t tp = 0;
    for (size_t rank = 0; rank < order.size(); ++rank)
        if (targets[order[rank]]) {
            ++tp;
            ap += double(tp) / double(rank + 1);
        }
    return ap / double(n_pos);
}

double map_classification(const std::vector<std::vector<double>>& scores,
                          const std::vector<std::vector<uint8_t>>& targets) {
    if (scores.empty() || scores.size() != targets.size())
        throw DimError("map_classification: bad row counts");
    const size_t k = scores[0].size();
    double sum = 0.0;
    int64_t counted = 0;
    for (size_t c = 0; c < k; ++c) {
        std::vector<double> col_s;
        std::vector<uint8_t> col_t;
        for (size_t r = 0; r < scores.size(); ++r) {
            col_s.push_back(scores[r][c]);
            col_t.push_back(targets[r][c]);
        }
        if (std::accumulate(col_t.begin(), col_t.end(), int64_t(0)) == 0) continue;
        sum += average_precision(col_s, col_t);
        ++counted;
    }
    if (counted == 0) throw UsageError("map_classification: no class has positives");
    return sum / double(counted);
}

double iou(const DetBox& a, const DetBox& b) {
    const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double inter = ix * iy;
    const double area_a = std::max(0.0, a.x2 - a.x1) * std::max(0.0, a.y2 - a.y1);
    const double area_b = std::max(0.0, b.x2 - b.x1) * std::max(0.0, b.y2 - b.y1);
    const double uni = area_a + area_b - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

double map_detection(const std::vector<std::vector<DetBox>>& detections,
                     const std::vector<std::vector<DetBox>>& ground_truth, int64_t n_classes,
                     double iou_threshold) {
    if (detections.size() != ground_truth.size())
        throw DimError("map_detection: image count mismatch");
    double sum = 0.0;
    int64_t counted = 0;
    for (int64_t c = 0; c < n_classes; ++c) {
        struct Det {
            size_t img;
            double score;
            const DetBox* box;
        };
        std::vector<Det> dets;
        std::vector<std::vector<const DetBox*>> gts(ground_truth.size());
        int64_t n_gt = 0;
        for (size_t i = 0; i < ground_truth.size(); ++i) {
            for (const auto& g : ground_truth[i])
                if (g.cls == c) {
                    gts[i].push_back(&g);
                    ++n_gt;
                }
            for (const auto& d : detections[i])
                if (d.cls == c) dets.push_back({i, d.score, &d});
        }
        if (n_gt == 0) continue;
        std::stable_sort(dets.begin(), dets.end(),
                         [](const Det& a, const Det& b) { return a.score > b.score; });
        std::vector<std::vector<uint8_t>> used(ground_truth.size());
        for (size_t i = 0; i < gts.size(); ++i) used[i].assign(gts[i].size(), 0);
        double ap = 0.0;
        int64_t tp = 0;
        for (size_t rank = 0; rank < dets.size(); ++rank) {
            const auto& d = dets[rank];
            double best = iou_threshold;
            int64_t best_g = -1;
            for (size_t g = 0; g < gts[d.img].size(); ++g) {
                if (used[d.img][g]) continue;
                const double v = iou(*d.box, *gts[d.img][g]);
                if (v >= best) {
                    best = v;
                    best_g = int64_t(g);
                }
            }
            if (best_g >= 0) {
                used[d.img][size_t(best_g)] = 1;
                ++tp;
                ap += double(tp) / double(rank + 1);
            }
        }
        sum += ap / double(n_gt);
        ++counted;
    }
    if (counted == 0) throw UsageError("map_detection: no ground truth boxes");
    return sum / double(counted);
}

std::string MetricsReport::to_json() const {
    nlohmann::json j(values);
    return j.dump(2);
}

std::string MetricsReport::to_table() const {
    size_t width = 6;
    for (const auto& [k, _] : values) width = std::max(width, k.size());
    std::ostringstream out;
    char buf[64];
    for (const auto& [k, v] : values) {
        std::snprintf(buf, sizeof(buf), "%-*s  %10.6f\n", int(width), k.c_str(), v);
        out << buf;
    }
    return out.str();
}

} // namespace hct
