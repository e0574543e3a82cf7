#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hct/errors.hpp"

namespace hct {

// Top-1 accuracy over argmax predictions.
double accuracy(const std::vector<int64_t>& pred, const std::vector<int64_t>& label);

// Mean per-class recall, averaged over classes that appear in the labels.
double balanced_accuracy(const std::vector<int64_t>& pred, const std::vector<int64_t>& label,
                         int64_t n_classes);

// Micro-averaged multi-label recall at a fixed score threshold.
double multilabel_recall(const std::vector<std::vector<double>>& scores,
                         const std::vector<std::vector<uint8_t>>& targets, double threshold = 0.5);

// All-point interpolated average precision for one class. Ties are broken
// by input order after a stable sort on descending score.
double average_precision(const std::vector<double>& scores, const std::vector<uint8_t>& targets);

// Mean AP over classes with at least one positive target.
double map_classification(const std::vector<std::vector<double>>& scores,
                          const std::vector<std::vector<uint8_t>>& targets);

struct DetBox {
    double x1, y1, x2, y2;
    int64_t cls;
    double score; // ignored for ground truth
};

double iou(const DetBox& a, const DetBox& b);

// Detection mAP at a single IoU threshold: per class, detections are sorted
// by descending score and greedily matched to the best unmatched ground
// truth box in the same image.
double map_detection(const std::vector<std::vector<DetBox>>& detections,
                     const std::vector<std::vector<DetBox>>& ground_truth, int64_t n_classes,
                     double iou_threshold = 0.5);

struct MetricsReport {
    std::map<std::string, double> values;

    std::string to_json() const;
    std::string to_table() const; // fixed-width text table
};

} // namespace hct
