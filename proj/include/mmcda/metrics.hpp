#pragma once

#include "mmcda/synthdata.hpp"

#include <json.hpp>

#include <span>
#include <vector>

namespace mmcda {

/// |overlap| / |union| of two inclusive frame spans.
double temporal_iou(const MomentBoundary& a, const MomentBoundary& b);

/// Fraction of samples where any of the first n predictions has IoU strictly greater than m.
double recall_at(std::span<const std::vector<MomentBoundary>> predictions, std::span<const MomentBoundary> truths,
                 Index n, double m);

/// Mean IoU of the top-1 predictions.
double mean_iou(std::span<const MomentBoundary> top1, std::span<const MomentBoundary> truths);

struct MetricsReport {
    std::vector<Index> top_n;
    std::vector<double> iou_thresholds;
    Matrix recall;  // top_n.size() x iou_thresholds.size()
    double miou = 0.0;
    Index samples = 0;
    double threshold = 0.0;  // inference threshold used to produce the predictions

    double recall_at(Index n, double m) const;
    nlohmann::json to_json() const;
    static MetricsReport from_json(const nlohmann::json& j);
    std::string table() const;
};

MetricsReport make_report(std::span<const std::vector<MomentBoundary>> predictions,
                          std::span<const MomentBoundary> truths, std::vector<Index> top_n,
                          std::vector<double> iou_thresholds);

}  // namespace mmcda
