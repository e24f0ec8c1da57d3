#pragma once

#include "mmcda/inference.hpp"
#include "mmcda/metrics.hpp"

namespace mmcda {

/// Default inference threshold for a benchmark family name.
double default_threshold(const std::string& profile);

struct Prediction {
    std::string id;
    std::vector<MomentCandidate> moments;
};

struct Evaluation {
    MetricsReport report;
    std::vector<Prediction> predictions;
};

/// Predict top-max(top_n) moments for every sample and score them. Throws
/// std::invalid_argument when a sample lacks a boundary.
Evaluation evaluate_model(const ModelParams& params, const DomainDataset& dataset, double threshold,
                          std::vector<Index> top_n, std::vector<double> iou_thresholds);

/// id,start,end,peak_score,gt_start,gt_end,iou
void write_predictions_csv(const Evaluation& evaluation, const DomainDataset& dataset,
                           const std::filesystem::path& path);

}  // namespace mmcda
