#include "mmcda/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace mmcda {

double default_threshold(const std::string& profile) {
    if (profile == "activity" || profile == "tacos") return 0.8;
    if (profile == "charades") return 0.9;
    throw ConfigError("unknown profile '" + profile + "'");
}

Evaluation evaluate_model(const ModelParams& params, const DomainDataset& dataset, double threshold,
                          std::vector<Index> top_n, std::vector<double> iou_thresholds) {
    if (dataset.samples.empty()) throw std::invalid_argument("evaluate_model: empty dataset");
    if (!dataset.fully_annotated()) throw std::invalid_argument("evaluate_model: dataset has unannotated samples");
    if (top_n.empty() || iou_thresholds.empty()) throw std::invalid_argument("evaluate_model: nothing to report");
    const Index max_n = *std::max_element(top_n.begin(), top_n.end());

    Evaluation ev;
    std::vector<std::vector<MomentBoundary>> spans;
    std::vector<MomentBoundary> truths;
    for (const auto& s : dataset.samples) {
        const ScoreSequence scores = frame_scores(params, s.video, s.query);
        Prediction p{s.id, top_n_moments(scores, threshold, max_n)};
        std::vector<MomentBoundary> b;
        for (const auto& c : p.moments) b.push_back(c.moment);
        spans.push_back(std::move(b));
        truths.push_back(*s.boundary);
        ev.predictions.push_back(std::move(p));
    }
    ev.report = make_report(spans, truths, std::move(top_n), std::move(iou_thresholds));
    ev.report.threshold = threshold;
    return ev;
}

void write_predictions_csv(const Evaluation& evaluation, const DomainDataset& dataset,
                           const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "id,start,end,peak_score,gt_start,gt_end,iou\n";
    char buf[64];
    for (std::size_t i = 0; i < evaluation.predictions.size(); ++i) {
        const auto& p = evaluation.predictions[i];
        const auto& gt = *dataset.samples[i].boundary;
        const auto& top = p.moments.front();
        std::snprintf(buf, sizeof buf, "%.17g", top.peak_score);
        out << p.id << ',' << top.moment.start << ',' << top.moment.end << ',' << buf << ',' << gt.start << ','
            << gt.end << ',';
        std::snprintf(buf, sizeof buf, "%.17g", temporal_iou(top.moment, gt));
        out << buf << '\n';
    }
    if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace mmcda
