#include "mmcda/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace mmcda {

double temporal_iou(const MomentBoundary& a, const MomentBoundary& b) {
    const Index inter = std::max<Index>(0, std::min(a.end, b.end) - std::max(a.start, b.start) + 1);
    const Index uni = a.length() + b.length() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double recall_at(std::span<const std::vector<MomentBoundary>> predictions, std::span<const MomentBoundary> truths,
                 Index n, double m) {
    if (truths.empty()) throw std::invalid_argument("recall_at: empty dataset");
    if (predictions.size() != truths.size()) throw std::invalid_argument("recall_at: prediction/truth count mismatch");
    if (n < 1) throw std::invalid_argument("recall_at: n must be >= 1");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truths.size(); ++i) {
        const auto& p = predictions[i];
        const std::size_t k = std::min(p.size(), static_cast<std::size_t>(n));
        for (std::size_t j = 0; j < k; ++j) {
            if (temporal_iou(p[j], truths[i]) > m) {
                ++hits;
                break;
            }
        }
    }
    return static_cast<double>(hits) / static_cast<double>(truths.size());
}

double mean_iou(std::span<const MomentBoundary> top1, std::span<const MomentBoundary> truths) {
    if (truths.empty()) throw std::invalid_argument("mean_iou: empty dataset");
    if (top1.size() != truths.size()) throw std::invalid_argument("mean_iou: prediction/truth count mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < truths.size(); ++i) total += temporal_iou(top1[i], truths[i]);
    return total / static_cast<double>(truths.size());
}

double MetricsReport::recall_at(Index n, double m) const {
    for (std::size_t a = 0; a < top_n.size(); ++a)
        for (std::size_t b = 0; b < iou_thresholds.size(); ++b)
            if (top_n[a] == n && iou_thresholds[b] == m) return recall(static_cast<Index>(a), static_cast<Index>(b));
    throw std::out_of_range("MetricsReport: no entry for R@" + std::to_string(n));
}

nlohmann::json MetricsReport::to_json() const {
    nlohmann::json rec = nlohmann::json::array();
    for (std::size_t a = 0; a < top_n.size(); ++a)
        for (std::size_t b = 0; b < iou_thresholds.size(); ++b)
            rec.push_back({{"n", top_n[a]},
                           {"iou", iou_thresholds[b]},
                           {"recall", recall(static_cast<Index>(a), static_cast<Index>(b))}});
    return {{"samples", samples}, {"threshold", threshold}, {"miou", miou}, {"recall", rec}};
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
    MetricsReport r;
    r.samples = j.at("samples").get<Index>();
    r.threshold = j.at("threshold").get<double>();
    r.miou = j.at("miou").get<double>();
    for (const auto& e : j.at("recall")) {
        const auto n = e.at("n").get<Index>();
        const auto m = e.at("iou").get<double>();
        if (std::find(r.top_n.begin(), r.top_n.end(), n) == r.top_n.end()) r.top_n.push_back(n);
        if (std::find(r.iou_thresholds.begin(), r.iou_thresholds.end(), m) == r.iou_thresholds.end())
            r.iou_thresholds.push_back(m);
    }
    r.recall = Matrix::Zero(static_cast<Index>(r.top_n.size()), static_cast<Index>(r.iou_thresholds.size()));
    for (const auto& e : j.at("recall")) {
        const auto a = std::find(r.top_n.begin(), r.top_n.end(), e.at("n").get<Index>()) - r.top_n.begin();
        const auto b = std::find(r.iou_thresholds.begin(), r.iou_thresholds.end(), e.at("iou").get<double>()) -
                       r.iou_thresholds.begin();
        r.recall(a, b) = e.at("recall").get<double>();
    }
    return r;
}

std::string MetricsReport::table() const {
    std::ostringstream out;
    char buf[64];
    out << "samples " << samples << ", threshold " << threshold << "\n";
    out << "        ";
    for (double m : iou_thresholds) {
        std::snprintf(buf, sizeof buf, "  IoU=%-5.2f", m);
        out << buf;
    }
    out << "\n";
    for (std::size_t a = 0; a < top_n.size(); ++a) {
        std::snprintf(buf, sizeof buf, "R@%-5ld", static_cast<long>(top_n[a]));
        out << buf << " ";
        for (std::size_t b = 0; b < iou_thresholds.size(); ++b) {
            std::snprintf(buf, sizeof buf, "  %9.4f", recall(static_cast<Index>(a), static_cast<Index>(b)));
            out << buf;
        }
        out << "\n";
    }
    std::snprintf(buf, sizeof buf, "mIoU    %.4f\n", miou);
    out << buf;
    return out.str();
}

MetricsReport make_report(std::span<const std::vector<MomentBoundary>> predictions,
                          std::span<const MomentBoundary> truths, std::vector<Index> top_n,
                          std::vector<double> iou_thresholds) {
    MetricsReport r;
    r.top_n = std::move(top_n);
    r.iou_thresholds = std::move(iou_thresholds);
    r.samples = static_cast<Index>(truths.size());
    r.recall.resize(static_cast<Index>(r.top_n.size()), static_cast<Index>(r.iou_thresholds.size()));
    for (std::size_t a = 0; a < r.top_n.size(); ++a)
        for (std::size_t b = 0; b < r.iou_thresholds.size(); ++b)
            r.recall(static_cast<Index>(a), static_cast<Index>(b)) =
                mmcda::recall_at(predictions, truths, r.top_n[a], r.iou_thresholds[b]);
    std::vector<MomentBoundary> top1;
    top1.reserve(predictions.size());
    for (const auto& p : predictions) {
        if (p.empty()) throw std::invalid_argument("make_report: a sample has no prediction");
        top1.push_back(p.front());
    }
    r.miou = mean_iou(top1, truths);
    return r;
}

}  // namespace mmcda
