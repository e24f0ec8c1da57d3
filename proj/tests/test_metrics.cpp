#include "mmcda/evaluation.hpp"
#include "oracles.hpp"
#include "support.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace mmcda;
using testsupport::Gen;

namespace {

MomentBoundary random_span(Gen& g, Index length) {
    Index a = g.index(0, length - 1), b = g.index(0, length - 1);
    if (a > b) std::swap(a, b);
    return {a, b};
}

struct Fixture {
    std::vector<std::vector<MomentBoundary>> preds;
    std::vector<MomentBoundary> truths;
    std::vector<MomentBoundary> top1;
};

Fixture random_fixture(std::uint64_t seed, std::size_t samples) {
    Gen g(seed);
    Fixture f;
    for (std::size_t i = 0; i < samples; ++i) {
        f.truths.push_back(random_span(g, 30));
        std::vector<MomentBoundary> p;
        const Index k = g.index(1, 5);
        for (Index j = 0; j < k; ++j) p.push_back(g.index(0, 3) == 0 ? f.truths.back() : random_span(g, 30));
        f.preds.push_back(p);
        f.top1.push_back(p.front());
    }
    return f;
}

}  // namespace

TEST_CASE("temporal IoU hand cases") {
    CHECK(temporal_iou({3, 8}, {3, 8}) == 1.0);
    CHECK(temporal_iou({0, 4}, {5, 9}) == 0.0);
    CHECK(temporal_iou({10, 19}, {15, 24}) == 1.0 / 3.0);
    CHECK(temporal_iou({2, 2}, {2, 2}) == 1.0);
    CHECK(temporal_iou({0, 9}, {0, 4}) == 0.5);
}

TEST_CASE("IoU symmetry and range") {
    for (std::uint64_t seed = 0; seed < 2000; ++seed) {
        Gen g(seed);
        const auto a = random_span(g, 40), b = random_span(g, 40);
        const double iou = temporal_iou(a, b);
        CHECK(iou == temporal_iou(b, a));
        CHECK(iou >= 0.0);
        CHECK(iou <= 1.0);
        CHECK(iou == oracle::iou(a, b));
        CHECK(temporal_iou(a, a) == 1.0);
    }
}

TEST_CASE("recall and mean IoU examples") {
    const std::vector<MomentBoundary> truth{{0, 4}, {3, 9}};
    const std::vector<std::vector<MomentBoundary>> exact{{{0, 4}}, {{3, 9}}};
    const std::vector<std::vector<MomentBoundary>> miss{{{5, 9}}, {{0, 2}}};
    for (double m : {0.0, 0.3, 0.5, 0.7, 0.99}) {
        CHECK(recall_at(exact, truth, 1, m) == 1.0);
        CHECK(recall_at(miss, truth, 1, m) == 0.0);
    }
    const std::vector<MomentBoundary> top_exact{{0, 4}, {3, 9}}, half{{0, 4}, {0, 2}};
    CHECK(mean_iou(top_exact, truth) == 1.0);
    CHECK(mean_iou(half, truth) == 0.5);
    // Strict inequality: IoU exactly 0.5 misses at m = 0.5.
    const std::vector<MomentBoundary> one_truth{{0, 9}};
    const std::vector<std::vector<MomentBoundary>> halfway{{{0, 4}}};
    CHECK(recall_at(halfway, one_truth, 1, 0.5) == 0.0);
    CHECK(recall_at(halfway, one_truth, 1, 0.49) == 1.0);

    CHECK_THROWS(recall_at(std::vector<std::vector<MomentBoundary>>{}, std::vector<MomentBoundary>{}, 1, 0.5));
    CHECK_THROWS(mean_iou(std::vector<MomentBoundary>{}, std::vector<MomentBoundary>{}));
    CHECK_THROWS(recall_at(exact, truth, 0, 0.5));
}

TEST_CASE("metrics match brute-force scans") {
    const Fixture f = random_fixture(2024, 20);
    for (Index n : {1, 2, 5})
        for (double m : {0.1, 0.3, 0.5, 0.7})
            CHECK(recall_at(f.preds, f.truths, n, m) == oracle::recall(f.preds, f.truths, n, m));
    CHECK(mean_iou(f.top1, f.truths) == oracle::miou(f.top1, f.truths));

    const Fixture ten = random_fixture(7, 10);
    CHECK(std::abs(mean_iou(ten.top1, ten.truths) - oracle::miou(ten.top1, ten.truths)) <= 1e-12);
}

TEST_CASE("report monotonicity and serialization") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const Fixture f = random_fixture(seed, 15);
        const auto r = make_report(f.preds, f.truths, {1, 2, 5}, {0.1, 0.3, 0.5, 0.7});
        for (Index a = 0; a < r.recall.rows(); ++a)
            for (Index b = 0; b < r.recall.cols(); ++b) {
                if (b > 0) CHECK(r.recall(a, b) <= r.recall(a, b - 1));
                if (a > 0) CHECK(r.recall(a, b) >= r.recall(a - 1, b));
            }
        CHECK(r.recall_at(5, 0.3) >= r.recall_at(1, 0.3));
        CHECK(r.miou == mean_iou(f.top1, f.truths));
        const auto back = MetricsReport::from_json(nlohmann::json::parse(r.to_json().dump()));
        CHECK(back.recall == r.recall);
        CHECK(back.miou == r.miou);
        CHECK(back.top_n == r.top_n);
        CHECK(back.iou_thresholds == r.iou_thresholds);
        CHECK(back.table() == r.table());
    }
    const Fixture f = random_fixture(1, 5);
    const auto r = make_report(f.preds, f.truths, {1}, {0.5});
    CHECK_THROWS(r.recall_at(3, 0.5));
}

TEST_CASE("default thresholds by profile") {
    CHECK(default_threshold("activity") == 0.8);
    CHECK(default_threshold("tacos") == 0.8);
    CHECK(default_threshold("charades") == 0.9);
    CHECK_THROWS_AS(default_threshold("youtube"), ConfigError);
}

TEST_CASE("planted indicator scores recover every moment") {
    Gen g(5);
    std::vector<std::vector<MomentBoundary>> preds;
    std::vector<MomentBoundary> truths;
    for (int i = 0; i < 50; ++i) {
        const Index len = g.index(5, 40);
        const MomentBoundary t = random_span(g, len);
        ScoreSequence s = ScoreSequence::Zero(len);
        for (Index k = t.start; k <= t.end; ++k) s(k) = 1.0;
        std::vector<MomentBoundary> p;
        for (const auto& c : top_n_moments(s, 0.9, 5)) p.push_back(c.moment);
        preds.push_back(p);
        truths.push_back(t);
    }
    const auto r = make_report(preds, truths, {1, 5}, {0.3, 0.5, 0.7, 0.99});
    for (double m : {0.3, 0.5, 0.7, 0.99}) CHECK(r.recall_at(1, m) == 1.0);
    CHECK(r.miou == 1.0);
}

TEST_CASE("model evaluation") {
    GenConfig gc;
    gc.source = {6, 6, 9, 0.25, 0.5, 3, 5};
    gc.target = {6, 6, 9, 0.25, 0.5, 3, 5};
    gc.raw_dim = 6;
    gc.event_dim = 4;
    gc.events = 4;
    gc.tokens_per_event = 2;
    gc.filler_tokens = 2;
    const auto data = generate(gc);
    ModelConfig mc;
    mc.raw_dim = 6;
    mc.vocab_size = gc.vocab_size();
    mc.embed_dim = 4;
    mc.model_dim = 4;
    mc.hidden = 2;
    const ModelParams p = ModelParams::init(mc);

    const auto e = evaluate_model(p, data.target, 0.9, {1, 5}, {0.3, 0.5});
    CHECK(e.report.samples == 6);
    CHECK(e.report.threshold == 0.9);
    REQUIRE(e.predictions.size() == 6);
    CHECK(e.predictions[0].id == data.target.samples[0].id);
    const auto again = evaluate_model(p, data.target, 0.9, {1, 5}, {0.3, 0.5});
    CHECK(again.report.to_json().dump() == e.report.to_json().dump());

    const auto dir = std::filesystem::temp_directory_path() / "mmcda_metrics_csv";
    std::filesystem::create_directories(dir);
    write_predictions_csv(e, data.target, dir / "pred.csv");
    std::ifstream in(dir / "pred.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "id,start,end,peak_score,gt_start,gt_end,iou");

    DomainDataset unlabeled = data.target;
    unlabeled.samples[2].boundary.reset();
    CHECK_THROWS_AS(evaluate_model(p, unlabeled, 0.9, {1}, {0.5}), std::invalid_argument);
}
