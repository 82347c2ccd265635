#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>
#include <vector>

#include "cebag/metrics.hpp"
#include "cebag/scoring.hpp"
#include "cebag/synthetic.hpp"
#include "cebag/trace_io.hpp"

using namespace cebag;
using Catch::Matchers::WithinAbs;

namespace {

double detector_auc(const std::vector<SamplePair>& corpus, double DetectorScores::*field) {
    std::vector<LabeledScore> items;
    for (const auto& pair : corpus) {
        const auto s = score_sample(pair);
        items.push_back(LabeledScore{s.sample_id, s.*field, *pair.label, pair.green_score});
    }
    return roc_auc(items);
}

} // namespace

TEST_CASE("pinned rng reproduces identically from a seed") {
    synth::Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }
    synth::Rng c(42);
    for (int i = 0; i < 100; ++i) {
        const double u = c.uniform01();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("discrete model validation") {
    CHECK_THROWS_AS(synth::DiscreteBayesModel(2, 2, {0.5, 0.5, 0.5, 0.5}), ValidationError);
    CHECK_THROWS_AS(synth::DiscreteBayesModel(2, 2, {1.0, -0.1, 0.05, 0.05}), ValidationError);
    CHECK_THROWS_AS(synth::DiscreteBayesModel(2, 2, {0.5, 0.5}), ValidationError);
    // zero image marginal: first row massless
    CHECK_THROWS_AS(synth::DiscreteBayesModel(2, 2, {0.0, 0.0, 0.5, 0.5}), ValidationError);
}

TEST_CASE("pmi_check on an independent joint is zero everywhere") {
    // product of marginals {0.3, 0.7} x {0.2, 0.8}
    const synth::DiscreteBayesModel model(2, 2, {0.06, 0.24, 0.14, 0.56});
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t r = 0; r < 2; ++r) {
            const auto res = synth::pmi_check(model, i, r);
            CHECK_THAT(res.gain, WithinAbs(0.0, 1e-12));
            CHECK_THAT(res.pmi, WithinAbs(0.0, 1e-12));
        }
    }
}

TEST_CASE("pmi_check on a deterministic coupling is log k") {
    const std::size_t k = 5;
    std::vector<double> joint(k * k, 0.0);
    for (std::size_t i = 0; i < k; ++i) joint[i * k + i] = 1.0 / static_cast<double>(k);
    const synth::DiscreteBayesModel model(k, k, joint);
    for (std::size_t i = 0; i < k; ++i) {
        const auto res = synth::pmi_check(model, i, i);
        CHECK_THAT(res.gain, WithinAbs(std::log(static_cast<double>(k)), 1e-12));
        CHECK_THAT(res.pmi, WithinAbs(std::log(static_cast<double>(k)), 1e-12));
    }
}

TEST_CASE("pmi_check rejects zero-mass cells") {
    const synth::DiscreteBayesModel model(2, 2, {0.0, 0.5, 0.25, 0.25});
    CHECK_THROWS_WITH(synth::pmi_check(model, 0, 0),
                      Catch::Matchers::ContainsSubstring("zero-mass cell"));
    CHECK_THROWS_AS(synth::pmi_check(model, 2, 0), ValidationError);
}

TEST_CASE("gain equals pmi on every strictly positive joint up to 16x16") {
    synth::Rng rng(314);
    for (std::size_t rows = 2; rows <= 16; ++rows) {
        for (std::size_t cols = 2; cols <= 16; ++cols) {
            const auto model = synth::DiscreteBayesModel::random(rng, rows, cols);
            for (std::size_t i = 0; i < rows; ++i) {
                for (std::size_t r = 0; r < cols; ++r) {
                    const auto res = synth::pmi_check(model, i, r);
                    CHECK_THAT(res.gain, WithinAbs(res.pmi, 1e-12));
                }
            }
        }
    }
}

TEST_CASE("brute_force_auc mirrors the roc_auc anchors") {
    auto items = [](std::vector<std::pair<double, bool>> rows) {
        std::vector<LabeledScore> out;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            out.push_back(LabeledScore{"s" + std::to_string(i), rows[i].first, rows[i].second, {}});
        }
        return out;
    };
    CHECK(synth::brute_force_auc(items({{3.0, true}, {2.5, true}, {1.0, false}, {0.0, false}})) == 1.0);
    CHECK(synth::brute_force_auc(items({{1.0, true}, {1.0, true}, {1.0, false}, {1.0, false}})) == 0.5);
    CHECK(synth::brute_force_auc(items({{3.0, true}, {1.0, true}, {2.0, false}, {0.0, false}})) == 0.75);
    CHECK(synth::brute_force_auc(items({{1.0, true}, {1.0, false}})) == 0.5);
    CHECK_THROWS_AS(synth::brute_force_auc(items({{1.0, true}})), DegenerateLabelsError);
}

TEST_CASE("generate_corpus is deterministic given the seed") {
    const auto spec = synth::preset("separable");
    const auto a = synth::generate_corpus(spec);
    const auto b = synth::generate_corpus(spec);
    std::ostringstream sa, sb;
    io::write_corpus(a, sa);
    io::write_corpus(b, sb);
    CHECK(sa.str() == sb.str());
}

TEST_CASE("generate_corpus honors the count contract") {
    synth::SyntheticSpec spec = synth::preset("separable");
    spec.n_grounded = 50;
    spec.n_hallucinated = 50;
    const auto corpus = synth::generate_corpus(spec);
    REQUIRE(corpus.size() == 100);
    std::size_t n_true = 0;
    for (const auto& pair : corpus) {
        REQUIRE(pair.label.has_value());
        n_true += *pair.label ? 1 : 0;
    }
    CHECK(n_true == 50);
}

TEST_CASE("generate_corpus output always passes validation") {
    for (const char* name : {"separable", "hard", "label-noise"}) {
        synth::SyntheticSpec spec = synth::preset(name);
        spec.n_grounded = 40;
        spec.n_hallucinated = 40;
        for (const auto& pair : synth::generate_corpus(spec)) {
            CHECK_NOTHROW(validate(pair));
        }
    }
}

TEST_CASE("invalid synthetic specs are rejected") {
    synth::SyntheticSpec spec = synth::preset("separable");
    spec.grounded_params.logprob_mean = 0.5;
    CHECK_THROWS_AS(synth::generate_corpus(spec), ValidationError);

    spec = synth::preset("separable");
    spec.length_range = {5, 3};
    CHECK_THROWS_AS(synth::generate_corpus(spec), ValidationError);

    spec = synth::preset("separable");
    spec.n_grounded = 0;
    CHECK_THROWS_AS(synth::generate_corpus(spec), ValidationError);

    spec = synth::preset("separable");
    spec.green_coupling = 1.2;
    CHECK_THROWS_AS(synth::generate_corpus(spec), ValidationError);

    spec = synth::preset("separable");
    spec.hallucinated_params.logprob_std = -1.0;
    CHECK_THROWS_AS(synth::generate_corpus(spec), ValidationError);

    CHECK_THROWS_AS(synth::preset("nope"), ValidationError);
}

TEST_CASE("separable preset meets the frozen detector margins") {
    const auto corpus = synth::generate_corpus(synth::preset("separable"));
    const double auc_cebag = detector_auc(corpus, &DetectorScores::cebag);
    const double auc_avgprob = detector_auc(corpus, &DetectorScores::avgprob_neg);
    const double auc_sigma = detector_auc(corpus, &DetectorScores::sigma);
    const double auc_evidence = detector_auc(corpus, &DetectorScores::evidence);

    CHECK(auc_cebag >= 0.9);
    CHECK(auc_avgprob <= 0.7);
    CHECK(auc_cebag > auc_avgprob);
    CHECK(auc_sigma > auc_evidence);
}

TEST_CASE("green agreement tracks the coupling parameter") {
    synth::SyntheticSpec spec = synth::preset("separable");
    spec.green_coupling = 0.9;
    const auto corpus = synth::generate_corpus(spec);
    std::size_t agree = 0;
    for (const auto& pair : corpus) {
        const bool green_says = *pair.green_score < 1.0;
        agree += (green_says == *pair.label) ? 1 : 0;
    }
    const double frac = static_cast<double>(agree) / static_cast<double>(corpus.size());
    CHECK_THAT(frac, WithinAbs(0.9, 0.05));
}

TEST_CASE("raising hallucinated spread never hurts cebag separability") {
    double prev_auc = 0.0;
    for (double hall_std : {1.2, 1.5, 2.0, 3.0}) {
        synth::SyntheticSpec spec = synth::preset("separable");
        spec.hallucinated_params.logprob_std = hall_std;
        const double auc = detector_auc(synth::generate_corpus(spec), &DetectorScores::cebag);
        CHECK(auc >= prev_auc);
        prev_auc = auc;
    }
}

TEST_CASE("separable stability spread stays within five AUC points") {
    const auto corpus = synth::generate_corpus(synth::preset("separable"));
    std::vector<std::pair<std::string, double>> scores, greens;
    for (const auto& pair : corpus) {
        const auto s = score_sample(pair);
        scores.emplace_back(s.sample_id, s.cebag);
        greens.emplace_back(pair.sample_id, *pair.green_score);
    }
    const auto sweep = stability_sweep(scores, greens, {0.4, 0.5, 0.6, 0.7, 0.8});
    double lo = 1.0, hi = 0.0;
    for (const auto& point : sweep) {
        REQUIRE(point.auc.has_value());
        lo = std::min(lo, *point.auc);
        hi = std::max(hi, *point.auc);
    }
    CHECK(hi - lo <= 0.05);
}
