#pragma once

// Detector evaluation: ROC-AUC (Mann-Whitney, half-credit ties), AUG
// (accuracy-rejection curve), reference-score thresholding, the threshold
// stability sweep, and side-by-side detector comparison.
//
// All values are fractions in [0,1]; renderers multiply by 100 for display.
// AUG here is the mean retained accuracy over all rejection counts, i.e. the
// area under the accuracy-rejection curve on a uniform grid over k. Reports
// carry this definition so tables are unambiguous.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cebag/errors.hpp"
#include "cebag/scoring.hpp"
#include "cebag/trace.hpp"

namespace cebag {

// One evaluated sample: detector output plus ground truth.
struct LabeledScore {
    std::string sample_id;
    double score = 0.0; // higher = more suspect
    bool label = false; // true = hallucinated
    std::optional<double> green_score;
};

// AUC at one relabeling threshold; auc is absent when the relabeled corpus
// collapsed to a single class.
struct StabilityPoint {
    double green_threshold = 0.0;
    std::optional<double> auc;
};

// Thresholds and grids an evaluation ran with; echoed into every report.
struct EvalConfig {
    double green_threshold = 1.0;
    std::vector<double> stability_grid = {0.4, 0.5, 0.6, 0.7, 0.8};
    std::vector<double> lambda_grid = default_lambda_grid();
};

inline const char* aug_definition() {
    return "mean retained accuracy over rejection counts k=0..N-1 "
           "(area under the accuracy-rejection curve, uniform grid over k)";
}

struct EvalReport {
    std::string detector_name;
    double auc = 0.0;
    double aug = 0.0;
    std::size_t n_positive = 0;
    std::size_t n_negative = 0;
    std::vector<StabilityPoint> stability; // empty when green scores are unavailable
    std::optional<double> best_lambda;     // set for the tuned lambda detector only
    EvalConfig config;
};

// Threshold a reference-quality score into labels. Strict inequality: a
// sample is hallucinated iff its score falls strictly below the threshold,
// so a score equal to the threshold stays clean.
inline std::vector<std::pair<std::string, bool>>
green_labels(const std::vector<std::pair<std::string, double>>& green_scores, double threshold) {
    if (!(std::isfinite(threshold) && threshold > 0.0 && threshold <= 1.0)) {
        throw ValidationError("green_labels: threshold must be in (0,1], got " +
                              std::to_string(threshold));
    }
    std::vector<std::pair<std::string, bool>> out;
    out.reserve(green_scores.size());
    for (const auto& [id, g] : green_scores) {
        if (!(std::isfinite(g) && g >= 0.0 && g <= 1.0)) {
            throw ValidationError("green_labels: sample '" + id +
                                  "': green score must be in [0,1], got " + std::to_string(g));
        }
        out.emplace_back(id, g < threshold);
    }
    return out;
}

// Rank-based ROC-AUC: the Mann-Whitney probability that a random positive
// outscores a random negative, with half credit on ties. Equals the
// trapezoidal area under the ROC curve. Single-class input is an error,
// never a silent 0.5.
inline double roc_auc(const std::vector<LabeledScore>& items) {
    std::size_t n_pos = 0, n_neg = 0;
    for (const auto& it : items) {
        if (!std::isfinite(it.score)) {
            throw ValidationError("roc_auc: sample '" + it.sample_id + "': score must be finite");
        }
        (it.label ? n_pos : n_neg) += 1;
    }
    if (n_pos == 0 || n_neg == 0) {
        throw DegenerateLabelsError("degenerate labels: need at least one positive and one "
                                    "negative sample (n_positive=" + std::to_string(n_pos) +
                                    " n_negative=" + std::to_string(n_neg) + ")");
    }
    const std::size_t n = items.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return items[a].score < items[b].score; });

    // Average 1-based ranks over tie groups, then the U statistic.
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && items[order[j + 1]].score == items[order[i]].score) ++j;
        const double avg_rank = static_cast<double>(i + 1 + j + 1) / 2.0;
        for (std::size_t k = i; k <= j; ++k) {
            if (items[order[k]].label) rank_sum_pos += avg_rank;
        }
        i = j + 1;
    }
    const double u = rank_sum_pos -
                     static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// Area under the accuracy-rejection curve. Samples are rejected most-suspect
// first; at each rejection count k the accuracy of the retained set is the
// fraction not hallucinated; AUG is the mean over k = 0..N-1. Score ties are
// broken by sample_id so the rejection order, and hence AUG, is reproducible.
inline double aug(const std::vector<LabeledScore>& items) {
    if (items.empty()) {
        throw ValidationError("aug: empty input");
    }
    for (const auto& it : items) {
        if (!std::isfinite(it.score)) {
            throw ValidationError("aug: sample '" + it.sample_id + "': score must be finite");
        }
    }
    const std::size_t n = items.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (items[a].score != items[b].score) return items[a].score > items[b].score;
        return items[a].sample_id < items[b].sample_id;
    });
    double acc_sum = 0.0;
    std::size_t clean = 0;
    for (std::size_t k = n; k-- > 0;) {
        if (!items[order[k]].label) ++clean;
        acc_sum += static_cast<double>(clean) / static_cast<double>(n - k);
    }
    return acc_sum / static_cast<double>(n);
}

// Relabel at each threshold and re-evaluate the same scores. Thresholds that
// collapse the labels to one class are reported with an absent AUC instead
// of a fabricated number.
inline std::vector<StabilityPoint>
stability_sweep(const std::vector<std::pair<std::string, double>>& scores,
                const std::vector<std::pair<std::string, double>>& green,
                const std::vector<double>& thresholds) {
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
        if (!(std::isfinite(thresholds[i]) && thresholds[i] > 0.0 && thresholds[i] <= 1.0)) {
            throw ValidationError("stability_sweep: thresholds must be in (0,1]");
        }
        if (i > 0 && !(thresholds[i] > thresholds[i - 1])) {
            throw ValidationError("stability_sweep: thresholds must be strictly increasing");
        }
    }
    std::map<std::string, double> green_by_id;
    for (const auto& [id, g] : green) green_by_id.emplace(id, g);
    std::set<std::string> score_ids;
    for (const auto& [id, s] : scores) score_ids.insert(id);

    std::string missing_green, missing_score;
    for (const auto& [id, s] : scores) {
        if (!green_by_id.count(id)) missing_green += (missing_green.empty() ? "" : ", ") + id;
    }
    for (const auto& [id, g] : green_by_id) {
        if (!score_ids.count(id)) missing_score += (missing_score.empty() ? "" : ", ") + id;
    }
    if (!missing_green.empty() || !missing_score.empty()) {
        std::string msg = "stability_sweep: id mismatch between scores and green lists";
        if (!missing_green.empty()) msg += "; missing green for: " + missing_green;
        if (!missing_score.empty()) msg += "; missing score for: " + missing_score;
        throw ValidationError(msg);
    }

    std::vector<StabilityPoint> out;
    out.reserve(thresholds.size());
    for (double t : thresholds) {
        std::vector<LabeledScore> items;
        items.reserve(scores.size());
        std::size_t n_pos = 0;
        for (const auto& [id, s] : scores) {
            const double g = green_by_id.at(id);
            if (!(std::isfinite(g) && g >= 0.0 && g <= 1.0)) {
                throw ValidationError("stability_sweep: sample '" + id +
                                      "': green score must be in [0,1], got " + std::to_string(g));
            }
            const bool lab = g < t;
            n_pos += lab ? 1 : 0;
            items.push_back(LabeledScore{id, s, lab, g});
        }
        if (n_pos == 0 || n_pos == items.size()) {
            out.push_back(StabilityPoint{t, std::nullopt});
        } else {
            out.push_back(StabilityPoint{t, roc_auc(items)});
        }
    }
    return out;
}

namespace detail {

// Ground-truth label for one scored sample: the explicit label wins; else
// the green score is thresholded; having neither is a contract violation.
inline bool derive_label(const ScoredSample& s, double green_threshold) {
    if (s.label) return *s.label;
    if (s.green_score) return *s.green_score < green_threshold;
    throw ValidationError("sample '" + s.scores.sample_id +
                          "': evaluation needs a label or a green score");
}

inline std::vector<LabeledScore>
attach_labels(const std::vector<ScoredSample>& scored,
              const std::vector<std::pair<std::string, double>>& det_scores,
              double green_threshold) {
    std::vector<LabeledScore> out;
    out.reserve(scored.size());
    for (std::size_t i = 0; i < scored.size(); ++i) {
        out.push_back(LabeledScore{det_scores[i].first, det_scores[i].second,
                                   derive_label(scored[i], green_threshold),
                                   scored[i].green_score});
    }
    return out;
}

} // namespace detail

// One evaluation pass over precomputed scores: every built-in detector plus
// every externally supplied one, reported in name order. Stability sweeps
// run only when every sample carries a green score (relabeling needs them).
inline std::vector<EvalReport>
evaluate_scored(const std::vector<ScoredSample>& scored,
                const std::map<std::string, std::vector<std::pair<std::string, double>>>& external,
                const EvalConfig& cfg = {}) {
    if (scored.empty()) {
        throw ValidationError("evaluate_scored: empty corpus");
    }
    if (cfg.lambda_grid.empty()) {
        throw ValidationError("evaluate_scored: lambda grid must be non-empty");
    }

    std::vector<DetectorScores> det;
    det.reserve(scored.size());
    for (const auto& s : scored) det.push_back(s.scores);

    const bool have_green = std::all_of(scored.begin(), scored.end(),
                                        [](const ScoredSample& s) { return s.green_score.has_value(); });

    // Detector name -> per-sample scores, corpus order.
    std::map<std::string, std::vector<std::pair<std::string, double>>> detectors;
    auto column = [&](double DetectorScores::*field) {
        std::vector<std::pair<std::string, double>> col;
        col.reserve(det.size());
        for (const auto& s : det) col.emplace_back(s.sample_id, s.*field);
        return col;
    };
    detectors["cebag"] = column(&DetectorScores::cebag);
    detectors["sigma_only"] = column(&DetectorScores::sigma);
    detectors["evidence_only"] = column(&DetectorScores::evidence);
    detectors["avgprob"] = column(&DetectorScores::avgprob_neg);

    // Tuned variant: pick the grid lambda with the best AUC at the primary
    // threshold; ties go to the smaller lambda. The winning scores are then
    // reused unchanged for the stability sweep.
    std::optional<double> best_lambda;
    {
        double best_auc = -1.0;
        std::vector<std::pair<std::string, double>> best_scores;
        for (double lam : cfg.lambda_grid) {
            auto lam_scores = cebag_lambda_scores(det, lam);
            const double auc_v = roc_auc(detail::attach_labels(scored, lam_scores, cfg.green_threshold));
            if (auc_v > best_auc) {
                best_auc = auc_v;
                best_lambda = lam;
                best_scores = std::move(lam_scores);
            }
        }
        detectors["cebag_lambda"] = std::move(best_scores);
    }

    // External detectors must cover every corpus sample id.
    for (const auto& [name, ext] : external) {
        std::map<std::string, double> by_id;
        for (const auto& [id, score] : ext) {
            if (!std::isfinite(score)) {
                throw ValidationError("external detector '" + name + "': sample '" + id +
                                      "': score must be finite");
            }
            by_id[id] = score;
        }
        std::vector<std::pair<std::string, double>> col;
        std::string missing;
        for (const auto& s : scored) {
            auto it = by_id.find(s.scores.sample_id);
            if (it == by_id.end()) {
                missing += (missing.empty() ? "" : ", ") + s.scores.sample_id;
            } else {
                col.emplace_back(s.scores.sample_id, it->second);
            }
        }
        if (!missing.empty()) {
            throw ValidationError("external detector '" + name +
                                  "': missing scores for: " + missing);
        }
        detectors[name] = std::move(col);
    }

    std::vector<std::pair<std::string, double>> greens;
    if (have_green) {
        greens.reserve(scored.size());
        for (const auto& s : scored) greens.emplace_back(s.scores.sample_id, *s.green_score);
    }

    std::vector<EvalReport> reports;
    reports.reserve(detectors.size());
    for (const auto& [name, col] : detectors) {
        auto items = detail::attach_labels(scored, col, cfg.green_threshold);
        EvalReport r;
        r.detector_name = name;
        r.auc = roc_auc(items);
        r.aug = aug(items);
        for (const auto& it : items) (it.label ? r.n_positive : r.n_negative) += 1;
        if (have_green) {
            r.stability = stability_sweep(col, greens, cfg.stability_grid);
        }
        if (name == "cebag_lambda") r.best_lambda = best_lambda;
        r.config = cfg;
        reports.push_back(std::move(r));
    }
    // std::map already iterates in name order; keep the guarantee explicit.
    std::sort(reports.begin(), reports.end(),
              [](const EvalReport& a, const EvalReport& b) { return a.detector_name < b.detector_name; });
    return reports;
}

// Convenience wrapper: score raw pairs, then evaluate.
inline std::vector<EvalReport>
compare_detectors(const std::vector<SamplePair>& corpus,
                  const std::map<std::string, std::vector<std::pair<std::string, double>>>& external = {},
                  const EvalConfig& cfg = {}) {
    std::vector<ScoredSample> scored;
    scored.reserve(corpus.size());
    for (const auto& pair : corpus) {
        scored.push_back(ScoredSample{score_sample(pair), pair.green_score, pair.label});
    }
    return evaluate_scored(scored, external, cfg);
}

struct LambdaSweepRow {
    double lambda = 0.0;
    double auc = 0.0;
    bool best = false; // best AUC in the grid; ties go to the smallest lambda
};

// AUC of the tuned variant at every grid lambda, labels taken at the primary
// green threshold.
inline std::vector<LambdaSweepRow> lambda_sweep(const std::vector<ScoredSample>& scored,
                                                const EvalConfig& cfg = {}) {
    if (scored.empty()) {
        throw ValidationError("lambda_sweep: empty corpus");
    }
    if (cfg.lambda_grid.empty()) {
        throw ValidationError("lambda_sweep: lambda grid must be non-empty");
    }
    std::vector<DetectorScores> det;
    det.reserve(scored.size());
    for (const auto& s : scored) det.push_back(s.scores);

    std::vector<LambdaSweepRow> rows;
    rows.reserve(cfg.lambda_grid.size());
    std::size_t best_index = 0;
    for (double lam : cfg.lambda_grid) {
        const auto scores = cebag_lambda_scores(det, lam);
        const double auc_v = roc_auc(detail::attach_labels(scored, scores, cfg.green_threshold));
        if (!rows.empty() && auc_v > rows[best_index].auc) best_index = rows.size();
        rows.push_back(LambdaSweepRow{lam, auc_v, false});
    }
    rows[best_index].best = true;
    return rows;
}

} // namespace cebag
