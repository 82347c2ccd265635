#pragma once

// Labeled synthetic corpora with controlled grounded/hallucinated statistics,
// plus brute-force oracles: a pairwise AUC enumeration and a finite discrete
// Bayes model on which the gain/PMI identity is checked numerically.
//
// Randomness is pinned: the engine is std::mt19937_64 (its output sequence is
// fixed by the standard) and every transform on top of it (53-bit uniform,
// Box-Muller normal, rejection-sampled integers) is implemented here rather
// than taken from std::*_distribution, whose output is implementation
// defined. Corpus fixtures therefore stay stable across releases; the normal
// transform calls libm (log/cos/sqrt), so exact bytes can shift by an ulp
// between C libraries.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cebag/errors.hpp"
#include "cebag/metrics.hpp"
#include "cebag/trace.hpp"

namespace cebag::synth {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Uniform in [0, n); rejection sampling keeps it exactly uniform.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t r =
            (std::numeric_limits<std::uint64_t>::max() % n + 1) % n; // 2^64 mod n
        if (r == 0) return gen_() % n;
        const std::uint64_t threshold = std::uint64_t{0} - r; // 2^64 - r
        for (;;) {
            const std::uint64_t v = gen_();
            if (v < threshold) return v % n;
        }
    }

    // Standard normal via Box-Muller, no cached second value: each call
    // consumes exactly two engine draws, so draw alignment does not depend
    // on earlier values.
    double normal() {
        const double u1 = 1.0 - uniform01(); // (0, 1], keeps log finite
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::mt19937_64 gen_;
};

// ---------------------------------------------------------------------------
// Discrete Bayes model: a finite joint distribution over (image, response).

struct PmiCheckResult {
    double gain = 0.0; // log P(response | image) - log P(response)
    double pmi = 0.0;  // log P(image | response) - log P(image)
};

class DiscreteBayesModel {
public:
    DiscreteBayesModel(std::size_t n_images, std::size_t n_responses, std::vector<double> joint)
        : n_images_(n_images), n_responses_(n_responses), joint_(std::move(joint)) {
        if (n_images_ == 0 || n_responses_ == 0) {
            throw ValidationError("discrete model: need at least one image and one response");
        }
        if (joint_.size() != n_images_ * n_responses_) {
            throw ValidationError("discrete model: joint table size mismatch");
        }
        double total = 0.0;
        for (double p : joint_) {
            if (!(std::isfinite(p) && p >= 0.0)) {
                throw ValidationError("discrete model: joint entries must be finite and >= 0");
            }
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-12) {
            throw ValidationError("discrete model: joint mass must be 1 within 1e-12, got " +
                                  std::to_string(total));
        }
        p_image_.assign(n_images_, 0.0);
        p_response_.assign(n_responses_, 0.0);
        for (std::size_t i = 0; i < n_images_; ++i) {
            for (std::size_t r = 0; r < n_responses_; ++r) {
                p_image_[i] += cell(i, r);
                p_response_[r] += cell(i, r);
            }
        }
        for (double p : p_image_) {
            if (!(p > 0.0)) throw ValidationError("discrete model: image marginals must be strictly positive");
        }
        for (double p : p_response_) {
            if (!(p > 0.0)) throw ValidationError("discrete model: response marginals must be strictly positive");
        }
    }

    // Strictly positive random joint table, entries bounded away from zero.
    static DiscreteBayesModel random(Rng& rng, std::size_t n_images, std::size_t n_responses) {
        std::vector<double> joint(n_images * n_responses);
        double total = 0.0;
        for (double& p : joint) {
            p = rng.uniform(0.05, 1.05);
            total += p;
        }
        for (double& p : joint) p /= total;
        return DiscreteBayesModel(n_images, n_responses, std::move(joint));
    }

    std::size_t n_images() const { return n_images_; }
    std::size_t n_responses() const { return n_responses_; }
    double cell(std::size_t image, std::size_t response) const {
        return joint_[image * n_responses_ + response];
    }
    double p_image(std::size_t image) const { return p_image_[image]; }
    double p_response(std::size_t response) const { return p_response_[response]; }

private:
    std::size_t n_images_;
    std::size_t n_responses_;
    std::vector<double> joint_;
    std::vector<double> p_image_;
    std::vector<double> p_response_;
};

// Evaluate the evidence gain through its two algebraic routes on one cell.
// The routes divide by different marginals, so agreement is a genuine
// numerical check, not a tautology.
inline PmiCheckResult pmi_check(const DiscreteBayesModel& model, std::size_t image,
                                std::size_t response) {
    if (image >= model.n_images() || response >= model.n_responses()) {
        throw ValidationError("pmi_check: cell index out of range");
    }
    const double joint = model.cell(image, response);
    if (!(joint > 0.0)) {
        throw ValidationError("pmi_check: zero-mass cell (" + std::to_string(image) + ", " +
                              std::to_string(response) + "): log of zero");
    }
    PmiCheckResult out;
    out.gain = std::log(joint / model.p_image(image)) - std::log(model.p_response(response));
    out.pmi = std::log(joint / model.p_response(response)) - std::log(model.p_image(image));
    return out;
}

// O(P*N) pairwise AUC with half credit on ties; the independent oracle the
// rank-based roc_auc is checked against.
inline double brute_force_auc(const std::vector<LabeledScore>& items) {
    std::vector<double> pos, neg;
    for (const auto& it : items) {
        if (!std::isfinite(it.score)) {
            throw ValidationError("brute_force_auc: sample '" + it.sample_id +
                                  "': score must be finite");
        }
        (it.label ? pos : neg).push_back(it.score);
    }
    if (pos.empty() || neg.empty()) {
        throw DegenerateLabelsError("degenerate labels: need at least one positive and one "
                                    "negative sample (n_positive=" + std::to_string(pos.size()) +
                                    " n_negative=" + std::to_string(neg.size()) + ")");
    }
    double credit = 0.0;
    for (double p : pos) {
        for (double n : neg) {
            if (p > n) credit += 1.0;
            else if (p == n) credit += 0.5;
        }
    }
    return credit / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

// ---------------------------------------------------------------------------
// Synthetic corpus generation.

struct ClassParams {
    double logprob_mean = -1.0;     // per-token mean, must be <= 0
    double logprob_std = 0.1;       // per-token spread, >= 0
    double gain_per_token_mean = 0.0; // mean per-token belief shift from the image
};

struct SyntheticSpec {
    std::uint64_t seed = 1;
    std::size_t n_grounded = 1;
    std::size_t n_hallucinated = 1;
    std::pair<std::size_t, std::size_t> length_range = {16, 48};
    ClassParams grounded_params;
    ClassParams hallucinated_params;
    double green_coupling = 1.0; // P(green score agrees with the true class)
};

inline void validate(const SyntheticSpec& spec) {
    if (spec.n_grounded < 1 || spec.n_hallucinated < 1) {
        throw ValidationError("synthetic spec: counts must be >= 1");
    }
    if (spec.length_range.first < 1 || spec.length_range.first > spec.length_range.second) {
        throw ValidationError("synthetic spec: length range must satisfy 1 <= min <= max");
    }
    for (const ClassParams* p : {&spec.grounded_params, &spec.hallucinated_params}) {
        if (!(std::isfinite(p->logprob_mean) && p->logprob_mean <= 0.0)) {
            throw ValidationError("synthetic spec: logprob_mean must be finite and <= 0, got " +
                                  std::to_string(p->logprob_mean));
        }
        if (!(std::isfinite(p->logprob_std) && p->logprob_std >= 0.0)) {
            throw ValidationError("synthetic spec: logprob_std must be finite and >= 0");
        }
        if (!std::isfinite(p->gain_per_token_mean)) {
            throw ValidationError("synthetic spec: gain_per_token_mean must be finite");
        }
    }
    if (!(std::isfinite(spec.green_coupling) && spec.green_coupling >= 0.0 &&
          spec.green_coupling <= 1.0)) {
        throw ValidationError("synthetic spec: green_coupling must be in [0,1]");
    }
}

namespace detail {

inline std::string padded_id(char prefix, std::size_t index, std::size_t width) {
    std::string digits = std::to_string(index);
    if (digits.size() < width) digits.insert(0, width - digits.size(), '0');
    return std::string(1, prefix) + digits;
}

} // namespace detail

// Deterministic labeled corpus. Grounded samples get tight per-token
// logprobs and a large per-token gain; hallucinated samples get wide
// logprobs and near-zero gain. The text-only trace is the multimodal trace
// minus the per-token gain contributions; everything is clamped to <= 0.
//
// Quality coupling: each hallucinated sample draws a quality q in [0, 0.9)
// that becomes its green score (when the coupling coin lands consistent) and
// scales its logprob spread, so worse-quality samples look more suspect to
// the detectors. Grounded samples have quality 1.0 exactly. With probability
// 1 - green_coupling the green score is flipped to the other class's range,
// so corpus-level agreement between the true label and (green < 1.0) equals
// green_coupling in expectation.
inline std::vector<SamplePair> generate_corpus(const SyntheticSpec& spec) {
    validate(spec);
    Rng rng(spec.seed);

    const std::size_t id_width =
        std::max<std::size_t>(4, std::to_string(std::max(spec.n_grounded, spec.n_hallucinated)).size());
    const std::size_t len_span = spec.length_range.second - spec.length_range.first + 1;

    std::vector<SamplePair> corpus;
    corpus.reserve(spec.n_grounded + spec.n_hallucinated);

    auto emit = [&](bool hallucinated, std::size_t index) {
        const ClassParams& params = hallucinated ? spec.hallucinated_params : spec.grounded_params;
        const std::size_t length = spec.length_range.first + rng.below(len_span);

        // One quality draw per sample regardless of class keeps the engine
        // stream aligned when only class parameters change.
        const double q_draw = rng.uniform(0.0, 0.9);
        const double quality = hallucinated ? q_draw : 1.0;
        const bool consistent = rng.uniform01() < spec.green_coupling;
        double green;
        if (hallucinated) {
            green = consistent ? quality : 1.0;
        } else {
            green = consistent ? 1.0 : q_draw;
        }

        // Severity-scaled spread for hallucinated samples: quality 0.9 -> x0.76,
        // quality 0.0 -> x1.3 of the configured std.
        const double std_eff =
            hallucinated ? params.logprob_std * (0.7 + 0.6 * (1.0 - quality)) : params.logprob_std;
        const double gain_jitter = 0.1 * std::abs(params.gain_per_token_mean);

        SamplePair pair;
        pair.sample_id = detail::padded_id(hallucinated ? 'h' : 'g', index + 1, id_width);
        pair.label = hallucinated;
        pair.green_score = green;
        pair.multimodal.condition = Condition::Multimodal;
        pair.text_only.condition = Condition::TextOnly;
        pair.multimodal.tokens.reserve(length);
        for (std::size_t j = 0; j < length; ++j) {
            const double lp_mm = std::min(0.0, params.logprob_mean + std_eff * rng.normal());
            const double gain_j = params.gain_per_token_mean + gain_jitter * rng.normal();
            pair.multimodal.tokens.push_back("t" + std::to_string(j));
            pair.multimodal.logprobs.push_back(lp_mm);
            pair.text_only.logprobs.push_back(std::min(0.0, lp_mm - gain_j));
        }
        pair.text_only.tokens = pair.multimodal.tokens;
        corpus.push_back(std::move(pair));
    };

    for (std::size_t i = 0; i < spec.n_grounded; ++i) emit(false, i);
    for (std::size_t i = 0; i < spec.n_hallucinated; ++i) emit(true, i);
    return corpus;
}

// Named presets. "separable" is the regression anchor: CEBaG separates the
// classes strongly while mean token probability is matched across classes,
// keeping the AvgProb baseline weak.
inline SyntheticSpec preset(const std::string& name) {
    SyntheticSpec spec;
    if (name == "separable") {
        spec.seed = 20250810;
        spec.n_grounded = 300;
        spec.n_hallucinated = 300;
        spec.length_range = {16, 48};
        spec.grounded_params = {-1.0, 0.1, 0.6};
        spec.hallucinated_params = {-1.4, 1.2, 0.015};
        spec.green_coupling = 0.9;
    } else if (name == "hard") {
        spec.seed = 7151;
        spec.n_grounded = 300;
        spec.n_hallucinated = 300;
        spec.length_range = {8, 32};
        spec.grounded_params = {-1.0, 0.35, 0.3};
        spec.hallucinated_params = {-1.2, 0.7, 0.05};
        spec.green_coupling = 0.85;
    } else if (name == "label-noise") {
        spec.seed = 40927;
        spec.n_grounded = 300;
        spec.n_hallucinated = 300;
        spec.length_range = {16, 48};
        spec.grounded_params = {-1.0, 0.1, 0.6};
        spec.hallucinated_params = {-1.4, 1.2, 0.015};
        spec.green_coupling = 0.6;
    } else {
        throw ValidationError("unknown preset '" + name +
                              "' (known: separable, hard, label-noise)");
    }
    return spec;
}

inline std::vector<std::string> preset_names() {
    return {"hard", "label-noise", "separable"};
}

} // namespace cebag::synth
