#pragma once

// Deterministic trace-scoring primitives.
//
// Every function here is a pure function of its arguments: identical input
// bytes produce bit-identical outputs, so all of them are safe to call from
// any number of threads. Log-probabilities are natural log throughout; the
// gain is in nats and evidence in nats per token.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "cebag/errors.hpp"
#include "cebag/trace.hpp"

namespace cebag {

// Sum of the per-token log-probabilities: log P(response | conditioning).
inline double sequence_logprob(const TokenTrace& trace) {
    validate(trace);
    double sum = 0.0;
    for (double lp : trace.logprobs) sum += lp;
    return sum;
}

// How much observing the image moved the model's belief in its own answer:
// log P(r | image, question) - log P(r | question). Positive means the image
// raised confidence; near zero means the answer ignores the image.
inline double evidence_gain(const SamplePair& pair) {
    validate(pair);
    return sequence_logprob(pair.multimodal) - sequence_logprob(pair.text_only);
}

// Length-normalized absolute belief shift: |gain| / length.
inline double evidence_magnitude(double gain, std::size_t length) {
    if (length == 0) {
        throw ValidationError("evidence_magnitude: length must be >= 1");
    }
    return std::abs(gain) / static_cast<double>(length);
}

// Population standard deviation (divisor L, not L-1) of the per-token
// log-probabilities. The population divisor keeps length-1 traces well
// defined: their variance is exactly 0.
inline double token_variance(const TokenTrace& trace) {
    validate(trace);
    const std::size_t n = trace.logprobs.size();
    double mean = 0.0;
    for (double lp : trace.logprobs) mean += lp;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double lp : trace.logprobs) {
        const double d = lp - mean;
        ss += d * d;
    }
    return std::sqrt(ss / static_cast<double>(n));
}

// The combined suspicion score: base uncertainty amplified by how strongly
// the image shifted the answer. Monotone in both arguments; equals sigma
// when evidence is zero.
inline double cebag_score(double sigma, double evidence) {
    return sigma * (1.0 + evidence);
}

// Negated mean token probability. Negation keeps the shared orientation:
// higher output = more suspect. Result is in [-1, 0].
inline double avgprob_score(const TokenTrace& trace) {
    validate(trace);
    double sum = 0.0;
    for (double lp : trace.logprobs) sum += std::exp(lp);
    return -(sum / static_cast<double>(trace.logprobs.size()));
}

// Full detector bundle for one pair. sigma and avgprob come from the
// image-conditioned pass; gain needs both.
inline DetectorScores score_sample(const SamplePair& pair) {
    validate(pair);
    DetectorScores s;
    s.sample_id = pair.sample_id;
    s.length = pair.length();
    s.gain = evidence_gain(pair);
    s.evidence = evidence_magnitude(s.gain, s.length);
    s.sigma = token_variance(pair.multimodal);
    s.cebag = cebag_score(s.sigma, s.evidence);
    s.avgprob_neg = avgprob_score(pair.multimodal);
    return s;
}

// Default grid for the tuned lambda variant.
inline std::vector<double> default_lambda_grid() {
    return {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8,
            0.9, 1.0, 1.5, 2.0, 3.0, 5.0, 10.0};
}

// Tuned-variant scores: min-max normalize sigma and evidence independently
// over the corpus, then score each sample as sigma_hat + lambda * evidence_hat.
// A feature with zero range maps to all-zeros, which keeps the lambda = 0
// ranking identical to the plain sigma ranking. Output is in corpus order.
inline std::vector<std::pair<std::string, double>>
cebag_lambda_scores(const std::vector<DetectorScores>& corpus, double lambda) {
    if (corpus.empty()) {
        throw ValidationError("cebag_lambda_scores: corpus must be non-empty");
    }
    if (!(std::isfinite(lambda) && lambda >= 0.0)) {
        throw ValidationError("cebag_lambda_scores: lambda must be finite and >= 0");
    }
    auto minmax_of = [&](double DetectorScores::*field) {
        double lo = corpus.front().*field, hi = corpus.front().*field;
        for (const auto& s : corpus) {
            lo = std::min(lo, s.*field);
            hi = std::max(hi, s.*field);
        }
        return std::pair<double, double>{lo, hi};
    };
    const auto [sig_lo, sig_hi] = minmax_of(&DetectorScores::sigma);
    const auto [ev_lo, ev_hi] = minmax_of(&DetectorScores::evidence);
    auto normalize = [](double x, double lo, double hi) {
        return hi > lo ? (x - lo) / (hi - lo) : 0.0;
    };
    std::vector<std::pair<std::string, double>> out;
    out.reserve(corpus.size());
    for (const auto& s : corpus) {
        const double sig_hat = normalize(s.sigma, sig_lo, sig_hi);
        const double ev_hat = normalize(s.evidence, ev_lo, ev_hi);
        out.emplace_back(s.sample_id, sig_hat + lambda * ev_hat);
    }
    return out;
}

} // namespace cebag
