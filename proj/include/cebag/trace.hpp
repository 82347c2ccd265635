#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "cebag/errors.hpp"

namespace cebag {

// Which conditioning produced a trace: with the image attached, or text only.
enum class Condition { Multimodal, TextOnly };

inline const char* to_string(Condition c) {
    return c == Condition::Multimodal ? "multimodal" : "text_only";
}

// One scored response under one condition: the response tokens plus the
// per-token natural-log probabilities reported by the model.
//
// Invariants (enforced by validate()):
//   - tokens.size() == logprobs.size() >= 1
//   - every logprob is finite and <= 0
// A logprob of exactly 0.0 is legal (a forced token with probability 1).
struct TokenTrace {
    std::vector<std::string> tokens; // display only; entries may be empty
    std::vector<double> logprobs;    // natural log, each <= 0
    Condition condition = Condition::Multimodal;

    std::size_t length() const { return logprobs.size(); }
};

inline void validate(const TokenTrace& trace) {
    if (trace.logprobs.empty()) {
        throw ValidationError("empty trace: a trace admitted to scoring must have length >= 1");
    }
    if (trace.tokens.size() != trace.logprobs.size()) {
        throw ValidationError("trace token/logprob length mismatch: tokens=" +
                              std::to_string(trace.tokens.size()) +
                              " logprobs=" + std::to_string(trace.logprobs.size()));
    }
    for (std::size_t i = 0; i < trace.logprobs.size(); ++i) {
        const double lp = trace.logprobs[i];
        if (!std::isfinite(lp)) {
            throw ValidationError("logprobs[" + std::to_string(i) + "]: logprob must be finite");
        }
        if (lp > 0.0) {
            throw ValidationError("logprobs[" + std::to_string(i) +
                                  "]: logprob must be <= 0, got " + std::to_string(lp));
        }
    }
}

// The unit of detection: one response scored token-for-token under both
// conditions, plus optional reference quality. Both traces score the SAME
// response, so their lengths must agree.
struct SamplePair {
    std::string sample_id;
    TokenTrace multimodal; // condition == Multimodal
    TokenTrace text_only;  // condition == TextOnly
    std::optional<double> green_score; // reference quality in [0,1]
    std::optional<bool> label;         // true = hallucinated

    std::size_t length() const { return multimodal.length(); }
};

inline void validate(const SamplePair& pair) {
    validate(pair.multimodal);
    validate(pair.text_only);
    if (pair.multimodal.length() != pair.text_only.length()) {
        throw ValidationError("pair '" + pair.sample_id + "': length mismatch: multimodal=" +
                              std::to_string(pair.multimodal.length()) +
                              " text_only=" + std::to_string(pair.text_only.length()));
    }
    if (pair.green_score) {
        const double g = *pair.green_score;
        if (!(std::isfinite(g) && g >= 0.0 && g <= 1.0)) {
            throw ValidationError("pair '" + pair.sample_id +
                                  "': green_score must be in [0,1], got " + std::to_string(g));
        }
    }
}

// All detector outputs for one sample. Every field follows the orientation
// "higher = more likely hallucinated"; avgprob_neg is the negated mean token
// probability so it conforms too.
struct DetectorScores {
    std::string sample_id;
    double sigma = 0.0;       // population std of per-token logprobs (image pass)
    double gain = 0.0;        // sum(mm logprobs) - sum(text-only logprobs), nats
    double evidence = 0.0;    // |gain| / length, nats per token
    double cebag = 0.0;       // sigma * (1 + evidence)
    double avgprob_neg = 0.0; // -mean(exp(logprob)) over the image pass, in [-1, 0]
    std::size_t length = 0;   // token count L
};

// A score record joined with whatever reference quality the source pair
// carried, so downstream evaluation can run from a scores file alone.
struct ScoredSample {
    DetectorScores scores;
    std::optional<double> green_score;
    std::optional<bool> label;
};

} // namespace cebag
