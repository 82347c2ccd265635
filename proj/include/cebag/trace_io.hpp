#pragma once

// Line-delimited JSON persistence for trace corpora, score files, external
// score lists, and synthetic-corpus specs.
//
// Serialization is canonical: fields in a fixed order, reals rendered with
// the shortest decimal form that parses back to the identical bits, one
// record per line, trailing newline. read(write(x)) is the identity, and the
// bytes do not depend on the platform. Every rejection names the offending
// line (and field path where one exists); the messages are stable strings.

#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cebag/errors.hpp"
#include "cebag/fp.hpp"
#include "cebag/synthetic.hpp"
#include "cebag/trace.hpp"

namespace cebag::io {

inline constexpr int kSchemaVersion = 1;

// The toolkit's public data contract: one generated answer scored by the two
// teacher-forced passes, one JSON object per line.
struct TraceRecord {
    int schema_version = kSchemaVersion;
    std::string sample_id;
    std::vector<std::string> tokens;
    std::vector<double> logprobs_mm;
    std::vector<double> logprobs_text;
    std::optional<double> green_score;
    std::optional<bool> label;
    std::map<std::string, std::string> meta; // model name, dataset, question id, ...
};

namespace detail {

inline std::string at_line(std::size_t line_no) {
    return "line " + std::to_string(line_no) + ": ";
}

inline double finite_number(const nlohmann::json& j, const std::string& path,
                            std::size_t line_no) {
    if (!j.is_number()) {
        throw ValidationError(at_line(line_no) + "field '" + path + "': expected a number");
    }
    const double v = j.get<double>();
    if (!std::isfinite(v)) {
        throw ValidationError(at_line(line_no) + "field '" + path + "': must be finite");
    }
    return v;
}

inline double logprob_value(const nlohmann::json& j, const std::string& path,
                            std::size_t line_no) {
    const double v = finite_number(j, path, line_no);
    if (v > 0.0) {
        throw ValidationError(at_line(line_no) + "field '" + path +
                              "': logprob must be <= 0, got " + j.dump());
    }
    return v;
}

inline double green_value(const nlohmann::json& j, std::size_t line_no) {
    const double v = finite_number(j, "green_score", line_no);
    if (v < 0.0 || v > 1.0) {
        throw ValidationError(at_line(line_no) +
                              "field 'green_score': must be in [0,1], got " + j.dump());
    }
    return v;
}

inline const nlohmann::json& require_field(const nlohmann::json& record, const char* name,
                                           std::size_t line_no) {
    auto it = record.find(name);
    if (it == record.end()) {
        throw ValidationError(at_line(line_no) + "missing field '" + std::string(name) + "'");
    }
    return *it;
}

inline void check_schema_version(const nlohmann::json& record, std::size_t line_no) {
    const auto& v = require_field(record, "schema_version", line_no);
    if (!v.is_number_integer() || v.get<std::int64_t>() != kSchemaVersion) {
        throw ValidationError(at_line(line_no) + "unsupported schema_version " + v.dump() +
                              " (supported: " + std::to_string(kSchemaVersion) + ")");
    }
}

inline std::string sample_id_field(const nlohmann::json& record, std::size_t line_no) {
    const auto& v = require_field(record, "sample_id", line_no);
    if (!v.is_string() || v.get<std::string>().empty()) {
        throw ValidationError(at_line(line_no) + "field 'sample_id': expected a non-empty string");
    }
    return v.get<std::string>();
}

inline void reject_unknown_fields(const nlohmann::json& record,
                                  const std::vector<std::string>& known, std::size_t line_no) {
    for (auto it = record.begin(); it != record.end(); ++it) {
        bool ok = false;
        for (const auto& k : known) {
            if (it.key() == k) { ok = true; break; }
        }
        if (!ok) {
            throw ValidationError(at_line(line_no) + "unknown field '" + it.key() + "'");
        }
    }
}

inline nlohmann::json parse_line(const std::string& line, std::size_t line_no) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(at_line(line_no) + "malformed JSON: " + e.what());
    }
    if (!j.is_object()) {
        throw ValidationError(at_line(line_no) + "record must be a JSON object");
    }
    return j;
}

inline bool blank(const std::string& line) {
    return line.find_first_not_of(" \t\r") == std::string::npos;
}

// Calls fn(line_contents, line_no) for every non-blank line.
template <typename Fn>
void for_each_line(std::istream& in, Fn&& fn) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (blank(line)) continue;
        fn(line, line_no);
    }
    if (in.bad()) {
        throw IoError("stream read failure at line " + std::to_string(line_no));
    }
}

inline void flush_or_throw(std::ostream& os) {
    os.flush();
    if (!os) throw IoError("stream write failure");
}

} // namespace detail

inline TraceRecord parse_trace_record(const nlohmann::json& j, std::size_t line_no) {
    detail::reject_unknown_fields(j,
                                  {"schema_version", "sample_id", "tokens", "logprobs_mm",
                                   "logprobs_text", "green_score", "label", "meta"},
                                  line_no);
    detail::check_schema_version(j, line_no);

    TraceRecord rec;
    rec.sample_id = detail::sample_id_field(j, line_no);

    const auto& tokens = detail::require_field(j, "tokens", line_no);
    if (!tokens.is_array()) {
        throw ValidationError(detail::at_line(line_no) + "field 'tokens': expected an array");
    }
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (!tokens[i].is_string()) {
            throw ValidationError(detail::at_line(line_no) + "field 'tokens[" +
                                  std::to_string(i) + "]': expected a string");
        }
        rec.tokens.push_back(tokens[i].get<std::string>());
    }

    for (const char* name : {"logprobs_mm", "logprobs_text"}) {
        const auto& arr = detail::require_field(j, name, line_no);
        if (!arr.is_array()) {
            throw ValidationError(detail::at_line(line_no) + "field '" + std::string(name) +
                                  "': expected an array");
        }
        auto& dst = std::string(name) == "logprobs_mm" ? rec.logprobs_mm : rec.logprobs_text;
        for (std::size_t i = 0; i < arr.size(); ++i) {
            dst.push_back(detail::logprob_value(arr[i], std::string(name) + "[" +
                                                std::to_string(i) + "]", line_no));
        }
    }

    if (rec.tokens.empty()) {
        throw ValidationError(detail::at_line(line_no) + "record must have at least one token");
    }
    if (rec.tokens.size() != rec.logprobs_mm.size() ||
        rec.tokens.size() != rec.logprobs_text.size()) {
        throw ValidationError(detail::at_line(line_no) + "length mismatch: tokens=" +
                              std::to_string(rec.tokens.size()) + " logprobs_mm=" +
                              std::to_string(rec.logprobs_mm.size()) + " logprobs_text=" +
                              std::to_string(rec.logprobs_text.size()));
    }

    if (auto it = j.find("green_score"); it != j.end() && !it->is_null()) {
        rec.green_score = detail::green_value(*it, line_no);
    }
    if (auto it = j.find("label"); it != j.end() && !it->is_null()) {
        if (!it->is_boolean()) {
            throw ValidationError(detail::at_line(line_no) + "field 'label': expected a boolean");
        }
        rec.label = it->get<bool>();
    }
    if (auto it = j.find("meta"); it != j.end() && !it->is_null()) {
        if (!it->is_object()) {
            throw ValidationError(detail::at_line(line_no) + "field 'meta': expected an object");
        }
        for (auto m = it->begin(); m != it->end(); ++m) {
            if (!m.value().is_string()) {
                throw ValidationError(detail::at_line(line_no) + "field 'meta." + m.key() +
                                      "': expected a string");
            }
            rec.meta[m.key()] = m.value().get<std::string>();
        }
    }
    return rec;
}

inline SamplePair to_pair(const TraceRecord& rec) {
    SamplePair pair;
    pair.sample_id = rec.sample_id;
    pair.multimodal = TokenTrace{rec.tokens, rec.logprobs_mm, Condition::Multimodal};
    pair.text_only = TokenTrace{rec.tokens, rec.logprobs_text, Condition::TextOnly};
    pair.green_score = rec.green_score;
    pair.label = rec.label;
    return pair;
}

inline TraceRecord to_record(const SamplePair& pair) {
    TraceRecord rec;
    rec.sample_id = pair.sample_id;
    rec.tokens = pair.multimodal.tokens;
    rec.logprobs_mm = pair.multimodal.logprobs;
    rec.logprobs_text = pair.text_only.logprobs;
    rec.green_score = pair.green_score;
    rec.label = pair.label;
    return rec;
}

inline std::vector<TraceRecord> read_trace_records(std::istream& in) {
    std::vector<TraceRecord> records;
    std::map<std::string, std::size_t> first_seen;
    detail::for_each_line(in, [&](const std::string& line, std::size_t line_no) {
        TraceRecord rec = parse_trace_record(detail::parse_line(line, line_no), line_no);
        auto [it, inserted] = first_seen.emplace(rec.sample_id, line_no);
        if (!inserted) {
            throw ValidationError(detail::at_line(line_no) + "duplicate sample_id '" +
                                  rec.sample_id + "' (first seen at line " +
                                  std::to_string(it->second) + ")");
        }
        records.push_back(std::move(rec));
    });
    return records;
}

// Validated pairs in file order. Record meta is file-level payload; the
// scoring view drops it (use read_trace_records to keep it).
inline std::vector<SamplePair> read_corpus(std::istream& in) {
    std::vector<SamplePair> pairs;
    for (const TraceRecord& rec : read_trace_records(in)) {
        SamplePair pair = to_pair(rec);
        validate(pair); // belt and braces: nothing invalid reaches scoring
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

inline void write_record(const TraceRecord& rec, std::ostream& os) {
    nlohmann::ordered_json j;
    j["schema_version"] = rec.schema_version;
    j["sample_id"] = rec.sample_id;
    j["tokens"] = rec.tokens;
    j["logprobs_mm"] = rec.logprobs_mm;
    j["logprobs_text"] = rec.logprobs_text;
    if (rec.green_score) j["green_score"] = *rec.green_score;
    if (rec.label) j["label"] = *rec.label;
    if (!rec.meta.empty()) j["meta"] = rec.meta;
    os << j.dump() << '\n';
}

inline void write_corpus(const std::vector<SamplePair>& pairs, std::ostream& os) {
    for (const SamplePair& pair : pairs) {
        write_record(to_record(pair), os);
    }
    detail::flush_or_throw(os);
}

// --------------------------------------------------------------------------
// Score files.

inline void write_score_record(const ScoredSample& s, std::ostream& os) {
    nlohmann::ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["sample_id"] = s.scores.sample_id;
    j["sigma"] = s.scores.sigma;
    j["gain"] = s.scores.gain;
    j["evidence"] = s.scores.evidence;
    j["cebag"] = s.scores.cebag;
    j["avgprob_neg"] = s.scores.avgprob_neg;
    j["length"] = s.scores.length;
    if (s.green_score) j["green_score"] = *s.green_score;
    if (s.label) j["label"] = *s.label;
    os << j.dump() << '\n';
}

inline void write_scores(const std::vector<ScoredSample>& scores, std::ostream& os) {
    for (const ScoredSample& s : scores) write_score_record(s, os);
    detail::flush_or_throw(os);
}

inline void write_scores(const std::vector<DetectorScores>& scores, std::ostream& os) {
    for (const DetectorScores& s : scores) write_score_record(ScoredSample{s, {}, {}}, os);
    detail::flush_or_throw(os);
}

inline ScoredSample parse_score_record(const nlohmann::json& j, std::size_t line_no) {
    detail::reject_unknown_fields(j,
                                  {"schema_version", "sample_id", "sigma", "gain", "evidence",
                                   "cebag", "avgprob_neg", "length", "green_score", "label"},
                                  line_no);
    detail::check_schema_version(j, line_no);

    ScoredSample s;
    s.scores.sample_id = detail::sample_id_field(j, line_no);
    s.scores.sigma = detail::finite_number(detail::require_field(j, "sigma", line_no), "sigma", line_no);
    s.scores.gain = detail::finite_number(detail::require_field(j, "gain", line_no), "gain", line_no);
    s.scores.evidence =
        detail::finite_number(detail::require_field(j, "evidence", line_no), "evidence", line_no);
    s.scores.cebag = detail::finite_number(detail::require_field(j, "cebag", line_no), "cebag", line_no);
    s.scores.avgprob_neg = detail::finite_number(detail::require_field(j, "avgprob_neg", line_no),
                                                 "avgprob_neg", line_no);

    const auto& len = detail::require_field(j, "length", line_no);
    if (!len.is_number_integer() || len.get<std::int64_t>() < 1) {
        throw ValidationError(detail::at_line(line_no) +
                              "field 'length': expected a positive integer");
    }
    s.scores.length = len.get<std::size_t>();

    if (s.scores.sigma < 0.0) {
        throw ValidationError(detail::at_line(line_no) + "field 'sigma': must be >= 0");
    }
    if (s.scores.avgprob_neg < -1.0 || s.scores.avgprob_neg > 0.0) {
        throw ValidationError(detail::at_line(line_no) + "field 'avgprob_neg': must be in [-1,0]");
    }
    const double expect_evidence = std::abs(s.scores.gain) / static_cast<double>(s.scores.length);
    if (s.scores.evidence != expect_evidence) {
        throw ValidationError(detail::at_line(line_no) +
                              "field 'evidence': inconsistent with |gain|/length");
    }
    if (ulp_distance(s.scores.cebag, s.scores.sigma * (1.0 + s.scores.evidence)) > 1) {
        throw ValidationError(detail::at_line(line_no) +
                              "field 'cebag': inconsistent with sigma*(1+evidence)");
    }

    if (auto it = j.find("green_score"); it != j.end() && !it->is_null()) {
        s.green_score = detail::green_value(*it, line_no);
    }
    if (auto it = j.find("label"); it != j.end() && !it->is_null()) {
        if (!it->is_boolean()) {
            throw ValidationError(detail::at_line(line_no) + "field 'label': expected a boolean");
        }
        s.label = it->get<bool>();
    }
    return s;
}

inline std::vector<ScoredSample> read_scores(std::istream& in) {
    std::vector<ScoredSample> scores;
    std::map<std::string, std::size_t> first_seen;
    detail::for_each_line(in, [&](const std::string& line, std::size_t line_no) {
        ScoredSample s = parse_score_record(detail::parse_line(line, line_no), line_no);
        auto [it, inserted] = first_seen.emplace(s.scores.sample_id, line_no);
        if (!inserted) {
            throw ValidationError(detail::at_line(line_no) + "duplicate sample_id '" +
                                  s.scores.sample_id + "' (first seen at line " +
                                  std::to_string(it->second) + ")");
        }
        scores.push_back(std::move(s));
    });
    return scores;
}

// --------------------------------------------------------------------------
// External detector score lists: {"sample_id": ..., "score": ...} per line.

inline std::vector<std::pair<std::string, double>> read_external_scores(std::istream& in) {
    std::vector<std::pair<std::string, double>> scores;
    std::map<std::string, std::size_t> first_seen;
    detail::for_each_line(in, [&](const std::string& line, std::size_t line_no) {
        const nlohmann::json j = detail::parse_line(line, line_no);
        detail::reject_unknown_fields(j, {"sample_id", "score"}, line_no);
        const std::string id = detail::sample_id_field(j, line_no);
        const double score =
            detail::finite_number(detail::require_field(j, "score", line_no), "score", line_no);
        auto [it, inserted] = first_seen.emplace(id, line_no);
        if (!inserted) {
            throw ValidationError(detail::at_line(line_no) + "duplicate sample_id '" + id +
                                  "' (first seen at line " + std::to_string(it->second) + ")");
        }
        scores.emplace_back(id, score);
    });
    return scores;
}

// --------------------------------------------------------------------------
// Synthetic-corpus spec files (single JSON document, not line-delimited).

inline synth::SyntheticSpec read_synthetic_spec(std::istream& in) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("synthetic spec: malformed JSON: ") + e.what());
    }
    if (!j.is_object()) {
        throw ValidationError("synthetic spec: expected a JSON object");
    }
    auto params = [&](const char* name) {
        const auto& p = detail::require_field(j, name, 1);
        if (!p.is_object()) {
            throw ValidationError(std::string("synthetic spec: field '") + name +
                                  "': expected an object");
        }
        synth::ClassParams out;
        out.logprob_mean =
            detail::finite_number(detail::require_field(p, "logprob_mean", 1),
                                  std::string(name) + ".logprob_mean", 1);
        out.logprob_std = detail::finite_number(detail::require_field(p, "logprob_std", 1),
                                                std::string(name) + ".logprob_std", 1);
        out.gain_per_token_mean =
            detail::finite_number(detail::require_field(p, "gain_per_token_mean", 1),
                                  std::string(name) + ".gain_per_token_mean", 1);
        return out;
    };
    synth::SyntheticSpec spec;
    const auto& seed = detail::require_field(j, "seed", 1);
    if (!seed.is_number_integer()) {
        throw ValidationError("synthetic spec: field 'seed': expected an integer");
    }
    spec.seed = seed.get<std::uint64_t>();
    for (const char* name : {"n_grounded", "n_hallucinated"}) {
        const auto& v = detail::require_field(j, name, 1);
        if (!v.is_number_integer() || v.get<std::int64_t>() < 1) {
            throw ValidationError(std::string("synthetic spec: field '") + name +
                                  "': expected a positive integer");
        }
        (std::string(name) == "n_grounded" ? spec.n_grounded : spec.n_hallucinated) =
            v.get<std::size_t>();
    }
    const auto& range = detail::require_field(j, "length_range", 1);
    if (!range.is_array() || range.size() != 2 || !range[0].is_number_integer() ||
        !range[1].is_number_integer()) {
        throw ValidationError("synthetic spec: field 'length_range': expected [min, max]");
    }
    spec.length_range = {range[0].get<std::size_t>(), range[1].get<std::size_t>()};
    spec.grounded_params = params("grounded_params");
    spec.hallucinated_params = params("hallucinated_params");
    spec.green_coupling = detail::finite_number(detail::require_field(j, "green_coupling", 1),
                                                "green_coupling", 1);
    synth::validate(spec);
    return spec;
}

inline void write_synthetic_spec(const synth::SyntheticSpec& spec, std::ostream& os) {
    nlohmann::ordered_json j;
    j["seed"] = spec.seed;
    j["n_grounded"] = spec.n_grounded;
    j["n_hallucinated"] = spec.n_hallucinated;
    j["length_range"] = {spec.length_range.first, spec.length_range.second};
    for (auto [name, p] : {std::pair{"grounded_params", &spec.grounded_params},
                           std::pair{"hallucinated_params", &spec.hallucinated_params}}) {
        nlohmann::ordered_json pj;
        pj["logprob_mean"] = p->logprob_mean;
        pj["logprob_std"] = p->logprob_std;
        pj["gain_per_token_mean"] = p->gain_per_token_mean;
        j[name] = pj;
    }
    j["green_coupling"] = spec.green_coupling;
    os << j.dump(2) << '\n';
    detail::flush_or_throw(os);
}

} // namespace cebag::io
