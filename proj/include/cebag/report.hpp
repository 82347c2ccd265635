#pragma once

// Rendering of evaluation results: aligned text tables for humans, CSV and
// JSON twins for machines. The twins carry the same numbers as the tables
// (percentages rounded to one decimal) next to the full-precision fractions,
// so nothing diverges between the two views.

#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cebag/errors.hpp"
#include "cebag/metrics.hpp"

namespace cebag::report {

inline constexpr int kReportSchemaVersion = 1;

// Fraction -> "67.9" (percent, one decimal).
inline std::string pct(double fraction) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", fraction * 100.0);
    return buf;
}

// Shortest decimal that parses back to the same double; matches the JSON
// serialization of the same value.
inline std::string num(double value) {
    return nlohmann::json(value).dump();
}

namespace detail {

inline std::string pad(const std::string& s, std::size_t width, bool left = true) {
    if (s.size() >= width) return s;
    const std::string fill(width - s.size(), ' ');
    return left ? s + fill : fill + s;
}

} // namespace detail

inline std::string render_eval_table(const std::vector<EvalReport>& reports) {
    std::size_t name_w = 8;
    for (const auto& r : reports) name_w = std::max(name_w, r.detector_name.size());
    std::string out = detail::pad("detector", name_w + 2) + detail::pad("AUC%", 7, false) +
                      detail::pad("AUG%", 7, false) + detail::pad("n_pos", 8, false) +
                      detail::pad("n_neg", 8, false) + detail::pad("best_lambda", 13, false) +
                      "\n";
    for (const auto& r : reports) {
        out += detail::pad(r.detector_name, name_w + 2);
        out += detail::pad(pct(r.auc), 7, false);
        out += detail::pad(pct(r.aug), 7, false);
        out += detail::pad(std::to_string(r.n_positive), 8, false);
        out += detail::pad(std::to_string(r.n_negative), 8, false);
        out += detail::pad(r.best_lambda ? num(*r.best_lambda) : "-", 13, false);
        out += "\n";
    }
    if (!reports.empty()) {
        const auto& cfg = reports.front().config;
        out += "# aug = " + std::string(aug_definition()) + "\n";
        out += "# green_threshold=" + num(cfg.green_threshold) + " stability_grid=";
        for (std::size_t i = 0; i < cfg.stability_grid.size(); ++i) {
            out += (i ? "," : "") + num(cfg.stability_grid[i]);
        }
        out += " lambda_grid=";
        for (std::size_t i = 0; i < cfg.lambda_grid.size(); ++i) {
            out += (i ? "," : "") + num(cfg.lambda_grid[i]);
        }
        out += "\n";
    }
    return out;
}

inline std::string render_eval_csv(const std::vector<EvalReport>& reports) {
    std::string out = "detector,auc,auc_pct,aug,aug_pct,n_positive,n_negative,best_lambda\n";
    for (const auto& r : reports) {
        out += r.detector_name + "," + num(r.auc) + "," + pct(r.auc) + "," + num(r.aug) + "," +
               pct(r.aug) + "," + std::to_string(r.n_positive) + "," +
               std::to_string(r.n_negative) + "," +
               (r.best_lambda ? num(*r.best_lambda) : "") + "\n";
    }
    return out;
}

inline nlohmann::ordered_json eval_reports_to_json(const std::vector<EvalReport>& reports) {
    nlohmann::ordered_json j;
    j["schema_version"] = kReportSchemaVersion;
    j["aug_definition"] = aug_definition();
    if (!reports.empty()) {
        const auto& cfg = reports.front().config;
        j["config"] = {{"green_threshold", cfg.green_threshold},
                       {"stability_grid", cfg.stability_grid},
                       {"lambda_grid", cfg.lambda_grid}};
        j["n_samples"] = reports.front().n_positive + reports.front().n_negative;
    }
    nlohmann::ordered_json detectors = nlohmann::json::array();
    for (const auto& r : reports) {
        nlohmann::ordered_json d;
        d["name"] = r.detector_name;
        d["auc"] = r.auc;
        d["auc_pct"] = pct(r.auc);
        d["aug"] = r.aug;
        d["aug_pct"] = pct(r.aug);
        d["n_positive"] = r.n_positive;
        d["n_negative"] = r.n_negative;
        nlohmann::ordered_json stability = nlohmann::json::array();
        for (const auto& point : r.stability) {
            nlohmann::ordered_json p;
            p["green_threshold"] = point.green_threshold;
            if (point.auc) {
                p["auc"] = *point.auc;
            } else {
                p["auc"] = nullptr;
            }
            stability.push_back(p);
        }
        d["stability"] = stability;
        if (r.best_lambda) d["best_lambda"] = *r.best_lambda;
        detectors.push_back(d);
    }
    j["detectors"] = detectors;
    return j;
}

inline std::vector<EvalReport> eval_reports_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("schema_version") ||
        !j["schema_version"].is_number_integer() ||
        j["schema_version"].get<int>() != kReportSchemaVersion) {
        throw ValidationError("report: missing or unsupported schema_version (supported: " +
                              std::to_string(kReportSchemaVersion) + ")");
    }
    if (!j.contains("detectors") || !j["detectors"].is_array()) {
        throw ValidationError("report: missing 'detectors' array");
    }
    EvalConfig cfg;
    if (j.contains("config") && j["config"].is_object()) {
        const auto& c = j["config"];
        if (c.contains("green_threshold")) cfg.green_threshold = c["green_threshold"].get<double>();
        if (c.contains("stability_grid")) {
            cfg.stability_grid = c["stability_grid"].get<std::vector<double>>();
        }
        if (c.contains("lambda_grid")) cfg.lambda_grid = c["lambda_grid"].get<std::vector<double>>();
    }
    std::vector<EvalReport> reports;
    for (const auto& d : j["detectors"]) {
        EvalReport r;
        try {
            r.detector_name = d.at("name").get<std::string>();
            r.auc = d.at("auc").get<double>();
            r.aug = d.at("aug").get<double>();
            r.n_positive = d.at("n_positive").get<std::size_t>();
            r.n_negative = d.at("n_negative").get<std::size_t>();
            for (const auto& p : d.at("stability")) {
                StabilityPoint point;
                point.green_threshold = p.at("green_threshold").get<double>();
                if (!p.at("auc").is_null()) point.auc = p.at("auc").get<double>();
                r.stability.push_back(point);
            }
            if (d.contains("best_lambda")) r.best_lambda = d["best_lambda"].get<double>();
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(std::string("report: malformed detector entry: ") + e.what());
        }
        r.config = cfg;
        reports.push_back(std::move(r));
    }
    return reports;
}

inline std::string render_stability_table(const std::string& detector,
                                          const std::vector<StabilityPoint>& points) {
    std::string out = "stability sweep (detector = " + detector + ")\n";
    out += detail::pad("green_threshold", 17) + detail::pad("AUC%", 10, false) + "\n";
    for (const auto& point : points) {
        out += detail::pad(num(point.green_threshold), 17);
        out += detail::pad(point.auc ? pct(*point.auc) : "degenerate", 10, false);
        out += "\n";
    }
    return out;
}

inline std::string render_stability_csv(const std::vector<StabilityPoint>& points) {
    std::string out = "green_threshold,auc,auc_pct,status\n";
    for (const auto& point : points) {
        out += num(point.green_threshold) + ",";
        out += point.auc ? num(*point.auc) + "," + pct(*point.auc) + ",ok" : ",,degenerate";
        out += "\n";
    }
    return out;
}

inline std::string render_lambda_table(const std::vector<LambdaSweepRow>& rows) {
    std::string out = "lambda sweep (score = sigma_hat + lambda * evidence_hat, min-max "
                      "normalized per corpus)\n";
    out += detail::pad("lambda", 9) + detail::pad("AUC%", 8, false) + detail::pad("best", 7, false) +
           "\n";
    for (const auto& row : rows) {
        out += detail::pad(num(row.lambda), 9);
        out += detail::pad(pct(row.auc), 8, false);
        out += detail::pad(row.best ? "*" : "", 7, false);
        out += "\n";
    }
    return out;
}

inline std::string render_lambda_csv(const std::vector<LambdaSweepRow>& rows) {
    std::string out = "lambda,auc,auc_pct,is_best\n";
    for (const auto& row : rows) {
        out += num(row.lambda) + "," + num(row.auc) + "," + pct(row.auc) + "," +
               (row.best ? "1" : "0") + "\n";
    }
    return out;
}

} // namespace cebag::report
