#pragma once

// Single-binary command-line surface: collect, score, eval, sweep, synth,
// pmi-check, report. Every subcommand is deterministic given its inputs and
// flags (collect excepted when pointed at a live endpoint).
//
// Exit codes are stable: 0 ok, 1 internal error, 2 invalid input or I/O
// failure, 3 degenerate evaluation (single-class labels), 4 endpoint lacks a
// required capability, 5 collection finished with per-task failures.

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cebag/collector.hpp"
#include "cebag/errors.hpp"
#include "cebag/metrics.hpp"
#include "cebag/report.hpp"
#include "cebag/scoring.hpp"
#include "cebag/synthetic.hpp"
#include "cebag/trace_io.hpp"

namespace cebag::cli {

inline constexpr int kOk = 0;
inline constexpr int kInternalError = 1;
inline constexpr int kInvalidInput = 2;
inline constexpr int kDegenerateEval = 3;
inline constexpr int kIncapableEndpoint = 4;
inline constexpr int kPartialFailure = 5;

namespace detail {

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open input '" + path + "'");
    return in;
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open output '" + path + "'");
    out << content;
    out.flush();
    if (!out) throw IoError("write failure on '" + path + "'");
}

// Accepts either a trace corpus or a scores file; the first record decides.
inline std::vector<ScoredSample> load_scored_any(const std::string& path) {
    bool is_corpus = false, is_scores = false;
    {
        auto in = open_input(path);
        std::string line;
        while (std::getline(in, line)) {
            if (io::detail::blank(line)) continue;
            const auto j = io::detail::parse_line(line, 1);
            is_corpus = j.contains("logprobs_mm");
            is_scores = j.contains("sigma");
            break;
        }
    }
    auto in = open_input(path);
    if (is_corpus) {
        std::vector<ScoredSample> scored;
        for (const auto& pair : io::read_corpus(in)) {
            scored.push_back(ScoredSample{score_sample(pair), pair.green_score, pair.label});
        }
        return scored;
    }
    if (is_scores) return io::read_scores(in);
    if (in.peek() == std::ifstream::traits_type::eof()) return {};
    throw ValidationError("'" + path +
                          "': unrecognized record shape (expected a trace corpus or a scores "
                          "file)");
}

// Per-sample scores of one named detector; cebag_lambda resolves to the
// best grid lambda at the primary threshold.
inline std::vector<std::pair<std::string, double>>
detector_column(const std::vector<ScoredSample>& scored, const std::string& name,
                const EvalConfig& cfg) {
    std::vector<DetectorScores> det;
    det.reserve(scored.size());
    for (const auto& s : scored) det.push_back(s.scores);

    double DetectorScores::*field = nullptr;
    if (name == "cebag") field = &DetectorScores::cebag;
    else if (name == "sigma_only") field = &DetectorScores::sigma;
    else if (name == "evidence_only") field = &DetectorScores::evidence;
    else if (name == "avgprob") field = &DetectorScores::avgprob_neg;
    else if (name == "cebag_lambda") {
        const auto rows = lambda_sweep(scored, cfg);
        double best = 0.0;
        for (const auto& row : rows) {
            if (row.best) best = row.lambda;
        }
        return cebag_lambda_scores(det, best);
    } else {
        throw ValidationError("unknown detector '" + name +
                              "' (known: avgprob, cebag, cebag_lambda, evidence_only, "
                              "sigma_only)");
    }
    std::vector<std::pair<std::string, double>> col;
    col.reserve(det.size());
    for (const auto& s : det) col.emplace_back(s.sample_id, s.*field);
    return col;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Subcommand options and implementations.

struct ScoreOptions {
    std::string in;
    std::string out;
};

inline int cmd_score(const ScoreOptions& opt, std::ostream& out) {
    auto in = detail::open_input(opt.in);
    const auto pairs = io::read_corpus(in);
    std::vector<ScoredSample> scored;
    scored.reserve(pairs.size());
    for (const auto& pair : pairs) {
        scored.push_back(ScoredSample{score_sample(pair), pair.green_score, pair.label});
    }
    std::ofstream sink(opt.out, std::ios::binary | std::ios::trunc);
    if (!sink) throw IoError("cannot open output '" + opt.out + "'");
    io::write_scores(scored, sink);
    out << "scored " << scored.size() << " samples -> " << opt.out << "\n";
    return kOk;
}

struct EvalOptions {
    std::string in;
    double green_threshold = 1.0;
    std::vector<std::string> detectors;          // empty = all
    std::vector<std::string> external;           // name=path
    std::string report_path = "eval_report.json";
};

inline int cmd_eval(const EvalOptions& opt, std::ostream& out) {
    const auto scored = detail::load_scored_any(opt.in);
    EvalConfig cfg;
    cfg.green_threshold = opt.green_threshold;

    std::map<std::string, std::vector<std::pair<std::string, double>>> external;
    for (const auto& spec : opt.external) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
            throw ValidationError("--external expects name=path, got '" + spec + "'");
        }
        const std::string name = spec.substr(0, eq);
        if (external.count(name)) {
            throw ValidationError("--external: duplicate detector name '" + name + "'");
        }
        auto in = detail::open_input(spec.substr(eq + 1));
        external[name] = io::read_external_scores(in);
    }

    auto reports = evaluate_scored(scored, external, cfg);
    if (!opt.detectors.empty()) {
        for (const auto& want : opt.detectors) {
            const bool known = std::any_of(reports.begin(), reports.end(), [&](const EvalReport& r) {
                return r.detector_name == want;
            });
            if (!known) throw ValidationError("unknown detector '" + want + "'");
        }
        std::vector<EvalReport> kept;
        for (auto& r : reports) {
            if (std::find(opt.detectors.begin(), opt.detectors.end(), r.detector_name) !=
                opt.detectors.end()) {
                kept.push_back(std::move(r));
            }
        }
        reports = std::move(kept);
    }

    out << report::render_eval_table(reports);
    if (!opt.report_path.empty()) {
        detail::write_file(opt.report_path, report::eval_reports_to_json(reports).dump(2) + "\n");
    }
    return kOk;
}

struct SweepOptions {
    std::string in;
    std::vector<double> thresholds = {0.4, 0.5, 0.6, 0.7, 0.8};
    std::vector<double> lambda_grid = default_lambda_grid();
    std::string detector = "cebag";
    double green_threshold = 1.0;
    std::string stability_csv = "sweep_stability.csv";
    std::string lambda_csv = "sweep_lambda.csv";
};

inline int cmd_sweep(const SweepOptions& opt, std::ostream& out) {
    const auto scored = detail::load_scored_any(opt.in);
    if (scored.empty()) throw ValidationError("sweep: empty corpus");
    for (const auto& s : scored) {
        if (!s.green_score) {
            throw ValidationError("sweep requires a green score on every sample; '" +
                                  s.scores.sample_id + "' has none");
        }
    }
    EvalConfig cfg;
    cfg.green_threshold = opt.green_threshold;
    cfg.stability_grid = opt.thresholds;
    cfg.lambda_grid = opt.lambda_grid;

    const auto column = detail::detector_column(scored, opt.detector, cfg);
    std::vector<std::pair<std::string, double>> greens;
    greens.reserve(scored.size());
    for (const auto& s : scored) greens.emplace_back(s.scores.sample_id, *s.green_score);

    const auto stability = stability_sweep(column, greens, opt.thresholds);
    const auto lambda_rows = lambda_sweep(scored, cfg);

    out << report::render_stability_table(opt.detector, stability) << "\n"
        << report::render_lambda_table(lambda_rows);
    detail::write_file(opt.stability_csv, report::render_stability_csv(stability));
    detail::write_file(opt.lambda_csv, report::render_lambda_csv(lambda_rows));
    return kOk;
}

struct CollectOptions {
    std::string tasks;
    std::string endpoint;
    std::string model;
    std::string out;
    std::string api_key_file; // the key itself never appears on the command line
    int max_in_flight = 4;
    int retry_budget = 2;
    long timeout_ms = 30000;
    bool resume = false;
    bool log_bodies = false;
};

inline int cmd_collect(const CollectOptions& opt, std::ostream& out, std::ostream& err) {
    auto tasks_in = detail::open_input(opt.tasks);
    const auto tasks = collect::read_tasks(tasks_in);

    collect::EndpointConfig cfg;
    cfg.base_url = opt.endpoint;
    cfg.model_name = opt.model;
    cfg.timeout = std::chrono::milliseconds(opt.timeout_ms);
    cfg.max_in_flight = opt.max_in_flight;
    cfg.retry_budget = opt.retry_budget;
    cfg.log_bodies = opt.log_bodies;
    if (!opt.api_key_file.empty()) {
        auto key_in = detail::open_input(opt.api_key_file);
        std::string key;
        std::getline(key_in, key);
        while (!key.empty() && (key.back() == '\r' || key.back() == ' ')) key.pop_back();
        if (key.empty()) {
            throw ValidationError("api key file '" + opt.api_key_file + "' is empty");
        }
        cfg.api_key = key;
    } else if (const char* key = std::getenv("CEBAG_API_KEY"); key != nullptr && *key != '\0') {
        cfg.api_key = std::string(key);
    }

    collect::RequestLog log(&err, opt.log_bodies);
    const auto report = collect::collect_batch(tasks, cfg, opt.out, opt.resume, &out, &log);
    out << "completed=" << report.n_completed << " skipped=" << report.n_skipped
        << " failed=" << report.failures.size() << "\n";
    for (const auto& f : report.failures) {
        err << "failed task " << f.sample_id << " stage=" << f.stage << ": " << f.reason << "\n";
    }
    return report.failures.empty() ? kOk : kPartialFailure;
}

struct SynthOptions {
    std::string preset;
    std::string spec_path;
    std::string out;
};

inline int cmd_synth(const SynthOptions& opt, std::ostream& out) {
    if (opt.preset.empty() == opt.spec_path.empty()) {
        throw ValidationError("synth: exactly one of --preset and --spec is required");
    }
    synth::SyntheticSpec spec;
    if (!opt.preset.empty()) {
        spec = synth::preset(opt.preset);
    } else {
        auto in = detail::open_input(opt.spec_path);
        spec = io::read_synthetic_spec(in);
    }
    const auto corpus = synth::generate_corpus(spec);
    std::ofstream sink(opt.out, std::ios::binary | std::ios::trunc);
    if (!sink) throw IoError("cannot open output '" + opt.out + "'");
    io::write_corpus(corpus, sink);
    out << "wrote " << corpus.size() << " records -> " << opt.out << "\n";
    return kOk;
}

struct PmiCheckOptions {
    int size = 16;
    int trials = 100;
    std::uint64_t seed = 7;
};

// Draws random strictly positive joint tables with dimensions in [2, size]
// and verifies the two gain routes agree on every cell.
inline int cmd_pmi_check(const PmiCheckOptions& opt, std::ostream& out) {
    if (opt.size < 2 || opt.size > 64) {
        throw ValidationError("pmi-check: --size must be in [2, 64]");
    }
    if (opt.trials < 1) {
        throw ValidationError("pmi-check: --trials must be >= 1");
    }
    synth::Rng rng(opt.seed);
    double max_delta = 0.0;
    std::size_t cells = 0;
    for (int t = 0; t < opt.trials; ++t) {
        const std::size_t rows = 2 + rng.below(static_cast<std::uint64_t>(opt.size) - 1);
        const std::size_t cols = 2 + rng.below(static_cast<std::uint64_t>(opt.size) - 1);
        const auto model = synth::DiscreteBayesModel::random(rng, rows, cols);
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t r = 0; r < cols; ++r) {
                auto res = synth::pmi_check(model, i, r);
#ifdef CEBAG_PMI_CORRUPT_FOR_TESTS
                res.gain += 5e-12; // negative control: force a visible violation
#endif
                max_delta = std::max(max_delta, std::abs(res.gain - res.pmi));
                ++cells;
            }
        }
    }
    const bool ok = max_delta <= 1e-12;
    char delta_str[32];
    std::snprintf(delta_str, sizeof(delta_str), "%.3e", max_delta);
    out << "pmi-check: trials=" << opt.trials << " cells=" << cells << " max|gain-pmi|="
        << delta_str << " tolerance=1.0e-12 -> " << (ok ? "PASS" : "FAIL") << "\n";
    return ok ? kOk : kInternalError;
}

struct ReportOptions {
    std::string in;
    std::string csv;
};

inline int cmd_report(const ReportOptions& opt, std::ostream& out) {
    auto in = detail::open_input(opt.in);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("report: malformed JSON: ") + e.what());
    }
    const auto reports = report::eval_reports_from_json(j);
    out << report::render_eval_table(reports);
    if (!opt.csv.empty()) {
        detail::write_file(opt.csv, report::render_eval_csv(reports));
    }
    return kOk;
}

// ---------------------------------------------------------------------------

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"hallucination detection from paired (with-image / text-only) "
                 "log-probability traces"};
    app.name("cebag");
    app.require_subcommand(1);

    ScoreOptions score_opt;
    auto* score = app.add_subcommand("score", "compute detector scores for a trace corpus");
    score->add_option("--in", score_opt.in, "trace corpus (jsonl)")->required();
    score->add_option("--out", score_opt.out, "scores file to write (jsonl)")->required();

    EvalOptions eval_opt;
    auto* eval = app.add_subcommand("eval", "evaluate detectors against reference labels");
    eval->add_option("--in", eval_opt.in, "trace corpus or scores file (jsonl)")->required();
    eval->add_option("--green-threshold", eval_opt.green_threshold,
                     "label = green score strictly below this")->capture_default_str();
    eval->add_option("--detectors", eval_opt.detectors, "comma-separated detector subset")
        ->delimiter(',');
    eval->add_option("--external", eval_opt.external,
                     "external detector scores as name=path (repeatable)");
    eval->add_option("--report", eval_opt.report_path, "machine-readable report path")
        ->capture_default_str();

    SweepOptions sweep_opt;
    auto* sweep = app.add_subcommand("sweep", "threshold-stability and lambda sweeps");
    sweep->add_option("--in", sweep_opt.in, "trace corpus or scores file (jsonl)")->required();
    sweep->add_option("--thresholds", sweep_opt.thresholds,
                      "green thresholds, strictly increasing")->delimiter(',');
    sweep->add_option("--lambda-grid", sweep_opt.lambda_grid, "lambda grid")->delimiter(',');
    sweep->add_option("--detector", sweep_opt.detector, "detector for the stability table")
        ->capture_default_str();
    sweep->add_option("--green-threshold", sweep_opt.green_threshold,
                      "labels for the lambda table")->capture_default_str();
    sweep->add_option("--stability-csv", sweep_opt.stability_csv, "stability CSV path")
        ->capture_default_str();
    sweep->add_option("--lambda-csv", sweep_opt.lambda_csv, "lambda CSV path")
        ->capture_default_str();

    CollectOptions collect_opt;
    auto* collect_cmd = app.add_subcommand("collect", "collect traces from an endpoint");
    collect_cmd->add_option("--tasks", collect_opt.tasks, "task file (jsonl)")->required();
    collect_cmd->add_option("--endpoint", collect_opt.endpoint, "base URL")->required();
    collect_cmd->add_option("--model", collect_opt.model, "model name")->required();
    collect_cmd->add_option("--out", collect_opt.out, "output corpus (jsonl)")->required();
    collect_cmd->add_option("--max-in-flight", collect_opt.max_in_flight,
                            "concurrent tasks")->capture_default_str();
    collect_cmd->add_option("--retry-budget", collect_opt.retry_budget,
                            "retries per request")->capture_default_str();
    collect_cmd->add_option("--timeout-ms", collect_opt.timeout_ms,
                            "per-request timeout")->capture_default_str();
    collect_cmd->add_option("--api-key-file", collect_opt.api_key_file,
                            "file holding the bearer token (else env CEBAG_API_KEY)");
    collect_cmd->add_flag("--resume", collect_opt.resume,
                          "skip sample ids already present in the output corpus");
    collect_cmd->add_flag("--log-bodies", collect_opt.log_bodies,
                          "log full request/response bodies instead of hashes");

    SynthOptions synth_opt;
    auto* synth_cmd = app.add_subcommand("synth", "generate a labeled synthetic corpus");
    synth_cmd->add_option("--preset", synth_opt.preset,
                          "named preset (separable, hard, label-noise)");
    synth_cmd->add_option("--spec", synth_opt.spec_path, "spec file (json)");
    synth_cmd->add_option("--out", synth_opt.out, "output corpus (jsonl)")->required();

    PmiCheckOptions pmi_opt;
    auto* pmi = app.add_subcommand("pmi-check",
                                   "verify the two evidence-gain routes agree numerically");
    pmi->add_option("--size", pmi_opt.size, "max table dimension")->capture_default_str();
    pmi->add_option("--trials", pmi_opt.trials, "number of random tables")->capture_default_str();
    pmi->add_option("--seed", pmi_opt.seed, "rng seed")->capture_default_str();

    ReportOptions report_opt;
    auto* report_cmd = app.add_subcommand("report", "render a saved evaluation report");
    report_cmd->add_option("--in", report_opt.in, "report file (json)")->required();
    report_cmd->add_option("--csv", report_opt.csv, "also write the table as CSV");

    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("cebag");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kInvalidInput;
    }

    try {
        if (app.got_subcommand(score)) return cmd_score(score_opt, out);
        if (app.got_subcommand(eval)) return cmd_eval(eval_opt, out);
        if (app.got_subcommand(sweep)) return cmd_sweep(sweep_opt, out);
        if (app.got_subcommand(collect_cmd)) return cmd_collect(collect_opt, out, err);
        if (app.got_subcommand(synth_cmd)) return cmd_synth(synth_opt, out);
        if (app.got_subcommand(pmi)) return cmd_pmi_check(pmi_opt, out);
        if (app.got_subcommand(report_cmd)) return cmd_report(report_opt, out);
        err << "error: no subcommand\n";
        return kInvalidInput;
    } catch (const DegenerateLabelsError& e) {
        err << "error: " << e.what() << "\n";
        return kDegenerateEval;
    } catch (const CapabilityError& e) {
        err << "error: " << e.what() << "\n";
        return kIncapableEndpoint;
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return kInvalidInput;
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return kInvalidInput;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return kInternalError;
    }
}

} // namespace cebag::cli
