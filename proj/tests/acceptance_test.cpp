// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. argv[1] must point at the cebag CLI binary (the determinism
// criterion runs it end to end).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "cebag/cebag.hpp"
#include "mock_endpoint.hpp"

using namespace cebag;
namespace fs = std::filesystem;

namespace {

std::string g_cli_bin;

struct Failure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& what) {
    if (!ok) throw Failure(what);
}

void require_runtime(std::chrono::steady_clock::time_point start, double budget_s) {
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    require(elapsed < budget_s, "runtime " + std::to_string(elapsed) + "s exceeds " +
                                    std::to_string(budget_s) + "s budget");
}

SamplePair random_pair(synth::Rng& rng, const std::string& id, std::size_t len) {
    SamplePair p;
    p.sample_id = id;
    p.multimodal.condition = Condition::Multimodal;
    p.text_only.condition = Condition::TextOnly;
    for (std::size_t j = 0; j < len; ++j) {
        p.multimodal.tokens.push_back("t" + std::to_string(j));
        p.multimodal.logprobs.push_back(-rng.uniform(0.0, 6.0));
        p.text_only.logprobs.push_back(-rng.uniform(0.0, 6.0));
    }
    p.text_only.tokens = p.multimodal.tokens;
    return p;
}

std::vector<LabeledScore> random_labeled(synth::Rng& rng, std::size_t n, bool tie_heavy) {
    std::vector<LabeledScore> items;
    for (std::size_t i = 0; i < n; ++i) {
        const double score =
            tie_heavy ? static_cast<double>(rng.below(6)) / 3.0 : rng.uniform(-2.0, 2.0);
        items.push_back(LabeledScore{"s" + std::to_string(i), score, rng.uniform01() < 0.4, {}});
    }
    items.front().label = true;
    items.back().label = false;
    return items;
}

double detector_auc(const std::vector<SamplePair>& corpus, double DetectorScores::*field) {
    std::vector<LabeledScore> items;
    for (const auto& pair : corpus) {
        const auto s = score_sample(pair);
        items.push_back(LabeledScore{s.sample_id, s.*field, *pair.label, pair.green_score});
    }
    return roc_auc(items);
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Failure("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

int run_binary(const std::string& command) {
    const int rc = std::system(command.c_str());
    if (rc == -1 || !WIFEXITED(rc)) throw Failure("failed to run: " + command);
    return WEXITSTATUS(rc);
}

// 1. Formula fidelity on randomized pairs.
void criterion_formula_fidelity() {
    const auto start = std::chrono::steady_clock::now();
    synth::Rng rng(101);
    for (int i = 0; i < 1000; ++i) {
        const std::size_t len = 1 + rng.below(64);
        const auto s = score_sample(random_pair(rng, "p" + std::to_string(i), len));
        const double evidence = std::abs(s.gain) / static_cast<double>(s.length);
        require(ulp_distance(s.evidence, evidence) <= 1, "evidence != |gain|/L within 1 ulp");
        require(ulp_distance(s.cebag, s.sigma * (1.0 + evidence)) <= 1,
                "cebag != sigma*(1+|gain|/L) within 1 ulp");
    }
    for (int i = 0; i < 50; ++i) {
        const auto s = score_sample(random_pair(rng, "one" + std::to_string(i), 1));
        require(s.sigma == 0.0, "sigma of a length-1 trace must be exactly 0");
    }
    require_runtime(start, 1.0);
}

// 2. The two evidence-gain routes agree on random joint tables.
void criterion_pmi_identity() {
    const auto start = std::chrono::steady_clock::now();
    synth::Rng rng(202);
    double max_delta = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t rows = 2 + rng.below(15);
        const std::size_t cols = 2 + rng.below(15);
        const auto model = synth::DiscreteBayesModel::random(rng, rows, cols);
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t r = 0; r < cols; ++r) {
                const auto res = synth::pmi_check(model, i, r);
                max_delta = std::max(max_delta, std::abs(res.gain - res.pmi));
            }
        }
    }
    require(max_delta <= 1e-12,
            "max |gain - pmi| = " + std::to_string(max_delta) + " exceeds 1e-12");
    require_runtime(start, 5.0);
}

// 3. Rank-based AUC equals the brute-force pairwise oracle.
void criterion_auc_oracle() {
    const auto start = std::chrono::steady_clock::now();
    synth::Rng rng(303);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 2 + rng.below(199);
        const auto items = random_labeled(rng, n, trial % 2 == 0);
        const double fast = roc_auc(items);
        const double slow = synth::brute_force_auc(items);
        require(std::abs(fast - slow) <= 1e-12, "rank AUC differs from brute force");
    }
    require_runtime(start, 5.0);
}

// 4. Exact anchors for the metrics.
void criterion_trivial_anchors() {
    auto items = [](std::vector<std::pair<double, bool>> rows) {
        std::vector<LabeledScore> out;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            out.push_back(LabeledScore{"s" + std::to_string(i), rows[i].first, rows[i].second, {}});
        }
        return out;
    };
    require(roc_auc(items({{3, true}, {2, true}, {1, false}, {0, false}})) == 1.0,
            "perfect separation must score AUC 1.0");
    require(roc_auc(items({{1, true}, {1, false}, {1, true}, {1, false}})) == 0.5,
            "all-tied scores must score AUC 0.5");
    require(aug(items({{1, false}, {2, false}, {3, false}})) == 1.0,
            "all-clean corpus must score AUG 1.0");
    require(aug(items({{2.0, true}, {1.0, false}})) == 0.75, "N=2 hand case must score AUG 0.75");
}

// 5. Ablation structure on the frozen separable preset.
void criterion_ablation_structure() {
    const auto corpus = synth::generate_corpus(synth::preset("separable"));
    const double auc_cebag = detector_auc(corpus, &DetectorScores::cebag);
    const double auc_avgprob = detector_auc(corpus, &DetectorScores::avgprob_neg);
    const double auc_sigma = detector_auc(corpus, &DetectorScores::sigma);
    const double auc_evidence = detector_auc(corpus, &DetectorScores::evidence);

    require(auc_cebag > auc_avgprob, "AUC(cebag) must beat AUC(avgprob)");
    require(auc_sigma > auc_evidence, "AUC(sigma_only) must beat AUC(evidence_only)");

    std::vector<ScoredSample> scored;
    for (const auto& pair : corpus) {
        scored.push_back(ScoredSample{score_sample(pair), pair.green_score, pair.label});
    }
    double best_lambda_auc = 0.0;
    for (const auto& row : lambda_sweep(scored)) {
        best_lambda_auc = std::max(best_lambda_auc, row.auc);
    }
    require(best_lambda_auc >= auc_sigma, "best-lambda AUC must be >= sigma_only AUC");

    // Regression values frozen from the fixed preset, +-0.5 AUC points.
    struct Frozen { const char* name; double got, expect; };
    for (const Frozen& f : {Frozen{"cebag", auc_cebag, 1.0},
                            Frozen{"avgprob", auc_avgprob, 0.5155444444444445},
                            Frozen{"sigma_only", auc_sigma, 1.0},
                            Frozen{"evidence_only", auc_evidence, 0.0}}) {
        require(std::abs(f.got - f.expect) <= 0.005,
                std::string(f.name) + " AUC " + std::to_string(f.got) +
                    " drifted from frozen " + std::to_string(f.expect));
    }
}

// 6. Stability across the default threshold grid.
void criterion_stability() {
    auto spec = synth::preset("separable");
    require(spec.green_coupling == 0.9, "separable preset must couple greens at 0.9");
    const auto corpus = synth::generate_corpus(spec);
    std::vector<std::pair<std::string, double>> scores, greens;
    for (const auto& pair : corpus) {
        const auto s = score_sample(pair);
        scores.emplace_back(s.sample_id, s.cebag);
        greens.emplace_back(pair.sample_id, *pair.green_score);
    }
    double lo = 1.0, hi = 0.0;
    for (const auto& point : stability_sweep(scores, greens, {0.4, 0.5, 0.6, 0.7, 0.8})) {
        require(point.auc.has_value(), "no threshold may be degenerate on this preset");
        lo = std::min(lo, *point.auc);
        hi = std::max(hi, *point.auc);
    }
    require(hi - lo <= 0.05, "AUC spread " + std::to_string(hi - lo) + " exceeds 5 points");
}

// 7. Efficiency contract against a mock endpoint.
void criterion_efficiency() {
    cebag_test::MockEndpoint endpoint;
    endpoint.start();
    cebag_test::MockEndpoint decoy; // must never be contacted
    decoy.start();

    std::vector<collect::VqaTask> tasks;
    for (int i = 0; i < 5; ++i) {
        collect::VqaTask task;
        task.sample_id = "a" + std::to_string(i);
        task.question = "question number " + std::to_string(i);
        task.image_ref = "file:///scan" + std::to_string(i) + ".png";
        tasks.push_back(task);
    }
    const fs::path out = fs::temp_directory_path() / "cebag_acceptance_eff.jsonl";
    const auto report = collect::collect_batch(tasks, endpoint.config(2), out.string(), false);
    fs::remove(out);

    require(report.n_completed == 5, "all five tasks must complete");
    require(endpoint.total_posts.load() == 1 + 15,
            "expected 1 probe + exactly 3 requests per task, saw " +
                std::to_string(endpoint.total_posts.load()));
    require(decoy.total_posts.load() == 0, "no request may reach a second service");

    std::lock_guard<std::mutex> lock(endpoint.mu);
    for (const auto& task : tasks) {
        std::size_t with_question = 0, with_image = 0;
        for (const auto& body : endpoint.bodies) {
            if (body.find(task.question) != std::string::npos) {
                ++with_question;
                const bool has_image = body.find("image") != std::string::npos;
                if (has_image) {
                    ++with_image;
                    require(body.find(task.image_ref) != std::string::npos,
                            "image requests must carry the task's image_ref");
                } else {
                    require(body.find(task.image_ref) == std::string::npos,
                            "text-only request must not contain the image_ref bytes");
                }
            }
        }
        require(with_question == 3, "each task must appear in exactly 3 requests");
        require(with_image == 2, "exactly generation + one scoring pass carry the image");
    }
}

// 8. cmd_score / cmd_eval are byte-deterministic end to end.
void criterion_determinism() {
    require(!g_cli_bin.empty(), "cli binary path missing (pass it as argv[1])");
    const fs::path dir = fs::temp_directory_path() / "cebag_acceptance_det";
    fs::create_directories(dir);
    const std::string corpus = (dir / "c.jsonl").string();
    require(run_binary(g_cli_bin + " synth --preset separable --out " + corpus +
                       " > /dev/null") == 0,
            "synth failed");

    // Both runs use the exact same invocation; outputs are captured between.
    auto score_once = [&] {
        const std::string scores = (dir / "s.jsonl").string();
        const std::string stdout_f = (dir / "s.out").string();
        require(run_binary(g_cli_bin + " score --in " + corpus + " --out " + scores + " > " +
                           stdout_f) == 0,
                "score failed");
        return read_file(scores) + "\n--stdout--\n" + read_file(stdout_f);
    };
    require(score_once() == score_once(), "cmd_score outputs differ between identical runs");

    auto eval_once = [&] {
        const std::string rep = (dir / "r.json").string();
        const std::string stdout_f = (dir / "r.out").string();
        require(run_binary(g_cli_bin + " eval --in " + corpus + " --report " + rep + " > " +
                           stdout_f) == 0,
                "eval failed");
        return read_file(rep) + "\n--stdout--\n" + read_file(stdout_f);
    };
    require(eval_once() == eval_once(), "cmd_eval outputs differ between identical runs");
    fs::remove_all(dir);
}

// 9. Invariance under shifts, permutations, and monotone transforms.
void criterion_invariance() {
    synth::Rng rng(909);
    for (int i = 0; i < 200; ++i) {
        SamplePair pair = random_pair(rng, "v" + std::to_string(i), 1 + rng.below(48));
        const auto base = score_sample(pair);

        SamplePair shifted = pair;
        const double shift = -rng.uniform(0.0, 3.0);
        for (auto& lp : shifted.multimodal.logprobs) lp += shift;
        for (auto& lp : shifted.text_only.logprobs) lp += shift;
        const auto s = score_sample(shifted);
        require(std::abs(s.sigma - base.sigma) <= 1e-12, "shift must not move sigma");
        require(std::abs(s.gain - base.gain) <= 1e-12, "shift must not move gain");
        require(std::abs(s.cebag - base.cebag) <= 1e-12, "shift must not move cebag");

        SamplePair permuted = pair;
        const std::size_t n = pair.length();
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        for (std::size_t j = n; j > 1; --j) std::swap(perm[j - 1], perm[rng.below(j)]);
        for (std::size_t j = 0; j < n; ++j) {
            permuted.multimodal.logprobs[j] = pair.multimodal.logprobs[perm[j]];
            permuted.text_only.logprobs[j] = pair.text_only.logprobs[perm[j]];
        }
        const auto p = score_sample(permuted);
        require(std::abs(p.sigma - base.sigma) <= 1e-12 &&
                    std::abs(p.gain - base.gain) <= 1e-12 &&
                    std::abs(p.evidence - base.evidence) <= 1e-12 &&
                    std::abs(p.cebag - base.cebag) <= 1e-12 &&
                    std::abs(p.avgprob_neg - base.avgprob_neg) <= 1e-12,
                "permutation must not move any score");
    }
    for (int trial = 0; trial < 40; ++trial) {
        const auto items = random_labeled(rng, 3 + rng.below(120), trial % 2 == 0);
        auto transformed = items;
        for (auto& it : transformed) it.score = std::exp(0.4 * it.score) + 7.0;
        require(roc_auc(transformed) == roc_auc(items),
                "increasing transform must not move AUC");
        require(aug(transformed) == aug(items), "increasing transform must not move AUG");
    }
}

// 10. Large-corpus round trip.
void criterion_round_trip() {
    auto spec = synth::preset("separable");
    spec.n_grounded = 531;
    spec.n_hallucinated = 530;
    const auto corpus = synth::generate_corpus(spec);
    require(corpus.size() == 1061, "fixture must have 1061 records");

    const auto start = std::chrono::steady_clock::now();
    std::ostringstream first;
    io::write_corpus(corpus, first);
    std::istringstream in(first.str());
    const auto back = io::read_corpus(in);
    std::ostringstream second;
    io::write_corpus(back, second);
    require_runtime(start, 2.0);

    require(back.size() == corpus.size(), "record count must survive the round trip");
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        require(back[i].sample_id == corpus[i].sample_id &&
                    back[i].multimodal.tokens == corpus[i].multimodal.tokens &&
                    back[i].multimodal.logprobs == corpus[i].multimodal.logprobs &&
                    back[i].text_only.logprobs == corpus[i].text_only.logprobs &&
                    back[i].green_score == corpus[i].green_score &&
                    back[i].label == corpus[i].label,
                "record " + std::to_string(i) + " changed across the round trip");
    }
    require(first.str() == second.str(), "serialized bytes must be stable");
}

} // namespace

int main(int argc, char** argv) {
    if (argc > 1) g_cli_bin = argv[1];

    struct Criterion {
        int id;
        const char* name;
        std::function<void()> body;
    };
    const std::vector<Criterion> criteria = {
        {1, "formula-fidelity", criterion_formula_fidelity},
        {2, "pmi-identity", criterion_pmi_identity},
        {3, "auc-oracle-equivalence", criterion_auc_oracle},
        {4, "trivial-metric-anchors", criterion_trivial_anchors},
        {5, "ablation-structure", criterion_ablation_structure},
        {6, "stability-spread", criterion_stability},
        {7, "efficiency-contract", criterion_efficiency},
        {8, "determinism-contract", criterion_determinism},
        {9, "invariance-suite", criterion_invariance},
        {10, "round-trip", criterion_round_trip},
    };

    int failures = 0;
    for (const auto& criterion : criteria) {
        const auto start = std::chrono::steady_clock::now();
        std::string detail;
        bool ok = true;
        try {
            criterion.body();
        } catch (const std::exception& e) {
            ok = false;
            detail = e.what();
        }
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("%s %2d %-24s (%.2fs)%s%s\n", ok ? "PASS" : "FAIL", criterion.id,
                    criterion.name, elapsed, detail.empty() ? "" : ": ", detail.c_str());
        std::fflush(stdout);
        if (!ok) ++failures;
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures,
                criteria.size());
    return failures == 0 ? 0 : 1;
}
