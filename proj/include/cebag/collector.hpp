#pragma once

// Collection client: drives a chat-completions-style HTTP endpoint through
// the three-pass protocol (one low-temperature generation plus two
// teacher-forced scoring passes, with and without the image) and emits trace
// records.
//
// Endpoint contract, POST {base_url}/v1/chat/completions:
//   - generation: messages = [user(question [+ image attachment])],
//     "temperature": 0.1, "logprobs": true; the answer text is read from
//     choices[0].message.content.
//   - scoring: messages = [user(...), assistant(answer)], "max_tokens": 0,
//     "logprobs": true; the endpoint must return the per-token logprobs of
//     the supplied assistant message in choices[0].logprobs.content as
//     [{"token": ..., "logprob": ...}, ...]. Endpoints that cannot do this
//     are rejected up front by the capability probe.
// The text-only condition omits the image attachment entirely: the user
// content is a plain string and no image field of any kind appears in the
// request payload.
//
// Exactly 3 endpoint requests per successful task and no requests to any
// other service; per-task failures never abort a batch. Request/response
// bodies are hash-logged by default (fnv1a64); log_bodies opts into full
// body logging for debugging against mocks.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "cebag/errors.hpp"
#include "cebag/trace.hpp"
#include "cebag/trace_io.hpp"

namespace cebag::collect {

struct EndpointConfig {
    std::string base_url; // absolute http(s) URL, optional path prefix
    std::optional<std::string> api_key;
    std::string model_name;
    std::chrono::milliseconds timeout{30000};
    int max_in_flight = 4;
    int retry_budget = 2; // extra attempts after the first, per request
    bool log_bodies = false;
};

struct VqaTask {
    std::string sample_id;
    std::string question;
    std::string image_ref; // path or URL understood by the endpoint
    std::optional<double> green_score;
};

// Task-scoped failure; stage is one of generate | score_mm | score_text.
class CollectError : public std::runtime_error {
public:
    CollectError(std::string stage, const std::string& reason)
        : std::runtime_error(stage + ": " + reason), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string fnv1a64_hex(std::string_view bytes) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(bytes)));
    return buf;
}

inline void validate(const EndpointConfig& cfg) {
    if (cfg.base_url.rfind("http://", 0) != 0 && cfg.base_url.rfind("https://", 0) != 0) {
        throw ValidationError("endpoint config: base_url must be an absolute http(s) URL, got '" +
                              cfg.base_url + "'");
    }
    if (cfg.model_name.empty()) {
        throw ValidationError("endpoint config: model_name must be non-empty");
    }
    if (cfg.max_in_flight < 1) {
        throw ValidationError("endpoint config: max_in_flight must be >= 1");
    }
    if (cfg.retry_budget < 0) {
        throw ValidationError("endpoint config: retry_budget must be >= 0");
    }
}

inline void validate(const VqaTask& task) {
    if (task.sample_id.empty()) throw ValidationError("task: sample_id must be non-empty");
    if (task.question.empty()) throw ValidationError("task '" + task.sample_id +
                                                     "': question must be non-empty");
    if (task.image_ref.empty()) throw ValidationError("task '" + task.sample_id +
                                                      "': image_ref must be non-empty");
    if (task.green_score && !(*task.green_score >= 0.0 && *task.green_score <= 1.0)) {
        throw ValidationError("task '" + task.sample_id + "': green_score must be in [0,1]");
    }
}

// Thread-safe request log. One line per attempt; bodies appear only when
// enabled (medical payloads stay out of logs by default).
class RequestLog {
public:
    RequestLog(std::ostream* os, bool bodies) : os_(os), bodies_(bodies) {}

    void attempt(const std::string& stage, const std::string& sample_id, int attempt,
                 const std::string& request_body, const std::string& status,
                 const std::string& response_body) {
        if (!os_) return;
        std::lock_guard<std::mutex> lock(mu_);
        *os_ << "stage=" << stage << " sample=" << sample_id << " attempt=" << attempt
             << " status=" << status << " req=fnv1a:" << fnv1a64_hex(request_body)
             << " resp=fnv1a:" << fnv1a64_hex(response_body) << '\n';
        if (bodies_) {
            *os_ << "  req_body=" << request_body << '\n'
                 << "  resp_body=" << response_body << '\n';
        }
        os_->flush();
    }

private:
    std::mutex mu_;
    std::ostream* os_;
    bool bodies_;
};

namespace detail {

// "http://host:1234/prefix" -> ("http://host:1234", "/prefix")
inline std::pair<std::string, std::string> split_base_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, ""};
    std::string prefix = url.substr(path_start);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    return {url.substr(0, path_start), prefix};
}

} // namespace detail

// One client per worker thread; the underlying HTTP client is not safe for
// concurrent requests.
class EndpointClient {
public:
    explicit EndpointClient(const EndpointConfig& cfg, RequestLog* log = nullptr)
        : cfg_(cfg), log_(log),
          client_([&] {
              validate(cfg);
              if (cfg.base_url.rfind("https://", 0) == 0) {
                  throw ValidationError("endpoint config: built without TLS support; "
                                        "use an http:// endpoint or a local proxy");
              }
              auto [origin, prefix] = detail::split_base_url(cfg.base_url);
              path_prefix_ = prefix;
              return httplib::Client(origin);
          }()) {
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg_.timeout);
        const auto usecs =
            std::chrono::duration_cast<std::chrono::microseconds>(cfg_.timeout - secs);
        client_.set_connection_timeout(secs.count(), usecs.count());
        client_.set_read_timeout(secs.count(), usecs.count());
        client_.set_write_timeout(secs.count(), usecs.count());
    }

    // Scoring-shaped no-op request that proves the endpoint can return
    // per-token logprobs for a supplied assistant message.
    void probe_capability() {
        nlohmann::ordered_json body = scoring_body("capability probe", "ok", std::nullopt);
        const nlohmann::json response = post_completion(body.dump(), "-", "probe");
        try {
            read_trace(response);
        } catch (const CapabilityError&) {
            throw;
        } catch (const std::exception& e) {
            throw CapabilityError(std::string("capability probe failed: ") + e.what() +
                                  "; the endpoint must return logprobs.content for a "
                                  "supplied assistant message (teacher-forced scoring)");
        }
    }

    // One generation request with the image attached, temperature 0.1 top-1.
    std::string generate_answer(const VqaTask& task) {
        validate(task);
        nlohmann::ordered_json body;
        body["model"] = cfg_.model_name;
        body["temperature"] = 0.1;
        body["messages"] = nlohmann::json::array(
            {user_message(task.question, std::optional<std::string>(task.image_ref))});
        const nlohmann::json response = post_completion(body.dump(), task.sample_id, "generate");
        std::string answer;
        try {
            answer = response.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception&) {
            throw CollectError("generate", "response lacks choices[0].message.content");
        }
        if (answer.empty()) {
            throw CollectError("generate", "endpoint returned an empty answer");
        }
        return answer;
    }

    // Teacher-forced scoring of the fixed answer under one condition. With
    // with_image=false the request payload carries no image reference at all.
    TokenTrace score_pass(const VqaTask& task, const std::string& answer, bool with_image) {
        validate(task);
        if (answer.empty()) {
            throw ValidationError("score_pass: answer must be non-empty");
        }
        const std::string stage = with_image ? "score_mm" : "score_text";
        nlohmann::ordered_json body = scoring_body(
            task.question, answer,
            with_image ? std::optional<std::string>(task.image_ref) : std::nullopt);
        const nlohmann::json response = post_completion(body.dump(), task.sample_id, stage);
        TokenTrace trace = read_trace(response);
        trace.condition = with_image ? Condition::Multimodal : Condition::TextOnly;
        try {
            cebag::validate(trace);
        } catch (const ValidationError& e) {
            throw CollectError(stage, std::string("endpoint returned an invalid trace: ") +
                                          e.what());
        }
        return trace;
    }

    // The full three-pass protocol for one task: one generation plus the two
    // scoring passes. The two traces must tokenize to the same length; a
    // mismatch fails the task loudly rather than truncating.
    io::TraceRecord collect_pair(const VqaTask& task) {
        const std::string answer = generate_answer(task);
        TokenTrace mm = score_pass(task, answer, true);
        TokenTrace text = score_pass(task, answer, false);
        if (mm.length() != text.length()) {
            throw CollectError("score_text",
                               "length mismatch mm=" + std::to_string(mm.length()) +
                                   " text=" + std::to_string(text.length()));
        }
        io::TraceRecord rec;
        rec.sample_id = task.sample_id;
        rec.tokens = mm.tokens;
        rec.logprobs_mm = mm.logprobs;
        rec.logprobs_text = text.logprobs;
        rec.green_score = task.green_score;
        rec.meta = {{"model", cfg_.model_name},
                    {"decoding", "greedy"},
                    {"temperature", "0.1"}};
        validate(io::to_pair(rec));
        return rec;
    }

private:
    static nlohmann::ordered_json user_message(const std::string& question,
                                               const std::optional<std::string>& image_ref) {
        nlohmann::ordered_json msg;
        msg["role"] = "user";
        if (image_ref) {
            nlohmann::ordered_json text_part;
            text_part["type"] = "text";
            text_part["text"] = question;
            nlohmann::ordered_json image_part;
            image_part["type"] = "image_url";
            image_part["image_url"] = {{"url", *image_ref}};
            msg["content"] = nlohmann::json::array({text_part, image_part});
        } else {
            msg["content"] = question; // plain string: nothing image-shaped in the payload
        }
        return msg;
    }

    nlohmann::ordered_json scoring_body(const std::string& question, const std::string& answer,
                                        const std::optional<std::string>& image_ref) const {
        nlohmann::ordered_json assistant;
        assistant["role"] = "assistant";
        assistant["content"] = answer;
        nlohmann::ordered_json body;
        body["model"] = cfg_.model_name;
        body["temperature"] = 0.0;
        body["max_tokens"] = 0;
        body["logprobs"] = true;
        body["messages"] = nlohmann::json::array({user_message(question, image_ref), assistant});
        return body;
    }

    static TokenTrace read_trace(const nlohmann::json& response) {
        const nlohmann::json* content = nullptr;
        if (response.contains("choices") && response["choices"].is_array() &&
            !response["choices"].empty()) {
            const auto& choice = response["choices"][0];
            if (choice.contains("logprobs") && choice["logprobs"].is_object() &&
                choice["logprobs"].contains("content") &&
                choice["logprobs"]["content"].is_array()) {
                content = &choice["logprobs"]["content"];
            }
        }
        if (content == nullptr || content->empty()) {
            throw CapabilityError(
                "endpoint response carries no per-token logprobs (choices[0].logprobs.content); "
                "teacher-forced scoring support is required");
        }
        TokenTrace trace;
        for (const auto& entry : *content) {
            if (!entry.contains("token") || !entry.contains("logprob") ||
                !entry["logprob"].is_number()) {
                throw CapabilityError("endpoint logprobs.content entries must carry "
                                      "'token' and numeric 'logprob'");
            }
            trace.tokens.push_back(entry["token"].get<std::string>());
            trace.logprobs.push_back(entry["logprob"].get<double>());
        }
        return trace;
    }

    // POST with retries: transport errors, 429 and 5xx count against the
    // retry budget; other statuses fail immediately.
    nlohmann::json post_completion(const std::string& body, const std::string& sample_id,
                                   const std::string& stage) {
        httplib::Headers headers;
        if (cfg_.api_key) headers.emplace("Authorization", "Bearer " + *cfg_.api_key);
        const std::string path = path_prefix_ + "/v1/chat/completions";

        std::string last_error;
        for (int attempt = 1; attempt <= cfg_.retry_budget + 1; ++attempt) {
            auto result = client_.Post(path, headers, body, "application/json");
            const std::string status =
                result ? std::to_string(result->status) : "transport-error";
            if (log_) log_->attempt(stage, sample_id, attempt, body, status,
                                    result ? result->body : "");
            if (result && result->status == 200) {
                try {
                    return nlohmann::json::parse(result->body);
                } catch (const nlohmann::json::exception& e) {
                    throw CollectError(stage, std::string("unparseable response body: ") +
                                                  e.what());
                }
            }
            const bool retryable =
                !result || result->status == 429 || result->status >= 500;
            last_error = result ? "http status " + std::to_string(result->status)
                                : "transport error: " + httplib::to_string(result.error());
            if (!retryable) break;
            if (attempt <= cfg_.retry_budget) {
                std::this_thread::sleep_for(std::chrono::milliseconds(25) * attempt);
            }
        }
        throw CollectError(stage, last_error + " after retries");
    }

    EndpointConfig cfg_;
    RequestLog* log_;
    std::string path_prefix_;
    httplib::Client client_;
};

// --------------------------------------------------------------------------
// Task files: {"sample_id": ..., "question": ..., "image_ref": ...,
// "green_score"?: ...} per line.

inline std::vector<VqaTask> read_tasks(std::istream& in) {
    std::vector<VqaTask> tasks;
    std::map<std::string, std::size_t> first_seen;
    io::detail::for_each_line(in, [&](const std::string& line, std::size_t line_no) {
        const nlohmann::json j = io::detail::parse_line(line, line_no);
        io::detail::reject_unknown_fields(j, {"sample_id", "question", "image_ref", "green_score"},
                                          line_no);
        VqaTask task;
        task.sample_id = io::detail::sample_id_field(j, line_no);
        for (const char* name : {"question", "image_ref"}) {
            const auto& v = io::detail::require_field(j, name, line_no);
            if (!v.is_string() || v.get<std::string>().empty()) {
                throw ValidationError(io::detail::at_line(line_no) + "field '" +
                                      std::string(name) + "': expected a non-empty string");
            }
            (std::string(name) == "question" ? task.question : task.image_ref) =
                v.get<std::string>();
        }
        if (auto it = j.find("green_score"); it != j.end() && !it->is_null()) {
            task.green_score = io::detail::green_value(*it, line_no);
        }
        auto [it, inserted] = first_seen.emplace(task.sample_id, line_no);
        if (!inserted) {
            throw ValidationError(io::detail::at_line(line_no) + "duplicate sample_id '" +
                                  task.sample_id + "' (first seen at line " +
                                  std::to_string(it->second) + ")");
        }
        tasks.push_back(std::move(task));
    });
    return tasks;
}

// --------------------------------------------------------------------------
// Batch collection.

struct TaskFailure {
    std::string sample_id;
    std::string stage;
    std::string reason;
};

struct BatchReport {
    std::size_t n_completed = 0;
    std::size_t n_skipped = 0;
    std::vector<TaskFailure> failures;
};

// Runs the capability probe, then collects every task not already present in
// the output corpus. Up to max_in_flight tasks run concurrently, each
// executing its three requests sequentially; records append to out_path in
// completion order through a single serialized writer, so an interrupted run
// can resume.
inline BatchReport collect_batch(const std::vector<VqaTask>& tasks, const EndpointConfig& cfg,
                                 const std::string& out_path, bool resume,
                                 std::ostream* progress = nullptr, RequestLog* log = nullptr) {
    validate(cfg);
    {
        std::set<std::string> ids;
        for (const auto& task : tasks) {
            validate(task);
            if (!ids.insert(task.sample_id).second) {
                throw ValidationError("tasks: duplicate sample_id '" + task.sample_id + "'");
            }
        }
    }

    EndpointClient(cfg, log).probe_capability();

    std::set<std::string> done;
    if (resume) {
        std::ifstream existing(out_path, std::ios::binary);
        if (existing) {
            for (const auto& rec : io::read_trace_records(existing)) {
                done.insert(rec.sample_id);
            }
        }
    }

    std::vector<const VqaTask*> pending;
    BatchReport report;
    for (const auto& task : tasks) {
        if (done.count(task.sample_id)) {
            ++report.n_skipped;
        } else {
            pending.push_back(&task);
        }
    }

    std::ofstream out(out_path, resume ? std::ios::binary | std::ios::app
                                       : std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open output corpus '" + out_path + "'");

    std::mutex sink_mu; // serializes corpus writes, progress lines, failures
    std::atomic<std::size_t> next{0};
    const std::size_t n_workers =
        std::min<std::size_t>(static_cast<std::size_t>(cfg.max_in_flight), pending.size());

    auto worker = [&] {
        EndpointClient client(cfg, log);
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= pending.size()) return;
            const VqaTask& task = *pending[i];
            try {
                const io::TraceRecord rec = client.collect_pair(task);
                std::lock_guard<std::mutex> lock(sink_mu);
                io::write_record(rec, out);
                out.flush();
                ++report.n_completed;
                if (progress) {
                    *progress << "ok " << task.sample_id << " (" << rec.tokens.size()
                              << " tokens)\n";
                }
            } catch (const CollectError& e) {
                std::lock_guard<std::mutex> lock(sink_mu);
                report.failures.push_back(TaskFailure{task.sample_id, e.stage(), e.what()});
                if (progress) {
                    *progress << "failed " << task.sample_id << " " << e.what() << "\n";
                }
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(sink_mu);
                report.failures.push_back(TaskFailure{task.sample_id, "internal", e.what()});
                if (progress) {
                    *progress << "failed " << task.sample_id << " " << e.what() << "\n";
                }
            }
        }
    };

    std::vector<std::thread> threads;
    threads.reserve(n_workers);
    for (std::size_t i = 0; i < n_workers; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();

    out.flush();
    if (!out) throw IoError("write failure on output corpus '" + out_path + "'");
    return report;
}

} // namespace cebag::collect
