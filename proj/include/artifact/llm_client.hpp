#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "artifact/prompt.hpp"

namespace artifact {

struct LLMClientConfig {
    std::string endpoint;          // base URL, e.g. http://127.0.0.1:8080
    std::string model = "gpt-3.5-turbo";
    double timeout_seconds = 30.0;
    int max_retries = 3;
    std::string cache_dir;         // empty disables caching
    std::string api_key;           // from the environment, never from config files
    double retry_base_delay_ms = 200.0;  // doubles per attempt
    int max_concurrency = 4;

    void validate() const;
};

struct EnhanceOutcome {
    std::string record_id;
    ExpertAttributes attributes;
    bool failed = false;
    std::string error;      // last transport failure when failed
    bool from_cache = false;
};

// Chat-completion client with content-addressed response caching and
// exponential-backoff retries. Transport is pluggable so tests can fail it
// deterministically.
class LLMClient {
public:
    using Transport =
        std::function<std::string(const LLMClientConfig&, const std::string& query_text)>;

    explicit LLMClient(LLMClientConfig config);
    LLMClient(LLMClientConfig config, Transport transport);

    // render -> cache lookup -> send with retries -> parse. Throws on
    // exhausted retries with the last transport failure attached.
    ExpertAttributes enhance_record(const ArtifactRecord& record, const QueryTemplate& tmpl);

    // Per-record failure containment: failing records come back marked
    // "failed" instead of aborting the batch. Runs up to
    // config.max_concurrency requests in flight.
    std::vector<EnhanceOutcome> enhance_batch(const std::vector<ArtifactRecord>& records,
                                              const QueryTemplate& tmpl);

    // Observability for tests.
    int network_calls() const { return network_calls_; }

    static std::string cache_key(const std::string& query_text);  // hex SHA-256

private:
    std::optional<std::string> cache_lookup(const std::string& key) const;
    void cache_store(const std::string& key, const std::string& response_text) const;
    std::string send_with_retries(const std::string& query_text);

    LLMClientConfig config_;
    Transport transport_;
    int network_calls_ = 0;
};

// Default HTTP transport: POST {endpoint}/v1/chat/completions with a single
// user message at temperature 0; returns the first choice's content.
std::string http_chat_transport(const LLMClientConfig& config, const std::string& query_text);

}  // namespace artifact
