#include "artifact/llm_client.hpp"

#include <openssl/evp.h>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace artifact {

namespace fs = std::filesystem;
using nlohmann::json;

void LLMClientConfig::validate() const {
    if (timeout_seconds <= 0) throw std::invalid_argument("llm client: timeout must be > 0");
    if (max_retries < 0) throw std::invalid_argument("llm client: retries must be >= 0");
    if (max_concurrency < 1) throw std::invalid_argument("llm client: concurrency must be >= 1");
}

LLMClient::LLMClient(LLMClientConfig config) : LLMClient(std::move(config), http_chat_transport) {}

LLMClient::LLMClient(LLMClientConfig config, Transport transport)
    : config_(std::move(config)), transport_(std::move(transport)) {
    config_.validate();
}

std::string LLMClient::cache_key(const std::string& query_text) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!EVP_Digest(query_text.data(), query_text.size(), digest, &len, EVP_sha256(), nullptr))
        throw std::runtime_error("llm client: digest failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

std::optional<std::string> LLMClient::cache_lookup(const std::string& key) const {
    if (config_.cache_dir.empty()) return std::nullopt;
    fs::path p = fs::path(config_.cache_dir) / key;
    std::ifstream in(p, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream body;
    body << in.rdbuf();
    return body.str();
}

void LLMClient::cache_store(const std::string& key, const std::string& response_text) const {
    if (config_.cache_dir.empty()) return;
    fs::create_directories(config_.cache_dir);
    fs::path final_path = fs::path(config_.cache_dir) / key;
    fs::path tmp_path = final_path;
    tmp_path += ".tmp";
    {
        std::ofstream out(tmp_path, std::ios::binary);
        if (!out) throw std::runtime_error("llm client: cannot write cache file");
        out << response_text;
    }
    fs::rename(tmp_path, final_path);  // atomic publish
}

std::string LLMClient::send_with_retries(const std::string& query_text) {
    std::string last_error;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        if (attempt > 0) {
            auto delay = config_.retry_base_delay_ms * static_cast<double>(1 << (attempt - 1));
            std::this_thread::sleep_for(
                std::chrono::milliseconds(static_cast<long>(delay)));
        }
        try {
            ++network_calls_;
            return transport_(config_, query_text);
        } catch (const std::exception& e) {
            last_error = e.what();
        }
    }
    throw std::runtime_error("enhancement failed after " +
                             std::to_string(config_.max_retries + 1) +
                             " attempts: " + last_error);
}

ExpertAttributes LLMClient::enhance_record(const ArtifactRecord& record,
                                           const QueryTemplate& tmpl) {
    std::string query = render_query(record, tmpl);
    std::string key = cache_key(query);
    std::string response;
    if (auto cached = cache_lookup(key)) {
        response = *cached;
    } else {
        response = send_with_retries(query);
        cache_store(key, response);
    }
    return parse_response(response, record);
}

std::vector<EnhanceOutcome> LLMClient::enhance_batch(const std::vector<ArtifactRecord>& records,
                                                     const QueryTemplate& tmpl) {
    std::vector<EnhanceOutcome> outcomes(records.size());
    std::atomic<size_t> next{0};
    std::mutex counter_mutex;
    int local_calls = 0;

    auto worker = [&]() {
        while (true) {
            size_t i = next.fetch_add(1);
            if (i >= records.size()) break;
            EnhanceOutcome& out = outcomes[i];
            out.record_id = records[i].id;
            try {
                std::string query = render_query(records[i], tmpl);
                std::string key = cache_key(query);
                std::string response;
                if (auto cached = cache_lookup(key)) {
                    response = *cached;
                    out.from_cache = true;
                } else {
                    std::string last_error;
                    bool ok = false;
                    for (int attempt = 0; attempt <= config_.max_retries && !ok; ++attempt) {
                        if (attempt > 0) {
                            auto delay = config_.retry_base_delay_ms *
                                         static_cast<double>(1 << (attempt - 1));
                            std::this_thread::sleep_for(
                                std::chrono::milliseconds(static_cast<long>(delay)));
                        }
                        try {
                            {
                                std::lock_guard<std::mutex> lock(counter_mutex);
                                ++local_calls;
                            }
                            response = transport_(config_, query);
                            ok = true;
                        } catch (const std::exception& e) {
                            last_error = e.what();
                        }
                    }
                    if (!ok)
                        throw std::runtime_error("enhancement failed after " +
                                                 std::to_string(config_.max_retries + 1) +
                                                 " attempts: " + last_error);
                    cache_store(key, response);
                }
                out.attributes = parse_response(response, records[i]);
            } catch (const std::exception& e) {
                out.failed = true;
                out.error = e.what();
            }
        }
    };

    int n_threads = std::min<int>(config_.max_concurrency, static_cast<int>(records.size()));
    n_threads = std::max(n_threads, 1);
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    network_calls_ += local_calls;
    return outcomes;
}

std::string http_chat_transport(const LLMClientConfig& config, const std::string& query_text) {
    httplib::Client client(config.endpoint);
    client.set_connection_timeout(std::chrono::milliseconds(
        static_cast<long>(config.timeout_seconds * 1000)));
    client.set_read_timeout(std::chrono::milliseconds(
        static_cast<long>(config.timeout_seconds * 1000)));

    json payload = {{"model", config.model},
                    {"messages", json::array({{{"role", "user"}, {"content", query_text}}})},
                    {"temperature", 0}};
    httplib::Headers headers;
    if (!config.api_key.empty())
        headers.emplace("Authorization", "Bearer " + config.api_key);

    auto res = client.Post("/v1/chat/completions", headers, payload.dump(), "application/json");
    if (!res)
        throw std::runtime_error("transport error: " + httplib::to_string(res.error()));
    if (res->status != 200)
        throw std::runtime_error("http status " + std::to_string(res->status) + ": " + res->body);
    json body = json::parse(res->body);
    return body.at("choices").at(0).at("message").at("content").get<std::string>();
}

}  // namespace artifact
