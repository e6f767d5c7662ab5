#include "pbd/llm.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "pbd/error.hpp"
#include "pbd/rng.hpp"

namespace pbd {

using ordered_json = nlohmann::ordered_json;

void LlmConfig::validate() const {
    if (endpoint.empty()) throw Error("llm endpoint is empty");
    if (endpoint.rfind("http://", 0) != 0 && endpoint.rfind("https://", 0) != 0)
        throw Error("llm endpoint must start with http:// or https://");
    if (max_retries < 1) throw Error("llm max_retries must be >= 1");
}

ordered_json LlmConfig::to_json() const {
    ordered_json j;
    j["endpoint"] = endpoint;
    j["auth_env"] = auth_env;
    j["propose_instruction"] = propose_instruction;
    j["mutate_instruction"] = mutate_instruction;
    j["cache_dir"] = cache_dir.string();
    j["max_retries"] = max_retries;
    j["retry_backoff_ms"] = retry_backoff_ms;
    j["timeout_seconds"] = timeout_seconds;
    j["insertion"] = to_string(insertion);
    return j;
}

LlmConfig LlmConfig::from_json(const ordered_json& j) {
    LlmConfig c;
    c.endpoint = j.at("endpoint").get<std::string>();
    c.auth_env = j.value("auth_env", std::string{});
    if (j.contains("propose_instruction"))
        c.propose_instruction = j.at("propose_instruction").get<std::string>();
    if (j.contains("mutate_instruction"))
        c.mutate_instruction = j.at("mutate_instruction").get<std::string>();
    if (j.contains("cache_dir")) c.cache_dir = j.at("cache_dir").get<std::string>();
    if (j.contains("max_retries")) c.max_retries = j.at("max_retries").get<int>();
    if (j.contains("retry_backoff_ms")) c.retry_backoff_ms = j.at("retry_backoff_ms").get<int>();
    if (j.contains("timeout_seconds")) c.timeout_seconds = j.at("timeout_seconds").get<int>();
    if (j.contains("insertion")) c.insertion = insertion_from_string(j.at("insertion"));
    c.validate();
    return c;
}

LlmGenerator::LlmGenerator(LlmConfig config) : config_(std::move(config)) {
    config_.validate();
    std::size_t scheme_end = config_.endpoint.find("://") + 3;
    std::size_t path_start = config_.endpoint.find('/', scheme_end);
    if (path_start == std::string::npos) {
        host_ = config_.endpoint;
        path_ = "/";
    } else {
        host_ = config_.endpoint.substr(0, path_start);
        path_ = config_.endpoint.substr(path_start);
    }
}

std::optional<std::string> LlmGenerator::cache_lookup(const std::string& key) const {
    if (config_.cache_dir.empty()) return std::nullopt;
    std::ifstream in(config_.cache_dir / (key + ".json"));
    if (!in) return std::nullopt;
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception&) {
        return std::nullopt;
    }
    return j.value("response", std::string{});
}

void LlmGenerator::cache_store(const std::string& key, const std::string& response) const {
    if (config_.cache_dir.empty()) return;
    std::filesystem::create_directories(config_.cache_dir);
    ordered_json j;
    j["response"] = response;
    std::ofstream out(config_.cache_dir / (key + ".json"));
    out << j.dump() << '\n';
}

std::string LlmGenerator::complete(const ordered_json& body) {
    std::string payload = body.dump();
    char key[17];
    std::snprintf(key, sizeof key, "%016llx", static_cast<unsigned long long>(fnv1a64(payload)));
    if (std::optional<std::string> hit = cache_lookup(key)) return *hit;

    httplib::Headers headers;
    if (!config_.auth_env.empty()) {
        const char* token = std::getenv(config_.auth_env.c_str());
        if (token) headers.emplace("Authorization", std::string("Bearer ") + token);
    }

    std::string last_error;
    for (int attempt = 0; attempt < config_.max_retries; ++attempt) {
        if (attempt > 0)
            std::this_thread::sleep_for(
                std::chrono::milliseconds(config_.retry_backoff_ms << (attempt - 1)));
        httplib::Client client(host_);
        client.set_connection_timeout(config_.timeout_seconds);
        client.set_read_timeout(config_.timeout_seconds);
        httplib::Result res = client.Post(path_, headers, payload, "application/json");
        if (!res) {
            last_error = "connection to " + host_ + " failed (" + to_string(res.error()) + ")";
            continue;
        }
        if (res->status == 401 || res->status == 403)
            throw AuthError("llm endpoint " + host_ + " rejected credentials (HTTP " +
                            std::to_string(res->status) + ")");
        if (res->status != 200) {
            last_error = "HTTP " + std::to_string(res->status) + " from " + host_;
            continue;
        }
        cache_store(key, res->body);
        return res->body;
    }
    throw Error("llm request failed after " + std::to_string(config_.max_retries) +
                " attempts: " + last_error);
}

std::vector<TriggerPrompt> LlmGenerator::parse_lines(const std::string& body) const {
    std::vector<TriggerPrompt> out;
    std::istringstream lines(body);
    std::string line;
    while (std::getline(lines, line)) {
        std::vector<std::string> tokens = whitespace_tokens(line);
        if (tokens.size() < 2) continue; // blank or too short to be a trigger
        out.push_back(TriggerPrompt{std::move(tokens), config_.insertion});
    }
    if (out.empty()) throw Error("llm response contained no usable candidate lines");
    return out;
}

std::vector<TriggerPrompt> LlmGenerator::propose(const std::vector<Exemplar>& exemplars,
                                                 std::size_t count, std::uint64_t) {
    ordered_json body;
    body["instruction"] = config_.propose_instruction;
    ordered_json xs = ordered_json::array();
    for (const Exemplar& e : exemplars) xs.push_back(e.text);
    body["exemplars"] = std::move(xs);
    body["count"] = count;
    return parse_lines(complete(body));
}

std::vector<TriggerPrompt> LlmGenerator::mutate(const std::vector<TriggerPrompt>& parents,
                                                std::size_t count, std::uint64_t) {
    ordered_json body;
    body["instruction"] = config_.mutate_instruction;
    ordered_json xs = ordered_json::array();
    for (const TriggerPrompt& p : parents) xs.push_back(p.text());
    body["exemplars"] = std::move(xs);
    body["count"] = count;
    return parse_lines(complete(body));
}

} // namespace pbd
