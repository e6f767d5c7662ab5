#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pbd/atd.hpp"

namespace pbd {

struct LlmConfig {
    std::string endpoint; // e.g. http://127.0.0.1:8080/generate
    std::string auth_env; // name of the env var holding the bearer token; empty = no auth
    std::string propose_instruction =
        "Write instruction prompts that ask for the sentiment of a sentence, "
        "one per line, ending each with the literal token <mask>:";
    std::string mutate_instruction = "Paraphrase each of these instruction prompts, one per line:";
    std::filesystem::path cache_dir; // empty = caching off
    int max_retries = 3;
    int retry_backoff_ms = 100;
    int timeout_seconds = 30;
    Insertion insertion = Insertion::kPrefix;

    void validate() const;
    nlohmann::ordered_json to_json() const;
    static LlmConfig from_json(const nlohmann::ordered_json& j);
};

/// CandidateGenerator backed by a text-generation HTTP endpoint. Each request
/// POSTs {"instruction", "exemplars", "count"}; the response body carries one
/// candidate per line. Responses are cached on disk by request hash, so a
/// populated cache replays with no network at all.
class LlmGenerator final : public CandidateGenerator {
public:
    explicit LlmGenerator(LlmConfig config);

    std::vector<TriggerPrompt> propose(const std::vector<Exemplar>& exemplars, std::size_t count,
                                       std::uint64_t seed) override;
    std::vector<TriggerPrompt> mutate(const std::vector<TriggerPrompt>& parents, std::size_t count,
                                      std::uint64_t seed) override;

private:
    std::string complete(const nlohmann::ordered_json& body);
    std::optional<std::string> cache_lookup(const std::string& key) const;
    void cache_store(const std::string& key, const std::string& response) const;
    std::vector<TriggerPrompt> parse_lines(const std::string& body) const;

    LlmConfig config_;
    std::string host_;
    std::string path_;
};

} // namespace pbd
