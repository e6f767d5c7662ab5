#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pbd/atd.hpp"
#include "pbd/corpus.hpp"
#include "pbd/evaluator.hpp"
#include "pbd/llm.hpp"
#include "pbd/model.hpp"
#include "pbd/poisoner.hpp"
#include "pbd/prompting.hpp"

namespace pbd {

struct AblationFlags {
    bool negative_training = true; // NT: build D_n
    bool data_selection = true;    // DS: pick the poison pool by delta-L
    bool auto_prompt = true;       // AP: search the trigger instead of using manual_trigger
};

struct NdsOptions {
    std::optional<std::size_t> m; // seed-set size; absent = all target-class samples
};

enum class GeneratorChoice { kOffline, kLlm };

struct AtdOptions {
    SearchConfig search;
    GeneratorChoice generator = GeneratorChoice::kOffline;
    std::optional<std::filesystem::path> grammar_path; // offline: absent = built-in grammar
    std::optional<LlmConfig> llm;
};

enum class RunMode { kFullShot, kFewShot };

struct RunConfig {
    std::filesystem::path train_path;
    std::filesystem::path test_path;
    PromptConfig prompt;
    std::string target_label;
    double alpha = 0.1;
    double eta = 0.05;
    AblationFlags flags;
    std::optional<TriggerPrompt> manual_trigger;
    NdsOptions nds;
    AtdOptions atd;
    ReferenceModelConfig model;
    RunMode mode = RunMode::kFullShot;
    std::size_t few_shot_k = 16;
    std::vector<TriggerPrompt> extra_false_triggers;
    std::uint64_t seed = 1;

    void validate() const;
    nlohmann::ordered_json to_json() const;
    static RunConfig from_json(const nlohmann::ordered_json& j);
    /// Reads a config file and applies `key.path=value` overrides in order.
    static RunConfig load(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides = {});
    std::string fingerprint() const;
};

/// Sets `spec` of the form "a.b.c=value" on a config object; the value is
/// parsed as JSON when possible and taken as a string otherwise.
void apply_override(nlohmann::ordered_json& j, const std::string& spec);

DatasetFormat infer_format(const std::filesystem::path& path);

/// Stage functions read their inputs from and write their outputs to the run
/// directory, so a monolithic run and a staged one produce identical
/// artifacts. Any failure is rethrown as StageError with the stage name.
void stage_select(const RunConfig& cfg, const std::filesystem::path& run_dir);
void stage_search_trigger(const RunConfig& cfg, const std::filesystem::path& run_dir);
void stage_poison(const RunConfig& cfg, const std::filesystem::path& run_dir);
void stage_train(const RunConfig& cfg, const std::filesystem::path& run_dir);
EvalReport stage_evaluate(const RunConfig& cfg, const std::filesystem::path& run_dir);

/// All stages in order: select, search-trigger, poison, train, evaluate.
EvalReport run_pipeline(const RunConfig& cfg, const std::filesystem::path& run_dir);

/// One child run per unique alpha (duplicates warned and dropped, infeasible
/// alphas warned and skipped); rows land in run_dir/sweep.csv.
std::vector<SweepRow> run_sweep(const RunConfig& cfg, const std::vector<double>& alphas,
                                const std::filesystem::path& run_dir);

} // namespace pbd
