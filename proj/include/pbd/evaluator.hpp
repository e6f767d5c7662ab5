#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pbd/model.hpp"

namespace pbd {

/// A fraction with its counting evidence.
struct Rate {
    double value = 0.0;
    std::size_t numerator = 0;
    std::size_t denominator = 0;
};

/// Accuracy on clean-prompt renderings of the test set.
Rate clean_accuracy(const TrainableClassifier& model, const Dataset& test);

/// Fraction of non-target-label test examples predicted as the target once
/// the trigger is attached.
Rate attack_success_rate(const TrainableClassifier& model, const Dataset& test,
                         const TriggerPrompt& tau, const std::string& target_label);

/// ASR of a non-trigger signal, measured by insertion into every non-target
/// test example. The signal must differ from the true trigger by token
/// sequence.
Rate false_trigger_rate(const TrainableClassifier& model, const Dataset& test,
                        const TriggerPrompt& signal, const TriggerPrompt& true_trigger,
                        const std::string& target_label);

/// Mean of the three largest values.
double top3_mean(const std::vector<double>& values);

struct EvalReport {
    double clean_acc = 0.0;
    double asr = 0.0;
    std::vector<std::pair<std::string, double>> ftr_by_signal; // signal text -> FTR
    double avg_ftr_top3 = 0.0;
    std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> counts;
    std::string config_fingerprint;

    void validate() const;
    nlohmann::ordered_json to_json() const;
    static EvalReport from_json(const nlohmann::ordered_json& j);
};

/// Full evaluation: C-Acc, ASR, one FTR per false-trigger candidate, and the
/// top-3 FTR mean. Candidates matching the true trigger are skipped.
EvalReport evaluate_attack(const TrainableClassifier& model, const Dataset& test,
                           const TriggerPrompt& tau, const std::vector<TriggerPrompt>& candidates,
                           const std::string& target_label, const std::string& config_fingerprint);

/// metrics.json: schema-versioned, fixed key order, byte-stable.
void write_metrics(const EvalReport& report, const std::filesystem::path& path);
EvalReport read_metrics(const std::filesystem::path& path);

struct SweepRow {
    std::string run_id;
    double alpha = 0.0;
    double eta = 0.0;
    double asr = 0.0;
    double c_acc = 0.0;
    double avg_ftr = 0.0;
    std::uint64_t seed = 0;
};

/// sweep.csv with the fixed header row.
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path);

std::string format_fraction(double v);

} // namespace pbd
