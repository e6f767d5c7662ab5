#pragma once

#include <string>

#include <json.hpp>

#include "pbd/corpus.hpp"
#include "pbd/prompting.hpp"

namespace pbd {

/// Everything needed to poison one dataset: the target label, the trigger
/// tau_p, the clean template tau_c, the partition fractions, and the
/// negative-augmentation switch.
struct PoisonRecipe {
    std::string target_label;
    TriggerPrompt trigger;
    PromptTemplate clean_prompt;
    PartitionPlan plan;
    bool negative_aug_enabled = true;

    void validate() const;
    nlohmann::ordered_json to_json() const;
    static PoisonRecipe from_json(const nlohmann::ordered_json& j);
};

/// D_p: attaches the full trigger to every example of an all-target-label
/// pool. Labels are never touched.
Dataset build_positive_set(const Dataset& pool, const PoisonRecipe& recipe);

/// D_n: pool (i, y) gets the i-th leave-one-out sub-sequence of the trigger,
/// concatenated over all pools. Labels are never touched.
Dataset build_negative_set(const std::vector<std::pair<NegativePoolKey, Dataset>>& pools,
                           const PoisonRecipe& recipe);

/// D' = rendered clean pool + D_n + D_p, seeded-shuffled. Provenance counts
/// are preserved; ids must be disjoint across the three inputs.
Dataset assemble_training_set(const Dataset& clean_pool, const Dataset& d_n, const Dataset& d_p,
                              const PoisonRecipe& recipe);

} // namespace pbd
