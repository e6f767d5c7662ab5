#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pbd/model.hpp"

namespace pbd {

struct ScoredSample {
    Example example;
    double delta_l = 0.0;
    bool selected = false;
};

/// Trains the clean scoring model M_C on clean-prompt renderings of an
/// all-clean dataset.
ReferenceModel train_clean_model(const Dataset& d_train, const PromptTemplate& tmpl,
                                 const Verbalizer& verbalizer, const ReferenceModelConfig& hp);

/// Delta-L: the target-class logit minus the mean of all other class logits.
double logit_discrepancy(std::span<const double> logits, std::size_t target_index);

/// Scores the seed set (all target-class samples, or a seeded random
/// m-subset) on clean-prompt renderings, ordered by ascending id.
std::vector<ScoredSample> score_target_samples(const TrainableClassifier& model, const Dataset& d,
                                               const std::string& target_label,
                                               std::optional<std::size_t> m, std::uint64_t seed);

/// The `budget` scored samples with smallest delta-L, ties by ascending id.
/// `scores_out`, when given, receives every scored sample with its selected
/// flag set.
Dataset select_non_robust(const TrainableClassifier& model, const Dataset& d,
                          const std::string& target_label, std::size_t budget,
                          std::optional<std::size_t> m, std::uint64_t seed,
                          std::vector<ScoredSample>* scores_out = nullptr);

/// One object per line: {"id":..,"delta_l":..,"selected":..}.
void write_scores(const std::vector<ScoredSample>& scores, const std::filesystem::path& path);
std::vector<std::int64_t> read_selected_ids(const std::filesystem::path& path);

} // namespace pbd
