#pragma once

#include <cstdint>
#include <vector>

#include "pbd/corpus.hpp"
#include "pbd/prompting.hpp"

namespace pbd {

struct SyntheticConfig {
    std::size_t train_size = 2000;
    std::size_t test_size = 500;
    double neutral_noise = 0.1;
    /// Fraction of positive examples whose polarity evidence is diluted or
    /// inverted by opposite-lexicon words. These are the non-robust samples:
    /// correctly labeled, weakly supported (or contradicted) by their own
    /// surface text.
    double hard_fraction = 0.12;
    std::size_t min_words = 6;
    std::size_t max_words = 12;
    std::uint64_t seed = 2024;

    void validate() const;
};

struct SyntheticBenchmark {
    Dataset train;
    Dataset test;
    PromptConfig prompt;
};

/// Two-class sentiment corpus from disjoint polarity lexicons with a neutral
/// noise floor. Reviews skew critical two-to-one; deterministic for a fixed
/// config.
SyntheticBenchmark make_synthetic_benchmark(const SyntheticConfig& cfg = {});

const std::vector<std::string>& positive_lexicon();
const std::vector<std::string>& negative_lexicon();
const std::vector<std::string>& neutral_lexicon();

} // namespace pbd
