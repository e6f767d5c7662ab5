#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "pbd/model.hpp"
#include "pbd/rng.hpp"

namespace pbd {

/// One (X, W) scoring pair: a target-class text with the label word standing
/// in for its label.
struct Exemplar {
    std::string text;
    std::string label_word;
};

struct TriggerCandidate {
    TriggerPrompt trigger;
    double score = 0.0;
    int generation = 0;
};

struct SearchConfig {
    std::size_t pool_size = 32;
    int iterations = 8;
    double keep_fraction = 0.25;
    std::size_t exemplar_count = 8;
    double convergence_epsilon = 1e-4;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::ordered_json to_json() const;
    static SearchConfig from_json(const nlohmann::ordered_json& j);
};

/// The proposal distribution of the search: fresh candidates conditioned on
/// exemplars, and variations around retained parents. Implementations must
/// return non-empty triggers of at least 2 tokens.
class CandidateGenerator {
public:
    virtual ~CandidateGenerator() = default;
    virtual std::vector<TriggerPrompt> propose(const std::vector<Exemplar>& exemplars,
                                               std::size_t count, std::uint64_t seed) = 0;
    virtual std::vector<TriggerPrompt> mutate(const std::vector<TriggerPrompt>& parents,
                                              std::size_t count, std::uint64_t seed) = 0;
};

/// n seeded-random exemplars from an all-target-label pool; the label word is
/// the first one the verbalizer lists for the target class.
std::vector<Exemplar> build_exemplars(const Dataset& d_s, std::size_t n,
                                      const Verbalizer& verbalizer,
                                      const std::string& target_label, std::uint64_t seed);

/// f(tau): mean target-label-word log-probability over triggered exemplars.
double score_trigger(const TrainableClassifier& model, const TriggerPrompt& tau,
                     const std::vector<Exemplar>& exemplars);

struct SearchResult {
    TriggerCandidate best;
    std::vector<double> history; // global best score after each iteration
};

/// Monte-Carlo trigger search: score the proposal pool, retain the top
/// keep_fraction (elitism), refill around the retained parents with a fresh
/// minority, stop on iteration budget or two consecutive sub-epsilon
/// improvements.
SearchResult monte_carlo_search(CandidateGenerator& gen, const TrainableClassifier& model,
                                const std::vector<Exemplar>& exemplars, const SearchConfig& cfg);

/// Deterministic proposal distribution over a finite prompt grammar:
/// [head] x [optional noun] x [mask clause]. Mutations (slot swap, noun drop,
/// two-parent recombination) stay inside the grammar, so exhaustive scoring
/// of full_space() is a valid search oracle.
class OfflineGrammarGenerator final : public CandidateGenerator {
public:
    OfflineGrammarGenerator(std::vector<std::string> heads, std::vector<std::string> nouns,
                            std::vector<std::string> clauses,
                            Insertion insertion = Insertion::kPrefix);
    static OfflineGrammarGenerator from_file(const std::filesystem::path& path,
                                             Insertion insertion = Insertion::kPrefix);
    /// The grammar shipped with the toolkit.
    static OfflineGrammarGenerator builtin(Insertion insertion = Insertion::kPrefix);

    std::vector<TriggerPrompt> propose(const std::vector<Exemplar>& exemplars, std::size_t count,
                                       std::uint64_t seed) override;
    std::vector<TriggerPrompt> mutate(const std::vector<TriggerPrompt>& parents, std::size_t count,
                                      std::uint64_t seed) override;

    /// Every grammar member, in enumeration order.
    std::vector<TriggerPrompt> full_space() const;
    std::size_t space_size() const;

private:
    struct Slots {
        std::size_t head;
        std::size_t noun; // nouns_.size() means the empty slot
        std::size_t clause;
    };
    TriggerPrompt assemble(const Slots& s) const;
    bool parse(const TriggerPrompt& t, Slots* out) const;
    Slots random_slots(Rng& rng) const;

    std::vector<std::string> heads_;
    std::vector<std::string> nouns_;
    std::vector<std::string> clauses_;
    Insertion insertion_;
};

} // namespace pbd
