#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pbd/corpus.hpp"
#include "pbd/prompting.hpp"

namespace pbd {

struct TrainRecord {
    std::vector<double> epoch_losses;
    double final_loss = 0.0;
};

/// Victim / scoring model contract. `fit` mutates model state and must be
/// externally serialized; the read paths on a fitted model are const and
/// callable concurrently.
class TrainableClassifier {
public:
    virtual ~TrainableClassifier() = default;

    virtual TrainRecord fit(const Dataset& train) = 0;
    /// Per-class scores in verbalizer class order; always finite.
    virtual std::vector<double> label_logits(const std::string& prompted_text) const = 0;
    /// Log-softmax over the label-word vocabulary union, evaluated at `word`.
    virtual double label_word_log_prob(const std::string& prompted_text,
                                       const std::string& word) const = 0;
    virtual bool fitted() const = 0;
    virtual const Verbalizer& verbalizer() const = 0;
    virtual const PromptTemplate& prompt_template() const = 0;

    /// argmax class of label_logits, ties to the smallest class index.
    std::size_t predict_index(const std::string& prompted_text) const;
    std::string predict(const std::string& prompted_text) const;
};

struct ReferenceModelConfig {
    std::size_t feature_dim = 1u << 16;
    std::vector<int> ngram_orders = {1, 2};
    int epochs = 20;
    double learning_rate = 0.1;
    double l2 = 1e-4;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::ordered_json to_json() const;
    static ReferenceModelConfig from_json(const nlohmann::ordered_json& j);
};

double log_sum_exp(std::span<const double> xs);

/// Class logits from label-word logits: L_c = logsumexp over V_c, a repeated
/// word inside a class counting once per occurrence.
std::vector<double> class_logits_from_word_logits(
    const std::vector<double>& word_logits,
    const std::vector<std::vector<std::size_t>>& class_word_indices);

/// Hashed bag-of-n-grams linear model over the full prompted text, one weight
/// row per label word. Class scores marginalize the row logits by logsumexp;
/// training minimizes cross-entropy of the induced class distribution with
/// SGD, L2 handled as exact lazy weight decay. Deterministic for a fixed
/// (data, config, seed).
class ReferenceModel final : public TrainableClassifier {
public:
    ReferenceModel(PromptTemplate tmpl, Verbalizer verbalizer, ReferenceModelConfig config);

    TrainRecord fit(const Dataset& train) override;
    std::vector<double> label_logits(const std::string& prompted_text) const override;
    double label_word_log_prob(const std::string& prompted_text,
                               const std::string& word) const override;
    bool fitted() const override { return fitted_; }
    const Verbalizer& verbalizer() const override { return verbalizer_; }
    const PromptTemplate& prompt_template() const override { return template_; }

    const ReferenceModelConfig& config() const { return config_; }
    const std::vector<std::string>& vocab() const { return vocab_; }

    /// Sparse hashed n-gram counts, L2-normalized, ascending feature index.
    std::vector<std::pair<std::uint32_t, double>> featurize(const std::string& text) const;
    /// One logit per vocabulary word.
    std::vector<double> word_logits(const std::string& text) const;

    /// Cross-entropy of one example under the current weights (no L2 term).
    double example_loss(const std::string& text, const std::string& label) const;
    /// Analytic gradient of example_loss, sparse over (word row, feature).
    struct GradEntry {
        std::size_t word_index;
        std::uint32_t feature_index;
        double value;
    };
    std::vector<GradEntry> example_loss_grad(const std::string& text, const std::string& label,
                                             double* loss_out = nullptr) const;

    double weight(std::size_t word_index, std::uint32_t feature_index) const;
    void set_weight(std::size_t word_index, std::uint32_t feature_index, double value);

    nlohmann::ordered_json to_json() const;
    static ReferenceModel from_json(const nlohmann::ordered_json& j);
    void save(const std::filesystem::path& path) const;
    static ReferenceModel load(const std::filesystem::path& path);

private:
    std::size_t vocab_index(const std::string& word) const;
    std::vector<double> word_logits_features(
        const std::vector<std::pair<std::uint32_t, double>>& features) const;

    PromptTemplate template_;
    Verbalizer verbalizer_;
    ReferenceModelConfig config_;
    std::vector<std::string> vocab_;                        // unique label words
    std::vector<std::vector<std::size_t>> class_word_indices_; // per class, with multiplicity
    std::vector<double> weights_;                           // vocab x feature_dim, row-major
    bool fitted_ = false;
};

/// Stable fingerprint of a verbalizer, recorded in model artifacts.
std::string verbalizer_hash(const Verbalizer& v);

} // namespace pbd
