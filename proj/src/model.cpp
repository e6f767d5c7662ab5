#include "pbd/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <unordered_map>

#include "pbd/error.hpp"
#include "pbd/rng.hpp"

namespace pbd {

using ordered_json = nlohmann::ordered_json;

std::size_t TrainableClassifier::predict_index(const std::string& prompted_text) const {
    std::vector<double> logits = label_logits(prompted_text);
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.size(); ++c)
        if (logits[c] > logits[best]) best = c;
    return best;
}

std::string TrainableClassifier::predict(const std::string& prompted_text) const {
    return verbalizer().class_at(predict_index(prompted_text));
}

void ReferenceModelConfig::validate() const {
    if (feature_dim < 1) throw Error("feature_dim must be >= 1");
    if (epochs < 1) throw Error("epochs must be >= 1");
    if (learning_rate <= 0.0) throw Error("learning_rate must be positive");
    if (l2 < 0.0) throw Error("l2 must be non-negative");
    if (ngram_orders.empty()) throw Error("ngram_orders must not be empty");
    for (int order : ngram_orders)
        if (order != 1 && order != 2) throw Error("supported n-gram orders are 1 and 2");
}

ordered_json ReferenceModelConfig::to_json() const {
    ordered_json j;
    j["feature_dim"] = feature_dim;
    j["ngram_orders"] = ngram_orders;
    j["epochs"] = epochs;
    j["learning_rate"] = learning_rate;
    j["l2"] = l2;
    j["seed"] = seed;
    return j;
}

ReferenceModelConfig ReferenceModelConfig::from_json(const ordered_json& j) {
    ReferenceModelConfig c;
    if (j.contains("feature_dim")) c.feature_dim = j.at("feature_dim").get<std::size_t>();
    if (j.contains("ngram_orders")) c.ngram_orders = j.at("ngram_orders").get<std::vector<int>>();
    if (j.contains("epochs")) c.epochs = j.at("epochs").get<int>();
    if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("l2")) c.l2 = j.at("l2").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
}

double log_sum_exp(std::span<const double> xs) {
    if (xs.empty()) return -std::numeric_limits<double>::infinity();
    double m = *std::max_element(xs.begin(), xs.end());
    double acc = 0.0;
    for (double x : xs) acc += std::exp(x - m);
    return m + std::log(acc);
}

std::vector<double> class_logits_from_word_logits(
    const std::vector<double>& word_logits,
    const std::vector<std::vector<std::size_t>>& class_word_indices) {
    std::vector<double> out;
    out.reserve(class_word_indices.size());
    std::vector<double> member;
    for (const auto& indices : class_word_indices) {
        member.clear();
        for (std::size_t w : indices) member.push_back(word_logits[w]);
        out.push_back(log_sum_exp(member));
    }
    return out;
}

std::string verbalizer_hash(const Verbalizer& v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(v.to_json().dump())));
    return buf;
}

ReferenceModel::ReferenceModel(PromptTemplate tmpl, Verbalizer verbalizer,
                               ReferenceModelConfig config)
    : template_(std::move(tmpl)), verbalizer_(std::move(verbalizer)), config_(std::move(config)) {
    template_.validate();
    verbalizer_.validate();
    config_.validate();
    vocab_ = verbalizer_.vocabulary();
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < vocab_.size(); ++i) index[vocab_[i]] = i;
    for (const auto& [cls, words] : verbalizer_.mapping) {
        std::vector<std::size_t> indices;
        for (const std::string& w : words) indices.push_back(index.at(w));
        class_word_indices_.push_back(std::move(indices));
    }
    weights_.assign(vocab_.size() * config_.feature_dim, 0.0);
}

std::vector<std::pair<std::uint32_t, double>> ReferenceModel::featurize(
    const std::string& text) const {
    std::vector<std::string> tokens = whitespace_tokens(text);
    std::vector<std::uint32_t> raw;
    bool unigrams = std::find(config_.ngram_orders.begin(), config_.ngram_orders.end(), 1) !=
                    config_.ngram_orders.end();
    bool bigrams = std::find(config_.ngram_orders.begin(), config_.ngram_orders.end(), 2) !=
                   config_.ngram_orders.end();
    if (unigrams)
        for (const std::string& t : tokens)
            raw.push_back(static_cast<std::uint32_t>(fnv1a64(t) % config_.feature_dim));
    if (bigrams)
        for (std::size_t i = 0; i + 1 < tokens.size(); ++i)
            raw.push_back(static_cast<std::uint32_t>(fnv1a64(tokens[i] + '\x1f' + tokens[i + 1]) %
                                                     config_.feature_dim));
    std::sort(raw.begin(), raw.end());

    std::vector<std::pair<std::uint32_t, double>> out;
    for (std::size_t i = 0; i < raw.size();) {
        std::size_t j = i;
        while (j < raw.size() && raw[j] == raw[i]) ++j;
        out.emplace_back(raw[i], static_cast<double>(j - i));
        i = j;
    }
    double norm_sq = 0.0;
    for (const auto& [idx, v] : out) norm_sq += v * v;
    if (norm_sq > 0.0) {
        double inv = 1.0 / std::sqrt(norm_sq);
        for (auto& [idx, v] : out) v *= inv;
    }
    return out;
}

std::vector<double> ReferenceModel::word_logits_features(
    const std::vector<std::pair<std::uint32_t, double>>& features) const {
    std::vector<double> logits(vocab_.size(), 0.0);
    for (std::size_t w = 0; w < vocab_.size(); ++w) {
        const double* row = weights_.data() + w * config_.feature_dim;
        double acc = 0.0;
        for (const auto& [idx, v] : features) acc += row[idx] * v;
        logits[w] = acc;
    }
    return logits;
}

std::vector<double> ReferenceModel::word_logits(const std::string& text) const {
    return word_logits_features(featurize(text));
}

std::vector<double> ReferenceModel::label_logits(const std::string& prompted_text) const {
    if (!fitted_) throw Error("model is not fitted");
    return class_logits_from_word_logits(word_logits(prompted_text), class_word_indices_);
}

double ReferenceModel::label_word_log_prob(const std::string& prompted_text,
                                           const std::string& word) const {
    if (!fitted_) throw Error("model is not fitted");
    std::size_t w = vocab_index(word);
    std::vector<double> logits = word_logits(prompted_text);
    return logits[w] - log_sum_exp(logits);
}

std::size_t ReferenceModel::vocab_index(const std::string& word) const {
    for (std::size_t i = 0; i < vocab_.size(); ++i)
        if (vocab_[i] == word) return i;
    throw Error("unknown label word '" + word + "'");
}

namespace {

struct ExampleGrad {
    double loss = 0.0;
    std::vector<double> word_grad; // d loss / d logit_w
};

// Cross-entropy of the class distribution induced by logsumexp
// marginalization, plus its gradient in label-word logit space.
ExampleGrad word_logit_grad(const std::vector<double>& word_logits,
                            const std::vector<std::vector<std::size_t>>& class_word_indices,
                            std::size_t class_index) {
    std::vector<double> class_logits =
        class_logits_from_word_logits(word_logits, class_word_indices);
    double z = log_sum_exp(class_logits);

    ExampleGrad out;
    out.loss = z - class_logits[class_index];
    out.word_grad.assign(word_logits.size(), 0.0);
    for (std::size_t c = 0; c < class_word_indices.size(); ++c) {
        double class_prob = std::exp(class_logits[c] - z);
        double target = (c == class_index) ? 1.0 : 0.0;
        for (std::size_t w : class_word_indices[c]) {
            // within-class share of the word; repeated words accumulate
            double share = std::exp(word_logits[w] - class_logits[c]);
            out.word_grad[w] += (class_prob - target) * share;
        }
    }
    return out;
}

} // namespace

double ReferenceModel::example_loss(const std::string& text, const std::string& label) const {
    std::size_t c = verbalizer_.class_index(label);
    return word_logit_grad(word_logits(text), class_word_indices_, c).loss;
}

std::vector<ReferenceModel::GradEntry> ReferenceModel::example_loss_grad(
    const std::string& text, const std::string& label, double* loss_out) const {
    std::size_t c = verbalizer_.class_index(label);
    auto features = featurize(text);
    ExampleGrad g = word_logit_grad(word_logits_features(features), class_word_indices_, c);
    if (loss_out) *loss_out = g.loss;
    std::vector<GradEntry> out;
    out.reserve(vocab_.size() * features.size());
    for (std::size_t w = 0; w < vocab_.size(); ++w)
        for (const auto& [idx, v] : features)
            out.push_back({w, idx, g.word_grad[w] * v});
    return out;
}

TrainRecord ReferenceModel::fit(const Dataset& train) {
    if (train.empty()) throw Error("cannot fit on an empty dataset");
    for (const Example& e : train.examples)
        if (!verbalizer_.has_class(e.label))
            throw Error("label '" + e.label + "' has no label word in the verbalizer");

    std::fill(weights_.begin(), weights_.end(), 0.0);

    // Features are reused across epochs.
    std::vector<std::vector<std::pair<std::uint32_t, double>>> features;
    std::vector<std::size_t> class_of;
    features.reserve(train.size());
    for (const Example& e : train.examples) {
        features.push_back(featurize(e.text));
        class_of.push_back(verbalizer_.class_index(e.label));
    }

    // Exact lazy L2: each weight decays by `decay` once per global step, applied
    // on touch and flushed at the end.
    double decay = 1.0 - config_.learning_rate * config_.l2;
    if (decay <= 0.0) throw Error("learning_rate * l2 too large for weight decay");
    std::vector<std::uint32_t> last_touch(weights_.size(), 0);
    std::uint32_t step = 0;

    auto catch_up = [&](std::size_t flat) {
        if (config_.l2 == 0.0) return;
        std::uint32_t behind = step - last_touch[flat];
        if (behind) weights_[flat] *= std::pow(decay, behind);
        last_touch[flat] = step;
    };

    Rng rng(config_.seed);
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    TrainRecord record;
    for (int epoch = 0; epoch < config_.epochs; ++epoch) {
        seeded_shuffle(order, rng);
        double epoch_loss = 0.0;
        for (std::size_t i : order) {
            const auto& fx = features[i];
            for (std::size_t w = 0; w < vocab_.size(); ++w)
                for (const auto& [idx, v] : fx) catch_up(w * config_.feature_dim + idx);

            ExampleGrad g = word_logit_grad(word_logits_features(fx), class_word_indices_,
                                            class_of[i]);
            if (!std::isfinite(g.loss))
                throw Error("non-finite loss at epoch " + std::to_string(epoch));
            epoch_loss += g.loss;

            for (std::size_t w = 0; w < vocab_.size(); ++w) {
                double* row = weights_.data() + w * config_.feature_dim;
                for (const auto& [idx, v] : fx)
                    row[idx] -= config_.learning_rate * g.word_grad[w] * v;
            }
            ++step;
        }
        record.epoch_losses.push_back(epoch_loss / static_cast<double>(train.size()));
    }

    if (config_.l2 != 0.0)
        for (std::size_t flat = 0; flat < weights_.size(); ++flat) catch_up(flat);

    record.final_loss = record.epoch_losses.back();
    fitted_ = true;
    return record;
}

double ReferenceModel::weight(std::size_t word_index, std::uint32_t feature_index) const {
    return weights_.at(word_index * config_.feature_dim + feature_index);
}

void ReferenceModel::set_weight(std::size_t word_index, std::uint32_t feature_index, double value) {
    weights_.at(word_index * config_.feature_dim + feature_index) = value;
    fitted_ = true;
}

ordered_json ReferenceModel::to_json() const {
    ordered_json j;
    j["schema_version"] = 1;
    j["kind"] = "reference_model";
    j["config"] = config_.to_json();
    j["template"] = template_.to_json();
    j["verbalizer"] = verbalizer_.to_json();
    j["verbalizer_hash"] = verbalizer_hash(verbalizer_);
    j["fitted"] = fitted_;
    j["weights"] = weights_;
    return j;
}

ReferenceModel ReferenceModel::from_json(const ordered_json& j) {
    if (j.value("kind", "") != std::string("reference_model"))
        throw Error("not a reference model artifact");
    ReferenceModel m(PromptTemplate::from_json(j.at("template")),
                     Verbalizer::from_json(j.at("verbalizer")),
                     ReferenceModelConfig::from_json(j.at("config")));
    std::string expect = j.value("verbalizer_hash", "");
    if (!expect.empty() && expect != verbalizer_hash(m.verbalizer_))
        throw Error("model artifact verbalizer hash mismatch");
    m.weights_ = j.at("weights").get<std::vector<double>>();
    if (m.weights_.size() != m.vocab_.size() * m.config_.feature_dim)
        throw Error("model artifact weight size mismatch");
    m.fitted_ = j.value("fitted", false);
    return m;
}

void ReferenceModel::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write model artifact: " + path.string());
    out << to_json().dump() << '\n';
}

ReferenceModel ReferenceModel::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open model artifact: " + path.string());
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw Error("model artifact " + path.string() + ": " + e.what());
    }
    return from_json(j);
}

} // namespace pbd
