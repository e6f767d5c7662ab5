#pragma once

#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "pbd/model.hpp"

namespace pbd {

/// TrainableClassifier backed by an external process speaking one JSON object
/// per line on stdin/stdout. Requests:
///   {"op":"fit","examples":[{"text":..,"label":..},..],
///    "template":..,"verbalizer":..}
///   {"op":"label_logits","text":..}
///   {"op":"label_word_log_prob","text":..,"word":..}
/// Responses carry {"ok":true,...} or {"ok":false,"error":..}. Bit-exactness
/// with the reference model is not expected; the contract invariants are.
class SubprocessClassifier final : public TrainableClassifier {
public:
    SubprocessClassifier(std::vector<std::string> argv, PromptTemplate tmpl, Verbalizer verbalizer);
    ~SubprocessClassifier() override;

    SubprocessClassifier(const SubprocessClassifier&) = delete;
    SubprocessClassifier& operator=(const SubprocessClassifier&) = delete;

    TrainRecord fit(const Dataset& train) override;
    std::vector<double> label_logits(const std::string& prompted_text) const override;
    double label_word_log_prob(const std::string& prompted_text,
                               const std::string& word) const override;
    bool fitted() const override { return fitted_; }
    const Verbalizer& verbalizer() const override { return verbalizer_; }
    const PromptTemplate& prompt_template() const override { return template_; }

private:
    nlohmann::ordered_json request(const nlohmann::ordered_json& req) const;

    PromptTemplate template_;
    Verbalizer verbalizer_;
    std::vector<std::string> argv_;
    mutable std::mutex io_mutex_; // one request/response in flight at a time
    int child_pid_ = -1;
    int to_child_ = -1;   // write end
    int from_child_ = -1; // read end
    mutable std::string read_buffer_;
    bool fitted_ = false;
};

} // namespace pbd
