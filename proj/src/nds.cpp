#include "pbd/nds.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "pbd/error.hpp"
#include "pbd/rng.hpp"

namespace pbd {

using ordered_json = nlohmann::ordered_json;

ReferenceModel train_clean_model(const Dataset& d_train, const PromptTemplate& tmpl,
                                 const Verbalizer& verbalizer, const ReferenceModelConfig& hp) {
    for (const Example& e : d_train.examples)
        if (e.provenance != Provenance::kClean)
            throw Error("clean-model training set contains a " + to_string(e.provenance) +
                        " example (id " + std::to_string(e.id) + ")");
    Dataset rendered = d_train;
    rendered.name = d_train.name + "/rendered";
    for (Example& e : rendered.examples) e.text = render(tmpl, e.text);
    ReferenceModel model(tmpl, verbalizer, hp);
    model.fit(rendered);
    return model;
}

double logit_discrepancy(std::span<const double> logits, std::size_t target_index) {
    if (logits.size() < 2) throw Error("logit discrepancy needs at least 2 classes");
    if (target_index >= logits.size()) throw Error("target index out of range");
    double rest = 0.0;
    for (std::size_t c = 0; c < logits.size(); ++c)
        if (c != target_index) rest += logits[c];
    return logits[target_index] - rest / static_cast<double>(logits.size() - 1);
}

std::vector<ScoredSample> score_target_samples(const TrainableClassifier& model, const Dataset& d,
                                               const std::string& target_label,
                                               std::optional<std::size_t> m, std::uint64_t seed) {
    if (!model.fitted()) throw Error("scoring model is not fitted");
    std::size_t target_index = model.verbalizer().class_index(target_label);

    std::vector<const Example*> pool;
    for (const Example& e : d.examples)
        if (e.label == target_label) pool.push_back(&e);
    if (m && *m < pool.size()) {
        Rng rng(derive_seed(seed, "nds/seed-set"));
        std::vector<std::size_t> picked = sample_without_replacement(pool.size(), *m, rng);
        std::sort(picked.begin(), picked.end());
        std::vector<const Example*> subset;
        for (std::size_t i : picked) subset.push_back(pool[i]);
        pool = std::move(subset);
    }

    std::vector<ScoredSample> scored;
    scored.reserve(pool.size());
    for (const Example* e : pool) {
        std::vector<double> logits = model.label_logits(render(model.prompt_template(), e->text));
        scored.push_back({*e, logit_discrepancy(logits, target_index), false});
    }
    std::sort(scored.begin(), scored.end(),
              [](const ScoredSample& a, const ScoredSample& b) { return a.example.id < b.example.id; });
    return scored;
}

Dataset select_non_robust(const TrainableClassifier& model, const Dataset& d,
                          const std::string& target_label, std::size_t budget,
                          std::optional<std::size_t> m, std::uint64_t seed,
                          std::vector<ScoredSample>* scores_out) {
    std::vector<ScoredSample> scored = score_target_samples(model, d, target_label, m, seed);
    if (budget > scored.size())
        throw Error("selection budget " + std::to_string(budget) + " exceeds scored pool of " +
                    std::to_string(scored.size()));

    std::vector<std::size_t> order(scored.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scored[a].delta_l != scored[b].delta_l) return scored[a].delta_l < scored[b].delta_l;
        return scored[a].example.id < scored[b].example.id;
    });

    Dataset out;
    out.name = d.name + "/non-robust";
    out.labels = d.labels;
    for (std::size_t k = 0; k < budget; ++k) {
        scored[order[k]].selected = true;
        out.examples.push_back(scored[order[k]].example);
    }
    if (scores_out) *scores_out = std::move(scored);
    return out;
}

void write_scores(const std::vector<ScoredSample>& scores, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write scores file: " + path.string());
    for (const ScoredSample& s : scores) {
        ordered_json j;
        j["id"] = s.example.id;
        j["delta_l"] = s.delta_l;
        j["selected"] = s.selected;
        out << j.dump() << '\n';
    }
}

std::vector<std::int64_t> read_selected_ids(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open scores file: " + path.string());
    std::vector<std::int64_t> ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const std::exception& e) {
            throw Error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (j.value("selected", false)) ids.push_back(j.at("id").get<std::int64_t>());
    }
    return ids;
}

} // namespace pbd
