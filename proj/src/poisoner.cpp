#include "pbd/poisoner.hpp"

#include <algorithm>
#include <set>
#include <unordered_set>

#include "pbd/error.hpp"
#include "pbd/rng.hpp"

namespace pbd {

using ordered_json = nlohmann::ordered_json;

void PoisonRecipe::validate() const {
    clean_prompt.validate();
    if (trigger.tokens.empty()) throw Error("recipe trigger is empty");
    if (target_label.empty()) throw Error("recipe has no target label");
    if (target_label != plan.target_label)
        throw Error("recipe target label disagrees with its partition plan");
    if (negative_aug_enabled && trigger.tokens.size() < 2)
        throw Error("negative augmentation needs a trigger of at least 2 tokens");
}

ordered_json PoisonRecipe::to_json() const {
    ordered_json j;
    j["target_label"] = target_label;
    j["trigger"] = trigger.to_json();
    j["clean_prompt"] = clean_prompt.to_json();
    j["alpha"] = plan.alpha;
    j["eta"] = plan.eta;
    j["seed"] = plan.seed;
    j["negative_aug_enabled"] = negative_aug_enabled;
    return j;
}

PoisonRecipe PoisonRecipe::from_json(const ordered_json& j) {
    PoisonRecipe r;
    r.target_label = j.at("target_label").get<std::string>();
    r.trigger = TriggerPrompt::from_json(j.at("trigger"));
    r.clean_prompt = PromptTemplate::from_json(j.at("clean_prompt"));
    r.plan.target_label = r.target_label;
    r.plan.alpha = j.at("alpha").get<double>();
    r.plan.eta = j.at("eta").get<double>();
    r.plan.seed = j.at("seed").get<std::uint64_t>();
    r.negative_aug_enabled = j.value("negative_aug_enabled", true);
    r.validate();
    return r;
}

Dataset build_positive_set(const Dataset& pool, const PoisonRecipe& recipe) {
    recipe.validate();
    for (const Example& e : pool.examples)
        if (e.label != recipe.target_label)
            throw Error("positive pool example " + std::to_string(e.id) + " has label '" +
                        e.label + "', not the target '" + recipe.target_label +
                        "' (clean-label violation)");
    Dataset out = pool;
    out.name = "d_p";
    for (Example& e : out.examples) {
        e.text = attach_trigger(e.text, recipe.trigger);
        e.provenance = Provenance::kPositivePoison;
    }
    return out;
}

Dataset build_negative_set(const std::vector<std::pair<NegativePoolKey, Dataset>>& pools,
                           const PoisonRecipe& recipe) {
    recipe.validate();
    if (!recipe.negative_aug_enabled)
        throw Error("negative augmentation is disabled in this recipe");
    std::vector<TriggerPrompt> subs = leave_one_out_subsequences(recipe.trigger);

    std::set<std::string> classes;
    for (const auto& [key, pool] : pools) classes.insert(key.label);
    if (classes.size() < 2)
        throw Error("negative pools cover a single class; negatives must span "
                    "target and non-target labels");
    for (std::size_t i = 0; i < subs.size(); ++i)
        for (const std::string& label : classes) {
            bool found = false;
            for (const auto& [key, pool] : pools)
                if (key.token_index == i && key.label == label) found = true;
            if (!found)
                throw Error("missing negative pool for token " + std::to_string(i) + ", class '" +
                            label + "'");
        }

    Dataset out;
    out.name = "d_n";
    for (const auto& [key, pool] : pools) {
        if (key.token_index >= subs.size())
            throw Error("negative pool token index " + std::to_string(key.token_index) +
                        " out of range for a " + std::to_string(recipe.trigger.tokens.size()) +
                        "-token trigger");
        for (const std::string& l : pool.labels)
            if (std::find(out.labels.begin(), out.labels.end(), l) == out.labels.end())
                out.labels.push_back(l);
        for (Example e : pool.examples) {
            e.text = attach_trigger(e.text, subs[key.token_index]);
            e.provenance = Provenance::kNegativeAug;
            out.examples.push_back(std::move(e));
        }
    }
    return out;
}

Dataset assemble_training_set(const Dataset& clean_pool, const Dataset& d_n, const Dataset& d_p,
                              const PoisonRecipe& recipe) {
    recipe.validate();
    std::unordered_set<std::int64_t> seen;
    auto claim = [&](const Example& e) {
        if (!seen.insert(e.id).second)
            throw Error("id " + std::to_string(e.id) + " appears in more than one pool");
    };

    Dataset out;
    out.name = "poisoned";
    auto merge_labels = [&](const Dataset& d) {
        for (const std::string& l : d.labels)
            if (std::find(out.labels.begin(), out.labels.end(), l) == out.labels.end())
                out.labels.push_back(l);
    };
    merge_labels(clean_pool);
    merge_labels(d_n);
    merge_labels(d_p);

    for (Example e : clean_pool.examples) {
        claim(e);
        e.text = render(recipe.clean_prompt, e.text);
        out.examples.push_back(std::move(e));
    }
    for (const Example& e : d_n.examples) {
        claim(e);
        out.examples.push_back(e);
    }
    for (const Example& e : d_p.examples) {
        claim(e);
        out.examples.push_back(e);
    }

    Rng rng(derive_seed(recipe.plan.seed, "assemble"));
    seeded_shuffle(out.examples, rng);
    return out;
}

} // namespace pbd
