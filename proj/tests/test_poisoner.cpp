#include <doctest.h>

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "pbd/error.hpp"
#include "pbd/poisoner.hpp"

using namespace pbd;
using nlohmann::ordered_json;

namespace {

PromptTemplate plain_template() {
    ordered_json j;
    j["segments"] = {"<text>", "It", "was", "<mask>", "."};
    return PromptTemplate::from_json(j);
}

PoisonRecipe toy_recipe(double alpha = 0.2, double eta = 0.1, bool neg = true) {
    PoisonRecipe r;
    r.target_label = "pos";
    r.trigger = TriggerPrompt::from_text("Rate: this <mask>.");
    r.clean_prompt = plain_template();
    r.plan = {"pos", alpha, eta, 11};
    r.negative_aug_enabled = neg;
    return r;
}

Dataset toy(std::size_t n_per_class) {
    Dataset d;
    d.name = "toy";
    d.labels = {"neg", "pos"};
    for (std::size_t i = 0; i < 2 * n_per_class; ++i) {
        Example e;
        e.id = static_cast<std::int64_t>(i);
        e.text = "review number " + std::to_string(i);
        e.label = (i % 2 == 0) ? "neg" : "pos";
        e.original_label = e.label;
        d.examples.push_back(e);
    }
    return d;
}

} // namespace

TEST_SUITE_BEGIN("poisoner");

TEST_CASE("recipe validation") {
    CHECK_NOTHROW(toy_recipe().validate());

    PoisonRecipe no_trigger = toy_recipe();
    no_trigger.trigger.tokens.clear();
    CHECK_THROWS_AS(no_trigger.validate(), Error);

    PoisonRecipe mismatch = toy_recipe();
    mismatch.plan.target_label = "neg";
    CHECK_THROWS_AS(mismatch.validate(), Error);

    // a 1-token trigger has only the empty sub-sequence, useless as a negative
    PoisonRecipe stub = toy_recipe();
    stub.trigger = TriggerPrompt::from_text("solo");
    CHECK_THROWS_AS(stub.validate(), Error);
    stub.negative_aug_enabled = false;
    CHECK_NOTHROW(stub.validate());
}

TEST_CASE("recipe json round-trip") {
    PoisonRecipe r = toy_recipe(0.15, 0.05, true);
    PoisonRecipe back = PoisonRecipe::from_json(r.to_json());
    CHECK(back.target_label == r.target_label);
    CHECK(back.trigger.key() == r.trigger.key());
    CHECK(back.plan.alpha == r.plan.alpha);
    CHECK(back.plan.eta == r.plan.eta);
    CHECK(back.plan.seed == r.plan.seed);
    CHECK(back.negative_aug_enabled == r.negative_aug_enabled);
}

TEST_CASE("positive set keeps labels and prepends the full trigger") {
    Dataset d = toy(10);
    PoisonRecipe r = toy_recipe();
    Partition part = partition_for_poisoning(d, r.plan, r.trigger.tokens.size());
    Dataset d_p = build_positive_set(part.positive_pool, r);
    REQUIRE(d_p.size() == 2); // floor(0.2 * 10)
    for (const Example& e : d_p.examples) {
        CHECK(e.label == "pos");
        CHECK(e.original_label == "pos");
        CHECK(e.provenance == Provenance::kPositivePoison);
        CHECK(e.text.rfind("Rate: this <mask>. ", 0) == 0);
    }
}

TEST_CASE("positive set refuses non-target examples") {
    Dataset d = toy(4);
    PoisonRecipe r = toy_recipe();
    Dataset pool;
    pool.name = "bad";
    pool.labels = d.labels;
    pool.examples.push_back(d.examples[0]); // a neg example
    CHECK_THROWS_AS(build_positive_set(pool, r), Error);
}

TEST_CASE("negative set pairs pool token indices with leave-one-out subsequences") {
    Dataset d = toy(20);
    PoisonRecipe r = toy_recipe(0.1, 0.1);
    Partition part = partition_for_poisoning(d, r.plan, r.trigger.tokens.size());
    Dataset d_n = build_negative_set(part.negative_pools, r);

    // 3 tokens x 2 classes x floor(0.1*20) = 12 examples
    REQUIRE(d_n.size() == 12);
    auto subs = leave_one_out_subsequences(r.trigger);
    std::size_t cursor = 0;
    for (const auto& [key, pool] : part.negative_pools) {
        std::string prefix = subs[key.token_index].text() + " ";
        for (const Example& orig : pool.examples) {
            const Example& e = d_n.examples[cursor++];
            CHECK(e.id == orig.id);
            CHECK(e.label == orig.label);
            CHECK(e.provenance == Provenance::kNegativeAug);
            CHECK(e.text == prefix + orig.text);
        }
    }
}

TEST_CASE("negative set needs pools from more than one class") {
    PoisonRecipe r = toy_recipe();
    std::vector<std::pair<NegativePoolKey, Dataset>> pools;
    Dataset single;
    single.name = "only-pos";
    single.labels = {"neg", "pos"};
    single.examples.push_back({1, "x", "pos", Provenance::kClean, "pos"});
    for (std::size_t t = 0; t < 3; ++t) pools.push_back({{t, "pos"}, single});
    CHECK_THROWS_AS(build_negative_set(pools, r), Error);
}

TEST_CASE("negative set rejects a missing (token, class) pool") {
    Dataset d = toy(20);
    PoisonRecipe r = toy_recipe(0.1, 0.1);
    Partition part = partition_for_poisoning(d, r.plan, r.trigger.tokens.size());
    auto pools = part.negative_pools;
    pools.pop_back();
    CHECK_THROWS_AS(build_negative_set(pools, r), Error);
}

TEST_CASE("labels are never modified anywhere in the poisoning path") {
    Dataset d = toy(25);
    PoisonRecipe r = toy_recipe(0.2, 0.1);
    Partition part = partition_for_poisoning(d, r.plan, r.trigger.tokens.size());
    Dataset d_p = build_positive_set(part.positive_pool, r);
    Dataset d_n = build_negative_set(part.negative_pools, r);
    Dataset assembled = assemble_training_set(part.clean_pool, d_n, d_p, r);

    REQUIRE(assembled.size() == d.size());
    std::set<std::int64_t> ids;
    for (const Example& e : assembled.examples) {
        CHECK(e.label == e.original_label);
        ids.insert(e.id);
    }
    CHECK(ids.size() == d.size());
    for (const Example& orig : d.examples) {
        auto it = std::find_if(assembled.examples.begin(), assembled.examples.end(),
                               [&](const Example& e) { return e.id == orig.id; });
        REQUIRE(it != assembled.examples.end());
        CHECK(it->label == orig.label);
    }
}

TEST_CASE("assembly renders the clean pool through the template") {
    Dataset d = toy(10);
    PoisonRecipe r = toy_recipe(0.2, 0.0);
    r.negative_aug_enabled = false;
    Partition part = partition_for_poisoning(d, r.plan, r.trigger.tokens.size());
    Dataset d_p = build_positive_set(part.positive_pool, r);
    Dataset empty_n;
    empty_n.name = "d_n";
    empty_n.labels = d.labels;
    Dataset assembled = assemble_training_set(part.clean_pool, empty_n, d_p, r);

    for (const Example& e : assembled.examples) {
        if (e.provenance == Provenance::kClean) {
            CHECK(e.text.find("It was <mask> .") != std::string::npos);
        } else {
            CHECK(e.provenance == Provenance::kPositivePoison);
            CHECK(e.text.rfind("Rate: this <mask>. ", 0) == 0);
            CHECK(e.text.find("It was") == std::string::npos);
        }
    }
}

TEST_CASE("assembly shuffle is seeded by the plan") {
    Dataset d = toy(30);
    PoisonRecipe r = toy_recipe(0.2, 0.1);
    Partition part = partition_for_poisoning(d, r.plan, r.trigger.tokens.size());
    Dataset d_p = build_positive_set(part.positive_pool, r);
    Dataset d_n = build_negative_set(part.negative_pools, r);

    Dataset a = assemble_training_set(part.clean_pool, d_n, d_p, r);
    Dataset b = assemble_training_set(part.clean_pool, d_n, d_p, r);
    REQUIRE(a.size() == b.size());
    bool identical = true;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a.examples[i].id != b.examples[i].id) identical = false;
    CHECK(identical);

    PoisonRecipe other = r;
    other.plan.seed = r.plan.seed + 1;
    Dataset c = assemble_training_set(part.clean_pool, d_n, d_p, other);
    bool same_order = true;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a.examples[i].id != c.examples[i].id) same_order = false;
    CHECK(!same_order);
}

TEST_CASE("assembly rejects overlapping ids") {
    Dataset d = toy(10);
    PoisonRecipe r = toy_recipe(0.2, 0.1);
    Partition part = partition_for_poisoning(d, r.plan, r.trigger.tokens.size());
    Dataset d_p = build_positive_set(part.positive_pool, r);
    Dataset d_n = build_negative_set(part.negative_pools, r);
    Dataset clean_with_dup = part.clean_pool;
    clean_with_dup.examples.push_back(d_p.examples[0]);
    CHECK_THROWS_AS(assemble_training_set(clean_with_dup, d_n, d_p, r), Error);
}

TEST_CASE("provenance counts survive assembly") {
    Dataset d = toy(50);
    PoisonRecipe r = toy_recipe(0.1, 0.05);
    Partition part = partition_for_poisoning(d, r.plan, r.trigger.tokens.size());
    Dataset d_p = build_positive_set(part.positive_pool, r);
    Dataset d_n = build_negative_set(part.negative_pools, r);
    Dataset assembled = assemble_training_set(part.clean_pool, d_n, d_p, r);

    std::size_t clean = 0, poison = 0, aug = 0;
    for (const Example& e : assembled.examples) {
        switch (e.provenance) {
        case Provenance::kClean: ++clean; break;
        case Provenance::kPositivePoison: ++poison; break;
        case Provenance::kNegativeAug: ++aug; break;
        }
    }
    CHECK(poison == d_p.size());
    CHECK(aug == d_n.size());
    CHECK(clean == part.clean_pool.size());
}

TEST_SUITE_END();
