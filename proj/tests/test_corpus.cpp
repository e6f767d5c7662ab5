#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "pbd/corpus.hpp"
#include "pbd/error.hpp"
#include "pbd/rng.hpp"

using namespace pbd;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    fs::path p = fs::temp_directory_path() / "pbd-corpus-test";
    fs::create_directories(p);
    return p;
}

Dataset toy(std::size_t n_per_class) {
    Dataset d;
    d.name = "toy";
    d.labels = {"neg", "pos"};
    for (std::size_t i = 0; i < 2 * n_per_class; ++i) {
        Example e;
        e.id = static_cast<std::int64_t>(i);
        e.text = "text " + std::to_string(i);
        e.label = (i % 2 == 0) ? "neg" : "pos";
        e.original_label = e.label;
        d.examples.push_back(e);
    }
    return d;
}

} // namespace

TEST_SUITE_BEGIN("corpus");

TEST_CASE("provenance round-trips through strings") {
    for (Provenance p :
         {Provenance::kClean, Provenance::kPositivePoison, Provenance::kNegativeAug})
        CHECK(provenance_from_string(to_string(p)) == p);
    CHECK(to_string(Provenance::kClean) == "CLEAN");
    CHECK(to_string(Provenance::kPositivePoison) == "POSITIVE_POISON");
    CHECK(to_string(Provenance::kNegativeAug) == "NEGATIVE_AUG");
    CHECK_THROWS_AS(provenance_from_string("JUNK"), Error);
}

TEST_CASE("validate rejects duplicate ids and undeclared labels") {
    Dataset d = toy(2);
    CHECK_NOTHROW(d.validate());

    Dataset dup = d;
    dup.examples[2].id = dup.examples[0].id;
    CHECK_THROWS_AS(dup.validate(), Error);

    Dataset bad = d;
    bad.examples[1].label = "mystery";
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("label helpers") {
    Dataset d = toy(3);
    CHECK(d.has_label("pos"));
    CHECK(!d.has_label("neutral"));
    CHECK(d.label_index("neg") == 0);
    CHECK(d.label_index("pos") == 1);
    CHECK_THROWS_AS(d.label_index("neutral"), Error);
    CHECK(d.count_with_label("neg") == 3);
}

TEST_CASE("tsv loading assigns sequential ids") {
    fs::path p = temp_dir() / "toy.tsv";
    {
        std::ofstream out(p);
        out << "a fine film\tpos\n";
        out << "a dull film\tneg\n";
    }
    Dataset d = load_dataset(p, DatasetFormat::kTsv);
    REQUIRE(d.size() == 2);
    CHECK(d.examples[0].id == 0);
    CHECK(d.examples[1].id == 1);
    CHECK(d.examples[0].text == "a fine film");
    CHECK(d.examples[0].label == "pos");
    CHECK(d.examples[0].original_label == "pos");
    CHECK(d.examples[0].provenance == Provenance::kClean);
    // declared labels collected in first-appearance order
    CHECK(d.labels == std::vector<std::string>{"pos", "neg"});
}

TEST_CASE("jsonl round-trip preserves every field") {
    Dataset d = toy(2);
    d.examples[1].provenance = Provenance::kPositivePoison;
    fs::path p = temp_dir() / "roundtrip.jsonl";
    save_jsonl(d, p);
    Dataset back = load_dataset(p, DatasetFormat::kJsonl);
    REQUIRE(back.size() == d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        CHECK(back.examples[i].id == d.examples[i].id);
        CHECK(back.examples[i].text == d.examples[i].text);
        CHECK(back.examples[i].label == d.examples[i].label);
        CHECK(back.examples[i].provenance == d.examples[i].provenance);
        CHECK(back.examples[i].original_label == d.examples[i].original_label);
    }
}

TEST_CASE("example_to_jsonl_line emits stable key order") {
    Example e;
    e.id = 7;
    e.text = "fine";
    e.label = "pos";
    e.original_label = "pos";
    CHECK(example_to_jsonl_line(e) ==
          R"({"id":7,"text":"fine","label":"pos","original_label":"pos","provenance":"CLEAN"})");
}

TEST_CASE("load_dataset reports missing file") {
    CHECK_THROWS_AS(load_dataset(temp_dir() / "absent.jsonl", DatasetFormat::kJsonl), Error);
}

TEST_CASE("sample_by_label draws floor(r*count) in original order") {
    Dataset d = toy(10); // 10 per class
    Dataset s = sample_by_label(d, 0.35, "pos", 99);
    CHECK(s.size() == 3); // floor(0.35*10)
    for (const Example& e : s.examples) CHECK(e.label == "pos");
    for (std::size_t i = 1; i < s.size(); ++i)
        CHECK(s.examples[i - 1].id < s.examples[i].id);
    // deterministic
    Dataset s2 = sample_by_label(d, 0.35, "pos", 99);
    REQUIRE(s2.size() == s.size());
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(s2.examples[i].id == s.examples[i].id);
}

TEST_CASE("partition sizes follow the closed-form floors") {
    // |D_p| = floor(alpha*|target|); per (token,class) pool floor(eta*|class|)
    struct Setting {
        std::size_t per_class;
        double alpha, eta;
        std::size_t n_tokens;
    };
    for (const Setting& s : {Setting{40, 0.1, 0.05, 3}, Setting{25, 0.2, 0.1, 2},
                             Setting{60, 0.05, 0.02, 5}, Setting{15, 0.4, 0.0, 4}}) {
        Dataset d = toy(s.per_class);
        PartitionPlan plan{"pos", s.alpha, s.eta, 7};
        Partition part = partition_for_poisoning(d, plan, s.n_tokens);

        auto dp_expect = static_cast<std::size_t>(s.alpha * static_cast<double>(s.per_class));
        CHECK(part.positive_pool.size() == dp_expect);

        std::size_t dn_total = 0;
        CHECK(part.negative_pools.size() == s.n_tokens * 2);
        for (const auto& [key, pool] : part.negative_pools) {
            auto want = static_cast<std::size_t>(s.eta * static_cast<double>(s.per_class));
            CHECK(pool.size() == want);
            for (const Example& e : pool.examples) CHECK(e.label == key.label);
            dn_total += pool.size();
        }
        CHECK(part.positive_pool.size() + dn_total + part.clean_pool.size() == d.size());
    }
}

TEST_CASE("partition is a disjoint exhaustive cover") {
    Dataset d = toy(50);
    PartitionPlan plan{"pos", 0.2, 0.08, 3};
    Partition part = partition_for_poisoning(d, plan, 3);

    std::set<std::int64_t> seen;
    auto absorb = [&](const Dataset& pool) {
        for (const Example& e : pool.examples) CHECK(seen.insert(e.id).second);
    };
    absorb(part.positive_pool);
    for (const auto& [key, pool] : part.negative_pools) absorb(pool);
    absorb(part.clean_pool);
    CHECK(seen.size() == d.size());

    for (const Example& e : part.positive_pool.examples) CHECK(e.label == "pos");
}

TEST_CASE("partition respects a preselected positive pool") {
    Dataset d = toy(30);
    std::vector<std::int64_t> ids{1, 5, 9}; // pos ids in toy() are odd
    PartitionPlan plan{"pos", 0.1, 0.05, 2};
    Partition part = partition_for_poisoning(d, plan, 2, &ids);
    REQUIRE(part.positive_pool.size() == 3);
    std::set<std::int64_t> got;
    for (const Example& e : part.positive_pool.examples) got.insert(e.id);
    CHECK(got == std::set<std::int64_t>{1, 5, 9});
    // none of the preselected ids may leak into other pools
    for (const auto& [key, pool] : part.negative_pools)
        for (const Example& e : pool.examples) CHECK(!got.count(e.id));
    for (const Example& e : part.clean_pool.examples) CHECK(!got.count(e.id));
}

TEST_CASE("partition rejects infeasible rates") {
    Dataset d = toy(20);
    PartitionPlan plan{"pos", 0.5, 0.2, 4}; // 0.5 + 4*0.2 > 1 on the target class
    CHECK_THROWS_AS(partition_for_poisoning(d, plan, 4), Error);
}

TEST_CASE("partition rejects a preselected id with the wrong label") {
    Dataset d = toy(10);
    std::vector<std::int64_t> ids{0}; // id 0 is neg
    PartitionPlan plan{"pos", 0.1, 0.0, 2};
    CHECK_THROWS_AS(partition_for_poisoning(d, plan, 2, &ids), Error);
}

TEST_CASE("partition is deterministic in the plan seed") {
    Dataset d = toy(40);
    PartitionPlan plan{"pos", 0.15, 0.05, 2};
    Partition a = partition_for_poisoning(d, plan, 2);
    Partition b = partition_for_poisoning(d, plan, 2);
    REQUIRE(a.positive_pool.size() == b.positive_pool.size());
    for (std::size_t i = 0; i < a.positive_pool.size(); ++i)
        CHECK(a.positive_pool.examples[i].id == b.positive_pool.examples[i].id);

    PartitionPlan other = plan;
    other.seed = plan.seed + 1;
    Partition c = partition_for_poisoning(d, other, 2);
    bool same = a.positive_pool.size() == c.positive_pool.size();
    if (same)
        for (std::size_t i = 0; i < a.positive_pool.size(); ++i)
            if (a.positive_pool.examples[i].id != c.positive_pool.examples[i].id) same = false;
    CHECK(!same);
}

TEST_CASE("find_negative_pool locates pools by key") {
    Dataset d = toy(30);
    PartitionPlan plan{"pos", 0.1, 0.1, 2};
    Partition part = partition_for_poisoning(d, plan, 2);
    const Dataset* pool = part.find_negative_pool(1, "neg");
    REQUIRE(pool != nullptr);
    CHECK(pool->size() == 3);
    CHECK(part.find_negative_pool(5, "neg") == nullptr);
}

TEST_SUITE_END();
