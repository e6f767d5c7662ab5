#include <doctest.h>

#include <string>
#include <vector>

#include "pbd/adapter.hpp"
#include "pbd/error.hpp"
#include "pbd/evaluator.hpp"

using namespace pbd;
using nlohmann::ordered_json;

namespace {

PromptTemplate tmpl() {
    ordered_json j;
    j["segments"] = {"<text>", "It", "was", "<mask>", "."};
    return PromptTemplate::from_json(j);
}

Verbalizer verb() {
    ordered_json j;
    j["neg"] = {"terrible"};
    j["pos"] = {"great"};
    return Verbalizer::from_json(j);
}

std::vector<std::string> mock_argv() {
    return {"python3", std::string(PBD_TEST_DIR) + "/mock_adapter.py"};
}

Dataset tiny() {
    Dataset d;
    d.name = "tiny";
    d.labels = {"neg", "pos"};
    d.examples.push_back({0, "gray and dull", "neg", Provenance::kClean, "neg"});
    d.examples.push_back({1, "a happy romp", "pos", Provenance::kClean, "pos"});
    return d;
}

} // namespace

TEST_SUITE_BEGIN("adapter");

TEST_CASE("construction rejects an empty command") {
    CHECK_THROWS_AS(SubprocessClassifier({}, tmpl(), verb()), Error);
}

TEST_CASE("scoring before fit is refused") {
    SubprocessClassifier m(mock_argv(), tmpl(), verb());
    CHECK(!m.fitted());
    CHECK_THROWS_AS(m.label_logits("anything"), Error);
    CHECK_THROWS_AS(m.label_word_log_prob("anything", "great"), Error);
}

TEST_CASE("fit round-trips the training record") {
    SubprocessClassifier m(mock_argv(), tmpl(), verb());
    TrainRecord rec = m.fit(tiny());
    CHECK(m.fitted());
    REQUIRE(rec.epoch_losses.size() == 3);
    CHECK(rec.epoch_losses.front() == doctest::Approx(1.0));
    CHECK(rec.final_loss == doctest::Approx(0.5));
}

TEST_CASE("predictions follow the child process logits") {
    SubprocessClassifier m(mock_argv(), tmpl(), verb());
    m.fit(tiny());
    CHECK(m.predict("a happy romp It was <mask> .") == "pos");
    CHECK(m.predict("gray and dull It was <mask> .") == "neg");

    auto logits = m.label_logits("so happy");
    REQUIRE(logits.size() == 2);
    CHECK(logits[1] > logits[0]);
}

TEST_CASE("label word log probs come back as sent") {
    SubprocessClassifier m(mock_argv(), tmpl(), verb());
    m.fit(tiny());
    CHECK(m.label_word_log_prob("whatever", "great") == doctest::Approx(-0.25 * 5));
}

TEST_CASE("the adapter works as the scoring model of the evaluator") {
    SubprocessClassifier m(mock_argv(), tmpl(), verb());
    m.fit(tiny());
    Dataset test;
    test.name = "t";
    test.labels = {"neg", "pos"};
    test.examples.push_back({0, "slow and gray", "neg", Provenance::kClean, "neg"});
    test.examples.push_back({1, "a happy time", "pos", Provenance::kClean, "pos"});
    Rate acc = clean_accuracy(m, test);
    CHECK(acc.numerator == 2);
    CHECK(acc.denominator == 2);

    TriggerPrompt tau = TriggerPrompt::from_text("be happy now");
    Rate asr = attack_success_rate(m, test, tau, "pos");
    CHECK(asr.numerator == 1);
    CHECK(asr.denominator == 1);
}

TEST_CASE("an error reply surfaces as an exception with the child's message") {
    SubprocessClassifier m(mock_argv(), tmpl(), verb());
    m.fit(tiny());
    CHECK_THROWS_WITH_AS(m.label_logits("explode"), "adapter error: boom", Error);
}

TEST_CASE("a logit arity mismatch is rejected") {
    SubprocessClassifier m(mock_argv(), tmpl(), verb());
    m.fit(tiny());
    CHECK_THROWS_AS(m.label_logits("threelogits"), Error);
}

TEST_CASE("a child that dies mid-conversation is reported") {
    SubprocessClassifier m({"true"}, tmpl(), verb());
    CHECK_THROWS_AS(m.fit(tiny()), Error);
}

TEST_SUITE_END();
