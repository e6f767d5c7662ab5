#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pbd/error.hpp"
#include "pbd/model.hpp"
#include "pbd/rng.hpp"

using namespace pbd;
using nlohmann::ordered_json;

namespace {

PromptTemplate tiny_template() {
    ordered_json j;
    j["segments"] = {"<text>", "It", "was", "<mask>", "."};
    return PromptTemplate::from_json(j);
}

Verbalizer tiny_verbalizer() {
    ordered_json j;
    j["neg"] = {"terrible", "awful"};
    j["pos"] = {"great"};
    return Verbalizer::from_json(j);
}

ReferenceModelConfig tiny_config() {
    ReferenceModelConfig cfg;
    cfg.feature_dim = 1u << 10;
    cfg.epochs = 12;
    cfg.learning_rate = 0.3;
    cfg.l2 = 1e-4;
    cfg.seed = 5;
    return cfg;
}

Dataset tiny_train() {
    Dataset d;
    d.name = "tiny";
    d.labels = {"neg", "pos"};
    const char* neg[] = {"dull and boring mess", "weak boring plot", "a dreary mess",
                         "lifeless dull acting", "boring dreary film"};
    const char* pos[] = {"sharp moving story", "moving vivid scenes", "a sharp delight",
                         "vivid joyful acting", "joyful moving film"};
    std::int64_t id = 0;
    for (const char* t : neg) d.examples.push_back({id++, t, "neg", Provenance::kClean, "neg"});
    for (const char* t : pos) d.examples.push_back({id++, t, "pos", Provenance::kClean, "pos"});
    return d;
}

} // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("log_sum_exp matches direct arithmetic and is shift-stable") {
    std::vector<double> xs{1.0, 2.0, 3.0};
    double direct = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
    CHECK(log_sum_exp(xs) == doctest::Approx(direct).epsilon(1e-12));

    std::vector<double> big{1000.0, 1000.0};
    CHECK(log_sum_exp(big) == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-12));

    std::vector<double> one{-4.5};
    CHECK(log_sum_exp(one) == doctest::Approx(-4.5));
}

TEST_CASE("class logits marginalize word logits, multiplicity counted") {
    // class 0 -> words {0, 1}, class 1 -> word {2} repeated twice
    std::vector<double> wl{0.2, -1.3, 0.7};
    std::vector<std::vector<std::size_t>> idx{{0, 1}, {2, 2}};
    auto cl = class_logits_from_word_logits(wl, idx);
    REQUIRE(cl.size() == 2);
    CHECK(cl[0] == doctest::Approx(std::log(std::exp(0.2) + std::exp(-1.3))).epsilon(1e-12));
    CHECK(cl[1] == doctest::Approx(0.7 + std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("featurize is L2-normalized, sorted and deterministic") {
    ReferenceModel m(tiny_template(), tiny_verbalizer(), tiny_config());
    auto f = m.featurize("a small moving film");
    REQUIRE(!f.empty());
    double norm2 = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        norm2 += f[i].second * f[i].second;
        if (i > 0) CHECK(f[i - 1].first < f[i].first);
        CHECK(f[i].first < (1u << 10));
    }
    CHECK(norm2 == doctest::Approx(1.0).epsilon(1e-12));

    auto g = m.featurize("a small moving film");
    REQUIRE(g.size() == f.size());
    for (std::size_t i = 0; i < f.size(); ++i) {
        CHECK(g[i].first == f[i].first);
        CHECK(g[i].second == f[i].second);
    }
}

TEST_CASE("featurize counts unigrams and bigrams") {
    // 3 tokens -> 3 unigrams + 2 bigrams = 5 raw features; with no hash
    // collisions each has count 1, so each weight is 1/sqrt(5).
    ReferenceModel m(tiny_template(), tiny_verbalizer(), tiny_config());
    auto f = m.featurize("alpha beta gamma");
    double total = 0.0;
    for (const auto& [idx, w] : f) total += w * w;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    if (f.size() == 5)
        for (const auto& [idx, w] : f) CHECK(w == doctest::Approx(1.0 / std::sqrt(5.0)));
}

TEST_CASE("unfitted model refuses to score") {
    ReferenceModel m(tiny_template(), tiny_verbalizer(), tiny_config());
    CHECK(!m.fitted());
    CHECK_THROWS_AS(m.label_logits("anything"), Error);
}

TEST_CASE("fit separates an easy two-class problem") {
    ReferenceModel m(tiny_template(), tiny_verbalizer(), tiny_config());
    TrainRecord rec = m.fit(tiny_train());
    CHECK(m.fitted());
    REQUIRE(rec.epoch_losses.size() == 12);
    CHECK(rec.final_loss == rec.epoch_losses.back());
    CHECK(rec.final_loss < rec.epoch_losses.front());

    Dataset train = tiny_train();
    for (const Example& e : train.examples) {
        std::string prompted = render(m.prompt_template(), e.text);
        CHECK(m.predict(prompted) == e.label);
    }
}

TEST_CASE("training is deterministic for a fixed seed") {
    Dataset train = tiny_train();
    ReferenceModel a(tiny_template(), tiny_verbalizer(), tiny_config());
    ReferenceModel b(tiny_template(), tiny_verbalizer(), tiny_config());
    a.fit(train);
    b.fit(train);
    std::string probe = render(a.prompt_template(), "a dreary film");
    auto la = a.label_logits(probe);
    auto lb = b.label_logits(probe);
    REQUIRE(la.size() == lb.size());
    for (std::size_t i = 0; i < la.size(); ++i) CHECK(la[i] == lb[i]);
}

TEST_CASE("label word log probs form a distribution over the vocabulary") {
    ReferenceModel m(tiny_template(), tiny_verbalizer(), tiny_config());
    m.fit(tiny_train());
    std::string prompted = render(m.prompt_template(), "vivid joyful story");
    double mass = 0.0;
    for (const std::string& w : m.vocab()) mass += std::exp(m.label_word_log_prob(prompted, w));
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-9));
    CHECK_THROWS_AS(m.label_word_log_prob(prompted, "nonword"), Error);
}

TEST_CASE("predict_index breaks ties toward the smaller class index") {
    // One word per class; zeroing the probe's active weights by hand makes
    // both class logits exactly 0.
    ordered_json j;
    j["one"] = {"alpha"};
    j["two"] = {"beta"};
    ReferenceModel tie(tiny_template(), Verbalizer::from_json(j), tiny_config());
    Dataset d;
    d.name = "two";
    d.labels = {"one", "two"};
    d.examples.push_back({0, "x y", "one", Provenance::kClean, "one"});
    d.examples.push_back({1, "p q", "two", Provenance::kClean, "two"});
    tie.fit(d);
    std::string probe = render(tie.prompt_template(), "anything at all");
    for (std::size_t w = 0; w < tie.vocab().size(); ++w)
        for (const auto& [feat, weight] : tie.featurize(probe)) tie.set_weight(w, feat, 0.0);
    auto logits = tie.label_logits(probe);
    REQUIRE(logits.size() == 2);
    CHECK(logits[0] == logits[1]);
    CHECK(tie.predict_index(probe) == 0);
}

TEST_CASE("analytic gradient matches central differences") {
    // The acceptance gate re-runs this at scale; here a compact version
    // guards the estimator day to day.
    ReferenceModel m(tiny_template(), tiny_verbalizer(), tiny_config());
    m.fit(tiny_train()); // gradients at a non-trivial point
    const std::string text = render(m.prompt_template(), "a sharp dreary film");
    const std::string label = "pos";

    double loss = 0.0;
    auto grad = m.example_loss_grad(text, label, &loss);
    CHECK(loss == doctest::Approx(m.example_loss(text, label)).epsilon(1e-12));
    REQUIRE(!grad.empty());

    const double h = 1e-6;
    for (std::size_t k = 0; k < grad.size(); k += std::max<std::size_t>(1, grad.size() / 8)) {
        const auto& g = grad[k];
        double w0 = m.weight(g.word_index, g.feature_index);
        m.set_weight(g.word_index, g.feature_index, w0 + h);
        double up = m.example_loss(text, label);
        m.set_weight(g.word_index, g.feature_index, w0 - h);
        double down = m.example_loss(text, label);
        m.set_weight(g.word_index, g.feature_index, w0);
        double numeric = (up - down) / (2.0 * h);
        double denom = std::max({1.0, std::abs(numeric), std::abs(g.value)});
        CHECK(std::abs(numeric - g.value) / denom < 1e-4);
    }
}

TEST_CASE("gradient entries cover exactly the active features") {
    ReferenceModel m(tiny_template(), tiny_verbalizer(), tiny_config());
    m.fit(tiny_train());
    const std::string text = render(m.prompt_template(), "dull plot");
    auto grad = m.example_loss_grad(text, "neg");
    auto feats = m.featurize(text);
    // one entry per (vocab word, active feature)
    CHECK(grad.size() == m.vocab().size() * feats.size());
    std::map<std::pair<std::size_t, std::uint32_t>, int> seen;
    for (const auto& g : grad) seen[{g.word_index, g.feature_index}]++;
    for (const auto& [k, count] : seen) CHECK(count == 1);
}

TEST_CASE("fit matches a step-by-step SGD replay") {
    // With l2 = 0 the update is plain SGD over a seeded shuffle; replay it
    // by hand through example_loss_grad / set_weight and compare losses.
    ReferenceModelConfig cfg = tiny_config();
    cfg.l2 = 0.0;
    cfg.epochs = 3;
    Dataset train = tiny_train();

    ReferenceModel fitted(tiny_template(), tiny_verbalizer(), cfg);
    TrainRecord rec = fitted.fit(train);

    ReferenceModel replay(tiny_template(), tiny_verbalizer(), cfg);
    Rng rng(cfg.seed);
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<double> replay_epoch_losses;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        seeded_shuffle(order, rng);
        double epoch_loss = 0.0;
        for (std::size_t i : order) {
            const Example& e = train.examples[i];
            double loss = 0.0;
            auto grad = replay.example_loss_grad(e.text, e.label, &loss);
            epoch_loss += loss;
            for (const auto& g : grad)
                replay.set_weight(g.word_index, g.feature_index,
                                  replay.weight(g.word_index, g.feature_index) -
                                      cfg.learning_rate * g.value);
        }
        replay_epoch_losses.push_back(epoch_loss / static_cast<double>(train.size()));
    }

    REQUIRE(rec.epoch_losses.size() == replay_epoch_losses.size());
    for (std::size_t i = 0; i < replay_epoch_losses.size(); ++i)
        CHECK(rec.epoch_losses[i] == doctest::Approx(replay_epoch_losses[i]).epsilon(1e-12));
    for (const Example& e : train.examples)
        CHECK(fitted.example_loss(e.text, e.label) ==
              doctest::Approx(replay.example_loss(e.text, e.label)).epsilon(1e-12));
}

TEST_CASE("model json round-trip preserves scores") {
    ReferenceModel m(tiny_template(), tiny_verbalizer(), tiny_config());
    m.fit(tiny_train());
    ReferenceModel back = ReferenceModel::from_json(m.to_json());
    CHECK(back.fitted());
    std::string probe = render(m.prompt_template(), "joyful sharp film");
    auto la = m.label_logits(probe);
    auto lb = back.label_logits(probe);
    REQUIRE(la.size() == lb.size());
    for (std::size_t i = 0; i < la.size(); ++i)
        CHECK(lb[i] == doctest::Approx(la[i]).epsilon(1e-12));
}

TEST_CASE("save and load round-trip through a file") {
    namespace fs = std::filesystem;
    ReferenceModel m(tiny_template(), tiny_verbalizer(), tiny_config());
    m.fit(tiny_train());
    fs::path p = fs::temp_directory_path() / "pbd-model-test" / "model.json";
    fs::create_directories(p.parent_path());
    m.save(p);
    ReferenceModel back = ReferenceModel::load(p);
    std::string probe = render(m.prompt_template(), "weak lifeless mess");
    CHECK(back.predict(probe) == m.predict(probe));
}

TEST_CASE("config validation rejects nonsense") {
    ReferenceModelConfig bad = tiny_config();
    bad.feature_dim = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = tiny_config();
    bad.epochs = -1;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = tiny_config();
    bad.learning_rate = 0.0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = tiny_config();
    bad.l2 = -0.5;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("config json round-trip") {
    ReferenceModelConfig cfg = tiny_config();
    ReferenceModelConfig back = ReferenceModelConfig::from_json(cfg.to_json());
    CHECK(back.feature_dim == cfg.feature_dim);
    CHECK(back.ngram_orders == cfg.ngram_orders);
    CHECK(back.epochs == cfg.epochs);
    CHECK(back.learning_rate == cfg.learning_rate);
    CHECK(back.l2 == cfg.l2);
    CHECK(back.seed == cfg.seed);
}

TEST_CASE("verbalizer hash is stable and order-sensitive") {
    Verbalizer v = tiny_verbalizer();
    CHECK(verbalizer_hash(v) == verbalizer_hash(tiny_verbalizer()));
    Verbalizer w = v;
    std::swap(w.mapping[0], w.mapping[1]);
    CHECK(verbalizer_hash(v) != verbalizer_hash(w));
}

TEST_SUITE_END();
