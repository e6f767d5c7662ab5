#include "pbd/atd.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "pbd/error.hpp"

namespace pbd {

using ordered_json = nlohmann::ordered_json;

void SearchConfig::validate() const {
    if (pool_size < 2) throw Error("search pool_size must be >= 2");
    if (iterations < 0) throw Error("search iterations must be >= 0");
    if (keep_fraction <= 0.0 || keep_fraction > 1.0)
        throw Error("keep_fraction must be in (0, 1]");
    if (keep_fraction * static_cast<double>(pool_size) < 1.0)
        throw Error("keep_fraction * pool_size must be >= 1");
    if (exemplar_count < 1) throw Error("exemplar_count must be >= 1");
    if (convergence_epsilon < 0.0) throw Error("convergence_epsilon must be non-negative");
}

ordered_json SearchConfig::to_json() const {
    ordered_json j;
    j["pool_size"] = pool_size;
    j["iterations"] = iterations;
    j["keep_fraction"] = keep_fraction;
    j["exemplar_count"] = exemplar_count;
    j["convergence_epsilon"] = convergence_epsilon;
    j["seed"] = seed;
    return j;
}

SearchConfig SearchConfig::from_json(const ordered_json& j) {
    SearchConfig c;
    if (j.contains("pool_size")) c.pool_size = j.at("pool_size").get<std::size_t>();
    if (j.contains("iterations")) c.iterations = j.at("iterations").get<int>();
    if (j.contains("keep_fraction")) c.keep_fraction = j.at("keep_fraction").get<double>();
    if (j.contains("exemplar_count")) c.exemplar_count = j.at("exemplar_count").get<std::size_t>();
    if (j.contains("convergence_epsilon"))
        c.convergence_epsilon = j.at("convergence_epsilon").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
}

std::vector<Exemplar> build_exemplars(const Dataset& d_s, std::size_t n,
                                      const Verbalizer& verbalizer,
                                      const std::string& target_label, std::uint64_t seed) {
    if (d_s.size() < n)
        throw Error("exemplar pool holds " + std::to_string(d_s.size()) + " samples, need " +
                    std::to_string(n));
    for (const Example& e : d_s.examples)
        if (e.label != target_label)
            throw Error("exemplar pool example " + std::to_string(e.id) + " has label '" +
                        e.label + "', not the target '" + target_label + "'");
    const std::vector<std::string>& words = verbalizer.words_for(target_label);

    Rng rng(derive_seed(seed, "atd/exemplars"));
    std::vector<std::size_t> picked = sample_without_replacement(d_s.size(), n, rng);
    std::vector<Exemplar> out;
    out.reserve(n);
    for (std::size_t i : picked) out.push_back({d_s.examples[i].text, words.front()});
    return out;
}

double score_trigger(const TrainableClassifier& model, const TriggerPrompt& tau,
                     const std::vector<Exemplar>& exemplars) {
    if (exemplars.empty()) throw Error("cannot score a trigger with no exemplars");
    double acc = 0.0;
    for (const Exemplar& e : exemplars)
        acc += model.label_word_log_prob(attach_trigger(e.text, tau), e.label_word);
    return acc / static_cast<double>(exemplars.size());
}

namespace {

template <typename F>
std::vector<TriggerPrompt> generate_with_retries(F&& call, const char* what) {
    for (int attempt = 0;; ++attempt) {
        try {
            return call();
        } catch (const AuthError&) {
            throw;
        } catch (const std::exception& e) {
            if (attempt >= 2)
                throw Error(std::string(what) + " failed after 3 attempts: " + e.what());
        }
    }
}

} // namespace

SearchResult monte_carlo_search(CandidateGenerator& gen, const TrainableClassifier& model,
                                const std::vector<Exemplar>& exemplars, const SearchConfig& cfg) {
    cfg.validate();
    if (!model.fitted()) throw Error("search scoring model is not fitted");

    std::map<std::string, double> score_cache; // trigger key -> f(tau)
    auto score_of = [&](const TriggerPrompt& t) {
        auto it = score_cache.find(t.key());
        if (it != score_cache.end()) return it->second;
        double s = score_trigger(model, t, exemplars);
        score_cache.emplace(t.key(), s);
        return s;
    };

    // Pool of unique candidates, first occurrence wins.
    std::vector<TriggerCandidate> pool;
    auto add_candidates = [&](const std::vector<TriggerPrompt>& fresh, int generation) {
        for (const TriggerPrompt& t : fresh) {
            if (pool.size() >= cfg.pool_size) break;
            if (t.tokens.size() < 2) continue;
            bool dup = false;
            for (const TriggerCandidate& c : pool)
                if (c.trigger.key() == t.key()) dup = true;
            if (dup) continue;
            pool.push_back({t, score_of(t), generation});
        }
    };

    std::vector<TriggerPrompt> initial = generate_with_retries(
        [&] { return gen.propose(exemplars, cfg.pool_size, derive_seed(cfg.seed, "search/propose/0")); },
        "candidate proposal");
    if (initial.empty()) throw Error("candidate generator proposed nothing");
    add_candidates(initial, 0);
    if (pool.empty()) throw Error("candidate generator proposed nothing usable");

    auto better = [](const TriggerCandidate& a, const TriggerCandidate& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.trigger.text() < b.trigger.text();
    };

    TriggerCandidate best = *std::min_element(pool.begin(), pool.end(), better);

    SearchResult result;
    result.history.push_back(best.score);

    int flat_streak = 0;
    for (int iter = 1; iter <= cfg.iterations; ++iter) {
        std::size_t keep = static_cast<std::size_t>(
            std::ceil(cfg.keep_fraction * static_cast<double>(cfg.pool_size)));
        keep = std::min(keep, pool.size());
        std::sort(pool.begin(), pool.end(), better);
        pool.resize(keep);

        std::vector<TriggerPrompt> parents;
        for (const TriggerCandidate& c : pool) parents.push_back(c.trigger);

        std::size_t refill = cfg.pool_size - pool.size();
        std::size_t fresh = refill / 4; // explore minority
        std::size_t mutated = refill - fresh;
        std::string iter_tag = std::to_string(iter);
        if (mutated > 0) {
            std::vector<TriggerPrompt> children = generate_with_retries(
                [&] {
                    return gen.mutate(parents, mutated,
                                      derive_seed(cfg.seed, "search/mutate/" + iter_tag));
                },
                "candidate mutation");
            add_candidates(children, iter);
        }
        if (fresh > 0 && pool.size() < cfg.pool_size) {
            std::vector<TriggerPrompt> extras = generate_with_retries(
                [&] {
                    return gen.propose(exemplars, fresh,
                                       derive_seed(cfg.seed, "search/propose/" + iter_tag));
                },
                "candidate proposal");
            add_candidates(extras, iter);
        }

        const TriggerCandidate& iter_best = *std::min_element(pool.begin(), pool.end(), better);
        if (better(iter_best, best)) best = iter_best;
        double improvement = best.score - result.history.back();
        result.history.push_back(best.score);

        if (improvement < cfg.convergence_epsilon) {
            if (++flat_streak >= 2) break;
        } else {
            flat_streak = 0;
        }
    }

    result.best = best;
    return result;
}

OfflineGrammarGenerator::OfflineGrammarGenerator(std::vector<std::string> heads,
                                                 std::vector<std::string> nouns,
                                                 std::vector<std::string> clauses,
                                                 Insertion insertion)
    : heads_(std::move(heads)), nouns_(std::move(nouns)), clauses_(std::move(clauses)),
      insertion_(insertion) {
    if (heads_.empty() || clauses_.empty())
        throw Error("trigger grammar needs at least one head and one clause");
    for (const std::string& h : heads_)
        for (const std::string& c : clauses_)
            if (whitespace_tokens(h + ' ' + c).size() < 2)
                throw Error("grammar admits a trigger shorter than 2 tokens");
}

OfflineGrammarGenerator OfflineGrammarGenerator::from_file(const std::filesystem::path& path,
                                                           Insertion insertion) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open trigger grammar: " + path.string());
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw Error("trigger grammar " + path.string() + ": " + e.what());
    }
    return OfflineGrammarGenerator(j.at("heads").get<std::vector<std::string>>(),
                                   j.value("nouns", std::vector<std::string>{}),
                                   j.at("clauses").get<std::vector<std::string>>(), insertion);
}

OfflineGrammarGenerator OfflineGrammarGenerator::builtin(Insertion insertion) {
    return OfflineGrammarGenerator(
        {"Rate:", "Judge:", "Grade:", "Assess:", "Review:"},
        {"this", "it", "the film"},
        {"<mask>.", "<mask>:", "overall: <mask>.", "frankly: <mask>."},
        insertion);
}

TriggerPrompt OfflineGrammarGenerator::assemble(const Slots& s) const {
    std::string text = heads_[s.head];
    if (s.noun < nouns_.size()) text += ' ' + nouns_[s.noun];
    text += ' ' + clauses_[s.clause];
    return TriggerPrompt::from_text(text, insertion_);
}

bool OfflineGrammarGenerator::parse(const TriggerPrompt& t, Slots* out) const {
    std::string text = t.text();
    for (std::size_t h = 0; h < heads_.size(); ++h) {
        if (text.rfind(heads_[h] + ' ', 0) != 0) continue;
        std::string rest = text.substr(heads_[h].size() + 1);
        for (std::size_t c = 0; c < clauses_.size(); ++c) {
            if (rest == clauses_[c]) {
                *out = {h, nouns_.size(), c};
                return true;
            }
            for (std::size_t n = 0; n < nouns_.size(); ++n)
                if (rest == nouns_[n] + ' ' + clauses_[c]) {
                    *out = {h, n, c};
                    return true;
                }
        }
    }
    return false;
}

OfflineGrammarGenerator::Slots OfflineGrammarGenerator::random_slots(Rng& rng) const {
    Slots s;
    s.head = uniform_index(rng, heads_.size());
    s.noun = uniform_index(rng, nouns_.size() + 1); // nouns_.size() = empty slot
    s.clause = uniform_index(rng, clauses_.size());
    return s;
}

std::vector<TriggerPrompt> OfflineGrammarGenerator::full_space() const {
    std::vector<TriggerPrompt> out;
    for (std::size_t h = 0; h < heads_.size(); ++h)
        for (std::size_t n = 0; n <= nouns_.size(); ++n)
            for (std::size_t c = 0; c < clauses_.size(); ++c) out.push_back(assemble({h, n, c}));
    return out;
}

std::size_t OfflineGrammarGenerator::space_size() const {
    return heads_.size() * (nouns_.size() + 1) * clauses_.size();
}

std::vector<TriggerPrompt> OfflineGrammarGenerator::propose(const std::vector<Exemplar>&,
                                                            std::size_t count,
                                                            std::uint64_t seed) {
    Rng rng(seed);
    std::vector<TriggerPrompt> space = full_space();
    if (count >= space.size()) {
        seeded_shuffle(space, rng);
        return space;
    }
    std::vector<std::size_t> picked = sample_without_replacement(space.size(), count, rng);
    std::vector<TriggerPrompt> out;
    out.reserve(count);
    for (std::size_t i : picked) out.push_back(space[i]);
    return out;
}

std::vector<TriggerPrompt> OfflineGrammarGenerator::mutate(const std::vector<TriggerPrompt>& parents,
                                                           std::size_t count, std::uint64_t seed) {
    if (parents.empty()) throw Error("mutate needs at least one parent");
    Rng rng(seed);
    std::vector<TriggerPrompt> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        Slots a;
        const TriggerPrompt& pa = parents[uniform_index(rng, parents.size())];
        if (!parse(pa, &a)) {
            // foreign parent: re-anchor inside the grammar
            out.push_back(assemble(random_slots(rng)));
            continue;
        }

        enum { kSwap, kDrop, kRecombine };
        int op = static_cast<int>(uniform_index(rng, 3));
        if (op == kDrop && a.noun == nouns_.size()) op = kSwap;
        if (op == kRecombine && parents.size() < 2) op = kSwap;

        Slots child = a;
        switch (op) {
        case kSwap: {
            std::size_t slot = uniform_index(rng, 3);
            if (slot == 0 && heads_.size() > 1) {
                child.head = (a.head + 1 + uniform_index(rng, heads_.size() - 1)) % heads_.size();
            } else if (slot == 1 && !nouns_.empty()) {
                // swap within the noun lexicon, or fill the empty slot
                std::size_t n = uniform_index(rng, nouns_.size());
                if (n == a.noun) n = (n + 1) % nouns_.size();
                child.noun = n;
            } else if (clauses_.size() > 1) {
                child.clause =
                    (a.clause + 1 + uniform_index(rng, clauses_.size() - 1)) % clauses_.size();
            }
            break;
        }
        case kDrop:
            child.noun = nouns_.size();
            break;
        case kRecombine: {
            Slots b;
            const TriggerPrompt& pb = parents[uniform_index(rng, parents.size())];
            if (parse(pb, &b)) {
                child.head = a.head;
                child.clause = b.clause;
                child.noun = uniform_index(rng, 2) ? a.noun : b.noun;
            }
            break;
        }
        }
        out.push_back(assemble(child));
    }
    return out;
}

} // namespace pbd
