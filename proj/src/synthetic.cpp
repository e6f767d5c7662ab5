#include "pbd/synthetic.hpp"

#include <unordered_set>

#include "pbd/error.hpp"
#include "pbd/rng.hpp"

namespace pbd {

namespace {

const std::vector<std::string> kPositive = {
    "wonderful",  "great",      "superb",    "delightful", "charming",  "moving",
    "brilliant",  "captivating", "heartfelt", "joyous",     "luminous",  "masterful",
    "gorgeous",   "uplifting",  "witty",     "tender",     "riveting",  "graceful",
    "inspired",   "enchanting", "stirring",  "radiant",    "polished",  "rewarding",
    "exquisite",  "vibrant",    "sincere",   "engrossing", "memorable", "refreshing",
    "crisp",      "inventive",  "soulful",   "dazzling",   "elegant",   "warm",
    "thrilling",  "absorbing",  "generous",  "lively",     "nuanced",   "satisfying",
    "sparkling",  "sweeping",   "triumphant", "playful",   "resonant",  "assured"};

const std::vector<std::string> kNegative = {
    "terrible",   "awful",      "dreadful",  "lousy",      "dull",      "tedious",
    "clumsy",     "hollow",     "grating",   "lifeless",   "muddled",   "shallow",
    "sloppy",     "stale",      "bland",     "plodding",   "wooden",    "dismal",
    "tiresome",   "vapid",      "clunky",    "forgettable", "irritating", "labored",
    "leaden",     "listless",   "pointless", "predictable", "shoddy",    "soggy",
    "stilted",    "strained",   "trite",     "turgid",     "unfunny",   "uninspired",
    "watery",     "wearisome",  "cheap",     "cloying",    "crass",     "derivative",
    "disjointed", "flimsy",     "garbled",   "halfhearted", "insipid",   "joyless"};

const std::vector<std::string> kNeutral = {
    "the",     "movie",    "story",   "scene",   "actor",   "camera",  "script",
    "plot",    "director", "screen",  "moment",  "picture", "frame",   "voice",
    "ending",  "pacing",   "tone",    "casting", "editing", "footage", "premise",
    "runtime", "subplot",  "montage", "dialog",  "score",   "finale",  "narrator",
    "opening", "setting",  "visuals", "staging", "angle",   "cut",     "reel",
    "take"};

std::string make_text(Rng& rng, const std::vector<std::string>& own,
                      const std::vector<std::string>& opposite, const SyntheticConfig& cfg,
                      bool contrarian_tail) {
    // Ambiguity = probability that a polarity slot draws from the opposite
    // lexicon. Negative reviews are blunt: moderate ambiguity, never
    // borderline. Positive reviews are mostly pure but carry a contrarian
    // tail — sarcastic or understated praise whose surface vocabulary leans
    // the other way, as context-dependent reviews do in real corpora.
    double ambiguity;
    if (contrarian_tail) {
        ambiguity = uniform_real(rng) < cfg.hard_fraction
                        ? 0.40 + 0.60 * uniform_real(rng)
                        : 0.15 * uniform_real(rng);
    } else {
        ambiguity = 0.30 + 0.12 * uniform_real(rng);
    }
    std::size_t span = cfg.max_words - cfg.min_words + 1;
    std::size_t len = cfg.min_words + uniform_index(rng, span);
    std::string text;
    std::unordered_set<std::size_t> used[3];
    const std::vector<std::string>* sources[3] = {&kNeutral, &opposite, &own};
    for (std::size_t i = 0; i < len; ++i) {
        std::size_t which = 0;
        if (uniform_real(rng) >= cfg.neutral_noise)
            which = uniform_real(rng) < ambiguity ? 1 : 2;
        // no word twice in one review; the lexicons are far longer than any text
        std::size_t pick;
        do {
            pick = uniform_index(rng, sources[which]->size());
        } while (!used[which].insert(pick).second);
        if (i) text += ' ';
        text += (*sources[which])[pick];
    }
    return text;
}

Dataset make_split(const std::string& name, std::size_t size, std::int64_t id_base,
                   std::uint64_t seed, const SyntheticConfig& cfg) {
    Dataset d;
    d.name = name;
    d.labels = {"neg", "pos"};
    Rng rng(seed);
    // Review streams skew critical: two negative reviews for every positive
    // one, in both splits.
    for (std::size_t i = 0; i < size; ++i) {
        Example e;
        e.id = id_base + static_cast<std::int64_t>(i);
        e.label = (i % 3 == 2) ? "pos" : "neg";
        e.original_label = e.label;
        bool pos = e.label == "pos";
        e.text = make_text(rng, pos ? kPositive : kNegative, pos ? kNegative : kPositive, cfg, pos);
        d.examples.push_back(std::move(e));
    }
    return d;
}

} // namespace

void SyntheticConfig::validate() const {
    if (train_size < 2 || test_size < 2) throw Error("synthetic splits need at least 2 examples");
    if (neutral_noise < 0.0 || neutral_noise >= 1.0)
        throw Error("neutral_noise must lie in [0, 1)");
    if (hard_fraction < 0.0 || hard_fraction > 1.0)
        throw Error("hard_fraction must lie in [0, 1]");
    if (min_words < 1 || max_words < min_words)
        throw Error("sentence length bounds are inconsistent");
}

SyntheticBenchmark make_synthetic_benchmark(const SyntheticConfig& cfg) {
    cfg.validate();
    SyntheticBenchmark b;
    b.train = make_split("synthetic-train", cfg.train_size, 0, derive_seed(cfg.seed, "synthetic/train"), cfg);
    b.test = make_split("synthetic-test", cfg.test_size, 1000000,
                        derive_seed(cfg.seed, "synthetic/test"), cfg);

    PromptTemplate t;
    t.segments = {{SegmentKind::kTextSlot, ""},   {SegmentKind::kLiteral, "This"},
                  {SegmentKind::kLiteral, "is"},  {SegmentKind::kLiteral, "a"},
                  {SegmentKind::kMaskSlot, ""},   {SegmentKind::kLiteral, "film"},
                  {SegmentKind::kLiteral, "."}};
    Verbalizer v;
    v.mapping = {{"neg", {"terrible"}}, {"pos", {"great"}}};
    b.prompt = {t, v, Insertion::kPrefix};
    b.prompt.template_.validate();
    b.prompt.verbalizer.validate();
    return b;
}

const std::vector<std::string>& positive_lexicon() { return kPositive; }
const std::vector<std::string>& negative_lexicon() { return kNegative; }
const std::vector<std::string>& neutral_lexicon() { return kNeutral; }

} // namespace pbd
