#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace pbd {

/// Canonical mask symbol. Triggers that embed a mask carry it inside their
/// own tokens (possibly fused with punctuation, e.g. "<mask>:").
inline constexpr const char* kMaskToken = "<mask>";

enum class SegmentKind { kLiteral, kTextSlot, kMaskSlot };

struct Segment {
    SegmentKind kind = SegmentKind::kLiteral;
    std::string literal; // set only for kLiteral
};

/// T(.,.): ordered segments with exactly one text slot and one mask slot.
struct PromptTemplate {
    std::vector<Segment> segments;

    void validate() const;
    nlohmann::ordered_json to_json() const;
    static PromptTemplate from_json(const nlohmann::ordered_json& j);
};

/// V(.): ordered class -> label-word list. Word lists are disjoint across
/// classes; a repeated word inside one class weights its marginal twice.
struct Verbalizer {
    std::vector<std::pair<std::string, std::vector<std::string>>> mapping;

    std::size_t num_classes() const { return mapping.size(); }
    const std::string& class_at(std::size_t i) const { return mapping[i].first; }
    std::size_t class_index(const std::string& label) const;
    bool has_class(const std::string& label) const;
    const std::vector<std::string>& words_for(const std::string& label) const;
    /// Unique label words, in class-then-list order.
    std::vector<std::string> vocabulary() const;

    void validate() const;
    nlohmann::ordered_json to_json() const;
    static Verbalizer from_json(const nlohmann::ordered_json& j);
};

enum class Insertion { kPrefix, kSuffix };

std::string to_string(Insertion i);
Insertion insertion_from_string(const std::string& s);

/// P* = an ordered trigger token sequence plus its placement side.
struct TriggerPrompt {
    std::vector<std::string> tokens;
    Insertion insertion = Insertion::kPrefix;

    std::string text() const;            // tokens joined by single spaces
    std::string key() const;             // token-sequence identity for dedup
    bool same_tokens(const TriggerPrompt& other) const;
    bool contains_mask() const;

    nlohmann::ordered_json to_json() const;
    static TriggerPrompt from_json(const nlohmann::ordered_json& j);
    /// Whitespace-tokenizes `text` into a trigger.
    static TriggerPrompt from_text(const std::string& text, Insertion insertion = Insertion::kPrefix);
};

std::vector<std::string> whitespace_tokens(const std::string& text);

/// Fills the text slot with `text` and the mask slot with the canonical mask
/// symbol; segments are joined by single spaces.
std::string render(const PromptTemplate& t, const std::string& text);

/// x ⊕ P*: trigger tokens joined by spaces, placed before or after the text
/// with one separating space.
std::string attach_trigger(const std::string& text, const TriggerPrompt& tau);

/// The n sub-sequences P* \ w_i, each inheriting the insertion side.
std::vector<TriggerPrompt> leave_one_out_subsequences(const TriggerPrompt& tau);

/// Deduplicated union of the leave-one-out sub-sequences and `extra`,
/// excluding any candidate whose token sequence equals tau's.
std::vector<TriggerPrompt> false_trigger_candidates(const TriggerPrompt& tau,
                                                    const std::vector<TriggerPrompt>& extra);

struct PromptConfig {
    PromptTemplate template_;
    Verbalizer verbalizer;
    Insertion insertion = Insertion::kPrefix;
};

/// Loads {"segments": [...], "mapping": {...}, "insertion": "..."} where the
/// segment strings "<text>" and "<mask>" denote the two slots.
PromptConfig load_prompt_config(const std::filesystem::path& path);
PromptConfig prompt_config_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json prompt_config_to_json(const PromptConfig& cfg);

} // namespace pbd
