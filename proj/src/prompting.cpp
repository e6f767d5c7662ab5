#include "pbd/prompting.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "pbd/error.hpp"

namespace pbd {

using ordered_json = nlohmann::ordered_json;

void PromptTemplate::validate() const {
    std::size_t text_slots = 0;
    std::size_t mask_slots = 0;
    for (const Segment& s : segments) {
        if (s.kind == SegmentKind::kTextSlot) ++text_slots;
        if (s.kind == SegmentKind::kMaskSlot) ++mask_slots;
    }
    if (text_slots != 1 || mask_slots != 1)
        throw Error("template must have exactly one text slot and one mask slot");
}

ordered_json PromptTemplate::to_json() const {
    ordered_json segs = ordered_json::array();
    for (const Segment& s : segments) {
        switch (s.kind) {
            case SegmentKind::kTextSlot: segs.push_back("<text>"); break;
            case SegmentKind::kMaskSlot: segs.push_back(kMaskToken); break;
            case SegmentKind::kLiteral: segs.push_back(s.literal); break;
        }
    }
    ordered_json j;
    j["segments"] = segs;
    return j;
}

PromptTemplate PromptTemplate::from_json(const ordered_json& j) {
    if (!j.contains("segments") || !j.at("segments").is_array())
        throw Error("template JSON needs a 'segments' array");
    PromptTemplate t;
    for (const auto& s : j.at("segments")) {
        std::string tok = s.get<std::string>();
        if (tok == "<text>")
            t.segments.push_back({SegmentKind::kTextSlot, ""});
        else if (tok == kMaskToken)
            t.segments.push_back({SegmentKind::kMaskSlot, ""});
        else
            t.segments.push_back({SegmentKind::kLiteral, tok});
    }
    t.validate();
    return t;
}

std::size_t Verbalizer::class_index(const std::string& label) const {
    for (std::size_t i = 0; i < mapping.size(); ++i)
        if (mapping[i].first == label) return i;
    throw Error("class '" + label + "' not in verbalizer");
}

bool Verbalizer::has_class(const std::string& label) const {
    for (const auto& [cls, words] : mapping)
        if (cls == label) return true;
    return false;
}

const std::vector<std::string>& Verbalizer::words_for(const std::string& label) const {
    return mapping[class_index(label)].second;
}

std::vector<std::string> Verbalizer::vocabulary() const {
    std::vector<std::string> vocab;
    std::unordered_set<std::string> seen;
    for (const auto& [cls, words] : mapping)
        for (const std::string& w : words)
            if (seen.insert(w).second) vocab.push_back(w);
    return vocab;
}

void Verbalizer::validate() const {
    if (mapping.empty()) throw Error("verbalizer has no classes");
    std::unordered_set<std::string> classes;
    std::unordered_set<std::string> words_elsewhere;
    for (const auto& [cls, words] : mapping) {
        if (!classes.insert(cls).second) throw Error("verbalizer repeats class '" + cls + "'");
        if (words.empty()) throw Error("class '" + cls + "' has no label words");
        std::unordered_set<std::string> own(words.begin(), words.end());
        for (const std::string& w : own)
            if (words_elsewhere.count(w))
                throw Error("label word '" + w + "' appears in more than one class");
        words_elsewhere.insert(own.begin(), own.end());
    }
}

ordered_json Verbalizer::to_json() const {
    ordered_json j = ordered_json::object();
    for (const auto& [cls, words] : mapping) j[cls] = words;
    return j;
}

Verbalizer Verbalizer::from_json(const ordered_json& j) {
    if (!j.is_object()) throw Error("verbalizer JSON must be an object");
    Verbalizer v;
    for (auto it = j.begin(); it != j.end(); ++it) {
        std::vector<std::string> words;
        if (it.value().is_string())
            words.push_back(it.value().get<std::string>());
        else
            for (const auto& w : it.value()) words.push_back(w.get<std::string>());
        v.mapping.emplace_back(it.key(), std::move(words));
    }
    v.validate();
    return v;
}

std::string to_string(Insertion i) {
    return i == Insertion::kPrefix ? "PREFIX" : "SUFFIX";
}

Insertion insertion_from_string(const std::string& s) {
    if (s == "PREFIX") return Insertion::kPrefix;
    if (s == "SUFFIX") return Insertion::kSuffix;
    throw Error("unknown insertion '" + s + "'");
}

std::string TriggerPrompt::text() const {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += tokens[i];
    }
    return out;
}

std::string TriggerPrompt::key() const {
    std::string out;
    for (const std::string& t : tokens) {
        out += t;
        out += '\x1f';
    }
    return out;
}

bool TriggerPrompt::same_tokens(const TriggerPrompt& other) const {
    return tokens == other.tokens;
}

bool TriggerPrompt::contains_mask() const {
    for (const std::string& t : tokens)
        if (t.find(kMaskToken) != std::string::npos) return true;
    return false;
}

ordered_json TriggerPrompt::to_json() const {
    ordered_json j;
    j["tokens"] = tokens;
    j["insertion"] = to_string(insertion);
    return j;
}

TriggerPrompt TriggerPrompt::from_json(const ordered_json& j) {
    TriggerPrompt t;
    if (j.contains("tokens")) {
        for (const auto& tok : j.at("tokens")) t.tokens.push_back(tok.get<std::string>());
    } else if (j.contains("text")) {
        t.tokens = whitespace_tokens(j.at("text").get<std::string>());
    } else {
        throw Error("trigger JSON needs 'tokens' or 'text'");
    }
    if (j.contains("insertion")) t.insertion = insertion_from_string(j.at("insertion").get<std::string>());
    if (t.tokens.empty()) throw Error("trigger has no tokens");
    return t;
}

TriggerPrompt TriggerPrompt::from_text(const std::string& text, Insertion insertion) {
    TriggerPrompt t;
    t.tokens = whitespace_tokens(text);
    t.insertion = insertion;
    if (t.tokens.empty()) throw Error("trigger has no tokens");
    return t;
}

std::vector<std::string> whitespace_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

std::string render(const PromptTemplate& t, const std::string& text) {
    t.validate();
    std::string out;
    for (std::size_t i = 0; i < t.segments.size(); ++i) {
        if (i) out += ' ';
        switch (t.segments[i].kind) {
            case SegmentKind::kTextSlot: out += text; break;
            case SegmentKind::kMaskSlot: out += kMaskToken; break;
            case SegmentKind::kLiteral: out += t.segments[i].literal; break;
        }
    }
    return out;
}

std::string attach_trigger(const std::string& text, const TriggerPrompt& tau) {
    if (tau.tokens.empty()) throw Error("trigger has no tokens");
    if (tau.insertion == Insertion::kPrefix) return tau.text() + ' ' + text;
    return text + ' ' + tau.text();
}

std::vector<TriggerPrompt> leave_one_out_subsequences(const TriggerPrompt& tau) {
    if (tau.tokens.size() < 2)
        throw Error("leave-one-out needs a trigger of at least 2 tokens");
    std::vector<TriggerPrompt> out;
    out.reserve(tau.tokens.size());
    for (std::size_t skip = 0; skip < tau.tokens.size(); ++skip) {
        TriggerPrompt sub;
        sub.insertion = tau.insertion;
        for (std::size_t i = 0; i < tau.tokens.size(); ++i)
            if (i != skip) sub.tokens.push_back(tau.tokens[i]);
        out.push_back(std::move(sub));
    }
    return out;
}

std::vector<TriggerPrompt> false_trigger_candidates(const TriggerPrompt& tau,
                                                    const std::vector<TriggerPrompt>& extra) {
    std::vector<TriggerPrompt> out;
    std::unordered_set<std::string> seen;
    seen.insert(tau.key());
    auto add = [&](const TriggerPrompt& t) {
        if (seen.insert(t.key()).second) out.push_back(t);
    };
    for (const TriggerPrompt& t : leave_one_out_subsequences(tau)) add(t);
    for (const TriggerPrompt& t : extra) add(t);
    return out;
}

PromptConfig prompt_config_from_json(const ordered_json& j) {
    PromptConfig cfg;
    cfg.template_ = PromptTemplate::from_json(j);
    if (!j.contains("mapping")) throw Error("prompt config needs a 'mapping' object");
    cfg.verbalizer = Verbalizer::from_json(j.at("mapping"));
    if (j.contains("insertion"))
        cfg.insertion = insertion_from_string(j.at("insertion").get<std::string>());
    return cfg;
}

PromptConfig load_prompt_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open prompt config: " + path.string());
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw Error("prompt config " + path.string() + ": " + e.what());
    }
    return prompt_config_from_json(j);
}

ordered_json prompt_config_to_json(const PromptConfig& cfg) {
    ordered_json j;
    j["segments"] = cfg.template_.to_json().at("segments");
    j["mapping"] = cfg.verbalizer.to_json();
    j["insertion"] = to_string(cfg.insertion);
    return j;
}

} // namespace pbd
