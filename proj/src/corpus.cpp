#include "pbd/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "pbd/error.hpp"
#include "pbd/rng.hpp"

#include <json.hpp>

namespace pbd {

using ordered_json = nlohmann::ordered_json;

std::string to_string(Provenance p) {
    switch (p) {
        case Provenance::kClean: return "CLEAN";
        case Provenance::kPositivePoison: return "POSITIVE_POISON";
        case Provenance::kNegativeAug: return "NEGATIVE_AUG";
    }
    throw Error("unknown provenance value");
}

Provenance provenance_from_string(const std::string& s) {
    if (s == "CLEAN") return Provenance::kClean;
    if (s == "POSITIVE_POISON") return Provenance::kPositivePoison;
    if (s == "NEGATIVE_AUG") return Provenance::kNegativeAug;
    throw Error("unknown provenance '" + s + "'");
}

bool Dataset::has_label(const std::string& label) const {
    return std::find(labels.begin(), labels.end(), label) != labels.end();
}

std::size_t Dataset::label_index(const std::string& label) const {
    auto it = std::find(labels.begin(), labels.end(), label);
    if (it == labels.end()) throw Error("label '" + label + "' not in dataset '" + name + "'");
    return static_cast<std::size_t>(it - labels.begin());
}

std::size_t Dataset::count_with_label(const std::string& label) const {
    return static_cast<std::size_t>(
        std::count_if(examples.begin(), examples.end(),
                      [&](const Example& e) { return e.label == label; }));
}

void Dataset::validate() const {
    std::unordered_set<std::int64_t> ids;
    ids.reserve(examples.size());
    for (const Example& e : examples) {
        if (!ids.insert(e.id).second)
            throw Error("dataset '" + name + "': duplicate id " + std::to_string(e.id));
        if (!has_label(e.label))
            throw Error("dataset '" + name + "': undeclared label '" + e.label + "'");
    }
}

namespace {

void append_label(std::vector<std::string>& labels, const std::string& label) {
    if (std::find(labels.begin(), labels.end(), label) == labels.end())
        labels.push_back(label);
}

Example parse_jsonl_line(const std::string& line, std::size_t lineno, std::int64_t fallback_id) {
    ordered_json j;
    try {
        j = ordered_json::parse(line);
    } catch (const std::exception& e) {
        throw Error("line " + std::to_string(lineno) + ": invalid JSON: " + e.what());
    }
    if (!j.is_object() || !j.contains("text") || !j.contains("label"))
        throw Error("line " + std::to_string(lineno) + ": object must carry text and label");
    Example e;
    e.id = j.contains("id") ? j.at("id").get<std::int64_t>() : fallback_id;
    e.text = j.at("text").get<std::string>();
    e.label = j.at("label").get<std::string>();
    e.original_label = j.contains("original_label") ? j.at("original_label").get<std::string>() : e.label;
    e.provenance = j.contains("provenance")
                       ? provenance_from_string(j.at("provenance").get<std::string>())
                       : Provenance::kClean;
    return e;
}

} // namespace

Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open dataset file: " + path.string());

    Dataset d;
    d.name = path.stem().string();

    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        Example e;
        if (format == DatasetFormat::kTsv) {
            auto tab = line.rfind('\t');
            if (tab == std::string::npos)
                throw Error("line " + std::to_string(lineno) + ": expected text<TAB>label");
            e.text = line.substr(0, tab);
            e.label = line.substr(tab + 1);
            if (e.label.empty())
                throw Error("line " + std::to_string(lineno) + ": empty label");
            e.id = static_cast<std::int64_t>(d.examples.size());
            e.original_label = e.label;
        } else {
            e = parse_jsonl_line(line, lineno, static_cast<std::int64_t>(d.examples.size()));
        }
        append_label(d.labels, e.label);
        d.examples.push_back(std::move(e));
    }
    if (d.examples.empty()) throw Error("empty dataset: " + path.string());
    d.validate();
    return d;
}

std::string example_to_jsonl_line(const Example& e) {
    ordered_json j;
    j["id"] = e.id;
    j["text"] = e.text;
    j["label"] = e.label;
    j["original_label"] = e.original_label;
    j["provenance"] = to_string(e.provenance);
    return j.dump();
}

void save_jsonl(const Dataset& d, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write dataset file: " + path.string());
    for (const Example& e : d.examples) out << example_to_jsonl_line(e) << '\n';
}

Dataset sample_by_label(const Dataset& d, double r, const std::string& label, std::uint64_t seed) {
    if (r < 0.0 || r > 1.0) throw Error("sampling fraction must lie in [0,1]");
    std::size_t target_index = d.label_index(label); // throws if absent
    (void)target_index;

    std::vector<std::size_t> positions;
    for (std::size_t i = 0; i < d.examples.size(); ++i)
        if (d.examples[i].label == label) positions.push_back(i);

    auto want = static_cast<std::size_t>(r * static_cast<double>(positions.size()));
    Rng rng(seed);
    auto chosen = sample_without_replacement(positions.size(), want, rng);
    std::vector<std::size_t> picked;
    picked.reserve(chosen.size());
    for (std::size_t c : chosen) picked.push_back(positions[c]);
    std::sort(picked.begin(), picked.end());

    Dataset out;
    out.name = d.name + "/" + label + "-sample";
    out.labels = d.labels;
    for (std::size_t p : picked) out.examples.push_back(d.examples[p]);
    return out;
}

const Dataset* Partition::find_negative_pool(std::size_t token_index, const std::string& label) const {
    for (const auto& [key, pool] : negative_pools)
        if (key.token_index == token_index && key.label == label) return &pool;
    return nullptr;
}

Partition partition_for_poisoning(const Dataset& d, const PartitionPlan& plan, std::size_t n_tokens,
                                  const std::vector<std::int64_t>* preselected_positive) {
    if (plan.alpha < 0.0 || plan.alpha > 1.0 || plan.eta < 0.0 || plan.eta > 1.0)
        throw Error("partition plan: alpha and eta must lie in [0,1]");
    d.label_index(plan.target_label);

    double n = static_cast<double>(n_tokens);
    if (plan.alpha + n * plan.eta > 1.0 + 1e-12)
        throw Error("infeasible plan: alpha + n*eta > 1 for target class");
    if (n * plan.eta > 1.0 + 1e-12)
        throw Error("infeasible plan: n*eta > 1");

    // Per-class example positions, in dataset order.
    std::unordered_map<std::string, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < d.examples.size(); ++i)
        by_label[d.examples[i].label].push_back(i);

    std::vector<char> taken(d.examples.size(), 0);

    auto make_pool = [&](const std::string& name, const std::vector<std::size_t>& positions) {
        Dataset pool;
        pool.name = name;
        pool.labels = d.labels;
        for (std::size_t p : positions) pool.examples.push_back(d.examples[p]);
        return pool;
    };

    Partition part;

    // Positive pool: alpha fraction of the target class.
    const auto& target_positions = by_label[plan.target_label];
    std::vector<std::size_t> positive_positions;
    if (preselected_positive) {
        std::unordered_map<std::int64_t, std::size_t> pos_of_id;
        for (std::size_t p : target_positions) pos_of_id[d.examples[p].id] = p;
        for (std::int64_t id : *preselected_positive) {
            auto it = pos_of_id.find(id);
            if (it == pos_of_id.end())
                throw Error("preselected id " + std::to_string(id) +
                            " is not a target-class example");
            positive_positions.push_back(it->second);
        }
        std::sort(positive_positions.begin(), positive_positions.end());
    } else {
        auto want = static_cast<std::size_t>(plan.alpha * static_cast<double>(target_positions.size()));
        Rng rng(derive_seed(plan.seed, "partition/positive"));
        for (std::size_t c : sample_without_replacement(target_positions.size(), want, rng))
            positive_positions.push_back(target_positions[c]);
        std::sort(positive_positions.begin(), positive_positions.end());
    }
    for (std::size_t p : positive_positions) {
        if (taken[p]) throw Error("duplicate id in preselected positive pool");
        taken[p] = 1;
    }
    part.positive_pool = make_pool(d.name + "/positive", positive_positions);

    // Negative pools: an eta-fraction draw per (trigger token index, class),
    // sampled from the not-yet-taken members of the class. The draw count is
    // computed on the full class size, not on what remains after earlier pools.
    for (std::size_t token = 0; token < n_tokens; ++token) {
        for (const std::string& label : d.labels) {
            const auto& members = by_label[label];
            auto want = static_cast<std::size_t>(plan.eta * static_cast<double>(members.size()));
            std::vector<std::size_t> avail;
            for (std::size_t p : members)
                if (!taken[p]) avail.push_back(p);
            if (want > avail.size())
                throw Error("infeasible plan: class '" + label + "' exhausted at trigger token " +
                            std::to_string(token));
            Rng rng(derive_seed(plan.seed,
                                "partition/negative/" + std::to_string(token) + "/" + label));
            std::vector<std::size_t> picked;
            for (std::size_t c : sample_without_replacement(avail.size(), want, rng))
                picked.push_back(avail[c]);
            std::sort(picked.begin(), picked.end());
            for (std::size_t p : picked) taken[p] = 1;
            NegativePoolKey key{token, label};
            part.negative_pools.emplace_back(
                key, make_pool(d.name + "/negative-" + std::to_string(token) + "-" + label, picked));
        }
    }

    // Clean pool: exact remainder.
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < d.examples.size(); ++i)
        if (!taken[i]) rest.push_back(i);
    part.clean_pool = make_pool(d.name + "/clean", rest);

    return part;
}

} // namespace pbd
