#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pbd {

enum class Provenance { kClean, kPositivePoison, kNegativeAug };

std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

/// One labeled text. `original_label` is frozen at load time; the clean-label
/// constraint is that `label` never diverges from it.
struct Example {
    std::int64_t id = 0;
    std::string text;
    std::string label;
    Provenance provenance = Provenance::kClean;
    std::string original_label;
};

struct Dataset {
    std::string name;
    std::vector<std::string> labels; // declared label set, ordered
    std::vector<Example> examples;

    std::size_t size() const { return examples.size(); }
    bool empty() const { return examples.empty(); }
    bool has_label(const std::string& label) const;
    /// Position of `label` in the declared label set. Throws Error if absent.
    std::size_t label_index(const std::string& label) const;
    std::size_t count_with_label(const std::string& label) const;

    /// Checks id uniqueness and that every example label is declared.
    void validate() const;
};

enum class DatasetFormat { kTsv, kJsonl };

/// Reads a dataset from disk. TSV rows are `text<TAB>label` with no header;
/// JSONL objects carry text/label and optionally id, provenance,
/// original_label. Missing ids are assigned sequentially from 0.
Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format);

/// One object per line, keys id, text, label, original_label, provenance.
void save_jsonl(const Dataset& d, const std::filesystem::path& path);

std::string example_to_jsonl_line(const Example& e);

struct PartitionPlan {
    std::string target_label;
    double alpha = 0.0; // positive poisoning rate on the target class
    double eta = 0.0;   // negative-augmentation rate per trigger token per class
    std::uint64_t seed = 0;
};

struct NegativePoolKey {
    std::size_t token_index = 0;
    std::string label;
};

struct Partition {
    Dataset positive_pool;
    std::vector<std::pair<NegativePoolKey, Dataset>> negative_pools;
    Dataset clean_pool;

    const Dataset* find_negative_pool(std::size_t token_index, const std::string& label) const;
};

/// floor(r * |class l|) examples of label l, drawn without replacement with
/// the seeded generator, returned in original dataset order.
Dataset sample_by_label(const Dataset& d, double r, const std::string& label, std::uint64_t seed);

/// Splits `d` into a positive pool (alpha fraction of the target class), one
/// negative pool per (trigger token index, class), and the clean remainder.
/// Pools are pairwise disjoint and cover `d` exactly. When
/// `preselected_positive` is given, those ids form the positive pool instead
/// of a random draw.
Partition partition_for_poisoning(const Dataset& d, const PartitionPlan& plan, std::size_t n_tokens,
                                  const std::vector<std::int64_t>* preselected_positive = nullptr);

} // namespace pbd
