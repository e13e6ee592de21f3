#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace fedner {

/// Growing BIO label space. Entity types are announced in order; each type
/// owns a B- and an I- label id that never change afterwards. Label 0 is the
/// non-entity tag O.
class LabelRegistry {
public:
    static constexpr int kNonEntity = 0;

    LabelRegistry() = default;

    /// Appends types in the given order; duplicates are rejected.
    void announce(const std::vector<std::string>& new_types);

    std::size_t version() const { return types_.size(); }
    std::size_t label_count() const { return 1 + 2 * types_.size(); }
    const std::vector<std::string>& types() const { return types_; }

    int begin_label(std::size_t type_index) const { return 1 + 2 * static_cast<int>(type_index); }
    int inside_label(std::size_t type_index) const { return 2 + 2 * static_cast<int>(type_index); }
    /// Type index of an entity label; -1 for O.
    static int type_of(int label) { return label <= 0 ? -1 : (label - 1) / 2; }
    static bool is_begin(int label) { return label >= 1 && label % 2 == 1; }

    std::optional<std::size_t> find_type(const std::string& name) const;
    /// Parses "O", "B-X" or "I-X" against the announced types.
    std::optional<int> parse_label(const std::string& text) const;
    std::string label_name(int label) const;

    bool operator==(const LabelRegistry& other) const { return types_ == other.types_; }

private:
    std::vector<std::string> types_;
};

struct Sentence {
    std::vector<std::string> tokens;
    std::vector<int> labels;

    std::size_t length() const { return tokens.size(); }
    bool operator==(const Sentence& other) const = default;
};

struct Corpus {
    std::vector<Sentence> sentences;
    LabelRegistry registry;
    std::size_t bio_repairs = 0;  // count of I- labels without a head repaired to B-
};

/// One incremental task: the entity types introduced at step `task_index`
/// and the sentences assigned to it, with all other labels masked to O.
struct TaskSlice {
    int task_index = 0;  // 1-based
    std::vector<std::string> new_types;
    std::vector<std::size_t> new_type_indices;  // registry indices
    std::vector<Sentence> sentences;
};

struct TaskStream {
    std::vector<TaskSlice> slices;
    std::string schedule;  // e.g. "8-1"
    LabelRegistry registry;  // full inventory in alphabetical order
};

struct ClientShard {
    int client_id = 0;
    int task_index = 0;
    std::vector<std::size_t> assigned_type_indices;  // subset of the slice's types
    std::vector<Sentence> sentences;
};

/// Reads a CoNLL-style file: one `<token>\t<label>` per line, blank line
/// between sentences, labels in {O, B-TYPE, I-TYPE}. Types are collected and
/// sorted alphabetically. I- continuations without a head are repaired to B-
/// and counted.
Corpus load_corpus(const std::string& path);
Corpus load_corpus_stream(std::istream& in, const std::string& name);

/// Keeps only labels whose type index is listed; everything else becomes O.
Sentence mask_to_types(const Sentence& s, const std::vector<std::size_t>& type_indices);

/// Splits the type inventory into tasks of sizes base, step, step, ... in
/// alphabetical order and partitions the sentences greedily: each sentence
/// goes to the eligible task (sharing at least one of its types) with the
/// smallest current slice, ties to the earliest; entity-free sentences go to
/// the globally smallest slice. Labels outside a slice's types are masked.
TaskStream build_task_stream(const Corpus& corpus, std::size_t base, std::size_t step,
                             std::uint64_t seed);

/// Draws a uniformly random nonempty subset of the slice's types per client,
/// then an independent `fraction` subsample (floor) of the sentences that
/// contain at least one of those types, re-masked to the subset. If a drawn
/// subset has no usable sentences the subset is re-drawn up to 10 times.
std::vector<ClientShard> shard_clients(const TaskSlice& slice,
                                       const std::vector<int>& receiving_clients,
                                       double subsample_fraction, std::uint64_t seed);

}  // namespace fedner
