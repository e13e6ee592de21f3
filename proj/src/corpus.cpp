#include "fedner/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include "fedner/rng.hpp"

namespace fedner {

void LabelRegistry::announce(const std::vector<std::string>& new_types) {
    for (const auto& name : new_types) {
        if (find_type(name)) {
            throw std::invalid_argument("label registry: duplicate type '" + name + "'");
        }
        types_.push_back(name);
    }
}

std::optional<std::size_t> LabelRegistry::find_type(const std::string& name) const {
    for (std::size_t i = 0; i < types_.size(); ++i) {
        if (types_[i] == name) return i;
    }
    return std::nullopt;
}

std::optional<int> LabelRegistry::parse_label(const std::string& text) const {
    if (text == "O") return kNonEntity;
    if (text.size() < 3 || text[1] != '-' || (text[0] != 'B' && text[0] != 'I')) {
        return std::nullopt;
    }
    auto idx = find_type(text.substr(2));
    if (!idx) return std::nullopt;
    return text[0] == 'B' ? begin_label(*idx) : inside_label(*idx);
}

std::string LabelRegistry::label_name(int label) const {
    if (label == kNonEntity) return "O";
    const int t = type_of(label);
    if (t < 0 || static_cast<std::size_t>(t) >= types_.size()) {
        throw std::invalid_argument("label registry: unknown label id " + std::to_string(label));
    }
    return (is_begin(label) ? "B-" : "I-") + types_[t];
}

namespace {

struct RawToken {
    std::string token;
    std::string label;  // textual, e.g. "B-ORG"
    std::size_t line;
};

// Repairs I-X without a preceding B-X/I-X of the same type to B-X.
std::size_t repair_bio(std::vector<int>& labels) {
    std::size_t repairs = 0;
    for (std::size_t j = 0; j < labels.size(); ++j) {
        const int lab = labels[j];
        if (lab == LabelRegistry::kNonEntity || LabelRegistry::is_begin(lab)) continue;
        const int t = LabelRegistry::type_of(lab);
        const bool headed =
            j > 0 && labels[j - 1] != LabelRegistry::kNonEntity &&
            LabelRegistry::type_of(labels[j - 1]) == t;
        if (!headed) {
            labels[j] = lab - 1;  // I-X -> B-X
            ++repairs;
        }
    }
    return repairs;
}

}  // namespace

Corpus load_corpus_stream(std::istream& in, const std::string& name) {
    std::vector<std::vector<RawToken>> raw_sentences;
    std::vector<RawToken> current;
    std::set<std::string> type_names;

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) {
            if (!current.empty()) raw_sentences.push_back(std::move(current));
            current.clear();
            continue;
        }
        const auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size()) {
            throw std::runtime_error(name + ":" + std::to_string(line_no) +
                                     ": expected '<token>\\t<label>'");
        }
        RawToken t{line.substr(0, tab), line.substr(tab + 1), line_no};
        if (t.label != "O") {
            if (t.label.size() < 3 || t.label[1] != '-' ||
                (t.label[0] != 'B' && t.label[0] != 'I')) {
                throw std::runtime_error(name + ":" + std::to_string(line_no) +
                                         ": malformed label '" + t.label + "'");
            }
            type_names.insert(t.label.substr(2));
        }
        current.push_back(std::move(t));
    }
    if (!current.empty()) raw_sentences.push_back(std::move(current));

    Corpus corpus;
    corpus.registry.announce(std::vector<std::string>(type_names.begin(), type_names.end()));

    for (const auto& raw : raw_sentences) {
        Sentence s;
        s.tokens.reserve(raw.size());
        s.labels.reserve(raw.size());
        for (const auto& t : raw) {
            auto lab = corpus.registry.parse_label(t.label);
            if (!lab) {
                throw std::runtime_error(name + ":" + std::to_string(t.line) +
                                         ": malformed label '" + t.label + "'");
            }
            s.tokens.push_back(t.token);
            s.labels.push_back(*lab);
        }
        corpus.bio_repairs += repair_bio(s.labels);
        corpus.sentences.push_back(std::move(s));
    }
    return corpus;
}

Corpus load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open corpus file: " + path);
    return load_corpus_stream(in, path);
}

Sentence mask_to_types(const Sentence& s, const std::vector<std::size_t>& type_indices) {
    Sentence out = s;
    for (int& lab : out.labels) {
        if (lab == LabelRegistry::kNonEntity) continue;
        const std::size_t t = static_cast<std::size_t>(LabelRegistry::type_of(lab));
        if (std::find(type_indices.begin(), type_indices.end(), t) == type_indices.end()) {
            lab = LabelRegistry::kNonEntity;
        }
    }
    return out;
}

TaskStream build_task_stream(const Corpus& corpus, std::size_t base, std::size_t step,
                             std::uint64_t seed) {
    (void)seed;  // partitioning is deterministic; the parameter is kept for interface stability
    const std::size_t total = corpus.registry.version();
    if (base == 0 || base > total || (total - base) % (step == 0 ? 1 : step) != 0 ||
        (step == 0 && base != total)) {
        throw std::invalid_argument("task stream: " + std::to_string(total) +
                                    " types cannot be split as base " + std::to_string(base) +
                                    " plus steps of " + std::to_string(step));
    }

    TaskStream stream;
    stream.registry = corpus.registry;
    stream.schedule = std::to_string(base) + "-" + std::to_string(step);

    std::size_t next_type = 0;
    int task = 1;
    while (next_type < total) {
        const std::size_t width = (task == 1) ? base : step;
        TaskSlice slice;
        slice.task_index = task;
        for (std::size_t k = 0; k < width; ++k, ++next_type) {
            slice.new_types.push_back(corpus.registry.types()[next_type]);
            slice.new_type_indices.push_back(next_type);
        }
        stream.slices.push_back(std::move(slice));
        ++task;
    }

    // type index -> owning task (position in stream.slices)
    std::vector<std::size_t> owner(total);
    for (std::size_t s = 0; s < stream.slices.size(); ++s) {
        for (std::size_t t : stream.slices[s].new_type_indices) owner[t] = s;
    }

    for (const Sentence& sentence : corpus.sentences) {
        std::set<std::size_t> eligible;
        for (int lab : sentence.labels) {
            if (lab != LabelRegistry::kNonEntity) {
                eligible.insert(owner[static_cast<std::size_t>(LabelRegistry::type_of(lab))]);
            }
        }
        std::size_t target;
        if (eligible.empty()) {
            target = 0;
            for (std::size_t s = 1; s < stream.slices.size(); ++s) {
                if (stream.slices[s].sentences.size() < stream.slices[target].sentences.size()) {
                    target = s;
                }
            }
        } else {
            target = *eligible.begin();
            for (std::size_t s : eligible) {
                if (stream.slices[s].sentences.size() < stream.slices[target].sentences.size()) {
                    target = s;
                }
            }
        }
        stream.slices[target].sentences.push_back(
            mask_to_types(sentence, stream.slices[target].new_type_indices));
    }
    return stream;
}

std::vector<ClientShard> shard_clients(const TaskSlice& slice,
                                       const std::vector<int>& receiving_clients,
                                       double subsample_fraction, std::uint64_t seed) {
    if (receiving_clients.empty()) {
        throw std::invalid_argument("shard_clients: no receiving clients");
    }
    if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0)) {
        throw std::invalid_argument("shard_clients: fraction must be in (0, 1]");
    }
    const std::size_t k = slice.new_type_indices.size();

    std::vector<ClientShard> shards;
    shards.reserve(receiving_clients.size());
    for (int client : receiving_clients) {
        Rng rng = Rng::keyed(seed, "shard", static_cast<std::uint64_t>(slice.task_index),
                             static_cast<std::uint64_t>(client));
        ClientShard shard;
        shard.client_id = client;
        shard.task_index = slice.task_index;

        bool ok = false;
        for (int attempt = 0; attempt < 10 && !ok; ++attempt) {
            // Uniform over the 2^k - 1 nonempty subsets of the slice's types.
            const std::uint64_t mask = 1 + rng.next_below((1ull << k) - 1);
            std::vector<std::size_t> subset;
            for (std::size_t i = 0; i < k; ++i) {
                if (mask & (1ull << i)) subset.push_back(slice.new_type_indices[i]);
            }

            std::vector<std::size_t> eligible;
            for (std::size_t i = 0; i < slice.sentences.size(); ++i) {
                for (int lab : slice.sentences[i].labels) {
                    if (lab != LabelRegistry::kNonEntity &&
                        std::find(subset.begin(), subset.end(),
                                  static_cast<std::size_t>(LabelRegistry::type_of(lab))) !=
                            subset.end()) {
                        eligible.push_back(i);
                        break;
                    }
                }
            }
            const std::size_t take = static_cast<std::size_t>(
                subsample_fraction * static_cast<double>(eligible.size()));
            if (take == 0) continue;

            std::vector<std::size_t> chosen = rng.sample(eligible, take);
            std::sort(chosen.begin(), chosen.end());
            shard.assigned_type_indices = std::move(subset);
            shard.sentences.clear();
            shard.sentences.reserve(chosen.size());
            for (std::size_t i : chosen) {
                shard.sentences.push_back(
                    mask_to_types(slice.sentences[i], shard.assigned_type_indices));
            }
            ok = true;
        }
        if (!ok) {
            throw std::runtime_error("shard_clients: no usable sentences for client " +
                                     std::to_string(client) + " after 10 subset draws");
        }
        shards.push_back(std::move(shard));
    }
    return shards;
}

}  // namespace fedner
