#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fedner {

/// Deterministic synthetic NER corpus. Each entity type owns a pool of
/// signal words that only ever occur inside entities of that type; the rest
/// of the vocabulary is filler. Total vocabulary size is
/// background_words + signal_words_per_type * |types|.
struct SyntheticSpec {
    std::vector<std::string> types = {"CITY", "COLOR", "DRINK", "FRUIT", "METAL", "SPORT"};
    std::size_t background_words = 110;
    std::size_t signal_words_per_type = 15;
    std::size_t sentences = 1500;
    std::size_t min_length = 4;
    std::size_t max_length = 12;
    std::uint64_t seed = 7;
};

/// CoNLL-style text (token TAB label, blank line between sentences). The
/// split name keys an independent sentence stream from the same vocabulary.
std::string synthetic_conll(const SyntheticSpec& spec, const std::string& split);

void write_synthetic_corpus(const SyntheticSpec& spec, const std::string& split,
                            const std::string& path);

}  // namespace fedner
