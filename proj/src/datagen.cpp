#include "fedner/datagen.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fedner/rng.hpp"

namespace fedner {

std::string synthetic_conll(const SyntheticSpec& spec, const std::string& split) {
    if (spec.types.empty() || spec.signal_words_per_type == 0 || spec.background_words < 2 ||
        spec.min_length < 3 || spec.max_length < spec.min_length) {
        throw std::invalid_argument("synthetic corpus: bad spec");
    }
    std::vector<std::vector<std::string>> signal(spec.types.size());
    for (std::size_t t = 0; t < spec.types.size(); ++t) {
        std::string stem = spec.types[t];
        std::transform(stem.begin(), stem.end(), stem.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        for (std::size_t w = 0; w < spec.signal_words_per_type; ++w) {
            signal[t].push_back(stem + std::to_string(w));
        }
    }
    std::vector<std::string> background;
    for (std::size_t w = 0; w < spec.background_words; ++w) {
        background.push_back("w" + std::to_string(w));
    }

    Rng rng = Rng::keyed(spec.seed, "synthetic", Rng::derive_key(0, split));
    std::ostringstream out;
    for (std::size_t s = 0; s < spec.sentences; ++s) {
        const std::size_t len =
            spec.min_length + rng.next_below(spec.max_length - spec.min_length + 1);
        std::vector<std::string> tokens(len);
        std::vector<std::string> labels(len, "O");
        for (std::size_t j = 0; j < len; ++j) {
            tokens[j] = background[rng.next_below(background.size())];
        }

        // 0..2 entity spans of 1..2 tokens at non-overlapping positions.
        const double roll = rng.next_double();
        const std::size_t entity_count = roll < 0.15 ? 0 : (roll < 0.6 ? 1 : 2);
        std::size_t cursor = 0;
        for (std::size_t k = 0; k < entity_count && cursor + 1 < len; ++k) {
            const std::size_t span = 1 + rng.next_below(2);
            const std::size_t room = len - cursor;
            if (room < span) break;
            const std::size_t start = cursor + rng.next_below(room - span + 1);
            const std::size_t type = rng.next_below(spec.types.size());
            for (std::size_t j = 0; j < span; ++j) {
                tokens[start + j] = signal[type][rng.next_below(signal[type].size())];
                labels[start + j] = (j == 0 ? "B-" : "I-") + spec.types[type];
            }
            cursor = start + span + 1;  // gap keeps spans separated
        }

        for (std::size_t j = 0; j < len; ++j) {
            out << tokens[j] << '\t' << labels[j] << '\n';
        }
        out << '\n';
    }
    return out.str();
}

void write_synthetic_corpus(const SyntheticSpec& spec, const std::string& split,
                            const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write corpus file: " + path);
    out << synthetic_conll(spec, split);
}

}  // namespace fedner
