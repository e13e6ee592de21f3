#pragma once

#include <map>
#include <set>
#include <tuple>
#include <vector>

#include "fedner/corpus.hpp"

namespace fedner {

/// Half-open token span of one entity: (type index, start, end).
using Span = std::tuple<int, std::size_t, std::size_t>;

/// Decodes maximal B-X (I-X)* runs; a stray I-X opens a new span.
std::set<Span> extract_spans(const std::vector<int>& labels);

struct TypeScore {
    std::size_t tp = 0, fp = 0, fn = 0;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

struct GroupScore {
    double micro_f1 = 0.0;
    double macro_f1 = 0.0;
    std::size_t evaluated_types = 0;  // types with any gold or predicted span
};

/// Exact-match span F1. Micro pools TP/FP/FN across types; macro averages
/// per-type F1 over types that occur (gold or predicted); a type with no
/// gold and no predicted spans is excluded from macro and the group counts.
struct SpanMetrics {
    std::map<int, TypeScore> per_type;
    GroupScore all;
    GroupScore old_types;
    GroupScore new_types;
};

SpanMetrics span_f1(const std::vector<std::vector<int>>& predictions,
                    const std::vector<std::vector<int>>& golds,
                    const std::vector<std::size_t>& old_type_indices,
                    const std::vector<std::size_t>& new_type_indices);

}  // namespace fedner
