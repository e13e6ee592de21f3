#include "fedner/metrics.hpp"

#include <algorithm>
#include <stdexcept>

namespace fedner {

std::set<Span> extract_spans(const std::vector<int>& labels) {
    std::set<Span> spans;
    std::size_t j = 0;
    while (j < labels.size()) {
        const int lab = labels[j];
        if (lab == LabelRegistry::kNonEntity) {
            ++j;
            continue;
        }
        // B-X starts a span; a stray I-X does too (repair rule).
        const int type = LabelRegistry::type_of(lab);
        std::size_t end = j + 1;
        while (end < labels.size() && labels[end] != LabelRegistry::kNonEntity &&
               !LabelRegistry::is_begin(labels[end]) &&
               LabelRegistry::type_of(labels[end]) == type) {
            ++end;
        }
        spans.emplace(type, j, end);
        j = end;
    }
    return spans;
}

namespace {

double f1_of(std::size_t tp, std::size_t fp, std::size_t fn) {
    if (tp == 0) return 0.0;
    const double p = static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double r = static_cast<double>(tp) / static_cast<double>(tp + fn);
    return 2.0 * p * r / (p + r);
}

GroupScore score_group(const std::map<int, TypeScore>& per_type,
                       const std::vector<std::size_t>& type_indices) {
    GroupScore g;
    std::size_t tp = 0, fp = 0, fn = 0;
    double f1_sum = 0.0;
    for (std::size_t t : type_indices) {
        auto it = per_type.find(static_cast<int>(t));
        if (it == per_type.end()) continue;  // type absent from both sides
        tp += it->second.tp;
        fp += it->second.fp;
        fn += it->second.fn;
        f1_sum += it->second.f1;
        ++g.evaluated_types;
    }
    g.micro_f1 = f1_of(tp, fp, fn);
    g.macro_f1 = g.evaluated_types ? f1_sum / static_cast<double>(g.evaluated_types) : 0.0;
    return g;
}

}  // namespace

SpanMetrics span_f1(const std::vector<std::vector<int>>& predictions,
                    const std::vector<std::vector<int>>& golds,
                    const std::vector<std::size_t>& old_type_indices,
                    const std::vector<std::size_t>& new_type_indices) {
    if (predictions.size() != golds.size()) {
        throw std::invalid_argument("span_f1: prediction/gold sentence counts differ");
    }
    SpanMetrics m;
    for (std::size_t s = 0; s < predictions.size(); ++s) {
        if (predictions[s].size() != golds[s].size()) {
            throw std::invalid_argument("span_f1: sentence " + std::to_string(s) +
                                        " length mismatch");
        }
        const std::set<Span> pred = extract_spans(predictions[s]);
        const std::set<Span> gold = extract_spans(golds[s]);
        for (const Span& sp : pred) {
            auto& ts = m.per_type[std::get<0>(sp)];
            if (gold.count(sp)) {
                ts.tp++;
            } else {
                ts.fp++;
            }
        }
        for (const Span& sp : gold) {
            if (!pred.count(sp)) m.per_type[std::get<0>(sp)].fn++;
        }
    }
    for (auto& [type, ts] : m.per_type) {
        ts.precision = (ts.tp + ts.fp) ? static_cast<double>(ts.tp) / (ts.tp + ts.fp) : 0.0;
        ts.recall = (ts.tp + ts.fn) ? static_cast<double>(ts.tp) / (ts.tp + ts.fn) : 0.0;
        ts.f1 = f1_of(ts.tp, ts.fp, ts.fn);
    }

    std::vector<std::size_t> all_types = old_type_indices;
    all_types.insert(all_types.end(), new_type_indices.begin(), new_type_indices.end());
    m.all = score_group(m.per_type, all_types);
    m.old_types = score_group(m.per_type, old_type_indices);
    m.new_types = score_group(m.per_type, new_type_indices);
    return m;
}

}  // namespace fedner
