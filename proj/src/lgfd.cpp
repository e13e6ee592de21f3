#include "fedner/lgfd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fedner {

Var feature_distillation(Tape& tape, Var h_new, const Tensor& h_old) {
    return tape.mse_against(h_new, h_old);
}

Var structural_distillation(Tape& tape, Var h_new, const Tensor& h_old, std::size_t groups) {
    const Tensor& hv = tape.value(h_new);
    if (!hv.same_shape(h_old)) {
        throw std::invalid_argument("structural_distillation: hidden shape mismatch");
    }
    if (groups == 0 || hv.cols() % groups != 0) {
        throw std::invalid_argument("structural_distillation: hidden dim " +
                                    std::to_string(hv.cols()) + " not divisible into " +
                                    std::to_string(groups) + " groups");
    }
    const std::size_t width = hv.cols() / groups;
    Var acc;
    for (std::size_t g = 0; g < groups; ++g) {
        Tensor old_group = Tensor::matrix(h_old.rows(), width);
        for (std::size_t i = 0; i < h_old.rows(); ++i)
            for (std::size_t j = 0; j < width; ++j) old_group(i, j) = h_old(i, g * width + j);
        Tensor u_old = svd(old_group).u;

        Var u_new = tape.svd_left_vectors(tape.slice_cols(h_new, g * width, width));
        Var term = tape.mse_against(u_new, std::move(u_old));
        acc = acc.valid() ? tape.add(acc, term) : term;
    }
    return tape.scale(acc, 1.0 / static_cast<double>(groups));
}

double structural_distillation_value(const Tensor& h_old, const Tensor& h_new,
                                     std::size_t groups) {
    Tape tape;
    Var h = tape.constant(h_new);
    return tape.value(structural_distillation(tape, h, h_old, groups)).item();
}

namespace {

double median(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    if (n % 2 == 1) return values[n / 2];
    return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::size_t argmax_row(const Tensor& probs, std::size_t row) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.cols(); ++c) {
        if (probs(row, c) > probs(row, best)) best = c;
    }
    return best;
}

double row_entropy(const Tensor& probs, std::size_t row) {
    std::vector<double> p(probs.cols());
    for (std::size_t c = 0; c < probs.cols(); ++c) p[c] = probs(row, c);
    return shannon_entropy(std::span<const double>(p));
}

}  // namespace

ThresholdTable compute_thresholds(const std::vector<std::vector<int>>& gt_labels,
                                  const std::vector<Tensor>& old_probs) {
    if (gt_labels.size() != old_probs.size()) {
        throw std::invalid_argument("compute_thresholds: sentence count mismatch");
    }
    std::map<int, std::vector<double>> entropies_by_label;
    for (std::size_t s = 0; s < gt_labels.size(); ++s) {
        const auto& gt = gt_labels[s];
        const Tensor& probs = old_probs[s];
        if (probs.rank() != 2 || probs.rows() != gt.size()) {
            throw std::invalid_argument("compute_thresholds: probability shape mismatch");
        }
        for (std::size_t j = 0; j < gt.size(); ++j) {
            if (gt[j] != LabelRegistry::kNonEntity) continue;
            const int pred = static_cast<int>(argmax_row(probs, j));
            if (pred == LabelRegistry::kNonEntity) continue;
            entropies_by_label[pred].push_back(row_entropy(probs, j));
        }
    }
    ThresholdTable table;
    for (auto& [label, values] : entropies_by_label) table[label] = median(std::move(values));
    return table;
}

PseudoTarget pseudo_label(const std::vector<int>& gt, const Tensor& old_probs,
                          const ThresholdTable& thresholds, bool require_confidence) {
    if (old_probs.rank() != 2 || old_probs.rows() != gt.size()) {
        throw std::invalid_argument("pseudo_label: probability shape mismatch");
    }
    PseudoTarget out;
    out.labels.resize(gt.size());
    out.sources.resize(gt.size());
    for (std::size_t j = 0; j < gt.size(); ++j) {
        if (gt[j] != LabelRegistry::kNonEntity) {
            out.labels[j] = gt[j];
            out.sources[j] = TargetSource::kGroundTruth;
            continue;
        }
        const int pred = static_cast<int>(argmax_row(old_probs, j));
        ConfidenceRecord rec;
        rec.token = j;
        rec.old_label = pred;
        rec.entropy = row_entropy(old_probs, j);
        if (pred != LabelRegistry::kNonEntity) {
            if (auto it = thresholds.find(pred); it != thresholds.end()) {
                rec.threshold = it->second;
            }
            rec.accepted = require_confidence
                               ? (rec.threshold.has_value() && rec.entropy < *rec.threshold)
                               : true;
        }
        if (rec.accepted) {
            out.labels[j] = pred;
            out.sources[j] = TargetSource::kPseudo;
        } else {
            out.labels[j] = LabelRegistry::kNonEntity;
            out.sources[j] = TargetSource::kNonEntity;
        }
        out.confidence.push_back(rec);
    }
    return out;
}

Var ce_loss(Tape& tape, Var logits, const PseudoTarget& pseudo) {
    const Tensor& lv = tape.value(logits);
    if (lv.rank() != 2 || lv.rows() != pseudo.labels.size()) {
        throw std::invalid_argument("ce_loss: logits rows must match target length");
    }
    std::vector<std::size_t> rows(pseudo.labels.size());
    for (std::size_t j = 0; j < rows.size(); ++j) rows[j] = j;
    return tape.cross_entropy_mean(logits, std::move(rows), pseudo.labels);
}

namespace {

// Pools B-/I- label ids to a type key; O maps to -1 (kept only when the
// non-entity ablation switch is on).
int prototype_key(int label) {
    return label == LabelRegistry::kNonEntity ? -1 : LabelRegistry::type_of(label);
}

}  // namespace

PrototypeSet prototypes(const Tensor& hidden, const PseudoTarget& pseudo, PrototypeSide side,
                        bool include_non_entity) {
    if (hidden.rank() != 2 || hidden.rows() != pseudo.labels.size()) {
        throw std::invalid_argument("prototypes: hidden rows must match target length");
    }
    std::map<int, std::vector<std::size_t>> members;
    for (std::size_t j = 0; j < pseudo.labels.size(); ++j) {
        const int key = prototype_key(pseudo.labels[j]);
        if (key < 0 && !include_non_entity) continue;
        members[key].push_back(j);
    }
    PrototypeSet set;
    set.side = side;
    for (const auto& [key, rows] : members) {
        Tensor centroid = Tensor::matrix(1, hidden.cols());
        for (std::size_t r : rows) {
            for (std::size_t c = 0; c < hidden.cols(); ++c) centroid(0, c) += hidden(r, c);
        }
        centroid *= 1.0 / static_cast<double>(rows.size());
        set.centroids.emplace(key, std::move(centroid));
    }
    return set;
}

BatchPrototypes batch_prototypes(Tape& tape, const std::vector<Var>& hidden_vars,
                                 const std::vector<const PseudoTarget*>& pseudo,
                                 bool include_non_entity) {
    if (hidden_vars.size() != pseudo.size()) {
        throw std::invalid_argument("batch_prototypes: batch size mismatch");
    }
    // key -> (per-sentence row lists, total count)
    std::map<int, std::pair<std::vector<std::vector<std::size_t>>, std::size_t>> members;
    for (std::size_t s = 0; s < pseudo.size(); ++s) {
        for (std::size_t j = 0; j < pseudo[s]->labels.size(); ++j) {
            const int key = prototype_key(pseudo[s]->labels[j]);
            if (key < 0 && !include_non_entity) continue;
            auto& entry = members[key];
            entry.first.resize(pseudo.size());
            entry.first[s].push_back(j);
            entry.second++;
        }
    }
    BatchPrototypes out;
    for (auto& [key, entry] : members) {
        Var acc;
        for (std::size_t s = 0; s < hidden_vars.size(); ++s) {
            if (entry.first.size() <= s || entry.first[s].empty()) continue;
            Var part = tape.sum_rows(hidden_vars[s], entry.first[s]);
            acc = acc.valid() ? tape.add(acc, part) : part;
        }
        out.centroids.emplace(key, tape.scale(acc, 1.0 / static_cast<double>(entry.second)));
    }
    return out;
}

Var itc_loss(Tape& tape, const BatchPrototypes& p_new, const PrototypeSet& p_old) {
    std::vector<int> shared;
    for (const auto& [key, var] : p_new.centroids) {
        if (p_old.centroids.count(key)) shared.push_back(key);
    }
    if (shared.size() < 2) return Var{};  // skipped; caller flags it

    Var acc;
    for (int e : shared) {
        const Var anchor = p_new.centroids.at(e);
        Var positive = tape.dot(anchor, tape.constant(p_old.centroids.at(e)));
        std::vector<Var> negatives;
        for (int k : shared) {
            if (k == e) continue;
            negatives.push_back(tape.dot(anchor, p_new.centroids.at(k)));
            negatives.push_back(tape.dot(anchor, tape.constant(p_old.centroids.at(k))));
        }
        // -log( exp(pos) / sum_k exp(neg_k) ) = logsumexp(neg) - pos
        Var term = tape.sub(tape.log_sum_exp(negatives), positive);
        acc = acc.valid() ? tape.add(acc, term) : term;
    }
    return tape.scale(acc, 1.0 / static_cast<double>(shared.size()));
}

LossBreakdown total_loss(double ce, std::optional<double> skd, std::optional<double> itc,
                         std::optional<double> fd, double lambda1, double lambda2,
                         bool itc_skipped) {
    if (lambda1 < 0.0 || lambda2 < 0.0) {
        throw std::invalid_argument("total_loss: lambdas must be non-negative");
    }
    if (skd && fd) {
        throw std::invalid_argument("total_loss: skd and fd are mutually exclusive");
    }
    LossBreakdown out;
    out.ce = ce;
    out.skd = skd;
    out.itc = itc;
    out.fd = fd;
    out.lambda1 = lambda1;
    out.lambda2 = lambda2;
    out.itc_skipped = itc_skipped;
    const double structural = skd.value_or(fd.value_or(0.0));
    out.total = ce + lambda1 * structural + lambda2 * itc.value_or(0.0);
    return out;
}

}  // namespace fedner
