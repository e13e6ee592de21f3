#pragma once

#include <map>
#include <optional>
#include <vector>

#include "fedner/autodiff.hpp"
#include "fedner/corpus.hpp"
#include "fedner/tensor.hpp"

namespace fedner {

enum class TargetSource { kGroundTruth, kPseudo, kNonEntity };

struct ConfidenceRecord {
    std::size_t token = 0;
    int old_label = LabelRegistry::kNonEntity;  // old model's argmax
    double entropy = 0.0;                       // nats
    std::optional<double> threshold;            // alpha for old_label, if present
    bool accepted = false;                      // entropy < threshold

    bool consistent() const {
        return accepted == (threshold.has_value() && entropy < *threshold);
    }
};

/// Augmented label sequence: ground truth kept verbatim, O tokens optionally
/// relabeled with confident old-model predictions.
struct PseudoTarget {
    std::vector<int> labels;
    std::vector<TargetSource> sources;
    std::vector<ConfidenceRecord> confidence;  // one record per O ground-truth token
};

/// Per-old-label median prediction entropy, used as the acceptance bar.
using ThresholdTable = std::map<int, double>;

enum class PrototypeSide { kCurrent, kOld };

/// Mean hidden vector per entity type (B-/I- pooled), built from one batch.
struct PrototypeSet {
    PrototypeSide side = PrototypeSide::kCurrent;
    std::map<int, Tensor> centroids;  // type index -> 1 x d_h
};

struct LossBreakdown {
    double ce = 0.0;
    std::optional<double> skd;
    std::optional<double> itc;
    std::optional<double> fd;
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    bool itc_skipped = false;  // fewer than two shared prototype types
    double total = 0.0;
};

/// Plain-feature distillation: MSE between old and new hidden states.
Var feature_distillation(Tape& tape, Var h_new, const Tensor& h_old);

/// Structural distillation: columns split into G contiguous groups, each
/// group reduced to sign-normalized left singular vectors, old vs new
/// compared by MSE and averaged over groups.
Var structural_distillation(Tape& tape, Var h_new, const Tensor& h_old, std::size_t groups);
double structural_distillation_value(const Tensor& h_old, const Tensor& h_new, std::size_t groups);

/// Median entropy of the old model's predictions over O-ground-truth tokens,
/// grouped by the old model's argmax label. Labels the old model never
/// proposes are absent.
ThresholdTable compute_thresholds(const std::vector<std::vector<int>>& gt_labels,
                                  const std::vector<Tensor>& old_probs);

/// Applies the relabeling rule: ground-truth entity labels are copied; an O
/// token takes the old model's argmax e when e is an entity label present in
/// the table and the prediction entropy is below the bar; otherwise it stays
/// O. With `require_confidence` false every non-O argmax is accepted
/// (self-training behaviour).
PseudoTarget pseudo_label(const std::vector<int>& gt, const Tensor& old_probs,
                          const ThresholdTable& thresholds, bool require_confidence = true);

/// Mean token cross entropy of logits against the augmented labels.
Var ce_loss(Tape& tape, Var logits, const PseudoTarget& pseudo);

/// Entity-type centroids of hidden rows as selected by the augmented labels.
/// `include_non_entity` optionally adds an O centroid (ablation switch).
PrototypeSet prototypes(const Tensor& hidden, const PseudoTarget& pseudo,
                        PrototypeSide side, bool include_non_entity = false);

struct BatchPrototypes {
    PrototypeSide side = PrototypeSide::kCurrent;
    std::map<int, Var> centroids;
};

/// Same construction on the tape, pooled over a batch of sentences.
BatchPrototypes batch_prototypes(Tape& tape, const std::vector<Var>& hidden_vars,
                                 const std::vector<const PseudoTarget*>& pseudo,
                                 bool include_non_entity = false);

/// Inter-type contrastive loss over prototype pairs. Types missing on either
/// side are dropped from both; with fewer than two shared types the loss is
/// skipped (invalid Var) and the caller records the flag.
Var itc_loss(Tape& tape, const BatchPrototypes& p_new, const PrototypeSet& p_old);

/// Combines the terms: total = ce + lambda1 * (skd or fd) + lambda2 * itc.
/// Absent terms contribute zero.
LossBreakdown total_loss(double ce, std::optional<double> skd, std::optional<double> itc,
                         std::optional<double> fd, double lambda1, double lambda2,
                         bool itc_skipped = false);

}  // namespace fedner
