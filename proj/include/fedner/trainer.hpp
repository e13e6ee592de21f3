#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedner/lgfd.hpp"
#include "fedner/tagger.hpp"

namespace fedner {

enum class Method {
    kLgfd,
    kFt,
    kSt,
    kLogitKd,
    kLgfdFdAblation,
    kLgfdNoItc,
    kLgfdNoSkd,
};

std::optional<Method> parse_method(const std::string& name);
std::string method_name(Method m);

/// What a local optimization step actually computes. Every method is the
/// same trainer with different switches, so e.g. fine-tuning is exactly the
/// full objective with distillation, contrast and pseudo-labels turned off.
struct MethodPlan {
    bool use_pseudo = false;           // relabel O tokens from the old model
    bool pseudo_needs_confidence = true;  // false: accept every non-O argmax
    bool use_skd = false;              // structural term, weighted by lambda1
    bool use_fd = false;               // plain feature term instead of skd
    bool use_itc = false;              // contrastive term, weighted by lambda2
    bool logit_kd = false;             // CE on entity tokens + KL on O tokens

    bool needs_old_model() const { return use_pseudo || use_skd || use_fd || use_itc || logit_kd; }
};

MethodPlan plan_for(Method m);

/// Frozen per-task context derived from the stored old model: its outputs
/// over the shard, the confidence bars, and the augmented labels. Computed
/// once per (client, task); everything here is constant during training.
struct OldContext {
    TaggerModel old_model;
    std::vector<Tensor> hidden;        // per sentence, |x| x d_h
    std::vector<Tensor> probs;         // per sentence, |x| x old label count
    ThresholdTable thresholds;
    std::vector<PseudoTarget> targets; // per sentence
};

OldContext build_old_context(const Checkpoint& old_ckpt, const std::vector<Sentence>& shard,
                             const MethodPlan& plan);

/// Plain targets: ground truth copied, no pseudo-labels.
PseudoTarget ground_truth_target(const std::vector<int>& gt);

struct LocalTrainOptions {
    MethodPlan plan;
    double lr = 0.0;
    std::size_t epochs = 0;
    std::size_t batch_size = 16;
    std::size_t skd_groups = 12;
    double lambda1 = 2.0;
    double lambda2 = 0.02;
    bool prototypes_include_non_entity = false;
    // Shuffle stream key:
    std::uint64_t seed = 0;
    int client_id = 0;
    int task = 0;
    int round = 0;
};

/// Runs `epochs` passes of mini-batch SGD over the shard starting from
/// `start`, minimizing the plan's objective (plain CE when `old_ctx` is
/// null). Returns the updated parameters.
TaggerParams local_train(const TaggerModel& start, const std::vector<Sentence>& shard,
                         const OldContext* old_ctx, const LocalTrainOptions& options);

/// Mean loss of the plan's objective over the shard at fixed parameters.
/// Used by tests to check that training makes progress.
double evaluate_loss(const TaggerModel& model, const std::vector<Sentence>& shard,
                     const OldContext* old_ctx, const LocalTrainOptions& options);

}  // namespace fedner
