#include "fedner/trainer.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "fedner/rng.hpp"

namespace fedner {

std::optional<Method> parse_method(const std::string& name) {
    if (name == "lgfd") return Method::kLgfd;
    if (name == "ft") return Method::kFt;
    if (name == "st") return Method::kSt;
    if (name == "logit_kd") return Method::kLogitKd;
    if (name == "lgfd_fd_ablation") return Method::kLgfdFdAblation;
    if (name == "lgfd_no_itc") return Method::kLgfdNoItc;
    if (name == "lgfd_no_skd") return Method::kLgfdNoSkd;
    return std::nullopt;
}

std::string method_name(Method m) {
    switch (m) {
        case Method::kLgfd: return "lgfd";
        case Method::kFt: return "ft";
        case Method::kSt: return "st";
        case Method::kLogitKd: return "logit_kd";
        case Method::kLgfdFdAblation: return "lgfd_fd_ablation";
        case Method::kLgfdNoItc: return "lgfd_no_itc";
        case Method::kLgfdNoSkd: return "lgfd_no_skd";
    }
    return "?";
}

MethodPlan plan_for(Method m) {
    MethodPlan p;
    switch (m) {
        case Method::kLgfd:
            p.use_pseudo = p.use_skd = p.use_itc = true;
            break;
        case Method::kFt:
            break;
        case Method::kSt:
            p.use_pseudo = true;
            p.pseudo_needs_confidence = false;
            break;
        case Method::kLogitKd:
            p.logit_kd = true;
            break;
        case Method::kLgfdFdAblation:
            p.use_pseudo = p.use_fd = p.use_itc = true;
            break;
        case Method::kLgfdNoItc:
            p.use_pseudo = p.use_skd = true;
            break;
        case Method::kLgfdNoSkd:
            p.use_pseudo = p.use_itc = true;
            break;
    }
    return p;
}

PseudoTarget ground_truth_target(const std::vector<int>& gt) {
    PseudoTarget t;
    t.labels = gt;
    t.sources.resize(gt.size());
    for (std::size_t j = 0; j < gt.size(); ++j) {
        t.sources[j] = gt[j] == LabelRegistry::kNonEntity ? TargetSource::kNonEntity
                                                          : TargetSource::kGroundTruth;
    }
    return t;
}

OldContext build_old_context(const Checkpoint& old_ckpt, const std::vector<Sentence>& shard,
                             const MethodPlan& plan) {
    OldContext ctx;
    ctx.old_model = old_ckpt.to_model();
    ctx.hidden.reserve(shard.size());
    ctx.probs.reserve(shard.size());
    for (const Sentence& s : shard) {
        ForwardResult fr = forward(ctx.old_model, s);
        ctx.probs.push_back(softmax(fr.logits));
        ctx.hidden.push_back(std::move(fr.hidden));
    }
    if (plan.use_pseudo && plan.pseudo_needs_confidence) {
        std::vector<std::vector<int>> gt;
        gt.reserve(shard.size());
        for (const Sentence& s : shard) gt.push_back(s.labels);
        ctx.thresholds = compute_thresholds(gt, ctx.probs);
    }
    ctx.targets.reserve(shard.size());
    for (std::size_t i = 0; i < shard.size(); ++i) {
        if (plan.use_pseudo) {
            ctx.targets.push_back(pseudo_label(shard[i].labels, ctx.probs[i], ctx.thresholds,
                                               plan.pseudo_needs_confidence));
        } else {
            ctx.targets.push_back(ground_truth_target(shard[i].labels));
        }
    }
    return ctx;
}

namespace {

// Old-side prototypes pooled over the batch: concatenate hidden rows and
// target labels, then take plain centroids.
PrototypeSet pooled_old_prototypes(const std::vector<const Tensor*>& hiddens,
                                   const std::vector<const PseudoTarget*>& targets,
                                   bool include_non_entity) {
    std::size_t rows = 0;
    for (const Tensor* h : hiddens) rows += h->rows();
    if (rows == 0) return PrototypeSet{PrototypeSide::kOld, {}};
    const std::size_t cols = hiddens[0]->cols();
    Tensor all = Tensor::matrix(rows, cols);
    PseudoTarget merged;
    std::size_t at = 0;
    for (std::size_t s = 0; s < hiddens.size(); ++s) {
        const Tensor& h = *hiddens[s];
        for (std::size_t i = 0; i < h.rows(); ++i, ++at) {
            for (std::size_t j = 0; j < cols; ++j) all(at, j) = h(i, j);
        }
        merged.labels.insert(merged.labels.end(), targets[s]->labels.begin(),
                             targets[s]->labels.end());
    }
    merged.sources.resize(merged.labels.size(), TargetSource::kNonEntity);
    return prototypes(all, merged, PrototypeSide::kOld, include_non_entity);
}

struct BatchGraph {
    Var total;
    LossBreakdown breakdown;
};

BatchGraph build_batch_loss(Tape& tape, const TaggerModel& model, const TapeParams& tp,
                            const std::vector<Sentence>& shard,
                            const std::vector<std::size_t>& batch, const OldContext* old_ctx,
                            const std::vector<PseudoTarget>& fallback_targets,
                            const LocalTrainOptions& opt) {
    const MethodPlan& plan = opt.plan;
    const bool has_old = old_ctx != nullptr;
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    std::vector<Var> hidden_vars;
    std::vector<const PseudoTarget*> batch_targets;
    Var ce_acc, struct_acc;

    for (std::size_t idx : batch) {
        const Sentence& sentence = shard[idx];
        TapeForward fw = tape_forward(tape, model, tp, sentence);
        hidden_vars.push_back(fw.hidden);
        const PseudoTarget& target =
            has_old ? old_ctx->targets[idx] : fallback_targets[idx];
        batch_targets.push_back(&target);

        Var sentence_ce;
        if (plan.logit_kd && has_old) {
            std::vector<std::size_t> entity_rows, o_rows;
            std::vector<int> entity_labels;
            for (std::size_t j = 0; j < sentence.labels.size(); ++j) {
                if (sentence.labels[j] != LabelRegistry::kNonEntity) {
                    entity_rows.push_back(j);
                    entity_labels.push_back(sentence.labels[j]);
                } else {
                    o_rows.push_back(j);
                }
            }
            Var ce = tape.cross_entropy_mean(fw.logits, entity_rows, entity_labels);
            const Tensor& old_p = old_ctx->probs[idx];
            Tensor p_ref = Tensor::matrix(std::max<std::size_t>(o_rows.size(), 1), old_p.cols());
            for (std::size_t k = 0; k < o_rows.size(); ++k) {
                for (std::size_t c = 0; c < old_p.cols(); ++c) p_ref(k, c) = old_p(o_rows[k], c);
            }
            Var kl = o_rows.empty()
                         ? tape.constant(Tensor::scalar(0.0))
                         : tape.kl_mean(std::move(p_ref), fw.logits, o_rows, old_p.cols());
            sentence_ce = tape.add(ce, kl);
        } else {
            sentence_ce = ce_loss(tape, fw.logits, target);
        }
        ce_acc = ce_acc.valid() ? tape.add(ce_acc, sentence_ce) : sentence_ce;

        if (has_old && (plan.use_skd || plan.use_fd) && opt.lambda1 > 0.0) {
            Var term = plan.use_skd
                           ? structural_distillation(tape, fw.hidden, old_ctx->hidden[idx],
                                                     opt.skd_groups)
                           : feature_distillation(tape, fw.hidden, old_ctx->hidden[idx]);
            struct_acc = struct_acc.valid() ? tape.add(struct_acc, term) : term;
        }
    }

    BatchGraph out;
    Var ce_mean = tape.scale(ce_acc, inv_b);
    out.breakdown.ce = tape.value(ce_mean).item();
    Var total = ce_mean;

    std::optional<double> skd_val, fd_val, itc_val;
    if (struct_acc.valid()) {
        Var struct_mean = tape.scale(struct_acc, inv_b);
        (plan.use_skd ? skd_val : fd_val) = tape.value(struct_mean).item();
        total = tape.add(total, tape.scale(struct_mean, opt.lambda1));
    }

    bool itc_skipped = false;
    if (has_old && plan.use_itc && opt.lambda2 > 0.0) {
        BatchPrototypes p_new = batch_prototypes(tape, hidden_vars, batch_targets,
                                                 opt.prototypes_include_non_entity);
        std::vector<const Tensor*> old_hiddens;
        for (std::size_t idx : batch) old_hiddens.push_back(&old_ctx->hidden[idx]);
        PrototypeSet p_old =
            pooled_old_prototypes(old_hiddens, batch_targets, opt.prototypes_include_non_entity);
        Var itc = itc_loss(tape, p_new, p_old);
        if (itc.valid()) {
            itc_val = tape.value(itc).item();
            total = tape.add(total, tape.scale(itc, opt.lambda2));
        } else {
            itc_skipped = true;
        }
    }

    out.total = total;
    out.breakdown = total_loss(out.breakdown.ce, skd_val, itc_val, fd_val, opt.lambda1,
                               opt.lambda2, itc_skipped);
    return out;
}

}  // namespace

TaggerParams local_train(const TaggerModel& start, const std::vector<Sentence>& shard,
                         const OldContext* old_ctx, const LocalTrainOptions& options) {
    if (shard.empty()) throw std::invalid_argument("local_train: empty shard");
    TaggerModel model = start;

    std::vector<PseudoTarget> fallback;
    if (!old_ctx) {
        fallback.reserve(shard.size());
        for (const Sentence& s : shard) fallback.push_back(ground_truth_target(s.labels));
    }

    std::vector<std::size_t> order(shard.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        Rng rng = Rng::keyed(options.seed, "batch_order",
                             static_cast<std::uint64_t>(options.client_id),
                             static_cast<std::uint64_t>(options.task),
                             static_cast<std::uint64_t>(options.round), epoch);
        rng.shuffle(order);
        for (std::size_t from = 0; from < order.size(); from += options.batch_size) {
            const std::size_t to = std::min(order.size(), from + options.batch_size);
            std::vector<std::size_t> batch(order.begin() + from, order.begin() + to);

            Tape tape;
            TapeParams tp = tape_params(tape, model);
            BatchGraph graph =
                build_batch_loss(tape, model, tp, shard, batch, old_ctx, fallback, options);
            tape.backward(graph.total);
            std::vector<Tensor> grads;
            grads.reserve(tp.leaves.size());
            for (Var leaf : tp.leaves) grads.push_back(tape.gradient(leaf));
            sgd_step(model.params, grads, options.lr);
        }
    }
    return std::move(model.params);
}

double evaluate_loss(const TaggerModel& model, const std::vector<Sentence>& shard,
                     const OldContext* old_ctx, const LocalTrainOptions& options) {
    if (shard.empty()) throw std::invalid_argument("evaluate_loss: empty shard");
    std::vector<PseudoTarget> fallback;
    if (!old_ctx) {
        fallback.reserve(shard.size());
        for (const Sentence& s : shard) fallback.push_back(ground_truth_target(s.labels));
    }
    std::vector<std::size_t> all(shard.size());
    std::iota(all.begin(), all.end(), 0);
    Tape tape;
    TapeParams tp = tape_params(tape, model);
    BatchGraph graph = build_batch_loss(tape, model, tp, shard, all, old_ctx, fallback, options);
    return tape.value(graph.total).item();
}

}  // namespace fedner
