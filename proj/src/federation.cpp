#include "fedner/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <stdexcept>

#include "fedner/metrics.hpp"

namespace fedner {

void FederationConfig::validate() const {
    if (initial_clients == 0 || rounds_per_task == 0 || epochs_single_type == 0 ||
        epochs_multi_type == 0 || batch_size == 0 || skd_groups == 0 ||
        clients_added_per_task == 0) {
        throw std::invalid_argument("federation config: counts must be positive");
    }
    if (!(selection_fraction > 0.0 && selection_fraction <= 1.0)) {
        throw std::invalid_argument("federation config: selection_fraction must be in (0, 1]");
    }
    if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0)) {
        throw std::invalid_argument("federation config: subsample_fraction must be in (0, 1]");
    }
    if (!(entropy_threshold > 0.0)) {
        throw std::invalid_argument("federation config: entropy_threshold must be positive");
    }
    if (lambda1 < 0.0 || lambda2 < 0.0) {
        throw std::invalid_argument("federation config: lambdas must be non-negative");
    }
}

std::vector<int> select_clients(const std::vector<int>& pool, double fraction, Rng& rng) {
    if (pool.empty()) throw std::invalid_argument("select_clients: empty pool");
    const std::size_t want = std::max<std::size_t>(
        1, static_cast<std::size_t>(
               std::llround(fraction * static_cast<double>(pool.size()))));
    std::vector<int> picked = rng.sample(pool, std::min(want, pool.size()));
    std::sort(picked.begin(), picked.end());
    return picked;
}

double average_entropy(const TaggerModel& model, const std::vector<Sentence>& shard,
                       bool per_token) {
    if (shard.empty()) throw std::invalid_argument("average_entropy: empty shard");
    double sum = 0.0;
    std::size_t tokens = 0;
    for (const Sentence& s : shard) {
        ForwardResult fr = forward(model, s);
        Tensor probs = softmax(fr.logits);
        const std::size_t c = probs.cols();
        for (std::size_t j = 0; j < probs.rows(); ++j) {
            sum += shannon_entropy(
                std::span<const double>(probs.data()).subspan(j * c, c));
        }
        tokens += s.length();
    }
    return sum / static_cast<double>(per_token ? tokens : shard.size());
}

bool detect_task_switch(double current, std::optional<double> previous, double threshold) {
    if (!previous) return false;
    return current - *previous >= threshold;
}

bool snapshot_old_model(ClientState& client, const Checkpoint& previous_round_global) {
    const bool repeated =
        client.old_model && client.old_model->task_index == previous_round_global.task_index;
    client.old_model = previous_round_global;
    client.task_counter = previous_round_global.task_index + 1;
    client.cache_valid = false;
    return !repeated;
}

std::vector<Tensor> aggregate_tensors(
    const std::vector<std::pair<std::vector<Tensor>, std::size_t>>& updates) {
    if (updates.empty()) throw std::invalid_argument("aggregate: no updates");
    double total = 0.0;
    for (const auto& [params, count] : updates) total += static_cast<double>(count);
    if (total <= 0.0) throw std::invalid_argument("aggregate: zero total sample count");

    std::vector<Tensor> out = updates.front().first;
    const double w0 = static_cast<double>(updates.front().second) / total;
    for (Tensor& t : out) t *= w0;
    for (std::size_t u = 1; u < updates.size(); ++u) {
        const auto& [params, count] = updates[u];
        if (params.size() != out.size()) {
            throw std::runtime_error("aggregate: parameter count mismatch in update " +
                                     std::to_string(u));
        }
        const double w = static_cast<double>(count) / total;
        for (std::size_t i = 0; i < out.size(); ++i) {
            if (!params[i].same_shape(out[i])) {
                throw std::runtime_error("aggregate: shape mismatch in update " +
                                         std::to_string(u) + ", tensor " + std::to_string(i));
            }
            for (std::size_t k = 0; k < out[i].size(); ++k) out[i][k] += w * params[i][k];
        }
    }
    return out;
}

TaggerParams aggregate(const std::vector<ClientUpdate>& updates) {
    if (updates.empty()) throw std::invalid_argument("aggregate: no updates");
    std::vector<std::pair<std::vector<Tensor>, std::size_t>> raw;
    raw.reserve(updates.size());
    for (const ClientUpdate& u : updates) {
        std::vector<Tensor> ts;
        for (const Tensor* t : u.params.tensors()) ts.push_back(*t);
        raw.emplace_back(std::move(ts), u.sample_count);
    }
    std::vector<Tensor> merged;
    try {
        merged = aggregate_tensors(raw);
    } catch (const std::runtime_error& e) {
        // Re-map the offending index to the client id for the caller.
        std::string msg = e.what();
        for (std::size_t u = 0; u < updates.size(); ++u) {
            const std::string tag = "update " + std::to_string(u);
            const auto at = msg.find(tag);
            if (at != std::string::npos) {
                msg.replace(at, tag.size(), "client " + std::to_string(updates[u].client_id));
                break;
            }
        }
        throw std::runtime_error(msg);
    }
    TaggerParams out = updates.front().params;
    auto slots = out.tensors();
    for (std::size_t i = 0; i < slots.size(); ++i) *slots[i] = std::move(merged[i]);
    return out;
}

namespace {

struct EvalSets {
    std::vector<std::size_t> seen_types;
    std::vector<std::size_t> old_types;
    std::vector<std::size_t> new_types;
};

TaskMetricsRow evaluate_task(const TaggerModel& model, const TaskStream& stream, int task,
                             const std::vector<Sentence>& test_sentences) {
    EvalSets sets;
    for (const TaskSlice& slice : stream.slices) {
        if (slice.task_index > task) continue;
        auto& dst = slice.task_index == task ? sets.new_types : sets.old_types;
        dst.insert(dst.end(), slice.new_type_indices.begin(), slice.new_type_indices.end());
    }
    sets.seen_types = sets.old_types;
    sets.seen_types.insert(sets.seen_types.end(), sets.new_types.begin(), sets.new_types.end());

    std::vector<std::vector<int>> golds, preds;
    golds.reserve(test_sentences.size());
    preds.reserve(test_sentences.size());
    for (const Sentence& s : test_sentences) {
        golds.push_back(mask_to_types(s, sets.seen_types).labels);
        ForwardResult fr = forward(model, s);
        std::vector<int> pred(s.length());
        for (std::size_t j = 0; j < s.length(); ++j) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < fr.logits.cols(); ++c) {
                if (fr.logits(j, c) > fr.logits(j, best)) best = c;
            }
            pred[j] = static_cast<int>(best);
        }
        preds.push_back(std::move(pred));
    }
    SpanMetrics m = span_f1(preds, golds, sets.old_types, sets.new_types);
    TaskMetricsRow row;
    row.task = task;
    row.old_ma_f1 = m.old_types.macro_f1;
    row.new_ma_f1 = m.new_types.macro_f1;
    row.all_mi_f1 = m.all.micro_f1;
    row.all_ma_f1 = m.all.macro_f1;
    return row;
}

}  // namespace

ExperimentOutcome run_experiment(const FederationConfig& fed, const TaggerConfig& tagger,
                                 const MethodPlan& plan, const TaskStream& stream,
                                 const std::vector<Sentence>& test_sentences,
                                 const RoundCallback& on_round) {
    fed.validate();
    tagger.validate();
    if ((plan.use_skd) && tagger.hidden_dim % fed.skd_groups != 0) {
        throw std::invalid_argument("run_experiment: hidden_dim " +
                                    std::to_string(tagger.hidden_dim) +
                                    " is not divisible into " + std::to_string(fed.skd_groups) +
                                    " feature groups");
    }
    if (stream.slices.empty()) throw std::invalid_argument("run_experiment: empty task stream");

    ExperimentOutcome outcome;
    TaggerModel global = init_model(tagger);
    std::vector<ClientState> clients(fed.initial_clients);
    for (std::size_t i = 0; i < clients.size(); ++i) clients[i].id = static_cast<int>(i);

    std::optional<Checkpoint> previous_broadcast;

    for (const TaskSlice& slice : stream.slices) {
        const int task = slice.task_index;

        std::vector<int> receiving;
        if (task == 1) {
            for (ClientState& c : clients) receiving.push_back(c.id);
        } else {
            Rng group_rng = Rng::keyed(fed.seed, "groups", static_cast<std::uint64_t>(task));
            for (ClientState& c : clients) {
                const bool continuing = group_rng.next_below(2) == 1;
                c.group = continuing ? ClientGroup::kContinuing : ClientGroup::kOldOnly;
                c.shard.reset();
                c.cache_valid = false;
                if (continuing) receiving.push_back(c.id);
            }
            for (std::size_t k = 0; k < fed.clients_added_per_task; ++k) {
                ClientState fresh;
                fresh.id = static_cast<int>(clients.size());
                fresh.group = ClientGroup::kNew;
                fresh.task_counter = task;
                receiving.push_back(fresh.id);
                clients.push_back(std::move(fresh));
            }
        }

        std::vector<ClientShard> shards =
            shard_clients(slice, receiving, fed.subsample_fraction, fed.seed);
        for (ClientShard& shard : shards) {
            ClientState& c = clients[shard.client_id];
            c.shard = std::move(shard);
            c.cache_valid = false;
        }

        expand_head(global, slice.new_types);

        const std::size_t epochs =
            slice.new_types.size() == 1 ? fed.epochs_single_type : fed.epochs_multi_type;
        const double lr = task == 1 ? fed.lr_first_task : fed.lr_later_tasks;

        for (std::size_t r = 1; r <= fed.rounds_per_task; ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            RoundLog log;
            log.task = task;
            log.round = static_cast<int>(r);

            Checkpoint broadcast = Checkpoint::of(global, task, static_cast<int>(r));

            for (const ClientState& c : clients) {
                if (!c.shard) continue;
                log.entropies[c.id] =
                    average_entropy(global, c.shard->sentences, fed.entropy_per_token);
            }

            std::vector<int> pool;
            for (const ClientState& c : clients) pool.push_back(c.id);
            Rng select_rng = Rng::keyed(fed.seed, "select", static_cast<std::uint64_t>(task), r);
            log.selected = select_clients(pool, fed.selection_fraction, select_rng);

            std::vector<ClientUpdate> updates;
            for (int id : log.selected) {
                ClientState& client = clients[id];
                if (!client.shard) {
                    log.skipped.push_back(id);  // old-only: selectable, nothing to train
                    continue;
                }
                const double entropy_now = log.entropies.at(id);

                bool flag = false;
                if (task >= 2) {
                    flag = detect_task_switch(entropy_now, client.last_entropy,
                                              fed.entropy_threshold);
                }
                log.switch_flags[id] = flag;
                if (flag && previous_broadcast) {
                    if (!snapshot_old_model(client, *previous_broadcast)) {
                        ++outcome.monitor_warnings;
                        std::cerr << "warning: client " << id
                                  << " re-triggered the task switch monitor; keeping the latest"
                                     " snapshot (task "
                                  << previous_broadcast->task_index << ", round "
                                  << previous_broadcast->round << ")\n";
                    }
                }

                const OldContext* ctx = nullptr;
                if (client.old_model && plan.needs_old_model()) {
                    if (!client.cache_valid) {
                        client.old_cache = build_old_context(*client.old_model,
                                                             client.shard->sentences, plan);
                        client.cache_valid = true;
                    }
                    ctx = &*client.old_cache;
                }

                LocalTrainOptions opt;
                opt.plan = plan;
                opt.lr = lr;
                opt.epochs = epochs;
                opt.batch_size = fed.batch_size;
                opt.skd_groups = fed.skd_groups;
                opt.lambda1 = fed.lambda1;
                opt.lambda2 = fed.lambda2;
                opt.prototypes_include_non_entity = fed.prototypes_include_non_entity;
                opt.seed = fed.seed;
                opt.client_id = id;
                opt.task = task;
                opt.round = static_cast<int>(r);

                ClientUpdate update;
                update.client_id = id;
                update.params = local_train(global, client.shard->sentences, ctx, opt);
                update.sample_count = client.shard->sentences.size();
                updates.push_back(std::move(update));
            }

            for (ClientState& c : clients) {
                if (c.shard) c.last_entropy = log.entropies.at(c.id);
            }

            if (!updates.empty()) {
                double total = 0.0;
                for (const ClientUpdate& u : updates) total += static_cast<double>(u.sample_count);
                for (const ClientUpdate& u : updates) {
                    log.weights[u.client_id] = static_cast<double>(u.sample_count) / total;
                }
                global.params = aggregate(updates);
            }

            previous_broadcast = std::move(broadcast);
            log.wall_ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - t0)
                              .count();
            if (on_round) on_round(log);
            outcome.rounds.push_back(std::move(log));
        }

        outcome.per_task.push_back(evaluate_task(global, stream, task, test_sentences));
    }

    double mi = 0.0, ma = 0.0;
    std::size_t n = 0;
    for (const TaskMetricsRow& row : outcome.per_task) {
        if (row.task < 2) continue;
        mi += row.all_mi_f1;
        ma += row.all_ma_f1;
        ++n;
    }
    if (n > 0) {
        outcome.avg_mi_f1 = mi / static_cast<double>(n);
        outcome.avg_ma_f1 = ma / static_cast<double>(n);
    }
    return outcome;
}

}  // namespace fedner
