#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedner/corpus.hpp"
#include "fedner/rng.hpp"
#include "fedner/tagger.hpp"
#include "fedner/trainer.hpp"

namespace fedner {

struct FederationConfig {
    std::size_t initial_clients = 10;
    std::size_t clients_added_per_task = 4;
    double selection_fraction = 0.4;
    std::size_t rounds_per_task = 5;
    std::size_t epochs_single_type = 5;
    std::size_t epochs_multi_type = 10;
    double subsample_fraction = 0.6;
    double entropy_threshold = 0.6;  // jump that flags a task switch
    double lambda1 = 2.0;
    double lambda2 = 0.02;
    std::size_t skd_groups = 12;
    std::size_t batch_size = 16;
    double lr_first_task = 2e-3;
    double lr_later_tasks = 4e-4;
    // Average entropy normalized by token count (default) rather than by
    // sentence count only.
    bool entropy_per_token = true;
    bool prototypes_include_non_entity = false;
    std::uint64_t seed = 0;

    void validate() const;
};

enum class ClientGroup { kOldOnly, kContinuing, kNew };

/// One simulated participant. The shard is absent while the client sits in
/// the old-only group; the stored checkpoint is whatever the task switching
/// monitor last snapshotted.
struct ClientState {
    int id = 0;
    ClientGroup group = ClientGroup::kNew;
    std::optional<ClientShard> shard;
    std::optional<Checkpoint> old_model;
    std::optional<double> last_entropy;
    int task_counter = 1;

    // Derived old-model outputs over the current shard, built lazily.
    bool cache_valid = false;
    std::optional<OldContext> old_cache;
};

struct RoundLog {
    int task = 0;
    int round = 0;  // 1-based within the task
    std::vector<int> selected;
    std::map<int, double> entropies;      // client -> average entropy this round
    std::map<int, bool> switch_flags;     // selected clients that checked the monitor
    std::map<int, double> weights;        // aggregation weights, sum to 1
    std::vector<int> skipped;             // selected but had no data
    double wall_ms = 0.0;
};

struct TaskMetricsRow {
    int task = 0;
    double old_ma_f1 = 0.0;
    double new_ma_f1 = 0.0;
    double all_mi_f1 = 0.0;
    double all_ma_f1 = 0.0;
};

struct ExperimentOutcome {
    std::vector<RoundLog> rounds;
    std::vector<TaskMetricsRow> per_task;
    double avg_mi_f1 = 0.0;  // over tasks >= 2
    double avg_ma_f1 = 0.0;
    std::size_t monitor_warnings = 0;  // repeated snapshots within one task
};

/// Uniform sample without replacement of max(1, round(fraction * |pool|)).
std::vector<int> select_clients(const std::vector<int>& pool, double fraction, Rng& rng);

/// Mean prediction entropy of the model over the shard. Normalized by token
/// count when `per_token`, else by sentence count only.
double average_entropy(const TaggerModel& model, const std::vector<Sentence>& shard,
                       bool per_token = true);

/// True when the entropy rose by at least `threshold` since the previous
/// round; a client with no history never triggers.
bool detect_task_switch(double current, std::optional<double> previous, double threshold);

/// Stores the given checkpoint as the client's old model and advances its
/// task counter. Returns false when this replaces a snapshot already taken
/// for the same stored task (repeated trigger).
bool snapshot_old_model(ClientState& client, const Checkpoint& previous_round_global);

struct ClientUpdate {
    int client_id = 0;
    TaggerParams params;
    std::size_t sample_count = 0;
};

/// Sample-count-weighted elementwise mean. All updates must have identical
/// shapes; a mismatch reports the offending client.
TaggerParams aggregate(const std::vector<ClientUpdate>& updates);
std::vector<Tensor> aggregate_tensors(
    const std::vector<std::pair<std::vector<Tensor>, std::size_t>>& updates);

using RoundCallback = std::function<void(const RoundLog&)>;

/// Full federated run over the task stream, evaluated after each task on the
/// test sentences with all types seen so far unmasked.
ExperimentOutcome run_experiment(const FederationConfig& fed, const TaggerConfig& tagger,
                                 const MethodPlan& plan, const TaskStream& stream,
                                 const std::vector<Sentence>& test_sentences,
                                 const RoundCallback& on_round = nullptr);

}  // namespace fedner
