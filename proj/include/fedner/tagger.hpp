#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedner/autodiff.hpp"
#include "fedner/corpus.hpp"
#include "fedner/tensor.hpp"

namespace fedner {

/// Compact differentiable sequence tagger: hashed word embeddings feeding a
/// single bidirectional tanh recurrence, with a linear classifier head that
/// grows as new label ids are announced.
struct TaggerConfig {
    std::size_t vocab_hash_buckets = 4096;
    std::size_t embedding_dim = 32;
    std::size_t hidden_dim = 64;  // must be even; must be divisible by the SKD group count
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const TaggerConfig& other) const = default;
};

/// All parameter tensors. Row-vector convention: weights are stored
/// input-dim x output-dim, biases as 1 x output-dim.
struct TaggerParams {
    Tensor embedding;   // buckets x embedding_dim
    Tensor w_fwd, u_fwd, b_fwd;  // forward direction recurrence
    Tensor w_bwd, u_bwd, b_bwd;  // backward direction recurrence
    Tensor head_w;      // hidden_dim x label_count
    Tensor head_b;      // 1 x label_count

    std::vector<Tensor*> tensors();
    std::vector<const Tensor*> tensors() const;
    static std::vector<std::string> tensor_names();
    std::size_t label_count() const { return head_w.cols(); }
};

struct TaggerModel {
    TaggerConfig config;
    LabelRegistry registry;
    TaggerParams params;

    std::size_t label_count() const { return params.label_count(); }
};

/// Immutable snapshot of a model plus its training position. Serialization
/// is byte-exact: little-endian fields, 64-bit floats in row-major order.
struct Checkpoint {
    TaggerConfig config;
    LabelRegistry registry;
    int task_index = 0;
    int round = 0;
    TaggerParams params;

    TaggerModel to_model() const { return TaggerModel{config, registry, params}; }
    static Checkpoint of(const TaggerModel& model, int task_index, int round);
};

struct ForwardResult {
    Tensor hidden;  // |x| x hidden_dim
    Tensor logits;  // |x| x label_count
};

struct TapeForward {
    Var hidden;
    Var logits;
};

/// Leaf handles for every parameter on a tape, in tensor_names() order.
struct TapeParams {
    std::vector<Var> leaves;
    Var embedding, w_fwd, u_fwd, b_fwd, w_bwd, u_bwd, b_bwd, head_w, head_b;
};

/// Deterministic token -> bucket hash (FNV-1a, platform independent).
std::size_t token_bucket(const std::string& token, std::size_t buckets);

/// Fresh model over an empty label space (O only); announce types via
/// expand_head. Initialization is keyed on config.seed per parameter.
TaggerModel init_model(const TaggerConfig& config);

/// Inference pass without gradient tracking.
ForwardResult forward(const TaggerModel& model, const Sentence& sentence);

/// Registers all parameters as tape leaves.
TapeParams tape_params(Tape& tape, const TaggerModel& model);

/// Forward pass recorded on the tape; values match forward().
TapeForward tape_forward(Tape& tape, const TaggerModel& model, const TapeParams& leaves,
                         const Sentence& sentence);

/// Grows the head by B-/I- rows for new types. Existing logits are preserved
/// exactly; new rows are initialized from a generator keyed on
/// (config.seed, label row index), so splitting an announcement into several
/// expansions yields identical parameters.
void expand_head(TaggerModel& model, const std::vector<std::string>& new_types);

/// theta <- theta - lr * grad, elementwise over all parameters.
void sgd_step(TaggerParams& params, const std::vector<Tensor>& gradients, double lr);

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);

}  // namespace fedner
