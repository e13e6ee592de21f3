#include "fedner/tagger.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "fedner/rng.hpp"

namespace fedner {

void TaggerConfig::validate() const {
    if (vocab_hash_buckets == 0 || embedding_dim == 0 || hidden_dim == 0) {
        throw std::invalid_argument("tagger config: dimensions must be positive");
    }
    if (hidden_dim % 2 != 0) {
        throw std::invalid_argument("tagger config: hidden_dim must be even (bidirectional)");
    }
}

std::vector<Tensor*> TaggerParams::tensors() {
    return {&embedding, &w_fwd, &u_fwd, &b_fwd, &w_bwd, &u_bwd, &b_bwd, &head_w, &head_b};
}

std::vector<const Tensor*> TaggerParams::tensors() const {
    return {&embedding, &w_fwd, &u_fwd, &b_fwd, &w_bwd, &u_bwd, &b_bwd, &head_w, &head_b};
}

std::vector<std::string> TaggerParams::tensor_names() {
    return {"embedding", "w_fwd", "u_fwd", "b_fwd", "w_bwd", "u_bwd", "b_bwd", "head_w", "head_b"};
}

Checkpoint Checkpoint::of(const TaggerModel& model, int task_index, int round) {
    return Checkpoint{model.config, model.registry, task_index, round, model.params};
}

std::size_t token_bucket(const std::string& token, std::size_t buckets) {
    std::uint64_t h = 14695981039346656037ull;
    for (char ch : token) {
        h ^= static_cast<unsigned char>(ch);
        h *= 1099511628211ull;
    }
    return static_cast<std::size_t>(h % buckets);
}

namespace {

Tensor gaussian_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
    Tensor t = Tensor::matrix(rows, cols);
    for (double& v : t.data()) v = stddev * rng.next_gaussian();
    return t;
}

// Head rows are keyed on their global row index so that incremental
// expansions reproduce the same values as a single larger expansion.
void fill_head_row(TaggerModel& model, std::size_t row_index) {
    Rng rng = Rng::keyed(model.config.seed, "head_row", row_index);
    const std::size_t d = model.config.hidden_dim;
    for (std::size_t i = 0; i < d; ++i) {
        model.params.head_w(i, row_index) = 0.02 * rng.next_gaussian();
    }
    model.params.head_b(0, row_index) = 0.0;
}

}  // namespace

TaggerModel init_model(const TaggerConfig& config) {
    config.validate();
    TaggerModel model;
    model.config = config;
    const std::size_t e = config.embedding_dim;
    const std::size_t h = config.hidden_dim / 2;

    Rng emb_rng = Rng::keyed(config.seed, "embedding");
    model.params.embedding = gaussian_matrix(config.vocab_hash_buckets, e, 0.5, emb_rng);

    const double w_std = 1.0 / std::sqrt(static_cast<double>(e));
    const double u_std = 1.0 / std::sqrt(static_cast<double>(h));
    Rng rf = Rng::keyed(config.seed, "rnn_fwd");
    model.params.w_fwd = gaussian_matrix(e, h, w_std, rf);
    model.params.u_fwd = gaussian_matrix(h, h, u_std, rf);
    model.params.b_fwd = Tensor::matrix(1, h);
    Rng rb = Rng::keyed(config.seed, "rnn_bwd");
    model.params.w_bwd = gaussian_matrix(e, h, w_std, rb);
    model.params.u_bwd = gaussian_matrix(h, h, u_std, rb);
    model.params.b_bwd = Tensor::matrix(1, h);

    // Label space starts with O only.
    model.params.head_w = Tensor::matrix(config.hidden_dim, 1);
    model.params.head_b = Tensor::matrix(1, 1);
    fill_head_row(model, 0);
    return model;
}

ForwardResult forward(const TaggerModel& model, const Sentence& sentence) {
    const std::size_t n = sentence.length();
    if (n == 0) throw std::invalid_argument("forward: empty sentence");
    const TaggerParams& p = model.params;
    const std::size_t e = model.config.embedding_dim;
    const std::size_t h = model.config.hidden_dim / 2;
    const std::size_t labels = p.label_count();

    std::vector<std::size_t> bucket(n);
    for (std::size_t j = 0; j < n; ++j) {
        bucket[j] = token_bucket(sentence.tokens[j], model.config.vocab_hash_buckets);
    }

    auto step = [&](const Tensor& w, const Tensor& u, const Tensor& b,
                    const std::vector<double>& prev, std::size_t j, std::vector<double>& out) {
        for (std::size_t c = 0; c < h; ++c) {
            double acc = b(0, c);
            for (std::size_t i = 0; i < e; ++i) acc += p.embedding(bucket[j], i) * w(i, c);
            for (std::size_t i = 0; i < h; ++i) acc += prev[i] * u(i, c);
            out[c] = std::tanh(acc);
        }
    };

    Tensor hidden = Tensor::matrix(n, model.config.hidden_dim);
    std::vector<double> prev(h, 0.0), cur(h, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        step(p.w_fwd, p.u_fwd, p.b_fwd, prev, j, cur);
        for (std::size_t c = 0; c < h; ++c) hidden(j, c) = cur[c];
        std::swap(prev, cur);
    }
    std::fill(prev.begin(), prev.end(), 0.0);
    for (std::size_t jj = 0; jj < n; ++jj) {
        const std::size_t j = n - 1 - jj;
        step(p.w_bwd, p.u_bwd, p.b_bwd, prev, j, cur);
        for (std::size_t c = 0; c < h; ++c) hidden(j, h + c) = cur[c];
        std::swap(prev, cur);
    }

    Tensor logits = Tensor::matrix(n, labels);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t c = 0; c < labels; ++c) {
            double acc = p.head_b(0, c);
            for (std::size_t i = 0; i < model.config.hidden_dim; ++i) {
                acc += hidden(j, i) * p.head_w(i, c);
            }
            logits(j, c) = acc;
        }
    }
    return {std::move(hidden), std::move(logits)};
}

TapeParams tape_params(Tape& tape, const TaggerModel& model) {
    TapeParams tp;
    for (const Tensor* t : model.params.tensors()) tp.leaves.push_back(tape.input(*t));
    tp.embedding = tp.leaves[0];
    tp.w_fwd = tp.leaves[1];
    tp.u_fwd = tp.leaves[2];
    tp.b_fwd = tp.leaves[3];
    tp.w_bwd = tp.leaves[4];
    tp.u_bwd = tp.leaves[5];
    tp.b_bwd = tp.leaves[6];
    tp.head_w = tp.leaves[7];
    tp.head_b = tp.leaves[8];
    return tp;
}

TapeForward tape_forward(Tape& tape, const TaggerModel& model, const TapeParams& tp,
                         const Sentence& sentence) {
    const std::size_t n = sentence.length();
    if (n == 0) throw std::invalid_argument("forward: empty sentence");
    const std::size_t h = model.config.hidden_dim / 2;

    std::vector<Var> emb(n);
    for (std::size_t j = 0; j < n; ++j) {
        emb[j] = tape.gather_row(
            tp.embedding, token_bucket(sentence.tokens[j], model.config.vocab_hash_buckets));
    }

    const Var zero = tape.constant(Tensor::matrix(1, h));
    std::vector<Var> fwd(n), bwd(n);
    Var prev = zero;
    for (std::size_t j = 0; j < n; ++j) {
        fwd[j] = tape.rnn_cell(emb[j], prev, tp.w_fwd, tp.u_fwd, tp.b_fwd);
        prev = fwd[j];
    }
    prev = zero;
    for (std::size_t jj = 0; jj < n; ++jj) {
        const std::size_t j = n - 1 - jj;
        bwd[j] = tape.rnn_cell(emb[j], prev, tp.w_bwd, tp.u_bwd, tp.b_bwd);
        prev = bwd[j];
    }

    std::vector<Var> rows(n);
    for (std::size_t j = 0; j < n; ++j) rows[j] = tape.concat_cols(fwd[j], bwd[j]);
    Var hidden = tape.stack_rows(rows);
    Var logits = tape.add_row(tape.matmul(hidden, tp.head_w), tp.head_b);
    return {hidden, logits};
}

void expand_head(TaggerModel& model, const std::vector<std::string>& new_types) {
    if (new_types.empty()) return;
    const std::size_t old_labels = model.label_count();
    model.registry.announce(new_types);  // rejects duplicates
    const std::size_t new_labels = model.registry.label_count();

    Tensor w = Tensor::matrix(model.config.hidden_dim, new_labels);
    Tensor b = Tensor::matrix(1, new_labels);
    for (std::size_t i = 0; i < model.config.hidden_dim; ++i) {
        for (std::size_t c = 0; c < old_labels; ++c) w(i, c) = model.params.head_w(i, c);
    }
    for (std::size_t c = 0; c < old_labels; ++c) b(0, c) = model.params.head_b(0, c);
    model.params.head_w = std::move(w);
    model.params.head_b = std::move(b);
    for (std::size_t c = old_labels; c < new_labels; ++c) fill_head_row(model, c);
}

void sgd_step(TaggerParams& params, const std::vector<Tensor>& gradients, double lr) {
    auto ts = params.tensors();
    if (gradients.size() != ts.size()) {
        throw std::invalid_argument("sgd_step: expected " + std::to_string(ts.size()) +
                                    " gradients, got " + std::to_string(gradients.size()));
    }
    for (std::size_t i = 0; i < ts.size(); ++i) {
        if (!ts[i]->same_shape(gradients[i])) {
            throw std::invalid_argument("sgd_step: gradient shape mismatch for " +
                                        TaggerParams::tensor_names()[i]);
        }
        Tensor scaled = gradients[i];
        scaled *= lr;
        *ts[i] -= scaled;
    }
}

// --- checkpoint serialization ------------------------------------------------

namespace {

constexpr char kMagic[8] = {'F', 'N', 'E', 'R', 'C', 'K', 'P', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
}

void put_tensor(std::vector<std::uint8_t>& out, const Tensor& t) {
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_u64(out, d);
    for (double v : t.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
}

struct Reader {
    const std::vector<std::uint8_t>& bytes;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > bytes.size()) throw std::runtime_error("checkpoint: truncated data");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos++]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos++]) << (8 * i);
        return v;
    }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(bytes.begin() + pos, bytes.begin() + pos + n);
        pos += n;
        return s;
    }
    Tensor tensor() {
        const std::uint32_t rank = u32();
        if (rank > 4) throw std::runtime_error("checkpoint: implausible tensor rank");
        std::vector<std::size_t> shape(rank);
        std::size_t total = 1;
        for (auto& d : shape) {
            d = static_cast<std::size_t>(u64());
            if (d == 0 || d > (1u << 26)) throw std::runtime_error("checkpoint: bad dimension");
            total *= d;
        }
        std::vector<double> data(total);
        for (double& v : data) v = std::bit_cast<double>(u64());
        return Tensor(std::move(shape), std::move(data));
    }
};

}  // namespace

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 8);
    put_u32(out, 1);  // format version
    put_u64(out, ckpt.config.vocab_hash_buckets);
    put_u64(out, ckpt.config.embedding_dim);
    put_u64(out, ckpt.config.hidden_dim);
    put_u64(out, ckpt.config.seed);
    put_u32(out, static_cast<std::uint32_t>(ckpt.registry.version()));
    for (const std::string& t : ckpt.registry.types()) put_string(out, t);
    put_u32(out, static_cast<std::uint32_t>(ckpt.task_index));
    put_u32(out, static_cast<std::uint32_t>(ckpt.round));
    auto tensors = ckpt.params.tensors();
    auto names = TaggerParams::tensor_names();
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        put_string(out, names[i]);
        put_tensor(out, *tensors[i]);
    }
    return out;
}

Checkpoint deserialize(const std::vector<std::uint8_t>& bytes) {
    Reader r{bytes};
    r.need(8);
    if (std::memcmp(bytes.data(), kMagic, 8) != 0) {
        throw std::runtime_error("checkpoint: bad magic");
    }
    r.pos = 8;
    const std::uint32_t version = r.u32();
    if (version != 1) {
        throw std::runtime_error("checkpoint: unsupported format version " +
                                 std::to_string(version));
    }
    Checkpoint ckpt;
    ckpt.config.vocab_hash_buckets = static_cast<std::size_t>(r.u64());
    ckpt.config.embedding_dim = static_cast<std::size_t>(r.u64());
    ckpt.config.hidden_dim = static_cast<std::size_t>(r.u64());
    ckpt.config.seed = r.u64();
    const std::uint32_t n_types = r.u32();
    std::vector<std::string> types(n_types);
    for (auto& t : types) t = r.str();
    ckpt.registry.announce(types);
    ckpt.task_index = static_cast<int>(r.u32());
    ckpt.round = static_cast<int>(r.u32());
    const std::uint32_t n_tensors = r.u32();
    auto names = TaggerParams::tensor_names();
    if (n_tensors != names.size()) throw std::runtime_error("checkpoint: wrong tensor count");
    auto tensors = ckpt.params.tensors();
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (r.str() != names[i]) throw std::runtime_error("checkpoint: unexpected tensor name");
        *tensors[i] = r.tensor();
    }
    if (r.pos != bytes.size()) throw std::runtime_error("checkpoint: trailing bytes");
    return ckpt;
}

}  // namespace fedner
