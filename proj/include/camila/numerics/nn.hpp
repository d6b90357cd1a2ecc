#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "camila/numerics/ops.hpp"

namespace camila {

using Rng = std::mt19937_64;

inline Tensor randn(Shape shape, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    auto t = Tensor::zeros(std::move(shape));
    for (double& v : t.data()) {
        v = dist(rng);
    }
    return t;
}

/// Deterministic seed derivation (splitmix64 finalizer over a mixed pair).
constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(const void* bytes, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Named, ordered collection of parameter tensors. Modules register their
/// tensors here so checkpoints, optimizers and freeze checks can address them
/// by name.
class ParamStore {
public:
    Tensor& add(const std::string& name, Tensor t, bool trainable) {
        if (index_.contains(name)) {
            throw ContractError("duplicate parameter name " + name);
        }
        t.set_requires_grad(false);
        index_[name] = entries_.size();
        entries_.push_back({name, std::move(t), trainable});
        return entries_.back().tensor;
    }

    struct Entry {
        std::string name;
        Tensor tensor;
        bool trainable;
    };

    const std::vector<Entry>& entries() const noexcept { return entries_; }
    std::vector<Entry>& entries() noexcept { return entries_; }

    Tensor* find(const std::string& name) {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &entries_[it->second].tensor;
    }

    const Tensor* find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &entries_[it->second].tensor;
    }

    /// Content hash of every parameter whose name starts with `prefix`.
    std::uint64_t hash(const std::string& prefix = "") const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& e : entries_) {
            if (e.name.rfind(prefix, 0) != 0) {
                continue;
            }
            h = fnv1a(e.name.data(), e.name.size(), h);
            for (double v : e.tensor.data()) {
                const auto bits = std::bit_cast<std::uint64_t>(v);
                h = fnv1a(&bits, sizeof bits, h);
            }
        }
        return h;
    }

    std::size_t count(const std::string& prefix = "") const {
        std::size_t n = 0;
        for (const auto& e : entries_) {
            if (e.name.rfind(prefix, 0) == 0) {
                n += e.tensor.numel();
            }
        }
        return n;
    }

private:
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
};

/// Dense layer y = x·W + b with an optional low-rank adapter contributing
/// scale·(x·A)·B.
class Linear {
public:
    Linear() = default;

    Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
           bool bias = true, bool trainable = true, double init_scale = 1.0)
        : name_(name), in_(in), out_(out) {
        const double stddev = init_scale / std::sqrt(static_cast<double>(in));
        weight_ = store.add(name + ".weight", randn({in, out}, stddev, rng), trainable);
        if (bias) {
            bias_ = store.add(name + ".bias", Tensor::zeros({1, out}), trainable);
        }
    }

    /// Attaches a rank-`rank` adapter. A is small-random and B is zero, so the
    /// adapted layer initially computes exactly what the base layer does.
    void attach_adapter(ParamStore& store, std::size_t rank, double scale, Rng& rng) {
        if (rank == 0 || rank >= std::min(in_, out_)) {
            throw ContractError("adapter rank " + std::to_string(rank) + " must be in [1, " +
                                std::to_string(std::min(in_, out_)) + ") for " + name_);
        }
        adapter_a_ = store.add(name_ + ".lora_a", randn({in_, rank}, 1.0 / std::sqrt(static_cast<double>(in_)), rng),
                               true);
        adapter_b_ = store.add(name_ + ".lora_b", Tensor::zeros({rank, out_}), true);
        adapter_scale_ = scale;
        adapter_enabled_ = true;
    }

    bool has_adapter() const noexcept { return adapter_a_.has_value(); }
    void set_adapter_enabled(bool on) noexcept { adapter_enabled_ = on; }

    Tensor forward(const Tensor& x) const {
        Tensor y = matmul(x, weight_);
        if (bias_) {
            y = add(y, *bias_);
        }
        if (adapter_a_ && adapter_enabled_) {
            y = add(y, scale(matmul(matmul(x, *adapter_a_), *adapter_b_), adapter_scale_));
        }
        return y;
    }

    std::size_t in_features() const noexcept { return in_; }
    std::size_t out_features() const noexcept { return out_; }
    const Tensor& weight() const noexcept { return weight_; }

private:
    std::string name_;
    std::size_t in_ = 0, out_ = 0;
    Tensor weight_;
    std::optional<Tensor> bias_;
    std::optional<Tensor> adapter_a_, adapter_b_;
    double adapter_scale_ = 1.0;
    bool adapter_enabled_ = false;
};

class LayerNorm {
public:
    LayerNorm() = default;
    LayerNorm(ParamStore& store, const std::string& name, std::size_t dim, bool trainable = true) {
        gamma_ = store.add(name + ".gamma", Tensor::filled({1, dim}, 1.0), trainable);
        beta_ = store.add(name + ".beta", Tensor::zeros({1, dim}), trainable);
    }
    Tensor forward(const Tensor& x) const { return layer_norm(x, gamma_, beta_); }

private:
    Tensor gamma_, beta_;
};

/// Multi-head scaled dot-product attention with separate query and key/value
/// sources and an optional additive (constant) mask.
class MultiHeadAttention {
public:
    MultiHeadAttention() = default;
    MultiHeadAttention(ParamStore& store, const std::string& name, std::size_t q_dim, std::size_t kv_dim,
                       std::size_t width, std::size_t heads, Rng& rng, bool trainable = true)
        : heads_(heads), width_(width) {
        if (width % heads != 0) {
            throw ContractError("attention width must be divisible by head count");
        }
        q_ = Linear(store, name + ".q", q_dim, width, rng, false, trainable);
        k_ = Linear(store, name + ".k", kv_dim, width, rng, false, trainable);
        v_ = Linear(store, name + ".v", kv_dim, width, rng, false, trainable);
        o_ = Linear(store, name + ".o", width, q_dim, rng, true, trainable);
    }

    Tensor forward(const Tensor& queries, const Tensor& source, const Tensor* mask = nullptr) const {
        const Tensor q = q_.forward(queries);
        const Tensor k = k_.forward(source);
        const Tensor v = v_.forward(source);
        const std::size_t hd = width_ / heads_;
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
        std::vector<Tensor> outs;
        outs.reserve(heads_);
        for (std::size_t h = 0; h < heads_; ++h) {
            const Tensor qh = heads_ == 1 ? q : slice_cols(q, h * hd, (h + 1) * hd);
            const Tensor kh = heads_ == 1 ? k : slice_cols(k, h * hd, (h + 1) * hd);
            const Tensor vh = heads_ == 1 ? v : slice_cols(v, h * hd, (h + 1) * hd);
            Tensor scores = scale(matmul_nt(qh, kh), inv_sqrt);
            if (mask != nullptr) {
                scores = add(scores, *mask);
            }
            outs.push_back(matmul(softmax(scores, 1), vh));
        }
        return o_.forward(heads_ == 1 ? outs.front() : concat(outs, 1));
    }

    std::vector<Linear*> projections() { return {&q_, &k_, &v_, &o_}; }

private:
    std::size_t heads_ = 1, width_ = 0;
    Linear q_, k_, v_, o_;
};

/// Two-layer SiLU perceptron.
class Mlp {
public:
    Mlp() = default;
    Mlp(ParamStore& store, const std::string& name, std::size_t dim, std::size_t hidden, Rng& rng,
        bool trainable = true)
        : up_(store, name + ".up", dim, hidden, rng, true, trainable),
          down_(store, name + ".down", hidden, dim, rng, true, trainable) {}

    Tensor forward(const Tensor& x) const { return down_.forward(silu(up_.forward(x))); }
    std::vector<Linear*> projections() { return {&up_, &down_}; }

private:
    Linear up_, down_;
};

/// Fixed sinusoidal signal for a scalar position, `dim` entries.
inline std::vector<double> sinusoid(double position, std::size_t dim, double base = 10000.0) {
    std::vector<double> out(dim);
    for (std::size_t i = 0; i < dim / 2; ++i) {
        const double freq = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
        out[2 * i] = std::sin(position * freq);
        out[2 * i + 1] = std::cos(position * freq);
    }
    return out;
}

/// AdamW with decoupled weight decay over the trainable entries of a store
/// selected by name prefix.
class AdamW {
public:
    struct Options {
        double lr = 3e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.0;
        double clip_norm = 0.0;  // 0 disables global-norm clipping
    };

    AdamW(std::vector<Tensor> params, Options opts) : params_(std::move(params)), opts_(opts) {
        for (const auto& p : params_) {
            m_.emplace_back(p.numel(), 0.0);
            v_.emplace_back(p.numel(), 0.0);
        }
    }

    void zero_grad() {
        for (auto& p : params_) {
            p.zero_grad();
        }
    }

    void step() {
        ++t_;
        double clip = 1.0;
        if (opts_.clip_norm > 0.0) {
            double sq = 0.0;
            for (const auto& p : params_) {
                for (double g : p.grad()) {
                    sq += g * g;
                }
            }
            const double norm = std::sqrt(sq);
            if (norm > opts_.clip_norm) {
                clip = opts_.clip_norm / norm;
            }
        }
        const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            if (!p.has_grad()) {
                continue;
            }
            auto data = p.data();
            auto grad = p.grad();
            for (std::size_t k = 0; k < data.size(); ++k) {
                const double g = grad[k] * clip;
                m_[i][k] = opts_.beta1 * m_[i][k] + (1.0 - opts_.beta1) * g;
                v_[i][k] = opts_.beta2 * v_[i][k] + (1.0 - opts_.beta2) * g * g;
                const double mhat = m_[i][k] / bc1;
                const double vhat = v_[i][k] / bc2;
                data[k] -= opts_.lr * (mhat / (std::sqrt(vhat) + opts_.eps) + opts_.weight_decay * data[k]);
            }
        }
    }

    std::size_t steps() const noexcept { return t_; }

private:
    std::vector<Tensor> params_;
    Options opts_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

}  // namespace camila
