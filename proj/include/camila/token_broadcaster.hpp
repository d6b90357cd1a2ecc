#pragma once

#include <cmath>
#include <vector>

#include "camila/encoders.hpp"
#include "camila/numerics/nn.hpp"

// Projected cosine similarity between output tokens and text positions, the
// per-position alignment, and its training loss.

namespace camila {

inline constexpr double kDegenerateNorm = 1e-12;

class TokenBroadcaster {
public:
    TokenBroadcaster(ParamStore& store, Rng& rng, std::size_t shared_dim = kEmbedDim) {
        w_o_ = store.add("broadcast.w_o", randn({kEmbedDim, shared_dim}, 1.0 / std::sqrt(double(kEmbedDim)), rng), true);
        w_t_ = store.add("broadcast.w_t", randn({kEmbedDim, shared_dim}, 1.0 / std::sqrt(double(kEmbedDim)), rng), true);
    }

    const Tensor& w_o() const noexcept { return w_o_; }
    const Tensor& w_t() const noexcept { return w_t_; }

private:
    Tensor w_o_, w_t_;
};

/// S (n × m) with S_ij = cos(O_i W_O, c_Tj W_T).
inline Tensor similarity(const Tensor& o, const Tensor& c_t, const Tensor& w_o, const Tensor& w_t) {
    if (o.rows() == 0 || c_t.rows() == 0) {
        throw ContractError("similarity needs at least one output token and one text position");
    }
    const Tensor po = matmul(o, w_o);
    const Tensor pt = matmul(c_t, w_t);
    for (const Tensor* t : {&po, &pt}) {
        for (std::size_t r = 0; r < t->rows(); ++r) {
            double sq = 0.0;
            for (std::size_t c = 0; c < t->cols(); ++c) {
                sq += t->at(r, c) * t->at(r, c);
            }
            if (std::sqrt(sq) < kDegenerateNorm) {
                throw NumericError("projected vector " + std::to_string(r) + " has zero norm");
            }
        }
    }
    return matmul_nt(normalize_rows(po), normalize_rows(pt));
}

inline Tensor similarity(const Tensor& o, const Tensor& c_t, const TokenBroadcaster& b) {
    return similarity(o, c_t, b.w_o(), b.w_t());
}

/// Column argmax of S (equivalently of its column softmax); ties → smallest i.
/// Indices are 0-based.
inline std::vector<std::size_t> align(const Tensor& s) {
    require_finite(s, "align");
    std::vector<std::size_t> alpha(s.cols(), 0);
    for (std::size_t j = 0; j < s.cols(); ++j) {
        for (std::size_t i = 1; i < s.rows(); ++i) {
            if (s.at(i, j) > s.at(alpha[j], j)) {
                alpha[j] = i;
            }
        }
    }
    return alpha;
}

/// Mean over text positions of the cross-entropy between the column softmax
/// of S and the ground-truth token index.
inline Tensor broadcast_ce_loss(const Tensor& s, const std::vector<std::size_t>& gt) {
    if (gt.size() != s.cols()) {
        throw DimensionError("broadcast_ce_loss: " + std::to_string(gt.size()) + " targets for " +
                             std::to_string(s.cols()) + " columns");
    }
    return cross_entropy(transpose(s), gt);
}

}  // namespace camila
