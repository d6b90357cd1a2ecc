#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "camila/numerics/tensor.hpp"

// Differentiable primitives. Every op takes and returns `Tensor` handles and
// records a backward closure on the current tape when any input requires grad
// and grad mode is on. Matrix ops treat tensors as rank-2 row-major arrays.

namespace camila {

namespace detail {

inline void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(op) + ": expected a rank-2 tensor, got " + shape_str(t.shape()));
    }
}

inline bool needs_tape(std::initializer_list<const Tensor*> inputs) {
    if (!grad_enabled()) {
        return false;
    }
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) {
            return true;
        }
    }
    return false;
}

inline void accumulate(const ImplPtr& dst, const std::vector<double>& src) {
    dst->ensure_grad();
    for (std::size_t i = 0; i < src.size(); ++i) {
        dst->grad[i] += src[i];
    }
}

// C(p×r) += A(p×q) · B(q×r)
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t p, std::size_t q, std::size_t r) {
    for (std::size_t i = 0; i < p; ++i) {
        double* ci = c + i * r;
        const double* ai = a + i * q;
        for (std::size_t k = 0; k < q; ++k) {
            const double aik = ai[k];
            const double* bk = b + k * r;
            for (std::size_t j = 0; j < r; ++j) {
                ci[j] += aik * bk[j];
            }
        }
    }
}

// C(p×r) += A(p×q) · B(r×q)ᵀ
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t p, std::size_t q, std::size_t r) {
    for (std::size_t i = 0; i < p; ++i) {
        const double* ai = a + i * q;
        for (std::size_t j = 0; j < r; ++j) {
            const double* bj = b + j * q;
            double s = 0.0;
            for (std::size_t k = 0; k < q; ++k) {
                s += ai[k] * bj[k];
            }
            c[i * r + j] += s;
        }
    }
}

// C(q×r) += A(p×q)ᵀ · B(p×r)
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t p, std::size_t q, std::size_t r) {
    for (std::size_t i = 0; i < p; ++i) {
        const double* ai = a + i * q;
        const double* bi = b + i * r;
        for (std::size_t k = 0; k < q; ++k) {
            const double aik = ai[k];
            double* ck = c + k * r;
            for (std::size_t j = 0; j < r; ++j) {
                ck[j] += aik * bi[j];
            }
        }
    }
}

inline Tensor make_output(Shape shape, bool tracked) {
    auto out = Tensor::zeros(std::move(shape));
    out.set_requires_grad(tracked);
    return out;
}

// Broadcast classification for a binary op where `b` is expanded to `a`'s
// rank-2 shape along unit axes.
struct Broadcast {
    std::size_t rows, cols;
    bool b_rows_one, b_cols_one;
};

inline Broadcast broadcast_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) {
        if (a.rank() == 2) {
            return {a.rows(), a.cols(), false, false};
        }
        return {1, a.numel(), false, false};
    }
    require_rank2(a, op);
    require_rank2(b, op);
    const bool r1 = b.rows() == 1 && a.rows() != 1;
    const bool c1 = b.cols() == 1 && a.cols() != 1;
    if ((b.rows() != a.rows() && !r1) || (b.cols() != a.cols() && !c1)) {
        throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(b.shape()) + " to " +
                             shape_str(a.shape()));
    }
    return {a.rows(), a.cols(), r1, c1};
}

inline std::size_t b_index(const Broadcast& bc, std::size_t i, std::size_t j) {
    const std::size_t bi = bc.b_rows_one ? 0 : i;
    const std::size_t bj = bc.b_cols_one ? 0 : j;
    const std::size_t bcols = bc.b_cols_one ? 1 : bc.cols;
    return bi * bcols + bj;
}

template <class Fwd, class DA, class DB>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, DA da, DB db) {
    const Broadcast bc = broadcast_shape(a, b, op);
    const bool tracked = needs_tape({&a, &b});
    Tensor out = make_output(a.shape(), tracked);
    const auto& av = a.values();
    const auto& bv = b.values();
    auto ov = out.data();
    for (std::size_t i = 0; i < bc.rows; ++i) {
        for (std::size_t j = 0; j < bc.cols; ++j) {
            const std::size_t k = i * bc.cols + j;
            ov[k] = fwd(av[k], bv[b_index(bc, i, j)]);
        }
    }
    if (tracked) {
        auto ai = a.impl();
        auto bi = b.impl();
        Tape::current().record(out.impl(), [ai, bi, bc, da, db](const std::vector<double>& g) {
            if (ai->requires_grad) {
                ai->ensure_grad();
                for (std::size_t i = 0; i < bc.rows; ++i) {
                    for (std::size_t j = 0; j < bc.cols; ++j) {
                        const std::size_t k = i * bc.cols + j;
                        ai->grad[k] += g[k] * da(ai->data[k], bi->data[b_index(bc, i, j)]);
                    }
                }
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (std::size_t i = 0; i < bc.rows; ++i) {
                    for (std::size_t j = 0; j < bc.cols; ++j) {
                        const std::size_t k = i * bc.cols + j;
                        const std::size_t kb = b_index(bc, i, j);
                        bi->grad[kb] += g[k] * db(ai->data[k], bi->data[kb]);
                    }
                }
            }
        });
    }
    return out;
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
    const bool tracked = needs_tape({&a});
    Tensor out = make_output(a.shape(), tracked);
    const auto& av = a.values();
    auto ov = out.data();
    for (std::size_t k = 0; k < av.size(); ++k) {
        ov[k] = fwd(av[k]);
    }
    if (tracked) {
        auto ai = a.impl();
        auto oi = out.impl();
        Tape::current().record(oi, [ai, oi_w = std::weak_ptr<TensorImpl>(oi), deriv](const std::vector<double>& g) {
            auto o = oi_w.lock();
            ai->ensure_grad();
            for (std::size_t k = 0; k < g.size(); ++k) {
                ai->grad[k] += g[k] * deriv(ai->data[k], o->data[k]);
            }
        });
    }
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_rank2(a, "matmul");
    detail::require_rank2(b, "matmul");
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    const std::size_t p = a.rows(), q = a.cols(), r = b.cols();
    const bool tracked = detail::needs_tape({&a, &b});
    Tensor out = detail::make_output({p, r}, tracked);
    detail::gemm_nn(a.values().data(), b.values().data(), out.data().data(), p, q, r);
    if (tracked) {
        auto ai = a.impl();
        auto bi = b.impl();
        Tape::current().record(out.impl(), [ai, bi, p, q, r](const std::vector<double>& g) {
            if (ai->requires_grad) {
                ai->ensure_grad();
                detail::gemm_nt(g.data(), bi->data.data(), ai->grad.data(), p, r, q);
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                detail::gemm_tn(ai->data.data(), g.data(), bi->grad.data(), p, q, r);
            }
        });
    }
    return out;
}

/// a · bᵀ without materializing the transpose.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    detail::require_rank2(a, "matmul_nt");
    detail::require_rank2(b, "matmul_nt");
    if (a.cols() != b.cols()) {
        throw DimensionError("matmul_nt: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()) + "^T");
    }
    const std::size_t p = a.rows(), q = a.cols(), r = b.rows();
    const bool tracked = detail::needs_tape({&a, &b});
    Tensor out = detail::make_output({p, r}, tracked);
    detail::gemm_nt(a.values().data(), b.values().data(), out.data().data(), p, q, r);
    if (tracked) {
        auto ai = a.impl();
        auto bi = b.impl();
        Tape::current().record(out.impl(), [ai, bi, p, q, r](const std::vector<double>& g) {
            if (ai->requires_grad) {
                ai->ensure_grad();
                detail::gemm_nn(g.data(), bi->data.data(), ai->grad.data(), p, r, q);
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                detail::gemm_tn(g.data(), ai->data.data(), bi->grad.data(), p, r, q);
            }
        });
    }
    return out;
}

inline Tensor transpose(const Tensor& a) {
    detail::require_rank2(a, "transpose");
    const std::size_t p = a.rows(), q = a.cols();
    const bool tracked = detail::needs_tape({&a});
    Tensor out = detail::make_output({q, p}, tracked);
    auto ov = out.data();
    const auto& av = a.values();
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < q; ++j) {
            ov[j * p + i] = av[i * q + j];
        }
    }
    if (tracked) {
        auto ai = a.impl();
        Tape::current().record(out.impl(), [ai, p, q](const std::vector<double>& g) {
            ai->ensure_grad();
            for (std::size_t i = 0; i < p; ++i) {
                for (std::size_t j = 0; j < q; ++j) {
                    ai->grad[i * q + j] += g[j * p + i];
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic. `b` may broadcast along unit axes of a rank-2 `a`.

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::broadcast_binary(
        a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::broadcast_binary(
        a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::broadcast_binary(
        a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

inline Tensor scale(const Tensor& a, double s) {
    return detail::unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

inline Tensor add_scalar(const Tensor& a, double s) {
    return detail::unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

/// 1 - a
inline Tensor one_minus(const Tensor& a) {
    return detail::unary(a, [](double x) { return 1.0 - x; }, [](double, double) { return -1.0; });
}

inline Tensor square(const Tensor& a) {
    return detail::unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

// ---------------------------------------------------------------------------
// Nonlinearities

inline Tensor relu(const Tensor& a) {
    return detail::unary(
        a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

/// x·sigmoid(x)
inline Tensor silu(const Tensor& a) {
    return detail::unary(
        a, [](double x) { return x / (1.0 + std::exp(-x)); },
        [](double x, double) {
            const double s = 1.0 / (1.0 + std::exp(-x));
            return s * (1.0 + x * (1.0 - s));
        });
}

inline Tensor reciprocal(const Tensor& a) {
    for (double v : a.data()) {
        if (v == 0.0) {
            throw NumericError("reciprocal of zero");
        }
    }
    return detail::unary(
        a, [](double x) { return 1.0 / x; }, [](double, double y) { return -y * y; });
}

/// Elementwise clamp; the gradient is zero outside [lo, hi].
inline Tensor clamp(const Tensor& a, double lo, double hi) {
    return detail::unary(
        a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
        [lo, hi](double x, double) { return (x < lo || x > hi) ? 0.0 : 1.0; });
}

inline Tensor tanh(const Tensor& a) {
    return detail::unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(const Tensor& a) {
    return detail::unary(
        a,
        [](double x) {
            if (x >= 0.0) {
                return 1.0 / (1.0 + std::exp(-x));
            }
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

inline Tensor exp(const Tensor& a) {
    Tensor out = detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
    require_finite(out, "exp");
    return out;
}

inline Tensor log(const Tensor& a) {
    for (double v : a.data()) {
        if (!(v > 0.0)) {
            throw NumericError("log of non-positive value");
        }
    }
    return detail::unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a) {
    const bool tracked = detail::needs_tape({&a});
    Tensor out = detail::make_output({1, 1}, tracked);
    double s = 0.0;
    for (double v : a.data()) {
        s += v;
    }
    out.data()[0] = s;
    if (tracked) {
        auto ai = a.impl();
        Tape::current().record(out.impl(), [ai](const std::vector<double>& g) {
            ai->ensure_grad();
            for (double& v : ai->grad) {
                v += g[0];
            }
        });
    }
    return out;
}

inline Tensor mean(const Tensor& a) {
    if (a.numel() == 0) {
        throw DimensionError("mean of an empty tensor");
    }
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

/// Sum along `axis` of a rank-2 tensor, keeping the reduced axis as size 1.
inline Tensor sum_axis(const Tensor& a, std::size_t axis) {
    detail::require_rank2(a, "sum_axis");
    if (axis > 1) {
        throw DimensionError("sum_axis: axis must be 0 or 1");
    }
    const std::size_t p = a.rows(), q = a.cols();
    const bool tracked = detail::needs_tape({&a});
    Tensor out = detail::make_output(axis == 0 ? Shape{1, q} : Shape{p, 1}, tracked);
    auto ov = out.data();
    const auto& av = a.values();
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < q; ++j) {
            ov[axis == 0 ? j : i] += av[i * q + j];
        }
    }
    if (tracked) {
        auto ai = a.impl();
        Tape::current().record(out.impl(), [ai, p, q, axis](const std::vector<double>& g) {
            ai->ensure_grad();
            for (std::size_t i = 0; i < p; ++i) {
                for (std::size_t j = 0; j < q; ++j) {
                    ai->grad[i * q + j] += g[axis == 0 ? j : i];
                }
            }
        });
    }
    return out;
}

inline Tensor mean_axis(const Tensor& a, std::size_t axis) {
    const double n = static_cast<double>(axis == 0 ? a.rows() : a.cols());
    return scale(sum_axis(a, axis), 1.0 / n);
}

// ---------------------------------------------------------------------------
// Normalization

/// Numerically stable softmax of a rank-2 tensor along `axis` (0: over rows
/// within each column, 1: over columns within each row).
inline Tensor softmax(const Tensor& a, std::size_t axis) {
    detail::require_rank2(a, "softmax");
    if (axis > 1) {
        throw DimensionError("softmax: axis must be 0 or 1");
    }
    const std::size_t p = a.rows(), q = a.cols();
    const std::size_t outer = axis == 1 ? p : q;
    const std::size_t inner = axis == 1 ? q : p;
    const std::size_t outer_stride = axis == 1 ? q : 1;
    const std::size_t inner_stride = axis == 1 ? 1 : q;
    const bool tracked = detail::needs_tape({&a});
    Tensor out = detail::make_output(a.shape(), tracked);
    const auto& av = a.values();
    auto ov = out.data();
    for (std::size_t o = 0; o < outer; ++o) {
        const std::size_t base = o * outer_stride;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < inner; ++k) {
            mx = std::max(mx, av[base + k * inner_stride]);
        }
        if (!std::isfinite(mx)) {
            throw NumericError("softmax: non-finite maximum");
        }
        double z = 0.0;
        for (std::size_t k = 0; k < inner; ++k) {
            const double e = std::exp(av[base + k * inner_stride] - mx);
            ov[base + k * inner_stride] = e;
            z += e;
        }
        for (std::size_t k = 0; k < inner; ++k) {
            ov[base + k * inner_stride] /= z;
        }
    }
    if (tracked) {
        auto ai = a.impl();
        auto oi = out.impl();
        Tape::current().record(oi, [ai, oi_w = std::weak_ptr<TensorImpl>(oi), outer, inner, outer_stride,
                                    inner_stride](const std::vector<double>& g) {
            auto o_impl = oi_w.lock();
            const auto& y = o_impl->data;
            ai->ensure_grad();
            for (std::size_t o = 0; o < outer; ++o) {
                const std::size_t base = o * outer_stride;
                double dot = 0.0;
                for (std::size_t k = 0; k < inner; ++k) {
                    const std::size_t idx = base + k * inner_stride;
                    dot += g[idx] * y[idx];
                }
                for (std::size_t k = 0; k < inner; ++k) {
                    const std::size_t idx = base + k * inner_stride;
                    ai->grad[idx] += y[idx] * (g[idx] - dot);
                }
            }
        });
    }
    return out;
}

/// Row-wise layer normalization with affine parameters `gamma`, `beta` (1×q).
inline Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
    detail::require_rank2(a, "layer_norm");
    const std::size_t p = a.rows(), q = a.cols();
    if (gamma.numel() != q || beta.numel() != q) {
        throw DimensionError("layer_norm: affine parameters must have " + std::to_string(q) + " entries");
    }
    const bool tracked = detail::needs_tape({&a, &gamma, &beta});
    Tensor out = detail::make_output(a.shape(), tracked);
    std::vector<double> xhat(p * q);
    std::vector<double> inv_std(p);
    const auto& av = a.values();
    const auto& gv = gamma.values();
    const auto& bv = beta.values();
    auto ov = out.data();
    for (std::size_t i = 0; i < p; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < q; ++j) {
            mu += av[i * q + j];
        }
        mu /= static_cast<double>(q);
        double var = 0.0;
        for (std::size_t j = 0; j < q; ++j) {
            const double d = av[i * q + j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(q);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < q; ++j) {
            const std::size_t k = i * q + j;
            xhat[k] = (av[k] - mu) * inv_std[i];
            ov[k] = xhat[k] * gv[j] + bv[j];
        }
    }
    if (tracked) {
        auto ai = a.impl();
        auto gi = gamma.impl();
        auto bi = beta.impl();
        Tape::current().record(out.impl(), [ai, gi, bi, p, q, xhat = std::move(xhat),
                                            inv_std = std::move(inv_std)](const std::vector<double>& g) {
            if (gi->requires_grad) {
                gi->ensure_grad();
                for (std::size_t i = 0; i < p; ++i) {
                    for (std::size_t j = 0; j < q; ++j) {
                        gi->grad[j] += g[i * q + j] * xhat[i * q + j];
                    }
                }
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (std::size_t i = 0; i < p; ++i) {
                    for (std::size_t j = 0; j < q; ++j) {
                        bi->grad[j] += g[i * q + j];
                    }
                }
            }
            if (ai->requires_grad) {
                ai->ensure_grad();
                const double nq = static_cast<double>(q);
                for (std::size_t i = 0; i < p; ++i) {
                    double s1 = 0.0, s2 = 0.0;
                    for (std::size_t j = 0; j < q; ++j) {
                        const double dxh = g[i * q + j] * gi->data[j];
                        s1 += dxh;
                        s2 += dxh * xhat[i * q + j];
                    }
                    for (std::size_t j = 0; j < q; ++j) {
                        const double dxh = g[i * q + j] * gi->data[j];
                        ai->grad[i * q + j] += inv_std[i] * (dxh - s1 / nq - xhat[i * q + j] * s2 / nq);
                    }
                }
            }
        });
    }
    return out;
}

/// Divides each row by sqrt(‖row‖² + eps). The eps only guards the gradient;
/// callers that must reject degenerate rows check norms before calling.
inline Tensor normalize_rows(const Tensor& a, double eps = 1e-12) {
    detail::require_rank2(a, "normalize_rows");
    const std::size_t p = a.rows(), q = a.cols();
    const bool tracked = detail::needs_tape({&a});
    Tensor out = detail::make_output(a.shape(), tracked);
    std::vector<double> norms(p);
    const auto& av = a.values();
    auto ov = out.data();
    for (std::size_t i = 0; i < p; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < q; ++j) {
            s += av[i * q + j] * av[i * q + j];
        }
        norms[i] = std::sqrt(s + eps);
        for (std::size_t j = 0; j < q; ++j) {
            ov[i * q + j] = av[i * q + j] / norms[i];
        }
    }
    if (tracked) {
        auto ai = a.impl();
        auto oi = out.impl();
        Tape::current().record(oi, [ai, oi_w = std::weak_ptr<TensorImpl>(oi), p, q,
                                    norms = std::move(norms)](const std::vector<double>& g) {
            auto o_impl = oi_w.lock();
            const auto& y = o_impl->data;
            ai->ensure_grad();
            for (std::size_t i = 0; i < p; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < q; ++j) {
                    dot += g[i * q + j] * y[i * q + j];
                }
                for (std::size_t j = 0; j < q; ++j) {
                    ai->grad[i * q + j] += (g[i * q + j] - y[i * q + j] * dot) / norms[i];
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Structural ops

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw DimensionError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
    }
    const bool tracked = detail::needs_tape({&a});
    Tensor out = Tensor::from(std::move(shape), a.values());
    out.set_requires_grad(tracked);
    if (tracked) {
        auto ai = a.impl();
        Tape::current().record(out.impl(), [ai](const std::vector<double>& g) { detail::accumulate(ai, g); });
    }
    return out;
}

/// Concatenates rank-2 tensors along `axis`.
inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) {
        throw DimensionError("concat of zero tensors");
    }
    if (axis > 1) {
        throw DimensionError("concat: axis must be 0 or 1");
    }
    bool tracked = false;
    std::size_t total = 0;
    const std::size_t other = axis == 0 ? parts[0].cols() : parts[0].rows();
    for (const auto& t : parts) {
        detail::require_rank2(t, "concat");
        if ((axis == 0 ? t.cols() : t.rows()) != other) {
            throw DimensionError("concat: mismatched shapes " + shape_str(parts[0].shape()) + " and " +
                                 shape_str(t.shape()));
        }
        total += axis == 0 ? t.rows() : t.cols();
        tracked = tracked || (grad_enabled() && t.requires_grad());
    }
    const std::size_t p = axis == 0 ? total : other;
    const std::size_t q = axis == 0 ? other : total;
    Tensor out = detail::make_output({p, q}, tracked);
    auto ov = out.data();
    std::size_t offset = 0;
    for (const auto& t : parts) {
        const auto& tv = t.values();
        const std::size_t tr = t.rows(), tc = t.cols();
        for (std::size_t i = 0; i < tr; ++i) {
            for (std::size_t j = 0; j < tc; ++j) {
                const std::size_t oi = axis == 0 ? offset + i : i;
                const std::size_t oj = axis == 0 ? j : offset + j;
                ov[oi * q + oj] = tv[i * tc + j];
            }
        }
        offset += axis == 0 ? tr : tc;
    }
    if (tracked) {
        std::vector<ImplPtr> impls;
        for (const auto& t : parts) {
            impls.push_back(t.impl());
        }
        Tape::current().record(out.impl(), [impls, axis, q](const std::vector<double>& g) {
            std::size_t off = 0;
            for (const auto& ti : impls) {
                const std::size_t tr = ti->shape[0], tc = ti->shape[1];
                if (ti->requires_grad) {
                    ti->ensure_grad();
                    for (std::size_t i = 0; i < tr; ++i) {
                        for (std::size_t j = 0; j < tc; ++j) {
                            const std::size_t oi = axis == 0 ? off + i : i;
                            const std::size_t oj = axis == 0 ? j : off + j;
                            ti->grad[i * tc + j] += g[oi * q + oj];
                        }
                    }
                }
                off += axis == 0 ? tr : tc;
            }
        });
    }
    return out;
}

/// Rows [begin, end) of a rank-2 tensor.
inline Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
    detail::require_rank2(a, "slice_rows");
    if (begin > end || end > a.rows()) {
        throw DimensionError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                             ") out of bounds for " + shape_str(a.shape()));
    }
    const std::size_t q = a.cols();
    const bool tracked = detail::needs_tape({&a});
    Tensor out = detail::make_output({end - begin, q}, tracked);
    std::copy(a.values().begin() + static_cast<std::ptrdiff_t>(begin * q),
              a.values().begin() + static_cast<std::ptrdiff_t>(end * q), out.data().begin());
    if (tracked) {
        auto ai = a.impl();
        Tape::current().record(out.impl(), [ai, begin, q](const std::vector<double>& g) {
            ai->ensure_grad();
            for (std::size_t k = 0; k < g.size(); ++k) {
                ai->grad[begin * q + k] += g[k];
            }
        });
    }
    return out;
}

/// Columns [begin, end) of a rank-2 tensor.
inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
    detail::require_rank2(a, "slice_cols");
    if (begin > end || end > a.cols()) {
        throw DimensionError("slice_cols: range out of bounds for " + shape_str(a.shape()));
    }
    const std::size_t p = a.rows(), q = a.cols(), w = end - begin;
    const bool tracked = detail::needs_tape({&a});
    Tensor out = detail::make_output({p, w}, tracked);
    auto ov = out.data();
    const auto& av = a.values();
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            ov[i * w + j] = av[i * q + begin + j];
        }
    }
    if (tracked) {
        auto ai = a.impl();
        Tape::current().record(out.impl(), [ai, p, q, w, begin](const std::vector<double>& g) {
            ai->ensure_grad();
            for (std::size_t i = 0; i < p; ++i) {
                for (std::size_t j = 0; j < w; ++j) {
                    ai->grad[i * q + begin + j] += g[i * w + j];
                }
            }
        });
    }
    return out;
}

/// Row gather: out[k] = a[index[k]].
inline Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& index) {
    detail::require_rank2(a, "gather_rows");
    const std::size_t q = a.cols();
    for (std::size_t idx : index) {
        if (idx >= a.rows()) {
            throw DimensionError("gather_rows: index " + std::to_string(idx) + " out of range");
        }
    }
    const bool tracked = detail::needs_tape({&a});
    Tensor out = detail::make_output({index.size(), q}, tracked);
    auto ov = out.data();
    const auto& av = a.values();
    for (std::size_t k = 0; k < index.size(); ++k) {
        std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(index[k] * q), q,
                    ov.begin() + static_cast<std::ptrdiff_t>(k * q));
    }
    if (tracked) {
        auto ai = a.impl();
        Tape::current().record(out.impl(), [ai, index, q](const std::vector<double>& g) {
            ai->ensure_grad();
            for (std::size_t k = 0; k < index.size(); ++k) {
                for (std::size_t j = 0; j < q; ++j) {
                    ai->grad[index[k] * q + j] += g[k * q + j];
                }
            }
        });
    }
    return out;
}

/// Copy that does not participate in the tape.
inline Tensor detach(const Tensor& a) { return Tensor::from(a.shape(), a.values()); }

/// Forward value of `hard`, gradient of `soft` (straight-through estimator).
inline Tensor straight_through(const Tensor& hard, const Tensor& soft) {
    if (hard.shape() != soft.shape()) {
        throw DimensionError("straight_through: shape mismatch");
    }
    const bool tracked = detail::needs_tape({&soft});
    Tensor out = detail::make_output(hard.shape(), tracked);
    std::copy(hard.values().begin(), hard.values().end(), out.data().begin());
    if (tracked) {
        auto si = soft.impl();
        Tape::current().record(out.impl(), [si](const std::vector<double>& g) { detail::accumulate(si, g); });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Spatial ops on (H·W)×C row-major feature maps.

inline Tensor avg_pool(const Tensor& a, std::size_t height, std::size_t width, std::size_t factor) {
    detail::require_rank2(a, "avg_pool");
    if (a.rows() != height * width || height % factor != 0 || width % factor != 0) {
        throw DimensionError("avg_pool: feature map does not match grid");
    }
    const std::size_t c = a.cols(), oh = height / factor, ow = width / factor;
    const double inv = 1.0 / static_cast<double>(factor * factor);
    const bool tracked = detail::needs_tape({&a});
    Tensor out = detail::make_output({oh * ow, c}, tracked);
    auto ov = out.data();
    const auto& av = a.values();
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            const std::size_t o = (y / factor) * ow + x / factor;
            for (std::size_t k = 0; k < c; ++k) {
                ov[o * c + k] += av[(y * width + x) * c + k] * inv;
            }
        }
    }
    if (tracked) {
        auto ai = a.impl();
        Tape::current().record(out.impl(), [ai, height, width, factor, c, ow, inv](const std::vector<double>& g) {
            ai->ensure_grad();
            for (std::size_t y = 0; y < height; ++y) {
                for (std::size_t x = 0; x < width; ++x) {
                    const std::size_t o = (y / factor) * ow + x / factor;
                    for (std::size_t k = 0; k < c; ++k) {
                        ai->grad[(y * width + x) * c + k] += g[o * c + k] * inv;
                    }
                }
            }
        });
    }
    return out;
}

inline Tensor upsample_nearest(const Tensor& a, std::size_t height, std::size_t width, std::size_t factor) {
    detail::require_rank2(a, "upsample_nearest");
    if (a.rows() != height * width) {
        throw DimensionError("upsample_nearest: feature map does not match grid");
    }
    const std::size_t c = a.cols(), oh = height * factor, ow = width * factor;
    const bool tracked = detail::needs_tape({&a});
    Tensor out = detail::make_output({oh * ow, c}, tracked);
    auto ov = out.data();
    const auto& av = a.values();
    for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
            const std::size_t src = (y / factor) * width + x / factor;
            for (std::size_t k = 0; k < c; ++k) {
                ov[(y * ow + x) * c + k] = av[src * c + k];
            }
        }
    }
    if (tracked) {
        auto ai = a.impl();
        Tape::current().record(out.impl(), [ai, width, factor, c, oh, ow](const std::vector<double>& g) {
            ai->ensure_grad();
            for (std::size_t y = 0; y < oh; ++y) {
                for (std::size_t x = 0; x < ow; ++x) {
                    const std::size_t src = (y / factor) * width + x / factor;
                    for (std::size_t k = 0; k < c; ++k) {
                        ai->grad[src * c + k] += g[(y * ow + x) * c + k];
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Losses

/// Mean cross-entropy of row-wise logits against class indices.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& targets) {
    detail::require_rank2(logits, "cross_entropy");
    const std::size_t p = logits.rows(), c = logits.cols();
    if (targets.size() != p) {
        throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                             std::to_string(p) + " rows");
    }
    if (p == 0) {
        throw DimensionError("cross_entropy: empty batch");
    }
    for (std::size_t t : targets) {
        if (t >= c) {
            throw DimensionError("cross_entropy: target index " + std::to_string(t) + " out of range for " +
                                 std::to_string(c) + " classes");
        }
    }
    const bool tracked = detail::needs_tape({&logits});
    Tensor out = detail::make_output({1, 1}, tracked);
    std::vector<double> probs(p * c);
    const auto& lv = logits.values();
    double total = 0.0;
    for (std::size_t i = 0; i < p; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) {
            mx = std::max(mx, lv[i * c + j]);
        }
        if (!std::isfinite(mx)) {
            throw NumericError("cross_entropy: non-finite logits");
        }
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            probs[i * c + j] = std::exp(lv[i * c + j] - mx);
            z += probs[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) {
            probs[i * c + j] /= z;
        }
        total += -(lv[i * c + targets[i]] - mx - std::log(z));
    }
    out.data()[0] = total / static_cast<double>(p);
    if (tracked) {
        auto li = logits.impl();
        Tape::current().record(out.impl(), [li, targets, probs = std::move(probs), p, c](const std::vector<double>& g) {
            li->ensure_grad();
            const double w = g[0] / static_cast<double>(p);
            for (std::size_t i = 0; i < p; ++i) {
                for (std::size_t j = 0; j < c; ++j) {
                    li->grad[i * c + j] += w * (probs[i * c + j] - (j == targets[i] ? 1.0 : 0.0));
                }
            }
        });
    }
    return out;
}

/// Mean squared error between same-shape tensors.
inline Tensor mse(const Tensor& a, const Tensor& b) { return mean(square(sub(a, b))); }

}  // namespace camila
