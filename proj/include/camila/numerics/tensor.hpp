#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "camila/error.hpp"

namespace camila {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "x" : "") << shape[i];
    }
    os << ']';
    return os.str();
}

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until a gradient reaches this node
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.size() != data.size()) {
            grad.assign(data.size(), 0.0);
        }
    }
};

using ImplPtr = std::shared_ptr<TensorImpl>;

/// Ordered record of primitive ops. Each entry owns its output node and a
/// closure that pushes the output gradient into the op's inputs. Entries are
/// appended in forward order, so replaying them in reverse is a valid
/// topological order for the backward pass.
class Tape {
public:
    struct Entry {
        ImplPtr output;
        std::function<void(const std::vector<double>&)> backward;
    };

    static Tape& current() {
        thread_local Tape tape;
        return tape;
    }

    void record(ImplPtr output, std::function<void(const std::vector<double>&)> fn) {
        entries_.push_back(Entry{std::move(output), std::move(fn)});
    }

    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    void clear() { entries_.clear(); }

    /// Replays the tape in reverse. Entries whose output never received a
    /// gradient are skipped.
    void replay_backward() {
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
            if (it->output->grad.size() == it->output->data.size() && !it->output->grad.empty()) {
                it->backward(it->output->grad);
            }
        }
    }

private:
    std::vector<Entry> entries_;
};

namespace detail {
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables tape recording for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Dense row-major array of doubles. Copies share the underlying node, the
/// way tensor handles do in most autograd libraries; use `clone()` for a deep
/// copy.
class Tensor {
public:
    Tensor() : impl_(std::make_shared<TensorImpl>()) {}

    explicit Tensor(ImplPtr impl) : impl_(std::move(impl)) {}

    static Tensor zeros(Shape shape) {
        auto impl = std::make_shared<TensorImpl>();
        impl->data.assign(shape_numel(shape), 0.0);
        impl->shape = std::move(shape);
        return Tensor(std::move(impl));
    }

    static Tensor filled(Shape shape, double value) {
        auto t = zeros(std::move(shape));
        std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
        return t;
    }

    static Tensor from(Shape shape, std::vector<double> data) {
        if (shape_numel(shape) != data.size()) {
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        }
        auto impl = std::make_shared<TensorImpl>();
        impl->shape = std::move(shape);
        impl->data = std::move(data);
        return Tensor(std::move(impl));
    }

    static Tensor scalar(double v) { return from({1, 1}, {v}); }

    const Shape& shape() const noexcept { return impl_->shape; }
    std::size_t rank() const noexcept { return impl_->shape.size(); }
    std::size_t numel() const noexcept { return impl_->data.size(); }
    std::size_t dim(std::size_t axis) const {
        if (axis >= impl_->shape.size()) {
            throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                                 shape_str(impl_->shape));
        }
        return impl_->shape[axis];
    }
    std::size_t rows() const { return dim(0); }
    std::size_t cols() const { return dim(1); }

    std::span<double> data() noexcept { return impl_->data; }
    std::span<const double> data() const noexcept { return impl_->data; }
    const std::vector<double>& values() const noexcept { return impl_->data; }

    bool has_grad() const noexcept { return impl_->grad.size() == impl_->data.size() && !impl_->data.empty(); }
    std::span<double> grad() {
        impl_->ensure_grad();
        return impl_->grad;
    }
    std::span<const double> grad() const noexcept { return impl_->grad; }
    void zero_grad() {
        if (!impl_->grad.empty()) {
            std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
        }
    }

    bool requires_grad() const noexcept { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool on) {
        impl_->requires_grad = on;
        return *this;
    }

    double item() const {
        if (numel() != 1) {
            throw DimensionError("item() on tensor of shape " + shape_str(shape()));
        }
        return impl_->data[0];
    }
    double at(std::size_t r, std::size_t c) const { return impl_->data[r * cols() + c]; }
    double& at(std::size_t r, std::size_t c) { return impl_->data[r * cols() + c]; }

    Tensor clone() const {
        auto t = from(impl_->shape, impl_->data);
        return t;
    }

    const ImplPtr& impl() const noexcept { return impl_; }

private:
    ImplPtr impl_;
};

/// Throws NumericError when any element is NaN or infinite.
inline void require_finite(const Tensor& t, const char* where) {
    for (double v : t.data()) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string("non-finite value produced by ") + where);
        }
    }
}

/// Runs the backward pass from a scalar loss, accumulating into every leaf
/// that requires grad, then discards the tape (also on failure).
inline void backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        Tape::current().clear();
        throw DimensionError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    }
    auto& tape = Tape::current();
    if (!loss.requires_grad()) {
        tape.clear();
        return;
    }
    loss.impl()->ensure_grad();
    loss.impl()->grad[0] += 1.0;
    tape.replay_backward();
    tape.clear();
}

}  // namespace camila
