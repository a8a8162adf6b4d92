#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace fseg {

/// Thrown on any dimension/shape contract violation; the message names the
/// offending dimension.
class ShapeError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class GradError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

namespace autograd {

// Thread-local so concurrent client trainers do not interfere.
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

}  // namespace autograd

inline std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

template <class S>
struct TensorImpl {
    using Vec = Eigen::Array<S, Eigen::Dynamic, 1>;

    std::vector<int> shape;
    Vec values;
    Vec grad;  // size 0 until first accumulation / zero_grad()
    bool requires_grad = false;
    bool backward_done = false;

    // Backprop record: present only on op results created while grad mode is
    // on and at least one parent needs a gradient.
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(TensorImpl&)> backward_fn;

    bool needs_grad() const { return requires_grad || backward_fn != nullptr; }

    void ensure_grad() {
        if (grad.size() == 0) grad = Vec::Zero(values.size());
    }

    void accumulate(const Vec& g) {
        ensure_grad();
        grad += g;
    }
};

/// Dense n-dimensional array handle with reverse-mode autodiff.
///
/// Copying a Tensor copies the handle, not the data; clone() deep-copies.
/// The scalar type is a template parameter: double for tests and oracles,
/// float for experiment runs.
template <class S>
class Tensor {
  public:
    using Scalar = S;
    using Vec = Eigen::Array<S, Eigen::Dynamic, 1>;
    using Impl = TensorImpl<S>;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
        return full(std::move(shape), S(0), requires_grad);
    }

    static Tensor ones(std::vector<int> shape, bool requires_grad = false) {
        return full(std::move(shape), S(1), requires_grad);
    }

    static Tensor full(std::vector<int> shape, S v, bool requires_grad = false) {
        auto impl = std::make_shared<Impl>();
        impl->values = Vec::Constant(shape_numel(shape), v);
        impl->shape = std::move(shape);
        impl->requires_grad = requires_grad;
        return Tensor(std::move(impl));
    }

    static Tensor from_vector(std::vector<int> shape, const std::vector<S>& vals,
                              bool requires_grad = false) {
        if (static_cast<std::int64_t>(vals.size()) != shape_numel(shape))
            throw ShapeError("from_vector: " + std::to_string(vals.size()) +
                             " values for shape " + shape_str(shape));
        auto impl = std::make_shared<Impl>();
        impl->shape = std::move(shape);
        impl->values = Eigen::Map<const Vec>(vals.data(), vals.size());
        impl->requires_grad = requires_grad;
        return Tensor(std::move(impl));
    }

    static Tensor scalar(S v, bool requires_grad = false) { return full({1}, v, requires_grad); }

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int>& shape() const { return impl_->shape; }
    int dim(int i) const { return impl_->shape[i]; }
    std::int64_t numel() const { return impl_->values.size(); }

    Vec& values() { return impl_->values; }
    const Vec& values() const { return impl_->values; }
    S value() const {
        if (numel() != 1)
            throw ShapeError("value(): tensor has " + std::to_string(numel()) + " elements");
        return impl_->values[0];
    }
    S at(std::int64_t i) const { return impl_->values[i]; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

    bool has_grad() const { return impl_->grad.size() != 0; }
    const Vec& grad() const {
        if (!has_grad()) throw GradError("grad(): no gradient has been accumulated");
        return impl_->grad;
    }
    Vec& grad_mut() {
        impl_->ensure_grad();
        return impl_->grad;
    }
    void zero_grad() { impl_->grad = Vec::Zero(impl_->values.size()); }
    void clear_grad() { impl_->grad.resize(0); }

    /// Deep copy; result is a leaf with no gradient history.
    Tensor clone() const {
        auto impl = std::make_shared<Impl>();
        impl->shape = impl_->shape;
        impl->values = impl_->values;
        impl->requires_grad = impl_->requires_grad;
        return Tensor(std::move(impl));
    }

    /// Same values, detached from the graph, never requires grad.
    Tensor detach() const {
        auto impl = std::make_shared<Impl>();
        impl->shape = impl_->shape;
        impl->values = impl_->values;
        return Tensor(std::move(impl));
    }

    /// Reverse-mode backprop from a scalar. Each reachable node is visited
    /// exactly once in reverse topological order; leaf gradients accumulate.
    /// Calling backward twice on the same result is an error.
    void backward() {
        if (numel() != 1)
            throw GradError("backward(): loss must be scalar, got shape " +
                            shape_str(impl_->shape));
        if (impl_->backward_done)
            throw GradError("backward(): already called on this result; reset gradients "
                            "and rebuild the graph first");
        if (!impl_->needs_grad())
            throw GradError("backward(): result is not connected to any gradient-tracked "
                            "tensor (was the graph built with gradients disabled?)");
        impl_->backward_done = true;

        std::vector<Impl*> order = topo_order();
        impl_->accumulate(Vec::Ones(1));
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Impl* node = *it;
            if (node->backward_fn && node->grad.size() != 0) node->backward_fn(*node);
        }
        // Release interior graph state; leaves keep their gradients.
        for (Impl* node : order) {
            if (node->backward_fn) {
                node->backward_fn = nullptr;
                node->parents.clear();
            }
        }
    }

    std::shared_ptr<Impl> impl() const { return impl_; }

  private:
    std::vector<Impl*> topo_order() const {
        std::vector<Impl*> order;
        std::unordered_set<Impl*> visited;
        // Iterative post-order DFS over parent edges.
        std::vector<std::pair<Impl*, std::size_t>> stack;
        stack.emplace_back(impl_.get(), 0);
        visited.insert(impl_.get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                Impl* p = node->parents[next++].get();
                if (visited.insert(p).second) stack.emplace_back(p, 0);
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
        return order;
    }

    std::shared_ptr<Impl> impl_;
};

namespace detail {

/// Builds an op result. `backward` receives the result node and must
/// accumulate into the captured parents (guarded by needs_grad()).
template <class S>
Tensor<S> make_op(std::vector<int> shape, typename Tensor<S>::Vec values,
                  std::vector<Tensor<S>> parents,
                  std::function<void(TensorImpl<S>&)> backward) {
    auto impl = std::make_shared<TensorImpl<S>>();
    impl->shape = std::move(shape);
    impl->values = std::move(values);
    if (autograd::grad_mode()) {
        bool any = false;
        for (const auto& p : parents) any = any || p.impl()->needs_grad();
        if (any) {
            impl->parents.reserve(parents.size());
            for (auto& p : parents) impl->parents.push_back(p.impl());
            impl->backward_fn = std::move(backward);
        }
    }
    return Tensor<S>(std::move(impl));
}

template <class S>
void require_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops. Same shape required, except that either side may be
// a one-element tensor, which broadcasts (the scalar case used by losses and
// normalization). No other broadcasting exists.
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    using Vec = typename Tensor<S>::Vec;
    if (a.shape() == b.shape()) {
        return detail::make_op<S>(
            a.shape(), a.values() + b.values(), {a, b}, [a, b](TensorImpl<S>& self) {
                if (a.impl()->needs_grad()) a.impl()->accumulate(self.grad);
                if (b.impl()->needs_grad()) b.impl()->accumulate(self.grad);
            });
    }
    if (b.numel() == 1) {
        return detail::make_op<S>(
            a.shape(), Vec(a.values() + b.value()), {a, b}, [a, b](TensorImpl<S>& self) {
                if (a.impl()->needs_grad()) a.impl()->accumulate(self.grad);
                if (b.impl()->needs_grad())
                    b.impl()->accumulate(Vec::Constant(1, self.grad.sum()));
            });
    }
    if (a.numel() == 1) return add(b, a);
    detail::require_same_shape("add", a, b);
    return {};
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    using Vec = typename Tensor<S>::Vec;
    if (a.shape() == b.shape()) {
        return detail::make_op<S>(
            a.shape(), a.values() - b.values(), {a, b}, [a, b](TensorImpl<S>& self) {
                if (a.impl()->needs_grad()) a.impl()->accumulate(self.grad);
                if (b.impl()->needs_grad()) b.impl()->accumulate(Vec(-self.grad));
            });
    }
    if (b.numel() == 1) {
        return detail::make_op<S>(
            a.shape(), Vec(a.values() - b.value()), {a, b}, [a, b](TensorImpl<S>& self) {
                if (a.impl()->needs_grad()) a.impl()->accumulate(self.grad);
                if (b.impl()->needs_grad())
                    b.impl()->accumulate(Vec::Constant(1, -self.grad.sum()));
            });
    }
    if (a.numel() == 1) {
        return detail::make_op<S>(
            b.shape(), Vec(a.value() - b.values()), {a, b}, [a, b](TensorImpl<S>& self) {
                if (a.impl()->needs_grad())
                    a.impl()->accumulate(Vec::Constant(1, self.grad.sum()));
                if (b.impl()->needs_grad()) b.impl()->accumulate(Vec(-self.grad));
            });
    }
    detail::require_same_shape("sub", a, b);
    return {};
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    using Vec = typename Tensor<S>::Vec;
    if (a.shape() == b.shape()) {
        return detail::make_op<S>(
            a.shape(), a.values() * b.values(), {a, b}, [a, b](TensorImpl<S>& self) {
                if (a.impl()->needs_grad()) a.impl()->accumulate(Vec(self.grad * b.values()));
                if (b.impl()->needs_grad()) b.impl()->accumulate(Vec(self.grad * a.values()));
            });
    }
    if (b.numel() == 1) {
        return detail::make_op<S>(
            a.shape(), Vec(a.values() * b.value()), {a, b}, [a, b](TensorImpl<S>& self) {
                if (a.impl()->needs_grad()) a.impl()->accumulate(Vec(self.grad * b.value()));
                if (b.impl()->needs_grad())
                    b.impl()->accumulate(Vec::Constant(1, (self.grad * a.values()).sum()));
            });
    }
    if (a.numel() == 1) return mul(b, a);
    detail::require_same_shape("mul", a, b);
    return {};
}

template <class S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
    using Vec = typename Tensor<S>::Vec;
    if (a.shape() == b.shape()) {
        return detail::make_op<S>(
            a.shape(), a.values() / b.values(), {a, b}, [a, b](TensorImpl<S>& self) {
                if (a.impl()->needs_grad()) a.impl()->accumulate(Vec(self.grad / b.values()));
                if (b.impl()->needs_grad())
                    b.impl()->accumulate(
                        Vec(-self.grad * a.values() / (b.values() * b.values())));
            });
    }
    if (b.numel() == 1) {
        return detail::make_op<S>(
            a.shape(), Vec(a.values() / b.value()), {a, b}, [a, b](TensorImpl<S>& self) {
                if (a.impl()->needs_grad()) a.impl()->accumulate(Vec(self.grad / b.value()));
                if (b.impl()->needs_grad()) {
                    S bv = b.value();
                    b.impl()->accumulate(
                        Vec::Constant(1, -(self.grad * a.values()).sum() / (bv * bv)));
                }
            });
    }
    if (a.numel() == 1) {
        return detail::make_op<S>(
            b.shape(), Vec(a.value() / b.values()), {a, b}, [a, b](TensorImpl<S>& self) {
                if (a.impl()->needs_grad())
                    a.impl()->accumulate(Vec::Constant(1, (self.grad / b.values()).sum()));
                if (b.impl()->needs_grad())
                    b.impl()->accumulate(
                        Vec(-self.grad * a.value() / (b.values() * b.values())));
            });
    }
    detail::require_same_shape("div", a, b);
    return {};
}

template <class S>
Tensor<S> scalar_mul(const Tensor<S>& a, S c) {
    using Vec = typename Tensor<S>::Vec;
    return detail::make_op<S>(a.shape(), Vec(a.values() * c), {a}, [a, c](TensorImpl<S>& self) {
        if (a.impl()->needs_grad()) a.impl()->accumulate(Vec(self.grad * c));
    });
}

template <class S>
Tensor<S> scalar_add(const Tensor<S>& a, S c) {
    using Vec = typename Tensor<S>::Vec;
    return detail::make_op<S>(a.shape(), Vec(a.values() + c), {a}, [a](TensorImpl<S>& self) {
        if (a.impl()->needs_grad()) a.impl()->accumulate(self.grad);
    });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> relu(const Tensor<S>& a) {
    using Vec = typename Tensor<S>::Vec;
    return detail::make_op<S>(
        a.shape(), Vec(a.values().max(S(0))), {a}, [a](TensorImpl<S>& self) {
            // gradient 0 at exactly 0
            if (a.impl()->needs_grad())
                a.impl()->accumulate(
                    Vec((a.values() > S(0)).template cast<S>() * self.grad));
        });
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& a) {
    using Vec = typename Tensor<S>::Vec;
    Vec y = (S(1) / (S(1) + (-a.values()).exp()));
    return detail::make_op<S>(a.shape(), std::move(y), {a}, [a](TensorImpl<S>& self) {
        if (a.impl()->needs_grad())
            a.impl()->accumulate(Vec(self.grad * self.values * (S(1) - self.values)));
    });
}

template <class S>
Tensor<S> log(const Tensor<S>& a) {
    using Vec = typename Tensor<S>::Vec;
    return detail::make_op<S>(a.shape(), Vec(a.values().log()), {a}, [a](TensorImpl<S>& self) {
        if (a.impl()->needs_grad()) a.impl()->accumulate(Vec(self.grad / a.values()));
    });
}

template <class S>
Tensor<S> sqrt(const Tensor<S>& a) {
    using Vec = typename Tensor<S>::Vec;
    return detail::make_op<S>(a.shape(), Vec(a.values().sqrt()), {a}, [a](TensorImpl<S>& self) {
        if (a.impl()->needs_grad())
            a.impl()->accumulate(Vec(self.grad / (S(2) * self.values)));
    });
}

/// Clamp to [lo, hi]; the gradient passes inside the closed interval and is
/// zero outside it.
template <class S>
Tensor<S> clip(const Tensor<S>& a, S lo, S hi) {
    using Vec = typename Tensor<S>::Vec;
    return detail::make_op<S>(
        a.shape(), Vec(a.values().max(lo).min(hi)), {a}, [a, lo, hi](TensorImpl<S>& self) {
            if (a.impl()->needs_grad()) {
                Vec mask = ((a.values() >= lo) && (a.values() <= hi)).template cast<S>();
                a.impl()->accumulate(Vec(mask * self.grad));
            }
        });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> sum(const Tensor<S>& a) {
    using Vec = typename Tensor<S>::Vec;
    return detail::make_op<S>({1}, Vec::Constant(1, a.values().sum()), {a},
                              [a](TensorImpl<S>& self) {
                                  if (a.impl()->needs_grad())
                                      a.impl()->accumulate(
                                          Vec::Constant(a.numel(), self.grad[0]));
                              });
}

template <class S>
Tensor<S> mean(const Tensor<S>& a) {
    using Vec = typename Tensor<S>::Vec;
    const S inv = S(1) / static_cast<S>(a.numel());
    return detail::make_op<S>({1}, Vec::Constant(1, a.values().sum() * inv), {a},
                              [a, inv](TensorImpl<S>& self) {
                                  if (a.impl()->needs_grad())
                                      a.impl()->accumulate(
                                          Vec::Constant(a.numel(), self.grad[0] * inv));
                              });
}

// ---------------------------------------------------------------------------
// Linear algebra and 2-d structure ops. Tensors of rank 2 are row-major.
// ---------------------------------------------------------------------------

template <class S>
using MatrixRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    using Vec = typename Tensor<S>::Vec;
    if (a.shape().size() != 2 || b.shape().size() != 2)
        throw ShapeError("matmul: rank-2 tensors required, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    const int n = a.dim(0), k = a.dim(1), m = b.dim(1);
    if (b.dim(0) != k)
        throw ShapeError("matmul: inner dimensions differ, " + std::to_string(k) + " vs " +
                         std::to_string(b.dim(0)));
    Eigen::Map<const MatrixRM<S>> A(a.values().data(), n, k);
    Eigen::Map<const MatrixRM<S>> B(b.values().data(), k, m);
    Vec out(static_cast<std::int64_t>(n) * m);
    Eigen::Map<MatrixRM<S>>(out.data(), n, m) = A * B;
    return detail::make_op<S>(
        {n, m}, std::move(out), {a, b}, [a, b, n, k, m](TensorImpl<S>& self) {
            Eigen::Map<const MatrixRM<S>> A(a.values().data(), n, k);
            Eigen::Map<const MatrixRM<S>> B(b.values().data(), k, m);
            Eigen::Map<const MatrixRM<S>> G(self.grad.data(), n, m);
            if (a.impl()->needs_grad()) {
                Vec ga(static_cast<std::int64_t>(n) * k);
                Eigen::Map<MatrixRM<S>>(ga.data(), n, k) = G * B.transpose();
                a.impl()->accumulate(ga);
            }
            if (b.impl()->needs_grad()) {
                Vec gb(static_cast<std::int64_t>(k) * m);
                Eigen::Map<MatrixRM<S>>(gb.data(), k, m) = A.transpose() * G;
                b.impl()->accumulate(gb);
            }
        });
}

template <class S>
Tensor<S> take_row(const Tensor<S>& a, int i) {
    using Vec = typename Tensor<S>::Vec;
    if (a.shape().size() != 2) throw ShapeError("take_row: rank-2 tensor required");
    const int rows = a.dim(0), cols = a.dim(1);
    if (i < 0 || i >= rows)
        throw ShapeError("take_row: row " + std::to_string(i) + " out of " +
                         std::to_string(rows));
    Vec out = a.values().segment(static_cast<std::int64_t>(i) * cols, cols);
    return detail::make_op<S>({cols}, std::move(out), {a}, [a, i, cols](TensorImpl<S>& self) {
        if (a.impl()->needs_grad()) {
            a.impl()->ensure_grad();
            a.impl()->grad.segment(static_cast<std::int64_t>(i) * cols, cols) += self.grad;
        }
    });
}

template <class S>
Tensor<S> take_col(const Tensor<S>& a, int j) {
    using Vec = typename Tensor<S>::Vec;
    if (a.shape().size() != 2) throw ShapeError("take_col: rank-2 tensor required");
    const int rows = a.dim(0), cols = a.dim(1);
    if (j < 0 || j >= cols)
        throw ShapeError("take_col: column " + std::to_string(j) + " out of " +
                         std::to_string(cols));
    Vec out(rows);
    for (int r = 0; r < rows; ++r) out[r] = a.values()[static_cast<std::int64_t>(r) * cols + j];
    return detail::make_op<S>({rows}, std::move(out), {a},
                              [a, j, rows, cols](TensorImpl<S>& self) {
                                  if (a.impl()->needs_grad()) {
                                      a.impl()->ensure_grad();
                                      for (int r = 0; r < rows; ++r)
                                          a.impl()->grad[static_cast<std::int64_t>(r) * cols + j] +=
                                              self.grad[r];
                                  }
                              });
}

template <class S>
Tensor<S> transpose(const Tensor<S>& a) {
    using Vec = typename Tensor<S>::Vec;
    if (a.shape().size() != 2) throw ShapeError("transpose: rank-2 tensor required");
    const int rows = a.dim(0), cols = a.dim(1);
    Vec out(a.numel());
    Eigen::Map<MatrixRM<S>>(out.data(), cols, rows) =
        Eigen::Map<const MatrixRM<S>>(a.values().data(), rows, cols).transpose();
    return detail::make_op<S>({cols, rows}, std::move(out), {a},
                              [a, rows, cols](TensorImpl<S>& self) {
                                  if (!a.impl()->needs_grad()) return;
                                  typename Tensor<S>::Vec g(self.grad.size());
                                  Eigen::Map<MatrixRM<S>>(g.data(), rows, cols) =
                                      Eigen::Map<const MatrixRM<S>>(self.grad.data(), cols,
                                                                    rows)
                                          .transpose();
                                  a.impl()->accumulate(g);
                              });
}

/// Row-wise softmax of a rank-2 tensor.
template <class S>
Tensor<S> softmax_rows(const Tensor<S>& a) {
    using Vec = typename Tensor<S>::Vec;
    if (a.shape().size() != 2) throw ShapeError("softmax_rows: rank-2 tensor required");
    const int rows = a.dim(0), cols = a.dim(1);
    Vec out(a.numel());
    for (int r = 0; r < rows; ++r) {
        auto seg = a.values().segment(static_cast<std::int64_t>(r) * cols, cols);
        Vec e = (seg - seg.maxCoeff()).exp();
        out.segment(static_cast<std::int64_t>(r) * cols, cols) = e / e.sum();
    }
    return detail::make_op<S>(
        a.shape(), std::move(out), {a}, [a, rows, cols](TensorImpl<S>& self) {
            if (!a.impl()->needs_grad()) return;
            Vec g(self.values.size());
            for (int r = 0; r < rows; ++r) {
                auto y = self.values.segment(static_cast<std::int64_t>(r) * cols, cols);
                auto dy = self.grad.segment(static_cast<std::int64_t>(r) * cols, cols);
                S dot = (dy * y).sum();
                g.segment(static_cast<std::int64_t>(r) * cols, cols) = y * (dy - dot);
            }
            a.impl()->accumulate(g);
        });
}

/// y[r, c] = x[r, c] + b[c]
template <class S>
Tensor<S> add_rowvec(const Tensor<S>& a, const Tensor<S>& b) {
    using Vec = typename Tensor<S>::Vec;
    if (a.shape().size() != 2 || b.shape().size() != 1 || b.dim(0) != a.dim(1))
        throw ShapeError("add_rowvec: need [r,c] and [c], got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    const int rows = a.dim(0), cols = a.dim(1);
    Vec out(a.numel());
    for (int r = 0; r < rows; ++r)
        out.segment(static_cast<std::int64_t>(r) * cols, cols) =
            a.values().segment(static_cast<std::int64_t>(r) * cols, cols) + b.values();
    return detail::make_op<S>(
        a.shape(), std::move(out), {a, b}, [a, b, rows, cols](TensorImpl<S>& self) {
            if (a.impl()->needs_grad()) a.impl()->accumulate(self.grad);
            if (b.impl()->needs_grad()) {
                Vec gb = Vec::Zero(cols);
                for (int r = 0; r < rows; ++r)
                    gb += self.grad.segment(static_cast<std::int64_t>(r) * cols, cols);
                b.impl()->accumulate(gb);
            }
        });
}

template <class S>
void backward(Tensor<S>& loss) {
    loss.backward();
}

}  // namespace fseg
