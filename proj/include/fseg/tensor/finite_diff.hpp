#pragma once

#include "fseg/tensor/tensor.hpp"

namespace fseg {

/// Central-difference gradient of a deterministic scalar function:
/// (f(x + h*e_i) - f(x - h*e_i)) / 2h per coordinate. Runs with autodiff off;
/// this is the independent oracle the backward pass is checked against.
template <class S, class F>
Tensor<S> finite_diff_grad(F&& f, const Tensor<S>& x, S h) {
    autograd::NoGradGuard guard;
    Tensor<S> probe = x.clone();
    probe.set_requires_grad(false);
    typename Tensor<S>::Vec g(x.numel());
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const S orig = probe.values()[i];
        probe.values()[i] = orig + h;
        const S fp = f(probe);
        probe.values()[i] = orig - h;
        const S fm = f(probe);
        probe.values()[i] = orig;
        g[i] = (fp - fm) / (S(2) * h);
    }
    return Tensor<S>::from_vector(x.shape(), std::vector<S>(g.data(), g.data() + g.size()));
}

}  // namespace fseg
