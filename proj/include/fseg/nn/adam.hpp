#pragma once

#include "fseg/nn/param.hpp"
#include "fseg/tensor/tensor.hpp"

#include <string>
#include <unordered_map>

namespace fseg::nn {

/// Adam with bias correction. Moments are kept per parameter name and created
/// lazily at zero, so a parameter whose gradient has been exactly zero since
/// the start receives an exactly-zero update.
template <class S>
struct AdamState {
    using Vec = typename Tensor<S>::Vec;

    S lr = S(0.001);
    S beta1 = S(0.9);
    S beta2 = S(0.999);
    S eps_adam = S(1e-8);
    std::int64_t step = 0;

    struct Moments {
        Vec m, v;
    };
    std::unordered_map<std::string, Moments> moments;
};

/// One optimizer step over every Parameter-role tensor, reading the gradients
/// accumulated on the tensors. Statistic-role tensors are never touched.
template <class S>
void adam_step(ParamSet<S>& params, AdamState<S>& state) {
    state.step += 1;
    const S c1 = S(1) - std::pow(state.beta1, static_cast<S>(state.step));
    const S c2 = S(1) - std::pow(state.beta2, static_cast<S>(state.step));
    for (auto& e : params) {
        if (e.tag.role != ParamTag::Role::Parameter) continue;
        if (!e.tensor.has_grad())
            throw GradError("adam_step: no gradient for parameter '" + e.name + "'");
        const auto& g = e.tensor.grad();
        auto [it, inserted] = state.moments.try_emplace(e.name);
        auto& mom = it->second;
        if (inserted) {
            mom.m = AdamState<S>::Vec::Zero(g.size());
            mom.v = AdamState<S>::Vec::Zero(g.size());
        }
        mom.m = state.beta1 * mom.m + (S(1) - state.beta1) * g;
        mom.v = state.beta2 * mom.v + (S(1) - state.beta2) * g * g;
        e.tensor.values() -= state.lr * (mom.m / c1) / ((mom.v / c2).sqrt() + state.eps_adam);
    }
}

}  // namespace fseg::nn
