#pragma once

#include "fseg/tensor/tensor.hpp"

namespace fseg::metrics {

/// Soft Dice loss on pseudo-probabilities:
/// 1 - (2*sum(p*y) + s) / (sum(p) + sum(y) + s), smoothing s = 1e-6.
template <class S>
Tensor<S> dice_loss(const Tensor<S>& p, const Tensor<S>& y) {
    if (p.shape() != y.shape())
        throw ShapeError("dice_loss: shape mismatch " + shape_str(p.shape()) + " vs " +
                         shape_str(y.shape()));
    const S s = S(1e-6);
    auto num = scalar_add(scalar_mul(sum(mul(p, y)), S(2)), s);
    auto den = scalar_add(add(sum(p), sum(y)), s);
    return sub(Tensor<S>::scalar(S(1)), div(num, den));
}

/// Mean binary cross-entropy with the probabilities clamped to
/// [1e-7, 1 - 1e-7] before the logarithms.
template <class S>
Tensor<S> bce_loss(const Tensor<S>& p, const Tensor<S>& y) {
    if (p.shape() != y.shape())
        throw ShapeError("bce_loss: shape mismatch " + shape_str(p.shape()) + " vs " +
                         shape_str(y.shape()));
    auto pc = clip(p, S(1e-7), S(1) - S(1e-7));
    auto one = Tensor<S>::scalar(S(1));
    auto ll = add(mul(y, log(pc)), mul(sub(one, y), log(sub(one, pc))));
    return scalar_mul(mean(ll), S(-1));
}

/// L = L_Dice + L_BCE.
template <class S>
Tensor<S> total_loss(const Tensor<S>& p, const Tensor<S>& y) {
    return add(dice_loss(p, y), bce_loss(p, y));
}

}  // namespace fseg::metrics
