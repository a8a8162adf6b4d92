#pragma once

#include "fseg/modality.hpp"
#include "fseg/nn/param.hpp"
#include "fseg/tensor/image_ops.hpp"
#include "fseg/tensor/tensor.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace fseg::nn {

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

template <class S>
struct BatchNormState {
    int C = 0;
    S eps = S(1e-5);
    S momentum = S(0.1);
    Tensor<S> gamma;     // per-channel scale
    Tensor<S> delta;     // per-channel shift
    Tensor<S> run_mean;  // running batch mean
    Tensor<S> run_var;   // running (population) batch variance

    void register_into(ParamSet<S>& ps, const std::string& prefix) const {
        ps.add(prefix + ".gamma", gamma, tag_norm_param());
        ps.add(prefix + ".delta", delta, tag_norm_param());
        ps.add(prefix + ".run_mean", run_mean, tag_norm_stat());
        ps.add(prefix + ".run_var", run_var, tag_norm_stat());
    }
};

template <class S>
BatchNormState<S> make_batchnorm(int C) {
    BatchNormState<S> st;
    st.C = C;
    st.gamma = Tensor<S>::ones({C}, true);
    st.delta = Tensor<S>::zeros({C}, true);
    st.run_mean = Tensor<S>::zeros({C});
    st.run_var = Tensor<S>::ones({C});
    return st;
}

/// Training mode normalizes by the batch moments over (N,H,W) per channel and
/// updates the running statistics by EMA; eval mode normalizes by the running
/// statistics. The output is differentiable through the batch statistics.
template <class S>
Tensor<S> batchnorm2d(const Tensor<S>& x, BatchNormState<S>& state, bool training) {
    detail::require_rank4("batchnorm2d", x);
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (C != state.C)
        throw ShapeError("batchnorm2d: " + std::to_string(C) + " channels, state has " +
                         std::to_string(state.C));
    const S count = static_cast<S>(static_cast<std::int64_t>(N) * H * W);

    Tensor<S> mean, denom;
    if (training) {
        mean = scalar_mul(channel_sum(x), S(1) / count);
        auto xc = sub(x, broadcast_channel(mean, N, H, W));
        auto var = scalar_mul(channel_sum(mul(xc, xc)), S(1) / count);
        denom = fseg::sqrt(scalar_add(var, state.eps));

        const S m = state.momentum;
        state.run_mean.values() = (S(1) - m) * state.run_mean.values() + m * mean.values();
        state.run_var.values() = (S(1) - m) * state.run_var.values() + m * var.values();
    } else {
        mean = state.run_mean.detach();
        typename Tensor<S>::Vec d = (state.run_var.values() + state.eps).sqrt();
        denom = Tensor<S>::from_vector({C}, std::vector<S>(d.data(), d.data() + C));
    }

    auto xhat = div(sub(x, broadcast_channel(mean, N, H, W)),
                    broadcast_channel(denom, N, H, W));
    return add(mul(broadcast_channel(state.gamma, N, H, W), xhat),
               broadcast_channel(state.delta, N, H, W));
}

// ---------------------------------------------------------------------------
// Mode normalization
// ---------------------------------------------------------------------------

template <class S>
struct ModeNormState {
    int M = 0;
    int C = 0;
    S eps = S(1e-5);
    S ema = S(0.1);
    bool learned = true;            // learned gating network vs hard (modality) gates
    bool mass_weighted_ema = true;  // scale the EMA rate by the mode's share of the batch

    Tensor<S> alpha;       // [M,C] per-mode scale
    Tensor<S> beta_aff;    // [M,C] per-mode shift
    Tensor<S> run_mean;    // [M,C] running first moment
    Tensor<S> run_sqmean;  // [M,C] running second moment
    Tensor<S> gate_w;      // [M,C] gating weights (learned variant)
    Tensor<S> gate_b;      // [M]   gating bias    (learned variant)

    void register_into(ParamSet<S>& ps, const std::string& prefix) const {
        ps.add(prefix + ".alpha", alpha, tag_norm_param());
        ps.add(prefix + ".beta", beta_aff, tag_norm_param());
        ps.add(prefix + ".run_mean", run_mean, tag_norm_stat());
        ps.add(prefix + ".run_sqmean", run_sqmean, tag_norm_stat());
        if (learned) {
            // The gating network is shared across modes/modalities, so it
            // travels with the non-normalization parameters.
            ps.add(prefix + ".gate_w", gate_w, tag_other());
            ps.add(prefix + ".gate_b", gate_b, tag_other());
        }
    }
};

template <class S>
ModeNormState<S> make_modenorm(int M, int C, bool learned) {
    ModeNormState<S> st;
    st.M = M;
    st.C = C;
    st.learned = learned;
    st.alpha = Tensor<S>::ones({M, C}, true);
    st.beta_aff = Tensor<S>::zeros({M, C}, true);
    st.run_mean = Tensor<S>::zeros({M, C});
    st.run_sqmean = Tensor<S>::ones({M, C});
    if (learned) {
        st.gate_w = Tensor<S>::zeros({M, C}, true);
        st.gate_b = Tensor<S>::zeros({M}, true);
    }
    return st;
}

/// g(x_n) = softmax(gate_w · spatial_mean(x_n) + gate_b); rows sum to 1.
template <class S>
Tensor<S> learned_gates(const Tensor<S>& x, const ModeNormState<S>& state) {
    if (!state.learned)
        throw std::logic_error("learned_gates: state uses hard gating");
    auto logits = add_rowvec(matmul(spatial_mean(x), transpose(state.gate_w)), state.gate_b);
    return softmax_rows(logits);
}

/// Hard modality gating: CT -> (1,0), MRI -> (0,1).
template <class S>
Tensor<S> hard_gates(const std::vector<Modality>& modalities) {
    const int N = static_cast<int>(modalities.size());
    std::vector<S> g(static_cast<std::size_t>(N) * 2, S(0));
    for (int n = 0; n < N; ++n)
        g[static_cast<std::size_t>(n) * 2 + (modalities[n] == Modality::CT ? 0 : 1)] = S(1);
    return Tensor<S>::from_vector({N, 2}, g);
}

/// Gate-weighted mode normalization.
///
/// Per mode m: the batch mean and variance are gate-weighted moments over
/// samples and pixels, and output_n accumulates
/// g_m(x_n) * (alpha_m * (x_n - mu_m) / sqrt(var_m + eps) + beta_m).
/// Training updates the running first/second moments per mode by EMA; a mode
/// with zero total gate mass is skipped entirely (no forward contribution, no
/// EMA), which keeps unused modes bit-identical. Eval mode normalizes by the
/// running estimators, so a sample's output never depends on its batch.
template <class S>
Tensor<S> modenorm2d(const Tensor<S>& x, ModeNormState<S>& state, const Tensor<S>& gates,
                     bool training) {
    detail::require_rank4("modenorm2d", x);
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (C != state.C)
        throw ShapeError("modenorm2d: " + std::to_string(C) + " channels, state has " +
                         std::to_string(state.C));
    if (gates.shape() != std::vector<int>{N, state.M})
        throw ShapeError("modenorm2d: gates must be [" + std::to_string(N) + "," +
                         std::to_string(state.M) + "], got " + shape_str(gates.shape()));
    for (int n = 0; n < N; ++n) {
        S row = 0;
        for (int m = 0; m < state.M; ++m) {
            const S g = gates.at(static_cast<std::int64_t>(n) * state.M + m);
            if (g < S(0))
                throw std::invalid_argument("modenorm2d: negative gate in row " +
                                            std::to_string(n));
            row += g;
        }
        if (std::fabs(static_cast<double>(row) - 1.0) > 1e-6)
            throw std::invalid_argument("modenorm2d: gate row " + std::to_string(n) +
                                        " sums to " + std::to_string(static_cast<double>(row)));
    }
    const S plane = static_cast<S>(static_cast<std::int64_t>(H) * W);

    Tensor<S> out = Tensor<S>::zeros({N, C, H, W});
    for (int m = 0; m < state.M; ++m) {
        auto g_m = take_col(gates, m);  // [N]
        const S mass = g_m.values().sum();
        if (mass == S(0)) continue;

        auto a_m = take_row(state.alpha, m);
        auto b_m = take_row(state.beta_aff, m);

        Tensor<S> mu, denom;
        if (training) {
            auto weight = scalar_mul(fseg::sum(g_m), plane);  // total gate mass in pixels
            mu = div(channel_sum(scale_per_sample(x, g_m)), weight);
            auto sqmean = div(channel_sum(scale_per_sample(mul(x, x), g_m)), weight);
            auto var = sub(sqmean, mul(mu, mu));
            denom = fseg::sqrt(scalar_add(var, state.eps));

            const S rho = state.mass_weighted_ema
                              ? state.ema * mass / static_cast<S>(N)
                              : state.ema;
            auto rm = state.run_mean.values().segment(static_cast<std::int64_t>(m) * C, C);
            auto rs = state.run_sqmean.values().segment(static_cast<std::int64_t>(m) * C, C);
            rm = (S(1) - rho) * rm + rho * mu.values();
            rs = (S(1) - rho) * rs + rho * sqmean.values();
        } else {
            typename Tensor<S>::Vec rm =
                state.run_mean.values().segment(static_cast<std::int64_t>(m) * C, C);
            typename Tensor<S>::Vec var =
                (state.run_sqmean.values().segment(static_cast<std::int64_t>(m) * C, C) -
                 rm * rm)
                    .max(S(0));
            mu = Tensor<S>::from_vector({C}, std::vector<S>(rm.data(), rm.data() + C));
            typename Tensor<S>::Vec d = (var + state.eps).sqrt();
            denom = Tensor<S>::from_vector({C}, std::vector<S>(d.data(), d.data() + C));
        }

        auto xhat = div(sub(x, broadcast_channel(mu, N, H, W)),
                        broadcast_channel(denom, N, H, W));
        auto y_m = add(mul(broadcast_channel(a_m, N, H, W), xhat),
                       broadcast_channel(b_m, N, H, W));
        out = add(out, scale_per_sample(y_m, g_m));
    }
    return out;
}

}  // namespace fseg::nn
