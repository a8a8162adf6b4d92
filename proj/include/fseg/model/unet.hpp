#pragma once

#include "fseg/metrics/mask.hpp"
#include "fseg/modality.hpp"
#include "fseg/nn/norm.hpp"
#include "fseg/nn/param.hpp"
#include "fseg/rng.hpp"
#include "fseg/tensor/image_ops.hpp"
#include "fseg/tensor/tensor.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace fseg::model {

enum class NormKind { None, BatchNorm, ModeNorm, HardModeNorm };

inline std::string to_string(NormKind k) {
    switch (k) {
        case NormKind::None: return "none";
        case NormKind::BatchNorm: return "batchnorm";
        case NormKind::ModeNorm: return "modenorm";
        case NormKind::HardModeNorm: return "hard_modenorm";
    }
    return "?";
}

struct UNetConfig {
    std::vector<int> channels{8, 16, 32, 64};
    NormKind norm = NormKind::None;
    int modes = 2;  // mode count for NormKind::ModeNorm (hard gating is always 2)
    int in_channels = 1;
    int out_channels = 1;
};

namespace detail {

template <class S>
struct Conv2dLayer {
    Tensor<S> w, b;
};

template <class S>
Conv2dLayer<S> make_conv(int cin, int cout, int k, rng::Stream& rs) {
    const double bound = std::sqrt(6.0 / (static_cast<double>(cin) * k * k));  // He-uniform
    std::vector<S> wv(static_cast<std::size_t>(cout) * cin * k * k);
    for (auto& v : wv) v = static_cast<S>(rs.uniform(-bound, bound));
    Conv2dLayer<S> c;
    c.w = Tensor<S>::from_vector({cout, cin, k, k}, wv, true);
    c.b = Tensor<S>::zeros({cout}, true);
    return c;
}

/// One normalization slot, instantiated per the configured kind.
template <class S>
struct Norm {
    NormKind kind = NormKind::None;
    nn::BatchNormState<S> bn;
    nn::ModeNormState<S> mn;

    Tensor<S> apply(const Tensor<S>& x, const std::vector<Modality>& mods, bool training) {
        switch (kind) {
            case NormKind::None: return x;
            case NormKind::BatchNorm: return nn::batchnorm2d(x, bn, training);
            case NormKind::ModeNorm:
                return nn::modenorm2d(x, mn, nn::learned_gates(x, mn), training);
            case NormKind::HardModeNorm:
                return nn::modenorm2d(x, mn, nn::hard_gates<S>(mods), training);
        }
        return x;
    }

    void register_into(nn::ParamSet<S>& ps, const std::string& prefix) const {
        if (kind == NormKind::BatchNorm)
            bn.register_into(ps, prefix);
        else if (kind == NormKind::ModeNorm || kind == NormKind::HardModeNorm)
            mn.register_into(ps, prefix);
    }
};

template <class S>
Norm<S> make_norm(const UNetConfig& cfg, int C) {
    Norm<S> n;
    n.kind = cfg.norm;
    if (cfg.norm == NormKind::BatchNorm) {
        n.bn = nn::make_batchnorm<S>(C);
    } else if (cfg.norm == NormKind::ModeNorm) {
        n.mn = nn::make_modenorm<S>(cfg.modes, C, /*learned=*/true);
    } else if (cfg.norm == NormKind::HardModeNorm) {
        n.mn = nn::make_modenorm<S>(2, C, /*learned=*/false);
    }
    return n;
}

}  // namespace detail

/// Reduced U-Net: double-conv encoder blocks with 2x2 max-pooling between,
/// symmetric decoder with nearest-upsample + conv and skip concatenation, and
/// a 1x1 conv + sigmoid head. Normalization (when configured) sits between
/// each 3x3 convolution and its ReLU.
template <class S>
class UNet {
  public:
    using Conv = detail::Conv2dLayer<S>;
    using Norm = detail::Norm<S>;

    struct Block {
        Conv conv1, conv2;
        Norm norm1, norm2;
    };
    struct UpStage {
        Conv up, conv1, conv2;
        Norm normu, norm1, norm2;
    };

    UNetConfig cfg;
    std::vector<Block> enc;      // one per channel level, last is the bottleneck
    std::vector<UpStage> dec;    // deepest stage first
    Conv head;                   // 1x1 conv
    nn::ParamSet<S> params;

    UNet() = default;
    UNet(const UNet&) = delete;  // tensors are shared handles; copying would alias
    UNet& operator=(const UNet&) = delete;
    UNet(UNet&&) = default;
    UNet& operator=(UNet&&) = default;

    int levels() const { return static_cast<int>(cfg.channels.size()); }

    Tensor<S> forward(const Tensor<S>& x, const std::vector<Modality>& mods, bool training) {
        if (x.shape().size() != 4 || x.dim(1) != cfg.in_channels)
            throw ShapeError("unet: input must be [N," + std::to_string(cfg.in_channels) +
                             ",H,W], got " + shape_str(x.shape()));
        const int L = levels();
        const int div = 1 << (L - 1);
        if (x.dim(2) % div != 0 || x.dim(3) % div != 0)
            throw ShapeError("unet: spatial dims " + std::to_string(x.dim(2)) + "x" +
                             std::to_string(x.dim(3)) + " not divisible by " +
                             std::to_string(div));
        if (cfg.norm == NormKind::HardModeNorm &&
            static_cast<int>(mods.size()) != x.dim(0))
            throw std::invalid_argument("unet: hard gating needs one modality per sample, got " +
                                        std::to_string(mods.size()) + " for batch " +
                                        std::to_string(x.dim(0)));

        std::vector<Tensor<S>> skips;
        Tensor<S> h = x;
        for (int i = 0; i < L; ++i) {
            if (i > 0) h = maxpool2d(h);
            auto& b = enc[i];
            h = relu(b.norm1.apply(conv2d(h, b.conv1.w, b.conv1.b, 1), mods, training));
            h = relu(b.norm2.apply(conv2d(h, b.conv2.w, b.conv2.b, 1), mods, training));
            if (i < L - 1) skips.push_back(h);
        }
        for (int s = 0; s < L - 1; ++s) {
            auto& st = dec[s];
            h = upsample_nearest2x(h);
            h = relu(st.normu.apply(conv2d(h, st.up.w, st.up.b, 1), mods, training));
            h = concat_channels(skips[L - 2 - s], h);
            h = relu(st.norm1.apply(conv2d(h, st.conv1.w, st.conv1.b, 1), mods, training));
            h = relu(st.norm2.apply(conv2d(h, st.conv2.w, st.conv2.b, 1), mods, training));
        }
        return sigmoid(conv2d(h, head.w, head.b, 0));
    }
};

template <class S>
UNet<S> build_unet(const UNetConfig& cfg, std::uint64_t seed) {
    if (cfg.channels.empty())
        throw std::invalid_argument("unet: channels must be non-empty");
    for (std::size_t i = 1; i < cfg.channels.size(); ++i)
        if (cfg.channels[i] <= cfg.channels[i - 1])
            throw std::invalid_argument("unet: channels must be strictly increasing");

    rng::Stream rs(rng::mix({seed, rng::kModelInit}));
    UNet<S> net;
    net.cfg = cfg;
    const int L = static_cast<int>(cfg.channels.size());

    int prev = cfg.in_channels;
    for (int i = 0; i < L; ++i) {
        const int c = cfg.channels[i];
        typename UNet<S>::Block b;
        b.conv1 = detail::make_conv<S>(prev, c, 3, rs);
        b.norm1 = detail::make_norm<S>(cfg, c);
        b.conv2 = detail::make_conv<S>(c, c, 3, rs);
        b.norm2 = detail::make_norm<S>(cfg, c);
        net.enc.push_back(std::move(b));
        prev = c;
    }
    for (int lvl = L - 2; lvl >= 0; --lvl) {
        const int cin = cfg.channels[lvl + 1], c = cfg.channels[lvl];
        typename UNet<S>::UpStage st;
        st.up = detail::make_conv<S>(cin, c, 3, rs);
        st.normu = detail::make_norm<S>(cfg, c);
        st.conv1 = detail::make_conv<S>(2 * c, c, 3, rs);
        st.norm1 = detail::make_norm<S>(cfg, c);
        st.conv2 = detail::make_conv<S>(c, c, 3, rs);
        st.norm2 = detail::make_norm<S>(cfg, c);
        net.dec.push_back(std::move(st));
    }
    net.head = detail::make_conv<S>(cfg.channels[0], cfg.out_channels, 1, rs);

    for (int i = 0; i < L; ++i) {
        const std::string p = "enc" + std::to_string(i);
        auto& b = net.enc[i];
        net.params.add(p + ".conv1.w", b.conv1.w, nn::tag_other());
        net.params.add(p + ".conv1.b", b.conv1.b, nn::tag_other());
        b.norm1.register_into(net.params, p + ".norm1");
        net.params.add(p + ".conv2.w", b.conv2.w, nn::tag_other());
        net.params.add(p + ".conv2.b", b.conv2.b, nn::tag_other());
        b.norm2.register_into(net.params, p + ".norm2");
    }
    for (int s = 0; s < L - 1; ++s) {
        const std::string p = "dec" + std::to_string(L - 2 - s);
        auto& st = net.dec[s];
        net.params.add(p + ".up.w", st.up.w, nn::tag_other());
        net.params.add(p + ".up.b", st.up.b, nn::tag_other());
        st.normu.register_into(net.params, p + ".normu");
        net.params.add(p + ".conv1.w", st.conv1.w, nn::tag_other());
        net.params.add(p + ".conv1.b", st.conv1.b, nn::tag_other());
        st.norm1.register_into(net.params, p + ".norm1");
        net.params.add(p + ".conv2.w", st.conv2.w, nn::tag_other());
        net.params.add(p + ".conv2.b", st.conv2.b, nn::tag_other());
        st.norm2.register_into(net.params, p + ".norm2");
    }
    net.params.add("head.w", net.head.w, nn::tag_other());
    net.params.add("head.b", net.head.b, nn::tag_other());
    return net;
}

/// Number of trainable parameters (Statistic-role tensors excluded).
template <class S>
std::int64_t param_count(const nn::ParamSet<S>& params) {
    std::int64_t n = 0;
    for (const auto& e : params)
        if (e.tag.role == nn::ParamTag::Role::Parameter) n += e.tensor.numel();
    return n;
}

/// Thresholded inference on one slice: probability in [0, 0.5] maps to 0,
/// (0.5, 1] to 1.
template <class S>
metrics::Mask predict_mask(UNet<S>& model, const Tensor<S>& slice, Modality modality) {
    if (slice.shape().size() != 4 || slice.dim(0) != 1 || slice.dim(1) != 1)
        throw ShapeError("predict_mask: slice must be [1,1,H,W], got " +
                         shape_str(slice.shape()));
    autograd::NoGradGuard guard;
    auto p = model.forward(slice, {modality}, /*training=*/false);
    metrics::Mask mask(slice.dim(2), slice.dim(3));
    for (std::int64_t i = 0; i < p.numel(); ++i)
        mask.v[static_cast<std::size_t>(i)] = p.at(i) > S(0.5) ? 1 : 0;
    return mask;
}

}  // namespace fseg::model
