#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <thread>
#include <vector>

#include "fseg/data/batch.hpp"
#include "fseg/fed/federation.hpp"
#include "fseg/metrics/loss.hpp"
#include "fseg/model/unet.hpp"
#include "fseg/nn/adam.hpp"

namespace fseg::harness {

/// Stops when the validation score has not strictly improved for `patience`
/// consecutive epochs. observe() returns true when training should stop after
/// the observed epoch.
struct EarlyStopper {
    int patience = 5;
    double best = -std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    int since = 0;

    bool observe(int epoch, double val) {
        if (val > best) {
            best = val;
            best_epoch = epoch;
            since = 0;
            return false;
        }
        return ++since >= patience;
    }
};

struct EpochLog {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_dice = 0.0;
};

template <class S>
struct TrainResult {
    nn::ParamSet<S> best_params;  // snapshot at the best validation epoch
    int best_epoch = 0;
    double best_val = 0.0;
    std::vector<EpochLog> history;
};

struct BaselineTrainCfg {
    int epochs = 50;
    int patience = 5;
    int B = 12;
    double lr = 1e-3;
    std::uint64_t master_seed = 1;
    std::uint64_t stream_tag = 0;  // disambiguates shuffle streams across models
};

/// Trains `net` in place with Adam and early stopping on validation Dice;
/// restores the best-epoch parameters into the model before returning.
template <class S>
TrainResult<S> train_early_stopping(model::UNet<S>& net,
                                    const std::vector<data::Volume>& train_vols,
                                    const std::vector<data::Volume>& val_vols,
                                    const BaselineTrainCfg& cfg) {
    if (cfg.epochs < 1 || cfg.patience < 1 || cfg.B < 1)
        throw std::invalid_argument("train_early_stopping: epochs, patience and batch size "
                                    "must be positive");
    auto samples = data::flatten_slices(train_vols);
    const int n = static_cast<int>(samples.size());
    if (n == 0) throw std::invalid_argument("train_early_stopping: no training slices");
    if (val_vols.empty())
        throw std::invalid_argument("train_early_stopping: no validation volumes");

    nn::AdamState<S> opt;
    opt.lr = S(cfg.lr);
    rng::Stream shuffle_rs(rng::mix({cfg.master_seed, rng::kShuffle, cfg.stream_tag}));
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    EarlyStopper stopper{cfg.patience};
    TrainResult<S> res;
    res.best_params = net.params.snapshot();

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rs.uniform_int(i)]);

        double loss_acc = 0.0;
        int steps = 0;
        for (int start = 0; start < n; start += cfg.B) {
            const int stop = std::min(n, start + cfg.B);
            std::vector<int> idx(order.begin() + start, order.begin() + stop);
            net.params.zero_grads();
            auto x = data::batch_inputs<S>(samples, idx);
            auto y = data::batch_targets<S>(samples, idx);
            auto mods = data::batch_modalities(samples, idx);
            auto loss = metrics::total_loss(net.forward(x, mods, true), y);
            loss.backward();
            nn::adam_step(net.params, opt);
            loss_acc += static_cast<double>(loss.value());
            ++steps;
        }

        const double val = fed::evaluate_model(net, val_vols);
        res.history.push_back({epoch, loss_acc / steps, val});
        const bool improved = val > stopper.best;
        const bool done = stopper.observe(epoch, val);
        if (improved) res.best_params = net.params.snapshot();
        if (done) break;
    }

    res.best_epoch = stopper.best_epoch;
    res.best_val = stopper.best;
    net.params.load_values(res.best_params);
    return res;
}

template <class S>
struct LocalBaseline {
    model::UNet<S> model;
    TrainResult<S> result;
};

namespace detail {

/// Runs job(k) for k in [0, K) on up to thread_cap() threads; rethrows the
/// first captured exception.
template <class Fn>
void parallel_over(int K, Fn job) {
    const int P = std::max(1, fed::thread_cap());
    if (P <= 1 || K <= 1) {
        for (int k = 0; k < K; ++k) job(k);
        return;
    }
    std::vector<std::exception_ptr> errs(static_cast<std::size_t>(K));
    for (int base = 0; base < K; base += P) {
        const int stop = std::min(K, base + P);
        std::vector<std::thread> pool;
        for (int k = base; k < stop; ++k)
            pool.emplace_back([&, k] {
                try {
                    job(k);
                } catch (...) {
                    errs[static_cast<std::size_t>(k)] = std::current_exception();
                }
            });
        for (auto& t : pool) t.join();
    }
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// One plain U-Net (no normalization layers) per client, trained on that
/// client's own training split only. All models share the same initialization
/// seed; shuffle streams differ per client.
template <class S>
std::vector<LocalBaseline<S>> train_local_baselines(
    const std::vector<data::ClientDataset>& datasets, const std::vector<int>& channels,
    const BaselineTrainCfg& cfg) {
    if (datasets.empty())
        throw std::invalid_argument("train_local_baselines: no clients");
    model::UNetConfig arch;
    arch.channels = channels;
    arch.norm = model::NormKind::None;

    std::vector<LocalBaseline<S>> out;
    out.reserve(datasets.size());
    for (std::size_t k = 0; k < datasets.size(); ++k)
        out.push_back({model::build_unet<S>(arch, cfg.master_seed), {}});

    detail::parallel_over(static_cast<int>(datasets.size()), [&](int k) {
        BaselineTrainCfg c = cfg;
        c.stream_tag = static_cast<std::uint64_t>(datasets[static_cast<std::size_t>(k)].client_id);
        out[static_cast<std::size_t>(k)].result = train_early_stopping(
            out[static_cast<std::size_t>(k)].model,
            datasets[static_cast<std::size_t>(k)].train,
            datasets[static_cast<std::size_t>(k)].val, c);
    });
    return out;
}

/// Mode count for the pooled model: learned-gate ModeNorm spends two modes per
/// modality when every client is single-modality (CT vs MRI groups stay
/// separable), and two modes total once mixed clients blur that split.
inline int centralized_mode_count(const std::vector<data::ClientDataset>& datasets) {
    for (const auto& d : datasets)
        if (d.mix == data::ModalityMix::Mixed) return 2;
    return 4;
}

template <class S>
struct CentralizedModel {
    model::UNet<S> model;
    TrainResult<S> result;
    int modes = 2;
    std::size_t n_train = 0;  // pooled training volumes
};

/// One learned-gate ModeNorm U-Net trained on the union of all clients'
/// training sets, validated on the pooled validation sets.
template <class S>
CentralizedModel<S> train_centralized(const std::vector<data::ClientDataset>& datasets,
                                      const std::vector<int>& channels,
                                      const BaselineTrainCfg& cfg) {
    if (datasets.empty()) throw std::invalid_argument("train_centralized: no clients");
    std::vector<data::Volume> pooled_train, pooled_val;
    for (const auto& d : datasets) {
        pooled_train.insert(pooled_train.end(), d.train.begin(), d.train.end());
        pooled_val.insert(pooled_val.end(), d.val.begin(), d.val.end());
    }

    model::UNetConfig arch;
    arch.channels = channels;
    arch.norm = model::NormKind::ModeNorm;
    arch.modes = centralized_mode_count(datasets);

    auto net = model::build_unet<S>(arch, cfg.master_seed);
    BaselineTrainCfg c = cfg;
    c.stream_tag = 0xCE;
    auto result = train_early_stopping(net, pooled_train, pooled_val, c);
    return {std::move(net), std::move(result), arch.modes, pooled_train.size()};
}

}  // namespace fseg::harness
