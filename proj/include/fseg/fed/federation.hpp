#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "fseg/data/batch.hpp"
#include "fseg/data/synthetic.hpp"
#include "fseg/metrics/eval.hpp"
#include "fseg/metrics/loss.hpp"
#include "fseg/model/unet.hpp"
#include "fseg/nn/adam.hpp"
#include "fseg/nn/param.hpp"
#include "fseg/rng.hpp"

namespace fseg::fed {

// ---------------------------------------------------------------------------
// Strategies
// ---------------------------------------------------------------------------

enum class Strategy { FedAvg, FedAvgM, FedVC, SiloBN, FedBN, FedNorm, FedNormPlus };

inline std::string to_string(Strategy s) {
    switch (s) {
        case Strategy::FedAvg: return "fedavg";
        case Strategy::FedAvgM: return "fedavgm";
        case Strategy::FedVC: return "fedvc";
        case Strategy::SiloBN: return "silobn";
        case Strategy::FedBN: return "fedbn";
        case Strategy::FedNorm: return "fednorm";
        case Strategy::FedNormPlus: return "fednorm_plus";
    }
    return "?";
}

inline Strategy strategy_from_string(const std::string& s) {
    if (s == "fedavg") return Strategy::FedAvg;
    if (s == "fedavgm") return Strategy::FedAvgM;
    if (s == "fedvc") return Strategy::FedVC;
    if (s == "silobn") return Strategy::SiloBN;
    if (s == "fedbn") return Strategy::FedBN;
    if (s == "fednorm") return Strategy::FedNorm;
    if (s == "fednorm_plus") return Strategy::FedNormPlus;
    throw std::invalid_argument("unknown strategy '" + s + "'");
}

/// The normalization layer each strategy's architecture uses.
inline model::NormKind required_norm(Strategy s) {
    switch (s) {
        case Strategy::SiloBN:
        case Strategy::FedBN: return model::NormKind::BatchNorm;
        case Strategy::FedNorm: return model::NormKind::ModeNorm;
        case Strategy::FedNormPlus: return model::NormKind::HardModeNorm;
        default: return model::NormKind::None;
    }
}

inline bool is_norm_stat(const nn::ParamTag& t) {
    return t.kind == nn::ParamTag::Kind::Normalization &&
           t.role == nn::ParamTag::Role::Statistic;
}
inline bool is_norm(const nn::ParamTag& t) {
    return t.kind == nn::ParamTag::Kind::Normalization;
}

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// One simulated institution. `dataset` points into caller-owned storage and
/// must outlive the state.
template <class S>
struct ClientState {
    int client_id = 0;
    const data::ClientDataset* dataset = nullptr;
    data::ModalityMix declared = data::ModalityMix::CTOnly;
    std::optional<nn::ParamSet<S>> private_params;  // SiloBN/FedBN residue
    nn::AdamState<S> opt;                           // reset every round
};

template <class S>
struct ServerState {
    Strategy strategy = Strategy::FedAvg;
    double beta = 0.9;      // interpolation weight (FedNorm / FedNorm+)
    double momentum = 0.6;  // server momentum (FedAvgM)
    model::NormKind norm = model::NormKind::None;

    nn::ParamSet<S> canonical;      // full model skeleton, frozen init values
    nn::ParamSet<S> global_params;  // what the server aggregates
    nn::ParamSet<S> ct_norm, mri_norm;  // per-modality norm sets (FedNorm)
    nn::ParamSet<S> velocity;           // FedAvgM server momentum buffer

    int round = 0;
    std::uint64_t master_seed = 0;
    int K = 0;
};

template <class S>
struct RoundUpdate {
    int client_id = 0;
    data::ModalityMix declared = data::ModalityMix::CTOnly;
    nn::ParamSet<S> params_after;
    int n_k = 0;               // training slice count
    double train_loss = 0.0;   // mean batch loss over the round's steps
    double val_dice_pre = 0.0; // received model scored before local training
};

struct RoundLog {
    int round = 0;
    std::vector<int> cohort;
    std::vector<double> val_dice_pre;  // one entry per federation client
    double global_val = 0.0;           // unweighted mean of val_dice_pre
    std::vector<double> train_loss;    // aligned with cohort
};

// ---------------------------------------------------------------------------
// Client sampling
// ---------------------------------------------------------------------------

/// Uniform cohort without replacement; depends only on (master_seed, round),
/// never on the strategy, so every algorithm sees the same cohort sequence.
inline std::vector<int> sample_clients(int round, std::uint64_t master_seed, int K,
                                       int m = 2) {
    if (m < 1 || m > K)
        throw std::invalid_argument("sample_clients: cohort size " + std::to_string(m) +
                                    " invalid for " + std::to_string(K) + " clients");
    rng::Stream rs(rng::mix({master_seed, rng::kClientSample,
                             static_cast<std::uint64_t>(round)}));
    std::vector<int> ids(K);
    std::iota(ids.begin(), ids.end(), 0);
    for (int i = 0; i < m; ++i) {
        const int j = i + static_cast<int>(rs.uniform_int(static_cast<std::uint64_t>(K - i)));
        std::swap(ids[i], ids[j]);
    }
    ids.resize(m);
    std::sort(ids.begin(), ids.end());
    return ids;
}

struct FedVcPlan {
    int steps = 0;                 // optimizer steps per selected client
    std::vector<double> weights;   // selection probability per client
};

/// steps = floor(min_k N_k / B); selection weights proportional to N_k.
inline FedVcPlan fedvc_plan(const std::vector<int>& train_counts, int B) {
    if (train_counts.empty()) throw std::invalid_argument("fedvc_plan: no clients");
    if (B < 1) throw std::invalid_argument("fedvc_plan: batch size must be positive");
    const int mn = *std::min_element(train_counts.begin(), train_counts.end());
    FedVcPlan plan;
    plan.steps = mn / B;
    if (plan.steps == 0)
        throw std::invalid_argument("fedvc_plan: smallest client holds " +
                                    std::to_string(mn) + " slices, fewer than one batch of " +
                                    std::to_string(B));
    const double total = std::accumulate(train_counts.begin(), train_counts.end(), 0.0);
    for (int n : train_counts) plan.weights.push_back(static_cast<double>(n) / total);
    return plan;
}

/// Draws with replacement, probability proportional to the weights, until m
/// distinct clients are collected, keeping the cohort size fixed.
inline std::vector<int> fedvc_sample_clients(int round, std::uint64_t master_seed,
                                             const std::vector<double>& weights, int m) {
    const int K = static_cast<int>(weights.size());
    if (m < 1 || m > K)
        throw std::invalid_argument("fedvc_sample_clients: cohort size " +
                                    std::to_string(m) + " invalid for " +
                                    std::to_string(K) + " clients");
    rng::Stream rs(rng::mix({master_seed, rng::kFedVcDraw,
                             static_cast<std::uint64_t>(round)}));
    std::set<int> chosen;
    while (static_cast<int>(chosen.size()) < m) {
        const double r = rs.uniform();
        double c = 0.0;
        int pick = K - 1;
        for (int i = 0; i < K; ++i) {
            c += weights[i];
            if (r < c) {
                pick = i;
                break;
            }
        }
        chosen.insert(pick);
    }
    return {chosen.begin(), chosen.end()};
}

// ---------------------------------------------------------------------------
// Aggregation primitives
// ---------------------------------------------------------------------------

template <class S>
nn::ParamSet<S> zero_like(const nn::ParamSet<S>& skeleton) {
    auto out = skeleton.snapshot();
    for (auto& e : out) e.tensor.values().setZero();
    return out;
}

/// Weighted per-tensor mean, accumulated in the given (client-id ascending)
/// order so results are bit-reproducible.
template <class S>
nn::ParamSet<S> weighted_average(const std::vector<const nn::ParamSet<S>*>& sets,
                                 const std::vector<double>& w) {
    if (sets.empty()) throw std::invalid_argument("weighted_average: no parameter sets");
    for (const auto* ps : sets)
        if (!ps->same_skeleton(*sets[0]))
            throw ShapeError("weighted_average: parameter skeletons differ");
    auto out = sets[0]->snapshot();
    for (auto& e : out) {
        auto& acc = e.tensor.values();
        acc *= S(w[0]);
        for (std::size_t k = 1; k < sets.size(); ++k)
            acc += S(w[k]) * sets[k]->at(e.name).tensor.values();
    }
    return out;
}

namespace detail {

/// Cohort updates ordered by ascending client id, with FedAvg weights.
template <class S>
std::pair<std::vector<const RoundUpdate<S>*>, std::vector<double>> ordered_updates(
    const std::vector<RoundUpdate<S>>& updates) {
    if (updates.empty()) throw std::invalid_argument("aggregate: no updates");
    std::vector<const RoundUpdate<S>*> ord;
    for (const auto& u : updates) {
        if (u.n_k <= 0)
            throw std::invalid_argument("aggregate: client " + std::to_string(u.client_id) +
                                        " reports no training samples");
        ord.push_back(&u);
    }
    std::sort(ord.begin(), ord.end(),
              [](const auto* a, const auto* b) { return a->client_id < b->client_id; });
    double total = 0;
    for (const auto* u : ord) total += static_cast<double>(u->n_k);
    std::vector<double> w;
    for (const auto* u : ord) w.push_back(static_cast<double>(u->n_k) / total);
    return {std::move(ord), std::move(w)};
}

}  // namespace detail

/// Plain federated averaging over every tensor, weights n_k / sum(n_k).
template <class S>
nn::ParamSet<S> aggregate_fedavg(const std::vector<RoundUpdate<S>>& updates) {
    auto [ord, w] = detail::ordered_updates(updates);
    std::vector<const nn::ParamSet<S>*> sets;
    for (const auto* u : ord) sets.push_back(&u->params_after);
    return weighted_average(sets, w);
}

/// Server momentum: v <- momentum*v + (theta_t - avg); theta_{t+1} = theta_t - v.
/// Mutates server.velocity; the caller installs the returned parameters.
template <class S>
nn::ParamSet<S> aggregate_fedavgm(const std::vector<RoundUpdate<S>>& updates,
                                  ServerState<S>& server, double momentum = 0.6) {
    auto avg = aggregate_fedavg(updates);
    if (!avg.same_skeleton(server.global_params) ||
        !server.velocity.same_skeleton(server.global_params))
        throw ShapeError("aggregate_fedavgm: skeleton mismatch between updates, "
                         "server parameters and velocity");
    for (auto& e : avg) {
        auto& vel = server.velocity.at(e.name).tensor.values();
        const auto& glob = server.global_params.at(e.name).tensor.values();
        vel = S(momentum) * vel + (glob - e.tensor.values()).eval();
        e.tensor.values() = glob - vel;
    }
    return avg;
}

/// FedAvg that drops running statistics from the global model; clients keep
/// their own.
template <class S>
nn::ParamSet<S> aggregate_silobn(const std::vector<RoundUpdate<S>>& updates) {
    auto avg = aggregate_fedavg(updates);
    return avg.partition([](const nn::ParamTag& t) { return !is_norm_stat(t); }).first;
}

/// FedAvg that drops every normalization tensor (affine parameters and
/// statistics) from the global model.
template <class S>
nn::ParamSet<S> aggregate_fedbn(const std::vector<RoundUpdate<S>>& updates) {
    auto avg = aggregate_fedavg(updates);
    return avg.partition([](const nn::ParamTag& t) { return !is_norm(t); }).first;
}

/// result = (1-beta)*old + beta*new, per tensor.
template <class S>
nn::ParamSet<S> interpolate(const nn::ParamSet<S>& old_set, const nn::ParamSet<S>& new_set,
                            double beta) {
    if (!(beta > 0.0 && beta <= 1.0))
        throw std::invalid_argument("interpolate: beta must be in (0, 1], got " +
                                    std::to_string(beta));
    if (!old_set.same_skeleton(new_set))
        throw ShapeError("interpolate: parameter skeletons differ");
    auto out = old_set.snapshot();
    for (auto& e : out)
        e.tensor.values() = S(1.0 - beta) * e.tensor.values() +
                            S(beta) * new_set.at(e.name).tensor.values();
    return out;
}

// ---------------------------------------------------------------------------
// Distribution
// ---------------------------------------------------------------------------

/// FedNorm payload: shared non-normalization tensors plus the norm set of the
/// client's declared modality, in canonical model order.
template <class S>
nn::ParamSet<S> fednorm_distribute(const ServerState<S>& server,
                                   data::ModalityMix declared) {
    if (declared == data::ModalityMix::Mixed)
        throw std::invalid_argument("fednorm cannot handle mixed-modality clients");
    auto payload = server.canonical.snapshot();
    payload.load_values(server.global_params);
    payload.load_values(declared == data::ModalityMix::CTOnly ? server.ct_norm
                                                              : server.mri_norm);
    return payload;
}

/// Full parameter set a client receives (and evaluates) this round.
template <class S>
nn::ParamSet<S> make_payload(const ServerState<S>& server, const ClientState<S>& client) {
    switch (server.strategy) {
        case Strategy::SiloBN:
        case Strategy::FedBN: {
            auto payload = server.canonical.snapshot();
            payload.load_values(server.global_params);
            if (client.private_params) payload.load_values(*client.private_params);
            return payload;
        }
        case Strategy::FedNorm: return fednorm_distribute(server, client.declared);
        default: {
            auto payload = server.canonical.snapshot();
            payload.load_values(server.global_params);
            return payload;
        }
    }
}

// ---------------------------------------------------------------------------
// FedNorm / FedNorm+ aggregation
// ---------------------------------------------------------------------------

/// Non-normalization tensors: FedAvg over every update. Normalization sets:
/// per-modality FedAvg, interpolated into the server's modality set. A round
/// with no client of one modality leaves that modality's set untouched.
template <class S>
void fednorm_aggregate(const std::vector<RoundUpdate<S>>& updates, ServerState<S>& server,
                       double beta = 0.9) {
    auto [ord, w_all] = detail::ordered_updates(updates);
    for (const auto* u : ord)
        if (u->declared == data::ModalityMix::Mixed)
            throw std::invalid_argument("fednorm cannot handle mixed-modality clients: client " +
                                        std::to_string(u->client_id));

    std::vector<const nn::ParamSet<S>*> full;
    for (const auto* u : ord) full.push_back(&u->params_after);
    server.global_params =
        weighted_average(full, w_all).partition([](const nn::ParamTag& t) {
            return !is_norm(t);
        }).first;

    for (data::ModalityMix mod : {data::ModalityMix::CTOnly, data::ModalityMix::MRIOnly}) {
        std::vector<nn::ParamSet<S>> norm_parts;
        std::vector<double> n;
        for (const auto* u : ord)
            if (u->declared == mod) {
                norm_parts.push_back(u->params_after.partition(is_norm).first);
                n.push_back(static_cast<double>(u->n_k));
            }
        if (norm_parts.empty()) continue;
        const double total = std::accumulate(n.begin(), n.end(), 0.0);
        std::vector<double> w;
        std::vector<const nn::ParamSet<S>*> sets;
        for (std::size_t i = 0; i < norm_parts.size(); ++i) {
            w.push_back(n[i] / total);
            sets.push_back(&norm_parts[i]);
        }
        auto avg = weighted_average(sets, w);
        auto& tgt = mod == data::ModalityMix::CTOnly ? server.ct_norm : server.mri_norm;
        tgt = interpolate(tgt, avg, beta);
    }
}

/// FedAvg over every tensor (hard-gated mode tensors included), then
/// interpolate the whole set against the previous global model.
template <class S>
void fednorm_plus_aggregate(const std::vector<RoundUpdate<S>>& updates,
                            ServerState<S>& server, double beta = 0.5) {
    if (server.norm != model::NormKind::HardModeNorm)
        throw std::invalid_argument(
            "fednorm_plus_aggregate: architecture must use hard-gated mode normalization");
    auto avg = aggregate_fedavg(updates);
    server.global_params = interpolate(server.global_params, avg, beta);
}

// ---------------------------------------------------------------------------
// Local training / evaluation
// ---------------------------------------------------------------------------

/// Mean per-patient Dice of the model (as currently loaded) over the volumes.
template <class S>
double evaluate_model(model::UNet<S>& net, const std::vector<data::Volume>& vols) {
    if (vols.empty()) throw std::invalid_argument("evaluate_model: no volumes to score");
    autograd::NoGradGuard guard;
    double acc = 0.0;
    for (const auto& vol : vols) {
        auto x = data::volume_inputs<S>(vol);
        std::vector<Modality> mods(vol.slices.size(), vol.modality);
        auto p = net.forward(x, mods, /*training=*/false);
        const auto& pv = p.values();
        const std::int64_t hw = static_cast<std::int64_t>(vol.H) * vol.W;
        std::vector<metrics::Mask> pred;
        for (std::size_t s = 0; s < vol.slices.size(); ++s) {
            metrics::Mask m(vol.H, vol.W);
            for (std::int64_t i = 0; i < hw; ++i)
                m.v[i] = pv[static_cast<std::int64_t>(s) * hw + i] > S(0.5) ? 1 : 0;
            pred.push_back(std::move(m));
        }
        acc += metrics::dice_per_patient(pred, vol.masks);
    }
    return acc / static_cast<double>(vols.size());
}

struct LocalTrainCfg {
    int E = 1;                     // local epochs
    int B = 12;                    // batch size
    double lr = 1e-3;
    int steps_override = 0;        // > 0: exactly this many full-batch steps (FedVC)
    std::uint64_t master_seed = 0;
    int round = 0;
};

/// Loads the received parameters, scores them on the local validation set,
/// then runs Adam over the shuffled local training slices.
template <class S>
RoundUpdate<S> local_train(ClientState<S>& client, model::UNet<S>& net,
                           const nn::ParamSet<S>& received, const LocalTrainCfg& cfg) {
    if (!received.same_skeleton(net.params))
        throw ShapeError("local_train: received parameter skeleton does not match the model");
    auto samples = data::flatten_slices(client.dataset->train);
    const int n = static_cast<int>(samples.size());
    if (n == 0)
        throw std::invalid_argument("local_train: client '" + client.dataset->name +
                                    "' has no training slices");
    if (cfg.steps_override > 0 && n < cfg.B)
        throw std::invalid_argument("local_train: client '" + client.dataset->name +
                                    "' cannot fill a batch of " + std::to_string(cfg.B));

    net.params.load_values(received);
    RoundUpdate<S> up;
    up.client_id = client.client_id;
    up.declared = client.declared;
    up.n_k = n;
    up.val_dice_pre = evaluate_model(net, client.dataset->val);

    client.opt = nn::AdamState<S>{};
    client.opt.lr = S(cfg.lr);

    rng::Stream sh(rng::mix({cfg.master_seed, rng::kShuffle,
                             static_cast<std::uint64_t>(client.client_id),
                             static_cast<std::uint64_t>(cfg.round)}));
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    int cursor = n;  // forces a shuffle before the first batch
    auto reshuffle = [&] {
        for (int i = n - 1; i > 0; --i) {
            const int j = static_cast<int>(sh.uniform_int(static_cast<std::uint64_t>(i) + 1));
            std::swap(perm[i], perm[j]);
        }
        cursor = 0;
    };

    const bool full_batches_only = cfg.steps_override > 0;
    const int steps_per_epoch = (n + cfg.B - 1) / cfg.B;
    const int total_steps =
        full_batches_only ? cfg.steps_override : cfg.E * steps_per_epoch;

    double loss_sum = 0.0;
    for (int step = 0; step < total_steps; ++step) {
        if (full_batches_only ? (n - cursor < cfg.B) : (cursor == n)) reshuffle();
        const int take = full_batches_only ? cfg.B : std::min(cfg.B, n - cursor);
        std::vector<int> idx(perm.begin() + cursor, perm.begin() + cursor + take);
        cursor += take;

        auto x = data::batch_inputs<S>(samples, idx);
        auto y = data::batch_targets<S>(samples, idx);
        auto mods = data::batch_modalities(samples, idx);

        net.params.zero_grads();
        auto loss = metrics::total_loss(net.forward(x, mods, /*training=*/true), y);
        loss.backward();
        nn::adam_step(net.params, client.opt);
        loss_sum += static_cast<double>(loss.value());
    }
    up.train_loss = loss_sum / static_cast<double>(total_steps);
    up.params_after = net.params.snapshot();
    return up;
}

// ---------------------------------------------------------------------------
// Round protocol
// ---------------------------------------------------------------------------

struct FedConfig {
    Strategy strategy = Strategy::FedAvg;
    model::UNetConfig arch;  // arch.norm must equal required_norm(strategy)
    int T = 30;              // federation rounds
    int m = 2;               // cohort size per round
    int E = 1;               // local epochs
    int B = 12;              // batch size
    double lr = 1e-3;
    double beta = 0.9;       // interpolation weight (FedNorm: 0.9, FedNorm+: 0.5)
    double momentum = 0.6;   // FedAvgM server momentum
    bool fedvc_weighted_sampling = false;  // off: shared uniform cohorts
    std::uint64_t master_seed = 1;
};

template <class S>
struct FederationResult {
    ServerState<S> server;
    std::vector<ClientState<S>> clients;
    std::vector<RoundLog> logs;
};

inline int thread_cap() {
    if (const char* env = std::getenv("FSEG_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc ? static_cast<int>(hc) : 1;
}

template <class S>
ServerState<S> init_server(const FedConfig& cfg, const nn::ParamSet<S>& model_params,
                           int K) {
    ServerState<S> sv;
    sv.strategy = cfg.strategy;
    sv.beta = cfg.beta;
    sv.momentum = cfg.momentum;
    sv.norm = cfg.arch.norm;
    sv.master_seed = cfg.master_seed;
    sv.K = K;
    sv.canonical = model_params.snapshot();
    switch (cfg.strategy) {
        case Strategy::SiloBN:
            sv.global_params =
                sv.canonical.partition([](const nn::ParamTag& t) { return !is_norm_stat(t); })
                    .first.snapshot();
            break;
        case Strategy::FedBN:
            sv.global_params =
                sv.canonical.partition([](const nn::ParamTag& t) { return !is_norm(t); })
                    .first.snapshot();
            break;
        case Strategy::FedNorm: {
            auto [norm, other] = sv.canonical.partition(is_norm);
            sv.global_params = other.snapshot();
            sv.ct_norm = norm.snapshot();
            sv.mri_norm = norm.snapshot();
            break;
        }
        default: sv.global_params = sv.canonical.snapshot(); break;
    }
    if (cfg.strategy == Strategy::FedAvgM) sv.velocity = zero_like(sv.global_params);
    return sv;
}

/// Runs T federation rounds over the given clients. `datasets` must outlive
/// the returned result (client states point into it).
template <class S>
FederationResult<S> run_federation(const std::vector<data::ClientDataset>& datasets,
                                   const FedConfig& cfg) {
    const int K = static_cast<int>(datasets.size());
    if (K == 0) throw std::invalid_argument("run_federation: no clients");
    if (cfg.m < 1 || cfg.m > K)
        throw std::invalid_argument("run_federation: cohort size " + std::to_string(cfg.m) +
                                    " invalid for " + std::to_string(K) + " clients");
    if (cfg.T < 1 || cfg.E < 1 || cfg.B < 1)
        throw std::invalid_argument("run_federation: T, E and B must be positive");
    if (cfg.arch.norm != required_norm(cfg.strategy))
        throw std::invalid_argument("run_federation: strategy " + to_string(cfg.strategy) +
                                    " requires a " +
                                    model::to_string(required_norm(cfg.strategy)) +
                                    " architecture, got " + model::to_string(cfg.arch.norm));

    std::vector<ClientState<S>> clients;
    std::vector<model::UNet<S>> nets;
    std::vector<int> train_counts;
    for (int k = 0; k < K; ++k) {
        const auto& ds = datasets[k];
        if (ds.train.empty() || ds.val.empty())
            throw std::invalid_argument("run_federation: client '" + ds.name +
                                        "' needs nonempty train and validation splits");
        if (cfg.strategy == Strategy::FedNorm && ds.mix == data::ModalityMix::Mixed)
            throw std::invalid_argument(
                "fednorm cannot handle mixed-modality clients: client '" + ds.name + "'");
        nets.push_back(model::build_unet<S>(cfg.arch, cfg.master_seed));
        ClientState<S> cs;
        cs.client_id = k;
        cs.dataset = &ds;
        cs.declared = ds.mix;
        clients.push_back(std::move(cs));
        train_counts.push_back(static_cast<int>(data::flatten_slices(ds.train).size()));
    }

    ServerState<S> server = init_server(cfg, nets[0].params, K);

    if (cfg.strategy == Strategy::SiloBN)
        for (auto& c : clients)
            c.private_params =
                nets[c.client_id].params.partition(is_norm_stat).first.snapshot();
    if (cfg.strategy == Strategy::FedBN)
        for (auto& c : clients)
            c.private_params = nets[c.client_id].params.partition(is_norm).first.snapshot();

    int steps_override = 0;
    std::vector<double> vc_weights;
    if (cfg.strategy == Strategy::FedVC) {
        auto plan = fedvc_plan(train_counts, cfg.B);
        steps_override = plan.steps;
        vc_weights = std::move(plan.weights);
    }

    const int P = thread_cap();
    std::vector<RoundLog> logs;
    for (int t = 1; t <= cfg.T; ++t) {
        const std::vector<int> cohort =
            (cfg.strategy == Strategy::FedVC && cfg.fedvc_weighted_sampling)
                ? fedvc_sample_clients(t, cfg.master_seed, vc_weights, cfg.m)
                : sample_clients(t, cfg.master_seed, K, cfg.m);

        std::vector<std::optional<RoundUpdate<S>>> slots(K);
        std::vector<double> val(K, 0.0);
        std::vector<std::exception_ptr> errors(K);
        auto job = [&](int k) {
            try {
                auto payload = make_payload(server, clients[k]);
                if (std::binary_search(cohort.begin(), cohort.end(), k)) {
                    LocalTrainCfg ltc;
                    ltc.E = cfg.E;
                    ltc.B = cfg.B;
                    ltc.lr = cfg.lr;
                    ltc.steps_override = steps_override;
                    ltc.master_seed = cfg.master_seed;
                    ltc.round = t;
                    slots[k] = local_train(clients[k], nets[k], payload, ltc);
                    val[k] = slots[k]->val_dice_pre;
                } else {
                    nets[k].params.load_values(payload);
                    val[k] = evaluate_model(nets[k], clients[k].dataset->val);
                }
            } catch (...) {
                errors[k] = std::current_exception();
            }
        };
        if (P <= 1) {
            for (int k = 0; k < K; ++k) job(k);
        } else {
            for (int start = 0; start < K; start += P) {
                std::vector<std::thread> pool;
                for (int k = start; k < std::min(K, start + P); ++k)
                    pool.emplace_back(job, k);
                for (auto& th : pool) th.join();
            }
        }
        for (int k = 0; k < K; ++k)
            if (errors[k]) std::rethrow_exception(errors[k]);

        for (int k : cohort) {
            if (cfg.strategy == Strategy::SiloBN)
                clients[k].private_params =
                    slots[k]->params_after.partition(is_norm_stat).first.snapshot();
            if (cfg.strategy == Strategy::FedBN)
                clients[k].private_params =
                    slots[k]->params_after.partition(is_norm).first.snapshot();
        }

        std::vector<RoundUpdate<S>> updates;
        for (int k : cohort) updates.push_back(std::move(*slots[k]));

        switch (cfg.strategy) {
            case Strategy::FedAvg:
            case Strategy::FedVC: server.global_params = aggregate_fedavg(updates); break;
            case Strategy::FedAvgM:
                server.global_params = aggregate_fedavgm(updates, server, cfg.momentum);
                break;
            case Strategy::SiloBN: server.global_params = aggregate_silobn(updates); break;
            case Strategy::FedBN: server.global_params = aggregate_fedbn(updates); break;
            case Strategy::FedNorm: fednorm_aggregate(updates, server, cfg.beta); break;
            case Strategy::FedNormPlus:
                fednorm_plus_aggregate(updates, server, cfg.beta);
                break;
        }
        server.round = t;

        RoundLog log;
        log.round = t;
        log.cohort = cohort;
        log.val_dice_pre = val;
        log.global_val =
            std::accumulate(val.begin(), val.end(), 0.0) / static_cast<double>(K);
        for (std::size_t i = 0; i < cohort.size(); ++i)
            log.train_loss.push_back(updates[i].train_loss);
        logs.push_back(std::move(log));
    }
    return {std::move(server), std::move(clients), std::move(logs)};
}

}  // namespace fseg::fed
