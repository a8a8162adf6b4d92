#pragma once

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "fseg/data/synthetic.hpp"
#include "fseg/fed/federation.hpp"

namespace fseg::harness {

using json = nlohmann::ordered_json;

struct ExperimentConfig {
    std::string name = "experiment";
    std::uint64_t seed = 1;
    std::string output_dir = "runs/experiment";

    data::SyntheticConfig data;
    int target_height = 32;
    int target_width = 32;

    std::vector<data::ClientSpec> clients;

    std::vector<int> channels = {4, 8, 16};
    int modes = 2;  // FedNorm mode count per modality set

    int T = 30;
    int m = 2;
    int E = 1;
    int B = 12;
    double lr = 1e-3;
    double beta_fednorm = 0.9;
    double beta_fednorm_plus = 0.5;
    double momentum = 0.6;
    bool fedvc_weighted_sampling = false;

    int epochs = 50;    // baseline training epochs
    int patience = 5;   // baseline early-stopping patience

    fed::Strategy strategy = fed::Strategy::FedNormPlus;  // used by `run`
    std::vector<fed::Strategy> compare_strategies = {
        fed::Strategy::FedAvg,  fed::Strategy::FedAvgM, fed::Strategy::FedVC,
        fed::Strategy::SiloBN,  fed::Strategy::FedBN,   fed::Strategy::FedNorm,
        fed::Strategy::FedNormPlus,
    };
};

namespace detail {

inline data::ModalityMix mix_from_string(const std::string& s) {
    if (s == "ct") return data::ModalityMix::CTOnly;
    if (s == "mri") return data::ModalityMix::MRIOnly;
    if (s == "mixed") return data::ModalityMix::Mixed;
    throw std::invalid_argument("config: unknown client mix '" + s +
                                "' (expected ct, mri or mixed)");
}

inline std::string mix_to_string(data::ModalityMix m) {
    switch (m) {
        case data::ModalityMix::CTOnly: return "ct";
        case data::ModalityMix::MRIOnly: return "mri";
        default: return "mixed";
    }
}

inline void expect_keys(const json& obj, const std::string& where,
                        const std::set<std::string>& allowed) {
    for (const auto& [key, _] : obj.items())
        if (!allowed.count(key))
            throw std::invalid_argument("config: unknown key '" + key + "' in " + where);
}

}  // namespace detail

inline json serialize_config(const ExperimentConfig& c) {
    json j;
    j["name"] = c.name;
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir;
    j["data"] = {{"height", c.data.height},
                 {"width", c.data.width},
                 {"slices_per_volume", c.data.slices_per_volume},
                 {"noise", c.data.noise},
                 {"target_height", c.target_height},
                 {"target_width", c.target_width}};
    j["clients"] = json::array();
    for (const auto& cs : c.clients)
        j["clients"].push_back({{"name", cs.name},
                                {"mix", detail::mix_to_string(cs.mix)},
                                {"patients", cs.patients},
                                {"variant", cs.variant},
                                {"seed_group", cs.seed_group}});
    j["model"] = {{"channels", c.channels}, {"modes", c.modes}};
    j["federation"] = {{"rounds", c.T},
                       {"cohort", c.m},
                       {"local_epochs", c.E},
                       {"batch_size", c.B},
                       {"lr", c.lr},
                       {"beta_fednorm", c.beta_fednorm},
                       {"beta_fednorm_plus", c.beta_fednorm_plus},
                       {"momentum", c.momentum},
                       {"fedvc_weighted_sampling", c.fedvc_weighted_sampling}};
    j["baselines"] = {{"epochs", c.epochs}, {"patience", c.patience}};
    j["strategy"] = fed::to_string(c.strategy);
    j["compare_strategies"] = json::array();
    for (auto s : c.compare_strategies) j["compare_strategies"].push_back(fed::to_string(s));
    return j;
}

inline ExperimentConfig parse_config(const json& j) {
    detail::expect_keys(j, "the top level",
                        {"name", "seed", "output_dir", "data", "clients", "model",
                         "federation", "baselines", "strategy", "compare_strategies"});
    ExperimentConfig c;
    c.name = j.value("name", c.name);
    c.seed = j.value("seed", c.seed);
    c.output_dir = j.value("output_dir", c.output_dir);
    if (j.contains("data")) {
        const auto& d = j.at("data");
        detail::expect_keys(d, "data",
                            {"height", "width", "slices_per_volume", "noise",
                             "target_height", "target_width"});
        c.data.height = d.value("height", c.data.height);
        c.data.width = d.value("width", c.data.width);
        c.data.slices_per_volume = d.value("slices_per_volume", c.data.slices_per_volume);
        c.data.noise = d.value("noise", c.data.noise);
        c.target_height = d.value("target_height", c.target_height);
        c.target_width = d.value("target_width", c.target_width);
    }
    if (j.contains("clients")) {
        for (const auto& e : j.at("clients")) {
            detail::expect_keys(e, "clients[]",
                                {"name", "mix", "patients", "variant", "seed_group"});
            data::ClientSpec s;
            s.name = e.at("name").get<std::string>();
            s.mix = detail::mix_from_string(e.at("mix").get<std::string>());
            s.patients = e.at("patients").get<int>();
            s.variant = e.value("variant", 0);
            s.seed_group = e.value("seed_group", -1);
            c.clients.push_back(std::move(s));
        }
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        detail::expect_keys(m, "model", {"channels", "modes"});
        if (m.contains("channels")) c.channels = m.at("channels").get<std::vector<int>>();
        c.modes = m.value("modes", c.modes);
    }
    if (j.contains("federation")) {
        const auto& f = j.at("federation");
        detail::expect_keys(f, "federation",
                            {"rounds", "cohort", "local_epochs", "batch_size", "lr",
                             "beta_fednorm", "beta_fednorm_plus", "momentum",
                             "fedvc_weighted_sampling"});
        c.T = f.value("rounds", c.T);
        c.m = f.value("cohort", c.m);
        c.E = f.value("local_epochs", c.E);
        c.B = f.value("batch_size", c.B);
        c.lr = f.value("lr", c.lr);
        c.beta_fednorm = f.value("beta_fednorm", c.beta_fednorm);
        c.beta_fednorm_plus = f.value("beta_fednorm_plus", c.beta_fednorm_plus);
        c.momentum = f.value("momentum", c.momentum);
        c.fedvc_weighted_sampling =
            f.value("fedvc_weighted_sampling", c.fedvc_weighted_sampling);
    }
    if (j.contains("baselines")) {
        const auto& b = j.at("baselines");
        detail::expect_keys(b, "baselines", {"epochs", "patience"});
        c.epochs = b.value("epochs", c.epochs);
        c.patience = b.value("patience", c.patience);
    }
    if (j.contains("strategy")) c.strategy = fed::strategy_from_string(j.at("strategy"));
    if (j.contains("compare_strategies")) {
        c.compare_strategies.clear();
        for (const auto& s : j.at("compare_strategies"))
            c.compare_strategies.push_back(fed::strategy_from_string(s));
    }
    return c;
}

/// Rejects configurations the pipeline cannot run; error messages try to name
/// the offending field or client.
inline void validate_config(const ExperimentConfig& c) {
    if (c.name.empty()) throw std::invalid_argument("config: name must be nonempty");
    if (c.output_dir.empty())
        throw std::invalid_argument("config: output_dir must be nonempty");
    if (c.clients.empty()) throw std::invalid_argument("config: no clients defined");
    for (const auto& cs : c.clients) {
        if (cs.name.empty()) throw std::invalid_argument("config: client without a name");
        if (cs.patients < 5)
            throw std::invalid_argument("config: client '" + cs.name +
                                        "' needs at least 5 patients so every split is "
                                        "nonempty, got " +
                                        std::to_string(cs.patients));
    }
    if (c.m < 1 || c.m > static_cast<int>(c.clients.size()))
        throw std::invalid_argument("config: cohort size " + std::to_string(c.m) +
                                    " invalid for " + std::to_string(c.clients.size()) +
                                    " clients");
    if (c.T < 1 || c.E < 1 || c.B < 1)
        throw std::invalid_argument("config: rounds, local_epochs and batch_size must be "
                                    "positive");
    if (!(c.lr > 0)) throw std::invalid_argument("config: lr must be positive");
    if (!(c.beta_fednorm > 0 && c.beta_fednorm <= 1))
        throw std::invalid_argument("config: beta_fednorm must be in (0, 1]");
    if (!(c.beta_fednorm_plus > 0 && c.beta_fednorm_plus <= 1))
        throw std::invalid_argument("config: beta_fednorm_plus must be in (0, 1]");
    if (!(c.momentum >= 0 && c.momentum < 1))
        throw std::invalid_argument("config: momentum must be in [0, 1)");
    if (c.modes < 1) throw std::invalid_argument("config: modes must be at least 1");
    if (c.channels.empty()) throw std::invalid_argument("config: model.channels is empty");
    for (int ch : c.channels)
        if (ch < 1) throw std::invalid_argument("config: channel counts must be positive");
    const int div = 1 << (static_cast<int>(c.channels.size()) - 1);
    if (c.target_height % div != 0 || c.target_width % div != 0)
        throw std::invalid_argument("config: target size " + std::to_string(c.target_height) +
                                    "x" + std::to_string(c.target_width) +
                                    " not divisible by the model's downsampling factor " +
                                    std::to_string(div));
    if (c.epochs < 1 || c.patience < 1)
        throw std::invalid_argument("config: baselines.epochs and patience must be positive");
    if (c.strategy == fed::Strategy::FedNorm)
        for (const auto& cs : c.clients)
            if (cs.mix == data::ModalityMix::Mixed)
                throw std::invalid_argument(
                    "config: fednorm cannot handle mixed-modality clients: client '" +
                    cs.name + "'");
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("config: cannot open '" + path + "'");
    json j;
    try {
        j = json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("config: '" + path + "' is not valid JSON: " + e.what());
    }
    return parse_config(j);
}

}  // namespace fseg::harness
