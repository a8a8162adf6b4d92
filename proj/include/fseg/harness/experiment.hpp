#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fseg/harness/checkpoint.hpp"
#include "fseg/harness/config.hpp"
#include "fseg/harness/trainer.hpp"
#include "fseg/metrics/ttest.hpp"

namespace fseg::harness {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Data preparation
// ---------------------------------------------------------------------------

/// Generates every client's volumes, computes per-client scalar normalization
/// statistics over all of that client's volumes, and preprocesses each volume
/// to the target resolution.
/// Scalar normalization is per data source: a mixed client holds one CT and
/// one MRI collection, and each is standardized by its own statistics.
inline std::vector<data::ClientDataset> prepare_data(const ExperimentConfig& cfg) {
    auto datasets = data::split_clients(cfg.clients, cfg.data, cfg.seed);
    for (auto& d : datasets) {
        for (Modality mod : {Modality::CT, Modality::MRI}) {
            std::vector<data::Volume> source;
            for (const auto* split : {&d.train, &d.val, &d.test})
                for (const auto& v : *split)
                    if (v.modality == mod) source.push_back(v);
            if (source.empty()) continue;
            const auto stats = data::dataset_norm_stats(source);
            for (auto* split : {&d.train, &d.val, &d.test})
                for (auto& v : *split)
                    if (v.modality == mod)
                        v = data::preprocess(v, stats, cfg.target_height,
                                             cfg.target_width);
        }
    }
    return datasets;
}

/// The single-modality (CT-only / MRI-only) clients, copied out.
inline std::vector<data::ClientDataset> single_modality_subset(
    const std::vector<data::ClientDataset>& datasets) {
    std::vector<data::ClientDataset> out;
    for (const auto& d : datasets)
        if (d.mix != data::ModalityMix::Mixed) out.push_back(d);
    return out;
}

inline bool has_mixed_client(const std::vector<data::ClientDataset>& datasets) {
    for (const auto& d : datasets)
        if (d.mix == data::ModalityMix::Mixed) return true;
    return false;
}

// ---------------------------------------------------------------------------
// Model selection
// ---------------------------------------------------------------------------

/// Unweighted mean of the per-client validation scores.
inline double global_validation_score(const std::vector<double>& scores) {
    if (scores.empty())
        throw std::invalid_argument("global_validation_score: no client scores");
    return std::accumulate(scores.begin(), scores.end(), 0.0) /
           static_cast<double>(scores.size());
}

/// Highest global validation score; ties go to the earliest round.
inline std::pair<int, double> select_winner(
    const std::vector<std::pair<int, double>>& history) {
    if (history.empty()) throw std::invalid_argument("select_winner: empty history");
    std::pair<int, double> best = history.front();
    for (const auto& e : history)
        if (e.second > best.second) best = e;
    return best;
}

inline std::pair<int, double> select_winner(const std::vector<fed::RoundLog>& logs) {
    std::vector<std::pair<int, double>> hist;
    hist.reserve(logs.size());
    for (const auto& l : logs) hist.emplace_back(l.round, l.global_val);
    return select_winner(hist);
}

// ---------------------------------------------------------------------------
// Test-set scoring
// ---------------------------------------------------------------------------

template <class S>
std::vector<metrics::Mask> predict_volume_masks(model::UNet<S>& net,
                                                const data::Volume& vol) {
    autograd::NoGradGuard guard;
    auto x = data::volume_inputs<S>(vol);
    std::vector<Modality> mods(vol.slices.size(), vol.modality);
    auto p = net.forward(x, mods, /*training=*/false);
    const auto& pv = p.values();
    const std::int64_t hw = static_cast<std::int64_t>(vol.H) * vol.W;
    std::vector<metrics::Mask> pred;
    for (std::size_t s = 0; s < vol.slices.size(); ++s) {
        metrics::Mask m(vol.H, vol.W);
        for (std::int64_t i = 0; i < hw; ++i)
            m.v[static_cast<std::size_t>(i)] =
                pv[static_cast<std::int64_t>(s) * hw + i] > S(0.5) ? 1 : 0;
        pred.push_back(std::move(m));
    }
    return pred;
}

/// Dice per patient of the model currently loaded in `net` on `vols`.
template <class S>
std::vector<metrics::PatientScore> score_volumes(model::UNet<S>& net,
                                                 const std::vector<data::Volume>& vols,
                                                 int client_id) {
    std::vector<metrics::PatientScore> out;
    for (const auto& vol : vols) {
        auto pred = predict_volume_masks(net, vol);
        out.push_back({vol.patient_id, client_id,
                       metrics::dice_per_patient(pred, vol.masks)});
    }
    return out;
}

/// FedNorm evaluation routes every test volume through the norm set of its
/// own modality, so even clients outside the federation (mixed ones) can be
/// scored.
template <class S>
std::vector<metrics::PatientScore> score_fednorm(model::UNet<S>& net,
                                                 const fed::ServerState<S>& server,
                                                 const data::ClientDataset& ds) {
    std::vector<metrics::PatientScore> out;
    for (const auto& vol : ds.test) {
        const auto declared = vol.modality == Modality::CT ? data::ModalityMix::CTOnly
                                                           : data::ModalityMix::MRIOnly;
        net.params.load_values(fed::fednorm_distribute(server, declared));
        auto pred = predict_volume_masks(net, vol);
        out.push_back({vol.patient_id, ds.client_id,
                       metrics::dice_per_patient(pred, vol.masks)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Strategy plumbing
// ---------------------------------------------------------------------------

inline model::UNetConfig arch_for(const ExperimentConfig& cfg, fed::Strategy strat) {
    model::UNetConfig arch;
    arch.channels = cfg.channels;
    arch.norm = fed::required_norm(strat);
    arch.modes = cfg.modes;
    return arch;
}

inline fed::FedConfig fed_config_for(const ExperimentConfig& cfg, fed::Strategy strat) {
    fed::FedConfig fc;
    fc.strategy = strat;
    fc.arch = arch_for(cfg, strat);
    fc.T = cfg.T;
    fc.m = cfg.m;
    fc.E = cfg.E;
    fc.B = cfg.B;
    fc.lr = cfg.lr;
    fc.beta = strat == fed::Strategy::FedNormPlus ? cfg.beta_fednorm_plus
                                                  : cfg.beta_fednorm;
    fc.momentum = cfg.momentum;
    fc.fedvc_weighted_sampling = cfg.fedvc_weighted_sampling;
    fc.master_seed = cfg.seed;
    return fc;
}

template <class S>
fed::FederationResult<S> run_strategy(const ExperimentConfig& cfg, fed::Strategy strat,
                                      const std::vector<data::ClientDataset>& datasets) {
    return fed::run_federation<S>(datasets, fed_config_for(cfg, strat));
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct ReportCell {
    std::string model;
    int client_id = 0;
    std::string client;
    int n = 0;  // test patients behind the mean
    double mean_dice = 0.0;
    double ri = 0.0;  // percent improvement vs the local model on this client
    double p = 1.0;   // two-sided t-test vs the local per-patient scores
};

struct SelectionInfo {
    int best_round = 0;  // epoch for the baselines
    double best_val = 0.0;
    double final_val = 0.0;
};

struct Report {
    std::string name;
    std::uint64_t seed = 0;
    std::vector<std::string> models;  // row order; "local" first
    std::vector<int> client_ids;
    std::vector<std::string> client_names;
    // scores[model][client] -> per-patient scores in test-set order
    std::vector<std::vector<std::vector<metrics::PatientScore>>> scores;
    std::vector<ReportCell> cells;  // model-major, clients ascending
    std::vector<std::pair<std::string, SelectionInfo>> selection;
    std::vector<std::pair<std::string, std::vector<std::vector<int>>>> cohorts;
    std::string best_model;  // best non-local mean over clients
};

inline double mean_of(const std::vector<double>& v) {
    if (v.empty()) throw std::invalid_argument("mean_of: empty");
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// The single place report cells are computed, so regenerating a report from
/// persisted per-patient scores reproduces RI and p bit-for-bit. A degenerate
/// zero-variance comparison with unequal means gets p = 0, its limit.
inline ReportCell make_cell(const std::string& model, int client_id,
                            const std::string& client_name,
                            const std::vector<double>& local,
                            const std::vector<double>& mine) {
    ReportCell c;
    c.model = model;
    c.client_id = client_id;
    c.client = client_name;
    c.n = static_cast<int>(mine.size());
    c.mean_dice = mean_of(mine);
    if (model == "local") {
        c.ri = 0.0;
        c.p = 1.0;
        return c;
    }
    c.ri = metrics::relative_improvement(mean_of(local), c.mean_dice);
    try {
        c.p = metrics::t_test_unpaired(std::span<const double>(local.data(), local.size()),
                                       std::span<const double>(mine.data(), mine.size()))
                  .p;
    } catch (const std::domain_error&) {
        c.p = 0.0;
    }
    return c;
}

inline std::vector<double> dice_values(const std::vector<metrics::PatientScore>& scores) {
    std::vector<double> v;
    v.reserve(scores.size());
    for (const auto& s : scores) v.push_back(s.dice);
    return v;
}

inline void compute_report_cells(Report& r) {
    const auto local_it = std::find(r.models.begin(), r.models.end(), "local");
    if (local_it == r.models.end())
        throw std::invalid_argument("report: no local baseline row");
    const std::size_t li = static_cast<std::size_t>(local_it - r.models.begin());
    r.cells.clear();
    for (std::size_t m = 0; m < r.models.size(); ++m)
        for (std::size_t c = 0; c < r.client_ids.size(); ++c)
            r.cells.push_back(make_cell(r.models[m], r.client_ids[c], r.client_names[c],
                                        dice_values(r.scores[li][c]),
                                        dice_values(r.scores[m][c])));
    // winner: best mean-over-clients among the non-local models, earliest wins ties
    double best = -1.0;
    for (std::size_t m = 0; m < r.models.size(); ++m) {
        if (r.models[m] == "local") continue;
        double acc = 0.0;
        for (std::size_t c = 0; c < r.client_ids.size(); ++c)
            acc += r.cells[m * r.client_ids.size() + c].mean_dice;
        acc /= static_cast<double>(r.client_ids.size());
        if (acc > best) {
            best = acc;
            r.best_model = r.models[m];
        }
    }
}

// ---------------------------------------------------------------------------
// Artifact IO
// ---------------------------------------------------------------------------

inline void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
    os << text;
}

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string scores_csv(const Report& r) {
    std::string out = "client_id,model,patient_id,dice\n";
    for (std::size_t m = 0; m < r.models.size(); ++m)
        for (std::size_t c = 0; c < r.client_ids.size(); ++c)
            for (const auto& s : r.scores[m][c])
                out += std::to_string(s.client_id) + "," + r.models[m] + "," +
                       std::to_string(s.patient_id) + "," + format_double(s.dice) + "\n";
    return out;
}

inline json report_to_json(const Report& r) {
    json j;
    j["experiment"] = r.name;
    j["seed"] = r.seed;
    j["clients"] = json::array();
    for (std::size_t c = 0; c < r.client_ids.size(); ++c)
        j["clients"].push_back({{"id", r.client_ids[c]}, {"name", r.client_names[c]}});
    j["models"] = r.models;
    j["best_model"] = r.best_model;
    j["selection"] = json::object();
    for (const auto& [name, sel] : r.selection)
        j["selection"][name] = {{"best_round", sel.best_round},
                                {"best_val", sel.best_val},
                                {"final_val", sel.final_val}};
    j["cohorts"] = json::object();
    for (const auto& [name, rounds] : r.cohorts) j["cohorts"][name] = rounds;
    j["cells"] = json::array();
    for (const auto& c : r.cells)
        j["cells"].push_back({{"model", c.model},
                              {"client_id", c.client_id},
                              {"client", c.client},
                              {"n", c.n},
                              {"mean_dice", c.mean_dice},
                              {"ri", c.ri},
                              {"p", c.p}});
    return j;
}

struct CsvRow {
    int client_id = 0;
    std::string model;
    int patient_id = 0;
    double dice = 0.0;
};

inline std::vector<CsvRow> parse_scores_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line != "client_id,model,patient_id,dice")
        throw std::runtime_error("scores csv: missing or malformed header");
    std::vector<CsvRow> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string a, b, c, d;
        if (!std::getline(ls, a, ',') || !std::getline(ls, b, ',') ||
            !std::getline(ls, c, ',') || !std::getline(ls, d))
            throw std::runtime_error("scores csv: malformed row '" + line + "'");
        rows.push_back({std::stoi(a), b, std::stoi(c), std::strtod(d.c_str(), nullptr)});
    }
    return rows;
}

/// Rebuilds report cells from persisted per-patient rows; pure function of the
/// CSV contents.
inline std::vector<ReportCell> cells_from_rows(const std::vector<CsvRow>& rows) {
    std::vector<std::string> models;  // first-appearance order
    std::vector<int> clients;         // ascending
    for (const auto& r : rows) {
        if (std::find(models.begin(), models.end(), r.model) == models.end())
            models.push_back(r.model);
        if (std::find(clients.begin(), clients.end(), r.client_id) == clients.end())
            clients.push_back(r.client_id);
    }
    std::sort(clients.begin(), clients.end());

    auto collect = [&](const std::string& model, int client) {
        std::vector<double> v;
        for (const auto& r : rows)
            if (r.model == model && r.client_id == client) v.push_back(r.dice);
        return v;
    };

    std::vector<ReportCell> cells;
    for (const auto& m : models)
        for (int c : clients) {
            auto local = collect("local", c);
            auto mine = collect(m, c);
            if (local.empty() || mine.empty())
                throw std::runtime_error("scores csv: missing scores for model '" + m +
                                         "' on client " + std::to_string(c));
            cells.push_back(make_cell(m, c, "", local, mine));
        }
    return cells;
}

inline std::string render_report_text(const Report& r) {
    std::ostringstream os;
    os << "experiment: " << r.name << " (seed " << r.seed << ")\n";
    os << "best model: " << r.best_model << "\n\n";
    const int name_w = 14, col_w = 26;
    os << std::string(name_w, ' ');
    for (const auto& n : r.client_names) {
        std::string h = n;
        if (static_cast<int>(h.size()) > col_w - 2) h.resize(col_w - 2);
        os << h << std::string(col_w - h.size(), ' ');
    }
    os << "\n";
    for (std::size_t m = 0; m < r.models.size(); ++m) {
        std::string row = r.models[m];
        if (static_cast<int>(row.size()) < name_w)
            row += std::string(name_w - row.size(), ' ');
        os << row;
        for (std::size_t c = 0; c < r.client_ids.size(); ++c) {
            const auto& cell = r.cells[m * r.client_ids.size() + c];
            char buf[64];
            if (cell.model == "local")
                std::snprintf(buf, sizeof buf, "%.3f", cell.mean_dice);
            else
                std::snprintf(buf, sizeof buf, "%.3f (%+.1f%%, p=%.3f)", cell.mean_dice,
                              cell.ri, cell.p);
            std::string s = buf;
            os << s << std::string(s.size() < static_cast<std::size_t>(col_w)
                                       ? col_w - s.size()
                                       : 1,
                                   ' ');
        }
        os << "\n";
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Runners
// ---------------------------------------------------------------------------

inline json round_logs_json(const std::vector<fed::RoundLog>& logs) {
    json arr = json::array();
    for (const auto& l : logs)
        arr.push_back({{"round", l.round},
                       {"cohort", l.cohort},
                       {"val_dice_pre", l.val_dice_pre},
                       {"global_val", l.global_val},
                       {"train_loss", l.train_loss}});
    return arr;
}

/// Runs one federated strategy end to end; writes rounds.json and model.fseg
/// into the output directory and returns the federation result.
template <class S>
fed::FederationResult<S> run_single(const ExperimentConfig& cfg,
                                    const std::vector<data::ClientDataset>& datasets) {
    validate_config(cfg);
    fs::create_directories(cfg.output_dir);

    auto result = run_strategy<S>(cfg, cfg.strategy, datasets);
    const auto [best_round, best_val] = select_winner(result.logs);

    json j;
    j["experiment"] = cfg.name;
    j["strategy"] = fed::to_string(cfg.strategy);
    j["seed"] = cfg.seed;
    j["rounds"] = round_logs_json(result.logs);
    j["winner"] = {{"round", best_round}, {"global_val", best_val}};
    j["final"] = {{"round", result.logs.back().round},
                  {"global_val", result.logs.back().global_val}};
    write_text_file(fs::path(cfg.output_dir) / "rounds.json", j.dump(2) + "\n");

    const auto artifact = cfg.strategy == fed::Strategy::FedNorm
                              ? fednorm_bundle(result.server)
                              : result.server.global_params.snapshot();
    save_checkpoint(artifact, fs::path(cfg.output_dir) / "model.fseg");
    return result;
}

template <class S>
fed::FederationResult<S> run_single(const ExperimentConfig& cfg) {
    validate_config(cfg);
    auto datasets = prepare_data(cfg);
    return run_single<S>(cfg, datasets);
}

/// Local baselines + every federated strategy + centralized model, all scored
/// per patient on every client's test set. Writes report.json and
/// dice_per_patient.csv into the output directory.
template <class S>
Report run_comparison(const ExperimentConfig& cfg) {
    validate_config(cfg);
    fs::create_directories(cfg.output_dir);
    auto datasets = prepare_data(cfg);
    const std::size_t K = datasets.size();

    Report rep;
    rep.name = cfg.name;
    rep.seed = cfg.seed;
    for (const auto& d : datasets) {
        rep.client_ids.push_back(d.client_id);
        rep.client_names.push_back(d.name);
    }

    BaselineTrainCfg btc;
    btc.epochs = cfg.epochs;
    btc.patience = cfg.patience;
    btc.B = cfg.B;
    btc.lr = cfg.lr;
    btc.master_seed = cfg.seed;

    // local baselines: one model per client, scored on its own test set
    auto locals = train_local_baselines<S>(datasets, cfg.channels, btc);
    rep.models.push_back("local");
    rep.scores.emplace_back();
    for (std::size_t k = 0; k < K; ++k)
        rep.scores.back().push_back(
            score_volumes(locals[k].model, datasets[k].test, datasets[k].client_id));

    // federated strategies, all evaluated on every client's test set
    const bool mixed = has_mixed_client(datasets);
    const auto subset = single_modality_subset(datasets);
    for (auto strat : cfg.compare_strategies) {
        const bool on_subset = strat == fed::Strategy::FedNorm && mixed;
        const auto& fed_ds = on_subset ? subset : datasets;
        if (fed_ds.empty() || static_cast<int>(fed_ds.size()) < cfg.m)
            throw std::invalid_argument(
                "run_comparison: fednorm needs at least " + std::to_string(cfg.m) +
                " single-modality clients, got " + std::to_string(fed_ds.size()));
        auto result = run_strategy<S>(cfg, strat, fed_ds);

        const std::string name = fed::to_string(strat);
        rep.models.push_back(name);
        rep.scores.emplace_back();

        auto net = model::build_unet<S>(arch_for(cfg, strat), cfg.seed);
        for (std::size_t k = 0; k < K; ++k) {
            if (strat == fed::Strategy::FedNorm) {
                rep.scores.back().push_back(score_fednorm(net, result.server, datasets[k]));
            } else {
                net.params.load_values(fed::make_payload(result.server, result.clients[k]));
                rep.scores.back().push_back(
                    score_volumes(net, datasets[k].test, datasets[k].client_id));
            }
        }

        const auto [best_round, best_val] = select_winner(result.logs);
        rep.selection.emplace_back(
            name, SelectionInfo{best_round, best_val, result.logs.back().global_val});
        std::vector<std::vector<int>> cohorts;
        for (const auto& l : result.logs) cohorts.push_back(l.cohort);
        rep.cohorts.emplace_back(name, std::move(cohorts));
    }

    // centralized data-lake model
    auto central = train_centralized<S>(datasets, cfg.channels, btc);
    rep.models.push_back("centralized");
    rep.scores.emplace_back();
    for (std::size_t k = 0; k < K; ++k)
        rep.scores.back().push_back(
            score_volumes(central.model, datasets[k].test, datasets[k].client_id));
    rep.selection.emplace_back(
        "centralized", SelectionInfo{central.result.best_epoch, central.result.best_val,
                                     central.result.history.back().val_dice});

    compute_report_cells(rep);
    write_text_file(fs::path(cfg.output_dir) / "dice_per_patient.csv", scores_csv(rep));
    write_text_file(fs::path(cfg.output_dir) / "report.json",
                    report_to_json(rep).dump(2) + "\n");
    return rep;
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

inline const std::vector<int> kSweepModes = {1, 2, 3, 4};
inline const std::vector<double> kSweepBetas = {1.0, 0.9, 0.5, 0.2};

struct SweepEntry {
    int modes = 0;
    double beta = 0.0;
    int best_round = 0;
    double best_val = 0.0;
    double final_val = 0.0;
};

struct SweepResult {
    std::vector<SweepEntry> fednorm;       // modes-major over kSweepModes x kSweepBetas
    std::vector<SweepEntry> fednorm_plus;  // over kSweepBetas (hard gating, 2 modes)
    std::size_t fednorm_winner = 0;
    std::size_t fednorm_plus_winner = 0;
    std::vector<int> fednorm_clients;  // client ids in the fednorm federation
};

inline std::size_t best_entry(const std::vector<SweepEntry>& entries) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < entries.size(); ++i)
        if (entries[i].best_val > entries[best].best_val) best = i;
    return best;
}

inline std::string render_sweep_table(const std::vector<SweepEntry>& entries,
                                      const std::vector<int>& modes,
                                      const std::vector<double>& betas,
                                      std::size_t winner) {
    std::ostringstream os;
    os << "M \\ beta ";
    for (double b : betas) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%10.2f", b);
        os << buf;
    }
    os << "\n";
    for (std::size_t mi = 0; mi < modes.size(); ++mi) {
        char head[32];
        std::snprintf(head, sizeof head, "M = %-5d", modes[mi]);
        os << head;
        for (std::size_t bi = 0; bi < betas.size(); ++bi) {
            const std::size_t i = mi * betas.size() + bi;
            char buf[32];
            std::snprintf(buf, sizeof buf, "%9.3f%s", entries[i].best_val,
                          i == winner ? "*" : " ");
            os << buf;
        }
        os << "\n";
    }
    return os.str();
}

/// FedNorm M x beta grid (on the single-modality clients when mixed clients
/// exist) plus a FedNorm+ beta row on all clients. Winner per table is the
/// highest global validation score; ties keep the earliest grid entry.
template <class S>
SweepResult run_sweep(const ExperimentConfig& cfg) {
    fs::create_directories(cfg.output_dir);
    auto datasets = prepare_data(cfg);

    const bool mixed = has_mixed_client(datasets);
    const auto fednorm_ds = mixed ? single_modality_subset(datasets) : datasets;
    if (static_cast<int>(fednorm_ds.size()) < cfg.m)
        throw std::invalid_argument("run_sweep: fednorm needs at least " +
                                    std::to_string(cfg.m) +
                                    " single-modality clients, got " +
                                    std::to_string(fednorm_ds.size()));

    SweepResult res;
    for (const auto& d : fednorm_ds) res.fednorm_clients.push_back(d.client_id);

    for (int M : kSweepModes)
        for (double beta : kSweepBetas) {
            ExperimentConfig c = cfg;
            c.modes = M;
            c.beta_fednorm = beta;
            auto r = run_strategy<S>(c, fed::Strategy::FedNorm, fednorm_ds);
            const auto [round, val] = select_winner(r.logs);
            res.fednorm.push_back({M, beta, round, val, r.logs.back().global_val});
        }
    res.fednorm_winner = best_entry(res.fednorm);

    for (double beta : kSweepBetas) {
        ExperimentConfig c = cfg;
        c.beta_fednorm_plus = beta;
        auto r = run_strategy<S>(c, fed::Strategy::FedNormPlus, datasets);
        const auto [round, val] = select_winner(r.logs);
        res.fednorm_plus.push_back({2, beta, round, val, r.logs.back().global_val});
    }
    res.fednorm_plus_winner = best_entry(res.fednorm_plus);

    json j;
    j["experiment"] = cfg.name;
    j["seed"] = cfg.seed;
    j["fednorm_clients"] = res.fednorm_clients;
    auto entry_json = [](const SweepEntry& e) {
        return json{{"modes", e.modes},
                    {"beta", e.beta},
                    {"best_round", e.best_round},
                    {"best_val", e.best_val},
                    {"final_val", e.final_val}};
    };
    j["fednorm"] = json::array();
    for (const auto& e : res.fednorm) j["fednorm"].push_back(entry_json(e));
    j["fednorm_winner"] = entry_json(res.fednorm[res.fednorm_winner]);
    j["fednorm_plus"] = json::array();
    for (const auto& e : res.fednorm_plus) j["fednorm_plus"].push_back(entry_json(e));
    j["fednorm_plus_winner"] = entry_json(res.fednorm_plus[res.fednorm_plus_winner]);
    write_text_file(fs::path(cfg.output_dir) / "sweep.json", j.dump(2) + "\n");

    std::string txt = "model selection, " + cfg.name + "\n\nfednorm (best global "
                      "validation per cell; * = winner)\n";
    txt += render_sweep_table(res.fednorm, kSweepModes, kSweepBetas, res.fednorm_winner);
    txt += "\nfednorm_plus (hard gating)\n";
    txt += render_sweep_table(res.fednorm_plus, {2}, kSweepBetas, res.fednorm_plus_winner);
    write_text_file(fs::path(cfg.output_dir) / "sweep.txt", txt);
    return res;
}

// ---------------------------------------------------------------------------
// Report regeneration (`report <dir>`)
// ---------------------------------------------------------------------------

inline std::string read_text_file(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open '" + path.string() + "'");
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

/// Re-derives every cell from the per-patient CSV, cross-checks it against
/// report.json and renders the comparison table.
inline std::string regenerate_report(const std::string& dir) {
    const json j = json::parse(read_text_file(fs::path(dir) / "report.json"));
    const auto rows = parse_scores_csv(read_text_file(fs::path(dir) / "dice_per_patient.csv"));
    const auto cells = cells_from_rows(rows);

    Report rep;
    rep.name = j.at("experiment").get<std::string>();
    rep.seed = j.at("seed").get<std::uint64_t>();
    rep.best_model = j.at("best_model").get<std::string>();
    rep.models = j.at("models").get<std::vector<std::string>>();
    for (const auto& c : j.at("clients")) {
        rep.client_ids.push_back(c.at("id").get<int>());
        rep.client_names.push_back(c.at("name").get<std::string>());
    }

    const auto& stored = j.at("cells");
    if (stored.size() != cells.size())
        throw std::runtime_error("report: cell count mismatch between report.json and csv");
    rep.cells = cells;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const auto& s = stored[i];
        if (s.at("model").get<std::string>() != cells[i].model ||
            s.at("client_id").get<int>() != cells[i].client_id ||
            s.at("mean_dice").get<double>() != cells[i].mean_dice ||
            s.at("ri").get<double>() != cells[i].ri ||
            s.at("p").get<double>() != cells[i].p)
            throw std::runtime_error(
                "report: cell for model '" + cells[i].model + "', client " +
                std::to_string(cells[i].client_id) +
                " does not match the persisted per-patient scores");
        rep.cells[i].client = s.at("client").get<std::string>();
        rep.cells[i].n = s.at("n").get<int>();
    }
    return render_report_text(rep);
}

}  // namespace fseg::harness
