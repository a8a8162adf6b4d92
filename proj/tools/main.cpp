#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fseg/harness/experiment.hpp"

namespace {

using fseg::harness::ExperimentConfig;

ExperimentConfig load_with_overrides(const std::string& path, bool seed_set,
                                     std::uint64_t seed) {
    auto cfg = fseg::harness::load_config(path);
    if (seed_set) cfg.seed = seed;
    return cfg;
}

int do_run(const ExperimentConfig& cfg) {
    auto result = fseg::harness::run_single<float>(cfg);
    const auto [round, val] = fseg::harness::select_winner(result.logs);
    std::printf("strategy %s, %d rounds on %d clients\n",
                fseg::fed::to_string(cfg.strategy).c_str(),
                static_cast<int>(result.logs.size()), result.server.K);
    std::printf("best global validation %.4f at round %d; final %.4f\n", val, round,
                result.logs.back().global_val);
    std::printf("wrote %s/rounds.json and %s/model.fseg\n", cfg.output_dir.c_str(),
                cfg.output_dir.c_str());
    return 0;
}

int do_compare(const ExperimentConfig& cfg) {
    auto report = fseg::harness::run_comparison<float>(cfg);
    std::fputs(fseg::harness::render_report_text(report).c_str(), stdout);
    std::printf("\nwrote %s/report.json and %s/dice_per_patient.csv\n",
                cfg.output_dir.c_str(), cfg.output_dir.c_str());
    return 0;
}

int do_sweep(const ExperimentConfig& cfg) {
    fseg::harness::run_sweep<float>(cfg);
    std::fputs(fseg::harness::read_text_file(
                   std::filesystem::path(cfg.output_dir) / "sweep.txt")
                   .c_str(),
               stdout);
    std::printf("\nwrote %s/sweep.json and %s/sweep.txt\n", cfg.output_dir.c_str(),
                cfg.output_dir.c_str());
    return 0;
}

int do_report(const std::string& dir) {
    std::fputs(fseg::harness::regenerate_report(dir).c_str(), stdout);
    return 0;
}

// ---------------------------------------------------------------------------
// selftest: fast invariant and oracle checks over the core numerics
// ---------------------------------------------------------------------------

int g_failures = 0;

void check(bool ok, const char* what) {
    std::printf("%s: %s\n", ok ? "ok" : "FAIL", what);
    if (!ok) ++g_failures;
}

bool near(double a, double b, double tol) { return std::abs(a - b) <= tol; }

fseg::nn::ParamSet<double> scalar_set(double w, double nm, double ns) {
    using fseg::Tensor;
    fseg::nn::ParamSet<double> s;
    s.add("w", Tensor<double>::full({1}, w), fseg::nn::tag_other());
    s.add("nm", Tensor<double>::full({1}, nm), fseg::nn::tag_norm_param());
    s.add("ns", Tensor<double>::full({1}, ns), fseg::nn::tag_norm_stat());
    return s;
}

fseg::fed::RoundUpdate<double> scalar_update(int id, double v, int n_k) {
    fseg::fed::RoundUpdate<double> u;
    u.client_id = id;
    u.params_after = scalar_set(v, v, v);
    u.n_k = n_k;
    return u;
}

int do_selftest() {
    using namespace fseg;

    {  // deterministic random streams
        rng::Stream a(rng::mix({7, rng::kShuffle})), b(rng::mix({7, rng::kShuffle}));
        bool same = true;
        for (int i = 0; i < 5; ++i) same = same && a.uniform() == b.uniform();
        check(same, "random streams reproduce under the same seed");
    }
    {  // weighted average oracle
        std::vector<fed::RoundUpdate<double>> ups{scalar_update(0, 1.0, 1),
                                                  scalar_update(1, 2.0, 2),
                                                  scalar_update(2, 3.0, 1)};
        auto avg = fed::aggregate_fedavg(ups);
        check(near(avg.at("w").tensor.value(), 2.0, 1e-12),
              "fedavg matches the weighted-mean oracle");
    }
    {  // interpolation
        auto a = scalar_set(10, 10, 10), b = scalar_set(0, 0, 0);
        auto mix = fed::interpolate(a, b, 0.9);
        check(near(mix.at("w").tensor.value(), 1.0, 1e-12),
              "interpolate(0.9) keeps one tenth of the old value");
    }
    {  // fedvc step budget
        auto plan = fed::fedvc_plan({100, 300}, 12);
        check(plan.steps == 8 && near(plan.weights[0], 0.25, 1e-12),
              "fedvc step budget and sampling weights");
    }
    {  // cohort sampling
        auto c1 = fed::sample_clients(3, 42, 6, 2), c2 = fed::sample_clients(3, 42, 6, 2);
        check(c1 == c2 && c1.size() == 2 && c1[0] < c1[1],
              "client sampling is deterministic, sorted and distinct");
    }
    {  // dice identities
        metrics::Mask a(2, 2), b(2, 2);
        a.at(0, 0) = 1;
        b.at(0, 0) = 1;
        b.at(0, 1) = 1;
        const double d = metrics::dice_coefficient(a, b);                 // 2*1/(1+2)
        const double flat = metrics::dice_per_patient({a, a}, {b, b});    // same ratio
        check(near(d, 2.0 / 3.0, 1e-15) && near(flat, d, 1e-15),
              "dice coefficient and per-patient pooling agree");
    }
    {  // t-test invariants
        auto r1 = metrics::t_test_unpaired({1.0, 2.0, 3.0, 4.0}, {2.0, 3.0, 4.0, 5.0});
        auto r2 = metrics::t_test_unpaired({2.0, 3.0, 4.0, 5.0}, {1.0, 2.0, 3.0, 4.0});
        auto eq = metrics::t_test_unpaired({1.0, 2.0}, {1.0, 2.0});
        check(near(r1.p, r2.p, 1e-15) && near(r1.t, -r2.t, 1e-15) && r1.p > 0 &&
                  r1.p < 1 && near(eq.p, 1.0, 1e-15) &&
                  near(metrics::student_t_cdf(0.0, 5.0), 0.5, 1e-15),
              "t-test symmetry and degenerate cases");
    }
    {  // early stopping
        harness::EarlyStopper es{5};
        const double vals[] = {.5, .6, .6, .6, .6, .6, .6};
        int stopped = 0;
        for (int e = 1; e <= 7; ++e)
            if (es.observe(e, vals[e - 1])) {
                stopped = e;
                break;
            }
        check(stopped == 7 && es.best_epoch == 2, "early stopping counts a patience of 5");
    }
    {  // checkpoint round trip
        const auto path =
            std::filesystem::temp_directory_path() / "fseg_selftest.fseg";
        auto s = scalar_set(1.25, -2.5, 3.75);
        harness::save_checkpoint(s, path);
        auto back = harness::load_checkpoint<double>(path);
        std::filesystem::remove(path);
        check(back.same_skeleton(s) && back.at("nm").tensor.value() == -2.5,
              "checkpoint save/load round trip");
    }
    {  // hard-gate mode isolation under one training step
        model::UNetConfig arch;
        arch.channels = {2, 4};
        arch.norm = model::NormKind::HardModeNorm;
        auto net = model::build_unet<double>(arch, 9);
        auto before = net.params.snapshot();

        const int HW = 8 * 8;
        std::vector<double> xv(2 * HW, 0.3), yv(2 * HW, 0.0);
        for (int i = 0; i < HW / 2; ++i) yv[i] = 1.0;
        auto x = Tensor<double>::from_vector({2, 1, 8, 8}, xv);
        auto y = Tensor<double>::from_vector({2, 1, 8, 8}, yv);
        net.params.zero_grads();
        auto loss = metrics::total_loss(net.forward(x, {Modality::CT, Modality::CT}, true), y);
        loss.backward();
        nn::AdamState<double> opt;
        nn::adam_step(net.params, opt);

        bool mri_untouched = true, ct_moved = false;
        for (const auto& e : net.params) {
            if (e.tag.kind != nn::ParamTag::Kind::Normalization) continue;
            const auto& old = before.at(e.name).tensor;
            const std::int64_t C = e.tensor.numel() / 2;  // [mode0 | mode1] rows
            for (std::int64_t i = 0; i < C; ++i)
                if (e.tensor.at(i) != old.at(i)) ct_moved = true;
            for (std::int64_t i = C; i < 2 * C; ++i)
                if (e.tensor.at(i) != old.at(i)) mri_untouched = false;
        }
        check(ct_moved && mri_untouched,
              "CT-only training leaves the MRI normalization mode untouched");
    }

    if (g_failures == 0) {
        std::printf("selftest: all checks passed\n");
        return 0;
    }
    std::printf("selftest: %d check(s) failed\n", g_failures);
    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"federated multi-modal liver segmentation simulator"};
    app.require_subcommand(1);

    std::string config_path, report_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    auto add_seed = [&](CLI::App* cmd) {
        cmd->add_option("--seed", seed, "override the config master seed")
            ->each([&](const std::string&) { seed_set = true; });
    };

    auto* run = app.add_subcommand("run", "train one federated strategy");
    run->add_option("config", config_path, "experiment config (JSON)")->required();
    add_seed(run);

    auto* sweep = app.add_subcommand("sweep", "hyper-parameter grid for model selection");
    sweep->add_option("config", config_path, "experiment config (JSON)")->required();
    add_seed(sweep);

    auto* compare =
        app.add_subcommand("compare", "baselines + all strategies + report");
    compare->add_option("config", config_path, "experiment config (JSON)")->required();
    add_seed(compare);

    auto* selftest = app.add_subcommand("selftest", "fast invariant and oracle checks");

    auto* report = app.add_subcommand("report", "re-render a run directory's report");
    report->add_option("dir", report_dir, "directory with report.json + csv")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (selftest->parsed()) return do_selftest();
        if (report->parsed()) return do_report(report_dir);
        const auto cfg = load_with_overrides(config_path, seed_set, seed);
        if (run->parsed()) return do_run(cfg);
        if (sweep->parsed()) return do_sweep(cfg);
        if (compare->parsed()) return do_compare(cfg);
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
