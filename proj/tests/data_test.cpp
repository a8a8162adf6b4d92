#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fseg/data/synthetic.hpp"
#include "fseg/data/volume.hpp"
#include "fseg/data/volume_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

using fseg::Modality;
using namespace fseg::data;

namespace {

double mean_inside(const Volume& v, bool inside) {
    double acc = 0;
    std::int64_t n = 0;
    for (std::size_t s = 0; s < v.slices.size(); ++s)
        for (std::size_t i = 0; i < v.slices[s].size(); ++i)
            if ((v.masks[s].v[i] != 0) == inside) {
                acc += v.slices[s][i];
                ++n;
            }
    return acc / static_cast<double>(n);
}

// two-sample Kolmogorov-Smirnov distance
double ks_distance(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double d = 0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] <= b[j])
            ++i;
        else
            ++j;
        d = std::max(d, std::fabs(static_cast<double>(i) / a.size() -
                                  static_cast<double>(j) / b.size()));
    }
    return d;
}

}  // namespace

TEST_CASE("generator is deterministic") {
    SyntheticConfig cfg;
    auto a = generate_synthetic_volume(Modality::MRI, 1, 12345, cfg);
    auto b = generate_synthetic_volume(Modality::MRI, 1, 12345, cfg);
    REQUIRE(a.slices.size() == b.slices.size());
    for (std::size_t s = 0; s < a.slices.size(); ++s) {
        CHECK(a.slices[s] == b.slices[s]);
        CHECK(a.masks[s].v == b.masks[s].v);
    }
    // different patients differ
    auto c = generate_synthetic_volume(Modality::MRI, 1, 12346, cfg);
    CHECK(a.slices[0] != c.slices[0]);
}

TEST_CASE("contrast is inverted across modalities") {
    SyntheticConfig cfg;
    for (std::uint64_t seed : {1ull, 7ull, 99ull, 1234ull}) {
        auto ct = generate_synthetic_volume(Modality::CT, 0, seed, cfg);
        CHECK(mean_inside(ct, true) > mean_inside(ct, false));
        auto mri = generate_synthetic_volume(Modality::MRI, 0, seed, cfg);
        CHECK(mean_inside(mri, true) < mean_inside(mri, false));
    }
}

TEST_CASE("masks are nonempty and cover 5-45% of pixels across 100 seeds") {
    SyntheticConfig cfg;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        auto v = generate_synthetic_volume(seed % 2 ? Modality::CT : Modality::MRI,
                                           0, 5000 + seed, cfg);
        for (const auto& m : v.masks) {
            const double frac =
                static_cast<double>(m.area()) / static_cast<double>(m.H * m.W);
            CHECK(frac >= 0.05);
            CHECK(frac <= 0.45);
        }
    }
}

TEST_CASE("MRI variants share geometry but not intensities") {
    SyntheticConfig cfg;
    auto v0 = generate_synthetic_volume(Modality::MRI, 0, 777, cfg);
    auto v1 = generate_synthetic_volume(Modality::MRI, 1, 777, cfg);
    for (std::size_t s = 0; s < v0.masks.size(); ++s)
        CHECK(v0.masks[s].v == v1.masks[s].v);  // same shapes
    CHECK(v0.slices[0] != v1.slices[0]);        // different sequence
}

TEST_CASE("liver-intensity histograms are far apart across modalities") {
    SyntheticConfig cfg;
    std::vector<double> ct_liver, mri_liver;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto ct = generate_synthetic_volume(Modality::CT, 0, 300 + seed, cfg);
        auto mri = generate_synthetic_volume(Modality::MRI, 0, 400 + seed, cfg);
        for (std::size_t s = 0; s < ct.slices.size(); ++s)
            for (std::size_t i = 0; i < ct.slices[s].size(); ++i) {
                if (ct.masks[s].v[i]) ct_liver.push_back(ct.slices[s][i]);
                if (mri.masks[s].v[i]) mri_liver.push_back(mri.slices[s][i]);
            }
    }
    CHECK(ks_distance(ct_liver, mri_liver) > 0.5);
}

TEST_CASE("dixon reconstruction identities") {
    SyntheticConfig cfg;
    auto in = generate_synthetic_volume(Modality::MRI, 0, 42, cfg);

    auto [water_same, fat_same] = dixon_water_fat(in, in);
    for (const auto& sl : fat_same.slices)
        for (double x : sl) CHECK(x == 0.0);

    Volume neg = in;
    for (auto& sl : neg.slices)
        for (double& x : sl) x = -x;
    auto [water_neg, fat_neg] = dixon_water_fat(in, neg);
    for (const auto& sl : water_neg.slices)
        for (double x : sl) CHECK(x == 0.0);

    auto out = generate_synthetic_volume(Modality::MRI, 1, 42, cfg);
    auto [water, fat] = dixon_water_fat(in, out);
    for (std::size_t s = 0; s < in.slices.size(); ++s)
        for (std::size_t i = 0; i < in.slices[s].size(); ++i)
            CHECK(water.slices[s][i] + fat.slices[s][i] ==
                  doctest::Approx(in.slices[s][i]).epsilon(1e-15));
    CHECK(water.masks[0].v == in.masks[0].v);

    Volume small = in;
    small.W = in.W / 2;
    CHECK_THROWS_AS(dixon_water_fat(in, small), std::invalid_argument);
}

TEST_CASE("dataset_norm_stats") {
    Volume v;
    v.H = 2;
    v.W = 2;
    v.slices = {{1, 1, 1, 1}, {3, 3, 3, 3}};
    v.masks = {fseg::metrics::Mask(2, 2), fseg::metrics::Mask(2, 2)};
    auto st = dataset_norm_stats({v});
    CHECK(st.mean == doctest::Approx(2.0));
    CHECK(st.std == 0.0);  // degenerate: constant slices

    CHECK_THROWS_AS(dataset_norm_stats({}), std::invalid_argument);

    // random dataset against a direct two-pass oracle
    SyntheticConfig cfg;
    std::vector<Volume> vols = {generate_synthetic_volume(Modality::CT, 0, 1, cfg),
                                generate_synthetic_volume(Modality::MRI, 0, 2, cfg)};
    auto got = dataset_norm_stats(vols);
    double mean_acc = 0, std_acc = 0;
    int slices = 0;
    for (const auto& vol : vols)
        for (const auto& sl : vol.slices) {
            double mu = 0;
            for (double x : sl) mu += x;
            mu /= static_cast<double>(sl.size());
            double var = 0;
            for (double x : sl) var += (x - mu) * (x - mu);
            var /= static_cast<double>(sl.size());
            mean_acc += mu;
            std_acc += std::sqrt(var);
            ++slices;
        }
    CHECK(std::fabs(got.mean - mean_acc / slices) < 1e-12);
    CHECK(std::fabs(got.std - std_acc / slices) < 1e-12);
}

TEST_CASE("preprocess normalizes, clips and preserves size-matched volumes") {
    SyntheticConfig cfg;
    auto v = generate_synthetic_volume(Modality::CT, 0, 9, cfg);
    auto stats = dataset_norm_stats({v});

    SUBCASE("x = mean everywhere maps to zero") {
        Volume flat = v;
        for (auto& sl : flat.slices)
            for (double& x : sl) x = stats.mean;
        auto out = preprocess(flat, stats, 32, 32);
        for (const auto& sl : out.slices)
            for (double x : sl) CHECK(x == doctest::Approx(0.0).epsilon(1e-12));
    }

    SUBCASE("x = mean + 10*std clips to 3") {
        Volume hot = v;
        for (auto& sl : hot.slices)
            for (double& x : sl) x = stats.mean + 10.0 * stats.std;
        auto out = preprocess(hot, stats, 32, 32);
        for (const auto& sl : out.slices)
            for (double x : sl) CHECK(x == 3.0);
    }

    SUBCASE("no-op resize is the identity, output stays in [-3,3]") {
        auto out = preprocess(v, stats, v.H, v.W);
        for (std::size_t s = 0; s < v.slices.size(); ++s)
            for (std::size_t i = 0; i < v.slices[s].size(); ++i) {
                const double want =
                    std::clamp((v.slices[s][i] - stats.mean) / stats.std, -3.0, 3.0);
                CHECK(std::fabs(out.slices[s][i] - want) < 1e-12);
                CHECK(out.slices[s][i] >= -3.0);
                CHECK(out.slices[s][i] <= 3.0);
            }
        CHECK(out.masks[0].v == v.masks[0].v);
    }

    SUBCASE("downscale then check masks stay binary") {
        auto out = preprocess(v, stats, 16, 16);
        CHECK(out.slices[0].size() == 256);
        for (const auto& m : out.masks) {
            CHECK(m.H == 16);
            for (auto b : m.v) CHECK((b == 0 || b == 1));
        }
    }

    SUBCASE("zero std is rejected") {
        CHECK_THROWS_AS(preprocess(v, NormStats{0.5, 0.0}, 32, 32), std::domain_error);
    }
}

TEST_CASE("split_clients follows 40/20/40 with the floor rule") {
    SyntheticConfig cfg;
    cfg.slices_per_volume = 2;  // keep the test fast
    std::vector<ClientSpec> specs = {
        {"ct10", ModalityMix::CTOnly, 10, 0, -1},
        {"mri5", ModalityMix::MRIOnly, 5, 0, -1},
        {"mixed6", ModalityMix::Mixed, 6, 0, -1},
    };
    auto clients = split_clients(specs, cfg, 2024);
    REQUIRE(clients.size() == 3);

    CHECK(clients[0].train.size() == 4);
    CHECK(clients[0].val.size() == 2);
    CHECK(clients[0].test.size() == 4);

    CHECK(clients[1].train.size() == 2);
    CHECK(clients[1].val.size() == 1);
    CHECK(clients[1].test.size() == 2);

    CHECK(clients[2].train.size() == 2);
    CHECK(clients[2].val.size() == 1);
    CHECK(clients[2].test.size() == 3);

    // no patient appears in two splits
    for (const auto& c : clients) {
        std::set<int> ids;
        for (const auto* split : {&c.train, &c.val, &c.test})
            for (const auto& v : *split) CHECK(ids.insert(v.patient_id).second);
    }

    // modality composition
    for (const auto& v : clients[0].train) CHECK(v.modality == Modality::CT);
    for (const auto& v : clients[1].train) CHECK(v.modality == Modality::MRI);
    bool has_ct = false, has_mri = false;
    for (const auto* split : {&clients[2].train, &clients[2].val, &clients[2].test})
        for (const auto& v : *split) {
            has_ct = has_ct || v.modality == Modality::CT;
            has_mri = has_mri || v.modality == Modality::MRI;
        }
    CHECK(has_ct);
    CHECK(has_mri);

    // determinism
    auto again = split_clients(specs, cfg, 2024);
    for (std::size_t i = 0; i < clients.size(); ++i) {
        REQUIRE(again[i].train.size() == clients[i].train.size());
        for (std::size_t k = 0; k < clients[i].train.size(); ++k) {
            CHECK(again[i].train[k].patient_id == clients[i].train[k].patient_id);
            CHECK(again[i].train[k].slices == clients[i].train[k].slices);
        }
    }
    // a different seed shuffles differently somewhere
    auto other = split_clients(specs, cfg, 2025);
    bool any_diff = false;
    for (std::size_t i = 0; i < clients.size() && !any_diff; ++i)
        for (std::size_t k = 0; k < clients[i].train.size() && !any_diff; ++k)
            any_diff = other[i].train[k].slices != clients[i].train[k].slices;
    CHECK(any_diff);

    std::vector<ClientSpec> tiny = {{"too_small", ModalityMix::CTOnly, 2, 0, -1}};
    CHECK_THROWS_AS(split_clients(tiny, cfg, 1), std::invalid_argument);
}

TEST_CASE("seed groups share anatomy across clients") {
    SyntheticConfig cfg;
    cfg.slices_per_volume = 2;
    std::vector<ClientSpec> specs = {
        {"water", ModalityMix::MRIOnly, 4, 0, 7},
        {"fat", ModalityMix::MRIOnly, 4, 1, 7},
    };
    auto clients = split_clients(specs, cfg, 5);
    REQUIRE(clients[0].train.size() == clients[1].train.size());
    for (std::size_t k = 0; k < clients[0].train.size(); ++k) {
        CHECK(clients[0].train[k].patient_id == clients[1].train[k].patient_id);
        CHECK(clients[0].train[k].masks[0].v == clients[1].train[k].masks[0].v);
        CHECK(clients[0].train[k].slices[0] != clients[1].train[k].slices[0]);
    }
}

TEST_CASE("volume round-trips through the binary file format") {
    SyntheticConfig cfg;
    auto v = generate_synthetic_volume(Modality::MRI, 2, 31337, cfg);
    v.patient_id = 4242;
    const auto path = std::filesystem::temp_directory_path() / "fseg_volume_test.bin";
    save_volume(v, path);
    auto r = load_volume(path);
    std::filesystem::remove(path);

    CHECK(r.patient_id == v.patient_id);
    CHECK(r.modality == v.modality);
    CHECK(r.variant == v.variant);
    CHECK(r.seed == v.seed);
    CHECK(r.H == v.H);
    REQUIRE(r.slices.size() == v.slices.size());
    for (std::size_t s = 0; s < v.slices.size(); ++s) {
        for (std::size_t i = 0; i < v.slices[s].size(); ++i)
            CHECK(std::fabs(r.slices[s][i] - v.slices[s][i]) < 1e-6);  // float32 on disk
        CHECK(r.masks[s].v == v.masks[s].v);
    }
}

TEST_CASE("truncated volume files are rejected") {
    SyntheticConfig cfg;
    auto v = generate_synthetic_volume(Modality::CT, 0, 1, cfg);
    const auto path = std::filesystem::temp_directory_path() / "fseg_volume_trunc.bin";
    save_volume(v, path);
    const auto full = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, full / 2);
    CHECK_THROWS_AS(load_volume(path), std::runtime_error);
    std::filesystem::remove(path);
}
