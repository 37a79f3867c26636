#include "fedreact/datagen.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

using namespace fedreact;

namespace {

double sum(const LabelDistribution &d) {
    double s = 0.0;
    for (double p : d.probs()) s += p;
    return s;
}

void expect_valid(const LabelDistribution &d) {
    EXPECT_NEAR(sum(d), 1.0, 1e-9);
    for (double p : d.probs()) EXPECT_GE(p, 0.0);
}

}  // namespace

TEST(LabelDistribution, Validation) {
    EXPECT_THROW(LabelDistribution({0.5, 0.6}), numeric_error);
    EXPECT_THROW(LabelDistribution({1.5, -0.5}), numeric_error);
    EXPECT_NO_THROW(LabelDistribution({0.25, 0.75}));
    expect_valid(LabelDistribution::from_weights({1, 1, 1, 1, 1, 1, 1}));
}

TEST(Dirichlet, SingleClusterIsGlobalFrequency) {
    RngStream rng(1, 0, 0, Purpose::Partition);
    const std::vector<double> freq{0.1, 0.2, 0.3, 0.4};
    for (double beta : {0.1, 1.0, 10.0}) {
        const auto parts = dirichlet_partition(4, 1, beta, rng, freq);
        ASSERT_EQ(parts.size(), 1u);
        for (std::size_t l = 0; l < 4; ++l) EXPECT_NEAR(parts[0][l], freq[l], 1e-12);
    }
}

TEST(Dirichlet, LargeConcentrationIsNearUniform) {
    RngStream rng(2, 0, 0, Purpose::Partition);
    const auto parts = dirichlet_partition(10, 3, 1e6, rng);
    for (const auto &d : parts) {
        expect_valid(d);
        for (double p : d.probs()) EXPECT_LT(std::abs(p - 0.1), 0.01);
    }
}

TEST(Dirichlet, SmallConcentrationIsSkewed) {
    const double uniform_entropy = std::log(10.0);
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        RngStream rng(seed, 0, 0, Purpose::Partition);
        const auto parts = dirichlet_partition(10, 3, 0.1, rng);
        for (const auto &d : parts) {
            expect_valid(d);
            EXPECT_LT(d.entropy(), uniform_entropy);
        }
    }
}

TEST(Markov, Examples) {
    RngStream rng(3, 0, 0, Purpose::Drift);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(markov_step(0, 1.0, 0.0, rng), 1);
    int z = 1;
    for (int i = 0; i < 1000; ++i) {
        z = markov_step(z, 0.0, 1.0, rng);
        ASSERT_EQ(z, 1);
    }
    EXPECT_THROW(markov_step(0, 1.5, 0.0, rng), numeric_error);
}

TEST(Markov, StationaryOccupancy) {
    // π₁ = λ₁ / (λ₁ + 1 − λ₂)
    RngStream rng(4, 0, 0, Purpose::Drift);
    const double l1 = 0.85, l2 = 0.15;
    int z = 0;
    std::size_t ones = 0;
    const std::size_t steps = 100000;
    for (std::size_t i = 0; i < steps; ++i) {
        z = markov_step(z, l1, l2, rng);
        ones += static_cast<std::size_t>(z);
    }
    EXPECT_NEAR(static_cast<double>(ones) / steps, l1 / (l1 + 1.0 - l2), 0.02);
}

TEST(Markov, StateOverloadReturnsMixtureComponent) {
    DriftState s;
    s.z = {0};
    s.params.lambda1 = 1.0;
    s.params.lambda2 = 0.0;
    const auto major = LabelDistribution::point_mass(3, 0);
    const auto minor = LabelDistribution::point_mass(3, 2);
    RngStream rng(1, 0, 0, Purpose::Drift);
    EXPECT_EQ(&markov_step(s, 0, major, minor, rng), &minor);
    EXPECT_EQ(&markov_step(s, 0, major, minor, rng), &major);
}

TEST(Simplex, Examples) {
    RngStream rng(5, 0, 0, Purpose::Simplex);
    const auto point = simplex_resample({4}, 0.0, {}, 10, rng);
    EXPECT_EQ(point[4], 1.0);
    for (int i = 0; i < 1000; ++i) {
        const auto d = simplex_resample({1, 2, 3}, 0.0, {{4, 5}, {6}}, 10, rng);
        expect_valid(d);
        for (int l : d.support()) EXPECT_TRUE(l >= 1 && l <= 3);
    }
}

TEST(Simplex, CoordinateMeans) {
    RngStream rng(6, 0, 0, Purpose::Simplex);
    std::vector<double> mean(3, 0.0);
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) {
        const auto d = uniform_simplex({0, 1, 2}, 3, rng);
        for (std::size_t l = 0; l < 3; ++l) mean[l] += d[l] / draws;
    }
    for (double m : mean) EXPECT_NEAR(m, 1.0 / 3.0, 0.01);
}

TEST(Simplex, AdoptionUsesOtherSupport) {
    RngStream rng(7, 0, 0, Purpose::Adopt);
    for (int i = 0; i < 200; ++i) {
        const auto d = simplex_resample({0, 1}, 1.0, {{5, 6}}, 10, rng);
        for (int l : d.support()) EXPECT_TRUE(l == 5 || l == 6);
    }
}

TEST(Migrate, Examples) {
    RngStream rng(8, 0, 0, Purpose::Migrate);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(migrate_step(1, 3, 0.0, rng), 1);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(migrate_step(0, 2, 1.0, rng), 1);
    for (int i = 0; i < 100; ++i) EXPECT_NE(migrate_step(2, 3, 1.0, rng), 2);
    EXPECT_THROW(migrate_step(0, 1, 0.5, rng), numeric_error);
}

TEST(Migrate, ExpectedCount) {
    // each client's first migration happens by round 200 w.p. 1 − 0.995^200
    std::size_t migrated = 0;
    for (std::size_t k = 0; k < 100; ++k) {
        int c = 0;
        bool moved = false;
        for (std::size_t t = 1; t <= 200; ++t) {
            RngStream rng(9, k, t, Purpose::Migrate);
            c = migrate_step(c, 3, 0.005, rng);
            moved = moved || c != 0;
        }
        migrated += moved ? 1 : 0;
    }
    const double expected = 100.0 * (1.0 - std::pow(0.995, 200));
    // binomial sd ≈ 4.8
    EXPECT_NEAR(static_cast<double>(migrated), expected, 15.0);
}

TEST(SampleBatch, Examples) {
    ClusterSpec spec;
    spec.prototypes = {Mat(2, 3, {1, 2, 3, 4, 5, 6}), Mat(2, 3, {-1, 0, 1, 0, 1, 0})};
    spec.noise_scale = 0.0;
    RngStream rng(10, 0, 0, Purpose::Batch);
    const auto batch = sample_batch(spec, LabelDistribution::point_mass(2, 1), 64, rng);
    ASSERT_EQ(batch.size(), 64u);
    for (const auto &s : batch) {
        EXPECT_EQ(s.label, 1);
        EXPECT_EQ(s.x.values(), spec.prototypes[1].values());
    }
    EXPECT_THROW(sample_batch(spec, LabelDistribution::uniform(2), 0, rng), numeric_error);
}

TEST(Membership, InitialBlocksAndSupports) {
    EXPECT_EQ(initial_membership(10, 3), (std::vector<int>{0, 0, 0, 1, 1, 1, 2, 2, 2, 2}));
    const auto s = disjoint_supports(10, 3);
    EXPECT_EQ(s[0], (std::vector<int>{0, 1, 2}));
    EXPECT_EQ(s[1], (std::vector<int>{3, 4, 5}));
    EXPECT_EQ(s[2], (std::vector<int>{6, 7, 8, 9}));
}

TEST(DataStream, DeterministicAcrossInstances) {
    for (Strategy st : {Strategy::Stationary, Strategy::S1, Strategy::S2, Strategy::S3}) {
        DataConfig cfg;
        cfg.strategy = st;
        cfg.seed = 17;
        cfg.clients = 9;
        DataStream a(cfg), b(cfg);
        for (std::size_t t = 1; t <= 5; ++t) {
            a.advance_to(t);
            b.advance_to(t);
            // draw in opposite client order
            for (std::size_t k = 0; k < cfg.clients; ++k) {
                const auto x = a.batch(k, 8);
                const auto y = b.batch(cfg.clients - 1 - k, 8);
                const auto y2 = b.batch(k, 8);
                ASSERT_EQ(x.size(), y2.size());
                for (std::size_t i = 0; i < x.size(); ++i) {
                    EXPECT_EQ(x[i].x, y2[i].x);
                    EXPECT_EQ(x[i].label, y2[i].label);
                }
                (void)y;
            }
            EXPECT_EQ(a.truth(), b.truth());
        }
    }
}

TEST(DataStream, DistributionsStayValid) {
    for (Strategy st : {Strategy::S1, Strategy::S2, Strategy::S3}) {
        DataConfig cfg;
        cfg.strategy = st;
        DataStream s(cfg);
        for (std::size_t t = 1; t <= 30; ++t) {
            s.advance_to(t);
            for (std::size_t k = 0; k < cfg.clients; ++k) expect_valid(s.client_distribution(k));
        }
    }
}

TEST(DataStream, StrategyTwoWithoutAdoptionStaysInSupport) {
    DataConfig cfg;
    cfg.strategy = Strategy::S2;
    cfg.drift.adopt_prob = 0.0;
    DataStream s(cfg);
    const auto supports = disjoint_supports(cfg.num_labels, cfg.clusters);
    for (std::size_t t = 1; t <= 20; ++t) {
        s.advance_to(t);
        for (std::size_t k = 0; k < cfg.clients; ++k) {
            const auto &sup = supports[static_cast<std::size_t>(s.truth()[k])];
            for (const auto &smp : s.batch(k, 16))
                EXPECT_TRUE(std::find(sup.begin(), sup.end(), smp.label) != sup.end());
        }
    }
}

TEST(DataStream, StrategyOneOccupancy) {
    DataConfig cfg;
    cfg.clients = 3;
    cfg.clusters = 3;
    DataStream s(cfg);
    std::size_t ones = 0, total = 0;
    for (std::size_t t = 1; t <= 20000; ++t) {
        s.advance_to(t);
        for (int z : s.drift_state().z) {
            ones += static_cast<std::size_t>(z);
            ++total;
        }
    }
    EXPECT_NEAR(static_cast<double>(ones) / total, 0.5, 0.02);
}

TEST(DataStream, StationaryKeepsMembership) {
    DataConfig cfg;
    cfg.strategy = Strategy::Stationary;
    DataStream s(cfg);
    const auto initial = s.truth();
    s.advance_to(50);
    EXPECT_EQ(s.truth(), initial);
}

TEST(DataStream, NoiseFreeSamplesArePrototypes) {
    DataConfig cfg;
    cfg.noise_scale = 0.0;
    DataStream s(cfg);
    s.advance_to(1);
    for (const auto &smp : s.batch(4, 10)) {
        const auto c = static_cast<std::size_t>(s.truth()[4]);
        EXPECT_EQ(smp.x.values(), s.clusters()[c].prototypes[static_cast<std::size_t>(smp.label)].values());
    }
}

TEST(DataStream, CsvExport) {
    DataConfig cfg;
    cfg.channels = 2;
    cfg.length = 3;
    DataStream s(cfg);
    s.advance_to(1);
    std::ostringstream os;
    write_batch_csv_header(os, cfg.input_dim());
    write_batch_csv(os, s.batch(0, 4), 0, 1);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "x0,x1,x2,x3,x4,x5,label,target,client,round");
    std::size_t rows = 0;
    while (std::getline(is, line)) {
        ++rows;
        EXPECT_EQ(std::count(line.begin(), line.end(), ','), 9);
    }
    EXPECT_EQ(rows, 4u);
}
