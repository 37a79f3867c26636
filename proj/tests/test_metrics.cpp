#include "fedreact/metrics.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace fedreact;

namespace {

// Independent pair enumeration with explicit TP/TN/FP/FN counts.
double brute_force_rand(const std::vector<int> &a, const std::vector<int> &b) {
    std::size_t tp = 0, tn = 0, other = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a.size(); ++j) {
            if (j <= i) continue;
            const bool same_a = a[i] == a[j];
            const bool same_b = b[i] == b[j];
            if (same_a && same_b) ++tp;
            else if (!same_a && !same_b) ++tn;
            else ++other;
        }
    return static_cast<double>(tp + tn) / static_cast<double>(tp + tn + other);
}

}  // namespace

TEST(Rand, Examples) {
    EXPECT_EQ(rand_score({0, 1, 1, 2}, {0, 1, 1, 2}), 1.0);
    EXPECT_DOUBLE_EQ(rand_score({1, 1, 2}, {1, 2, 2}), 1.0 / 3.0);
    EXPECT_EQ(rand_score({0, 1, 2}, {0, 0, 0}), 0.0);
    EXPECT_THROW(rand_score({0, 1}, {0}), numeric_error);
}

TEST(Rand, MatchesBruteForce) {
    RngStream rng(1, 0, 0, Purpose::Experiment);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t k = 2 + rng.index(11);
        std::vector<int> a(k), b(k);
        for (auto &v : a) v = static_cast<int>(rng.index(1 + rng.index(k)));
        for (auto &v : b) v = static_cast<int>(rng.index(1 + rng.index(k)));
        EXPECT_EQ(rand_score(a, b), brute_force_rand(a, b));
    }
}

TEST(Rand, SymmetricAndLabelInvariant) {
    RngStream rng(2, 0, 0, Purpose::Experiment);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<int> a(10), b(10);
        for (auto &v : a) v = static_cast<int>(rng.index(4));
        for (auto &v : b) v = static_cast<int>(rng.index(4));
        EXPECT_EQ(rand_score(a, b), rand_score(b, a));
        std::vector<int> relabeled(a);
        for (auto &v : relabeled) v = 7 - 2 * v;
        EXPECT_EQ(rand_score(relabeled, b), rand_score(a, b));
        const double r = rand_score(a, b);
        EXPECT_GE(r, 0.0);
        EXPECT_LE(r, 1.0);
    }
}

TEST(ClusterAccuracy, Examples) {
    auto good = TaskModelParams::zeros(TaskKind::Classification, 2, 1);
    good.weights(1, 0) = 1.0;
    const FeatureSet clean{{Vec{1.0}, Vec{-1.0}}, {1, 0}, {}};
    const FeatureSet half{{Vec{1.0}, Vec{1.0}}, {1, 0}, {}};
    EXPECT_EQ(cluster_avg_accuracy({good}, {0, 0}, {clean, clean}), 1.0);
    EXPECT_EQ(cluster_avg_accuracy({good}, {0, 0}, {clean, half}), 0.75);
    // unassigned clients are skipped
    EXPECT_EQ(cluster_avg_accuracy({good}, {0, -1}, {clean, half}), 1.0);
}

TEST(ClusterAccuracy, MatchesDirectLoop) {
    RngStream rng(3, 0, 0, Purpose::Experiment);
    std::vector<TaskModelParams> models;
    for (int c = 0; c < 3; ++c) {
        auto p = TaskModelParams::zeros(TaskKind::Classification, 4, 3);
        for (double &v : p.weights.span()) v = rng.normal();
        models.push_back(p);
    }
    std::vector<int> membership;
    std::vector<FeatureSet> tests;
    for (int k = 0; k < 12; ++k) {
        membership.push_back(static_cast<int>(rng.index(3)));
        FeatureSet fs;
        for (int i = 0; i < 9; ++i) {
            fs.z.push_back(Vec{rng.normal(), rng.normal(), rng.normal()});
            fs.labels.push_back(static_cast<int>(rng.index(4)));
        }
        tests.push_back(fs);
    }
    double oracle = 0.0;
    for (std::size_t k = 0; k < 12; ++k) {
        const auto &m = models[static_cast<std::size_t>(membership[k])];
        double correct = 0.0;
        for (std::size_t i = 0; i < tests[k].size(); ++i) {
            int best = 0;
            for (int c = 1; c < 4; ++c)
                if (score(m, static_cast<std::size_t>(c), tests[k].z[i].span()) >
                    score(m, static_cast<std::size_t>(best), tests[k].z[i].span()))
                    best = c;
            correct += best == tests[k].labels[i] ? 1.0 : 0.0;
        }
        oracle += correct / static_cast<double>(tests[k].size()) / 12.0;
    }
    EXPECT_NEAR(cluster_avg_accuracy(models, membership, tests), oracle, 1e-12);
}

TEST(Regret, Examples) {
    EXPECT_NEAR(smoothed_regret({2.5, 2.5, 2.5, 2.5}, 3, 0.7), 2.5, 1e-15);
    EXPECT_EQ(smoothed_regret({4.0, 1.0, 9.0}, 1, 0.5), 4.0);
    EXPECT_NEAR(smoothed_regret({1.0, 2.0}, 2, 0.5), 4.0 / 3.0, 1e-15);
    // γ = 1: trailing mean
    EXPECT_NEAR(smoothed_regret({1.0, 2.0, 6.0, 100.0}, 3, 1.0), 3.0, 1e-15);
    EXPECT_THROW(smoothed_regret({}, 2, 0.5), numeric_error);
}

TEST(Regret, Terms) {
    GradientBuffer a(2), b(2);
    a.push(1, Mat(1, 1, {1.0}));
    b.push(1, Mat(1, 1, {3.0}));
    const auto r = regret_terms({{1.0, 2.0}, {3.0}}, {a, b}, 2, 0.5);
    EXPECT_NEAR(r.local[0], 4.0 / 3.0, 1e-15);
    EXPECT_EQ(r.local[1], 3.0);
    EXPECT_NEAR(r.global, (4.0 / 3.0 + 3.0) / 2.0, 1e-15);
    EXPECT_EQ(r.grad_sq, 4.0);
}

TEST(Comm, Counters) {
    CommCounters fed, ifca;
    fed.upload(30, 100);
    fed.download(30, 1, 100);
    ifca.upload(30, 100);
    ifca.download(30, 3, 100);
    EXPECT_EQ(fed.bytes_down, 30u * 100u * 8u);
    EXPECT_EQ(ifca.bytes_down, 3 * fed.bytes_down);
    CommCounters third;
    third.download(10, 1, 100);
    EXPECT_EQ(3 * third.bytes_down, fed.bytes_down);
}

TEST(RoundLog, CsvRow) {
    RoundLog r;
    r.round = 3;
    r.rand_score = 0.5;
    r.accuracy = 0.25;
    r.cluster_sizes = {4, 5};
    r.participants = 9;
    r.comm.bytes_up = 80;
    std::ostringstream os;
    write_round_log(os, r);
    EXPECT_EQ(os.str(), "3,0.5,0.25,0,0,2,4;5,9,0,80,0,0\n");
    EXPECT_EQ(std::string(round_log_header).find("round,"), 0u);
}
