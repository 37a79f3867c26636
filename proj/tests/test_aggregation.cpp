#include "fedreact/aggregation.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace fedreact;

TEST(WeightedAverage, Examples) {
    EXPECT_EQ(cluster_weighted_average({{Vec{3, 4}, 10.0}}), (Vec{3, 4}));
    EXPECT_EQ(cluster_weighted_average({{Vec{0}, 5.0}, {Vec{2}, 5.0}}), (Vec{1}));
    EXPECT_EQ(cluster_weighted_average({{Vec{4}, 1.0}, {Vec{0}, 3.0}}), (Vec{1}));
    EXPECT_THROW(cluster_weighted_average({}), numeric_error);
    EXPECT_THROW(cluster_weighted_average({{Vec{1}, 0.0}}), numeric_error);
}

TEST(WeightedAverage, EqualMembersExact) {
    const Vec v{0.1, 0.7, 1.0 / 3.0};
    EXPECT_EQ(cluster_weighted_average({{v, 1.0}, {v, 7.0}, {v, 64.0}}), v);
}

TEST(A1, Examples) {
    const Vec t1{1.5, -2.0};
    EXPECT_EQ(a1_update(t1, t1, 1), t1);
    Vec hat{0.0};
    hat = a1_update(hat, Vec{3.0}, 1);
    EXPECT_EQ(hat, (Vec{1.5}));
    hat = a1_update(hat, Vec{3.0}, 2);
    EXPECT_EQ(hat, (Vec{2.0}));
    EXPECT_THROW(a1_update(hat, hat, 0), numeric_error);
}

TEST(A1, RunningMeanInvariant) {
    RngStream rng(1, 0, 0, Purpose::Experiment);
    for (int trial = 0; trial < 20; ++trial) {
        Vec sum(4);
        Vec hat(4);
        for (std::size_t t = 1; t <= 60; ++t) {
            Vec theta(4);
            for (double &v : theta.span()) v = rng.normal();
            sum += theta;
            hat = t == 1 ? theta : a1_update(hat, theta, t - 1);
            for (std::size_t i = 0; i < 4; ++i) ASSERT_NEAR(hat[i], sum[i] / static_cast<double>(t), 1e-12);
        }
    }
}

TEST(A2, Examples) {
    EXPECT_EQ(a2_update(Vec{1}, Vec{2}, 0.0), (Vec{2}));
    EXPECT_EQ(a2_update(Vec{1}, Vec{2}, 1.0), (Vec{1}));
    EXPECT_NEAR(a2_update(Vec{1}, Vec{2}, 0.3)[0], 1.7, 1e-15);
    EXPECT_THROW(a2_update(Vec{1}, Vec{2}, -0.1), numeric_error);
}

TEST(A2, GeometricConvergence) {
    const Vec v{2.0, -1.0};
    for (double a : {0.1, 0.5, 0.9}) {
        Vec hat{10.0, 10.0};
        const double start = norm(hat - v);
        for (int t = 1; t <= 40; ++t) {
            EXPECT_LE(norm(hat - v), std::pow(a, t - 1) * start + 1e-12);
            hat = a2_update(hat, v, a);
        }
    }
}

TEST(ClusterModelState, FoldInitializesThenAverages) {
    ClusterModelState s(2);
    s.fold(1, Vec{0.0}, TemporalRule::A1, 0.0);
    EXPECT_EQ(*s.temporal[1], (Vec{0.0}));
    s.fold(1, Vec{3.0}, TemporalRule::A1, 0.0);
    s.fold(1, Vec{3.0}, TemporalRule::A1, 0.0);
    EXPECT_EQ(*s.temporal[1], (Vec{2.0}));
    EXPECT_EQ(s.updates[1], 3u);
    EXPECT_FALSE(s.temporal[0].has_value());

    s.fold(0, Vec{1.0}, TemporalRule::A2, 0.9);
    s.fold(0, Vec{2.0}, TemporalRule::A2, 0.3);
    EXPECT_NEAR((*s.temporal[0])[0], 1.7, 1e-15);
}

TEST(Broadcast, Examples) {
    const std::vector<int> now{0, 0, 1, 1};
    EXPECT_EQ(broadcast_rule(now, {0, 1, 1, 0}, 5, 5, 2), (std::vector<bool>{true, true}));
    EXPECT_EQ(broadcast_rule(now, now, 2, 5, 2), (std::vector<bool>{true, true}));
    EXPECT_EQ(broadcast_rule(now, {0, 1, 1, 1}, 2, 5, 2), (std::vector<bool>{false, false}));
    EXPECT_EQ(broadcast_rule({0, 0, 1, 2}, {0, 0, 1, 1}, 2, 5, 3), (std::vector<bool>{true, false, false}));
    // no previous round
    EXPECT_EQ(broadcast_rule(now, {}, 1, 5, 2), (std::vector<bool>{false, false}));
    EXPECT_EQ(broadcast_rule(now, {}, 1, 1, 2), (std::vector<bool>{true, true}));

    ClusterAssignment a{3, now, now};
    EXPECT_EQ(broadcast_rule(a, 10, 2), (std::vector<bool>{true, true}));
}

TEST(TrackClusters, KeepsIdsOfUnchangedSets) {
    // canonical relabeling swapped the ids, tracking restores them
    EXPECT_EQ(track_clusters({1, 1, 0, 0}, {0, 0, 1, 1}, 2), (std::vector<int>{1, 1, 0, 0}));
    // largest overlap wins
    EXPECT_EQ(track_clusters({2, 2, 2, 0, 1, 1}, {0, 0, 1, 1, 2, 2}, 3), (std::vector<int>{2, 2, 0, 0, 1, 1}));
    // no history: identity
    EXPECT_EQ(track_clusters({}, {0, 1, 1, 2}, 3), (std::vector<int>{0, 1, 1, 2}));
    // unassigned clients stay unassigned
    EXPECT_EQ(track_clusters({-1, 0, 1}, {-1, 1, 0}, 2), (std::vector<int>{-1, 0, 1}));
    EXPECT_THROW(track_clusters({}, {0, 1, 2}, 2), numeric_error);
}

TEST(TrackClusters, UnchangedSetFiresAfterTracking) {
    RngStream rng(2, 0, 0, Purpose::Experiment);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<int> prev(9), cur(9);
        for (auto &v : prev) v = static_cast<int>(rng.index(3));
        // cluster 0 of prev kept intact, others reshuffled
        for (std::size_t k = 0; k < 9; ++k) cur[k] = prev[k] == 0 ? 0 : 1 + static_cast<int>(rng.index(2));
        const auto tracked = track_clusters(prev, canonical_labels(cur), 3);
        const auto fire = broadcast_rule(tracked, prev, 2, 10, 3);
        if (std::find(prev.begin(), prev.end(), 0) != prev.end()) {
            EXPECT_TRUE(fire[0]);
        }
    }
}
