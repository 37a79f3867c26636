#pragma once

// Cluster-wise aggregation of task models and the two temporal combination
// rules: running mean (A1) and forgetting-factor blend (A2).

#include "fedreact/evocluster.hpp"
#include "fedreact/numerics.hpp"

#include <algorithm>
#include <cstddef>
#include <optional>
#include <tuple>
#include <utility>
#include <vector>

namespace fedreact {

enum class TemporalRule { A1, A2 };

/// Sample-size weighted mean Σ (m_k / Σm) θ_k.
inline Vec cluster_weighted_average(const std::vector<std::pair<Vec, double>> &members) {
    if (members.empty()) throw numeric_error("cluster_weighted_average: no members");
    double total = 0.0;
    for (const auto &[theta, m] : members) {
        if (m < 0.0) throw numeric_error("cluster_weighted_average: negative sample count");
        if (theta.size() != members.front().first.size()) throw numeric_error("cluster_weighted_average: size mismatch");
        total += m;
    }
    if (!(total > 0.0)) throw numeric_error("cluster_weighted_average: zero total sample count");
    // identical members come back bit-for-bit
    bool all_equal = true;
    for (const auto &[theta, m] : members)
        if (!(theta == members.front().first)) {
            all_equal = false;
            break;
        }
    if (all_equal) return members.front().first;
    Vec out(members.front().first.size());
    for (const auto &[theta, m] : members) out.axpy(m / total, theta);
    return out;
}

/// θ̂ ← (n/(n+1)) θ̂ + (1/(n+1)) θ, where θ̂ is the mean of the n estimates seen so far.
inline Vec a1_update(const Vec &hat, const Vec &current, std::size_t n) {
    if (n < 1) throw numeric_error("a1_update: round counter must be >= 1");
    const double t = static_cast<double>(n);
    Vec out = (t / (t + 1.0)) * hat;
    out.axpy(1.0 / (t + 1.0), current);
    return out;
}

/// θ̂ ← a θ̂ + (1 − a) θ
inline Vec a2_update(const Vec &hat, const Vec &current, double a) {
    if (!(a >= 0.0 && a <= 1.0)) throw numeric_error("a2_update: forgetting factor outside [0,1]");
    Vec out = a * hat;
    out.axpy(1.0 - a, current);
    return out;
}

/// Per-cluster round estimate, temporal estimate and number of temporal updates.
struct ClusterModelState {
    std::vector<std::optional<Vec>> current;
    std::vector<std::optional<Vec>> temporal;
    std::vector<std::size_t> updates;

    explicit ClusterModelState(std::size_t clusters = 0)
        : current(clusters), temporal(clusters), updates(clusters, 0) {}

    [[nodiscard]] std::size_t size() const noexcept { return current.size(); }

    /// Folds this round's estimate of cluster c into its temporal estimate.
    /// The first fold initializes θ̂ = θ.
    void fold(std::size_t c, const Vec &round_estimate, TemporalRule rule, double a) {
        if (!temporal.at(c)) {
            temporal[c] = round_estimate;
        } else if (rule == TemporalRule::A1) {
            temporal[c] = a1_update(*temporal[c], round_estimate, updates[c]);
        } else {
            temporal[c] = a2_update(*temporal[c], round_estimate, a);
        }
        ++updates[c];
    }
};

/// Sorted member list of every cluster id (ids ≥ 0).
inline std::vector<std::vector<std::size_t>> member_sets(const std::vector<int> &membership, std::size_t clusters) {
    std::vector<std::vector<std::size_t>> sets(clusters);
    for (std::size_t k = 0; k < membership.size(); ++k)
        if (membership[k] >= 0 && static_cast<std::size_t>(membership[k]) < clusters)
            sets[static_cast<std::size_t>(membership[k])].push_back(k);
    return sets;
}

/// Cluster c broadcasts iff t ≥ T_task or its member set equals cluster c's
/// member set in the previous round. Both memberships must use the same ids
/// (see `track_clusters`).
inline std::vector<bool> broadcast_rule(const std::vector<int> &membership, const std::vector<int> &previous,
                                        std::size_t t, std::size_t t_task, std::size_t clusters) {
    std::vector<bool> fire(clusters, t >= t_task);
    if (t >= t_task) return fire;
    if (previous.size() != membership.size()) return fire;
    const auto now = member_sets(membership, clusters);
    const auto before = member_sets(previous, clusters);
    for (std::size_t c = 0; c < clusters; ++c) fire[c] = !now[c].empty() && now[c] == before[c];
    return fire;
}

inline std::vector<bool> broadcast_rule(const ClusterAssignment &assignment, std::size_t t_task, std::size_t clusters) {
    return broadcast_rule(assignment.membership, assignment.previous, assignment.round, t_task, clusters);
}

/// Relabels `current` so cluster ids persist across rounds: current clusters
/// are paired greedily with previous ids by largest member overlap (ties to
/// the lowest current then previous id); unpaired clusters take the smallest
/// free id. An unchanged member set always keeps its id.
inline std::vector<int> track_clusters(const std::vector<int> &previous, const std::vector<int> &current,
                                       std::size_t id_space) {
    int cur_hi = -1;
    for (int c : current) cur_hi = std::max(cur_hi, c);
    const auto nc = static_cast<std::size_t>(cur_hi + 1);
    if (nc > id_space) throw numeric_error("track_clusters: more clusters than ids");
    std::vector<int> mapping(nc, -1);
    std::vector<bool> used(id_space, false);

    if (previous.size() == current.size()) {
        std::vector<std::vector<std::size_t>> overlap(nc, std::vector<std::size_t>(id_space, 0));
        for (std::size_t k = 0; k < current.size(); ++k) {
            if (current[k] < 0 || previous[k] < 0 || static_cast<std::size_t>(previous[k]) >= id_space) continue;
            ++overlap[static_cast<std::size_t>(current[k])][static_cast<std::size_t>(previous[k])];
        }
        std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> pairs;  // (−overlap via sort), c, p
        for (std::size_t c = 0; c < nc; ++c)
            for (std::size_t p = 0; p < id_space; ++p)
                if (overlap[c][p] > 0) pairs.emplace_back(overlap[c][p], c, p);
        std::sort(pairs.begin(), pairs.end(), [](const auto &x, const auto &y) {
            if (std::get<0>(x) != std::get<0>(y)) return std::get<0>(x) > std::get<0>(y);
            if (std::get<1>(x) != std::get<1>(y)) return std::get<1>(x) < std::get<1>(y);
            return std::get<2>(x) < std::get<2>(y);
        });
        for (const auto &[ov, c, p] : pairs) {
            if (mapping[c] >= 0 || used[p]) continue;
            mapping[c] = static_cast<int>(p);
            used[p] = true;
        }
    }
    for (std::size_t c = 0; c < nc; ++c) {
        if (mapping[c] >= 0) continue;
        for (std::size_t p = 0; p < id_space; ++p)
            if (!used[p]) {
                mapping[c] = static_cast<int>(p);
                used[p] = true;
                break;
            }
    }
    std::vector<int> out(current.size(), -1);
    for (std::size_t k = 0; k < current.size(); ++k)
        if (current[k] >= 0) out[k] = mapping[static_cast<std::size_t>(current[k])];
    return out;
}

}  // namespace fedreact
