#pragma once

// Comparison schemes: snapshot clustering with memoryless aggregation
// (SC+MMA), evolutionary clustering with memoryless aggregation (EC+MMA), and
// the self-assignment schemes IFCA (hard) and FLSC (top-τ soft).

#include "fedreact/aggregation.hpp"
#include "fedreact/evocluster.hpp"
#include "fedreact/numerics.hpp"
#include "fedreact/parallel.hpp"
#include "fedreact/taskmodel.hpp"

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

namespace fedreact {

enum class BaselineKind { Snapshot, ScMma, EcMma, Ifca, Flsc };

inline std::string_view to_string(BaselineKind k) {
    switch (k) {
        case BaselineKind::Snapshot: return "snapshot";
        case BaselineKind::ScMma: return "sc-mma";
        case BaselineKind::EcMma: return "ec-mma";
        case BaselineKind::Ifca: return "ifca";
        case BaselineKind::Flsc: return "flsc";
    }
    return "?";
}

struct ClusterModels {
    std::vector<int> membership;  // canonical cluster id per client
    std::vector<Vec> models;      // one per cluster id
};

/// Size-weighted average of the members of every cluster.
inline std::vector<Vec> weighted_cluster_models(const std::vector<Vec> &params, const std::vector<int> &membership,
                                                const std::vector<double> &sizes, std::size_t clusters) {
    if (params.size() != membership.size() || params.size() != sizes.size())
        throw numeric_error("weighted_cluster_models: size mismatch");
    std::vector<std::vector<std::pair<Vec, double>>> members(clusters);
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (membership[k] < 0) continue;
        members.at(static_cast<std::size_t>(membership[k])).emplace_back(params[k], sizes[k]);
    }
    std::vector<Vec> out;
    out.reserve(clusters);
    for (auto &m : members) {
        if (m.empty()) throw numeric_error("weighted_cluster_models: empty cluster");
        out.push_back(cluster_weighted_average(m));
    }
    return out;
}

/// Clusters the current round's cosine matrix only and averages each cluster.
inline ClusterModels snapshot_cluster_round(const std::vector<Vec> &task_params, std::size_t clusters,
                                            const std::vector<double> &sizes) {
    if (clusters < 1 || clusters > task_params.size()) throw numeric_error("snapshot_cluster_round: need 1 <= C <= K");
    ClusterModels r;
    r.membership = agglomerative(similarity_matrix(task_params), clusters);
    r.models = weighted_cluster_models(task_params, r.membership, sizes, clusters);
    return r;
}

inline ClusterModels sc_mma_round(const std::vector<Vec> &task_params, std::size_t clusters,
                                  const std::vector<double> &sizes) {
    return snapshot_cluster_round(task_params, clusters, sizes);
}

struct EvolutionaryModels {
    ClusterModels clusters;
    AffectResult affect;
};

/// AFFECT clustering against the previous smoothed similarity, then
/// memoryless averaging.
inline EvolutionaryModels ec_mma_round(const Mat &prev_smoothed, const std::vector<Vec> &task_params,
                                       std::size_t clusters, const std::vector<double> &sizes, int max_iters = 5) {
    EvolutionaryModels r;
    r.affect = affect_iterate(prev_smoothed, similarity_matrix(task_params), clusters, max_iters);
    r.clusters.membership = r.affect.membership;
    r.clusters.models = weighted_cluster_models(task_params, r.affect.membership, sizes, clusters);
    return r;
}

// ---------------------------------------------------------------------------
// Self-assignment schemes

/// One participating client's encoded training batch.
struct ClientBatch {
    std::size_t client = 0;
    FeatureSet data;
};

struct SelfAssignResult {
    std::vector<TaskModelParams> models;
    std::vector<int> hard;                    // lowest-loss cluster per client (input order)
    std::vector<std::vector<int>> selected;   // the τ lowest-loss clusters, best first
    std::vector<TaskModelParams> local;       // each client's trained update
};

/// Cluster ids ordered by loss on `data`; ties go to the lower id.
inline std::vector<int> rank_clusters(const std::vector<TaskModelParams> &models, const FeatureSet &data) {
    std::vector<double> loss(models.size());
    for (std::size_t c = 0; c < models.size(); ++c) loss[c] = task_loss(models[c], data);
    std::vector<int> order(models.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return loss[static_cast<std::size_t>(a)] < loss[static_cast<std::size_t>(b)];
    });
    return order;
}

/// Each client picks its τ lowest-loss clusters, trains from their uniform
/// mixture, and its update is averaged (by batch size) into every selected
/// cluster. Clusters nobody selected keep their model.
inline SelfAssignResult flsc_round(const std::vector<TaskModelParams> &models, const std::vector<ClientBatch> &clients,
                                   std::size_t tau, const TrainConfig &train, std::uint64_t seed, std::size_t round,
                                   std::size_t workers = 1) {
    if (models.empty()) throw numeric_error("flsc_round: no cluster models");
    if (tau < 1 || tau > models.size()) throw numeric_error("flsc_round: need 1 <= tau <= C");
    const TaskModelParams &shape = models.front();

    SelfAssignResult r;
    r.hard.resize(clients.size());
    r.selected.resize(clients.size());
    r.local.resize(clients.size());
    parallel_for(clients.size(), workers, [&](std::size_t i) {
        const auto order = rank_clusters(models, clients[i].data);
        r.selected[i].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(tau));
        r.hard[i] = order.front();
        TaskModelParams init = models[static_cast<std::size_t>(order.front())];
        if (tau > 1) {
            Vec mix(shape.parameter_count());
            for (int c : r.selected[i]) mix += models[static_cast<std::size_t>(c)].vectorize();
            mix *= 1.0 / static_cast<double>(tau);
            init = TaskModelParams::from_vector(shape.kind, shape.rows(), shape.dim(), mix);
        }
        RngStream rng(seed, clients[i].client, round, Purpose::Train);
        r.local[i] = train_task_model(init, clients[i].data, train, rng);
    });

    r.models = models;
    std::vector<std::vector<std::pair<Vec, double>>> members(models.size());
    for (std::size_t i = 0; i < clients.size(); ++i)
        for (int c : r.selected[i])
            members[static_cast<std::size_t>(c)].emplace_back(r.local[i].vectorize(),
                                                              static_cast<double>(clients[i].data.size()));
    for (std::size_t c = 0; c < models.size(); ++c) {
        if (members[c].empty()) continue;
        r.models[c] =
            TaskModelParams::from_vector(shape.kind, shape.rows(), shape.dim(), cluster_weighted_average(members[c]));
    }
    return r;
}

/// Hard self-assignment: each client joins its lowest-loss cluster.
inline SelfAssignResult ifca_round(const std::vector<TaskModelParams> &models, const std::vector<ClientBatch> &clients,
                                   const TrainConfig &train, std::uint64_t seed, std::size_t round,
                                   std::size_t workers = 1) {
    return flsc_round(models, clients, 1, train, seed, round, workers);
}

/// Seeded Gaussian initialization (scale 0.01) of C cluster models.
inline std::vector<TaskModelParams> random_cluster_models(TaskKind kind, std::size_t classes, std::size_t dim,
                                                          std::size_t clusters, std::uint64_t seed) {
    std::vector<TaskModelParams> out;
    for (std::size_t c = 0; c < clusters; ++c) {
        auto p = TaskModelParams::zeros(kind, classes, dim);
        RngStream rng(seed, c, 0, Purpose::Init);
        for (double &v : p.weights.span()) v = 0.01 * rng.normal();
        for (double &v : p.biases.span()) v = 0.01 * rng.normal();
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace fedreact
