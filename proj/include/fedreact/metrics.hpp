#pragma once

// Rand score, cluster-averaged task metrics, smoothed regret and the
// communication counters, plus the per-round log record.

#include "fedreact/encoder.hpp"
#include "fedreact/numerics.hpp"
#include "fedreact/taskmodel.hpp"

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

namespace fedreact {

/// (TP + TN) / C(K, 2) over unordered client pairs.
inline double rand_score(const std::vector<int> &pred, const std::vector<int> &truth) {
    if (pred.size() != truth.size()) throw numeric_error("rand_score: partitions cover different client sets");
    const std::size_t k = pred.size();
    if (k < 2) return 1.0;
    std::uint64_t agree = 0;
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i + 1; j < k; ++j)
            if ((pred[i] == pred[j]) == (truth[i] == truth[j])) ++agree;
    const auto pairs = static_cast<std::uint64_t>(k) * (k - 1) / 2;
    return static_cast<double>(agree) / static_cast<double>(pairs);
}

/// Mean over clients of their cluster model's accuracy on their own test set.
/// Clients with a negative cluster id are skipped.
inline double cluster_avg_accuracy(const std::vector<TaskModelParams> &cluster_models, const std::vector<int> &membership,
                                   const std::vector<FeatureSet> &test_sets) {
    if (membership.size() != test_sets.size()) throw numeric_error("cluster_avg_accuracy: size mismatch");
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t k = 0; k < membership.size(); ++k) {
        if (membership[k] < 0) continue;
        total += accuracy(cluster_models.at(static_cast<std::size_t>(membership[k])), test_sets[k]);
        ++counted;
    }
    if (counted == 0) throw numeric_error("cluster_avg_accuracy: no assigned clients");
    return total / static_cast<double>(counted);
}

/// Same averaging with RMSE in place of accuracy.
inline double cluster_avg_rmse(const std::vector<TaskModelParams> &cluster_models, const std::vector<int> &membership,
                               const std::vector<FeatureSet> &test_sets) {
    if (membership.size() != test_sets.size()) throw numeric_error("cluster_avg_rmse: size mismatch");
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t k = 0; k < membership.size(); ++k) {
        if (membership[k] < 0) continue;
        total += rmse(cluster_models.at(static_cast<std::size_t>(membership[k])), test_sets[k]);
        ++counted;
    }
    if (counted == 0) throw numeric_error("cluster_avg_rmse: no assigned clients");
    return total / static_cast<double>(counted);
}

/// (1/W) Σ_j γ^j f_{t−j}; `losses` newest first, truncated to w terms.
inline double smoothed_regret(const std::vector<double> &losses, std::size_t w, double gamma) {
    if (losses.empty() || w < 1) throw numeric_error("smoothed_regret: empty history");
    const std::size_t terms = std::min(w, losses.size());
    double s = 0.0;
    double g = 1.0;
    for (std::size_t j = 0; j < terms; ++j) {
        s += g * losses[j];
        g *= gamma;
    }
    return s / window_normalizer(gamma, terms);
}

struct RegretTerms {
    std::vector<double> local;  // S_{t,w,γ,k}
    double global = 0.0;        // client mean
    double grad_sq = 0.0;       // ‖mean_k smoothed gradient‖²
};

/// Local and global smoothed regret from per-client loss histories, and the
/// squared norm of the client-averaged smoothed gradient from their buffers.
inline RegretTerms regret_terms(const std::vector<std::vector<double>> &loss_histories,
                                const std::vector<GradientBuffer> &buffers, std::size_t w, double gamma) {
    if (loss_histories.empty()) throw numeric_error("regret_terms: no clients");
    RegretTerms r;
    for (const auto &h : loss_histories) {
        r.local.push_back(smoothed_regret(h, w, gamma));
        r.global += r.local.back();
    }
    r.global /= static_cast<double>(loss_histories.size());
    if (!buffers.empty()) {
        Mat mean = buffers.front().smoothed(gamma);
        for (std::size_t k = 1; k < buffers.size(); ++k) mean += buffers[k].smoothed(gamma);
        mean *= 1.0 / static_cast<double>(buffers.size());
        r.grad_sq = squared_norm(mean);
    }
    return r;
}

/// Upload/download volume at 8 bytes per parameter.
struct CommCounters {
    std::uint64_t bytes_up = 0;
    std::uint64_t bytes_down = 0;

    static constexpr std::uint64_t bytes_per_parameter = 8;

    void upload(std::size_t clients, std::size_t parameters) {
        bytes_up += static_cast<std::uint64_t>(clients) * parameters * bytes_per_parameter;
    }
    void download(std::size_t clients, std::size_t models_per_client, std::size_t parameters) {
        bytes_down += static_cast<std::uint64_t>(clients) * models_per_client * parameters * bytes_per_parameter;
    }
    CommCounters &operator+=(const CommCounters &o) {
        bytes_up += o.bytes_up;
        bytes_down += o.bytes_down;
        return *this;
    }
};

struct RoundLog {
    std::size_t round = 0;
    double rand_score = 0.0;
    double accuracy = 0.0;  // classification: cluster-averaged accuracy
    double rmse = 0.0;      // regression: cluster-averaged RMSE
    double a_t = 0.0;
    std::vector<std::size_t> cluster_sizes;
    std::size_t participants = 0;
    std::size_t broadcasts = 0;  // clusters whose model was sent this round
    CommCounters comm;
    double regret_grad_sq = 0.0;  // 0 unless tracked
};

/// Column order of rounds.csv.
inline constexpr const char *round_log_header =
    "round,rand_score,accuracy,rmse,a_t,num_clusters,cluster_sizes,participants,broadcasts,bytes_up,bytes_down,"
    "regret_grad_sq";

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_round_log(std::ostream &os, const RoundLog &r) {
    os << r.round << ',' << format_double(r.rand_score) << ',' << format_double(r.accuracy) << ','
       << format_double(r.rmse) << ',' << format_double(r.a_t) << ',' << r.cluster_sizes.size() << ',';
    for (std::size_t i = 0; i < r.cluster_sizes.size(); ++i) os << (i ? ";" : "") << r.cluster_sizes[i];
    os << ',' << r.participants << ',' << r.broadcasts << ',' << r.comm.bytes_up << ',' << r.comm.bytes_down << ','
       << format_double(r.regret_grad_sq) << '\n';
}

}  // namespace fedreact
