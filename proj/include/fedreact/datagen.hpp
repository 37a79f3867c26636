#pragma once

// Synthetic clustered, labeled multivariate time-series streams.
//
// Every cluster owns one mean pattern (d channels × T steps) per label. A
// client's batch at round t draws labels from its current label distribution
// and adds Gaussian noise to the matching pattern. Non-stationarity comes from
// one of three drift strategies:
//   S1  per-cluster two-state Markov switch between a major and a minor
//       Dirichlet label distribution (overlapping supports)
//   S2  per-round uniform simplex draw over disjoint per-cluster supports, with
//       clients occasionally borrowing another cluster's distribution for one
//       round
//   S3  S2 plus permanent client migration between clusters

#include "fedreact/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace fedreact {

enum class Strategy { Stationary, S1, S2, S3 };

inline std::string_view to_string(Strategy s) {
    switch (s) {
        case Strategy::Stationary: return "stationary";
        case Strategy::S1: return "s1";
        case Strategy::S2: return "s2";
        case Strategy::S3: return "s3";
    }
    return "?";
}

inline std::optional<Strategy> parse_strategy(std::string_view s) {
    if (s == "stationary") return Strategy::Stationary;
    if (s == "s1") return Strategy::S1;
    if (s == "s2") return Strategy::S2;
    if (s == "s3") return Strategy::S3;
    return std::nullopt;
}

/// Probability vector over class ids.
class LabelDistribution {
public:
    LabelDistribution() = default;
    explicit LabelDistribution(std::vector<double> probs) : probs_(std::move(probs)) {
        double total = 0.0;
        for (double p : probs_) {
            if (!(p >= 0.0) || !std::isfinite(p)) throw numeric_error("LabelDistribution: negative or non-finite");
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-9) throw numeric_error("LabelDistribution: does not sum to 1");
    }

    static LabelDistribution point_mass(std::size_t num_labels, std::size_t label) {
        std::vector<double> p(num_labels, 0.0);
        p.at(label) = 1.0;
        return LabelDistribution(std::move(p));
    }
    static LabelDistribution uniform(std::size_t num_labels) {
        return LabelDistribution(std::vector<double>(num_labels, 1.0 / static_cast<double>(num_labels)));
    }
    /// Renormalizes nonnegative weights; all-zero weights give the uniform distribution.
    static LabelDistribution from_weights(std::vector<double> w) {
        double total = 0.0;
        for (double v : w) total += v;
        if (!(total > 0.0)) return uniform(w.size());
        for (double &v : w) v /= total;
        // absorb rounding so the sum check holds tightly
        double s = 0.0;
        for (double v : w) s += v;
        std::size_t big = 0;
        for (std::size_t i = 1; i < w.size(); ++i)
            if (w[i] > w[big]) big = i;
        w[big] += 1.0 - s;
        if (w[big] < 0.0) w[big] = 0.0;
        return LabelDistribution(std::move(w));
    }

    [[nodiscard]] std::size_t num_labels() const noexcept { return probs_.size(); }
    [[nodiscard]] const std::vector<double> &probs() const noexcept { return probs_; }
    double operator[](std::size_t i) const noexcept { return probs_[i]; }

    [[nodiscard]] std::vector<int> support() const {
        std::vector<int> s;
        for (std::size_t i = 0; i < probs_.size(); ++i)
            if (probs_[i] > 0.0) s.push_back(static_cast<int>(i));
        return s;
    }

    int sample(RngStream &rng) const {
        const double u = rng.uniform();
        double acc = 0.0;
        int last_positive = -1;
        for (std::size_t i = 0; i < probs_.size(); ++i) {
            if (probs_[i] <= 0.0) continue;
            last_positive = static_cast<int>(i);
            acc += probs_[i];
            if (u < acc) return static_cast<int>(i);
        }
        if (last_positive < 0) throw numeric_error("LabelDistribution: empty support");
        return last_positive;
    }

    [[nodiscard]] double entropy() const {
        double h = 0.0;
        for (double p : probs_)
            if (p > 0.0) h -= p * std::log(p);
        return h;
    }

private:
    std::vector<double> probs_;
};

/// Per-cluster mean patterns, one d×T matrix per label.
struct ClusterSpec {
    int id = 0;
    std::vector<int> label_support;
    std::vector<Mat> prototypes;
    double noise_scale = 0.0;
};

struct DriftParams {
    double lambda1 = 0.85;
    double lambda2 = 0.15;
    double adopt_prob = 0.05;
    double migrate_prob = 0.005;
};

/// Per-cluster latent Markov bits and per-client current cluster ids.
struct DriftState {
    std::vector<int> z;
    std::vector<int> client_cluster;
    DriftParams params;
};

struct Sample {
    Vec x;  // flattened d×T, channel-major
    int label = 0;
    double target = 0.0;
};
using Batch = std::vector<Sample>;

// ---------------------------------------------------------------------------
// Drift and partition primitives

/// Allocates each label's mass across `clusters` with a symmetric
/// Dirichlet(β) draw, then renormalizes per cluster. `global_freq` defaults to
/// uniform label frequencies.
inline std::vector<LabelDistribution> dirichlet_partition(std::size_t num_labels, std::size_t clusters, double beta,
                                                          RngStream &rng,
                                                          std::vector<double> global_freq = {}) {
    if (!(beta > 0.0)) throw numeric_error("dirichlet_partition: beta must be positive");
    if (clusters < 1 || num_labels < 1) throw numeric_error("dirichlet_partition: need labels and clusters");
    if (global_freq.empty()) global_freq.assign(num_labels, 1.0 / static_cast<double>(num_labels));
    if (global_freq.size() != num_labels) throw numeric_error("dirichlet_partition: frequency size mismatch");

    std::vector<std::vector<double>> mass(clusters, std::vector<double>(num_labels, 0.0));
    for (std::size_t l = 0; l < num_labels; ++l) {
        std::vector<double> g(clusters);
        double total = 0.0;
        for (auto &v : g) {
            v = rng.gamma(beta);
            total += v;
        }
        if (!(total > 0.0)) {
            // every gamma draw underflowed; the Dirichlet limit is a vertex
            std::fill(g.begin(), g.end(), 0.0);
            g[rng.index(clusters)] = 1.0;
            total = 1.0;
        }
        for (std::size_t c = 0; c < clusters; ++c) mass[c][l] = global_freq[l] * g[c] / total;
    }
    std::vector<LabelDistribution> out;
    out.reserve(clusters);
    for (auto &m : mass) out.push_back(LabelDistribution::from_weights(std::move(m)));
    return out;
}

/// Two-state Markov transition: Pr(1|0) = λ₁, Pr(1|1) = λ₂.
inline int markov_step(int z, double lambda1, double lambda2, RngStream &rng) {
    if (lambda1 < 0.0 || lambda1 > 1.0 || lambda2 < 0.0 || lambda2 > 1.0)
        throw numeric_error("markov_step: transition probabilities must lie in [0,1]");
    const double p_one = (z == 0) ? lambda1 : lambda2;
    return rng.bernoulli(p_one) ? 1 : 0;
}

/// Advances cluster `c`'s latent bit and returns the resulting mixture
/// (1 − z)·p_major + z·p_minor.
inline const LabelDistribution &markov_step(DriftState &state, std::size_t c, const LabelDistribution &major,
                                            const LabelDistribution &minor, RngStream &rng) {
    state.z.at(c) = markov_step(state.z[c], state.params.lambda1, state.params.lambda2, rng);
    return state.z[c] == 0 ? major : minor;
}

/// Uniform draw from the probability simplex over `support` (normalized unit
/// exponentials).
inline LabelDistribution uniform_simplex(const std::vector<int> &support, std::size_t num_labels, RngStream &rng) {
    if (support.empty()) throw numeric_error("uniform_simplex: empty support");
    std::vector<double> w(num_labels, 0.0);
    double total = 0.0;
    for (int l : support) {
        const double e = rng.exponential();
        w.at(static_cast<std::size_t>(l)) += e;
        total += e;
    }
    if (!(total > 0.0)) return LabelDistribution::point_mass(num_labels, static_cast<std::size_t>(support.front()));
    return LabelDistribution::from_weights(std::move(w));
}

/// With probability 1 − adopt_prob a uniform simplex draw over the own
/// support, otherwise over a uniformly chosen other cluster's support.
inline LabelDistribution simplex_resample(const std::vector<int> &support, double adopt_prob,
                                          const std::vector<std::vector<int>> &other_supports, std::size_t num_labels,
                                          RngStream &rng) {
    if (support.empty()) throw numeric_error("simplex_resample: empty support");
    if (adopt_prob > 0.0 && !other_supports.empty() && rng.bernoulli(adopt_prob)) {
        const auto &other = other_supports[rng.index(other_supports.size())];
        return uniform_simplex(other, num_labels, rng);
    }
    return uniform_simplex(support, num_labels, rng);
}

/// With probability p the client moves permanently to a uniformly chosen other cluster.
inline int migrate_step(int current, std::size_t clusters, double p, RngStream &rng) {
    if (clusters < 2) throw numeric_error("migrate_step: need at least two clusters");
    if (!rng.bernoulli(p)) return current;
    const auto offset = 1 + rng.index(clusters - 1);
    return static_cast<int>((static_cast<std::size_t>(current) + offset) % clusters);
}

inline int migrate_step(DriftState &state, std::size_t client, RngStream &rng) {
    const std::size_t clusters = state.z.size();
    state.client_cluster.at(client) =
        migrate_step(state.client_cluster[client], clusters, state.params.migrate_prob, rng);
    return state.client_cluster[client];
}

/// Draws `size` labeled samples: label ~ dist, x = prototype(label) + noise.
inline Batch sample_batch(const ClusterSpec &spec, const LabelDistribution &dist, std::size_t size, RngStream &rng,
                          const Vec *regression_direction = nullptr) {
    if (size < 1) throw numeric_error("sample_batch: size must be at least 1");
    if (dist.support().empty()) throw numeric_error("sample_batch: empty label support");
    Batch batch;
    batch.reserve(size);
    for (std::size_t i = 0; i < size; ++i) {
        const int label = dist.sample(rng);
        const Mat &proto = spec.prototypes.at(static_cast<std::size_t>(label));
        std::vector<double> x(proto.values());
        if (spec.noise_scale > 0.0) {
            const double sd = spec.noise_scale / std::sqrt(static_cast<double>(x.size()));
            for (double &v : x) v += sd * rng.normal();
        }
        Sample s{Vec(std::move(x)), label, 0.0};
        if (regression_direction != nullptr) s.target = dot(*regression_direction, s.x);
        batch.push_back(std::move(s));
    }
    return batch;
}

// ---------------------------------------------------------------------------
// Stream

struct DataConfig {
    std::uint64_t seed = 1;
    std::size_t clients = 30;
    std::size_t clusters = 3;
    std::size_t num_labels = 10;
    std::size_t channels = 6;   // d
    std::size_t length = 20;    // T
    Strategy strategy = Strategy::S1;
    DriftParams drift;
    double beta = 0.5;           // Dirichlet concentration for label partitions
    double noise_scale = 1.0;    // Frobenius norm of the additive noise (in expectation)
    double label_share = 0.5;    // weight of the cross-cluster label pattern
    double cluster_share = 0.3;  // weight of the per-cluster common pattern
    bool regression = false;

    [[nodiscard]] std::size_t input_dim() const noexcept { return channels * length; }
};

/// Cluster id of each client at round 0: contiguous blocks, remainder spread
/// over the last clusters (10 clients in 3 clusters gives 3, 3, 4).
inline std::vector<int> initial_membership(std::size_t clients, std::size_t clusters) {
    std::vector<int> m(clients);
    const std::size_t base = clients / clusters;
    const std::size_t extra = clients % clusters;
    std::size_t k = 0;
    for (std::size_t c = 0; c < clusters; ++c) {
        const std::size_t n = base + ((c >= clusters - extra) ? 1 : 0);
        for (std::size_t i = 0; i < n; ++i) m[k++] = static_cast<int>(c);
    }
    return m;
}

/// Disjoint contiguous label supports (10 labels in 3 clusters gives 3, 3, 4).
inline std::vector<std::vector<int>> disjoint_supports(std::size_t num_labels, std::size_t clusters) {
    const auto blocks = initial_membership(num_labels, clusters);
    std::vector<std::vector<int>> s(clusters);
    for (std::size_t l = 0; l < num_labels; ++l) s[static_cast<std::size_t>(blocks[l])].push_back(static_cast<int>(l));
    return s;
}

/// Deterministic drifting data stream. Round state is advanced sequentially
/// (the drift is Markov); batches are pure functions of (seed, client, round)
/// given that state, so they can be drawn in parallel.
class DataStream {
public:
    explicit DataStream(DataConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.clusters < 1 || cfg_.clients < cfg_.clusters) throw numeric_error("DataStream: need clients >= clusters >= 1");
        if (cfg_.num_labels < 1 || cfg_.input_dim() < 1) throw numeric_error("DataStream: empty label set or input");
        build_prototypes();
        build_distributions();
        state_.params = cfg_.drift;
        state_.z.assign(cfg_.clusters, 0);
        state_.client_cluster = initial_membership(cfg_.clients, cfg_.clusters);
        client_dist_.assign(cfg_.clients, LabelDistribution::uniform(cfg_.num_labels));
        refresh_client_distributions(0);
    }

    [[nodiscard]] const DataConfig &config() const noexcept { return cfg_; }
    [[nodiscard]] std::size_t round() const noexcept { return round_; }
    [[nodiscard]] const std::vector<ClusterSpec> &clusters() const noexcept { return specs_; }
    [[nodiscard]] const DriftState &drift_state() const noexcept { return state_; }

    /// Ground-truth cluster of every client at the current round.
    [[nodiscard]] const std::vector<int> &truth() const noexcept { return state_.client_cluster; }
    [[nodiscard]] const LabelDistribution &client_distribution(std::size_t k) const { return client_dist_.at(k); }
    [[nodiscard]] const LabelDistribution &cluster_distribution(std::size_t c) const { return cluster_dist_.at(c); }
    [[nodiscard]] const std::vector<LabelDistribution> &major() const noexcept { return major_; }
    [[nodiscard]] const std::vector<LabelDistribution> &minor() const noexcept { return minor_; }

    /// Moves the stream to round t (t ≥ current round).
    void advance_to(std::size_t t) {
        while (round_ < t) {
            ++round_;
            step(round_);
        }
    }

    /// Training batch for client k at the current round.
    [[nodiscard]] Batch batch(std::size_t k, std::size_t size) const { return draw(k, size, Purpose::Batch); }
    /// Held-out batch from the long-run label distribution of the client's
    /// current cluster (a fixed test split rather than this round's mixture).
    [[nodiscard]] Batch test_batch(std::size_t k, std::size_t size) const {
        RngStream rng(cfg_.seed, k, round_, Purpose::Test);
        const auto c = static_cast<std::size_t>(state_.client_cluster.at(k));
        return draw_from(c, long_run_.at(c), size, rng);
    }
    /// Time-averaged label distribution of cluster c under the drift process.
    [[nodiscard]] const LabelDistribution &long_run_distribution(std::size_t c) const { return long_run_.at(c); }

    /// Batch drawn from an explicit (cluster, distribution) pair; used for
    /// contrastive positives/negatives.
    [[nodiscard]] Batch draw_from(std::size_t cluster, const LabelDistribution &dist, std::size_t size,
                                  RngStream &rng) const {
        return sample_batch(specs_.at(cluster), dist, size, rng,
                            cfg_.regression ? &regression_dirs_.at(cluster) : nullptr);
    }

private:
    [[nodiscard]] Batch draw(std::size_t k, std::size_t size, Purpose purpose) const {
        RngStream rng(cfg_.seed, k, round_, purpose);
        const auto c = static_cast<std::size_t>(state_.client_cluster.at(k));
        return draw_from(c, client_dist_.at(k), size, rng);
    }

    Mat random_pattern(RngStream &rng) const {
        // sum of a few random sinusoids per channel, unit Frobenius norm
        Mat p(cfg_.channels, cfg_.length);
        for (std::size_t ch = 0; ch < cfg_.channels; ++ch) {
            for (int h = 0; h < 3; ++h) {
                const double amp = rng.normal();
                const double freq = 1.0 + static_cast<double>(rng.index(4));
                const double phase = 2.0 * std::numbers::pi * rng.uniform();
                for (std::size_t s = 0; s < cfg_.length; ++s) {
                    const double arg = 2.0 * std::numbers::pi * freq * static_cast<double>(s) /
                                           static_cast<double>(cfg_.length) + phase;
                    p(ch, s) += amp * std::sin(arg);
                }
            }
        }
        const double n = std::sqrt(squared_norm(p));
        if (n > 0.0) p *= 1.0 / n;
        return p;
    }

    void build_prototypes() {
        RngStream rng(cfg_.seed, 0, 0, Purpose::Prototype);
        std::vector<Mat> label_patterns;
        for (std::size_t l = 0; l < cfg_.num_labels; ++l) label_patterns.push_back(random_pattern(rng));
        const double specific_share = std::max(0.0, 1.0 - cfg_.label_share - cfg_.cluster_share);
        for (std::size_t c = 0; c < cfg_.clusters; ++c) {
            ClusterSpec spec;
            spec.id = static_cast<int>(c);
            spec.noise_scale = cfg_.noise_scale;
            const Mat common = random_pattern(rng);
            for (std::size_t l = 0; l < cfg_.num_labels; ++l) {
                Mat p = std::sqrt(cfg_.label_share) * label_patterns[l];
                p.axpy(std::sqrt(cfg_.cluster_share), common);
                p.axpy(std::sqrt(specific_share), random_pattern(rng));
                spec.prototypes.push_back(std::move(p));
                spec.label_support.push_back(static_cast<int>(l));
            }
            specs_.push_back(std::move(spec));
            if (cfg_.regression) {
                Vec dir(cfg_.input_dim());
                for (double &v : dir) v = rng.normal();
                dir *= std::sqrt(static_cast<double>(cfg_.input_dim())) / norm(dir);
                regression_dirs_.push_back(std::move(dir));
            }
        }
    }

    void build_distributions() {
        RngStream rng(cfg_.seed, 0, 0, Purpose::Partition);
        major_ = dirichlet_partition(cfg_.num_labels, cfg_.clusters, cfg_.beta, rng);
        minor_ = dirichlet_partition(cfg_.num_labels, cfg_.clusters, cfg_.beta, rng);
        supports_ = disjoint_supports(cfg_.num_labels, cfg_.clusters);
        if (cfg_.strategy == Strategy::S2 || cfg_.strategy == Strategy::S3) {
            for (std::size_t c = 0; c < cfg_.clusters; ++c) specs_[c].label_support = supports_[c];
        }
        cluster_dist_ = major_;
        long_run_ = major_;
        if (cfg_.strategy == Strategy::S1) {
            // stationary probability of the minor state
            const double denom = 1.0 + cfg_.drift.lambda1 - cfg_.drift.lambda2;
            const double minor_share = denom > 0.0 ? cfg_.drift.lambda1 / denom : 0.0;
            for (std::size_t c = 0; c < cfg_.clusters; ++c) {
                std::vector<double> w(cfg_.num_labels);
                for (std::size_t l = 0; l < cfg_.num_labels; ++l)
                    w[l] = (1.0 - minor_share) * major_[c][l] + minor_share * minor_[c][l];
                long_run_[c] = LabelDistribution::from_weights(std::move(w));
            }
        }
        if (cfg_.strategy == Strategy::S2 || cfg_.strategy == Strategy::S3) {
            // round 0: uniform over each cluster's own support
            for (std::size_t c = 0; c < cfg_.clusters; ++c) {
                std::vector<double> w(cfg_.num_labels, 0.0);
                for (int l : supports_[c]) w[static_cast<std::size_t>(l)] = 1.0;
                cluster_dist_[c] = LabelDistribution::from_weights(std::move(w));
                long_run_[c] = cluster_dist_[c];
            }
        }
    }

    void step(std::size_t t) {
        switch (cfg_.strategy) {
            case Strategy::Stationary:
                break;
            case Strategy::S1:
                for (std::size_t c = 0; c < cfg_.clusters; ++c) {
                    RngStream rng(cfg_.seed, c, t, Purpose::Drift);
                    cluster_dist_[c] = markov_step(state_, c, major_[c], minor_[c], rng);
                }
                break;
            case Strategy::S2:
            case Strategy::S3:
                if (cfg_.strategy == Strategy::S3 && cfg_.clusters >= 2) {
                    for (std::size_t k = 0; k < cfg_.clients; ++k) {
                        RngStream rng(cfg_.seed, k, t, Purpose::Migrate);
                        migrate_step(state_, k, rng);
                    }
                }
                for (std::size_t c = 0; c < cfg_.clusters; ++c) {
                    RngStream rng(cfg_.seed, c, t, Purpose::Simplex);
                    cluster_dist_[c] = simplex_resample(supports_[c], 0.0, {}, cfg_.num_labels, rng);
                }
                break;
        }
        refresh_client_distributions(t);
    }

    void refresh_client_distributions(std::size_t t) {
        const bool adopting = (cfg_.strategy == Strategy::S2 || cfg_.strategy == Strategy::S3) && t > 0 &&
                              cfg_.clusters >= 2 && cfg_.drift.adopt_prob > 0.0;
        for (std::size_t k = 0; k < cfg_.clients; ++k) {
            const auto c = static_cast<std::size_t>(state_.client_cluster[k]);
            client_dist_[k] = cluster_dist_[c];
            if (!adopting) continue;
            // one-round adoption of another cluster's current distribution
            RngStream rng(cfg_.seed, k, t, Purpose::Adopt);
            if (rng.bernoulli(cfg_.drift.adopt_prob)) {
                const auto offset = 1 + rng.index(cfg_.clusters - 1);
                client_dist_[k] = cluster_dist_[(c + offset) % cfg_.clusters];
            }
        }
    }

    DataConfig cfg_;
    std::size_t round_ = 0;
    std::vector<ClusterSpec> specs_;
    std::vector<Vec> regression_dirs_;
    std::vector<LabelDistribution> major_, minor_, cluster_dist_, client_dist_, long_run_;
    std::vector<std::vector<int>> supports_;
    DriftState state_;
};

/// One CSV row per sample: flattened x, label, client, round.
inline void write_batch_csv_header(std::ostream &os, std::size_t input_dim) {
    for (std::size_t i = 0; i < input_dim; ++i) os << 'x' << i << ',';
    os << "label,target,client,round\n";
}

inline void write_batch_csv(std::ostream &os, const Batch &batch, std::size_t client, std::size_t round) {
    char buf[32];
    for (const auto &s : batch) {
        for (double v : s.x) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            os << buf << ',';
        }
        std::snprintf(buf, sizeof buf, "%.17g", s.target);
        os << s.label << ',' << buf << ',' << client << ',' << round << '\n';
    }
}

}  // namespace fedreact
