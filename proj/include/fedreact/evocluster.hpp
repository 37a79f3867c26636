#pragma once

// Evolutionary clustering of clients from their task-model weights.
//
// Each round the server forms W_t, the cosine similarity of every pair of
// vectorized task models, and tracks a smoothed matrix
//   ψ̂_t = a_t ψ̂_{t−1} + (1 − a_t) W_t,   ψ̂_0 = 0.
// The forgetting factor a_t minimizes the expected squared Frobenius distance
// between ψ̂_t and the unobserved true similarity. Its estimate needs the mean
// and variance of every W_t entry, which are pooled over cluster blocks, which
// in turn need a clustering of ψ̂_t; the three estimates are refined jointly for
// a fixed number of iterations.

#include "fedreact/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <vector>

namespace fedreact {

/// Server-side similarity history: ψ̂_t, the last observed W_t and every a_t.
struct SimilarityState {
    Mat smoothed;
    Mat last_observation;
    std::vector<double> a_history;
};

/// Client → cluster id for one round, with the previous round's membership.
/// Negative ids mark clients not yet assigned (no upload so far).
struct ClusterAssignment {
    std::size_t round = 0;
    std::vector<int> membership;
    std::vector<int> previous;

    [[nodiscard]] std::size_t num_clusters() const {
        int hi = -1;
        for (int c : membership) hi = std::max(hi, c);
        return static_cast<std::size_t>(hi + 1);
    }
    [[nodiscard]] std::vector<std::size_t> members(int c) const {
        std::vector<std::size_t> m;
        for (std::size_t k = 0; k < membership.size(); ++k)
            if (membership[k] == c) m.push_back(k);
        return m;
    }
};

/// Relabels clusters 0..C−1 in order of their smallest member; negative ids stay.
inline std::vector<int> canonical_labels(const std::vector<int> &membership) {
    std::map<int, int> relabel;
    std::vector<int> out(membership.size(), -1);
    for (std::size_t k = 0; k < membership.size(); ++k) {
        if (membership[k] < 0) continue;
        auto [it, inserted] = relabel.try_emplace(membership[k], static_cast<int>(relabel.size()));
        out[k] = it->second;
    }
    return out;
}

/// Symmetric K×K matrix of pairwise cosine similarities, unit diagonal.
inline Mat similarity_matrix(const std::vector<Vec> &vectors) {
    const std::size_t k = vectors.size();
    if (k < 2) throw numeric_error("similarity_matrix: need at least two clients");
    Mat w(k, k);
    for (std::size_t i = 0; i < k; ++i) {
        w(i, i) = 1.0;
        for (std::size_t j = i + 1; j < k; ++j) {
            const double c = cosine_similarity(vectors[i], vectors[j]);
            w(i, j) = c;
            w(j, i) = c;
        }
    }
    return w;
}

/// a·ψ̂_prev + (1 − a)·W
inline Mat smooth(const Mat &prev, const Mat &w, double a) {
    if (!(a >= 0.0 && a <= 1.0)) throw numeric_error("smooth: forgetting factor outside [0,1]");
    if (!prev.same_shape(w)) throw numeric_error("smooth: shape mismatch");
    Mat out = a * prev;
    out.axpy(1.0 - a, w);
    return out;
}

struct Moments {
    Mat mean;
    Mat var;
};

/// Block-pooled mean and sample variance of W's off-diagonal entries.
///
/// Entries inside one cluster pool over the cluster's distinct pairs; entries
/// between clusters c and d pool over the c×d block. Pools with fewer than two
/// values get zero variance. The diagonal is fixed at mean 1, variance 0
/// (cosine self-similarity), which also covers singleton clusters.
inline Moments estimate_moments(const Mat &w, const std::vector<int> &membership) {
    const std::size_t k = w.rows();
    if (w.cols() != k || membership.size() != k) throw numeric_error("estimate_moments: shape mismatch");
    int hi = -1;
    for (int c : membership) {
        if (c < 0) throw numeric_error("estimate_moments: every client must be assigned");
        hi = std::max(hi, c);
    }
    const auto nc = static_cast<std::size_t>(hi + 1);

    // Welford accumulators per unordered cluster pair
    struct Acc {
        std::size_t n = 0;
        double mean = 0.0;
        double m2 = 0.0;
        void add(double x) {
            ++n;
            const double d = x - mean;
            mean += d / static_cast<double>(n);
            m2 += d * (x - mean);
        }
        [[nodiscard]] double variance() const { return n < 2 ? 0.0 : m2 / static_cast<double>(n - 1); }
    };
    std::vector<Acc> acc(nc * nc);
    auto slot = [nc](int a, int b) {
        const auto lo = static_cast<std::size_t>(std::min(a, b));
        const auto hi2 = static_cast<std::size_t>(std::max(a, b));
        return lo * nc + hi2;
    };
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            if (i == j) continue;
            const int ci = membership[i];
            const int cj = membership[j];
            if (ci == cj) {
                if (i < j) acc[slot(ci, cj)].add(w(i, j));
            } else if (ci < cj) {
                acc[slot(ci, cj)].add(w(i, j));
            }
        }
    }

    Moments m{Mat(k, k), Mat(k, k)};
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            if (i == j) {
                m.mean(i, j) = 1.0;
                continue;
            }
            const Acc &a = acc[slot(membership[i], membership[j])];
            m.mean(i, j) = a.mean;
            m.var(i, j) = a.variance();
        }
    }
    return m;
}

/// â = Σ Var̂ / Σ ((ψ̂_prev − Ê)² + Var̂) over off-diagonal entries; 0/0 → 0.
inline double forgetting_factor(const Mat &prev, const Mat &mean, const Mat &var) {
    if (!prev.same_shape(mean) || !prev.same_shape(var)) throw numeric_error("forgetting_factor: shape mismatch");
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < prev.rows(); ++i) {
        for (std::size_t j = 0; j < prev.cols(); ++j) {
            if (i == j) continue;
            const double d = prev(i, j) - mean(i, j);
            num += var(i, j);
            den += d * d + var(i, j);
        }
    }
    if (!(den > 0.0)) return 0.0;
    return std::clamp(num / den, 0.0, 1.0);
}
inline double forgetting_factor(const Mat &prev, const Moments &m) { return forgetting_factor(prev, m.mean, m.var); }

/// Average-linkage agglomerative clustering on a similarity matrix.
///
/// Starts from singletons and merges the pair with the highest mean
/// cross-similarity until `clusters` remain. Ties go to the pair with the
/// lowest (id, id), where a cluster's id is its smallest member. Output labels
/// are canonical (ordered by smallest member).
inline std::vector<int> agglomerative(const Mat &sim, std::size_t clusters) {
    const std::size_t k = sim.rows();
    if (sim.cols() != k) throw numeric_error("agglomerative: similarity must be square");
    if (clusters < 1 || clusters > k) throw numeric_error("agglomerative: cluster count outside [1, K]");

    // slot i holds the cluster whose smallest member is i
    Mat cross(k, k);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j)
            if (i != j) cross(i, j) = 0.5 * (sim(i, j) + sim(j, i));
    std::vector<std::size_t> size(k, 1);
    std::vector<bool> active(k, true);
    std::vector<std::size_t> parent(k);
    for (std::size_t i = 0; i < k; ++i) parent[i] = i;

    for (std::size_t remaining = k; remaining > clusters; --remaining) {
        std::size_t best_a = k, best_b = k;
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < k; ++a) {
            if (!active[a]) continue;
            for (std::size_t b = a + 1; b < k; ++b) {
                if (!active[b]) continue;
                const double avg = cross(a, b) / static_cast<double>(size[a] * size[b]);
                if (avg > best) {
                    best = avg;
                    best_a = a;
                    best_b = b;
                }
            }
        }
        // merge b into a
        for (std::size_t x = 0; x < k; ++x) {
            if (!active[x] || x == best_a || x == best_b) continue;
            cross(best_a, x) += cross(best_b, x);
            cross(x, best_a) = cross(best_a, x);
        }
        size[best_a] += size[best_b];
        active[best_b] = false;
        parent[best_b] = best_a;
    }

    std::vector<int> label(k);
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t r = i;
        while (parent[r] != r) r = parent[r];
        label[i] = static_cast<int>(r);
    }
    return canonical_labels(label);
}

struct AffectResult {
    Mat smoothed;                 // ψ̂_t
    double a = 0.0;               // a_t
    std::vector<int> membership;  // clustering of ψ̂_t
    std::vector<double> a_trace;  // â after each iteration
};

/// Joint estimate of (clustering, moments, forgetting factor).
///
/// The first iteration clusters W_t alone (â = 0); each iteration then pools
/// moments over the current clusters, re-estimates â against ψ̂_prev and
/// re-smooths. The returned membership clusters the final ψ̂_t.
inline AffectResult affect_iterate(const Mat &prev, const Mat &w, std::size_t clusters, int max_iters = 5) {
    if (max_iters < 1) throw numeric_error("affect_iterate: need at least one iteration");
    if (!prev.same_shape(w)) throw numeric_error("affect_iterate: shape mismatch");
    AffectResult r;
    r.smoothed = w;
    for (int it = 0; it < max_iters; ++it) {
        const auto membership = agglomerative(r.smoothed, clusters);
        const Moments m = estimate_moments(w, membership);
        r.a = forgetting_factor(prev, m);
        r.smoothed = smooth(prev, w, r.a);
        r.a_trace.push_back(r.a);
    }
    r.membership = agglomerative(r.smoothed, clusters);
    return r;
}

/// Σ_i ‖v_i − centroid(cluster(i))‖²
inline double wcss(const std::vector<Vec> &vectors, const std::vector<int> &membership) {
    if (vectors.size() != membership.size()) throw numeric_error("wcss: size mismatch");
    if (vectors.empty()) return 0.0;
    int hi = -1;
    for (int c : membership) hi = std::max(hi, c);
    const std::size_t dim = vectors.front().size();
    std::vector<Vec> centroid(static_cast<std::size_t>(hi + 1), Vec(dim));
    std::vector<std::size_t> count(centroid.size(), 0);
    for (std::size_t i = 0; i < vectors.size(); ++i) {
        centroid[static_cast<std::size_t>(membership[i])] += vectors[i];
        ++count[static_cast<std::size_t>(membership[i])];
    }
    for (std::size_t c = 0; c < centroid.size(); ++c)
        if (count[c] > 0) centroid[c] *= 1.0 / static_cast<double>(count[c]);
    double total = 0.0;
    for (std::size_t i = 0; i < vectors.size(); ++i)
        total += squared_distance(vectors[i].span(), centroid[static_cast<std::size_t>(membership[i])].span());
    return total;
}

/// Mean silhouette with Euclidean distances; singletons score 0 and a single
/// cluster scores 0 overall.
inline double silhouette(const std::vector<Vec> &vectors, const std::vector<int> &membership) {
    const std::size_t k = vectors.size();
    if (k != membership.size()) throw numeric_error("silhouette: size mismatch");
    if (k == 0) return 0.0;
    int hi = -1;
    for (int c : membership) hi = std::max(hi, c);
    const auto nc = static_cast<std::size_t>(hi + 1);
    if (nc < 2) return 0.0;
    std::vector<std::size_t> count(nc, 0);
    for (int c : membership) ++count[static_cast<std::size_t>(c)];

    double total = 0.0;
    std::vector<double> sum(nc);
    for (std::size_t i = 0; i < k; ++i) {
        const auto own = static_cast<std::size_t>(membership[i]);
        if (count[own] < 2) continue;
        std::fill(sum.begin(), sum.end(), 0.0);
        for (std::size_t j = 0; j < k; ++j) {
            if (j == i) continue;
            sum[static_cast<std::size_t>(membership[j])] +=
                std::sqrt(squared_distance(vectors[i].span(), vectors[j].span()));
        }
        const double a = sum[own] / static_cast<double>(count[own] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < nc; ++c)
            if (c != own && count[c] > 0) b = std::min(b, sum[c] / static_cast<double>(count[c]));
        const double denom = std::max(a, b);
        total += denom > 0.0 ? (b - a) / denom : 0.0;
    }
    return total / static_cast<double>(k);
}

struct ClusterCountEstimate {
    std::size_t elbow = 0;
    std::size_t silhouette_best = 0;
    std::vector<std::size_t> counts;
    std::vector<double> wcss;
    std::vector<double> silhouette;
};

/// Negative squared Euclidean distance, the similarity used for cluster-count
/// estimation.
inline Mat negative_sq_distance(const std::vector<Vec> &vectors) {
    const std::size_t k = vectors.size();
    Mat s(k, k);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i + 1; j < k; ++j) {
            const double d = squared_distance(vectors[i].span(), vectors[j].span());
            s(i, j) = -d;
            s(j, i) = -d;
        }
    return s;
}

/// WCSS and silhouette curves over C ∈ [lo, hi] from average-linkage
/// clusterings. The elbow is the interior C maximizing the discrete second
/// difference of WCSS; the silhouette choice maximizes the silhouette over
/// C ≥ 2. Ties go to the smaller C.
inline ClusterCountEstimate estimate_cluster_count(const std::vector<Vec> &vectors, std::size_t lo, std::size_t hi) {
    if (lo < 1 || hi > vectors.size() || lo > hi) throw numeric_error("estimate_cluster_count: range outside [1, K]");
    if (hi - lo + 1 < 3) throw numeric_error("estimate_cluster_count: elbow needs at least three cluster counts");
    const Mat sim = negative_sq_distance(vectors);
    ClusterCountEstimate e;
    for (std::size_t c = lo; c <= hi; ++c) {
        const auto m = agglomerative(sim, c);
        e.counts.push_back(c);
        e.wcss.push_back(wcss(vectors, m));
        e.silhouette.push_back(silhouette(vectors, m));
    }
    double best_d2 = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i + 1 < e.counts.size(); ++i) {
        const double d2 = e.wcss[i - 1] - 2.0 * e.wcss[i] + e.wcss[i + 1];
        if (d2 > best_d2) {
            best_d2 = d2;
            e.elbow = e.counts[i];
        }
    }
    double best_s = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < e.counts.size(); ++i) {
        if (e.counts[i] < 2) continue;
        if (e.silhouette[i] > best_s) {
            best_s = e.silhouette[i];
            e.silhouette_best = e.counts[i];
        }
    }
    return e;
}

}  // namespace fedreact
