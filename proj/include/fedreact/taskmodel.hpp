#pragma once

// Task heads trained on encoded features: one-vs-rest linear SVM for
// classification, a linear least-squares head for regression.

#include "fedreact/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace fedreact {

enum class TaskKind { Classification, Regression };

/// Weights (one row per class, a single row for regression) plus biases.
struct TaskModelParams {
    TaskKind kind = TaskKind::Classification;
    Mat weights;
    Vec biases;

    static TaskModelParams zeros(TaskKind kind, std::size_t classes, std::size_t dim) {
        const std::size_t rows = kind == TaskKind::Regression ? 1 : classes;
        return {kind, Mat(rows, dim), Vec(rows)};
    }

    [[nodiscard]] std::size_t rows() const noexcept { return weights.rows(); }
    [[nodiscard]] std::size_t dim() const noexcept { return weights.cols(); }
    [[nodiscard]] std::size_t parameter_count() const noexcept { return weights.size() + biases.size(); }

    /// Row-major weights followed by biases.
    [[nodiscard]] Vec vectorize() const {
        std::vector<double> v(weights.values());
        v.insert(v.end(), biases.begin(), biases.end());
        return Vec(std::move(v));
    }

    static TaskModelParams from_vector(TaskKind kind, std::size_t rows, std::size_t dim, const Vec &v) {
        if (v.size() != rows * dim + rows) throw numeric_error("TaskModelParams: vector length mismatch");
        std::vector<double> w(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(rows * dim));
        std::vector<double> b(v.begin() + static_cast<std::ptrdiff_t>(rows * dim), v.end());
        return {kind, Mat(rows, dim, std::move(w)), Vec(std::move(b))};
    }

    [[nodiscard]] bool same_shape(const TaskModelParams &o) const noexcept {
        return kind == o.kind && weights.same_shape(o.weights) && biases.size() == o.biases.size();
    }

    friend bool operator==(const TaskModelParams &, const TaskModelParams &) = default;
};

struct TrainConfig {
    std::size_t steps = 500;
    std::size_t batch = 10;
    double step_size = 0.05;
    double l2 = 1e-3;
};

/// Encoded samples with class labels (classification) or targets (regression).
struct FeatureSet {
    std::vector<Vec> z;
    std::vector<int> labels;
    std::vector<double> targets;

    [[nodiscard]] std::size_t size() const noexcept { return z.size(); }
    [[nodiscard]] bool empty() const noexcept { return z.empty(); }
};

inline double score(const TaskModelParams &p, std::size_t row, std::span<const double> z) {
    return dot(p.weights.row(row), z) + p.biases[row];
}

/// Class with the largest score; ties go to the lowest class id.
inline int predict_class(const TaskModelParams &p, std::span<const double> z) {
    int best = 0;
    double best_score = score(p, 0, z);
    for (std::size_t c = 1; c < p.rows(); ++c) {
        const double s = score(p, c, z);
        if (s > best_score) {
            best_score = s;
            best = static_cast<int>(c);
        }
    }
    return best;
}

inline double predict_value(const TaskModelParams &p, std::span<const double> z) { return score(p, 0, z); }

inline double accuracy(const TaskModelParams &p, const FeatureSet &data) {
    if (data.empty()) throw numeric_error("accuracy: empty dataset");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (predict_class(p, data.z[i].span()) == data.labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

inline double rmse(const TaskModelParams &p, const FeatureSet &data) {
    if (data.empty()) throw numeric_error("rmse: empty dataset");
    double se = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double e = predict_value(p, data.z[i].span()) - data.targets[i];
        se += e * e;
    }
    return std::sqrt(se / static_cast<double>(data.size()));
}

/// Mean one-vs-rest hinge loss summed over classes, plus l2·Σ‖w_c‖².
inline double hinge_objective(const TaskModelParams &p, const FeatureSet &data, double l2) {
    if (data.empty()) throw numeric_error("hinge_objective: empty dataset");
    double loss = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (std::size_t c = 0; c < p.rows(); ++c) {
            const double y = data.labels[i] == static_cast<int>(c) ? 1.0 : -1.0;
            loss += std::max(0.0, 1.0 - y * score(p, c, data.z[i].span()));
        }
    }
    loss /= static_cast<double>(data.size());
    return loss + l2 * squared_norm(p.weights);
}

inline double squared_error_objective(const TaskModelParams &p, const FeatureSet &data, double l2) {
    const double r = rmse(p, data);
    return r * r + l2 * squared_norm(p.weights);
}

/// Unregularized loss used when a client scores candidate models.
inline double task_loss(const TaskModelParams &p, const FeatureSet &data) {
    return p.kind == TaskKind::Classification ? hinge_objective(p, data, 0.0) : squared_error_objective(p, data, 0.0);
}

namespace detail {

/// One subgradient step of hinge_objective over the samples `idx` of `data`.
inline void svm_step(TaskModelParams &p, const FeatureSet &data, std::span<const std::size_t> idx, double step,
                     double l2) {
    const double inv = 1.0 / static_cast<double>(idx.size());
    for (std::size_t c = 0; c < p.rows(); ++c) {
        auto w = p.weights.row(c);
        // accumulate the data term against the pre-step weights
        std::vector<double> gw(w.size(), 0.0);
        double gb = 0.0;
        for (std::size_t i : idx) {
            const double y = data.labels[i] == static_cast<int>(c) ? 1.0 : -1.0;
            const auto z = data.z[i].span();
            if (y * score(p, c, z) < 1.0) {
                for (std::size_t j = 0; j < w.size(); ++j) gw[j] -= inv * y * z[j];
                gb -= inv * y;
            }
        }
        for (std::size_t j = 0; j < w.size(); ++j) w[j] -= step * (gw[j] + 2.0 * l2 * w[j]);
        p.biases[c] -= step * gb;
    }
}

inline void squared_error_step(TaskModelParams &p, const FeatureSet &data, std::span<const std::size_t> idx,
                               double step, double l2) {
    const double inv = 1.0 / static_cast<double>(idx.size());
    auto w = p.weights.row(0);
    std::vector<double> gw(w.size(), 0.0);
    double gb = 0.0;
    for (std::size_t i : idx) {
        const auto z = data.z[i].span();
        const double r = score(p, 0, z) - data.targets[i];
        for (std::size_t j = 0; j < w.size(); ++j) gw[j] += 2.0 * inv * r * z[j];
        gb += 2.0 * inv * r;
    }
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= step * (gw[j] + 2.0 * l2 * w[j]);
    p.biases[0] -= step * gb;
}

template <class Step>
TaskModelParams sgd(TaskModelParams p, const FeatureSet &data, const TrainConfig &cfg, RngStream &rng, Step step) {
    if (cfg.steps == 0) return p;
    if (data.empty()) throw numeric_error("train: need at least one sample");
    const std::size_t b = std::max<std::size_t>(1, std::min(cfg.batch, data.size()));
    std::vector<std::size_t> idx(b);
    for (std::size_t s = 0; s < cfg.steps; ++s) {
        for (auto &i : idx) i = rng.index(data.size());
        step(p, data, std::span<const std::size_t>(idx), cfg.step_size, cfg.l2);
    }
    return p;
}

}  // namespace detail

/// Full-batch hinge subgradient step.
inline TaskModelParams svm_subgradient_step(TaskModelParams p, const FeatureSet &data, double step, double l2) {
    std::vector<std::size_t> all(data.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    detail::svm_step(p, data, all, step, l2);
    return p;
}

/// One-vs-rest hinge loss + l2 penalty minimized by seeded minibatch SGD.
inline TaskModelParams svm_train(const TaskModelParams &init, const FeatureSet &data, const TrainConfig &cfg,
                                 RngStream &rng) {
    for (int l : data.labels)
        if (l < 0 || static_cast<std::size_t>(l) >= init.rows()) throw numeric_error("svm_train: label out of range");
    return detail::sgd(init, data, cfg, rng, detail::svm_step);
}

/// Mean squared error + l2 penalty minimized by seeded minibatch SGD.
inline TaskModelParams linreg_train(const TaskModelParams &init, const FeatureSet &data, const TrainConfig &cfg,
                                    RngStream &rng) {
    if (data.targets.size() != data.z.size()) throw numeric_error("linreg_train: targets missing");
    return detail::sgd(init, data, cfg, rng, detail::squared_error_step);
}

inline TaskModelParams train_task_model(const TaskModelParams &init, const FeatureSet &data, const TrainConfig &cfg,
                                        RngStream &rng) {
    return init.kind == TaskKind::Classification ? svm_train(init, data, cfg, rng) : linreg_train(init, data, cfg, rng);
}

}  // namespace fedreact
