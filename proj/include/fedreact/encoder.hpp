#pragma once

// Phase-1 representation learning with a linear encoder f(x) = θ·x.
//
// Two local objectives are provided: the sigmoid contrastive loss over an
// (anchor, positive, negatives) triple and the linear self-supervised loss
//   f(θ) = −E[(θx + ξ)ᵀ(θx + ξ′)] + ½‖θᵀθ‖²_F
// whose noise-free minimizers satisfy θᵀθ = best rank-d̂ approximation of the
// second-moment matrix of x. Both come with exact gradients. Local steps use a
// γ-decayed window of projected gradients; the server averages the results.

#include "fedreact/numerics.hpp"

#include <cmath>
#include <cstdio>
#include <cstddef>
#include <deque>
#include <istream>
#include <ostream>
#include <span>
#include <utility>
#include <vector>

namespace fedreact {

struct EncoderParams {
    Mat theta;  // d̂ × D

    [[nodiscard]] std::size_t output_dim() const noexcept { return theta.rows(); }
    [[nodiscard]] std::size_t input_dim() const noexcept { return theta.cols(); }
};

struct SmoothingConfig {
    std::size_t window = 1;  // w
    double gamma = 1.0;      // decay in (0, 1]
    double step = 0.1;       // η
    double radius_sq = 1.0;  // Γ, iterate constraint ‖θ‖²_F ≤ Γ

    void validate() const {
        if (window < 1) throw numeric_error("SmoothingConfig: window must be >= 1");
        if (!(gamma > 0.0 && gamma <= 1.0)) throw numeric_error("SmoothingConfig: gamma must lie in (0,1]");
        if (!(step > 0.0)) throw numeric_error("SmoothingConfig: step must be positive");
        if (!(radius_sq > 0.0)) throw numeric_error("SmoothingConfig: radius must be positive");
    }
};

/// W = Σ_{j<terms} γ^j
inline double window_normalizer(double gamma, std::size_t terms) {
    double w = 0.0;
    double g = 1.0;
    for (std::size_t j = 0; j < terms; ++j) {
        w += g;
        g *= gamma;
    }
    return w;
}

/// Last w gradients (newest first) together with the round each belongs to.
class GradientBuffer {
public:
    explicit GradientBuffer(std::size_t window = 1) : window_(window) {
        if (window_ < 1) throw numeric_error("GradientBuffer: window must be >= 1");
    }

    void push(std::size_t round, Mat grad) {
        if (!entries_.empty() && round <= entries_.front().first)
            throw numeric_error("GradientBuffer: rounds must increase");
        entries_.emplace_front(round, std::move(grad));
        while (entries_.size() > window_) entries_.pop_back();
    }

    [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
    [[nodiscard]] bool empty() const noexcept { return entries_.empty(); }
    [[nodiscard]] std::size_t window() const noexcept { return window_; }
    /// j = 0 is the newest gradient.
    [[nodiscard]] const Mat &at(std::size_t j) const { return entries_.at(j).second; }
    [[nodiscard]] std::size_t round_at(std::size_t j) const { return entries_.at(j).first; }

    /// (1/W) Σ γ^j g_{t−j} over the stored terms; W counts stored terms only.
    [[nodiscard]] Mat smoothed(double gamma) const {
        if (entries_.empty()) throw numeric_error("GradientBuffer: empty");
        Mat acc(entries_.front().second.rows(), entries_.front().second.cols());
        double g = 1.0;
        for (const auto &[round, grad] : entries_) {
            acc.axpy(g, grad);
            g *= gamma;
        }
        acc *= 1.0 / window_normalizer(gamma, entries_.size());
        return acc;
    }

private:
    std::size_t window_;
    std::deque<std::pair<std::size_t, Mat>> entries_;
};

struct LossGrad {
    double loss = 0.0;
    Mat grad;
};

namespace detail {

/// log(1 + e^s) without overflow.
inline double softplus(double s) { return s > 0.0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s)); }
inline double sigmoid(double s) {
    if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
    const double e = std::exp(s);
    return e / (1.0 + e);
}

/// grad += coef · θ (a bᵀ + b aᵀ), the derivative of coef·(θa)ᵀ(θb).
inline void add_pair_gradient(Mat &grad, double coef, const Vec &theta_a, const Vec &theta_b,
                              std::span<const double> a, std::span<const double> b) {
    add_outer(grad, coef, theta_a.span(), b);
    add_outer(grad, coef, theta_b.span(), a);
}

}  // namespace detail

inline Vec encode(const EncoderParams &enc, std::span<const double> x) {
    if (x.size() != enc.input_dim()) throw numeric_error("encode: input length does not match encoder");
    return matvec(enc.theta, x);
}
inline Vec encode(const EncoderParams &enc, const Vec &x) { return encode(enc, x.span()); }

/// −log σ(f(ref)ᵀf(pos)) − Σᵣ log σ(−f(ref)ᵀf(negᵣ)) and its gradient in θ.
inline LossGrad contrastive_loss(const Mat &theta, const Vec &x_ref, const Vec &x_pos, const std::vector<Vec> &negs) {
    if (negs.empty()) throw numeric_error("contrastive_loss: need at least one negative");
    const EncoderParams enc{theta};
    const Vec u = encode(enc, x_ref);
    const Vec v = encode(enc, x_pos);

    LossGrad out{0.0, Mat(theta.rows(), theta.cols())};
    const double s_pos = dot(u, v);
    out.loss += detail::softplus(-s_pos);
    detail::add_pair_gradient(out.grad, -detail::sigmoid(-s_pos), u, v, x_ref.span(), x_pos.span());
    for (const Vec &neg : negs) {
        const Vec n = encode(enc, neg);
        const double s_neg = dot(u, n);
        out.loss += detail::softplus(s_neg);
        detail::add_pair_gradient(out.grad, detail::sigmoid(s_neg), u, n, x_ref.span(), neg.span());
    }
    return out;
}

struct ContrastiveTriple {
    Vec ref;
    Vec pos;
    std::vector<Vec> negs;
};

/// Empirical mean of the contrastive loss over a batch of triples.
inline LossGrad contrastive_loss(const Mat &theta, const std::vector<ContrastiveTriple> &triples) {
    if (triples.empty()) throw numeric_error("contrastive_loss: empty batch");
    LossGrad out{0.0, Mat(theta.rows(), theta.cols())};
    for (const auto &t : triples) {
        auto lg = contrastive_loss(theta, t.ref, t.pos, t.negs);
        out.loss += lg.loss;
        out.grad += lg.grad;
    }
    const double inv = 1.0 / static_cast<double>(triples.size());
    out.loss *= inv;
    out.grad *= inv;
    return out;
}

/// Empirical −mean[(θxᵢ + ξᵢ)ᵀ(θxᵢ + ξ′ᵢ)] + ½‖θᵀθ‖²_F and its gradient
///   −2θX̂ − mean[(ξᵢ + ξ′ᵢ)xᵢᵀ] + 2θθᵀθ,  X̂ = mean[xᵢxᵢᵀ].
/// Empty noise vectors mean ξ = ξ′ = 0.
inline LossGrad ssl_linear_loss(const Mat &theta, const std::vector<Vec> &xs, const std::vector<Vec> &xi = {},
                                const std::vector<Vec> &xi_prime = {}) {
    if (xs.empty()) throw numeric_error("ssl_linear_loss: empty batch");
    const bool noisy = !xi.empty();
    if (noisy && (xi.size() != xs.size() || xi_prime.size() != xs.size()))
        throw numeric_error("ssl_linear_loss: noise draws must match batch size");

    const EncoderParams enc{theta};
    const double inv = 1.0 / static_cast<double>(xs.size());
    LossGrad out{0.0, Mat(theta.rows(), theta.cols())};
    for (std::size_t i = 0; i < xs.size(); ++i) {
        Vec a = encode(enc, xs[i]);
        if (noisy) {
            Vec b = a;
            a += xi[i];
            b += xi_prime[i];
            out.loss -= inv * dot(a, b);
            // d/dθ of (θx+ξ)ᵀ(θx+ξ′) = (2θx + ξ + ξ′) xᵀ = (a + b) xᵀ
            Vec ab = a + b;
            add_outer(out.grad, -inv, ab.span(), xs[i].span());
        } else {
            out.loss -= inv * dot(a, a);
            add_outer(out.grad, -2.0 * inv, a.span(), xs[i].span());
        }
    }
    // ‖θᵀθ‖_F = ‖θθᵀ‖_F and θθᵀθ = (θθᵀ)θ; the d̂ × d̂ product is the cheap one.
    const Mat small = matmul(theta, theta.transpose());
    out.loss += 0.5 * squared_norm(small);
    out.grad.axpy(2.0, matmul(small, theta));
    return out;
}

/// Gradient mapping (θ − Π(θ − η g)) / η, i.e. the step direction of a
/// projected gradient step. Equals g whenever the step stays inside the ball.
inline Mat projected_gradient(const Mat &theta, const Mat &grad, const SmoothingConfig &cfg) {
    Mat stepped = theta;
    stepped.axpy(-cfg.step, grad);
    project_in_place(stepped.span(), cfg.radius_sq);
    Mat g = theta - stepped;
    g *= 1.0 / cfg.step;
    return g;
}

/// θ − (η/W) Σ_j γ^j g_{t−j} over the buffered projected gradients. Before the
/// window fills, W is recomputed over the available terms. The caller applies
/// `project` afterwards.
inline Mat local_smoothed_update(const Mat &theta, const GradientBuffer &buffer, const SmoothingConfig &cfg) {
    if (buffer.empty()) throw numeric_error("local_smoothed_update: empty gradient buffer");
    Mat next = theta;
    next.axpy(-cfg.step, buffer.smoothed(cfg.gamma));
    return next;
}

/// Σ (n_k / n) θ_k
inline Mat fedavg_aggregate(const std::vector<std::pair<Mat, double>> &params) {
    if (params.empty()) throw numeric_error("fedavg_aggregate: no parameters");
    double total = 0.0;
    for (const auto &[theta, n] : params) {
        if (n < 0.0) throw numeric_error("fedavg_aggregate: negative weight");
        if (!theta.same_shape(params.front().first)) throw numeric_error("fedavg_aggregate: shape mismatch");
        total += n;
    }
    if (!(total > 0.0)) throw numeric_error("fedavg_aggregate: weights sum to zero");
    Mat out(params.front().first.rows(), params.front().first.cols());
    for (const auto &[theta, n] : params) out.axpy(n / total, theta);
    return out;
}

inline Mat global_mean(const std::vector<Mat> &params) {
    std::vector<std::pair<Mat, double>> weighted;
    weighted.reserve(params.size());
    for (const auto &p : params) weighted.emplace_back(p, 1.0);
    return fedavg_aggregate(weighted);
}

/// Checkpoint format: "rows cols" on the first line, then one row per line.
inline void write_encoder(std::ostream &os, const EncoderParams &enc) {
    char buf[32];
    os << enc.theta.rows() << ' ' << enc.theta.cols() << '\n';
    for (std::size_t r = 0; r < enc.theta.rows(); ++r) {
        for (std::size_t c = 0; c < enc.theta.cols(); ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", enc.theta(r, c));
            os << (c ? "," : "") << buf;
        }
        os << '\n';
    }
}

inline EncoderParams read_encoder(std::istream &is) {
    std::size_t rows = 0, cols = 0;
    if (!(is >> rows >> cols)) throw numeric_error("read_encoder: bad header");
    std::vector<double> values(rows * cols);
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i % cols != 0) {
            char sep = 0;
            if (!(is >> sep) || sep != ',') throw numeric_error("read_encoder: expected ','");
        }
        if (!(is >> values[i])) throw numeric_error("read_encoder: truncated values");
    }
    return {Mat(rows, cols, std::move(values))};
}

}  // namespace fedreact
