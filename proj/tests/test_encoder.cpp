#include "fedreact/encoder.hpp"

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

using namespace fedreact;

namespace {

Mat random_mat(std::size_t r, std::size_t c, RngStream &rng, double scale = 1.0) {
    Mat m(r, c);
    for (double &v : m.span()) v = scale * rng.normal();
    return m;
}

Vec random_vec(std::size_t n, RngStream &rng, double scale = 1.0) {
    Vec v(n);
    for (double &x : v.span()) x = scale * rng.normal();
    return v;
}

Vec flat(const Mat &m) { return Vec(m.values()); }

Mat unflat(const Vec &v, std::size_t r, std::size_t c) { return Mat(r, c, v.values()); }

double relative_error(const Vec &a, const Vec &b) {
    Vec d = a;
    d -= b;
    return norm(d) / std::max(norm(b), 1e-12);
}

}  // namespace

TEST(Contrastive, ZeroEncoder) {
    const Mat theta(2, 4);
    const Vec x{1, 2, 3, 4};
    const auto lg = contrastive_loss(theta, x, x, {x, x});
    EXPECT_NEAR(lg.loss, 3.0 * std::numbers::ln2, 1e-12);
}

TEST(Contrastive, ScalarEmbeddings) {
    // θ = [1], f(ref) = f(pos) = 1, f(neg) = −1
    const Mat theta(1, 1, {1.0});
    const auto lg = contrastive_loss(theta, Vec{1}, Vec{1}, {Vec{-1}});
    EXPECT_NEAR(lg.loss, 2.0 * std::log1p(std::exp(-1.0)), 1e-12);
    EXPECT_NEAR(lg.loss, 0.6265, 5e-5);
}

TEST(Contrastive, StableAtLargeScores) {
    const Mat theta(1, 1, {100.0});
    const auto lg = contrastive_loss(theta, Vec{10}, Vec{10}, {Vec{10}});
    EXPECT_TRUE(std::isfinite(lg.loss));
    EXPECT_NEAR(lg.loss, 1e6, 1.0);
    EXPECT_THROW(contrastive_loss(theta, Vec{1}, Vec{1}, {}), numeric_error);
}

TEST(Contrastive, GradientMatchesFiniteDifferences) {
    RngStream rng(21, 0, 0, Purpose::Experiment);
    const std::size_t r = 3, d = 8;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<ContrastiveTriple> batch;
        for (int i = 0; i < 4; ++i)
            batch.push_back({random_vec(d, rng), random_vec(d, rng), {random_vec(d, rng), random_vec(d, rng)}});
        const Mat theta = random_mat(r, d, rng, 0.5);
        const auto lg = contrastive_loss(theta, batch);
        const Vec numeric = finite_diff_grad(
            [&](const Vec &v) { return contrastive_loss(unflat(v, r, d), batch).loss; }, flat(theta), 1e-5);
        EXPECT_LT(relative_error(flat(lg.grad), numeric), 1e-5);
    }
}

TEST(Ssl, ZeroEncoder) {
    RngStream rng(22, 0, 0, Purpose::Experiment);
    const Mat theta(2, 5);
    std::vector<Vec> xs, xi, xj;
    double expected = 0.0;
    for (int i = 0; i < 6; ++i) {
        xs.push_back(random_vec(5, rng));
        xi.push_back(random_vec(2, rng));
        xj.push_back(random_vec(2, rng));
        expected -= dot(xi.back(), xj.back()) / 6.0;
    }
    EXPECT_NEAR(ssl_linear_loss(theta, xs, xi, xj).loss, expected, 1e-12);
    EXPECT_EQ(ssl_linear_loss(theta, xs).loss, 0.0);
}

TEST(Ssl, GradientMatchesFiniteDifferences) {
    RngStream rng(23, 0, 0, Purpose::Experiment);
    const std::size_t r = 2, d = 6;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Vec> xs, xi, xj;
        for (int i = 0; i < 5; ++i) {
            xs.push_back(random_vec(d, rng));
            xi.push_back(random_vec(r, rng, 0.3));
            xj.push_back(random_vec(r, rng, 0.3));
        }
        const Mat theta = random_mat(r, d, rng, 0.7);
        for (bool noisy : {false, true}) {
            const auto &a = noisy ? xi : std::vector<Vec>{};
            const auto &b = noisy ? xj : std::vector<Vec>{};
            const auto lg = ssl_linear_loss(theta, xs, a, b);
            const Vec numeric = finite_diff_grad(
                [&](const Vec &v) { return ssl_linear_loss(unflat(v, r, d), xs, a, b).loss; }, flat(theta), 1e-5);
            EXPECT_LT(relative_error(flat(lg.grad), numeric), 1e-5);
        }
    }
}

TEST(Ssl, LossEqualsHalfFrobeniusGapMinusConstant) {
    // −tr(θX̄θᵀ) + ½‖θᵀθ‖² = ½‖X̄ − θᵀθ‖² − ½‖X̄‖²
    RngStream rng(24, 0, 0, Purpose::Experiment);
    std::vector<Vec> xs;
    Mat cov(4, 4);
    for (int i = 0; i < 10; ++i) {
        xs.push_back(random_vec(4, rng));
        add_outer(cov, 0.1, xs.back().span(), xs.back().span());
    }
    const Mat theta = random_mat(2, 4, rng);
    const Mat gap = cov - matmul(theta.transpose(), theta);
    EXPECT_NEAR(ssl_linear_loss(theta, xs).loss, 0.5 * squared_norm(gap) - 0.5 * squared_norm(cov), 1e-10);
}

TEST(Ssl, FullBatchDescentReachesEigenTruncation) {
    RngStream rng(25, 0, 0, Purpose::Experiment);
    const std::size_t d = 8, r = 2;
    std::vector<Vec> xs;
    Mat cov(d, d);
    for (int i = 0; i < 40; ++i) {
        Vec x = random_vec(d, rng);
        x[0] *= 3.0;
        x[1] *= 2.0;
        xs.push_back(x);
        add_outer(cov, 1.0 / 40.0, x.span(), x.span());
    }
    Eigen::MatrixXd e(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) e(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cov(i, j);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(e);
    double optimum = 0.0;  // sum of squared discarded eigenvalues
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(d - r); ++i) optimum += eig.eigenvalues()(i) * eig.eigenvalues()(i);

    const double lambda = top_eigenvalue(cov);
    SmoothingConfig cfg{1, 1.0, 1.0 / (16.0 * lambda), 100.0 * lambda};
    Mat theta = random_mat(r, d, rng, 0.1);
    for (int it = 0; it < 20000; ++it) {
        const auto lg = ssl_linear_loss(theta, xs);
        theta.axpy(-cfg.step, projected_gradient(theta, lg.grad, cfg));
    }
    const double gap = squared_norm(cov - matmul(theta.transpose(), theta));
    EXPECT_NEAR(gap, optimum, 1e-3);
}

TEST(Smoothing, WindowExamples) {
    const Mat theta(1, 2, {5.0, 5.0});
    SmoothingConfig cfg{2, 0.5, 1.0, 1e6};
    GradientBuffer buf(2);
    buf.push(1, Mat(1, 2, {0, 1}));
    buf.push(2, Mat(1, 2, {1, 0}));
    const Mat next = local_smoothed_update(theta, buf, cfg);
    EXPECT_NEAR(next(0, 0), 5.0 - 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(next(0, 1), 5.0 - 1.0 / 3.0, 1e-15);

    SmoothingConfig flat_cfg{2, 1.0, 0.5, 1e6};
    const Mat avg = local_smoothed_update(theta, buf, flat_cfg);
    EXPECT_NEAR(avg(0, 0), 5.0 - 0.25, 1e-15);
    EXPECT_NEAR(avg(0, 1), 5.0 - 0.25, 1e-15);

    EXPECT_THROW(local_smoothed_update(theta, GradientBuffer(2), cfg), numeric_error);
}

TEST(Smoothing, BufferKeepsNewestW) {
    GradientBuffer buf(3);
    for (std::size_t t = 1; t <= 5; ++t) buf.push(t, Mat(1, 1, {static_cast<double>(t)}));
    EXPECT_EQ(buf.size(), 3u);
    EXPECT_EQ(buf.round_at(0), 5u);
    EXPECT_EQ(buf.round_at(2), 3u);
    EXPECT_THROW(buf.push(5, Mat(1, 1)), numeric_error);
    // warm-up: W over available terms
    GradientBuffer warm(4);
    warm.push(1, Mat(1, 1, {2.0}));
    EXPECT_EQ(warm.smoothed(0.9)(0, 0), 2.0);
}

TEST(Smoothing, WindowOneIsProjectedSgd) {
    RngStream rng(26, 0, 0, Purpose::Experiment);
    std::vector<Vec> xs;
    for (int i = 0; i < 12; ++i) xs.push_back(random_vec(5, rng));
    SmoothingConfig cfg{1, 0.9, 0.05, 2.0};
    Mat a = random_mat(2, 5, rng), b = a;
    GradientBuffer buf(1);
    for (std::size_t t = 1; t <= 50; ++t) {
        const Mat ga = projected_gradient(a, ssl_linear_loss(a, xs).grad, cfg);
        buf.push(t, ga);
        a = project(local_smoothed_update(a, buf, cfg), cfg.radius_sq);

        Mat step = b;
        step.axpy(-cfg.step, projected_gradient(b, ssl_linear_loss(b, xs).grad, cfg));
        b = project(step, cfg.radius_sq);
        ASSERT_EQ(a, b);
        ASSERT_LE(squared_norm(a), cfg.radius_sq + 1e-12);
    }
}

TEST(Smoothing, ProjectedGradientInsideBallIsGradient) {
    const Mat theta(1, 2, {0.1, 0.1});
    const Mat g(1, 2, {1.0, -1.0});
    const Mat pg = projected_gradient(theta, g, {1, 1.0, 0.01, 10.0});
    EXPECT_NEAR(pg(0, 0), 1.0, 1e-12);
    EXPECT_NEAR(pg(0, 1), -1.0, 1e-12);
    // step leaving the ball is shortened
    const Mat out = projected_gradient(Mat(1, 2, {1.0, 0.0}), Mat(1, 2, {-10.0, 0.0}), {1, 1.0, 1.0, 4.0});
    EXPECT_NEAR(out(0, 0), -1.0, 1e-12);
}

TEST(FedAvg, Examples) {
    const Mat a(1, 1, {4.0});
    EXPECT_EQ(fedavg_aggregate({{a, 3.0}}), a);
    EXPECT_EQ(fedavg_aggregate({{Mat(1, 1, {0.0}), 1.0}, {Mat(1, 1, {2.0}), 1.0}}), Mat(1, 1, {1.0}));
    EXPECT_EQ(fedavg_aggregate({{Mat(1, 1, {4.0}), 1.0}, {Mat(1, 1, {0.0}), 3.0}}), Mat(1, 1, {1.0}));
    EXPECT_THROW(fedavg_aggregate({{Mat(1, 1), 1.0}, {Mat(1, 2), 1.0}}), numeric_error);
    EXPECT_THROW(fedavg_aggregate({}), numeric_error);
}

TEST(FedAvg, GlobalMean) {
    EXPECT_EQ(global_mean({Mat(1, 1, {1.0}), Mat(1, 1, {3.0})}), Mat(1, 1, {2.0}));
    EXPECT_EQ(global_mean({Mat(1, 1, {0.0}), Mat(1, 1, {3.0}), Mat(1, 1, {6.0})}), Mat(1, 1, {3.0}));
    RngStream rng(27, 0, 0, Purpose::Experiment);
    std::vector<Mat> ms;
    std::vector<std::pair<Mat, double>> weighted;
    for (int i = 0; i < 5; ++i) {
        ms.push_back(random_mat(2, 3, rng));
        weighted.emplace_back(ms.back(), 7.0);
    }
    EXPECT_EQ(global_mean(ms), fedavg_aggregate(weighted));
    EXPECT_EQ(global_mean({ms[0]}), ms[0]);
}

TEST(Encode, Examples) {
    EXPECT_EQ(encode({Mat(2, 3)}, Vec{1, 2, 3}), (Vec{0, 0}));
    EXPECT_EQ(encode({Mat(2, 3, {1, 0, 0, 0, 1, 0})}, Vec{1, 0, 0}), (Vec{1, 0}));
    EXPECT_THROW(encode({Mat(2, 3)}, Vec{1, 2}), numeric_error);
    RngStream rng(28, 0, 0, Purpose::Experiment);
    const Mat theta = random_mat(3, 4, rng);
    const Vec x = random_vec(4, rng);
    const Vec z = encode({theta}, x);
    for (std::size_t i = 0; i < 3; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 4; ++j) s += theta(i, j) * x[j];
        EXPECT_NEAR(z[i], s, 1e-14);
    }
}

TEST(Checkpoint, RoundTrip) {
    RngStream rng(29, 0, 0, Purpose::Experiment);
    const EncoderParams enc{random_mat(3, 5, rng)};
    std::stringstream ss;
    write_encoder(ss, enc);
    EXPECT_EQ(read_encoder(ss).theta, enc.theta);
    std::istringstream bad("2 2\n1,2\n3");
    EXPECT_THROW(read_encoder(bad), numeric_error);
}
