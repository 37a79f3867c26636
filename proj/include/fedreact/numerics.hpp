#pragma once

// Dense vector/matrix primitives, ball projection, keyed RNG streams and the
// central-difference gradient used as a test oracle.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <initializer_list>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedreact {

/// Raised when an operation receives input it cannot give a meaningful answer
/// for (zero-norm vectors, non-finite values, mismatched shapes).
class numeric_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void require_finite(std::span<const double> values, const char *what) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw numeric_error(std::string(what) + ": non-finite entry");
        }
    }
}

}  // namespace detail

/// Real vector with finite entries.
class Vec {
public:
    Vec() = default;
    explicit Vec(std::size_t n, double fill = 0.0) : values_(n, fill) {
        detail::require_finite(values_, "Vec");
    }
    explicit Vec(std::vector<double> values) : values_(std::move(values)) {
        detail::require_finite(values_, "Vec");
    }
    Vec(std::initializer_list<double> values) : values_(values) {
        detail::require_finite(values_, "Vec");
    }

    [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
    [[nodiscard]] bool empty() const noexcept { return values_.empty(); }
    double &operator[](std::size_t i) noexcept { return values_[i]; }
    double operator[](std::size_t i) const noexcept { return values_[i]; }

    [[nodiscard]] std::span<double> span() noexcept { return values_; }
    [[nodiscard]] std::span<const double> span() const noexcept { return values_; }
    [[nodiscard]] const std::vector<double> &values() const noexcept { return values_; }

    auto begin() noexcept { return values_.begin(); }
    auto end() noexcept { return values_.end(); }
    auto begin() const noexcept { return values_.begin(); }
    auto end() const noexcept { return values_.end(); }

    Vec &operator+=(const Vec &o) {
        check_same(o);
        for (std::size_t i = 0; i < size(); ++i) values_[i] += o.values_[i];
        return *this;
    }
    Vec &operator-=(const Vec &o) {
        check_same(o);
        for (std::size_t i = 0; i < size(); ++i) values_[i] -= o.values_[i];
        return *this;
    }
    Vec &operator*=(double s) noexcept {
        for (double &v : values_) v *= s;
        return *this;
    }
    /// this += s * o
    Vec &axpy(double s, const Vec &o) {
        check_same(o);
        for (std::size_t i = 0; i < size(); ++i) values_[i] += s * o.values_[i];
        return *this;
    }

    friend Vec operator+(Vec a, const Vec &b) { return a += b; }
    friend Vec operator-(Vec a, const Vec &b) { return a -= b; }
    friend Vec operator*(double s, Vec a) { return a *= s; }
    friend bool operator==(const Vec &, const Vec &) = default;

private:
    void check_same(const Vec &o) const {
        if (o.size() != size()) throw numeric_error("Vec: size mismatch");
    }

    std::vector<double> values_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw numeric_error("dot: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}
inline double dot(const Vec &a, const Vec &b) { return dot(a.span(), b.span()); }
inline double squared_norm(std::span<const double> a) { return dot(a, a); }
inline double squared_norm(const Vec &a) { return dot(a, a); }
inline double norm(const Vec &a) { return std::sqrt(squared_norm(a)); }

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw numeric_error("distance: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

/// Row-major dense matrix with finite entries.
class Mat {
public:
    Mat() = default;
    Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), values_(rows * cols, fill) {
        detail::require_finite(values_, "Mat");
    }
    Mat(std::size_t rows, std::size_t cols, std::vector<double> values)
        : rows_(rows), cols_(cols), values_(std::move(values)) {
        if (values_.size() != rows_ * cols_) throw numeric_error("Mat: rows*cols != value count");
        detail::require_finite(values_, "Mat");
    }

    static Mat identity(std::size_t n) {
        Mat m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
    [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
    [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }

    double &operator()(std::size_t r, std::size_t c) noexcept { return values_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return values_[r * cols_ + c]; }

    [[nodiscard]] std::span<double> row(std::size_t r) noexcept { return {values_.data() + r * cols_, cols_}; }
    [[nodiscard]] std::span<const double> row(std::size_t r) const noexcept {
        return {values_.data() + r * cols_, cols_};
    }
    [[nodiscard]] std::span<double> span() noexcept { return values_; }
    [[nodiscard]] std::span<const double> span() const noexcept { return values_; }
    [[nodiscard]] const std::vector<double> &values() const noexcept { return values_; }

    [[nodiscard]] bool same_shape(const Mat &o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

    Mat &operator+=(const Mat &o) {
        check_same(o);
        for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += o.values_[i];
        return *this;
    }
    Mat &operator-=(const Mat &o) {
        check_same(o);
        for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= o.values_[i];
        return *this;
    }
    Mat &operator*=(double s) noexcept {
        for (double &v : values_) v *= s;
        return *this;
    }
    Mat &axpy(double s, const Mat &o) {
        check_same(o);
        for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += s * o.values_[i];
        return *this;
    }

    friend Mat operator+(Mat a, const Mat &b) { return a += b; }
    friend Mat operator-(Mat a, const Mat &b) { return a -= b; }
    friend Mat operator*(double s, Mat a) { return a *= s; }
    friend bool operator==(const Mat &, const Mat &) = default;

    [[nodiscard]] Mat transpose() const {
        Mat t(cols_, rows_);
        for (std::size_t r = 0; r < rows_; ++r)
            for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
        return t;
    }

    [[nodiscard]] bool is_symmetric(double tol = 0.0) const {
        if (rows_ != cols_) return false;
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = i + 1; j < cols_; ++j)
                if (std::abs((*this)(i, j) - (*this)(j, i)) > tol) return false;
        return true;
    }

private:
    void check_same(const Mat &o) const {
        if (!same_shape(o)) throw numeric_error("Mat: shape mismatch");
    }

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

inline double squared_norm(const Mat &m) { return squared_norm(m.span()); }

inline Vec matvec(const Mat &m, std::span<const double> x) {
    if (x.size() != m.cols()) throw numeric_error("matvec: shape mismatch");
    Vec y(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) y[r] = dot(m.row(r), x);
    return y;
}

inline Mat matmul(const Mat &a, const Mat &b) {
    if (a.cols() != b.rows()) throw numeric_error("matmul: shape mismatch");
    Mat c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
        }
    return c;
}

/// aᵀ a
inline Mat gram(const Mat &a) { return matmul(a.transpose(), a); }

/// m += s * u vᵀ
inline void add_outer(Mat &m, double s, std::span<const double> u, std::span<const double> v) {
    if (u.size() != m.rows() || v.size() != m.cols()) throw numeric_error("add_outer: shape mismatch");
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double su = s * u[i];
        if (su == 0.0) continue;
        auto r = m.row(i);
        for (std::size_t j = 0; j < v.size(); ++j) r[j] += su * v[j];
    }
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix by power
/// iteration from a fixed start vector.
inline double top_eigenvalue(const Mat &sym, int max_iters = 1000, double tol = 1e-12) {
    if (sym.rows() != sym.cols() || sym.rows() == 0) throw numeric_error("top_eigenvalue: need square matrix");
    const std::size_t n = sym.rows();
    Vec v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 + 0.01 * static_cast<double>(i % 7);
    v *= 1.0 / norm(v);
    double lambda = 0.0;
    for (int it = 0; it < max_iters; ++it) {
        Vec w = matvec(sym, v.span());
        const double nw = norm(w);
        if (nw == 0.0) return 0.0;
        const double next = dot(v, w);
        w *= 1.0 / nw;
        v = std::move(w);
        if (std::abs(next - lambda) <= tol * std::max(1.0, std::abs(next))) return next;
        lambda = next;
    }
    return lambda;
}

/// Cosine of the angle between two nonzero vectors.
inline double cosine_similarity(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) throw numeric_error("cosine_similarity: size mismatch");
    const double nu = squared_norm(u);
    const double nv = squared_norm(v);
    if (nu == 0.0 || nv == 0.0) throw numeric_error("cosine_similarity: zero-norm input");
    const double c = dot(u, v) / std::sqrt(nu * nv);
    return std::clamp(c, -1.0, 1.0);
}
inline double cosine_similarity(const Vec &u, const Vec &v) { return cosine_similarity(u.span(), v.span()); }

/// Euclidean projection onto the ball {x : ‖x‖² ≤ radius_sq}.
inline void project_in_place(std::span<double> x, double radius_sq) {
    if (!(radius_sq > 0.0)) throw numeric_error("project: radius must be positive");
    const double n2 = squared_norm(x);
    // a few ulps of slack keeps the projection idempotent after rescaling
    if (n2 <= radius_sq * (1.0 + 8.0 * std::numeric_limits<double>::epsilon())) return;
    const double s = std::sqrt(radius_sq / n2);
    for (double &v : x) v *= s;
}
inline Vec project(Vec x, double radius_sq) {
    project_in_place(x.span(), radius_sq);
    return x;
}
inline Mat project(Mat x, double radius_sq) {
    project_in_place(x.span(), radius_sq);
    return x;
}

/// Central differences (f(x + h eᵢ) − f(x − h eᵢ)) / 2h.
inline Vec finite_diff_grad(const std::function<double(const Vec &)> &f, const Vec &x, double h) {
    if (!(h > 0.0)) throw numeric_error("finite_diff_grad: h must be positive");
    Vec g(x.size());
    Vec probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = probe[i];
        probe[i] = xi + h;
        const double fp = f(probe);
        probe[i] = xi - h;
        const double fm = f(probe);
        probe[i] = xi;
        if (!std::isfinite(fp) || !std::isfinite(fm)) throw numeric_error("finite_diff_grad: non-finite f");
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

/// Purpose tags separate independent random streams that share (client, round).
enum class Purpose : std::uint32_t {
    Prototype = 1,
    Partition,
    Drift,
    Simplex,
    Adopt,
    Migrate,
    Batch,
    Test,
    Train,
    Participation,
    Init,
    Noise,
    Encoder,
    Contrastive,
    Experiment,
    WarmUp,
    SslNoise,
};

/// Deterministic random stream keyed by (seed, client, round, purpose).
///
/// The key is mixed with SplitMix64 into the engine seed, so a stream's draws
/// depend only on its key and never on which worker evaluates it or in what
/// order streams are created.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t client, std::uint64_t round, Purpose purpose)
        : engine_(mix_key(seed, client, round, static_cast<std::uint64_t>(purpose))) {}

    static std::uint64_t splitmix64(std::uint64_t x) noexcept {
        x += 0x9E3779B97F4A7C15ULL;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
        return x ^ (x >> 31);
    }

    static std::uint64_t mix_key(std::uint64_t seed, std::uint64_t client, std::uint64_t round,
                                 std::uint64_t purpose) noexcept {
        std::uint64_t h = splitmix64(seed);
        h = splitmix64(h ^ client);
        h = splitmix64(h ^ (round * 0x100000001B3ULL));
        h = splitmix64(h ^ (purpose << 48));
        return h;
    }

    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n) {
        if (n == 0) throw numeric_error("RngStream::index: empty range");
        return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
    }
    bool bernoulli(double p) { return uniform() < p; }
    double normal() { return normal_(engine_); }
    double gamma(double shape) { return std::gamma_distribution<double>(shape, 1.0)(engine_); }
    double exponential() { return std::exponential_distribution<double>(1.0)(engine_); }

    std::mt19937_64 &engine() noexcept { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace fedreact
