#pragma once

// Experiment configuration, the encoder (phase 1) and task-model (phase 2)
// round loops, paired scheme comparisons, cluster-count estimation and the
// smoothed-gradient sweep.

#include "fedreact/aggregation.hpp"
#include "fedreact/baselines.hpp"
#include "fedreact/datagen.hpp"
#include "fedreact/encoder.hpp"
#include "fedreact/evocluster.hpp"
#include "fedreact/metrics.hpp"
#include "fedreact/numerics.hpp"
#include "fedreact/parallel.hpp"
#include "fedreact/taskmodel.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <istream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fedreact {

/// Invalid user configuration (bad value, unknown key, inconsistent ranges).
class config_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Scheme { FedReactA1, FedReactA2, ScMma, EcMma, Snapshot, Ifca, Flsc };

inline constexpr Scheme all_schemes[] = {Scheme::FedReactA1, Scheme::FedReactA2, Scheme::ScMma, Scheme::EcMma,
                                         Scheme::Snapshot,   Scheme::Ifca,       Scheme::Flsc};

inline std::string_view to_string(Scheme s) {
    switch (s) {
        case Scheme::FedReactA1: return "fedreact-a1";
        case Scheme::FedReactA2: return "fedreact-a2";
        case Scheme::ScMma: return "sc-mma";
        case Scheme::EcMma: return "ec-mma";
        case Scheme::Snapshot: return "snapshot";
        case Scheme::Ifca: return "ifca";
        case Scheme::Flsc: return "flsc";
    }
    return "?";
}

inline std::optional<Scheme> parse_scheme(std::string_view s) {
    for (Scheme c : all_schemes)
        if (to_string(c) == s) return c;
    return std::nullopt;
}

enum class EncoderLoss { Contrastive, LinearSsl };

inline std::string_view to_string(EncoderLoss l) { return l == EncoderLoss::Contrastive ? "contrastive" : "ssl"; }

struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::size_t clients = 30;
    std::size_t clusters_true = 3;
    std::size_t clusters = 3;  // assumed by the server
    Strategy strategy = Strategy::S1;
    DriftParams drift;
    double beta = 2.0;
    std::size_t num_labels = 10;
    std::size_t channels = 6;
    std::size_t length = 20;
    double noise_scale = 1.5;
    double label_share = 0.5;
    double cluster_share = 0.3;
    TaskKind task = TaskKind::Classification;

    std::size_t batch = 64;
    std::size_t test_batch = 100;
    std::size_t rounds = 20;       // encoder rounds
    std::size_t task_rounds = 50;  // task-model rounds
    double participation = 1.0;
    Scheme scheme = Scheme::FedReactA1;
    std::size_t tau = 2;
    int affect_iters = 5;

    EncoderLoss encoder_loss = EncoderLoss::Contrastive;
    std::size_t encoder_dim = 8;
    std::size_t local_steps = 1;
    std::size_t negatives = 2;
    double ssl_noise = 0.1;
    std::size_t warmup = 32;  // samples per client for the second-moment estimate
    SmoothingConfig smoothing{5, 0.999, 0.0, 0.0};  // step/radius 0: derived from the warm-up batch

    TrainConfig train{500, 10, 0.05, 0.1};
    std::size_t similarity_every = 0;  // 0: no similarity dumps
    std::size_t workers = 1;

    [[nodiscard]] DataConfig data_config() const {
        DataConfig d;
        d.seed = seed;
        d.clients = clients;
        d.clusters = clusters_true;
        d.num_labels = num_labels;
        d.channels = channels;
        d.length = length;
        d.strategy = strategy;
        d.drift = drift;
        d.beta = beta;
        d.noise_scale = noise_scale;
        d.label_share = label_share;
        d.cluster_share = cluster_share;
        d.regression = task == TaskKind::Regression;
        return d;
    }

    void validate() const {
        auto need = [](bool ok, const std::string &what) {
            if (!ok) throw config_error(what);
        };
        auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
        need(clients >= 1, "k must be at least 1");
        need(clusters >= 1 && clusters <= clients, "c must lie in [1, k]");
        need(clusters_true >= 1 && clusters_true <= clients, "c-true must lie in [1, k]");
        need(unit(drift.lambda1) && unit(drift.lambda2), "lambda1 and lambda2 must lie in [0, 1]");
        need(unit(drift.adopt_prob) && unit(drift.migrate_prob), "adopt-prob and migrate-prob must lie in [0, 1]");
        need(beta > 0.0 && std::isfinite(beta), "beta must be positive");
        need(num_labels >= 2, "num-labels must be at least 2");
        need(channels >= 1 && length >= 1, "channels and length must be at least 1");
        need(noise_scale >= 0.0 && std::isfinite(noise_scale), "noise-scale must be nonnegative");
        need(unit(label_share) && unit(cluster_share) && label_share + cluster_share <= 1.0,
             "label-share and cluster-share must lie in [0, 1] and sum to at most 1");
        need(batch >= 1 && test_batch >= 1, "batch and test-batch must be at least 1");
        need(task_rounds >= 1, "task-rounds must be at least 1");
        need(participation > 0.0 && participation <= 1.0, "participation must lie in (0, 1]");
        need(tau >= 1 && tau <= clusters, "tau must lie in [1, c]");
        need(affect_iters >= 1, "affect-iters must be at least 1");
        need(encoder_dim >= 1, "encoder-dim must be at least 1");
        need(local_steps >= 1, "local-steps must be at least 1");
        need(encoder_loss == EncoderLoss::LinearSsl || negatives >= 1, "negatives must be at least 1");
        need(ssl_noise >= 0.0 && std::isfinite(ssl_noise), "ssl-noise must be nonnegative");
        need(warmup >= 1, "warmup must be at least 1");
        need(smoothing.window >= 1, "window must be at least 1");
        need(smoothing.gamma > 0.0 && smoothing.gamma <= 1.0, "gamma must lie in (0, 1]");
        need(smoothing.step >= 0.0 && std::isfinite(smoothing.step), "step must be nonnegative (0: auto)");
        need(smoothing.radius_sq >= 0.0 && std::isfinite(smoothing.radius_sq), "radius must be nonnegative (0: auto)");
        need(train.batch >= 1, "train-batch must be at least 1");
        need(train.step_size > 0.0 && std::isfinite(train.step_size), "train-step-size must be positive");
        need(train.l2 >= 0.0 && std::isfinite(train.l2), "train-l2 must be nonnegative");
        need(workers >= 1, "workers must be at least 1");
    }
};

// ---------------------------------------------------------------------------
// Field table shared by the config file, the command line and the JSON echo

struct ConfigField {
    std::string name;
    std::string help;
    std::function<void(const std::string &)> set;
    std::function<nlohmann::ordered_json()> get;
    bool echoed = true;  // false for knobs that must not change outputs
};

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::uint64_t parse_u64(const std::string &name, const std::string &v) {
    std::uint64_t out = 0;
    const auto *end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end || v.empty()) throw config_error(name + ": expected a nonnegative integer, got '" + v + "'");
    return out;
}

inline double parse_real(const std::string &name, const std::string &v) {
    char *end = nullptr;
    const double out = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(out))
        throw config_error(name + ": expected a finite number, got '" + v + "'");
    return out;
}

template <class T>
ConfigField count_field(std::string name, std::string help, T &ref) {
    return {name, std::move(help),
            [&ref, name](const std::string &v) { ref = static_cast<T>(parse_u64(name, v)); },
            [&ref] { return nlohmann::ordered_json(ref); }};
}

inline ConfigField real_field(std::string name, std::string help, double &ref) {
    return {name, std::move(help), [&ref, name](const std::string &v) { ref = parse_real(name, v); },
            [&ref] { return nlohmann::ordered_json(ref); }};
}

}  // namespace detail

/// Every tunable, by flag name. The setters write into `cfg`.
inline std::vector<ConfigField> config_fields(ExperimentConfig &cfg) {
    using detail::count_field;
    using detail::real_field;
    std::vector<ConfigField> f;
    f.push_back(count_field("seed", "base RNG seed", cfg.seed));
    f.push_back(count_field("k", "number of clients", cfg.clients));
    f.push_back(count_field("c", "number of clusters assumed by the server", cfg.clusters));
    f.push_back(count_field("c-true", "number of ground-truth clusters", cfg.clusters_true));
    f.push_back({"strategy", "data drift: stationary|s1|s2|s3",
                 [&cfg](const std::string &v) {
                     auto s = parse_strategy(v);
                     if (!s) throw config_error("strategy: expected stationary|s1|s2|s3, got '" + v + "'");
                     cfg.strategy = *s;
                 },
                 [&cfg] { return nlohmann::ordered_json(std::string(to_string(cfg.strategy))); }});
    f.push_back(real_field("lambda1", "s1: probability of keeping the major distribution", cfg.drift.lambda1));
    f.push_back(real_field("lambda2", "s1: probability of switching back from the minor distribution",
                           cfg.drift.lambda2));
    f.push_back(real_field("adopt-prob", "s2/s3: one-round adoption probability", cfg.drift.adopt_prob));
    f.push_back(real_field("migrate-prob", "s3: per-round cluster migration probability", cfg.drift.migrate_prob));
    f.push_back(real_field("beta", "Dirichlet concentration of the label partition", cfg.beta));
    f.push_back(count_field("num-labels", "number of classes", cfg.num_labels));
    f.push_back(count_field("channels", "input channels", cfg.channels));
    f.push_back(count_field("length", "input sequence length", cfg.length));
    f.push_back(real_field("noise-scale", "norm of the additive input noise", cfg.noise_scale));
    f.push_back(real_field("label-share", "weight of the pattern shared by a label across clusters", cfg.label_share));
    f.push_back(real_field("cluster-share", "weight of the pattern shared within a cluster", cfg.cluster_share));
    f.push_back({"task", "classification|regression",
                 [&cfg](const std::string &v) {
                     if (v == "classification") cfg.task = TaskKind::Classification;
                     else if (v == "regression") cfg.task = TaskKind::Regression;
                     else throw config_error("task: expected classification|regression, got '" + v + "'");
                 },
                 [&cfg] {
                     return nlohmann::ordered_json(cfg.task == TaskKind::Classification ? "classification"
                                                                                        : "regression");
                 }});
    f.push_back(count_field("batch", "training samples per client and round", cfg.batch));
    f.push_back(count_field("test-batch", "held-out samples per client and round", cfg.test_batch));
    f.push_back(count_field("rounds", "encoder training rounds", cfg.rounds));
    f.push_back(count_field("task-rounds", "task-model rounds", cfg.task_rounds));
    f.push_back(real_field("participation", "fraction of each true cluster sampled per round", cfg.participation));
    f.push_back({"scheme", "fedreact-a1|fedreact-a2|sc-mma|ec-mma|snapshot|ifca|flsc",
                 [&cfg](const std::string &v) {
                     auto s = parse_scheme(v);
                     if (!s) throw config_error("scheme: unknown scheme '" + v + "'");
                     cfg.scheme = *s;
                 },
                 [&cfg] { return nlohmann::ordered_json(std::string(to_string(cfg.scheme))); }});
    f.push_back(count_field("tau", "flsc: clusters joined per client", cfg.tau));
    f.push_back({"affect-iters", "clustering/forgetting-factor iterations per round",
                 [&cfg](const std::string &v) {
                     const auto n = detail::parse_u64("affect-iters", v);
                     if (n > 1000) throw config_error("affect-iters: at most 1000");
                     cfg.affect_iters = static_cast<int>(n);
                 },
                 [&cfg] { return nlohmann::ordered_json(cfg.affect_iters); }});
    f.push_back({"encoder-loss", "contrastive|ssl",
                 [&cfg](const std::string &v) {
                     if (v == "contrastive") cfg.encoder_loss = EncoderLoss::Contrastive;
                     else if (v == "ssl") cfg.encoder_loss = EncoderLoss::LinearSsl;
                     else throw config_error("encoder-loss: expected contrastive|ssl, got '" + v + "'");
                 },
                 [&cfg] { return nlohmann::ordered_json(std::string(to_string(cfg.encoder_loss))); }});
    f.push_back(count_field("encoder-dim", "embedding dimension", cfg.encoder_dim));
    f.push_back(count_field("local-steps", "encoder steps per client and round", cfg.local_steps));
    f.push_back(count_field("negatives", "contrastive negatives per anchor", cfg.negatives));
    f.push_back(real_field("ssl-noise", "ssl: standard deviation of the embedding noise", cfg.ssl_noise));
    f.push_back(count_field("warmup", "samples per client used to estimate the input second moment", cfg.warmup));
    f.push_back(count_field("window", "gradient smoothing window", cfg.smoothing.window));
    f.push_back(real_field("gamma", "gradient smoothing decay", cfg.smoothing.gamma));
    f.push_back(real_field("step", "encoder step size (0: 1/(16 l1))", cfg.smoothing.step));
    f.push_back(real_field("radius", "encoder norm bound (0: 4 l1)", cfg.smoothing.radius_sq));
    f.push_back(count_field("train-steps", "task-model SGD steps per round", cfg.train.steps));
    f.push_back(count_field("train-batch", "task-model minibatch size", cfg.train.batch));
    f.push_back(real_field("train-step-size", "task-model step size", cfg.train.step_size));
    f.push_back(real_field("train-l2", "task-model L2 penalty", cfg.train.l2));
    f.push_back(count_field("similarity-every", "write the smoothed similarity every N rounds (0: never)",
                            cfg.similarity_every));
    auto workers = count_field("workers", "worker threads (outputs do not depend on it)", cfg.workers);
    workers.echoed = false;
    f.push_back(std::move(workers));
    return f;
}

/// `key = value` lines; '#' starts a comment. Unknown keys are errors.
inline void load_config(std::istream &is, const std::vector<ConfigField> &fields, const std::string &source = "config") {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string body = detail::trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        const std::string where = source + ":" + std::to_string(lineno) + ": ";
        if (eq == std::string::npos) throw config_error(where + "expected key = value");
        const std::string key = detail::trim(std::string_view(body).substr(0, eq));
        const std::string value = detail::trim(std::string_view(body).substr(eq + 1));
        auto it = std::find_if(fields.begin(), fields.end(), [&](const ConfigField &f) { return f.name == key; });
        if (it == fields.end()) throw config_error(where + "unknown key '" + key + "'");
        try {
            it->set(value);
        } catch (const config_error &e) {
            throw config_error(where + e.what());
        }
    }
}

inline void load_config(std::istream &is, ExperimentConfig &cfg, const std::string &source = "config") {
    load_config(is, config_fields(cfg), source);
}

inline void load_config_file(const std::string &path, const std::vector<ConfigField> &fields) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file '" + path + "'");
    load_config(in, fields, path);
}

inline void load_config_file(const std::string &path, ExperimentConfig &cfg) {
    load_config_file(path, config_fields(cfg));
}

/// Effective configuration, in field-table order.
inline nlohmann::ordered_json config_json(const ExperimentConfig &cfg) {
    ExperimentConfig copy = cfg;
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto &f : config_fields(copy))
        if (f.echoed) j[f.name] = f.get();
    return j;
}

// ---------------------------------------------------------------------------
// Phase 1: encoder

struct ClientState {
    std::size_t id = 0;
    int true_cluster = 0;
    std::optional<Vec> last_upload;
    std::size_t last_upload_round = 0;
    double last_upload_weight = 0.0;
    TaskModelParams received;  // model the next local training starts from
};

struct Phase1Result {
    EncoderParams encoder;
    SmoothingConfig smoothing;  // with the derived step and radius filled in
    double top_eigenvalue = 0.0;
    std::vector<double> loss;     // client-mean loss at the start of each round
    std::vector<double> grad_sq;  // ‖client mean of smoothed gradients‖² per round
};

namespace detail {

inline Mat initial_encoder(const ExperimentConfig &cfg, std::size_t input_dim, double radius_sq) {
    RngStream rng(cfg.seed, 0, 0, Purpose::Encoder);
    Mat theta(cfg.encoder_dim, input_dim);
    const double sd = 1.0 / std::sqrt(static_cast<double>(input_dim));
    for (double &v : theta.span()) v = sd * rng.normal();
    project_in_place(theta.span(), radius_sq);
    return theta;
}

/// Mean of xxᵀ over a seeded warm-up draw from every client.
inline Mat warmup_second_moment(const ExperimentConfig &cfg, const DataStream &stream) {
    const std::size_t dim = stream.config().input_dim();
    Mat m(dim, dim);
    std::size_t n = 0;
    for (std::size_t k = 0; k < cfg.clients; ++k) {
        RngStream rng(cfg.seed, k, 0, Purpose::WarmUp);
        const auto c = static_cast<std::size_t>(stream.truth()[k]);
        for (const auto &s : stream.draw_from(c, stream.client_distribution(k), cfg.warmup, rng)) {
            add_outer(m, 1.0, s.x.span(), s.x.span());
            ++n;
        }
    }
    m *= 1.0 / static_cast<double>(n);
    return m;
}

inline LossGrad client_encoder_loss(const ExperimentConfig &cfg, const DataStream &stream, const Mat &theta,
                                    const Batch &batch, std::size_t k, RngStream &rng) {
    if (cfg.encoder_loss == EncoderLoss::LinearSsl) {
        std::vector<Vec> xs, xi, xi_prime;
        for (const auto &s : batch) xs.push_back(s.x);
        if (cfg.ssl_noise > 0.0) {
            for (std::size_t i = 0; i < xs.size(); ++i) {
                Vec a(theta.rows()), b(theta.rows());
                for (double &v : a) v = cfg.ssl_noise * rng.normal();
                for (double &v : b) v = cfg.ssl_noise * rng.normal();
                xi.push_back(std::move(a));
                xi_prime.push_back(std::move(b));
            }
        }
        return ssl_linear_loss(theta, xs, xi, xi_prime);
    }
    const auto c = static_cast<std::size_t>(stream.truth()[k]);
    const std::size_t labels = cfg.num_labels;
    std::vector<ContrastiveTriple> triples;
    triples.reserve(batch.size());
    for (const auto &s : batch) {
        const auto label = static_cast<std::size_t>(s.label);
        ContrastiveTriple t{s.x, stream.draw_from(c, LabelDistribution::point_mass(labels, label), 1, rng)[0].x, {}};
        for (std::size_t r = 0; r < cfg.negatives; ++r) {
            std::size_t other = rng.index(labels - 1);
            if (other >= label) ++other;
            t.negs.push_back(stream.draw_from(c, LabelDistribution::point_mass(labels, other), 1, rng)[0].x);
        }
        triples.push_back(std::move(t));
    }
    return contrastive_loss(theta, triples);
}

}  // namespace detail

/// Rounds 1..T of local smoothed updates and size-weighted averaging; the
/// stream is advanced to round T. Every client participates.
inline Phase1Result run_phase1(const ExperimentConfig &cfg, DataStream &stream) {
    cfg.validate();
    const std::size_t dim = stream.config().input_dim();
    Phase1Result r;
    r.top_eigenvalue = top_eigenvalue(detail::warmup_second_moment(cfg, stream));
    if (!(r.top_eigenvalue > 0.0)) throw numeric_error("run_phase1: degenerate warm-up batch");
    r.smoothing = cfg.smoothing;
    if (r.smoothing.step == 0.0) r.smoothing.step = 1.0 / (16.0 * r.top_eigenvalue);
    if (r.smoothing.radius_sq == 0.0) r.smoothing.radius_sq = 4.0 * r.top_eigenvalue;
    r.smoothing.validate();
    r.encoder.theta = detail::initial_encoder(cfg, dim, r.smoothing.radius_sq);

    std::vector<GradientBuffer> buffers(cfg.clients, GradientBuffer(r.smoothing.window));
    std::vector<Mat> local(cfg.clients);
    std::vector<double> loss(cfg.clients);
    for (std::size_t t = 1; t <= cfg.rounds; ++t) {
        stream.advance_to(t);
        parallel_for(cfg.clients, cfg.workers, [&](std::size_t k) {
            const Batch batch = stream.batch(k, cfg.batch);
            RngStream rng(cfg.seed, k, t, cfg.encoder_loss == EncoderLoss::LinearSsl ? Purpose::SslNoise
                                                                                     : Purpose::Contrastive);
            Mat theta = r.encoder.theta;
            for (std::size_t s = 0; s < cfg.local_steps; ++s) {
                const LossGrad lg = detail::client_encoder_loss(cfg, stream, theta, batch, k, rng);
                if (s == 0) loss[k] = lg.loss;
                buffers[k].push((t - 1) * cfg.local_steps + s + 1, projected_gradient(theta, lg.grad, r.smoothing));
                theta = local_smoothed_update(theta, buffers[k], r.smoothing);
                project_in_place(theta.span(), r.smoothing.radius_sq);
            }
            local[k] = std::move(theta);
        });
        std::vector<std::pair<Mat, double>> weighted;
        for (std::size_t k = 0; k < cfg.clients; ++k) weighted.emplace_back(local[k], static_cast<double>(cfg.batch));
        r.encoder.theta = fedavg_aggregate(weighted);

        double mean_loss = 0.0;
        Mat mean_grad = buffers[0].smoothed(r.smoothing.gamma);
        for (std::size_t k = 0; k < cfg.clients; ++k) {
            mean_loss += loss[k] / static_cast<double>(cfg.clients);
            if (k > 0) mean_grad += buffers[k].smoothed(r.smoothing.gamma);
        }
        mean_grad *= 1.0 / static_cast<double>(cfg.clients);
        r.loss.push_back(mean_loss);
        r.grad_sq.push_back(squared_norm(mean_grad));
        if (!std::isfinite(mean_loss)) throw numeric_error("run_phase1: non-finite loss");
    }
    return r;
}

// ---------------------------------------------------------------------------
// Phase 2: task models

/// Stratified per true cluster: max(1, round(ratio·n_c)) members of each
/// cluster, sorted by client id.
inline std::vector<std::size_t> sample_participants(const std::vector<int> &truth, double ratio, std::uint64_t seed,
                                                    std::size_t round) {
    int hi = -1;
    for (int c : truth) hi = std::max(hi, c);
    std::vector<std::size_t> out;
    for (int c = 0; c <= hi; ++c) {
        std::vector<std::size_t> members;
        for (std::size_t k = 0; k < truth.size(); ++k)
            if (truth[k] == c) members.push_back(k);
        if (members.empty()) continue;
        const auto n = std::min(members.size(), std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(
                                                                           ratio * static_cast<double>(members.size())))));
        RngStream rng(seed, static_cast<std::uint64_t>(c), round, Purpose::Participation);
        for (std::size_t i = 0; i < n; ++i) std::swap(members[i], members[i + rng.index(members.size() - i)]);
        out.insert(out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n));
    }
    std::sort(out.begin(), out.end());
    return out;
}

inline FeatureSet encode_batch(const EncoderParams &enc, const Batch &batch) {
    FeatureSet fs;
    fs.z.reserve(batch.size());
    for (const auto &s : batch) {
        fs.z.push_back(encode(enc, s.x));
        fs.labels.push_back(s.label);
        fs.targets.push_back(s.target);
    }
    return fs;
}

struct Phase2Hooks {
    /// Called with (round, K×K smoothed similarity, per-client tracked ids).
    std::function<void(std::size_t, const Mat &, const std::vector<int> &)> on_similarity;
};

struct Phase2Result {
    std::vector<RoundLog> logs;
    std::vector<int> final_membership;  // tracked cluster id per client, −1 if never assigned
    std::vector<std::vector<int>> memberships;
    std::vector<std::vector<int>> truths;
};

namespace detail {

inline bool uses_affect(Scheme s) {
    return s == Scheme::FedReactA1 || s == Scheme::FedReactA2 || s == Scheme::EcMma;
}
inline bool temporal(Scheme s) { return s == Scheme::FedReactA1 || s == Scheme::FedReactA2; }

inline double evaluate(const TaskModelParams &m, const FeatureSet &test) {
    return m.kind == TaskKind::Classification ? accuracy(m, test) : rmse(m, test);
}

inline Mat submatrix(const Mat &m, const std::vector<std::size_t> &idx) {
    Mat s(idx.size(), idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < idx.size(); ++j) s(i, j) = m(idx[i], idx[j]);
    return s;
}

struct RoundScore {
    double rand = 1.0;
    double metric = 0.0;
    std::vector<std::size_t> sizes;
};

inline RoundScore score_round(const std::vector<int> &membership, const std::vector<int> &truth,
                              const std::vector<double> &client_metric, std::size_t clusters) {
    RoundScore s;
    std::vector<int> pred, real;
    double total = 0.0;
    s.sizes.assign(clusters, 0);
    for (std::size_t k = 0; k < membership.size(); ++k) {
        if (membership[k] < 0) continue;
        pred.push_back(membership[k]);
        real.push_back(truth[k]);
        total += client_metric[k];
        ++s.sizes[static_cast<std::size_t>(membership[k])];
    }
    if (pred.size() >= 2) s.rand = rand_score(pred, real);
    if (!pred.empty()) s.metric = total / static_cast<double>(pred.size());
    return s;
}

}  // namespace detail

/// Task-model rounds t = 1..T_task on data rounds T+1..T+T_task with a frozen
/// encoder, under cfg.scheme.
inline Phase2Result run_phase2(const ExperimentConfig &cfg, const EncoderParams &enc, DataStream &stream,
                               const Phase2Hooks &hooks = {}) {
    cfg.validate();
    const std::size_t K = cfg.clients;
    const std::size_t C = cfg.clusters;
    const std::size_t dim = enc.output_dim();
    const std::size_t base_round = stream.round();
    const auto blank = TaskModelParams::zeros(cfg.task, cfg.num_labels, dim);
    const std::size_t params = blank.parameter_count();
    const bool self_assign = cfg.scheme == Scheme::Ifca || cfg.scheme == Scheme::Flsc;

    std::vector<ClientState> clients(K);
    for (std::size_t k = 0; k < K; ++k) {
        clients[k].id = k;
        clients[k].received = blank;
    }
    SimilarityState sim{Mat(K, K), Mat(K, K), {}};
    std::vector<bool> seen(K, false);  // had an upload before this round
    std::vector<int> tracked;
    ClusterModelState state(C);
    std::vector<TaskModelParams> self_models;
    std::vector<int> self_assignment(K, -1);
    if (self_assign) self_models = random_cluster_models(cfg.task, cfg.num_labels, dim, C, cfg.seed);
    const TemporalRule rule = cfg.scheme == Scheme::FedReactA2 ? TemporalRule::A2 : TemporalRule::A1;

    Phase2Result out;
    CommCounters comm;
    std::vector<FeatureSet> train(K), test(K);
    std::vector<TaskModelParams> local(K);
    for (std::size_t t = 1; t <= cfg.task_rounds; ++t) {
        stream.advance_to(base_round + t);
        const std::vector<int> truth = stream.truth();
        for (std::size_t k = 0; k < K; ++k) clients[k].true_cluster = truth[k];
        const auto parts = sample_participants(truth, cfg.participation, cfg.seed, t);

        parallel_for(K, cfg.workers, [&](std::size_t k) {
            test[k] = encode_batch(enc, stream.test_batch(k, cfg.test_batch));
        });
        parallel_for(parts.size(), cfg.workers, [&](std::size_t i) {
            const std::size_t k = parts[i];
            train[k] = encode_batch(enc, stream.batch(k, cfg.batch));
        });

        RoundLog log;
        log.round = t;
        log.participants = parts.size();
        std::vector<int> membership(K, -1);
        std::vector<TaskModelParams> served(C, blank);
        std::vector<bool> has_served(C, false);

        if (self_assign) {
            std::vector<ClientBatch> batches;
            for (std::size_t k : parts) batches.push_back({k, train[k]});
            const auto r = flsc_round(self_models, batches, cfg.scheme == Scheme::Flsc ? cfg.tau : 1, cfg.train,
                                      cfg.seed, t, cfg.workers);
            self_models = r.models;
            for (std::size_t i = 0; i < parts.size(); ++i) {
                self_assignment[parts[i]] = r.hard[i];
                clients[parts[i]].last_upload = r.local[i].vectorize();
                clients[parts[i]].last_upload_round = t;
            }
            membership = self_assignment;
            served = self_models;
            has_served.assign(C, true);
            comm.upload(parts.size(), params);
            comm.download(parts.size(), C, params);
            log.comm = comm;
        } else {
            parallel_for(parts.size(), cfg.workers, [&](std::size_t i) {
                const std::size_t k = parts[i];
                RngStream rng(cfg.seed, k, t, Purpose::Train);
                local[k] = train_task_model(clients[k].received, train[k], cfg.train, rng);
            });
            for (std::size_t k : parts) {
                clients[k].last_upload = local[k].vectorize();
                clients[k].last_upload_round = t;
                clients[k].last_upload_weight = static_cast<double>(train[k].size());
            }
            comm.upload(parts.size(), params);

            std::vector<std::size_t> active;
            for (std::size_t k = 0; k < K; ++k)
                if (clients[k].last_upload) active.push_back(k);
            std::vector<Vec> uploads;
            for (std::size_t k : active) uploads.push_back(*clients[k].last_upload);
            const std::size_t ca = std::min(C, active.size());

            std::vector<int> sub(active.size(), 0);
            double a = 0.0;
            if (active.size() >= 2) {
                const Mat w = similarity_matrix(uploads);
                if (detail::uses_affect(cfg.scheme)) {
                    // pairs without history are smoothed against themselves
                    Mat prev = detail::submatrix(sim.smoothed, active);
                    for (std::size_t i = 0; i < active.size(); ++i)
                        for (std::size_t j = 0; j < active.size(); ++j)
                            if (!seen[active[i]] || !seen[active[j]]) prev(i, j) = w(i, j);
                    const AffectResult r = affect_iterate(prev, w, ca, cfg.affect_iters);
                    sub = r.membership;
                    a = r.a;
                    for (std::size_t i = 0; i < active.size(); ++i)
                        for (std::size_t j = 0; j < active.size(); ++j) {
                            sim.smoothed(active[i], active[j]) = r.smoothed(i, j);
                            sim.last_observation(active[i], active[j]) = w(i, j);
                        }
                } else {
                    sub = agglomerative(w, ca);
                    for (std::size_t i = 0; i < active.size(); ++i)
                        for (std::size_t j = 0; j < active.size(); ++j) {
                            sim.smoothed(active[i], active[j]) = w(i, j);
                            sim.last_observation(active[i], active[j]) = w(i, j);
                        }
                }
            } else if (active.size() == 1) {
                sim.smoothed(active[0], active[0]) = 1.0;
                sim.last_observation(active[0], active[0]) = 1.0;
            }
            sim.a_history.push_back(a);
            for (std::size_t k : active) seen[k] = true;
            for (std::size_t i = 0; i < active.size(); ++i) membership[active[i]] = sub[i];
            const std::vector<int> now = track_clusters(tracked, membership, C);
            membership = now;

            // this round's estimate per cluster, from participants only
            std::vector<std::optional<Vec>> estimate(C);
            std::vector<std::vector<std::size_t>> part_members(C);
            for (std::size_t k : parts) part_members[static_cast<std::size_t>(now[k])].push_back(k);
            for (std::size_t c = 0; c < C; ++c) {
                if (part_members[c].empty()) continue;
                std::vector<std::pair<Vec, double>> m;
                for (std::size_t k : part_members[c]) m.emplace_back(*clients[k].last_upload, clients[k].last_upload_weight);
                estimate[c] = cluster_weighted_average(m);
                state.current[c] = *estimate[c];
            }

            std::vector<bool> send(C, false);
            if (detail::temporal(cfg.scheme)) {
                const auto fire = broadcast_rule(now, tracked, t, cfg.task_rounds, C);
                for (std::size_t c = 0; c < C; ++c) {
                    if (!fire[c] || !estimate[c]) continue;
                    state.fold(c, *estimate[c], rule, a);
                    send[c] = true;
                }
            } else {
                for (std::size_t c = 0; c < C; ++c) send[c] = estimate[c].has_value();
            }

            for (std::size_t c = 0; c < C; ++c) {
                std::optional<Vec> model;
                if (detail::temporal(cfg.scheme) && state.temporal[c]) model = *state.temporal[c];
                else if (estimate[c]) model = *estimate[c];
                else {
                    std::vector<std::pair<Vec, double>> m;
                    for (std::size_t k : active)
                        if (now[k] == static_cast<int>(c))
                            m.emplace_back(*clients[k].last_upload, clients[k].last_upload_weight);
                    if (!m.empty()) model = cluster_weighted_average(m);
                }
                if (!model) continue;
                served[c] = TaskModelParams::from_vector(cfg.task, blank.rows(), dim, *model);
                has_served[c] = true;
            }
            std::size_t receivers = 0;
            for (std::size_t c = 0; c < C; ++c) {
                if (!send[c]) continue;
                ++log.broadcasts;
                for (std::size_t k : part_members[c]) {
                    clients[k].received = served[c];
                    ++receivers;
                }
            }
            comm.download(receivers, 1, params);
            log.comm = comm;
            log.a_t = a;
            tracked = now;
            if (hooks.on_similarity && cfg.similarity_every > 0 && t % cfg.similarity_every == 0)
                hooks.on_similarity(t, sim.smoothed, now);
        }

        std::vector<double> metric(K, 0.0);
        for (std::size_t k = 0; k < K; ++k) {
            if (membership[k] < 0) continue;
            const auto c = static_cast<std::size_t>(membership[k]);
            if (!has_served[c]) throw numeric_error("run_phase2: assigned cluster without a model");
            metric[k] = detail::evaluate(served[c], test[k]);
        }
        const auto score = detail::score_round(membership, truth, metric, C);
        log.rand_score = score.rand;
        (cfg.task == TaskKind::Classification ? log.accuracy : log.rmse) = score.metric;
        log.cluster_sizes = score.sizes;
        if (!std::isfinite(log.accuracy) || !std::isfinite(log.rmse) || !std::isfinite(log.a_t))
            throw numeric_error("run_phase2: non-finite round metric");
        out.logs.push_back(std::move(log));
        out.memberships.push_back(membership);
        out.truths.push_back(truth);
        out.final_membership = membership;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Whole experiments

struct RunSummary {
    Scheme scheme = Scheme::FedReactA1;
    std::uint64_t seed = 0;
    std::size_t rounds = 0;
    double mean_rand = 0.0;
    double mean_rand_last_half = 0.0;
    double final_rand = 0.0;
    double mean_accuracy = 0.0;
    double mean_rmse = 0.0;
    double mean_a = 0.0;
    std::size_t broadcasts = 0;
    std::uint64_t bytes_up = 0;
    std::uint64_t bytes_down = 0;
};

inline RunSummary summarize(Scheme scheme, std::uint64_t seed, const std::vector<RoundLog> &logs) {
    RunSummary s;
    s.scheme = scheme;
    s.seed = seed;
    s.rounds = logs.size();
    if (logs.empty()) return s;
    const std::size_t half = logs.size() / 2;
    for (std::size_t i = 0; i < logs.size(); ++i) {
        const auto &l = logs[i];
        s.mean_rand += l.rand_score;
        s.mean_accuracy += l.accuracy;
        s.mean_rmse += l.rmse;
        s.mean_a += l.a_t;
        s.broadcasts += l.broadcasts;
        if (i >= half) s.mean_rand_last_half += l.rand_score;
    }
    const double n = static_cast<double>(logs.size());
    s.mean_rand /= n;
    s.mean_accuracy /= n;
    s.mean_rmse /= n;
    s.mean_a /= n;
    s.mean_rand_last_half /= static_cast<double>(logs.size() - half);
    s.final_rand = logs.back().rand_score;
    s.bytes_up = logs.back().comm.bytes_up;
    s.bytes_down = logs.back().comm.bytes_down;
    return s;
}

inline nlohmann::ordered_json summary_json(const RunSummary &s) {
    nlohmann::ordered_json j;
    j["scheme"] = std::string(to_string(s.scheme));
    j["seed"] = s.seed;
    j["rounds"] = s.rounds;
    j["mean_rand"] = s.mean_rand;
    j["mean_rand_last_half"] = s.mean_rand_last_half;
    j["final_rand"] = s.final_rand;
    j["mean_accuracy"] = s.mean_accuracy;
    j["mean_rmse"] = s.mean_rmse;
    j["mean_a"] = s.mean_a;
    j["broadcasts"] = s.broadcasts;
    j["bytes_up"] = s.bytes_up;
    j["bytes_down"] = s.bytes_down;
    return j;
}

struct ExperimentResult {
    Phase1Result phase1;
    Phase2Result phase2;
    RunSummary summary;
};

/// Encoder from phase 1 unless `encoder` is given, then phase 2.
inline ExperimentResult run_experiment(const ExperimentConfig &cfg, const std::optional<EncoderParams> &encoder = {},
                                       const Phase2Hooks &hooks = {}) {
    cfg.validate();
    DataStream stream(cfg.data_config());
    ExperimentResult r;
    if (encoder) {
        if (encoder->input_dim() != stream.config().input_dim())
            throw config_error("encoder checkpoint input size does not match channels x length");
        r.phase1.encoder = *encoder;
        stream.advance_to(cfg.rounds);
    } else {
        r.phase1 = run_phase1(cfg, stream);
    }
    r.phase2 = run_phase2(cfg, r.phase1.encoder, stream, hooks);
    r.summary = summarize(cfg.scheme, cfg.seed, r.phase2.logs);
    return r;
}

/// Every scheme on seeds cfg.seed, cfg.seed+1, ...; the encoder is trained
/// once per seed so all schemes see the same encoder and batches.
inline std::vector<RunSummary> compare_schemes(const ExperimentConfig &cfg, const std::vector<Scheme> &schemes,
                                               std::size_t seeds) {
    std::vector<RunSummary> rows;
    for (std::size_t i = 0; i < seeds; ++i) {
        ExperimentConfig c = cfg;
        c.seed = cfg.seed + i;
        c.validate();
        DataStream stream(c.data_config());
        const Phase1Result p1 = run_phase1(c, stream);
        for (Scheme s : schemes) {
            c.scheme = s;
            DataStream replay(c.data_config());
            replay.advance_to(c.rounds);
            rows.push_back(summarize(s, c.seed, run_phase2(c, p1.encoder, replay).logs));
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Cluster-count estimation

/// Unit-normalized task models trained from zeros by every client on one
/// batch at data round T+1 with the phase-1 encoder, then WCSS/silhouette
/// curves over [lo, hi].
inline ClusterCountEstimate estimate_clusters(const ExperimentConfig &cfg, std::size_t lo, std::size_t hi) {
    cfg.validate();
    if (lo < 1 || lo > hi || hi > cfg.clients) throw config_error("cluster range must satisfy 1 <= lo <= hi <= k");
    if (hi - lo + 1 < 3) throw config_error("cluster range needs at least three counts");
    DataStream stream(cfg.data_config());
    const EncoderParams enc = run_phase1(cfg, stream).encoder;
    stream.advance_to(cfg.rounds + 1);
    const auto blank = TaskModelParams::zeros(cfg.task, cfg.num_labels, enc.output_dim());
    std::vector<Vec> vectors(cfg.clients);
    parallel_for(cfg.clients, cfg.workers, [&](std::size_t k) {
        const FeatureSet fs = encode_batch(enc, stream.batch(k, cfg.batch));
        RngStream rng(cfg.seed, k, cfg.rounds + 1, Purpose::Train);
        Vec v = train_task_model(blank, fs, cfg.train, rng).vectorize();
        const double n = norm(v);
        if (n > 0.0) v *= 1.0 / n;
        vectors[k] = std::move(v);
    });
    return estimate_cluster_count(vectors, lo, hi);
}

// ---------------------------------------------------------------------------
// Smoothed-gradient sweep

struct SweepConfig {
    std::uint64_t seed = 1;
    std::size_t clients = 4;
    std::size_t dim = 10;
    std::size_t out_dim = 2;
    std::size_t batch = 2;
    std::size_t rounds = 2000;
    std::vector<std::size_t> windows{1, 5, 10, 20};
    std::vector<double> gammas{0.999};
    double noise = 0.1;        // embedding noise of the linear loss
    double rotation = 0.02;    // radians per round of the covariance drift
    double radius_scale = 1.0;  // norm bound Γ = radius_scale·λ₁; step 1/(16Γ)
    bool static_data = false;  // fixed full batch, no noise, no drift
    std::size_t workers = 1;

    void validate() const {
        if (clients < 1 || dim < 2 || out_dim < 1 || out_dim > dim || batch < 1 || rounds < 1)
            throw config_error("sweep: counts must be positive with out-dim <= dim");
        if (windows.empty() || gammas.empty()) throw config_error("sweep: empty window or gamma list");
        for (auto w : windows)
            if (w < 1) throw config_error("sweep: windows must be >= 1");
        for (double g : gammas)
            if (!(g > 0.0 && g <= 1.0)) throw config_error("sweep: gammas must lie in (0, 1]");
        if (!(noise >= 0.0) || !std::isfinite(rotation)) throw config_error("sweep: bad noise or rotation");
        if (!(radius_scale > 0.0) || !std::isfinite(radius_scale)) throw config_error("sweep: radius-scale must be positive");
    }
};

struct SweepRow {
    std::size_t window = 1;
    double gamma = 1.0;
    double avg_grad_sq = 0.0;
    double final_loss = 0.0;
    double step = 0.0;
};

namespace detail {

/// Spectrum 1, 0.6, 0.3, then 0.05 for the tail.
inline std::vector<double> sweep_spectrum(std::size_t dim) {
    std::vector<double> s(dim, 0.05);
    const double head[] = {1.0, 0.6, 0.3};
    for (std::size_t i = 0; i < std::min<std::size_t>(3, dim); ++i) s[i] = head[i];
    return s;
}

/// x = R(round)·(√spectrum ⊙ g): the top two axes rotate into the next two.
inline Vec sweep_sample(const SweepConfig &cfg, const std::vector<double> &spectrum, std::size_t round,
                        RngStream &rng) {
    Vec x(cfg.dim);
    for (std::size_t i = 0; i < cfg.dim; ++i) x[i] = std::sqrt(spectrum[i]) * rng.normal();
    const double angle = cfg.static_data ? 0.0 : cfg.rotation * static_cast<double>(round);
    const double c = std::cos(angle), s = std::sin(angle);
    for (std::size_t i = 0; i + 2 < cfg.dim && i < 2; ++i) {
        const double a = x[i], b = x[i + 2];
        x[i] = c * a - s * b;
        x[i + 2] = s * a + c * b;
    }
    return x;
}

}  // namespace detail

/// Linear-loss encoder rounds with one smoothed step per client and round;
/// reports (1/T) Σ_t ‖client mean of smoothed stored gradients‖² per (w, γ).
/// The norm bound is Γ = radius_scale·λ₁ of the data second moment and the
/// step 1/(16Γ).
inline std::vector<SweepRow> theorem1_sweep(const SweepConfig &cfg) {
    cfg.validate();
    const auto spectrum = detail::sweep_spectrum(cfg.dim);
    const double l1 = *std::max_element(spectrum.begin(), spectrum.end());
    const std::size_t fixed = cfg.static_data ? std::max<std::size_t>(cfg.batch, 4 * cfg.dim) : 0;

    // static mode: one fixed batch per client
    std::vector<std::vector<Vec>> fixed_batch(cfg.clients);
    if (cfg.static_data)
        for (std::size_t k = 0; k < cfg.clients; ++k) {
            RngStream rng(cfg.seed, k, 0, Purpose::Batch);
            for (std::size_t i = 0; i < fixed; ++i) fixed_batch[k].push_back(detail::sweep_sample(cfg, spectrum, 0, rng));
        }

    std::vector<SweepRow> rows;
    for (double gamma : cfg.gammas)
        for (std::size_t w : cfg.windows) {
            SmoothingConfig sm{w, gamma, 1.0 / (16.0 * cfg.radius_scale * l1), cfg.radius_scale * l1};
            Mat theta(cfg.out_dim, cfg.dim);
            {
                RngStream rng(cfg.seed, 0, 0, Purpose::Encoder);
                for (double &v : theta.span()) v = rng.normal() / std::sqrt(static_cast<double>(cfg.dim));
                project_in_place(theta.span(), sm.radius_sq);
            }
            std::vector<GradientBuffer> buffers(cfg.clients, GradientBuffer(w));
            std::vector<Mat> local(cfg.clients);
            std::vector<double> loss(cfg.clients);
            double total = 0.0;
            double last_loss = 0.0;
            for (std::size_t t = 1; t <= cfg.rounds; ++t) {
                parallel_for(cfg.clients, cfg.workers, [&](std::size_t k) {
                    LossGrad lg;
                    if (cfg.static_data) {
                        lg = ssl_linear_loss(theta, fixed_batch[k]);
                    } else {
                        RngStream rng(cfg.seed, k, t, Purpose::Batch);
                        std::vector<Vec> xs, xi, xi_prime;
                        for (std::size_t i = 0; i < cfg.batch; ++i) xs.push_back(detail::sweep_sample(cfg, spectrum, t, rng));
                        if (cfg.noise > 0.0)
                            for (std::size_t i = 0; i < cfg.batch; ++i) {
                                Vec a(cfg.out_dim), b(cfg.out_dim);
                                for (double &v : a) v = cfg.noise * rng.normal();
                                for (double &v : b) v = cfg.noise * rng.normal();
                                xi.push_back(std::move(a));
                                xi_prime.push_back(std::move(b));
                            }
                        lg = ssl_linear_loss(theta, xs, xi, xi_prime);
                    }
                    loss[k] = lg.loss;
                    buffers[k].push(t, projected_gradient(theta, lg.grad, sm));
                    Mat next = local_smoothed_update(theta, buffers[k], sm);
                    project_in_place(next.span(), sm.radius_sq);
                    local[k] = std::move(next);
                });
                Mat mean = buffers[0].smoothed(gamma);
                for (std::size_t k = 1; k < cfg.clients; ++k) mean += buffers[k].smoothed(gamma);
                mean *= 1.0 / static_cast<double>(cfg.clients);
                total += squared_norm(mean);
                theta = global_mean(local);
                last_loss = 0.0;
                for (double l : loss) last_loss += l / static_cast<double>(cfg.clients);
            }
            if (!std::isfinite(total)) throw numeric_error("theorem1_sweep: non-finite gradient norm");
            rows.push_back({w, gamma, total / static_cast<double>(cfg.rounds), last_loss, sm.step});
        }
    return rows;
}

}  // namespace fedreact
