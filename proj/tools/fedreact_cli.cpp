// fedreact: drifting-data federated clustering experiments.
//
// Exit codes: 0 success, 2 configuration error, 3 numeric error, 1 I/O error.

#include "fedreact/fedreact.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace fedreact;
using json = nlohmann::ordered_json;

namespace {

constexpr int exit_io = 1;
constexpr int exit_config = 2;
constexpr int exit_numeric = 3;

const char *footer =
    "Outputs\n"
    "  rounds.csv      one row per task round:\n"
    "    round            task round, 1-based\n"
    "    rand_score       pair agreement of the server clustering with the true clusters\n"
    "    accuracy         client mean accuracy of its cluster model on a held-out batch drawn from\n"
    "                     the long-run label distribution of the client's cluster\n"
    "    rmse             same, regression tasks\n"
    "    a_t              forgetting factor used for the similarity this round\n"
    "    num_clusters     number of cluster ids\n"
    "    cluster_sizes    clients per cluster id, ';'-separated\n"
    "    participants     clients that trained this round\n"
    "    broadcasts       clusters whose model was sent this round\n"
    "    bytes_up         cumulative upload volume, 8 bytes per parameter\n"
    "    bytes_down       cumulative download volume\n"
    "    regret_grad_sq   0 for task rounds; encoder-round values are under encoder.grad_sq\n"
    "                     in summary.json\n"
    "  summary.json    effective configuration and aggregate metrics\n"
    "  encoder.csv     encoder checkpoint: 'rows,cols' then row-major values\n"
    "  similarity_<t>.csv  smoothed client similarity (with --similarity-every)\n"
    "  compare.csv     scheme,seed,mean_rand,mean_rand_last_half,final_rand,mean_accuracy,mean_rmse,mean_a,\n"
    "                  broadcasts,bytes_up,bytes_down\n"
    "  sweep.csv       window,gamma,avg_grad_sq,final_loss,step\n"
    "  clusters.csv    c,wcss,silhouette\n"
    "  data.csv        x0..xN,label,target,client,round; truth.csv round,client,cluster\n"
    "Every option can also be given as 'key = value' in the --config file; the\n"
    "command line wins.";

/// Options of one subcommand: recorded during parsing, applied after the
/// config file so the command line overrides it.
struct Subcommand {
    CLI::App *app = nullptr;
    std::vector<ConfigField> fields;
    std::vector<std::pair<std::string, std::string>> overrides;
    std::string config_path;

    void bind() {
        app->add_option("--config", config_path, "key = value configuration file");
        for (const auto &f : fields) {
            const std::string name = f.name;
            app->add_option_function<std::string>(
                "--" + name, [this, name](const std::string &v) { overrides.emplace_back(name, v); }, f.help);
        }
    }

    void apply() {
        if (!config_path.empty()) load_config_file(config_path, fields);
        for (const auto &[name, value] : overrides) {
            auto it = std::find_if(fields.begin(), fields.end(), [&](const ConfigField &f) { return f.name == name; });
            try {
                it->set(value);
            } catch (const config_error &e) {
                throw config_error(std::string("--") + e.what());
            }
        }
    }
};

ConfigField string_field(std::string name, std::string help, std::string &ref, bool echoed = false) {
    ConfigField f{name, std::move(help), [&ref](const std::string &v) { ref = v; }, [&ref] { return json(ref); }};
    f.echoed = echoed;
    return f;
}

fs::path prepare_dir(const std::string &dir) {
    fs::path p(dir);
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw std::runtime_error("cannot create output directory '" + dir + "'");
    return p;
}

std::ofstream open_out(const fs::path &p) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
    return out;
}

void write_json(const fs::path &p, const json &j) {
    auto out = open_out(p);
    out << j.dump(2) << '\n';
}

std::vector<std::string> split_list(const std::string &s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

json echo(const std::vector<ConfigField> &fields) {
    json j = json::object();
    for (const auto &f : fields)
        if (f.echoed) j[f.name] = f.get();
    return j;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const ExperimentConfig &cfg, const std::string &out_dir) {
    cfg.validate();
    const auto dir = prepare_dir(out_dir);
    DataStream stream(cfg.data_config());
    auto data = open_out(dir / "data.csv");
    auto truth = open_out(dir / "truth.csv");
    write_batch_csv_header(data, stream.config().input_dim());
    truth << "round,client,cluster\n";
    for (std::size_t t = 1; t <= cfg.rounds + cfg.task_rounds; ++t) {
        stream.advance_to(t);
        for (std::size_t k = 0; k < cfg.clients; ++k) {
            write_batch_csv(data, stream.batch(k, cfg.batch), k, t);
            truth << t << ',' << k << ',' << stream.truth()[k] << '\n';
        }
    }
    return 0;
}

int cmd_run(const ExperimentConfig &cfg, const std::vector<ConfigField> &fields, const std::string &out_dir,
            const std::string &encoder_in) {
    cfg.validate();
    const auto dir = prepare_dir(out_dir);
    std::optional<EncoderParams> enc;
    if (!encoder_in.empty()) {
        std::ifstream in(encoder_in);
        if (!in) throw config_error("cannot open encoder checkpoint '" + encoder_in + "'");
        enc = read_encoder(in);
    }
    Phase2Hooks hooks;
    hooks.on_similarity = [&](std::size_t t, const Mat &sim, const std::vector<int> &) {
        auto out = open_out(dir / ("similarity_" + std::to_string(t) + ".csv"));
        for (std::size_t i = 0; i < sim.rows(); ++i)
            for (std::size_t j = 0; j < sim.cols(); ++j) out << format_double(sim(i, j)) << (j + 1 < sim.cols() ? ',' : '\n');
    };
    const auto r = run_experiment(cfg, enc, hooks);

    auto rounds = open_out(dir / "rounds.csv");
    rounds << round_log_header << '\n';
    for (const auto &l : r.phase2.logs) write_round_log(rounds, l);
    {
        auto e = open_out(dir / "encoder.csv");
        write_encoder(e, r.phase1.encoder);
    }
    json j;
    j["config"] = echo(fields);
    json p1;
    p1["loaded"] = enc.has_value();
    p1["top_eigenvalue"] = r.phase1.top_eigenvalue;
    p1["step"] = r.phase1.smoothing.step;
    p1["radius"] = r.phase1.smoothing.radius_sq;
    p1["final_loss"] = r.phase1.loss.empty() ? 0.0 : r.phase1.loss.back();
    p1["loss"] = r.phase1.loss;
    p1["grad_sq"] = r.phase1.grad_sq;
    j["encoder"] = p1;
    j["summary"] = summary_json(r.summary);
    j["final_membership"] = r.phase2.final_membership;
    write_json(dir / "summary.json", j);
    std::cout << "mean_rand " << format_double(r.summary.mean_rand) << " mean_accuracy "
              << format_double(r.summary.mean_accuracy) << '\n';
    return 0;
}

int cmd_compare(const ExperimentConfig &cfg, const std::vector<ConfigField> &fields, const std::string &out_dir,
                const std::string &scheme_list, std::size_t seeds) {
    cfg.validate();
    if (seeds < 1) throw config_error("seeds must be at least 1");
    std::vector<Scheme> schemes;
    for (const auto &name : split_list(scheme_list)) {
        auto s = parse_scheme(name);
        if (!s) throw config_error("schemes: unknown scheme '" + name + "'");
        schemes.push_back(*s);
    }
    if (schemes.empty()) throw config_error("schemes: empty list");
    const auto dir = prepare_dir(out_dir);
    const auto rows = compare_schemes(cfg, schemes, seeds);
    auto csv = open_out(dir / "compare.csv");
    csv << "scheme,seed,mean_rand,mean_rand_last_half,final_rand,mean_accuracy,mean_rmse,mean_a,broadcasts,bytes_up,"
           "bytes_down\n";
    json list = json::array();
    for (const auto &s : rows) {
        csv << to_string(s.scheme) << ',' << s.seed << ',' << format_double(s.mean_rand) << ','
            << format_double(s.mean_rand_last_half) << ',' << format_double(s.final_rand) << ','
            << format_double(s.mean_accuracy) << ',' << format_double(s.mean_rmse) << ',' << format_double(s.mean_a)
            << ',' << s.broadcasts << ',' << s.bytes_up << ',' << s.bytes_down << '\n';
        list.push_back(summary_json(s));
        std::cout << to_string(s.scheme) << " seed " << s.seed << " rand " << format_double(s.mean_rand)
                  << " accuracy " << format_double(s.mean_accuracy) << '\n';
    }
    json j;
    j["config"] = echo(fields);
    j["runs"] = list;
    write_json(dir / "summary.json", j);
    return 0;
}

int cmd_estimate(const ExperimentConfig &cfg, const std::vector<ConfigField> &fields, const std::string &out_dir,
                 std::size_t lo, std::size_t hi) {
    const auto dir = prepare_dir(out_dir);
    const auto e = estimate_clusters(cfg, lo, hi);
    auto csv = open_out(dir / "clusters.csv");
    csv << "c,wcss,silhouette\n";
    for (std::size_t i = 0; i < e.counts.size(); ++i)
        csv << e.counts[i] << ',' << format_double(e.wcss[i]) << ',' << format_double(e.silhouette[i]) << '\n';
    json j;
    j["config"] = echo(fields);
    j["elbow"] = e.elbow;
    j["silhouette"] = e.silhouette_best;
    write_json(dir / "summary.json", j);
    std::cout << "elbow " << e.elbow << " silhouette " << e.silhouette_best << '\n';
    return 0;
}

int cmd_sweep(const SweepConfig &cfg, const std::vector<ConfigField> &fields, const std::string &out_dir) {
    const auto dir = prepare_dir(out_dir);
    const auto rows = theorem1_sweep(cfg);
    auto csv = open_out(dir / "sweep.csv");
    csv << "window,gamma,avg_grad_sq,final_loss,step\n";
    json list = json::array();
    for (const auto &r : rows) {
        csv << r.window << ',' << format_double(r.gamma) << ',' << format_double(r.avg_grad_sq) << ','
            << format_double(r.final_loss) << ',' << format_double(r.step) << '\n';
        list.push_back({{"window", r.window}, {"gamma", r.gamma}, {"avg_grad_sq", r.avg_grad_sq}});
        std::cout << "w " << r.window << " gamma " << format_double(r.gamma) << " avg_grad_sq "
                  << format_double(r.avg_grad_sq) << '\n';
    }
    json j;
    j["config"] = echo(fields);
    j["rows"] = list;
    write_json(dir / "summary.json", j);
    return 0;
}

std::vector<ConfigField> sweep_fields(SweepConfig &cfg, std::string &windows, std::string &gammas,
                                      std::string &is_static) {
    using detail::count_field;
    using detail::real_field;
    std::vector<ConfigField> f;
    f.push_back(count_field("seed", "base RNG seed", cfg.seed));
    f.push_back(count_field("k", "number of clients", cfg.clients));
    f.push_back(count_field("dim", "input dimension", cfg.dim));
    f.push_back(count_field("encoder-dim", "embedding dimension", cfg.out_dim));
    f.push_back(count_field("batch", "samples per client and round", cfg.batch));
    f.push_back(count_field("rounds", "rounds per configuration", cfg.rounds));
    f.push_back(string_field("windows", "comma-separated smoothing windows", windows, true));
    f.push_back(string_field("gammas", "comma-separated smoothing decays", gammas, true));
    f.push_back(real_field("ssl-noise", "standard deviation of the embedding noise", cfg.noise));
    f.push_back(real_field("rotation", "covariance rotation per round, radians", cfg.rotation));
    f.push_back(real_field("radius-scale", "norm bound as a multiple of the top eigenvalue; step 1/(16 bound)",
                           cfg.radius_scale));
    f.push_back(string_field("static", "true: fixed full batch, no noise, no drift", is_static, true));
    auto w = count_field("workers", "worker threads (outputs do not depend on it)", cfg.workers);
    w.echoed = false;
    f.push_back(std::move(w));
    return f;
}

void finish_sweep(SweepConfig &cfg, const std::string &windows, const std::string &gammas,
                  const std::string &is_static) {
    cfg.windows.clear();
    for (const auto &s : split_list(windows)) cfg.windows.push_back(detail::parse_u64("windows", s));
    cfg.gammas.clear();
    for (const auto &s : split_list(gammas)) cfg.gammas.push_back(detail::parse_real("gammas", s));
    if (is_static == "true" || is_static == "1") cfg.static_data = true;
    else if (is_static == "false" || is_static == "0") cfg.static_data = false;
    else throw config_error("static: expected true|false, got '" + is_static + "'");
    cfg.validate();
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"Clustered federated learning under data drift"};
    app.footer(footer);
    app.require_subcommand(1, 1);

    ExperimentConfig cfg;
    SweepConfig sweep;
    std::string out_dir = ".";
    std::string encoder_in;
    std::string schemes = "fedreact-a1,fedreact-a2,sc-mma,ec-mma,ifca,flsc";
    std::size_t seeds = 5;
    std::size_t lo = 1, hi = 8;
    std::string windows = "1,5,10,20", gammas = "0.999", is_static = "false";

    auto experiment = [&](const char *name, const char *help) {
        Subcommand s;
        s.app = app.add_subcommand(name, help);
        s.fields = config_fields(cfg);
        s.fields.push_back(string_field("out", "output directory", out_dir));
        return s;
    };
    Subcommand gen = experiment("gen-data", "export training batches and true clusters");
    Subcommand run = experiment("run", "train the encoder and task models under one scheme");
    run.fields.push_back(string_field("encoder-in", "load this encoder checkpoint instead of training", encoder_in));
    Subcommand cmp = experiment("compare", "paired runs of several schemes over several seeds");
    cmp.fields.push_back(string_field("schemes", "comma-separated schemes", schemes, true));
    cmp.fields.push_back(detail::count_field("seeds", "number of consecutive seeds", seeds));
    Subcommand est = experiment("estimate-clusters", "WCSS elbow and silhouette over a cluster-count range");
    est.fields.push_back(detail::count_field("cluster-min", "smallest cluster count", lo));
    est.fields.push_back(detail::count_field("cluster-max", "largest cluster count", hi));
    Subcommand swp;
    swp.app = app.add_subcommand("sweep-theorem1", "average smoothed gradient norm across windows and decays");
    swp.fields = sweep_fields(sweep, windows, gammas, is_static);
    swp.fields.push_back(string_field("out", "output directory", out_dir));
    for (Subcommand *s : {&gen, &run, &cmp, &est, &swp}) s->bind();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : exit_config;
    }

    try {
        if (*gen.app) {
            gen.apply();
            return cmd_gen_data(cfg, out_dir);
        }
        if (*run.app) {
            run.apply();
            return cmd_run(cfg, run.fields, out_dir, encoder_in);
        }
        if (*cmp.app) {
            cmp.apply();
            return cmd_compare(cfg, cmp.fields, out_dir, schemes, seeds);
        }
        if (*est.app) {
            est.apply();
            return cmd_estimate(cfg, est.fields, out_dir, lo, hi);
        }
        swp.apply();
        finish_sweep(sweep, windows, gammas, is_static);
        return cmd_sweep(sweep, swp.fields, out_dir);
    } catch (const config_error &e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_config;
    } catch (const numeric_error &e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return exit_numeric;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_io;
    }
}
