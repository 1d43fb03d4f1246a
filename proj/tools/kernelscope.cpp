// kernelscope command-line front end: generate | learn | evaluate | reproduce.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "kernelscope/io.hpp"
#include "kernelscope/pipeline.hpp"

namespace fs = std::filesystem;
using namespace kernelscope;
using nlohmann::json;

namespace {

/// Flag values; unset flags leave the config file (or default) untouched.
struct Overrides {
    std::optional<std::string> config_file;
    std::optional<std::string> system;
    std::optional<std::size_t> M, M_transfer, N_transfer, L, dprime, trials, jobs, mpls_K, n_override, M_rho, M_eval,
        L_eval;
    std::optional<double> T, mpls_lambda;
    std::optional<std::uint64_t> seed, split_seed;
    std::optional<std::string> basis, support, mpls_samples;
    std::optional<int> degree;
    bool oracle_only = false;
    bool no_affine = false;
    std::optional<std::string> out;
    std::string log_level = "warn";
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config_file, "JSON run configuration; flags override its values");
    cmd->add_option("--system", o.system, "Benchmark system")->check(CLI::IsMember({"od", "pl", "plwdc"}, CLI::ignore_case));
    cmd->add_option("--M", o.M, "Number of two-agent training trajectories");
    cmd->add_option("--M-transfer", o.M_transfer, "Number of transfer initial conditions");
    cmd->add_option("--N-transfer", o.N_transfer, "Agents in the transfer system");
    cmd->add_option("--L", o.L, "Observation times per trajectory");
    cmd->add_option("--T", o.T, "Final time");
    cmd->add_option("--dprime", o.dprime, "Intrinsic dimension (0: the system's own)");
    cmd->add_option("--seed", o.seed, "Master seed");
    cmd->add_option("--trials", o.trials, "Independent trials");
    cmd->add_option("--jobs", o.jobs, "Worker threads (0: all cores)");
    cmd->add_option("--basis", o.basis, "Basis family: piecewise_polynomial | clamped_bspline");
    cmd->add_option("--degree", o.degree, "Basis polynomial degree");
    cmd->add_option("--n-override", o.n_override, "Total basis count instead of the optimal one");
    cmd->add_option("--mpls-k", o.mpls_K, "MPLS perturbation centers");
    cmd->add_option("--mpls-lambda", o.mpls_lambda, "MPLS weight bandwidth (0: 1/D)");
    cmd->add_option("--split-seed", o.split_seed, "Seed of the MPLS sample split");
    cmd->add_option("--mpls-samples", o.mpls_samples, "Samples fed to MPLS: interacting | all");
    cmd->add_flag("--no-affine", o.no_affine, "Fit MPLS without an intercept");
    cmd->add_option("--support", o.support, "Support estimate over: interacting | all samples");
    cmd->add_option("--M-rho", o.M_rho, "Trajectories used to sample rho_T");
    cmd->add_option("--M-eval", o.M_eval, "Initial conditions for the two-agent trajectory error");
    cmd->add_option("--L-eval", o.L_eval, "Time nodes of the trajectory error");
    cmd->add_flag("--oracle-only", o.oracle_only, "Skip MPLS and use the true reduction map");
    cmd->add_option("--out", o.out, "Output directory (KERNELSCOPE_OUT takes precedence)");
    cmd->add_option("--log-level", o.log_level, "debug | info | warn | error")
        ->check(CLI::IsMember({"debug", "info", "warn", "error"}));
}

RunConfig resolve(const Overrides& o) {
    RunConfig c;
    if (o.config_file) {
        const std::string text = io::read_file(*o.config_file);
        json j;
        try {
            j = json::parse(text);
        } catch (const json::exception& e) {
            throw ConfigError("cannot parse " + *o.config_file + ": " + e.what());
        }
        apply_json(c, j);
    }
    if (o.system) c.system = *o.system;
    if (o.M) c.M = *o.M;
    if (o.M_transfer) c.M_transfer = *o.M_transfer;
    if (o.N_transfer) c.N_transfer = *o.N_transfer;
    if (o.L) c.L = *o.L;
    if (o.T) c.T = *o.T;
    if (o.dprime) c.dprime = *o.dprime;
    if (o.seed) c.seed = *o.seed;
    if (o.trials) c.trials = *o.trials;
    if (o.jobs) c.jobs = *o.jobs;
    if (o.basis) c.basis = basis_family_from_string(*o.basis);
    if (o.degree) c.degree = *o.degree;
    if (o.n_override) c.n_override = *o.n_override;
    if (o.mpls_K) c.mpls_K = *o.mpls_K;
    if (o.mpls_lambda) c.mpls_lambda = *o.mpls_lambda;
    if (o.split_seed) c.split_seed = *o.split_seed;
    if (o.mpls_samples) c.mpls_samples = mpls_samples_from_string(*o.mpls_samples);
    if (o.no_affine) c.mpls_affine = false;
    if (o.support) c.support_rule = support_rule_from_string(*o.support);
    if (o.M_rho) c.M_rho = *o.M_rho;
    if (o.M_eval) c.M_eval = *o.M_eval;
    if (o.L_eval) c.L_eval = *o.L_eval;
    if (o.oracle_only) c.oracle_only = true;
    if (o.out) c.out = *o.out;
    if (const char* env = std::getenv("KERNELSCOPE_OUT"); env != nullptr && *env != '\0') c.out = env;
    c.validate();
    return c;
}

void set_log_level(const std::string& s) {
    if (s == "debug") log::threshold() = log::Level::debug;
    else if (s == "info") log::threshold() = log::Level::info;
    else if (s == "error") log::threshold() = log::Level::error;
    else log::threshold() = log::Level::warn;
}

fs::path ensure_dir(const fs::path& p) {
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw IoError("cannot create output directory " + p.string() + ": " + ec.message());
    return p;
}

/// Writes bytes atomically and reports the path with its checksum.
void emit(const fs::path& path, const std::string& bytes) {
    io::write_file_atomic(path, bytes);
    std::cout << path.string() << "  fnv1a64=" << io::hex(io::checksum(bytes)) << '\n';
}

template <typename T>
void emit_container(const fs::path& path, const T& value) {
    emit(path, io::encode(io::to_container(value)));
}

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Tab-separated columns with a header row.
class Table {
public:
    explicit Table(std::vector<std::string> columns) : width_(columns.size()) { row_strings(columns); }

    void row(const std::vector<double>& values) {
        std::vector<std::string> s;
        s.reserve(values.size());
        for (double v : values) s.push_back(num(v));
        row_strings(s);
    }

    const std::string& text() const { return text_; }

private:
    void row_strings(const std::vector<std::string>& cells) {
        if (cells.size() != width_) throw UsageError("plot table row has the wrong width");
        for (std::size_t k = 0; k < cells.size(); ++k) {
            if (k > 0) text_ += '\t';
            text_ += cells[k];
        }
        text_ += '\n';
    }

    std::size_t width_;
    std::string text_;
};

void write_config(const fs::path& dir, const RunConfig& cfg) { emit(dir / "config.json", to_json(cfg).dump(2) + "\n"); }

// ---------------------------------------------------------------- generate

int cmd_generate(const RunConfig& cfg, std::size_t trial) {
    const fs::path dir = ensure_dir(cfg.out);
    const BenchmarkSpec b = cfg.benchmark();
    const TrialSeeds seeds = TrialSeeds::derive(cfg.seed, trial);
    const TrajectorySet train = generate_dataset(make_system(cfg, b, cfg.N, seeds.train), cfg.M, cfg.jobs);
    const TrajectorySet transfer =
        generate_dataset(make_system(cfg, b, cfg.N_transfer, seeds.transfer), cfg.M_transfer, cfg.jobs);
    write_config(dir, cfg);
    emit_container(dir / "train.ksc", train);
    emit_container(dir / "transfer.ksc", transfer);
    return 0;
}

// ---------------------------------------------------------------- learn

int cmd_learn(const RunConfig& cfg, std::size_t trial, const std::optional<std::string>& data) {
    const fs::path dir = ensure_dir(cfg.out);
    const BenchmarkSpec b = cfg.benchmark();
    const TrialSeeds seeds = TrialSeeds::derive(cfg.seed, trial);
    const TrajectorySet train = io::load_trajectories(data ? fs::path(*data) : dir / "train.ksc");
    if (train.system != b.name)
        log::warn("learn: dataset was generated by " + train.system + ", config names " + b.name);
    const LearnResult r = learn(cfg, b, train, seeds.split);
    if (r.mpls) {
        json j;
        j["beta_hat"] = std::vector<double>(r.mpls->beta_hat.data(), r.mpls->beta_hat.data() + r.mpls->beta_hat.size());
        j["intercept"] = r.mpls->intercept;
        j["singular_values"] = std::vector<double>(r.mpls->singular_values.data(),
                                                   r.mpls->singular_values.data() + r.mpls->singular_values.size());
        j["provenance"] = to_string(r.learned->reduction.provenance);
        emit(dir / "mpls.json", j.dump(2) + "\n");
        emit_container(dir / "reduction_map.ksc", r.learned->reduction);
        emit_container(dir / "model.ksc", *r.learned);
    }
    if (r.oracle) emit_container(dir / "oracle_model.ksc", *r.oracle);
    return 0;
}

// ---------------------------------------------------------------- evaluate

constexpr std::size_t scatter_cap = 20000;
constexpr std::size_t hist_bins = 64;

std::vector<double> project(const ReductionMap& B, std::span<const double> y) { return B.project(y); }

void kernel_grid(const fs::path& path, const KernelModel& m, const BenchmarkSpec* truth) {
    const std::size_t dp = m.reduction.dprime();
    if (dp > 2) return;
    std::vector<std::string> cols;
    for (std::size_t k = 0; k < dp; ++k) cols.push_back("t" + std::to_string(k + 1));
    cols.push_back("psi_hat");
    if (truth != nullptr) cols.push_back("phi_true");
    Table tab(cols);
    const std::size_t per = dp == 1 ? 512 : 128;
    std::vector<double> t(dp);
    const std::size_t total = dp == 1 ? per : per * per;
    for (std::size_t q = 0; q < total; ++q) {
        std::size_t rem = q;
        for (std::size_t k = dp; k-- > 0;) {
            const std::size_t i = rem % per;
            rem /= per;
            t[k] = m.space.lower[k] + (m.space.upper[k] - m.space.lower[k]) * static_cast<double>(i) / static_cast<double>(per - 1);
        }
        std::vector<double> row = t;
        row.push_back(m.evaluate_reduced(t));
        if (truth != nullptr) row.push_back(truth->true_phi(t));
        tab.row(row);
    }
    emit(path, tab.text());
}

void histogram(const fs::path& path, const KernelModel& m, const RhoSamples& rho) {
    const std::size_t dp = m.reduction.dprime();
    if (dp > 2) return;
    const std::size_t per = dp == 1 ? hist_bins : 32;
    std::vector<double> count(dp == 1 ? per : per * per, 0.0);
    std::vector<double> t(dp);
    for (std::size_t q = 0; q < rho.size(); ++q) {
        m.reduction.project(rho.features(q), t);
        std::size_t cell = 0;
        bool inside = true;
        for (std::size_t k = 0; k < dp; ++k) {
            const double s = (t[k] - m.space.lower[k]) / (m.space.upper[k] - m.space.lower[k]);
            if (s < 0.0 || s > 1.0) inside = false;
            cell = cell * per + std::min(per - 1, static_cast<std::size_t>(std::max(0.0, s) * static_cast<double>(per)));
        }
        if (inside) count[cell] += 1.0;
    }
    std::vector<std::string> cols;
    for (std::size_t k = 0; k < dp; ++k) {
        cols.push_back("t" + std::to_string(k + 1) + "_lo");
        cols.push_back("t" + std::to_string(k + 1) + "_hi");
    }
    cols.push_back("count");
    Table tab(cols);
    for (std::size_t c = 0; c < count.size(); ++c) {
        std::vector<double> row;
        std::size_t rem = c;
        std::vector<std::size_t> idx(dp);
        for (std::size_t k = dp; k-- > 0;) {
            idx[k] = rem % per;
            rem /= per;
        }
        for (std::size_t k = 0; k < dp; ++k) {
            const double w = (m.space.upper[k] - m.space.lower[k]) / static_cast<double>(per);
            row.push_back(m.space.lower[k] + w * static_cast<double>(idx[k]));
            row.push_back(m.space.lower[k] + w * static_cast<double>(idx[k] + 1));
        }
        row.push_back(count[c]);
        tab.row(row);
    }
    emit(path, tab.text());
}

void scatter(const fs::path& path, const ReductionMap& truth, const ReductionMap& est, const RhoSamples& rho) {
    std::vector<std::string> cols;
    for (std::size_t k = 0; k < truth.dprime(); ++k) cols.push_back("By" + std::to_string(k + 1));
    for (std::size_t k = 0; k < est.dprime(); ++k) cols.push_back("Bhat_y" + std::to_string(k + 1));
    Table tab(cols);
    const std::size_t n = std::min(rho.size(), scatter_cap);
    for (std::size_t q = 0; q < n; ++q) {
        std::vector<double> row = project(truth, rho.features(q));
        const std::vector<double> e = project(est, rho.features(q));
        row.insert(row.end(), e.begin(), e.end());
        tab.row(row);
    }
    emit(path, tab.text());
}

void trajectories(const fs::path& path, const SystemSpec& spec, const PairKernel& estimated, std::span<const double> x0,
                  std::size_t L_eval) {
    std::vector<std::string> cols = {"t", "agent"};
    for (std::size_t j = 0; j < spec.d; ++j) cols.push_back("x" + std::to_string(j + 1));
    for (std::size_t j = 0; j < spec.d; ++j) cols.push_back("xhat" + std::to_string(j + 1));
    Table tab(cols);
    const TrajectoryPair pair = simulate_pair(spec, estimated, x0, L_eval);
    for (std::size_t l = 0; l < pair.truth.times.size(); ++l) {
        const auto a = pair.truth.state(l);
        const auto e = pair.estimate.state(l);
        for (std::size_t i = 0; i < spec.N; ++i) {
            std::vector<double> row = {pair.truth.times[l], static_cast<double>(i)};
            for (std::size_t j = 0; j < spec.d; ++j) row.push_back(a[i * spec.d + j]);
            for (std::size_t j = 0; j < spec.d; ++j) row.push_back(e[i * spec.d + j]);
            tab.row(row);
        }
    }
    emit(path, tab.text());
}

int cmd_evaluate(const RunConfig& cfg, std::size_t trial) {
    const fs::path dir = ensure_dir(cfg.out);
    const BenchmarkSpec b = cfg.benchmark();
    const TrialSeeds seeds = TrialSeeds::derive(cfg.seed, trial);
    LearnResult models;
    const fs::path learned_path = dir / "model.ksc";
    const fs::path oracle_path = dir / "oracle_model.ksc";
    if (!cfg.oracle_only && fs::exists(learned_path)) models.learned = io::load_kernel_model(learned_path);
    if (fs::exists(oracle_path)) models.oracle = io::load_kernel_model(oracle_path);
    if (!models.learned && !models.oracle)
        throw IoError("no model files in " + dir.string() + " (expected model.ksc or oracle_model.ksc; run learn first)");

    std::vector<std::vector<double>> transfer_ics;
    const fs::path transfer_path = dir / "transfer.ksc";
    if (fs::exists(transfer_path)) {
        const TrajectorySet t = io::load_trajectories(transfer_path);
        for (std::size_t m = 0; m < t.M; ++m) {
            const auto s = t.state(m, 0);
            transfer_ics.emplace_back(s.begin(), s.end());
        }
    } else {
        transfer_ics = transfer_initial_conditions(cfg, b, seeds);
    }

    const TrialResult r = evaluate(cfg, b, models, seeds, transfer_ics);
    ErrorReport rep;
    rep.system = b.name;
    append(rep, r);
    emit(dir / "table.txt", format_table(rep));
    emit(dir / "report.json", to_json(rep).dump(2) + "\n");

    const fs::path plots = ensure_dir(dir / "plots");
    const RhoSamples rho = sample_rho_T(make_system(cfg, b, cfg.N, seeds.rho), cfg.M_rho, cfg.jobs);
    const KernelModel& main = models.learned ? *models.learned : *models.oracle;
    if (models.learned) {
        scatter(plots / "features_scatter.tsv", b.true_B, models.learned->reduction, rho);
        kernel_grid(plots / "kernel_learned.tsv", *models.learned, nullptr);
        histogram(plots / "hist_learned.tsv", *models.learned, rho);
    }
    if (models.oracle) {
        kernel_grid(plots / "kernel_oracle.tsv", *models.oracle, &b);
        histogram(plots / "hist_oracle.tsv", *models.oracle, rho);
    }
    const PairKernel estimated = main.as_pair_kernel();
    const SystemSpec two = make_system(cfg, b, cfg.N, seeds.eval);
    trajectories(plots / "trajectory_N2.tsv", two, estimated, sample_initial_condition(two, 0), cfg.L_eval);
    if (!transfer_ics.empty())
        trajectories(plots / "trajectory_transfer.tsv", make_system(cfg, b, cfg.N_transfer, seeds.transfer), estimated,
                     transfer_ics.front(), cfg.L_eval);
    std::cout << format_table(rep);
    return 0;
}

// ---------------------------------------------------------------- reproduce

int cmd_reproduce(const RunConfig& cfg) {
    const fs::path dir = ensure_dir(cfg.out);
    const ErrorReport rep = reproduce(cfg, [](std::size_t t, const TrialArtifacts& a) {
        log::info("trial " + std::to_string(t) + " done, Err_phi^rel = " + std::to_string(a.result.err_phi_rel));
    });
    std::string key;
    for (char c : rep.system) key += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    const std::string table = format_table(rep);
    emit(dir / ("table_" + key + ".txt"), table);
    emit(dir / ("trials_" + key + ".json"), to_json(rep).dump(2) + "\n");
    std::cout << table;
    for (const auto& f : rep.failures) std::cerr << "failed " << f << '\n';
    return rep.failures.empty() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Learn interaction variables and kernels of agent-based systems"};
    app.require_subcommand(1);
    Overrides o;
    std::size_t trial = 0;
    std::optional<std::string> data;
    std::optional<std::string> positional_system;

    auto* gen = app.add_subcommand("generate", "Simulate the training and transfer datasets");
    auto* lrn = app.add_subcommand("learn", "Estimate B_hat and the kernel from a training dataset");
    auto* evl = app.add_subcommand("evaluate", "Compute error measures and plot data for learned models");
    auto* rep = app.add_subcommand("reproduce", "Run the full pipeline over several trials and print the error table");
    for (auto* cmd : {gen, lrn, evl, rep}) add_common(cmd, o);
    for (auto* cmd : {gen, lrn, evl}) cmd->add_option("--trial", trial, "Trial index whose seeds are used");
    lrn->add_option("--data", data, "Training dataset (default: <out>/train.ksc)");
    rep->add_option("benchmark", positional_system, "Benchmark system (same as --system)")
        ->check(CLI::IsMember({"od", "pl", "plwdc"}, CLI::ignore_case));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        set_log_level(o.log_level);
        if (positional_system) {
            if (o.system && *o.system != *positional_system) throw UsageError("conflicting system names");
            o.system = positional_system;
        }
        const RunConfig cfg = resolve(o);
        if (*gen) return cmd_generate(cfg, trial);
        if (*lrn) return cmd_learn(cfg, trial, data);
        if (*evl) return cmd_evaluate(cfg, trial);
        return cmd_reproduce(cfg);
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
