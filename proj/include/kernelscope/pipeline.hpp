#pragma once

// End-to-end experiment orchestration shared by the CLI and the acceptance
// suite: generate data, learn (B_hat, psi) and the oracle psi with the true B,
// evaluate, and aggregate over independent trials.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kernelscope/benchmarks.hpp"
#include "kernelscope/dynamics.hpp"
#include "kernelscope/features.hpp"
#include "kernelscope/log.hpp"
#include "kernelscope/metrics.hpp"
#include "kernelscope/mpls.hpp"
#include "kernelscope/parallel.hpp"
#include "kernelscope/regression.hpp"
#include "kernelscope/rng.hpp"

namespace kernelscope {

/// Which regression samples feed MPLS and the selection in assemble_B.
enum class MplsSamples { all, interacting };

inline std::string to_string(MplsSamples s) { return s == MplsSamples::all ? "all" : "interacting"; }

inline MplsSamples mpls_samples_from_string(const std::string& s) {
    if (s == "all") return MplsSamples::all;
    if (s == "interacting") return MplsSamples::interacting;
    throw ConfigError("unknown MPLS sample set '" + s + "' (expected all or interacting)");
}

inline std::string to_string(SupportRule r) { return r == SupportRule::all_samples ? "all" : "interacting"; }

inline SupportRule support_rule_from_string(const std::string& s) {
    if (s == "all") return SupportRule::all_samples;
    if (s == "interacting") return SupportRule::interacting_samples;
    throw ConfigError("unknown support rule '" + s + "' (expected all or interacting)");
}

struct RunConfig {
    std::string system = "pl";
    std::size_t M = 50000;
    std::size_t M_transfer = 500;
    std::size_t N = 2;
    std::size_t N_transfer = 20;
    std::size_t L = 5;
    double T = 1.0;
    std::size_t d = 2;
    std::size_t substeps = 200;
    /// 0 selects the benchmark's intrinsic dimension.
    std::size_t dprime = 0;
    std::size_t mpls_K = 50;
    /// 0 selects 1/D.
    double mpls_lambda = 0.0;
    /// Unset: derived from the trial seed.
    std::optional<std::uint64_t> split_seed;
    bool project_centers = true;
    bool mpls_affine = true;
    MplsSamples mpls_samples = MplsSamples::interacting;
    /// Unset: the benchmark's default family and degree.
    std::optional<BasisFamily> basis;
    std::optional<int> degree;
    /// Total basis count; 0 selects the optimal count for L, M, d'.
    std::size_t n_override = 0;
    SupportRule support_rule = SupportRule::interacting_samples;
    std::size_t trials = 10;
    std::uint64_t seed = 1;
    std::size_t jobs = 0;
    std::size_t M_rho = 2000;
    std::size_t M_eval = 500;
    std::size_t L_eval = 100;
    bool oracle_only = false;
    std::vector<double> v0 = {1.0, 0.0};
    std::string out = "kernelscope_out";

    BenchmarkSpec benchmark() const {
        BenchmarkSpec b = build_benchmark(system, v0);
        b.common.M = M;
        b.common.M_transfer = M_transfer;
        b.common.N = N;
        b.common.N_transfer = N_transfer;
        b.common.L = L;
        b.common.T = T;
        if (d != 2) throw ConfigError("the benchmark systems are defined for d = 2");
        return b;
    }

    std::size_t intrinsic_dimension(const BenchmarkSpec& b) const { return dprime == 0 ? b.dprime : dprime; }

    void validate() const {
        if (M < 1) throw ConfigError("M must be positive");
        if (N < 2 || N_transfer < 2) throw ConfigError("agent counts must be at least 2");
        if (L < 2) throw ConfigError("L must be at least 2");
        if (!(T > 0.0)) throw ConfigError("T must be positive");
        if (trials < 1) throw ConfigError("need at least one trial");
        if (L_eval < 2) throw ConfigError("L_eval must be at least 2");
        if (v0.size() != 2) throw ConfigError("v0 must be a 2-vector");
    }
};

/// Writes every RunConfig field under its own name.
inline nlohmann::json to_json(const RunConfig& c) {
    using nlohmann::json;
    json j;
    j["system"] = c.system;
    j["M"] = c.M;
    j["M_transfer"] = c.M_transfer;
    j["N"] = c.N;
    j["N_transfer"] = c.N_transfer;
    j["L"] = c.L;
    j["T"] = c.T;
    j["d"] = c.d;
    j["substeps"] = c.substeps;
    j["dprime"] = c.dprime;
    j["mpls_K"] = c.mpls_K;
    j["mpls_lambda"] = c.mpls_lambda;
    j["split_seed"] = c.split_seed ? json(*c.split_seed) : json(nullptr);
    j["project_centers"] = c.project_centers;
    j["mpls_affine"] = c.mpls_affine;
    j["mpls_samples"] = to_string(c.mpls_samples);
    j["basis"] = c.basis ? json(to_string(*c.basis)) : json(nullptr);
    j["degree"] = c.degree ? json(*c.degree) : json(nullptr);
    j["n_override"] = c.n_override;
    j["support_rule"] = to_string(c.support_rule);
    j["trials"] = c.trials;
    j["seed"] = c.seed;
    j["jobs"] = c.jobs;
    j["M_rho"] = c.M_rho;
    j["M_eval"] = c.M_eval;
    j["L_eval"] = c.L_eval;
    j["oracle_only"] = c.oracle_only;
    j["v0"] = c.v0;
    j["out"] = c.out;
    return j;
}

/// Overwrites the fields present in `j`; unknown keys are rejected.
inline void apply_json(RunConfig& c, const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, v] : j.items()) {
        try {
            if (key == "system") c.system = v.get<std::string>();
            else if (key == "M") c.M = v.get<std::size_t>();
            else if (key == "M_transfer") c.M_transfer = v.get<std::size_t>();
            else if (key == "N") c.N = v.get<std::size_t>();
            else if (key == "N_transfer") c.N_transfer = v.get<std::size_t>();
            else if (key == "L") c.L = v.get<std::size_t>();
            else if (key == "T") c.T = v.get<double>();
            else if (key == "d") c.d = v.get<std::size_t>();
            else if (key == "substeps") c.substeps = v.get<std::size_t>();
            else if (key == "dprime") c.dprime = v.get<std::size_t>();
            else if (key == "mpls_K") c.mpls_K = v.get<std::size_t>();
            else if (key == "mpls_lambda") c.mpls_lambda = v.get<double>();
            else if (key == "split_seed") c.split_seed = v.is_null() ? std::nullopt : std::optional(v.get<std::uint64_t>());
            else if (key == "project_centers") c.project_centers = v.get<bool>();
            else if (key == "mpls_affine") c.mpls_affine = v.get<bool>();
            else if (key == "mpls_samples") c.mpls_samples = mpls_samples_from_string(v.get<std::string>());
            else if (key == "basis") c.basis = v.is_null() ? std::nullopt : std::optional(basis_family_from_string(v.get<std::string>()));
            else if (key == "degree") c.degree = v.is_null() ? std::nullopt : std::optional(v.get<int>());
            else if (key == "n_override") c.n_override = v.get<std::size_t>();
            else if (key == "support_rule") c.support_rule = support_rule_from_string(v.get<std::string>());
            else if (key == "trials") c.trials = v.get<std::size_t>();
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else if (key == "jobs") c.jobs = v.get<std::size_t>();
            else if (key == "M_rho") c.M_rho = v.get<std::size_t>();
            else if (key == "M_eval") c.M_eval = v.get<std::size_t>();
            else if (key == "L_eval") c.L_eval = v.get<std::size_t>();
            else if (key == "oracle_only") c.oracle_only = v.get<bool>();
            else if (key == "v0") c.v0 = v.get<std::vector<double>>();
            else if (key == "out") c.out = v.get<std::string>();
            else throw ConfigError("unknown config key '" + key + "'");
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config key '" + key + "': " + e.what());
        }
    }
}

/// Independent seeds of one trial.
struct TrialSeeds {
    std::uint64_t train, transfer, rho, eval, split;

    static TrialSeeds derive(std::uint64_t master, std::size_t trial) {
        const std::uint64_t t = derive_seed(master, trial);
        return {derive_seed(t, 1), derive_seed(t, 2), derive_seed(t, 3), derive_seed(t, 4), derive_seed(t, 5)};
    }
};

inline SystemSpec make_system(const RunConfig& cfg, const BenchmarkSpec& b, std::size_t N, std::uint64_t seed) {
    SystemSpec s = b.system(N, seed);
    s.substeps = cfg.substeps;
    return s;
}

inline HypothesisSpace make_space(const RunConfig& cfg, const BenchmarkSpec& b, const SupportBox& support,
                                  std::size_t dprime, std::size_t M) {
    const std::size_t n_total = cfg.n_override > 0 ? cfg.n_override : optimal_basis_count(cfg.L, M, dprime);
    const std::size_t per_dim = per_dimension_count(n_total, dprime);
    return HypothesisSpace::with_functions_per_dim(cfg.basis.value_or(b.default_basis), cfg.degree.value_or(b.default_degree),
                                                   support.lower, support.upper, per_dim);
}

struct LearnResult {
    std::optional<MplsResult> mpls;
    std::optional<KernelModel> learned;
    std::optional<KernelModel> oracle;
};

/// Step 1 (samples, MPLS, B_hat) and step 2 (support, basis, fit) on a
/// two-agent training set; the oracle model uses the true B.
inline LearnResult learn(const RunConfig& cfg, const BenchmarkSpec& b, const TrajectorySet& train,
                         std::uint64_t split_seed) {
    const std::size_t dp = cfg.intrinsic_dimension(b);
    LearnResult out;
    const SampleSet samples = extract_regression_samples(train);
    log::info("learn: " + std::to_string(samples.size()) + " regression samples");

    if (!cfg.oracle_only) {
        MplsConfig mc;
        mc.K = cfg.mpls_K;
        mc.lambda = cfg.mpls_lambda;
        mc.split_seed = cfg.split_seed.value_or(split_seed);
        mc.project_centers = cfg.project_centers;
        mc.affine = cfg.mpls_affine;
        mc.jobs = cfg.jobs;
        SampleSet subset;
        const SampleSet* used = &samples;
        if (cfg.mpls_samples == MplsSamples::interacting) {
            subset = interacting_subset(samples);
            if (subset.size() >= std::max(2 * subset.D, 2 * mc.K)) {
                used = &subset;
                log::info("learn: MPLS on " + std::to_string(subset.size()) + " interacting samples");
            } else {
                log::warn("learn: too few interacting samples for MPLS, using all samples");
            }
        }
        try {
            out.mpls = mpls(*used, dp, mc);
        } catch (const Error& e) {
            throw Error(std::string("learn/mpls: ") + e.what());
        }
        const ReductionMap B_hat = assemble_B(*used, *out.mpls, dp);
        log::info(std::string("learn: reduction provenance ") + to_string(B_hat.provenance));
        try {
            const HypothesisSpace space = make_space(cfg, b, estimate_support(samples, B_hat, cfg.support_rule), dp, train.M);
            out.learned = fit_kernel(train, B_hat, space, cfg.jobs);
        } catch (const Error& e) {
            throw Error(std::string("learn/fit: ") + e.what());
        }
    }
    if (b.true_B.dprime() == dp) {
        try {
            const HypothesisSpace space = make_space(cfg, b, estimate_support(samples, b.true_B, cfg.support_rule), dp, train.M);
            out.oracle = fit_kernel(train, b.true_B, space, cfg.jobs);
        } catch (const Error& e) {
            throw Error(std::string("learn/oracle fit: ") + e.what());
        }
    }
    return out;
}

struct TrialResult {
    double err_B = std::numeric_limits<double>::quiet_NaN();
    double err_B_frobenius = std::numeric_limits<double>::quiet_NaN();
    double err_phi_abs = std::numeric_limits<double>::quiet_NaN();
    double err_phi_rel = std::numeric_limits<double>::quiet_NaN();
    double err_phi_rel_oracle = std::numeric_limits<double>::quiet_NaN();
    double err_traj_rel_mean = std::numeric_limits<double>::quiet_NaN();
    double err_traj_rel_mean_transfer = std::numeric_limits<double>::quiet_NaN();
    std::string provenance;
};

/// Initial conditions of the transfer population for a trial.
inline std::vector<std::vector<double>> transfer_initial_conditions(const RunConfig& cfg, const BenchmarkSpec& b,
                                                                   const TrialSeeds& seeds) {
    return sample_initial_conditions(make_system(cfg, b, cfg.N_transfer, seeds.transfer), cfg.M_transfer);
}

/// Every metric for the learned and oracle models. The learned pair drives
/// the trajectory comparisons; the oracle enters the kernel error only.
inline TrialResult evaluate(const RunConfig& cfg, const BenchmarkSpec& b, const LearnResult& learned,
                            const TrialSeeds& seeds, const std::vector<std::vector<double>>& transfer_ics) {
    TrialResult r;
    const RhoSamples rho = sample_rho_T(make_system(cfg, b, cfg.N, seeds.rho), cfg.M_rho, cfg.jobs);
    if (learned.oracle) r.err_phi_rel_oracle = err_phi(b.true_B, b.true_phi, *learned.oracle, rho).relative;
    const KernelModel* model = learned.learned ? &*learned.learned : (learned.oracle ? &*learned.oracle : nullptr);
    if (model == nullptr) return r;
    if (learned.learned) {
        r.err_B = err_B(b.true_B, model->reduction);
        r.err_B_frobenius = err_B_frobenius(b.true_B, model->reduction);
    }
    r.provenance = to_string(model->reduction.provenance);
    const KernelError ke = err_phi(b.true_B, b.true_phi, *model, rho);
    r.err_phi_abs = ke.absolute;
    r.err_phi_rel = ke.relative;
    const PairKernel estimated = model->as_pair_kernel();
    r.err_traj_rel_mean = err_traj(make_system(cfg, b, cfg.N, seeds.eval), estimated, cfg.M_eval, cfg.L_eval, cfg.jobs).relative_mean;
    if (!transfer_ics.empty())
        r.err_traj_rel_mean_transfer =
            err_traj_from(make_system(cfg, b, cfg.N_transfer, seeds.transfer), estimated, transfer_ics, cfg.L_eval, cfg.jobs)
                .relative_mean;
    return r;
}

struct TrialArtifacts {
    TrajectorySet train;
    LearnResult learned;
    TrialResult result;
};

inline TrialArtifacts run_trial(const RunConfig& cfg, std::size_t trial) {
    const BenchmarkSpec b = cfg.benchmark();
    const TrialSeeds seeds = TrialSeeds::derive(cfg.seed, trial);
    TrialArtifacts a;
    a.train = generate_dataset(make_system(cfg, b, cfg.N, seeds.train), cfg.M, cfg.jobs);
    a.learned = learn(cfg, b, a.train, seeds.split);
    a.result = evaluate(cfg, b, a.learned, seeds, transfer_initial_conditions(cfg, b, seeds));
    return a;
}

inline void append(ErrorReport& rep, const TrialResult& r) {
    rep.err_B.push_back(r.err_B);
    rep.err_B_frobenius.push_back(r.err_B_frobenius);
    rep.err_phi_abs.push_back(r.err_phi_abs);
    rep.err_phi_rel.push_back(r.err_phi_rel);
    rep.err_phi_rel_oracle.push_back(r.err_phi_rel_oracle);
    rep.err_traj_rel_mean.push_back(r.err_traj_rel_mean);
    rep.err_traj_rel_mean_transfer.push_back(r.err_traj_rel_mean_transfer);
    rep.provenance.push_back(r.provenance);
}

/// Runs cfg.trials independent trials, several at once when cfg.jobs allows
/// (each then runs single-threaded). A failing trial is logged and leaves NaN
/// entries; the table marks such rows incomplete. on_trial calls are serialized.
template <typename OnTrial>
ErrorReport reproduce(RunConfig cfg, OnTrial&& on_trial) {
    cfg.validate();
    ErrorReport rep;
    rep.system = cfg.benchmark().name;
    std::vector<TrialResult> results(cfg.trials);
    std::vector<std::string> failures(cfg.trials);
    const std::size_t outer = std::min(resolve_jobs(cfg.jobs), cfg.trials);
    RunConfig inner = cfg;
    if (outer > 1) inner.jobs = 1;
    std::mutex callback;
    parallel_for(
        cfg.trials,
        [&](std::size_t t) {
            try {
                TrialArtifacts a = run_trial(inner, t);
                results[t] = a.result;
                const std::lock_guard<std::mutex> lock(callback);
                on_trial(t, a);
            } catch (const std::exception& e) {
                failures[t] = e.what();
                log::warn("trial " + std::to_string(t) + " failed: " + e.what());
            }
        },
        outer);
    for (std::size_t t = 0; t < cfg.trials; ++t) {
        append(rep, results[t]);
        if (!failures[t].empty()) rep.failures.push_back("trial " + std::to_string(t) + ": " + failures[t]);
    }
    return rep;
}

inline ErrorReport reproduce(const RunConfig& cfg) {
    return reproduce(cfg, [](std::size_t, const TrialArtifacts&) {});
}

namespace detail {

inline std::string sci(double v) {
    if (!std::isfinite(v)) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return buf;
}

}  // namespace detail

/// Table rows in the order and with the names of the published error tables.
inline std::vector<std::pair<std::string, const std::vector<double>*>> table_rows(const ErrorReport& rep) {
    return {{"Err_B", &rep.err_B},
            {"Err_phi^rel", &rep.err_phi_rel},
            {"Err_phi^rel (Oracle)", &rep.err_phi_rel_oracle},
            {"Err_traj,mean^rel", &rep.err_traj_rel_mean},
            {"Err_traj,mean^rel (Transfer)", &rep.err_traj_rel_mean_transfer}};
}

inline std::string format_table(const ErrorReport& rep) {
    std::ostringstream os;
    const std::size_t trials = rep.err_B.size();
    os << rep.system << " Errors (" << trials << (trials == 1 ? " trial" : " trials") << ", mean +- std)\n";
    for (const auto& [name, values] : table_rows(rep)) {
        const Summary s = summarize(*values);
        char label[40];
        std::snprintf(label, sizeof label, "%-30s", name.c_str());
        os << label << detail::sci(s.mean);
        if (std::isfinite(s.stddev)) os << " +- " << detail::sci(s.stddev);
        if (s.count < values->size()) os << "  (incomplete: " << s.count << " of " << values->size() << " trials)";
        os << '\n';
    }
    return os.str();
}

inline nlohmann::json to_json(const ErrorReport& rep) {
    using nlohmann::json;
    auto arr = [](const std::vector<double>& v) {
        json a = json::array();
        for (double x : v) a.push_back(std::isfinite(x) ? json(x) : json(nullptr));
        return a;
    };
    auto summary = [](const std::vector<double>& v) {
        const Summary s = summarize(v);
        return json{{"mean", std::isfinite(s.mean) ? json(s.mean) : json(nullptr)},
                    {"std", std::isfinite(s.stddev) ? json(s.stddev) : json(nullptr)},
                    {"count", s.count}};
    };
    json j;
    j["system"] = rep.system;
    j["trials"] = rep.err_B.size();
    const std::pair<const char*, const std::vector<double>*> fields[] = {
        {"err_B", &rep.err_B},
        {"err_B_frobenius", &rep.err_B_frobenius},
        {"err_phi_abs", &rep.err_phi_abs},
        {"err_phi_rel", &rep.err_phi_rel},
        {"err_phi_rel_oracle", &rep.err_phi_rel_oracle},
        {"err_traj_rel_mean", &rep.err_traj_rel_mean},
        {"err_traj_rel_mean_transfer", &rep.err_traj_rel_mean_transfer}};
    for (const auto& [key, values] : fields) j[key] = {{"per_trial", arr(*values)}, {"summary", summary(*values)}};
    j["provenance"] = rep.provenance;
    j["failures"] = rep.failures;
    return j;
}

}  // namespace kernelscope
