#pragma once

// Command-line front end. Exit codes: 0 success, 1 runtime failure,
// 2 configuration or usage error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fedsel/config.hpp"
#include "fedsel/error.hpp"
#include "fedsel/fault.hpp"
#include "fedsel/privacy.hpp"
#include "fedsel/report.hpp"
#include "fedsel/sim.hpp"
#include "fedsel/stats.hpp"

namespace fedsel::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

inline std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

struct GlobalOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
};

/// Config file, then FEDSEL_SEED, then --seed; --out overrides the output dir.
inline config::ExperimentConfig load_experiment(const GlobalOptions& g) {
    if (g.config_path.empty()) throw ConfigError("--config is required for this command");
    auto cfg = config::load_config(g.config_path);
    if (const char* env = std::getenv("FEDSEL_SEED"); env != nullptr && *env != '\0') {
        const auto n = config::detail::to_int("FEDSEL_SEED", env);
        if (n < 0) throw ConfigError("FEDSEL_SEED: must be nonnegative");
        cfg.seed = static_cast<std::uint64_t>(n);
    }
    if (g.seed) cfg.seed = *g.seed;
    if (!g.out_dir.empty()) cfg.output_dir = g.out_dir;
    return cfg;
}

inline report::RunReport run_trial(const config::ExperimentConfig& cfg, std::uint64_t seed,
                                   sim::SelectionMode mode) {
    const auto fed = config::build_federation(cfg, seed);
    auto round = config::resolve_round_config(cfg, fed);
    round.selection_mode = mode;
    return sim::run_simulation(fed, round, cfg.selection, seed);
}

struct TrialMeans {
    double acc = 0.0, loss = 0.0, auc = 0.0, rounds = 0.0, sim_time = 0.0;
};

inline TrialMeans means_of(const std::vector<report::RunReport>& reports) {
    TrialMeans m;
    std::size_t auc_n = 0;
    for (const auto& r : reports) {
        if (const auto* last = r.final_round()) {
            m.acc += last->acc;
            m.loss += last->loss;
            if (std::isfinite(last->auc)) {
                m.auc += last->auc;
                ++auc_n;
            }
        }
        m.rounds += r.summary.rounds_run;
        m.sim_time += r.summary.sim_time;
    }
    const double n = static_cast<double>(reports.size());
    m.acc /= n;
    m.loss /= n;
    m.auc = auc_n > 0 ? m.auc / static_cast<double>(auc_n) : NAN;
    m.rounds /= n;
    m.sim_time /= n;
    return m;
}

inline int cmd_run(const GlobalOptions& g, std::ostream& out) {
    const auto cfg = load_experiment(g);
    const std::filesystem::path dir = cfg.output_dir;
    std::vector<report::RunReport> reports;
    for (int i = 0; i < cfg.trials; ++i) {
        const auto seed = cfg.seed + static_cast<std::uint64_t>(i);
        reports.push_back(run_trial(cfg, seed, cfg.round.selection_mode));
        report::write_atomic(dir / ("report_trial" + std::to_string(i) + ".jsonl"), report::serialize(reports.back()));
    }
    const auto m = means_of(reports);
    report::ojson summary;
    summary["trials"] = cfg.trials;
    summary["first_seed"] = cfg.seed;
    summary["selection"] = sim::to_string(cfg.round.selection_mode);
    summary["mean_final_acc"] = m.acc;
    summary["mean_final_loss"] = m.loss;
    summary["mean_final_auc"] = report::number_or_null(m.auc);
    summary["mean_rounds"] = m.rounds;
    summary["mean_sim_time"] = m.sim_time;
    report::write_atomic(dir / "summary.json", summary.dump(2) + "\n");
    out << "trials " << cfg.trials << "  mean acc " << fmt(m.acc) << "  mean loss " << fmt(m.loss)
        << "  mean auc " << fmt(m.auc) << "  mean rounds " << fmt(m.rounds) << "\n";
    out << "reports written to " << dir.string() << "\n";
    return kExitOk;
}

inline int cmd_sweep_epsilon(const GlobalOptions& g, const std::vector<double>& epsilons, std::ostream& out) {
    if (epsilons.size() < 2) throw ConfigError("--epsilons: at least two values are required");
    std::set<double> seen;
    for (double e : epsilons) {
        if (!(e > 0.0)) throw ConfigError("--epsilons: values must be positive");
        if (!seen.insert(e).second) throw ConfigError("--epsilons: duplicate value " + fmt(e));
    }
    auto cfg = load_experiment(g);
    const std::filesystem::path dir = cfg.output_dir;

    std::ostringstream csv;
    csv << "epsilon,sigma,mean_final_acc,mean_final_loss\n";
    for (double eps : epsilons) {
        auto run_cfg = cfg;
        run_cfg.round.dp_enabled = true;
        run_cfg.round.privacy.epsilon = eps;
        const auto sigma = privacy::calibrate_sigma(run_cfg.round.privacy, run_cfg.round.clip_norm).sigma;
        std::vector<report::RunReport> reports;
        for (int i = 0; i < cfg.trials; ++i)
            reports.push_back(run_trial(run_cfg, cfg.seed + static_cast<std::uint64_t>(i), cfg.round.selection_mode));
        const auto m = means_of(reports);
        csv << fmt(eps) << ',' << fmt(sigma) << ',' << fmt(m.acc) << ',' << fmt(m.loss) << '\n';
    }
    report::write_atomic(dir / "sweep_epsilon.csv", csv.str());
    out << csv.str();
    return kExitOk;
}

inline std::string alternative_name(stats::Alternative a) {
    switch (a) {
    case stats::Alternative::two_sided: return "two-sided";
    case stats::Alternative::greater: return "greater";
    case stats::Alternative::less: return "less";
    }
    return "?";
}

inline int cmd_compare(const GlobalOptions& g, std::ostream& out) {
    const auto cfg = load_experiment(g);
    if (cfg.trials < 3) throw ConfigError("experiment.trials: compare needs at least 3 trials");
    const std::filesystem::path dir = cfg.output_dir;

    std::vector<report::RunReport> proposed, baseline;
    for (int i = 0; i < cfg.trials; ++i) {
        const auto seed = cfg.seed + static_cast<std::uint64_t>(i);
        proposed.push_back(run_trial(cfg, seed, sim::SelectionMode::utility));
        baseline.push_back(run_trial(cfg, seed, cfg.baseline));
    }

    const std::string comparison = "utility vs " + sim::to_string(cfg.baseline);
    report::ojson table;
    table["comparison"] = comparison;
    table["trials"] = cfg.trials;
    table["alternative"] = alternative_name(cfg.compare_alternative);
    table["target"] = cfg.compare_target;
    table["rows"] = report::ojson::array();
    out << "comparison,metric,U,p,method\n";
    for (auto metric : cfg.compare_metrics) {
        const auto res = stats::compare_runs(proposed, baseline, metric, cfg.compare_target, cfg.compare_alternative);
        report::ojson row;
        row["comparison"] = comparison;
        row["metric"] = stats::to_string(metric);
        row["U"] = res.u_statistic;
        row["p"] = res.p_value;
        row["method"] = stats::to_string(res.method);
        row["n_a"] = res.n_a;
        row["n_b"] = res.n_b;
        table["rows"].push_back(row);
        out << comparison << ',' << stats::to_string(metric) << ',' << fmt(res.u_statistic) << ','
            << fmt(res.p_value) << ',' << stats::to_string(res.method) << '\n';
    }
    report::write_atomic(dir / "compare.json", table.dump(2) + "\n");
    return kExitOk;
}

struct CheckpointOptArgs {
    double total_time = 0.0;
    double recovery_time = 0.0;
    double write_cost = 0.0;
    double lambda = 0.0;
    double k = 0.0;
    std::string model = "amortized";
    std::optional<double> t_min, t_max;
};

inline int cmd_checkpoint_opt(const GlobalOptions& g, const CheckpointOptArgs& a, std::ostream& out) {
    fault::CostModel model;
    try {
        model = fault::parse_cost_model(a.model);
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("--model: ") + e.what());
    }
    const fault::CostModelParams cost{a.total_time, a.recovery_time, a.write_cost};
    const fault::WeibullParams weibull{a.lambda, a.k};
    try {
        cost.validate();
        weibull.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
    const double lo = a.t_min.value_or(a.total_time / 1000.0);
    const double hi = a.t_max.value_or(a.total_time);
    fault::IntervalSolution sol;
    try {
        sol = fault::optimal_checkpoint_interval(cost, weibull, model, lo, hi);
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }

    std::ostringstream text;
    text << "model " << fault::to_string(model) << "\n";
    text << "t_c* " << fmt(sol.policy.interval) << "\n";
    text << "cost " << fmt(sol.cost) << "\n";
    text << "p_f(t_c*) " << fmt(fault::weibull_failure_prob(sol.policy.interval, weibull)) << "\n";
    if (sol.monotone_warning)
        text << "warning: C(t_c) is strictly increasing on [" << fmt(lo) << ", " << fmt(hi)
             << "]; dC/dt_c = 0 has no root and the lower bound is returned\n";
    out << text.str();
    if (!g.out_dir.empty()) {
        report::ojson j;
        j["model"] = fault::to_string(model);
        j["t_c_star"] = sol.policy.interval;
        j["cost"] = sol.cost;
        j["t_min"] = lo;
        j["t_max"] = hi;
        j["monotone_warning"] = sol.monotone_warning;
        report::write_atomic(std::filesystem::path(g.out_dir) / "checkpoint_opt.json", j.dump(2) + "\n");
    }
    return kExitOk;
}

inline std::vector<double> read_failure_times(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path);
    std::vector<double> xs;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        const auto t = config::detail::trim(line);
        if (t.empty()) continue;
        double v = 0.0;
        const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
        if (ec != std::errc{} || ptr != t.data() + t.size() || !(v > 0.0) || !std::isfinite(v))
            throw ConfigError(path + ": row " + std::to_string(row) + " is not a positive real: \"" + t + "\"");
        xs.push_back(v);
        ++row;
    }
    return xs;
}

inline int cmd_fit_weibull(const GlobalOptions& g, const std::string& path, std::ostream& out) {
    const auto xs = read_failure_times(path);
    fault::WeibullParams fit;
    try {
        fit = fault::fit_weibull(xs);
    } catch (const InsufficientData& e) {
        throw ConfigError(std::string("insufficient data: ") + e.what());
    }
    std::ostringstream text;
    text << "lambda " << fmt(fit.scale_lambda) << "\n";
    text << "k " << fmt(fit.shape_k) << "\n";
    text << "n " << xs.size() << "\n";
    out << text.str();
    if (!g.out_dir.empty()) {
        report::ojson j;
        j["lambda"] = fit.scale_lambda;
        j["k"] = fit.shape_k;
        j["n"] = xs.size();
        report::write_atomic(std::filesystem::path(g.out_dir) / "weibull_fit.json", j.dump(2) + "\n");
    }
    return kExitOk;
}

/// Entry point shared by the executable and the tests.
inline int main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Federated learning simulator with adaptive client selection, differential privacy and checkpointing"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOptions g;
    std::uint64_t seed_value = 0;
    app.add_option("--config", g.config_path, "Experiment config (key = value)");
    auto* seed_opt = app.add_option("--seed", seed_value, "Seed; overrides FEDSEL_SEED and the config");
    app.add_option("--out", g.out_dir, "Output directory");

    auto* run = app.add_subcommand("run", "Run the configured number of trials");
    auto* sweep = app.add_subcommand("sweep-epsilon", "Mean final accuracy and loss per privacy budget");
    std::vector<double> epsilons;
    sweep->add_option("--epsilons", epsilons, "Comma-separated epsilon values")->delimiter(',')->required();
    auto* compare = app.add_subcommand("compare", "Utility selection vs the configured baseline (Mann-Whitney U)");

    auto* ckpt = app.add_subcommand("checkpoint-opt", "Optimal checkpoint interval under a Weibull failure model");
    CheckpointOptArgs ca;
    double t_min = 0.0, t_max = 0.0;
    ckpt->add_option("--T", ca.total_time, "Total computation time T")->required();
    ckpt->add_option("--t-r", ca.recovery_time, "Recovery time t_r")->required();
    ckpt->add_option("--c-w", ca.write_cost, "Checkpoint write cost c_w")->required();
    ckpt->add_option("--lambda", ca.lambda, "Weibull scale")->required();
    ckpt->add_option("--k", ca.k, "Weibull shape")->required();
    ckpt->add_option("--model", ca.model, "paper|amortized");
    auto* tmin_opt = ckpt->add_option("--t-min", t_min, "Search lower bound (default T/1000)");
    auto* tmax_opt = ckpt->add_option("--t-max", t_max, "Search upper bound (default T)");

    auto* fit = app.add_subcommand("fit-weibull", "Maximum-likelihood Weibull fit of failure times");
    std::string failures_csv;
    fit->add_option("failures_csv", failures_csv, "One positive failure time per line")->required();

    try {
        std::vector<std::string> args;
        for (int i = argc - 1; i > 0; --i) args.emplace_back(argv[i]);
        app.parse(args);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    }
    if (seed_opt->count() > 0) g.seed = seed_value;
    if (tmin_opt->count() > 0) ca.t_min = t_min;
    if (tmax_opt->count() > 0) ca.t_max = t_max;

    try {
        if (run->parsed()) return cmd_run(g, out);
        if (sweep->parsed()) return cmd_sweep_epsilon(g, epsilons, out);
        if (compare->parsed()) return cmd_compare(g, out);
        if (ckpt->parsed()) return cmd_checkpoint_opt(g, ca, out);
        if (fit->parsed()) return cmd_fit_weibull(g, failures_csv, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}

} // namespace fedsel::cli
