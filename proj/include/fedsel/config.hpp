#pragma once

// Experiment configuration: flat `key = value` text with dotted namespaces.
// Blank lines and lines starting with '#' are ignored.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fedsel/data.hpp"
#include "fedsel/error.hpp"
#include "fedsel/fault.hpp"
#include "fedsel/selection.hpp"
#include "fedsel/sim.hpp"

namespace fedsel::config {

enum class DataSource { synthetic, csv };

struct ExperimentConfig {
    DataSource source = DataSource::synthetic;
    data::SyntheticSpec synthetic{40, 100, 2, 1.0, 0};
    std::string csv_path;
    std::string label_column = "label";
    std::vector<std::string> feature_columns;
    double holdout_fraction = 0.2;

    sim::RoundConfig round;
    selection::SelectionConfig selection;

    bool checkpoint_auto = false;
    fault::CostModel checkpoint_model = fault::CostModel::amortized;

    int trials = 1;
    std::uint64_t seed = 0;
    std::string output_dir = "out";
    sim::SelectionMode baseline = sim::SelectionMode::random;
    std::vector<stats::RunMetric> compare_metrics{stats::RunMetric::acc, stats::RunMetric::auc,
                                                  stats::RunMetric::rounds_to_target};
    double compare_target = 0.8;
    stats::Alternative compare_alternative = stats::Alternative::two_sided;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline double to_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || ec != std::errc{} || ptr != v.data() + v.size() || !std::isfinite(out))
        throw ConfigError(key + ": expected a finite real, got \"" + v + "\"");
    return out;
}

inline long long to_int(const std::string& key, const std::string& v) {
    long long out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || ec != std::errc{} || ptr != v.data() + v.size())
        throw ConfigError(key + ": expected an integer, got \"" + v + "\"");
    return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": expected a boolean, got \"" + v + "\"");
}

inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(v);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

} // namespace detail

inline std::map<std::string, std::string> parse_key_values(std::istream& in) {
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto t = detail::trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        const auto key = detail::trim(t.substr(0, eq));
        if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        kv[key] = detail::trim(t.substr(eq + 1));
    }
    return kv;
}

/// Field-level validation; messages lead with the dotted key.
inline void validate(const ExperimentConfig& c) {
    auto fail = [](const std::string& key, const std::string& msg) { throw ConfigError(key + ": " + msg); };
    if (c.source == DataSource::synthetic) {
        if (c.synthetic.n_clients < 1) fail("data.clients", "must be >= 1");
        if (c.synthetic.samples_per_client < 2) fail("data.samples_per_client", "must be >= 2");
        if (c.synthetic.dim < 1) fail("data.dim", "must be >= 1");
    } else {
        if (c.csv_path.empty()) fail("data.csv_path", "required when data.source = csv");
        if (c.feature_columns.empty()) fail("data.feature_columns", "required when data.source = csv");
        if (c.synthetic.n_clients < 1) fail("data.clients", "must be >= 1");
    }
    if (!(c.synthetic.dirichlet_alpha > 0.0)) fail("data.dirichlet_alpha", "must be positive");
    if (c.synthetic.low_quality_fraction < 0.0 || c.synthetic.low_quality_fraction > 1.0)
        fail("data.low_quality_fraction", "must lie in [0, 1]");
    if (c.synthetic.low_quality_flip < 0.0 || c.synthetic.low_quality_flip > 1.0)
        fail("data.low_quality_flip", "must lie in [0, 1]");
    if (!(c.holdout_fraction > 0.0 && c.holdout_fraction < 1.0)) fail("data.holdout_fraction", "must lie in (0, 1)");

    const auto& r = c.round;
    if (r.local_epochs < 1) fail("train.epochs", "must be >= 1");
    if (!(r.lr > 0.0)) fail("train.lr", "must be positive");
    if (r.l2 < 0.0) fail("train.l2", "must be nonnegative");
    if (!(r.privacy.epsilon > 0.0)) fail("privacy.epsilon", "must be positive");
    if (!(r.privacy.delta > 0.0 && r.privacy.delta < 1.0)) fail("privacy.delta", "must lie in (0, 1)");
    if (!(r.clip_norm > 0.0)) fail("privacy.clip_norm", "must be positive");
    if (!c.checkpoint_auto && !(r.checkpoint.interval > 0.0)) fail("checkpoint.interval", "must be positive");
    if (!(r.checkpoint_write_cost > 0.0)) fail("checkpoint.write_cost", "must be positive");
    if (r.recovery_time < 0.0) fail("checkpoint.recovery_time", "must be nonnegative");
    if (!(r.weibull.scale_lambda > 0.0)) fail("failure.lambda", "must be positive");
    if (!(r.weibull.shape_k > 0.0)) fail("failure.k", "must be positive");
    if (r.max_recoveries < 0) fail("failure.max_recoveries", "must be nonnegative");
    if (!(r.cost_per_sample > 0.0)) fail("sim.cost_per_sample", "must be positive");
    if (!(r.idle_time > 0.0)) fail("sim.idle_time", "must be positive");
    if (r.max_rounds < 1) fail("sim.max_rounds", "must be >= 1");
    if (r.convergence_patience < 1) fail("convergence.patience", "must be >= 1");

    const auto& s = c.selection;
    if (s.k < 1) fail("selection.k", "must be >= 1");
    if (s.k_min < 1 || s.k_min > s.k) fail("selection.k_min", "must satisfy 1 <= k_min <= k");
    if (s.k_max < s.k) fail("selection.k_max", "must be >= selection.k");
    if (static_cast<std::size_t>(s.k_max) > c.synthetic.n_clients) fail("selection.k_max", "must not exceed data.clients");
    if (s.patience < 1) fail("selection.patience", "must be >= 1");
    if (s.alpha < 0.0) fail("selection.alpha", "must be nonnegative");
    if (s.gamma < 0.0) fail("selection.gamma", "must be nonnegative");
    double wsum = 0.0;
    for (double b : s.utility_weights) {
        if (b < 0.0) fail("selection.weights", "must be nonnegative");
        wsum += b;
    }
    if (std::abs(wsum - 1.0) > 1e-9) fail("selection.weights", "must sum to 1");
    if (!(s.ema_decay >= 0.0 && s.ema_decay < 1.0)) fail("selection.ema_decay", "must lie in [0, 1)");

    if (c.trials < 1) fail("experiment.trials", "must be >= 1");
    if (c.output_dir.empty()) fail("experiment.output_dir", "must not be empty");
}

inline ExperimentConfig parse_config(const std::map<std::string, std::string>& kv) {
    using namespace detail;
    ExperimentConfig c;
    c.selection.k_max = -1;  // defaults to k unless set
    auto& r = c.round;
    auto& syn = c.synthetic;

    using Setter = std::function<void(const std::string&, const std::string&)>;
    auto real = [](double& dst) -> Setter { return [&dst](const auto& k, const auto& v) { dst = to_double(k, v); }; };
    auto integer = [](int& dst) -> Setter {
        return [&dst](const auto& k, const auto& v) { dst = static_cast<int>(to_int(k, v)); };
    };
    auto size = [](std::size_t& dst) -> Setter {
        return [&dst](const auto& k, const auto& v) {
            const auto n = to_int(k, v);
            if (n < 0) throw ConfigError(k + ": must be nonnegative");
            dst = static_cast<std::size_t>(n);
        };
    };
    auto flag = [](bool& dst) -> Setter { return [&dst](const auto& k, const auto& v) { dst = to_bool(k, v); }; };

    const std::map<std::string, Setter> setters = {
        {"data.source",
         [&](const auto& k, const auto& v) {
             if (v == "synthetic") c.source = DataSource::synthetic;
             else if (v == "csv") c.source = DataSource::csv;
             else throw ConfigError(k + ": expected synthetic|csv");
         }},
        {"data.clients", size(syn.n_clients)},
        {"data.samples_per_client", size(syn.samples_per_client)},
        {"data.dim", size(syn.dim)},
        {"data.dirichlet_alpha", real(syn.dirichlet_alpha)},
        {"data.separation", real(syn.separation)},
        {"data.low_quality_fraction", real(syn.low_quality_fraction)},
        {"data.low_quality_samples", size(syn.low_quality_samples)},
        {"data.low_quality_flip", real(syn.low_quality_flip)},
        {"data.csv_path", [&](const auto&, const auto& v) { c.csv_path = v; }},
        {"data.label_column", [&](const auto&, const auto& v) { c.label_column = v; }},
        {"data.feature_columns", [&](const auto&, const auto& v) { c.feature_columns = split_list(v); }},
        {"data.holdout_fraction", real(c.holdout_fraction)},
        {"train.epochs", integer(r.local_epochs)},
        {"train.lr", real(r.lr)},
        {"train.batch_size", size(r.batch_size)},
        {"train.l2", real(r.l2)},
        {"privacy.enabled", flag(r.dp_enabled)},
        {"privacy.epsilon", real(r.privacy.epsilon)},
        {"privacy.delta", real(r.privacy.delta)},
        {"privacy.clip_norm", real(r.clip_norm)},
        {"privacy.per_step", flag(r.dp_per_step)},
        {"checkpoint.enabled", flag(r.checkpoint.enabled)},
        {"checkpoint.interval",
         [&](const auto& k, const auto& v) {
             if (v == "auto") c.checkpoint_auto = true;
             else r.checkpoint.interval = to_double(k, v);
         }},
        {"checkpoint.model",
         [&](const auto& k, const auto& v) {
             try {
                 c.checkpoint_model = fault::parse_cost_model(v);
             } catch (const InvalidArgument& e) {
                 throw ConfigError(k + ": " + e.what());
             }
         }},
        {"checkpoint.write_cost", real(r.checkpoint_write_cost)},
        {"checkpoint.recovery_time", real(r.recovery_time)},
        {"checkpoint.dir", [&](const auto&, const auto& v) { if (!v.empty()) r.checkpoint_dir = v; }},
        {"failure.enabled", flag(r.failure_injection)},
        {"failure.lambda", real(r.weibull.scale_lambda)},
        {"failure.k", real(r.weibull.shape_k)},
        {"failure.max_recoveries", integer(r.max_recoveries)},
        {"sim.cost_per_sample", real(r.cost_per_sample)},
        {"sim.idle_time", real(r.idle_time)},
        {"sim.max_rounds", integer(r.max_rounds)},
        {"sim.weighted_aggregation", flag(r.weighted_aggregation)},
        {"sim.parallel_clients", flag(r.parallel_clients)},
        {"convergence.enabled", flag(r.convergence_enabled)},
        {"convergence.tol", real(r.convergence_tol)},
        {"convergence.patience", integer(r.convergence_patience)},
        {"selection.mode",
         [&](const auto& k, const auto& v) {
             try {
                 r.selection_mode = sim::parse_selection_mode(v);
             } catch (const InvalidArgument& e) {
                 throw ConfigError(k + ": " + e.what());
             }
         }},
        {"selection.k", integer(c.selection.k)},
        {"selection.alpha", real(c.selection.alpha)},
        {"selection.gamma", real(c.selection.gamma)},
        {"selection.adaptive", flag(c.selection.adaptive)},
        {"selection.k_min", integer(c.selection.k_min)},
        {"selection.k_max", integer(c.selection.k_max)},
        {"selection.patience", integer(c.selection.patience)},
        {"selection.ema_decay", real(c.selection.ema_decay)},
        {"selection.weights",
         [&](const auto& k, const auto& v) {
             const auto items = split_list(v);
             if (items.size() != 3) throw ConfigError(k + ": expected three comma-separated weights");
             for (std::size_t i = 0; i < 3; ++i) c.selection.utility_weights[i] = to_double(k, items[i]);
         }},
        {"experiment.trials", integer(c.trials)},
        {"experiment.seed",
         [&](const auto& k, const auto& v) {
             const auto n = to_int(k, v);
             if (n < 0) throw ConfigError(k + ": must be nonnegative");
             c.seed = static_cast<std::uint64_t>(n);
         }},
        {"experiment.output_dir", [&](const auto&, const auto& v) { c.output_dir = v; }},
        {"experiment.baseline",
         [&](const auto& k, const auto& v) {
             try {
                 c.baseline = sim::parse_selection_mode(v);
             } catch (const InvalidArgument& e) {
                 throw ConfigError(k + ": " + e.what());
             }
         }},
        {"compare.metrics",
         [&](const auto& k, const auto& v) {
             c.compare_metrics.clear();
             for (const auto& m : split_list(v)) {
                 try {
                     c.compare_metrics.push_back(stats::parse_run_metric(m));
                 } catch (const InvalidArgument& e) {
                     throw ConfigError(k + ": " + e.what());
                 }
             }
             if (c.compare_metrics.empty()) throw ConfigError(k + ": at least one metric is required");
         }},
        {"compare.target", real(c.compare_target)},
        {"compare.alternative",
         [&](const auto& k, const auto& v) {
             if (v == "two-sided") c.compare_alternative = stats::Alternative::two_sided;
             else if (v == "greater") c.compare_alternative = stats::Alternative::greater;
             else if (v == "less") c.compare_alternative = stats::Alternative::less;
             else throw ConfigError(k + ": expected two-sided|greater|less");
         }},
    };

    for (const auto& [key, value] : kv) {
        auto it = setters.find(key);
        if (it == setters.end()) throw ConfigError(key + ": unknown configuration key");
        it->second(key, value);
    }
    if (c.selection.k_max < 0) c.selection.k_max = c.selection.k;
    validate(c);
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    return parse_config(parse_key_values(in));
}

/// Builds the federation described by the config for the given seed.
inline data::FederatedDataset build_federation(const ExperimentConfig& c, std::uint64_t seed) {
    if (c.source == DataSource::synthetic) {
        auto spec = c.synthetic;
        spec.seed = seed;
        return data::generate_synthetic_federation(spec);
    }
    const auto full = data::load_csv_dataset(c.csv_path, c.label_column, c.feature_columns);
    auto [train, holdout] = data::split_holdout(full, c.holdout_fraction, seed);
    auto fed = data::partition_noniid(train, c.synthetic.n_clients, c.synthetic.dirichlet_alpha, seed);
    fed.holdout = std::move(holdout);
    return fed;
}

/// Round config with an automatically chosen checkpoint interval when
/// `checkpoint.interval = auto`: the cost-model optimum over
/// [T/1000, T], T being the slowest client's round work.
inline sim::RoundConfig resolve_round_config(const ExperimentConfig& c, const data::FederatedDataset& fed) {
    auto r = c.round;
    if (!c.checkpoint_auto) return r;
    double total = 0.0;
    for (std::size_t i = 0; i < fed.clients(); ++i)
        total = std::max(total, sim::client_work_time(fed.shards[i], fed.profiles[i], r));
    const fault::CostModelParams cost{total, r.recovery_time, r.checkpoint_write_cost};
    const auto sol = fault::optimal_checkpoint_interval(cost, r.weibull, c.checkpoint_model, total / 1000.0, total);
    r.checkpoint.interval = sol.policy.interval;
    if (sol.monotone_warning)
        r.notes.push_back("checkpoint cost model 'paper' is increasing in t_c; interval set to the search lower bound");
    return r;
}

} // namespace fedsel::config
