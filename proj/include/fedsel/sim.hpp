#pragma once

// Round orchestrator: availability, selection, local training with
// differential privacy, failure injection with checkpoint recovery, FedAvg
// aggregation and holdout evaluation, all on a simulated clock.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedsel/data.hpp"
#include "fedsel/error.hpp"
#include "fedsel/fault.hpp"
#include "fedsel/model.hpp"
#include "fedsel/privacy.hpp"
#include "fedsel/report.hpp"
#include "fedsel/rng.hpp"
#include "fedsel/selection.hpp"
#include "fedsel/stats.hpp"

namespace fedsel::sim {

enum class SelectionMode { utility, random, full };

inline std::string to_string(SelectionMode m) {
    switch (m) {
    case SelectionMode::utility: return "utility";
    case SelectionMode::random: return "random";
    case SelectionMode::full: return "full";
    }
    return "?";
}

inline SelectionMode parse_selection_mode(const std::string& s) {
    if (s == "utility") return SelectionMode::utility;
    if (s == "random") return SelectionMode::random;
    if (s == "full") return SelectionMode::full;
    throw InvalidArgument("unknown selection mode \"" + s + "\" (expected utility|random|full)");
}

struct RoundConfig {
    int local_epochs = 5;
    double lr = 0.1;
    std::size_t batch_size = 0;  // 0 = full batch
    double l2 = 1e-4;

    bool dp_enabled = false;
    privacy::PrivacyBudget privacy{1.0, 1e-5};
    double clip_norm = 1.0;
    bool dp_per_step = false;  // noise every mini-batch gradient instead of the final delta

    fault::CheckpointPolicy checkpoint{1.0, false};
    double checkpoint_write_cost = 0.01;  // c_w
    double recovery_time = 0.1;           // t_r
    std::optional<std::filesystem::path> checkpoint_dir;

    fault::WeibullParams weibull{10.0, 1.0};
    bool failure_injection = false;
    int max_recoveries = 3;

    double cost_per_sample = 0.01;  // simulated seconds per sample per epoch at capacity 1
    double idle_time = 1.0;         // clock advance for a round with no available client

    int max_rounds = 200;
    bool convergence_enabled = true;
    double convergence_tol = 0.001;
    int convergence_patience = 10;

    bool weighted_aggregation = false;
    SelectionMode selection_mode = SelectionMode::utility;
    bool parallel_clients = false;

    std::vector<std::string> notes;  // copied into the report warnings

    void validate() const {
        if (local_epochs < 1) throw InvalidArgument("local_epochs must be >= 1");
        if (!(lr > 0.0)) throw InvalidArgument("lr must be positive");
        if (l2 < 0.0) throw InvalidArgument("l2 must be nonnegative");
        if (dp_enabled) privacy.validate();
        if (!(clip_norm > 0.0)) throw InvalidArgument("clip_norm must be positive");
        if (checkpoint.enabled && !(checkpoint.interval > 0.0))
            throw InvalidArgument("checkpoint interval must be positive when enabled");
        if (!(checkpoint_write_cost >= 0.0)) throw InvalidArgument("checkpoint write cost must be nonnegative");
        if (!(recovery_time >= 0.0)) throw InvalidArgument("recovery time must be nonnegative");
        if (failure_injection) weibull.validate();
        if (max_recoveries < 0) throw InvalidArgument("max_recoveries must be nonnegative");
        if (!(cost_per_sample > 0.0)) throw InvalidArgument("cost_per_sample must be positive");
        if (!(idle_time > 0.0)) throw InvalidArgument("idle_time must be positive");
        if (max_rounds < 1) throw InvalidArgument("max_rounds must be >= 1");
        if (convergence_patience < 1) throw InvalidArgument("convergence_patience must be >= 1");
    }
};

struct GlobalState {
    model::ModelParams global_params;
    int round = 0;  // completed rounds, skipped ones included
    int k = 1;
    std::vector<selection::UtilityScore> utilities;
    std::vector<double> accuracy_history;
    std::vector<int> participations;  // noised releases per client
    double sim_clock = 0.0;
    std::uint64_t rng_root = 0;
    bool converged = false;
    int skipped_rounds = 0;
    std::vector<report::RoundRecord> records;
};

/// Coordinate-wise mean of the received parameter vectors, summed in the
/// order given. With `weights`, a weighted mean.
inline model::ModelParams aggregate(std::span<const model::ModelParams> updates,
                                    std::span<const double> weights = {}) {
    if (updates.empty()) throw NoUpdates("no client updates to aggregate");
    const std::size_t d = updates.front().size();
    for (const auto& u : updates)
        if (u.size() != d) throw InvalidArgument("client updates differ in length");
    if (!weights.empty() && weights.size() != updates.size())
        throw InvalidArgument("aggregation weights do not match update count");

    std::vector<double> sum(d, 0.0);
    double denom = 0.0;
    for (std::size_t i = 0; i < updates.size(); ++i) {
        const double w = weights.empty() ? 1.0 : weights[i];
        for (std::size_t j = 0; j < d; ++j) sum[j] += weights.empty() ? updates[i].weights[j] : w * updates[i].weights[j];
        denom += w;
    }
    if (!(denom > 0.0)) throw InvalidArgument("aggregation weights must sum to a positive value");
    for (auto& v : sum) v /= denom;
    return model::ModelParams(std::move(sum));
}

/// Plateau test: the best accuracy gained less than `tol` over the last
/// `patience` rounds.
inline bool check_convergence(std::span<const double> accuracy_history, double tol, int patience) {
    if (patience < 1 || accuracy_history.size() < static_cast<std::size_t>(patience)) return false;
    return selection::recent_best_gain(accuracy_history, patience) < tol;
}

// ---------------------------------------------------------------------------
// One client's round

struct ClientTask {
    int round = 0;  // 1-based round being executed
    int client_id = 0;
    const data::Dataset* shard = nullptr;
    const data::ClientProfile* profile = nullptr;
    const model::ModelParams* global = nullptr;
    std::uint64_t seed = 0;
    /// Overrides sampled failure times when set: the i-th entry is the
    /// failure time after the i-th (re)start, +inf meaning no failure.
    std::optional<std::vector<double>> forced_failures;
};

struct ClientOutcome {
    int client_id = 0;
    std::optional<model::ModelParams> delivered;
    model::TrainStats stats;
    double elapsed = 0.0;
    int failures = 0;
    int recoveries = 0;
    int checkpoints = 0;
    bool excluded = false;
};

inline rng::Stream train_stream(std::uint64_t seed, int round, int client, int attempt) {
    return rng::Stream(rng::derive_key(seed, {rng::tag("train"), static_cast<std::uint64_t>(round),
                                              static_cast<std::uint64_t>(client),
                                              static_cast<std::uint64_t>(attempt)}));
}

inline rng::Stream failure_stream(std::uint64_t seed, int round, int client) {
    return rng::Stream(rng::derive_key(
        seed, {rng::tag("failure"), static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(client)}));
}

inline rng::Stream noise_stream(std::uint64_t seed, int round, int client) {
    return rng::Stream(rng::derive_key(
        seed, {rng::tag("dp-noise"), static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(client)}));
}

/// Client round time at capacity: epochs * rows * cost_per_sample / capacity.
inline double client_work_time(const data::Dataset& shard, const data::ClientProfile& profile,
                               const RoundConfig& cfg) {
    return static_cast<double>(cfg.local_epochs) * static_cast<double>(shard.rows()) *
           cfg.cost_per_sample / profile.compute_capacity;
}

inline ClientOutcome run_client(const ClientTask& task, const RoundConfig& cfg, fault::CheckpointStore& store) {
    const auto& shard = *task.shard;
    const auto& global = *task.global;
    const auto client = static_cast<std::uint32_t>(task.client_id);
    const model::TrainOptions opt{cfg.local_epochs, cfg.lr, cfg.batch_size, cfg.l2};

    std::optional<model::StepNoise> step_noise;
    privacy::NoiseScale scale;
    if (cfg.dp_enabled) {
        scale = privacy::calibrate_sigma(cfg.privacy, cfg.clip_norm);
        if (cfg.dp_per_step) step_noise = model::StepNoise{scale.sigma, scale.clip_norm};
    }

    int attempt = 0;
    auto fresh_trainer = [&](const model::ModelParams& start) {
        return std::make_unique<model::LocalTrainer>(shard, start, opt,
                                                     train_stream(task.seed, task.round, task.client_id, attempt),
                                                     step_noise);
    };
    auto trainer = fresh_trainer(global);

    const double epoch_time = client_work_time(shard, *task.profile, cfg) / cfg.local_epochs;
    auto fail_stream = failure_stream(task.seed, task.round, task.client_id);
    std::size_t forced_index = 0;
    auto next_failure = [&]() -> double {
        if (task.forced_failures) {
            const auto& f = *task.forced_failures;
            return forced_index < f.size() ? f[forced_index++] : INFINITY;
        }
        if (!cfg.failure_injection) return INFINITY;
        return fault::sample_failure_time(cfg.weibull, fail_stream);
    };

    ClientOutcome out;
    out.client_id = task.client_id;
    double alive = 0.0;  // work time since the last (re)start; checkpoint writes excluded
    double since_checkpoint = 0.0;
    double fail_at = next_failure();

    while (!trainer->done()) {
        if (alive + epoch_time > fail_at) {
            out.elapsed += std::max(0.0, fail_at - alive);
            ++out.failures;
            if (out.failures > cfg.max_recoveries) {
                out.excluded = true;
                break;
            }
            if (cfg.checkpoint.enabled) {
                if (auto cp = store.latest(client, static_cast<std::uint32_t>(task.round))) {
                    trainer->restore({cp->params, static_cast<int>(cp->epoch_progress), cp->rng_cursor});
                } else {
                    trainer = fresh_trainer(global);  // the received global model is the implicit first checkpoint
                }
                out.elapsed += cfg.recovery_time;
            } else {
                ++attempt;
                trainer = fresh_trainer(fault::recover_without_checkpoint(global));
            }
            ++out.recoveries;
            alive = 0.0;
            since_checkpoint = 0.0;
            fail_at = next_failure();
            continue;
        }
        trainer->run_epoch();
        out.elapsed += epoch_time;
        alive += epoch_time;
        since_checkpoint += epoch_time;
        if (cfg.checkpoint.enabled && !trainer->done() && since_checkpoint >= cfg.checkpoint.interval) {
            const auto snap = trainer->snapshot();
            store.save({static_cast<std::uint32_t>(task.round), client, snap.params,
                        static_cast<std::uint32_t>(snap.epochs_done), snap.cursor});
            out.elapsed += cfg.checkpoint_write_cost;
            since_checkpoint = 0.0;
            ++out.checkpoints;
        }
    }
    store.discard(client);
    if (out.excluded) return out;

    out.stats = trainer->stats();
    if (cfg.dp_enabled && !cfg.dp_per_step) {
        model::Gradient delta(trainer->params().weights);
        for (std::size_t j = 0; j < delta.values.size(); ++j) delta.values[j] -= global.weights[j];
        delta = privacy::clip_update(std::move(delta), scale.clip_norm);
        delta = privacy::add_gaussian_noise(std::move(delta), scale, noise_stream(task.seed, task.round, task.client_id));
        model::ModelParams sent = global;
        for (std::size_t j = 0; j < sent.weights.size(); ++j) sent.weights[j] += delta.values[j];
        out.delivered = std::move(sent);
    } else {
        out.delivered = trainer->params();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Rounds

class Simulation {
public:
    Simulation(const data::FederatedDataset& fed, RoundConfig cfg, selection::SelectionConfig sel,
               std::uint64_t seed)
        : fed_(&fed), cfg_(std::move(cfg)), sel_(sel),
          store_(cfg_.checkpoint_dir ? std::make_unique<fault::CheckpointStore>(*cfg_.checkpoint_dir)
                                     : std::make_unique<fault::CheckpointStore>()) {
        if (fed.clients() < 1) throw InvalidArgument("federation has no clients");
        if (fed.holdout.empty()) throw InvalidArgument("federation has no holdout split");
        if (fed.profiles.size() != fed.clients()) throw InvalidArgument("profile count does not match shard count");
        for (std::size_t i = 0; i < fed.clients(); ++i) {
            if (fed.profiles[i].client_id != static_cast<int>(i))
                throw InvalidArgument("client ids must be 0..N-1 in shard order");
            if (fed.shards[i].empty()) throw InvalidArgument("client " + std::to_string(i) + " has no data");
            if (fed.shards[i].dim != fed.holdout.dim) throw InvalidArgument("shard dimension mismatch");
        }
        cfg_.validate();
        sel_.validate(fed.clients());

        std::size_t largest = 1;
        for (const auto& s : fed.shards) largest = std::max(largest, s.rows());
        largest_shard_ = largest;
        capacity_ = selection::CapacityRange::of(fed.profiles);

        state_.global_params = model::ModelParams::zeros(fed.holdout.dim);
        state_.k = sel_.k;
        state_.utilities = selection::initial_utilities(fed, sel_);
        state_.participations.assign(fed.clients(), 0);
        state_.rng_root = seed;
    }

    const GlobalState& state() const noexcept { return state_; }
    GlobalState& state() noexcept { return state_; }
    const RoundConfig& config() const noexcept { return cfg_; }

    bool finished() const noexcept { return state_.converged || state_.round >= cfg_.max_rounds; }

    /// Executes one round and returns its record, or nothing when no client
    /// was available (the clock still advances).
    std::optional<report::RoundRecord> step() {
        const int t = state_.round + 1;
        const auto& fed = *fed_;
        const auto available = selection::get_available_clients(fed.profiles, t, state_.rng_root);
        if (available.empty()) {
            state_.round = t;
            state_.sim_clock += cfg_.idle_time;
            ++state_.skipped_rounds;
            return std::nullopt;
        }

        std::vector<int> chosen;
        switch (cfg_.selection_mode) {
        case SelectionMode::utility: chosen = selection::select_top_k(available, state_.utilities, state_.k).selected; break;
        case SelectionMode::random: chosen = selection::select_random_k(available, state_.k, t, state_.rng_root).selected; break;
        case SelectionMode::full: chosen = available; break;
        }

        auto outcomes = run_clients(chosen, t);

        report::RoundRecord rec;
        rec.round = t;
        rec.selected = chosen;
        rec.k = static_cast<int>(chosen.size());

        std::vector<model::ModelParams> received;
        std::vector<double> sizes;
        double round_time = 0.0;
        for (auto& o : outcomes) {
            rec.failures += o.failures;
            rec.recoveries += o.recoveries;
            round_time = std::max(round_time, o.elapsed);
            if (!o.delivered) {
                ++rec.excluded;
                continue;
            }
            const auto id = static_cast<std::size_t>(o.client_id);
            received.push_back(std::move(*o.delivered));
            sizes.push_back(static_cast<double>(fed.shards[id].rows()));
            if (cfg_.dp_enabled) ++state_.participations[id];
            const double fraction = static_cast<double>(fed.shards[id].rows()) / static_cast<double>(largest_shard_);
            state_.utilities[id] = selection::compute_utility(state_.utilities[id], o.stats, fed.profiles[id],
                                                              fraction, capacity_, sel_);
        }
        if (!received.empty())
            state_.global_params = cfg_.weighted_aggregation ? aggregate(received, sizes) : aggregate(received);

        const auto ev = model::evaluate(state_.global_params, fed.holdout);
        rec.loss = ev.loss;
        rec.acc = stats::accuracy(ev.labels, ev.scores);
        try {
            rec.auc = stats::auc_roc(ev.labels, ev.scores);
        } catch (const UndefinedMetric&) {
            rec.auc = NAN;
        }
        rec.cost = selection::compute_cost(chosen, fed.profiles);
        rec.objective = selection::compute_objective(rec.acc, rec.cost, sel_.alpha, sel_.gamma);

        state_.accuracy_history.push_back(rec.acc);
        state_.k = selection::adapt_k(state_.accuracy_history, sel_, state_.k);
        state_.sim_clock += round_time;
        rec.sim_clock = state_.sim_clock;
        state_.round = t;
        if (cfg_.convergence_enabled &&
            check_convergence(state_.accuracy_history, cfg_.convergence_tol, cfg_.convergence_patience))
            state_.converged = true;
        state_.records.push_back(rec);
        return rec;
    }

    report::RunReport run() {
        while (!finished()) step();
        return make_report();
    }

    report::RunReport make_report() const {
        report::RunReport rep;
        rep.rounds = state_.records;
        auto& s = rep.summary;
        s.seed = state_.rng_root;
        s.rounds_run = static_cast<int>(state_.records.size());
        s.max_rounds = cfg_.max_rounds;
        s.skipped_rounds = state_.skipped_rounds;
        s.sim_time = state_.sim_clock;
        s.converged = state_.converged;
        for (const auto& r : state_.records) {
            s.total_failures += r.failures;
            s.total_recoveries += r.recoveries;
        }
        s.warnings = cfg_.notes;
        if (cfg_.dp_enabled) {
            const int worst = state_.participations.empty()
                                  ? 0
                                  : *std::max_element(state_.participations.begin(), state_.participations.end());
            if (worst > 0) {
                s.epsilon_spent = cfg_.privacy.epsilon * worst;
                s.delta_spent = cfg_.privacy.delta * worst;
                try {
                    privacy::sequential_budget(cfg_.privacy, worst);
                } catch (const BudgetExhausted& e) {
                    s.warnings.push_back(e.what());
                }
            }
        }
        return rep;
    }

private:
    std::vector<ClientOutcome> run_clients(const std::vector<int>& chosen, int t) {
        const auto& fed = *fed_;
        auto make_task = [&](int id) {
            ClientTask task;
            task.round = t;
            task.client_id = id;
            task.shard = &fed.shards[static_cast<std::size_t>(id)];
            task.profile = &fed.profiles[static_cast<std::size_t>(id)];
            task.global = &state_.global_params;
            task.seed = state_.rng_root;
            return task;
        };

        std::vector<ClientOutcome> outcomes;
        outcomes.reserve(chosen.size());
        try {
            if (cfg_.parallel_clients) {
                std::vector<std::future<ClientOutcome>> futures;
                for (int id : chosen)
                    futures.push_back(std::async(std::launch::async,
                                                 [this, task = make_task(id)] { return run_client(task, cfg_, *store_); }));
                for (auto& f : futures) outcomes.push_back(f.get());
            } else {
                for (int id : chosen) outcomes.push_back(run_client(make_task(id), cfg_, *store_));
            }
        } catch (const Error& e) {
            throw Error(e.kind(), "round " + std::to_string(t) + ": " + e.what());
        }
        std::sort(outcomes.begin(), outcomes.end(),
                  [](const auto& a, const auto& b) { return a.client_id < b.client_id; });
        return outcomes;
    }

    const data::FederatedDataset* fed_;
    RoundConfig cfg_;
    selection::SelectionConfig sel_;
    std::unique_ptr<fault::CheckpointStore> store_;
    std::size_t largest_shard_ = 1;
    selection::CapacityRange capacity_;
    GlobalState state_;
};

/// Functional form of a single round: returns the successor state.
inline GlobalState run_round(GlobalState state, const data::FederatedDataset& fed, const RoundConfig& cfg,
                             const selection::SelectionConfig& sel) {
    Simulation sim(fed, cfg, sel, state.rng_root);
    sim.state() = std::move(state);
    sim.step();
    return sim.state();
}

inline report::RunReport run_simulation(const data::FederatedDataset& fed, const RoundConfig& cfg,
                                        const selection::SelectionConfig& sel, std::uint64_t seed) {
    Simulation sim(fed, cfg, sel, seed);
    return sim.run();
}

} // namespace fedsel::sim
