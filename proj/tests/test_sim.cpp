#include <gtest/gtest.h>

#include <cmath>

#include "fedsel/report.hpp"
#include "fedsel/sim.hpp"
#include "helpers.hpp"

using namespace fedsel;

namespace {

data::FederatedDataset always_available(std::size_t n, std::size_t s, std::size_t d, std::uint64_t seed) {
    auto fed = data::generate_synthetic_federation(n, s, d, 0.5, seed);
    for (auto& p : fed.profiles) p.availability_prob = 1.0;
    return fed;
}

sim::RoundConfig quiet_config(int rounds) {
    sim::RoundConfig c;
    c.max_rounds = rounds;
    c.convergence_enabled = false;
    return c;
}

selection::SelectionConfig top(int k) {
    selection::SelectionConfig s;
    s.k = k;
    s.k_max = k;
    return s;
}

// Straight-line FedAvg: full-batch logistic GD on every client in id order,
// then an unweighted coordinate mean in the same order.
std::vector<double> reference_fedavg_round(const data::FederatedDataset& fed, const std::vector<double>& global,
                                           int epochs, double lr, double l2) {
    const std::size_t d = fed.dim();
    std::vector<double> sum(d + 1, 0.0);
    for (const auto& shard : fed.shards) {
        std::vector<double> w = global;
        for (int e = 0; e < epochs; ++e) {
            std::vector<double> g(d + 1, 0.0);
            for (std::size_t i = 0; i < shard.rows(); ++i) {
                const double* x = shard.features.data() + i * d;
                double z = w[d];
                for (std::size_t j = 0; j < d; ++j) z += w[j] * x[j];
                const double p = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
                const double r = p - static_cast<double>(shard.labels[i]);
                for (std::size_t j = 0; j < d; ++j) g[j] += r * x[j];
                g[d] += r;
            }
            const double inv = 1.0 / static_cast<double>(shard.rows());
            for (auto& v : g) v *= inv;
            for (std::size_t j = 0; j < d; ++j) g[j] += l2 * w[j];
            for (std::size_t j = 0; j <= d; ++j) w[j] -= lr * g[j];
        }
        for (std::size_t j = 0; j <= d; ++j) sum[j] += w[j];
    }
    for (auto& v : sum) v /= static_cast<double>(fed.clients());
    return sum;
}

} // namespace

// ---------------------------------------------------------------------------
// Aggregation

TEST(Aggregate, IdenticalUpdates) {
    const model::ModelParams w(std::vector<double>{0.1, -0.7, 3.0});
    const std::vector<model::ModelParams> ups(5, w);
    EXPECT_EQ(sim::aggregate(ups), w);
}

TEST(Aggregate, TwoClientMean) {
    const std::vector<model::ModelParams> ups{model::ModelParams({0.0}), model::ModelParams({2.0})};
    EXPECT_EQ(sim::aggregate(ups).weights, (std::vector<double>{1.0}));
}

TEST(Aggregate, MatchesNaiveMeanAndStaysInBounds) {
    rng::Stream s(14);
    std::vector<model::ModelParams> ups;
    for (int i = 0; i < 7; ++i) {
        std::vector<double> v(6);
        for (auto& x : v) x = s.normal(0.0, 3.0);
        ups.emplace_back(v);
    }
    const auto mean = sim::aggregate(ups);
    for (std::size_t j = 0; j < 6; ++j) {
        double naive = 0.0, lo = INFINITY, hi = -INFINITY;
        for (const auto& u : ups) {
            naive += u.weights[j] / 7.0;
            lo = std::min(lo, u.weights[j]);
            hi = std::max(hi, u.weights[j]);
        }
        EXPECT_NEAR(mean.weights[j], naive, 1e-12);
        EXPECT_GE(mean.weights[j], lo);
        EXPECT_LE(mean.weights[j], hi);
    }
}

TEST(Aggregate, WeightedMean) {
    const std::vector<model::ModelParams> ups{model::ModelParams({0.0}), model::ModelParams({4.0})};
    const std::vector<double> w{3.0, 1.0};
    EXPECT_DOUBLE_EQ(sim::aggregate(ups, w).weights[0], 1.0);
}

TEST(Aggregate, Errors) {
    EXPECT_THROW(sim::aggregate({}), NoUpdates);
    const std::vector<model::ModelParams> ragged{model::ModelParams({1.0}), model::ModelParams({1.0, 2.0})};
    EXPECT_THROW(sim::aggregate(ragged), InvalidArgument);
}

// ---------------------------------------------------------------------------
// Convergence test

TEST(Convergence, ShortHistoryNeverConverged) {
    const std::vector<double> h{0.5, 0.5};
    EXPECT_FALSE(sim::check_convergence(h, 0.01, 3));
}

TEST(Convergence, SteadyGainsNotConverged) {
    const std::vector<double> h{0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    EXPECT_FALSE(sim::check_convergence(h, 0.01, 3));
}

TEST(Convergence, FlatHistoryConverged) {
    const std::vector<double> h(4, 0.7);
    EXPECT_TRUE(sim::check_convergence(h, 0.01, 3));
    EXPECT_TRUE(sim::check_convergence(h, 0.01, 4));
}

// ---------------------------------------------------------------------------
// Rounds

TEST(FedAvg, MatchesStraightLineReferenceExactly) {
    const auto fed = always_available(8, 40, 3, 2);
    auto cfg = quiet_config(20);
    cfg.selection_mode = sim::SelectionMode::full;
    sim::Simulation simulation(fed, cfg, top(8), 5);
    std::vector<double> ref(fed.dim() + 1, 0.0);
    for (int r = 0; r < 20; ++r) {
        ASSERT_TRUE(simulation.step().has_value());
        ref = reference_fedavg_round(fed, ref, cfg.local_epochs, cfg.lr, cfg.l2);
        ASSERT_EQ(simulation.state().global_params.weights, ref) << "round " << r + 1;
    }
}

TEST(RunRound, DeterministicSuccessor) {
    const auto fed = always_available(10, 30, 2, 3);
    auto cfg = quiet_config(5);
    cfg.batch_size = 8;
    cfg.failure_injection = true;
    cfg.weibull = {2.0, 1.0};
    sim::Simulation simulation(fed, cfg, top(4), 17);
    simulation.step();
    const auto before = simulation.state();
    const auto a = sim::run_round(before, fed, cfg, top(4));
    const auto b = sim::run_round(before, fed, cfg, top(4));
    EXPECT_EQ(a.global_params, b.global_params);
    EXPECT_EQ(a.records, b.records);
    EXPECT_EQ(a.round, 2);
    EXPECT_EQ(a.records.size(), 2u);
}

TEST(RunSimulation, SingleRoundGivesOneRecord) {
    const auto fed = always_available(5, 20, 2, 1);
    const auto rep = sim::run_simulation(fed, quiet_config(1), top(3), 1);
    EXPECT_EQ(rep.rounds.size(), 1u);
    EXPECT_EQ(rep.summary.rounds_run, 1);
}

TEST(RunSimulation, SameSeedSameBytes) {
    const auto fed = data::generate_synthetic_federation(12, 30, 3, 0.5, 4);
    auto cfg = quiet_config(15);
    cfg.dp_enabled = true;
    cfg.failure_injection = true;
    cfg.weibull = {3.0, 1.2};
    cfg.checkpoint = {0.2, true};
    const auto a = report::serialize(sim::run_simulation(fed, cfg, top(5), 8));
    const auto b = report::serialize(sim::run_simulation(fed, cfg, top(5), 8));
    EXPECT_EQ(a, b);
    EXPECT_NE(a, report::serialize(sim::run_simulation(fed, cfg, top(5), 9)));
}

TEST(RunSimulation, ParallelClientsMatchSequential) {
    const auto fed = data::generate_synthetic_federation(16, 40, 3, 0.5, 6);
    auto cfg = quiet_config(12);
    cfg.batch_size = 10;
    cfg.dp_enabled = true;
    cfg.failure_injection = true;
    cfg.weibull = {2.0, 1.0};
    cfg.checkpoint = {0.3, true};
    auto par = cfg;
    par.parallel_clients = true;
    EXPECT_EQ(report::serialize(sim::run_simulation(fed, cfg, top(8), 3)),
              report::serialize(sim::run_simulation(fed, par, top(8), 3)));
}

TEST(RunSimulation, CheckpointedFailuresDoNotChangeTheModel) {
    const auto fed = data::generate_synthetic_federation(10, 50, 3, 0.5, 7);
    auto clean = quiet_config(10);
    clean.batch_size = 10;
    auto faulty = clean;
    faulty.failure_injection = true;
    faulty.weibull = {1.0, 1.0};
    faulty.checkpoint = {1e-9, true};
    faulty.max_recoveries = 1000;
    const auto a = sim::run_simulation(fed, clean, top(5), 2);
    const auto b = sim::run_simulation(fed, faulty, top(5), 2);
    ASSERT_EQ(a.rounds.size(), b.rounds.size());
    EXPECT_GT(b.summary.total_failures, 0);
    for (std::size_t r = 0; r < a.rounds.size(); ++r) {
        EXPECT_EQ(a.rounds[r].acc, b.rounds[r].acc);
        EXPECT_EQ(a.rounds[r].loss, b.rounds[r].loss);
        EXPECT_LT(a.rounds[r].sim_clock, b.rounds[r].sim_clock);
    }
}

TEST(RunSimulation, ClockAndFailureAccounting) {
    const auto fed = data::generate_synthetic_federation(20, 40, 2, 0.5, 9);
    auto cfg = quiet_config(40);
    cfg.failure_injection = true;
    cfg.weibull = {0.8, 1.0};
    cfg.max_recoveries = 1;
    const auto rep = sim::run_simulation(fed, cfg, top(6), 4);
    double prev = 0.0;
    int excluded = 0;
    for (const auto& r : rep.rounds) {
        EXPECT_GT(r.sim_clock, prev);
        prev = r.sim_clock;
        EXPECT_EQ(r.failures - r.recoveries, r.excluded) << "round " << r.round;
        EXPECT_LE(r.k, 6);
        excluded += r.excluded;
    }
    EXPECT_GT(excluded, 0);
}

TEST(RunSimulation, UnavailableRoundsAreSkipped) {
    auto fed = data::generate_synthetic_federation(4, 20, 2, 0.5, 1);
    for (auto& p : fed.profiles) p.availability_prob = 0.0;
    auto cfg = quiet_config(3);
    const auto rep = sim::run_simulation(fed, cfg, top(2), 1);
    EXPECT_TRUE(rep.rounds.empty());
    EXPECT_EQ(rep.summary.skipped_rounds, 3);
    EXPECT_DOUBLE_EQ(rep.summary.sim_time, 3.0 * cfg.idle_time);
}

TEST(RunSimulation, PrivacySpendTracksWorstClient) {
    const auto fed = always_available(6, 20, 2, 2);
    auto cfg = quiet_config(7);
    cfg.dp_enabled = true;
    cfg.privacy = {0.5, 1e-6};
    cfg.selection_mode = sim::SelectionMode::full;
    const auto rep = sim::run_simulation(fed, cfg, top(6), 3);
    EXPECT_NEAR(rep.summary.epsilon_spent, 3.5, 1e-12);
    EXPECT_NEAR(rep.summary.delta_spent, 7e-6, 1e-18);
}

TEST(RunSimulation, ConvergenceStopsEarly) {
    const auto fed = always_available(6, 40, 2, 2);
    auto cfg = quiet_config(500);
    cfg.convergence_enabled = true;
    cfg.convergence_patience = 5;
    const auto rep = sim::run_simulation(fed, cfg, top(3), 3);
    EXPECT_TRUE(rep.summary.converged);
    EXPECT_LT(rep.summary.rounds_run, 500);
}

TEST(RunSimulation, RejectsInconsistentFederation) {
    auto fed = data::generate_synthetic_federation(4, 20, 2, 0.5, 1);
    fed.holdout = {};
    fed.holdout.dim = 2;
    EXPECT_THROW(sim::run_simulation(fed, quiet_config(1), top(2), 1), InvalidArgument);
    auto fed2 = data::generate_synthetic_federation(4, 20, 2, 0.5, 1);
    EXPECT_THROW(sim::run_simulation(fed2, quiet_config(1), top(5), 1), InvalidArgument);
}

// ---------------------------------------------------------------------------
// Reports

TEST(Report, SerializeParseRoundTrip) {
    const auto fed = data::generate_synthetic_federation(6, 20, 2, 0.5, 5);
    auto cfg = quiet_config(6);
    cfg.dp_enabled = true;
    const auto rep = sim::run_simulation(fed, cfg, top(3), 5);
    const auto text = report::serialize(rep);
    const auto back = report::parse(text);
    EXPECT_EQ(back, rep);
    EXPECT_EQ(report::serialize(back), text);
}

TEST(Report, RoundsToTargetCensored) {
    report::RunReport rep;
    rep.summary.max_rounds = 10;
    rep.rounds.push_back({});
    rep.rounds.back().round = 1;
    rep.rounds.back().acc = 0.6;
    rep.rounds.push_back({});
    rep.rounds.back().round = 2;
    rep.rounds.back().acc = 0.8;
    rep.rounds.back().sim_clock = 4.0;
    EXPECT_EQ(rep.rounds_to_target(0.75), 2);
    EXPECT_EQ(rep.time_to_target(0.75), 4.0);
    EXPECT_EQ(rep.rounds_to_target(0.9), 11);
    EXPECT_TRUE(std::isinf(rep.time_to_target(0.9)));
}
