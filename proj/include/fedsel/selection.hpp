#pragma once

// Utility-based client selection: scoring, availability sampling, top-K,
// the accuracy/cost objective and the adaptive K schedule.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fedsel/data.hpp"
#include "fedsel/error.hpp"
#include "fedsel/model.hpp"
#include "fedsel/rng.hpp"

namespace fedsel::selection {

struct UtilityComponents {
    double loss_improvement = 0.0;
    double data_fraction = 0.0;
    double capacity_norm = 0.0;
};

struct UtilityScore {
    int client_id = 0;
    double value = 0.0;
    UtilityComponents components;
};

struct SelectionConfig {
    int k = 10;
    double alpha = 1.0;
    double gamma = 0.01;
    bool adaptive = false;
    int k_min = 1;
    int k_max = 10;
    int patience = 5;
    std::array<double, 3> utility_weights{0.5, 0.3, 0.2};
    double ema_decay = 0.5;

    void validate(std::size_t n_clients) const {
        if (k < 1) throw InvalidArgument("selection k must be >= 1");
        if (k_min < 1 || k_min > k || k > k_max || static_cast<std::size_t>(k_max) > n_clients)
            throw InvalidArgument("selection bounds must satisfy 1 <= k_min <= k <= k_max <= N");
        if (patience < 1) throw InvalidArgument("selection patience must be >= 1");
        double sum = 0.0;
        for (double b : utility_weights) {
            if (b < 0.0) throw InvalidArgument("utility weights must be nonnegative");
            sum += b;
        }
        if (std::abs(sum - 1.0) > 1e-9) throw InvalidArgument("utility weights must sum to 1");
        if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw InvalidArgument("ema_decay must lie in [0, 1)");
        if (alpha < 0.0 || gamma < 0.0) throw InvalidArgument("alpha and gamma must be nonnegative");
    }
};

struct RoundSelection {
    int round = 0;
    std::vector<int> selected;  // ascending client id
    double objective_value = 0.0;
};

/// Range of compute capacities across the federation, for min-max scaling.
struct CapacityRange {
    double lo = 1.0;
    double hi = 1.0;

    static CapacityRange of(std::span<const data::ClientProfile> profiles) {
        CapacityRange r{INFINITY, -INFINITY};
        for (const auto& p : profiles) {
            r.lo = std::min(r.lo, p.compute_capacity);
            r.hi = std::max(r.hi, p.compute_capacity);
        }
        if (profiles.empty()) r = {1.0, 1.0};
        return r;
    }

    double normalize(double capacity) const noexcept {
        if (!(hi > lo)) return 1.0;
        return std::clamp((capacity - lo) / (hi - lo), 0.0, 1.0);
    }
};

inline UtilityScore score_from_components(const UtilityScore& prev, const UtilityComponents& c,
                                          const SelectionConfig& config) {
    const auto& b = config.utility_weights;
    const double raw = b[0] * c.loss_improvement + b[1] * c.data_fraction + b[2] * c.capacity_norm;
    UtilityScore out;
    out.client_id = prev.client_id;
    out.components = c;
    out.value = config.ema_decay * prev.value + (1.0 - config.ema_decay) * raw;
    return out;
}

/// Loss improvement is (initial - final) / initial, clamped to [0, 1].
inline UtilityScore compute_utility(const UtilityScore& prev, const model::TrainStats& stats,
                                    const data::ClientProfile& profile, double data_fraction,
                                    const CapacityRange& capacity, const SelectionConfig& config) {
    UtilityComponents c;
    if (stats.initial_loss > 0.0)
        c.loss_improvement = std::clamp((stats.initial_loss - stats.final_loss) / stats.initial_loss, 0.0, 1.0);
    c.data_fraction = std::clamp(data_fraction, 0.0, 1.0);
    c.capacity_norm = capacity.normalize(profile.compute_capacity);
    return score_from_components(prev, c, config);
}

/// Scores before any training evidence: loss improvement is taken as 0.
/// The data component is shard size relative to the largest shard.
inline std::vector<UtilityScore> initial_utilities(const data::FederatedDataset& fed,
                                                   const SelectionConfig& config) {
    std::size_t largest = 1;
    for (const auto& s : fed.shards) largest = std::max(largest, s.rows());
    const auto cap = CapacityRange::of(fed.profiles);
    std::vector<UtilityScore> out(fed.clients());
    for (std::size_t i = 0; i < fed.clients(); ++i) {
        UtilityComponents c;
        c.data_fraction = static_cast<double>(fed.shards[i].rows()) / static_cast<double>(largest);
        c.capacity_norm = cap.normalize(fed.profiles[i].compute_capacity);
        const auto& b = config.utility_weights;
        out[i].client_id = fed.profiles[i].client_id;
        out[i].components = c;
        out[i].value = b[1] * c.data_fraction + b[2] * c.capacity_norm;
    }
    return out;
}

/// Each client is included independently with its availability probability.
inline std::vector<int> get_available_clients(std::span<const data::ClientProfile> profiles,
                                              int round, std::uint64_t rng_seed) {
    rng::Stream s(rng::derive_key(rng_seed, {rng::tag("availability"), static_cast<std::uint64_t>(round)}));
    std::vector<int> out;
    for (const auto& p : profiles)
        if (s.uniform() < p.availability_prob) out.push_back(p.client_id);
    std::sort(out.begin(), out.end());
    return out;
}

/// Highest-utility available clients; ties go to the lower client id.
inline RoundSelection select_top_k(std::span<const int> available,
                                   std::span<const UtilityScore> utilities, int k) {
    if (k < 1) throw InvalidArgument("k must be >= 1");
    if (available.empty()) throw NoClients("no clients available for selection");
    std::map<int, double> value;
    for (const auto& u : utilities) value[u.client_id] = u.value;

    std::vector<int> ranked(available.begin(), available.end());
    for (int id : ranked)
        if (!value.contains(id)) throw InvalidArgument("no utility score for client " + std::to_string(id));
    std::sort(ranked.begin(), ranked.end(), [&](int a, int b) {
        const double va = value[a], vb = value[b];
        return va != vb ? va > vb : a < b;
    });
    ranked.resize(std::min<std::size_t>(static_cast<std::size_t>(k), ranked.size()));
    std::sort(ranked.begin(), ranked.end());
    return RoundSelection{0, std::move(ranked), 0.0};
}

/// Uniformly random subset of min(k, |available|) clients.
inline RoundSelection select_random_k(std::span<const int> available, int k, int round,
                                      std::uint64_t rng_seed) {
    if (k < 1) throw InvalidArgument("k must be >= 1");
    if (available.empty()) throw NoClients("no clients available for selection");
    std::vector<int> pool(available.begin(), available.end());
    rng::Stream s(rng::derive_key(rng_seed, {rng::tag("random-selection"), static_cast<std::uint64_t>(round)}));
    s.shuffle(std::span<int>(pool));
    pool.resize(std::min<std::size_t>(static_cast<std::size_t>(k), pool.size()));
    std::sort(pool.begin(), pool.end());
    return RoundSelection{round, std::move(pool), 0.0};
}

/// Cost(S) = sum over S of (comm + comp).
inline double compute_cost(std::span<const int> selected, std::span<const data::ClientProfile> profiles) {
    double total = 0.0;
    for (int id : selected) {
        auto it = std::find_if(profiles.begin(), profiles.end(),
                               [id](const auto& p) { return p.client_id == id; });
        if (it == profiles.end()) throw InvalidArgument("unknown client id " + std::to_string(id));
        total += it->comm_cost + it->comp_cost;
    }
    return total;
}

/// F = alpha * accuracy - gamma * cost
inline double compute_objective(double accuracy, double cost, double alpha, double gamma) noexcept {
    return alpha * accuracy - gamma * cost;
}

/// Improvement of the running best over the last `patience` entries. The
/// reference is the best value before that window, or the first entry when
/// the history is exactly `patience` long.
inline double recent_best_gain(std::span<const double> history, int patience) {
    const auto n = history.size();
    const auto p = static_cast<std::size_t>(patience);
    const std::size_t ref_end = n > p ? n - p : 1;
    const double before = *std::max_element(history.begin(), history.begin() + static_cast<std::ptrdiff_t>(ref_end));
    const double best = *std::max_element(history.begin(), history.end());
    return best - before;
}

/// Grows K by one while holdout accuracy has plateaued.
inline int adapt_k(std::span<const double> accuracy_history, const SelectionConfig& config, int current_k) {
    if (!config.adaptive) return current_k;
    constexpr double kMinGain = 0.001;
    int k = std::clamp(current_k, config.k_min, config.k_max);
    if (config.patience < 1 || accuracy_history.size() < static_cast<std::size_t>(config.patience)) return k;
    if (recent_best_gain(accuracy_history, config.patience) < kMinGain) k = std::min(k + 1, config.k_max);
    return k;
}

} // namespace fedsel::selection
