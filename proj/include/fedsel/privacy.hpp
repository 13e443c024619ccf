#pragma once

// Gaussian mechanism on client updates.

#include <cmath>
#include <cstdint>
#include <string>

#include "fedsel/error.hpp"
#include "fedsel/model.hpp"
#include "fedsel/rng.hpp"

namespace fedsel::privacy {

struct PrivacyBudget {
    double epsilon = 1.0;
    double delta = 1e-5;

    void validate() const {
        if (!(epsilon > 0.0) || !std::isfinite(epsilon))
            throw InvalidArgument("epsilon must be positive, got " + std::to_string(epsilon));
        if (!(delta > 0.0 && delta < 1.0))
            throw InvalidArgument("delta must lie in (0, 1), got " + std::to_string(delta));
    }
};

struct NoiseScale {
    double sigma = 0.0;
    double clip_norm = 1.0;
};

/// sigma = sensitivity * sqrt(2 ln(1.25/delta)) / epsilon.
inline NoiseScale calibrate_sigma(const PrivacyBudget& budget, double sensitivity) {
    budget.validate();
    if (!(sensitivity > 0.0) || !std::isfinite(sensitivity))
        throw InvalidArgument("sensitivity must be positive");
    const double sigma = sensitivity * std::sqrt(2.0 * std::log(1.25 / budget.delta)) / budget.epsilon;
    return {sigma, sensitivity};
}

inline double l2_norm(const model::Gradient& g) noexcept {
    double s = 0.0;
    for (double v : g.values) s += v * v;
    return std::sqrt(s);
}

inline model::Gradient clip_update(model::Gradient update, double clip_norm) {
    if (!(clip_norm > 0.0)) throw InvalidArgument("clip_norm must be positive");
    const double norm = l2_norm(update);
    if (norm > clip_norm) {
        const double scale = clip_norm / norm;
        for (auto& v : update.values) v *= scale;
    }
    return update;
}

/// Adds N(0, sigma^2) to each coordinate; coordinate j uses stream draws
/// 2j+1 and 2j+2, so prefixes of the output are stable under truncation.
inline model::Gradient add_gaussian_noise(model::Gradient update, const NoiseScale& scale,
                                          rng::Stream stream) {
    if (scale.sigma == 0.0) return update;
    for (auto& v : update.values) v += scale.sigma * stream.normal();
    return update;
}

inline model::Gradient add_gaussian_noise(model::Gradient update, const NoiseScale& scale,
                                          std::uint64_t rng_seed) {
    return add_gaussian_noise(std::move(update), scale,
                              rng::Stream(rng::derive_key(rng_seed, {rng::tag("dp-noise")})));
}

/// Basic sequential composition over `rounds` releases.
inline PrivacyBudget sequential_budget(const PrivacyBudget& per_round, int rounds) {
    per_round.validate();
    if (rounds < 1) throw InvalidArgument("rounds must be >= 1");
    const double eps = per_round.epsilon * rounds;
    const double delta = per_round.delta * rounds;
    if (delta >= 1.0)
        throw BudgetExhausted("composed delta " + std::to_string(delta) + " after " +
                              std::to_string(rounds) + " rounds is >= 1");
    return {eps, delta};
}

} // namespace fedsel::privacy
