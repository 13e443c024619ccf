#pragma once

// Classification metrics and the Mann-Whitney U test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedsel/data.hpp"
#include "fedsel/error.hpp"
#include "fedsel/report.hpp"

namespace fedsel::stats {

inline double accuracy(std::span<const data::Label> labels, std::span<const double> scores,
                       double threshold = 0.5) {
    if (labels.empty()) throw InvalidArgument("accuracy of an empty sample is undefined");
    if (labels.size() != scores.size()) throw InvalidArgument("labels and scores differ in length");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        hits += (scores[i] >= threshold ? 1 : 0) == labels[i];
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

/// 1-based ranks of `values` with ties sharing their average rank.
inline std::vector<double> midranks(std::span<const double> values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
    std::vector<double> ranks(values.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
        i = j + 1;
    }
    return ranks;
}

/// P(score of a random positive > random negative), ties counted one half.
inline double auc_roc(std::span<const data::Label> labels, std::span<const double> scores) {
    if (labels.size() != scores.size()) throw InvalidArgument("labels and scores differ in length");
    const auto ranks = midranks(scores);
    double pos_rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 1) {
            pos_rank_sum += ranks[i];
            ++n_pos;
        }
    }
    const std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw UndefinedMetric("AUC-ROC needs both classes present");
    const double np = static_cast<double>(n_pos);
    return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

enum class Alternative { two_sided, greater, less };
enum class UMethod { exact, normal_approx };

inline std::string to_string(UMethod m) { return m == UMethod::exact ? "exact" : "normal-approx"; }

struct UTestResult {
    double u_statistic = 0.0;  // U of sample a
    double p_value = 1.0;
    UMethod method = UMethod::exact;
    std::size_t n_a = 0;
    std::size_t n_b = 0;
};

/// Exact path is used iff n_a * n_b <= this.
inline constexpr std::size_t kExactCellLimit = 400;

namespace detail {

/// Null distribution of 2*U_a: counts[v] = number of size-n_a subsets of
/// the pooled doubled midranks whose 2*U_a equals v. Counted by dynamic
/// programming over subset sums, which is equivalent to full enumeration.
inline std::vector<double> exact_u2_counts(std::span<const long long> ranks2, std::size_t n_a) {
    const long long total = std::accumulate(ranks2.begin(), ranks2.end(), 0LL);
    std::vector<std::vector<double>> dp(n_a + 1, std::vector<double>(static_cast<std::size_t>(total) + 1, 0.0));
    dp[0][0] = 1.0;
    std::size_t seen = 0;
    for (long long r : ranks2) {
        ++seen;
        for (std::size_t j = std::min(seen, n_a); j >= 1; --j) {
            auto& dst = dp[j];
            const auto& src = dp[j - 1];
            for (long long s = total; s >= r; --s) dst[static_cast<std::size_t>(s)] += src[static_cast<std::size_t>(s - r)];
        }
    }
    const long long offset = static_cast<long long>(n_a * (n_a + 1));
    std::vector<double> counts;
    for (long long s = offset; s <= total; ++s) {
        const auto v = static_cast<std::size_t>(s - offset);
        if (counts.size() <= v) counts.resize(v + 1, 0.0);
        counts[v] = dp[n_a][static_cast<std::size_t>(s)];
    }
    return counts;
}

inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

} // namespace detail

/// Mann-Whitney U with midrank ties. Exact permutation p-value when
/// n_a * n_b <= 400; otherwise the normal approximation with tie-corrected
/// variance and a 0.5 continuity correction. `force` overrides the choice.
inline UTestResult mann_whitney_u(std::span<const double> a, std::span<const double> b,
                                  Alternative alt = Alternative::two_sided,
                                  std::optional<UMethod> force = std::nullopt) {
    if (a.empty() || b.empty()) throw InvalidArgument("Mann-Whitney U needs two non-empty samples");
    const std::size_t na = a.size(), nb = b.size(), n = na + nb;
    std::vector<double> pooled(a.begin(), a.end());
    pooled.insert(pooled.end(), b.begin(), b.end());
    const auto ranks = midranks(pooled);

    long long r2_a = 0;  // doubled rank sum of a; midranks are multiples of 1/2
    std::vector<long long> ranks2(n);
    for (std::size_t i = 0; i < n; ++i) {
        ranks2[i] = std::llround(2.0 * ranks[i]);
        if (i < na) r2_a += ranks2[i];
    }
    const long long u2_a = r2_a - static_cast<long long>(na * (na + 1));
    const long long cells = static_cast<long long>(na * nb);

    UTestResult res;
    res.n_a = na;
    res.n_b = nb;
    res.u_statistic = 0.5 * static_cast<double>(u2_a);

    if (force ? *force == UMethod::exact : na * nb <= kExactCellLimit) {
        res.method = UMethod::exact;
        // Count over the smaller side; U_a = n_a n_b - U_b.
        const bool swap = nb < na;
        const auto counts = detail::exact_u2_counts(ranks2, swap ? nb : na);
        double total = 0.0, tail = 0.0;
        for (std::size_t v = 0; v < counts.size(); ++v) {
            if (counts[v] == 0.0) continue;
            const long long u2 = swap ? 2 * cells - static_cast<long long>(v) : static_cast<long long>(v);
            total += counts[v];
            bool extreme = false;
            switch (alt) {
            case Alternative::two_sided: extreme = std::llabs(u2 - cells) >= std::llabs(u2_a - cells); break;
            case Alternative::greater: extreme = u2 >= u2_a; break;
            case Alternative::less: extreme = u2 <= u2_a; break;
            }
            if (extreme) tail += counts[v];
        }
        res.p_value = std::min(1.0, tail / total);
        return res;
    }

    res.method = UMethod::normal_approx;
    double tie_term = 0.0;
    {
        std::vector<double> sorted = pooled;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < n;) {
            std::size_t j = i;
            while (j < n && sorted[j] == sorted[i]) ++j;
            const double t = static_cast<double>(j - i);
            tie_term += t * t * t - t;
            i = j;
        }
    }
    const double dn = static_cast<double>(n);
    const double mu = static_cast<double>(cells) / 2.0;
    const double var = static_cast<double>(cells) / 12.0 * ((dn + 1.0) - tie_term / (dn * (dn - 1.0)));
    if (!(var > 0.0)) {
        res.p_value = 1.0;
        return res;
    }
    const double sd = std::sqrt(var);
    const double diff = res.u_statistic - mu;
    double p = 1.0;
    switch (alt) {
    case Alternative::two_sided: p = 2.0 * detail::normal_sf(std::max(0.0, std::abs(diff) - 0.5) / sd); break;
    case Alternative::greater: p = detail::normal_sf((diff - 0.5) / sd); break;
    case Alternative::less: p = detail::normal_sf((-diff - 0.5) / sd); break;
    }
    res.p_value = std::clamp(p, 0.0, 1.0);
    return res;
}

enum class RunMetric { acc, auc, rounds_to_target };

inline std::string to_string(RunMetric m) {
    switch (m) {
    case RunMetric::acc: return "acc";
    case RunMetric::auc: return "auc";
    case RunMetric::rounds_to_target: return "rounds-to-target";
    }
    return "?";
}

inline RunMetric parse_run_metric(const std::string& s) {
    if (s == "acc") return RunMetric::acc;
    if (s == "auc") return RunMetric::auc;
    if (s == "rounds-to-target") return RunMetric::rounds_to_target;
    throw InvalidArgument("unknown metric \"" + s + "\" (expected acc|auc|rounds-to-target)");
}

/// Final-round metric of each report; rounds-to-target is censored at
/// max_rounds + 1 for runs that never reach `target`.
inline std::vector<double> extract_metric(std::span<const report::RunReport> reports, RunMetric metric,
                                          double target) {
    std::vector<double> out;
    for (const auto& r : reports) {
        if (metric == RunMetric::rounds_to_target) {
            out.push_back(static_cast<double>(r.rounds_to_target(target)));
            continue;
        }
        const auto* last = r.final_round();
        if (last == nullptr) throw InvalidArgument("report has no completed rounds for metric " + to_string(metric));
        const double v = metric == RunMetric::acc ? last->acc : last->auc;
        if (!std::isfinite(v)) throw InvalidArgument("metric " + to_string(metric) + " unavailable in a report");
        out.push_back(v);
    }
    return out;
}

inline UTestResult compare_runs(std::span<const report::RunReport> reports_a,
                                std::span<const report::RunReport> reports_b, RunMetric metric,
                                double target = 0.0, Alternative alt = Alternative::two_sided) {
    if (reports_a.size() < 3 || reports_b.size() < 3)
        throw InvalidArgument("compare_runs needs at least 3 reports per side");
    const auto a = extract_metric(reports_a, metric, target);
    const auto b = extract_metric(reports_b, metric, target);
    return mann_whitney_u(a, b, alt);
}

/// Spearman rank correlation (midranks, Pearson on ranks).
inline double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("spearman needs two equal-length samples");
    const auto rx = midranks(x), ry = midranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

} // namespace fedsel::stats
