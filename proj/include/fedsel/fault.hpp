#pragma once

// Fault tolerance: Weibull failure model and maximum-likelihood fitting,
// checkpoint cost models with an interval optimizer, the binary checkpoint
// format and the two recovery protocols.

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedsel/error.hpp"
#include "fedsel/model.hpp"
#include "fedsel/rng.hpp"

namespace fedsel::fault {

struct WeibullParams {
    double scale_lambda = 1.0;
    double shape_k = 1.0;

    void validate() const {
        if (!(scale_lambda > 0.0) || !std::isfinite(scale_lambda))
            throw InvalidArgument("Weibull scale must be positive");
        if (!(shape_k > 0.0) || !std::isfinite(shape_k))
            throw InvalidArgument("Weibull shape must be positive");
    }
};

struct CostModelParams {
    double total_time = 1.0;     // T
    double recovery_time = 0.0;  // t_r
    double write_cost = 0.01;    // c_w, simulated seconds per checkpoint

    void validate() const {
        if (!(total_time > 0.0)) throw InvalidArgument("total time T must be positive");
        if (!(recovery_time >= 0.0)) throw InvalidArgument("recovery time must be nonnegative");
        if (!(write_cost > 0.0)) throw InvalidArgument("checkpoint write cost must be positive");
    }
};

struct CheckpointPolicy {
    double interval = 1.0;
    bool enabled = false;
};

struct Checkpoint {
    std::uint32_t round = 0;
    std::uint32_t client_id = 0;
    model::ModelParams params;
    std::uint32_t epoch_progress = 0;
    std::uint64_t rng_cursor = 0;

    bool operator==(const Checkpoint&) const = default;
};

// ---------------------------------------------------------------------------
// Weibull model

/// p_f(t) = 1 - exp(-(t/lambda)^k)
inline double weibull_failure_prob(double t_c, const WeibullParams& params) {
    if (t_c < 0.0 || std::isnan(t_c)) throw InvalidArgument("t_c must be nonnegative");
    params.validate();
    return -std::expm1(-std::pow(t_c / params.scale_lambda, params.shape_k));
}

/// Derivative of p_f with respect to t.
inline double weibull_density(double t, const WeibullParams& params) {
    if (t <= 0.0) return params.shape_k < 1.0 ? INFINITY : (params.shape_k == 1.0 ? 1.0 / params.scale_lambda : 0.0);
    const double r = t / params.scale_lambda;
    const double rk = std::pow(r, params.shape_k);
    return params.shape_k / params.scale_lambda * (rk / r) * std::exp(-rk);
}

/// Inverse CDF: lambda * (-ln(1-u))^(1/k), u in [0, 1).
inline double weibull_quantile(double u, const WeibullParams& params) {
    params.validate();
    if (!(u >= 0.0 && u < 1.0)) throw InvalidArgument("quantile level must lie in [0, 1)");
    return params.scale_lambda * std::pow(-std::log1p(-u), 1.0 / params.shape_k);
}

inline double sample_failure_time(const WeibullParams& params, rng::Stream& stream) {
    return weibull_quantile(stream.uniform_open(), params);
}

inline double sample_failure_time(const WeibullParams& params, std::uint64_t rng_seed) {
    rng::Stream s(rng::derive_key(rng_seed, {rng::tag("failure")}));
    return sample_failure_time(params, s);
}

/// Maximum-likelihood (lambda, k) by Newton iteration on the profile
/// likelihood equation in k:
///   sum x^k ln x / sum x^k - 1/k - mean(ln x) = 0,
/// followed by lambda = (mean x^k)^(1/k). Samples are rescaled by their
/// maximum first so x^k stays in (0, 1].
inline WeibullParams fit_weibull(std::span<const double> failure_times) {
    constexpr std::size_t kMinSamples = 10;
    constexpr int kMaxIterations = 200;
    constexpr double kTolerance = 1e-8;

    if (failure_times.size() < kMinSamples)
        throw InsufficientData("Weibull fit needs at least " + std::to_string(kMinSamples) +
                               " failure times, got " + std::to_string(failure_times.size()));
    for (double x : failure_times)
        if (!(x > 0.0) || !std::isfinite(x))
            throw InvalidArgument("failure times must be positive and finite");

    const double top = *std::max_element(failure_times.begin(), failure_times.end());
    const auto n = static_cast<double>(failure_times.size());
    std::vector<double> logs;
    logs.reserve(failure_times.size());
    for (double x : failure_times) logs.push_back(std::log(x / top));

    double mean_log = 0.0;
    for (double l : logs) mean_log += l;
    mean_log /= n;
    double var_log = 0.0;
    for (double l : logs) var_log += (l - mean_log) * (l - mean_log);
    var_log /= n;
    const double sd_log = std::sqrt(var_log);
    if (!(sd_log > 1e-12))
        throw NumericError("Weibull fit does not converge: failure times have no spread");

    // Gumbel moment match for log-times gives the starting shape.
    double k = std::numbers::pi / (std::sqrt(6.0) * sd_log);
    for (int it = 0; it < kMaxIterations; ++it) {
        double b = 0.0, a = 0.0, c = 0.0;
        for (double l : logs) {
            const double yk = std::exp(k * l);
            b += yk;
            a += yk * l;
            c += yk * l * l;
        }
        const double g = a / b - 1.0 / k - mean_log;
        const double dg = (c * b - a * a) / (b * b) + 1.0 / (k * k);
        double next = k - g / dg;
        if (!(next > 0.0)) next = 0.5 * k;
        if (!std::isfinite(next) || next > 1e8)
            throw NumericError("Weibull fit diverged (shape estimate unbounded)");
        const bool converged = std::abs(next - k) <= kTolerance * k;
        k = next;
        if (converged) {
            double s = 0.0;
            for (double l : logs) s += std::exp(k * l);
            const double lambda = top * std::pow(s / n, 1.0 / k);
            if (!std::isfinite(lambda) || !(lambda > 0.0))
                throw NumericError("Weibull fit produced a non-finite scale");
            return {lambda, k};
        }
    }
    throw NumericError("Weibull fit did not converge in " + std::to_string(kMaxIterations) +
                       " iterations");
}

// ---------------------------------------------------------------------------
// Checkpoint interval

enum class CostModel { paper, amortized };

inline std::string to_string(CostModel m) { return m == CostModel::paper ? "paper" : "amortized"; }

inline CostModel parse_cost_model(const std::string& s) {
    if (s == "paper") return CostModel::paper;
    if (s == "amortized") return CostModel::amortized;
    throw InvalidArgument("unknown cost model \"" + s + "\" (expected paper|amortized)");
}

/// C(t) = t/T + p_f(t) * t_r / T
inline double checkpoint_cost_paper(double t_c, const CostModelParams& cost,
                                    const WeibullParams& weibull) {
    return t_c / cost.total_time +
           weibull_failure_prob(t_c, weibull) * cost.recovery_time / cost.total_time;
}

/// Expected overhead per unit of useful work for one interval: the write,
/// plus with probability p_f half an interval of rework and the recovery.
inline double checkpoint_cost_amortized(double t_c, const CostModelParams& cost,
                                        const WeibullParams& weibull) {
    if (!(t_c > 0.0)) throw InvalidArgument("t_c must be positive");
    return (cost.write_cost + weibull_failure_prob(t_c, weibull) * (0.5 * t_c + cost.recovery_time)) / t_c;
}

inline double checkpoint_cost(CostModel model, double t_c, const CostModelParams& cost,
                              const WeibullParams& weibull) {
    return model == CostModel::paper ? checkpoint_cost_paper(t_c, cost, weibull)
                                     : checkpoint_cost_amortized(t_c, cost, weibull);
}

struct IntervalSolution {
    CheckpointPolicy policy;
    double cost = 0.0;
    /// Set when the objective is increasing on the whole domain, so no
    /// stationary point exists and the lower bound is returned.
    bool monotone_warning = false;
};

inline IntervalSolution optimal_checkpoint_interval(const CostModelParams& cost,
                                                    const WeibullParams& weibull, CostModel model,
                                                    double t_min, double t_max) {
    cost.validate();
    weibull.validate();
    if (!(t_min > 0.0) || !(t_max > t_min) || t_max > cost.total_time)
        throw InvalidArgument("checkpoint search domain must satisfy 0 < t_min < t_max <= T");

    auto f = [&](double t) { return checkpoint_cost(model, t, cost, weibull); };

    // The amortized cost can have a local maximum between a small-t_c dip and
    // its large-t_c asymptote, so bracket the global minimum with a coarse
    // linear + logarithmic scan before refining by golden section.
    constexpr int kScan = 1024;
    std::vector<double> probes;
    probes.reserve(2 * kScan + 2);
    const double ratio = t_max / t_min;
    for (int i = 0; i <= kScan; ++i) {
        const double s = static_cast<double>(i) / kScan;
        probes.push_back(t_min + s * (t_max - t_min));
        probes.push_back(t_min * std::pow(ratio, s));
    }
    std::sort(probes.begin(), probes.end());
    probes.erase(std::unique(probes.begin(), probes.end()), probes.end());
    std::size_t best_i = 0;
    double best_probe = INFINITY;
    for (std::size_t i = 0; i < probes.size(); ++i) {
        const double v = f(probes[i]);
        if (v < best_probe) {
            best_probe = v;
            best_i = i;
        }
    }

    const double tol = 1e-6 * (t_max - t_min);
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = probes[best_i == 0 ? 0 : best_i - 1];
    double b = probes[std::min(best_i + 1, probes.size() - 1)];
    double x1 = b - inv_phi * (b - a), x2 = a + inv_phi * (b - a);
    double f1 = f(x1), f2 = f(x2);
    while (b - a > tol) {
        if (f1 <= f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        }
    }
    double best_t = 0.5 * (a + b);
    double best_f = f(best_t);
    for (double edge : {t_min, t_max, probes[best_i]}) {
        const double fe = f(edge);
        if (fe < best_f) {
            best_f = fe;
            best_t = edge;
        }
    }

    IntervalSolution sol;
    sol.policy = {best_t, true};
    sol.cost = best_f;
    // dC/dt = 1/T + p_f'(t) t_r / T > 0 for every t, so the literal model
    // never has an interior optimum.
    sol.monotone_warning = model == CostModel::paper;
    if (sol.monotone_warning) {
        sol.policy.interval = t_min;
        sol.cost = f(t_min);
    }
    return sol;
}

// ---------------------------------------------------------------------------
// Binary checkpoint format (little-endian):
//   "FSCK" | u16 version=1 | u32 round | u32 client_id | u32 epoch_progress |
//   u64 rng_cursor | u32 param_count | f64 x param_count | u32 crc32

inline constexpr std::uint16_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'F', 'S', 'C', 'K'};

namespace detail {

template <class T>
void put_le(std::vector<unsigned char>& out, T value) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<unsigned char>(u & 0xFFu));
        u = static_cast<U>(u >> 8);
    }
}

template <class T>
T get_le(std::span<const unsigned char> in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw CorruptionError("checkpoint truncated");
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        u |= static_cast<std::make_unsigned_t<T>>(in[pos + i]) << (8 * i);
    pos += sizeof(T);
    return static_cast<T>(u);
}

inline std::uint32_t crc32_of(std::span<const unsigned char> bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
    return static_cast<std::uint32_t>(crc);
}

} // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const Checkpoint& cp) {
    std::vector<unsigned char> out;
    out.reserve(4 + 2 + 4 * 3 + 8 + 4 + 8 * cp.params.size() + 4);
    out.insert(out.end(), std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
    detail::put_le<std::uint16_t>(out, kCheckpointVersion);
    detail::put_le<std::uint32_t>(out, cp.round);
    detail::put_le<std::uint32_t>(out, cp.client_id);
    detail::put_le<std::uint32_t>(out, cp.epoch_progress);
    detail::put_le<std::uint64_t>(out, cp.rng_cursor);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cp.params.size()));
    for (double w : cp.params.weights) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(w));
    detail::put_le<std::uint32_t>(out, detail::crc32_of(out));
    return out;
}

inline Checkpoint decode_checkpoint(std::span<const unsigned char> bytes) {
    if (bytes.size() < 4 + 2 || !std::equal(std::begin(kCheckpointMagic), std::end(kCheckpointMagic), bytes.begin()))
        throw FormatError("not a checkpoint file (bad magic)");
    std::size_t pos = 4;
    const auto version = detail::get_le<std::uint16_t>(bytes, pos);
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    if (bytes.size() < 4 + 4) throw CorruptionError("checkpoint truncated");
    const std::size_t body = bytes.size() - 4;
    std::size_t crc_pos = body;
    const auto stored = detail::get_le<std::uint32_t>(bytes, crc_pos);
    if (stored != detail::crc32_of(bytes.first(body))) throw CorruptionError("checkpoint checksum mismatch");

    Checkpoint cp;
    cp.round = detail::get_le<std::uint32_t>(bytes, pos);
    cp.client_id = detail::get_le<std::uint32_t>(bytes, pos);
    cp.epoch_progress = detail::get_le<std::uint32_t>(bytes, pos);
    cp.rng_cursor = detail::get_le<std::uint64_t>(bytes, pos);
    const auto count = detail::get_le<std::uint32_t>(bytes, pos);
    if (pos + 8ull * count != body) throw CorruptionError("checkpoint length does not match parameter count");
    cp.params.weights.resize(count);
    for (auto& w : cp.params.weights) w = std::bit_cast<double>(detail::get_le<std::uint64_t>(bytes, pos));
    return cp;
}

inline std::string checkpoint_filename(std::uint32_t client_id, std::uint32_t round) {
    return "ckpt_c" + std::to_string(client_id) + "_r" + std::to_string(round) + ".bin";
}

/// Writes through a temporary sibling and renames, so readers never observe a
/// partially written checkpoint.
inline void save_checkpoint(const Checkpoint& cp, const std::filesystem::path& path) {
    const auto bytes = encode_checkpoint(cp);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

/// Recovery without a checkpoint: the client restarts from the latest global weights.
inline model::ModelParams recover_without_checkpoint(const model::ModelParams& global_params) {
    return global_params;
}

/// Latest checkpoint per client, optionally mirrored to a directory of
/// binary files. Distinct clients may save concurrently.
class CheckpointStore {
public:
    CheckpointStore() = default;
    explicit CheckpointStore(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(*dir_);
    }

    void save(const Checkpoint& cp) {
        if (dir_) save_checkpoint(cp, *dir_ / checkpoint_filename(cp.client_id, cp.round));
        std::lock_guard lock(mu_);
        latest_[cp.client_id] = cp;
    }

    std::optional<Checkpoint> latest(std::uint32_t client_id, std::uint32_t round) const {
        std::optional<Checkpoint> cp;
        {
            std::lock_guard lock(mu_);
            auto it = latest_.find(client_id);
            if (it == latest_.end() || it->second.round != round) return std::nullopt;
            cp = it->second;
        }
        if (dir_) return load_checkpoint(*dir_ / checkpoint_filename(client_id, round));
        return cp;
    }

    void discard(std::uint32_t client_id) {
        std::lock_guard lock(mu_);
        latest_.erase(client_id);
    }

    const std::optional<std::filesystem::path>& directory() const noexcept { return dir_; }

private:
    std::optional<std::filesystem::path> dir_;
    mutable std::mutex mu_;
    std::map<std::uint32_t, Checkpoint> latest_;
};

} // namespace fedsel::fault
