#pragma once

// Client-side model: L2-regularized logistic regression trained by seeded
// mini-batch gradient descent. The trainer is resumable at epoch boundaries
// so that checkpoints restore it exactly.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedsel/data.hpp"
#include "fedsel/error.hpp"
#include "fedsel/rng.hpp"

namespace fedsel::model {

/// Weights followed by the bias; length dim + 1.
struct ModelParams {
    std::vector<double> weights;

    ModelParams() = default;
    explicit ModelParams(std::vector<double> w) : weights(std::move(w)) {}
    static ModelParams zeros(std::size_t dim) { return ModelParams(std::vector<double>(dim + 1, 0.0)); }

    std::size_t size() const noexcept { return weights.size(); }
    std::size_t feature_dim() const noexcept { return weights.empty() ? 0 : weights.size() - 1; }
    double bias() const noexcept { return weights.back(); }

    bool operator==(const ModelParams&) const = default;
};

struct Gradient {
    std::vector<double> values;

    Gradient() = default;
    explicit Gradient(std::vector<double> v) : values(std::move(v)) {}

    std::size_t size() const noexcept { return values.size(); }
    bool operator==(const Gradient&) const = default;
};

struct TrainStats {
    int epochs_run = 0;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::size_t samples = 0;
};

inline double sigmoid(double z) noexcept {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// log(1 + e^z) without overflow.
inline double softplus(double z) noexcept {
    return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

inline double margin(const ModelParams& params, std::span<const double> x) noexcept {
    double z = params.bias();
    for (std::size_t j = 0; j < x.size(); ++j) z += params.weights[j] * x[j];
    return z;
}

inline void check_dims(const ModelParams& params, const data::Dataset& data) {
    if (params.size() != data.dim + 1)
        throw InvalidArgument("parameter length " + std::to_string(params.size()) +
                              " does not match feature dimension " + std::to_string(data.dim) + " + 1");
}

/// Mean log-loss over `rows` plus (l2/2)*||weights||^2 (bias excluded).
inline double objective(const ModelParams& params, const data::Dataset& data,
                        std::span<const std::size_t> rows, double l2) {
    double total = 0.0;
    for (std::size_t i : rows) {
        const double z = margin(params, data.row(i));
        total += softplus(z) - static_cast<double>(data.labels[i]) * z;
    }
    double reg = 0.0;
    for (std::size_t j = 0; j + 1 < params.size(); ++j) reg += params.weights[j] * params.weights[j];
    return total / static_cast<double>(rows.size()) + 0.5 * l2 * reg;
}

inline std::vector<std::size_t> all_rows(const data::Dataset& data) {
    std::vector<std::size_t> rows(data.rows());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return rows;
}

inline double training_loss(const ModelParams& params, const data::Dataset& data, double l2) {
    check_dims(params, data);
    if (data.empty()) throw InvalidArgument("empty dataset");
    const auto rows = all_rows(data);
    return objective(params, data, rows, l2);
}

inline Gradient gradient_over(const ModelParams& params, const data::Dataset& data,
                              std::span<const std::size_t> rows, double l2) {
    const std::size_t d = data.dim;
    std::vector<double> g(d + 1, 0.0);
    for (std::size_t i : rows) {
        const auto x = data.row(i);
        const double r = sigmoid(margin(params, x)) - static_cast<double>(data.labels[i]);
        for (std::size_t j = 0; j < d; ++j) g[j] += r * x[j];
        g[d] += r;
    }
    const double inv = 1.0 / static_cast<double>(rows.size());
    for (auto& v : g) v *= inv;
    for (std::size_t j = 0; j < d; ++j) g[j] += l2 * params.weights[j];
    return Gradient(std::move(g));
}

/// Exact mean gradient of the regularized logistic loss over every row.
inline Gradient compute_gradient(const ModelParams& params, const data::Dataset& data, double l2) {
    check_dims(params, data);
    if (data.empty()) throw InvalidArgument("empty dataset");
    const auto rows = all_rows(data);
    return gradient_over(params, data, rows, l2);
}

struct Evaluation {
    double loss = 0.0;  // unregularized mean log-loss
    std::vector<double> scores;
    std::vector<data::Label> labels;
};

inline Evaluation evaluate(const ModelParams& params, const data::Dataset& data) {
    check_dims(params, data);
    Evaluation ev;
    ev.scores.reserve(data.rows());
    ev.labels = data.labels;
    double total = 0.0;
    for (std::size_t i = 0; i < data.rows(); ++i) {
        const double z = margin(params, data.row(i));
        ev.scores.push_back(sigmoid(z));
        total += softplus(z) - static_cast<double>(data.labels[i]) * z;
    }
    ev.loss = data.empty() ? 0.0 : total / static_cast<double>(data.rows());
    return ev;
}

struct TrainOptions {
    int epochs = 5;
    double lr = 0.1;
    std::size_t batch_size = 0;  // 0 = full batch
    double l2 = 0.0;
};

/// Per-step Gaussian perturbation of each mini-batch gradient after clipping.
struct StepNoise {
    double sigma = 0.0;
    double clip_norm = 1.0;
};

/// Resumable local optimizer. Shuffling and per-step noise draw from a single
/// stream, so (params, epochs done, stream cursor) is the full resume state.
class LocalTrainer {
public:
    struct State {
        ModelParams params;
        int epochs_done = 0;
        std::uint64_t cursor = 0;
    };

    LocalTrainer(const data::Dataset& data, ModelParams start, TrainOptions opt,
                 rng::Stream stream, std::optional<StepNoise> step_noise = std::nullopt)
        : data_(&data), opt_(opt), stream_(stream), noise_(step_noise),
          state_{std::move(start), 0, stream.cursor()} {
        check_dims(state_.params, data);
        if (data.empty()) throw InvalidArgument("empty dataset");
        if (opt_.epochs < 1) throw InvalidArgument("epochs must be >= 1");
        if (!(opt_.lr >= 0.0)) throw InvalidArgument("learning rate must be nonnegative");
        if (opt_.l2 < 0.0) throw InvalidArgument("l2 must be nonnegative");
        if (opt_.batch_size == 0 || opt_.batch_size > data.rows()) opt_.batch_size = data.rows();
        order_ = all_rows(data);
        initial_loss_ = objective(state_.params, data, order_, opt_.l2);
    }

    bool done() const noexcept { return state_.epochs_done >= opt_.epochs; }
    int epochs_done() const noexcept { return state_.epochs_done; }
    const ModelParams& params() const noexcept { return state_.params; }
    const TrainOptions& options() const noexcept { return opt_; }

    State snapshot() const { return state_; }

    void restore(const State& s) {
        if (s.params.size() != state_.params.size())
            throw InvalidArgument("checkpoint parameter length mismatch");
        state_ = s;
    }

    void run_epoch() {
        if (done()) return;
        const auto& data = *data_;
        const std::size_t m = data.rows();
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        stream_.seek(state_.cursor);
        if (opt_.batch_size < m) stream_.shuffle(std::span<std::size_t>(order_));

        auto& w = state_.params.weights;
        for (std::size_t begin = 0; begin < m; begin += opt_.batch_size) {
            const std::size_t end = std::min(m, begin + opt_.batch_size);
            const std::span<const std::size_t> batch(order_.data() + begin, end - begin);
            Gradient g = gradient_over(state_.params, data, batch, opt_.l2);
            if (noise_) perturb(g);
            for (std::size_t j = 0; j < w.size(); ++j) w[j] -= opt_.lr * g.values[j];
        }
        state_.cursor = stream_.cursor();
        ++state_.epochs_done;
    }

    void run_to_end() {
        while (!done()) run_epoch();
    }

    TrainStats stats() const {
        TrainStats st;
        st.epochs_run = state_.epochs_done;
        st.initial_loss = initial_loss_;
        std::vector<std::size_t> rows = all_rows(*data_);
        st.final_loss = objective(state_.params, *data_, rows, opt_.l2);
        st.samples = data_->rows();
        return st;
    }

private:
    void perturb(Gradient& g) {
        double norm = 0.0;
        for (double v : g.values) norm += v * v;
        norm = std::sqrt(norm);
        if (norm > noise_->clip_norm) {
            const double scale = noise_->clip_norm / norm;
            for (auto& v : g.values) v *= scale;
        }
        if (noise_->sigma > 0.0)
            for (auto& v : g.values) v += noise_->sigma * stream_.normal();
    }

    const data::Dataset* data_;
    TrainOptions opt_;
    rng::Stream stream_;
    std::optional<StepNoise> noise_;
    State state_;
    std::vector<std::size_t> order_;
    double initial_loss_ = 0.0;
};

inline std::pair<ModelParams, TrainStats> local_train(const ModelParams& params,
                                                      const data::Dataset& data, int epochs,
                                                      double lr, std::size_t batch_size, double l2,
                                                      std::uint64_t rng_seed) {
    if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
    if (!(lr >= 0.0)) throw InvalidArgument("learning rate must be nonnegative");
    TrainOptions opt{epochs, lr, batch_size, l2};
    LocalTrainer trainer(data, params, opt, rng::Stream(rng::derive_key(rng_seed, {rng::tag("train")})));
    trainer.run_to_end();
    return {trainer.params(), trainer.stats()};
}

} // namespace fedsel::model
