#pragma once

// Federated datasets: synthetic non-IID generation, CSV ingestion and
// Dirichlet label-skew partitioning.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedsel/error.hpp"
#include "fedsel/rng.hpp"

namespace fedsel::data {

using Label = int;

/// Row-major feature matrix plus binary labels. `origin` records the index of
/// each row in whatever source it was generated or partitioned from.
struct Dataset {
    std::size_t dim = 0;
    std::vector<double> features;
    std::vector<Label> labels;
    std::vector<std::size_t> origin;

    std::size_t rows() const noexcept { return labels.size(); }
    bool empty() const noexcept { return labels.empty(); }

    std::span<const double> row(std::size_t i) const noexcept {
        return {features.data() + i * dim, dim};
    }

    void push_row(std::span<const double> x, Label y, std::size_t source) {
        features.insert(features.end(), x.begin(), x.end());
        labels.push_back(y);
        origin.push_back(source);
    }

    Dataset subset(std::span<const std::size_t> indices) const {
        Dataset out;
        out.dim = dim;
        out.features.reserve(indices.size() * dim);
        out.labels.reserve(indices.size());
        out.origin.reserve(indices.size());
        for (std::size_t i : indices) out.push_row(row(i), labels[i], origin[i]);
        return out;
    }

    double positive_fraction() const noexcept {
        if (empty()) return 0.0;
        const auto ones = std::count(labels.begin(), labels.end(), 1);
        return static_cast<double>(ones) / static_cast<double>(rows());
    }

    void validate() const {
        if (dim < 1) throw InvalidArgument("dataset dimension must be >= 1");
        if (features.size() != rows() * dim)
            throw InvalidArgument("feature matrix size does not match label count");
        if (origin.size() != rows()) throw InvalidArgument("origin index size mismatch");
        for (std::size_t i = 0; i < rows(); ++i) {
            if (labels[i] != 0 && labels[i] != 1)
                throw InvalidArgument("labels must be 0 or 1");
            for (double v : row(i))
                if (!std::isfinite(v)) throw InvalidArgument("non-finite feature value");
        }
    }
};

struct ClientProfile {
    int client_id = 0;
    double comm_cost = 1.0;
    double comp_cost = 1.0;
    double compute_capacity = 1.0;
    double availability_prob = 1.0;
};

struct FederatedDataset {
    std::vector<Dataset> shards;
    std::vector<ClientProfile> profiles;
    Dataset holdout;

    std::size_t clients() const noexcept { return shards.size(); }
    std::size_t dim() const noexcept { return holdout.dim; }

    std::size_t total_rows() const noexcept {
        std::size_t n = 0;
        for (const auto& s : shards) n += s.rows();
        return n;
    }
};

/// Ranges for the seeded heterogeneous resource profiles.
struct ProfileRanges {
    double comm_lo = 0.5, comm_hi = 2.0;
    double comp_lo = 0.5, comp_hi = 2.0;
    double capacity_lo = 0.5, capacity_hi = 2.0;
    double availability_lo = 0.7, availability_hi = 1.0;
};

inline std::vector<ClientProfile> generate_profiles(std::size_t n_clients, std::uint64_t seed,
                                                    const ProfileRanges& r = {}) {
    rng::Stream s(rng::derive_key(seed, {rng::tag("profiles")}));
    std::vector<ClientProfile> out(n_clients);
    for (std::size_t i = 0; i < n_clients; ++i) {
        auto& p = out[i];
        p.client_id = static_cast<int>(i);
        p.comm_cost = s.uniform(r.comm_lo, r.comm_hi);
        p.comp_cost = s.uniform(r.comp_lo, r.comp_hi);
        p.compute_capacity = s.uniform(r.capacity_lo, r.capacity_hi);
        p.availability_prob = std::clamp(s.uniform(r.availability_lo, r.availability_hi), 0.0, 1.0);
    }
    return out;
}

/// Full knob set for synthetic federations. The low-quality fields let a
/// fraction of clients hold few rows with flipped labels, which is how the
/// selection experiments create strongly heterogeneous data quality.
struct SyntheticSpec {
    std::size_t n_clients = 10;
    std::size_t samples_per_client = 100;
    std::size_t dim = 2;
    double dirichlet_alpha = 1.0;
    std::uint64_t seed = 0;
    double separation = 1.0;        // class means at +-separation along a random unit direction
    double low_quality_fraction = 0.0;
    std::size_t low_quality_samples = 0;  // 0 keeps samples_per_client
    double low_quality_flip = 0.0;
    ProfileRanges profiles{};
};

inline FederatedDataset generate_synthetic_federation(const SyntheticSpec& spec) {
    if (spec.n_clients < 1) throw InvalidArgument("n_clients must be >= 1");
    if (spec.samples_per_client < 2) throw InvalidArgument("samples_per_client must be >= 2");
    if (spec.dim < 1) throw InvalidArgument("dim must be >= 1");
    if (!(spec.dirichlet_alpha > 0.0) || !std::isfinite(spec.dirichlet_alpha))
        throw InvalidArgument("dirichlet_alpha must be positive");
    if (spec.low_quality_fraction < 0.0 || spec.low_quality_fraction > 1.0)
        throw InvalidArgument("low_quality_fraction must lie in [0, 1]");
    if (spec.low_quality_flip < 0.0 || spec.low_quality_flip > 1.0)
        throw InvalidArgument("low_quality_flip must lie in [0, 1]");

    rng::Stream s(rng::derive_key(spec.seed, {rng::tag("synthetic")}));

    std::vector<double> direction(spec.dim);
    double norm = 0.0;
    do {
        norm = 0.0;
        for (auto& v : direction) {
            v = s.normal();
            norm += v * v;
        }
        norm = std::sqrt(norm);
    } while (!(norm > 1e-12));
    for (auto& v : direction) v /= norm;

    std::vector<double> x(spec.dim);
    auto draw_features = [&](Label y) {
        const double sign = y == 1 ? spec.separation : -spec.separation;
        for (std::size_t j = 0; j < spec.dim; ++j) x[j] = sign * direction[j] + s.normal();
    };

    const auto n_low = static_cast<std::size_t>(
        std::llround(spec.low_quality_fraction * static_cast<double>(spec.n_clients)));
    std::vector<bool> low(spec.n_clients, false);
    {
        std::vector<std::size_t> ids(spec.n_clients);
        std::iota(ids.begin(), ids.end(), std::size_t{0});
        s.shuffle(std::span<std::size_t>(ids));
        for (std::size_t i = 0; i < n_low; ++i) low[ids[i]] = true;
    }

    FederatedDataset fed;
    fed.shards.resize(spec.n_clients);
    std::size_t next_origin = 0;
    for (std::size_t c = 0; c < spec.n_clients; ++c) {
        const std::size_t m = low[c] && spec.low_quality_samples >= 2 ? spec.low_quality_samples
                                                                      : spec.samples_per_client;
        const auto mix = s.dirichlet(2, spec.dirichlet_alpha);
        const auto ones = static_cast<std::size_t>(
            std::clamp<long long>(std::llround(mix[1] * static_cast<double>(m)), 0,
                                  static_cast<long long>(m)));
        std::vector<Label> ys(m, 0);
        std::fill(ys.begin(), ys.begin() + static_cast<std::ptrdiff_t>(ones), 1);
        s.shuffle(std::span<Label>(ys));

        auto& shard = fed.shards[c];
        shard.dim = spec.dim;
        for (Label y : ys) {
            draw_features(y);
            Label observed = y;
            if (low[c] && s.bernoulli(spec.low_quality_flip)) observed = 1 - y;
            shard.push_row(x, observed, next_origin++);
        }
    }

    // Holdout is 20% of all generated rows, drawn IID from the clean model.
    const std::size_t shard_rows = fed.total_rows();
    const std::size_t holdout_rows = std::max<std::size_t>(1, (shard_rows + 2) / 4);
    fed.holdout.dim = spec.dim;
    for (std::size_t i = 0; i < holdout_rows; ++i) {
        const Label y = s.bernoulli(0.5) ? 1 : 0;
        draw_features(y);
        fed.holdout.push_row(x, y, next_origin++);
    }

    fed.profiles = generate_profiles(spec.n_clients, spec.seed, spec.profiles);
    return fed;
}

inline FederatedDataset generate_synthetic_federation(std::size_t n_clients,
                                                      std::size_t samples_per_client,
                                                      std::size_t dim, double dirichlet_alpha,
                                                      std::uint64_t seed) {
    SyntheticSpec spec;
    spec.n_clients = n_clients;
    spec.samples_per_client = samples_per_client;
    spec.dim = dim;
    spec.dirichlet_alpha = dirichlet_alpha;
    spec.seed = seed;
    return generate_synthetic_federation(spec);
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    for (char c : line) {
        if (c == ',') {
            out.push_back(std::move(cell));
            cell.clear();
        } else if (c != '\r') {
            cell.push_back(c);
        }
    }
    out.push_back(std::move(cell));
    return out;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

} // namespace detail

/// Reads a headed, comma-separated file. Row indices in errors are 0-based
/// over data rows (the header is not counted).
inline Dataset load_csv_dataset(const std::string& path, const std::string& label_column,
                                const std::vector<std::string>& feature_columns) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    if (feature_columns.empty()) throw InvalidArgument("at least one feature column is required");

    std::string line;
    if (!std::getline(in, line)) throw SchemaError("empty file: " + path);
    const auto header = detail::split_csv_line(line);
    auto column_of = [&](const std::string& name) {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (detail::trim(header[i]) == name) return i;
        throw SchemaError("missing column \"" + name + "\"");
    };
    const std::size_t label_idx = column_of(label_column);
    std::vector<std::size_t> feature_idx;
    for (const auto& f : feature_columns) feature_idx.push_back(column_of(f));

    Dataset out;
    out.dim = feature_columns.size();
    std::vector<std::string> raw_labels;
    std::vector<double> x(out.dim);
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw ParseError(row, "expected " + std::to_string(header.size()) + " cells, got " +
                                      std::to_string(cells.size()));
        for (std::size_t j = 0; j < feature_idx.size(); ++j) {
            const std::string cell = detail::trim(cells[feature_idx[j]]);
            double v = 0.0;
            const auto* first = cell.data();
            const auto* last = cell.data() + cell.size();
            const auto [ptr, ec] = std::from_chars(first, last, v);
            if (cell.empty() || ec != std::errc{} || ptr != last || !std::isfinite(v))
                throw ParseError(row, "cannot parse \"" + cell + "\" in column \"" +
                                          feature_columns[j] + "\" as a finite real");
            x[j] = v;
        }
        out.features.insert(out.features.end(), x.begin(), x.end());
        raw_labels.push_back(detail::trim(cells[label_idx]));
        out.origin.push_back(row);
        ++row;
    }

    std::vector<std::string> distinct = raw_labels;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() > 2)
        throw UnsupportedLabel("label column \"" + label_column + "\" has " +
                               std::to_string(distinct.size()) + " distinct values; expected 2");
    out.labels.reserve(raw_labels.size());
    for (const auto& l : raw_labels) out.labels.push_back(l == distinct.front() ? 0 : 1);
    return out;
}

/// Seeded split of `fraction` of the rows into a holdout set.
inline std::pair<Dataset, Dataset> split_holdout(const Dataset& dataset, double fraction,
                                                 std::uint64_t seed) {
    if (fraction <= 0.0 || fraction >= 1.0)
        throw InvalidArgument("holdout fraction must lie in (0, 1)");
    std::vector<std::size_t> idx(dataset.rows());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    rng::Stream s(rng::derive_key(seed, {rng::tag("holdout")}));
    s.shuffle(std::span<std::size_t>(idx));
    const auto n_hold = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size()))));
    if (n_hold >= idx.size()) throw InvalidArgument("dataset too small for a holdout split");
    std::vector<std::size_t> hold(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_hold));
    std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(n_hold), idx.end());
    std::sort(hold.begin(), hold.end());
    std::sort(train.begin(), train.end());
    return {dataset.subset(train), dataset.subset(hold)};
}

/// Label-skew partition: for each class, client proportions are drawn from a
/// symmetric Dirichlet(alpha) and that class's rows are cut accordingly.
/// Each shard keeps source row order. The returned holdout is empty; pair it
/// with `split_holdout` when an evaluation split is needed.
inline FederatedDataset partition_noniid(const Dataset& dataset, std::size_t n_clients,
                                         double dirichlet_alpha, std::uint64_t seed,
                                         const ProfileRanges& ranges = {}) {
    if (n_clients < 1) throw InvalidArgument("n_clients must be >= 1");
    if (!(dirichlet_alpha > 0.0) || !std::isfinite(dirichlet_alpha))
        throw InvalidArgument("dirichlet_alpha must be positive");
    if (n_clients > dataset.rows())
        throw InvalidArgument("n_clients (" + std::to_string(n_clients) +
                              ") exceeds dataset rows (" + std::to_string(dataset.rows()) + ")");

    rng::Stream s(rng::derive_key(seed, {rng::tag("partition")}));
    std::vector<std::vector<std::size_t>> members(n_clients);
    for (Label c : {0, 1}) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < dataset.rows(); ++i)
            if (dataset.labels[i] == c) rows.push_back(i);
        s.shuffle(std::span<std::size_t>(rows));
        const auto q = s.dirichlet(n_clients, dirichlet_alpha);
        double cum = 0.0;
        std::size_t begin = 0;
        for (std::size_t k = 0; k < n_clients; ++k) {
            cum += q[k];
            std::size_t end = k + 1 == n_clients
                                  ? rows.size()
                                  : static_cast<std::size_t>(
                                        std::llround(cum * static_cast<double>(rows.size())));
            end = std::clamp(end, begin, rows.size());
            members[k].insert(members[k].end(), rows.begin() + static_cast<std::ptrdiff_t>(begin),
                              rows.begin() + static_cast<std::ptrdiff_t>(end));
            begin = end;
        }
    }

    // Every client needs at least one row; take from the currently largest shard.
    for (auto& mine : members) {
        if (!mine.empty()) continue;
        auto largest = std::max_element(members.begin(), members.end(),
                                        [](const auto& a, const auto& b) { return a.size() < b.size(); });
        mine.push_back(largest->back());
        largest->pop_back();
    }

    FederatedDataset fed;
    fed.shards.reserve(n_clients);
    for (auto& mine : members) {
        std::sort(mine.begin(), mine.end());
        fed.shards.push_back(dataset.subset(mine));
    }
    fed.profiles = generate_profiles(n_clients, seed, ranges);
    fed.holdout.dim = dataset.dim;
    return fed;
}

} // namespace fedsel::data
