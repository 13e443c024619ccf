#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "fedsel/data.hpp"
#include "fedsel/rng.hpp"
#include "helpers.hpp"

using namespace fedsel;
using testing_util::TempDir;
using testing_util::write_text;

namespace {

double class1_fraction(const data::Dataset& d) { return d.positive_fraction(); }

double global_fraction(const data::FederatedDataset& fed) {
    double ones = 0.0;
    for (const auto& s : fed.shards) ones += class1_fraction(s) * static_cast<double>(s.rows());
    return ones / static_cast<double>(fed.total_rows());
}

data::Dataset balanced_source(std::size_t m, std::uint64_t seed) {
    rng::Stream s(seed);
    data::Dataset d;
    d.dim = 3;
    for (std::size_t i = 0; i < m; ++i) {
        std::vector<double> x{s.normal(), s.normal(), s.normal()};
        d.push_row(x, static_cast<int>(i % 2), i);
    }
    return d;
}

} // namespace

// ---------------------------------------------------------------------------
// RNG streams

TEST(Stream, SeekReproducesDraws) {
    rng::Stream a(rng::derive_key(42, {rng::tag("x")}));
    std::vector<std::uint64_t> first;
    for (int i = 0; i < 16; ++i) first.push_back(a.next_u64());
    rng::Stream b(a.key());
    b.seek(8);
    for (int i = 8; i < 16; ++i) EXPECT_EQ(b.next_u64(), first[static_cast<std::size_t>(i)]);
}

TEST(Stream, NormalUsesTwoDraws) {
    rng::Stream s(7);
    for (int i = 0; i < 10; ++i) s.normal();
    EXPECT_EQ(s.cursor(), 20u);
}

TEST(Stream, DerivedKeysDifferByPurpose) {
    EXPECT_NE(rng::derive_key(1, {rng::tag("train")}), rng::derive_key(1, {rng::tag("failure")}));
    EXPECT_NE(rng::derive_key(1, {1, 2}), rng::derive_key(1, {2, 1}));
    EXPECT_EQ(rng::derive_key(9, {3, 4}), rng::derive_key(9, {3, 4}));
}

TEST(Stream, UniformMomentsMatchOracle) {
    rng::Stream s(123);
    const int n = 200000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double u = s.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        sum += u;
        sq += u * u;
    }
    const double mean = sum / n, var = sq / n - mean * mean;
    EXPECT_NEAR(mean, 0.5, 4.0 * std::sqrt(1.0 / 12.0 / n));
    EXPECT_NEAR(var, 1.0 / 12.0, 0.002);
}

TEST(Stream, GammaMeanMatchesShape) {
    for (double shape : {0.3, 1.0, 4.5}) {
        rng::Stream s(rng::derive_key(5, {static_cast<std::uint64_t>(shape * 10)}));
        const int n = 100000;
        double sum = 0.0;
        for (int i = 0; i < n; ++i) sum += s.gamma(shape);
        // Gamma(shape, 1) has mean and variance equal to shape.
        EXPECT_NEAR(sum / n, shape, 4.0 * std::sqrt(shape / n)) << "shape " << shape;
    }
}

TEST(Stream, DirichletSumsToOne) {
    rng::Stream s(11);
    for (double alpha : {0.05, 1.0, 1e6}) {
        const auto p = s.dirichlet(5, alpha);
        double total = 0.0;
        for (double v : p) {
            EXPECT_GE(v, 0.0);
            total += v;
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
    }
}

TEST(Stream, ShuffleIsPermutation) {
    rng::Stream s(3);
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) v[static_cast<std::size_t>(i)] = i;
    s.shuffle(std::span<int>(v));
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[static_cast<std::size_t>(i)], i);
}

// ---------------------------------------------------------------------------
// Synthetic federations

TEST(Synthetic, LargeAlphaGivesNearGlobalLabelMix) {
    const auto fed = data::generate_synthetic_federation(4, 100, 2, 1e6, 7);
    const double g = global_fraction(fed);
    for (const auto& s : fed.shards) EXPECT_NEAR(class1_fraction(s), g, 0.05);
}

TEST(Synthetic, SingleClientKeepsRowCount) {
    const auto fed = data::generate_synthetic_federation(1, 10, 2, 0.5, 1);
    ASSERT_EQ(fed.clients(), 1u);
    EXPECT_EQ(fed.shards[0].rows(), 10u);
}

TEST(Synthetic, SmallAlphaSkewsSomeClient) {
    const auto fed = data::generate_synthetic_federation(4, 100, 2, 0.05, 7);
    bool skewed = false;
    for (const auto& s : fed.shards) {
        const double f = class1_fraction(s);
        skewed = skewed || f <= 0.1 || f >= 0.9;
    }
    EXPECT_TRUE(skewed);
}

TEST(Synthetic, LabelMixConvergesForLargeAlphaAcrossSeeds) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto fed = data::generate_synthetic_federation(8, 100, 2, 1e5, seed);
        const double g = global_fraction(fed);
        double worst = 0.0;
        for (const auto& s : fed.shards) worst = std::max(worst, std::abs(class1_fraction(s) - g));
        EXPECT_LT(worst, 0.05) << "seed " << seed;
    }
}

TEST(Synthetic, DeterministicPerSeed) {
    const auto a = data::generate_synthetic_federation(6, 30, 3, 0.5, 99);
    const auto b = data::generate_synthetic_federation(6, 30, 3, 0.5, 99);
    ASSERT_EQ(a.clients(), b.clients());
    for (std::size_t i = 0; i < a.clients(); ++i) {
        EXPECT_EQ(a.shards[i].features, b.shards[i].features);
        EXPECT_EQ(a.shards[i].labels, b.shards[i].labels);
        EXPECT_EQ(a.profiles[i].compute_capacity, b.profiles[i].compute_capacity);
    }
    EXPECT_EQ(a.holdout.features, b.holdout.features);
    const auto c = data::generate_synthetic_federation(6, 30, 3, 0.5, 100);
    EXPECT_NE(a.holdout.features, c.holdout.features);
}

TEST(Synthetic, HoldoutDisjointFromShards) {
    const auto fed = data::generate_synthetic_federation(10, 50, 2, 1.0, 4);
    std::set<std::size_t> seen;
    for (const auto& s : fed.shards)
        for (auto o : s.origin) EXPECT_TRUE(seen.insert(o).second);
    for (auto o : fed.holdout.origin) EXPECT_TRUE(seen.insert(o).second) << "holdout row " << o;
    fed.holdout.validate();
    for (const auto& s : fed.shards) s.validate();
}

TEST(Synthetic, ProfilesWithinRanges) {
    const auto fed = data::generate_synthetic_federation(200, 5, 1, 1.0, 8);
    std::set<int> ids;
    for (const auto& p : fed.profiles) {
        EXPECT_TRUE(ids.insert(p.client_id).second);
        EXPECT_GE(p.comm_cost, 0.5);
        EXPECT_LE(p.comm_cost, 2.0);
        EXPECT_GE(p.comp_cost, 0.5);
        EXPECT_LE(p.comp_cost, 2.0);
        EXPECT_GE(p.compute_capacity, 0.5);
        EXPECT_LE(p.compute_capacity, 2.0);
        EXPECT_GE(p.availability_prob, 0.7);
        EXPECT_LE(p.availability_prob, 1.0);
    }
}

TEST(Synthetic, LowQualityClientsAreSmallAndNoisy) {
    data::SyntheticSpec spec;
    spec.n_clients = 20;
    spec.samples_per_client = 100;
    spec.dim = 2;
    spec.seed = 5;
    spec.low_quality_fraction = 0.5;
    spec.low_quality_samples = 10;
    spec.low_quality_flip = 1.0;
    const auto fed = data::generate_synthetic_federation(spec);
    int small = 0;
    for (const auto& s : fed.shards) small += s.rows() == 10;
    EXPECT_EQ(small, 10);
}

TEST(Synthetic, RejectsBadArguments) {
    EXPECT_THROW(data::generate_synthetic_federation(0, 10, 2, 1.0, 0), InvalidArgument);
    EXPECT_THROW(data::generate_synthetic_federation(2, 10, 0, 1.0, 0), InvalidArgument);
    EXPECT_THROW(data::generate_synthetic_federation(2, 10, 2, 0.0, 0), InvalidArgument);
}

// ---------------------------------------------------------------------------
// CSV loading

TEST(Csv, MapsStringLabelsInOrder) {
    TempDir dir("csv");
    write_text(dir / "d.csv", "f1,f2,y\n1.0,2.0,a\n3.0,4.0,b\n5.0,6.0,a\n");
    const auto d = data::load_csv_dataset((dir / "d.csv").string(), "y", {"f1", "f2"});
    EXPECT_EQ(d.rows(), 3u);
    EXPECT_EQ(d.dim, 2u);
    EXPECT_EQ(d.labels, (std::vector<int>{0, 1, 0}));
    EXPECT_EQ(d.features, (std::vector<double>{1, 2, 3, 4, 5, 6}));
}

TEST(Csv, MissingColumnNamesIt) {
    TempDir dir("csv");
    write_text(dir / "d.csv", "f1,f2,label\n1,2,0\n");
    try {
        data::load_csv_dataset((dir / "d.csv").string(), "y", {"f1", "f2"});
        FAIL() << "expected a schema error";
    } catch (const SchemaError& e) {
        EXPECT_NE(std::string(e.what()).find("\"y\""), std::string::npos);
    }
}

TEST(Csv, NonFiniteCellReportsRow) {
    TempDir dir("csv");
    write_text(dir / "d.csv", "f1,f2,y\n1,2,0\n3,NaN,1\n");
    try {
        data::load_csv_dataset((dir / "d.csv").string(), "y", {"f1", "f2"});
        FAIL() << "expected a parse error";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.row(), 1u);
    }
}

TEST(Csv, MoreThanTwoLabelsRejected) {
    TempDir dir("csv");
    write_text(dir / "d.csv", "f1,y\n1,a\n2,b\n3,c\n");
    EXPECT_THROW(data::load_csv_dataset((dir / "d.csv").string(), "y", {"f1"}), UnsupportedLabel);
}

TEST(Csv, MissingFileIsIoError) {
    EXPECT_THROW(data::load_csv_dataset("/nonexistent/fedsel.csv", "y", {"f1"}), IoError);
}

// ---------------------------------------------------------------------------
// Partitioning

TEST(Partition, ConservesRows) {
    const auto src = balanced_source(301, 1);
    const auto fed = data::partition_noniid(src, 3, 0.5, 4);
    EXPECT_EQ(fed.total_rows(), 301u);
    std::set<std::size_t> seen;
    for (const auto& s : fed.shards)
        for (auto o : s.origin) EXPECT_TRUE(seen.insert(o).second);
    EXPECT_EQ(seen.size(), 301u);
}

TEST(Partition, LargeAlphaBalancesShardSizes) {
    const auto src = balanced_source(2000, 2);
    const auto fed = data::partition_noniid(src, 5, 1e6, 9);
    for (const auto& s : fed.shards) {
        EXPECT_GE(static_cast<double>(s.rows()), 0.9 * 400.0);
        EXPECT_LE(static_cast<double>(s.rows()), 1.1 * 400.0);
    }
}

TEST(Partition, DeterministicAssignment) {
    const auto src = balanced_source(500, 3);
    const auto a = data::partition_noniid(src, 7, 0.3, 12);
    const auto b = data::partition_noniid(src, 7, 0.3, 12);
    for (std::size_t i = 0; i < a.clients(); ++i) EXPECT_EQ(a.shards[i].origin, b.shards[i].origin);
}

TEST(Partition, EveryShardNonEmpty) {
    const auto src = balanced_source(40, 4);
    const auto fed = data::partition_noniid(src, 10, 0.05, 1);
    for (const auto& s : fed.shards) EXPECT_FALSE(s.empty());
}

TEST(SplitHoldout, DisjointAndComplete) {
    const auto src = balanced_source(100, 5);
    const auto [train, hold] = data::split_holdout(src, 0.2, 3);
    EXPECT_EQ(train.rows() + hold.rows(), 100u);
    EXPECT_EQ(hold.rows(), 20u);
    std::set<std::size_t> seen(train.origin.begin(), train.origin.end());
    for (auto o : hold.origin) EXPECT_FALSE(seen.contains(o));
}
