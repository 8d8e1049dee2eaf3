#include <gtest/gtest.h>

#include <cstring>
#include <set>

#include "helpers.hpp"
#include "xtree/dataio.hpp"

using namespace xtree;
using testing_xtree::make_matrix;

namespace {

DatasetSchema schema3() {
    return DatasetSchema{{"a", "proto", "b"}, {"proto"}, "Label", {"Data Alteration", "Spoofing", "Normal"}};
}

}  // namespace

TEST(Csv, ParsesQuotesCrlfAndBom) {
    const auto recs = parse_csv_text("\xEF\xBB\xBFx,\"y, z\"\r\n1,\"say \"\"hi\"\"\"\r\n\r\n2,3\n");
    ASSERT_EQ(recs.size(), 3u);
    EXPECT_EQ(recs[0][0], "x");
    EXPECT_EQ(recs[0][1], "y, z");
    EXPECT_EQ(recs[1][1], "say \"hi\"");
    EXPECT_EQ(recs[2][1], "3");
}

TEST(LoadCsv, EncodesCategoricalsByFirstAppearance) {
    const auto m = parse_csv("a,proto,b,Label\n1,B,2,Normal\n3,A,4,Spoofing\n5,B,6,Normal\n", schema3());
    ASSERT_EQ(m.n_rows, 3u);
    EXPECT_EQ(m.at(0, 1), 0.0);
    EXPECT_EQ(m.at(1, 1), 1.0);
    EXPECT_EQ(m.at(2, 1), 0.0);
    EXPECT_EQ(m.encoder_map.at("proto"), (std::vector<std::string>{"B", "A"}));
    // labels follow class_names order, not file order
    EXPECT_EQ(m.labels, (std::vector<int>{2, 1, 2}));
}

TEST(LoadCsv, SingleClassFile) {
    const auto m = parse_csv("a,proto,b,Label\n1,x,2,Normal\n3,y,4,Normal\n", schema3());
    for (int y : m.labels) EXPECT_EQ(y, 2);
}

TEST(LoadCsv, ColumnOrderInFileDoesNotMatter) {
    const auto m = parse_csv("Label,b,proto,a\nNormal,2,x,1\n", schema3());
    EXPECT_EQ(m.at(0, 0), 1.0);
    EXPECT_EQ(m.at(0, 2), 2.0);
}

TEST(LoadCsv, Errors) {
    EXPECT_THROW(parse_csv("", schema3()), DataError);
    EXPECT_THROW(parse_csv("a,proto,b,Label\n", schema3()), DataError);
    try {
        parse_csv("a,proto,Label\n1,x,Normal\n", schema3());
        FAIL();
    } catch (const SchemaError& e) {
        EXPECT_NE(std::string(e.what()).find("'b'"), std::string::npos);
    }
    try {
        parse_csv("a,proto,b,Label\n1,x,2,Normal\n1,x,oops,Normal\n", schema3());
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.row(), 2u);
        EXPECT_EQ(e.column(), 3u);
    }
    EXPECT_THROW(parse_csv("a,proto,b,Label\n1,x,,Normal\n", schema3()), ParseError);
    EXPECT_THROW(parse_csv("a,proto,b,Label\n1,x,inf,Normal\n", schema3()), ParseError);
    EXPECT_THROW(parse_csv("a,proto,b,Label\n1,x,2,Unknown\n", schema3()), ParseError);
}

TEST(LoadCsv, AllowMissingFillsColumnMean) {
    LoadOptions o;
    o.allow_missing = true;
    const auto m = parse_csv("a,proto,b,Label\n1,x,,Normal\n3,x,4,Normal\n5,x,8,Normal\n", schema3(), o);
    EXPECT_EQ(m.at(0, 2), 6.0);
}

TEST(Schema, Invariants) {
    DatasetSchema s = schema3();
    s.label_column = "a";
    EXPECT_THROW(s.validate(), SchemaError);
    s = schema3();
    s.categorical_columns = {"nope"};
    EXPECT_THROW(s.validate(), SchemaError);
    s = schema3();
    s.class_names = {"x", "x"};
    EXPECT_THROW(s.validate(), SchemaError);
    s = schema3();
    s.class_names.clear();
    EXPECT_THROW(s.validate(), SchemaError);
}

TEST(Dedup, Basics) {
    const auto m = make_matrix({{1, 2}, {1, 2}, {1, 2}, {3, 4}}, {0, 0, 1, 0});
    const auto d = deduplicate(m);
    EXPECT_EQ(d.removed, 1u);
    ASSERT_EQ(d.matrix.n_rows, 3u);
    // survivors keep their order; same features, other label, is kept
    EXPECT_EQ(d.matrix.labels, (std::vector<int>{0, 1, 0}));
    EXPECT_EQ(d.matrix.at(2, 0), 3.0);
    const auto none = deduplicate(make_matrix({{1}, {2}}, {0, 1}));
    EXPECT_EQ(none.removed, 0u);
}

TEST(Dedup, Idempotent) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        std::vector<std::vector<double>> rows;
        std::vector<int> labels;
        for (int i = 0; i < 60; ++i) {
            rows.push_back({double(rng.below(3)), double(rng.below(3))});
            labels.push_back(int(rng.below(2)));
        }
        const auto once = deduplicate(make_matrix(rows, labels)).matrix;
        const auto twice = deduplicate(once);
        EXPECT_EQ(twice.removed, 0u);
        EXPECT_EQ(twice.matrix.values, once.values);
    }
}

TEST(Split, TableTwoCountsFollowRounding) {
    // Class counts of the full dataset: Normal 14,272, Spoofing 1,124, Alteration 922.
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    for (auto [cls, n] : std::vector<std::pair<int, int>>{{2, 14272}, {1, 1124}, {0, 922}})
        for (int i = 0; i < n; ++i) {
            rows.push_back({double(rows.size())});
            labels.push_back(cls);
        }
    const auto sp = stratified_split(make_matrix(rows, labels), 0.8, 42);
    // round(0.8 * count) per class; the table's own train column is not
    // reachable by any rounding of 0.8 * count.
    EXPECT_EQ(sp.train.class_counts(), (std::vector<std::size_t>{738, 899, 11418}));
    EXPECT_EQ(sp.test.class_counts(), (std::vector<std::size_t>{184, 225, 2854}));
}

TEST(Split, HalfOfTen) {
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 10; ++i) rows.push_back({double(i)});
    const auto sp = stratified_split(make_matrix(rows, std::vector<int>(10, 0)), 0.5, 1);
    EXPECT_EQ(sp.train.n_rows, 5u);
    EXPECT_EQ(sp.test.n_rows, 5u);
}

TEST(Split, ErrorsNameTheClass) {
    const auto m = make_matrix({{1}, {2}, {3}}, {0, 0, 1});
    try {
        stratified_split(m, 0.8, 1);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("c1"), std::string::npos);
    }
    EXPECT_THROW(stratified_split(m, 1.0, 1), ConfigError);
    EXPECT_THROW(stratified_split(m, 0.0, 1), ConfigError);
}

// 200 random (counts, ratio, seed) cases.
TEST(SplitProperty, PartitionAndProportions) {
    Rng meta(2024);
    for (int t = 0; t < 200; ++t) {
        const std::size_t C = 2 + meta.below(3);
        std::vector<std::vector<double>> rows;
        std::vector<int> labels;
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t n = 2 + meta.below(60);
            for (std::size_t i = 0; i < n; ++i) {
                rows.push_back({double(rows.size())});
                labels.push_back(int(c));
            }
        }
        const double ratio = 0.05 + 0.9 * meta.uniform();
        const std::uint64_t seed = meta.next();
        const auto m = make_matrix(rows, labels, C);
        const auto a = stratified_split(m, ratio, seed);
        const auto b = stratified_split(m, ratio, seed);
        ASSERT_EQ(a.train_rows, b.train_rows);
        std::set<std::size_t> all(a.train_rows.begin(), a.train_rows.end());
        for (auto r : a.test_rows) ASSERT_TRUE(all.insert(r).second) << "overlap";
        ASSERT_EQ(all.size(), m.n_rows);
        const auto counts = m.class_counts(), te = a.test.class_counts();
        for (std::size_t c = 0; c < C; ++c)
            ASSERT_LE(std::abs(double(te[c]) - (1 - ratio) * double(counts[c])), 1.0);
    }
}

TEST(Folds, PartitionAndBalance) {
    Rng meta(77);
    for (int t = 0; t < 50; ++t) {
        std::vector<int> labels;
        const std::size_t k = 2 + meta.below(5);
        for (int c = 0; c < 3; ++c) {
            const std::size_t n = k + meta.below(40);
            for (std::size_t i = 0; i < n; ++i) labels.push_back(c);
        }
        const auto fold = stratified_folds(labels, 3, k, meta.next());
        std::vector<std::vector<std::size_t>> per(k, std::vector<std::size_t>(3, 0));
        for (std::size_t i = 0; i < labels.size(); ++i) {
            ASSERT_GE(fold[i], 0);
            ASSERT_LT(fold[i], int(k));
            ++per[std::size_t(fold[i])][std::size_t(labels[i])];
        }
        for (int c = 0; c < 3; ++c) {
            const double total = double(std::count(labels.begin(), labels.end(), c));
            for (std::size_t f = 0; f < k; ++f) ASSERT_LE(std::abs(double(per[f][c]) - total / double(k)), 1.0);
        }
    }
    EXPECT_THROW(stratified_folds(std::vector<int>{0, 0, 1}, 2, 2, 1), DataError);
}

TEST(Snapshot, RoundTripIsBitExact) {
    Rng rng(9);
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    for (int i = 0; i < 50; ++i) {
        rows.push_back({rng.normal() * 1e-300, rng.normal() * 1e300, rng.uniform(), -0.0, 1.0 / 3.0});
        labels.push_back(int(rng.below(3)));
    }
    auto m = make_matrix(rows, labels, 3);
    m.categorical[3] = true;
    m.encoder_map["x3"] = {"tcp", "udp, \"quoted\""};
    const auto dir = testing_xtree::tmp_dir("snapshot");
    save_snapshot(m, dir / "m");
    const auto back = load_snapshot(dir / "m");
    ASSERT_EQ(back.n_rows, m.n_rows);
    ASSERT_EQ(std::memcmp(back.values.data(), m.values.data(), m.values.size() * sizeof(double)), 0);
    EXPECT_EQ(back.labels, m.labels);
    EXPECT_EQ(back.categorical, m.categorical);
    EXPECT_EQ(back.encoder_map, m.encoder_map);
    EXPECT_EQ(back.class_names, m.class_names);
    EXPECT_THROW(load_snapshot(dir / "missing"), DataError);
}

TEST(Csv, ToCsvRoundTrip) {
    const auto m = parse_csv("a,proto,b,Label\n1.5,B,2,Normal\n3,\"A,1\",4,Spoofing\n", schema3());
    const auto again = parse_csv(to_csv_text(m, "Label"), schema3());
    EXPECT_EQ(again.values, m.values);
    EXPECT_EQ(again.labels, m.labels);
    EXPECT_EQ(again.encoder_map, m.encoder_map);
}
