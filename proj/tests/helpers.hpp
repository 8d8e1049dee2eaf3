#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "xtree/dataio.hpp"
#include "xtree/rng.hpp"

namespace testing_xtree {

using xtree::FeatureMatrix;

/// Matrix from row vectors; every column numeric.
inline FeatureMatrix make_matrix(const std::vector<std::vector<double>>& rows, const std::vector<int>& labels,
                                 std::size_t n_classes = 0) {
    FeatureMatrix m;
    const std::size_t d = rows.empty() ? 0 : rows.front().size();
    for (std::size_t j = 0; j < d; ++j) m.feature_names.push_back("x" + std::to_string(j));
    m.categorical.assign(d, false);
    int max_label = 0;
    for (int y : labels) max_label = std::max(max_label, y);
    if (n_classes == 0) n_classes = std::size_t(max_label) + 1;
    for (std::size_t c = 0; c < n_classes; ++c) m.class_names.push_back("c" + std::to_string(c));
    for (std::size_t r = 0; r < rows.size(); ++r) m.push_row(rows[r], labels[r]);
    return m;
}

/// n rows of d standard normal features; labels from `rule` or uniform over C.
template <typename Rule>
FeatureMatrix random_matrix(std::size_t n, std::size_t d, std::size_t C, std::uint64_t seed, Rule rule) {
    xtree::Rng rng(seed);
    std::vector<std::vector<double>> rows(n, std::vector<double>(d));
    std::vector<int> labels(n);
    for (std::size_t r = 0; r < n; ++r) {
        for (auto& v : rows[r]) v = rng.normal();
        labels[r] = rule(rows[r], rng);
    }
    return make_matrix(rows, labels, C);
}

inline FeatureMatrix random_matrix(std::size_t n, std::size_t d, std::size_t C, std::uint64_t seed) {
    return random_matrix(n, d, C, seed,
                         [C](const std::vector<double>&, xtree::Rng& rng) { return int(rng.below(C)); });
}

inline std::filesystem::path tmp_dir(const std::string& name) {
    auto p = std::filesystem::path(XTREE_TEST_TMP) / name;
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace testing_xtree
