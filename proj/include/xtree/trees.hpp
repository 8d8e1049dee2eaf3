#pragma once

// Tree-structured classifiers with explicit node arrays: CART (Gini),
// random forest, and Newton-boosted softmax trees.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xtree/dataio.hpp"
#include "xtree/parallel.hpp"
#include "xtree/rng.hpp"

namespace xtree::trees {

inline constexpr int kLeaf = -1;

struct TreeNode {
    int feature = kLeaf;  // kLeaf for leaves
    double threshold = 0.0;  // go left if x[feature] <= threshold
    int left = -1;
    int right = -1;
    int depth = 0;
    double n_samples = 0;
    std::vector<double> class_counts;  // empty for regression trees
    std::vector<double> value;         // class probabilities, or one regression score

    bool is_leaf() const { return feature == kLeaf; }
};

struct TreeParams {
    std::optional<int> max_depth = 10;  // nullopt: unlimited
    std::size_t min_samples_split = 4;
    std::string criterion = "gini";
    std::uint64_t seed = 0;
    bool laplace = false;  // (count + 1) / (n + C) leaf probabilities

    void validate() const {
        if (max_depth && *max_depth < 1) throw ConfigError("max_depth must be >= 1");
        if (min_samples_split < 2) throw ConfigError("min_samples_split must be >= 2");
        if (criterion != "gini") throw ConfigError("unsupported split criterion '" + criterion + "'");
    }
};

struct ForestParams {
    std::size_t n_trees = 100;
    TreeParams tree{};
    std::optional<std::size_t> features_per_split;  // nullopt: ceil(sqrt(d))
    bool bootstrap = true;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_trees < 1) throw ConfigError("n_trees must be >= 1");
        if (features_per_split && *features_per_split < 1) throw ConfigError("features_per_split must be >= 1");
        tree.validate();
    }
};

struct GbdtParams {
    std::size_t n_iterations = 500;
    double learning_rate = 0.1;
    int depth = 6;
    double l2_leaf_reg = 10.0;
    std::size_t min_samples_split = 2;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_iterations < 1) throw ConfigError("n_iterations must be >= 1");
        if (!(learning_rate > 0.0 && learning_rate <= 1.0)) throw ConfigError("learning_rate must lie in (0, 1]");
        if (depth < 1) throw ConfigError("depth must be >= 1");
        if (l2_leaf_reg < 0.0) throw ConfigError("l2_leaf_reg must be >= 0");
        if (min_samples_split < 2) throw ConfigError("min_samples_split must be >= 2");
    }
};

struct TreeModel {
    std::vector<TreeNode> nodes;
    std::size_t n_features = 0;
    std::size_t n_classes = 0;
    std::vector<std::string> feature_names;
    std::vector<std::string> class_names;
    TreeParams params;
    bool regression = false;

    const TreeNode& leaf(std::span<const double> x) const {
        std::size_t i = 0;
        while (!nodes[i].is_leaf()) {
            const auto& n = nodes[i];
            i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
        }
        return nodes[i];
    }

    int depth() const {
        int d = 0;
        for (const auto& n : nodes) d = std::max(d, n.depth);
        return d;
    }
};

struct ForestModel {
    std::vector<TreeModel> trees;
    ForestParams params;
    std::size_t n_features = 0;
    std::size_t n_classes = 0;
    std::vector<std::string> feature_names;
    std::vector<std::string> class_names;
};

struct GbdtModel {
    std::vector<TreeModel> trees;  // iteration-major: trees[it * n_classes + c]
    GbdtParams params;
    std::size_t n_features = 0;
    std::size_t n_classes = 0;
    std::vector<std::string> feature_names;
    std::vector<std::string> class_names;
    std::vector<double> train_loss;  // mean log-loss after each iteration
};

inline void check_columns(std::size_t expected, std::size_t got) {
    if (expected != got)
        throw DataError("model expects " + std::to_string(expected) + " features, input has " + std::to_string(got));
}

/// Index of the largest entry; lowest index on ties.
inline int argmax(std::span<const double> p) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < p.size(); ++i)
        if (p[i] > p[best]) best = i;
    return static_cast<int>(best);
}

// ---------------------------------------------------------------------------
// builder

namespace detail {

/// Per-feature orderings of all rows by (value, row id).
inline std::vector<std::vector<std::uint32_t>> presort(const FeatureMatrix& X) {
    std::vector<std::vector<std::uint32_t>> order(X.n_cols());
    for (std::size_t f = 0; f < X.n_cols(); ++f) {
        auto& o = order[f];
        o.resize(X.n_rows);
        std::iota(o.begin(), o.end(), 0u);
        std::stable_sort(o.begin(), o.end(),
                         [&](std::uint32_t a, std::uint32_t b) { return X.at(a, f) < X.at(b, f); });
    }
    return order;
}

struct BuildSpec {
    std::optional<int> max_depth;
    std::size_t min_samples_split = 2;
    std::optional<std::size_t> features_per_split;
    bool laplace = false;
    bool regression = false;
    double l2 = 0.0;
    std::uint64_t seed = 0;
};

/// Grows one tree over `slot_rows` (row ids, repeats allowed). Splits are
/// scanned over presorted slot orders that are stably partitioned into the
/// children, so each level costs O(slots * features).
class Builder {
public:
    Builder(const FeatureMatrix& X, std::span<const std::vector<std::uint32_t>> row_order,
            std::vector<std::uint32_t> slot_rows, const BuildSpec& spec, std::span<const double> grad = {},
            std::span<const double> hess = {})
        : X_(X), slot_rows_(std::move(slot_rows)), spec_(spec), grad_(grad), hess_(hess),
          n_classes_(X.n_classes()), d_(X.n_cols()), rng_(spec.seed) {
        const std::size_t n = slot_rows_.size();
        // slots grouped by row, so each feature's slot order follows its row order
        std::vector<std::uint32_t> first(X.n_rows + 1, 0);
        for (auto r : slot_rows_) ++first[r + 1];
        for (std::size_t r = 0; r < X.n_rows; ++r) first[r + 1] += first[r];
        std::vector<std::uint32_t> by_row(n);
        {
            auto cursor = first;
            for (std::uint32_t s = 0; s < n; ++s) by_row[cursor[slot_rows_[s]]++] = s;
        }
        order_.resize(d_);
        for (std::size_t f = 0; f < d_; ++f) {
            auto& o = order_[f];
            o.reserve(n);
            for (auto r : row_order[f])
                for (auto k = first[r]; k < first[r + 1]; ++k) o.push_back(by_row[k]);
        }
        goes_left_.assign(n, 0);
        buffer_.resize(n);
    }

    std::vector<TreeNode> build() {
        std::vector<TreeNode> nodes;
        struct Pending {
            std::size_t node, begin, end;
        };
        std::vector<Pending> stack;
        nodes.push_back(make_node(0, slot_rows_.size(), 0));
        stack.push_back({0, 0, slot_rows_.size()});
        while (!stack.empty()) {
            const Pending p = stack.back();
            stack.pop_back();
            const int depth = nodes[p.node].depth;
            const std::size_t count = p.end - p.begin;
            if ((spec_.max_depth && depth >= *spec_.max_depth) || count < spec_.min_samples_split ||
                is_pure(p.begin, p.end))
                continue;
            const auto split = best_split(p.begin, p.end);
            if (!split) continue;
            const std::size_t mid = partition(p.begin, p.end, split->feature, split->threshold);
            auto& node = nodes[p.node];
            node.feature = static_cast<int>(split->feature);
            node.threshold = split->threshold;
            node.left = static_cast<int>(nodes.size());
            node.right = node.left + 1;
            nodes.push_back(make_node(p.begin, mid, depth + 1));
            nodes.push_back(make_node(mid, p.end, depth + 1));
            const auto left = static_cast<std::size_t>(nodes[p.node].left);
            stack.push_back({left + 1, mid, p.end});
            stack.push_back({left, p.begin, mid});
        }
        return nodes;
    }

private:
    struct Split {
        std::size_t feature;
        double threshold;
    };

    double x(std::uint32_t slot, std::size_t f) const { return X_.at(slot_rows_[slot], f); }
    int y(std::uint32_t slot) const { return X_.labels[slot_rows_[slot]]; }

    TreeNode make_node(std::size_t begin, std::size_t end, int depth) const {
        TreeNode node;
        node.depth = depth;
        node.n_samples = double(end - begin);
        const auto& o = order_[0];
        if (spec_.regression) {
            double g = 0.0, h = 0.0;
            for (std::size_t i = begin; i < end; ++i) {
                const auto r = slot_rows_[o[i]];
                g += grad_[r];
                h += hess_[r];
            }
            const double denom = h + spec_.l2;
            node.value = {denom > 0.0 ? -g / denom : 0.0};
            return node;
        }
        node.class_counts.assign(n_classes_, 0.0);
        for (std::size_t i = begin; i < end; ++i) node.class_counts[static_cast<std::size_t>(y(o[i]))] += 1.0;
        node.value.resize(n_classes_);
        const double n = node.n_samples;
        for (std::size_t c = 0; c < n_classes_; ++c)
            node.value[c] = spec_.laplace ? (node.class_counts[c] + 1.0) / (n + double(n_classes_))
                                          : node.class_counts[c] / n;
        return node;
    }

    bool is_pure(std::size_t begin, std::size_t end) const {
        const auto& o = order_[0];
        if (spec_.regression) {
            // constant Newton target -g/h: no split can improve the fit
            const auto r0 = slot_rows_[o[begin]];
            for (std::size_t i = begin + 1; i < end; ++i) {
                const auto r = slot_rows_[o[i]];
                if (grad_[r] * hess_[r0] != grad_[r0] * hess_[r]) return false;
            }
            return true;
        }
        const int first = y(o[begin]);
        for (std::size_t i = begin + 1; i < end; ++i)
            if (y(o[i]) != first) return false;
        return true;
    }

    std::vector<std::size_t> candidate_features() {
        std::vector<std::size_t> feats(d_);
        std::iota(feats.begin(), feats.end(), std::size_t{0});
        if (spec_.features_per_split && *spec_.features_per_split < d_) {
            const std::size_t m = *spec_.features_per_split;
            for (std::size_t i = 0; i < m; ++i) {
                const auto j = i + static_cast<std::size_t>(rng_.below(d_ - i));
                std::swap(feats[i], feats[j]);
            }
            feats.resize(m);
            std::sort(feats.begin(), feats.end());
        }
        return feats;
    }

    static double midpoint(double lo, double hi) {
        double t = lo + (hi - lo) / 2.0;
        if (!(t < hi)) t = lo;
        return t;
    }

    std::optional<Split> best_split(std::size_t begin, std::size_t end) {
        const auto feats = candidate_features();
        const double n = double(end - begin);
        std::optional<Split> best;
        double best_score = std::numeric_limits<double>::infinity();
        auto consider = [&](double score, std::size_t f, double thr) {
            const double tol = 1e-12 * std::max(1.0, std::abs(best_score));
            if (!best || score < best_score - tol) {
                best_score = score;
                best = Split{f, thr};
            }
        };

        if (spec_.regression) {
            double g_all = 0.0, h_all = 0.0;
            for (std::size_t i = begin; i < end; ++i) {
                const auto r = slot_rows_[order_[0][i]];
                g_all += grad_[r];
                h_all += hess_[r];
            }
            const double parent = -gain(g_all, h_all);
            for (auto f : feats) {
                const auto& o = order_[f];
                double gl = 0.0, hl = 0.0;
                for (std::size_t i = begin; i + 1 < end; ++i) {
                    const auto r = slot_rows_[o[i]];
                    gl += grad_[r];
                    hl += hess_[r];
                    const double v = x(o[i], f), vn = x(o[i + 1], f);
                    if (!(v < vn)) continue;
                    const double score = -(gain(gl, hl) + gain(g_all - gl, h_all - hl));
                    if (score < parent - 1e-12 * std::max(1.0, std::abs(parent))) consider(score, f, midpoint(v, vn));
                }
            }
            return best;
        }

        std::vector<double> total(n_classes_, 0.0);
        for (std::size_t i = begin; i < end; ++i) total[static_cast<std::size_t>(y(order_[0][i]))] += 1.0;
        double sq_total = 0.0;
        for (double c : total) sq_total += c * c;
        std::vector<double> left(n_classes_);
        for (auto f : feats) {
            const auto& o = order_[f];
            std::fill(left.begin(), left.end(), 0.0);
            double sq_left = 0.0, sq_right = sq_total;
            for (std::size_t i = begin; i + 1 < end; ++i) {
                const auto k = static_cast<std::size_t>(y(o[i]));
                sq_left += 2.0 * left[k] + 1.0;
                sq_right -= 2.0 * (total[k] - left[k]) - 1.0;
                left[k] += 1.0;
                const double v = x(o[i], f), vn = x(o[i + 1], f);
                if (!(v < vn)) continue;
                const double nl = double(i - begin + 1);
                const double nr = n - nl;
                // n * weighted Gini of the children
                const double score = (nl - sq_left / nl) + (nr - sq_right / nr);
                consider(score, f, midpoint(v, vn));
            }
        }
        return best;
    }

    static double gain(double g, double h) { return h > 0.0 ? g * g / h : 0.0; }

    std::size_t partition(std::size_t begin, std::size_t end, std::size_t feature, double threshold) {
        std::size_t n_left = 0;
        for (std::size_t i = begin; i < end; ++i) {
            const auto s = order_[feature][i];
            goes_left_[s] = x(s, feature) <= threshold;
            n_left += goes_left_[s];
        }
        for (std::size_t f = 0; f < d_; ++f) {
            auto& o = order_[f];
            std::size_t li = begin, ri = 0;
            for (std::size_t i = begin; i < end; ++i) {
                const auto s = o[i];
                if (goes_left_[s])
                    o[li++] = s;
                else
                    buffer_[ri++] = s;
            }
            std::copy(buffer_.begin(), buffer_.begin() + std::ptrdiff_t(ri), o.begin() + std::ptrdiff_t(li));
        }
        return begin + n_left;
    }

    const FeatureMatrix& X_;
    std::vector<std::uint32_t> slot_rows_;
    BuildSpec spec_;
    std::span<const double> grad_;
    std::span<const double> hess_;
    std::size_t n_classes_;
    std::size_t d_;
    Rng rng_;
    std::vector<std::vector<std::uint32_t>> order_;
    std::vector<char> goes_left_;
    std::vector<std::uint32_t> buffer_;
};

inline void require_rows(const FeatureMatrix& X) {
    if (X.n_rows == 0) throw DataError("cannot fit a model on an empty matrix");
    if (X.n_cols() == 0) throw DataError("cannot fit a model without features");
    for (int yv : X.labels)
        if (yv < 0 || static_cast<std::size_t>(yv) >= X.n_classes()) throw DataError("label out of range");
}

inline std::vector<std::uint32_t> all_rows(std::size_t n) {
    std::vector<std::uint32_t> rows(n);
    std::iota(rows.begin(), rows.end(), 0u);
    return rows;
}

inline TreeModel wrap(const FeatureMatrix& X, std::vector<TreeNode> nodes, const TreeParams& params, bool regression) {
    TreeModel m;
    m.nodes = std::move(nodes);
    m.n_features = X.n_cols();
    m.n_classes = X.n_classes();
    m.feature_names = X.feature_names;
    m.class_names = X.class_names;
    m.params = params;
    m.regression = regression;
    return m;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// CART

inline TreeModel fit_cart(const FeatureMatrix& X, const TreeParams& params) {
    params.validate();
    detail::require_rows(X);
    const auto order = detail::presort(X);
    detail::BuildSpec spec{params.max_depth, params.min_samples_split, std::nullopt, params.laplace, false, 0.0,
                           params.seed};
    detail::Builder builder(X, order, detail::all_rows(X.n_rows), spec);
    return detail::wrap(X, builder.build(), params, false);
}

inline std::vector<double> predict_proba(const TreeModel& m, std::span<const double> x) {
    check_columns(m.n_features, x.size());
    return m.leaf(x).value;
}

inline std::vector<std::vector<double>> predict_proba(const TreeModel& m, const FeatureMatrix& X) {
    check_columns(m.n_features, X.n_cols());
    std::vector<std::vector<double>> out(X.n_rows);
    for (std::size_t r = 0; r < X.n_rows; ++r) out[r] = m.leaf(X.row(r)).value;
    return out;
}

// ---------------------------------------------------------------------------
// random forest

inline ForestModel fit_random_forest(const FeatureMatrix& X, const ForestParams& params) {
    params.validate();
    detail::require_rows(X);
    const auto order = detail::presort(X);
    const std::size_t d = X.n_cols();
    const std::size_t per_split =
        std::min(d, params.features_per_split.value_or(static_cast<std::size_t>(std::ceil(std::sqrt(double(d))))));
    ForestModel forest;
    forest.params = params;
    forest.n_features = d;
    forest.n_classes = X.n_classes();
    forest.feature_names = X.feature_names;
    forest.class_names = X.class_names;
    forest.trees.resize(params.n_trees);
    parallel_for(params.n_trees, [&](std::size_t t) {
        const std::uint64_t tree_seed = derive_seed(params.seed, "forest/tree/" + std::to_string(t));
        Rng rng(derive_seed(tree_seed, "bootstrap"));
        std::vector<std::uint32_t> slots;
        if (params.bootstrap) {
            slots.resize(X.n_rows);
            for (auto& s : slots) s = static_cast<std::uint32_t>(rng.below(X.n_rows));
        } else {
            slots = detail::all_rows(X.n_rows);
        }
        detail::BuildSpec spec{params.tree.max_depth, params.tree.min_samples_split, per_split, params.tree.laplace,
                               false, 0.0, derive_seed(tree_seed, "features")};
        detail::Builder builder(X, order, std::move(slots), spec);
        TreeParams tp = params.tree;
        tp.seed = tree_seed;
        forest.trees[t] = detail::wrap(X, builder.build(), tp, false);
    });
    return forest;
}

inline std::vector<double> predict_proba(const ForestModel& m, std::span<const double> x) {
    check_columns(m.n_features, x.size());
    std::vector<double> p(m.n_classes, 0.0);
    for (const auto& t : m.trees) {
        const auto& v = t.leaf(x).value;
        for (std::size_t c = 0; c < p.size(); ++c) p[c] += v[c];
    }
    for (double& v : p) v /= double(m.trees.size());
    return p;
}

inline std::vector<std::vector<double>> predict_proba(const ForestModel& m, const FeatureMatrix& X) {
    check_columns(m.n_features, X.n_cols());
    std::vector<std::vector<double>> out(X.n_rows);
    for (std::size_t r = 0; r < X.n_rows; ++r) out[r] = predict_proba(m, X.row(r));
    return out;
}

// ---------------------------------------------------------------------------
// Newton-boosted softmax trees

inline void softmax_inplace(std::span<double> z) {
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& v : z) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (double& v : z) v /= sum;
}

inline std::vector<double> raw_scores(const GbdtModel& m, std::span<const double> x) {
    std::vector<double> f(m.n_classes, 0.0);
    for (std::size_t i = 0; i < m.trees.size(); ++i)
        f[i % m.n_classes] += m.params.learning_rate * m.trees[i].leaf(x).value[0];
    return f;
}

inline GbdtModel fit_gbdt(const FeatureMatrix& X, const GbdtParams& params) {
    params.validate();
    detail::require_rows(X);
    const std::size_t n = X.n_rows;
    const std::size_t C = X.n_classes();
    const auto order = detail::presort(X);
    TreeParams tp;
    tp.max_depth = params.depth;
    tp.min_samples_split = params.min_samples_split;
    tp.seed = params.seed;

    GbdtModel model;
    model.params = params;
    model.n_features = X.n_cols();
    model.n_classes = C;
    model.feature_names = X.feature_names;
    model.class_names = X.class_names;
    model.trees.reserve(params.n_iterations * C);

    std::vector<double> F(n * C, 0.0);
    std::vector<double> P(n * C, 0.0);
    auto refresh_probabilities = [&] {
        double loss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            std::span<double> p(P.data() + i * C, C);
            std::copy(F.begin() + std::ptrdiff_t(i * C), F.begin() + std::ptrdiff_t((i + 1) * C), p.begin());
            softmax_inplace(p);
            loss -= std::log(std::max(p[static_cast<std::size_t>(X.labels[i])], 1e-300));
        }
        return loss / double(n);
    };
    refresh_probabilities();

    std::vector<std::vector<double>> grad(C, std::vector<double>(n)), hess(C, std::vector<double>(n));
    std::vector<TreeModel> round(C);
    for (std::size_t it = 0; it < params.n_iterations; ++it) {
        parallel_for(C, [&](std::size_t c) {
            for (std::size_t i = 0; i < n; ++i) {
                const double p = P[i * C + c];
                grad[c][i] = p - (static_cast<std::size_t>(X.labels[i]) == c ? 1.0 : 0.0);
                hess[c][i] = p * (1.0 - p);
            }
            detail::BuildSpec spec{params.depth, params.min_samples_split, std::nullopt, false, true,
                                   params.l2_leaf_reg, 0};
            detail::Builder builder(X, order, detail::all_rows(n), spec, grad[c], hess[c]);
            round[c] = detail::wrap(X, builder.build(), tp, true);
        });
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t i = 0; i < n; ++i)
                F[i * C + c] += params.learning_rate * round[c].leaf(X.row(i)).value[0];
            model.trees.push_back(std::move(round[c]));
        }
        model.train_loss.push_back(refresh_probabilities());
    }
    return model;
}

inline std::vector<double> predict_proba(const GbdtModel& m, std::span<const double> x) {
    check_columns(m.n_features, x.size());
    auto f = raw_scores(m, x);
    softmax_inplace(f);
    return f;
}

inline std::vector<std::vector<double>> predict_proba(const GbdtModel& m, const FeatureMatrix& X) {
    check_columns(m.n_features, X.n_cols());
    std::vector<std::vector<double>> out(X.n_rows);
    for (std::size_t r = 0; r < X.n_rows; ++r) out[r] = predict_proba(m, X.row(r));
    return out;
}

template <typename Model>
std::vector<int> predict(const Model& m, const FeatureMatrix& X) {
    const auto proba = predict_proba(m, X);
    std::vector<int> out(proba.size());
    for (std::size_t r = 0; r < proba.size(); ++r) out[r] = argmax(proba[r]);
    return out;
}

// ---------------------------------------------------------------------------
// grid search

struct GridCandidate {
    TreeParams params;
    std::vector<double> fold_accuracy;
    double mean_accuracy = 0.0;
};

struct GridSearchResult {
    TreeParams best;
    std::size_t best_index = 0;
    std::vector<GridCandidate> table;
};

/// Stratified k-fold CV accuracy per candidate; argmax with ties broken by
/// smaller max_depth, then larger min_samples_split.
inline GridSearchResult grid_search_tree(const FeatureMatrix& X, const std::vector<TreeParams>& grid,
                                         std::size_t k = 5, std::uint64_t seed = 0) {
    if (grid.empty()) throw ConfigError("grid search needs at least one candidate");
    const auto fold = stratified_folds(X.labels, X.n_classes(), k, derive_seed(seed, "grid/folds"));
    GridSearchResult out;
    out.table.resize(grid.size());
    parallel_for(grid.size(), [&](std::size_t g) {
        auto& cand = out.table[g];
        cand.params = grid[g];
        for (std::size_t f = 0; f < k; ++f) {
            std::vector<std::size_t> tr, te;
            for (std::size_t r = 0; r < X.n_rows; ++r) (fold[r] == int(f) ? te : tr).push_back(r);
            const auto model = fit_cart(take_rows(X, tr), grid[g]);
            std::size_t correct = 0;
            for (auto r : te) correct += argmax(model.leaf(X.row(r)).value) == X.labels[r];
            cand.fold_accuracy.push_back(double(correct) / double(te.size()));
        }
        cand.mean_accuracy = std::accumulate(cand.fold_accuracy.begin(), cand.fold_accuracy.end(), 0.0) / double(k);
    });
    auto depth_key = [](const TreeParams& p) { return p.max_depth.value_or(std::numeric_limits<int>::max()); };
    for (std::size_t g = 1; g < out.table.size(); ++g) {
        const auto& c = out.table[g];
        const auto& b = out.table[out.best_index];
        if (c.mean_accuracy > b.mean_accuracy ||
            (c.mean_accuracy == b.mean_accuracy &&
             (depth_key(c.params) < depth_key(b.params) ||
              (depth_key(c.params) == depth_key(b.params) &&
               c.params.min_samples_split > b.params.min_samples_split))))
            out.best_index = g;
    }
    out.best = out.table[out.best_index].params;
    return out;
}

// ---------------------------------------------------------------------------
// export

struct TreeRendering {
    std::string dot;
    std::string text;
};

namespace detail {

inline std::string format_counts(const std::vector<double>& counts) {
    std::string s = "[";
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (i) s += ", ";
        s += format_double(counts[i]);
    }
    return s + "]";
}

inline std::string dot_escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        if (c == '"' || c == '\\') out.push_back('\\');
        out.push_back(c);
    }
    return out;
}

}  // namespace detail

/// DOT graph and indented text of the nodes at depth <= max_depth. Internal
/// nodes whose children lie deeper get a "(…)" marker.
inline TreeRendering export_tree(const TreeModel& model, int max_depth = 4) {
    TreeRendering out;
    out.dot = "digraph Tree {\nnode [shape=box, fontname=\"helvetica\"];\nedge [fontname=\"helvetica\"];\n";
    auto feature_name = [&](int f) {
        const auto i = static_cast<std::size_t>(f);
        return i < model.feature_names.size() ? model.feature_names[i] : "x" + std::to_string(f);
    };
    auto label_of = [&](const TreeNode& n) {
        std::string s;
        if (!n.is_leaf()) s += feature_name(n.feature) + " <= " + format_double(n.threshold) + "\\n";
        s += "samples = " + format_double(n.n_samples);
        if (model.regression)
            s += "\\nvalue = " + format_double(n.value.at(0));
        else
            s += "\\ncounts = " + detail::format_counts(n.class_counts);
        if (n.is_leaf() && !model.regression) {
            const auto c = static_cast<std::size_t>(argmax(n.value));
            s += "\\nclass = " + (c < model.class_names.size() ? model.class_names[c] : std::to_string(c));
        }
        return s;
    };
    std::vector<std::pair<std::size_t, int>> stack{{0, 0}};
    std::size_t markers = 0;
    while (!stack.empty()) {
        const auto [i, depth] = stack.back();
        stack.pop_back();
        const auto& n = model.nodes[i];
        auto label = label_of(n);
        out.dot += std::to_string(i) + " [label=\"" + detail::dot_escape(label) + "\"];\n";
        std::string text_label = label;
        for (std::size_t p; (p = text_label.find("\\n")) != std::string::npos;) text_label.replace(p, 2, ", ");
        out.text += std::string(std::size_t(depth) * 2, ' ') + "[" + std::to_string(i) + "] " + text_label + "\n";
        if (n.is_leaf()) continue;
        for (int child : {n.left, n.right}) {
            const auto c = static_cast<std::size_t>(child);
            if (depth + 1 <= max_depth) {
                out.dot += std::to_string(i) + " -> " + std::to_string(c) +
                           (child == n.left ? " [label=\"True\"]" : " [label=\"False\"]") + ";\n";
            } else {
                const std::string id = "more" + std::to_string(markers++);
                out.dot += id + " [label=\"(…)\", shape=plaintext];\n";
                out.dot += std::to_string(i) + " -> " + id + ";\n";
            }
        }
        if (depth + 1 <= max_depth) {
            stack.push_back({static_cast<std::size_t>(n.right), depth + 1});
            stack.push_back({static_cast<std::size_t>(n.left), depth + 1});
        } else {
            out.text += std::string(std::size_t(depth + 1) * 2, ' ') + "(…)\n";
        }
    }
    out.dot += "}\n";
    return out;
}

// ---------------------------------------------------------------------------
// JSON

inline json params_json(const TreeParams& p) {
    return json{{"max_depth", p.max_depth ? json(*p.max_depth) : json(nullptr)},
                {"min_samples_split", p.min_samples_split},
                {"criterion", p.criterion},
                {"seed", p.seed},
                {"laplace", p.laplace}};
}

inline json params_json(const ForestParams& p) {
    return json{{"n_trees", p.n_trees},
                {"max_depth", p.tree.max_depth ? json(*p.tree.max_depth) : json(nullptr)},
                {"min_samples_split", p.tree.min_samples_split},
                {"features_per_split", p.features_per_split ? json(*p.features_per_split) : json(nullptr)},
                {"bootstrap", p.bootstrap},
                {"seed", p.seed}};
}

inline json params_json(const GbdtParams& p) {
    return json{{"n_iterations", p.n_iterations}, {"learning_rate", p.learning_rate},
                {"depth", p.depth},               {"l2_leaf_reg", p.l2_leaf_reg},
                {"min_samples_split", p.min_samples_split}, {"seed", p.seed}};
}

inline json nodes_json(const TreeModel& m) {
    json nodes = json::array();
    for (const auto& n : m.nodes) {
        json j{{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left},
               {"right", n.right},     {"depth", n.depth},         {"n_samples", n.n_samples}};
        if (!m.regression) j["class_counts"] = n.class_counts;
        j["value"] = n.value;
        nodes.push_back(std::move(j));
    }
    return nodes;
}

inline std::vector<TreeNode> nodes_from_json(const json& arr) {
    std::vector<TreeNode> nodes;
    for (const auto& j : arr) {
        TreeNode n;
        n.feature = j.at("feature").get<int>();
        n.threshold = j.at("threshold").get<double>();
        n.left = j.at("left").get<int>();
        n.right = j.at("right").get<int>();
        n.depth = j.at("depth").get<int>();
        n.n_samples = j.at("n_samples").get<double>();
        if (j.contains("class_counts")) n.class_counts = j.at("class_counts").get<std::vector<double>>();
        n.value = j.at("value").get<std::vector<double>>();
        nodes.push_back(std::move(n));
    }
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const auto& n = nodes[i];
        if (n.is_leaf()) continue;
        if (n.left <= int(i) || n.right <= int(i) || std::size_t(n.left) >= nodes.size() ||
            std::size_t(n.right) >= nodes.size())
            throw DataError("model file has malformed node links");
    }
    if (nodes.empty()) throw DataError("model file has an empty tree");
    return nodes;
}

inline TreeParams tree_params_from_json(const json& j) {
    TreeParams p;
    p.max_depth = j.at("max_depth").is_null() ? std::nullopt : std::optional<int>(j.at("max_depth").get<int>());
    p.min_samples_split = j.at("min_samples_split").get<std::size_t>();
    p.criterion = j.value("criterion", std::string("gini"));
    p.seed = j.value("seed", std::uint64_t{0});
    p.laplace = j.value("laplace", false);
    return p;
}

}  // namespace xtree::trees
