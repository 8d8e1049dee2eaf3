#pragma once

// Feature attribution for fitted models.
//
// tree_shap computes exact interventional Shapley values: the value of a
// coalition S is the mean, over background rows b, of the model output on
// the hybrid row taking features in S from x and the rest from b. For a
// single tree and a single background row the game is a sum over leaves of
// indicator games 1[A ⊆ S and B ∩ S = ∅], where A holds the features whose
// splits only x satisfies on the leaf's path and B those only b satisfies.
// Such a game has closed-form Shapley values, so walking the (at most
// 2^depth) paths followed by x or b gives the exact result.
//
// morris_screening implements elementary-effects screening on winding
// trajectories over a p-level grid of the unit cube.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "xtree/dataio.hpp"
#include "xtree/models.hpp"
#include "xtree/preprocess.hpp"
#include "xtree/rng.hpp"
#include "xtree/trees.hpp"

namespace xtree::explain {

struct ShapExplanation {
    std::vector<double> base_value;            // per class
    std::vector<std::vector<double>> phi;      // [class][feature]
    std::vector<double> model_output;          // per class

    /// max over classes of |base + sum(phi) - output|
    double local_accuracy_error() const {
        double worst = 0.0;
        for (std::size_t c = 0; c < base_value.size(); ++c) {
            const double total = base_value[c] + std::accumulate(phi[c].begin(), phi[c].end(), 0.0);
            worst = std::max(worst, std::abs(total - model_output[c]));
        }
        return worst;
    }
};

namespace detail {

/// (a-1)! c! / (a+c)!  -- weight of a feature that must join the coalition.
inline double inclusion_weight(int a, int c) {
    double w = 1.0 / a;
    for (int i = 1; i <= c; ++i) w *= double(i) / double(a + i);
    return w;
}

class TreeShapWalker {
public:
    TreeShapWalker(const trees::TreeModel& tree, std::span<const double> x, std::vector<std::vector<double>>& phi)
        : tree_(tree), x_(x), phi_(phi), state_(tree.n_features, 0) {}

    void run(std::span<const double> b) {
        b_ = b;
        visit(0);
    }

private:
    void visit(std::size_t i) {
        const auto& node = tree_.nodes[i];
        if (node.is_leaf()) {
            credit(node.value);
            return;
        }
        const auto f = static_cast<std::size_t>(node.feature);
        const bool x_left = x_[f] <= node.threshold;
        const bool b_left = b_[f] <= node.threshold;
        const auto child = [&](bool left) { return static_cast<std::size_t>(left ? node.left : node.right); };
        if (x_left == b_left) {
            visit(child(x_left));
            return;
        }
        const signed char prev = state_[f];
        if (prev != -1) {
            state_[f] = 1;
            if (prev == 0) {
                path_.push_back(f);
                ++n_x_;
            }
            visit(child(x_left));
            if (prev == 0) {
                path_.pop_back();
                --n_x_;
            }
            state_[f] = prev;
        }
        if (prev != 1) {
            state_[f] = -1;
            if (prev == 0) {
                path_.push_back(f);
                ++n_b_;
            }
            visit(child(b_left));
            if (prev == 0) {
                path_.pop_back();
                --n_b_;
            }
            state_[f] = prev;
        }
    }

    void credit(const std::vector<double>& value) {
        if (n_x_ == 0 && n_b_ == 0) return;
        const double wx = n_x_ > 0 ? inclusion_weight(n_x_, n_b_) : 0.0;
        const double wb = n_b_ > 0 ? inclusion_weight(n_b_, n_x_) : 0.0;
        for (auto f : path_) {
            const double w = state_[f] == 1 ? wx : -wb;
            for (std::size_t c = 0; c < value.size(); ++c) phi_[c][f] += w * value[c];
        }
    }

    const trees::TreeModel& tree_;
    std::span<const double> x_;
    std::span<const double> b_;
    std::vector<std::vector<double>>& phi_;
    std::vector<signed char> state_;  // 0 free, 1 x-side, -1 background-side
    std::vector<std::size_t> path_;
    int n_x_ = 0;
    int n_b_ = 0;
};

inline void require_background(const FeatureMatrix& background, std::size_t n_features) {
    if (background.n_rows == 0) throw ConfigError("SHAP background set is empty");
    trees::check_columns(n_features, background.n_cols());
}

/// Sums attributions of one tree over all background rows (not yet averaged).
inline void accumulate_tree(const trees::TreeModel& tree, std::span<const double> x, const FeatureMatrix& background,
                            ShapExplanation& out) {
    TreeShapWalker walker(tree, x, out.phi);
    for (std::size_t r = 0; r < background.n_rows; ++r) {
        const auto b = background.row(r);
        walker.run(b);
        const auto& v = tree.leaf(b).value;
        for (std::size_t c = 0; c < v.size(); ++c) out.base_value[c] += v[c];
    }
    const auto& fx = tree.leaf(x).value;
    for (std::size_t c = 0; c < fx.size(); ++c) out.model_output[c] += fx[c];
}

inline ShapExplanation blank(std::size_t n_classes, std::size_t n_features) {
    return ShapExplanation{std::vector<double>(n_classes, 0.0),
                           std::vector<std::vector<double>>(n_classes, std::vector<double>(n_features, 0.0)),
                           std::vector<double>(n_classes, 0.0)};
}

inline void scale(ShapExplanation& e, double tree_weight, double bg_weight) {
    for (auto& row : e.phi)
        for (double& v : row) v *= tree_weight * bg_weight;
    for (double& v : e.base_value) v *= tree_weight * bg_weight;
    for (double& v : e.model_output) v *= tree_weight;
}

}  // namespace detail

inline ShapExplanation tree_shap(const trees::TreeModel& model, std::span<const double> x,
                                 const FeatureMatrix& background) {
    if (model.regression) throw ConfigError("tree_shap explains classification trees only");
    trees::check_columns(model.n_features, x.size());
    detail::require_background(background, model.n_features);
    auto out = detail::blank(model.n_classes, model.n_features);
    detail::accumulate_tree(model, x, background, out);
    detail::scale(out, 1.0, 1.0 / double(background.n_rows));
    return out;
}

/// Forest attributions are the mean of the per-tree attributions.
inline ShapExplanation tree_shap(const trees::ForestModel& model, std::span<const double> x,
                                 const FeatureMatrix& background) {
    trees::check_columns(model.n_features, x.size());
    detail::require_background(background, model.n_features);
    auto out = detail::blank(model.n_classes, model.n_features);
    for (const auto& tree : model.trees) detail::accumulate_tree(tree, x, background, out);
    detail::scale(out, 1.0 / double(model.trees.size()), 1.0 / double(background.n_rows));
    return out;
}

inline ShapExplanation tree_shap(const AnyModel& model, std::span<const double> x, const FeatureMatrix& background) {
    if (const auto* t = std::get_if<trees::TreeModel>(&model)) return tree_shap(*t, x, background);
    if (const auto* f = std::get_if<trees::ForestModel>(&model)) return tree_shap(*f, x, background);
    throw ConfigError("tree_shap does not support model kind '" + model_kind(model) + "'");
}

// ---------------------------------------------------------------------------
// brute-force oracle

inline constexpr std::size_t kBruteForceMaxFeatures = 12;

using VectorModelFn = std::function<std::vector<double>(std::span<const double>)>;

/// Shapley values by direct enumeration of all 2^d coalitions.
inline ShapExplanation brute_force_shapley(const VectorModelFn& f, std::span<const double> x,
                                           const FeatureMatrix& background) {
    const std::size_t d = x.size();
    if (d > kBruteForceMaxFeatures)
        throw ConfigError("brute_force_shapley supports at most " + std::to_string(kBruteForceMaxFeatures) +
                          " features");
    if (background.n_rows == 0) throw ConfigError("SHAP background set is empty");
    trees::check_columns(d, background.n_cols());
    const std::size_t n_sets = std::size_t{1} << d;
    std::vector<std::vector<double>> value(n_sets);
    std::vector<double> hybrid(d);
    for (std::size_t mask = 0; mask < n_sets; ++mask) {
        std::vector<double> acc;
        for (std::size_t r = 0; r < background.n_rows; ++r) {
            const auto b = background.row(r);
            for (std::size_t j = 0; j < d; ++j) hybrid[j] = (mask >> j) & 1 ? x[j] : b[j];
            const auto out = f(hybrid);
            if (acc.empty()) acc.assign(out.size(), 0.0);
            for (std::size_t c = 0; c < out.size(); ++c) acc[c] += out[c];
        }
        for (double& v : acc) v /= double(background.n_rows);
        value[mask] = std::move(acc);
    }
    const std::size_t C = value[0].size();
    // weight(s) = s! (d - s - 1)! / d!
    std::vector<double> weight(d, 0.0);
    for (std::size_t s = 0; s < d; ++s) {
        double w = 1.0 / double(d);
        for (std::size_t i = 1; i <= s; ++i) w *= double(i) / double(d - i);
        weight[s] = w;
    }
    auto out = detail::blank(C, d);
    out.base_value = value[0];
    out.model_output = value[n_sets - 1];
    for (std::size_t j = 0; j < d; ++j) {
        const std::size_t bit = std::size_t{1} << j;
        for (std::size_t mask = 0; mask < n_sets; ++mask) {
            if (mask & bit) continue;
            const double w = weight[static_cast<std::size_t>(std::popcount(mask))];
            for (std::size_t c = 0; c < C; ++c) out.phi[c][j] += w * (value[mask | bit][c] - value[mask][c]);
        }
    }
    return out;
}

inline ShapExplanation brute_force_shapley(const AnyModel& model, std::span<const double> x,
                                           const FeatureMatrix& background) {
    return brute_force_shapley([&](std::span<const double> row) { return predict_proba(model, row); }, x, background);
}

// ---------------------------------------------------------------------------
// summaries

/// Stratified sample without replacement, proportional allocation with
/// largest remainders. Returns every row when size >= n_rows.
inline FeatureMatrix sample_background(const FeatureMatrix& m, std::size_t size, std::uint64_t seed) {
    if (size >= m.n_rows) return m;
    auto groups = rows_by_class(m.labels, m.n_classes());
    std::vector<std::size_t> quota(groups.size(), 0);
    std::vector<std::pair<double, std::size_t>> remainder;
    std::size_t given = 0;
    for (std::size_t c = 0; c < groups.size(); ++c) {
        const double exact = double(size) * double(groups[c].size()) / double(m.n_rows);
        quota[c] = static_cast<std::size_t>(std::floor(exact));
        given += quota[c];
        remainder.push_back({exact - double(quota[c]), c});
    }
    std::stable_sort(remainder.begin(), remainder.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; given < size && i < remainder.size(); ++i)
        if (quota[remainder[i].second] < groups[remainder[i].second].size()) {
            ++quota[remainder[i].second];
            ++given;
        }
    std::vector<std::size_t> rows;
    for (std::size_t c = 0; c < groups.size(); ++c) {
        Rng rng(derive_seed(seed, "background/class/" + std::to_string(c)));
        rng.shuffle(groups[c]);
        rows.insert(rows.end(), groups[c].begin(), groups[c].begin() + std::ptrdiff_t(quota[c]));
    }
    std::sort(rows.begin(), rows.end());
    return take_rows(m, rows);
}

struct ShapSummary {
    std::vector<std::string> class_names;
    std::vector<std::string> feature_names;
    std::vector<std::vector<double>> mean_abs_phi;  // [class][feature]
    std::vector<std::vector<int>> rank;             // [class][feature], 1 = most important
    std::vector<ShapExplanation> explanations;
};

/// Rank 1..d by descending value, ties by ascending name.
inline std::vector<int> rank_by_value(std::span<const double> v, const std::vector<std::string>& names) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (v[a] != v[b]) return v[a] > v[b];
        return names[a] < names[b];
    });
    std::vector<int> rank(v.size());
    for (std::size_t i = 0; i < idx.size(); ++i) rank[idx[i]] = static_cast<int>(i + 1);
    return rank;
}

inline ShapSummary shap_summary(const AnyModel& model, const FeatureMatrix& X, const FeatureMatrix& background) {
    if (X.n_rows == 0) throw ConfigError("shap_summary needs at least one row to explain");
    ShapSummary s;
    s.class_names = X.class_names;
    s.feature_names = X.feature_names;
    s.explanations.resize(X.n_rows);
    parallel_for(X.n_rows, [&](std::size_t r) { s.explanations[r] = tree_shap(model, X.row(r), background); });
    const std::size_t C = s.explanations.front().phi.size();
    const std::size_t d = X.n_cols();
    s.mean_abs_phi.assign(C, std::vector<double>(d, 0.0));
    for (const auto& e : s.explanations)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t j = 0; j < d; ++j) s.mean_abs_phi[c][j] += std::abs(e.phi[c][j]);
    for (auto& row : s.mean_abs_phi)
        for (double& v : row) v /= double(X.n_rows);
    for (std::size_t c = 0; c < C; ++c) s.rank.push_back(rank_by_value(s.mean_abs_phi[c], s.feature_names));
    return s;
}

inline std::string shap_summary_csv(const ShapSummary& s) {
    std::string out = "class,feature,mean_abs_phi,rank\n";
    for (std::size_t c = 0; c < s.mean_abs_phi.size(); ++c) {
        std::vector<std::size_t> order(s.feature_names.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](auto a, auto b) { return s.rank[c][a] < s.rank[c][b]; });
        for (auto j : order)
            out += csv_escape(s.class_names[c]) + "," + csv_escape(s.feature_names[j]) + "," +
                   format_double(s.mean_abs_phi[c][j]) + "," + std::to_string(s.rank[c][j]) + "\n";
    }
    return out;
}

inline json to_json(const ShapExplanation& e) {
    return json{{"base_value", e.base_value}, {"phi", e.phi}, {"model_output", e.model_output}};
}

// ---------------------------------------------------------------------------
// Morris elementary effects

struct MorrisDesign {
    std::size_t trajectories = 32;
    std::size_t levels = 4;
    std::vector<double> lower;
    std::vector<double> upper;
    std::vector<std::string> feature_names;
    std::size_t bootstrap_resamples = 1000;
    std::uint64_t seed = 0;

    double delta() const { return double(levels) / (2.0 * double(levels - 1)); }

    void validate() const {
        if (trajectories < 2) throw ConfigError("Morris screening needs at least 2 trajectories");
        if (levels < 2 || levels % 2 != 0) throw ConfigError("Morris levels must be an even number >= 2");
        if (lower.size() != upper.size()) throw ConfigError("Morris bounds have mismatched lengths");
        if (!feature_names.empty() && feature_names.size() != lower.size())
            throw ConfigError("Morris feature names do not match bounds");
        for (std::size_t i = 0; i < lower.size(); ++i)
            if (!std::isfinite(lower[i]) || !std::isfinite(upper[i]) || lower[i] > upper[i])
                throw ConfigError("Morris bounds must be finite with min <= max");
        if (bootstrap_resamples < 1) throw ConfigError("Morris bootstrap needs at least one resample");
    }
};

/// Bounds from per-feature training min/max.
inline MorrisDesign design_from_data(const FeatureMatrix& m, std::size_t trajectories, std::size_t levels,
                                     std::uint64_t seed) {
    MorrisDesign d;
    d.trajectories = trajectories;
    d.levels = levels;
    d.seed = seed;
    d.feature_names = m.feature_names;
    for (std::size_t c = 0; c < m.n_cols(); ++c) {
        const auto col = m.column(c);
        const auto [lo, hi] = std::minmax_element(col.begin(), col.end());
        d.lower.push_back(col.empty() ? 0.0 : *lo);
        d.upper.push_back(col.empty() ? 0.0 : *hi);
    }
    return d;
}

struct MorrisFeature {
    std::string name;
    double mu_star = 0.0;
    double mu = 0.0;
    double sigma = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::size_t trajectories_used = 0;
    bool excluded = false;  // min == max; no effect can be measured
};

struct MorrisResult {
    std::vector<MorrisFeature> features;
    std::size_t evaluations = 0;
};

/// Screens every output of `f` on the same trajectories; one result per output.
inline std::vector<MorrisResult> morris_screening_multi(const VectorModelFn& f, const MorrisDesign& design) {
    design.validate();
    const std::size_t d = design.lower.size();
    const double delta = design.delta();
    const std::size_t base_levels = design.levels / 2;  // grid indices 0 .. p/2-1 leave room for +delta
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < d; ++i)
        if (design.upper[i] > design.lower[i]) active.push_back(i);
        else std::clog << "xtree: Morris skips degenerate feature " << i << " (min == max)\n";

    auto to_input = [&](const std::vector<double>& unit) {
        std::vector<double> x(d);
        for (std::size_t i = 0; i < d; ++i) x[i] = design.lower[i] + unit[i] * (design.upper[i] - design.lower[i]);
        return x;
    };

    std::vector<std::vector<std::vector<double>>> effects;  // [trajectory][feature][output]
    effects.resize(design.trajectories);
    std::size_t n_out = 0;
    std::vector<std::size_t> evals(design.trajectories, 0);
    std::vector<std::vector<double>> first_output(design.trajectories);
    parallel_for(design.trajectories, [&](std::size_t t) {
        Rng rng(derive_seed(design.seed, "morris/trajectory/" + std::to_string(t)));
        std::vector<double> unit(d, 0.0);
        std::vector<int> direction(d, 1);
        for (auto i : active) {
            const double base = double(rng.below(base_levels)) / double(design.levels - 1);
            direction[i] = rng.below(2) ? 1 : -1;
            unit[i] = direction[i] > 0 ? base : base + delta;
        }
        std::vector<std::size_t> order = active;
        rng.shuffle(order);
        auto& traj = effects[t];
        traj.assign(d, {});
        auto prev = f(to_input(unit));
        ++evals[t];
        for (auto i : order) {
            unit[i] += direction[i] * delta;
            auto next = f(to_input(unit));
            ++evals[t];
            std::vector<double> ee(next.size());
            for (std::size_t k = 0; k < next.size(); ++k) ee[k] = direction[i] * (next[k] - prev[k]) / delta;
            traj[i] = std::move(ee);
            prev = std::move(next);
        }
        first_output[t] = prev;
    });
    n_out = first_output.front().size();

    std::vector<MorrisResult> results(n_out);
    const std::size_t r = design.trajectories;
    for (std::size_t k = 0; k < n_out; ++k) {
        auto& res = results[k];
        res.evaluations = std::accumulate(evals.begin(), evals.end(), std::size_t{0});
        res.features.resize(d);
        for (std::size_t i = 0; i < d; ++i) {
            auto& mf = res.features[i];
            mf.name = design.feature_names.empty() ? "x" + std::to_string(i) : design.feature_names[i];
            if (std::find(active.begin(), active.end(), i) == active.end()) {
                mf.excluded = true;
                continue;
            }
            std::vector<double> ee(r), abs_ee(r);
            for (std::size_t t = 0; t < r; ++t) {
                ee[t] = effects[t][i][k];
                abs_ee[t] = std::abs(ee[t]);
            }
            mf.trajectories_used = r;
            mf.mu = std::accumulate(ee.begin(), ee.end(), 0.0) / double(r);
            mf.mu_star = std::accumulate(abs_ee.begin(), abs_ee.end(), 0.0) / double(r);
            double ss = 0.0;
            for (double e : ee) ss += (e - mf.mu) * (e - mf.mu);
            mf.sigma = std::sqrt(ss / double(r - 1));

            Rng boot(derive_seed(design.seed, "morris/bootstrap/" + std::to_string(k) + "/" + std::to_string(i)));
            std::vector<double> means(design.bootstrap_resamples);
            for (auto& mval : means) {
                double s = 0.0;
                for (std::size_t t = 0; t < r; ++t) s += abs_ee[boot.below(r)];
                mval = s / double(r);
            }
            std::sort(means.begin(), means.end());
            // percentile interval, widened to contain the point estimate
            mf.ci_low = std::min(prep::quantile_sorted(means, 0.025), mf.mu_star);
            mf.ci_high = std::max(prep::quantile_sorted(means, 0.975), mf.mu_star);
        }
    }
    return results;
}

using ScalarModelFn = std::function<double(std::span<const double>)>;

inline MorrisResult morris_screening(const ScalarModelFn& f, const MorrisDesign& design) {
    auto res = morris_screening_multi([&](std::span<const double> x) { return std::vector<double>{f(x)}; }, design);
    return std::move(res.front());
}

/// One result per class, screening the predicted class probabilities.
inline std::vector<MorrisResult> morris_per_class(const AnyModel& model, const MorrisDesign& design) {
    return morris_screening_multi([&](std::span<const double> x) { return predict_proba(model, x); }, design);
}

inline std::string morris_csv(const std::vector<MorrisResult>& per_class, const std::vector<std::string>& class_names) {
    std::string out = "class,feature,mu_star,sigma,ci_low,ci_high\n";
    for (std::size_t c = 0; c < per_class.size(); ++c)
        for (const auto& f : per_class[c].features)
            out += csv_escape(c < class_names.size() ? class_names[c] : std::to_string(c)) + "," + csv_escape(f.name) +
                   "," + format_double(f.mu_star) + "," + format_double(f.sigma) + "," + format_double(f.ci_low) + "," +
                   format_double(f.ci_high) + "\n";
    return out;
}

inline json to_json(const MorrisResult& r) {
    json arr = json::array();
    for (const auto& f : r.features)
        arr.push_back(json{{"feature", f.name},
                           {"mu_star", f.mu_star},
                           {"mu", f.mu},
                           {"sigma", f.sigma},
                           {"ci_low", f.ci_low},
                           {"ci_high", f.ci_high},
                           {"trajectories_used", f.trajectories_used},
                           {"excluded", f.excluded}});
    return json{{"evaluations", r.evaluations}, {"features", arr}};
}

}  // namespace xtree::explain
