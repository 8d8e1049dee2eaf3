#pragma once

// Fit-on-train / apply-anywhere transforms: IQR outlier imputation, z-score
// scaling, chi-square + Pearson/Bonferroni feature screening, random
// oversampling and Gaussian noise injection.

#include <algorithm>
#include <cmath>
#include <iostream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xtree/dataio.hpp"
#include "xtree/numstats.hpp"
#include "xtree/rng.hpp"

namespace xtree::prep {

/// Quantile with linear interpolation between order statistics (R type 7).
/// `sorted` must be ascending and non-empty.
inline double quantile_sorted(std::span<const double> sorted, double q) {
    const double h = (double(sorted.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] + (h - double(lo)) * (sorted[lo + 1] - sorted[lo]);
}

inline double population_std(std::span<const double> v) {
    if (v.empty()) return 0.0;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= double(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / double(v.size()));
}

// ---------------------------------------------------------------------------
// IQR imputation

struct IqrFeature {
    std::string name;
    bool exempt = false;  // categorical columns are left alone
    double q1 = 0.0;
    double q3 = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    double fill = 0.0;  // mean of the in-fence values
    std::size_t replaced_count = 0;
};

struct IqrReport {
    double k = 1.5;
    std::vector<IqrFeature> features;
};

inline IqrReport iqr_fit(const FeatureMatrix& m, double k = 1.5) {
    if (k < 0.0) throw ConfigError("iqr multiplier must be non-negative");
    IqrReport report;
    report.k = k;
    for (std::size_t c = 0; c < m.n_cols(); ++c) {
        IqrFeature f;
        f.name = m.feature_names[c];
        if (m.categorical[c] || m.n_rows == 0) {
            f.exempt = true;
            report.features.push_back(f);
            continue;
        }
        auto col = m.column(c);
        std::sort(col.begin(), col.end());
        f.q1 = quantile_sorted(col, 0.25);
        f.q3 = quantile_sorted(col, 0.75);
        const double iqr = f.q3 - f.q1;
        f.lower = f.q1 - k * iqr;
        f.upper = f.q3 + k * iqr;
        double sum = 0.0;
        std::size_t inside = 0;
        for (double v : col)
            if (v >= f.lower && v <= f.upper) {
                sum += v;
                ++inside;
            }
        f.fill = inside ? sum / double(inside) : 0.0;
        report.features.push_back(f);
    }
    return report;
}

/// Replaces out-of-fence values with the fitted fill value. The returned
/// report copy carries the replacement counts for this matrix.
inline std::pair<FeatureMatrix, IqrReport> iqr_apply(const FeatureMatrix& m, IqrReport report) {
    if (report.features.size() != m.n_cols()) throw DataError("IQR report does not match column count");
    FeatureMatrix out = m;
    for (std::size_t c = 0; c < m.n_cols(); ++c) {
        auto& f = report.features[c];
        f.replaced_count = 0;
        if (f.exempt) continue;
        for (std::size_t r = 0; r < out.n_rows; ++r) {
            double& v = out.at(r, c);
            if (v < f.lower || v > f.upper) {
                v = f.fill;
                ++f.replaced_count;
            }
        }
    }
    return {std::move(out), std::move(report)};
}

inline std::pair<FeatureMatrix, IqrReport> iqr_impute(const FeatureMatrix& m, double k = 1.5) {
    return iqr_apply(m, iqr_fit(m, k));
}

inline json to_json(const IqrReport& r) {
    json features = json::array();
    for (const auto& f : r.features) {
        json j{{"name", f.name}, {"exempt", f.exempt}};
        if (!f.exempt) {
            j["q1"] = f.q1;
            j["q3"] = f.q3;
            j["lower_fence"] = f.lower;
            j["upper_fence"] = f.upper;
            j["fill_value"] = f.fill;
        }
        j["replaced_count"] = f.replaced_count;
        features.push_back(std::move(j));
    }
    return json{{"k", r.k}, {"features", features}};
}

// ---------------------------------------------------------------------------
// z-score

struct ZScoreParams {
    std::vector<double> mean;
    std::vector<double> std;  // population convention
    std::vector<bool> scaled;
};

inline ZScoreParams zscore_fit(const FeatureMatrix& train) {
    ZScoreParams p;
    for (std::size_t c = 0; c < train.n_cols(); ++c) {
        const bool scaled = !train.categorical[c];
        double mean = 0.0, sd = 0.0;
        if (scaled && train.n_rows > 0) {
            const auto col = train.column(c);
            for (double v : col) mean += v;
            mean /= double(col.size());
            sd = population_std(col);
        }
        p.mean.push_back(mean);
        p.std.push_back(sd);
        p.scaled.push_back(scaled);
    }
    return p;
}

inline FeatureMatrix zscore_apply(const FeatureMatrix& m, const ZScoreParams& p) {
    if (p.mean.size() != m.n_cols())
        throw DataError("z-score parameters cover " + std::to_string(p.mean.size()) + " features, matrix has " +
                        std::to_string(m.n_cols()));
    FeatureMatrix out = m;
    for (std::size_t c = 0; c < m.n_cols(); ++c) {
        if (!p.scaled[c]) continue;
        for (std::size_t r = 0; r < out.n_rows; ++r) {
            double& v = out.at(r, c);
            v = p.std[c] > 0.0 ? (v - p.mean[c]) / p.std[c] : 0.0;
        }
    }
    return out;
}

inline json to_json(const ZScoreParams& p, const std::vector<std::string>& names) {
    json arr = json::array();
    for (std::size_t c = 0; c < p.mean.size(); ++c)
        arr.push_back(json{{"name", names[c]}, {"scaled", bool(p.scaled[c])}, {"mean", p.mean[c]}, {"std", p.std[c]}});
    return arr;
}

// ---------------------------------------------------------------------------
// feature screening

struct FeatureScreenEntry {
    std::string name;
    std::optional<double> chi2;
    std::optional<double> chi2_p;
    std::optional<int> chi2_dof;
    bool chi2_single_bin = false;
    std::optional<double> r;
    std::optional<double> p_raw;
    std::optional<double> p_adj;
    bool kept = false;
    std::optional<int> rank;
    std::string note;
};

struct FeatureScreenReport {
    std::vector<FeatureScreenEntry> features;
};

struct ScreenResult {
    std::vector<std::size_t> kept;  // column indices; rank order for pearson_select
    FeatureScreenReport report;
};

namespace detail {

inline FeatureScreenReport blank_report(const FeatureMatrix& m) {
    FeatureScreenReport r;
    for (const auto& name : m.feature_names) {
        FeatureScreenEntry e;
        e.name = name;
        r.features.push_back(std::move(e));
    }
    return r;
}

inline void require_two_classes(const FeatureMatrix& m) {
    std::size_t present = 0;
    for (auto n : m.class_counts())
        if (n > 0) ++present;
    if (present < 2) throw DataError("feature screening needs at least 2 classes present");
}

}  // namespace detail

/// Bin index per row: category codes for categorical columns, otherwise up
/// to `bins` equal-frequency bins (duplicate edges merged).
inline std::vector<std::size_t> discretize(std::span<const double> col, bool categorical, std::size_t bins) {
    std::vector<std::size_t> out(col.size());
    if (categorical) {
        std::vector<double> levels(col.begin(), col.end());
        std::sort(levels.begin(), levels.end());
        levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
        for (std::size_t i = 0; i < col.size(); ++i)
            out[i] = std::size_t(std::lower_bound(levels.begin(), levels.end(), col[i]) - levels.begin());
        return out;
    }
    std::vector<double> sorted(col.begin(), col.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> edges;
    for (std::size_t i = 1; i < bins; ++i) edges.push_back(quantile_sorted(sorted, double(i) / double(bins)));
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    for (std::size_t i = 0; i < col.size(); ++i)
        out[i] = std::size_t(std::lower_bound(edges.begin(), edges.end(), col[i]) - edges.begin());
    return out;
}

/// Contingency table of bins x classes with empty rows and columns dropped.
inline std::vector<std::vector<double>> contingency(std::span<const std::size_t> bin, std::span<const int> labels,
                                                    std::size_t n_classes) {
    std::size_t n_bins = 0;
    for (auto b : bin) n_bins = std::max(n_bins, b + 1);
    std::vector<std::vector<double>> table(n_bins, std::vector<double>(n_classes, 0.0));
    for (std::size_t i = 0; i < bin.size(); ++i) table[bin[i]][static_cast<std::size_t>(labels[i])] += 1.0;
    std::vector<std::vector<double>> rows;
    for (auto& row : table) {
        double s = 0.0;
        for (double v : row) s += v;
        if (s > 0.0) rows.push_back(std::move(row));
    }
    std::vector<std::size_t> live;
    for (std::size_t c = 0; c < n_classes; ++c) {
        double s = 0.0;
        for (const auto& row : rows) s += row[c];
        if (s > 0.0) live.push_back(c);
    }
    for (auto& row : rows) {
        std::vector<double> packed;
        for (auto c : live) packed.push_back(row[c]);
        row = std::move(packed);
    }
    return rows;
}

/// Stage 1: drops features whose chi-square p-value against the class
/// exceeds alpha.
inline ScreenResult chi_square_filter(const FeatureMatrix& m, double alpha = 0.05, std::size_t bins = 10) {
    if (bins < 2) throw ConfigError("chi-square filter needs at least 2 bins");
    detail::require_two_classes(m);
    ScreenResult out{{}, detail::blank_report(m)};
    for (std::size_t c = 0; c < m.n_cols(); ++c) {
        auto& e = out.report.features[c];
        const auto col = m.column(c);
        const auto bin = discretize(col, m.categorical[c], bins);
        const auto table = contingency(bin, m.labels, m.n_classes());
        if (table.size() < 2) {
            e.chi2 = 0.0;
            e.chi2_p = 1.0;
            e.chi2_dof = 0;
            e.chi2_single_bin = true;
            e.note = "single bin: independence cannot be rejected, kept";
            e.kept = true;
            out.kept.push_back(c);
            continue;
        }
        const auto res = stats::chi2_statistic(table);
        e.chi2 = res.statistic;
        e.chi2_p = res.p_value;
        e.chi2_dof = res.dof;
        e.kept = res.p_value <= alpha;
        if (e.kept)
            out.kept.push_back(c);
        else
            e.note = "chi-square p > alpha";
    }
    return out;
}

/// Stage 2: Pearson r against the integer class code, Bonferroni over all
/// tested features, keep adjusted p < alpha, rank by |r| (ties by name).
/// `candidates` limits the tested columns (default: all).
inline ScreenResult pearson_select(const FeatureMatrix& m, double alpha = 0.05,
                                   std::optional<std::size_t> top_k = std::nullopt,
                                   std::optional<std::vector<std::size_t>> candidates = std::nullopt) {
    detail::require_two_classes(m);
    ScreenResult out{{}, detail::blank_report(m)};
    std::vector<std::size_t> cols;
    if (candidates) {
        cols = *candidates;
    } else {
        cols.resize(m.n_cols());
        for (std::size_t c = 0; c < cols.size(); ++c) cols[c] = c;
    }
    std::vector<double> y(m.labels.begin(), m.labels.end());
    std::vector<std::size_t> tested;
    std::vector<double> raw;
    for (auto c : cols) {
        auto& e = out.report.features[c];
        const auto col = m.column(c);
        try {
            const double r = stats::pearson_r(col, y);
            e.r = r;
            e.p_raw = stats::pearson_p(r, m.n_rows);
            tested.push_back(c);
            raw.push_back(*e.p_raw);
        } catch (const NumericalError&) {
            e.note = "constant feature: correlation undefined, excluded";
            std::clog << "xtree: feature '" << e.name << "' is constant, excluded from Pearson screening\n";
        }
    }
    const auto adj = stats::bonferroni(raw);
    std::vector<std::size_t> passing;
    for (std::size_t i = 0; i < tested.size(); ++i) {
        auto& e = out.report.features[tested[i]];
        e.p_adj = adj[i];
        if (adj[i] < alpha)
            passing.push_back(tested[i]);
        else
            e.note = "Bonferroni-adjusted p >= alpha";
    }
    std::sort(passing.begin(), passing.end(), [&](std::size_t a, std::size_t b) {
        const double ra = std::abs(*out.report.features[a].r);
        const double rb = std::abs(*out.report.features[b].r);
        if (ra != rb) return ra > rb;
        return m.feature_names[a] < m.feature_names[b];
    });
    if (top_k && passing.size() > *top_k) {
        for (std::size_t i = *top_k; i < passing.size(); ++i) out.report.features[passing[i]].note = "beyond top_k";
        passing.resize(*top_k);
    }
    for (std::size_t i = 0; i < passing.size(); ++i) {
        auto& e = out.report.features[passing[i]];
        e.kept = true;
        e.rank = static_cast<int>(i + 1);
    }
    out.kept = passing;
    return out;
}

struct ScreenOptions {
    double chi2_alpha = 0.05;
    std::size_t chi2_bins = 10;
    double pearson_alpha = 0.05;
    std::optional<std::size_t> top_k;
};

/// Both stages; the merged report has one entry per input feature. `kept`
/// is returned in ascending column order.
inline ScreenResult screen_features(const FeatureMatrix& m, const ScreenOptions& opt) {
    auto stage1 = chi_square_filter(m, opt.chi2_alpha, opt.chi2_bins);
    auto stage2 = pearson_select(m, opt.pearson_alpha, opt.top_k, stage1.kept);
    ScreenResult out;
    out.report = stage1.report;
    for (std::size_t c = 0; c < m.n_cols(); ++c) {
        auto& e = out.report.features[c];
        const auto& s2 = stage2.report.features[c];
        if (!e.kept) continue;
        e.r = s2.r;
        e.p_raw = s2.p_raw;
        e.p_adj = s2.p_adj;
        e.kept = s2.kept;
        e.rank = s2.rank;
        if (!s2.note.empty()) e.note = s2.note;
    }
    out.kept = stage2.kept;
    std::sort(out.kept.begin(), out.kept.end());
    if (out.kept.empty()) throw DataError("no feature survived statistical screening");
    return out;
}

inline json to_json(const FeatureScreenReport& r) {
    auto opt = [](const auto& v) -> json { return v ? json(*v) : json(nullptr); };
    json arr = json::array();
    for (const auto& e : r.features) {
        json j{{"name", e.name},        {"chi2", opt(e.chi2)}, {"chi2_p", opt(e.chi2_p)}, {"r", opt(e.r)},
               {"p_raw", opt(e.p_raw)}, {"p_adj", opt(e.p_adj)}, {"kept", e.kept},       {"rank", opt(e.rank)}};
        j["chi2_dof"] = opt(e.chi2_dof);
        j["chi2_single_bin"] = e.chi2_single_bin;
        j["note"] = e.note;
        arr.push_back(std::move(j));
    }
    return arr;
}

// ---------------------------------------------------------------------------
// balancing and noise

/// Resamples every minority class with replacement up to the majority
/// count, then shuffles the result.
inline FeatureMatrix random_oversample(const FeatureMatrix& train, std::uint64_t seed) {
    auto groups = rows_by_class(train.labels, train.n_classes());
    if (groups.size() < 2) throw DataError("oversampling needs at least 2 classes");
    std::size_t majority = 0;
    for (std::size_t c = 0; c < groups.size(); ++c) {
        if (groups[c].empty()) throw DataError("class '" + train.class_names[c] + "' has no training rows");
        majority = std::max(majority, groups[c].size());
    }
    std::vector<std::size_t> rows;
    rows.reserve(majority * groups.size());
    for (std::size_t c = 0; c < groups.size(); ++c) {
        const auto& g = groups[c];
        rows.insert(rows.end(), g.begin(), g.end());
        Rng rng(derive_seed(seed, "oversample/class/" + std::to_string(c)));
        for (std::size_t i = g.size(); i < majority; ++i) rows.push_back(g[rng.below(g.size())]);
    }
    Rng shuffler(derive_seed(seed, "oversample/shuffle"));
    shuffler.shuffle(rows);
    return take_rows(train, rows);
}

/// x' = x + N(0, (fraction * sigma_feature)^2) per cell, one stream per feature.
inline FeatureMatrix gaussian_noise(const FeatureMatrix& m, double fraction, std::uint64_t seed) {
    if (fraction < 0.0 || std::isnan(fraction)) throw ConfigError("noise fraction must be non-negative");
    FeatureMatrix out = m;
    if (fraction == 0.0) return out;
    for (std::size_t c = 0; c < m.n_cols(); ++c) {
        const double sd = population_std(m.column(c));
        if (sd == 0.0) continue;
        const double scale = fraction * sd;
        Rng rng(derive_seed(seed, "noise/feature/" + std::to_string(c)));
        for (std::size_t r = 0; r < out.n_rows; ++r) out.at(r, c) += scale * rng.normal();
    }
    return out;
}

}  // namespace xtree::prep
