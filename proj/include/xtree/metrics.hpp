#pragma once

// Evaluation: confusion matrix, macro metrics, kappa, one-vs-rest curves,
// stratified cross-validation and wall-clock timing.

#include <algorithm>
#include <chrono>
#include <limits>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "xtree/dataio.hpp"
#include "xtree/models.hpp"
#include "xtree/parallel.hpp"
#include "xtree/preprocess.hpp"

namespace xtree::metrics {

using Confusion = std::vector<std::vector<std::size_t>>;

inline Confusion confusion_matrix(std::span<const int> y_true, std::span<const int> y_pred, std::size_t n_classes) {
    if (y_true.size() != y_pred.size())
        throw DataError("confusion_matrix: label vectors differ in length (" + std::to_string(y_true.size()) + " vs " +
                        std::to_string(y_pred.size()) + ")");
    Confusion cm(n_classes, std::vector<std::size_t>(n_classes, 0));
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        const int t = y_true[i], p = y_pred[i];
        if (t < 0 || p < 0 || std::size_t(t) >= n_classes || std::size_t(p) >= n_classes)
            throw DataError("confusion_matrix: label out of range at position " + std::to_string(i));
        ++cm[std::size_t(t)][std::size_t(p)];
    }
    return cm;
}

inline std::size_t total(const Confusion& cm) {
    std::size_t n = 0;
    for (const auto& row : cm) n = std::accumulate(row.begin(), row.end(), n);
    return n;
}

struct ClassificationMetrics {
    double accuracy = 0.0;
    double precision_macro = 0.0;
    double recall_macro = 0.0;
    double f1_macro = 0.0;
    std::vector<double> precision;
    std::vector<double> recall;
    std::vector<double> f1;
};

/// Zero denominators count as 0 for that class.
inline ClassificationMetrics classification_metrics(const Confusion& cm) {
    const std::size_t C = cm.size();
    if (C == 0) throw DataError("classification_metrics: empty confusion matrix");
    ClassificationMetrics m;
    const double n = double(total(cm));
    double trace = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
        trace += double(cm[c][c]);
        double row = 0.0, col = 0.0;
        for (std::size_t k = 0; k < C; ++k) {
            row += double(cm[c][k]);
            col += double(cm[k][c]);
        }
        const double tp = double(cm[c][c]);
        const double p = col > 0 ? tp / col : 0.0;
        const double r = row > 0 ? tp / row : 0.0;
        m.precision.push_back(p);
        m.recall.push_back(r);
        m.f1.push_back(p + r > 0 ? 2 * p * r / (p + r) : 0.0);
    }
    auto mean = [&](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(C); };
    m.accuracy = n > 0 ? trace / n : 0.0;
    m.precision_macro = mean(m.precision);
    m.recall_macro = mean(m.recall);
    m.f1_macro = mean(m.f1);
    return m;
}

struct Kappa {
    double value = 0.0;
    bool degenerate = false;  // chance agreement is 1; kappa reported as 0
};

inline Kappa cohen_kappa(const Confusion& cm) {
    const std::size_t C = cm.size();
    const double n = double(total(cm));
    if (n <= 0) return {0.0, true};
    double po = 0.0, pe = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
        po += double(cm[c][c]);
        double row = 0.0, col = 0.0;
        for (std::size_t k = 0; k < C; ++k) {
            row += double(cm[c][k]);
            col += double(cm[k][c]);
        }
        pe += row * col;
    }
    po /= n;
    pe /= n * n;
    if (pe >= 1.0) return {0.0, true};
    return {(po - pe) / (1.0 - pe), false};
}

// ---------------------------------------------------------------------------
// curves

struct Curve {
    std::vector<std::pair<double, double>> points;
    double auc = 0.0;
};

namespace detail {

struct Step {
    double tp = 0, fp = 0;
};

/// Cumulative (tp, fp) after each group of tied scores, highest score first.
inline std::vector<Step> threshold_steps(std::span<const int> y_true, std::span<const double> score, int cls,
                                         double& n_pos, double& n_neg) {
    if (y_true.size() != score.size()) throw DataError("curve: labels and scores differ in length");
    std::vector<std::size_t> idx(score.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return score[a] > score[b]; });
    n_pos = 0;
    n_neg = 0;
    for (int y : y_true) (y == cls ? n_pos : n_neg) += 1;
    std::vector<Step> steps;
    Step cur;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        (y_true[idx[i]] == cls ? cur.tp : cur.fp) += 1;
        if (i + 1 == idx.size() || score[idx[i + 1]] != score[idx[i]]) steps.push_back(cur);
    }
    return steps;
}

inline std::vector<double> class_column(const std::vector<std::vector<double>>& proba, int cls) {
    std::vector<double> s(proba.size());
    for (std::size_t i = 0; i < proba.size(); ++i) {
        if (cls < 0 || std::size_t(cls) >= proba[i].size()) throw DataError("curve: class index out of range");
        s[i] = proba[i][std::size_t(cls)];
    }
    return s;
}

}  // namespace detail

/// ROC for class `cls` vs the rest; AUC by the trapezoid rule.
inline Curve roc_curve_ovr(std::span<const int> y_true, std::span<const double> score, int cls) {
    double n_pos, n_neg;
    const auto steps = detail::threshold_steps(y_true, score, cls, n_pos, n_neg);
    if (n_pos == 0 || n_neg == 0)
        throw DataError("roc_curve: class " + std::to_string(cls) + " needs both positive and negative rows");
    Curve c;
    c.points.push_back({0.0, 0.0});
    for (const auto& s : steps) c.points.push_back({s.fp / n_neg, s.tp / n_pos});
    for (std::size_t i = 1; i < c.points.size(); ++i) {
        const auto [x0, y0] = c.points[i - 1];
        const auto [x1, y1] = c.points[i];
        c.auc += (x1 - x0) * (y0 + y1) / 2.0;
    }
    return c;
}

/// Precision-recall for class `cls`; starts at (recall 0, precision 1).
/// AUC is average precision: sum of (R_k - R_{k-1}) * P_k.
inline Curve pr_curve_ovr(std::span<const int> y_true, std::span<const double> score, int cls) {
    double n_pos, n_neg;
    const auto steps = detail::threshold_steps(y_true, score, cls, n_pos, n_neg);
    if (n_pos == 0) throw DataError("pr_curve: class " + std::to_string(cls) + " has no positive rows");
    Curve c;
    c.points.push_back({0.0, 1.0});
    double prev_recall = 0.0;
    for (const auto& s : steps) {
        const double recall = s.tp / n_pos;
        const double precision = s.tp / (s.tp + s.fp);
        c.points.push_back({recall, precision});
        c.auc += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return c;
}

inline Curve roc_curve_ovr(std::span<const int> y_true, const std::vector<std::vector<double>>& proba, int cls) {
    const auto s = detail::class_column(proba, cls);
    return roc_curve_ovr(y_true, s, cls);
}

inline Curve pr_curve_ovr(std::span<const int> y_true, const std::vector<std::vector<double>>& proba, int cls) {
    const auto s = detail::class_column(proba, cls);
    return pr_curve_ovr(y_true, s, cls);
}

inline std::string curve_csv(const Curve& c, const char* x_name, const char* y_name) {
    std::string out = std::string(x_name) + "," + y_name + "\n";
    for (const auto& [x, y] : c.points) out += format_double(x) + "," + format_double(y) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// reports

struct EvalReport {
    std::string tag;  // "train" or "test"
    std::size_t n_rows = 0;
    Confusion confusion;
    ClassificationMetrics metrics;
    Kappa kappa;
    std::vector<Curve> roc;  // per class; empty curve when undefined
    std::vector<Curve> pr;
    std::vector<bool> roc_defined;
    std::vector<bool> pr_defined;
};

inline EvalReport evaluate(const AnyModel& model, const FeatureMatrix& X, const std::string& tag) {
    EvalReport r;
    r.tag = tag;
    r.n_rows = X.n_rows;
    const auto proba = predict_proba(model, X);
    std::vector<int> pred(proba.size());
    for (std::size_t i = 0; i < proba.size(); ++i) pred[i] = trees::argmax(proba[i]);
    r.confusion = confusion_matrix(X.labels, pred, X.n_classes());
    r.metrics = classification_metrics(r.confusion);
    r.kappa = cohen_kappa(r.confusion);
    const auto counts = X.class_counts();
    for (std::size_t c = 0; c < X.n_classes(); ++c) {
        const bool has_pos = counts[c] > 0, has_neg = counts[c] < X.n_rows;
        r.roc_defined.push_back(has_pos && has_neg);
        r.pr_defined.push_back(has_pos);
        r.roc.push_back(has_pos && has_neg ? roc_curve_ovr(X.labels, proba, int(c)) : Curve{});
        r.pr.push_back(has_pos ? pr_curve_ovr(X.labels, proba, int(c)) : Curve{});
    }
    return r;
}

inline json points_json(const Curve& c) {
    json arr = json::array();
    for (const auto& [x, y] : c.points) arr.push_back(json::array({x, y}));
    return arr;
}

/// `with_points` false keeps the report compact; curves then live in CSV files.
inline json to_json(const EvalReport& r, const std::vector<std::string>& class_names, bool with_points = false) {
    json per_class = json::array();
    for (std::size_t c = 0; c < r.confusion.size(); ++c) {
        json e{{"class", class_names.at(c)},
               {"precision", r.metrics.precision[c]},
               {"recall", r.metrics.recall[c]},
               {"f1", r.metrics.f1[c]},
               {"roc_auc", r.roc_defined[c] ? json(r.roc[c].auc) : json(nullptr)},
               {"pr_auc", r.pr_defined[c] ? json(r.pr[c].auc) : json(nullptr)}};
        if (with_points) {
            e["roc_points"] = points_json(r.roc[c]);
            e["pr_points"] = points_json(r.pr[c]);
        }
        per_class.push_back(std::move(e));
    }
    return json{{"tag", r.tag},
                {"n_rows", r.n_rows},
                {"accuracy", r.metrics.accuracy},
                {"precision_macro", r.metrics.precision_macro},
                {"recall_macro", r.metrics.recall_macro},
                {"f1_macro", r.metrics.f1_macro},
                {"kappa", r.kappa.value},
                {"kappa_degenerate", r.kappa.degenerate},
                {"confusion", r.confusion},
                {"per_class", per_class},
                {"pr_auc_convention", "average_precision_step"}};
}

// ---------------------------------------------------------------------------
// cross-validation

struct CvOptions {
    bool resample_in_fold = true;  // oversample + noise on each training fold only
    double noise_fraction = 0.15;
};

struct CvReport {
    std::vector<double> fold_accuracy;
    double mean = 0.0;
    double std = 0.0;  // population
    std::size_t k = 0;
    std::uint64_t seed = 0;
};

inline CvReport kfold_cv(const ModelSpec& spec, const FeatureMatrix& X, std::size_t k, std::uint64_t seed,
                         const CvOptions& options = {}) {
    if (k < 2) throw ConfigError("cross-validation needs k >= 2");
    const auto fold = stratified_folds(X.labels, X.n_classes(), k, derive_seed(seed, "cv/folds"));
    CvReport rep;
    rep.k = k;
    rep.seed = seed;
    rep.fold_accuracy.assign(k, 0.0);
    // Models parallelize internally; folds run sequentially.
    for (std::size_t f = 0; f < k; ++f) {
        std::vector<std::size_t> train_rows, test_rows;
        for (std::size_t i = 0; i < fold.size(); ++i) (std::size_t(fold[i]) == f ? test_rows : train_rows).push_back(i);
        auto train = take_rows(X, train_rows);
        const auto test = take_rows(X, test_rows);
        if (options.resample_in_fold) {
            const std::string tag = "cv/fold/" + std::to_string(f);
            train = prep::random_oversample(train, derive_seed(seed, tag + "/oversample"));
            train = prep::gaussian_noise(train, options.noise_fraction, derive_seed(seed, tag + "/noise"));
        }
        const auto model = fit_model(spec, train);
        const auto pred = predict(model, test);
        std::size_t hit = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == test.labels[i];
        rep.fold_accuracy[f] = double(hit) / double(test.n_rows);
    }
    rep.mean = std::accumulate(rep.fold_accuracy.begin(), rep.fold_accuracy.end(), 0.0) / double(k);
    rep.std = prep::population_std(rep.fold_accuracy);
    return rep;
}

inline json to_json(const CvReport& r) {
    return json{{"k", r.k}, {"seed", r.seed}, {"fold_accuracy", r.fold_accuracy}, {"mean", r.mean}, {"std", r.std}};
}

// ---------------------------------------------------------------------------
// timing

struct ModelTiming {
    std::string kind;
    double train_seconds = 0.0;
    double infer_seconds = 0.0;
    double train_normalized = 0.0;
    double infer_normalized = 0.0;
};

struct TimingReport {
    std::vector<ModelTiming> models;
    std::size_t repeats = 0;
};

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

/// Models run one at a time so their wall-clock numbers do not interfere.
inline TimingReport timing_benchmark(const std::vector<ModelSpec>& specs, const FeatureMatrix& train,
                                     const FeatureMatrix& test, std::size_t repeats = 3) {
    if (specs.empty()) throw ConfigError("timing_benchmark needs at least one model");
    if (repeats < 1) throw ConfigError("timing_benchmark needs repeats >= 1");
    using clock = std::chrono::steady_clock;
    TimingReport rep;
    rep.repeats = repeats;
    for (const auto& spec : specs) {
        std::vector<double> tr, inf;
        for (std::size_t i = 0; i < repeats; ++i) {
            const auto t0 = clock::now();
            const auto model = fit_model(spec, train);
            const auto t1 = clock::now();
            [[maybe_unused]] const auto pred = predict(model, test);
            const auto t2 = clock::now();
            tr.push_back(std::chrono::duration<double>(t1 - t0).count());
            inf.push_back(std::chrono::duration<double>(t2 - t1).count());
        }
        rep.models.push_back({spec.kind, median(tr), median(inf), 0.0, 0.0});
    }
    double max_train = 0.0, max_infer = 0.0;
    for (const auto& m : rep.models) {
        max_train = std::max(max_train, m.train_seconds);
        max_infer = std::max(max_infer, m.infer_seconds);
    }
    // A clock too coarse to see any time at all leaves everything at 1.
    for (auto& m : rep.models) {
        m.train_normalized = max_train > 0 ? m.train_seconds / max_train : 1.0;
        m.infer_normalized = max_infer > 0 ? m.infer_seconds / max_infer : 1.0;
        if (m.train_normalized <= 0) m.train_normalized = std::numeric_limits<double>::min();
        if (m.infer_normalized <= 0) m.infer_normalized = std::numeric_limits<double>::min();
    }
    return rep;
}

inline std::string timing_radar_csv(const TimingReport& r) {
    std::string out = "model,train_seconds,infer_seconds,train_normalized,infer_normalized\n";
    for (const auto& m : r.models)
        out += m.kind + "," + format_double(m.train_seconds) + "," + format_double(m.infer_seconds) + "," +
               format_double(m.train_normalized) + "," + format_double(m.infer_normalized) + "\n";
    return out;
}

inline json to_json(const TimingReport& r) {
    json arr = json::array();
    for (const auto& m : r.models)
        arr.push_back(json{{"model", m.kind},
                           {"train_seconds", m.train_seconds},
                           {"infer_seconds", m.infer_seconds},
                           {"train_normalized", m.train_normalized},
                           {"infer_normalized", m.infer_normalized}});
    return json{{"repeats", r.repeats}, {"models", arr}};
}

}  // namespace xtree::metrics
