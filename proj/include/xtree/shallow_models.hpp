#pragma once

// Non-tree baselines: brute-force k-nearest neighbours and a one-hidden-layer
// ReLU perceptron with a softmax output trained by Adam.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xtree/dataio.hpp"
#include "xtree/rng.hpp"
#include "xtree/trees.hpp"

namespace xtree::shallow {

// ---------------------------------------------------------------------------
// KNN

struct KnnParams {
    std::size_t k = 5;
    std::string weighting = "uniform";

    void validate() const {
        if (k < 1) throw ConfigError("knn k must be >= 1");
        if (weighting != "uniform") throw ConfigError("unsupported knn weighting '" + weighting + "'");
    }
};

struct KnnModel {
    KnnParams params;
    FeatureMatrix train;
};

inline KnnModel fit_knn(const FeatureMatrix& X, const KnnParams& params) {
    params.validate();
    if (params.k > X.n_rows)
        throw ConfigError("knn k = " + std::to_string(params.k) + " exceeds the " + std::to_string(X.n_rows) +
                          " training rows");
    return KnnModel{params, X};
}

/// Indices of the k nearest training rows (squared Euclidean distance,
/// ties by training-row index).
inline std::vector<std::size_t> knn_neighbors(const KnnModel& m, std::span<const double> q) {
    trees::check_columns(m.train.n_cols(), q.size());
    std::vector<std::pair<double, std::size_t>> dist(m.train.n_rows);
    for (std::size_t r = 0; r < m.train.n_rows; ++r) {
        const auto row = m.train.row(r);
        double d = 0.0;
        for (std::size_t c = 0; c < row.size(); ++c) {
            const double diff = row[c] - q[c];
            d += diff * diff;
        }
        dist[r] = {d, r};
    }
    const auto k = static_cast<std::ptrdiff_t>(m.params.k);
    std::nth_element(dist.begin(), dist.begin() + k - 1, dist.end());
    std::sort(dist.begin(), dist.begin() + k);
    std::vector<std::size_t> out;
    for (std::ptrdiff_t i = 0; i < k; ++i) out.push_back(dist[std::size_t(i)].second);
    return out;
}

inline std::vector<double> knn_predict_proba(const KnnModel& m, std::span<const double> q) {
    std::vector<double> p(m.train.n_classes(), 0.0);
    for (auto r : knn_neighbors(m, q)) p[static_cast<std::size_t>(m.train.labels[r])] += 1.0;
    for (double& v : p) v /= double(m.params.k);
    return p;
}

inline std::vector<std::vector<double>> knn_predict_proba(const KnnModel& m, const FeatureMatrix& Q) {
    trees::check_columns(m.train.n_cols(), Q.n_cols());
    std::vector<std::vector<double>> out(Q.n_rows);
    parallel_for(Q.n_rows, [&](std::size_t r) { out[r] = knn_predict_proba(m, Q.row(r)); });
    return out;
}

// ---------------------------------------------------------------------------
// MLP

struct MlpParams {
    std::size_t hidden_units = 128;
    std::size_t max_iterations = 1000;  // epochs
    double l2_alpha = 1e-3;
    double learning_rate = 1e-3;
    std::size_t batch_size = 200;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double tol = 1e-6;
    std::size_t n_iter_no_change = 10;
    std::uint64_t seed = 0;

    void validate() const {
        if (hidden_units < 1) throw ConfigError("hidden_units must be >= 1");
        if (max_iterations < 1) throw ConfigError("max_iterations must be >= 1");
        if (l2_alpha < 0.0) throw ConfigError("l2_alpha must be >= 0");
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    }
};

/// Row-major layer weights: w1[i * hidden + j], w2[j * outputs + c].
struct MlpWeights {
    std::size_t n_in = 0;
    std::size_t n_hidden = 0;
    std::size_t n_out = 0;
    std::vector<double> w1, b1, w2, b2;

    static MlpWeights zeros_like(const MlpWeights& o) {
        MlpWeights z{o.n_in, o.n_hidden, o.n_out, {}, {}, {}, {}};
        z.w1.assign(o.w1.size(), 0.0);
        z.b1.assign(o.b1.size(), 0.0);
        z.w2.assign(o.w2.size(), 0.0);
        z.b2.assign(o.b2.size(), 0.0);
        return z;
    }

    /// All parameters in a fixed order (w1, b1, w2, b2).
    std::vector<double*> parameters() {
        std::vector<double*> out;
        for (auto* v : {&w1, &b1, &w2, &b2})
            for (double& x : *v) out.push_back(&x);
        return out;
    }
};

/// Glorot-uniform initialisation, bound sqrt(6 / (fan_in + fan_out)) per layer.
inline MlpWeights init_weights(std::size_t n_in, std::size_t n_hidden, std::size_t n_out, std::uint64_t seed) {
    MlpWeights w{n_in, n_hidden, n_out, {}, {}, {}, {}};
    Rng rng(seed);
    auto fill = [&](std::vector<double>& v, std::size_t n, std::size_t fan_in, std::size_t fan_out) {
        const double bound = std::sqrt(6.0 / double(fan_in + fan_out));
        v.resize(n);
        for (double& x : v) x = (2.0 * rng.uniform() - 1.0) * bound;
    };
    fill(w.w1, n_in * n_hidden, n_in, n_hidden);
    fill(w.b1, n_hidden, n_in, n_hidden);
    fill(w.w2, n_hidden * n_out, n_hidden, n_out);
    fill(w.b2, n_out, n_hidden, n_out);
    return w;
}

namespace detail {

inline void forward(const MlpWeights& w, std::span<const double> x, std::vector<double>& z1,
                    std::vector<double>& a1, std::vector<double>& p) {
    z1.assign(w.b1.begin(), w.b1.end());
    for (std::size_t i = 0; i < w.n_in; ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        const double* row = w.w1.data() + i * w.n_hidden;
        for (std::size_t j = 0; j < w.n_hidden; ++j) z1[j] += xi * row[j];
    }
    a1.resize(w.n_hidden);
    for (std::size_t j = 0; j < w.n_hidden; ++j) a1[j] = z1[j] > 0.0 ? z1[j] : 0.0;
    p.assign(w.b2.begin(), w.b2.end());
    for (std::size_t j = 0; j < w.n_hidden; ++j) {
        const double aj = a1[j];
        if (aj == 0.0) continue;
        const double* row = w.w2.data() + j * w.n_out;
        for (std::size_t c = 0; c < w.n_out; ++c) p[c] += aj * row[c];
    }
    trees::softmax_inplace(p);
}

}  // namespace detail

inline std::vector<double> mlp_forward(const MlpWeights& w, std::span<const double> x) {
    std::vector<double> z1, a1, p;
    detail::forward(w, x, z1, a1, p);
    return p;
}

struct LossAndGradient {
    double loss = 0.0;
    MlpWeights grad;
};

/// Mean cross-entropy over `rows` plus alpha/2 * ||W||^2 (weights only),
/// with its exact gradient.
inline LossAndGradient mlp_loss_and_gradient(const MlpWeights& w, const FeatureMatrix& X,
                                             std::span<const std::size_t> rows, double alpha) {
    LossAndGradient out{0.0, MlpWeights::zeros_like(w)};
    auto& g = out.grad;
    const double inv_b = 1.0 / double(rows.size());
    std::vector<double> z1, a1, p, delta1(w.n_hidden);
    for (auto r : rows) {
        const auto x = X.row(r);
        detail::forward(w, x, z1, a1, p);
        const auto y = static_cast<std::size_t>(X.labels[r]);
        out.loss -= std::log(std::max(p[y], 1e-300)) * inv_b;
        p[y] -= 1.0;
        for (double& v : p) v *= inv_b;  // delta2
        for (std::size_t c = 0; c < w.n_out; ++c) g.b2[c] += p[c];
        for (std::size_t j = 0; j < w.n_hidden; ++j) {
            double back = 0.0;
            const double* w2row = w.w2.data() + j * w.n_out;
            double* g2row = g.w2.data() + j * w.n_out;
            for (std::size_t c = 0; c < w.n_out; ++c) {
                g2row[c] += a1[j] * p[c];
                back += w2row[c] * p[c];
            }
            delta1[j] = z1[j] > 0.0 ? back : 0.0;
            g.b1[j] += delta1[j];
        }
        for (std::size_t i = 0; i < w.n_in; ++i) {
            const double xi = x[i];
            if (xi == 0.0) continue;
            double* g1row = g.w1.data() + i * w.n_hidden;
            for (std::size_t j = 0; j < w.n_hidden; ++j) g1row[j] += xi * delta1[j];
        }
    }
    double sq = 0.0;
    for (std::size_t i = 0; i < w.w1.size(); ++i) {
        sq += w.w1[i] * w.w1[i];
        g.w1[i] += alpha * w.w1[i];
    }
    for (std::size_t i = 0; i < w.w2.size(); ++i) {
        sq += w.w2[i] * w.w2[i];
        g.w2[i] += alpha * w.w2[i];
    }
    out.loss += 0.5 * alpha * sq;
    return out;
}

struct MlpModel {
    MlpParams params;
    MlpWeights weights;
    std::vector<std::string> feature_names;
    std::vector<std::string> class_names;
    std::vector<double> loss_curve;  // mean batch loss per epoch
};

inline MlpModel fit_mlp(const FeatureMatrix& X, const MlpParams& params) {
    params.validate();
    if (X.n_rows == 0) throw DataError("cannot fit an MLP on an empty matrix");
    MlpModel model;
    model.params = params;
    model.feature_names = X.feature_names;
    model.class_names = X.class_names;
    model.weights = init_weights(X.n_cols(), params.hidden_units, X.n_classes(), derive_seed(params.seed, "mlp/init"));
    auto& w = model.weights;
    const auto params_ptr = w.parameters();
    std::vector<double> m1(params_ptr.size(), 0.0), m2(params_ptr.size(), 0.0);
    Rng shuffler(derive_seed(params.seed, "mlp/shuffle"));
    std::vector<std::size_t> order(X.n_rows);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t batch = std::min(params.batch_size, X.n_rows);
    double best = std::numeric_limits<double>::infinity();
    std::size_t stale = 0;
    std::uint64_t step = 0;
    for (std::size_t epoch = 0; epoch < params.max_iterations; ++epoch) {
        shuffler.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t len = std::min(batch, order.size() - start);
            auto lg = mlp_loss_and_gradient(w, X, std::span(order).subspan(start, len), params.l2_alpha);
            if (!std::isfinite(lg.loss))
                throw NumericalError("MLP training diverged (non-finite loss) at epoch " + std::to_string(epoch + 1));
            epoch_loss += lg.loss;
            ++batches;
            ++step;
            const auto grads = lg.grad.parameters();
            const double c1 = 1.0 - std::pow(params.beta1, double(step));
            const double c2 = 1.0 - std::pow(params.beta2, double(step));
            const double lr = params.learning_rate * std::sqrt(c2) / c1;
            for (std::size_t i = 0; i < params_ptr.size(); ++i) {
                const double gi = *grads[i];
                m1[i] = params.beta1 * m1[i] + (1.0 - params.beta1) * gi;
                m2[i] = params.beta2 * m2[i] + (1.0 - params.beta2) * gi * gi;
                *params_ptr[i] -= lr * m1[i] / (std::sqrt(m2[i]) + params.epsilon);
            }
        }
        epoch_loss /= double(batches);
        model.loss_curve.push_back(epoch_loss);
        if (epoch_loss > best - params.tol) {
            if (++stale >= params.n_iter_no_change) break;
        } else {
            stale = 0;
        }
        best = std::min(best, epoch_loss);
    }
    return model;
}

inline std::vector<double> mlp_predict_proba(const MlpModel& m, std::span<const double> q) {
    trees::check_columns(m.weights.n_in, q.size());
    return mlp_forward(m.weights, q);
}

inline std::vector<std::vector<double>> mlp_predict_proba(const MlpModel& m, const FeatureMatrix& Q) {
    trees::check_columns(m.weights.n_in, Q.n_cols());
    std::vector<std::vector<double>> out(Q.n_rows);
    for (std::size_t r = 0; r < Q.n_rows; ++r) out[r] = mlp_forward(m.weights, Q.row(r));
    return out;
}

}  // namespace xtree::shallow
