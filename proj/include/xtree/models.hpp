#pragma once

// One interface over the five classifier families: a declarative ModelSpec,
// fit/predict dispatch, and the versioned JSON model envelope.

#include <set>
#include <type_traits>
#include <string>
#include <variant>
#include <vector>

#include "xtree/dataio.hpp"
#include "xtree/shallow_models.hpp"
#include "xtree/trees.hpp"

namespace xtree {

inline constexpr int kModelFormatVersion = 1;

inline const std::vector<std::string>& model_kinds() {
    static const std::vector<std::string> kinds{"decision_tree", "random_forest", "knn", "mlp", "gbdt"};
    return kinds;
}

using ModelParams =
    std::variant<trees::TreeParams, trees::ForestParams, shallow::KnnParams, shallow::MlpParams, trees::GbdtParams>;

struct ModelSpec {
    std::string kind;
    ModelParams params;
};

using AnyModel =
    std::variant<trees::TreeModel, trees::ForestModel, trees::GbdtModel, shallow::KnnModel, shallow::MlpModel>;

namespace detail {

inline void reject_unknown_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

template <typename T>
void read_key(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        const auto& v = j.at(key);
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.template get<long long>() >= 0))
            throw ConfigError("'" + std::string(key) + "' in " + where + " must be a non-negative integer");
    }
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("bad value for '" + std::string(key) + "' in " + where);
    }
}

template <typename T>
void read_optional(const json& j, const char* key, std::optional<T>& out, const std::string& where) {
    if (!j.contains(key)) return;
    if (j.at(key).is_null()) {
        out.reset();
        return;
    }
    T v{};
    read_key(j, key, v, where);
    out = v;
}

}  // namespace detail

/// Default hyperparameters for each model kind.
inline ModelSpec default_model_spec(const std::string& kind, std::uint64_t seed = 0) {
    if (kind == "decision_tree") {
        trees::TreeParams p;
        p.seed = seed;
        return {kind, p};
    }
    if (kind == "random_forest") {
        trees::ForestParams p;
        p.seed = seed;
        return {kind, p};
    }
    if (kind == "knn") return {kind, shallow::KnnParams{}};
    if (kind == "mlp") {
        shallow::MlpParams p;
        p.seed = seed;
        return {kind, p};
    }
    if (kind == "gbdt") {
        trees::GbdtParams p;
        p.seed = seed;
        return {kind, p};
    }
    throw ConfigError("unknown model kind '" + kind + "'");
}

/// Overlays user `params` on the defaults for `kind`; unknown keys are errors.
inline ModelSpec parse_model_spec(const std::string& kind, const json& params, std::uint64_t seed) {
    ModelSpec spec = default_model_spec(kind, seed);
    const std::string where = "params of model '" + kind + "'";
    using detail::read_key;
    using detail::read_optional;
    using detail::reject_unknown_keys;
    if (auto* p = std::get_if<trees::TreeParams>(&spec.params)) {
        reject_unknown_keys(params, {"max_depth", "min_samples_split", "criterion", "laplace"}, where);
        read_optional(params, "max_depth", p->max_depth, where);
        read_key(params, "min_samples_split", p->min_samples_split, where);
        read_key(params, "criterion", p->criterion, where);
        read_key(params, "laplace", p->laplace, where);
        p->validate();
    } else if (auto* p = std::get_if<trees::ForestParams>(&spec.params)) {
        reject_unknown_keys(params,
                            {"n_trees", "max_depth", "min_samples_split", "features_per_split", "bootstrap", "laplace"},
                            where);
        read_key(params, "n_trees", p->n_trees, where);
        read_optional(params, "max_depth", p->tree.max_depth, where);
        read_key(params, "min_samples_split", p->tree.min_samples_split, where);
        read_optional(params, "features_per_split", p->features_per_split, where);
        read_key(params, "bootstrap", p->bootstrap, where);
        read_key(params, "laplace", p->tree.laplace, where);
        p->validate();
    } else if (auto* p = std::get_if<shallow::KnnParams>(&spec.params)) {
        reject_unknown_keys(params, {"k", "weighting"}, where);
        read_key(params, "k", p->k, where);
        read_key(params, "weighting", p->weighting, where);
        p->validate();
    } else if (auto* p = std::get_if<shallow::MlpParams>(&spec.params)) {
        reject_unknown_keys(params,
                            {"hidden_units", "max_iterations", "l2_alpha", "learning_rate", "batch_size", "tol",
                             "n_iter_no_change"},
                            where);
        read_key(params, "hidden_units", p->hidden_units, where);
        read_key(params, "max_iterations", p->max_iterations, where);
        read_key(params, "l2_alpha", p->l2_alpha, where);
        read_key(params, "learning_rate", p->learning_rate, where);
        read_key(params, "batch_size", p->batch_size, where);
        read_key(params, "tol", p->tol, where);
        read_key(params, "n_iter_no_change", p->n_iter_no_change, where);
        p->validate();
    } else if (auto* p = std::get_if<trees::GbdtParams>(&spec.params)) {
        reject_unknown_keys(params, {"n_iterations", "learning_rate", "depth", "l2_leaf_reg", "min_samples_split"},
                            where);
        read_key(params, "n_iterations", p->n_iterations, where);
        read_key(params, "learning_rate", p->learning_rate, where);
        read_key(params, "depth", p->depth, where);
        read_key(params, "l2_leaf_reg", p->l2_leaf_reg, where);
        read_key(params, "min_samples_split", p->min_samples_split, where);
        p->validate();
    }
    return spec;
}

inline json params_json(const ModelParams& params) {
    return std::visit(
        [](const auto& p) -> json {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, shallow::KnnParams>) {
                return json{{"k", p.k}, {"weighting", p.weighting}};
            } else if constexpr (std::is_same_v<P, shallow::MlpParams>) {
                return json{{"hidden_units", p.hidden_units}, {"max_iterations", p.max_iterations},
                            {"l2_alpha", p.l2_alpha},         {"learning_rate", p.learning_rate},
                            {"batch_size", p.batch_size},     {"tol", p.tol},
                            {"n_iter_no_change", p.n_iter_no_change}, {"seed", p.seed}};
            } else {
                return trees::params_json(p);
            }
        },
        params);
}

inline AnyModel fit_model(const ModelSpec& spec, const FeatureMatrix& X) {
    return std::visit(
        [&](const auto& p) -> AnyModel {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, trees::TreeParams>)
                return trees::fit_cart(X, p);
            else if constexpr (std::is_same_v<P, trees::ForestParams>)
                return trees::fit_random_forest(X, p);
            else if constexpr (std::is_same_v<P, trees::GbdtParams>)
                return trees::fit_gbdt(X, p);
            else if constexpr (std::is_same_v<P, shallow::KnnParams>)
                return shallow::fit_knn(X, p);
            else
                return shallow::fit_mlp(X, p);
        },
        spec.params);
}

inline std::string model_kind(const AnyModel& m) {
    switch (m.index()) {
        case 0: return "decision_tree";
        case 1: return "random_forest";
        case 2: return "gbdt";
        case 3: return "knn";
        default: return "mlp";
    }
}

inline std::vector<double> predict_proba(const AnyModel& m, std::span<const double> x) {
    return std::visit(
        [&](const auto& model) -> std::vector<double> {
            using M = std::decay_t<decltype(model)>;
            if constexpr (std::is_same_v<M, shallow::KnnModel>)
                return shallow::knn_predict_proba(model, x);
            else if constexpr (std::is_same_v<M, shallow::MlpModel>)
                return shallow::mlp_predict_proba(model, x);
            else
                return trees::predict_proba(model, x);
        },
        m);
}

inline std::vector<std::vector<double>> predict_proba(const AnyModel& m, const FeatureMatrix& X) {
    return std::visit(
        [&](const auto& model) -> std::vector<std::vector<double>> {
            using M = std::decay_t<decltype(model)>;
            if constexpr (std::is_same_v<M, shallow::KnnModel>)
                return shallow::knn_predict_proba(model, X);
            else if constexpr (std::is_same_v<M, shallow::MlpModel>)
                return shallow::mlp_predict_proba(model, X);
            else
                return trees::predict_proba(model, X);
        },
        m);
}

inline std::vector<int> predict(const AnyModel& m, const FeatureMatrix& X) {
    const auto proba = predict_proba(m, X);
    std::vector<int> out(proba.size());
    for (std::size_t r = 0; r < proba.size(); ++r) out[r] = trees::argmax(proba[r]);
    return out;
}

// ---------------------------------------------------------------------------
// serialization

inline json model_to_json(const AnyModel& model) {
    json j;
    j["format"] = "xtree-model";
    j["version"] = kModelFormatVersion;
    j["kind"] = model_kind(model);
    std::visit(
        [&](const auto& m) {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, trees::TreeModel>) {
                j["params"] = trees::params_json(m.params);
                j["feature_names"] = m.feature_names;
                j["class_names"] = m.class_names;
                j["nodes"] = trees::nodes_json(m);
            } else if constexpr (std::is_same_v<M, trees::ForestModel>) {
                j["params"] = trees::params_json(m.params);
                j["feature_names"] = m.feature_names;
                j["class_names"] = m.class_names;
                json arr = json::array();
                for (const auto& t : m.trees) arr.push_back(json{{"seed", t.params.seed}, {"nodes", trees::nodes_json(t)}});
                j["trees"] = arr;
            } else if constexpr (std::is_same_v<M, trees::GbdtModel>) {
                j["params"] = trees::params_json(m.params);
                j["feature_names"] = m.feature_names;
                j["class_names"] = m.class_names;
                j["train_loss"] = m.train_loss;
                json arr = json::array();
                for (const auto& t : m.trees) arr.push_back(trees::nodes_json(t));
                j["trees"] = arr;
            } else if constexpr (std::is_same_v<M, shallow::KnnModel>) {
                j["params"] = params_json(ModelParams{m.params});
                j["feature_names"] = m.train.feature_names;
                j["class_names"] = m.train.class_names;
                j["train_values"] = m.train.values;
                j["train_labels"] = m.train.labels;
            } else {
                j["params"] = params_json(ModelParams{m.params});
                j["feature_names"] = m.feature_names;
                j["class_names"] = m.class_names;
                j["loss_curve"] = m.loss_curve;
                j["weights"] = json{{"n_in", m.weights.n_in}, {"n_hidden", m.weights.n_hidden},
                                    {"n_out", m.weights.n_out}, {"w1", m.weights.w1},
                                    {"b1", m.weights.b1},     {"w2", m.weights.w2},
                                    {"b2", m.weights.b2}};
            }
        },
        model);
    return j;
}

inline AnyModel model_from_json(const json& j) {
    try {
        if (j.value("format", "") != "xtree-model" || j.value("version", 0) != kModelFormatVersion)
            throw DataError("not a version " + std::to_string(kModelFormatVersion) + " xtree model document");
        const std::string kind = j.at("kind").get<std::string>();
        const auto features = j.at("feature_names").get<std::vector<std::string>>();
        const auto classes = j.at("class_names").get<std::vector<std::string>>();
        const json& pj = j.at("params");
        auto make_tree = [&](const json& nodes, const trees::TreeParams& tp, bool regression) {
            trees::TreeModel t;
            t.nodes = trees::nodes_from_json(nodes);
            t.n_features = features.size();
            t.n_classes = classes.size();
            t.feature_names = features;
            t.class_names = classes;
            t.params = tp;
            t.regression = regression;
            return t;
        };
        if (kind == "decision_tree") return make_tree(j.at("nodes"), trees::tree_params_from_json(pj), false);
        if (kind == "random_forest") {
            trees::ForestModel f;
            f.params.n_trees = pj.at("n_trees").get<std::size_t>();
            f.params.tree = trees::tree_params_from_json(pj);
            f.params.features_per_split = pj.at("features_per_split").is_null()
                                              ? std::nullopt
                                              : std::optional(pj.at("features_per_split").get<std::size_t>());
            f.params.bootstrap = pj.at("bootstrap").get<bool>();
            f.params.seed = pj.at("seed").get<std::uint64_t>();
            f.n_features = features.size();
            f.n_classes = classes.size();
            f.feature_names = features;
            f.class_names = classes;
            for (const auto& t : j.at("trees")) {
                auto tp = f.params.tree;
                tp.seed = t.at("seed").get<std::uint64_t>();
                f.trees.push_back(make_tree(t.at("nodes"), tp, false));
            }
            return f;
        }
        if (kind == "gbdt") {
            trees::GbdtModel g;
            g.params.n_iterations = pj.at("n_iterations").get<std::size_t>();
            g.params.learning_rate = pj.at("learning_rate").get<double>();
            g.params.depth = pj.at("depth").get<int>();
            g.params.l2_leaf_reg = pj.at("l2_leaf_reg").get<double>();
            g.params.min_samples_split = pj.at("min_samples_split").get<std::size_t>();
            g.params.seed = pj.at("seed").get<std::uint64_t>();
            g.n_features = features.size();
            g.n_classes = classes.size();
            g.feature_names = features;
            g.class_names = classes;
            g.train_loss = j.at("train_loss").get<std::vector<double>>();
            trees::TreeParams tp;
            tp.max_depth = g.params.depth;
            tp.min_samples_split = g.params.min_samples_split;
            for (const auto& t : j.at("trees")) g.trees.push_back(make_tree(t, tp, true));
            if (g.trees.size() % std::max<std::size_t>(1, g.n_classes) != 0)
                throw DataError("gbdt model has an incomplete boosting round");
            return g;
        }
        if (kind == "knn") {
            shallow::KnnModel k;
            k.params.k = pj.at("k").get<std::size_t>();
            k.params.weighting = pj.at("weighting").get<std::string>();
            k.train.feature_names = features;
            k.train.class_names = classes;
            k.train.categorical.assign(features.size(), false);
            k.train.values = j.at("train_values").get<std::vector<double>>();
            k.train.labels = j.at("train_labels").get<std::vector<int>>();
            k.train.n_rows = k.train.labels.size();
            k.train.validate();
            return k;
        }
        if (kind == "mlp") {
            shallow::MlpModel m;
            m.params.hidden_units = pj.at("hidden_units").get<std::size_t>();
            m.params.max_iterations = pj.at("max_iterations").get<std::size_t>();
            m.params.l2_alpha = pj.at("l2_alpha").get<double>();
            m.params.learning_rate = pj.at("learning_rate").get<double>();
            m.params.batch_size = pj.at("batch_size").get<std::size_t>();
            m.params.tol = pj.at("tol").get<double>();
            m.params.n_iter_no_change = pj.at("n_iter_no_change").get<std::size_t>();
            m.params.seed = pj.at("seed").get<std::uint64_t>();
            m.feature_names = features;
            m.class_names = classes;
            m.loss_curve = j.at("loss_curve").get<std::vector<double>>();
            const json& w = j.at("weights");
            m.weights.n_in = w.at("n_in").get<std::size_t>();
            m.weights.n_hidden = w.at("n_hidden").get<std::size_t>();
            m.weights.n_out = w.at("n_out").get<std::size_t>();
            m.weights.w1 = w.at("w1").get<std::vector<double>>();
            m.weights.b1 = w.at("b1").get<std::vector<double>>();
            m.weights.w2 = w.at("w2").get<std::vector<double>>();
            m.weights.b2 = w.at("b2").get<std::vector<double>>();
            if (m.weights.w1.size() != m.weights.n_in * m.weights.n_hidden ||
                m.weights.w2.size() != m.weights.n_hidden * m.weights.n_out)
                throw DataError("mlp weight shapes do not match");
            return m;
        }
        throw DataError("unknown model kind '" + kind + "'");
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed model document: ") + e.what());
    }
}

}  // namespace xtree
