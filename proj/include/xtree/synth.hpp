#pragma once

// Synthetic flow-like datasets with planted threshold rules.
//
// Each rule targets one class: rows of that class get the rule feature at
// threshold + margin + |N(0,1)|, all other rows get threshold - margin - |N(0,1)|.
// Unplanted numeric features are standard normal noise; categorical noise
// columns draw uniformly from a small alphabet. Ground truth goes into a
// sidecar document so tests can check the rules are recovered.

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "xtree/dataio.hpp"
#include "xtree/models.hpp"
#include "xtree/rng.hpp"

namespace xtree::synth {

struct PlantedRule {
    std::size_t feature = 0;
    double threshold = 0.0;
    int target_class = 1;
    double margin = 1.0;
};

struct SynthSpec {
    std::size_t n_rows = 1000;
    std::size_t n_features = 6;  // numeric columns
    std::size_t n_categorical = 0;
    std::vector<std::string> class_names{"Data Alteration", "Spoofing", "Normal"};
    /// Class probabilities by index; empty means the default imbalance profile.
    std::vector<double> priors;
    std::vector<PlantedRule> rules;
    double label_noise = 0.0;
    std::uint64_t seed = 0;
    std::string label_column = "Label";

    std::size_t n_classes() const { return class_names.size(); }

    std::vector<std::string> feature_names() const {
        std::vector<std::string> names;
        for (std::size_t i = 0; i < n_features; ++i) names.push_back("f" + std::to_string(i));
        for (std::size_t i = 0; i < n_categorical; ++i) names.push_back("cat" + std::to_string(i));
        return names;
    }

    DatasetSchema schema() const {
        DatasetSchema s;
        s.feature_names = feature_names();
        for (std::size_t i = 0; i < n_categorical; ++i) s.categorical_columns.push_back("cat" + std::to_string(i));
        s.label_column = label_column;
        s.class_names = class_names;
        return s;
    }

    /// Normal 14,272 / Spoofing 1,124 / Data Alteration 922, for three classes;
    /// uniform otherwise.
    std::vector<double> effective_priors() const {
        if (!priors.empty()) return priors;
        if (n_classes() == 3) {
            const double total = 14272.0 + 1124.0 + 922.0;
            return {922.0 / total, 1124.0 / total, 14272.0 / total};
        }
        return std::vector<double>(n_classes(), 1.0 / double(n_classes()));
    }

    void validate() const {
        if (n_rows == 0) throw ConfigError("synth: n_rows must be positive");
        if (n_classes() < 2) throw ConfigError("synth: need at least two classes");
        if (n_features == 0) throw ConfigError("synth: need at least one numeric feature");
        if (!priors.empty()) {
            if (priors.size() != n_classes()) throw ConfigError("synth: priors must have one entry per class");
            double sum = 0.0;
            for (double p : priors) {
                if (!(p >= 0.0)) throw ConfigError("synth: priors must be non-negative");
                sum += p;
            }
            if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("synth: priors must sum to 1");
        }
        if (!(label_noise >= 0.0 && label_noise <= 1.0)) throw ConfigError("synth: label_noise must be in [0,1]");
        std::set<std::size_t> features;
        std::set<int> classes;
        for (const auto& r : rules) {
            if (r.feature >= n_features) throw ConfigError("synth: rule names feature f" + std::to_string(r.feature) +
                                                           " but only " + std::to_string(n_features) + " exist");
            if (r.target_class < 0 || std::size_t(r.target_class) >= n_classes())
                throw ConfigError("synth: rule targets unknown class " + std::to_string(r.target_class));
            if (!std::isfinite(r.threshold) || !(r.margin >= 0.0))
                throw ConfigError("synth: rule threshold must be finite and margin >= 0");
            if (!features.insert(r.feature).second)
                throw ConfigError("synth: feature f" + std::to_string(r.feature) + " has more than one rule");
            if (!classes.insert(r.target_class).second)
                throw ConfigError("synth: class " + std::to_string(r.target_class) + " has more than one rule");
        }
        if (rules.size() >= n_classes())
            throw ConfigError("synth: at most n_classes - 1 rules; one class must be the fallback");
    }
};

inline std::size_t draw_class(Rng& rng, const std::vector<double>& priors) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t c = 0; c < priors.size(); ++c) {
        acc += priors[c];
        if (u < acc) return c;
    }
    return priors.size() - 1;
}

struct SynthOutput {
    std::string csv;
    json truth;
    std::vector<std::size_t> class_counts;
};

inline SynthOutput generate(const SynthSpec& spec) {
    spec.validate();
    const auto priors = spec.effective_priors();
    Rng labels_rng(derive_seed(spec.seed, "synth/labels"));
    Rng noise_rng(derive_seed(spec.seed, "synth/label_noise"));
    std::vector<int> clean(spec.n_rows), label(spec.n_rows);
    for (std::size_t r = 0; r < spec.n_rows; ++r) {
        clean[r] = int(draw_class(labels_rng, priors));
        label[r] = clean[r];
        if (spec.label_noise > 0.0 && noise_rng.uniform() < spec.label_noise)
            label[r] = int(noise_rng.below(spec.n_classes()));
    }

    // Column-major generation, one stream per column.
    std::vector<std::vector<std::string>> cells(spec.n_features + spec.n_categorical,
                                                std::vector<std::string>(spec.n_rows));
    for (std::size_t f = 0; f < spec.n_features; ++f) {
        Rng rng(derive_seed(spec.seed, "synth/feature/" + std::to_string(f)));
        const PlantedRule* rule = nullptr;
        for (const auto& r : spec.rules)
            if (r.feature == f) rule = &r;
        for (std::size_t r = 0; r < spec.n_rows; ++r) {
            double v = rng.normal();
            if (rule) {
                const double offset = rule->margin + std::abs(v);
                v = clean[r] == rule->target_class ? rule->threshold + offset : rule->threshold - offset;
            }
            cells[f][r] = format_double(v);
        }
    }
    static const char* kAlphabet[] = {"alpha", "beta", "gamma", "delta"};
    for (std::size_t k = 0; k < spec.n_categorical; ++k) {
        Rng rng(derive_seed(spec.seed, "synth/categorical/" + std::to_string(k)));
        for (std::size_t r = 0; r < spec.n_rows; ++r) cells[spec.n_features + k][r] = kAlphabet[rng.below(4)];
    }

    SynthOutput out;
    const auto names = spec.feature_names();
    for (const auto& n : names) out.csv += csv_escape(n) + ",";
    out.csv += csv_escape(spec.label_column) + "\n";
    out.class_counts.assign(spec.n_classes(), 0);
    for (std::size_t r = 0; r < spec.n_rows; ++r) {
        for (const auto& col : cells) out.csv += col[r] + ",";
        out.csv += csv_escape(spec.class_names[std::size_t(label[r])]) + "\n";
        ++out.class_counts[std::size_t(label[r])];
    }

    json rules = json::array();
    for (const auto& r : spec.rules)
        rules.push_back(json{{"feature", names[r.feature]},
                             {"feature_index", r.feature},
                             {"threshold", r.threshold},
                             {"class", spec.class_names[std::size_t(r.target_class)]},
                             {"class_index", r.target_class},
                             {"margin", r.margin}});
    json counts = json::object();
    for (std::size_t c = 0; c < spec.n_classes(); ++c) counts[spec.class_names[c]] = out.class_counts[c];
    out.truth = json{{"format", "xtree-synth-truth"},
                     {"version", 1},
                     {"seed", spec.seed},
                     {"n_rows", spec.n_rows},
                     {"priors", priors},
                     {"label_noise", spec.label_noise},
                     {"rules", rules},
                     {"class_counts", counts},
                     {"schema", spec.schema()}};
    return out;
}

/// Parses a synth document; unknown keys are errors.
inline SynthSpec synth_spec_from_json(const json& j) {
    const std::string where = "synth config";
    detail::reject_unknown_keys(j,
                                {"config_version", "n_rows", "n_features", "n_categorical", "class_names", "priors",
                                 "rules", "label_noise", "seed", "label_column", "output"},
                                where);
    SynthSpec s;
    if (j.contains("config_version") && j.at("config_version") != 1)
        throw ConfigError("synth config: unsupported config_version");
    detail::read_key(j, "n_rows", s.n_rows, where);
    detail::read_key(j, "n_features", s.n_features, where);
    detail::read_key(j, "n_categorical", s.n_categorical, where);
    detail::read_key(j, "class_names", s.class_names, where);
    detail::read_key(j, "priors", s.priors, where);
    detail::read_key(j, "label_noise", s.label_noise, where);
    detail::read_key(j, "seed", s.seed, where);
    detail::read_key(j, "label_column", s.label_column, where);
    if (j.contains("rules")) {
        if (!j.at("rules").is_array()) throw ConfigError("synth config: 'rules' must be an array");
        for (const auto& r : j.at("rules")) {
            const std::string rw = "synth rule";
            detail::reject_unknown_keys(r, {"feature", "threshold", "class", "margin"}, rw);
            PlantedRule rule;
            if (!r.contains("feature") || !r.contains("class"))
                throw ConfigError("synth rule needs 'feature' and 'class'");
            detail::read_key(r, "feature", rule.feature, rw);
            detail::read_key(r, "threshold", rule.threshold, rw);
            detail::read_key(r, "class", rule.target_class, rw);
            detail::read_key(r, "margin", rule.margin, rw);
            s.rules.push_back(rule);
        }
    }
    s.validate();
    return s;
}

}  // namespace xtree::synth
