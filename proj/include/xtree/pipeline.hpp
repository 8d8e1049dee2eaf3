#pragma once

// Config-driven workflow: preprocess -> train -> evaluate -> explain -> report.
// Every command reads its inputs from, and writes its outputs to, the run's
// output directory, and records seeds and checksums in manifest.json.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "xtree/dataio.hpp"
#include "xtree/explain.hpp"
#include "xtree/metrics.hpp"
#include "xtree/models.hpp"
#include "xtree/preprocess.hpp"
#include "xtree/rng.hpp"
#include "xtree/synth.hpp"

namespace xtree::pipeline {

namespace fs = std::filesystem;

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kConfigVersion = 1;
inline constexpr int kReportVersion = 1;

// ---------------------------------------------------------------------------
// config

struct PreprocessConfig {
    double iqr_k = 1.5;
    double chi2_alpha = 0.05;
    std::size_t chi2_bins = 10;
    double pearson_alpha = 0.05;
    std::optional<std::size_t> top_k;
    double noise_fraction = 0.15;
    bool strict_no_leak = false;
};

struct ModelEntry {
    std::string name;
    ModelSpec spec;
    json params = json::object();  // as written in the config
};

struct ExplainConfig {
    std::string model;  // entry name; empty picks the first tree model
    std::size_t background_size = 100;
    std::size_t explain_rows = 200;
    std::size_t morris_r = 32;
    std::size_t morris_p = 4;
    std::size_t morris_bootstrap = 1000;
};

struct CvConfig {
    bool enabled = true;
    std::size_t k = 5;
    bool paper_order = false;  // CV on the balanced, noisy training set
    std::vector<std::string> models;  // empty = all
};

struct TimingConfig {
    bool enabled = true;
    std::size_t repeats = 3;
};

struct PipelineConfig {
    fs::path dataset_path;
    DatasetSchema schema;
    bool allow_missing = false;
    std::uint64_t seed = 0;
    double split_ratio = 0.8;
    PreprocessConfig preprocessing;
    std::vector<ModelEntry> models;
    ExplainConfig explain;
    CvConfig cv;
    TimingConfig timing;
    fs::path output_dir = "xtree-out";

    std::uint64_t model_seed(const std::string& name) const { return derive_seed(seed, "model/" + name); }

    const ModelEntry& model(const std::string& name) const {
        for (const auto& m : models)
            if (m.name == name) return m;
        throw ConfigError("no model named '" + name + "' in config");
    }

    /// Re-derives model seeds after the master seed changes.
    void reseed_models() {
        for (auto& m : models) m.spec = parse_model_spec(m.spec.kind, m.params, model_seed(m.name));
    }

    std::string explain_model() const {
        if (!explain.model.empty()) return explain.model;
        for (const char* kind : {"decision_tree", "random_forest"})
            for (const auto& m : models)
                if (m.spec.kind == kind) return m.name;
        return {};
    }

    void validate() const {
        schema.validate();
        if (dataset_path.empty()) throw ConfigError("dataset.path is required");
        if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw ConfigError("split_ratio must lie in (0, 1)");
        const auto& p = preprocessing;
        if (!(p.iqr_k > 0.0)) throw ConfigError("preprocessing.iqr_k must be positive");
        if (!(p.chi2_alpha > 0.0 && p.chi2_alpha <= 1.0)) throw ConfigError("preprocessing.chi2_alpha must lie in (0, 1]");
        if (!(p.pearson_alpha > 0.0 && p.pearson_alpha <= 1.0))
            throw ConfigError("preprocessing.pearson_alpha must lie in (0, 1]");
        if (p.chi2_bins < 2) throw ConfigError("preprocessing.chi2_bins must be at least 2");
        if (p.top_k && *p.top_k == 0) throw ConfigError("preprocessing.top_k must be positive");
        if (!(p.noise_fraction >= 0.0)) throw ConfigError("preprocessing.noise_fraction must be non-negative");
        if (models.empty()) throw ConfigError("at least one model must be configured");
        std::set<std::string> names;
        for (const auto& m : models)
            if (!names.insert(m.name).second) throw ConfigError("duplicate model name '" + m.name + "'");
        if (!explain.model.empty()) {
            const auto& kind = model(explain.model).spec.kind;
            if (kind != "decision_tree" && kind != "random_forest")
                throw ConfigError("explain.model must name a decision_tree or random_forest model");
        }
        if (explain.background_size < 1) throw ConfigError("explain.background_size must be positive");
        if (explain.explain_rows < 1) throw ConfigError("explain.explain_rows must be positive");
        if (explain.morris_r < 2) throw ConfigError("explain.morris.r must be at least 2");
        if (explain.morris_p < 2 || explain.morris_p % 2) throw ConfigError("explain.morris.p must be even and >= 2");
        if (explain.morris_bootstrap < 1) throw ConfigError("explain.morris.bootstrap must be positive");
        if (cv.k < 2) throw ConfigError("cv.k must be at least 2");
        for (const auto& n : cv.models) (void)model(n);
        if (timing.repeats < 1) throw ConfigError("timing.repeats must be positive");
    }

    json to_json() const {
        json models_j = json::array();
        for (const auto& m : models)
            models_j.push_back(json{{"name", m.name}, {"kind", m.spec.kind}, {"params", params_json(m.spec.params)}});
        const auto& p = preprocessing;
        return json{
            {"config_version", kConfigVersion},
            {"dataset", {{"path", dataset_path.generic_string()}, {"schema", schema}, {"allow_missing", allow_missing}}},
            {"seed", seed},
            {"split_ratio", split_ratio},
            {"preprocessing",
             {{"iqr_k", p.iqr_k},
              {"chi2_alpha", p.chi2_alpha},
              {"chi2_bins", p.chi2_bins},
              {"pearson_alpha", p.pearson_alpha},
              {"top_k", p.top_k ? json(*p.top_k) : json(nullptr)},
              {"noise_fraction", p.noise_fraction},
              {"strict_no_leak", p.strict_no_leak}}},
            {"models", models_j},
            {"explain",
             {{"model", explain_model()},
              {"background_size", explain.background_size},
              {"explain_rows", explain.explain_rows},
              {"morris", {{"r", explain.morris_r}, {"p", explain.morris_p}, {"bootstrap", explain.morris_bootstrap}}}}},
            {"cv", {{"enabled", cv.enabled}, {"k", cv.k}, {"paper_order", cv.paper_order}, {"models", cv.models}}},
            {"timing", {{"enabled", timing.enabled}, {"repeats", timing.repeats}}},
            {"output_dir", output_dir.generic_string()}};
    }
};

namespace detail {

using xtree::detail::read_key;
using xtree::detail::reject_unknown_keys;

inline const json& require(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw ConfigError("missing key '" + std::string(key) + "' in " + where);
    return j.at(key);
}

inline fs::path resolve(const fs::path& base, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace detail

/// Relative paths in the document resolve against `base_dir`.
inline PipelineConfig parse_config(const json& j, const fs::path& base_dir = {}) {
    using detail::read_key;
    using detail::reject_unknown_keys;
    reject_unknown_keys(j,
                        {"config_version", "dataset", "seed", "split_ratio", "preprocessing", "models", "explain",
                         "cv", "timing", "output_dir"},
                        "config");
    const auto& version = detail::require(j, "config_version", "config");
    if (!version.is_number_integer() || version.get<int>() != kConfigVersion)
        throw ConfigError("config_version must be " + std::to_string(kConfigVersion));

    PipelineConfig c;
    const auto& ds = detail::require(j, "dataset", "config");
    reject_unknown_keys(ds, {"path", "schema", "allow_missing"}, "dataset");
    const auto& path_j = detail::require(ds, "path", "dataset");
    const std::string path = path_j.is_string() ? path_j.get<std::string>() : std::string();
    if (path.empty()) throw ConfigError("dataset.path must be a non-empty string");
    c.dataset_path = detail::resolve(base_dir, path);
    const auto& sj = detail::require(ds, "schema", "dataset");
    reject_unknown_keys(sj, {"feature_names", "categorical_columns", "label_column", "class_names"}, "dataset.schema");
    detail::require(sj, "feature_names", "dataset.schema");
    detail::require(sj, "label_column", "dataset.schema");
    detail::require(sj, "class_names", "dataset.schema");
    read_key(sj, "feature_names", c.schema.feature_names, "dataset.schema");
    read_key(sj, "categorical_columns", c.schema.categorical_columns, "dataset.schema");
    read_key(sj, "label_column", c.schema.label_column, "dataset.schema");
    read_key(sj, "class_names", c.schema.class_names, "dataset.schema");
    read_key(ds, "allow_missing", c.allow_missing, "dataset");

    read_key(j, "seed", c.seed, "config");
    read_key(j, "split_ratio", c.split_ratio, "config");

    if (j.contains("preprocessing")) {
        const auto& pj = j.at("preprocessing");
        const std::string w = "preprocessing";
        reject_unknown_keys(pj,
                            {"iqr_k", "chi2_alpha", "chi2_bins", "pearson_alpha", "top_k", "noise_fraction",
                             "strict_no_leak"},
                            w);
        auto& p = c.preprocessing;
        read_key(pj, "iqr_k", p.iqr_k, w);
        read_key(pj, "chi2_alpha", p.chi2_alpha, w);
        read_key(pj, "chi2_bins", p.chi2_bins, w);
        read_key(pj, "pearson_alpha", p.pearson_alpha, w);
        xtree::detail::read_optional(pj, "top_k", p.top_k, w);
        read_key(pj, "noise_fraction", p.noise_fraction, w);
        read_key(pj, "strict_no_leak", p.strict_no_leak, w);
    }

    if (j.contains("models")) {
        const auto& mj = j.at("models");
        if (!mj.is_array()) throw ConfigError("'models' must be an array");
        for (const auto& e : mj) {
            reject_unknown_keys(e, {"kind", "name", "params"}, "models entry");
            ModelEntry m;
            std::string kind;
            read_key(e, "kind", kind, "models entry");
            if (kind.empty()) throw ConfigError("every models entry needs a 'kind'");
            m.name = kind;
            read_key(e, "name", m.name, "models entry");
            if (m.name.empty() || m.name.find_first_of("/\\") != std::string::npos)
                throw ConfigError("model name '" + m.name + "' is not a valid file name");
            if (e.contains("params")) m.params = e.at("params");
            m.spec = parse_model_spec(kind, m.params, 0);
            c.models.push_back(std::move(m));
        }
    } else {
        for (const auto& kind : model_kinds()) c.models.push_back({kind, default_model_spec(kind), json::object()});
    }

    if (j.contains("explain")) {
        const auto& ej = j.at("explain");
        reject_unknown_keys(ej, {"model", "background_size", "explain_rows", "morris"}, "explain");
        read_key(ej, "model", c.explain.model, "explain");
        read_key(ej, "background_size", c.explain.background_size, "explain");
        read_key(ej, "explain_rows", c.explain.explain_rows, "explain");
        if (ej.contains("morris")) {
            const auto& mj = ej.at("morris");
            reject_unknown_keys(mj, {"r", "p", "bootstrap"}, "explain.morris");
            read_key(mj, "r", c.explain.morris_r, "explain.morris");
            read_key(mj, "p", c.explain.morris_p, "explain.morris");
            read_key(mj, "bootstrap", c.explain.morris_bootstrap, "explain.morris");
        }
    }
    if (j.contains("cv")) {
        const auto& cj = j.at("cv");
        reject_unknown_keys(cj, {"enabled", "k", "paper_order", "models"}, "cv");
        read_key(cj, "enabled", c.cv.enabled, "cv");
        read_key(cj, "k", c.cv.k, "cv");
        read_key(cj, "paper_order", c.cv.paper_order, "cv");
        read_key(cj, "models", c.cv.models, "cv");
    }
    if (j.contains("timing")) {
        const auto& tj = j.at("timing");
        reject_unknown_keys(tj, {"enabled", "repeats"}, "timing");
        read_key(tj, "enabled", c.timing.enabled, "timing");
        read_key(tj, "repeats", c.timing.repeats, "timing");
    }
    if (j.contains("output_dir")) {
        std::string out;
        read_key(j, "output_dir", out, "config");
        if (out.empty()) throw ConfigError("output_dir must be a non-empty string");
        c.output_dir = detail::resolve(base_dir, out);
    } else {
        c.output_dir = detail::resolve(base_dir, "xtree-out");
    }
    c.reseed_models();
    c.validate();
    return c;
}

inline PipelineConfig load_config(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("config file '" + path.string() + "' not found");
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return parse_config(j, path.parent_path());
}

// ---------------------------------------------------------------------------
// run context

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string file_checksum(const fs::path& p) { return "fnv1a64:" + hex64(fnv1a64(read_file(p))); }

inline std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// File-name-safe form of a class or model name.
inline std::string slug(std::string_view s) {
    std::string out;
    for (char ch : s) out += std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '.' ? ch : '_';
    return out;
}

struct CommandResult {
    json summary;
    std::string table;
};

/// Rethrows library errors with the stage name prepended, keeping the type.
template <typename F>
auto staged(const std::string& stage, F&& f) -> decltype(f()) {
    const std::string prefix = "stage '" + stage + "': ";
    try {
        return f();
    } catch (const ParseError& e) {
        throw ParseError(prefix + e.what(), e.row(), e.column());
    } catch (const SchemaError& e) {
        throw SchemaError(prefix + e.what());
    } catch (const DataError& e) {
        throw DataError(prefix + e.what());
    } catch (const NumericalError& e) {
        throw NumericalError(prefix + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(prefix + e.what());
    }
}

class Run {
public:
    explicit Run(PipelineConfig config) : cfg_(std::move(config)) {}

    const PipelineConfig& config() const { return cfg_; }
    fs::path dir() const { return cfg_.output_dir; }
    fs::path path(const std::string& rel) const { return cfg_.output_dir / rel; }

    /// Fails fast with the command that produces the missing artifact.
    void require(const std::string& rel, const std::string& producer) const {
        if (!fs::exists(path(rel)))
            throw ConfigError("missing '" + path(rel).string() + "'; run `xtree " + producer + "` first");
    }

    FeatureMatrix checkpoint(const std::string& name) const {
        require("checkpoints/" + name + ".json", "preprocess");
        require("checkpoints/" + name + ".csv", "preprocess");
        return load_snapshot(path("checkpoints/" + name));
    }

    json read_json(const std::string& rel, const std::string& producer) const {
        require(rel, producer);
        try {
            return json::parse(read_file(path(rel)));
        } catch (const json::exception& e) {
            throw DataError("'" + path(rel).string() + "' is not valid JSON: " + e.what());
        }
    }

    void write(const std::string& rel, std::string_view contents) {
        write_file(path(rel), contents);
        outputs_.push_back(rel);
    }
    void write_json(const std::string& rel, const json& j) { write(rel, j.dump(2) + "\n"); }

    void save_checkpoint(const FeatureMatrix& m, const std::string& name) {
        save_snapshot(m, path("checkpoints/" + name));
        outputs_.push_back("checkpoints/" + name + ".json");
        outputs_.push_back("checkpoints/" + name + ".csv");
    }

    void begin(const std::string& stage) {
        stage_ = stage;
        started_ = utc_now();
        inputs_.clear();
        outputs_.clear();
        seeds_ = json::object();
    }

    void input(const std::string& rel) { inputs_.push_back(rel); }
    void seed(const std::string& tag, std::uint64_t s) { seeds_[tag] = s; }

    /// Records the stage in manifest.json, keeping entries of other stages.
    void finish(json extra = json::object()) {
        json manifest = json::object();
        if (fs::exists(path("manifest.json"))) {
            try {
                manifest = json::parse(read_file(path("manifest.json")));
            } catch (const json::exception&) {
                manifest = json::object();
            }
        }
        manifest["format"] = "xtree-manifest";
        manifest["version"] = 1;
        manifest["tool_version"] = kToolVersion;
        manifest["master_seed"] = cfg_.seed;
        manifest["config"] = cfg_.to_json();
        if (!manifest.contains("stages")) manifest["stages"] = json::object();
        json in = json::object(), out = json::object();
        for (const auto& rel : inputs_) {
            const fs::path p = rel == "@dataset" ? cfg_.dataset_path : path(rel);
            in[rel == "@dataset" ? p.generic_string() : rel] = file_checksum(p);
        }
        for (const auto& rel : outputs_) out[rel] = file_checksum(path(rel));
        json entry{{"started_at", started_},
                   {"finished_at", utc_now()},
                   {"seeds", seeds_},
                   {"inputs", in},
                   {"outputs", out}};
        for (const auto& [k, v] : extra.items()) entry[k] = v;
        manifest["stages"][stage_] = entry;
        write_file(path("manifest.json"), manifest.dump(2) + "\n");
    }

private:
    PipelineConfig cfg_;
    std::string stage_;
    std::string started_;
    std::vector<std::string> inputs_;
    std::vector<std::string> outputs_;
    json seeds_ = json::object();
};

// ---------------------------------------------------------------------------
// text tables

inline std::string fixed(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

inline std::string render_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> width(header.size());
    for (std::size_t i = 0; i < header.size(); ++i) width[i] = header[i].size();
    for (const auto& r : rows)
        for (std::size_t i = 0; i < r.size() && i < width.size(); ++i) width[i] = std::max(width[i], r[i].size());
    auto line = [&](const std::vector<std::string>& cells) {
        std::string s;
        for (std::size_t i = 0; i < width.size(); ++i) {
            const std::string cell = i < cells.size() ? cells[i] : "";
            s += i == 0 ? cell + std::string(width[i] - cell.size(), ' ') : std::string(width[i] - cell.size(), ' ') + cell;
            if (i + 1 < width.size()) s += "  ";
        }
        return s + "\n";
    };
    std::string out = line(header);
    std::size_t total = 0;
    for (auto w : width) total += w + 2;
    out += std::string(total - 2, '-') + "\n";
    for (const auto& r : rows) out += line(r);
    return out;
}

inline json counts_json(const FeatureMatrix& m) {
    json j = json::object();
    const auto counts = m.class_counts();
    for (std::size_t c = 0; c < counts.size(); ++c) j[m.class_names[c]] = counts[c];
    return j;
}

// ---------------------------------------------------------------------------
// commands

inline CommandResult cmd_preprocess(const PipelineConfig& cfg) {
    Run run(cfg);
    run.begin("preprocess");
    run.input("@dataset");
    const auto& pc = cfg.preprocessing;
    const auto split_seed = derive_seed(cfg.seed, "stage/split");
    const auto oversample_seed = derive_seed(cfg.seed, "stage/oversample");
    const auto noise_seed = derive_seed(cfg.seed, "stage/noise");
    run.seed("split", split_seed);
    run.seed("oversample", oversample_seed);
    run.seed("noise", noise_seed);

    const auto loaded = staged("load", [&] {
        LoadOptions o;
        o.allow_missing = cfg.allow_missing;
        return load_csv(cfg.dataset_path, cfg.schema, o);
    });
    const auto dedup = staged("dedup", [&] { return deduplicate(loaded); });
    run.save_checkpoint(dedup.matrix, "dedup");

    const prep::ScreenOptions screen_opt{pc.chi2_alpha, pc.chi2_bins, pc.pearson_alpha, pc.top_k};
    prep::IqrReport iqr;
    prep::ZScoreParams z;
    std::vector<std::string> z_names;
    prep::ScreenResult screen;
    std::vector<std::string> screened_names;
    FeatureMatrix train, test;
    if (!pc.strict_no_leak) {
        // Default order: every transform sees the whole dataset before the split.
        auto [imputed, report] = staged("iqr", [&] { return prep::iqr_impute(dedup.matrix, pc.iqr_k); });
        iqr = report;
        run.save_checkpoint(imputed, "iqr");
        z = staged("zscore", [&] { return prep::zscore_fit(imputed); });
        z_names = imputed.feature_names;
        const auto scaled = staged("zscore", [&] { return prep::zscore_apply(imputed, z); });
        run.save_checkpoint(scaled, "zscore");
        screen = staged("screen", [&] { return prep::screen_features(scaled, screen_opt); });
        const auto screened = select_columns(scaled, screen.kept);
        screened_names = screened.feature_names;
        run.save_checkpoint(screened, "screened");
        auto split = staged("split", [&] { return stratified_split(screened, cfg.split_ratio, split_seed); });
        train = std::move(split.train);
        test = std::move(split.test);
    } else {
        // Fit every transform on the training split only.
        auto split = staged("split", [&] { return stratified_split(dedup.matrix, cfg.split_ratio, split_seed); });
        run.save_checkpoint(split.train, "train_raw");
        run.save_checkpoint(split.test, "test_raw");
        iqr = staged("iqr", [&] { return prep::iqr_fit(split.train, pc.iqr_k); });
        auto train_iqr = staged("iqr", [&] { return prep::iqr_apply(split.train, iqr); });
        iqr = train_iqr.second;
        const auto test_iqr = staged("iqr", [&] { return prep::iqr_apply(split.test, iqr).first; });
        z = staged("zscore", [&] { return prep::zscore_fit(train_iqr.first); });
        z_names = train_iqr.first.feature_names;
        const auto train_z = staged("zscore", [&] { return prep::zscore_apply(train_iqr.first, z); });
        const auto test_z = staged("zscore", [&] { return prep::zscore_apply(test_iqr, z); });
        screen = staged("screen", [&] { return prep::screen_features(train_z, screen_opt); });
        train = select_columns(train_z, screen.kept);
        test = select_columns(test_z, screen.kept);
        screened_names = train.feature_names;
    }
    run.save_checkpoint(train, "train");
    run.save_checkpoint(test, "test");
    const auto balanced = staged("oversample", [&] { return prep::random_oversample(train, oversample_seed); });
    run.save_checkpoint(balanced, "train_balanced");
    const auto noisy = staged("noise", [&] { return prep::gaussian_noise(balanced, pc.noise_fraction, noise_seed); });
    run.save_checkpoint(noisy, "train_final");

    run.write_json("preprocess/iqr.json", prep::to_json(iqr));
    run.write_json("preprocess/zscore.json", prep::to_json(z, z_names));
    run.write_json("preprocess/screen.json", prep::to_json(screen.report));
    const json counts{{"loaded_rows", loaded.n_rows},
                      {"duplicates_removed", dedup.removed},
                      {"deduplicated", counts_json(dedup.matrix)},
                      {"train", counts_json(train)},
                      {"test", counts_json(test)},
                      {"train_balanced", counts_json(balanced)},
                      {"features_in", dedup.matrix.n_cols()},
                      {"features_kept", screened_names},
                      {"strict_no_leak", pc.strict_no_leak}};
    run.write_json("preprocess/counts.json", counts);
    run.finish(json{{"mode", {{"strict_no_leak", pc.strict_no_leak}}}});

    CommandResult res;
    res.summary = counts;
    std::vector<std::vector<std::string>> rows;
    const auto tr = train.class_counts(), te = test.class_counts(), ba = balanced.class_counts();
    std::size_t ttr = 0, tte = 0, tba = 0;
    for (std::size_t c = 0; c < train.n_classes(); ++c) {
        rows.push_back({train.class_names[c] + " (" + std::to_string(c) + ")", std::to_string(tr[c]),
                        std::to_string(te[c]), std::to_string(ba[c])});
        ttr += tr[c];
        tte += te[c];
        tba += ba[c];
    }
    rows.push_back({"Total", std::to_string(ttr), std::to_string(tte), std::to_string(tba)});
    res.table = render_table({"Class", "Train", "Test", "Balanced train"}, rows) + "features kept: " +
                std::to_string(screened_names.size()) + " of " + std::to_string(dedup.matrix.n_cols()) + "\n";
    return res;
}

inline CommandResult cmd_train(const PipelineConfig& cfg) {
    Run run(cfg);
    run.begin("train");
    const auto X = run.checkpoint("train_final");
    run.input("checkpoints/train_final.json");
    run.input("checkpoints/train_final.csv");
    CommandResult res;
    res.summary = json::array();
    std::vector<std::vector<std::string>> rows;
    for (const auto& m : cfg.models) {
        run.seed(m.name, cfg.model_seed(m.name));
        const auto model = staged("train/" + m.name, [&] { return fit_model(m.spec, X); });
        run.write("models/" + m.name + ".json", model_to_json(model).dump() + "\n");
        res.summary.push_back(json{{"name", m.name}, {"kind", m.spec.kind}, {"file", "models/" + m.name + ".json"}});
        rows.push_back({m.name, m.spec.kind, "models/" + m.name + ".json"});
    }
    run.finish();
    res.table = render_table({"Model", "Kind", "File"}, rows);
    return res;
}

inline AnyModel load_model(const Run& run, const std::string& name) {
    return model_from_json(run.read_json("models/" + name + ".json", "train"));
}

inline CommandResult cmd_evaluate(const PipelineConfig& cfg) {
    Run run(cfg);
    run.begin("evaluate");
    const auto train = run.checkpoint("train_final");
    const auto test = run.checkpoint("test");
    for (const char* n : {"train_final", "test"}) {
        run.input(std::string("checkpoints/") + n + ".json");
        run.input(std::string("checkpoints/") + n + ".csv");
    }
    json metrics_j = json::array();
    std::vector<std::vector<std::string>> rows;
    for (const auto& m : cfg.models) {
        const auto model = load_model(run, m.name);
        run.input("models/" + m.name + ".json");
        const auto tr = staged("evaluate/" + m.name, [&] { return metrics::evaluate(model, train, "train"); });
        const auto te = staged("evaluate/" + m.name, [&] { return metrics::evaluate(model, test, "test"); });
        for (std::size_t c = 0; c < test.n_classes(); ++c) {
            const std::string base = "evaluation/curves/" + slug(m.name) + "/";
            if (te.roc_defined[c]) run.write(base + "roc_" + slug(test.class_names[c]) + ".csv", metrics::curve_csv(te.roc[c], "fpr", "tpr"));
            if (te.pr_defined[c]) run.write(base + "pr_" + slug(test.class_names[c]) + ".csv", metrics::curve_csv(te.pr[c], "recall", "precision"));
        }
        metrics_j.push_back(json{{"name", m.name},
                                 {"kind", m.spec.kind},
                                 {"params", params_json(m.spec.params)},
                                 {"train", metrics::to_json(tr, train.class_names)},
                                 {"test", metrics::to_json(te, test.class_names)}});
        for (const auto* r : {&tr, &te})
            rows.push_back({m.name, r->tag, fixed(r->metrics.accuracy), fixed(r->metrics.precision_macro),
                            fixed(r->metrics.recall_macro), fixed(r->metrics.f1_macro), fixed(r->kappa.value)});
    }
    run.write_json("evaluation/metrics.json", json{{"averaging", "macro"}, {"models", metrics_j}});

    json cv_j = nullptr;
    if (cfg.cv.enabled) {
        // Default protocol resamples inside each training fold; --paper-order
        // folds the already balanced, noisy training set.
        const auto cv_data = cfg.cv.paper_order ? train : run.checkpoint("train");
        if (!cfg.cv.paper_order) {
            run.input("checkpoints/train.json");
            run.input("checkpoints/train.csv");
        }
        const auto cv_seed = derive_seed(cfg.seed, "stage/cv");
        run.seed("cv", cv_seed);
        metrics::CvOptions opt;
        opt.resample_in_fold = !cfg.cv.paper_order;
        opt.noise_fraction = cfg.preprocessing.noise_fraction;
        cv_j = json::array();
        for (const auto& m : cfg.models) {
            if (!cfg.cv.models.empty() &&
                std::find(cfg.cv.models.begin(), cfg.cv.models.end(), m.name) == cfg.cv.models.end())
                continue;
            const auto rep = staged("cv/" + m.name, [&] { return metrics::kfold_cv(m.spec, cv_data, cfg.cv.k, cv_seed, opt); });
            auto j = metrics::to_json(rep);
            j["name"] = m.name;
            cv_j.push_back(j);
        }
        run.write_json("evaluation/cv.json", json{{"paper_order", cfg.cv.paper_order}, {"results", cv_j}});
    }

    json timing_j = nullptr;
    if (cfg.timing.enabled) {
        std::vector<ModelSpec> specs;
        for (const auto& m : cfg.models) specs.push_back(m.spec);
        auto rep = staged("timing", [&] { return metrics::timing_benchmark(specs, train, test, cfg.timing.repeats); });
        for (std::size_t i = 0; i < rep.models.size(); ++i) rep.models[i].kind = cfg.models[i].name;
        timing_j = metrics::to_json(rep);
        // Wall-clock numbers vary run to run; they stay out of report.json.
        run.write_json("evaluation/timing.json", timing_j);
        run.write("evaluation/timing_radar.csv", metrics::timing_radar_csv(rep));
    }
    run.finish(json{{"mode", {{"paper_order", cfg.cv.paper_order}}}});

    CommandResult res;
    res.summary = json{{"metrics", metrics_j}, {"cv", cv_j}, {"timing", timing_j}};
    res.table = render_table({"Model", "Split", "Accuracy", "Precision", "Recall", "F1", "Kappa"}, rows);
    if (cv_j.is_array()) {
        std::vector<std::vector<std::string>> cv_rows;
        for (const auto& c : cv_j)
            cv_rows.push_back({c["name"].get<std::string>(), fixed(c["mean"].get<double>()), fixed(c["std"].get<double>())});
        res.table += "\n" + render_table({"Model", "CV mean accuracy", "CV std"}, cv_rows);
    }
    return res;
}

inline CommandResult cmd_explain(const PipelineConfig& cfg) {
    Run run(cfg);
    run.begin("explain");
    const auto name = cfg.explain_model();
    if (name.empty()) throw ConfigError("explain needs a decision_tree or random_forest model in the config");
    const auto model = load_model(run, name);
    run.input("models/" + name + ".json");
    const auto train = run.checkpoint("train_final");
    const auto test = run.checkpoint("test");
    const auto bg_seed = derive_seed(cfg.seed, "stage/explain/background");
    const auto rows_seed = derive_seed(cfg.seed, "stage/explain/rows");
    const auto morris_seed = derive_seed(cfg.seed, "stage/explain/morris");
    run.seed("background", bg_seed);
    run.seed("rows", rows_seed);
    run.seed("morris", morris_seed);

    const auto background = explain::sample_background(train, cfg.explain.background_size, bg_seed);
    const auto rows = explain::sample_background(test, cfg.explain.explain_rows, rows_seed);
    const auto summary = staged("shap", [&] { return explain::shap_summary(model, rows, background); });
    run.write("explain/shap_summary.csv", explain::shap_summary_csv(summary));
    json classes = json::array();
    for (std::size_t c = 0; c < summary.mean_abs_phi.size(); ++c) {
        json feats = json::array();
        for (std::size_t f = 0; f < summary.feature_names.size(); ++f)
            feats.push_back(json{{"feature", summary.feature_names[f]},
                                 {"mean_abs_phi", summary.mean_abs_phi[c][f]},
                                 {"rank", summary.rank[c][f]}});
        classes.push_back(json{{"class", summary.class_names[c]}, {"features", feats}});
    }
    json local = json::array();
    for (const auto& e : summary.explanations) local.push_back(explain::to_json(e));
    const json shap_j{{"model", name},
                      {"background_rows", background.n_rows},
                      {"explained_rows", rows.n_rows},
                      {"per_class", classes}};
    run.write_json("explain/shap.json", shap_j);
    run.write_json("explain/shap_local.json", json{{"feature_names", summary.feature_names}, {"explanations", local}});

    auto design = explain::design_from_data(train, cfg.explain.morris_r, cfg.explain.morris_p, morris_seed);
    design.bootstrap_resamples = cfg.explain.morris_bootstrap;
    const auto morris = staged("morris", [&] { return explain::morris_per_class(model, design); });
    run.write("explain/morris.csv", explain::morris_csv(morris, train.class_names));
    json morris_j = json::array();
    for (std::size_t c = 0; c < morris.size(); ++c) {
        auto j = explain::to_json(morris[c]);
        j["class"] = train.class_names[c];
        morris_j.push_back(j);
    }
    run.write_json("explain/morris.json",
                   json{{"model", name}, {"trajectories", design.trajectories}, {"levels", design.levels},
                        {"per_class", morris_j}});
    run.finish();

    CommandResult res;
    res.summary = json{{"shap", shap_j}, {"morris", morris_j}};
    std::vector<std::vector<std::string>> trows;
    for (std::size_t c = 0; c < summary.mean_abs_phi.size(); ++c) {
        std::vector<std::size_t> order(summary.feature_names.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](auto a, auto b) { return summary.rank[c][a] < summary.rank[c][b]; });
        for (std::size_t i = 0; i < std::min<std::size_t>(3, order.size()); ++i) {
            const auto f = order[i];
            trows.push_back({summary.class_names[c], std::to_string(i + 1), summary.feature_names[f],
                             fixed(summary.mean_abs_phi[c][f], 6), fixed(morris[c].features[f].mu_star, 6)});
        }
    }
    res.table = render_table({"Class", "Rank", "Feature", "mean |SHAP|", "Morris mu*"}, trows);
    return res;
}

inline std::string table_v(const json& metrics) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& m : metrics.at("models"))
        for (const char* split : {"train", "test"}) {
            const auto& r = m.at(split);
            rows.push_back({m.at("name").get<std::string>(), split, fixed(r.at("accuracy").get<double>()),
                            fixed(r.at("precision_macro").get<double>()), fixed(r.at("recall_macro").get<double>()),
                            fixed(r.at("f1_macro").get<double>()), fixed(r.at("kappa").get<double>())});
        }
    return render_table({"Model", "Split", "Accuracy", "Precision", "Recall", "F1-score", "Kappa"}, rows);
}

inline CommandResult cmd_report(const PipelineConfig& cfg) {
    Run run(cfg);
    run.begin("report");
    const auto counts = run.read_json("preprocess/counts.json", "preprocess");
    const auto screen = run.read_json("preprocess/screen.json", "preprocess");
    const auto metrics = run.read_json("evaluation/metrics.json", "evaluate");
    const auto shap = run.read_json("explain/shap.json", "explain");
    const auto morris = run.read_json("explain/morris.json", "explain");
    for (const char* rel : {"preprocess/counts.json", "preprocess/screen.json", "evaluation/metrics.json",
                            "explain/shap.json", "explain/morris.json"})
        run.input(rel);
    json cv = nullptr;
    if (fs::exists(run.path("evaluation/cv.json"))) {
        cv = run.read_json("evaluation/cv.json", "evaluate");
        run.input("evaluation/cv.json");
    }

    // Kept features ordered by rank.
    json top = json::array();
    {
        std::vector<json> kept;
        for (const auto& f : screen)
            if (f.at("kept").get<bool>() && !f.at("rank").is_null()) kept.push_back(f);
        std::sort(kept.begin(), kept.end(),
                  [](const json& a, const json& b) { return a.at("rank").get<int>() < b.at("rank").get<int>(); });
        for (const auto& f : kept)
            top.push_back(json{{"rank", f.at("rank")}, {"feature", f.at("name")}, {"r", f.at("r")}, {"p_adj", f.at("p_adj")}});
    }

    // Tree view: the explained model when it is a single tree, else the first tree.
    json tree_j = nullptr;
    std::string tree_name;
    const auto explained = shap.at("model").get<std::string>();
    if (cfg.model(explained).spec.kind == "decision_tree") tree_name = explained;
    else
        for (const auto& m : cfg.models)
            if (m.spec.kind == "decision_tree") {
                tree_name = m.name;
                break;
            }
    if (!tree_name.empty()) {
        const auto model = load_model(run, tree_name);
        run.input("models/" + tree_name + ".json");
        const auto rendering = trees::export_tree(std::get<trees::TreeModel>(model), 4);
        run.write("tree.dot", rendering.dot);
        run.write("tree.txt", rendering.text);
        tree_j = json{{"model", tree_name}, {"max_depth", 4}, {"dot_file", "tree.dot"}, {"text", rendering.text}};
    }

    json report{{"format", "xtree-report"},
                {"version", kReportVersion},
                {"tool_version", kToolVersion},
                {"seed", cfg.seed},
                {"mode", {{"strict_no_leak", cfg.preprocessing.strict_no_leak}, {"paper_order", cfg.cv.paper_order}}},
                {"dataset", counts},
                {"screening", {{"features", screen}, {"top_features", top}}},
                {"metrics", metrics},
                {"cv", cv},
                {"explain", {{"shap", shap}, {"morris", morris}}},
                {"tree_export", tree_j}};
    run.write_json("report.json", report);
    run.finish();

    CommandResult res;
    res.summary = report;
    res.table = table_v(metrics);
    return res;
}

/// Writes the CSV and `<csv>.truth.json` next to it.
inline CommandResult cmd_synth(const synth::SynthSpec& spec, const fs::path& csv_path) {
    const auto out = synth::generate(spec);
    write_file(csv_path, out.csv);
    const fs::path truth_path(csv_path.string() + ".truth.json");
    write_file(truth_path, out.truth.dump(2) + "\n");
    CommandResult res;
    res.summary = json{{"csv", csv_path.generic_string()},
                       {"truth", truth_path.generic_string()},
                       {"checksum", file_checksum(csv_path)},
                       {"class_counts", out.truth.at("class_counts")}};
    std::vector<std::vector<std::string>> rows;
    for (std::size_t c = 0; c < spec.n_classes(); ++c)
        rows.push_back({spec.class_names[c], std::to_string(out.class_counts[c])});
    res.table = render_table({"Class", "Rows"}, rows) + "written " + csv_path.string() + "\n";
    return res;
}

/// preprocess, train, evaluate, explain and report in sequence.
inline CommandResult cmd_run(const PipelineConfig& cfg) {
    CommandResult all;
    all.summary = json::object();
    for (const auto& [name, fn] : std::vector<std::pair<std::string, CommandResult (*)(const PipelineConfig&)>>{
             {"preprocess", cmd_preprocess},
             {"train", cmd_train},
             {"evaluate", cmd_evaluate},
             {"explain", cmd_explain},
             {"report", cmd_report}}) {
        auto r = fn(cfg);
        all.table += "== " + name + "\n" + r.table + "\n";
        if (name != "report") all.summary[name] = std::move(r.summary);
    }
    all.summary["report"] = (cfg.output_dir / "report.json").generic_string();
    return all;
}

}  // namespace xtree::pipeline
