// Acceptance checks, one line per criterion. Tolerances are pinned here.
//
// Criteria 1-4 need the WUSTL-EHMS-2020 CSV, which is not redistributed:
//   XTREE_WUSTL_CSV=<csv> XTREE_WUSTL_CONFIG=<pipeline config> xtree_acceptance
// Without both variables they are reported as SKIP.
//
// Exit status is nonzero when any criterion fails, except criteria listed in
// kKnownUnattainable (analysed in the README); those still print FAIL.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <set>
#include <sstream>

#include "helpers.hpp"
#include "oracles.hpp"
#include "xtree/pipeline.hpp"

using namespace xtree;
namespace fs = std::filesystem;

namespace {

const std::set<int> kKnownUnattainable{9};

enum class Verdict { pass, fail, skip };

struct Outcome {
    Verdict verdict;
    std::string detail;
};

Outcome check(bool ok, const std::string& detail) { return {ok ? Verdict::pass : Verdict::fail, detail}; }

std::string num(double v, int prec = 6) {
    std::ostringstream s;
    s.precision(prec);
    s << v;
    return s.str();
}

// ---------------------------------------------------------------------------
// dataset-conditional tier

struct Wustl {
    fs::path csv, config;
};

std::optional<Wustl> wustl() {
    const char* csv = std::getenv("XTREE_WUSTL_CSV");
    const char* cfg = std::getenv("XTREE_WUSTL_CONFIG");
    if (!csv || !cfg) return std::nullopt;
    return Wustl{csv, cfg};
}

pipeline::PipelineConfig wustl_config(const Wustl& w, std::uint64_t seed, const std::string& tag) {
    auto cfg = pipeline::load_config(w.config);
    cfg.dataset_path = w.csv;
    cfg.seed = seed;
    cfg.reseed_models();
    cfg.cv.paper_order = true;
    cfg.output_dir = fs::path(XTREE_TEST_TMP) / "acceptance" / ("wustl_" + tag + "_" + std::to_string(seed));
    return cfg;
}

std::string first_tree(const pipeline::PipelineConfig& cfg) {
    for (const auto& m : cfg.models)
        if (m.spec.kind == "decision_tree") return m.name;
    throw ConfigError("the WUSTL config needs a decision_tree model");
}

Outcome criterion1(const Wustl& w) {
    std::string detail;
    bool ok = true;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto t0 = std::chrono::steady_clock::now();
        auto cfg = wustl_config(w, seed, "c1");
        const auto name = first_tree(cfg);
        cfg.models = {cfg.model(name)};
        pipeline::cmd_preprocess(cfg);
        pipeline::cmd_train(cfg);
        pipeline::Run run(cfg);
        const auto model = pipeline::load_model(run, name);
        const auto rep = metrics::evaluate(model, run.checkpoint("test"), "test");
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        ok = ok && rep.metrics.accuracy >= 0.985 && rep.kappa.value >= 0.97 && secs <= 300.0;
        detail += "seed " + std::to_string(seed) + ": acc " + num(rep.metrics.accuracy, 5) + " kappa " +
                  num(rep.kappa.value, 5) + " (" + num(secs, 3) + "s); ";
    }
    return check(ok, detail + "need acc >= 0.985, kappa >= 0.97, <= 300s");
}

Outcome criterion2(const Wustl& w) {
    auto cfg = wustl_config(w, 0, "c2");
    const auto name = first_tree(cfg);
    cfg.models = {cfg.model(name)};
    pipeline::cmd_preprocess(cfg);
    pipeline::Run run(cfg);
    metrics::CvOptions opt;
    opt.resample_in_fold = false;  // --paper-order: folds of the balanced, noisy training set
    const auto rep = metrics::kfold_cv(cfg.model(name).spec, run.checkpoint("train_final"), 5,
                                       derive_seed(cfg.seed, "stage/cv"), opt);
    return check(rep.mean >= 0.98 && rep.std <= 0.01,
                 "mean " + num(rep.mean, 5) + " std " + num(rep.std, 5) + " (need >= 0.98, <= 0.01)");
}

Outcome criterion3(const Wustl& w) {
    auto cfg = wustl_config(w, 0, "c3");
    const auto name = first_tree(cfg);
    cfg.models = {cfg.model(name)};
    cfg.explain.model = name;
    pipeline::cmd_preprocess(cfg);
    pipeline::cmd_train(cfg);
    pipeline::cmd_explain(cfg);
    const auto shap = json::parse(read_file(cfg.output_dir / "explain/shap.json"));
    std::string detail = "SrcMac rank per class:";
    bool ok = false;
    for (const auto& c : shap["per_class"]) {
        int rank = -1;
        for (const auto& f : c["features"])
            if (f["feature"] == "SrcMac") rank = f["rank"].get<int>();
        detail += " " + c["class"].get<std::string>() + "=" + (rank < 0 ? "absent" : std::to_string(rank));
        ok = ok || (rank >= 1 && rank <= 3);
    }
    return check(ok, detail + " (need top 3 for one class)");
}

Outcome criterion4(const Wustl& w) {
    auto cfg = wustl_config(w, 0, "c4");
    pipeline::cmd_preprocess(cfg);
    pipeline::Run run(cfg);
    const auto train = run.checkpoint("train_final");
    const auto test = run.checkpoint("test");
    const auto rep = metrics::timing_benchmark(
        {default_model_spec("decision_tree"), default_model_spec("random_forest"), default_model_spec("knn")}, train,
        test, 3);
    const auto& dt = rep.models[0];
    const auto& rf = rep.models[1];
    const auto& knn = rep.models[2];
    return check(knn.infer_seconds > dt.infer_seconds && rf.train_seconds > dt.train_seconds,
                 "infer knn " + num(knn.infer_seconds) + "s vs tree " + num(dt.infer_seconds) + "s; train forest " +
                     num(rf.train_seconds) + "s vs tree " + num(dt.train_seconds) + "s");
}

// ---------------------------------------------------------------------------
// always-runnable tier

Outcome criterion5() {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(derive_seed(seed, "acceptance/shap"));
        const std::size_t d = 1 + rng.below(8);
        const std::size_t C = 2 + rng.below(2);
        const auto X = testing_xtree::random_matrix(80, d, C, seed, [C](const std::vector<double>& x, Rng& r) {
            return x[0] - 0.5 * x.back() + 0.4 * r.normal() > 0 ? int(C - 1) : int(r.below(C));
        });
        trees::TreeParams p;
        p.max_depth = 1 + int(rng.below(4));
        p.min_samples_split = 2;
        const auto tree = trees::fit_cart(X, p);
        const auto bg = explain::sample_background(X, 1 + rng.below(16), seed);
        const auto row = X.row(rng.below(X.n_rows));
        const auto fast = explain::tree_shap(tree, row, bg);
        const auto slow = explain::brute_force_shapley(AnyModel{tree}, row, bg);
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t j = 0; j < d; ++j) worst = std::max(worst, std::abs(fast.phi[c][j] - slow.phi[c][j]));
    }
    // local accuracy on 1,000 explanations of a forest
    const auto X = testing_xtree::random_matrix(1000, 6, 3, 99, [](const std::vector<double>& x, Rng& r) {
        return x[0] + x[1] * x[2] + 0.3 * r.normal() > 0.3 ? 2 : x[3] > 0 ? 1 : 0;
    });
    trees::ForestParams fp;
    fp.n_trees = 10;
    fp.tree.max_depth = 6;
    fp.seed = 3;
    const auto forest = trees::fit_random_forest(X, fp);
    const auto bg = explain::sample_background(X, 50, 4);
    std::vector<double> err(X.n_rows);
    parallel_for(X.n_rows, [&](std::size_t r) { err[r] = explain::tree_shap(forest, X.row(r), bg).local_accuracy_error(); });
    const double worst_local = *std::max_element(err.begin(), err.end());
    return check(worst < 1e-9 && worst_local <= 1e-9, "max |tree_shap - brute force| " + num(worst, 3) +
                                                           " over 50 cases; max local-accuracy error " +
                                                           num(worst_local, 3) + " over 1000 rows");
}

Outcome criterion6() {
    explain::MorrisDesign d;
    d.lower.assign(4, 0.0);
    d.upper.assign(4, 1.0);
    d.seed = 2024;
    auto f = [](std::span<const double> x) { return 3 * x[0] - 2 * x[1] + 0 * x[2] + 0 * x[3]; };
    const auto a = explain::morris_screening(f, d);
    const auto b = explain::morris_screening(f, d);
    const double want[4] = {3, 2, 0, 0};
    double worst = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
        worst = std::max(worst, std::abs(a.features[i].mu_star - want[i]));
        worst = std::max(worst, a.features[i].sigma);
    }
    const bool same = explain::to_json(a) == explain::to_json(b);
    return check(worst < 1e-10 && same,
                 "max deviation " + num(worst, 3) + " (< 1e-10); rerun identical: " + (same ? "yes" : "no"));
}

Outcome criterion7() {
    const double c = stats::chi2_sf(3.841, 1);
    double exp_err = 0.0;
    for (double x = 0.0; x <= 50.0; x += 0.5) exp_err = std::max(exp_err, std::abs(stats::chi2_sf(x, 2) - std::exp(-x / 2)));
    const double p = stats::pearson_p(0.5, 20), po = oracle::pearson_p(0.5, 20);
    double rel = 0.0;
    Rng rng(derive_seed(7, "acceptance/special"));
    auto rel_err = [](double got, double want) { return std::abs(got - want) / std::max(std::abs(want), 1e-300); };
    for (int i = 0; i < 100; ++i) {
        switch (i % 3) {
            case 0: {
                const double s = 0.5 + rng.uniform() * 40, x = rng.uniform() * (3 * s + 10);
                const auto o = oracle::regularized_gamma(s, x);
                rel = std::max({rel, rel_err(stats::regularized_gamma_p(s, x), o.p),
                                rel_err(stats::regularized_gamma_q(s, x), o.q)});
                break;
            }
            case 1: {
                const double a = 0.5 + rng.uniform() * 20, b = 0.5 + rng.uniform() * 20;
                const double x = 0.001 + rng.uniform() * 0.998;
                rel = std::max(rel, rel_err(stats::regularized_beta(a, b, x), oracle::regularized_beta(a, b, x).lower));
                break;
            }
            default: {
                const double r = rng.uniform() * 1.9 - 0.95;
                const std::size_t n = 3 + rng.below(200);
                rel = std::max(rel, rel_err(stats::pearson_p(r, n), oracle::pearson_p(r, n)));
            }
        }
    }
    return check(std::abs(c - 0.05) <= 5e-4 && exp_err <= 1e-8 && std::abs(p - po) <= 1e-3 && rel <= 1e-8,
                 "chi2_sf(3.841,1)=" + num(c, 6) + "; max |chi2_sf(x,2)-exp(-x/2)| " + num(exp_err, 3) +
                     "; pearson_p(0.5,20)=" + num(p, 6) + " oracle " + num(po, 6) + "; max rel err " + num(rel, 3));
}

Outcome criterion8() {
    const double k = metrics::cohen_kappa({{50, 10}, {5, 35}}).value;
    double worst = 0.0;
    Rng rng(derive_seed(8, "acceptance/roc"));
    for (int t = 0; t < 200; ++t) {
        const std::size_t n = 2 + rng.below(49);
        std::vector<int> y(n);
        std::vector<double> s(n);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = int(rng.below(3));
            s[i] = t % 2 ? rng.uniform() : double(rng.below(6)) / 6.0;
        }
        y[0] = 1;
        y[1] = 2;
        worst = std::max(worst, std::abs(metrics::roc_curve_ovr(y, s, 1).auc - oracle::pairwise_auc(y, s, 1)));
    }
    return check(std::abs(k - 0.6939) <= 1e-4 && worst <= 1e-12,
                 "kappa " + num(k, 6) + "; max |AUC - pairwise| " + num(worst, 3) + " over 200 cases");
}

Outcome criterion9() {
    // class order 0/1/2 = Data Alteration / Spoofing / Normal
    const std::vector<std::size_t> full{922, 1124, 14272};
    const std::vector<std::size_t> target_train{735, 895, 11424};
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < full[c]; ++i) {
            rows.push_back({double(i)});
            labels.push_back(int(c));
        }
    const auto X = testing_xtree::make_matrix(rows, labels, 3);
    const auto split = stratified_split(X, 0.8, 1);
    const auto train = split.train.class_counts();
    const auto balanced = prep::random_oversample(split.train, 2);
    // the balanced total on its own: oversample the target train counts
    std::vector<std::vector<double>> prow;
    std::vector<int> plab;
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < target_train[c]; ++i) {
            prow.push_back({double(i)});
            plab.push_back(int(c));
        }
    const auto target_balanced = prep::random_oversample(testing_xtree::make_matrix(prow, plab, 3), 3);
    const bool split_ok = train == target_train;
    const bool balanced_ok = balanced.n_rows == 34272;
    const bool target_balanced_ok = target_balanced.n_rows == 34272 && target_balanced.class_counts() == std::vector<std::size_t>(3, 11424);
    auto fmt = [](const std::vector<std::size_t>& v) {
        return std::to_string(v[2]) + "/" + std::to_string(v[1]) + "/" + std::to_string(v[0]);
    };
    return check(split_ok && balanced_ok && target_balanced_ok,
                 "train " + fmt(train) + " vs target 11424/895/735; balanced total " + std::to_string(balanced.n_rows) +
                     " vs 34272; oversampling the target train counts gives " + std::to_string(target_balanced.n_rows) +
                     (target_balanced_ok ? " (ok)" : " (mismatch)"));
}

Outcome criterion10() {
    const auto X = testing_xtree::make_matrix({{0.5, -1.2, 0.3}, {1.1, 0.4, -0.7}, {-0.3, 0.8, 1.5}, {0.9, -0.2, -1.1}},
                                              {0, 2, 1, 2});
    auto w = shallow::init_weights(3, 8, 3, 5);
    const std::vector<std::size_t> batch{0, 1, 2, 3};
    const double alpha = 1e-3;
    auto analytic = shallow::mlp_loss_and_gradient(w, X, batch, alpha).grad;
    const auto g = analytic.parameters();
    const auto p = w.parameters();
    double worst = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double fd = oracle::central_difference(
            [&] { return shallow::mlp_loss_and_gradient(w, X, batch, alpha).loss; }, *p[i], 1e-5);
        worst = std::max(worst, std::abs(fd - *g[i]) / std::max({std::abs(fd), std::abs(*g[i]), 1e-6}));
    }
    return check(worst < 1e-4, "max relative error " + num(worst, 3) + " over " + std::to_string(p.size()) +
                                   " parameters (< 1e-4)");
}

Outcome criterion11() {
    const auto dir = testing_xtree::tmp_dir("acceptance/planted");
    synth::SynthSpec s;
    s.n_rows = 1500;
    s.n_features = 5;
    s.class_names = {"benign", "attack"};
    s.priors = {0.5, 0.5};
    s.rules = {{0, 0.0, 1, 1.0}};  // f0 > 0 -> class 1
    s.seed = 21;
    pipeline::cmd_synth(s, dir / "planted.csv");
    const json cfg_j{{"config_version", 1},
                     {"dataset",
                      {{"path", "planted.csv"},
                       {"schema",
                        {{"feature_names", s.feature_names()},
                         {"label_column", "Label"},
                         {"class_names", s.class_names}}}}},
                     {"seed", 13},
                     {"models", {{{"kind", "decision_tree"}}}},
                     {"explain", {{"background_size", 60}, {"explain_rows", 100}, {"morris", {{"r", 16}, {"p", 4}}}}},
                     {"cv", {{"k", 5}}},
                     {"timing", {{"enabled", false}}},
                     {"output_dir", "run"}};
    const auto cfg = pipeline::parse_config(cfg_j, dir);
    pipeline::cmd_run(cfg);
    const auto first = read_file(cfg.output_dir / "report.json");
    pipeline::cmd_run(cfg);
    const bool identical = read_file(cfg.output_dir / "report.json") == first;

    const auto report = json::parse(first);
    const double acc = report["metrics"]["models"][0]["test"]["accuracy"].get<double>();
    bool shap_first = true;
    for (const auto& c : report["explain"]["shap"]["per_class"])
        for (const auto& f : c["features"])
            if (f["feature"] == "f0") shap_first = shap_first && f["rank"] == 1;
    bool morris_first = true;
    for (const auto& c : report["explain"]["morris"]["per_class"]) {
        double f0 = -1, other = 0;
        for (const auto& f : c["features"])
            (f["feature"] == "f0" ? f0 : other) = std::max(f["feature"] == "f0" ? f0 : other, f["mu_star"].get<double>());
        morris_first = morris_first && f0 > other;
    }
    return check(acc == 1.0 && shap_first && morris_first && identical,
                 "tree test accuracy " + num(acc, 6) + "; f0 first in SHAP: " + (shap_first ? "yes" : "no") +
                     ", in Morris: " + (morris_first ? "yes" : "no") +
                     "; rerun byte-identical: " + (identical ? "yes" : "no"));
}

Outcome criterion12() {
    const auto X = testing_xtree::random_matrix(10000, 4, 2, 12);
    auto scaled = X;
    for (std::size_t r = 0; r < X.n_rows; ++r)
        for (std::size_t c = 0; c < 4; ++c) scaled.at(r, c) = X.at(r, c) * double(c + 1) * 3.0 + double(c);
    const auto noisy = prep::gaussian_noise(scaled, 0.15, 99);
    double worst = 0.0;
    for (std::size_t c = 0; c < 4; ++c) {
        std::vector<double> diff(X.n_rows);
        for (std::size_t r = 0; r < X.n_rows; ++r) diff[r] = noisy.at(r, c) - scaled.at(r, c);
        const double target = 0.15 * prep::population_std(scaled.column(c));
        worst = std::max(worst, std::abs(prep::population_std(diff) / target - 1.0));
    }
    return check(worst <= 0.05, "max relative deviation of noise std from 0.15*sigma: " + num(worst, 4) + " (<= 0.05)");
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        std::function<Outcome()> run;
        bool needs_dataset;
    };
    const auto data = wustl();
    std::vector<Criterion> all{
        {1, "decision tree accuracy/kappa over 5 seeds", [&] { return criterion1(*data); }, true},
        {2, "5-fold CV mean and std", [&] { return criterion2(*data); }, true},
        {3, "SrcMac in SHAP top 3", [&] { return criterion3(*data); }, true},
        {4, "timing ordering", [&] { return criterion4(*data); }, true},
        {5, "TreeSHAP equals brute-force Shapley", criterion5, false},
        {6, "Morris linear recovery", criterion6, false},
        {7, "statistical kernels", criterion7, false},
        {8, "metric oracles", criterion8, false},
        {9, "split and balanced counts", criterion9, false},
        {10, "MLP gradient check", criterion10, false},
        {11, "planted-signal end to end", criterion11, false},
        {12, "noise calibration", criterion12, false},
    };
    int failed = 0, unexpected = 0, skipped = 0;
    std::vector<int> known;
    for (const auto& c : all) {
        Outcome o;
        if (c.needs_dataset && !data) {
            o = {Verdict::skip, "set XTREE_WUSTL_CSV and XTREE_WUSTL_CONFIG to run"};
        } else {
            try {
                o = c.run();
            } catch (const std::exception& e) {
                o = {Verdict::fail, std::string("error: ") + e.what()};
            }
        }
        const char* tag = o.verdict == Verdict::pass ? "PASS" : o.verdict == Verdict::fail ? "FAIL" : "SKIP";
        std::cout << "[" << tag << "] criterion " << c.id << ": " << c.name << " -- " << o.detail << std::endl;
        if (o.verdict == Verdict::skip) ++skipped;
        if (o.verdict == Verdict::fail) {
            ++failed;
            if (kKnownUnattainable.count(c.id))
                known.push_back(c.id);
            else
                ++unexpected;
        }
    }
    std::cout << "summary: " << (int(all.size()) - failed - skipped) << " passed, " << failed << " failed, " << skipped
              << " skipped";
    if (!known.empty()) {
        std::cout << "; known unattainable:";
        for (int id : known) std::cout << " " << id;
    }
    std::cout << std::endl;
    return unexpected ? 1 : 0;
}
