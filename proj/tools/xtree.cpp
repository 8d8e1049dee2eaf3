// xtree command-line front end.
//
//   xtree <preprocess|train|evaluate|explain|report|run> --config cfg.json
//   xtree synth --config synth.json [--output data.csv]
//
// Exit status: 0 ok, 1 usage/config, 2 data, 3 numerical.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "xtree/pipeline.hpp"

namespace {

struct Options {
    std::string config;
    std::string output_dir;
    std::uint64_t seed = 0;
    bool strict_no_leak = false;
    bool paper_order = false;
    std::string format = "json";
    std::string synth_output;
};

void emit(const xtree::pipeline::CommandResult& r, const std::string& format) {
    if (format == "table") std::cout << r.table;
    else std::cout << r.summary.dump(2) << "\n";
}

int exit_code(const std::exception& e) {
    if (dynamic_cast<const xtree::DataError*>(&e)) return 2;
    if (dynamic_cast<const xtree::NumericalError*>(&e)) return 3;
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    namespace pl = xtree::pipeline;
    CLI::App app{"xtree: explainable tree-based intrusion detection pipeline"};
    app.set_version_flag("--version", std::string(pl::kToolVersion));
    app.require_subcommand(1);
    Options opt;

    auto add_common = [&](CLI::App* sub, bool pipeline) {
        sub->add_option("--config", opt.config, "JSON config file")->required()->check(CLI::ExistingFile);
        sub->add_option("--format", opt.format, "summary format")->check(CLI::IsMember({"json", "table"}));
        if (!pipeline) return;
        sub->add_option("--output-dir", opt.output_dir, "override output_dir from the config");
        sub->add_option("--seed", opt.seed, "override the master seed");
        sub->add_flag("--strict-no-leak", opt.strict_no_leak, "fit every transform on the training split only");
        sub->add_flag("--paper-order", opt.paper_order, "cross-validate on the balanced, noisy training set");
    };

    using Command = pl::CommandResult (*)(const pl::PipelineConfig&);
    const std::vector<std::tuple<std::string, std::string, Command>> commands{
        {"preprocess", "dedup, impute, scale, screen, split, oversample and add noise", pl::cmd_preprocess},
        {"train", "fit every configured model on the final training checkpoint", pl::cmd_train},
        {"evaluate", "train/test metrics, cross-validation and timing", pl::cmd_evaluate},
        {"explain", "TreeSHAP summary and Morris screening", pl::cmd_explain},
        {"report", "bundle all results into report.json", pl::cmd_report},
        {"run", "preprocess through report in one go", pl::cmd_run},
    };
    for (const auto& [name, help, fn] : commands) add_common(app.add_subcommand(name, help), true);
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset with planted rules");
    add_common(synth, false);
    synth->add_option("--output", opt.synth_output, "CSV path (default: the config's 'output' key)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (synth->parsed()) {
            const auto j = xtree::json::parse(xtree::read_file(opt.config));
            auto doc = j;
            std::string out = opt.synth_output;
            if (doc.contains("output")) {
                if (out.empty())
                    out = pl::detail::resolve(std::filesystem::path(opt.config).parent_path(),
                                              doc.at("output").get<std::string>())
                              .string();
                doc.erase("output");
            }
            if (out.empty()) throw xtree::ConfigError("synth needs --output or an 'output' key in the config");
            emit(pl::cmd_synth(xtree::synth::synth_spec_from_json(doc), out), opt.format);
            return 0;
        }
        auto cfg = pl::load_config(opt.config);
        for (const auto& [name, help, fn] : commands) {
            auto* sub = app.get_subcommand(name);
            if (!sub->parsed()) continue;
            if (sub->count("--seed")) {
                cfg.seed = opt.seed;
                cfg.reseed_models();
            }
            if (!opt.output_dir.empty()) cfg.output_dir = opt.output_dir;
            if (opt.strict_no_leak) cfg.preprocessing.strict_no_leak = true;
            if (opt.paper_order) cfg.cv.paper_order = true;
            emit(fn(cfg), opt.format);
        }
        return 0;
    } catch (const xtree::json::exception& e) {
        std::cerr << "xtree: invalid JSON: " << e.what() << "\n";
        return 1;
    } catch (const xtree::Error& e) {
        std::cerr << "xtree: " << e.what() << "\n";
        return exit_code(e);
    } catch (const std::exception& e) {
        std::cerr << "xtree: " << e.what() << "\n";
        return 1;
    }
}
