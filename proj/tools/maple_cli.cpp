// Command-line front end: synthetic data generation, training, evaluation,
// ablation rows and hyperparameter sweeps.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "maple/config.hpp"
#include "maple/errors.hpp"
#include "maple/pipeline.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "key=value config file");
    cmd->add_option("--seed", flags.seed, "override the config seed");
    cmd->add_option("--out", flags.out, "override the output directory");
}

maple::RunConfig resolve_config(const CommonFlags& flags,
                                const std::vector<std::string>& overrides) {
    maple::RunConfig cfg;
    if (!flags.config_path.empty()) cfg = maple::load_config(flags.config_path);
    for (const auto& kv : overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw maple::ConfigError("--set expects key=value, got '" + kv + "'");
        maple::apply_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (flags.seed.has_value()) cfg.train.seed = *flags.seed;
    if (flags.out.has_value()) cfg.out_dir = *flags.out;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MAPLE: Mahalanobis-distance uncertainty prediction pipeline"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset from a mixture spec");
    std::string gen_spec, gen_out;
    bool gen_text = false;
    gen->add_option("--spec", gen_spec, "mixture spec (JSON)")->required();
    gen->add_option("--out", gen_out, "output dataset path")->required();
    gen->add_flag("--text", gen_text, "write the text variant instead of binary");

    // train / eval / ablate / sweep share config handling
    CommonFlags train_flags, eval_flags, ablate_flags, sweep_flags;
    std::vector<std::string> train_set, eval_set, ablate_set, sweep_set;

    auto* train = app.add_subcommand("train", "run the training loop and fit the inference head");
    add_common(train, train_flags);
    train->add_option("--set", train_set, "override a config key (key=value)");

    auto* eval = app.add_subcommand("eval", "evaluate checkpoints on the test and OOD sets");
    add_common(eval, eval_flags);
    eval->add_option("--set", eval_set, "override a config key (key=value)");

    auto* ablate = app.add_subcommand("ablate", "run the six ablation rows with a shared seed");
    add_common(ablate, ablate_flags);
    ablate->add_option("--set", ablate_set, "override a config key (key=value)");

    auto* sweep = app.add_subcommand("sweep", "sweep t, p or max_clusters");
    add_common(sweep, sweep_flags);
    sweep->add_option("--set", sweep_set, "override a config key (key=value)");
    std::string sweep_param;
    std::vector<double> sweep_values;
    sweep->add_option("--param", sweep_param, "one of: t, p, max_clusters")->required();
    sweep->add_option("--values", sweep_values, "values to sweep")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) {
            maple::cmd_gen(gen_spec, gen_out,
                           gen_text ? maple::DatasetFormat::text
                                    : maple::DatasetFormat::binary);
            std::cout << "wrote " << gen_out << "\n";
        } else if (train->parsed()) {
            auto cfg = resolve_config(train_flags, train_set);
            auto out = maple::cmd_train(cfg);
            std::cout << "trained " << out.result.log.size() << " epochs, K="
                      << out.result.state.K() << ", artifacts in " << out.dir.string()
                      << "\n";
            for (const auto& w : out.result.warnings) std::cerr << "warning: " << w << "\n";
        } else if (eval->parsed()) {
            auto cfg = resolve_config(eval_flags, eval_set);
            auto report = maple::cmd_eval(cfg);
            std::cout << maple::render_report(report);
        } else if (ablate->parsed()) {
            auto cfg = resolve_config(ablate_flags, ablate_set);
            auto result = maple::cmd_ablate(cfg);
            std::cout << result.table;
        } else if (sweep->parsed()) {
            auto cfg = resolve_config(sweep_flags, sweep_set);
            auto result = maple::cmd_sweep(cfg, sweep_param, sweep_values);
            std::cout << result.table;
        }
    } catch (const maple::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const maple::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const maple::NumericalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
