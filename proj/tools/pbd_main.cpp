#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pbd/corpus.hpp"
#include "pbd/error.hpp"
#include "pbd/evaluator.hpp"
#include "pbd/pipeline.hpp"
#include "pbd/prompting.hpp"
#include "pbd/synthetic.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct CommonArgs {
    std::string config_path;
    std::string run_dir;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs* args) {
    cmd->add_option("--config", args->config_path, "Run configuration JSON")->required();
    cmd->add_option("--run-dir", args->run_dir, "Run directory for artifacts")->required();
    cmd->add_option("--set", args->overrides,
                    "Override a config value by dotted path, e.g. --set model.epochs=30");
}

void print_report(const pbd::EvalReport& r) {
    std::printf("c_acc    %.4f\n", r.clean_acc);
    std::printf("asr      %.4f\n", r.asr);
    std::printf("avg_ftr  %.4f\n", r.avg_ftr_top3);
    for (const auto& [signal, ftr] : r.ftr_by_signal)
        std::printf("ftr      %.4f  %s\n", ftr, signal.c_str());
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Clean-label backdoor toolkit for prompt-based text classifiers"};
    app.require_subcommand(1);

    CommonArgs select_args, search_args, poison_args, train_args, eval_args, run_args, sweep_args;
    std::vector<double> sweep_alphas;

    add_common(app.add_subcommand("select", "Score and pick the poison pool"), &select_args);
    add_common(app.add_subcommand("search-trigger", "Search or record the trigger prompt"),
               &search_args);
    add_common(app.add_subcommand("poison", "Build the poisoned training set"), &poison_args);
    add_common(app.add_subcommand("train", "Train the victim on the poisoned set"), &train_args);
    add_common(app.add_subcommand("evaluate", "Compute C-Acc, ASR and FTRs"), &eval_args);
    add_common(app.add_subcommand("run", "All stages in order"), &run_args);
    CLI::App* sweep = app.add_subcommand("sweep", "One full run per poisoning rate");
    add_common(sweep, &sweep_args);
    sweep->add_option("--alphas", sweep_alphas, "Poisoning rates to sweep")
        ->required()
        ->delimiter(',');

    CLI::App* synth = app.add_subcommand("synth", "Write the bundled synthetic benchmark");
    std::string synth_dir;
    pbd::SyntheticConfig synth_cfg;
    synth->add_option("--out", synth_dir, "Output directory")->required();
    synth->add_option("--train-size", synth_cfg.train_size, "Training examples");
    synth->add_option("--test-size", synth_cfg.test_size, "Test examples");
    synth->add_option("--seed", synth_cfg.seed, "Generator seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (synth->parsed()) {
            pbd::SyntheticBenchmark b = pbd::make_synthetic_benchmark(synth_cfg);
            std::filesystem::create_directories(synth_dir);
            std::filesystem::path dir(synth_dir);
            pbd::save_jsonl(b.train, dir / "train.jsonl");
            pbd::save_jsonl(b.test, dir / "test.jsonl");
            std::ofstream prompt(dir / "prompt.json");
            prompt << pbd::prompt_config_to_json(b.prompt).dump(2) << '\n';
            std::printf("wrote %zu train / %zu test examples to %s\n", b.train.size(),
                        b.test.size(), synth_dir.c_str());
            return kExitOk;
        }

        auto config_of = [](const CommonArgs& a) {
            return pbd::RunConfig::load(a.config_path, a.overrides);
        };

        if (app.got_subcommand("select")) {
            pbd::stage_select(config_of(select_args), select_args.run_dir);
        } else if (app.got_subcommand("search-trigger")) {
            pbd::stage_search_trigger(config_of(search_args), search_args.run_dir);
        } else if (app.got_subcommand("poison")) {
            pbd::stage_poison(config_of(poison_args), poison_args.run_dir);
        } else if (app.got_subcommand("train")) {
            pbd::stage_train(config_of(train_args), train_args.run_dir);
        } else if (app.got_subcommand("evaluate")) {
            print_report(pbd::stage_evaluate(config_of(eval_args), eval_args.run_dir));
        } else if (app.got_subcommand("run")) {
            print_report(pbd::run_pipeline(config_of(run_args), run_args.run_dir));
        } else if (app.got_subcommand("sweep")) {
            std::vector<pbd::SweepRow> rows =
                pbd::run_sweep(config_of(sweep_args), sweep_alphas, sweep_args.run_dir);
            std::printf("%zu sweep rows in %s/sweep.csv\n", rows.size(),
                        sweep_args.run_dir.c_str());
        }
        return kExitOk;
    } catch (const pbd::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const pbd::StageError& e) {
        std::cerr << e.what() << '\n';
        return kExitStage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitStage;
    }
}
