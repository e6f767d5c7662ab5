#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pbd/corpus.hpp"
#include "pbd/error.hpp"
#include "pbd/evaluator.hpp"
#include "pbd/nds.hpp"
#include "pbd/pipeline.hpp"
#include "pbd/prompting.hpp"
#include "pbd/rng.hpp"
#include "pbd/synthetic.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;

namespace {

py::dict report_to_dict(const pbd::EvalReport& r) {
    py::dict d;
    d["c_acc"] = r.clean_acc;
    d["asr"] = r.asr;
    d["avg_ftr"] = r.avg_ftr_top3;
    py::dict ftrs;
    for (const auto& [signal, ftr] : r.ftr_by_signal) ftrs[py::str(signal)] = ftr;
    d["ftr_by_signal"] = ftrs;
    d["config_fingerprint"] = r.config_fingerprint;
    return d;
}

py::dict row_to_dict(const pbd::SweepRow& r) {
    py::dict d;
    d["run_id"] = r.run_id;
    d["alpha"] = r.alpha;
    d["eta"] = r.eta;
    d["asr"] = r.asr;
    d["c_acc"] = r.c_acc;
    d["avg_ftr"] = r.avg_ftr;
    d["seed"] = r.seed;
    return d;
}

pbd::RunConfig load_config(const fs::path& config, const std::vector<std::string>& overrides) {
    return pbd::RunConfig::load(config, overrides);
}

} // namespace

PYBIND11_MODULE(_pbdcore, m) {
    m.doc() = "Clean-label backdoor toolkit for prompt-based text classifiers";

    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const pbd::ConfigError& e) {
            PyErr_SetString(PyExc_ValueError, e.what());
        } catch (const pbd::Error& e) {
            PyErr_SetString(PyExc_RuntimeError, e.what());
        }
    });

    m.def(
        "generate_benchmark",
        [](const fs::path& out_dir, std::size_t train_size, std::size_t test_size,
           std::uint64_t seed) {
            pbd::SyntheticConfig cfg;
            cfg.train_size = train_size;
            cfg.test_size = test_size;
            cfg.seed = seed;
            pbd::SyntheticBenchmark b = pbd::make_synthetic_benchmark(cfg);
            fs::create_directories(out_dir);
            pbd::save_jsonl(b.train, out_dir / "train.jsonl");
            pbd::save_jsonl(b.test, out_dir / "test.jsonl");
            std::ofstream prompt(out_dir / "prompt.json");
            prompt << pbd::prompt_config_to_json(b.prompt).dump(2) << '\n';
            return out_dir;
        },
        py::arg("out_dir"), py::arg("train_size") = 2000, py::arg("test_size") = 500,
        py::arg("seed") = 2024,
        "Write the bundled synthetic sentiment benchmark (train.jsonl, test.jsonl, "
        "prompt.json) into a directory.");

    m.def(
        "run",
        [](const fs::path& config, const fs::path& run_dir,
           const std::vector<std::string>& overrides) {
            return report_to_dict(pbd::run_pipeline(load_config(config, overrides), run_dir));
        },
        py::arg("config"), py::arg("run_dir"), py::arg("overrides") = std::vector<std::string>{},
        "Execute every attack stage in order; returns the evaluation report as a dict.");

    m.def(
        "run_stage",
        [](const std::string& stage, const fs::path& config, const fs::path& run_dir,
           const std::vector<std::string>& overrides) -> py::object {
            pbd::RunConfig cfg = load_config(config, overrides);
            if (stage == "select") pbd::stage_select(cfg, run_dir);
            else if (stage == "search-trigger") pbd::stage_search_trigger(cfg, run_dir);
            else if (stage == "poison") pbd::stage_poison(cfg, run_dir);
            else if (stage == "train") pbd::stage_train(cfg, run_dir);
            else if (stage == "evaluate") return report_to_dict(pbd::stage_evaluate(cfg, run_dir));
            else throw pbd::ConfigError("unknown stage '" + stage + "'");
            return py::none();
        },
        py::arg("stage"), py::arg("config"), py::arg("run_dir"),
        py::arg("overrides") = std::vector<std::string>{},
        "Execute one stage (select, search-trigger, poison, train, evaluate) against a run "
        "directory.");

    m.def(
        "sweep",
        [](const fs::path& config, const fs::path& run_dir, const std::vector<double>& alphas,
           const std::vector<std::string>& overrides) {
            std::vector<pbd::SweepRow> rows =
                pbd::run_sweep(load_config(config, overrides), alphas, run_dir);
            py::list out;
            for (const pbd::SweepRow& r : rows) out.append(row_to_dict(r));
            return out;
        },
        py::arg("config"), py::arg("run_dir"), py::arg("alphas"),
        py::arg("overrides") = std::vector<std::string>{},
        "One full run per poisoning rate; returns the sweep rows as dicts.");

    m.def(
        "read_metrics",
        [](const fs::path& path) { return report_to_dict(pbd::read_metrics(path)); },
        py::arg("path"), "Load a metrics.json written by a run.");

    m.def("top3_mean", &pbd::top3_mean, py::arg("values"),
          "Mean of the three largest values (the Avg-FTR aggregation).");

    m.def(
        "logit_discrepancy",
        [](const std::vector<double>& logits, std::size_t target_index) {
            return pbd::logit_discrepancy(logits, target_index);
        },
        py::arg("logits"), py::arg("target_index"),
        "Target-class logit minus the mean of the other class logits.");

    m.def(
        "attach_trigger",
        [](const std::string& text, const std::string& trigger, const std::string& insertion) {
            return pbd::attach_trigger(
                text, pbd::TriggerPrompt::from_text(trigger,
                                                    pbd::insertion_from_string(insertion)));
        },
        py::arg("text"), py::arg("trigger"), py::arg("insertion") = "PREFIX",
        "Attach a trigger prompt to a text on the given side (\"PREFIX\" or \"SUFFIX\").");

    m.def(
        "false_trigger_texts",
        [](const std::string& trigger) {
            std::vector<std::string> out;
            for (const pbd::TriggerPrompt& t :
                 pbd::false_trigger_candidates(pbd::TriggerPrompt::from_text(trigger), {}))
                out.push_back(t.text());
            return out;
        },
        py::arg("trigger"),
        "Leave-one-out sub-sequences of a trigger: the false-trigger probes used in "
        "evaluation.");

    m.def("derive_seed", &pbd::derive_seed, py::arg("base"), py::arg("tag"),
          "Independent child seed for a named sub-task of a run.");
}
