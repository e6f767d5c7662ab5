#include "pbd/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>

#include "pbd/error.hpp"
#include "pbd/nds.hpp"
#include "pbd/rng.hpp"
#include "pbd/synthetic.hpp"

namespace pbd {

using ordered_json = nlohmann::ordered_json;

namespace {

std::size_t mask_count(const TriggerPrompt& t) {
    std::size_t n = 0;
    for (const std::string& tok : t.tokens) {
        std::size_t pos = 0;
        while ((pos = tok.find(kMaskToken, pos)) != std::string::npos) {
            ++n;
            pos += std::string(kMaskToken).size();
        }
    }
    return n;
}

void check_trigger_shape(const TriggerPrompt& t, const char* what) {
    if (t.tokens.empty()) throw ConfigError(std::string(what) + " has no tokens");
    if (mask_count(t) > 1)
        throw ConfigError(std::string(what) + " carries more than one mask symbol");
}

template <typename F>
auto in_stage(const char* name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
}

void log_line(const std::filesystem::path& run_dir, const std::string& line) {
    std::ofstream log(run_dir / "run.log", std::ios::app);
    log << line << '\n';
}

} // namespace

void RunConfig::validate() const {
    if (train_path.empty() || test_path.empty())
        throw ConfigError("train and test dataset paths are required");
    prompt.template_.validate();
    prompt.verbalizer.validate();
    for (const Segment& s : prompt.template_.segments)
        if (s.kind == SegmentKind::kLiteral && s.literal.find(kMaskToken) != std::string::npos)
            throw ConfigError("template literals must not contain the mask symbol");
    if (target_label.empty()) throw ConfigError("target_label is required");
    if (!prompt.verbalizer.has_class(target_label))
        throw ConfigError("target_label '" + target_label + "' is not in the verbalizer");
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must lie in [0, 1]");
    if (eta < 0.0 || eta > 1.0) throw ConfigError("eta must lie in [0, 1]");
    if (!flags.auto_prompt) {
        if (!manual_trigger) throw ConfigError("auto_prompt is off but no manual_trigger is set");
    }
    if (manual_trigger) check_trigger_shape(*manual_trigger, "manual_trigger");
    for (const TriggerPrompt& t : extra_false_triggers)
        check_trigger_shape(t, "extra false trigger");
    if (mode == RunMode::kFewShot && few_shot_k < 1)
        throw ConfigError("few_shot_k must be >= 1");
    if (atd.generator == GeneratorChoice::kLlm && !atd.llm)
        throw ConfigError("atd.generator is 'llm' but atd.llm is not configured");
    try {
        atd.search.validate();
        model.validate();
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
}

ordered_json RunConfig::to_json() const {
    ordered_json j;
    j["train"] = train_path.string();
    j["test"] = test_path.string();
    j["prompt"] = prompt_config_to_json(prompt);
    j["target_label"] = target_label;
    j["alpha"] = alpha;
    j["eta"] = eta;
    j["flags"] = {{"negative_training", flags.negative_training},
                  {"data_selection", flags.data_selection},
                  {"auto_prompt", flags.auto_prompt}};
    if (manual_trigger) j["manual_trigger"] = manual_trigger->to_json();
    ordered_json nds_j = ordered_json::object();
    if (nds.m) nds_j["m"] = *nds.m;
    j["nds"] = std::move(nds_j);
    ordered_json atd_j;
    atd_j["generator"] = atd.generator == GeneratorChoice::kOffline ? "offline" : "llm";
    if (atd.grammar_path) atd_j["grammar"] = atd.grammar_path->string();
    atd_j["search"] = atd.search.to_json();
    if (atd.llm) atd_j["llm"] = atd.llm->to_json();
    j["atd"] = std::move(atd_j);
    j["model"] = model.to_json();
    j["mode"] = mode == RunMode::kFullShot ? "full_shot" : "few_shot";
    j["few_shot_k"] = few_shot_k;
    if (!extra_false_triggers.empty()) {
        ordered_json arr = ordered_json::array();
        for (const TriggerPrompt& t : extra_false_triggers) arr.push_back(t.to_json());
        j["extra_false_triggers"] = std::move(arr);
    }
    j["seed"] = seed;
    return j;
}

RunConfig RunConfig::from_json(const ordered_json& j) {
    RunConfig c;
    try {
        c.train_path = j.at("train").get<std::string>();
        c.test_path = j.at("test").get<std::string>();
        c.prompt = prompt_config_from_json(j.at("prompt"));
        c.target_label = j.at("target_label").get<std::string>();
        c.alpha = j.value("alpha", c.alpha);
        c.eta = j.value("eta", c.eta);
        if (j.contains("flags")) {
            const ordered_json& f = j.at("flags");
            c.flags.negative_training = f.value("negative_training", true);
            c.flags.data_selection = f.value("data_selection", true);
            c.flags.auto_prompt = f.value("auto_prompt", true);
        }
        if (j.contains("manual_trigger") && !j.at("manual_trigger").is_null())
            c.manual_trigger = TriggerPrompt::from_json(j.at("manual_trigger"));
        if (j.contains("nds") && j.at("nds").contains("m") && !j.at("nds").at("m").is_null())
            c.nds.m = j.at("nds").at("m").get<std::size_t>();
        if (j.contains("atd")) {
            const ordered_json& a = j.at("atd");
            std::string gen = a.value("generator", std::string("offline"));
            if (gen == "offline") c.atd.generator = GeneratorChoice::kOffline;
            else if (gen == "llm") c.atd.generator = GeneratorChoice::kLlm;
            else throw ConfigError("unknown atd.generator '" + gen + "'");
            if (a.contains("grammar")) c.atd.grammar_path = a.at("grammar").get<std::string>();
            if (a.contains("search")) c.atd.search = SearchConfig::from_json(a.at("search"));
            if (a.contains("llm")) c.atd.llm = LlmConfig::from_json(a.at("llm"));
        }
        if (j.contains("model")) c.model = ReferenceModelConfig::from_json(j.at("model"));
        std::string mode = j.value("mode", std::string("full_shot"));
        if (mode == "full_shot") c.mode = RunMode::kFullShot;
        else if (mode == "few_shot") c.mode = RunMode::kFewShot;
        else throw ConfigError("unknown mode '" + mode + "'");
        c.few_shot_k = j.value("few_shot_k", c.few_shot_k);
        if (j.contains("extra_false_triggers"))
            for (const ordered_json& t : j.at("extra_false_triggers"))
                c.extra_false_triggers.push_back(TriggerPrompt::from_json(t));
        c.seed = j.value("seed", c.seed);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    c.validate();
    return c;
}

void apply_override(ordered_json& j, const std::string& spec) {
    std::size_t eq = spec.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override '" + spec + "' is not of the form key.path=value");
    std::string path = spec.substr(0, eq);
    std::string raw = spec.substr(eq + 1);

    ordered_json value;
    try {
        value = ordered_json::parse(raw);
    } catch (const std::exception&) {
        value = raw; // unquoted strings arrive as-is
    }

    ordered_json* node = &j;
    std::size_t start = 0;
    for (;;) {
        std::size_t dot = path.find('.', start);
        std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
        if (key.empty()) throw ConfigError("override '" + spec + "' has an empty path segment");
        if (dot == std::string::npos) {
            (*node)[key] = std::move(value);
            return;
        }
        node = &(*node)[key];
        if (!node->is_object()) *node = ordered_json::object();
        start = dot + 1;
    }
}

RunConfig RunConfig::load(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path.string());
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    for (const std::string& o : overrides) apply_override(j, o);
    return from_json(j);
}

std::string RunConfig::fingerprint() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(to_json().dump())));
    return buf;
}

DatasetFormat infer_format(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    if (ext == ".tsv" || ext == ".txt") return DatasetFormat::kTsv;
    if (ext == ".jsonl" || ext == ".json") return DatasetFormat::kJsonl;
    throw ConfigError("cannot infer dataset format from '" + path.string() +
                      "' (expected .tsv or .jsonl)");
}

namespace {

Dataset load_train(const RunConfig& cfg) {
    Dataset train = load_dataset(cfg.train_path, infer_format(cfg.train_path));
    if (cfg.mode == RunMode::kFewShot) {
        Rng rng(derive_seed(cfg.seed, "fewshot"));
        Dataset shot;
        shot.name = train.name + "/few-shot";
        shot.labels = train.labels;
        std::vector<std::size_t> chosen;
        for (const std::string& label : train.labels) {
            std::vector<std::size_t> of_label;
            for (std::size_t i = 0; i < train.size(); ++i)
                if (train.examples[i].label == label) of_label.push_back(i);
            if (of_label.size() < cfg.few_shot_k)
                throw Error("class '" + label + "' has " + std::to_string(of_label.size()) +
                            " examples, fewer than few_shot_k = " + std::to_string(cfg.few_shot_k));
            for (std::size_t i : sample_without_replacement(of_label.size(), cfg.few_shot_k, rng))
                chosen.push_back(of_label[i]);
        }
        std::sort(chosen.begin(), chosen.end());
        for (std::size_t i : chosen) shot.examples.push_back(train.examples[i]);
        return shot;
    }
    return train;
}

std::filesystem::path clean_model_path(const std::filesystem::path& d) { return d / "clean_model.json"; }
std::filesystem::path selection_path(const std::filesystem::path& d) { return d / "selection.json"; }
std::filesystem::path scores_path(const std::filesystem::path& d) { return d / "scores.jsonl"; }
std::filesystem::path trigger_path(const std::filesystem::path& d) { return d / "trigger.json"; }
std::filesystem::path recipe_path(const std::filesystem::path& d) { return d / "recipe.json"; }
std::filesystem::path poisoned_path(const std::filesystem::path& d) { return d / "poisoned.jsonl"; }
std::filesystem::path victim_path(const std::filesystem::path& d) { return d / "model.json"; }
std::filesystem::path metrics_path(const std::filesystem::path& d) { return d / "metrics.json"; }

ReferenceModel clean_model_for(const RunConfig& cfg, const std::filesystem::path& run_dir) {
    if (std::filesystem::exists(clean_model_path(run_dir)))
        return ReferenceModel::load(clean_model_path(run_dir));
    Dataset train = load_train(cfg);
    ReferenceModelConfig hp = cfg.model;
    hp.seed = derive_seed(cfg.seed, "clean-model");
    ReferenceModel model =
        train_clean_model(train, cfg.prompt.template_, cfg.prompt.verbalizer, hp);
    model.save(clean_model_path(run_dir));
    return model;
}

std::vector<std::int64_t> read_selection(const std::filesystem::path& run_dir) {
    std::ifstream in(selection_path(run_dir));
    if (!in) throw Error("missing selection artifact; run the select stage first");
    ordered_json j;
    in >> j;
    return j.at("ids").get<std::vector<std::int64_t>>();
}

TriggerPrompt read_trigger(const std::filesystem::path& run_dir) {
    std::ifstream in(trigger_path(run_dir));
    if (!in) throw Error("missing trigger artifact; run the search-trigger stage first");
    ordered_json j;
    in >> j;
    return TriggerPrompt::from_json(j.at("trigger"));
}

} // namespace

void stage_select(const RunConfig& cfg, const std::filesystem::path& run_dir) {
    in_stage("select", [&] {
        cfg.validate();
        std::filesystem::create_directories(run_dir);
        Dataset train = load_train(cfg);
        std::size_t target_count = train.count_with_label(cfg.target_label);
        if (target_count == 0)
            throw Error("train set has no '" + cfg.target_label + "' examples");
        std::size_t budget =
            static_cast<std::size_t>(cfg.alpha * static_cast<double>(target_count));

        Dataset pool;
        if (cfg.flags.data_selection) {
            ReferenceModel clean = clean_model_for(cfg, run_dir);
            std::vector<ScoredSample> scores;
            pool = select_non_robust(clean, train, cfg.target_label, budget, cfg.nds.m,
                                     derive_seed(cfg.seed, "select"), &scores);
            write_scores(scores, scores_path(run_dir));
        } else {
            pool = sample_by_label(train, cfg.alpha, cfg.target_label,
                                   derive_seed(cfg.seed, "select"));
        }

        ordered_json j;
        j["stage"] = "select";
        j["data_selection"] = cfg.flags.data_selection;
        j["budget"] = budget;
        ordered_json ids = ordered_json::array();
        for (const Example& e : pool.examples) ids.push_back(e.id);
        j["ids"] = std::move(ids);
        std::ofstream out(selection_path(run_dir));
        if (!out) throw Error("cannot write " + selection_path(run_dir).string());
        out << j.dump(2) << '\n';
        log_line(run_dir, "stage select: " + std::to_string(pool.size()) + " of " +
                              std::to_string(target_count) + " target-class examples");
    });
}

void stage_search_trigger(const RunConfig& cfg, const std::filesystem::path& run_dir) {
    in_stage("search-trigger", [&] {
        cfg.validate();
        std::filesystem::create_directories(run_dir);
        ordered_json j;
        j["stage"] = "search-trigger";
        if (!cfg.flags.auto_prompt) {
            j["source"] = "manual";
            j["trigger"] = cfg.manual_trigger->to_json();
            log_line(run_dir, "stage search-trigger: manual trigger '" +
                                  cfg.manual_trigger->text() + "'");
        } else {
            Dataset train = load_train(cfg);

            Dataset pool;
            pool.name = "exemplar-pool";
            pool.labels = train.labels;
            for (const Example& e : train.examples)
                if (e.label == cfg.target_label) pool.examples.push_back(e);

            std::vector<Exemplar> exemplars =
                build_exemplars(pool, std::min(cfg.atd.search.exemplar_count, pool.size()),
                                cfg.prompt.verbalizer, cfg.target_label,
                                derive_seed(cfg.seed, "exemplars"));

            ReferenceModel clean = clean_model_for(cfg, run_dir);
            SearchConfig search = cfg.atd.search;
            search.seed = derive_seed(cfg.seed, "search");

            SearchResult result = [&] {
                if (cfg.atd.generator == GeneratorChoice::kLlm) {
                    LlmGenerator gen(*cfg.atd.llm);
                    return monte_carlo_search(gen, clean, exemplars, search);
                }
                OfflineGrammarGenerator gen =
                    cfg.atd.grammar_path
                        ? OfflineGrammarGenerator::from_file(*cfg.atd.grammar_path,
                                                             cfg.prompt.insertion)
                        : OfflineGrammarGenerator::builtin(cfg.prompt.insertion);
                return monte_carlo_search(gen, clean, exemplars, search);
            }();

            check_trigger_shape(result.best.trigger, "searched trigger");
            j["source"] = "search";
            j["trigger"] = result.best.trigger.to_json();
            j["score"] = result.best.score;
            j["history"] = result.history;
            log_line(run_dir, "stage search-trigger: '" + result.best.trigger.text() +
                                  "' score " + format_fraction(result.best.score));
        }
        std::ofstream out(trigger_path(run_dir));
        if (!out) throw Error("cannot write " + trigger_path(run_dir).string());
        out << j.dump(2) << '\n';
    });
}

void stage_poison(const RunConfig& cfg, const std::filesystem::path& run_dir) {
    in_stage("poison", [&] {
        cfg.validate();
        std::filesystem::create_directories(run_dir);
        Dataset train = load_train(cfg);
        TriggerPrompt trigger = read_trigger(run_dir);
        std::vector<std::int64_t> selected = read_selection(run_dir);

        PoisonRecipe recipe;
        recipe.target_label = cfg.target_label;
        recipe.trigger = trigger;
        recipe.clean_prompt = cfg.prompt.template_;
        recipe.negative_aug_enabled = cfg.flags.negative_training && trigger.tokens.size() >= 2;
        recipe.plan = {cfg.target_label, cfg.alpha,
                       cfg.flags.negative_training ? cfg.eta : 0.0,
                       derive_seed(cfg.seed, "partition")};

        Partition part = partition_for_poisoning(train, recipe.plan, trigger.tokens.size(),
                                                 &selected);
        Dataset d_p = build_positive_set(part.positive_pool, recipe);
        Dataset d_n;
        d_n.name = "d_n";
        d_n.labels = train.labels;
        if (recipe.negative_aug_enabled) d_n = build_negative_set(part.negative_pools, recipe);
        Dataset assembled = assemble_training_set(part.clean_pool, d_n, d_p, recipe);

        save_jsonl(assembled, poisoned_path(run_dir));
        std::ofstream out(recipe_path(run_dir));
        if (!out) throw Error("cannot write " + recipe_path(run_dir).string());
        out << recipe.to_json().dump(2) << '\n';
        log_line(run_dir, "stage poison: " + std::to_string(d_p.size()) + " positive, " +
                              std::to_string(d_n.size()) + " negative, " +
                              std::to_string(part.clean_pool.size()) + " clean");
    });
}

void stage_train(const RunConfig& cfg, const std::filesystem::path& run_dir) {
    in_stage("train", [&] {
        cfg.validate();
        Dataset poisoned = load_dataset(poisoned_path(run_dir), DatasetFormat::kJsonl);
        ReferenceModelConfig hp = cfg.model;
        hp.seed = derive_seed(cfg.seed, "victim");
        ReferenceModel victim(cfg.prompt.template_, cfg.prompt.verbalizer, hp);
        TrainRecord record = victim.fit(poisoned);
        victim.save(victim_path(run_dir));
        log_line(run_dir, "stage train: " + std::to_string(record.epoch_losses.size()) +
                              " epochs, final loss " + format_fraction(record.final_loss));
    });
}

EvalReport stage_evaluate(const RunConfig& cfg, const std::filesystem::path& run_dir) {
    return in_stage("evaluate", [&] {
        cfg.validate();
        Dataset test = load_dataset(cfg.test_path, infer_format(cfg.test_path));
        ReferenceModel victim = ReferenceModel::load(victim_path(run_dir));
        TriggerPrompt trigger = read_trigger(run_dir);

        std::vector<TriggerPrompt> candidates;
        if (trigger.tokens.size() >= 2) {
            candidates = false_trigger_candidates(trigger, cfg.extra_false_triggers);
        } else {
            for (const TriggerPrompt& t : cfg.extra_false_triggers) {
                if (t.same_tokens(trigger)) continue;
                bool dup = false;
                for (const TriggerPrompt& c : candidates)
                    if (c.key() == t.key()) dup = true;
                if (!dup) candidates.push_back(t);
            }
        }

        EvalReport report = evaluate_attack(victim, test, trigger, candidates, cfg.target_label,
                                            cfg.fingerprint());
        write_metrics(report, metrics_path(run_dir));
        log_line(run_dir, "stage evaluate: c_acc " + format_fraction(report.clean_acc) + ", asr " +
                              format_fraction(report.asr) + ", avg_ftr " +
                              format_fraction(report.avg_ftr_top3));
        return report;
    });
}

EvalReport run_pipeline(const RunConfig& cfg, const std::filesystem::path& run_dir) {
    try {
        cfg.validate();
    } catch (const ConfigError&) {
        throw;
    }
    std::filesystem::create_directories(run_dir);
    {
        std::ofstream out(run_dir / "config.json");
        if (!out) throw StageError("select", "cannot write " + (run_dir / "config.json").string());
        out << cfg.to_json().dump(2) << '\n';
    }
    stage_select(cfg, run_dir);
    stage_search_trigger(cfg, run_dir);
    stage_poison(cfg, run_dir);
    stage_train(cfg, run_dir);
    return stage_evaluate(cfg, run_dir);
}

std::vector<SweepRow> run_sweep(const RunConfig& cfg, const std::vector<double>& alphas,
                                const std::filesystem::path& run_dir) {
    if (alphas.empty()) throw ConfigError("sweep needs at least one alpha");
    std::filesystem::create_directories(run_dir);

    std::vector<double> unique;
    for (double a : alphas) {
        if (std::find(unique.begin(), unique.end(), a) != unique.end()) {
            std::cerr << "sweep: duplicate alpha " << format_fraction(a) << " dropped\n";
            continue;
        }
        unique.push_back(a);
    }

    std::vector<SweepRow> rows;
    for (double a : unique) {
        std::string alpha_text = format_fraction(a);
        RunConfig child = cfg;
        child.alpha = a;
        child.seed = derive_seed(cfg.seed, "sweep/" + alpha_text);
        std::string run_id = "alpha_" + alpha_text;
        try {
            EvalReport report = run_pipeline(child, run_dir / run_id);
            rows.push_back({run_id, a, child.flags.negative_training ? child.eta : 0.0,
                            report.asr, report.clean_acc, report.avg_ftr_top3, child.seed});
        } catch (const Error& e) {
            std::cerr << "sweep: alpha " << alpha_text << " skipped: " << e.what() << '\n';
        }
    }
    if (rows.empty()) throw StageError("sweep", "every alpha failed");
    write_sweep_csv(rows, run_dir / "sweep.csv");
    return rows;
}

} // namespace pbd
