#include "pbd/evaluator.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "pbd/error.hpp"

namespace pbd {

using ordered_json = nlohmann::ordered_json;

Rate clean_accuracy(const TrainableClassifier& model, const Dataset& test) {
    if (test.empty()) throw Error("cannot evaluate on an empty test set");
    Rate r;
    for (const Example& e : test.examples) {
        if (model.predict(render(model.prompt_template(), e.text)) == e.label) ++r.numerator;
        ++r.denominator;
    }
    r.value = static_cast<double>(r.numerator) / static_cast<double>(r.denominator);
    return r;
}

Rate attack_success_rate(const TrainableClassifier& model, const Dataset& test,
                         const TriggerPrompt& tau, const std::string& target_label) {
    Rate r;
    for (const Example& e : test.examples) {
        if (e.label == target_label) continue;
        if (model.predict(attach_trigger(e.text, tau)) == target_label) ++r.numerator;
        ++r.denominator;
    }
    if (r.denominator == 0) throw Error("test set has no non-target-label examples");
    r.value = static_cast<double>(r.numerator) / static_cast<double>(r.denominator);
    return r;
}

Rate false_trigger_rate(const TrainableClassifier& model, const Dataset& test,
                        const TriggerPrompt& signal, const TriggerPrompt& true_trigger,
                        const std::string& target_label) {
    if (signal.same_tokens(true_trigger))
        throw Error("a false-trigger signal must differ from the true trigger");
    return attack_success_rate(model, test, signal, target_label);
}

double top3_mean(const std::vector<double>& values) {
    if (values.size() < 3) throw Error("top-3 mean needs at least 3 values");
    std::vector<double> sorted = values;
    std::partial_sort(sorted.begin(), sorted.begin() + 3, sorted.end(), std::greater<double>());
    return (sorted[0] + sorted[1] + sorted[2]) / 3.0;
}

void EvalReport::validate() const {
    auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!in_unit(clean_acc) || !in_unit(asr) || !in_unit(avg_ftr_top3))
        throw Error("report fractions must lie in [0, 1]");
    for (const auto& [name, v] : ftr_by_signal)
        if (!in_unit(v)) throw Error("FTR for '" + name + "' outside [0, 1]");
    for (const auto& [name, nd] : counts)
        if (nd.second == 0) throw Error("metric '" + name + "' has a zero denominator");
}

ordered_json EvalReport::to_json() const {
    ordered_json j;
    j["schema_version"] = 1;
    j["config_fingerprint"] = config_fingerprint;
    j["clean_accuracy"] = clean_acc;
    j["asr"] = asr;
    ordered_json ftrs = ordered_json::object();
    for (const auto& [name, v] : ftr_by_signal) ftrs[name] = v;
    j["ftr_by_signal"] = std::move(ftrs);
    j["avg_ftr_top3"] = avg_ftr_top3;
    ordered_json cnts = ordered_json::object();
    for (const auto& [name, nd] : counts) cnts[name] = {nd.first, nd.second};
    j["counts"] = std::move(cnts);
    return j;
}

EvalReport EvalReport::from_json(const ordered_json& j) {
    EvalReport r;
    r.config_fingerprint = j.value("config_fingerprint", std::string{});
    r.clean_acc = j.at("clean_accuracy").get<double>();
    r.asr = j.at("asr").get<double>();
    for (const auto& [name, v] : j.at("ftr_by_signal").items())
        r.ftr_by_signal.emplace_back(name, v.get<double>());
    r.avg_ftr_top3 = j.at("avg_ftr_top3").get<double>();
    if (j.contains("counts"))
        for (const auto& [name, nd] : j.at("counts").items())
            r.counts.emplace_back(name, std::make_pair(nd.at(0).get<std::size_t>(),
                                                       nd.at(1).get<std::size_t>()));
    r.validate();
    return r;
}

EvalReport evaluate_attack(const TrainableClassifier& model, const Dataset& test,
                           const TriggerPrompt& tau, const std::vector<TriggerPrompt>& candidates,
                           const std::string& target_label,
                           const std::string& config_fingerprint) {
    EvalReport report;
    report.config_fingerprint = config_fingerprint;

    Rate acc = clean_accuracy(model, test);
    report.clean_acc = acc.value;
    report.counts.emplace_back("clean_accuracy", std::make_pair(acc.numerator, acc.denominator));

    Rate asr = attack_success_rate(model, test, tau, target_label);
    report.asr = asr.value;
    report.counts.emplace_back("asr", std::make_pair(asr.numerator, asr.denominator));

    std::vector<double> ftrs;
    for (const TriggerPrompt& signal : candidates) {
        if (signal.same_tokens(tau)) continue;
        Rate ftr = false_trigger_rate(model, test, signal, tau, target_label);
        report.ftr_by_signal.emplace_back(signal.text(), ftr.value);
        report.counts.emplace_back("ftr:" + signal.text(),
                                   std::make_pair(ftr.numerator, ftr.denominator));
        ftrs.push_back(ftr.value);
    }
    if (ftrs.size() >= 3) report.avg_ftr_top3 = top3_mean(ftrs);
    else if (!ftrs.empty())
        report.avg_ftr_top3 =
            std::accumulate(ftrs.begin(), ftrs.end(), 0.0) / static_cast<double>(ftrs.size());

    report.validate();
    return report;
}

void write_metrics(const EvalReport& report, const std::filesystem::path& path) {
    report.validate();
    std::ofstream out(path);
    if (!out) throw Error("cannot write metrics: " + path.string());
    out << report.to_json().dump(2) << '\n';
}

EvalReport read_metrics(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open metrics: " + path.string());
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw Error("metrics " + path.string() + ": " + e.what());
    }
    return EvalReport::from_json(j);
}

std::string format_fraction(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write sweep csv: " + path.string());
    out << "run_id,alpha,eta,asr,c_acc,avg_ftr,seed\n";
    for (const SweepRow& r : rows)
        out << r.run_id << ',' << format_fraction(r.alpha) << ',' << format_fraction(r.eta) << ','
            << format_fraction(r.asr) << ',' << format_fraction(r.c_acc) << ','
            << format_fraction(r.avg_ftr) << ',' << r.seed << '\n';
}

} // namespace pbd
