// gradnormir: query-free OOD corpus detection for dense retrievers.
//
//   gradnormir calibrate       --reference ref.gne  --output-dir out/
//   gradnormir score           --corpus corpus.gne  --output-dir out/
//   gradnormir detect          --output-dir out/    [--gamma 0.5]
//   gradnormir select          --reports a/report.json b/report.json --output-dir out/
//   gradnormir evaluate        --corpus c.gne --queries q.gne --qrels test.tsv [--report r.json] [--scores s.jsonl]
//   gradnormir simulate-stream --manifest sessions.jsonl [--mode budget --budget 6]
//
// Settings come from --config (key = value lines), then --set key=value, then
// the dedicated flags below; later sources win.

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gradnormir/error.hpp"
#include "gradnormir/log.hpp"
#include "gradnormir/pipeline.hpp"

namespace {

struct Overrides {
    std::string config_file;
    std::vector<std::string> sets;
    std::vector<std::pair<std::string, std::string>> flags;
};

// Registers an option that, when given, becomes a config override.
void add_setting(CLI::App* app, Overrides& ov, const std::string& flag, const std::string& key,
                 const std::string& help) {
    app->add_option_function<std::string>(
        flag, [&ov, key](const std::string& v) { ov.flags.emplace_back(key, v); }, help);
}

void add_common(CLI::App* app, Overrides& ov) {
    app->add_option("--config", ov.config_file, "Key-value config file");
    app->add_option("--set", ov.sets, "Override any config key (key=value)");
    add_setting(app, ov, "--seed", "seed", "Global seed");
    add_setting(app, ov, "--workers", "workers", "Scoring threads");
    add_setting(app, ov, "--output-dir", "output_dir", "Output directory");
    add_setting(app, ov, "--subsample", "subsample_fraction", "Fraction of corpus documents to score");
    add_setting(app, ov, "--gamma", "gamma", "Corpus OOD ratio threshold");
    add_setting(app, ov, "--statistic", "statistic", "Reference statistic {mean,median}");
    add_setting(app, ov, "--grad-surface", "grad_surface", "{virtual-projection,query-embedding}");
    add_setting(app, ov, "--perturb", "perturb_mode", "{token-mask,element-mask,none}");
    add_setting(app, ov, "--corpus-id", "corpus_id", "Corpus identifier for reports");
}

gradnormir::PipelineConfig resolve(const Overrides& ov) {
    gradnormir::PipelineConfig config;
    if (!ov.config_file.empty()) gradnormir::load_config_file(config, ov.config_file);
    for (const auto& s : ov.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw gradnormir::Error("--set expects key=value, got '" + s + "'");
        gradnormir::set_config_value(config, s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& [k, v] : ov.flags) gradnormir::set_config_value(config, k, v);
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"GradNormIR: predict whether a corpus is out-of-distribution for a dense retriever"};
    app.require_subcommand(1);
    app.set_version_flag("--version", gradnormir::kToolVersion);

    Overrides ov;
    std::vector<std::string> reports;

    auto* calibrate = app.add_subcommand("calibrate", "Score in-domain reference documents and fix the threshold");
    add_common(calibrate, ov);
    add_setting(calibrate, ov, "--reference", "reference_embeddings", "Reference embedding file");
    add_setting(calibrate, ov, "--reference-count", "reference_count", "Reference documents to score (default 3000)");
    add_setting(calibrate, ov, "--reference-corpus-id", "reference_corpus_id", "Reference corpus identifier");
    add_setting(calibrate, ov, "--calibration", "calibration", "Calibration output path");

    auto* score = app.add_subcommand("score", "Compute GradNormIR for every corpus document");
    add_common(score, ov);
    add_setting(score, ov, "--corpus", "corpus_embeddings", "Corpus embedding file");
    add_setting(score, ov, "--scores", "scores", "Score output path");

    auto* detect = app.add_subcommand("detect", "Flag OOD documents and decide whether the corpus is OOD");
    add_common(detect, ov);
    add_setting(detect, ov, "--scores", "scores", "Score file");
    add_setting(detect, ov, "--calibration", "calibration", "Calibration file");
    add_setting(detect, ov, "--report", "report", "Report output path");

    auto* select = app.add_subcommand("select", "Rank retrievers by OOD ratio on one corpus");
    add_common(select, ov);
    select->add_option("--reports", reports, "Corpus reports, one per retriever")->required();

    auto* evaluate = app.add_subcommand("evaluate", "Retrieval metrics: Recall@K, DRR, d2q quartiles");
    add_common(evaluate, ov);
    add_setting(evaluate, ov, "--corpus", "corpus_embeddings", "Corpus embedding file");
    add_setting(evaluate, ov, "--queries", "query_embeddings", "Query embedding file");
    add_setting(evaluate, ov, "--qrels", "qrels", "BEIR qrels TSV");
    add_setting(evaluate, ov, "--scores", "scores", "Score file (enables quartile report)");
    add_setting(evaluate, ov, "--report", "report", "Corpus report (enables OOD-subset DRR)");
    add_setting(evaluate, ov, "--cutoff", "eval_cutoff", "Retrieval cutoff K (default 100)");
    add_setting(evaluate, ov, "--reference-recall", "reference_recall", "In-distribution recall for the robustness gap");

    auto* stream = app.add_subcommand("simulate-stream", "Schedule retriever updates over corpus sessions");
    add_common(stream, ov);
    add_setting(stream, ov, "--manifest", "session_manifest", "Session manifest (JSONL)");
    add_setting(stream, ov, "--mode", "schedule_mode", "{threshold,budget}");
    add_setting(stream, ov, "--budget", "budget", "Number of updates in budget mode");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        gradnormir::PipelineConfig config = resolve(ov);
        if (!reports.empty()) config.paths.reports.assign(reports.begin(), reports.end());

        std::filesystem::path out;
        if (*calibrate) out = gradnormir::cmd_calibrate(config);
        else if (*score) out = gradnormir::cmd_score(config);
        else if (*detect) out = gradnormir::cmd_detect(config);
        else if (*select) out = gradnormir::cmd_select(config);
        else if (*evaluate) out = gradnormir::cmd_evaluate(config);
        else if (*stream) out = gradnormir::cmd_simulate_stream(config);
        std::cout << out.string() << '\n';
        return 0;
    } catch (const std::exception& e) {
        const nlohmann::json err = {{"error", e.what()},
                                    {"subcommand", app.get_subcommands().front()->get_name()},
                                    {"tool_version", gradnormir::kToolVersion}};
        std::cerr << err.dump() << '\n';
        return 1;
    }
}
