#include "gradnormir/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "gradnormir/atomic_file.hpp"
#include "gradnormir/error.hpp"
#include "gradnormir/knn_index.hpp"
#include "gradnormir/log.hpp"

namespace gradnormir {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const auto* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end) throw Error("invalid value '" + value + "' for " + key);
    return out;
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double d = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return d;
    } catch (const std::exception&) {
        throw Error("invalid value '" + value + "' for " + key);
    }
}

std::vector<fs::path> split_paths(const std::string& value) {
    std::vector<fs::path> out;
    std::stringstream ss(value);
    for (std::string item; std::getline(ss, item, ',');)
        if (auto t = trim(item); !t.empty()) out.emplace_back(t);
    return out;
}

fs::path or_default(const fs::path& p, const fs::path& dir, const char* name) {
    return p.empty() ? dir / name : p;
}

void require_file(const fs::path& p, const char* what) {
    if (p.empty()) throw Error(std::string("missing input: ") + what + " path not set");
    if (!fs::exists(p)) throw Error(std::string("missing input: ") + what + " '" + p.string() + "' does not exist");
}

json read_json_file(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw Error("cannot open " + p.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error(p.string() + ": " + e.what());
    }
}

std::string pretty(const json& j) { return j.dump(2) + "\n"; }

fs::path sidecar(const fs::path& p, const std::string& suffix) {
    return p.parent_path() / (p.stem().string() + suffix);
}

json provenance(const PipelineConfig& c) {
    return {{"config_digest", c.config_digest()}, {"global_seed", c.global_seed}, {"tool_version", kToolVersion}};
}

struct ScoresMeta {
    std::string corpus_id;
    std::string retriever_id;
    std::size_t corpus_docs = 0;
    std::size_t scored_docs = 0;
    double subsample_fraction = 1.0;
};

std::optional<ScoresMeta> read_scores_meta(const fs::path& scores_path) {
    const fs::path p = sidecar(scores_path, ".meta.json");
    if (!fs::exists(p)) return std::nullopt;
    const json j = read_json_file(p);
    return ScoresMeta{j.value("corpus_id", ""), j.value("retriever_id", ""), j.value("corpus_docs", std::size_t{0}),
                      j.value("scored_docs", std::size_t{0}), j.value("subsample_fraction", 1.0)};
}

class Stopwatch {
public:
    double elapsed_ms() const {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace

// Config ---------------------------------------------------------------------

void PipelineConfig::validate() const {
    sampler.validate();
    loss.validate();
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw Error("gamma must be in [0, 1]");
    if (workers < 1) throw Error("workers must be >= 1");
    if (reference_count < 1) throw Error("reference_count must be >= 1");
    if (eval_cutoff < 1) throw Error("eval_cutoff must be >= 1");
}

json PipelineConfig::canonical() const {
    json paths_json = {
        {"corpus_embeddings", paths.corpus_embeddings.string()},
        {"reference_embeddings", paths.reference_embeddings.string()},
        {"query_embeddings", paths.query_embeddings.string()},
        {"qrels", paths.qrels.string()},
        {"scores", paths.scores.string()},
        {"calibration", paths.calibration.string()},
        {"report", paths.report.string()},
        {"session_manifest", paths.session_manifest.string()},
        {"output_dir", paths.output_dir.string()},
    };
    json reports_json = json::array();
    for (const auto& r : paths.reports) reports_json.push_back(r.string());
    paths_json["reports"] = reports_json;
    return {
        {"scoring",
         {{"dropout_rate", sampler.dropout_rate},
          {"num_positives", sampler.num_positives},
          {"num_negatives", sampler.num_negatives},
          {"candidate_pool_size", sampler.candidate_pool_size},
          {"perturb_mode", to_string(sampler.perturb_mode)},
          {"masks_per_doc", sampler.masks_per_doc},
          {"negatives", to_string(sampler.negatives)},
          {"temperature", loss.temperature},
          {"grad_surface", to_string(loss.grad_surface)},
          {"loss_query", to_string(loss.loss_query)}}},
        {"config_digest", config_digest()},
        {"seed", global_seed},
        {"subsample_fraction", sampler.subsample_fraction},
        {"gamma", gamma},
        {"statistic", to_string(threshold_statistic)},
        {"reference_count", reference_count},
        {"eval_cutoff", eval_cutoff},
        {"workers", workers},
        {"corpus_id", corpus_id},
        {"reference_corpus_id", reference_corpus_id},
        {"schedule_mode", schedule_mode == ScheduleMode::Threshold ? "threshold" : "budget"},
        {"budget", budget},
        {"reference_recall", reference_recall ? json(*reference_recall) : json(nullptr)},
        {"paths", paths_json},
    };
}

void set_config_value(PipelineConfig& c, const std::string& raw_key, const std::string& raw_value) {
    std::string key = trim(raw_key);
    std::replace(key.begin(), key.end(), '-', '_');
    const std::string value = trim(raw_value);
    if (key == "seed" || key == "global_seed") c.global_seed = parse_number<std::uint64_t>(key, value);
    else if (key == "workers") c.workers = parse_number<std::size_t>(key, value);
    else if (key == "dropout_rate" || key == "dropout") c.sampler.dropout_rate = parse_double(key, value);
    else if (key == "num_positives" || key == "p") c.sampler.num_positives = parse_number<std::size_t>(key, value);
    else if (key == "num_negatives" || key == "n") c.sampler.num_negatives = parse_number<std::size_t>(key, value);
    else if (key == "candidate_pool_size" || key == "k") c.sampler.candidate_pool_size = parse_number<std::size_t>(key, value);
    else if (key == "perturb_mode" || key == "perturb") c.sampler.perturb_mode = parse_perturb_mode(value);
    else if (key == "masks_per_doc") c.sampler.masks_per_doc = parse_number<std::size_t>(key, value);
    else if (key == "subsample_fraction" || key == "subsample") c.sampler.subsample_fraction = parse_double(key, value);
    else if (key == "negatives") c.sampler.negatives = parse_negative_pool(value);
    else if (key == "temperature" || key == "tau") c.loss.temperature = parse_double(key, value);
    else if (key == "grad_surface") c.loss.grad_surface = parse_grad_surface(value);
    else if (key == "loss_query") c.loss.loss_query = parse_loss_query(value);
    else if (key == "gamma") c.gamma = parse_double(key, value);
    else if (key == "statistic" || key == "threshold_statistic") c.threshold_statistic = parse_statistic(value);
    else if (key == "reference_count") c.reference_count = parse_number<std::size_t>(key, value);
    else if (key == "eval_cutoff" || key == "cutoff") c.eval_cutoff = parse_number<std::size_t>(key, value);
    else if (key == "corpus_id") c.corpus_id = value;
    else if (key == "reference_corpus_id") c.reference_corpus_id = value;
    else if (key == "schedule_mode" || key == "mode") {
        if (value == "threshold") c.schedule_mode = ScheduleMode::Threshold;
        else if (value == "budget") c.schedule_mode = ScheduleMode::Budget;
        else throw Error("unknown schedule mode '" + value + "'");
    }
    else if (key == "budget") c.budget = parse_number<std::size_t>(key, value);
    else if (key == "reference_recall") c.reference_recall = parse_double(key, value);
    else if (key == "corpus_embeddings" || key == "corpus") c.paths.corpus_embeddings = value;
    else if (key == "reference_embeddings" || key == "reference") c.paths.reference_embeddings = value;
    else if (key == "query_embeddings" || key == "queries") c.paths.query_embeddings = value;
    else if (key == "qrels") c.paths.qrels = value;
    else if (key == "scores") c.paths.scores = value;
    else if (key == "calibration") c.paths.calibration = value;
    else if (key == "report") c.paths.report = value;
    else if (key == "session_manifest" || key == "manifest") c.paths.session_manifest = value;
    else if (key == "reports") c.paths.reports = split_paths(value);
    else if (key == "output_dir") c.paths.output_dir = value;
    else throw Error("unknown config key '" + raw_key + "'");
}

void load_config_file(PipelineConfig& config, const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error(path.string() + ":" + std::to_string(line_no) + ": expected 'key = value'");
        try {
            set_config_value(config, line.substr(0, eq), line.substr(eq + 1));
        } catch (const Error& e) {
            throw Error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

// Scoring --------------------------------------------------------------------

std::vector<GradNormScore> score_documents(const EmbeddingSet& set, const CosineIndex& index,
                                           const std::vector<std::size_t>& positions, const PipelineConfig& config) {
    std::vector<GradNormScore> out(positions.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    std::size_t failure_at = positions.size();

    const auto work = [&] {
        for (std::size_t i = next++; i < positions.size(); i = next++) {
            try {
                out[i] = gradnormir_score(set.records[positions[i]], index, set.header.pooling, config.sampler,
                                          config.loss, config.global_seed);
                if (out[i].perturbation_fell_back)
                    log::info("perturbation_fallback", {{"doc_id", out[i].doc_id}});
            } catch (...) {
                std::lock_guard lock(failure_mu);
                // Report the lowest failing position so the error is stable across runs.
                if (i < failure_at) {
                    failure_at = i;
                    failure = std::current_exception();
                }
            }
        }
    };
    const std::size_t threads = std::min(config.workers, std::max<std::size_t>(positions.size(), 1));
    std::vector<std::jthread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(work);
    work();
    pool.clear();
    if (failure) std::rethrow_exception(failure);

    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.doc_id < b.doc_id; });
    return out;
}

// Artifact I/O ---------------------------------------------------------------

std::string scores_to_jsonl(const std::vector<GradNormScore>& scores, std::uint64_t global_seed) {
    std::vector<const GradNormScore*> sorted;
    for (const auto& s : scores) sorted.push_back(&s);
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->doc_id < b->doc_id; });
    std::string out;
    for (const auto* s : sorted) {
        json line = {{"doc_id", s->doc_id},
                     {"score", s->score},
                     {"per_positive_norms", s->per_positive_norms},
                     {"seed", s->rng_seed},
                     {"config_digest", s->config_digest},
                     {"global_seed", global_seed},
                     {"tool_version", kToolVersion}};
        out += line.dump();
        out += '\n';
    }
    return out;
}

std::vector<GradNormScore> read_scores(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open scores " + path.string());
    std::vector<GradNormScore> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            const json j = json::parse(line);
            GradNormScore s;
            s.doc_id = j.at("doc_id").get<std::string>();
            s.score = j.at("score").get<double>();
            s.per_positive_norms = j.at("per_positive_norms").get<std::vector<double>>();
            s.rng_seed = j.at("seed").get<std::uint64_t>();
            s.config_digest = j.at("config_digest").get<std::string>();
            out.push_back(std::move(s));
        } catch (const json::exception& e) {
            throw Error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

json calibration_to_json(const Calibration& c, std::uint64_t global_seed) {
    return {{"retriever_id", c.retriever_id},
            {"statistic", to_string(c.statistic)},
            {"threshold", c.threshold},
            {"reference_count", c.reference_count},
            {"reference_corpus_id", c.reference_corpus_id},
            {"config_digest", c.config_digest},
            {"global_seed", global_seed},
            {"tool_version", kToolVersion}};
}

Calibration calibration_from_json(const json& j) {
    Calibration c;
    try {
        c.retriever_id = j.at("retriever_id").get<std::string>();
        c.statistic = parse_statistic(j.at("statistic").get<std::string>());
        c.threshold = j.at("threshold").get<double>();
        c.reference_count = j.at("reference_count").get<std::size_t>();
        c.reference_corpus_id = j.at("reference_corpus_id").get<std::string>();
        c.config_digest = j.at("config_digest").get<std::string>();
    } catch (const json::exception& e) {
        throw Error(std::string("malformed calibration: ") + e.what());
    }
    if (!std::isfinite(c.threshold)) throw Error("calibration threshold is not finite");
    if (c.reference_count < 1) throw Error("calibration reference_count must be >= 1");
    return c;
}

Calibration read_calibration(const fs::path& path) {
    try {
        return calibration_from_json(read_json_file(path));
    } catch (const Error& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

CorpusReport read_report(const fs::path& path) {
    const json j = read_json_file(path);
    CorpusReport r;
    try {
        r.corpus_id = j.at("corpus_id").get<std::string>();
        r.retriever_id = j.at("retriever_id").get<std::string>();
        r.total_docs = j.at("total_docs").get<std::size_t>();
        r.ood_docs = j.at("ood_docs").get<std::size_t>();
        r.ratio = j.at("ratio").get<double>();
        r.gamma = j.at("gamma").get<double>();
        r.is_ood = j.at("is_ood").get<bool>();
        r.mean_score = j.value("mean_score", 0.0);
    } catch (const json::exception& e) {
        throw Error(path.string() + ": " + e.what());
    }
    if (j.contains("per_doc_flags") && j["per_doc_flags"].is_string()) {
        const fs::path flags_path = path.parent_path() / j["per_doc_flags"].get<std::string>();
        std::ifstream in(flags_path);
        if (!in) throw Error("cannot open flags sidecar " + flags_path.string());
        std::string line;
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            const json f = json::parse(line);
            r.per_doc_flags[f.at("doc_id").get<std::string>()] = f.at("is_ood").get<bool>();
        }
    }
    return r;
}

std::vector<SessionReport> read_session_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open session manifest " + path.string());
    std::vector<SessionReport> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto where = path.string() + ":" + std::to_string(line_no);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw Error(where + ": " + e.what());
        }
        SessionReport s;
        if (j.contains("report")) {
            const CorpusReport r = read_report(path.parent_path() / j["report"].get<std::string>());
            s.corpus_id = j.value("corpus_id", r.corpus_id);
            s.ratio = r.ratio;
        } else if (j.contains("ratio")) {
            s.corpus_id = j.value("corpus_id", "session-" + std::to_string(out.size() + 1));
            s.ratio = j["ratio"].get<double>();
        } else {
            throw Error(where + ": expected \"ratio\" or \"report\"");
        }
        if (!(s.ratio >= 0.0 && s.ratio <= 1.0)) throw Error(where + ": ratio must be in [0, 1]");
        out.push_back(std::move(s));
    }
    return out;
}

// Subcommands ----------------------------------------------------------------

fs::path cmd_calibrate(const PipelineConfig& config) {
    config.validate();
    require_file(config.paths.reference_embeddings, "reference embeddings");
    const fs::path out_dir = config.paths.output_dir;
    const fs::path calib_path = or_default(config.paths.calibration, out_dir, "calibration.json");
    const fs::path scores_path = out_dir / "reference_scores.jsonl";
    const std::string digest = config.config_digest();
    if (fs::exists(calib_path)) {
        const json existing = read_json_file(calib_path);
        if (existing.value("config_digest", digest) != digest)
            throw Error("digest conflict: " + calib_path.string() + " was produced with config_digest " +
                        existing.value("config_digest", "") + ", current is " + digest);
    }

    Stopwatch clock;
    const EmbeddingSet set = load_embeddings(config.paths.reference_embeddings);
    const CosineIndex index = build_index(set);
    const auto positions =
        sample_positions(set.records.size(), config.reference_count,
                         derive_seed(config.global_seed, "reference-subsample", 0));
    log::info("calibrate_start", {{"reference_docs", set.records.size()},
                                  {"scored_docs", positions.size()},
                                  {"workers", config.workers}});
    const auto scores = score_documents(set, index, positions, config);

    std::vector<double> values;
    for (const auto& s : scores) values.push_back(s.score);
    const std::string ref_id = config.reference_corpus_id.empty()
                                   ? config.paths.reference_embeddings.stem().string()
                                   : config.reference_corpus_id;
    const Calibration calib =
        calibrate_threshold(values, config.threshold_statistic, set.header.retriever_id, ref_id, digest);

    write_file_atomic(scores_path, scores_to_jsonl(scores, config.global_seed));
    json j = calibration_to_json(calib, config.global_seed);
    j["requested_reference_count"] = config.reference_count;
    write_file_atomic(calib_path, pretty(j));
    log::info("calibrate_done", {{"threshold", calib.threshold},
                                 {"reference_count", calib.reference_count},
                                 {"elapsed_ms", clock.elapsed_ms()}});
    return calib_path;
}

fs::path cmd_score(const PipelineConfig& config) {
    config.validate();
    require_file(config.paths.corpus_embeddings, "corpus embeddings");
    const fs::path scores_path = or_default(config.paths.scores, config.paths.output_dir, "scores.jsonl");

    Stopwatch clock;
    const EmbeddingSet set = load_embeddings(config.paths.corpus_embeddings);
    const CosineIndex index = build_index(set);
    std::vector<std::string> ids;
    for (const auto& r : set.records) ids.push_back(r.doc_id);
    const auto chosen = subsample_corpus(ids, config.sampler.subsample_fraction,
                                         derive_seed(config.global_seed, "corpus-subsample", 0));
    std::vector<std::size_t> positions;
    for (const auto& id : chosen) positions.push_back(index.find(id));

    log::info("score_start", {{"corpus_docs", set.records.size()},
                              {"scored_docs", positions.size()},
                              {"workers", config.workers}});
    const auto scores = score_documents(set, index, positions, config);
    write_file_atomic(scores_path, scores_to_jsonl(scores, config.global_seed));

    json meta = provenance(config);
    meta["corpus_id"] = config.corpus_id.empty() ? config.paths.corpus_embeddings.stem().string() : config.corpus_id;
    meta["retriever_id"] = set.header.retriever_id;
    meta["corpus_docs"] = set.records.size();
    meta["scored_docs"] = positions.size();
    meta["subsample_fraction"] = config.sampler.subsample_fraction;
    write_file_atomic(sidecar(scores_path, ".meta.json"), pretty(meta));
    log::info("score_done", {{"elapsed_ms", clock.elapsed_ms()}, {"scored_docs", positions.size()}});
    return scores_path;
}

fs::path cmd_detect(const PipelineConfig& config) {
    config.validate();
    const fs::path scores_path = or_default(config.paths.scores, config.paths.output_dir, "scores.jsonl");
    const fs::path calib_path = or_default(config.paths.calibration, config.paths.output_dir, "calibration.json");
    const fs::path report_path = or_default(config.paths.report, config.paths.output_dir, "report.json");
    require_file(scores_path, "scores");
    require_file(calib_path, "calibration");

    const auto scores = read_scores(scores_path);
    const Calibration calib = read_calibration(calib_path);
    const auto meta = read_scores_meta(scores_path);
    if (meta && !meta->retriever_id.empty() && !calib.retriever_id.empty() && meta->retriever_id != calib.retriever_id)
        throw Error("retriever mismatch: scores from '" + meta->retriever_id + "', calibration for '" +
                    calib.retriever_id + "'");

    const DocFlags flags = classify_documents(scores, calib);
    double sum = 0.0;
    for (const auto& s : scores) sum += s.score;
    const double mean_score = scores.empty() ? 0.0 : sum / static_cast<double>(scores.size());
    std::string corpus_id = config.corpus_id;
    if (corpus_id.empty()) corpus_id = meta ? meta->corpus_id : scores_path.stem().string();
    const std::string retriever_id = meta && !meta->retriever_id.empty() ? meta->retriever_id : calib.retriever_id;
    const CorpusReport report = corpus_report(flags, config.gamma, corpus_id, retriever_id, mean_score);

    const fs::path flags_path = sidecar(report_path, ".flags.jsonl");
    std::string flags_text;
    for (const auto& s : scores) {
        flags_text += json{{"doc_id", s.doc_id}, {"is_ood", flags.at(s.doc_id)}, {"score", s.score}}.dump();
        flags_text += '\n';
    }
    write_file_atomic(flags_path, flags_text);

    json j = {{"corpus_id", report.corpus_id},
              {"retriever_id", report.retriever_id},
              {"total_docs", report.total_docs},
              {"ood_docs", report.ood_docs},
              {"ratio", report.ratio},
              {"gamma", report.gamma},
              {"is_ood", report.is_ood},
              {"mean_score", report.mean_score},
              {"threshold", calib.threshold},
              {"statistic", to_string(calib.statistic)},
              {"per_doc_flags", flags_path.filename().string()},
              {"config_digest", calib.config_digest},
              {"global_seed", config.global_seed},
              {"tool_version", kToolVersion}};
    if (meta) {
        j["subsample_fraction"] = meta->subsample_fraction;
        j["corpus_docs"] = meta->corpus_docs;
    }
    write_file_atomic(report_path, pretty(j));
    log::info("detect_done", {{"ratio", report.ratio}, {"is_ood", report.is_ood}});
    return report_path;
}

fs::path cmd_select(const PipelineConfig& config) {
    if (config.paths.reports.empty()) throw Error("missing input: no reports given");
    for (const auto& p : config.paths.reports) require_file(p, "report");
    std::vector<CorpusReport> reports;
    for (const auto& p : config.paths.reports) reports.push_back(read_report(p));
    const auto ranking = select_retriever(reports);

    json entries = json::array();
    for (const auto& r : ranking)
        entries.push_back({{"retriever_id", r.retriever_id}, {"ratio", r.ratio}, {"mean_score", r.mean_score}});
    json j = {{"corpus_id", reports.front().corpus_id},
              {"selected", ranking.front().retriever_id},
              {"ranking", entries},
              {"global_seed", config.global_seed},
              {"tool_version", kToolVersion},
              {"config_digest", config.config_digest()}};
    const fs::path out = config.paths.output_dir / "ranking.json";
    write_file_atomic(out, pretty(j));
    log::info("select_done", {{"selected", ranking.front().retriever_id}});
    return out;
}

fs::path cmd_evaluate(const PipelineConfig& config) {
    config.validate();
    require_file(config.paths.corpus_embeddings, "corpus embeddings");
    require_file(config.paths.query_embeddings, "query embeddings");
    require_file(config.paths.qrels, "qrels");
    if (!config.paths.scores.empty()) require_file(config.paths.scores, "scores");
    if (!config.paths.report.empty()) require_file(config.paths.report, "report");

    const EmbeddingSet corpus = load_embeddings(config.paths.corpus_embeddings);
    const CosineIndex index = build_index(corpus);
    const EmbeddingSet query_set = load_embeddings(config.paths.query_embeddings);
    std::vector<QueryEmbedding> queries;
    for (const auto& q : query_set.records) queries.push_back({q.doc_id, q.pooled_f64()});
    const Qrels qrels = Qrels::read_tsv(config.paths.qrels);

    const RetrievalRun run = retrieval_run(index, queries, config.eval_cutoff);
    const RecallResult recall = recall_at_k(run, qrels, config.eval_cutoff);
    const auto d2q = d2q_recall(run, qrels);

    std::vector<std::string> judged;
    for (const auto& [doc, qs] : qrels.by_doc())
        if (index.find(doc) != CosineIndex::npos) judged.push_back(doc);

    json j = {{"corpus_id", config.corpus_id.empty() ? config.paths.corpus_embeddings.stem().string() : config.corpus_id},
              {"retriever_id", corpus.header.retriever_id},
              {"cutoff", config.eval_cutoff},
              {"recall_at_k", recall.recall},
              {"evaluated_queries", recall.evaluated_queries},
              {"skipped_queries", recall.skipped_queries},
              {"drr_all", judged.empty() ? json(nullptr) : json(drr(run, qrels, judged))},
              {"drr_ood_subset", nullptr},
              {"ood_subset_size", 0},
              {"quartile_means", nullptr}};

    if (!config.paths.report.empty()) {
        const CorpusReport report = read_report(config.paths.report);
        std::vector<std::string> subset;
        for (const auto& doc : judged)
            if (auto it = report.per_doc_flags.find(doc); it != report.per_doc_flags.end() && it->second)
                subset.push_back(doc);
        j["ood_subset_size"] = subset.size();
        if (!subset.empty()) j["drr_ood_subset"] = drr(run, qrels, subset);
    }
    if (!config.paths.scores.empty()) {
        std::map<std::string, double> score_map;
        for (const auto& s : read_scores(config.paths.scores)) score_map[s.doc_id] = s.score;
        json means = json::array();
        for (double m : quartile_report(score_map, d2q)) means.push_back(std::isfinite(m) ? json(m) : json(nullptr));
        j["quartile_means"] = means;
    }
    if (config.reference_recall) j["robustness_gap"] = robustness_gap(*config.reference_recall, recall.recall);
    j.update(provenance(config));

    const fs::path out = config.paths.output_dir / "metrics.json";
    write_file_atomic(out, pretty(j));
    log::info("evaluate_done", {{"recall_at_k", recall.recall}});
    return out;
}

fs::path cmd_simulate_stream(const PipelineConfig& config) {
    require_file(config.paths.session_manifest, "session manifest");
    const auto sessions = read_session_manifest(config.paths.session_manifest);
    const auto decisions = config.schedule_mode == ScheduleMode::Threshold
                               ? schedule_updates_threshold(sessions, config.gamma)
                               : schedule_updates_budget(sessions, config.budget);
    std::string text;
    for (const auto& d : decisions) {
        json line = {{"session_index", d.session_index},
                     {"corpus_id", d.corpus_id},
                     {"ratio", d.ratio},
                     {"decision", to_string(d.decision)},
                     {"cumulative_updates", d.cumulative_updates},
                     {"mode", config.schedule_mode == ScheduleMode::Threshold ? "threshold" : "budget"}};
        line.update(provenance(config));
        text += line.dump();
        text += '\n';
    }
    const fs::path out = config.paths.output_dir / "decisions.jsonl";
    write_file_atomic(out, text);
    log::info("simulate_stream_done", {{"sessions", decisions.size()},
                                       {"updates", decisions.empty() ? 0 : decisions.back().cumulative_updates}});
    return out;
}

}  // namespace gradnormir
