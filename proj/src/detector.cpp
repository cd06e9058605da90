#include "gradnormir/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "gradnormir/error.hpp"

namespace gradnormir {

std::string to_string(ThresholdStatistic s) { return s == ThresholdStatistic::Mean ? "mean" : "median"; }

ThresholdStatistic parse_statistic(const std::string& s) {
    if (s == "mean") return ThresholdStatistic::Mean;
    if (s == "median") return ThresholdStatistic::Median;
    throw Error("unknown threshold statistic '" + s + "'");
}

std::string to_string(UpdateDecision d) { return d == UpdateDecision::Update ? "update" : "skip"; }

double reference_statistic(std::span<const double> scores, ThresholdStatistic statistic) {
    if (scores.empty()) throw Error("empty reference score list");
    for (double s : scores)
        if (!std::isfinite(s)) throw Error("non-finite reference score");
    if (statistic == ThresholdStatistic::Mean) {
        double sum = 0.0;
        for (double s : scores) sum += s;
        return sum / static_cast<double>(scores.size());
    }
    std::vector<double> sorted(scores.begin(), scores.end());
    const std::size_t mid = (sorted.size() - 1) / 2;  // lower median
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(mid), sorted.end());
    return sorted[mid];
}

Calibration calibrate_threshold(std::span<const double> reference_scores, ThresholdStatistic statistic,
                                std::string retriever_id, std::string reference_corpus_id,
                                std::string config_digest) {
    Calibration c;
    c.threshold = reference_statistic(reference_scores, statistic);
    c.statistic = statistic;
    c.reference_count = reference_scores.size();
    c.retriever_id = std::move(retriever_id);
    c.reference_corpus_id = std::move(reference_corpus_id);
    c.config_digest = std::move(config_digest);
    return c;
}

DocFlags classify_documents(std::span<const GradNormScore> scores, const Calibration& calibration) {
    DocFlags flags;
    for (const auto& s : scores) {
        if (s.config_digest != calibration.config_digest)
            throw Error("config digest mismatch for doc_id '" + s.doc_id + "': scores " + s.config_digest +
                        ", calibration " + calibration.config_digest);
        if (!std::isfinite(s.score)) throw Error("missing or non-finite score for doc_id '" + s.doc_id + "'");
        if (!flags.emplace(s.doc_id, s.score > calibration.threshold).second)
            throw Error("duplicate score for doc_id '" + s.doc_id + "'");
    }
    return flags;
}

CorpusReport corpus_report(const DocFlags& flags, double gamma, std::string corpus_id, std::string retriever_id,
                           double mean_score) {
    if (flags.empty()) throw Error("empty corpus");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw Error("gamma must be in [0, 1]");
    CorpusReport r;
    r.corpus_id = std::move(corpus_id);
    r.retriever_id = std::move(retriever_id);
    r.total_docs = flags.size();
    r.ood_docs = static_cast<std::size_t>(std::count_if(flags.begin(), flags.end(), [](const auto& kv) { return kv.second; }));
    r.ratio = static_cast<double>(r.ood_docs) / static_cast<double>(r.total_docs);
    r.gamma = gamma;
    r.is_ood = r.ratio > gamma;
    r.mean_score = mean_score;
    r.per_doc_flags = flags;
    return r;
}

std::vector<RetrieverRank> select_retriever(std::span<const CorpusReport> reports) {
    if (reports.empty()) throw Error("no reports to select from");
    std::set<std::string> seen;
    std::vector<RetrieverRank> ranking;
    for (const auto& r : reports) {
        if (r.corpus_id != reports.front().corpus_id)
            throw Error("reports cover different corpora: '" + reports.front().corpus_id + "' and '" + r.corpus_id + "'");
        if (!seen.insert(r.retriever_id).second) throw Error("duplicate retriever_id '" + r.retriever_id + "'");
        ranking.push_back({r.retriever_id, r.ratio, r.mean_score});
    }
    std::sort(ranking.begin(), ranking.end(), [](const RetrieverRank& a, const RetrieverRank& b) {
        if (a.ratio != b.ratio) return a.ratio < b.ratio;
        if (a.mean_score != b.mean_score) return a.mean_score < b.mean_score;
        return a.retriever_id < b.retriever_id;
    });
    return ranking;
}

std::vector<SessionDecision> schedule_updates_threshold(std::span<const SessionReport> sessions, double gamma) {
    std::vector<SessionDecision> out;
    std::size_t updates = 0;
    for (std::size_t i = 0; i < sessions.size(); ++i) {
        const bool update = sessions[i].ratio > gamma;
        updates += update ? 1 : 0;
        out.push_back({i + 1, sessions[i].corpus_id, sessions[i].ratio,
                       update ? UpdateDecision::Update : UpdateDecision::Skip, updates});
    }
    return out;
}

std::vector<SessionDecision> schedule_updates_budget(std::span<const SessionReport> sessions, std::size_t budget) {
    if (budget > sessions.size())
        throw Error("budget " + std::to_string(budget) + " exceeds session count " + std::to_string(sessions.size()));
    std::vector<std::size_t> order(sessions.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return sessions[a].ratio > sessions[b].ratio; });
    std::vector<char> chosen(sessions.size(), 0);
    for (std::size_t i = 0; i < budget; ++i) chosen[order[i]] = 1;

    std::vector<SessionDecision> out;
    std::size_t updates = 0;
    for (std::size_t i = 0; i < sessions.size(); ++i) {
        updates += chosen[i];
        out.push_back({i + 1, sessions[i].corpus_id, sessions[i].ratio,
                       chosen[i] ? UpdateDecision::Update : UpdateDecision::Skip, updates});
    }
    return out;
}

}  // namespace gradnormir
