#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gradnormir/gradnorm.hpp"

namespace gradnormir {

enum class ThresholdStatistic { Mean, Median };

std::string to_string(ThresholdStatistic s);
ThresholdStatistic parse_statistic(const std::string& s);

struct Calibration {
    std::string retriever_id;
    ThresholdStatistic statistic = ThresholdStatistic::Mean;
    double threshold = 0.0;
    std::size_t reference_count = 0;
    std::string reference_corpus_id;
    std::string config_digest;
};

/// Mean, or lower median for even counts.
double reference_statistic(std::span<const double> scores, ThresholdStatistic statistic);

Calibration calibrate_threshold(std::span<const double> reference_scores,
                                ThresholdStatistic statistic, std::string retriever_id = "",
                                std::string reference_corpus_id = "",
                                std::string config_digest = "");

using DocFlags = std::map<std::string, bool>;

/// flag(d) = score(d) > threshold. Rejects scores whose config_digest
/// differs from the calibration's.
DocFlags classify_documents(std::span<const GradNormScore> scores, const Calibration& calibration);

struct CorpusReport {
    std::string corpus_id;
    std::string retriever_id;
    std::size_t total_docs = 0;
    std::size_t ood_docs = 0;
    double ratio = 0.0;
    double gamma = 0.5;
    bool is_ood = false;
    double mean_score = 0.0;
    DocFlags per_doc_flags;
};

/// r = ood_docs / total_docs; is_ood iff r > gamma.
CorpusReport corpus_report(const DocFlags& flags, double gamma, std::string corpus_id = "",
                           std::string retriever_id = "", double mean_score = 0.0);

struct RetrieverRank {
    std::string retriever_id;
    double ratio = 0.0;
    double mean_score = 0.0;
};

/// Ranks retrievers by r ascending, then mean score ascending, then id.
/// The first entry is the selected retriever.
std::vector<RetrieverRank> select_retriever(std::span<const CorpusReport> reports);

enum class ScheduleMode { Threshold, Budget };
enum class UpdateDecision { Update, Skip };

std::string to_string(UpdateDecision d);

struct SessionReport {
    std::string corpus_id;
    double ratio = 0.0;
};

struct SessionDecision {
    std::size_t session_index = 0;  // 1-based
    std::string corpus_id;
    double ratio = 0.0;
    UpdateDecision decision = UpdateDecision::Skip;
    std::size_t cumulative_updates = 0;
};

/// Online thresholding against gamma.
std::vector<SessionDecision> schedule_updates_threshold(std::span<const SessionReport> sessions,
                                                        double gamma);

/// Retrospective: update exactly the `budget` sessions of highest r,
/// earlier sessions first on ties.
std::vector<SessionDecision> schedule_updates_budget(std::span<const SessionReport> sessions,
                                                     std::size_t budget);

}  // namespace gradnormir
