#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wpfs/matrix.hpp"

namespace wpfs {

/// Mean of per-class recalls. Classes absent from `y` are excluded from the
/// mean; their indices are appended to `absent` when given so callers can
/// warn. Throws on empty input or out-of-range labels.
double balanced_accuracy(const std::vector<int>& y, const std::vector<int>& y_pred,
                         std::size_t class_count, std::vector<std::size_t>* absent = nullptr);

/// Row-wise argmax with ties broken toward the lowest class index.
std::vector<int> argmax_rows(const Matrix& probs);

struct MethodScores {
    std::string method;
    std::vector<double> baccs;        // one per (fold, repeat) run
    std::uint64_t fold_plan_digest = 0;
};

struct MethodSummary {
    std::string method;
    double mean_bacc = 0.0;
    double std_bacc = 0.0;  // population standard deviation
    double rank = 0.0;      // 1 = best; ties share the mean rank
};

/// Per-method mean and std of balanced accuracy plus within-dataset ranks.
/// All inputs must come from the same fold plan.
std::vector<MethodSummary> aggregate(const std::vector<MethodScores>& per_method);

/// Ranks of one score list (higher is better, 1 = best, ties share the mean
/// rank). Exposed for the cross-dataset average-rank table.
std::vector<double> rank_scores(const std::vector<double>& scores);

/// Average rank of each method across datasets; scores[d][m] is method m's
/// score on dataset d.
std::vector<double> mean_rank_across_datasets(const std::vector<std::vector<double>>& scores);

double mean(const std::vector<double>& v);
double population_std(const std::vector<double>& v);

}  // namespace wpfs
