#include "wpfs/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "wpfs/errors.hpp"

namespace wpfs {

double balanced_accuracy(const std::vector<int>& y, const std::vector<int>& y_pred,
                         std::size_t class_count, std::vector<std::size_t>* absent) {
    if (y.empty()) throw ValueError("balanced_accuracy: empty input");
    if (y.size() != y_pred.size())
        throw ValueError("balanced_accuracy: " + std::to_string(y.size()) + " labels vs " +
                         std::to_string(y_pred.size()) + " predictions");
    std::vector<std::size_t> support(class_count, 0);
    std::vector<std::size_t> hits(class_count, 0);
    for (std::size_t i = 0; i < y.size(); ++i) {
        const int t = y[i];
        if (t < 0 || static_cast<std::size_t>(t) >= class_count)
            throw ValueError("balanced_accuracy: label " + std::to_string(t) + " out of range");
        if (y_pred[i] < 0 || static_cast<std::size_t>(y_pred[i]) >= class_count)
            throw ValueError("balanced_accuracy: prediction " + std::to_string(y_pred[i]) +
                             " out of range");
        ++support[static_cast<std::size_t>(t)];
        if (y_pred[i] == t) ++hits[static_cast<std::size_t>(t)];
    }
    double total = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < class_count; ++c) {
        if (support[c] == 0) {
            if (absent) absent->push_back(c);
            continue;
        }
        total += static_cast<double>(hits[c]) / static_cast<double>(support[c]);
        ++present;
    }
    if (present == 0) throw ValueError("balanced_accuracy: no class present in y");
    return total / static_cast<double>(present);
}

std::vector<int> argmax_rows(const Matrix& probs) {
    std::vector<int> out(probs.rows());
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        const double* r = probs.row(i);
        std::size_t best = 0;
        for (std::size_t j = 1; j < probs.cols(); ++j)
            if (r[j] > r[best]) best = j;
        out[i] = static_cast<int>(best);
    }
    return out;
}

double mean(const std::vector<double>& v) {
    if (v.empty()) throw ValueError("mean: empty input");
    double acc = 0.0;
    for (double x : v) acc += x;
    return acc / static_cast<double>(v.size());
}

double population_std(const std::vector<double>& v) {
    const double m = mean(v);
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return std::sqrt(acc / static_cast<double>(v.size()));
}

std::vector<double> rank_scores(const std::vector<double>& scores) {
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        // positions i..j share the mean rank (ranks are 1-based)
        const double shared = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t q = i; q <= j; ++q) ranks[order[q]] = shared;
        i = j + 1;
    }
    return ranks;
}

std::vector<MethodSummary> aggregate(const std::vector<MethodScores>& per_method) {
    if (per_method.empty()) throw UsageError("aggregate: no methods given");
    for (const auto& m : per_method) {
        if (m.baccs.empty()) throw UsageError("aggregate: method '" + m.method + "' has no runs");
        if (m.fold_plan_digest != per_method.front().fold_plan_digest)
            throw UsageError("aggregate: method '" + m.method +
                             "' was run under a different fold plan");
        if (m.baccs.size() != per_method.front().baccs.size())
            throw UsageError("aggregate: method '" + m.method + "' has a different run count");
    }
    std::vector<double> means;
    means.reserve(per_method.size());
    for (const auto& m : per_method) means.push_back(mean(m.baccs));
    const std::vector<double> ranks = rank_scores(means);

    std::vector<MethodSummary> out;
    out.reserve(per_method.size());
    for (std::size_t i = 0; i < per_method.size(); ++i) {
        MethodSummary s;
        s.method = per_method[i].method;
        s.mean_bacc = means[i];
        s.std_bacc = population_std(per_method[i].baccs);
        s.rank = ranks[i];
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<double> mean_rank_across_datasets(const std::vector<std::vector<double>>& scores) {
    if (scores.empty()) throw UsageError("mean_rank_across_datasets: no datasets");
    const std::size_t methods = scores.front().size();
    std::vector<double> acc(methods, 0.0);
    for (const auto& dataset_scores : scores) {
        if (dataset_scores.size() != methods)
            throw UsageError("mean_rank_across_datasets: ragged score table");
        const std::vector<double> ranks = rank_scores(dataset_scores);
        for (std::size_t m = 0; m < methods; ++m) acc[m] += ranks[m];
    }
    for (double& a : acc) a /= static_cast<double>(scores.size());
    return acc;
}

}  // namespace wpfs
