#include "wpfs/cross_validation.hpp"

#include <algorithm>
#include <cmath>

#include "wpfs/errors.hpp"
#include "wpfs/rng.hpp"

namespace wpfs {

std::uint64_t FoldPlan::digest() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](std::uint64_t v) {
        for (int b = 0; b < 8; ++b) {
            h ^= (v >> (8 * b)) & 0xFF;
            h *= 1099511628211ULL;
        }
    };
    mix(folds);
    mix(repeats);
    mix(seed);
    for (const Split& s : splits) {
        for (std::size_t i : s.train) mix(i);
        mix(~0ULL);
        for (std::size_t i : s.val) mix(i);
        mix(~0ULL);
        for (std::size_t i : s.test) mix(i);
        mix(~0ULL);
    }
    return h;
}

FoldPlan stratified_cv(const std::vector<int>& y, std::size_t class_count, std::size_t k,
                       std::size_t repeats, double val_fraction, std::uint64_t seed) {
    if (k < 2) throw ValueError("stratified_cv: need at least 2 folds");
    if (repeats < 1) throw ValueError("stratified_cv: need at least 1 repeat");
    if (val_fraction <= 0.0 || val_fraction >= 1.0)
        throw ValueError("stratified_cv: val_fraction must lie in (0, 1)");

    std::vector<std::vector<std::size_t>> by_class(class_count);
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] < 0 || static_cast<std::size_t>(y[i]) >= class_count)
            throw ValueError("stratified_cv: label " + std::to_string(y[i]) + " out of range");
        by_class[static_cast<std::size_t>(y[i])].push_back(i);
    }
    for (std::size_t c = 0; c < class_count; ++c) {
        if (by_class[c].size() < k)
            throw ValueError("stratified_cv: class " + std::to_string(c) + " has only " +
                             std::to_string(by_class[c].size()) + " members, need at least " +
                             std::to_string(k));
    }

    FoldPlan plan;
    plan.folds = k;
    plan.repeats = repeats;
    plan.val_fraction = val_fraction;
    plan.seed = seed;
    plan.splits.reserve(k * repeats);

    for (std::size_t r = 0; r < repeats; ++r) {
        Rng rng(Rng::mix(seed, r), 0xF01D);

        std::vector<std::vector<std::size_t>> folds(k);
        for (std::size_t c = 0; c < class_count; ++c) {
            std::vector<std::size_t> idx = by_class[c];
            rng.shuffle(idx);
            const std::size_t rounds = idx.size() / k;
            std::size_t pos = 0;
            for (std::size_t round = 0; round < rounds; ++round)
                for (std::size_t f = 0; f < k; ++f) folds[f].push_back(idx[pos++]);
            // Remainder goes to the currently smallest folds, lowest index first.
            std::vector<std::size_t> order(k);
            for (std::size_t f = 0; f < k; ++f) order[f] = f;
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                return folds[a].size() < folds[b].size();
            });
            for (std::size_t rem = 0; pos < idx.size(); ++rem) folds[order[rem]].push_back(idx[pos++]);
        }

        for (std::size_t f = 0; f < k; ++f) {
            Split split;
            split.test = folds[f];
            std::sort(split.test.begin(), split.test.end());

            std::vector<std::vector<std::size_t>> pool_by_class(class_count);
            for (std::size_t g = 0; g < k; ++g) {
                if (g == f) continue;
                for (std::size_t i : folds[g])
                    pool_by_class[static_cast<std::size_t>(y[i])].push_back(i);
            }
            for (std::size_t c = 0; c < class_count; ++c) {
                std::vector<std::size_t>& pool = pool_by_class[c];
                rng.shuffle(pool);
                std::size_t take = 0;
                if (pool.size() >= 2) {
                    take = static_cast<std::size_t>(
                        std::floor(val_fraction * static_cast<double>(pool.size()) + 0.5));
                    take = std::min(std::max<std::size_t>(take, 1), pool.size() - 1);
                }
                split.val.insert(split.val.end(), pool.begin(), pool.begin() + static_cast<long>(take));
                split.train.insert(split.train.end(), pool.begin() + static_cast<long>(take),
                                   pool.end());
            }
            std::sort(split.val.begin(), split.val.end());
            std::sort(split.train.begin(), split.train.end());
            plan.splits.push_back(std::move(split));
        }
    }
    return plan;
}

}  // namespace wpfs
