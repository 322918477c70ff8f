#pragma once

#include <cstdint>
#include <vector>

namespace wpfs {

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};

struct FoldPlan {
    std::size_t folds = 5;
    std::size_t repeats = 5;
    double val_fraction = 0.1;
    std::uint64_t seed = 0;
    /// repeats * folds entries; split for (repeat r, fold f) is at r*folds+f.
    std::vector<Split> splits;

    const Split& split(std::size_t repeat, std::size_t fold) const {
        return splits[repeat * folds + fold];
    }
    /// Stable identity of the plan, used to refuse aggregating results that
    /// were produced under different splits.
    std::uint64_t digest() const;
};

/// Stratified k-fold cross-validation repeated `repeats` times. Per repeat,
/// each class is shuffled and dealt round-robin into folds (remainders go to
/// the currently smallest folds); a stratified `val_fraction` of each fold's
/// training portion becomes the validation set (at least one sample per
/// class where the class has two or more, never emptying a class from
/// training). Deterministic under the seed. Every class needs at least k
/// members.
FoldPlan stratified_cv(const std::vector<int>& y, std::size_t class_count, std::size_t k = 5,
                       std::size_t repeats = 5, double val_fraction = 0.1,
                       std::uint64_t seed = 0);

}  // namespace wpfs
