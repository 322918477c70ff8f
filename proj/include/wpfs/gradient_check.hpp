#pragma once

#include <functional>

#include "wpfs/autograd.hpp"

namespace wpfs {

/// Compares analytic gradients against central finite differences.
///
/// `f(record)` must evaluate the loss from the store's current parameter
/// values. With record=true it additionally runs a backward pass that fills
/// the store's gradient accumulators (the checker zeroes them first). The
/// function must be deterministic: dropout masks and batch statistics have to
/// be frozen by the caller (re-seed the rng inside f, or use eval statistics).
/// Two differing probe evaluations raise UsageError.
///
/// Returns max over all parameter coordinates of
///   |analytic - numeric| / max(1, |analytic|, |numeric|).
double gradient_check(const std::function<double(bool record)>& f, ParameterStore& store,
                      double eps = 1e-5);

}  // namespace wpfs
