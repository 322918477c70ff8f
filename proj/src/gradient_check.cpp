#include "wpfs/gradient_check.hpp"

#include <algorithm>
#include <cmath>

#include "wpfs/errors.hpp"

namespace wpfs {

double gradient_check(const std::function<double(bool record)>& f, ParameterStore& store,
                      double eps) {
    if (!(eps > 0.0)) throw ValueError("gradient_check: eps must be positive");

    const double probe1 = f(false);
    const double probe2 = f(false);
    if (probe1 != probe2)
        throw UsageError("gradient_check: f is not deterministic (" + std::to_string(probe1) +
                         " vs " + std::to_string(probe2) + ")");

    store.zero_grads();
    f(true);
    std::vector<Matrix> analytic;
    analytic.reserve(store.count());
    for (std::size_t s = 0; s < store.count(); ++s) analytic.push_back(store.slot(s).grad);

    double max_rel = 0.0;
    for (std::size_t s = 0; s < store.count(); ++s) {
        Matrix& value = store.slot(s).value;
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double saved = value[i];
            value[i] = saved + eps;
            const double up = f(false);
            value[i] = saved - eps;
            const double down = f(false);
            value[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic[s][i];
            const double rel =
                std::fabs(a - numeric) / std::max({1.0, std::fabs(a), std::fabs(numeric)});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace wpfs
