#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace cryda::metrics {

// Area under the ROC curve via the Mann-Whitney U statistic with average
// ranks for ties. Labels must be 0 or 1 and both classes must be present.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Sample mean and standard error, where the standard error is the sample
// standard deviation (n-1 denominator) divided by sqrt(n). Requires n >= 2.
std::pair<double, double> mean_stderr(const std::vector<double>& values);

struct Histogram {
    std::vector<double> edges;         // ascending, bins() + 1 entries
    std::vector<std::int64_t> counts;  // one per bin
    std::int64_t total = 0;

    int bins() const { return static_cast<int>(counts.size()); }
};

// Fixed-width histogram over [lo, hi). Values outside the range fall into
// the nearest edge bin so the total always equals the number of inputs.
Histogram make_histogram(const std::vector<double>& values, double lo, double hi,
                         double bin_width);

// First Wasserstein distance between two normalized histograms that share
// identical bin edges, expressed in the x-axis unit.
double wasserstein1d(const Histogram& a, const Histogram& b);

}  // namespace cryda::metrics
