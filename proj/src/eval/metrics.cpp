#include "cryda/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>

#include "cryda/errors.hpp"

namespace cryda::metrics {

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) {
        throw ShapeError("auc: got " + std::to_string(scores.size()) + " scores but " +
                         std::to_string(labels.size()) + " labels");
    }
    if (scores.empty()) throw ValueError("auc: empty input");
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 1) {
            ++n_pos;
        } else if (labels[i] == 0) {
            ++n_neg;
        } else {
            throw ParamError("auc: label at index " + std::to_string(i) + " is " +
                             std::to_string(labels[i]) + ", expected 0 or 1");
        }
        if (!std::isfinite(scores[i])) {
            throw ParamError("auc: non-finite score at index " + std::to_string(i));
        }
    }
    if (n_pos == 0 || n_neg == 0) {
        throw ValueError("auc: undefined when only one class is present");
    }

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double pos_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] == 1) pos_rank_sum += avg_rank;
        }
        i = j;
    }
    double u = pos_rank_sum -
               0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::pair<double, double> mean_stderr(const std::vector<double>& values) {
    if (values.size() < 2) {
        throw ValueError("mean_stderr: need at least 2 values, got " +
                         std::to_string(values.size()));
    }
    double mean = 0.0;
    double m2 = 0.0;
    double n = 0.0;
    for (double v : values) {
        if (!std::isfinite(v)) throw ParamError("mean_stderr: non-finite value");
        n += 1.0;
        double delta = v - mean;
        mean += delta / n;
        m2 += delta * (v - mean);
    }
    double var = m2 / (n - 1.0);
    if (var < 0.0) var = 0.0;
    return {mean, std::sqrt(var) / std::sqrt(n)};
}

Histogram make_histogram(const std::vector<double>& values, double lo, double hi,
                         double bin_width) {
    if (!(hi > lo) || !(bin_width > 0.0)) {
        throw ParamError("make_histogram: need hi > lo and bin_width > 0");
    }
    double span = (hi - lo) / bin_width;
    auto n_bins = static_cast<std::int64_t>(std::llround(span));
    if (n_bins < 1 || std::abs(span - static_cast<double>(n_bins)) > 1e-9) {
        throw ParamError("make_histogram: [lo, hi) must be a whole number of bins");
    }

    Histogram h;
    h.edges.resize(static_cast<std::size_t>(n_bins) + 1);
    for (std::int64_t i = 0; i <= n_bins; ++i) {
        h.edges[static_cast<std::size_t>(i)] = lo + static_cast<double>(i) * bin_width;
    }
    h.counts.assign(static_cast<std::size_t>(n_bins), 0);
    for (double v : values) {
        if (!std::isfinite(v)) throw ParamError("make_histogram: non-finite value");
        auto idx = static_cast<std::int64_t>(std::floor((v - lo) / bin_width));
        idx = std::clamp(idx, std::int64_t{0}, n_bins - 1);
        ++h.counts[static_cast<std::size_t>(idx)];
        ++h.total;
    }
    return h;
}

double wasserstein1d(const Histogram& a, const Histogram& b) {
    if (a.edges != b.edges) {
        throw ValueError("wasserstein1d: histograms have different bin edges");
    }
    if (a.edges.size() != a.counts.size() + 1 || b.edges.size() != b.counts.size() + 1) {
        throw ValueError("wasserstein1d: malformed histogram");
    }
    auto check_total = [](const Histogram& h, const char* side) {
        std::int64_t sum = 0;
        for (std::int64_t c : h.counts) {
            if (c < 0) throw ValueError(std::string("wasserstein1d: negative count in ") + side);
            sum += c;
        }
        if (sum != h.total) {
            throw ValueError(std::string("wasserstein1d: counts of ") + side +
                             " do not sum to total");
        }
        if (sum == 0) {
            throw ValueError(std::string("wasserstein1d: ") + side + " histogram is empty");
        }
    };
    check_total(a, "a");
    check_total(b, "b");

    double cdf_a = 0.0;
    double cdf_b = 0.0;
    double dist = 0.0;
    for (int i = 0; i < a.bins(); ++i) {
        cdf_a += static_cast<double>(a.counts[static_cast<std::size_t>(i)]) /
                 static_cast<double>(a.total);
        cdf_b += static_cast<double>(b.counts[static_cast<std::size_t>(i)]) /
                 static_cast<double>(b.total);
        double width = a.edges[static_cast<std::size_t>(i) + 1] - a.edges[static_cast<std::size_t>(i)];
        dist += std::abs(cdf_a - cdf_b) * width;
    }
    return dist;
}

}  // namespace cryda::metrics
