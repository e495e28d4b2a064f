#include "msscanet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "msscanet/errors.hpp"

namespace msscanet {

double plcc(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size())
        throw DataError("plcc: sequence lengths differ (" + std::to_string(x.size()) + " vs " +
                        std::to_string(y.size()) + ")");
    const size_t n = x.size();
    if (n < 3) throw DataError("plcc: need at least 3 samples, got " + std::to_string(n));

    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0)
        throw DataError("plcc: undefined correlation (constant input sequence)");
    return sxy / std::sqrt(sxx * syy);
}

std::vector<double> average_ranks(const std::vector<double>& x) {
    const size_t n = x.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n, 0.0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
        const double r = static_cast<double>(i + j + 2) / 2.0;  // 1-based average rank
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

double srocc(const std::vector<double>& x, const std::vector<double>& y) {
    return plcc(average_ranks(x), average_ranks(y));
}

std::pair<double, double> least_squares_fit(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.empty()) throw DataError("least_squares_fit: bad inputs");
    const size_t n = x.size();
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0;
    for (size_t i = 0; i < n; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    if (sxx == 0.0) return {0.0, my};
    const double slope = sxy / sxx;
    return {slope, my - slope * mx};
}

EvalReport correlation_report(const std::vector<double>& predicted, const std::vector<double>& actual) {
    if (predicted.size() != actual.size()) throw DataError("correlation_report: length mismatch");
    EvalReport report;
    report.n = static_cast<int64_t>(predicted.size());
    for (size_t i = 0; i < predicted.size(); ++i) report.scatter.emplace_back(predicted[i], actual[i]);
    try {
        report.plcc = plcc(predicted, actual);
        report.srocc = srocc(predicted, actual);
    } catch (const DataError&) {
        report.correlation_defined = false;
        report.plcc = std::numeric_limits<double>::quiet_NaN();
        report.srocc = std::numeric_limits<double>::quiet_NaN();
    }
    const auto fit = least_squares_fit(predicted, actual);
    report.fit_slope = fit.first;
    report.fit_intercept = fit.second;
    return report;
}

}  // namespace msscanet
