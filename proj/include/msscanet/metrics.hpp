#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace msscanet {

// Pearson linear correlation. Requires equal lengths >= 3 and at least one
// non-constant argument; throws DataError otherwise.
double plcc(const std::vector<double>& x, const std::vector<double>& y);

// Spearman rank-order correlation: Pearson on average-rank vectors (ties
// share the mean of their rank span).
double srocc(const std::vector<double>& x, const std::vector<double>& y);

std::vector<double> average_ranks(const std::vector<double>& x);

struct EvalReport {
    double plcc = 0.0;
    double srocc = 0.0;
    int64_t n = 0;
    bool correlation_defined = true;  // false when predictions were constant
    std::vector<std::pair<double, double>> scatter;  // (predicted, actual)
    double fit_slope = 0.0;      // least-squares fit of actual against predicted
    double fit_intercept = 0.0;
};

// Least-squares line y = slope*x + intercept.
std::pair<double, double> least_squares_fit(const std::vector<double>& x, const std::vector<double>& y);

// Assembles an EvalReport from parallel prediction/ground-truth sequences.
// Undefined correlation (constant predictions, too few samples) flags the
// report instead of throwing.
EvalReport correlation_report(const std::vector<double>& predicted, const std::vector<double>& actual);

}  // namespace msscanet
