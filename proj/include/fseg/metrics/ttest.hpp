#pragma once

#include <initializer_list>
#include <span>
#include <stdexcept>

namespace fseg::metrics {

/// Regularized incomplete beta function I_x(a, b), continued-fraction
/// evaluation (modified Lentz).
double regularized_incomplete_beta(double x, double a, double b);

/// CDF of Student's t distribution with v degrees of freedom.
double student_t_cdf(double t, double v);

struct TTestResult {
    double t;
    double p;  // two-sided
    double df;
};

/// Unpaired two-sided two-sample t-test, pooled variance by default
/// (set welch for the unequal-variance variant). Significance thresholds are
/// the caller's business. Degenerate all-equal samples with equal means give
/// t = 0, p = 1; zero pooled variance with unequal means is an error.
TTestResult t_test_unpaired(std::span<const double> a, std::span<const double> b,
                            bool welch = false);

inline TTestResult t_test_unpaired(std::initializer_list<double> a,
                                   std::initializer_list<double> b, bool welch = false) {
    return t_test_unpaired(std::span<const double>(a.begin(), a.size()),
                           std::span<const double>(b.begin(), b.size()), welch);
}

}  // namespace fseg::metrics
