#include "fseg/metrics/ttest.hpp"

#include <cmath>

namespace fseg::metrics {

namespace {

double log_beta(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

// Continued fraction for I_x(a,b), modified Lentz algorithm.
double beta_cf(double x, double a, double b) {
    constexpr double tiny = 1e-300;
    constexpr double eps = 1e-15;
    double c = 1.0;
    double d = 1.0 - (a + b) * x / (a + 1.0);
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 300; ++m) {
        const double m2 = 2.0 * m;
        // even step
        double num = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
        d = 1.0 + num * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + num / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        // odd step
        num = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
        d = 1.0 + num * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + num / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) break;
    }
    return h;
}

}  // namespace

double regularized_incomplete_beta(double x, double a, double b) {
    if (!(x >= 0.0 && x <= 1.0) || a <= 0.0 || b <= 0.0)
        throw std::invalid_argument("regularized_incomplete_beta: domain error");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double front = std::exp(a * std::log(x) + b * std::log1p(-x) - log_beta(a, b));
    if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(x, a, b) / a;
    return 1.0 - std::exp(b * std::log1p(-x) + a * std::log(x) - log_beta(a, b)) *
                     beta_cf(1.0 - x, b, a) / b;
}

double student_t_cdf(double t, double v) {
    if (v <= 0.0) throw std::invalid_argument("student_t_cdf: dof must be positive");
    const double x = v / (t * t + v);
    const double half_tail = 0.5 * regularized_incomplete_beta(x, 0.5 * v, 0.5);
    return t >= 0.0 ? 1.0 - half_tail : half_tail;
}

TTestResult t_test_unpaired(std::span<const double> a, std::span<const double> b, bool welch) {
    const std::size_t n1 = a.size(), n2 = b.size();
    if (n1 < 2 || n2 < 2)
        throw std::invalid_argument("t_test_unpaired: each sample needs at least 2 values");

    double m1 = 0.0, m2 = 0.0;
    for (double v : a) m1 += v;
    for (double v : b) m2 += v;
    m1 /= static_cast<double>(n1);
    m2 /= static_cast<double>(n2);

    double ss1 = 0.0, ss2 = 0.0;
    for (double v : a) ss1 += (v - m1) * (v - m1);
    for (double v : b) ss2 += (v - m2) * (v - m2);
    const double var1 = ss1 / static_cast<double>(n1 - 1);
    const double var2 = ss2 / static_cast<double>(n2 - 1);

    double t, df;
    if (welch) {
        const double q1 = var1 / static_cast<double>(n1), q2 = var2 / static_cast<double>(n2);
        const double denom = q1 + q2;
        if (denom == 0.0) {
            if (m1 == m2) return {0.0, 1.0, static_cast<double>(n1 + n2 - 2)};
            throw std::domain_error("t_test_unpaired: zero variance with unequal means");
        }
        t = (m1 - m2) / std::sqrt(denom);
        df = denom * denom /
             (q1 * q1 / static_cast<double>(n1 - 1) + q2 * q2 / static_cast<double>(n2 - 1));
    } else {
        const double pooled =
            (ss1 + ss2) / static_cast<double>(n1 + n2 - 2);
        df = static_cast<double>(n1 + n2 - 2);
        if (pooled == 0.0) {
            if (m1 == m2) return {0.0, 1.0, df};
            throw std::domain_error("t_test_unpaired: zero pooled variance with unequal means");
        }
        t = (m1 - m2) /
            std::sqrt(pooled * (1.0 / static_cast<double>(n1) + 1.0 / static_cast<double>(n2)));
    }
    if (t == 0.0) return {0.0, 1.0, df};
    // two-sided p via the t CDF: p = I_{v/(v+t^2)}(v/2, 1/2)
    const double p = regularized_incomplete_beta(df / (t * t + df), 0.5 * df, 0.5);
    return {t, p, df};
}

}  // namespace fseg::metrics
