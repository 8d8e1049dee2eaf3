#pragma once

// Statistical kernels used by feature screening. Dependency-free:
// the regularized incomplete gamma and beta functions are evaluated with
// the classic series / Lentz continued-fraction schemes.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "xtree/error.hpp"

namespace xtree::stats {

inline constexpr double kSpecialEps = 1e-12;
inline constexpr int kSpecialMaxIter = 500;

namespace detail {

inline constexpr double kTiny = 1e-300;

// Series for P(s, x); converges quickly for x < s + 1.
inline double gamma_p_series(double s, double x) {
    double term = 1.0 / s;
    double sum = term;
    for (int n = 1; n <= kSpecialMaxIter; ++n) {
        term *= x / (s + n);
        sum += term;
        if (std::abs(term) < std::abs(sum) * kSpecialEps)
            return sum * std::exp(-x + s * std::log(x) - std::lgamma(s));
    }
    throw NumericalError("incomplete gamma series did not converge (s=" + std::to_string(s) +
                         ", x=" + std::to_string(x) + ")");
}

// Continued fraction for Q(s, x); used for x >= s + 1.
inline double gamma_q_cf(double s, double x) {
    double b = x + 1.0 - s;
    double c = 1.0 / kTiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= kSpecialMaxIter; ++i) {
        const double an = -i * (i - s);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < kTiny) d = kTiny;
        c = b + an / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < kSpecialEps) return std::exp(-x + s * std::log(x) - std::lgamma(s)) * h;
    }
    throw NumericalError("incomplete gamma continued fraction did not converge (s=" + std::to_string(s) +
                         ", x=" + std::to_string(x) + ")");
}

inline double beta_cf(double a, double b, double x) {
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kSpecialMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < kSpecialEps) return h;
    }
    throw NumericalError("incomplete beta continued fraction did not converge (a=" + std::to_string(a) +
                         ", b=" + std::to_string(b) + ", x=" + std::to_string(x) + ")");
}

}  // namespace detail

/// Lower regularized incomplete gamma P(s, x), s > 0, x >= 0.
inline double regularized_gamma_p(double s, double x) {
    if (!(s > 0.0) || x < 0.0) throw NumericalError("regularized_gamma_p: domain error");
    if (x == 0.0) return 0.0;
    if (x < s + 1.0) return detail::gamma_p_series(s, x);
    return 1.0 - detail::gamma_q_cf(s, x);
}

/// Upper regularized incomplete gamma Q(s, x) = 1 - P(s, x).
inline double regularized_gamma_q(double s, double x) {
    if (!(s > 0.0) || x < 0.0) throw NumericalError("regularized_gamma_q: domain error");
    if (x == 0.0) return 1.0;
    if (x < s + 1.0) return 1.0 - detail::gamma_p_series(s, x);
    return detail::gamma_q_cf(s, x);
}

/// Regularized incomplete beta I_x(a, b), a, b > 0, x in [0, 1].
inline double regularized_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0) || x < 0.0 || x > 1.0) throw NumericalError("regularized_beta: domain error");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double front =
        std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x));
    if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_cf(a, b, x) / a;
    return 1.0 - front * detail::beta_cf(b, a, 1.0 - x) / b;
}

// ---------------------------------------------------------------------------

struct CorrelationResult {
    double r = 0.0;
    double p_value = 1.0;
    std::size_t n = 0;
};

struct Chi2Result {
    double statistic = 0.0;
    int dof = 1;
    double p_value = 1.0;
};

/// Sample Pearson correlation, clamped to [-1, 1].
inline double pearson_r(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ConfigError("pearson_r: length mismatch");
    if (x.size() < 2) throw NumericalError("pearson_r: need at least 2 samples");
    const double n = double(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw NumericalError("pearson_r: correlation undefined for constant input");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Two-sided p-value of H0: rho = 0 via Student-t with n-2 dof.
inline double pearson_p(double r, std::size_t n) {
    if (n < 3) throw NumericalError("pearson_p: need n >= 3");
    if (std::isnan(r) || std::abs(r) > 1.0) throw NumericalError("pearson_p: |r| must not exceed 1");
    if (std::abs(r) == 1.0) return 0.0;
    if (r == 0.0) return 1.0;
    const double df = double(n - 2);
    const double t2 = r * r * df / (1.0 - r * r);
    return std::clamp(regularized_beta(0.5 * df, 0.5, df / (df + t2)), 0.0, 1.0);
}

inline CorrelationResult pearson(std::span<const double> x, std::span<const double> y) {
    const double r = pearson_r(x, y);
    return {r, pearson_p(r, x.size()), x.size()};
}

/// Chi-square survival function Q(dof/2, x/2).
inline double chi2_sf(double x, int dof) {
    if (dof < 1) throw ConfigError("chi2_sf: dof must be positive");
    if (x < 0.0 || std::isnan(x)) throw ConfigError("chi2_sf: x must be non-negative");
    if (x == 0.0) return 1.0;
    return std::clamp(regularized_gamma_q(0.5 * dof, 0.5 * x), 0.0, 1.0);
}

/// Pearson chi-square test of independence on an R x C table of counts.
inline Chi2Result chi2_statistic(const std::vector<std::vector<double>>& table) {
    const std::size_t rows = table.size();
    if (rows < 2) throw DataError("chi-square table needs at least 2 rows");
    const std::size_t cols = table.front().size();
    if (cols < 2) throw DataError("chi-square table needs at least 2 columns");
    std::vector<double> row_sum(rows, 0.0), col_sum(cols, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
        if (table[i].size() != cols) throw DataError("chi-square table is ragged");
        for (std::size_t j = 0; j < cols; ++j) {
            if (table[i][j] < 0.0) throw DataError("chi-square table has a negative count");
            row_sum[i] += table[i][j];
            col_sum[j] += table[i][j];
            total += table[i][j];
        }
    }
    for (double s : row_sum)
        if (s <= 0.0) throw DataError("chi-square table has an empty row (expected count zero)");
    for (double s : col_sum)
        if (s <= 0.0) throw DataError("chi-square table has an empty column (expected count zero)");
    double stat = 0.0;
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) {
            const double expected = row_sum[i] * col_sum[j] / total;
            const double diff = table[i][j] - expected;
            stat += diff * diff / expected;
        }
    Chi2Result out;
    out.statistic = stat;
    out.dof = static_cast<int>((rows - 1) * (cols - 1));
    out.p_value = chi2_sf(stat, out.dof);
    return out;
}

/// p_adj[i] = min(1, m * p[i]).
inline std::vector<double> bonferroni(std::span<const double> p) {
    std::vector<double> out;
    out.reserve(p.size());
    const double m = double(p.size());
    for (double v : p) {
        if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("bonferroni: p-value outside [0, 1]");
        out.push_back(std::min(1.0, m * v));
    }
    return out;
}

}  // namespace xtree::stats
