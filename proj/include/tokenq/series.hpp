#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "tokenq/model.hpp"

// Sums of the form
//   Z = sum over count vectors (n_1..n_i) of  prod_j g_j^{n_j} * w_N,
//   w_N = prod_{m=1}^{N} 1/eta(i+m),  N = n_1+..+n_i,
// which appear in the normalizing constant and in every transform. Grouping
// by total N turns the inner sum into the complete homogeneous symmetric
// polynomial h_N(g), computed by a running convolution. With eta constant
// the whole sum collapses to prod_j 1/(1 - g_j/eta).

namespace tokenq {

struct SeriesSum {
    double total = 1.0;        // value of Z (within tail_bound when truncated)
    double tail_bound = 0.0;   // certified bound on the un-summed remainder
    double partial_at_cut = 1.0;  // sum restricted to N <= cut (if requested)
    unsigned terms = 0;
};

namespace detail {

// Upper-bound step for the truncated tail: u_N = C(N+i-1,i-1) gbar^N w_N
// dominates |h_N(g) w_N| and obeys u_{N+1} = u_N * gbar (N+i)/(N+1) / eta(i+N+1).
struct TailTracker {
    double gbar;
    std::size_t i;
    const Eta* eta;
    double u = 1.0;  // u_N for current N
    std::size_t N = 0;

    void step() {
        u *= gbar * (double(N + i) / double(N + 1)) / (*eta)(i + N + 1);
        ++N;
    }
    // valid once eta is past its explicit head at the next index
    bool in_tail_region() const { return i + N + 1 > eta->head.size(); }
    double ratio_next() const {
        return gbar * (double(N + i) / double(N + 1)) / (*eta)(i + N + 1);
    }
    double bound_beyond() const {  // bound on sum_{M > N} u_M
        if (gbar == 0.0) return 0.0;
        const double q = ratio_next();
        if (!(q < 1.0)) return std::numeric_limits<double>::infinity();
        return u * q / (1.0 - q);
    }
};

}  // namespace detail

inline SeriesSum series_sum(std::span<const double> g, const Eta& eta, double tol,
                            long cut = -1, bool force_truncated = false,
                            unsigned max_terms = 200000) {
    const std::size_t i = g.size();
    SeriesSum out;
    if (i == 0) {
        out.partial_at_cut = (cut >= 0) ? 1.0 : 1.0;
        return out;
    }

    if (eta.is_constant() && !force_truncated) {
        const double e = eta.tail;
        double prod = 1.0;
        for (double gj : g) {
            const double d = 1.0 - gj / e;
            if (!(d > 0.0))
                throw NumericalError("series diverges: base reaches the eta limit");
            prod /= d;
        }
        out.total = prod;
        if (cut >= 0) {
            // exact partial sum over N <= cut via the same convolution
            std::vector<double> dp(static_cast<std::size_t>(cut) + 1, 0.0);
            dp[0] = 1.0;
            for (double gj : g) {
                const double b = gj / e;
                for (std::size_t n = 1; n < dp.size(); ++n) dp[n] = dp[n] * 1.0 + b * dp[n - 1];
            }
            double partial = 0.0;
            for (double v : dp) partial += v;
            out.partial_at_cut = partial;
        }
        return out;
    }

    // adaptive truncation; dp[j][n] = h over the first j bases at total n
    double gbar = 0.0;
    for (double gj : g) gbar = std::max(gbar, std::abs(gj));
    detail::TailTracker tail{gbar, i, &eta};

    std::vector<std::vector<double>> dp(i + 1);
    for (auto& row : dp) row.reserve(64);
    std::vector<double> w;  // w_N
    w.reserve(64);

    double sum = 0.0;
    double partial = 0.0;
    std::size_t n = 0;
    for (;; ++n) {
        for (std::size_t j = 0; j <= i; ++j) {
            double v;
            if (j == 0)
                v = (n == 0) ? 1.0 : 0.0;
            else
                v = dp[j - 1][n] + (n > 0 ? g[j - 1] * dp[j][n - 1] : 0.0);
            dp[j].push_back(v);
        }
        w.push_back(n == 0 ? 1.0 : w[n - 1] / eta(i + n));
        const double term = dp[i][n] * w[n];
        sum += term;
        if (cut >= 0 && n <= static_cast<std::size_t>(cut)) partial += term;

        if (n > 0) tail.step();
        if (tail.in_tail_region() && (cut < 0 || n >= static_cast<std::size_t>(cut))) {
            const double b = tail.bound_beyond();
            if (b <= tol) {
                out.tail_bound = b;
                break;
            }
        }
        if (n + 1 >= max_terms)
            throw NumericalError("series truncation failed to certify its tail");
    }
    out.total = sum;
    out.terms = static_cast<unsigned>(n + 1);
    out.partial_at_cut = partial;
    return out;
}

}  // namespace tokenq
