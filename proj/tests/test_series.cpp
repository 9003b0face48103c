#include <doctest.h>

#include <array>

#include "helpers.hpp"
#include "tokenq/series.hpp"

using namespace tokenq;

namespace {

// direct nested summation, the reference for small cases
double brute(std::span<const double> g, const Eta& eta, unsigned cap) {
    const std::size_t i = g.size();
    std::vector<unsigned> n(i, 0);
    double total = 0.0;
    auto rec = [&](auto&& self, std::size_t pos) -> void {
        if (pos == i) {
            double term = 1.0;
            unsigned sum = 0;
            for (std::size_t j = 0; j < i; ++j) {
                term *= std::pow(g[j], double(n[j]));
                sum += n[j];
            }
            for (unsigned m = 1; m <= sum; ++m) term /= eta(i + m);
            total += term;
            return;
        }
        for (unsigned v = 0; v <= cap; ++v) {
            n[pos] = v;
            self(self, pos + 1);
        }
        n[pos] = 0;
    };
    rec(rec, 0);
    return total;
}

}  // namespace

TEST_CASE("geometric base cases") {
    const std::array<double, 1> g{0.5};
    auto s = series_sum(g, Eta::constant(1.0), 1e-14);
    CHECK(s.total == doctest::Approx(2.0).epsilon(1e-13));

    auto t = series_sum(g, Eta::constant(1.0), 1e-14, -1, true);
    CHECK(t.total == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(t.tail_bound <= 1e-14);

    const std::array<double, 1> neg{-0.5};
    CHECK(series_sum(neg, Eta::constant(1.0), 1e-14).total ==
          doctest::Approx(1.0 / 1.5).epsilon(1e-13));
    CHECK(series_sum(neg, Eta::constant(1.0), 1e-14, -1, true).total ==
          doctest::Approx(1.0 / 1.5).epsilon(1e-12));

    const std::array<double, 0> none{};
    CHECK(series_sum(none, Eta::constant(1.0), 1e-14).total == 1.0);
}

TEST_CASE("two bases against nested summation") {
    const std::array<double, 2> g{0.3, 0.6};
    const double want = brute(g, Eta::constant(1.0), 160);
    CHECK(series_sum(g, Eta::constant(1.0), 1e-14).total ==
          doctest::Approx(want).epsilon(1e-12));
    CHECK(series_sum(g, Eta::constant(1.0), 1e-14, -1, true).total ==
          doctest::Approx(want).epsilon(1e-12));

    // restricted mass below a population cut: enumerate n1+n2 <= 4 directly
    auto s = series_sum(g, Eta::constant(1.0), 1e-14, 4);
    double exact = 0.0;
    for (unsigned a = 0; a <= 4; ++a)
        for (unsigned b = 0; a + b <= 4; ++b)
            exact += std::pow(0.3, a) * std::pow(0.6, b);
    CHECK(s.partial_at_cut == doctest::Approx(exact).epsilon(1e-12));
}

TEST_CASE("population-dependent factors") {
    Eta eta;
    eta.head = {2.0, 1.5};
    eta.tail = 1.2;
    const std::array<double, 1> g{0.8};
    const double want = brute(g, eta, 400);
    auto s = series_sum(g, eta, 1e-13);
    CHECK(s.total == doctest::Approx(want).epsilon(1e-11));
    CHECK(s.tail_bound <= 1e-13);

    const std::array<double, 2> g2{0.5, 0.9};
    const double want2 = brute(g2, eta, 220);
    CHECK(series_sum(g2, eta, 1e-13).total == doctest::Approx(want2).epsilon(1e-11));
}

TEST_CASE("divergence is reported, not silently wrong") {
    const std::array<double, 1> g{1.0};
    CHECK_THROWS_AS(series_sum(g, Eta::constant(1.0), 1e-12), NumericalError);
    CHECK_THROWS_AS(series_sum(g, Eta::constant(1.0), 1e-12, -1, true), NumericalError);
}
