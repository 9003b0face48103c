#include <doctest.h>

#include "helpers.hpp"
#include "tokenq/validation.hpp"

using namespace tokenq;

namespace {

// two heterogeneous servers where arrivals always grab the fast one first
ModelSpec fastest_first() {
    ModelSpec spec;
    spec.n_tokens = 2;
    spec.classes = {{1.0, bit(0) | bit(1)}};
    std::map<std::uint64_t, double> table;
    table[AssignmentRule::key(0, 0)] = 1.0;            // empty system: fast server
    table[AssignmentRule::key(0, 1)] = 0.0;
    table[AssignmentRule::key(bit(0), 1)] = 1.0;
    table[AssignmentRule::key(bit(1), 0)] = 1.0;
    spec.assignment = AssignmentRule::from_table(std::move(table));
    spec.rates = RateFamily::from_set_function([](TokenSet s) {
        double r = 0.0;
        if (contains(s, 0)) r += 2.0;
        if (contains(s, 1)) r += 1.0;
        return r;
    });
    spec.eta = Eta::constant(1.0);
    spec.finalize();
    return spec;
}

}  // namespace

TEST_CASE("assignment condition: uniform and dedicated rules pass") {
    for (const auto& spec : fixtures::all_models()) {
        CHECK(check_assignment_condition(spec).passed);
        CHECK(check_assignment_condition(spec, AssignmentCheckStrategy::FullPermutations)
                  .passed);
    }
}

TEST_CASE("assignment condition: greedy fastest-server rule fails with a witness") {
    auto spec = fastest_first();
    auto rep = check_assignment_condition(spec);
    CHECK_FALSE(rep.passed);
    REQUIRE_FALSE(rep.violations.empty());
    // the two activation orders give products lambda*lambda vs 0*lambda
    CHECK(rep.violations[0].check == "assignment-condition");

    auto full = check_assignment_condition(spec, AssignmentCheckStrategy::FullPermutations);
    CHECK_FALSE(full.passed);
}

TEST_CASE("both assignment-check strategies agree on small token sets") {
    auto probe = [](const ModelSpec& spec) {
        const bool a = check_assignment_condition(
                           spec, AssignmentCheckStrategy::AdjacentTranspositions)
                           .passed;
        const bool b =
            check_assignment_condition(spec, AssignmentCheckStrategy::FullPermutations)
                .passed;
        CHECK(a == b);
    };
    probe(build_mmk_hetero(4, {1.0, 2.0, 3.0, 4.0}, 5.0));
    probe(build_redundancy_cos(4, 2, 1.0, 1.0));
    probe(build_redundancy_cos(5, 3, 1.0, 1.0));
    probe(fastest_first());
}

TEST_CASE("arrival-rate consistency holds for every subset") {
    for (const auto& spec : fixtures::all_models()) CHECK(check_rate_consistency(spec).passed);

    // evaluate the replication claim-rate formula directly at K=4, d=2
    auto cos = build_redundancy_cos(4, 2, 1.3, 1.0);
    const double lam = 1.3;
    const unsigned K = 4, d = 2;
    for (TokenSet s = 0; s <= cos.all_tokens(); ++s) {
        const unsigned j = popcount(s) + 1;  // position being filled
        for (TokenId t = 0; t < K; ++t) {
            if (contains(s, t)) continue;
            double want = 0.0;
            for (unsigned a = 1; a <= std::min(K - j + 1, d); ++a)
                want += lam / binomial(K, d) / double(a) * binomial(K - j, a - 1) *
                        binomial(j - 1, d - a);
            CHECK(fixtures::rel_diff(cos.lambda_t(s, t), want) < 1e-12);
        }
    }

    // perturbing one table entry breaks the identity with that witness
    auto spec = fastest_first();
    auto rep = check_rate_consistency(spec);
    CHECK(rep.passed);
    spec.assignment.table[AssignmentRule::key(bit(0), 1)] = 1.25;
    auto broken = check_rate_consistency(spec);
    CHECK_FALSE(broken.passed);
    CHECK(broken.violations[0].witness == "{0}");
}

TEST_CASE("order-independent condition") {
    for (const auto& spec : fixtures::all_models()) CHECK(check_oi_condition(spec).passed);

    // order-dependent prefix sums are caught
    std::map<std::vector<TokenId>, double> s_table;
    s_table[{0}] = 1.0;
    s_table[{1}] = 2.0;
    s_table[{0, 1}] = 1.0;
    s_table[{1, 0}] = 1.0;  // k({0,1}) would be 2 one way, 3 the other
    ModelSpec bad;
    bad.n_tokens = 2;
    bad.classes = {{1.0, bit(0) | bit(1)}};
    bad.assignment = AssignmentRule::uniform();
    bad.rates = RateFamily::from_s_table(s_table);
    bad.eta = Eta::constant(1.0);
    bad.finalize();
    CHECK_FALSE(check_oi_condition(bad).passed);
}

TEST_CASE("stability ratio test") {
    auto mm1 = build_mmk_hetero(1, {2.0}, 1.0);
    auto st = check_stability(mm1);
    CHECK(st.verdict == StabilityVerdict::Stable);
    CHECK(st.rho_star == doctest::Approx(0.5).epsilon(1e-12));

    auto mmk = fixtures::mmk3();
    st = check_stability(mmk);
    CHECK(st.verdict == StabilityVerdict::Stable);
    CHECK(st.rho_star == doctest::Approx(4.0 / 6.0).epsilon(1e-12));
    CHECK(st.witness == mmk.all_tokens());

    auto hot = build_mmk_hetero(3, {1.0, 2.0, 3.0}, 7.0);
    st = check_stability(hot);
    CHECK(st.verdict == StabilityVerdict::Unstable);
    CHECK(st.witness == hot.all_tokens());

    auto edge = build_mmk_hetero(3, {1.0, 2.0, 3.0}, 6.0);
    CHECK(check_stability(edge).verdict == StabilityVerdict::Indeterminate);
}

TEST_CASE("stability is monotone in the arrival rates") {
    auto verdict_rank = [](StabilityVerdict v) {
        return v == StabilityVerdict::Stable ? 0 : v == StabilityVerdict::Indeterminate ? 1 : 2;
    };
    for (double gamma : {1.5, 2.0, 4.0, 8.0}) {
        auto base = fixtures::msccc3();
        auto scaled = build_msccc(2, {0.5 * gamma, 0.4 * gamma, 0.3 * gamma}, 1.0);
        CHECK(verdict_rank(check_stability(scaled).verdict) >=
              verdict_rank(check_stability(base).verdict));
    }
}
