#include <doctest.h>

#include "helpers.hpp"
#include "tokenq/simulate.hpp"

using namespace tokenq;
using fixtures::rel_diff;

namespace {

SimConfig quick(std::uint64_t seed, double events = 3e4, unsigned reps = 4) {
    SimConfig cfg;
    cfg.seed = seed;
    cfg.measurement = events;
    cfg.replications = reps;
    return cfg;
}

double zscore(double analytic, const QuantityStat& q) {
    return q.se > 0.0 ? (q.mean - analytic) / q.se : 0.0;
}

}  // namespace

TEST_CASE("identical seeds give bit-identical statistics") {
    auto spec = fixtures::msccc3();
    auto cfg = quick(42, 8000, 2);
    auto a = simulate_token_queue(spec, cfg);
    auto b = simulate_token_queue(spec, cfg);
    CHECK(a.e_m_total.mean == b.e_m_total.mean);
    CHECK(a.e_m_total.se == b.e_m_total.se);
    CHECK(a.total_time == b.total_time);
    REQUIRE(a.occupancy.size() == b.occupancy.size());
    auto ita = a.occupancy.begin();
    auto itb = b.occupancy.begin();
    for (; ita != a.occupancy.end(); ++ita, ++itb) {
        CHECK(ita->first == itb->first);
        CHECK(ita->second.mean == itb->second.mean);
    }
    auto c = simulate_token_queue(spec, quick(43, 8000, 2));
    CHECK(a.e_m_total.mean != c.e_m_total.mean);
}

TEST_CASE("single-server estimates agree with the exact law") {
    auto mm1 = build_mmk_hetero(1, {2.0}, 1.0);
    auto st = simulate_token_queue(mm1, quick(7, 5e4, 4));
    // utilization and mean population
    CHECK(std::abs(zscore(1.0, st.e_m_total)) < 3.0);
    CHECK(std::abs(zscore(0.5, st.e_n_class[0])) < 3.0);
    CHECK(std::abs(zscore(0.5, st.p_wait_class[0])) < 3.0);
    // occupancy of the empty state
    auto it = st.occupancy.find(QState::empty());
    REQUIRE(it != st.occupancy.end());
    CHECK(std::abs(zscore(0.5, it->second)) < 3.0);
}

TEST_CASE("heterogeneous servers: the waiting probability is the model's own") {
    auto spec = fixtures::mmk3();
    auto m = StationaryMeasure::build(spec);
    auto st = simulate_token_queue(spec, quick(11, 6e4, 6));
    // 48/103, not the (lambda/mu)^K shortcut
    CHECK(std::abs(zscore(48.0 / 103.0, st.p_wait_class[0])) < 3.0);
    CHECK(std::abs(st.p_wait_class[0].mean - 8.0 / 27.0) > 10.0 * st.p_wait_class[0].se);
    auto rep = moments(m, GProvider::disjoint());
    CHECK(std::abs(zscore(rep.per_class[0].e_w, st.e_w_class[0])) < 3.5);
}

TEST_CASE("sojourn times against the transform-derived means") {
    auto spec = fixtures::msccc3();
    auto m = StationaryMeasure::build(spec);
    auto rep = moments(m, GProvider::dedicated());
    auto st = simulate_token_queue(spec, quick(13, 6e4, 6));
    for (ClassId c = 0; c < 3; ++c)
        CHECK(std::abs(zscore(rep.per_class[c].e_s, st.e_s_class[c])) < 3.5);
}

TEST_CASE("comparison table flags what it should") {
    auto spec = fixtures::msccc3();
    auto m = StationaryMeasure::build(spec);
    auto rep = moments(m, GProvider::dedicated());
    auto st = simulate_token_queue(spec, quick(17, 4e4, 6));
    auto rows = compare_stats(m, rep, st);
    unsigned flagged = 0;
    for (const auto& r : rows) flagged += r.flagged ? 1 : 0;
    CHECK(flagged == 0);

    // analytic values from a different service rate must be flagged
    auto wrong_spec = build_msccc(2, {0.5, 0.4, 0.3}, 1.4);
    auto wrong_m = StationaryMeasure::build(wrong_spec);
    auto wrong = moments(wrong_m, GProvider::dedicated());
    auto rows_bad = compare_stats(wrong_m, wrong, st);
    unsigned hits = 0;
    for (const auto& r : rows_bad) hits += r.flagged ? 1 : 0;
    CHECK(hits > 0);

    // exact agreement pins every score at zero
    auto self_rows = compare_stats(m, rep, st);
    for (auto& r : self_rows) {
        auto z = make_row(r.quantity, r.simulated, QuantityStat{r.simulated, r.se, 4});
        CHECK(z.z == 0.0);
    }
}

TEST_CASE("arrivals see time averages") {
    auto spec = fixtures::cos32();
    auto st = simulate_token_queue(spec, quick(19, 5e4, 6));
    for (std::size_t p = 0; p < std::min<std::size_t>(5, st.pasta_phi.size()); ++p) {
        const double diff = st.pasta_phi[p].mean - st.time_phi[p].mean;
        const double se =
            std::sqrt(st.pasta_phi[p].se * st.pasta_phi[p].se +
                      st.time_phi[p].se * st.time_phi[p].se);
        if (se > 0.0) CHECK(std::abs(diff / se) < 4.0);
    }
}

TEST_CASE("native replication twins match the token encoding") {
    auto cfg = quick(23, 4e4, 6);
    auto cos = fixtures::cos32();
    auto tok = simulate_token_queue(cos, cfg);
    auto nat = simulate_redundancy_native(3, 2, 1.2, 1.0, RedundancyMode::CancelOnStart, cfg);
    const double se = std::sqrt(tok.e_m_total.se * tok.e_m_total.se +
                                nat.e_m_total.se * nat.e_m_total.se);
    CHECK(std::abs(tok.e_m_total.mean - nat.e_m_total.mean) < 3.5 * se);

    auto coc = fixtures::coc32();
    auto tok2 = simulate_token_queue(coc, cfg);
    auto nat2 =
        simulate_redundancy_native(3, 2, 1.2, 1.0, RedundancyMode::CancelOnCompletion, cfg);
    const double se2 = std::sqrt(tok2.e_m_total.se * tok2.e_m_total.se +
                                 nat2.e_m_total.se * nat2.e_m_total.se);
    CHECK(std::abs(tok2.e_m_total.mean - nat2.e_m_total.mean) < 3.5 * se2);
}

TEST_CASE("native matching twin") {
    auto cfg = quick(29, 3e4, 4);
    auto mt = fixtures::matching2();
    auto tok = simulate_token_queue(mt, cfg);
    auto nat = simulate_matching_native({0.6, 0.5}, {ClassSet{1}, ClassSet{3}},
                                        fixtures::matching_A(), cfg);
    const double se = std::sqrt(tok.e_m_total.se * tok.e_m_total.se +
                                nat.e_m_total.se * nat.e_m_total.se);
    CHECK(std::abs(tok.e_m_total.mean - nat.e_m_total.mean) < 3.5 * se);
}

TEST_CASE("single replication falls back to batch confidence intervals") {
    auto mm1 = build_mmk_hetero(1, {2.0}, 1.0);
    SimConfig cfg;
    cfg.seed = 31;
    cfg.measurement = 6e4;
    cfg.replications = 1;
    cfg.batches = 32;
    auto st = simulate_token_queue(mm1, cfg);
    CHECK(st.e_m_total.n == 32);
    CHECK(std::abs(zscore(1.0, st.e_m_total)) < 4.0);
}

TEST_CASE("unstable models are refused") {
    auto hot = build_mmk_hetero(2, {1.0, 1.0}, 3.0);
    CHECK_THROWS_AS(simulate_token_queue(hot, quick(1)), NotStableError);
}
