// Acceptance suite: one numbered check per run (argument 1..10) or all in
// sequence. Each criterion prints a single verdict line; details follow
// indented. The exit status is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "tokenq/modelfile.hpp"
#include "tokenq/performance.hpp"
#include "tokenq/product_form.hpp"
#include "tokenq/simulate.hpp"
#include "tokenq/transitions.hpp"

using namespace tokenq;

namespace {

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

std::vector<std::pair<std::string, ModelSpec>> reference_models() {
    return {{"mmk_hetero", fixtures::mmk3()},
            {"msccc", fixtures::msccc3()},
            {"redundancy_cos", fixtures::cos32()},
            {"redundancy_coc", fixtures::coc32()},
            {"matching", fixtures::matching2()}};
}

double normal_quantile(double p) {  // upper-tail quantile by bisection on erfc
    double lo = 0.0, hi = 10.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (0.5 * std::erfc(mid / std::sqrt(2.0)) > p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

// ---- criteria ----

bool criterion_1() {
    bool ok = true;
    for (const auto& [name, spec] : reference_models()) {
        Timer t;
        auto m = StationaryMeasure::build(spec);
        auto od = oracle_solve(spec, 12);
        const double tv = total_variation(m, od);
        const double budget = 1e-6 + od.leaked_mass_bound;
        const bool pass = tv < budget && t.seconds() < 60.0;
        ok = ok && pass;
        std::printf("    %-16s TV=%.3e budget=%.3e states=%zu time=%.2fs %s\n",
                    name.c_str(), tv, budget, od.states.size(), t.seconds(),
                    pass ? "ok" : "FAIL");
    }
    return ok;
}

bool criterion_2() {
    bool ok = true;
    for (const auto& [name, spec] : reference_models()) {
        auto m = StationaryMeasure::build(spec);
        auto pi = [&](const QState& x) { return m.unnormalized_weight(x); };
        double worst = 0.0;
        for (const auto& x : enumerate_states(spec, 8)) {
            worst = std::max(worst, global_balance_residual(spec, x, pi));
            auto pb = partial_balance_residuals(spec, x, pi);
            worst = std::max({worst, pb.arrival, pb.shift});
            for (const auto& [tk, r] : pb.release) worst = std::max(worst, r);
        }
        const bool pass = worst < 1e-10;
        ok = ok && pass;
        std::printf("    %-16s max balance residual %.3e %s\n", name.c_str(), worst,
                    pass ? "ok" : "FAIL");
    }
    return ok;
}

bool criterion_3() {
    // pinned closed forms for the heterogeneous-server queue with
    // lambda=4, mu=(1,2,3): P(W>0) = (lambda/mu)^K and the matching
    // exponential mixture
    auto spec = fixtures::mmk3();
    auto m = StationaryMeasure::build(spec);
    const double lam = 4.0, mu = 6.0;
    const double pinned = std::pow(lam / mu, 3.0);
    const double p_model = prob_wait(m, 0);

    bool ok = true;
    const bool pw_ok = std::abs(p_model - pinned) < 1e-10;
    ok = ok && pw_ok;
    std::printf("    P(W>0): model %.9f vs pinned (lambda/mu)^K %.9f  %s\n", p_model,
                pinned, pw_ok ? "ok" : "FAIL");

    double worst_lst = 0.0;
    for (double s = 0.1; s <= 5.0 + 1e-9; s += 0.49) {
        const double want = 1.0 - pinned + pinned * (mu - lam) / (mu - lam + s);
        worst_lst = std::max(worst_lst, std::abs(lst_W(m, 0, s) - want));
    }
    const bool lst_ok = worst_lst < 1e-10;
    ok = ok && lst_ok;
    std::printf("    waiting LST vs pinned mixture: worst |diff| = %.3e  %s\n", worst_lst,
                lst_ok ? "ok" : "FAIL");

    // conditional geometry of the queue given a wait, with the model's own
    // waiting probability
    const double r = lam / mu;
    double worst_geo = 0.0;
    for (double z = 0.05; z < 1.0; z += 0.0475) {
        const double cond = (pgf_N(m, z) - (1.0 - p_model)) / p_model;
        worst_geo = std::max(worst_geo, std::abs(cond - (1.0 - r) / (1.0 - r * z)));
    }
    const bool geo_ok = worst_geo < 1e-10;
    ok = ok && geo_ok;
    std::printf("    conditional geometric queue law: worst |diff| = %.3e  %s\n",
                worst_geo, geo_ok ? "ok" : "FAIL");

    if (!pw_ok) {
        auto od = oracle_solve(spec, 30);
        double p_oracle = 0.0;
        for (std::size_t i = 0; i < od.states.size(); ++i)
            if (od.states[i].active() == 3) p_oracle += od.probs[i];
        std::printf(
            "    note: the truncated-chain oracle gives P(all busy) = %.9f, matching the\n"
            "    model (48/103 = %.9f); the pinned constant (lambda/mu)^K is inconsistent\n"
            "    with the stationary law it accompanies (see notes/decisions.md).\n",
            p_oracle, 48.0 / 103.0);
    }
    return ok;
}

bool criterion_4() {
    bool ok = true;
    for (const auto& [name, spec] : reference_models()) {
        if (!spec.eta.is_constant()) continue;  // flat-eta models only
        auto m = StationaryMeasure::build(spec);
        double worst = 0.0;
        std::vector<double> z(spec.num_classes());
        for (int i = 1; i <= 20; ++i) {
            const double t = i / 21.0;
            for (ClassId c = 0; c < spec.num_classes(); ++c)
                z[c] = t * (1.0 - 0.3 * double(c) / std::max(1u, spec.num_classes() - 1));
            worst = std::max(worst, std::abs(pgf_N_joint(m, z, TransformPath::ClosedForm) -
                                             pgf_N_joint(m, z, TransformPath::Truncated)));
            worst = std::max(worst, std::abs(pgf_N(m, t, TransformPath::ClosedForm) -
                                             pgf_N(m, t, TransformPath::Truncated)));
            worst = std::max(worst, std::abs(pgf_M(m, t, TransformPath::ClosedForm) -
                                             pgf_M(m, t, TransformPath::Truncated)));
            const double smax = std::min(5.0, 1.9 * spec.classes[0].rate);
            const double s = smax * i / 20.0;
            worst = std::max(worst, std::abs(lst_W(m, 0, s, TransformPath::ClosedForm) -
                                             lst_W(m, 0, s, TransformPath::Truncated)));
        }
        const bool pass = worst < 1e-10;
        ok = ok && pass;
        std::printf("    %-16s closed vs truncated worst |diff| = %.3e %s\n", name.c_str(),
                    worst, pass ? "ok" : "FAIL");
    }
    return ok;
}

bool criterion_5() {
    bool ok = true;
    for (const auto& [name, spec] : reference_models()) {
        auto m = StationaryMeasure::build(spec);
        auto rep = moments(m, GProvider::for_model(spec));
        double worst = 0.0;
        for (ClassId c = 0; c < spec.num_classes(); ++c)
            worst = std::max(worst, rep.per_class[c].little_residual);
        const bool pass = worst < 1e-8;
        ok = ok && pass;
        std::printf("    %-16s worst Little residual %.3e %s\n", name.c_str(), worst,
                    pass ? "ok" : "FAIL");
    }
    return ok;
}

bool criterion_6() {
    Timer total;
    bool ok = true;
    std::uint64_t seed = 20250801;
    for (const auto& [name, spec] : reference_models()) {
        SimConfig cfg;
        cfg.seed = seed++;
        cfg.measurement = 2e5;
        cfg.replications = 8;
        auto m = StationaryMeasure::build(spec);
        auto rep = moments(m, GProvider::for_model(spec));
        auto sim = simulate_token_queue(spec, cfg);

        double worst_counts = 0.0, worst_lst = 0.0;
        unsigned n_rows = 0, n_skipped = 0;
        for (ClassId c = 0; c < spec.num_classes(); ++c) {
            worst_counts = std::max(
                worst_counts, std::abs(make_row("", rep.per_class[c].e_n, sim.e_n_class[c]).z));
            worst_counts = std::max(
                worst_counts,
                std::abs(make_row("", rep.per_class[c].p_wait, sim.p_wait_class[c]).z));
            n_rows += 2;
        }
        worst_counts =
            std::max(worst_counts, std::abs(make_row("", rep.e_m_total, sim.e_m_total).z));
        ++n_rows;
        for (const auto& [s, per] : sim.lst_w) {
            for (ClassId c = 0; c < spec.num_classes(); ++c) {
                try {
                    const double analytic = lst_W(m, c, s);
                    worst_lst = std::max(worst_lst, std::abs(make_row("", analytic, per[c]).z));
                    ++n_rows;
                } catch (const DomainError&) {
                    ++n_skipped;  // outside the truncated-path transform domain
                }
            }
        }
        const double worst_z = std::max(worst_counts, worst_lst);
        const bool pass = worst_z < 3.0;
        ok = ok && pass;
        std::printf("    %-16s worst |z| = %.2f over %u stats (%u outside domain) %s\n",
                    name.c_str(), worst_z, n_rows, n_skipped, pass ? "ok" : "FAIL");
        if (!pass && !spec.eta.is_constant() && worst_counts < 3.0) {
            std::printf(
                "      counts/means agree (worst |z| = %.2f); only the waiting-transform\n"
                "      rows deviate. With a population-modulated service pace the\n"
                "      transform route assumes a waiting customer's delay is unaffected\n"
                "      by later arrivals, which fails here; an exact first-passage\n"
                "      computation confirms the simulated values (notes/decisions.md).\n",
                worst_counts);
        }
    }

    // native twins against the token encoding, simultaneous intervals over
    // every state with visible mass
    for (int variant = 0; variant < 2; ++variant) {
        SimConfig cfg;
        cfg.seed = seed++;
        cfg.measurement = 2e5;
        cfg.replications = 8;
        auto spec = variant == 0 ? fixtures::cos32() : fixtures::coc32();
        auto tok = simulate_token_queue(spec, cfg);
        auto nat = simulate_redundancy_native(3, 2, 1.2, 1.0,
                                              variant == 0
                                                  ? RedundancyMode::CancelOnStart
                                                  : RedundancyMode::CancelOnCompletion,
                                              cfg);
        std::vector<QState> shared;
        for (const auto& [x, q] : tok.occupancy)
            if (q.mean > 1e-3 || (nat.occupancy.count(x) && nat.occupancy.at(x).mean > 1e-3))
                shared.push_back(x);
        const double zq = normal_quantile(0.025 / double(std::max<std::size_t>(1, shared.size())));
        bool pass = true;
        double worst = 0.0;
        for (const auto& x : shared) {
            const auto a = tok.occupancy.count(x) ? tok.occupancy.at(x) : QuantityStat{};
            const auto b = nat.occupancy.count(x) ? nat.occupancy.at(x) : QuantityStat{};
            const double se = std::sqrt(a.se * a.se + b.se * b.se);
            if (!(se > 0.0)) continue;
            const double zz = std::abs(a.mean - b.mean) / se;
            worst = std::max(worst, zz);
            if (zz > zq) pass = false;
        }
        ok = ok && pass;
        std::printf("    %-16s native vs token: %zu states, worst z %.2f (cutoff %.2f) %s\n",
                    variant == 0 ? "redundancy_cos" : "redundancy_coc", shared.size(), worst,
                    zq, pass ? "ok" : "FAIL");
    }
    const bool in_time = total.seconds() < 300.0;
    std::printf("    total simulation time %.1fs %s\n", total.seconds(),
                in_time ? "ok" : "FAIL");
    return ok && in_time;
}

bool criterion_7() {
    OIQueueSpec oi;
    oi.rates = {0.5, 0.4, 0.3};
    oi.k_oi = [](std::span<const unsigned> counts) {
        unsigned distinct = 0;
        for (unsigned c : counts)
            if (c > 0) ++distinct;
        return double(std::min(distinct, 2u));
    };
    oi.eta = Eta::constant(1.0);
    auto oim = OIMeasure::build(oi);
    auto ms = fixtures::msccc3();
    auto msm = StationaryMeasure::build(ms);
    std::vector<unsigned> caps = {1, 1, 1};
    double worst = 0.0;
    for (const auto& x : enumerate_states(ms, 6)) {
        LabeledQState xl;
        for (auto t : x.tokens) xl.labels.push_back(t);
        xl.counts = x.counts;
        worst = std::max(worst, std::abs(oi_label_prob(oim, xl, caps) - msm.stationary_prob(x)));
    }
    const bool agg_ok = worst < 1e-12;
    std::printf("    unit-cap embedding vs direct law: worst |diff| = %.3e %s\n", worst,
                agg_ok ? "ok" : "FAIL");

    OIQueueSpec ec;
    ec.rates = {1.0};
    ec.k_oi = [](std::span<const unsigned> c) { return double(std::min(c[0], 3u)) * 0.5; };
    ec.eta = Eta::constant(1.0);
    auto ecm = OIMeasure::build(ec);
    auto mmk = build_mmk_hetero(3, {0.5, 0.5, 0.5}, 1.0);
    auto mmkm = StationaryMeasure::build(mmk);
    std::vector<double> occ(13, 0.0);
    for (const auto& x : enumerate_states(mmk, 12)) occ[x.population()] += mmkm.stationary_prob(x);
    double worst_ec = 0.0;
    for (unsigned n = 0; n <= 12; ++n) {
        std::vector<ClassId> seq(n, 0);
        worst_ec = std::max(worst_ec, std::abs(ecm.prob(seq) - occ[n]));
    }
    const bool ec_ok = worst_ec < 1e-10;
    std::printf("    saturated-rate reduction vs equal-rate servers: worst |diff| = %.3e %s\n",
                worst_ec, ec_ok ? "ok" : "FAIL");
    return agg_ok && ec_ok;
}

bool criterion_8() {
    const double lam = 1.2, mu = 1.0;
    auto coc = build_redundancy_coc(3, 2, lam, mu);
    const auto subsets = subsets_of_size(3, 2);
    std::vector<ClassSet> compat;
    for (unsigned srv = 0; srv < 3; ++srv) {
        ClassSet cs = 0;
        for (unsigned c = 0; c < subsets.size(); ++c)
            if (contains(subsets[c], srv)) cs |= ClassSet{1} << c;
        compat.push_back(cs);
    }
    auto match = build_matching(std::vector<double>(3, lam / 3.0), compat, Eta::constant(mu));
    auto m_c = StationaryMeasure::build(coc);
    auto m_m = StationaryMeasure::build(match);
    double worst = 0.0;
    for (const auto& x : enumerate_states(coc, 12))
        worst = std::max(worst, std::abs(m_c.stationary_prob(x) - m_m.stationary_prob(x)));
    const bool pass = worst < 1e-12;
    std::printf("    completion-cancel vs matching reduction: worst |diff| = %.3e %s\n",
                worst, pass ? "ok" : "FAIL");
    return pass;
}

bool criterion_9() {
    std::mt19937_64 rng(0x5eedu);
    bool ok = true;
    for (const auto& [name, spec] : reference_models()) {
        double worst = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            std::vector<TokenId> perm(spec.n_tokens);
            for (TokenId t = 0; t < spec.n_tokens; ++t) perm[t] = t;
            std::shuffle(perm.begin(), perm.end(), rng);
            const unsigned len = unsigned(rng() % spec.n_tokens);
            std::vector<TokenId> prefix(perm.begin(), perm.begin() + len);
            const TokenId t = perm[len];
            std::vector<std::uint32_t> counts(len);
            for (auto& n : counts) n = std::uint32_t(rng() % 5);
            worst = std::max(worst,
                             std::abs(telescoping_sum(spec, prefix, t, counts) - 1.0));
        }
        const bool pass = worst < 1e-12;
        ok = ok && pass;
        std::printf("    %-16s worst |sum - 1| = %.3e %s\n", name.c_str(), worst,
                    pass ? "ok" : "FAIL");
    }
    return ok;
}

bool criterion_10() {
    auto probe = [](double lam) {
        return check_stability(build_mmk_hetero(3, {1.0, 2.0, 3.0}, lam));
    };
    auto s1 = probe(5.99);
    auto s2 = probe(6.01);
    auto s3 = probe(6.00);
    const TokenSet full = (TokenSet{1} << 3) - 1;
    const bool pass = s1.verdict == StabilityVerdict::Stable &&
                      s2.verdict == StabilityVerdict::Unstable &&
                      s3.verdict == StabilityVerdict::Indeterminate &&
                      s1.witness == full && s2.witness == full && s3.witness == full;
    std::printf("    5.99 -> %s, 6.01 -> %s, 6.00 -> %s, witness always the full set: %s\n",
                s1.verdict == StabilityVerdict::Stable ? "stable" : "?",
                s2.verdict == StabilityVerdict::Unstable ? "unstable" : "?",
                s3.verdict == StabilityVerdict::Indeterminate ? "indeterminate" : "?",
                pass ? "ok" : "FAIL");
    return pass;
}

struct Criterion {
    int id;
    const char* title;
    std::function<bool()> run;
};

const std::vector<Criterion>& criteria() {
    static const std::vector<Criterion> cs = {
        {1, "stationary law vs truncated-chain oracle (TV at B=12)", criterion_1},
        {2, "global and partial balance residuals (phi <= 8)", criterion_2},
        {3, "pinned heterogeneous-server closed forms", criterion_3},
        {4, "flat-eta fast path vs general truncated path", criterion_4},
        {5, "Little's-law consistency per class", criterion_5},
        {6, "simulation concordance and native twins", criterion_6},
        {7, "order-independent embedding reductions", criterion_7},
        {8, "completion-cancel / matching equivalence", criterion_8},
        {9, "release-balance telescoping identity", criterion_9},
        {10, "stability classifier sweep", criterion_10},
    };
    return cs;
}

}  // namespace

int main(int argc, char** argv) {
    int only = 0;
    if (argc > 1) only = std::atoi(argv[1]);
    int failures = 0;
    for (const auto& c : criteria()) {
        if (only != 0 && c.id != only) continue;
        std::printf("criterion %2d: %s\n", c.id, c.title);
        bool ok = false;
        try {
            ok = c.run();
        } catch (const std::exception& e) {
            std::printf("    exception: %s\n", e.what());
        }
        std::printf("[%s] criterion %d\n", ok ? "PASS" : "FAIL", c.id);
        if (!ok) ++failures;
    }
    return failures;
}
