#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "tokenq/model.hpp"

// Structural checks a model must pass before any solver touches it: the
// assignment condition (claim-rate products are permutation invariant), the
// arrival-rate consistency identity, the order-independent condition on the
// service rates, and the stability ratio test.

namespace tokenq {

struct Violation {
    std::string check;
    std::string witness;
    double lhs = 0.0;
    double rhs = 0.0;
};

struct ValidationReport {
    bool passed = true;
    bool sampled = false;  // true when the exhaustive cap forced spot checks
    std::vector<Violation> violations;

    void add(std::string check, std::string witness, double lhs, double rhs) {
        passed = false;
        violations.push_back({std::move(check), std::move(witness), lhs, rhs});
    }
    void merge(const ValidationReport& o) {
        passed = passed && o.passed;
        sampled = sampled || o.sampled;
        violations.insert(violations.end(), o.violations.begin(), o.violations.end());
    }
};

namespace detail {

inline bool close_rel(double a, double b, double tol) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
    return std::abs(a - b) <= tol * scale;
}

inline std::string subset_str(TokenSet s) {
    std::string r = "{";
    bool first = true;
    for (TokenId t = 0; t < 32; ++t)
        if (contains(s, t)) {
            if (!first) r += ',';
            r += std::to_string(t);
            first = false;
        }
    return r + "}";
}

inline std::string tuple_str(const std::vector<TokenId>& v) {
    std::string r = "(";
    for (std::size_t j = 0; j < v.size(); ++j) {
        if (j) r += ',';
        r += std::to_string(v[j]);
    }
    return r + ")";
}

inline double claim_product(const ModelSpec& spec, const std::vector<TokenId>& order) {
    double p = 1.0;
    TokenSet s = 0;
    for (TokenId t : order) {
        p *= spec.lambda_t(s, t);
        s |= bit(t);
    }
    return p;
}

}  // namespace detail

inline constexpr double kValidationTol = 1e-10;
inline constexpr unsigned kExhaustiveTokenCap = 10;

enum class AssignmentCheckStrategy { AdjacentTranspositions, FullPermutations };

// Condition: the product of claim rates along an activation order is the
// same for every ordering of the same token set. Adjacent transpositions
// generate all permutations, so checking the local exchange identity
//   lambda_a(S) lambda_b(S+a) = lambda_b(S) lambda_a(S+b)
// is equivalent to the full check.
inline ValidationReport check_assignment_condition(
    const ModelSpec& spec,
    AssignmentCheckStrategy strategy = AssignmentCheckStrategy::AdjacentTranspositions,
    unsigned exhaustive_cap = kExhaustiveTokenCap) {
    ValidationReport rep;
    const unsigned K = spec.n_tokens;

    if (strategy == AssignmentCheckStrategy::AdjacentTranspositions) {
        auto check_pair = [&](TokenSet s, TokenId a, TokenId b) {
            const double lhs = spec.lambda_t(s, a) * spec.lambda_t(s | bit(a), b);
            const double rhs = spec.lambda_t(s, b) * spec.lambda_t(s | bit(b), a);
            if (!detail::close_rel(lhs, rhs, kValidationTol))
                rep.add("assignment-condition",
                        detail::subset_str(s) + " +" + std::to_string(a) + "," +
                            std::to_string(b),
                        lhs, rhs);
        };
        if (K <= exhaustive_cap) {
            const TokenSet nsub = spec.all_tokens() + 1;
            for (TokenSet s = 0; s < nsub; ++s)
                for (TokenId a = 0; a < K; ++a)
                    for (TokenId b = a + 1; b < K; ++b)
                        if (!contains(s, a) && !contains(s, b)) check_pair(s, a, b);
        } else {
            rep.sampled = true;
            std::mt19937_64 rng(0x746f6b656e71ull);
            for (int iter = 0; iter < 20000; ++iter) {
                TokenSet s = static_cast<TokenSet>(rng()) & spec.all_tokens();
                TokenId a = static_cast<TokenId>(rng() % K);
                TokenId b = static_cast<TokenId>(rng() % K);
                if (a == b || contains(s, a) || contains(s, b)) continue;
                check_pair(s, a, b);
            }
        }
        return rep;
    }

    // Full enumeration of permutations per subset (test/reference strategy).
    if (K > exhaustive_cap) throw ConfigError("full-permutation check exceeds token cap");
    const TokenSet nsub = spec.all_tokens() + 1;
    for (TokenSet s = 1; s < nsub; ++s) {
        std::vector<TokenId> order;
        for (TokenId t = 0; t < K; ++t)
            if (contains(s, t)) order.push_back(t);
        const double canonical = detail::claim_product(spec, order);
        auto perm = order;
        while (std::next_permutation(perm.begin(), perm.end())) {
            const double p = detail::claim_product(spec, perm);
            if (!detail::close_rel(p, canonical, kValidationTol))
                rep.add("assignment-condition", detail::tuple_str(perm), p, canonical);
        }
    }
    return rep;
}

// Total claim rate out of any unavailable-set S equals the rate of arrivals
// that do not go inactive.
inline ValidationReport check_rate_consistency(const ModelSpec& spec) {
    ValidationReport rep;
    const TokenSet nsub = spec.all_tokens() + 1;
    for (TokenSet s = 0; s < nsub; ++s) {
        double total = 0.0;
        for (TokenId t = 0; t < spec.n_tokens; ++t)
            if (!contains(s, t)) total += spec.lambda_t(s, t);
        const double expect = spec.lambda_total - spec.lambda_u(s);
        if (!detail::close_rel(total, expect, kValidationTol))
            rep.add("rate-consistency", detail::subset_str(s), total, expect);
    }
    return rep;
}

// Order-independent condition: nonnegative per-position rates whose prefix
// sums form a permutation-free set function, and a positive eta.
inline ValidationReport check_oi_condition(const ModelSpec& spec,
                                           unsigned eta_probe = 64) {
    ValidationReport rep;
    const unsigned K = spec.n_tokens;

    for (std::size_t j = 1; j <= eta_probe; ++j)
        if (!(spec.eta_at(j) > 0.0))
            rep.add("oi-condition", "eta(" + std::to_string(j) + ")", spec.eta_at(j), 0.0);
    if (!(spec.eta.limit() > 0.0)) rep.add("oi-condition", "eta tail", spec.eta.limit(), 0.0);

    // s_j >= 0 across all prefixes, and k permutation invariance.
    std::vector<TokenId> tuple;
    double k_prev = 0.0;
    auto rec = [&](auto&& self, double acc) -> void {
        TokenSet used = 0;
        for (TokenId t : tuple) used |= bit(t);
        for (TokenId t = 0; t < K; ++t) {
            if (contains(used, t)) continue;
            tuple.push_back(t);
            double s = 0.0;
            bool ok = true;
            try {
                s = spec.s_rate(tuple);
            } catch (const ModelError& e) {
                rep.add("oi-condition", detail::tuple_str(tuple) + " " + e.what(), 0.0, 0.0);
                ok = false;
            }
            if (ok) {
                if (s < -kValidationTol * std::max(1.0, std::abs(acc)))
                    rep.add("oi-condition", "s" + detail::tuple_str(tuple), s, 0.0);
                const double ksum = acc + s;
                const double kset = spec.k_total(used | bit(t));
                if (!detail::close_rel(ksum, kset, kValidationTol))
                    rep.add("oi-condition", "k" + detail::tuple_str(tuple), ksum, kset);
                self(self, ksum);
            }
            tuple.pop_back();
        }
    };
    if (K <= kExhaustiveTokenCap) {
        rec(rec, k_prev);
    } else {
        rep.sampled = true;
        std::mt19937_64 rng(0x6f695f636865636bull);
        for (int iter = 0; iter < 5000; ++iter) {
            std::vector<TokenId> perm(spec.n_tokens);
            for (TokenId t = 0; t < K; ++t) perm[t] = t;
            std::shuffle(perm.begin(), perm.end(), rng);
            const unsigned len = 1 + unsigned(rng() % K);
            perm.resize(len);
            double acc = 0.0;
            TokenSet used = 0;
            for (std::size_t j = 0; j < perm.size(); ++j) {
                acc += spec.s_rate(std::span<const TokenId>(perm.data(), j + 1));
                used |= bit(perm[j]);
            }
            if (!detail::close_rel(acc, spec.k_total(used), kValidationTol))
                rep.add("oi-condition", "k" + detail::tuple_str(perm), acc,
                        spec.k_total(used));
        }
    }
    return rep;
}

inline ValidationReport validate_all(const ModelSpec& spec) {
    ValidationReport rep;
    rep.merge(check_rate_consistency(spec));
    rep.merge(check_assignment_condition(spec));
    rep.merge(check_oi_condition(spec));
    return rep;
}

enum class StabilityVerdict { Stable, Unstable, Indeterminate };

struct StabilityResult {
    StabilityVerdict verdict = StabilityVerdict::Stable;
    double rho_star = 0.0;        // max over reachable nonempty subsets of lambda_U/k
    TokenSet witness = 0;         // a maximizing subset
    double eta_limit = 1.0;
    bool reachable_only = true;   // unreachable token subsets are excluded
};

// Ratio test: the system is stable when lambda_U(S)/k(S) stays below the
// eta limit on every reachable nonempty active set, unstable when some
// subset exceeds it, and indeterminate on equality (the answer then depends
// on how eta approaches its limit).
inline StabilityResult check_stability(const ModelSpec& spec) {
    StabilityResult res;
    res.eta_limit = spec.eta.limit();
    for (TokenSet s : spec.reachable_mask_tab) {
        if (s == 0) continue;
        const double lu = spec.lambda_u(s);
        double ratio;
        if (!(spec.k_total(s) > 0.0)) {
            if (!(lu > 0.0)) continue;
            ratio = std::numeric_limits<double>::infinity();
        } else {
            ratio = lu / spec.k_total(s);
        }
        if (ratio > res.rho_star) {
            res.rho_star = ratio;
            res.witness = s;
        }
    }
    const double tol = 1e-12 * std::max(1.0, res.eta_limit);
    if (res.rho_star > res.eta_limit + tol)
        res.verdict = StabilityVerdict::Unstable;
    else if (res.rho_star >= res.eta_limit - tol)
        res.verdict = StabilityVerdict::Indeterminate;
    else
        res.verdict = StabilityVerdict::Stable;
    return res;
}

// Gate shared by every solver entry point.
inline void require_valid(const ModelSpec& spec) {
    auto rep = validate_all(spec);
    if (!rep.passed) {
        std::string msg = "model fails validation:";
        for (const auto& v : rep.violations) {
            msg += " [" + v.check + " at " + v.witness + "]";
            if (msg.size() > 300) break;
        }
        throw ConfigError(msg);
    }
}

inline void require_stable(const ModelSpec& spec) {
    auto st = check_stability(spec);
    if (st.verdict != StabilityVerdict::Stable)
        throw NotStableError("model is not stable (rho*=" + std::to_string(st.rho_star) +
                             " at " + detail::subset_str(st.witness) + ")");
}

}  // namespace tokenq
