#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "tokenq/model.hpp"
#include "tokenq/product_form.hpp"
#include "tokenq/validation.hpp"

// The continuous-time Markov chain behind a model: forward transitions
// (arrivals, departures with the released token re-offered down the queue),
// the predecessor enumeration with the release/reassignment probabilities,
// balance-equation residuals, and a truncated linear-solve oracle that is
// independent of the product form.

namespace tokenq {

struct Transition {
    enum class Kind { ArrivalInactive, ArrivalActive, DepartureRelease, DepartureReassign };
    QState target;  // for in_transitions this is the predecessor state
    double rate = 0.0;
    Kind kind = Kind::ArrivalInactive;
    TokenId token = 0;  // claimed / departing token
};
using TransitionSet = std::vector<Transition>;

struct SingularSystemError : ModelError {
    using ModelError::ModelError;
};

// Probability that a customer inactive behind the k-th holder cannot be
// served by token T. Zero for an empty prefix, and zero when nobody can be
// waiting there at all.
inline double beta(const ModelSpec& spec, std::span<const TokenId> prefix, TokenId t) {
    TokenSet s = 0;
    for (TokenId p : prefix) {
        if (p == t) throw DomainError("beta: token already in the prefix");
        s |= bit(p);
    }
    const double num = spec.lambda_u(s);
    if (!(num > 0.0)) return 0.0;
    return num / spec.lambda_u(s | bit(t));
}

namespace detail {

inline double ipow(double b, std::uint64_t n) {
    double r = 1.0;
    while (n) {
        if (n & 1) r *= b;
        b *= b;
        n >>= 1;
    }
    return r;
}

}  // namespace detail

// All transitions out of x. Departures are derived forward: the holder at
// position p leaves and its token is offered to the inactive customers
// behind position p in queue order; each one declines with the probability
// that its type cannot use the token, the first taker splits its segment,
// and the token goes back to availability when everyone declines.
inline TransitionSet out_transitions(const ModelSpec& spec, const QState& x) {
    TransitionSet out;
    const std::size_t i = x.active();
    const TokenSet used = x.used();

    const double lam_inactive = spec.lambda_u(used);
    if (lam_inactive > 0.0) {
        QState t = x;
        t.counts.back() += 1;  // lambda_U(empty)=0, so i >= 1 here
        out.push_back({std::move(t), lam_inactive, Transition::Kind::ArrivalInactive, 0});
    }
    for (TokenId tk = 0; tk < spec.n_tokens; ++tk) {
        if (contains(used, tk)) continue;
        const double r = spec.lambda_t(used, tk);
        if (!(r > 0.0)) continue;
        QState t = x;
        t.tokens.push_back(tk);
        t.counts.push_back(0);
        out.push_back({std::move(t), r, Transition::Kind::ArrivalActive, tk});
    }

    for (std::size_t p = 1; p <= i; ++p) {
        const double dep_rate = mu_token(spec, x, p);
        if (!(dep_rate > 0.0)) continue;
        const TokenId tp = x.tokens[p - 1];

        // decline probability per inactive customer of segment q (1-based)
        std::vector<double> decline(i + 1, 1.0);
        for (std::size_t q = p; q <= i; ++q) {
            const TokenSet eq = x.prefix_set(q);
            const double den = spec.lambda_u(eq);
            decline[q] = den > 0.0 ? spec.lambda_u(eq & ~bit(tp)) / den : 1.0;
        }

        double skip_before = 1.0;  // everyone up to segment l-1 declined
        for (std::size_t l = p; l <= i; ++l) {
            const std::uint32_t nl = x.counts[l - 1];
            double at = skip_before * (1.0 - decline[l]);  // taken by customer m of segment l
            for (std::uint32_t m = 1; m <= nl; ++m) {
                if (at > 0.0) {
                    QState t;
                    if (l == p) {
                        t = x;
                        if (m > 1) t.counts[p - 2] += m - 1;  // m>1 implies p>=2 here
                        t.counts[p - 1] = nl - m;
                    } else {
                        t.tokens.reserve(i);
                        t.counts.reserve(i);
                        for (std::size_t q = 1; q < p; ++q) {
                            t.tokens.push_back(x.tokens[q - 1]);
                            t.counts.push_back(q == p - 1 ? x.counts[p - 2] + x.counts[p - 1]
                                                          : x.counts[q - 1]);
                        }
                        for (std::size_t q = p; q <= l - 1; ++q) {
                            t.tokens.push_back(x.tokens[q]);  // old position q+1
                            t.counts.push_back(q == l - 1 ? m - 1 : x.counts[q]);
                        }
                        t.tokens.push_back(tp);
                        t.counts.push_back(nl - m);
                        for (std::size_t q = l + 1; q <= i; ++q) {
                            t.tokens.push_back(x.tokens[q - 1]);
                            t.counts.push_back(x.counts[q - 1]);
                        }
                    }
                    out.push_back({std::move(t), dep_rate * at,
                                   Transition::Kind::DepartureReassign, tp});
                }
                at *= decline[l];
            }
            skip_before *= detail::ipow(decline[l], nl);
        }
        if (skip_before > 0.0) {  // token returns to availability
            QState t;
            t.tokens.reserve(i - 1);
            t.counts.reserve(i - 1);
            for (std::size_t q = 1; q <= i; ++q) {
                if (q == p) continue;
                t.tokens.push_back(x.tokens[q - 1]);
                t.counts.push_back(x.counts[q - 1]);
            }
            if (p >= 2) t.counts[p - 2] += x.counts[p - 1];
            out.push_back(
                {std::move(t), dep_rate * skip_before, Transition::Kind::DepartureRelease, tp});
        }
    }
    return out;
}

namespace detail {

// Predecessor where token tk sat between holders k and k+1 with n inactive
// customers behind it that merge back into segment k.
inline QState release_predecessor(const QState& x, TokenId tk, std::size_t k,
                                  std::uint32_t n) {
    QState y;
    const std::size_t i = x.active();
    y.tokens.reserve(i + 1);
    y.counts.reserve(i + 1);
    for (std::size_t q = 0; q < k; ++q) {
        y.tokens.push_back(x.tokens[q]);
        y.counts.push_back(x.counts[q]);
    }
    if (k >= 1) y.counts[k - 1] = x.counts[k - 1] - n;
    y.tokens.push_back(tk);
    y.counts.push_back(n);
    for (std::size_t q = k; q < i; ++q) {
        y.tokens.push_back(x.tokens[q]);
        y.counts.push_back(x.counts[q]);
    }
    return y;
}

// Predecessor where the holder of T_j (1-based) sat between holders k and
// k+1; after its departure the token was reclaimed by the inactive customer
// that now holds position j.
inline QState shift_predecessor(const QState& x, std::size_t j, std::size_t k,
                                std::uint32_t n) {
    QState y;
    const std::size_t i = x.active();
    const TokenId tj = x.tokens[j - 1];
    y.tokens.reserve(i);
    y.counts.reserve(i);
    for (std::size_t q = 1; q <= i; ++q) {  // 1-based walk over y positions
        if (q <= k) {
            y.tokens.push_back(x.tokens[q - 1]);
            y.counts.push_back(q == k ? x.counts[q - 1] - n : x.counts[q - 1]);
        } else if (q == k + 1) {
            y.tokens.push_back(tj);
            y.counts.push_back(k + 1 == j ? n + 1 + x.counts[j - 1] : n);
        } else if (q <= j) {
            y.tokens.push_back(x.tokens[q - 2]);
            y.counts.push_back(q == j ? x.counts[j - 2] + 1 + x.counts[j - 1]
                                      : x.counts[q - 2]);
        } else {
            y.tokens.push_back(x.tokens[q - 1]);
            y.counts.push_back(x.counts[q - 1]);
        }
    }
    return y;
}

}  // namespace detail

// All transitions into x with their exact rates: the two arrival
// predecessors plus the release and reassignment predecessors with their
// decline-probability products.
inline TransitionSet in_transitions(const ModelSpec& spec, const QState& x) {
    TransitionSet in;
    const std::size_t i = x.active();
    const TokenSet used = x.used();

    if (i >= 1) {
        if (x.counts[i - 1] > 0) {
            QState y = x;
            y.counts[i - 1] -= 1;
            in.push_back({std::move(y), spec.lambda_u(used),
                          Transition::Kind::ArrivalInactive, 0});
        } else {
            QState y = x;
            y.tokens.pop_back();
            y.counts.pop_back();
            const double r = spec.lambda_t(x.prefix_set(i - 1), x.tokens[i - 1]);
            if (r > 0.0)
                in.push_back({std::move(y), r, Transition::Kind::ArrivalActive,
                              x.tokens[i - 1]});
        }
    }

    const double eta_up = spec.eta_at(x.population() + 1);

    // released tokens
    for (TokenId tk = 0; tk < spec.n_tokens; ++tk) {
        if (contains(used, tk)) continue;
        for (std::size_t k = 0; k <= i; ++k) {
            const TokenSet ek = x.prefix_set(k);
            const double mu = eta_up * (spec.k_total(ek | bit(tk)) - spec.k_total(ek));
            if (!(mu > 0.0)) continue;
            const double beta_k =
                spec.lambda_u(ek) > 0.0 ? spec.lambda_u(ek) / spec.lambda_u(ek | bit(tk)) : 0.0;
            double after = 1.0;
            for (std::size_t l = k + 1; l <= i; ++l) {
                const TokenSet el = x.prefix_set(l);
                const double bl = spec.lambda_u(el) > 0.0
                                      ? spec.lambda_u(el) / spec.lambda_u(el | bit(tk))
                                      : 1.0;  // empty segment, exponent 0
                after *= detail::ipow(bl, x.counts[l - 1]);
            }
            const std::uint32_t nk = (k >= 1) ? x.counts[k - 1] : 0;
            for (std::uint32_t n = 0; n <= nk; ++n) {
                const double pr = detail::ipow(beta_k, n) * after;
                if (!(pr > 0.0)) continue;
                in.push_back({detail::release_predecessor(x, tk, k, n), mu * pr,
                              Transition::Kind::DepartureRelease, tk});
            }
        }
    }

    // reassigned tokens
    for (std::size_t j = 1; j <= i; ++j) {
        const TokenId tj = x.tokens[j - 1];
        const TokenSet ejm1 = x.prefix_set(j - 1);
        if (!(spec.lambda_u(ejm1 | bit(tj)) > 0.0)) continue;  // nobody to reclaim tj
        const double bjm1 =
            spec.lambda_u(ejm1) > 0.0 ? spec.lambda_u(ejm1) / spec.lambda_u(ejm1 | bit(tj)) : 0.0;
        const double take = 1.0 - bjm1;
        if (!(take > 0.0)) continue;
        for (std::size_t k = 0; k < j; ++k) {
            const TokenSet ek = x.prefix_set(k);
            const double mu = eta_up * (spec.k_total(ek | bit(tj)) - spec.k_total(ek));
            if (!(mu > 0.0)) continue;
            const double beta_k =
                spec.lambda_u(ek) > 0.0 ? spec.lambda_u(ek) / spec.lambda_u(ek | bit(tj)) : 0.0;
            double mid = 1.0;
            for (std::size_t l = k + 1; l <= j - 1; ++l) {
                const TokenSet el = x.prefix_set(l);
                const double bl = spec.lambda_u(el) > 0.0
                                      ? spec.lambda_u(el) / spec.lambda_u(el | bit(tj))
                                      : 1.0;
                mid *= detail::ipow(bl, x.counts[l - 1]);
            }
            const std::uint32_t nk = (k >= 1) ? x.counts[k - 1] : 0;
            for (std::uint32_t n = 0; n <= nk; ++n) {
                const double pr = detail::ipow(beta_k, n) * mid * take;
                if (!(pr > 0.0)) continue;
                in.push_back({detail::shift_predecessor(x, j, k, n), mu * pr,
                              Transition::Kind::DepartureReassign, tj});
            }
        }
    }
    return in;
}

// |inflow - outflow| / outflow under the weight function pi.
inline double global_balance_residual(const ModelSpec& spec, const QState& x,
                                      const std::function<double(const QState&)>& pi) {
    double inflow = 0.0;
    for (const auto& tr : in_transitions(spec, x)) inflow += tr.rate * pi(tr.target);
    const double outflow = (spec.lambda_total + mu_total(spec, x)) * pi(x);
    return std::abs(inflow - outflow) / outflow;
}

struct PartialBalance {
    double arrival = 0.0;
    std::vector<std::pair<TokenId, double>> release;  // per available token
    double shift = 0.0;
};

// Residuals of the three partial-balance identities the product form
// satisfies: departures vs the arrival predecessors, per-token release
// balance, and reassignment balance.
inline PartialBalance partial_balance_residuals(
    const ModelSpec& spec, const QState& x,
    const std::function<double(const QState&)>& pi) {
    PartialBalance res;
    const std::size_t i = x.active();
    const TokenSet used = x.used();
    auto rel = [](double lhs, double rhs) {
        const double m = std::max(std::abs(lhs), std::abs(rhs));
        return m > 0.0 ? std::abs(lhs - rhs) / m : 0.0;
    };

    double arr_in = 0.0, rel_in_total = 0.0, shift_in = 0.0;
    std::unordered_map<unsigned, double> rel_by_token;
    for (const auto& tr : in_transitions(spec, x)) {
        const double f = tr.rate * pi(tr.target);
        switch (tr.kind) {
            case Transition::Kind::ArrivalInactive:
            case Transition::Kind::ArrivalActive: arr_in += f; break;
            case Transition::Kind::DepartureRelease:
                rel_by_token[tr.token] += f;
                rel_in_total += f;
                break;
            case Transition::Kind::DepartureReassign: shift_in += f; break;
        }
    }
    res.arrival = rel(mu_total(spec, x) * pi(x), arr_in);
    for (TokenId tk = 0; tk < spec.n_tokens; ++tk) {
        if (contains(used, tk)) continue;
        const double lhs = spec.lambda_t(used, tk) * pi(x);
        const double rhs = rel_by_token.count(tk) ? rel_by_token[tk] : 0.0;
        res.release.emplace_back(tk, rel(lhs, rhs));
    }
    res.shift = rel(spec.lambda_u(used) * pi(x), shift_in);
    (void)i;
    return res;
}

// The geometric identity that makes the release balance telescope to the
// claim rate: evaluates the full triple sum, which must equal one.
inline double telescoping_sum(const ModelSpec& spec, std::span<const TokenId> prefix,
                              TokenId t, std::span<const std::uint32_t> counts) {
    const std::size_t i = prefix.size();
    if (counts.size() != i) throw DomainError("counts must match the prefix length");
    auto kset = [&](std::size_t j, bool with_t) {
        TokenSet s = 0;
        for (std::size_t l = 0; l < j; ++l) s |= bit(prefix[l]);
        if (with_t) s |= bit(t);
        return spec.k_total(s);
    };
    double sum = 0.0;
    for (std::size_t k = 0; k <= i; ++k) {
        const double kt = kset(k, true);
        const double k0 = kset(k, false);
        if (!(kt > 0.0)) throw DomainError("telescoping needs k(prefix+t) > 0");
        double term = (kt - k0) / kt;
        for (std::size_t j = k + 1; j <= i; ++j)
            term *= detail::ipow(kset(j, false) / kset(j, true), counts[j - 1] + 1);
        const std::uint32_t nk = (k >= 1) ? counts[k - 1] : 0;
        double geo = 0.0;
        for (std::uint32_t n = 0; n <= nk; ++n) geo += detail::ipow(k0 / kt, n);
        sum += term * geo;
    }
    return sum;
}

// ---- truncated linear-solve oracle ----

struct OracleDistribution {
    std::vector<QState> states;
    std::vector<double> probs;
    std::unordered_map<QState, std::size_t, QStateHash> index;
    unsigned bound = 0;
    double leaked_mass_bound = 0.0;  // product-form bound on the truncated tail

    double prob(const QState& x) const {
        auto it = index.find(x);
        return it == index.end() ? 0.0 : probs[it->second];
    }
};

namespace detail {

// Dense LU with partial pivoting; solves in place, returns false on a
// numerically singular pivot.
inline bool lu_solve(std::vector<double>& a, std::vector<double>& b, std::size_t n) {
    std::vector<std::size_t> piv(n);
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t best = col;
        double mag = std::abs(a[col * n + col]);
        for (std::size_t r = col + 1; r < n; ++r) {
            const double v = std::abs(a[r * n + col]);
            if (v > mag) {
                mag = v;
                best = r;
            }
        }
        if (!(mag > 0.0)) return false;
        if (best != col) {
            for (std::size_t c = 0; c < n; ++c) std::swap(a[col * n + c], a[best * n + c]);
            std::swap(b[col], b[best]);
        }
        const double d = a[col * n + col];
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a[r * n + col] / d;
            if (f == 0.0) continue;
            a[r * n + col] = 0.0;
            for (std::size_t c = col + 1; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
            b[r] -= f * b[col];
        }
        piv[col] = best;
    }
    for (std::size_t r = n; r-- > 0;) {
        double v = b[r];
        for (std::size_t c = r + 1; c < n; ++c) v -= a[r * n + c] * b[c];
        b[r] = v / a[r * n + r];
    }
    return true;
}

}  // namespace detail

inline constexpr std::size_t kDenseSolveLimit = 2500;

// Stationary distribution of the generator restricted to populations <= B
// with a reflecting boundary (arrivals that would leave the box are
// suppressed). Direct dense factorization at small sizes, uniformized power
// iteration beyond.
inline OracleDistribution oracle_solve(const ModelSpec& spec, unsigned bound,
                                       double* tail_bound_out = nullptr) {
    require_valid(spec);
    require_stable(spec);

    OracleDistribution od;
    od.bound = bound;
    od.states = enumerate_states(spec, bound);
    const std::size_t n = od.states.size();
    od.index.reserve(n * 2);
    for (std::size_t s = 0; s < n; ++s) od.index[od.states[s]] = s;

    // edges inside the box
    std::vector<std::vector<std::pair<std::size_t, double>>> edges(n);
    std::vector<double> outrate(n, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
        for (auto& tr : out_transitions(spec, od.states[s])) {
            auto it = od.index.find(tr.target);
            if (it == od.index.end()) continue;  // reflected at the boundary
            edges[s].emplace_back(it->second, tr.rate);
            outrate[s] += tr.rate;
        }
    }

    // irreducibility within the box
    {
        std::vector<char> seen(n, 0);
        std::vector<std::size_t> stack{od.index.at(QState::empty())};
        seen[stack[0]] = 1;
        while (!stack.empty()) {
            auto s = stack.back();
            stack.pop_back();
            for (auto& [t, r] : edges[s])
                if (!seen[t]) {
                    seen[t] = 1;
                    stack.push_back(t);
                }
        }
        std::string missing;
        for (std::size_t s = 0; s < n; ++s)
            if (!seen[s]) {
                missing += " " + od.states[s].to_string();
                if (missing.size() > 200) break;
            }
        if (!missing.empty())
            throw SingularSystemError("truncated chain has unreachable states:" + missing);
    }

    od.probs.assign(n, 0.0);
    if (n <= kDenseSolveLimit) {
        // rows: balance per target state; one row swapped for normalization
        std::vector<double> a(n * n, 0.0);
        for (std::size_t s = 0; s < n; ++s) {
            for (auto& [t, r] : edges[s]) a[t * n + s] += r;
            a[s * n + s] -= outrate[s];
        }
        const std::size_t norm_row = 0;
        for (std::size_t s = 0; s < n; ++s) a[norm_row * n + s] = 1.0;
        std::vector<double> b(n, 0.0);
        b[norm_row] = 1.0;
        if (!detail::lu_solve(a, b, n))
            throw SingularSystemError("singular truncated generator");
        od.probs = std::move(b);
    } else {
        double big = 0.0;
        for (double r : outrate) big = std::max(big, r);
        const double uni = 1.01 * big;
        std::vector<double> pi(n, 1.0 / double(n)), nxt(n, 0.0);
        double resid = 1.0;
        for (unsigned iter = 0; iter < 400000 && resid > 1e-14; ++iter) {
            std::fill(nxt.begin(), nxt.end(), 0.0);
            for (std::size_t s = 0; s < n; ++s) {
                const double stay = 1.0 - outrate[s] / uni;
                nxt[s] += pi[s] * stay;
                for (auto& [t, r] : edges[s]) nxt[t] += pi[s] * (r / uni);
            }
            resid = 0.0;
            for (std::size_t s = 0; s < n; ++s) resid += std::abs(nxt[s] - pi[s]);
            pi.swap(nxt);
        }
        if (resid > 1e-10)
            throw NumericalError("iterative stationary solve did not converge");
        od.probs = std::move(pi);
    }

    double total = 0.0;
    for (double& p : od.probs) {
        if (p < 0.0 && p > -1e-12) p = 0.0;
        if (p < 0.0) throw NumericalError("negative stationary probability from solver");
        total += p;
    }
    for (double& p : od.probs) p /= total;

    try {
        auto m = StationaryMeasure::build(spec, 1e-12, false);
        od.leaked_mass_bound = m.mass_beyond(bound);
    } catch (const ModelError&) {
        od.leaked_mass_bound = std::numeric_limits<double>::quiet_NaN();
    }
    if (tail_bound_out) *tail_bound_out = od.leaked_mass_bound;
    return od;
}

// One-sided total variation against the oracle on the truncated box, charging
// the measure's out-of-box mass as disagreement.
inline double total_variation(const StationaryMeasure& m, const OracleDistribution& od) {
    double acc = 0.0;
    double pf_in_box = 0.0;
    for (std::size_t s = 0; s < od.states.size(); ++s) {
        const double pf = m.stationary_prob(od.states[s]);
        pf_in_box += pf;
        acc += std::abs(pf - od.probs[s]);
    }
    return 0.5 * (acc + (1.0 - pf_in_box));
}

}  // namespace tokenq
