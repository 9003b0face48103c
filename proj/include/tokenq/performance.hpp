#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tokenq/product_form.hpp"

// Transform-domain performance measures over a built stationary measure:
// joint generating functions of the inactive and present customer counts,
// the time-till-token and sojourn-time transforms via the distributional
// form of Little's law, and moments with Little cross-checks.

namespace tokenq {

enum class TransformPath { Auto, ClosedForm, Truncated };

// Probability that an inactive customer behind prefix S is of class c.
inline double theta(const ModelSpec& spec, ClassId c, TokenSet prefix) {
    const double lu = spec.lambda_u(prefix);
    if (!(lu > 0.0)) return 0.0;
    const bool in_u = (spec.classes[c].tokens & ~prefix) == 0;
    return in_u ? spec.classes[c].rate / lu : 0.0;
}
inline double theta(const ModelSpec& spec, ClassId c, std::span<const TokenId> prefix) {
    TokenSet s = 0;
    for (TokenId t : prefix) s |= bit(t);
    return theta(spec, c, s);
}

// Conditional law of which class holds each active token. The named kinds
// factor over positions; Custom supplies explicit per-tuple class tuples.
struct GProvider {
    GKind kind = GKind::DedicatedIndicator;
    unsigned cos_d = 0;
    std::map<std::vector<TokenId>, std::vector<std::pair<std::vector<ClassId>, double>>>
        table;  // Custom only

    static GProvider dedicated() { return {GKind::DedicatedIndicator, 0, {}}; }
    static GProvider disjoint() { return {GKind::DisjointIndicator, 0, {}}; }
    static GProvider cos_uniform(unsigned d) { return {GKind::RedundancyCosUniform, d, {}}; }
    static GProvider custom(decltype(table) t) { return {GKind::Custom, 0, std::move(t)}; }

    static GProvider for_model(const ModelSpec& spec) {
        switch (spec.g_kind) {
            case GKind::DedicatedIndicator: return dedicated();
            case GKind::DisjointIndicator: return disjoint();
            case GKind::RedundancyCosUniform: return cos_uniform(spec.cos_d);
            default:
                throw ConfigError(
                    "model carries no token-holder class law; supply a custom table");
        }
    }

    bool factored() const { return kind != GKind::Custom; }

    // P(token t is held by class c), independent of the rest of the tuple.
    double weight(const ModelSpec& spec, TokenId t, ClassId c) const {
        const bool compat = contains(spec.classes[c].tokens, t);
        switch (kind) {
            case GKind::DedicatedIndicator:
            case GKind::DisjointIndicator: {
                if (__builtin_popcountll(spec.class_of_token[t]) != 1)
                    throw ConfigError("indicator law needs disjoint class token sets");
                return compat ? 1.0 : 0.0;
            }
            case GKind::RedundancyCosUniform: {
                const double denom = binomial(spec.n_tokens - 1, cos_d - 1);
                return compat ? 1.0 / denom : 0.0;
            }
            default: throw ConfigError("custom law has no per-position weights");
        }
    }

    // sum over class tuples of G * prod_j f(c_j), for per-class factors f
    double weighted_sum(const ModelSpec& spec, const std::vector<TokenId>& tokens,
                        const std::function<double(ClassId)>& f) const {
        if (factored()) {
            double prod = 1.0;
            for (TokenId t : tokens) {
                double pos = 0.0;
                for (ClassId c = 0; c < spec.num_classes(); ++c) {
                    const double w = weight(spec, t, c);
                    if (w > 0.0) pos += w * f(c);
                }
                prod *= pos;
            }
            return prod;
        }
        auto it = table.find(tokens);
        if (it == table.end()) throw ConfigError("custom law misses a tuple entry");
        double sum = 0.0;
        for (const auto& [ctuple, p] : it->second) {
            double prod = p;
            for (ClassId c : ctuple) prod *= f(c);
            sum += prod;
        }
        return sum;
    }

    double normalization(const ModelSpec& spec, const std::vector<TokenId>& tokens) const {
        return weighted_sum(spec, tokens, [](ClassId) { return 1.0; });
    }
};

namespace detail {

// shared driver: pi0 * sum over tuples of pref * prefactor(tuple) * Z(bases)
template <class Bases, class Prefactor>
double transform_sum(const StationaryMeasure& m, TransformPath path, Bases&& bases,
                     Prefactor&& prefactor) {
    const bool force_truncated = (path == TransformPath::Truncated);
    if (path == TransformPath::ClosedForm && !m.spec().eta.is_constant())
        throw DomainError("closed-form path requires a constant eta");
    double sum = 0.0;
    std::vector<double> g;
    for (const auto& ti : m.tuples()) {
        if (ti.pref == 0.0 && !ti.tokens.empty()) continue;
        const double pf = prefactor(ti);
        if (pf == 0.0 && !ti.tokens.empty()) continue;
        g.assign(ti.tokens.size(), 0.0);
        bases(ti, g);
        auto s = series_sum(g, m.spec().eta, m.series_tol(std::abs(ti.pref * pf)),
                            -1, force_truncated);
        sum += ti.pref * pf * s.total;
    }
    return m.pi0() * sum;
}

inline void check_truncated_domain(TransformPath path, const StationaryMeasure& m,
                                   double z, const char* what) {
    const bool truncated =
        path == TransformPath::Truncated ||
        (path == TransformPath::Auto && !m.spec().eta.is_constant());
    if (truncated && std::abs(z) > 1.0 + 1e-12)
        throw DomainError(std::string(what) +
                          ": argument outside the truncated-path domain |z| <= 1");
}

}  // namespace detail

// Joint PGF of the per-class inactive-customer counts.
inline double pgf_N_joint(const StationaryMeasure& m, std::span<const double> z,
                          TransformPath path = TransformPath::Auto) {
    const auto& spec = m.spec();
    if (z.size() != spec.num_classes()) throw DomainError("one argument per class required");
    for (double zc : z) detail::check_truncated_domain(path, m, zc, "pgf_N_joint");
    return detail::transform_sum(
        m, path,
        [&](const TupleInfo& ti, std::vector<double>& g) {
            for (std::size_t j = 0; j < g.size(); ++j) {
                if (!(ti.lambda_u_pre[j] > 0.0)) continue;
                double w = 0.0;
                ClassSet u = spec.u_set(ti.prefix_sets[j]);
                for (ClassId c = 0; c < spec.num_classes(); ++c)
                    if ((u >> c) & 1ull) w += spec.classes[c].rate * z[c];
                g[j] = ti.alphas[j] * (w / ti.lambda_u_pre[j]);
            }
        },
        [](const TupleInfo&) { return 1.0; });
}

// PGF of the total number of inactive customers.
inline double pgf_N(const StationaryMeasure& m, double z,
                    TransformPath path = TransformPath::Auto) {
    detail::check_truncated_domain(path, m, z, "pgf_N");
    return detail::transform_sum(
        m, path,
        [&](const TupleInfo& ti, std::vector<double>& g) {
            for (std::size_t j = 0; j < g.size(); ++j) g[j] = ti.alphas[j] * z;
        },
        [](const TupleInfo&) { return 1.0; });
}

// PGF of the total number of customers present.
inline double pgf_M(const StationaryMeasure& m, double z,
                    TransformPath path = TransformPath::Auto) {
    detail::check_truncated_domain(path, m, z, "pgf_M");
    return detail::transform_sum(
        m, path,
        [&](const TupleInfo& ti, std::vector<double>& g) {
            for (std::size_t j = 0; j < g.size(); ++j) g[j] = ti.alphas[j] * z;
        },
        [&](const TupleInfo& ti) { return std::pow(z, double(ti.tokens.size())); });
}

// Joint PGF of the per-class numbers of customers present, weighted by the
// token-holder class law.
inline double pgf_M_joint(const StationaryMeasure& m, const GProvider& gp,
                          std::span<const double> z,
                          TransformPath path = TransformPath::Auto) {
    const auto& spec = m.spec();
    if (z.size() != spec.num_classes()) throw DomainError("one argument per class required");
    for (double zc : z) detail::check_truncated_domain(path, m, zc, "pgf_M_joint");
    return detail::transform_sum(
        m, path,
        [&](const TupleInfo& ti, std::vector<double>& g) {
            for (std::size_t j = 0; j < g.size(); ++j) {
                if (!(ti.lambda_u_pre[j] > 0.0)) continue;
                double w = 0.0;
                ClassSet u = spec.u_set(ti.prefix_sets[j]);
                for (ClassId c = 0; c < spec.num_classes(); ++c)
                    if ((u >> c) & 1ull) w += spec.classes[c].rate * z[c];
                g[j] = ti.alphas[j] * (w / ti.lambda_u_pre[j]);
            }
        },
        [&](const TupleInfo& ti) {
            return gp.weighted_sum(spec, ti.tokens, [&](ClassId c) { return z[c]; });
        });
}

// LST of the time-till-token of a class-c customer, via the distributional
// form of Little's law applied to the joint inactive-count PGF.
inline double lst_W(const StationaryMeasure& m, ClassId c, double s,
                    TransformPath path = TransformPath::Auto) {
    const auto& spec = m.spec();
    if (c >= spec.num_classes()) throw DomainError("unknown class");
    if (s < 0.0) throw DomainError("lst_W needs s >= 0");
    const double zc = 1.0 - s / spec.classes[c].rate;
    detail::check_truncated_domain(path, m, zc, "lst_W");
    return detail::transform_sum(
        m, path,
        [&](const TupleInfo& ti, std::vector<double>& g) {
            for (std::size_t j = 0; j < g.size(); ++j) {
                if (!(ti.lambda_u_pre[j] > 0.0)) continue;
                const bool waits = (spec.classes[c].tokens & ~ti.prefix_sets[j]) == 0;
                g[j] = ti.alphas[j] * (1.0 - (waits ? s / ti.lambda_u_pre[j] : 0.0));
            }
        },
        [](const TupleInfo&) { return 1.0; });
}

inline double lst_W_overall(const StationaryMeasure& m, double s,
                            TransformPath path = TransformPath::Auto) {
    const auto& spec = m.spec();
    double acc = 0.0;
    for (ClassId c = 0; c < spec.num_classes(); ++c)
        acc += spec.classes[c].rate / spec.lambda_total * lst_W(m, c, s, path);
    return acc;
}

// LST of the sojourn time of a class-c customer; valid only when the model
// certifies that same-class customers depart in arrival order.
inline double lst_S(const StationaryMeasure& m, ClassId c, double s, const GProvider& gp,
                    TransformPath path = TransformPath::Auto) {
    const auto& spec = m.spec();
    if (!spec.fifo_departures)
        throw OrderAssumptionError(
            "sojourn transform needs order-preserving departures per class");
    if (c >= spec.num_classes()) throw DomainError("unknown class");
    if (s < 0.0) throw DomainError("lst_S needs s >= 0");
    const double zeta = (spec.classes[c].rate - s) / spec.classes[c].rate;
    detail::check_truncated_domain(path, m, zeta, "lst_S");
    return detail::transform_sum(
        m, path,
        [&](const TupleInfo& ti, std::vector<double>& g) {
            for (std::size_t j = 0; j < g.size(); ++j) {
                if (!(ti.lambda_u_pre[j] > 0.0)) continue;
                const bool waits = (spec.classes[c].tokens & ~ti.prefix_sets[j]) == 0;
                g[j] = ti.alphas[j] * (1.0 - (waits ? s / ti.lambda_u_pre[j] : 0.0));
            }
        },
        [&](const TupleInfo& ti) {
            return gp.weighted_sum(spec, ti.tokens, [&](ClassId cc) {
                return cc == c ? zeta : 1.0;
            });
        });
}

// Stationary probability that a class-c arrival finds no compatible token.
inline double prob_wait(const StationaryMeasure& m, ClassId c) {
    const auto& spec = m.spec();
    double acc = 0.0;
    for (const auto& ti : m.tuples()) {
        if (ti.tokens.empty() || ti.pref == 0.0) continue;
        const TokenSet used = ti.prefix_sets.back();
        if ((spec.classes[c].tokens & ~used) == 0) acc += ti.pref * ti.z_alpha;
    }
    return m.pi0() * acc;
}

// ---- moments ----

struct PerClassMoments {
    double e_n = 0.0;       // mean inactive customers of this class
    double e_m = 0.0;       // mean customers of this class present
    double e_w = 0.0;       // mean time till token
    double e_s = std::numeric_limits<double>::quiet_NaN();  // mean sojourn, when defined
    double p_wait = 0.0;
    double little_residual = 0.0;  // |E[N^c] - lambda_c E[W_c]| / max(E[N^c], eps)
};

struct MeasureReport {
    std::vector<PerClassMoments> per_class;
    double e_n_total = 0.0;
    double e_m_total = 0.0;
    std::string provenance;  // analytic-closed | analytic-truncated
    double deriv_error_estimate = 0.0;
};

namespace detail {

// Second-order one-sided difference with one Richardson step; fn must be
// smooth near `at`. side=+1 differentiates into increasing arguments.
template <class F>
double deriv_one_sided(F&& f, double at, int side, double h, double* err = nullptr) {
    auto d = [&](double hh) {
        return (-3.0 * f(at) + 4.0 * f(at + side * hh) - f(at + side * 2.0 * hh)) /
               (2.0 * side * hh);
    };
    const double d1 = d(h);
    const double d2 = d(h / 2.0);
    if (err) *err = std::abs(d2 - d1) / 3.0;
    return (4.0 * d2 - d1) / 3.0;
}

}  // namespace detail

inline MeasureReport moments(const StationaryMeasure& m,
                             const std::optional<GProvider>& gp = std::nullopt) {
    const auto& spec = m.spec();
    MeasureReport rep;
    rep.per_class.resize(spec.num_classes());
    const bool closed = spec.eta.is_constant();
    rep.provenance = closed ? "analytic-closed" : "analytic-truncated";

    if (closed) {
        const double ebar = spec.eta.tail;
        for (ClassId c = 0; c < spec.num_classes(); ++c) {
            double en = 0.0, ew = 0.0, em = 0.0, es = 0.0;
            bool have_g = gp.has_value();
            for (const auto& ti : m.tuples()) {
                if (ti.pref == 0.0 && !ti.tokens.empty()) continue;
                double dn = 0.0, dw = 0.0;
                for (std::size_t j = 0; j < ti.tokens.size(); ++j) {
                    if (!(ti.lambda_u_pre[j] > 0.0)) continue;
                    const bool waits = (spec.classes[c].tokens & ~ti.prefix_sets[j]) == 0;
                    if (!waits) continue;
                    const double gfac =
                        (ti.alphas[j] / ebar) / (1.0 - ti.alphas[j] / ebar);
                    dn += gfac * spec.classes[c].rate / ti.lambda_u_pre[j];
                    dw += gfac / ti.lambda_u_pre[j];
                }
                en += ti.pref * ti.z_alpha * dn;
                ew += ti.pref * ti.z_alpha * dw;
                if (have_g) {
                    double held = 0.0;
                    for (TokenId t : ti.tokens) held += gp->weight(spec, t, c);
                    em += ti.pref * ti.z_alpha * (dn + held);
                    es += ti.pref * ti.z_alpha * (dw + held / spec.classes[c].rate);
                }
            }
            auto& pc = rep.per_class[c];
            pc.e_n = m.pi0() * en;
            pc.e_w = m.pi0() * ew;
            if (have_g) {
                pc.e_m = m.pi0() * em;
                if (spec.fifo_departures) pc.e_s = m.pi0() * es;
            }
        }
        double emt = 0.0;
        for (const auto& ti : m.tuples()) {
            if (ti.pref == 0.0 && !ti.tokens.empty()) continue;
            double dz = double(ti.tokens.size());
            for (std::size_t j = 0; j < ti.tokens.size(); ++j)
                dz += (ti.alphas[j] / spec.eta.tail) / (1.0 - ti.alphas[j] / spec.eta.tail);
            emt += ti.pref * ti.z_alpha * dz;
        }
        rep.e_m_total = m.pi0() * emt;
    } else {
        const double h = 1e-4;
        double err_acc = 0.0;
        for (ClassId c = 0; c < spec.num_classes(); ++c) {
            auto& pc = rep.per_class[c];
            double err = 0.0;
            std::vector<double> z(spec.num_classes(), 1.0);
            pc.e_n = detail::deriv_one_sided(
                [&](double v) {
                    z[c] = v;
                    double r = pgf_N_joint(m, z);
                    z[c] = 1.0;
                    return r;
                },
                1.0, -1, h, &err);
            err_acc = std::max(err_acc, err);
            pc.e_w = -detail::deriv_one_sided(
                [&](double v) { return lst_W(m, c, v); }, 0.0, +1,
                h * spec.classes[c].rate, &err);
            err_acc = std::max(err_acc, err);
            if (gp) {
                pc.e_m = detail::deriv_one_sided(
                    [&](double v) {
                        z[c] = v;
                        double r = pgf_M_joint(m, *gp, z);
                        z[c] = 1.0;
                        return r;
                    },
                    1.0, -1, h, &err);
                err_acc = std::max(err_acc, err);
                if (spec.fifo_departures)
                    pc.e_s = -detail::deriv_one_sided(
                        [&](double v) { return lst_S(m, c, v, *gp); }, 0.0, +1,
                        h * spec.classes[c].rate, &err);
                err_acc = std::max(err_acc, err);
            }
        }
        double err_m = 0.0;
        rep.e_m_total = detail::deriv_one_sided([&](double v) { return pgf_M(m, v); },
                                                1.0, -1, h, &err_m);
        rep.deriv_error_estimate = std::max(err_acc, err_m);
    }

    rep.e_n_total = 0.0;
    for (ClassId c = 0; c < spec.num_classes(); ++c) {
        auto& pc = rep.per_class[c];
        pc.p_wait = prob_wait(m, c);
        const double lhs = pc.e_n, rhs = spec.classes[c].rate * pc.e_w;
        pc.little_residual = std::abs(lhs - rhs) / std::max(std::abs(lhs), 1e-300);
        rep.e_n_total += pc.e_n;
    }
    return rep;
}

}  // namespace tokenq
