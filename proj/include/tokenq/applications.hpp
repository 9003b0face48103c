#pragma once

#include <map>
#include <numeric>
#include <vector>

#include "tokenq/model.hpp"
#include "tokenq/validation.hpp"

// Ready-made model builders: heterogeneous M/M/K, the MSCCC queue,
// redundancy-d with cancel-on-start and cancel-on-completion, FCFS matching
// with queue-length-modulated server arrivals, and the embedding of
// order-independent queues via indistinguishable tokens.

namespace tokenq {

// Counts how many units (servers, or server types) a set of tokens covers:
// a unit is covered when its compatibility mask intersects the set.
struct FjEvaluator {
    std::vector<TokenSet> unit_masks;  // per unit, the tokens it can serve

    double count(TokenSet s) const {
        unsigned n = 0;
        for (TokenSet m : unit_masks) n += (m & s) ? 1u : 0u;
        return double(n);
    }
};

inline std::vector<TokenSet> subsets_of_size(unsigned n, unsigned d) {
    std::vector<TokenSet> out;
    const TokenSet lim = TokenSet{1} << n;
    for (TokenSet s = 0; s < lim; ++s)
        if (popcount(s) == d) out.push_back(s);
    return out;  // ascending mask order = lexicographic in member lists
}

// Single class served by K heterogeneous exponential servers, uniform
// assignment over idle servers, FCFS queue.
inline ModelSpec build_mmk_hetero(unsigned k_servers, std::vector<double> mu,
                                  double lambda) {
    if (mu.size() != k_servers || k_servers == 0)
        throw ConfigError("one service rate per server required");
    ModelSpec spec;
    spec.name = "mmk_hetero";
    spec.n_tokens = k_servers;
    spec.classes = {{lambda, (TokenSet{1} << k_servers) - 1}};
    spec.assignment = AssignmentRule::uniform();
    spec.rates = RateFamily::from_set_function([mu](TokenSet s) {
        double total = 0.0;
        for (TokenId t = 0; t < mu.size(); ++t)
            if (contains(s, t)) total += mu[t];
        return total;
    });
    spec.eta = Eta::constant(1.0);
    spec.fifo_departures = false;  // a later arrival may finish first
    spec.g_kind = GKind::DisjointIndicator;
    spec.finalize();
    return spec;
}

// Multi-server station where at most one customer per class is in service;
// k identical unit-speed servers, one dedicated token per class.
inline ModelSpec build_msccc(unsigned k_servers, std::vector<double> class_rates,
                             double mu) {
    if (k_servers == 0 || class_rates.empty())
        throw ConfigError("msccc needs servers and at least one class");
    ModelSpec spec;
    spec.name = "msccc";
    spec.n_tokens = static_cast<unsigned>(class_rates.size());
    for (TokenId t = 0; t < spec.n_tokens; ++t)
        spec.classes.push_back({class_rates[t], bit(t)});
    spec.assignment = AssignmentRule::uniform();
    spec.rates = RateFamily::from_set_function([k_servers, mu](TokenSet s) {
        return double(std::min(popcount(s), k_servers)) * mu;
    });
    spec.eta = Eta::constant(1.0);
    spec.fifo_departures = true;
    spec.g_kind = GKind::DedicatedIndicator;
    spec.finalize();
    return spec;
}

// Redundancy-d over K homogeneous servers, copies cancelled when one starts
// service. One class per d-subset of servers, token per server.
inline ModelSpec build_redundancy_cos(unsigned k_servers, unsigned d, double lambda,
                                      double mu) {
    if (d == 0 || d > k_servers) throw ConfigError("need 1 <= d <= K");
    ModelSpec spec;
    spec.name = "redundancy_cos";
    spec.n_tokens = k_servers;
    const auto subsets = subsets_of_size(k_servers, d);
    const double per_class = lambda / double(subsets.size());
    for (TokenSet s : subsets) spec.classes.push_back({per_class, s});
    spec.assignment = AssignmentRule::uniform();
    spec.rates = RateFamily::from_set_function(
        [mu](TokenSet s) { return double(popcount(s)) * mu; });
    spec.eta = Eta::constant(1.0);
    spec.fifo_departures = false;
    spec.g_kind = GKind::RedundancyCosUniform;
    spec.cos_d = d;
    spec.finalize();
    return spec;
}

// Redundancy-d with copies cancelled on completion. One class per d-subset,
// token per class; the holder of the j-th token is served by the servers
// its class adds to the coverage of the earlier holders.
inline ModelSpec build_redundancy_coc(unsigned k_servers, unsigned d, double lambda,
                                      double mu) {
    if (d == 0 || d > k_servers) throw ConfigError("need 1 <= d <= K");
    ModelSpec spec;
    spec.name = "redundancy_coc";
    const auto subsets = subsets_of_size(k_servers, d);
    const unsigned n_classes = static_cast<unsigned>(subsets.size());
    if (n_classes > kMaxTokens)
        throw ConfigError("too many replication subsets for the token limit");
    spec.n_tokens = n_classes;
    const double per_class = lambda / double(n_classes);
    for (TokenId t = 0; t < n_classes; ++t) spec.classes.push_back({per_class, bit(t)});

    FjEvaluator cover;
    cover.unit_masks.assign(k_servers, 0);
    for (unsigned cls = 0; cls < n_classes; ++cls)
        for (TokenId srv = 0; srv < k_servers; ++srv)
            if (contains(subsets[cls], srv)) cover.unit_masks[srv] |= bit(TokenId(cls));

    spec.rates = RateFamily::from_set_function(
        [cover, mu](TokenSet s) { return mu * cover.count(s); });
    spec.assignment = AssignmentRule::uniform();
    spec.eta = Eta::constant(1.0);
    spec.fifo_departures = true;
    spec.g_kind = GKind::DedicatedIndicator;
    spec.finalize();
    return spec;
}

// FCFS matching: customers queue until a compatible server arrives; server
// types arrive at rate A(n) each when n customers are waiting. Token per
// customer class; a server arrival acts as a service completion.
inline ModelSpec build_matching(std::vector<double> class_rates,
                                std::vector<ClassSet> server_type_compat, Eta arrival_A) {
    if (class_rates.empty() || server_type_compat.empty())
        throw ConfigError("matching needs classes and server types");
    ModelSpec spec;
    spec.name = "matching";
    spec.n_tokens = static_cast<unsigned>(class_rates.size());
    for (TokenId t = 0; t < spec.n_tokens; ++t)
        spec.classes.push_back({class_rates[t], bit(t)});
    spec.assignment = AssignmentRule::uniform();

    FjEvaluator cover;
    for (ClassSet compat : server_type_compat) {
        TokenSet m = 0;
        for (TokenId t = 0; t < spec.n_tokens; ++t)
            if ((compat >> t) & 1ull) m |= bit(t);
        cover.unit_masks.push_back(m);
    }
    spec.rates =
        RateFamily::from_set_function([cover](TokenSet s) { return cover.count(s); });
    spec.eta = std::move(arrival_A);
    spec.fifo_departures = true;
    spec.g_kind = GKind::DedicatedIndicator;
    spec.finalize();
    return spec;
}

// ---- order-independent queues ----

// An OI queue: per-class Poisson arrivals and a permutation-free total rate
// function over class count vectors.
struct OIQueueSpec {
    std::vector<double> rates;
    std::function<double(std::span<const unsigned>)> k_oi;  // over count vectors
    Eta eta;

    double k_counts(std::span<const unsigned> counts) const { return k_oi(counts); }
};

struct OIStability {
    StabilityVerdict verdict = StabilityVerdict::Stable;
    double rho_star = 0.0;
    ClassSet witness = 0;
};

// Ratio test over class supports: the saturated total rate of each support
// must outrun the aggregate arrival rate of its classes.
inline OIStability check_oi_stability(const OIQueueSpec& oi) {
    OIStability res;
    const unsigned nc = static_cast<unsigned>(oi.rates.size());
    const double eta_lim = oi.eta.limit();
    for (ClassSet a = 1; a < (ClassSet{1} << nc); ++a) {
        double lam = 0.0;
        for (unsigned c = 0; c < nc; ++c)
            if ((a >> c) & 1ull) lam += oi.rates[c];
        // grow counts over the support until k saturates or clears the bar
        std::vector<unsigned> counts(nc, 0);
        double k_prev = 0.0;
        for (unsigned m = 1; m <= (1u << 16); m *= 2) {
            for (unsigned c = 0; c < nc; ++c) counts[c] = ((a >> c) & 1ull) ? m : 0;
            const double k = oi.k_counts(counts);
            if (k > lam / eta_lim * (1.0 + 1e-9)) {
                k_prev = k;
                break;
            }
            if (m > 1 && std::abs(k - k_prev) <= 1e-12 * std::max(1.0, std::abs(k))) {
                k_prev = k;
                break;
            }
            k_prev = k;
        }
        const double ratio = lam / (k_prev > 0.0 ? k_prev : 1e-300);
        if (ratio > res.rho_star) {
            res.rho_star = ratio;
            res.witness = a;
        }
    }
    const double tol = 1e-12 * std::max(1.0, eta_lim);
    if (res.rho_star > eta_lim + tol)
        res.verdict = StabilityVerdict::Unstable;
    else if (res.rho_star >= eta_lim - tol)
        res.verdict = StabilityVerdict::Indeterminate;
    else
        res.verdict = StabilityVerdict::Stable;
    return res;
}

// Stationary law of an OI queue over class sequences, normalized by a
// level-wise dynamic program with a certified geometric tail.
class OIMeasure {
public:
    static OIMeasure build(const OIQueueSpec& oi, double tol = 1e-12,
                           unsigned max_level = 4096) {
        auto st = check_oi_stability(oi);
        if (st.verdict != StabilityVerdict::Stable)
            throw NotStableError("OI queue is not stable");
        OIMeasure m;
        m.oi_ = oi;
        const unsigned nc = static_cast<unsigned>(oi.rates.size());

        std::map<std::vector<unsigned>, double> level{{std::vector<unsigned>(nc, 0), 1.0}};
        double norm = 1.0;
        for (unsigned n = 1; n <= max_level; ++n) {
            std::map<std::vector<unsigned>, double> next;
            double level_sum = 0.0;
            for (const auto& [counts, w] : level) {
                for (unsigned c = 0; c < nc; ++c) {
                    auto up = counts;
                    up[c] += 1;
                    const double k = oi.k_counts(up);
                    if (!(k > 0.0)) throw ConfigError("OI total rate vanishes on a level");
                    const double v = w * oi.rates[c] / (oi.eta(n) * k);
                    next[up] += v;
                }
            }
            // one-step extension mass per state; nonincreasing along chains
            // since k is monotone, so it dominates all later level ratios
            const double eta_floor = oi.eta.floor_beyond(n);
            double worst_ratio = 0.0;
            for (const auto& [counts, w] : next) {
                level_sum += w;
                double ext = 0.0;
                for (unsigned c = 0; c < nc; ++c) {
                    auto up = counts;
                    up[c] += 1;
                    ext += oi.rates[c] / (eta_floor * oi.k_counts(up));
                }
                worst_ratio = std::max(worst_ratio, ext);
            }
            norm += level_sum;
            level.swap(next);
            if (worst_ratio < 1.0) {
                const double bound = level_sum * worst_ratio / (1.0 - worst_ratio);
                if (bound <= tol * norm) {
                    m.tail_bound_ = bound / norm;
                    break;
                }
            }
            if (n == max_level)
                throw NumericalError("OI normalization failed to certify its tail");
        }
        m.pi0_ = 1.0 / norm;
        return m;
    }

    double pi0() const { return pi0_; }
    double tail_bound() const { return tail_bound_; }

    // pi of an explicit class sequence (c_1, ..., c_n)
    double prob(std::span<const ClassId> seq) const {
        const unsigned nc = static_cast<unsigned>(oi_.rates.size());
        std::vector<unsigned> counts(nc, 0);
        double w = 1.0;
        for (std::size_t m = 0; m < seq.size(); ++m) {
            counts[seq[m]] += 1;
            w *= oi_.rates[seq[m]] / (oi_.eta(m + 1) * oi_.k_counts(counts));
        }
        return pi0_ * w;
    }

    const OIQueueSpec& oi() const { return oi_; }

private:
    OIQueueSpec oi_;
    double pi0_ = 1.0;
    double tail_bound_ = 0.0;
};

// Map an OI class sequence to the label-aggregated token state under finite
// per-class token caps: a customer is active while its class still has a
// spare token.
inline LabeledQState tau_map(std::span<const ClassId> seq,
                             std::span<const unsigned> caps) {
    LabeledQState xl;
    std::vector<unsigned> active(caps.size(), 0);
    for (ClassId c : seq) {
        if (active[c] < caps[c]) {
            active[c] += 1;
            xl.labels.push_back(c);
            xl.counts.push_back(0);
        } else {
            if (xl.counts.empty())
                throw DomainError("inactive customer before any active one");
            xl.counts.back() += 1;
        }
    }
    return xl;
}

// Aggregate OI probability of a label state: sum of prob(seq) over all class
// sequences tau-consistent with it.
inline double oi_label_prob(const OIMeasure& m, const LabeledQState& xl,
                            std::span<const unsigned> caps) {
    const auto& oi = m.oi();
    const unsigned nc = static_cast<unsigned>(oi.rates.size());
    std::vector<ClassId> seq;
    double total = 0.0;
    std::vector<unsigned> active(nc, 0);

    auto rec = [&](auto&& self, std::size_t pos, std::size_t fill) -> void {
        if (pos == xl.labels.size()) {
            total += m.prob(seq);
            return;
        }
        if (fill == 0) {  // place the next active customer
            seq.push_back(xl.labels[pos]);
            active[xl.labels[pos]] += 1;
            if (xl.counts[pos] > 0)
                self(self, pos, xl.counts[pos]);
            else
                self(self, pos + 1, 0);
            active[xl.labels[pos]] -= 1;
            seq.pop_back();
            return;
        }
        for (ClassId c = 0; c < nc; ++c) {
            if (active[c] < caps[c]) continue;  // would become active instead
            seq.push_back(c);
            if (fill > 1)
                self(self, pos, fill - 1);
            else
                self(self, pos + 1, 0);
            seq.pop_back();
        }
    };
    rec(rec, 0, 0);
    return total;
}

// Materialize an OI queue as a token-based model with cap_c indistinguishable
// tokens per class.
inline ModelSpec build_from_oi(const OIQueueSpec& oi, std::span<const unsigned> caps) {
    const unsigned nc = static_cast<unsigned>(oi.rates.size());
    if (caps.size() != nc) throw ConfigError("one token cap per class required");
    unsigned total = 0;
    for (unsigned c : caps) {
        if (c == 0) throw ConfigError("token caps must be positive");
        total += c;
    }
    if (total > kMaxTokens) throw ConfigError("token caps exceed the token limit");

    ModelSpec spec;
    spec.name = "oi_embedding";
    spec.n_tokens = total;
    std::vector<unsigned> labels(total);
    std::vector<TokenSet> class_tokens(nc, 0);
    {
        TokenId t = 0;
        for (unsigned c = 0; c < nc; ++c)
            for (unsigned r = 0; r < caps[c]; ++r, ++t) {
                labels[t] = c;
                class_tokens[c] |= bit(t);
            }
    }
    for (unsigned c = 0; c < nc; ++c) spec.classes.push_back({oi.rates[c], class_tokens[c]});
    spec.token_labels = labels;
    spec.assignment = AssignmentRule::uniform();
    auto k_oi = oi.k_oi;
    spec.rates = RateFamily::from_set_function([k_oi, labels, nc](TokenSet s) {
        std::vector<unsigned> counts(nc, 0);
        for (TokenId t = 0; t < labels.size(); ++t)
            if (contains(s, t)) counts[labels[t]] += 1;
        return k_oi(counts);
    });
    spec.eta = oi.eta;
    spec.fifo_departures =
        std::all_of(caps.begin(), caps.end(), [](unsigned c) { return c == 1; });
    spec.g_kind = GKind::DedicatedIndicator;
    spec.finalize();
    return spec;
}

}  // namespace tokenq
