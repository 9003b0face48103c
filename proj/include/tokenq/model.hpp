#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

// Core types for token-based central queues: the model description, the
// ordered state descriptor and the derived rate quantities everything else
// is built from.

namespace tokenq {

using TokenId = unsigned;              // index into the token set, 0..K-1
using ClassId = unsigned;              // index into the customer-type set
using TokenSet = std::uint32_t;        // bitmask over tokens, K <= kMaxTokens
using ClassSet = std::uint64_t;        // bitmask over classes

inline constexpr unsigned kMaxTokens = 20;
inline constexpr unsigned kMaxClasses = 64;

struct ModelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : ModelError {
    using ModelError::ModelError;
};
struct NotStableError : ModelError {
    using ModelError::ModelError;
};
struct NegativeRateError : ModelError {
    using ModelError::ModelError;
};
struct UnreachableStateError : ModelError {
    using ModelError::ModelError;
};
struct DomainError : ModelError {
    using ModelError::ModelError;
};
struct NumericalError : ModelError {
    using ModelError::ModelError;
};
struct NotIndistinguishableError : ModelError {
    using ModelError::ModelError;
};
struct OrderAssumptionError : ModelError {
    using ModelError::ModelError;
};

inline TokenSet bit(TokenId t) { return TokenSet{1} << t; }
inline bool contains(TokenSet s, TokenId t) { return (s >> t) & 1u; }
inline unsigned popcount(TokenSet s) { return static_cast<unsigned>(__builtin_popcount(s)); }

inline double binomial(unsigned n, unsigned k) {
    if (k > n) return 0.0;  // C(m,n)=0 for m<n
    k = std::min(k, n - k);
    double r = 1.0;
    for (unsigned j = 1; j <= k; ++j) r = r * double(n - k + j) / double(j);
    return std::round(r);
}

// Population-dependent service factor: explicit values for small populations,
// constant tail beyond. The tail value doubles as the limit used by the
// stability test.
struct Eta {
    std::vector<double> head;  // eta(1) .. eta(head.size())
    double tail = 1.0;         // eta(j) for j > head.size(), and lim eta

    static Eta constant(double v) { return Eta{{}, v}; }

    double operator()(std::size_t j) const {
        if (j == 0) throw DomainError("eta(0) is undefined");
        return j <= head.size() ? head[j - 1] : tail;
    }
    double limit() const { return tail; }
    bool is_constant() const {
        return std::all_of(head.begin(), head.end(), [&](double v) { return v == tail; });
    }
    // Smallest factor applied to populations beyond j0.
    double floor_beyond(std::size_t j0) const {
        double f = tail;
        for (std::size_t j = j0; j < head.size(); ++j) f = std::min(f, head[j]);
        return f;
    }
};

struct ClassDef {
    double rate = 0.0;   // Poisson arrival rate
    TokenSet tokens = 0; // compatible tokens
};

// How arriving customers pick among several available compatible tokens.
// UniformOwnAvailable: uniformly among the class's own available tokens.
// This single rule realises the uniform, dedicated and redundancy
// assignment schemes of the standard applications. Table: explicit
// aggregate rates lambda_t(S); a per-class choice law is then not implied,
// which matters only for simulation.
struct AssignmentRule {
    enum class Kind { UniformOwnAvailable, Table };
    Kind kind = Kind::UniformOwnAvailable;
    // key: (unavailable-set << 8) | token
    std::map<std::uint64_t, double> table;

    static AssignmentRule uniform() { return {}; }
    static AssignmentRule from_table(std::map<std::uint64_t, double> t) {
        return AssignmentRule{Kind::Table, std::move(t)};
    }
    static std::uint64_t key(TokenSet unavailable, TokenId t) {
        return (std::uint64_t(unavailable) << 8) | t;
    }
};

// Service-rate family. SetFunction mode derives the per-position rates by
// telescoping a set function k; Table mode takes raw per-prefix rates and
// relies on validation to establish permutation invariance of their sums.
struct RateFamily {
    enum class Kind { SetFunction, Table };
    Kind kind = Kind::SetFunction;
    std::function<double(TokenSet)> k_fn;
    std::map<std::vector<TokenId>, double> s_table;  // ordered prefix -> rate

    static RateFamily from_set_function(std::function<double(TokenSet)> f) {
        RateFamily r;
        r.kind = Kind::SetFunction;
        r.k_fn = std::move(f);
        return r;
    }
    static RateFamily from_s_table(std::map<std::vector<TokenId>, double> t) {
        RateFamily r;
        r.kind = Kind::Table;
        r.s_table = std::move(t);
        return r;
    }
};

// Which conditional law assigns classes to held tokens (needed for per-class
// counts of customers in the system, Theorem-5.2-style measures).
enum class GKind {
    DisjointIndicator,      // token sets partition the tokens
    DedicatedIndicator,     // one token per class, one class per token
    RedundancyCosUniform,   // uniform over the C(K-1,d-1) classes per token
    Custom,                 // explicit per-tuple table
    None,
};

struct QState;

// Full description of a token-based central queue. Immutable once built via
// finalize(); all rate lookups are table-backed and safe for concurrent
// reads.
struct ModelSpec {
    std::vector<ClassDef> classes;
    unsigned n_tokens = 0;
    AssignmentRule assignment;
    RateFamily rates;
    Eta eta;
    std::optional<std::vector<unsigned>> token_labels;  // label id per token

    // application metadata
    bool fifo_departures = false;  // same-class customers depart in arrival order
    GKind g_kind = GKind::None;
    unsigned cos_d = 0;  // replication factor, RedundancyCosUniform only
    std::string name = "model";

    // derived tables (filled by finalize)
    std::vector<double> lambda_u_tab;  // per token subset
    std::vector<double> k_tab;         // per token subset
    std::vector<ClassSet> u_set_tab;   // per token subset
    std::vector<ClassSet> class_of_token;  // classes compatible with t
    double lambda_total = 0.0;
    std::vector<TokenSet> reachable_mask_tab;  // subsets reachable as active sets

    unsigned num_classes() const { return static_cast<unsigned>(classes.size()); }
    TokenSet all_tokens() const { return (TokenSet{1} << n_tokens) - 1; }

    ClassSet u_set(TokenSet s) const { return u_set_tab[s]; }
    double lambda_u(TokenSet s) const { return lambda_u_tab[s]; }
    double k_total(TokenSet s) const { return k_tab[s]; }

    // Aggregate rate at which arrivals claim token t when S is unavailable.
    double lambda_t(TokenSet unavailable, TokenId t) const {
        if (contains(unavailable, t))
            throw DomainError("lambda_t queried for an unavailable token");
        if (assignment.kind == AssignmentRule::Kind::UniformOwnAvailable) {
            double r = 0.0;
            for (ClassId c = 0; c < num_classes(); ++c) {
                const auto& cd = classes[c];
                if (!contains(cd.tokens, t)) continue;
                const unsigned avail = popcount(cd.tokens & ~unavailable);
                if (avail > 0) r += cd.rate / double(avail);
            }
            return r;
        }
        auto it = assignment.table.find(AssignmentRule::key(unavailable, t));
        return it == assignment.table.end() ? 0.0 : it->second;
    }

    // Per-position service rate for an ordered prefix of claimed tokens.
    double s_rate(std::span<const TokenId> prefix) const {
        if (prefix.empty()) throw DomainError("s_rate needs a nonempty prefix");
        if (rates.kind == RateFamily::Kind::SetFunction) {
            TokenSet full = 0;
            for (TokenId t : prefix) full |= bit(t);
            const TokenSet without = full & ~bit(prefix.back());
            return k_tab[full] - k_tab[without];
        }
        auto it = rates.s_table.find(std::vector<TokenId>(prefix.begin(), prefix.end()));
        if (it == rates.s_table.end())
            throw ConfigError("service-rate table has no entry for the queried prefix");
        if (it->second < 0) throw NegativeRateError("negative service rate in table");
        return it->second;
    }

    double eta_at(std::size_t j) const { return eta(j); }

    void finalize();
    bool subset_reachable(TokenSet s) const {
        return std::find(reachable_mask_tab.begin(), reachable_mask_tab.end(), s) !=
               reachable_mask_tab.end();
    }
};

// Ordered state descriptor (T_1, n_1, ..., T_i, n_i). tokens are the claimed
// tokens in arrival order of their holders; counts[j] is the number of
// inactive customers between holders j and j+1 (behind the last holder for
// j = i-1). The empty state prints as "(0)".
struct QState {
    std::vector<TokenId> tokens;
    std::vector<std::uint32_t> counts;

    static QState empty() { return {}; }

    std::size_t active() const { return tokens.size(); }
    std::size_t population() const {
        std::size_t p = tokens.size();
        for (auto n : counts) p += n;
        return p;
    }
    TokenSet used() const {
        TokenSet s = 0;
        for (TokenId t : tokens) s |= bit(t);
        return s;
    }
    TokenSet prefix_set(std::size_t j) const {  // tokens of the first j holders
        TokenSet s = 0;
        for (std::size_t l = 0; l < j; ++l) s |= bit(tokens[l]);
        return s;
    }

    bool operator==(const QState& o) const = default;
    auto operator<=>(const QState& o) const = default;

    std::string to_string() const {
        if (tokens.empty()) return "(0)";
        std::ostringstream os;
        os << '(';
        for (std::size_t j = 0; j < tokens.size(); ++j) {
            if (j) os << ',';
            os << tokens[j] << ',' << counts[j];
        }
        os << ')';
        return os.str();
    }
};

struct QStateHash {
    std::size_t operator()(const QState& x) const {
        std::size_t h = 0x9e3779b97f4a7c15ull;
        auto mix = [&h](std::size_t v) {
            h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
        };
        for (auto t : x.tokens) mix(t + 1);
        mix(0xffff);
        for (auto n : x.counts) mix(n);
        return h;
    }
};

// Label-aggregated descriptor (L_1, n_1, ..., L_i, n_i).
struct LabeledQState {
    std::vector<unsigned> labels;
    std::vector<std::uint32_t> counts;

    std::size_t active() const { return labels.size(); }
    std::size_t population() const {
        std::size_t p = labels.size();
        for (auto n : counts) p += n;
        return p;
    }
    bool operator==(const LabeledQState& o) const = default;
    auto operator<=>(const LabeledQState& o) const = default;
};

inline void ModelSpec::finalize() {
    if (n_tokens == 0 || n_tokens > kMaxTokens)
        throw ConfigError("token count must be in 1.." + std::to_string(kMaxTokens));
    if (classes.empty() || classes.size() > kMaxClasses)
        throw ConfigError("class count must be in 1.." + std::to_string(kMaxClasses));

    lambda_total = 0.0;
    class_of_token.assign(n_tokens, 0);
    const TokenSet all = all_tokens();
    TokenSet covered = 0;
    for (ClassId c = 0; c < num_classes(); ++c) {
        const auto& cd = classes[c];
        if (!(cd.rate > 0.0)) throw ConfigError("class arrival rates must be positive");
        if (cd.tokens == 0) throw ConfigError("every class needs a nonempty token set");
        if (cd.tokens & ~all) throw ConfigError("class token set references unknown tokens");
        lambda_total += cd.rate;
        covered |= cd.tokens;
        for (TokenId t = 0; t < n_tokens; ++t)
            if (contains(cd.tokens, t)) class_of_token[t] |= (ClassSet{1} << c);
    }
    if (covered != all)
        throw ConfigError("dead token: some token is compatible with no class");
    if (!(eta.tail > 0.0) || std::any_of(eta.head.begin(), eta.head.end(),
                                         [](double v) { return !(v > 0.0); }))
        throw ConfigError("eta must be positive");
    if (token_labels && token_labels->size() != n_tokens)
        throw ConfigError("token_labels must cover every token");

    const std::size_t nsub = std::size_t{1} << n_tokens;
    u_set_tab.assign(nsub, 0);
    lambda_u_tab.assign(nsub, 0.0);
    for (TokenSet s = 0; s < nsub; ++s) {
        ClassSet u = 0;
        double lu = 0.0;
        for (ClassId c = 0; c < num_classes(); ++c) {
            if ((classes[c].tokens & ~s) == 0) {
                u |= (ClassSet{1} << c);
                lu += classes[c].rate;
            }
        }
        u_set_tab[s] = u;
        lambda_u_tab[s] = lu;
    }

    k_tab.assign(nsub, 0.0);
    if (rates.kind == RateFamily::Kind::SetFunction) {
        if (!rates.k_fn) throw ConfigError("rate family lacks a set function");
        for (TokenSet s = 1; s < nsub; ++s) k_tab[s] = rates.k_fn(s);
        if (rates.k_fn(0) != 0.0) throw ConfigError("k(empty set) must be 0");
    } else {
        // canonical ascending order; validation checks order independence
        for (TokenSet s = 1; s < nsub; ++s) {
            std::vector<TokenId> prefix;
            double total = 0.0;
            for (TokenId t = 0; t < n_tokens; ++t) {
                if (!contains(s, t)) continue;
                prefix.push_back(t);
                auto it = rates.s_table.find(prefix);
                if (it == rates.s_table.end())
                    throw ConfigError("service-rate table misses a prefix entry");
                total += it->second;
            }
            k_tab[s] = total;
        }
    }

    // Active-token sets reachable through positive claim rates.
    std::vector<char> seen(nsub, 0);
    std::vector<TokenSet> stack{0};
    seen[0] = 1;
    reachable_mask_tab.clear();
    while (!stack.empty()) {
        TokenSet s = stack.back();
        stack.pop_back();
        reachable_mask_tab.push_back(s);
        for (TokenId t = 0; t < n_tokens; ++t) {
            if (contains(s, t)) continue;
            if (lambda_t(s, t) > 0.0) {
                TokenSet nxt = s | bit(t);
                if (!seen[nxt]) {
                    seen[nxt] = 1;
                    stack.push_back(nxt);
                }
            }
        }
    }
    std::sort(reachable_mask_tab.begin(), reachable_mask_tab.end());

    if (rates.kind == RateFamily::Kind::SetFunction) {
        for (TokenSet s : reachable_mask_tab) {
            if (s != 0 && !(k_tab[s] > 0.0))
                throw ConfigError("k must be positive on nonempty reachable token sets");
            for (TokenId t = 0; t < n_tokens; ++t)
                if (!contains(s, t) && k_tab[s | bit(t)] < k_tab[s] - 1e-12 * std::abs(k_tab[s]))
                    throw ConfigError("k must be monotone under set inclusion");
        }
    }
}

// ---- state-level derived quantities ----

inline double mu_token(const ModelSpec& spec, const QState& x, std::size_t j) {
    if (j < 1 || j > x.active()) throw DomainError("mu_token position out of range");
    return spec.eta_at(x.population()) *
           spec.s_rate(std::span<const TokenId>(x.tokens.data(), j));
}

inline double mu_total(const ModelSpec& spec, const QState& x) {
    if (x.tokens.empty()) return 0.0;
    return spec.eta_at(x.population()) * spec.k_total(x.used());
}

// A state is representable only if every inactive customer has somewhere to
// come from: counts[j] > 0 requires lambda_U(prefix_{j+1}) > 0.
inline bool state_valid(const ModelSpec& spec, const QState& x) {
    if (x.tokens.size() != x.counts.size()) return false;
    TokenSet seen_tokens = 0;
    TokenSet prefix = 0;
    for (std::size_t j = 0; j < x.tokens.size(); ++j) {
        TokenId t = x.tokens[j];
        if (t >= spec.n_tokens || contains(seen_tokens, t)) return false;
        seen_tokens |= bit(t);
        prefix |= bit(t);
        if (x.counts[j] > 0 && !(spec.lambda_u(prefix) > 0.0)) return false;
    }
    return true;
}

// Every representable state with population <= bound, each exactly once.
// Order: tuple length ascending, tuples lexicographic, count vectors
// lexicographic.
inline std::vector<QState> enumerate_states(const ModelSpec& spec, unsigned bound) {
    std::vector<QState> out;
    std::vector<TokenId> tuple;

    auto emit_counts = [&](auto&& self, QState& x, std::size_t j, unsigned budget) -> void {
        if (j == tuple.size()) {
            out.push_back(x);
            return;
        }
        const bool open = spec.lambda_u(x.prefix_set(j + 1)) > 0.0;
        const unsigned hi = open ? budget : 0;
        for (unsigned n = 0; n <= hi; ++n) {
            x.counts[j] = n;
            self(self, x, j + 1, budget - n);
        }
        x.counts[j] = 0;
    };

    auto rec_tuple = [&](auto&& self, std::size_t len) -> void {
        if (tuple.size() == len) {
            QState x;
            x.tokens = tuple;
            x.counts.assign(len, 0);
            emit_counts(emit_counts, x, 0, bound - static_cast<unsigned>(len));
            return;
        }
        TokenSet used = 0;
        for (TokenId t : tuple) used |= bit(t);
        for (TokenId t = 0; t < spec.n_tokens; ++t) {
            if (contains(used, t)) continue;
            tuple.push_back(t);
            self(self, len);
            tuple.pop_back();
        }
    };

    for (unsigned len = 0; len <= std::min(spec.n_tokens, bound); ++len)
        rec_tuple(rec_tuple, len);
    return out;
}

}  // namespace tokenq
