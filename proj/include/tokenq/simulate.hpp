#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tokenq/applications.hpp"
#include "tokenq/model.hpp"
#include "tokenq/performance.hpp"
#include "tokenq/validation.hpp"

// Discrete-event oracles: a generic token-queue simulator with explicit
// customer identities, native simulators for the redundancy and matching
// systems (parallel FCFS queues with replication/cancellation, and FCFS
// matching), and the analytic-vs-simulated comparison table. All clocks are
// re-sampled after every transition, which is exact for exponential rates.

namespace tokenq {

// Counter-based generator: a full-avalanche mix over key + counter.
// Splitting by stream index keeps replications independent and reproducible.
struct CounterRng {
    std::uint64_t key;
    std::uint64_t ctr = 0;

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }
    static CounterRng stream(std::uint64_t seed, std::uint64_t idx) {
        return CounterRng{mix(seed + 0x9e3779b97f4a7c15ull * (idx + 1))};
    }

    std::uint64_t next_u64() {
        return mix(key + 0x9e3779b97f4a7c15ull * ++ctr);
    }
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }
    double exponential(double rate) { return -std::log1p(-uniform()) / rate; }
    std::size_t pick(std::size_t n) { return std::size_t(next_u64() % n); }
};

struct SimConfig {
    std::uint64_t seed = 1;
    double warmup = -1.0;       // <0: one tenth of the measurement window
    double measurement = 2e5;
    bool in_events = true;      // interpret warmup/measurement as event counts
    unsigned replications = 8;
    unsigned batches = 32;      // used for CIs when replications == 1
    unsigned occupancy_pop_cap = 8;
    std::vector<double> lst_grid = {0.5, 1.0, 2.0};
};

struct QuantityStat {
    double mean = 0.0;
    double se = 0.0;
    unsigned n = 0;

    double half_width() const {  // 95% two-sided
        static const double t975[] = {0,     12.706, 4.303, 3.182, 2.776, 2.571,
                                      2.447, 2.365,  2.306, 2.262, 2.228, 2.201,
                                      2.179, 2.160,  2.145, 2.131, 2.120, 2.110,
                                      2.101, 2.093,  2.086, 2.080, 2.074, 2.069,
                                      2.064, 2.060,  2.056, 2.052, 2.048, 2.045,
                                      2.042};
        if (n < 2) return std::numeric_limits<double>::infinity();
        const unsigned df = n - 1;
        return (df <= 30 ? t975[df] : 1.96) * se;
    }
};

struct SimStats {
    double total_time = 0.0;
    std::uint64_t events = 0;
    unsigned num_classes = 0;
    std::vector<QuantityStat> e_n_class, e_m_class, e_w_class, e_s_class, p_wait_class;
    QuantityStat e_m_total, e_n_total;
    std::map<double, std::vector<QuantityStat>> lst_w;  // s -> per class
    std::map<QState, QuantityStat> occupancy;           // states up to the pop cap
    std::vector<QuantityStat> pasta_phi;                // arrival-seen population law
    std::vector<QuantityStat> time_phi;                 // time-stationary population law
};

namespace simdetail {

struct Segment {  // one batch (or one replication) worth of raw measurements
    double duration = 0.0;
    std::vector<double> int_n, int_m;  // time integrals per class
    double int_m_total = 0.0, int_n_total = 0.0;
    std::map<QState, double> occ;
    std::vector<double> phi_time;       // time integral per population level
    std::vector<double> phi_seen;       // arrival-seen counts per level
    double arrivals_all = 0.0;
    std::vector<double> w_sum, w_cnt, s_sum, s_cnt, wait_cnt, arr_cnt;
    std::map<double, std::vector<double>> lst_sum;  // s -> per class sums over claims

    explicit Segment(unsigned nc, std::span<const double> grid) {
        int_n.assign(nc, 0.0);
        int_m.assign(nc, 0.0);
        w_sum.assign(nc, 0.0);
        w_cnt.assign(nc, 0.0);
        s_sum.assign(nc, 0.0);
        s_cnt.assign(nc, 0.0);
        wait_cnt.assign(nc, 0.0);
        arr_cnt.assign(nc, 0.0);
        for (double s : grid) lst_sum[s].assign(nc, 0.0);
    }
};

inline QuantityStat summarize(std::span<const double> samples) {
    QuantityStat q;
    q.n = static_cast<unsigned>(samples.size());
    if (q.n == 0) return q;
    double m = 0.0;
    for (double v : samples) m += v;
    m /= q.n;
    double var = 0.0;
    for (double v : samples) var += (v - m) * (v - m);
    q.mean = m;
    q.se = q.n > 1 ? std::sqrt(var / (q.n - 1) / q.n) : 0.0;
    return q;
}

// Collapse per-segment raw measurements into per-quantity samples and CIs.
inline SimStats aggregate(const std::vector<Segment>& segs, unsigned nc,
                          std::span<const double> grid) {
    SimStats st;
    st.num_classes = nc;
    const std::size_t R = segs.size();
    auto collect = [&](auto&& f) {
        std::vector<double> v(R);
        for (std::size_t r = 0; r < R; ++r) v[r] = f(segs[r]);
        return summarize(v);
    };

    st.e_n_class.resize(nc);
    st.e_m_class.resize(nc);
    st.e_w_class.resize(nc);
    st.e_s_class.resize(nc);
    st.p_wait_class.resize(nc);
    for (unsigned c = 0; c < nc; ++c) {
        st.e_n_class[c] = collect([&](const Segment& s) { return s.int_n[c] / s.duration; });
        st.e_m_class[c] = collect([&](const Segment& s) { return s.int_m[c] / s.duration; });
        st.e_w_class[c] = collect(
            [&](const Segment& s) { return s.w_cnt[c] > 0 ? s.w_sum[c] / s.w_cnt[c] : 0.0; });
        st.e_s_class[c] = collect(
            [&](const Segment& s) { return s.s_cnt[c] > 0 ? s.s_sum[c] / s.s_cnt[c] : 0.0; });
        st.p_wait_class[c] = collect([&](const Segment& s) {
            return s.arr_cnt[c] > 0 ? s.wait_cnt[c] / s.arr_cnt[c] : 0.0;
        });
    }
    st.e_m_total = collect([&](const Segment& s) { return s.int_m_total / s.duration; });
    st.e_n_total = collect([&](const Segment& s) { return s.int_n_total / s.duration; });
    for (double sv : grid) {
        auto& per = st.lst_w[sv];
        per.resize(nc);
        for (unsigned c = 0; c < nc; ++c)
            per[c] = collect([&](const Segment& s) {
                const double cnt = s.arr_cnt[c];
                return cnt > 0 ? s.lst_sum.at(sv)[c] / cnt : 1.0;
            });
    }

    std::map<QState, bool> all_states;
    for (const auto& s : segs)
        for (const auto& [x, v] : s.occ) all_states[x] = true;
    for (const auto& [x, unused] : all_states)
        st.occupancy[x] = collect([&](const Segment& s) {
            auto it = s.occ.find(x);
            return (it == s.occ.end() ? 0.0 : it->second) / s.duration;
        });

    std::size_t pmax = 0;
    for (const auto& s : segs) {
        pmax = std::max(pmax, s.phi_time.size());
        pmax = std::max(pmax, s.phi_seen.size());
    }
    st.time_phi.resize(pmax);
    st.pasta_phi.resize(pmax);
    for (std::size_t p = 0; p < pmax; ++p) {
        st.time_phi[p] = collect([&](const Segment& s) {
            return p < s.phi_time.size() ? s.phi_time[p] / s.duration : 0.0;
        });
        st.pasta_phi[p] = collect([&](const Segment& s) {
            return (p < s.phi_seen.size() && s.arrivals_all > 0)
                       ? s.phi_seen[p] / s.arrivals_all
                       : 0.0;
        });
    }
    for (const auto& s : segs) st.total_time += s.duration;
    return st;
}

// Wiring shared by the native simulators: a customer list in arrival order
// plus the measurement hooks.
struct Collector {
    const SimConfig& cfg;
    unsigned nc;
    Segment seg;
    std::vector<Segment> done;
    double now = 0.0;
    double window_start = 0.0;
    bool measuring = false;
    std::uint64_t event_count = 0;
    double warmup_len, batch_len;
    unsigned n_batches;
    std::uint64_t warmup_events, batch_events;

    Collector(const SimConfig& c, unsigned num_classes)
        : cfg(c), nc(num_classes), seg(num_classes, c.lst_grid) {
        n_batches = std::max(1u, c.batches);
        const double wu = c.warmup >= 0 ? c.warmup : 0.1 * c.measurement;
        if (c.in_events) {
            warmup_events = std::uint64_t(wu);
            batch_events = std::max<std::uint64_t>(1, std::uint64_t(c.measurement) / n_batches);
            warmup_len = batch_len = 0.0;
        } else {
            warmup_len = wu;
            batch_len = c.measurement / n_batches;
            warmup_events = batch_events = 0;
        }
    }

    bool done_all() const { return done.size() >= n_batches; }

    // called after each event with the pre-event holding interval already
    // accounted; decides warmup end and batch boundaries
    void roll(double t_now) {
        now = t_now;
        ++event_count;
        if (!measuring) {
            const bool past = cfg.in_events ? event_count >= warmup_events
                                            : now >= warmup_len;
            if (past) {
                measuring = true;
                window_start = now;
                seg = Segment(nc, cfg.lst_grid);
                seg.duration = 0.0;
            }
            return;
        }
        const bool batch_full = cfg.in_events
                                    ? event_count >= warmup_events +
                                                         (done.size() + 1) * batch_events
                                    : now - window_start >= (done.size() + 1) * batch_len;
        if (batch_full && !done_all()) {
            done.push_back(seg);
            seg = Segment(nc, cfg.lst_grid);
        }
    }

    void hold(double dt, const QState& x, std::span<const unsigned> n_by_class,
              std::span<const unsigned> m_by_class) {
        if (!measuring || done_all()) return;
        seg.duration += dt;
        double m_total = 0.0, n_total = 0.0;
        for (unsigned c = 0; c < nc; ++c) {
            seg.int_n[c] += dt * n_by_class[c];
            seg.int_m[c] += dt * m_by_class[c];
            m_total += m_by_class[c];
            n_total += n_by_class[c];
        }
        seg.int_m_total += dt * m_total;
        seg.int_n_total += dt * n_total;
        const std::size_t phi = x.population();
        if (phi <= cfg.occupancy_pop_cap) seg.occ[x] += dt;
        if (seg.phi_time.size() <= phi) seg.phi_time.resize(phi + 1, 0.0);
        seg.phi_time[phi] += dt;
    }

    void on_arrival(unsigned c, bool waited, std::size_t phi_seen_level) {
        if (!measuring || done_all()) return;
        seg.arr_cnt[c] += 1;
        seg.arrivals_all += 1;
        if (waited) seg.wait_cnt[c] += 1;
        if (seg.phi_seen.size() <= phi_seen_level) seg.phi_seen.resize(phi_seen_level + 1, 0.0);
        seg.phi_seen[phi_seen_level] += 1;
        if (!waited) {  // immediate claim, W = 0
            seg.w_sum[c] += 0.0;
            seg.w_cnt[c] += 1;
            for (auto& [s, v] : seg.lst_sum) v[c] += 1.0;
        }
    }
    void on_claim(unsigned c, double w) {  // token claimed after waiting
        if (!measuring || done_all()) return;
        seg.w_sum[c] += w;
        seg.w_cnt[c] += 1;
        for (auto& [s, v] : seg.lst_sum) v[c] += std::exp(-s * w);
    }
    void on_departure(unsigned c, double sojourn) {
        if (!measuring || done_all()) return;
        seg.s_sum[c] += sojourn;
        seg.s_cnt[c] += 1;
    }
};

struct SimCustomer {
    unsigned cls;
    double arrival;
    int token = -1;       // generic: claimed token; native: server / -1
    double claim = -1.0;  // time the token was claimed
};

inline QState qstate_of(std::span<const SimCustomer> queue) {
    QState x;
    for (const auto& cu : queue) {
        if (cu.token >= 0) {
            x.tokens.push_back(TokenId(cu.token));
            x.counts.push_back(0);
        } else {
            if (!x.counts.empty()) x.counts.back() += 1;
        }
    }
    return x;
}

}  // namespace simdetail

// ---- generic token-queue simulator ----

inline SimStats simulate_token_queue(const ModelSpec& spec, const SimConfig& cfg) {
    require_valid(spec);
    require_stable(spec);
    if (spec.assignment.kind != AssignmentRule::Kind::UniformOwnAvailable)
        throw ConfigError(
            "simulation needs a class-conditional assignment rule; table rules only "
            "fix aggregates");

    const unsigned nc = spec.num_classes();
    std::vector<simdetail::Segment> segments;

    for (unsigned rep = 0; rep < cfg.replications; ++rep) {
        auto rng = CounterRng::stream(cfg.seed, rep);
        simdetail::Collector col(cfg, nc);
        std::vector<simdetail::SimCustomer> queue;
        TokenSet avail = spec.all_tokens();
        double now = 0.0;

        std::vector<unsigned> n_by_class(nc), m_by_class(nc);
        std::vector<double> rates;
        while (!col.done_all()) {
            // current descriptor and rates
            QState x = simdetail::qstate_of(queue);
            std::fill(n_by_class.begin(), n_by_class.end(), 0u);
            std::fill(m_by_class.begin(), m_by_class.end(), 0u);
            for (const auto& cu : queue) {
                m_by_class[cu.cls] += 1;
                if (cu.token < 0) n_by_class[cu.cls] += 1;
            }
            rates.clear();
            double total = 0.0;
            for (unsigned c = 0; c < nc; ++c) {
                total += spec.classes[c].rate;
                rates.push_back(spec.classes[c].rate);
            }
            std::vector<std::size_t> holders;
            {
                std::size_t pos = 0;
                for (std::size_t qi = 0; qi < queue.size(); ++qi) {
                    if (queue[qi].token < 0) continue;
                    ++pos;
                    const double mu = mu_token(spec, x, pos);
                    rates.push_back(mu);
                    holders.push_back(qi);
                    total += mu;
                }
            }

            const double dt = rng.exponential(total);
            col.hold(dt, x, n_by_class, m_by_class);
            now += dt;

            double pickv = rng.uniform() * total;
            std::size_t idx = 0;
            while (idx + 1 < rates.size() && pickv > rates[idx]) pickv -= rates[idx++];

            if (idx < nc) {  // arrival of class idx
                const unsigned c = unsigned(idx);
                const TokenSet mine = spec.classes[c].tokens & avail;
                const bool waited = mine == 0;
                col.on_arrival(c, waited, x.population());
                simdetail::SimCustomer cu{c, now, -1, -1.0};
                if (!waited) {
                    std::vector<TokenId> options;
                    for (TokenId t = 0; t < spec.n_tokens; ++t)
                        if (contains(mine, t)) options.push_back(t);
                    const TokenId t = options[rng.pick(options.size())];
                    avail &= ~bit(t);
                    cu.token = int(t);
                    cu.claim = now;
                }
                queue.push_back(cu);
            } else {  // departure of a holder
                const std::size_t qi = holders[idx - nc];
                const TokenId t = TokenId(queue[qi].token);
                col.on_departure(queue[qi].cls, now - queue[qi].arrival);
                queue.erase(queue.begin() + long(qi));
                // re-offer the token to the longest-waiting compatible customer
                bool claimed = false;
                for (auto& cu : queue) {
                    if (cu.token >= 0) continue;
                    if (contains(spec.classes[cu.cls].tokens, t)) {
                        cu.token = int(t);
                        cu.claim = now;
                        col.on_claim(cu.cls, now - cu.arrival);
                        claimed = true;
                        break;
                    }
                }
                if (!claimed) avail |= bit(t);
            }
            col.roll(now);
        }
        for (auto& s : col.done) segments.push_back(std::move(s));
    }

    auto st = simdetail::aggregate(segments, nc, cfg.lst_grid);
    st.events = 0;
    return st;
}

// ---- native simulators ----

enum class RedundancyMode { CancelOnStart, CancelOnCompletion };

// K parallel FCFS queues; arrivals replicate to d uniformly chosen servers.
// COS starts at most one copy and cancels siblings at start; COC serves
// copies in parallel and cancels siblings at the first completion. States
// are mapped onto the token encoding for comparability.
inline SimStats simulate_redundancy_native(unsigned k_servers, unsigned d, double lambda,
                                           double mu, RedundancyMode mode,
                                           const SimConfig& cfg) {
    if (d == 0 || d > k_servers) throw ConfigError("need 1 <= d <= K");
    const auto subsets = subsets_of_size(k_servers, d);
    const unsigned nc = unsigned(subsets.size());
    std::vector<simdetail::Segment> segments;

    struct Cust {
        unsigned cls;
        double arrival;
        int serving = -1;     // COS: server working on it
        double claim = -1.0;  // COS: service start; COC: became oldest of class
    };

    for (unsigned rep = 0; rep < cfg.replications; ++rep) {
        auto rng = CounterRng::stream(cfg.seed, 0x10000u + rep);
        simdetail::Collector col(cfg, nc);
        std::vector<Cust> queue;  // arrival order
        double now = 0.0;
        std::vector<unsigned> n_by_class(nc), m_by_class(nc);

        while (!col.done_all()) {
            // who is in service / oldest per class; build the token encoding
            std::vector<int> cos_server_busy(k_servers, -1);
            std::vector<int> coc_oldest(nc, -1);
            QState x;
            std::fill(n_by_class.begin(), n_by_class.end(), 0u);
            std::fill(m_by_class.begin(), m_by_class.end(), 0u);
            for (std::size_t qi = 0; qi < queue.size(); ++qi) {
                const auto& cu = queue[qi];
                m_by_class[cu.cls] += 1;
                bool active;
                TokenId token;
                if (mode == RedundancyMode::CancelOnStart) {
                    active = cu.serving >= 0;
                    token = TokenId(cu.serving >= 0 ? cu.serving : 0);
                    if (active) cos_server_busy[std::size_t(cu.serving)] = int(qi);
                } else {
                    active = coc_oldest[cu.cls] < 0;
                    token = TokenId(cu.cls);
                    if (active) coc_oldest[cu.cls] = int(qi);
                }
                if (active) {
                    x.tokens.push_back(token);
                    x.counts.push_back(0);
                } else {
                    n_by_class[cu.cls] += 1;
                    if (!x.counts.empty()) x.counts.back() += 1;
                }
            }

            // departure rates
            double total = lambda;
            std::vector<std::pair<std::size_t, double>> dep;  // (queue idx, rate)
            if (mode == RedundancyMode::CancelOnStart) {
                for (std::size_t qi = 0; qi < queue.size(); ++qi)
                    if (queue[qi].serving >= 0) dep.emplace_back(qi, mu);
            } else {
                // a customer is served by every server whose earliest
                // compatible waiting customer it is
                for (unsigned srv = 0; srv < k_servers; ++srv) {
                    for (std::size_t qi = 0; qi < queue.size(); ++qi) {
                        if (!contains(subsets[queue[qi].cls], TokenId(srv))) continue;
                        bool found = false;
                        for (auto& [idx, r] : dep)
                            if (idx == qi) {
                                r += mu;
                                found = true;
                                break;
                            }
                        if (!found) dep.emplace_back(qi, mu);
                        break;  // only the head of this server's queue
                    }
                }
            }
            for (auto& [qi, r] : dep) total += r;

            const double dt = rng.exponential(total);
            col.hold(dt, x, n_by_class, m_by_class);
            now += dt;

            double pickv = rng.uniform() * total;
            if (pickv <= lambda) {  // arrival
                const unsigned cls = unsigned(rng.pick(nc));
                bool waited;
                Cust cu{cls, now, -1, -1.0};
                if (mode == RedundancyMode::CancelOnStart) {
                    std::vector<unsigned> idle;
                    for (TokenId srv = 0; srv < k_servers; ++srv)
                        if (contains(subsets[cls], srv) && cos_server_busy[srv] < 0)
                            idle.push_back(srv);
                    waited = idle.empty();
                    if (!waited) {
                        cu.serving = int(idle[rng.pick(idle.size())]);
                        cu.claim = now;
                    }
                } else {
                    waited = coc_oldest[cls] >= 0;
                    if (!waited) cu.claim = now;
                }
                col.on_arrival(cls, waited, x.population());
                queue.push_back(cu);
            } else {  // completion
                pickv -= lambda;
                std::size_t pick_idx = 0;
                while (pick_idx + 1 < dep.size() && pickv > dep[pick_idx].second)
                    pickv -= dep[pick_idx++].second;
                const std::size_t qi = dep[pick_idx].first;
                const unsigned cls = queue[qi].cls;
                col.on_departure(cls, now - queue[qi].arrival);
                const bool was_cos = mode == RedundancyMode::CancelOnStart;
                const int freed_server = was_cos ? queue[qi].serving : -1;
                queue.erase(queue.begin() + long(qi));
                if (was_cos) {
                    // freed server scans for its earliest compatible waiter
                    for (auto& cu : queue) {
                        if (cu.serving >= 0) continue;
                        if (contains(subsets[cu.cls], TokenId(freed_server))) {
                            cu.serving = freed_server;
                            cu.claim = now;
                            col.on_claim(cu.cls, now - cu.arrival);
                            break;
                        }
                    }
                } else {
                    // next same-class customer becomes oldest (claims the token)
                    for (auto& cu : queue) {
                        if (cu.cls == cls) {
                            cu.claim = now;
                            col.on_claim(cls, now - cu.arrival);
                            break;
                        }
                    }
                }
            }
            col.roll(now);
        }
        for (auto& s : col.done) segments.push_back(std::move(s));
    }
    return simdetail::aggregate(segments, nc, cfg.lst_grid);
}

// FCFS matching: class-c customers queue; servers of each type arrive at
// rate A(n) (n = queue length), match the longest-waiting compatible
// customer or leave at once.
inline SimStats simulate_matching_native(std::vector<double> class_rates,
                                         std::vector<ClassSet> server_type_compat,
                                         const Eta& arrival_A, const SimConfig& cfg) {
    const unsigned nc = unsigned(class_rates.size());
    const unsigned nv = unsigned(server_type_compat.size());
    double lambda = 0.0;
    for (double r : class_rates) lambda += r;
    std::vector<simdetail::Segment> segments;

    for (unsigned rep = 0; rep < cfg.replications; ++rep) {
        auto rng = CounterRng::stream(cfg.seed, 0x20000u + rep);
        simdetail::Collector col(cfg, nc);
        std::vector<simdetail::SimCustomer> queue;
        double now = 0.0;
        std::vector<unsigned> n_by_class(nc), m_by_class(nc);

        while (!col.done_all()) {
            std::vector<int> oldest(nc, -1);
            QState x;
            std::fill(n_by_class.begin(), n_by_class.end(), 0u);
            std::fill(m_by_class.begin(), m_by_class.end(), 0u);
            for (std::size_t qi = 0; qi < queue.size(); ++qi) {
                const auto& cu = queue[qi];
                m_by_class[cu.cls] += 1;
                if (oldest[cu.cls] < 0) {
                    oldest[cu.cls] = int(qi);
                    x.tokens.push_back(TokenId(cu.cls));
                    x.counts.push_back(0);
                } else {
                    n_by_class[cu.cls] += 1;
                    if (!x.counts.empty()) x.counts.back() += 1;
                }
            }
            // servers arriving to an empty queue leave immediately; they only
            // matter through matches, so an empty queue needs no server events
            const double total =
                lambda + (queue.empty() ? 0.0 : double(nv) * arrival_A(queue.size()));

            const double dt = rng.exponential(total);
            col.hold(dt, x, n_by_class, m_by_class);
            now += dt;

            double pickv = rng.uniform() * total;
            if (pickv <= lambda) {  // customer arrival
                std::size_t c = 0;
                while (c + 1 < nc && pickv > class_rates[c]) pickv -= class_rates[c], ++c;
                const bool waited = oldest[c] >= 0;
                col.on_arrival(unsigned(c), waited, x.population());
                simdetail::SimCustomer cu{unsigned(c), now, -1, -1.0};
                if (!waited) {
                    cu.token = int(c);
                    cu.claim = now;
                }
                queue.push_back(cu);
            } else {  // server arrival of a uniform type
                const unsigned v = unsigned(rng.pick(nv));
                for (std::size_t qi = 0; qi < queue.size(); ++qi) {
                    if ((server_type_compat[v] >> queue[qi].cls) & 1ull) {
                        const unsigned cls = queue[qi].cls;
                        col.on_departure(cls, now - queue[qi].arrival);
                        queue.erase(queue.begin() + long(qi));
                        for (auto& cu : queue) {
                            if (cu.cls == cls && cu.token < 0) {
                                cu.token = int(cls);
                                cu.claim = now;
                                col.on_claim(cls, now - cu.arrival);
                                break;
                            }
                        }
                        break;
                    }
                }
            }
            col.roll(now);
        }
        for (auto& s : col.done) segments.push_back(std::move(s));
    }
    return simdetail::aggregate(segments, nc, cfg.lst_grid);
}

// ---- comparison ----

struct ComparisonRow {
    std::string quantity;
    double analytic = 0.0;
    double simulated = 0.0;
    double se = 0.0;
    double z = 0.0;
    bool flagged = false;
};

inline ComparisonRow make_row(std::string name, double analytic, const QuantityStat& q) {
    ComparisonRow r;
    r.quantity = std::move(name);
    r.analytic = analytic;
    r.simulated = q.mean;
    r.se = q.se;
    const double diff = q.mean - analytic;
    if (q.se > 0.0)
        r.z = diff / q.se;
    else
        r.z = diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    r.flagged = std::abs(r.z) > 3.0;
    return r;
}

// z-scores of the simulated estimates against the analytic measures.
inline std::vector<ComparisonRow> compare_stats(const StationaryMeasure& m,
                                                const MeasureReport& rep,
                                                const SimStats& sim) {
    std::vector<ComparisonRow> rows;
    const auto& spec = m.spec();
    for (ClassId c = 0; c < spec.num_classes(); ++c) {
        rows.push_back(make_row("E[N(" + std::to_string(c) + ")]", rep.per_class[c].e_n,
                                sim.e_n_class[c]));
        rows.push_back(make_row("P(W(" + std::to_string(c) + ")>0)",
                                rep.per_class[c].p_wait, sim.p_wait_class[c]));
        rows.push_back(make_row("E[W(" + std::to_string(c) + ")]", rep.per_class[c].e_w,
                                sim.e_w_class[c]));
    }
    rows.push_back(make_row("E[M]", rep.e_m_total, sim.e_m_total));
    for (const auto& [s, per] : sim.lst_w)
        for (ClassId c = 0; c < spec.num_classes(); ++c)
            rows.push_back(make_row(
                "E[exp(-" + std::to_string(s) + " W(" + std::to_string(c) + "))]",
                lst_W(m, c, s), per[c]));
    return rows;
}

}  // namespace tokenq
