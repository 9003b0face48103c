#pragma once

#include <map>
#include <numeric>
#include <span>
#include <vector>

#include "tokenq/model.hpp"
#include "tokenq/series.hpp"
#include "tokenq/validation.hpp"

// The stationary law of a validated, stable model: per ordered token tuple a
// prefactor and per-position geometric bases, a normalizing constant that is
// closed-form when eta is constant and certified-truncated otherwise, and
// the label-aggregated variant for indistinguishable tokens.

namespace tokenq {

struct TupleInfo {
    std::vector<TokenId> tokens;
    std::vector<TokenSet> prefix_sets;  // {T_1..T_j} as a mask, per position
    std::vector<double> alphas;       // lambda_U(prefix_j) / k(prefix_j)
    std::vector<double> lambda_u_pre; // lambda_U(prefix_j)
    std::vector<double> k_pre;        // k(prefix_j)
    double pi_lambda = 1.0;           // product of claim rates along the order
    double pi_k = 1.0;                // product of prefix totals
    double pref = 1.0;                // pi_lambda/pi_k * prod_j 1/eta(j)
    double z_alpha = 1.0;             // series value at the stationary bases
    double z_tail = 0.0;
};

enum class MeasureMode { ClosedForm, Truncated };

class StationaryMeasure {
public:
    static constexpr std::size_t kMaxTuples = 2'000'000;

    static StationaryMeasure build(const ModelSpec& spec, double tol = 1e-12,
                                   bool validate = true) {
        if (validate) require_valid(spec);
        require_stable(spec);
        StationaryMeasure m;
        m.spec_ = spec;
        m.tol_ = tol;
        m.mode_ = spec.eta.is_constant() ? MeasureMode::ClosedForm : MeasureMode::Truncated;
        m.build_tuples();
        return m;
    }

    const ModelSpec& spec() const { return spec_; }
    MeasureMode mode() const { return mode_; }
    double pi0() const { return pi0_; }
    double norm_sum() const { return norm_sum_; }
    // certified bound on the relative error of the normalizing constant
    double tail_certificate() const { return tail_cert_; }
    const std::vector<TupleInfo>& tuples() const { return tuples_; }

    const TupleInfo& tuple_info(const std::vector<TokenId>& tokens) const {
        auto it = index_.find(tokens);
        if (it == index_.end()) throw DomainError("unknown token tuple");
        return tuples_[it->second];
    }

    // The product-form factor excluding pi((0)); equals 1 for the empty state.
    double unnormalized_weight(const QState& x) const {
        if (!state_valid(spec_, x)) throw UnreachableStateError("invalid state descriptor");
        const TupleInfo& ti = tuple_info(x.tokens);
        double w = ti.pref;
        std::size_t total_n = 0;
        for (std::size_t j = 0; j < x.counts.size(); ++j) {
            if (x.counts[j] == 0) continue;
            if (ti.alphas[j] == 0.0)
                throw UnreachableStateError("inactive customers at a closed position");
            w *= std::pow(ti.alphas[j], double(x.counts[j]));
            total_n += x.counts[j];
        }
        const std::size_t i = x.active();
        for (std::size_t meta = 1; meta <= total_n; ++meta) w /= spec_.eta_at(i + meta);
        return w;
    }

    double stationary_prob(const QState& x) const { return pi0_ * unnormalized_weight(x); }

    // Certified upper bound on the stationary mass of states with population
    // beyond the given bound.
    double mass_beyond(unsigned bound) const {
        double beyond = 0.0;
        for (const auto& ti : tuples_) {
            if (ti.pref == 0.0) continue;
            const long cut = long(bound) - long(ti.tokens.size());
            if (cut < 0) {
                beyond += ti.pref * (ti.z_alpha + ti.z_tail);
                continue;
            }
            auto s = series_sum(ti.alphas, spec_.eta, series_tol(ti.pref), cut);
            beyond += ti.pref * (s.total - s.partial_at_cut + s.tail_bound);
        }
        return pi0_ * beyond;
    }

    double series_tol(double pref) const {
        return tol_ / double(std::max<std::size_t>(tuples_.size(), 1)) /
               std::max(pref, 1e-30);
    }

    // ---- label aggregation ----

    // Stationary probability of a label-aggregated state; requires declared
    // token labels whose classes are genuinely indistinguishable.
    double aggregate_by_labels(const LabeledQState& xl) const {
        require_labels();
        const auto& labels = *spec_.token_labels;
        // canonical realization: lowest-id unused token per label
        std::vector<TokenId> real;
        TokenSet used = 0;
        for (unsigned lab : xl.labels) {
            bool found = false;
            for (TokenId t = 0; t < spec_.n_tokens && !found; ++t) {
                if (labels[t] == lab && !contains(used, t)) {
                    real.push_back(t);
                    used |= bit(t);
                    found = true;
                }
            }
            if (!found)
                throw DomainError("label appears more often than its class size");
        }
        double w = 1.0;
        TokenSet prefix = 0;
        std::size_t total_n = 0;
        const std::size_t i = xl.active();
        for (std::size_t j = 0; j < i; ++j) {
            // aggregated claim rate of the label given the realized prefix
            double lam_label = 0.0;
            for (TokenId t = 0; t < spec_.n_tokens; ++t)
                if (labels[t] == xl.labels[j] && !contains(prefix, t))
                    lam_label += spec_.lambda_t(prefix, t);
            prefix |= bit(real[j]);
            const double kp = spec_.k_total(prefix);
            if (!(kp > 0.0)) throw UnreachableStateError("prefix with zero total rate");
            w *= lam_label / kp;
            if (xl.counts[j] > 0) {
                const double alpha = spec_.lambda_u(prefix) / kp;
                if (alpha == 0.0)
                    throw UnreachableStateError("inactive customers at a closed position");
                w *= std::pow(alpha, double(xl.counts[j]));
                total_n += xl.counts[j];
            }
            w /= spec_.eta_at(j + 1);
        }
        for (std::size_t meta = 1; meta <= total_n; ++meta) w /= spec_.eta_at(i + meta);
        return pi0_ * w;
    }

    // The four indistinguishability identities, checked exhaustively.
    void require_labels() const {
        if (!spec_.token_labels) throw ConfigError("model declares no token labels");
        if (labels_checked_) return;
        const auto& lab = *spec_.token_labels;
        const TokenSet nsub = spec_.all_tokens() + 1;
        for (TokenId s = 0; s < spec_.n_tokens; ++s) {
            for (TokenId t = TokenId(s + 1); t < spec_.n_tokens; ++t) {
                if (lab[s] != lab[t]) continue;
                if (spec_.class_of_token[s] != spec_.class_of_token[t])
                    throw NotIndistinguishableError(
                        "same-label tokens serve different class sets");
                for (TokenSet sub = 0; sub < nsub; ++sub) {
                    if (contains(sub, s) || contains(sub, t)) continue;
                    if (!detail::close_rel(spec_.lambda_t(sub, s), spec_.lambda_t(sub, t),
                                           kValidationTol))
                        throw NotIndistinguishableError("same-label claim rates differ");
                    if (!detail::close_rel(spec_.k_total(sub | bit(s)),
                                           spec_.k_total(sub | bit(t)), kValidationTol))
                        throw NotIndistinguishableError("same-label totals differ");
                    for (TokenId rr = 0; rr < spec_.n_tokens; ++rr) {
                        if (rr == s || rr == t || contains(sub, rr)) continue;
                        if (!detail::close_rel(spec_.lambda_t(sub | bit(s), rr),
                                               spec_.lambda_t(sub | bit(t), rr),
                                               kValidationTol))
                            throw NotIndistinguishableError(
                                "claim rates distinguish same-label tokens");
                    }
                }
            }
        }
        labels_checked_ = true;
    }

private:
    double eta_prefix_product(std::size_t i) const {
        double e = 1.0;
        for (std::size_t j = 1; j <= i; ++j) e *= spec_.eta_at(j);
        return e;
    }

    void build_tuples() {
        // count tuples first to bound the work
        std::size_t count = 1;
        double perm = 1.0;
        for (unsigned i = 1; i <= spec_.n_tokens; ++i) {
            perm *= double(spec_.n_tokens - i + 1);
            count += std::size_t(perm);
            if (count > kMaxTuples)
                throw ConfigError("token set too large for exhaustive tuple enumeration");
        }
        tuples_.reserve(count);

        std::vector<TokenId> tuple;
        TupleInfo root;
        root.z_alpha = 1.0;
        tuples_.push_back(root);
        index_[{}] = 0;

        auto rec = [&](auto&& self, TupleInfo parent) -> void {
            TokenSet used = 0;
            for (TokenId t : tuple) used |= bit(t);
            for (TokenId t = 0; t < spec_.n_tokens; ++t) {
                if (contains(used, t)) continue;
                TupleInfo ti;
                ti.tokens = tuple;
                ti.tokens.push_back(t);
                const TokenSet s = used | bit(t);
                ti.prefix_sets = parent.prefix_sets;
                ti.prefix_sets.push_back(s);
                ti.alphas = parent.alphas;
                ti.lambda_u_pre = parent.lambda_u_pre;
                ti.k_pre = parent.k_pre;
                const double kp = spec_.k_total(s);
                const double lu = spec_.lambda_u(s);
                ti.lambda_u_pre.push_back(lu);
                ti.k_pre.push_back(kp);
                ti.alphas.push_back(kp > 0.0 ? lu / kp : 0.0);
                ti.pi_lambda = parent.pi_lambda * spec_.lambda_t(used, t);
                ti.pi_k = parent.pi_k * kp;
                ti.pref = (ti.pi_k > 0.0)
                              ? ti.pi_lambda / ti.pi_k / eta_prefix_product(ti.tokens.size())
                              : 0.0;
                tuple.push_back(t);
                tuples_.push_back(ti);
                index_[ti.tokens] = tuples_.size() - 1;
                self(self, ti);
                tuple.pop_back();
            }
        };
        rec(rec, tuples_.front());

        // normalizing constant
        norm_sum_ = 0.0;
        double tail_abs = 0.0;
        for (auto& ti : tuples_) {
            if (ti.tokens.empty()) {
                ti.z_alpha = 1.0;
                norm_sum_ += 1.0;
                continue;
            }
            if (ti.pref == 0.0) {
                ti.z_alpha = 0.0;
                continue;
            }
            auto s = series_sum(ti.alphas, spec_.eta, series_tol(ti.pref));
            ti.z_alpha = s.total;
            ti.z_tail = s.tail_bound;
            norm_sum_ += ti.pref * s.total;
            tail_abs += ti.pref * s.tail_bound;
        }
        pi0_ = 1.0 / norm_sum_;
        tail_cert_ = tail_abs / norm_sum_;
    }

    ModelSpec spec_;
    MeasureMode mode_ = MeasureMode::ClosedForm;
    double tol_ = 1e-12;
    double pi0_ = 1.0;
    double norm_sum_ = 1.0;
    double tail_cert_ = 0.0;
    std::vector<TupleInfo> tuples_;
    std::map<std::vector<TokenId>, std::size_t> index_;
    mutable bool labels_checked_ = false;
};

}  // namespace tokenq
