#pragma once

#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "tokenq/applications.hpp"
#include "tokenq/model.hpp"
#include "tokenq/performance.hpp"
#include "tokenq/product_form.hpp"
#include "tokenq/simulate.hpp"
#include "tokenq/transitions.hpp"
#include "tokenq/validation.hpp"

// Declarative model files and machine-readable result documents. A model
// file either names an application with its parameters or spells the model
// out section by section; unknown keys are rejected everywhere.

namespace tokenq {

using json = nlohmann::ordered_json;

struct ParseError : ModelError {
    using ModelError::ModelError;
};

inline constexpr int kSchemaVersion = 1;

namespace filedetail {

inline void check_keys(const json& obj, const std::set<std::string>& allowed,
                       const std::string& where) {
    if (!obj.is_object()) throw ParseError(where + " must be an object");
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key()))
            throw ParseError("unknown key '" + it.key() + "' in " + where);
}

inline std::string subset_key(TokenSet s) {
    std::string r;
    for (TokenId t = 0; t < 32; ++t)
        if (contains(s, t)) {
            if (!r.empty()) r += '+';
            r += std::to_string(t);
        }
    return r;
}

inline TokenSet parse_subset_key(const std::string& key, unsigned n_tokens,
                                 const std::string& where) {
    TokenSet s = 0;
    if (key.empty()) return 0;
    std::istringstream is(key);
    std::string part;
    while (std::getline(is, part, '+')) {
        try {
            const unsigned long t = std::stoul(part);
            if (t >= n_tokens) throw std::out_of_range("token");
            if (contains(s, TokenId(t))) throw ParseError("duplicate token in " + where);
            s |= bit(TokenId(t));
        } catch (const std::logic_error&) {
            throw ParseError("bad token id '" + part + "' in " + where);
        }
    }
    return s;
}

inline Eta eta_from_json(const json& j, const std::string& where) {
    check_keys(j, {"head", "tail"}, where);
    Eta e;
    if (j.contains("head"))
        for (const auto& v : j.at("head")) e.head.push_back(v.get<double>());
    e.tail = j.at("tail").get<double>();
    return e;
}

inline json eta_to_json(const Eta& e) {
    json j;
    if (!e.head.empty()) j["head"] = e.head;
    j["tail"] = e.tail;
    return j;
}

inline ModelSpec application_from_json(const json& app) {
    const std::string name = app.at("name").get<std::string>();
    if (name == "mmk_hetero") {
        check_keys(app, {"name", "K", "mu", "lambda"}, "application");
        return build_mmk_hetero(app.at("K").get<unsigned>(),
                                app.at("mu").get<std::vector<double>>(),
                                app.at("lambda").get<double>());
    }
    if (name == "msccc") {
        check_keys(app, {"name", "servers", "mu", "class_rates"}, "application");
        return build_msccc(app.at("servers").get<unsigned>(),
                           app.at("class_rates").get<std::vector<double>>(),
                           app.at("mu").get<double>());
    }
    if (name == "redundancy_cos" || name == "redundancy_coc") {
        check_keys(app, {"name", "K", "d", "lambda", "mu"}, "application");
        const auto K = app.at("K").get<unsigned>();
        const auto d = app.at("d").get<unsigned>();
        const auto lambda = app.at("lambda").get<double>();
        const auto mu = app.at("mu").get<double>();
        return name == "redundancy_cos" ? build_redundancy_cos(K, d, lambda, mu)
                                        : build_redundancy_coc(K, d, lambda, mu);
    }
    if (name == "matching") {
        check_keys(app, {"name", "class_rates", "server_types", "A"}, "application");
        std::vector<ClassSet> compat;
        for (const auto& row : app.at("server_types")) {
            ClassSet cs = 0;
            for (const auto& c : row) cs |= ClassSet{1} << c.get<unsigned>();
            compat.push_back(cs);
        }
        return build_matching(app.at("class_rates").get<std::vector<double>>(), compat,
                              eta_from_json(app.at("A"), "application.A"));
    }
    throw ParseError("unknown application '" + name + "'");
}

}  // namespace filedetail

inline ModelSpec model_from_json(const json& doc) {
    using namespace filedetail;
    check_keys(doc, {"application", "tokens", "classes", "assignment", "rates", "eta",
                     "options"},
               "model file");
    if (doc.contains("application")) {
        if (doc.size() != 1)
            throw ParseError("an application shortcut excludes explicit sections");
        return application_from_json(doc.at("application"));
    }

    ModelSpec spec;
    const auto& toks = doc.at("tokens");
    check_keys(toks, {"count", "labels"}, "tokens");
    spec.n_tokens = toks.at("count").get<unsigned>();
    if (toks.contains("labels"))
        spec.token_labels = toks.at("labels").get<std::vector<unsigned>>();

    for (const auto& cj : doc.at("classes")) {
        check_keys(cj, {"rate", "tokens"}, "classes[]");
        ClassDef cd;
        cd.rate = cj.at("rate").get<double>();
        for (const auto& t : cj.at("tokens")) {
            const auto tid = t.get<unsigned>();
            if (tid >= spec.n_tokens) throw ParseError("class references unknown token");
            cd.tokens |= bit(TokenId(tid));
        }
        spec.classes.push_back(cd);
    }

    const auto& aj = doc.at("assignment");
    check_keys(aj, {"rule", "table"}, "assignment");
    const std::string rule = aj.at("rule").get<std::string>();
    if (rule == "uniform") {
        spec.assignment = AssignmentRule::uniform();
    } else if (rule == "table") {
        std::map<std::uint64_t, double> table;
        for (auto it = aj.at("table").begin(); it != aj.at("table").end(); ++it) {
            const std::string key = it.key();
            const auto bar = key.find('|');
            if (bar == std::string::npos)
                throw ParseError("assignment table keys look like 'S|t'");
            const TokenSet s =
                parse_subset_key(key.substr(0, bar), spec.n_tokens, "assignment.table");
            const unsigned long t = std::stoul(key.substr(bar + 1));
            if (t >= spec.n_tokens || contains(s, TokenId(t)))
                throw ParseError("bad token in assignment key '" + key + "'");
            table[AssignmentRule::key(s, TokenId(t))] = it.value().get<double>();
        }
        spec.assignment = AssignmentRule::from_table(std::move(table));
    } else {
        throw ParseError("unknown assignment rule '" + rule + "'");
    }

    const auto& rj = doc.at("rates");
    check_keys(rj, {"family", "k", "mu", "servers"}, "rates");
    const std::string family = rj.at("family").get<std::string>();
    if (family == "table") {
        std::vector<double> k_tab(std::size_t{1} << spec.n_tokens,
                                  std::numeric_limits<double>::quiet_NaN());
        for (auto it = rj.at("k").begin(); it != rj.at("k").end(); ++it)
            k_tab[parse_subset_key(it.key(), spec.n_tokens, "rates.k")] =
                it.value().get<double>();
        if (std::isnan(k_tab[0])) k_tab[0] = 0.0;
        for (double v : k_tab)
            if (std::isnan(v)) throw ParseError("rates.k must cover every token subset");
        spec.rates = RateFamily::from_set_function(
            [k_tab](TokenSet s) { return k_tab[s]; });
    } else if (family == "mmk") {
        const auto mu = rj.at("mu").get<std::vector<double>>();
        if (mu.size() != spec.n_tokens) throw ParseError("rates.mu needs one entry per token");
        spec.rates = RateFamily::from_set_function([mu](TokenSet s) {
            double total = 0.0;
            for (TokenId t = 0; t < mu.size(); ++t)
                if (contains(s, t)) total += mu[t];
            return total;
        });
    } else if (family == "msccc") {
        const auto servers = rj.at("servers").get<unsigned>();
        const auto mu = rj.at("mu").get<double>();
        spec.rates = RateFamily::from_set_function([servers, mu](TokenSet s) {
            return double(std::min(popcount(s), servers)) * mu;
        });
    } else if (family == "scaled_count") {
        const auto mu = rj.at("mu").get<double>();
        spec.rates = RateFamily::from_set_function(
            [mu](TokenSet s) { return double(popcount(s)) * mu; });
    } else {
        throw ParseError("unknown rate family '" + family + "'");
    }

    spec.eta = doc.contains("eta") ? filedetail::eta_from_json(doc.at("eta"), "eta")
                                   : Eta::constant(1.0);

    if (doc.contains("options")) {
        const auto& oj = doc.at("options");
        check_keys(oj, {"fifo_departures", "g", "cos_d", "name"}, "options");
        if (oj.contains("fifo_departures"))
            spec.fifo_departures = oj.at("fifo_departures").get<bool>();
        if (oj.contains("name")) spec.name = oj.at("name").get<std::string>();
        if (oj.contains("cos_d")) spec.cos_d = oj.at("cos_d").get<unsigned>();
        if (oj.contains("g")) {
            const std::string g = oj.at("g").get<std::string>();
            if (g == "dedicated")
                spec.g_kind = GKind::DedicatedIndicator;
            else if (g == "disjoint")
                spec.g_kind = GKind::DisjointIndicator;
            else if (g == "cos_uniform")
                spec.g_kind = GKind::RedundancyCosUniform;
            else if (g == "none")
                spec.g_kind = GKind::None;
            else
                throw ParseError("unknown g '" + g + "'");
        }
    }

    spec.finalize();
    return spec;
}

inline json model_to_json(const ModelSpec& spec) {
    using namespace filedetail;
    json doc;
    doc["tokens"]["count"] = spec.n_tokens;
    if (spec.token_labels) doc["tokens"]["labels"] = *spec.token_labels;
    doc["classes"] = json::array();
    for (const auto& cd : spec.classes) {
        json cj;
        cj["rate"] = cd.rate;
        cj["tokens"] = json::array();
        for (TokenId t = 0; t < spec.n_tokens; ++t)
            if (contains(cd.tokens, t)) cj["tokens"].push_back(t);
        doc["classes"].push_back(cj);
    }
    if (spec.assignment.kind == AssignmentRule::Kind::UniformOwnAvailable) {
        doc["assignment"]["rule"] = "uniform";
    } else {
        doc["assignment"]["rule"] = "table";
        json tj = json::object();
        for (const auto& [key, v] : spec.assignment.table) {
            const TokenSet s = TokenSet(key >> 8);
            const TokenId t = TokenId(key & 0xff);
            tj[subset_key(s) + "|" + std::to_string(t)] = v;
        }
        doc["assignment"]["table"] = tj;
    }
    doc["rates"]["family"] = "table";
    json kj = json::object();
    for (TokenSet s = 1; s <= spec.all_tokens(); ++s) kj[subset_key(s)] = spec.k_total(s);
    doc["rates"]["k"] = kj;
    doc["eta"] = eta_to_json(spec.eta);
    doc["options"]["fifo_departures"] = spec.fifo_departures;
    switch (spec.g_kind) {
        case GKind::DedicatedIndicator: doc["options"]["g"] = "dedicated"; break;
        case GKind::DisjointIndicator: doc["options"]["g"] = "disjoint"; break;
        case GKind::RedundancyCosUniform:
            doc["options"]["g"] = "cos_uniform";
            doc["options"]["cos_d"] = spec.cos_d;
            break;
        default: doc["options"]["g"] = "none"; break;
    }
    doc["options"]["name"] = spec.name;
    return doc;
}

inline ModelSpec load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open model file '" + path + "'");
    json doc;
    try {
        in >> doc;
    } catch (const std::exception& e) {
        throw ParseError(std::string("model file is not valid JSON: ") + e.what());
    }
    return model_from_json(doc);
}

// ---- result documents ----

namespace filedetail {

inline json finite(double v) {
    return std::isfinite(v) ? json(v) : json();  // null for non-finite
}

inline json validation_to_json(const ValidationReport& rep) {
    json j;
    j["passed"] = rep.passed;
    j["sampled"] = rep.sampled;
    j["violations"] = json::array();
    for (const auto& v : rep.violations) {
        json vj;
        vj["check"] = v.check;
        vj["witness"] = v.witness;
        vj["lhs"] = finite(v.lhs);
        vj["rhs"] = finite(v.rhs);
        j["violations"].push_back(vj);
    }
    return j;
}

inline json stability_to_json(const StabilityResult& st) {
    json j;
    switch (st.verdict) {
        case StabilityVerdict::Stable: j["verdict"] = "stable"; break;
        case StabilityVerdict::Unstable: j["verdict"] = "unstable"; break;
        case StabilityVerdict::Indeterminate: j["verdict"] = "indeterminate"; break;
    }
    j["rho_star"] = finite(st.rho_star);
    j["eta_limit"] = st.eta_limit;
    j["witness"] = json::array();
    for (TokenId t = 0; t < 32; ++t)
        if (contains(st.witness, t)) j["witness"].push_back(t);
    return j;
}

inline json stat_to_json(const QuantityStat& q) {
    json j;
    j["mean"] = finite(q.mean);
    j["se"] = finite(q.se);
    j["n"] = q.n;
    return j;
}

inline json simstats_to_json(const SimStats& st) {
    json j;
    j["total_time"] = st.total_time;
    j["per_class"] = json::array();
    for (unsigned c = 0; c < st.num_classes; ++c) {
        json cj;
        cj["e_n"] = stat_to_json(st.e_n_class[c]);
        cj["e_m"] = stat_to_json(st.e_m_class[c]);
        cj["e_w"] = stat_to_json(st.e_w_class[c]);
        cj["e_s"] = stat_to_json(st.e_s_class[c]);
        cj["p_wait"] = stat_to_json(st.p_wait_class[c]);
        j["per_class"].push_back(cj);
    }
    j["e_m_total"] = stat_to_json(st.e_m_total);
    j["e_n_total"] = stat_to_json(st.e_n_total);
    j["lst_w"] = json::object();
    for (const auto& [s, per] : st.lst_w) {
        json row = json::array();
        for (const auto& q : per) row.push_back(stat_to_json(q));
        j["lst_w"][std::to_string(s)] = row;
    }
    j["occupancy"] = json::array();
    for (const auto& [x, q] : st.occupancy) {
        json oj;
        oj["state"] = x.to_string();
        oj["p"] = stat_to_json(q);
        j["occupancy"].push_back(oj);
    }
    return j;
}

}  // namespace filedetail

inline json result_header(const std::string& command, const ModelSpec& spec) {
    json doc;
    doc["schema_version"] = kSchemaVersion;
    doc["command"] = command;
    doc["model"] = model_to_json(spec);
    doc["validation"] = filedetail::validation_to_json(validate_all(spec));
    doc["stability"] = filedetail::stability_to_json(check_stability(spec));
    return doc;
}

inline json run_validate(const ModelSpec& spec) { return result_header("validate", spec); }

inline json run_solve(const ModelSpec& spec, unsigned bound, double tol,
                      bool include_table) {
    json doc = result_header("solve", spec);
    auto m = StationaryMeasure::build(spec, tol);
    json sj;
    sj["pi0"] = m.pi0();
    sj["mode"] = m.mode() == MeasureMode::ClosedForm ? "closed-form" : "truncated";
    sj["tail_certificate"] = m.tail_certificate();
    sj["bound"] = bound;
    sj["mass_beyond_bound"] = m.mass_beyond(bound);
    if (include_table) {
        sj["table"] = json::array();
        for (const auto& x : enumerate_states(spec, bound)) {
            json row;
            row["state"] = x.to_string();
            row["probability"] = m.stationary_prob(x);
            sj["table"].push_back(row);
        }
    }
    doc["stationary"] = sj;
    return doc;
}

inline json run_measure(const ModelSpec& spec, std::vector<double> z_grid,
                        std::vector<double> s_grid,
                        const std::string& g_choice = "model") {
    json doc = result_header("measure", spec);
    auto m = StationaryMeasure::build(spec);
    std::optional<GProvider> gp;
    if (g_choice == "dedicated")
        gp = GProvider::dedicated();
    else if (g_choice == "disjoint")
        gp = GProvider::disjoint();
    else if (g_choice == "cos_uniform")
        gp = GProvider::cos_uniform(spec.cos_d);
    else if (g_choice == "none")
        gp = std::nullopt;
    else if (g_choice == "model") {
        if (spec.g_kind != GKind::None) gp = GProvider::for_model(spec);
    } else {
        throw ParseError("unknown token-holder law '" + g_choice + "'");
    }
    auto rep = moments(m, gp);

    json mj;
    mj["provenance"] = rep.provenance;
    mj["per_class"] = json::array();
    for (ClassId c = 0; c < spec.num_classes(); ++c) {
        const auto& pc = rep.per_class[c];
        json cj;
        cj["e_n"] = filedetail::finite(pc.e_n);
        cj["e_m"] = filedetail::finite(pc.e_m);
        cj["e_w"] = filedetail::finite(pc.e_w);
        cj["e_s"] = filedetail::finite(pc.e_s);
        cj["p_wait"] = filedetail::finite(pc.p_wait);
        cj["little_residual"] = filedetail::finite(pc.little_residual);
        mj["per_class"].push_back(cj);
    }
    mj["e_n_total"] = rep.e_n_total;
    mj["e_m_total"] = rep.e_m_total;

    json grids;
    grids["pgf_n"] = json::array();
    grids["pgf_m"] = json::array();
    for (double z : z_grid) {
        grids["pgf_n"].push_back(json::array({z, pgf_N(m, z)}));
        grids["pgf_m"].push_back(json::array({z, pgf_M(m, z)}));
    }
    grids["lst_w"] = json::object();
    for (ClassId c = 0; c < spec.num_classes(); ++c) {
        json rows = json::array();
        for (double s : s_grid) rows.push_back(json::array({s, lst_W(m, c, s)}));
        grids["lst_w"][std::to_string(c)] = rows;
    }
    if (spec.fifo_departures && gp) {
        grids["lst_s"] = json::object();
        for (ClassId c = 0; c < spec.num_classes(); ++c) {
            json rows = json::array();
            for (double s : s_grid) rows.push_back(json::array({s, lst_S(m, c, s, *gp)}));
            grids["lst_s"][std::to_string(c)] = rows;
        }
    }
    mj["grids"] = grids;
    doc["measures"] = mj;
    return doc;
}

inline json run_oracle(const ModelSpec& spec, unsigned bound) {
    json doc = result_header("oracle", spec);
    auto m = StationaryMeasure::build(spec);
    auto od = oracle_solve(spec, bound);
    double max_resid = 0.0;
    auto weight = [&](const QState& x) { return m.unnormalized_weight(x); };
    for (const auto& x : od.states)
        max_resid = std::max(max_resid, global_balance_residual(spec, x, weight));
    json oj;
    oj["bound"] = bound;
    oj["states"] = od.states.size();
    oj["tv_vs_product_form"] = total_variation(m, od);
    oj["leaked_mass_bound"] = filedetail::finite(od.leaked_mass_bound);
    oj["max_global_balance_residual"] = max_resid;
    doc["oracle"] = oj;
    return doc;
}

inline json run_simulate(const ModelSpec& spec, const SimConfig& cfg) {
    json doc = result_header("simulate", spec);
    doc["simulation"] = filedetail::simstats_to_json(simulate_token_queue(spec, cfg));
    return doc;
}

inline json run_compare(const ModelSpec& spec, unsigned bound, const SimConfig& cfg) {
    json doc = result_header("compare", spec);
    auto m = StationaryMeasure::build(spec);
    auto od = oracle_solve(spec, bound);
    std::optional<GProvider> gp;
    if (spec.g_kind != GKind::None) gp = GProvider::for_model(spec);
    auto rep = moments(m, gp);
    auto sim = simulate_token_queue(spec, cfg);
    auto rows = compare_stats(m, rep, sim);

    json cj;
    cj["oracle_tv_vs_product_form"] = total_variation(m, od);
    cj["oracle_leaked_mass_bound"] = filedetail::finite(od.leaked_mass_bound);
    cj["rows"] = json::array();
    double max_z = 0.0;
    for (const auto& r : rows) {
        json rj;
        rj["quantity"] = r.quantity;
        rj["analytic"] = filedetail::finite(r.analytic);
        rj["simulated"] = filedetail::finite(r.simulated);
        rj["se"] = filedetail::finite(r.se);
        rj["z"] = filedetail::finite(r.z);
        rj["flagged"] = r.flagged;
        cj["rows"].push_back(rj);
        if (std::isfinite(r.z)) max_z = std::max(max_z, std::abs(r.z));
    }
    cj["max_abs_z"] = max_z;
    doc["comparison"] = cj;
    doc["simulation"] = filedetail::simstats_to_json(sim);
    return doc;
}

// Flat CSV view of the document's main table.
inline std::string to_csv(const json& doc) {
    std::ostringstream os;
    os.precision(15);
    const std::string cmd = doc.at("command").get<std::string>();
    if (cmd == "solve" && doc.contains("stationary") && doc["stationary"].contains("table")) {
        os << "state,probability\n";
        for (const auto& row : doc["stationary"]["table"])
            os << '"' << row["state"].get<std::string>() << "\","
               << row["probability"].get<double>() << "\n";
    } else if (cmd == "compare" && doc.contains("comparison")) {
        os << "quantity,analytic,simulated,se,z,flagged\n";
        for (const auto& r : doc["comparison"]["rows"])
            os << '"' << r["quantity"].get<std::string>() << "\"," << r["analytic"].dump()
               << ',' << r["simulated"].dump() << ',' << r["se"].dump() << ','
               << r["z"].dump() << ',' << (r["flagged"].get<bool>() ? 1 : 0) << "\n";
    } else if (cmd == "measure" && doc.contains("measures")) {
        os << "class,e_n,e_m,e_w,e_s,p_wait,little_residual\n";
        const auto& pcs = doc["measures"]["per_class"];
        for (std::size_t c = 0; c < pcs.size(); ++c) {
            const auto& pc = pcs[c];
            os << c << ',' << pc["e_n"].dump() << ',' << pc["e_m"].dump() << ','
               << pc["e_w"].dump() << ',' << pc["e_s"].dump() << ',' << pc["p_wait"].dump()
               << ',' << pc["little_residual"].dump() << "\n";
        }
    } else if (cmd == "validate") {
        os << "check,witness,lhs,rhs\n";
        for (const auto& v : doc["validation"]["violations"])
            os << '"' << v["check"].get<std::string>() << "\",\""
               << v["witness"].get<std::string>() << "\"," << v["lhs"].dump() << ','
               << v["rhs"].dump() << "\n";
    } else if (cmd == "oracle" && doc.contains("oracle")) {
        os << "key,value\n";
        for (auto it = doc["oracle"].begin(); it != doc["oracle"].end(); ++it)
            os << it.key() << ',' << it.value().dump() << "\n";
    } else if (cmd == "simulate" && doc.contains("simulation")) {
        os << "class,e_n,se_n,e_m,se_m,p_wait,se_p_wait\n";
        const auto& pcs = doc["simulation"]["per_class"];
        for (std::size_t c = 0; c < pcs.size(); ++c) {
            const auto& pc = pcs[c];
            os << c << ',' << pc["e_n"]["mean"].dump() << ',' << pc["e_n"]["se"].dump()
               << ',' << pc["e_m"]["mean"].dump() << ',' << pc["e_m"]["se"].dump() << ','
               << pc["p_wait"]["mean"].dump() << ',' << pc["p_wait"]["se"].dump() << "\n";
        }
    }
    return os.str();
}

}  // namespace tokenq
