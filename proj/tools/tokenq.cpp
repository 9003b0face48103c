#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "tokenq/modelfile.hpp"

// Command-line front end: validate / solve / measure / oracle / simulate /
// compare over declarative model files, emitting a result document (JSON)
// or a flat CSV table.
//
// Exit codes: 0 ok, 2 parse error, 3 validation failure, 4 unstable model,
// 5 numerical failure.

namespace {

using tokenq::json;

struct Output {
    std::string format = "doc";
    std::string path;  // empty = stdout
};

void add_output_flags(CLI::App* cmd, Output& out) {
    cmd->add_option("--format", out.format, "output format")
        ->check(CLI::IsMember({"doc", "csv"}));
    cmd->add_option("-o,--out", out.path, "write output to a file");
}

int emit(const json& doc, const Output& out) {
    const std::string text =
        out.format == "csv" ? tokenq::to_csv(doc) : doc.dump(2) + "\n";
    if (out.path.empty()) {
        std::cout << text;
    } else {
        std::ofstream f(out.path);
        if (!f) {
            std::cerr << "cannot write " << out.path << "\n";
            return 5;
        }
        f << text;
    }
    return 0;
}

json load_raw(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw tokenq::ParseError("cannot open model file '" + path + "'");
    json doc;
    try {
        in >> doc;
    } catch (const std::exception& e) {
        throw tokenq::ParseError(std::string("model file is not valid JSON: ") + e.what());
    }
    return doc;
}

std::vector<double> even_grid(unsigned n, double lo, double hi) {
    std::vector<double> g;
    for (unsigned i = 0; i < n; ++i)
        g.push_back(lo + (hi - lo) * double(i + 1) / double(n + 1));
    return g;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"token-based central queue: product-form solver and oracles"};
    app.require_subcommand(1);

    std::string model_path;
    unsigned bound = 12;
    double tol = 1e-12;
    bool with_table = false;
    unsigned z_points = 9;
    std::vector<double> s_grid = {0.5, 1.0, 2.0};
    std::string g_choice = "model";
    tokenq::SimConfig sim_cfg;
    bool run_native = false;

    Output out_validate, out_solve, out_measure, out_oracle, out_sim, out_compare;

    auto* v = app.add_subcommand("validate", "run the structural checks");
    v->add_option("model", model_path, "model file")->required();
    add_output_flags(v, out_validate);

    auto* so = app.add_subcommand("solve", "product-form stationary law");
    so->add_option("model", model_path, "model file")->required();
    so->add_option("--bound", bound, "population bound for the state table");
    so->add_option("--tol", tol, "normalization tolerance");
    so->add_flag("--table", with_table, "include the truncated state table");
    add_output_flags(so, out_solve);

    auto* me = app.add_subcommand("measure", "transforms and moments");
    me->add_option("model", model_path, "model file")->required();
    me->add_option("--grid", z_points, "number of interior z-grid points");
    me->add_option("--s", s_grid, "s-grid for the waiting transforms");
    me->add_option("--g", g_choice, "token-holder class law")
        ->check(CLI::IsMember({"model", "dedicated", "disjoint", "cos_uniform", "none"}));
    add_output_flags(me, out_measure);

    auto* orc = app.add_subcommand("oracle", "truncated linear-solve cross-check");
    orc->add_option("model", model_path, "model file")->required();
    orc->add_option("--bound", bound, "population bound");
    add_output_flags(orc, out_oracle);

    auto* si = app.add_subcommand("simulate", "discrete-event estimate");
    si->add_option("model", model_path, "model file")->required();
    si->add_option("--events", sim_cfg.measurement, "events per replication");
    si->add_option("--warmup", sim_cfg.warmup, "warmup events (default: 10%)");
    si->add_option("--reps", sim_cfg.replications, "replications");
    si->add_option("--seed", sim_cfg.seed, "PRNG seed");
    si->add_flag("--native", run_native, "also run the native twin (applications only)");
    add_output_flags(si, out_sim);

    auto* co = app.add_subcommand("compare", "analytic vs oracle vs simulation");
    co->add_option("model", model_path, "model file")->required();
    co->add_option("--bound", bound, "oracle population bound");
    co->add_option("--events", sim_cfg.measurement, "events per replication");
    co->add_option("--warmup", sim_cfg.warmup, "warmup events (default: 10%)");
    co->add_option("--reps", sim_cfg.replications, "replications");
    co->add_option("--seed", sim_cfg.seed, "PRNG seed");
    add_output_flags(co, out_compare);

    CLI11_PARSE(app, argc, argv);

    try {
        const json raw = load_raw(model_path);
        const tokenq::ModelSpec spec = tokenq::model_from_json(raw);

        if (v->parsed()) {
            json doc = tokenq::run_validate(spec);
            const int rc = emit(doc, out_validate);
            if (rc != 0) return rc;
            return doc["validation"]["passed"].get<bool>() ? 0 : 3;
        }
        if (so->parsed()) return emit(tokenq::run_solve(spec, bound, tol, with_table), out_solve);
        if (me->parsed())
            return emit(tokenq::run_measure(spec, even_grid(z_points, 0.0, 1.0), s_grid,
                                            g_choice),
                        out_measure);
        if (orc->parsed()) return emit(tokenq::run_oracle(spec, bound), out_oracle);
        if (si->parsed()) {
            json doc = tokenq::run_simulate(spec, sim_cfg);
            if (run_native && raw.contains("application")) {
                const auto& a = raw["application"];
                const std::string name = a["name"].get<std::string>();
                if (name == "redundancy_cos" || name == "redundancy_coc") {
                    auto st = tokenq::simulate_redundancy_native(
                        a["K"].get<unsigned>(), a["d"].get<unsigned>(),
                        a["lambda"].get<double>(), a["mu"].get<double>(),
                        name == "redundancy_cos"
                            ? tokenq::RedundancyMode::CancelOnStart
                            : tokenq::RedundancyMode::CancelOnCompletion,
                        sim_cfg);
                    doc["native_simulation"] = tokenq::filedetail::simstats_to_json(st);
                } else if (name == "matching") {
                    std::vector<tokenq::ClassSet> compat;
                    for (const auto& row : a["server_types"]) {
                        tokenq::ClassSet cs = 0;
                        for (const auto& c : row) cs |= tokenq::ClassSet{1} << c.get<unsigned>();
                        compat.push_back(cs);
                    }
                    auto st = tokenq::simulate_matching_native(
                        a["class_rates"].get<std::vector<double>>(), compat,
                        tokenq::filedetail::eta_from_json(a["A"], "application.A"), sim_cfg);
                    doc["native_simulation"] = tokenq::filedetail::simstats_to_json(st);
                }
            }
            return emit(doc, out_sim);
        }
        if (co->parsed()) return emit(tokenq::run_compare(spec, bound, sim_cfg), out_compare);
    } catch (const tokenq::ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return 2;
    } catch (const tokenq::NotStableError& e) {
        std::cerr << "unstable model: " << e.what() << "\n";
        return 4;
    } catch (const tokenq::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 5;
    } catch (const tokenq::SingularSystemError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 5;
    } catch (const tokenq::ModelError& e) {
        std::cerr << "validation failure: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
