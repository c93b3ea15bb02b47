// kcrit: batch driver for the verification pipelines.
//
// Every stage writes <stage>.json (deterministic payload), <stage>.run.json (timing, dependency
// resolution) and appends one line to manifest.jsonl in the run directory.

#include <CLI11.hpp>
#include <json.hpp>

#include <Eigen/Core>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "kcrit/construct.hpp"
#include "kcrit/geometry.hpp"
#include "kcrit/linsolve.hpp"
#include "kcrit/params.hpp"
#include "kcrit/quadrature.hpp"
#include "kcrit/reduced.hpp"
#include "kcrit/spectral.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace kcrit;

namespace {

constexpr int kSchemaVersion = 1;
constexpr const char* kVersion = "0.1.0";

struct ValidationError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct MissingDependency : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------------------------
// configuration

json default_config() {
    json ladder = json::array();
    for (int k = 14; k <= 22; k += 2) ladder.push_back(std::ldexp(1.0, -k));
    return {
        {"schema_version", kSchemaVersion},
        {"dim", 7},
        {"seed", 20240917},
        {"eps_ladder", ladder},
        {"geometry", {{"model", "torus"}, {"major", 3.0}, {"minor", 1.0}, {"radius", 1.0}, {"sample", 0.0}}},
        {"spectral", {{"h", 0.01}, {"r_max", 40.0}, {"fd_h", 0.01}}},
        {"quadrature", {{"gl_order", 16}, {"mc_samples", 2000000}}},
        {"params", {{"eps_ladder", json::array()}, {"delta", 1.0}}},
        {"jacobi", {{"resolution", 64}}},
        {"resonance",
         {{"eps_min", 1e-3}, {"eps_max", 1e-1}, {"samples_per_spacing", 8}, {"gap_fraction", 0.5}, {"min_minima", 3}}},
        {"linsolve",
         {{"ns", 121},
          {"nt", 241},
          {"plane", 10.0},
          {"radius", 40.0},
          {"core_spacing", 0.04},
          {"r", 3.0},
          {"refinements", {1, 2, 4}},
          {"family", {"bubble_power", "algebraic"}}}},
        {"construct", {{"max_order", 2}, {"linearization", "bubble"}, {"max_radius", 60.0}}},
        {"tolerances",
         {{"lambda_rel", 1e-6},
          {"decay_rel", 0.02},
          {"identity", 1e-8},
          {"closed_form", 1e-8},
          {"mc_sigmas", 5.0},
          {"root", 1e-12},
          {"degeneracy", 1e-8},
          {"jacobi_residual", 1e-10},
          {"apriori_variation", 0.1},
          {"guess_match", 1e-9},
          {"slopes", {0.85, 1.8, 2.6}}}},
    };
}

bool same_kind(const json& a, const json& b) {
    if (a.is_number() && b.is_number()) return !(a.is_number_integer() && b.is_number_float());
    return a.type() == b.type();
}

void merge_strict(json& base, const json& user, const std::string& path) {
    if (!user.is_object()) throw ValidationError("config" + (path.empty() ? "" : " key '" + path + "'") + " must be an object");
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string key = path.empty() ? it.key() : path + "." + it.key();
        if (!base.contains(it.key())) throw ValidationError("unknown config key '" + key + "'");
        json& slot = base[it.key()];
        if (slot.is_object()) {
            merge_strict(slot, it.value(), key);
        } else if (!same_kind(slot, it.value())) {
            throw ValidationError("config key '" + key + "' has type " + std::string(it.value().type_name()) +
                                  ", expected " + slot.type_name());
        } else {
            slot = it.value();
        }
    }
}

void require_decreasing(const json& ladder, const std::string& name, bool allow_empty) {
    if (ladder.empty()) {
        if (allow_empty) return;
        throw ValidationError(name + " is empty");
    }
    double prev = INFINITY;
    for (const auto& x : ladder) {
        if (!x.is_number()) throw ValidationError(name + " must hold numbers");
        const double v = x.get<double>();
        if (!(v > 0)) throw ValidationError(name + " entries must be positive");
        if (!(v < prev)) throw ValidationError(name + " must be strictly decreasing");
        prev = v;
    }
}

void validate(const json& c) {
    const int n = c["dim"];
    // the projected solver needs a decay index in (2, N-2)
    if (n < 5) throw ValidationError("dim = " + std::to_string(n) + " is not supported: need N >= 5 (N >= 7 for the full regime)");
    require_decreasing(c["eps_ladder"], "eps_ladder", false);
    if (c["eps_ladder"].size() < 2) throw ValidationError("eps_ladder needs at least two entries");
    require_decreasing(c["params"]["eps_ladder"], "params.eps_ladder", true);
    const std::string model = c["geometry"]["model"];
    if (model != "torus" && model != "sphere") throw ValidationError("geometry.model must be 'torus' or 'sphere'");
    const auto& res = c["resonance"];
    if (!(res["eps_min"].get<double>() > 0 && res["eps_max"].get<double>() > res["eps_min"].get<double>()))
        throw ValidationError("resonance needs 0 < eps_min < eps_max");
    const double r = c["linsolve"]["r"];
    if (!(r > 2 && r < n - 2)) throw ValidationError("linsolve.r must lie in (2, N-2)");
    for (const auto& f : c["linsolve"]["refinements"])
        if (!f.is_number_integer() || f.get<int>() < 1) throw ValidationError("linsolve.refinements must be positive integers");
    const std::string lin = c["construct"]["linearization"];
    if (lin != "bubble" && lin != "current") throw ValidationError("construct.linearization must be 'bubble' or 'current'");
}

std::string fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << h;
    return os.str();
}

std::string utc_now() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// ---------------------------------------------------------------------------------------------
// checks and reports

struct Check {
    std::string name, ref, relation;
    double value = 0, tolerance = 0;
    bool pass = false;
    bool gate = true;
    std::string note;
};

json to_json(const Check& c) {
    json j = {{"name", c.name},         {"ref", c.ref},   {"value", c.value}, {"relation", c.relation},
              {"tolerance", c.tolerance}, {"pass", c.pass}, {"gate", c.gate}};
    if (!c.note.empty()) j["note"] = c.note;
    return j;
}

Check le(std::string name, double v, double tol, std::string ref) {
    return {std::move(name), std::move(ref), "<=", v, tol, std::isfinite(v) && v <= tol, true, {}};
}
Check ge(std::string name, double v, double tol, std::string ref) {
    return {std::move(name), std::move(ref), ">=", v, tol, std::isfinite(v) && v >= tol, true, {}};
}
Check gt(std::string name, double v, double tol, std::string ref) {
    return {std::move(name), std::move(ref), ">", v, tol, std::isfinite(v) && v > tol, true, {}};
}
Check info(Check c, std::string note) {
    c.gate = false;
    c.note = std::move(note);
    return c;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

struct Context {
    json cfg;
    std::string config_hash;
    fs::path out;
    bool verbose = false;
    bool auto_build = true;
    bool all_pass = true;
    std::set<std::string> done;  // stages computed by this process
    std::map<std::string, std::string> hashes;
    // artifacts
    std::optional<SpectralPair> spectral;
    std::optional<ConstantsTable> table;
    std::optional<Traces> traces;
    std::optional<ClosedForm> root;

    void log(const std::string& msg) const {
        if (verbose) std::cerr << "[kcrit] " << msg << "\n";
    }
    int dim() const { return cfg["dim"]; }
};

struct StageOutput {
    json data = json::object();
    std::vector<Check> checks;
    std::map<std::string, std::string> deps;  // dependency name -> input hash
    std::vector<json> resolution;             // how each dependency was obtained
};

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream os(p);
    if (!os) throw std::runtime_error("cannot write " + p.string());
    os << s;
}

json read_json(const fs::path& p) {
    std::ifstream is(p);
    if (!is) throw std::runtime_error("cannot read " + p.string());
    return json::parse(is);
}

void emit(Context& ctx, const std::string& stage, StageOutput& o, double seconds, const std::string& started) {
    bool pass = true;
    json checks = json::array();
    for (const auto& c : o.checks) {
        checks.push_back(to_json(c));
        if (c.gate && !c.pass) pass = false;
    }
    json payload = {{"schema_version", kSchemaVersion},
                    {"command", stage},
                    {"config_hash", ctx.config_hash},
                    {"input_hash", ctx.hashes.at(stage)},
                    {"seed", ctx.cfg["seed"]},
                    {"dim", ctx.dim()},
                    {"dependencies", o.deps},
                    {"checks", checks},
                    {"pass", pass},
                    {"data", o.data}};
    write_text(ctx.out / (stage + ".json"), payload.dump(2) + "\n");
    json run = {{"command", stage},
                {"config_hash", ctx.config_hash},
                {"input_hash", ctx.hashes.at(stage)},
                {"seed", ctx.cfg["seed"]},
                {"started", started},
                {"finished", utc_now()},
                {"seconds", seconds},
                {"pass", pass},
                {"dependency_resolution", o.resolution},
                {"versions",
                 {{"kcrit", kVersion},
                  {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                std::to_string(EIGEN_MINOR_VERSION)},
                  {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                        std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                        std::to_string(NLOHMANN_JSON_VERSION_PATCH)}}}};
    write_text(ctx.out / (stage + ".run.json"), run.dump(2) + "\n");
    std::ofstream(ctx.out / "manifest.jsonl", std::ios::app) << run.dump() << "\n";
    for (const auto& c : o.checks)
        if (c.gate && !c.pass) std::cerr << "[kcrit] " << stage << ": gate '" << c.name << "' failed (" << c.value << " "
                                         << c.relation << " " << c.tolerance << ")\n";
    std::cout << (pass ? "PASS " : "FAIL ") << stage << " (" << o.checks.size() << " checks, " << seconds << " s)\n";
    if (!pass) ctx.all_pass = false;
}

// ---------------------------------------------------------------------------------------------
// geometry helpers

HypersurfaceModel model_of(const Context& ctx) {
    const json& g = ctx.cfg["geometry"];
    const int n = ctx.dim() + 1;  // K is a circle
    if (g["model"] == "sphere") return HypersurfaceModel::sphere(n, g["radius"].get<double>());
    return HypersurfaceModel::torus(n, g["major"].get<double>(), g["minor"].get<double>());
}

ShapeData shape_of(const Context& ctx) {
    const HypersurfaceModel m = model_of(ctx);
    return shape_at(m, std::vector<double>(m.k(), ctx.cfg["geometry"]["sample"].get<double>()));
}

json table_json(const ConstantsTable& t) {
    return {{"dim", t.dim},       {"A1", t.A1},         {"A2", t.A2},         {"A3", t.A3},
            {"A4", t.A4},         {"A5", t.A5},         {"A6", t.A6},         {"A7", t.A7},
            {"C0", t.C0},         {"D1", t.D1},         {"D2", t.D2},         {"c1", t.c1},
            {"djj_z0", t.djj_z0}, {"lambda1", t.lambda1}, {"h_aa", t.h_aa},   {"h_jj", t.h_jj},
            {"dn0", t.dn0},       {"err_A1", t.err_A1}, {"err_A2", t.err_A2}, {"err_A3", t.err_A3},
            {"err_A4", t.err_A4}, {"err_A5", t.err_A5}, {"err_A6", t.err_A6}, {"err_A7", t.err_A7},
            {"err_C0", t.err_C0}, {"err_D1", t.err_D1}, {"err_D2", t.err_D2}, {"A1_closed", t.A1_closed},
            {"A2_closed", t.A2_closed}, {"A3_closed", t.A3_closed}, {"C0_closed", t.C0_closed},
            {"A3_printed", t.A3_printed}, {"A3_printed_rel", t.A3_printed_rel}, {"J", t.J}};
}

ConstantsTable table_from(const json& j) {
    ConstantsTable t;
    t.dim = j.at("dim");
    auto get = [&](const char* k, double& v) { v = j.at(k).get<double>(); };
    get("A1", t.A1), get("A2", t.A2), get("A3", t.A3), get("A4", t.A4), get("A5", t.A5), get("A6", t.A6);
    get("A7", t.A7), get("C0", t.C0), get("D1", t.D1), get("D2", t.D2), get("c1", t.c1), get("djj_z0", t.djj_z0);
    get("lambda1", t.lambda1), get("h_aa", t.h_aa), get("h_jj", t.h_jj), get("dn0", t.dn0);
    get("err_A1", t.err_A1), get("err_A2", t.err_A2), get("err_A3", t.err_A3), get("err_A4", t.err_A4);
    get("err_A5", t.err_A5), get("err_A6", t.err_A6), get("err_A7", t.err_A7), get("err_C0", t.err_C0);
    get("err_D1", t.err_D1), get("err_D2", t.err_D2), get("A1_closed", t.A1_closed), get("A2_closed", t.A2_closed);
    get("A3_closed", t.A3_closed), get("C0_closed", t.C0_closed), get("A3_printed", t.A3_printed);
    get("A3_printed_rel", t.A3_printed_rel), get("J", t.J);
    return t;
}

// ---------------------------------------------------------------------------------------------
// stage hashes: each stage hashes its own inputs plus the hashes of its dependencies

void compute_hashes(Context& ctx) {
    const json& c = ctx.cfg;
    auto h = [](const json& j) { return fnv1a(j.dump()); };
    ctx.config_hash = h(c);
    ctx.hashes["spectrum"] = h({{"dim", c["dim"]}, {"spectral", c["spectral"]}});
    ctx.hashes["constants"] = h({{"up", ctx.hashes["spectrum"]},
                                 {"geometry", c["geometry"]},
                                 {"quadrature", c["quadrature"]},
                                 {"seed", c["seed"]}});
    ctx.hashes["params"] = h({{"up", ctx.hashes["constants"]}, {"params", c["params"]}});
    ctx.hashes["jacobi"] = h({{"dim", c["dim"]}, {"geometry", c["geometry"]}, {"jacobi", c["jacobi"]}, {"seed", c["seed"]}});
    ctx.hashes["resonance"] = h({{"up", ctx.hashes["params"]}, {"resonance", c["resonance"]}});
    ctx.hashes["linsolve-bench"] = h({{"up", ctx.hashes["spectrum"]}, {"linsolve", c["linsolve"]}});
    ctx.hashes["construct"] = h({{"up", ctx.hashes["params"]},
                                 {"construct", c["construct"]},
                                 {"eps_ladder", c["eps_ladder"]}});
}

// ---------------------------------------------------------------------------------------------
// stages

void run_stage(Context& ctx, const std::string& stage);

// Bring an upstream artifact into memory: this process, the run directory, or a rebuild.
void require(Context& ctx, const std::string& stage, StageOutput& o) {
    o.deps[stage] = ctx.hashes.at(stage);
    if (ctx.done.count(stage)) {
        o.resolution.push_back({{"stage", stage}, {"status", "current"}});
        return;
    }
    const fs::path p = ctx.out / (stage + ".json");
    if (fs::exists(p)) {
        const json j = read_json(p);
        const std::string stored = j.value("input_hash", "");
        if (stored == ctx.hashes.at(stage)) {
            ctx.log("using cached " + stage);
            if (stage == "spectrum") {
                ctx.spectral = read_spectral((ctx.out / "z0.dat").string());
            } else if (stage == "constants") {
                ctx.table = table_from(j.at("data").at("table"));
                ctx.traces = Traces{j["data"]["traces"]["h_aa"], j["data"]["traces"]["h_jj"]};
            } else if (stage == "params") {
                // params consumers also need the constants behind the root
                StageOutput tmp;
                require(ctx, "constants", tmp);
                for (auto& r : tmp.resolution) o.resolution.push_back(r);
                const json& r = j.at("data").at("root");
                ctx.root = ClosedForm{r["mu0"], r["dn0"], r["e0"]};
            }
            ctx.done.insert(stage);
            o.resolution.push_back({{"stage", stage}, {"status", "cached"}});
            return;
        }
        std::cerr << "[kcrit] " << stage << " artifact is stale (stored hash " << stored << ", expected "
                  << ctx.hashes.at(stage) << "); rebuilding\n";
        o.resolution.push_back({{"stage", stage}, {"status", "rebuilt_stale"}, {"stored_hash", stored}});
    } else {
        if (!ctx.auto_build)
            throw MissingDependency("missing " + stage + " artifact in " + ctx.out.string() + "; run `kcrit " + stage +
                                    " --out " + ctx.out.string() +
                                    "` with the same config first, or drop --no-auto-build");
        o.resolution.push_back({{"stage", stage}, {"status", "built"}});
    }
    run_stage(ctx, stage);
}

void stage_spectrum(Context& ctx, StageOutput& o) {
    const json& s = ctx.cfg["spectral"];
    const json& tol = ctx.cfg["tolerances"];
    const int n = ctx.dim();
    ShootingOptions so;
    so.h = s["h"];
    so.r_max = s["r_max"];
    ctx.log("shooting");
    SpectralPair sp = solve_eigen_shooting(n, so);
    ctx.log("finite differences with Richardson extrapolation");
    const RichardsonReport rich = fd_richardson(n, {s["fd_h"].get<double>(), s["r_max"].get<double>()});
    const DecayFit fit = fit_decay(sp);
    write_spectral(sp, (ctx.out / "z0.dat").string());
    std::ostringstream csv;
    csv.precision(17);
    csv << "level,h,lambda1\n";
    const double h = s["fd_h"];
    csv << "0," << h << "," << rich.lambda_h << "\n1," << h / 2 << "," << rich.lambda_h2 << "\n2," << h / 4 << ","
        << rich.lambda_h4 << "\n";
    write_text(ctx.out / "spectrum_richardson.csv", csv.str());

    o.data = {{"lambda1_shooting", sp.lambda1},
              {"lambda1_fd", {rich.lambda_h, rich.lambda_h2, rich.lambda_h4}},
              {"lambda1_extrapolated", rich.extrapolated},
              {"richardson_ratio", rich.ratio},
              {"second_eigenvalue", rich.second_eigenvalue},
              {"positive_count", rich.positive_count},
              {"decay_slope", fit.slope},
              {"sqrt_lambda1", std::sqrt(sp.lambda1)},
              {"ode_residual", sp.ode_residual},
              {"match_jump", sp.match_jump},
              {"l2_norm_sq", sp.l2_norm_sq()},
              {"files", {"z0.dat", "spectrum_richardson.csv"}}};
    o.checks.push_back(le("lambda1 shooting vs extrapolated FD", rel(sp.lambda1, rich.extrapolated),
                          tol["lambda_rel"], "positive eigenvalue, dual method"));
    o.checks.push_back(le("Z0 decay rate vs sqrt(lambda1)", fit.rel_error, tol["decay_rel"], "ground state decay"));
    Check one{"positive eigenvalue count", "single positive eigenvalue", "==", double(rich.positive_count), 1.0,
              rich.positive_count == 1, true, {}};
    o.checks.push_back(one);
    ctx.spectral = std::move(sp);
}

void stage_constants(Context& ctx, StageOutput& o) {
    require(ctx, "spectrum", o);
    const json& q = ctx.cfg["quadrature"];
    const json& tol = ctx.cfg["tolerances"];
    const int n = ctx.dim();
    const ShapeData sd = shape_of(ctx);
    const Traces tr{sd.sum_aa, sd.sum_jj};
    ConstantsOptions opt;
    opt.gl_order = q["gl_order"];
    ctx.log("constants");
    ConstantsTable t = compute_constants(n, *ctx.spectral, tr.h_aa_sum, tr.h_jj_sum, 1.0, opt);
    std::string root_note;
    try {
        const ClosedForm cf = closed_form_root(t, tr);
        t = compute_constants(n, *ctx.spectral, tr.h_aa_sum, tr.h_jj_sum, cf.dn0, opt);
    } catch (const HypothesisViolation& e) {
        root_note = std::string("no leading-order root, D2 evaluated at d_N = 1: ") + e.what();
    }

    std::vector<double> h_diag;
    for (int i = sd.k; i < sd.n - 1; ++i) h_diag.push_back(sd.H(i, i));
    ctx.log("identities");
    const auto ids = verify_appendix_identities(n, h_diag, tol["identity"], q["gl_order"]);
    json jid = json::array();
    for (const auto& id : ids) {
        jid.push_back({{"name", id.name}, {"lhs", id.lhs}, {"rhs", id.rhs}, {"residual", id.residual}});
        Check c = le("identity " + id.name, id.residual, id.tolerance, "bubble integral identity");
        c.pass = id.pass;
        o.checks.push_back(c);
    }

    // Monte Carlo oracle for the quadrature: ∫ U² e^{-|ξ|²}
    const BubbleProfile b(n);
    const QuadValue qv = integrate_axial(QuadratureGrid::whole(n), {}, {}, [&](double s, double tt) {
        const double r2 = s * s + tt * tt;
        const double u = b.value_r2(r2);
        return u * u * std::exp(-r2);
    });
    const auto mc = monte_carlo_gaussian(
        n,
        [&](const std::vector<double>& x) {
            double r2 = 0;
            for (double v : x) r2 += v * v;
            const double u = b.value_r2(r2);
            return u * u;
        },
        q["mc_samples"].get<std::uint64_t>(), ctx.cfg["seed"].get<std::uint64_t>());
    const double sigmas = std::abs(mc.mean - qv.value) / mc.std_error;
    o.checks.push_back(le("Monte Carlo vs quadrature (std errors)", sigmas, tol["mc_sigmas"], "quadrature oracle"));

    const double tcf = tol["closed_form"];
    o.checks.push_back(le("A1 quadrature vs closed form", rel(t.A1, t.A1_closed), tcf, "A1"));
    o.checks.push_back(le("A2 quadrature vs closed form", rel(t.A2, t.A2_closed), tcf, "A2"));
    o.checks.push_back(le("C0 quadrature vs closed form", rel(t.C0, t.C0_closed), tcf, "C0"));
    o.checks.push_back(info(le("A3 quadrature vs printed closed form", t.A3_printed_rel, tcf, "A3 printed"),
                            "printed form carries alpha^{(N+2)/2}; alpha^{p+1} matches, see A3_closed"));
    o.checks.push_back(le("A3 quadrature vs alpha^{p+1} closed form", rel(t.A3, t.A3_closed), tcf, "A3"));

    std::ostringstream csv;
    csv.precision(17);
    csv << "name,value,error,closed\n";
    auto row = [&](const char* name, double v, double e, double closed) {
        csv << name << "," << v << "," << e << ",";
        if (std::isfinite(closed)) csv << closed;
        csv << "\n";
    };
    const double none = NAN;
    row("A1", t.A1, t.err_A1, t.A1_closed);
    row("A2", t.A2, t.err_A2, t.A2_closed);
    row("A3", t.A3, t.err_A3, t.A3_closed);
    row("A4", t.A4, t.err_A4, none);
    row("A5", t.A5, t.err_A5, none);
    row("A6", t.A6, t.err_A6, none);
    row("A7", t.A7, t.err_A7, none);
    row("C0", t.C0, t.err_C0, t.C0_closed);
    row("D1", t.D1, t.err_D1, none);
    row("D2", t.D2, t.err_D2, none);
    write_text(ctx.out / "constants.csv", csv.str());

    o.data = {{"table", table_json(t)},
              {"traces", {{"h_aa", tr.h_aa_sum}, {"h_jj", tr.h_jj_sum}}},
              {"geometry", model_of(ctx).name()},
              {"identities", jid},
              {"monte_carlo", {{"mean", mc.mean}, {"std_error", mc.std_error}, {"samples", mc.samples},
                               {"seed", mc.seed}, {"quadrature", qv.value}}},
              {"files", {"constants.csv"}}};
    if (!root_note.empty()) o.data["note"] = root_note;
    ctx.table = t;
    ctx.traces = tr;
}

void stage_params(Context& ctx, StageOutput& o) {
    require(ctx, "constants", o);
    const json& tol = ctx.cfg["tolerances"];
    const ConstantsTable& t = *ctx.table;
    const Traces& tr = *ctx.traces;
    ctx.log("leading-order Newton");
    const ClosedForm cf = closed_form_root(t, tr);  // throws HypothesisViolation for H_aa >= 0
    NewtonConfig nc;
    nc.guess = NewtonConfig::Guess::user;  // start off the closed form
    nc.mu = 0.7 * cf.mu0;
    nc.dn = 1.3 * cf.dn0;
    nc.e = 0.5 * cf.e0;
    const ParameterState st = solve_leading_order(t, tr, 0.0, nc);
    const double troot = tol["root"];
    o.checks.push_back(le("mu0 Newton vs closed form", rel(st.mu0, st.mu_closed), troot, "leading-order root"));
    o.checks.push_back(le("dn0 Newton vs closed form", rel(st.dn0, st.dn_closed), troot, "leading-order root"));
    o.checks.push_back(le("e0 Newton vs closed form", rel(st.e0, st.e_closed), troot, "leading-order root"));
    const SignReport sr = check_jacobian_signs(st, t.lambda1);
    o.checks.push_back(le("Jacobian exact vs FD", sr.fd_mismatch, 1e-6, "leading-order Jacobian"));
    o.checks.push_back(gt("AC - B^2", sr.AC_minus_B2, 0.0, "coercivity of the (delta, d_N) block"));
    o.checks.push_back(gt("|det M|", std::abs(sr.det_M), 0.0, "correction matrix"));
    o.checks.push_back(info(gt("det F0", sr.det_F0, 0.0, "leading-order Jacobian"),
                            "det F0 = -lambda1 (AC - B^2) for the system as written; invertibility is the gate"));
    o.checks.push_back(gt("|det F0|", std::abs(sr.det_F0), 0.0, "leading-order Jacobian invertible"));

    auto mat = [](const auto& m) {
        json rows = json::array();
        for (int i = 0; i < m.rows(); ++i) {
            json r = json::array();
            for (int j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
            rows.push_back(r);
        }
        return rows;
    };
    o.data = {{"root", {{"mu0", st.mu0}, {"dn0", st.dn0}, {"e0", st.e0}}},
              {"closed_form", {{"mu0", st.mu_closed}, {"dn0", st.dn_closed}, {"e0", st.e_closed}}},
              {"iterations", st.iterations},
              {"residual", {st.residual[0], st.residual[1], st.residual[2]}},
              {"F0_exact", mat(sr.F0_exact)},
              {"F0_printed", mat(sr.F0_printed)},
              {"det_F0", sr.det_F0},
              {"det_F0_printed_formula", sr.det_F0_printed_formula},
              {"det_F0_root_formula", sr.det_F0_root_formula},
              {"A", sr.A},
              {"B", sr.B},
              {"C", sr.C},
              {"AC_minus_B2", sr.AC_minus_B2},
              {"M", mat(sr.M)},
              {"det_M", sr.det_M},
              {"constants_hash", ctx.hashes.at("constants")}};

    const json& ladder = ctx.cfg["params"]["eps_ladder"];
    if (!ladder.empty()) {
        require(ctx, "spectrum", o);
        std::vector<double> eps = ladder.get<std::vector<double>>();
        std::sort(eps.begin(), eps.end());
        ctx.log("projected parameter ladder");
        NewtonConfig nc;
        nc.abs_tol = 1e-9;
        const auto fit = fit_eps_structure(t, tr, eps,
                                           projected_perturbation(t, *ctx.spectral, tr, ctx.cfg["params"]["delta"]), nc);
        o.data["eps_structure"] = {{"eps", fit.eps},           {"mu", fit.mu},        {"dn", fit.dn},
                                   {"e", fit.e},               {"slope_mu", fit.slope_mu}, {"r2_mu", fit.r2_mu},
                                   {"r2_mu_quadratic", fit.r2_mu_quadratic}};
    }
    ctx.root = ClosedForm{st.mu0, st.dn0, st.e0};
}

void stage_jacobi(Context& ctx, StageOutput& o) {
    const json& tol = ctx.cfg["tolerances"];
    const HypersurfaceModel m = model_of(ctx);
    const JacobiOperator op = assemble_jacobi(m, ctx.cfg["jacobi"]["resolution"]);
    const double smin = op.smallest_abs_eigenvalue();
    std::ostringstream csv;
    csv.precision(17);
    csv << "mode,eigenvalue\n";
    if (op.constant)
        for (const auto& [mode, ev] : op.modal_eigenvalues()) {
            for (std::size_t i = 0; i < mode.size(); ++i) csv << (i ? ":" : "") << mode[i];
            csv << "," << ev << "\n";
        }
    write_text(ctx.out / "jacobi_modes.csv", csv.str());
    o.checks.push_back(gt("smallest |eigenvalue|", smin, tol["degeneracy"], "nondegenerate Jacobi operator"));

    std::mt19937_64 rng(ctx.cfg["seed"].get<std::uint64_t>());
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::VectorXd f(op.matrix.rows());
    for (int i = 0; i < f.size(); ++i) f[i] = u(rng);
    o.data = {{"model", m.name()}, {"grid", op.grid_size()}, {"components", op.ncomp}, {"constant", op.constant},
              {"smallest_abs_eigenvalue", smin}, {"files", {"jacobi_modes.csv"}}};
    try {
        const JacobiSolution sol = solve_jacobi(op, f, tol["degeneracy"]);
        const Eigen::VectorXd dense = solve_jacobi_dense(op, f);
        o.checks.push_back(le("solve residual", sol.residual, tol["jacobi_residual"], "Jacobi solve"));
        o.checks.push_back(le("spectral vs dense solve", (sol.d - dense).norm() / dense.norm(), 1e-8, "Jacobi solve"));
        o.data["method"] = sol.method;
        o.data["bound_constant"] = sol.bound_constant;
    } catch (const std::exception& e) {
        o.checks.push_back({"solve", "Jacobi solve", "ok", 1, 0, false, true, e.what()});
    }
}

void stage_resonance(Context& ctx, StageOutput& o) {
    require(ctx, "params", o);
    const json& r = ctx.cfg["resonance"];
    const ConstantsTable& t = *ctx.table;
    const double lo = r["eps_min"], hi = r["eps_max"];
    const ReducedSystem sys = ReducedSystem::from_constants(t, ctx.root->mu0, ctx.root->dn0, hi);
    const double target = sys.D1 * sys.lambda1;
    const auto grid = resonance_grid(ctx.dim(), target, lo, hi, r["samples_per_spacing"]);
    ResonanceOptions opt;
    opt.gap_fraction = r["gap_fraction"];
    ctx.log("scanning " + std::to_string(grid.size()) + " eps values");
    const ResonanceScan scan = scan_resonance(sys, grid, opt);
    write_text(ctx.out / "resonance.csv", resonance_csv(scan));
    write_text(ctx.out / "resonance_gaps.json", resonance_gaps_json(scan));
    o.checks.push_back(ge("detected minima", double(scan.detected.size()), r["min_minima"], "resonance count"));
    o.checks.push_back(le("unmatched resonances", scan.unmatched, 0, "m^2 rho^2 = D1 lambda1"));
    o.checks.push_back(le("max |log eps_detected - log eps_predicted|", scan.max_match_error, scan.log_spacing,
                          "m^2 rho^2 = D1 lambda1"));
    o.checks.push_back(le("max rho/sigma_min in gaps", scan.max_scaled_inverse_in_gaps, scan.gap_bound,
                          "inverse bound in gap intervals"));
    o.data = {{"target", target},
              {"samples", grid.size()},
              {"points", scan.points},
              {"detected", scan.detected.size()},
              {"predicted", scan.predicted.size()},
              {"gaps", scan.gaps.size()},
              {"log_spacing", scan.log_spacing},
              {"max_match_error", scan.max_match_error},
              {"max_scaled_inverse_in_gaps", scan.max_scaled_inverse_in_gaps},
              {"gap_bound", scan.gap_bound},
              {"files", {"resonance.csv", "resonance_gaps.json"}}};
}

RhsKind rhs_kind(const std::string& s) {
    for (RhsKind k : {RhsKind::bubble_power, RhsKind::algebraic, RhsKind::odd_algebraic, RhsKind::mode_one})
        if (rhs_name(k) == s) return k;
    throw ValidationError("unknown linsolve.family entry '" + s + "'");
}

void stage_linsolve(Context& ctx, StageOutput& o) {
    require(ctx, "spectrum", o);
    const json& l = ctx.cfg["linsolve"];
    AxialGridSpec base;
    base.ns = l["ns"];
    base.nt = l["nt"];
    base.plane = l["plane"];
    base.radius = l["radius"];
    base.core_spacing = l["core_spacing"];
    std::vector<AxialGridSpec> ladder;
    for (int f : l["refinements"]) ladder.push_back(base.refined(f));
    std::vector<RhsKind> family;
    for (const auto& s : l["family"]) family.push_back(rhs_kind(s));
    ctx.log("a-priori ladder");
    const AprioriReport rep = measure_apriori_constant(ctx.dim(), l["r"], ladder, family, *ctx.spectral);
    std::ostringstream csv;
    csv.precision(17);
    csv << "level,ns,nt,rhs,ratio,residual\n";
    json levels = json::array();
    for (std::size_t i = 0; i < rep.levels.size(); ++i) {
        const auto& lv = rep.levels[i];
        for (std::size_t k = 0; k < lv.ratios.size(); ++k)
            csv << i << "," << lv.spec.ns << "," << lv.spec.nt << "," << rhs_name(family[k]) << "," << lv.ratios[k] << ","
                << lv.residual << "\n";
        levels.push_back({{"ns", lv.spec.ns}, {"nt", lv.spec.nt}, {"sup_ratio", lv.sup_ratio}, {"ratios", lv.ratios}});
    }
    write_text(ctx.out / "linsolve.csv", csv.str());
    o.checks.push_back(le("a-priori ratio variation across refinements", rep.variation,
                          ctx.cfg["tolerances"]["apriori_variation"], "projected solver stability"));
    o.data = {{"r", rep.r}, {"constant", rep.constant}, {"variation", rep.variation}, {"levels", levels},
              {"files", {"linsolve.csv"}}};
}

void stage_construct(Context& ctx, StageOutput& o) {
    require(ctx, "params", o);
    require(ctx, "spectrum", o);
    const json& c = ctx.cfg["construct"];
    const json& tol = ctx.cfg["tolerances"];
    const FrozenGeometry geom = FrozenGeometry::from_model(model_of(ctx), ctx.cfg["geometry"]["sample"]);
    ConstructConfig cc;
    cc.max_order = c["max_order"];
    cc.max_radius = c["max_radius"];
    cc.linearization = c["linearization"] == "current" ? Linearization::current : Linearization::bubble;
    const std::vector<double> eps = ctx.cfg["eps_ladder"].get<std::vector<double>>();
    ctx.log("residual ladder over " + std::to_string(eps.size()) + " eps values");
    const ResidualReport rep = residual_ladder(eps, geom, *ctx.spectral, cc);
    write_text(ctx.out / "construct.csv", rep.csv());

    json data = json::parse(rep.json());
    for (auto& r : data["runs"]) r.erase("seconds");  // timings live in the run record
    data["files"] = {"construct.csv"};
    o.data = data;
    const double gm = std::max({rel(rep.guess.mu, ctx.root->mu0), rel(rep.guess.dn, ctx.root->dn0),
                                rel(rep.guess.e, ctx.root->e0)});
    o.checks.push_back(le("construct guess vs params root", gm, tol["guess_match"], "leading-order root"));
    const auto& th = tol["slopes"];
    for (std::size_t i = 0; i < rep.slopes.size() && i < th.size(); ++i)
        o.checks.push_back(ge("slope of |S(v_" + std::to_string(i) + ")|", rep.slopes[i], th[i],
                              "residual order O(eps^{I+1})"));
    double plane = 0, min_interior = INFINITY;
    for (const auto& r : rep.runs)
        for (const auto& od : r.orders) {
            plane = std::max(plane, od.plane_max);
            min_interior = std::min(min_interior, od.min_interior);
        }
    o.checks.push_back(le("max |v| on the Dirichlet plane", plane, 0.0, "boundary condition"));
    o.checks.push_back(gt("min interior value", min_interior, 0.0, "positivity"));
}

void run_stage(Context& ctx, const std::string& stage) {
    if (ctx.done.count(stage)) return;
    const std::string started = utc_now();
    const auto t0 = std::chrono::steady_clock::now();
    StageOutput o;
    try {
        if (stage == "spectrum") stage_spectrum(ctx, o);
        else if (stage == "constants") stage_constants(ctx, o);
        else if (stage == "params") stage_params(ctx, o);
        else if (stage == "jacobi") stage_jacobi(ctx, o);
        else if (stage == "resonance") stage_resonance(ctx, o);
        else if (stage == "linsolve-bench") stage_linsolve(ctx, o);
        else if (stage == "construct") stage_construct(ctx, o);
        else throw std::logic_error("unknown stage " + stage);
    } catch (const MissingDependency&) {
        throw;
    } catch (const ValidationError&) {
        throw;
    } catch (const std::exception& e) {
        throw std::runtime_error(stage + ": " + e.what());
    }
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ctx.done.insert(stage);
    emit(ctx, stage, o, sec, started);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"kcrit: verification pipelines for boundary-concentrating critical solutions"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string config_path, out_dir, eps_ladder;
    int dim = 0;
    long long seed = -1;
    bool verbose = false, no_auto_build = false, print_config = false;
    app.add_option("--config", config_path, "JSON config (unknown keys are errors)");
    app.add_option("--out", out_dir, "run directory (default runs/<config hash>)");
    app.add_option("--eps-ladder", eps_ladder, "comma-separated, strictly decreasing eps values for construct");
    app.add_option("--dim", dim, "dimension N");
    app.add_option("--seed", seed, "seed of the randomized oracles");
    app.add_flag("--verbose", verbose, "progress on stderr");
    app.add_flag("--no-auto-build", no_auto_build, "fail instead of building missing upstream artifacts");
    app.add_flag("--print-config", print_config, "print the effective config and exit");
    const std::vector<std::string> stages{"spectrum", "constants", "params", "jacobi", "resonance", "linsolve-bench",
                                          "construct"};
    for (const auto& s : stages) app.add_subcommand(s, "run the " + s + " stage");
    app.add_subcommand("all", "run every stage in dependency order");
    CLI11_PARSE(app, argc, argv);

    Context ctx;
    try {
        ctx.cfg = default_config();
        if (!config_path.empty()) {
            std::ifstream is(config_path);
            if (!is) throw ValidationError("cannot read config " + config_path);
            json user;
            try {
                user = json::parse(is);
            } catch (const json::parse_error& e) {
                throw ValidationError("config " + config_path + " is not valid JSON: " + e.what());
            }
            merge_strict(ctx.cfg, user, "");
            if (ctx.cfg["schema_version"] != kSchemaVersion)
                throw ValidationError("config schema_version must be " + std::to_string(kSchemaVersion));
        }
        if (dim != 0) ctx.cfg["dim"] = dim;
        if (seed >= 0) ctx.cfg["seed"] = seed;
        if (!eps_ladder.empty()) {
            json l = json::array();
            std::stringstream ss(eps_ladder);
            std::string tok;
            while (std::getline(ss, tok, ',')) {
                try {
                    std::size_t pos = 0;
                    l.push_back(std::stod(tok, &pos));
                    if (pos != tok.size()) throw std::invalid_argument(tok);
                } catch (const std::exception&) {
                    throw ValidationError("--eps-ladder: cannot parse '" + tok + "'");
                }
            }
            ctx.cfg["eps_ladder"] = l;
        }
        validate(ctx.cfg);
    } catch (const std::exception& e) {
        std::cerr << "kcrit: validation error: " << e.what() << "\n";
        return 2;
    }
    if (print_config) {
        std::cout << ctx.cfg.dump(2) << "\n";
        return 0;
    }
    if (ctx.dim() < 7) std::cerr << "kcrit: warning: N = " << ctx.dim() << " is below 7, outside the theorem regime\n";

    compute_hashes(ctx);
    ctx.verbose = verbose;
    ctx.auto_build = !no_auto_build;
    ctx.out = out_dir.empty() ? fs::path("runs") / ctx.config_hash : fs::path(out_dir);
    try {
        fs::create_directories(ctx.out);
        write_text(ctx.out / "config.json", ctx.cfg.dump(2) + "\n");
        const auto* sub = app.get_subcommands().front();
        if (sub->get_name() == "all") {
            for (const auto& s : stages) run_stage(ctx, s);
            json summary = {{"config_hash", ctx.config_hash}, {"seed", ctx.cfg["seed"]}, {"stages", json::object()}};
            for (const auto& s : stages) summary["stages"][s] = read_json(ctx.out / (s + ".json"))["pass"];
            summary["pass"] = ctx.all_pass;
            write_text(ctx.out / "summary.json", summary.dump(2) + "\n");
        } else {
            run_stage(ctx, sub->get_name());
        }
    } catch (const MissingDependency& e) {
        std::cerr << "kcrit: missing dependency: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "kcrit: error: " << e.what() << "\n";
        return 1;
    }
    std::cout << "run directory: " << ctx.out.string() << "\n";
    return ctx.all_pass ? 0 : 1;
}
