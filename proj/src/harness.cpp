#include "lorfv/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

namespace lorfv {

namespace {

double wrap_into(double x, double L) { return x - L * std::floor(x / L); }

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

const QuadratureRule& gl16() {
    static const QuadratureRule q = QuadratureRule::gauss_legendre(16);
    return q;
}

} // namespace

ExactSolution ExactSolution::constant(double c) {
    ExactSolution s;
    s.name = "constant(" + fmt(c) + ")";
    s.value = [c](double, double) { return c; };
    s.breakpoints = [](double) { return std::vector<double>{}; };
    return s;
}

ExactSolution ExactSolution::burgers_shock(double u_left, double u_right, double x0) {
    if (!(u_left > u_right))
        throw ConfigError("burgers_shock needs u_left > u_right");
    const double s = 0.5 * (u_left + u_right);
    ExactSolution sol;
    sol.name = "burgers_shock";
    sol.value = [=](double t, double x) {
        return x - x0 < s * t ? u_left : u_right;
    };
    sol.breakpoints = [=](double t) { return std::vector<double>{x0 + s * t}; };
    return sol;
}

ExactSolution ExactSolution::burgers_rarefaction(double u_left, double u_right,
                                                 double x0) {
    if (!(u_left < u_right))
        throw ConfigError("burgers_rarefaction needs u_left < u_right");
    ExactSolution sol;
    sol.name = "burgers_rarefaction";
    sol.value = [=](double t, double x) {
        if (t <= 0.0) return x < x0 ? u_left : u_right;
        return std::clamp((x - x0) / t, u_left, u_right);
    };
    sol.breakpoints = [=](double t) {
        if (t <= 0.0) return std::vector<double>{x0};
        return std::vector<double>{x0 + u_left * t, x0 + u_right * t};
    };
    return sol;
}

ExactSolution ExactSolution::burgers_periodic_step(double u_bot, double u_top,
                                                   double x_up, double x_down,
                                                   double L) {
    if (!(L > 0.0)) throw ConfigError("burgers_periodic_step needs L > 0");
    if (!(0.0 <= u_bot && u_bot < u_top))
        throw ConfigError("burgers_periodic_step needs 0 <= u_bot < u_top");
    const double dsh = wrap_into(x_down - x_up, L);
    if (!(dsh > 0.0))
        throw ConfigError("burgers_periodic_step needs distinct jump positions");
    const double s = 0.5 * (u_top + u_bot);
    ExactSolution sol;
    sol.name = "burgers_periodic_step";
    sol.valid_until =
        std::min(2.0 * dsh, 2.0 * (L - dsh)) / (u_top - u_bot);
    sol.value = [=](double t, double x) {
        const double xr = wrap_into(x - x_up, L);
        if (t <= 0.0) return xr < dsh ? u_top : u_bot;
        if (xr >= dsh + s * t) return u_bot;
        if (xr >= u_top * t) return u_top;
        if (xr >= u_bot * t) return xr / t;
        return u_bot;
    };
    sol.breakpoints = [=](double t) {
        if (t <= 0.0) return std::vector<double>{x_up, x_down};
        return std::vector<double>{x_up + u_bot * t, x_up + u_top * t,
                                   x_up + dsh + s * t};
    };
    return sol;
}

double exact_eval(const ExactSolution& sol, double t, double x) {
    return sol.value(t, x);
}

int carrier_face(const Mesh& mesh, int n, int j) {
    const int l = std::min(n, mesh.n_layers() - 1);
    const std::vector<int>& ids = mesh.layer(l);
    const Element* K = &mesh.element(ids[static_cast<std::size_t>(j)]);
    if (K->pos != j) {
        K = nullptr;
        for (int id : ids)
            if (mesh.element(id).pos == j) {
                K = &mesh.element(id);
                break;
            }
        if (!K) throw BadDimensionsError("no element at the requested position");
    }
    return n == mesh.n_layers() ? K->outflow : K->inflow;
}

double carrier_x(const Mesh& mesh, int n, int j) {
    return mesh.face(carrier_face(mesh, n, j)).centroid.x;
}

namespace {

/// Metric-weighted average of the reference solution over a straight face,
/// with the quadrature split wherever a breakpoint (or one of its periodic
/// images) crosses the face.
double face_average_exact(const Mesh& mesh, const Face& face,
                          const ExactSolution& sol, double t) {
    const MetricChart& g = mesh.metric();
    const double L = g.period();
    SpacetimeVector T;
    T.vt = face.b.t - face.a.t;
    T.vx = face.b.x - face.a.x;

    std::vector<double> cuts{0.0, 1.0};
    if (T.vx != 0.0) {
        const double xa = std::min(face.a.x, face.b.x);
        const double xb = std::max(face.a.x, face.b.x);
        for (double bp : sol.breakpoints(t)) {
            const double k0 = std::ceil((xa - bp) / L);
            for (double k = k0; bp + k * L <= xb; k += 1.0) {
                const double s = (bp + k * L - face.a.x) / T.vx;
                if (s > 0.0 && s < 1.0) cuts.push_back(s);
            }
        }
        std::sort(cuts.begin(), cuts.end());
    }

    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        if (!(cuts[i + 1] > cuts[i])) continue;
        const QuadratureRule& q = gl16();
        const double w = cuts[i + 1] - cuts[i];
        for (std::size_t k = 0; k < q.size(); ++k) {
            const double s = cuts[i] + w * q.nodes[k];
            ChartPoint p{face.a.t + s * T.vt, face.a.x + s * T.vx};
            T.base = p;
            const double dens = std::sqrt(std::abs(inner(g, p, T, T)));
            const double ww = q.weights[k] * w * dens;
            num += ww * sol.value(t, p.x);
            den += ww;
        }
    }
    if (!(den > 0.0)) throw DegenerateFaceError("face has no measure");
    return num / den;
}

} // namespace

double l1_error(const Mesh& mesh, const SliceState& state, const ExactSolution& sol,
                double t) {
    double err = 0.0;
    for (std::size_t j = 0; j < state.u.size(); ++j) {
        const Face& face = mesh.face(carrier_face(mesh, state.n, static_cast<int>(j)));
        const double avg = face_average_exact(mesh, face, sol, t);
        err += face.measure * std::abs(state.u[j] - avg);
    }
    return err;
}

namespace {

std::vector<double> parse_numbers(const std::string& text, const std::string& key) {
    std::vector<double> out;
    std::string item;
    std::istringstream is(text);
    while (is >> item) {
        if (!item.empty() && item.back() == ',') item.pop_back();
        if (item.empty()) continue;
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "': bad number '" + item + "'");
        }
    }
    return out;
}

double parse_one(const std::string& text, const std::string& key) {
    const std::vector<double> v = parse_numbers(text, key);
    if (v.size() != 1)
        throw ConfigError("config key '" + key + "' expects one number");
    return v[0];
}

int parse_int(const std::string& text, const std::string& key) {
    const double v = parse_one(text, key);
    if (v != std::floor(v))
        throw ConfigError("config key '" + key + "' expects an integer");
    return static_cast<int>(v);
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

} // namespace

RunConfig parse_config(std::istream& in) {
    RunConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));

        if (key == "metric") cfg.metric = val;
        else if (key == "metric.L") cfg.metric_L = parse_one(val, key);
        else if (key == "metric.k") cfg.metric_k = parse_one(val, key);
        else if (key == "flux") cfg.flux = val;
        else if (key == "flux.range") {
            const auto v = parse_numbers(val, key);
            if (v.size() != 2 || !(v[0] < v[1]))
                throw ConfigError("flux.range expects 'lo hi' with lo < hi");
            cfg.flux_range = {v[0], v[1]};
        }
        else if (key == "flux.param") cfg.flux_param = parse_one(val, key);
        else if (key == "numerical_flux") cfg.numerical_flux = val;
        else if (key == "nx") cfg.nx = parse_int(val, key);
        else if (key == "nt") cfg.nt = parse_int(val, key);
        else if (key == "t_end") cfg.t_end = parse_one(val, key);
        else if (key == "cfl") cfg.cfl = parse_one(val, key);
        else if (key == "u0") cfg.u0 = val;
        else if (key == "u0.params") cfg.u0_params = parse_numbers(val, key);
        else if (key == "D_safety") cfg.d_safety = parse_one(val, key);
        else if (key == "quad_order") cfg.quad_order = parse_int(val, key);
        else if (key == "out") cfg.out = val;
        else if (key == "exact") cfg.exact = val;
        else if (key == "exact.params") cfg.exact_params = parse_numbers(val, key);
        else if (key == "tol.conservation") cfg.tol_conservation = parse_one(val, key);
        else if (key == "tol.linf") cfg.tol_linf = parse_one(val, key);
        else if (key == "tol.entropy") cfg.tol_entropy = parse_one(val, key);
        else if (key == "tol.decomposition")
            cfg.tol_decomposition = parse_one(val, key);
        else throw ConfigError("unknown config key '" + key + "'");
    }
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    return parse_config(in);
}

std::string config_text(const RunConfig& cfg) {
    std::ostringstream os;
    auto list = [](const std::vector<double>& v) {
        std::string s;
        for (double x : v) {
            if (!s.empty()) s += ' ';
            s += fmt(x);
        }
        return s;
    };
    os << "metric = " << cfg.metric << '\n';
    os << "metric.L = " << fmt(cfg.metric_L) << '\n';
    os << "metric.k = " << fmt(cfg.metric_k) << '\n';
    os << "flux = " << cfg.flux << '\n';
    os << "flux.range = " << fmt(cfg.flux_range.lo) << ' ' << fmt(cfg.flux_range.hi)
       << '\n';
    os << "flux.param = " << fmt(cfg.flux_param) << '\n';
    os << "numerical_flux = " << cfg.numerical_flux << '\n';
    os << "nx = " << cfg.nx << '\n';
    os << "nt = " << cfg.nt << '\n';
    os << "t_end = " << fmt(cfg.t_end) << '\n';
    os << "cfl = " << fmt(cfg.cfl) << '\n';
    os << "u0 = " << cfg.u0 << '\n';
    if (!cfg.u0_params.empty()) os << "u0.params = " << list(cfg.u0_params) << '\n';
    os << "D_safety = " << fmt(cfg.d_safety) << '\n';
    os << "quad_order = " << cfg.quad_order << '\n';
    if (!cfg.out.empty()) os << "out = " << cfg.out << '\n';
    if (!cfg.exact.empty()) {
        os << "exact = " << cfg.exact << '\n';
        if (!cfg.exact_params.empty())
            os << "exact.params = " << list(cfg.exact_params) << '\n';
    }
    os << "tol.conservation = " << fmt(cfg.tol_conservation) << '\n';
    os << "tol.linf = " << fmt(cfg.tol_linf) << '\n';
    os << "tol.entropy = " << fmt(cfg.tol_entropy) << '\n';
    os << "tol.decomposition = " << fmt(cfg.tol_decomposition) << '\n';
    return os.str();
}

std::function<double(double)> make_u0(const std::string& name,
                                      const std::vector<double>& params, double L) {
    auto param = [&](std::size_t i, double dflt) {
        return i < params.size() ? params[i] : dflt;
    };
    if (name == "constant") {
        const double c = param(0, 0.0);
        return [c](double) { return c; };
    }
    if (name == "step") {
        const double hi = param(0, 1.0), lo = param(1, 0.0);
        const double xu = param(2, 0.0), xd = param(3, 0.5);
        const double dsh = wrap_into(xd - xu, L);
        return [=](double x) { return wrap_into(x - xu, L) < dsh ? hi : lo; };
    }
    if (name == "sine") {
        const double amp = param(0, 1.0), mean = param(1, 0.0);
        const double w = 2.0 * std::acos(-1.0) / L;
        return [=](double x) { return mean + amp * std::sin(w * x); };
    }
    throw ConfigError("unknown initial data '" + name + "'");
}

ExactSolution make_exact(const std::string& name, const std::vector<double>& params,
                         double L) {
    auto param = [&](std::size_t i, double dflt) {
        return i < params.size() ? params[i] : dflt;
    };
    if (name == "constant") return ExactSolution::constant(param(0, 0.0));
    if (name == "shock")
        return ExactSolution::burgers_shock(param(0, 1.0), param(1, 0.0),
                                            param(2, 0.0));
    if (name == "rarefaction")
        return ExactSolution::burgers_rarefaction(param(0, 0.0), param(1, 1.0),
                                                  param(2, 0.0));
    if (name == "periodic_step")
        return ExactSolution::burgers_periodic_step(param(0, 0.0), param(1, 1.0),
                                                    param(2, 0.0), param(3, 0.5), L);
    throw ConfigError("unknown exact solution '" + name + "'");
}

Problem build_problem(const RunConfig& cfg) {
    if (cfg.nx < 2) throw ConfigError("nx must be at least 2");
    if (cfg.quad_order < 2 || cfg.quad_order > 16)
        throw ConfigError("quad_order must lie in [2, 16]");
    if (cfg.numerical_flux != "lax_friedrichs")
        throw ConfigError("unknown numerical flux '" + cfg.numerical_flux + "'");
    if (!(cfg.d_safety >= 1.0)) throw ConfigError("D_safety must be >= 1");

    MetricChart g = make_metric(cfg.metric, cfg.metric_L, cfg.metric_k);
    FluxField f = make_flux(cfg.flux, g, cfg.flux_range, cfg.flux_param);
    std::function<double(double)> u0 = make_u0(cfg.u0, cfg.u0_params, cfg.metric_L);

    int nt = cfg.nt;
    if (nt <= 0) {
        if (!(cfg.t_end > 0.0) || !(cfg.cfl > 0.0) || cfg.cfl > 1.0)
            throw ConfigError("need nt with t_end, or t_end with cfl in (0, 1]");
        // The admissibility ratio scales essentially linearly with the layer
        // thickness: calibrate on a one-layer mesh, tighten upward until the
        // target holds, then walk down to the smallest satisfying count.
        Mesh trial = build_uniform(g, cfg.nx, 1, cfg.t_end, cfg.quad_order);
        const double r1 = cfl_report(trial, f, f.declared_range()).max_ratio;
        const double target = cfg.cfl * (1.0 + 1e-9);
        auto ratio_at = [&](int candidate) {
            Mesh m = build_uniform(g, cfg.nx, candidate, cfg.t_end, cfg.quad_order);
            return cfl_report(m, f, f.declared_range()).max_ratio;
        };
        nt = r1 > 0.0
                 ? std::max(1, static_cast<int>(std::ceil(r1 / cfg.cfl * 1.005)))
                 : 1;
        double r = ratio_at(nt);
        for (int iter = 0; r > target && iter < 16; ++iter) {
            nt = std::max(nt + 1,
                          static_cast<int>(std::ceil(nt * r / cfg.cfl * 1.002)));
            r = ratio_at(nt);
        }
        if (r > target) throw ConfigError("could not reach the requested cfl target");
        while (nt > 1 && ratio_at(nt - 1) <= target) --nt;
        Mesh mesh = build_uniform(g, cfg.nx, nt, cfg.t_end, cfg.quad_order);
        return {std::move(g), std::move(f), std::move(mesh), std::move(u0),
                RunOptions{cfg.d_safety, 129, true}};
    }

    if (!(cfg.t_end > 0.0)) throw ConfigError("nt needs a positive t_end");
    Mesh mesh = build_uniform(g, cfg.nx, nt, cfg.t_end, cfg.quad_order);
    const CflReport rep = cfl_report(mesh, f, f.declared_range());
    if (!rep.pass)
        throw ConfigError("explicit nt = " + std::to_string(nt) +
                          " violates the admissibility ratio (max " +
                          fmt(rep.max_ratio) + "); increase nt");
    return {std::move(g), std::move(f), std::move(mesh), std::move(u0),
            RunOptions{cfg.d_safety, 129, true}};
}

RunResult run_with_diagnostics(const Problem& prob, const RunConfig& cfg) {
    const Mesh& mesh = prob.mesh;
    RunResult res{run(mesh, prob.f, prob.u0, prob.opt), {}};
    const Trajectory& traj = res.traj;
    RunDiagnostics& d = res.diag;
    const int n_surf = mesh.n_surfaces();
    const int steps = mesh.n_layers();

    const LaxFriedrichs lf(mesh, prob.f, prob.opt.d_safety, prob.opt.lf_samples);

    double hull_lo = std::numeric_limits<double>::infinity(), hull_hi = -hull_lo;
    for (const SliceState& s : traj.states)
        for (double u : s.u) {
            hull_lo = std::min(hull_lo, u);
            hull_hi = std::max(hull_hi, u);
        }
    if (!(hull_hi - hull_lo > 1e-9)) {
        const double mid = 0.5 * (hull_lo + hull_hi);
        hull_lo = mid - 0.5;
        hull_hi = mid + 0.5;
    }

    const EntropyReport ent = entropy_residual_report(
        mesh, prob.f, lf, traj, make_lambda_grid(traj), cfg.tol_entropy);
    const DissipationReport diss = dissipation_report(
        mesh, prob.f, lf, traj, EntropyPair::quadratic({hull_lo, hull_hi}));
    d.envelope = linfty_envelope(mesh, prob.f, traj);

    d.alpha_min = std::numeric_limits<double>::infinity();
    MuCache cache(mesh, prob.f);
    std::vector<double> a_min(static_cast<std::size_t>(steps)),
        a_sum(static_cast<std::size_t>(steps)), rec(static_cast<std::size_t>(steps));
    for (int n = 0; n < steps; ++n) {
        cache.clear();
        const SliceState& s = traj.states[static_cast<std::size_t>(n)];
        double amin = std::numeric_limits<double>::infinity(), asum = 0.0, rmax = 0.0;
        for (int kid : mesh.layer(n)) {
            const Element& K = mesh.element(kid);
            const double u = s.u[static_cast<std::size_t>(K.pos)];
            std::array<double, 2> v{};
            for (int slot = 0; slot < 2; ++slot)
                v[slot] = s.u[static_cast<std::size_t>(
                    mesh.element(K.lateral_neighbor[slot]).pos)];
            const ConvexDecomposition cd = convex_coefficients(cache, lf, K, u, v);
            amin = std::min({amin, cd.alpha[0], cd.alpha[1]});
            asum = std::max(asum, cd.alpha_sum);
            rmax = std::max(rmax, cd.reconstruction_error);
        }
        a_min[static_cast<std::size_t>(n)] = amin;
        a_sum[static_cast<std::size_t>(n)] = asum;
        rec[static_cast<std::size_t>(n)] = rmax;
        d.alpha_min = std::min(d.alpha_min, amin);
        d.alpha_sum_max = std::max(d.alpha_sum_max, asum);
        d.reconstruction_max = std::max(d.reconstruction_max, rmax);
    }

    const double mass0 = traj.mass.front();
    double mass_scale = 0.0;
    for (double m : traj.states.front().m) mass_scale += std::abs(m);
    mass_scale = std::max(mass_scale, 1e-300);

    for (int n = 0; n < n_surf; ++n) {
        SliceDiagnostics sd;
        sd.n = n;
        sd.t = traj.states[static_cast<std::size_t>(n)].t;
        sd.mass = traj.mass[static_cast<std::size_t>(n)];
        sd.drift_rel = std::abs(sd.mass - mass0) / mass_scale;
        sd.linf = traj.linf[static_cast<std::size_t>(n)];
        sd.linf_bound = d.envelope.slices[static_cast<std::size_t>(n)].bound;
        if (n < steps) {
            sd.entropy_residual = ent.per_layer[static_cast<std::size_t>(n)];
            sd.dissipation = diss.per_layer[static_cast<std::size_t>(n)];
            sd.alpha_min = a_min[static_cast<std::size_t>(n)];
            sd.alpha_sum_max = a_sum[static_cast<std::size_t>(n)];
            sd.reconstruction = rec[static_cast<std::size_t>(n)];
        }
        d.drift_max = std::max(d.drift_max, sd.drift_rel);
        d.slices.push_back(sd);
    }
    d.entropy_max = ent.max_residual;
    d.dissipation_total = diss.total;

    d.conservation_ok = d.drift_max <= cfg.tol_conservation;
    const bool compatible =
        std::abs(d.envelope.constants.c1) <= 1e-13 &&
        std::abs(d.envelope.constants.c2) <= 1e-13;
    if (compatible) {
        const double bound = traj.linf.front() + cfg.tol_linf;
        d.linf_ok = true;
        for (double v : traj.linf) d.linf_ok = d.linf_ok && v <= bound;
    } else {
        d.linf_ok = d.envelope.pass;
    }
    d.entropy_ok = ent.pass;
    d.decomposition_ok = d.alpha_min >= 0.0 && d.alpha_sum_max < 1.0 &&
                         d.reconstruction_max <= cfg.tol_decomposition;
    d.pass = d.conservation_ok && d.linf_ok && d.entropy_ok && d.decomposition_ok;
    return res;
}

void write_solution_csv(std::ostream& os, const Mesh& mesh, const Trajectory& traj) {
    os << "n,t,x,u\n";
    for (std::size_t n = 0; n < traj.states.size(); ++n) {
        const SliceState& s = traj.states[n];
        for (std::size_t j = 0; j < s.u.size(); ++j)
            os << s.n << ',' << fmt(s.t) << ','
               << fmt(carrier_x(mesh, s.n, static_cast<int>(j))) << ','
               << fmt(s.u[j]) << '\n';
    }
}

void write_summary_csv(std::ostream& os, const RunDiagnostics& diag) {
    os << "n,t,mass,drift_rel,linf,linf_bound,entropy_residual,dissipation,"
          "alpha_min,alpha_sum_max,reconstruction\n";
    for (const SliceDiagnostics& s : diag.slices)
        os << s.n << ',' << fmt(s.t) << ',' << fmt(s.mass) << ','
           << fmt(s.drift_rel) << ',' << fmt(s.linf) << ',' << fmt(s.linf_bound)
           << ',' << fmt(s.entropy_residual) << ',' << fmt(s.dissipation) << ','
           << fmt(s.alpha_min) << ',' << fmt(s.alpha_sum_max) << ','
           << fmt(s.reconstruction) << '\n';
}

std::vector<std::vector<double>> read_solution_csv(std::istream& is) {
    std::vector<std::vector<double>> values;
    std::string line;
    if (!std::getline(is, line) || line.rfind("n,t,x,u", 0) != 0)
        throw ConfigError("solution csv: missing 'n,t,x,u' header");
    int lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        std::istringstream row(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(row, cell, ',')) cells.push_back(cell);
        if (cells.size() != 4)
            throw ConfigError("solution csv line " + std::to_string(lineno) +
                              ": expected 4 columns");
        const int n = parse_int(cells[0], "n");
        const double u = parse_one(cells[3], "u");
        if (n < 0 || n > static_cast<int>(values.size()))
            throw ConfigError("solution csv line " + std::to_string(lineno) +
                              ": surfaces out of order");
        if (n == static_cast<int>(values.size())) values.emplace_back();
        values[static_cast<std::size_t>(n)].push_back(u);
    }
    return values;
}

Trajectory trajectory_from_values(const Mesh& mesh, const FluxField& f,
                                  const std::vector<std::vector<double>>& values) {
    if (values.size() != static_cast<std::size_t>(mesh.n_surfaces()))
        throw ConfigError("stored solution does not match the mesh (surface count)");
    Trajectory traj;
    for (int n = 0; n < mesh.n_surfaces(); ++n) {
        const std::vector<double>& u = values[static_cast<std::size_t>(n)];
        const int l = std::min(n, mesh.n_layers() - 1);
        if (u.size() != mesh.layer(l).size())
            throw ConfigError("stored solution does not match the mesh (layer " +
                              std::to_string(n) + ")");
        SliceState s;
        s.n = n;
        s.t = mesh.time_after(n);
        s.u = u;
        s.m.resize(u.size());
        for (std::size_t j = 0; j < u.size(); ++j) {
            const Face& face =
                mesh.face(carrier_face(mesh, n, static_cast<int>(j)));
            s.m[j] = face.measure * mu_past(mesh, f, face.id, u[j]);
        }
        traj.mass.push_back(total_mass(s));
        traj.linf.push_back(max_abs(s));
        traj.states.push_back(std::move(s));
    }
    return traj;
}

namespace {

int thread_cap() {
    const char* env = std::getenv("LORFV_THREADS");
    int v = 0;
    if (env) v = std::atoi(env);
    if (v <= 0) v = static_cast<int>(std::thread::hardware_concurrency());
    return std::max(1, v);
}

template <class Fn>
void parallel_over(std::size_t count, Fn&& fn) {
    const int workers =
        std::min<int>(thread_cap(), static_cast<int>(count));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex err_mutex;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    for (std::thread& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

} // namespace

ConvergenceTable convergence_study(const std::vector<RunConfig>& family,
                                   const ExactSolution& sol) {
    if (family.size() < 2)
        throw InconsistentFamilyError("a convergence family needs >= 2 members");
    const RunConfig& base = family.front();
    for (std::size_t i = 0; i < family.size(); ++i) {
        const RunConfig& c = family[i];
        if (c.metric != base.metric || c.metric_L != base.metric_L ||
            c.metric_k != base.metric_k || c.flux != base.flux ||
            c.flux_param != base.flux_param || c.u0 != base.u0 ||
            c.u0_params != base.u0_params || c.t_end != base.t_end ||
            c.cfl != base.cfl || c.nt != base.nt)
            throw InconsistentFamilyError(
                "family members must share metric, flux, data and timing");
        if (i > 0 && c.nx != 2 * family[i - 1].nx)
            throw InconsistentFamilyError("family must double nx at each level");
    }

    ConvergenceTable table;
    table.rows.resize(family.size());
    parallel_over(family.size(), [&](std::size_t i) {
        const Problem prob = build_problem(family[i]);
        const double t_final = prob.mesh.surface_chart_time(prob.mesh.n_layers());
        if (t_final > sol.valid_until)
            throw InconsistentFamilyError(
                "reference solution is not valid up to the final time");
        const Trajectory traj = run(prob.mesh, prob.f, prob.u0, prob.opt);
        ConvergenceRow& row = table.rows[i];
        row.nx = family[i].nx;
        row.h = prob.mesh.h();
        row.tau = prob.mesh.tau_max();
        row.anisotropy = row.h * row.h / row.tau;
        row.error = l1_error(prob.mesh, traj.states.back(), sol, t_final);
    });

    for (std::size_t i = 1; i < table.rows.size(); ++i)
        if (!(table.rows[i].anisotropy < table.rows[i - 1].anisotropy))
            throw InconsistentFamilyError(
                "family does not refine: h^2/tau fails to decrease between nx = " +
                std::to_string(table.rows[i - 1].nx) + " and nx = " +
                std::to_string(table.rows[i].nx));

    table.errors_decreasing = true;
    for (std::size_t i = 1; i < table.rows.size(); ++i) {
        ConvergenceRow& row = table.rows[i];
        const double prev = table.rows[i - 1].error;
        table.errors_decreasing = table.errors_decreasing && row.error < prev;
        row.order = (row.error > 0.0 && prev > 0.0) ? std::log2(prev / row.error)
                                                    : 0.0;
    }
    table.finest_order = table.rows.back().order;
    return table;
}

namespace {

int usage(const std::string& msg) {
    if (!msg.empty()) std::cerr << "error: " << msg << "\n";
    std::cerr << "usage:\n"
                 "  lorfv run <config> [--out-dir DIR]\n"
                 "  lorfv check-mesh <file.mesh> [--metric NAME] [--L x] [--k x]"
                 " [--quad n]\n"
                 "  lorfv convergence <config> [--levels n]\n"
                 "  lorfv entropy-report <out-dir> [--lambda-grid a,b,...]"
                 " [--entropy quadratic|kruzkov]\n";
    return 2;
}

std::string flag_value(const std::vector<std::string>& args, std::size_t& i) {
    if (i + 1 >= args.size()) throw ConfigError("flag " + args[i] + " needs a value");
    return args[++i];
}

void report_line(const std::string& label, double value, bool ok) {
    std::cout << "  " << label << " = " << fmt(value) << (ok ? "  [ok]" : "  [FAIL]")
              << '\n';
}

int cmd_run(const std::vector<std::string>& args) {
    std::string path, out_dir;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--out-dir") out_dir = flag_value(args, i);
        else if (path.empty()) path = args[i];
        else return usage("unexpected argument '" + args[i] + "'");
    }
    if (path.empty()) return usage("run needs a config file");

    RunConfig cfg = load_config(path);
    if (!out_dir.empty()) cfg.out = out_dir;
    const Problem prob = build_problem(cfg);
    const RunResult res = run_with_diagnostics(prob, cfg);
    const Mesh& mesh = prob.mesh;

    std::cout << "run: " << cfg.flux << " on " << cfg.metric << ", nx = " << cfg.nx
              << ", layers = " << mesh.n_layers() << ", h = " << fmt(mesh.h())
              << ", tau = " << fmt(mesh.tau_max()) << '\n';
    report_line("conservation drift (relative)", res.diag.drift_max,
                res.diag.conservation_ok);
    report_line("max |u|", res.traj.linf.back(), res.diag.linf_ok);
    report_line("entropy residual max", res.diag.entropy_max, res.diag.entropy_ok);
    report_line("dissipation total", res.diag.dissipation_total, true);
    report_line("alpha min", res.diag.alpha_min, res.diag.alpha_min >= 0.0);
    report_line("alpha sum max", res.diag.alpha_sum_max,
                res.diag.alpha_sum_max < 1.0);
    report_line("reconstruction error", res.diag.reconstruction_max,
                res.diag.reconstruction_max <= cfg.tol_decomposition);
    if (!cfg.exact.empty()) {
        const ExactSolution sol =
            make_exact(cfg.exact, cfg.exact_params, cfg.metric_L);
        const double tf = mesh.surface_chart_time(mesh.n_layers());
        std::cout << "  L1 error vs " << sol.name << " = "
                  << fmt(l1_error(mesh, res.traj.states.back(), sol, tf)) << '\n';
    }

    if (!cfg.out.empty()) {
        namespace fs = std::filesystem;
        fs::create_directories(cfg.out);
        std::ofstream(fs::path(cfg.out) / "config.cfg") << config_text(cfg);
        std::ofstream sol_os(fs::path(cfg.out) / "solution.csv");
        write_solution_csv(sol_os, mesh, res.traj);
        std::ofstream sum_os(fs::path(cfg.out) / "summary.csv");
        write_summary_csv(sum_os, res.diag);
        std::cout << "  wrote " << cfg.out << "/{config.cfg,solution.csv,summary.csv}"
                  << '\n';
    }
    std::cout << (res.diag.pass ? "PASS" : "FAIL") << '\n';
    return res.diag.pass ? 0 : 1;
}

int cmd_check_mesh(const std::vector<std::string>& args) {
    std::string path, metric = "minkowski";
    double L = 1.0, k = 1.0;
    int quad = 5;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--metric") metric = flag_value(args, i);
        else if (args[i] == "--L") L = parse_one(flag_value(args, i), "--L");
        else if (args[i] == "--k") k = parse_one(flag_value(args, i), "--k");
        else if (args[i] == "--quad")
            quad = parse_int(flag_value(args, i), "--quad");
        else if (path.empty()) path = args[i];
        else return usage("unexpected argument '" + args[i] + "'");
    }
    if (path.empty()) return usage("check-mesh needs a mesh file");

    const MetricChart g = make_metric(metric, L, k);
    Mesh mesh = [&] {
        try {
            return read_mesh_file(path, g, quad);
        } catch (const MeshParseError& e) {
            throw ConfigError(e.what());
        }
    }();
    validate_mesh(mesh);
    const DeviationReport dev = cartesian_deviation(mesh);
    std::cout << "mesh: " << mesh.elements().size() << " elements, "
              << mesh.n_layers() << " layers, h = " << fmt(mesh.h()) << '\n';
    report_line("pairwise normal deviation", dev.eta_normals, dev.pairwise_ok);
    report_line("pairwise time-direction deviation", dev.eta_w, dev.pairwise_ok);
    report_line("aggregate deviation", dev.aggregate_max, dev.aggregate_ok);
    report_line("outflow flatness", dev.flatness_max, dev.flatness_ok);
    report_line("face-average smoothness proxy", dev.smoothness_max,
                dev.smoothness_ok);
    std::cout << (dev.pass ? "PASS" : "FAIL") << '\n';
    return dev.pass ? 0 : 1;
}

int cmd_convergence(const std::vector<std::string>& args) {
    std::string path;
    int levels = 4;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--levels")
            levels = parse_int(flag_value(args, i), "--levels");
        else if (path.empty()) path = args[i];
        else return usage("unexpected argument '" + args[i] + "'");
    }
    if (path.empty()) return usage("convergence needs a config file");
    if (levels < 2) return usage("--levels must be >= 2");

    const RunConfig base = load_config(path);
    if (base.exact.empty())
        throw ConfigError("convergence needs an 'exact' reference in the config");
    const ExactSolution sol = make_exact(base.exact, base.exact_params, base.metric_L);

    std::vector<RunConfig> family;
    for (int l = 0; l < levels; ++l) {
        RunConfig c = base;
        c.nx = base.nx << l;
        c.out.clear();
        family.push_back(c);
    }
    const ConvergenceTable table = convergence_study(family, sol);

    std::cout << "convergence vs " << sol.name << ":\n";
    std::cout << "  nx      h            tau          h^2/tau      L1 error     "
                 "order\n";
    for (const ConvergenceRow& r : table.rows) {
        char line[160];
        std::snprintf(line, sizeof line,
                      "  %-6d  %-11.4e  %-11.4e  %-11.4e  %-11.4e  %.3f\n", r.nx,
                      r.h, r.tau, r.anisotropy, r.error, r.order);
        std::cout << line;
    }
    double max_err = 0.0;
    for (const ConvergenceRow& r : table.rows) max_err = std::max(max_err, r.error);
    const bool pass = table.errors_decreasing || max_err <= 1e-12;
    std::cout << (pass ? "PASS" : "FAIL") << '\n';
    return pass ? 0 : 1;
}

int cmd_entropy_report(const std::vector<std::string>& args) {
    std::string dir, entropy = "kruzkov", grid_text;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--entropy") entropy = flag_value(args, i);
        else if (args[i] == "--lambda-grid") grid_text = flag_value(args, i);
        else if (dir.empty()) dir = args[i];
        else return usage("unexpected argument '" + args[i] + "'");
    }
    if (dir.empty()) return usage("entropy-report needs a run output directory");
    if (entropy != "kruzkov" && entropy != "quadratic")
        return usage("--entropy must be quadratic or kruzkov");

    namespace fs = std::filesystem;
    const RunConfig cfg = load_config((fs::path(dir) / "config.cfg").string());
    const Problem prob = build_problem(cfg);
    std::ifstream sol_is(fs::path(dir) / "solution.csv");
    if (!sol_is) throw ConfigError("cannot open " + dir + "/solution.csv");
    const Trajectory traj =
        trajectory_from_values(prob.mesh, prob.f, read_solution_csv(sol_is));
    const LaxFriedrichs lf(prob.mesh, prob.f, cfg.d_safety, 129);

    double hull_lo = std::numeric_limits<double>::infinity(), hull_hi = -hull_lo;
    for (const SliceState& s : traj.states)
        for (double u : s.u) {
            hull_lo = std::min(hull_lo, u);
            hull_hi = std::max(hull_hi, u);
        }
    if (!(hull_hi - hull_lo > 1e-9)) {
        hull_lo -= 0.5;
        hull_hi += 0.5;
    }

    EntropyReport ent;
    if (entropy == "kruzkov") {
        std::vector<double> grid;
        if (!grid_text.empty()) {
            grid = parse_numbers(grid_text, "--lambda-grid");
            if (grid.empty()) return usage("--lambda-grid is empty");
        } else {
            grid = make_lambda_grid(traj);
        }
        ent = entropy_residual_report(prob.mesh, prob.f, lf, traj, grid,
                                      cfg.tol_entropy);
    } else {
        ent = entropy_residual_report(prob.mesh, prob.f, lf, traj,
                                      EntropyPair::quadratic({hull_lo, hull_hi}),
                                      cfg.tol_entropy);
    }
    const DissipationReport diss =
        dissipation_report(prob.mesh, prob.f, lf, traj,
                           entropy == "kruzkov"
                               ? EntropyPair::kruzkov(0.5 * (hull_lo + hull_hi))
                               : EntropyPair::quadratic({hull_lo, hull_hi}));
    const EnvelopeReport env = linfty_envelope(prob.mesh, prob.f, traj);

    std::ofstream csv(fs::path(dir) / "entropy.csv");
    csv << "n,max_residual,dissipation,envelope_margin\n";
    for (std::size_t n = 0; n < ent.per_layer.size(); ++n)
        csv << n << ',' << fmt(ent.per_layer[n]) << ',' << fmt(diss.per_layer[n])
            << ',' << fmt(env.slices[n].margin) << '\n';

    std::cout << "entropy report (" << ent.pair_name << ") for " << dir << ":\n";
    report_line("max residual", ent.max_residual, ent.pass);
    report_line("max remainder |R|", ent.max_remainder, true);
    report_line("dissipation total", diss.total, true);
    report_line("dissipation per time", diss.per_time, true);
    if (!diss.note.empty()) std::cout << "  note: " << diss.note << '\n';
    report_line("envelope min margin", env.min_margin, env.pass);
    std::cout << "  wrote " << dir << "/entropy.csv\n";
    const bool pass = ent.pass && env.pass;
    std::cout << (pass ? "PASS" : "FAIL") << '\n';
    return pass ? 0 : 1;
}

} // namespace

int cli_main(const std::vector<std::string>& args) {
    if (args.empty()) return usage("");
    try {
        if (args[0] == "run") return cmd_run(args);
        if (args[0] == "check-mesh") return cmd_check_mesh(args);
        if (args[0] == "convergence") return cmd_convergence(args);
        if (args[0] == "entropy-report") return cmd_entropy_report(args);
        return usage("unknown subcommand '" + args[0] + "'");
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

int cli_main(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return cli_main(args);
}

} // namespace lorfv
