#pragma once

#include <iosfwd>
#include <limits>

#include "lorfv/entropy.hpp"
#include "lorfv/mesh.hpp"

namespace lorfv {

/// Closed-form reference solution on the flat background. `breakpoints(t)`
/// lists chart positions where the profile jumps or kinks at time t, so cell
/// averages can split their quadrature there.
struct ExactSolution {
    std::string name;
    std::function<double(double, double)> value; // (t, x) -> u
    std::function<std::vector<double>(double)> breakpoints;
    double valid_until = std::numeric_limits<double>::infinity();

    static ExactSolution constant(double c);
    /// Single shock from x0: u_left for x - x0 < s t with s = (u_l + u_r)/2.
    /// Requires u_left > u_right.
    static ExactSolution burgers_shock(double u_left, double u_right, double x0 = 0.0);
    /// Centered fan from x0: clamp((x - x0)/t, u_left, u_right) for t > 0.
    /// Requires u_left < u_right.
    static ExactSolution burgers_rarefaction(double u_left, double u_right,
                                             double x0 = 0.0);
    /// Entropy solution of periodic two-level data on a circle of length L:
    /// u_top on [x_up, x_down), u_bot elsewhere, with 0 <= u_bot < u_top. The
    /// up-jump opens a fan at x_up, the down-jump drives a shock from x_down;
    /// valid until the fan's fast edge reaches the shock (from either side).
    static ExactSolution burgers_periodic_step(double u_bot, double u_top,
                                               double x_up, double x_down, double L);
};

double exact_eval(const ExactSolution& sol, double t, double x);

/// Face-measure-weighted L1 distance between the slice values and the exact
/// solution at chart time t: sum over carried faces e of |e| |u_e - avg_e sol|,
/// where the average splits its quadrature at every breakpoint crossing the
/// face (periodic images included).
double l1_error(const Mesh& mesh, const SliceState& state, const ExactSolution& sol,
                double t);

/// Line-oriented `key = value` run description. Unknown keys are rejected.
struct RunConfig {
    std::string metric = "minkowski";
    double metric_L = 1.0;
    double metric_k = 1.0;
    std::string flux = "burgers";
    Interval flux_range{-1.0, 1.0};
    double flux_param = 0.5;
    std::string numerical_flux = "lax_friedrichs";
    int nx = 0;
    int nt = 0;        // explicit layer count (with t_end), or
    double t_end = 0.0; // duration with the time step picked from `cfl`
    double cfl = 0.0;   // target admissibility ratio in (0, 1]
    std::string u0 = "constant";
    std::vector<double> u0_params;
    double d_safety = 1.0;
    int quad_order = 5;
    std::string out;
    std::string exact; // optional reference for error reporting
    std::vector<double> exact_params;
    double tol_conservation = 1e-12;
    double tol_linf = 1e-12;
    double tol_entropy = 1e-10;
    double tol_decomposition = 1e-11;
};

RunConfig parse_config(std::istream& in);
RunConfig load_config(const std::string& path);
/// The normalized `key = value` form that parses back to the same config;
/// doubles are printed with 17 significant digits so the round trip is exact.
std::string config_text(const RunConfig& cfg);

/// Initial-data registry: constant [c]; step [hi, lo, x_up, x_down] (hi on
/// [x_up, x_down) mod L, lo elsewhere); sine [amp, mean] for
/// mean + amp sin(2 pi x / L).
std::function<double(double)> make_u0(const std::string& name,
                                      const std::vector<double>& params, double L);

/// Reference solution registry: constant [c]; shock [u_l, u_r, x0];
/// rarefaction [u_l, u_r, x0]; periodic_step [lo, hi, x_up, x_down] on the
/// circle of length L.
ExactSolution make_exact(const std::string& name, const std::vector<double>& params,
                         double L);

/// Mesh, flux and initial data realized from a config. When `cfl` drives the
/// time step, the layer count is the smallest one whose sampled admissibility
/// ratio stays at or below the target.
struct Problem {
    MetricChart g;
    FluxField f;
    Mesh mesh;
    std::function<double(double)> u0;
    RunOptions opt;
};

Problem build_problem(const RunConfig& cfg);

/// Per-slice diagnostics of a finished run. Layer quantities (entropy
/// residual, dissipation, convex-combination certificates) sit on the row of
/// the layer's starting surface; the final surface carries zeros there.
struct SliceDiagnostics {
    int n = 0;
    double t = 0.0;
    double mass = 0.0;
    double drift_rel = 0.0;
    double linf = 0.0;
    double linf_bound = 0.0;
    double entropy_residual = 0.0;
    double dissipation = 0.0;
    double alpha_min = 0.0;
    double alpha_sum_max = 0.0;
    double reconstruction = 0.0;
};

struct RunDiagnostics {
    std::vector<SliceDiagnostics> slices;
    double drift_max = 0.0;
    double entropy_max = -std::numeric_limits<double>::infinity();
    double dissipation_total = 0.0;
    double alpha_min = 0.0;
    double alpha_sum_max = 0.0;
    double reconstruction_max = 0.0;
    EnvelopeReport envelope;
    bool conservation_ok = false;
    bool linf_ok = false;
    bool entropy_ok = false;
    bool decomposition_ok = false;
    bool pass = false;
};

struct RunResult {
    Trajectory traj;
    RunDiagnostics diag;
};

/// Full run plus every runtime diagnostic the stability estimates provide.
RunResult run_with_diagnostics(const Problem& prob, const RunConfig& cfg);

/// x-centroid of the face carrying entry j of slice state n.
double carrier_x(const Mesh& mesh, int n, int j);
/// The carrying face id itself (inflow of layer n, outflow of the last layer).
int carrier_face(const Mesh& mesh, int n, int j);

/// CSV emission. solution.csv has one row per (surface, element): n, t, x, u.
/// summary.csv mirrors SliceDiagnostics. All doubles use 17 significant
/// digits.
void write_solution_csv(std::ostream& os, const Mesh& mesh, const Trajectory& traj);
void write_summary_csv(std::ostream& os, const RunDiagnostics& diag);

/// Reads a solution.csv written above back into per-surface value vectors.
std::vector<std::vector<double>> read_solution_csv(std::istream& is);

/// Rebuilds a trajectory from stored per-surface values: the mass ledger is
/// recomputed from the carried faces, so downstream reports agree with the
/// original run up to the inversion tolerance.
Trajectory trajectory_from_values(const Mesh& mesh, const FluxField& f,
                                  const std::vector<std::vector<double>>& values);

struct ConvergenceRow {
    int nx = 0;
    double h = 0.0;
    double tau = 0.0;
    double anisotropy = 0.0; // h^2 / tau
    double error = 0.0;
    double order = 0.0; // log2(previous error / error), 0 on the first row
};

struct ConvergenceTable {
    std::vector<ConvergenceRow> rows;
    bool errors_decreasing = false;
    double finest_order = 0.0;
};

/// Runs the family (members may execute concurrently, capped by the
/// LORFV_THREADS environment variable; 0 or unset picks the hardware count)
/// and measures each member against the reference at its final time. The
/// family must share metric, flux, initial data and duration, double nx, and
/// refine so that h^2/tau decreases; violations throw InconsistentFamilyError.
ConvergenceTable convergence_study(const std::vector<RunConfig>& family,
                                   const ExactSolution& sol);

/// Command line entry: run | check-mesh | convergence | entropy-report.
/// Exit codes: 0 clean, 1 a checked invariant failed, 2 usage/config errors.
int cli_main(const std::vector<std::string>& args);
int cli_main(int argc, char** argv);

} // namespace lorfv
