#pragma once

#include <string>
#include <vector>

#include "lorfv/scheme.hpp"

namespace lorfv {

/// Convex entropy U with its flux field F(u, p) = int U'(s) d_u f(s, p) ds,
/// normalized so F vanishes at the entropy's base point (the minimizer of U).
/// Two families are built in:
///   kruzkov(lambda): U(u) = |u - lambda|, F = sgn(u - lambda)(f(u) - f(lambda))
///   quadratic(range): U'' = 1 on [lo, hi] and 0 outside, so U' is the clamp
///     u -> clamp(u, lo, hi) - (lo + hi)/2. On the range this is the usual
///     parabola; outside it continues linearly. The truncation keeps U'
///     bounded, which the curved-background estimates need, and makes the pair
///     an exact average of Kruzkov pairs over [lo, hi].
struct EntropyPair {
    enum class Kind { Kruzkov, Quadratic };

    Kind kind = Kind::Kruzkov;
    double lambda = 0.0; // Kruzkov center
    Interval range{-1.0, 1.0}; // quadratic window
    std::string name;

    static EntropyPair kruzkov(double lambda);
    static EntropyPair quadratic(Interval range);

    double U(double u) const;
    double U_prime(double u) const;
    double U_second(double u) const;
    /// Point where U' vanishes: lambda, or the midpoint of the window.
    double base() const;
    /// Kink locations of U'.
    std::vector<double> kinks() const;
};

/// Average over the face of g(F(u, p), n(p)) where n is the past-oriented unit
/// normal on space-like faces and the stored (+x) normal on lateral ones.
/// Kruzkov pairs use the closed form sgn(u - lambda)(mu(u) - mu(lambda));
/// other pairs integrate U'(s) mu'(s) from the base point.
double entropy_face_flux(const Mesh& mesh, const FluxField& f, const EntropyPair& pair,
                         int face_id, double u);

/// The Kruzkov closed form above, directly.
double kruzkov_face_flux(const Mesh& mesh, const FluxField& f, int face_id, double u,
                         double lambda);

/// The entropy rewritten in the conserved face variable m = mu(u):
///   V(m) = int_{mu(base)}^{m} U'(mu^{-1}(w)) dw,
/// evaluated as |m - mu(lambda)| for Kruzkov pairs and otherwise by the
/// substituted quadrature int U'(s) mu'(s) ds after one inversion. V is convex
/// because U' is nondecreasing and mu is increasing; V(mu(base)) = 0.
class FaceEntropyTransform {
public:
    FaceEntropyTransform(const Mesh& mesh, const FluxField& f, const EntropyPair& pair,
                         int face_id);

    double operator()(double m) const;
    /// The quadrature route regardless of pair kind (Kruzkov included), used
    /// to confirm the closed form.
    double by_quadrature(double m) const;

    int face_id() const { return face_id_; }
    const EntropyPair& pair() const { return pair_; }
    /// Lower bound for V'' sampled over the pair's window: 1 / sup mu' for
    /// quadratic pairs, 0 for Kruzkov.
    double convexity_modulus(int n_samples = 33) const;

private:
    const Mesh* mesh_;
    const FluxField* f_;
    EntropyPair pair_;
    int face_id_;
    double mu_base_;
};

/// Kruzkov numerical entropy flux across lateral face `slot` of K:
///   Q(u, v) = q(u v lambda, v v lambda) - q(u ^ lambda, v ^ lambda)
/// (join/meet with lambda). Inherits conservation and monotonicity from q and
/// is consistent with the Kruzkov face flux up to a u-independent offset that
/// is antisymmetric across the face.
double kruzkov_Q(MuCache& cache, const LaxFriedrichs& lf, const Element& K, int slot,
                 double u, double v, double lambda);

/// Numerical entropy flux for an arbitrary pair. Quadratic pairs average the
/// Kruzkov flux over the window, Q = 1/2 int_{lo}^{hi} Q_lambda d lambda,
/// split at the integrand kinks so the quadrature is exact for polynomial
/// fluxes.
double entropy_Q(MuCache& cache, const LaxFriedrichs& lf, const Element& K, int slot,
                 double u, double v, const EntropyPair& pair);

/// Per-cell entropy inequality for one accepted step, per lateral face:
///   L = V(mu_tilde) - V(mu_K^+(u)) + (|d0K|/|e+|)(Q(u, v) - Q(u, u))
/// which must be <= 0; the remainder R = V(mu_bar) - V(mu_tilde) collects the
/// divergence contribution and is reported alongside. `jensen` is the gap
/// V(sum w mu_bar) - sum w V(mu_bar) <= 0 of the convex recombination.
struct CellResidual {
    std::array<double, 2> L{};
    std::array<double, 2> R{};
    double jensen = 0.0;
    double worst() const;
};

CellResidual cell_entropy_residual(MuCache& cache, const LaxFriedrichs& lf,
                                   const Element& K, double u,
                                   const std::array<double, 2>& v,
                                   const EntropyPair& pair);

/// lambda values spanning the trajectory's data: min/max plus interior
/// quantiles of the pooled cell values by default, or an evenly spaced grid.
/// Quantile grids collapse duplicates (piecewise-constant data yields fewer
/// points); the uniform grid always has n_points entries.
std::vector<double> make_lambda_grid(const Trajectory& traj, int n_points = 11,
                                     bool quantiles = true);

struct EntropyReport {
    std::string pair_name;
    std::vector<double> lambda_grid; // empty for a single non-Kruzkov pair
    double tol = 1e-10;
    double max_residual = 0.0; // max over cells, steps (and lambdas) of worst()
    double max_remainder = 0.0; // max |R|
    std::vector<double> per_layer; // max residual per step
    int worst_layer = -1;
    int worst_element = -1;
    double worst_lambda = 0.0;
    bool pass = true;
};

/// Sweeps cell_entropy_residual over every accepted step of the trajectory.
EntropyReport entropy_residual_report(const Mesh& mesh, const FluxField& f,
                                      const LaxFriedrichs& lf, const Trajectory& traj,
                                      const EntropyPair& pair, double tol = 1e-10);

/// Same sweep over a whole Kruzkov grid, aggregated into one report.
EntropyReport entropy_residual_report(const Mesh& mesh, const FluxField& f,
                                      const LaxFriedrichs& lf, const Trajectory& traj,
                                      const std::vector<double>& lambda_grid,
                                      double tol = 1e-10);

/// Accumulated squared distance between the decomposition values mu_bar and
/// the realized update, sum over steps and lateral slots of
/// (|e0||e+|/|d0K|) |mu_bar - mu^{n+1}(u^{n+1})|^2. The per-time ratio is the
/// quantity that stays bounded under refinement. `beta` is the sampled
/// convexity modulus of the face transforms; a positive beta certifies
///   beta/2 * total <= entropy budget + divergence growth,
/// while Kruzkov pairs have beta = 0 and the certificate is refused.
struct DissipationReport {
    std::string pair_name;
    double total = 0.0;
    std::vector<double> per_layer;
    double t_final = 0.0;
    double per_time = 0.0;
    double beta = 0.0;
    bool bound_applicable = false;
    std::string note;
    double entropy_initial = 0.0; // sum |e| V(m/|e|) over H_0
    double entropy_final = 0.0;   // same over H_N
};

DissipationReport dissipation_report(const Mesh& mesh, const FluxField& f,
                                     const LaxFriedrichs& lf, const Trajectory& traj,
                                     const EntropyPair& pair);

/// The default dissipation functional: quadratic pair over the trajectory's
/// data hull.
double dissipation_total(const Mesh& mesh, const FluxField& f, const LaxFriedrichs& lf,
                         const Trajectory& traj);

/// Slice-by-slice check of max|u^n| against the growth envelope
///   (max|u^0| + c1_eff t_n) exp(c2_eff t_n) + 1e-10
/// with the divergence growth constants sampled over the run window and
/// amplified by the inverse-slope bound of the outflow averages.
struct EnvelopeSlice {
    int n = 0;
    double t = 0.0;
    double max_abs = 0.0;
    double bound = 0.0;
    double margin = 0.0; // bound - max_abs
};

struct EnvelopeReport {
    GrowthConstants constants;
    double lip_inverse = 1.0; // 1 / inf mu' over outflow faces
    double c1_eff = 0.0;
    double c2_eff = 0.0;
    std::vector<EnvelopeSlice> slices;
    double min_margin = 0.0;
    bool pass = true;
};

EnvelopeReport linfty_envelope(const Mesh& mesh, const FluxField& f,
                               const Trajectory& traj);

/// Nonnegative test function on the chart, zero outside its support by
/// construction.
struct TestFunction {
    std::string name;
    std::function<double(ChartPoint)> value;
};

/// Smooth bumps exp(1 - 1/(1 - s^2)) in both chart directions, periodic in x,
/// supported strictly before the final layer so every functional below is
/// computable from the stored trajectory.
std::vector<TestFunction> bump_family(const Mesh& mesh, int count = 5);

/// Both sides of the global space-time entropy inequality for one test
/// function: lhs is the boundary-quadrature evaluation of
///   -sum_{n,K} int_K div_g(F(u_K^n, p) phi(p)) dp
/// and rhs = t1 + ... + t5 splits into the remainder term weighted by lateral
/// face averages of phi (t1), the average-vs-element mismatch of V(mu_bar)
/// (t2), the lateral (t3) and space-like (t4) quadrature mismatches of phi
/// against its face averages, and the initial-surface term (t5). Must satisfy
/// lhs <= rhs + tol with tol = tol_factor * (|lhs| + sum |ti|).
struct GlobalEntropyReport {
    std::string pair_name;
    std::string phi_name;
    double lhs = 0.0;
    double t1 = 0.0, t2 = 0.0, t3 = 0.0, t4 = 0.0, t5 = 0.0;
    double rhs = 0.0;
    double scale = 0.0;
    double tol = 0.0;
    double slack = 0.0; // rhs - lhs
    bool pass = true;
};

/// Throws UnsupportedPhi when phi is negative at any face node or nonzero on
/// the final layer's outflow or lateral nodes (the inequality's boundary terms
/// assume the support ends before the last layer; touching H_0 is fine, the
/// explicit t5 term covers it).
GlobalEntropyReport global_entropy_functional(const Mesh& mesh, const FluxField& f,
                                              const LaxFriedrichs& lf,
                                              const Trajectory& traj,
                                              const TestFunction& phi,
                                              const EntropyPair& pair,
                                              double tol_factor = 1e-8);

/// Evaluates the functional for several test functions in one sweep, sharing
/// the per-layer flux caches across them.
std::vector<GlobalEntropyReport> global_entropy_functional(
    const Mesh& mesh, const FluxField& f, const LaxFriedrichs& lf,
    const Trajectory& traj, const std::vector<TestFunction>& phis,
    const EntropyPair& pair, double tol_factor = 1e-8);

} // namespace lorfv
