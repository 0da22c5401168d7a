#pragma once

#include <array>
#include <functional>

#include "lorfv/flux.hpp"

namespace lorfv {

/// Discrete state on hypersurface H_n. Entry j belongs to the element at
/// position j of layer n (for the final surface, of layer n-1): u is the cell
/// value carried by that element's inflow (resp. outflow) face, m the exact
/// mass ledger |e| * mu_past(e, u). The ledger is what the next step consumes,
/// so conservation is independent of the inversion tolerance.
struct SliceState {
    int n = 0;
    double t = 0.0; // scheme time t_n = sum_{j<n} tau_j
    std::vector<double> u;
    std::vector<double> m;
};

/// Face-averages the initial data over every H_0 face and fills the ledger.
SliceState init(const Mesh& mesh, const FluxField& f,
                const std::function<double(double)>& u0);

/// One layer sweep H_n -> H_{n+1}:
///   |e+| mu_K^+(u') = m_K - sum_{e0} |e0| q_{K,e0}(u_K, u_neighbor)
/// with one Lax-Friedrichs evaluation per geometric lateral face, reused with
/// opposite sign on the other side, and u' recovered by mu_inverse.
SliceState step(const Mesh& mesh, const FluxField& f, const LaxFriedrichs& lf,
                MuCache& cache, const SliceState& s);

double total_mass(const SliceState& s);
double max_abs(const SliceState& s);

struct RunOptions {
    double d_safety = 1.0;
    int lf_samples = 129;
    bool keep_states = true; // keep every slice, not just the endpoints
};

struct Trajectory {
    std::vector<SliceState> states;
    std::vector<double> mass; // per surface
    std::vector<double> linf; // per surface
};

/// Marches the full mesh from the given initial data.
Trajectory run(const Mesh& mesh, const FluxField& f,
               const std::function<double(double)>& u0, const RunOptions& opt = {});

/// Per-lateral-face pieces of the convex decomposition of one update:
///   mu_tilde_e0 = mu_K^+(u) - (|d0K|/|e+|) (q(u,v) - q(u,u))
///   mu_bar_e0   = mu_tilde_e0 - defect/|e+|
/// where defect is the boundary-integral compatibility defect at frozen u,
/// so that sum_e0 (|e0|/|d0K|) mu_bar_e0 equals mu_K^+(u') exactly whenever
/// the ledger is consistent.
struct LateralDecomposition {
    double mu_plus_u = 0.0;
    double defect = 0.0;
    std::array<double, 2> w{};        // |e0| / |d0K|
    std::array<double, 2> q_uv{};
    std::array<double, 2> q_uu{};
    std::array<double, 2> mu_tilde{};
    std::array<double, 2> mu_bar{};
};

LateralDecomposition lateral_decomposition(MuCache& cache, const LaxFriedrichs& lf,
                                           const Element& K, double u,
                                           const std::array<double, 2>& v);

/// Convex-combination form of the same update: writes mu_tilde_e0 as
/// (1 - a) mu_K^+(u) + a mu_K^+(v_e0) and reports the aggregated weights
/// alpha_e0 = (|e0|/|d0K|) a_e0. Under the CFL condition each alpha lies in
/// [0, 1) and their sum stays below 1. Near-equal arguments (0/0) drop the
/// term: the guard triggers only when the two averages differ by <=
/// 1e-14 * scale, where the dropped contribution is of the same size.
struct ConvexDecomposition {
    LateralDecomposition parts;
    std::array<double, 2> alpha{};
    double alpha_sum = 0.0;
    double mu_plus_next = 0.0;       // direct evaluation of the update
    double reconstruction_error = 0.0; // |alpha-form - direct form|
    bool coefficients_ok = false;
};

ConvexDecomposition convex_coefficients(MuCache& cache, const LaxFriedrichs& lf,
                                        const Element& K, double u,
                                        const std::array<double, 2>& v);

} // namespace lorfv
