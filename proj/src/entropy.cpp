#include "lorfv/entropy.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_map>

namespace lorfv {

namespace {

const QuadratureRule& gl16() {
    static const QuadratureRule q = QuadratureRule::gauss_legendre(16);
    return q;
}

const QuadratureRule& gl32() {
    static const QuadratureRule q = QuadratureRule::gauss_legendre(32);
    return q;
}

template <class Fn>
double integrate_on(const QuadratureRule& q, double a, double b, Fn&& fn) {
    const double w = b - a;
    double acc = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i)
        acc += q.weights[i] * fn(a + w * q.nodes[i]);
    return acc * w;
}

/// Signed integral from a to b, split at the kink locations of U'.
template <class Fn>
double integrate_split(const EntropyPair& pair, double a, double b, Fn&& fn) {
    if (a == b) return 0.0;
    const double sign = b >= a ? 1.0 : -1.0;
    const double lo = std::min(a, b), hi = std::max(a, b);
    std::vector<double> bp{lo};
    for (double k : pair.kinks())
        if (k > lo && k < hi) bp.push_back(k);
    bp.push_back(hi);
    std::sort(bp.begin(), bp.end());
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < bp.size(); ++i)
        acc += integrate_on(gl32(), bp[i], bp[i + 1], fn);
    return sign * acc;
}

/// Face average of g(f(u), n) with the orientation the entropy machinery
/// uses everywhere: past on space-like faces, the stored normal on laterals.
double mu_oriented(const Mesh& mesh, const FluxField& f, int fid, double u) {
    return mesh.face(fid).causal == Causal::Spacelike
               ? mu_past(mesh, f, fid, u)
               : mu_canonical(mesh, f, fid, u);
}

double dmu_oriented(const Mesh& mesh, const FluxField& f, int fid, double u) {
    return mesh.face(fid).causal == Causal::Spacelike
               ? mu_past_derivative(mesh, f, fid, u)
               : mu_canonical_derivative(mesh, f, fid, u);
}

double sq(double x) { return x * x; }

void require_full_trajectory(const Mesh& mesh, const Trajectory& traj) {
    if (traj.states.size() != static_cast<std::size_t>(mesh.n_surfaces()))
        throw BadDimensionsError(
            "trajectory does not carry one state per surface (run with keep_states)");
}

std::array<double, 2> neighbor_values(const Mesh& mesh, const Element& K,
                                      const SliceState& s) {
    std::array<double, 2> v{};
    for (int slot = 0; slot < 2; ++slot) {
        const Element& n = mesh.element(K.lateral_neighbor[slot]);
        v[slot] = s.u[static_cast<std::size_t>(n.pos)];
    }
    return v;
}

template <class VFn, class QFn>
void fill_residual(CellResidual& r, const LateralDecomposition& ld, double ratio,
                   VFn&& V, QFn&& Q, double u, const std::array<double, 2>& v) {
    const double Vu = V(ld.mu_plus_u);
    double recombined = 0.0, vsum = 0.0;
    for (int s = 0; s < 2; ++s) {
        const double Vt = V(ld.mu_tilde[s]);
        const double Vb = V(ld.mu_bar[s]);
        const double dq = Q(s, u, v[s]) - Q(s, u, u);
        r.L[s] = Vt - Vu + ratio * dq;
        r.R[s] = Vb - Vt;
        recombined += ld.w[s] * ld.mu_bar[s];
        vsum += ld.w[s] * Vb;
    }
    r.jensen = V(recombined) - vsum;
}

CellResidual residual_from_parts(MuCache& cache, const LaxFriedrichs& lf,
                                 const Element& K, double u,
                                 const std::array<double, 2>& v,
                                 const LateralDecomposition& ld,
                                 const EntropyPair& pair) {
    const Mesh& mesh = cache.mesh();
    const double ratio = K.lateral_measure / mesh.face(K.outflow).measure;
    CellResidual r;
    if (pair.kind == EntropyPair::Kind::Kruzkov) {
        const double mu_l = cache.past(K.outflow, pair.lambda);
        fill_residual(
            r, ld, ratio, [mu_l](double m) { return std::abs(m - mu_l); },
            [&](int s, double a, double b) {
                return kruzkov_Q(cache, lf, K, s, a, b, pair.lambda);
            },
            u, v);
    } else {
        const FaceEntropyTransform V(mesh, cache.flux(), pair, K.outflow);
        fill_residual(
            r, ld, ratio, [&V](double m) { return V(m); },
            [&](int s, double a, double b) {
                return entropy_Q(cache, lf, K, s, a, b, pair);
            },
            u, v);
    }
    return r;
}

} // namespace

EntropyPair EntropyPair::kruzkov(double lambda) {
    EntropyPair p;
    p.kind = Kind::Kruzkov;
    p.lambda = lambda;
    std::ostringstream name;
    name << "kruzkov(" << lambda << ")";
    p.name = name.str();
    return p;
}

EntropyPair EntropyPair::quadratic(Interval range) {
    if (!(range.lo < range.hi))
        throw EmptyRangeError("quadratic entropy needs a window of positive width");
    EntropyPair p;
    p.kind = Kind::Quadratic;
    p.range = range;
    std::ostringstream name;
    name << "quadratic[" << range.lo << "," << range.hi << "]";
    p.name = name.str();
    return p;
}

double EntropyPair::base() const {
    return kind == Kind::Kruzkov ? lambda : 0.5 * (range.lo + range.hi);
}

double EntropyPair::U_prime(double u) const {
    if (kind == Kind::Kruzkov) return u > lambda ? 1.0 : (u < lambda ? -1.0 : 0.0);
    return std::clamp(u, range.lo, range.hi) - base();
}

double EntropyPair::U_second(double u) const {
    if (kind == Kind::Kruzkov) return 0.0;
    return (u >= range.lo && u <= range.hi) ? 1.0 : 0.0;
}

double EntropyPair::U(double u) const {
    if (kind == Kind::Kruzkov) return std::abs(u - lambda);
    const double m0 = base();
    if (u > range.hi) return 0.5 * sq(range.hi - m0) + (range.hi - m0) * (u - range.hi);
    if (u < range.lo) return 0.5 * sq(range.lo - m0) + (range.lo - m0) * (u - range.lo);
    return 0.5 * sq(u - m0);
}

std::vector<double> EntropyPair::kinks() const {
    if (kind == Kind::Kruzkov) return {lambda};
    return {range.lo, range.hi};
}

double entropy_face_flux(const Mesh& mesh, const FluxField& f, const EntropyPair& pair,
                         int face_id, double u) {
    if (pair.kind == EntropyPair::Kind::Kruzkov)
        return kruzkov_face_flux(mesh, f, face_id, u, pair.lambda);
    return integrate_split(pair, pair.base(), u, [&](double s) {
        return pair.U_prime(s) * dmu_oriented(mesh, f, face_id, s);
    });
}

double kruzkov_face_flux(const Mesh& mesh, const FluxField& f, int face_id, double u,
                         double lambda) {
    const double sg = u > lambda ? 1.0 : (u < lambda ? -1.0 : 0.0);
    if (sg == 0.0) return 0.0;
    return sg * (mu_oriented(mesh, f, face_id, u) - mu_oriented(mesh, f, face_id, lambda));
}

FaceEntropyTransform::FaceEntropyTransform(const Mesh& mesh, const FluxField& f,
                                           const EntropyPair& pair, int face_id)
    : mesh_(&mesh), f_(&f), pair_(pair), face_id_(face_id) {
    if (mesh.face(face_id).causal != Causal::Spacelike)
        throw MeshInvalidError("entropy transform needs a space-like face");
    mu_base_ = mu_past(mesh, f, face_id, pair.base());
}

double FaceEntropyTransform::operator()(double m) const {
    if (pair_.kind == EntropyPair::Kind::Kruzkov) return std::abs(m - mu_base_);
    return by_quadrature(m);
}

double FaceEntropyTransform::by_quadrature(double m) const {
    const double um = mu_inverse(*mesh_, *f_, face_id_, m);
    return integrate_split(pair_, pair_.base(), um, [&](double s) {
        return pair_.U_prime(s) * mu_past_derivative(*mesh_, *f_, face_id_, s);
    });
}

double FaceEntropyTransform::convexity_modulus(int n_samples) const {
    if (pair_.kind == EntropyPair::Kind::Kruzkov) return 0.0;
    if (n_samples < 2) throw EmptyRangeError("convexity_modulus: need >= 2 samples");
    double sup = 0.0;
    for (int i = 0; i < n_samples; ++i) {
        const double s =
            pair_.range.lo + pair_.range.width() * i / (n_samples - 1.0);
        const double d = mu_past_derivative(*mesh_, *f_, face_id_, s);
        if (!(d > 0.0)) return 0.0;
        sup = std::max(sup, d);
    }
    return 1.0 / sup;
}

double kruzkov_Q(MuCache& cache, const LaxFriedrichs& lf, const Element& K, int slot,
                 double u, double v, double lambda) {
    return lf.flux(cache, K, slot, std::max(u, lambda), std::max(v, lambda)) -
           lf.flux(cache, K, slot, std::min(u, lambda), std::min(v, lambda));
}

double entropy_Q(MuCache& cache, const LaxFriedrichs& lf, const Element& K, int slot,
                 double u, double v, const EntropyPair& pair) {
    if (pair.kind == EntropyPair::Kind::Kruzkov)
        return kruzkov_Q(cache, lf, K, slot, u, v, pair.lambda);
    const double lo = pair.range.lo, hi = pair.range.hi;
    std::array<double, 4> bp{lo, std::clamp(u, lo, hi), std::clamp(v, lo, hi), hi};
    std::sort(bp.begin(), bp.end());
    double acc = 0.0;
    for (int i = 0; i + 1 < 4; ++i) {
        if (!(bp[i + 1] > bp[i])) continue;
        acc += integrate_on(gl16(), bp[i], bp[i + 1], [&](double lambda) {
            return kruzkov_Q(cache, lf, K, slot, u, v, lambda);
        });
    }
    return 0.5 * acc;
}

double CellResidual::worst() const { return std::max({L[0], L[1], jensen}); }

CellResidual cell_entropy_residual(MuCache& cache, const LaxFriedrichs& lf,
                                   const Element& K, double u,
                                   const std::array<double, 2>& v,
                                   const EntropyPair& pair) {
    const LateralDecomposition ld = lateral_decomposition(cache, lf, K, u, v);
    return residual_from_parts(cache, lf, K, u, v, ld, pair);
}

std::vector<double> make_lambda_grid(const Trajectory& traj, int n_points,
                                     bool quantiles) {
    if (n_points < 1) throw EmptyGridError("make_lambda_grid: need >= 1 point");
    std::vector<double> pool;
    for (const SliceState& s : traj.states)
        pool.insert(pool.end(), s.u.begin(), s.u.end());
    if (pool.empty()) throw EmptyGridError("make_lambda_grid: empty trajectory");
    std::sort(pool.begin(), pool.end());
    const double lo = pool.front(), hi = pool.back();
    if (lo == hi || n_points == 1) return {lo};

    std::vector<double> grid;
    if (quantiles) {
        for (int k = 0; k < n_points; ++k) {
            const std::size_t idx = static_cast<std::size_t>(
                std::llround(static_cast<double>(k) * (pool.size() - 1) /
                             (n_points - 1)));
            grid.push_back(pool[idx]);
        }
        grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
        if (grid.size() >= 2) return grid;
        grid.clear();
    }
    for (int k = 0; k < n_points; ++k)
        grid.push_back(lo + (hi - lo) * k / (n_points - 1.0));
    return grid;
}

namespace {

EntropyReport residual_sweep(const Mesh& mesh, const FluxField& f,
                             const LaxFriedrichs& lf, const Trajectory& traj,
                             const std::vector<EntropyPair>& pairs,
                             const std::string& name, double tol) {
    require_full_trajectory(mesh, traj);
    EntropyReport rep;
    rep.pair_name = name;
    rep.tol = tol;
    rep.max_residual = -std::numeric_limits<double>::infinity();
    for (const EntropyPair& p : pairs)
        if (p.kind == EntropyPair::Kind::Kruzkov) rep.lambda_grid.push_back(p.lambda);
    const int steps = mesh.n_layers();
    rep.per_layer.assign(static_cast<std::size_t>(steps),
                         -std::numeric_limits<double>::infinity());

    MuCache cache(mesh, f);
    for (int n = 0; n < steps; ++n) {
        cache.clear();
        const SliceState& s = traj.states[static_cast<std::size_t>(n)];
        for (int kid : mesh.layer(n)) {
            const Element& K = mesh.element(kid);
            const double u = s.u[static_cast<std::size_t>(K.pos)];
            const std::array<double, 2> v = neighbor_values(mesh, K, s);
            const LateralDecomposition ld = lateral_decomposition(cache, lf, K, u, v);
            for (const EntropyPair& p : pairs) {
                const CellResidual r = residual_from_parts(cache, lf, K, u, v, ld, p);
                const double w = r.worst();
                rep.max_remainder =
                    std::max({rep.max_remainder, std::abs(r.R[0]), std::abs(r.R[1])});
                auto& layer_max = rep.per_layer[static_cast<std::size_t>(n)];
                layer_max = std::max(layer_max, w);
                if (w > rep.max_residual) {
                    rep.max_residual = w;
                    rep.worst_layer = n;
                    rep.worst_element = K.id;
                    rep.worst_lambda =
                        p.kind == EntropyPair::Kind::Kruzkov ? p.lambda : 0.0;
                }
            }
        }
    }
    rep.pass = rep.max_residual <= tol;
    return rep;
}

} // namespace

EntropyReport entropy_residual_report(const Mesh& mesh, const FluxField& f,
                                      const LaxFriedrichs& lf, const Trajectory& traj,
                                      const EntropyPair& pair, double tol) {
    return residual_sweep(mesh, f, lf, traj, {pair}, pair.name, tol);
}

EntropyReport entropy_residual_report(const Mesh& mesh, const FluxField& f,
                                      const LaxFriedrichs& lf, const Trajectory& traj,
                                      const std::vector<double>& lambda_grid,
                                      double tol) {
    if (lambda_grid.empty())
        throw EmptyGridError("entropy_residual_report: empty lambda grid");
    std::vector<EntropyPair> pairs;
    pairs.reserve(lambda_grid.size());
    for (double l : lambda_grid) pairs.push_back(EntropyPair::kruzkov(l));
    std::ostringstream name;
    name << "kruzkov sweep (" << lambda_grid.size() << " values)";
    return residual_sweep(mesh, f, lf, traj, pairs, name.str(), tol);
}

DissipationReport dissipation_report(const Mesh& mesh, const FluxField& f,
                                     const LaxFriedrichs& lf, const Trajectory& traj,
                                     const EntropyPair& pair) {
    require_full_trajectory(mesh, traj);
    DissipationReport rep;
    rep.pair_name = pair.name;
    const int steps = mesh.n_layers();
    rep.per_layer.assign(static_cast<std::size_t>(steps), 0.0);

    MuCache cache(mesh, f);
    long double total = 0.0L;
    double beta = std::numeric_limits<double>::infinity();
    long double e0 = 0.0L, e1 = 0.0L;

    for (int n = 0; n < steps; ++n) {
        cache.clear();
        const SliceState& s = traj.states[static_cast<std::size_t>(n)];
        const SliceState& next = traj.states[static_cast<std::size_t>(n + 1)];
        long double layer = 0.0L;
        for (int kid : mesh.layer(n)) {
            const Element& K = mesh.element(kid);
            const double u = s.u[static_cast<std::size_t>(K.pos)];
            const std::array<double, 2> v = neighbor_values(mesh, K, s);
            const LateralDecomposition ld = lateral_decomposition(cache, lf, K, u, v);
            const double eplus = mesh.face(K.outflow).measure;
            const double y = next.m[static_cast<std::size_t>(K.pos)] / eplus;
            for (int slot = 0; slot < 2; ++slot)
                layer += static_cast<long double>(ld.w[slot]) * eplus *
                         sq(ld.mu_bar[slot] - y);
            const FaceEntropyTransform V(mesh, f, pair, K.outflow);
            beta = std::min(beta, V.convexity_modulus());
            if (n == 0) {
                const FaceEntropyTransform V0(mesh, f, pair, K.inflow);
                const double ein = mesh.face(K.inflow).measure;
                e0 += ein * V0(s.m[static_cast<std::size_t>(K.pos)] / ein);
            }
            if (n == steps - 1)
                e1 += eplus * V(next.m[static_cast<std::size_t>(K.pos)] / eplus);
        }
        rep.per_layer[static_cast<std::size_t>(n)] = static_cast<double>(layer);
        total += layer;
    }

    rep.total = static_cast<double>(total);
    rep.t_final = traj.states.back().t - traj.states.front().t;
    rep.per_time = rep.t_final > 0.0 ? rep.total / rep.t_final : 0.0;
    rep.entropy_initial = static_cast<double>(e0);
    rep.entropy_final = static_cast<double>(e1);
    rep.beta = std::isfinite(beta) ? beta : 0.0;
    if (pair.kind == EntropyPair::Kind::Kruzkov) {
        rep.beta = 0.0;
        rep.bound_applicable = false;
        rep.note = "Kruzkov entropies have zero convexity modulus; "
                   "the quantitative dissipation certificate is refused";
    } else {
        rep.bound_applicable = rep.beta > 0.0;
        if (!rep.bound_applicable)
            rep.note = "sampled convexity modulus is not positive";
    }
    return rep;
}

double dissipation_total(const Mesh& mesh, const FluxField& f, const LaxFriedrichs& lf,
                         const Trajectory& traj) {
    require_full_trajectory(mesh, traj);
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const SliceState& s : traj.states)
        for (double u : s.u) {
            lo = std::min(lo, u);
            hi = std::max(hi, u);
        }
    if (!(hi - lo > 1e-9)) {
        const double mid = 0.5 * (lo + hi);
        lo = mid - 0.5;
        hi = mid + 0.5;
    }
    return dissipation_report(mesh, f, lf, traj, EntropyPair::quadratic({lo, hi}))
        .total;
}

EnvelopeReport linfty_envelope(const Mesh& mesh, const FluxField& f,
                               const Trajectory& traj) {
    require_full_trajectory(mesh, traj);
    EnvelopeReport rep;
    const MetricChart& g = mesh.metric();
    const double t0 = mesh.surface_chart_time(0);
    const double t1 = mesh.surface_chart_time(mesh.n_layers());
    rep.constants = estimate_growth_constants(f, g, t0, t1, f.declared_range());

    const Interval range = f.declared_range();
    double inf_slope = std::numeric_limits<double>::infinity();
    const int n_samples = 33;
    for (const Face& face : mesh.faces()) {
        if (face.causal != Causal::Spacelike) continue;
        for (int i = 0; i < n_samples; ++i) {
            const double u = range.lo + range.width() * i / (n_samples - 1.0);
            inf_slope = std::min(inf_slope, mu_past_derivative(mesh, f, face.id, u));
        }
    }
    if (!(inf_slope > 0.0))
        throw NonMonotoneGridError(
            "linfty_envelope: face averages are not uniformly increasing");
    rep.lip_inverse = 1.0 / inf_slope;
    rep.c1_eff = rep.lip_inverse * rep.constants.c1;
    rep.c2_eff = rep.lip_inverse * rep.constants.c2;

    const double m0 = max_abs(traj.states.front());
    const double start = traj.states.front().t;
    rep.min_margin = std::numeric_limits<double>::infinity();
    for (const SliceState& s : traj.states) {
        EnvelopeSlice sl;
        sl.n = s.n;
        sl.t = s.t;
        sl.max_abs = max_abs(s);
        const double tn = s.t - start;
        sl.bound = (m0 + rep.c1_eff * tn) * std::exp(rep.c2_eff * tn) + 1e-10;
        sl.margin = sl.bound - sl.max_abs;
        rep.min_margin = std::min(rep.min_margin, sl.margin);
        rep.slices.push_back(sl);
    }
    rep.pass = rep.min_margin >= 0.0;
    return rep;
}

namespace {

double bump01(double s) {
    const double s2 = s * s;
    if (s2 >= 1.0) return 0.0;
    return std::exp(1.0 - 1.0 / (1.0 - s2));
}

/// Chart time before which a test function must vanish: the earliest node of
/// the final layer's lateral and outflow faces.
double support_deadline(const Mesh& mesh) {
    double tb = std::numeric_limits<double>::infinity();
    for (int kid : mesh.layer(mesh.n_layers() - 1)) {
        const Element& K = mesh.element(kid);
        for (const FaceNode& node : mesh.face(K.outflow).nodes)
            tb = std::min(tb, node.p.t);
        for (int slot = 0; slot < 2; ++slot)
            for (const FaceNode& node : mesh.face(K.lateral[slot]).nodes)
                tb = std::min(tb, node.p.t);
    }
    return tb;
}

} // namespace

std::vector<TestFunction> bump_family(const Mesh& mesh, int count) {
    if (count < 1) throw EmptyGridError("bump_family: need >= 1 bump");
    if (mesh.n_layers() < 2)
        throw BadDimensionsError("bump_family: need at least two layers");
    const double L = mesh.metric().period();
    const double ta = mesh.surface_chart_time(0);
    const double tb = support_deadline(mesh);
    if (!(tb > ta)) throw BadDimensionsError("bump_family: empty time window");

    static const double xc_tab[5] = {0.5, 0.25, 0.75, 0.1, 0.6};
    static const double rx_tab[5] = {0.3, 0.2, 0.45, 0.25, 0.15};
    static const double rt_tab[5] = {0.45, 0.3, 0.25, 0.35, 0.2};
    static const double ct_tab[5] = {0.5, 0.35, 0.65, 0.5, 0.3};

    std::vector<TestFunction> out;
    for (int i = 0; i < count; ++i) {
        const int k = i % 5;
        const double scale = 1.0 / (1.0 + i / 5);
        const double rt = (tb - ta) * rt_tab[k] * scale;
        double tc = ta + (tb - ta) * ct_tab[k];
        tc = std::clamp(tc, ta + rt, tb - rt);
        const double xc = L * xc_tab[k];
        const double rx = L * rx_tab[k] * scale;
        TestFunction fn;
        std::ostringstream name;
        name << "bump" << (i + 1);
        fn.name = name.str();
        fn.value = [tc, rt, xc, rx, L](ChartPoint p) {
            const double dx = std::remainder(p.x - xc, L);
            return bump01((p.t - tc) / rt) * bump01(dx / rx);
        };
        out.push_back(std::move(fn));
    }
    return out;
}

namespace {

/// Per-node contractions g(F(u, p_q), n_q) against the canonical stored
/// normal, memoized per (face, bit pattern of u).
class NodeFluxCache {
public:
    NodeFluxCache(const Mesh& mesh, const FluxField& f, const EntropyPair& pair)
        : mesh_(&mesh), f_(&f), pair_(pair), memo_(mesh.faces().size()) {}

    const std::vector<double>& contraction(int face_id, double u) {
        auto& m = memo_[static_cast<std::size_t>(face_id)];
        const std::uint64_t key = std::bit_cast<std::uint64_t>(u);
        auto it = m.find(key);
        if (it != m.end()) return it->second;

        const Face& face = mesh_->face(face_id);
        const MetricChart& g = mesh_->metric();
        std::vector<double> vals;
        vals.reserve(face.nodes.size());
        for (const FaceNode& node : face.nodes) {
            if (pair_.kind == EntropyPair::Kind::Kruzkov) {
                const double sg =
                    u > pair_.lambda ? 1.0 : (u < pair_.lambda ? -1.0 : 0.0);
                vals.push_back(sg == 0.0
                                   ? 0.0
                                   : sg * (inner(g, node.p, f_->value(u, node.p),
                                                 node.normal) -
                                           inner(g, node.p,
                                                 f_->value(pair_.lambda, node.p),
                                                 node.normal)));
            } else {
                vals.push_back(integrate_split(pair_, pair_.base(), u, [&](double s) {
                    return pair_.U_prime(s) *
                           inner(g, node.p, f_->du(s, node.p), node.normal);
                }));
            }
        }
        return m.emplace(key, std::move(vals)).first->second;
    }

    void clear() {
        for (auto& m : memo_) m.clear();
    }

private:
    const Mesh* mesh_;
    const FluxField* f_;
    EntropyPair pair_;
    std::vector<std::unordered_map<std::uint64_t, std::vector<double>>> memo_;
};

struct FunctionalAcc {
    long double lhs = 0.0L;
    long double t1 = 0.0L, t2 = 0.0L, t3 = 0.0L, t4 = 0.0L, t5 = 0.0L;
};

std::vector<GlobalEntropyReport> functional_sweep(const Mesh& mesh, const FluxField& f,
                                                  const LaxFriedrichs& lf,
                                                  const Trajectory& traj,
                                                  const std::vector<TestFunction>& phis,
                                                  const EntropyPair& pair,
                                                  double tol_factor) {
    require_full_trajectory(mesh, traj);
    const int steps = mesh.n_layers();
    const std::size_t nb = phis.size();

    // Node values and face averages of every test function, validated upfront.
    std::vector<std::vector<std::vector<double>>> pn(nb); // [b][face][node]
    std::vector<std::vector<double>> pavg(nb);            // [b][face]
    for (std::size_t b = 0; b < nb; ++b) {
        pn[b].resize(mesh.faces().size());
        pavg[b].assign(mesh.faces().size(), 0.0);
        for (const Face& face : mesh.faces()) {
            auto& vals = pn[b][static_cast<std::size_t>(face.id)];
            vals.reserve(face.nodes.size());
            double acc = 0.0;
            for (const FaceNode& node : face.nodes) {
                const double val = phis[b].value(node.p);
                if (!(val >= 0.0)) {
                    std::ostringstream msg;
                    msg << "test function " << phis[b].name << " is negative at ("
                        << node.p.t << ", " << node.p.x << ")";
                    throw UnsupportedPhiError(msg.str());
                }
                vals.push_back(val);
                acc += node.w * val;
            }
            pavg[b][static_cast<std::size_t>(face.id)] = acc / face.measure;
        }
        for (int kid : mesh.layer(steps - 1)) {
            const Element& K = mesh.element(kid);
            auto check_zero = [&](int fid) {
                for (double val : pn[b][static_cast<std::size_t>(fid)])
                    if (val != 0.0) {
                        std::ostringstream msg;
                        msg << "test function " << phis[b].name
                            << " is supported on the final layer (face " << fid
                            << "); the global inequality needs the support to end "
                               "before it";
                        throw UnsupportedPhiError(msg.str());
                    }
            };
            check_zero(K.outflow);
            check_zero(K.lateral[0]);
            check_zero(K.lateral[1]);
        }
    }

    auto lat_avg = [&](std::size_t b, const Element& K) {
        const double m0 = mesh.face(K.lateral[0]).measure;
        const double m1 = mesh.face(K.lateral[1]).measure;
        return (m0 * pavg[b][static_cast<std::size_t>(K.lateral[0])] +
                m1 * pavg[b][static_cast<std::size_t>(K.lateral[1])]) /
               K.lateral_measure;
    };

    std::vector<FunctionalAcc> acc(nb);
    NodeFluxCache F(mesh, f, pair);
    MuCache cache(mesh, f);

    for (int n = 0; n < steps; ++n) {
        cache.clear();
        F.clear();
        const SliceState& s = traj.states[static_cast<std::size_t>(n)];
        for (int kid : mesh.layer(n)) {
            const Element& K = mesh.element(kid);
            const double u = s.u[static_cast<std::size_t>(K.pos)];
            const std::array<double, 2> v = neighbor_values(mesh, K, s);
            const LateralDecomposition ld = lateral_decomposition(cache, lf, K, u, v);
            const double eplus = mesh.face(K.outflow).measure;

            // phi-independent entropy values on the outflow face
            std::array<double, 2> Vt{}, Vb{};
            if (pair.kind == EntropyPair::Kind::Kruzkov) {
                const double mu_l = cache.past(K.outflow, pair.lambda);
                for (int slot = 0; slot < 2; ++slot) {
                    Vt[slot] = std::abs(ld.mu_tilde[slot] - mu_l);
                    Vb[slot] = std::abs(ld.mu_bar[slot] - mu_l);
                }
            } else {
                const FaceEntropyTransform V(mesh, f, pair, K.outflow);
                for (int slot = 0; slot < 2; ++slot) {
                    Vt[slot] = V(ld.mu_tilde[slot]);
                    Vb[slot] = V(ld.mu_bar[slot]);
                }
            }

            const auto& c_out = F.contraction(K.outflow, u);
            const auto& c_in = F.contraction(K.inflow, u);
            const std::array<const std::vector<double>*, 2> c_lat{
                &F.contraction(K.lateral[0], u), &F.contraction(K.lateral[1], u)};
            const Face& fout = mesh.face(K.outflow);
            const Face& fin = mesh.face(K.inflow);

            for (std::size_t b = 0; b < nb; ++b) {
                const auto& pn_out = pn[b][static_cast<std::size_t>(K.outflow)];
                const auto& pn_in = pn[b][static_cast<std::size_t>(K.inflow)];
                const double phil = lat_avg(b, K);
                const double phil_prev =
                    n == 0 ? phil : lat_avg(b, mesh.element(K.pred));

                // boundary quadrature of div_g(F phi): outward contributions,
                // with the canonical normal entering negatively on the outflow
                // and positively on the inflow face
                long double bdry = 0.0L;
                for (std::size_t q = 0; q < c_out.size(); ++q)
                    bdry -= fout.nodes[q].w * pn_out[q] * c_out[q];
                for (std::size_t q = 0; q < c_in.size(); ++q)
                    bdry += fin.nodes[q].w * pn_in[q] * c_in[q];
                for (int slot = 0; slot < 2; ++slot) {
                    const Face& fl = mesh.face(K.lateral[slot]);
                    const auto& pl = pn[b][static_cast<std::size_t>(K.lateral[slot])];
                    const auto& cl = *c_lat[slot];
                    for (std::size_t q = 0; q < cl.size(); ++q)
                        bdry += K.lateral_sign[slot] * fl.nodes[q].w * pl[q] * cl[q];
                }
                acc[b].lhs -= bdry;

                // remainder and average-mismatch terms on the lateral faces
                for (int slot = 0; slot < 2; ++slot) {
                    const double pe0 = pavg[b][static_cast<std::size_t>(
                        K.lateral[slot])];
                    const double coeff = ld.w[slot] * eplus;
                    acc[b].t1 -= coeff * pe0 * (Vt[slot] - Vb[slot]);
                    acc[b].t2 += coeff * (phil - pe0) * Vb[slot];

                    const Face& fl = mesh.face(K.lateral[slot]);
                    const auto& pl = pn[b][static_cast<std::size_t>(K.lateral[slot])];
                    const auto& cl = *c_lat[slot];
                    long double mism = 0.0L;
                    for (std::size_t q = 0; q < cl.size(); ++q)
                        mism += fl.nodes[q].w * (pe0 - pl[q]) *
                                K.lateral_sign[slot] * cl[q];
                    acc[b].t3 += mism;
                }

                // space-like mismatch terms with outward normals: past-oriented
                // on the inflow face, future-oriented on the outflow face
                long double t4_in = 0.0L, t4_out = 0.0L;
                for (std::size_t q = 0; q < c_in.size(); ++q)
                    t4_in += fin.nodes[q].w * (phil_prev - pn_in[q]) * (-c_in[q]);
                for (std::size_t q = 0; q < c_out.size(); ++q)
                    t4_out += fout.nodes[q].w * (phil - pn_out[q]) * c_out[q];
                acc[b].t4 -= t4_in + t4_out;

                if (n == 0) {
                    long double init = 0.0L;
                    for (std::size_t q = 0; q < c_in.size(); ++q)
                        init += fin.nodes[q].w * (-c_in[q]);
                    acc[b].t5 += phil * init;
                }
            }
        }
    }

    std::vector<GlobalEntropyReport> out(nb);
    for (std::size_t b = 0; b < nb; ++b) {
        GlobalEntropyReport& rep = out[b];
        rep.pair_name = pair.name;
        rep.phi_name = phis[b].name;
        rep.lhs = static_cast<double>(acc[b].lhs);
        rep.t1 = static_cast<double>(acc[b].t1);
        rep.t2 = static_cast<double>(acc[b].t2);
        rep.t3 = static_cast<double>(acc[b].t3);
        rep.t4 = static_cast<double>(acc[b].t4);
        rep.t5 = static_cast<double>(acc[b].t5);
        rep.rhs = rep.t1 + rep.t2 + rep.t3 + rep.t4 + rep.t5;
        rep.scale = std::abs(rep.lhs) + std::abs(rep.t1) + std::abs(rep.t2) +
                    std::abs(rep.t3) + std::abs(rep.t4) + std::abs(rep.t5);
        rep.tol = tol_factor * rep.scale;
        rep.slack = rep.rhs - rep.lhs;
        rep.pass = rep.slack >= -rep.tol;
    }
    return out;
}

} // namespace

GlobalEntropyReport global_entropy_functional(const Mesh& mesh, const FluxField& f,
                                              const LaxFriedrichs& lf,
                                              const Trajectory& traj,
                                              const TestFunction& phi,
                                              const EntropyPair& pair,
                                              double tol_factor) {
    return functional_sweep(mesh, f, lf, traj, {phi}, pair, tol_factor).front();
}

std::vector<GlobalEntropyReport> global_entropy_functional(
    const Mesh& mesh, const FluxField& f, const LaxFriedrichs& lf,
    const Trajectory& traj, const std::vector<TestFunction>& phis,
    const EntropyPair& pair, double tol_factor) {
    return functional_sweep(mesh, f, lf, traj, phis, pair, tol_factor);
}

} // namespace lorfv
