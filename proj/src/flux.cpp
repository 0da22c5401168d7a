#include "lorfv/flux.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <sstream>

namespace lorfv {

double mu_canonical(const Mesh& mesh, const FluxField& f, int face_id, double u) {
    const Face& face = mesh.face(face_id);
    const MetricChart& g = mesh.metric();
    double acc = 0.0;
    for (const FaceNode& node : face.nodes)
        acc += node.w * inner(g, node.p, f.value(u, node.p), node.normal);
    return acc / face.measure;
}

double mu_canonical_derivative(const Mesh& mesh, const FluxField& f, int face_id,
                               double u) {
    const Face& face = mesh.face(face_id);
    const MetricChart& g = mesh.metric();
    double acc = 0.0;
    for (const FaceNode& node : face.nodes)
        acc += node.w * inner(g, node.p, f.du(u, node.p), node.normal);
    return acc / face.measure;
}

double mu_inverse(const Mesh& mesh, const FluxField& f, int face_id, double y) {
    const Interval range = f.declared_range();
    const double margin = 0.1 * range.width();
    double lo = range.lo - margin, hi = range.hi + margin;
    double flo = mu_past(mesh, f, face_id, lo) - y;
    double fhi = mu_past(mesh, f, face_id, hi) - y;
    if (flo > 0.0 || fhi < 0.0) {
        if (flo > fhi)
            throw NonMonotoneGridError("mu_past is not increasing on the inversion range");
        std::ostringstream msg;
        msg << "mu_inverse: target " << y << " outside attainable range ["
            << flo + y << ", " << fhi + y << "] of face " << face_id;
        throw InversionOutOfRangeError(msg.str());
    }
    if (flo == 0.0) return lo;
    if (fhi == 0.0) return hi;

    const double tol = 1e-12 * (1.0 + std::abs(y));
    double u = 0.5 * (lo + hi);
    for (int it = 0; it < 100; ++it) {
        const double fu = mu_past(mesh, f, face_id, u) - y;
        if (std::abs(fu) <= tol) return u;
        if (fu > 0.0) hi = u;
        else lo = u;
        const double du = mu_past_derivative(mesh, f, face_id, u);
        double next = du > 0.0 ? u - fu / du : lo - 1.0;
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (hi - lo <= 1e-15 * (1.0 + std::abs(u))) return 0.5 * (lo + hi);
        u = next;
    }
    return u;
}

MuCache::MuCache(const Mesh& mesh, const FluxField& f)
    : mesh_(&mesh), f_(&f), memo_(mesh.faces().size()), dmemo_(mesh.faces().size()) {}

double MuCache::canonical(int face_id, double u) {
    ++lookups_;
    auto& m = memo_[static_cast<std::size_t>(face_id)];
    const std::uint64_t key = std::bit_cast<std::uint64_t>(u);
    auto it = m.find(key);
    if (it != m.end()) {
        ++hits_;
        return it->second;
    }
    const double v = mu_canonical(*mesh_, *f_, face_id, u);
    m.emplace(key, v);
    return v;
}

double MuCache::canonical_derivative(int face_id, double u) {
    ++lookups_;
    auto& m = dmemo_[static_cast<std::size_t>(face_id)];
    const std::uint64_t key = std::bit_cast<std::uint64_t>(u);
    auto it = m.find(key);
    if (it != m.end()) {
        ++hits_;
        return it->second;
    }
    const double v = mu_canonical_derivative(*mesh_, *f_, face_id, u);
    m.emplace(key, v);
    return v;
}

void MuCache::clear() {
    for (auto& m : memo_) m.clear();
    for (auto& m : dmemo_) m.clear();
}

namespace {

double lf_formula(MuCache& cache, const Element& K, const Element& KN, int slot,
                  double u, double v, double D) {
    const double mu_u = cache.outward(K, slot, u);
    const double mu_v = cache.outward(K, slot, v);
    return 0.5 * (mu_u + mu_v) + 0.5 * D * (cache.plus(K, u) - cache.plus(KN, v));
}

} // namespace

double lax_friedrichs(MuCache& cache, const Element& K, int slot, double u, double v,
                      double D) {
    const Mesh& mesh = cache.mesh();
    const Element& KN = mesh.element(K.lateral_neighbor[slot]);
    const int e0 = K.lateral[slot];
    const double slack = 1e-12 * (1.0 + std::abs(D));
    const double need_u = std::abs(cache.canonical_derivative(e0, u)) -
                          D * cache.plus_derivative(K, u);
    const double need_v = std::abs(cache.canonical_derivative(e0, v)) -
                          D * cache.plus_derivative(KN, v);
    if (need_u > slack || need_v > slack) {
        std::ostringstream msg;
        msg << "lax_friedrichs: D = " << D << " violates the monotonicity bound by "
            << std::max(need_u, need_v) << " on face " << e0;
        throw DTooSmallError(msg.str());
    }
    return lf_formula(cache, K, KN, slot, u, v, D);
}

LaxFriedrichs::LaxFriedrichs(const Mesh& mesh, const FluxField& f, double safety,
                             int n_samples)
    : mesh_(&mesh), f_(&f), safety_(safety), D_(mesh.faces().size(), 0.0) {
    if (n_samples < 2) throw EmptyRangeError("LaxFriedrichs: need >= 2 samples");
    const Interval range = f.declared_range();
    if (!(range.lo < range.hi)) throw EmptyRangeError("LaxFriedrichs: empty range");

    // inf_u d/du mu_S^+ per element, sup_u |d/du mu_{.,e0}| per lateral face
    std::vector<double> inf_plus(mesh.elements().size(),
                                 std::numeric_limits<double>::infinity());
    std::vector<double> sup_lat(mesh.faces().size(), 0.0);
    for (int i = 0; i < n_samples; ++i) {
        const double u = range.lo + range.width() * i / (n_samples - 1.0);
        for (const Element& K : mesh.elements())
            inf_plus[K.id] = std::min(
                inf_plus[K.id], mu_past_derivative(mesh, f, K.outflow, u));
        for (const Face& face : mesh.faces())
            if (face.causal == Causal::Timelike)
                sup_lat[face.id] = std::max(
                    sup_lat[face.id],
                    std::abs(mu_canonical_derivative(mesh, f, face.id, u)));
    }

    for (const Element& K : mesh.elements()) {
        if (!(inf_plus[K.id] > 0.0))
            throw NonMonotoneGridError(
                "LaxFriedrichs: outflow average is not increasing on the declared range");
        for (int slot = 0; slot < 2; ++slot) {
            const int e0 = K.lateral[slot];
            const double bound =
                std::max(mesh.face(K.outflow).measure / K.lateral_measure,
                         sup_lat[e0] / inf_plus[K.id]);
            D_[e0] = std::max(D_[e0], safety * bound);
        }
    }
}

double LaxFriedrichs::flux(MuCache& cache, const Element& K, int slot, double u,
                           double v) const {
    const Element& KN = mesh_->element(K.lateral_neighbor[slot]);
    return lf_formula(cache, K, KN, slot, u, v, D_[K.lateral[slot]]);
}

FluxAxiomReport verify_flux_axioms(const Mesh& mesh, const FluxField& f,
                                   const LaxFriedrichs& lf, const Interval& u_range,
                                   int n_u, double fd_step) {
    if (n_u < 2 || !(u_range.lo < u_range.hi))
        throw EmptyRangeError("verify_flux_axioms: bad sample grid");
    MuCache cache(mesh, f);
    FluxAxiomReport rep;
    rep.min_u_slope = std::numeric_limits<double>::infinity();
    rep.max_v_slope = -std::numeric_limits<double>::infinity();

    std::vector<double> us(n_u);
    for (int i = 0; i < n_u; ++i)
        us[i] = u_range.lo + u_range.width() * i / (n_u - 1.0);

    for (const Element& K : mesh.elements()) {
        // visit each geometric face once, from the element on its left
        const int slot = 1;
        if (K.lateral_sign[slot] < 0.0) continue;
        const Element& KN = mesh.element(K.lateral_neighbor[slot]);
        int nslot = KN.lateral[0] == K.lateral[slot] ? 0 : 1;
        for (double u : us) {
            const double qc = lf.flux(cache, K, slot, u, u);
            rep.max_consistency_defect =
                std::max(rep.max_consistency_defect,
                         std::abs(qc - cache.outward(K, slot, u)));
            for (double v : us) {
                const double q = lf.flux(cache, K, slot, u, v);
                const double qn = lf.flux(cache, KN, nslot, v, u);
                rep.max_conservation_defect =
                    std::max(rep.max_conservation_defect, std::abs(q + qn));
                // one-sided differences, stencils kept inside u_range: the
                // monotonicity guarantee stops at the calibrated interval
                const double ua = u + fd_step <= u_range.hi ? u : u - fd_step;
                const double va = v + fd_step <= u_range.hi ? v : v - fd_step;
                rep.min_u_slope =
                    std::min(rep.min_u_slope,
                             (lf.flux(cache, K, slot, ua + fd_step, v) -
                              lf.flux(cache, K, slot, ua, v)) / fd_step);
                rep.max_v_slope =
                    std::max(rep.max_v_slope,
                             (lf.flux(cache, K, slot, u, va + fd_step) -
                              lf.flux(cache, K, slot, u, va)) / fd_step);
            }
        }
    }
    rep.consistency_ok = rep.max_consistency_defect <= 1e-12;
    rep.conservation_ok = rep.max_conservation_defect <= 1e-12;
    rep.monotone_ok = rep.min_u_slope >= -1e-8 && rep.max_v_slope <= 1e-8;
    rep.pass = rep.consistency_ok && rep.conservation_ok && rep.monotone_ok;
    return rep;
}

} // namespace lorfv
