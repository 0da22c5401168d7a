#include "lorfv/scheme.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace lorfv {

SliceState init(const Mesh& mesh, const FluxField& f,
                const std::function<double(double)>& u0) {
    const MetricChart& g = mesh.metric();
    SliceState s;
    s.n = 0;
    s.t = 0.0;
    const auto& layer0 = mesh.layer(0);
    s.u.resize(layer0.size());
    s.m.resize(layer0.size());
    for (std::size_t j = 0; j < layer0.size(); ++j) {
        const Element& K = mesh.element(layer0[j]);
        const Face& e = mesh.face(K.inflow);
        double acc = 0.0;
        for (const FaceNode& node : e.nodes) acc += node.w * u0(g.wrap_x(node.p.x));
        s.u[j] = acc / e.measure;
        s.m[j] = e.measure * mu_past(mesh, f, K.inflow, s.u[j]);
    }
    return s;
}

SliceState step(const Mesh& mesh, const FluxField& f, const LaxFriedrichs& lf,
                MuCache& cache, const SliceState& s) {
    if (s.n < 0 || s.n >= mesh.n_layers())
        throw BadDimensionsError("step: state is past the final surface");
    const auto& ids = mesh.layer(s.n);
    const std::size_t nx = ids.size();
    if (s.u.size() != nx || s.m.size() != nx)
        throw BadDimensionsError("step: state size does not match the layer");

    cache.clear();

    // one flux evaluation per geometric lateral face, stored under the
    // orientation of the element whose left face it is
    std::vector<double> q_left(nx);
    for (std::size_t j = 0; j < nx; ++j) {
        const Element& K = mesh.element(ids[j]);
        const Element& KL = mesh.element(K.lateral_neighbor[0]);
        q_left[j] = lf.flux(cache, K, 0, s.u[j], s.u[KL.pos]);
    }

    SliceState next;
    next.n = s.n + 1;
    next.t = s.t + mesh.layer_tau(s.n);
    next.u.resize(nx);
    next.m.resize(nx);
    for (std::size_t j = 0; j < nx; ++j) {
        const Element& K = mesh.element(ids[j]);
        const Element& KR = mesh.element(K.lateral_neighbor[1]);
        const double flux_sum =
            mesh.face(K.lateral[0]).measure * q_left[j] -
            mesh.face(K.lateral[1]).measure * q_left[KR.pos];
        const double ep = mesh.face(K.outflow).measure;
        const double y = (s.m[j] - flux_sum) / ep;
        try {
            next.u[j] = mu_inverse(mesh, f, K.outflow, y);
        } catch (const InversionOutOfRangeError& e) {
            std::ostringstream msg;
            msg << "step: layer " << s.n << ", element " << K.id << ": " << e.what();
            throw InversionOutOfRangeError(msg.str());
        }
        next.m[j] = ep * y;
    }
    return next;
}

double total_mass(const SliceState& s) {
    long double acc = 0.0L;
    for (double m : s.m) acc += m;
    return static_cast<double>(acc);
}

double max_abs(const SliceState& s) {
    double m = 0.0;
    for (double u : s.u) m = std::max(m, std::abs(u));
    return m;
}

Trajectory run(const Mesh& mesh, const FluxField& f,
               const std::function<double(double)>& u0, const RunOptions& opt) {
    LaxFriedrichs lf(mesh, f, opt.d_safety, opt.lf_samples);
    MuCache cache(mesh, f);
    Trajectory tr;
    SliceState s = init(mesh, f, u0);
    tr.mass.push_back(total_mass(s));
    tr.linf.push_back(max_abs(s));
    if (opt.keep_states) tr.states.push_back(s);
    for (int n = 0; n < mesh.n_layers(); ++n) {
        s = step(mesh, f, lf, cache, s);
        tr.mass.push_back(total_mass(s));
        tr.linf.push_back(max_abs(s));
        if (opt.keep_states) tr.states.push_back(s);
    }
    if (!opt.keep_states) tr.states.push_back(std::move(s));
    return tr;
}

LateralDecomposition lateral_decomposition(MuCache& cache, const LaxFriedrichs& lf,
                                           const Element& K, double u,
                                           const std::array<double, 2>& v) {
    const Mesh& mesh = cache.mesh();
    LateralDecomposition d;
    d.mu_plus_u = cache.plus(K, u);
    d.defect = compatibility_defect(cache.flux(), mesh, K, u);
    const double ep = mesh.face(K.outflow).measure;
    const double ratio = K.lateral_measure / ep;
    for (int slot = 0; slot < 2; ++slot) {
        d.w[slot] = mesh.face(K.lateral[slot]).measure / K.lateral_measure;
        d.q_uv[slot] = lf.flux(cache, K, slot, u, v[slot]);
        d.q_uu[slot] = lf.flux(cache, K, slot, u, u);
        d.mu_tilde[slot] = d.mu_plus_u - ratio * (d.q_uv[slot] - d.q_uu[slot]);
        d.mu_bar[slot] = d.mu_tilde[slot] - d.defect / ep;
    }
    return d;
}

ConvexDecomposition convex_coefficients(MuCache& cache, const LaxFriedrichs& lf,
                                        const Element& K, double u,
                                        const std::array<double, 2>& v) {
    ConvexDecomposition c;
    c.parts = lateral_decomposition(cache, lf, K, u, v);
    const Mesh& mesh = cache.mesh();
    const double ep = mesh.face(K.outflow).measure;

    double direct = 0.0;
    for (int slot = 0; slot < 2; ++slot)
        direct += c.parts.w[slot] * c.parts.mu_bar[slot];
    c.mu_plus_next = direct;

    double alpha_form = c.parts.mu_plus_u - c.parts.defect / ep;
    bool ok = true;
    for (int slot = 0; slot < 2; ++slot) {
        const double mu_v = cache.plus(K, v[slot]);
        const double denom = c.parts.mu_plus_u - mu_v;
        const double scale =
            std::max({1.0, std::abs(c.parts.mu_plus_u), std::abs(mu_v)});
        double a = 0.0;
        if (std::abs(denom) > 1e-14 * scale)
            a = (c.parts.mu_plus_u - c.parts.mu_tilde[slot]) / denom;
        c.alpha[slot] = c.parts.w[slot] * a;
        alpha_form += c.alpha[slot] * (mu_v - c.parts.mu_plus_u);
        if (!(c.alpha[slot] >= 0.0 && c.alpha[slot] < 1.0)) ok = false;
    }
    c.alpha_sum = c.alpha[0] + c.alpha[1];
    if (!(c.alpha_sum < 1.0)) ok = false;
    c.coefficients_ok = ok;
    c.reconstruction_error = std::abs(alpha_form - direct);
    return c;
}

} // namespace lorfv
