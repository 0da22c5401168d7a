#include "lorfv/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <unordered_map>

namespace lorfv {

namespace {

SpacetimeVector unit_normal_at(const MetricChart& g, const ChartPoint& p,
                               const ChartPoint& a, const ChartPoint& b,
                               Causal face_causal) {
    const double gt = b.t - a.t, gx = b.x - a.x;
    const double tt = g.g_tt(p), tx = g.g_tx(p), xx = g.g_xx(p);
    // raise the conormal: orthogonal to the tangent by construction
    SpacetimeVector n{p, -(tx * gt + xx * gx), tt * gt + tx * gx};
    const double q = inner(g, p, n, n);
    const double scale = std::hypot(gt, gx);
    if (!(std::abs(q) > 1e-24 * scale * scale))
        throw DegenerateFaceError("face normal is null or zero");
    const double inv = 1.0 / std::sqrt(std::abs(q));
    n.vt *= inv;
    n.vx *= inv;
    if (face_causal == Causal::Spacelike) {
        // time-like normal, orient to the future
        if (!is_future_oriented(g, p, n)) {
            n.vt = -n.vt;
            n.vx = -n.vx;
        }
    } else {
        // space-like normal, orient toward +x
        if (n.vx < 0.0) {
            n.vt = -n.vt;
            n.vx = -n.vx;
        }
    }
    return n;
}

double wrap_near(double x, double ref, double L) {
    while (x - ref > 0.5 * L) x -= L;
    while (x - ref < -0.5 * L) x += L;
    return x;
}

} // namespace

Mesh::Mesh(MetricChart metric, int quad_points)
    : metric_(std::move(metric)), rule_(QuadratureRule::gauss_legendre(quad_points)) {}

int Mesh::add_face(const ChartPoint& a, const ChartPoint& b) {
    Face f;
    f.id = static_cast<int>(faces_.size());
    f.a = a;
    f.b = b;
    const double gt = b.t - a.t, gx = b.x - a.x;
    const double len = std::hypot(gt, gx);
    if (!(len > 0.0))
        throw DegenerateFaceError("face endpoints coincide");

    // classify the tangent; the class must be uniform along the face
    int sign_seen = 0;
    for (std::size_t q = 0; q < rule_.size(); ++q) {
        const double s = rule_.nodes[q];
        const ChartPoint p{a.t + s * gt, a.x + s * gx};
        const SpacetimeVector tan{p, gt / len, gx / len};
        const Causal c = classify(metric_, p, tan);
        if (c == Causal::Null)
            throw DegenerateFaceError("face tangent is null at a quadrature node");
        const int sgn = c == Causal::Spacelike ? 1 : -1;
        if (sign_seen == 0) sign_seen = sgn;
        else if (sign_seen != sgn)
            throw DegenerateFaceError("face changes causal class along its length");
    }
    f.causal = sign_seen > 0 ? Causal::Spacelike : Causal::Timelike;

    f.nodes.resize(rule_.size());
    double cx = 0.0, ct = 0.0;
    for (std::size_t q = 0; q < rule_.size(); ++q) {
        const double s = rule_.nodes[q];
        const ChartPoint p{a.t + s * gt, a.x + s * gx};
        const SpacetimeVector tan{p, gt, gx};
        const double metric_len = std::sqrt(std::abs(inner(metric_, p, tan, tan)));
        FaceNode& node = f.nodes[q];
        node.p = p;
        node.w = rule_.weights[q] * metric_len;
        node.normal = unit_normal_at(metric_, p, a, b, f.causal);
        f.measure += node.w;
        ct += node.w * p.t;
        cx += node.w * p.x;
    }
    if (!(f.measure > 0.0))
        throw DegenerateFaceError("face has zero measure");
    f.centroid = ChartPoint{ct / f.measure, cx / f.measure};
    faces_.push_back(std::move(f));
    return faces_.back().id;
}

FaceRole Mesh::role_of(const Element& K, int face_id) const {
    if (face_id == K.inflow) return FaceRole::Inflow;
    if (face_id == K.outflow) return FaceRole::Outflow;
    if (face_id == K.lateral[0] || face_id == K.lateral[1]) return FaceRole::Lateral;
    throw MeshInvalidError("face does not belong to element");
}

void Mesh::finalize(std::vector<Element> elements, std::vector<std::vector<int>> layers) {
    elements_ = std::move(elements);
    layers_ = std::move(layers);
    const double L = metric_.period();
    const int nf = static_cast<int>(faces_.size());

    auto check_fid = [&](int fid) {
        if (fid < 0 || fid >= nf) throw MeshInvalidError("element references unknown face");
    };

    for (Element& K : elements_) {
        check_fid(K.inflow);
        check_fid(K.outflow);
        check_fid(K.lateral[0]);
        check_fid(K.lateral[1]);
        const Face& fin = faces_[K.inflow];
        const Face& fout = faces_[K.outflow];
        if (fin.causal != Causal::Spacelike || fout.causal != Causal::Spacelike)
            throw MeshInvalidError("inflow/outflow faces must be space-like");
        if (!(fin.centroid.t < fout.centroid.t))
            throw MeshInvalidError("outflow face must lie to the future of the inflow face");

        const double x_ref = 0.5 * (fin.a.x + fin.b.x);
        double lat_m = 0.0, lat_t = 0.0, lat_x = 0.0;
        for (int i = 0; i < 2; ++i) {
            const Face& fl = faces_[K.lateral[i]];
            if (fl.causal != Causal::Timelike)
                throw MeshInvalidError("lateral faces must be time-like");
            const double cx = wrap_near(fl.centroid.x, x_ref, L);
            K.lateral_sign[i] = cx > x_ref ? 1.0 : -1.0;
            lat_m += fl.measure;
            lat_t += fl.measure * fl.centroid.t;
            lat_x += fl.measure * cx;
        }
        if (K.lateral[0] == K.lateral[1])
            throw MeshInvalidError("element uses the same lateral face twice");
        if (K.lateral_sign[0] * K.lateral_sign[1] > 0.0)
            throw MeshInvalidError("element lateral faces lie on the same side");
        K.lateral_measure = lat_m;
        K.p_lat = ChartPoint{lat_t / lat_m, lat_x / lat_m};
        K.p_plus = fout.centroid;

        // |K| over the bilinear image of the unit square spanned by the
        // space-like faces' endpoints
        const ChartPoint A = fin.a, B = fin.b, C = fout.a, D = fout.b;
        double vol = 0.0;
        for (std::size_t i = 0; i < rule_.size(); ++i) {
            const double xi = rule_.nodes[i], wi = rule_.weights[i];
            for (std::size_t j = 0; j < rule_.size(); ++j) {
                const double eta = rule_.nodes[j], wj = rule_.weights[j];
                const double e1t = (1.0 - eta) * (B.t - A.t) + eta * (D.t - C.t);
                const double e1x = (1.0 - eta) * (B.x - A.x) + eta * (D.x - C.x);
                const double e2t = (1.0 - xi) * (C.t - A.t) + xi * (D.t - B.t);
                const double e2x = (1.0 - xi) * (C.x - A.x) + xi * (D.x - B.x);
                const double J = e1t * e2x - e1x * e2t;
                const ChartPoint p{
                    (1.0 - eta) * ((1.0 - xi) * A.t + xi * B.t) + eta * ((1.0 - xi) * C.t + xi * D.t),
                    (1.0 - eta) * ((1.0 - xi) * A.x + xi * B.x) + eta * ((1.0 - xi) * C.x + xi * D.x)};
                vol += wi * wj * std::abs(J) * metric_.volume_density(p);
            }
        }
        K.volume = vol;
        if (!(vol > 0.0)) throw MeshInvalidError("element has zero volume");
        K.tau = vol / fout.measure;
    }

    // layer/pos bookkeeping; elements within a layer ordered by inflow centroid
    for (std::size_t n = 0; n < layers_.size(); ++n) {
        auto& ids = layers_[n];
        if (ids.empty()) throw MeshInvalidError("empty slice");
        std::sort(ids.begin(), ids.end(), [&](int a, int b) {
            return faces_[elements_[a].inflow].centroid.x <
                   faces_[elements_[b].inflow].centroid.x;
        });
        for (std::size_t j = 0; j < ids.size(); ++j) {
            Element& K = elements_[ids[j]];
            if (K.layer != -1) throw MeshInvalidError("element appears in two slices");
            K.layer = static_cast<int>(n);
            K.pos = static_cast<int>(j);
        }
    }
    for (const Element& K : elements_)
        if (K.layer < 0) throw MeshInvalidError("element missing from slice records");

    // neighbor wiring via shared faces
    std::unordered_map<int, int> inflow_owner, outflow_owner;
    std::unordered_map<int, std::vector<int>> lateral_users;
    for (const Element& K : elements_) {
        if (!inflow_owner.emplace(K.inflow, K.id).second)
            throw MeshInvalidError("two elements share an inflow face");
        if (!outflow_owner.emplace(K.outflow, K.id).second)
            throw MeshInvalidError("two elements share an outflow face");
        lateral_users[K.lateral[0]].push_back(K.id);
        lateral_users[K.lateral[1]].push_back(K.id);
    }
    for (Element& K : elements_) {
        auto s = inflow_owner.find(K.outflow);
        K.succ = s == inflow_owner.end() ? -1 : s->second;
        auto p = outflow_owner.find(K.inflow);
        K.pred = p == outflow_owner.end() ? -1 : p->second;
        for (int i = 0; i < 2; ++i) {
            const auto& users = lateral_users[K.lateral[i]];
            if (users.size() != 2)
                throw MeshInvalidError("lateral face not shared by exactly two elements");
            K.lateral_neighbor[i] = users[0] == K.id ? users[1] : users[0];
            if (elements_[K.lateral_neighbor[i]].layer != K.layer)
                throw MeshInvalidError("lateral neighbors must share a slice");
        }
    }

    // hypersurfaces H_0..H_N and time bookkeeping
    const int N = n_layers();
    surfaces_.assign(N + 1, {});
    for (int n = 0; n < N; ++n)
        for (int id : layers_[n]) surfaces_[n].push_back(elements_[id].inflow);
    for (int id : layers_[N - 1]) surfaces_[N].push_back(elements_[id].outflow);

    layer_tau_.assign(N, 0.0);
    h_ = 0.0;
    tau_max_ = 0.0;
    for (const Element& K : elements_) {
        layer_tau_[K.layer] = std::max(layer_tau_[K.layer], K.tau);
        tau_max_ = std::max(tau_max_, K.tau);
    }
    for (const Face& f : faces_)
        if (f.causal == Causal::Spacelike) h_ = std::max(h_, f.measure);
    t_cum_.assign(N + 1, 0.0);
    for (int n = 0; n < N; ++n) t_cum_[n + 1] = t_cum_[n] + layer_tau_[n];
    surface_t_.assign(N + 1, 0.0);
    for (int n = 0; n <= N; ++n) {
        double tm = 0.0;
        for (int fid : surfaces_[n]) tm += faces_[fid].centroid.t;
        surface_t_[n] = tm / static_cast<double>(surfaces_[n].size());
    }
}

namespace {

Mesh build_lattice(const MetricChart& g, int nx, const std::vector<double>& tgrid,
                   const std::vector<double>& shift, int quad_points,
                   bool from_shear) {
    if (nx < 2) throw BadDimensionsError("need at least two cells in x");
    const int nt = static_cast<int>(tgrid.size()) - 1;
    if (nt < 1) throw BadDimensionsError("need at least one time layer");
    for (int n = 0; n < nt; ++n)
        if (!(tgrid[n + 1] > tgrid[n]))
            throw NonMonotoneGridError("time grid must be strictly increasing");

    Mesh mesh(g, quad_points);
    const double L = g.period();
    const double dx = L / nx;

    // space-like faces: sface[n][j] spans [x_j, x_{j+1}] + shift_n at t_n
    std::vector<std::vector<int>> sface(nt + 1, std::vector<int>(nx));
    for (int n = 0; n <= nt; ++n)
        for (int j = 0; j < nx; ++j)
            sface[n][j] = mesh.add_face({tgrid[n], j * dx + shift[n]},
                                        {tgrid[n], (j + 1) * dx + shift[n]});

    // lateral faces: lface[n][j] rises from (t_n, x_j+shift_n)
    std::vector<std::vector<int>> lface(nt, std::vector<int>(nx));
    for (int n = 0; n < nt; ++n)
        for (int j = 0; j < nx; ++j) {
            try {
                lface[n][j] = mesh.add_face({tgrid[n], j * dx + shift[n]},
                                            {tgrid[n + 1], j * dx + shift[n + 1]});
            } catch (const DegenerateFaceError& e) {
                if (from_shear)
                    throw ShearTooLargeError(std::string("lateral face not time-like: ") +
                                             e.what());
                throw;
            }
            if (mesh.faces()[lface[n][j]].causal != Causal::Timelike) {
                if (from_shear)
                    throw ShearTooLargeError("lateral face is space-like under this shear");
                throw MeshInvalidError("lateral face is not time-like");
            }
        }

    std::vector<Element> elems;
    std::vector<std::vector<int>> layers(nt);
    elems.reserve(static_cast<std::size_t>(nt) * nx);
    for (int n = 0; n < nt; ++n)
        for (int j = 0; j < nx; ++j) {
            Element K;
            K.id = static_cast<int>(elems.size());
            K.inflow = sface[n][j];
            K.outflow = sface[n + 1][j];
            K.lateral[0] = lface[n][j];
            K.lateral[1] = lface[n][(j + 1) % nx];
            layers[n].push_back(K.id);
            elems.push_back(K);
        }
    mesh.finalize(std::move(elems), std::move(layers));
    return mesh;
}

} // namespace

Mesh build_uniform(const MetricChart& g, int nx, int nt, double t_end, int quad_points) {
    if (!(t_end > 0.0)) throw BadDimensionsError("t_end must be positive");
    if (nt < 1) throw BadDimensionsError("need at least one time layer");
    std::vector<double> tgrid(nt + 1);
    for (int n = 0; n <= nt; ++n) tgrid[n] = t_end * n / nt;
    return build_lattice(g, nx, tgrid, std::vector<double>(nt + 1, 0.0), quad_points,
                         false);
}

Mesh build_nonuniform_time(const MetricChart& g, int nx,
                           const std::vector<double>& time_grid, int quad_points) {
    if (time_grid.size() < 2) throw BadDimensionsError("time grid needs two entries");
    return build_lattice(g, nx, time_grid,
                         std::vector<double>(time_grid.size(), 0.0), quad_points, false);
}

Mesh build_sheared(const MetricChart& g, int nx, int nt, double t_end, double s,
                   bool alternating, int quad_points) {
    if (!(t_end > 0.0)) throw BadDimensionsError("t_end must be positive");
    if (nt < 1) throw BadDimensionsError("need at least one time layer");
    std::vector<double> tgrid(nt + 1), shift(nt + 1, 0.0);
    for (int n = 0; n <= nt; ++n) tgrid[n] = t_end * n / nt;
    double max_shift = 0.0;
    for (int n = 0; n < nt; ++n) {
        const double sn = alternating && (n % 2 == 1) ? -s : s;
        shift[n + 1] = shift[n] + sn * (tgrid[n + 1] - tgrid[n]);
        max_shift = std::max(max_shift, std::abs(shift[n + 1]));
    }
    if (!(max_shift < g.period() / nx))
        throw BadDimensionsError("cumulative shear exceeds one cell width");
    return build_lattice(g, nx, tgrid, shift, quad_points, true);
}

double compatibility_defect(const FluxField& f, const Mesh& mesh, const Element& K,
                            double u) {
    const MetricChart& g = mesh.metric();
    auto face_int = [&](const Face& face) {
        double acc = 0.0;
        for (const FaceNode& node : face.nodes)
            acc += node.w * inner(g, node.p, f.value(u, node.p), node.normal);
        return acc;
    };
    // Stokes with unit normals: time-like outward normals contribute with a
    // minus sign, space-like ones with a plus.
    double acc = -face_int(mesh.face(K.outflow)) + face_int(mesh.face(K.inflow));
    for (int l = 0; l < 2; ++l)
        acc += K.lateral_sign[l] * face_int(mesh.face(K.lateral[l]));
    return acc;
}

CflReport cfl_report(const Mesh& mesh, const FluxField& f, const Interval& u_range,
                     int n_samples) {
    if (!(u_range.lo < u_range.hi))
        throw EmptyRangeError("cfl_report: empty u range");
    if (n_samples < 2) throw EmptyRangeError("cfl_report: need >= 2 samples");
    const MetricChart& g = mesh.metric();

    auto dmu_canonical = [&](const Face& face, double u) {
        double acc = 0.0;
        for (const FaceNode& node : face.nodes)
            acc += node.w * inner(g, node.p, f.du(u, node.p), node.normal);
        return acc / face.measure;
    };

    CflReport rep;
    rep.per_element.reserve(mesh.elements().size());
    for (const Element& K : mesh.elements()) {
        const Face& fout = mesh.face(K.outflow);
        double inf_plus = std::numeric_limits<double>::infinity();
        double sup_lat = 0.0;
        for (int i = 0; i < n_samples; ++i) {
            const double u = u_range.lo + u_range.width() * i / (n_samples - 1.0);
            // outflow average with past-oriented normal = -canonical(future)
            inf_plus = std::min(inf_plus, -dmu_canonical(fout, u));
            for (int l = 0; l < 2; ++l)
                sup_lat = std::max(sup_lat,
                                   std::abs(dmu_canonical(mesh.face(K.lateral[l]), u)));
        }
        double ratio;
        if (!(inf_plus > 0.0))
            ratio = std::numeric_limits<double>::infinity();
        else
            ratio = K.lateral_measure / fout.measure * sup_lat / inf_plus;
        rep.per_element.push_back({K.id, ratio});
        if (ratio > rep.max_ratio) {
            rep.max_ratio = ratio;
            rep.worst_element = K.id;
        }
    }
    rep.pass = rep.max_ratio <= 1.0 + 1e-12;
    return rep;
}

namespace {

struct Probe {
    std::function<SpacetimeVector(const ChartPoint&)> eval;
};

std::vector<Probe> pairwise_probes(double L) {
    std::vector<Probe> ps;
    ps.push_back({[](const ChartPoint& p) { return SpacetimeVector{p, 1.0, 0.0}; }});
    ps.push_back({[](const ChartPoint& p) { return SpacetimeVector{p, 0.0, 1.0}; }});
    ps.push_back({[L](const ChartPoint& p) {
        return SpacetimeVector{p, std::sin(2.0 * M_PI * p.x / L),
                               std::cos(2.0 * M_PI * p.x / L)};
    }});
    ps.push_back({[L](const ChartPoint& p) {
        return SpacetimeVector{p, std::cos(4.0 * M_PI * p.x / L),
                               std::sin(4.0 * M_PI * p.x / L)};
    }});
    return ps;
}

} // namespace

DeviationReport cartesian_deviation(const Mesh& mesh, const DeviationThresholds& thr) {
    DeviationReport rep;
    rep.thresholds = thr;
    rep.h = mesh.h();
    const MetricChart& g = mesh.metric();
    const double L = g.period();
    const int N = mesh.n_layers();

    // per-element future direction w_K and outflow-normal data at p_K^+
    struct Edata {
        SpacetimeVector w;
        SpacetimeVector n_plus;     // future unit normal of e+ at its centroid
        double e_plus_measure = 0.0;
        ChartPoint p;
        bool ok = false;
    };
    std::vector<Edata> ed(mesh.elements().size());
    bool w_ok = true;
    for (const Element& K : mesh.elements()) {
        const Face& fout = mesh.face(K.outflow);
        Edata d;
        d.p = K.p_plus;
        d.e_plus_measure = fout.measure;
        d.n_plus = unit_normal_at(g, K.p_plus, fout.a, fout.b, Causal::Spacelike);
        double dt = K.p_plus.t - K.p_lat.t;
        double dx = K.p_plus.x - wrap_near(K.p_lat.x, K.p_plus.x, L);
        SpacetimeVector w{K.p_plus, dt, dx};
        const double q = inner(g, K.p_plus, w, w);
        if (!(q < 0.0) || !(dt > 0.0)) {
            w_ok = false;
        } else {
            const double inv = 1.0 / std::sqrt(-q);
            w.vt *= inv;
            w.vx *= inv;
            d.ok = true;
        }
        d.w = w;
        ed[K.id] = d;
    }

    const auto probes = pairwise_probes(L);
    rep.element_pair_residual.assign(mesh.elements().size(), 0.0);
    double eta3 = 0.0, eta4 = 0.0;
    for (const Element& K : mesh.elements()) {
        if (K.pred < 0) {
            if (K.layer == 0) ++rep.skipped_initial_pairs;
            continue;
        }
        const Element& Km = mesh.element(K.pred);
        const Edata& a = ed[K.id];
        const Edata& b = ed[Km.id];
        if (!a.ok || !b.ok) {
            eta4 = std::numeric_limits<double>::infinity();
            continue;
        }
        double worst = 0.0;
        for (const Probe& pr : probes) {
            const SpacetimeVector Xa = pr.eval(a.p), Xb = pr.eval(b.p);
            SpacetimeVector na = a.n_plus, nb = b.n_plus;
            na.vt *= a.e_plus_measure;
            na.vx *= a.e_plus_measure;
            nb.vt *= b.e_plus_measure;
            nb.vx *= b.e_plus_measure;
            const double r3 =
                std::abs(inner(g, a.p, na, Xa) - inner(g, b.p, nb, Xb));
            const double r4 =
                std::abs(inner(g, a.p, a.w, Xa) - inner(g, b.p, b.w, Xb));
            const double e3 = rep.h * r3 / K.volume;
            const double e4 = rep.h * r4 / K.tau;
            eta3 = std::max(eta3, e3);
            eta4 = std::max(eta4, e4);
            worst = std::max(worst, std::max(e3, e4));
        }
        rep.element_pair_residual[K.id] = worst;
    }
    rep.eta_normals = eta3;
    rep.eta_w = eta4;
    rep.pairwise_ok = w_ok && eta3 <= thr.eta && eta4 <= thr.eta;

    // aggregate bilinear sum with probes windowed to vanish on H_0..H_1 and H_N,
    // so product meshes telescope to zero exactly
    const double t_lo = mesh.surface_chart_time(std::min(1, N));
    const double t_hi = mesh.surface_chart_time(N);
    auto window = [t_lo, t_hi](double t) {
        if (t <= t_lo || t >= t_hi) return 0.0;
        const double s = std::sin(M_PI * (t - t_lo) / (t_hi - t_lo));
        return s * s;
    };
    auto eterm = [&](const Edata& d, const Probe& phi, const Probe& psi) {
        SpacetimeVector F = phi.eval(d.p), P = psi.eval(d.p);
        const double chi = window(d.p.t);
        // both probe fields carry the window, hence chi squared
        return d.e_plus_measure * chi * chi * inner(g, d.p, F, d.w) *
               inner(g, d.p, P, d.n_plus);
    };
    double agg_max = 0.0;
    for (const Probe& phi : probes)
        for (const Probe& psi : probes) {
            double acc = 0.0;
            for (const Element& K : mesh.elements()) {
                if (K.pred < 0) continue;
                const Edata& a = ed[K.id];
                const Edata& b = ed[mesh.element(K.pred).id];
                if (!a.ok || !b.ok) continue;
                acc += eterm(a, phi, psi) - eterm(b, phi, psi);
            }
            agg_max = std::max(agg_max, std::abs(acc));
        }
    rep.aggregate_max = agg_max;
    rep.aggregate_ok = agg_max <= thr.aggregate / rep.h;

    // flatness: chart distance from the outflow centroid to its own face
    double flat = 0.0;
    for (const Element& K : mesh.elements()) {
        const Face& fo = mesh.face(K.outflow);
        const double ax = fo.a.x, at = fo.a.t, bx = fo.b.x, bt = fo.b.t;
        const double px = K.p_plus.x, pt = K.p_plus.t;
        const double vx = bx - ax, vt = bt - at;
        const double len2 = vx * vx + vt * vt;
        double s = ((px - ax) * vx + (pt - at) * vt) / len2;
        s = std::clamp(s, 0.0, 1.0);
        const double dxp = px - (ax + s * vx), dtp = pt - (at + s * vt);
        const double dist = std::hypot(dxp, dtp);
        flat = std::max(flat, dist / (fo.measure * mesh.tau_max()));
    }
    rep.flatness_max = flat;
    rep.flatness_ok = flat <= thr.flatness;

    // C2 smoothness proxy of s -> g(X, n) along outflow faces
    double smooth = 0.0;
    for (const Element& K : mesh.elements()) {
        const Face& fo = mesh.face(K.outflow);
        constexpr int M = 5;
        for (const Probe& pr : probes) {
            double Gv[M], Xn[M];
            for (int i = 0; i < M; ++i) {
                const double s = i / (M - 1.0);
                const ChartPoint p{fo.a.t + s * (fo.b.t - fo.a.t),
                                   fo.a.x + s * (fo.b.x - fo.a.x)};
                const SpacetimeVector n =
                    unit_normal_at(g, p, fo.a, fo.b, Causal::Spacelike);
                const SpacetimeVector X = pr.eval(p);
                Gv[i] = inner(g, p, X, n);
                Xn[i] = std::max(std::abs(X.vt), std::abs(X.vx));
            }
            const double hs = 1.0 / (M - 1.0);
            double gmax = 0.0, xmax = 0.0;
            for (int i = 0; i < M; ++i) {
                gmax = std::max(gmax, std::abs(Gv[i]));
                xmax = std::max(xmax, std::abs(Xn[i]));
            }
            for (int i = 1; i + 1 < M; ++i) {
                gmax = std::max(gmax,
                                std::abs(Gv[i - 1] - 2.0 * Gv[i] + Gv[i + 1]) / (hs * hs));
                xmax = std::max(xmax,
                                std::abs(Xn[i - 1] - 2.0 * Xn[i] + Xn[i + 1]) / (hs * hs));
            }
            if (xmax > 1e-14) smooth = std::max(smooth, gmax / std::max(xmax, 1.0));
        }
    }
    rep.smoothness_max = smooth;
    rep.smoothness_ok = smooth <= thr.smoothness;

    rep.pass = rep.pairwise_ok && rep.aggregate_ok && rep.flatness_ok && rep.smoothness_ok;
    return rep;
}

void write_mesh_file(const Mesh& mesh, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open '" + path + "' for writing");
    out.precision(17);

    std::map<std::pair<double, double>, int> vids;
    auto vid = [&](const ChartPoint& p) {
        auto [it, fresh] = vids.emplace(std::make_pair(p.t, p.x),
                                        static_cast<int>(vids.size()));
        (void)fresh;
        return it->second;
    };
    for (const Face& f : mesh.faces()) {
        vid(f.a);
        vid(f.b);
    }

    // faces on the final hypersurface get kind `outflow`
    std::vector<bool> final_face(mesh.faces().size(), false);
    for (int fid : mesh.surface(mesh.n_layers())) final_face[fid] = true;

    out << "lorfv-mesh 1\n";
    std::vector<std::pair<std::pair<double, double>, int>> ordered(vids.begin(),
                                                                   vids.end());
    std::sort(ordered.begin(), ordered.end(),
              [](const auto& a, const auto& b) { return a.second < b.second; });
    for (const auto& [coords, id] : ordered)
        out << "vertex " << id << " " << coords.first << " " << coords.second << "\n";
    for (const Face& f : mesh.faces()) {
        const char* kind = f.causal == Causal::Timelike ? "lateral"
                           : final_face[f.id]           ? "outflow"
                                                        : "inflow";
        out << "face " << f.id << " " << kind << " " << vid(f.a) << " " << vid(f.b)
            << "\n";
    }
    for (const Element& K : mesh.elements())
        out << "element " << K.id << " " << K.inflow << " " << K.outflow << " "
            << K.lateral[0] << " " << K.lateral[1] << "\n";
    for (int n = 0; n < mesh.n_layers(); ++n) {
        out << "slice " << n;
        for (int id : mesh.layer(n)) out << " " << id;
        out << "\n";
    }
    if (!out) throw ConfigError("writing '" + path + "' failed");
}

Mesh read_mesh_file(const std::string& path, const MetricChart& g, int quad_points) {
    std::ifstream in(path);
    if (!in) throw MeshParseError("cannot open mesh file '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line.substr(0, 12) != "lorfv-mesh 1")
        throw MeshParseError("missing 'lorfv-mesh 1' header");

    struct FaceRec {
        std::string kind;
        int v0, v1;
    };
    std::unordered_map<int, ChartPoint> verts;
    std::map<int, FaceRec> face_recs;
    struct ElemRec {
        int inflow, outflow, lat0, lat1;
    };
    std::map<int, ElemRec> elem_recs;
    std::map<int, std::vector<int>> slice_recs;

    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ss(line);
        std::string tag;
        if (!(ss >> tag)) continue; // blank line
        auto fail = [&](const std::string& msg) {
            throw MeshParseError("line " + std::to_string(lineno) + ": " + msg);
        };
        if (tag == "vertex") {
            int id;
            double t, x;
            if (!(ss >> id >> t >> x)) fail("bad vertex record");
            if (!verts.emplace(id, ChartPoint{t, x}).second) fail("duplicate vertex id");
        } else if (tag == "face") {
            int id, v0, v1;
            std::string kind;
            if (!(ss >> id >> kind >> v0 >> v1)) fail("bad face record");
            if (kind != "inflow" && kind != "outflow" && kind != "lateral")
                fail("unknown face kind '" + kind + "'");
            if (!face_recs.emplace(id, FaceRec{kind, v0, v1}).second)
                fail("duplicate face id");
        } else if (tag == "element") {
            int id, fi, fo, l0, l1;
            if (!(ss >> id >> fi >> fo >> l0 >> l1)) fail("bad element record");
            int extra;
            if (ss >> extra) fail("only two lateral faces are supported");
            if (!elem_recs.emplace(id, ElemRec{fi, fo, l0, l1}).second)
                fail("duplicate element id");
        } else if (tag == "slice") {
            int n;
            if (!(ss >> n)) fail("bad slice record");
            auto& ids = slice_recs[n];
            int e;
            while (ss >> e) ids.push_back(e);
            if (ids.empty()) fail("empty slice record");
        } else {
            fail("unknown record '" + tag + "'");
        }
    }
    if (elem_recs.empty()) throw MeshParseError("mesh has no elements");
    if (slice_recs.empty()) throw MeshParseError("mesh has no slice records");

    Mesh mesh(g, quad_points);
    std::unordered_map<int, int> face_map; // file id -> internal id
    std::unordered_map<int, std::string> face_kind;
    for (const auto& [id, rec] : face_recs) {
        auto i0 = verts.find(rec.v0), i1 = verts.find(rec.v1);
        if (i0 == verts.end() || i1 == verts.end())
            throw MeshParseError("face references unknown vertex");
        ChartPoint a = i0->second, b = i1->second;
        // canonical endpoint order: space-like by x, lateral by t
        if (rec.kind == "lateral") {
            if (a.t > b.t) std::swap(a, b);
        } else {
            if (a.x > b.x) std::swap(a, b);
        }
        int iid;
        try {
            iid = mesh.add_face(a, b);
        } catch (const DegenerateFaceError& e) {
            throw MeshInvalidError("face " + std::to_string(id) + ": " + e.what());
        }
        const Causal c = mesh.faces()[iid].causal;
        const bool want_space = rec.kind != "lateral";
        if (want_space != (c == Causal::Spacelike))
            throw MeshInvalidError("face " + std::to_string(id) +
                                   ": declared kind '" + rec.kind +
                                   "' does not match computed causal class");
        face_map[id] = iid;
        face_kind[id] = rec.kind;
    }

    std::vector<Element> elems;
    std::unordered_map<int, int> elem_map;
    auto mapped = [&](int fid) {
        auto it = face_map.find(fid);
        if (it == face_map.end()) throw MeshParseError("element references unknown face");
        return it->second;
    };
    for (const auto& [id, rec] : elem_recs) {
        if (face_kind[rec.inflow] == "lateral" || face_kind[rec.outflow] == "lateral")
            throw MeshInvalidError("element " + std::to_string(id) +
                                   " uses a lateral face in a space-like slot");
        if (face_kind[rec.inflow] == "outflow")
            throw MeshInvalidError("element " + std::to_string(id) +
                                   " takes a final-surface face as inflow");
        if (face_kind[rec.lat0] != "lateral" || face_kind[rec.lat1] != "lateral")
            throw MeshInvalidError("element " + std::to_string(id) +
                                   " uses a space-like face in a lateral slot");
        Element K;
        K.id = static_cast<int>(elems.size());
        K.inflow = mapped(rec.inflow);
        K.outflow = mapped(rec.outflow);
        K.lateral[0] = mapped(rec.lat0);
        K.lateral[1] = mapped(rec.lat1);
        elem_map[id] = K.id;
        elems.push_back(K);
    }

    std::vector<std::vector<int>> layers;
    for (const auto& [n, ids] : slice_recs) {
        if (n != static_cast<int>(layers.size()))
            throw MeshParseError("slice indices must be 0..N-1 without gaps");
        std::vector<int> internal;
        for (int e : ids) {
            auto it = elem_map.find(e);
            if (it == elem_map.end())
                throw MeshParseError("slice references unknown element");
            internal.push_back(it->second);
        }
        layers.push_back(std::move(internal));
    }

    mesh.finalize(std::move(elems), std::move(layers));
    return mesh;
}

void validate_mesh(const Mesh& mesh) {
    const MetricChart& g = mesh.metric();
    const QuadratureRule fine = QuadratureRule::gauss_legendre(20);

    for (const Element& K : mesh.elements()) {
        const Face& fin = mesh.face(K.inflow);
        const Face& fout = mesh.face(K.outflow);
        if (fin.causal != Causal::Spacelike || fout.causal != Causal::Spacelike)
            throw MeshInvalidError("element space-like faces misclassified");
        for (int l = 0; l < 2; ++l)
            if (mesh.face(K.lateral[l]).causal != Causal::Timelike)
                throw MeshInvalidError("element lateral face is not time-like");
        // outward normal orientations: future on e+, past on e-
        for (const FaceNode& node : fout.nodes)
            if (!is_future_oriented(g, node.p, node.normal))
                throw MeshInvalidError("outflow canonical normal is not future-oriented");
        if (!(fin.centroid.t < fout.centroid.t))
            throw MeshInvalidError("element is not future-ordered");
        if (K.layer + 1 < mesh.n_layers() && K.succ < 0)
            throw MeshInvalidError("outflow face of an interior layer has no successor");
        if (K.layer > 0 && K.pred < 0)
            throw MeshInvalidError("inflow face of a later layer has no predecessor");
    }

    // slice matching: inflow faces of layer n+1 == outflow faces of layer n
    for (int n = 0; n + 1 < mesh.n_layers(); ++n) {
        std::vector<int> out_faces, in_faces;
        for (int id : mesh.layer(n)) out_faces.push_back(mesh.element(id).outflow);
        for (int id : mesh.layer(n + 1)) in_faces.push_back(mesh.element(id).inflow);
        std::sort(out_faces.begin(), out_faces.end());
        std::sort(in_faces.begin(), in_faces.end());
        if (out_faces != in_faces)
            throw MeshInvalidError("slice matching fails between layers " +
                                   std::to_string(n) + " and " + std::to_string(n + 1));
    }

    // measure consistency: baked measures vs an independent finer quadrature
    for (int n = 0; n < mesh.n_surfaces(); ++n) {
        double baked = 0.0, ref = 0.0;
        for (int fid : mesh.surface(n)) {
            const Face& f = mesh.face(fid);
            baked += f.measure;
            const double gt = f.b.t - f.a.t, gx = f.b.x - f.a.x;
            for (std::size_t q = 0; q < fine.size(); ++q) {
                const double s = fine.nodes[q];
                const ChartPoint p{f.a.t + s * gt, f.a.x + s * gx};
                const SpacetimeVector tan{p, gt, gx};
                ref += fine.weights[q] * std::sqrt(std::abs(inner(g, p, tan, tan)));
            }
        }
        if (std::abs(baked - ref) > 1e-10 * std::max(1.0, std::abs(ref)))
            throw MeshInvalidError("surface " + std::to_string(n) +
                                   " measure differs from reference quadrature");
    }
}

} // namespace lorfv
