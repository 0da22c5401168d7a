#include "lorfv/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

namespace lorfv {

MetricChart::MetricChart(std::string name, Component g_tt, Component g_tx,
                         Component g_xx, double period)
    : name_(std::move(name)), gtt_(std::move(g_tt)), gtx_(std::move(g_tx)),
      gxx_(std::move(g_xx)), period_(period) {
    if (!(period_ > 0.0))
        throw BadDimensionsError("metric period must be positive");
    if (!gtt_ || !gtx_ || !gxx_)
        throw BadDimensionsError("metric components must all be set");
}

double MetricChart::det(const ChartPoint& p) const {
    const double tt = gtt_(p), tx = gtx_(p), xx = gxx_(p);
    return tt * xx - tx * tx;
}

double MetricChart::volume_density(const ChartPoint& p) const {
    const double d = det(p);
    if (!(d < 0.0) || !(gtt_(p) < 0.0))
        throw BadDimensionsError("metric loses Lorentzian signature at t=" +
                                 std::to_string(p.t) + " x=" + std::to_string(p.x));
    return std::sqrt(-d);
}

double MetricChart::wrap_x(double x) const {
    double r = std::fmod(x, period_);
    if (r < 0.0) r += period_;
    return r;
}

double inner(const MetricChart& g, const ChartPoint& p, const SpacetimeVector& X,
             const SpacetimeVector& Y) {
    const double tt = g.g_tt(p), tx = g.g_tx(p), xx = g.g_xx(p);
    return tt * X.vt * Y.vt + tx * (X.vt * Y.vx + X.vx * Y.vt) + xx * X.vx * Y.vx;
}

Causal classify(const MetricChart& g, const ChartPoint& p, const SpacetimeVector& X,
                double eps_null) {
    const double q = inner(g, p, X, X);
    if (std::abs(q) <= eps_null) return Causal::Null;
    return q < 0.0 ? Causal::Timelike : Causal::Spacelike;
}

bool is_future_oriented(const MetricChart& g, const ChartPoint& p,
                        const SpacetimeVector& X) {
    const SpacetimeVector et{p, 1.0, 0.0};
    return inner(g, p, X, et) < 0.0;
}

FluxField::FluxField(std::string name, VectorFn f, VectorFn df_du,
                     Interval declared_range)
    : name_(std::move(name)), f_(std::move(f)), dfdu_(std::move(df_du)),
      range_(declared_range) {
    if (!f_ || !dfdu_)
        throw BadDimensionsError("flux field needs f and df_du");
    if (!(range_.lo < range_.hi))
        throw EmptyRangeError("declared range of flux field is empty");
}

double FluxField::divergence(const MetricChart& g, double u, const ChartPoint& p) const {
    if (div_) return div_(u, p);
    // (1/sqrt|g|) d_mu (sqrt|g| f^mu), centered differences in each chart direction.
    const double h = 1e-5;
    auto dens = [&](const ChartPoint& q) {
        const SpacetimeVector v = f_(u, q);
        const double rho = g.volume_density(q);
        return std::pair<double, double>{rho * v.vt, rho * v.vx};
    };
    const auto tp = dens({p.t + h, p.x}), tm = dens({p.t - h, p.x});
    const auto xp = dens({p.t, p.x + h}), xm = dens({p.t, p.x - h});
    const double dt = (tp.first - tm.first) / (2.0 * h);
    const double dx = (xp.second - xm.second) / (2.0 * h);
    return (dt + dx) / g.volume_density(p);
}

QuadratureRule QuadratureRule::gauss_legendre(int n_points) {
    if (n_points < 1 || n_points > 64)
        throw BadDimensionsError("gauss_legendre supports 1..64 points");
    QuadratureRule r;
    r.degree = 2 * n_points - 1;
    r.nodes.resize(n_points);
    r.weights.resize(n_points);
    const int n = n_points;
    const auto legendre = [n](double x, double& dp) {
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= n; ++k) {
            const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
            p0 = p1;
            p1 = p2;
        }
        dp = n * (x * p1 - p0) / (x * x - 1.0);
        return p1;
    };
    for (int i = 0; i < (n + 1) / 2; ++i) {
        // Newton iteration on P_n, Chebyshev initial guess; nodes on (-1, 1).
        double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            const double dx = legendre(x, dp) / dp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        // the weight needs P_n' at the settled node, not at the last iterate
        legendre(x, dp);
        const double w = 2.0 / ((1.0 - x * x) * dp * dp);
        // map (-1,1) -> (0,1); rule is symmetric
        r.nodes[i] = 0.5 * (1.0 - x);
        r.weights[i] = 0.5 * w;
        r.nodes[n - 1 - i] = 0.5 * (1.0 + x);
        r.weights[n - 1 - i] = 0.5 * w;
    }
    return r;
}

SampleGrid make_sample_grid(const Interval& u_range, double t0, double t1, double L,
                            int n_u, int n_t, int n_x) {
    if (n_u < 1 || n_t < 1 || n_x < 1)
        throw EmptyGridError("sample grid needs at least one point per axis");
    if (!(u_range.lo <= u_range.hi))
        throw EmptyRangeError("sample grid u-range is empty");
    SampleGrid grid;
    grid.reserve(static_cast<std::size_t>(n_u) * n_t * n_x);
    for (int iu = 0; iu < n_u; ++iu) {
        const double u = n_u == 1 ? u_range.lo
                                  : u_range.lo + u_range.width() * iu / (n_u - 1.0);
        for (int it = 0; it < n_t; ++it) {
            const double t = n_t == 1 ? t0 : t0 + (t1 - t0) * it / (n_t - 1.0);
            for (int ix = 0; ix < n_x; ++ix) {
                const double x = L * ix / n_x;
                grid.emplace_back(u, ChartPoint{t, x});
            }
        }
    }
    return grid;
}

TimelikeFluxReport timelike_flux_report(const FluxField& f, const MetricChart& g,
                                        const SampleGrid& samples) {
    if (samples.empty())
        throw EmptyGridError("timelike_flux_report: empty sample grid");
    TimelikeFluxReport rep;
    rep.n_samples = samples.size();
    rep.worst_value = -std::numeric_limits<double>::infinity();
    bool first = true;
    for (const auto& [u, p] : samples) {
        const SpacetimeVector d = f.du(u, p);
        const double q = inner(g, p, d, d);
        const bool fut = is_future_oriented(g, p, d);
        if (!fut) rep.all_future = false;
        if (first || q > rep.worst_value || !fut) {
            if (first || q > rep.worst_value) {
                rep.worst_value = q;
                rep.witness_u = u;
                rep.witness_p = p;
            }
            if (!fut) { // a non-future sample is always a witness
                rep.witness_u = u;
                rep.witness_p = p;
            }
            first = false;
        }
    }
    rep.ok = rep.all_future && rep.worst_value < 0.0;
    return rep;
}

GrowthConstants estimate_growth_constants(const FluxField& f, const MetricChart& g,
                                          double t0, double t1, const Interval& u_range,
                                          int n_u, int n_t, int n_x) {
    const SampleGrid grid = make_sample_grid(u_range, t0, t1, g.period(), n_u, n_t, n_x);
    GrowthConstants c;
    // c1 bounds |div| at u = 0, c2 the residual slope; together they dominate
    // every sampled |div_g f(u, p)|.
    for (const auto& [u, p] : grid) {
        (void)u;
        c.c1 = std::max(c.c1, std::abs(f.divergence(g, 0.0, p)));
    }
    for (const auto& [u, p] : grid) {
        if (u == 0.0) continue;
        const double d = std::abs(f.divergence(g, u, p));
        c.c2 = std::max(c.c2, (d - c.c1) / std::abs(u));
    }
    c.c2 = std::max(c.c2, 0.0);
    return c;
}

MetricChart make_metric(const std::string& name, double L, double k) {
    if (name == "minkowski") {
        return MetricChart(name, [](const ChartPoint&) { return -1.0; },
                           [](const ChartPoint&) { return 0.0; },
                           [](const ChartPoint&) { return 1.0; }, L);
    }
    if (name == "flrw_linear") {
        return MetricChart(name, [](const ChartPoint&) { return -1.0; },
                           [](const ChartPoint&) { return 0.0; },
                           [](const ChartPoint& p) {
                               const double a = 1.0 + p.t;
                               return a * a;
                           },
                           L);
    }
    if (name == "flrw_exp") {
        return MetricChart(name, [](const ChartPoint&) { return -1.0; },
                           [](const ChartPoint&) { return 0.0; },
                           [k](const ChartPoint& p) {
                               const double a = std::exp(k * p.t);
                               return a * a;
                           },
                           L);
    }
    throw ConfigError("unknown metric '" + name + "'");
}

namespace {

std::function<double(double)> scale_factor_of(const MetricChart& g) {
    if (g.name() == "minkowski") return [](double) { return 1.0; };
    if (g.name() == "flrw_linear") return [](double t) { return 1.0 + t; };
    if (g.name() == "flrw_exp") {
        // recover k from the stored component
        const double gxx1 = g.g_xx({1.0, 0.0});
        const double k = 0.5 * std::log(gxx1);
        return [k](double t) { return std::exp(k * t); };
    }
    return {};
}

std::function<double(double)> log_scale_rate_of(const MetricChart& g) {
    if (g.name() == "minkowski") return [](double) { return 0.0; };
    if (g.name() == "flrw_linear") return [](double t) { return 1.0 / (1.0 + t); };
    if (g.name() == "flrw_exp") {
        const double gxx1 = g.g_xx({1.0, 0.0});
        const double k = 0.5 * std::log(gxx1);
        return [k](double) { return k; };
    }
    return {};
}

} // namespace

FluxField make_flux(const std::string& name, const MetricChart& g,
                    Interval declared_range, double param) {
    const auto rate = log_scale_rate_of(g);
    if (name == "burgers") {
        FluxField f(name,
                    [](double u, const ChartPoint& p) {
                        return SpacetimeVector{p, u, 0.5 * u * u};
                    },
                    [](double u, const ChartPoint& p) {
                        return SpacetimeVector{p, 1.0, u};
                    },
                    declared_range);
        if (rate)
            f.set_divergence([rate](double u, const ChartPoint& p) {
                return rate(p.t) * u;
            });
        return f;
    }
    if (name == "linear_advection") {
        const double c = param;
        FluxField f(name,
                    [c](double u, const ChartPoint& p) {
                        return SpacetimeVector{p, u, c * u};
                    },
                    [c](double, const ChartPoint& p) {
                        return SpacetimeVector{p, 1.0, c};
                    },
                    declared_range);
        if (rate)
            f.set_divergence([rate](double u, const ChartPoint& p) {
                return rate(p.t) * u;
            });
        return f;
    }
    if (name == "flrw_compatible") {
        const auto a = scale_factor_of(g);
        if (!a)
            throw ConfigError("flrw_compatible flux needs a built-in FLRW-type metric");
        FluxField f(name,
                    [a](double u, const ChartPoint& p) {
                        const double s = a(p.t);
                        return SpacetimeVector{p, u / s, 0.5 * u * u / s};
                    },
                    [a](double u, const ChartPoint& p) {
                        const double s = a(p.t);
                        return SpacetimeVector{p, 1.0 / s, u / s};
                    },
                    declared_range);
        f.set_divergence([](double, const ChartPoint&) { return 0.0; });
        return f;
    }
    throw ConfigError("unknown flux '" + name + "'");
}

} // namespace lorfv
