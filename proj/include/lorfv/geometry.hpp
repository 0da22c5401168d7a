#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "lorfv/errors.hpp"

namespace lorfv {

/// Point in the global chart (t, x). x lives on a circle of circumference L
/// (the metric's period); mesh generators keep coordinates unwrapped so that
/// faces crossing the seam stay contiguous, and position-dependent data is
/// evaluated through MetricChart::wrap_x.
struct ChartPoint {
    double t = 0.0;
    double x = 0.0;
};

/// Tangent vector with components in the chart basis (d/dt, d/dx), attached
/// to the point where it lives.
struct SpacetimeVector {
    ChartPoint base;
    double vt = 0.0;
    double vx = 0.0;
};

enum class Causal { Timelike, Null, Spacelike };

struct Interval {
    double lo = -1.0;
    double hi = 1.0;
    double width() const { return hi - lo; }
};

/// Lorentzian metric on the chart, signature (-, +), given by its component
/// functions. dt must be time-like (g_tt < 0) and det g < 0 everywhere the
/// metric is evaluated; violations throw.  Components must be L-periodic in x.
class MetricChart {
public:
    using Component = std::function<double(const ChartPoint&)>;

    MetricChart(std::string name, Component g_tt, Component g_tx, Component g_xx,
                double period);

    const std::string& name() const { return name_; }
    double period() const { return period_; }

    double g_tt(const ChartPoint& p) const { return gtt_(p); }
    double g_tx(const ChartPoint& p) const { return gtx_(p); }
    double g_xx(const ChartPoint& p) const { return gxx_(p); }

    /// det of the 2x2 metric matrix; < 0 for a Lorentzian signature.
    double det(const ChartPoint& p) const;
    /// sqrt(-det), the volume density of dV_g in chart coordinates.
    double volume_density(const ChartPoint& p) const;

    /// Reduce x into [0, L).
    double wrap_x(double x) const;

private:
    std::string name_;
    Component gtt_, gtx_, gxx_;
    double period_;
};

/// g_p(X, Y).
double inner(const MetricChart& g, const ChartPoint& p, const SpacetimeVector& X,
             const SpacetimeVector& Y);

/// Causal classification of X at p: |g(X,X)| <= eps_null counts as null.
Causal classify(const MetricChart& g, const ChartPoint& p, const SpacetimeVector& X,
                double eps_null = 1e-12);

/// True when X points to the future, i.e. g(X, d/dt) < 0 (d/dt itself is
/// future-oriented time-like for the admitted signature).
bool is_future_oriented(const MetricChart& g, const ChartPoint& p,
                        const SpacetimeVector& X);

/// Scalar flux field f(u, p) on the spacetime, with analytic u-derivative.
/// div_g is the covariant divergence of p -> f(ubar, p) at frozen ubar; the
/// registry supplies closed forms, custom fields fall back to central
/// differences of the densitized components.
class FluxField {
public:
    using VectorFn = std::function<SpacetimeVector(double, const ChartPoint&)>;
    using ScalarFn = std::function<double(double, const ChartPoint&)>;

    FluxField(std::string name, VectorFn f, VectorFn df_du, Interval declared_range);

    const std::string& name() const { return name_; }
    Interval declared_range() const { return range_; }

    SpacetimeVector value(double u, const ChartPoint& p) const { return f_(u, p); }
    SpacetimeVector du(double u, const ChartPoint& p) const { return dfdu_(u, p); }

    void set_divergence(ScalarFn div) { div_ = std::move(div); }
    bool has_divergence() const { return static_cast<bool>(div_); }

    /// div_g f(ubar, .)(p); uses the registered closed form when present,
    /// otherwise finite differences with the supplied metric.
    double divergence(const MetricChart& g, double u, const ChartPoint& p) const;

private:
    std::string name_;
    VectorFn f_, dfdu_;
    Interval range_;
    ScalarFn div_;
};

/// Gauss-Legendre rule on the reference interval [0, 1]; weights sum to 1.
/// `degree` is the polynomial exactness 2n - 1.
struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
    int degree = 0;

    static QuadratureRule gauss_legendre(int n_points);
    std::size_t size() const { return nodes.size(); }
};

struct TimelikeFluxReport {
    bool ok = false;
    double worst_value = 0.0;     // max over samples of g(du f, du f); ok needs < 0
    bool all_future = true;
    double witness_u = 0.0;       // sample achieving worst_value (or first failure)
    ChartPoint witness_p;
    std::size_t n_samples = 0;
};

using SampleGrid = std::vector<std::pair<double, ChartPoint>>;

/// Tensor sample grid over u in [range] x chart window [t0,t1] x [0, L).
SampleGrid make_sample_grid(const Interval& u_range, double t0, double t1, double L,
                            int n_u, int n_t, int n_x);

/// Checks that du f is time-like and future-oriented at every sample.
TimelikeFluxReport timelike_flux_report(const FluxField& f, const MetricChart& g,
                                        const SampleGrid& samples);

/// Constants with |div_g f(ubar, p)| <= c1 + c2 |ubar| at every sample point.
struct GrowthConstants {
    double c1 = 0.0;
    double c2 = 0.0;
};

GrowthConstants estimate_growth_constants(const FluxField& f, const MetricChart& g,
                                          double t0, double t1, const Interval& u_range,
                                          int n_u = 33, int n_t = 33, int n_x = 5);

struct Element; // mesh.hpp
class Mesh;     // mesh.hpp

/// Boundary-integral value of int_K div_g f(ubar, .) dV via the faces of K:
/// -int_{e+} g(f, n) - int_{e-} g(f, n) + sum_{e0} int_{e0} g(f, n) with
/// outward unit normals. Zero (to quadrature accuracy) iff the frozen flux is
/// divergence-free over K.
double compatibility_defect(const FluxField& f, const Mesh& mesh, const Element& K,
                            double u);

/// Built-in metrics: "minkowski", "flrw_linear" (a = 1 + t), "flrw_exp"
/// (a = exp(k t)); all of the form -dt^2 + a(t)^2 dx^2 on a circle of length L.
MetricChart make_metric(const std::string& name, double L = 1.0, double k = 1.0);

/// Built-in flux fields: "burgers" f = (u, u^2/2), "linear_advection"
/// f = (u, c u) with c = param, "flrw_compatible" f = (u, u^2/2)/a(t) bound to
/// the given metric's scale factor (divergence-free on any FLRW chart).
/// Closed-form divergences are attached for all three on the built-in metrics.
FluxField make_flux(const std::string& name, const MetricChart& g,
                    Interval declared_range = {-1.0, 1.0}, double param = 0.5);

} // namespace lorfv
