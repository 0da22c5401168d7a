#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "lorfv/geometry.hpp"

namespace lorfv {

/// Quadrature node baked onto a face: position, arc-length weight (weights sum
/// to the face measure) and the canonical unit normal at that position.
/// Canonical orientation: future-pointing on space-like faces, positive chart
/// x-component on lateral (time-like) faces. Per-element outward normals are
/// +-canonical depending on the element's side.
struct FaceNode {
    ChartPoint p;
    double w = 0.0;
    SpacetimeVector normal;
};

enum class FaceRole { Inflow, Outflow, Lateral };

struct Face {
    int id = -1;
    ChartPoint a, b; // endpoints of the chart-straight segment, a -> b
    Causal causal = Causal::Spacelike; // class of the tangent: Spacelike faces
                                       // have Timelike normals and vice versa
    double measure = 0.0;
    ChartPoint centroid;
    std::vector<FaceNode> nodes;
};

/// Mesh element (a chart quadrilateral) with exactly one inflow face e- (past
/// outward normal), one outflow face e+ (future outward normal) and two
/// lateral faces [left, right] whose canonical normals point in +x; the left
/// face's outward normal for this element is -canonical.
struct Element {
    int id = -1;
    int layer = -1; // slice index n, elements between H_n and H_{n+1}
    int pos = -1;   // position within the layer (spatial ordering)

    int inflow = -1;
    int outflow = -1;
    int lateral[2] = {-1, -1};          // face ids, [left, right]
    double lateral_sign[2] = {-1.0, 1.0}; // outward = sign * canonical normal

    double volume = 0.0;          // |K| = int_K dV_g
    double tau = 0.0;             // |K| / |e+|
    double lateral_measure = 0.0; // |d0 K|

    int pred = -1;                // element sharing the inflow face (layer n-1)
    int succ = -1;                // element sharing the outflow face (layer n+1)
    int lateral_neighbor[2] = {-1, -1};

    ChartPoint p_plus; // centroid of e+
    ChartPoint p_lat;  // measure-weighted centroid of d0 K
};

/// Space-time mesh subordinate to a foliation: layers K^0..K^{Nt-1} of
/// elements between hypersurfaces H_0..H_{Nt}, periodic in x. All face
/// measures, normals and element volumes are baked against one metric at
/// construction time.
class Mesh {
public:
    Mesh(MetricChart metric, int quad_points);

    const MetricChart& metric() const { return metric_; }
    const QuadratureRule& rule() const { return rule_; }
    int quad_points() const { return static_cast<int>(rule_.size()); }

    const std::vector<Face>& faces() const { return faces_; }
    const std::vector<Element>& elements() const { return elements_; }
    const Face& face(int id) const { return faces_[static_cast<std::size_t>(id)]; }
    const Element& element(int id) const {
        return elements_[static_cast<std::size_t>(id)];
    }

    int n_layers() const { return static_cast<int>(layers_.size()); }
    int n_surfaces() const { return n_layers() + 1; }
    const std::vector<int>& layer(int n) const {
        return layers_[static_cast<std::size_t>(n)];
    }
    /// Face ids of hypersurface H_n, in spatial order. H_n carries the values
    /// of slice state n.
    const std::vector<int>& surface(int n) const {
        return surfaces_[static_cast<std::size_t>(n)];
    }

    double h() const { return h_; }          // max space-like face measure
    double tau_max() const { return tau_max_; }
    /// Layer time scale tau_n = max_{K in K^n} |K|/|e+|.
    double layer_tau(int n) const { return layer_tau_[static_cast<std::size_t>(n)]; }
    /// t_n = sum_{j<n} tau_j, the accumulated scheme time after n layers.
    double time_after(int n) const { return t_cum_[static_cast<std::size_t>(n)]; }
    /// Chart time of hypersurface H_n (foliation time).
    double surface_chart_time(int n) const {
        return surface_t_[static_cast<std::size_t>(n)];
    }

    FaceRole role_of(const Element& K, int face_id) const;

    /// Builders append faces/elements; used by generators and the file reader.
    int add_face(const ChartPoint& a, const ChartPoint& b);
    void finalize(std::vector<Element> elements, std::vector<std::vector<int>> layers);

private:
    MetricChart metric_;
    QuadratureRule rule_;
    std::vector<Face> faces_;
    std::vector<Element> elements_;
    std::vector<std::vector<int>> layers_;
    std::vector<std::vector<int>> surfaces_;
    std::vector<double> layer_tau_;
    std::vector<double> t_cum_;
    std::vector<double> surface_t_;
    double h_ = 0.0;
    double tau_max_ = 0.0;
};

/// Product mesh: Nx cells on [0, L), Nt layers on [0, t_end].
Mesh build_uniform(const MetricChart& g, int nx, int nt, double t_end,
                   int quad_points = 5);

/// Product mesh with prescribed strictly increasing time grid (first entry is
/// the initial time).
Mesh build_nonuniform_time(const MetricChart& g, int nx,
                           const std::vector<double>& time_grid,
                           int quad_points = 5);

/// Uniform layers whose lateral faces are tilted with chart slope s
/// (dx/dt = s); `alternating` flips the sign of s every layer. Throws
/// ShearTooLarge when a lateral face stops being time-like.
Mesh build_sheared(const MetricChart& g, int nx, int nt, double t_end, double s,
                   bool alternating, int quad_points = 5);

struct CflElement {
    int element = -1;
    double ratio = 0.0; // (|d0K|/|e+|) * sup|du mu_lat| / inf du mu+
};

struct CflReport {
    double max_ratio = 0.0;
    bool pass = false;
    int worst_element = -1;
    std::vector<CflElement> per_element;
};

/// Time-step admissibility ratio per element; suprema sampled over >= 64
/// points of u_range and the baked face quadrature nodes.
CflReport cfl_report(const Mesh& mesh, const FluxField& f, const Interval& u_range,
                     int n_samples = 65);

struct DeviationThresholds {
    double eta = 0.5;        // pairwise conditions: pass iff estimated eta <= this
    double aggregate = 0.05; // aggregate sum: pass iff |sum| <= aggregate / h
    double flatness = 1.0;   // centroid-to-face distance / (|e+| tau)
    double smoothness = 50.0; // C2 proxy ratio along outflow faces
};

/// Checks how far the mesh family sits from the Cartesian-deviation
/// requirements: pairwise scaled-normal and time-like-direction conditions,
/// the aggregated bilinear sum, outflow-centroid flatness, and a smoothness
/// proxy for u -> g(X, n) along outflow faces. w_K is approximated by the
/// straight chart segment from the lateral centroid to the outflow centroid.
struct DeviationReport {
    double eta_normals = 0.0; // pairwise scaled-normal condition estimate
    double eta_w = 0.0;       // pairwise time-like direction condition estimate
    double aggregate_max = 0.0;
    double flatness_max = 0.0;
    double smoothness_max = 0.0;
    int skipped_initial_pairs = 0;
    bool pairwise_ok = false;
    bool aggregate_ok = false;
    bool flatness_ok = false;
    bool smoothness_ok = false;
    bool pass = false;
    double h = 0.0;
    DeviationThresholds thresholds;
    std::vector<double> element_pair_residual; // max normalized residual per element
    std::string w_approximation = "straight chart segment";
};

DeviationReport cartesian_deviation(const Mesh& mesh,
                                    const DeviationThresholds& thr = {});

/// Plain-text mesh container: `lorfv-mesh 1` header, then `vertex`, `face`,
/// `element`, `slice` records. Space-like faces are written with kind
/// `inflow` except those of the final hypersurface (`outflow`); time-like
/// faces with kind `lateral`.
void write_mesh_file(const Mesh& mesh, const std::string& path);
Mesh read_mesh_file(const std::string& path, const MetricChart& g,
                    int quad_points = 5);

/// Structural axioms: exactly two space-like faces per element with the
/// declared orientations, nonempty time-like lateral boundary, slice
/// matching between consecutive layers, and measure consistency per
/// hypersurface. Throws MeshInvalidError with a description on violation.
void validate_mesh(const Mesh& mesh);

} // namespace lorfv
