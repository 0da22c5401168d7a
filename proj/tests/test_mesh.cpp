#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lorfv/mesh.hpp"

using namespace lorfv;

namespace {

const Element& element_at(const Mesh& mesh, int layer, int pos) {
    for (const Element& K : mesh.elements())
        if (K.layer == layer && K.pos == pos) return K;
    FAIL("no element at requested layer/pos");
    return mesh.elements().front();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    REQUIRE(out);
    out << text;
}

} // namespace

TEST_CASE("uniform product mesh bakes the expected measures") {
    const MetricChart g = make_metric("minkowski");
    const Mesh mesh = build_uniform(g, 4, 2, 0.2, 5);

    CHECK(mesh.n_layers() == 2);
    CHECK(mesh.n_surfaces() == 3);
    CHECK(mesh.elements().size() == 8);
    CHECK(mesh.layer(0).size() == 4);
    CHECK(mesh.surface(0).size() == 4);
    CHECK(mesh.surface(2).size() == 4);
    CHECK(std::abs(mesh.h() - 0.25) <= 1e-15);
    CHECK(std::abs(mesh.tau_max() - 0.1) <= 1e-15);
    CHECK(std::abs(mesh.layer_tau(1) - 0.1) <= 1e-15);
    CHECK(std::abs(mesh.time_after(2) - 0.2) <= 1e-15);
    CHECK(std::abs(mesh.surface_chart_time(1) - 0.1) <= 1e-15);

    for (const Element& K : mesh.elements()) {
        CHECK(std::abs(K.volume - 0.025) <= 1e-15);
        CHECK(std::abs(K.tau - 0.1) <= 1e-15);
        CHECK(std::abs(K.lateral_measure - 0.2) <= 1e-15);
        CHECK(std::abs(mesh.face(K.inflow).measure - 0.25) <= 1e-15);
        CHECK(std::abs(mesh.face(K.outflow).measure - 0.25) <= 1e-15);
        CHECK(std::abs(mesh.face(K.lateral[0]).measure - 0.1) <= 1e-15);
        CHECK(K.lateral_sign[0] == -1.0);
        CHECK(K.lateral_sign[1] == 1.0);
        CHECK(mesh.role_of(K, K.inflow) == FaceRole::Inflow);
        CHECK(mesh.role_of(K, K.outflow) == FaceRole::Outflow);
        CHECK(mesh.role_of(K, K.lateral[1]) == FaceRole::Lateral);
    }

    SUBCASE("normals are unit, correctly oriented and weights sum to measures") {
        for (const Face& face : mesh.faces()) {
            double wsum = 0.0;
            for (const FaceNode& node : face.nodes) {
                wsum += node.w;
                const double q = inner(g, node.p, node.normal, node.normal);
                CHECK(std::abs(std::abs(q) - 1.0) <= 1e-12);
                if (face.causal == Causal::Spacelike)
                    CHECK(is_future_oriented(g, node.p, node.normal));
                else
                    CHECK(node.normal.vx > 0.0);
            }
            CHECK(std::abs(wsum - face.measure) <= 1e-13);
        }
    }

    SUBCASE("periodic neighbor wiring") {
        const Element& K0 = element_at(mesh, 0, 0);
        const Element& K3 = element_at(mesh, 0, 3);
        CHECK(K0.lateral_neighbor[0] == K3.id);
        CHECK(K3.lateral_neighbor[1] == K0.id);
        CHECK(K0.lateral[0] == K3.lateral[1]);
        CHECK(K0.pred == -1);
        const Element& above = element_at(mesh, 1, 0);
        CHECK(K0.succ == above.id);
        CHECK(above.pred == K0.id);
        CHECK(above.succ == -1);
        CHECK(above.inflow == K0.outflow);
    }

    SUBCASE("outflow centroid sits mid-cell on the next surface") {
        const Element& K = element_at(mesh, 0, 2);
        CHECK(std::abs(K.p_plus.t - 0.1) <= 1e-15);
        CHECK(std::abs(K.p_plus.x - 0.625) <= 1e-15);
    }

    SUBCASE("role_of rejects foreign faces") {
        const Element& K0 = element_at(mesh, 0, 0);
        const Element& K2 = element_at(mesh, 0, 2);
        CHECK_THROWS_AS(mesh.role_of(K0, K2.lateral[1]), MeshInvalidError);
    }

    CHECK_THROWS_AS(build_uniform(g, 1, 2, 0.2), BadDimensionsError);
    CHECK_THROWS_AS(build_uniform(g, 4, 0, 0.2), BadDimensionsError);
    CHECK_THROWS_AS(build_uniform(g, 4, 2, -0.1), BadDimensionsError);
}

TEST_CASE("expanding-chart measures follow the scale factor") {
    const MetricChart g = make_metric("flrw_linear");

    SUBCASE("space-like faces at t = 1 have measure a(1) dx") {
        const Mesh mesh = build_uniform(g, 2, 1, 1.0, 5);
        for (int fid : mesh.surface(1))
            CHECK(std::abs(mesh.face(fid).measure - 1.0) <= 1e-13);
        for (int fid : mesh.surface(0))
            CHECK(std::abs(mesh.face(fid).measure - 0.5) <= 1e-13);
    }

    SUBCASE("lateral faces measure proper time, volumes integrate the density") {
        const Mesh mesh = build_uniform(g, 2, 1, 0.1, 5);
        const Element& K = element_at(mesh, 0, 0);
        CHECK(std::abs(mesh.face(K.lateral[0]).measure - 0.1) <= 1e-14);
        CHECK(std::abs(K.volume - 0.0525) <= 1e-14);
        CHECK(std::abs(K.tau - K.volume / mesh.face(K.outflow).measure) <= 1e-15);
    }

    SUBCASE("per-surface total measure matches a(t) L") {
        const Mesh mesh = build_uniform(g, 8, 2, 0.4, 5);
        for (int n = 0; n <= 2; ++n) {
            double total = 0.0;
            for (int fid : mesh.surface(n)) total += mesh.face(fid).measure;
            const double expected = (1.0 + mesh.surface_chart_time(n)) * g.period();
            CHECK(std::abs(total - expected) <= 1e-10);
        }
    }
}

TEST_CASE("prescribed time grids") {
    const MetricChart g = make_metric("minkowski");
    const Mesh mesh = build_nonuniform_time(g, 4, {0.0, 0.1, 0.25});
    CHECK(mesh.n_layers() == 2);
    CHECK(std::abs(mesh.layer_tau(0) - 0.1) <= 1e-15);
    CHECK(std::abs(mesh.layer_tau(1) - 0.15) <= 1e-15);
    CHECK(std::abs(mesh.time_after(2) - 0.25) <= 1e-15);
    CHECK(std::abs(mesh.surface_chart_time(2) - 0.25) <= 1e-15);

    const Mesh mesh2 = build_nonuniform_time(g, 8, {0.0, 0.05, 0.1, 0.2});
    CHECK(mesh2.elements().size() == 24);
    CHECK(mesh2.n_layers() == 3);
    for (int n = 0; n <= 3; ++n) CHECK(mesh2.surface(n).size() == 8);
    validate_mesh(mesh2);

    CHECK_THROWS_AS(build_nonuniform_time(g, 4, {0.0}), BadDimensionsError);
    CHECK_THROWS_AS(build_nonuniform_time(g, 4, {0.0, 0.1, 0.1}), NonMonotoneGridError);
    CHECK_THROWS_AS(build_nonuniform_time(g, 4, {0.0, -0.1}), NonMonotoneGridError);
}

TEST_CASE("sheared layers") {
    const MetricChart g = make_metric("minkowski");

    SUBCASE("zero shear reproduces the product mesh") {
        const Mesh plain = build_uniform(g, 8, 2, 0.2, 5);
        const Mesh sheared = build_sheared(g, 8, 2, 0.2, 0.0, false, 5);
        REQUIRE(sheared.elements().size() == plain.elements().size());
        for (const Element& K : plain.elements()) {
            const Element& S = element_at(sheared, K.layer, K.pos);
            CHECK(std::abs(K.volume - S.volume) <= 1e-14);
            CHECK(std::abs(K.tau - S.tau) <= 1e-14);
            CHECK(std::abs(K.lateral_measure - S.lateral_measure) <= 1e-14);
            CHECK(std::abs(plain.face(K.outflow).measure -
                           sheared.face(S.outflow).measure) <= 1e-14);
        }
    }

    SUBCASE("moderate shear keeps lateral faces time-like") {
        const Mesh mesh = build_sheared(g, 16, 4, 0.2, 0.3, true, 5);
        validate_mesh(mesh);
        for (const Element& K : mesh.elements())
            for (int slot = 0; slot < 2; ++slot)
                CHECK(mesh.face(K.lateral[slot]).causal == Causal::Timelike);
    }

    SUBCASE("superluminal shear is rejected") {
        CHECK_THROWS_AS(build_sheared(g, 4, 2, 0.2, 1.5, true, 5), ShearTooLargeError);
    }
}

TEST_CASE("admissibility ratio report") {
    const MetricChart g = make_metric("minkowski");
    const FluxField burgers = make_flux("burgers", g);

    SUBCASE("dt = dx/4 gives ratio 1/2 for |u| <= 1") {
        const Mesh mesh = build_uniform(g, 8, 4, 0.125, 5);
        const auto rep = cfl_report(mesh, burgers, {-1.0, 1.0});
        CHECK(rep.pass);
        CHECK(std::abs(rep.max_ratio - 0.5) <= 1e-12);
        CHECK(rep.per_element.size() == mesh.elements().size());
    }

    SUBCASE("dt = dx doubles past the bound") {
        const Mesh mesh = build_uniform(g, 8, 1, 0.125, 5);
        const auto rep = cfl_report(mesh, burgers, {-1.0, 1.0});
        CHECK_FALSE(rep.pass);
        CHECK(std::abs(rep.max_ratio - 2.0) <= 1e-12);
        CHECK(rep.worst_element >= 0);
    }

    SUBCASE("a u-independent lateral component never constrains the step") {
        const FluxField frozen(
            "frozen_lateral",
            [](double u, const ChartPoint& p) {
                return SpacetimeVector{p, u, 0.3};
            },
            [](double, const ChartPoint& p) {
                return SpacetimeVector{p, 1.0, 0.0};
            },
            {-1.0, 1.0});
        const Mesh mesh = build_uniform(g, 8, 1, 0.125, 5);
        const auto rep = cfl_report(mesh, frozen, {-1.0, 1.0});
        CHECK(rep.pass);
        CHECK(rep.max_ratio == 0.0);
    }

    SUBCASE("degenerate inputs are rejected") {
        const Mesh mesh = build_uniform(g, 4, 1, 0.05, 5);
        CHECK_THROWS_AS(cfl_report(mesh, burgers, {1.0, 1.0}), EmptyRangeError);
        CHECK_THROWS_AS(cfl_report(mesh, burgers, {-1.0, 1.0}, 1), EmptyRangeError);
    }
}

TEST_CASE("deviation from a Cartesian background") {
    const MetricChart g = make_metric("minkowski");

    SUBCASE("uniform refinement family stays at machine level") {
        for (int nx : {8, 16, 32, 64}) {
            const Mesh mesh = build_uniform(g, nx, nx / 4, 0.25, 5);
            const auto rep = cartesian_deviation(mesh);
            CHECK(rep.pass);
            CHECK(rep.eta_normals <= 1e-12);
            CHECK(rep.eta_w <= 1e-12);
            CHECK(rep.aggregate_max <= 1e-12);
        }
    }

    SUBCASE("alternating shear violates the pairwise conditions at every level") {
        for (int nx : {16, 32, 64}) {
            const Mesh mesh = build_sheared(g, nx, nx / 2, 0.25, 0.3, true, 5);
            const auto rep = cartesian_deviation(mesh);
            CHECK_FALSE(rep.pairwise_ok);
            CHECK_FALSE(rep.pass);
            CHECK(std::max(rep.eta_normals, rep.eta_w) >= 0.05);
        }
    }

    SUBCASE("smoothly varying layer thickness is exactly admissible") {
        auto smooth_grid = [](int nt, double T) {
            std::vector<double> ts{0.0};
            for (int j = 0; j < nt; ++j)
                ts.push_back(ts.back() +
                             T / nt * (1.0 + 0.3 * std::sin(2.0 * M_PI * j / nt)));
            return ts;
        };
        for (int nx : {16, 32, 64}) {
            const Mesh mesh = build_nonuniform_time(g, nx, smooth_grid(nx / 2, 0.25), 5);
            const auto rep = cartesian_deviation(mesh);
            CHECK(rep.pass);
            CHECK(std::max(rep.eta_normals, rep.eta_w) <= 1e-12);
        }
    }

    SUBCASE("smooth drift passes and improves under refinement") {
        std::vector<double> etas;
        for (int nx : {16, 32, 64}) {
            const Mesh mesh = build_sheared(g, nx, nx / 2, 0.25, 0.05, false, 5);
            const auto rep = cartesian_deviation(mesh);
            CHECK(rep.pass);
            etas.push_back(std::max(rep.eta_normals, rep.eta_w));
        }
        CHECK(etas[0] > 1e-10);
        CHECK(etas[1] < etas[0]);
        CHECK(etas[2] < etas[1]);
    }

    SUBCASE("uniform expanding-chart meshes pass") {
        const MetricChart flrw = make_metric("flrw_linear");
        const Mesh mesh = build_uniform(flrw, 16, 8, 0.25, 5);
        const auto rep = cartesian_deviation(mesh);
        CHECK(rep.pass);
    }
}

TEST_CASE("mesh files round-trip and reject malformed input") {
    const MetricChart g = make_metric("flrw_linear");
    const Mesh mesh = build_uniform(g, 4, 2, 0.3, 5);
    const std::string path = "roundtrip.mesh";
    write_mesh_file(mesh, path);

    SUBCASE("round trip preserves the geometry") {
        const Mesh back = read_mesh_file(path, g, 5);
        validate_mesh(back);
        REQUIRE(back.elements().size() == mesh.elements().size());
        REQUIRE(back.n_layers() == mesh.n_layers());
        for (const Element& K : mesh.elements()) {
            const Element& B = element_at(back, K.layer, K.pos);
            CHECK(std::abs(K.volume - B.volume) <= 1e-12);
            CHECK(std::abs(K.tau - B.tau) <= 1e-12);
            CHECK(std::abs(mesh.face(K.outflow).measure -
                           back.face(B.outflow).measure) <= 1e-12);
            CHECK(std::abs(mesh.face(K.lateral[0]).measure -
                           back.face(B.lateral[0]).measure) <= 1e-12);
        }
    }

    SUBCASE("sheared meshes survive the round trip too") {
        const MetricChart mink = make_metric("minkowski");
        const Mesh sheared = build_sheared(mink, 8, 2, 0.1, 0.2, true, 5);
        write_mesh_file(sheared, "sheared.mesh");
        const Mesh back = read_mesh_file("sheared.mesh", mink, 5);
        validate_mesh(back);
        CHECK(back.elements().size() == sheared.elements().size());
        for (const Element& K : sheared.elements()) {
            const Element& B = element_at(back, K.layer, K.pos);
            CHECK(std::abs(K.volume - B.volume) <= 1e-12);
        }
        std::remove("sheared.mesh");
    }

    SUBCASE("corrupted files raise parse or validity errors") {
        const std::string text = slurp(path);

        spit("bad1.mesh", "lorfv-mesh 2\n" + text.substr(text.find('\n') + 1));
        CHECK_THROWS_AS(read_mesh_file("bad1.mesh", g, 5), MeshParseError);

        spit("bad2.mesh", text + "banana 1 2\n");
        CHECK_THROWS_AS(read_mesh_file("bad2.mesh", g, 5), MeshParseError);

        const auto vpos = text.find("vertex ");
        const std::string vline = text.substr(vpos, text.find('\n', vpos) - vpos);
        spit("bad3.mesh", text + vline + "\n");
        CHECK_THROWS_AS(read_mesh_file("bad3.mesh", g, 5), MeshParseError);

        // swap one element's inflow/outflow records
        std::string mutated = text;
        const auto epos = mutated.find("element ");
        const auto eend = mutated.find('\n', epos);
        std::istringstream es(mutated.substr(epos, eend - epos));
        std::string tag;
        int id, fi, fo, l0, l1;
        es >> tag >> id >> fi >> fo >> l0 >> l1;
        std::ostringstream swapped;
        swapped << "element " << id << " " << fo << " " << fi << " " << l0 << " " << l1;
        mutated.replace(epos, eend - epos, swapped.str());
        spit("bad4.mesh", mutated);
        CHECK_THROWS_AS(read_mesh_file("bad4.mesh", g, 5), MeshInvalidError);

        // drop every slice record
        std::string noslice;
        std::istringstream lines(text);
        for (std::string line; std::getline(lines, line);)
            if (line.rfind("slice", 0) != 0) noslice += line + "\n";
        spit("bad5.mesh", noslice);
        CHECK_THROWS_AS(read_mesh_file("bad5.mesh", g, 5), MeshParseError);

        CHECK_THROWS_AS(read_mesh_file("does_not_exist.mesh", g, 5), MeshParseError);

        for (const char* p : {"bad1.mesh", "bad2.mesh", "bad3.mesh", "bad4.mesh",
                              "bad5.mesh"})
            std::remove(p);
    }

    validate_mesh(mesh);
    std::remove(path.c_str());
}
