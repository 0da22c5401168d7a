#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "lorfv/entropy.hpp"
#include "oracles.hpp"

using namespace lorfv;

namespace {

const Element& element_at(const Mesh& mesh, int layer, int pos) {
    for (const Element& K : mesh.elements())
        if (K.layer == layer && K.pos == pos) return K;
    FAIL("no element at requested layer/pos");
    return mesh.elements().front();
}

double step_fn(double x) { return x < 0.5 ? 1.0 : 0.0; }

} // namespace

TEST_CASE("entropy pairs and their derivatives") {
    SUBCASE("Kruzkov family") {
        const EntropyPair p = EntropyPair::kruzkov(0.5);
        CHECK(p.name == "kruzkov(0.5)");
        CHECK(p.U(0.7) == doctest::Approx(0.2).epsilon(1e-14));
        CHECK(p.U(0.5) == 0.0);
        CHECK(p.U_prime(0.7) == 1.0);
        CHECK(p.U_prime(0.3) == -1.0);
        CHECK(p.U_prime(0.5) == 0.0);
        CHECK(p.U_second(0.7) == 0.0);
        CHECK(p.base() == 0.5);
        REQUIRE(p.kinks().size() == 1);
        CHECK(p.kinks()[0] == 0.5);
    }

    SUBCASE("quadratic window with linear continuation") {
        const EntropyPair p = EntropyPair::quadratic({-1.0, 1.0});
        CHECK(p.name == "quadratic[-1,1]");
        CHECK(p.base() == 0.0);
        CHECK(p.U(0.6) == doctest::Approx(0.18).epsilon(1e-14));
        CHECK(p.U(2.0) == doctest::Approx(1.5).epsilon(1e-14));
        CHECK(p.U(-2.0) == doctest::Approx(1.5).epsilon(1e-14));
        CHECK(p.U_prime(0.25) == 0.25);
        CHECK(p.U_prime(1.7) == 1.0);
        CHECK(p.U_prime(-3.0) == -1.0);
        CHECK(p.U_second(0.5) == 1.0);
        CHECK(p.U_second(1.5) == 0.0);
        REQUIRE(p.kinks().size() == 2);
        CHECK(p.kinks()[0] == -1.0);
        CHECK(p.kinks()[1] == 1.0);

        const EntropyPair q = EntropyPair::quadratic({0.0, 1.0});
        CHECK(q.base() == 0.5);
        CHECK(q.U(1.0) == doctest::Approx(0.125).epsilon(1e-14));
        CHECK(q.U_prime(0.75) == 0.25);
    }

    SUBCASE("degenerate windows are rejected") {
        CHECK_THROWS_AS(EntropyPair::quadratic({0.3, 0.3}), EmptyRangeError);
        CHECK_THROWS_AS(EntropyPair::quadratic({1.0, -1.0}), EmptyRangeError);
    }
}

TEST_CASE("entropy face fluxes") {
    const MetricChart mink = make_metric("minkowski");
    const FluxField burgers = make_flux("burgers", mink);
    const Mesh mesh = build_uniform(mink, 4, 1, 0.1, 5);
    const Element& K = element_at(mesh, 0, 0);

    SUBCASE("Kruzkov closed form on space-like faces") {
        CHECK(kruzkov_face_flux(mesh, burgers, K.inflow, 0.4, 0.4) == 0.0);
        CHECK(std::abs(kruzkov_face_flux(mesh, burgers, K.inflow, 1.0, 0.0) - 1.0) <=
              1e-14);
        const EntropyPair p = EntropyPair::kruzkov(0.25);
        CHECK(entropy_face_flux(mesh, burgers, p, K.inflow, 0.8) ==
              kruzkov_face_flux(mesh, burgers, K.inflow, 0.8, 0.25));
    }

    SUBCASE("Kruzkov flux on lateral faces, with its u <-> lambda symmetry") {
        const int fid = K.lateral[1];
        std::mt19937 rng(41);
        std::uniform_real_distribution<double> dist(-1.0, 1.0);
        for (int i = 0; i < 100; ++i) {
            const double u = dist(rng), lambda = dist(rng);
            const double got = kruzkov_face_flux(mesh, burgers, fid, u, lambda);
            const double sg = u > lambda ? 1.0 : (u < lambda ? -1.0 : 0.0);
            const double expect = sg * 0.5 * (u * u - lambda * lambda);
            CHECK(std::abs(got - expect) <= 1e-13);
            CHECK(got == kruzkov_face_flux(mesh, burgers, fid, lambda, u));
        }
    }

    SUBCASE("quadratic flux reduces to U on an identity face average") {
        const EntropyPair p = EntropyPair::quadratic({-1.0, 1.0});
        for (double u : {-0.8, 0.3, 0.6})
            CHECK(std::abs(entropy_face_flux(mesh, burgers, p, K.inflow, u) - p.U(u)) <=
                  1e-12);
        CHECK(std::abs(entropy_face_flux(mesh, burgers, p, K.inflow, 1.5) - 1.0) <=
              1e-12);
    }
}

TEST_CASE("face entropy transforms") {
    const MetricChart mink = make_metric("minkowski");
    const FluxField burgers = make_flux("burgers", mink);
    const Mesh flat = build_uniform(mink, 4, 1, 0.1, 5);

    const MetricChart flrw = make_metric("flrw_linear");
    const FluxField compat = make_flux("flrw_compatible", flrw);
    const Mesh curved = build_uniform(flrw, 4, 1, 1.0, 5);
    const int out_face = element_at(curved, 0, 0).outflow;

    SUBCASE("Kruzkov closed form equals the quadrature route") {
        const FaceEntropyTransform V(curved, compat, EntropyPair::kruzkov(0.3),
                                     out_face);
        for (int i = 0; i < 64; ++i) {
            const double m = -0.45 + 0.9 * i / 63.0;
            CHECK(std::abs(V(m) - std::abs(m - 0.15)) <= 1e-12);
            CHECK(std::abs(V(m) - V.by_quadrature(m)) <= 1e-10);
        }
        CHECK(V.convexity_modulus() == 0.0);
    }

    SUBCASE("quadratic transform on a contracting face average") {
        const FaceEntropyTransform V(curved, compat,
                                     EntropyPair::quadratic({-1.0, 1.0}), out_face);
        CHECK(std::abs(V.convexity_modulus() - 2.0) <= 1e-10);
        CHECK(std::abs(V(mu_past(curved, compat, out_face, 0.0))) <= 1e-11);
        double prev = 0.0, prev_diff = 0.0;
        for (int i = 0; i < 33; ++i) {
            const double m = -0.45 + 0.9 * i / 32.0;
            const double v = V(m);
            CHECK(std::abs(v - m * m) <= 1e-10);
            if (i >= 1) {
                const double diff = v - prev;
                if (i >= 2) CHECK(diff - prev_diff >= -1e-10);
                prev_diff = diff;
            }
            prev = v;
        }
    }

    SUBCASE("flat chart values") {
        const int fin = element_at(flat, 0, 0).inflow;
        const FaceEntropyTransform V(flat, burgers, EntropyPair::quadratic({-1.0, 1.0}),
                                     fin);
        CHECK(std::abs(V(0.4) - 0.08) <= 1e-11);
        CHECK(std::abs(V.convexity_modulus() - 1.0) <= 1e-12);
    }

    SUBCASE("lateral faces are rejected") {
        const Element& K = element_at(flat, 0, 0);
        CHECK_THROWS_AS(FaceEntropyTransform(flat, burgers,
                                             EntropyPair::kruzkov(0.0), K.lateral[0]),
                        MeshInvalidError);
    }
}

TEST_CASE("discrete entropy fluxes across lateral faces") {
    const MetricChart mink = make_metric("minkowski");
    const FluxField burgers = make_flux("burgers", mink);
    const Mesh mesh = build_uniform(mink, 4, 1, 0.1, 5);
    const LaxFriedrichs lf(mesh, burgers, 1.0, 129);
    MuCache cache(mesh, burgers);
    const Element& K = element_at(mesh, 0, 1);
    const double D = lf.coefficient(K.lateral[1]);
    REQUIRE(std::abs(D - 1.25) <= 1e-12);

    SUBCASE("vanishes when everything sits at lambda") {
        CHECK(kruzkov_Q(cache, lf, K, 1, 0.4, 0.4, 0.4) == 0.0);
        CHECK(kruzkov_Q(cache, lf, K, 0, 0.4, 0.4, 0.4) == 0.0);
    }

    SUBCASE("frozen value for the split state") {
        CHECK(oracle::kruzkov_Q_right(1.0, 0.0, 0.5, 1.25) == 0.25);
        CHECK(std::abs(kruzkov_Q(cache, lf, K, 1, 1.0, 0.0, 0.5) - 0.25) <= 1e-14);
    }

    SUBCASE("consistency against the face entropy flux") {
        for (int slot = 0; slot < 2; ++slot)
            for (double u : {0.2, 0.8})
                for (double lambda : {0.6, 0.3}) {
                    const double q = kruzkov_Q(cache, lf, K, slot, u, u, lambda);
                    const double fq =
                        K.lateral_sign[slot] *
                        kruzkov_face_flux(mesh, burgers, K.lateral[slot], u, lambda);
                    CHECK(std::abs(q - fq) <= 1e-15);
                }
    }

    SUBCASE("conservation across the shared face") {
        const Element& KN = mesh.element(K.lateral_neighbor[1]);
        std::mt19937 rng(53);
        std::uniform_real_distribution<double> dist(-1.0, 1.0);
        for (int i = 0; i < 50; ++i) {
            const double u = dist(rng), v = dist(rng), lambda = dist(rng);
            const double from_k = kruzkov_Q(cache, lf, K, 1, u, v, lambda);
            const double from_n = kruzkov_Q(cache, lf, KN, 0, v, u, lambda);
            CHECK(std::abs(from_k + from_n) <= 1e-15);
        }
    }

    SUBCASE("quadratic flux is the averaged Kruzkov flux") {
        const EntropyPair pair = EntropyPair::quadratic({-1.0, 1.0});
        const double u = 0.7, v = -0.2;
        const double right = entropy_Q(cache, lf, K, 1, u, v, pair);
        const double right_ref =
            0.5 * oracle::integrate(
                      [&](double l) { return oracle::kruzkov_Q_right(u, v, l, D); },
                      -1.0, 1.0);
        CHECK(std::abs(right - right_ref) <= 1e-10);
        const double left = entropy_Q(cache, lf, K, 0, u, v, pair);
        const double left_ref =
            0.5 * oracle::integrate(
                      [&](double l) { return oracle::kruzkov_Q_left(u, v, l, D); },
                      -1.0, 1.0);
        CHECK(std::abs(left - left_ref) <= 1e-10);
        CHECK(entropy_Q(cache, lf, K, 1, u, v, EntropyPair::kruzkov(0.1)) ==
              kruzkov_Q(cache, lf, K, 1, u, v, 0.1));
    }
}

TEST_CASE("per-cell entropy residuals") {
    const MetricChart mink = make_metric("minkowski");
    const FluxField burgers = make_flux("burgers", mink);
    const Mesh mesh = build_uniform(mink, 4, 1, 0.1, 5);
    const LaxFriedrichs lf(mesh, burgers, 1.0, 129);
    MuCache cache(mesh, burgers);
    const Element& K = element_at(mesh, 0, 1);

    SUBCASE("constant states are exactly neutral") {
        const CellResidual r =
            cell_entropy_residual(cache, lf, K, 0.4, {0.4, 0.4},
                                  EntropyPair::kruzkov(0.1));
        CHECK(r.L[0] == 0.0);
        CHECK(r.L[1] == 0.0);
        CHECK(std::abs(r.jensen) <= 1e-15);
        CHECK(std::abs(r.R[0]) <= 1e-14);
        CHECK(std::abs(r.R[1]) <= 1e-14);
        CHECK(r.worst() <= 1e-15);

        const MetricChart flrw = make_metric("flrw_linear");
        const FluxField compat = make_flux("flrw_compatible", flrw);
        const Mesh curved = build_uniform(flrw, 4, 1, 0.2, 5);
        const LaxFriedrichs clf(curved, compat);
        MuCache ccache(curved, compat);
        const CellResidual rc =
            cell_entropy_residual(ccache, clf, element_at(curved, 0, 1), 0.3,
                                  {0.3, 0.3}, EntropyPair::kruzkov(0.1));
        CHECK(rc.L[0] == 0.0);
        CHECK(rc.L[1] == 0.0);
        CHECK(std::abs(rc.R[0]) <= 1e-14);
        CHECK(rc.worst() <= 1e-14);
    }

    SUBCASE("split state against the reference computation") {
        const std::array<double, 4> u{1.0, 1.0, 0.0, 0.0};
        for (int j = 0; j < 4; ++j) {
            const double uj = u[static_cast<std::size_t>(j)];
            const double vl = u[static_cast<std::size_t>((j + 3) % 4)];
            const double vr = u[static_cast<std::size_t>((j + 1) % 4)];
            const Element& E = element_at(mesh, 0, j);
            const auto ld = lateral_decomposition(cache, lf, E, uj, {vl, vr});
            const auto ref = oracle::cell_entropy_kruzkov(uj, vl, vr, 0.5, 0.25, 0.1,
                                                          1.25);
            CHECK(std::abs(ld.mu_tilde[0] - ref.mu_tilde[0]) <= 1e-13);
            CHECK(std::abs(ld.mu_tilde[1] - ref.mu_tilde[1]) <= 1e-13);
            const CellResidual r = cell_entropy_residual(cache, lf, E, uj, {vl, vr},
                                                         EntropyPair::kruzkov(0.5));
            CHECK(std::abs(r.L[0] - ref.L[0]) <= 1e-12);
            CHECK(std::abs(r.L[1] - ref.L[1]) <= 1e-12);
            CHECK(std::abs(r.R[0]) <= 1e-13);
            CHECK(std::abs(r.R[1]) <= 1e-13);
            CHECK(r.worst() <= 1e-10);
        }
    }

    SUBCASE("the update operator is monotone in each argument") {
        const double delta = 1e-6;
        for (double u : {-0.5, 0.2, 0.8})
            for (double v : {-0.7, 0.4}) {
                const auto base = lateral_decomposition(cache, lf, K, u, {v, v});
                const auto du = lateral_decomposition(cache, lf, K, u + delta, {v, v});
                const auto dv =
                    lateral_decomposition(cache, lf, K, u, {v + delta, v + delta});
                for (int s = 0; s < 2; ++s) {
                    CHECK(du.mu_tilde[s] - base.mu_tilde[s] >= -1e-10);
                    CHECK(dv.mu_tilde[s] - base.mu_tilde[s] >= -1e-10);
                }
                CHECK(base.mu_tilde[0] == cache.plus(K, u) -
                                              (K.lateral_measure /
                                               mesh.face(K.outflow).measure) *
                                                  (base.q_uv[0] - base.q_uu[0]));
            }
        const auto same = lateral_decomposition(cache, lf, K, 0.6, {0.6, 0.6});
        CHECK(same.mu_tilde[0] == cache.plus(K, 0.6));
        CHECK(same.mu_tilde[1] == cache.plus(K, 0.6));
    }

    SUBCASE("randomized admissible states keep every residual nonpositive") {
        std::mt19937 rng(67);
        std::uniform_real_distribution<double> dist(-1.0, 1.0);
        std::uniform_real_distribution<double> frac(0.0, 1.0);
        for (int trial = 0; trial < 1000; ++trial) {
            const double u = dist(rng);
            const std::array<double, 2> v{dist(rng), dist(rng)};
            const double lo = std::min({u, v[0], v[1]});
            const double hi = std::max({u, v[0], v[1]});
            const double lambda = lo + frac(rng) * (hi - lo);
            const CellResidual r = cell_entropy_residual(cache, lf, K, u, v,
                                                         EntropyPair::kruzkov(lambda));
            CHECK(r.worst() <= 1e-10);
            if (hi - lo > 1e-6 && trial % 4 == 0) {
                const CellResidual rq = cell_entropy_residual(
                    cache, lf, K, u, v, EntropyPair::quadratic({lo, hi}));
                CHECK(rq.worst() <= 1e-10);
            }
        }
    }
}

TEST_CASE("lambda grids from trajectories") {
    const MetricChart mink = make_metric("minkowski");
    const FluxField burgers = make_flux("burgers", mink);
    const Mesh mesh = build_uniform(mink, 8, 2, 0.0625, 5);
    const Trajectory traj = run(mesh, burgers, step_fn);

    double lo = 1e300, hi = -1e300;
    for (const SliceState& s : traj.states)
        for (double u : s.u) {
            lo = std::min(lo, u);
            hi = std::max(hi, u);
        }

    SUBCASE("quantile grid spans the data") {
        const std::vector<double> grid = make_lambda_grid(traj, 7);
        REQUIRE(grid.size() >= 2);
        CHECK(grid.size() <= 7);
        CHECK(grid.front() == lo);
        CHECK(grid.back() == hi);
        CHECK(std::is_sorted(grid.begin(), grid.end()));
        CHECK(std::adjacent_find(grid.begin(), grid.end()) == grid.end());
    }

    SUBCASE("uniform grid has the exact count and spacing") {
        const std::vector<double> grid = make_lambda_grid(traj, 5, false);
        REQUIRE(grid.size() == 5);
        CHECK(grid.front() == lo);
        CHECK(grid.back() == hi);
        for (int k = 0; k < 5; ++k)
            CHECK(std::abs(grid[static_cast<std::size_t>(k)] -
                           (lo + (hi - lo) * k / 4.0)) <= 1e-15);
    }

    SUBCASE("degenerate data collapses to one point") {
        const Trajectory c = run(mesh, burgers, [](double) { return 0.25; });
        const std::vector<double> grid = make_lambda_grid(c, 9);
        REQUIRE(grid.size() == 1);
        CHECK(std::abs(grid[0] - 0.25) <= 1e-14);
        CHECK(make_lambda_grid(traj, 1).size() == 1);
    }

    SUBCASE("empty requests are rejected") {
        CHECK_THROWS_AS(make_lambda_grid(traj, 0), EmptyGridError);
        CHECK_THROWS_AS(make_lambda_grid(Trajectory{}, 5), EmptyGridError);
    }
}

TEST_CASE("entropy residual reports over full runs") {
    const MetricChart mink = make_metric("minkowski");
    const FluxField burgers = make_flux("burgers", mink);
    const Mesh mesh = build_uniform(mink, 16, 16, 0.25, 5);
    const LaxFriedrichs lf(mesh, burgers);
    const Trajectory traj = run(mesh, burgers, step_fn);

    SUBCASE("a single Kruzkov pair") {
        const EntropyReport rep =
            entropy_residual_report(mesh, burgers, lf, traj, EntropyPair::kruzkov(0.5));
        CHECK(rep.pass);
        CHECK(rep.max_residual <= rep.tol);
        CHECK(rep.per_layer.size() == 16);
        CHECK(rep.worst_layer >= 0);
        CHECK(rep.worst_element >= 0);
        CHECK(rep.pair_name == "kruzkov(0.5)");
        REQUIRE(rep.lambda_grid.size() == 1);
        CHECK(rep.lambda_grid[0] == 0.5);
        CHECK(rep.max_remainder <= 1e-12);
    }

    SUBCASE("a whole lambda grid at once") {
        const std::vector<double> grid = make_lambda_grid(traj, 9);
        const EntropyReport rep = entropy_residual_report(mesh, burgers, lf, traj, grid);
        CHECK(rep.pass);
        CHECK(rep.lambda_grid.size() == grid.size());
        CHECK(rep.pair_name.find("kruzkov sweep") != std::string::npos);
    }

    SUBCASE("a quadratic pair over the data hull") {
        const EntropyReport rep = entropy_residual_report(
            mesh, burgers, lf, traj, EntropyPair::quadratic({0.0, 1.0}));
        CHECK(rep.pass);
    }

    SUBCASE("truncated trajectories are refused") {
        RunOptions opt;
        opt.keep_states = false;
        const Trajectory no_states = run(mesh, burgers, step_fn, opt);
        CHECK_THROWS_AS(entropy_residual_report(mesh, burgers, lf, no_states,
                                                EntropyPair::kruzkov(0.5)),
                        BadDimensionsError);
        CHECK_THROWS_AS(
            entropy_residual_report(mesh, burgers, lf, traj, std::vector<double>{}),
            EmptyGridError);
    }
}

TEST_CASE("dissipation accounting") {
    const MetricChart mink = make_metric("minkowski");
    const FluxField burgers = make_flux("burgers", mink);

    SUBCASE("constant runs do not dissipate") {
        const Mesh mesh = build_uniform(mink, 8, 4, 0.125, 5);
        const Trajectory traj = run(mesh, burgers, [](double) { return 0.4; });
        const LaxFriedrichs lf(mesh, burgers);
        const DissipationReport rep = dissipation_report(
            mesh, burgers, lf, traj, EntropyPair::quadratic({-1.0, 1.0}));
        CHECK(rep.total <= 1e-24);
        for (double l : rep.per_layer) {
            CHECK(l >= 0.0);
            CHECK(l <= 1e-24);
        }
        CHECK(std::abs(rep.beta - 1.0) <= 1e-12);
        CHECK(rep.bound_applicable);
        CHECK(rep.entropy_final <= rep.entropy_initial + 1e-12);
    }

    SUBCASE("Kruzkov pairs refuse the quantitative certificate") {
        const Mesh mesh = build_uniform(mink, 8, 4, 0.125, 5);
        const Trajectory traj = run(mesh, burgers, step_fn);
        const LaxFriedrichs lf(mesh, burgers);
        const DissipationReport rep =
            dissipation_report(mesh, burgers, lf, traj, EntropyPair::kruzkov(0.2));
        CHECK(rep.beta == 0.0);
        CHECK_FALSE(rep.bound_applicable);
        CHECK(rep.note.find("refused") != std::string::npos);
    }

    SUBCASE("shock tubes dissipate a bounded positive amount") {
        const Mesh mesh = build_uniform(mink, 16, 16, 0.25, 5);
        const Trajectory traj = run(mesh, burgers, step_fn);
        const LaxFriedrichs lf(mesh, burgers);
        const DissipationReport rep = dissipation_report(
            mesh, burgers, lf, traj, EntropyPair::quadratic({0.0, 1.0}));
        CHECK(rep.total > 0.0);
        CHECK(std::abs(rep.t_final - traj.states.back().t) <= 1e-15);
        CHECK(std::abs(rep.per_time - rep.total / rep.t_final) <= 1e-15);
        double sum = 0.0;
        for (double l : rep.per_layer) {
            CHECK(l >= 0.0);
            sum += l;
        }
        CHECK(std::abs(sum - rep.total) <= 1e-14 * (1.0 + rep.total));
        CHECK(rep.entropy_final <= rep.entropy_initial + 1e-12);

        double lo = 1e300, hi = -1e300;
        for (const SliceState& s : traj.states)
            for (double u : s.u) {
                lo = std::min(lo, u);
                hi = std::max(hi, u);
            }
        const DissipationReport hull = dissipation_report(
            mesh, burgers, lf, traj, EntropyPair::quadratic({lo, hi}));
        CHECK(dissipation_total(mesh, burgers, lf, traj) == hull.total);
    }

    SUBCASE("refinement shrinks the total") {
        std::vector<double> totals;
        for (int nx : {16, 32, 64}) {
            const Mesh mesh = build_uniform(mink, nx, nx, 0.25, 5);
            const Trajectory traj = run(mesh, burgers, [](double x) {
                return 0.5 * std::sin(2.0 * M_PI * x);
            });
            const LaxFriedrichs lf(mesh, burgers);
            totals.push_back(dissipation_total(mesh, burgers, lf, traj));
        }
        CHECK(totals[0] > totals[1]);
        CHECK(totals[1] > totals[2]);
    }
}

TEST_CASE("supremum growth envelope") {
    const MetricChart mink = make_metric("minkowski");
    const FluxField burgers = make_flux("burgers", mink);

    SUBCASE("flat compatible runs sit below a constant bound") {
        const Mesh mesh = build_uniform(mink, 16, 16, 0.25, 5);
        const Trajectory traj = run(mesh, burgers, step_fn);
        const EnvelopeReport rep = linfty_envelope(mesh, burgers, traj);
        CHECK(rep.pass);
        CHECK(rep.min_margin >= 0.0);
        CHECK(rep.constants.c1 == 0.0);
        CHECK(rep.constants.c2 == 0.0);
        CHECK(std::abs(rep.lip_inverse - 1.0) <= 1e-12);
        REQUIRE(rep.slices.size() == traj.states.size());
        const double m0 = max_abs(traj.states.front());
        CHECK(std::abs(rep.slices.back().bound - (m0 + 1e-10)) <= 1e-14);
    }

    SUBCASE("incompatible backgrounds get a growing but valid bound") {
        const MetricChart flrw = make_metric("flrw_linear");
        const FluxField f = make_flux("burgers", flrw);
        const Mesh mesh = build_uniform(flrw, 16, 16, 0.5, 5);
        const Trajectory traj = run(mesh, f, [](double x) {
            return 0.4 * std::sin(2.0 * M_PI * x);
        });
        const EnvelopeReport rep = linfty_envelope(mesh, f, traj);
        CHECK(rep.pass);
        CHECK(std::abs(rep.constants.c2 - 1.0) <= 1e-9);
        CHECK(rep.slices.back().bound > rep.slices.front().bound);
    }

    SUBCASE("truncated trajectories are refused") {
        const Mesh mesh = build_uniform(mink, 8, 2, 0.03125, 5);
        RunOptions opt;
        opt.keep_states = false;
        const Trajectory traj = run(mesh, burgers, step_fn, opt);
        CHECK_THROWS_AS(linfty_envelope(mesh, burgers, traj), BadDimensionsError);
    }
}

TEST_CASE("test functions and the global inequality") {
    const MetricChart mink = make_metric("minkowski");
    const FluxField burgers = make_flux("burgers", mink);
    const Mesh mesh = build_uniform(mink, 16, 8, 0.125, 5);
    const LaxFriedrichs lf(mesh, burgers);
    const Trajectory traj = run(mesh, burgers, step_fn);

    SUBCASE("bump family support and positivity") {
        const std::vector<TestFunction> bumps = bump_family(mesh, 5);
        REQUIRE(bumps.size() == 5);
        for (std::size_t i = 0; i < bumps.size(); ++i)
            for (std::size_t j = i + 1; j < bumps.size(); ++j)
                CHECK(bumps[i].name != bumps[j].name);
        for (const TestFunction& phi : bumps) {
            for (int it = 0; it <= 16; ++it)
                for (int ix = 0; ix <= 16; ++ix)
                    CHECK(phi.value({0.125 * it / 16.0, ix / 16.0}) >= 0.0);
            for (int kid : mesh.layer(mesh.n_layers() - 1)) {
                const Element& K = mesh.element(kid);
                for (const FaceNode& nd : mesh.face(K.outflow).nodes)
                    CHECK(phi.value(nd.p) == 0.0);
                for (int s = 0; s < 2; ++s)
                    for (const FaceNode& nd : mesh.face(K.lateral[s]).nodes)
                        CHECK(phi.value(nd.p) == 0.0);
            }
        }
        CHECK_THROWS_AS(bump_family(mesh, 0), EmptyGridError);
        const Mesh shallow = build_uniform(mink, 8, 1, 0.01, 5);
        CHECK_THROWS_AS(bump_family(shallow, 3), BadDimensionsError);
    }

    SUBCASE("the zero test function gives the trivial identity") {
        TestFunction zero{"zero", [](ChartPoint) { return 0.0; }};
        const GlobalEntropyReport rep = global_entropy_functional(
            mesh, burgers, lf, traj, zero, EntropyPair::kruzkov(0.5));
        CHECK(rep.lhs == 0.0);
        CHECK(rep.rhs == 0.0);
        CHECK(rep.pass);
    }

    SUBCASE("constant states make the inequality an identity") {
        const Trajectory sto = run(mesh, burgers, [](double) { return 0.3; });
        const std::vector<TestFunction> bumps = bump_family(mesh, 1);
        const GlobalEntropyReport rep = global_entropy_functional(
            mesh, burgers, lf, sto, bumps[0], EntropyPair::kruzkov(0.1));
        CHECK(rep.pass);
        CHECK(std::abs(rep.slack) <= rep.tol);
    }

    SUBCASE("shock tube satisfies the inequality for both pair kinds") {
        const std::vector<TestFunction> bumps = bump_family(mesh, 3);
        const GlobalEntropyReport kr = global_entropy_functional(
            mesh, burgers, lf, traj, bumps[0], EntropyPair::kruzkov(0.5));
        CHECK(kr.pass);
        CHECK(kr.slack >= -kr.tol);
        MESSAGE("kruzkov slack = ", kr.slack, " scale = ", kr.scale);
        const GlobalEntropyReport qu = global_entropy_functional(
            mesh, burgers, lf, traj, bumps[1], EntropyPair::quadratic({0.0, 1.0}));
        CHECK(qu.pass);
        MESSAGE("quadratic slack = ", qu.slack);
    }

    SUBCASE("batch evaluation matches one-at-a-time evaluation") {
        const std::vector<TestFunction> bumps = bump_family(mesh, 3);
        const std::vector<GlobalEntropyReport> batch = global_entropy_functional(
            mesh, burgers, lf, traj, bumps, EntropyPair::kruzkov(0.4));
        REQUIRE(batch.size() == 3);
        for (std::size_t b = 0; b < 3; ++b) {
            const GlobalEntropyReport single = global_entropy_functional(
                mesh, burgers, lf, traj, bumps[b], EntropyPair::kruzkov(0.4));
            CHECK(std::abs(batch[b].lhs - single.lhs) <= 1e-15);
            CHECK(std::abs(batch[b].rhs - single.rhs) <= 1e-15);
            CHECK(std::abs(batch[b].slack - single.slack) <= 1e-15);
            CHECK(batch[b].phi_name == bumps[b].name);
        }
    }

    SUBCASE("unsupported test functions are rejected") {
        TestFunction one{"one", [](ChartPoint) { return 1.0; }};
        CHECK_THROWS_AS(global_entropy_functional(mesh, burgers, lf, traj, one,
                                                  EntropyPair::kruzkov(0.5)),
                        UnsupportedPhiError);
        TestFunction neg{"neg", [](ChartPoint p) { return p.t < 0.06 ? -1.0 : 0.0; }};
        CHECK_THROWS_AS(global_entropy_functional(mesh, burgers, lf, traj, neg,
                                                  EntropyPair::kruzkov(0.5)),
                        UnsupportedPhiError);
    }
}
