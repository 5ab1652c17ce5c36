#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Dense>

#include "ionbeat/bloch.hpp"
#include "ionbeat/errors.hpp"

using namespace ionbeat;

namespace {

const LevelScheme scheme;

// RK4 one-step propagator of d rho/dt = L rho, squared `doublings` times:
// rho(2^doublings h) from rho(0). The stationary vector of L is a fixed point
// of the RK4 polynomial, so the long-time limit is the steady state.
Eigen::VectorXcd propagate(const Eigen::MatrixXcd& l, const Eigen::VectorXcd& rho0, double h,
                           int doublings) {
    const Eigen::MatrixXcd a = h * l;
    const Eigen::MatrixXcd id = Eigen::MatrixXcd::Identity(l.rows(), l.cols());
    const Eigen::MatrixXcd a2 = a * a;
    Eigen::MatrixXcd p = id + a + a2 / 2.0 + a2 * a / 6.0 + a2 * a2 / 24.0;
    for (int i = 0; i < doublings; ++i) p = p * p;
    return p * rho0;
}

double rk4_step() { return 0.01 / scheme.gamma_total(); }

Matrix8c ground_mixture() {
    Matrix8c rho = Matrix8c::Zero();
    rho(0, 0) = 0.5;
    rho(1, 1) = 0.5;
    return rho;
}

BlochParameters random_parameters(std::mt19937& rng) {
    std::uniform_real_distribution<double> d493(-40e6, -5e6), d650(-20e6, 20e6), i493(200.0, 4000.0),
        i650(200.0, 4000.0), b(1e-4, 5e-4);
    BlochParameters p;
    p.detuning_493 = angular(d493(rng));
    p.detuning_650 = angular(d650(rng));
    p.intensity_493 = i493(rng);
    p.intensity_650 = i650(rng);
    p.b_field = b(rng);
    return p;
}

std::vector<double> p_scan(const BlochModel& model, const BlochParameters& base, ScanAxis axis,
                           const std::vector<double>& grid) {
    std::vector<double> out;
    for (const auto& pt : model.excitation_spectrum(base, axis, grid)) {
        REQUIRE(pt.p_population.has_value());
        out.push_back(*pt.p_population);
    }
    return out;
}

std::vector<double> linspace(double a, double b, int n) {
    std::vector<double> g(n);
    for (int i = 0; i < n; ++i) g[i] = a + (b - a) * i / (n - 1);
    return g;
}

}  // namespace

TEST_CASE("default geometry") {
    const ExperimentGeometry g;
    CHECK(std::abs(g.b_direction.dot(g.laser_k)) < 1e-15);
    CHECK(std::abs(g.b_direction.dot(g.laser_polarization)) < 1e-15);
    CHECK(std::abs(g.detection_k.dot(g.laser_k)) < 1e-15);
    CHECK(g.detection_k.cross(g.b_direction).norm() < 1e-15);
    CHECK_NOTHROW(g.validate());

    const auto eps = spherical_components(g.laser_polarization, g.b_direction);
    CHECK(std::abs(eps[1]) < 1e-15);
    CHECK(std::abs(eps[0]) == doctest::Approx(std::sqrt(0.5)));
    CHECK(std::abs(eps[2]) == doctest::Approx(std::sqrt(0.5)));

    ExperimentGeometry bad = g;
    bad.laser_polarization = g.laser_k;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("spherical components preserve the norm") {
    std::mt19937 rng(2);
    std::normal_distribution<double> n;
    for (int i = 0; i < 100; ++i) {
        const Eigen::Vector3d v(n(rng), n(rng), n(rng));
        const Eigen::Vector3d axis = Eigen::Vector3d(n(rng), n(rng), n(rng)).normalized();
        const auto c = spherical_components(v, axis);
        double norm2 = 0.0;
        for (const auto& x : c) norm2 += std::norm(x);
        CHECK(norm2 == doctest::Approx(v.squaredNorm()).epsilon(1e-12));
        CHECK(std::abs(c[1]) == doctest::Approx(std::abs(v.dot(axis))).epsilon(1e-12));
    }
}

TEST_CASE("Liouvillian preserves the trace") {
    std::mt19937 rng(7);
    std::normal_distribution<double> n;
    const BlochModel model;
    for (int trial = 0; trial < 5; ++trial) {
        const auto l = model.liouvillian(random_parameters(rng)).matrix;
        Eigen::MatrixXcd x(num_levels, num_levels);
        for (int i = 0; i < num_levels; ++i)
            for (int j = 0; j < num_levels; ++j) x(i, j) = {n(rng), n(rng)};
        const Matrix8c rho = x * x.adjoint();
        const Matrix8c out = unvectorize(l * vectorize(rho));
        CHECK(std::abs(out.trace()) <= 1e-10 * l.norm() * rho.norm());
    }
}

TEST_CASE("without light every lower-state population is stationary") {
    BlochParameters p;
    p.intensity_493 = 0.0;
    p.intensity_650 = 0.0;
    const BlochModel model;
    const auto l = model.liouvillian(p).matrix;
    std::mt19937 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix8c rho = Matrix8c::Zero();
    for (int i : {0, 1, 4, 5, 6, 7}) rho(i, i) = u(rng);
    rho /= rho.trace();
    CHECK((l * vectorize(rho)).norm() <= 1e-12 * l.norm());

    CHECK_THROWS_AS(steady_state(model.liouvillian(p)), NonUniqueSteadyState);
    try {
        steady_state(model.liouvillian(p));
    } catch (const NonUniqueSteadyState& e) {
        CHECK(e.null_dimension() > 1);
    }
}

TEST_CASE("optical pumping into D3/2 without the repumper") {
    BlochParameters p;
    p.intensity_650 = 0.0;
    const BlochModel model;
    const auto l = model.liouvillian(p).matrix;
    const Eigen::VectorXcd rho = propagate(l, vectorize(ground_mixture()), rk4_step(), 22);
    const DensityMatrix final{unvectorize(rho)};
    CHECK(final.population(Term::D32) > 1.0 - 1e-6);
    CHECK_THROWS_AS(model.p_population(p), NumericalError);
}

TEST_CASE("no 493 light leaves no unique steady state") {
    BlochParameters p;
    p.intensity_493 = 0.0;
    CHECK_THROWS_AS(BlochModel().p_population(p), NumericalError);
}

TEST_CASE("two lasers on one transition are rejected") {
    LaserField a, b;
    a.intensity = b.intensity = 100.0;
    const std::vector<LaserField> lasers{a, b};
    CHECK_THROWS_AS(build_liouvillian(scheme, lasers, 1e-4, {}), ConfigError);
}

TEST_CASE("steady state at the default operating point matches time integration") {
    const BlochModel model;
    const BlochParameters p;
    const auto l = model.liouvillian(p).matrix;
    const DensityMatrix ss = model.steady_state(p);
    const Matrix8c late = unvectorize(propagate(l, vectorize(ground_mixture()), rk4_step(), 30));
    CHECK((late - ss.rho).cwiseAbs().maxCoeff() <= 1e-6);
    const double pp = ss.population(Term::P12);
    CHECK(pp > 0.0);
    CHECK(pp < 0.5);
    CHECK(model.p_population(p) == doctest::Approx(pp).epsilon(1e-14));
}

TEST_CASE("steady states satisfy density-matrix invariants and match integration") {
    std::mt19937 rng(42);
    const BlochModel model;
    for (int trial = 0; trial < 6; ++trial) {
        const BlochParameters p = random_parameters(rng);
        const Liouvillian l = model.liouvillian(p);
        const DensityMatrix ss = model.steady_state(p);
        CHECK(ss.hermiticity_error() <= 1e-12);
        CHECK(std::abs(ss.trace() - 1.0) <= 1e-10);
        CHECK(ss.min_eigenvalue() >= -1e-9);
        CHECK(relative_residual(l, ss) <= 1e-10);

        const Matrix8c late =
            unvectorize(propagate(l.matrix, vectorize(ground_mixture()), rk4_step(), 30));
        CHECK((late - ss.rho).cwiseAbs().maxCoeff() <= 1e-6);
    }
}

TEST_CASE("incoherent decay model also gives valid steady states") {
    BlochOptions opts;
    opts.decay = DecayModel::Incoherent;
    const BlochModel model({}, {}, opts);
    const DensityMatrix ss = model.steady_state(BlochParameters{});
    CHECK(std::abs(ss.trace() - 1.0) <= 1e-10);
    CHECK(ss.min_eigenvalue() >= -1e-9);
    CHECK(relative_residual(model.liouvillian(BlochParameters{}), ss) <= 1e-10);
}

TEST_CASE("reversing the field leaves the P population unchanged") {
    std::mt19937 rng(9);
    const BlochModel model;
    for (int trial = 0; trial < 5; ++trial) {
        BlochParameters p = random_parameters(rng);
        const double forward = model.p_population(p);
        p.b_field = -p.b_field;
        CHECK(model.p_population(p) == doctest::Approx(forward).epsilon(1e-9));
    }
}

TEST_CASE("P population stays below one half at or below saturation") {
    const BlochModel model;
    const double s493 = saturation_intensity(scheme, Transition::SP493);
    const double s650 = saturation_intensity(scheme, Transition::DP650);
    for (double f493 : {0.1, 0.5, 1.0})
        for (double f650 : {0.1, 0.5, 1.0})
            for (double d493 : {-40e6, -19e6, -5e6, 0.0})
                for (double d650 : {-15e6, 0.0, 5e6, 20e6}) {
                    BlochParameters p;
                    p.intensity_493 = f493 * s493;
                    p.intensity_650 = f650 * s650;
                    p.detuning_493 = angular(d493);
                    p.detuning_650 = angular(d650);
                    const double pp = model.p_population(p);
                    CHECK(pp >= 0.0);
                    CHECK(pp <= 0.5);
                }
}

TEST_CASE("excitation spectrum") {
    const BlochModel model;
    const BlochParameters base;

    SUBCASE("single point equals p_population") {
        BlochParameters q = base;
        q.detuning_650 = angular(3e6);
        const std::vector<double> grid{q.detuning_650};
        const auto pts = model.excitation_spectrum(base, ScanAxis::Detuning650, grid);
        REQUIRE(pts.size() == 1);
        CHECK(*pts[0].p_population == doctest::Approx(model.p_population(q)).epsilon(1e-14));
    }

    SUBCASE("permuting the grid permutes the output") {
        std::vector<double> grid;
        for (double f : linspace(-30e6, 30e6, 25)) grid.push_back(angular(f));
        const auto forward = p_scan(model, base, ScanAxis::Detuning650, grid);
        std::vector<std::size_t> order(grid.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), std::mt19937(4));
        std::vector<double> shuffled;
        for (auto i : order) shuffled.push_back(grid[i]);
        const auto pts = model.excitation_spectrum(base, ScanAxis::Detuning650, shuffled);
        for (std::size_t k = 0; k < order.size(); ++k) {
            CHECK(pts[k].detuning == shuffled[k]);
            CHECK(*pts[k].p_population == forward[order[k]]);
        }
    }

    SUBCASE("dark resonance near zero repumper detuning") {
        std::vector<double> grid;
        for (double f : linspace(-30e6, 30e6, 301)) grid.push_back(angular(f));
        const auto pp = p_scan(model, base, ScanAxis::Detuning650, grid);
        int minima = 0;
        for (std::size_t i = 1; i + 1 < pp.size(); ++i)
            if (pp[i] < pp[i - 1] && pp[i] < pp[i + 1]) ++minima;
        CHECK(minima >= 1);
    }

    SUBCASE("fluorescence maximum near +5 MHz repumper detuning") {
        std::vector<double> grid;
        for (double f : linspace(-20e6, 30e6, 501)) grid.push_back(angular(f));
        const auto pp = p_scan(model, base, ScanAxis::Detuning650, grid);
        const auto peak = std::max_element(pp.begin(), pp.end()) - pp.begin();
        MESSAGE("650 nm scan maximum at " << grid[peak] / two_pi / 1e6 << " MHz");
        CHECK(std::abs(grid[peak] / two_pi - 5e6) <= 5e6);
    }

    SUBCASE("weak excitation") {
        BlochParameters weak = base;
        weak.intensity_493 *= 1e-6;
        weak.intensity_650 *= 1e-6;
        std::vector<double> grid;
        for (double f : linspace(-30e6, 30e6, 121)) grid.push_back(angular(f));
        const auto pp = p_scan(model, weak, ScanAxis::Detuning650, grid);
        CHECK(*std::max_element(pp.begin(), pp.end()) < 1e-3);
    }

    SUBCASE("non-finite grid is rejected") {
        const std::vector<double> grid{0.0, std::nan("")};
        CHECK_THROWS_AS(model.excitation_spectrum(base, ScanAxis::Detuning650, grid), ConfigError);
    }

    SUBCASE("failed points are recorded, not thrown") {
        BlochParameters dark = base;
        dark.intensity_493 = 0.0;
        const std::vector<double> grid{angular(-1e6), angular(1e6)};
        const auto pts = model.excitation_spectrum(dark, ScanAxis::Detuning650, grid);
        REQUIRE(pts.size() == 2);
        for (const auto& pt : pts) {
            CHECK_FALSE(pt.p_population.has_value());
            CHECK_FALSE(pt.error.empty());
        }
    }
}

TEST_CASE("P population derivative") {
    const BlochModel model;
    const BlochParameters base;

    SUBCASE("red of resonance the slope is positive") {
        const Derivative d = model.p_derivative(base, ScanAxis::Detuning493);
        CHECK(d.value > 0.0);
        CHECK(d.error_estimate < 1e-3 * d.value);
    }

    SUBCASE("matches the slope of a local quadratic fit to a dense scan") {
        std::mt19937 rng(12);
        for (int trial = 0; trial < 3; ++trial) {
            BlochParameters p = trial == 0 ? base : random_parameters(rng);
            const double centre = p.detuning_493;
            const double half = angular(0.4e6);
            std::vector<double> grid;
            for (double d : linspace(centre - half, centre + half, 41)) grid.push_back(d);
            const auto pp = p_scan(model, p, ScanAxis::Detuning493, grid);
            Eigen::MatrixXd a(grid.size(), 3);
            Eigen::VectorXd y(grid.size());
            for (std::size_t i = 0; i < grid.size(); ++i) {
                const double x = (grid[i] - centre) / half;
                a.row(i) << 1.0, x, x * x;
                y[i] = pp[i];
            }
            const Eigen::Vector3d c = a.colPivHouseholderQr().solve(y);
            const double slope = c[1] / half;
            const Derivative d = model.p_derivative(p, ScanAxis::Detuning493);
            CHECK(d.value == doctest::Approx(slope).epsilon(0.01));
        }
    }

    SUBCASE("vanishes at the 493 nm fluorescence maximum") {
        // Golden-section search for the maximum of P_P on the red side.
        BlochParameters p = base;
        auto f = [&](double d) {
            p.detuning_493 = d;
            return model.p_population(p);
        };
        double lo = angular(-40e6), hi = angular(0.0);
        const double g = (std::sqrt(5.0) - 1.0) / 2.0;
        double x1 = hi - g * (hi - lo), x2 = lo + g * (hi - lo);
        double f1 = f(x1), f2 = f(x2);
        while (hi - lo > angular(100.0)) {
            if (f1 < f2) {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + g * (hi - lo);
                f2 = f(x2);
            } else {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - g * (hi - lo);
                f1 = f(x1);
            }
        }
        p.detuning_493 = 0.5 * (lo + hi);
        const Derivative at_max = model.p_derivative(p, ScanAxis::Detuning493);
        const Derivative red = model.p_derivative(base, ScanAxis::Detuning493);
        CHECK(std::abs(at_max.value) < 1e-2 * red.value);
        BlochParameters left = p, right = p;
        left.detuning_493 -= angular(0.5e6);
        right.detuning_493 += angular(0.5e6);
        CHECK(model.p_derivative(left, ScanAxis::Detuning493).value > 0.0);
        CHECK(model.p_derivative(right, ScanAxis::Detuning493).value < 0.0);
    }

    SUBCASE("repumper slope is small at +5 MHz") {
        const Derivative d = model.p_derivative(base, ScanAxis::Detuning650);
        const double pp = model.p_population(base);
        MESSAGE("dP/dDelta650 * 2pi*1MHz / P = " << d.value * angular(1e6) / pp);
        // Relative change of P_P per MHz of repumper detuning.
        CHECK(std::abs(d.value * angular(1e6) / pp) < 0.05);
    }

    SUBCASE("non-positive step is rejected") {
        CHECK_THROWS_AS(model.p_derivative(base, ScanAxis::Detuning493, 0.0), ConfigError);
    }
}
