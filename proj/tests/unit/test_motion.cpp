#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "ionbeat/errors.hpp"
#include "ionbeat/motion.hpp"

using namespace ionbeat;

namespace {

const PhysicalConstants constants;
const double mass = constants.ion_mass;
const Eigen::Vector3d k_laser = wave_vector({1.0, 0.0, 0.0}, 493.4e-9);
const Eigen::Vector3d k_detect = wave_vector({0.0, 0.0, 1.0}, 493.4e-9);

double amplitude_closed_form(double f0, double f, double alpha, double force) {
    const double w0 = two_pi * f0, w = two_pi * f;
    return force / mass / std::hypot(w0 * w0 - w * w, alpha * w);
}

// Least-squares slope of log(energy) against time.
double log_energy_slope(const std::vector<PhasePoint>& traj, double w0, double t_from) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (const auto& p : traj) {
        if (p.t < t_from) continue;
        const double e = 0.5 * p.v * p.v + 0.5 * w0 * w0 * p.x * p.x;
        const double y = std::log(e);
        sx += p.t;
        sy += y;
        sxx += p.t * p.t;
        sxy += p.t * y;
        ++n;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace

TEST_CASE("trap defaults") {
    const TrapConfig trap = TrapConfig::defaults();
    CHECK(trap.modes[0].frequency == 620.5e3);
    CHECK(trap.modes[1].frequency == 670e3);
    CHECK(trap.modes[2].frequency == 1301e3);
    CHECK(trap.f_paul == 18.53e6);
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j) CHECK(std::abs(trap.modes[i].axis.dot(trap.modes[j].axis)) < 1e-9);
    const ExperimentGeometry g;
    CHECK(std::abs(trap.modes[0].axis.dot(g.laser_k)) == doctest::Approx(std::sqrt(0.5)));
    CHECK(std::abs(trap.modes[0].axis.dot(g.detection_k)) == doctest::Approx(std::sqrt(0.5)));
    CHECK_NOTHROW(trap.validate());

    TrapConfig bad = trap;
    bad.modes[1].axis = trap.modes[0].axis;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    DriveConfig drive;
    drive.f_drive = 0.0;
    CHECK_THROWS_AS(drive.validate(), ConfigError);
    drive.f_drive = 1e5;
    drive.force_amplitude = -1.0;
    CHECK_THROWS_AS(drive.validate(), ConfigError);
}

TEST_CASE("radiation pressure force") {
    const BlochModel model;
    const BlochParameters p;
    const double k = two_pi / 493.4e-9;
    const double f0 = radiation_pressure_force(0.0, model, p);
    CHECK(f0 == doctest::Approx(constants.planck_reduced * k * model.scheme().gamma_sp *
                                model.p_population(p))
                    .epsilon(1e-14));
    for (double v : {-20.0, -5.0, -1.0, 0.0, 1.0, 5.0, 20.0}) CHECK(radiation_pressure_force(v, model, p) > 0.0);
}

TEST_CASE("two routes to the friction coefficient agree") {
    const BlochModel model;
    const double k = two_pi / 493.4e-9;
    for (double d : {-30e6, -24e6, -19e6, -12e6, -5e6}) {
        BlochParameters p;
        p.detuning_493 = angular(d);
        const double dv = angular(50e3) / k;
        const double slope = (radiation_pressure_force(dv, model, p) - radiation_pressure_force(-dv, model, p)) /
                             (2.0 * dv);
        const CoolingResult r = cooling_coefficient(model, p);
        CAPTURE(d);
        CHECK(-slope / mass == doctest::Approx(r.alpha).epsilon(0.01));
        CHECK(r.linewidth_hz == r.alpha / two_pi);
    }
}

TEST_CASE("cooling coefficient at the operating point") {
    const BlochModel model;
    const CoolingResult r = cooling_coefficient(model, BlochParameters{});
    MESSAGE("alpha / 2pi = " << r.linewidth_hz << " Hz");
    CHECK(r.alpha > 0.0);
    CHECK(r.linewidth_hz > 320.0);
    CHECK(r.linewidth_hz < 1280.0);
    CHECK(r.dp_ddelta_error < 1e-3 * r.dp_ddelta);

    LevelScheme heavy;
    heavy.constants.ion_mass *= 2.0;
    const CoolingResult h = cooling_coefficient(BlochModel(heavy), BlochParameters{});
    CHECK(h.dp_ddelta == doctest::Approx(r.dp_ddelta).epsilon(1e-12));
    CHECK(h.alpha == doctest::Approx(0.5 * r.alpha).epsilon(1e-12));
}

TEST_CASE("micromotion modulation index") {
    const Eigen::Vector3d diff = k_detect - k_laser;
    CHECK(diff.norm() == doctest::Approx(std::sqrt(2.0) * two_pi / 493.4e-9));
    const Eigen::Vector3d along = diff.normalized();
    CHECK(std::abs(micromotion_mod_index(26e-9 * along, k_laser, k_detect)) == doctest::Approx(0.47).epsilon(0.01));
    CHECK(std::abs(micromotion_mod_index(55.5e-9 * along, k_laser, k_detect)) == doctest::Approx(1.0).epsilon(0.01));
    const Eigen::Vector3d perp = along.cross(Eigen::Vector3d(0.0, 1.0, 0.0)).normalized();
    CHECK(micromotion_mod_index(1e-6 * perp, k_laser, k_detect) == doctest::Approx(0.0).scale(1e-3));
    CHECK(micromotion_amplitude_for_index(0.47, k_laser, k_detect) == doctest::Approx(26e-9).epsilon(0.01));

    std::mt19937 rng(3);
    std::normal_distribution<double> n(0.0, 50e-9);
    for (int i = 0; i < 100; ++i) {
        const Eigen::Vector3d a(n(rng), n(rng), n(rng));
        CHECK(micromotion_mod_index(2.0 * a, k_laser, k_detect) ==
              doctest::Approx(2.0 * micromotion_mod_index(a, k_laser, k_detect)).epsilon(1e-14));
    }
}

TEST_CASE("driven response") {
    const SecularMode mode = TrapConfig::defaults().modes[0];
    const double alpha = angular(640.0);
    DriveConfig drive;
    drive.f_drive = mode.frequency;
    drive.force_amplitude = 1e-21;
    const double w0 = two_pi * mode.frequency;

    const DrivenResponse on = driven_response(drive, alpha, mode, mass, k_laser, k_detect);
    CHECK(on.amplitude == doctest::Approx(drive.force_amplitude / (mass * alpha * w0)).epsilon(1e-12));
    CHECK(std::abs(on.mod_index) == doctest::Approx(on.amplitude * (k_detect - k_laser).norm()).epsilon(1e-12));

    drive.force_amplitude = 0.0;
    CHECK(driven_response(drive, alpha, mode, mass, k_laser, k_detect).amplitude == 0.0);
    drive.force_amplitude = 1e-21;
    CHECK_THROWS_AS(driven_response(drive, 0.0, mode, mass, k_laser, k_detect), DomainError);

    SUBCASE("FWHM of the squared amplitude equals alpha / 2 pi") {
        const double peak2 = std::pow(amplitude_closed_form(mode.frequency, mode.frequency, alpha, 1.0), 2);
        auto crossing = [&](double outside, double inside) {
            for (int i = 0; i < 200; ++i) {
                const double mid = 0.5 * (outside + inside);
                const double a2 = std::pow(amplitude_closed_form(mode.frequency, mid, alpha, 1.0), 2);
                (a2 > 0.5 * peak2 ? inside : outside) = mid;
            }
            return 0.5 * (outside + inside);
        };
        const double left = crossing(mode.frequency - 5e3, mode.frequency);
        const double right = crossing(mode.frequency + 5e3, mode.frequency);
        CHECK(right - left == doctest::Approx(alpha / two_pi).epsilon(0.005));
        // Same through the library, on a dense grid.
        double best_left = 0, best_right = 0;
        const double a_on = driven_response(drive, alpha, mode, mass, k_laser, k_detect).amplitude;
        for (int i = -20000; i <= 20000; ++i) {
            drive.f_drive = mode.frequency + 0.1 * i;
            const double a = driven_response(drive, alpha, mode, mass, k_laser, k_detect).amplitude;
            if (a * a >= 0.5 * a_on * a_on) {
                if (best_left == 0) best_left = drive.f_drive;
                best_right = drive.f_drive;
            }
        }
        CHECK(best_right - best_left == doctest::Approx(alpha / two_pi).epsilon(0.005));
    }

    SUBCASE("near-resonance symmetry") {
        // |A(w0+d) - A(w0-d)| / A(w0) <= C d / w0 with C = 2 covers the
        // closed form's leading asymmetry (d / w0) for d <= alpha.
        const double a0 = on.amplitude;
        for (double frac : {0.01, 0.1, 0.5, 1.0}) {
            const double d = frac * alpha / two_pi;
            drive.f_drive = mode.frequency + d;
            const double up = driven_response(drive, alpha, mode, mass, k_laser, k_detect).amplitude;
            drive.f_drive = mode.frequency - d;
            const double down = driven_response(drive, alpha, mode, mass, k_laser, k_detect).amplitude;
            CHECK(std::abs(up - down) / a0 <= 2.0 * (two_pi * d) / w0);
        }
    }

    SUBCASE("force for a target peak index") {
        const double f = force_for_peak_index(1.5, alpha, mode, mass, k_laser, k_detect);
        drive.f_drive = mode.frequency;
        drive.force_amplitude = f;
        CHECK(std::abs(driven_response(drive, alpha, mode, mass, k_laser, k_detect).mod_index) ==
              doctest::Approx(1.5).epsilon(1e-12));
    }
}

TEST_CASE("Lorentzian modulation index") {
    CHECK(lorentzian_mod_index(620.5e3, 1.5, 620.5e3, 750.0) == 1.5);
    CHECK(lorentzian_mod_index(620.5e3 + 375.0, 1.5, 620.5e3, 750.0) == doctest::Approx(0.75).epsilon(1e-14));
    CHECK(lorentzian_mod_index(620.5e3 - 375.0, 1.5, 620.5e3, 750.0) == doctest::Approx(0.75).epsilon(1e-14));
    CHECK(lorentzian_mod_index(621.25e3, 1.5, 620.5e3, 750.0) == doctest::Approx(0.3).epsilon(1e-12));
    CHECK_THROWS_AS(lorentzian_mod_index(1.0, 1.0, 1.0, 0.0), DomainError);
    std::mt19937 rng(6);
    std::uniform_real_distribution<double> x(0.0, 5e3);
    for (int i = 0; i < 200; ++i) {
        const double d = x(rng);
        CHECK(lorentzian_mod_index(1e6 + d, 1.2, 1e6, 800.0) == lorentzian_mod_index(1e6 - d, 1.2, 1e6, 800.0));
    }
    const auto w = interpret_fitted_width(750.0);
    CHECK(w.linewidth_if_energy_hz == 750.0);
    CHECK(w.linewidth_if_amplitude_hz == doctest::Approx(750.0 / std::sqrt(3.0)));
}

TEST_CASE("trajectory integration") {
    SecularMode mode;
    mode.frequency = 620.5e3;
    const double w0 = two_pi * mode.frequency;

    SUBCASE("rest stays at rest") {
        TrajectoryConfig cfg;
        cfg.mode = mode;
        cfg.duration = 1e-4;
        for (const auto& p : damped_trajectory(cfg, linear_friction(angular(500.0), mass))) {
            CHECK(p.x == 0.0);
            CHECK(p.v == 0.0);
        }
    }

    SUBCASE("energy is conserved without friction") {
        TrajectoryConfig cfg;
        cfg.mode = mode;
        cfg.v0 = 0.1;
        cfg.duration = 100.0 / mode.frequency;
        const auto traj = damped_trajectory(cfg, linear_friction(0.0, mass));
        const double e0 = 0.5 * cfg.v0 * cfg.v0;
        double worst = 0.0;
        for (const auto& p : traj)
            worst = std::max(worst, std::abs(0.5 * p.v * p.v + 0.5 * w0 * w0 * p.x * p.x - e0) / e0);
        CHECK(worst <= 1e-6);
    }

    SUBCASE("step larger than 0.01 / f is rejected") {
        TrajectoryConfig cfg;
        cfg.mode = mode;
        cfg.step = 0.02 / mode.frequency;
        CHECK_THROWS_AS(damped_trajectory(cfg, linear_friction(0.0, mass)), ConfigError);
    }

    SUBCASE("energy decays at the cooling rate under full radiation pressure") {
        const BlochModel model;
        const BlochParameters p;
        const double alpha = cooling_coefficient(model, p).alpha;
        const double k = two_pi / 493.4e-9;
        TrajectoryConfig cfg;
        cfg.mode = mode;
        cfg.mode.axis = model.geometry().laser_k;
        cfg.v0 = 0.02 * model.scheme().gamma_sp / k;
        cfg.duration = 3.0 / alpha;
        cfg.record_every = 25;
        const auto force = tabulated_radiation_pressure(model, p, cfg.mode.axis, 2.0 * cfg.v0);
        const auto traj = damped_trajectory(cfg, force);
        const double rate = -log_energy_slope(traj, w0, 0.0);
        MESSAGE("energy decay rate " << rate << " vs alpha " << alpha);
        CHECK(rate == doctest::Approx(alpha).epsilon(0.02));
    }

    SUBCASE("driven late-time amplitude matches the closed form") {
        const double alpha = angular(640.0);
        DriveConfig drive;
        drive.f_drive = mode.frequency;
        drive.force_amplitude = 1e-21;
        TrajectoryConfig cfg;
        cfg.mode = mode;
        cfg.drive = drive;
        cfg.duration = 30.0 / alpha;
        const auto traj = damped_trajectory(cfg, linear_friction(alpha, mass));
        double late = 0.0;
        const double t_from = cfg.duration - 20.0 / mode.frequency;
        for (const auto& pt : traj)
            if (pt.t >= t_from) late = std::max(late, std::abs(pt.x));
        const double expected = driven_response(drive, alpha, mode, mass, k_laser, k_detect).amplitude;
        CHECK(late == doctest::Approx(expected).epsilon(0.01));
    }
}
