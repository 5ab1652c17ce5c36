// Acceptance checks. One PASS/FAIL line per criterion; exit status is the
// number of failures.

#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "ionbeat/atom.hpp"
#include "ionbeat/bloch.hpp"
#include "ionbeat/fit.hpp"
#include "ionbeat/motion.hpp"
#include "ionbeat/spectrum.hpp"

using namespace ionbeat;

namespace {

struct Outcome {
    bool ok = false;
    std::string detail;
};

int failures = 0;

void criterion(int id, const char* name, double limit_s, const std::function<Outcome()>& body) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, fmt::format("exception: {}", e.what())};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs < limit_s;
    const bool pass = o.ok && in_time;
    if (!pass) ++failures;
    fmt::print("{} {:2d} {}: {} [{:.2f} s{}]\n", pass ? "PASS" : "FAIL", id, name, o.detail, secs,
               in_time ? "" : fmt::format(", limit {} s", limit_s));
    std::fflush(stdout);
}

const PhysicalConstants constants;
const Eigen::Vector3d k_laser = wave_vector({1.0, 0.0, 0.0}, 493.4e-9);
const Eigen::Vector3d k_detect = wave_vector({0.0, 0.0, 1.0}, 493.4e-9);

// rho(2^doublings h) through the squared RK4 one-step polynomial of L.
Eigen::VectorXcd propagate(const Eigen::MatrixXcd& l, const Eigen::VectorXcd& rho0, double h, int doublings) {
    const Eigen::MatrixXcd a = h * l;
    const Eigen::MatrixXcd a2 = a * a;
    Eigen::MatrixXcd p = Eigen::MatrixXcd::Identity(l.rows(), l.cols()) + a + a2 / 2.0 + a2 * a / 6.0 +
                         a2 * a2 / 24.0;
    for (int i = 0; i < doublings; ++i) p = p * p;
    return p * rho0;
}

Matrix8c ground_mixture() {
    Matrix8c rho = Matrix8c::Zero();
    rho(0, 0) = 0.5;
    rho(1, 1) = 0.5;
    return rho;
}

Outcome recoil() {
    const double f = recoil_frequency(137.9 * constants.atomic_mass_unit, 493.4e-9) / two_pi;
    return {std::abs(f / 5.9e3 - 1.0) <= 0.01, fmt::format("recoil {:.1f} Hz (target 5900 +- 1%)", f)};
}

Outcome cooling_consistency() {
    const BlochModel model;
    const double k = two_pi / 493.4e-9;
    double worst = 0.0;
    for (double d : {-30e6, -24e6, -19e6, -12e6, -5e6}) {
        BlochParameters p;
        p.detuning_493 = angular(d);
        const double dv = angular(50e3) / k;
        const double slope =
            (radiation_pressure_force(dv, model, p) - radiation_pressure_force(-dv, model, p)) / (2.0 * dv);
        const double from_force = -slope / constants.ion_mass;
        const double alpha = cooling_coefficient(model, p).alpha;
        worst = std::max(worst, std::abs(from_force / alpha - 1.0));
    }
    return {worst <= 0.01, fmt::format("worst relative difference {:.2e} over 5 detunings", worst)};
}

Outcome cooling_value() {
    const CoolingResult r = cooling_coefficient(BlochModel(), BlochParameters{});
    return {r.linewidth_hz >= 320.0 && r.linewidth_hz <= 1280.0,
            fmt::format("alpha/2pi = {:.1f} Hz (target 640 within x2)", r.linewidth_hz)};
}

Outcome micromotion_amplitude() {
    const double a = micromotion_amplitude_for_index(0.47, k_laser, k_detect);
    return {std::abs(a - 26e-9) <= 1e-9, fmt::format("|a| = {:.2f} nm (target 26 +- 1)", a * 1e9)};
}

Outcome bessel_dsp() {
    HeterodyneConfig c;
    SynthesisOptions opt;
    opt.noise = false;
    opt.sample_rate = 1.024e9;
    opt.duration = 1e-4;
    double worst = 0.0;
    for (double m : {0.1, 0.47, 1.5}) {
        Modulation mod;
        mod.m_micro = m;
        mod.micro_order_max = 20;
        const auto x = synthesize_timeseries(c, mod, opt);
        const auto t = real_power_spectrum(x, opt.sample_rate, Window::Uniform);
        const double carrier = t.power[t.nearest_bin(c.f_beat())];
        for (int n = -3; n <= 3; ++n) {
            if (n == 0) continue;
            const double measured = t.power[t.nearest_bin(std::abs(c.f_beat() + n * c.f_paul))] / carrier;
            const double expected = std::pow(bessel_j(n, m) / bessel_j(0, m), 2);
            worst = std::max(worst, std::abs(measured / expected - 1.0));
        }
    }
    double sum_error = 0.0;
    for (double m : {0.1, 0.47, 1.5}) {
        double s = 0.0;
        for (int n = -40; n <= 40; ++n) s += std::pow(bessel_j(n, m), 2);
        sum_error = std::max(sum_error, std::abs(s - 1.0));
    }
    return {worst <= 0.01 && sum_error <= 1e-9,
            fmt::format("worst sideband ratio error {:.2e}, |sum J_n^2 - 1| = {:.1e}", worst, sum_error)};
}

Outcome fig2() {
    HeterodyneConfig c;
    c.window = Window::Uniform;
    c.resolution_bandwidth = 100e3 / (4096.0 * 400.0);
    c.averages = 16;
    HeterodyneConfig one_hz = c;
    one_hz.resolution_bandwidth = 1.0;
    c.mode_matching = mode_matching_for_snr(one_hz, 17.0);
    const double duration = c.averages * static_cast<double>(segment_length(c)) / c.analyzer_rate;
    const SpectrumTrace t = analyze_baseband_equivalent(c, {}, duration, 2);

    std::size_t peak = 0;
    for (std::size_t k = 1; k < t.power.size(); ++k)
        if (t.power[k] > t.power[peak]) peak = k;
    double floor = 0.0;
    std::size_t count = 0;
    for (std::size_t k = 0; k < t.power.size(); ++k)
        if (k + 1 < peak || k > peak + 1) {
            floor += t.power[k];
            ++count;
        }
    floor /= static_cast<double>(count);
    int above = 0;
    for (double p : t.power)
        if (p >= floor * std::pow(10.0, 0.6)) ++above;
    const std::size_t expected = t.nearest_bin(50e3);
    const bool located = peak + 1 >= expected && peak <= expected + 1;
    return {above == 1 && located,
            fmt::format("{} bin(s) >= 6 dB above the mean floor, peak at {:.4f} Hz ({:.1f} dB over floor, {} bins, "
                        "RBW {:.4f} Hz)",
                        above, t.bin_centers[peak], 10.0 * std::log10(t.power[peak] / floor), t.power.size(),
                        t.resolution_bandwidth)};
}

Outcome fig4_round_trip() {
    SidebandTraceSpec spec;
    double m = 0, df = 0, f0 = 0;
    const int seeds = 20;
    for (int seed = 1; seed <= seeds; ++seed) {
        spec.seed = static_cast<std::uint64_t>(seed);
        const auto t = synthesize_sideband_traces(spec);
        const auto r = fit_sideband_pair(t.carrier, t.sideband);
        if (!r.converged) return {false, fmt::format("seed {} did not converge: {}", seed, r.message)};
        m += r.value("m_max") / seeds;
        df += r.value("delta_f") / seeds;
        f0 += r.value("f_macro") / seeds;
    }
    const bool ok = std::abs(m / 1.5 - 1.0) <= 0.02 && std::abs(df / 750.0 - 1.0) <= 0.02 &&
                    std::abs(f0 / 620.5e3 - 1.0) <= 0.02;
    return {ok, fmt::format("20-seed mean m_max {:.4f}, delta_f {:.1f} Hz, f_macro {:.1f} Hz", m, df, f0)};
}

Outcome oscillator_linewidth() {
    const SecularMode mode = TrapConfig::defaults().modes[0];
    double worst = 0.0;
    for (double width : {100.0, 640.0, 2000.0}) {
        const double alpha = angular(width);
        DriveConfig drive;
        drive.force_amplitude = 1e-21;
        auto energy = [&](double f) {
            drive.f_drive = f;
            return std::pow(driven_response(drive, alpha, mode, constants.ion_mass, k_laser, k_detect).amplitude, 2);
        };
        const double half_peak = 0.5 * energy(mode.frequency);
        auto crossing = [&](double outside, double inside) {
            for (int i = 0; i < 200; ++i) {
                const double mid = 0.5 * (outside + inside);
                (energy(mid) > half_peak ? inside : outside) = mid;
            }
            return 0.5 * (outside + inside);
        };
        const double fwhm = crossing(mode.frequency + 20.0 * width, mode.frequency) -
                            crossing(mode.frequency - 20.0 * width, mode.frequency);
        worst = std::max(worst, std::abs(fwhm / width - 1.0));
    }
    return {worst <= 0.005, fmt::format("worst |FWHM / (alpha/2pi) - 1| = {:.2e}", worst)};
}

Outcome compensation_sensitivity() {
    const Eigen::Vector3d along = (k_detect - k_laser).normalized();
    const double a = min_detectable_micromotion(40.0, k_laser, k_detect, along);
    return {std::abs(a - 1.1e-9) <= 0.2e-9, fmt::format("{:.3f} nm at 40 dB (target 1.1 +- 0.2)", a * 1e9)};
}

Outcome bloch_properties() {
    const BlochModel model;
    const double h = 0.01 / model.scheme().gamma_total();
    std::mt19937 rng(2024);
    std::uniform_real_distribution<double> d493(-40e6, -5e6), d650(-20e6, 20e6), i493(200.0, 4000.0),
        i650(200.0, 4000.0), b(1e-4, 5e-4);
    double herm = 0, trace = 0, min_eig = 1.0, dev = 0;
    for (int trial = 0; trial < 5; ++trial) {
        BlochParameters p;
        p.detuning_493 = angular(d493(rng));
        p.detuning_650 = angular(d650(rng));
        p.intensity_493 = i493(rng);
        p.intensity_650 = i650(rng);
        p.b_field = b(rng);
        const Liouvillian l = model.liouvillian(p);
        const DensityMatrix ss = model.steady_state(p);
        herm = std::max(herm, ss.hermiticity_error());
        trace = std::max(trace, std::abs(ss.trace() - 1.0));
        min_eig = std::min(min_eig, ss.min_eigenvalue());
        const Matrix8c late = unvectorize(propagate(l.matrix, vectorize(ground_mixture()), h, 30));
        dev = std::max(dev, (late - ss.rho).cwiseAbs().maxCoeff());
    }
    BlochParameters dark;
    dark.intensity_650 = 0.0;
    const Matrix8c pumped =
        unvectorize(propagate(model.liouvillian(dark).matrix, vectorize(ground_mixture()), h, 22));
    const double d_pop = DensityMatrix{pumped}.population(Term::D32);
    const bool ok = herm <= 1e-12 && trace <= 1e-10 && min_eig >= -1e-9 && dev <= 1e-6 && d_pop > 1.0 - 1e-6;
    return {ok, fmt::format("hermiticity {:.1e}, |tr-1| {:.1e}, min eig {:.1e}, max |ss - integrated| {:.1e}, "
                            "D3/2 without repumper {:.9f}",
                            herm, trace, min_eig, dev, d_pop)};
}

Outcome bloch_fit() {
    const BlochModel model;
    const BlochParameters truth;
    std::vector<double> grid;
    for (int i = 0; i <= 100; ++i) grid.push_back(-60e6 + 1e6 * i);
    const ScanData data = synthesize_bloch_scan(model, truth, grid, 0.02, 7);

    BlochFitOptions opt;
    opt.initial = truth;
    opt.initial.detuning_493 = angular(-17e6);
    opt.initial.intensity_493 = 1.15 * truth.intensity_493;
    opt.initial.intensity_650 = 0.85 * truth.intensity_650;
    opt.initial.b_field = 1.1 * truth.b_field;
    opt.initial_scale = 0.9;
    const FitResult r = fit_bloch_scan(model, data, opt);
    if (!r.converged) return {false, "fit did not converge: " + r.message};

    const double d493 = r.value("detuning_493_hz") / -19e6 - 1.0;
    const double i493 = r.value("intensity_493_mw_per_cm2") / 189.0 - 1.0;
    const double i650 = r.value("intensity_650_mw_per_cm2") / 107.0 - 1.0;
    const double b = r.value("b_field_gauss") / 2.8 - 1.0;
    const double worst = std::max({std::abs(d493), std::abs(i493), std::abs(i650), std::abs(b)});
    return {worst <= 0.05, fmt::format("relative errors: detuning_493 {:+.3f}, I_493 {:+.3f}, I_650 {:+.3f}, "
                                       "B {:+.3f} ({} iterations)",
                                       d493, i493, i650, b, r.iterations)};
}

}  // namespace

int main() {
    criterion(1, "recoil frequency", 1.0, recoil);
    criterion(2, "cooling rate, two routes agree", 60.0, cooling_consistency);
    criterion(3, "cooling rate at the operating point", 60.0, cooling_value);
    criterion(4, "micromotion calibration", 1.0, micromotion_amplitude);
    criterion(5, "Bessel sidebands through synthesis and FFT", 60.0, bessel_dsp);
    criterion(6, "single elastic bin at 61 mHz RBW", 60.0, fig2);
    criterion(7, "sideband-pair fit round trip", 60.0, fig4_round_trip);
    criterion(8, "driven-oscillator linewidth", 1.0, oscillator_linewidth);
    criterion(9, "micromotion detection limit", 1.0, compensation_sensitivity);
    criterion(10, "Bloch steady-state properties", 300.0, bloch_properties);
    criterion(11, "Bloch scan fit round trip", 600.0, bloch_fit);
    fmt::print("{} of 11 criteria failed\n", failures);
    return failures;
}
