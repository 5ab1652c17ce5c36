#include "ionbeat/motion.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Geometry>
#include <boost/math/interpolators/cardinal_cubic_b_spline.hpp>
#include <nlohmann/json.hpp>

#include "ionbeat/errors.hpp"

namespace ionbeat {

namespace {

double k_493(const BlochModel& model) {
    return two_pi / model.scheme().wavelength_sp;
}

}  // namespace

TrapConfig TrapConfig::defaults(const ExperimentGeometry& geometry) {
    TrapConfig trap;
    const Eigen::Vector3d driven = (geometry.laser_k - geometry.detection_k).normalized();
    const Eigen::Vector3d second = geometry.laser_k.cross(geometry.detection_k).normalized();
    const Eigen::Vector3d third = driven.cross(second);
    trap.modes = {SecularMode{620.5e3, driven}, SecularMode{670e3, second},
                  SecularMode{1301e3, third}};
    return trap;
}

void TrapConfig::validate() const {
    if (!(f_paul > 0.0)) throw ConfigError("f_paul", "must be positive");
    for (const auto& mode : modes) {
        if (!(mode.frequency > 0.0)) throw ConfigError("secular_modes", "frequency must be positive");
        if (std::abs(mode.axis.norm() - 1.0) > 1e-9)
            throw ConfigError("secular_modes", "axis must be a unit vector");
    }
    for (size_t i = 0; i < modes.size(); ++i)
        for (size_t j = i + 1; j < modes.size(); ++j)
            if (std::abs(modes[i].axis.dot(modes[j].axis)) > 1e-9)
                throw ConfigError("secular_modes", "mode axes must be mutually orthogonal");
    if (!micromotion_amplitude.allFinite())
        throw ConfigError("micromotion_amplitude", "must be finite");
}

void DriveConfig::validate() const {
    if (!(f_drive > 0.0)) throw ConfigError("f_drive", "must be positive");
    if (!(force_amplitude >= 0.0)) throw ConfigError("force_amplitude", "must be non-negative");
    if (target_mode < 0 || target_mode > 2) throw ConfigError("target_mode", "must be 0, 1 or 2");
}

void to_json(nlohmann::json& j, const CoolingResult& r) {
    j = nlohmann::json{{"alpha_rad_per_s", r.alpha},
                       {"alpha_hz", r.linewidth_hz},
                       {"dp_ddelta_per_hz", r.dp_ddelta * two_pi},
                       {"dp_ddelta_error_per_hz", r.dp_ddelta_error * two_pi},
                       {"linewidth_hz", r.linewidth_hz}};
}

Eigen::Vector3d wave_vector(const Eigen::Vector3d& direction, double wavelength) {
    return (two_pi / wavelength) * direction.normalized();
}

double radiation_pressure_force(double v, const BlochModel& model, const BlochParameters& p) {
    const double k = k_493(model);
    BlochParameters shifted = p;
    shifted.detuning_493 = p.detuning_493 - k * v;
    const double hbar = model.scheme().constants.planck_reduced;
    return hbar * k * model.scheme().gamma_sp * model.p_population(shifted);
}

CoolingResult cooling_coefficient(const BlochModel& model, const BlochParameters& p, double step) {
    const auto derivative = model.p_derivative(p, ScanAxis::Detuning493, step);
    const auto& scheme = model.scheme();
    const double recoil = recoil_frequency(scheme.constants.ion_mass, scheme.wavelength_sp,
                                           scheme.constants);
    CoolingResult r;
    r.dp_ddelta = derivative.value;
    r.dp_ddelta_error = derivative.error_estimate;
    r.alpha = 2.0 * recoil * scheme.gamma_sp * derivative.value;
    r.linewidth_hz = r.alpha / two_pi;
    return r;
}

double micromotion_mod_index(const Eigen::Vector3d& amplitude, const Eigen::Vector3d& k_laser,
                             const Eigen::Vector3d& k_detect) {
    return amplitude.dot(k_detect - k_laser);
}

double micromotion_amplitude_for_index(double m, const Eigen::Vector3d& k_laser,
                                       const Eigen::Vector3d& k_detect) {
    const double dk = (k_detect - k_laser).norm();
    if (dk == 0.0) return std::numeric_limits<double>::infinity();
    return std::abs(m) / dk;
}

DrivenResponse driven_response(const DriveConfig& drive, double alpha, const SecularMode& mode,
                               double mass, const Eigen::Vector3d& k_laser,
                               const Eigen::Vector3d& k_detect) {
    drive.validate();
    if (!(alpha > 0.0)) throw DomainError("undamped oscillator: alpha must be positive");
    if (!(mass > 0.0)) throw DomainError("mass must be positive");
    const double w0 = two_pi * mode.frequency;
    const double w = two_pi * drive.f_drive;
    const double detune = w0 * w0 - w * w;
    DrivenResponse r;
    r.amplitude = (drive.force_amplitude / mass) /
                  std::sqrt(detune * detune + alpha * alpha * w * w);
    r.mod_index = micromotion_mod_index(r.amplitude * mode.axis, k_laser, k_detect);
    return r;
}

double lorentzian_mod_index(double f_drive, double m_max, double f_macro, double delta_f) {
    if (!(delta_f > 0.0)) throw DomainError("delta_f must be positive");
    const double x = (f_drive - f_macro) / (0.5 * delta_f);
    return m_max / (1.0 + x * x);
}

WidthInterpretation interpret_fitted_width(double delta_f) {
    return {delta_f, delta_f / std::sqrt(3.0)};
}

double force_for_peak_index(double m_max, double alpha, const SecularMode& mode, double mass,
                            const Eigen::Vector3d& k_laser, const Eigen::Vector3d& k_detect) {
    const double projection = std::abs(mode.axis.dot(k_detect - k_laser));
    if (projection == 0.0) throw DomainError("mode axis is orthogonal to k_d - k_l");
    const double w0 = two_pi * mode.frequency;
    return m_max / projection * mass * alpha * w0;
}

ForceLaw linear_friction(double alpha, double mass) {
    return [alpha, mass](double v) { return -alpha * mass * v; };
}

ForceLaw tabulated_radiation_pressure(const BlochModel& model, const BlochParameters& p,
                                      const Eigen::Vector3d& mode_axis, double v_max, int samples) {
    if (!(v_max > 0.0)) throw ConfigError("v_max", "must be positive");
    if (samples < 16) throw ConfigError("samples", "need at least 16 samples");
    const double projection = mode_axis.normalized().dot(model.geometry().laser_k.normalized());
    const double f0 = radiation_pressure_force(0.0, model, p);
    const double h = 2.0 * v_max / (samples - 1);
    std::vector<double> table(static_cast<size_t>(samples));
    for (int i = 0; i < samples; ++i)
        table[static_cast<size_t>(i)] = radiation_pressure_force(-v_max + i * h, model, p) - f0;
    auto spline = std::make_shared<boost::math::interpolators::cardinal_cubic_b_spline<double>>(
        table.begin(), table.end(), -v_max, h);
    return [spline, projection, v_max](double v) {
        const double along_beam = projection * v;
        if (std::abs(along_beam) > v_max)
            throw NumericalError("velocity outside the tabulated radiation-pressure range");
        return projection * (*spline)(along_beam);
    };
}

std::vector<PhasePoint> damped_trajectory(const TrajectoryConfig& config, const ForceLaw& force) {
    if (!(config.duration > 0.0)) throw ConfigError("duration", "must be positive");
    if (!(config.mass > 0.0)) throw ConfigError("mass", "must be positive");
    if (!(config.mode.frequency > 0.0)) throw ConfigError("mode", "frequency must be positive");
    if (config.record_every < 1) throw ConfigError("record_every", "must be >= 1");
    const double max_step = 0.01 / config.mode.frequency;
    const double step = config.step == 0.0 ? 1.0 / (250.0 * config.mode.frequency) : config.step;
    if (!(step > 0.0) || step > max_step * (1.0 + 1e-12))
        throw ConfigError("step", "must be positive and at most 0.01 / f_mode");
    if (config.drive) config.drive->validate();

    const double w0 = two_pi * config.mode.frequency;
    const double inv_mass = 1.0 / config.mass;
    const double f_drive = config.drive ? config.drive->force_amplitude : 0.0;
    const double w_drive = config.drive ? two_pi * config.drive->f_drive : 0.0;

    auto accel = [&](double t, double x, double v) {
        double f = force(v);
        if (f_drive != 0.0) f += f_drive * std::cos(w_drive * t);
        return f * inv_mass - w0 * w0 * x;
    };

    const auto n_steps = static_cast<long long>(std::ceil(config.duration / step - 1e-9));
    std::vector<PhasePoint> out;
    out.reserve(static_cast<size_t>(n_steps / config.record_every + 2));
    double x = config.x0, v = config.v0;
    out.push_back({0.0, x, v});
    for (long long i = 0; i < n_steps; ++i) {
        const double t = i * step;
        const double k1x = v, k1v = accel(t, x, v);
        const double k2x = v + 0.5 * step * k1v;
        const double k2v = accel(t + 0.5 * step, x + 0.5 * step * k1x, k2x);
        const double k3x = v + 0.5 * step * k2v;
        const double k3v = accel(t + 0.5 * step, x + 0.5 * step * k2x, k3x);
        const double k4x = v + step * k3v;
        const double k4v = accel(t + step, x + step * k3x, k4x);
        x += step / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        v += step / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        if ((i + 1) % config.record_every == 0) out.push_back({(i + 1) * step, x, v});
    }
    return out;
}

}  // namespace ionbeat
