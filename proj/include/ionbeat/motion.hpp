#pragma once

// Classical ion motion: micromotion modulation, secular modes, radiation
// pressure, the laser-cooling friction coefficient and driven oscillators.

#include <array>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "ionbeat/bloch.hpp"

namespace ionbeat {

struct SecularMode {
    double frequency = 620.5e3;  // Hz
    Eigen::Vector3d axis{1.0, 0.0, 0.0};
};

struct TrapConfig {
    double f_paul = 18.53e6;  // Hz
    std::array<SecularMode, 3> modes;
    Eigen::Vector3d micromotion_amplitude = Eigen::Vector3d::Zero();  // m

    /// Secular frequencies 620.5, 670 and 1301 kHz. The 620.5 kHz mode lies
    /// 45 degrees from both the laser and the (reversed) observation direction.
    static TrapConfig defaults(const ExperimentGeometry& geometry = {});
    void validate() const;
};

struct DriveConfig {
    double f_drive = 620.5e3;       // Hz
    double force_amplitude = 0.0;   // N
    int target_mode = 0;

    void validate() const;
};

struct CoolingResult {
    double alpha = 0.0;            // rad/s
    double dp_ddelta = 0.0;        // s/rad
    double dp_ddelta_error = 0.0;  // s/rad
    double linewidth_hz = 0.0;     // alpha / 2 pi
};

void to_json(nlohmann::json& j, const CoolingResult& r);

/// k vector of magnitude 2 pi / wavelength along `direction`.
Eigen::Vector3d wave_vector(const Eigen::Vector3d& direction, double wavelength);

/// F(v) = hbar k Gamma P_P(Delta - k v) for the 493 nm beam, in newton.
/// `v` is the velocity component along the laser wave vector.
double radiation_pressure_force(double v, const BlochModel& model, const BlochParameters& p);

/// alpha = (hbar k^2 / M) Gamma dP_P/dDelta for the 493 nm beam.
CoolingResult cooling_coefficient(const BlochModel& model, const BlochParameters& p,
                                  double step = angular(100e3));

/// m = a . (k_d - k_l)
double micromotion_mod_index(const Eigen::Vector3d& amplitude, const Eigen::Vector3d& k_laser,
                             const Eigen::Vector3d& k_detect);

/// Micromotion amplitude along (k_d - k_l) that yields modulation index `m`.
double micromotion_amplitude_for_index(double m, const Eigen::Vector3d& k_laser,
                                       const Eigen::Vector3d& k_detect);

struct DrivenResponse {
    double amplitude = 0.0;  // m
    double mod_index = 0.0;
};

/// Steady state of x'' + alpha x' + w0^2 x = (F0/M) cos(w t).
DrivenResponse driven_response(const DriveConfig& drive, double alpha, const SecularMode& mode,
                               double mass, const Eigen::Vector3d& k_laser,
                               const Eigen::Vector3d& k_detect);

/// m(f) = m_max / (1 + ((f - f_macro) / (delta_f / 2))^2)
double lorentzian_mod_index(double f_drive, double m_max, double f_macro, double delta_f);

/// A fitted Lorentzian width delta_f can be read either as the FWHM of the
/// oscillator energy response (then alpha/2pi = delta_f) or as the FWHM of
/// the amplitude response (then alpha/2pi = delta_f / sqrt(3)).
struct WidthInterpretation {
    double linewidth_if_energy_hz = 0.0;
    double linewidth_if_amplitude_hz = 0.0;
};

WidthInterpretation interpret_fitted_width(double delta_f);

/// Drive force that produces modulation index `m_max` on resonance for a
/// damping rate `alpha` (rad/s).
double force_for_peak_index(double m_max, double alpha, const SecularMode& mode, double mass,
                            const Eigen::Vector3d& k_laser, const Eigen::Vector3d& k_detect);

struct PhasePoint {
    double t = 0.0;  // s
    double x = 0.0;  // m
    double v = 0.0;  // m/s
};

/// Velocity-dependent force in newton, with any static part removed.
using ForceLaw = std::function<double(double v)>;

/// -alpha M v
ForceLaw linear_friction(double alpha, double mass);

/// Radiation pressure F(v) - F(0) along a mode axis. The mode velocity v
/// projects onto the beam as v (axis . k_hat); the force projects back onto
/// the axis the same way. P_P is tabulated once over +-`v_max` and
/// interpolated with a cubic B-spline.
ForceLaw tabulated_radiation_pressure(const BlochModel& model, const BlochParameters& p,
                                      const Eigen::Vector3d& mode_axis, double v_max,
                                      int samples = 801);

struct TrajectoryConfig {
    double x0 = 0.0;
    double v0 = 0.0;
    double mass = PhysicalConstants{}.ion_mass;
    SecularMode mode;
    std::optional<DriveConfig> drive;
    double duration = 1e-3;         // s
    double step = 0.0;              // s; 0 selects 1/(250 f_mode)
    int record_every = 1;
};

/// Fixed-step RK4 integration of x'' + w0^2 x = (force(v) + drive(t)) / M.
std::vector<PhasePoint> damped_trajectory(const TrajectoryConfig& config, const ForceLaw& force);

}  // namespace ionbeat
