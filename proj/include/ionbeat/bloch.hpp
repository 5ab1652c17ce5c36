#pragma once

// Eight-level Lindblad model of the Ba+ S1/2 - P1/2 - D3/2 system driven by
// the 493 nm cooling laser and the 650 nm repumper.

#include <complex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "ionbeat/atom.hpp"

namespace ionbeat {

using Matrix8c = Eigen::Matrix<std::complex<double>, num_levels, num_levels>;

struct ExperimentGeometry {
    Eigen::Vector3d b_direction{0.0, 0.0, 1.0};
    Eigen::Vector3d laser_k{1.0, 0.0, 0.0};
    Eigen::Vector3d laser_polarization{0.0, 1.0, 0.0};
    Eigen::Vector3d detection_k{0.0, 0.0, 1.0};

    void validate() const;
};

/// Spherical components (q = -1, 0, +1) of a real vector in the frame whose
/// z axis is `axis`. The transverse frame orientation is fixed by `axis` alone.
std::array<std::complex<double>, 3> spherical_components(const Eigen::Vector3d& v,
                                                         const Eigen::Vector3d& axis);

struct DensityMatrix {
    Matrix8c rho = Matrix8c::Zero();

    double population(Term term) const;
    std::complex<double> trace() const { return rho.trace(); }
    double hermiticity_error() const;  // relative
    double min_eigenvalue() const;     // of the Hermitian part
};

struct Liouvillian {
    Eigen::MatrixXcd matrix;  // 64 x 64, acts on column-major vec(rho)
};

Eigen::VectorXcd vectorize(const Matrix8c& rho);
Matrix8c unvectorize(const Eigen::VectorXcd& v);

enum class DecayModel {
    /// One jump operator per (lower term, q), summed over P sublevels, so that
    /// Zeeman coherence in P1/2 is transferred by spontaneous emission.
    Coherent,
    /// One jump operator per (P sublevel, lower sublevel, q).
    Incoherent,
};

struct BlochOptions {
    DecayModel decay = DecayModel::Coherent;
    double linewidth_493 = 0.0;  // laser FWHM, rad/s
    double linewidth_650 = 0.0;
};

/// Build L = -i[H, .] + D for up to one laser per transition. `b_field` is the
/// signed field along `geometry.b_direction` in tesla.
Liouvillian build_liouvillian(const LevelScheme& scheme, std::span<const LaserField> lasers,
                              double b_field, const ExperimentGeometry& geometry,
                              const BlochOptions& options = {});

/// Unique stationary state of L. Throws NonUniqueSteadyState when the null
/// space of L is degenerate.
DensityMatrix steady_state(const Liouvillian& liouvillian);

/// ||L vec(rho)|| / ||L||.
double relative_residual(const Liouvillian& liouvillian, const DensityMatrix& state);

/// Operating point of the two lasers and the field.
struct BlochParameters {
    double detuning_493 = angular(-19e6);  // rad/s
    double detuning_650 = angular(5e6);    // rad/s
    double intensity_493 = 1890.0;         // W/m^2 (189 mW/cm^2)
    double intensity_650 = 1070.0;         // W/m^2 (107 mW/cm^2)
    double b_field = 2.8e-4;               // T

    void validate() const;
};

void to_json(nlohmann::json& j, const BlochParameters& p);
void from_json(const nlohmann::json& j, BlochParameters& p);

enum class ScanAxis { Detuning493, Detuning650 };

double& detuning_of(BlochParameters& p, ScanAxis axis);
double detuning_of(const BlochParameters& p, ScanAxis axis);

struct ScanPoint {
    double detuning = 0.0;                  // rad/s
    std::optional<double> p_population;     // empty when the solve failed
    std::string error;
};

struct Derivative {
    double value = 0.0;           // Richardson-extrapolated central difference
    double error_estimate = 0.0;  // |D(h/2) - D(h)| / 3
};

/// The Liouvillian is affine in detunings, field, Rabi frequencies and laser
/// linewidths; the model keeps one superoperator per term and reassembles L
/// as a linear combination for every operating point.
class BlochModel {
public:
    explicit BlochModel(LevelScheme scheme = {}, ExperimentGeometry geometry = {},
                        BlochOptions options = {});

    const LevelScheme& scheme() const { return scheme_; }
    const ExperimentGeometry& geometry() const { return geometry_; }
    const BlochOptions& options() const { return options_; }

    std::vector<LaserField> lasers(const BlochParameters& p) const;
    Liouvillian liouvillian(const BlochParameters& p) const;
    DensityMatrix steady_state(const BlochParameters& p) const;

    /// Total P1/2 population of the steady state.
    double p_population(const BlochParameters& p) const;

    /// Independent steady-state solves over `grid` (rad/s) on the given axis.
    /// Failures are recorded per point.
    std::vector<ScanPoint> excitation_spectrum(const BlochParameters& base, ScanAxis axis,
                                               std::span<const double> grid) const;

    /// dP_P/d(detuning) by central differences with step halving.
    Derivative p_derivative(const BlochParameters& p, ScanAxis axis,
                            double step = angular(100e3)) const;

private:
    LevelScheme scheme_;
    ExperimentGeometry geometry_;
    BlochOptions options_;

    Eigen::MatrixXcd dissipator_;
    Eigen::MatrixXcd per_detuning_493_;
    Eigen::MatrixXcd per_detuning_650_;
    Eigen::MatrixXcd per_tesla_;
    Eigen::MatrixXcd per_rabi_493_;
    Eigen::MatrixXcd per_rabi_650_;
};

}  // namespace ionbeat
