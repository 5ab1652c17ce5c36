#include "ionbeat/bloch.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include "ionbeat/errors.hpp"

namespace ionbeat {

namespace {

constexpr int dim = num_levels;
constexpr int dim2 = num_levels * num_levels;
const std::complex<double> I{0.0, 1.0};

Eigen::MatrixXcd kron(const Matrix8c& a, const Matrix8c& b) {
    Eigen::MatrixXcd out(dim2, dim2);
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) out.block(i * dim, j * dim, dim, dim) = a(i, j) * b;
    return out;
}

/// -i [H, .]
Eigen::MatrixXcd hamiltonian_superop(const Matrix8c& h) {
    const Matrix8c id = Matrix8c::Identity();
    return -I * (kron(id, h) - kron(h.transpose(), id));
}

/// C . C^+ - 1/2 {C^+ C, .}
Eigen::MatrixXcd lindblad_superop(const Matrix8c& c) {
    const Matrix8c id = Matrix8c::Identity();
    const Matrix8c cdc = c.adjoint() * c;
    return kron(c.conjugate(), c) - 0.5 * kron(id, cdc) - 0.5 * kron(cdc.transpose(), id);
}

Matrix8c projector(Term term) {
    Matrix8c p = Matrix8c::Zero();
    const auto& states = LevelScheme::states();
    for (int i = 0; i < dim; ++i)
        if (states[i].term == term) p(i, i) = 1.0;
    return p;
}

Matrix8c zeeman_per_tesla(const LevelScheme& scheme) {
    Matrix8c h = Matrix8c::Zero();
    const auto& states = LevelScheme::states();
    for (int i = 0; i < dim; ++i)
        h(i, i) = zeeman_shift(scheme, states[i].term, states[i].two_m, 1.0);
    return h;
}

/// Coupling Hamiltonian of unit Rabi frequency on one transition.
Matrix8c coupling_per_rabi(Transition transition, const Eigen::Vector3d& polarization,
                           const Eigen::Vector3d& axis) {
    const auto eps = spherical_components(polarization, axis);  // index q + 1
    const Term lower_term = LevelScheme::lower_term(transition);
    const auto& states = LevelScheme::states();
    Matrix8c h = Matrix8c::Zero();
    for (int u = 0; u < dim; ++u) {
        if (states[u].term != Term::P12) continue;
        for (int l = 0; l < dim; ++l) {
            if (states[l].term != lower_term) continue;
            const int two_q = states[u].two_m - states[l].two_m;
            if (std::abs(two_q) > 2) continue;
            const int q = two_q / 2;
            const double c = coupling_coefficient(states[l], states[u], q);
            const double sign = (q % 2 == 0) ? 1.0 : -1.0;
            const std::complex<double> amp = 0.5 * c * sign * eps[static_cast<size_t>(1 - q)];
            h(u, l) += amp;
            h(l, u) += std::conj(amp);
        }
    }
    return h;
}

Eigen::MatrixXcd spontaneous_emission(const LevelScheme& scheme, DecayModel model) {
    Eigen::MatrixXcd out = Eigen::MatrixXcd::Zero(dim2, dim2);
    const auto& states = LevelScheme::states();
    for (Transition t : {Transition::SP493, Transition::DP650}) {
        const double rate = scheme.partial_width(t);
        if (rate == 0.0) continue;
        const Term lower_term = LevelScheme::lower_term(t);
        for (int q = -1; q <= 1; ++q) {
            Matrix8c summed = Matrix8c::Zero();
            for (int u = 0; u < dim; ++u) {
                if (states[u].term != Term::P12) continue;
                for (int l = 0; l < dim; ++l) {
                    if (states[l].term != lower_term) continue;
                    if (states[u].two_m - states[l].two_m != 2 * q) continue;
                    const double c = coupling_coefficient(states[l], states[u], q);
                    if (c == 0.0) continue;
                    if (model == DecayModel::Coherent) {
                        summed(l, u) += std::sqrt(rate) * c;
                    } else {
                        Matrix8c jump = Matrix8c::Zero();
                        jump(l, u) = std::sqrt(rate) * c;
                        out += lindblad_superop(jump);
                    }
                }
            }
            if (model == DecayModel::Coherent) out += lindblad_superop(summed);
        }
    }
    return out;
}

/// Phase diffusion of a laser of FWHM `linewidth` dephases the manifold that
/// rotates with that laser against the rest.
Eigen::MatrixXcd laser_dephasing(Term rotating_term, double linewidth) {
    if (linewidth == 0.0) return Eigen::MatrixXcd::Zero(dim2, dim2);
    return lindblad_superop(std::sqrt(linewidth) * projector(rotating_term));
}

void require_unit(const Eigen::Vector3d& v, const char* key) {
    if (!v.allFinite() || std::abs(v.norm() - 1.0) > 1e-9)
        throw ConfigError(key, "must be a unit vector");
}

}  // namespace

void ExperimentGeometry::validate() const {
    require_unit(b_direction, "b_direction");
    require_unit(laser_k, "laser_k");
    require_unit(laser_polarization, "laser_polarization");
    require_unit(detection_k, "detection_k");
    if (std::abs(laser_polarization.dot(laser_k)) > 1e-9)
        throw ConfigError("laser_polarization", "must be orthogonal to laser_k");
}

std::array<std::complex<double>, 3> spherical_components(const Eigen::Vector3d& v,
                                                         const Eigen::Vector3d& axis) {
    const Eigen::Vector3d z = axis.normalized();
    const Eigen::Vector3d seed =
        std::abs(z.x()) < 0.9 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY();
    const Eigen::Vector3d x = (seed - seed.dot(z) * z).normalized();
    const Eigen::Vector3d y = z.cross(x);
    const double vx = v.dot(x), vy = v.dot(y), vz = v.dot(z);
    const double r = 1.0 / std::sqrt(2.0);
    // A_q = e_q . A with e_{+1} = -(x + i y)/sqrt2, e_0 = z, e_{-1} = (x - i y)/sqrt2
    return {std::complex<double>(r * vx, -r * vy), std::complex<double>(vz, 0.0),
            std::complex<double>(-r * vx, -r * vy)};
}

double DensityMatrix::population(Term term) const {
    double sum = 0.0;
    const auto& states = LevelScheme::states();
    for (int i = 0; i < dim; ++i)
        if (states[i].term == term) sum += rho(i, i).real();
    return sum;
}

double DensityMatrix::hermiticity_error() const {
    const double scale = std::max(rho.norm(), 1e-300);
    return (rho - rho.adjoint()).norm() / scale;
}

double DensityMatrix::min_eigenvalue() const {
    const Matrix8c h = 0.5 * (rho + rho.adjoint());
    Eigen::SelfAdjointEigenSolver<Matrix8c> solver(h, Eigen::EigenvaluesOnly);
    return solver.eigenvalues().minCoeff();
}

Eigen::VectorXcd vectorize(const Matrix8c& rho) {
    Eigen::VectorXcd v(dim2);
    for (int j = 0; j < dim; ++j)
        for (int i = 0; i < dim; ++i) v(i + dim * j) = rho(i, j);
    return v;
}

Matrix8c unvectorize(const Eigen::VectorXcd& v) {
    Matrix8c rho;
    for (int j = 0; j < dim; ++j)
        for (int i = 0; i < dim; ++i) rho(i, j) = v(i + dim * j);
    return rho;
}

Liouvillian build_liouvillian(const LevelScheme& scheme, std::span<const LaserField> lasers,
                              double b_field, const ExperimentGeometry& geometry,
                              const BlochOptions& options) {
    scheme.validate();
    geometry.validate();
    if (!std::isfinite(b_field)) throw ConfigError("b_field", "must be finite");

    Matrix8c h = b_field * zeeman_per_tesla(scheme);
    bool seen[2] = {false, false};
    for (const auto& laser : lasers) {
        laser.validate();
        const Transition t = transition_for_wavelength(scheme, laser.wavelength);
        auto& flag = seen[t == Transition::SP493 ? 0 : 1];
        if (flag)
            throw ConfigError("lasers", "two lasers on the same transition are not supported");
        flag = true;
        h += laser.detuning * projector(LevelScheme::lower_term(t));
        h += rabi_frequency(scheme, laser, t) *
             coupling_per_rabi(t, laser.polarization, geometry.b_direction);
    }

    Liouvillian l;
    l.matrix = hamiltonian_superop(h) + spontaneous_emission(scheme, options.decay) +
               laser_dephasing(Term::S12, options.linewidth_493) +
               laser_dephasing(Term::D32, options.linewidth_650);
    return l;
}

DensityMatrix steady_state(const Liouvillian& liouvillian) {
    const auto& l = liouvillian.matrix;
    if (l.rows() != dim2 || l.cols() != dim2)
        throw ConfigError("liouvillian", "expected a 64x64 superoperator");

    // The rows belonging to diagonal entries sum to zero, so the rho_00 row
    // can be replaced by the trace condition.
    Eigen::MatrixXcd a = l;
    a.row(0).setZero();
    for (int i = 0; i < dim; ++i) a(0, i * (dim + 1)) = 1.0;
    Eigen::VectorXcd b = Eigen::VectorXcd::Zero(dim2);
    b(0) = 1.0;

    Eigen::FullPivLU<Eigen::MatrixXcd> lu(a);
    lu.setThreshold(1e-12);
    if (!lu.isInvertible()) {
        Eigen::JacobiSVD<Eigen::MatrixXcd> svd(l);
        const auto& s = svd.singularValues();
        const double tol = 1e-11 * s(0);
        int null_dim = 0;
        for (Eigen::Index i = 0; i < s.size(); ++i)
            if (s(i) <= tol) ++null_dim;
        throw NonUniqueSteadyState(std::max(null_dim, 2));
    }
    const Eigen::VectorXcd x = lu.solve(b);
    if (!x.allFinite()) throw NumericalError("steady-state solve produced non-finite values");

    DensityMatrix out;
    const Matrix8c rho = unvectorize(x);
    out.rho = 0.5 * (rho + rho.adjoint());
    return out;
}

double relative_residual(const Liouvillian& liouvillian, const DensityMatrix& state) {
    return (liouvillian.matrix * vectorize(state.rho)).norm() / liouvillian.matrix.norm();
}

void BlochParameters::validate() const {
    if (!std::isfinite(detuning_493)) throw ConfigError("detuning_493", "must be finite");
    if (!std::isfinite(detuning_650)) throw ConfigError("detuning_650", "must be finite");
    if (!(intensity_493 >= 0.0) || !std::isfinite(intensity_493))
        throw ConfigError("intensity_493", "must be non-negative");
    if (!(intensity_650 >= 0.0) || !std::isfinite(intensity_650))
        throw ConfigError("intensity_650", "must be non-negative");
    if (!std::isfinite(b_field)) throw ConfigError("b_field", "must be finite");
}

void to_json(nlohmann::json& j, const BlochParameters& p) {
    j = nlohmann::json{{"detuning_493_hz", p.detuning_493 / two_pi},
                       {"detuning_650_hz", p.detuning_650 / two_pi},
                       {"intensity_493_mw_per_cm2", p.intensity_493 / 10.0},
                       {"intensity_650_mw_per_cm2", p.intensity_650 / 10.0},
                       {"b_field_gauss", p.b_field * 1e4}};
}

void from_json(const nlohmann::json& j, BlochParameters& p) {
    p.detuning_493 = two_pi * j.value("detuning_493_hz", p.detuning_493 / two_pi);
    p.detuning_650 = two_pi * j.value("detuning_650_hz", p.detuning_650 / two_pi);
    p.intensity_493 = 10.0 * j.value("intensity_493_mw_per_cm2", p.intensity_493 / 10.0);
    p.intensity_650 = 10.0 * j.value("intensity_650_mw_per_cm2", p.intensity_650 / 10.0);
    p.b_field = 1e-4 * j.value("b_field_gauss", p.b_field * 1e4);
    p.validate();
}

double& detuning_of(BlochParameters& p, ScanAxis axis) {
    return axis == ScanAxis::Detuning493 ? p.detuning_493 : p.detuning_650;
}

double detuning_of(const BlochParameters& p, ScanAxis axis) {
    return axis == ScanAxis::Detuning493 ? p.detuning_493 : p.detuning_650;
}

BlochModel::BlochModel(LevelScheme scheme, ExperimentGeometry geometry, BlochOptions options)
    : scheme_(std::move(scheme)), geometry_(std::move(geometry)), options_(options) {
    scheme_.validate();
    geometry_.validate();
    if (!(options_.linewidth_493 >= 0.0)) throw ConfigError("linewidth_493", "must be >= 0");
    if (!(options_.linewidth_650 >= 0.0)) throw ConfigError("linewidth_650", "must be >= 0");

    dissipator_ = spontaneous_emission(scheme_, options_.decay) +
                  laser_dephasing(Term::S12, options_.linewidth_493) +
                  laser_dephasing(Term::D32, options_.linewidth_650);
    per_detuning_493_ = hamiltonian_superop(projector(Term::S12));
    per_detuning_650_ = hamiltonian_superop(projector(Term::D32));
    per_tesla_ = hamiltonian_superop(zeeman_per_tesla(scheme_));
    per_rabi_493_ = hamiltonian_superop(
        coupling_per_rabi(Transition::SP493, geometry_.laser_polarization, geometry_.b_direction));
    per_rabi_650_ = hamiltonian_superop(
        coupling_per_rabi(Transition::DP650, geometry_.laser_polarization, geometry_.b_direction));
}

std::vector<LaserField> BlochModel::lasers(const BlochParameters& p) const {
    LaserField green{scheme_.wavelength_sp, p.detuning_493, p.intensity_493,
                     geometry_.laser_polarization, geometry_.laser_k};
    LaserField red{scheme_.wavelength_pd, p.detuning_650, p.intensity_650,
                   geometry_.laser_polarization, geometry_.laser_k};
    return {green, red};
}

Liouvillian BlochModel::liouvillian(const BlochParameters& p) const {
    p.validate();
    const auto fields = lasers(p);
    const double rabi_493 = rabi_frequency(scheme_, fields[0], Transition::SP493);
    const double rabi_650 = rabi_frequency(scheme_, fields[1], Transition::DP650);
    Liouvillian l;
    l.matrix = dissipator_ + p.detuning_493 * per_detuning_493_ +
               p.detuning_650 * per_detuning_650_ + p.b_field * per_tesla_ +
               rabi_493 * per_rabi_493_ + rabi_650 * per_rabi_650_;
    return l;
}

DensityMatrix BlochModel::steady_state(const BlochParameters& p) const {
    return ionbeat::steady_state(liouvillian(p));
}

double BlochModel::p_population(const BlochParameters& p) const {
    return steady_state(p).population(Term::P12);
}

std::vector<ScanPoint> BlochModel::excitation_spectrum(const BlochParameters& base, ScanAxis axis,
                                                       std::span<const double> grid) const {
    for (double d : grid)
        if (!std::isfinite(d)) throw ConfigError("grid", "scan grid must be finite");
    std::vector<ScanPoint> out;
    out.reserve(grid.size());
    for (double d : grid) {
        ScanPoint point;
        point.detuning = d;
        BlochParameters p = base;
        detuning_of(p, axis) = d;
        try {
            point.p_population = p_population(p);
        } catch (const Error& e) {
            point.error = e.what();
        }
        out.push_back(std::move(point));
    }
    return out;
}

Derivative BlochModel::p_derivative(const BlochParameters& p, ScanAxis axis, double step) const {
    if (!(step > 0.0)) throw ConfigError("step", "must be positive");
    auto central = [&](double h) {
        BlochParameters plus = p, minus = p;
        detuning_of(plus, axis) += h;
        detuning_of(minus, axis) -= h;
        return (p_population(plus) - p_population(minus)) / (2.0 * h);
    };
    const double coarse = central(step);
    const double fine = central(0.5 * step);
    return {fine + (fine - coarse) / 3.0, std::abs(fine - coarse) / 3.0};
}

}  // namespace ionbeat
