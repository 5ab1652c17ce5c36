#include "ionbeat/atom.hpp"

#include <cmath>
#include <cstdlib>
#include <limits>

#include <nlohmann/json.hpp>

#include "ionbeat/errors.hpp"

namespace ionbeat {

namespace {

double factorial(int n) {
    if (n < 0) return std::numeric_limits<double>::infinity();
    return std::tgamma(n + 1.0);
}

bool triangle_ok(int tj1, int tj2, int tj3) {
    return tj3 >= std::abs(tj1 - tj2) && tj3 <= tj1 + tj2 && (tj1 + tj2 + tj3) % 2 == 0;
}

bool projection_ok(int tj, int tm) {
    return std::abs(tm) <= tj && (tj + tm) % 2 == 0;
}

void require_unit(const Eigen::Vector3d& v, const char* key) {
    if (!v.allFinite() || std::abs(v.norm() - 1.0) > 1e-9)
        throw ConfigError(key, "must be a unit vector");
}

}  // namespace

void PhysicalConstants::validate() const {
    auto positive = [](double v, const char* key) {
        if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(key, "must be positive");
    };
    positive(planck_reduced, "planck_reduced");
    positive(bohr_magneton, "bohr_magneton");
    positive(speed_of_light, "speed_of_light");
    positive(atomic_mass_unit, "atomic_mass_unit");
    positive(ion_mass, "ion_mass");
}

std::string to_string(Term term) {
    switch (term) {
        case Term::S12: return "S1/2";
        case Term::P12: return "P1/2";
        case Term::D32: return "D3/2";
    }
    return "?";
}

int twice_j(Term term) {
    return term == Term::D32 ? 3 : 1;
}

const std::array<Sublevel, num_levels>& LevelScheme::states() {
    static const std::array<Sublevel, num_levels> basis{{
        {Term::S12, -1}, {Term::S12, +1},
        {Term::P12, -1}, {Term::P12, +1},
        {Term::D32, -3}, {Term::D32, -1}, {Term::D32, +1}, {Term::D32, +3},
    }};
    return basis;
}

int LevelScheme::index(Sublevel s) {
    if (!projection_ok(twice_j(s.term), s.two_m))
        throw DomainError("invalid m=" + std::to_string(s.two_m) + "/2 for " + to_string(s.term));
    switch (s.term) {
        case Term::S12: return (s.two_m + 1) / 2;
        case Term::P12: return 2 + (s.two_m + 1) / 2;
        case Term::D32: return 4 + (s.two_m + 3) / 2;
    }
    throw DomainError("unknown term");
}

double LevelScheme::lande_g(Term term) const {
    switch (term) {
        case Term::S12: return g_s;
        case Term::P12: return g_p;
        case Term::D32: return g_d;
    }
    throw DomainError("unknown term");
}

double LevelScheme::partial_width(Transition t) const {
    return t == Transition::SP493 ? gamma_sp : gamma_pd;
}

double LevelScheme::wavelength(Transition t) const {
    return t == Transition::SP493 ? wavelength_sp : wavelength_pd;
}

Term LevelScheme::lower_term(Transition t) {
    return t == Transition::SP493 ? Term::S12 : Term::D32;
}

void LevelScheme::validate() const {
    constants.validate();
    if (!(gamma_sp > 0.0)) throw ConfigError("gamma_sp", "must be positive");
    if (!(gamma_pd >= 0.0)) throw ConfigError("gamma_pd", "must be non-negative");
    if (!(wavelength_sp > 0.0)) throw ConfigError("wavelength_sp", "must be positive");
    if (!(wavelength_pd > 0.0)) throw ConfigError("wavelength_pd", "must be positive");
    if (std::abs(wavelength_sp - wavelength_pd) < 2e-9)
        throw ConfigError("wavelength_pd", "transitions must have distinct wavelengths");
}

Transition transition_for_wavelength(const LevelScheme& scheme, double wavelength) {
    constexpr double tolerance = 1e-9;
    if (std::abs(wavelength - scheme.wavelength_sp) <= tolerance) return Transition::SP493;
    if (std::abs(wavelength - scheme.wavelength_pd) <= tolerance) return Transition::DP650;
    throw DomainError("no transition at wavelength " + std::to_string(wavelength * 1e9) + " nm");
}

void LaserField::validate() const {
    if (!(wavelength > 0.0)) throw ConfigError("wavelength", "must be positive");
    if (!std::isfinite(detuning)) throw ConfigError("detuning", "must be finite");
    if (!(intensity >= 0.0) || !std::isfinite(intensity))
        throw ConfigError("intensity", "must be non-negative");
    require_unit(polarization, "polarization");
    require_unit(k_direction, "k_direction");
    if (std::abs(polarization.dot(k_direction)) > 1e-9)
        throw ConfigError("polarization", "must be orthogonal to k_direction");
}

double zeeman_shift(const LevelScheme& scheme, Term term, int two_m, double b_field) {
    if (!projection_ok(twice_j(term), two_m))
        throw DomainError("invalid m=" + std::to_string(two_m) + "/2 for " + to_string(term));
    const auto& c = scheme.constants;
    return scheme.lande_g(term) * 0.5 * two_m * c.bohr_magneton * b_field / c.planck_reduced;
}

double clebsch_gordan(int tj1, int tm1, int tj2, int tm2, int tj, int tm) {
    if (tm1 + tm2 != tm) return 0.0;
    if (!triangle_ok(tj1, tj2, tj)) return 0.0;
    if (!projection_ok(tj1, tm1) || !projection_ok(tj2, tm2) || !projection_ok(tj, tm)) return 0.0;

    const int a = (tj1 + tj2 - tj) / 2;
    const int b = (tj1 - tm1) / 2;
    const int c = (tj2 + tm2) / 2;
    const int d = (tj - tj2 + tm1) / 2;
    const int e = (tj - tj1 - tm2) / 2;

    const double prefactor = std::sqrt(
        (tj + 1) * factorial((tj + tj1 - tj2) / 2) * factorial((tj - tj1 + tj2) / 2) *
        factorial(a) / factorial((tj1 + tj2 + tj) / 2 + 1));
    const double projections = std::sqrt(
        factorial((tj + tm) / 2) * factorial((tj - tm) / 2) *
        factorial((tj1 - tm1) / 2) * factorial((tj1 + tm1) / 2) *
        factorial((tj2 - tm2) / 2) * factorial((tj2 + tm2) / 2));

    double sum = 0.0;
    for (int k = 0; k <= a + b + c; ++k) {
        if (a - k < 0 || b - k < 0 || c - k < 0 || d + k < 0 || e + k < 0) continue;
        const double denom = factorial(k) * factorial(a - k) * factorial(b - k) *
                             factorial(c - k) * factorial(d + k) * factorial(e + k);
        sum += (k % 2 == 0 ? 1.0 : -1.0) / denom;
    }
    return prefactor * projections * sum;
}

double wigner_3j(int tj1, int tj2, int tj3, int tm1, int tm2, int tm3) {
    if (tm1 + tm2 + tm3 != 0) return 0.0;
    const int phase_twice = tj1 - tj2 - tm3;  // always even for valid input
    const double sign = ((phase_twice / 2) % 2 == 0) ? 1.0 : -1.0;
    return sign / std::sqrt(tj3 + 1.0) * clebsch_gordan(tj1, tm1, tj2, tm2, tj3, -tm3);
}

double coupling_coefficient(Sublevel lower, Sublevel upper, int q) {
    if (upper.term != Term::P12 || lower.term == Term::P12)
        throw DomainError("states " + to_string(lower.term) + " and " + to_string(upper.term) +
                          " are not dipole-connected");
    if (q < -1 || q > 1) throw DomainError("q must be -1, 0 or +1");
    LevelScheme::index(lower);
    LevelScheme::index(upper);
    return clebsch_gordan(twice_j(lower.term), lower.two_m, 2, 2 * q, 1, upper.two_m);
}

double saturation_intensity(const LevelScheme& scheme, Transition t) {
    const auto& c = scheme.constants;
    const double h = two_pi * c.planck_reduced;
    const double lambda = scheme.wavelength(t);
    return std::numbers::pi * h * c.speed_of_light * scheme.partial_width(t) /
           (3.0 * lambda * lambda * lambda);
}

double rabi_frequency(const LevelScheme& scheme, const LaserField& laser, Transition t) {
    if (transition_for_wavelength(scheme, laser.wavelength) != t)
        throw DomainError("laser wavelength does not match the requested transition");
    if (laser.intensity < 0.0) throw DomainError("negative intensity");
    const double gamma = scheme.partial_width(t);
    if (gamma == 0.0) return 0.0;
    return gamma * std::sqrt(laser.intensity / (2.0 * saturation_intensity(scheme, t)));
}

double recoil_frequency(double mass, double wavelength, const PhysicalConstants& c) {
    if (!(mass > 0.0)) throw DomainError("mass must be positive");
    if (!(wavelength > 0.0)) throw DomainError("wavelength must be positive");
    const double k = two_pi / wavelength;
    return c.planck_reduced * k * k / (2.0 * mass);
}

void to_json(nlohmann::json& j, const PhysicalConstants& c) {
    j = nlohmann::json{{"planck_reduced", c.planck_reduced},
                       {"bohr_magneton", c.bohr_magneton},
                       {"speed_of_light", c.speed_of_light},
                       {"atomic_mass_unit", c.atomic_mass_unit},
                       {"ion_mass", c.ion_mass}};
}

void from_json(const nlohmann::json& j, PhysicalConstants& c) {
    c.planck_reduced = j.value("planck_reduced", c.planck_reduced);
    c.bohr_magneton = j.value("bohr_magneton", c.bohr_magneton);
    c.speed_of_light = j.value("speed_of_light", c.speed_of_light);
    c.atomic_mass_unit = j.value("atomic_mass_unit", c.atomic_mass_unit);
    c.ion_mass = j.value("ion_mass", c.ion_mass);
    c.validate();
}

void to_json(nlohmann::json& j, const LevelScheme& s) {
    j = nlohmann::json{{"constants", s.constants},
                       {"g_s", s.g_s},
                       {"g_p", s.g_p},
                       {"g_d", s.g_d},
                       {"gamma_sp_hz", s.gamma_sp / two_pi},
                       {"gamma_pd_hz", s.gamma_pd / two_pi},
                       {"wavelength_sp", s.wavelength_sp},
                       {"wavelength_pd", s.wavelength_pd}};
}

void from_json(const nlohmann::json& j, LevelScheme& s) {
    if (j.contains("constants")) j.at("constants").get_to(s.constants);
    s.g_s = j.value("g_s", s.g_s);
    s.g_p = j.value("g_p", s.g_p);
    s.g_d = j.value("g_d", s.g_d);
    s.gamma_sp = two_pi * j.value("gamma_sp_hz", s.gamma_sp / two_pi);
    s.gamma_pd = two_pi * j.value("gamma_pd_hz", s.gamma_pd / two_pi);
    s.wavelength_sp = j.value("wavelength_sp", s.wavelength_sp);
    s.wavelength_pd = j.value("wavelength_pd", s.wavelength_pd);
    s.validate();
}

}  // namespace ionbeat
