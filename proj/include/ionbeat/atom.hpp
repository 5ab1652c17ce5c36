#pragma once

// Ba+ level structure, constants and single-transition quantities.

#include <array>
#include <numbers>
#include <string>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

namespace ionbeat {

inline constexpr double two_pi = 2.0 * std::numbers::pi;

/// Convert Hz to angular frequency (rad/s).
constexpr double angular(double hz) { return two_pi * hz; }

struct PhysicalConstants {
    double planck_reduced = 1.054571817e-34;    // J s
    double bohr_magneton = 9.2740100783e-24;    // J/T
    double speed_of_light = 299792458.0;        // m/s
    double atomic_mass_unit = 1.66053906660e-27;  // kg
    double ion_mass = 137.9 * 1.66053906660e-27;  // kg, 138Ba

    void validate() const;
};

enum class Term { S12, P12, D32 };

std::string to_string(Term term);

/// Twice the total angular momentum J of a term.
int twice_j(Term term);

/// One Zeeman sublevel. The magnetic quantum number is stored doubled so
/// half-integers stay exact.
struct Sublevel {
    Term term;
    int two_m;

    double m() const { return 0.5 * two_m; }
    bool operator==(const Sublevel&) const = default;
};

enum class Transition { SP493, DP650 };

inline constexpr int num_levels = 8;

struct LevelScheme {
    PhysicalConstants constants;
    double g_s = 2.0;
    double g_p = 2.0 / 3.0;
    double g_d = 4.0 / 5.0;
    double gamma_sp = angular(15.1e6);  // P1/2 -> S1/2 partial width, rad/s
    double gamma_pd = angular(5.3e6);   // P1/2 -> D3/2 partial width, rad/s
    double wavelength_sp = 493.4e-9;
    double wavelength_pd = 649.7e-9;

    /// Basis order used by every density matrix:
    /// S(-1/2) S(+1/2) P(-1/2) P(+1/2) D(-3/2) D(-1/2) D(+1/2) D(+3/2).
    static const std::array<Sublevel, num_levels>& states();
    static int index(Sublevel s);

    double lande_g(Term term) const;
    double gamma_total() const { return gamma_sp + gamma_pd; }
    double partial_width(Transition t) const;
    double wavelength(Transition t) const;
    static Term lower_term(Transition t);

    void validate() const;
};

/// Identify the transition a laser of this wavelength addresses (1 nm tolerance).
Transition transition_for_wavelength(const LevelScheme& scheme, double wavelength);

struct LaserField {
    double wavelength = 493.4e-9;  // m
    double detuning = 0.0;         // rad/s, relative to the field-free line
    double intensity = 0.0;        // W/m^2
    Eigen::Vector3d polarization{0.0, 1.0, 0.0};
    Eigen::Vector3d k_direction{1.0, 0.0, 0.0};

    void validate() const;
};

/// Signed Zeeman shift g m mu_B B / hbar in rad/s. Negative `b_field` means a
/// field antiparallel to the quantization axis.
double zeeman_shift(const LevelScheme& scheme, Term term, int two_m, double b_field);

/// Normalized dipole amplitude <J_l m_l; 1 q | J_u m_u> between a lower
/// sublevel (S1/2 or D3/2) and a P1/2 sublevel. Zero unless m_u - m_l = q.
double coupling_coefficient(Sublevel lower, Sublevel upper, int q);

/// Clebsch-Gordan coefficient <j1 m1; j2 m2 | J M>, all arguments doubled.
double clebsch_gordan(int tj1, int tm1, int tj2, int tm2, int tj, int tm);

/// Wigner 3-j symbol, all arguments doubled.
double wigner_3j(int tj1, int tj2, int tj3, int tm1, int tm2, int tm3);

/// I_sat = pi h c Gamma_t / (3 lambda^3) for the given transition, W/m^2.
double saturation_intensity(const LevelScheme& scheme, Transition t);

/// Omega = Gamma_t sqrt(I / (2 I_sat)), rad/s.
double rabi_frequency(const LevelScheme& scheme, const LaserField& laser, Transition t);

/// hbar k^2 / (2 M) in rad/s.
double recoil_frequency(double mass, double wavelength, const PhysicalConstants& c = {});

void to_json(nlohmann::json& j, const PhysicalConstants& c);
void from_json(const nlohmann::json& j, PhysicalConstants& c);
void to_json(nlohmann::json& j, const LevelScheme& s);
void from_json(const nlohmann::json& j, LevelScheme& s);

}  // namespace ionbeat
