#pragma once

// Levenberg-Marquardt least squares and the two fits built on it: the
// carrier/sideband drive-response traces and fluorescence-vs-detuning scans.

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "ionbeat/bloch.hpp"
#include "ionbeat/spectrum.hpp"

namespace ionbeat {

struct FitParameter {
    std::string name;
    double initial = 0.0;
    double lower = -std::numeric_limits<double>::infinity();
    double upper = std::numeric_limits<double>::infinity();
};

/// Fills `out` with the model prediction at every data point for parameter
/// vector `p`. A NaN prediction masks that point (residual 0).
using ModelFunction = std::function<void(std::span<const double> p, Eigen::VectorXd& out)>;

struct LeastSquaresProblem {
    std::vector<FitParameter> parameters;
    ModelFunction model;
    Eigen::VectorXd y;
    std::optional<Eigen::VectorXd> sigma;  // per-point standard deviation
};

struct LeastSquaresOptions {
    int max_iterations = 200;
    double step_tolerance = 1e-9;   // relative (scaled) step
    double cost_tolerance = 1e-12;  // relative cost decrease
    double jacobian_step = 1e-6;    // relative finite-difference step
    bool parallel_jacobian = false;
};

struct FitResult {
    std::vector<std::string> names;
    std::vector<double> values;
    std::vector<double> standard_errors;  // empty unless converged
    Eigen::MatrixXd covariance;           // empty unless converged
    double residual_norm = 0.0;           // sqrt(sum of squared weighted residuals)
    int iterations = 0;
    bool converged = false;
    int data_points = 0;
    int masked_points = 0;
    std::string message;
    Eigen::VectorXd residuals;  // weighted, masked points 0

    double value(const std::string& name) const;
    double error(const std::string& name) const;
};

void to_json(nlohmann::json& j, const FitResult& r);

FitResult least_squares(const LeastSquaresProblem& problem, const LeastSquaresOptions& options = {});

/// Convenience form for a scalar model y = f(x; p).
FitResult least_squares(const std::vector<FitParameter>& parameters,
                        const std::function<double(double, std::span<const double>)>& f,
                        std::span<const double> x, std::span<const double> y,
                        std::optional<std::span<const double>> sigma = std::nullopt,
                        const LeastSquaresOptions& options = {});

// ---------------------------------------------------------------------------
// Drive-response traces: P_n(f) = |A_n J_n(m(f))|^2 with the Lorentzian m(f).

enum class TraceKind { CarrierJ0, SidebandJ1, BlochScan };

/// Parameters of a single-trace fit. For the J0/J1 kinds the names are the
/// amplitude ("A0" or "A1"), "m_max", "delta_f" and "f_macro"; each must be
/// either fixed or free.
struct TraceModel {
    TraceKind kind = TraceKind::CarrierJ0;
    std::map<std::string, double> fixed;
    std::vector<FitParameter> free;

    void validate() const;
};

/// Trace power is the floor-subtracted linear bin power; sigma is the
/// noise-floor bin power divided by sqrt(averages).
struct TraceData {
    std::vector<double> f_drive;
    std::vector<double> power;
    std::vector<double> sigma;
};

TraceData trace_data(const SpectrumTrace& trace, bool subtract_floor = true);

FitResult fit_trace(const TraceModel& model, const TraceData& data,
                    const LeastSquaresOptions& options = {});

struct SidebandFitOptions {
    bool subtract_floor = true;
    bool weighted = true;  // sigma from the noise floor, otherwise unit weights
    /// Fit 10 log10(power) against 10 log10(model + floor) with unit weights;
    /// subtract_floor and weighted are then ignored.
    bool fit_in_db = false;
    LeastSquaresOptions least_squares;
};

/// Joint fit of both traces sharing (m_max, delta_f, f_macro); parameters
/// A0, A1, m_max, delta_f, f_macro. Throws NonIdentifiable when the sideband
/// trace shows no response above its noise.
FitResult fit_sideband_pair(const SpectrumTrace& carrier, const SpectrumTrace& sideband,
                            const SidebandFitOptions& options = {});

struct SeparateSidebandFits {
    FitResult carrier;   // A0, m_max, delta_f, f_macro
    FitResult sideband;  // A1, m_max, delta_f, f_macro
};

SeparateSidebandFits fit_sideband_traces_separately(const SpectrumTrace& carrier,
                                                    const SpectrumTrace& sideband,
                                                    const SidebandFitOptions& options = {});

struct SidebandTraceSpec {
    double m_max = 1.5;
    double delta_f = 750.0;      // Hz
    double f_macro = 620.5e3;    // Hz
    double a0 = 1.0;
    double a1 = 1.0;
    double half_span = 3e3;      // Hz around f_macro
    int points = 121;
    double noise_fraction = 0.01;  // Gaussian noise std relative to the trace peak
    int averages = 25;             // floor = noise std * sqrt(averages)
    std::uint64_t seed = 1;
};

struct SidebandTraces {
    SpectrumTrace carrier;
    SpectrumTrace sideband;
};

/// Carrier and first-sideband power vs drive frequency with a white floor
/// and Gaussian bin noise, as a spectrum analyzer would record them.
SidebandTraces synthesize_sideband_traces(const SidebandTraceSpec& spec);

// ---------------------------------------------------------------------------
// Fluorescence scans over the 650 nm detuning.

struct ScanData {
    std::vector<double> detuning_650;  // Hz
    std::vector<double> signal;
    std::vector<double> sigma;  // empty for unit weights
};

/// Free-parameter names: "detuning_493_hz", "intensity_493_mw_per_cm2",
/// "intensity_650_mw_per_cm2", "b_field_gauss", "scale".
struct BlochFitOptions {
    BlochParameters initial;
    double initial_scale = 1.0;
    std::vector<std::string> free{"detuning_493_hz", "intensity_493_mw_per_cm2",
                                  "intensity_650_mw_per_cm2", "b_field_gauss", "scale"};
    LeastSquaresOptions least_squares{.parallel_jacobian = true};
};

/// Fits scale * P_P(detuning_650) to the scan. Points whose steady state
/// fails are masked; a fit with every point masked throws NumericalError.
FitResult fit_bloch_scan(const BlochModel& model, const ScanData& data,
                         const BlochFitOptions& options = {});

/// scale * P_P over `detuning_650_hz` plus Gaussian noise of std
/// noise_fraction * max(signal). sigma is set to that std when noise > 0.
ScanData synthesize_bloch_scan(const BlochModel& model, const BlochParameters& p,
                               std::span<const double> detuning_650_hz, double noise_fraction,
                               std::uint64_t seed, double scale = 1.0);

void write_scan_csv(std::ostream& os, const ScanData& data);
ScanData read_scan_csv(std::istream& is);

/// Ljung-Box statistic of a residual series over `lags` lags.
double ljung_box(std::span<const double> residuals, int lags);

}  // namespace ionbeat
