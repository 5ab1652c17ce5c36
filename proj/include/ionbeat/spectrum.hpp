#pragma once

// Heterodyne signal synthesis and the mixer + FFT spectrum-analyzer chain.
//
// Power units: the subtracted photodiode signal is normalized so that the
// local-oscillator shot noise has a one-sided density of 1 per Hz. An
// unmodulated carrier then has power N_eff = mode_matching * efficiency *
// photon_rate / extra_loss, and SNR in one resolution bandwidth is
// N_eff / RBW.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "ionbeat/dsp.hpp"

namespace ionbeat {

using dsp::Window;

struct HeterodyneConfig {
    double f_aom1 = 112.5e6;  // Hz, exciting beam
    double f_aom2 = 80e6;     // Hz, local oscillator
    double f_mix = 32.45e6;   // Hz
    double f_paul = 18.53e6;  // Hz
    double resolution_bandwidth = 1.0;  // Hz
    double photon_rate = 4e4;           // detected-solid-angle photons per second
    double quantum_efficiency = 0.8;
    double mode_matching = 1.0;
    double extra_loss = 1.0;            // >= 1, unexplained additional loss factor
    double lowpass_cutoff = 100e3;      // Hz
    double analyzer_rate = 256e3;       // Hz, complex sample rate after decimation
    Window window = Window::Hann;
    int averages = 1;

    double f_beat() const { return f_aom1 - f_aom2; }
    double effective_photon_rate() const;
    void validate() const;
};

void to_json(nlohmann::json& j, const HeterodyneConfig& c);
void from_json(const nlohmann::json& j, HeterodyneConfig& c);

struct Line {
    double frequency = 0.0;       // Hz
    double relative_power = 0.0;  // fraction of the unmodulated carrier
    double width = 0.0;           // Hz, 0 for a delta line
};

struct LineList {
    std::vector<Line> lines;
    double total_power() const;
};

void to_json(nlohmann::json& j, const LineList& l);
void from_json(const nlohmann::json& j, LineList& l);

struct MacroModulation {
    double f_drive = 620.5e3;  // Hz
    double m_macro = 0.0;
};

struct Modulation {
    double m_micro = 0.0;
    int micro_order_max = 3;
    std::optional<MacroModulation> macro;
    int macro_order_max = 1;
};

/// J_n(m) for any integer n, including negative orders.
double bessel_j(int n, double m);

/// Carrier at f_beat with weight J0(m)^2, micromotion sidebands at
/// f_beat + n f_paul with weight J_n(m)^2, each optionally split again by the
/// macromotion at f_drive.
LineList compose_lines(const HeterodyneConfig& config, const Modulation& modulation);

struct SynthesisOptions {
    double duration = 1e-3;      // s
    double sample_rate = 204.8e6;
    std::uint64_t seed = 1;
    bool noise = true;
};

/// Streaming generator of the subtracted photodiode current
/// S(t) = C cos(2 pi f_beat t + m sin(2 pi f_paul t) + m_macro sin(2 pi f_drive t)) + noise.
class HeterodyneSource {
public:
    HeterodyneSource(const HeterodyneConfig& config, const Modulation& modulation,
                     const SynthesisOptions& options);

    std::size_t total_samples() const { return total_; }
    std::size_t remaining() const { return total_ - produced_; }
    double sample_rate() const { return options_.sample_rate; }
    double carrier_amplitude() const { return amplitude_; }
    double noise_sigma() const { return sigma_; }

    /// Fill up to out.size() samples; returns the number written.
    std::size_t generate(std::span<double> out);

private:
    HeterodyneConfig config_;
    Modulation modulation_;
    SynthesisOptions options_;
    std::size_t total_ = 0;
    std::size_t produced_ = 0;
    double amplitude_ = 0.0;
    double sigma_ = 0.0;
    dsp::PhaseAccumulator carrier_, micro_, macro_;
    std::mt19937_64 rng_;
    std::normal_distribution<double> gauss_;
};

std::vector<double> synthesize_timeseries(const HeterodyneConfig& config,
                                          const Modulation& modulation,
                                          const SynthesisOptions& options);

struct SpectrumTrace {
    std::vector<double> bin_centers;  // Hz
    std::vector<double> power;
    bool power_in_db = false;
    double resolution_bandwidth = 0.0;  // Hz, effective noise bandwidth of one bin
    double noise_floor = 0.0;           // linear power per Hz
    std::uint64_t seed = 0;
    int averages = 1;                   // periodograms averaged per bin

    double bin_spacing() const;
    SpectrumTrace to_db() const;
    SpectrumTrace to_linear() const;
    std::size_t nearest_bin(double frequency) const;
};

/// Multiply by exp(-2 pi i f_mix t) (in-phase arm = cos), low-pass to
/// `lowpass_cutoff` with the decimating FIR chain, then compute the windowed
/// periodogram with equivalent noise bandwidth `resolution_bandwidth`. The
/// trace covers 0 .. lowpass_cutoff.
SpectrumTrace analyzer(std::span<const double> samples, double sample_rate,
                       const HeterodyneConfig& config);

/// Same chain, fed block by block from a source (for records too long to hold).
SpectrumTrace analyze_source(HeterodyneSource& source, const HeterodyneConfig& config);

/// Draws the analyzer's complex baseband record directly: every line of
/// compose_lines inside the pass band plus complex white noise of the density
/// that the full mixer chain delivers. Statistically identical to
/// synthesize_timeseries + analyzer for an ideal pass band, at a fraction of
/// the cost for long records.
SpectrumTrace analyze_baseband_equivalent(const HeterodyneConfig& config,
                                          const Modulation& modulation, double duration,
                                          std::uint64_t seed, bool noise = true);

/// Number of complex samples the analyzer needs for one periodogram segment.
std::size_t segment_length(const HeterodyneConfig& config);

/// One-sided power spectrum of a real record: bin k holds the power of a
/// tone at k * rate / n (A cos -> A^2 / 2).
SpectrumTrace real_power_spectrum(std::span<const double> samples, double sample_rate,
                                  Window window = Window::Uniform);

/// 10 log10(N_eff / RBW).
double snr_budget(const HeterodyneConfig& config);

/// Mode matching that makes snr_budget equal `target_db`.
double mode_matching_for_snr(const HeterodyneConfig& config, double target_db);

/// Peak power near `frequency` (+-1 bin) over the trace's noise power per bin, in dB.
double measure_snr_db(const SpectrumTrace& trace, double frequency);

/// Robust estimate of the white-noise floor (linear power per Hz) from the
/// median bin power.
double estimate_noise_floor(std::span<const double> bin_power, double rbw, int averages);

/// Smallest micromotion amplitude along `direction` whose first sideband,
/// (m/2)^2 of the carrier, equals the noise in one RBW: m_min = 2 * 10^(-SNR/20).
/// Returns +infinity when `direction` has no projection on k_d - k_l.
double min_detectable_micromotion(double snr_db, const Eigen::Vector3d& k_laser,
                                  const Eigen::Vector3d& k_detect,
                                  const Eigen::Vector3d& direction);

double min_detectable_micromotion(const HeterodyneConfig& config, const Eigen::Vector3d& k_laser,
                                  const Eigen::Vector3d& k_detect,
                                  const Eigen::Vector3d& direction);

/// CSV: header lines "# rbw_hz: ...", "# noise_floor_db: ...", "# averages: ...", "# seed: ...",
/// then "freq_hz,power_db" rows. noise_floor_db is 10 log10 of the floor per Hz.
void write_trace_csv(std::ostream& os, const SpectrumTrace& trace);
SpectrumTrace read_trace_csv(std::istream& is);

}  // namespace ionbeat
