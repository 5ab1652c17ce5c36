#pragma once

// Signal-processing building blocks used by the heterodyne analyzer.

#include <complex>
#include <cstdint>
#include <span>
#include <vector>

namespace ionbeat::dsp {

using cdouble = std::complex<double>;

enum class Window { Hann, Uniform };

std::vector<double> make_window(Window w, std::size_t n);

/// Equivalent noise bandwidth of a window, in bins.
double enbw_bins(Window w);

/// Linear-phase Blackman-windowed sinc low-pass with unit DC gain.
/// `cutoff` is the -6 dB point as a fraction of the sample rate.
std::vector<double> design_lowpass(std::size_t num_taps, double cutoff);

/// Streaming FIR filter followed by down-sampling. Only complete outputs are
/// produced, so no start-up transient appears in the output.
class FirDecimator {
public:
    FirDecimator(std::vector<double> taps, int factor);

    void process(std::span<const cdouble> in, std::vector<cdouble>& out);

    int factor() const { return factor_; }
    std::size_t num_taps() const { return taps_.size(); }

private:
    std::vector<double> taps_;
    int factor_;
    std::vector<cdouble> buffer_;
    std::size_t next_ = 0;
};

/// Chain of decimating low-pass stages from `input_rate` down to
/// `output_rate` that keeps [0, passband] free of aliases.
class DecimationChain {
public:
    DecimationChain(double input_rate, double output_rate, double passband);

    void process(std::span<const cdouble> in, std::vector<cdouble>& out);

    const std::vector<FirDecimator>& stages() const { return stages_; }

private:
    std::vector<FirDecimator> stages_;
    std::vector<cdouble> scratch_a_, scratch_b_;
};

/// Phase of a fixed-frequency oscillator in cycles, kept in [0, 1) across
/// blocks so long records do not lose precision.
class PhaseAccumulator {
public:
    PhaseAccumulator(double frequency, double sample_rate);

    /// Phase (cycles) of sample `i` of the current block.
    double cycles(std::size_t i) const { return base_ + step_ * static_cast<double>(i); }
    void advance(std::size_t n);

private:
    double step_;
    double base_ = 0.0;
};

/// In-place forward FFT (FFTW, unnormalized).
void fft_forward(std::vector<cdouble>& data);

/// Running average of windowed periodograms over equal-length segments.
class WelchAccumulator {
public:
    WelchAccumulator(Window w, std::size_t n);

    void add(std::span<const cdouble> segment);
    int segments() const { return segments_; }
    std::size_t size() const { return window_.size(); }

    /// Bin k is the power at k * rate / n in units of |z|^2; a tone exactly
    /// on a bin reads its own power.
    std::vector<double> result() const;

private:
    std::vector<double> window_;
    double gain2_ = 0.0;
    std::vector<double> sum_;
    std::vector<cdouble> buf_;
    int segments_ = 0;
};

/// Averaged modified periodogram of a complex record. Bin k of the result is
/// the power at frequency k * rate / n in the units of |z|^2, normalized so a
/// tone exactly on a bin reads its own power.
std::vector<double> periodogram(std::span<const cdouble> z, Window w, std::size_t n,
                                int averages);

}  // namespace ionbeat::dsp
