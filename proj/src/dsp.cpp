#include "ionbeat/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>

#include <fftw3.h>

#include "ionbeat/errors.hpp"

namespace ionbeat::dsp {

namespace {

std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

std::vector<int> stage_factors(long long total) {
    std::vector<int> primes;
    for (long long p = 2; p * p <= total; ++p)
        while (total % p == 0) {
            primes.push_back(static_cast<int>(p));
            total /= p;
        }
    if (total > 1) primes.push_back(static_cast<int>(total));
    std::sort(primes.rbegin(), primes.rend());

    std::vector<int> stages;
    for (int p : primes) {
        bool placed = false;
        for (int& s : stages)
            if (s * p <= 16) {
                s *= p;
                placed = true;
                break;
            }
        if (!placed) stages.push_back(p);
    }
    std::sort(stages.rbegin(), stages.rend());
    return stages;
}

}  // namespace

std::vector<double> make_window(Window w, std::size_t n) {
    std::vector<double> out(n, 1.0);
    if (w == Window::Hann)
        for (std::size_t i = 0; i < n; ++i)
            out[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                          static_cast<double>(n));
    return out;
}

double enbw_bins(Window w) {
    return w == Window::Hann ? 1.5 : 1.0;
}

std::vector<double> design_lowpass(std::size_t num_taps, double cutoff) {
    if (num_taps < 3 || num_taps % 2 == 0) throw ConfigError("num_taps", "must be odd and >= 3");
    if (!(cutoff > 0.0 && cutoff < 0.5)) throw ConfigError("cutoff", "must lie in (0, 0.5)");
    std::vector<double> taps(num_taps);
    const double center = 0.5 * static_cast<double>(num_taps - 1);
    const double pi = std::numbers::pi;
    double sum = 0.0;
    for (std::size_t i = 0; i < num_taps; ++i) {
        const double x = static_cast<double>(i) - center;
        const double sinc = x == 0.0 ? 2.0 * cutoff : std::sin(2.0 * pi * cutoff * x) / (pi * x);
        const double phase = 2.0 * pi * static_cast<double>(i) / static_cast<double>(num_taps - 1);
        const double blackman = 0.42 - 0.5 * std::cos(phase) + 0.08 * std::cos(2.0 * phase);
        taps[i] = sinc * blackman;
        sum += taps[i];
    }
    for (double& t : taps) t /= sum;
    return taps;
}

FirDecimator::FirDecimator(std::vector<double> taps, int factor)
    : taps_(std::move(taps)), factor_(factor) {
    if (taps_.empty()) throw ConfigError("taps", "empty filter");
    if (factor_ < 1) throw ConfigError("factor", "must be >= 1");
}

void FirDecimator::process(std::span<const cdouble> in, std::vector<cdouble>& out) {
    buffer_.insert(buffer_.end(), in.begin(), in.end());
    const std::size_t n = taps_.size();
    while (next_ + n <= buffer_.size()) {
        const cdouble* x = buffer_.data() + next_;
        double re = 0.0, im = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            re += taps_[k] * x[k].real();
            im += taps_[k] * x[k].imag();
        }
        out.emplace_back(re, im);
        next_ += static_cast<std::size_t>(factor_);
    }
    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(next_));
    next_ = 0;
}

DecimationChain::DecimationChain(double input_rate, double output_rate, double passband) {
    if (!(output_rate > 2.0 * passband))
        throw ConfigError("analyzer_rate", "must exceed twice the low-pass cutoff");
    const double ratio = input_rate / output_rate;
    const auto total = static_cast<long long>(std::llround(ratio));
    if (total < 2 || std::abs(ratio - static_cast<double>(total)) > 1e-9 * ratio)
        throw ConfigError("sample_rate",
                          "must be an integer multiple (>= 2) of the analyzer rate");

    double rate = input_rate;
    for (int factor : stage_factors(total)) {
        const double out_rate = rate / factor;
        const double stop = out_rate - passband;
        const double transition = stop - passband;
        auto taps = static_cast<std::size_t>(std::ceil(5.5 * rate / transition));
        taps = std::max<std::size_t>(taps | 1u, 3);
        const double cutoff = 0.5 * (passband + stop) / rate;
        stages_.emplace_back(design_lowpass(taps, cutoff), factor);
        rate = out_rate;
    }
}

void DecimationChain::process(std::span<const cdouble> in, std::vector<cdouble>& out) {
    scratch_a_.assign(in.begin(), in.end());
    for (std::size_t s = 0; s < stages_.size(); ++s) {
        scratch_b_.clear();
        stages_[s].process(scratch_a_, scratch_b_);
        std::swap(scratch_a_, scratch_b_);
    }
    out.insert(out.end(), scratch_a_.begin(), scratch_a_.end());
}

PhaseAccumulator::PhaseAccumulator(double frequency, double sample_rate)
    : step_(frequency / sample_rate) {}

void PhaseAccumulator::advance(std::size_t n) {
    const double whole = step_ * static_cast<double>(n);
    base_ += whole - std::floor(whole);
    base_ -= std::floor(base_);
}

void fft_forward(std::vector<cdouble>& data) {
    const int n = static_cast<int>(data.size());
    auto* ptr = reinterpret_cast<fftw_complex*>(data.data());
    fftw_plan plan;
    {
        std::lock_guard lock(planner_mutex());
        plan = fftw_plan_dft_1d(n, ptr, ptr, FFTW_FORWARD, FFTW_ESTIMATE);
    }
    if (plan == nullptr) throw NumericalError("FFTW planning failed");
    fftw_execute(plan);
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
}

WelchAccumulator::WelchAccumulator(Window w, std::size_t n)
    : window_(make_window(w, n)), sum_(n, 0.0), buf_(n) {
    if (n == 0) throw ConfigError("resolution_bandwidth", "empty segment");
    double gain = 0.0;
    for (double v : window_) gain += v;
    gain2_ = gain * gain;
}

void WelchAccumulator::add(std::span<const cdouble> segment) {
    const std::size_t n = window_.size();
    if (segment.size() != n) throw ConfigError("segment", "length mismatch");
    for (std::size_t i = 0; i < n; ++i) buf_[i] = segment[i] * window_[i];
    fft_forward(buf_);
    for (std::size_t k = 0; k < n; ++k) sum_[k] += std::norm(buf_[k]) / gain2_;
    ++segments_;
}

std::vector<double> WelchAccumulator::result() const {
    if (segments_ == 0) throw NumericalError("no periodogram segments accumulated");
    std::vector<double> out(sum_);
    for (double& v : out) v /= segments_;
    return out;
}

std::vector<double> periodogram(std::span<const cdouble> z, Window w, std::size_t n,
                                int averages) {
    if (n == 0 || z.size() < n) throw ConfigError("resolution_bandwidth", "record too short");
    if (averages < 1) throw ConfigError("averages", "must be >= 1");
    const std::size_t segments = std::min<std::size_t>(static_cast<std::size_t>(averages),
                                                       z.size() / n);
    WelchAccumulator acc(w, n);
    for (std::size_t s = 0; s < segments; ++s) acc.add(z.subspan(s * n, n));
    return acc.result();
}

}  // namespace ionbeat::dsp
