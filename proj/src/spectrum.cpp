#include "ionbeat/spectrum.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>

#include <boost/math/distributions/gamma.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ionbeat/errors.hpp"

namespace ionbeat {

namespace {

using dsp::cdouble;

constexpr double pi2 = 2.0 * std::numbers::pi;
constexpr std::size_t block_size = 1 << 16;

double to_db(double linear) {
    return 10.0 * std::log10(std::max(linear, 1e-300));
}

std::string window_name(Window w) {
    return w == Window::Hann ? "hann" : "uniform";
}

Window parse_window(const std::string& s) {
    if (s == "hann") return Window::Hann;
    if (s == "uniform" || s == "rectangular") return Window::Uniform;
    throw ConfigError("window", "unknown window '" + s + "' (hann, uniform)");
}

/// Complex baseband record -> displayed trace over 0 .. lowpass_cutoff.
/// The factor 2 restores real-signal units: a real tone of power P becomes a
/// complex tone of power P/2 after the I/Q mixer.
SpectrumTrace finish_trace(const std::vector<double>& bins, const HeterodyneConfig& config,
                           int segments, std::uint64_t seed) {
    const std::size_t n = bins.size();
    const double spacing = config.analyzer_rate / static_cast<double>(n);
    SpectrumTrace trace;
    trace.resolution_bandwidth = dsp::enbw_bins(config.window) * spacing;
    trace.seed = seed;
    trace.averages = segments;
    for (std::size_t k = 0; k < n / 2; ++k) {
        const double f = static_cast<double>(k) * spacing;
        if (f > config.lowpass_cutoff) break;
        trace.bin_centers.push_back(f);
        trace.power.push_back(2.0 * bins[k]);
    }
    trace.noise_floor = estimate_noise_floor(trace.power, trace.resolution_bandwidth, segments);
    return trace;
}

SpectrumTrace trace_from_baseband(const std::vector<cdouble>& z, const HeterodyneConfig& config,
                                  std::uint64_t seed) {
    const std::size_t n = segment_length(config);
    if (z.size() < n)
        throw ConfigError("resolution_bandwidth",
                          "record shorter than one analyzer segment (RBW below ENBW / duration)");
    const std::size_t segments =
        std::min<std::size_t>(static_cast<std::size_t>(config.averages), z.size() / n);
    dsp::WelchAccumulator acc(config.window, n);
    for (std::size_t s = 0; s < segments; ++s) acc.add(std::span(z).subspan(s * n, n));
    return finish_trace(acc.result(), config, acc.segments(), seed);
}

void mix_down(std::span<const double> in, dsp::PhaseAccumulator& lo, std::vector<cdouble>& out) {
    out.resize(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
        const double phase = pi2 * lo.cycles(i);
        out[i] = cdouble(in[i] * std::cos(phase), -in[i] * std::sin(phase));
    }
    lo.advance(in.size());
}

}  // namespace

double HeterodyneConfig::effective_photon_rate() const {
    return mode_matching * quantum_efficiency * photon_rate / extra_loss;
}

void HeterodyneConfig::validate() const {
    auto positive = [](double v, const char* key) {
        if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(key, "must be positive");
    };
    positive(f_aom1, "f_aom1");
    positive(f_aom2, "f_aom2");
    positive(f_mix, "f_mix");
    positive(f_paul, "f_paul");
    positive(resolution_bandwidth, "resolution_bandwidth");
    positive(lowpass_cutoff, "lowpass_cutoff");
    positive(analyzer_rate, "analyzer_rate");
    if (!(photon_rate >= 0.0)) throw ConfigError("photon_rate", "must be non-negative");
    if (!(quantum_efficiency > 0.0 && quantum_efficiency <= 1.0))
        throw ConfigError("quantum_efficiency", "must lie in (0, 1]");
    if (!(mode_matching > 0.0 && mode_matching <= 1.0))
        throw ConfigError("mode_matching", "must lie in (0, 1]");
    if (!(extra_loss >= 1.0)) throw ConfigError("extra_loss", "must be >= 1");
    if (!(analyzer_rate > 2.0 * lowpass_cutoff))
        throw ConfigError("analyzer_rate", "must exceed twice the low-pass cutoff");
    if (averages < 1) throw ConfigError("averages", "must be >= 1");
}

void to_json(nlohmann::json& j, const HeterodyneConfig& c) {
    j = nlohmann::json{{"f_aom1_hz", c.f_aom1},
                       {"f_aom2_hz", c.f_aom2},
                       {"f_mix_hz", c.f_mix},
                       {"f_paul_hz", c.f_paul},
                       {"rbw_hz", c.resolution_bandwidth},
                       {"photon_rate", c.photon_rate},
                       {"quantum_efficiency", c.quantum_efficiency},
                       {"mode_matching", c.mode_matching},
                       {"extra_loss", c.extra_loss},
                       {"lowpass_cutoff_hz", c.lowpass_cutoff},
                       {"analyzer_rate_hz", c.analyzer_rate},
                       {"window", window_name(c.window)},
                       {"averages", c.averages}};
}

void from_json(const nlohmann::json& j, HeterodyneConfig& c) {
    c.f_aom1 = j.value("f_aom1_hz", c.f_aom1);
    c.f_aom2 = j.value("f_aom2_hz", c.f_aom2);
    c.f_mix = j.value("f_mix_hz", c.f_mix);
    c.f_paul = j.value("f_paul_hz", c.f_paul);
    c.resolution_bandwidth = j.value("rbw_hz", c.resolution_bandwidth);
    c.photon_rate = j.value("photon_rate", c.photon_rate);
    c.quantum_efficiency = j.value("quantum_efficiency", c.quantum_efficiency);
    c.mode_matching = j.value("mode_matching", c.mode_matching);
    c.extra_loss = j.value("extra_loss", c.extra_loss);
    c.lowpass_cutoff = j.value("lowpass_cutoff_hz", c.lowpass_cutoff);
    c.analyzer_rate = j.value("analyzer_rate_hz", c.analyzer_rate);
    if (j.contains("window")) c.window = parse_window(j.at("window").get<std::string>());
    c.averages = j.value("averages", c.averages);
    c.validate();
}

double LineList::total_power() const {
    double sum = 0.0;
    for (const auto& l : lines) sum += l.relative_power;
    return sum;
}

void to_json(nlohmann::json& j, const LineList& l) {
    j = nlohmann::json::object();
    auto& arr = j["lines"] = nlohmann::json::array();
    for (const auto& line : l.lines)
        arr.push_back({{"frequency_hz", line.frequency},
                       {"relative_power", line.relative_power},
                       {"width_hz", line.width}});
}

void from_json(const nlohmann::json& j, LineList& l) {
    l.lines.clear();
    for (const auto& item : j.at("lines")) {
        Line line{item.at("frequency_hz").get<double>(), item.at("relative_power").get<double>(),
                  item.value("width_hz", 0.0)};
        if (line.relative_power < 0.0) throw ConfigError("relative_power", "must be >= 0");
        l.lines.push_back(line);
    }
}

double bessel_j(int n, double m) {
    const int order = std::abs(n);
    double value = std::cyl_bessel_j(static_cast<double>(order), std::abs(m));
    const bool odd = order % 2 != 0;
    if (odd && n < 0) value = -value;
    if (odd && m < 0.0) value = -value;
    return value;
}

LineList compose_lines(const HeterodyneConfig& config, const Modulation& modulation) {
    if (!(modulation.m_micro >= 0.0)) throw DomainError("m_micro must be non-negative");
    if (modulation.micro_order_max < 0) throw DomainError("micro_order_max must be >= 0");
    const int kmax = modulation.macro ? modulation.macro_order_max : 0;
    if (kmax < 0) throw DomainError("macro_order_max must be >= 0");
    LineList out;
    for (int n = -modulation.micro_order_max; n <= modulation.micro_order_max; ++n) {
        const double jn = bessel_j(n, modulation.m_micro);
        for (int k = -kmax; k <= kmax; ++k) {
            double weight = jn * jn;
            double f = config.f_beat() + n * config.f_paul;
            if (modulation.macro) {
                const double jk = bessel_j(k, modulation.macro->m_macro);
                weight *= jk * jk;
                f += k * modulation.macro->f_drive;
            }
            out.lines.push_back({f, weight, 0.0});
        }
    }
    return out;
}

HeterodyneSource::HeterodyneSource(const HeterodyneConfig& config, const Modulation& modulation,
                                   const SynthesisOptions& options)
    : config_(config),
      modulation_(modulation),
      options_(options),
      carrier_(config.f_beat(), options.sample_rate),
      micro_(config.f_paul, options.sample_rate),
      macro_(modulation.macro ? modulation.macro->f_drive : 0.0, options.sample_rate),
      rng_(options.seed) {
    config_.validate();
    if (!(options_.duration > 0.0)) throw ConfigError("duration", "must be positive");
    if (!(options_.sample_rate > 0.0)) throw ConfigError("sample_rate", "must be positive");
    double f_max = config_.f_beat() + modulation_.micro_order_max * config_.f_paul;
    if (modulation_.macro) f_max += modulation_.macro_order_max * modulation_.macro->f_drive;
    if (!(options_.sample_rate > 2.0 * f_max))
        throw ConfigError("sample_rate", fmt::format("must exceed {} Hz to avoid aliasing",
                                                     2.0 * f_max));
    total_ = static_cast<std::size_t>(std::llround(options_.duration * options_.sample_rate));
    if (total_ == 0) throw ConfigError("duration", "shorter than one sample");
    // One-sided noise density 1/Hz; carrier power C^2/2 = N_eff.
    sigma_ = std::sqrt(0.5 * options_.sample_rate);
    amplitude_ = std::sqrt(2.0 * config_.effective_photon_rate());
}

std::size_t HeterodyneSource::generate(std::span<double> out) {
    const std::size_t n = std::min(out.size(), remaining());
    const double m = modulation_.m_micro;
    const double mm = modulation_.macro ? modulation_.macro->m_macro : 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double phase = pi2 * carrier_.cycles(i);
        if (m != 0.0) phase += m * std::sin(pi2 * micro_.cycles(i));
        if (mm != 0.0) phase += mm * std::sin(pi2 * macro_.cycles(i));
        out[i] = amplitude_ * std::cos(phase);
        if (options_.noise) out[i] += sigma_ * gauss_(rng_);
    }
    carrier_.advance(n);
    micro_.advance(n);
    macro_.advance(n);
    produced_ += n;
    return n;
}

std::vector<double> synthesize_timeseries(const HeterodyneConfig& config,
                                          const Modulation& modulation,
                                          const SynthesisOptions& options) {
    HeterodyneSource source(config, modulation, options);
    std::vector<double> out(source.total_samples());
    source.generate(out);
    return out;
}

double SpectrumTrace::bin_spacing() const {
    if (bin_centers.size() < 2) return 0.0;
    return bin_centers[1] - bin_centers[0];
}

SpectrumTrace SpectrumTrace::to_db() const {
    if (power_in_db) return *this;
    SpectrumTrace out = *this;
    for (double& p : out.power) p = ionbeat::to_db(p);
    out.power_in_db = true;
    return out;
}

SpectrumTrace SpectrumTrace::to_linear() const {
    if (!power_in_db) return *this;
    SpectrumTrace out = *this;
    for (double& p : out.power) p = std::pow(10.0, p / 10.0);
    out.power_in_db = false;
    return out;
}

std::size_t SpectrumTrace::nearest_bin(double frequency) const {
    if (bin_centers.empty()) throw DomainError("empty trace");
    const auto it = std::lower_bound(bin_centers.begin(), bin_centers.end(), frequency);
    if (it == bin_centers.begin()) return 0;
    if (it == bin_centers.end()) return bin_centers.size() - 1;
    const auto hi = static_cast<std::size_t>(it - bin_centers.begin());
    return (frequency - bin_centers[hi - 1] <= bin_centers[hi] - frequency) ? hi - 1 : hi;
}

std::size_t segment_length(const HeterodyneConfig& config) {
    config.validate();
    const double n = dsp::enbw_bins(config.window) * config.analyzer_rate /
                     config.resolution_bandwidth;
    return static_cast<std::size_t>(std::llround(n));
}

SpectrumTrace analyzer(std::span<const double> samples, double sample_rate,
                       const HeterodyneConfig& config) {
    config.validate();
    if (!(config.f_mix < 0.5 * sample_rate))
        throw ConfigError("f_mix", "must lie below the Nyquist frequency");
    const double duration = static_cast<double>(samples.size()) / sample_rate;
    if (config.resolution_bandwidth * duration < 1.0)
        throw ConfigError("resolution_bandwidth", "RBW below 1 / duration");
    dsp::DecimationChain chain(sample_rate, config.analyzer_rate, config.lowpass_cutoff);
    dsp::PhaseAccumulator lo(config.f_mix, sample_rate);
    std::vector<cdouble> mixed, baseband;
    for (std::size_t pos = 0; pos < samples.size(); pos += block_size) {
        const auto block = samples.subspan(pos, std::min(block_size, samples.size() - pos));
        mix_down(block, lo, mixed);
        chain.process(mixed, baseband);
    }
    return trace_from_baseband(baseband, config, 0);
}

SpectrumTrace analyze_source(HeterodyneSource& source, const HeterodyneConfig& config) {
    config.validate();
    const double rate = source.sample_rate();
    if (!(config.f_mix < 0.5 * rate))
        throw ConfigError("f_mix", "must lie below the Nyquist frequency");
    const double duration = static_cast<double>(source.total_samples()) / rate;
    if (config.resolution_bandwidth * duration < 1.0)
        throw ConfigError("resolution_bandwidth", "RBW below 1 / duration");
    dsp::DecimationChain chain(rate, config.analyzer_rate, config.lowpass_cutoff);
    dsp::PhaseAccumulator lo(config.f_mix, rate);
    std::vector<double> block(block_size);
    std::vector<cdouble> mixed, baseband;
    while (source.remaining() > 0) {
        const std::size_t n = source.generate(block);
        mix_down(std::span<const double>(block.data(), n), lo, mixed);
        chain.process(mixed, baseband);
    }
    SpectrumTrace trace = trace_from_baseband(baseband, config, 0);
    return trace;
}

SpectrumTrace analyze_baseband_equivalent(const HeterodyneConfig& config,
                                          const Modulation& modulation, double duration,
                                          std::uint64_t seed, bool noise) {
    config.validate();
    if (!(duration > 0.0)) throw ConfigError("duration", "must be positive");
    if (config.resolution_bandwidth * duration < 1.0)
        throw ConfigError("resolution_bandwidth", "RBW below 1 / duration");
    const double rate = config.analyzer_rate;
    const std::size_t n = segment_length(config);
    const auto available = static_cast<std::size_t>(std::floor(duration * rate + 1e-9));
    if (available < n)
        throw ConfigError("resolution_bandwidth",
                          "record shorter than one analyzer segment (RBW below ENBW / duration)");
    const std::size_t segments =
        std::min<std::size_t>(static_cast<std::size_t>(config.averages), available / n);

    // Complex amplitude of each line after the I/Q mixer: (C/2) J_n J_k.
    struct Tone {
        dsp::PhaseAccumulator phase;
        double amplitude;
    };
    std::vector<Tone> tones;
    const double half_carrier = 0.5 * std::sqrt(2.0 * config.effective_photon_rate());
    const int kmax = modulation.macro ? modulation.macro_order_max : 0;
    if (!(modulation.m_micro >= 0.0)) throw DomainError("m_micro must be non-negative");
    for (int i = -modulation.micro_order_max; i <= modulation.micro_order_max; ++i)
        for (int k = -kmax; k <= kmax; ++k) {
            double f = config.f_beat() + i * config.f_paul - config.f_mix;
            double a = half_carrier * bessel_j(i, modulation.m_micro);
            if (modulation.macro) {
                f += k * modulation.macro->f_drive;
                a *= bessel_j(k, modulation.macro->m_macro);
            }
            if (std::abs(f) <= config.lowpass_cutoff && a != 0.0)
                tones.push_back({dsp::PhaseAccumulator(f, rate), a});
        }

    // Two-sided complex noise density 1/2 per Hz.
    const double component_sigma = std::sqrt(0.25 * rate);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss;
    dsp::WelchAccumulator acc(config.window, n);
    std::vector<cdouble> segment(n);
    for (std::size_t s = 0; s < segments; ++s) {
        std::fill(segment.begin(), segment.end(), cdouble(0.0, 0.0));
        for (auto& tone : tones) {
            for (std::size_t i = 0; i < n; ++i) {
                const double phase = pi2 * tone.phase.cycles(i);
                segment[i] += tone.amplitude * cdouble(std::cos(phase), std::sin(phase));
            }
            tone.phase.advance(n);
        }
        if (noise)
            for (auto& z : segment) {
                const double re = gauss(rng);
                const double im = gauss(rng);
                z += component_sigma * cdouble(re, im);
            }
        acc.add(segment);
    }
    return finish_trace(acc.result(), config, acc.segments(), seed);
}

SpectrumTrace real_power_spectrum(std::span<const double> samples, double sample_rate,
                                  Window window) {
    const std::size_t n = samples.size();
    if (n < 2) throw DomainError("record too short");
    std::vector<cdouble> z(samples.begin(), samples.end());
    dsp::WelchAccumulator acc(window, n);
    acc.add(z);
    const auto bins = acc.result();
    SpectrumTrace trace;
    const double spacing = sample_rate / static_cast<double>(n);
    trace.resolution_bandwidth = dsp::enbw_bins(window) * spacing;
    for (std::size_t k = 0; k <= n / 2; ++k) {
        const bool edge = k == 0 || (n % 2 == 0 && k == n / 2);
        trace.bin_centers.push_back(static_cast<double>(k) * spacing);
        trace.power.push_back(edge ? bins[k] : 2.0 * bins[k]);
    }
    trace.noise_floor = estimate_noise_floor(trace.power, trace.resolution_bandwidth, 1);
    return trace;
}

double snr_budget(const HeterodyneConfig& config) {
    config.validate();
    if (!(config.photon_rate > 0.0)) throw DomainError("photon_rate must be positive");
    return 10.0 * std::log10(config.effective_photon_rate() / config.resolution_bandwidth);
}

double mode_matching_for_snr(const HeterodyneConfig& config, double target_db) {
    HeterodyneConfig unit = config;
    unit.mode_matching = 1.0;
    const double mm = std::pow(10.0, (target_db - snr_budget(unit)) / 10.0);
    if (!(mm <= 1.0)) throw DomainError("target SNR exceeds the budget at perfect mode matching");
    return mm;
}

double estimate_noise_floor(std::span<const double> bin_power, double rbw, int averages) {
    if (bin_power.empty() || !(rbw > 0.0)) return 0.0;
    std::vector<double> sorted(bin_power.begin(), bin_power.end());
    const auto mid = sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2);
    std::nth_element(sorted.begin(), mid, sorted.end());
    const double k = std::max(averages, 1);
    // Averaged periodogram bins of white noise follow Gamma(K, mean/K).
    const boost::math::gamma_distribution<double> dist(k, 1.0 / k);
    return *mid / boost::math::median(dist) / rbw;
}

double measure_snr_db(const SpectrumTrace& trace, double frequency) {
    const SpectrumTrace lin = trace.to_linear();
    const std::size_t k = lin.nearest_bin(frequency);
    double peak = lin.power[k];
    if (k > 0) peak = std::max(peak, lin.power[k - 1]);
    if (k + 1 < lin.power.size()) peak = std::max(peak, lin.power[k + 1]);
    const double noise_bin = lin.noise_floor * lin.resolution_bandwidth;
    if (!(noise_bin > 0.0)) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak / noise_bin);
}

double min_detectable_micromotion(double snr_db, const Eigen::Vector3d& k_laser,
                                  const Eigen::Vector3d& k_detect,
                                  const Eigen::Vector3d& direction) {
    if (!(snr_db >= 0.0)) throw DomainError("SNR must be >= 0 dB");
    const double projection = std::abs(direction.normalized().dot(k_detect - k_laser));
    if (projection < 1e-12 * (k_detect - k_laser).norm())
        return std::numeric_limits<double>::infinity();
    const double m_min = 2.0 * std::pow(10.0, -snr_db / 20.0);
    return m_min / projection;
}

double min_detectable_micromotion(const HeterodyneConfig& config, const Eigen::Vector3d& k_laser,
                                  const Eigen::Vector3d& k_detect,
                                  const Eigen::Vector3d& direction) {
    return min_detectable_micromotion(snr_budget(config), k_laser, k_detect, direction);
}

void write_trace_csv(std::ostream& os, const SpectrumTrace& trace) {
    const SpectrumTrace db = trace.to_db();
    os << fmt::format("# rbw_hz: {}\n", db.resolution_bandwidth);
    os << fmt::format("# noise_floor_db: {}\n", to_db(db.noise_floor));
    os << fmt::format("# averages: {}\n", db.averages);
    os << fmt::format("# seed: {}\n", db.seed);
    os << "freq_hz,power_db\n";
    for (std::size_t i = 0; i < db.bin_centers.size(); ++i)
        os << fmt::format("{},{}\n", db.bin_centers[i], db.power[i]);
}

SpectrumTrace read_trace_csv(std::istream& is) {
    SpectrumTrace trace;
    trace.power_in_db = true;
    std::string line;
    bool have_columns = false;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto colon = line.find(':');
            if (colon == std::string::npos) continue;
            std::string key = line.substr(1, colon - 1);
            key.erase(0, key.find_first_not_of(' '));
            key.erase(key.find_last_not_of(' ') + 1);
            const std::string value = line.substr(colon + 1);
            try {
                if (key == "rbw_hz") trace.resolution_bandwidth = std::stod(value);
                else if (key == "noise_floor_db") trace.noise_floor = std::pow(10.0, std::stod(value) / 10.0);
                else if (key == "averages") trace.averages = std::stoi(value);
                else if (key == "seed") trace.seed = std::stoull(value);
            } catch (const std::exception&) {
                throw ConfigError(key, "unparseable header value on line " + std::to_string(line_no));
            }
            continue;
        }
        if (!have_columns) {
            if (line != "freq_hz,power_db")
                throw ConfigError("trace", "expected column header 'freq_hz,power_db'");
            have_columns = true;
            continue;
        }
        std::istringstream row(line);
        double f = 0.0, p = 0.0;
        char comma = 0;
        if (!(row >> f >> comma >> p) || comma != ',')
            throw ConfigError("trace", "malformed row on line " + std::to_string(line_no));
        trace.bin_centers.push_back(f);
        trace.power.push_back(p);
    }
    if (!have_columns) throw ConfigError("trace", "missing column header");
    return trace;
}

}  // namespace ionbeat
