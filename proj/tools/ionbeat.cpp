// ionbeat: simulate and analyze heterodyne fluorescence spectra of a trapped Ba+ ion.

#include <cmath>
#include <numbers>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ionbeat/errors.hpp"
#include "ionbeat/fit.hpp"
#include "ionbeat/motion.hpp"
#include "ionbeat/spectrum.hpp"
#include "settings.hpp"

#ifndef IONBEAT_DATA_DIR
#define IONBEAT_DATA_DIR "data"
#endif

using namespace ionbeat;
using cli::Kind;
using cli::Setting;
using nlohmann::json;

namespace {

std::vector<Setting> bloch_settings() {
    return {
        {"detuning_493_hz", Kind::Real, -19e6, "493 nm laser detuning"},
        {"detuning_650_hz", Kind::Real, 5e6, "650 nm laser detuning"},
        {"intensity_493_mw_per_cm2", Kind::Real, 189.0, "493 nm intensity"},
        {"intensity_650_mw_per_cm2", Kind::Real, 107.0, "650 nm intensity"},
        {"b_field_gauss", Kind::Real, 2.8, "Magnetic field"},
        {"gamma_sp_hz", Kind::Real, 15.1e6, "P1/2 -> S1/2 decay rate / 2 pi"},
        {"gamma_pd_hz", Kind::Real, 5.3e6, "P1/2 -> D3/2 decay rate / 2 pi"},
        {"decay", Kind::Text, "coherent", "Spontaneous-emission model: coherent or incoherent"},
        {"linewidth_493_hz", Kind::Real, 0.0, "493 nm laser linewidth (dephasing rate / 2 pi)"},
        {"linewidth_650_hz", Kind::Real, 0.0, "650 nm laser linewidth (dephasing rate / 2 pi)"},
    };
}

std::vector<Setting> heterodyne_settings() {
    return {
        {"f_aom1_hz", Kind::Real, 112.5e6, "Exciting-beam AOM frequency"},
        {"f_aom2_hz", Kind::Real, 80e6, "Local-oscillator AOM frequency"},
        {"f_mix_hz", Kind::Real, 32.45e6, "Analyzer mixing frequency"},
        {"f_paul_hz", Kind::Real, 18.53e6, "Trap drive frequency"},
        {"rbw_hz", Kind::Real, 1.0, "Resolution bandwidth"},
        {"photon_rate", Kind::Real, 4e4, "Detected-solid-angle photon rate (1/s)"},
        {"quantum_efficiency", Kind::Real, 0.8, "Photodiode quantum efficiency"},
        {"mode_matching", Kind::Real, 1.0, "Mode-matching factor"},
        {"extra_loss", Kind::Real, 1.0, "Additional loss factor (>= 1)"},
        {"lowpass_cutoff_hz", Kind::Real, 100e3, "Analyzer low-pass cutoff"},
        {"analyzer_rate_hz", Kind::Real, 256e3, "Complex sample rate after decimation"},
        {"window", Kind::Text, "hann", "FFT window: hann or uniform"},
        {"averages", Kind::Integer, 1, "Number of averaged periodograms"},
    };
}

std::vector<Setting> concat(std::vector<Setting> a, const std::vector<Setting>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

Setting seed_setting() {
    return {"seed", Kind::Unsigned, 1, "Random seed"};
}

double real(const json& cfg, const char* key) {
    return cfg.at(key).get<double>();
}

BlochParameters bloch_parameters(const json& cfg) {
    BlochParameters p;
    p.detuning_493 = angular(real(cfg, "detuning_493_hz"));
    p.detuning_650 = angular(real(cfg, "detuning_650_hz"));
    p.intensity_493 = real(cfg, "intensity_493_mw_per_cm2") * 10.0;
    p.intensity_650 = real(cfg, "intensity_650_mw_per_cm2") * 10.0;
    p.b_field = real(cfg, "b_field_gauss") * 1e-4;
    p.validate();
    return p;
}

BlochModel bloch_model(const json& cfg) {
    LevelScheme scheme;
    scheme.gamma_sp = angular(real(cfg, "gamma_sp_hz"));
    scheme.gamma_pd = angular(real(cfg, "gamma_pd_hz"));
    scheme.validate();
    BlochOptions options;
    const auto decay = cfg.at("decay").get<std::string>();
    if (decay == "coherent") options.decay = DecayModel::Coherent;
    else if (decay == "incoherent") options.decay = DecayModel::Incoherent;
    else throw ConfigError("decay", "expected coherent or incoherent, got '" + decay + "'");
    options.linewidth_493 = angular(real(cfg, "linewidth_493_hz"));
    options.linewidth_650 = angular(real(cfg, "linewidth_650_hz"));
    if (!(options.linewidth_493 >= 0.0)) throw ConfigError("linewidth_493_hz", "must be >= 0");
    if (!(options.linewidth_650 >= 0.0)) throw ConfigError("linewidth_650_hz", "must be >= 0");
    return BlochModel(scheme, {}, options);
}

HeterodyneConfig heterodyne_config(const json& cfg) {
    HeterodyneConfig c;
    c.f_aom1 = real(cfg, "f_aom1_hz");
    c.f_aom2 = real(cfg, "f_aom2_hz");
    c.f_mix = real(cfg, "f_mix_hz");
    c.f_paul = real(cfg, "f_paul_hz");
    c.resolution_bandwidth = real(cfg, "rbw_hz");
    c.photon_rate = real(cfg, "photon_rate");
    c.quantum_efficiency = real(cfg, "quantum_efficiency");
    c.mode_matching = real(cfg, "mode_matching");
    c.extra_loss = real(cfg, "extra_loss");
    c.lowpass_cutoff = real(cfg, "lowpass_cutoff_hz");
    c.analyzer_rate = real(cfg, "analyzer_rate_hz");
    const auto w = cfg.at("window").get<std::string>();
    if (w == "hann") c.window = Window::Hann;
    else if (w == "uniform") c.window = Window::Uniform;
    else throw ConfigError("window", "expected hann or uniform, got '" + w + "'");
    c.averages = cfg.at("averages").get<int>();
    c.validate();
    return c;
}

std::string read_file(const std::string& path, const char* key) {
    std::ifstream in(path);
    if (!in) throw ConfigError(key, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_output(const std::string& path, const std::string& text) {
    if (path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("out", "cannot write " + path);
    out << text;
}

/// CSV outputs carry their resolved settings in a sidecar file.
void write_csv_with_echo(const std::string& path, const std::string& csv, const json& cfg) {
    write_output(path, csv);
    if (!path.empty()) write_output(path + ".config.json", cfg.dump(2) + "\n");
}

void apply_preset(json& cfg, const std::set<std::string>& explicit_keys, const json& preset) {
    for (const auto& [key, value] : preset.items())
        if (!explicit_keys.contains(key)) cfg[key] = value;
}

json spectrum_preset(const std::string& recipe) {
    if (recipe.empty()) return json::object();
    if (recipe == "fig2")
        return {{"window", "uniform"}, {"rbw_hz", 100e3 / (4096.0 * 400.0)},
                {"averages", 16},      {"target_snr_db_per_hz", 17.0},
                {"m_micro", 0.0},      {"span_start_hz", 50e3 - 2.0},
                {"span_stop_hz", 50e3 + 2.0}};
    const json fig3 = {{"m_micro", 0.47}, {"span_start_hz", 50e3 - 20.0},
                       {"span_stop_hz", 50e3 + 20.0}};
    json preset = fig3;
    if (recipe == "fig3-carrier") return preset;
    if (recipe == "fig3-lower") {
        preset["f_mix_hz"] = 32.45e6 - 18.53e6;
        return preset;
    }
    if (recipe == "fig3-upper") {
        preset["f_mix_hz"] = 32.45e6 + 18.53e6;
        return preset;
    }
    throw ConfigError("recipe", "unknown recipe '" + recipe +
                                    "' (fig2, fig3-carrier, fig3-lower, fig3-upper)");
}

SpectrumTrace crop(const SpectrumTrace& t, double lo, double hi) {
    SpectrumTrace out = t;
    out.bin_centers.clear();
    out.power.clear();
    for (std::size_t i = 0; i < t.bin_centers.size(); ++i)
        if (t.bin_centers[i] >= lo && t.bin_centers[i] <= hi) {
            out.bin_centers.push_back(t.bin_centers[i]);
            out.power.push_back(t.power[i]);
        }
    return out;
}

int run_spectrum(const cli::Settings& settings) {
    json cfg = settings.resolve();
    apply_preset(cfg, settings.explicit_keys(), spectrum_preset(cfg.at("recipe").get<std::string>()));

    HeterodyneConfig hc = heterodyne_config(cfg);
    if (!cfg.at("target_snr_db_per_hz").is_null()) {
        HeterodyneConfig one_hz = hc;
        one_hz.resolution_bandwidth = 1.0;
        hc.mode_matching = mode_matching_for_snr(one_hz, real(cfg, "target_snr_db_per_hz"));
        cfg["mode_matching"] = hc.mode_matching;
    }
    Modulation mod;
    mod.m_micro = real(cfg, "m_micro");
    mod.micro_order_max = cfg.at("micro_orders").get<int>();
    if (real(cfg, "m_macro") != 0.0) mod.macro = MacroModulation{real(cfg, "f_drive_hz"), real(cfg, "m_macro")};
    const bool noise = cfg.at("noise").get<bool>();
    const auto seed = cfg.at("seed").get<std::uint64_t>();

    const double segment = static_cast<double>(segment_length(hc)) / hc.analyzer_rate;
    const double duration = cfg.at("duration_s").is_null() ? segment * hc.averages
                                                            : real(cfg, "duration_s");
    SpectrumTrace trace;
    if (cfg.at("rf").get<bool>()) {
        SynthesisOptions so{duration, real(cfg, "sample_rate_hz"), seed, noise};
        HeterodyneSource source(hc, mod, so);
        trace = analyze_source(source, hc);
        trace.seed = seed;
    } else {
        trace = analyze_baseband_equivalent(hc, mod, duration, seed, noise);
    }
    const double lo = cfg.at("span_start_hz").is_null() ? 0.0 : real(cfg, "span_start_hz");
    const double hi = cfg.at("span_stop_hz").is_null() ? hc.lowpass_cutoff : real(cfg, "span_stop_hz");
    std::ostringstream csv;
    write_trace_csv(csv, crop(trace, lo, hi));
    write_csv_with_echo(settings.out(), csv.str(), cfg);
    return 0;
}

int run_scan(const cli::Settings& settings) {
    const json cfg = settings.resolve();
    const BlochModel model = bloch_model(cfg);
    const BlochParameters p = bloch_parameters(cfg);
    const auto axis_name = cfg.at("axis").get<std::string>();
    ScanAxis axis;
    if (axis_name == "detuning_650") axis = ScanAxis::Detuning650;
    else if (axis_name == "detuning_493") axis = ScanAxis::Detuning493;
    else throw ConfigError("axis", "expected detuning_650 or detuning_493");
    const int n = cfg.at("points").get<int>();
    if (n < 2) throw ConfigError("points", "need at least 2 points");
    const double start = real(cfg, "start_hz"), stop = real(cfg, "stop_hz");
    std::vector<double> grid_hz(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) grid_hz[static_cast<std::size_t>(i)] = start + (stop - start) * i / (n - 1);

    std::ostringstream csv;
    const double noise = real(cfg, "noise_fraction");
    if (noise > 0.0) {
        if (axis != ScanAxis::Detuning650)
            throw ConfigError("noise_fraction", "noisy scans are generated over detuning_650 only");
        const auto data = synthesize_bloch_scan(model, p, grid_hz, noise,
                                                cfg.at("seed").get<std::uint64_t>(),
                                                real(cfg, "scale"));
        write_scan_csv(csv, data);
    } else {
        std::vector<double> grid;
        for (double f : grid_hz) grid.push_back(angular(f));
        const auto points = model.excitation_spectrum(p, axis, grid);
        csv << "detuning_hz,p_population\n";
        for (std::size_t i = 0; i < points.size(); ++i) {
            const double v = points[i].p_population
                                 ? real(cfg, "scale") * *points[i].p_population
                                 : std::numeric_limits<double>::quiet_NaN();
            csv << fmt::format("{},{}\n", grid_hz[i], v);
        }
    }
    write_csv_with_echo(settings.out(), csv.str(), cfg);
    return 0;
}

int run_cooling_rate(const cli::Settings& settings, bool defaults_only) {
    const json cfg = settings.resolve(!defaults_only);
    const BlochModel model = bloch_model(cfg);
    const BlochParameters p = bloch_parameters(cfg);
    const CoolingResult r = cooling_coefficient(model, p, angular(real(cfg, "step_hz")));
    json out = r;
    out["p_population"] = model.p_population(p);
    out["recoil_hz"] = recoil_frequency(model.scheme().constants.ion_mass,
                                        model.scheme().wavelength_sp, model.scheme().constants) /
                       two_pi;
    out["config"] = cfg;
    write_output(settings.out(), out.dump(2) + "\n");
    return 0;
}

int run_fit_sidebands(const cli::Settings& settings) {
    const json cfg = settings.resolve();
    auto load = [&](const char* key) {
        std::istringstream in(read_file(cfg.at(key).get<std::string>(), key));
        return read_trace_csv(in);
    };
    const SpectrumTrace carrier = load("carrier");
    const SpectrumTrace sideband = load("sideband");
    SidebandFitOptions options;
    options.weighted = cfg.at("weighted").get<bool>();
    options.subtract_floor = cfg.at("subtract_floor").get<bool>();
    options.fit_in_db = cfg.at("fit_db").get<bool>();
    if (options.fit_in_db && cfg.at("separate").get<bool>())
        throw ConfigError("fit_db", "only available for the joint fit");
    options.least_squares.max_iterations = cfg.at("max_iterations").get<int>();

    json out;
    if (cfg.at("separate").get<bool>()) {
        const auto fits = fit_sideband_traces_separately(carrier, sideband, options);
        out["carrier"] = fits.carrier;
        out["sideband"] = fits.sideband;
    } else {
        const FitResult r = fit_sideband_pair(carrier, sideband, options);
        out = r;
        const auto width = interpret_fitted_width(r.value("delta_f"));
        out["cooling_linewidth_hz"] = {{"if_energy_response", width.linewidth_if_energy_hz},
                                       {"if_amplitude_response", width.linewidth_if_amplitude_hz}};
    }
    out["config"] = cfg;
    write_output(settings.out(), out.dump(2) + "\n");
    return 0;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string item;
    while (std::getline(in, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

int run_fit_scan(const cli::Settings& settings) {
    const json cfg = settings.resolve();
    if (cfg.at("scan").is_null()) throw ConfigError("scan", "a scan CSV file is required");
    std::istringstream in(read_file(cfg.at("scan").get<std::string>(), "scan"));
    const ScanData data = read_scan_csv(in);
    const BlochModel model = bloch_model(cfg);
    BlochFitOptions options;
    options.initial = bloch_parameters(cfg);
    options.initial_scale = real(cfg, "scale");
    options.free = split_list(cfg.at("free").get<std::string>());
    options.least_squares.max_iterations = cfg.at("max_iterations").get<int>();
    json out = fit_bloch_scan(model, data, options);
    out["config"] = cfg;
    write_output(settings.out(), out.dump(2) + "\n");
    return 0;
}

int run_micromotion(const cli::Settings& settings) {
    const json cfg = settings.resolve();
    const double lambda = real(cfg, "wavelength_nm") * 1e-9;
    const double angle = real(cfg, "angle_deg") * std::numbers::pi / 180.0;
    if (!(lambda > 0.0)) throw ConfigError("wavelength_nm", "must be positive");
    const Eigen::Vector3d k_l = wave_vector({1.0, 0.0, 0.0}, lambda);
    const Eigen::Vector3d k_d = wave_vector({std::cos(angle), std::sin(angle), 0.0}, lambda);
    const Eigen::Vector3d along = k_d - k_l;
    if (along.norm() == 0.0) throw ConfigError("angle_deg", "k_d = k_l: micromotion is undetectable");

    HeterodyneConfig hc = heterodyne_config(cfg);
    const double snr = cfg.at("snr_db").is_null() ? snr_budget(hc) : real(cfg, "snr_db");
    const double m = real(cfg, "m_micro");
    const double a = micromotion_amplitude_for_index(m, k_l, k_d);
    const double a_min = min_detectable_micromotion(snr, k_l, k_d, along);
    json out = {{"mod_index", m},
                {"amplitude_m", a},
                {"snr_db", snr},
                {"min_detectable_index", 2.0 * std::pow(10.0, -snr / 20.0)},
                {"min_detectable_amplitude_m", a_min},
                {"config", cfg}};
    write_output(settings.out(), out.dump(2) + "\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Heterodyne fluorescence spectra of a single trapped Ba+ ion"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every subcommand");

    auto* spectrum = app.add_subcommand("spectrum", "Simulated spectrum-analyzer trace (CSV)");
    cli::Settings spectrum_settings(
        *spectrum,
        concat(heterodyne_settings(),
               {{"recipe", Kind::Text, "", "Preset: fig2, fig3-carrier, fig3-lower, fig3-upper"},
                {"m_micro", Kind::Real, 0.0, "Micromotion modulation index"},
                {"micro_orders", Kind::Integer, 3, "Highest micromotion sideband order"},
                {"f_drive_hz", Kind::Real, 620.5e3, "Macromotion frequency"},
                {"m_macro", Kind::Real, 0.0, "Macromotion modulation index"},
                {"noise", Kind::Flag, true, "Disable shot noise"},
                {"target_snr_db_per_hz", Kind::Real, nullptr, "Set mode matching for this SNR in 1 Hz"},
                {"duration_s", Kind::Real, nullptr, "Record length (default: averages x segment)"},
                {"rf", Kind::Flag, false, "Synthesize the full RF photocurrent and mix it down"},
                {"sample_rate_hz", Kind::Real, 204.8e6, "RF sample rate (with --rf)"},
                {"span_start_hz", Kind::Real, nullptr, "Lowest frequency written"},
                {"span_stop_hz", Kind::Real, nullptr, "Highest frequency written"},
                seed_setting()}));

    auto* scan = app.add_subcommand("scan", "Steady-state P1/2 population vs detuning (CSV)");
    cli::Settings scan_settings(
        *scan, concat(bloch_settings(),
                      {{"axis", Kind::Text, "detuning_650", "Scanned detuning: detuning_650 or detuning_493"},
                       {"start_hz", Kind::Real, -60e6, "First detuning"},
                       {"stop_hz", Kind::Real, 40e6, "Last detuning"},
                       {"points", Kind::Integer, 101, "Number of scan points"},
                       {"scale", Kind::Real, 1.0, "Signal per unit P1/2 population"},
                       {"noise_fraction", Kind::Real, 0.0, "Gaussian noise relative to the maximum"},
                       seed_setting()}));

    auto* cooling = app.add_subcommand("cooling-rate", "Laser-cooling friction coefficient (JSON)");
    bool defaults_only = false;
    cooling->add_flag("--defaults", defaults_only,
                      "Ignore --config and report at the built-in operating point");
    cli::Settings cooling_settings(
        *cooling, concat(bloch_settings(), {{"step_hz", Kind::Real, 100e3, "Finite-difference step"},
                                            seed_setting()}));

    auto* fit_sidebands = app.add_subcommand("fit-sidebands", "Fit carrier and sideband drive scans (JSON)");
    cli::Settings fit_sideband_settings(
        *fit_sidebands,
        {{"carrier", Kind::Text, IONBEAT_DATA_DIR "/fig4_carrier.csv", "Carrier trace CSV"},
         {"sideband", Kind::Text, IONBEAT_DATA_DIR "/fig4_sideband.csv", "Sideband trace CSV"},
         {"separate", Kind::Flag, false, "Fit the two traces independently"},
         {"weighted", Kind::Flag, true, "Use unit weights instead of the noise floor"},
         {"subtract_floor", Kind::Flag, true, "Keep the noise floor in the data"},
         {"fit_db", Kind::Flag, false, "Fit in dB with unit weights (joint fit only)"},
         {"max_iterations", Kind::Integer, 200, "Iteration limit"},
         seed_setting()});

    auto* fit_scan = app.add_subcommand("fit-scan", "Fit the Bloch model to a detuning scan (JSON)");
    cli::Settings fit_scan_settings(
        *fit_scan,
        concat(bloch_settings(),
               {{"scan", Kind::Text, nullptr, "Scan CSV (detuning_hz,signal[,sigma])"},
                {"free", Kind::Text,
                 "detuning_493_hz,intensity_493_mw_per_cm2,intensity_650_mw_per_cm2,b_field_gauss,scale",
                 "Comma-separated free parameters"},
                {"scale", Kind::Real, 1.0, "Initial signal scale"},
                {"max_iterations", Kind::Integer, 200, "Iteration limit"},
                seed_setting()}));

    auto* micromotion = app.add_subcommand("micromotion", "Micromotion amplitude and detection limit (JSON)");
    cli::Settings micromotion_settings(
        *micromotion,
        concat(heterodyne_settings(),
               {{"m_micro", Kind::Real, 0.47, "Measured modulation index"},
                {"angle_deg", Kind::Real, 90.0, "Angle between laser and detection directions"},
                {"wavelength_nm", Kind::Real, 493.4, "Scattered wavelength"},
                {"snr_db", Kind::Real, nullptr, "Carrier SNR in one RBW (default: shot-noise budget)"},
                seed_setting()}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << "\n" << app.help();
        return 2;
    }

    try {
        if (spectrum->parsed()) return run_spectrum(spectrum_settings);
        if (scan->parsed()) return run_scan(scan_settings);
        if (cooling->parsed()) return run_cooling_rate(cooling_settings, defaults_only);
        if (fit_sidebands->parsed()) return run_fit_sidebands(fit_sideband_settings);
        if (fit_scan->parsed()) return run_fit_scan(fit_scan_settings);
        if (micromotion->parsed()) return run_micromotion(micromotion_settings);
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const DomainError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 1;
    }
    std::cerr << app.help();
    return 2;
}
