// Writes the bundled synthetic datasets: spectrum-analyzer traces shaped like
// the elastic-peak, micromotion-sideband and macromotion-drive measurements.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "ionbeat/fit.hpp"
#include "ionbeat/spectrum.hpp"

using namespace ionbeat;

namespace {

void save(const std::filesystem::path& path, const SpectrumTrace& trace, const nlohmann::json& echo) {
    std::ofstream out(path, std::ios::binary);
    write_trace_csv(out, trace);
    std::ofstream(path.string() + ".config.json", std::ios::binary) << echo.dump(2) << "\n";
    if (!out) throw std::runtime_error("cannot write " + path.string());
}

SpectrumTrace crop(SpectrumTrace t, double lo, double hi) {
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

}  // namespace

int main(int argc, char** argv) {
    if (argc != 2) {
        std::cerr << "usage: ionbeat_datasets <output-directory>\n";
        return 2;
    }
    const std::filesystem::path dir = argv[1];
    std::filesystem::create_directories(dir);
    try {
        // Elastic peak at 61 mHz resolution.
        HeterodyneConfig fig2;
        fig2.window = Window::Uniform;
        fig2.resolution_bandwidth = 100e3 / (4096.0 * 400.0);
        fig2.averages = 16;
        HeterodyneConfig one_hz = fig2;
        one_hz.resolution_bandwidth = 1.0;
        fig2.mode_matching = mode_matching_for_snr(one_hz, 17.0);
        const double duration = fig2.averages * static_cast<double>(segment_length(fig2)) / fig2.analyzer_rate;
        const auto elastic = analyze_baseband_equivalent(fig2, {}, duration, 2);
        save(dir / "fig2.csv", crop(elastic, 50e3 - 2.0, 50e3 + 2.0),
             {{"heterodyne", fig2}, {"m_micro", 0.0}, {"duration_s", duration}, {"seed", 2}});

        // Carrier and first micromotion sidebands, m = 0.47, 1 Hz resolution.
        Modulation micro;
        micro.m_micro = 0.47;
        const std::pair<const char*, double> shifts[] = {
            {"fig3_lower.csv", -18.53e6}, {"fig3_carrier.csv", 0.0}, {"fig3_upper.csv", 18.53e6}};
        std::uint64_t seed = 3;
        for (const auto& [name, shift] : shifts) {
            HeterodyneConfig c;
            c.f_mix += shift;
            const double d = static_cast<double>(segment_length(c)) / c.analyzer_rate;
            const auto trace = analyze_baseband_equivalent(c, micro, d, seed);
            save(dir / name, crop(trace, 50e3 - 20.0, 50e3 + 20.0),
                 {{"heterodyne", c}, {"m_micro", 0.47}, {"duration_s", d}, {"seed", seed}});
            ++seed;
        }

        // Drive scan across the 620.5 kHz mode.
        SidebandTraceSpec spec;
        spec.seed = 4;
        const auto traces = synthesize_sideband_traces(spec);
        const nlohmann::json echo = {{"m_max", spec.m_max},         {"delta_f_hz", spec.delta_f},
                                     {"f_macro_hz", spec.f_macro},  {"a0", spec.a0},
                                     {"a1", spec.a1},               {"half_span_hz", spec.half_span},
                                     {"points", spec.points},       {"noise_fraction", spec.noise_fraction},
                                     {"averages", spec.averages},   {"seed", spec.seed}};
        save(dir / "fig4_carrier.csv", traces.carrier, echo);
        save(dir / "fig4_sideband.csv", traces.sideband, echo);
    } catch (const std::exception& e) {
        std::cerr << "ionbeat_datasets: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
