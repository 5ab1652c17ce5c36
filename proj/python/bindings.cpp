#include <cmath>
#include <set>
#include <string>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "ionbeat/atom.hpp"
#include "ionbeat/bloch.hpp"
#include "ionbeat/errors.hpp"
#include "ionbeat/fit.hpp"
#include "ionbeat/motion.hpp"
#include "ionbeat/spectrum.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace ionbeat;

namespace {

const std::set<std::string> parameter_keys{"detuning_493_hz", "detuning_650_hz", "intensity_493_mw_per_cm2",
                                           "intensity_650_mw_per_cm2", "b_field_gauss"};

py::object to_python(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json from_python(const py::handle& obj) {
    return json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

BlochParameters parameters(const py::kwargs& kwargs) {
    const json j = from_python(kwargs);
    for (const auto& [key, value] : j.items())
        if (!parameter_keys.contains(key)) throw ConfigError(key, "unknown parameter");
    BlochParameters p;
    from_json(j, p);
    return p;
}

Eigen::Vector3d right_angle_laser() { return wave_vector({1.0, 0.0, 0.0}, 493.4e-9); }
Eigen::Vector3d right_angle_detect() { return wave_vector({0.0, 0.0, 1.0}, 493.4e-9); }

SpectrumTrace trace_from(const py::array_t<double>& freq, const py::array_t<double>& power_db, double rbw,
                         double noise_floor_db, int averages) {
    const auto f = freq.unchecked<1>();
    const auto p = power_db.unchecked<1>();
    if (f.shape(0) != p.shape(0)) throw ConfigError("power_db", "length differs from freq_hz");
    SpectrumTrace t;
    t.power_in_db = true;
    t.resolution_bandwidth = rbw;
    t.noise_floor = std::pow(10.0, noise_floor_db / 10.0);
    t.averages = averages;
    for (py::ssize_t i = 0; i < f.shape(0); ++i) {
        t.bin_centers.push_back(f(i));
        t.power.push_back(p(i));
    }
    return t;
}

py::dict trace_dict(const SpectrumTrace& t) {
    const SpectrumTrace db = t.power_in_db ? t : [&] {
        SpectrumTrace out = t.to_linear();
        for (double& v : out.power) v = 10.0 * std::log10(v);
        out.power_in_db = true;
        return out;
    }();
    py::dict d;
    d["freq_hz"] = py::array_t<double>(static_cast<py::ssize_t>(db.bin_centers.size()), db.bin_centers.data());
    d["power_db"] = py::array_t<double>(static_cast<py::ssize_t>(db.power.size()), db.power.data());
    d["rbw_hz"] = db.resolution_bandwidth;
    d["noise_floor_db"] = 10.0 * std::log10(db.noise_floor);
    d["averages"] = db.averages;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Single-ion heterodyne spectra, laser cooling and fits";

    static py::exception<Error> base(m, "Error", PyExc_RuntimeError);
    static py::exception<ConfigError> config(m, "ConfigError", PyExc_ValueError);
    static py::exception<DomainError> domain(m, "DomainError", PyExc_ValueError);
    static py::exception<NumericalError> numerical(m, "NumericalError", base.ptr());
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const ConfigError& e) {
            PyErr_SetString(config.ptr(), e.what());
        } catch (const DomainError& e) {
            PyErr_SetString(domain.ptr(), e.what());
        } catch (const NumericalError& e) {
            PyErr_SetString(numerical.ptr(), e.what());
        } catch (const Error& e) {
            PyErr_SetString(base.ptr(), e.what());
        }
    });

    m.def("recoil_frequency_hz", [](double mass_u, double wavelength_m) {
        const PhysicalConstants c;
        return recoil_frequency(mass_u * c.atomic_mass_unit, wavelength_m) / two_pi;
    }, py::arg("mass_u") = 137.9, py::arg("wavelength_m") = 493.4e-9);

    m.def("default_parameters", [] { return to_python(json(BlochParameters{})); },
          "Operating point in lab units (Hz, mW/cm^2, gauss).");

    m.def("p_population", [](const py::kwargs& kw) { return BlochModel().p_population(parameters(kw)); },
          "Steady-state P1/2 population; keyword arguments override the operating point.");

    m.def("scan_650", [](const py::array_t<double>& detunings_hz, const py::kwargs& kw) {
        const auto d = detunings_hz.unchecked<1>();
        std::vector<double> grid;
        for (py::ssize_t i = 0; i < d.shape(0); ++i) grid.push_back(angular(d(i)));
        const auto points = BlochModel().excitation_spectrum(parameters(kw), ScanAxis::Detuning650, grid);
        py::array_t<double> out(static_cast<py::ssize_t>(points.size()));
        auto o = out.mutable_unchecked<1>();
        for (std::size_t i = 0; i < points.size(); ++i)
            o(static_cast<py::ssize_t>(i)) = points[i].p_population.value_or(std::nan(""));
        return out;
    }, py::arg("detunings_hz"), "P1/2 population over the 650 nm detuning; NaN where the solve failed.");

    m.def("cooling_rate", [](const py::kwargs& kw) {
        json j = cooling_coefficient(BlochModel(), parameters(kw));
        return to_python(j);
    }, "Friction coefficient alpha (rad/s) and alpha / 2 pi (Hz).");

    m.def("micromotion_amplitude_m", [](double mod_index) {
        return micromotion_amplitude_for_index(mod_index, right_angle_laser(), right_angle_detect());
    }, py::arg("mod_index"), "Amplitude along k_d - k_l for laser and detection at right angles, 493.4 nm.");

    m.def("min_detectable_micromotion_m", [](double snr_db) {
        const Eigen::Vector3d kl = right_angle_laser(), kd = right_angle_detect();
        return min_detectable_micromotion(snr_db, kl, kd, (kd - kl).normalized());
    }, py::arg("snr_db"));

    m.def("bessel_j", &bessel_j, py::arg("n"), py::arg("m"));

    m.def("lorentzian_mod_index", &lorentzian_mod_index, py::arg("f_drive"), py::arg("m_max"),
          py::arg("f_macro"), py::arg("delta_f"));

    m.def("synthesize_sideband_traces", [](double m_max, double delta_f, double f_macro, double noise_fraction,
                                           std::uint64_t seed) {
        SidebandTraceSpec spec;
        spec.m_max = m_max;
        spec.delta_f = delta_f;
        spec.f_macro = f_macro;
        spec.noise_fraction = noise_fraction;
        spec.seed = seed;
        const auto t = synthesize_sideband_traces(spec);
        return py::make_tuple(trace_dict(t.carrier), trace_dict(t.sideband));
    }, py::arg("m_max") = 1.5, py::arg("delta_f") = 750.0, py::arg("f_macro") = 620.5e3,
       py::arg("noise_fraction") = 0.01, py::arg("seed") = 1,
       "Carrier and first-sideband drive scans as dicts of freq_hz, power_db, rbw_hz, noise_floor_db, averages.");

    m.def("fit_sideband_pair", [](const py::dict& carrier, const py::dict& sideband, bool weighted, bool fit_in_db) {
        auto unpack = [](const py::dict& d) {
            return trace_from(d["freq_hz"].cast<py::array_t<double>>(), d["power_db"].cast<py::array_t<double>>(),
                              d["rbw_hz"].cast<double>(), d["noise_floor_db"].cast<double>(),
                              d.contains("averages") ? d["averages"].cast<int>() : 1);
        };
        SidebandFitOptions opt;
        opt.weighted = weighted;
        opt.fit_in_db = fit_in_db;
        return to_python(json(fit_sideband_pair(unpack(carrier), unpack(sideband), opt)));
    }, py::arg("carrier"), py::arg("sideband"), py::arg("weighted") = true,
       py::arg("fit_in_db") = false, "Joint fit of A0, A1, m_max, delta_f and f_macro; returns the FitResult as a dict.");
}
