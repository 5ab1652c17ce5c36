#include "ionbeat/fit.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <tuple>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ionbeat/errors.hpp"
#include "ionbeat/motion.hpp"

namespace ionbeat {

namespace {

constexpr double nan = std::numeric_limits<double>::quiet_NaN();
constexpr double inf = std::numeric_limits<double>::infinity();
constexpr double first_j0_zero = 2.404825557695773;

class Objective {
public:
    Objective(const LeastSquaresProblem& problem) : problem_(problem) {
        const auto m = problem.y.size();
        weight_ = Eigen::VectorXd::Ones(m);
        if (problem.sigma) weight_ = problem.sigma->cwiseInverse();
    }

    /// Weighted residuals; returns the number of masked points.
    int residuals(std::span<const double> p, Eigen::VectorXd& r,
                  std::vector<char>* mask = nullptr) const {
        Eigen::VectorXd pred(problem_.y.size());
        problem_.model(p, pred);
        if (pred.size() != problem_.y.size())
            throw NumericalError("model returned the wrong number of predictions");
        r.resize(pred.size());
        if (mask) mask->assign(static_cast<std::size_t>(pred.size()), 0);
        int masked = 0;
        for (Eigen::Index i = 0; i < pred.size(); ++i) {
            if (std::isnan(pred[i])) {
                r[i] = 0.0;
                ++masked;
                if (mask) (*mask)[static_cast<std::size_t>(i)] = 1;
                continue;
            }
            if (!std::isfinite(pred[i])) throw NumericalError("model prediction is not finite");
            r[i] = (pred[i] - problem_.y[i]) * weight_[i];
        }
        return masked;
    }

    Eigen::MatrixXd jacobian(const Eigen::VectorXd& p, const Eigen::VectorXd& r0,
                             const std::vector<char>& mask0,
                             const LeastSquaresOptions& options) const {
        const auto n = p.size();
        Eigen::MatrixXd jac(r0.size(), n);
        auto column = [&](Eigen::Index j) {
            const auto& par = problem_.parameters[static_cast<std::size_t>(j)];
            const double scale = std::max(std::abs(p[j]), std::abs(par.initial));
            const double h = options.jacobian_step * (scale > 0.0 ? scale : 1.0);
            Eigen::VectorXd plus = p, minus = p;
            double width = 2.0 * h;
            if (p[j] + h > par.upper) {
                minus[j] = p[j] - h;
                width = h;
            } else if (p[j] - h < par.lower) {
                plus[j] = p[j] + h;
                width = h;
            } else {
                plus[j] = p[j] + h;
                minus[j] = p[j] - h;
            }
            Eigen::VectorXd rp, rm;
            std::vector<char> mp = mask0, mm = mask0;
            if (plus[j] == p[j]) rp = r0;
            else residuals(std::span<const double>(plus.data(), n), rp, &mp);
            if (minus[j] == p[j]) rm = r0;
            else residuals(std::span<const double>(minus.data(), n), rm, &mm);
            for (Eigen::Index i = 0; i < r0.size(); ++i) {
                const auto k = static_cast<std::size_t>(i);
                // A point masked at either end contributes no slope.
                const bool masked = mask0[k] || mp[k] || mm[k];
                jac(i, j) = masked ? 0.0 : (rp[i] - rm[i]) / width;
            }
        };
        if (options.parallel_jacobian && n > 1) {
            std::vector<std::future<void>> jobs;
            for (Eigen::Index j = 0; j < n; ++j)
                jobs.push_back(std::async(std::launch::async, column, j));
            for (auto& job : jobs) job.get();
        } else {
            for (Eigen::Index j = 0; j < n; ++j) column(j);
        }
        return jac;
    }

private:
    const LeastSquaresProblem& problem_;
    Eigen::VectorXd weight_;
};

void check_problem(const LeastSquaresProblem& problem) {
    const auto n = problem.parameters.size();
    if (n == 0) throw ConfigError("parameters", "no free parameters");
    if (!problem.model) throw ConfigError("model", "missing model function");
    if (static_cast<std::size_t>(problem.y.size()) < n + 1)
        throw ConfigError("data", fmt::format("need at least {} data points, got {}", n + 1,
                                              problem.y.size()));
    if (!problem.y.allFinite()) throw ConfigError("data", "non-finite data value");
    if (problem.sigma) {
        if (problem.sigma->size() != problem.y.size())
            throw ConfigError("sigma", "length differs from the data");
        for (double s : *problem.sigma)
            if (!(s > 0.0) || !std::isfinite(s))
                throw ConfigError("sigma", "must be positive and finite");
    }
    std::set<std::string> seen;
    for (const auto& p : problem.parameters) {
        if (!seen.insert(p.name).second) throw ConfigError(p.name, "parameter listed twice");
        if (!(p.lower <= p.upper)) throw ConfigError(p.name, "lower bound exceeds upper bound");
        if (!std::isfinite(p.initial) || p.initial < p.lower || p.initial > p.upper)
            throw ConfigError(p.name, "initial value outside its bounds");
    }
}

Eigen::VectorXd clamp(const Eigen::VectorXd& p, const std::vector<FitParameter>& pars) {
    Eigen::VectorXd out = p;
    for (Eigen::Index j = 0; j < p.size(); ++j)
        out[j] = std::clamp(p[j], pars[static_cast<std::size_t>(j)].lower,
                            pars[static_cast<std::size_t>(j)].upper);
    return out;
}

/// Throws NonIdentifiable when the column-scaled normal matrix is singular.
void check_identifiable(const Eigen::MatrixXd& jac, const std::vector<FitParameter>& pars) {
    const Eigen::VectorXd norms = jac.colwise().norm();
    const double largest = norms.maxCoeff();
    std::vector<std::string> flat;
    for (Eigen::Index j = 0; j < norms.size(); ++j)
        if (!(norms[j] > 1e-12 * largest)) flat.push_back(pars[static_cast<std::size_t>(j)].name);
    if (!flat.empty()) throw NonIdentifiable(flat);

    const Eigen::MatrixXd scaled = jac * norms.cwiseInverse().asDiagonal();
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(scaled.transpose() * scaled);
    if (eig.eigenvalues()[0] > 1e-10) return;
    const Eigen::VectorXd v = eig.eigenvectors().col(0);
    std::vector<std::string> names;
    for (Eigen::Index j = 0; j < v.size(); ++j)
        if (std::abs(v[j]) > 0.2) names.push_back(pars[static_cast<std::size_t>(j)].name);
    throw NonIdentifiable(names);
}

double median(std::vector<double> v) {
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
}

double trace_prediction(TraceKind kind, double f, double amplitude, double m_max, double delta_f,
                        double f_macro) {
    const double m = lorentzian_mod_index(f, m_max, f_macro, delta_f);
    const double a = amplitude * bessel_j(kind == TraceKind::CarrierJ0 ? 0 : 1, m);
    return a * a;
}

/// m in [0, first zero of J0] with J0(m)^2 = ratio.
double inverse_j0_squared(double ratio) {
    if (ratio >= 1.0) return 0.0;
    double lo = 0.0, hi = first_j0_zero;
    for (int i = 0; i < 100; ++i) {
        const double mid = 0.5 * (lo + hi);
        const double j0 = bessel_j(0, mid);
        (j0 * j0 > ratio ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

struct PairGuess {
    double a0, a1, m_max, delta_f, f_macro;
};

PairGuess guess_pair(const TraceData& carrier, const TraceData& sideband) {
    const auto& f = sideband.f_drive;
    const auto& s = sideband.power;
    const auto peak = static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
    const double top = s[peak];
    const double noise = sideband.sigma.empty() ? 0.0 : median(sideband.sigma);
    if (!(top > 0.0) || top - median(s) <= 5.0 * noise)
        throw NonIdentifiable({"delta_f", "f_macro"});

    auto crossing = [&](int dir) {
        auto i = static_cast<std::ptrdiff_t>(peak);
        const auto last = static_cast<std::ptrdiff_t>(s.size()) - 1;
        while (i + dir >= 0 && i + dir <= last) {
            const auto next = i + dir;
            if (s[static_cast<std::size_t>(next)] < 0.5 * top) {
                const double y0 = s[static_cast<std::size_t>(i)];
                const double y1 = s[static_cast<std::size_t>(next)];
                const double t = (y0 - 0.5 * top) / (y0 - y1);
                return f[static_cast<std::size_t>(i)] +
                       t * (f[static_cast<std::size_t>(next)] - f[static_cast<std::size_t>(i)]);
            }
            i = next;
        }
        return f[static_cast<std::size_t>(i)];
    };
    const double width = std::max(crossing(1) - crossing(-1), f.size() > 1 ? f[1] - f[0] : 1.0);

    PairGuess g{};
    g.f_macro = f[peak];
    // For small m the first sideband goes as m^2, so its half-height width is
    // sqrt(sqrt(2) - 1) times the width of m(f).
    g.delta_f = width / std::sqrt(std::sqrt(2.0) - 1.0);

    std::vector<double> wings;
    for (std::size_t i = 0; i < f.size(); ++i)
        if (std::abs(f[i] - g.f_macro) > 2.0 * g.delta_f) wings.push_back(carrier.power[i]);
    const double baseline = wings.empty()
                                ? *std::max_element(carrier.power.begin(), carrier.power.end())
                                : median(wings);
    g.a0 = std::sqrt(std::max(baseline, 1e-300));
    const double ratio = std::clamp(carrier.power[peak] / g.a0 / g.a0, 1e-6, 1.0);
    g.m_max = std::max(inverse_j0_squared(ratio), 0.1);
    g.a1 = std::sqrt(top) / std::max(std::abs(bessel_j(1, g.m_max)), 0.05);
    return g;
}

void check_shared_grid(const TraceData& a, const TraceData& b) {
    if (a.f_drive.size() != b.f_drive.size())
        throw ConfigError("f_drive", "carrier and sideband traces have different grids");
    for (std::size_t i = 0; i < a.f_drive.size(); ++i)
        if (std::abs(a.f_drive[i] - b.f_drive[i]) > 1e-9 * std::abs(a.f_drive[i]))
            throw ConfigError("f_drive", "carrier and sideband traces have different grids");
}

std::vector<FitParameter> response_parameters(const PairGuess& g, const TraceData& data) {
    const auto [lo, hi] = std::minmax_element(data.f_drive.begin(), data.f_drive.end());
    return {{"m_max", g.m_max, 0.0, 50.0},
            {"delta_f", g.delta_f, 1e-9 * std::max(std::abs(*hi), 1.0), inf},
            {"f_macro", g.f_macro, *lo, *hi}};
}

bool usable_sigma(const TraceData& d) {
    return !d.sigma.empty() &&
           std::all_of(d.sigma.begin(), d.sigma.end(), [](double s) { return s > 0.0; });
}

// Unit-weight residuals in dB against 10 log10(model + floor per bin), with
// the floor left in the data.
FitResult fit_pair_in_db(const SpectrumTrace& carrier_trace, const SpectrumTrace& sideband_trace,
                         const SidebandFitOptions& options) {
    const TraceData carrier = trace_data(carrier_trace, true);
    const TraceData sideband = trace_data(sideband_trace, true);
    check_shared_grid(carrier, sideband);
    const PairGuess g = guess_pair(carrier, sideband);

    const SpectrumTrace cl = carrier_trace.to_linear(), sl = sideband_trace.to_linear();
    const double floor_c = cl.noise_floor * cl.resolution_bandwidth;
    const double floor_s = sl.noise_floor * sl.resolution_bandwidth;
    const std::size_t m = cl.power.size();
    LeastSquaresProblem problem;
    problem.parameters = {{"A0", g.a0, 0.0, inf}, {"A1", g.a1, 0.0, inf}};
    for (auto& p : response_parameters(g, carrier)) problem.parameters.push_back(p);
    problem.y.resize(static_cast<Eigen::Index>(2 * m));
    for (std::size_t i = 0; i < m; ++i) {
        if (!(cl.power[i] > 0.0) || !(sl.power[i] > 0.0))
            throw ConfigError("power", "dB fit needs positive bin powers");
        problem.y[static_cast<Eigen::Index>(i)] = 10.0 * std::log10(cl.power[i]);
        problem.y[static_cast<Eigen::Index>(m + i)] = 10.0 * std::log10(sl.power[i]);
    }
    const std::vector<double> f = carrier.f_drive;
    problem.model = [f, floor_c, floor_s](std::span<const double> p, Eigen::VectorXd& out) {
        const std::size_t m = f.size();
        out.resize(static_cast<Eigen::Index>(2 * m));
        for (std::size_t i = 0; i < m; ++i) {
            out[static_cast<Eigen::Index>(i)] =
                10.0 * std::log10(trace_prediction(TraceKind::CarrierJ0, f[i], p[0], p[2], p[3], p[4]) + floor_c);
            out[static_cast<Eigen::Index>(m + i)] =
                10.0 * std::log10(trace_prediction(TraceKind::SidebandJ1, f[i], p[1], p[2], p[3], p[4]) + floor_s);
        }
    };
    return least_squares(problem, options.least_squares);
}

}  // namespace

double FitResult::value(const std::string& name) const {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw DomainError("no fitted parameter named " + name);
    return values[static_cast<std::size_t>(it - names.begin())];
}

double FitResult::error(const std::string& name) const {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw DomainError("no fitted parameter named " + name);
    if (standard_errors.empty()) throw NumericalError("fit did not converge; no standard errors");
    return standard_errors[static_cast<std::size_t>(it - names.begin())];
}

void to_json(nlohmann::json& j, const FitResult& r) {
    j = nlohmann::json::object();
    j["parameter_names"] = r.names;
    for (std::size_t i = 0; i < r.names.size(); ++i) j["parameters"][r.names[i]] = r.values[i];
    if (!r.standard_errors.empty()) {
        for (std::size_t i = 0; i < r.names.size(); ++i)
            j["standard_errors"][r.names[i]] = r.standard_errors[i];
        auto& cov = j["covariance"] = nlohmann::json::array();
        for (Eigen::Index a = 0; a < r.covariance.rows(); ++a) {
            std::vector<double> row(r.covariance.row(a).begin(), r.covariance.row(a).end());
            cov.push_back(row);
        }
    }
    j["residual_norm"] = r.residual_norm;
    j["iterations"] = r.iterations;
    j["converged"] = r.converged;
    j["data_points"] = r.data_points;
    j["masked_points"] = r.masked_points;
    j["message"] = r.message;
}

FitResult least_squares(const LeastSquaresProblem& problem, const LeastSquaresOptions& options) {
    check_problem(problem);
    const auto& pars = problem.parameters;
    const auto n = static_cast<Eigen::Index>(pars.size());
    const Objective objective(problem);

    Eigen::VectorXd p(n);
    for (Eigen::Index j = 0; j < n; ++j) p[j] = pars[static_cast<std::size_t>(j)].initial;
    auto eval = [&](const Eigen::VectorXd& q, Eigen::VectorXd& r, std::vector<char>& mask) {
        return objective.residuals(std::span<const double>(q.data(), q.size()), r, &mask);
    };

    Eigen::VectorXd r;
    std::vector<char> mask;
    int masked = eval(p, r, mask);
    if (masked == r.size()) throw NumericalError("every data point is masked at the initial guess");
    double cost = 0.5 * r.squaredNorm();

    FitResult result;
    double lambda = 1e-3;
    Eigen::MatrixXd jac;
    if (cost == 0.0) {
        result.converged = true;
        result.message = "exact fit at the initial point";
    }
    while (!result.converged && result.iterations < options.max_iterations) {
        ++result.iterations;
        jac = objective.jacobian(p, r, mask, options);
        const Eigen::MatrixXd a = jac.transpose() * jac;
        const Eigen::VectorXd g = jac.transpose() * r;
        Eigen::VectorXd d = a.diagonal();
        const double dmax = d.maxCoeff();
        if (!(dmax > 0.0)) check_identifiable(jac, pars);
        d = d.cwiseMax(1e-30 * dmax);
        const Eigen::VectorXd dsqrt = d.cwiseSqrt();

        bool accepted = false;
        while (!accepted) {
            Eigen::MatrixXd damped = a;
            damped.diagonal() += lambda * d;
            const Eigen::LDLT<Eigen::MatrixXd> ldlt(damped);
            const Eigen::VectorXd step = ldlt.solve(-g);
            if (ldlt.info() != Eigen::Success || !step.allFinite()) {
                lambda *= 10.0;
                if (lambda > 1e30) throw NumericalError("damped normal equations are singular");
                continue;
            }
            const Eigen::VectorXd trial = clamp(p + step, pars);
            const Eigen::VectorXd moved = trial - p;
            const bool small_step = dsqrt.cwiseProduct(moved).norm() <=
                                    options.step_tolerance * dsqrt.cwiseProduct(p).norm();
            Eigen::VectorXd r_trial;
            std::vector<char> mask_trial;
            const int masked_trial = eval(trial, r_trial, mask_trial);
            const double cost_trial = 0.5 * r_trial.squaredNorm();
            if (masked_trial < r_trial.size() && cost_trial < cost) {
                const bool small_decrease = cost - cost_trial <= options.cost_tolerance * cost;
                p = trial;
                r = std::move(r_trial);
                mask = std::move(mask_trial);
                masked = masked_trial;
                cost = cost_trial;
                lambda = std::max(lambda / 10.0, 1e-12);
                accepted = true;
                if (cost == 0.0 || small_step || small_decrease) {
                    result.converged = true;
                    result.message = small_step ? "relative step below tolerance"
                                                : "relative cost change below tolerance";
                }
            } else {
                if (small_step) {
                    result.converged = true;
                    result.message = "relative step below tolerance";
                    break;
                }
                lambda *= 10.0;
            }
        }
    }
    if (!result.converged)
        result.message = fmt::format("no convergence after {} iterations (cost {}, lambda {})",
                                     result.iterations, cost, lambda);

    result.names.reserve(pars.size());
    for (const auto& par : pars) result.names.push_back(par.name);
    result.values.assign(p.data(), p.data() + n);
    result.residual_norm = r.norm();
    result.residuals = r;
    result.data_points = static_cast<int>(r.size());
    result.masked_points = masked;

    jac = objective.jacobian(p, r, mask, options);
    check_identifiable(jac, pars);
    if (result.converged) {
        const Eigen::VectorXd norms = jac.colwise().norm();
        const Eigen::MatrixXd scaled = jac * norms.cwiseInverse().asDiagonal();
        const Eigen::MatrixXd inv = (scaled.transpose() * scaled)
                                        .ldlt()
                                        .solve(Eigen::MatrixXd::Identity(n, n));
        Eigen::MatrixXd cov = norms.cwiseInverse().asDiagonal() * inv *
                              norms.cwiseInverse().asDiagonal();
        if (!problem.sigma) {
            const auto dof = static_cast<double>(r.size() - masked - n);
            cov *= dof > 0.0 ? 2.0 * cost / dof : inf;
        }
        result.covariance = cov;
        for (Eigen::Index j = 0; j < n; ++j) result.standard_errors.push_back(std::sqrt(cov(j, j)));
    }
    return result;
}

FitResult least_squares(const std::vector<FitParameter>& parameters,
                        const std::function<double(double, std::span<const double>)>& f,
                        std::span<const double> x, std::span<const double> y,
                        std::optional<std::span<const double>> sigma,
                        const LeastSquaresOptions& options) {
    if (x.size() != y.size()) throw ConfigError("data", "x and y lengths differ");
    LeastSquaresProblem problem;
    problem.parameters = parameters;
    problem.y = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
    if (sigma)
        problem.sigma =
            Eigen::Map<const Eigen::VectorXd>(sigma->data(), static_cast<Eigen::Index>(sigma->size()));
    std::vector<double> xs(x.begin(), x.end());
    problem.model = [f, xs](std::span<const double> p, Eigen::VectorXd& out) {
        out.resize(static_cast<Eigen::Index>(xs.size()));
        for (std::size_t i = 0; i < xs.size(); ++i) out[static_cast<Eigen::Index>(i)] = f(xs[i], p);
    };
    return least_squares(problem, options);
}

void TraceModel::validate() const {
    if (kind == TraceKind::BlochScan)
        throw ConfigError("kind", "bloch_scan traces are fitted with fit_bloch_scan");
    const std::string amp = kind == TraceKind::CarrierJ0 ? "A0" : "A1";
    std::set<std::string> expected{amp, "m_max", "delta_f", "f_macro"};
    std::set<std::string> seen;
    for (const auto& [name, value] : fixed) {
        if (!expected.contains(name)) throw ConfigError(name, "not a parameter of this trace model");
        if (!std::isfinite(value)) throw ConfigError(name, "fixed value must be finite");
        seen.insert(name);
    }
    for (const auto& p : free) {
        if (!expected.contains(p.name)) throw ConfigError(p.name, "not a parameter of this trace model");
        if (!seen.insert(p.name).second) throw ConfigError(p.name, "both fixed and free");
        if (p.initial < p.lower || p.initial > p.upper)
            throw ConfigError(p.name, "initial value outside its bounds");
    }
    for (const auto& name : expected)
        if (!seen.contains(name)) throw ConfigError(name, "neither fixed nor free");
}

TraceData trace_data(const SpectrumTrace& trace, bool subtract_floor) {
    const SpectrumTrace lin = trace.to_linear();
    const double floor_bin = lin.noise_floor * lin.resolution_bandwidth;
    TraceData d;
    d.f_drive = lin.bin_centers;
    d.power = lin.power;
    if (subtract_floor)
        for (double& p : d.power) p -= floor_bin;
    if (floor_bin > 0.0)
        d.sigma.assign(d.power.size(), floor_bin / std::sqrt(std::max(lin.averages, 1)));
    return d;
}

FitResult fit_trace(const TraceModel& model, const TraceData& data,
                    const LeastSquaresOptions& options) {
    model.validate();
    const TraceKind kind = model.kind;
    const std::string amp = kind == TraceKind::CarrierJ0 ? "A0" : "A1";
    const std::array<std::string, 4> order{amp, "m_max", "delta_f", "f_macro"};
    std::array<int, 4> slot{};
    std::array<double, 4> base{};
    for (std::size_t i = 0; i < order.size(); ++i) {
        slot[i] = -1;
        if (const auto it = model.fixed.find(order[i]); it != model.fixed.end()) base[i] = it->second;
        for (std::size_t k = 0; k < model.free.size(); ++k)
            if (model.free[k].name == order[i]) slot[i] = static_cast<int>(k);
    }

    // Points are fitted in a canonical order so that floating-point summation,
    // and with it the optimum, does not depend on how the input was arranged.
    const std::size_t npts = data.power.size();
    std::vector<std::size_t> perm(npts);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    const bool weighted = usable_sigma(data);
    std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
        const auto key = [&](std::size_t i) {
            return std::tuple(data.f_drive[i], data.power[i], weighted ? data.sigma[i] : 0.0);
        };
        return key(a) < key(b);
    });

    LeastSquaresProblem problem;
    problem.parameters = model.free;
    problem.y.resize(static_cast<Eigen::Index>(npts));
    std::vector<double> f(npts);
    for (std::size_t i = 0; i < npts; ++i) {
        problem.y[static_cast<Eigen::Index>(i)] = data.power[perm[i]];
        f[i] = data.f_drive[perm[i]];
    }
    if (weighted) {
        problem.sigma = Eigen::VectorXd(static_cast<Eigen::Index>(npts));
        for (std::size_t i = 0; i < npts; ++i)
            (*problem.sigma)[static_cast<Eigen::Index>(i)] = data.sigma[perm[i]];
    }
    problem.model = [=](std::span<const double> p, Eigen::VectorXd& out) {
        std::array<double, 4> v = base;
        for (std::size_t i = 0; i < 4; ++i)
            if (slot[i] >= 0) v[i] = p[static_cast<std::size_t>(slot[i])];
        out.resize(static_cast<Eigen::Index>(f.size()));
        for (std::size_t i = 0; i < f.size(); ++i)
            out[static_cast<Eigen::Index>(i)] = trace_prediction(kind, f[i], v[0], v[1], v[2], v[3]);
    };
    FitResult result = least_squares(problem, options);
    if (result.residuals.size() == static_cast<Eigen::Index>(npts)) {
        Eigen::VectorXd original(result.residuals.size());
        for (std::size_t i = 0; i < npts; ++i)
            original[static_cast<Eigen::Index>(perm[i])] = result.residuals[static_cast<Eigen::Index>(i)];
        result.residuals = std::move(original);
    }
    return result;
}

FitResult fit_sideband_pair(const SpectrumTrace& carrier_trace,
                            const SpectrumTrace& sideband_trace,
                            const SidebandFitOptions& options) {
    if (options.fit_in_db) return fit_pair_in_db(carrier_trace, sideband_trace, options);
    TraceData carrier = trace_data(carrier_trace, options.subtract_floor);
    TraceData sideband = trace_data(sideband_trace, options.subtract_floor);
    check_shared_grid(carrier, sideband);
    const PairGuess g = guess_pair(carrier, sideband);

    LeastSquaresProblem problem;
    problem.parameters = {{"A0", g.a0, 0.0, inf}, {"A1", g.a1, 0.0, inf}};
    for (auto& p : response_parameters(g, carrier)) problem.parameters.push_back(p);

    const std::size_t m = carrier.power.size();
    problem.y.resize(static_cast<Eigen::Index>(2 * m));
    for (std::size_t i = 0; i < m; ++i) {
        problem.y[static_cast<Eigen::Index>(i)] = carrier.power[i];
        problem.y[static_cast<Eigen::Index>(m + i)] = sideband.power[i];
    }
    if (options.weighted && usable_sigma(carrier) && usable_sigma(sideband)) {
        Eigen::VectorXd sigma(2 * m);
        for (std::size_t i = 0; i < m; ++i) {
            sigma[static_cast<Eigen::Index>(i)] = carrier.sigma[i];
            sigma[static_cast<Eigen::Index>(m + i)] = sideband.sigma[i];
        }
        problem.sigma = sigma;
    }
    const std::vector<double> f = carrier.f_drive;
    problem.model = [f](std::span<const double> p, Eigen::VectorXd& out) {
        const std::size_t m = f.size();
        out.resize(static_cast<Eigen::Index>(2 * m));
        for (std::size_t i = 0; i < m; ++i) {
            out[static_cast<Eigen::Index>(i)] =
                trace_prediction(TraceKind::CarrierJ0, f[i], p[0], p[2], p[3], p[4]);
            out[static_cast<Eigen::Index>(m + i)] =
                trace_prediction(TraceKind::SidebandJ1, f[i], p[1], p[2], p[3], p[4]);
        }
    };
    return least_squares(problem, options.least_squares);
}

SeparateSidebandFits fit_sideband_traces_separately(const SpectrumTrace& carrier_trace,
                                                    const SpectrumTrace& sideband_trace,
                                                    const SidebandFitOptions& options) {
    if (options.fit_in_db) throw ConfigError("fit_in_db", "only available for the joint fit");
    TraceData carrier = trace_data(carrier_trace, options.subtract_floor);
    TraceData sideband = trace_data(sideband_trace, options.subtract_floor);
    check_shared_grid(carrier, sideband);
    const PairGuess g = guess_pair(carrier, sideband);
    if (!options.weighted) {
        carrier.sigma.clear();
        sideband.sigma.clear();
    }
    TraceModel cm{TraceKind::CarrierJ0, {}, {{"A0", g.a0, 0.0, inf}}};
    TraceModel sm{TraceKind::SidebandJ1, {}, {{"A1", g.a1, 0.0, inf}}};
    for (auto& p : response_parameters(g, carrier)) {
        cm.free.push_back(p);
        sm.free.push_back(p);
    }
    return {fit_trace(cm, carrier, options.least_squares),
            fit_trace(sm, sideband, options.least_squares)};
}

SidebandTraces synthesize_sideband_traces(const SidebandTraceSpec& spec) {
    if (spec.points < 2) throw ConfigError("points", "need at least 2 points");
    if (!(spec.delta_f > 0.0)) throw ConfigError("delta_f", "must be positive");
    if (!(spec.half_span > 0.0)) throw ConfigError("half_span", "must be positive");
    if (!(spec.noise_fraction >= 0.0)) throw ConfigError("noise_fraction", "must be >= 0");
    if (spec.averages < 1) throw ConfigError("averages", "must be >= 1");

    std::vector<double> f(static_cast<std::size_t>(spec.points));
    for (int i = 0; i < spec.points; ++i)
        f[static_cast<std::size_t>(i)] =
            spec.f_macro - spec.half_span + 2.0 * spec.half_span * i / (spec.points - 1);

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> gauss;
    auto make = [&](TraceKind kind, double amplitude) {
        SpectrumTrace t;
        t.bin_centers = f;
        t.resolution_bandwidth = 1.0;
        t.averages = spec.averages;
        t.seed = spec.seed;
        for (double fi : f)
            t.power.push_back(trace_prediction(kind, fi, amplitude, spec.m_max, spec.delta_f,
                                               spec.f_macro));
        const double sigma = spec.noise_fraction * *std::max_element(t.power.begin(), t.power.end());
        const double floor_bin = sigma * std::sqrt(static_cast<double>(spec.averages));
        for (double& p : t.power) p += floor_bin + sigma * gauss(rng);
        t.noise_floor = floor_bin / t.resolution_bandwidth;
        return t;
    };
    SidebandTraces out;
    out.carrier = make(TraceKind::CarrierJ0, spec.a0);
    out.sideband = make(TraceKind::SidebandJ1, spec.a1);
    return out;
}

FitResult fit_bloch_scan(const BlochModel& model, const ScanData& data,
                         const BlochFitOptions& options) {
    if (data.detuning_650.size() != data.signal.size())
        throw ConfigError("scan", "detuning and signal lengths differ");
    if (!data.sigma.empty() && data.sigma.size() != data.signal.size())
        throw ConfigError("sigma", "length differs from the data");
    options.initial.validate();

    struct Slot {
        const char* name;
        double lower;
    };
    static constexpr std::array<Slot, 5> slots{{{"detuning_493_hz", -inf},
                                               {"intensity_493_mw_per_cm2", 1e-9},
                                               {"intensity_650_mw_per_cm2", 1e-9},
                                               {"b_field_gauss", 0.0},
                                               {"scale", 0.0}}};
    const BlochParameters& p0 = options.initial;
    const std::array<double, 5> start{p0.detuning_493 / two_pi, p0.intensity_493 / 10.0,
                                      p0.intensity_650 / 10.0, p0.b_field * 1e4,
                                      options.initial_scale};
    std::array<int, 5> where{-1, -1, -1, -1, -1};
    LeastSquaresProblem problem;
    for (const auto& name : options.free) {
        const auto it = std::find_if(slots.begin(), slots.end(),
                                     [&](const Slot& s) { return name == s.name; });
        if (it == slots.end()) throw ConfigError(name, "not a fittable scan parameter");
        const auto k = static_cast<std::size_t>(it - slots.begin());
        if (where[k] >= 0) throw ConfigError(name, "parameter listed twice");
        where[k] = static_cast<int>(problem.parameters.size());
        problem.parameters.push_back({name, start[k], it->lower, inf});
    }

    problem.y = Eigen::Map<const Eigen::VectorXd>(data.signal.data(),
                                                  static_cast<Eigen::Index>(data.signal.size()));
    if (!data.sigma.empty())
        problem.sigma = Eigen::Map<const Eigen::VectorXd>(
            data.sigma.data(), static_cast<Eigen::Index>(data.sigma.size()));

    std::vector<double> grid;
    for (double d : data.detuning_650) grid.push_back(angular(d));
    problem.model = [&model, grid, where, start, p0](std::span<const double> p,
                                                     Eigen::VectorXd& out) {
        std::array<double, 5> v = start;
        for (std::size_t k = 0; k < v.size(); ++k)
            if (where[k] >= 0) v[k] = p[static_cast<std::size_t>(where[k])];
        BlochParameters q = p0;
        q.detuning_493 = angular(v[0]);
        q.intensity_493 = v[1] * 10.0;
        q.intensity_650 = v[2] * 10.0;
        q.b_field = v[3] * 1e-4;
        const auto points = model.excitation_spectrum(q, ScanAxis::Detuning650, grid);
        out.resize(static_cast<Eigen::Index>(points.size()));
        for (std::size_t i = 0; i < points.size(); ++i)
            out[static_cast<Eigen::Index>(i)] =
                points[i].p_population ? v[4] * *points[i].p_population : nan;
    };
    return least_squares(problem, options.least_squares);
}

ScanData synthesize_bloch_scan(const BlochModel& model, const BlochParameters& p,
                               std::span<const double> detuning_650_hz, double noise_fraction,
                               std::uint64_t seed, double scale) {
    if (!(noise_fraction >= 0.0)) throw ConfigError("noise_fraction", "must be >= 0");
    std::vector<double> grid;
    for (double d : detuning_650_hz) grid.push_back(angular(d));
    const auto points = model.excitation_spectrum(p, ScanAxis::Detuning650, grid);
    ScanData data;
    data.detuning_650.assign(detuning_650_hz.begin(), detuning_650_hz.end());
    for (const auto& point : points) {
        if (!point.p_population)
            throw NumericalError(fmt::format("steady state failed at {} Hz: {}",
                                             point.detuning / two_pi, point.error));
        data.signal.push_back(scale * *point.p_population);
    }
    if (noise_fraction > 0.0) {
        const double sigma = noise_fraction * *std::max_element(data.signal.begin(), data.signal.end());
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> gauss;
        for (double& s : data.signal) s += sigma * gauss(rng);
        data.sigma.assign(data.signal.size(), sigma);
    }
    return data;
}

void write_scan_csv(std::ostream& os, const ScanData& data) {
    const bool with_sigma = !data.sigma.empty();
    os << (with_sigma ? "detuning_hz,signal,sigma\n" : "detuning_hz,signal\n");
    for (std::size_t i = 0; i < data.signal.size(); ++i) {
        os << fmt::format("{},{}", data.detuning_650[i], data.signal[i]);
        if (with_sigma) os << fmt::format(",{}", data.sigma[i]);
        os << '\n';
    }
}

ScanData read_scan_csv(std::istream& is) {
    ScanData data;
    std::string line;
    int columns = 0;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (columns == 0) {
            if (line == "detuning_hz,signal" || line == "detuning_hz,p_population") columns = 2;
            else if (line == "detuning_hz,signal,sigma") columns = 3;
            else throw ConfigError("scan", "unrecognized column header '" + line + "'");
            continue;
        }
        std::istringstream row(line);
        double d = 0.0, s = 0.0, e = 0.0;
        char c1 = 0, c2 = ',';
        row >> d >> c1 >> s;
        if (columns == 3) row >> c2 >> e;
        if (!row || c1 != ',' || c2 != ',')
            throw ConfigError("scan", "malformed row on line " + std::to_string(line_no));
        data.detuning_650.push_back(d);
        data.signal.push_back(s);
        if (columns == 3) data.sigma.push_back(e);
    }
    if (columns == 0) throw ConfigError("scan", "missing column header");
    return data;
}

double ljung_box(std::span<const double> residuals, int lags) {
    const auto n = static_cast<double>(residuals.size());
    if (lags < 1 || static_cast<double>(lags) >= n) throw DomainError("lags must lie in [1, n)");
    const double mean = std::accumulate(residuals.begin(), residuals.end(), 0.0) / n;
    double var = 0.0;
    for (double r : residuals) var += (r - mean) * (r - mean);
    double q = 0.0;
    for (int k = 1; k <= lags; ++k) {
        double c = 0.0;
        for (std::size_t i = static_cast<std::size_t>(k); i < residuals.size(); ++i)
            c += (residuals[i] - mean) * (residuals[i - static_cast<std::size_t>(k)] - mean);
        const double rho = c / var;
        q += rho * rho / (n - k);
    }
    return n * (n + 2.0) * q;
}

}  // namespace ionbeat
