#include "experiments.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "mvlab/conjugation.hpp"
#include "mvlab/errors.hpp"
#include "mvlab/grid.hpp"
#include "mvlab/measures.hpp"
#include "mvlab/mv_ns.hpp"
#include "mvlab/mv_rd.hpp"
#include "mvlab/mv_sode.hpp"
#include "mvlab/noise_paths.hpp"
#include "mvlab/rng.hpp"

namespace mvlab::cli {

using attractor::Status;

namespace {

// ---------------------------------------------------------------- config

json measures_defaults() {
    return {{"max_size", 64},
            {"powers", {1.0, 2.0}},
            {"agreement_tolerance", 1e-9},
            {"axiom_triples", 100},
            {"axiom_size", 16},
            {"axiom_dim", 2},
            {"axiom_tolerance", 1e-12}};
}

json noise_defaults() {
    return {{"ou_etas", {1.0, 5.0, 20.0}},
            {"ou_samples", 100000},
            {"ou_dt", 1e-2},
            {"ou_horizon", 1.0},
            {"ou_tolerance", 0.05}};
}

json sode_defaults() {
    return {{"M_cut", 2.0},
            {"eps", 0.5},
            {"dt", 1e-3},
            {"flow_triples", 20},
            {"flow_window", 2.0},
            {"pullback_times", {1.0, 2.0, 4.0, 8.0}},
            {"n_states", 20},
            {"state_range", 5.0},
            {"cloud_size", 64},
            {"n_seeds", 3},
            {"diameter_threshold", 1e-3},
            {"tail_count", 3},
            {"lyapunov_alpha", 8.0},
            {"lyapunov_M", 0.0},
            {"n_particles", 4096},
            {"initial_half_width", 1.5},
            {"lyapunov_t_end", 2.0},
            {"lyapunov_samples", 40},
            {"rate_threshold", -4.0},
            {"conj_eta", 5.0},
            {"conj_dts", {1e-2, 5e-3, 2.5e-3}},
            {"conj_t_end", 1.0},
            {"conj_x0", 1.0},
            {"conj_measure", {-0.5, 0.0, 0.5}},
            {"min_order", 0.5},
            {"terminal_tolerance", 1e-2}};
}

json rd_defaults() {
    const rd::RdConfig c;
    return {{"k_modes", c.k_modes},
            {"c0", c.c0},
            {"noise_decay", c.noise_decay},
            {"noise", c.noise},
            {"dt", c.dt},
            {"n_particles", c.n_particles},
            {"n_omega", c.n_omega},
            {"pullback_times", c.pullback_times},
            {"contraction_t_end", 4.0},
            {"contraction_samples", 40},
            {"slope_tolerance", 0.2},
            {"diameter_threshold", 1e-2},
            {"law_tolerance", 0.1}};
}

json ns_defaults() {
    const ns::NsConfig c;
    return {{"k_modes", c.k_modes},
            {"nu_c", c.nu_c},
            {"d_noise", c.d_noise},
            {"eta", c.eta},
            {"f_kind", ns::to_string(c.f_kind)},
            {"c0", c.c0},
            {"h_amp", c.h_amp},
            {"n_sat", c.n_sat},
            {"p_moment", c.p_moment},
            {"dt", c.dt},
            {"n_particles", c.n_particles},
            {"noise", c.noise},
            {"nonlinear", c.nonlinear},
            {"probe_radius", c.probe_radius},
            {"pullback_times", c.pullback_times},
            {"identity_pairs", 100},
            {"identity_tolerance", 1e-12},
            {"trajectory_t_end", 1.0},
            {"divergence_tolerance", 1e-12},
            {"moment_p", 2.0},
            {"moment_t_end", 4.0},
            {"moment_samples", 40},
            {"start_radius", 10.0},
            {"start_shell", 3},
            {"slack_se", 4.0},
            {"t0", 0.0},
            {"window", 64.0},
            {"c_values", {0.1, 1.0, 10.0}},
            {"radius_change_tolerance", 0.1},
            {"snapshot", false}};
}

bool compatible(const json& def, const json& val) {
    if (def.is_number()) {
        if (!val.is_number()) return false;
        if (def.is_number_integer() && val.is_number_float()) {
            const double v = val.get<double>();
            return std::isfinite(v) && v == std::nearbyint(v);
        }
        return true;
    }
    if (def.is_array()) {
        if (!val.is_array()) return false;
        if (def.empty()) return true;
        return std::all_of(val.begin(), val.end(), [&](const json& v) { return compatible(def.front(), v); });
    }
    return def.type() == val.type();
}

json normalized(const json& def, const json& val) {
    if (def.is_number_integer() && val.is_number_float()) return static_cast<std::int64_t>(val.get<double>());
    if (def.is_array() && !def.empty()) {
        json out = json::array();
        for (const auto& v : val) out.push_back(normalized(def.front(), v));
        return out;
    }
    return val;
}

void set_value(json& slot, const json& val, const std::string& key) {
    if (key == "seed") {
        if (!val.is_number_integer() || (val.is_number_integer() && !val.is_number_unsigned() && val.get<std::int64_t>() < 0))
            throw ConfigurationError("seed must be a non-negative 64-bit integer", key);
        slot = val.get<std::uint64_t>();
        return;
    }
    if (!compatible(slot, val)) throw ConfigurationError("invalid value for " + key + ": " + val.dump(), key);
    slot = normalized(slot, val);
}

void overlay(json& dst, const json& src, const std::string& prefix) {
    if (!src.is_object()) throw ConfigurationError("expected an object at " + (prefix.empty() ? "top level" : prefix),
                                                   prefix);
    for (const auto& [key, val] : src.items()) {
        const std::string dotted = prefix.empty() ? key : prefix + "." + key;
        if (!dst.contains(key)) throw ConfigurationError("unknown key " + dotted, dotted);
        if (dst[key].is_object())
            overlay(dst[key], val, dotted);
        else
            set_value(dst[key], val, dotted);
    }
}

std::uint64_t parse_seed(const std::string& text, const std::string& key) {
    std::size_t pos = 0;
    std::uint64_t v = 0;
    try {
        if (text.empty() || text.front() == '-') throw std::invalid_argument(text);
        v = std::stoull(text, &pos, 10);
    } catch (const std::exception&) {
        throw ConfigurationError("invalid seed '" + text + "'", key);
    }
    if (pos != text.size()) throw ConfigurationError("invalid seed '" + text + "'", key);
    return v;
}

template <class T>
T get(const json& block, const std::string& name, const char* key) {
    const std::string dotted = name + "." + key;
    if (!block.contains(key)) throw ConfigurationError("missing key " + dotted, dotted);
    try {
        return block.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigurationError("invalid value for " + dotted, dotted);
    }
}

// Re-raises a module ConfigurationError with the dotted key of its block.
template <class Fn>
auto in_block(const std::string& name, Fn&& fn) {
    try {
        return fn();
    } catch (const ConfigurationError& e) {
        const std::string key = e.key().empty() ? name : name + "." + e.key();
        throw ConfigurationError(e.what(), key);
    }
}

void require(bool ok, const std::string& key, const std::string& what) {
    if (!ok) throw ConfigurationError(key + ": " + what, key);
}

std::uint64_t seed_of(const json& config) { return config.at("seed").get<std::uint64_t>(); }

rd::RdConfig rd_config(const json& config) {
    const json& b = config.at("rd");
    rd::RdConfig c;
    c.k_modes = get<int>(b, "rd", "k_modes");
    c.c0 = get<double>(b, "rd", "c0");
    c.noise_decay = get<double>(b, "rd", "noise_decay");
    c.noise = get<bool>(b, "rd", "noise");
    c.dt = get<double>(b, "rd", "dt");
    c.n_particles = get<int>(b, "rd", "n_particles");
    c.n_omega = get<int>(b, "rd", "n_omega");
    c.pullback_times = get<std::vector<double>>(b, "rd", "pullback_times");
    in_block("rd", [&] {
        c.validate();
        return 0;
    });
    return c;
}

ns::NsConfig ns_config(const json& config) {
    const json& b = config.at("ns");
    ns::NsConfig c;
    c.k_modes = get<int>(b, "ns", "k_modes");
    c.nu_c = get<double>(b, "ns", "nu_c");
    c.d_noise = get<int>(b, "ns", "d_noise");
    c.eta = get<double>(b, "ns", "eta");
    c.f_kind = in_block("ns", [&] { return ns::force_kind_from_string(get<std::string>(b, "ns", "f_kind")); });
    c.c0 = get<double>(b, "ns", "c0");
    c.h_amp = get<double>(b, "ns", "h_amp");
    c.n_sat = get<double>(b, "ns", "n_sat");
    c.p_moment = get<double>(b, "ns", "p_moment");
    c.dt = get<double>(b, "ns", "dt");
    c.n_particles = get<int>(b, "ns", "n_particles");
    c.noise = get<bool>(b, "ns", "noise");
    c.nonlinear = get<bool>(b, "ns", "nonlinear");
    c.probe_radius = get<double>(b, "ns", "probe_radius");
    c.pullback_times = get<std::vector<double>>(b, "ns", "pullback_times");
    in_block("ns", [&] {
        c.validate();
        return 0;
    });
    return c;
}

// ---------------------------------------------------------------- helpers

std::ostringstream csv_stream() {
    std::ostringstream out;
    out << std::setprecision(17);
    return out;
}

Status status_of(bool ok) { return ok ? Status::pass : Status::fail; }

/// Least-squares slope of y against x.
double ls_slope(std::span<const double> x, std::span<const double> y) {
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    return sxx > 0.0 ? sxy / sxx : 0.0;
}

std::vector<double> sample_grid(double t_end, int samples, double dt, const std::string& key) {
    require(samples >= 2, key, "need at least 2 samples");
    require(t_end > 0.0, key, "horizon must be positive");
    const auto t = grid::linspace(0.0, t_end, samples);
    for (double s : t) require(grid::to_index(s, dt).has_value(), key, "sample times must lie on the dt grid");
    return t;
}

json pullback_json(const attractor::PullbackReport& r) {
    json j;
    j["pullback_times"] = r.pullback_times;
    j["diameters"] = r.diameters;
    j["hausdorff_to_final"] = r.hausdorff_to_final;
    j["cauchy_increments"] = r.cauchy_increments;
    return j;
}

std::string pullback_csv(const attractor::PullbackReport& r) {
    auto out = csv_stream();
    out << "t_n,diameter,hausdorff_to_final\n";
    for (std::size_t n = 0; n < r.pullback_times.size(); ++n)
        out << r.pullback_times[n] << ',' << r.diameters[n] << ',' << r.hausdorff_to_final[n] << '\n';
    return out.str();
}

std::string measure_csv(const EmpiricalMeasure& mu) {
    auto out = csv_stream();
    write_csv(out, mu);
    return out.str();
}

// ---------------------------------------------------------------- measures_selftest

EmpiricalMeasure normal_cloud(std::uint64_t seed, std::uint64_t stream, int dim, int n, double scale, double shift) {
    std::vector<double> x(static_cast<std::size_t>(dim) * static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < x.size(); ++i)
        x[i] = shift + scale * rng::normal(seed, stream, static_cast<std::int64_t>(i));
    return EmpiricalMeasure(dim, std::move(x));
}

Criterion backend_agreement(const json& b, std::uint64_t seed, Outcome& out) {
    const int max_n = get<int>(b, "measures", "max_size");
    const auto powers = get<std::vector<double>>(b, "measures", "powers");
    const double tol = get<double>(b, "measures", "agreement_tolerance");
    require(max_n >= 1 && static_cast<std::size_t>(max_n) <= kAssignmentMaxSize, "measures.max_size",
            "must lie in [1, " + std::to_string(kAssignmentMaxSize) + "]");
    for (double p : powers) require(p >= 1.0, "measures.powers", "exponents must be >= 1");
    auto csv = csv_stream();
    csv << "n,p,quantile_1d,assignment,abs_diff\n";
    double worst = 0.0;
    int pairs = 0;
    for (int n = 1; n <= max_n; ++n) {
        const auto mu = normal_cloud(seed, 2 * static_cast<std::uint64_t>(n), 1, n, 1.0, 0.0);
        const auto nu = normal_cloud(seed, 2 * static_cast<std::uint64_t>(n) + 1, 1, n, 2.0, 0.5);
        for (double p : powers) {
            const double q = wasserstein_detailed(mu, nu, p, WassersteinBackend::quantile_1d).value;
            const double a = wasserstein_detailed(mu, nu, p, WassersteinBackend::assignment).value;
            worst = std::max(worst, std::abs(q - a));
            ++pairs;
            csv << n << ',' << p << ',' << q << ',' << a << ',' << std::abs(q - a) << '\n';
        }
    }
    out.artifacts.push_back({"backends.csv", csv.str()});
    Criterion c{"wasserstein_backends", status_of(worst <= tol)};
    c.measured = {{"max_abs_difference", worst}, {"pairs", pairs}};
    c.reference = {{"difference", 0.0}};
    c.tolerance = {{"max_abs_difference", tol}};
    return c;
}

Criterion metric_axioms(const json& b, std::uint64_t seed) {
    const int triples = get<int>(b, "measures", "axiom_triples");
    const int n = get<int>(b, "measures", "axiom_size");
    const int dim = get<int>(b, "measures", "axiom_dim");
    const double tol = get<double>(b, "measures", "axiom_tolerance");
    require(triples >= 1, "measures.axiom_triples", "must be positive");
    require(n >= 1 && static_cast<std::size_t>(n) <= kAssignmentMaxSize, "measures.axiom_size", "out of range");
    require(dim >= 1, "measures.axiom_dim", "must be positive");
    double identity = 0.0, asymmetry = 0.0, triangle = -std::numeric_limits<double>::infinity();
    double min_distinct = std::numeric_limits<double>::infinity();
    const std::uint64_t s = rng::derive_seed(seed, rng::kProbe);
    for (int t = 0; t < triples; ++t) {
        const auto base = 3 * static_cast<std::uint64_t>(t);
        const auto mu = normal_cloud(s, base, dim, n, 1.0, 0.0);
        const auto nu = normal_cloud(s, base + 1, dim, n, 1.5, 0.3);
        const auto rho = normal_cloud(s, base + 2, dim, n, 0.7, -0.4);
        const auto w = [](const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
            return wasserstein_detailed(a, b, 2.0, WassersteinBackend::assignment).value;
        };
        const double mn = w(mu, nu), nm = w(nu, mu), nr = w(nu, rho), mr = w(mu, rho);
        identity = std::max(identity, w(mu, mu));
        asymmetry = std::max(asymmetry, std::abs(mn - nm));
        triangle = std::max(triangle, mr - mn - nr);
        min_distinct = std::min({min_distinct, mn, nr, mr});
    }
    const bool ok = identity <= tol && asymmetry <= tol && triangle <= tol && min_distinct > tol;
    Criterion c{"metric_axioms", status_of(ok)};
    c.measured = {{"triples", triples},
                  {"max_self_distance", identity},
                  {"max_asymmetry", asymmetry},
                  {"max_triangle_excess", triangle},
                  {"min_distinct_distance", min_distinct}};
    c.reference = {{"self_distance", 0.0}, {"asymmetry", 0.0}, {"triangle_excess", 0.0}};
    c.tolerance = {{"absolute", tol}};
    return c;
}

Criterion ou_stationarity(const json& b, std::uint64_t seed, Outcome& out) {
    const auto etas = get<std::vector<double>>(b, "noise", "ou_etas");
    const int samples = get<int>(b, "noise", "ou_samples");
    const double dt = get<double>(b, "noise", "ou_dt");
    const double horizon = get<double>(b, "noise", "ou_horizon");
    const double tol = get<double>(b, "noise", "ou_tolerance");
    require(samples >= 2, "noise.ou_samples", "need at least 2 samples");
    require(dt > 0.0, "noise.ou_dt", "must be positive");
    require(horizon >= dt && grid::to_index(horizon, dt).has_value(), "noise.ou_horizon",
            "must be a positive multiple of ou_dt");
    for (double eta : etas) require(eta > 0.0, "noise.ou_etas", "rates must be positive");
    auto csv = csv_stream();
    csv << "eta,variance,reference,relative_error\n";
    json measured = json::array(), reference = json::array();
    double worst = 0.0;
    for (std::size_t e = 0; e < etas.size(); ++e) {
        const double eta = etas[e];
        const std::uint64_t s = rng::hash3(seed, rng::kOuInit, e);
        double sum = 0.0, sum_sq = 0.0;
        for (int i = 0; i < samples; ++i) {
            const auto base = WienerPath::sample(0.0, horizon, dt, 1, rng::hash3(s, rng::kOmegaEnsemble,
                                                                                  static_cast<std::uint64_t>(i)));
            const auto z = OUPath::build(base, eta);
            const double v = z.value(z.i_max(), 0);
            sum += v;
            sum_sq += v * v;
        }
        const double n = static_cast<double>(samples);
        const double var = (sum_sq - sum * sum / n) / (n - 1.0);
        const double ref = 1.0 / (2.0 * eta);
        const double rel = std::abs(var - ref) / ref;
        worst = std::max(worst, rel);
        csv << eta << ',' << var << ',' << ref << ',' << rel << '\n';
        measured.push_back({{"eta", eta}, {"variance", var}, {"relative_error", rel}});
        reference.push_back({{"eta", eta}, {"variance", ref}});
    }
    out.artifacts.push_back({"ou_variance.csv", csv.str()});
    Criterion c{"ou_stationarity", status_of(worst <= tol)};
    c.measured = {{"samples", samples}, {"max_relative_error", worst}, {"per_eta", measured}};
    c.reference = {{"variance", "1/(2 eta)"}, {"per_eta", reference}};
    c.tolerance = {{"relative", tol}};
    return c;
}

Outcome measures_selftest(const json& config) {
    Outcome out;
    const std::uint64_t seed = seed_of(config);
    out.criteria.push_back(backend_agreement(config.at("measures"), seed, out));
    out.criteria.push_back(metric_axioms(config.at("measures"), seed));
    out.criteria.push_back(ou_stationarity(config.at("noise"), seed, out));
    return out;
}

// ---------------------------------------------------------------- sode

sode::SodeModel sode_model(const json& b) {
    const double M_cut = get<double>(b, "sode", "M_cut");
    const double eps = get<double>(b, "sode", "eps");
    require(M_cut >= 0.0, "sode.M_cut", "must be non-negative");
    require(eps > 0.0, "sode.eps", "must be positive");
    return sode::example_model(M_cut, eps);
}

double sode_dt(const json& b) {
    const double dt = get<double>(b, "sode", "dt");
    require(dt > 0.0, "sode.dt", "must be positive");
    return dt;
}

Criterion flow_property(const json& b, std::uint64_t seed, Outcome& out) {
    const auto model = sode_model(b);
    const double dt = sode_dt(b);
    const int triples = get<int>(b, "sode", "flow_triples");
    const double window = get<double>(b, "sode", "flow_window");
    require(triples >= 1, "sode.flow_triples", "must be positive");
    const auto half = grid::to_index(window, dt);
    require(window > 0.0 && half.has_value(), "sode.flow_window", "must be a positive multiple of dt");
    const auto path = WienerPath::sample(-window, window, dt, 1, rng::derive_seed(seed, rng::kOmegaEnsemble));
    const EmpiricalMeasure mu(1, {0.5, -0.1, 0.25, -0.9});
    const std::uint64_t s = rng::derive_seed(seed, rng::kProbe);
    auto csv = csv_stream();
    csv << "s,r,t,x0,residual\n";
    double worst = 0.0;
    const std::int64_t span = 2 * *half + 1;
    for (int k = 0; k < triples; ++k) {
        std::int64_t idx[3];
        for (int j = 0; j < 3; ++j)
            idx[j] = -*half + static_cast<std::int64_t>(rng::uniform(s, 3 * k + j, 0) * static_cast<double>(span));
        std::sort(idx, idx + 3);
        const double x0[] = {4.0 * (rng::uniform(s, 3 * k, 1) - 0.5)};
        const double st = path.time(idx[0]), rt = path.time(idx[1]), tt = path.time(idx[2]);
        const double r = sode::check_flow_property(model, x0, mu, path, st, rt, tt);
        worst = std::max(worst, r);
        csv << st << ',' << rt << ',' << tt << ',' << x0[0] << ',' << r << '\n';
    }
    out.artifacts.push_back({"flow_property.csv", csv.str()});
    Criterion c{"flow_property", status_of(worst == 0.0)};
    c.measured = {{"triples", triples}, {"max_residual", worst}};
    c.reference = {{"residual", 0.0}};
    c.tolerance = {{"max_residual", 0.0}};
    return c;
}

Criterion sode_attraction(const json& b, std::uint64_t seed, Outcome& out) {
    const auto model = sode_model(b);
    const double dt = sode_dt(b);
    const auto times = get<std::vector<double>>(b, "sode", "pullback_times");
    const int n_states = get<int>(b, "sode", "n_states");
    const double range = get<double>(b, "sode", "state_range");
    const int cloud_size = get<int>(b, "sode", "cloud_size");
    const int n_seeds = get<int>(b, "sode", "n_seeds");
    const double threshold = get<double>(b, "sode", "diameter_threshold");
    const int tail = get<int>(b, "sode", "tail_count");
    require(!times.empty() && std::is_sorted(times.begin(), times.end()) && times.front() > 0.0,
            "sode.pullback_times", "must be positive and increasing");
    for (double t : times) require(grid::to_index(t, dt).has_value(), "sode.pullback_times", "must lie on the dt grid");
    require(n_states >= 2, "sode.n_states", "need at least 2 states");
    require(cloud_size >= 1, "sode.cloud_size", "must be positive");
    require(n_seeds >= 1, "sode.n_seeds", "must be positive");
    require(tail >= 1 && static_cast<std::size_t>(tail) <= times.size(), "sode.tail_count", "out of range");

    const auto adapter = sode::make_adapter(model);
    std::vector<attractor::State> xs;
    for (int i = 0; i < n_states; ++i) xs.push_back({-range + 2.0 * range * i / (n_states - 1)});
    std::vector<double> cloud;
    for (int i = 0; i < cloud_size; ++i) cloud.push_back(0.8 * std::sin(1.0 + i));
    const std::vector<EmpiricalMeasure> mus = {EmpiricalMeasure::dirac(0.5), EmpiricalMeasure::dirac(-1.0),
                                               EmpiricalMeasure(1, cloud)};

    auto csv = csv_stream();
    csv << "seed_index,omega_seed,t_n,diameter,hausdorff_to_final\n";
    json per_seed = json::array();
    bool ok = true;
    double worst = 0.0;
    for (int k = 0; k < n_seeds; ++k) {
        const std::uint64_t omega_seed = rng::hash3(seed, rng::kOmegaEnsemble, static_cast<std::uint64_t>(k));
        const auto omega = WienerPath::sample(-times.back(), 0.0, dt, 1, omega_seed);
        const auto rep = attractor::run_pullback(adapter, omega, times, xs, mus);
        const double terminal = rep.diameters.back();
        const bool tail_ok = attractor::nonincreasing_tail(rep.diameters, static_cast<std::size_t>(tail));
        ok = ok && terminal < threshold && tail_ok;
        worst = std::max(worst, terminal);
        for (std::size_t n = 0; n < times.size(); ++n)
            csv << k << ',' << omega_seed << ',' << times[n] << ',' << rep.diameters[n] << ','
                << rep.hausdorff_to_final[n] << '\n';
        per_seed.push_back({{"omega_seed", omega_seed},
                            {"diameters", rep.diameters},
                            {"terminal_diameter", terminal},
                            {"nonincreasing_tail", tail_ok}});
    }
    out.artifacts.push_back({"pullback.csv", csv.str()});
    Criterion c{"pullback_attraction", status_of(ok)};
    c.measured = {{"states", n_states}, {"measures", mus.size()}, {"max_terminal_diameter", worst}, {"per_seed", per_seed}};
    c.reference = {{"terminal_time", times.back()}, {"diameter", 0.0}, {"nonincreasing_over_last", tail}};
    c.tolerance = {{"terminal_diameter", threshold}};
    return c;
}

Outcome sode_pullback(const json& config) {
    Outcome out;
    const std::uint64_t seed = seed_of(config);
    out.criteria.push_back(flow_property(config.at("sode"), seed, out));
    out.criteria.push_back(sode_attraction(config.at("sode"), seed, out));
    return out;
}

Outcome sode_lyapunov(const json& config) {
    const json& b = config.at("sode");
    Outcome out;
    const auto model = sode_model(b);
    const double dt = sode_dt(b);
    const double alpha = get<double>(b, "sode", "lyapunov_alpha");
    const double M = get<double>(b, "sode", "lyapunov_M");
    const int n = get<int>(b, "sode", "n_particles");
    const double half_width = get<double>(b, "sode", "initial_half_width");
    const double t_end = get<double>(b, "sode", "lyapunov_t_end");
    const int samples = get<int>(b, "sode", "lyapunov_samples");
    const double threshold = get<double>(b, "sode", "rate_threshold");
    require(n >= 1, "sode.n_particles", "must be positive");
    require(half_width > 0.0, "sode.initial_half_width", "must be positive");
    const auto t = sample_grid(t_end, samples, dt, "sode.lyapunov_t_end");

    const auto probes = sode::example_probe_grid();
    const double residual = sode::lyapunov_drift_residual(model, probes, alpha, M);
    Criterion cert{"drift_certificate", status_of(residual <= 0.0)};
    cert.measured = {{"max_residual", residual}, {"probes", probes.size()}};
    cert.reference = {{"alpha", alpha}, {"M", M}, {"residual", "<= 0"}};
    cert.tolerance = {{"max_residual", 0.0}};
    out.criteria.push_back(cert);

    // Midpoint quantiles of the uniform law on [-w, w].
    std::vector<double> x(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) x[static_cast<std::size_t>(i)] = -half_width + 2.0 * half_width * (i + 0.5) / n;
    const EmpiricalMeasure mu0(1, std::move(x));
    const auto path = WienerPath::sample(0.0, t_end, dt, 1, rng::derive_seed(seed_of(config), rng::kLawSeed));
    const auto flow = sode::simulate_measure_flow(model, mu0, path, t);
    std::vector<double> log_v;
    auto csv = csv_stream();
    csv << "t,mean_V\n";
    for (std::size_t k = 0; k < flow.snapshots.size(); ++k) {
        const auto& mu = flow.snapshots[k];
        const auto law = model.features(mu);
        double v = 0.0;
        for (std::size_t i = 0; i < mu.size(); ++i) v += model.V(mu.particle(i), law);
        v /= static_cast<double>(mu.size());
        log_v.push_back(std::log(v));
        csv << flow.times[k] << ',' << v << '\n';
    }
    out.artifacts.push_back({"lyapunov.csv", csv.str()});
    const double rate = ls_slope(flow.times, log_v);
    Criterion decay{"ensemble_decay", std::isfinite(rate) ? status_of(rate <= threshold) : Status::inconclusive};
    decay.measured = {{"rate", rate}, {"particles", n}, {"initial_mean_V", std::exp(log_v.front())},
                      {"final_mean_V", std::exp(log_v.back())}};
    decay.reference = {{"certified_rate", -alpha}, {"rate_threshold", threshold}};
    decay.tolerance = {{"rate_max", threshold}};
    out.criteria.push_back(decay);
    return out;
}

Outcome sode_conjugacy(const json& config) {
    const json& b = config.at("sode");
    Outcome out;
    const auto model = sode_model(b);
    const double eta = get<double>(b, "sode", "conj_eta");
    auto dts = get<std::vector<double>>(b, "sode", "conj_dts");
    const double t_end = get<double>(b, "sode", "conj_t_end");
    const double x0v = get<double>(b, "sode", "conj_x0");
    const auto mu_points = get<std::vector<double>>(b, "sode", "conj_measure");
    const double min_order = get<double>(b, "sode", "min_order");
    const double terminal_tol = get<double>(b, "sode", "terminal_tolerance");
    require(eta > 0.0, "sode.conj_eta", "must be positive");
    require(dts.size() >= 2, "sode.conj_dts", "need at least two step sizes");
    require(!mu_points.empty(), "sode.conj_measure", "must not be empty");
    std::sort(dts.begin(), dts.end(), std::greater<>());
    const double fine_dt = dts.back();
    require(fine_dt > 0.0, "sode.conj_dts", "must be positive");
    require(grid::to_index(t_end, fine_dt).has_value() && t_end > 0.0, "sode.conj_t_end",
            "must be a positive multiple of the finest dt");
    std::vector<int> factors;
    for (double dt : dts) {
        const auto f = grid::to_index(dt, fine_dt);
        require(f.has_value() && *f >= 1, "sode.conj_dts", "each dt must be an integer multiple of the finest");
        require(grid::to_index(t_end, dt).has_value(), "sode.conj_dts", "each dt must divide conj_t_end");
        factors.push_back(static_cast<int>(*f));
    }
    const conj::ConjugationSolver solver(model);
    const auto fine = WienerPath::sample(0.0, t_end, fine_dt, 1, seed_of(config));
    const double x0[] = {x0v};
    const EmpiricalMeasure mu(1, mu_points);
    std::vector<double> max_res, terminal, log_dt, log_res;
    auto csv = csv_stream();
    csv << "dt,max_residual,terminal_residual\n";
    for (std::size_t k = 0; k < dts.size(); ++k) {
        const auto rep = conj::conjugacy_residual(solver, fine.coarsen(factors[k]), eta, mu, x0, t_end);
        max_res.push_back(rep.max_residual);
        terminal.push_back(rep.terminal);
        log_dt.push_back(std::log(dts[k]));
        log_res.push_back(std::log(rep.max_residual));
        csv << dts[k] << ',' << rep.max_residual << ',' << rep.terminal << '\n';
    }
    out.artifacts.push_back({"conjugacy.csv", csv.str()});
    bool decreasing = true;
    for (std::size_t k = 1; k < max_res.size(); ++k) decreasing = decreasing && max_res[k] < max_res[k - 1];
    const double order = ls_slope(log_dt, log_res);
    const bool ok = decreasing && order >= min_order && terminal.back() <= terminal_tol;
    Criterion c{"conjugacy", std::isfinite(order) ? status_of(ok) : Status::inconclusive};
    c.measured = {{"dt", dts},
                  {"max_residual", max_res},
                  {"terminal_residual", terminal},
                  {"decreasing", decreasing},
                  {"observed_order", order}};
    c.reference = {{"residual", 0.0}, {"eta", eta}};
    c.tolerance = {{"min_order", min_order}, {"terminal_residual", terminal_tol}};
    out.criteria.push_back(c);
    return out;
}

// ---------------------------------------------------------------- rd

Outcome rd_contraction(const json& config) {
    const json& b = config.at("rd");
    Outcome out;
    const auto cfg = rd_config(config);
    const double t_end = get<double>(b, "rd", "contraction_t_end");
    const int samples = get<int>(b, "rd", "contraction_samples");
    const double tol = get<double>(b, "rd", "slope_tolerance");
    const auto t = sample_grid(t_end, samples, cfg.dt, "rd.contraction_t_end");
    const std::uint64_t seed = seed_of(config);
    const auto probes = rd::default_probes(cfg, rng::derive_seed(seed, rng::kProbe));
    const auto path = WienerPath::sample(0.0, t_end, cfg.dt, cfg.k_modes, rng::derive_seed(seed, rng::kLawSeed));
    const auto r = in_block("rd", [&] { return rd::contraction_test(cfg, probes.measures[2], probes.measures[1], path, t, tol); });
    auto csv = csv_stream();
    csv << "t,w2_sq\n";
    for (std::size_t k = 0; k < r.times.size(); ++k) csv << r.times[k] << ',' << r.w2_sq[k] << '\n';
    out.artifacts.push_back({"contraction.csv", csv.str()});
    Criterion c{"contraction", r.status};
    c.measured = {{"slope", r.slope}, {"intercept", r.intercept}, {"fitted_points", r.fitted_points},
                  {"margin", r.margin}};
    c.reference = {{"bound", r.bound}, {"C1", cfg.C1()}, {"C2", cfg.C2()}, {"lambda_star", cfg.lambda_star()}};
    c.tolerance = {{"slope_max", r.bound + tol}, {"slope_tolerance", tol}};
    out.criteria.push_back(c);
    return out;
}

Outcome rd_singleton(const json& config) {
    const json& b = config.at("rd");
    Outcome out;
    const auto cfg = rd_config(config);
    const double threshold = get<double>(b, "rd", "diameter_threshold");
    const std::uint64_t seed = seed_of(config);
    const auto& times = cfg.pullback_times;
    const auto omega = WienerPath::sample(-times.back(), 0.0, cfg.dt, cfg.k_modes,
                                          rng::derive_seed(seed, rng::kOmegaEnsemble));
    const auto probes = rd::default_probes(cfg, rng::derive_seed(seed, rng::kProbe));
    const auto est = rd::pullback_xi(cfg, omega, times, probes.states, probes.measures);
    const auto s = attractor::singleton_test(est.report, threshold);
    out.artifacts.push_back({"pullback.csv", pullback_csv(est.report)});
    out.artifacts.push_back({"pullback_report.json", sanitize(pullback_json(est.report)).dump(2) + "\n"});
    auto xi = csv_stream();
    xi << "k,xi_k\n";
    for (std::size_t k = 0; k < est.xi.size(); ++k) xi << k + 1 << ',' << est.xi[k] << '\n';
    out.artifacts.push_back({"xi.csv", xi.str()});
    Criterion c{"singleton", status_of(s.singleton)};
    c.measured = {{"terminal_diameter", est.diameter},
                  {"diameters", est.report.diameters},
                  {"eventually_decreasing", s.eventually_decreasing},
                  {"margin", s.margin},
                  {"probes", probes.states.size() * probes.measures.size()}};
    c.reference = {{"terminal_time", times.back()}, {"diameter", 0.0}, {"contraction_rate", cfg.contraction_rate()}};
    c.tolerance = {{"terminal_diameter", threshold}};
    out.criteria.push_back(c);
    return out;
}

Outcome rd_law_of_xi(const json& config) {
    const json& b = config.at("rd");
    Outcome out;
    const auto cfg = rd_config(config);
    const double tol = get<double>(b, "rd", "law_tolerance");
    const auto r = in_block("rd", [&] { return rd::law_of_xi_test(cfg, cfg.n_omega, seed_of(config), tol); });
    out.artifacts.push_back({"xi_cloud.csv", measure_csv(r.xi_cloud)});
    out.artifacts.push_back({"mu_inf.csv", measure_csv(r.mu_inf)});
    Criterion c{"law_of_xi", r.status};
    c.measured = {{"distance", r.distance},
                  {"control_distance", r.control_distance},
                  {"null_distance", r.null_distance},
                  {"consistent", r.consistent},
                  {"horizon", r.horizon},
                  {"n_omega", cfg.n_omega},
                  {"n_particles", cfg.n_particles}};
    c.reference = {{"distance", 0.0}};
    c.tolerance = {{"distance", tol}};
    out.criteria.push_back(c);
    return out;
}

// ---------------------------------------------------------------- ns

Criterion ns_identities(const json& b, const ns::NsSpace& s, std::uint64_t seed) {
    const int pairs = get<int>(b, "ns", "identity_pairs");
    const double tol = get<double>(b, "ns", "identity_tolerance");
    require(pairs >= 1, "ns.identity_pairs", "must be positive");
    const std::uint64_t rs = rng::derive_seed(seed, rng::kProbe);
    double flux = 0.0, anti = 0.0, self = 0.0;
    for (int t = 0; t < pairs; ++t) {
        const auto base = 3 * static_cast<std::uint64_t>(t);
        const auto yu = ns::random_state(s, rs, base, 1.0);
        const auto yv = ns::random_state(s, rs, base + 1, 1.0);
        const auto yw = ns::random_state(s, rs, base + 2, 1.0);
        const auto u = s.unpack(yu), v = s.unpack(yv), w = s.unpack(yw);
        const double nu = std::sqrt(ns::h_norm_sq(u));
        const double vv = std::sqrt(ns::v_norm_sq(v)), vw = std::sqrt(ns::v_norm_sq(w));
        const auto buv = s.nonlinearity(u, v), buw = s.nonlinearity(u, w);
        flux = std::max(flux, std::abs(ns::inner(buv, v)) / (nu * vv * vv));
        anti = std::max(anti, std::abs(ns::inner(buv, w) + ns::inner(buw, v)) / (nu * vv * vw));
        self = std::max(self, ns::flux_residual(s, yu));
    }
    const bool ok = flux <= tol && anti <= tol && self <= tol;
    Criterion c{"bilinear_identities", status_of(ok)};
    c.measured = {{"pairs", pairs},
                  {"max_relative_flux", flux},
                  {"max_relative_antisymmetry", anti},
                  {"max_relative_self_flux", self}};
    c.reference = {{"flux", 0.0}, {"antisymmetry", 0.0}};
    c.tolerance = {{"relative", tol}};
    return c;
}

Criterion ns_divergence(const json& b, const ns::NsSpace& s, const ns::NsConfig& cfg, std::uint64_t seed) {
    const double t_end = get<double>(b, "ns", "trajectory_t_end");
    const double tol = get<double>(b, "ns", "divergence_tolerance");
    const double radius = get<double>(b, "ns", "probe_radius");
    const auto t = sample_grid(t_end, std::max(1, static_cast<int>(std::lround(t_end / cfg.dt))), cfg.dt,
                               "ns.trajectory_t_end");
    const auto x0 = ns::random_state(s, rng::derive_seed(seed, rng::kInitialCloud), 0, radius, 3);
    const auto omega = WienerPath::sample(0.0, t_end, cfg.dt, cfg.d_noise, rng::derive_seed(seed, rng::kOmegaEnsemble));
    const EmpiricalMeasure mu(static_cast<int>(s.dim()), x0);
    const auto flow = ns::simulate_ns_measure_flow(s, cfg, mu, omega, std::vector<double>{0.0, t_end});
    const auto xs = ns::simulate_ns_state_flow(s, cfg, x0, flow.law, omega, t);
    double div = 0.0, flux = 0.0;
    for (const auto& x : xs) {
        div = std::max(div, ns::max_divergence(s.unpack(x)));
        flux = std::max(flux, ns::flux_residual(s, x));
    }
    Criterion c{"divergence_free", status_of(div <= tol)};
    c.measured = {{"samples", xs.size()}, {"max_divergence", div}, {"max_relative_self_flux", flux},
                  {"t_end", t_end}};
    c.reference = {{"divergence", 0.0}};
    c.tolerance = {{"max_divergence", tol}};
    return c;
}

Outcome ns_moments(const json& config) {
    const json& b = config.at("ns");
    Outcome out;
    const auto cfg = ns_config(config);
    const std::uint64_t seed = seed_of(config);
    const ns::NsSpace s(cfg.k_modes);
    out.criteria.push_back(ns_identities(b, s, seed));
    out.criteria.push_back(ns_divergence(b, s, cfg, seed));

    const double p = get<double>(b, "ns", "moment_p");
    const double t_end = get<double>(b, "ns", "moment_t_end");
    const int samples = get<int>(b, "ns", "moment_samples");
    const double radius = get<double>(b, "ns", "start_radius");
    const int shell = get<int>(b, "ns", "start_shell");
    const double slack = get<double>(b, "ns", "slack_se");
    require(radius > 0.0, "ns.start_radius", "must be positive");
    const auto t = sample_grid(t_end, samples, cfg.dt, "ns.moment_t_end");
    std::vector<double> x;
    const auto n = static_cast<std::size_t>(cfg.n_particles);
    x.reserve(n * s.dim());
    const std::uint64_t cs = rng::derive_seed(seed, rng::kInitialCloud);
    for (std::size_t i = 0; i < n; ++i) {
        const auto y = ns::random_state(s, cs, i + 1, radius, shell);
        x.insert(x.end(), y.begin(), y.end());
    }
    const EmpiricalMeasure mu0(static_cast<int>(s.dim()), std::move(x));
    const auto path = WienerPath::sample(0.0, t_end, cfg.dt, cfg.d_noise, rng::derive_seed(seed, rng::kLawSeed));
    const auto r = in_block("ns", [&] { return ns::moment_decay_test(cfg, mu0, path, t, p, slack); });
    auto csv = csv_stream();
    csv << "t,moment_p,standard_error,envelope\n";
    for (std::size_t k = 0; k < r.times.size(); ++k)
        csv << r.times[k] << ',' << r.moments[k] << ',' << r.standard_errors[k] << ',' << r.envelope[k] << '\n';
    out.artifacts.push_back({"moments.csv", csv.str()});
    Criterion c{"moment_decay", r.status};
    c.measured = {{"p", r.p},
                  {"rate", r.rate},
                  {"amplitude", r.amplitude},
                  {"offset", r.offset},
                  {"dominated", r.dominated},
                  {"transient_samples", r.transient_samples},
                  {"flux_residual", r.flux_residual},
                  {"initial_moment", r.moments.front()}};
    c.reference = {{"rate_bound", r.rate_bound},
                   {"lambda1", cfg.lambda1()},
                   {"lambda2", cfg.lambda2()},
                   {"lambda2_prime", cfg.lambda2_prime()}};
    c.tolerance = {{"rate_min_exclusive", 0.0}, {"slack_standard_errors", r.slack_se}};
    out.criteria.push_back(c);

    if (get<bool>(b, "ns", "snapshot")) {
        const auto flow = ns::simulate_ns_measure_flow(s, cfg, mu0, path, std::vector<double>{t_end});
        auto snap = csv_stream();
        ns::write_coefficients_csv(snap, s.unpack(flow.snapshots.back().particle(0)));
        out.artifacts.push_back({"snapshot.csv", snap.str()});
    }
    return out;
}

json absorbing_json(const ns::AbsorbingResult& r, double radius) {
    json scan = json::array();
    for (const auto& e : r.scan)
        scan.push_back({{"C", e.C}, {"exponent_average", e.exponent_average}, {"convergent", e.convergent},
                        {"r_sq", e.r_sq}});
    return {{"probe_radius", radius},
            {"pullback_times", r.pullback_times},
            {"max_z_sq", r.max_z_sq},
            {"cloud_radius", r.cloud_radius},
            {"z_sq", r.z_sq},
            {"scan", scan},
            {"lambda2_prime", r.lambda2_prime},
            {"selected_C", r.selected_C},
            {"r_sq", r.r_sq},
            {"flux_residual", r.flux_residual},
            {"status", attractor::to_string(r.status)}};
}

Outcome ns_absorbing(const json& config) {
    const json& b = config.at("ns");
    Outcome out;
    const auto cfg = ns_config(config);
    const std::uint64_t seed = seed_of(config);
    const double t0 = get<double>(b, "ns", "t0");
    const double window = get<double>(b, "ns", "window");
    const auto c_values = get<std::vector<double>>(b, "ns", "c_values");
    const double change_tol = get<double>(b, "ns", "radius_change_tolerance");
    require(!c_values.empty(), "ns.c_values", "must not be empty");
    const auto& times = cfg.pullback_times;
    require(window >= times.back() && grid::to_index(window, cfg.dt).has_value(), "ns.window",
            "must cover the longest pullback time on the dt grid");
    require(t0 >= 0.0 && grid::to_index(t0, cfg.dt).has_value(), "ns.t0", "must be a non-negative grid time");
    const ns::NsSpace s(cfg.k_modes);
    const auto omega = WienerPath::sample(-window, 0.0, cfg.dt, cfg.d_noise,
                                          rng::derive_seed(seed, rng::kOmegaEnsemble));
    const std::uint64_t ps = rng::derive_seed(seed, rng::kProbe);

    ns::AbsorbingResult base, doubled;
    for (double factor : {1.0, 2.0}) {
        const double radius = factor * cfg.probe_radius;
        const auto probes = ns::default_probes(s, cfg, ps, radius);
        auto r = in_block("ns", [&] {
            return ns::absorbing_radius_estimate(cfg, omega, t0, times, probes, c_values);
        });
        out.artifacts.push_back({factor == 1.0 ? "absorbing.json" : "absorbing_doubled.json",
                                 sanitize(absorbing_json(r, radius)).dump(2) + "\n"});
        (factor == 1.0 ? base : doubled) = std::move(r);
    }
    auto csv = csv_stream();
    csv << "probe_radius,t,probe,z_sq\n";
    for (const auto* r : {&base, &doubled})
        for (std::size_t n = 0; n < r->pullback_times.size(); ++n)
            for (std::size_t q = 0; q < r->z_sq[n].size(); ++q)
                csv << (r == &base ? 1.0 : 2.0) * cfg.probe_radius << ',' << r->pullback_times[n] << ',' << q << ','
                    << r->z_sq[n][q] << '\n';
    out.artifacts.push_back({"absorbing.csv", csv.str()});

    json scan = json::array();
    for (const auto& e : base.scan)
        scan.push_back({{"C", e.C}, {"exponent_average", e.exponent_average}, {"convergent", e.convergent},
                        {"r_sq", e.r_sq}});
    Criterion env{"absorbing_radius", base.status};
    env.measured = {{"max_z_sq", base.max_z_sq}, {"flux_residual", base.flux_residual}, {"scan", scan}};
    env.reference = {{"selected_C", base.selected_C}, {"r_sq", base.r_sq}, {"lambda2_prime", base.lambda2_prime}};
    env.tolerance = {{"max_z_sq_max", "r_sq"}};
    out.criteria.push_back(env);

    const double r1 = base.cloud_radius.back(), r2 = doubled.cloud_radius.back();
    const double change = std::abs(r2 - r1) / r1;
    const bool finite = std::isfinite(change);
    Criterion plateau{"absorption_plateau", finite ? status_of(change < change_tol) : Status::inconclusive};
    plateau.measured = {{"cloud_radius", r1},
                        {"cloud_radius_doubled", r2},
                        {"relative_change", change},
                        {"cloud_radius_per_time", base.cloud_radius},
                        {"cloud_radius_doubled_per_time", doubled.cloud_radius}};
    plateau.reference = {{"probe_radius", cfg.probe_radius}, {"doubled_probe_radius", 2.0 * cfg.probe_radius},
                         {"pullback_time", times.back()}};
    plateau.tolerance = {{"relative_change", change_tol}};
    out.criteria.push_back(plateau);
    return out;
}

const std::vector<std::pair<std::string, Outcome (*)(const json&)>>& registry() {
    static const std::vector<std::pair<std::string, Outcome (*)(const json&)>> r = {
        {"sode_pullback", sode_pullback}, {"sode_conjugacy", sode_conjugacy},
        {"sode_lyapunov", sode_lyapunov}, {"rd_contraction", rd_contraction},
        {"rd_singleton", rd_singleton},   {"rd_law_of_xi", rd_law_of_xi},
        {"ns_moments", ns_moments},       {"ns_absorbing", ns_absorbing},
        {"measures_selftest", measures_selftest},
    };
    return r;
}

}  // namespace

Status Outcome::status() const {
    bool inconclusive = criteria.empty();
    for (const auto& c : criteria) {
        if (c.status == Status::fail) return Status::fail;
        inconclusive = inconclusive || c.status == Status::inconclusive;
    }
    return inconclusive ? Status::inconclusive : Status::pass;
}

const Criterion& Outcome::criterion(const std::string& name) const {
    for (const auto& c : criteria)
        if (c.name == name) return c;
    throw DomainError("no criterion named " + name);
}

const std::vector<std::string>& experiment_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        for (const auto& [name, fn] : registry()) v.push_back(name);
        return v;
    }();
    return names;
}

json default_config() {
    return {{"experiment", ""},
            {"seed", kDefaultSeed},
            {"output_dir", "mvlab_out"},
            {"threads", 1},
            {"measures", measures_defaults()},
            {"noise", noise_defaults()},
            {"sode", sode_defaults()},
            {"rd", rd_defaults()},
            {"ns", ns_defaults()}};
}

json resolve_config(const std::string& experiment, const json& file, std::optional<std::uint64_t> seed_flag,
                    const std::vector<std::string>& assignments, const char* env_seed) {
    const auto& names = experiment_names();
    if (std::find(names.begin(), names.end(), experiment) == names.end())
        throw ConfigurationError("unknown experiment " + experiment, "experiment");
    json config = default_config();
    config["experiment"] = experiment;
    if (env_seed != nullptr && *env_seed != '\0') config["seed"] = parse_seed(env_seed, "MVLAB_SEED");
    if (!file.is_null()) {
        if (file.contains("experiment") && file.at("experiment") != experiment)
            throw ConfigurationError("config file is for experiment " + file.at("experiment").dump(), "experiment");
        overlay(config, file, "");
        config["experiment"] = experiment;
    }
    for (const auto& a : assignments) {
        const auto eq = a.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigurationError("expected key=value, got " + a, a);
        const std::string key = a.substr(0, eq), text = a.substr(eq + 1);
        json value = json::parse(text, nullptr, false);
        if (value.is_discarded()) value = text;
        if (key == "experiment") throw ConfigurationError("the experiment is chosen by the subcommand", key);
        std::vector<std::string> parts;
        for (std::size_t start = 0;;) {
            const auto dot = key.find('.', start);
            parts.push_back(key.substr(start, dot - start));
            if (dot == std::string::npos) break;
            start = dot + 1;
        }
        json patch = value;
        for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
        overlay(config, patch, "");
    }
    if (seed_flag) config["seed"] = *seed_flag;
    const auto threads = config.at("threads").get<std::int64_t>();
    if (threads < 1) throw ConfigurationError("threads must be at least 1", "threads");
    return config;
}

Outcome run_experiment(const std::string& experiment, const json& config) {
    for (const auto& [name, fn] : registry())
        if (name == experiment) return fn(config);
    throw ConfigurationError("unknown experiment " + experiment, "experiment");
}

json sanitize(const json& j) {
    if (j.is_number_float()) return std::isfinite(j.get<double>()) ? j : json(nullptr);
    if (j.is_array() || j.is_object()) {
        json out = j;
        for (auto& v : out) v = sanitize(v);
        return out;
    }
    return j;
}

json summary_json(const std::string& experiment, const json& config, const Outcome& outcome,
                  const std::string& timestamp) {
    json criteria = json::array();
    for (const auto& c : outcome.criteria)
        criteria.push_back({{"name", c.name},
                            {"status", attractor::to_string(c.status)},
                            {"measured", c.measured},
                            {"reference", c.reference},
                            {"tolerance", c.tolerance}});
    json artifacts = json::array();
    for (const auto& a : outcome.artifacts) artifacts.push_back(a.name);
    json s = {{"schema", kSummarySchema},
              {"version", kVersion},
              {"experiment", experiment},
              {"seed", config.at("seed")},
              {"status", attractor::to_string(outcome.status())},
              {"criteria", criteria},
              {"artifacts", artifacts},
              {"timestamp", timestamp}};
    return sanitize(s);
}

}  // namespace mvlab::cli
