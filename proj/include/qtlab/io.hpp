#pragma once

// Configuration files, binary snapshots, CSV diagnostics, SVG plots and seeded initial data.

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "qtlab/timestepper.hpp"

namespace qtlab {

// ---------------------------------------------------------------- configuration

struct InitSpec {
    std::string kind = "gaussian";  // gaussian | noise | zero
    double epsilon = 1e-3;          // > 0: scale so that the surrogate data norm equals epsilon^2
    double amplitude = 1.0;         // used as is when epsilon = 0
    double width = 1.0;             // gaussian bump width
    int bumps = 3;
    double band = 4.0;              // noise: keep integer wavenumbers |n| <= band
    bool velocity = true;
    bool tensor = true;
    bool operator==(const InitSpec&) const = default;
};

struct ExperimentSpec {
    int samples = 50;                  // random modes / pairs for the checks
    std::string times = "0.5,1,2";     // evaluation times of semigroup check
    double t_end = 0;                  // decay runs: 0 means the wraparound time
    int time_samples = 48;             // log-spaced samples of decay runs
    double fit_lo = 0, fit_hi = 0;     // 0: defaults of each experiment
    int seeds = 5;                     // ensemble size of the norms check
    bool operator==(const ExperimentSpec&) const = default;
};

struct RunConfig {
    GridSpec grid{2, 64, 2 * pi};
    ModelParams model;
    SchemeConfig scheme;
    double T = 1.0;
    int cadence = 10;
    double sector_margin = 0.25;
    double sector_lambda0 = 0;  // 0: calibrate
    double A0 = 0.1;
    double gamma_inf = 0;       // 0: (A0/6)^2/2
    QuadratureSpec quad;
    double norms_sigma = 0.5;
    double norms_q2 = 0;        // 0: default for the dimension
    InitSpec init;
    ExperimentSpec experiment;
    std::string output_dir = "qtlab-out";
    std::uint64_t seed = 1;
    bool auto_dt = false;       // scheme.dt = 0

    void validate() const
    {
        grid.validate();
        if (model.dim != grid.dim) throw Error("config: model dim must equal grid.dim");
        model.validate();
        scheme.validate();
        quad.validate();
    }
    bool operator==(const RunConfig& o) const;
};

namespace detail {

inline std::string trim(std::string_view s)
{
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
}

inline std::string fmt17(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double parse_double(const std::string& s)
{
    double v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) throw Error("expected a finite number, got '" + s + "'");
    return v;
}

inline long long parse_int(const std::string& s)
{
    long long v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw Error("expected an integer, got '" + s + "'");
    return v;
}

inline bool parse_bool(const std::string& s)
{
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw Error("expected true/false, got '" + s + "'");
}

inline void require(bool ok, const std::string& what)
{
    if (!ok) throw Error(what);
}

} // namespace detail

struct ConfigKey {
    std::string key;
    std::string help;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

inline const std::vector<ConfigKey>& config_keys()
{
    using namespace detail;
    auto num = [](double RunConfig::*m) { return [m](const RunConfig& c) { return fmt17(c.*m); }; };
    static const std::vector<ConfigKey> keys = {
        {"grid.dim", "spatial dimension N (2 or 3)",
         [](RunConfig& c, const std::string& v) {
             auto n = parse_int(v);
             require(n == 2 || n == 3, "grid.dim must be 2 or 3");
             c.grid.dim = c.model.dim = int(n);
         },
         [](const RunConfig& c) { return std::to_string(c.grid.dim); }},
        {"grid.M", "points per dimension (power of two, >= 8)",
         [](RunConfig& c, const std::string& v) {
             auto n = parse_int(v);
             require(n >= 8 && n <= 4096 && (n & (n - 1)) == 0, "grid.M must be a power of two in [8, 4096]");
             c.grid.points = int(n);
         },
         [](const RunConfig& c) { return std::to_string(c.grid.points); }},
        {"grid.L", "box side length (periodic box [0, L)^N)",
         [](RunConfig& c, const std::string& v) {
             double x = parse_double(v);
             require(x > 0, "grid.L must be > 0");
             c.grid.length = x;
         },
         [](const RunConfig& c) { return fmt17(c.grid.length); }},
        {"model.a", "bulk coefficient a (> 0)",
         [](RunConfig& c, const std::string& v) {
             double x = parse_double(v);
             require(x > 0, "model.a must be > 0 (a, c > 0)");
             c.model.a = x;
         },
         [](const RunConfig& c) { return fmt17(c.model.a); }},
        {"model.b", "bulk coefficient b of the cubic term",
         [](RunConfig& c, const std::string& v) { c.model.b = parse_double(v); },
         [](const RunConfig& c) { return fmt17(c.model.b); }},
        {"model.c", "bulk coefficient c (> 0)",
         [](RunConfig& c, const std::string& v) {
             double x = parse_double(v);
             require(x > 0, "model.c must be > 0 (a, c > 0)");
             c.model.c = x;
         },
         [](const RunConfig& c) { return fmt17(c.model.c); }},
        {"model.xi", "tumbling parameter xi_a; beta = 2 xi_a / N",
         [](RunConfig& c, const std::string& v) { c.model.xi = parse_double(v); },
         [](const RunConfig& c) { return fmt17(c.model.xi); }},
        {"model.literal_bulk_sign", "flip the sign of b in the nonlinear bulk term (off: consistent with F)",
         [](RunConfig& c, const std::string& v) { c.model.literal_bulk_sign = parse_bool(v); },
         [](const RunConfig& c) { return std::string(c.model.literal_bulk_sign ? "true" : "false"); }},
        {"scheme.dt", "time step (0: 0.25 dx / max|u| clipped to [1e-4, 0.05])",
         [](RunConfig& c, const std::string& v) {
             double x = parse_double(v);
             require(x >= 0, "scheme.dt must be >= 0");
             c.auto_dt = x == 0;
             c.scheme.dt = x == 0 ? 0.01 : x;
         },
         [](const RunConfig& c) { return c.auto_dt ? std::string("0") : fmt17(c.scheme.dt); }},
        {"scheme.kind", "etd1 or etdrk2",
         [](RunConfig& c, const std::string& v) {
             require(v == "etd1" || v == "etdrk2", "scheme.kind must be etd1 or etdrk2");
             c.scheme.kind = v == "etd1" ? SchemeKind::ETD1 : SchemeKind::ETDRK2;
         },
         [](const RunConfig& c) { return std::string(c.scheme.kind == SchemeKind::ETD1 ? "etd1" : "etdrk2"); }},
        {"scheme.dealias", "2/3-rule dealiasing of nonlinear products",
         [](RunConfig& c, const std::string& v) { c.scheme.dealias = parse_bool(v); },
         [](const RunConfig& c) { return std::string(c.scheme.dealias ? "true" : "false"); }},
        {"scheme.reproject", "re-project u (Leray) and Q (symmetric traceless) after each step",
         [](RunConfig& c, const std::string& v) { c.scheme.reproject = parse_bool(v); },
         [](const RunConfig& c) { return std::string(c.scheme.reproject ? "true" : "false"); }},
        {"scheme.nonlinear", "include the nonlinear terms f, g",
         [](RunConfig& c, const std::string& v) { c.scheme.nonlinear = parse_bool(v); },
         [](const RunConfig& c) { return std::string(c.scheme.nonlinear ? "true" : "false"); }},
        {"scheme.freeze_velocity", "hold u = 0 (gradient flow of Q; needs model.xi = 0)",
         [](RunConfig& c, const std::string& v) { c.scheme.freeze_velocity = parse_bool(v); },
         [](const RunConfig& c) { return std::string(c.scheme.freeze_velocity ? "true" : "false"); }},
        {"scheme.lambda1", "shift lambda1 >= 0 of the split experiments",
         [](RunConfig& c, const std::string& v) {
             double x = parse_double(v);
             require(x >= 0, "scheme.lambda1 must be >= 0");
             c.scheme.lambda1 = x;
         },
         [](const RunConfig& c) { return fmt17(c.scheme.lambda1); }},
        {"scheme.T", "final time of simulate / split / norms runs",
         [](RunConfig& c, const std::string& v) {
             double x = parse_double(v);
             require(x > 0, "scheme.T must be > 0");
             c.T = x;
         },
         num(&RunConfig::T)},
        {"scheme.cadence", "steps between diagnostics rows",
         [](RunConfig& c, const std::string& v) {
             auto n = parse_int(v);
             require(n >= 1, "scheme.cadence must be >= 1");
             c.cadence = int(n);
         },
         [](const RunConfig& c) { return std::to_string(c.cadence); }},
        {"sector.margin", "sector angle sigma = sigma0 + margin (pi/2 - sigma0), margin in (0, 1)",
         [](RunConfig& c, const std::string& v) {
             double x = parse_double(v);
             require(x > 0 && x < 1, "sector.margin must lie in (0, 1)");
             c.sector_margin = x;
         },
         num(&RunConfig::sector_margin)},
        {"sector.lambda0", "sector radius lambda0 (0: calibrate from the lower bound of P2)",
         [](RunConfig& c, const std::string& v) {
             double x = parse_double(v);
             require(x == 0 || x >= 1, "sector.lambda0 must be 0 or >= 1");
             c.sector_lambda0 = x;
         },
         num(&RunConfig::sector_lambda0)},
        {"contour.A0", "low/high frequency threshold A0 in (0, 1)",
         [](RunConfig& c, const std::string& v) {
             double x = parse_double(v);
             require(x > 0 && x < 1, "contour.A0 must lie in (0, 1)");
             c.A0 = x;
         },
         num(&RunConfig::A0)},
        {"contour.gamma_inf", "high-frequency path abscissa (0: (A0/6)^2/2)",
         [](RunConfig& c, const std::string& v) {
             double x = parse_double(v);
             require(x >= 0, "contour.gamma_inf must be >= 0");
             c.gamma_inf = x;
         },
         num(&RunConfig::gamma_inf)},
        {"contour.nodes", "Gauss-Legendre nodes per panel (>= 16)",
         [](RunConfig& c, const std::string& v) {
             auto n = parse_int(v);
             require(n >= 16 && n <= 128, "contour.nodes must lie in [16, 128]");
             c.quad.nodes_per_segment = int(n);
         },
         [](const RunConfig& c) { return std::to_string(c.quad.nodes_per_segment); }},
        {"contour.threshold", "relative size of e^{lambda t} where rays are cut (<= 1e-14)",
         [](RunConfig& c, const std::string& v) {
             double x = parse_double(v);
             require(x > 0 && x <= 1e-14, "contour.threshold must lie in (0, 1e-14]");
             c.quad.truncation_threshold = x;
         },
         [](const RunConfig& c) { return fmt17(c.quad.truncation_threshold); }},
        {"contour.tolerance", "node-doubling stopping tolerance",
         [](RunConfig& c, const std::string& v) {
             double x = parse_double(v);
             require(x > 0 && x < 1e-2, "contour.tolerance must lie in (0, 1e-2)");
             c.quad.tolerance = x;
         },
         [](const RunConfig& c) { return fmt17(c.quad.tolerance); }},
        {"norms.sigma", "exponent parameter sigma in (0, 1/2]; p = q1 = 2 + sigma",
         [](RunConfig& c, const std::string& v) {
             double x = parse_double(v);
             require(x > 0 && x <= 0.5, "norms.sigma must lie in (0, 0.5]");
             c.norms_sigma = x;
         },
         num(&RunConfig::norms_sigma)},
        {"norms.q2", "second space exponent q2 (0: N(2+sigma)/(N-2-sigma) for N = 3, 4 for N = 2)",
         [](RunConfig& c, const std::string& v) {
             double x = parse_double(v);
             require(x == 0 || x > 3, "norms.q2 must be 0 or > 3");
             c.norms_q2 = x;
         },
         num(&RunConfig::norms_q2)},
        {"init.kind", "initial data: gaussian, noise or zero",
         [](RunConfig& c, const std::string& v) {
             require(v == "gaussian" || v == "noise" || v == "zero", "init.kind must be gaussian, noise or zero");
             c.init.kind = v;
         },
         [](const RunConfig& c) { return c.init.kind; }},
        {"init.epsilon", "target epsilon: data scaled so the surrogate data norm is epsilon^2 (0: use init.amplitude)",
         [](RunConfig& c, const std::string& v) {
             double x = parse_double(v);
             require(x >= 0, "init.epsilon must be >= 0");
             c.init.epsilon = x;
         },
         [](const RunConfig& c) { return fmt17(c.init.epsilon); }},
        {"init.amplitude", "raw amplitude when init.epsilon = 0",
         [](RunConfig& c, const std::string& v) { c.init.amplitude = parse_double(v); },
         [](const RunConfig& c) { return fmt17(c.init.amplitude); }},
        {"init.width", "gaussian bump width",
         [](RunConfig& c, const std::string& v) {
             double x = parse_double(v);
             require(x > 0, "init.width must be > 0");
             c.init.width = x;
         },
         [](const RunConfig& c) { return fmt17(c.init.width); }},
        {"init.bumps", "number of gaussian bumps",
         [](RunConfig& c, const std::string& v) {
             auto n = parse_int(v);
             require(n >= 1 && n <= 1000, "init.bumps must lie in [1, 1000]");
             c.init.bumps = int(n);
         },
         [](const RunConfig& c) { return std::to_string(c.init.bumps); }},
        {"init.band", "noise: largest integer wavenumber kept",
         [](RunConfig& c, const std::string& v) {
             double x = parse_double(v);
             require(x >= 1, "init.band must be >= 1");
             c.init.band = x;
         },
         [](const RunConfig& c) { return fmt17(c.init.band); }},
        {"init.velocity", "nonzero initial velocity",
         [](RunConfig& c, const std::string& v) { c.init.velocity = parse_bool(v); },
         [](const RunConfig& c) { return std::string(c.init.velocity ? "true" : "false"); }},
        {"init.tensor", "nonzero initial Q",
         [](RunConfig& c, const std::string& v) { c.init.tensor = parse_bool(v); },
         [](const RunConfig& c) { return std::string(c.init.tensor ? "true" : "false"); }},
        {"experiment.samples", "random modes or field pairs per check",
         [](RunConfig& c, const std::string& v) {
             auto n = parse_int(v);
             require(n >= 1 && n <= 100000, "experiment.samples must lie in [1, 100000]");
             c.experiment.samples = int(n);
         },
         [](const RunConfig& c) { return std::to_string(c.experiment.samples); }},
        {"experiment.times", "comma-separated evaluation times of semigroup check",
         [](RunConfig& c, const std::string& v) {
             std::stringstream ss(v);
             std::string item;
             int n = 0;
             while (std::getline(ss, item, ',')) {
                 require(parse_double(trim(item)) > 0, "experiment.times entries must be > 0");
                 ++n;
             }
             require(n > 0, "experiment.times must list at least one time");
             c.experiment.times = v;
         },
         [](const RunConfig& c) { return c.experiment.times; }},
        {"experiment.t_end", "end time of decay runs (0: wraparound time L^2/16)",
         [](RunConfig& c, const std::string& v) {
             double x = parse_double(v);
             require(x >= 0, "experiment.t_end must be >= 0");
             c.experiment.t_end = x;
         },
         [](const RunConfig& c) { return fmt17(c.experiment.t_end); }},
        {"experiment.time_samples", "log-spaced samples of decay runs",
         [](RunConfig& c, const std::string& v) {
             auto n = parse_int(v);
             require(n >= 8 && n <= 10000, "experiment.time_samples must lie in [8, 10000]");
             c.experiment.time_samples = int(n);
         },
         [](const RunConfig& c) { return std::to_string(c.experiment.time_samples); }},
        {"experiment.fit_lo", "lower end of the decay fit window (0: experiment default)",
         [](RunConfig& c, const std::string& v) {
             double x = parse_double(v);
             require(x >= 0, "experiment.fit_lo must be >= 0");
             c.experiment.fit_lo = x;
         },
         [](const RunConfig& c) { return fmt17(c.experiment.fit_lo); }},
        {"experiment.fit_hi", "upper end of the decay fit window (0: experiment default)",
         [](RunConfig& c, const std::string& v) {
             double x = parse_double(v);
             require(x >= 0, "experiment.fit_hi must be >= 0");
             c.experiment.fit_hi = x;
         },
         [](const RunConfig& c) { return fmt17(c.experiment.fit_hi); }},
        {"experiment.seeds", "ensemble size of the norms check",
         [](RunConfig& c, const std::string& v) {
             auto n = parse_int(v);
             require(n >= 1 && n <= 100, "experiment.seeds must lie in [1, 100]");
             c.experiment.seeds = int(n);
         },
         [](const RunConfig& c) { return std::to_string(c.experiment.seeds); }},
        {"output.dir", "output directory",
         [](RunConfig& c, const std::string& v) {
             require(!v.empty(), "output.dir must not be empty");
             c.output_dir = v;
         },
         [](const RunConfig& c) { return c.output_dir; }},
        {"seed", "random seed",
         [](RunConfig& c, const std::string& v) {
             auto n = parse_int(v);
             require(n >= 0, "seed must be >= 0");
             c.seed = static_cast<std::uint64_t>(n);
         },
         [](const RunConfig& c) { return std::to_string(c.seed); }},
    };
    return keys;
}

inline bool RunConfig::operator==(const RunConfig& o) const
{
    for (auto& k : config_keys())
        if (k.get(*this) != k.get(o)) return false;
    return true;
}

inline void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value)
{
    for (auto& k : config_keys())
        if (k.key == key) {
            k.set(cfg, value);
            return;
        }
    throw Error("unknown key '" + key + "'");
}

inline RunConfig parse_config(std::istream& in, const std::string& origin = "config")
{
    RunConfig cfg;
    std::string line;
    int lineno = 0;
    std::vector<std::string> seen;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        std::string body = detail::trim(hash == std::string::npos ? line : line.substr(0, hash));
        if (body.empty()) continue;
        auto where = [&] { return origin + ":" + std::to_string(lineno) + ": "; };
        auto eq = body.find('=');
        if (eq == std::string::npos) throw Error(where() + "malformed line (expected key = value)");
        std::string key = detail::trim(body.substr(0, eq)), value = detail::trim(body.substr(eq + 1));
        if (key.empty() || value.empty()) throw Error(where() + "malformed line (empty key or value)");
        if (std::find(seen.begin(), seen.end(), key) != seen.end()) throw Error(where() + "duplicate key '" + key + "'");
        seen.push_back(key);
        try {
            apply_setting(cfg, key, value);
        } catch (const Error& e) {
            throw Error(where() + e.what());
        }
    }
    try {
        cfg.validate();
    } catch (const Error& e) {
        throw Error(origin + ": " + e.what());
    }
    return cfg;
}

inline RunConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw Error("cannot open config file " + path);
    return parse_config(in, path);
}

inline std::string config_text(const RunConfig& cfg)
{
    std::string out = "# effective configuration\n";
    for (auto& k : config_keys()) out += k.key + " = " + k.get(cfg) + "\n";
    return out;
}

inline void write_config(const RunConfig& cfg, const std::string& path)
{
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << config_text(cfg);
}

inline std::string help_text()
{
    RunConfig defaults;
    std::string out;
    for (auto& k : config_keys()) out += "  " + k.key + " = " + k.get(defaults) + "\n      " + k.help + "\n";
    return out;
}

// ---------------------------------------------------------------- snapshots

struct Snapshot {
    SimState state;
    ModelParams params;
};

namespace detail {

template <class T>
void put_le(std::ostream& out, T v)
{
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    out.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(std::istream& in)
{
    unsigned char b[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(b), sizeof(T))) throw Error("snapshot: truncated file");
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}

} // namespace detail

inline constexpr std::uint32_t snapshot_version = 1;

inline void save_snapshot(const SimState& s, const ModelParams& p, const std::string& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("snapshot: cannot write " + path);
    const GridSpec& g = s.u.grid;
    out.write("QTNS", 4);
    detail::put_le<std::uint32_t>(out, snapshot_version);
    detail::put_le<std::uint32_t>(out, std::uint32_t(g.dim));
    for (int d = 0; d < g.dim; ++d) detail::put_le<std::uint32_t>(out, std::uint32_t(g.points));
    detail::put_le<double>(out, g.length);
    detail::put_le<double>(out, s.t);
    for (double v : {p.a, p.b, p.c, p.xi, p.beta(), p.literal_bulk_sign ? 1.0 : 0.0}) detail::put_le<double>(out, v);
    for (double v : s.u.data) detail::put_le<double>(out, v);
    for (double v : s.Q.data) detail::put_le<double>(out, v);
    if (!out) throw Error("snapshot: write failed for " + path);
}

// step_index is not part of the format and comes back as 0.
inline Snapshot load_snapshot(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("snapshot: cannot open " + path);
    char magic[4];
    if (!in.read(magic, 4)) throw Error("snapshot: truncated file");
    if (std::string_view(magic, 4) != "QTNS") throw Error("snapshot: bad magic (not a QTNS file)");
    auto version = detail::get_le<std::uint32_t>(in);
    if (version != snapshot_version) throw Error("snapshot: unsupported version " + std::to_string(version));
    auto N = detail::get_le<std::uint32_t>(in);
    if (N < 2 || N > 3) throw Error("snapshot: bad dimension");
    std::uint32_t M = 0;
    for (std::uint32_t d = 0; d < N; ++d) {
        auto m = detail::get_le<std::uint32_t>(in);
        if (d > 0 && m != M) throw Error("snapshot: anisotropic grids are not supported");
        M = m;
    }
    GridSpec g{int(N), int(M), 0};
    g.length = detail::get_le<double>(in);
    g.validate();
    Snapshot snap;
    snap.state.t = detail::get_le<double>(in);
    snap.params.dim = int(N);
    snap.params.a = detail::get_le<double>(in);
    snap.params.b = detail::get_le<double>(in);
    snap.params.c = detail::get_le<double>(in);
    snap.params.xi = detail::get_le<double>(in);
    (void)detail::get_le<double>(in);  // beta, derived
    snap.params.literal_bulk_sign = detail::get_le<double>(in) != 0;
    snap.state.u = VelocityField(g);
    snap.state.Q = QTensorField(g);
    for (double& v : snap.state.u.data) v = detail::get_le<double>(in);
    for (double& v : snap.state.Q.data) v = detail::get_le<double>(in);
    return snap;
}

// ---------------------------------------------------------------- CSV

inline void write_diagnostics(const Series& s, const std::string& path)
{
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    for (std::size_t c = 0; c < s.columns.size(); ++c) out << (c ? "," : "") << s.columns[c];
    out << "\n";
    for (auto& row : s.rows) {
        for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << detail::fmt17(row[c]);
        out << "\n";
    }
    if (!out) throw Error("write failed for " + path);
}

inline Series read_diagnostics(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw Error("empty CSV file " + path);
    Series s;
    {
        std::stringstream ss(line);
        std::string item;
        while (std::getline(ss, item, ',')) s.columns.push_back(item);
    }
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (item == "nan") row.push_back(std::numeric_limits<double>::quiet_NaN());
            else if (item == "inf") row.push_back(std::numeric_limits<double>::infinity());
            else if (item == "-inf") row.push_back(-std::numeric_limits<double>::infinity());
            else row.push_back(detail::parse_double(item));
        }
        s.add(std::move(row));
    }
    return s;
}

// ---------------------------------------------------------------- SVG plots

enum class PlotKind { LogLog, Linear };

struct PlotLine {
    std::string label;
    std::vector<std::pair<double, double>> points;
};

struct GuideSlope {
    double slope;  // in log-log coordinates
    std::string label;
};

namespace detail {

inline std::string xml_escape(const std::string& s)
{
    std::string o;
    for (char ch : s) {
        switch (ch) {
        case '<': o += "&lt;"; break;
        case '>': o += "&gt;"; break;
        case '&': o += "&amp;"; break;
        case '"': o += "&quot;"; break;
        default: o += ch;
        }
    }
    return o;
}

} // namespace detail

inline void emit_plot(const std::vector<PlotLine>& lines, PlotKind kind, const std::string& path,
                      const std::vector<GuideSlope>& guides = {}, const std::string& title = "")
{
    bool any = false;
    for (auto& l : lines) any = any || !l.points.empty();
    if (!any) throw Error("emit_plot: empty series");
    const bool log = kind == PlotKind::LogLog;
    auto tx = [&](double v) { return log ? std::log10(v) : v; };
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (auto& l : lines)
        for (auto [x, y] : l.points) {
            if (log && !(x > 0 && y > 0)) throw Error("emit_plot: log-log plot needs positive data");
            x0 = std::min(x0, tx(x));
            x1 = std::max(x1, tx(x));
            y0 = std::min(y0, tx(y));
            y1 = std::max(y1, tx(y));
        }
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    const double W = 640, H = 480, ml = 70, mr = 150, mt = 40, mb = 50;
    auto px = [&](double x) { return ml + (x - x0) / (x1 - x0) * (W - ml - mr); };
    auto py = [&](double y) { return H - mb - (y - y0) / (y1 - y0) * (H - mt - mb); };
    std::ostringstream svg;
    svg.precision(6);
    svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
        << " " << H << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">" << detail::xml_escape(title)
        << "</text>\n"
        << "<g stroke=\"black\" fill=\"none\"><rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << W - ml - mr
        << "\" height=\"" << H - mt - mb << "\"/></g>\n";
    for (int i = 0; i <= 4; ++i) {
        double xv = x0 + (x1 - x0) * i / 4, yv = y0 + (y1 - y0) * i / 4;
        auto lab = [&](double v) { return log ? "1e" + detail::fmt17(std::round(v * 100) / 100) : detail::fmt17(v); };
        svg << "<text x=\"" << px(xv) << "\" y=\"" << H - mb + 18 << "\" text-anchor=\"middle\" font-size=\"10\">"
            << lab(xv) << "</text>\n"
            << "<text x=\"" << ml - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\" font-size=\"10\">"
            << lab(yv) << "</text>\n";
    }
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    int ci = 0;
    for (auto& l : lines) {
        if (l.points.empty()) continue;
        svg << "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" << colors[ci % 6] << "\" points=\"";
        for (auto [x, y] : l.points) svg << px(tx(x)) << "," << py(tx(y)) << " ";
        svg << "\"/>\n<text x=\"" << W - mr + 8 << "\" y=\"" << mt + 16 * (ci + 1) << "\" font-size=\"11\" fill=\""
            << colors[ci % 6] << "\">" << detail::xml_escape(l.label) << "</text>\n";
        ++ci;
    }
    if (log) {
        // guides anchored at the first point of the first line
        auto [ax, ay] = lines.front().points.front();
        int gi = 0;
        for (auto& g : guides) {
            double lx0 = tx(ax), ly0 = tx(ay);
            double yend = ly0 + g.slope * (x1 - lx0);
            svg << "<line stroke=\"gray\" stroke-dasharray=\"6,4\" x1=\"" << px(lx0) << "\" y1=\"" << py(ly0)
                << "\" x2=\"" << px(x1) << "\" y2=\"" << py(std::max(yend, y0)) << "\"/>\n"
                << "<text x=\"" << W - mr + 8 << "\" y=\"" << mt + 16 * (ci + gi + 1) << "\" font-size=\"11\" fill=\"gray\">"
                << detail::xml_escape(g.label) << "</text>\n";
            ++gi;
        }
    }
    svg << "</svg>\n";
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << svg.str();
}

// ---------------------------------------------------------------- initial data

// Sobolev surrogate of the initial-data norm: sum over q in {q1, q2} of |u|_{W^2_q} + |Q|_{W^3_q},
// plus |(u, Q)|_{W^{0,1}_{q1/2}}.
inline double initial_data_norm(const FieldPair& x, const NormExponents& e)
{
    auto qs = e.qs();
    auto tu = jet_norms(x.u, 2, qs);
    auto tq = jet_norms(x.Q, 3, qs);
    double s = 0;
    for (int k = 0; k < 2; ++k) {
        for (int j = 0; j <= 2; ++j) s += tu[j][k];
        for (int j = 0; j <= 3; ++j) s += tq[j][k];
    }
    s += tu[0][2] + tq[0][2] + tq[1][2];
    return s;
}

struct InitialData {
    SimState state;
    double data_norm = 0;  // surrogate, after scaling
    double scale = 1;
};

inline void zero_mean(SpectralField& f)
{
    for (int c = 0; c < f.components; ++c) f.at(c, 0) = 0;
}

inline InitialData generate_initial_data(const InitSpec& spec, const GridSpec& g, const NormExponents& e,
                                         std::uint64_t seed)
{
    g.validate();
    const int N = g.dim;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unif(0, g.length);
    VelocityField u(g);
    QTensorField Q(g);
    if (spec.kind == "gaussian") {
        for (int b = 0; b < spec.bumps; ++b) {
            std::array<double, 3> c{unif(rng), unif(rng), N == 3 ? unif(rng) : 0.0};
            Vec3 av(normal(rng), normal(rng), N == 3 ? normal(rng) : 0.0);
            Mat3 A = Mat3::Zero();
            for (int r = 0; r < N; ++r)
                for (int s = r; s < N; ++s) A(r, s) = A(s, r) = normal(rng);
            for (std::size_t i = 0; i < g.size(); ++i) {
                auto x = coordinates(g, i);
                double r2 = 0;
                for (int d = 0; d < N; ++d) {
                    double dx = std::remainder(x[d] - c[d], g.length);
                    r2 += dx * dx;
                }
                double w = std::exp(-r2 / (2 * spec.width * spec.width));
                for (int d = 0; d < N; ++d) u.at(d, i) += w * av(d);
                for (int r = 0; r < N; ++r)
                    for (int s = 0; s < N; ++s) Q.at(r * N + s, i) += w * A(r, s);
            }
        }
    } else if (spec.kind == "noise") {
        for (auto& v : u.data) v = normal(rng);
        for (auto& v : Q.data) v = normal(rng);
    } else if (spec.kind != "zero") {
        throw Error("init: unknown kind " + spec.kind);
    }
    FieldPair x{forward(u), forward(Q)};
    if (spec.kind == "noise") {
        const double unit = 2 * pi / g.length;
        const auto& xis = cached_wavenumbers(g);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (std::sqrt(norm2(xis[i])) / unit > spec.band) {
                for (int c = 0; c < N; ++c) x.u.at(c, i) = 0;
                for (int c = 0; c < N * N; ++c) x.Q.at(c, i) = 0;
            }
    }
    if (!spec.velocity) x.u = SpectralField(g, N);
    if (!spec.tensor) x.Q = SpectralField(g, N * N);
    x.u = zero_nyquist(leray_project(std::move(x.u)));
    x.Q = zero_nyquist(symmetric_traceless(std::move(x.Q)));
    zero_mean(x.u);
    zero_mean(x.Q);
    // round trip through physical space so that the stored fields are exactly real
    u = VelocityField(inverse(x.u));
    Q = QTensorField(inverse(x.Q));
    x = {forward(u), forward(Q)};

    InitialData out;
    double raw = initial_data_norm(x, e);
    if (spec.epsilon > 0 && raw > 0) out.scale = spec.epsilon * spec.epsilon / raw;
    else out.scale = spec.amplitude;
    for (auto& v : u.data) v *= out.scale;
    for (auto& v : Q.data) v *= out.scale;
    out.state = SimState{0.0, u, Q, 0};
    out.data_norm = initial_data_norm({forward(u), forward(Q)}, e);
    return out;
}

} // namespace qtlab
