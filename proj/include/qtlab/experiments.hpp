#pragma once

// Numerical experiments shared by the command-line tool and the acceptance runner. Each one
// returns named pass/fail checks plus the tables and plots it produced.

#include <chrono>

#include "qtlab/io.hpp"

namespace qtlab {

struct Check {
    std::string name;
    bool pass = false;
    double value = 0;
    double limit = 0;
    std::string detail;
};

struct PlotRequest {
    std::string file;
    std::vector<PlotLine> lines;
    PlotKind kind = PlotKind::LogLog;
    std::vector<GuideSlope> guides;
    std::string title;
};

struct Report {
    std::string title;
    std::vector<Check> checks;
    std::vector<std::pair<std::string, Series>> tables;
    std::vector<PlotRequest> plots;
    std::vector<std::string> notes;

    explicit Report(std::string t = "") : title(std::move(t)) {}
    bool passed() const
    {
        return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
    }
    void check_le(std::string name, double value, double limit, std::string detail = "")
    {
        checks.push_back({std::move(name), value <= limit, value, limit, std::move(detail)});
    }
    void check_true(std::string name, bool ok, std::string detail = "")
    {
        checks.push_back({std::move(name), ok, ok ? 1.0 : 0.0, 1.0, std::move(detail)});
    }
};

inline std::string fmtg(double v, int digits = 4)
{
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

inline std::vector<double> parse_times(const std::string& s)
{
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(detail::parse_double(detail::trim(item)));
    return out;
}

inline NormExponents exponents_of(const RunConfig& cfg)
{
    return NormExponents::make(cfg.grid.dim, cfg.norms_sigma, cfg.norms_q2);
}

// ---------------------------------------------------------------- random data

// Model with a prescribed beta (xi = beta N / 2).
inline ModelParams with_beta(ModelParams p, int N, double beta)
{
    p.dim = N;
    p.xi = beta * N / 2.0;
    return p;
}

inline Wavevector random_direction(std::mt19937_64& rng, int N, double magnitude)
{
    std::normal_distribution<double> nd;
    Wavevector w{nd(rng), nd(rng), N == 3 ? nd(rng) : 0.0};
    double n = std::sqrt(xi_norm2(w, N));
    for (auto& x : w) x *= magnitude / n;
    return w;
}

// Random complex datum; Q symmetric, optionally traceless.
inline ModeData random_mode_datum(std::mt19937_64& rng, int N, bool traceless)
{
    std::normal_distribution<double> nd;
    ModeData d = ModeData::zero(N);
    for (int j = 0; j < N; ++j) d.u(j) = cd(nd(rng), nd(rng));
    for (int r = 0; r < N; ++r)
        for (int s = r; s < N; ++s) d.Q(r, s) = d.Q(s, r) = cd(nd(rng), nd(rng));
    if (traceless) {
        cd tr = d.Q.trace();
        for (int r = 0; r < N; ++r) d.Q(r, r) -= tr / double(N);
    }
    return d;
}

inline cd random_sector_point(std::mt19937_64& rng, const SectorParams& s, double decades = 4)
{
    std::uniform_real_distribution<double> ud(0, 1);
    double r = s.lambda0 * std::pow(10.0, decades * ud(rng));
    double th = (2 * ud(rng) - 1) * (pi - s.sigma) * (1 - 1e-9);
    return std::polar(r, th);
}

// Band-limited random smooth fields inside the 2/3 band, u divergence-free, Q symmetric traceless.
inline FieldPair random_smooth_pair(const GridSpec& g, std::mt19937_64& rng, double amplitude = 1.0,
                                    double kc_fraction = 0.15)
{
    std::normal_distribution<double> nd;
    const int N = g.dim;
    VelocityField u(g);
    QTensorField Q(g);
    for (auto& v : u.data) v = nd(rng);
    for (auto& v : Q.data) v = nd(rng);
    FieldPair x{forward(u), forward(Q)};
    const auto& xis = cached_wavenumbers(g);
    const double kc = kc_fraction * g.points * 2 * pi / g.length;
    for (std::size_t i = 0; i < g.size(); ++i) {
        double f = dealias_keep(g, i) ? std::exp(-0.5 * norm2(xis[i]) / (kc * kc)) : 0.0;
        for (int c = 0; c < N; ++c) x.u.at(c, i) *= f;
        for (int c = 0; c < N * N; ++c) x.Q.at(c, i) *= f;
    }
    x.u = zero_nyquist(leray_project(std::move(x.u)));
    x.Q = zero_nyquist(symmetric_traceless(std::move(x.Q)));
    u = VelocityField(inverse(x.u));
    Q = QTensorField(inverse(x.Q));
    double su = max_abs(u), sq = max_abs(Q);
    for (auto& v : u.data) v *= amplitude / su;
    for (auto& v : Q.data) v *= amplitude / sq;
    return {forward(u), forward(Q)};
}

// ---------------------------------------------------------------- symbols and resolvent

struct OracleStats {
    double max_rel = 0;
    double max_residual = 0;
    std::size_t count = 0;
};

inline OracleStats symbol_oracle_sweep(const ModelParams& p, const SectorParams& sector, int samples,
                                       std::uint64_t seed, Series* rows = nullptr)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ud(0, 1);
    OracleStats st;
    for (int k = 0; k < samples; ++k) {
        Wavevector w = random_direction(rng, p.dim, std::pow(10.0, -3 + 6 * ud(rng)));
        cd lam = random_sector_point(rng, sector);
        ModeData d = random_mode_datum(rng, p.dim, false);
        auto sol = resolve_mode(w, lam, d, p);
        auto ref = dense_resolvent_oracle(lam, w, d, p);
        double err = (sol.x - ref.x).norm() / ref.x.norm();
        st.max_rel = std::max(st.max_rel, err);
        if (rows) rows->add({double(p.dim), p.beta(), p.a, std::sqrt(xi_norm2(w, p.dim)), std::abs(lam), std::arg(lam),
                             lower_bound_margin(std::sqrt(xi_norm2(w, p.dim)), lam, p, sector), err});
        st.max_residual = std::max(st.max_residual, resolvent_residual(w, lam, d, sol, p));
        ++st.count;
    }
    return st;
}

struct RootAsymptotics {
    double low_slope = 0;        // d log|l+ + |xi|^2| / d log|xi| on [1e-3, 1e-1]
    double high_plus_dev = 0;   // |l+/|xi|^2 + (1 + i|beta|)| / |1 + i|beta|| at |xi| = 1e3
    double high_minus_dev = 0;
    Series table{{"xi", "dist_plus"}};
};

inline RootAsymptotics root_asymptotics(const ModelParams& p)
{
    if (p.beta() == 0) throw Error("root asymptotics need beta != 0");
    RootAsymptotics r;
    std::vector<std::pair<double, double>> pts;
    for (double k : log_space(1e-3, 1e-1, 21)) {
        double dist = std::abs(p2_roots(k, p).plus + k * k);
        pts.emplace_back(k, dist);
        r.table.add({k, dist});
    }
    Eigen::MatrixXd A(pts.size(), 2);
    Eigen::VectorXd y(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        A(i, 0) = 1;
        A(i, 1) = std::log(pts[i].first);
        y(i) = std::log(pts[i].second);
    }
    r.low_slope = A.colPivHouseholderQr().solve(y)(1);
    double K = 1e3;
    auto roots = p2_roots(K, p);
    cd target_plus(-1, -std::abs(p.beta())), target_minus(-1, std::abs(p.beta()));
    r.high_plus_dev = std::abs(roots.plus / (K * K) - target_plus) / std::abs(target_plus);
    r.high_minus_dev = std::abs(roots.minus / (K * K) - target_minus) / std::abs(target_minus);
    return r;
}

inline Report symbols_check(const RunConfig& cfg)
{
    Report rep("symbols check");
    Series t({"N", "beta", "a", "lambda0", "sigma", "max_rel_error", "max_residual", "samples"});
    Series samples({"N", "beta", "a", "xi", "abs_lambda", "arg_lambda", "margin", "error"});
    double worst = 0;
    for (int N : {2, 3})
        for (double beta : {0.0, 0.5, 2.0})
            for (double a : {0.5, 1.0}) {
                ModelParams p = with_beta(cfg.model, N, beta);
                p.a = a;
                auto sector = make_sector(p, cfg.sector_margin, cfg.sector_lambda0);
                auto st = symbol_oracle_sweep(p, sector, cfg.experiment.samples * 4, cfg.seed + 7 * N, &samples);
                t.add({double(N), beta, a, sector.lambda0, sector.sigma, st.max_rel, st.max_residual, double(st.count)});
                worst = std::max(worst, st.max_rel);
            }
    rep.check_le("resolvent symbols vs dense LU oracle (max rel error)", worst, 1e-10);
    rep.tables.emplace_back("symbols_oracle", t);
    rep.tables.emplace_back("symbols_samples", samples);

    ModelParams p = cfg.model;
    if (p.beta() == 0) p = with_beta(p, p.dim, 0.5);
    auto ra = root_asymptotics(p);
    rep.check_le("low-frequency root |l+ + |xi|^2| slope deviation from 4", std::abs(ra.low_slope - 4), 0.1,
                 "slope " + fmtg(ra.low_slope, 6));
    rep.check_le("high-frequency roots l+-/|xi|^2 vs -(1 +- i|beta|)", std::max(ra.high_plus_dev, ra.high_minus_dev),
                 0.01);
    rep.tables.emplace_back("root_asymptotics", ra.table);
    rep.plots.push_back({"root_asymptotics.svg", {{"|l+ + |xi|^2|", ra.table.pairs("xi", "dist_plus")}},
                         PlotKind::LogLog, {{4.0, "slope 4"}}, "low-frequency root"});

    auto sector = make_sector(cfg.model, cfg.sector_margin, cfg.sector_lambda0);
    auto ms = margin_sweep(cfg.model, sector.sigma, MarginLattice{1e-3, 1e3, sector.lambda0, 1e3 * sector.lambda0});
    rep.check_true("P2 lower-bound margin is positive on the sector lattice", ms.infimum > 0,
                   "infimum " + fmtg(ms.infimum) + " at |xi| = " + fmtg(ms.xi_at) + ", |lambda| = " + fmtg(ms.lambda_abs_at));
    rep.notes.push_back("sector sigma = " + fmtg(sector.sigma, 6) + ", lambda0 = " + fmtg(sector.lambda0));
    return rep;
}

inline Report resolvent_check(const RunConfig& cfg)
{
    Report rep("resolvent check");
    const ModelParams& p = cfg.model;
    auto sector = make_sector(p, cfg.sector_margin, cfg.sector_lambda0);
    std::mt19937_64 rng(cfg.seed);
    GridSpec g = cfg.grid;
    if (g.size() > 64 * 64 && g.dim == 2) g.points = 64;
    if (g.dim == 3 && g.points > 16) g.points = 16;

    // field-level solve against the per-mode dense oracle
    FieldPair fg = random_smooth_pair(g, rng, 1.0, 0.3);
    cd lam = random_sector_point(rng, sector, 2);
    auto sol = resolvent_apply(lam, fg.u, fg.Q, p, sector);
    const auto& xis = cached_wavenumbers(g);
    double worst = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        ModeData d = mode_datum(fg.u, fg.Q, i);
        if (d.norm() == 0) continue;
        auto ref = dense_resolvent_oracle(lam, xis[i], d, p);
        worst = std::max(worst, (mode_datum(sol.u, sol.Q, i) - ref.x).norm() / std::max(ref.x.norm(), 1e-300));
    }
    rep.check_le("field resolvent vs dense oracle (max rel error per mode)", worst, 1e-10);

    // weighted estimate quotient over three decades of |lambda| along several rays
    Series t({"abs_lambda", "arg", "ratio"});
    double rmin = 1e300, rmax = 0, worst_slope = 0;
    for (double frac : {0.0, 0.5, -0.5, 0.95, -0.95}) {
        double arg = frac * (pi - sector.sigma);
        std::vector<std::pair<double, double>> ray;
        for (double r : log_space(sector.lambda0, 1e3 * sector.lambda0, 13)) {
            double q = resolvent_estimate_ratio(std::polar(r, arg), fg.u, fg.Q, p, sector);
            t.add({r, arg, q});
            ray.emplace_back(r, q);
            rmin = std::min(rmin, q);
            rmax = std::max(rmax, q);
        }
        // trend = log-log slope over the top decade; only growth counts
        const std::size_t first = ray.size() - 5;
        Eigen::MatrixXd A(5, 2);
        Eigen::VectorXd y(5);
        for (std::size_t i = 0; i < 5; ++i) {
            A(i, 0) = 1;
            A(i, 1) = std::log(ray[first + i].first);
            y(i) = std::log(ray[first + i].second);
        }
        worst_slope = std::max(worst_slope, A.colPivHouseholderQr().solve(y)(1));
    }
    rep.check_le("estimate quotient max/min over 3 decades", rmax / rmin, 50.0);
    rep.check_le("estimate quotient growth slope over the top decade of |lambda|", worst_slope, 0.1);
    rep.tables.emplace_back("resolvent_ratio", t);
    return rep;
}

// ---------------------------------------------------------------- semigroup

struct ContourStats {
    double sector_err = 0, low_err = 0, high_err = 0, path_gap = 0, trace_err = 0;
    double exp_trace_err = 0, symmetry = 0;
    int low_modes = 0, high_modes = 0;
    bool converged = true;
    std::string failure;
};

inline ContourStats contour_sweep(const ModelParams& p, const ContourParams& cp,
                                  const QuadratureSpec& quad, const std::vector<double>& times, int modes,
                                  std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ud(0, 1);
    ContourStats st;
    const int N = p.dim;
    auto sector_paths = sector_path(cp);
    auto high_paths = high_frequency_paths(cp);
    for (int m = 0; m < modes; ++m) {
        bool low = m % 2 == 0;
        // low modes below A0/3, high modes between A0 and 1.5
        double k = low ? cp.A0 / 3 * std::pow(10.0, -2 * ud(rng)) * 0.999 : cp.A0 + (1.5 - cp.A0) * ud(rng);
        Wavevector w = random_direction(rng, N, k);
        ModeData d = random_mode_datum(rng, N, false);
        ModePropagator prop(DMat(mode_matrix(w, p).matrix));
        for (double t : times) {
            DVec ref = prop.apply(t, DVec(leray_stack(w, d)));
            double refn = ref.norm();
            auto eval = [&](const PathSet& ps, double& slot) {
                auto r = contour_semigroup_apply(ps, t, d, w, p, quad);
                if (!r.converged) {
                    st.converged = false;
                    st.failure = r.diagnostics();
                }
                DVec v = DVec(r.value.stack());
                slot = std::max(slot, (v - ref).norm() / refn);
                return r.value;
            };
            ModeData a = eval(sector_paths, st.sector_err);
            ModeData b = low ? eval(low_frequency_paths(cp, k), st.low_err) : eval(high_paths, st.high_err);
            st.path_gap = std::max(st.path_gap, (a - b).norm() / refn);
            cd d_trace = d.Q.trace() * std::exp(-k * k * t);
            st.trace_err = std::max(st.trace_err, std::abs(a.Q.trace() - d_trace) / d.norm());
            ModeData e = ModeData::unstack(CStack(ref), N);
            st.exp_trace_err = std::max(st.exp_trace_err, std::abs(e.Q.trace() - d_trace) / d.norm());
            st.symmetry = std::max(st.symmetry, (e.Q - e.Q.transpose()).norm() / d.norm());
        }
        (low ? st.low_modes : st.high_modes)++;
    }
    return st;
}

inline Report semigroup_check(const RunConfig& cfg)
{
    Report rep("semigroup check");
    const ModelParams& p = cfg.model;
    auto sector = make_sector(p, cfg.sector_margin, cfg.sector_lambda0);
    auto cp = make_contour_params(p, sector, cfg.A0, cfg.gamma_inf);
    auto times = parse_times(cfg.experiment.times);
    auto st = contour_sweep(p, cp, cfg.quad, times, cfg.experiment.samples, cfg.seed);
    rep.check_true("contour quadrature converged on every segment", st.converged, st.failure);
    rep.check_le("sector path vs matrix exponential (max rel error)", st.sector_err, 1e-6);
    rep.check_le("low-frequency paths vs matrix exponential", st.low_err, 1e-6,
                 std::to_string(st.low_modes) + " modes with |xi| < A0/3");
    rep.check_le("high-frequency paths vs matrix exponential", st.high_err, 1e-6,
                 std::to_string(st.high_modes) + " modes with A0 < |xi| < 1.5");
    rep.check_le("path independence (sector vs frequency paths)", st.path_gap, 1e-6);
    rep.check_le("trace of contour result vs heat factor", st.trace_err, 1e-8);
    rep.check_le("trace of exp(tL) datum vs heat factor", st.exp_trace_err, 1e-12);
    rep.check_le("exp(tL) keeps symmetric Q symmetric", st.symmetry, 1e-12);
    rep.check_true("low-frequency path condition finite", std::isfinite(cp.a0_condition) && cp.a0_condition > 0,
                   "(g0 + g0~ + A0^2)/(g0 - A0^2) = " + fmtg(cp.a0_condition));

    auto hf = high_frequency_decay_sweep(p, cp.A0, cp.gamma_inf, 30.0, 40.0);
    rep.check_true("high-frequency bound |exp(tL)| <= C exp(-gamma_inf t) with finite C", std::isfinite(hf.constant),
                   "gamma_inf = " + fmtg(hf.gamma_inf) + ", C = " + fmtg(hf.constant));
    rep.notes.push_back("gamma0 = " + fmtg(cp.gamma0) + ", lambda0~ = " + fmtg(cp.lambda0_tilde) +
                        ", gamma_inf~ = " + fmtg(cp.gamma_inf_tilde));
    return rep;
}

// ---------------------------------------------------------------- heat trace and linear decay

inline double decay_window_default(double given, double fallback) { return given > 0 ? given : fallback; }

// Periodic heat solution of a unit Gaussian bump (width s, centre c) by the method of images.
inline double heat_images(const std::array<double, 3>& x, const std::array<double, 3>& c, double s, double t,
                          const GridSpec& g, int images)
{
    const int N = g.dim;
    double var = s * s + 2 * t, pref = std::pow(s * s / var, 0.5 * N);
    double total = 0;
    std::array<int, 3> n{-images, -images, N == 3 ? -images : 0};
    for (n[0] = -images; n[0] <= images; ++n[0])
        for (n[1] = -images; n[1] <= images; ++n[1])
            for (n[2] = (N == 3 ? -images : 0); n[2] <= (N == 3 ? images : 0); ++n[2]) {
                double r2 = 0;
                for (int d = 0; d < N; ++d) {
                    double dx = x[d] - c[d] - n[d] * g.length;
                    r2 += dx * dx;
                }
                total += std::exp(-r2 / (2 * var));
            }
    return pref * total;
}

inline double whole_space_heat(const std::array<double, 3>& x, const std::array<double, 3>& c, double s, double t,
                               int N)
{
    double var = s * s + 2 * t, r2 = 0;
    for (int d = 0; d < N; ++d) r2 += (x[d] - c[d]) * (x[d] - c[d]);
    return std::pow(s * s / var, 0.5 * N) * std::exp(-r2 / (2 * var));
}

inline Report heat_trace_experiment(const RunConfig& cfg)
{
    Report rep("heat trace");
    const GridSpec& g = cfg.grid;
    const int N = g.dim;
    const double s = cfg.init.width, Twrap = wraparound_time(g.length);
    const double t_end = cfg.experiment.t_end > 0 ? cfg.experiment.t_end : Twrap;
    std::array<double, 3> c{g.length / 2, g.length / 2, N == 3 ? g.length / 2 : 0.0};

    PhysicalField d0(g, 1);
    for (std::size_t i = 0; i < g.size(); ++i) d0.at(0, i) = heat_images(coordinates(g, i), c, s, 0, g, 2);
    SpectralField d0h = forward(d0);

    Series t({"t", "sup_d", "rel_err_periodic", "rel_err_whole_space"});
    double worst = 0, worst_ws = 0;
    const double t_ws = std::max(1.0, (g.length / 2) * (g.length / 2) / (4 * std::log(1e9)) - s * s / 2);
    std::vector<std::pair<double, double>> sup_series;
    for (double tt : log_space(1.0, t_end, cfg.experiment.time_samples)) {
        PhysicalField d = inverse(heat_trace_propagate(d0h, tt));
        double peak = max_abs(d), err = 0, err_ws = 0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            auto x = coordinates(g, i);
            err = std::max(err, std::abs(d.at(0, i) - heat_images(x, c, s, tt, g, 3)));
            if (tt <= t_ws) err_ws = std::max(err_ws, std::abs(d.at(0, i) - whole_space_heat(x, c, s, tt, N)));
        }
        err /= peak;
        err_ws /= peak;
        worst = std::max(worst, err);
        if (tt <= t_ws) worst_ws = std::max(worst_ws, err_ws);
        t.add({tt, peak, err, tt <= t_ws ? err_ws : std::numeric_limits<double>::quiet_NaN()});
        sup_series.emplace_back(tt, peak);
    }
    rep.check_le("d vs periodic analytic heat solution, t <= T_wrap (rel sup error)", worst, 1e-8);
    rep.check_le("d vs whole-space heat solution, t <= " + fmtg(t_ws), worst_ws, 1e-8);

    double lo = decay_window_default(cfg.experiment.fit_lo, Twrap / 256), hi = decay_window_default(cfg.experiment.fit_hi, Twrap / 2);
    double rate = theoretical_rate(std::numeric_limits<double>::infinity(), 1, 0, 0, N).exponent;
    auto fit = decay_fit(sup_series, lo, hi, rate);
    rep.check_le("sup-norm decay exponent vs -N/2 (relative deviation)", fit.relative_deviation, 0.05,
                 "fitted " + fmtg(fit.exponent, 6) + " on [" + fmtg(lo) + ", " + fmtg(hi) + "], " +
                     std::to_string(fit.used) + " samples");

    // the trace of the full linear semigroup follows the same heat flow
    ModelParams p = cfg.model;
    p.dim = N;
    auto bank = make_propagator_bank(g, p);
    FieldPair x = zero_pair(g);
    for (int r = 0; r < N; ++r)
        for (std::size_t i = 0; i < g.size(); ++i) x.Q.at(r * N + r, i) = d0h.at(0, i) / double(N);
    double trace_gap = 0;
    for (double tt : {1.0, 10.0, 100.0}) {
        FieldPair y = linear_evolve(bank, x, tt);
        SpectralField ref = heat_trace_propagate(d0h, tt);
        double num = 0, den = 0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (on_nyquist(g, i)) continue;
            cd tr = 0;
            for (int r = 0; r < N; ++r) tr += y.Q.at(r * N + r, i);
            num = std::max(num, std::abs(tr - ref.at(0, i)));
            den = std::max(den, std::abs(ref.at(0, i)));
        }
        trace_gap = std::max(trace_gap, num / den);
    }
    rep.check_le("trace of full linear semigroup vs heat propagation", trace_gap, 1e-12);
    rep.tables.emplace_back("heat_trace", t);
    rep.plots.push_back({"heat_trace.svg", {{"sup |d(t)|", sup_series}}, PlotKind::LogLog,
                         {{-rate, "slope -N/2"}}, "heat flow of tr Q"});
    return rep;
}

inline Report linear_decay_experiment(const RunConfig& cfg)
{
    Report rep("linear decay");
    const GridSpec& g = cfg.grid;
    const int N = g.dim;
    ModelParams p = cfg.model;
    const double s = cfg.init.width, Twrap = wraparound_time(g.length);
    const double t_end = cfg.experiment.t_end > 0 ? cfg.experiment.t_end : Twrap;
    std::array<double, 3> c{g.length / 2, g.length / 2, N == 3 ? g.length / 2 : 0.0};

    VelocityField u0(g);
    for (std::size_t i = 0; i < g.size(); ++i) u0.at(0, i) = heat_images(coordinates(g, i), c, s, 0, g, 1);
    FieldPair x = zero_pair(g);
    x.u = zero_nyquist(leray_project(forward(u0)));
    zero_mean(x.u);
    auto bank = make_propagator_bank(g, p);

    Series t({"t", "Linf_u", "Linf_u_high", "Linf_Q"});
    auto cp_A0 = cfg.A0;
    std::vector<std::pair<double, double>> sup_series, high_series;
    for (double tt : log_space(1.0, t_end, cfg.experiment.time_samples)) {
        FieldPair y = linear_evolve(bank, x, tt);
        double su = max_abs(inverse(y.u));
        auto [lo_part, hi_part] = frequency_split(y.u, cp_A0);
        double sh = max_abs(inverse(hi_part));
        double sq = max_abs(inverse(y.Q));
        t.add({tt, su, sh, sq});
        sup_series.emplace_back(tt, su);
        if (sh > 0) high_series.emplace_back(tt, sh);
    }
    // mean-zero data on the box decays exponentially once t approaches (L/2pi)^2, so the window stops well short
    double lo = decay_window_default(cfg.experiment.fit_lo, Twrap / 256), hi = decay_window_default(cfg.experiment.fit_hi, Twrap / 16);
    double rate = theoretical_rate(std::numeric_limits<double>::infinity(), 1, 0, 0, N).exponent;
    auto fit = decay_fit(sup_series, lo, hi, rate);
    rep.check_le("L-infinity decay exponent of u vs -N/2 (relative deviation)", fit.relative_deviation, 0.10,
                 "fitted " + fmtg(fit.exponent, 6) + " on [" + fmtg(lo) + ", " + fmtg(hi) + "], " +
                     std::to_string(fit.used) + " samples");
    rep.tables.emplace_back("linear_decay", t);
    rep.plots.push_back({"linear_decay.svg", {{"sup |u(t)|", sup_series}, {"sup |high-frequency u(t)|", high_series}},
                         PlotKind::LogLog, {{-rate, "slope -N/2"}}, "linearized decay of u"});
    return rep;
}

// ---------------------------------------------------------------- identities on fields

inline Report split_identity_check(const RunConfig& cfg)
{
    Report rep("split identity");
    GridSpec g = cfg.grid;
    if (g.dim == 2 && g.points > 64) g.points = 64;
    if (g.dim == 3 && g.points > 16) g.points = 16;
    std::mt19937_64 rng(cfg.seed);
    double worst = 0;
    for (double xi : {0.0, 0.3, 1.0}) {
        ModelParams p = cfg.model;
        p.dim = g.dim;
        p.xi = xi;
        for (int k = 0; k < 10; ++k) {
            FieldPair x = random_smooth_pair(g, rng, 0.5, 0.08);
            FieldPair full = full_rhs(x.u, x.Q, p);
            FieldPair lin = linear_terms(x.u, x.Q, p);
            FieldPair nl = nonlinear_terms(x.u, x.Q, p);
            nl.u = leray_project(std::move(nl.u));
            nl += lin;
            PhysicalField du = inverse(combine(full, 1.0, nl, -1.0).u), dq = inverse(combine(full, 1.0, nl, -1.0).Q);
            worst = std::max({worst, max_abs(du), max_abs(dq)});
        }
    }
    rep.check_le("unsplit rhs vs linear + (f, g), max abs difference", worst, 1e-10);
    return rep;
}

inline Report variational_check(const RunConfig& cfg)
{
    Report rep("variational derivative");
    GridSpec g = cfg.grid;
    if (g.dim == 2 && g.points > 32) g.points = 32;
    if (g.dim == 3 && g.points > 16) g.points = 16;
    ModelParams p = cfg.model;
    p.dim = g.dim;
    std::mt19937_64 rng(cfg.seed);
    double worst_bulk = 0, worst_full = 0;
    for (int k = 0; k < 20; ++k) {
        FieldPair a = random_smooth_pair(g, rng, 0.6, 0.1), b = random_smooth_pair(g, rng, 0.6, 0.1);
        TensorField Q(inverse(a.Q)), dQ(inverse(b.Q));
        auto shifted = [&](double h) {
            TensorField q = Q;
            for (std::size_t i = 0; i < q.data.size(); ++i) q.data[i] += h * dQ.data[i];
            return q;
        };
        auto bulk_only = [&](double h) {
            auto e = bulk_energy(shifted(h), p);
            double s = 0;
            for (double v : e.density.data) s += v;
            return s * g.cell_volume();
        };
        auto total = [&](double h) { return bulk_energy(shifted(h), p).total; };
        const double h = 1e-4;
        TensorField D = traceless_project(bulk_derivative(Q, p));
        TensorField H = molecular_field(Q, p);
        double pair_bulk = 0, pair_H = 0;
        for (std::size_t i = 0; i < D.data.size(); ++i) {
            pair_bulk += D.data[i] * dQ.data[i];
            pair_H -= H.data[i] * dQ.data[i];
        }
        pair_bulk *= g.cell_volume();
        pair_H *= g.cell_volume();
        double fd_bulk = (-bulk_only(2 * h) + 8 * bulk_only(h) - 8 * bulk_only(-h) + bulk_only(-2 * h)) / (12 * h);
        double fd_total = (-total(2 * h) + 8 * total(h) - 8 * total(-h) + total(-2 * h)) / (12 * h);
        worst_bulk = std::max(worst_bulk, std::abs(fd_bulk - pair_bulk) / std::abs(pair_bulk));
        worst_full = std::max(worst_full, std::abs(fd_total - pair_H) / std::abs(pair_H));
    }
    rep.check_le("bulk derivative vs finite differences of the bulk energy", worst_bulk, 1e-6);
    rep.check_le("-H vs finite differences of the full free energy", worst_full, 1e-6);
    return rep;
}

// ---------------------------------------------------------------- time stepping

inline SimState initial_state(const RunConfig& cfg, std::uint64_t seed, const NormExponents& e, double* data_norm = nullptr)
{
    auto init = generate_initial_data(cfg.init, cfg.grid, e, seed);
    if (data_norm) *data_norm = init.data_norm;
    return init.state;
}

inline SchemeConfig scheme_of(const RunConfig& cfg, const SimState& s)
{
    SchemeConfig sc = cfg.scheme;
    if (cfg.auto_dt) sc.dt = default_dt(s.u);
    return sc;
}

inline Report structure_check(const RunConfig& cfg, int steps = 1000)
{
    Report rep("structure preservation");
    auto e = exponents_of(cfg);
    SimState s0 = initial_state(cfg, cfg.seed, e);
    SchemeConfig sc = scheme_of(cfg, s0);
    RunOptions opt;
    opt.T = sc.dt * steps;
    opt.cadence = std::max(1, steps / 20);
    auto run = run_simulation(s0, sc, cfg.model, opt);
    rep.check_true("run completed without blow-up", !run.blew_up, run.finding);
    auto last = run.diagnostics.rows.back();
    auto col = [&](const char* n) { return last[run.diagnostics.index(n)]; };
    rep.check_le("sup |div u| after " + std::to_string(run.steps) + " steps", col("div_u"), 1e-8);
    rep.check_le("sup |tr Q|", col("trace_Q"), 1e-8);
    rep.check_le("sup |Q - Q^T|", col("asym_Q"), 1e-8);
    rep.tables.emplace_back("structure", run.diagnostics);
    return rep;
}

inline Report gradient_flow_check(const RunConfig& cfg)
{
    Report rep("gradient flow");
    RunConfig c = cfg;
    c.model.xi = 0;
    c.scheme.freeze_velocity = true;
    c.init.velocity = false;
    auto e = exponents_of(c);
    SimState s0 = initial_state(c, c.seed, e);
    SchemeConfig sc = scheme_of(c, s0);
    RunOptions opt;
    opt.T = c.T;
    opt.cadence = 1;
    double worst = -1e300, prev = std::numeric_limits<double>::quiet_NaN();
    long increases = 0;
    Series t({"t", "energy_F", "increase_rel"});
    opt.observers.push_back([&](const StepView& v) {
        double F = bulk_energy(TensorField(inverse(v.x.Q)), c.model).total;
        double inc = std::isnan(prev) ? 0.0 : (F - prev) / std::max(std::abs(F), 1e-300);
        if (inc > 0) ++increases;
        worst = std::max(worst, inc);
        t.add({v.t, F, inc});
        prev = F;
    });
    auto run = run_simulation(s0, sc, c.model, opt);
    rep.check_true("run completed without blow-up", !run.blew_up, run.finding);
    rep.check_le("largest per-step relative increase of the free energy", worst, 1e-10,
                 std::to_string(run.steps) + " steps, " + std::to_string(increases) + " increases");
    rep.tables.emplace_back("gradient_flow", t);
    return rep;
}

inline Report duhamel_check(const RunConfig& cfg, const std::vector<double>& lambdas = {0.0, 1.0, 4.0})
{
    Report rep("duhamel and split");
    auto e = exponents_of(cfg);
    SimState s0 = initial_state(cfg, cfg.seed, e);
    Series t({"lambda1", "duhamel_rel_error", "recombination_rel_error", "trajectory_gap", "v1_initial_norm"});
    double worst_duh = 0, worst_rec = 0, worst_v1 = 0;
    for (double l1 : lambdas) {
        SchemeConfig sc = scheme_of(cfg, s0);
        sc.lambda1 = l1;
        auto run = shifted_split_run(s0, sc, cfg.model, cfg.T);
        FieldPair U0 = to_spectral(s0);
        std::vector<FieldPair> forcing;
        forcing.reserve(run.v1.size());
        for (auto& v : run.v1) forcing.push_back(combine(v, l1, v, 0.0));
        FieldPair v2_duh = duhamel_solve(U0, forcing, run.dt, 1.0, cfg.model);
        double duh = relative_difference(v2_duh, run.v2);
        worst_duh = std::max(worst_duh, duh);
        worst_rec = std::max(worst_rec, run.recombination_error);
        worst_v1 = std::max(worst_v1, run.v1_initial_norm);
        t.add({l1, duh, run.recombination_error, run.trajectory_gap, run.v1_initial_norm});
    }
    rep.check_le("Duhamel quadrature vs direct compensation integration (rel)", worst_duh, 1e-4);
    rep.check_le("v1 + v2 vs unsplit forced solution (rel)", worst_rec, 1e-6);
    rep.check_le("shifted system starts from zero", worst_v1, 0.0);
    rep.tables.emplace_back("duhamel", t);
    return rep;
}

struct SmallDataRun {
    RunResult run;
    NormTracker tracker;
    double sup_L2_u = 0;
};

inline SmallDataRun small_data_run(const RunConfig& cfg, double amplitude, std::uint64_t seed)
{
    RunConfig c = cfg;
    c.init.epsilon = 0;
    c.init.amplitude = 1;
    auto e = exponents_of(c);
    SimState unit = initial_state(c, seed, e);
    // unit-shape data with sup norm 1, then scaled to the requested amplitude
    double su = std::max(max_abs(unit.u), max_abs(unit.Q));
    for (auto& v : unit.u.data) v *= amplitude / su;
    for (auto& v : unit.Q.data) v *= amplitude / su;
    SchemeConfig sc = scheme_of(c, unit);
    SmallDataRun out{{}, NormTracker(e)};
    RunOptions opt;
    opt.T = c.T;
    opt.cadence = c.cadence;
    opt.observers.push_back([&](const StepView& v) { norm_tracker_update(out.tracker, v.t, v.x, c.model, sc.dealias); });
    out.run = run_simulation(unit, sc, c.model, opt);
    for (double v : out.run.diagnostics.column("L2_u")) out.sup_L2_u = std::max(out.sup_L2_u, v);
    return out;
}

inline Report small_data_check(const RunConfig& cfg, double eps = 1e-3)
{
    Report rep("small data");
    auto a = small_data_run(cfg, eps, cfg.seed);
    auto b = small_data_run(cfg, eps / 2, cfg.seed);
    double Na = a.tracker.value();
    rep.check_true("runs completed without blow-up", !a.run.blew_up && !b.run.blew_up, a.run.finding + b.run.finding);
    rep.check_true("weighted norm N(u,Q)(T) finite", std::isfinite(Na) && std::isfinite(b.tracker.value()),
                   "N = " + fmtg(Na) + " at eps = " + fmtg(eps) + ", " + fmtg(b.tracker.value()) + " at eps/2");
    double ratio = b.sup_L2_u / a.sup_L2_u;
    rep.check_le("halving eps: sup_t |u|_L2 ratio deviation from 0.5", std::abs(ratio - 0.5) / 0.5, 0.10,
                 "ratio " + fmtg(ratio, 6));
    auto L2 = a.run.diagnostics.column("L2_u");
    std::size_t peak = std::max_element(L2.begin(), L2.end()) - L2.begin();
    bool decreasing = true;
    for (std::size_t i = peak + 1; i < L2.size(); ++i) decreasing = decreasing && L2[i] <= L2[i - 1] * (1 + 1e-9);
    rep.check_true("|u|_L2 non-increasing after its peak", decreasing, "peak at t = " + fmtg(a.run.diagnostics.rows[peak][0]));
    if (a.tracker.exponents().outside_admissible_range)
        rep.notes.push_back("N = 2: exponents outside the admissible range (q2 = " + fmtg(a.tracker.exponents().q2) + ")");
    rep.tables.emplace_back("small_data", a.run.diagnostics);
    return rep;
}

inline Report norms_check(const RunConfig& cfg)
{
    Report rep("norms");
    const double eps = cfg.init.epsilon > 0 ? cfg.init.epsilon : 1e-3;
    Series t({"seed", "eps", "N_norm", "c1", "c2", "c3", "c4"});
    std::array<double, 4> cmin{1e300, 1e300, 1e300, 1e300}, cmax{};
    std::vector<double> lhs_a, lhs_b, traj_a, traj_b;
    for (int k = 0; k < cfg.experiment.seeds; ++k) {
        std::uint64_t seed = cfg.seed + 101 * k;
        auto a = small_data_run(cfg, eps, seed);
        auto bound = nonlinear_bound_check(a.tracker.samples(), a.tracker.exponents());
        auto cs = bound.constants();
        for (int j = 0; j < 4; ++j) {
            cmin[j] = std::min(cmin[j], cs[j]);
            cmax[j] = std::max(cmax[j], cs[j]);
        }
        t.add({double(seed), eps, a.tracker.value(), cs[0], cs[1], cs[2], cs[3]});
        if (k == 0) {
            auto b = small_data_run(cfg, eps / 2, seed);
            auto bb = nonlinear_bound_check(b.tracker.samples(), b.tracker.exponents());
            for (auto& en : bound.entries) lhs_a.push_back(en.lhs);
            for (auto& en : bb.entries) lhs_b.push_back(en.lhs);
            traj_a.push_back(a.tracker.value());
            traj_b.push_back(b.tracker.value());
            Series rows({"t", "N_norm_partial"});
            for (std::size_t i = 1; i <= a.tracker.samples().size(); ++i) {
                std::span<const NormSample> head(a.tracker.samples().data(), i);
                rows.add({head.back().t, weighted_norm_terms(head, a.tracker.exponents()).total()});
            }
            rep.tables.emplace_back("norm_partial", rows);
        }
    }
    double spread = 0;
    bool finite = true;
    for (int j = 0; j < 4; ++j) {
        finite = finite && std::isfinite(cmax[j]) && cmax[j] > 0;
        spread = std::max(spread, cmin[j] > 0 ? cmax[j] / cmin[j] : std::numeric_limits<double>::infinity());
    }
    rep.check_true("empirical constants finite and positive", finite);
    rep.check_le("empirical constants spread across seeds (max/min)", spread, 3.0);
    double worst_lhs = 0;
    for (std::size_t i = 0; i < lhs_a.size(); ++i)
        if (lhs_b[i] > 0) worst_lhs = std::max(worst_lhs, std::abs(lhs_a[i] / lhs_b[i] / 4 - 1));
    double traj = std::abs(traj_a[0] / traj_b[0] / 2 - 1);
    rep.check_le("nonlinear terms scale like eps^2 (deviation)", worst_lhs, 0.15);
    rep.check_le("trajectory norm scales like eps (deviation)", traj, 0.15);
    rep.tables.emplace_back("bound_constants", t);
    return rep;
}

// ---------------------------------------------------------------- simulate

inline Report simulate(const RunConfig& cfg)
{
    Report rep("simulate");
    auto e = exponents_of(cfg);
    double I = 0;
    SimState s0 = initial_state(cfg, cfg.seed, e, &I);
    SchemeConfig sc = scheme_of(cfg, s0);
    NormTracker tracker(e);
    Series extra({"W01_q1", "N_norm_partial"});
    RunOptions opt;
    opt.T = cfg.T;
    opt.cadence = cfg.cadence;
    opt.observers.push_back([&](const StepView& v) {
        norm_tracker_update(tracker, v.t, v.x, cfg.model, sc.dealias);
        const auto& s = tracker.samples().back();
        extra.add({s.u[0][0] + s.Q[0][0] + s.Q[0][1], tracker.value()});
    });
    auto run = run_simulation(s0, sc, cfg.model, opt);
    Series table = run.diagnostics;
    for (auto& c : extra.columns) table.columns.push_back(c);
    for (std::size_t i = 0; i < table.rows.size(); ++i)
        for (double v : extra.rows[i]) table.rows[i].push_back(v);
    rep.tables.emplace_back("diagnostics", table);
    rep.check_true("no blow-up", !run.blew_up, run.finding);
    std::filesystem::create_directories(cfg.output_dir);
    save_snapshot(run.final_state, cfg.model, cfg.output_dir + "/final.qtns");
    rep.notes.push_back("steps " + std::to_string(run.steps) + ", dt " + fmtg(run.dt) + ", max CFL " + fmtg(run.max_cfl));
    rep.notes.push_back("initial-data norm (Sobolev surrogate) " + fmtg(I, 12));
    rep.notes.push_back("N(u,Q)(T) = " + fmtg(tracker.value()));
    rep.plots.push_back({"diagnostics.svg", {{"|u|_L2", table.pairs("t", "L2_u")}, {"|Q|_L2", table.pairs("t", "L2_Q")}},
                         PlotKind::Linear, {}, "simulate"});
    return rep;
}

// Writes tables (CSV), plots (SVG) and the effective configuration into cfg.output_dir.
inline void write_report(const Report& rep, const RunConfig& cfg)
{
    std::filesystem::create_directories(cfg.output_dir);
    write_config(cfg, cfg.output_dir + "/config.effective");
    for (auto& [name, s] : rep.tables) write_diagnostics(s, cfg.output_dir + "/" + name + ".csv");
    for (auto& p : rep.plots) {
        bool any = false;
        for (auto& l : p.lines) any = any || !l.points.empty();
        if (any) emit_plot(p.lines, p.kind, cfg.output_dir + "/" + p.file, p.guides, p.title);
    }
}

} // namespace qtlab
