#pragma once

// Per-mode resolvent calculus: characteristic polynomials, roots, sector bounds,
// explicit multiplier solution, pressure, and the dense matrix generator.

#include <algorithm>
#include <cmath>
#include <optional>

#include <Eigen/Dense>

#include "qtlab/grid.hpp"
#include "qtlab/qtensor.hpp"

namespace qtlab {

using CVec = Eigen::Matrix<cd, Eigen::Dynamic, 1, 0, 3, 1>;
using CTen = Eigen::Matrix<cd, Eigen::Dynamic, Eigen::Dynamic, 0, 3, 3>;
using CStack = Eigen::Matrix<cd, Eigen::Dynamic, 1, 0, 12, 1>;
using CMat = Eigen::Matrix<cd, Eigen::Dynamic, Eigen::Dynamic, 0, 12, 12>;

inline constexpr cd I_unit{0.0, 1.0};

inline int mode_size(int N) { return N + N * N; }

// Fourier datum or solution at one mode: velocity part and tensor part.
struct ModeData {
    CVec u;
    CTen Q;

    static ModeData zero(int N) { return {CVec::Zero(N), CTen::Zero(N, N)}; }
    int dim() const { return static_cast<int>(u.size()); }
    CStack stack() const
    {
        const int N = dim();
        CStack x(mode_size(N));
        for (int j = 0; j < N; ++j) x(j) = u(j);
        for (int r = 0; r < N; ++r)
            for (int s = 0; s < N; ++s) x(N + r * N + s) = Q(r, s);
        return x;
    }
    static ModeData unstack(const CStack& x, int N)
    {
        ModeData m = zero(N);
        for (int j = 0; j < N; ++j) m.u(j) = x(j);
        for (int r = 0; r < N; ++r)
            for (int s = 0; s < N; ++s) m.Q(r, s) = x(N + r * N + s);
        return m;
    }
    double norm() const { return std::sqrt(u.squaredNorm() + Q.squaredNorm()); }
    ModeData& operator+=(const ModeData& o)
    {
        u += o.u;
        Q += o.Q;
        return *this;
    }
};

inline ModeData operator-(const ModeData& a, const ModeData& b) { return {a.u - b.u, a.Q - b.Q}; }
inline ModeData operator*(cd s, const ModeData& a) { return {s * a.u, s * a.Q}; }

inline CVec xi_vec(const Wavevector& xi, int N)
{
    CVec v(N);
    for (int d = 0; d < N; ++d) v(d) = xi[d];
    return v;
}

inline double xi_norm2(const Wavevector& xi, int N)
{
    double s = 0;
    for (int d = 0; d < N; ++d) s += xi[d] * xi[d];
    return s;
}

// ---------------------------------------------------------------- sector

inline double sigma0_of(double beta) { return beta == 0 ? 0.0 : std::atan(std::abs(beta)); }

struct SectorParams {
    double sigma = 0.1;
    double lambda0 = 1.0;
    double sigma0 = 0.0;

    bool contains(cd lambda) const { return std::abs(std::arg(lambda)) < pi - sigma && std::abs(lambda) >= lambda0; }
    bool contains_cone(cd lambda) const { return lambda != cd(0) && std::abs(std::arg(lambda)) < pi - sigma; }
    void validate() const
    {
        if (!(sigma > sigma0 && sigma < pi / 2)) throw Error("sector: sigma must lie in (sigma0, pi/2)");
        if (!(lambda0 >= 1)) throw Error("sector: lambda0 must be >= 1");
    }
};

// ---------------------------------------------------------------- polynomials and roots

struct CharPolys {
    cd P1, P2;
};

inline CharPolys char_polys(double xi_mag, cd lambda, const ModelParams& p)
{
    double k2 = xi_mag * xi_mag, beta = p.beta();
    cd P1 = (lambda + k2) * (lambda + k2 + p.a);
    return {P1, P1 + beta * beta * k2 * k2};
}

struct RootPair {
    cd plus, minus;
};

// Roots of P2 as a quadratic in lambda. lambda_plus -> -|xi|^2 at low frequency and
// -(1 + i|beta|)|xi|^2 at high frequency.
inline RootPair p2_roots(double xi_mag, const ModelParams& p)
{
    double k2 = xi_mag * xi_mag, beta = p.beta();
    double B = 2 * k2 + p.a;
    double C = k2 * (k2 + p.a) + beta * beta * k2 * k2;
    double disc = p.a * p.a - 4 * beta * beta * k2 * k2;  // = B^2 - 4C
    if (disc >= 0) {
        double far = -0.5 * (B + std::sqrt(disc));  // both terms negative: no cancellation
        return {cd(C / far), cd(far)};
    }
    double im = 0.5 * std::sqrt(-disc);
    return {cd(-0.5 * B, -im), cd(-0.5 * B, im)};
}

inline double lower_bound_margin(double xi_mag, cd lambda, const ModelParams& p, const SectorParams& sector)
{
    if (!sector.contains_cone(lambda)) throw Error("lower_bound_margin: lambda outside the sector");
    auto P = char_polys(xi_mag, lambda, p);
    return std::abs(P.P2) / std::pow(std::sqrt(std::abs(lambda)) + xi_mag, 4);
}

struct MarginSweep {
    double infimum = std::numeric_limits<double>::infinity();
    double xi_at = 0, lambda_abs_at = 0, arg_at = 0;
    std::size_t points = 0;
};

struct MarginLattice {
    double xi_min = 1e-3, xi_max = 1e3;
    double lambda_min = 1e-3, lambda_max = 1e3;
    int xi_points = 22, lambda_points = 22, arg_points = 21;
};

inline std::vector<double> log_space(double lo, double hi, int n)
{
    std::vector<double> v(n);
    if (n == 1) {
        v[0] = lo;
        return v;
    }
    for (int i = 0; i < n; ++i) v[i] = lo * std::pow(hi / lo, double(i) / (n - 1));
    return v;
}

inline MarginSweep margin_sweep(const ModelParams& p, double sigma, const MarginLattice& lat = {})
{
    SectorParams cone{sigma, 1.0, sigma0_of(p.beta())};
    MarginSweep out;
    auto xs = log_space(lat.xi_min, lat.xi_max, lat.xi_points);
    auto ls = log_space(lat.lambda_min, lat.lambda_max, lat.lambda_points);
    double span = pi - sigma;
    for (double x : xs)
        for (double l : ls)
            for (int j = 0; j < lat.arg_points; ++j) {
                double th = -span + (j + 0.5) * 2 * span / lat.arg_points;
                double m = lower_bound_margin(x, std::polar(l, th), p, cone);
                ++out.points;
                if (m < out.infimum) out = {m, x, l, th, out.points};
            }
    return out;
}

// Smallest power of two lambda0 >= 1 whose lattice margin infimum over |lambda| >= lambda0
// exceeds the threshold. lambda0 = 1 when beta = 0.
inline double calibrate_lambda0(const ModelParams& p, double sigma, double xi_max = 1e3, double threshold = 1e-3)
{
    if (p.beta() == 0) return 1.0;
    for (double l0 = 1.0; l0 <= 1048576.0; l0 *= 2) {
        MarginLattice lat;
        lat.xi_max = xi_max;
        lat.xi_min = std::min(lat.xi_min, xi_max);
        lat.lambda_min = l0;
        lat.lambda_max = 1e3 * l0;
        if (margin_sweep(p, sigma, lat).infimum > threshold) return l0;
    }
    throw Error("calibrate_lambda0: margin stays below threshold; sigma too close to sigma0?");
}

// sigma = sigma0 + margin (pi/2 - sigma0) with margin in (0, 1).
inline SectorParams make_sector(const ModelParams& p, double margin = 0.25, double lambda0 = 0.0)
{
    SectorParams s;
    s.sigma0 = sigma0_of(p.beta());
    if (!(margin > 0 && margin < 1)) throw Error("sector: margin must lie in (0, 1)");
    s.sigma = s.sigma0 + margin * (pi / 2 - s.sigma0);
    s.lambda0 = lambda0 > 0 ? lambda0 : calibrate_lambda0(p, s.sigma);
    s.validate();
    return s;
}

// ---------------------------------------------------------------- symbols

enum class SymbolFamily { L1, L2, M1, M2, LT1, LT2, MT1, MT2, MT3, MT4 };

inline constexpr std::array<SymbolFamily, 10> all_symbol_families{
    SymbolFamily::L1,  SymbolFamily::L2,  SymbolFamily::M1,  SymbolFamily::M2,  SymbolFamily::LT1,
    SymbolFamily::LT2, SymbolFamily::MT1, SymbolFamily::MT2, SymbolFamily::MT3, SymbolFamily::MT4};

inline bool singular_at_zero(SymbolFamily f) { return f == SymbolFamily::L2 || f == SymbolFamily::LT2; }

// Shared per-(xi, lambda) factors.
struct SymbolContext {
    int N;
    CVec xi;
    double k2;
    cd lambda, mu, P1, P2;
    double beta, a;

    SymbolContext(const Wavevector& w, cd lam, const ModelParams& p)
        : N(p.dim), xi(xi_vec(w, p.dim)), k2(xi_norm2(w, p.dim)), lambda(lam), beta(p.beta()), a(p.a)
    {
        mu = lam + k2 + p.a;
        auto P = char_polys(std::sqrt(k2), lam, p);
        P1 = P.P1;
        P2 = P.P2;
    }
};

inline ModeData symbol_eval(SymbolFamily fam, const SymbolContext& s, const ModeData& datum)
{
    const int N = s.N;
    ModeData out = ModeData::zero(N);
    if (s.k2 == 0 && singular_at_zero(fam)) throw Error("symbol_eval: family is singular at xi = 0");
    const CVec& xi = s.xi;
    const CVec& f = datum.u;
    CVec h = I_unit * (datum.Q * xi);  // Fourier symbol of Div g
    cd xf = xi.dot(f), xh = xi.dot(h);  // Eigen dot conjugates the first argument; xi is real
    CTen xx = xi * xi.transpose();
    const double b = s.beta;
    switch (fam) {
    case SymbolFamily::L1: out.u = (s.mu / s.P2) * f; break;
    case SymbolFamily::L2: out.u = -(s.mu / s.P2) * xi * (xf / s.k2); break;
    case SymbolFamily::M1: out.u = (b * s.k2 / s.P2) * h; break;
    case SymbolFamily::M2: out.u = -(b / s.P2) * xi * xh; break;
    case SymbolFamily::LT1: out.Q = (I_unit * b / s.P2) * (xi * f.transpose() + f * xi.transpose()); break;
    case SymbolFamily::LT2: out.Q = (-2.0 * I_unit * b / s.P2) * xx * (xf / s.k2); break;
    case SymbolFamily::MT1:
        out.Q = (I_unit * b * b * s.k2 / (s.mu * s.P2)) * (xi * h.transpose() + h * xi.transpose());
        break;
    case SymbolFamily::MT2: out.Q = (-2.0 * I_unit * b * b / (s.mu * s.P2)) * xx * xh; break;
    case SymbolFamily::MT3: out.Q = datum.Q / s.mu; break;
    case SymbolFamily::MT4: out.Q = (s.a / N) * datum.Q.trace() / s.P1 * CTen::Identity(N, N); break;
    }
    return out;
}

inline ModeData symbol_eval(SymbolFamily fam, const Wavevector& xi, cd lambda, const ModeData& datum, const ModelParams& p)
{
    return symbol_eval(fam, SymbolContext(xi, lambda, p), datum);
}

struct ModeSolution {
    ModeData x;
    cd pressure = 0;
};

// Solution of the resolvent problem at one mode as the sum of the ten symbol families.
// No sector check: callers integrating along contours evaluate outside the sector too.
inline ModeSolution resolve_mode(const Wavevector& w, cd lambda, const ModeData& datum, const ModelParams& p)
{
    SymbolContext s(w, lambda, p);
    ModeSolution out{ModeData::zero(p.dim), 0.0};
    for (auto fam : all_symbol_families) {
        if (s.k2 == 0 && singular_at_zero(fam)) continue;
        out.x += symbol_eval(fam, s, datum);
    }
    if (s.k2 > 0) {
        cd qxx = (s.xi.transpose() * out.x.Q * s.xi)(0, 0);
        out.pressure = s.beta * qxx - I_unit * s.xi.dot(datum.u) / s.k2;
    }
    return out;
}

// Relative residual of the Fourier-side resolvent system with pressure.
inline double resolvent_residual(const Wavevector& w, cd lambda, const ModeData& datum, const ModeSolution& sol,
                                 const ModelParams& p)
{
    const int N = p.dim;
    CVec xi = xi_vec(w, N);
    double k2 = xi_norm2(w, N), beta = p.beta();
    const CVec& u = sol.x.u;
    const CTen& Q = sol.x.Q;
    CVec ru = (lambda + k2) * u + I_unit * xi * sol.pressure - I_unit * beta * k2 * (Q * xi) - datum.u;
    CTen rQ = (lambda + k2) * Q - I_unit * beta * (xi * u.transpose() + u * xi.transpose()) +
              p.a * (Q - Q.trace() / double(N) * CTen::Identity(N, N)) - datum.Q;
    double scale = datum.norm();
    if (scale == 0) scale = 1;
    return std::sqrt(ru.squaredNorm() + rQ.squaredNorm()) / scale;
}

// ---------------------------------------------------------------- dense generator

struct ModeOperator {
    Wavevector xi;
    CMat matrix;
    ModelParams params;
};

// Dense L(xi) on stacked (u, Q). The Q rows couple to the solenoidal part P u, so that the
// gradient direction of u is an eigenvector (eigenvalue -|xi|^2) and L stays diagonalizable;
// on divergence-free data this is the same operator.
inline ModeOperator mode_matrix(const Wavevector& w, const ModelParams& p)
{
    const int N = p.dim, n = mode_size(N);
    CMat L = CMat::Zero(n, n);
    double k2 = xi_norm2(w, N), beta = p.beta();
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 3, 3> P =
        Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 3, 3>::Identity(N, N);
    if (k2 > 0)
        for (int r = 0; r < N; ++r)
            for (int s = 0; s < N; ++s) P(r, s) -= w[r] * w[s] / k2;
    auto qi = [N](int r, int s) { return N + r * N + s; };
    for (int j = 0; j < N; ++j) {
        L(j, j) = -k2;
        for (int m = 0; m < N; ++m)
            for (int l = 0; l < N; ++l) L(j, qi(m, l)) += I_unit * beta * k2 * P(j, m) * w[l];
    }
    for (int r = 0; r < N; ++r)
        for (int s = 0; s < N; ++s) {
            int row = qi(r, s);
            for (int m = 0; m < N; ++m) L(row, m) += I_unit * beta * (w[r] * P(s, m) + w[s] * P(r, m));
            L(row, row) += -k2 - p.a;
            if (r == s)
                for (int d = 0; d < N; ++d) L(row, qi(d, d)) += p.a / N;
        }
    return {w, L, p};
}

inline CStack leray_stack(const Wavevector& w, const ModeData& datum)
{
    const int N = datum.dim();
    ModeData d = datum;
    double k2 = xi_norm2(w, N);
    if (k2 > 0) {
        CVec xi = xi_vec(w, N);
        d.u -= xi * (xi.dot(d.u) / k2);
    }
    return d.stack();
}

struct OracleResult {
    ModeData x;
    double rcond = 0;
};

inline OracleResult dense_resolvent_oracle(cd lambda, const Wavevector& w, const ModeData& datum, const ModelParams& p)
{
    const int n = mode_size(p.dim);
    CMat A = lambda * CMat::Identity(n, n) - mode_matrix(w, p).matrix;
    Eigen::PartialPivLU<CMat> lu(A);
    double rc = lu.rcond();
    if (!(rc > 1e-13)) throw Error("dense_resolvent_oracle: matrix singular or ill-conditioned (rcond " + std::to_string(rc) + ")");
    CStack x = lu.solve(leray_stack(w, datum));
    return {ModeData::unstack(x, p.dim), rc};
}

// ---------------------------------------------------------------- field-level resolvent

struct ResolventFields {
    SpectralField u, Q, pressure;
};

inline ModeData mode_datum(const SpectralField& f, const SpectralField& g, std::size_t i)
{
    const int N = f.grid.dim;
    ModeData d = ModeData::zero(N);
    for (int j = 0; j < N; ++j) d.u(j) = f.at(j, i);
    for (int r = 0; r < N; ++r)
        for (int s = 0; s < N; ++s) d.Q(r, s) = g.at(r * N + s, i);
    return d;
}

inline void store_mode(SpectralField& u, SpectralField& Q, std::size_t i, const ModeData& m)
{
    const int N = u.grid.dim;
    for (int j = 0; j < N; ++j) u.at(j, i) = m.u(j);
    for (int r = 0; r < N; ++r)
        for (int s = 0; s < N; ++s) Q.at(r * N + s, i) = m.Q(r, s);
}

inline ResolventFields resolvent_apply(cd lambda, const SpectralField& f, const SpectralField& g, const ModelParams& p,
                                       const SectorParams& sector)
{
    if (!sector.contains(lambda)) throw Error("resolvent_apply: lambda outside the sector");
    const int N = f.grid.dim;
    if (f.components != N || g.components != N * N) throw Error("resolvent_apply: expected (vector, tensor) data");
    require_same_grid(f.grid, g.grid);
    ResolventFields out{SpectralField(f.grid, N), SpectralField(f.grid, N * N), SpectralField(f.grid, 1)};
    const auto& xis = cached_wavenumbers(f.grid);
    parallel_for(xis.size(), [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            auto sol = resolve_mode(xis[i], lambda, mode_datum(f, g, i), p);
            store_mode(out.u, out.Q, i, sol.x);
            out.pressure.at(0, i) = sol.pressure;
        }
    });
    return out;
}

// Weighted resolvent bound quotient for q = 2, evaluated exactly through Parseval:
// [|l|(|u| + |Q|_{W1}) + |l|^{1/2}(|grad u| + |grad^2 Q|) + |u|_{W2} + |Q|_{W3}] / (|f| + |g|_{W1}).
inline double resolvent_estimate_ratio(cd lambda, const SpectralField& f, const SpectralField& g, const ModelParams& p,
                                       const SectorParams& sector)
{
    auto r = resolvent_apply(lambda, f, g, p, sector);
    auto nj = [](const SpectralField& h, int j) { return l2_jet_norm_spectral(h, j); };
    double den = nj(f, 0) + nj(g, 0) + nj(g, 1);
    if (den == 0) throw Error("resolvent_estimate_ratio: zero data");
    double la = std::abs(lambda);
    double num = la * (nj(r.u, 0) + nj(r.Q, 0) + nj(r.Q, 1)) + std::sqrt(la) * (nj(r.u, 1) + nj(r.Q, 2)) +
                 (nj(r.u, 0) + nj(r.u, 1) + nj(r.u, 2)) + (nj(r.Q, 0) + nj(r.Q, 1) + nj(r.Q, 2) + nj(r.Q, 3));
    return num / den;
}

} // namespace qtlab
