#pragma once

// Linear evolution per mode: matrix exponentials and phi-functions, the contour-integral
// representation of the semigroup, the heat flow of tr Q, decay rates and fits.

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "qtlab/symbols.hpp"

namespace qtlab {

// ---------------------------------------------------------------- matrix exponential

// Scaling and squaring with the degree-13 Pade approximant (Higham 2005).
template <class Mat>
Mat expm_pade(const Mat& A)
{
    static constexpr double b[] = {64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
                                   1187353796428800.0,  129060195264000.0,   10559470521600.0,
                                   670442572800.0,      33522128640.0,       1323241920.0,
                                   40840800.0,          960960.0,            16380.0,
                                   182.0,               1.0};
    constexpr double theta13 = 5.371920351148152;
    const auto n = A.rows();
    double norm1 = A.cwiseAbs().colwise().sum().maxCoeff();
    int s = 0;
    if (norm1 > theta13) s = std::max(0, static_cast<int>(std::ceil(std::log2(norm1 / theta13))));
    Mat As = A / std::ldexp(1.0, s);
    Mat I = Mat::Identity(n, n);
    Mat A2 = As * As, A4 = A2 * A2, A6 = A4 * A2;
    Mat U = As * (A6 * (b[13] * A6 + b[11] * A4 + b[9] * A2) + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * I);
    Mat V = A6 * (b[12] * A6 + b[10] * A4 + b[8] * A2) + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * I;
    Mat R = (V - U).partialPivLu().solve(V + U);
    for (int k = 0; k < s; ++k) R = R * R;
    return R;
}

// phi_1(z) = (e^z - 1)/z, phi_2(z) = (e^z - 1 - z)/z^2; Taylor series near 0.
inline cd phi1(cd z)
{
    if (std::abs(z) < 0.5) {
        cd term = 1.0, sum = 0.0;
        for (int k = 1; k < 40; ++k) {
            sum += term;
            term *= z / double(k + 1);
            if (std::abs(term) < 1e-18 * std::abs(sum)) break;
        }
        return sum;
    }
    return (std::exp(z) - 1.0) / z;
}

inline cd phi2(cd z)
{
    if (std::abs(z) < 0.5) {
        cd term = 0.5, sum = 0.0;
        for (int k = 2; k < 40; ++k) {
            sum += term;
            term *= z / double(k + 1);
            if (std::abs(term) < 1e-18 * std::abs(sum)) break;
        }
        return sum;
    }
    return (std::exp(z) - 1.0 - z) / (z * z);
}

using DMat = Eigen::MatrixXcd;
using DVec = Eigen::VectorXcd;

struct PhiMatrices {
    DMat E;   // exp(h L)
    DMat P1;  // h phi_1(h L)
    DMat P2;  // h phi_2(h L)
};

// Linear propagator for one small dense generator: eigendecomposition when the eigenvector
// matrix is well conditioned, otherwise Pade (with an augmented matrix for the phi-functions).
class ModePropagator {
public:
    ModePropagator() = default;
    explicit ModePropagator(DMat L, double cond_limit = 1e3) : L_(std::move(L))
    {
        const auto n = L_.rows();
        Eigen::ComplexEigenSolver<DMat> es(L_);
        if (es.info() == Eigen::Success) {
            V_ = es.eigenvectors();
            lambda_ = es.eigenvalues();
            Eigen::JacobiSVD<DMat> svd(V_);
            auto sv = svd.singularValues();
            double smin = sv(n - 1);
            cond_ = smin > 0 ? sv(0) / smin : std::numeric_limits<double>::infinity();
            if (cond_ < cond_limit) {
                Vinv_ = V_.partialPivLu().inverse();
                diagonal_ = true;
            }
        }
    }

    bool diagonalized() const { return diagonal_; }
    double condition() const { return cond_; }
    const DMat& generator() const { return L_; }
    const DVec& eigenvalues() const { return lambda_; }
    Eigen::Index size() const { return L_.rows(); }

    DMat exp(double t) const
    {
        const auto n = L_.rows();
        if (t == 0) return DMat::Identity(n, n);
        if (!diagonal_) return expm_pade<DMat>(t * L_);
        DVec e(n);
        for (Eigen::Index k = 0; k < n; ++k) e(k) = std::exp(lambda_(k) * t);
        return V_ * e.asDiagonal() * Vinv_;
    }

    DVec apply(double t, const DVec& x) const
    {
        if (t == 0) return x;
        if (!diagonal_) return expm_pade<DMat>(t * L_) * x;
        DVec c = Vinv_ * x;
        for (Eigen::Index k = 0; k < c.size(); ++k) c(k) *= std::exp(lambda_(k) * t);
        return V_ * c;
    }

    PhiMatrices phi(double h) const
    {
        const auto n = L_.rows();
        if (diagonal_) {
            DVec e(n), p1(n), p2(n);
            for (Eigen::Index k = 0; k < n; ++k) {
                cd z = lambda_(k) * h;
                e(k) = std::exp(z);
                p1(k) = h * phi1(z);
                p2(k) = h * phi2(z);
            }
            return {V_ * e.asDiagonal() * Vinv_, V_ * p1.asDiagonal() * Vinv_, V_ * p2.asDiagonal() * Vinv_};
        }
        DMat big = DMat::Zero(3 * n, 3 * n);
        big.block(0, 0, n, n) = h * L_;
        big.block(0, n, n, n) = DMat::Identity(n, n);
        big.block(n, 2 * n, n, n) = DMat::Identity(n, n);
        DMat ex = expm_pade<DMat>(big);
        return {ex.block(0, 0, n, n), h * ex.block(0, n, n, n), h * ex.block(0, 2 * n, n, n)};
    }

private:
    DMat L_, V_, Vinv_;
    DVec lambda_;
    double cond_ = std::numeric_limits<double>::infinity();
    bool diagonal_ = false;
};

inline CMat mode_exponential(const Wavevector& xi, double t, const ModelParams& p)
{
    if (t < 0) throw Error("mode_exponential: t must be >= 0");
    const int n = mode_size(p.dim);
    if (t == 0) return CMat::Identity(n, n);
    return ModePropagator(DMat(mode_matrix(xi, p).matrix)).exp(t);
}

// ---------------------------------------------------------------- contour paths

enum class PathKind { Sector, LowFreq1, LowFreq2, LowFreq3, HighFreq4, HighFreq5 };

struct ContourSegment {
    enum class Shape { Line, Arc, Ray };
    PathKind kind = PathKind::Sector;
    Shape shape = Shape::Ray;
    int branch = +1;     // +1 upper half (Gamma^+), -1 lower half (Gamma^-)
    cd start = 0;        // Line/Ray start, Arc centre
    cd end = 0;          // Line end
    double radius = 0;   // Arc
    double sweep = 0;    // Arc: s in [0, sweep], lambda = centre + radius e^{i branch s}
    double angle = 0;    // Ray direction, measured from the positive real axis

    // Every branch is parametrized away from the real axis; the lower one runs against the
    // orientation of the full contour.
    double orientation() const { return branch > 0 ? 1.0 : -1.0; }
    bool infinite() const { return shape == Shape::Ray; }
    double extent() const { return shape == Shape::Line ? 1.0 : (shape == Shape::Arc ? sweep : 0.0); }
    cd point(double s) const
    {
        switch (shape) {
        case Shape::Line: return start + (end - start) * s;
        case Shape::Arc: return start + radius * std::exp(cd(0, branch * s));
        case Shape::Ray: return start + s * std::polar(1.0, angle);
        }
        return 0;
    }
    cd tangent(double s) const
    {
        switch (shape) {
        case Shape::Line: return end - start;
        case Shape::Arc: return cd(0, branch) * radius * std::exp(cd(0, branch * s));
        case Shape::Ray: return std::polar(1.0, angle);
        }
        return 0;
    }
};

struct ContourParams {
    double A0 = 0.1;
    double sigma0_path = std::atan(1.0 / 8.0);
    double gamma0 = 1.0;
    double gamma0_tilde = 0;
    double sector_sigma = 0.1;  // sigma of the sector path
    double sector_lambda0 = 1.0;
    double lambda0_tilde = 0;   // vertex of the sector path, 2 lambda0 / sin sigma
    double gamma_inf = 0;
    double gamma_inf_tilde = 0;
    double a0_condition = 0;    // sup over |xi| < A0 of (g0 + g0~ + |xi|^2)/(g0 - |xi|^2)
};

inline double gamma_inf_max(double A0) { return 0.5 * (A0 / 6) * (A0 / 6); }

inline ContourParams make_contour_params(const ModelParams& p, const SectorParams& sector, double A0 = 0.1,
                                         double gamma_inf = 0.0)
{
    if (!(A0 > 0 && A0 < 1)) throw Error("contour: A0 must lie in (0, 1)");
    ContourParams c;
    c.A0 = A0;
    c.gamma0 = calibrate_lambda0(p, c.sigma0_path, A0);
    c.gamma0_tilde = c.gamma0 * (2 * std::sqrt(65.0) + 1) / 8;
    c.sector_sigma = sector.sigma;
    c.sector_lambda0 = sector.lambda0;
    c.lambda0_tilde = 2 * sector.lambda0 / std::sin(sector.sigma);
    c.gamma_inf = gamma_inf > 0 ? gamma_inf : gamma_inf_max(A0);
    if (!(c.gamma_inf > 0 && c.gamma_inf <= gamma_inf_max(A0) * (1 + 1e-12)))
        throw Error("contour: gamma_inf must lie in (0, (A0/6)^2/2]");
    c.gamma_inf_tilde = (c.lambda0_tilde + c.gamma_inf) * std::tan(sector.sigma);
    if (!(c.gamma0 > A0 * A0)) throw Error("contour: gamma0 must exceed A0^2");
    c.a0_condition = (c.gamma0 + c.gamma0_tilde + A0 * A0) / (c.gamma0 - A0 * A0);
    return c;
}

struct PathSet {
    enum class Regime { Any, Low, High };
    std::string name;
    Regime regime = Regime::Any;
    double A0 = 0.1;
    std::vector<ContourSegment> segments;
};

inline PathSet sector_path(const ContourParams& c)
{
    PathSet ps{"sector", PathSet::Regime::Any, c.A0, {}};
    for (int br : {+1, -1}) {
        ContourSegment s;
        s.kind = PathKind::Sector;
        s.shape = ContourSegment::Shape::Ray;
        s.branch = br;
        s.start = c.lambda0_tilde;
        s.angle = br * (pi - c.sector_sigma);
        ps.segments.push_back(s);
    }
    return ps;
}

inline PathSet low_frequency_paths(const ContourParams& c, double xi_mag)
{
    double k2 = xi_mag * xi_mag;
    PathSet ps{"low", PathSet::Regime::Low, c.A0, {}};
    for (int br : {+1, -1}) {
        ContourSegment arc;
        arc.kind = PathKind::LowFreq1;
        arc.shape = ContourSegment::Shape::Arc;
        arc.branch = br;
        arc.start = -k2;
        arc.radius = k2 / 4;
        arc.sweep = pi / 2;
        ContourSegment line;
        line.kind = PathKind::LowFreq2;
        line.shape = ContourSegment::Shape::Line;
        line.branch = br;
        line.start = cd(-k2, br * k2 / 4);
        line.end = cd(-c.gamma0, br * c.gamma0_tilde);
        ContourSegment ray;
        ray.kind = PathKind::LowFreq3;
        ray.shape = ContourSegment::Shape::Ray;
        ray.branch = br;
        ray.start = cd(-c.gamma0, br * c.gamma0_tilde);
        ray.angle = br * (pi - c.sigma0_path);
        ps.segments.insert(ps.segments.end(), {arc, line, ray});
    }
    return ps;
}

inline PathSet high_frequency_paths(const ContourParams& c)
{
    PathSet ps{"high", PathSet::Regime::High, c.A0, {}};
    for (int br : {+1, -1}) {
        ContourSegment v;
        v.kind = PathKind::HighFreq5;
        v.shape = ContourSegment::Shape::Line;
        v.branch = br;
        v.start = cd(-c.gamma_inf, 0);
        v.end = cd(-c.gamma_inf, br * c.gamma_inf_tilde);
        ContourSegment ray;
        ray.kind = PathKind::HighFreq4;
        ray.shape = ContourSegment::Shape::Ray;
        ray.branch = br;
        ray.start = v.end;
        ray.angle = br * (pi - c.sector_sigma);
        ps.segments.insert(ps.segments.end(), {v, ray});
    }
    return ps;
}

// ---------------------------------------------------------------- quadrature

struct QuadratureSpec {
    int nodes_per_segment = 16;          // Gauss-Legendre order per panel
    double truncation_threshold = 1e-15;  // relative size of e^{lambda t} where rays are cut
    double tolerance = 1e-8;              // node-doubling stopping rule
    int grading_levels = 24;              // geometric panels towards each segment start
    int max_subdivision = 64;

    void validate() const
    {
        if (nodes_per_segment < 16) throw Error("quadrature: at least 16 nodes per panel");
        if (!(truncation_threshold > 0 && truncation_threshold <= 1e-14))
            throw Error("quadrature: truncation threshold must lie in (0, 1e-14]");
    }
};

struct GaussLegendre {
    std::vector<double> x, w;  // on [-1, 1]
};

inline GaussLegendre gauss_legendre(int n)
{
    GaussLegendre g;
    g.x.resize(n);
    g.w.resize(n);
    for (int i = 0; i < n; ++i) {
        double x = std::cos(pi * (i + 0.75) / (n + 0.5)), dp = 0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1, p1 = x;
            for (int k = 2; k <= n; ++k) {
                double pk = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
                p0 = p1;
                p1 = pk;
            }
            dp = n * (x * p1 - p0) / (x * x - 1);
            double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        g.x[i] = x;
        g.w[i] = 2 / ((1 - x * x) * dp * dp);
    }
    return g;
}

struct SegmentReport {
    PathKind kind;
    int branch;
    int subdivision = 0;
    double extent = 0;
    double last_change = 0;
    double roundoff_floor = 0;
    bool converged = false;
};

struct ContourResult {
    ModeData value;
    bool converged = true;
    std::vector<SegmentReport> segments;
    std::string diagnostics() const
    {
        std::string s;
        for (auto& r : segments)
            s += "segment kind=" + std::to_string(static_cast<int>(r.kind)) + " branch=" + std::to_string(r.branch) +
                 " subdivision=" + std::to_string(r.subdivision) + " change=" + std::to_string(r.last_change) +
                 (r.converged ? " ok\n" : " NOT CONVERGED\n");
        return s;
    }
};

inline ContourResult contour_semigroup_apply(const PathSet& paths, double t, const ModeData& datum, const Wavevector& xi,
                                             const ModelParams& p, const QuadratureSpec& quad = {})
{
    if (!(t > 0)) throw Error("contour_semigroup_apply: t must be > 0");
    quad.validate();
    double k = std::sqrt(xi_norm2(xi, p.dim));
    if (paths.regime == PathSet::Regime::Low && !(k < 2 * paths.A0 / 3))
        throw Error("contour_semigroup_apply: low-frequency paths need |xi| < 2 A0/3");
    if (paths.regime == PathSet::Regime::High && !(k > paths.A0 / 3))
        throw Error("contour_semigroup_apply: high-frequency paths need |xi| > A0/3");

    const int n = mode_size(p.dim);
    const GaussLegendre gl = gauss_legendre(quad.nodes_per_segment);
    double max_re = -std::numeric_limits<double>::infinity();
    for (auto& s : paths.segments) {
        max_re = std::max(max_re, s.point(0).real());
        if (!s.infinite()) max_re = std::max(max_re, s.point(s.extent()).real());
    }
    const cd scale = 1.0 / (2.0 * pi * I_unit);

    ContourResult result{ModeData::zero(p.dim), true, {}};
    CStack total = CStack::Zero(n);
    for (const auto& seg : paths.segments) {
        double S = seg.extent();
        if (seg.infinite()) {
            double c = std::cos(seg.angle);
            if (!(c < 0)) throw Error("contour: rays must point into the left half-plane");
            S = (std::log(quad.truncation_threshold) + (max_re - seg.start.real()) * t) / (t * c);
            S = std::max(S, 0.0);
        }
        SegmentReport rep{seg.kind, seg.branch};
        rep.extent = S;
        std::vector<double> breaks{0.0};
        for (int j = quad.grading_levels; j >= 0; --j) breaks.push_back(S * std::ldexp(1.0, -j));
        CStack prev = CStack::Zero(n);
        for (int P = 1; P <= quad.max_subdivision; P *= 2) {
            CStack acc = CStack::Zero(n);
            double abs_acc = 0;
            for (std::size_t b = 0; b + 1 < breaks.size(); ++b) {
                double lo = breaks[b], h = (breaks[b + 1] - breaks[b]) / P;
                for (int sub = 0; sub < P; ++sub) {
                    double a = lo + sub * h;
                    for (std::size_t q = 0; q < gl.x.size(); ++q) {
                        double s = a + 0.5 * h * (gl.x[q] + 1);
                        cd lam = seg.point(s);
                        cd weight = 0.5 * h * gl.w[q] * std::exp(lam * t) * seg.tangent(s) * seg.orientation();
                        CStack r = resolve_mode(xi, lam, datum, p).x.stack();
                        acc += weight * r;
                        abs_acc += std::abs(weight) * r.norm();
                    }
                }
            }
            rep.subdivision = P;
            rep.roundoff_floor = 64 * std::numeric_limits<double>::epsilon() * abs_acc;
            if (P > 1) {
                rep.last_change = (acc - prev).norm();
                if (rep.last_change <= std::max(quad.tolerance * acc.norm(), rep.roundoff_floor)) {
                    rep.converged = true;
                    prev = acc;
                    break;
                }
            }
            prev = acc;
        }
        if (!rep.converged) result.converged = false;
        total += prev;
        result.segments.push_back(rep);
    }
    result.value = ModeData::unstack(scale * total, p.dim);
    return result;
}

// ---------------------------------------------------------------- heat flow of d = tr Q

inline SpectralField heat_trace_propagate(const SpectralField& d0, double t)
{
    if (t < 0) throw Error("heat_trace_propagate: t must be >= 0");
    SpectralField out = d0;
    if (t == 0) return out;
    const auto& xis = cached_wavenumbers(d0.grid);
    for (std::size_t i = 0; i < xis.size(); ++i) {
        double f = std::exp(-norm2(xis[i]) * t);
        for (int c = 0; c < d0.components; ++c) out.at(c, i) *= f;
    }
    return out;
}

inline double wraparound_time(double L) { return 0.25 * (L / 2) * (L / 2); }

// ---------------------------------------------------------------- rates and fits

enum class Regime { LowFrequency, HighFrequency };

struct Rate {
    double exponent = 0;
    bool q_not_two_caveat = false;  // time-derivative / Q-gradient bounds with q != 2
    bool exponential = false;       // high-frequency part decays like e^{-gamma t}
};

inline Rate theoretical_rate(double p, double q, int j, int k, int N, Regime regime = Regime::LowFrequency)
{
    if (!(q >= 1) || !(p >= q) || j < 0 || k < 0 || N < 1) throw Error("theoretical_rate: invalid exponents");
    if (regime == Regime::LowFrequency && !(q <= 2 && p >= 2))
        throw Error("theoretical_rate: low-frequency rates need 1 <= q <= 2 <= p");
    double inv_p = std::isinf(p) ? 0.0 : 1.0 / p;
    Rate r;
    r.exponent = 0.5 * N * (1.0 / q - inv_p) + 0.5 * j + k;
    r.q_not_two_caveat = (q != 2) && k > 0;
    r.exponential = regime == Regime::HighFrequency;
    return r;
}

struct DecayReport {
    std::vector<std::pair<double, double>> samples;
    double exponent = 0;   // fitted slope of log norm against log t
    double intercept = 0;
    double window_lo = 0, window_hi = 0;
    std::size_t used = 0;
    double theoretical = std::numeric_limits<double>::quiet_NaN();  // decay rate, positive
    double relative_deviation = std::numeric_limits<double>::quiet_NaN();
    bool log_corrected = false;
    double log_coefficient = 0;
};

inline DecayReport decay_fit(std::vector<std::pair<double, double>> samples, double lo, double hi,
                             std::optional<double> theoretical = {}, bool log_correction = false)
{
    DecayReport rep;
    rep.samples = samples;
    rep.window_lo = lo;
    rep.window_hi = hi;
    std::vector<double> X, X2, Y;
    double tmin = std::numeric_limits<double>::infinity(), tmax = 0;
    for (auto [t, v] : samples) {
        if (t < lo || t > hi) continue;
        if (!(t > 0) || !(v > 0)) throw Error("decay_fit: non-positive sample in the fit window");
        X.push_back(std::log(t));
        X2.push_back(std::log(1 + std::abs(std::log(t))));
        Y.push_back(std::log(v));
        tmin = std::min(tmin, t);
        tmax = std::max(tmax, t);
    }
    rep.used = X.size();
    if (rep.used < 8) throw Error("decay_fit: fewer than 8 samples in the fit window");
    if (tmax < 10 * tmin) throw Error("decay_fit: fit window spans less than one decade");
    if (!log_correction) {
        Eigen::MatrixXd A(X.size(), 2);
        Eigen::VectorXd y(Y.size());
        for (std::size_t i = 0; i < X.size(); ++i) {
            A(i, 0) = 1;
            A(i, 1) = X[i];
            y(i) = Y[i];
        }
        Eigen::VectorXd c = A.colPivHouseholderQr().solve(y);
        rep.intercept = c(0);
        rep.exponent = c(1);
    } else {
        Eigen::MatrixXd A(X.size(), 3);
        Eigen::VectorXd y(Y.size());
        for (std::size_t i = 0; i < X.size(); ++i) {
            A(i, 0) = 1;
            A(i, 1) = X[i];
            A(i, 2) = X2[i];
            y(i) = Y[i];
        }
        Eigen::VectorXd c = A.colPivHouseholderQr().solve(y);
        rep.intercept = c(0);
        rep.exponent = c(1);
        rep.log_coefficient = c(2);
        rep.log_corrected = true;
    }
    if (theoretical) {
        rep.theoretical = *theoretical;
        double measured = -rep.exponent;
        rep.relative_deviation = *theoretical != 0 ? std::abs(measured - *theoretical) / std::abs(*theoretical)
                                                   : std::abs(measured);
    }
    return rep;
}

// ---------------------------------------------------------------- frequency cutoffs

// 1 on [0, 1/3], 0 on [2/3, inf), smooth bump profile in between.
inline double cutoff_profile(double r)
{
    if (r <= 1.0 / 3) return 1.0;
    if (r >= 2.0 / 3) return 0.0;
    double s = 3 * r - 1;
    return std::exp(1 - 1 / (1 - s * s));
}

// Splits a spectral field into phi_0(xi/A0) and (1 - phi_0) parts.
inline std::pair<SpectralField, SpectralField> frequency_split(const SpectralField& f, double A0)
{
    SpectralField lo = f, hi = f;
    const auto& xis = cached_wavenumbers(f.grid);
    for (std::size_t i = 0; i < xis.size(); ++i) {
        double w = cutoff_profile(std::sqrt(norm2(xis[i])) / A0);
        for (int c = 0; c < f.components; ++c) {
            lo.at(c, i) *= w;
            hi.at(c, i) *= 1 - w;
        }
    }
    return {lo, hi};
}

struct HighFrequencyDecay {
    double gamma_inf = 0;
    double constant = 0;  // max over sampled (xi, t) of ||exp(tL)|| e^{gamma_inf t}
};

inline HighFrequencyDecay high_frequency_decay_sweep(const ModelParams& p, double A0, double gamma_inf, double xi_max,
                                                     double t_max, int xi_points = 12, int t_points = 12)
{
    HighFrequencyDecay out{gamma_inf, 0.0};
    for (double k : log_space(A0, xi_max, xi_points)) {
        Wavevector w{k, 0, 0};
        ModePropagator prop(DMat(mode_matrix(w, p).matrix));
        for (double t : log_space(1e-2, t_max, t_points)) {
            Eigen::JacobiSVD<DMat> svd(prop.exp(t));
            out.constant = std::max(out.constant, svd.singularValues()(0) * std::exp(gamma_inf * t));
        }
    }
    return out;
}

} // namespace qtlab
