#pragma once

// Periodic box [0,L)^N, FFT contract, spectral calculus, Lq quadrature.

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstring>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <fftw3.h>

#include "qtlab/parallel.hpp"

namespace qtlab {

using cd = std::complex<double>;
inline constexpr double pi = std::numbers::pi;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct GridSpec {
    int dim = 2;
    int points = 64;
    double length = 2 * pi;

    void validate() const
    {
        if (dim < 2 || dim > 3) throw Error("grid: dim must be 2 or 3");
        if (points < 8 || (points & (points - 1)) != 0)
            throw Error("grid: points per dimension must be a power of two >= 8");
        if (!(length > 0) || !std::isfinite(length)) throw Error("grid: box length must be positive");
    }
    std::size_t size() const
    {
        std::size_t n = 1;
        for (int d = 0; d < dim; ++d) n *= static_cast<std::size_t>(points);
        return n;
    }
    double spacing() const { return length / points; }
    double cell_volume() const { return std::pow(spacing(), dim); }
    double volume() const { return std::pow(length, dim); }
    // signed integer wavenumber for an axis index in [0, M)
    int signed_index(int k) const { return k < points / 2 ? k : k - points; }
    double wavenumber(int k) const { return 2 * pi * signed_index(k) / length; }
    // row-major: the last axis runs fastest
    std::array<int, 3> unravel(std::size_t idx) const
    {
        std::array<int, 3> out{0, 0, 0};
        for (int d = dim - 1; d >= 0; --d) {
            out[d] = static_cast<int>(idx % points);
            idx /= points;
        }
        return out;
    }
    std::size_t ravel(const std::array<int, 3>& k) const
    {
        std::size_t idx = 0;
        for (int d = 0; d < dim; ++d) idx = idx * points + static_cast<std::size_t>(((k[d] % points) + points) % points);
        return idx;
    }
    bool operator==(const GridSpec&) const = default;
};

template <class T>
struct FieldData {
    GridSpec grid;
    int components = 1;
    std::vector<T> data;

    FieldData() = default;
    FieldData(const GridSpec& g, int c) : grid(g), components(c), data(static_cast<std::size_t>(c) * g.size(), T{})
    {
        if (c < 1) throw Error("field: component count must be >= 1");
    }
    std::size_t points() const { return grid.size(); }
    std::span<T> component(int c) { return {data.data() + static_cast<std::size_t>(c) * points(), points()}; }
    std::span<const T> component(int c) const { return {data.data() + static_cast<std::size_t>(c) * points(), points()}; }
    T& at(int c, std::size_t i) { return data[static_cast<std::size_t>(c) * points() + i]; }
    const T& at(int c, std::size_t i) const { return data[static_cast<std::size_t>(c) * points() + i]; }
    void check_shape() const
    {
        if (data.size() != static_cast<std::size_t>(components) * grid.size())
            throw Error("field: data size does not match grid and component count");
    }
};

using PhysicalField = FieldData<double>;
using SpectralField = FieldData<cd>;

inline void require_same_grid(const GridSpec& a, const GridSpec& b)
{
    if (!(a == b)) throw Error("field: grids differ");
}

// ---------------------------------------------------------------- wavenumbers

using Wavevector = std::array<double, 3>;

inline std::vector<Wavevector> grid_wavenumbers(const GridSpec& grid)
{
    grid.validate();
    std::vector<Wavevector> xi(grid.size());
    for (std::size_t i = 0; i < xi.size(); ++i) {
        auto k = grid.unravel(i);
        Wavevector w{0, 0, 0};
        for (int d = 0; d < grid.dim; ++d) w[d] = grid.wavenumber(k[d]);
        xi[i] = w;
    }
    return xi;
}

// Shared per-grid table; built once per (dim, M, L).
inline const std::vector<Wavevector>& cached_wavenumbers(const GridSpec& grid)
{
    static std::mutex mutex;
    static std::map<std::tuple<int, int, double>, std::unique_ptr<std::vector<Wavevector>>> cache;
    std::lock_guard lock(mutex);
    auto key = std::make_tuple(grid.dim, grid.points, grid.length);
    auto& slot = cache[key];
    if (!slot) slot = std::make_unique<std::vector<Wavevector>>(grid_wavenumbers(grid));
    return *slot;
}

inline double norm2(const Wavevector& w) { return w[0] * w[0] + w[1] * w[1] + w[2] * w[2]; }

// true if any axis index sits on the Nyquist plane k = -M/2
inline bool on_nyquist(const GridSpec& grid, std::size_t idx)
{
    auto k = grid.unravel(idx);
    for (int d = 0; d < grid.dim; ++d)
        if (k[d] == grid.points / 2) return true;
    return false;
}

// ---------------------------------------------------------------- FFT

namespace detail {

struct FftPlans {
    fftw_plan forward = nullptr;
    fftw_plan backward = nullptr;
};

inline const FftPlans& plans_for(const GridSpec& grid)
{
    static std::mutex mutex;
    static std::map<std::pair<int, int>, FftPlans> cache;
    std::lock_guard lock(mutex);
    auto key = std::make_pair(grid.dim, grid.points);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    std::vector<int> n(grid.dim, grid.points);
    std::size_t sz = grid.size();
    auto* a = fftw_alloc_complex(sz);
    auto* b = fftw_alloc_complex(sz);
    FftPlans p;
    unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    p.forward = fftw_plan_dft(grid.dim, n.data(), a, b, FFTW_FORWARD, flags);
    p.backward = fftw_plan_dft(grid.dim, n.data(), a, b, FFTW_BACKWARD, flags);
    fftw_free(a);
    fftw_free(b);
    if (!p.forward || !p.backward) throw Error("fft: plan creation failed");
    return cache.emplace(key, p).first->second;
}

inline void execute(fftw_plan plan, const cd* in, cd* out)
{
    // FFTW does not modify the input of an out-of-place complex transform
    fftw_execute_dft(plan, reinterpret_cast<fftw_complex*>(const_cast<cd*>(in)), reinterpret_cast<fftw_complex*>(out));
}

} // namespace detail

inline SpectralField forward(const PhysicalField& f)
{
    f.check_shape();
    f.grid.validate();
    const auto& plans = detail::plans_for(f.grid);
    SpectralField out(f.grid, f.components);
    std::vector<cd> buf(f.points());
    for (int c = 0; c < f.components; ++c) {
        auto src = f.component(c);
        for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = src[i];
        detail::execute(plans.forward, buf.data(), out.component(c).data());
    }
    return out;
}

inline SpectralField inverse_complex(const SpectralField& f)
{
    f.check_shape();
    const auto& plans = detail::plans_for(f.grid);
    SpectralField out(f.grid, f.components);
    double scale = 1.0 / static_cast<double>(f.points());
    for (int c = 0; c < f.components; ++c) {
        auto dst = out.component(c);
        detail::execute(plans.backward, f.component(c).data(), dst.data());
        for (auto& v : dst) v *= scale;
    }
    return out;
}

// Inverse transform keeping the real part; inputs are expected to be Hermitian.
inline PhysicalField inverse(const SpectralField& f)
{
    f.check_shape();
    const auto& plans = detail::plans_for(f.grid);
    PhysicalField out(f.grid, f.components);
    std::vector<cd> buf(f.points());
    double scale = 1.0 / static_cast<double>(f.points());
    for (int c = 0; c < f.components; ++c) {
        detail::execute(plans.backward, f.component(c).data(), buf.data());
        auto dst = out.component(c);
        for (std::size_t i = 0; i < buf.size(); ++i) dst[i] = buf[i].real() * scale;
    }
    return out;
}

// ---------------------------------------------------------------- spectral calculus

using MultiIndex = std::array<int, 3>;

inline int order_of(const MultiIndex& a) { return a[0] + a[1] + a[2]; }

// Multiplies each mode by prod (i xi_j)^{alpha_j}. For odd orders along an axis the
// Nyquist plane of that axis is zeroed, otherwise real fields would pick up an
// imaginary part there.
inline SpectralField spectral_derivative(const SpectralField& f, const MultiIndex& alpha)
{
    if (alpha[0] < 0 || alpha[1] < 0 || alpha[2] < 0 || order_of(alpha) > 3)
        throw Error("spectral_derivative: multi-index order must be in 0..3");
    for (int d = f.grid.dim; d < 3; ++d)
        if (alpha[d] != 0) throw Error("spectral_derivative: multi-index exceeds dimension");
    SpectralField out = f;
    if (order_of(alpha) == 0) return out;
    const int M = f.grid.points;
    std::size_t n = f.points();
    for (std::size_t i = 0; i < n; ++i) {
        auto k = f.grid.unravel(i);
        cd mult = 1.0;
        for (int d = 0; d < f.grid.dim; ++d) {
            if (alpha[d] == 0) continue;
            if (k[d] == M / 2 && (alpha[d] % 2) == 1) {
                mult = 0.0;
                break;
            }
            cd ik(0.0, f.grid.wavenumber(k[d]));
            for (int p = 0; p < alpha[d]; ++p) mult *= ik;
        }
        for (int c = 0; c < f.components; ++c) out.at(c, i) *= mult;
    }
    return out;
}

inline MultiIndex axis_index(int axis, int order = 1)
{
    MultiIndex a{0, 0, 0};
    a[axis] = order;
    return a;
}

inline SpectralField laplacian(const SpectralField& f)
{
    SpectralField out = f;
    const auto& xi = cached_wavenumbers(f.grid);
    for (std::size_t i = 0; i < xi.size(); ++i) {
        double k2 = norm2(xi[i]);
        for (int c = 0; c < f.components; ++c) out.at(c, i) *= -k2;
    }
    return out;
}

// Extract a subset of components as a new field.
template <class T>
FieldData<T> slice_components(const FieldData<T>& f, int first, int count)
{
    FieldData<T> out(f.grid, count);
    for (int c = 0; c < count; ++c) {
        auto src = f.component(first + c);
        std::copy(src.begin(), src.end(), out.component(c).begin());
    }
    return out;
}

inline bool dealias_keep(const GridSpec& grid, std::size_t idx)
{
    auto k = grid.unravel(idx);
    for (int d = 0; d < grid.dim; ++d)
        if (3 * std::abs(grid.signed_index(k[d])) > grid.points) return false;
    return true;
}

inline SpectralField dealias(SpectralField f)
{
    std::size_t n = f.points();
    for (std::size_t i = 0; i < n; ++i) {
        if (dealias_keep(f.grid, i)) continue;
        for (int c = 0; c < f.components; ++c) f.at(c, i) = 0.0;
    }
    return f;
}

inline SpectralField zero_nyquist(SpectralField f)
{
    std::size_t n = f.points();
    for (std::size_t i = 0; i < n; ++i) {
        if (!on_nyquist(f.grid, i)) continue;
        for (int c = 0; c < f.components; ++c) f.at(c, i) = 0.0;
    }
    return f;
}

inline SpectralField leray_project(SpectralField v)
{
    const int N = v.grid.dim;
    if (v.components != N) throw Error("leray_project: vector field must have N components");
    const auto& xi = cached_wavenumbers(v.grid);
    for (std::size_t i = 0; i < xi.size(); ++i) {
        double k2 = norm2(xi[i]);
        if (k2 == 0) continue;
        cd dot = 0;
        for (int d = 0; d < N; ++d) dot += xi[i][d] * v.at(d, i);
        for (int d = 0; d < N; ++d) v.at(d, i) -= xi[i][d] * dot / k2;
    }
    return v;
}

// spectral divergence of a vector field (scalar output)
inline SpectralField divergence(const SpectralField& v)
{
    const int N = v.grid.dim;
    if (v.components != N) throw Error("divergence: vector field must have N components");
    SpectralField out(v.grid, 1);
    for (int d = 0; d < N; ++d) {
        auto dd = spectral_derivative(slice_components(v, d, 1), axis_index(d));
        for (std::size_t i = 0; i < out.points(); ++i) out.at(0, i) += dd.at(0, i);
    }
    return out;
}

// ---------------------------------------------------------------- norms

inline double lq_norm_pointwise(std::span<const double> magnitude, double q, double cell)
{
    if (!(q >= 1)) throw Error("norm: exponent q must be >= 1");
    if (std::isinf(q)) {
        double m = 0;
        for (double v : magnitude) m = std::max(m, std::abs(v));
        return m;
    }
    double s = 0;
    if (q == 2) {
        for (double v : magnitude) s += v * v;
        return std::sqrt(cell * s);
    }
    for (double v : magnitude) s += std::pow(std::abs(v), q);
    return std::pow(cell * s, 1.0 / q);
}

// Lq norm of the pointwise Euclidean magnitude over components.
inline double lq_norm(const PhysicalField& f, double q)
{
    f.check_shape();
    std::vector<double> mag(f.points(), 0.0);
    for (int c = 0; c < f.components; ++c) {
        auto comp = f.component(c);
        for (std::size_t i = 0; i < mag.size(); ++i) mag[i] += comp[i] * comp[i];
    }
    for (auto& m : mag) m = std::sqrt(m);
    return lq_norm_pointwise(mag, q, f.grid.cell_volume());
}

// Multi-indices of order j in N dimensions with their multinomial weights j!/alpha!,
// so that sum over ordered index tuples of |d_{i1..ij} f|^2 = sum_alpha w_alpha |d^alpha f|^2.
inline std::vector<std::pair<MultiIndex, double>> multi_indices(int N, int j)
{
    std::vector<std::pair<MultiIndex, double>> out;
    auto fact = [](int n) { double r = 1; for (int i = 2; i <= n; ++i) r *= i; return r; };
    for (int a = 0; a <= j; ++a)
        for (int b = 0; b <= j - a; ++b) {
            MultiIndex m{a, b, j - a - b};
            if (N == 2) {
                if (b != j - a) continue;
                m[2] = 0;
            }
            out.push_back({m, fact(j) / (fact(m[0]) * fact(m[1]) * fact(m[2]))});
        }
    return out;
}

// Pointwise |grad^j f| for j = 0..max_order, from the spectral representation.
inline std::vector<std::vector<double>> jet_magnitudes(const SpectralField& fh, int max_order)
{
    if (max_order < 0 || max_order > 3) throw Error("norm: derivative order must be in 0..3");
    std::vector<std::vector<double>> out;
    for (int j = 0; j <= max_order; ++j) {
        std::vector<double> acc(fh.points(), 0.0);
        for (auto& [alpha, w] : multi_indices(fh.grid.dim, j)) {
            PhysicalField d = inverse(spectral_derivative(fh, alpha));
            for (int c = 0; c < d.components; ++c) {
                auto comp = d.component(c);
                for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * comp[i] * comp[i];
            }
        }
        for (auto& v : acc) v = std::sqrt(v);
        out.push_back(std::move(acc));
    }
    return out;
}

// table[j][k] = || |grad^j f| ||_{L_{q_k}}
inline std::vector<std::vector<double>> jet_norms(const SpectralField& fh, int max_order, std::span<const double> qs)
{
    auto jets = jet_magnitudes(fh, max_order);
    std::vector<std::vector<double>> table(jets.size());
    for (std::size_t j = 0; j < jets.size(); ++j)
        for (double q : qs) table[j].push_back(lq_norm_pointwise(jets[j], q, fh.grid.cell_volume()));
    return table;
}

// W^m_q norm: sum over j <= m of || |grad^j f| ||_q.
inline double field_norm(const PhysicalField& f, double q, int sobolev_order = 0)
{
    if (sobolev_order == 0) return lq_norm(f, q);
    std::array<double, 1> qs{q};
    auto table = jet_norms(forward(f), sobolev_order, qs);
    double s = 0;
    for (auto& row : table) s += row[0];
    return s;
}

// Parseval: || |grad^j f| ||_2 directly from the coefficients.
inline double l2_jet_norm_spectral(const SpectralField& fh, int j)
{
    const auto& xi = cached_wavenumbers(fh.grid);
    double s = 0;
    for (std::size_t i = 0; i < xi.size(); ++i) {
        double w = std::pow(norm2(xi[i]), j);
        if (j > 0 && w == 0) continue;
        for (int c = 0; c < fh.components; ++c) s += w * std::norm(fh.at(c, i));
    }
    double M = static_cast<double>(fh.points());
    return std::sqrt(fh.grid.volume() * s) / M;
}

// grid point coordinates x_d = k_d * dx
inline std::array<double, 3> coordinates(const GridSpec& grid, std::size_t idx)
{
    auto k = grid.unravel(idx);
    std::array<double, 3> x{0, 0, 0};
    for (int d = 0; d < grid.dim; ++d) x[d] = k[d] * grid.spacing();
    return x;
}

inline double max_abs(std::span<const double> v)
{
    double m = 0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

inline double max_abs(const PhysicalField& f) { return max_abs(std::span<const double>(f.data)); }

inline bool all_finite(std::span<const double> v)
{
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

} // namespace qtlab
