#pragma once

// Landau-de Gennes bulk energy, molecular field, the Beris-Edwards tensors and the
// split of the momentum/Q right-hand sides into linear part and nonlinear terms f, g.

#include <Eigen/Dense>

#include "qtlab/grid.hpp"

namespace qtlab {

struct ModelParams {
    int dim = 2;
    double a = 1.0;
    double b = 0.5;
    double c = 1.0;
    double xi = 0.3;  // tumbling parameter
    bool literal_bulk_sign = false;

    double beta() const { return 2.0 * xi / dim; }
    void validate() const
    {
        if (dim < 2 || dim > 3) throw Error("model: dim must be 2 or 3");
        if (!(a > 0)) throw Error("model: a must be > 0");
        if (!(c > 0)) throw Error("model: c must be > 0");
        if (!std::isfinite(b) || !std::isfinite(xi)) throw Error("model: b and xi must be finite");
    }
};

// Vector (N components) and tensor (N*N components, row-major a*N+b) fields.
struct VectorField : PhysicalField {
    VectorField() = default;
    explicit VectorField(const GridSpec& g) : PhysicalField(g, g.dim) {}
    explicit VectorField(PhysicalField f) : PhysicalField(std::move(f))
    {
        if (components != grid.dim) throw Error("vector field: expected N components");
    }
};

struct TensorField : PhysicalField {
    TensorField() = default;
    explicit TensorField(const GridSpec& g) : PhysicalField(g, g.dim * g.dim) {}
    explicit TensorField(PhysicalField f) : PhysicalField(std::move(f))
    {
        if (components != grid.dim * grid.dim) throw Error("tensor field: expected N*N components");
    }
};

using VelocityField = VectorField;
using QTensorField = TensorField;

// N <= 3 matrices are held in padded 3x3 storage; unused rows/columns stay zero.
using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;

inline Mat3 identity_n(int N)
{
    Mat3 I = Mat3::Zero();
    for (int d = 0; d < N; ++d) I(d, d) = 1.0;
    return I;
}

inline Mat3 tensor_at(const PhysicalField& T, std::size_t i)
{
    const int N = T.grid.dim;
    Mat3 m = Mat3::Zero();
    for (int r = 0; r < N; ++r)
        for (int s = 0; s < N; ++s) m(r, s) = T.at(r * N + s, i);
    return m;
}

inline void store_tensor(PhysicalField& T, std::size_t i, const Mat3& m)
{
    const int N = T.grid.dim;
    for (int r = 0; r < N; ++r)
        for (int s = 0; s < N; ++s) T.at(r * N + s, i) = m(r, s);
}

inline Vec3 vector_at(const PhysicalField& v, std::size_t i)
{
    Vec3 x = Vec3::Zero();
    for (int d = 0; d < v.grid.dim; ++d) x(d) = v.at(d, i);
    return x;
}

inline void store_vector(PhysicalField& v, std::size_t i, const Vec3& x)
{
    for (int d = 0; d < v.grid.dim; ++d) v.at(d, i) = x(d);
}

template <class Fn>
TensorField map_tensor(const GridSpec& g, Fn&& fn)
{
    TensorField out(g);
    for (std::size_t i = 0; i < g.size(); ++i) store_tensor(out, i, fn(i));
    return out;
}

// ---------------------------------------------------------------- pointwise algebra

inline Mat3 traceless(const Mat3& A, int N) { return A - (A.trace() / N) * identity_n(N); }

inline double frob(const Mat3& A, const Mat3& B) { return (A.array() * B.array()).sum(); }

inline double bulk_density(const Mat3& Q, const ModelParams& p)
{
    Mat3 Q2 = Q * Q;
    double t2 = Q2.trace(), t3 = (Q2 * Q).trace();
    return 0.5 * p.a * t2 - p.b / 3.0 * t3 + 0.25 * p.c * t2 * t2;
}

// matrix derivative of F before the traceless projection
inline Mat3 bulk_gradient(const Mat3& Q, const ModelParams& p)
{
    Mat3 Q2 = Q * Q;
    return p.a * Q - p.b * Q2 + p.c * Q2.trace() * Q;
}

// Nonlinear bulk contribution to the Q equation (enters with a minus sign after the
// traceless projection). The F-consistent variant keeps the sign of -b/3 tr Q^3.
inline Mat3 bulk_nonlinear(const Mat3& Q, const ModelParams& p)
{
    Mat3 Q2 = Q * Q;
    double sb = p.literal_bulk_sign ? p.b : -p.b;
    return sb * Q2 + p.c * Q2.trace() * Q;
}

inline double contraction_Q_gradu(const Mat3& Q, const Mat3& G)
{
    // sum_{ab} Q_ab d_a u_b with G_jk = d_k u_j
    return (Q * G).trace();
}

inline Mat3 S_point(const Mat3& G, const Mat3& Q, const ModelParams& p)
{
    const int N = p.dim;
    Mat3 D = 0.5 * (G + G.transpose()), W = 0.5 * (G - G.transpose());
    Mat3 Qs = Q + identity_n(N) / N;
    return (p.xi * D + W) * Qs + Qs * (p.xi * D - W) - 2.0 * p.xi * Qs * contraction_Q_gradu(Q, G);
}

// (grad Q (.) grad Q)_ij = sum_ab d_i Q_ab d_j Q_ab
inline Mat3 gradQ_gram(const std::array<Mat3, 3>& dQ, int N)
{
    Mat3 out = Mat3::Zero();
    for (int i = 0; i < N; ++i)
        for (int j = i; j < N; ++j) out(i, j) = out(j, i) = frob(dQ[i], dQ[j]);
    return out;
}

inline Mat3 tau_point(const Mat3& Q, const Mat3& H, const std::array<Mat3, 3>& dQ, const ModelParams& p)
{
    const int N = p.dim;
    Mat3 Qs = Q + identity_n(N) / N;
    return 2.0 * p.xi * frob(H, Q) * Qs - p.xi * (H * Qs + Qs * H) - gradQ_gram(dQ, N);
}

inline Mat3 sigma_point(const Mat3& Q, const Mat3& H) { return Q * H - H * Q; }

// ---------------------------------------------------------------- field kinematics

// Physical-space ingredients of the nonlinear terms, all computed spectrally.
struct Kinematics {
    VectorField u;
    TensorField grad_u;  // (j,k) entry = d_k u_j
    TensorField Q;
    std::vector<TensorField> dQ;  // dQ[i] = d_i Q
    TensorField lap_Q;
};

inline Kinematics kinematics(const SpectralField& uh, const SpectralField& Qh)
{
    const GridSpec& g = uh.grid;
    const int N = g.dim;
    if (uh.components != N || Qh.components != N * N) throw Error("kinematics: expected (vector, tensor) spectral fields");
    require_same_grid(uh.grid, Qh.grid);
    Kinematics k;
    k.u = VectorField(inverse(uh));
    k.Q = TensorField(inverse(Qh));
    k.grad_u = TensorField(g);
    for (int col = 0; col < N; ++col) {
        PhysicalField d = inverse(spectral_derivative(uh, axis_index(col)));
        for (int row = 0; row < N; ++row) {
            auto src = d.component(row);
            std::copy(src.begin(), src.end(), k.grad_u.component(row * N + col).begin());
        }
    }
    for (int i = 0; i < N; ++i) k.dQ.emplace_back(inverse(spectral_derivative(Qh, axis_index(i))));
    k.lap_Q = TensorField(inverse(laplacian(Qh)));
    return k;
}

inline std::array<Mat3, 3> dQ_at(const Kinematics& k, std::size_t i)
{
    std::array<Mat3, 3> out{Mat3::Zero(), Mat3::Zero(), Mat3::Zero()};
    for (std::size_t d = 0; d < k.dQ.size(); ++d) out[d] = tensor_at(k.dQ[d], i);
    return out;
}

// (Div A)_j = sum_k d_k A_jk, spectral input and output
inline SpectralField tensor_divergence(const SpectralField& Ah)
{
    const int N = Ah.grid.dim;
    if (Ah.components != N * N) throw Error("tensor_divergence: expected N*N components");
    SpectralField out(Ah.grid, N);
    for (int k = 0; k < N; ++k) {
        SpectralField col(Ah.grid, N);
        for (int j = 0; j < N; ++j) {
            auto src = Ah.component(j * N + k);
            std::copy(src.begin(), src.end(), col.component(j).begin());
        }
        auto d = spectral_derivative(col, axis_index(k));
        for (std::size_t n = 0; n < out.data.size(); ++n) out.data[n] += d.data[n];
    }
    return out;
}

inline SpectralField to_spectral(const PhysicalField& f, bool truncate)
{
    auto h = forward(f);
    return truncate ? dealias(std::move(h)) : h;
}

// ---------------------------------------------------------------- spec-level field operations

inline std::pair<TensorField, TensorField> strain_vorticity(const VectorField& u)
{
    Kinematics k = kinematics(forward(u), SpectralField(u.grid, u.grid.dim * u.grid.dim));
    TensorField D(u.grid), W(u.grid);
    for (std::size_t i = 0; i < u.points(); ++i) {
        Mat3 G = tensor_at(k.grad_u, i);
        store_tensor(D, i, 0.5 * (G + G.transpose()));
        store_tensor(W, i, 0.5 * (G - G.transpose()));
    }
    return {D, W};
}

inline TensorField traceless_project(const TensorField& A)
{
    const int N = A.grid.dim;
    return map_tensor(A.grid, [&](std::size_t i) { return traceless(tensor_at(A, i), N); });
}

struct BulkEnergy {
    PhysicalField density;  // F(Q) per point
    double total = 0;       // box integral of |grad Q|^2/2 + F(Q)
};

inline BulkEnergy bulk_energy(const TensorField& Q, const ModelParams& p)
{
    BulkEnergy e{PhysicalField(Q.grid, 1), 0.0};
    auto Qh = forward(Q);
    std::vector<PhysicalField> dQ;
    for (int i = 0; i < Q.grid.dim; ++i) dQ.push_back(inverse(spectral_derivative(Qh, axis_index(i))));
    double s = 0;
    for (std::size_t i = 0; i < Q.points(); ++i) {
        double F = bulk_density(tensor_at(Q, i), p);
        e.density.at(0, i) = F;
        double g2 = 0;
        for (auto& d : dQ)
            for (int c = 0; c < d.components; ++c) g2 += d.at(c, i) * d.at(c, i);
        s += 0.5 * g2 + F;
    }
    e.total = s * Q.grid.cell_volume();
    return e;
}

inline TensorField bulk_derivative(const TensorField& Q, const ModelParams& p)
{
    return map_tensor(Q.grid, [&](std::size_t i) { return bulk_gradient(tensor_at(Q, i), p); });
}

inline TensorField molecular_field(const TensorField& Q, const ModelParams& p)
{
    TensorField lap(inverse(laplacian(forward(Q))));
    const int N = Q.grid.dim;
    return map_tensor(Q.grid, [&](std::size_t i) {
        return Mat3(tensor_at(lap, i) - traceless(bulk_gradient(tensor_at(Q, i), p), N));
    });
}

inline TensorField tensor_S(const VectorField& u, const TensorField& Q, const ModelParams& p)
{
    Kinematics k = kinematics(forward(u), forward(Q));
    return map_tensor(u.grid, [&](std::size_t i) { return S_point(tensor_at(k.grad_u, i), tensor_at(k.Q, i), p); });
}

inline TensorField stress_tau(const TensorField& Q, const TensorField& H, const ModelParams& p)
{
    Kinematics k = kinematics(SpectralField(Q.grid, Q.grid.dim), forward(Q));
    return map_tensor(Q.grid, [&](std::size_t i) { return tau_point(tensor_at(Q, i), tensor_at(H, i), dQ_at(k, i), p); });
}

inline TensorField stress_sigma(const TensorField& Q, const TensorField& H)
{
    return map_tensor(Q.grid, [&](std::size_t i) { return sigma_point(tensor_at(Q, i), tensor_at(H, i)); });
}

// ---------------------------------------------------------------- split of the right-hand side

struct NonlinearOptions {
    bool dealias = true;
    // Keep the linear pieces that the split leaves inside f and g (see README):
    // beta*a*Div L[Q] in f and -beta*D(u) in g. Dropping them leaves the purely
    // quadratic-and-higher part used by the product-bound diagnostic.
    bool linear_defects = true;
};

struct FieldPair {
    SpectralField u;  // N components
    SpectralField Q;  // N*N components
};

// Spectral nonlinear terms (f unprojected, g) from spectral (u, Q).
inline FieldPair nonlinear_terms(const SpectralField& uh_in, const SpectralField& Qh_in, const ModelParams& p,
                                 const NonlinearOptions& opt = {})
{
    const GridSpec& g = uh_in.grid;
    const int N = g.dim;
    if (p.dim != N) throw Error("nonlinear_terms: model dim differs from grid dim");
    SpectralField uh = opt.dealias ? dealias(uh_in) : uh_in;
    SpectralField Qh = opt.dealias ? dealias(Qh_in) : Qh_in;
    Kinematics k = kinematics(uh, Qh);
    const double beta = p.beta(), xi = p.xi;
    const Mat3 I = identity_n(N);

    TensorField div_part(g), gterm(g);
    VectorField adv(g);
    parallel_for(g.size(), [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            Mat3 Q = tensor_at(k.Q, i), G = tensor_at(k.grad_u, i), lapQ = tensor_at(k.lap_Q, i);
            Vec3 u = vector_at(k.u, i);
            auto dQ = dQ_at(k, i);
            Mat3 dF = bulk_gradient(Q, p);
            Mat3 H = lapQ - traceless(dF, N);
            Mat3 Qs = Q + I / N;

            Mat3 T = 2.0 * xi * frob(H, Q) * Qs - (xi + 1.0) * H * Q + (1.0 - xi) * Q * H - gradQ_gram(dQ, N);
            T += beta * traceless(opt.linear_defects ? dF : Mat3(dF - p.a * Q), N);
            store_tensor(div_part, i, T);
            store_vector(adv, i, -(G * u));

            Mat3 D = 0.5 * (G + G.transpose()), W = 0.5 * (G - G.transpose());
            Mat3 gq = Mat3::Zero();
            for (int d = 0; d < N; ++d) gq -= u(d) * dQ[d];
            gq += xi * (D * Q + Q * D) + W * Q - Q * W - 2.0 * xi * Qs * contraction_Q_gradu(Q, G);
            gq -= traceless(bulk_nonlinear(Q, p), N);
            if (opt.linear_defects) gq -= beta * D;
            store_tensor(gterm, i, gq);
        }
    });
    FieldPair out;
    out.u = to_spectral(adv, opt.dealias);
    auto divT = tensor_divergence(to_spectral(div_part, opt.dealias));
    for (std::size_t n = 0; n < out.u.data.size(); ++n) out.u.data[n] += divT.data[n];
    out.Q = to_spectral(gterm, opt.dealias);
    return out;
}

// Linear generator applied to spectral (u, Q): Leray[Lap u - beta Div Lap Q] and
// beta (grad u + grad u^T) + Lap Q - a L[Q].
inline FieldPair linear_terms(const SpectralField& uh, const SpectralField& Qh, const ModelParams& p)
{
    const GridSpec& g = uh.grid;
    const int N = g.dim;
    const double beta = p.beta();
    FieldPair out{SpectralField(g, N), SpectralField(g, N * N)};
    const auto& xis = cached_wavenumbers(g);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const auto& xv = xis[i];
        double k2 = norm2(xv);
        // Div Lap Q -> -k2 * i Q xi
        for (int j = 0; j < N; ++j) {
            cd s = 0;
            for (int l = 0; l < N; ++l) s += Qh.at(j * N + l, i) * xv[l];
            out.u.at(j, i) = -k2 * uh.at(j, i) - beta * (-k2) * cd(0, 1) * s;
        }
        cd tr = 0;
        for (int d = 0; d < N; ++d) tr += Qh.at(d * N + d, i);
        for (int r = 0; r < N; ++r)
            for (int s = 0; s < N; ++s) {
                cd strain = cd(0, 1) * (xv[s] * uh.at(r, i) + xv[r] * uh.at(s, i));
                cd q = Qh.at(r * N + s, i);
                out.Q.at(r * N + s, i) = beta * strain - k2 * q - p.a * (q - (r == s ? tr / double(N) : cd(0)));
            }
    }
    out.u = leray_project(std::move(out.u));
    return out;
}

// Unsplit right-hand sides assembled from tau, sigma, S and H directly.
inline FieldPair full_rhs(const SpectralField& uh_in, const SpectralField& Qh_in, const ModelParams& p,
                          const NonlinearOptions& opt = {})
{
    const GridSpec& g = uh_in.grid;
    const int N = g.dim;
    SpectralField uh = opt.dealias ? dealias(uh_in) : uh_in;
    SpectralField Qh = opt.dealias ? dealias(Qh_in) : Qh_in;
    Kinematics k = kinematics(uh, Qh);
    TensorField stress(g), qrhs(g);
    VectorField adv(g);
    for (std::size_t i = 0; i < g.size(); ++i) {
        Mat3 Q = tensor_at(k.Q, i), G = tensor_at(k.grad_u, i);
        Vec3 u = vector_at(k.u, i);
        auto dQ = dQ_at(k, i);
        Mat3 H = tensor_at(k.lap_Q, i) - traceless(bulk_gradient(Q, p), N);
        store_tensor(stress, i, tau_point(Q, H, dQ, p) + sigma_point(Q, H));
        store_vector(adv, i, -(G * u));
        Mat3 transport = Mat3::Zero();
        for (int d = 0; d < N; ++d) transport -= u(d) * dQ[d];
        store_tensor(qrhs, i, transport + S_point(G, Q, p) + H);
    }
    FieldPair out;
    out.u = to_spectral(adv, opt.dealias);
    auto divT = tensor_divergence(to_spectral(stress, opt.dealias));
    auto lap = laplacian(uh);
    for (std::size_t n = 0; n < out.u.data.size(); ++n) out.u.data[n] += divT.data[n] + lap.data[n];
    out.u = leray_project(std::move(out.u));
    out.Q = to_spectral(qrhs, opt.dealias);
    return out;
}

// Physical-space wrappers.
inline VectorField nonlinear_f(const VectorField& u, const TensorField& Q, const ModelParams& p, const NonlinearOptions& opt = {})
{
    return VectorField(inverse(nonlinear_terms(forward(u), forward(Q), p, opt).u));
}

inline TensorField nonlinear_g(const VectorField& u, const TensorField& Q, const ModelParams& p, const NonlinearOptions& opt = {})
{
    return TensorField(inverse(nonlinear_terms(forward(u), forward(Q), p, opt).Q));
}

inline std::pair<VectorField, TensorField> assemble_full_rhs(const VectorField& u, const TensorField& Q, const ModelParams& p,
                                                             const NonlinearOptions& opt = {})
{
    auto r = full_rhs(forward(u), forward(Q), p, opt);
    return {VectorField(inverse(r.u)), TensorField(inverse(r.Q))};
}

// Advection only: -(u.grad)Q, used by the transport sanity check.
inline SpectralField transport_term(const SpectralField& uh, const SpectralField& Qh)
{
    Kinematics k = kinematics(uh, Qh);
    const int N = uh.grid.dim;
    TensorField out(uh.grid);
    for (std::size_t i = 0; i < uh.points(); ++i) {
        Mat3 t = Mat3::Zero();
        Vec3 u = vector_at(k.u, i);
        auto dQ = dQ_at(k, i);
        for (int d = 0; d < N; ++d) t -= u(d) * dQ[d];
        store_tensor(out, i, t);
    }
    return forward(out);
}

// Pressure from the momentum equation: p = -beta div Div Q + Lap^{-1} div f.
inline SpectralField recover_pressure(const SpectralField& Qh, const SpectralField& fh, const ModelParams& p)
{
    const int N = Qh.grid.dim;
    SpectralField out(Qh.grid, 1);
    const auto& xis = cached_wavenumbers(Qh.grid);
    for (std::size_t i = 0; i < out.points(); ++i) {
        double k2 = norm2(xis[i]);
        if (k2 == 0) continue;
        cd qxx = 0, xf = 0;
        for (int r = 0; r < N; ++r) {
            xf += xis[i][r] * fh.at(r, i);
            for (int s = 0; s < N; ++s) qxx += xis[i][r] * Qh.at(r * N + s, i) * xis[i][s];
        }
        out.at(0, i) = p.beta() * qxx - cd(0, 1) * xf / k2;
    }
    return out;
}

// Symmetrize and project Q onto traceless tensors, spectral in / out.
inline SpectralField symmetric_traceless(SpectralField Qh)
{
    const int N = Qh.grid.dim;
    for (std::size_t i = 0; i < Qh.points(); ++i) {
        cd tr = 0;
        for (int d = 0; d < N; ++d) tr += Qh.at(d * N + d, i);
        for (int r = 0; r < N; ++r)
            for (int s = r + 1; s < N; ++s) {
                cd m = 0.5 * (Qh.at(r * N + s, i) + Qh.at(s * N + r, i));
                Qh.at(r * N + s, i) = Qh.at(s * N + r, i) = m;
            }
        for (int d = 0; d < N; ++d) Qh.at(d * N + d, i) -= tr / double(N);
    }
    return Qh;
}

} // namespace qtlab
