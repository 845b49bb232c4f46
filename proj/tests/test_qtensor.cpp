#include <gtest/gtest.h>

#include <random>

#include "qtlab/experiments.hpp"

using namespace qtlab;

namespace {

Mat3 random_sym_traceless(std::mt19937_64& rng, int N, double scale)
{
    std::normal_distribution<double> nd;
    Mat3 A = Mat3::Zero();
    for (int r = 0; r < N; ++r)
        for (int s = 0; s < N; ++s) A(r, s) = nd(rng);
    A = (0.5 * (A + A.transpose())).eval();
    return scale * traceless(A, N);
}

ModelParams model(int N, double xi = 0.3)
{
    ModelParams p;
    p.dim = N;
    p.xi = xi;
    return p;
}

double max_diff(const PhysicalField& a, const PhysicalField& b)
{
    double m = 0;
    for (std::size_t n = 0; n < a.data.size(); ++n) m = std::max(m, std::abs(a.data[n] - b.data[n]));
    return m;
}

} // namespace

TEST(StrainVorticity, Shear)
{
    GridSpec g{2, 16, 3.0};
    const double L = g.length;
    VectorField u(g);
    for (std::size_t i = 0; i < g.size(); ++i) u.at(0, i) = std::sin(2 * pi * coordinates(g, i)[1] / L);
    auto [D, W] = strain_vorticity(u);
    double err = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        double v = pi / L * std::cos(2 * pi * coordinates(g, i)[1] / L);
        Mat3 d = tensor_at(D, i), w = tensor_at(W, i);
        err = std::max({err, std::abs(d(0, 1) - v), std::abs(d(1, 0) - v), std::abs(d(0, 0)), std::abs(d(1, 1)),
                        std::abs(w(0, 1) - v), std::abs(w(1, 0) + v), std::abs(w(0, 0)), std::abs(w(1, 1))});
    }
    EXPECT_LT(err, 1e-12);

    VectorField zero(g);
    auto [D0, W0] = strain_vorticity(zero);
    EXPECT_EQ(max_abs(D0), 0.0);
    EXPECT_EQ(max_abs(W0), 0.0);
}

TEST(StrainVorticity, SymmetryOnRandomFields)
{
    GridSpec g{3, 8, 2.0};
    std::mt19937_64 rng(3);
    auto x = random_smooth_pair(g, rng, 1.0, 0.3);
    auto [D, W] = strain_vorticity(VectorField(inverse(x.u)));
    double sym = 0, anti = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        Mat3 d = tensor_at(D, i), w = tensor_at(W, i);
        sym = std::max(sym, (d - d.transpose()).cwiseAbs().maxCoeff());
        anti = std::max(anti, (w + w.transpose()).cwiseAbs().maxCoeff());
    }
    EXPECT_LT(sym, 1e-12);
    EXPECT_LT(anti, 1e-12);
}

TEST(TracelessProject, IdentityTracelessAndIdempotence)
{
    GridSpec g{3, 8, 1.0};
    TensorField I(g), A(g);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> nd;
    for (std::size_t i = 0; i < g.size(); ++i) store_tensor(I, i, identity_n(3));
    for (auto& v : A.data) v = nd(rng);
    EXPECT_LT(max_abs(traceless_project(I)), 1e-15);
    auto LA = traceless_project(A);
    auto LLA = traceless_project(LA);
    EXPECT_LT(max_diff(LA, LLA), 1e-15);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_LT(std::abs(tensor_at(LA, i).trace()), 1e-14);
}

TEST(BulkEnergy, ZeroAndDiagonalConstant)
{
    GridSpec g{2, 8, 2.0};
    ModelParams p = model(2);
    p.a = 1;
    p.b = 0;
    p.c = 1;
    TensorField Q(g);
    auto e0 = bulk_energy(Q, p);
    EXPECT_EQ(e0.total, 0.0);
    const double q = 0.7;
    for (std::size_t i = 0; i < g.size(); ++i) {
        Mat3 m = Mat3::Zero();
        m(0, 0) = q;
        m(1, 1) = -q;
        store_tensor(Q, i, m);
    }
    auto e = bulk_energy(Q, p);
    // scalar brute force: a/2 trQ^2 + c/4 (trQ^2)^2 with trQ^2 = 2q^2
    double s = 2 * q * q, brute = 0.5 * s + 0.25 * s * s;
    EXPECT_NEAR(brute, q * q + q * q * q * q, 1e-15);
    for (double v : e.density.data) EXPECT_NEAR(v, brute, 1e-14);
    EXPECT_NEAR(e.total, brute * g.volume(), 1e-12);
}

TEST(BulkEnergy, NonNegativeWithoutCubicTerm)
{
    std::mt19937_64 rng(2);
    ModelParams p = model(3);
    p.b = 0;
    for (int k = 0; k < 200; ++k) EXPECT_GE(bulk_density(random_sym_traceless(rng, 3, 2.0), p), 0.0);
}

TEST(BulkDerivative, HandAlgebraAndZero)
{
    ModelParams p = model(3);
    p.a = 1;
    p.b = 0;
    p.c = 1;
    std::mt19937_64 rng(4);
    Mat3 Q = random_sym_traceless(rng, 3, 0.8);
    double s = (Q * Q).trace();
    EXPECT_LT((bulk_gradient(Q, p) - (1 + s) * Q).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_EQ(bulk_gradient(Mat3::Zero(), p).cwiseAbs().maxCoeff(), 0.0);
}

TEST(BulkDerivative, FiniteDifferenceOracle)
{
    GridSpec g{2, 16, 2 * pi};
    std::mt19937_64 rng(5);
    for (int N : {2, 3}) {
        GridSpec gg = g;
        gg.dim = N;
        if (N == 3) gg.points = 8;
        ModelParams p = model(N);
        TensorField Q(gg), V(gg);
        for (std::size_t i = 0; i < gg.size(); ++i) {
            store_tensor(Q, i, random_sym_traceless(rng, N, 0.3));
            store_tensor(V, i, random_sym_traceless(rng, N, 1.0));
        }
        auto integral = [&](double h) {
            TensorField q = Q;
            for (std::size_t n = 0; n < q.data.size(); ++n) q.data[n] += h * V.data[n];
            double s = 0;
            for (double v : bulk_energy(q, p).density.data) s += v;
            return s * gg.cell_volume();
        };
        const double h = 1e-5;
        double fd = (integral(h) - integral(-h)) / (2 * h);
        auto D = traceless_project(bulk_derivative(Q, p));
        double pair = 0;
        for (std::size_t n = 0; n < D.data.size(); ++n) pair += D.data[n] * V.data[n];
        pair *= gg.cell_volume();
        EXPECT_LT(std::abs(fd - pair) / std::abs(pair), 1e-6) << "N = " << N;
    }
}

TEST(MolecularField, ConstantQAndTrace)
{
    GridSpec g{3, 8, 2.0};
    ModelParams p = model(3);
    std::mt19937_64 rng(6);
    Mat3 q = random_sym_traceless(rng, 3, 0.5);
    TensorField Q(g);
    for (std::size_t i = 0; i < g.size(); ++i) store_tensor(Q, i, q);
    auto H = molecular_field(Q, p);
    Mat3 expect = -traceless(bulk_gradient(q, p), 3);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_LT((tensor_at(H, i) - expect).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT(max_abs(molecular_field(TensorField(g), p)), 1e-15);

    auto x = random_smooth_pair(g, rng, 1.0, 0.3);
    auto Hr = molecular_field(TensorField(inverse(x.Q)), p);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_LT(std::abs(tensor_at(Hr, i).trace()), 1e-10);
}

TEST(TensorS, ZeroVelocityZeroQAndScaling)
{
    GridSpec g{2, 16, 2 * pi};
    ModelParams p = model(2, 0.7);
    std::mt19937_64 rng(7);
    auto x = random_smooth_pair(g, rng, 1.0, 0.3);
    VectorField u(inverse(x.u));
    TensorField Q(inverse(x.Q));
    EXPECT_LT(max_abs(tensor_S(VectorField(g), Q, p)), 1e-15);

    auto S0 = tensor_S(u, TensorField(g), p);
    auto [D, W] = strain_vorticity(u);
    for (std::size_t n = 0; n < D.data.size(); ++n) EXPECT_NEAR(S0.data[n], p.beta() * D.data[n], 1e-12);

    // remainder S(u, Q) - S(u, 0) is linear in Q at small Q: doubling Q doubles it
    TensorField Qh = Q;
    for (auto& v : Qh.data) v *= 1e-4;
    TensorField Qh2 = Qh;
    for (auto& v : Qh2.data) v *= 2;
    auto rem = [&](const TensorField& q) {
        auto s = tensor_S(u, q, p);
        for (std::size_t n = 0; n < s.data.size(); ++n) s.data[n] -= S0.data[n];
        return s;
    };
    auto r1 = rem(Qh), r2 = rem(Qh2);
    double worst = 0;
    for (std::size_t n = 0; n < r1.data.size(); ++n) worst = std::max(worst, std::abs(r2.data[n] - 2 * r1.data[n]));
    EXPECT_LT(worst / std::max(max_abs(r1), 1e-300), 1e-3);  // quadratic piece is O(1e-4) relative
}

TEST(StressTau, GramStructure)
{
    GridSpec g{2, 32, 3.0};
    const double L = g.length;
    TensorField Q(g);
    for (std::size_t i = 0; i < g.size(); ++i) Q.at(0, i) = std::sin(2 * pi * coordinates(g, i)[0] / L);
    auto k = kinematics(forward(VectorField(g)), forward(Q));
    for (std::size_t i = 0; i < g.size(); ++i) {
        Mat3 G = gradQ_gram(dQ_at(k, i), 2);
        double c = std::cos(2 * pi * coordinates(g, i)[0] / L);
        EXPECT_NEAR(G(0, 0), std::pow(2 * pi / L, 2) * c * c, 1e-10);
        EXPECT_NEAR(std::abs(G(0, 1)) + std::abs(G(1, 0)) + std::abs(G(1, 1)), 0.0, 1e-10);
    }
    std::mt19937_64 rng(8);
    auto x = random_smooth_pair(GridSpec{3, 8, 2.0}, rng, 1.0, 0.3);
    auto kr = kinematics(x.u, x.Q);
    for (std::size_t i = 0; i < x.u.points(); ++i) {
        Mat3 G = gradQ_gram(dQ_at(kr, i), 3);
        EXPECT_LT((G - G.transpose()).cwiseAbs().maxCoeff(), 1e-13);
        Eigen::SelfAdjointEigenSolver<Mat3> es(0.5 * (G + G.transpose()));
        EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12);
    }
    ModelParams p = model(2);
    TensorField Z(g);
    EXPECT_EQ(max_abs(stress_tau(Z, Z, p)), 0.0);
}

TEST(StressSigma, Commutator)
{
    GridSpec g{3, 8, 1.0};
    std::mt19937_64 rng(9);
    TensorField Q(g), H(g), Dq(g), Dh(g);
    for (std::size_t i = 0; i < g.size(); ++i) {
        store_tensor(Q, i, random_sym_traceless(rng, 3, 1.0));
        store_tensor(H, i, random_sym_traceless(rng, 3, 1.0));
        Mat3 a = Mat3::Zero(), b = Mat3::Zero();
        a.diagonal() << 1, -2, 1;
        b.diagonal() << 0.5, 0.5, -1;
        store_tensor(Dq, i, a);
        store_tensor(Dh, i, b);
    }
    EXPECT_EQ(max_abs(stress_sigma(Q, Q)), 0.0);
    EXPECT_EQ(max_abs(stress_sigma(Dq, Dh)), 0.0);
    auto s = stress_sigma(Q, H);
    for (std::size_t i = 0; i < g.size(); ++i) {
        Mat3 m = tensor_at(s, i);
        EXPECT_LT((m + m.transpose()).cwiseAbs().maxCoeff(), 1e-13);
    }
}

TEST(NonlinearTerms, ZeroAndSpecialCases)
{
    GridSpec g{2, 16, 2 * pi};
    ModelParams p = model(2);
    VectorField u0(g);
    TensorField Q0(g);
    EXPECT_EQ(max_abs(nonlinear_f(u0, Q0, p)), 0.0);
    EXPECT_EQ(max_abs(nonlinear_g(u0, Q0, p)), 0.0);

    std::mt19937_64 rng(10);
    auto x = random_smooth_pair(g, rng, 0.5, 0.1);
    VectorField u(inverse(x.u));
    TensorField Q(inverse(x.Q));
    // Q = 0: f = -u.grad u
    auto f = nonlinear_f(u, Q0, p, {false, true});
    auto k = kinematics(x.u, forward(Q0));
    double err = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        Vec3 adv = -(tensor_at(k.grad_u, i) * vector_at(k.u, i));
        for (int c = 0; c < 2; ++c) err = std::max(err, std::abs(f.at(c, i) - adv(c)));
    }
    EXPECT_LT(err, 1e-12);
    // u = 0: g = -L[dF'(Q)]
    auto gq = nonlinear_g(u0, Q, p, {false, true});
    err = 0;
    for (std::size_t i = 0; i < g.size(); ++i)
        err = std::max(err, (tensor_at(gq, i) + traceless(bulk_nonlinear(tensor_at(Q, i), p), 2)).cwiseAbs().maxCoeff());
    EXPECT_LT(err, 1e-12);
}

TEST(SplitIdentity, FullRhsEqualsLinearPlusNonlinear)
{
    for (int N : {2, 3}) {
        GridSpec g{N, N == 2 ? 32 : 16, 2 * pi};
        std::mt19937_64 rng(11 + N);
        for (double xi : {0.0, 0.3, 1.0}) {
            ModelParams p = model(N, xi);
            auto x = random_smooth_pair(g, rng, 0.5, 0.08);
            auto [fu, fQ] = assemble_full_rhs(VectorField(inverse(x.u)), TensorField(inverse(x.Q)), p);
            auto lin = linear_terms(x.u, x.Q, p);
            auto nl = nonlinear_terms(x.u, x.Q, p);
            nl.u = leray_project(std::move(nl.u));
            nl += lin;
            EXPECT_LT(max_diff(fu, inverse(nl.u)), 1e-10) << "N " << N << " xi " << xi;
            EXPECT_LT(max_diff(fQ, inverse(nl.Q)), 1e-10) << "N " << N << " xi " << xi;
            // trace of the Q equation vanishes
            for (std::size_t i = 0; i < g.size(); ++i) EXPECT_LT(std::abs(tensor_at(fQ, i).trace()), 1e-10);
        }
    }
}

TEST(Pressure, RecoveredPressureMakesMomentumSolenoidal)
{
    GridSpec g{2, 32, 2 * pi};
    ModelParams p = model(2, 0.5);
    std::mt19937_64 rng(12);
    auto x = random_smooth_pair(g, rng, 0.5, 0.1);
    auto f = nonlinear_terms(x.u, x.Q, p).u;
    auto pr = recover_pressure(x.Q, f, p);
    // div(Lap u - grad p - beta Div Lap Q + f) = 0 mode by mode
    const auto& xis = cached_wavenumbers(g);
    double worst = 0, scale = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        double k2 = norm2(xis[i]);
        cd d = 0;
        for (int r = 0; r < 2; ++r) {
            cd divLapQ = 0;
            for (int s = 0; s < 2; ++s) divLapQ += -k2 * cd(0, 1) * xis[i][s] * x.Q.at(r * 2 + s, i);
            cd mom = -k2 * x.u.at(r, i) - cd(0, 1) * xis[i][r] * pr.at(0, i) - p.beta() * divLapQ + f.at(r, i);
            d += cd(0, 1) * xis[i][r] * mom;
        }
        worst = std::max(worst, std::abs(d));
        scale = std::max(scale, std::abs(f.at(0, i)) * std::sqrt(k2));
    }
    EXPECT_LT(worst, 1e-10 * std::max(scale, 1.0));
}

TEST(ModelParams, Validation)
{
    ModelParams p;
    p.a = -1;
    EXPECT_THROW(p.validate(), Error);
    p.a = 1;
    p.c = 0;
    EXPECT_THROW(p.validate(), Error);
    EXPECT_DOUBLE_EQ(model(3, 0.9).beta(), 0.6);
}
