#include <gtest/gtest.h>

#include <random>

#include "qtlab/experiments.hpp"

using namespace qtlab;

namespace {

ModelParams model(int N, double xi = 0.3)
{
    ModelParams p;
    p.dim = N;
    p.xi = xi;
    return p;
}

SimState smooth_state(const GridSpec& g, unsigned seed, double amplitude, double band = 0.1)
{
    std::mt19937_64 rng(seed);
    auto x = random_smooth_pair(g, rng, amplitude, band);
    return to_physical(0, 0, x);
}

// per-mode reference: stacked Leray datum times exp(t L(xi))
FieldPair exponential_reference(const FieldPair& x, const ModelParams& p, double t)
{
    const GridSpec& g = x.u.grid;
    FieldPair out = zero_pair(g);
    const auto& xis = cached_wavenumbers(g);
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (on_nyquist(g, i)) continue;
        ModeData d = mode_datum(x.u, x.Q, i);
        CStack y = mode_exponential(xis[i], t, p) * d.stack();
        store_mode(out.u, out.Q, i, ModeData::unstack(y, g.dim));
    }
    return out;
}

double run_to(const SimState& s0, SchemeConfig cfg, const ModelParams& p, double T, FieldPair* out)
{
    RunOptions opt;
    opt.T = T;
    opt.cadence = 1 << 20;
    auto r = run_simulation(s0, cfg, p, opt);
    *out = to_spectral(r.final_state);
    return r.dt;
}

} // namespace

TEST(ImexStep, ZeroStateStaysZero)
{
    GridSpec g{2, 16, 2 * pi};
    SimState s{0, VelocityField(g), QTensorField(g), 0};
    auto next = imex_step(s, SchemeConfig{}, model(2));
    EXPECT_EQ(max_abs(next.u), 0.0);
    EXPECT_EQ(max_abs(next.Q), 0.0);
    EXPECT_DOUBLE_EQ(next.t, 0.01);
    EXPECT_EQ(next.step_index, 1);
}

TEST(ImexStep, LinearModeMatchesExponentialPerStep)
{
    for (int N : {2, 3}) {
        GridSpec g{N, N == 2 ? 32 : 8, 2 * pi};
        ModelParams p = model(N, 0.9);
        SchemeConfig cfg;
        cfg.nonlinear = false;
        cfg.dt = 0.05;
        auto s0 = smooth_state(g, 1, 1.0, 0.3);
        auto next = imex_step(s0, cfg, p);
        auto ref = exponential_reference(to_spectral(s0), p, cfg.dt);
        EXPECT_LT(relative_difference(to_spectral(next), ref), 1e-12) << N;
    }
}

TEST(ImexStep, LinearLimitUniformOverRun)
{
    GridSpec g{2, 32, 2 * pi};
    ModelParams p = model(2, 1.2);
    SchemeConfig cfg;
    cfg.nonlinear = false;
    cfg.dt = 0.02;
    auto s0 = smooth_state(g, 2, 1.0, 0.3);
    RunOptions opt;
    opt.T = 2.0;
    opt.cadence = 10;
    double worst = 0;
    const FieldPair x0 = to_spectral(s0);
    opt.observers.push_back([&](const StepView& v) {
        worst = std::max(worst, relative_difference(v.x, exponential_reference(x0, p, v.t)));
    });
    auto r = run_simulation(s0, cfg, p, opt);
    EXPECT_FALSE(r.blew_up);
    EXPECT_LT(worst, 1e-10);
}

TEST(ImexStep, TraceFollowsHeatEquation)
{
    GridSpec g{2, 32, 2 * pi};
    ModelParams p = model(2, 0.8);
    SchemeConfig cfg;
    cfg.nonlinear = false;
    cfg.reproject = false;
    cfg.dt = 0.05;
    auto s0 = smooth_state(g, 3, 1.0, 0.3);
    // traceless data plus a trace seeded by hand
    std::mt19937_64 rng(4);
    std::normal_distribution<double> nd;
    PhysicalField d0(g, 1);
    for (auto& v : d0.data) v = nd(rng);
    auto d0h = zero_nyquist(dealias(forward(d0)));
    d0 = inverse(d0h);
    for (std::size_t i = 0; i < g.size(); ++i)
        for (int r = 0; r < 2; ++r) s0.Q.at(r * 2 + r, i) += d0.at(0, i) / 2;
    SimState s = s0;
    for (int k = 0; k < 20; ++k) s = imex_step(s, cfg, p);
    auto expect = inverse(heat_trace_propagate(d0h, s.t));
    double err = 0;
    for (std::size_t i = 0; i < g.size(); ++i) err = std::max(err, std::abs(s.Q.at(0, i) + s.Q.at(3, i) - expect.at(0, i)));
    EXPECT_LT(err / max_abs(expect), 1e-12);
}

TEST(ImexStep, NonFiniteStateReportsMode)
{
    GridSpec g{2, 16, 2 * pi};
    auto s = smooth_state(g, 5, 1.0);
    s.u.at(0, 17) = std::numeric_limits<double>::quiet_NaN();
    try {
        imex_step(s, SchemeConfig{}, model(2));
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("mode"), std::string::npos);
    }
}

TEST(ImexStep, ConfigurationGuards)
{
    GridSpec g{2, 16, 2 * pi};
    SchemeConfig cfg;
    cfg.freeze_velocity = true;
    EXPECT_THROW(ImexStepper(g, cfg, model(2, 0.3)), Error);
    EXPECT_NO_THROW(ImexStepper(g, cfg, model(2, 0.0)));
    cfg.dt = -1;
    EXPECT_THROW(cfg.validate(), Error);
    EXPECT_THROW(ImexStepper(g, SchemeConfig{}, model(3)), Error);
}

TEST(DefaultDt, ClampsToRange)
{
    GridSpec g{2, 16, 2 * pi};
    VelocityField u(g);
    EXPECT_DOUBLE_EQ(default_dt(u), 0.05);
    u.at(0, 3) = 1e-8;
    EXPECT_DOUBLE_EQ(default_dt(u), 0.05);
    u.at(0, 3) = 1e9;
    EXPECT_DOUBLE_EQ(default_dt(u), 1e-4);
    u.at(0, 3) = 10;
    EXPECT_NEAR(default_dt(u), 0.25 * g.spacing() / 10, 1e-15);
}

TEST(Convergence, Etdrk2SecondOrderEtd1FirstOrder)
{
    GridSpec g{2, 32, 2 * pi};
    ModelParams p = model(2, 0.5);
    auto s0 = smooth_state(g, 6, 0.8, 0.08);
    auto order = [&](SchemeKind kind, double dt) {
        SchemeConfig cfg;
        cfg.kind = kind;
        FieldPair a, b, c;
        cfg.dt = dt;
        run_to(s0, cfg, p, 0.8, &a);
        cfg.dt = dt / 2;
        run_to(s0, cfg, p, 0.8, &b);
        cfg.dt = dt / 4;
        run_to(s0, cfg, p, 0.8, &c);
        return std::log2(l2_coefficients(combine(a, 1.0, b, -1.0)) / l2_coefficients(combine(b, 1.0, c, -1.0)));
    };
    double o2 = order(SchemeKind::ETDRK2, 0.04);
    // first order needs smaller steps before it is asymptotic
    double o1 = order(SchemeKind::ETD1, 0.01);
    EXPECT_GE(o2, 1.8);
    EXPECT_NEAR(o1, 1.0, 0.2);
}

TEST(Transport, FrozenVelocityConservesL2)
{
    // pure advection -(u.grad)Q by a frozen divergence-free u, classical RK4
    GridSpec g{2, 64, 2 * pi};
    std::mt19937_64 rng(7);
    auto x = random_smooth_pair(g, rng, 0.5, 0.05);
    const SpectralField uh = x.u;
    auto rhs = [&](const SpectralField& Q) { return dealias(transport_term(uh, dealias(Q))); };
    auto axpy = [](const SpectralField& a, double w, const SpectralField& b) {
        SpectralField r = a;
        for (std::size_t n = 0; n < r.data.size(); ++n) r.data[n] += w * b.data[n];
        return r;
    };
    SpectralField Q = dealias(x.Q);
    double L2_0 = lq_norm(inverse(Q), 2);
    const double h = 0.01;
    for (int k = 0; k < 100; ++k) {
        auto k1 = rhs(Q), k2 = rhs(axpy(Q, h / 2, k1)), k3 = rhs(axpy(Q, h / 2, k2)), k4 = rhs(axpy(Q, h, k3));
        for (std::size_t n = 0; n < Q.data.size(); ++n)
            Q.data[n] += h / 6 * (k1.data[n] + 2.0 * k2.data[n] + 2.0 * k3.data[n] + k4.data[n]);
    }
    EXPECT_LT(std::abs(lq_norm(inverse(Q), 2) - L2_0) / L2_0, 1e-6);
}

TEST(RunSimulation, GradientFlowDissipates)
{
    RunConfig c;
    c.grid = GridSpec{2, 32, 2 * pi};
    c.init.epsilon = 0;
    c.init.amplitude = 0.5;
    c.T = 1;
    c.scheme.dt = 0.01;
    auto rep = gradient_flow_check(c);
    for (auto& ch : rep.checks) EXPECT_TRUE(ch.pass) << ch.name << " " << ch.value;
}

TEST(RunSimulation, SmallDataBoundedAndLinearResponse)
{
    RunConfig c;
    c.grid = GridSpec{2, 32, 2 * pi};
    c.T = 5;
    c.auto_dt = true;
    c.cadence = 5;
    auto rep = small_data_check(c, 1e-3);
    for (auto& ch : rep.checks) EXPECT_TRUE(ch.pass) << ch.name << " " << ch.value << " " << ch.detail;
}

TEST(RunSimulation, BlowUpIsAFindingNotACrash)
{
    GridSpec g{2, 16, 2 * pi};
    auto s0 = smooth_state(g, 8, 1.0);
    RunOptions opt;
    opt.T = 0.1;
    opt.blowup_factor = 0.5;  // trips at the first observation
    auto r = run_simulation(s0, SchemeConfig{}, model(2), opt);
    EXPECT_TRUE(r.blew_up);
    EXPECT_NE(r.finding.find("blow-up"), std::string::npos);
}

TEST(RunSimulation, StructurePreserved)
{
    GridSpec g{3, 16, 2 * pi};
    auto s0 = smooth_state(g, 9, 0.5, 0.15);
    RunOptions opt;
    opt.T = 0.5;
    opt.cadence = 10;
    SchemeConfig cfg;
    cfg.dt = 0.005;
    auto r = run_simulation(s0, cfg, model(3), opt);
    ASSERT_FALSE(r.blew_up) << r.finding;
    auto d = structure_defects(to_spectral(r.final_state));
    EXPECT_LT(d.div_u, 1e-8);
    EXPECT_LT(d.trace_Q, 1e-8);
    EXPECT_LT(d.asym_Q, 1e-8);
    EXPECT_EQ(r.steps, 100);
    EXPECT_NEAR(r.final_state.t, 0.5, 1e-12);
}

TEST(Simpson, ExactForCubics)
{
    for (std::size_t n : {3u, 4u, 5u, 8u, 11u}) {
        double h = 0.3;
        auto w = simpson_weights(n, h);
        double T = h * double(n - 1), s = 0;
        for (std::size_t k = 0; k < n; ++k) {
            double t = h * double(k);
            s += w[k] * (1 + t - 2 * t * t + 0.5 * t * t * t);
        }
        double exact = T + T * T / 2 - 2 * T * T * T / 3 + 0.125 * T * T * T * T;
        EXPECT_NEAR(s, exact, 1e-12 * std::abs(exact)) << n;
    }
    EXPECT_THROW(simpson_weights(2, 0.1), Error);
}

TEST(Duhamel, ZeroForcingAndClosedForm)
{
    GridSpec g{2, 16, 2 * pi};
    ModelParams p = model(2, 0.7);
    auto U0 = to_spectral(smooth_state(g, 10, 1.0, 0.3));
    const double h = 0.005, T = 1.0;
    const std::size_t n = 201;
    std::vector<FieldPair> zero(n, zero_pair(g));
    auto free = duhamel_solve(U0, zero, h, 1.0, p);
    EXPECT_LT(relative_difference(free, exponential_reference(U0, p, T)), 1e-12);

    // constant forcing at one mode: L^{-1}(e^{TL} - I) F
    FieldPair F = zero_pair(g);
    std::size_t i = g.ravel({1, 2, 0});
    std::mt19937_64 rng(11);
    ModeData d = random_mode_datum(rng, 2, true);
    store_mode(F.u, F.Q, i, d);
    std::vector<FieldPair> forcing(n, F);
    auto v = duhamel_solve(zero_pair(g), forcing, h, 1.0, p);
    const auto& xis = cached_wavenumbers(g);
    Eigen::MatrixXcd L(mode_matrix(xis[i], p).matrix);
    Eigen::MatrixXcd E(mode_exponential(xis[i], T, p));
    Eigen::VectorXcd ref = L.partialPivLu().solve((E - Eigen::MatrixXcd::Identity(6, 6)) * Eigen::VectorXcd(d.stack()));
    Eigen::VectorXcd got(mode_datum(v.u, v.Q, i).stack());
    EXPECT_LT((got - ref).norm() / ref.norm(), 1e-8);
}

TEST(Split, DegenerateShiftAndRecombination)
{
    GridSpec g{2, 32, 2 * pi};
    ModelParams p = model(2, 0.4);
    auto s0 = smooth_state(g, 12, 0.3, 0.1);
    SchemeConfig cfg;
    cfg.dt = 0.02;
    cfg.lambda1 = 0;
    auto r0 = shifted_split_run(s0, cfg, p, 0.5);
    EXPECT_EQ(r0.v1_initial_norm, 0.0);
    EXPECT_LT(relative_difference(r0.v2, exponential_reference(to_spectral(s0), p, 0.5)), 1e-10);
    EXPECT_LT(r0.recombination_error, 1e-6);
    cfg.lambda1 = 4;
    auto r4 = shifted_split_run(s0, cfg, p, 0.5);
    EXPECT_LT(r4.recombination_error, 1e-6);
    EXPECT_EQ(r4.v1.size(), r4.times.size());
}

TEST(Split, DuhamelMatchesDirectIntegration)
{
    RunConfig c;
    c.grid = GridSpec{2, 32, 2 * pi};
    c.T = 0.5;
    c.scheme.dt = 0.01;
    auto rep = duhamel_check(c, {1.0, 4.0});
    for (auto& ch : rep.checks) EXPECT_TRUE(ch.pass) << ch.name << " " << ch.value;
}

TEST(NormTracker, ExponentsAndZeroTrajectory)
{
    auto e = NormExponents::make(3, 0.5);
    EXPECT_DOUBLE_EQ(e.b, 0.6);
    EXPECT_DOUBLE_EQ(e.p, 2.5);
    EXPECT_DOUBLE_EQ(e.q1, 2.5);
    EXPECT_GT(e.q2, 3.0);
    EXPECT_THROW(NormExponents::make(3, 0.7), Error);
    EXPECT_TRUE(NormExponents::make(2, 0.5).outside_admissible_range);

    GridSpec g{2, 16, 2 * pi};
    NormTracker t(NormExponents::make(2, 0.5));
    for (double s : {0.0, 0.5, 1.0}) norm_tracker_update(t, s, zero_pair(g), model(2));
    EXPECT_EQ(t.value(), 0.0);
    auto bound = nonlinear_bound_check(t.samples(), t.exponents());
    for (auto& en : bound.entries) EXPECT_TRUE(en.vacuous) << en.name;
    EXPECT_THROW(norm_tracker_update(t, 0.5, zero_pair(g), model(2)), Error);
}

TEST(NormTracker, StationaryFieldTimeIntegral)
{
    GridSpec g{2, 64, 20.0};
    PhysicalField q(g, 4);
    for (std::size_t i = 0; i < g.size(); ++i) {
        auto x = coordinates(g, i);
        double r2 = (x[0] - 10) * (x[0] - 10) + (x[1] - 10) * (x[1] - 10);
        q.at(0, i) = std::exp(-r2 / 2);
        q.at(3, i) = -q.at(0, i);
    }
    FieldPair x{SpectralField(g, 2), forward(q)};
    auto e = NormExponents::make(2, 0.5);
    NormTracker t(e);
    const double T = 10;
    for (int k = 0; k <= 400; ++k) norm_tracker_update(t, T * k / 400, x, model(2));
    auto& s0 = t.samples().front();
    double F = s0.u[0][1] + s0.u[0][2] + s0.Q[0][1] + s0.Q[0][2] + s0.Q[0][3];
    // int_0^T <t>^{bp} dt by fine Simpson
    double bp = e.b * e.p, acc = 0;
    const int m = 20000;
    for (int k = 0; k <= m; ++k) {
        double tt = T * k / m, w = (k == 0 || k == m) ? 1 : (k % 2 ? 4 : 2);
        acc += w * std::pow(bracket(tt), bp);
    }
    acc *= T / m / 3;
    double expect = F * std::pow(acc, 1 / e.p);
    EXPECT_NEAR(t.terms().lp_grad_w12_q1, expect, 0.01 * expect);
}

TEST(RadialBank, EquivariantWithDirectExponentials)
{
    GridSpec g{3, 8, 2 * pi};
    ModelParams p = model(3, 1.0);
    auto bank = make_propagator_bank(g, p);
    auto x = to_spectral(smooth_state(g, 13, 1.0, 0.4));
    auto y = linear_evolve(bank, x, 0.9);
    EXPECT_LT(relative_difference(y, exponential_reference(x, p, 0.9)), 1e-11);
}

TEST(RadialBank, RejectsDimensionMismatch)
{
    GridSpec g{3, 8, 2 * pi};
    EXPECT_THROW(make_propagator_bank(g, model(2)), Error);
    EXPECT_THROW(make_phi_bank(g, 0.1, 1, linear_generator(model(2))), Error);
}
