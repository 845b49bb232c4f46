#pragma once

// Nonlinear evolution by exponential time differencing, the shifted/compensation splitting,
// Duhamel quadrature, and the weighted trajectory norm with its product-bound diagnostic.
//
// Per-mode linear operators are equivariant under orthogonal maps (u -> R u, Q -> R Q R^T,
// xi -> R xi), so every propagator is built once per shell |xi| for xi = |xi| e1 and moved to
// the actual direction by a Householder reflection.

#include <functional>
#include <map>

#include "qtlab/semigroup.hpp"
#include "qtlab/series.hpp"

namespace qtlab {

// ---------------------------------------------------------------- state and configuration

struct SimState {
    double t = 0;
    VelocityField u;
    QTensorField Q;
    long step_index = 0;
};

struct SpectralState {
    double t = 0;
    long step = 0;
    FieldPair x;  // (u^, Q^)
};

enum class SchemeKind { ETD1, ETDRK2 };

struct SchemeConfig {
    double dt = 0.01;
    SchemeKind kind = SchemeKind::ETDRK2;
    bool dealias = true;
    double lambda1 = 1.0;          // shift of the split experiments
    bool reproject = true;         // Leray / symmetric-traceless projection after each step
    bool nonlinear = true;         // false: purely linear evolution
    bool freeze_velocity = false;  // u held at zero: L^2 gradient flow of the free energy

    void validate() const
    {
        if (!(dt > 0) || !std::isfinite(dt)) throw Error("scheme: dt must be positive");
        if (!(lambda1 >= 0) || !std::isfinite(lambda1)) throw Error("scheme: lambda1 must be >= 0");
    }
};

// 0.25 dx / max|u| clipped to [1e-4, cap]; the linear part needs no step restriction.
inline double default_dt(const VelocityField& u, double cap = 0.05)
{
    double umax = max_abs(u);
    double dt = umax > 0 ? 0.25 * u.grid.spacing() / umax : cap;
    return std::clamp(dt, 1e-4, cap);
}

inline FieldPair zero_pair(const GridSpec& g) { return {SpectralField(g, g.dim), SpectralField(g, g.dim * g.dim)}; }

inline FieldPair to_spectral(const SimState& s) { return {forward(s.u), forward(s.Q)}; }

inline SimState to_physical(double t, long step, const FieldPair& x)
{
    return {t, VelocityField(inverse(x.u)), QTensorField(inverse(x.Q)), step};
}

inline FieldPair& operator+=(FieldPair& a, const FieldPair& b)
{
    for (std::size_t i = 0; i < a.u.data.size(); ++i) a.u.data[i] += b.u.data[i];
    for (std::size_t i = 0; i < a.Q.data.size(); ++i) a.Q.data[i] += b.Q.data[i];
    return a;
}

inline FieldPair combine(const FieldPair& a, cd wa, const FieldPair& b, cd wb)
{
    FieldPair out = a;
    for (std::size_t i = 0; i < a.u.data.size(); ++i) out.u.data[i] = wa * a.u.data[i] + wb * b.u.data[i];
    for (std::size_t i = 0; i < a.Q.data.size(); ++i) out.Q.data[i] = wa * a.Q.data[i] + wb * b.Q.data[i];
    return out;
}

inline double l2_coefficients(const FieldPair& a)
{
    double s = 0;
    for (auto& v : a.u.data) s += std::norm(v);
    for (auto& v : a.Q.data) s += std::norm(v);
    return std::sqrt(s);
}

inline double relative_difference(const FieldPair& a, const FieldPair& ref)
{
    double den = l2_coefficients(ref);
    double num = l2_coefficients(combine(a, 1.0, ref, -1.0));
    return den > 0 ? num / den : num;
}

// ---------------------------------------------------------------- shells and frames

// Householder reflection R with R e1 = xi/|xi|; symmetric and its own inverse.
inline Mat3 radial_frame(const Wavevector& w, int N)
{
    Mat3 R = Mat3::Identity();
    double k = std::sqrt(xi_norm2(w, N));
    if (k == 0) return R;
    Vec3 xh(w[0] / k, w[1] / k, N == 3 ? w[2] / k : 0.0);
    Vec3 v = Vec3::UnitX() - xh;
    double vv = v.squaredNorm();
    if (vv < 1e-30) return R;
    return R - 2.0 * v * v.transpose() / vv;
}

// In-place change of frame for `blocks` stacked (u, Q) pairs.
inline void frame_apply(const Mat3& R, int N, int blocks, cd* x)
{
    const int n = mode_size(N);
    cd tmp[12];
    for (int b = 0; b < blocks; ++b) {
        cd* u = x + b * n;
        cd* Q = u + N;
        for (int r = 0; r < N; ++r) {
            tmp[r] = 0;
            for (int m = 0; m < N; ++m) tmp[r] += R(r, m) * u[m];
        }
        for (int r = 0; r < N; ++r) u[r] = tmp[r];
        cd RQ[9];
        for (int r = 0; r < N; ++r)
            for (int s = 0; s < N; ++s) {
                RQ[r * N + s] = 0;
                for (int m = 0; m < N; ++m) RQ[r * N + s] += R(r, m) * Q[m * N + s];
            }
        for (int r = 0; r < N; ++r)
            for (int s = 0; s < N; ++s) {
                cd acc = 0;
                for (int m = 0; m < N; ++m) acc += RQ[r * N + m] * R(m, s);
                Q[r * N + s] = acc;
            }
    }
}

struct RadialIndex {
    GridSpec grid;
    std::vector<int> shell_of;   // per mode; -1 on Nyquist planes (those modes are held at zero)
    std::vector<double> radius;  // |xi| per shell

    explicit RadialIndex(const GridSpec& g) : grid(g), shell_of(g.size(), -1)
    {
        std::map<long, int> shells;
        const double unit = 2 * pi / g.length;
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (on_nyquist(g, i)) continue;
            auto k = g.unravel(i);
            long key = 0;
            for (int d = 0; d < g.dim; ++d) key += long(g.signed_index(k[d])) * g.signed_index(k[d]);
            auto [it, fresh] = shells.try_emplace(key, static_cast<int>(radius.size()));
            if (fresh) radius.push_back(unit * std::sqrt(double(key)));
            shell_of[i] = it->second;
        }
    }
};

using GeneratorBuilder = std::function<DMat(double k)>;

// L(k e1) - shift I.
inline GeneratorBuilder linear_generator(const ModelParams& p, double shift = 0)
{
    return [p, shift](double k) {
        DMat L = mode_matrix(Wavevector{k, 0, 0}, p).matrix;
        L -= shift * DMat::Identity(L.rows(), L.cols());
        return L;
    };
}

// Shifted and compensation systems side by side: (v1, v2)' = [[L - l1, 0], [l1, L]] (v1, v2).
inline GeneratorBuilder split_generator(const ModelParams& p, double lambda1)
{
    return [p, lambda1](double k) {
        DMat L = mode_matrix(Wavevector{k, 0, 0}, p).matrix;
        const auto n = L.rows();
        DMat big = DMat::Zero(2 * n, 2 * n);
        big.block(0, 0, n, n) = L - lambda1 * DMat::Identity(n, n);
        big.block(n, 0, n, n) = lambda1 * DMat::Identity(n, n);
        big.block(n, n, n, n) = L;
        return big;
    };
}

template <class Payload>
class RadialBank {
public:
    RadialBank(const GridSpec& g, int blocks, const std::function<Payload(double)>& make)
        : index_(g), blocks_(blocks), xi_(&cached_wavenumbers(g))
    {
        payload_.resize(index_.radius.size());
        parallel_for(
            payload_.size(),
            [&](std::size_t b, std::size_t e) {
                for (std::size_t s = b; s < e; ++s) payload_[s] = make(index_.radius[s]);
            },
            8);
    }
    const GridSpec& grid() const { return index_.grid; }
    int blocks() const { return blocks_; }
    std::size_t shells() const { return payload_.size(); }
    const Payload* at(std::size_t mode) const
    {
        int s = index_.shell_of[mode];
        return s < 0 ? nullptr : &payload_[s];
    }
    Mat3 frame(std::size_t mode) const { return radial_frame((*xi_)[mode], index_.grid.dim); }

private:
    RadialIndex index_;
    int blocks_;
    const std::vector<Wavevector>* xi_;  // cache entries are never freed
    std::vector<Payload> payload_;
};

using PhiBank = RadialBank<PhiMatrices>;
using PropagatorBank = RadialBank<ModePropagator>;

inline PhiBank make_phi_bank(const GridSpec& g, double h, int blocks, const GeneratorBuilder& gen)
{
    if (gen(1.0).rows() != blocks * mode_size(g.dim)) throw Error("phi bank: generator size does not match the grid dimension");
    return PhiBank(g, blocks, [&](double k) { return ModePropagator(gen(k)).phi(h); });
}

inline PropagatorBank make_propagator_bank(const GridSpec& g, const ModelParams& p, double shift = 0)
{
    if (p.dim != g.dim) throw Error("propagator bank: model dim differs from grid dim");
    auto gen = linear_generator(p, shift);
    return PropagatorBank(g, 1, [&](double k) { return ModePropagator(gen(k)); });
}

using Blocks = std::vector<FieldPair>;

inline cd* gather(const FieldPair& f, std::size_t i, cd* out)
{
    const int N = f.u.grid.dim;
    for (int j = 0; j < N; ++j) *out++ = f.u.at(j, i);
    for (int c = 0; c < N * N; ++c) *out++ = f.Q.at(c, i);
    return out;
}

inline void gather(const Blocks& x, std::size_t i, cd* out)
{
    for (const auto& f : x) out = gather(f, i, out);
}

inline void scatter(Blocks& x, std::size_t i, const cd* in)
{
    for (auto& f : x) {
        const int N = f.u.grid.dim;
        for (int j = 0; j < N; ++j) f.u.at(j, i) = *in++;
        for (int c = 0; c < N * N; ++c) f.Q.at(c, i) = *in++;
    }
}

// out = E x + P1 a + P2 b per mode (null arguments count as zero).
inline Blocks phi_combine(const PhiBank& bank, const Blocks* x, const Blocks* a, const Blocks* b)
{
    const GridSpec& g = bank.grid();
    const int N = g.dim, nb = bank.blocks(), n = nb * mode_size(N);
    Blocks out(nb, zero_pair(g));
    parallel_for(g.size(), [&](std::size_t lo, std::size_t hi) {
        DVec v(n), y(n);
        for (std::size_t i = lo; i < hi; ++i) {
            const PhiMatrices* P = bank.at(i);
            if (!P) continue;
            Mat3 R = bank.frame(i);
            y.setZero();
            auto term = [&](const Blocks* src, const DMat& M) {
                if (!src) return;
                gather(*src, i, v.data());
                frame_apply(R, N, nb, v.data());
                y.noalias() += M * v;
            };
            term(x, P->E);
            term(a, P->P1);
            term(b, P->P2);
            frame_apply(R, N, nb, y.data());
            scatter(out, i, y.data());
        }
    });
    return out;
}

// exp(t L) applied to a field pair, mode by mode.
inline FieldPair linear_evolve(const PropagatorBank& bank, const FieldPair& x, double t)
{
    const GridSpec& g = bank.grid();
    const int N = g.dim, n = mode_size(N);
    FieldPair out = zero_pair(g);
    parallel_for(g.size(), [&](std::size_t lo, std::size_t hi) {
        DVec v(n);
        for (std::size_t i = lo; i < hi; ++i) {
            const ModePropagator* P = bank.at(i);
            if (!P) continue;
            Mat3 R = bank.frame(i);
            gather(x, i, v.data());
            frame_apply(R, N, 1, v.data());
            DVec y = P->apply(t, v);
            frame_apply(R, N, 1, y.data());
            const cd* src = y.data();
            for (int j = 0; j < N; ++j) out.u.at(j, i) = *src++;
            for (int c = 0; c < N * N; ++c) out.Q.at(c, i) = *src++;
        }
    });
    return out;
}

// ---------------------------------------------------------------- IMEX stepping

inline void check_finite(const FieldPair& x, double t)
{
    const GridSpec& g = x.u.grid;
    auto scan = [&](const SpectralField& f, const char* name) {
        for (int c = 0; c < f.components; ++c)
            for (std::size_t i = 0; i < f.points(); ++i) {
                cd v = f.at(c, i);
                if (std::isfinite(v.real()) && std::isfinite(v.imag())) continue;
                auto k = g.unravel(i);
                std::string idx;
                for (int d = 0; d < g.dim; ++d) idx += (d ? "," : "") + std::to_string(g.signed_index(k[d]));
                throw Error(std::string("imex_step: non-finite ") + name + " component " + std::to_string(c) +
                            " at mode (" + idx + "), t = " + std::to_string(t));
            }
    };
    scan(x.u, "u");
    scan(x.Q, "Q");
}

class ImexStepper {
public:
    ImexStepper(const GridSpec& g, const SchemeConfig& cfg, const ModelParams& p)
        : cfg_(cfg), params_(p), bank_(make_phi_bank(g, cfg.dt, 1, linear_generator(p)))
    {
        cfg.validate();
        p.validate();
        g.validate();
        if (p.dim != g.dim) throw Error("scheme: model dim differs from grid dim");
        if (cfg.freeze_velocity && p.xi != 0) throw Error("scheme: freeze_velocity requires model.xi = 0");
    }

    const SchemeConfig& config() const { return cfg_; }
    const ModelParams& params() const { return params_; }
    const GridSpec& grid() const { return bank_.grid(); }

    // Explicit part (Leray f, g) at the given state.
    FieldPair forcing(const FieldPair& x) const
    {
        if (!cfg_.nonlinear) return zero_pair(grid());
        NonlinearOptions opt;
        opt.dealias = cfg_.dealias;
        FieldPair r = nonlinear_terms(x.u, x.Q, params_, opt);
        r.u = leray_project(std::move(r.u));
        if (cfg_.freeze_velocity) r.u = SpectralField(grid(), grid().dim);
        return r;
    }

    void step(SpectralState& s) const
    {
        Blocks x{s.x};
        if (cfg_.freeze_velocity) x[0].u = SpectralField(grid(), grid().dim);
        Blocks n0{forcing(x[0])};
        Blocks next = phi_combine(bank_, &x, &n0, nullptr);
        if (cfg_.kind == SchemeKind::ETDRK2 && cfg_.nonlinear) {
            Blocks diff{combine(forcing(next[0]), 1.0, n0[0], -1.0)};
            next[0] += phi_combine(bank_, nullptr, nullptr, &diff)[0];
        }
        FieldPair& y = next[0];
        if (cfg_.reproject) {
            y.u = leray_project(std::move(y.u));
            y.Q = symmetric_traceless(std::move(y.Q));
        }
        if (cfg_.freeze_velocity) y.u = SpectralField(grid(), grid().dim);
        check_finite(y, s.t + cfg_.dt);
        s.x = std::move(y);
        s.t += cfg_.dt;
        ++s.step;
    }

private:
    SchemeConfig cfg_;
    ModelParams params_;
    PhiBank bank_;
};

// One step from a physical state; builds the per-shell propagators each call.
inline SimState imex_step(const SimState& state, const SchemeConfig& cfg, const ModelParams& p)
{
    ImexStepper stepper(state.u.grid, cfg, p);
    SpectralState s{state.t, state.step_index, to_spectral(state)};
    stepper.step(s);
    return to_physical(s.t, s.step, s.x);
}

// ---------------------------------------------------------------- simulation driver

struct StepView {
    double t;
    long step;
    const FieldPair& x;
};

using Observer = std::function<void(const StepView&)>;

struct RunOptions {
    double T = 1.0;
    int cadence = 1;  // observers and diagnostics every `cadence` steps (and at the end)
    std::vector<Observer> observers;
    double blowup_factor = 1e6;
};

struct RunResult {
    SimState final_state;
    Series diagnostics;
    double dt = 0;
    long steps = 0;
    double max_cfl = 0;
    bool blew_up = false;
    std::string finding;
};

inline std::vector<std::string> diagnostic_columns()
{
    return {"t", "L2_u", "Linf_u", "L2_Q", "Linf_Q", "energy_F", "div_u", "trace_Q", "asym_Q", "cfl"};
}

struct StructureDefects {
    double div_u = 0, trace_Q = 0, asym_Q = 0;
};

inline StructureDefects structure_defects(const FieldPair& x)
{
    const int N = x.u.grid.dim;
    StructureDefects d;
    d.div_u = max_abs(inverse(divergence(x.u)));
    PhysicalField Q = inverse(x.Q);
    for (std::size_t i = 0; i < Q.points(); ++i) {
        double tr = 0;
        for (int r = 0; r < N; ++r) {
            tr += Q.at(r * N + r, i);
            for (int s = r + 1; s < N; ++s) d.asym_Q = std::max(d.asym_Q, std::abs(Q.at(r * N + s, i) - Q.at(s * N + r, i)));
        }
        d.trace_Q = std::max(d.trace_Q, std::abs(tr));
    }
    return d;
}

inline std::vector<double> diagnostic_row(const StepView& v, const ModelParams& p, double dt)
{
    VelocityField u(inverse(v.x.u));
    QTensorField Q(inverse(v.x.Q));
    auto defects = structure_defects(v.x);
    double umax = max_abs(u);
    return {v.t,
            lq_norm(u, 2),
            umax,
            lq_norm(Q, 2),
            max_abs(Q),
            bulk_energy(Q, p).total,
            defects.div_u,
            defects.trace_Q,
            defects.asym_Q,
            dt * umax / u.grid.spacing()};
}

inline RunResult run_simulation(const SimState& initial, const SchemeConfig& cfg, const ModelParams& p,
                                const RunOptions& opt)
{
    if (!(opt.T >= 0)) throw Error("run_simulation: T must be >= 0");
    if (opt.cadence < 1) throw Error("run_simulation: cadence must be >= 1");
    long nsteps = opt.T > 0 ? static_cast<long>(std::ceil(opt.T / cfg.dt - 1e-9)) : 0;
    SchemeConfig c = cfg;
    if (nsteps > 0) c.dt = opt.T / double(nsteps);  // land exactly on T
    ImexStepper stepper(initial.u.grid, c, p);

    RunResult res;
    res.dt = c.dt;
    res.diagnostics = Series(diagnostic_columns());
    SpectralState s{initial.t, initial.step_index, to_spectral(initial)};
    double baseline = std::max({max_abs(initial.u), max_abs(initial.Q), 1e-300});

    auto observe = [&] {
        StepView v{s.t, s.step, s.x};
        auto row = diagnostic_row(v, p, c.dt);
        res.max_cfl = std::max(res.max_cfl, row.back());
        res.diagnostics.add(row);
        for (auto& ob : opt.observers) ob(v);
        if (std::max(row[2], row[4]) > opt.blowup_factor * baseline) {
            res.blew_up = true;
            res.finding = "blow-up: sup norm exceeded " + std::to_string(opt.blowup_factor) + " x initial at t = " +
                          std::to_string(s.t);
        }
    };
    observe();
    for (long n = 0; n < nsteps && !res.blew_up; ++n) {
        try {
            stepper.step(s);
        } catch (const Error& e) {
            res.blew_up = true;
            res.finding = e.what();
            break;
        }
        if ((n + 1) % opt.cadence == 0 || n + 1 == nsteps) observe();
    }
    res.steps = s.step - initial.step_index;
    res.final_state = to_physical(s.t, s.step, s.x);
    return res;
}

// ---------------------------------------------------------------- forced linear systems

// Exact for forcing that is linear in time across each step:
// x_{n+1} = E x_n + P1 F_n + P2 (F_{n+1} - F_n).
class ForcedLinearStepper {
public:
    ForcedLinearStepper(const GridSpec& g, double h, int blocks, const GeneratorBuilder& gen)
        : bank_(make_phi_bank(g, h, blocks, gen))
    {
    }
    Blocks step(const Blocks& x, const Blocks& F0, const Blocks& F1) const
    {
        Blocks diff = F1;
        for (std::size_t b = 0; b < diff.size(); ++b) diff[b] = combine(F1[b], 1.0, F0[b], -1.0);
        return phi_combine(bank_, &x, &F0, &diff);
    }

private:
    PhiBank bank_;
};

// Simpson weights on n uniformly spaced samples (3/8 rule on the last three intervals when the
// interval count is odd).
inline std::vector<double> simpson_weights(std::size_t n, double h)
{
    if (n < 3) throw Error("duhamel: at least 3 samples needed");
    std::vector<double> w(n, 0.0);
    std::size_t intervals = n - 1, simpson_end = intervals;
    if (intervals % 2 == 1) {
        simpson_end = intervals - 3;
        std::size_t o = simpson_end;
        double c = 3 * h / 8;
        w[o] += c;
        w[o + 1] += 3 * c;
        w[o + 2] += 3 * c;
        w[o + 3] += c;
    }
    for (std::size_t j = 0; j + 2 <= simpson_end; j += 2) {
        w[j] += h / 3;
        w[j + 1] += 4 * h / 3;
        w[j + 2] += h / 3;
    }
    return w;
}

// e^{T L} U0 + weight * int_0^T e^{(T-s) L} F(s) ds with samples F(k h), k = 0..n-1, T = (n-1) h.
inline FieldPair duhamel_solve(const FieldPair& U0, std::span<const FieldPair> forcing, double h, double weight,
                               const PropagatorBank& bank)
{
    if (!(h > 0)) throw Error("duhamel: sample spacing must be positive");
    auto w = simpson_weights(forcing.size(), h);
    const double T = h * double(forcing.size() - 1);
    const GridSpec& g = bank.grid();
    const int N = g.dim, n = mode_size(N);
    Blocks out(1, zero_pair(g));
    parallel_for(g.size(), [&](std::size_t lo, std::size_t hi) {
        DVec v(n);
        for (std::size_t i = lo; i < hi; ++i) {
            const ModePropagator* P = bank.at(i);
            if (!P) continue;
            Mat3 R = bank.frame(i);
            gather(U0, i, v.data());
            frame_apply(R, N, 1, v.data());
            DVec acc = P->apply(T, v);
            for (std::size_t k = 0; k < forcing.size(); ++k) {
                gather(forcing[k], i, v.data());
                frame_apply(R, N, 1, v.data());
                acc += (weight * w[k]) * P->apply(T - double(k) * h, v);
            }
            frame_apply(R, N, 1, acc.data());
            scatter(out, i, acc.data());
        }
    });
    return std::move(out[0]);
}

inline FieldPair duhamel_solve(const FieldPair& U0, std::span<const FieldPair> forcing, double h, double weight,
                               const ModelParams& p)
{
    return duhamel_solve(U0, forcing, h, weight, make_propagator_bank(U0.u.grid, p));
}

struct SplitRun {
    double dt = 0;
    std::vector<double> times;
    std::vector<FieldPair> v1;  // shifted solution at every step, starting from (0, O)
    FieldPair v2, unsplit, trajectory;
    double recombination_error = 0;  // |v1 + v2 - unsplit| / |unsplit|
    double trajectory_gap = 0;       // |v1 + v2 - nonlinear trajectory| / |trajectory|
    double v1_initial_norm = 0;
};

// Freezes the nonlinear forcing (f, g) along a computed trajectory, then integrates the
// shifted system (zero data) and the compensation system (initial data, forcing l1 v1) as one
// coupled linear system, and the unsplit forced system for comparison.
inline SplitRun shifted_split_run(const SimState& initial, const SchemeConfig& cfg, const ModelParams& p, double T)
{
    if (!(T > 0)) throw Error("split: T must be > 0");
    long nsteps = static_cast<long>(std::ceil(T / cfg.dt - 1e-9));
    SchemeConfig c = cfg;
    c.dt = T / double(nsteps);
    const GridSpec& g = initial.u.grid;
    ImexStepper stepper(g, c, p);

    SpectralState s{initial.t, initial.step_index, to_spectral(initial)};
    const FieldPair U0 = s.x;
    std::vector<FieldPair> F;
    F.reserve(nsteps + 1);
    F.push_back(stepper.forcing(s.x));
    for (long n = 0; n < nsteps; ++n) {
        stepper.step(s);
        F.push_back(stepper.forcing(s.x));
    }

    SplitRun out;
    out.dt = c.dt;
    ForcedLinearStepper coupled(g, c.dt, 2, split_generator(p, c.lambda1));
    ForcedLinearStepper plain(g, c.dt, 1, linear_generator(p));
    const FieldPair zero = zero_pair(g);
    Blocks X{zero, U0}, Y{U0};
    out.v1.push_back(X[0]);
    out.times.push_back(0);
    out.v1_initial_norm = l2_coefficients(X[0]);
    for (long n = 0; n < nsteps; ++n) {
        X = coupled.step(X, Blocks{F[n], zero}, Blocks{F[n + 1], zero});
        Y = plain.step(Y, Blocks{F[n]}, Blocks{F[n + 1]});
        out.v1.push_back(X[0]);
        out.times.push_back(c.dt * double(n + 1));
    }
    out.v2 = X[1];
    out.unsplit = Y[0];
    out.trajectory = s.x;
    FieldPair sum = combine(out.v1.back(), 1.0, out.v2, 1.0);
    out.recombination_error = relative_difference(sum, out.unsplit);
    out.trajectory_gap = relative_difference(sum, out.trajectory);
    return out;
}

// ---------------------------------------------------------------- weighted norms

inline double bracket(double t) { return std::sqrt(1 + t * t); }

struct NormExponents {
    int dim = 3;
    double sigma_hat = 0.5;
    double p = 2.5, q1 = 2.5, q2 = 15, b = 0.6;
    bool outside_admissible_range = false;  // N = 2: the exponent conditions exist only for N >= 3

    // q2 = 0 selects N(2+s)/(N-2-s) for N = 3 and 4 for N = 2.
    static NormExponents make(int N, double sigma_hat, double q2 = 0)
    {
        if (!(sigma_hat > 0 && sigma_hat <= 0.5)) throw Error("norms: sigma must lie in (0, 1/2]");
        if (N < 2 || N > 3) throw Error("norms: dim must be 2 or 3");
        NormExponents e;
        e.dim = N;
        e.sigma_hat = sigma_hat;
        e.p = e.q1 = 2 + sigma_hat;
        e.b = N / (2 * (2 + sigma_hat));
        if (N == 3) {
            double lower = N * (2 + sigma_hat) / (N - (2 + sigma_hat));
            e.q2 = q2 > 0 ? q2 : lower;
            if (e.q2 < lower * (1 - 1e-12)) throw Error("norms: q2 below N(2+sigma)/(N-2-sigma)");
        } else {
            e.q2 = q2 > 0 ? q2 : 4.0;
            e.outside_admissible_range = true;
        }
        if (!(e.q2 > N)) throw Error("norms: q2 must exceed N");
        return e;
    }
    std::array<double, 3> qs() const { return {q1, q2, q1 / 2}; }
};

// Jet norms |grad^j .|_q at one time; index 0: q1, 1: q2, 2: q1/2.
struct NormSample {
    double t = 0;
    std::array<std::array<double, 4>, 3> u{}, Q{};    // u: j <= 2, Q: j <= 3
    std::array<double, 3> ut{};                        // |d_t u|_q
    std::array<std::array<double, 2>, 3> Qt{};         // |d_t Q|_q, |grad d_t Q|_q
    std::array<double, 3> f{};                         // |f|_q (quadratic part)
    std::array<std::array<double, 2>, 3> g{};          // |g|_q, |grad g|_q
};

inline NormSample norm_sample(double t, const FieldPair& x, const ModelParams& p, const NormExponents& e,
                              bool dealias = true)
{
    NormSample s;
    s.t = t;
    auto qs = e.qs();
    auto fill = [&](const SpectralField& h, int order, auto& dst) {
        auto table = jet_norms(h, order, qs);
        for (int j = 0; j <= order; ++j)
            for (int k = 0; k < 3; ++k) dst[k][j] = table[j][k];
    };
    fill(x.u, 2, s.u);
    fill(x.Q, 3, s.Q);

    NonlinearOptions full;
    full.dealias = dealias;
    FieldPair nl = nonlinear_terms(x.u, x.Q, p, full);
    FieldPair lin = linear_terms(x.u, x.Q, p);
    FieldPair dt{leray_project(nl.u), nl.Q};
    dt += lin;
    {
        auto tu = jet_norms(dt.u, 0, qs);
        auto tq = jet_norms(dt.Q, 1, qs);
        for (int k = 0; k < 3; ++k) {
            s.ut[k] = tu[0][k];
            s.Qt[k] = {tq[0][k], tq[1][k]};
        }
    }
    NonlinearOptions quad = full;
    quad.linear_defects = false;
    FieldPair fg = nonlinear_terms(x.u, x.Q, p, quad);
    auto tf = jet_norms(fg.u, 0, qs);
    auto tg = jet_norms(fg.Q, 1, qs);
    for (int k = 0; k < 3; ++k) {
        s.f[k] = tf[0][k];
        s.g[k] = {tg[0][k], tg[1][k]};
    }
    return s;
}

// Time functionals over samples: sup_t <t>^b F and (int <t>^{bp} F^p dt)^{1/p} (trapezoid).
template <class Fn>
double weighted_sup(std::span<const NormSample> s, Fn&& F, double b)
{
    double m = 0;
    for (auto& x : s) m = std::max(m, std::pow(bracket(x.t), b) * F(x));
    return m;
}

template <class Fn>
double weighted_lp(std::span<const NormSample> s, Fn&& F, double p, double b)
{
    double acc = 0;
    for (std::size_t i = 1; i < s.size(); ++i) {
        auto w = [&](const NormSample& x) { return std::pow(bracket(x.t), b * p) * std::pow(F(x), p); };
        acc += 0.5 * (s[i].t - s[i - 1].t) * (w(s[i]) + w(s[i - 1]));
    }
    return std::pow(acc, 1 / p);
}

struct NormTerms {
    std::array<double, 2> sup_w01{};     // q1, q2
    std::array<double, 2> lp_dt_w01{};   // q1, q2
    double lp_grad_w12_q1 = 0;
    double lp_w23_q2 = 0;
    double total() const { return sup_w01[0] + sup_w01[1] + lp_dt_w01[0] + lp_dt_w01[1] + lp_grad_w12_q1 + lp_w23_q2; }
};

inline NormTerms weighted_norm_terms(std::span<const NormSample> s, const NormExponents& e)
{
    NormTerms n;
    for (int k = 0; k < 2; ++k) {
        n.sup_w01[k] = weighted_sup(s, [k](const NormSample& x) { return x.u[k][0] + x.Q[k][0] + x.Q[k][1]; }, e.b);
        n.lp_dt_w01[k] =
            weighted_lp(s, [k](const NormSample& x) { return x.ut[k] + x.Qt[k][0] + x.Qt[k][1]; }, e.p, e.b);
    }
    n.lp_grad_w12_q1 = weighted_lp(
        s, [](const NormSample& x) { return x.u[0][1] + x.u[0][2] + x.Q[0][1] + x.Q[0][2] + x.Q[0][3]; }, e.p, e.b);
    n.lp_w23_q2 = weighted_lp(
        s,
        [](const NormSample& x) { return x.u[1][0] + x.u[1][1] + x.u[1][2] + x.Q[1][0] + x.Q[1][1] + x.Q[1][2] + x.Q[1][3]; },
        e.p, e.b);
    return n;
}

class NormTracker {
public:
    explicit NormTracker(NormExponents e) : exps_(e) {}
    const NormExponents& exponents() const { return exps_; }
    const std::vector<NormSample>& samples() const { return samples_; }
    void add(NormSample s)
    {
        if (!samples_.empty() && !(s.t > samples_.back().t)) throw Error("norm tracker: samples must advance in time");
        samples_.push_back(s);
    }
    NormTerms terms() const { return weighted_norm_terms(samples_, exps_); }
    double value() const { return terms().total(); }

private:
    NormExponents exps_;
    std::vector<NormSample> samples_;
};

inline void norm_tracker_update(NormTracker& tracker, double t, const FieldPair& x, const ModelParams& p,
                                bool dealias = true)
{
    tracker.add(norm_sample(t, x, p, tracker.exponents(), dealias));
}

struct BoundEntry {
    std::string name;
    double lhs = 0, rhs = 0;
    bool vacuous = false;
    double ratio() const { return vacuous ? 0.0 : lhs / rhs; }
};

struct BoundReport {
    std::vector<BoundEntry> entries;
    // largest ratio of each of the four inequalities over q
    std::array<double, 4> constants() const
    {
        std::array<double, 4> c{};
        for (auto& e : entries) {
            int k = e.name[4] - '1';
            if (k >= 0 && k < 4) c[k] = std::max(c[k], e.ratio());
        }
        return c;
    }
};

// Product-form bounds for f and g: left sides are <t>^b-weighted L^p-in-time norms of the
// quadratic parts; right sides are the displayed products of trajectory norms.
inline BoundReport nonlinear_bound_check(std::span<const NormSample> s, const NormExponents& e)
{
    const double p = e.p, b = e.b;
    auto sup = [&](auto F) { return weighted_sup(s, F, 0.0); };
    auto lpb = [&](auto F) { return weighted_lp(s, F, p, b); };
    auto U = [](int k, int j) { return [k, j](const NormSample& x) { return x.u[k][j]; }; };
    auto Qn = [](int k, int j) { return [k, j](const NormSample& x) { return x.Q[k][j]; }; };
    auto Qsum = [](int k, int lo, int hi) {
        return [k, lo, hi](const NormSample& x) {
            double r = 0;
            for (int j = lo; j <= hi; ++j) r += x.Q[k][j];
            return r;
        };
    };
    auto Usum = [](int k, int lo, int hi) {
        return [k, lo, hi](const NormSample& x) {
            double r = 0;
            for (int j = lo; j <= hi; ++j) r += x.u[k][j];
            return r;
        };
    };
    const int Q1 = 0, Q2 = 1, HALF = 2;
    BoundReport rep;
    auto add = [&](std::string name, double lhs, double rhs) {
        BoundEntry en{std::move(name), lhs, rhs, false};
        en.vacuous = !(rhs > 0);
        rep.entries.push_back(en);
    };
    const char* qn[2] = {"q1", "q2"};
    for (int k : {Q1, Q2}) {
        double lhs = lpb([k](const NormSample& x) { return x.f[k]; });
        double rhs = sup(U(k, 0)) * lpb(Usum(Q2, 1, 2)) + sup(Qsum(k, 0, 1)) * lpb(Qsum(Q2, 1, 3)) +
                     sup(Qsum(Q2, 0, 1)) * lpb(Qn(k, 3)) + sup(Qn(k, 1)) * lpb(Qsum(Q2, 2, 3));
        add(std::string("ineq1_f_Lq_") + qn[k], lhs, rhs);
    }
    {
        double lhs = lpb([](const NormSample& x) { return x.f[2]; });
        double rhs = sup(U(Q1, 0)) * lpb(U(Q1, 1)) + sup(Qsum(Q1, 0, 1)) * lpb(Qsum(Q1, 1, 3));
        add("ineq2_f_Lq1half", lhs, rhs);
    }
    for (int k : {Q1, Q2}) {
        double lhs = lpb([k](const NormSample& x) { return x.g[k][0] + x.g[k][1]; });
        double rhs = lpb(Usum(Q2, 1, 2)) * sup(Qsum(k, 0, 1)) + sup(U(k, 0)) * lpb(Qsum(Q2, 1, 3)) +
                     sup(Qn(k, 0)) * lpb(Qsum(Q2, 1, 2)) + sup(Qn(k, 0)) * lpb(Qsum(Q2, 0, 1));
        add(std::string("ineq3_g_W1q_") + qn[k], lhs, rhs);
    }
    {
        double lhs = lpb([](const NormSample& x) { return x.g[HALF][0] + x.g[HALF][1]; });
        double qsup_b = weighted_sup(s, Qn(Q1, 0), b);
        double rhs = lpb(Usum(Q1, 1, 2)) * sup(Qsum(Q1, 0, 1)) + sup(U(Q1, 0)) * lpb(Qn(Q1, 2)) +
                     sup(Qn(Q1, 0)) * lpb(Qn(Q1, 1)) + qsup_b * qsup_b;
        add("ineq4_g_W1q1half", lhs, rhs);
    }
    return rep;
}

} // namespace qtlab
