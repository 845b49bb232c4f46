// Acceptance gate: one line per criterion, at the documented tolerances and runtime budgets.
// QTLAB_ACCEPT_N3=1 adds the optional three-dimensional linear-decay run.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>

#include "qtlab/qtlab.hpp"

using namespace qtlab;

namespace {

struct Criterion {
    int id;
    std::string name;
    double budget_s;
    std::function<std::vector<Check>()> run;
    bool optional = false;
};

std::vector<Check> select(const Report& rep, std::initializer_list<const char*> prefixes)
{
    std::vector<Check> out;
    for (auto& c : rep.checks)
        for (auto* p : prefixes)
            if (c.name.rfind(p, 0) == 0) out.push_back(c);
    if (out.empty()) throw Error("acceptance: no matching checks in " + rep.title);
    return out;
}

RunConfig base_config()
{
    RunConfig c;
    c.output_dir = "acceptance-out";
    return c;
}

RunConfig decay_config(int N, int M, double L)
{
    RunConfig c = base_config();
    c.grid = GridSpec{N, M, L};
    c.model.dim = N;
    c.init.width = 1;
    c.experiment.time_samples = 48;
    return c;
}

} // namespace

int main()
{
    std::vector<Criterion> criteria;
    criteria.push_back({1, "symbol/oracle equivalence", 10, [] {
                            return select(symbols_check(base_config()), {"resolvent symbols"});
                        }});
    criteria.push_back({2, "resolvent estimate quotient", 30, [] {
                            return select(resolvent_check(base_config()), {"estimate quotient"});
                        }});
    criteria.push_back({3, "root asymptotics", 1, [] {
                            RunConfig c = base_config();
                            return select(symbols_check(c), {"low-frequency root", "high-frequency roots"});
                        }});
    criteria.push_back({4, "contour semigroup vs matrix exponential", 60, [] {
                            return select(semigroup_check(base_config()),
                                          {"contour quadrature", "sector path", "low-frequency paths",
                                           "high-frequency paths"});
                        }});
    criteria.push_back({5, "heat-trace decay", 120, [] {
                            return select(heat_trace_experiment(decay_config(2, 512, 200)),
                                          {"d vs periodic", "sup-norm decay"});
                        }});
    criteria.push_back({6, "linearized L-infinity decay, N = 2", 15 * 60, [] {
                            return select(linear_decay_experiment(decay_config(2, 512, 200)), {"L-infinity"});
                        }});
    criteria.push_back({6, "linearized L-infinity decay, N = 3", 15 * 60,
                        [] {
                            RunConfig c = decay_config(3, 128, 200);
                            return select(linear_decay_experiment(c), {"L-infinity"});
                        },
                        true});
    criteria.push_back({7, "split/decomposition identity", 10, [] {
                            return select(split_identity_check(base_config()), {"unsplit rhs"});
                        }});
    criteria.push_back({8, "structure preservation", 120, [] {
                            RunConfig c = base_config();
                            c.init.kind = "noise";
                            c.init.epsilon = 0;
                            c.init.amplitude = 0.5;
                            c.scheme.dt = 1e-3;
                            return select(structure_check(c, 1000), {"run completed", "sup |"});
                        }});
    criteria.push_back({9, "variational derivative", 5, [] {
                            return select(variational_check(base_config()), {"bulk derivative"});
                        }});
    criteria.push_back({10, "Duhamel identity and recombination", 120, [] {
                            return select(duhamel_check(base_config()), {"Duhamel", "v1 + v2"});
                        }});
    criteria.push_back({11, "small-data boundedness", 300, [] {
                            RunConfig c = base_config();
                            c.grid = GridSpec{2, 128, 2 * pi};
                            c.T = 50;
                            c.auto_dt = true;
                            return select(small_data_check(c, 1e-3), {"runs completed", "weighted norm", "halving"});
                        }});
    criteria.push_back({12, "gradient-flow dissipation", 60, [] {
                            RunConfig c = base_config();
                            c.init.epsilon = 0;
                            c.init.amplitude = 0.5;
                            c.T = 2;
                            c.scheme.dt = 1e-2;
                            return select(gradient_flow_check(c), {"run completed", "largest per-step"});
                        }});

    const bool with_n3 = std::getenv("QTLAB_ACCEPT_N3") && std::string(std::getenv("QTLAB_ACCEPT_N3")) == "1";
    int failed = 0;
    for (auto& cr : criteria) {
        if (cr.optional && !with_n3) {
            std::printf("[SKIP] %2d %s (optional; set QTLAB_ACCEPT_N3=1)\n", cr.id, cr.name.c_str());
            std::fflush(stdout);
            continue;
        }
        auto t0 = std::chrono::steady_clock::now();
        std::vector<Check> checks;
        std::string error;
        try {
            checks = cr.run();
        } catch (const std::exception& e) {
            error = e.what();
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        bool ok = error.empty() && secs <= cr.budget_s;
        std::string summary;
        for (auto& c : checks) {
            ok = ok && c.pass;
            if (!summary.empty()) summary += "; ";
            summary += (c.pass ? "" : "FAILED ") + c.name + " = " + fmtg(c.value, 4) + " (<= " + fmtg(c.limit, 3) + ")";
        }
        if (!error.empty()) summary = "error: " + error;
        if (secs > cr.budget_s) summary += "; over runtime budget";
        std::printf("[%s] %2d %s [%.1fs / %.0fs]: %s\n", ok ? "PASS" : "FAIL", cr.id, cr.name.c_str(), secs,
                    cr.budget_s, summary.c_str());
        std::fflush(stdout);
        if (!ok && !cr.optional) ++failed;
    }
    std::printf("%d criteria failed\n", failed);
    return failed == 0 ? 0 : 1;
}
