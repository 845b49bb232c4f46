#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "qtlab/experiments.hpp"

using namespace qtlab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name)
{
    auto d = fs::temp_directory_path() / ("qtlab_io_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

RunConfig parse(const std::string& text)
{
    std::istringstream in(text);
    return parse_config(in, "test.cfg");
}

std::string error_of(const std::string& text)
{
    try {
        parse(text);
    } catch (const Error& e) {
        return e.what();
    }
    return "";
}

// tag balance plus a root <svg> element; enough to catch broken output
bool well_formed_svg(const std::string& s)
{
    std::regex tag(R"(<(/?)([a-zA-Z]+)[^>]*?(/?)>)");
    std::vector<std::string> stack;
    bool saw_svg = false;
    for (auto it = std::sregex_iterator(s.begin(), s.end(), tag); it != std::sregex_iterator(); ++it) {
        const auto& m = *it;
        std::string name = m[2];
        if (m[1] == "/") {
            if (stack.empty() || stack.back() != name) return false;
            stack.pop_back();
        } else if (m[3] != "/") {
            if (name == "svg") saw_svg = true;
            stack.push_back(name);
        }
    }
    return saw_svg && stack.empty();
}

} // namespace

TEST(Config, MinimalFileGetsDefaults)
{
    auto cfg = parse("# only the grid\ngrid.M = 64\n");
    RunConfig defaults;
    EXPECT_EQ(cfg.grid.points, 64);
    EXPECT_TRUE(cfg == defaults);
    auto echo = config_text(cfg);
    for (auto& k : config_keys()) EXPECT_NE(echo.find(k.key + " = "), std::string::npos) << k.key;
}

TEST(Config, RejectsBadInputWithLineNumber)
{
    auto e = error_of("grid.M = 32\n\nmodel.a = -1\n");
    EXPECT_NE(e.find("test.cfg:3"), std::string::npos) << e;
    EXPECT_NE(e.find("model.a"), std::string::npos) << e;
    EXPECT_NE(error_of("grid.Q = 3\n").find("unknown key"), std::string::npos);
    EXPECT_NE(error_of("grid.M = 32\ngrid.M = 64\n").find("duplicate"), std::string::npos);
    EXPECT_NE(error_of("grid.M 32\n").find("malformed"), std::string::npos);
    EXPECT_NE(error_of("grid.M =\n").find("malformed"), std::string::npos);
    EXPECT_NE(error_of("grid.M = 48\n").find(":1"), std::string::npos);
    EXPECT_NE(error_of("grid.M = abc\n"), "");
}

TEST(Config, EchoRoundTrips)
{
    auto cfg = parse("grid.dim = 3\ngrid.M = 16\nmodel.xi = 0.7\nscheme.dt = 0.002\ninit.kind = noise\n");
    auto again = parse(config_text(cfg));
    EXPECT_TRUE(cfg == again);
    EXPECT_EQ(config_text(cfg), config_text(again));
    EXPECT_EQ(again.grid.dim, 3);
    EXPECT_EQ(again.model.dim, 3);
}

TEST(Config, HelpListsEveryKeyWithDefault)
{
    auto h = help_text();
    RunConfig defaults;
    for (auto& k : config_keys()) EXPECT_NE(h.find(k.key + " = " + k.get(defaults)), std::string::npos) << k.key;
}

TEST(Snapshot, BitIdenticalRoundTrip)
{
    auto dir = scratch("snap");
    for (int N : {2, 3}) {
        GridSpec g{N, N == 2 ? 32 : 8, 7.5};
        std::mt19937_64 rng(3);
        auto x = random_smooth_pair(g, rng, 1.0, 0.3);
        SimState s = to_physical(1.25, 4, x);
        ModelParams p;
        p.dim = N;
        p.xi = 0.4;
        p.a = 0.8;
        auto path = (dir / ("s" + std::to_string(N) + ".qtns")).string();
        save_snapshot(s, p, path);
        auto back = load_snapshot(path);
        EXPECT_EQ(back.state.u.data, s.u.data);
        EXPECT_EQ(back.state.Q.data, s.Q.data);
        EXPECT_EQ(back.state.t, 1.25);
        EXPECT_EQ(back.params.xi, 0.4);
        EXPECT_EQ(back.params.a, 0.8);
        EXPECT_EQ(back.state.u.grid.length, 7.5);
        EXPECT_EQ(lq_norm(back.state.Q, 2), lq_norm(s.Q, 2));
        EXPECT_EQ(lq_norm(back.state.u, 2), lq_norm(s.u, 2));
    }
}

TEST(Snapshot, CorruptFilesAreRejected)
{
    auto dir = scratch("corrupt");
    GridSpec g{2, 16, 2 * pi};
    SimState s{0, VelocityField(g), QTensorField(g), 0};
    ModelParams p;
    auto good = (dir / "good.qtns").string();
    save_snapshot(s, p, good);
    auto bytes = slurp(good);

    auto bad = (dir / "bad.qtns").string();
    {
        std::ofstream out(bad, std::ios::binary);
        out << "XTNS" << bytes.substr(4);
    }
    try {
        load_snapshot(bad);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
    }
    auto cut = (dir / "cut.qtns").string();
    {
        std::ofstream out(cut, std::ios::binary);
        out << bytes.substr(0, bytes.size() / 2);
    }
    try {
        load_snapshot(cut);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos) << e.what();
    }
    EXPECT_THROW(load_snapshot((dir / "missing.qtns").string()), Error);
}

TEST(Csv, EmptySeriesWritesHeaderOnly)
{
    auto dir = scratch("csv_empty");
    Series s({"t", "L2_u"});
    write_diagnostics(s, (dir / "e.csv").string());
    EXPECT_EQ(slurp(dir / "e.csv"), "t,L2_u\n");
    auto back = read_diagnostics((dir / "e.csv").string());
    EXPECT_EQ(back.columns, s.columns);
    EXPECT_TRUE(back.empty());
}

TEST(Csv, ReloadEqualsMemory)
{
    auto dir = scratch("csv");
    Series s({"t", "energy_F", "ratio"});
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> d(-1e3, 1e3);
    for (int k = 0; k < 50; ++k) s.add({0.1 * k, d(rng) * 1e-9, d(rng)});
    s.add({1.0 / 3.0, std::numeric_limits<double>::infinity(), -0.0});
    write_diagnostics(s, (dir / "r.csv").string());
    EXPECT_TRUE(read_diagnostics((dir / "r.csv").string()) == s);
}

TEST(Svg, WellFormedWithGuide)
{
    auto dir = scratch("svg");
    PlotLine l{"decay <t>", {}};
    for (int k = 0; k < 40; ++k) {
        double t = std::pow(10.0, 0.1 * k);
        l.points.emplace_back(t, std::pow(t, -1.5));
    }
    auto path = (dir / "p.svg").string();
    emit_plot({l}, PlotKind::LogLog, path, {{-1.5, "slope -3/2"}}, "synthetic & decay");
    auto s = slurp(path);
    EXPECT_TRUE(well_formed_svg(s));
    EXPECT_NE(s.find("slope -3/2"), std::string::npos);
    EXPECT_NE(s.find("stroke-dasharray"), std::string::npos);
    EXPECT_NE(s.find("&lt;t&gt;"), std::string::npos);
    EXPECT_THROW(emit_plot({PlotLine{"x", {}}}, PlotKind::LogLog, path), Error);
    EXPECT_THROW(emit_plot({PlotLine{"x", {{1, -1}}}}, PlotKind::LogLog, path), Error);
    emit_plot({PlotLine{"lin", {{0, -1}, {1, 2}}}}, PlotKind::Linear, path);
    EXPECT_TRUE(well_formed_svg(slurp(path)));
}

TEST(Svg, HeatPlotCarriesDimensionalGuide)
{
    RunConfig c;
    c.grid = GridSpec{2, 64, 40};
    c.init.width = 1;
    c.experiment.time_samples = 12;
    c.output_dir = scratch("heat").string();
    auto rep = heat_trace_experiment(c);
    ASSERT_FALSE(rep.plots.empty());
    bool found = false;
    for (auto& p : rep.plots)
        for (auto& g : p.guides) found = found || g.slope == -1.0;
    EXPECT_TRUE(found);
    write_report(rep, c);
    for (auto& p : rep.plots) EXPECT_TRUE(well_formed_svg(slurp(fs::path(c.output_dir) / p.file))) << p.file;
}

TEST(InitialData, DeterministicAndStructured)
{
    for (int N : {2, 3}) {
        GridSpec g{N, N == 2 ? 32 : 16, 2 * pi};
        auto e = NormExponents::make(N, 0.5);
        for (std::string kind : {"gaussian", "noise"}) {
            InitSpec spec;
            spec.kind = kind;
            spec.epsilon = 1e-3;
            auto a = generate_initial_data(spec, g, e, 42), b = generate_initial_data(spec, g, e, 42);
            EXPECT_EQ(a.state.u.data, b.state.u.data);
            EXPECT_EQ(a.state.Q.data, b.state.Q.data);
            auto c = generate_initial_data(spec, g, e, 43);
            EXPECT_NE(a.state.u.data, c.state.u.data);

            auto x = to_spectral(a.state);
            auto d = structure_defects(x);
            EXPECT_LT(d.div_u, 1e-12 * std::max(1.0, max_abs(a.state.u)));
            double tr = 0;
            for (std::size_t i = 0; i < g.size(); ++i) {
                double s = 0;
                for (int r = 0; r < N; ++r) s += a.state.Q.at(r * N + r, i);
                tr = std::max(tr, std::abs(s));
            }
            EXPECT_LT(tr, 1e-14) << kind;
            EXPECT_NEAR(a.data_norm, 1e-6, 1e-12) << kind << " N=" << N;
        }
    }
}

TEST(InitialData, AmplitudeUsedWhenEpsilonZero)
{
    GridSpec g{2, 32, 2 * pi};
    auto e = NormExponents::make(2, 0.5);
    InitSpec spec;
    spec.epsilon = 0;
    spec.amplitude = 1;
    auto one = generate_initial_data(spec, g, e, 1);
    spec.amplitude = 3;
    auto three = generate_initial_data(spec, g, e, 1);
    EXPECT_NEAR(max_abs(three.state.Q), 3 * max_abs(one.state.Q), 1e-12);
    spec.kind = "zero";
    EXPECT_EQ(max_abs(generate_initial_data(spec, g, e, 1).state.u), 0.0);
}

TEST(Determinism, RepeatedRunsWriteIdenticalOutput)
{
    auto run = [](const std::string& name) {
        RunConfig c;
        c.grid = GridSpec{2, 32, 2 * pi};
        c.T = 0.2;
        c.scheme.dt = 0.01;
        c.cadence = 2;
        c.seed = 9;
        c.output_dir = scratch(name).string();
        write_report(simulate(c), c);
        return c.output_dir;
    };
    auto a = run("det_a"), b = run("det_b");
    EXPECT_FALSE(slurp(fs::path(a) / "diagnostics.csv").empty());
    EXPECT_EQ(slurp(fs::path(a) / "diagnostics.csv"), slurp(fs::path(b) / "diagnostics.csv"));
    EXPECT_EQ(slurp(fs::path(a) / "final.qtns"), slurp(fs::path(b) / "final.qtns"));
    auto header = read_diagnostics((fs::path(a) / "diagnostics.csv").string()).columns;
    for (std::string col : {"t", "L2_u", "Linf_u", "W01_q1", "energy_F", "N_norm_partial"})
        EXPECT_NE(std::find(header.begin(), header.end(), col), header.end()) << col;
}
