// Acceptance run: one PASS/FAIL line per primary criterion. Exit status is
// nonzero if any criterion fails.

#include "kiclab/cli.hpp"
#include "kiclab/labbench.hpp"
#include "kiclab/selftest.hpp"

#include "dfkic_stubs.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

using namespace kiclab;
namespace fs = std::filesystem;

namespace {

constexpr double kOff = -std::numeric_limits<double>::infinity();
const std::vector<int> kOrders{4, 8, 16, 32, 64, 128, 256};

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

double median(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int workers()
{
    return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

// The frozen rescue scenario (configs/quickstart.ini).
ScenarioConfig rescue_scenario()
{
    return build_manifest(read_config_file(fs::path(KICLAB_SOURCE_DIR) / "configs/quickstart.ini")).scenario;
}

Verdict zero_si_floor()
{
    std::string detail;
    bool pass = true;
    for (double inr : {20.0, 30.0, 40.0}) {
        std::vector<double> resid;
        for (std::uint64_t s = 1; s <= 10; ++s) {
            ScenarioConfig c;
            c.seed = RngSeed{s};
            c.mode = Mode::base_kic;
            c.n_frames = 1;
            c.ki_gain_db = inr;
            c.si_gain_db = kOff;
            if (c.dfkic.canceller.n_taps != 5 || c.ki_params.cfo_rad_per_sample != 1e-3 || c.ki_params.sfo_rate != 1e-5)
                return {false, "default KI channel does not match the criterion"};
            resid.push_back(run_scenario(c).residual_ki_db);
        }
        const double m = median(resid);
        pass = pass && m <= 3.0;
        detail += "INR " + fmt("%.0f", inr) + ": median residual " + fmt("%.2f", m) + " dB; ";
    }
    return {pass, detail + "bound 3 dB"};
}

Verdict si_as_estimation_noise()
{
    auto c = rescue_scenario();
    c.ki_gain_db = 56.0;
    std::vector<double> zero, base, df;
    for (std::uint64_t s = 1; s <= 3; ++s) {
        c.seed = RngSeed{s};
        c.mode = Mode::base_kic;
        c.si_gain_db = kOff;
        zero.push_back(run_scenario(c).residual_ki_db);
        c.si_gain_db = 50.0;
        base.push_back(run_scenario(c).residual_ki_db);
        c.mode = Mode::df_kic;
        df.push_back(run_scenario(c).residual_ki_db);
    }
    const double z = median(zero), b = median(base), d = median(df);
    return {b - z >= 10.0 && b - d >= 10.0,
            "median residual KI: zero-SI " + fmt("%.1f", z) + " dB, base " + fmt("%.1f", b) + " dB (+" +
                fmt("%.1f", b - z) + "), DF " + fmt("%.1f", d) + " dB (-" + fmt("%.1f", b - d) +
                " vs base); bounds +10 / -10"};
}

Verdict rescue()
{
    auto c = rescue_scenario();
    if (c.dfkic.ofdm.qam_order != 256 || c.ki_gain_db - c.si_gain_db != 6.0 || c.dfkic.max_iterations > 8)
        return {false, "quickstart config is not the frozen rescue scenario"};
    c.mode = Mode::base_kic;
    const auto base = run_scenario(c);
    c.mode = Mode::df_kic;
    const auto df = run_scenario(c);
    return {base.ser > 1e-1 && df.ser < 1e-3 && df.flags.find("diverged") == std::string::npos,
            "base SER " + fmt("%.3g", base.ser) + " (> 1e-1), DF SER " + fmt("%.3g", df.ser) + " (< 1e-3) with " +
                fmt("%.1f", df.iterations) + " mean iterations, K = 8"};
}

// First iteration whose KI-cancelled stream decodes frame 1 (warm estimators)
// at SER <= 1e-3, or -1. The quality gate is disabled so the loop only stops
// on revert or the iteration cap.
int iterations_to_target(int qam, double ki, double si)
{
    ScenarioConfig c;
    c.ki_gain_db = ki;
    c.si_gain_db = si;
    c.n_frames = 2;
    c.dfkic.ofdm = OfdmConfig::defaults(qam);
    c.dfkic.quality_target = 1e-9;
    c.dfkic.max_iterations = 8;
    const auto sim = simulate(c);
    std::vector<double> ser_by_iteration;
    const auto rep = run_scenario_report(c, [&](int frame, int, const ComplexSignal& e) {
        if (frame != 1)
            return;
        const auto dem = ofdm_demodulate(e, c.dfkic.ofdm, 0);
        ser_by_iteration.push_back(ser(dem.symbols, sim.truth[1]));
    });
    if (rep.frames.size() != 2)
        return -1;
    for (std::size_t k = 0; k < ser_by_iteration.size(); ++k)
        if (ser_by_iteration[k] <= 1e-3)
            return static_cast<int>(k);
    return -1;
}

Verdict iteration_monotonicity()
{
    std::string detail = "mean iterations to SER <= 1e-3:";
    bool pass = true;
    double prev = -1.0;
    for (int q : kOrders) {
        int sum = 0, n = 0;
        for (double ki : {44.0, 50.0, 56.0})
            for (double si : {30.0, 40.0, 50.0}) {
                const int k = iterations_to_target(q, ki, si);
                if (k >= 0) {
                    sum += k;
                    ++n;
                }
            }
        if (n == 0) {
            detail += " " + std::to_string(q) + "-QAM none;";
            pass = false;
            continue;
        }
        const double mean = static_cast<double>(sum) / n;
        detail += " " + std::to_string(q) + "-QAM " + fmt("%.2f", mean) + " (" + std::to_string(n) + "/9);";
        pass = pass && mean >= prev;
        if (q == 4)
            pass = pass && mean == 0.0;
        prev = mean;
    }
    return {pass, detail};
}

Verdict goodput_dominance()
{
    if (goodput(0.0, 256, 0.75) != 6.0)
        return {false, "goodput(0, 256-QAM, 3/4) != 6.0"};
    bool every = true;
    bool strict = false;
    int worst_order = 0;
    double worst = std::numeric_limits<double>::infinity();
    for (int q : kOrders) {
        ScenarioConfig c;
        c.n_frames = 2;
        c.dfkic.ofdm = OfdmConfig::defaults(q);
        const auto rows =
            sweep_grid(c, {44, 56, 6}, {30, 50, 10}, {Mode::base_kic, Mode::df_kic}, 1, workers());
        const double n = static_cast<double>(c.n_frames) * c.dfkic.ofdm.symbols_per_frame * c.dfkic.ofdm.data_subcarriers();
        const double bits = std::log2(static_cast<double>(q)) * c.code_rate;
        for (std::size_t i = 0; i + 1 < rows.size(); i += 2) {
            const auto& base = rows[i];
            const auto& df = rows[i + 1];
            // Three standard errors of the SER difference, at least one symbol.
            const double sd = std::sqrt(base.ser * (1 - base.ser) / n + df.ser * (1 - df.ser) / n);
            const double tol = bits * std::max(3.0 * sd, 1.0 / n);
            const double margin = df.goodput_bps - base.goodput_bps;
            if (margin + tol < worst) {
                worst = margin + tol;
                worst_order = q;
            }
            every = every && margin >= -tol;
            strict = strict || (df.ki_db == 56.0 && margin > tol);
        }
    }
    return {every && strict, std::string("DF >= base within SER error at all 63 points: ") + (every ? "yes" : "no") +
                                 " (smallest slack " + fmt("%.3g", worst) + " b/sym at " +
                                 std::to_string(worst_order) + "-QAM); strictly higher at KI 56 dB: " +
                                 (strict ? "yes" : "no")};
}

Verdict numerical_hygiene()
{
    int failed = 0;
    std::string detail;
    for (const auto& c : run_selftest()) {
        const bool relevant = c.name.rfind("gradient", 0) == 0 || c.name.rfind("modem", 0) == 0 ||
                              c.name.rfind("interp", 0) == 0;
        if (!relevant)
            continue;
        if (!c.passed()) {
            ++failed;
            detail += c.name + " " + fmt("%.2e", c.value) + " > " + fmt("%.0e", c.tolerance) + "; ";
        }
    }
    const double ge = gradient_check_phase(1, 2000);
    const double gt = gradient_check_timing(2, 2000);
    double modem = 0.0;
    for (int q : kOrders)
        modem = std::max(modem, modem_roundtrip_evm(q));
    const double nodes = interp_node_error();
    const double lin = interp_linear_derivative_error();
    const bool pass = failed == 0 && ge < 1e-4 && gt < 1e-4 && modem < 1e-10 && nodes == 0.0 && lin < 1e-12;
    return {pass, detail + "gradient rel. error eps " + fmt("%.1e", ge) + ", tau " + fmt("%.1e", gt) +
                      "; modem EVM max " + fmt("%.1e", modem) + "; interp nodes " + fmt("%.1e", nodes) +
                      ", linear derivative " + fmt("%.1e", lin)};
}

Verdict control_flow()
{
    using namespace kiclab::stubs;
    std::vector<std::string> failures;
    auto expect = [&](bool ok, const char* what) {
        if (!ok)
            failures.emplace_back(what);
    };
    const auto cfg = small_config(0.1);
    const auto d = noise_like(cfg.ofdm.frame_len(), 1);

    {
        Script sc{{0.5, 0.05}};
        const auto r = df_kic(d, d, cfg, 0, {}, sc.stages());
        expect(r.iterations_used == 0 && sc.cancel_calls == 1 && tag(r) == 1, "early exit");
    }
    {
        Script sc{{0.08, 0.3}};
        const auto r = df_kic(d, d, cfg, 0, {}, sc.stages());
        expect(r.iterations_used == 0 && tag(r) == 0 && r.chosen_branch_trace.front() == Branch::received,
               "branch selection (received stream)");
        Script sc2{{0.3, 0.2, 0.05}};
        const auto r2 = df_kic(d, d, cfg, 0, {}, sc2.stages());
        expect(sc2.modulated_tags == std::vector<int>{1} && r2.chosen_branch_trace.front() == Branch::ki_cancelled,
               "branch selection (cancelled stream)");
    }
    {
        Script sc{{0.9, 0.5, 0.6}};
        const auto r = df_kic(d, d, cfg, 0, {}, sc.stages());
        expect(r.iterations_used == 1 && tag(r) == 1 && r.records.back().decision == "reverted", "revert at k = 1");
        Script sc2{{0.9, 0.5, 0.4, 0.45}};
        const auto r2 = df_kic(d, d, cfg, 0, {}, sc2.stages());
        expect(r2.iterations_used == 2 && tag(r2) == 2, "revert at k = 2");
    }
    {
        auto ki = init_state(cfg.canceller);
        ki.eps_hat = 0.25;
        auto si = init_state(cfg.canceller);
        si.eta_hat = -3e-6;
        Script sc{{0.9, 0.5, 0.4, 0.3, 0.2}};
        const auto r = df_kic(d, d, small_config(0.01, 3), 0, {ki, si}, sc.stages());
        bool ok = r.records.size() == 4 && r.records[0].ki_state_in == fingerprint(ki) &&
                  r.records[1].si_state_in == fingerprint(si);
        for (std::size_t k = 1; ok && k < r.records.size(); ++k) {
            ok = r.records[k].ki_state_in == r.records[k - 1].ki_state_out;
            if (k > 1)
                ok = ok && r.records[k].si_state_in == r.records[k - 1].si_state_out;
        }
        expect(ok && fingerprint(r.ki_state) == r.records.back().ki_state_out, "warm-restart state threading");
    }
    std::string detail = "early exit, branch selection, revert-on-worse, warm-state threading";
    for (const auto& f : failures)
        detail += "; FAILED " + f;
    return {failures.empty(), detail};
}

Verdict determinism()
{
    const auto dir = fs::temp_directory_path() / "kiclab_acceptance_determinism";
    fs::remove_all(dir);
    const std::vector<std::string> grid{"--set", "sweep.ki_db=44:56:6", "--set", "sweep.si_db=30:40:10",
                                        "--set", "sweep.seeds=2",        "--set", "ofdm.qam=64",
                                        "--set", "scenario.n_frames=1",  "--set", "ofdm.symbols_per_frame=100"};
    std::ostringstream sink;
    std::vector<std::string> files;
    for (const char* w : {"1", "4", "4"}) {
        const auto path = (dir / ("rows_" + std::to_string(files.size()) + ".csv")).string();
        std::vector<std::string> args{"sweep", "-o", path, "-j", w};
        args.insert(args.end(), grid.begin(), grid.end());
        if (run_cli(args, sink, sink) != 0)
            return {false, "sweep failed: " + sink.str()};
        std::ifstream in(path, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        files.push_back(ss.str());
    }
    fs::remove_all(dir);
    const bool pass = files[0] == files[1] && files[1] == files[2] && !files[0].empty();
    return {pass, "24-row sweep, workers 1 / 4 / 4 (repeat): " + std::string(pass ? "byte-identical" : "differ")};
}

} // namespace

int main()
{
    struct Criterion {
        int id;
        const char* name;
        double budget_s; // 0: none stated
        std::function<Verdict()> run;
    };
    const std::vector<Criterion> criteria{
        {1, "zero-SI floor", 60, zero_si_floor},
        {2, "SI as estimation noise", 300, si_as_estimation_noise},
        {3, "rescue scenario", 120, rescue},
        {4, "iteration-count monotonicity", 0, iteration_monotonicity},
        {5, "goodput", 0, goodput_dominance},
        {6, "numerical hygiene", 0, numerical_hygiene},
        {7, "control-flow suite", 0, control_flow},
        {8, "determinism", 0, determinism},
    };

    int failed = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = c.run();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (c.budget_s > 0 && secs > c.budget_s) {
            v.pass = false;
            v.detail += "; over the " + fmt("%.0f", c.budget_s) + " s budget";
        }
        failed += !v.pass;
        std::cout << "criterion " << c.id << " [" << c.name << "]: " << (v.pass ? "PASS" : "FAIL") << " ("
                  << fmt("%.1f", secs) << " s) " << v.detail << std::endl;
    }
    std::cout << (failed == 0 ? "all primary criteria passed" : std::to_string(failed) + " criteria failed")
              << std::endl;
    return failed == 0 ? 0 : 1;
}
