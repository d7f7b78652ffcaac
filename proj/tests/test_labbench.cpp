#include "kiclab/labbench.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>

using namespace kiclab;

namespace {

ScenarioConfig small_scenario(int qam = 4, int symbols = 20)
{
    ScenarioConfig c;
    c.dfkic.ofdm = OfdmConfig::defaults(qam, symbols);
    c.n_frames = 1;
    return c;
}

int uniform_int(Rng& rng, int lo, int hi)
{
    return lo + static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
}

SweepRow random_row(Rng& rng)
{
    SweepRow r;
    r.ki_db = std::round(rng.uniform() * 600.0) / 10.0;
    r.si_db = rng.uniform() * 50.0;
    r.mode = static_cast<Mode>(uniform_int(rng, 0, 2));
    r.qam = 1 << uniform_int(rng, 2, 8);
    r.residual_ki_db = rng.uniform() < 0.1 ? -std::numeric_limits<double>::infinity() : rng.normal() * 10.0;
    r.post_kic_sinr_db = rng.uniform() < 0.1 ? std::nan("") : rng.normal() * 30.0;
    r.ser = rng.uniform() * 1e-3;
    r.evm = rng.uniform();
    r.iterations = uniform_int(rng, 0, 16) / 2.0;
    r.goodput_bps = goodput(r.ser, r.qam, 0.75);
    r.seed = static_cast<std::uint64_t>(uniform_int(rng, 0, 1000000)) * 1000003ULL;
    r.flags = rng.uniform() < 0.3 ? "reverted;si_off" : "";
    return r;
}

bool same(const SweepRow& a, const SweepRow& b)
{
    auto eq = [](double x, double y) { return (std::isnan(x) && std::isnan(y)) || x == y; };
    return a.ki_db == b.ki_db && a.si_db == b.si_db && a.mode == b.mode && a.qam == b.qam &&
           eq(a.residual_ki_db, b.residual_ki_db) && eq(a.post_kic_sinr_db, b.post_kic_sinr_db) && a.ser == b.ser &&
           eq(a.evm, b.evm) && a.iterations == b.iterations && a.goodput_bps == b.goodput_bps && a.seed == b.seed &&
           a.flags == b.flags;
}

} // namespace

TEST_CASE("goodput")
{
    CHECK(goodput(0.0, 256, 0.75) == 6.0);
    CHECK(goodput(0.0, 4, 1.0) == 2.0);
    CHECK(goodput(0.5, 16, 0.5) == 1.0);
    CHECK(goodput(1.0, 64, 0.75) == 0.0);
    CHECK_THROWS_AS(goodput(-0.1, 4, 0.75), ValidationError);
    CHECK_THROWS_AS(goodput(1.1, 4, 0.75), ValidationError);
    CHECK_THROWS_AS(goodput(0.0, 1, 0.75), ValidationError);
}

TEST_CASE("symbol error rate")
{
    const auto cfg = OfdmConfig::defaults(16, 2);
    const auto n = static_cast<std::size_t>(2 * cfg.data_subcarriers());
    std::vector<int> idx(n, 3);
    const auto truth = frame_from_indices(cfg, idx);
    CHECK(ser(truth, truth) == 0.0);
    idx[0] = 4;
    idx[n - 1] = 5;
    CHECK(ser(frame_from_indices(cfg, idx), truth) == doctest::Approx(2.0 / static_cast<double>(n)));
    const auto other = frame_from_indices(OfdmConfig::defaults(16, 3), std::vector<int>(n * 3 / 2, 3));
    CHECK_THROWS_AS(ser(other, truth), ValidationError);
}

TEST_CASE("modes")
{
    for (Mode m : {Mode::no_ki, Mode::base_kic, Mode::df_kic})
        CHECK(parse_mode(to_string(m)) == m);
    CHECK_THROWS_AS(parse_mode("dfkic"), ValidationError);
}

TEST_CASE("scenario validation")
{
    auto c = small_scenario();
    CHECK_NOTHROW(c.validate());
    c.ki_gain_db = -std::numeric_limits<double>::infinity();
    CHECK_NOTHROW(c.validate());
    c.ki_gain_db = std::nan("");
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = small_scenario();
    c.n_frames = 0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = small_scenario();
    c.code_rate = 0.0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = small_scenario();
    c.transient_fraction = 1.0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = small_scenario();
    c.noise_variance = 0.0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("simulated components")
{
    auto c = small_scenario();
    c.n_frames = 2;
    c.ki_gain_db = 30.0;
    c.si_gain_db = 20.0;
    const auto sim = simulate(c);
    const auto len = 2 * c.dfkic.ofdm.frame_len();
    CHECK(sim.d.size() == len);
    CHECK(sim.x.size() == len);
    CHECK(sim.truth.size() == 2);
    CHECK(linear_to_db(mean_power(sim.rx_ki)) == doctest::Approx(30.0).epsilon(0.02));
    CHECK(linear_to_db(mean_power(sim.rx_si)) == doctest::Approx(20.0).epsilon(0.05));
    // d minus the two components is the unit-variance noise.
    std::vector<cplx> n(len);
    for (std::size_t i = 0; i < len; ++i)
        n[i] = sim.d.samples[i] - sim.rx_ki.samples[i] - sim.rx_si.samples[i];
    CHECK(mean_power(std::span<const cplx>(n)) == doctest::Approx(1.0).epsilon(0.05));

    c.mode = Mode::no_ki;
    const auto off = simulate(c);
    CHECK(mean_power(off.rx_ki) == 0.0);
    CHECK(off.rx_si.samples == sim.rx_si.samples);
}

TEST_CASE("no KI recovers 4-QAM cleanly")
{
    auto c = small_scenario(4, 100);
    c.mode = Mode::no_ki;
    c.si_gain_db = 40.0;
    const auto row = run_scenario(c);
    CHECK(c.dfkic.ofdm.symbols_per_frame * c.dfkic.ofdm.data_subcarriers() >= 10000);
    CHECK(row.ser == 0.0);
    CHECK(row.goodput_bps == 1.5);
    CHECK(std::isinf(row.residual_ki_db));
    CHECK(row.residual_ki_db < 0.0);
}

TEST_CASE("base KIC reaches the noise floor without SI")
{
    ScenarioConfig c;
    c.n_frames = 1;
    c.mode = Mode::base_kic;
    c.ki_gain_db = 40.0;
    c.si_gain_db = -std::numeric_limits<double>::infinity();
    const auto row = run_scenario(c);
    MESSAGE("residual " << row.residual_ki_db << " dB");
    CHECK(row.residual_ki_db <= 3.0);
    CHECK(row.flags == "si_off");
}

TEST_CASE("failed frames are flagged, not thrown")
{
    ScenarioConfig c = small_scenario();
    c.mode = Mode::base_kic;
    c.ki_gain_db = 40.0;
    c.dfkic.canceller.mu_w = 1e300; // overflows on the first updates
    const auto row = run_scenario(c);
    CHECK(row.flags.find("diverged") != std::string::npos);
    CHECK(row.ser == 1.0);
    CHECK(row.goodput_bps == 0.0);
    CHECK(std::isnan(row.residual_ki_db));
}

TEST_CASE("received signal override")
{
    auto c = small_scenario();
    c.mode = Mode::no_ki;
    const auto sim = simulate(c);
    const auto a = run_scenario_report(c, {}, &sim.d);
    CHECK(a.row == run_scenario(c));
    const ComplexSignal wrong(std::vector<cplx>(10), 1.0);
    CHECK_THROWS_AS(run_scenario_report(c, {}, &wrong), ValidationError);
}

TEST_CASE("grid ranges")
{
    CHECK(GridRange{40, 56, 2}.values().size() == 9);
    CHECK(GridRange{40, 56, 2}.values().back() == 56.0);
    CHECK(GridRange{30, 50, 4}.values().size() == 6);
    CHECK(GridRange{5, 5, 1}.values() == std::vector<double>{5.0});
    CHECK(GridRange{0, 0.3, 0.1}.values().size() == 4);
    CHECK_THROWS_AS((GridRange{1, 0, 1}.values()), ValidationError);
    CHECK_THROWS_AS((GridRange{0, 1, 0}.values()), ValidationError);
}

TEST_CASE("sweep shape and order")
{
    auto base = small_scenario();
    base.seed = RngSeed{10};
    const auto one = sweep_grid(base, {40, 40, 2}, {30, 30, 2}, {Mode::base_kic}, 1);
    CHECK(one.size() == 1);

    const auto rows = sweep_grid(base, {40, 44, 2}, {30, 32, 2}, {Mode::df_kic, Mode::base_kic, Mode::df_kic}, 4, 2);
    REQUIRE(rows.size() == 48);
    CHECK(rows[0].ki_db == 40.0);
    CHECK(rows[0].si_db == 30.0);
    CHECK(rows[0].mode == Mode::base_kic);
    CHECK(rows[0].seed == 10);
    CHECK(rows[3].seed == 13);
    CHECK(rows[4].mode == Mode::df_kic);
    CHECK(rows[8].si_db == 32.0);
    CHECK(rows[16].ki_db == 42.0);

    CHECK_THROWS_AS(sweep_grid(base, {40, 40, 2}, {30, 30, 2}, {}, 1), ValidationError);
    CHECK_THROWS_AS(sweep_grid(base, {40, 40, 2}, {30, 30, 2}, {Mode::no_ki}, 0), ValidationError);
}

TEST_CASE("sweep is independent of worker count")
{
    auto base = small_scenario(16);
    const auto a = format_rows(sweep_grid(base, {40, 50, 5}, {25, 35, 10}, {Mode::base_kic, Mode::df_kic}, 2, 1));
    const auto b = format_rows(sweep_grid(base, {40, 50, 5}, {25, 35, 10}, {Mode::base_kic, Mode::df_kic}, 2, 5));
    const auto c = format_rows(sweep_grid(base, {40, 50, 5}, {25, 35, 10}, {Mode::base_kic, Mode::df_kic}, 2, 5));
    CHECK(a == b);
    CHECK(b == c);
}

TEST_CASE("csv header only")
{
    const auto text = format_rows({});
    CHECK(text == std::string(kCsvHeader) + "\n");
    CHECK(parse_rows(text).empty());
}

TEST_CASE("csv round trip")
{
    Rng rng(RngSeed{77});
    std::vector<SweepRow> rows;
    for (int i = 0; i < 100; ++i)
        rows.push_back(random_row(rng));
    const auto text = format_rows(rows);
    const auto back = parse_rows(text);
    REQUIRE(back.size() == rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        CHECK(same(back[i], rows[i]));
    CHECK(format_rows(back) == text);

    const auto path = std::filesystem::temp_directory_path() / "kiclab_test_rows.csv";
    write_rows(rows, path);
    CHECK(format_rows(read_rows(path)) == text);
    std::filesystem::remove(path);
}

TEST_CASE("csv errors name the line")
{
    const std::string header(kCsvHeader);
    try {
        parse_rows(header + "\n40,30,df_kic,4,1,2,0,0.1,0,1.5,1,\n40,30,df_kic,4,1,2,0\n");
        FAIL("expected an error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
    try {
        parse_rows(header + "\n40,30,dfkic,4,1,2,0,0.1,0,1.5,1,\n");
        FAIL("expected an error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_rows("ki,si\n"), ValidationError);
    CHECK_THROWS_AS(read_rows("/nonexistent/rows.csv"), RuntimeError);

    SweepRow bad;
    bad.flags = "a,b";
    CHECK_THROWS_AS(format_rows({bad}), ValidationError);
}

TEST_CASE("real formatting")
{
    CHECK(format_real(0.1) == "0.1");
    CHECK(format_real(6.0) == "6");
    CHECK(format_real(std::nan("")) == "nan");
    CHECK(format_real(-std::numeric_limits<double>::infinity()) == "-inf");
}

TEST_CASE("signal of interest acts as estimation noise")
{
    // Base KIC residual over SI off / 20 / 40 dB, median of 10 seeds.
    std::vector<double> medians;
    for (double si : {-std::numeric_limits<double>::infinity(), 20.0, 40.0}) {
        std::vector<double> r;
        for (std::uint64_t s = 1; s <= 10; ++s) {
            ScenarioConfig c;
            c.seed = RngSeed{s};
            c.mode = Mode::base_kic;
            c.n_frames = 1;
            c.ki_gain_db = 40.0;
            c.si_gain_db = si;
            r.push_back(run_scenario(c).residual_ki_db);
        }
        std::sort(r.begin(), r.end());
        medians.push_back(0.5 * (r[4] + r[5]));
    }
    MESSAGE("median residual KI: " << medians[0] << ", " << medians[1] << ", " << medians[2] << " dB");
    CHECK(medians[0] <= medians[1]);
    CHECK(medians[1] <= medians[2]);
}

TEST_CASE("required SINR grows with the constellation")
{
    // Lowest SI SNR on a 1 dB grid where the no-KI receiver reaches SER <= 1e-3.
    double prev = -1.0;
    for (int q : {4, 8, 16, 32, 64, 128, 256}) {
        double need = -1.0;
        for (double si = 4.0; si <= 40.0; si += 1.0) {
            auto c = small_scenario(q, 100);
            c.mode = Mode::no_ki;
            c.si_gain_db = si;
            if (run_scenario(c).ser <= 1e-3) {
                need = si;
                break;
            }
        }
        MESSAGE(q << "-QAM needs " << need << " dB");
        REQUIRE(need > 0.0);
        CHECK(need >= prev);
        prev = need;
    }
}
