#include "kiclab/cli.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace kiclab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code = 0;
    std::string out;
    std::string err;
};

Outcome cli(std::vector<std::string> args)
{
    std::ostringstream out, err;
    Outcome o;
    o.code = run_cli(args, out, err);
    o.out = out.str();
    o.err = err.str();
    return o;
}

// Fresh directory under the system temp dir, removed on scope exit.
struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("kiclab_cli_" + name))
    {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    [[nodiscard]] std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct SeedEnv {
    explicit SeedEnv(const char* v) { ::setenv("KICLAB_SEED", v, 1); }
    ~SeedEnv() { ::unsetenv("KICLAB_SEED"); }
};

// First CSV row printed by `run`.
SweepRow printed_row(const std::string& out)
{
    std::istringstream in(out);
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    const auto rows = parse_rows(header + "\n" + row + "\n");
    REQUIRE(rows.size() == 1);
    return rows[0];
}

const std::vector<std::string> kSmall{"--set", "ofdm.symbols_per_frame=20", "--set", "scenario.n_frames=1"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b)
{
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

const std::string kQuickstart = std::string(KICLAB_SOURCE_DIR) + "/configs/quickstart.ini";

} // namespace

TEST_CASE("help for every subcommand")
{
    for (std::string sub : {"gen", "run", "sweep", "selftest"}) {
        const auto o = cli({sub, "--help"});
        CHECK(o.code == 0);
        CHECK(o.out.find(sub) != std::string::npos);
    }
    const auto top = cli({"--help"});
    CHECK(top.code == 0);
    CHECK(top.out.find("selftest") != std::string::npos);
    CHECK(cli({}).code == 1);
    CHECK(cli({"bogus"}).code == 1);
    CHECK(cli({"run", "--no-such-flag"}).code == 1);
}

TEST_CASE("gen is deterministic")
{
    TempDir a("gen_a"), b("gen_b"), c("gen_c");
    CHECK(cli({"gen", "--ki", "--seed", "7", "--samples", "65536", "-o", a.path.string()}).code == 0);
    CHECK(cli({"gen", "--ki", "--seed", "7", "--samples", "65536", "-o", b.path.string()}).code == 0);
    CHECK(cli({"gen", "--ki", "--seed", "8", "--samples", "65536", "-o", c.path.string()}).code == 0);
    const auto ka = slurp(a / "ki.iq");
    CHECK(read_iq(a / "ki.iq").size() == 65536);
    CHECK(ka == slurp(b / "ki.iq"));
    CHECK(ka != slurp(c / "ki.iq"));
}

TEST_CASE("gen si demodulates to its ground truth")
{
    TempDir d("gen_si");
    const auto o = cli({"gen", "--si", "--qam", "64", "--symbols", "100", "--set", "scenario.n_frames=1", "-o",
                        d.path.string()});
    REQUIRE(o.code == 0);
    const auto si = read_iq(d / "si.iq");
    const auto cfg = OfdmConfig::defaults(64, 100);
    REQUIRE(si.size() == cfg.frame_len());
    const auto dem = ofdm_demodulate(si, cfg, 0);

    std::istringstream in(slurp(d / "si_symbols.csv"));
    std::string line;
    std::getline(in, line);
    CHECK(line == "frame,symbol,carrier,index");
    std::size_t rows = 0, errors = 0;
    while (std::getline(in, line)) {
        int f = 0, s = 0, k = 0, idx = 0;
        char c1, c2, c3;
        std::istringstream ls(line);
        ls >> f >> c1 >> s >> c2 >> k >> c3 >> idx;
        REQUIRE(ls);
        CHECK(f == 0);
        errors += dem.symbols.index_at(s, k) != idx;
        ++rows;
    }
    CHECK(rows == static_cast<std::size_t>(100 * cfg.data_subcarriers()));
    CHECK(errors == 0);
}

TEST_CASE("gen needs an existing directory unless asked to create it")
{
    TempDir d("gen_dir");
    const auto missing = d / "not/there";
    const auto o = cli({"gen", "--ki", "--samples", "1024", "-o", missing});
    CHECK(o.code == 1);
    CHECK(o.err.find(missing) != std::string::npos);
    CHECK(cli({"gen", "--ki", "--samples", "1024", "-o", missing, "--create"}).code == 0);
    CHECK(fs::exists(fs::path(missing) / "ki.iq"));
    CHECK(cli({"gen", "-o", d.path.string()}).code == 1);
}

TEST_CASE("invalid values name the key")
{
    TempDir d("bad");
    auto o = cli({"run", "--set", "ofdm.qam=12", "-o", d.path.string()});
    CHECK(o.code == 1);
    CHECK(o.err.find("qam") != std::string::npos);
    o = cli({"gen", "--si", "--qam", "12", "-o", d.path.string()});
    CHECK(o.code == 1);
    CHECK(o.err.find("qam") != std::string::npos);
    o = cli({"run", "--set", "canceller.lambda_e=1.5", "--print-config"});
    CHECK(o.code == 1);
    CHECK(o.err.find("lambda_e") != std::string::npos);
    o = cli({"run", "--set", "scenario.n_frames=two", "--print-config"});
    CHECK(o.code == 1);
    CHECK(o.err.find("scenario.n_frames") != std::string::npos);
    o = cli({"run", "--set", "scenario.colour=blue", "--print-config"});
    CHECK(o.code == 1);
    CHECK(o.err.find("scenario.colour") != std::string::npos);
    o = cli({"run", "--set", "noequals", "--print-config"});
    CHECK(o.code == 1);
}

TEST_CASE("config text round trip")
{
    const auto m = build_manifest(read_config_file(kQuickstart));
    CHECK(m.scenario.dfkic.ofdm.qam_order == 256);
    CHECK(m.scenario.dfkic.quality_target == 0.011);
    CHECK(m.scenario.ki_gain_db == 51.0);
    const auto text = format_manifest(m);
    CHECK(format_manifest(build_manifest(parse_config_text(text))) == text);

    TempDir d("cfg");
    const auto printed = cli({"run", "-c", kQuickstart, "--print-config"});
    REQUIRE(printed.code == 0);
    CHECK(printed.out == text);
    {
        std::ofstream f(d / "full.ini");
        f << printed.out;
    }
    CHECK(cli({"run", "-c", d / "full.ini", "--print-config"}).out == text);
    CHECK(cli({"run", "-c", d / "missing.ini", "--print-config"}).code != 0);

    auto overridden = cli({"run", "-c", kQuickstart, "--set", "ki_channel.taps=1,0; 0.5,-0.5", "--print-config"});
    REQUIRE(overridden.code == 0);
    const auto m2 = build_manifest(parse_config_text(overridden.out));
    REQUIRE(m2.scenario.ki_params.taps.size() == 2);
    CHECK(m2.scenario.ki_params.taps[1] == cplx{0.5, -0.5});
}

TEST_CASE("seed precedence")
{
    SeedEnv env("4242");
    auto m = build_manifest(parse_config_text(cli({"run", "--print-config"}).out));
    CHECK(m.scenario.seed.value == 4242);
    m = build_manifest(parse_config_text(cli({"run", "--set", "scenario.seed=5", "--print-config"}).out));
    CHECK(m.scenario.seed.value == 5);
    m = build_manifest(parse_config_text(cli({"run", "--set", "scenario.seed=5", "--seed", "9", "--print-config"}).out));
    CHECK(m.scenario.seed.value == 9);
}

TEST_CASE("sweep smoke")
{
    TempDir d("sweep");
    const auto args = with({"--set", "sweep.ki_db=40:42:2", "--set", "sweep.si_db=30:32:2", "--set",
                            "sweep.modes=df_kic", "--set", "sweep.seeds=1", "--set", "ofdm.qam=16"},
                           kSmall);
    auto o = cli(with({"sweep", "-o", d / "one.csv", "-j", "1"}, args));
    REQUIRE(o.code == 0);
    CHECK(read_rows(d / "one.csv").size() == 4);
    CHECK(cli(with({"sweep", "-o", d / "eight.csv", "--workers", "8"}, args)).code == 0);
    CHECK(slurp(d / "one.csv") == slurp(d / "eight.csv"));

    o = cli(with({"sweep", "-o", d / "one.csv"}, args));
    CHECK(o.code == 1);
    CHECK(o.err.find("--force") != std::string::npos);
    CHECK(cli(with({"sweep", "-o", d / "one.csv", "--force"}, args)).code == 0);

    CHECK(cli(with(with({"sweep", "-o", d / "nested/dir/rows.csv"}, args), {"--set", "sweep.modes=base_kic,df_kic"}))
              .code == 0);
    CHECK(read_rows(d / "nested/dir/rows.csv").size() == 8);
    CHECK(cli(with({"sweep", "-o", d / "z.csv", "-j", "0"}, args)).code == 1);
}

TEST_CASE("run writes diagnostics and residual dumps")
{
    TempDir d("run");
    const auto o =
        cli(with({"run", "--set", "ofdm.qam=64", "--set", "dfkic.max_iterations=2", "--dump-iq", "-o", d.path.string()},
                 kSmall));
    REQUIRE(o.code == 0);
    CHECK(o.out.rfind(std::string(kCsvHeader), 0) == 0);
    CHECK(o.out.find("frame 0:") != std::string::npos);
    CHECK(fs::exists(d.path / "residual_f0_k0.iq"));
    CHECK(read_iq(d.path / "residual_f0_k0.iq").size() == OfdmConfig::defaults(64, 20).frame_len());
    const auto diag = slurp(d.path / "diagnostics.csv");
    CHECK(diag.rfind("frame,iteration,delta,", 0) == 0);
}

TEST_CASE("run on a generated received file")
{
    TempDir d("rx");
    const auto common = with({"--set", "ofdm.qam=16", "--seed", "3"}, kSmall);
    REQUIRE(cli(with({"gen", "--rx", "-o", d.path.string()}, common)).code == 0);
    const auto sim = cli(with({"run", "-o", d / "a"}, common));
    const auto file = cli(with({"run", "-o", d / "b", "--input", d / "rx.iq"}, common));
    REQUIRE(sim.code == 0);
    REQUIRE(file.code == 0);
    // The file holds float32 samples, so only the decisions must match exactly.
    const auto a = printed_row(sim.out);
    const auto b = printed_row(file.out);
    CHECK(a.ser == b.ser);
    CHECK(a.iterations == b.iterations);
    CHECK(a.residual_ki_db == doctest::Approx(b.residual_ki_db).epsilon(1e-6));
    CHECK(cli(with({"run", "-o", d / "c", "--input", d / "absent.iq"}, common)).code == 2);
}

TEST_CASE("quickstart scenario")
{
    TempDir d("quick");
    const auto df = cli({"run", "-c", kQuickstart, "-o", d / "df"});
    REQUIRE(df.code == 0);
    const auto base = cli({"run", "-c", kQuickstart, "--mode", "base_kic", "-o", d / "base"});
    REQUIRE(base.code == 0);
    CHECK(printed_row(df.out).ser < 1e-3);
    CHECK(printed_row(base.out).ser > 1e-1);
}

TEST_CASE("selftest")
{
    const auto ok = cli({"selftest"});
    CHECK(ok.code == 0);
    CHECK(ok.out.find("all checks passed") != std::string::npos);
    const auto bad = cli({"selftest", "--tolerance-scale", "1e-30"});
    CHECK(bad.code != 0);
    CHECK(bad.out.find("FAIL") != std::string::npos);
}
