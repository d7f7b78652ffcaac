#include "kiclab/cli.hpp"

#include "kiclab/impairments.hpp"
#include "kiclab/selftest.hpp"

#include <CLI11.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

namespace kiclab {
namespace {

namespace fs = std::filesystem;

std::string_view trim(std::string_view s)
{
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
        s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
        s.remove_suffix(1);
    return s;
}

[[noreturn]] void bad_value(const std::string& key, std::string_view text, std::string_view expected)
{
    throw ValidationError(key + ": expected " + std::string(expected) + ", got '" + std::string(text) + "'");
}

double to_real(const std::string& key, std::string_view text)
{
    text = trim(text);
    if (!text.empty() && text.front() == '+')
        text.remove_prefix(1);
    double v = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (text.empty() || res.ec != std::errc() || res.ptr != text.data() + text.size())
        bad_value(key, text, "a number");
    return v;
}

template <typename Int>
Int to_int(const std::string& key, std::string_view text)
{
    text = trim(text);
    Int v = 0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (text.empty() || res.ec != std::errc() || res.ptr != text.data() + text.size())
        bad_value(key, text, "an integer");
    return v;
}

std::vector<std::string_view> split(std::string_view text, char sep)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = text.find(sep, start);
        out.push_back(trim(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos)
            return out;
        start = pos + 1;
    }
}

// "re,im; re,im; ..."
std::vector<cplx> to_taps(const std::string& key, std::string_view text)
{
    std::vector<cplx> taps;
    for (auto item : split(text, ';')) {
        const auto parts = split(item, ',');
        if (parts.size() != 2)
            bad_value(key, text, "'re,im' pairs separated by ';'");
        taps.emplace_back(to_real(key, parts[0]), to_real(key, parts[1]));
    }
    return taps;
}

std::string from_taps(const std::vector<cplx>& taps)
{
    std::string out;
    for (const auto& t : taps) {
        if (!out.empty())
            out += "; ";
        out += format_real(t.real()) + ',' + format_real(t.imag());
    }
    return out;
}

// "lo:hi:step"
GridRange to_range(const std::string& key, std::string_view text)
{
    const auto parts = split(text, ':');
    if (parts.size() != 3)
        bad_value(key, text, "lo:hi:step");
    GridRange r{to_real(key, parts[0]), to_real(key, parts[1]), to_real(key, parts[2])};
    try {
        (void)r.values();
    } catch (const ValidationError& e) {
        throw ValidationError(key + ": " + e.what());
    }
    return r;
}

std::string from_range(const GridRange& r)
{
    return format_real(r.lo) + ':' + format_real(r.hi) + ':' + format_real(r.step);
}

struct Field {
    std::string key;
    std::function<void(RunManifest&, const std::string& key, std::string_view value)> set;
    std::function<std::string(const RunManifest&)> get;
};

template <typename Get>
Field real_field(std::string key, Get member)
{
    return {std::move(key),
            [member](RunManifest& m, const std::string& k, std::string_view v) { member(m) = to_real(k, v); },
            [member](const RunManifest& m) { return format_real(member(const_cast<RunManifest&>(m))); }};
}

template <typename Int, typename Get>
Field int_field(std::string key, Get member)
{
    return {std::move(key),
            [member](RunManifest& m, const std::string& k, std::string_view v) { member(m) = to_int<Int>(k, v); },
            [member](const RunManifest& m) { return std::to_string(member(const_cast<RunManifest&>(m))); }};
}

void add_channel_fields(std::vector<Field>& f, const std::string& section,
                        ImpairmentParams& (*params)(RunManifest&))
{
    f.push_back({section + ".taps",
                 [params](RunManifest& m, const std::string& k, std::string_view v) { params(m).taps = to_taps(k, v); },
                 [params](const RunManifest& m) { return from_taps(params(const_cast<RunManifest&>(m)).taps); }});
    f.push_back(real_field(section + ".cfo_rad_per_sample",
                           [params](RunManifest& m) -> double& { return params(m).cfo_rad_per_sample; }));
    f.push_back(real_field(section + ".sfo_rate", [params](RunManifest& m) -> double& { return params(m).sfo_rate; }));
    f.push_back(real_field(section + ".initial_phase",
                           [params](RunManifest& m) -> double& { return params(m).initial_phase; }));
    f.push_back(real_field(section + ".cfo_drift", [params](RunManifest& m) -> double& { return params(m).cfo_drift; }));
    f.push_back(real_field(section + ".sfo_drift", [params](RunManifest& m) -> double& { return params(m).sfo_drift; }));
    f.push_back(real_field(section + ".phase_noise_var",
                           [params](RunManifest& m) -> double& { return params(m).phase_noise_var; }));
}

const std::vector<Field>& fields()
{
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        using M = RunManifest;
        f.push_back(int_field<std::uint64_t>("scenario.seed", [](M& m) -> std::uint64_t& { return m.scenario.seed.value; }));
        f.push_back({"scenario.mode",
                     [](M& m, const std::string& k, std::string_view v) {
                         try {
                             m.scenario.mode = parse_mode(trim(v));
                         } catch (const ValidationError&) {
                             bad_value(k, v, "no_ki, base_kic or df_kic");
                         }
                     },
                     [](const M& m) { return std::string(to_string(m.scenario.mode)); }});
        f.push_back(real_field("scenario.ki_gain_db", [](M& m) -> double& { return m.scenario.ki_gain_db; }));
        f.push_back(real_field("scenario.si_gain_db", [](M& m) -> double& { return m.scenario.si_gain_db; }));
        f.push_back(int_field<int>("scenario.n_frames", [](M& m) -> int& { return m.scenario.n_frames; }));
        f.push_back(real_field("scenario.noise_variance", [](M& m) -> double& { return m.scenario.noise_variance; }));
        f.push_back(real_field("scenario.code_rate", [](M& m) -> double& { return m.scenario.code_rate; }));
        f.push_back(real_field("scenario.ki_passband", [](M& m) -> double& { return m.scenario.ki_passband; }));
        f.push_back(
            real_field("scenario.transient_fraction", [](M& m) -> double& { return m.scenario.transient_fraction; }));

        f.push_back(int_field<int>("ofdm.qam", [](M& m) -> int& { return m.scenario.dfkic.ofdm.qam_order; }));
        f.push_back(
            int_field<int>("ofdm.symbols_per_frame", [](M& m) -> int& { return m.scenario.dfkic.ofdm.symbols_per_frame; }));
        f.push_back(
            int_field<int>("ofdm.training_symbols", [](M& m) -> int& { return m.scenario.dfkic.ofdm.training_symbols; }));
        f.push_back(int_field<int>("ofdm.fft_size", [](M& m) -> int& { return m.scenario.dfkic.ofdm.fft_size; }));
        f.push_back(
            int_field<int>("ofdm.used_subcarriers", [](M& m) -> int& { return m.scenario.dfkic.ofdm.used_subcarriers; }));
        f.push_back(
            int_field<int>("ofdm.pilot_subcarriers", [](M& m) -> int& { return m.scenario.dfkic.ofdm.pilot_subcarriers; }));
        f.push_back(int_field<int>("ofdm.cp_len", [](M& m) -> int& { return m.scenario.dfkic.ofdm.cp_len; }));
        f.push_back(real_field("ofdm.subcarrier_spacing_hz",
                               [](M& m) -> double& { return m.scenario.dfkic.ofdm.subcarrier_spacing_hz; }));
        f.push_back(real_field("ofdm.tracking_smoothing",
                               [](M& m) -> double& { return m.scenario.dfkic.ofdm.tracking_smoothing; }));
        f.push_back(int_field<int>("ofdm.timing_offset", [](M& m) -> int& { return m.scenario.dfkic.ofdm.timing_offset; }));
        f.push_back(int_field<std::uint64_t>("ofdm.pattern_seed",
                                             [](M& m) -> std::uint64_t& { return m.scenario.dfkic.ofdm.pattern_seed; }));

        f.push_back(int_field<int>("canceller.n_taps", [](M& m) -> int& { return m.scenario.dfkic.canceller.n_taps; }));
        f.push_back(real_field("canceller.lambda_e", [](M& m) -> double& { return m.scenario.dfkic.canceller.lambda_e; }));
        f.push_back(real_field("canceller.lambda_R", [](M& m) -> double& { return m.scenario.dfkic.canceller.lambda_R; }));
        f.push_back(real_field("canceller.lambda_y", [](M& m) -> double& { return m.scenario.dfkic.canceller.lambda_y; }));
        f.push_back(
            real_field("canceller.lambda_eps", [](M& m) -> double& { return m.scenario.dfkic.canceller.lambda_eps; }));
        f.push_back(
            real_field("canceller.lambda_eta", [](M& m) -> double& { return m.scenario.dfkic.canceller.lambda_eta; }));
        f.push_back(real_field("canceller.mu_w", [](M& m) -> double& { return m.scenario.dfkic.canceller.mu_w; }));
        f.push_back(real_field("canceller.mu_eps", [](M& m) -> double& { return m.scenario.dfkic.canceller.mu_eps; }));
        f.push_back(real_field("canceller.mu_eta", [](M& m) -> double& { return m.scenario.dfkic.canceller.mu_eta; }));
        f.push_back(
            real_field("canceller.vss_constant", [](M& m) -> double& { return m.scenario.dfkic.canceller.vss_constant; }));
        f.push_back(
            real_field("canceller.regularizer", [](M& m) -> double& { return m.scenario.dfkic.canceller.regularizer; }));

        f.push_back(int_field<int>("dfkic.max_iterations", [](M& m) -> int& { return m.scenario.dfkic.max_iterations; }));
        f.push_back(real_field("dfkic.quality_target", [](M& m) -> double& { return m.scenario.dfkic.quality_target; }));

        add_channel_fields(f, "ki_channel", [](M& m) -> ImpairmentParams& { return m.scenario.ki_params; });
        add_channel_fields(f, "si_channel", [](M& m) -> ImpairmentParams& { return m.scenario.si_params; });

        f.push_back({"sweep.ki_db", [](M& m, const std::string& k, std::string_view v) { m.sweep.ki = to_range(k, v); },
                     [](const M& m) { return from_range(m.sweep.ki); }});
        f.push_back({"sweep.si_db", [](M& m, const std::string& k, std::string_view v) { m.sweep.si = to_range(k, v); },
                     [](const M& m) { return from_range(m.sweep.si); }});
        f.push_back({"sweep.modes",
                     [](M& m, const std::string& k, std::string_view v) {
                         m.sweep.modes.clear();
                         for (auto item : split(v, ',')) {
                             try {
                                 m.sweep.modes.push_back(parse_mode(item));
                             } catch (const ValidationError&) {
                                 bad_value(k, v, "a comma list of no_ki, base_kic, df_kic");
                             }
                         }
                     },
                     [](const M& m) {
                         std::string out;
                         for (Mode mode : m.sweep.modes)
                             out += (out.empty() ? "" : ",") + std::string(to_string(mode));
                         return out;
                     }});
        f.push_back(int_field<int>("sweep.seeds", [](M& m) -> int& { return m.sweep.seeds; }));
        return f;
    }();
    return table;
}

std::optional<std::uint64_t> env_seed()
{
    const char* v = std::getenv("KICLAB_SEED");
    if (!v || !*v)
        return std::nullopt;
    return to_int<std::uint64_t>("KICLAB_SEED", v);
}

void ensure_directory(const fs::path& dir, bool create)
{
    if (fs::is_directory(dir))
        return;
    if (fs::exists(dir))
        throw ValidationError("not a directory: " + dir.string());
    if (!create)
        throw ValidationError("output directory does not exist: " + dir.string() + " (use --create)");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw RuntimeError("cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw RuntimeError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out)
        throw RuntimeError("write failed: " + path.string());
}

std::string truth_csv(const std::vector<FrameSymbols>& frames)
{
    std::string out = "frame,symbol,carrier,index\n";
    for (std::size_t f = 0; f < frames.size(); ++f) {
        const auto& fr = frames[f];
        for (int s = 0; s < fr.n_symbols; ++s)
            for (int c = 0; c < fr.n_data_subcarriers; ++c)
                out += std::to_string(f) + ',' + std::to_string(s) + ',' + std::to_string(c) + ',' +
                       std::to_string(fr.index_at(s, c)) + '\n';
    }
    return out;
}

// Shared options for commands that build a manifest.
struct ManifestArgs {
    std::string config;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;

    void attach(CLI::App* app)
    {
        app->add_option("-c,--config", config, "Config file (INI sections mirror the library config types)");
        app->add_option("--set", sets, "Override, section.key=value (repeatable)");
        app->add_option("--seed", seed, "Scenario seed (default: KICLAB_SEED, then the config)");
    }

    [[nodiscard]] RunManifest build() const
    {
        ConfigMap map = config.empty() ? ConfigMap{} : read_config_file(config);
        for (const auto& s : sets)
            apply_override(map, s);
        auto m = build_manifest(map, env_seed());
        if (seed)
            m.scenario.seed = RngSeed{*seed};
        return m;
    }
};

int cmd_gen(const RunManifest& m, bool ki, bool si, bool rx, std::size_t samples, const fs::path& dir, bool create,
            std::ostream& out)
{
    if (!ki && !si && !rx)
        throw ValidationError("gen: choose at least one of --ki, --si, --rx");
    ensure_directory(dir, create);
    const auto& sc = m.scenario;
    sc.validate();
    const auto& ocfg = sc.dfkic.ofdm;
    const double rate = ocfg.sample_rate_hz();

    if (ki) {
        const auto x = generate_ki(derive_seed(sc.seed, 1), samples, sc.ki_passband, rate);
        write_iq(dir / "ki.iq", x);
        out << "wrote " << (dir / "ki.iq").string() << " (" << x.size() << " samples)\n";
    }
    if (si) {
        std::vector<FrameSymbols> frames;
        std::vector<cplx> s;
        for (int f = 0; f < sc.n_frames; ++f) {
            frames.push_back(random_frame(ocfg, derive_seed(sc.seed, 100 + static_cast<std::uint64_t>(f))));
            const auto w = ofdm_modulate(frames.back(), ocfg);
            s.insert(s.end(), w.samples.begin(), w.samples.end());
        }
        write_iq(dir / "si.iq", ComplexSignal(std::move(s), rate));
        write_text(dir / "si_symbols.csv", truth_csv(frames));
        out << "wrote " << (dir / "si.iq").string() << " and " << (dir / "si_symbols.csv").string() << '\n';
    }
    if (rx) {
        const auto sim = simulate(sc);
        write_iq(dir / "rx.iq", sim.d);
        write_text(dir / "rx_symbols.csv", truth_csv(sim.truth));
        out << "wrote " << (dir / "rx.iq").string() << " and " << (dir / "rx_symbols.csv").string() << '\n';
    }
    return 0;
}

std::string trace_text(const std::vector<double>& v)
{
    std::string out;
    for (double d : v)
        out += (out.empty() ? "" : " ") + format_real(d);
    return out;
}

int cmd_run(const RunManifest& m, const fs::path& dir, bool dump_iq, const std::string& input, std::ostream& out)
{
    m.scenario.validate();
    ensure_directory(dir, true);
    std::optional<ComplexSignal> received;
    if (!input.empty())
        received = read_iq(input);

    ResidualHook hook;
    if (dump_iq)
        hook = [&](int frame, int iteration, const ComplexSignal& e) {
            write_iq(dir / ("residual_f" + std::to_string(frame) + "_k" + std::to_string(iteration) + ".iq"), e);
        };
    const auto rep = run_scenario_report(m.scenario, hook, received ? &*received : nullptr);

    out << format_rows({rep.row});
    std::string diag =
        "frame,iteration,delta,ki_residual_power,si_residual_power,accepted,decision,ki_state_in,ki_state_out,"
        "si_state_in,si_state_out\n";
    for (std::size_t f = 0; f < rep.frames.size(); ++f) {
        const auto& fr = rep.frames[f];
        out << "frame " << f << ": ser " << format_real(fr.ser) << ", iterations " << fr.iterations;
        if (m.scenario.mode == Mode::df_kic)
            out << ", delta_d " << format_real(fr.delta_d);
        out << ", delta " << trace_text(fr.quality_trace) << '\n';
        if (fr.records.empty()) {
            diag += std::to_string(f) + ",0," + format_real(fr.evm) + ",,,1,,,,,\n";
            continue;
        }
        for (const auto& r : fr.records)
            diag += std::to_string(f) + ',' + std::to_string(r.iteration) + ',' + format_real(r.delta) + ',' +
                    format_real(r.ki_residual_power) + ',' + format_real(r.si_residual_power) + ',' +
                    (r.accepted ? "1" : "0") + ',' + r.decision + ',' + std::to_string(r.ki_state_in) + ',' +
                    std::to_string(r.ki_state_out) + ',' + std::to_string(r.si_state_in) + ',' +
                    std::to_string(r.si_state_out) + '\n';
    }
    write_text(dir / "diagnostics.csv", diag);
    out << "diagnostics: " << (dir / "diagnostics.csv").string() << '\n';
    return 0;
}

bool row_failed(const SweepRow& r)
{
    return r.flags.find("diverged") != std::string::npos || r.flags.find("runtime_error") != std::string::npos;
}

int cmd_sweep(const RunManifest& m, const fs::path& path, int workers, bool force, std::ostream& out)
{
    if (fs::exists(path) && !force)
        throw ValidationError("refusing to overwrite " + path.string() + " (use --force)");
    if (path.has_parent_path())
        ensure_directory(path.parent_path(), true);
    const auto rows = sweep_grid(m.scenario, m.sweep.ki, m.sweep.si, m.sweep.modes, m.sweep.seeds, workers);
    write_rows(rows, path);
    const auto failed = std::count_if(rows.begin(), rows.end(), row_failed);
    out << "wrote " << rows.size() << " rows to " << path.string();
    if (failed > 0)
        out << " (" << failed << " flagged as failed)";
    out << '\n';
    return !rows.empty() && static_cast<std::size_t>(failed) == rows.size() ? 2 : 0;
}

int cmd_selftest(double tolerance_scale, std::ostream& out)
{
    const auto checks = run_selftest(tolerance_scale);
    bool ok = true;
    out << std::left << std::setw(30) << "check" << std::setw(12) << "value" << std::setw(12) << "tolerance"
        << "result\n";
    for (const auto& c : checks) {
        ok = ok && c.passed();
        out << std::setw(30) << c.name << std::scientific << std::setprecision(2) << std::setw(12) << c.value
            << std::setw(12) << c.tolerance << (c.passed() ? "PASS" : "FAIL") << '\n';
    }
    out << (ok ? "all checks passed\n" : "selftest FAILED\n");
    return ok ? 0 : 2;
}

} // namespace

ConfigMap parse_config_text(const std::string& text)
{
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ValidationError("config line " + std::to_string(e.line()) + ": " + e.message());
    }
    ConfigMap map;
    for (const auto& [section, body] : tree) {
        if (body.empty())
            throw ValidationError("config key '" + section + "' is outside a section");
        for (const auto& [key, value] : body)
            map[section + '.' + key] = value.get_value<std::string>();
    }
    return map;
}

ConfigMap read_config_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ValidationError("cannot open config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return parse_config_text(ss.str());
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

void apply_override(ConfigMap& map, std::string_view assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos)
        throw ValidationError("override '" + std::string(assignment) + "' is not section.key=value");
    const auto key = trim(assignment.substr(0, eq));
    if (key.find('.') == std::string_view::npos)
        throw ValidationError("override key '" + std::string(key) + "' needs a section");
    map[std::string(key)] = std::string(trim(assignment.substr(eq + 1)));
}

RunManifest build_manifest(const ConfigMap& map, std::optional<std::uint64_t> default_seed)
{
    RunManifest m;
    if (default_seed)
        m.scenario.seed = RngSeed{*default_seed};
    const auto& table = fields();
    for (const auto& [key, value] : map) {
        const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
        if (it == table.end())
            throw ValidationError("unknown config key " + key);
        it->set(m, key, value);
    }
    auto& ocfg = m.scenario.dfkic.ofdm;
    if (!is_supported_qam(ocfg.qam_order))
        throw ValidationError("ofdm.qam: unsupported order " + std::to_string(ocfg.qam_order) +
                              " (use 4, 8, 16, 32, 64, 128 or 256)");
    if (ocfg.pilot_subcarriers >= 2 && ocfg.used_subcarriers > ocfg.pilot_subcarriers)
        ocfg.pilot_index_set = default_pilot_positions(ocfg.used_subcarriers, ocfg.pilot_subcarriers);
    m.scenario.validate();
    if (m.sweep.modes.empty())
        throw ValidationError("sweep.modes: empty");
    if (m.sweep.seeds < 1)
        throw ValidationError("sweep.seeds must be >= 1");
    return m;
}

std::string format_manifest(const RunManifest& manifest)
{
    std::string out;
    std::string section;
    for (const auto& f : fields()) {
        const auto dot = f.key.find('.');
        const auto sec = f.key.substr(0, dot);
        if (sec != section) {
            out += (out.empty() ? "[" : "\n[") + sec + "]\n";
            section = sec;
        }
        out += f.key.substr(dot + 1) + " = " + f.get(manifest) + '\n';
    }
    return out;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"kiclab: decision-feedback known-interference cancellation bench", "kiclab"};
    app.require_subcommand(1);

    ManifestArgs gen_args;
    bool gen_ki = false, gen_si = false, gen_rx = false, gen_create = false;
    std::size_t gen_samples = 65536;
    std::optional<int> gen_qam, gen_symbols;
    std::string gen_out = ".";
    auto* gen = app.add_subcommand("gen", "Write KI / SI / received IQ fixtures and ground-truth symbols");
    gen_args.attach(gen);
    gen->add_flag("--ki", gen_ki, "Known interference waveform (ki.iq)");
    gen->add_flag("--si", gen_si, "OFDM signal of interest (si.iq, si_symbols.csv)");
    gen->add_flag("--rx", gen_rx, "Full received superposition of the scenario (rx.iq, rx_symbols.csv)");
    gen->add_option("--samples", gen_samples, "KI length in samples")->capture_default_str();
    gen->add_option("--qam", gen_qam, "QAM order (overrides ofdm.qam)");
    gen->add_option("--symbols", gen_symbols, "Data symbols per frame (overrides ofdm.symbols_per_frame)");
    gen->add_option("-o,--out", gen_out, "Output directory")->capture_default_str();
    gen->add_flag("--create", gen_create, "Create the output directory if missing");

    ManifestArgs run_args;
    std::optional<std::string> run_mode;
    std::string run_out = "kiclab_run";
    std::string run_input;
    bool run_dump = false, run_print = false;
    auto* run = app.add_subcommand("run", "Run one scenario and print its row and per-iteration quality trace");
    run_args.attach(run);
    run->add_option("--mode", run_mode, "Receiver: no_ki, base_kic or df_kic");
    run->add_option("-o,--out", run_out, "Directory for diagnostics.csv and IQ dumps")->capture_default_str();
    run->add_flag("--dump-iq", run_dump, "Write the residual of every pass as residual_f<frame>_k<iteration>.iq");
    run->add_option("--input", run_input, "Received IQ file to process instead of the simulated superposition");
    run->add_flag("--print-config", run_print, "Print the effective config and exit");

    ManifestArgs sweep_args;
    std::string sweep_out;
    int sweep_workers = 1;
    bool sweep_force = false;
    auto* sweep = app.add_subcommand("sweep", "Sweep the KI/SI power grid and write the CSV");
    sweep_args.attach(sweep);
    sweep->add_option("-o,--out", sweep_out, "Output CSV path")->required();
    sweep->add_option("-j,--workers", sweep_workers, "Worker threads")->capture_default_str();
    sweep->add_flag("--force", sweep_force, "Overwrite an existing output file");

    double tolerance_scale = 1.0;
    auto* selftest = app.add_subcommand("selftest", "Run the fast invariant checks");
    selftest->add_option("--tolerance-scale", tolerance_scale)->group("");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) {
            auto m = gen_args.build();
            if (gen_qam) {
                if (!is_supported_qam(*gen_qam))
                    throw ValidationError("qam: unsupported order " + std::to_string(*gen_qam));
                m.scenario.dfkic.ofdm.qam_order = *gen_qam;
            }
            if (gen_symbols)
                m.scenario.dfkic.ofdm.symbols_per_frame = *gen_symbols;
            return cmd_gen(m, gen_ki, gen_si, gen_rx, gen_samples, gen_out, gen_create, out);
        }
        if (run->parsed()) {
            auto m = run_args.build();
            if (run_mode)
                m.scenario.mode = parse_mode(*run_mode);
            if (run_print) {
                out << format_manifest(m);
                return 0;
            }
            return cmd_run(m, run_out, run_dump, run_input, out);
        }
        if (sweep->parsed())
            return cmd_sweep(sweep_args.build(), sweep_out, sweep_workers, sweep_force, out);
        if (selftest->parsed())
            return cmd_selftest(tolerance_scale, out);
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}

} // namespace kiclab
