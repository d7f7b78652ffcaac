#include "kiclab/labbench.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

namespace kiclab {
namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

std::vector<cplx> unit_energy(std::vector<cplx> taps)
{
    double e = 0.0;
    for (const auto& t : taps)
        e += std::norm(t);
    for (auto& t : taps)
        t /= std::sqrt(e);
    return taps;
}

bool is_off(double gain_db)
{
    return std::isinf(gain_db) && gain_db < 0.0;
}

void add_flag(std::string& flags, std::string_view flag)
{
    if (flags.find(flag) != std::string::npos)
        return;
    if (!flags.empty())
        flags += ';';
    flags += flag;
}

ComplexSignal slice(const ComplexSignal& sig, std::size_t start, std::size_t len)
{
    const auto first = sig.samples.begin() + static_cast<std::ptrdiff_t>(start);
    return ComplexSignal(std::vector<cplx>(first, first + static_cast<std::ptrdiff_t>(len)), sig.sample_rate_hz);
}

SimulatedScenario realize(const ScenarioConfig& cfg)
{
    const auto& ocfg = cfg.dfkic.ofdm;
    const std::size_t frame_len = ocfg.frame_len();
    const std::size_t n = frame_len * static_cast<std::size_t>(cfg.n_frames);
    const double rate = ocfg.sample_rate_hz();

    SimulatedScenario r;
    ComplexSignal s(std::vector<cplx>(n), rate);
    for (int f = 0; f < cfg.n_frames; ++f) {
        r.truth.push_back(random_frame(ocfg, derive_seed(cfg.seed, 100 + static_cast<std::uint64_t>(f))));
        const auto wave = ofdm_modulate(r.truth.back(), ocfg);
        std::copy(wave.samples.begin(), wave.samples.end(),
                  s.samples.begin() + static_cast<std::ptrdiff_t>(frame_len * static_cast<std::size_t>(f)));
    }
    r.x = generate_ki(derive_seed(cfg.seed, 1), n, cfg.ki_passband, rate);

    const bool ki_on = cfg.mode != Mode::no_ki && !is_off(cfg.ki_gain_db);
    if (ki_on) {
        auto p = cfg.ki_params;
        p.gain_db = cfg.ki_gain_db;
        r.rx_ki = apply_channel(r.x, p, derive_seed(cfg.seed, 2));
    } else {
        r.rx_ki = ComplexSignal(std::vector<cplx>(n), rate);
    }
    if (!is_off(cfg.si_gain_db)) {
        auto p = cfg.si_params;
        p.gain_db = cfg.si_gain_db;
        r.rx_si = apply_channel(s, p, derive_seed(cfg.seed, 3));
    } else {
        r.rx_si = ComplexSignal(std::vector<cplx>(n), rate);
    }
    const std::vector<ComplexSignal> parts{r.rx_ki, r.rx_si};
    r.d = superpose(parts, cfg.noise_variance, derive_seed(cfg.seed, 4));
    return r;
}

std::size_t count_errors(const FrameSymbols& estimated, const FrameSymbols& truth)
{
    std::size_t errors = 0;
    for (std::size_t i = 0; i < truth.data_indices.size(); ++i)
        errors += estimated.data_indices[i] != truth.data_indices[i];
    return errors;
}

double parse_real(std::string_view field, std::size_t line, std::string_view column)
{
    double v = 0.0;
    const auto* end = field.data() + field.size();
    auto res = std::from_chars(field.data(), end, v);
    if (res.ec != std::errc() || res.ptr != end)
        throw ValidationError("line " + std::to_string(line) + ": bad " + std::string(column) + " '" +
                              std::string(field) + "'");
    return v;
}

template <typename Int>
Int parse_int(std::string_view field, std::size_t line, std::string_view column)
{
    Int v = 0;
    const auto* end = field.data() + field.size();
    auto res = std::from_chars(field.data(), end, v);
    if (res.ec != std::errc() || res.ptr != end)
        throw ValidationError("line " + std::to_string(line) + ": bad " + std::string(column) + " '" +
                              std::string(field) + "'");
    return v;
}

} // namespace

std::string_view to_string(Mode mode)
{
    switch (mode) {
    case Mode::no_ki:
        return "no_ki";
    case Mode::base_kic:
        return "base_kic";
    case Mode::df_kic:
        return "df_kic";
    }
    return "unknown";
}

Mode parse_mode(std::string_view text)
{
    for (Mode m : {Mode::no_ki, Mode::base_kic, Mode::df_kic})
        if (text == to_string(m))
            return m;
    throw ValidationError("mode: expected no_ki, base_kic or df_kic, got '" + std::string(text) + "'");
}

ImpairmentParams default_ki_channel()
{
    ImpairmentParams p;
    p.taps = unit_energy({{1.0, 0.0}, {0.35, -0.2}, {0.0, 0.12}, {-0.06, 0.0}, {0.03, 0.02}});
    p.cfo_rad_per_sample = 1e-3;
    p.sfo_rate = 1e-5;
    p.initial_phase = 0.7;
    return p;
}

ImpairmentParams default_si_channel()
{
    ImpairmentParams p;
    p.taps = unit_energy({{1.0, 0.0}, {-0.25, 0.15}, {0.1, 0.0}, {0.0, 0.05}, {-0.02, 0.0}});
    p.cfo_rad_per_sample = 2e-5;
    p.sfo_rate = -4e-6;
    p.initial_phase = -1.2;
    return p;
}

void ScenarioConfig::validate() const
{
    dfkic.validate();
    for (double g : {ki_gain_db, si_gain_db})
        if (std::isnan(g) || (std::isinf(g) && g > 0.0))
            throw ValidationError("scenario gains must be finite or -inf");
    auto ki = ki_params;
    ki.gain_db = 0.0;
    ki.validate();
    auto si = si_params;
    si.gain_db = 0.0;
    si.validate();
    if (n_frames < 1)
        throw ValidationError("scenario.n_frames must be >= 1");
    if (!(noise_variance > 0.0))
        throw ValidationError("scenario.noise_variance must be positive");
    if (!(code_rate > 0.0 && code_rate <= 1.0))
        throw ValidationError("scenario.code_rate must be in (0, 1]");
    if (!(ki_passband > 0.0 && ki_passband <= 1.0))
        throw ValidationError("scenario.ki_passband must be in (0, 1]");
    if (!(transient_fraction >= 0.0 && transient_fraction < 1.0))
        throw ValidationError("scenario.transient_fraction must be in [0, 1)");
}

double ser(const FrameSymbols& estimated, const FrameSymbols& truth)
{
    if (estimated.n_symbols != truth.n_symbols || estimated.n_data_subcarriers != truth.n_data_subcarriers ||
        estimated.data_indices.size() != truth.data_indices.size())
        throw ValidationError("ser: frame dimensions differ");
    if (truth.data_indices.empty())
        throw ValidationError("ser: empty frame");
    return static_cast<double>(count_errors(estimated, truth)) / static_cast<double>(truth.data_indices.size());
}

double goodput(double ser_val, int qam_order, double code_rate)
{
    if (!(ser_val >= 0.0 && ser_val <= 1.0))
        throw ValidationError("goodput: ser must be in [0, 1]");
    if (qam_order < 2)
        throw ValidationError("goodput: qam order must be >= 2");
    return (1.0 - ser_val) * std::log2(static_cast<double>(qam_order)) * code_rate;
}

ScenarioReport run_scenario_report(const ScenarioConfig& cfg, const ResidualHook& hook,
                                   const ComplexSignal* received)
{
    cfg.validate();
    const auto& ocfg = cfg.dfkic.ofdm;
    const std::size_t frame_len = ocfg.frame_len();
    const auto skip = static_cast<std::size_t>(cfg.transient_fraction * static_cast<double>(frame_len));

    ScenarioReport rep;
    SweepRow& row = rep.row;
    row.ki_db = cfg.ki_gain_db;
    row.si_db = cfg.si_gain_db;
    row.mode = cfg.mode;
    row.qam = ocfg.qam_order;
    row.seed = cfg.seed.value;
    if (is_off(cfg.si_gain_db))
        add_flag(row.flags, "si_off");

    SimulatedScenario r = realize(cfg);
    if (received) {
        if (received->size() != r.d.size())
            throw ValidationError("received signal has " + std::to_string(received->size()) + " samples, scenario needs " +
                                  std::to_string(r.d.size()));
        received->validate();
        r.d = *received;
    }
    const bool ki_on = cfg.mode != Mode::no_ki && !is_off(cfg.ki_gain_db);

    std::optional<EstimatorState> ki_state;
    std::optional<EstimatorState> si_state;
    std::size_t errors = 0;
    std::size_t total = 0;
    double evm_sum = 0.0;
    double iter_sum = 0.0;
    double resid_pow = 0.0;
    double si_pow = 0.0;
    std::size_t window = 0;

    try {
        for (int f = 0; f < cfg.n_frames; ++f) {
            const std::size_t start = frame_len * static_cast<std::size_t>(f);
            const auto d = slice(r.d, start, frame_len);
            const auto& truth = r.truth[static_cast<std::size_t>(f)];
            FrameReport fr;
            FrameSymbols decided;
            ComplexSignal ki_estimate(std::vector<cplx>(frame_len), d.sample_rate_hz);

            if (cfg.mode == Mode::no_ki) {
                auto dem = ofdm_demodulate(d, ocfg, 0);
                if (hook)
                    hook(f, 0, d);
                decided = std::move(dem.symbols);
                fr.evm = dem.quality.evm_rms;
                fr.quality_trace.push_back(fr.evm);
            } else if (cfg.mode == Mode::base_kic) {
                const auto x = slice(r.x, start, r.x.size() - start);
                auto kic = cancel(x, d, ki_state ? *ki_state : init_state(cfg.dfkic.canceller), cfg.dfkic.canceller);
                if (hook)
                    hook(f, 0, kic.error);
                auto dem = ofdm_demodulate(kic.error, ocfg, 0);
                decided = std::move(dem.symbols);
                fr.evm = dem.quality.evm_rms;
                fr.quality_trace.push_back(fr.evm);
                ki_estimate = std::move(kic.d_hat);
                ki_state = carry_to_next_buffer(kic.state, frame_len);
            } else {
                const auto x = slice(r.x, start, r.x.size() - start);
                DfkicWarmStart warm{ki_state, si_state};
                auto stages = DfkicStages::standard();
                if (hook)
                    stages.observe_residual = [&](int k, const ComplexSignal& e) { hook(f, k, e); };
                auto res = df_kic(x, d, cfg.dfkic, 0, warm, stages);
                decided = std::move(res.symbols);
                fr.evm = res.quality_trace.back();
                if (res.records.size() > 1 && !res.records.back().accepted)
                    fr.evm = res.quality_trace[res.quality_trace.size() - 2];
                if (!res.chosen_branch_trace.empty() && res.chosen_branch_trace.back() == Branch::received)
                    fr.evm = res.delta_d;
                fr.iterations = res.iterations_used;
                fr.delta_d = res.delta_d;
                fr.quality_trace = res.quality_trace;
                fr.records = res.records;
                for (const auto& rec : res.records) {
                    if (rec.decision == "reverted")
                        add_flag(row.flags, "reverted");
                    if (rec.decision == "received_stream")
                        add_flag(row.flags, "received_stream");
                }
                ki_estimate = std::move(res.ki_estimate);
                ki_state = carry_to_next_buffer(res.ki_state, frame_len);
                si_state = carry_to_next_buffer(res.si_state, frame_len);
            }

            const std::size_t e = count_errors(decided, truth);
            fr.ser = static_cast<double>(e) / static_cast<double>(truth.data_indices.size());
            errors += e;
            total += truth.data_indices.size();
            evm_sum += fr.evm;
            iter_sum += fr.iterations;
            for (std::size_t i = skip; i < frame_len; ++i) {
                resid_pow += std::norm(r.rx_ki.samples[start + i] - ki_estimate.samples[i]);
                si_pow += std::norm(r.rx_si.samples[start + i]);
            }
            window += frame_len - skip;
            rep.frames.push_back(std::move(fr));
        }
    } catch (const DivergenceError&) {
        add_flag(row.flags, "diverged");
    } catch (const RuntimeError&) {
        add_flag(row.flags, "runtime_error");
    }

    if (rep.frames.size() != static_cast<std::size_t>(cfg.n_frames)) {
        row.residual_ki_db = kNan;
        row.post_kic_sinr_db = kNan;
        row.ser = 1.0;
        row.evm = kNan;
        row.iterations = 0.0;
        row.goodput_bps = 0.0;
        return rep;
    }
    const double nf = static_cast<double>(cfg.n_frames);
    const double w = static_cast<double>(window);
    const double resid = resid_pow / w;
    row.residual_ki_db = ki_on ? linear_to_db(resid / cfg.noise_variance) : -std::numeric_limits<double>::infinity();
    row.post_kic_sinr_db = linear_to_db((si_pow / w) / (resid + cfg.noise_variance));
    row.ser = static_cast<double>(errors) / static_cast<double>(total);
    row.evm = evm_sum / nf;
    row.iterations = iter_sum / nf;
    row.goodput_bps = goodput(row.ser, row.qam, cfg.code_rate);
    return rep;
}

SimulatedScenario simulate(const ScenarioConfig& cfg)
{
    cfg.validate();
    return realize(cfg);
}

SweepRow run_scenario(const ScenarioConfig& cfg)
{
    return run_scenario_report(cfg).row;
}

std::vector<double> GridRange::values() const
{
    if (!(step > 0.0) || !std::isfinite(lo) || !std::isfinite(hi) || hi < lo)
        throw ValidationError("grid range needs finite lo <= hi and step > 0");
    const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i)
        v[i] = lo + static_cast<double>(i) * step;
    return v;
}

std::vector<SweepRow> sweep_grid(const ScenarioConfig& base, const GridRange& ki, const GridRange& si,
                                 const std::vector<Mode>& modes, int seeds, int workers)
{
    if (modes.empty())
        throw ValidationError("sweep needs at least one mode");
    if (seeds < 1)
        throw ValidationError("sweep needs at least one seed");
    if (workers < 1)
        throw ValidationError("sweep needs at least one worker");
    base.validate();

    auto sorted_modes = modes;
    std::sort(sorted_modes.begin(), sorted_modes.end());
    sorted_modes.erase(std::unique(sorted_modes.begin(), sorted_modes.end()), sorted_modes.end());

    std::vector<ScenarioConfig> jobs;
    for (double k : ki.values())
        for (double s : si.values())
            for (Mode m : sorted_modes)
                for (int r = 0; r < seeds; ++r) {
                    ScenarioConfig c = base;
                    c.ki_gain_db = k;
                    c.si_gain_db = s;
                    c.mode = m;
                    c.seed = RngSeed{base.seed.value + static_cast<std::uint64_t>(r)};
                    jobs.push_back(std::move(c));
                }

    std::vector<SweepRow> rows(jobs.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++)
            rows[i] = run_scenario(jobs[i]);
    };
    const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(workers), jobs.size());
    std::vector<std::jthread> pool;
    for (std::size_t t = 1; t < n_threads; ++t)
        pool.emplace_back(work);
    work();
    return rows;
}

std::string format_real(double v)
{
    if (std::isnan(v))
        return "nan";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string format_rows(const std::vector<SweepRow>& rows)
{
    std::string out(kCsvHeader);
    out += '\n';
    for (const auto& r : rows) {
        if (r.flags.find_first_of(",\n") != std::string::npos)
            throw ValidationError("row flags must not contain ',' or newlines");
        out += format_real(r.ki_db) + ',' + format_real(r.si_db) + ',' + std::string(to_string(r.mode)) + ',' +
               std::to_string(r.qam) + ',' + format_real(r.residual_ki_db) + ',' + format_real(r.post_kic_sinr_db) +
               ',' + format_real(r.ser) + ',' + format_real(r.evm) + ',' + format_real(r.iterations) + ',' +
               format_real(r.goodput_bps) + ',' + std::to_string(r.seed) + ',' + r.flags + '\n';
    }
    return out;
}

std::vector<SweepRow> parse_rows(std::string_view text)
{
    std::vector<SweepRow> rows;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    bool header_seen = false;
    while (pos < text.size()) {
        auto eol = text.find('\n', pos);
        if (eol == std::string_view::npos)
            eol = text.size();
        std::string_view line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.remove_suffix(1);
        if (!header_seen) {
            if (line != kCsvHeader)
                throw ValidationError("line 1: header does not match the sweep schema");
            header_seen = true;
            continue;
        }
        if (line.empty())
            continue;
        std::vector<std::string_view> f;
        std::size_t s = 0;
        while (true) {
            const auto c = line.find(',', s);
            f.push_back(line.substr(s, c == std::string_view::npos ? std::string_view::npos : c - s));
            if (c == std::string_view::npos)
                break;
            s = c + 1;
        }
        if (f.size() != 12)
            throw ValidationError("line " + std::to_string(line_no) + ": expected 12 columns, got " +
                                  std::to_string(f.size()));
        SweepRow r;
        r.ki_db = parse_real(f[0], line_no, "ki_db");
        r.si_db = parse_real(f[1], line_no, "si_db");
        try {
            r.mode = parse_mode(f[2]);
        } catch (const ValidationError& e) {
            throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
        }
        r.qam = parse_int<int>(f[3], line_no, "qam");
        r.residual_ki_db = parse_real(f[4], line_no, "residual_ki_db");
        r.post_kic_sinr_db = parse_real(f[5], line_no, "post_kic_sinr_db");
        r.ser = parse_real(f[6], line_no, "ser");
        r.evm = parse_real(f[7], line_no, "evm");
        r.iterations = parse_real(f[8], line_no, "iterations");
        r.goodput_bps = parse_real(f[9], line_no, "goodput_bps");
        r.seed = parse_int<std::uint64_t>(f[10], line_no, "seed");
        r.flags = std::string(f[11]);
        rows.push_back(std::move(r));
    }
    if (!header_seen)
        throw ValidationError("line 1: missing header");
    return rows;
}

void write_rows(const std::vector<SweepRow>& rows, const std::filesystem::path& path)
{
    const auto text = format_rows(rows);
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw RuntimeError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out)
        throw RuntimeError("write failed: " + path.string());
}

std::vector<SweepRow> read_rows(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw RuntimeError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_rows(ss.str());
}

} // namespace kiclab
