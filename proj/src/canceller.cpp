#include "kiclab/canceller.hpp"

#include "kiclab/impairments.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <map>
#include <sstream>
#include <utility>

namespace kiclab {

void CancellerConfig::validate() const
{
    if (n_taps < 1)
        throw ValidationError("canceller.n_taps must be >= 1");
    const std::pair<const char*, double> lambdas[] = {{"lambda_e", lambda_e},
                                                      {"lambda_R", lambda_R},
                                                      {"lambda_y", lambda_y},
                                                      {"lambda_eps", lambda_eps},
                                                      {"lambda_eta", lambda_eta}};
    for (auto [name, l] : lambdas)
        if (!(l > 0.0 && l < 1.0))
            throw ValidationError(std::string("canceller.") + name + " must be in (0, 1)");
    const std::pair<const char*, double> steps[] = {{"mu_w", mu_w}, {"mu_eps", mu_eps}, {"mu_eta", mu_eta}};
    for (auto [name, m] : steps)
        if (!(m >= 0.0))
            throw ValidationError(std::string("canceller.") + name + " must be nonnegative");
    if (!(vss_constant >= 0.0))
        throw ValidationError("canceller.vss_constant must be nonnegative");
    if (!(regularizer > 0.0))
        throw ValidationError("canceller.regularizer must be positive");
}

void EstimatorState::validate(const CancellerConfig& cfg) const
{
    if (w_hat.size() != static_cast<std::size_t>(cfg.n_taps) || grad_avg.size() != w_hat.size())
        throw ValidationError("estimator state tap count does not match config");
}

EstimatorState init_state(const CancellerConfig& cfg)
{
    cfg.validate();
    EstimatorState s;
    s.w_hat.assign(static_cast<std::size_t>(cfg.n_taps), cplx{});
    s.grad_avg.assign(s.w_hat.size(), cplx{});
    s.in_power = cfg.regularizer;
    return s;
}

namespace {

constexpr std::size_t kMaxTaps = 64;
constexpr double kGradClip = 3.0;
constexpr int kFineFitPasses = 3;

inline void lagrange4(double t, double c[4], double dc[4])
{
    const double tm1 = t - 1.0;
    const double tm2 = t - 2.0;
    const double tp1 = t + 1.0;
    c[0] = -t * tm1 * tm2 / 6.0;
    c[1] = tp1 * tm1 * tm2 / 2.0;
    c[2] = -tp1 * t * tm2 / 2.0;
    c[3] = tp1 * t * tm1 / 6.0;
    dc[0] = -(3.0 * t * t - 6.0 * t + 2.0) / 6.0;
    dc[1] = (3.0 * t * t - 4.0 * t - 1.0) / 2.0;
    dc[2] = -(3.0 * t * t - 2.0 * t - 2.0) / 2.0;
    dc[3] = (3.0 * t * t - 1.0) / 6.0;
}

// u[m] = ref(position - m) and its position derivative, zero outside the buffer.
inline void regressor(std::span<const cplx> ref, double position, std::size_t m_taps, cplx* u, cplx* du)
{
    const double fl = std::floor(position);
    const double t = position - fl;
    const auto base = static_cast<std::ptrdiff_t>(fl);
    const auto n = static_cast<std::ptrdiff_t>(ref.size());
    double c[4], dc[4];
    lagrange4(t, c, dc);
    const auto mt = static_cast<std::ptrdiff_t>(m_taps);
    if (base - mt >= 0 && base + 2 < n) {
        for (std::ptrdiff_t m = 0; m < mt; ++m) {
            const cplx* p = ref.data() + (base - m - 1);
            u[m] = c[0] * p[0] + c[1] * p[1] + c[2] * p[2] + c[3] * p[3];
            du[m] = dc[0] * p[0] + dc[1] * p[1] + dc[2] * p[2] + dc[3] * p[3];
        }
        return;
    }
    for (std::ptrdiff_t m = 0; m < mt; ++m) {
        u[m] = {};
        du[m] = {};
        for (int i = 0; i < 4; ++i) {
            const std::ptrdiff_t k = base - m - 1 + i;
            if (k >= 0 && k < n) {
                u[m] += c[i] * ref[k];
                du[m] += dc[i] * ref[k];
            }
        }
    }
}

// Per-window sums of the frozen model against the buffer: carrier
// correlation, and normal equations of the linearized least-squares fit of
// the error by a phase offset (basis j*y) and a timing offset (basis y').
struct WindowFit {
    cplx corr{};
    double a_pp = 0.0, a_pt = 0.0, a_tt = 0.0;
    double b_p = 0.0, b_t = 0.0;
    double centre = 0.0;
    std::size_t used = 0;

    // (phase, timing) offsets; zero when the system is singular.
    [[nodiscard]] std::pair<double, double> solve() const
    {
        const double det = a_pp * a_tt - a_pt * a_pt;
        if (!(det > 1e-9 * a_pp * a_tt))
            return {0.0, 0.0};
        return {(b_p * a_tt - b_t * a_pt) / det, (a_pp * b_t - a_pt * b_p) / det};
    }
};

// Window 0 covers the first kFitWindow samples where the model output is
// nonzero; window 1 the same number starting kFitSpan samples later.
std::array<WindowFit, 2> fit_windows(std::span<const cplx> ref, std::span<const cplx> desired,
                                     const EstimatorState& s, std::size_t m_taps)
{
    std::array<cplx, kMaxTaps> u{}, du{};
    std::array<WindowFit, 2> win{};
    double phase = s.phase_acc;
    double position = s.position_acc;
    std::size_t first = 0;
    for (std::size_t i = 0; i < desired.size() && win[1].used < kFitWindow; ++i) {
        regressor(ref, position, m_taps, u.data(), du.data());
        const cplx rot = std::polar(1.0, phase);
        phase += s.eps_hat;
        position += 1.0 + s.eta_hat;
        cplx y{}, dy{};
        for (std::size_t m = 0; m < m_taps; ++m) {
            y += std::conj(s.w_hat[m]) * u[m];
            dy += std::conj(s.w_hat[m]) * du[m];
        }
        if (y == cplx{})
            continue;
        if (win[0].used == 0)
            first = i;
        std::size_t w = 0;
        if (win[0].used == kFitWindow) {
            if (i < first + kFitSpan)
                continue;
            w = 1;
        }
        y *= rot;
        dy *= rot;
        const cplx jy{-y.imag(), y.real()};
        const cplx e = desired[i] - y;
        auto& f = win[w];
        f.corr += std::conj(y) * desired[i];
        f.a_pp += std::norm(y);
        f.a_pt += (std::conj(jy) * dy).real();
        f.a_tt += std::norm(dy);
        f.b_p += (std::conj(jy) * e).real();
        f.b_t += (std::conj(dy) * e).real();
        f.centre += static_cast<double>(i);
        ++f.used;
    }
    for (auto& f : win)
        if (f.used > 0)
            f.centre /= static_cast<double>(f.used);
    return win;
}

bool both_windows(const std::array<WindowFit, 2>& win)
{
    return win[1].used == kFitWindow && win[1].centre > win[0].centre;
}

// Warm start: re-aligns the frozen model with the new buffer. A coarse
// carrier fit (phase and frequency from the window correlations) is followed
// by a joint fine fit of phase and timing, with their rates.
void realign(std::span<const cplx> ref, std::span<const cplx> desired, EstimatorState& s, std::size_t m_taps)
{
    auto win = fit_windows(ref, desired, s, m_taps);
    if (win[0].used == 0 || std::abs(win[0].corr) == 0.0)
        return;
    double phase = std::arg(win[0].corr);
    if (both_windows(win) && std::abs(win[1].corr) > 0.0) {
        const double freq = std::arg(win[1].corr * std::conj(win[0].corr)) / (win[1].centre - win[0].centre);
        phase -= freq * win[0].centre;
        s.eps_hat += freq;
    }
    s.phase_acc += phase;

    // Gauss-Newton steps: the linearization is coarse for shifts of a
    // sizeable fraction of a sample.
    for (int pass = 0; pass < kFineFitPasses; ++pass) {
        win = fit_windows(ref, desired, s, m_taps);
        auto [dphase, shift] = win[0].solve();
        if (both_windows(win)) {
            const auto [dphase1, shift1] = win[1].solve();
            const double span = win[1].centre - win[0].centre;
            const double freq = (dphase1 - dphase) / span;
            const double rate = (shift1 - shift) / span;
            dphase -= freq * win[0].centre;
            shift -= rate * win[0].centre;
            s.eps_hat += freq;
            s.eta_hat += rate;
        }
        s.phase_acc += dphase;
        s.position_acc += std::clamp(shift, -0.5, 0.5);
    }
}

inline bool finite(cplx z)
{
    return std::isfinite(z.real()) && std::isfinite(z.imag());
}

} // namespace

CancelResult cancel(const ComplexSignal& reference, const ComplexSignal& desired, const EstimatorState& state,
                    const CancellerConfig& cfg)
{
    cfg.validate();
    state.validate(cfg);
    if (reference.size() < desired.size())
        throw ValidationError("reference shorter than desired signal");
    if (cfg.n_taps > static_cast<int>(kMaxTaps))
        throw ValidationError("canceller.n_taps above supported maximum");

    const std::size_t n = desired.size();
    const std::size_t m_taps = static_cast<std::size_t>(cfg.n_taps);
    const std::span<const cplx> ref = reference.samples;
    const double reg = cfg.regularizer;

    CancelResult out;
    out.d_hat = ComplexSignal(std::vector<cplx>(n), desired.sample_rate_hz);
    out.error = ComplexSignal(std::vector<cplx>(n), desired.sample_rate_hz);
    EstimatorState s = state;

    // Powers of the forgetting factors, for bias correction of the smoothed
    // quantities during the first samples after zero init.
    auto decay = [&](double lambda) { return std::pow(lambda, static_cast<double>(s.n_updates)); };
    s.err_power = 0.0;
    s.err_updates = 0;
    double pow_e = 1.0;
    double pow_R = decay(cfg.lambda_R);
    double pow_eps = decay(cfg.lambda_eps);
    double pow_eta = decay(cfg.lambda_eta);

    std::array<cplx, kMaxTaps> u{}, du{};
    cplx* w = s.w_hat.data();
    cplx* pavg = s.grad_avg.data();

    if (s.n_updates > 0)
        realign(ref, desired.samples, s, m_taps);

    double phase = s.phase_acc;
    double position = s.position_acc;
    for (std::size_t i = 0; i < n; ++i) {
        regressor(ref, position, m_taps, u.data(), du.data());
        const cplx rot = std::polar(1.0, phase);

        cplx y{};
        cplx dy{};
        double u_norm = 0.0;
        for (std::size_t m = 0; m < m_taps; ++m) {
            u[m] *= rot;
            du[m] *= rot;
            y += std::conj(w[m]) * u[m];
            dy += std::conj(w[m]) * du[m];
            u_norm += std::norm(u[m]);
        }
        const cplx e = desired.samples[i] - y;
        if (!finite(e))
            throw DivergenceError(i, "diverged at sample " + std::to_string(i));
        out.d_hat.samples[i] = y;
        out.error.samples[i] = e;

        ++s.n_updates;
        ++s.err_updates;
        pow_e *= cfg.lambda_e;
        pow_R *= cfg.lambda_R;
        pow_eps *= cfg.lambda_eps;
        pow_eta *= cfg.lambda_eta;

        const double e2 = std::norm(e);
        s.err_power = cfg.lambda_e * s.err_power + (1.0 - cfg.lambda_e) * e2;
        s.in_power = cfg.lambda_R * s.in_power + (1.0 - cfg.lambda_R) * u_norm;
        const double err_pow = s.err_power / (1.0 - pow_e);
        const double in_pow = s.in_power / (1.0 - pow_R);

        // Variable step: |p|^2 of the smoothed normalized gradient against its
        // noise-only level, which is proportional to err_pow / in_pow.
        const cplx ec = std::conj(e);
        double p_norm = 0.0;
        const double inv_u = 1.0 / (u_norm + reg);
        for (std::size_t m = 0; m < m_taps; ++m) {
            pavg[m] = cfg.lambda_y * pavg[m] + (1.0 - cfg.lambda_y) * (u[m] * ec * inv_u);
            p_norm += std::norm(pavg[m]);
        }
        const double noise_level = cfg.vss_constant * err_pow / (in_pow + reg);
        const double step_factor = p_norm / (p_norm + noise_level + reg);
        const double mu = cfg.mu_w * std::clamp(step_factor, 0.0, 1.0) / (in_pow + reg);
        for (std::size_t m = 0; m < m_taps; ++m)
            w[m] += mu * u[m] * ec;

        const double g_eps = (std::conj(y) * e).imag();
        const double g_eta = (ec * dy).real();
        s.grad_power_eps = cfg.lambda_eps * s.grad_power_eps + (1.0 - cfg.lambda_eps) * g_eps * g_eps;
        s.grad_power_eta = cfg.lambda_eta * s.grad_power_eta + (1.0 - cfg.lambda_eta) * g_eta * g_eta;
        const double eps_before = s.eps_hat;
        const double eta_before = s.eta_hat;
        // The smoothed powers react slowly to a jump in the error level (and are
        // near zero while the model output is still zero), so the normalized
        // gradients are clipped.
        const double n_eps = g_eps / std::sqrt(s.grad_power_eps / (1.0 - pow_eps) + reg);
        const double n_eta = g_eta / std::sqrt(s.grad_power_eta / (1.0 - pow_eta) + reg);
        s.eps_hat += cfg.mu_eps * std::clamp(n_eps, -kGradClip, kGradClip);
        s.eta_hat += cfg.mu_eta * std::clamp(n_eta, -kGradClip, kGradClip);

        phase += eps_before;
        position += 1.0 + eta_before;
        if (!std::isfinite(s.eps_hat) || !std::isfinite(s.eta_hat) || !finite(w[0]))
            throw DivergenceError(i, "diverged at sample " + std::to_string(i));
    }

    const double nd = static_cast<double>(n);
    s.phase_acc = std::remainder(phase - nd * s.eps_hat, 2.0 * M_PI);
    s.position_acc = position - nd * (1.0 + s.eta_hat);
    out.state = std::move(s);
    return out;
}

EstimatorState carry_to_next_buffer(const EstimatorState& state, std::size_t n_samples)
{
    EstimatorState s = state;
    const double nd = static_cast<double>(n_samples);
    s.phase_acc = std::remainder(s.phase_acc + nd * s.eps_hat, 2.0 * M_PI);
    s.position_acc += nd * s.eta_hat;
    return s;
}

SampleEval evaluate_sample(std::span<const cplx> reference, cplx desired, std::span<const cplx> w_hat,
                           double phase, double position)
{
    if (w_hat.size() > kMaxTaps)
        throw ValidationError("too many taps");
    std::array<cplx, kMaxTaps> u{}, du{};
    regressor(reference, position, w_hat.size(), u.data(), du.data());
    const cplx rot = std::polar(1.0, phase);
    cplx y{}, dy{};
    for (std::size_t m = 0; m < w_hat.size(); ++m) {
        y += std::conj(w_hat[m]) * u[m] * rot;
        dy += std::conj(w_hat[m]) * du[m] * rot;
    }
    const cplx e = desired - y;
    return {y, e, (std::conj(y) * e).imag(), (std::conj(e) * dy).real()};
}

namespace {

void hash_bytes(std::uint64_t& h, const void* data, std::size_t len)
{
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ULL;
    }
}

void hash_double(std::uint64_t& h, double v)
{
    hash_bytes(h, &v, sizeof v);
}

std::string fmt_double(double v)
{
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

} // namespace

std::uint64_t fingerprint(const EstimatorState& state)
{
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const auto& w : state.w_hat) {
        hash_double(h, w.real());
        hash_double(h, w.imag());
    }
    for (double v : {state.eps_hat, state.eta_hat, state.phase_acc, state.position_acc, state.err_power,
                     state.in_power, state.grad_power_eps, state.grad_power_eta})
        hash_double(h, v);
    for (const auto& p : state.grad_avg) {
        hash_double(h, p.real());
        hash_double(h, p.imag());
    }
    hash_bytes(h, &state.n_updates, sizeof state.n_updates);
    hash_bytes(h, &state.err_updates, sizeof state.err_updates);
    return h;
}

std::string to_keyvalue(const EstimatorState& s)
{
    std::ostringstream os;
    os << "n_taps=" << s.w_hat.size() << '\n';
    for (std::size_t m = 0; m < s.w_hat.size(); ++m) {
        os << "w_hat[" << m << "].re=" << fmt_double(s.w_hat[m].real()) << '\n';
        os << "w_hat[" << m << "].im=" << fmt_double(s.w_hat[m].imag()) << '\n';
    }
    for (std::size_t m = 0; m < s.grad_avg.size(); ++m) {
        os << "grad_avg[" << m << "].re=" << fmt_double(s.grad_avg[m].real()) << '\n';
        os << "grad_avg[" << m << "].im=" << fmt_double(s.grad_avg[m].imag()) << '\n';
    }
    os << "eps_hat=" << fmt_double(s.eps_hat) << '\n'
       << "eta_hat=" << fmt_double(s.eta_hat) << '\n'
       << "phase_acc=" << fmt_double(s.phase_acc) << '\n'
       << "position_acc=" << fmt_double(s.position_acc) << '\n'
       << "err_power=" << fmt_double(s.err_power) << '\n'
       << "in_power=" << fmt_double(s.in_power) << '\n'
       << "grad_power_eps=" << fmt_double(s.grad_power_eps) << '\n'
       << "grad_power_eta=" << fmt_double(s.grad_power_eta) << '\n'
       << "n_updates=" << s.n_updates << '\n'
       << "err_updates=" << s.err_updates << '\n';
    return os.str();
}

EstimatorState from_keyvalue(const std::string& text)
{
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ValidationError("state dump line " + std::to_string(line_no) + ": missing '='");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto num = [&](const std::string& key) {
        auto it = kv.find(key);
        if (it == kv.end())
            throw ValidationError("state dump missing key " + key);
        double v = 0.0;
        const auto& str = it->second;
        auto r = std::from_chars(str.data(), str.data() + str.size(), v);
        if (r.ec != std::errc() || r.ptr != str.data() + str.size())
            throw ValidationError("state dump bad value for " + key);
        return v;
    };
    EstimatorState s;
    const auto m_taps = static_cast<std::size_t>(num("n_taps"));
    for (std::size_t m = 0; m < m_taps; ++m) {
        const std::string k = "[" + std::to_string(m) + "]";
        s.w_hat.emplace_back(num("w_hat" + k + ".re"), num("w_hat" + k + ".im"));
        s.grad_avg.emplace_back(num("grad_avg" + k + ".re"), num("grad_avg" + k + ".im"));
    }
    s.eps_hat = num("eps_hat");
    s.eta_hat = num("eta_hat");
    s.phase_acc = num("phase_acc");
    s.position_acc = num("position_acc");
    s.err_power = num("err_power");
    s.in_power = num("in_power");
    s.grad_power_eps = num("grad_power_eps");
    s.grad_power_eta = num("grad_power_eta");
    auto it = kv.find("n_updates");
    if (it == kv.end())
        throw ValidationError("state dump missing key n_updates");
    s.n_updates = std::stoull(it->second);
    it = kv.find("err_updates");
    if (it == kv.end())
        throw ValidationError("state dump missing key err_updates");
    s.err_updates = std::stoull(it->second);
    return s;
}

} // namespace kiclab
