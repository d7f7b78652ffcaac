#include "kiclab/impairments.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace kiclab {
namespace {

// Lagrange basis on nodes -1, 0, 1, 2 evaluated at fractional offset t in [0, 1),
// and its derivative.
inline void lagrange4(double t, std::array<double, 4>& c, std::array<double, 4>& dc)
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

} // namespace

InterpSample frac_interp(std::span<const cplx> buffer, double position)
{
    const double len = static_cast<double>(buffer.size());
    if (!(position >= 1.0 && position < len - 3.0))
        throw ValidationError("interpolation position outside cubic support");
    return frac_interp_zero_ext(buffer, position);
}

InterpSample frac_interp_zero_ext(std::span<const cplx> buffer, double position)
{
    const double fl = std::floor(position);
    const double t = position - fl;
    const auto base = static_cast<std::ptrdiff_t>(fl);
    const auto n = static_cast<std::ptrdiff_t>(buffer.size());
    std::array<double, 4> c, dc;
    lagrange4(t, c, dc);
    InterpSample out{};
    if (base >= 1 && base + 2 < n) {
        const cplx* p = buffer.data() + base - 1;
        out.value = c[0] * p[0] + c[1] * p[1] + c[2] * p[2] + c[3] * p[3];
        out.derivative = dc[0] * p[0] + dc[1] * p[1] + dc[2] * p[2] + dc[3] * p[3];
        return out;
    }
    for (int i = 0; i < 4; ++i) {
        const std::ptrdiff_t k = base - 1 + i;
        if (k >= 0 && k < n) {
            out.value += c[i] * buffer[k];
            out.derivative += dc[i] * buffer[k];
        }
    }
    return out;
}

void ImpairmentParams::validate() const
{
    if (taps.empty())
        throw ValidationError("channel taps must be nonempty");
    if (!(std::abs(sfo_rate) < 1e-3))
        throw ValidationError("|sfo_rate| must be below 1e-3");
    if (!(noise_variance >= 0.0) || !(phase_noise_var >= 0.0))
        throw ValidationError("variances must be nonnegative");
    for (double v : {cfo_rad_per_sample, initial_phase, gain_db, cfo_drift, sfo_drift})
        if (!std::isfinite(v))
            throw ValidationError("impairment parameters must be finite");
}

ComplexSignal apply_channel(const ComplexSignal& sig, const ImpairmentParams& p, RngSeed seed)
{
    if (sig.empty())
        throw ValidationError("empty signal");
    p.validate();

    const std::size_t n = sig.size();
    const std::size_t m_taps = p.taps.size();
    const double g = std::sqrt(db_to_linear(p.gain_db));

    // Resampled input x(p(n)).
    std::vector<cplx> resampled(n);
    double pos = 0.0;
    double rate = 1.0 + p.sfo_rate;
    for (std::size_t i = 0; i < n; ++i) {
        resampled[i] = frac_interp_zero_ext(sig.samples, pos).value;
        pos += rate;
        rate += p.sfo_drift;
    }

    Rng phase_rng(derive_seed(seed, 11));
    Rng noise_rng(derive_seed(seed, 12));
    std::vector<cplx> out(n);
    double phase = p.initial_phase;
    double cfo = p.cfo_rad_per_sample;
    const double pn_sigma = std::sqrt(p.phase_noise_var);
    const double noise_sigma = std::sqrt(p.noise_variance);
    for (std::size_t i = 0; i < n; ++i) {
        cplx acc{};
        for (std::size_t m = 0; m < m_taps && m <= i; ++m)
            acc += std::conj(p.taps[m]) * resampled[i - m];
        out[i] = g * acc * std::polar(1.0, phase);
        if (p.noise_variance > 0.0)
            out[i] += noise_sigma * noise_rng.complex_normal();
        phase += cfo;
        cfo += p.cfo_drift;
        if (pn_sigma > 0.0)
            phase += pn_sigma * phase_rng.normal();
    }
    return {std::move(out), sig.sample_rate_hz};
}

ComplexSignal superpose(std::span<const ComplexSignal> parts, double noise_variance, RngSeed seed)
{
    if (parts.empty())
        throw ValidationError("superpose needs at least one signal");
    const std::size_t n = parts.front().size();
    for (const auto& s : parts)
        if (s.size() != n)
            throw ValidationError("superposed signals differ in length");
    if (!(noise_variance >= 0.0))
        throw ValidationError("noise variance must be nonnegative");

    std::vector<cplx> out(n);
    for (const auto& s : parts)
        for (std::size_t i = 0; i < n; ++i)
            out[i] += s.samples[i];
    if (noise_variance > 0.0) {
        Rng rng(seed);
        const double sigma = std::sqrt(noise_variance);
        for (auto& v : out)
            v += sigma * rng.complex_normal();
    }
    return {std::move(out), parts.front().sample_rate_hz};
}

namespace {

constexpr char kIqMagic[8] = {'K', 'I', 'C', 'L', 'A', 'B', '1', '\0'};

template <typename T>
void put_le(std::ostream& os, T v)
{
    static_assert(std::endian::native == std::endian::little, "big-endian hosts not supported");
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

} // namespace

void write_iq(const std::filesystem::path& path, const ComplexSignal& sig)
{
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw RuntimeError("cannot open " + path.string() + " for writing");
    os.write(kIqMagic, sizeof kIqMagic);
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(std::llround(sig.sample_rate_hz)));
    put_le<std::uint32_t>(os, 0);
    for (const auto& s : sig.samples) {
        put_le<float>(os, static_cast<float>(s.real()));
        put_le<float>(os, static_cast<float>(s.imag()));
    }
    if (!os)
        throw RuntimeError("write failed: " + path.string());
}

ComplexSignal read_iq(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw RuntimeError("cannot open " + path.string());
    char header[16];
    if (!is.read(header, sizeof header) || std::memcmp(header, kIqMagic, sizeof kIqMagic) != 0)
        throw ValidationError("not a KICLAB1 IQ file: " + path.string());
    std::uint32_t rate = 0;
    std::memcpy(&rate, header + 8, sizeof rate);
    if (rate == 0)
        throw ValidationError("IQ file has zero sample rate: " + path.string());

    std::vector<cplx> samples;
    float iq[2];
    while (is.read(reinterpret_cast<char*>(iq), sizeof iq))
        samples.emplace_back(iq[0], iq[1]);
    if (is.gcount() != 0)
        throw ValidationError("truncated IQ sample in " + path.string());
    return {std::move(samples), static_cast<double>(rate)};
}

} // namespace kiclab
