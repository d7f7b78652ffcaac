#include "kiclab/core.hpp"

#include <cmath>

namespace kiclab {

void ComplexSignal::validate() const
{
    if (!(sample_rate_hz > 0.0) || !std::isfinite(sample_rate_hz))
        throw ValidationError("sample rate must be positive");
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (!std::isfinite(samples[i].real()) || !std::isfinite(samples[i].imag()))
            throw ValidationError("non-finite sample at index " + std::to_string(i));
    }
}

RngSeed derive_seed(RngSeed seed, std::uint64_t stream)
{
    std::uint64_t z = seed.value + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return RngSeed{z ^ (z >> 31)};
}

Rng::Rng(RngSeed seed) : engine_(seed.value) {}

std::uint64_t Rng::next_u64()
{
    return engine_();
}

double Rng::uniform()
{
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal()
{
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u, v, s;
    do {
        u = 2.0 * uniform() - 1.0;
        v = 2.0 * uniform() - 1.0;
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
}

cplx Rng::complex_normal()
{
    const double re = normal();
    const double im = normal();
    return cplx(re, im) * M_SQRT1_2;
}

double db_to_linear(double db)
{
    return std::pow(10.0, db / 10.0);
}

double linear_to_db(double power)
{
    return 10.0 * std::log10(power);
}

double mean_power(std::span<const cplx> samples)
{
    if (samples.empty())
        throw ValidationError("empty signal");
    double acc = 0.0;
    for (const auto& s : samples)
        acc += std::norm(s);
    return acc / static_cast<double>(samples.size());
}

double mean_power(const ComplexSignal& sig)
{
    return mean_power(sig.view());
}

ComplexSignal scale_by(const ComplexSignal& sig, double gain)
{
    ComplexSignal out = sig;
    for (auto& s : out.samples)
        s *= gain;
    return out;
}

ComplexSignal gaussian_stream(RngSeed seed, std::size_t n, double sample_rate_hz)
{
    Rng rng(seed);
    std::vector<cplx> out(n);
    for (auto& s : out)
        s = rng.complex_normal();
    return {std::move(out), sample_rate_hz};
}

} // namespace kiclab
