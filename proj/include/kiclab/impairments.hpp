#pragma once

// Forward channel simulator: multipath FIR, carrier and sampling frequency
// offsets, AWGN and power scaling, plus the fractional interpolator shared
// with the canceller.

#include "kiclab/core.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace kiclab {

struct InterpSample {
    cplx value;
    cplx derivative; // d value / d position
};

// 4-point cubic Lagrange interpolation at a fractional position, with the
// analytic derivative of the interpolant. Requires position in [1, len - 3).
InterpSample frac_interp(std::span<const cplx> buffer, double position);

// Same interpolant over the buffer extended with zeros on both sides; any
// finite position is accepted and integer positions return nodes exactly.
InterpSample frac_interp_zero_ext(std::span<const cplx> buffer, double position);

struct ImpairmentParams {
    std::vector<cplx> taps{cplx{1.0, 0.0}};
    double cfo_rad_per_sample = 0.0;
    double sfo_rate = 0.0;
    double initial_phase = 0.0;
    double noise_variance = 0.0;
    double gain_db = 0.0;
    // Optional time variation, all off by default.
    double cfo_drift = 0.0;       // rad/sample^2
    double sfo_drift = 0.0;       // per sample
    double phase_noise_var = 0.0; // Wiener phase increment variance, rad^2/sample

    void validate() const;
};

// out(n) = g * sum_m conj(taps[m]) * x(p(n - m)) * exp(j phi(n)) + noise, with
// p(n) = n (1 + sfo) and phi(n) = initial_phase + n cfo (plus optional drifts
// and phase noise). Output length equals input length.
ComplexSignal apply_channel(const ComplexSignal& sig, const ImpairmentParams& p, RngSeed seed);

// Elementwise sum plus complex AWGN of the given variance.
ComplexSignal superpose(std::span<const ComplexSignal> parts, double noise_variance, RngSeed seed);

// IQ fixture files: 16-byte header ("KICLAB1\0", u32 LE sample rate in Hz,
// 4 reserved zero bytes) followed by little-endian float32 I/Q pairs.
void write_iq(const std::filesystem::path& path, const ComplexSignal& sig);
ComplexSignal read_iq(const std::filesystem::path& path);

} // namespace kiclab
