#pragma once

// Shared value types, deterministic randomness and power helpers.

#include <complex>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace kiclab {

using cplx = std::complex<double>;

// Bad input or configuration. The CLI maps this to exit code 1.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Numerical or processing failure at run time. The CLI maps this to exit code 2.
class RuntimeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ComplexSignal {
    std::vector<cplx> samples;
    double sample_rate_hz = 1.0;

    ComplexSignal() = default;
    ComplexSignal(std::vector<cplx> s, double rate) : samples(std::move(s)), sample_rate_hz(rate) {}

    [[nodiscard]] std::size_t size() const { return samples.size(); }
    [[nodiscard]] bool empty() const { return samples.empty(); }
    [[nodiscard]] std::span<const cplx> view() const { return samples; }

    // Throws ValidationError on a non-positive rate or any non-finite sample.
    void validate() const;
};

struct RngSeed {
    std::uint64_t value = 0;

    friend bool operator==(const RngSeed&, const RngSeed&) = default;
};

// Independent sub-stream seed (splitmix64 of seed and stream tag).
RngSeed derive_seed(RngSeed seed, std::uint64_t stream);

// std::mt19937_64 feeding a fixed 53-bit uniform conversion and a Marsaglia
// polar transform. The standard distributions are implementation-defined, so
// they are not used anywhere that feeds a fixture.
class Rng {
public:
    explicit Rng(RngSeed seed);

    std::uint64_t next_u64();
    // Uniform in [0, 1) with 53 bits of resolution.
    double uniform();
    // Standard normal. Draws pairs; the second value of a pair is cached.
    double normal();
    // Circularly-symmetric complex Gaussian with unit variance.
    cplx complex_normal();

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

double db_to_linear(double db);
double linear_to_db(double power);

double mean_power(std::span<const cplx> samples);
double mean_power(const ComplexSignal& sig);

ComplexSignal scale_by(const ComplexSignal& sig, double gain);

// n i.i.d. CN(0, 1) samples.
ComplexSignal gaussian_stream(RngSeed seed, std::size_t n, double sample_rate_hz = 1.0);

} // namespace kiclab
