#pragma once

// Joint stochastic-gradient estimator of FIR taps, carrier frequency offset
// and sampling frequency offset that subtracts a known reference waveform
// from a received buffer. State is a plain value and can be carried into
// another pass (warm restart).

#include "kiclab/core.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace kiclab {

class DivergenceError : public RuntimeError {
public:
    DivergenceError(std::size_t sample, const std::string& what)
        : RuntimeError(what), sample_(sample)
    {
    }
    [[nodiscard]] std::size_t sample() const { return sample_; }

private:
    std::size_t sample_;
};

struct CancellerConfig {
    int n_taps = 5;
    // Forgetting factors.
    double lambda_e = 0.99995;   // error power
    double lambda_R = 0.9995;    // regressor power (tap step normalization)
    double lambda_y = 0.999;     // smoothed normalized gradient vector (step-size control)
    double lambda_eps = 0.99999; // CFO gradient power
    double lambda_eta = 0.99999; // SFO gradient power
    // Step sizes.
    double mu_w = 1.0;
    double mu_eps = 5e-7;
    double mu_eta = 1e-8;
    // Step-size control constant: the steady-state normalized tap step is
    // about r / (r + vss_constant) with r = (1 - lambda_y) / (1 + lambda_y).
    double vss_constant = 0.1;
    double regularizer = 1e-12;

    void validate() const;
};

struct EstimatorState {
    std::vector<cplx> w_hat;
    double eps_hat = 0.0;
    double eta_hat = 0.0;
    // Phase and (fractional) reference position for the first sample of the
    // buffer the state is applied to.
    double phase_acc = 0.0;
    double position_acc = 0.0;
    double err_power = 0.0;
    double in_power = 0.0;
    double grad_power_eps = 0.0;
    double grad_power_eta = 0.0;
    std::vector<cplx> grad_avg;   // smoothed normalized tap gradient
    std::uint64_t n_updates = 0;  // samples processed since zero init
    std::uint64_t err_updates = 0; // samples in err_power since the current pass began

    void validate(const CancellerConfig& cfg) const;
};

EstimatorState init_state(const CancellerConfig& cfg);

struct CancelResult {
    ComplexSignal d_hat;
    ComplexSignal error;
    EstimatorState state;
};

// Runs the per-sample recurrence over the whole desired buffer. The reference
// shares its origin and may run past the end of it, which gives the model the
// samples a positive sampling offset reaches beyond the buffer. The returned
// state's phase/position accumulators are rewound to the start of this buffer
// using the final rate estimates, so it can be fed straight back for another
// pass.
// A warm state (n_updates > 0) is first re-aligned with the buffer with its
// taps frozen: carrier phase and frequency, then timing and sampling rate, are
// fitted over two windows of kFitWindow samples where the model output is
// nonzero, the second starting kFitSpan samples after the first. The error
// power describes the desired signal of one pass and restarts with each call.
inline constexpr std::size_t kFitWindow = 2048;
inline constexpr std::size_t kFitSpan = 16384;

CancelResult cancel(const ComplexSignal& reference, const ComplexSignal& desired, const EstimatorState& state,
                    const CancellerConfig& cfg);

// Moves a (rewound) state to the start of the buffer that follows one of
// n_samples samples.
EstimatorState carry_to_next_buffer(const EstimatorState& state, std::size_t n_samples);

// Per-sample quantities at a frozen state, exposed for gradient checks.
struct SampleEval {
    cplx d_hat;
    cplx error;
    double grad_eps; // Im{conj(d_hat) e};  d|e|^2/dphase    = -2 grad_eps
    double grad_eta; // Re{conj(e) d_hat'}; d|e|^2/dposition = -2 grad_eta
};

SampleEval evaluate_sample(std::span<const cplx> reference, cplx desired, std::span<const cplx> w_hat,
                           double phase, double position);

// Stable FNV-1a hash over every state field, for tracing state flow.
std::uint64_t fingerprint(const EstimatorState& state);

// key=value lines, one per field (taps expand to w_hat[i].re / .im).
std::string to_keyvalue(const EstimatorState& state);
EstimatorState from_keyvalue(const std::string& text);

} // namespace kiclab
