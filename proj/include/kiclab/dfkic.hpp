#pragma once

// Decision-feedback-aided known-interference cancellation over one received
// frame: base cancellation, dual demodulation and quality gating, then
// iterative reconstruction and cancellation of the signal of interest and
// re-cancellation of the known interference with warm-started estimators.

#include "kiclab/canceller.hpp"
#include "kiclab/waveform.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace kiclab {

// Nondata-aided EVM at which AWGN hard decisions reach SER 1e-3, per order
// (Monte Carlo, tools/calibrate_quality_target).
double default_quality_target(int qam_order);

struct DfkicConfig {
    int max_iterations = 8;
    double quality_target = 0.0; // <= 0 selects default_quality_target(ofdm.qam_order)
    OfdmConfig ofdm = OfdmConfig::defaults();
    CancellerConfig canceller;

    void validate() const;
    [[nodiscard]] double effective_quality_target() const;
};

// Processing stages, replaceable for instrumentation.
struct DfkicStages {
    std::function<CancelResult(const ComplexSignal& reference, const ComplexSignal& desired,
                               const EstimatorState& state, const CancellerConfig& cfg)>
        cancel;
    std::function<Demodulated(const ComplexSignal& sig, const OfdmConfig& cfg, std::size_t frame_start)> demodulate;
    std::function<ComplexSignal(const FrameSymbols& frame, const OfdmConfig& cfg)> modulate;
    // Optional: sees e_x of every pass (iteration 0 is the base pass).
    std::function<void(int iteration, const ComplexSignal& e_x)> observe_residual;

    static DfkicStages standard();
};

enum class Branch { received, ki_cancelled };

struct IterationRecord {
    int iteration = 0;         // 0 is the base pass
    double delta = 0.0;        // quality of the demodulated KI-cancelled stream
    double ki_residual_power = 0.0; // mean |e_x|^2 over the frame
    double si_residual_power = 0.0; // mean |e_s|^2 over the frame (0 for the base pass)
    bool accepted = true;
    std::string decision;      // "continue", "target_met", "reverted", "max_iterations", "received_stream"
    std::uint64_t ki_state_in = 0;
    std::uint64_t ki_state_out = 0;
    std::uint64_t si_state_in = 0;
    std::uint64_t si_state_out = 0;
};

struct DfkicResult {
    FrameSymbols symbols;
    ComplexSignal residual;    // accepted e_x
    ComplexSignal ki_estimate; // accepted d_hat_x
    double delta_d = 0.0;
    std::vector<double> quality_trace; // delta_e(0), delta_e(1), ... including a reverted entry
    int iterations_used = 0;
    std::vector<Branch> chosen_branch_trace;
    EstimatorState ki_state;
    EstimatorState si_state;
    std::vector<IterationRecord> records;
};

struct DfkicWarmStart {
    std::optional<EstimatorState> ki;
    std::optional<EstimatorState> si;
};

// x is the known interference aligned with d (it may extend past the end of d); the frame occupies
// [frame_start, frame_start + ofdm.frame_len()) of d.
DfkicResult df_kic(const ComplexSignal& x, const ComplexSignal& d, const DfkicConfig& cfg, std::size_t frame_start,
                   const DfkicWarmStart& warm = {}, const DfkicStages& stages = DfkicStages::standard());

} // namespace kiclab
