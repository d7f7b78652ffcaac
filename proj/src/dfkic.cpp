#include "kiclab/dfkic.hpp"

#include <algorithm>
#include <array>
#include <utility>

namespace kiclab {
namespace {

// order -> EVM at SER 1e-3 over AWGN, 2e6 symbols per point.
constexpr std::array<std::pair<int, double>, 7> kQualityTargets{{
    {4, 0.303486},
    {8, 0.171674},
    {16, 0.131011},
    {32, 0.092029},
    {64, 0.063219},
    {128, 0.045057},
    {256, 0.031233},
}};

double residual_power(const ComplexSignal& s)
{
    return s.empty() ? 0.0 : mean_power(s);
}

ComplexSignal subtract(const ComplexSignal& a, const ComplexSignal& b)
{
    ComplexSignal out = a;
    for (std::size_t i = 0; i < out.size(); ++i)
        out.samples[i] -= b.samples[i];
    return out;
}

} // namespace

double default_quality_target(int qam_order)
{
    for (auto [order, evm] : kQualityTargets)
        if (order == qam_order)
            return evm;
    throw ValidationError("qam: no quality target for order " + std::to_string(qam_order));
}

void DfkicConfig::validate() const
{
    if (max_iterations < 0)
        throw ValidationError("dfkic.max_iterations must be >= 0");
    ofdm.validate();
    canceller.validate();
    if (!(effective_quality_target() > 0.0))
        throw ValidationError("dfkic.quality_target must be positive");
}

double DfkicConfig::effective_quality_target() const
{
    return quality_target > 0.0 ? quality_target : default_quality_target(ofdm.qam_order);
}

DfkicStages DfkicStages::standard()
{
    DfkicStages s;
    s.cancel = [](const ComplexSignal& r, const ComplexSignal& d, const EstimatorState& st, const CancellerConfig& c) {
        return kiclab::cancel(r, d, st, c);
    };
    s.demodulate = [](const ComplexSignal& sig, const OfdmConfig& c, std::size_t start) {
        return ofdm_demodulate(sig, c, start);
    };
    s.modulate = [](const FrameSymbols& f, const OfdmConfig& c) { return ofdm_modulate(f, c); };
    return s;
}

DfkicResult df_kic(const ComplexSignal& x, const ComplexSignal& d, const DfkicConfig& cfg, std::size_t frame_start,
                   const DfkicWarmStart& warm, const DfkicStages& stages)
{
    cfg.validate();
    if (x.size() < d.size())
        throw ValidationError("known interference shorter than the received signal");
    if (d.size() < frame_start + cfg.ofdm.frame_len())
        throw ValidationError("received signal too short for the frame");
    const double target = cfg.effective_quality_target();

    DfkicResult res;
    EstimatorState zeta_x = warm.ki ? *warm.ki : init_state(cfg.canceller);
    EstimatorState zeta_s = warm.si ? *warm.si : init_state(cfg.canceller);

    // Base pass.
    IterationRecord base;
    base.ki_state_in = fingerprint(zeta_x);
    auto kic = stages.cancel(x, d, zeta_x, cfg.canceller);
    zeta_x = std::move(kic.state);
    base.ki_state_out = fingerprint(zeta_x);
    ComplexSignal e_x = subtract(d, kic.d_hat);
    ComplexSignal d_hat_x = std::move(kic.d_hat);
    if (stages.observe_residual)
        stages.observe_residual(0, e_x);

    auto from_d = stages.demodulate(d, cfg.ofdm, frame_start);
    auto from_e = stages.demodulate(e_x, cfg.ofdm, frame_start);
    res.delta_d = from_d.quality.evm_rms;

    FrameSymbols accepted = std::move(from_e.symbols);
    double delta_prev = from_e.quality.evm_rms;
    Branch branch = Branch::ki_cancelled;
    if (delta_prev > res.delta_d) {
        accepted = std::move(from_d.symbols);
        delta_prev = res.delta_d;
        branch = Branch::received;
    }
    res.quality_trace.push_back(delta_prev);
    res.chosen_branch_trace.push_back(branch);
    base.delta = delta_prev;
    base.ki_residual_power = residual_power(e_x);
    base.decision = branch == Branch::received ? "received_stream" : "continue";

    auto finish = [&](FrameSymbols syms, ComplexSignal e, ComplexSignal dx, int iterations) {
        res.symbols = std::move(syms);
        res.residual = std::move(e);
        res.ki_estimate = std::move(dx);
        res.iterations_used = iterations;
        res.ki_state = zeta_x;
        res.si_state = zeta_s;
        return res;
    };

    if (delta_prev < target) {
        base.decision = "target_met";
        res.records.push_back(base);
        return finish(std::move(accepted), std::move(e_x), std::move(d_hat_x), 0);
    }
    res.records.push_back(base);

    for (int k = 1; k <= cfg.max_iterations; ++k) {
        IterationRecord rec;
        rec.iteration = k;

        // Reconstruct the transmitted SI frame and place it where the frame sits in d.
        const auto frame_wave = stages.modulate(accepted, cfg.ofdm);
        ComplexSignal s_hat(std::vector<cplx>(d.size()), d.sample_rate_hz);
        std::copy(frame_wave.samples.begin(), frame_wave.samples.end(),
                  s_hat.samples.begin() + static_cast<std::ptrdiff_t>(frame_start));

        rec.si_state_in = fingerprint(zeta_s);
        auto sic = stages.cancel(s_hat, e_x, zeta_s, cfg.canceller);
        zeta_s = std::move(sic.state);
        rec.si_state_out = fingerprint(zeta_s);
        const ComplexSignal e_s = subtract(d, sic.d_hat);

        rec.ki_state_in = fingerprint(zeta_x);
        auto kic_k = stages.cancel(x, e_s, zeta_x, cfg.canceller);
        zeta_x = std::move(kic_k.state);
        rec.ki_state_out = fingerprint(zeta_x);
        ComplexSignal e_x_k = subtract(d, kic_k.d_hat);
        if (stages.observe_residual)
            stages.observe_residual(k, e_x_k);

        auto dem = stages.demodulate(e_x_k, cfg.ofdm, frame_start);
        const double delta = dem.quality.evm_rms;
        res.quality_trace.push_back(delta);
        res.chosen_branch_trace.push_back(Branch::ki_cancelled);
        rec.delta = delta;
        rec.ki_residual_power = residual_power(e_x_k);
        rec.si_residual_power = residual_power(e_s);

        if (delta < target) {
            rec.decision = "target_met";
            res.records.push_back(rec);
            return finish(std::move(dem.symbols), std::move(e_x_k), std::move(kic_k.d_hat), k);
        }
        if (delta > delta_prev) {
            // Worse than the previous iteration: keep the previous stream.
            rec.decision = "reverted";
            rec.accepted = false;
            res.records.push_back(rec);
            return finish(std::move(accepted), std::move(e_x), std::move(d_hat_x), k);
        }
        rec.decision = k == cfg.max_iterations ? "max_iterations" : "continue";
        res.records.push_back(rec);
        accepted = std::move(dem.symbols);
        e_x = std::move(e_x_k);
        d_hat_x = std::move(kic_k.d_hat);
        delta_prev = delta;
    }
    return finish(std::move(accepted), std::move(e_x), std::move(d_hat_x), cfg.max_iterations);
}

} // namespace kiclab
