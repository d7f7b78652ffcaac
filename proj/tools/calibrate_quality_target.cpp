// Monte-Carlo calibration of the EVM stopping threshold per QAM order: finds
// the AWGN SNR at which the hard-decision SER equals the target and reports the
// nondata-aided EVM measured there. The output table is frozen in
// src/dfkic.cpp (kQualityTargets).
//
// --modem adds the noise in the time domain and runs the full OFDM receiver
// (training-symbol channel estimate, pilot tracking), so estimation error is
// part of the calibration. Without it the noise is added to ideal symbols.

#include "kiclab/impairments.hpp"
#include "kiclab/waveform.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>

using namespace kiclab;

namespace {

struct Point {
    double ser;
    double evm;
};

Point measure(int order, double snr_db, std::size_t n, RngSeed seed)
{
    Rng rng(seed);
    const auto& con = Constellation::get(order);
    const double sigma = std::sqrt(db_to_linear(-snr_db));
    std::vector<cplx> rx(n);
    std::size_t errors = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const int idx = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(order));
        rx[i] = con.points()[idx] + sigma * rng.complex_normal();
        errors += con.slice(rx[i]).index != idx;
    }
    return {static_cast<double>(errors) / static_cast<double>(n), evm_nda(rx, order)};
}

Point measure_modem(int order, double snr_db, std::size_t n, RngSeed seed)
{
    const auto cfg = OfdmConfig::defaults(order, 500);
    const std::size_t per_frame = static_cast<std::size_t>(cfg.symbols_per_frame) * cfg.data_subcarriers();
    const std::size_t frames = (n + per_frame - 1) / per_frame;
    std::size_t errors = 0;
    double evm2 = 0.0;
    for (std::size_t f = 0; f < frames; ++f) {
        const auto frame = random_frame(cfg, derive_seed(seed, 2 * f));
        const auto wave = ofdm_modulate(frame, cfg);
        const std::vector<ComplexSignal> parts{wave};
        const auto rx = superpose(parts, mean_power(wave) * db_to_linear(-snr_db), derive_seed(seed, 2 * f + 1));
        const auto dem = ofdm_demodulate(rx, cfg, 0);
        for (std::size_t i = 0; i < per_frame; ++i)
            errors += dem.symbols.data_indices[i] != frame.data_indices[i];
        evm2 += dem.quality.evm_rms * dem.quality.evm_rms;
    }
    return {static_cast<double>(errors) / static_cast<double>(frames * per_frame),
            std::sqrt(evm2 / static_cast<double>(frames))};
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Calibrate EVM thresholds for a target symbol error rate"};
    double target = 1e-3;
    std::size_t n = 2'000'000;
    std::uint64_t seed = 2024;
    app.add_option("--ser", target, "target SER");
    app.add_option("--symbols", n, "symbols per evaluation");
    app.add_option("--seed", seed, "rng seed");
    bool modem = false;
    app.add_flag("--modem", modem, "calibrate through the OFDM modem");
    CLI11_PARSE(app, argc, argv);
    const auto run = modem ? measure_modem : measure;

    std::printf("order,snr_db,ser,evm_nda\n");
    for (int order : kSupportedQamOrders) {
        double lo = 0.0;
        double hi = 45.0;
        for (int it = 0; it < 30; ++it) {
            const double mid = 0.5 * (lo + hi);
            const auto p = run(order, mid, n, RngSeed{seed});
            (p.ser > target ? lo : hi) = mid;
        }
        const auto p = run(order, hi, n, RngSeed{seed + 1});
        std::printf("%d,%.3f,%.3e,%.6f\n", order, hi, p.ser, p.evm);
    }
    return 0;
}
