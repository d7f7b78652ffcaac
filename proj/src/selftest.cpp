#include "kiclab/selftest.hpp"

#include "kiclab/canceller.hpp"
#include "kiclab/impairments.hpp"
#include "kiclab/labbench.hpp"
#include "kiclab/waveform.hpp"

#include <algorithm>
#include <cmath>

namespace kiclab {
namespace {

struct GradientProblem {
    std::vector<cplx> reference;
    std::vector<cplx> taps;
    cplx desired;
    double phase;
    double position;
};

GradientProblem draw_problem(Rng& rng)
{
    GradientProblem p;
    p.reference.resize(32);
    for (auto& v : p.reference)
        v = rng.complex_normal();
    p.taps.resize(5);
    for (auto& v : p.taps)
        v = rng.complex_normal();
    p.desired = rng.complex_normal() * 3.0;
    p.phase = 2.0 * M_PI * rng.uniform();
    // Stay inside one cubic segment so the interpolant is smooth around it.
    p.position = 12.0 + std::floor(8.0 * rng.uniform()) + 0.2 + 0.6 * rng.uniform();
    return p;
}

double cost(const GradientProblem& p, double phase, double position)
{
    return std::norm(evaluate_sample(p.reference, p.desired, p.taps, phase, position).error);
}

double relative_error(double analytic, double numeric)
{
    return std::abs(analytic - numeric) / std::max(std::abs(numeric), 1e-12);
}

} // namespace

double gradient_check_phase(unsigned seed, int draws)
{
    Rng rng(RngSeed{seed});
    double worst = 0.0;
    constexpr double h = 1e-6;
    for (int i = 0; i < draws; ++i) {
        const auto p = draw_problem(rng);
        const double analytic = -2.0 * evaluate_sample(p.reference, p.desired, p.taps, p.phase, p.position).grad_eps;
        const double numeric = (cost(p, p.phase + h, p.position) - cost(p, p.phase - h, p.position)) / (2.0 * h);
        worst = std::max(worst, relative_error(analytic, numeric));
    }
    return worst;
}

double gradient_check_timing(unsigned seed, int draws)
{
    Rng rng(RngSeed{seed});
    double worst = 0.0;
    constexpr double h = 1e-6;
    for (int i = 0; i < draws; ++i) {
        const auto p = draw_problem(rng);
        const double analytic = -2.0 * evaluate_sample(p.reference, p.desired, p.taps, p.phase, p.position).grad_eta;
        const double numeric = (cost(p, p.phase, p.position + h) - cost(p, p.phase, p.position - h)) / (2.0 * h);
        worst = std::max(worst, relative_error(analytic, numeric));
    }
    return worst;
}

double modem_roundtrip_evm(int qam_order)
{
    const auto cfg = OfdmConfig::defaults(qam_order, 20);
    const auto frame = random_frame(cfg, RngSeed{static_cast<std::uint64_t>(qam_order)});
    const auto dem = ofdm_demodulate(ofdm_modulate(frame, cfg), cfg, 0);
    if (dem.symbols.data_indices != frame.data_indices)
        return 1.0;
    double err = 0.0;
    double ref = 0.0;
    for (std::size_t i = 0; i < frame.data_symbols.size(); ++i) {
        err += std::norm(dem.equalized[i] - frame.data_symbols[i]);
        ref += std::norm(frame.data_symbols[i]);
    }
    return std::sqrt(err / ref);
}

double interp_node_error()
{
    Rng rng(RngSeed{11});
    std::vector<cplx> buf(64);
    for (auto& v : buf)
        v = rng.complex_normal();
    double worst = 0.0;
    for (std::size_t k = 0; k < buf.size(); ++k)
        worst = std::max(worst, std::abs(frac_interp_zero_ext(buf, static_cast<double>(k)).value - buf[k]));
    return worst;
}

double interp_linear_derivative_error()
{
    const cplx slope{0.75, -1.25};
    const cplx offset{0.5, 2.0};
    std::vector<cplx> buf(64);
    for (std::size_t k = 0; k < buf.size(); ++k)
        buf[k] = offset + slope * static_cast<double>(k);
    double worst = 0.0;
    for (double pos = 1.0; pos < 60.0; pos += 0.37) {
        const auto s = frac_interp(buf, pos);
        worst = std::max(worst, std::abs(s.derivative - slope));
        worst = std::max(worst, std::abs(s.value - (offset + slope * pos)));
    }
    return worst;
}

std::vector<SelftestCheck> run_selftest(double tolerance_scale)
{
    std::vector<SelftestCheck> out;
    auto add = [&](std::string name, double value, double tol) {
        out.push_back({std::move(name), value, tol * tolerance_scale});
    };
    add("gradient.phase", gradient_check_phase(1, 200), 1e-4);
    add("gradient.timing", gradient_check_timing(2, 200), 1e-4);
    for (int order : kSupportedQamOrders)
        add("modem.roundtrip_evm.qam" + std::to_string(order), modem_roundtrip_evm(order), 1e-10);
    add("interp.nodes", interp_node_error(), 0.0);
    add("interp.linear", interp_linear_derivative_error(), 1e-12);
    add("goodput.ser0_qam256", std::abs(goodput(0.0, 256, 0.75) - 6.0), 0.0);
    add("goodput.ser1", std::abs(goodput(1.0, 64, 0.75)), 0.0);

    const auto cfg = OfdmConfig::defaults(16, 10);
    const auto a = random_frame(cfg, RngSeed{5});
    add("ser.identical", ser(a, a), 0.0);

    // Zero reference: nothing to subtract.
    Rng rng(RngSeed{9});
    std::vector<cplx> d(4096);
    for (auto& v : d)
        v = rng.complex_normal();
    const CancellerConfig ccfg;
    const auto res = cancel(ComplexSignal(std::vector<cplx>(d.size()), 1.0), ComplexSignal(d, 1.0),
                            init_state(ccfg), ccfg);
    double dev = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i)
        dev = std::max(dev, std::abs(res.error.samples[i] - d[i]));
    add("cancel.zero_reference", dev, 0.0);

    std::vector<SweepRow> rows(20);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto& r = rows[i];
        r.ki_db = 30.0 + 2.0 * static_cast<double>(i);
        r.si_db = rng.uniform() * 50.0;
        r.mode = static_cast<Mode>(i % 3);
        r.qam = 256;
        r.residual_ki_db = rng.normal() * 10.0;
        r.post_kic_sinr_db = rng.normal() * 1e-7;
        r.ser = rng.uniform();
        r.evm = rng.uniform() / 3.0;
        r.iterations = rng.uniform() * 8.0;
        r.goodput_bps = rng.uniform() * 6.0;
        r.seed = rng.next_u64();
        r.flags = i % 4 == 0 ? "reverted;received_stream" : "";
    }
    add("csv.roundtrip", parse_rows(format_rows(rows)) == rows ? 0.0 : 1.0, 0.0);
    return out;
}

} // namespace kiclab
