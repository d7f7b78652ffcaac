#include "kiclab/waveform.hpp"

#include "kiclab/fft.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>

namespace kiclab {
namespace {

int gray_decode(int g)
{
    int b = 0;
    for (; g; g >>= 1)
        b ^= g;
    return b;
}

int log2_exact(int v)
{
    int b = 0;
    while ((1 << b) < v)
        ++b;
    return b;
}

bool cross_corner(int ix, int iy, int n, int cut)
{
    const bool x_edge = ix < cut || ix >= n - cut;
    const bool y_edge = iy < cut || iy >= n - cut;
    return x_edge && y_edge;
}

} // namespace

bool is_supported_qam(int order)
{
    return std::find(kSupportedQamOrders.begin(), kSupportedQamOrders.end(), order) != kSupportedQamOrders.end();
}

Constellation::Constellation(int order) : order_(order)
{
    std::vector<std::pair<int, int>> cells(order); // (ix, iy) per index
    if (order == 4 || order == 16 || order == 64 || order == 256 || order == 8) {
        const int bits = log2_exact(order);
        const int qbits = order == 8 ? 1 : bits / 2;
        const int ibits = bits - qbits;
        nx_ = 1 << ibits;
        ny_ = 1 << qbits;
        for (int i = 0; i < order; ++i) {
            const int ig = i >> qbits;
            const int qg = i & ((1 << qbits) - 1);
            cells[i] = {gray_decode(ig), gray_decode(qg)};
        }
    } else {
        const int n = order == 32 ? 6 : 12;
        const int cut = order == 32 ? 1 : 2;
        nx_ = ny_ = n;
        int idx = 0;
        for (int iy = 0; iy < n; ++iy)
            for (int ix = 0; ix < n; ++ix)
                if (!cross_corner(ix, iy, n, cut))
                    cells[idx++] = {ix, iy};
    }

    double energy = 0.0;
    for (auto [ix, iy] : cells) {
        const double x = 2.0 * ix - (nx_ - 1);
        const double y = 2.0 * iy - (ny_ - 1);
        energy += x * x + y * y;
    }
    scale_ = 1.0 / std::sqrt(energy / order);

    points_.resize(order);
    grid_index_.assign(static_cast<std::size_t>(nx_ * ny_), -1);
    for (int i = 0; i < order; ++i) {
        auto [ix, iy] = cells[i];
        points_[i] = cplx((2.0 * ix - (nx_ - 1)) * scale_, (2.0 * iy - (ny_ - 1)) * scale_);
        grid_index_[static_cast<std::size_t>(iy * nx_ + ix)] = i;
    }
}

const Constellation& Constellation::get(int order)
{
    if (!is_supported_qam(order))
        throw ValidationError("unsupported qam order " + std::to_string(order));
    static std::mutex m;
    static std::map<int, std::unique_ptr<Constellation>> cache;
    std::lock_guard lock(m);
    auto& slot = cache[order];
    if (!slot)
        slot.reset(new Constellation(order));
    return *slot;
}

SliceResult Constellation::slice(cplx r) const
{
    // Nearest point lies within two grid cells of the clamped rounded cell,
    // also for the cross layouts with their missing corners.
    auto to_cell = [&](double v, int n) {
        const double c = std::round((v / scale_ + (n - 1)) / 2.0);
        return static_cast<int>(std::clamp(c, 0.0, static_cast<double>(n - 1)));
    };
    const int cx = std::isfinite(r.real()) ? to_cell(r.real(), nx_) : 0;
    const int cy = std::isfinite(r.imag()) ? to_cell(r.imag(), ny_) : 0;

    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int iy = std::max(0, cy - 2); iy <= std::min(ny_ - 1, cy + 2); ++iy) {
        for (int ix = std::max(0, cx - 2); ix <= std::min(nx_ - 1, cx + 2); ++ix) {
            const int idx = grid_index_[static_cast<std::size_t>(iy * nx_ + ix)];
            if (idx < 0)
                continue;
            const double d = std::norm(r - points_[idx]);
            if (d < best_d || (d == best_d && idx < best)) {
                best_d = d;
                best = idx;
            }
        }
    }
    if (best < 0)
        best = 0;
    return {best, points_[best]};
}

std::vector<cplx> qam_map(std::span<const int> indices, int order)
{
    const auto& c = Constellation::get(order);
    std::vector<cplx> out;
    out.reserve(indices.size());
    for (int i : indices) {
        if (i < 0 || i >= order)
            throw ValidationError("symbol index " + std::to_string(i) + " out of range for order " +
                                  std::to_string(order));
        out.push_back(c.points()[i]);
    }
    return out;
}

SliceResult qam_slice(cplx point, int order)
{
    return Constellation::get(order).slice(point);
}

double evm_nda(std::span<const cplx> equalized, int order)
{
    if (equalized.empty())
        throw ValidationError("evm of empty symbol set");
    const auto& c = Constellation::get(order);
    double err = 0.0;
    double ref = 0.0;
    for (const auto& r : equalized) {
        const cplx q = c.slice(r).point;
        err += std::norm(r - q);
        ref += std::norm(q);
    }
    return std::sqrt(err / ref);
}

std::string constellation_csv(int order)
{
    const auto& c = Constellation::get(order);
    std::ostringstream os;
    os.precision(17);
    os << "index,real,imag\n";
    for (int i = 0; i < order; ++i)
        os << i << ',' << c.points()[i].real() << ',' << c.points()[i].imag() << '\n';
    return os.str();
}

std::vector<int> default_pilot_positions(int used_subcarriers, int pilot_subcarriers)
{
    std::vector<int> out;
    if (pilot_subcarriers <= 0)
        return out;
    if (pilot_subcarriers == 1)
        return {used_subcarriers / 2};
    for (int p = 0; p < pilot_subcarriers; ++p) {
        const double pos = static_cast<double>(p) * (used_subcarriers - 1) / (pilot_subcarriers - 1);
        out.push_back(static_cast<int>(std::lround(pos)));
    }
    return out;
}

OfdmConfig OfdmConfig::defaults(int qam_order, int symbols_per_frame)
{
    OfdmConfig cfg;
    cfg.qam_order = qam_order;
    cfg.symbols_per_frame = symbols_per_frame;
    cfg.pilot_index_set = default_pilot_positions(cfg.used_subcarriers, cfg.pilot_subcarriers);
    cfg.validate();
    return cfg;
}

void OfdmConfig::validate() const
{
    if (fft_size < 8)
        throw ValidationError("ofdm.fft_size too small");
    if (used_subcarriers < 2 || used_subcarriers > fft_size - 1)
        throw ValidationError("ofdm.used_subcarriers must be in [2, fft_size - 1]");
    if (cp_len < 0 || cp_len >= fft_size)
        throw ValidationError("ofdm.cp_len must be in [0, fft_size)");
    if (!is_supported_qam(qam_order))
        throw ValidationError("qam: unsupported order " + std::to_string(qam_order));
    if (symbols_per_frame < 1)
        throw ValidationError("ofdm.symbols_per_frame must be >= 1");
    if (training_symbols < 1)
        throw ValidationError("ofdm.training_symbols must be >= 1");
    if (pilot_subcarriers < 2 || pilot_subcarriers >= used_subcarriers)
        throw ValidationError("ofdm.pilot_subcarriers must be in [2, used_subcarriers)");
    if (static_cast<int>(pilot_index_set.size()) != pilot_subcarriers)
        throw ValidationError("ofdm.pilot_index_set size differs from pilot_subcarriers");
    if (!std::is_sorted(pilot_index_set.begin(), pilot_index_set.end()) ||
        std::adjacent_find(pilot_index_set.begin(), pilot_index_set.end()) != pilot_index_set.end())
        throw ValidationError("ofdm.pilot_index_set must be strictly increasing");
    if (pilot_index_set.front() < 0 || pilot_index_set.back() >= used_subcarriers)
        throw ValidationError("ofdm.pilot_index_set outside used subcarriers");
    if (!(subcarrier_spacing_hz > 0.0))
        throw ValidationError("ofdm.subcarrier_spacing_hz must be positive");
    if (!(tracking_smoothing >= 0.0 && tracking_smoothing < 1.0))
        throw ValidationError("ofdm.tracking_smoothing must be in [0, 1)");
    if (timing_offset < -cp_len || timing_offset > 0)
        throw ValidationError("ofdm.timing_offset must be in [-cp_len, 0]");
}

OfdmLayout OfdmLayout::make(const OfdmConfig& cfg)
{
    cfg.validate();
    OfdmLayout l;
    const int half = cfg.used_subcarriers / 2;
    for (int u = 0; u < cfg.used_subcarriers; ++u) {
        const int k = u - half;
        l.used_bin.push_back(k >= 0 ? k + 1 : k);
    }
    l.pilot_pos = cfg.pilot_index_set;
    for (int u = 0, p = 0; u < cfg.used_subcarriers; ++u) {
        if (p < static_cast<int>(l.pilot_pos.size()) && l.pilot_pos[p] == u) {
            ++p;
            continue;
        }
        l.data_pos.push_back(u);
    }

    Rng rng(derive_seed(RngSeed{cfg.pattern_seed}, 1));
    for (std::size_t p = 0; p < l.pilot_pos.size(); ++p)
        l.pilot_values.push_back((rng.next_u64() >> 63) ? -1.0 : 1.0);
    const auto& qpsk = Constellation::get(4);
    const std::size_t n_train = static_cast<std::size_t>(cfg.training_symbols) * cfg.used_subcarriers;
    for (std::size_t i = 0; i < n_train; ++i)
        l.training.push_back(qpsk.points()[rng.next_u64() >> 62]);
    return l;
}

FrameSymbols frame_from_indices(const OfdmConfig& cfg, std::vector<int> indices)
{
    const auto layout = OfdmLayout::make(cfg);
    FrameSymbols f;
    f.n_symbols = cfg.symbols_per_frame;
    f.n_data_subcarriers = cfg.data_subcarriers();
    if (indices.size() != static_cast<std::size_t>(f.n_symbols) * f.n_data_subcarriers)
        throw ValidationError("frame index count does not match ofdm geometry");
    f.data_symbols = qam_map(indices, cfg.qam_order);
    f.data_indices = std::move(indices);
    f.pilot_values = layout.pilot_values;
    f.training_grid = layout.training;
    return f;
}

FrameSymbols random_frame(const OfdmConfig& cfg, RngSeed seed)
{
    Rng rng(seed);
    std::vector<int> idx(static_cast<std::size_t>(cfg.symbols_per_frame) * cfg.data_subcarriers());
    for (auto& i : idx)
        i = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(cfg.qam_order));
    return frame_from_indices(cfg, std::move(idx));
}

ComplexSignal ofdm_modulate(const FrameSymbols& frame, const OfdmConfig& cfg)
{
    const auto layout = OfdmLayout::make(cfg);
    const int n_data = cfg.data_subcarriers();
    if (frame.n_symbols != cfg.symbols_per_frame || frame.n_data_subcarriers != n_data ||
        frame.data_symbols.size() != static_cast<std::size_t>(frame.n_symbols) * n_data)
        throw ValidationError("frame dimensions do not match ofdm config");
    if (frame.pilot_values.size() != layout.pilot_pos.size() || frame.training_grid.size() != layout.training.size())
        throw ValidationError("frame pilot/training layout does not match ofdm config");

    const int N = cfg.fft_size;
    const int U = cfg.used_subcarriers;
    const double scale = 1.0 / std::sqrt(static_cast<double>(U));
    std::vector<cplx> out(cfg.frame_len());
    std::vector<cplx> bins(N), body(N);

    auto emit = [&](int sym, const std::vector<cplx>& used_values) {
        std::fill(bins.begin(), bins.end(), cplx{});
        for (int u = 0; u < U; ++u) {
            const int k = layout.used_bin[u];
            bins[(k + N) % N] = used_values[u];
        }
        fft_inverse(bins, body);
        cplx* dst = out.data() + static_cast<std::size_t>(sym) * cfg.symbol_len();
        for (int n = 0; n < cfg.cp_len; ++n)
            dst[n] = body[N - cfg.cp_len + n] * scale;
        for (int n = 0; n < N; ++n)
            dst[cfg.cp_len + n] = body[n] * scale;
    };

    std::vector<cplx> used(U);
    for (int t = 0; t < cfg.training_symbols; ++t) {
        std::copy_n(frame.training_grid.begin() + static_cast<std::ptrdiff_t>(t) * U, U, used.begin());
        emit(t, used);
    }
    for (int s = 0; s < frame.n_symbols; ++s) {
        for (std::size_t p = 0; p < layout.pilot_pos.size(); ++p)
            used[layout.pilot_pos[p]] = frame.pilot_values[p];
        for (int d = 0; d < n_data; ++d)
            used[layout.data_pos[d]] = frame.data_symbols[static_cast<std::size_t>(s) * n_data + d];
        emit(cfg.training_symbols + s, used);
    }
    return {std::move(out), cfg.sample_rate_hz()};
}

namespace {

// Phase rotation a + b*k that best maps `ref` onto `obs` at the pilot bins.
std::pair<double, double> fit_phase_ramp(std::span<const cplx> obs, std::span<const cplx> ref,
                                         std::span<const int> bins)
{
    std::vector<cplx> c(obs.size());
    for (std::size_t p = 0; p < obs.size(); ++p)
        c[p] = obs[p] * std::conj(ref[p]);
    double slope_num = 0.0;
    double slope_den = 0.0;
    for (std::size_t p = 0; p + 1 < c.size(); ++p) {
        const cplx z = c[p + 1] * std::conj(c[p]);
        const double w = std::abs(z);
        if (w == 0.0)
            continue;
        slope_num += w * std::arg(z) / (bins[p + 1] - bins[p]);
        slope_den += w;
    }
    const double slope = slope_den > 0.0 ? slope_num / slope_den : 0.0;
    cplx acc{};
    for (std::size_t p = 0; p < c.size(); ++p)
        acc += c[p] * std::polar(1.0, -slope * bins[p]);
    return {std::arg(acc), slope};
}

} // namespace

Demodulated ofdm_demodulate(const ComplexSignal& sig, const OfdmConfig& cfg, std::size_t frame_start)
{
    const auto layout = OfdmLayout::make(cfg);
    if (sig.size() < frame_start + cfg.frame_len())
        throw ValidationError("signal too short for one frame");

    const int N = cfg.fft_size;
    const int U = cfg.used_subcarriers;
    const int P = cfg.pilot_subcarriers;
    const int D = cfg.data_subcarriers();
    const double scale = std::sqrt(static_cast<double>(U)) / N;
    const auto& con = Constellation::get(cfg.qam_order);

    std::vector<cplx> body(N), spec(N), used(U);
    auto analyze = [&](int sym) {
        const cplx* src = sig.samples.data() + frame_start + static_cast<std::size_t>(sym) * cfg.symbol_len() +
                           cfg.cp_len + cfg.timing_offset;
        std::copy_n(src, N, body.begin());
        fft_forward(body, spec);
        for (int u = 0; u < U; ++u)
            used[u] = spec[(layout.used_bin[u] + N) % N] * scale;
    };

    std::vector<cplx> h(U, cplx{});
    for (int t = 0; t < cfg.training_symbols; ++t) {
        analyze(t);
        for (int u = 0; u < U; ++u)
            h[u] += used[u] / layout.training[static_cast<std::size_t>(t) * U + u] /
                    static_cast<double>(cfg.training_symbols);
    }

    std::vector<int> pilot_bins(P);
    for (int p = 0; p < P; ++p)
        pilot_bins[p] = layout.used_bin[layout.pilot_pos[p]];

    Demodulated out;
    out.symbols.n_symbols = cfg.symbols_per_frame;
    out.symbols.n_data_subcarriers = D;
    out.symbols.pilot_values = layout.pilot_values;
    out.symbols.training_grid = layout.training;
    out.symbols.data_indices.resize(static_cast<std::size_t>(cfg.symbols_per_frame) * D);
    out.symbols.data_symbols.resize(out.symbols.data_indices.size());
    out.equalized.resize(out.symbols.data_indices.size());
    out.quality.per_symbol_evm.resize(cfg.symbols_per_frame);

    const double alpha = cfg.tracking_smoothing;
    std::vector<cplx> pilot_ls(P), pilot_ref(P), interp(U);
    double err_total = 0.0;
    double ref_total = 0.0;
    for (int s = 0; s < cfg.symbols_per_frame; ++s) {
        analyze(cfg.training_symbols + s);
        for (int p = 0; p < P; ++p) {
            const cplx ls = used[layout.pilot_pos[p]] / layout.pilot_values[p];
            if (std::abs(ls) < 1e-12)
                throw RuntimeError("unequalizable: pilot magnitude below 1e-12 at symbol " + std::to_string(s));
            pilot_ls[p] = ls;
            pilot_ref[p] = h[layout.pilot_pos[p]];
        }
        const auto [phase, slope] = fit_phase_ramp(pilot_ls, pilot_ref, pilot_bins);

        // Derotate the pilots into the reference frame, interpolate linearly
        // over subcarrier number, and smooth into the running estimate.
        for (int p = 0; p < P; ++p)
            pilot_ls[p] *= std::polar(1.0, -(phase + slope * pilot_bins[p]));
        for (int p = 0; p + 1 < P; ++p) {
            const int u0 = layout.pilot_pos[p];
            const int u1 = layout.pilot_pos[p + 1];
            const double k0 = layout.used_bin[u0];
            const double k1 = layout.used_bin[u1];
            for (int u = (p == 0 ? 0 : u0); u <= (p + 2 == P ? U - 1 : u1); ++u) {
                const double t = (layout.used_bin[u] - k0) / (k1 - k0);
                interp[u] = pilot_ls[p] + t * (pilot_ls[p + 1] - pilot_ls[p]);
            }
        }
        for (int u = 0; u < U; ++u)
            h[u] = alpha * h[u] + (1.0 - alpha) * interp[u];

        double err_sym = 0.0;
        double ref_sym = 0.0;
        for (int d = 0; d < D; ++d) {
            const int u = layout.data_pos[d];
            const cplx heq = h[u] * std::polar(1.0, phase + slope * layout.used_bin[u]);
            if (std::abs(heq) < 1e-12)
                throw RuntimeError("unequalizable: channel estimate vanishes at symbol " + std::to_string(s));
            const cplx z = used[u] / heq;
            const auto sl = con.slice(z);
            const std::size_t at = static_cast<std::size_t>(s) * D + d;
            out.equalized[at] = z;
            out.symbols.data_indices[at] = sl.index;
            out.symbols.data_symbols[at] = sl.point;
            err_sym += std::norm(z - sl.point);
            ref_sym += std::norm(sl.point);
        }
        out.quality.per_symbol_evm[s] = std::sqrt(err_sym / ref_sym);
        err_total += err_sym;
        ref_total += ref_sym;
    }
    out.quality.evm_rms = std::sqrt(err_total / ref_total);
    out.quality.n_symbols_used = out.equalized.size();
    return out;
}

ComplexSignal generate_ki(RngSeed seed, std::size_t n_samples, double passband_fraction, double sample_rate_hz)
{
    if (!(passband_fraction > 0.0 && passband_fraction <= 1.0))
        throw ValidationError("passband_fraction must be in (0, 1]");
    if (n_samples <= kKiFilterTaps)
        throw ValidationError("n_samples must exceed the KI filter length");

    auto raw = gaussian_stream(seed, n_samples, sample_rate_hz);
    if (passband_fraction < 1.0) {
        // Kaiser windowed sinc, beta for roughly 80 dB stopband.
        constexpr double beta = 7.857;
        const double centre = (kKiFilterTaps - 1) / 2.0;
        std::vector<double> taps(kKiFilterTaps);
        const double i0b = std::cyl_bessel_i(0.0, beta);
        for (std::size_t i = 0; i < kKiFilterTaps; ++i) {
            const double t = static_cast<double>(i) - centre;
            const double x = M_PI * passband_fraction * t;
            const double sinc = t == 0.0 ? 1.0 : std::sin(x) / x;
            const double r = t / centre;
            const double win = std::cyl_bessel_i(0.0, beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0b;
            taps[i] = passband_fraction * sinc * win;
        }
        // Zero-phase ("same") convolution.
        const auto half = static_cast<std::ptrdiff_t>(centre);
        std::vector<cplx> filtered(n_samples);
        const auto n = static_cast<std::ptrdiff_t>(n_samples);
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            cplx acc{};
            const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, i - half);
            const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n - 1, i + half);
            for (std::ptrdiff_t j = lo; j <= hi; ++j)
                acc += raw.samples[j] * taps[static_cast<std::size_t>(i - j + half)];
            filtered[i] = acc;
        }
        raw.samples = std::move(filtered);
    }
    const double g = 1.0 / std::sqrt(mean_power(raw));
    for (auto& s : raw.samples)
        s *= g;
    return raw;
}

} // namespace kiclab
