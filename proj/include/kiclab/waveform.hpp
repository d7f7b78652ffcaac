#pragma once

// Known-interference generator, QAM constellations, OFDM modem and the
// nondata-aided EVM quality indicator.

#include "kiclab/core.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace kiclab {

inline constexpr std::array<int, 7> kSupportedQamOrders{4, 8, 16, 32, 64, 128, 256};

bool is_supported_qam(int order);

struct SliceResult {
    int index = 0;
    cplx point;
};

// Unit-energy constellation. Square orders (4, 16, 64, 256) are Gray coded
// per axis. 8-QAM is a 4x2 rectangle (Gray on both axes). 32- and 128-QAM
// are the usual cross layouts, a 6x6 / 12x12 grid with the corner 1x1 / 2x2
// blocks removed; their indices run row-major over the remaining points.
class Constellation {
public:
    static const Constellation& get(int order);

    [[nodiscard]] int order() const { return order_; }
    [[nodiscard]] std::span<const cplx> points() const { return points_; }
    [[nodiscard]] SliceResult slice(cplx r) const;

private:
    explicit Constellation(int order);

    int order_;
    int nx_ = 0;
    int ny_ = 0;
    double scale_ = 1.0;          // grid unit after energy normalization
    std::vector<cplx> points_;
    std::vector<int> grid_index_; // nx*ny, -1 where a grid cell is unused
};

std::vector<cplx> qam_map(std::span<const int> indices, int order);
SliceResult qam_slice(cplx point, int order);

// sqrt(sum |r - Q(r)|^2 / sum |Q(r)|^2) with Q the nearest-point slicer.
double evm_nda(std::span<const cplx> equalized, int order);

struct OfdmConfig {
    int fft_size = 256;
    int used_subcarriers = 192;
    int pilot_subcarriers = 32;
    // Positions within the used-subcarrier list (0 .. used_subcarriers-1).
    std::vector<int> pilot_index_set;
    int cp_len = 16;
    int qam_order = 4;
    int symbols_per_frame = 500; // data symbols, after the training symbols
    int training_symbols = 1;
    double subcarrier_spacing_hz = 24e3;
    std::uint64_t pattern_seed = 0x5EED0F0DULL;
    double tracking_smoothing = 0.9;
    // Receiver FFT window shift in samples, in [-cp_len, 0]. Models a coarse
    // frame-sync error; early windows read into the cyclic prefix.
    int timing_offset = 0;

    // Fills pilot_index_set with the default spread and validates.
    static OfdmConfig defaults(int qam_order = 4, int symbols_per_frame = 500);

    void validate() const;

    [[nodiscard]] int symbol_len() const { return fft_size + cp_len; }
    [[nodiscard]] int total_symbols() const { return training_symbols + symbols_per_frame; }
    [[nodiscard]] std::size_t frame_len() const
    {
        return static_cast<std::size_t>(total_symbols()) * static_cast<std::size_t>(symbol_len());
    }
    [[nodiscard]] int data_subcarriers() const { return used_subcarriers - pilot_subcarriers; }
    [[nodiscard]] double sample_rate_hz() const { return fft_size * subcarrier_spacing_hz; }
};

// 32 pilots spread over 192 used subcarriers (spacing 6 or 7) so both band
// edges are covered by a pilot and interpolation never extrapolates.
std::vector<int> default_pilot_positions(int used_subcarriers, int pilot_subcarriers);

// Subcarrier geometry derived from a config.
struct OfdmLayout {
    std::vector<int> used_bin;    // signed subcarrier number per used position, DC excluded
    std::vector<int> pilot_pos;   // used positions carrying pilots
    std::vector<int> data_pos;    // used positions carrying data
    std::vector<double> pilot_values;
    std::vector<cplx> training;   // [training_symbols][used_subcarriers]

    static OfdmLayout make(const OfdmConfig& cfg);
};

struct FrameSymbols {
    int n_symbols = 0;
    int n_data_subcarriers = 0;
    std::vector<int> data_indices;  // row-major [symbol][data subcarrier]
    std::vector<cplx> data_symbols; // constellation points, same layout
    std::vector<double> pilot_values;
    std::vector<cplx> training_grid;

    [[nodiscard]] int index_at(int symbol, int carrier) const
    {
        return data_indices[static_cast<std::size_t>(symbol) * n_data_subcarriers + carrier];
    }
};

FrameSymbols frame_from_indices(const OfdmConfig& cfg, std::vector<int> indices);
FrameSymbols random_frame(const OfdmConfig& cfg, RngSeed seed);

struct QualityReport {
    double evm_rms = 0.0;
    std::vector<double> per_symbol_evm;
    std::size_t n_symbols_used = 0;
};

struct Demodulated {
    FrameSymbols symbols;
    QualityReport quality;
    std::vector<cplx> equalized; // same layout as FrameSymbols::data_symbols
};

ComplexSignal ofdm_modulate(const FrameSymbols& frame, const OfdmConfig& cfg);

// Least squares on the training symbol(s), then per-symbol pilot tracking:
// common phase and timing slope against the running estimate, linear
// interpolation of the derotated pilots, exponential smoothing.
Demodulated ofdm_demodulate(const ComplexSignal& sig, const OfdmConfig& cfg, std::size_t frame_start);

inline constexpr double kDefaultKiPassband = 5.0 / 6.5;

// Seeded complex Gaussian through a linear-phase Kaiser low-pass FIR, then
// scaled to unit mean power. passband_fraction = 1 skips the filter.
ComplexSignal generate_ki(RngSeed seed, std::size_t n_samples, double passband_fraction = kDefaultKiPassband,
                          double sample_rate_hz = 1.0);

inline constexpr std::size_t kKiFilterTaps = 255;

// Exports (index, real, imag) rows for one order.
std::string constellation_csv(int order);

} // namespace kiclab
