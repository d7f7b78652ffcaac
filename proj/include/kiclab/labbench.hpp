#pragma once

// Experiment bench: builds KI + SI + noise scenarios, runs one of the
// receivers over consecutive frames, scores it against the simulation ground
// truth, sweeps power grids and persists rows as CSV.

#include "kiclab/dfkic.hpp"
#include "kiclab/impairments.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace kiclab {

enum class Mode { no_ki, base_kic, df_kic };

std::string_view to_string(Mode mode);
Mode parse_mode(std::string_view text);

// Default over-the-cable style channels, unit tap energy.
ImpairmentParams default_ki_channel();
ImpairmentParams default_si_channel();

struct ScenarioConfig {
    RngSeed seed{1};
    // Received powers in dB over the noise floor. -inf switches a component off.
    double ki_gain_db = 51.0;
    double si_gain_db = 45.0;
    ImpairmentParams ki_params = default_ki_channel();
    ImpairmentParams si_params = default_si_channel();
    DfkicConfig dfkic; // OFDM, canceller and DF-KIC settings
    int n_frames = 2;
    Mode mode = Mode::df_kic;
    double noise_variance = 1.0;
    double code_rate = 0.75;
    double ki_passband = kDefaultKiPassband;
    // Leading share of each frame left out of the power metrics.
    double transient_fraction = 0.2;

    void validate() const;
};

struct SweepRow {
    double ki_db = 0.0;
    double si_db = 0.0;
    Mode mode = Mode::df_kic;
    int qam = 4;
    double residual_ki_db = 0.0;   // over the noise floor
    double post_kic_sinr_db = 0.0;
    double ser = 0.0;
    double evm = 0.0;
    double iterations = 0.0;       // mean over frames
    double goodput_bps = 0.0;      // bits per symbol
    std::uint64_t seed = 0;
    std::string flags;             // ';'-separated, empty when clean

    friend bool operator==(const SweepRow&, const SweepRow&) = default;
};

struct FrameReport {
    double ser = 0.0;
    double evm = 0.0;
    int iterations = 0;
    double delta_d = 0.0;
    std::vector<double> quality_trace;
    std::vector<IterationRecord> records; // empty for no_ki and base_kic
};

struct ScenarioReport {
    SweepRow row;
    std::vector<FrameReport> frames;
};

// One realization of a scenario. Components switched off (or the KI in no_ki
// mode) are all-zero.
struct SimulatedScenario {
    ComplexSignal x;     // known interference as transmitted
    ComplexSignal rx_ki; // its received contribution
    ComplexSignal rx_si;
    ComplexSignal d;     // rx_ki + rx_si + noise
    std::vector<FrameSymbols> truth;
};

SimulatedScenario simulate(const ScenarioConfig& cfg);

// Called with every pass residual e_x of every frame.
using ResidualHook = std::function<void(int frame, int iteration, const ComplexSignal& e_x)>;

// received replaces the simulated superposition (same length, e.g. a file
// written by `kiclab gen --rx`); truth metrics still refer to the simulation.
ScenarioReport run_scenario_report(const ScenarioConfig& cfg, const ResidualHook& hook = {},
                                   const ComplexSignal* received = nullptr);
SweepRow run_scenario(const ScenarioConfig& cfg);

// Fraction of data positions whose index differs.
double ser(const FrameSymbols& estimated, const FrameSymbols& truth);

// (1 - ser) * log2(order) * code_rate.
double goodput(double ser_val, int qam_order, double code_rate);

struct GridRange {
    double lo = 0.0;
    double hi = 0.0;
    double step = 2.0;

    [[nodiscard]] std::vector<double> values() const;
};

// Rows ordered by (ki_db, si_db, mode, seed); replicate r uses seed base.seed + r.
std::vector<SweepRow> sweep_grid(const ScenarioConfig& base, const GridRange& ki, const GridRange& si,
                                 const std::vector<Mode>& modes, int seeds, int workers = 1);

inline constexpr std::string_view kCsvHeader =
    "ki_db,si_db,mode,qam,residual_ki_db,post_kic_sinr_db,ser,evm,iterations,goodput_bps,seed,flags";

std::string format_rows(const std::vector<SweepRow>& rows);
std::vector<SweepRow> parse_rows(std::string_view text);
void write_rows(const std::vector<SweepRow>& rows, const std::filesystem::path& path);
std::vector<SweepRow> read_rows(const std::filesystem::path& path);

// Shortest representation that parses back to the same double.
std::string format_real(double v);

} // namespace kiclab
