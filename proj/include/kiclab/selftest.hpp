#pragma once

// Fast invariant checks shared by `kiclab selftest` and the test suites.

#include <string>
#include <vector>

namespace kiclab {

struct SelftestCheck {
    std::string name;
    double value = 0.0;     // measured deviation
    double tolerance = 0.0; // passes when value <= tolerance
    [[nodiscard]] bool passed() const { return value <= tolerance; }
};

// Relative deviation of the analytic CFO (phase) and timing gradients from
// central finite differences of |e|^2, max over random draws.
double gradient_check_phase(unsigned seed, int draws);
double gradient_check_timing(unsigned seed, int draws);

// Worst noiseless modulate/demodulate EVM for one order.
double modem_roundtrip_evm(int qam_order);

// Largest |interp - node| over integer positions and largest derivative error
// on a linear ramp.
double interp_node_error();
double interp_linear_derivative_error();

// tolerance_scale multiplies every tolerance (used to force failures).
std::vector<SelftestCheck> run_selftest(double tolerance_scale = 1.0);

} // namespace kiclab
