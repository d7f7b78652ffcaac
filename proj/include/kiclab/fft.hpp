#pragma once

#include "kiclab/core.hpp"

#include <span>

namespace kiclab {

// Unnormalized forward / inverse DFT backed by FFTW. Plans are cached per size
// and created under a lock; execution is reentrant.
void fft_forward(std::span<const cplx> in, std::span<cplx> out);
void fft_inverse(std::span<const cplx> in, std::span<cplx> out);

} // namespace kiclab
