#include "kiclab/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <utility>
#include <vector>

namespace kiclab {
namespace {

struct PlanPair {
    fftw_plan forward = nullptr;
    fftw_plan inverse = nullptr;
};

std::mutex& plan_mutex()
{
    static std::mutex m;
    return m;
}

const PlanPair& plans_for(std::size_t n)
{
    static std::map<std::size_t, PlanPair> cache;
    std::lock_guard lock(plan_mutex());
    auto it = cache.find(n);
    if (it != cache.end())
        return it->second;

    std::vector<cplx> a(n), b(n);
    auto* pa = reinterpret_cast<fftw_complex*>(a.data());
    auto* pb = reinterpret_cast<fftw_complex*>(b.data());
    const int len = static_cast<int>(n);
    PlanPair p;
    p.forward = fftw_plan_dft_1d(len, pa, pb, FFTW_FORWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
    p.inverse = fftw_plan_dft_1d(len, pa, pb, FFTW_BACKWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
    return cache.emplace(n, p).first->second;
}

void execute(fftw_plan plan, std::span<const cplx> in, std::span<cplx> out)
{
    if (in.size() != out.size())
        throw ValidationError("fft size mismatch");
    // fftw_execute_dft takes a non-const input pointer but does not modify it
    // for out-of-place transforms.
    auto* src = reinterpret_cast<fftw_complex*>(const_cast<cplx*>(in.data()));
    auto* dst = reinterpret_cast<fftw_complex*>(out.data());
    if (in.data() == out.data()) {
        std::vector<cplx> tmp(in.begin(), in.end());
        fftw_execute_dft(plan, reinterpret_cast<fftw_complex*>(tmp.data()), dst);
        return;
    }
    fftw_execute_dft(plan, src, dst);
}

} // namespace

void fft_forward(std::span<const cplx> in, std::span<cplx> out)
{
    execute(plans_for(in.size()).forward, in, out);
}

void fft_inverse(std::span<const cplx> in, std::span<cplx> out)
{
    execute(plans_for(in.size()).inverse, in, out);
}

} // namespace kiclab
