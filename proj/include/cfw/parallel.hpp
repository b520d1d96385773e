#pragma once

#include <cstdint>

#ifdef CFW_HAVE_OPENMP
#include <omp.h>
#endif

namespace cfw {

// Worker count for data-parallel loops. 1 forces the deterministic
// single-threaded mode. Every loop in the library writes each output element
// from exactly one iteration, so results do not depend on this value.
void set_num_threads(int n);
int num_threads();

template <typename F>
void parallel_for(std::int64_t n, F &&body) {
#ifdef CFW_HAVE_OPENMP
    if (num_threads() > 1 && n > 1) {
#pragma omp parallel for schedule(static) num_threads(num_threads())
        for (std::int64_t i = 0; i < n; ++i) body(i);
        return;
    }
#endif
    for (std::int64_t i = 0; i < n; ++i) body(i);
}

}  // namespace cfw
