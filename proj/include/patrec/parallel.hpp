#pragma once

#include <cstdint>
#include <cstdlib>
#include <string>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace patrec {

/// Applies PATREC_THREADS (if set) as the worker count. Returns the count in effect.
inline int configure_threads_from_env()
{
#if defined(_OPENMP)
    if (const char* s = std::getenv("PATREC_THREADS")) {
        const int n = std::atoi(s);
        if (n > 0) omp_set_num_threads(n);
    }
    return omp_get_max_threads();
#else
    return 1;
#endif
}

/// Runs body(i) for i in [0, n). Every index writes only its own outputs,
/// so results do not depend on the schedule.
template <class Body>
void parallel_for(std::int64_t n, Body&& body)
{
#if defined(_OPENMP)
#pragma omp parallel for schedule(dynamic, 1) if (n > 1)
    for (std::int64_t i = 0; i < n; ++i) body(i);
#else
    for (std::int64_t i = 0; i < n; ++i) body(i);
#endif
}

}  // namespace patrec
