#include "tgre/parallel.hpp"

#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tgre {

namespace {

int default_budget() {
    if (const char* env = std::getenv("GATED_CASCADE_THREADS")) {
        int n = std::atoi(env);
        if (n > 0) return n;
    }
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

int g_override = 0;

}  // namespace

int thread_budget() {
    if (g_override > 0) return g_override;
    static const int env_budget = default_budget();
    return env_budget;
}

void set_thread_budget(int n) { g_override = n > 0 ? n : 0; }

bool parallel_enabled() {
#ifdef _OPENMP
    return thread_budget() > 1;
#else
    return false;
#endif
}

}  // namespace tgre
