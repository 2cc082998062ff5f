// Thread budget for the OpenMP kernels. GATED_CASCADE_THREADS caps the
// number of worker threads; a budget of 1 routes every kernel through the
// serial reference path.
#pragma once

namespace tgre {

// Threads the parallel kernels may use. Resolved once from
// GATED_CASCADE_THREADS (falling back to the OpenMP default), unless
// overridden with set_thread_budget.
int thread_budget();

// Override the budget (tests, benchmarks). n <= 0 restores the default.
void set_thread_budget(int n);

bool parallel_enabled();

}  // namespace tgre
