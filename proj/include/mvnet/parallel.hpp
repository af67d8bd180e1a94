#pragma once

namespace mvnet {

// Worker thread budget for the OpenMP kernels. Read once from MVNET_THREADS;
// 0 selects deterministic single-threaded execution with no producer threads.
int configured_threads();
void set_threads(int n);

// True when MVNET_THREADS=0 (or set_threads(0)) was requested.
bool deterministic_mode();

// Threads the kernels should actually use (>= 1).
int kernel_threads();

}  // namespace mvnet
