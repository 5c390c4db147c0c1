#pragma once

namespace homlab {

/// Caps the number of OpenMP workers used by the parallel kernels. n <= 0 restores the default.
void set_thread_count(int n);

/// Number of workers the next parallel region will use.
int thread_count();

}  // namespace homlab
