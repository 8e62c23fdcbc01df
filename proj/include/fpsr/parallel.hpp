#pragma once

#include <algorithm>
#include <thread>

#include <Eigen/Core>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fpsr {

inline int hardware_threads() {
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

// Thread budget shared by the OpenMP kernels and Eigen's GEMM. 0 means "all cores".
inline void set_thread_budget(int threads) {
  const int n = threads > 0 ? threads : hardware_threads();
#ifdef _OPENMP
  omp_set_num_threads(n);
#endif
  Eigen::setNbThreads(n);
}

inline int thread_budget() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace fpsr
