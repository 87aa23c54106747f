#pragma once

#include <cstddef>
#include <functional>

namespace empssl {

/// Worker count: min(hardware_concurrency, EMP_THREADS) when the env var is
/// set, else hardware_concurrency. Always >= 1. Read once per process.
int worker_count();

/// Runs body(i) for i in [0, n) across worker threads. Bodies must write to
/// disjoint slots; any floating-point reduction over items must be done by
/// the caller in fixed item order afterwards, so results never depend on the
/// thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace empssl
