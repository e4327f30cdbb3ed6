#pragma once

#include <cstddef>

#include <tbb/blocked_range.h>
#include <tbb/parallel_for.h>

namespace jlf {

/// Runs fn(i) for i in [begin, end). Callers write to disjoint slots only, so
/// results never depend on the schedule or on the worker count.
template <typename Fn>
void parallel_for(int begin, int end, Fn&& fn) {
  if (end <= begin) return;
  tbb::parallel_for(tbb::blocked_range<int>(begin, end), [&](const tbb::blocked_range<int>& r) {
    for (int i = r.begin(); i != r.end(); ++i) fn(i);
  });
}

}  // namespace jlf
