#pragma once

namespace slg {

// 64-bit scalars by default so gradient checks resolve well below 1e-4.
// SLG_REAL32 exists for speed experiments only; the test suites assume double.
#ifdef SLG_REAL32
using real = float;
#else
using real = double;
#endif

}  // namespace slg
