#pragma once

#include "ddimedit/kernels.hpp"

namespace ddimedit::kernels::detail {

extern const KernelTable kScalarTable;
#if defined(DDIMEDIT_HAVE_AVX2)
extern const KernelTable kAvx2Table;
#endif
#if defined(DDIMEDIT_HAVE_NEON)
extern const KernelTable kNeonTable;
#endif

}  // namespace ddimedit::kernels::detail
