// SPDX-License-Identifier: Apache-2.0
//
// torch's c10 logging shims define glog-style CHECK* macros that collide
// with doctest's assertion macros. Include torch first, clear the family,
// then let doctest own the names. Every test file that touches torch must
// include this instead of <doctest.h>.
#pragma once

#include <torch/torch.h>

#ifdef CHECK
#undef CHECK
#endif
#ifdef CHECK_EQ
#undef CHECK_EQ
#endif
#ifdef CHECK_NE
#undef CHECK_NE
#endif
#ifdef CHECK_LE
#undef CHECK_LE
#endif
#ifdef CHECK_LT
#undef CHECK_LT
#endif
#ifdef CHECK_GE
#undef CHECK_GE
#endif
#ifdef CHECK_GT
#undef CHECK_GT
#endif
#ifdef FAIL
#undef FAIL
#endif

#include <doctest.h>
