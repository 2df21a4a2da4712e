#pragma once

namespace bce::kernels {

/// Kernel dispatch. `serial` runs the direct textbook loops kept as the test reference;
/// `parallel` runs the OpenMP im2col/GEMM paths. Both give results independent of the thread
/// count: every output element is accumulated by exactly one thread in a fixed order.
enum class Exec { serial, parallel };

/// Number of OpenMP threads available (1 when built without OpenMP).
int max_threads();
void set_threads(int n);

}  // namespace bce::kernels
