#pragma once

// Self-contained verification suite behind the `check` command: randomized
// finite-difference checks for every registered op (64-bit mode), a
// full-objective gradient check, solver-order measurements, and invariant
// spot checks. Each entry reports pass/fail with the measured value.

#include <string>
#include <vector>

namespace pixelgen {

struct CheckResult {
    std::string name;
    bool pass = false;
    double value = 0.0;      // measured quantity (error, order, ...)
    double threshold = 0.0;  // bound it was compared against
    std::string note;
};

struct CheckOptions {
    std::string fault_op;  // inject a backward fault into this op (self-test)
    uint64_t seed = 99;
};

std::vector<CheckResult> run_check_suite(const CheckOptions& opts = {});

// Finite-difference error of the full combined objective w.r.t. every
// trainable parameter of a small double-precision model (randomized weights).
// The step balances central-difference truncation (~h^2) against rounding
// noise (~eps*|loss|/h) on parameters whose gradient is near zero.
double objective_fd_error(int64_t image_size, int64_t width, int64_t depth, int64_t heads, int64_t batch,
                          uint64_t seed, double h = 2e-4);

// Measured convergence order on dx/dt = -x over [0,1] against a dense-step
// reference, via log2 of the error ratio under step halving.
double measured_order(int solver_kind /*0 euler, 1 heun, 2 adams2*/, int64_t n_coarse);

}  // namespace pixelgen
