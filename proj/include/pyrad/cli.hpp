#pragma once

namespace pyrad {

// Exit codes, one per failure class:
//   0 success
//   2 configuration / usage (bad flags, unknown keys, fingerprint mismatch)
//   3 dataset / layout problems
//   4 training failures (divergence, pretraining accuracy floor)
//   5 metric undefined on the given inputs
//   6 file I/O and weights-archive problems
//   7 internal errors (dimension/numeric invariant violations)
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitTrain = 4;
inline constexpr int kExitMetric = 5;
inline constexpr int kExitIo = 6;
inline constexpr int kExitInternal = 7;

int run_cli(int argc, char** argv);

}  // namespace pyrad
