#pragma once

// Pass thresholds for the acceptance binary. Values marked "frozen" were
// fixed after the first full run; observed values are in results/acceptance.txt.

namespace mcactrl::acceptance {

inline constexpr int kOracleInstances = 1000;
inline constexpr float kOracleMaxDiff = 1e-6f;
inline constexpr double kOracleSeconds = 10.0;

inline constexpr int kMaskSamples = 500;

inline constexpr int kTrainSteps = 2000;
inline constexpr int kTrainScenes = 512;
inline constexpr int kTrainBatch = 8;
inline constexpr int kLossWindow = 50;
inline constexpr double kLossRatio = 0.5;
inline constexpr double kTrainSeconds = 15 * 60.0;

inline constexpr double kDegenerateMaxDiff = 1e-6;
inline constexpr double kDegenerateSeconds = 60.0;
inline constexpr double kFullInjectMaxDiff = 1e-5;
inline constexpr double kPackingMaxDiff = 1e-5;

// Frozen.
inline constexpr double kRoundTripMae = 0.05;
inline constexpr int kRoundTripImages = 8;
inline constexpr double kRoundTripSeconds = 120.0;

// 4 subjects x 10 conditions gives 24 clean swap cases.
inline constexpr int kBenchSubjects = 4;
inline constexpr int kBenchConditions = 10;
inline constexpr int kSwapMinCases = 20;
// Frozen.
inline constexpr double kSwapBgWinRate = 0.8;
inline constexpr double kSwapFgWinRate = 0.7;
inline constexpr double kSwapSeconds = 30 * 60.0;

// Frozen.
inline constexpr double kSweepWinRate = 0.7;

}  // namespace mcactrl::acceptance
