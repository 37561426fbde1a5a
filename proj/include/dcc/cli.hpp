#pragma once

#include <iosfwd>
#include <string>

namespace dcc::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

// Environment variable naming the default output directory.
inline constexpr const char* kOutputDirEnv = "DCC_OUTPUT_DIR";

// File names written inside the output directory.
inline constexpr const char* kCheckpointFile = "checkpoint.dcce";
inline constexpr const char* kTrainLogFile = "train_log.csv";
inline constexpr const char* kEvalFile = "eval.csv";
inline constexpr const char* kAttackFile = "attack.csv";
inline constexpr const char* kCorruptFile = "corrupt.csv";
inline constexpr const char* kGradcheckFile = "gradcheck.csv";
inline constexpr const char* kCorruptionCacheDir = "corruption_cache";

// Runs the command line in-process. Errors are reported on `err` as one line:
//   dcc: error[<kind>]: <message>
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Footer listing every config key, appended to --help.
std::string config_reference();

}  // namespace dcc::cli
