#pragma once

// Command-line front end: train, predict, evaluate, overfit-demo, export,
// import, init and serve.
//
// Exit codes: 0 success, 1 runtime failure, 2 bad invocation (invalid
// configuration, missing input path, unparsable flags).

#include <filesystem>
#include <string>

namespace basnet::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Environment variable naming the checkpoint root.
inline constexpr const char* kHomeVariable = "BASNET_HOME";

/// A path that exists as given, or relative to $BASNET_HOME.
std::filesystem::path resolve_checkpoint(const std::string& given);

int run(int argc, char** argv);

}  // namespace basnet::cli
