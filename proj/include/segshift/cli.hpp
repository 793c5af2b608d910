#pragma once

// Command-line front end. Every command writes run_manifest.json into its
// output directory; `segshift rerun --manifest <file>` replays it.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace segshift::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

inline constexpr const char* kRunManifestName = "run_manifest.json";
inline constexpr const char* kOutRootEnv = "SEGSHIFT_OUT_ROOT";

int run(int argc, char** argv);
/// Same as run(argc, argv) with args excluding the program name.
int run(const std::vector<std::string>& args);

/// --out-dir if given (relative paths resolve against $SEGSHIFT_OUT_ROOT when set),
/// otherwise <root>/<command>-<name> with root = $SEGSHIFT_OUT_ROOT or "runs".
std::filesystem::path resolve_out_dir(const std::string& out_dir, const std::string& command,
                                      const std::string& name);

nlohmann::json read_run_manifest(const std::filesystem::path& file);

/// Content hash of the sources this binary was built from.
std::string code_hash();

}  // namespace segshift::cli
