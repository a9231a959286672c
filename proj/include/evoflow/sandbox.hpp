#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>

namespace evoflow {

enum class NetworkPolicy { Deny, Allow };

struct SandboxPolicy {
    std::chrono::milliseconds wall_time{60000};
    std::size_t memory_bytes = std::size_t{2} << 30;
    std::filesystem::path root; ///< empty: use the workspace passed to sandbox_exec
    NetworkPolicy network = NetworkPolicy::Deny;
    std::size_t output_cap = std::size_t{1} << 20; ///< per stream
};

struct ExecResult {
    std::string stdout_text;
    std::string stderr_text;
    int exit_code = 0; ///< 128+signal when killed
    int term_signal = 0;
    bool timed_out = false;
    bool stdout_truncated = false;
    bool stderr_truncated = false;
    /// Network::Deny could be enforced with a private network namespace.
    bool network_isolated = false;
    std::chrono::milliseconds wall_time{0};
};

/// Runs `code` in a child process under `policy`. `language` is a fence tag:
/// "python"/"py"/"" run with python3, "sh"/"bash"/"shell" with /bin/sh.
/// Timeouts and memory kills are ordinary results. Throws SandboxError when
/// the child cannot be started or the policy/workspace is invalid.
ExecResult sandbox_exec(std::string_view code, std::string_view language, const SandboxPolicy& policy,
                        const std::filesystem::path& workspace);

} // namespace evoflow
