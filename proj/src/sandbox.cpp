#include "evoflow/sandbox.hpp"

#include <atomic>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <vector>

#include <fcntl.h>
#include <poll.h>
#include <sched.h>
#include <signal.h>
#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include "evoflow/errors.hpp"

namespace evoflow {

namespace fs = std::filesystem;

namespace {

std::atomic<unsigned> snippet_counter{0};

struct Pipe {
    int fd[2] = {-1, -1};
    Pipe() {
        if (::pipe2(fd, O_CLOEXEC) != 0)
            throw SandboxError(std::string("pipe: ") + std::strerror(errno));
    }
    ~Pipe() { close_both(); }
    void close_read() { close_fd(fd[0]); }
    void close_write() { close_fd(fd[1]); }
    void close_both() {
        close_read();
        close_write();
    }
    static void close_fd(int& f) {
        if (f >= 0)
            ::close(f);
        f = -1;
    }
};

void append_capped(std::string& out, const char* data, std::size_t n, std::size_t cap, bool& truncated) {
    if (out.size() >= cap) {
        truncated = truncated || n > 0;
        return;
    }
    std::size_t room = cap - out.size();
    out.append(data, std::min(n, room));
    if (n > room)
        truncated = true;
}

} // namespace

ExecResult sandbox_exec(std::string_view code, std::string_view language, const SandboxPolicy& policy,
                        const fs::path& workspace) {
    if (policy.wall_time.count() <= 0 || policy.memory_bytes == 0 || policy.output_cap == 0)
        throw SandboxError("sandbox policy limits must be positive");
    fs::path root = policy.root.empty() ? workspace : policy.root;
    if (!fs::is_directory(root))
        throw SandboxError("sandbox workspace does not exist: " + root.string());

    std::string interpreter;
    std::string ext;
    if (language.empty() || language == "python" || language == "py" || language == "python3") {
        interpreter = "python3";
        ext = ".py";
    } else if (language == "sh" || language == "bash" || language == "shell") {
        interpreter = "/bin/sh";
        ext = ".sh";
    } else {
        throw SandboxError("unsupported code language '" + std::string(language) + "'");
    }

    fs::path dir = root / ".sandbox";
    std::error_code ec;
    fs::create_directories(dir, ec);
    fs::path script = dir / ("snippet-" + std::to_string(::getpid()) + "-" +
                             std::to_string(snippet_counter++) + ext);
    {
        std::ofstream out(script, std::ios::binary);
        out << code;
        if (!out)
            throw SandboxError("cannot write snippet to " + script.string());
    }

    Pipe out_pipe, err_pipe, status_pipe;
    auto start = std::chrono::steady_clock::now();
    pid_t pid = ::fork();
    if (pid < 0)
        throw SandboxError(std::string("fork: ") + std::strerror(errno));

    if (pid == 0) {
        ::setpgid(0, 0);
        char isolated = '0';
        if (policy.network == NetworkPolicy::Deny &&
            ::unshare(CLONE_NEWUSER | CLONE_NEWNET) == 0)
            isolated = '1';
        (void)!::write(status_pipe.fd[1], &isolated, 1);
        if (::chdir(root.c_str()) != 0)
            ::_exit(126);
        ::dup2(out_pipe.fd[1], STDOUT_FILENO);
        ::dup2(err_pipe.fd[1], STDERR_FILENO);
        int devnull = ::open("/dev/null", O_RDONLY);
        if (devnull >= 0)
            ::dup2(devnull, STDIN_FILENO);
        rlimit mem{policy.memory_bytes, policy.memory_bytes};
        ::setrlimit(RLIMIT_AS, &mem);
        auto cpu_secs = static_cast<rlim_t>(policy.wall_time.count() / 1000 + 1);
        rlimit cpu{cpu_secs, cpu_secs + 1};
        ::setrlimit(RLIMIT_CPU, &cpu);
        std::string script_s = script.string();
        std::vector<char*> argv{interpreter.data(), script_s.data(), nullptr};
        ::execvp(argv[0], argv.data());
        char tag = 'E';
        int err = errno;
        (void)!::write(status_pipe.fd[1], &tag, 1);
        (void)!::write(status_pipe.fd[1], &err, sizeof err);
        ::_exit(127);
    }

    out_pipe.close_write();
    err_pipe.close_write();
    status_pipe.close_write();

    ExecResult result;
    char status_buf[1 + 1 + sizeof(int)];
    std::size_t status_len = 0;
    for (;;) {
        ssize_t n = ::read(status_pipe.fd[0], status_buf + status_len, sizeof status_buf - status_len);
        if (n <= 0)
            break;
        status_len += static_cast<std::size_t>(n);
    }
    if (status_len >= 1)
        result.network_isolated = status_buf[0] == '1';
    if (status_len >= 2 && status_buf[1] == 'E') {
        int err = 0;
        if (status_len >= 2 + sizeof(int))
            std::memcpy(&err, status_buf + 2, sizeof err);
        ::waitpid(pid, nullptr, 0);
        throw SandboxError("cannot exec " + interpreter + ": " + std::strerror(err));
    }

    auto deadline = start + policy.wall_time;
    pollfd fds[2] = {{out_pipe.fd[0], POLLIN, 0}, {err_pipe.fd[0], POLLIN, 0}};
    int open_streams = 2;
    char buf[65536];
    while (open_streams > 0) {
        auto now = std::chrono::steady_clock::now();
        if (now >= deadline) {
            result.timed_out = true;
            ::kill(-pid, SIGKILL);
            ::kill(pid, SIGKILL);
            break;
        }
        int wait_ms = static_cast<int>(
            std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count()) + 1;
        int rc = ::poll(fds, 2, std::min(wait_ms, 100));
        if (rc < 0) {
            if (errno == EINTR)
                continue;
            break;
        }
        for (int i = 0; i < 2; ++i) {
            if (fds[i].fd < 0 || !(fds[i].revents & (POLLIN | POLLHUP | POLLERR)))
                continue;
            ssize_t n = ::read(fds[i].fd, buf, sizeof buf);
            if (n <= 0) {
                fds[i].fd = -1;
                --open_streams;
                continue;
            }
            if (i == 0)
                append_capped(result.stdout_text, buf, n, policy.output_cap, result.stdout_truncated);
            else
                append_capped(result.stderr_text, buf, n, policy.output_cap, result.stderr_truncated);
        }
    }

    int status = 0;
    ::waitpid(pid, &status, 0);
    // Reap anything the snippet left behind in its process group.
    ::kill(-pid, SIGKILL);
    result.wall_time = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - start);
    if (WIFEXITED(status)) {
        result.exit_code = WEXITSTATUS(status);
    } else if (WIFSIGNALED(status)) {
        result.term_signal = WTERMSIG(status);
        result.exit_code = 128 + result.term_signal;
        if (result.term_signal == SIGXCPU)
            result.timed_out = true;
    }
    fs::remove(script, ec);
    return result;
}

} // namespace evoflow
