#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <string>

#include "ttc/error.hpp"
#include "ttc/reward.hpp"

namespace ttc {

namespace {

struct Pipe {
    int read_fd = -1;
    int write_fd = -1;

    Pipe() {
        int fds[2];
        if (pipe(fds) != 0) throw GradingError("sandbox pipe creation failed");
        read_fd = fds[0];
        write_fd = fds[1];
    }
    ~Pipe() {
        close_read();
        close_write();
    }
    void close_read() {
        if (read_fd >= 0) ::close(read_fd);
        read_fd = -1;
    }
    void close_write() {
        if (write_fd >= 0) ::close(write_fd);
        write_fd = -1;
    }
};

void set_nonblocking(int fd) { fcntl(fd, F_SETFL, fcntl(fd, F_GETFL) | O_NONBLOCK); }

double now_s() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

}  // namespace

SandboxRunner::SandboxRunner(std::string python_path) : python_path_(std::move(python_path)) {}

SandboxResult SandboxRunner::run(const std::string& program_text, const std::string& stdin_text,
                                 const SandboxLimits& limits) {
    // Writes from the parent must never raise SIGPIPE when the child dies.
    signal(SIGPIPE, SIG_IGN);

    Pipe child_stdin;
    Pipe child_stdout;
    Pipe exec_err;  // stays empty unless exec fails (O_CLOEXEC)
    fcntl(exec_err.write_fd, F_SETFD, FD_CLOEXEC);

    pid_t pid = fork();
    if (pid < 0) throw GradingError("sandbox fork failed");
    if (pid == 0) {
        dup2(child_stdin.read_fd, STDIN_FILENO);
        dup2(child_stdout.write_fd, STDOUT_FILENO);
        // Drop the duplicated ends: a surviving stdin write fd would keep the
        // child from ever seeing EOF on its own stdin.
        child_stdin.close_read();
        child_stdin.close_write();
        child_stdout.close_read();
        child_stdout.close_write();
        exec_err.close_read();
        int devnull = open("/dev/null", O_WRONLY);
        if (devnull >= 0) dup2(devnull, STDERR_FILENO);

        if (limits.memory_bytes > 0) {
            rlimit mem{static_cast<rlim_t>(limits.memory_bytes),
                       static_cast<rlim_t>(limits.memory_bytes)};
            setrlimit(RLIMIT_AS, &mem);
        }
        // CPU backstop behind the parent's wall-clock kill.
        rlim_t cpu_s = static_cast<rlim_t>(std::ceil(limits.wall_time_s)) + 1;
        rlimit cpu{cpu_s, cpu_s};
        setrlimit(RLIMIT_CPU, &cpu);

        execlp(python_path_.c_str(), python_path_.c_str(), "-c", program_text.c_str(),
               static_cast<char*>(nullptr));
        int err = errno;
        ssize_t ignored = write(exec_err.write_fd, &err, sizeof(err));
        (void)ignored;
        _exit(127);
    }

    child_stdin.close_read();
    child_stdout.close_write();
    exec_err.close_write();

    set_nonblocking(child_stdin.write_fd);
    set_nonblocking(child_stdout.read_fd);

    SandboxResult result;
    std::string& captured = result.stdout_text;
    size_t stdin_written = 0;
    bool stdin_done = stdin_text.empty();
    if (stdin_done) child_stdin.close_write();

    const double deadline = now_s() + limits.wall_time_s;
    bool killed = false;
    int status = 0;
    bool exited = false;

    while (true) {
        if (!exited) {
            pid_t done = waitpid(pid, &status, WNOHANG);
            if (done == pid) exited = true;
        }

        pollfd fds[2];
        nfds_t nfds = 0;
        int stdout_slot = -1, stdin_slot = -1;
        if (child_stdout.read_fd >= 0) {
            stdout_slot = static_cast<int>(nfds);
            fds[nfds++] = {child_stdout.read_fd, POLLIN, 0};
        }
        if (!stdin_done && child_stdin.write_fd >= 0) {
            stdin_slot = static_cast<int>(nfds);
            fds[nfds++] = {child_stdin.write_fd, POLLOUT, 0};
        }

        if (nfds > 0) {
            poll(fds, nfds, 20);
            if (stdout_slot >= 0 && (fds[stdout_slot].revents & (POLLIN | POLLHUP))) {
                char buf[4096];
                ssize_t n;
                while ((n = read(child_stdout.read_fd, buf, sizeof(buf))) > 0) {
                    size_t room = limits.max_output_bytes > captured.size()
                                      ? limits.max_output_bytes - captured.size()
                                      : 0;
                    size_t take = std::min(room, static_cast<size_t>(n));
                    captured.append(buf, take);
                    if (take < static_cast<size_t>(n)) result.output_truncated = true;
                }
                if (n == 0) child_stdout.close_read();
            }
            if (stdin_slot >= 0 && (fds[stdin_slot].revents & (POLLOUT | POLLERR | POLLHUP))) {
                ssize_t n = write(child_stdin.write_fd, stdin_text.data() + stdin_written,
                                  stdin_text.size() - stdin_written);
                if (n > 0) stdin_written += static_cast<size_t>(n);
                if (n < 0 && errno != EAGAIN && errno != EINTR) stdin_done = true;
                if (stdin_written == stdin_text.size()) stdin_done = true;
                if (stdin_done) child_stdin.close_write();
            }
        }

        if (exited && child_stdout.read_fd < 0) break;
        if (exited && nfds == 0) break;

        if (!exited && now_s() > deadline) {
            kill(pid, SIGKILL);
            killed = true;
            waitpid(pid, &status, 0);
            exited = true;
            result.timed_out = true;
            // Drain whatever already reached the pipe.
            char buf[4096];
            ssize_t n;
            while (child_stdout.read_fd >= 0 &&
                   (n = read(child_stdout.read_fd, buf, sizeof(buf))) > 0) {
                size_t room = limits.max_output_bytes > captured.size()
                                  ? limits.max_output_bytes - captured.size()
                                  : 0;
                captured.append(buf, std::min(room, static_cast<size_t>(n)));
            }
            break;
        }
    }
    (void)killed;

    if (WIFEXITED(status)) {
        result.exit_status = WEXITSTATUS(status);
    } else {
        result.exit_status = -1;
    }

    // An exec failure means the runner itself is broken, not the program.
    int exec_errno = 0;
    ssize_t got = read(exec_err.read_fd, &exec_errno, sizeof(exec_errno));
    if (got == static_cast<ssize_t>(sizeof(exec_errno))) {
        throw GradingError("sandbox cannot execute " + python_path_ + ": " +
                           std::strerror(exec_errno));
    }
    return result;
}

}  // namespace ttc
