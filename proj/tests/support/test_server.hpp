#pragma once

#include <string>
#include <thread>

#include <httplib.h>

namespace ttc_test {

// In-process HTTP server for exercising remote clients without a network.
class LocalServer {
public:
    LocalServer() = default;
    ~LocalServer() { stop(); }

    LocalServer(const LocalServer&) = delete;
    LocalServer& operator=(const LocalServer&) = delete;

    httplib::Server& server() { return server_; }

    // Binds to an ephemeral port and returns the base URL.
    std::string start() {
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        return "http://127.0.0.1:" + std::to_string(port_);
    }

    void stop() {
        if (thread_.joinable()) {
            server_.stop();
            thread_.join();
        }
    }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

}  // namespace ttc_test
