#pragma once

// Minimal POSIX TCP plumbing for the line-oriented sensor protocol.

#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/ioctl.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <utility>

#include "empathic/error.hpp"

namespace empathic::net {

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  Socket(Socket&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  Socket& operator=(Socket&& other) noexcept {
    if (this != &other) {
      close();
      fd_ = std::exchange(other.fd_, -1);
    }
    return *this;
  }
  ~Socket() { close(); }

  int fd() const { return fd_; }
  bool is_open() const { return fd_ >= 0; }

  /// Wakes any thread blocked in poll/recv on this socket without releasing the fd.
  void shutdown() const {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

  void close() {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  int fd_ = -1;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

inline std::string to_string(const Endpoint& e) { return e.host + ":" + std::to_string(e.port); }

/// Waits until `fd` is readable. Returns false on timeout. Negative timeout blocks.
inline bool wait_readable(int fd, std::chrono::milliseconds timeout) {
  pollfd p{fd, POLLIN, 0};
  while (true) {
    int rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
    if (rc < 0 && errno == EINTR) continue;
    if (rc < 0) throw Error(ErrorCode::io_error, std::strerror(errno));
    return rc > 0;
  }
}

inline Socket connect_tcp(const Endpoint& ep, std::chrono::milliseconds timeout) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  std::string port = std::to_string(ep.port);
  if (int rc = ::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &res); rc != 0) {
    throw Error(ErrorCode::connection_refused, to_string(ep) + ": " + ::gai_strerror(rc));
  }
  std::string last_error = "no address";
  for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    Socket s(::socket(ai->ai_family, ai->ai_socktype | SOCK_NONBLOCK, ai->ai_protocol));
    if (!s.is_open()) continue;
    int rc = ::connect(s.fd(), ai->ai_addr, ai->ai_addrlen);
    if (rc != 0 && errno == EINPROGRESS) {
      pollfd p{s.fd(), POLLOUT, 0};
      rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
      if (rc == 0) {
        last_error = "connect timed out";
        continue;
      }
      int err = 0;
      socklen_t len = sizeof(err);
      ::getsockopt(s.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
      if (err != 0) {
        last_error = std::strerror(err);
        continue;
      }
      rc = 0;
    } else if (rc != 0) {
      last_error = std::strerror(errno);
      continue;
    }
    // back to blocking mode; reads use poll for timeouts
    int flags = 0;
    ::ioctl(s.fd(), FIONBIO, &flags);
    int one = 1;
    ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    ::freeaddrinfo(res);
    return s;
  }
  ::freeaddrinfo(res);
  throw Error(ErrorCode::connection_refused, to_string(ep) + ": " + last_error);
}

/// Binds and listens. Port 0 selects an ephemeral port; see `local_port`.
inline Socket listen_tcp(const Endpoint& ep, int backlog = 4) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  std::string port = std::to_string(ep.port);
  if (int rc = ::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &res); rc != 0) {
    throw Error(ErrorCode::bind_failure, to_string(ep) + ": " + ::gai_strerror(rc));
  }
  std::string last_error = "no address";
  for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    Socket s(::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol));
    if (!s.is_open()) continue;
    int one = 1;
    ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (::bind(s.fd(), ai->ai_addr, ai->ai_addrlen) != 0 || ::listen(s.fd(), backlog) != 0) {
      last_error = std::strerror(errno);
      continue;
    }
    ::freeaddrinfo(res);
    return s;
  }
  ::freeaddrinfo(res);
  throw Error(ErrorCode::bind_failure, to_string(ep) + ": " + last_error);
}

inline std::uint16_t local_port(const Socket& s) {
  sockaddr_storage addr{};
  socklen_t len = sizeof(addr);
  if (::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len) != 0) return 0;
  if (addr.ss_family == AF_INET) return ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
  if (addr.ss_family == AF_INET6) return ntohs(reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port);
  return 0;
}

inline void write_all(const Socket& s, std::string_view data) {
  while (!data.empty()) {
    ssize_t n = ::send(s.fd(), data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw Error(ErrorCode::broken_pipe, n < 0 ? std::strerror(errno) : "peer closed");
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

/// Buffered newline reader over a socket.
class LineReader {
 public:
  enum class Status { line, timeout, closed };

  struct Result {
    Status status;
    std::string line;  // without the trailing '\n'
  };

  explicit LineReader(const Socket& s) : socket_(&s) {}

  Result read_line(std::chrono::milliseconds timeout) {
    auto deadline = std::chrono::steady_clock::now() + timeout;
    while (true) {
      if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
        Result r{Status::line, buffer_.substr(0, nl)};
        buffer_.erase(0, nl + 1);
        return r;
      }
      if (closed_) return {Status::closed, {}};
      auto left = std::chrono::ceil<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() < 0) left = std::chrono::milliseconds(0);
      if (!wait_readable(socket_->fd(), left)) {
        // poll may wake slightly early
        if (std::chrono::steady_clock::now() < deadline) continue;
        return {Status::timeout, {}};
      }
      char chunk[4096];
      ssize_t n = ::recv(socket_->fd(), chunk, sizeof(chunk), 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) {
        closed_ = true;
        continue;
      }
      buffer_.append(chunk, static_cast<std::size_t>(n));
      if (buffer_.size() > kMaxLine && buffer_.find('\n') == std::string::npos) {
        // an unterminated runaway line is dropped and reading continues
        buffer_.clear();
      }
    }
  }

 private:
  static constexpr std::size_t kMaxLine = 1 << 20;
  const Socket* socket_;
  std::string buffer_;
  bool closed_ = false;
};

}  // namespace empathic::net
