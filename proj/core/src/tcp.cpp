#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <charconv>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <thread>

#include "mpcnn/transport.hpp"

namespace mpcnn {

Endpoint parse_endpoint(std::string_view addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string_view::npos) throw std::invalid_argument("address must be host:port");
  Endpoint ep;
  ep.host = std::string(addr.substr(0, colon));
  if (ep.host.empty()) ep.host = "127.0.0.1";
  const std::string_view port = addr.substr(colon + 1);
  unsigned v = 0;
  const auto [p, ec] = std::from_chars(port.data(), port.data() + port.size(), v);
  if (ec != std::errc{} || p != port.data() + port.size() || port.empty() || v > 65535)
    throw std::invalid_argument("bad port in address '" + std::string(addr) + "'");
  ep.port = static_cast<std::uint16_t>(v);
  return ep;
}

namespace {

[[noreturn]] void sys_fail(const std::string& what) {
  throw TransportError(TransportError::Kind::kDisconnected, what + ": " + std::strerror(errno));
}

sockaddr_in resolve(const Endpoint& ep) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (getaddrinfo(ep.host.c_str(), nullptr, &hints, &res) != 0 || !res)
    throw TransportError(TransportError::Kind::kDisconnected, "cannot resolve " + ep.host);
  sockaddr_in sa{};
  std::memcpy(&sa, res->ai_addr, sizeof(sa));
  freeaddrinfo(res);
  sa.sin_port = htons(ep.port);
  return sa;
}

bool write_all(int fd, const std::uint8_t* p, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::send(fd, p, n, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    p += w;
    n -= static_cast<std::size_t>(w);
  }
  return true;
}

bool read_all(int fd, std::uint8_t* p, std::size_t n) {
  while (n > 0) {
    const ssize_t r = ::recv(fd, p, n, 0);
    if (r == 0) return false;
    if (r < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    p += r;
    n -= static_cast<std::size_t>(r);
  }
  return true;
}

// A background reader drains the socket into a queue so that two parties
// writing large payloads at the same time never block each other.
class TcpLink final : public Link {
 public:
  explicit TcpLink(int fd) : fd_(fd) {
    int one = 1;
    setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    reader_ = std::thread([this] { read_loop(); });
  }

  ~TcpLink() override {
    close();
    if (reader_.joinable()) reader_.join();
    ::close(fd_);
  }

  void write(const Frame& f) override {
    const auto h = encode_header(f);
    std::lock_guard lk(write_mu_);
    if (closed_.load()) throw TransportError(TransportError::Kind::kDisconnected, "tcp link closed");
    if (!write_all(fd_, h.data(), h.size()) ||
        !write_all(fd_, f.payload.data(), f.payload.size()))
      throw TransportError(TransportError::Kind::kDisconnected, "tcp write failed");
  }

  Frame read(std::chrono::milliseconds timeout) override {
    std::unique_lock lk(mu_);
    if (!cv_.wait_for(lk, timeout, [&] { return !q_.empty() || eof_; }))
      throw TransportError(TransportError::Kind::kTimeout, "tcp read timed out");
    if (q_.empty()) throw TransportError(TransportError::Kind::kDisconnected, "peer disconnected");
    Frame f = std::move(q_.front());
    q_.pop_front();
    return f;
  }

  void close() override {
    if (!closed_.exchange(true)) ::shutdown(fd_, SHUT_RDWR);
  }

 private:
  void read_loop() {
    for (;;) {
      std::array<std::uint8_t, kFrameHeaderBytes> h;
      Frame f;
      if (!read_all(fd_, h.data(), h.size())) break;
      const std::uint32_t len = decode_header(h, f);
      f.payload.resize(len);
      if (len && !read_all(fd_, f.payload.data(), len)) break;
      {
        std::lock_guard lk(mu_);
        q_.push_back(std::move(f));
      }
      cv_.notify_all();
    }
    {
      std::lock_guard lk(mu_);
      eof_ = true;
    }
    cv_.notify_all();
  }

  int fd_;
  std::atomic<bool> closed_{false};
  std::mutex write_mu_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Frame> q_;
  bool eof_ = false;
  std::thread reader_;
};

}  // namespace

TcpListener::TcpListener(const Endpoint& ep) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) sys_fail("socket");
  int one = 1;
  setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in sa = resolve(ep);
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) < 0) {
    ::close(fd_);
    sys_fail("bind " + ep.host + ":" + std::to_string(ep.port));
  }
  if (::listen(fd_, 64) < 0) {
    ::close(fd_);
    sys_fail("listen");
  }
  socklen_t len = sizeof(sa);
  getsockname(fd_, reinterpret_cast<sockaddr*>(&sa), &len);
  port_ = ntohs(sa.sin_port);
}

TcpListener::~TcpListener() { close(); }

void TcpListener::close() {
  if (fd_ >= 0) {
    ::shutdown(fd_, SHUT_RDWR);
    ::close(fd_);
    fd_ = -1;
  }
}

std::unique_ptr<Link> TcpListener::accept(std::chrono::milliseconds timeout) {
  pollfd p{fd_, POLLIN, 0};
  const int r = ::poll(&p, 1, static_cast<int>(timeout.count()));
  if (r == 0) throw TransportError(TransportError::Kind::kTimeout, "accept timed out");
  if (r < 0) sys_fail("poll");
  const int c = ::accept(fd_, nullptr, nullptr);
  if (c < 0) sys_fail("accept");
  return std::make_unique<TcpLink>(c);
}

std::unique_ptr<Link> tcp_connect(const Endpoint& ep, std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  const sockaddr_in sa = resolve(ep);
  for (;;) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) sys_fail("socket");
    if (::connect(fd, reinterpret_cast<const sockaddr*>(&sa), sizeof(sa)) == 0)
      return std::make_unique<TcpLink>(fd);
    ::close(fd);
    if (std::chrono::steady_clock::now() >= deadline)
      throw TransportError(TransportError::Kind::kTimeout,
                           "cannot connect to " + ep.host + ":" + std::to_string(ep.port));
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
}

}  // namespace mpcnn
