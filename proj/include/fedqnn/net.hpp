#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <functional>
#include <limits>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include "fedqnn/errors.hpp"
#include "fedqnn/fed.hpp"
#include "fedqnn/wire.hpp"

namespace fedqnn {

struct Endpoint {
    std::string host;
    std::uint16_t port = 0;
};

inline Endpoint parse_endpoint(const std::string &address) {
    const auto colon = address.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == address.size()) {
        throw ConfigError("address must be host:port, got '" + address + "'");
    }
    Endpoint ep;
    ep.host = address.substr(0, colon);
    const char *first = address.data() + colon + 1;
    const char *last = address.data() + address.size();
    unsigned value = 0;
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last || value > 65535) {
        throw ConfigError("bad port in '" + address + "'");
    }
    ep.port = static_cast<std::uint16_t>(value);
    return ep;
}

/// Sent or received line observer for protocol transcripts: peer id,
/// direction ('>' outgoing, '<' incoming), raw line without the newline.
using Transcript = std::function<void(std::string_view peer, char direction, std::string_view line)>;

class TcpStream {
  public:
    TcpStream() = default;
    explicit TcpStream(int fd) : fd_(fd) {}
    TcpStream(TcpStream &&other) noexcept
        : fd_(std::exchange(other.fd_, -1)), buffer_(std::move(other.buffer_)) {}
    TcpStream &operator=(TcpStream &&other) noexcept {
        if (this != &other) {
            close();
            fd_ = std::exchange(other.fd_, -1);
            buffer_ = std::move(other.buffer_);
        }
        return *this;
    }
    TcpStream(const TcpStream &) = delete;
    TcpStream &operator=(const TcpStream &) = delete;
    ~TcpStream() { close(); }

    static TcpStream connect(const Endpoint &ep) {
        addrinfo hints{};
        hints.ai_family = AF_UNSPEC;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo *found = nullptr;
        const std::string port = std::to_string(ep.port);
        if (::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &found) != 0) {
            throw ConnectionLost("cannot resolve " + ep.host);
        }
        int fd = -1;
        for (addrinfo *ai = found; ai != nullptr; ai = ai->ai_next) {
            fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
            if (fd < 0) {
                continue;
            }
            if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) {
                break;
            }
            ::close(fd);
            fd = -1;
        }
        ::freeaddrinfo(found);
        if (fd < 0) {
            throw ConnectionLost("cannot connect to " + ep.host + ":" + port);
        }
        TcpStream stream(fd);
        stream.enable_nodelay();
        return stream;
    }

    bool valid() const { return fd_ >= 0; }

    void close() {
        if (fd_ >= 0) {
            ::close(fd_);
            fd_ = -1;
        }
    }

    /// Unblocks a receive_line() running in another thread.
    void shutdown_both() {
        if (fd_ >= 0) {
            ::shutdown(fd_, SHUT_RDWR);
        }
    }

    void enable_nodelay() {
        int one = 1;
        ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    }

    /// Zero disables the timeout (blocking reads).
    void set_receive_timeout(std::chrono::milliseconds timeout) {
        timeval tv{};
        tv.tv_sec = static_cast<time_t>(timeout.count() / 1000);
        tv.tv_usec = static_cast<suseconds_t>(timeout.count() % 1000 * 1000);
        ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
    }

    void send_line(std::string_view line) {
        std::size_t sent = 0;
        while (sent < line.size()) {
            const ssize_t n = ::send(fd_, line.data() + sent, line.size() - sent, MSG_NOSIGNAL);
            if (n < 0) {
                if (errno == EINTR) {
                    continue;
                }
                throw ConnectionLost(std::string("send failed: ") + std::strerror(errno));
            }
            sent += static_cast<std::size_t>(n);
        }
    }

    /// One '\n'-terminated line, newline stripped. Enforces the 1 MiB frame
    /// cap before ever buffering a full oversized line.
    std::string receive_line() {
        for (;;) {
            const auto pos = buffer_.find('\n');
            if (pos != std::string::npos) {
                std::string line = buffer_.substr(0, pos);
                buffer_.erase(0, pos + 1);
                if (line.size() + 1 > wire_max_line) {
                    throw OversizeLine("incoming line exceeds the 1 MiB cap");
                }
                return line;
            }
            if (buffer_.size() > wire_max_line) {
                throw OversizeLine("incoming line exceeds the 1 MiB cap");
            }
            char chunk[4096];
            const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
            if (n == 0) {
                throw ConnectionLost("peer closed the connection");
            }
            if (n < 0) {
                if (errno == EINTR) {
                    continue;
                }
                if (errno == EAGAIN || errno == EWOULDBLOCK) {
                    throw Timeout("receive timed out");
                }
                throw ConnectionLost(std::string("recv failed: ") + std::strerror(errno));
            }
            buffer_.append(chunk, static_cast<std::size_t>(n));
        }
    }

  private:
    int fd_ = -1;
    std::string buffer_;
};

class TcpListener {
  public:
    TcpListener() = default;
    TcpListener(TcpListener &&other) noexcept
        : fd_(std::exchange(other.fd_, -1)), port_(other.port_) {}
    TcpListener &operator=(TcpListener &&other) noexcept {
        if (this != &other) {
            close();
            fd_ = std::exchange(other.fd_, -1);
            port_ = other.port_;
        }
        return *this;
    }
    TcpListener(const TcpListener &) = delete;
    TcpListener &operator=(const TcpListener &) = delete;
    ~TcpListener() { close(); }

    /// Port 0 picks a free port; port() reports the resolved one.
    static TcpListener bind(const Endpoint &ep) {
        addrinfo hints{};
        hints.ai_family = AF_UNSPEC;
        hints.ai_socktype = SOCK_STREAM;
        hints.ai_flags = AI_PASSIVE;
        addrinfo *found = nullptr;
        const std::string port = std::to_string(ep.port);
        if (::getaddrinfo(ep.host.empty() ? nullptr : ep.host.c_str(), port.c_str(), &hints,
                          &found) != 0) {
            throw ConfigError("cannot resolve listen address " + ep.host);
        }
        int fd = -1;
        for (addrinfo *ai = found; ai != nullptr; ai = ai->ai_next) {
            fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
            if (fd < 0) {
                continue;
            }
            int one = 1;
            ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
            if (::bind(fd, ai->ai_addr, ai->ai_addrlen) == 0 && ::listen(fd, 16) == 0) {
                break;
            }
            ::close(fd);
            fd = -1;
        }
        ::freeaddrinfo(found);
        if (fd < 0) {
            throw ConfigError("cannot bind " + ep.host + ":" + port);
        }
        TcpListener listener;
        listener.fd_ = fd;
        sockaddr_storage bound{};
        socklen_t len = sizeof bound;
        if (::getsockname(fd, reinterpret_cast<sockaddr *>(&bound), &len) == 0) {
            if (bound.ss_family == AF_INET) {
                listener.port_ = ntohs(reinterpret_cast<sockaddr_in *>(&bound)->sin_port);
            } else if (bound.ss_family == AF_INET6) {
                listener.port_ = ntohs(reinterpret_cast<sockaddr_in6 *>(&bound)->sin6_port);
            }
        }
        return listener;
    }

    std::uint16_t port() const { return port_; }
    bool valid() const { return fd_ >= 0; }

    void close() {
        if (fd_ >= 0) {
            ::close(fd_);
            fd_ = -1;
        }
    }

    /// Waits up to `timeout` for a connection; an invalid stream means the
    /// wait expired.
    TcpStream accept_within(std::chrono::milliseconds timeout) {
        pollfd pfd{fd_, POLLIN, 0};
        const auto ms = static_cast<int>(std::clamp<std::chrono::milliseconds::rep>(
            timeout.count(), 0, std::numeric_limits<int>::max()));
        const int ready = ::poll(&pfd, 1, ms);
        if (ready <= 0) {
            return TcpStream{};
        }
        const int fd = ::accept(fd_, nullptr, nullptr);
        if (fd < 0) {
            throw ConnectionLost(std::string("accept failed: ") + std::strerror(errno));
        }
        TcpStream stream(fd);
        stream.enable_nodelay();
        return stream;
    }

  private:
    int fd_ = -1;
    std::uint16_t port_ = 0;
};

namespace detail {

inline void send_logged(TcpStream &stream, const Message &message, const Transcript &transcript,
                        std::string_view peer) {
    const std::string line = encode_message(message);
    if (transcript) {
        transcript(peer, '>', std::string_view(line.data(), line.size() - 1));
    }
    stream.send_line(line);
}

} // namespace detail

/// Runs the federation of `plan` over an already bound listener: wait for a
/// Hello from every planned client_id, Welcome them, then per round
/// broadcast Global, gather Updates, aggregate and evaluate exactly as the
/// in-process loop does. Round records carry what the wire carries; the
/// per-epoch curves stay at the clients.
///
/// Connection handling: each registered session gets a reader thread that
/// feeds decoded messages into one coordinator queue; the coordinator (the
/// calling thread) performs all writes and all aggregation.
inline std::vector<RoundRecord> serve(TcpListener &listener, const FederationPlan &plan,
                                      std::chrono::milliseconds round_timeout,
                                      const Transcript &transcript = {}) {
    using Clock = std::chrono::steady_clock;
    plan.validate();
    if (!listener.valid()) {
        throw ConfigError("serve needs a bound listener");
    }

    std::vector<std::size_t> order(plan.clients.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return plan.clients[a].client_id < plan.clients[b].client_id;
    });
    const std::size_t n = order.size();
    auto planned = [&](std::size_t slot) -> const ClientConfig & { return plan.clients[order[slot]]; };

    struct Session {
        TcpStream stream;
        std::string client_id;
    };
    std::vector<Session> sessions(n);
    std::vector<bool> registered(n, false);

    auto missing_ids = [&] {
        std::string ids;
        for (std::size_t slot = 0; slot < n; ++slot) {
            if (!registered[slot]) {
                ids += ids.empty() ? "" : ", ";
                ids += planned(slot).client_id;
            }
        }
        return ids;
    };

    // --- registration: every planned client must Hello within one timeout ---
    const auto reg_deadline = Clock::now() + round_timeout;
    std::size_t have = 0;
    while (have < n) {
        const auto remaining =
            std::chrono::duration_cast<std::chrono::milliseconds>(reg_deadline - Clock::now());
        if (remaining.count() <= 0) {
            throw Timeout("no hello from: " + missing_ids());
        }
        TcpStream conn = listener.accept_within(remaining);
        if (!conn.valid()) {
            throw Timeout("no hello from: " + missing_ids());
        }
        conn.set_receive_timeout(remaining);
        try {
            const std::string line = conn.receive_line();
            const Message m = decode_message(line);
            const auto *hello = std::get_if<HelloMessage>(&m);
            if (hello == nullptr) {
                detail::send_logged(conn, ErrorMessage{"protocol", "expected hello"}, transcript, "?");
                continue;
            }
            if (transcript) {
                transcript(hello->client_id, '<', line);
            }
            const auto it = std::lower_bound(
                order.begin(), order.end(), hello->client_id,
                [&](std::size_t slot, const std::string &id) { return plan.clients[slot].client_id < id; });
            const auto slot = static_cast<std::size_t>(it - order.begin());
            if (it == order.end() || plan.clients[*it].client_id != hello->client_id) {
                detail::send_logged(conn, ErrorMessage{"unknown_client", hello->client_id}, transcript,
                                    hello->client_id);
                continue;
            }
            if (registered[slot]) {
                detail::send_logged(conn, ErrorMessage{"duplicate_client", hello->client_id},
                                    transcript, hello->client_id);
                continue;
            }
            conn.set_receive_timeout(std::chrono::milliseconds(0));
            detail::send_logged(
                conn, WelcomeMessage{wire_protocol_version, plan.rounds_max, plan.circuit, plan.training},
                transcript, hello->client_id);
            sessions[slot] = Session{std::move(conn), hello->client_id};
            registered[slot] = true;
            ++have;
        } catch (const VersionMismatch &e) {
            detail::send_logged(conn, ErrorMessage{"version", e.what()}, transcript, "?");
        } catch (const MalformedMessage &e) {
            detail::send_logged(conn, ErrorMessage{"malformed", e.what()}, transcript, "?");
        } catch (const OversizeLine &) {
            // dropped without a reply; the frame cap protects the server
        } catch (const Timeout &) {
            throw Timeout("no hello from: " + missing_ids());
        } catch (const ConnectionLost &) {
            // connection died before registering; keep waiting for the roster
        }
    }
    listener.close();

    // --- coordinator queue fed by one reader thread per session ---
    struct Incoming {
        std::size_t slot = 0;
        std::string line;
        std::optional<Message> message;
        std::exception_ptr error;
    };
    std::mutex mu;
    std::condition_variable cv;
    std::deque<Incoming> queue;
    std::vector<std::thread> readers;
    readers.reserve(n);
    for (std::size_t slot = 0; slot < n; ++slot) {
        readers.emplace_back([&, slot] {
            for (;;) {
                Incoming item;
                item.slot = slot;
                bool stop = false;
                try {
                    item.line = sessions[slot].stream.receive_line();
                    item.message = decode_message(item.line);
                } catch (...) {
                    item.error = std::current_exception();
                    stop = true;
                }
                {
                    const std::lock_guard lock(mu);
                    queue.push_back(std::move(item));
                }
                cv.notify_one();
                if (stop) {
                    return;
                }
            }
        });
    }
    auto stop_readers = [&] {
        for (Session &s : sessions) {
            s.stream.shutdown_both();
        }
        for (std::thread &r : readers) {
            if (r.joinable()) {
                r.join();
            }
        }
    };

    std::vector<RoundRecord> records;
    try {
        ModelParams global = ModelParams::zeros(plan.circuit);
        bool target_met = false;
        for (std::size_t round = 1; round <= plan.rounds_max && !target_met; ++round) {
            for (std::size_t slot = 0; slot < n; ++slot) {
                detail::send_logged(sessions[slot].stream, GlobalMessage{round, global.flatten()},
                                    transcript, sessions[slot].client_id);
            }

            std::vector<std::optional<UpdateMessage>> updates(n);
            std::size_t got = 0;
            const auto deadline = Clock::now() + round_timeout;
            while (got < n) {
                Incoming item;
                {
                    std::unique_lock lock(mu);
                    if (!cv.wait_until(lock, deadline, [&] { return !queue.empty(); })) {
                        std::string ids;
                        for (std::size_t slot = 0; slot < n; ++slot) {
                            if (!updates[slot]) {
                                ids += ids.empty() ? "" : ", ";
                                ids += sessions[slot].client_id;
                            }
                        }
                        throw Timeout("round " + std::to_string(round) + " updates missing from: " + ids);
                    }
                    item = std::move(queue.front());
                    queue.pop_front();
                }
                Session &session = sessions[item.slot];
                if (item.error) {
                    try {
                        std::rethrow_exception(item.error);
                    } catch (const ConnectionLost &e) {
                        throw ConnectionLost("client " + session.client_id + ": " + e.what());
                    } catch (const Error &e) {
                        throw ProtocolViolation("client " + session.client_id + ": " + e.what());
                    }
                }
                if (transcript) {
                    transcript(session.client_id, '<', item.line);
                }
                if (const auto *u = std::get_if<UpdateMessage>(&*item.message)) {
                    if (u->round < round) {
                        detail::send_logged(session.stream,
                                            ErrorMessage{"stale_round", "server is in round " +
                                                                            std::to_string(round)},
                                            transcript, session.client_id);
                        continue;
                    }
                    if (u->round > round) {
                        detail::send_logged(session.stream, ErrorMessage{"invalid_round", ""},
                                            transcript, session.client_id);
                        throw ProtocolViolation("client " + session.client_id +
                                                " sent an update for future round " +
                                                std::to_string(u->round));
                    }
                    if (u->client_id != session.client_id) {
                        detail::send_logged(session.stream, ErrorMessage{"wrong_client", u->client_id},
                                            transcript, session.client_id);
                        throw ProtocolViolation("client " + session.client_id +
                                                " sent an update labeled " + u->client_id);
                    }
                    if (updates[item.slot]) {
                        detail::send_logged(session.stream, ErrorMessage{"duplicate_update", ""},
                                            transcript, session.client_id);
                        throw ProtocolViolation("client " + session.client_id +
                                                " sent two updates for round " + std::to_string(round));
                    }
                    if (u->params.size() != plan.circuit.angle_count() + 1) {
                        detail::send_logged(session.stream, ErrorMessage{"bad_params", ""}, transcript,
                                            session.client_id);
                        throw ProtocolViolation("client " + session.client_id + " sent " +
                                                std::to_string(u->params.size()) + " parameters");
                    }
                    if (u->weight != planned(item.slot).aggregation_weight) {
                        detail::send_logged(session.stream, ErrorMessage{"weight_mismatch", ""},
                                            transcript, session.client_id);
                        throw ProtocolViolation("client " + session.client_id +
                                                " declared a weight differing from the plan");
                    }
                    updates[item.slot] = *u;
                    ++got;
                } else if (const auto *err = std::get_if<ErrorMessage>(&*item.message)) {
                    throw ProtocolViolation("client " + session.client_id + " reported " + err->code +
                                            ": " + err->detail);
                } else {
                    detail::send_logged(session.stream, ErrorMessage{"unexpected", ""}, transcript,
                                        session.client_id);
                    throw ProtocolViolation("client " + session.client_id + " sent " +
                                            message_type_name(*item.message) + " mid-round");
                }
            }

            std::vector<WeightedUpdate> weighted;
            weighted.reserve(n);
            for (std::size_t slot = 0; slot < n; ++slot) {
                weighted.push_back({updates[slot]->params, planned(slot).aggregation_weight});
            }
            global = ModelParams::unflatten(plan.circuit, aggregate(weighted));

            RoundRecord record;
            record.round_index = round;
            record.global_params = global;
            target_met = plan.target_accuracy.has_value();
            for (std::size_t slot = 0; slot < n; ++slot) {
                const UpdateMessage &u = *updates[slot];
                ClientRoundRecord cr;
                cr.client_id = sessions[slot].client_id;
                cr.best_params = ModelParams::unflatten(plan.circuit, u.params);
                cr.best_validation_accuracy = u.val_accuracy;
                cr.epochs_run = u.epochs_run;
                // The global model is scored on the plan's validation sets;
                // only parameters ever crossed the wire.
                cr.global_confusion =
                    evaluate(plan.circuit, global, to_examples(planned(slot).validation_set));
                cr.global_metrics = compute_metrics(cr.global_confusion);
                if (target_met && !(*cr.global_metrics.accuracy >= *plan.target_accuracy)) {
                    target_met = false;
                }
                record.clients.push_back(std::move(cr));
            }
            records.push_back(std::move(record));
        }

        const DoneMessage done{target_met ? "target_reached" : "rounds_exhausted"};
        for (std::size_t slot = 0; slot < n; ++slot) {
            detail::send_logged(sessions[slot].stream, done, transcript, sessions[slot].client_id);
        }
        stop_readers();
        return records;
    } catch (...) {
        for (Session &s : sessions) {
            try {
                detail::send_logged(s.stream, ErrorMessage{"aborted", "run aborted by server"},
                                    transcript, s.client_id);
            } catch (...) {
                // already disconnected
            }
        }
        stop_readers();
        throw;
    }
}

struct ClientRunResult {
    CircuitSpec circuit;
    TrainingConfig training;
    std::vector<std::pair<std::size_t, LocalTrainResult>> rounds; // (round index, local result)
    std::string done_reason;
};

/// One federated client over the wire: Hello, then for every Global train
/// locally from the received params (seeded per round exactly like the
/// in-process loop) and answer with an Update, until Done. The declared
/// weight rides along for the server to check against its plan.
inline ClientRunResult client_run(const Endpoint &server, const ClientConfig &client,
                                  const Transcript &transcript = {}) {
    client.validate();
    TcpStream stream = TcpStream::connect(server);
    const std::string &id = client.client_id;

    auto receive = [&]() -> Message {
        std::string line = stream.receive_line();
        try {
            Message m = decode_message(line);
            if (transcript) {
                transcript("server", '<', line);
            }
            return m;
        } catch (const MalformedMessage &e) {
            detail::send_logged(stream, ErrorMessage{"malformed", e.what()}, transcript, "server");
            throw;
        }
    };

    detail::send_logged(stream, HelloMessage{wire_protocol_version, id}, transcript, "server");
    Message first = receive();
    if (const auto *err = std::get_if<ErrorMessage>(&first)) {
        throw ProtocolViolation("server rejected " + id + ": " + err->code + " " + err->detail);
    }
    const auto *welcome = std::get_if<WelcomeMessage>(&first);
    if (welcome == nullptr) {
        throw ProtocolViolation("expected welcome, got " + std::string(message_type_name(first)));
    }

    ClientRunResult result;
    result.circuit = welcome->circuit;
    result.training = welcome->training;
    for (;;) {
        const Message m = receive();
        if (const auto *done = std::get_if<DoneMessage>(&m)) {
            result.done_reason = done->reason;
            return result;
        }
        if (const auto *err = std::get_if<ErrorMessage>(&m)) {
            throw ProtocolViolation("server error for " + id + ": " + err->code + " " + err->detail);
        }
        const auto *global = std::get_if<GlobalMessage>(&m);
        if (global == nullptr) {
            detail::send_logged(stream, ErrorMessage{"unexpected", ""}, transcript, "server");
            throw ProtocolViolation("expected global, got " + std::string(message_type_name(m)));
        }
        if (global->params.size() != result.circuit.angle_count() + 1) {
            detail::send_logged(stream, ErrorMessage{"bad_params", ""}, transcript, "server");
            throw ProtocolViolation("global params sized " + std::to_string(global->params.size()));
        }
        ClientConfig seeded = client;
        seeded.rng_seed = round_seed(client.rng_seed, global->round);
        LocalTrainResult local =
            local_train(seeded, result.circuit,
                        ModelParams::unflatten(result.circuit, global->params), result.training);
        detail::send_logged(stream,
                            UpdateMessage{global->round, id, local.best_params.flatten(),
                                          client.aggregation_weight, local.best_validation_accuracy,
                                          local.epochs_run()},
                            transcript, "server");
        result.rounds.emplace_back(global->round, std::move(local));
    }
}

} // namespace fedqnn
