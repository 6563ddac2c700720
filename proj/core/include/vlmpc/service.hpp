#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace vlmpc {

/// Body and round-trip time of one service call.
struct ServiceReply {
    std::string body;
    double latency_s = 0.0;
};

/// Request/response channel to an external JSON service.
class Transport {
public:
    virtual ~Transport() = default;
    /// Throws TransportError when the service cannot produce a reply.
    virtual ServiceReply post(std::string_view route, const std::string& body) = 0;
};

struct HttpTransportOptions {
    std::string base_url;  ///< scheme://host[:port][/prefix]
    double timeout_s = 30.0;
    int retries = 1;
    std::vector<std::pair<std::string, std::string>> headers;
};

class HttpTransport : public Transport {
public:
    explicit HttpTransport(HttpTransportOptions options);
    ServiceReply post(std::string_view route, const std::string& body) override;

private:
    HttpTransportOptions options_;
    std::string origin_;
    std::string prefix_;
};

/// Hex SHA-256 of route and body; the cassette lookup key.
std::string request_hash(std::string_view route, std::string_view body);

std::string base64_encode(std::span<const unsigned char> bytes);

struct CassetteEntry {
    std::string hash;
    std::string route;
    std::string request;
    std::string response;
    double latency_s = 0.0;
    std::optional<std::string> error;  ///< replayed as a TransportError
};

/// Recorded service interactions. Stored as JSON:
///   {"version": 1, "interactions": [{hash, route, request, response, latency_s, error?}]}
class Cassette {
public:
    static Cassette load(const std::filesystem::path& path);
    static Cassette parse(std::string_view text);
    void save(const std::filesystem::path& path) const;
    std::string dump() const;

    void add(CassetteEntry entry);
    const std::vector<CassetteEntry>& entries() const { return entries_; }

private:
    std::vector<CassetteEntry> entries_;
};

/// Serves recorded replies. Identical requests are answered in recording
/// order; an unknown or exhausted request raises CassetteMismatch.
class ReplayTransport : public Transport {
public:
    explicit ReplayTransport(const Cassette& cassette);
    ServiceReply post(std::string_view route, const std::string& body) override;

private:
    std::mutex mutex_;
    std::map<std::string, std::vector<CassetteEntry>> by_hash_;
    std::map<std::string, std::size_t> cursor_;
};

/// Forwards to another transport and records every exchange, failures included.
class RecordingTransport : public Transport {
public:
    RecordingTransport(Transport& inner, Cassette& sink);
    ServiceReply post(std::string_view route, const std::string& body) override;

private:
    Transport& inner_;
    Cassette& sink_;
    std::mutex mutex_;
};

}  // namespace vlmpc
