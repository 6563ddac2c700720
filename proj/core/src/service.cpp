#include "vlmpc/service.hpp"

#include <chrono>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>
#include <openssl/evp.h>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "vlmpc/error.hpp"

namespace vlmpc {

using nlohmann::json;

namespace {

std::pair<std::string, std::string> split_url(const std::string& url)
{
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw ConfigError(fmt::format("service URL '{}' has no scheme", url));
    }
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
        return {url, ""};
    }
    std::string prefix = url.substr(path_start);
    while (!prefix.empty() && prefix.back() == '/') {
        prefix.pop_back();
    }
    return {url.substr(0, path_start), prefix};
}

}  // namespace

HttpTransport::HttpTransport(HttpTransportOptions options) : options_(std::move(options))
{
    std::tie(origin_, prefix_) = split_url(options_.base_url);
}

ServiceReply HttpTransport::post(std::string_view route, const std::string& body)
{
    const std::string path = prefix_ + std::string(route);
    httplib::Headers headers;
    for (const auto& [k, v] : options_.headers) {
        headers.emplace(k, v);
    }
    const auto sec = static_cast<time_t>(options_.timeout_s);
    const auto usec = static_cast<time_t>((options_.timeout_s - static_cast<double>(sec)) * 1e6);

    std::string last_error;
    for (int attempt = 0; attempt <= options_.retries; ++attempt) {
        httplib::Client client(origin_);
        client.set_connection_timeout(sec, usec);
        client.set_read_timeout(sec, usec);
        client.set_write_timeout(sec, usec);

        const auto start = std::chrono::steady_clock::now();
        auto res = client.Post(path, headers, body, "application/json");
        const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (!res) {
            last_error = fmt::format("{} {}: {}", origin_, path, httplib::to_string(res.error()));
            continue;
        }
        if (res->status < 200 || res->status >= 300) {
            last_error = fmt::format("{} {}: HTTP {}", origin_, path, res->status);
            continue;
        }
        return {res->body, elapsed};
    }
    throw TransportError(fmt::format("request failed after {} attempt(s): {}", options_.retries + 1, last_error));
}

std::string request_hash(std::string_view route, std::string_view body)
{
    std::string material;
    material.reserve(route.size() + body.size() + 1);
    material.append(route);
    material.push_back('\n');
    material.append(body);

    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int length = 0;
    if (EVP_Digest(material.data(), material.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
        throw Error("SHA-256 digest failed");
    }
    std::string hex;
    hex.reserve(2 * length);
    for (unsigned int i = 0; i < length; ++i) {
        hex += fmt::format("{:02x}", digest[i]);
    }
    return hex;
}

std::string base64_encode(std::span<const unsigned char> bytes)
{
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int written = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(written));
    return out;
}

Cassette Cassette::parse(std::string_view text)
{
    Cassette cassette;
    try {
        const json doc = json::parse(text);
        for (const auto& item : doc.at("interactions")) {
            CassetteEntry entry;
            entry.route = item.at("route").get<std::string>();
            entry.request = item.at("request").get<std::string>();
            entry.hash = item.value("hash", request_hash(entry.route, entry.request));
            entry.response = item.value("response", std::string{});
            entry.latency_s = item.value("latency_s", 0.0);
            if (item.contains("error") && !item["error"].is_null()) {
                entry.error = item["error"].get<std::string>();
            }
            cassette.entries_.push_back(std::move(entry));
        }
    } catch (const json::exception& e) {
        throw ParseError(fmt::format("cassette: {}", e.what()));
    }
    return cassette;
}

Cassette Cassette::load(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ParseError(fmt::format("cannot open cassette '{}'", path.string()));
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

std::string Cassette::dump() const
{
    json items = json::array();
    for (const auto& e : entries_) {
        json item = {{"hash", e.hash}, {"route", e.route}, {"request", e.request},
                     {"response", e.response}, {"latency_s", e.latency_s}};
        if (e.error) {
            item["error"] = *e.error;
        }
        items.push_back(std::move(item));
    }
    return json{{"version", 1}, {"interactions", items}}.dump(2) + "\n";
}

void Cassette::save(const std::filesystem::path& path) const
{
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) {
            throw Error(fmt::format("cannot write cassette '{}'", path.string()));
        }
        out << dump();
    }
    std::filesystem::rename(tmp, path);
}

void Cassette::add(CassetteEntry entry)
{
    if (entry.hash.empty()) {
        entry.hash = request_hash(entry.route, entry.request);
    }
    entries_.push_back(std::move(entry));
}

ReplayTransport::ReplayTransport(const Cassette& cassette)
{
    for (const auto& e : cassette.entries()) {
        by_hash_[e.hash].push_back(e);
    }
}

ServiceReply ReplayTransport::post(std::string_view route, const std::string& body)
{
    const std::string hash = request_hash(route, body);
    std::lock_guard lock(mutex_);
    auto it = by_hash_.find(hash);
    std::size_t& cursor = cursor_[hash];
    if (it == by_hash_.end() || cursor >= it->second.size()) {
        throw CassetteMismatch(fmt::format("no recorded response for request {} on {} ({} bytes, begins '{}')",
                                           hash, route, body.size(), body.substr(0, 80)));
    }
    const CassetteEntry& entry = it->second[cursor++];
    if (entry.error) {
        throw TransportError(*entry.error);
    }
    return {entry.response, entry.latency_s};
}

RecordingTransport::RecordingTransport(Transport& inner, Cassette& sink) : inner_(inner), sink_(sink)
{
}

ServiceReply RecordingTransport::post(std::string_view route, const std::string& body)
{
    CassetteEntry entry;
    entry.route = std::string(route);
    entry.request = body;
    try {
        ServiceReply reply = inner_.post(route, body);
        entry.response = reply.body;
        entry.latency_s = reply.latency_s;
        std::lock_guard lock(mutex_);
        sink_.add(std::move(entry));
        return reply;
    } catch (const TransportError& e) {
        entry.error = e.what();
        std::lock_guard lock(mutex_);
        sink_.add(std::move(entry));
        throw;
    }
}

}  // namespace vlmpc
