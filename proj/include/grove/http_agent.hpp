#pragma once

#include <grove/agent.hpp>
#include <grove/error.hpp>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

namespace grove {

struct AgentConfig {
    std::string endpoint_url = "http://127.0.0.1:8000/v1/chat/completions";
    std::string model_name = "default";
    std::optional<double> temperature;
    int max_retries = 3;
    std::chrono::milliseconds timeout{120000};
    std::string auth_token_env = "GROVE_API_KEY";
    int max_in_flight = 0; // 0 = unlimited

    void validate() const
    {
        if (max_retries < 0)
            fail(ErrorCode::PreconditionViolation, "max_retries must be >= 0");
        if (timeout.count() <= 0)
            fail(ErrorCode::PreconditionViolation, "timeout must be positive");
    }
};

struct HttpRequest {
    std::string url;
    std::string body;
    std::vector<std::pair<std::string, std::string>> headers;
    std::chrono::milliseconds timeout{0};
};

struct HttpReply {
    int status = 0;
    std::string body;
};

/// Performs one POST. Throws Error{TransportError | TimeoutError} on failure.
using HttpTransport = std::function<HttpReply(const HttpRequest&)>;

namespace detail {

struct SplitUrl {
    std::string origin; // scheme://host[:port]
    std::string path;
};

inline SplitUrl split_url(const std::string& url)
{
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        fail(ErrorCode::TransportError, "endpoint url lacks a scheme: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos)
        return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

inline HttpReply httplib_post(const HttpRequest& req)
{
    auto [origin, path] = split_url(req.url);
    httplib::Client client(origin);
    if (!client.is_valid())
        fail(ErrorCode::TransportError, "unsupported endpoint " + origin);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(req.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(req.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());

    httplib::Headers headers;
    for (const auto& [k, v] : req.headers)
        headers.emplace(k, v);

    const auto started = std::chrono::steady_clock::now();
    auto res = client.Post(path, headers, req.body, "application/json");
    if (!res) {
        const auto elapsed = std::chrono::steady_clock::now() - started;
        const auto err = res.error();
        if (err == httplib::Error::ConnectionTimeout ||
            (err == httplib::Error::Read && elapsed >= req.timeout))
            fail(ErrorCode::TimeoutError, "no reply from " + req.url + " within " +
                                              std::to_string(req.timeout.count()) + " ms");
        fail(ErrorCode::TransportError, req.url + ": " + httplib::to_string(err));
    }
    return {res->status, res->body};
}

} // namespace detail

/// Chat-completion client: one user message per prompt, raw text back.
class HttpChatModel : public LanguageModel {
public:
    explicit HttpChatModel(AgentConfig config, HttpTransport transport = detail::httplib_post)
        : config_(std::move(config)), transport_(std::move(transport))
    {
        config_.validate();
    }

    const AgentConfig& config() const noexcept { return config_; }

    std::string complete(const std::string& prompt) override
    {
        const char* token = std::getenv(config_.auth_token_env.c_str());
        if (!token || !*token)
            fail(ErrorCode::AuthError, "environment variable " + config_.auth_token_env + " is not set");

        nlohmann::json body;
        body["model"] = config_.model_name;
        body["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", prompt}}});
        if (config_.temperature)
            body["temperature"] = *config_.temperature;

        HttpRequest req{config_.endpoint_url,
                        body.dump(),
                        {{"Authorization", std::string("Bearer ") + token}},
                        config_.timeout};

        InFlightSlot slot(*this);
        HttpReply reply = transport_(req);
        if (reply.status == 401 || reply.status == 403)
            fail(ErrorCode::AuthError, "endpoint rejected credentials (HTTP " + std::to_string(reply.status) + ")");
        if (reply.status < 200 || reply.status >= 300)
            fail(ErrorCode::TransportError, "HTTP " + std::to_string(reply.status) + ": " + reply.body.substr(0, 200));
        try {
            auto j = nlohmann::json::parse(reply.body);
            return j.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCode::TransportError, std::string("unexpected completion payload: ") + e.what());
        }
    }

private:
    class InFlightSlot {
    public:
        explicit InFlightSlot(HttpChatModel& m) : m_(m)
        {
            if (m_.config_.max_in_flight <= 0)
                return;
            std::unique_lock lock(m_.mu_);
            m_.cv_.wait(lock, [&] { return m_.in_flight_ < m_.config_.max_in_flight; });
            ++m_.in_flight_;
            held_ = true;
        }
        ~InFlightSlot()
        {
            if (!held_)
                return;
            {
                std::lock_guard lock(m_.mu_);
                --m_.in_flight_;
            }
            m_.cv_.notify_one();
        }
        InFlightSlot(const InFlightSlot&) = delete;
        InFlightSlot& operator=(const InFlightSlot&) = delete;

    private:
        HttpChatModel& m_;
        bool held_ = false;
    };

    AgentConfig config_;
    HttpTransport transport_;
    std::mutex mu_;
    std::condition_variable cv_;
    int in_flight_ = 0;
};

} // namespace grove
