#pragma once

#include <atomic>
#include <chrono>
#include <httplib.h>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "nerdi/prior/denoiser.hpp"
#include "nerdi/prior/wire.hpp"
#include "nerdi/rng.hpp"

namespace nerdi::prior {

/// In-process stand-in for the bridge service. Denoises with the analytic Gaussian prior,
/// uses the identity autoencoder, hashes text to a normal embedding and estimates depth
/// from luminance. Captioning is unsupported.
class MockBridge {
public:
    struct Options {
        NoiseSchedule schedule = default_schedule();
        std::optional<ad::Tensor<double>> mean;  // defaults to 0.5 everywhere
        double sigma0 = 0.25;
        std::size_t embed_dim = 16;
    };

    MockBridge() : MockBridge(Options{}) {}
    explicit MockBridge(Options opt) : opt_(std::move(opt)) {
        server_.Get("/health", [](const httplib::Request&, httplib::Response& res) {
            res.set_content(R"({"status":"ok"})", "application/json");
        });
        route("/text_embed", [this](const wire::json& req) {
            const std::string text = req.at("text").get<std::string>();
            std::uint64_t h = 1469598103934665603ULL;
            for (unsigned char c : text) h = (h ^ c) * 1099511628211ULL;
            Rng rng(h);
            ad::Tensor<double> e({1, opt_.embed_dim});
            for (auto& v : e.data()) v = rng.normal();
            return wire::json{{"embedding", wire::encode_tensor(e)}};
        });
        route("/denoise", [this](const wire::json& req) {
            const auto z = wire::decode_tensor(req.at("z_t"));
            const auto cond = wire::decode_tensor(req.at("cond"));
            if (cond.rank() != 2) throw ShapeError("cond must be [K, D]");
            const int t = req.at("t").get<int>();
            if (t < 0 || t >= opt_.schedule.steps()) throw std::out_of_range("t out of range");
            ad::Tensor<double> mu = opt_.mean ? *opt_.mean : ad::Tensor<double>(z.shape(), 0.5);
            const auto eps = analytic_gaussian_eps(ad::Var<double>::constant(z), opt_.schedule.alpha_bar_at(t),
                                                   ad::Var<double>::constant(mu), opt_.sigma0);
            return wire::json{{"eps", wire::encode_tensor(eps.value())}};
        });
        route("/encode", [](const wire::json& req) {
            return wire::json{{"latent", wire::encode_tensor(wire::decode_tensor(req.at("image")))}};
        });
        route("/decode", [](const wire::json& req) {
            return wire::json{{"image", wire::encode_tensor(wire::decode_tensor(req.at("latent")))}};
        });
        route("/depth", [](const wire::json& req) {
            const auto img = wire::decode_tensor(req.at("image"));
            if (img.rank() != 3 || img.dim(2) != 3) throw ShapeError("image must be [H, W, 3]");
            ad::Tensor<double> d({img.dim(0), img.dim(1)});
            for (std::size_t i = 0; i < d.numel(); ++i) {
                d[i] = 1.0 - (0.299 * img[3 * i] + 0.587 * img[3 * i + 1] + 0.114 * img[3 * i + 2]);
            }
            return wire::json{{"depth", wire::encode_tensor(d)}};
        });
        route("/caption", [](const wire::json&) -> wire::json { throw Unsupported(); });

        port_ = server_.bind_to_any_port("127.0.0.1");
        if (port_ <= 0) throw std::runtime_error("mock bridge: cannot bind a port");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~MockBridge() {
        server_.stop();
        if (thread_.joinable()) thread_.join();
    }
    MockBridge(const MockBridge&) = delete;
    MockBridge& operator=(const MockBridge&) = delete;

    int port() const { return port_; }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

    /// The next `n` POSTs answer 503.
    void set_busy(int n) { busy_ = n; }
    /// Every POST sleeps this long before answering.
    void set_delay_ms(int ms) { delay_ms_ = ms; }
    /// Replies carry a wrong request id.
    void set_drop_id(bool on) { drop_id_ = on; }
    int requests() const { return requests_; }

private:
    struct Unsupported {};

    template <class Fn>
    void route(const std::string& path, Fn fn) {
        server_.Post(path, [this, fn, path](const httplib::Request& req, httplib::Response& res) {
            ++requests_;
            res.set_header(wire::kProtoHeader, wire::kProtoVersion);
            if (delay_ms_ > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms_.load()));
            std::string id;
            auto reply = [&](int status, wire::json body) {
                body["id"] = drop_id_ ? std::string("stale") : id;
                res.status = status;
                res.set_content(body.dump(), "application/json");
            };
            if (busy_ > 0) {
                --busy_;
                return reply(503, {{"error", "busy"}, {"message", "try again"}});
            }
            wire::json body;
            try {
                body = wire::json::parse(req.body);
                id = body.value("id", std::string());
            } catch (const std::exception& e) {
                return reply(400, {{"error", "bad_request"}, {"message", e.what()}});
            }
            try {
                reply(200, fn(body));
            } catch (const Unsupported&) {
                reply(500, {{"error", "unsupported"}, {"message", path + " is not available"}});
            } catch (const ShapeError& e) {
                reply(422, {{"error", "shape"}, {"message", e.what()}});
            } catch (const std::out_of_range& e) {
                reply(422, {{"error", "range"}, {"message", e.what()}});
            } catch (const std::exception& e) {
                reply(400, {{"error", "bad_request"}, {"message", e.what()}});
            }
        });
    }

    Options opt_;
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<int> busy_{0}, delay_ms_{0}, requests_{0};
    std::atomic<bool> drop_id_{false};
};

}  // namespace nerdi::prior
