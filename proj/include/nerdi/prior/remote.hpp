#pragma once

#include <chrono>
#include <httplib.h>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "nerdi/prior/denoiser.hpp"
#include "nerdi/prior/wire.hpp"

namespace nerdi::prior {

struct BridgeConfig {
    std::string url = "http://127.0.0.1:8765";
    double timeout_s = 10.0;
    int max_retries = 4;  // extra attempts after a 503
    int backoff_ms = 50;  // doubled after each 503
};

/// Error reported by the bridge or by the transport; `status` is the HTTP status (0 for transport failures).
class BridgeError : public PriorError {
public:
    BridgeError(const std::string& what, int status) : PriorError(what), status_(status) {}
    int status() const { return status_; }

private:
    int status_;
};

/// Thread-safe client for the bridge wire protocol; requests are serialized on one connection.
class BridgeClient {
public:
    explicit BridgeClient(BridgeConfig cfg) : cfg_(std::move(cfg)), http_(cfg_.url) {
        const auto secs = static_cast<time_t>(cfg_.timeout_s);
        const auto usecs = static_cast<time_t>((cfg_.timeout_s - double(secs)) * 1e6);
        http_.set_connection_timeout(secs, usecs);
        http_.set_read_timeout(secs, usecs);
        http_.set_write_timeout(secs, usecs);
        http_.set_default_headers({{wire::kProtoHeader, wire::kProtoVersion}});
    }

    const BridgeConfig& config() const { return cfg_; }

    bool health() {
        std::lock_guard<std::mutex> lock(mu_);
        auto res = http_.Get("/health");
        if (!res || res->status != 200) return false;
        try {
            return wire::json::parse(res->body).value("status", "") == "ok";
        } catch (const std::exception&) {
            return false;
        }
    }

    ad::Tensor<double> text_embed(const std::string& text) {
        return wire::decode_tensor(call("/text_embed", {{"text", text}}).at("embedding"));
    }
    template <class T>
    ad::Tensor<double> denoise(const ad::Tensor<T>& z_t, int t, const ad::Tensor<T>& cond) {
        return wire::decode_tensor(
            call("/denoise", {{"z_t", wire::encode_tensor(z_t)}, {"t", t}, {"cond", wire::encode_tensor(cond)}}).at("eps"));
    }
    template <class T>
    ad::Tensor<double> encode(const ad::Tensor<T>& image) {
        return wire::decode_tensor(call("/encode", {{"image", wire::encode_tensor(image)}}).at("latent"));
    }
    template <class T>
    ad::Tensor<double> decode(const ad::Tensor<T>& latent) {
        return wire::decode_tensor(call("/decode", {{"latent", wire::encode_tensor(latent)}}).at("image"));
    }
    template <class T>
    ad::Tensor<double> depth(const ad::Tensor<T>& image) {
        return wire::decode_tensor(call("/depth", {{"image", wire::encode_tensor(image)}}).at("depth"));
    }
    template <class T>
    std::string caption(const ad::Tensor<T>& image) {
        return call("/caption", {{"image", wire::encode_tensor(image)}}).at("text").template get<std::string>();
    }

    /// POSTs `body` with a fresh request id, retrying 503 with exponential backoff.
    wire::json call(const std::string& path, wire::json body) {
        std::lock_guard<std::mutex> lock(mu_);
        const std::string id = "req-" + std::to_string(++counter_);
        body["id"] = id;
        const std::string payload = body.dump();
        int delay = cfg_.backoff_ms;
        for (int attempt = 0;; ++attempt) {
            auto res = http_.Post(path, payload, "application/json");
            if (!res) {
                throw BridgeError("bridge " + path + ": " + httplib::to_string(res.error()) + " (" + cfg_.url + ")", 0);
            }
            if (res->status == 503 && attempt < cfg_.max_retries) {
                std::this_thread::sleep_for(std::chrono::milliseconds(delay));
                delay *= 2;
                continue;
            }
            wire::json reply;
            try {
                reply = wire::json::parse(res->body);
            } catch (const std::exception&) {
                throw BridgeError("bridge " + path + ": non-JSON response (HTTP " + std::to_string(res->status) + ")",
                                  res->status);
            }
            if (res->status != 200 || reply.contains("error")) {
                throw BridgeError("bridge " + path + ": HTTP " + std::to_string(res->status) + " " +
                                      reply.value("error", std::string("error")) + ": " +
                                      reply.value("message", std::string("")),
                                  res->status);
            }
            if (reply.value("id", std::string()) != id) {
                throw BridgeError("bridge " + path + ": response does not echo request id " + id, res->status);
            }
            return reply;
        }
    }

private:
    BridgeConfig cfg_;
    httplib::Client http_;
    std::mutex mu_;
    std::uint64_t counter_ = 0;
};

/// Denoiser served by the bridge. Values only: gradients do not flow through it.
template <class T>
class RemoteDenoiser final : public Denoiser<T> {
public:
    explicit RemoteDenoiser(std::shared_ptr<BridgeClient> client) : client_(std::move(client)) {}

    ad::Var<T> predict(const ad::Var<T>& z_t, int t, const ad::Var<T>& cond) const override {
        auto eps = client_->denoise(z_t.value(), t, cond.value());
        if (eps.shape() != z_t.shape()) {
            throw BridgeError("bridge /denoise returned shape " + ad::shape_str(eps.shape()) + " for input " +
                                  ad::shape_str(z_t.shape()),
                              200);
        }
        return ad::Var<T>::constant(eps.template cast<T>());
    }
    bool differentiable() const override { return false; }
    std::string name() const override { return "remote"; }

private:
    std::shared_ptr<BridgeClient> client_;
};

/// Autoencoder served by the bridge (values only).
template <class T>
class RemoteCodec final : public LatentCodec<T> {
public:
    explicit RemoteCodec(std::shared_ptr<BridgeClient> client) : client_(std::move(client)) {}
    ad::Var<T> encode(const ad::Var<T>& image) const override {
        return ad::Var<T>::constant(client_->encode(image.value()).template cast<T>());
    }
    ad::Var<T> decode(const ad::Var<T>& latent) const override {
        return ad::Var<T>::constant(client_->decode(latent.value()).template cast<T>());
    }
    bool differentiable() const override { return false; }

private:
    std::shared_ptr<BridgeClient> client_;
};

}  // namespace nerdi::prior
