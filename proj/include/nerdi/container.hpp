#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "nerdi/autodiff/tensor.hpp"
#include "nerdi/error.hpp"

namespace nerdi {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

/// Binary tensor container shared by field checkpoints ("NRDF"), embedding tables
/// ("NRDE") and denoiser weights ("NRDT").
///
/// Layout: magic[4] | u32 version | u32 n, config text (n bytes of "key=value\n")
///         | u32 tensor count | per tensor: u32 rank, u64 dims[rank], payload.
/// Payload element type is the config key "dtype" (f32 or f64).
struct Container {
    static constexpr std::uint32_t kVersion = 1;

    std::string magic;
    std::map<std::string, std::string> config;
    std::vector<ad::Shape> shapes;
    std::vector<std::vector<double>> payloads;

    const std::string& get(const std::string& key) const {
        auto it = config.find(key);
        if (it == config.end()) throw FormatError(magic + " container: missing config key '" + key + "'");
        return it->second;
    }
    bool has(const std::string& key) const { return config.count(key) > 0; }

    template <class T>
    void add(const ad::Tensor<T>& t) {
        shapes.push_back(t.shape());
        payloads.emplace_back(t.storage().begin(), t.storage().end());
    }

    template <class T>
    ad::Tensor<T> tensor(std::size_t i) const {
        if (i >= shapes.size()) throw FormatError(magic + " container: tensor index out of range");
        return ad::Tensor<T>(shapes[i], std::vector<T>(payloads[i].begin(), payloads[i].end()));
    }
};

namespace detail {

template <class V>
void put(std::string& out, V v) {
    char buf[sizeof(V)];
    std::memcpy(buf, &v, sizeof(V));
    out.append(buf, sizeof(V));
}

class Reader {
public:
    Reader(const std::string& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

    template <class V>
    V get() {
        need(sizeof(V));
        V v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(V));
        pos_ += sizeof(V);
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw FormatError(what_ + ": truncated file");
    }
    const std::string& bytes_;
    std::string what_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_container(const Container& c) {
    if (c.magic.size() != 4) throw FormatError("container magic must be 4 bytes");
    const std::string dtype = c.config.count("dtype") ? c.config.at("dtype") : "f32";
    if (dtype != "f32" && dtype != "f64") throw FormatError("container: unsupported dtype " + dtype);

    std::string text;
    for (const auto& [k, v] : c.config) {
        if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
            throw FormatError("container: config entry '" + k + "' contains a reserved character");
        }
        text += k + "=" + v + "\n";
    }
    std::string out = c.magic;
    detail::put<std::uint32_t>(out, Container::kVersion);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    out += text;
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(c.shapes.size()));
    for (std::size_t i = 0; i < c.shapes.size(); ++i) {
        if (ad::shape_numel(c.shapes[i]) != c.payloads[i].size()) throw FormatError("container: shape/payload mismatch");
        detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(c.shapes[i].size()));
        for (auto d : c.shapes[i]) detail::put<std::uint64_t>(out, d);
        for (double v : c.payloads[i]) {
            if (dtype == "f32") {
                detail::put<float>(out, static_cast<float>(v));
            } else {
                detail::put<double>(out, v);
            }
        }
    }
    return out;
}

inline Container decode_container(const std::string& bytes, const std::string& expected_magic, const std::string& what) {
    detail::Reader r(bytes, what);
    Container c;
    c.magic = r.str(4);
    if (c.magic != expected_magic) {
        throw FormatError(what + ": bad magic bytes (expected " + expected_magic + ")");
    }
    const auto version = r.get<std::uint32_t>();
    if (version != Container::kVersion) {
        throw FormatError(what + ": unsupported version " + std::to_string(version));
    }
    const std::string text = r.str(r.get<std::uint32_t>());
    std::size_t pos = 0;
    while (pos < text.size()) {
        const auto nl = text.find('\n', pos);
        const auto line = text.substr(pos, nl - pos);
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError(what + ": malformed config line '" + line + "'");
        c.config[line.substr(0, eq)] = line.substr(eq + 1);
        pos = nl == std::string::npos ? text.size() : nl + 1;
    }
    const std::string dtype = c.config.count("dtype") ? c.config["dtype"] : "f32";
    if (dtype != "f32" && dtype != "f64") throw FormatError(what + ": unsupported dtype " + dtype);

    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto rank = r.get<std::uint32_t>();
        if (rank > 8) throw FormatError(what + ": implausible tensor rank");
        ad::Shape shape(rank);
        for (auto& d : shape) d = r.get<std::uint64_t>();
        const std::size_t n = ad::shape_numel(shape);
        if (n * (dtype == "f32" ? 4 : 8) > bytes.size()) throw FormatError(what + ": truncated file");
        std::vector<double> data(n);
        for (auto& v : data) v = dtype == "f32" ? static_cast<double>(r.get<float>()) : r.get<double>();
        c.shapes.push_back(std::move(shape));
        c.payloads.push_back(std::move(data));
    }
    if (!r.done()) throw FormatError(what + ": trailing bytes");
    return c;
}

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + path);
}

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    return std::string(std::istreambuf_iterator<char>(f), {});
}

inline void save_container(const std::string& path, const Container& c) { write_file(path, encode_container(c)); }

inline Container load_container(const std::string& path, const std::string& magic) {
    return decode_container(read_file(path), magic, path);
}

}  // namespace nerdi
