#pragma once

#include <boost/archive/iterators/base64_from_binary.hpp>
#include <boost/archive/iterators/binary_from_base64.hpp>
#include <boost/archive/iterators/transform_width.hpp>
#include <cstring>
#include <json.hpp>
#include <string>
#include <vector>

#include "nerdi/autodiff/tensor.hpp"
#include "nerdi/error.hpp"

namespace nerdi::prior::wire {

using json = nlohmann::json;

constexpr const char* kProtoHeader = "X-NeRDi-Proto";
constexpr const char* kProtoVersion = "1";

inline std::string base64_encode(const std::string& bytes) {
    using namespace boost::archive::iterators;
    using It = base64_from_binary<transform_width<std::string::const_iterator, 6, 8>>;
    std::string out(It(bytes.begin()), It(bytes.end()));
    out.append((3 - bytes.size() % 3) % 3, '=');
    return out;
}

inline std::string base64_decode(std::string text) {
    using namespace boost::archive::iterators;
    using It = transform_width<binary_from_base64<std::string::const_iterator>, 8, 6>;
    if (text.size() % 4 != 0) throw FormatError("base64: length is not a multiple of 4");
    std::size_t pad = 0;
    while (!text.empty() && text.back() == '=') {
        text.pop_back();
        ++pad;
    }
    if (pad > 2) throw FormatError("base64: too much padding");
    for (char c : text) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '+' || c == '/')) {
            throw FormatError("base64: invalid character");
        }
    }
    // Zero-fill to a whole quantum, decode, then drop the padding bytes.
    text.append(pad, 'A');
    std::string out(It(text.begin()), It(text.end()));
    out.resize(out.size() - pad);
    return out;
}

/// {"dtype": "f32", "shape": [...], "data": base64 of little-endian f32, row-major}
template <class T>
json encode_tensor(const ad::Tensor<T>& t) {
    std::string bytes(t.numel() * 4, '\0');
    for (std::size_t i = 0; i < t.numel(); ++i) {
        const float f = static_cast<float>(t[i]);
        std::memcpy(bytes.data() + 4 * i, &f, 4);
    }
    return json{{"dtype", "f32"}, {"shape", t.shape()}, {"data", base64_encode(bytes)}};
}

/// Malformed payloads throw FormatError; a byte count that disagrees with the shape throws ShapeError.
inline ad::Tensor<double> decode_tensor(const json& j) {
    if (!j.is_object() || !j.contains("dtype") || !j.contains("shape") || !j.contains("data")) {
        throw FormatError("tensor payload needs dtype, shape and data");
    }
    if (!j["dtype"].is_string() || j["dtype"] != "f32") throw FormatError("tensor payload: dtype must be \"f32\"");
    if (!j["shape"].is_array() || !j["data"].is_string()) throw FormatError("tensor payload: bad shape or data field");
    ad::Shape shape;
    for (const auto& d : j["shape"]) {
        if (!d.is_number_integer() || d.get<long long>() < 0) throw FormatError("tensor payload: shape entries must be non-negative integers");
        shape.push_back(d.get<std::size_t>());
    }
    const std::string bytes = base64_decode(j["data"].get<std::string>());
    const std::size_t n = ad::shape_numel(shape);
    if (bytes.size() != 4 * n) {
        throw ShapeError("tensor payload: " + std::to_string(bytes.size()) + " bytes for shape " + ad::shape_str(shape));
    }
    ad::Tensor<double> t(shape);
    for (std::size_t i = 0; i < n; ++i) {
        float f;
        std::memcpy(&f, bytes.data() + 4 * i, 4);
        t[i] = f;
    }
    return t;
}

}  // namespace nerdi::prior::wire
