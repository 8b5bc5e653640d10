#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "mpox/core/digest.hpp"
#include "mpox/core/error.hpp"

namespace mpox::nn {

/// Storage precision of the tensors inside a container.
enum class Precision { fp32, fp16 };

inline const char* to_string(Precision p) { return p == Precision::fp32 ? "fp32" : "fp16"; }

inline Precision parse_precision(const std::string& s) {
    if (s == "fp32" || s == "f32") return Precision::fp32;
    if (s == "fp16" || s == "f16") return Precision::fp16;
    fail(ErrorCode::parse, "unknown precision '" + s + "'");
}

inline constexpr char kContainerMagic[8] = {'M', 'P', 'X', 'N', 'E', 'T', '0', '1'};

/// JSON header + raw little-endian tensor payload. Tensors are referenced from
/// the header by {shape, offset, dtype}; offsets are bytes into the payload.
struct Container {
    nlohmann::json header;
    std::vector<std::uint8_t> payload;

    /// Append a tensor to the payload and return its header descriptor.
    nlohmann::json put(std::span<const float> values, const std::vector<int>& shape, Precision precision) {
        nlohmann::json desc{{"shape", shape}, {"offset", payload.size()}, {"dtype", precision == Precision::fp32 ? "f32" : "f16"}};
        if (precision == Precision::fp32) {
            const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
            payload.insert(payload.end(), p, p + values.size() * sizeof(float));
        } else {
            const std::size_t start = payload.size();
            payload.resize(start + values.size() * sizeof(std::uint16_t));
            for (std::size_t i = 0; i < values.size(); ++i) {
                const std::uint16_t bits = Eigen::numext::bit_cast<std::uint16_t>(Eigen::half(values[i]));
                std::memcpy(payload.data() + start + 2 * i, &bits, 2);
            }
        }
        return desc;
    }

    /// Read a tensor back as fp32, dequantising fp16 storage.
    std::vector<float> get(const nlohmann::json& desc, std::vector<int>* shape_out = nullptr) const {
        std::vector<int> shape = desc.at("shape").get<std::vector<int>>();
        std::size_t count = 1;
        for (int d : shape) {
            require(d >= 0, ErrorCode::parse, "negative tensor dimension");
            count *= static_cast<std::size_t>(d);
        }
        const auto offset = desc.at("offset").get<std::size_t>();
        const auto dtype = desc.at("dtype").get<std::string>();
        std::vector<float> out(count);
        if (dtype == "f32") {
            require(offset + count * 4 <= payload.size(), ErrorCode::parse, "tensor extends past payload");
            std::memcpy(out.data(), payload.data() + offset, count * 4);
        } else if (dtype == "f16") {
            require(offset + count * 2 <= payload.size(), ErrorCode::parse, "tensor extends past payload");
            for (std::size_t i = 0; i < count; ++i) {
                std::uint16_t bits;
                std::memcpy(&bits, payload.data() + offset + 2 * i, 2);
                out[i] = static_cast<float>(Eigen::numext::bit_cast<Eigen::half>(bits));
            }
        } else {
            fail(ErrorCode::parse, "unsupported tensor dtype " + dtype);
        }
        if (shape_out) *shape_out = std::move(shape);
        return out;
    }

    std::vector<std::uint8_t> serialize() const {
        const std::string text = header.dump();
        std::vector<std::uint8_t> out(16 + text.size() + payload.size());
        std::memcpy(out.data(), kContainerMagic, 8);
        const std::uint64_t len = text.size();
        for (std::size_t i = 0; i < 8; ++i) out[8 + i] = static_cast<std::uint8_t>(len >> (8 * i));
        if (!text.empty()) std::memcpy(out.data() + 16, text.data(), text.size());
        if (!payload.empty()) std::memcpy(out.data() + 16 + text.size(), payload.data(), payload.size());
        return out;
    }

    static Container parse(std::span<const std::uint8_t> bytes) {
        require(bytes.size() >= 16 && std::memcmp(bytes.data(), kContainerMagic, 8) == 0, ErrorCode::parse,
                "not a model container (bad magic)");
        std::uint64_t len = 0;
        for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(bytes[8 + static_cast<std::size_t>(i)]) << (8 * i);
        require(16 + len <= bytes.size(), ErrorCode::parse, "container header truncated");
        Container c;
        try {
            c.header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCode::parse, std::string("container header is not valid JSON: ") + e.what());
        }
        c.payload.assign(bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len), bytes.end());
        return c;
    }

    static Container load(const std::string& path) { return parse(read_file_bytes(path)); }
};

}  // namespace mpox::nn
