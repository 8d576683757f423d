#pragma once

// Binary checkpoint container:
//   "GPDN" | version u32 | count u32 | per tensor:
//   name length u16 | UTF-8 name | rank u8 | dims u32 × rank | float64 payload
// All integers and floats little-endian.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "gpdnn/error.hpp"
#include "gpdnn/tensor.hpp"

namespace gpdnn {

struct NamedTensor {
    std::string name;
    Tensor value;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void put_le(std::vector<unsigned char>& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    out.insert(out.end(), bytes, bytes + sizeof(T));
}

class ByteReader {
public:
    ByteReader(const std::vector<unsigned char>& bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

    template <class T>
    T get() {
        need(sizeof(T));
        unsigned char raw[sizeof(T)];
        std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
        pos_ += sizeof(T);
        T value;
        std::memcpy(&value, raw, sizeof(T));
        return value;
    }

    std::string get_string(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw DataError(source_ + ": truncated checkpoint");
    }

    const std::vector<unsigned char>& bytes_;
    std::string source_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const std::vector<NamedTensor>& tensors) {
    std::vector<unsigned char> out = {'G', 'P', 'D', 'N'};
    detail::put_le<std::uint32_t>(out, kCheckpointVersion);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, value] : tensors) {
        if (name.size() > 0xFFFF) throw ContractError("checkpoint: tensor name too long");
        if (value.rank() > 0xFF) throw ContractError("checkpoint: tensor rank too large");
        detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        out.push_back(static_cast<unsigned char>(value.rank()));
        for (std::size_t d : value.shape()) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        for (double v : value.data()) detail::put_le<double>(out, v);
    }
    return out;
}

inline std::vector<NamedTensor> decode_checkpoint(const std::vector<unsigned char>& bytes, const std::string& source) {
    detail::ByteReader in(bytes, source);
    if (in.get_string(4) != "GPDN") throw DataError(source + ": not a checkpoint (bad magic)");
    const auto version = in.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw DataError(source + ": unsupported checkpoint version " + std::to_string(version));
    }
    const auto count = in.get<std::uint32_t>();
    std::vector<NamedTensor> tensors;
    tensors.reserve(count);
    for (std::uint32_t t = 0; t < count; ++t) {
        const auto name_len = in.get<std::uint16_t>();
        std::string name = in.get_string(name_len);
        const auto rank = in.get<std::uint8_t>();
        Shape shape(rank);
        for (auto& d : shape) d = in.get<std::uint32_t>();
        std::vector<double> values(shape_size(shape));
        for (double& v : values) v = in.get<double>();
        tensors.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
    }
    if (!in.done()) throw DataError(source + ": trailing bytes after checkpoint");
    return tensors;
}

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + path + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing '" + path + "'");
}

inline void save_tensors(const std::string& path, const std::vector<NamedTensor>& tensors) {
    write_file_bytes(path, encode_checkpoint(tensors));
}

inline std::vector<NamedTensor> load_tensors(const std::string& path) {
    return decode_checkpoint(read_file_bytes(path), path);
}

}  // namespace gpdnn
