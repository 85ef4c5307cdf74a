#pragma once

// Reader and writer for the open checkpoint tensor container: a little-endian
// u64 header length, a JSON header mapping tensor name to
// {dtype, shape, data_offsets}, then the raw row-major tensor bytes.
// An optional "__metadata__" entry holds a string-to-string map.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "contrans/error.hpp"

namespace contrans {

enum class DType { f64, f32, f16, bf16, i64, i32, i16, i8, u8, boolean };

namespace detail {

inline std::optional<DType> parse_dtype(const std::string& s) {
    static const std::map<std::string, DType> table = {
        {"F64", DType::f64}, {"F32", DType::f32}, {"F16", DType::f16}, {"BF16", DType::bf16},
        {"I64", DType::i64}, {"I32", DType::i32}, {"I16", DType::i16}, {"I8", DType::i8},
        {"U8", DType::u8},   {"BOOL", DType::boolean},
    };
    auto it = table.find(s);
    if (it == table.end()) return std::nullopt;
    return it->second;
}

inline const char* dtype_name(DType t) {
    switch (t) {
        case DType::f64: return "F64";
        case DType::f32: return "F32";
        case DType::f16: return "F16";
        case DType::bf16: return "BF16";
        case DType::i64: return "I64";
        case DType::i32: return "I32";
        case DType::i16: return "I16";
        case DType::i8: return "I8";
        case DType::u8: return "U8";
        case DType::boolean: return "BOOL";
    }
    return "?";
}

inline std::size_t dtype_size(DType t) {
    switch (t) {
        case DType::f64:
        case DType::i64: return 8;
        case DType::f32:
        case DType::i32: return 4;
        case DType::f16:
        case DType::bf16:
        case DType::i16: return 2;
        case DType::i8:
        case DType::u8:
        case DType::boolean: return 1;
    }
    return 0;
}

inline float half_to_float(std::uint16_t h) {
    const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
    std::uint32_t exp = (h >> 10) & 0x1Fu;
    std::uint32_t mant = h & 0x3FFu;
    std::uint32_t bits;
    if (exp == 0) {
        if (mant == 0) {
            bits = sign;
        } else {  // subnormal: renormalise
            exp = 127 - 15 + 1;
            while ((mant & 0x400u) == 0) {
                mant <<= 1;
                --exp;
            }
            mant &= 0x3FFu;
            bits = sign | (exp << 23) | (mant << 13);
        }
    } else if (exp == 0x1F) {
        bits = sign | 0x7F800000u | (mant << 13);
    } else {
        bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
    }
    return std::bit_cast<float>(bits);
}

inline float bf16_to_float(std::uint16_t h) {
    return std::bit_cast<float>(static_cast<std::uint32_t>(h) << 16);
}

template <typename T>
T load_le(const char* p) {
    static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
}

}  // namespace detail

struct TensorInfo {
    std::string dtype_name;
    std::optional<DType> dtype;  // empty when the dtype is not one we know
    std::vector<std::size_t> shape;
    std::size_t begin = 0;  // offsets relative to the start of the data section
    std::size_t end = 0;

    std::size_t numel() const {
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
    }
};

/// Read-only view of a tensor container. Only the header is parsed eagerly;
/// payloads are read on demand so large checkpoints are never held twice.
class TensorFile {
public:
    static TensorFile open(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw CheckpointError(CheckpointError::Kind::io, "cannot open tensor file " + path.string());
        const auto file_size = std::filesystem::file_size(path);
        TensorFile tf;
        tf.path_ = path;
        tf.parse_header(in, file_size);
        return tf;
    }

    static TensorFile from_bytes(std::vector<char> bytes) {
        TensorFile tf;
        tf.bytes_ = std::make_shared<std::vector<char>>(std::move(bytes));
        std::string view(tf.bytes_->begin(), tf.bytes_->end());
        std::istringstream in(view);
        tf.parse_header(in, tf.bytes_->size());
        return tf;
    }

    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

    const TensorInfo& info(const std::string& name) const {
        auto it = tensors_.find(name);
        if (it == tensors_.end())
            throw CheckpointError(CheckpointError::Kind::missing_tensor, "missing tensor '" + name + "'");
        return it->second;
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(tensors_.size());
        for (const auto& [k, _] : tensors_) out.push_back(k);
        return out;
    }

    const std::map<std::string, std::string>& metadata() const { return metadata_; }

    /// Floating tensors up-cast (or down-cast from F64) to 32-bit floats.
    std::vector<float> read_f32(const std::string& name) const {
        const auto& ti = info(name);
        if (!ti.dtype || !(*ti.dtype == DType::f32 || *ti.dtype == DType::f16 ||
                           *ti.dtype == DType::bf16 || *ti.dtype == DType::f64))
            throw CheckpointError(CheckpointError::Kind::unsupported_dtype,
                                  "tensor '" + name + "' has unsupported dtype " + ti.dtype_name);
        const auto raw = read_raw(ti);
        const std::size_t n = ti.numel();
        std::vector<float> out(n);
        const char* p = raw.data();
        switch (*ti.dtype) {
            case DType::f32: std::memcpy(out.data(), p, n * 4); break;
            case DType::f16:
                for (std::size_t i = 0; i < n; ++i) out[i] = detail::half_to_float(detail::load_le<std::uint16_t>(p + 2 * i));
                break;
            case DType::bf16:
                for (std::size_t i = 0; i < n; ++i) out[i] = detail::bf16_to_float(detail::load_le<std::uint16_t>(p + 2 * i));
                break;
            case DType::f64:
                for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(detail::load_le<double>(p + 8 * i));
                break;
            default: break;
        }
        return out;
    }

    std::vector<std::int64_t> read_i64(const std::string& name) const {
        const auto& ti = info(name);
        if (!ti.dtype || !(*ti.dtype == DType::i64 || *ti.dtype == DType::i32))
            throw CheckpointError(CheckpointError::Kind::unsupported_dtype,
                                  "tensor '" + name + "' is not an integer tensor (" + ti.dtype_name + ")");
        const auto raw = read_raw(ti);
        std::vector<std::int64_t> out(ti.numel());
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = *ti.dtype == DType::i64 ? detail::load_le<std::int64_t>(raw.data() + 8 * i)
                                            : detail::load_le<std::int32_t>(raw.data() + 4 * i);
        return out;
    }

private:
    void parse_header(std::istream& in, std::uintmax_t file_size) {
        using Kind = CheckpointError::Kind;
        if (file_size < 8) throw CheckpointError(Kind::corrupt_header, "tensor file shorter than its length prefix");
        char len_buf[8];
        in.read(len_buf, 8);
        const auto header_len = detail::load_le<std::uint64_t>(len_buf);
        if (header_len == 0 || header_len > file_size - 8 || header_len > (std::uint64_t{1} << 30))
            throw CheckpointError(Kind::corrupt_header, "tensor header length " + std::to_string(header_len) +
                                                            " is inconsistent with file size " + std::to_string(file_size));
        std::string header(header_len, '\0');
        in.read(header.data(), static_cast<std::streamsize>(header_len));
        if (!in) throw CheckpointError(Kind::corrupt_header, "truncated tensor header");
        data_offset_ = 8 + header_len;
        const std::uintmax_t data_size = file_size - data_offset_;

        nlohmann::json j;
        try {
            j = nlohmann::json::parse(header);
        } catch (const nlohmann::json::exception& e) {
            throw CheckpointError(Kind::corrupt_header, std::string("tensor header is not valid JSON: ") + e.what());
        }
        if (!j.is_object()) throw CheckpointError(Kind::corrupt_header, "tensor header is not a JSON object");

        for (const auto& [name, entry] : j.items()) {
            if (name == "__metadata__") {
                if (!entry.is_object()) throw CheckpointError(Kind::corrupt_header, "__metadata__ must be an object");
                for (const auto& [k, v] : entry.items()) {
                    if (!v.is_string()) throw CheckpointError(Kind::corrupt_header, "__metadata__ values must be strings");
                    metadata_[k] = v.get<std::string>();
                }
                continue;
            }
            try {
                TensorInfo ti;
                ti.dtype_name = entry.at("dtype").get<std::string>();
                ti.dtype = detail::parse_dtype(ti.dtype_name);
                ti.shape = entry.at("shape").get<std::vector<std::size_t>>();
                const auto offs = entry.at("data_offsets").get<std::vector<std::size_t>>();
                if (offs.size() != 2 || offs[0] > offs[1] || offs[1] > data_size)
                    throw CheckpointError(Kind::corrupt_header, "tensor '" + name + "' has out-of-range data offsets");
                ti.begin = offs[0];
                ti.end = offs[1];
                if (ti.dtype && ti.numel() * detail::dtype_size(*ti.dtype) != ti.end - ti.begin)
                    throw CheckpointError(Kind::corrupt_header, "tensor '" + name + "' byte length disagrees with its shape");
                tensors_.emplace(name, std::move(ti));
            } catch (const nlohmann::json::exception& e) {
                throw CheckpointError(Kind::corrupt_header, "malformed entry for tensor '" + name + "': " + e.what());
            }
        }
    }

    std::vector<char> read_raw(const TensorInfo& ti) const {
        std::vector<char> buf(ti.end - ti.begin);
        if (bytes_) {
            std::memcpy(buf.data(), bytes_->data() + data_offset_ + ti.begin, buf.size());
            return buf;
        }
        std::ifstream in(path_, std::ios::binary);
        in.seekg(static_cast<std::streamoff>(data_offset_ + ti.begin));
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!in) throw CheckpointError(CheckpointError::Kind::io, "short read from " + path_.string());
        return buf;
    }

    std::filesystem::path path_;
    std::shared_ptr<std::vector<char>> bytes_;
    std::uint64_t data_offset_ = 0;
    std::map<std::string, TensorInfo> tensors_;
    std::map<std::string, std::string> metadata_;
};

/// Accumulates tensors and serialises them in insertion order. The header is
/// emitted with sorted keys and padded to 8 bytes, so equal inputs give equal
/// bytes.
class TensorWriter {
public:
    void add_f32(const std::string& name, std::vector<std::size_t> shape, std::span<const float> values) {
        add(name, DType::f32, std::move(shape), values.data(), values.size() * sizeof(float));
    }

    void add_i32(const std::string& name, std::vector<std::size_t> shape, std::span<const std::int32_t> values) {
        add(name, DType::i32, std::move(shape), values.data(), values.size() * sizeof(std::int32_t));
    }

    void set_metadata(const std::string& key, std::string value) { metadata_[key] = std::move(value); }

    std::vector<char> serialize() const {
        nlohmann::json header = nlohmann::json::object();
        if (!metadata_.empty()) header["__metadata__"] = metadata_;
        for (const auto& e : entries_)
            header[e.name] = {{"dtype", detail::dtype_name(e.dtype)}, {"shape", e.shape}, {"data_offsets", {e.begin, e.end}}};
        std::string h = header.dump();
        while ((h.size() + 8) % 8 != 0) h.push_back(' ');
        std::vector<char> out(8 + h.size() + data_.size());
        const std::uint64_t len = h.size();
        std::memcpy(out.data(), &len, 8);
        std::memcpy(out.data() + 8, h.data(), h.size());
        if (!data_.empty()) std::memcpy(out.data() + 8 + h.size(), data_.data(), data_.size());
        return out;
    }

    void write(const std::filesystem::path& path) const {
        const auto bytes = serialize();
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError(CheckpointError::Kind::io, "cannot write " + path.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw CheckpointError(CheckpointError::Kind::io, "short write to " + path.string());
    }

private:
    struct Entry {
        std::string name;
        DType dtype;
        std::vector<std::size_t> shape;
        std::size_t begin;
        std::size_t end;
    };

    void add(const std::string& name, DType dtype, std::vector<std::size_t> shape, const void* data, std::size_t nbytes) {
        const std::size_t numel = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
        if (numel * detail::dtype_size(dtype) != nbytes)
            throw ValidationError("tensor '" + name + "': shape does not match the number of values");
        if (std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; }))
            throw ValidationError("duplicate tensor name '" + name + "'");
        const std::size_t begin = data_.size();
        data_.resize(begin + nbytes);
        if (nbytes) std::memcpy(data_.data() + begin, data, nbytes);
        entries_.push_back({name, dtype, std::move(shape), begin, begin + nbytes});
    }

    std::vector<Entry> entries_;
    std::vector<char> data_;
    std::map<std::string, std::string> metadata_;
};

}  // namespace contrans
