#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_set>

#include "artseg/tensor.hpp"

namespace artseg {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian; big-endian hosts need byte swaps");

// Binary layout:
//   magic "ARTS" | u32 version (=1) | u32 entry count
//   per entry: u16 name length | name bytes (UTF-8) | u8 dtype | u8 rank
//              | rank x u32 dims | raw little-endian payload
// dtype codes: 0 = f32, 1 = f64, 2 = i64.

enum class CheckpointDType : std::uint8_t { f32 = 0, f64 = 1, i64 = 2 };

inline std::size_t dtype_size(CheckpointDType t) {
    switch (t) {
        case CheckpointDType::f32: return 4;
        case CheckpointDType::f64: return 8;
        case CheckpointDType::i64: return 8;
    }
    throw DataError("unknown checkpoint dtype");
}

class CheckpointError : public Error {
public:
    enum class Kind { bad_magic, bad_version, truncated, name_collision, bad_entry, io };

    CheckpointError(Kind kind, const std::string& msg)
        : Error("checkpoint error: " + msg), kind_(kind) {}

    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

struct CheckpointEntry {
    std::string name;
    CheckpointDType dtype = CheckpointDType::f32;
    Shape dims;
    std::vector<std::uint8_t> payload;

    std::int64_t element_count() const { return numel(dims); }

    template <typename T>
    static CheckpointEntry from_tensor(const std::string& name, const Tensor<T>& t) {
        CheckpointEntry e;
        e.name = name;
        e.dtype = std::is_same_v<T, float> ? CheckpointDType::f32 : CheckpointDType::f64;
        e.dims = t.shape();
        e.payload.resize(t.values().size() * sizeof(T));
        std::memcpy(e.payload.data(), t.values().data(), e.payload.size());
        return e;
    }

    static CheckpointEntry from_i64(const std::string& name, std::int64_t v) {
        CheckpointEntry e;
        e.name = name;
        e.dtype = CheckpointDType::i64;
        e.payload.resize(8);
        std::memcpy(e.payload.data(), &v, 8);
        return e;
    }

    template <typename T>
    void copy_into(Tensor<T>& t) const {
        const CheckpointDType want =
            std::is_same_v<T, float> ? CheckpointDType::f32 : CheckpointDType::f64;
        if (dtype != want)
            throw CheckpointError(CheckpointError::Kind::bad_entry,
                                  "entry '" + name + "' has the wrong dtype");
        if (dims != t.shape())
            throw CheckpointError(CheckpointError::Kind::bad_entry,
                                  "entry '" + name + "' has shape " + shape_str(dims) +
                                      ", expected " + shape_str(t.shape()));
        std::memcpy(t.values().data(), payload.data(), payload.size());
    }

    std::int64_t as_i64() const {
        if (dtype != CheckpointDType::i64 || payload.size() != 8)
            throw CheckpointError(CheckpointError::Kind::bad_entry,
                                  "entry '" + name + "' is not a 64-bit integer scalar");
        std::int64_t v;
        std::memcpy(&v, payload.data(), 8);
        return v;
    }
};

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
public:
    ByteReader(const std::uint8_t* data, std::size_t size) : p_(data), end_(data + size) {}

    std::size_t remaining() const { return static_cast<std::size_t>(end_ - p_); }

    const std::uint8_t* take(std::size_t n) {
        if (remaining() < n)
            throw CheckpointError(CheckpointError::Kind::truncated,
                                  "file ends inside an entry (" + std::to_string(n) +
                                      " bytes needed, " + std::to_string(remaining()) + " left)");
        const std::uint8_t* q = p_;
        p_ += n;
        return q;
    }

    std::uint16_t u16() {
        const std::uint8_t* q = take(2);
        return static_cast<std::uint16_t>(q[0] | (q[1] << 8));
    }

    std::uint32_t u32() {
        const std::uint8_t* q = take(4);
        return static_cast<std::uint32_t>(q[0]) | (static_cast<std::uint32_t>(q[1]) << 8) |
               (static_cast<std::uint32_t>(q[2]) << 16) | (static_cast<std::uint32_t>(q[3]) << 24);
    }

private:
    const std::uint8_t* p_;
    const std::uint8_t* end_;
};

}  // namespace detail

inline void write_checkpoint(const std::string& path, std::span<const CheckpointEntry> entries) {
    std::unordered_set<std::string> seen;
    for (const auto& e : entries)
        if (!seen.insert(e.name).second)
            throw CheckpointError(CheckpointError::Kind::name_collision,
                                  "duplicate entry name '" + e.name + "'");

    std::string buf;
    buf += "ARTS";
    detail::put_u32(buf, 1u);
    detail::put_u32(buf, static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        if (e.name.size() > 0xffff)
            throw CheckpointError(CheckpointError::Kind::bad_entry, "entry name too long");
        if (e.dims.size() > 0xff)
            throw CheckpointError(CheckpointError::Kind::bad_entry, "entry rank too large");
        if (e.payload.size() !=
            static_cast<std::size_t>(e.element_count()) * dtype_size(e.dtype))
            throw CheckpointError(CheckpointError::Kind::bad_entry,
                                  "entry '" + e.name + "' payload does not match its dims");
        detail::put_u16(buf, static_cast<std::uint16_t>(e.name.size()));
        buf += e.name;
        buf.push_back(static_cast<char>(e.dtype));
        buf.push_back(static_cast<char>(e.dims.size()));
        for (int d : e.dims) detail::put_u32(buf, static_cast<std::uint32_t>(d));
        buf.append(reinterpret_cast<const char*>(e.payload.data()), e.payload.size());
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError(CheckpointError::Kind::io, "cannot open '" + path + "' for writing");
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw CheckpointError(CheckpointError::Kind::io, "short write to '" + path + "'");
}

inline std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError(CheckpointError::Kind::io, "cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());

    detail::ByteReader r(bytes.data(), bytes.size());
    const std::uint8_t* magic = r.take(4);
    if (std::memcmp(magic, "ARTS", 4) != 0)
        throw CheckpointError(CheckpointError::Kind::bad_magic,
                              "'" + path + "' does not start with the ARTS magic");
    const std::uint32_t version = r.u32();
    if (version != 1)
        throw CheckpointError(CheckpointError::Kind::bad_version,
                              "unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t count = r.u32();

    std::vector<CheckpointEntry> entries;
    entries.reserve(count);
    std::unordered_set<std::string> seen;
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        const std::uint16_t name_len = r.u16();
        const std::uint8_t* name = r.take(name_len);
        e.name.assign(reinterpret_cast<const char*>(name), name_len);
        const std::uint8_t dtype = *r.take(1);
        if (dtype > 2)
            throw CheckpointError(CheckpointError::Kind::bad_entry,
                                  "entry '" + e.name + "' has unknown dtype code " +
                                      std::to_string(int(dtype)));
        e.dtype = static_cast<CheckpointDType>(dtype);
        const std::uint8_t rank = *r.take(1);
        e.dims.resize(rank);
        for (int d = 0; d < rank; ++d) e.dims[static_cast<std::size_t>(d)] =
            static_cast<int>(r.u32());
        const std::size_t payload_size =
            static_cast<std::size_t>(e.element_count()) * dtype_size(e.dtype);
        const std::uint8_t* payload = r.take(payload_size);
        e.payload.assign(payload, payload + payload_size);
        if (!seen.insert(e.name).second)
            throw CheckpointError(CheckpointError::Kind::name_collision,
                                  "duplicate entry name '" + e.name + "' in '" + path + "'");
        entries.push_back(std::move(e));
    }
    if (r.remaining() != 0)
        throw CheckpointError(CheckpointError::Kind::truncated,
                              std::to_string(r.remaining()) + " trailing bytes in '" + path + "'");
    return entries;
}

}  // namespace artseg
