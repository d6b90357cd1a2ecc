#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "camila/error.hpp"
#include "camila/image.hpp"
#include "camila/numerics/nn.hpp"

// Binary checkpoint:
//   "CAMILACK" | u32 version | u32 #meta | (str key, str value)* |
//   u32 #blocks | (str name, u32 rank, u64 dims[rank], f64 data[])* |
//   u64 FNV-1a of everything before it
// Integers and doubles are little-endian; strings are u32 length + bytes.

namespace camila {

inline constexpr char kCheckpointMagic[8] = {'C', 'A', 'M', 'I', 'L', 'A', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using CheckpointMeta = std::map<std::string, std::string>;

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
    static_assert(std::is_unsigned_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

inline void put_str(std::string& out, const std::string& s) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out += s;
}

class Reader {
public:
    Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

    template <class T>
    T get() {
        need(sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            v |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += sizeof(T);
        return v;
    }

    std::string str() {
        const auto n = get<std::uint32_t>();
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == end_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > end_) {
            throw FormatError("truncated checkpoint");
        }
    }
    const std::string& bytes_;
    std::size_t end_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const ParamStore& store, const CheckpointMeta& meta) {
    std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
    detail::put_le<std::uint32_t>(out, kCheckpointVersion);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
    for (const auto& [k, v] : meta) {
        detail::put_str(out, k);
        detail::put_str(out, v);
    }
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.entries().size()));
    for (const auto& e : store.entries()) {
        detail::put_str(out, e.name);
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.tensor.rank()));
        for (std::size_t d : e.tensor.shape()) {
            detail::put_le<std::uint64_t>(out, d);
        }
        for (double v : e.tensor.data()) {
            detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
        }
    }
    detail::put_le<std::uint64_t>(out, fnv1a(out.data(), out.size()));
    return out;
}

/// Reads only the metadata (after verifying magic, version and checksum).
inline CheckpointMeta read_checkpoint_meta(const std::string& bytes) {
    if (bytes.size() < sizeof kCheckpointMagic + 8 ||
        std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
        throw FormatError("not a camila checkpoint (bad magic)");
    }
    const std::size_t body = bytes.size() - 8;
    detail::Reader tail(bytes.substr(body), 8);
    if (tail.get<std::uint64_t>() != fnv1a(bytes.data(), body)) {
        throw FormatError("checkpoint checksum mismatch");
    }
    detail::Reader r(bytes, body);
    for (std::size_t i = 0; i < sizeof kCheckpointMagic; ++i) {
        r.get<std::uint8_t>();
    }
    if (const auto v = r.get<std::uint32_t>(); v != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(v));
    }
    CheckpointMeta meta;
    const auto n = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n; ++i) {
        std::string k = r.str();
        meta[k] = r.str();
    }
    return meta;
}

/// Loads every block into the same-named, same-shaped tensor of `store`.
/// The block set must match the store exactly.
inline CheckpointMeta decode_checkpoint(const std::string& bytes, ParamStore& store) {
    CheckpointMeta meta = read_checkpoint_meta(bytes);
    detail::Reader r(bytes, bytes.size() - 8);
    for (std::size_t i = 0; i < sizeof kCheckpointMagic; ++i) {
        r.get<std::uint8_t>();
    }
    r.get<std::uint32_t>();
    const auto n_meta = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < 2 * n_meta; ++i) {
        r.str();
    }
    const auto n_blocks = r.get<std::uint32_t>();
    if (n_blocks != store.entries().size()) {
        throw FormatError("checkpoint has " + std::to_string(n_blocks) + " parameter blocks, model expects " +
                          std::to_string(store.entries().size()));
    }
    for (std::uint32_t b = 0; b < n_blocks; ++b) {
        const std::string name = r.str();
        Tensor* t = store.find(name);
        if (t == nullptr) {
            throw FormatError("checkpoint block '" + name + "' has no matching parameter");
        }
        Shape shape(r.get<std::uint32_t>());
        for (auto& d : shape) {
            d = r.get<std::uint64_t>();
        }
        if (shape != t->shape()) {
            throw FormatError("checkpoint block '" + name + "' has shape " + shape_str(shape) + ", expected " +
                              shape_str(t->shape()));
        }
        for (double& v : t->data()) {
            v = std::bit_cast<double>(r.get<std::uint64_t>());
        }
    }
    if (!r.done()) {
        throw FormatError("trailing bytes in checkpoint");
    }
    return meta;
}

}  // namespace camila
