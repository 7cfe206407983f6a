#include "core/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>

namespace pixelgen {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is written by memcpy and assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'P', 'X', 'G', 'N'};

struct Writer {
    std::vector<uint8_t> buf;
    void u8(uint8_t v) { buf.push_back(v); }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
    }
    void raw(const void* p, size_t n) {
        const auto* b = static_cast<const uint8_t*>(p);
        buf.insert(buf.end(), b, b + n);
    }
};

struct Reader {
    const std::vector<uint8_t>& buf;
    size_t off = 0;

    void need(size_t n, const char* what) const {
        if (off + n > buf.size())
            fail(ErrorCode::format, "checkpoint: truncated while reading " + std::string(what) + " at offset " +
                                        std::to_string(off));
    }
    uint8_t u8(const char* what) {
        need(1, what);
        return buf[off++];
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[off + static_cast<size_t>(i)]) << (8 * i);
        off += 4;
        return v;
    }
    std::vector<uint8_t> raw(size_t n, const char* what) {
        need(n, what);
        std::vector<uint8_t> out(buf.begin() + static_cast<ptrdiff_t>(off),
                                 buf.begin() + static_cast<ptrdiff_t>(off + n));
        off += n;
        return out;
    }
};

}  // namespace

void CheckpointBlob::save(const std::string& path) const {
    Writer w;
    w.raw(kMagic, 4);
    w.u32(kVersion);
    w.u32(static_cast<uint32_t>(entries_.size()));
    for (const auto& [name, st] : entries_) {
        w.u32(static_cast<uint32_t>(name.size()));
        w.raw(name.data(), name.size());
        w.u8(st.dtype);
        w.u8(static_cast<uint8_t>(st.dims.size()));
        for (int64_t d : st.dims) w.u32(static_cast<uint32_t>(d));
        w.raw(st.bytes.data(), st.bytes.size());
    }
    std::string tmp = path + ".tmp";
    FILE* f = std::fopen(tmp.c_str(), "wb");
    if (!f) fail(ErrorCode::io, "checkpoint: cannot open " + tmp + " for writing");
    size_t written = std::fwrite(w.buf.data(), 1, w.buf.size(), f);
    if (std::fclose(f) != 0 || written != w.buf.size())
        fail(ErrorCode::io, "checkpoint: short write to " + tmp);
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) fail(ErrorCode::io, "checkpoint: cannot rename " + tmp + " to " + path);
}

CheckpointBlob CheckpointBlob::load(const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) fail(ErrorCode::io, "checkpoint: cannot open " + path);
    std::fseek(f, 0, SEEK_END);
    long size = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::vector<uint8_t> buf(static_cast<size_t>(size));
    size_t got = std::fread(buf.data(), 1, buf.size(), f);
    std::fclose(f);
    if (got != buf.size()) fail(ErrorCode::io, "checkpoint: short read from " + path);

    Reader r{buf};
    auto magic = r.raw(4, "magic");
    if (std::memcmp(magic.data(), kMagic, 4) != 0)
        fail(ErrorCode::format, "checkpoint: bad magic in " + path + " at offset 0");
    uint32_t version = r.u32("version");
    if (version != kVersion)
        fail(ErrorCode::format, "checkpoint: unsupported version " + std::to_string(version) + " in " + path);
    uint32_t count = r.u32("tensor count");
    CheckpointBlob blob;
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t name_len = r.u32("name length");
        auto name_bytes = r.raw(name_len, "name");
        std::string name(name_bytes.begin(), name_bytes.end());
        SavedTensor st;
        st.dtype = r.u8("dtype");
        if (st.dtype > 1)
            fail(ErrorCode::format, "checkpoint: unknown dtype code " + std::to_string(st.dtype) + " for " + name);
        uint8_t rank = r.u8("rank");
        int64_t n = 1;
        for (uint8_t d = 0; d < rank; ++d) {
            int64_t dim = static_cast<int64_t>(r.u32("dims"));
            st.dims.push_back(dim);
            n *= dim;
        }
        size_t payload = static_cast<size_t>(n) * (st.dtype == 0 ? 4 : 8);
        st.bytes = r.raw(payload, ("payload of " + name).c_str());
        blob.entries_[name] = std::move(st);
    }
    if (r.off != buf.size())
        fail(ErrorCode::format, "checkpoint: trailing bytes in " + path + " at offset " + std::to_string(r.off));
    return blob;
}

}  // namespace pixelgen
