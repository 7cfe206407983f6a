#pragma once

// Named-tensor container persisted in a fixed binary layout:
//   magic "PXGN", version u32, tensor count u32, then per tensor (in
//   lexicographic name order): name length u32, name bytes, dtype u8
//   (0=f32, 1=f64), rank u8, dims u32 x rank, little-endian payload.

#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace pixelgen {

struct SavedTensor {
    uint8_t dtype = 0;  // 0 = f32, 1 = f64
    Shape dims;
    std::vector<uint8_t> bytes;

    int64_t count() const { return shape_numel(dims); }
};

class CheckpointBlob {
public:
    static constexpr uint32_t kVersion = 1;

    template <typename T>
    void put(const std::string& name, const Shape& dims, const T* data, int64_t count) {
        SavedTensor st;
        st.dtype = sizeof(T) == 4 ? 0 : 1;
        st.dims = dims;
        st.bytes.resize(static_cast<size_t>(count) * sizeof(T));
        std::memcpy(st.bytes.data(), data, st.bytes.size());
        entries_[name] = std::move(st);
    }

    template <typename T>
    void put(const std::string& name, const Tensor<T>& t) {
        put(name, t.shape(), t.data(), t.numel());
    }

    void put_scalar(const std::string& name, double v) { put<double>(name, {1}, &v, 1); }

    bool has(const std::string& name) const { return entries_.count(name) != 0; }

    template <typename T>
    std::vector<T> get_data(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) fail(ErrorCode::format, "checkpoint: missing tensor " + name);
        const SavedTensor& st = it->second;
        if (st.dtype != (sizeof(T) == 4 ? 0 : 1))
            fail(ErrorCode::format, "checkpoint: dtype mismatch for " + name);
        std::vector<T> out(static_cast<size_t>(st.count()));
        std::memcpy(out.data(), st.bytes.data(), st.bytes.size());
        return out;
    }

    double get_scalar(const std::string& name) const { return get_data<double>(name)[0]; }

    const std::map<std::string, SavedTensor>& entries() const { return entries_; }

    void save(const std::string& path) const;        // atomic: temp file + rename
    static CheckpointBlob load(const std::string& path);  // validates fully before returning

private:
    std::map<std::string, SavedTensor> entries_;  // map iteration = lexicographic order
};

}  // namespace pixelgen
