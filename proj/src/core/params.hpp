#pragma once

// Named trainable-parameter registry shared by the denoiser, the alignment
// projection, the optimizer, EMA, and checkpointing.

#include <map>
#include <utility>

#include "core/tensor.hpp"

namespace pixelgen {

template <typename T>
class ParamStore {
public:
    Tensor<T> add(const std::string& name, Tensor<T> t) {
        if (index_.count(name)) fail(ErrorCode::state, "ParamStore: duplicate parameter " + name);
        t.set_requires_grad(true);
        index_[name] = items_.size();
        items_.emplace_back(name, t);
        return t;
    }

    const std::vector<std::pair<std::string, Tensor<T>>>& items() const { return items_; }

    Tensor<T> get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) fail(ErrorCode::state, "ParamStore: unknown parameter " + name);
        return items_[it->second].second;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    int64_t total_params() const {
        int64_t n = 0;
        for (const auto& [name, t] : items_) n += t.numel();
        return n;
    }

    void zero_grad() {
        for (auto& [name, t] : items_) t.zero_grad();
    }

    // Lexicographic name -> tensor view (checkpoint ordering).
    std::map<std::string, Tensor<T>> named_sorted() const {
        std::map<std::string, Tensor<T>> m;
        for (const auto& [name, t] : items_) m.emplace(name, t);
        return m;
    }

    // Overwrite parameter values from a name -> data map; requires exact cover.
    void load_values(const std::map<std::string, std::vector<T>>& values) {
        if (values.size() != items_.size())
            fail(ErrorCode::format, "ParamStore: expected " + std::to_string(items_.size()) +
                                        " parameters, got " + std::to_string(values.size()));
        for (auto& [name, t] : items_) {
            auto it = values.find(name);
            if (it == values.end()) fail(ErrorCode::format, "ParamStore: missing parameter " + name);
            if (static_cast<int64_t>(it->second.size()) != t.numel())
                fail(ErrorCode::format, "ParamStore: size mismatch for " + name);
            std::copy(it->second.begin(), it->second.end(), t.data());
        }
    }

private:
    std::vector<std::pair<std::string, Tensor<T>>> items_;
    std::map<std::string, size_t> index_;
};

}  // namespace pixelgen
