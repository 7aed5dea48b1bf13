#pragma once

#include <string>
#include <utility>
#include <vector>

#include "obn/tensor.hpp"

namespace obn {

/// Stack of forward activations saved for the backward pass. Layers push
/// during forward and pop in exact reverse order during backward; a tag per
/// entry catches forward/backward mismatches. A completed backward leaves
/// the tape empty.
template <typename T>
class ActivationTape {
public:
    void push(const char* tag, Tensor<T> value) {
        entries_.emplace_back(tag, std::move(value));
    }

    Tensor<T> pop(const char* tag) {
        if (entries_.empty())
            throw InternalError(std::string("tape: pop '") + tag + "' on empty tape");
        if (entries_.back().first != tag)
            throw InternalError("tape: expected '" + entries_.back().first + "', got '" + tag +
                                "'");
        Tensor<T> v = std::move(entries_.back().second);
        entries_.pop_back();
        return v;
    }

    bool empty() const { return entries_.empty(); }
    size_t size() const { return entries_.size(); }
    void clear() { entries_.clear(); }

private:
    std::vector<std::pair<std::string, Tensor<T>>> entries_;
};

} // namespace obn
