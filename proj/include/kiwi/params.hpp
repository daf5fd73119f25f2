#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "kiwi/tensor.hpp"

namespace kiwi {

// One named weight tensor plus its gradient and Adam moments.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor adam_m;
    Tensor adam_v;
    bool trainable = true;

    Param() = default;
    Param(std::string n, Tensor v, bool train = true)
        : name(std::move(n)), value(std::move(v)),
          grad(Tensor::zeros(value.shape())),
          adam_m(Tensor::zeros(value.shape())),
          adam_v(Tensor::zeros(value.shape())),
          trainable(train) {}

    void zero_grad() { std::fill(grad.vec().begin(), grad.vec().end(), 0.0); }
};

// Named parameter groups ("encoder-base", "lora", "query-banks",
// "connectors", "dit"). Group names are the unit of curriculum freezing,
// checkpointing, and integrity hashing.
class ParamStore {
public:
    Param& add(const std::string& group, const std::string& name, Tensor value,
               bool trainable = true);
    Param& find(const std::string& group, const std::string& name);
    const Param& find(const std::string& group, const std::string& name) const;
    bool has_group(const std::string& group) const { return groups_.count(group) > 0; }

    std::vector<std::string> group_names() const;
    std::vector<Param*> group_params(const std::string& group);
    std::vector<const Param*> group_params(const std::string& group) const;
    std::vector<Param*> all_params();

    void set_group_trainable(const std::string& group, bool trainable);
    void zero_grads();

    // FNV-1a over the raw value bytes of a group, in insertion order.
    uint64_t group_hash(const std::string& group) const;

    int64_t total_numel() const;

private:
    // insertion-ordered
    std::vector<std::pair<std::string, std::string>> order_;
    std::map<std::string, std::map<std::string, std::unique_ptr<Param>>> groups_;
};

uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull);

} // namespace kiwi
