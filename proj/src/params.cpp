#include "kiwi/params.hpp"

#include <stdexcept>

namespace kiwi {

uint64_t fnv1a64(const void* data, size_t len, uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

Param& ParamStore::add(const std::string& group, const std::string& name,
                       Tensor value, bool trainable) {
    auto& g = groups_[group];
    if (g.count(name)) throw std::invalid_argument("duplicate param " + group + "/" + name);
    auto p = std::make_unique<Param>(name, std::move(value), trainable);
    Param& ref = *p;
    g.emplace(name, std::move(p));
    order_.emplace_back(group, name);
    return ref;
}

Param& ParamStore::find(const std::string& group, const std::string& name) {
    auto gi = groups_.find(group);
    if (gi == groups_.end()) throw std::out_of_range("no param group " + group);
    auto pi = gi->second.find(name);
    if (pi == gi->second.end()) throw std::out_of_range("no param " + group + "/" + name);
    return *pi->second;
}

const Param& ParamStore::find(const std::string& group, const std::string& name) const {
    return const_cast<ParamStore*>(this)->find(group, name);
}

std::vector<std::string> ParamStore::group_names() const {
    std::vector<std::string> out;
    for (const auto& [g, _] : groups_) out.push_back(g);
    return out;
}

std::vector<Param*> ParamStore::group_params(const std::string& group) {
    std::vector<Param*> out;
    for (const auto& [g, n] : order_)
        if (g == group) out.push_back(groups_[g][n].get());
    return out;
}

std::vector<const Param*> ParamStore::group_params(const std::string& group) const {
    std::vector<const Param*> out;
    for (const auto& [g, n] : order_)
        if (g == group) out.push_back(groups_.at(g).at(n).get());
    return out;
}

std::vector<Param*> ParamStore::all_params() {
    std::vector<Param*> out;
    for (const auto& [g, n] : order_) out.push_back(groups_[g][n].get());
    return out;
}

void ParamStore::set_group_trainable(const std::string& group, bool trainable) {
    for (Param* p : group_params(group)) p->trainable = trainable;
}

void ParamStore::zero_grads() {
    for (const auto& [g, n] : order_) groups_[g][n]->zero_grad();
}

uint64_t ParamStore::group_hash(const std::string& group) const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const Param* p : group_params(group)) {
        h = fnv1a64(p->name.data(), p->name.size(), h);
        h = fnv1a64(p->value.data(), sizeof(double) * static_cast<size_t>(p->value.numel()), h);
    }
    return h;
}

int64_t ParamStore::total_numel() const {
    int64_t n = 0;
    for (const auto& [g, params] : groups_)
        for (const auto& [_, p] : params) n += p->value.numel();
    return n;
}

} // namespace kiwi
