#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "acc/common.hpp"
#include "acc/tensor.hpp"

namespace acc {

// A named trainable tensor plus its gradient and optimizer state. Parameters
// live in a ParamStore and are referenced by stable pointers; tapes
// accumulate into `grad`, the optimizer consumes `grad` and updates `m`/`v`.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor m;
    Tensor v;
    bool frozen = false;
};

class ParamStore {
  public:
    // Creates the parameter on first call; later calls return the existing
    // entry and require a matching shape.
    Parameter& make(const std::string& name, Tensor init, bool frozen = false) {
        auto it = index_.find(name);
        if (it != index_.end()) {
            Parameter& p = *items_[it->second];
            require_shape(p.value, init.shape, "parameter " + name);
            return p;
        }
        auto p = std::make_unique<Parameter>();
        p->name = name;
        p->grad = Tensor::zeros(init.shape);
        p->m = Tensor::zeros(init.shape);
        p->v = Tensor::zeros(init.shape);
        p->value = std::move(init);
        p->frozen = frozen;
        index_.emplace(name, items_.size());
        items_.push_back(std::move(p));
        return *items_.back();
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    Parameter& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw LogicError("unknown parameter: " + name);
        return *items_[it->second];
    }
    const Parameter& at(const std::string& name) const {
        return const_cast<ParamStore*>(this)->at(name);
    }

    // Creation order, which fixes the optimizer update order and the
    // checkpoint layout.
    size_t size() const { return items_.size(); }
    Parameter& operator[](size_t i) { return *items_[i]; }
    const Parameter& operator[](size_t i) const { return *items_[i]; }

    int64_t numel() const {
        int64_t n = 0;
        for (const auto& p : items_) n += p->value.numel();
        return n;
    }

    void zero_grads() {
        for (auto& p : items_) std::fill(p->grad.data.begin(), p->grad.data.end(), real(0));
    }

  private:
    std::vector<std::unique_ptr<Parameter>> items_;
    std::unordered_map<std::string, size_t> index_;
};

}  // namespace acc
