#include "htr/model.hpp"

#include <cmath>

namespace htr {

Parameter& ParamStore::create(const std::string& name, Tensor init, bool trainable) {
    require(by_name_.find(name) == by_name_.end(), "duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->value = std::move(init);
    p->trainable = trainable;
    Parameter* raw = p.get();
    order_.push_back(std::move(p));
    by_name_[name] = raw;
    return *raw;
}

Parameter& ParamStore::get(const std::string& name) {
    auto it = by_name_.find(name);
    require(it != by_name_.end(), "unknown parameter: " + name);
    return *it->second;
}

const Parameter* ParamStore::find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
}

Parameter* ParamStore::find(const std::string& name) {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
}

std::vector<Parameter*> ParamStore::all() {
    std::vector<Parameter*> out;
    out.reserve(order_.size());
    for (auto& p : order_) out.push_back(p.get());
    return out;
}

std::vector<const Parameter*> ParamStore::all() const {
    std::vector<const Parameter*> out;
    out.reserve(order_.size());
    for (auto& p : order_) out.push_back(p.get());
    return out;
}

void ParamStore::zero_grads() {
    for (auto& p : order_) p->zero_grad();
}

void ParamStore::set_trainable(const std::string& prefix, bool trainable) {
    for (auto& p : order_)
        if (p->name.rfind(prefix, 0) == 0) p->trainable = trainable;
}

long ParamStore::total_values() const {
    long n = 0;
    for (auto& p : order_) n += p->value.numel();
    return n;
}

double clip_gradients(std::vector<Parameter*> params, double threshold) {
    double sq = 0.0;
    for (Parameter* p : params)
        if (p->trainable && p->has_grad()) sq += p->grad.l2_norm_sq();
    double norm = std::sqrt(sq);
    if (norm > threshold && norm > 0.0) {
        double s = threshold / norm;
        for (Parameter* p : params)
            if (p->trainable && p->has_grad())
                for (double& g : p->grad.v) g *= s;
    }
    return norm;
}

double clip_gradients(ParamStore& params, double threshold) {
    return clip_gradients(params.all(), threshold);
}

void Adam::step(std::vector<Parameter*> params, double lr_override) {
    double lr = lr_override >= 0.0 ? lr_override : cfg_.lr;
    ++step_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (Parameter* p : params) {
        if (!p->trainable) continue;
        require(p->has_grad(), "adam step with no gradient for trainable parameter " + p->name);
        Slot& s = slots_[p->name];
        if (s.m.v.empty()) {
            s.m = Tensor(p->value.shape);
            s.v = Tensor(p->value.shape);
        }
        require(s.m.same_shape(p->value), "adam slot shape mismatch for " + p->name);
        for (size_t i = 0; i < p->value.v.size(); ++i) {
            double g = p->grad.v[i];
            s.m.v[i] = cfg_.beta1 * s.m.v[i] + (1.0 - cfg_.beta1) * g;
            s.v.v[i] = cfg_.beta2 * s.v.v[i] + (1.0 - cfg_.beta2) * g * g;
            double mhat = s.m.v[i] / bc1;
            double vhat = s.v.v[i] / bc2;
            p->value.v[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

void Adam::restore(long step, std::map<std::string, Slot> slots) {
    step_ = step;
    slots_ = std::move(slots);
}

}  // namespace htr
