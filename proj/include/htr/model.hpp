#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "htr/tensor.hpp"

namespace htr {

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;  // empty until populated by a backward pass
    bool trainable = true;

    bool has_grad() const { return !grad.v.empty(); }
    void zero_grad() { grad = Tensor(); }
};

// Insertion-ordered registry of named parameters. Names are hierarchical
// ("encoder/blstm0/fwd/w_ih") and must be unique.
class ParamStore {
  public:
    Parameter& create(const std::string& name, Tensor init, bool trainable = true);
    Parameter& get(const std::string& name);
    const Parameter* find(const std::string& name) const;
    Parameter* find(const std::string& name);

    std::vector<Parameter*> all();
    std::vector<const Parameter*> all() const;
    size_t size() const { return order_.size(); }

    void zero_grads();
    // Marks every parameter whose name starts with the prefix.
    void set_trainable(const std::string& prefix, bool trainable);
    long total_values() const;

  private:
    std::vector<std::unique_ptr<Parameter>> order_;
    std::map<std::string, Parameter*> by_name_;
};

// If the global L2 norm of all gradients exceeds the threshold, scales every
// gradient by threshold / norm. Returns the pre-clip norm.
double clip_gradients(std::vector<Parameter*> params, double threshold);
double clip_gradients(ParamStore& params, double threshold);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// ADAM with bias correction. Moment buffers are keyed by parameter name so
// the state survives checkpoint round-trips.
class Adam {
  public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    // Applies one update using the gradients stored on the parameters.
    // lr_override, when >= 0, replaces cfg.lr for this step (schedules).
    void step(std::vector<Parameter*> params, double lr_override = -1.0);
    void step(ParamStore& params, double lr_override = -1.0) { step(params.all(), lr_override); }

    const AdamConfig& config() const { return cfg_; }
    long step_count() const { return step_; }

    struct Slot {
        Tensor m, v;
    };
    std::map<std::string, Slot>& slots() { return slots_; }
    void restore(long step, std::map<std::string, Slot> slots);

  private:
    AdamConfig cfg_;
    long step_ = 0;
    std::map<std::string, Slot> slots_;
};

}  // namespace htr
