#pragma once

#include <cmath>
#include <unordered_map>

#include "hyperinit/tensor.hpp"

namespace hyperinit {

// lr(step) = base·0.5·(1 + cos(π·step/total)); lr(0)=base, lr(total)=0.
struct CosineSchedule {
    double base_lr = 0.01;
    int total_steps = 1;

    CosineSchedule() = default;
    CosineSchedule(double base, int total) : base_lr(base), total_steps(total) {
        if (total_steps <= 0) throw ValidationError("cosine schedule: total_steps must be positive");
        if (base_lr < 0) throw ValidationError("cosine schedule: negative base learning rate");
    }

    double lr(int step) const {
        if (step < 0 || step > total_steps)
            throw StateError("cosine schedule: step " + std::to_string(step) + " outside [0," +
                             std::to_string(total_steps) + "]");
        return base_lr * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) / static_cast<double>(total_steps)));
    }
};

// Momentum SGD over named leaf tensors. Gradients are read from each
// tensor's grad buffer (filled by Tape::backward) and consumed in place.
template <typename T>
class SgdOptimizer {
   public:
    SgdOptimizer(CosineSchedule schedule, T momentum = T(0.9)) : schedule_(schedule), momentum_(momentum) {}

    const CosineSchedule& schedule() const { return schedule_; }

    // v = momentum·v − lr·g;  p += v
    void step(std::vector<NamedParam<T>>& params, int step_index) {
        if (step_index >= schedule_.total_steps)
            throw StateError("sgd: step " + std::to_string(step_index) + " beyond schedule of " +
                             std::to_string(schedule_.total_steps));
        const T lr = static_cast<T>(schedule_.lr(step_index));
        for (auto& p : params) {
            if (p.value->grad.empty()) continue;  // parameter untouched by this loss
            for (T g : p.value->grad)
                if (!std::isfinite(g))
                    throw NumericError("gradient for parameter '" + p.name + "' is not finite at step " +
                                       std::to_string(step_index) + "; training aborted");
            auto& v = velocity_[p.name];
            if (v.empty()) v.assign(p.value->data.size(), T(0));
            for (size_t i = 0; i < v.size(); ++i) {
                v[i] = momentum_ * v[i] - lr * p.value->grad[i];
                p.value->data[i] += v[i];
            }
            p.value->grad.clear();
            p.value->on_tape = false;  // ready for the next tape
        }
    }

    // checkpoint access to the optimizer moments
    std::unordered_map<std::string, std::vector<T>>& velocity() { return velocity_; }

   private:
    CosineSchedule schedule_;
    T momentum_;
    std::unordered_map<std::string, std::vector<T>> velocity_;
};

// Clears gradient buffers and tape markers on leaves without updating them
// (used when a step is skipped).
template <typename T>
void clear_grads(std::vector<NamedParam<T>>& params) {
    for (auto& p : params) {
        p.value->grad.clear();
        p.value->on_tape = false;
    }
}

// Scales all gradients so their global L2 norm is at most max_norm.
// NaN/Inf entries pass through untouched for the optimizer to reject.
template <typename T>
void clip_grad_norm(std::vector<NamedParam<T>>& params, T max_norm) {
    if (max_norm <= T(0)) return;
    double total = 0;
    for (const auto& p : params)
        for (T g : p.value->grad) total += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(total);
    if (!(norm > static_cast<double>(max_norm))) return;
    const T scale = static_cast<T>(static_cast<double>(max_norm) / norm);
    for (auto& p : params)
        for (T& g : p.value->grad) g *= scale;
}

}  // namespace hyperinit
