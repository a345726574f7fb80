// AdamW with decoupled weight decay, plus the learning-rate schedule.
#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "motadual/common.hpp"
#include "motadual/tensor.hpp"

namespace motadual {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

template <typename T>
class AdamW {
public:
    using NamedParam = std::pair<std::string, Tensor<T>>;

    AdamW(std::vector<NamedParam> params, AdamWConfig cfg = {})
        : params_(std::move(params)), cfg_(cfg) {
        slots_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            slots_[i].m.assign(params_[i].second.values().size(), T(0));
            slots_[i].v.assign(params_[i].second.values().size(), T(0));
        }
    }

    long long step_count() const { return t_; }

    void zero_grad() {
        for (auto& [name, p] : params_) p.zero_grad();
    }

    void step(double lr) {
        if (lr < 0) throw ContractError("adamw: negative learning rate");
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& [name, p] = params_[i];
            auto& vals = p.values();
            const auto& g = p.grad();
            auto& m = slots_[i].m;
            auto& v = slots_[i].v;
            for (std::size_t j = 0; j < vals.size(); ++j) {
                const double gj = static_cast<double>(g[j]);
                if (!std::isfinite(gj))
                    throw NumericError("adamw: non-finite gradient in parameter '" +
                                       name + "'");
                const double mj = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
                const double vj = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
                m[j] = static_cast<T>(mj);
                v[j] = static_cast<T>(vj);
                const double mhat = mj / bc1;
                const double vhat = vj / bc2;
                const double update =
                    mhat / (std::sqrt(vhat) + cfg_.eps) +
                    cfg_.weight_decay * static_cast<double>(vals[j]);
                vals[j] = static_cast<T>(static_cast<double>(vals[j]) - lr * update);
            }
        }
    }

private:
    struct Slot {
        std::vector<T> m, v;
    };

    std::vector<NamedParam> params_;
    AdamWConfig cfg_;
    std::vector<Slot> slots_;
    long long t_ = 0;
};

struct ScheduleSpec {
    enum class Shape { constant, warmup_cosine };

    double base_lr = 1e-3;
    long long warmup_steps = 0;
    long long total_steps = 1;
    Shape shape = Shape::warmup_cosine;

    void validate() const {
        if (total_steps <= 0)
            throw ContractError("schedule: total_steps must be positive");
        if (warmup_steps < 0 || warmup_steps > total_steps)
            throw ContractError("schedule: warmup_steps out of range");
    }
};

// Linear ramp 0 -> base_lr over warmup_steps, then cosine decay to 0 at
// total_steps. The constant shape ignores warmup.
inline double lr_at(const ScheduleSpec& s, long long step) {
    s.validate();
    if (step < 0 || step > s.total_steps)
        throw ContractError("lr_at: step out of range");
    if (s.shape == ScheduleSpec::Shape::constant) return s.base_lr;
    if (step < s.warmup_steps)
        return s.base_lr * static_cast<double>(step) /
               static_cast<double>(s.warmup_steps);
    if (s.total_steps == s.warmup_steps) return s.base_lr;
    const double progress = static_cast<double>(step - s.warmup_steps) /
                            static_cast<double>(s.total_steps - s.warmup_steps);
    return s.base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

}  // namespace motadual
