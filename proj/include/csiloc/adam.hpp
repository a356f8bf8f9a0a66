#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "csiloc/errors.hpp"
#include "csiloc/tensor.hpp"

namespace csiloc {

// Adaptive moment estimation with bias correction. Moments are kept in
// double regardless of the parameter type; a parameter without a gradient
// this step is treated as having gradient zero.
template <typename R>
class Adam {
  public:
    struct Hyper {
        double lr = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    Adam(std::vector<Tensor<R>> params, Hyper hp = {}) : params_(std::move(params)), hp_(hp) {
        if (hp_.lr < 0 || hp_.beta1 < 0 || hp_.beta1 >= 1 || hp_.beta2 < 0 || hp_.beta2 >= 1)
            throw ConfigError("adam: invalid hyperparameters");
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (const auto &p : params_) {
            m_.emplace_back(p.values().size(), 0.0);
            v_.emplace_back(p.values().size(), 0.0);
        }
    }

    void step() {
        ++t_;
        const double c1 = 1.0 - std::pow(hp_.beta1, double(t_));
        const double c2 = 1.0 - std::pow(hp_.beta2, double(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto &vals = params_[i].values();
            const bool has_g = params_[i].has_grad();
            const auto &g = has_g ? params_[i].grad() : empty_;
            for (std::size_t j = 0; j < vals.size(); ++j) {
                const double gj = has_g ? double(g[j]) : 0.0;
                m_[i][j] = hp_.beta1 * m_[i][j] + (1.0 - hp_.beta1) * gj;
                v_[i][j] = hp_.beta2 * v_[i][j] + (1.0 - hp_.beta2) * gj * gj;
                const double mhat = m_[i][j] / c1;
                const double vhat = v_[i][j] / c2;
                vals[j] = R(double(vals[j]) - hp_.lr * mhat / (std::sqrt(vhat) + hp_.eps));
            }
        }
    }

    void zero_grad() {
        for (auto &p : params_) p.zero_grad();
    }

    const Hyper &hyper() const { return hp_; }
    void set_lr(double lr) { hp_.lr = lr; }
    std::uint64_t steps() const { return t_; }
    std::size_t num_params() const { return params_.size(); }

    // checkpoint access: first/second moment blobs and the step counter
    std::vector<std::vector<double>> &moments1() { return m_; }
    std::vector<std::vector<double>> &moments2() { return v_; }
    const std::vector<std::vector<double>> &moments1() const { return m_; }
    const std::vector<std::vector<double>> &moments2() const { return v_; }
    void restore_step(std::uint64_t t) { t_ = t; }

  private:
    std::vector<Tensor<R>> params_;
    Hyper hp_;
    std::vector<std::vector<double>> m_, v_;
    std::uint64_t t_ = 0;
    inline static const std::vector<R> empty_{};
};

} // namespace csiloc
