// Adam with bias correction. Moment state lives here, keyed by parameter
// slot order; gradients are pulled from the leaf nodes of a forward pass.
#pragma once

#include <cmath>
#include <vector>

#include "shiftlab/model.hpp"

namespace shiftlab {

template <typename T>
class Adam {
  public:
    explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        if (lr <= 0 || beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1 || eps <= 0)
            throw config_error("adam: hyperparameters out of range");
    }

    std::int64_t t() const { return t_; }
    double lr() const { return lr_; }

    // One update over explicit (param, grad) pairs. Slot order must stay
    // stable across calls; shapes are checked against the stored moments.
    void step(const std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads) {
        if (params.size() != grads.size())
            throw run_error("adam: " + std::to_string(params.size()) + " params but " +
                            std::to_string(grads.size()) + " grads");
        if (m_.empty()) {
            for (const Tensor<T>* p : params) {
                m_.push_back(Tensor<T>::zeros(p->shape()));
                v_.push_back(Tensor<T>::zeros(p->shape()));
            }
        } else if (m_.size() != params.size()) {
            throw run_error("adam: slot count changed mid-run");
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t s = 0; s < params.size(); ++s) {
            Tensor<T>& p = *params[s];
            const Tensor<T>& g = *grads[s];
            if (!p.same_shape(g))
                throw shape_error("adam: grad " + shape_str(g.shape()) + " does not match param " +
                                  shape_str(p.shape()));
            if (!m_[s].same_shape(p)) throw shape_error("adam: param shape changed mid-run at slot " + std::to_string(s));
            for (std::int64_t i = 0; i < p.numel(); ++i) {
                const double gi = static_cast<double>(g[i]);
                const double mi = beta1_ * static_cast<double>(m_[s][i]) + (1.0 - beta1_) * gi;
                const double vi = beta2_ * static_cast<double>(v_[s][i]) + (1.0 - beta2_) * gi * gi;
                m_[s][i] = static_cast<T>(mi);
                v_[s][i] = static_cast<T>(vi);
                const double mhat = mi / bc1;
                const double vhat = vi / bc2;
                p[i] = static_cast<T>(static_cast<double>(p[i]) - lr_ * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

    // Gathers gradients produced by backward() on a forward pass over `model`.
    void step(Model<T>& model, const ForwardResult<T>& fr) {
        if (fr.weight_nodes.size() != model.params.size())
            throw run_error("adam: forward result does not belong to this model");
        std::vector<Tensor<T>*> params;
        std::vector<const Tensor<T>*> grads;
        for (std::size_t i = 0; i < model.params.size(); ++i) {
            if (fr.weight_nodes[i]->grad.numel() == 0 || fr.bias_nodes[i]->grad.numel() == 0)
                throw run_error("adam: no gradient for " + model.params[i].name +
                                "; run backward() on the loss first");
            params.push_back(&model.params[i].weight);
            grads.push_back(&fr.weight_nodes[i]->grad);
            params.push_back(&model.params[i].bias);
            grads.push_back(&fr.bias_nodes[i]->grad);
        }
        step(params, grads);
    }

  private:
    double lr_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

}  // namespace shiftlab
