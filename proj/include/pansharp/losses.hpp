#pragma once

#include "tensor.hpp"

namespace pansharp {

struct LossWeights {
    double lambda_s = 0.1;
    double lambda_f = 0.001;
    double tau = 1.0;
    double gamma = 1e-3;
    std::vector<double> alpha;  // per-tap; empty = all ones

    void validate() const {
        if (lambda_s < 0 || lambda_f < 0 || tau < 0 || gamma < 0)
            throw config_error("loss weights must be nonnegative");
        for (double a : alpha)
            if (a < 0) throw config_error("per-tap alpha must be nonnegative");
    }
};

namespace detail {

template <class T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* who) {
    if (a.shape() != b.shape())
        throw shape_error(std::string(who) + ": shape mismatch " + shape_str(a.shape()) +
                          " vs " + shape_str(b.shape()));
}

}  // namespace detail

// Uncertainty-weighted reconstruction objective for the teacher: elementwise
// |err| / (2 theta) + log(theta) / 2, averaged. Differentiable in all inputs;
// for fixed error e the minimizing theta is e itself.
template <class T>
Tensor<T> u_diff_loss(const Tensor<T>& x0_hat, const Tensor<T>& x0, const Tensor<T>& theta_hat) {
    detail::check_same_shape(x0_hat, x0, "u_diff_loss");
    detail::check_same_shape(theta_hat, x0, "u_diff_loss");
    for (T v : theta_hat.data())
        if (v < T(1e-3))
            throw contract_error("u_diff_loss: theta_hat below the 1e-3 positivity floor");
    auto err = abs(x0_hat - x0);
    return mean(err / mul_scalar(theta_hat, T(2)) + mul_scalar(log(theta_hat), T(0.5)));
}

// Ground-truth term of distillation, emphasized where the teacher is unsure.
// theta is treated as a constant weight (no gradient into the teacher).
template <class T>
Tensor<T> hard_loss(const Tensor<T>& x0_tilde, const Tensor<T>& x0, const Tensor<T>& theta_hat,
                    const LossWeights& w) {
    detail::check_same_shape(x0_tilde, x0, "hard_loss");
    detail::check_same_shape(theta_hat, x0, "hard_loss");
    auto weight = add_scalar(theta_hat.detach(), static_cast<T>(w.tau));
    return mean(weight * abs(x0_tilde - x0));
}

// Teacher-imitation term, active only where the teacher is confident
// (weight max(tau - theta, 0)); teacher outputs are constants here.
template <class T>
Tensor<T> soft_loss(const Tensor<T>& x0_tilde, const Tensor<T>& x0_hat,
                    const Tensor<T>& theta_hat, const LossWeights& w) {
    detail::check_same_shape(x0_tilde, x0_hat, "soft_loss");
    detail::check_same_shape(theta_hat, x0_hat, "soft_loss");
    auto weight = relu(add_scalar(neg(theta_hat.detach()), static_cast<T>(w.tau)));
    return mean(weight * abs(x0_tilde - x0_hat.detach()));
}

// Stage-tap alignment: sum_i alpha_i sqrt((mean|f_i - s_i|)^2 + gamma).
// The gamma term keeps the gradient finite (and zero) at exact alignment.
template <class T>
Tensor<T> feat_loss(const std::vector<Tensor<T>>& student_feats,
                    const std::vector<Tensor<T>>& teacher_feats, const LossWeights& w) {
    if (student_feats.size() != teacher_feats.size())
        throw contract_error("feat_loss: " + std::to_string(student_feats.size()) +
                             " student taps vs " + std::to_string(teacher_feats.size()) +
                             " teacher taps");
    if (!w.alpha.empty() && w.alpha.size() != student_feats.size())
        throw contract_error("feat_loss: alpha count does not match tap count");
    Tensor<T> total = Tensor<T>::scalar(T(0));
    for (size_t i = 0; i < student_feats.size(); ++i) {
        detail::check_same_shape(student_feats[i], teacher_feats[i], "feat_loss");
        auto d = mean(abs(student_feats[i] - teacher_feats[i].detach()));
        auto term = sqrt(add_scalar(d * d, static_cast<T>(w.gamma)));
        double a = w.alpha.empty() ? 1.0 : w.alpha[i];
        total = total + mul_scalar(term, static_cast<T>(a));
    }
    return total;
}

template <class T>
struct UKnowParts {
    Tensor<T> total, hard, soft, feat;
};

template <class T>
UKnowParts<T> u_know_loss(const Tensor<T>& x0_tilde, const Tensor<T>& x0,
                          const Tensor<T>& x0_hat, const Tensor<T>& theta_hat,
                          const std::vector<Tensor<T>>& student_feats,
                          const std::vector<Tensor<T>>& teacher_feats, const LossWeights& w) {
    w.validate();
    UKnowParts<T> p;
    p.hard = hard_loss(x0_tilde, x0, theta_hat, w);
    p.soft = soft_loss(x0_tilde, x0_hat, theta_hat, w);
    p.feat = feat_loss(student_feats, teacher_feats, w);
    p.total = p.hard + mul_scalar(p.soft, static_cast<T>(w.lambda_s)) +
              mul_scalar(p.feat, static_cast<T>(w.lambda_f));
    return p;
}

}  // namespace pansharp
