#pragma once

#include "tensor.hpp"

namespace pansharp {

// Central-difference oracle for any scalar-valued function of one tensor.
// Returns max over elements of |analytic - central| / (|central| + 1e-12).
template <class T, class F>
double finite_difference_check(F f, const Tensor<T>& x0, double step) {
    Tensor<T> x = Tensor<T>::from(x0.shape(), x0.data(), true);
    Tensor<T> loss = f(x);
    if (loss.numel() != 1)
        throw contract_error("finite_difference_check: f must be scalar-valued");
    if (!std::isfinite(static_cast<double>(loss.item())))
        throw numeric_error("finite_difference_check: non-finite loss");
    loss.backward();
    std::vector<T> analytic = x.has_grad() ? x.grad_data() : std::vector<T>(x.data().size(), T(0));

    NoGradGuard ng;
    std::vector<T> base = x0.data();
    double worst = 0.0;
    for (size_t i = 0; i < base.size(); ++i) {
        std::vector<T> plus = base, minus = base;
        plus[i] += static_cast<T>(step);
        minus[i] -= static_cast<T>(step);
        double fp = static_cast<double>(f(Tensor<T>::from(x0.shape(), plus)).item());
        double fm = static_cast<double>(f(Tensor<T>::from(x0.shape(), minus)).item());
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw numeric_error("finite_difference_check: non-finite intermediate at element " +
                                std::to_string(i));
        double cd = (fp - fm) / (2.0 * step);
        double rel = std::abs(static_cast<double>(analytic[i]) - cd) / (std::abs(cd) + 1e-12);
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace pansharp
