#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "nn_ops.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace pansharp {

// Named trainable leaves of one model. Layers borrow tensor handles from here;
// the optimizer and checkpoint writer walk the entries.
template <class T>
class ParamRegistry {
public:
    struct Entry {
        std::string name;
        Tensor<T> tensor;
    };

    Tensor<T> create(const std::string& name, Shape shape, std::vector<T> init) {
        if (find(name) >= 0) throw contract_error("duplicate parameter name '" + name + "'");
        if (static_cast<int64_t>(init.size()) != shape_numel(shape))
            throw shape_error("parameter '" + name + "' init size mismatch for " +
                              shape_str(shape));
        auto t = Tensor<T>::from(std::move(shape), std::move(init), true);
        entries_.push_back({name, t});
        return t;
    }

    Tensor<T> constant(const std::string& name, Shape shape, T value) {
        return create(name, shape, std::vector<T>(static_cast<size_t>(shape_numel(shape)), value));
    }

    // Kaiming-uniform: U(-b, b) with b = sqrt(6 / fan_in).
    Tensor<T> kaiming(const std::string& name, Shape shape, int64_t fan_in, Rng& rng) {
        double bound = std::sqrt(6.0 / double(fan_in));
        std::vector<T> init(static_cast<size_t>(shape_numel(shape)));
        for (auto& v : init)
            v = static_cast<T>((rng.uniform() * 2.0 - 1.0) * bound);
        return create(name, shape, std::move(init));
    }

    const std::vector<Entry>& entries() const { return entries_; }

    int64_t count() const {
        int64_t n = 0;
        for (const auto& e : entries_) n += e.tensor.numel();
        return n;
    }

    void zero_grad() {
        for (auto& e : entries_) e.tensor.zero_grad();
    }

    void set_requires_grad(bool v) {
        for (auto& e : entries_) e.tensor.set_requires_grad(v);
    }

    int find(const std::string& name) const {
        for (size_t i = 0; i < entries_.size(); ++i)
            if (entries_[i].name == name) return static_cast<int>(i);
        return -1;
    }

private:
    std::vector<Entry> entries_;
};

// x: (N, in) -> (N, out)
template <class T>
struct Linear {
    Tensor<T> W;  // (out, in)
    Tensor<T> b;  // (out)

    Linear() = default;
    Linear(ParamRegistry<T>& reg, const std::string& prefix, int64_t in, int64_t out, Rng& rng)
        : W(reg.kaiming(prefix + ".W", {out, in}, in, rng)),
          b(reg.constant(prefix + ".b", {out}, T(0))) {}

    Tensor<T> operator()(const Tensor<T>& x) const {
        if (x.rank() != 2 || x.dim(1) != W.dim(1))
            throw contract_error("linear '" + shape_str(x.shape()) + "' does not match weight " +
                                 shape_str(W.shape()));
        return matmul(x, W, false, true) + reshape(b, {1, b.dim(0)});
    }
};

// x: (N, Cin, H, W) -> (N, Cout, H', W')
template <class T>
struct Conv2d {
    Tensor<T> W;  // (Cout, Cin/groups, k, k)
    Tensor<T> b;  // (Cout)
    int64_t stride = 1, pad = 0, groups = 1;

    Conv2d() = default;
    Conv2d(ParamRegistry<T>& reg, const std::string& prefix, int64_t cin, int64_t cout, int64_t k,
           Rng& rng, int64_t stride_ = 1, int64_t pad_ = -1, int64_t groups_ = 1)
        : stride(stride_), pad(pad_ < 0 ? k / 2 : pad_), groups(groups_) {
        W = reg.kaiming(prefix + ".W", {cout, cin / groups, k, k}, (cin / groups) * k * k, rng);
        b = reg.constant(prefix + ".b", {cout}, T(0));
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, W, b, stride, pad, groups); }
};

// Learned per-channel scale/shift around the parameter-free normalization.
template <class T>
struct GroupNorm {
    Tensor<T> gamma, beta;
    int groups = 1;

    GroupNorm() = default;
    GroupNorm(ParamRegistry<T>& reg, const std::string& prefix, int64_t c, int groups_ = 0)
        : gamma(reg.constant(prefix + ".gamma", {c}, T(1))),
          beta(reg.constant(prefix + ".beta", {c}, T(0))),
          groups(groups_ > 0 ? groups_ : group_norm_groups(c)) {}

    Tensor<T> operator()(const Tensor<T>& x) const {
        return group_norm_affine(x, groups, gamma, beta);
    }
};

// Transformer-style sinusoidal embedding of integer timesteps, (N, dim).
template <class T>
Tensor<T> timestep_embedding(const std::vector<int64_t>& t, int64_t dim) {
    if (dim % 2 != 0) throw contract_error("timestep embedding dim must be even");
    int64_t n = static_cast<int64_t>(t.size());
    int64_t half = dim / 2;
    std::vector<T> out(static_cast<size_t>(n * dim));
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < half; ++j) {
            double freq = std::exp(-std::log(10000.0) * double(j) / double(half));
            double a = double(t[static_cast<size_t>(i)]) * freq;
            out[i * dim + j] = static_cast<T>(std::sin(a));
            out[i * dim + half + j] = static_cast<T>(std::cos(a));
        }
    return Tensor<T>::from({n, dim}, std::move(out));
}

// Pre-activation residual block; the timestep embedding enters additively
// after the first convolution through a per-block linear projection.
template <class T>
struct ResBlock {
    GroupNorm<T> gn1, gn2;
    Conv2d<T> conv1, conv2;
    Linear<T> emb_proj;
    Conv2d<T> skip;  // 1x1, only when cin != cout
    bool has_skip = false, has_emb = false;

    ResBlock() = default;
    ResBlock(ParamRegistry<T>& reg, const std::string& prefix, int64_t cin, int64_t cout,
             int64_t emb_dim, Rng& rng, int gn_groups = 0)
        : gn1(reg, prefix + ".gn1", cin, gn_groups),
          gn2(reg, prefix + ".gn2", cout, gn_groups),
          conv1(reg, prefix + ".conv1", cin, cout, 3, rng),
          conv2(reg, prefix + ".conv2", cout, cout, 3, rng) {
        if (emb_dim > 0) {
            emb_proj = Linear<T>(reg, prefix + ".emb", emb_dim, cout, rng);
            has_emb = true;
        }
        if (cin != cout) {
            skip = Conv2d<T>(reg, prefix + ".skip", cin, cout, 1, rng);
            has_skip = true;
        }
    }

    // emb: (N, emb_dim) or an empty tensor when the block is unconditioned
    Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& emb) const {
        auto h = conv1(gelu(gn1(x)));
        if (has_emb) {
            auto e = emb_proj(emb);
            h = h + reshape(e, {e.dim(0), e.dim(1), 1, 1});
        }
        h = conv2(gelu(gn2(h)));
        return h + (has_skip ? skip(x) : x);
    }

    Tensor<T> operator()(const Tensor<T>& x) const {
        if (has_emb) throw contract_error("conditioned ResBlock called without embedding");
        return operator()(x, Tensor<T>());
    }
};

}  // namespace pansharp
