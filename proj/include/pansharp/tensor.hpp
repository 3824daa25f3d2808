#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "common.hpp"
#include "rng.hpp"

namespace pansharp {

// Graph construction can be switched off (frozen teacher forward, sampling).
inline bool& grad_mode() {
    thread_local bool on = true;
    return on;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
};

// Dense row-major tensor with reverse-mode autodiff. A Tensor is a cheap
// handle onto a graph node; nodes are immutable after construction except
// for grad accumulation.
template <class T>
class Tensor {
public:
    struct Node {
        Shape shape;
        std::vector<T> data;
        std::vector<T> grad;  // allocated on first accumulation
        bool requires_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backward_fn;

        int64_t numel() const { return static_cast<int64_t>(data.size()); }
        void ensure_grad() {
            if (grad.empty()) grad.assign(data.size(), T(0));
        }
    };

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (shape_numel(shape) != static_cast<int64_t>(data.size()))
            throw shape_error("tensor data length " + std::to_string(data.size()) +
                              " does not match shape " + shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->data = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(n);
    }

    static Tensor full(Shape shape, T value, bool requires_grad = false) {
        std::vector<T> d(static_cast<size_t>(shape_numel(shape)), value);
        return from(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), T(0), requires_grad);
    }

    static Tensor scalar(T value, bool requires_grad = false) {
        return from(Shape{}, {value}, requires_grad);
    }

    static Tensor randn(Shape shape, Rng& rng, T stddev = T(1), bool requires_grad = false) {
        std::vector<T> d(static_cast<size_t>(shape_numel(shape)));
        for (auto& v : d) v = static_cast<T>(rng.normal()) * stddev;
        return from(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor rand_uniform(Shape shape, Rng& rng, T lo, T hi, bool requires_grad = false) {
        std::vector<T> d(static_cast<size_t>(shape_numel(shape)));
        for (auto& v : d) v = lo + static_cast<T>(rng.uniform()) * (hi - lo);
        return from(std::move(shape), std::move(d), requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t numel() const { return node_->numel(); }
    int64_t dim(int i) const {
        int r = static_cast<int>(node_->shape.size());
        if (i < 0) i += r;
        return node_->shape[static_cast<size_t>(i)];
    }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }

    const std::vector<T>& data() const { return node_->data; }
    std::vector<T>& mutable_data() { return node_->data; }  // leaves only (param updates)
    const std::vector<T>& grad_data() const { return node_->grad; }
    bool has_grad() const { return !node_->grad.empty(); }

    T item() const {
        if (numel() != 1) throw contract_error("item() on tensor with shape " + shape_str(shape()));
        return node_->data[0];
    }

    T at(std::initializer_list<int64_t> idx) const {
        int64_t off = 0;
        size_t i = 0;
        for (int64_t v : idx) {
            off = off * node_->shape[i] + v;
            ++i;
        }
        return node_->data[static_cast<size_t>(off)];
    }

    void zero_grad() { node_->grad.clear(); }

    Tensor grad() const {
        if (node_->grad.empty()) return Tensor::zeros(node_->shape);
        return Tensor::from(node_->shape, node_->grad);
    }

    // Same data, detached from the graph.
    Tensor detach() const {
        auto n = std::make_shared<Node>();
        n->shape = node_->shape;
        n->data = node_->data;
        return Tensor(n);
    }

    void backward() const;

    std::shared_ptr<Node> node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

namespace detail {

template <class T>
Tensor<T> make_op(Shape shape, std::vector<T> data,
                  std::vector<std::shared_ptr<typename Tensor<T>::Node>> parents,
                  std::function<void(typename Tensor<T>::Node&)> backward_fn) {
    auto n = std::make_shared<typename Tensor<T>::Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    bool rg = false;
    if (grad_mode())
        for (auto& p : parents)
            if (p->requires_grad) rg = true;
    n->requires_grad = rg;
    if (rg) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor<T>(n);
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (size_t i = 0; i < r; ++i) {
        int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw shape_error("cannot broadcast shapes " + shape_str(a) + " and " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Element strides of `s` aligned to broadcast result `out`; 0 where stretched.
inline std::vector<int64_t> broadcast_strides(const Shape& s, const Shape& out) {
    std::vector<int64_t> st(out.size(), 0);
    int64_t stride = 1;
    for (size_t i = 0; i < s.size(); ++i) {
        size_t j = s.size() - 1 - i;
        size_t oj = out.size() - 1 - i;
        st[oj] = (s[j] == 1 && out[oj] != 1) ? 0 : stride;
        stride *= s[j];
    }
    return st;
}

// Iterates the broadcast index space calling f(out_linear, a_linear, b_linear).
template <class F>
void broadcast_iter(const Shape& oshape, const std::vector<int64_t>& sa,
                    const std::vector<int64_t>& sb, F&& f) {
    int64_t n = shape_numel(oshape);
    size_t r = oshape.size();
    if (r == 0) {
        f(0, 0, 0);
        return;
    }
    std::vector<int64_t> idx(r, 0);
    int64_t ia = 0, ib = 0;
    for (int64_t o = 0; o < n; ++o) {
        f(o, ia, ib);
        for (size_t d = r; d-- > 0;) {
            idx[d]++;
            ia += sa[d];
            ib += sb[d];
            if (idx[d] < oshape[d]) break;
            ia -= sa[d] * oshape[d];
            ib -= sb[d] * oshape[d];
            idx[d] = 0;
        }
    }
}

// Largest trailing block over which each operand is either contiguous
// (inner step 1) or constant (inner step 0); `keep` is how many leading dims
// remain for the generic iterator.
inline int64_t inner_run(const Shape& o, const std::vector<int64_t>& sa,
                         const std::vector<int64_t>& sb, int64_t& stepa, int64_t& stepb,
                         size_t& keep) {
    int64_t run = 1;
    bool a_const = true, a_lin = true, b_const = true, b_lin = true;
    keep = o.size();
    while (keep > 0) {
        size_t d = keep - 1;
        if (o[d] != 1) {
            bool ac = a_const && sa[d] == 0;
            bool al = a_lin && sa[d] == run;
            bool bc = b_const && sb[d] == 0;
            bool bl = b_lin && sb[d] == run;
            if ((!ac && !al) || (!bc && !bl)) break;
            a_const = ac;
            a_lin = al;
            b_const = bc;
            b_lin = bl;
            run *= o[d];
        }
        --keep;
    }
    stepa = a_const ? 0 : 1;
    stepb = b_const ? 0 : 1;
    return run;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// backward

template <class T>
void Tensor<T>::backward() const {
    if (numel() != 1)
        throw contract_error("backward() requires a scalar loss, got shape " + shape_str(shape()));
    if (!node_->requires_grad) return;  // constant loss: no-op

    // post-order DFS, then reverse
    std::vector<Node*> order;
    std::vector<std::pair<Node*, size_t>> stack;
    std::vector<Node*> seen;
    auto visited = [&](Node* n) {
        return std::find(seen.begin(), seen.end(), n) != seen.end();
    };
    // use a sorted vector as a set for determinism-free membership
    std::vector<Node*> mark;
    auto in_mark = [&](Node* n) {
        return std::binary_search(mark.begin(), mark.end(), n);
    };
    auto add_mark = [&](Node* n) {
        mark.insert(std::upper_bound(mark.begin(), mark.end(), n), n);
    };
    (void)visited;
    (void)seen;
    stack.push_back({node_.get(), 0});
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i == 0 && in_mark(n)) {
            stack.pop_back();
            continue;
        }
        if (i == 0) add_mark(n);
        if (i < n->parents.size()) {
            Node* p = n->parents[i].get();
            ++i;
            if (!in_mark(p) && p->requires_grad) stack.push_back({p, 0});
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    // Intermediate grads are scratch space for this pass; only leaves keep
    // accumulating across calls.
    for (Node* n : order)
        if (n->backward_fn) n->grad.clear();
    node_->ensure_grad();
    node_->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

// ---------------------------------------------------------------------------
// elementwise binary with broadcasting

namespace detail {

enum class BinOp { Add, Sub, Mul, Div };

// Work is done in contiguous-or-constant trailing runs (see inner_run); the
// generic broadcast iterator only walks the leading dims.
template <class T>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, BinOp op) {
    Shape oshape = broadcast_shape(a.shape(), b.shape());
    auto sa = broadcast_strides(a.shape(), oshape);
    auto sb = broadcast_strides(b.shape(), oshape);
    int64_t da, db;
    size_t keep;
    const int64_t run = inner_run(oshape, sa, sb, da, db, keep);
    Shape outer(oshape.begin(), oshape.begin() + keep);
    std::vector<int64_t> osa(sa.begin(), sa.begin() + keep);
    std::vector<int64_t> osb(sb.begin(), sb.begin() + keep);

    const auto& ad = a.data();
    const auto& bd = b.data();
    std::vector<T> out(static_cast<size_t>(shape_numel(oshape)));
    auto fwd = [&](auto f) {
        broadcast_iter(outer, osa, osb, [&](int64_t o, int64_t ia, int64_t ib) {
            T* po = out.data() + o * run;
            const T* pa = ad.data() + ia;
            const T* pb = bd.data() + ib;
            if (da && db)
                for (int64_t j = 0; j < run; ++j) po[j] = f(pa[j], pb[j]);
            else if (da) {
                T bv = *pb;
                for (int64_t j = 0; j < run; ++j) po[j] = f(pa[j], bv);
            } else {
                T av = *pa;
                for (int64_t j = 0; j < run; ++j) po[j] = f(av, pb[j * db]);
            }
        });
    };
    switch (op) {
        case BinOp::Add: fwd([](T x, T y) { return x + y; }); break;
        case BinOp::Sub: fwd([](T x, T y) { return x - y; }); break;
        case BinOp::Mul: fwd([](T x, T y) { return x * y; }); break;
        case BinOp::Div:
            fwd([](T x, T y) {
                if (y == T(0)) throw value_domain_error("division by exact zero");
                return x / y;
            });
            break;
    }
    auto an = a.node();
    auto bn = b.node();
    return make_op<T>(
        oshape, std::move(out), {an, bn},
        [an, bn, outer, osa, osb, run, da, db, op](typename Tensor<T>::Node& self) {
            const auto& g = self.grad;
            const auto& ad = an->data;
            const auto& bd = bn->data;
            bool ga = an->requires_grad, gb = bn->requires_grad;
            if (ga) an->ensure_grad();
            if (gb) bn->ensure_grad();
            // accumulate f(j) into a run (step 1) or reduce it (step 0)
            auto accum = [run](T* dst, int64_t step, auto f) {
                if (step)
                    for (int64_t j = 0; j < run; ++j) dst[j] += f(j);
                else {
                    T s = T(0);
                    for (int64_t j = 0; j < run; ++j) s += f(j);
                    *dst += s;
                }
            };
            broadcast_iter(outer, osa, osb, [&](int64_t o, int64_t ia, int64_t ib) {
                const T* pg = g.data() + o * run;
                const T* pa = ad.data() + ia;
                const T* pb = bd.data() + ib;
                T* dga = ga ? an->grad.data() + ia : nullptr;
                T* dgb = gb ? bn->grad.data() + ib : nullptr;
                switch (op) {
                    case BinOp::Add:
                        if (ga) accum(dga, da, [&](int64_t j) { return pg[j]; });
                        if (gb) accum(dgb, db, [&](int64_t j) { return pg[j]; });
                        break;
                    case BinOp::Sub:
                        if (ga) accum(dga, da, [&](int64_t j) { return pg[j]; });
                        if (gb) accum(dgb, db, [&](int64_t j) { return -pg[j]; });
                        break;
                    case BinOp::Mul:
                        if (ga && gb && da && db) {
                            for (int64_t j = 0; j < run; ++j) {
                                dga[j] += pg[j] * pb[j];
                                dgb[j] += pg[j] * pa[j];
                            }
                            break;
                        }
                        if (ga) accum(dga, da, [&](int64_t j) { return pg[j] * pb[j * db]; });
                        if (gb) accum(dgb, db, [&](int64_t j) { return pg[j] * pa[j * da]; });
                        break;
                    case BinOp::Div:
                        if (ga) accum(dga, da, [&](int64_t j) { return pg[j] / pb[j * db]; });
                        if (gb)
                            accum(dgb, db, [&](int64_t j) {
                                T bv = pb[j * db];
                                return -pg[j] * pa[j * da] / (bv * bv);
                            });
                        break;
                }
            });
        });
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(a, b, detail::BinOp::Add);
}
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(a, b, detail::BinOp::Sub);
}
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(a, b, detail::BinOp::Mul);
}
template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(a, b, detail::BinOp::Div);
}

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <class T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }

// ---------------------------------------------------------------------------
// elementwise unary

namespace detail {

// f: value -> value; df: (x, y, g) -> dx contribution
template <class T, class FwdF, class BwdF>
Tensor<T> unary_op(const Tensor<T>& a, FwdF fwd, BwdF bwd) {
    const auto& ad = a.data();
    std::vector<T> out(ad.size());
    for (size_t i = 0; i < ad.size(); ++i) out[i] = fwd(ad[i]);
    auto an = a.node();
    auto on_shape = a.shape();
    return make_op<T>(on_shape, std::move(out), {an},
                      [an, bwd](typename Tensor<T>::Node& self) {
                          if (!an->requires_grad) return;
                          an->ensure_grad();
                          for (size_t i = 0; i < self.data.size(); ++i)
                              an->grad[i] += bwd(an->data[i], self.data[i], self.grad[i]);
                      });
}

}  // namespace detail

template <class T>
Tensor<T> neg(const Tensor<T>& a) {
    return detail::unary_op(a, [](T x) { return -x; },
                            [](T, T, T g) { return -g; });
}
template <class T>
Tensor<T> operator-(const Tensor<T>& a) { return neg(a); }

template <class T>
Tensor<T> exp(const Tensor<T>& a) {
    return detail::unary_op(a, [](T x) { return std::exp(x); },
                            [](T, T y, T g) { return g * y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& a) {
    for (T v : a.data())
        if (v <= T(0)) throw value_domain_error("log of non-positive value; callers must pre-clamp");
    return detail::unary_op(a, [](T x) { return std::log(x); },
                            [](T x, T, T g) { return g / x; });
}

template <class T>
Tensor<T> sqrt(const Tensor<T>& a) {
    for (T v : a.data())
        if (v < T(0)) throw value_domain_error("sqrt of negative value");
    return detail::unary_op(a, [](T x) { return std::sqrt(x); },
                            [](T, T y, T g) { return g / (T(2) * y); });
}

template <class T>
Tensor<T> abs(const Tensor<T>& a) {
    return detail::unary_op(a, [](T x) { return std::abs(x); },
                            [](T x, T, T g) { return x > T(0) ? g : (x < T(0) ? -g : T(0)); });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
    return detail::unary_op(a, [](T x) { return x > T(0) ? x : T(0); },
                            [](T x, T, T g) { return x > T(0) ? g : T(0); });
}

// The derivative is stashed at forward time so the backward pass is a single
// multiply instead of a second erf/exp sweep.
template <class T>
Tensor<T> gelu(const Tensor<T>& a) {
    constexpr T inv_sqrt2 = T(0.7071067811865475244);
    constexpr T inv_sqrt2pi = T(0.3989422804014326779);
    const auto& ad = a.data();
    auto an = a.node();
    bool track = grad_mode() && an->requires_grad;
    std::vector<T> out(ad.size());
    std::vector<T> der(track ? ad.size() : 0);
    for (size_t i = 0; i < ad.size(); ++i) {
        T x = ad[i];
        T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
        out[i] = x * cdf;
        if (track) der[i] = cdf + x * inv_sqrt2pi * std::exp(T(-0.5) * x * x);
    }
    return detail::make_op<T>(a.shape(), std::move(out), {an},
                              [an, der = std::move(der)](typename Tensor<T>::Node& self) {
                                  an->ensure_grad();
                                  for (size_t i = 0; i < der.size(); ++i)
                                      an->grad[i] += self.grad[i] * der[i];
                              });
}

template <class T>
Tensor<T> softplus(const Tensor<T>& a) {
    return detail::unary_op(
        a,
        [](T x) {
            return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
        },
        [](T x, T, T g) {
            // sigmoid(x)
            T s = x > T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
            return g * s;
        });
}

template <class T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
    return detail::unary_op(
        a, [lo, hi](T x) { return std::min(std::max(x, lo), hi); },
        [lo, hi](T x, T, T g) { return (x >= lo && x <= hi) ? g : T(0); });
}

template <class T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
    return detail::unary_op(a, [s](T x) { return x * s; },
                            [s](T, T, T g) { return g * s; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
    return detail::unary_op(a, [s](T x) { return x + s; },
                            [](T, T, T g) { return g; });
}

template <class T>
Tensor<T> operator*(const Tensor<T>& a, T s) { return mul_scalar(a, s); }
template <class T>
Tensor<T> operator*(T s, const Tensor<T>& a) { return mul_scalar(a, s); }
template <class T>
Tensor<T> operator+(const Tensor<T>& a, T s) { return add_scalar(a, s); }

// ---------------------------------------------------------------------------
// reductions

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
    T acc = 0;
    for (T v : a.data()) acc += v;
    auto an = a.node();
    return detail::make_op<T>(Shape{}, {acc}, {an},
                              [an](typename Tensor<T>::Node& self) {
                                  an->ensure_grad();
                                  T g = self.grad[0];
                                  for (auto& v : an->grad) v += g;
                              });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
    T scale = T(1) / static_cast<T>(a.numel());
    return mul_scalar(sum(a), scale);
}

// Sum over one axis. keepdim keeps a size-1 dim in place.
template <class T>
Tensor<T> sum_axis(const Tensor<T>& a, int axis, bool keepdim = false) {
    int r = a.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r)
        throw shape_error("sum_axis: axis out of range for shape " + shape_str(a.shape()));
    const Shape& s = a.shape();
    int64_t outer = 1, n = s[axis], inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    for (int i = axis + 1; i < r; ++i) inner *= s[i];
    Shape oshape;
    for (int i = 0; i < r; ++i) {
        if (i == axis) {
            if (keepdim) oshape.push_back(1);
        } else {
            oshape.push_back(s[i]);
        }
    }
    const auto& ad = a.data();
    std::vector<T> out(static_cast<size_t>(outer * inner), T(0));
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t k = 0; k < n; ++k) {
            const T* src = ad.data() + (o * n + k) * inner;
            T* dst = out.data() + o * inner;
            for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    auto an = a.node();
    return detail::make_op<T>(oshape, std::move(out), {an},
                              [an, outer, n, inner](typename Tensor<T>::Node& self) {
                                  an->ensure_grad();
                                  for (int64_t o = 0; o < outer; ++o)
                                      for (int64_t k = 0; k < n; ++k) {
                                          T* dst = an->grad.data() + (o * n + k) * inner;
                                          const T* g = self.grad.data() + o * inner;
                                          for (int64_t i = 0; i < inner; ++i) dst[i] += g[i];
                                      }
                              });
}

template <class T>
Tensor<T> mean_axis(const Tensor<T>& a, int axis, bool keepdim = false) {
    int r = a.rank();
    int ax = axis < 0 ? axis + r : axis;
    T scale = T(1) / static_cast<T>(a.shape()[ax]);
    return mul_scalar(sum_axis(a, axis, keepdim), scale);
}

// ---------------------------------------------------------------------------
// softmax over the last axis

template <class T>
Tensor<T> softmax_lastdim(const Tensor<T>& a) {
    if (a.rank() == 0) throw shape_error("softmax on a scalar");
    int64_t n = a.shape().back();
    int64_t rows = a.numel() / n;
    const auto& ad = a.data();
    std::vector<T> out(ad.size());
    for (int64_t r = 0; r < rows; ++r) {
        const T* x = ad.data() + r * n;
        T* y = out.data() + r * n;
        T m = x[0];
        for (int64_t i = 1; i < n; ++i) m = std::max(m, x[i]);
        T z = 0;
        for (int64_t i = 0; i < n; ++i) {
            y[i] = std::exp(x[i] - m);
            z += y[i];
        }
        for (int64_t i = 0; i < n; ++i) y[i] /= z;
    }
    auto an = a.node();
    return detail::make_op<T>(a.shape(), std::move(out), {an},
                              [an, rows, n](typename Tensor<T>::Node& self) {
                                  an->ensure_grad();
                                  for (int64_t r = 0; r < rows; ++r) {
                                      const T* s = self.data.data() + r * n;
                                      const T* g = self.grad.data() + r * n;
                                      T dot = 0;
                                      for (int64_t i = 0; i < n; ++i) dot += g[i] * s[i];
                                      T* dst = an->grad.data() + r * n;
                                      for (int64_t i = 0; i < n; ++i) dst[i] += s[i] * (g[i] - dot);
                                  }
                              });
}

// ---------------------------------------------------------------------------
// shape ops

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
    if (shape_numel(new_shape) != a.numel())
        throw shape_error("reshape from " + shape_str(a.shape()) + " to " + shape_str(new_shape) +
                          " changes element count");
    auto an = a.node();
    std::vector<T> out = a.data();
    return detail::make_op<T>(std::move(new_shape), std::move(out), {an},
                              [an](typename Tensor<T>::Node& self) {
                                  an->ensure_grad();
                                  for (size_t i = 0; i < self.grad.size(); ++i)
                                      an->grad[i] += self.grad[i];
                              });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw contract_error("concat of zero tensors");
    int r = parts[0].rank();
    if (axis < 0) axis += r;
    Shape oshape = parts[0].shape();
    int64_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != r) throw shape_error("concat rank mismatch");
        for (int i = 0; i < r; ++i)
            if (i != axis && p.shape()[i] != oshape[i])
                throw shape_error("concat shape mismatch: " + shape_str(p.shape()) + " vs " +
                                  shape_str(oshape));
        total += p.shape()[axis];
    }
    oshape[axis] = total;
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= oshape[i];
    for (int i = axis + 1; i < r; ++i) inner *= oshape[i];

    std::vector<T> out(static_cast<size_t>(shape_numel(oshape)));
    std::vector<int64_t> offs;  // per-part start along axis
    {
        int64_t off = 0;
        for (const auto& p : parts) {
            offs.push_back(off);
            int64_t na = p.shape()[axis];
            const auto& pd = p.data();
            for (int64_t o = 0; o < outer; ++o)
                std::memcpy(out.data() + (o * total + off) * inner, pd.data() + o * na * inner,
                            static_cast<size_t>(na * inner) * sizeof(T));
            off += na;
        }
    }
    std::vector<std::shared_ptr<typename Tensor<T>::Node>> pnodes;
    std::vector<int64_t> sizes;
    for (const auto& p : parts) {
        pnodes.push_back(p.node());
        sizes.push_back(p.shape()[axis]);
    }
    return detail::make_op<T>(
        oshape, std::move(out), pnodes,
        [pnodes, offs, sizes, outer, inner, total](typename Tensor<T>::Node& self) {
            for (size_t k = 0; k < pnodes.size(); ++k) {
                auto& p = pnodes[k];
                if (!p->requires_grad) continue;
                p->ensure_grad();
                int64_t na = sizes[k], off = offs[k];
                for (int64_t o = 0; o < outer; ++o) {
                    const T* g = self.grad.data() + (o * total + off) * inner;
                    T* dst = p->grad.data() + o * na * inner;
                    for (int64_t i = 0; i < na * inner; ++i) dst[i] += g[i];
                }
            }
        });
}

template <class T>
Tensor<T> slice(const Tensor<T>& a, int axis, int64_t start, int64_t len) {
    int r = a.rank();
    if (axis < 0) axis += r;
    const Shape& s = a.shape();
    if (start < 0 || start + len > s[axis])
        throw shape_error("slice [" + std::to_string(start) + "," + std::to_string(start + len) +
                          ") out of range for axis size " + std::to_string(s[axis]));
    Shape oshape = s;
    oshape[axis] = len;
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    for (int i = axis + 1; i < r; ++i) inner *= s[i];
    int64_t na = s[axis];
    const auto& ad = a.data();
    std::vector<T> out(static_cast<size_t>(shape_numel(oshape)));
    for (int64_t o = 0; o < outer; ++o)
        std::memcpy(out.data() + o * len * inner, ad.data() + (o * na + start) * inner,
                    static_cast<size_t>(len * inner) * sizeof(T));
    auto an = a.node();
    return detail::make_op<T>(oshape, std::move(out), {an},
                              [an, outer, inner, na, start, len](typename Tensor<T>::Node& self) {
                                  an->ensure_grad();
                                  for (int64_t o = 0; o < outer; ++o) {
                                      const T* g = self.grad.data() + o * len * inner;
                                      T* dst = an->grad.data() + (o * na + start) * inner;
                                      for (int64_t i = 0; i < len * inner; ++i) dst[i] += g[i];
                                  }
                              });
}

// ---------------------------------------------------------------------------
// matmul (2D, optionally batched over one leading dim), Eigen-backed

namespace detail {

template <class T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using EMap = Eigen::Map<EMat<T>>;
template <class T>
using ECMap = Eigen::Map<const EMat<T>>;

// C (m x n) += or = op(A) * op(B)
template <class T>
void gemm(const T* a, bool ta, int64_t ar, int64_t ac, const T* b, bool tb, int64_t br,
          int64_t bc, T* c, bool accumulate) {
    ECMap<T> A(a, ar, ac), B(b, br, bc);
    int64_t m = ta ? ac : ar;
    int64_t n = tb ? br : bc;
    EMap<T> C(c, m, n);
    if (!ta && !tb) {
        if (accumulate) C.noalias() += A * B; else C.noalias() = A * B;
    } else if (ta && !tb) {
        if (accumulate) C.noalias() += A.transpose() * B; else C.noalias() = A.transpose() * B;
    } else if (!ta && tb) {
        if (accumulate) C.noalias() += A * B.transpose(); else C.noalias() = A * B.transpose();
    } else {
        if (accumulate) C.noalias() += A.transpose() * B.transpose();
        else C.noalias() = A.transpose() * B.transpose();
    }
}

}  // namespace detail

// matmul of (M,K)x(K,N) or batched (B,M,K)x(B,K,N); transpose flags apply to
// the stored layout of each operand.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool ta = false, bool tb = false) {
    int ra = a.rank(), rb = b.rank();
    if ((ra != 2 && ra != 3) || ra != rb)
        throw shape_error("matmul expects equal-rank 2D or 3D operands, got " +
                          shape_str(a.shape()) + " and " + shape_str(b.shape()));
    int64_t batch = ra == 3 ? a.shape()[0] : 1;
    if (ra == 3 && b.shape()[0] != batch)
        throw shape_error("matmul batch mismatch: " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
    int64_t ar = a.shape()[ra - 2], ac = a.shape()[ra - 1];
    int64_t br = b.shape()[rb - 2], bc = b.shape()[rb - 1];
    int64_t m = ta ? ac : ar, k = ta ? ar : ac;
    int64_t k2 = tb ? bc : br, n = tb ? br : bc;
    if (k != k2)
        throw shape_error("matmul inner dimension mismatch: " + shape_str(a.shape()) +
                          (ta ? "^T" : "") + " x " + shape_str(b.shape()) + (tb ? "^T" : ""));
    Shape oshape = ra == 3 ? Shape{batch, m, n} : Shape{m, n};
    std::vector<T> out(static_cast<size_t>(batch * m * n));
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (int64_t bi = 0; bi < batch; ++bi)
        detail::gemm(ad.data() + bi * ar * ac, ta, ar, ac, bd.data() + bi * br * bc, tb, br, bc,
                     out.data() + bi * m * n, false);
    auto an = a.node();
    auto bn = b.node();
    return detail::make_op<T>(
        oshape, std::move(out), {an, bn},
        [an, bn, ta, tb, batch, ar, ac, br, bc, m, n, k](typename Tensor<T>::Node& self) {
            const auto& g = self.grad;
            if (an->requires_grad) {
                an->ensure_grad();
                for (int64_t bi = 0; bi < batch; ++bi) {
                    const T* G = g.data() + bi * m * n;
                    const T* B = bn->data.data() + bi * br * bc;
                    T* dA = an->grad.data() + bi * ar * ac;
                    // logical dA' = G * B'^T ; map back through ta
                    if (!ta) {
                        // dA (m x k): G (m,n) * B'(k,n)^T
                        if (!tb) detail::gemm(G, false, m, n, B, true, br, bc, dA, true);
                        else detail::gemm(G, false, m, n, B, false, br, bc, dA, true);
                    } else {
                        // dA stored (k x m) = (dA')^T = B' * G^T
                        if (!tb) {
                            // B' = B (k,n): dA = B * G^T
                            detail::gemm(B, false, br, bc, G, true, m, n, dA, true);
                        } else {
                            // B' = B^T, B stored (n,k): dA = B^T * G^T
                            detail::gemm(B, true, br, bc, G, true, m, n, dA, true);
                        }
                    }
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int64_t bi = 0; bi < batch; ++bi) {
                    const T* G = g.data() + bi * m * n;
                    const T* A = an->data.data() + bi * ar * ac;
                    T* dB = bn->grad.data() + bi * br * bc;
                    // logical dB' = A'^T * G
                    if (!tb) {
                        if (!ta) detail::gemm(A, true, ar, ac, G, false, m, n, dB, true);
                        else detail::gemm(A, false, ar, ac, G, false, m, n, dB, true);
                    } else {
                        // dB stored (n,k) = (dB')^T = G^T * A'
                        if (!ta) {
                            // A' = A (m,k): dB = G^T * A
                            detail::gemm(G, true, m, n, A, false, ar, ac, dB, true);
                        } else {
                            // A' = A^T, A stored (k,m): dB = G^T * A^T
                            detail::gemm(G, true, m, n, A, true, ar, ac, dB, true);
                        }
                    }
                }
            }
        });
}

}  // namespace pansharp
