#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mangares/nn/kernels.hpp"
#include "mangares/nn/tensor.hpp"

namespace mr::nn {

// Define-by-run reverse-mode tape. Every op builds a fresh node holding its
// value; backward() walks the graph in reverse topological order. Gradients
// accumulate, so leaves reused across iterations must be zeroed in between.

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != value.size()) grad = Tensor<T>(value.shape);
    }
};

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

inline int& grad_disable_depth() {
    thread_local int depth = 0;
    return depth;
}
inline bool grad_enabled() { return grad_disable_depth() == 0; }

// RAII inference guard: ops built in scope carry no tape.
struct NoGrad {
    NoGrad() { ++grad_disable_depth(); }
    ~NoGrad() { --grad_disable_depth(); }
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;
};

template <typename T>
NodePtr<T> make_leaf(Tensor<T> v, bool requires_grad) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    return n;
}

template <typename T>
NodePtr<T> make_const(Tensor<T> v) {
    return make_leaf(std::move(v), false);
}

namespace detail {

template <typename T>
NodePtr<T> make_op(Tensor<T> value, std::vector<NodePtr<T>> parents,
                   std::function<void(Node<T>&)> fn) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    if (grad_enabled()) {
        bool rg = false;
        for (const auto& p : parents) rg = rg || p->requires_grad;
        if (rg) {
            n->requires_grad = true;
            n->parents = std::move(parents);
            n->backward_fn = std::move(fn);
        }
    }
    return n;
}

}  // namespace detail

template <typename T>
void backward(const NodePtr<T>& root) {
    if (root->value.size() != 1)
        throw std::logic_error("backward: root must be scalar");
    if (!root->requires_grad) return;

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    struct Frame {
        Node<T>* n;
        size_t i;
    };
    std::vector<Frame> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.i < f.n->parents.size()) {
            Node<T>* p = f.n->parents[f.i++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad.data[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

// ------------------------------------------------------------ elementwise --

template <typename T>
NodePtr<T> leaky_relu(const NodePtr<T>& x, T slope = T(0.1)) {
    Tensor<T> v(x->value.shape);
    for (size_t i = 0; i < v.size(); ++i) {
        const T xi = x->value.data[i];
        v.data[i] = xi > T(0) ? xi : slope * xi;
    }
    return detail::make_op<T>(std::move(v), {x}, [slope](Node<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            p.grad.data[i] += self.grad.data[i] * (p.value.data[i] > T(0) ? T(1) : slope);
    });
}

template <typename T>
NodePtr<T> sigmoid(const NodePtr<T>& x) {
    Tensor<T> v(x->value.shape);
    for (size_t i = 0; i < v.size(); ++i)
        v.data[i] = T(1) / (T(1) + std::exp(-x->value.data[i]));
    return detail::make_op<T>(std::move(v), {x}, [](Node<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const T y = self.value.data[i];
            p.grad.data[i] += self.grad.data[i] * y * (T(1) - y);
        }
    });
}

// sqrt(x + eps); eps keeps the derivative finite at zero.
template <typename T>
NodePtr<T> sqrt_elem(const NodePtr<T>& x, T eps = T(1e-12)) {
    Tensor<T> v(x->value.shape);
    for (size_t i = 0; i < v.size(); ++i) v.data[i] = std::sqrt(x->value.data[i] + eps);
    return detail::make_op<T>(std::move(v), {x}, [](Node<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            p.grad.data[i] += self.grad.data[i] * T(0.5) / self.value.data[i];
    });
}

template <typename T>
NodePtr<T> abs_elem(const NodePtr<T>& x) {
    Tensor<T> v(x->value.shape);
    for (size_t i = 0; i < v.size(); ++i) v.data[i] = std::fabs(x->value.data[i]);
    return detail::make_op<T>(std::move(v), {x}, [](Node<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const T xi = p.value.data[i];
            const T s = xi > T(0) ? T(1) : (xi < T(0) ? T(-1) : T(0));
            p.grad.data[i] += self.grad.data[i] * s;
        }
    });
}

// a*x + b with scalar constants.
template <typename T>
NodePtr<T> affine(const NodePtr<T>& x, T a, T b) {
    Tensor<T> v(x->value.shape);
    for (size_t i = 0; i < v.size(); ++i) v.data[i] = a * x->value.data[i] + b;
    return detail::make_op<T>(std::move(v), {x}, [a](Node<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) p.grad.data[i] += a * self.grad.data[i];
    });
}

namespace detail {
template <typename T, typename F, typename GA, typename GB>
NodePtr<T> binary_same_shape(const NodePtr<T>& a, const NodePtr<T>& b, F f, GA ga, GB gb,
                             const char* name) {
    if (!a->value.same_shape(b->value))
        throw std::invalid_argument(std::string(name) + ": shape mismatch " +
                                    a->value.shape_str() + " vs " + b->value.shape_str());
    Tensor<T> v(a->value.shape);
    for (size_t i = 0; i < v.size(); ++i) v.data[i] = f(a->value.data[i], b->value.data[i]);
    return make_op<T>(std::move(v), {a, b}, [ga, gb](Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                pa.grad.data[i] += ga(self.grad.data[i], pa.value.data[i], pb.value.data[i]);
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                pb.grad.data[i] += gb(self.grad.data[i], pa.value.data[i], pb.value.data[i]);
        }
    });
}
}  // namespace detail

template <typename T>
NodePtr<T> add(const NodePtr<T>& a, const NodePtr<T>& b) {
    return detail::binary_same_shape<T>(
        a, b, [](T x, T y) { return x + y; }, [](T g, T, T) { return g; },
        [](T g, T, T) { return g; }, "add");
}

template <typename T>
NodePtr<T> sub(const NodePtr<T>& a, const NodePtr<T>& b) {
    return detail::binary_same_shape<T>(
        a, b, [](T x, T y) { return x - y; }, [](T g, T, T) { return g; },
        [](T g, T, T) { return -g; }, "sub");
}

template <typename T>
NodePtr<T> mul(const NodePtr<T>& a, const NodePtr<T>& b) {
    return detail::binary_same_shape<T>(
        a, b, [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; },
        [](T g, T x, T) { return g * x; }, "mul");
}

// ------------------------------------------------------------- broadcasts --

// mask [N,1,H,W] * x [N,C,H,W]
template <typename T>
NodePtr<T> mul_mask(const NodePtr<T>& mask, const NodePtr<T>& x) {
    const auto& ms = mask->value.shape;
    const auto& xs = x->value.shape;
    if (ms.size() != 4 || xs.size() != 4 || ms[0] != xs[0] || ms[1] != 1 ||
        ms[2] != xs[2] || ms[3] != xs[3])
        throw std::invalid_argument("mul_mask: expected [N,1,H,W] x [N,C,H,W]");
    const int N = xs[0], C = xs[1];
    const size_t hw = static_cast<size_t>(xs[2]) * xs[3];
    Tensor<T> v(xs);
    for (int n = 0; n < N; ++n) {
        const T* mp = mask->value.ptr() + n * hw;
        for (int c = 0; c < C; ++c) {
            const T* xp = x->value.ptr() + (static_cast<size_t>(n) * C + c) * hw;
            T* vp = v.ptr() + (static_cast<size_t>(n) * C + c) * hw;
            for (size_t i = 0; i < hw; ++i) vp[i] = mp[i] * xp[i];
        }
    }
    return detail::make_op<T>(std::move(v), {mask, x}, [N, C, hw](Node<T>& self) {
        auto& pm = *self.parents[0];
        auto& px = *self.parents[1];
        if (pm.requires_grad) pm.ensure_grad();
        if (px.requires_grad) px.ensure_grad();
        for (int n = 0; n < N; ++n) {
            const T* mp = pm.value.ptr() + n * hw;
            for (int c = 0; c < C; ++c) {
                const size_t base = (static_cast<size_t>(n) * C + c) * hw;
                const T* gp = self.grad.ptr() + base;
                if (pm.requires_grad) {
                    const T* xp = px.value.ptr() + base;
                    T* gm = pm.grad.ptr() + n * hw;
                    for (size_t i = 0; i < hw; ++i) gm[i] += gp[i] * xp[i];
                }
                if (px.requires_grad) {
                    T* gx = px.grad.ptr() + base;
                    for (size_t i = 0; i < hw; ++i) gx[i] += gp[i] * mp[i];
                }
            }
        }
    });
}

// s [N,C] * x [N,C,H,W]
template <typename T>
NodePtr<T> mul_channel(const NodePtr<T>& s, const NodePtr<T>& x) {
    const auto& ss = s->value.shape;
    const auto& xs = x->value.shape;
    if (ss.size() != 2 || xs.size() != 4 || ss[0] != xs[0] || ss[1] != xs[1])
        throw std::invalid_argument("mul_channel: expected [N,C] x [N,C,H,W]");
    const int N = xs[0], C = xs[1];
    const size_t hw = static_cast<size_t>(xs[2]) * xs[3];
    Tensor<T> v(xs);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T w = s->value.data[static_cast<size_t>(n) * C + c];
            const size_t base = (static_cast<size_t>(n) * C + c) * hw;
            for (size_t i = 0; i < hw; ++i) v.data[base + i] = w * x->value.data[base + i];
        }
    return detail::make_op<T>(std::move(v), {s, x}, [N, C, hw](Node<T>& self) {
        auto& ps = *self.parents[0];
        auto& px = *self.parents[1];
        if (ps.requires_grad) ps.ensure_grad();
        if (px.requires_grad) px.ensure_grad();
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const size_t sc = static_cast<size_t>(n) * C + c;
                const size_t base = sc * hw;
                if (ps.requires_grad) {
                    T acc = T(0);
                    for (size_t i = 0; i < hw; ++i)
                        acc += self.grad.data[base + i] * px.value.data[base + i];
                    ps.grad.data[sc] += acc;
                }
                if (px.requires_grad) {
                    const T w = ps.value.data[sc];
                    for (size_t i = 0; i < hw; ++i) px.grad.data[base + i] += w * self.grad.data[base + i];
                }
            }
    });
}

// a - s, s a scalar node broadcast over a.
template <typename T>
NodePtr<T> sub_bcast(const NodePtr<T>& a, const NodePtr<T>& s) {
    if (s->value.size() != 1) throw std::invalid_argument("sub_bcast: s must be scalar");
    Tensor<T> v(a->value.shape);
    const T sv = s->value.data[0];
    for (size_t i = 0; i < v.size(); ++i) v.data[i] = a->value.data[i] - sv;
    return detail::make_op<T>(std::move(v), {a, s}, [](Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& ps = *self.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pa.grad.data[i] += self.grad.data[i];
        }
        if (ps.requires_grad) {
            ps.ensure_grad();
            T acc = T(0);
            for (size_t i = 0; i < self.grad.size(); ++i) acc += self.grad.data[i];
            ps.grad.data[0] -= acc;
        }
    });
}

// ------------------------------------------------------- shape operations --

template <typename T>
NodePtr<T> concat_ch(const std::vector<NodePtr<T>>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_ch: empty input");
    const auto& s0 = xs[0]->value.shape;
    if (s0.size() != 4) throw std::invalid_argument("concat_ch: 4-d inputs expected");
    int Ctot = 0;
    for (const auto& x : xs) {
        const auto& s = x->value.shape;
        if (s.size() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3])
            throw std::invalid_argument("concat_ch: shape mismatch");
        Ctot += s[1];
    }
    const int N = s0[0], H = s0[2], W = s0[3];
    const size_t hw = static_cast<size_t>(H) * W;
    Tensor<T> v({N, Ctot, H, W});
    std::vector<int> offs;
    int off = 0;
    for (const auto& x : xs) {
        offs.push_back(off);
        const int c = x->value.shape[1];
        for (int n = 0; n < N; ++n)
            std::copy_n(x->value.ptr() + static_cast<size_t>(n) * c * hw, static_cast<size_t>(c) * hw,
                        v.ptr() + (static_cast<size_t>(n) * Ctot + off) * hw);
        off += c;
    }
    return detail::make_op<T>(std::move(v), xs, [N, Ctot, hw, offs](Node<T>& self) {
        for (size_t pi = 0; pi < self.parents.size(); ++pi) {
            auto& p = *self.parents[pi];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            const int c = p.value.shape[1];
            for (int n = 0; n < N; ++n) {
                const T* gp = self.grad.ptr() + (static_cast<size_t>(n) * Ctot + offs[pi]) * hw;
                T* dst = p.grad.ptr() + static_cast<size_t>(n) * c * hw;
                for (size_t i = 0; i < static_cast<size_t>(c) * hw; ++i) dst[i] += gp[i];
            }
        }
    });
}

template <typename T>
NodePtr<T> slice_ch(const NodePtr<T>& x, int c0, int c1) {
    const auto& s = x->value.shape;
    if (s.size() != 4 || c0 < 0 || c1 > s[1] || c0 >= c1)
        throw std::invalid_argument("slice_ch: bad channel range");
    const int N = s[0], C = s[1], H = s[2], W = s[3], Cs = c1 - c0;
    const size_t hw = static_cast<size_t>(H) * W;
    Tensor<T> v({N, Cs, H, W});
    for (int n = 0; n < N; ++n)
        std::copy_n(x->value.ptr() + (static_cast<size_t>(n) * C + c0) * hw,
                    static_cast<size_t>(Cs) * hw, v.ptr() + static_cast<size_t>(n) * Cs * hw);
    return detail::make_op<T>(std::move(v), {x}, [N, C, c0, Cs, hw](Node<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (int n = 0; n < N; ++n) {
            const T* gp = self.grad.ptr() + static_cast<size_t>(n) * Cs * hw;
            T* dst = p.grad.ptr() + (static_cast<size_t>(n) * C + c0) * hw;
            for (size_t i = 0; i < static_cast<size_t>(Cs) * hw; ++i) dst[i] += gp[i];
        }
    });
}

// ------------------------------------------------------------- reductions --

// Global average pool [N,C,H,W] -> [N,C].
template <typename T>
NodePtr<T> gap(const NodePtr<T>& x) {
    const auto& s = x->value.shape;
    if (s.size() != 4) throw std::invalid_argument("gap: 4-d input expected");
    const int N = s[0], C = s[1];
    const size_t hw = static_cast<size_t>(s[2]) * s[3];
    Tensor<T> v({N, C});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* xp = x->value.ptr() + (static_cast<size_t>(n) * C + c) * hw;
            T acc = T(0);
            for (size_t i = 0; i < hw; ++i) acc += xp[i];
            v.data[static_cast<size_t>(n) * C + c] = acc / static_cast<T>(hw);
        }
    return detail::make_op<T>(std::move(v), {x}, [N, C, hw](Node<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const T g = self.grad.data[static_cast<size_t>(n) * C + c] / static_cast<T>(hw);
                T* gp = p.grad.ptr() + (static_cast<size_t>(n) * C + c) * hw;
                for (size_t i = 0; i < hw; ++i) gp[i] += g;
            }
    });
}

// Global max pool [N,C,H,W] -> [N,C]; ties break to the first element.
template <typename T>
NodePtr<T> gmp(const NodePtr<T>& x) {
    const auto& s = x->value.shape;
    if (s.size() != 4) throw std::invalid_argument("gmp: 4-d input expected");
    const int N = s[0], C = s[1];
    const size_t hw = static_cast<size_t>(s[2]) * s[3];
    Tensor<T> v({N, C});
    std::vector<size_t> arg(static_cast<size_t>(N) * C);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* xp = x->value.ptr() + (static_cast<size_t>(n) * C + c) * hw;
            size_t best = 0;
            for (size_t i = 1; i < hw; ++i)
                if (xp[i] > xp[best]) best = i;
            v.data[static_cast<size_t>(n) * C + c] = xp[best];
            arg[static_cast<size_t>(n) * C + c] = best;
        }
    return detail::make_op<T>(std::move(v), {x}, [N, C, hw, arg = std::move(arg)](Node<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t nc = 0; nc < static_cast<size_t>(N) * C; ++nc)
            p.grad.data[nc * hw + arg[nc]] += self.grad.data[nc];
    });
}

// Mean over channels [N,C,H,W] -> [N,1,H,W].
template <typename T>
NodePtr<T> chan_mean(const NodePtr<T>& x) {
    const auto& s = x->value.shape;
    if (s.size() != 4) throw std::invalid_argument("chan_mean: 4-d input expected");
    const int N = s[0], C = s[1], H = s[2], W = s[3];
    const size_t hw = static_cast<size_t>(H) * W;
    Tensor<T> v({N, 1, H, W});
    for (int n = 0; n < N; ++n)
        for (size_t i = 0; i < hw; ++i) {
            T acc = T(0);
            for (int c = 0; c < C; ++c) acc += x->value.data[(static_cast<size_t>(n) * C + c) * hw + i];
            v.data[n * hw + i] = acc / static_cast<T>(C);
        }
    return detail::make_op<T>(std::move(v), {x}, [N, C, hw](Node<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (int n = 0; n < N; ++n)
            for (size_t i = 0; i < hw; ++i) {
                const T g = self.grad.data[n * hw + i] / static_cast<T>(C);
                for (int c = 0; c < C; ++c) p.grad.data[(static_cast<size_t>(n) * C + c) * hw + i] += g;
            }
    });
}

// Max over channels [N,C,H,W] -> [N,1,H,W]; ties break to lowest channel.
template <typename T>
NodePtr<T> chan_max(const NodePtr<T>& x) {
    const auto& s = x->value.shape;
    if (s.size() != 4) throw std::invalid_argument("chan_max: 4-d input expected");
    const int N = s[0], C = s[1], H = s[2], W = s[3];
    const size_t hw = static_cast<size_t>(H) * W;
    Tensor<T> v({N, 1, H, W});
    std::vector<int> arg(static_cast<size_t>(N) * hw);
    for (int n = 0; n < N; ++n)
        for (size_t i = 0; i < hw; ++i) {
            int best = 0;
            T bv = x->value.data[static_cast<size_t>(n) * C * hw + i];
            for (int c = 1; c < C; ++c) {
                const T cv = x->value.data[(static_cast<size_t>(n) * C + c) * hw + i];
                if (cv > bv) {
                    bv = cv;
                    best = c;
                }
            }
            v.data[n * hw + i] = bv;
            arg[n * hw + i] = best;
        }
    return detail::make_op<T>(std::move(v), {x}, [N, C, hw, arg = std::move(arg)](Node<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (int n = 0; n < N; ++n)
            for (size_t i = 0; i < hw; ++i)
                p.grad.data[(static_cast<size_t>(n) * C + arg[n * hw + i]) * hw + i] +=
                    self.grad.data[n * hw + i];
    });
}

template <typename T>
NodePtr<T> mean_all(const NodePtr<T>& x) {
    Tensor<T> v({1});
    T acc = T(0);
    for (size_t i = 0; i < x->value.size(); ++i) acc += x->value.data[i];
    const size_t n = x->value.size();
    v.data[0] = acc / static_cast<T>(n);
    return detail::make_op<T>(std::move(v), {x}, [n](Node<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const T g = self.grad.data[0] / static_cast<T>(n);
        for (size_t i = 0; i < n; ++i) p.grad.data[i] += g;
    });
}

// --------------------------------------------------------- linear algebra --

// x [N,F] * w [O,F]^T + b [O] -> [N,O]; b may be null.
template <typename T>
NodePtr<T> linear(const NodePtr<T>& x, const NodePtr<T>& w, const NodePtr<T>& b) {
    const auto& xs = x->value.shape;
    const auto& ws = w->value.shape;
    if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1])
        throw std::invalid_argument("linear: shape mismatch");
    const int N = xs[0], F = xs[1], O = ws[0];
    if (b && (b->value.rank() != 1 || b->value.dim(0) != O))
        throw std::invalid_argument("linear: bad bias shape");
    Tensor<T> v({N, O});
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o) {
            T acc = b ? b->value.data[o] : T(0);
            const T* xp = x->value.ptr() + static_cast<size_t>(n) * F;
            const T* wp = w->value.ptr() + static_cast<size_t>(o) * F;
            for (int f = 0; f < F; ++f) acc += xp[f] * wp[f];
            v.data[static_cast<size_t>(n) * O + o] = acc;
        }
    std::vector<NodePtr<T>> parents{x, w};
    if (b) parents.push_back(b);
    return detail::make_op<T>(std::move(v), std::move(parents), [N, F, O](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        Node<T>* pb = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
        if (px.requires_grad) px.ensure_grad();
        if (pw.requires_grad) pw.ensure_grad();
        if (pb && pb->requires_grad) pb->ensure_grad();
        for (int n = 0; n < N; ++n)
            for (int o = 0; o < O; ++o) {
                const T g = self.grad.data[static_cast<size_t>(n) * O + o];
                if (px.requires_grad) {
                    const T* wp = pw.value.ptr() + static_cast<size_t>(o) * F;
                    T* gx = px.grad.ptr() + static_cast<size_t>(n) * F;
                    for (int f = 0; f < F; ++f) gx[f] += g * wp[f];
                }
                if (pw.requires_grad) {
                    const T* xp = px.value.ptr() + static_cast<size_t>(n) * F;
                    T* gw = pw.grad.ptr() + static_cast<size_t>(o) * F;
                    for (int f = 0; f < F; ++f) gw[f] += g * xp[f];
                }
                if (pb && pb->requires_grad) pb->grad.data[o] += g;
            }
    });
}

// -------------------------------------------------------------- spatial ops --

// Reflect-padded convolution; x [N,Ci,H,W], w [Co,Ci,K,K], b [Co] or null.
template <typename T>
NodePtr<T> conv2d(const NodePtr<T>& x, const NodePtr<T>& w, const NodePtr<T>& b,
                  int stride, int pad) {
    const auto& xs = x->value.shape;
    const auto& ws = w->value.shape;
    if (xs.size() != 4 || ws.size() != 4 || ws[1] != xs[1] || ws[2] != ws[3])
        throw std::invalid_argument("conv2d: shape mismatch");
    const int N = xs[0], Ci = xs[1], H = xs[2], W = xs[3];
    const int Co = ws[0], K = ws[2];
    if (H + 2 * pad < K || W + 2 * pad < K)
        throw std::invalid_argument("conv2d: input smaller than kernel");
    const int Ho = (H + 2 * pad - K) / stride + 1;
    const int Wo = (W + 2 * pad - K) / stride + 1;
    Tensor<T> v({N, Co, Ho, Wo});
    kern::conv2d_fwd_omp(x->value.ptr(), w->value.ptr(), b ? b->value.ptr() : nullptr,
                         v.ptr(), N, Ci, H, W, Co, K, stride, pad, Ho, Wo);
    std::vector<NodePtr<T>> parents{x, w};
    if (b) parents.push_back(b);
    return detail::make_op<T>(
        std::move(v), std::move(parents),
        [N, Ci, H, W, Co, K, stride, pad, Ho, Wo](Node<T>& self) {
            auto& px = *self.parents[0];
            auto& pw = *self.parents[1];
            Node<T>* pb = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
            if (px.requires_grad) {
                px.ensure_grad();
                kern::conv2d_bwd_input_omp(self.grad.ptr(), pw.value.ptr(), px.grad.ptr(),
                                           N, Ci, H, W, Co, K, stride, pad, Ho, Wo);
            }
            const bool need_b = pb && pb->requires_grad;
            if (pw.requires_grad || need_b) {
                pw.ensure_grad();
                if (need_b) pb->ensure_grad();
                kern::conv2d_bwd_weight_omp(self.grad.ptr(), px.value.ptr(), pw.grad.ptr(),
                                            need_b ? pb->grad.ptr() : nullptr, N, Ci, H, W,
                                            Co, K, stride, pad, Ho, Wo);
            }
        });
}

template <typename T>
NodePtr<T> convex_upsample_op(const NodePtr<T>& feat, const NodePtr<T>& logits,
                              int Ht, int Wt) {
    const auto& fs = feat->value.shape;
    const auto& ls = logits->value.shape;
    if (fs.size() != 4 || ls.size() != 4 || ls[1] != 9 || ls[0] != fs[0] ||
        ls[2] != fs[2] || ls[3] != fs[3])
        throw std::invalid_argument("convex_upsample: logits must be [N,9,H,W]");
    const int N = fs[0], C = fs[1], H = fs[2], W = fs[3];
    Tensor<T> v({N, C, Ht, Wt});
    kern::convex_up_fwd_omp(feat->value.ptr(), logits->value.ptr(), v.ptr(), N, C, H, W, Ht, Wt);
    return detail::make_op<T>(std::move(v), {feat, logits}, [N, C, H, W, Ht, Wt](Node<T>& self) {
        auto& pf = *self.parents[0];
        auto& pl = *self.parents[1];
        if (pf.requires_grad) pf.ensure_grad();
        if (pl.requires_grad) pl.ensure_grad();
        if (!pf.requires_grad && !pl.requires_grad) return;
        kern::convex_up_bwd_omp(self.grad.ptr(), pf.value.ptr(), pl.value.ptr(),
                                pf.requires_grad ? pf.grad.ptr() : nullptr,
                                pl.requires_grad ? pl.grad.ptr() : nullptr, N, C, H, W, Ht, Wt);
    });
}

template <typename T>
NodePtr<T> nearest_up(const NodePtr<T>& x, int Ht, int Wt) {
    const auto& s = x->value.shape;
    if (s.size() != 4) throw std::invalid_argument("nearest_up: 4-d input expected");
    const int N = s[0], C = s[1], H = s[2], W = s[3];
    Tensor<T> v({N, C, Ht, Wt});
    kern::nearest_up_fwd(x->value.ptr(), v.ptr(), N, C, H, W, Ht, Wt);
    return detail::make_op<T>(std::move(v), {x}, [N, C, H, W, Ht, Wt](Node<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        kern::nearest_up_bwd(self.grad.ptr(), p.grad.ptr(), N, C, H, W, Ht, Wt);
    });
}

template <typename T>
NodePtr<T> box_blur_n(const NodePtr<T>& x, int win) {
    const auto& s = x->value.shape;
    if (s.size() != 4 || win < 1 || win % 2 == 0)
        throw std::invalid_argument("box_blur: 4-d input and odd window expected");
    const int N = s[0], C = s[1], H = s[2], W = s[3];
    Tensor<T> v(s);
    kern::box_blur_fwd(x->value.ptr(), v.ptr(), N, C, H, W, win);
    return detail::make_op<T>(std::move(v), {x}, [N, C, H, W, win](Node<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        kern::box_blur_bwd(self.grad.ptr(), p.grad.ptr(), N, C, H, W, win);
    });
}

// ------------------------------------------------------- homogeneity loss --

// Mean over batch of the per-image mean over superpixels of the rms
// within-superpixel deviation (L2 across channels). labels[n] holds one
// region id per pixel; any id set works as long as it partitions the image.
template <typename T>
NodePtr<T> homogeneity(const NodePtr<T>& x, const std::vector<std::vector<int>>& labels) {
    const auto& s = x->value.shape;
    if (s.size() != 4) throw std::invalid_argument("homogeneity: 4-d input expected");
    const int N = s[0], C = s[1], H = s[2], W = s[3];
    const size_t hw = static_cast<size_t>(H) * W;
    if (labels.size() != static_cast<size_t>(N))
        throw std::invalid_argument("homogeneity: one label raster per sample expected");
    for (const auto& l : labels)
        if (l.size() != hw) throw std::invalid_argument("homogeneity: label raster size mismatch");

    constexpr T eps = T(1e-12);
    // Per sample: id -> slot, per-slot count, per-channel mean, rms deviation.
    struct SampleStats {
        std::unordered_map<int, int> slot;
        std::vector<size_t> count;
        std::vector<T> mean;  // [n_slots * C]
        std::vector<T> rms;   // sqrt(mse + eps)
    };
    std::vector<SampleStats> stats(N);
    T total = T(0);
    for (int n = 0; n < N; ++n) {
        auto& st = stats[n];
        for (size_t i = 0; i < hw; ++i) {
            auto [it, fresh] = st.slot.try_emplace(labels[n][i], static_cast<int>(st.count.size()));
            if (fresh) st.count.push_back(0);
            ++st.count[it->second];
        }
        const int ns = static_cast<int>(st.count.size());
        st.mean.assign(static_cast<size_t>(ns) * C, T(0));
        for (size_t i = 0; i < hw; ++i) {
            const int sl = st.slot.at(labels[n][i]);
            for (int c = 0; c < C; ++c)
                st.mean[static_cast<size_t>(sl) * C + c] +=
                    x->value.data[(static_cast<size_t>(n) * C + c) * hw + i];
        }
        for (int sl = 0; sl < ns; ++sl)
            for (int c = 0; c < C; ++c)
                st.mean[static_cast<size_t>(sl) * C + c] /= static_cast<T>(st.count[sl]);
        std::vector<T> sq(ns, T(0));
        for (size_t i = 0; i < hw; ++i) {
            const int sl = st.slot.at(labels[n][i]);
            for (int c = 0; c < C; ++c) {
                const T d = x->value.data[(static_cast<size_t>(n) * C + c) * hw + i] -
                            st.mean[static_cast<size_t>(sl) * C + c];
                sq[sl] += d * d;
            }
        }
        st.rms.resize(ns);
        T acc = T(0);
        for (int sl = 0; sl < ns; ++sl) {
            st.rms[sl] = std::sqrt(sq[sl] / static_cast<T>(st.count[sl]) + eps);
            acc += st.rms[sl];
        }
        total += acc / static_cast<T>(ns);
    }
    Tensor<T> v({1});
    v.data[0] = total / static_cast<T>(N);

    return detail::make_op<T>(
        std::move(v), {x},
        [N, C, hw, labels, stats = std::move(stats)](Node<T>& self) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            p.ensure_grad();
            const T g0 = self.grad.data[0];
            for (int n = 0; n < N; ++n) {
                const auto& st = stats[n];
                const T scale_n = g0 / static_cast<T>(N) / static_cast<T>(st.count.size());
                for (size_t i = 0; i < hw; ++i) {
                    const int sl = st.slot.at(labels[n][i]);
                    const T denom = static_cast<T>(st.count[sl]) * st.rms[sl];
                    for (int c = 0; c < C; ++c) {
                        const size_t xi = (static_cast<size_t>(n) * C + c) * hw + i;
                        const T d = p.value.data[xi] - st.mean[static_cast<size_t>(sl) * C + c];
                        p.grad.data[xi] += scale_n * d / denom;
                    }
                }
            }
        });
}

}  // namespace mr::nn
