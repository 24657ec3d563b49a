#include "artifact/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace artifact::ad {

void Node::accumulate(const Tensor& g) {
    if (!requires_grad) return;
    if (grad.empty()) grad = Tensor(value.shape());
    if (!grad.same_shape(g)) throw std::logic_error("autodiff: gradient shape mismatch");
    double* dst = grad.data();
    const double* src = g.data();
    for (int i = 0; i < g.size(); ++i) dst[i] += src[i];
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
    if (node_) node_->grad = Tensor();
}

void Var::backward() const {
    if (!node_) throw std::logic_error("autodiff: backward on empty var");
    if (node_->value.size() != 1)
        throw std::logic_error("autodiff: backward requires a scalar root");
    if (!node_->requires_grad) return;

    // Post-order over grad-requiring ancestors.
    std::vector<Node*> order;
    std::vector<std::pair<Node*, size_t>> stack{{node_.get(), 0}};
    std::unordered_set<Node*> seen{node_.get()};
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->accumulate(Tensor::scalar(1.0));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
}

namespace {

Var make_op(Tensor value, std::vector<NodePtr> grad_parents,
            std::function<void(Node&)> backward) {
    bool needs = false;
    for (const auto& p : grad_parents)
        if (p->requires_grad) needs = true;
    Var out(std::move(value), needs);
    if (needs) {
        auto keep = std::move(grad_parents);
        keep.erase(std::remove_if(keep.begin(), keep.end(),
                                  [](const NodePtr& p) { return !p->requires_grad; }),
                   keep.end());
        out.node()->parents = keep;
        out.node()->backward = std::move(backward);
    }
    return out;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a.value().same_shape(b.value()))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    a.value().shape_str() + " vs " + b.value().shape_str());
}

Tensor map_unary(const Tensor& a, double (*f)(double)) {
    Tensor out(a.shape());
    for (int i = 0; i < a.size(); ++i) out[i] = f(a[i]);
    return out;
}

}  // namespace

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor v(a.value().shape());
    for (int i = 0; i < v.size(); ++i) v[i] = a.value()[i] + b.value()[i];
    auto pa = a.node(), pb = b.node();
    return make_op(std::move(v), {pa, pb}, [pa, pb](Node& n) {
        pa->accumulate(n.grad);
        pb->accumulate(n.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor v(a.value().shape());
    for (int i = 0; i < v.size(); ++i) v[i] = a.value()[i] - b.value()[i];
    auto pa = a.node(), pb = b.node();
    return make_op(std::move(v), {pa, pb}, [pa, pb](Node& n) {
        pa->accumulate(n.grad);
        if (pb->requires_grad) {
            Tensor g(n.grad.shape());
            for (int i = 0; i < g.size(); ++i) g[i] = -n.grad[i];
            pb->accumulate(g);
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor v(a.value().shape());
    for (int i = 0; i < v.size(); ++i) v[i] = a.value()[i] * b.value()[i];
    auto pa = a.node(), pb = b.node();
    return make_op(std::move(v), {pa, pb}, [pa, pb](Node& n) {
        if (pa->requires_grad) {
            Tensor g(n.grad.shape());
            for (int i = 0; i < g.size(); ++i) g[i] = n.grad[i] * pb->value[i];
            pa->accumulate(g);
        }
        if (pb->requires_grad) {
            Tensor g(n.grad.shape());
            for (int i = 0; i < g.size(); ++i) g[i] = n.grad[i] * pa->value[i];
            pb->accumulate(g);
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor v(a.value().shape());
    for (int i = 0; i < v.size(); ++i) v[i] = a.value()[i] * s;
    auto pa = a.node();
    return make_op(std::move(v), {pa}, [pa, s](Node& n) {
        Tensor g(n.grad.shape());
        for (int i = 0; i < g.size(); ++i) g[i] = n.grad[i] * s;
        pa->accumulate(g);
    });
}

Var add_scalar(const Var& a, double c) {
    Tensor v(a.value().shape());
    for (int i = 0; i < v.size(); ++i) v[i] = a.value()[i] + c;
    auto pa = a.node();
    return make_op(std::move(v), {pa}, [pa](Node& n) { pa->accumulate(n.grad); });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var square(const Var& a) {
    Tensor v(a.value().shape());
    for (int i = 0; i < v.size(); ++i) v[i] = a.value()[i] * a.value()[i];
    auto pa = a.node();
    return make_op(std::move(v), {pa}, [pa](Node& n) {
        Tensor g(n.grad.shape());
        for (int i = 0; i < g.size(); ++i) g[i] = 2.0 * pa->value[i] * n.grad[i];
        pa->accumulate(g);
    });
}

Var sqrt_eps(const Var& a, double eps) {
    Tensor v(a.value().shape());
    for (int i = 0; i < v.size(); ++i) v[i] = std::sqrt(a.value()[i] + eps);
    auto pa = a.node();
    Var out = make_op(std::move(v), {pa}, std::function<void(Node&)>());
    if (out.requires_grad()) {
        auto self = out.node().get();
        out.node()->backward = [pa, self](Node& n) {
            Tensor g(n.grad.shape());
            for (int i = 0; i < g.size(); ++i) g[i] = n.grad[i] * 0.5 / self->value[i];
            pa->accumulate(g);
        };
    }
    return out;
}

Var exp_of(const Var& a) {
    Tensor v = map_unary(a.value(), [](double x) { return std::exp(x); });
    auto pa = a.node();
    Var out = make_op(std::move(v), {pa}, std::function<void(Node&)>());
    if (out.requires_grad()) {
        auto self = out.node().get();
        out.node()->backward = [pa, self](Node& n) {
            Tensor g(n.grad.shape());
            for (int i = 0; i < g.size(); ++i) g[i] = n.grad[i] * self->value[i];
            pa->accumulate(g);
        };
    }
    return out;
}

Var log_of(const Var& a) {
    Tensor v = map_unary(a.value(), [](double x) { return std::log(x); });
    auto pa = a.node();
    return make_op(std::move(v), {pa}, [pa](Node& n) {
        Tensor g(n.grad.shape());
        for (int i = 0; i < g.size(); ++i) g[i] = n.grad[i] / pa->value[i];
        pa->accumulate(g);
    });
}

Var sigmoid(const Var& a) {
    Tensor v = map_unary(a.value(), [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    auto pa = a.node();
    Var out = make_op(std::move(v), {pa}, std::function<void(Node&)>());
    if (out.requires_grad()) {
        auto self = out.node().get();
        out.node()->backward = [pa, self](Node& n) {
            Tensor g(n.grad.shape());
            for (int i = 0; i < g.size(); ++i) {
                double s = self->value[i];
                g[i] = n.grad[i] * s * (1.0 - s);
            }
            pa->accumulate(g);
        };
    }
    return out;
}

Var silu(const Var& a) {
    Tensor v(a.value().shape());
    for (int i = 0; i < v.size(); ++i) {
        double x = a.value()[i];
        v[i] = x / (1.0 + std::exp(-x));
    }
    auto pa = a.node();
    return make_op(std::move(v), {pa}, [pa](Node& n) {
        Tensor g(n.grad.shape());
        for (int i = 0; i < g.size(); ++i) {
            double x = pa->value[i];
            double s = 1.0 / (1.0 + std::exp(-x));
            g[i] = n.grad[i] * (s + x * s * (1.0 - s));
        }
        pa->accumulate(g);
    });
}

Var tanh_of(const Var& a) {
    Tensor v = map_unary(a.value(), [](double x) { return std::tanh(x); });
    auto pa = a.node();
    Var out = make_op(std::move(v), {pa}, std::function<void(Node&)>());
    if (out.requires_grad()) {
        auto self = out.node().get();
        out.node()->backward = [pa, self](Node& n) {
            Tensor g(n.grad.shape());
            for (int i = 0; i < g.size(); ++i) {
                double t = self->value[i];
                g[i] = n.grad[i] * (1.0 - t * t);
            }
            pa->accumulate(g);
        };
    }
    return out;
}

Var sum(const Var& a) {
    auto pa = a.node();
    return make_op(Tensor::scalar(a.value().sum()), {pa}, [pa](Node& n) {
        pa->accumulate(Tensor::full(pa->value.shape(), n.grad[0]));
    });
}

Var mean(const Var& a) {
    int n_elems = a.value().size();
    if (n_elems == 0) throw std::invalid_argument("mean: empty tensor");
    auto pa = a.node();
    return make_op(Tensor::scalar(a.value().sum() / n_elems), {pa}, [pa, n_elems](Node& n) {
        pa->accumulate(Tensor::full(pa->value.shape(), n.grad[0] / n_elems));
    });
}

Var dot(const Var& a, const Var& b) {
    check_same_shape(a, b, "dot");
    double s = 0.0;
    for (int i = 0; i < a.value().size(); ++i) s += a.value()[i] * b.value()[i];
    auto pa = a.node(), pb = b.node();
    return make_op(Tensor::scalar(s), {pa, pb}, [pa, pb](Node& n) {
        double g = n.grad[0];
        if (pa->requires_grad) {
            Tensor ga(pa->value.shape());
            for (int i = 0; i < ga.size(); ++i) ga[i] = g * pb->value[i];
            pa->accumulate(ga);
        }
        if (pb->requires_grad) {
            Tensor gb(pb->value.shape());
            for (int i = 0; i < gb.size(); ++i) gb[i] = g * pa->value[i];
            pb->accumulate(gb);
        }
    });
}

Var pick(const Var& v, int index) {
    if (index < 0 || index >= v.value().size())
        throw std::out_of_range("pick: index out of range");
    auto pv = v.node();
    return make_op(Tensor::scalar(v.value()[index]), {pv}, [pv, index](Node& n) {
        Tensor g(pv->value.shape());
        g[index] = n.grad[0];
        pv->accumulate(g);
    });
}

Var broadcast_scalar(const Var& s, std::vector<int> shape) {
    if (s.value().size() != 1)
        throw std::invalid_argument("broadcast_scalar: input must be a scalar");
    Tensor v = Tensor::full(shape, s.value()[0]);
    auto ps = s.node();
    return make_op(std::move(v), {ps}, [ps](Node& n) {
        ps->accumulate(Tensor::scalar(n.grad.sum()));
    });
}

Var matvec(const Var& w, const Var& x) {
    const auto& ws = w.value().shape();
    if (ws.size() != 2 || x.value().size() != ws[1])
        throw std::invalid_argument("matvec: shape mismatch");
    int m = ws[0], k = ws[1];
    Tensor v({m});
    for (int i = 0; i < m; ++i) {
        double s = 0.0;
        const double* row = w.value().data() + static_cast<size_t>(i) * k;
        for (int j = 0; j < k; ++j) s += row[j] * x.value()[j];
        v[i] = s;
    }
    auto pw = w.node(), px = x.node();
    return make_op(std::move(v), {pw, px}, [pw, px, m, k](Node& n) {
        if (pw->requires_grad) {
            Tensor gw(pw->value.shape());
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < k; ++j)
                    gw[i * k + j] = n.grad[i] * px->value[j];
            pw->accumulate(gw);
        }
        if (px->requires_grad) {
            Tensor gx(px->value.shape());
            for (int i = 0; i < m; ++i) {
                const double* row = pw->value.data() + static_cast<size_t>(i) * k;
                for (int j = 0; j < k; ++j) gx[j] += n.grad[i] * row[j];
            }
            px->accumulate(gx);
        }
    });
}

Var conv2d(const Var& x, const Var& k, const Var& bias, PadMode pad) {
    const auto& xs = x.value().shape();
    const auto& ks = k.value().shape();
    if (xs.size() != 3 || ks.size() != 4 || ks[1] != xs[0])
        throw std::invalid_argument("conv2d: shape mismatch");
    if (ks[2] % 2 == 0 || ks[3] % 2 == 0)
        throw std::invalid_argument("conv2d: kernel size must be odd");
    const int cin = xs[0], h = xs[1], w = xs[2];
    const int cout = ks[0], kh = ks[2], kw = ks[3];
    const int py = kh / 2, px_ = kw / 2;
    const bool rep = pad == PadMode::replicate;
    const bool has_bias = bias.defined();
    if (has_bias && bias.value().size() != cout)
        throw std::invalid_argument("conv2d: bias size mismatch");

    // Maps a padded coordinate to a source index, or -1 for a zero tap.
    auto src = [rep](int i, int n) -> int {
        if (i >= 0 && i < n) return i;
        return rep ? std::clamp(i, 0, n - 1) : -1;
    };

    Tensor v({cout, h, w});
    const double* xd = x.value().data();
    const double* kd = k.value().data();
    for (int co = 0; co < cout; ++co) {
        double b = has_bias ? bias.value()[co] : 0.0;
        for (int y = 0; y < h; ++y) {
            for (int xx = 0; xx < w; ++xx) {
                double s = b;
                for (int ci = 0; ci < cin; ++ci) {
                    const double* xp = xd + (static_cast<size_t>(ci) * h) * w;
                    const double* kp = kd + ((static_cast<size_t>(co) * cin + ci) * kh) * kw;
                    for (int ky = 0; ky < kh; ++ky) {
                        int sy = src(y + ky - py, h);
                        if (sy < 0) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            int sx = src(xx + kx - px_, w);
                            if (sx < 0) continue;
                            s += xp[sy * w + sx] * kp[ky * kw + kx];
                        }
                    }
                }
                v.at(co, y, xx) = s;
            }
        }
    }

    auto pxn = x.node(), pk = k.node();
    auto pb = has_bias ? bias.node() : NodePtr();
    std::vector<NodePtr> parents{pxn, pk};
    if (pb) parents.push_back(pb);
    return make_op(std::move(v), parents,
                   [pxn, pk, pb, cin, cout, h, w, kh, kw, py, px_, src](Node& n) {
        const double* gd = n.grad.data();
        if (pk->requires_grad) {
            Tensor gk(pk->value.shape());
            const double* xd = pxn->value.data();
            for (int co = 0; co < cout; ++co)
                for (int ci = 0; ci < cin; ++ci)
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            double s = 0.0;
                            for (int y = 0; y < h; ++y) {
                                int sy = src(y + ky - py, h);
                                if (sy < 0) continue;
                                const double* gr = gd + (static_cast<size_t>(co) * h + y) * w;
                                const double* xr = xd + (static_cast<size_t>(ci) * h + sy) * w;
                                for (int xx = 0; xx < w; ++xx) {
                                    int sx = src(xx + kx - px_, w);
                                    if (sx < 0) continue;
                                    s += gr[xx] * xr[sx];
                                }
                            }
                            gk[((co * cin + ci) * kh + ky) * kw + kx] = s;
                        }
            pk->accumulate(gk);
        }
        if (pxn->requires_grad) {
            Tensor gx(pxn->value.shape());
            const double* kd = pk->value.data();
            for (int co = 0; co < cout; ++co)
                for (int ci = 0; ci < cin; ++ci) {
                    const double* kp = kd + ((static_cast<size_t>(co) * cin + ci) * kh) * kw;
                    for (int y = 0; y < h; ++y) {
                        const double* gr = gd + (static_cast<size_t>(co) * h + y) * w;
                        for (int xx = 0; xx < w; ++xx) {
                            double g = gr[xx];
                            if (g == 0.0) continue;
                            for (int ky = 0; ky < kh; ++ky) {
                                int sy = src(y + ky - py, h);
                                if (sy < 0) continue;
                                double* gxr = gx.data() + (static_cast<size_t>(ci) * h + sy) * w;
                                for (int kx = 0; kx < kw; ++kx) {
                                    int sx = src(xx + kx - px_, w);
                                    if (sx < 0) continue;
                                    gxr[sx] += g * kp[ky * kw + kx];
                                }
                            }
                        }
                    }
                }
            pxn->accumulate(gx);
        }
        if (pb && pb->requires_grad) {
            Tensor gb(pb->value.shape());
            for (int co = 0; co < cout; ++co) {
                double s = 0.0;
                const double* gr = gd + static_cast<size_t>(co) * h * w;
                for (int i = 0; i < h * w; ++i) s += gr[i];
                gb[co] = s;
            }
            pb->accumulate(gb);
        }
    });
}

Var channel_affine(const Var& x, const Var& s, const Var& t) {
    const auto& xs = x.value().shape();
    if (xs.size() != 3 || s.value().size() != xs[0] || t.value().size() != xs[0])
        throw std::invalid_argument("channel_affine: shape mismatch");
    const int c = xs[0], hw = xs[1] * xs[2];
    Tensor v(xs);
    for (int ci = 0; ci < c; ++ci) {
        double sc = s.value()[ci], sh = t.value()[ci];
        const double* xp = x.value().data() + static_cast<size_t>(ci) * hw;
        double* vp = v.data() + static_cast<size_t>(ci) * hw;
        for (int i = 0; i < hw; ++i) vp[i] = xp[i] * sc + sh;
    }
    auto px = x.node(), ps = s.node(), pt = t.node();
    return make_op(std::move(v), {px, ps, pt}, [px, ps, pt, c, hw](Node& n) {
        const double* gd = n.grad.data();
        if (px->requires_grad) {
            Tensor gx(px->value.shape());
            for (int ci = 0; ci < c; ++ci) {
                double sc = ps->value[ci];
                const double* gp = gd + static_cast<size_t>(ci) * hw;
                double* xp = gx.data() + static_cast<size_t>(ci) * hw;
                for (int i = 0; i < hw; ++i) xp[i] = gp[i] * sc;
            }
            px->accumulate(gx);
        }
        if (ps->requires_grad) {
            Tensor gs(ps->value.shape());
            for (int ci = 0; ci < c; ++ci) {
                double acc = 0.0;
                const double* gp = gd + static_cast<size_t>(ci) * hw;
                const double* xp = px->value.data() + static_cast<size_t>(ci) * hw;
                for (int i = 0; i < hw; ++i) acc += gp[i] * xp[i];
                gs[ci] = acc;
            }
            ps->accumulate(gs);
        }
        if (pt->requires_grad) {
            Tensor gt(pt->value.shape());
            for (int ci = 0; ci < c; ++ci) {
                double acc = 0.0;
                const double* gp = gd + static_cast<size_t>(ci) * hw;
                for (int i = 0; i < hw; ++i) acc += gp[i];
                gt[ci] = acc;
            }
            pt->accumulate(gt);
        }
    });
}

Var clamp01(const Var& a) {
    Tensor v(a.value().shape());
    for (int i = 0; i < v.size(); ++i) v[i] = std::min(1.0, std::max(0.0, a.value()[i]));
    auto pa = a.node();
    return make_op(std::move(v), {pa}, [pa](Node& n) {
        Tensor g(n.grad.shape());
        for (int i = 0; i < g.size(); ++i) {
            double x = pa->value[i];
            g[i] = (x >= 0.0 && x <= 1.0) ? n.grad[i] : 0.0;
        }
        pa->accumulate(g);
    });
}

Var channel_weighted_sum(const Var& x, const std::vector<double>& w) {
    const auto& xs = x.value().shape();
    if (xs.size() != 3 || static_cast<size_t>(xs[0]) != w.size())
        throw std::invalid_argument("channel_weighted_sum: shape mismatch");
    const int c = xs[0], hw = xs[1] * xs[2];
    Tensor v({1, xs[1], xs[2]});
    for (int ci = 0; ci < c; ++ci) {
        const double* xp = x.value().data() + static_cast<size_t>(ci) * hw;
        for (int i = 0; i < hw; ++i) v[i] += w[static_cast<size_t>(ci)] * xp[i];
    }
    auto px = x.node();
    return make_op(std::move(v), {px}, [px, w, c, hw](Node& n) {
        Tensor g(px->value.shape());
        for (int ci = 0; ci < c; ++ci) {
            double* gp = g.data() + static_cast<size_t>(ci) * hw;
            for (int i = 0; i < hw; ++i) gp[i] = n.grad[i] * w[static_cast<size_t>(ci)];
        }
        px->accumulate(g);
    });
}

Var embedding_mean(const Var& table, const std::vector<int>& ids) {
    const auto& ts = table.value().shape();
    if (ts.size() != 2) throw std::invalid_argument("embedding_mean: table must be [V,d]");
    if (ids.empty()) throw std::invalid_argument("embedding_mean: empty id list");
    const int v_rows = ts[0], d = ts[1];
    for (int id : ids)
        if (id < 0 || id >= v_rows) throw std::out_of_range("embedding_mean: id out of range");
    Tensor v({d});
    for (int id : ids) {
        const double* row = table.value().data() + static_cast<size_t>(id) * d;
        for (int j = 0; j < d; ++j) v[j] += row[j];
    }
    double inv = 1.0 / static_cast<double>(ids.size());
    for (int j = 0; j < d; ++j) v[j] *= inv;
    auto pt = table.node();
    return make_op(std::move(v), {pt}, [pt, ids, d, inv](Node& n) {
        Tensor g(pt->value.shape());
        for (int id : ids) {
            double* row = g.data() + static_cast<size_t>(id) * d;
            for (int j = 0; j < d; ++j) row[j] += n.grad[j] * inv;
        }
        pt->accumulate(g);
    });
}

Var l2_normalize(const Var& v, double eps) {
    double s = v.value().squared_norm();
    double r = std::sqrt(s + eps);
    Tensor out(v.value().shape());
    for (int i = 0; i < out.size(); ++i) out[i] = v.value()[i] / r;
    auto pv = v.node();
    return make_op(std::move(out), {pv}, [pv, r](Node& n) {
        double gdotv = 0.0;
        for (int i = 0; i < n.grad.size(); ++i) gdotv += n.grad[i] * pv->value[i];
        double r3 = r * r * r;
        Tensor g(pv->value.shape());
        for (int i = 0; i < g.size(); ++i)
            g[i] = n.grad[i] / r - pv->value[i] * gdotv / r3;
        pv->accumulate(g);
    });
}

Var log_sum_exp(const std::vector<Var>& xs) {
    if (xs.empty()) throw std::invalid_argument("log_sum_exp: empty input");
    double m = xs[0].value()[0];
    for (const auto& x : xs) {
        if (x.value().size() != 1) throw std::invalid_argument("log_sum_exp: scalars only");
        m = std::max(m, x.value()[0]);
    }
    double acc = 0.0;
    std::vector<double> softmax(xs.size());
    for (size_t i = 0; i < xs.size(); ++i) {
        softmax[i] = std::exp(xs[i].value()[0] - m);
        acc += softmax[i];
    }
    for (auto& p : softmax) p /= acc;
    std::vector<NodePtr> parents;
    parents.reserve(xs.size());
    for (const auto& x : xs) parents.push_back(x.node());
    auto nodes = parents;
    return make_op(Tensor::scalar(m + std::log(acc)), parents,
                   [nodes, softmax](Node& n) {
        for (size_t i = 0; i < nodes.size(); ++i)
            nodes[i]->accumulate(Tensor::scalar(n.grad[0] * softmax[i]));
    });
}

}  // namespace artifact::ad
