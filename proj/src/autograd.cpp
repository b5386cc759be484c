// SPDX-License-Identifier: Apache-2.0
#include "inpad/autograd.hpp"

#include <algorithm>
#include <cmath>

namespace inpad {

namespace {

double sign0(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

double norm_clamped(const double* a, int64_t n, double eps) {
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += a[i] * a[i];
    return std::max(std::sqrt(s), eps);
}

} // namespace

Var Tape::push(Tensor value, std::function<void(Tape&)> back) {
    Node n;
    n.value = std::move(value);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

Tensor& Tape::grad_ref(int32_t id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.grad_alloc) {
        n.grad = Tensor::zeros(n.value.rows(), n.value.cols());
        n.grad_alloc = true;
    }
    return n.grad;
}

const Tensor& Tape::grad(Var v) { return grad_ref(v.id); }

Var Tape::leaf(Tensor value) { return push(std::move(value)); }

Var Tape::param(Param& p) {
    Var v = push(p.value);
    nodes_.back().bound_param = &p;
    const int32_t id = v.id;
    nodes_.back().back = [id](Tape& t) {
        Node& n = t.nodes_[static_cast<size_t>(id)];
        if (n.grad_alloc) n.bound_param->grad += n.grad;
    };
    return v;
}

Var Tape::stop_gradient(Var x) { return push(val(x.id)); }

void Tape::backward(Var root) {
    const Tensor& rv = val(root.id);
    if (rv.size() != 1) throw std::invalid_argument("Tape::backward: root must be scalar");
    grad_ref(root.id)[0] = 1.0;
    for (int32_t i = static_cast<int32_t>(nodes_.size()) - 1; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.back && n.grad_alloc) n.back(*this);
    }
}

Var Tape::matmul(Var a, Var b) {
    Tensor y = inpad::matmul(val(a.id), val(b.id));
    Var out = push(std::move(y));
    const int32_t ai = a.id, bi = b.id, oi = out.id;
    nodes_.back().back = [ai, bi, oi](Tape& t) {
        const Tensor& g = t.grad_ref(oi);
        // y = a b: da = g b^T ; db = a^T g
        t.grad_ref(ai) += inpad::matmul_nt(g, t.val(bi));
        t.grad_ref(bi) += inpad::matmul_tn(t.val(ai), g);
    };
    return out;
}

Var Tape::matmul_nt(Var a, Var b) {
    Tensor y = inpad::matmul_nt(val(a.id), val(b.id));
    Var out = push(std::move(y));
    const int32_t ai = a.id, bi = b.id, oi = out.id;
    nodes_.back().back = [ai, bi, oi](Tape& t) {
        const Tensor& g = t.grad_ref(oi);
        // y = a b^T: da = g b ; db = g^T a
        t.grad_ref(ai) += inpad::matmul(g, t.val(bi));
        t.grad_ref(bi) += inpad::matmul_tn(g, t.val(ai));
    };
    return out;
}

Var Tape::add(Var a, Var b) {
    Var out = push(val(a.id) + val(b.id));
    const int32_t ai = a.id, bi = b.id, oi = out.id;
    nodes_.back().back = [ai, bi, oi](Tape& t) {
        const Tensor& g = t.grad_ref(oi);
        t.grad_ref(ai) += g;
        t.grad_ref(bi) += g;
    };
    return out;
}

Var Tape::sub(Var a, Var b) {
    Var out = push(val(a.id) - val(b.id));
    const int32_t ai = a.id, bi = b.id, oi = out.id;
    nodes_.back().back = [ai, bi, oi](Tape& t) {
        const Tensor& g = t.grad_ref(oi);
        t.grad_ref(ai) += g;
        t.grad_ref(bi) -= g;
    };
    return out;
}

Var Tape::mul(Var a, Var b) {
    Var out = push(hadamard(val(a.id), val(b.id)));
    const int32_t ai = a.id, bi = b.id, oi = out.id;
    nodes_.back().back = [ai, bi, oi](Tape& t) {
        const Tensor& g = t.grad_ref(oi);
        t.grad_ref(ai) += hadamard(g, t.val(bi));
        t.grad_ref(bi) += hadamard(g, t.val(ai));
    };
    return out;
}

Var Tape::affine(Var x, double alpha, double beta) {
    Tensor y = val(x.id);
    for (int64_t i = 0; i < y.size(); ++i) y[i] = alpha * y[i] + beta;
    Var out = push(std::move(y));
    const int32_t xi = x.id, oi = out.id;
    nodes_.back().back = [xi, oi, alpha](Tape& t) {
        const Tensor& g = t.grad_ref(oi);
        Tensor& gx = t.grad_ref(xi);
        for (int64_t i = 0; i < g.size(); ++i) gx[i] += alpha * g[i];
    };
    return out;
}

Var Tape::add_scaled(Var a, Var b, double beta) {
    check_same_shape(val(a.id), val(b.id), "Tape::add_scaled");
    Tensor y = val(a.id);
    const Tensor& bv = val(b.id);
    for (int64_t i = 0; i < y.size(); ++i) y[i] += beta * bv[i];
    Var out = push(std::move(y));
    const int32_t ai = a.id, bi = b.id, oi = out.id;
    nodes_.back().back = [ai, bi, oi, beta](Tape& t) {
        const Tensor& g = t.grad_ref(oi);
        t.grad_ref(ai) += g;
        Tensor& gb = t.grad_ref(bi);
        for (int64_t i = 0; i < g.size(); ++i) gb[i] += beta * g[i];
    };
    return out;
}

Var Tape::add_n(const std::vector<Var>& xs) {
    if (xs.empty()) throw std::invalid_argument("Tape::add_n: empty list");
    Tensor y = val(xs[0].id);
    for (size_t i = 1; i < xs.size(); ++i) y += val(xs[i].id);
    Var out = push(std::move(y));
    std::vector<int32_t> ids;
    ids.reserve(xs.size());
    for (Var v : xs) ids.push_back(v.id);
    const int32_t oi = out.id;
    nodes_.back().back = [ids, oi](Tape& t) {
        const Tensor& g = t.grad_ref(oi);
        for (int32_t id : ids) t.grad_ref(id) += g;
    };
    return out;
}

Var Tape::add_rowvec(Var x, Var b) {
    const Tensor& xv = val(x.id);
    const Tensor& bv = val(b.id);
    if (bv.rows() != 1 || bv.cols() != xv.cols()) {
        throw std::invalid_argument("Tape::add_rowvec: bias must be 1 x cols");
    }
    Tensor y = xv;
    for (int64_t i = 0; i < y.rows(); ++i)
        for (int64_t j = 0; j < y.cols(); ++j) y(i, j) += bv(0, j);
    Var out = push(std::move(y));
    const int32_t xi = x.id, bi = b.id, oi = out.id;
    nodes_.back().back = [xi, bi, oi](Tape& t) {
        const Tensor& g = t.grad_ref(oi);
        t.grad_ref(xi) += g;
        Tensor& gb = t.grad_ref(bi);
        for (int64_t i = 0; i < g.rows(); ++i)
            for (int64_t j = 0; j < g.cols(); ++j) gb(0, j) += g(i, j);
    };
    return out;
}

Var Tape::relu(Var x) {
    Tensor y = val(x.id);
    for (int64_t i = 0; i < y.size(); ++i) y[i] = std::max(y[i], 0.0);
    Var out = push(std::move(y));
    const int32_t xi = x.id, oi = out.id;
    nodes_.back().back = [xi, oi](Tape& t) {
        const Tensor& g = t.grad_ref(oi);
        const Tensor& xv = t.val(xi);
        Tensor& gx = t.grad_ref(xi);
        for (int64_t i = 0; i < g.size(); ++i) {
            if (xv[i] > 0.0) gx[i] += g[i];
        }
    };
    return out;
}

Var Tape::gelu(Var x) {
    Tensor y = val(x.id);
    for (int64_t i = 0; i < y.size(); ++i) {
        const double v = y[i];
        y[i] = 0.5 * v * (1.0 + std::erf(v / M_SQRT2));
    }
    Var out = push(std::move(y));
    const int32_t xi = x.id, oi = out.id;
    nodes_.back().back = [xi, oi](Tape& t) {
        const Tensor& g = t.grad_ref(oi);
        const Tensor& xv = t.val(xi);
        Tensor& gx = t.grad_ref(xi);
        for (int64_t i = 0; i < g.size(); ++i) {
            const double v = xv[i];
            const double phi = 0.5 * (1.0 + std::erf(v / M_SQRT2));
            const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * M_PI);
            gx[i] += g[i] * (phi + v * pdf);
        }
    };
    return out;
}

Var Tape::sigmoid(Var x) {
    Tensor y = val(x.id);
    for (int64_t i = 0; i < y.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-y[i]));
    Var out = push(std::move(y));
    const int32_t xi = x.id, oi = out.id;
    nodes_.back().back = [xi, oi](Tape& t) {
        const Tensor& g = t.grad_ref(oi);
        const Tensor& yv = t.val(oi);
        Tensor& gx = t.grad_ref(xi);
        for (int64_t i = 0; i < g.size(); ++i) gx[i] += g[i] * yv[i] * (1.0 - yv[i]);
    };
    return out;
}

Var Tape::softmax_rows(Var x) {
    Tensor y = val(x.id);
    for (int64_t i = 0; i < y.rows(); ++i) {
        double mx = y(i, 0);
        for (int64_t j = 1; j < y.cols(); ++j) mx = std::max(mx, y(i, j));
        double s = 0.0;
        for (int64_t j = 0; j < y.cols(); ++j) {
            y(i, j) = std::exp(y(i, j) - mx);
            s += y(i, j);
        }
        for (int64_t j = 0; j < y.cols(); ++j) y(i, j) /= s;
    }
    Var out = push(std::move(y));
    const int32_t xi = x.id, oi = out.id;
    nodes_.back().back = [xi, oi](Tape& t) {
        const Tensor& g = t.grad_ref(oi);
        const Tensor& yv = t.val(oi);
        Tensor& gx = t.grad_ref(xi);
        for (int64_t i = 0; i < g.rows(); ++i) {
            double dot = 0.0;
            for (int64_t j = 0; j < g.cols(); ++j) dot += g(i, j) * yv(i, j);
            for (int64_t j = 0; j < g.cols(); ++j) gx(i, j) += yv(i, j) * (g(i, j) - dot);
        }
    };
    return out;
}

Var Tape::cosine_cross(Var f, Var p) {
    const Tensor& fv = val(f.id);
    const Tensor& pv = val(p.id);
    if (fv.cols() != pv.cols()) throw std::invalid_argument("cosine_cross: channel mismatch");
    const int64_t n = fv.rows(), m = pv.rows(), c = fv.cols();
    Tensor fnorm(n, 1), pnorm(m, 1);
    for (int64_t i = 0; i < n; ++i) fnorm(i, 0) = norm_clamped(fv.data() + i * c, c, kNormEps);
    for (int64_t j = 0; j < m; ++j) pnorm(j, 0) = norm_clamped(pv.data() + j * c, c, kNormEps);
    Tensor y(n, m);
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < m; ++j) {
            double dot = 0.0;
            for (int64_t k = 0; k < c; ++k) dot += fv(i, k) * pv(j, k);
            y(i, j) = std::clamp(dot / (fnorm(i, 0) * pnorm(j, 0)), -1.0, 1.0);
        }
    }
    Var out = push(std::move(y));
    const int32_t fi = f.id, pi = p.id, oi = out.id;
    nodes_.back().back = [fi, pi, oi, fnorm, pnorm](Tape& t) {
        const Tensor& g = t.grad_ref(oi);
        const Tensor& fv2 = t.val(fi);
        const Tensor& pv2 = t.val(pi);
        const Tensor& sv = t.val(oi);
        Tensor& gf = t.grad_ref(fi);
        Tensor& gp = t.grad_ref(pi);
        const int64_t n2 = fv2.rows(), m2 = pv2.rows(), c2 = fv2.cols();
        for (int64_t i = 0; i < n2; ++i) {
            const double nf = fnorm(i, 0);
            const bool f_live = nf > kNormEps; // clamped rows keep a constant denominator
            for (int64_t j = 0; j < m2; ++j) {
                const double gij = g(i, j);
                if (gij == 0.0) continue;
                const double np = pnorm(j, 0);
                const bool p_live = np > kNormEps;
                const double s = sv(i, j);
                for (int64_t k = 0; k < c2; ++k) {
                    double df = pv2(j, k) / (nf * np);
                    if (f_live) df -= s * fv2(i, k) / (nf * nf);
                    gf(i, k) += gij * df;
                    double dp = fv2(i, k) / (nf * np);
                    if (p_live) dp -= s * pv2(j, k) / (np * np);
                    gp(j, k) += gij * dp;
                }
            }
        }
    };
    return out;
}

Var Tape::cosine_rows(Var a, Var b) {
    const Tensor& av = val(a.id);
    const Tensor& bv = val(b.id);
    check_same_shape(av, bv, "cosine_rows");
    const int64_t n = av.rows(), c = av.cols();
    Tensor y(n, 1);
    for (int64_t i = 0; i < n; ++i) {
        y(i, 0) = cosine(av.data() + i * c, bv.data() + i * c, c, kNormEps);
    }
    Var out = push(std::move(y));
    const int32_t ai = a.id, bi = b.id, oi = out.id;
    nodes_.back().back = [ai, bi, oi](Tape& t) {
        const Tensor& g = t.grad_ref(oi);
        const Tensor& av2 = t.val(ai);
        const Tensor& bv2 = t.val(bi);
        const Tensor& sv = t.val(oi);
        Tensor& ga = t.grad_ref(ai);
        Tensor& gb = t.grad_ref(bi);
        const int64_t n2 = av2.rows(), c2 = av2.cols();
        for (int64_t i = 0; i < n2; ++i) {
            const double gi = g(i, 0);
            if (gi == 0.0) continue;
            const double na = norm_clamped(av2.data() + i * c2, c2, kNormEps);
            const double nb = norm_clamped(bv2.data() + i * c2, c2, kNormEps);
            const bool a_live = na > kNormEps, b_live = nb > kNormEps;
            const double s = sv(i, 0);
            for (int64_t k = 0; k < c2; ++k) {
                double da = bv2(i, k) / (na * nb);
                if (a_live) da -= s * av2(i, k) / (na * na);
                ga(i, k) += gi * da;
                double db = av2(i, k) / (na * nb);
                if (b_live) db -= s * bv2(i, k) / (nb * nb);
                gb(i, k) += gi * db;
            }
        }
    };
    return out;
}

Var Tape::row_min(Var x) {
    const Tensor& xv = val(x.id);
    const int64_t n = xv.rows(), m = xv.cols();
    Tensor y(n, 1);
    std::vector<int64_t> arg(static_cast<size_t>(n), 0);
    for (int64_t i = 0; i < n; ++i) {
        double best = xv(i, 0);
        int64_t bj = 0;
        for (int64_t j = 1; j < m; ++j) {
            if (xv(i, j) < best) {
                best = xv(i, j);
                bj = j;
            }
        }
        y(i, 0) = best;
        arg[static_cast<size_t>(i)] = bj;
    }
    Var out = push(std::move(y));
    const int32_t xi = x.id, oi = out.id;
    nodes_.back().back = [xi, oi, arg](Tape& t) {
        const Tensor& g = t.grad_ref(oi);
        Tensor& gx = t.grad_ref(xi);
        for (int64_t i = 0; i < g.rows(); ++i) {
            gx(i, arg[static_cast<size_t>(i)]) += g(i, 0);
        }
    };
    return out;
}

Var Tape::mean_all(Var x) {
    const Tensor& xv = val(x.id);
    const double inv = 1.0 / static_cast<double>(xv.size());
    Tensor y(1, 1);
    y[0] = xv.sum() * inv;
    Var out = push(std::move(y));
    const int32_t xi = x.id, oi = out.id;
    nodes_.back().back = [xi, oi, inv](Tape& t) {
        const double g = t.grad_ref(oi)[0] * inv;
        Tensor& gx = t.grad_ref(xi);
        for (int64_t i = 0; i < gx.size(); ++i) gx[i] += g;
    };
    return out;
}

Var Tape::sum_all(Var x) {
    Tensor y(1, 1);
    y[0] = val(x.id).sum();
    Var out = push(std::move(y));
    const int32_t xi = x.id, oi = out.id;
    nodes_.back().back = [xi, oi](Tape& t) {
        const double g = t.grad_ref(oi)[0];
        Tensor& gx = t.grad_ref(xi);
        for (int64_t i = 0; i < gx.size(); ++i) gx[i] += g;
    };
    return out;
}

Var Tape::global_cosine_dist(Var a, Var b) {
    const Tensor& av = val(a.id);
    const Tensor& bv = val(b.id);
    check_same_shape(av, bv, "global_cosine_dist");
    const double na = std::max(av.frobenius_norm(), kNormEps);
    const double nb = std::max(bv.frobenius_norm(), kNormEps);
    double dot = 0.0;
    for (int64_t i = 0; i < av.size(); ++i) dot += av[i] * bv[i];
    const double cos = std::clamp(dot / (na * nb), -1.0, 1.0);
    Tensor y(1, 1);
    y[0] = 1.0 - cos;
    Var out = push(std::move(y));
    const int32_t ai = a.id, bi = b.id, oi = out.id;
    nodes_.back().back = [ai, bi, oi, na, nb, cos](Tape& t) {
        const double g = t.grad_ref(oi)[0];
        const Tensor& av2 = t.val(ai);
        const Tensor& bv2 = t.val(bi);
        Tensor& ga = t.grad_ref(ai);
        Tensor& gb = t.grad_ref(bi);
        const bool a_live = na > kNormEps, b_live = nb > kNormEps;
        for (int64_t i = 0; i < av2.size(); ++i) {
            double da = bv2[i] / (na * nb);
            if (a_live) da -= cos * av2[i] / (na * na);
            ga[i] += -g * da;
            double db = av2[i] / (na * nb);
            if (b_live) db -= cos * bv2[i] / (nb * nb);
            gb[i] += -g * db;
        }
    };
    return out;
}

Var Tape::mse_mean(Var a, Var b) {
    const Tensor& av = val(a.id);
    const Tensor& bv = val(b.id);
    check_same_shape(av, bv, "mse_mean");
    const double inv = 1.0 / static_cast<double>(av.size());
    double s = 0.0;
    for (int64_t i = 0; i < av.size(); ++i) {
        const double d = av[i] - bv[i];
        s += d * d;
    }
    Tensor y(1, 1);
    y[0] = s * inv;
    Var out = push(std::move(y));
    const int32_t ai = a.id, bi = b.id, oi = out.id;
    nodes_.back().back = [ai, bi, oi, inv](Tape& t) {
        const double g = t.grad_ref(oi)[0];
        const Tensor& av2 = t.val(ai);
        const Tensor& bv2 = t.val(bi);
        Tensor& ga = t.grad_ref(ai);
        Tensor& gb = t.grad_ref(bi);
        for (int64_t i = 0; i < av2.size(); ++i) {
            const double d = 2.0 * inv * g * (av2[i] - bv2[i]);
            ga[i] += d;
            gb[i] -= d;
        }
    };
    return out;
}

Var Tape::grad_scale_rows(Var x, const Tensor& weights) {
    const Tensor& xv = val(x.id);
    if (weights.rows() != xv.rows() || weights.cols() != 1) {
        throw std::invalid_argument("grad_scale_rows: weights must be rows x 1");
    }
    Var out = push(xv);
    const int32_t xi = x.id, oi = out.id;
    Tensor w = weights;
    nodes_.back().back = [xi, oi, w](Tape& t) {
        const Tensor& g = t.grad_ref(oi);
        Tensor& gx = t.grad_ref(xi);
        for (int64_t i = 0; i < g.rows(); ++i) {
            const double wi = w(i, 0);
            for (int64_t j = 0; j < g.cols(); ++j) gx(i, j) += g(i, j) * wi;
        }
    };
    return out;
}

Var Tape::residual_rows(Var q, Var d) {
    const Tensor& qv = val(q.id);
    const Tensor& dv = val(d.id);
    check_same_shape(qv, dv, "residual_rows");
    const int64_t n = qv.rows(), c = qv.cols();
    Tensor y(n, c);
    Tensor cosv(n, 1);
    for (int64_t i = 0; i < n; ++i) {
        const double s = cosine(qv.data() + i * c, dv.data() + i * c, c, kNormEps);
        cosv(i, 0) = s;
        for (int64_t k = 0; k < c; ++k) y(i, k) = (1.0 - s) * std::fabs(qv(i, k) - dv(i, k));
    }
    Var out = push(std::move(y));
    const int32_t qi = q.id, di = d.id, oi = out.id;
    nodes_.back().back = [qi, di, oi, cosv](Tape& t) {
        const Tensor& g = t.grad_ref(oi);
        const Tensor& qv2 = t.val(qi);
        const Tensor& dv2 = t.val(di);
        Tensor& gq = t.grad_ref(qi);
        Tensor& gd = t.grad_ref(di);
        const int64_t n2 = qv2.rows(), c2 = qv2.cols();
        for (int64_t i = 0; i < n2; ++i) {
            const double s = cosv(i, 0);
            const double nq = norm_clamped(qv2.data() + i * c2, c2, kNormEps);
            const double nd = norm_clamped(dv2.data() + i * c2, c2, kNormEps);
            const bool q_live = nq > kNormEps, d_live = nd > kNormEps;
            double acc = 0.0; // sum_k g_ik * |q_ik - d_ik|
            for (int64_t k = 0; k < c2; ++k) acc += g(i, k) * std::fabs(qv2(i, k) - dv2(i, k));
            for (int64_t k = 0; k < c2; ++k) {
                double ds_dq = dv2(i, k) / (nq * nd);
                if (q_live) ds_dq -= s * qv2(i, k) / (nq * nq);
                double ds_dd = qv2(i, k) / (nq * nd);
                if (d_live) ds_dd -= s * dv2(i, k) / (nd * nd);
                const double sg = sign0(qv2(i, k) - dv2(i, k));
                gq(i, k) += -acc * ds_dq + (1.0 - s) * g(i, k) * sg;
                gd(i, k) += -acc * ds_dd - (1.0 - s) * g(i, k) * sg;
            }
        }
    };
    return out;
}

Var Tape::dice_loss(const std::vector<Var>& preds, const std::vector<Tensor>& gts) {
    if (preds.empty() || preds.size() != gts.size()) {
        throw std::invalid_argument("dice_loss: prediction/target count mismatch");
    }
    double inter = 0.0, denom = 0.0;
    for (size_t s = 0; s < preds.size(); ++s) {
        const Tensor& p = val(preds[s].id);
        const Tensor& g = gts[s];
        if (p.size() != g.size()) throw std::invalid_argument("dice_loss: shape mismatch");
        for (int64_t i = 0; i < p.size(); ++i) {
            inter += p[i] * g[i];
            denom += p[i] * p[i] + g[i] * g[i];
        }
    }
    Tensor y(1, 1);
    // Smoothing applies only to the all-empty case, making it exactly 0.
    y[0] = denom == 0.0 ? 0.0 : 1.0 - 2.0 * inter / denom;
    Var out = push(std::move(y));
    if (denom == 0.0) return out;
    std::vector<int32_t> ids;
    for (Var v : preds) ids.push_back(v.id);
    const int32_t oi = out.id;
    std::vector<Tensor> gts_copy = gts;
    nodes_.back().back = [ids, oi, gts_copy, inter, denom](Tape& t) {
        const double g = t.grad_ref(oi)[0];
        for (size_t s = 0; s < ids.size(); ++s) {
            const Tensor& pv = t.val(ids[s]);
            Tensor& gp = t.grad_ref(ids[s]);
            const Tensor& gt = gts_copy[s];
            for (int64_t i = 0; i < pv.size(); ++i) {
                gp[i] += g * (-2.0 * gt[i] * denom + 4.0 * inter * pv[i]) / (denom * denom);
            }
        }
    };
    return out;
}

Var Tape::tokens_to_chw(Var x, int64_t h, int64_t w) {
    const Tensor& xv = val(x.id);
    if (xv.rows() != h * w) throw std::invalid_argument("tokens_to_chw: N != h*w");
    const int64_t c = xv.cols();
    Tensor y(c, h * w);
    for (int64_t n = 0; n < h * w; ++n)
        for (int64_t k = 0; k < c; ++k) y(k, n) = xv(n, k);
    Var out = push(std::move(y));
    const int32_t xi = x.id, oi = out.id;
    nodes_.back().back = [xi, oi](Tape& t) {
        const Tensor& g = t.grad_ref(oi);
        Tensor& gx = t.grad_ref(xi);
        for (int64_t k = 0; k < g.rows(); ++k)
            for (int64_t n = 0; n < g.cols(); ++n) gx(n, k) += g(k, n);
    };
    return out;
}

Var Tape::reshape(Var x, int64_t rows, int64_t cols) {
    const Tensor& xv = val(x.id);
    if (rows * cols != xv.size()) throw std::invalid_argument("reshape: size mismatch");
    Tensor y = Tensor::from_vector(rows, cols, xv.vec());
    Var out = push(std::move(y));
    const int32_t xi = x.id, oi = out.id;
    nodes_.back().back = [xi, oi](Tape& t) {
        const Tensor& g = t.grad_ref(oi);
        Tensor& gx = t.grad_ref(xi);
        for (int64_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    };
    return out;
}

Var Tape::conv2d(Var x, Var w, Var b, int64_t in_c, int64_t h, int64_t wdt, int64_t out_c,
                 int64_t kh, int64_t kw, int64_t stride, int64_t pad) {
    const Tensor& xv = val(x.id);
    const Tensor& wv = val(w.id);
    const Tensor& bv = val(b.id);
    if (xv.rows() != in_c || xv.cols() != h * wdt) throw std::invalid_argument("conv2d: bad input shape");
    if (wv.rows() != out_c || wv.cols() != in_c * kh * kw) throw std::invalid_argument("conv2d: bad weight shape");
    const int64_t oh = (h + 2 * pad - kh) / stride + 1;
    const int64_t ow = (wdt + 2 * pad - kw) / stride + 1;
    Tensor y(out_c, oh * ow);
    for (int64_t oc = 0; oc < out_c; ++oc) {
        for (int64_t oy = 0; oy < oh; ++oy) {
            for (int64_t ox = 0; ox < ow; ++ox) {
                double s = bv(0, oc);
                for (int64_t ic = 0; ic < in_c; ++ic) {
                    for (int64_t ky = 0; ky < kh; ++ky) {
                        const int64_t iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (int64_t kx = 0; kx < kw; ++kx) {
                            const int64_t ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= wdt) continue;
                            s += xv(ic, iy * wdt + ix) * wv(oc, (ic * kh + ky) * kw + kx);
                        }
                    }
                }
                y(oc, oy * ow + ox) = s;
            }
        }
    }
    Var out = push(std::move(y));
    const int32_t xi = x.id, wi = w.id, bi = b.id, oi = out.id;
    nodes_.back().back = [=](Tape& t) {
        const Tensor& g = t.grad_ref(oi);
        const Tensor& xv2 = t.val(xi);
        const Tensor& wv2 = t.val(wi);
        Tensor& gx = t.grad_ref(xi);
        Tensor& gw = t.grad_ref(wi);
        Tensor& gb = t.grad_ref(bi);
        for (int64_t oc = 0; oc < out_c; ++oc) {
            for (int64_t oy = 0; oy < oh; ++oy) {
                for (int64_t ox = 0; ox < ow; ++ox) {
                    const double go = g(oc, oy * ow + ox);
                    if (go == 0.0) continue;
                    gb(0, oc) += go;
                    for (int64_t ic = 0; ic < in_c; ++ic) {
                        for (int64_t ky = 0; ky < kh; ++ky) {
                            const int64_t iy = oy * stride - pad + ky;
                            if (iy < 0 || iy >= h) continue;
                            for (int64_t kx = 0; kx < kw; ++kx) {
                                const int64_t ix = ox * stride - pad + kx;
                                if (ix < 0 || ix >= wdt) continue;
                                gx(ic, iy * wdt + ix) += go * wv2(oc, (ic * kh + ky) * kw + kx);
                                gw(oc, (ic * kh + ky) * kw + kx) += go * xv2(ic, iy * wdt + ix);
                            }
                        }
                    }
                }
            }
        }
    };
    return out;
}

Var Tape::conv_transpose2d(Var x, Var w, Var b, int64_t in_c, int64_t h, int64_t wdt, int64_t out_c,
                           int64_t kh, int64_t kw, int64_t stride, int64_t pad) {
    const Tensor& xv = val(x.id);
    const Tensor& wv = val(w.id);
    const Tensor& bv = val(b.id);
    if (xv.rows() != in_c || xv.cols() != h * wdt) throw std::invalid_argument("conv_transpose2d: bad input shape");
    if (wv.rows() != in_c || wv.cols() != out_c * kh * kw) throw std::invalid_argument("conv_transpose2d: bad weight shape");
    const int64_t oh = (h - 1) * stride - 2 * pad + kh;
    const int64_t ow = (wdt - 1) * stride - 2 * pad + kw;
    Tensor y(out_c, oh * ow);
    for (int64_t oc = 0; oc < out_c; ++oc)
        for (int64_t i = 0; i < oh * ow; ++i) y(oc, i) = bv(0, oc);
    for (int64_t ic = 0; ic < in_c; ++ic) {
        for (int64_t iy = 0; iy < h; ++iy) {
            for (int64_t ix = 0; ix < wdt; ++ix) {
                const double xval = xv(ic, iy * wdt + ix);
                if (xval == 0.0) continue;
                for (int64_t oc = 0; oc < out_c; ++oc) {
                    for (int64_t ky = 0; ky < kh; ++ky) {
                        const int64_t oy = iy * stride - pad + ky;
                        if (oy < 0 || oy >= oh) continue;
                        for (int64_t kx = 0; kx < kw; ++kx) {
                            const int64_t ox = ix * stride - pad + kx;
                            if (ox < 0 || ox >= ow) continue;
                            y(oc, oy * ow + ox) += xval * wv(ic, (oc * kh + ky) * kw + kx);
                        }
                    }
                }
            }
        }
    }
    Var out = push(std::move(y));
    const int32_t xi = x.id, wi = w.id, bi = b.id, oi = out.id;
    nodes_.back().back = [=](Tape& t) {
        const Tensor& g = t.grad_ref(oi);
        const Tensor& xv2 = t.val(xi);
        const Tensor& wv2 = t.val(wi);
        Tensor& gx = t.grad_ref(xi);
        Tensor& gw = t.grad_ref(wi);
        Tensor& gb = t.grad_ref(bi);
        for (int64_t oc = 0; oc < out_c; ++oc)
            for (int64_t i = 0; i < oh * ow; ++i) gb(0, oc) += g(oc, i);
        for (int64_t ic = 0; ic < in_c; ++ic) {
            for (int64_t iy = 0; iy < h; ++iy) {
                for (int64_t ix = 0; ix < wdt; ++ix) {
                    const double xval = xv2(ic, iy * wdt + ix);
                    double acc = 0.0;
                    for (int64_t oc = 0; oc < out_c; ++oc) {
                        for (int64_t ky = 0; ky < kh; ++ky) {
                            const int64_t oy = iy * stride - pad + ky;
                            if (oy < 0 || oy >= oh) continue;
                            for (int64_t kx = 0; kx < kw; ++kx) {
                                const int64_t ox = ix * stride - pad + kx;
                                if (ox < 0 || ox >= ow) continue;
                                const double go = g(oc, oy * ow + ox);
                                acc += go * wv2(ic, (oc * kh + ky) * kw + kx);
                                gw(ic, (oc * kh + ky) * kw + kx) += go * xval;
                            }
                        }
                    }
                    gx(ic, iy * wdt + ix) += acc;
                }
            }
        }
    };
    return out;
}

namespace {

struct Tap1D {
    int64_t lo, hi;
    double frac;
};

// half-pixel centers, clamped to the source extent
Tap1D bilinear_tap(int64_t dst, int64_t src_dim, int64_t dst_dim) {
    const double src = (static_cast<double>(dst) + 0.5) * static_cast<double>(src_dim) /
                           static_cast<double>(dst_dim) -
                       0.5;
    const double s = std::max(0.0, std::min(src, static_cast<double>(src_dim - 1)));
    Tap1D tap;
    tap.lo = static_cast<int64_t>(std::floor(s));
    tap.hi = std::min(tap.lo + 1, src_dim - 1);
    tap.frac = s - static_cast<double>(tap.lo);
    return tap;
}

} // namespace

Var Tape::upsample_bilinear(Var x, int64_t c, int64_t h, int64_t w, int64_t out_h, int64_t out_w) {
    const Tensor& xv = val(x.id);
    if (xv.rows() != c || xv.cols() != h * w) throw std::invalid_argument("upsample_bilinear: bad input shape");
    std::vector<Tap1D> ys(static_cast<size_t>(out_h)), xs(static_cast<size_t>(out_w));
    for (int64_t i = 0; i < out_h; ++i) ys[static_cast<size_t>(i)] = bilinear_tap(i, h, out_h);
    for (int64_t j = 0; j < out_w; ++j) xs[static_cast<size_t>(j)] = bilinear_tap(j, w, out_w);
    Tensor y(c, out_h * out_w);
    for (int64_t ch = 0; ch < c; ++ch) {
        for (int64_t i = 0; i < out_h; ++i) {
            const auto& ty = ys[static_cast<size_t>(i)];
            for (int64_t j = 0; j < out_w; ++j) {
                const auto& tx = xs[static_cast<size_t>(j)];
                const double v00 = xv(ch, ty.lo * w + tx.lo);
                const double v01 = xv(ch, ty.lo * w + tx.hi);
                const double v10 = xv(ch, ty.hi * w + tx.lo);
                const double v11 = xv(ch, ty.hi * w + tx.hi);
                y(ch, i * out_w + j) = (1.0 - ty.frac) * ((1.0 - tx.frac) * v00 + tx.frac * v01) +
                                       ty.frac * ((1.0 - tx.frac) * v10 + tx.frac * v11);
            }
        }
    }
    Var out = push(std::move(y));
    const int32_t xi = x.id, oi = out.id;
    nodes_.back().back = [xi, oi, c, h, w, out_h, out_w, ys, xs](Tape& t) {
        const Tensor& g = t.grad_ref(oi);
        Tensor& gx = t.grad_ref(xi);
        for (int64_t ch = 0; ch < c; ++ch) {
            for (int64_t i = 0; i < out_h; ++i) {
                const auto& ty = ys[static_cast<size_t>(i)];
                for (int64_t j = 0; j < out_w; ++j) {
                    const auto& tx = xs[static_cast<size_t>(j)];
                    const double go = g(ch, i * out_w + j);
                    if (go == 0.0) continue;
                    gx(ch, ty.lo * w + tx.lo) += go * (1.0 - ty.frac) * (1.0 - tx.frac);
                    gx(ch, ty.lo * w + tx.hi) += go * (1.0 - ty.frac) * tx.frac;
                    gx(ch, ty.hi * w + tx.lo) += go * ty.frac * (1.0 - tx.frac);
                    gx(ch, ty.hi * w + tx.hi) += go * ty.frac * tx.frac;
                }
            }
        }
    };
    return out;
}

} // namespace inpad
