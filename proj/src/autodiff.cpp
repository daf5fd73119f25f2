#include "kiwi/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "kiwi/kernels.hpp"

namespace kiwi::ad {

namespace {

Var make(Tensor val, std::vector<Var> parents, std::function<void(Node&)> back) {
    auto n = std::make_shared<Node>();
    n->val = std::move(val);
    n->parents = std::move(parents);
    n->back = std::move(back);
    return n;
}

void ensure_grad(Node& n) {
    if (n.grad.numel() != n.val.numel()) n.grad = Tensor::zeros(n.val.shape());
}

void require_2d(const Var& v, const char* op) {
    if (v->val.ndim() != 2)
        throw std::invalid_argument(std::string(op) + ": expected 2D tensor, got " + shape_str(v->val));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a->val.same_shape(b->val))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a->val) + " vs " + shape_str(b->val));
}

} // namespace

Var constant(Tensor v) {
    return make(std::move(v), {}, nullptr);
}

Var leaf(Param& p) {
    auto n = std::make_shared<Node>();
    n->val = p.value;
    n->param = &p;
    n->back = [](Node& self) {
        Param* p = self.param;
        for (int64_t i = 0; i < self.grad.numel(); ++i) p->grad[i] += self.grad[i];
    };
    return n;
}

Var matmul(const Var& a, const Var& b) {
    require_2d(a, "matmul"); require_2d(b, "matmul");
    Tensor c = kernels::matmul(a->val, b->val);
    return make(std::move(c), {a, b}, [](Node& self) {
        Var a = self.parents[0], b = self.parents[1];
        ensure_grad(*a); ensure_grad(*b);
        // dA += G * B^T : (m,n)x(k,n)^T
        {
            Tensor da = kernels::matmul_nt(self.grad, b->val);
            for (int64_t i = 0; i < da.numel(); ++i) a->grad[i] += da[i];
        }
        // dB += A^T * G
        kernels::matmul_tn_acc(a->val, self.grad, b->grad);
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    require_2d(a, "matmul_nt"); require_2d(b, "matmul_nt");
    Tensor c = kernels::matmul_nt(a->val, b->val);
    return make(std::move(c), {a, b}, [](Node& self) {
        Var a = self.parents[0], b = self.parents[1];
        ensure_grad(*a); ensure_grad(*b);
        // C = A * B^T ; dA += G * B ; dB += G^T * A
        {
            Tensor da = kernels::matmul(self.grad, b->val);
            for (int64_t i = 0; i < da.numel(); ++i) a->grad[i] += da[i];
        }
        kernels::matmul_tn_acc(self.grad, a->val, b->grad);
    });
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Tensor c = a->val;
    for (int64_t i = 0; i < c.numel(); ++i) c[i] += b->val[i];
    return make(std::move(c), {a, b}, [](Node& self) {
        for (auto& p : self.parents) {
            ensure_grad(*p);
            for (int64_t i = 0; i < self.grad.numel(); ++i) p->grad[i] += self.grad[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    Tensor c = a->val;
    for (int64_t i = 0; i < c.numel(); ++i) c[i] -= b->val[i];
    return make(std::move(c), {a, b}, [](Node& self) {
        Var a = self.parents[0], b = self.parents[1];
        ensure_grad(*a); ensure_grad(*b);
        for (int64_t i = 0; i < self.grad.numel(); ++i) {
            a->grad[i] += self.grad[i];
            b->grad[i] -= self.grad[i];
        }
    });
}

Var hadamard(const Var& a, const Var& b) {
    require_same_shape(a, b, "hadamard");
    Tensor c = a->val;
    for (int64_t i = 0; i < c.numel(); ++i) c[i] *= b->val[i];
    return make(std::move(c), {a, b}, [](Node& self) {
        Var a = self.parents[0], b = self.parents[1];
        ensure_grad(*a); ensure_grad(*b);
        for (int64_t i = 0; i < self.grad.numel(); ++i) {
            a->grad[i] += self.grad[i] * b->val[i];
            b->grad[i] += self.grad[i] * a->val[i];
        }
    });
}

Var add_rowvec(const Var& a, const Var& r) {
    require_2d(a, "add_rowvec"); require_2d(r, "add_rowvec");
    if (r->val.rows() != 1 || r->val.cols() != a->val.cols())
        throw std::invalid_argument("add_rowvec: bad row vector shape");
    Tensor c = a->val;
    const int64_t m = c.rows(), n = c.cols();
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) c.at(i, j) += r->val[j];
    return make(std::move(c), {a, r}, [](Node& self) {
        Var a = self.parents[0], r = self.parents[1];
        ensure_grad(*a); ensure_grad(*r);
        const int64_t m = self.grad.rows(), n = self.grad.cols();
        for (int64_t i = 0; i < m * n; ++i) a->grad[i] += self.grad[i];
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) r->grad[j] += self.grad.at(i, j);
    });
}

Var mul_rowvec(const Var& a, const Var& r) {
    require_2d(a, "mul_rowvec"); require_2d(r, "mul_rowvec");
    if (r->val.rows() != 1 || r->val.cols() != a->val.cols())
        throw std::invalid_argument("mul_rowvec: bad row vector shape");
    Tensor c = a->val;
    const int64_t m = c.rows(), n = c.cols();
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) c.at(i, j) *= r->val[j];
    return make(std::move(c), {a, r}, [](Node& self) {
        Var a = self.parents[0], r = self.parents[1];
        ensure_grad(*a); ensure_grad(*r);
        const int64_t m = self.grad.rows(), n = self.grad.cols();
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) {
                a->grad.at(i, j) += self.grad.at(i, j) * r->val[j];
                r->grad[j] += self.grad.at(i, j) * a->val.at(i, j);
            }
    });
}

Var scale(const Var& a, double c) {
    Tensor v = a->val;
    for (int64_t i = 0; i < v.numel(); ++i) v[i] *= c;
    return make(std::move(v), {a}, [c](Node& self) {
        Var a = self.parents[0];
        ensure_grad(*a);
        for (int64_t i = 0; i < self.grad.numel(); ++i) a->grad[i] += c * self.grad[i];
    });
}

Var add_scalar(const Var& a, double c) {
    Tensor v = a->val;
    for (int64_t i = 0; i < v.numel(); ++i) v[i] += c;
    return make(std::move(v), {a}, [](Node& self) {
        Var a = self.parents[0];
        ensure_grad(*a);
        for (int64_t i = 0; i < self.grad.numel(); ++i) a->grad[i] += self.grad[i];
    });
}

Var scale_by(const Var& a, const Var& s) {
    if (s->val.numel() != 1) throw std::invalid_argument("scale_by: scalar must be (1,1)");
    const double sv = s->val[0];
    Tensor v = a->val;
    for (int64_t i = 0; i < v.numel(); ++i) v[i] *= sv;
    return make(std::move(v), {a, s}, [](Node& self) {
        Var a = self.parents[0], s = self.parents[1];
        ensure_grad(*a); ensure_grad(*s);
        const double sv = s->val[0];
        double acc = 0.0;
        for (int64_t i = 0; i < self.grad.numel(); ++i) {
            a->grad[i] += sv * self.grad[i];
            acc += self.grad[i] * a->val[i];
        }
        s->grad[0] += acc;
    });
}

namespace {
constexpr double kGeluC = 0.7978845608028654; // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
} // namespace

Var gelu(const Var& a) {
    Tensor v = a->val;
    for (int64_t i = 0; i < v.numel(); ++i) {
        const double x = v[i];
        v[i] = 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
    }
    return make(std::move(v), {a}, [](Node& self) {
        Var a = self.parents[0];
        ensure_grad(*a);
        for (int64_t i = 0; i < self.grad.numel(); ++i) {
            const double x = a->val[i];
            const double u = kGeluC * (x + kGeluA * x * x * x);
            const double th = std::tanh(u);
            const double d = 0.5 * (1.0 + th) +
                             0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
            a->grad[i] += d * self.grad[i];
        }
    });
}

Var layernorm(const Var& a, double eps) {
    require_2d(a, "layernorm");
    const int64_t m = a->val.rows(), n = a->val.cols();
    Tensor v({m, n});
    Tensor inv_sigma({m, 1});
    for (int64_t i = 0; i < m; ++i) {
        double mu = 0.0;
        for (int64_t j = 0; j < n; ++j) mu += a->val.at(i, j);
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (int64_t j = 0; j < n; ++j) {
            const double d = a->val.at(i, j) - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_sigma[i] = inv;
        for (int64_t j = 0; j < n; ++j) v.at(i, j) = (a->val.at(i, j) - mu) * inv;
    }
    Var out = make(std::move(v), {a}, nullptr);
    Tensor y = out->val;
    out->back = [y = std::move(y), inv = std::move(inv_sigma)](Node& self) {
        Var a = self.parents[0];
        ensure_grad(*a);
        const int64_t m = self.grad.rows(), n = self.grad.cols();
        for (int64_t i = 0; i < m; ++i) {
            double gsum = 0.0, gysum = 0.0;
            for (int64_t j = 0; j < n; ++j) {
                gsum += self.grad.at(i, j);
                gysum += self.grad.at(i, j) * y.at(i, j);
            }
            const double gmean = gsum / static_cast<double>(n);
            const double gymean = gysum / static_cast<double>(n);
            for (int64_t j = 0; j < n; ++j)
                a->grad.at(i, j) +=
                    (self.grad.at(i, j) - gmean - y.at(i, j) * gymean) * inv[i];
        }
    };
    return out;
}

Var softmax_rows(const Var& a) {
    require_2d(a, "softmax_rows");
    Tensor v = a->val;
    kernels::softmax_rows(v);
    Var out = make(std::move(v), {a}, nullptr);
    out->back = [y = out->val](Node& self) {
        Var a = self.parents[0];
        ensure_grad(*a);
        const int64_t m = self.grad.rows(), n = self.grad.cols();
        for (int64_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (int64_t j = 0; j < n; ++j) dot += self.grad.at(i, j) * y.at(i, j);
            for (int64_t j = 0; j < n; ++j)
                a->grad.at(i, j) += y.at(i, j) * (self.grad.at(i, j) - dot);
        }
    };
    return out;
}

Var concat_rows(const Var& a, const Var& b) {
    require_2d(a, "concat_rows"); require_2d(b, "concat_rows");
    if (a->val.cols() != b->val.cols())
        throw std::invalid_argument("concat_rows: column mismatch");
    const int64_t ma = a->val.rows(), mb = b->val.rows(), n = a->val.cols();
    Tensor v({ma + mb, n});
    std::copy(a->val.vec().begin(), a->val.vec().end(), v.vec().begin());
    std::copy(b->val.vec().begin(), b->val.vec().end(), v.vec().begin() + ma * n);
    return make(std::move(v), {a, b}, [ma, n](Node& self) {
        Var a = self.parents[0], b = self.parents[1];
        ensure_grad(*a); ensure_grad(*b);
        const int64_t na = ma * n;
        for (int64_t i = 0; i < na; ++i) a->grad[i] += self.grad[i];
        for (int64_t i = na; i < self.grad.numel(); ++i) b->grad[i - na] += self.grad[i];
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    const int64_t m = parts[0]->val.rows();
    int64_t total = 0;
    for (const auto& p : parts) {
        require_2d(p, "concat_cols");
        if (p->val.rows() != m) throw std::invalid_argument("concat_cols: row mismatch");
        total += p->val.cols();
    }
    Tensor v({m, total});
    std::vector<int64_t> offs;
    int64_t off = 0;
    for (const auto& p : parts) {
        offs.push_back(off);
        const int64_t n = p->val.cols();
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) v.at(i, off + j) = p->val.at(i, j);
        off += n;
    }
    return make(std::move(v), parts, [offs](Node& self) {
        const int64_t m = self.grad.rows();
        for (size_t k = 0; k < self.parents.size(); ++k) {
            Var p = self.parents[k];
            ensure_grad(*p);
            const int64_t n = p->val.cols(), o = offs[k];
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j) p->grad.at(i, j) += self.grad.at(i, o + j);
        }
    });
}

Var slice_rows(const Var& a, int64_t r0, int64_t r1) {
    require_2d(a, "slice_rows");
    if (r0 < 0 || r1 < r0 || r1 > a->val.rows())
        throw std::invalid_argument("slice_rows: bad range");
    const int64_t n = a->val.cols();
    Tensor v({r1 - r0, n});
    std::copy(a->val.vec().begin() + r0 * n, a->val.vec().begin() + r1 * n, v.vec().begin());
    return make(std::move(v), {a}, [r0, n](Node& self) {
        Var a = self.parents[0];
        ensure_grad(*a);
        for (int64_t i = 0; i < self.grad.numel(); ++i)
            a->grad[r0 * n + i] += self.grad[i];
    });
}

Var slice_cols(const Var& a, int64_t c0, int64_t c1) {
    require_2d(a, "slice_cols");
    if (c0 < 0 || c1 < c0 || c1 > a->val.cols())
        throw std::invalid_argument("slice_cols: bad range");
    const int64_t m = a->val.rows();
    Tensor v({m, c1 - c0});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = c0; j < c1; ++j) v.at(i, j - c0) = a->val.at(i, j);
    return make(std::move(v), {a}, [c0](Node& self) {
        Var a = self.parents[0];
        ensure_grad(*a);
        const int64_t m = self.grad.rows(), n = self.grad.cols();
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) a->grad.at(i, c0 + j) += self.grad.at(i, j);
    });
}

Var gather_rows(const Var& a, std::vector<int64_t> idx) {
    require_2d(a, "gather_rows");
    const int64_t n = a->val.cols();
    Tensor v({static_cast<int64_t>(idx.size()), n});
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= a->val.rows())
            throw std::out_of_range("gather_rows: index out of range");
        for (int64_t j = 0; j < n; ++j) v.at(static_cast<int64_t>(i), j) = a->val.at(idx[i], j);
    }
    return make(std::move(v), {a}, [idx = std::move(idx)](Node& self) {
        Var a = self.parents[0];
        ensure_grad(*a);
        const int64_t n = self.grad.cols();
        for (size_t i = 0; i < idx.size(); ++i)
            for (int64_t j = 0; j < n; ++j)
                a->grad.at(idx[i], j) += self.grad.at(static_cast<int64_t>(i), j);
    });
}

Var reshape(const Var& a, std::vector<int64_t> shape) {
    Tensor v = a->val.reshaped(std::move(shape));
    return make(std::move(v), {a}, [](Node& self) {
        Var a = self.parents[0];
        ensure_grad(*a);
        for (int64_t i = 0; i < self.grad.numel(); ++i) a->grad[i] += self.grad[i];
    });
}

Var mean_sq_diff(const Var& a, Tensor target) {
    if (!a->val.same_shape(target))
        throw std::invalid_argument("mean_sq_diff: shape mismatch");
    const int64_t n = a->val.numel();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = a->val[i] - target[i];
        acc += d * d;
    }
    Tensor v = Tensor::scalar(acc / static_cast<double>(n));
    return make(std::move(v), {a}, [t = std::move(target)](Node& self) {
        Var a = self.parents[0];
        ensure_grad(*a);
        const int64_t n = a->val.numel();
        const double g = self.grad[0] * 2.0 / static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i) a->grad[i] += g * (a->val[i] - t[i]);
    });
}

Var sum_all(const Var& a) {
    double acc = 0.0;
    for (int64_t i = 0; i < a->val.numel(); ++i) acc += a->val[i];
    return make(Tensor::scalar(acc), {a}, [](Node& self) {
        Var a = self.parents[0];
        ensure_grad(*a);
        for (int64_t i = 0; i < a->grad.numel(); ++i) a->grad[i] += self.grad[0];
    });
}

void backward(const Var& loss) {
    if (loss->val.numel() != 1)
        throw std::invalid_argument("backward: loss must be a scalar");
    // iterative post-order DFS
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack{{loss.get(), 0}};
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    ensure_grad(*loss);
    loss->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->grad.numel() != n->val.numel()) continue; // no grad reached this node
        if (n->back) n->back(*n);
    }
}

} // namespace kiwi::ad
