// SPDX-License-Identifier: Apache-2.0
#include "fuselave/autograd.hpp"

#include <cmath>

#include "fuselave/common.hpp"

namespace fuselave {

Tensor* Graph::arena_tensor(int rows, int cols) {
    arena_.emplace_back(rows, cols);
    return &arena_.back();
}

Node* Graph::make(Tensor* v, Tensor* g) {
    nodes_.push_back(Node{v, g});
    return &nodes_.back();
}

Node* Graph::alloc(int rows, int cols) {
    return make(arena_tensor(rows, cols), arena_tensor(rows, cols));
}

Node* Graph::constant(Tensor value) {
    const int r = value.rows, c = value.cols;
    arena_.push_back(std::move(value));
    Tensor* v = &arena_.back();
    return make(v, arena_tensor(r, c));
}

Node* Graph::param(Tensor& value, Tensor& grad) { return make(&value, &grad); }

void Graph::backward() {
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
}

Node* Graph::matmul(Node* a, Node* b) {
    check(a->cols() == b->rows(), "matmul: inner dim mismatch");
    Node* c = alloc(a->rows(), b->cols());
    matmul_acc(a->val->data.data(), b->val->data.data(), c->val->data.data(), a->rows(), a->cols(),
               b->cols());
    tape_.push_back([a, b, c] {
        // dA += dC @ B^T ; dB += A^T @ dC
        matmul_nt_acc(c->grad->data.data(), b->val->data.data(), a->grad->data.data(), c->rows(),
                      c->cols(), b->rows());
        matmul_tn_acc(a->val->data.data(), c->grad->data.data(), b->grad->data.data(), b->rows(),
                      a->rows(), c->cols());
    });
    return c;
}

Node* Graph::add(Node* a, Node* b) {
    check(a->rows() == b->rows() && a->cols() == b->cols(), "add: shape mismatch");
    Node* c = alloc(a->rows(), a->cols());
    for (size_t i = 0; i < c->val->size(); ++i) c->val->data[i] = a->val->data[i] + b->val->data[i];
    tape_.push_back([a, b, c] {
        for (size_t i = 0; i < c->val->size(); ++i) {
            a->grad->data[i] += c->grad->data[i];
            b->grad->data[i] += c->grad->data[i];
        }
    });
    return c;
}

Node* Graph::add_rowvec(Node* a, Node* bias) {
    check(bias->rows() == 1 && bias->cols() == a->cols(), "add_rowvec: bias shape mismatch");
    Node* c = alloc(a->rows(), a->cols());
    const int n = a->cols();
    for (int r = 0; r < a->rows(); ++r) {
        const double* ar = a->val->row(r);
        double* cr = c->val->row(r);
        for (int j = 0; j < n; ++j) cr[j] = ar[j] + bias->val->data[j];
    }
    tape_.push_back([a, bias, c, n] {
        for (int r = 0; r < c->rows(); ++r) {
            const double* g = c->grad->row(r);
            double* ag = a->grad->row(r);
            for (int j = 0; j < n; ++j) {
                ag[j] += g[j];
                bias->grad->data[j] += g[j];
            }
        }
    });
    return c;
}

Node* Graph::mul_rowvec(Node* a, Node* v) {
    check(v->rows() == 1 && v->cols() == a->cols(), "mul_rowvec: shape mismatch");
    Node* c = alloc(a->rows(), a->cols());
    const int n = a->cols();
    for (int r = 0; r < a->rows(); ++r) {
        const double* ar = a->val->row(r);
        double* cr = c->val->row(r);
        for (int j = 0; j < n; ++j) cr[j] = ar[j] * v->val->data[j];
    }
    tape_.push_back([a, v, c, n] {
        for (int r = 0; r < c->rows(); ++r) {
            const double* g = c->grad->row(r);
            const double* ar = a->val->row(r);
            double* ag = a->grad->row(r);
            for (int j = 0; j < n; ++j) {
                ag[j] += g[j] * v->val->data[j];
                v->grad->data[j] += g[j] * ar[j];
            }
        }
    });
    return c;
}

Node* Graph::mul(Node* a, Node* b) {
    check(a->rows() == b->rows() && a->cols() == b->cols(), "mul: shape mismatch");
    Node* c = alloc(a->rows(), a->cols());
    for (size_t i = 0; i < c->val->size(); ++i) c->val->data[i] = a->val->data[i] * b->val->data[i];
    tape_.push_back([a, b, c] {
        for (size_t i = 0; i < c->val->size(); ++i) {
            a->grad->data[i] += c->grad->data[i] * b->val->data[i];
            b->grad->data[i] += c->grad->data[i] * a->val->data[i];
        }
    });
    return c;
}

Node* Graph::add_scalar(Node* a, double s) {
    Node* c = alloc(a->rows(), a->cols());
    for (size_t i = 0; i < c->val->size(); ++i) c->val->data[i] = a->val->data[i] + s;
    tape_.push_back([a, c] {
        for (size_t i = 0; i < c->val->size(); ++i) a->grad->data[i] += c->grad->data[i];
    });
    return c;
}

Node* Graph::scale(Node* a, double s) {
    Node* c = alloc(a->rows(), a->cols());
    for (size_t i = 0; i < c->val->size(); ++i) c->val->data[i] = a->val->data[i] * s;
    tape_.push_back([a, c, s] {
        for (size_t i = 0; i < c->val->size(); ++i) a->grad->data[i] += c->grad->data[i] * s;
    });
    return c;
}

Node* Graph::silu(Node* a) {
    Node* c = alloc(a->rows(), a->cols());
    for (size_t i = 0; i < c->val->size(); ++i) {
        const double x = a->val->data[i];
        c->val->data[i] = x / (1.0 + std::exp(-x));
    }
    tape_.push_back([a, c] {
        for (size_t i = 0; i < c->val->size(); ++i) {
            const double x = a->val->data[i];
            const double sig = 1.0 / (1.0 + std::exp(-x));
            a->grad->data[i] += c->grad->data[i] * sig * (1.0 + x * (1.0 - sig));
        }
    });
    return c;
}

Node* Graph::rmsnorm(Node* a) {
    Node* c = alloc(a->rows(), a->cols());
    const int n = a->cols();
    auto rinv = std::make_shared<std::vector<double>>(a->rows());
    for (int r = 0; r < a->rows(); ++r) {
        const double* x = a->val->row(r);
        double ms = 0.0;
        for (int j = 0; j < n; ++j) ms += x[j] * x[j];
        const double ri = 1.0 / std::sqrt(ms / n + 1e-8);
        (*rinv)[r] = ri;
        double* y = c->val->row(r);
        for (int j = 0; j < n; ++j) y[j] = x[j] * ri;
    }
    tape_.push_back([a, c, rinv, n] {
        for (int r = 0; r < c->rows(); ++r) {
            const double* x = a->val->row(r);
            const double* g = c->grad->row(r);
            double* ag = a->grad->row(r);
            const double ri = (*rinv)[r];
            double xg = 0.0;
            for (int j = 0; j < n; ++j) xg += x[j] * g[j];
            const double coef = ri * ri * ri * xg / n;
            for (int j = 0; j < n; ++j) ag[j] += ri * g[j] - coef * x[j];
        }
    });
    return c;
}

Node* Graph::gather_rows(Node* a, std::vector<int> rows) {
    Node* c = alloc(static_cast<int>(rows.size()), a->cols());
    auto idx = std::make_shared<std::vector<int>>(std::move(rows));
    const int n = a->cols();
    for (size_t r = 0; r < idx->size(); ++r)
        std::copy_n(a->val->row((*idx)[r]), n, c->val->row(static_cast<int>(r)));
    tape_.push_back([a, c, idx, n] {
        for (size_t r = 0; r < idx->size(); ++r) {
            const double* g = c->grad->row(static_cast<int>(r));
            double* ag = a->grad->row((*idx)[r]);
            for (int j = 0; j < n; ++j) ag[j] += g[j];
        }
    });
    return c;
}

Node* Graph::compose_rows(int total_rows, int cols,
                          const std::vector<std::pair<Node*, std::vector<int>>>& parts) {
    Node* c = alloc(total_rows, cols);
    struct Part {
        Node* node;
        std::vector<int> dest;
    };
    auto kept = std::make_shared<std::vector<Part>>();
    for (const auto& [node, dest] : parts) {
        check(node->cols() == cols, "compose_rows: column mismatch");
        check(static_cast<int>(dest.size()) == node->rows(), "compose_rows: dest size mismatch");
        for (size_t r = 0; r < dest.size(); ++r)
            std::copy_n(node->val->row(static_cast<int>(r)), cols, c->val->row(dest[r]));
        kept->push_back({node, dest});
    }
    tape_.push_back([c, kept, cols] {
        for (const auto& p : *kept) {
            for (size_t r = 0; r < p.dest.size(); ++r) {
                const double* g = c->grad->row(p.dest[r]);
                double* ag = p.node->grad->row(static_cast<int>(r));
                for (int j = 0; j < cols; ++j) ag[j] += g[j];
            }
        }
    });
    return c;
}

Node* Graph::embedding(Node* table, std::vector<int> ids) {
    for (int id : ids) check(id >= 0 && id < table->rows(), "embedding: id out of range");
    return gather_rows(table, std::move(ids));
}

Node* Graph::rope(Node* a, int head_dim, std::shared_ptr<Tensor> cos_tab,
                  std::shared_ptr<Tensor> sin_tab) {
    check(a->cols() % head_dim == 0, "rope: cols not a multiple of head_dim");
    check(cos_tab->rows == a->rows() && cos_tab->cols == head_dim / 2, "rope: table shape mismatch");
    const int heads = a->cols() / head_dim;
    const int pairs = head_dim / 2;
    Node* c = alloc(a->rows(), a->cols());
    for (int r = 0; r < a->rows(); ++r) {
        const double* x = a->val->row(r);
        double* y = c->val->row(r);
        const double* ct = cos_tab->row(r);
        const double* st = sin_tab->row(r);
        for (int h = 0; h < heads; ++h) {
            const double* xs = x + h * head_dim;
            double* ys = y + h * head_dim;
            for (int i = 0; i < pairs; ++i) {
                ys[2 * i] = xs[2 * i] * ct[i] - xs[2 * i + 1] * st[i];
                ys[2 * i + 1] = xs[2 * i] * st[i] + xs[2 * i + 1] * ct[i];
            }
        }
    }
    tape_.push_back([a, c, cos_tab, sin_tab, heads, head_dim, pairs] {
        for (int r = 0; r < a->rows(); ++r) {
            const double* g = c->grad->row(r);
            double* ag = a->grad->row(r);
            const double* ct = cos_tab->row(r);
            const double* st = sin_tab->row(r);
            for (int h = 0; h < heads; ++h) {
                const double* gs = g + h * head_dim;
                double* as = ag + h * head_dim;
                for (int i = 0; i < pairs; ++i) {
                    as[2 * i] += gs[2 * i] * ct[i] + gs[2 * i + 1] * st[i];
                    as[2 * i + 1] += -gs[2 * i] * st[i] + gs[2 * i + 1] * ct[i];
                }
            }
        }
    });
    return c;
}

Node* Graph::attention(Node* q, Node* k, Node* v, const AttentionMask* mask, int heads) {
    const int L = q->rows();
    check(k->rows() == L && v->rows() == L, "attention: row mismatch");
    check(q->cols() == k->cols() && q->cols() == v->cols(), "attention: col mismatch");
    check(q->cols() % heads == 0, "attention: cols not divisible by heads");
    check(mask->length == L, "attention: mask/sequence mismatch");
    const int dh = q->cols() / heads;
    const double alpha = 1.0 / std::sqrt(static_cast<double>(dh));

    // Per-query key counts and offsets into the flat probability store.
    auto offsets = std::make_shared<std::vector<size_t>>(L + 1, 0);
    for (int i = 0; i < L; ++i) {
        size_t cnt = 0;
        for (const auto& [s, e] : mask->intervals[i]) cnt += static_cast<size_t>(e - s);
        (*offsets)[i + 1] = (*offsets)[i] + cnt;
    }
    const size_t total = (*offsets)[L];
    auto probs = std::make_shared<std::vector<double>>(total * heads);

    Node* out = alloc(L, q->cols());

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int h = 0; h < heads; ++h) {
        std::vector<double> scores;
        double* pbase = probs->data() + static_cast<size_t>(h) * total;
        for (int i = 0; i < L; ++i) {
            const double* qi = q->val->row(i) + h * dh;
            scores.clear();
            double mx = -1e300;
            for (const auto& [s, e] : mask->intervals[i]) {
                for (int j = s; j < e; ++j) {
                    const double* kj = k->val->row(j) + h * dh;
                    double dot = 0.0;
                    for (int c = 0; c < dh; ++c) dot += qi[c] * kj[c];
                    dot *= alpha;
                    scores.push_back(dot);
                    if (dot > mx) mx = dot;
                }
            }
            double denom = 0.0;
            for (double& s : scores) {
                s = std::exp(s - mx);
                denom += s;
            }
            double* p = pbase + (*offsets)[i];
            double* oi = out->val->row(i) + h * dh;
            size_t idx = 0;
            for (const auto& [s, e] : mask->intervals[i]) {
                for (int j = s; j < e; ++j, ++idx) {
                    const double pij = scores[idx] / denom;
                    p[idx] = pij;
                    const double* vj = v->val->row(j) + h * dh;
                    for (int c = 0; c < dh; ++c) oi[c] += pij * vj[c];
                }
            }
        }
    }

    tape_.push_back([q, k, v, out, mask, heads, dh, alpha, offsets, probs] {
        const int L = q->rows();
        const size_t total = (*offsets)[L];
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
        for (int h = 0; h < heads; ++h) {
            std::vector<double> dp;
            const double* pbase = probs->data() + static_cast<size_t>(h) * total;
            for (int i = 0; i < L; ++i) {
                const double* go = out->grad->row(i) + h * dh;
                const double* qi = q->val->row(i) + h * dh;
                double* gq = q->grad->row(i) + h * dh;
                const double* p = pbase + (*offsets)[i];

                dp.clear();
                double dot_pd = 0.0;
                size_t idx = 0;
                for (const auto& [s, e] : mask->intervals[i]) {
                    for (int j = s; j < e; ++j, ++idx) {
                        const double* vj = v->val->row(j) + h * dh;
                        double d = 0.0;
                        for (int c = 0; c < dh; ++c) d += go[c] * vj[c];
                        dp.push_back(d);
                        dot_pd += p[idx] * d;
                    }
                }
                idx = 0;
                for (const auto& [s, e] : mask->intervals[i]) {
                    for (int j = s; j < e; ++j, ++idx) {
                        const double ds = p[idx] * (dp[idx] - dot_pd) * alpha;
                        const double* kj = k->val->row(j) + h * dh;
                        double* gk = k->grad->row(j) + h * dh;
                        double* gv = v->grad->row(j) + h * dh;
                        const double pij = p[idx];
                        for (int c = 0; c < dh; ++c) {
                            gq[c] += ds * kj[c];
                            gk[c] += ds * qi[c];
                            gv[c] += pij * go[c];
                        }
                    }
                }
            }
        }
    });
    return out;
}

}  // namespace fuselave
