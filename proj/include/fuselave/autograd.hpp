// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <vector>

#include "fuselave/ectf_mask.hpp"
#include "fuselave/tensor.hpp"

namespace fuselave {

// A graph variable. Parameters alias external storage; intermediates are
// owned by the Graph arena and die with it.
struct Node {
    Tensor* val = nullptr;
    Tensor* grad = nullptr;
    int rows() const { return val->rows; }
    int cols() const { return val->cols; }
};

// Eager-forward reverse-mode tape over Tensor nodes. All ops accumulate
// per output element in a fixed order, so forward values are independent
// of which other rows exist in the sequence.
class Graph {
  public:
    Node* alloc(int rows, int cols);
    Node* constant(Tensor value);
    Node* param(Tensor& value, Tensor& grad);

    void backward();

    // c = a @ b
    Node* matmul(Node* a, Node* b);
    // c = a + b (same shape)
    Node* add(Node* a, Node* b);
    // c = a + bias (bias broadcast over rows)
    Node* add_rowvec(Node* a, Node* bias);
    // c = a * v (v broadcast over rows)
    Node* mul_rowvec(Node* a, Node* v);
    // c = a * b elementwise
    Node* mul(Node* a, Node* b);
    Node* add_scalar(Node* a, double s);
    Node* scale(Node* a, double s);
    Node* silu(Node* a);
    // Parameterless RMS normalization per row.
    Node* rmsnorm(Node* a);
    // c.row(i) = a.row(rows[i])
    Node* gather_rows(Node* a, std::vector<int> rows);
    // out.row(dest[i]) = part.row(i) for each (part, dest); dests must cover
    // disjoint rows.
    Node* compose_rows(int total_rows, int cols,
                       const std::vector<std::pair<Node*, std::vector<int>>>& parts);
    // c.row(i) = table.row(ids[i]) with scatter-add backward.
    Node* embedding(Node* table, std::vector<int> ids);
    // Rotary rotation of each head segment of each row; tables are [rows x
    // d_head/2], shared by reference with the caller.
    Node* rope(Node* a, int head_dim, std::shared_ptr<Tensor> cos_tab,
               std::shared_ptr<Tensor> sin_tab);
    // Masked multi-head softmax attention over one packed sequence.
    // q,k,v: [L, heads*head_dim]. The mask is captured by pointer and must
    // outlive backward().
    Node* attention(Node* q, Node* k, Node* v, const AttentionMask* mask, int heads);

  private:
    std::deque<Tensor> arena_;
    std::deque<Node> nodes_;
    std::vector<std::function<void()>> tape_;

    Tensor* arena_tensor(int rows, int cols);
    Node* make(Tensor* v, Tensor* g);
};

}  // namespace fuselave
