#pragma once

#include <vector>

#include "marge/tensor.hpp"

namespace marge {

enum class Reduction { Sum, Mean };

// Elementwise (same shape).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor sqrt_ew(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);

// x * s with s a {1} tensor (grads flow into both).
Tensor mul_scalar(const Tensor& x, const Tensor& s);

// Add a length-C vector to every row of a [R,C] matrix.
Tensor add_rowvec(const Tensor& x, const Tensor& v);

// Matrix products on 2-D tensors. matmul_nt(a, b) = a · bᵀ.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

Tensor softmax_lastdim(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);

// Concatenate along axis 0 (1-D or 2-D) or axis 1 (2-D).
Tensor concat(const std::vector<Tensor>& tensors, int axis);
Tensor slice_rows(const Tensor& x, int offset, int len);
Tensor slice_cols(const Tensor& x, int offset, int len);
Tensor reshape(const Tensor& x, const std::vector<int>& shape);
Tensor sum(const Tensor& x);  // -> {1}

// Expand per-segment values to per-element: out[offset_j .. offset_j+len_j) = v[j].
Tensor expand_segments(const Tensor& v, const std::vector<int>& lengths);

// Token-level negative log-likelihood of targets under row softmaxes.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     Reduction reduction = Reduction::Sum);

}  // namespace marge
