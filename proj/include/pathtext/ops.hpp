#pragma once

#include <span>
#include <vector>

#include "pathtext/tensor.hpp"

namespace pathtext::ad {

// Elementwise, same shape.
Tensor add(Tensor a, Tensor b);
Tensor sub(Tensor a, Tensor b);
Tensor mul(Tensor a, Tensor b);
// out = c * a
Tensor scale(Tensor a, double c);

// m (n x d) + v broadcast across rows; v is (1 x d) or (d).
Tensor add_rowvec(Tensor m, Tensor v);
// m (n x d) * v broadcast across rows.
Tensor mul_rowvec(Tensor m, Tensor v);
// m (n x d) * c broadcast across columns; c is (n x 1) or (n).
Tensor mul_colvec(Tensor m, Tensor c);

Tensor matmul(Tensor a, Tensor b);
Tensor transpose(Tensor a);

Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
inline Tensor concat_cols(Tensor a, Tensor b) {
  Tensor parts[2] = {a, b};
  return concat_cols(std::span<const Tensor>(parts, 2));
}
Tensor slice_cols(Tensor a, int start, int len);
Tensor slice_rows(Tensor a, int start, int len);

// table (V x E), ids in [0, V) -> (ids.size() x E). Backward scatters rows.
Tensor embedding_gather(Tensor table, const std::vector<int>& ids);

Tensor sigmoid(Tensor a);
Tensor tanh_op(Tensor a);
Tensor relu(Tensor a);

// Row-wise over the last dimension of a 2-d tensor.
Tensor softmax(Tensor a);
Tensor log_softmax(Tensor a);

// Row-wise normalization to zero mean / unit variance (no affine part).
Tensor layer_norm(Tensor a, double eps = 1e-5);

// Sum over rows of -log softmax(logits)[target]; rows whose target equals
// ignore_id contribute nothing. n_counted reports the included row count.
Tensor cross_entropy_sum(Tensor logits, const std::vector<int>& targets,
                         int ignore_id, int64_t* n_counted = nullptr);
// Mean over non-ignored rows; 0 (with zero grads) when every row is ignored.
Tensor cross_entropy(Tensor logits, const std::vector<int>& targets,
                     int ignore_id);

// Mean over rows -> (1 x d).
Tensor mean_rows(Tensor a);

// Sum of all elements -> scalar.
Tensor sum_all(Tensor a);

}  // namespace pathtext::ad
