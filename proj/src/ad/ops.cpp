#include "pathtext/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <functional>

#include "pathtext/errors.hpp"
#include "pathtext/tape.hpp"

namespace pathtext::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;

CMapM as_mat(Tensor t) { return CMapM(t.data(), t.rows(), t.cols()); }

MapM grad_mat(Tensor& t) {
  auto& g = t.grad_buffer();
  return MapM(g.data(), t.rows(), t.cols());
}

void quantize_buf(std::vector<double>& buf) {
  if (precision() == Precision::f32) {
    for (auto& x : buf) x = static_cast<double>(static_cast<float>(x));
  }
}

void quantize_tensor(Tensor& t) { quantize_buf(t.values()); }

// Registers the backward closure and links the output to the tape.
Tensor record(Tensor out, std::function<void()> bw) {
  quantize_tensor(out);
  if (Tape* tape = active_tape()) {
    out.set_node(tape->append(std::move(bw)));
  }
  return out;
}

void check_same_shape(Tensor a, Tensor b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeMismatch(std::string(op) + ": shapes " + a.shape_str() + " and " +
                        b.shape_str() + " differ");
  }
}

void check_2d(Tensor t, const char* op) {
  if (t.shape().size() != 2) {
    throw ShapeMismatch(std::string(op) + ": expected 2-d tensor, got " + t.shape_str());
  }
}

}  // namespace

Tensor add(Tensor a, Tensor b) {
  check_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  return record(out, [a, b, out]() mutable {
    if (!out.has_grad()) return;
    const auto& go = out.grad();
    if (a.needs_grad()) {
      auto& ga = a.grad_buffer();
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      quantize_buf(ga);
    }
    if (b.needs_grad()) {
      auto& gb = b.grad_buffer();
      for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
      quantize_buf(gb);
    }
  });
}

Tensor sub(Tensor a, Tensor b) {
  check_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  return record(out, [a, b, out]() mutable {
    if (!out.has_grad()) return;
    const auto& go = out.grad();
    if (a.needs_grad()) {
      auto& ga = a.grad_buffer();
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      quantize_buf(ga);
    }
    if (b.needs_grad()) {
      auto& gb = b.grad_buffer();
      for (size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
      quantize_buf(gb);
    }
  });
}

Tensor mul(Tensor a, Tensor b) {
  check_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  return record(out, [a, b, out]() mutable {
    if (!out.has_grad()) return;
    const auto& go = out.grad();
    if (a.needs_grad()) {
      auto& ga = a.grad_buffer();
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * b.data()[i];
      quantize_buf(ga);
    }
    if (b.needs_grad()) {
      auto& gb = b.grad_buffer();
      for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * a.data()[i];
      quantize_buf(gb);
    }
  });
}

Tensor scale(Tensor a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = c * a.data()[i];
  return record(out, [a, c, out]() mutable {
    if (!out.has_grad() || !a.needs_grad()) return;
    const auto& go = out.grad();
    auto& ga = a.grad_buffer();
    for (size_t i = 0; i < go.size(); ++i) ga[i] += c * go[i];
    quantize_buf(ga);
  });
}

Tensor add_rowvec(Tensor m, Tensor v) {
  check_2d(m, "add_rowvec");
  const int n = m.rows(), d = m.cols();
  if (v.size() != d) {
    throw ShapeMismatch("add_rowvec: vector " + v.shape_str() + " vs matrix " + m.shape_str());
  }
  Tensor out = Tensor::zeros(m.shape());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.data()[i * d + j] = m.data()[i * d + j] + v.data()[j];
  return record(out, [m, v, out, n, d]() mutable {
    if (!out.has_grad()) return;
    const auto& go = out.grad();
    if (m.needs_grad()) {
      auto& gm = m.grad_buffer();
      for (size_t i = 0; i < go.size(); ++i) gm[i] += go[i];
      quantize_buf(gm);
    }
    if (v.needs_grad()) {
      auto& gv = v.grad_buffer();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) gv[j] += go[i * d + j];
      quantize_buf(gv);
    }
  });
}

Tensor mul_rowvec(Tensor m, Tensor v) {
  check_2d(m, "mul_rowvec");
  const int n = m.rows(), d = m.cols();
  if (v.size() != d) {
    throw ShapeMismatch("mul_rowvec: vector " + v.shape_str() + " vs matrix " + m.shape_str());
  }
  Tensor out = Tensor::zeros(m.shape());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.data()[i * d + j] = m.data()[i * d + j] * v.data()[j];
  return record(out, [m, v, out, n, d]() mutable {
    if (!out.has_grad()) return;
    const auto& go = out.grad();
    if (m.needs_grad()) {
      auto& gm = m.grad_buffer();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) gm[i * d + j] += go[i * d + j] * v.data()[j];
      quantize_buf(gm);
    }
    if (v.needs_grad()) {
      auto& gv = v.grad_buffer();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) gv[j] += go[i * d + j] * m.data()[i * d + j];
      quantize_buf(gv);
    }
  });
}

Tensor mul_colvec(Tensor m, Tensor c) {
  check_2d(m, "mul_colvec");
  const int n = m.rows(), d = m.cols();
  if (c.size() != n) {
    throw ShapeMismatch("mul_colvec: vector " + c.shape_str() + " vs matrix " + m.shape_str());
  }
  Tensor out = Tensor::zeros(m.shape());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.data()[i * d + j] = m.data()[i * d + j] * c.data()[i];
  return record(out, [m, c, out, n, d]() mutable {
    if (!out.has_grad()) return;
    const auto& go = out.grad();
    if (m.needs_grad()) {
      auto& gm = m.grad_buffer();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) gm[i * d + j] += go[i * d + j] * c.data()[i];
      quantize_buf(gm);
    }
    if (c.needs_grad()) {
      auto& gc = c.grad_buffer();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) gc[i] += go[i * d + j] * m.data()[i * d + j];
      quantize_buf(gc);
    }
  });
}

Tensor matmul(Tensor a, Tensor b) {
  check_2d(a, "matmul");
  check_2d(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeMismatch("matmul: inner dimensions of " + a.shape_str() + " and " +
                        b.shape_str() + " do not agree");
  }
  Tensor out = Tensor::zeros({a.rows(), b.cols()});
  MapM(out.data(), out.rows(), out.cols()).noalias() = as_mat(a) * as_mat(b);
  return record(out, [a, b, out]() mutable {
    if (!out.has_grad()) return;
    CMapM go(out.grad().data(), out.rows(), out.cols());
    if (a.needs_grad()) {
      grad_mat(a).noalias() += go * as_mat(b).transpose();
      quantize_buf(a.grad_buffer());
    }
    if (b.needs_grad()) {
      grad_mat(b).noalias() += as_mat(a).transpose() * go;
      quantize_buf(b.grad_buffer());
    }
  });
}

Tensor transpose(Tensor a) {
  check_2d(a, "transpose");
  Tensor out = Tensor::zeros({a.cols(), a.rows()});
  MapM(out.data(), out.rows(), out.cols()) = as_mat(a).transpose();
  return record(out, [a, out]() mutable {
    if (!out.has_grad() || !a.needs_grad()) return;
    CMapM go(out.grad().data(), out.rows(), out.cols());
    grad_mat(a) += go.transpose();
    quantize_buf(a.grad_buffer());
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeMismatch("concat_cols: no parts");
  const int n = parts[0].rows();
  int total = 0;
  for (const auto& p : parts) {
    check_2d(p, "concat_cols");
    if (p.rows() != n) {
      throw ShapeMismatch("concat_cols: row counts differ: " + parts[0].shape_str() +
                          " vs " + p.shape_str());
    }
    total += p.cols();
  }
  Tensor out = Tensor::zeros({n, total});
  int off = 0;
  for (const auto& p : parts) {
    const int d = p.cols();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) out.data()[i * total + off + j] = p.data()[i * d + j];
    off += d;
  }
  std::vector<Tensor> owned(parts.begin(), parts.end());
  return record(out, [owned, out, n, total]() mutable {
    if (!out.has_grad()) return;
    const auto& go = out.grad();
    int off = 0;
    for (auto& p : owned) {
      const int d = p.cols();
      if (p.needs_grad()) {
        auto& gp = p.grad_buffer();
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < d; ++j) gp[i * d + j] += go[i * total + off + j];
        quantize_buf(gp);
      }
      off += d;
    }
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeMismatch("concat_rows: no parts");
  const int d = parts[0].cols();
  int total = 0;
  for (const auto& p : parts) {
    check_2d(p, "concat_rows");
    if (p.cols() != d) {
      throw ShapeMismatch("concat_rows: column counts differ: " + parts[0].shape_str() +
                          " vs " + p.shape_str());
    }
    total += p.rows();
  }
  Tensor out = Tensor::zeros({total, d});
  int off = 0;
  for (const auto& p : parts) {
    std::copy(p.data(), p.data() + p.size(), out.data() + static_cast<int64_t>(off) * d);
    off += p.rows();
  }
  std::vector<Tensor> owned(parts.begin(), parts.end());
  return record(out, [owned, out, d]() mutable {
    if (!out.has_grad()) return;
    const auto& go = out.grad();
    int off = 0;
    for (auto& p : owned) {
      if (p.needs_grad()) {
        auto& gp = p.grad_buffer();
        for (int64_t i = 0; i < p.size(); ++i) gp[i] += go[static_cast<int64_t>(off) * d + i];
        quantize_buf(gp);
      }
      off += p.rows();
    }
  });
}

Tensor slice_cols(Tensor a, int start, int len) {
  check_2d(a, "slice_cols");
  if (start < 0 || len <= 0 || start + len > a.cols()) {
    throw ShapeMismatch("slice_cols: range [" + std::to_string(start) + ", " +
                        std::to_string(start + len) + ") out of " + a.shape_str());
  }
  const int n = a.rows(), d = a.cols();
  Tensor out = Tensor::zeros({n, len});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < len; ++j) out.data()[i * len + j] = a.data()[i * d + start + j];
  return record(out, [a, out, start, len, n, d]() mutable {
    if (!out.has_grad() || !a.needs_grad()) return;
    const auto& go = out.grad();
    auto& ga = a.grad_buffer();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < len; ++j) ga[i * d + start + j] += go[i * len + j];
    quantize_buf(ga);
  });
}

Tensor slice_rows(Tensor a, int start, int len) {
  check_2d(a, "slice_rows");
  if (start < 0 || len <= 0 || start + len > a.rows()) {
    throw ShapeMismatch("slice_rows: range [" + std::to_string(start) + ", " +
                        std::to_string(start + len) + ") out of " + a.shape_str());
  }
  const int d = a.cols();
  Tensor out = Tensor::zeros({len, d});
  std::copy(a.data() + static_cast<int64_t>(start) * d,
            a.data() + static_cast<int64_t>(start + len) * d, out.data());
  return record(out, [a, out, start, len, d]() mutable {
    if (!out.has_grad() || !a.needs_grad()) return;
    const auto& go = out.grad();
    auto& ga = a.grad_buffer();
    for (int64_t i = 0; i < static_cast<int64_t>(len) * d; ++i) {
      ga[static_cast<int64_t>(start) * d + i] += go[i];
    }
    quantize_buf(ga);
  });
}

Tensor embedding_gather(Tensor table, const std::vector<int>& ids) {
  check_2d(table, "embedding_gather");
  const int v = table.rows(), e = table.cols();
  for (int id : ids) {
    if (id < 0 || id >= v) {
      throw ShapeMismatch("embedding_gather: id " + std::to_string(id) +
                          " out of vocabulary " + table.shape_str());
    }
  }
  const int n = static_cast<int>(ids.size());
  Tensor out = Tensor::zeros({n, e});
  for (int i = 0; i < n; ++i) {
    std::copy(table.data() + static_cast<int64_t>(ids[i]) * e,
              table.data() + static_cast<int64_t>(ids[i] + 1) * e, out.data() + static_cast<int64_t>(i) * e);
  }
  return record(out, [table, out, ids, e]() mutable {
    if (!out.has_grad() || !table.needs_grad()) return;
    const auto& go = out.grad();
    auto& gt = table.grad_buffer();
    for (size_t i = 0; i < ids.size(); ++i)
      for (int j = 0; j < e; ++j) gt[static_cast<int64_t>(ids[i]) * e + j] += go[i * e + j];
    quantize_buf(gt);
  });
}

Tensor sigmoid(Tensor a) {
  Tensor out = Tensor::zeros(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = 1.0 / (1.0 + std::exp(-a.data()[i]));
  return record(out, [a, out]() mutable {
    if (!out.has_grad() || !a.needs_grad()) return;
    const auto& go = out.grad();
    auto& ga = a.grad_buffer();
    for (size_t i = 0; i < go.size(); ++i) {
      const double y = out.data()[i];
      ga[i] += go[i] * y * (1.0 - y);
    }
    quantize_buf(ga);
  });
}

Tensor tanh_op(Tensor a) {
  Tensor out = Tensor::zeros(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = std::tanh(a.data()[i]);
  return record(out, [a, out]() mutable {
    if (!out.has_grad() || !a.needs_grad()) return;
    const auto& go = out.grad();
    auto& ga = a.grad_buffer();
    for (size_t i = 0; i < go.size(); ++i) {
      const double y = out.data()[i];
      ga[i] += go[i] * (1.0 - y * y);
    }
    quantize_buf(ga);
  });
}

Tensor relu(Tensor a) {
  Tensor out = Tensor::zeros(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
  return record(out, [a, out]() mutable {
    if (!out.has_grad() || !a.needs_grad()) return;
    const auto& go = out.grad();
    auto& ga = a.grad_buffer();
    for (size_t i = 0; i < go.size(); ++i) {
      if (a.data()[i] > 0.0) ga[i] += go[i];
    }
    quantize_buf(ga);
  });
}

namespace {
// Row-wise softmax into out; both n x d.
void softmax_rows(const double* in, double* out, int n, int d) {
  for (int i = 0; i < n; ++i) {
    const double* x = in + static_cast<int64_t>(i) * d;
    double* y = out + static_cast<int64_t>(i) * d;
    double mx = x[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (int j = 0; j < d; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    for (int j = 0; j < d; ++j) y[j] /= sum;
  }
}
}  // namespace

Tensor softmax(Tensor a) {
  check_2d(a, "softmax");
  const int n = a.rows(), d = a.cols();
  Tensor out = Tensor::zeros(a.shape());
  softmax_rows(a.data(), out.data(), n, d);
  return record(out, [a, out, n, d]() mutable {
    if (!out.has_grad() || !a.needs_grad()) return;
    const auto& go = out.grad();
    auto& ga = a.grad_buffer();
    for (int i = 0; i < n; ++i) {
      const double* y = out.data() + static_cast<int64_t>(i) * d;
      const double* g = go.data() + static_cast<int64_t>(i) * d;
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += g[j] * y[j];
      for (int j = 0; j < d; ++j) ga[static_cast<int64_t>(i) * d + j] += (g[j] - dot) * y[j];
    }
    quantize_buf(ga);
  });
}

Tensor log_softmax(Tensor a) {
  check_2d(a, "log_softmax");
  const int n = a.rows(), d = a.cols();
  Tensor out = Tensor::zeros(a.shape());
  for (int i = 0; i < n; ++i) {
    const double* x = a.data() + static_cast<int64_t>(i) * d;
    double* y = out.data() + static_cast<int64_t>(i) * d;
    double mx = x[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (int j = 0; j < d; ++j) sum += std::exp(x[j] - mx);
    const double lse = mx + std::log(sum);
    for (int j = 0; j < d; ++j) y[j] = x[j] - lse;
  }
  return record(out, [a, out, n, d]() mutable {
    if (!out.has_grad() || !a.needs_grad()) return;
    const auto& go = out.grad();
    auto& ga = a.grad_buffer();
    for (int i = 0; i < n; ++i) {
      const double* y = out.data() + static_cast<int64_t>(i) * d;
      const double* g = go.data() + static_cast<int64_t>(i) * d;
      double gsum = 0.0;
      for (int j = 0; j < d; ++j) gsum += g[j];
      for (int j = 0; j < d; ++j) {
        ga[static_cast<int64_t>(i) * d + j] += g[j] - std::exp(y[j]) * gsum;
      }
    }
    quantize_buf(ga);
  });
}

Tensor layer_norm(Tensor a, double eps) {
  check_2d(a, "layer_norm");
  const int n = a.rows(), d = a.cols();
  Tensor out = Tensor::zeros(a.shape());
  std::vector<double> inv_sigma(n);
  for (int i = 0; i < n; ++i) {
    const double* x = a.data() + static_cast<int64_t>(i) * d;
    double* y = out.data() + static_cast<int64_t>(i) * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += x[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= d;
    inv_sigma[i] = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < d; ++j) y[j] = (x[j] - mean) * inv_sigma[i];
  }
  return record(out, [a, out, inv_sigma, n, d]() mutable {
    if (!out.has_grad() || !a.needs_grad()) return;
    const auto& go = out.grad();
    auto& ga = a.grad_buffer();
    for (int i = 0; i < n; ++i) {
      const double* y = out.data() + static_cast<int64_t>(i) * d;
      const double* g = go.data() + static_cast<int64_t>(i) * d;
      double gmean = 0.0, gymean = 0.0;
      for (int j = 0; j < d; ++j) {
        gmean += g[j];
        gymean += g[j] * y[j];
      }
      gmean /= d;
      gymean /= d;
      for (int j = 0; j < d; ++j) {
        ga[static_cast<int64_t>(i) * d + j] += inv_sigma[i] * (g[j] - gmean - y[j] * gymean);
      }
    }
    quantize_buf(ga);
  });
}

Tensor cross_entropy_sum(Tensor logits, const std::vector<int>& targets,
                         int ignore_id, int64_t* n_counted) {
  check_2d(logits, "cross_entropy");
  const int n = logits.rows(), d = logits.cols();
  if (static_cast<int>(targets.size()) != n) {
    throw ShapeMismatch("cross_entropy: " + std::to_string(targets.size()) +
                        " targets for logits " + logits.shape_str());
  }
  std::vector<double> probs(static_cast<size_t>(n) * d);
  softmax_rows(logits.data(), probs.data(), n, d);
  double loss = 0.0;
  int64_t counted = 0;
  for (int i = 0; i < n; ++i) {
    const int t = targets[i];
    if (t == ignore_id) continue;
    if (t < 0 || t >= d) {
      throw ShapeMismatch("cross_entropy: target " + std::to_string(t) +
                          " out of range for logits " + logits.shape_str());
    }
    loss -= std::log(std::max(probs[static_cast<size_t>(i) * d + t], 1e-300));
    ++counted;
  }
  if (n_counted != nullptr) *n_counted = counted;
  Tensor out = Tensor::scalar(loss);
  return record(out, [logits, out, targets, ignore_id, probs = std::move(probs), n, d]() mutable {
    if (!out.has_grad() || !logits.needs_grad()) return;
    const double g = out.grad()[0];
    if (g == 0.0) return;
    auto& gl = logits.grad_buffer();
    for (int i = 0; i < n; ++i) {
      const int t = targets[i];
      if (t == ignore_id) continue;
      for (int j = 0; j < d; ++j) {
        double p = probs[static_cast<size_t>(i) * d + j];
        gl[static_cast<int64_t>(i) * d + j] += g * (p - (j == t ? 1.0 : 0.0));
      }
    }
    quantize_buf(gl);
  });
}

Tensor cross_entropy(Tensor logits, const std::vector<int>& targets, int ignore_id) {
  int64_t counted = 0;
  Tensor total = cross_entropy_sum(logits, targets, ignore_id, &counted);
  if (counted == 0) return Tensor::scalar(0.0);
  return scale(total, 1.0 / static_cast<double>(counted));
}

Tensor sum_all(Tensor a) {
  double s = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) s += a.data()[i];
  Tensor out = Tensor::scalar(s);
  return record(out, [a, out]() mutable {
    if (!out.has_grad() || !a.needs_grad()) return;
    const double g = out.grad()[0];
    auto& ga = a.grad_buffer();
    for (auto& x : ga) x += g;
    quantize_buf(ga);
  });
}

Tensor mean_rows(Tensor a) {
  check_2d(a, "mean_rows");
  const int n = a.rows(), d = a.cols();
  Tensor out = Tensor::zeros({1, d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.data()[j] += a.data()[static_cast<int64_t>(i) * d + j];
  for (int j = 0; j < d; ++j) out.data()[j] /= n;
  return record(out, [a, out, n, d]() mutable {
    if (!out.has_grad() || !a.needs_grad()) return;
    const auto& go = out.grad();
    auto& ga = a.grad_buffer();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) ga[static_cast<int64_t>(i) * d + j] += go[j] / n;
    quantize_buf(ga);
  });
}

}  // namespace pathtext::ad
