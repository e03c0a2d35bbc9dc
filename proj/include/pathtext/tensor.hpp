#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace pathtext::ad {

// Numeric precision of stored values. In f32 mode every written element is
// rounded through float, so buffers only ever hold float-representable
// values and float32 checkpoints round-trip bit-exactly. f64 is the default
// and is what all gradient checks and determinism tests run under.
enum class Precision { f32, f64 };

Precision precision();
void set_precision(Precision p);

// Rounds through float when the global mode is f32.
double quantize_value(double x);

struct Storage {
  std::vector<int> shape;
  std::vector<double> val;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
};

// A shared handle to an n-d array, optionally linked to the active tape.
// Copying a Tensor copies the handle, not the buffer.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double v);
  static Tensor from(std::vector<int> shape, std::vector<double> values);
  static Tensor scalar(double v);
  // Leaf with requires_grad set; the unit optimizers act on these.
  static Tensor param(std::vector<int> shape, std::vector<double> values);

  bool defined() const { return st_ != nullptr; }
  const std::vector<int>& shape() const { return st_->shape; }
  int64_t size() const { return static_cast<int64_t>(st_->val.size()); }
  int rows() const;
  int cols() const;

  double* data() { return st_->val.data(); }
  const double* data() const { return st_->val.data(); }
  std::vector<double>& values() { return st_->val; }
  const std::vector<double>& values() const { return st_->val; }

  double item() const;  // scalar tensors only

  bool requires_grad() const { return st_->requires_grad; }
  // True when gradients should flow into or through this tensor.
  bool needs_grad() const { return st_->requires_grad || node_ >= 0; }

  bool has_grad() const { return st_ && !st_->grad.empty(); }
  std::vector<double>& grad_buffer();  // allocates zeros on first use
  const std::vector<double>& grad() const { return st_->grad; }
  void zero_grad();

  int node() const { return node_; }
  void set_node(int n) { node_ = n; }
  std::shared_ptr<Storage> storage() const { return st_; }

  std::string shape_str() const;

 private:
  std::shared_ptr<Storage> st_;
  int node_ = -1;  // index into the active tape; -1 = constant/detached
};

// Populates grads of everything the scalar `loss` depends on. Call once per
// constructed graph; grads of leaves accumulate across graphs until cleared.
// Throws NotScalar / NoTape.
void backward(const Tensor& loss);

// Same values, no tape node: gradients do not flow through the result.
Tensor detach(const Tensor& t);

}  // namespace pathtext::ad
