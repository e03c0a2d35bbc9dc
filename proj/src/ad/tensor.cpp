#include "pathtext/tensor.hpp"

#include <numeric>
#include <sstream>

#include "pathtext/errors.hpp"
#include "pathtext/tape.hpp"

namespace pathtext::ad {

namespace {
Precision g_precision = Precision::f64;
thread_local Tape* g_tape = nullptr;

int64_t numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}
}  // namespace

Precision precision() { return g_precision; }
void set_precision(Precision p) { g_precision = p; }

double quantize_value(double x) {
  return g_precision == Precision::f32 ? static_cast<double>(static_cast<float>(x)) : x;
}

Tape* active_tape() { return g_tape; }

TapeScope::TapeScope(Tape& tape) : prev_(g_tape) { g_tape = &tape; }
TapeScope::~TapeScope() { g_tape = prev_; }

NoTapeScope::NoTapeScope() : prev_(g_tape) { g_tape = nullptr; }
NoTapeScope::~NoTapeScope() { g_tape = prev_; }

Tensor Tensor::zeros(std::vector<int> shape) {
  Tensor t;
  t.st_ = std::make_shared<Storage>();
  t.st_->val.assign(numel(shape), 0.0);
  t.st_->shape = std::move(shape);
  return t;
}

Tensor Tensor::full(std::vector<int> shape, double v) {
  Tensor t = zeros(std::move(shape));
  const double q = quantize_value(v);
  for (auto& x : t.st_->val) x = q;
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values) {
  if (numel(shape) != static_cast<int64_t>(values.size())) {
    throw ShapeMismatch("Tensor::from: shape does not match value count");
  }
  Tensor t;
  t.st_ = std::make_shared<Storage>();
  t.st_->shape = std::move(shape);
  t.st_->val = std::move(values);
  for (auto& x : t.st_->val) x = quantize_value(x);
  return t;
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

Tensor Tensor::param(std::vector<int> shape, std::vector<double> values) {
  Tensor t = from(std::move(shape), std::move(values));
  t.st_->requires_grad = true;
  return t;
}

int Tensor::rows() const {
  return st_->shape.empty() ? 1 : st_->shape[0];
}

int Tensor::cols() const {
  return st_->shape.size() >= 2 ? st_->shape[1] : 1;
}

double Tensor::item() const {
  if (size() != 1) throw NotScalar("item(): tensor has " + shape_str() + " elements");
  return st_->val[0];
}

std::vector<double>& Tensor::grad_buffer() {
  if (st_->grad.empty()) st_->grad.assign(st_->val.size(), 0.0);
  return st_->grad;
}

void Tensor::zero_grad() {
  st_->grad.assign(st_->val.size(), 0.0);
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < st_->shape.size(); ++i) {
    if (i) os << "x";
    os << st_->shape[i];
  }
  os << ")";
  return os.str();
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw NotScalar("backward: loss must be a scalar");
  }
  if (loss.node() < 0) {
    throw NoTape("backward: loss was not produced under an active tape");
  }
  Tape* tape = active_tape();
  if (tape == nullptr) {
    throw NoTape("backward: no active tape");
  }
  auto st = loss.storage();
  if (st->grad.empty()) st->grad.assign(1, 0.0);
  st->grad[0] += 1.0;
  tape->run_backward_from(loss.node());
}

Tensor detach(const Tensor& t) {
  Tensor out = Tensor::from(t.shape(), t.values());
  return out;  // node = -1, requires_grad = false
}

}  // namespace pathtext::ad
