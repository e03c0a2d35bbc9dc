#include <vector>

#include "doctest.h"
#include "pathtext/ops.hpp"
#include "pathtext/rng.hpp"
#include "pathtext/tape.hpp"
#include "pathtext/tensor.hpp"
#include "test_util.hpp"

using namespace pathtext;
using namespace pathtext::ad;
using pathtext::testing::check_grad_fd;
using pathtext::testing::random_tensor;

TEST_SUITE_BEGIN("grad");

TEST_CASE("elementwise ops against central differences") {
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    Rng rng(seed);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({3, 4}, rng);
    Tensor w = random_tensor({3, 4}, rng, false);  // fixed mixing weights

    check_grad_fd({a, b}, [&] { return sum_all(mul(add(a, b), w)); });
    check_grad_fd({a, b}, [&] { return sum_all(mul(sub(a, b), w)); });
    check_grad_fd({a, b}, [&] { return sum_all(mul(mul(a, b), w)); });
    check_grad_fd({a}, [&] { return sum_all(scale(a, -1.7)); });
  }
}

TEST_CASE("broadcast ops against central differences") {
  for (uint64_t seed : {4ull, 5ull, 6ull}) {
    Rng rng(seed);
    Tensor m = random_tensor({3, 4}, rng);
    Tensor v = random_tensor({1, 4}, rng);
    Tensor c = random_tensor({3, 1}, rng);
    Tensor w = random_tensor({3, 4}, rng, false);

    check_grad_fd({m, v}, [&] { return sum_all(mul(add_rowvec(m, v), w)); });
    check_grad_fd({m, v}, [&] { return sum_all(mul(mul_rowvec(m, v), w)); });
    check_grad_fd({m, c}, [&] { return sum_all(mul(mul_colvec(m, c), w)); });
  }
}

TEST_CASE("matmul and transpose against central differences") {
  for (uint64_t seed : {7ull, 8ull, 9ull}) {
    Rng rng(seed);
    Tensor a = random_tensor({3, 5}, rng);
    Tensor b = random_tensor({5, 2}, rng);
    Tensor w = random_tensor({3, 2}, rng, false);
    check_grad_fd({a, b}, [&] { return sum_all(mul(matmul(a, b), w)); });

    Tensor wt = random_tensor({5, 3}, rng, false);
    check_grad_fd({a}, [&] { return sum_all(mul(transpose(a), wt)); });
  }
}

TEST_CASE("concat and slice against central differences") {
  for (uint64_t seed : {10ull, 11ull, 12ull}) {
    Rng rng(seed);
    Tensor a = random_tensor({2, 3}, rng);
    Tensor b = random_tensor({2, 2}, rng);
    Tensor c = random_tensor({2, 4}, rng);
    Tensor w = random_tensor({2, 9}, rng, false);
    check_grad_fd({a, b, c}, [&] {
      Tensor parts[3] = {a, b, c};
      return sum_all(mul(concat_cols(std::span<const Tensor>(parts, 3)), w));
    });

    Tensor d = random_tensor({3, 3}, rng);
    Tensor wr = random_tensor({5, 3}, rng, false);
    check_grad_fd({a, d}, [&] {
      Tensor parts[2] = {a, d};
      return sum_all(mul(concat_rows(std::span<const Tensor>(parts, 2)), wr));
    });

    Tensor ws = random_tensor({2, 2}, rng, false);
    check_grad_fd({c}, [&] { return sum_all(mul(slice_cols(c, 1, 2), ws)); });
    Tensor wrow = random_tensor({1, 3}, rng, false);
    check_grad_fd({d}, [&] { return sum_all(mul(slice_rows(d, 1, 1), wrow)); });
  }
}

TEST_CASE("embedding gather scatters gradients into the right rows") {
  for (uint64_t seed : {13ull, 14ull, 15ull}) {
    Rng rng(seed);
    Tensor table = random_tensor({5, 3}, rng);
    const std::vector<int> ids = {4, 0, 4, 2};  // repeated id accumulates
    Tensor w = random_tensor({4, 3}, rng, false);
    check_grad_fd({table}, [&] { return sum_all(mul(embedding_gather(table, ids), w)); });
  }
}

TEST_CASE("nonlinearities against central differences") {
  for (uint64_t seed : {16ull, 17ull, 18ull}) {
    Rng rng(seed);
    Tensor x = random_tensor({3, 4}, rng);
    Tensor w = random_tensor({3, 4}, rng, false);
    check_grad_fd({x}, [&] { return sum_all(mul(sigmoid(x), w)); });
    check_grad_fd({x}, [&] { return sum_all(mul(tanh_op(x), w)); });

    // Keep relu inputs away from the kink.
    Tensor r = random_tensor({3, 4}, rng);
    for (int64_t i = 0; i < r.size(); ++i) r.data()[i] += r.data()[i] >= 0.0 ? 0.5 : -0.5;
    check_grad_fd({r}, [&] { return sum_all(mul(relu(r), w)); });
  }
}

TEST_CASE("softmax family against central differences") {
  for (uint64_t seed : {19ull, 20ull, 21ull}) {
    Rng rng(seed);
    Tensor x = random_tensor({3, 5}, rng);
    Tensor w = random_tensor({3, 5}, rng, false);
    check_grad_fd({x}, [&] { return sum_all(mul(softmax(x), w)); });
    check_grad_fd({x}, [&] { return sum_all(mul(log_softmax(x), w)); });
    check_grad_fd({x}, [&] { return sum_all(mul(layer_norm(x), w)); });
  }
}

TEST_CASE("reductions against central differences") {
  for (uint64_t seed : {22ull, 23ull, 24ull}) {
    Rng rng(seed);
    Tensor x = random_tensor({4, 3}, rng);
    Tensor w = random_tensor({1, 3}, rng, false);
    check_grad_fd({x}, [&] { return sum_all(mul(mean_rows(x), w)); });
    check_grad_fd({x}, [&] { return sum_all(x); });
  }
}

TEST_CASE("cross entropy against central differences") {
  for (uint64_t seed : {25ull, 26ull, 27ull}) {
    Rng rng(seed);
    Tensor logits = random_tensor({4, 6}, rng);
    const std::vector<int> targets = {2, 0, 9, 5};  // one ignored row
    check_grad_fd({logits}, [&] { return cross_entropy_sum(logits, targets, 9); });
    check_grad_fd({logits}, [&] { return cross_entropy(logits, targets, 9); });
  }
}

TEST_CASE("a tensor used twice accumulates both contributions") {
  Rng rng(28);
  Tensor x = random_tensor({2, 2}, rng);
  // y = x*x + 2x elementwise; dy/dx = 2x + 2.
  check_grad_fd({x}, [&] { return sum_all(add(mul(x, x), scale(x, 2.0))); });

  x.zero_grad();
  Tape tape;
  TapeScope scope(tape);
  Tensor loss = sum_all(add(mul(x, x), scale(x, 2.0)));
  backward(loss);
  for (int64_t i = 0; i < x.size(); ++i) {
    CHECK(x.grad()[i] == doctest::Approx(2.0 * x.data()[i] + 2.0).epsilon(1e-12));
  }
}

TEST_CASE("detach blocks the first branch but not the second") {
  Rng rng(29);
  Tensor x = random_tensor({2, 2}, rng);
  Tape tape;
  TapeScope scope(tape);
  Tensor frozen = detach(mul(x, x));
  Tensor loss = sum_all(mul(frozen, x));  // d/dx = frozen only
  backward(loss);
  for (int64_t i = 0; i < x.size(); ++i) {
    CHECK(x.grad()[i] == doctest::Approx(frozen.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("gated recurrent composite against central differences") {
  // One full gated step: z, r gates, candidate state, convex mix. This is
  // the shape of computation the sequence models are built from.
  Rng rng(30);
  const int e = 3, h = 4;
  Tensor x = random_tensor({1, e}, rng);
  Tensor hidden = random_tensor({1, h}, rng);
  Tensor wz = random_tensor({e + h, h}, rng);
  Tensor wr = random_tensor({e + h, h}, rng);
  Tensor wh = random_tensor({e + h, h}, rng);
  Tensor bz = random_tensor({1, h}, rng);
  Tensor br = random_tensor({1, h}, rng);
  Tensor bh = random_tensor({1, h}, rng);
  Tensor w = random_tensor({1, h}, rng, false);

  auto step = [&]() {
    Tensor xh = concat_cols(x, hidden);
    Tensor z = sigmoid(add_rowvec(matmul(xh, wz), bz));
    Tensor r = sigmoid(add_rowvec(matmul(xh, wr), br));
    Tensor xrh = concat_cols(x, mul(r, hidden));
    Tensor cand = tanh_op(add_rowvec(matmul(xrh, wh), bh));
    Tensor one_minus_z = sub(Tensor::full({1, h}, 1.0), z);
    Tensor next = add(mul(one_minus_z, hidden), mul(z, cand));
    return sum_all(mul(next, w));
  };
  check_grad_fd({x, hidden, wz, wr, wh, bz, br, bh}, step, 1e-5, 1e-7, 1e-4);
}

TEST_SUITE_END();
