#include <doctest.h>

#include "rpsm/functional.hpp"
#include "support.hpp"

using namespace rpsm;
using rpsm::test::random_tensor;
using rpsm::test::values;

TEST_SUITE("tensor") {

TEST_CASE("construction validates the shape") {
  CHECK_THROWS_AS(Tensor::from({2, 3}, std::vector<double>(5)), ShapeError);
  CHECK_THROWS_AS(Tensor::zeros({2, 0}), ShapeError);
  const Tensor t = Tensor::full({2, 2}, 1.5);
  CHECK(t.numel() == 4);
  CHECK(numel(t.shape()) == t.data().size());
  CHECK_THROWS_AS(t.item(), ShapeError);
}

TEST_CASE("elementwise examples") {
  const Tensor a = Tensor::from({2}, {1, 2});
  const Tensor b = Tensor::from({2}, {3, 4});
  CHECK(values(add(a, b)) == std::vector<double>{4, 6});
  CHECK(values(add(a, Tensor::zeros({2}))) == values(a));
  CHECK(values(sub(b, a)) == std::vector<double>{2, 2});
  CHECK(values(mul(a, b)) == std::vector<double>{3, 8});
  CHECK(values(mul(a, Tensor::scalar(2.0))) == std::vector<double>{2, 4});
  CHECK_THROWS_AS(add(a, Tensor::zeros({3})), ShapeError);
}

TEST_CASE("matmul examples") {
  const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
  CHECK(values(matmul(eye, m)) == values(m));
  CHECK(matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4})).item() == 11.0);
  CHECK_THROWS_AS(matmul(m, Tensor::zeros({3, 1})), ShapeError);
}

TEST_CASE("concat examples") {
  Rng rng(3);
  const Tensor a = random_tensor({2, 3}, rng), b = random_tensor({2, 5}, rng);
  const Tensor c = concat({a, b}, 1);
  CHECK(c.shape() == Shape{2, 8});
  CHECK(c.at(0) == a.at(0));
  CHECK(c.at(3) == b.at(0));
  CHECK(c.at(8) == a.at(3));
  CHECK(values(concat({a}, 0)) == values(a));
  CHECK_THROWS_AS(concat({a, b}, 0), ShapeError);
}

TEST_CASE("concat routes the upstream gradient back to its sources") {
  Rng rng(4);
  Tensor a = random_tensor({2, 3}, rng), b = random_tensor({2, 5}, rng);
  const Tensor w = random_tensor({2, 8}, rng, false);
  backward(sum(mul(concat({a, b}, 1), w)));
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t j = 0; j < 3; ++j) CHECK(a.grad()[r * 3 + j] == w.at(r * 8 + j));
    for (std::size_t j = 0; j < 5; ++j) CHECK(b.grad()[r * 5 + j] == w.at(r * 8 + 3 + j));
  }
}

TEST_CASE("backward examples") {
  Tensor x = Tensor::from({2, 2}, {1, -2, 3, 0.5}, true);
  backward(sum(x));
  CHECK(values(Tensor::from({4}, {x.grad().begin(), x.grad().end()})) == std::vector<double>(4, 1.0));

  x.zero_grad();
  backward(sum(add(x, x)));
  for (double g : x.grad()) CHECK(g == 2.0);

  CHECK_THROWS_AS(backward(x), ShapeError);
}

TEST_CASE("a diamond graph accumulates both paths once") {
  Tensor x = Tensor::from({3}, {0.5, -1.0, 2.0}, true);
  const Tensor y = mul(x, x);
  backward(sum(add(mul(y, x), y)));  // x³ + x²
  for (std::size_t i = 0; i < 3; ++i) {
    const double v = x.at(i);
    CHECK(x.grad()[i] == doctest::Approx(3 * v * v + 2 * v).epsilon(1e-14));
  }
}

TEST_CASE("elementwise and matrix gradients match central differences") {
  Rng rng(11);
  Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
  for (Tensor* leaf : {&a, &b}) {
    CHECK(test::probe_gradient_error([&] { return add(a, b); }, *leaf, rng) < 1e-6);
    CHECK(test::probe_gradient_error([&] { return sub(a, b); }, *leaf, rng) < 1e-6);
    CHECK(test::probe_gradient_error([&] { return mul(a, b); }, *leaf, rng) < 1e-6);
  }
  Tensor m = random_tensor({4, 3}, rng), n = random_tensor({3, 5}, rng);
  CHECK(test::probe_gradient_error([&] { return matmul(m, n); }, m, rng) < 1e-6);
  CHECK(test::probe_gradient_error([&] { return matmul(m, n); }, n, rng) < 1e-6);
  Tensor s = random_tensor({2, 6}, rng);
  CHECK(test::probe_gradient_error([&] { return reshape(slice(s, 1, 2, 3), {3, 2}); }, s, rng) < 1e-6);
  CHECK(test::probe_gradient_error([&] { return tanh(s); }, s, rng) < 1e-6);
  CHECK(test::probe_gradient_error([&] { return sigmoid(s); }, s, rng) < 1e-6);
}

TEST_CASE("relu examples and gradient mask") {
  CHECK(values(relu(Tensor::from({3}, {-1, 0, 2}))) == std::vector<double>{0, 0, 2});
  const Tensor pos = Tensor::from({3}, {0.1, 4, 2});
  CHECK(values(relu(pos)) == values(pos));

  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({10}, rng);
    backward(sum(relu(x)));
    for (std::size_t i = 0; i < 10; ++i) CHECK(x.grad()[i] == (x.at(i) > 0 ? 1.0 : 0.0));
  }
}

TEST_CASE("forward results stay finite on finite inputs") {
  Rng rng(8);
  const Tensor x = random_tensor({4, 4}, rng, false, -50.0, 50.0);
  for (const Tensor& t : {sigmoid(x), tanh(x), relu(x), matmul(x, x)}) {
    for (double v : t.data()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("no-grad mode records nothing") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    const Tensor y = mul(x, x);
    CHECK(y.is_leaf());
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(grad_enabled());
  CHECK_FALSE(mul(x, x).is_leaf());
}

TEST_CASE("branch trace fingerprints ReLU signs and pooling winners") {
  const Tensor a = Tensor::from({4}, {1, -1, 2, -2});
  const Tensor b = Tensor::from({4}, {1, -1, 2, 0.5});
  auto print = [](const Tensor& t) {
    debug::BranchTrace trace;
    relu(t);
    return trace.fingerprint();
  };
  CHECK(print(a) == print(a));
  CHECK(print(a) == print(scale(a, 3.0)));
  CHECK(print(a) != print(b));

  auto pool_print = [](const Tensor& t) {
    debug::BranchTrace trace;
    maxpool2d(t, 2, 2);
    return trace.fingerprint();
  };
  CHECK(pool_print(Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4})) == pool_print(Tensor::from({1, 1, 2, 2}, {0, 1, 2, 9})));
  CHECK(pool_print(Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4})) != pool_print(Tensor::from({1, 1, 2, 2}, {5, 2, 3, 4})));
  CHECK_FALSE(debug::tracing_branches());
}

}  // TEST_SUITE
