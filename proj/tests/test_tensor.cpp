#include <cmath>
#include <filesystem>
#include <functional>

#include "dimask/binio.hpp"
#include "dimask/serialize.hpp"
#include "dimask/tensor.hpp"
#include "doctest.h"
#include "support/gradcheck.hpp"

using namespace dimask;
using testing::gradcheck;
using testing::random_tensor;

namespace {

constexpr double kOpTolerance = 1e-5;
constexpr int kSeeds = 20;

// Runs gradcheck of `build(leaves)` summed against a fixed random weighting,
// so every output element contributes a distinct partial derivative.
void check_op(const std::vector<Shape>& shapes, const std::function<Tensor(std::vector<Tensor>&)>& build,
              double lo = -1.0, double hi = 1.0, double tol = kOpTolerance) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(1000 + seed);
    std::vector<Tensor> leaves;
    for (const auto& s : shapes) leaves.push_back(random_tensor(s, rng, lo, hi));
    const Tensor probe = build(leaves);
    const Tensor weights = random_tensor(probe.shape(), rng, -1.0, 1.0, false);
    auto loss = [&] { return sum(mul(build(leaves), weights)); };
    const auto r = gradcheck(leaves, loss);
    CHECK_MESSAGE(r.max_error <= tol, "seed " << seed << " error " << r.max_error);
  }
}

}  // namespace

TEST_CASE("matmul examples") {
  const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor b = Tensor::from({2, 2}, {3, 4, 5, 6});
  CHECK(matmul(eye, b).to_vector() == std::vector<double>{3, 4, 5, 6});
  CHECK(matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {0, 0})).to_vector() ==
        std::vector<double>{0});

  Tensor a = Tensor::from({1, 2}, {1, 1}, true);
  const Tensor c = Tensor::from({2, 1}, {2, 3});
  backward(sum(matmul(a, c)));
  CHECK(std::vector<double>(a.grad().begin(), a.grad().end()) == std::vector<double>{2, 3});
}

TEST_CASE("matmul shape mismatch names both shapes") {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
  }
}

TEST_CASE("softmax examples") {
  const auto u = softmax(Tensor::from({3}, {0, 0, 0}), 0).to_vector();
  for (double v : u) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const auto s = softmax(Tensor::from({2}, {1000, 0}), 0).to_vector();
  CHECK(std::abs(s[0] - 1.0) <= 1e-12);
  CHECK(std::abs(s[1]) <= 1e-12);
  CHECK_THROWS_AS(softmax(Tensor::from({2}, {NAN, 0}), 0), std::domain_error);
}

TEST_CASE("softmax slices sum to one and lie in (0,1)") {
  Rng rng(4);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const Tensor x = random_tensor({3, 4, 5}, rng, -5, 5, false);
    const Tensor y = softmax(x, axis);
    const auto& s = y.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < 3; ++i) inner *= s[i];
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        double total = 0;
        for (std::size_t j = 0; j < s[axis]; ++j) {
          const double v = y.data()[o * s[axis] * inner + j * inner + in];
          CHECK(v > 0.0);
          CHECK(v < 1.0);
          total += v;
        }
        CHECK(std::abs(total - 1.0) <= 1e-12);
      }
  }
}

TEST_CASE("softmax gradient matches finite differences") {
  check_op({{4}}, [](auto& l) { return softmax(l[0], 0); }, -1, 1, 1e-6);
  check_op({{3, 5}}, [](auto& l) { return softmax(l[0], 1); });
  check_op({{3, 5}}, [](auto& l) { return softmax(l[0], 0); });
}

TEST_CASE("layer_norm examples") {
  const Tensor ones = Tensor::full({4}, 1.0), zeros = Tensor::zeros({4});
  const auto out = layer_norm(Tensor::from({1, 4}, {5, 5, 5, 5}), ones, zeros).to_vector();
  for (double v : out) CHECK(v == 0.0);

  const Tensor bias = Tensor::from({4}, {1, 2, 3, 4});
  const auto flat = layer_norm(Tensor::from({2, 4}, {1, 9, -3, 4, 0, 2, 2, 7}), zeros, bias).to_vector();
  CHECK(flat == std::vector<double>{1, 2, 3, 4, 1, 2, 3, 4});
}

TEST_CASE("layer_norm gradient matches finite differences") {
  check_op({{1, 8}, {8}, {8}}, [](auto& l) { return layer_norm(l[0], l[1], l[2]); });
  check_op({{3, 6}, {6}, {6}}, [](auto& l) { return layer_norm(l[0], l[1], l[2]); });
}

TEST_CASE("gather_rows examples and gradient") {
  const Tensor x = Tensor::from({3, 1}, {1, 2, 3});
  const std::vector<std::size_t> idx{2, 0};
  CHECK(gather_rows(x, idx).to_vector() == std::vector<double>{3, 1});

  Tensor src = Tensor::from({3, 1}, {1, 2, 3}, true);
  const std::vector<std::size_t> dup{0, 0};
  const Tensor w = Tensor::from({2, 1}, {0.25, 4.0});
  backward(sum(mul(gather_rows(src, dup), w)));
  CHECK(src.grad()[0] == 4.25);
  CHECK(src.grad()[1] == 0.0);

  const std::vector<std::size_t> bad{3};
  CHECK_THROWS_AS(gather_rows(x, bad), IndexError);

  check_op({{4, 3}}, [](auto& l) {
    const std::vector<std::size_t> d{1, 1, 3, 0, 1};
    return gather_rows(l[0], d);
  }, -1, 1, 1e-6);
}

TEST_CASE("gather_rows conserves gradient mass") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({6, 3}, rng);
    std::vector<std::size_t> idx;
    for (int i = 0; i < 8; ++i) idx.push_back(rng.below(6));
    const Tensor w = random_tensor({8, 3}, rng, -1, 1, false);
    backward(sum(mul(gather_rows(x, idx), w)));
    double in_mass = 0, out_mass = 0;
    for (double g : x.grad()) in_mass += g;
    for (double g : w.data()) out_mass += g;
    CHECK(in_mass == doctest::Approx(out_mass).epsilon(1e-12));
  }
}

TEST_CASE("elementwise examples") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  const Tensor x = Tensor::from({3}, {1.5, -2, 0.25});
  CHECK(add(x, Tensor::scalar(0.0)).to_vector() == x.to_vector());
  CHECK(add(Tensor::scalar(0.0), x).to_vector() == x.to_vector());
  CHECK_THROWS_AS(add(x, Tensor::zeros({2})), DimensionError);
  CHECK(relu(x).to_vector() == std::vector<double>{1.5, 0, 0.25});
}

TEST_CASE("elementwise gradients match finite differences") {
  check_op({{3, 4}, {3, 4}}, [](auto& l) { return add(l[0], l[1]); });
  check_op({{3, 4}, {}}, [](auto& l) { return add(l[0], l[1]); });
  check_op({{3, 4}, {3, 4}}, [](auto& l) { return sub(l[0], l[1]); });
  check_op({{3, 4}, {3, 4}}, [](auto& l) { return mul(l[0], l[1]); });
  check_op({{}, {3, 4}}, [](auto& l) { return mul(l[0], l[1]); });
  check_op({{3, 4}, {3, 4}}, [](auto& l) { return div(l[0], add_scalar(abs(l[1]), 0.5)); });
  check_op({{3, 4}, {3, 4}}, [](auto& l) { return minimum(l[0], l[1]); });
  check_op({{3, 4}, {3, 4}}, [](auto& l) { return maximum(l[0], l[1]); });
  check_op({{3, 4}}, [](auto& l) { return sigmoid(l[0]); }, -4, 4);
  check_op({{3, 4}}, [](auto& l) { return relu(l[0]); });
  check_op({{3, 4}}, [](auto& l) { return exp(l[0]); });
  check_op({{3, 4}}, [](auto& l) { return log(l[0]); }, 0.5, 2.0);
  check_op({{3, 4}}, [](auto& l) { return scale(l[0], -2.5); });
  check_op({{3, 4}}, [](auto& l) { return add_scalar(l[0], 3.0); });
  check_op({{3, 4}, {4}}, [](auto& l) { return add_bias(l[0], l[1]); });
  check_op({{2, 3}, {4, 3}}, [](auto& l) { return concat({l[0], l[1]}, 0); });
  check_op({{2, 3}, {2, 5}}, [](auto& l) { return concat({l[0], l[1]}, 1); });
  check_op({{4, 6}}, [](auto& l) { return slice(l[0], 1, 2, 5); });
  check_op({{4, 6}}, [](auto& l) { return slice(l[0], 0, 1, 3); });
  check_op({{4, 6}}, [](auto& l) { return transpose(l[0]); });
  check_op({{4, 6}}, [](auto& l) { return reshape(l[0], {2, 12}); });
  check_op({{4, 6}}, [](auto& l) { return sum(l[0]); });
  check_op({{4, 6}}, [](auto& l) { return mean(l[0]); });
  check_op({{3, 4}, {4, 5}}, [](auto& l) { return matmul(l[0], l[1]); });
  check_op({{3, 4}, {5, 4}}, [](auto& l) { return matmul_nt(l[0], l[1]); });
}

TEST_CASE("conv2d and upsample gradients match finite differences") {
  check_op({{5, 6, 2}, {18, 3}, {3}}, [](auto& l) { return conv2d(l[0], l[1], l[2], 3, 2, 1); });
  check_op({{4, 4, 1}, {9, 2}, {2}}, [](auto& l) { return conv2d(l[0], l[1], l[2], 3, 1, 0); });
  check_op({{6, 3}}, [](auto& l) { return upsample_bilinear(l[0], 2, 3, 2); });
  check_op({{4, 2}}, [](auto& l) { return upsample_bilinear(l[0], 2, 2, 4); });
}

TEST_CASE("upsample of a constant image is constant") {
  const Tensor x = Tensor::full({9, 2}, 0.75);
  const Tensor up = upsample_bilinear(x, 3, 3, 4);
  for (double v : up.data()) CHECK(v == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("backward examples") {
  Tensor x = Tensor::from({1}, {3}, true);
  Tensor y = Tensor::from({1}, {5}, true);
  backward(sum(mul(x, x)));
  CHECK(x.grad()[0] == 6.0);
  CHECK(y.grad()[0] == 0.0);
}

TEST_CASE("backward errors") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(mul(x, x)), GraphError);
  const Tensor loss = sum(mul(x, x));
  backward(loss);
  CHECK_THROWS_AS(backward(loss), GraphError);
  CHECK_THROWS_AS(backward(sum(Tensor::from({2}, {1, 2}))), GraphError);
}

TEST_CASE("leaves without requires_grad never receive a gradient") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  const Tensor c = Tensor::from({2}, {3, 4});
  backward(sum(mul(x, c)));
  CHECK_FALSE(c.has_grad());
  CHECK(x.has_grad());
}

TEST_CASE("ops are deterministic") {
  Rng r1(77), r2(77);
  const Tensor a1 = random_tensor({7, 9}, r1), a2 = random_tensor({7, 9}, r2);
  const Tensor b1 = random_tensor({9, 5}, r1), b2 = random_tensor({9, 5}, r2);
  const auto f = [](const Tensor& a, const Tensor& b) {
    return softmax(matmul(a, b), 1).to_vector();
  };
  CHECK(f(a1, b1) == f(a2, b2));
}

TEST_CASE("checkpoint encoding round-trips and rejects damage") {
  Rng rng(2);
  std::vector<NamedTensor> params{{"a.weight", random_tensor({3, 4}, rng)},
                                  {"a.bias", random_tensor({4}, rng)},
                                  {"scalar", Tensor::scalar(-0.0)}};
  const std::string bytes = encode_parameters(params);
  const auto back = decode_parameters(bytes);
  REQUIRE(back.size() == params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    CHECK(back[i].first == params[i].first);
    CHECK(back[i].second.shape() == params[i].second.shape());
    CHECK(back[i].second.to_vector() == params[i].second.to_vector());
  }

  CHECK_THROWS_AS(decode_parameters(bytes.substr(0, bytes.size() - 3)), ParseError);
  std::string wrong_version = bytes;
  wrong_version[8] = 9;
  CHECK_THROWS_WITH_AS(decode_parameters(wrong_version), doctest::Contains("version"), ParseError);
  std::string wrong_magic = bytes;
  wrong_magic[0] = 'X';
  CHECK_THROWS_AS(decode_parameters(wrong_magic), ParseError);

  const auto path = std::filesystem::temp_directory_path() / "dimask_ckpt_test.bin";
  save_parameters(path.string(), params);
  CHECK(load_parameters(path.string()).size() == 3);
  std::filesystem::remove(path);
}
