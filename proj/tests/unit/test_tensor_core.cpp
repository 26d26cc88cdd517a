#include <doctest.h>

#include <filesystem>

#include "cccnet/adam.hpp"
#include "cccnet/error.hpp"
#include "cccnet/ops.hpp"
#include "cccnet/params.hpp"
#include "cccnet/phase2.hpp"
#include "cccnet/training.hpp"
#include "gradcheck.hpp"

using namespace cccnet;
using namespace cccnet::testing;
namespace fs = std::filesystem;

namespace {

std::vector<Scalar> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("tensor construction and shapes") {
  const Tensor t = Tensor::full({2, 3}, 1.5f);
  CHECK(t.numel() == 6);
  CHECK(t.dim(1) == 3);
  CHECK(t.at(5) == 1.5f);
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor::zeros({0, 2}), ShapeError);
  CHECK_THROWS_AS(t.item(), ShapeError);
  CHECK(Tensor::scalar(4).item() == 4);
}

TEST_CASE("handles alias, clone and detach copy") {
  Tensor a = Tensor::full({3}, 1, true);
  Tensor alias = a;
  alias.mutable_data()[0] = 7;
  CHECK(a.at(0) == 7);
  Tensor c = a.clone();
  c.mutable_data()[1] = 9;
  CHECK(a.at(1) == 1);
  CHECK(c.requires_grad());
  Tensor d = a.detach();
  d.mutable_data()[2] = 5;
  CHECK(a.at(2) == 1);
  CHECK_FALSE(d.requires_grad());
}

TEST_CASE("conv2d oracles") {
  SUBCASE("1x1 kernel of 2 doubles a map of ones") {
    const Tensor x = Tensor::full({1, 3, 3}, 1);
    const Tensor w = Tensor::full({1, 1, 1, 1}, 2);
    const Tensor y = conv2d(x, w, Tensor::zeros({1}), 0);
    CHECK(y.shape() == Shape{1, 3, 3});
    for (Scalar v : y.data()) CHECK(v == 2);
  }
  SUBCASE("valid convolution output shape") {
    std::mt19937_64 rng(1);
    const Tensor x = random_tensor({3, 32, 32}, rng, 1.0, false);
    const Tensor w = random_tensor({20, 3, 7, 7}, rng, 1.0, false);
    CHECK(conv2d(x, w, Tensor::zeros({20}), 0).shape() == Shape{20, 26, 26});
  }
  SUBCASE("identity kernel is the identity map") {
    std::mt19937_64 rng(2);
    const Tensor x = random_tensor({1, 9, 7}, rng, 1.0, false);
    const Tensor y = conv2d(x, Tensor::full({1, 1, 1, 1}, 1), Tensor::zeros({1}), 0);
    CHECK(values(y) == values(x));
  }
  SUBCASE("padding keeps the spatial size") {
    std::mt19937_64 rng(3);
    const Tensor x = random_tensor({2, 6, 6}, rng, 1.0, false);
    const Tensor w = random_tensor({3, 2, 5, 5}, rng, 1.0, false);
    CHECK(conv2d(x, w, Tensor::zeros({3}), 2).shape() == Shape{3, 6, 6});
  }
  SUBCASE("channel mismatch and even kernels are rejected") {
    const Tensor x = Tensor::zeros({2, 4, 4});
    CHECK_THROWS_AS(conv2d(x, Tensor::zeros({1, 3, 3, 3}), Tensor::zeros({1}), 1), ShapeError);
    CHECK_THROWS_AS(conv2d(x, Tensor::zeros({1, 2, 2, 2}), Tensor::zeros({1}), 0), ShapeError);
  }
}

TEST_CASE("maxpool2 oracles") {
  const Tensor x = Tensor::from_data({1, 2, 2}, {1, 2, 3, 4});
  const Tensor y = maxpool2(x);
  CHECK(y.shape() == Shape{1, 1, 1});
  CHECK(y.item() == 4);

  Tensor c = Tensor::full({1, 2, 2}, 3, true);
  backward(sum_all(maxpool2(c)));
  CHECK(values(Tensor::from_data({4}, {c.grad()[0], c.grad()[1], c.grad()[2], c.grad()[3]})) ==
        std::vector<Scalar>{1, 0, 0, 0});
}

TEST_CASE("dense oracles") {
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({4}, rng, 1.0, false);
  std::vector<Scalar> eye(16, 0);
  for (int i = 0; i < 4; ++i) eye[i * 5] = 1;
  CHECK(values(dense(x, Tensor::from_data({4, 4}, eye), Tensor::zeros({4}))) == values(x));
  const Tensor b = Tensor::from_data({2}, {0.25f, -3});
  const Tensor y = dense(x, Tensor::zeros({2, 4}), b);
  CHECK(values(y) == values(b));
  const Tensor batch = random_tensor({3, 4}, rng, 1.0, false);
  CHECK(dense(batch, Tensor::zeros({2, 4}), b).shape() == Shape{3, 2});
}

TEST_CASE("elementwise and structural ops") {
  CHECK(sigmoid(Tensor::scalar(0)).item() == 0.5f);
  CHECK(leaky_relu(Tensor::scalar(-2), 0.01f).item() == doctest::Approx(-0.02));
  CHECK(relu(Tensor::scalar(-2)).item() == 0);

  const Tensor a = Tensor::full({1, 4, 4}, 1);
  const Tensor b = Tensor::full({2, 4, 4}, 2);
  const Tensor cat = concat_channels({a, b});
  CHECK(cat.shape() == Shape{3, 4, 4});
  CHECK(cat.at(0) == 1);
  CHECK(cat.at(16) == 2);
  CHECK(channel(cat, 2).at(3) == 2);
  CHECK_THROWS_AS(concat_channels({a, Tensor::zeros({1, 3, 4})}), ShapeError);

  const Tensor pooled = avgpool_down(Tensor::full({1, 8, 8}, 0.3f), 4);
  CHECK(pooled.shape() == Shape{1, 2, 2});
  for (Scalar v : pooled.data()) CHECK(v == doctest::Approx(0.3));

  CHECK_THROWS_AS(add(a, b), ShapeError);
}

TEST_CASE("backward oracles") {
  SUBCASE("grad of sum(w * x) is x") {
    std::mt19937_64 rng(5);
    const Tensor x = random_tensor({2, 3}, rng, 1.0, false);
    Tensor w = random_tensor({2, 3}, rng, 1.0, true);
    backward(sum_all(mul(w, x)));
    for (std::size_t i = 0; i < 6; ++i) CHECK(w.grad()[i] == x.at(i));
  }
  SUBCASE("sum of squared differences at a = b has zero gradient") {
    Tensor a = Tensor::full({4}, 2, true);
    Tensor b = Tensor::full({4}, 2, true);
    backward(sum_all(square(sub(a, b))));
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(a.grad()[i] == 0);
      CHECK(b.grad()[i] == 0);
    }
  }
  SUBCASE("the graph is consumed by backward") {
    Tensor w = Tensor::full({2}, 1, true);
    const Tensor loss = sum_all(square(w));
    backward(loss);
    CHECK_THROWS_AS(backward(loss), InvalidArgument);
  }
  SUBCASE("gradients accumulate across backward calls") {
    Tensor w = Tensor::full({2}, 1, true);
    backward(sum_all(w));
    backward(sum_all(w));
    CHECK(w.grad()[0] == 2);
  }
  SUBCASE("no gradient path is an error") {
    CHECK_THROWS_AS(backward(sum_all(Tensor::full({2}, 1))), InvalidArgument);
  }
}

TEST_CASE("backward is bit-identical across runs") {
  auto run = [] {
    const Phase2Model m = Phase2Model::create(Phase2Config{}, 21);
    std::mt19937_64 rng(8);
    const Tensor image = uniform_tensor({1, 32, 32}, rng, 0, 1, false);
    const Tensor det = uniform_tensor({1, 8, 8}, rng, 0, 0.2, false);
    const Phase2Output o = phase2_forward(image, det, m);
    backward(sum_all(square(o.crowd)));
    std::vector<Scalar> g;
    for (const auto& e : m.params) g.insert(g.end(), e.tensor.grad().begin(), e.tensor.grad().end());
    return g;
  };
  CHECK(run() == run());
}

TEST_CASE("phase 2 network gradient in standard precision") {
  std::mt19937_64 rng(9);
  Phase2Model m = Phase2Model::create(Phase2Config{}, 9);
  m.params.at("regression.conv5.bias").mutable_data()[0] = 0.5f;
  const Tensor image = uniform_tensor({1, 16, 16}, rng, 0, 1, false);
  const Tensor det = uniform_tensor({1, 4, 4}, rng, 0, 0.5, false);
  const Tensor gt = uniform_tensor({1, 4, 4}, rng, 0, 0.5, false);
  LossConfig cfg;
  cfg.sigma_crowd = 2;
  cfg.sigma_regression_aux = 0.5;
  std::vector<Tensor> inputs;
  for (const auto& e : m.params) inputs.push_back(e.tensor);
  const double err = vector_gradient_error(
      [&] {
        const Phase2Output o = phase2_forward(image, det, m);
        return phase2_loss(o.crowd, o.regression, gt, cfg, 1);
      },
      inputs, rng, 16, 3e-3);
  CHECK(err <= 1e-2);
}

TEST_CASE("adam oracles") {
  SUBCASE("zero gradients leave parameters unchanged") {
    ModelParams p;
    p.add("w", Tensor::from_data({3}, {1, -2, 3}, true));
    AdamState s(p, {});
    p.zero_grad();
    adam_step(p, s);
    CHECK(values(p.at("w")) == std::vector<Scalar>{1, -2, 3});
  }
  SUBCASE("first step moves each coordinate by about the learning rate") {
    ModelParams p;
    p.add("w", Tensor::from_data({3}, {0, 0, 0}, true));
    AdamConfig c;
    c.learning_rate = 0.01;
    AdamState s(p, c);
    p.at("w").zero_grad();
    const std::vector<Scalar> g{0.5f, -2.0f, 1e-3f};
    std::copy(g.begin(), g.end(), p.at("w").mutable_grad().begin());
    adam_step(p, s);
    CHECK(p.at("w").at(0) == doctest::Approx(-0.01).epsilon(1e-3));
    CHECK(p.at("w").at(1) == doctest::Approx(0.01).epsilon(1e-3));
    CHECK(std::abs(p.at("w").at(2) + 0.01) < 1e-3 * 0.01 + 1e-5);
  }
  SUBCASE("minimizes (w - 3)^2") {
    ModelParams p;
    p.add("w", Tensor::from_data({1}, {0}, true));
    AdamConfig c;
    c.learning_rate = 0.1;
    AdamState s(p, c);
    for (int i = 0; i < 200; ++i) {
      backward(sum_all(square(sub(p.at("w"), Tensor::from_data({1}, {3})))));
      adam_step(p, s);
    }
    CHECK(std::abs(p.at("w").at(0) - 3) < 0.1);
  }
  SUBCASE("missing gradient names the parameter") {
    ModelParams p;
    p.add("lonely", Tensor::zeros({2}, true));
    AdamState s(p, {});
    CHECK_THROWS_WITH_AS(adam_step(p, s), doctest::Contains("lonely"), InvalidArgument);
  }
}

TEST_CASE("model params views and checkpoints") {
  std::mt19937_64 rng(10);
  ModelParams p;
  add_conv(p, "a.conv", 2, 3, 3, rng);
  add_dense(p, "b.fc", 4, 2, rng);
  CHECK(p.size() == 4);
  CHECK(p.scalar_count() == 3 * 2 * 9 + 3 + 2 * 4 + 2);
  CHECK_THROWS_AS(p.add("a.conv.bias", Tensor::zeros({1})), InvalidArgument);

  ModelParams sub = p.subset("a.");
  CHECK(sub.size() == 2);
  sub.at("a.conv.bias").mutable_data()[0] = 42;
  CHECK(p.at("a.conv.bias").at(0) == 42);
  ModelParams deep = p.clone();
  deep.at("a.conv.bias").mutable_data()[0] = 1;
  CHECK(p.at("a.conv.bias").at(0) == 42);

  const auto bytes = encode_checkpoint(p);
  const ModelParams back = decode_checkpoint(bytes);
  REQUIRE(back.size() == p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(back.entry(i).name == p.entry(i).name);
    CHECK(values(back.entry(i).tensor) == values(p.entry(i).tensor));
  }
  CHECK(encode_checkpoint(back) == bytes);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK_THROWS_AS(decode_checkpoint(truncated), FormatError);

  const fs::path dir = fs::temp_directory_path() / "cccnet_tensor_core_test";
  fs::create_directories(dir);
  save_checkpoint(dir / "p.cccp", p);
  ModelParams target = p.clone();
  target.at("b.fc.bias").mutable_data()[0] = -1;
  load_checkpoint_into(dir / "p.cccp", target);
  CHECK(target.at("b.fc.bias").at(0) == p.at("b.fc.bias").at(0));
  CHECK_THROWS_AS(load_checkpoint(dir / "absent.cccp"), MissingArtifactError);
  fs::remove_all(dir);
}
