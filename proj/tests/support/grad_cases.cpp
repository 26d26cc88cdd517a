#include "grad_cases.hpp"

#include <random>

#include "cccnet/ops.hpp"
#include "cccnet/phase1.hpp"
#include "cccnet/phase2.hpp"
#include "cccnet/phase3.hpp"
#include "cccnet/training.hpp"

namespace cccnet::testing {
namespace {

// Reduces any output to a scalar through fixed random weights, so every
// output element carries a distinct upstream gradient.
struct Projector {
  Tensor weights;
  Tensor operator()(const Tensor& out) const { return sum_all(mul(out, weights)); }
};

Projector projector(const Shape& shape, std::mt19937_64& rng) {
  return {random_tensor(shape, rng, 1.0, false)};
}

std::vector<Tensor> all_params(const ModelParams& p) {
  std::vector<Tensor> out;
  for (const auto& e : p) out.push_back(e.tensor);
  return out;
}

// Small non-degenerate loss weights; the formulas are identical for the
// production constants.
LossConfig small_loss() {
  LossConfig c;
  c.sigma_crowd = 2.0;
  c.sigma_regression_aux = 0.5;
  c.sigma_stand = 1.5;
  c.sigma_sit = 1.8;
  return c;
}

template <class Op>
GradCase unary(std::string name, Shape shape, Op op) {
  return {std::move(name), [shape, op](std::uint64_t seed) {
            std::mt19937_64 rng(seed);
            Tensor x = random_tensor(shape, rng);
            const Projector p = projector(op(x.detach()).shape(), rng);
            return check_gradients([&] { return p(op(x)); }, {x}, rng);
          }};
}

template <class Op>
GradCase binary(std::string name, Shape shape, Op op) {
  return {std::move(name), [shape, op](std::uint64_t seed) {
            std::mt19937_64 rng(seed);
            Tensor a = random_tensor(shape, rng);
            Tensor b = random_tensor(shape, rng);
            const Projector p = projector(shape, rng);
            return check_gradients([&] { return p(op(a, b)); }, {a, b}, rng);
          }};
}

Phase2Model small_phase2(std::uint64_t seed) {
  Phase2Model m = Phase2Model::create(Phase2Config{}, seed);
  // Lift the output bias so the final relu is active on most cells.
  m.params.at("regression.conv5.bias").mutable_data()[0] = Scalar{0.5};
  return m;
}

}  // namespace

std::vector<GradCase> gradient_cases() {
  std::vector<GradCase> cases;

  cases.push_back({"conv2d_pad1", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor x = random_tensor({2, 7, 7}, rng);
                     Tensor w = random_tensor({3, 2, 3, 3}, rng);
                     Tensor b = random_tensor({3}, rng);
                     const Projector p = projector({3, 7, 7}, rng);
                     return check_gradients([&] { return p(conv2d(x, w, b, 1)); }, {x, w, b},
                                            rng);
                   }});
  cases.push_back({"conv2d_pad0", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor x = random_tensor({2, 9, 9}, rng);
                     Tensor w = random_tensor({2, 2, 5, 5}, rng);
                     Tensor b = random_tensor({2}, rng);
                     const Projector p = projector({2, 5, 5}, rng);
                     return check_gradients([&] { return p(conv2d(x, w, b, 0)); }, {x, w, b},
                                            rng);
                   }});
  cases.push_back(unary("maxpool2", {3, 8, 8}, [](const Tensor& x) { return maxpool2(x); }));
  cases.push_back(
      unary("maxpool2_odd", {2, 9, 7}, [](const Tensor& x) { return maxpool2(x); }));
  cases.push_back({"dense_vector", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor x = random_tensor({5}, rng);
                     Tensor w = random_tensor({4, 5}, rng);
                     Tensor b = random_tensor({4}, rng);
                     const Projector p = projector({4}, rng);
                     return check_gradients([&] { return p(dense(x, w, b)); }, {x, w, b}, rng);
                   }});
  cases.push_back({"dense_batch", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor x = random_tensor({3, 6}, rng);
                     Tensor w = random_tensor({4, 6}, rng);
                     Tensor b = random_tensor({4}, rng);
                     const Projector p = projector({3, 4}, rng);
                     return check_gradients([&] { return p(dense(x, w, b)); }, {x, w, b}, rng);
                   }});
  cases.push_back(unary("relu", {2, 6, 6}, [](const Tensor& x) { return relu(x); }));
  cases.push_back(
      unary("leaky_relu", {2, 6, 6}, [](const Tensor& x) { return leaky_relu(x, 0.1); }));
  cases.push_back(unary("sigmoid", {2, 6, 6}, [](const Tensor& x) { return sigmoid(x); }));
  cases.push_back(binary("add", {2, 5, 5}, [](const Tensor& a, const Tensor& b) {
    return add(a, b);
  }));
  cases.push_back(binary("sub", {2, 5, 5}, [](const Tensor& a, const Tensor& b) {
    return sub(a, b);
  }));
  cases.push_back(binary("mul", {2, 5, 5}, [](const Tensor& a, const Tensor& b) {
    return mul(a, b);
  }));
  cases.push_back(unary("scale", {2, 5, 5}, [](const Tensor& x) { return scale(x, -1.7); }));
  cases.push_back(unary("square", {2, 5, 5}, [](const Tensor& x) { return square(x); }));
  cases.push_back(unary("sum_all", {3, 4, 4}, [](const Tensor& x) { return sum_all(x); }));
  cases.push_back({"concat_channels", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor a = random_tensor({1, 4, 4}, rng);
                     Tensor b = random_tensor({2, 4, 4}, rng);
                     const Projector p = projector({3, 4, 4}, rng);
                     return check_gradients([&] { return p(concat_channels({a, b})); }, {a, b},
                                            rng);
                   }});
  cases.push_back(unary("channel", {3, 5, 5}, [](const Tensor& x) { return channel(x, 1); }));
  cases.push_back(
      unary("avgpool_down", {2, 8, 8}, [](const Tensor& x) { return avgpool_down(x, 4); }));
  cases.push_back(unary("avgpool_down_crop", {1, 10, 14},
                        [](const Tensor& x) { return avgpool_down(x, 4); }));
  cases.push_back({"binary_cross_entropy", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor probs = uniform_tensor({6, 1}, rng, 0.05, 0.95);
                     std::vector<Scalar> targets(6);
                     std::bernoulli_distribution coin(0.5);
                     for (auto& t : targets) t = coin(rng) ? 1 : 0;
                     return check_gradients(
                         [&] { return binary_cross_entropy(probs, targets); }, {probs}, rng);
                   }});
  cases.push_back({"weighted_mse", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor pred = random_tensor({1, 8, 8}, rng);
                     Tensor gt = random_tensor({1, 8, 8}, rng);
                     return check_gradients([&] { return weighted_mse(pred, gt, 2.5, 3); },
                                            {pred, gt}, rng);
                   }});
  cases.push_back({"weighted_mse_batch", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     std::vector<Tensor> preds, gts;
                     for (int i = 0; i < 3; ++i) {
                       preds.push_back(random_tensor({1, 4, 4}, rng));
                       gts.push_back(random_tensor({1, 4, 4}, rng));
                     }
                     std::vector<Tensor> inputs = preds;
                     inputs.insert(inputs.end(), gts.begin(), gts.end());
                     return check_gradients([&] { return weighted_mse(preds, gts, 0.7); },
                                            inputs, rng);
                   }});
  cases.push_back({"phase2_loss", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor fin = random_tensor({1, 6, 6}, rng);
                     Tensor reg = random_tensor({1, 6, 6}, rng);
                     Tensor gt = random_tensor({1, 6, 6}, rng);
                     const LossConfig cfg = small_loss();
                     return check_gradients([&] { return phase2_loss(fin, reg, gt, cfg, 2); },
                                            {fin, reg, gt}, rng);
                   }});
  cases.push_back({"phase3_joint_loss", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor fs = random_tensor({1, 6, 6}, rng);
                     Tensor ft = random_tensor({1, 6, 6}, rng);
                     Tensor gs = random_tensor({1, 6, 6}, rng);
                     Tensor gt = random_tensor({1, 6, 6}, rng);
                     const LossConfig cfg = small_loss();
                     return check_gradients(
                         [&] { return phase3_joint_loss(fs, ft, gs, gt, cfg, 2); },
                         {fs, ft, gs, gt}, rng);
                   }});

  cases.push_back({"phase1_classifier", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     ClassifierModel m = ClassifierModel::create(seed);
                     Tensor features = random_tensor({4, 51}, rng, 0.5);
                     std::vector<Scalar> targets{1, 0, 0, 1};
                     std::vector<Tensor> inputs = all_params(m.params);
                     inputs.push_back(features);
                     return check_gradients(
                         [&] {
                           return binary_cross_entropy(classifier_forward(m, features),
                                                       targets);
                         },
                         inputs, rng, 12);
                   }});
  cases.push_back({"phase2_regression", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     const Phase2Model m = small_phase2(seed);
                     Tensor image = uniform_tensor({1, 16, 16}, rng, 0.0, 1.0);
                     const Projector p = projector({1, 4, 4}, rng);
                     std::vector<Tensor> inputs = all_params(m.regression_params());
                     inputs.push_back(image);
                     return check_gradients([&] { return p(regression_forward(image, m)); },
                                            inputs, rng, 8);
                   }});
  cases.push_back({"phase2_full", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     const Phase2Model m = small_phase2(seed);
                     Tensor image = uniform_tensor({1, 16, 16}, rng, 0.0, 1.0);
                     Tensor detection = uniform_tensor({1, 4, 4}, rng, 0.0, 0.5);
                     const Tensor gt = uniform_tensor({1, 4, 4}, rng, 0.0, 0.5, false);
                     const LossConfig cfg = small_loss();
                     std::vector<Tensor> inputs = all_params(m.params);
                     inputs.push_back(image);
                     inputs.push_back(detection);
                     return check_gradients(
                         [&] {
                           const Phase2Output o = phase2_forward(image, detection, m);
                           return phase2_loss(o.crowd, o.regression, gt, cfg, 1);
                         },
                         inputs, rng, 8);
                   }});
  cases.push_back({"phase3_branch", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     const Phase3Model m = Phase3Model::create(Phase3Config{}, seed);
                     Tensor cat = uniform_tensor({1, 16, 16}, rng, 0.0, 0.5);
                     Tensor crowd = uniform_tensor({1, 16, 16}, rng, 0.0, 0.5);
                     Tensor img = uniform_tensor({1, 16, 16}, rng, 0.0, 1.0);
                     const Projector p = projector({1, 16, 16}, rng);
                     std::vector<Tensor> inputs = all_params(m.pretrain_params(Category::Sitting));
                     inputs.insert(inputs.end(), {cat, crowd, img});
                     return check_gradients(
                         [&] {
                           return p(branch_primary(cat, crowd, img, m, Category::Sitting).primary);
                         },
                         inputs, rng, 8);
                   }});
  cases.push_back({"phase3_cross", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     const Phase3Model m = Phase3Model::create(Phase3Config{}, seed);
                     Tensor ps = uniform_tensor({1, 16, 16}, rng, 0.0, 0.5);
                     Tensor pt = uniform_tensor({1, 16, 16}, rng, 0.0, 0.5);
                     Tensor crowd = uniform_tensor({1, 16, 16}, rng, 0.5, 1.0);
                     const Projector p1 = projector({1, 16, 16}, rng);
                     const Projector p2 = projector({1, 16, 16}, rng);
                     std::vector<Tensor> inputs = all_params(m.final_params());
                     inputs.insert(inputs.end(), {ps, pt, crowd});
                     return check_gradients(
                         [&] {
                           const CrossOutput o = cross_refine(ps, pt, crowd, m);
                           return add(p1(o.final_sit), p2(o.final_stand));
                         },
                         inputs, rng, 12);
                   }});
  cases.push_back({"phase3_full", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     const Phase3Model m = Phase3Model::create(Phase3Config{}, seed);
                     Phase3Inputs in;
                     in.sit_map = uniform_tensor({1, 16, 16}, rng, 0.0, 0.5);
                     in.stand_map = uniform_tensor({1, 16, 16}, rng, 0.0, 0.5);
                     in.crowd_map = uniform_tensor({1, 16, 16}, rng, 0.0, 1.0);
                     in.image_small = uniform_tensor({1, 16, 16}, rng, 0.0, 1.0);
                     const Tensor gs = uniform_tensor({1, 16, 16}, rng, 0.0, 0.5, false);
                     const Tensor gt = uniform_tensor({1, 16, 16}, rng, 0.0, 0.5, false);
                     const LossConfig cfg = small_loss();
                     std::vector<Tensor> inputs = all_params(m.params);
                     inputs.insert(inputs.end(),
                                   {in.sit_map, in.stand_map, in.crowd_map, in.image_small});
                     return check_gradients(
                         [&] {
                           const Phase3Output o = phase3_forward(in, m);
                           return phase3_joint_loss(o.cross.final_sit, o.cross.final_stand, gs,
                                                    gt, cfg, 1);
                         },
                         inputs, rng, 6);
                   }});
  return cases;
}

}  // namespace cccnet::testing
