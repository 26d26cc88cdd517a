#include "cccnet/adam.hpp"

#include <cmath>

#include "cccnet/error.hpp"

namespace cccnet {

AdamState::AdamState(const ModelParams& params, AdamConfig cfg) : config(cfg) {
  for (const auto& e : params) {
    first_moment.emplace_back(e.tensor.numel(), Scalar{0});
    second_moment.emplace_back(e.tensor.numel(), Scalar{0});
  }
}

void AdamState::export_to(const ModelParams& params, ModelParams& out) const {
  std::size_t i = 0;
  for (const auto& e : params) {
    out.add("adam.m." + e.name, Tensor::from_data(e.tensor.shape(), first_moment[i]));
    out.add("adam.v." + e.name, Tensor::from_data(e.tensor.shape(), second_moment[i]));
    ++i;
  }
  out.add("adam.step", Tensor::scalar(static_cast<Scalar>(step)));
}

void AdamState::import_from(const ModelParams& params, const ModelParams& in) {
  first_moment.clear();
  second_moment.clear();
  for (const auto& e : params) {
    const auto m = in.at("adam.m." + e.name).data();
    const auto v = in.at("adam.v." + e.name).data();
    if (m.size() != e.tensor.numel() || v.size() != e.tensor.numel()) {
      throw ShapeError("optimizer state does not match parameter " + e.name);
    }
    first_moment.emplace_back(m.begin(), m.end());
    second_moment.emplace_back(v.begin(), v.end());
  }
  step = static_cast<std::uint64_t>(in.at("adam.step").item());
}

void adam_step(ModelParams& params, AdamState& state) {
  if (state.first_moment.size() != params.size()) {
    throw InvalidArgument("optimizer state tracks " +
                          std::to_string(state.first_moment.size()) +
                          " parameters, model has " + std::to_string(params.size()));
  }
  for (const auto& e : params) {
    if (!e.tensor.has_grad()) {
      throw InvalidArgument("missing gradient for parameter " + e.name);
    }
  }
  state.step += 1;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  std::size_t i = 0;
  for (auto& e : params) {
    auto x = e.tensor.mutable_data();
    auto g = e.tensor.mutable_grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double gj = g[j];
      m[j] = static_cast<Scalar>(c.beta1 * m[j] + (1.0 - c.beta1) * gj);
      v[j] = static_cast<Scalar>(c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj);
      const double mhat = m[j] / correction1;
      const double vhat = v[j] / correction2;
      x[j] = static_cast<Scalar>(x[j] - c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon));
      g[j] = Scalar{0};
    }
    ++i;
  }
}

}  // namespace cccnet
