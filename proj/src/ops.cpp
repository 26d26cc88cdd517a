#include "cccnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Core>

#include "cccnet/error.hpp"

namespace cccnet {

namespace {

using NodePtr = std::shared_ptr<Tensor::Node>;

using MatMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

void im2col(const Scalar* in, std::size_t cin, std::size_t h, std::size_t w, std::size_t k,
            std::size_t pad, std::size_t ho, std::size_t wo, Scalar* col) {
  const long lpad = static_cast<long>(pad);
  for (std::size_t ci = 0; ci < cin; ++ci) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        Scalar* dst = col + ((ci * k + ky) * k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy + ky) - lpad;
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          const Scalar* src = in + (ci * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox + kx) - lpad;
            if (ix >= 0 && ix < static_cast<long>(w)) dst[oy * wo + ox] = src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const Scalar* col, std::size_t cin, std::size_t h, std::size_t w,
                std::size_t k, std::size_t pad, std::size_t ho, std::size_t wo, Scalar* grad) {
  const long lpad = static_cast<long>(pad);
  for (std::size_t ci = 0; ci < cin; ++ci) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const Scalar* src = col + ((ci * k + ky) * k + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy + ky) - lpad;
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          Scalar* dst = grad + (ci * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox + kx) - lpad;
            if (ix >= 0 && ix < static_cast<long>(w)) dst[ix] += src[oy * wo + ox];
          }
        }
      }
    }
  }
}

// Builds the output node; attaches parents and the backward closure only if
// some input participates in differentiation.
Tensor make_result(Shape shape, std::vector<Scalar> data,
                   std::vector<NodePtr> parents,
                   std::function<void(Tensor::Node&)> backward_fn) {
  auto node = std::make_shared<Tensor::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool grad = false;
  for (const auto& p : parents) grad = grad || p->requires_grad;
  if (grad) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op,
                  const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " +
                     std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// dfdx(in, out) is the local derivative.
template <typename F, typename D>
Tensor elementwise_unary(const Tensor& t, F fwd, D dfdx) {
  const auto in = t.data();
  std::vector<Scalar> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  NodePtr src = t.node();
  return make_result(t.shape(), std::move(out), {src},
                     [src, dfdx](Tensor::Node& self) {
                       auto g = src->ensure_grad();
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         g[i] += self.grad[i] * dfdx(src->data[i], self.data[i]);
                       }
                     });
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              std::size_t padding) {
  require_rank(input, 3, "conv2d", "input");
  require_rank(weight, 4, "conv2d", "weight");
  require_rank(bias, 1, "conv2d", "bias");
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin) {
    throw ShapeError("conv2d: weight input-channel dimension " +
                     std::to_string(weight.dim(1)) +
                     " does not match input channels " + std::to_string(cin));
  }
  if (weight.dim(3) != k) {
    throw ShapeError("conv2d: kernel must be square, got " +
                     shape_str(weight.shape()));
  }
  if (k % 2 == 0) {
    throw ShapeError("conv2d: kernel size must be odd, got " + std::to_string(k));
  }
  if (bias.dim(0) != cout) {
    throw ShapeError("conv2d: bias length " + std::to_string(bias.dim(0)) +
                     " does not match output channels " + std::to_string(cout));
  }
  if (h + 2 * padding < k || w + 2 * padding < k) {
    throw ShapeError("conv2d: spatial size " + shape_str(input.shape()) +
                     " too small for kernel " + std::to_string(k) +
                     " with padding " + std::to_string(padding));
  }
  const std::size_t ho = h + 2 * padding - k + 1;
  const std::size_t wo = w + 2 * padding - k + 1;
  const std::size_t rows = cin * k * k, cols = ho * wo;

  // Patch matrix: row (ci, ky, kx), column (oy, ox).
  auto col = std::make_shared<std::vector<Scalar>>(rows * cols, Scalar{0});
  im2col(input.data().data(), cin, h, w, k, padding, ho, wo, col->data());

  std::vector<Scalar> out(cout * cols);
  {
    MatMap o(out.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(cols));
    ConstMatMap wm(weight.data().data(), static_cast<Eigen::Index>(cout),
                   static_cast<Eigen::Index>(rows));
    ConstMatMap cm(col->data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    o.noalias() = wm * cm;
    const Scalar* bs = bias.data().data();
    for (std::size_t co = 0; co < cout; ++co) o.row(static_cast<Eigen::Index>(co)).array() += bs[co];
  }

  NodePtr in_n = input.node(), w_n = weight.node(), b_n = bias.node();
  return make_result(
      {cout, ho, wo}, std::move(out), {in_n, w_n, b_n},
      [=](Tensor::Node& self) {
        const auto ci_ = static_cast<Eigen::Index>(cout);
        const auto ri_ = static_cast<Eigen::Index>(rows);
        const auto pi_ = static_cast<Eigen::Index>(cols);
        ConstMatMap g(self.grad.data(), ci_, pi_);
        if (b_n->requires_grad) {
          auto gb = b_n->ensure_grad();
          for (std::size_t co = 0; co < cout; ++co) {
            double acc = 0.0;
            const Scalar* gp = self.grad.data() + co * cols;
            for (std::size_t i = 0; i < cols; ++i) acc += gp[i];
            gb[co] += static_cast<Scalar>(acc);
          }
        }
        if (w_n->requires_grad) {
          MatMap gw(w_n->ensure_grad().data(), ci_, ri_);
          ConstMatMap cm(col->data(), ri_, pi_);
          gw.noalias() += g * cm.transpose();
        }
        if (in_n->requires_grad) {
          ConstMatMap wm(w_n->data.data(), ci_, ri_);
          std::vector<Scalar> gcol(rows * cols);
          MatMap gc(gcol.data(), ri_, pi_);
          gc.noalias() = wm.transpose() * g;
          col2im_add(gcol.data(), cin, h, w, k, padding, ho, wo, in_n->ensure_grad().data());
        }
      });
}

Tensor maxpool2(const Tensor& input) {
  require_rank(input, 3, "maxpool2", "input");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (h < 2 || w < 2) {
    throw ShapeError("maxpool2: spatial size must be at least 2x2, got " +
                     shape_str(input.shape()));
  }
  const std::size_t ho = h / 2, wo = w / 2;
  const auto in = input.data();
  std::vector<Scalar> out(c * ho * wo);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = ch * h * w + (2 * oy) * w + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = ch * h * w + (2 * oy + dy) * w + 2 * ox + dx;
            if (in[idx] > in[best]) best = idx;
          }
        }
        const std::size_t o = (ch * ho + oy) * wo + ox;
        out[o] = in[best];
        argmax[o] = best;
      }
    }
  }
  NodePtr src = input.node();
  return make_result({c, ho, wo}, std::move(out), {src},
                     [src, argmax = std::move(argmax)](Tensor::Node& self) {
                       auto g = src->ensure_grad();
                       for (std::size_t o = 0; o < argmax.size(); ++o) {
                         g[argmax[o]] += self.grad[o];
                       }
                     });
}

Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(weight, 2, "dense", "weight");
  require_rank(bias, 1, "dense", "bias");
  if (input.rank() != 1 && input.rank() != 2) {
    throw ShapeError("dense: input must be a vector or a row batch, got " +
                     shape_str(input.shape()));
  }
  const bool batched = input.rank() == 2;
  const std::size_t rows = batched ? input.dim(0) : 1;
  const std::size_t n = batched ? input.dim(1) : input.dim(0);
  const std::size_t m = weight.dim(0);
  if (weight.dim(1) != n) {
    throw ShapeError("dense: weight has " + std::to_string(weight.dim(1)) +
                     " columns but input has " + std::to_string(n) + " features");
  }
  if (bias.dim(0) != m) {
    throw ShapeError("dense: bias length " + std::to_string(bias.dim(0)) +
                     " does not match " + std::to_string(m) + " outputs");
  }
  const Scalar* x = input.data().data();
  const Scalar* wt = weight.data().data();
  const Scalar* b = bias.data().data();
  std::vector<Scalar> out(rows * m);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < m; ++i) {
      Scalar acc = b[i];
      for (std::size_t j = 0; j < n; ++j) acc += wt[i * n + j] * x[r * n + j];
      out[r * m + i] = acc;
    }
  }
  Shape shape = batched ? Shape{rows, m} : Shape{m};
  NodePtr x_n = input.node(), w_n = weight.node(), b_n = bias.node();
  return make_result(std::move(shape), std::move(out), {x_n, w_n, b_n},
                     [=](Tensor::Node& self) {
                       const Scalar* g = self.grad.data();
                       if (b_n->requires_grad) {
                         auto gb = b_n->ensure_grad();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t i = 0; i < m; ++i) gb[i] += g[r * m + i];
                       }
                       if (w_n->requires_grad) {
                         auto gw = w_n->ensure_grad();
                         const Scalar* xd = x_n->data.data();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < n; ++j)
                               gw[i * n + j] += g[r * m + i] * xd[r * n + j];
                       }
                       if (x_n->requires_grad) {
                         auto gx = x_n->ensure_grad();
                         const Scalar* wd = w_n->data.data();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < n; ++j)
                               gx[r * n + j] += g[r * m + i] * wd[i * n + j];
                       }
                     });
}

Tensor relu(const Tensor& t) {
  return elementwise_unary(
      t, [](Scalar x) { return x > 0 ? x : Scalar{0}; },
      [](Scalar x, Scalar) { return x > 0 ? Scalar{1} : Scalar{0}; });
}

Tensor leaky_relu(const Tensor& t, Scalar slope) {
  return elementwise_unary(
      t, [slope](Scalar x) { return x > 0 ? x : slope * x; },
      [slope](Scalar x, Scalar) { return x > 0 ? Scalar{1} : slope; });
}

Tensor sigmoid(const Tensor& t) {
  return elementwise_unary(
      t,
      [](Scalar x) {
        // Split by sign so exp never overflows.
        if (x >= 0) return Scalar{1} / (Scalar{1} + std::exp(-x));
        const Scalar e = std::exp(x);
        return e / (Scalar{1} + e);
      },
      [](Scalar, Scalar y) { return y * (Scalar{1} - y); });
}

Tensor square(const Tensor& t) {
  return elementwise_unary(
      t, [](Scalar x) { return x * x; },
      [](Scalar x, Scalar) { return Scalar{2} * x; });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto ad = a.data(), bd = b.data();
  std::vector<Scalar> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  NodePtr a_n = a.node(), b_n = b.node();
  return make_result(a.shape(), std::move(out), {a_n, b_n},
                     [a_n, b_n](Tensor::Node& self) {
                       for (auto* p : {a_n.get(), b_n.get()}) {
                         if (!p->requires_grad) continue;
                         auto g = p->ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                       }
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto ad = a.data(), bd = b.data();
  std::vector<Scalar> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
  NodePtr a_n = a.node(), b_n = b.node();
  return make_result(a.shape(), std::move(out), {a_n, b_n},
                     [a_n, b_n](Tensor::Node& self) {
                       if (a_n->requires_grad) {
                         auto g = a_n->ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                       }
                       if (b_n->requires_grad) {
                         auto g = b_n->ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
                       }
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto ad = a.data(), bd = b.data();
  std::vector<Scalar> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  NodePtr a_n = a.node(), b_n = b.node();
  return make_result(a.shape(), std::move(out), {a_n, b_n},
                     [a_n, b_n](Tensor::Node& self) {
                       if (a_n->requires_grad) {
                         auto g = a_n->ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] += self.grad[i] * b_n->data[i];
                       }
                       if (b_n->requires_grad) {
                         auto g = b_n->ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] += self.grad[i] * a_n->data[i];
                       }
                     });
}

Tensor scale(const Tensor& t, Scalar factor) {
  const auto in = t.data();
  std::vector<Scalar> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * factor;
  NodePtr src = t.node();
  return make_result(t.shape(), std::move(out), {src},
                     [src, factor](Tensor::Node& self) {
                       auto g = src->ensure_grad();
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
                     });
}

Tensor sum_all(const Tensor& t) {
  double acc = 0.0;
  for (Scalar v : t.data()) acc += static_cast<double>(v);
  NodePtr src = t.node();
  return make_result({1}, {static_cast<Scalar>(acc)}, {src},
                     [src](Tensor::Node& self) {
                       auto g = src->ensure_grad();
                       const Scalar s = self.grad[0];
                       for (auto& v : g) v += s;
                     });
}

Tensor concat_channels(std::initializer_list<Tensor> parts) {
  return concat_channels(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const std::size_t h = parts[0].rank() == 3 ? parts[0].dim(1) : 0;
  const std::size_t w = parts[0].rank() == 3 ? parts[0].dim(2) : 0;
  std::size_t channels = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    require_rank(parts[i], 3, "concat_channels", "every input");
    if (parts[i].dim(1) != h || parts[i].dim(2) != w) {
      throw ShapeError("concat_channels: input " + std::to_string(i) +
                       " has spatial size " + shape_str(parts[i].shape()) +
                       ", expected " + std::to_string(h) + "x" + std::to_string(w));
    }
    channels += parts[i].dim(0);
  }
  std::vector<Scalar> out;
  out.reserve(channels * h * w);
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    const auto d = p.data();
    out.insert(out.end(), d.begin(), d.end());
    parents.push_back(p.node());
  }
  return make_result({channels, h, w}, std::move(out), parents,
                     [parents](Tensor::Node& self) {
                       std::size_t offset = 0;
                       for (const auto& p : parents) {
                         const std::size_t n = p->data.size();
                         if (p->requires_grad) {
                           auto g = p->ensure_grad();
                           for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
                         }
                         offset += n;
                       }
                     });
}

Tensor channel(const Tensor& t, std::size_t index) {
  require_rank(t, 3, "channel", "input");
  if (index >= t.dim(0)) {
    throw ShapeError("channel: index " + std::to_string(index) +
                     " out of range for " + shape_str(t.shape()));
  }
  const std::size_t plane = t.dim(1) * t.dim(2);
  const auto d = t.data();
  std::vector<Scalar> out(d.begin() + static_cast<long>(index * plane),
                          d.begin() + static_cast<long>((index + 1) * plane));
  NodePtr src = t.node();
  return make_result({1, t.dim(1), t.dim(2)}, std::move(out), {src},
                     [src, index, plane](Tensor::Node& self) {
                       auto g = src->ensure_grad();
                       for (std::size_t i = 0; i < plane; ++i)
                         g[index * plane + i] += self.grad[i];
                     });
}

Tensor avgpool_down(const Tensor& t, std::size_t factor) {
  require_rank(t, 3, "avgpool_down", "input");
  if (factor == 0) throw ShapeError("avgpool_down: factor must be positive");
  const std::size_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
  const std::size_t ho = h / factor, wo = w / factor;
  if (ho == 0 || wo == 0) {
    throw ShapeError("avgpool_down: factor " + std::to_string(factor) +
                     " exceeds spatial size " + shape_str(t.shape()));
  }
  const auto in = t.data();
  const Scalar inv = Scalar{1} / static_cast<Scalar>(factor * factor);
  std::vector<Scalar> out(c * ho * wo);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double acc = 0.0;
        for (std::size_t dy = 0; dy < factor; ++dy)
          for (std::size_t dx = 0; dx < factor; ++dx)
            acc += in[(ch * h + oy * factor + dy) * w + ox * factor + dx];
        out[(ch * ho + oy) * wo + ox] = static_cast<Scalar>(acc) * inv;
      }
  NodePtr src = t.node();
  return make_result({c, ho, wo}, std::move(out), {src},
                     [=](Tensor::Node& self) {
                       auto g = src->ensure_grad();
                       for (std::size_t ch = 0; ch < c; ++ch)
                         for (std::size_t oy = 0; oy < ho; ++oy)
                           for (std::size_t ox = 0; ox < wo; ++ox) {
                             const Scalar go = self.grad[(ch * ho + oy) * wo + ox] * inv;
                             for (std::size_t dy = 0; dy < factor; ++dy)
                               for (std::size_t dx = 0; dx < factor; ++dx)
                                 g[(ch * h + oy * factor + dy) * w + ox * factor + dx] += go;
                           }
                     });
}

Tensor binary_cross_entropy(const Tensor& probs, std::span<const Scalar> targets) {
  if (probs.numel() != targets.size()) {
    throw ShapeError("binary_cross_entropy: " + std::to_string(probs.numel()) +
                     " probabilities but " + std::to_string(targets.size()) +
                     " targets");
  }
  if (targets.empty()) throw ShapeError("binary_cross_entropy: empty batch");
  const auto p = probs.data();
  const double lo = kBceClamp, hi = 1.0 - kBceClamp;
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(static_cast<double>(p[i]), lo, hi);
    const double y = targets[i];
    acc -= y * std::log(q) + (1.0 - y) * std::log(1.0 - q);
  }
  const double n = static_cast<double>(p.size());
  NodePtr src = probs.node();
  std::vector<Scalar> y(targets.begin(), targets.end());
  return make_result({1}, {static_cast<Scalar>(acc / n)}, {src},
                     [src, y = std::move(y), lo, hi, n](Tensor::Node& self) {
                       auto g = src->ensure_grad();
                       const double s = self.grad[0];
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const double q = src->data[i];
                         if (q <= lo || q >= hi) continue;
                         g[i] += static_cast<Scalar>(s * (q - y[i]) / (q * (1.0 - q)) / n);
                       }
                     });
}

}  // namespace cccnet
