#include "sam/ops.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sam::ops {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    std::ostringstream os;
    os << op << ": " << what << " must have rank " << rank << ", received " << shape_string(t.shape());
    throw DimensionError(os.str());
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": operand shapes differ, " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

using Grads = std::span<std::vector<double>* const>;

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride, std::size_t padding) {
  require_rank(input, 3, "conv2d", "input");
  require_rank(kernels, 4, "conv2d", "kernels");
  if (stride == 0) throw ParameterError("conv2d: stride must be positive");
  const std::size_t h = input.dim(0), w = input.dim(1), cin = input.dim(2);
  const std::size_t k = kernels.dim(0), cout = kernels.dim(3);
  if (kernels.dim(1) != k) {
    throw DimensionError("conv2d: kernel axes 0 and 1 differ (" + shape_string(kernels.shape()) + ")");
  }
  if (kernels.dim(2) != cin) {
    throw DimensionError("conv2d: kernel input-channel axis 2 is " + std::to_string(kernels.dim(2)) +
                         " but input channel axis 2 is " + std::to_string(cin));
  }
  if (k > h + 2 * padding || k > w + 2 * padding) {
    throw DimensionError("conv2d: kernel size " + std::to_string(k) + " exceeds padded input " +
                         shape_string(input.shape()) + " (axes 0/1, padding " + std::to_string(padding) + ")");
  }
  const std::size_t oh = (h + 2 * padding - k) / stride + 1;
  const std::size_t ow = (w + 2 * padding - k) / stride + 1;
  const auto x = input.values();
  const auto ker = kernels.values();
  std::vector<double> out(oh * ow * cout, 0.0);

  // Visits every (output cell, kernel tap) pair that lands inside the input.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t ox = 0; ox < ow; ++ox) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            fn((oy * ow + ox) * cout, (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * cin,
               (ky * k + kx) * cin * cout);
          }
        }
      }
    }
  };

  for_each_tap([&](std::size_t o, std::size_t i, std::size_t kb) {
    double* dst = out.data() + o;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const double xv = x[i + ci];
      const double* kr = ker.data() + kb + ci * cout;
      for (std::size_t co = 0; co < cout; ++co) dst[co] += xv * kr[co];
    }
  });

  return make_op("conv2d", {oh, ow, cout}, std::move(out), {input, kernels},
                 [input, kernels, for_each_tap, cin, cout](std::span<const double> g, Grads grads) {
                   const auto x = input.values();
                   const auto ker = kernels.values();
                   if (auto* gx = grads[0]) {
                     for_each_tap([&](std::size_t o, std::size_t i, std::size_t kb) {
                       const double* go = g.data() + o;
                       for (std::size_t ci = 0; ci < cin; ++ci) {
                         const double* kr = ker.data() + kb + ci * cout;
                         double acc = 0.0;
                         for (std::size_t co = 0; co < cout; ++co) acc += go[co] * kr[co];
                         (*gx)[i + ci] += acc;
                       }
                     });
                   }
                   if (auto* gk = grads[1]) {
                     for_each_tap([&](std::size_t o, std::size_t i, std::size_t kb) {
                       const double* go = g.data() + o;
                       for (std::size_t ci = 0; ci < cin; ++ci) {
                         const double xv = x[i + ci];
                         double* kr = gk->data() + kb + ci * cout;
                         for (std::size_t co = 0; co < cout; ++co) kr[co] += xv * go[co];
                       }
                     });
                   }
                 });
}

Tensor add_channel_bias(const Tensor& map, const Tensor& bias) {
  require_rank(bias, 1, "add_channel_bias", "bias");
  if (map.rank() == 0 || map.shape().back() != bias.dim(0)) {
    throw DimensionError("add_channel_bias: map " + shape_string(map.shape()) + " last axis does not match bias " +
                         shape_string(bias.shape()));
  }
  const std::size_t c = bias.dim(0);
  std::vector<double> out(map.values().begin(), map.values().end());
  const auto b = bias.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % c];
  return make_op("add_channel_bias", map.shape(), std::move(out), {map, bias},
                 [c](std::span<const double> g, Grads grads) {
                   if (auto* gm = grads[0]) {
                     for (std::size_t i = 0; i < g.size(); ++i) (*gm)[i] += g[i];
                   }
                   if (auto* gb = grads[1]) {
                     for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % c] += g[i];
                   }
                 });
}

Tensor global_average_pool(const Tensor& map) {
  require_rank(map, 3, "global_average_pool", "map");
  const std::size_t cells = map.dim(0) * map.dim(1), d = map.dim(2);
  const auto v = map.values();
  std::vector<double> out(d, 0.0);
  for (std::size_t cell = 0; cell < cells; ++cell) {
    for (std::size_t c = 0; c < d; ++c) out[c] += v[cell * d + c];
  }
  const double inv = 1.0 / static_cast<double>(cells);
  for (double& o : out) o *= inv;
  return make_op("global_average_pool", {d}, std::move(out), {map},
                 [cells, d, inv](std::span<const double> g, Grads grads) {
                   auto& gm = *grads[0];
                   for (std::size_t cell = 0; cell < cells; ++cell) {
                     for (std::size_t c = 0; c < d; ++c) gm[cell * d + c] += g[c] * inv;
                   }
                 });
}

Tensor softmax2d_temperature(const Tensor& map, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw ParameterError("softmax2d_temperature: temperature must be positive, received " + std::to_string(tau));
  }
  require_rank(map, 2, "softmax2d_temperature", "map");
  const auto v = map.values();
  const double peak = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp((v[i] - peak) / tau);
    total += out[i];
  }
  for (double& o : out) o /= total;
  std::vector<double> probs = out;
  return make_op("softmax2d_temperature", map.shape(), std::move(out), {map},
                 [probs = std::move(probs), tau](std::span<const double> g, Grads grads) {
                   double dot = 0.0;
                   for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * probs[i];
                   auto& gm = *grads[0];
                   for (std::size_t i = 0; i < g.size(); ++i) gm[i] += probs[i] * (g[i] - dot) / tau;
                 });
}

Tensor kl_divergence(const Tensor& p, const Tensor& q) {
  if (p.size() != q.size()) {
    throw DimensionError("kl_divergence: operand sizes differ, " + shape_string(p.shape()) + " vs " +
                         shape_string(q.shape()));
  }
  const auto pv = p.values();
  const auto qv = q.values();
  auto check_distribution = [](std::span<const double> d, const char* name) {
    double total = 0.0;
    for (double x : d) {
      if (x < 0.0) throw ContractError(std::string("kl_divergence: ") + name + " has a negative entry");
      total += x;
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw ContractError(std::string("kl_divergence: ") + name + " sums to " + std::to_string(total) +
                          ", expected 1");
    }
  };
  check_distribution(pv, "p");
  check_distribution(qv, "q");
  double kl = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (pv[i] == 0.0) continue;
    if (qv[i] <= 0.0) throw ContractError("kl_divergence: q is zero where p is positive");
    kl += pv[i] * std::log(pv[i] / qv[i]);
  }
  return make_op("kl_divergence", {}, {kl}, {p, q}, [p, q](std::span<const double> g, Grads grads) {
    const auto pv = p.values();
    const auto qv = q.values();
    for (std::size_t i = 0; i < pv.size(); ++i) {
      if (pv[i] == 0.0) continue;
      if (auto* gp = grads[0]) (*gp)[i] += g[0] * (std::log(pv[i] / qv[i]) + 1.0);
      if (auto* gq = grads[1]) (*gq)[i] -= g[0] * pv[i] / qv[i];
    }
  });
}

Tensor channel_max(const Tensor& maps) {
  require_rank(maps, 3, "channel_max", "maps");
  const std::size_t cells = maps.dim(0) * maps.dim(1), k = maps.dim(2);
  const auto v = maps.values();
  std::vector<double> out(cells);
  std::vector<std::size_t> argmax(cells);
  for (std::size_t cell = 0; cell < cells; ++cell) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (v[cell * k + c] > v[cell * k + best]) best = c;
    }
    argmax[cell] = cell * k + best;
    out[cell] = v[argmax[cell]];
  }
  return make_op("channel_max", {maps.dim(0), maps.dim(1)}, std::move(out), {maps},
                 [argmax = std::move(argmax)](std::span<const double> g, Grads grads) {
                   auto& gm = *grads[0];
                   for (std::size_t cell = 0; cell < g.size(); ++cell) gm[argmax[cell]] += g[cell];
                 });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_op("add", a.shape(), std::move(out), {a, b}, [](std::span<const double> g, Grads grads) {
    for (auto* gi : grads) {
      if (!gi) continue;
      for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_op("sub", a.shape(), std::move(out), {a, b}, [](std::span<const double> g, Grads grads) {
    if (auto* ga = grads[0]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
    if (auto* gb = grads[1]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_op("mul", a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g, Grads grads) {
    const auto av = a.values();
    const auto bv = b.values();
    if (auto* ga = grads[0]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (auto* gb = grads[1]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& t, double factor) {
  std::vector<double> out(t.values().begin(), t.values().end());
  for (double& o : out) o *= factor;
  return make_op("scale", t.shape(), std::move(out), {t}, [factor](std::span<const double> g, Grads grads) {
    auto& gt = *grads[0];
    for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i] * factor;
  });
}

Tensor relu(const Tensor& t) {
  std::vector<double> out(t.values().begin(), t.values().end());
  for (double& o : out) o = o > 0.0 ? o : 0.0;
  return make_op("relu", t.shape(), std::move(out), {t}, [t](std::span<const double> g, Grads grads) {
    const auto v = t.values();
    auto& gt = *grads[0];
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (v[i] > 0.0) gt[i] += g[i];
    }
  });
}

Tensor matvec(const Tensor& weights, const Tensor& x) {
  require_rank(weights, 2, "matvec", "weights");
  require_rank(x, 1, "matvec", "x");
  const std::size_t m = weights.dim(0), n = weights.dim(1);
  if (x.dim(0) != n) {
    throw DimensionError("matvec: weights axis 1 is " + std::to_string(n) + " but x axis 0 is " +
                         std::to_string(x.dim(0)));
  }
  const auto wv = weights.values();
  const auto xv = x.values();
  std::vector<double> out(m, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < n; ++c) acc += wv[r * n + c] * xv[c];
    out[r] = acc;
  }
  return make_op("matvec", {m}, std::move(out), {weights, x},
                 [weights, x, m, n](std::span<const double> g, Grads grads) {
                   const auto wv = weights.values();
                   const auto xv = x.values();
                   if (auto* gw = grads[0]) {
                     for (std::size_t r = 0; r < m; ++r) {
                       for (std::size_t c = 0; c < n; ++c) (*gw)[r * n + c] += g[r] * xv[c];
                     }
                   }
                   if (auto* gx = grads[1]) {
                     for (std::size_t r = 0; r < m; ++r) {
                       for (std::size_t c = 0; c < n; ++c) (*gx)[c] += g[r] * wv[r * n + c];
                     }
                   }
                 });
}

Tensor sum(const Tensor& t) {
  double total = 0.0;
  for (double v : t.values()) total += v;
  return make_op("sum", {}, {total}, {t}, [](std::span<const double> g, Grads grads) {
    for (double& x : *grads[0]) x += g[0];
  });
}

Tensor add_all(std::span<const Tensor> terms) {
  if (terms.empty()) throw DimensionError("add_all: no operands");
  std::vector<double> out(terms[0].size(), 0.0);
  for (const auto& t : terms) {
    require_same_shape(terms[0], t, "add_all");
    const auto v = t.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
  }
  return make_op("add_all", terms[0].shape(), std::move(out), {terms.begin(), terms.end()},
                 [](std::span<const double> g, Grads grads) {
                   for (auto* gi : grads) {
                     if (!gi) continue;
                     for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i];
                   }
                 });
}

Tensor reshape(const Tensor& t, Shape shape) {
  if (shape_size(shape) != t.size()) {
    throw DimensionError("reshape: cannot view " + shape_string(t.shape()) + " as " + shape_string(shape));
  }
  return make_op("reshape", std::move(shape), {t.values().begin(), t.values().end()}, {t},
                 [](std::span<const double> g, Grads grads) {
                   auto& gt = *grads[0];
                   for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
                 });
}

Tensor select(const Tensor& t, std::size_t index) {
  if (index >= t.size()) {
    throw DimensionError("select: index " + std::to_string(index) + " out of range for " + shape_string(t.shape()));
  }
  return make_op("select", {}, {t[index]}, {t},
                 [index](std::span<const double> g, Grads grads) { (*grads[0])[index] += g[0]; });
}

}  // namespace sam::ops
