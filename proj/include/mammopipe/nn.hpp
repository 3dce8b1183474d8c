#pragma once
// A small trainable CNN with explicit backpropagation: conv / relu / maxpool
// / flatten / dense / softmax layers, SGD-with-momentum, cross-entropy, and
// the transfer-learning mechanics (per-layer freezing, head replacement with
// a learning-rate multiplier).
//
// All arithmetic is double precision; checkpoints store float32. Threaded
// loops partition output elements so each is produced by exactly one thread
// with a fixed-order inner summation - results are bit-identical whatever
// the thread count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "mammopipe/rng.hpp"

namespace mammopipe::nn {

// ---------------------------------------------------------------------------
// Tensors

struct Tensor {
  std::vector<std::size_t> dims;  // (n, c, h, w) or (n, features)
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> d) : dims(std::move(d)) {
    v.assign(count(), 0.0);
  }

  std::size_t count() const {
    std::size_t c = 1;
    for (std::size_t d : dims) c *= d;
    return dims.empty() ? 0 : c;
  }
  bool same_shape(const Tensor& o) const { return dims == o.dims; }
  bool all_finite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }
};

inline std::string shape_string(const std::vector<std::size_t>& dims) {
  std::string s = "(";
  for (std::size_t i = 0; i < dims.size(); ++i)
    s += (i ? "," : "") + std::to_string(dims[i]);
  return s + ")";
}

// Stacks per-sample tensors (all with identical dims) into one batch.
inline Tensor stack(const std::vector<const Tensor*>& samples) {
  if (samples.empty()) throw std::invalid_argument("stack: no samples");
  std::vector<std::size_t> dims;
  dims.push_back(samples.size());
  for (std::size_t d : samples[0]->dims) dims.push_back(d);
  Tensor out(dims);
  const std::size_t stride = samples[0]->count();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i]->dims != samples[0]->dims)
      throw std::invalid_argument("stack: sample shapes disagree");
    std::copy(samples[i]->v.begin(), samples[i]->v.end(),
              out.v.begin() + i * stride);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Layer specifications

enum class LayerKind : std::uint32_t {
  Conv = 1,
  Relu = 2,
  MaxPool = 3,
  Flatten = 4,
  Dense = 5,
  Softmax = 6,
};

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Dense: return "dense";
    case LayerKind::Softmax: return "softmax";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  std::size_t out_ch = 0;        // conv
  std::size_t kernel = 0;        // conv, maxpool
  std::size_t stride = 1;        // conv, maxpool
  std::size_t pad = 0;           // conv
  std::size_t out_features = 0;  // dense
  bool frozen = false;
  bool head = false;  // replacement-head layer, gets the lr multiplier

  static LayerSpec conv(std::size_t out_ch, std::size_t kernel,
                        std::size_t stride = 1, std::size_t pad = 0) {
    LayerSpec l;
    l.kind = LayerKind::Conv;
    l.out_ch = out_ch;
    l.kernel = kernel;
    l.stride = stride;
    l.pad = pad;
    return l;
  }
  static LayerSpec relu() { return LayerSpec{}; }
  static LayerSpec maxpool(std::size_t kernel, std::size_t stride) {
    LayerSpec l;
    l.kind = LayerKind::MaxPool;
    l.kernel = kernel;
    l.stride = stride;
    return l;
  }
  static LayerSpec flatten() {
    LayerSpec l;
    l.kind = LayerKind::Flatten;
    return l;
  }
  static LayerSpec dense(std::size_t out_features) {
    LayerSpec l;
    l.kind = LayerKind::Dense;
    l.out_features = out_features;
    return l;
  }
  static LayerSpec softmax() {
    LayerSpec l;
    l.kind = LayerKind::Softmax;
    return l;
  }

  bool has_params() const {
    return kind == LayerKind::Conv || kind == LayerKind::Dense;
  }
};

struct ParamSet {
  Tensor w;
  Tensor b;

  bool empty() const { return w.v.empty() && b.v.empty(); }
};

struct NetworkSpec {
  std::vector<LayerSpec> layers;
  std::vector<ParamSet> params;    // parallel to layers, empty when none
  std::vector<ParamSet> velocity;  // momentum state, mirrors params
  std::vector<std::size_t> in_dims;  // per-sample: (c,h,w) or (features)
  std::vector<std::vector<std::size_t>> layer_in_dims;  // inferred, per layer
  int aux_layer = -1;      // dense layer whose input gets aux features
  std::size_t aux_dim = 0;
  std::uint64_t rng_seed = 0;

  std::size_t num_classes() const {
    for (auto it = layers.rbegin(); it != layers.rend(); ++it)
      if (it->kind == LayerKind::Dense) return it->out_features;
    return 0;
  }
};

namespace detail {

inline std::vector<std::size_t> infer_out_dims(
    const LayerSpec& l, const std::vector<std::size_t>& in,
    std::size_t layer_index, bool aux_here, std::size_t aux_dim) {
  auto fail = [&](const std::string& msg) {
    throw std::invalid_argument("layer " + std::to_string(layer_index) + " (" +
                                to_string(l.kind) + "): " + msg +
                                ", input " + shape_string(in));
  };
  switch (l.kind) {
    case LayerKind::Conv: {
      if (in.size() != 3) fail("expects (c,h,w) input");
      if (l.kernel == 0 || l.stride == 0) fail("kernel and stride must be > 0");
      std::size_t h = in[1] + 2 * l.pad, w = in[2] + 2 * l.pad;
      if (h < l.kernel || w < l.kernel) fail("kernel larger than padded input");
      return {l.out_ch, (h - l.kernel) / l.stride + 1,
              (w - l.kernel) / l.stride + 1};
    }
    case LayerKind::Relu:
      return in;
    case LayerKind::MaxPool: {
      if (in.size() != 3) fail("expects (c,h,w) input");
      if (l.kernel == 0 || l.stride == 0) fail("kernel and stride must be > 0");
      if (in[1] < l.kernel || in[2] < l.kernel)
        fail("pool window larger than input");
      return {in[0], (in[1] - l.kernel) / l.stride + 1,
              (in[2] - l.kernel) / l.stride + 1};
    }
    case LayerKind::Flatten: {
      std::size_t f = 1;
      for (std::size_t d : in) f *= d;
      return {f};
    }
    case LayerKind::Dense: {
      if (in.size() != 1) fail("expects flattened (features) input");
      (void)aux_here;
      (void)aux_dim;
      return {l.out_features};
    }
    case LayerKind::Softmax:
      if (in.size() != 1) fail("expects (features) input");
      return in;
  }
  fail("unknown layer kind");
  return {};
}

}  // namespace detail

// Shape inference plus seeded He initialization (fan-in scaled normals for
// conv/dense weights, zero biases). `aux_layer` names a dense layer whose
// input is the previous activation concatenated with `aux_dim` extra
// features.
inline NetworkSpec build_network(std::vector<LayerSpec> layers,
                                 std::vector<std::size_t> in_dims,
                                 std::uint64_t seed, int aux_layer = -1,
                                 std::size_t aux_dim = 0) {
  if (layers.empty()) throw std::invalid_argument("build_network: no layers");
  if (aux_layer >= 0) {
    if (static_cast<std::size_t>(aux_layer) >= layers.size() ||
        layers[aux_layer].kind != LayerKind::Dense)
      throw std::invalid_argument(
          "build_network: aux_layer must name a dense layer");
    if (aux_dim == 0)
      throw std::invalid_argument("build_network: aux_dim must be > 0");
  }

  NetworkSpec net;
  net.layers = std::move(layers);
  net.in_dims = std::move(in_dims);
  net.rng_seed = seed;
  net.aux_layer = aux_layer;
  net.aux_dim = aux_dim;
  net.params.resize(net.layers.size());
  net.velocity.resize(net.layers.size());

  std::vector<std::size_t> dims = net.in_dims;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const bool aux_here = static_cast<int>(i) == aux_layer;
    if (aux_here) dims[0] += aux_dim;  // concat before this dense layer
    net.layer_in_dims.push_back(dims);
    LayerSpec& l = net.layers[i];
    if (l.kind == LayerKind::Conv) {
      std::size_t in_ch = dims[0];
      net.params[i].w = Tensor({l.out_ch, in_ch, l.kernel, l.kernel});
      net.params[i].b = Tensor({l.out_ch});
      SplitMix64 rng(derive_seed(seed, "init", i));
      double sd = std::sqrt(2.0 / static_cast<double>(in_ch * l.kernel * l.kernel));
      for (double& x : net.params[i].w.v) x = rng.gaussian() * sd;
    } else if (l.kind == LayerKind::Dense) {
      std::size_t in_f = dims[0];
      net.params[i].w = Tensor({l.out_features, in_f});
      net.params[i].b = Tensor({l.out_features});
      SplitMix64 rng(derive_seed(seed, "init", i));
      double sd = std::sqrt(2.0 / static_cast<double>(in_f));
      for (double& x : net.params[i].w.v) x = rng.gaussian() * sd;
    }
    net.velocity[i].w = Tensor(net.params[i].w.dims);
    net.velocity[i].b = Tensor(net.params[i].b.dims);
    dims = detail::infer_out_dims(l, dims, i, aux_here, aux_dim);
  }
  return net;
}

// ---------------------------------------------------------------------------
// Forward

struct Cache {
  // acts[i] = input to layer i (after aux concat when applicable);
  // acts[layers.size()] = network output.
  std::vector<Tensor> acts;
};

namespace detail {

inline void conv_forward(const LayerSpec& l, const ParamSet& p,
                         const Tensor& in, Tensor& out) {
  const std::size_t n = in.dims[0], ic = in.dims[1], ih = in.dims[2],
                    iw = in.dims[3];
  const std::size_t oc = out.dims[1], oh = out.dims[2], ow = out.dims[3];
  const long pad = static_cast<long>(l.pad);
  const std::size_t st = l.stride, k = l.kernel;
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static)
#endif
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t o = 0; o < oc; ++o) {
      double* op = &out.v[((b * oc) + o) * oh * ow];
      std::fill(op, op + oh * ow, p.b.v[o]);
      for (std::size_t c = 0; c < ic; ++c) {
        const double* ip = &in.v[((b * ic) + c) * ih * iw];
        const double* wp = &p.w.v[((o * ic) + c) * k * k];
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const double wv = wp[ky * k + kx];
            for (std::size_t oy = 0; oy < oh; ++oy) {
              const long iy = static_cast<long>(oy * st + ky) - pad;
              if (iy < 0 || iy >= static_cast<long>(ih)) continue;
              const double* irow = ip + iy * iw;
              double* orow = op + oy * ow;
              for (std::size_t ox = 0; ox < ow; ++ox) {
                const long ix = static_cast<long>(ox * st + kx) - pad;
                if (ix < 0 || ix >= static_cast<long>(iw)) continue;
                orow[ox] += wv * irow[ix];
              }
            }
          }
        }
      }
    }
  }
}

inline void maxpool_forward(const LayerSpec& l, const Tensor& in,
                            Tensor& out) {
  const std::size_t n = in.dims[0], ch = in.dims[1], ih = in.dims[2],
                    iw = in.dims[3];
  const std::size_t oh = out.dims[2], ow = out.dims[3];
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static)
#endif
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t c = 0; c < ch; ++c) {
      const double* ip = &in.v[((b * ch) + c) * ih * iw];
      double* op = &out.v[((b * ch) + c) * oh * ow];
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double best = -std::numeric_limits<double>::infinity();
          for (std::size_t ky = 0; ky < l.kernel; ++ky)
            for (std::size_t kx = 0; kx < l.kernel; ++kx) {
              double x = ip[(oy * l.stride + ky) * iw + ox * l.stride + kx];
              if (x > best) best = x;
            }
          op[oy * ow + ox] = best;
        }
      }
    }
  }
}

inline void dense_forward(const ParamSet& p, const Tensor& in, Tensor& out) {
  const std::size_t n = in.dims[0], fi = in.dims[1], fo = out.dims[1];
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::size_t b = 0; b < n; ++b) {
    const double* ip = &in.v[b * fi];
    double* op = &out.v[b * fo];
    for (std::size_t o = 0; o < fo; ++o) {
      const double* wp = &p.w.v[o * fi];
      double acc = p.b.v[o];
      for (std::size_t i = 0; i < fi; ++i) acc += wp[i] * ip[i];
      op[o] = acc;
    }
  }
}

inline void softmax_forward(const Tensor& in, Tensor& out) {
  const std::size_t n = in.dims[0], f = in.dims[1];
  for (std::size_t b = 0; b < n; ++b) {
    const double* ip = &in.v[b * f];
    double* op = &out.v[b * f];
    double mx = ip[0];
    for (std::size_t i = 1; i < f; ++i) mx = std::max(mx, ip[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < f; ++i) {
      op[i] = std::exp(ip[i] - mx);
      sum += op[i];
    }
    for (std::size_t i = 0; i < f; ++i) op[i] /= sum;
  }
}

inline Tensor concat_features(const Tensor& x, const Tensor& aux) {
  const std::size_t n = x.dims[0], f = x.dims[1], a = aux.dims[1];
  Tensor out({n, f + a});
  for (std::size_t b = 0; b < n; ++b) {
    std::copy_n(&x.v[b * f], f, &out.v[b * (f + a)]);
    std::copy_n(&aux.v[b * a], a, &out.v[b * (f + a) + f]);
  }
  return out;
}

}  // namespace detail

// Runs the network on a batch. `aux` is required iff the network declares an
// aux layer; it must be (n, aux_dim). The cache, when requested, holds every
// layer input and is what backward() consumes.
inline Tensor forward(const NetworkSpec& net, const Tensor& x,
                      Cache* cache = nullptr, const Tensor* aux = nullptr) {
  if (x.dims.size() != net.in_dims.size() + 1 ||
      !std::equal(net.in_dims.begin(), net.in_dims.end(), x.dims.begin() + 1))
    throw std::invalid_argument("forward: batch shape " +
                                shape_string(x.dims) + " does not match " +
                                "network input " + shape_string(net.in_dims));
  if (net.aux_layer >= 0) {
    if (!aux)
      throw std::invalid_argument("forward: network expects aux features");
    if (aux->dims.size() != 2 || aux->dims[0] != x.dims[0] ||
        aux->dims[1] != net.aux_dim)
      throw std::invalid_argument("forward: aux shape " +
                                  shape_string(aux->dims) + " must be (" +
                                  std::to_string(x.dims[0]) + "," +
                                  std::to_string(net.aux_dim) + ")");
  } else if (aux) {
    throw std::invalid_argument("forward: network takes no aux features");
  }

  const std::size_t n = x.dims[0];
  Tensor cur = x;
  if (cache) {
    cache->acts.clear();
    cache->acts.reserve(net.layers.size() + 1);
  }
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& l = net.layers[i];
    if (static_cast<int>(i) == net.aux_layer)
      cur = detail::concat_features(cur, *aux);
    if (cache) cache->acts.push_back(cur);

    std::vector<std::size_t> od = {n};
    {
      std::vector<std::size_t> sample_in(cur.dims.begin() + 1, cur.dims.end());
      auto sample_out = detail::infer_out_dims(l, sample_in, i, false, 0);
      od.insert(od.end(), sample_out.begin(), sample_out.end());
    }
    Tensor out(od);
    switch (l.kind) {
      case LayerKind::Conv:
        detail::conv_forward(l, net.params[i], cur, out);
        break;
      case LayerKind::Relu:
        for (std::size_t j = 0; j < cur.v.size(); ++j)
          out.v[j] = cur.v[j] > 0.0 ? cur.v[j] : 0.0;
        break;
      case LayerKind::MaxPool:
        detail::maxpool_forward(l, cur, out);
        break;
      case LayerKind::Flatten:
        out.v = cur.v;  // same row-major layout
        break;
      case LayerKind::Dense:
        detail::dense_forward(net.params[i], cur, out);
        break;
      case LayerKind::Softmax:
        detail::softmax_forward(cur, out);
        break;
    }
    cur = std::move(out);
  }
  if (cache) cache->acts.push_back(cur);
  return cur;
}

// ---------------------------------------------------------------------------
// Backward

struct Gradients {
  std::vector<ParamSet> layers;  // empty entries for frozen/param-less layers
  Tensor input_grad;
  Tensor aux_grad;  // populated when the network has an aux layer
};

namespace detail {

inline void conv_backward(const LayerSpec& l, const ParamSet& p,
                          const Tensor& in, const Tensor& dout, Tensor* dw,
                          Tensor* db, Tensor& din) {
  const std::size_t n = in.dims[0], ic = in.dims[1], ih = in.dims[2],
                    iw = in.dims[3];
  const std::size_t oc = dout.dims[1], oh = dout.dims[2], ow = dout.dims[3];
  const long pad = static_cast<long>(l.pad);
  const std::size_t st = l.stride, k = l.kernel;

  if (dw) {
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static)
#endif
    for (std::size_t o = 0; o < oc; ++o) {
      for (std::size_t c = 0; c < ic; ++c) {
        double* wgp = &dw->v[((o * ic) + c) * k * k];
        for (std::size_t b = 0; b < n; ++b) {
          const double* ip = &in.v[((b * ic) + c) * ih * iw];
          const double* gp = &dout.v[((b * oc) + o) * oh * ow];
          for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
              double acc = 0.0;
              for (std::size_t oy = 0; oy < oh; ++oy) {
                const long iy = static_cast<long>(oy * st + ky) - pad;
                if (iy < 0 || iy >= static_cast<long>(ih)) continue;
                const double* irow = ip + iy * iw;
                const double* grow = gp + oy * ow;
                for (std::size_t ox = 0; ox < ow; ++ox) {
                  const long ix = static_cast<long>(ox * st + kx) - pad;
                  if (ix < 0 || ix >= static_cast<long>(iw)) continue;
                  acc += grow[ox] * irow[ix];
                }
              }
              wgp[ky * k + kx] += acc;
            }
          }
        }
      }
    }
    for (std::size_t o = 0; o < oc; ++o) {
      double acc = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* gp = &dout.v[((b * oc) + o) * oh * ow];
        for (std::size_t j = 0; j < oh * ow; ++j) acc += gp[j];
      }
      db->v[o] += acc;
    }
  }

#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static)
#endif
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t c = 0; c < ic; ++c) {
      double* dip = &din.v[((b * ic) + c) * ih * iw];
      for (std::size_t o = 0; o < oc; ++o) {
        const double* gp = &dout.v[((b * oc) + o) * oh * ow];
        const double* wp = &p.w.v[((o * ic) + c) * k * k];
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const double wv = wp[ky * k + kx];
            for (std::size_t oy = 0; oy < oh; ++oy) {
              const long iy = static_cast<long>(oy * st + ky) - pad;
              if (iy < 0 || iy >= static_cast<long>(ih)) continue;
              double* drow = dip + iy * iw;
              const double* grow = gp + oy * ow;
              for (std::size_t ox = 0; ox < ow; ++ox) {
                const long ix = static_cast<long>(ox * st + kx) - pad;
                if (ix < 0 || ix >= static_cast<long>(iw)) continue;
                drow[ix] += wv * grow[ox];
              }
            }
          }
        }
      }
    }
  }
}

inline void maxpool_backward(const LayerSpec& l, const Tensor& in,
                             const Tensor& dout, Tensor& din) {
  const std::size_t n = in.dims[0], ch = in.dims[1], ih = in.dims[2],
                    iw = in.dims[3];
  const std::size_t oh = dout.dims[2], ow = dout.dims[3];
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static)
#endif
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t c = 0; c < ch; ++c) {
      const double* ip = &in.v[((b * ch) + c) * ih * iw];
      const double* gp = &dout.v[((b * ch) + c) * oh * ow];
      double* dp = &din.v[((b * ch) + c) * ih * iw];
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          // First maximum in scan order wins, matching the forward pass.
          double best = -std::numeric_limits<double>::infinity();
          std::size_t by = 0, bx = 0;
          for (std::size_t ky = 0; ky < l.kernel; ++ky)
            for (std::size_t kx = 0; kx < l.kernel; ++kx) {
              std::size_t iy = oy * l.stride + ky, ix = ox * l.stride + kx;
              if (ip[iy * iw + ix] > best) {
                best = ip[iy * iw + ix];
                by = iy;
                bx = ix;
              }
            }
          dp[by * iw + bx] += gp[oy * ow + ox];
        }
      }
    }
  }
}

inline void dense_backward(const ParamSet& p, const Tensor& in,
                           const Tensor& dout, Tensor* dw, Tensor* db,
                           Tensor& din) {
  const std::size_t n = in.dims[0], fi = in.dims[1], fo = dout.dims[1];
  if (dw) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (std::size_t o = 0; o < fo; ++o) {
      double* wgp = &dw->v[o * fi];
      double bacc = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double g = dout.v[b * fo + o];
        bacc += g;
        const double* ip = &in.v[b * fi];
        for (std::size_t i = 0; i < fi; ++i) wgp[i] += g * ip[i];
      }
      db->v[o] += bacc;
    }
  }
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::size_t b = 0; b < n; ++b) {
    double* dp = &din.v[b * fi];
    const double* gp = &dout.v[b * fo];
    for (std::size_t o = 0; o < fo; ++o) {
      const double g = gp[o];
      const double* wp = &p.w.v[o * fi];
      for (std::size_t i = 0; i < fi; ++i) dp[i] += g * wp[i];
    }
  }
}

inline void softmax_backward(const Tensor& out, const Tensor& dout,
                             Tensor& din) {
  const std::size_t n = out.dims[0], f = out.dims[1];
  for (std::size_t b = 0; b < n; ++b) {
    const double* pp = &out.v[b * f];
    const double* gp = &dout.v[b * f];
    double dot = 0.0;
    for (std::size_t i = 0; i < f; ++i) dot += pp[i] * gp[i];
    for (std::size_t i = 0; i < f; ++i)
      din.v[b * f + i] = pp[i] * (gp[i] - dot);
  }
}

}  // namespace detail

// Backpropagates `loss_grad` (gradient of the loss w.r.t. the network
// output). Frozen layers still pass gradients through but contribute no
// parameter gradients.
inline Gradients backward(const NetworkSpec& net, const Cache& cache,
                          const Tensor& loss_grad) {
  if (cache.acts.size() != net.layers.size() + 1)
    throw std::invalid_argument("backward: cache does not match network");
  if (!loss_grad.same_shape(cache.acts.back()))
    throw std::invalid_argument("backward: loss gradient shape " +
                                shape_string(loss_grad.dims) +
                                " does not match output " +
                                shape_string(cache.acts.back().dims));

  Gradients grads;
  grads.layers.resize(net.layers.size());
  Tensor dcur = loss_grad;
  for (std::size_t ii = net.layers.size(); ii-- > 0;) {
    const LayerSpec& l = net.layers[ii];
    const Tensor& in = cache.acts[ii];
    const bool want_params = l.has_params() && !l.frozen;
    Tensor* dw = nullptr;
    Tensor* db = nullptr;
    if (want_params) {
      grads.layers[ii].w = Tensor(net.params[ii].w.dims);
      grads.layers[ii].b = Tensor(net.params[ii].b.dims);
      dw = &grads.layers[ii].w;
      db = &grads.layers[ii].b;
    }
    Tensor din(in.dims);
    switch (l.kind) {
      case LayerKind::Conv:
        detail::conv_backward(l, net.params[ii], in, dcur, dw, db, din);
        break;
      case LayerKind::Relu:
        for (std::size_t j = 0; j < in.v.size(); ++j)
          din.v[j] = in.v[j] > 0.0 ? dcur.v[j] : 0.0;
        break;
      case LayerKind::MaxPool:
        detail::maxpool_backward(l, in, dcur, din);
        break;
      case LayerKind::Flatten:
        din.v = dcur.v;
        break;
      case LayerKind::Dense:
        detail::dense_backward(net.params[ii], in, dcur, dw, db, din);
        break;
      case LayerKind::Softmax:
        detail::softmax_backward(cache.acts[ii + 1], dcur, din);
        break;
    }
    if (static_cast<int>(ii) == net.aux_layer) {
      // Split the concatenated gradient back into trunk and aux parts.
      const std::size_t n = din.dims[0];
      const std::size_t f = din.dims[1] - net.aux_dim;
      Tensor trunk({n, f});
      grads.aux_grad = Tensor({n, net.aux_dim});
      for (std::size_t b = 0; b < n; ++b) {
        std::copy_n(&din.v[b * (f + net.aux_dim)], f, &trunk.v[b * f]);
        std::copy_n(&din.v[b * (f + net.aux_dim) + f], net.aux_dim,
                    &grads.aux_grad.v[b * net.aux_dim]);
      }
      din = std::move(trunk);
    }
    dcur = std::move(din);
  }
  grads.input_grad = std::move(dcur);
  return grads;
}

// ---------------------------------------------------------------------------
// Loss

// Mean cross-entropy of softmax outputs against integer labels. When
// `dprobs` is given it receives dL/dprobs for backward().
inline double cross_entropy(const Tensor& probs, const std::vector<int>& labels,
                            Tensor* dprobs = nullptr) {
  if (probs.dims.size() != 2)
    throw std::invalid_argument("cross_entropy: probs must be (n, classes)");
  const std::size_t n = probs.dims[0], c = probs.dims[1];
  if (labels.size() != n)
    throw std::invalid_argument("cross_entropy: label count mismatch");
  if (dprobs) *dprobs = Tensor(probs.dims);
  double loss = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= c)
      throw std::invalid_argument("cross_entropy: label " + std::to_string(y) +
                                  " out of range [0, " + std::to_string(c) +
                                  ")");
    double p = std::max(probs.v[b * c + y], 1e-300);
    loss -= std::log(p);
    if (dprobs) dprobs->v[b * c + y] = -1.0 / (static_cast<double>(n) * p);
  }
  return loss / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Optimizer

struct TrainConfig {
  std::size_t max_epochs = 30;
  std::size_t mini_batch = 10;
  double learn_rate = 3e-4;
  double head_lr_multiplier = 10.0;  // boosted rate for replacement head
  double momentum = 0.9;
  std::uint64_t seed = 0;
};

// v <- momentum * v - lr_layer * g;  w <- w + v. Head layers use
// learn_rate * head_lr_multiplier. Frozen parameters are untouched.
inline void sgdm_step(NetworkSpec& net, const Gradients& grads,
                      const TrainConfig& cfg) {
  if (grads.layers.size() != net.layers.size())
    throw std::invalid_argument("sgdm_step: gradients do not match network");
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& l = net.layers[i];
    if (!l.has_params() || l.frozen) continue;
    const ParamSet& g = grads.layers[i];
    if (g.w.dims != net.params[i].w.dims || g.b.dims != net.params[i].b.dims)
      throw std::invalid_argument("sgdm_step: gradient shape mismatch at layer " +
                                  std::to_string(i));
    if (!g.w.all_finite() || !g.b.all_finite())
      throw std::runtime_error("sgdm_step: non-finite gradient at layer " +
                               std::to_string(i) + " (" + to_string(l.kind) +
                               "); step aborted");
    const double lr = cfg.learn_rate * (l.head ? cfg.head_lr_multiplier : 1.0);
    auto update = [&](Tensor& w, Tensor& v, const Tensor& gr) {
      for (std::size_t j = 0; j < w.v.size(); ++j) {
        v.v[j] = cfg.momentum * v.v[j] - lr * gr.v[j];
        w.v[j] += v.v[j];
      }
    };
    update(net.params[i].w, net.velocity[i].w, g.w);
    update(net.params[i].b, net.velocity[i].b, g.b);
  }
}

// ---------------------------------------------------------------------------
// Transfer-learning mechanics

// Removes the trailing `remove_count` layers and appends `new_layers`, whose
// last dense layer must emit `num_classes`. Retained parameters are copied
// bit for bit; appended layers get fresh seeded initialization and are
// flagged as head layers.
inline NetworkSpec replace_head(const NetworkSpec& net,
                                std::size_t remove_count,
                                std::vector<LayerSpec> new_layers,
                                std::size_t num_classes, std::uint64_t seed) {
  if (net.layers.size() < 3)
    throw std::invalid_argument("replace_head: network has fewer than 3 layers");
  if (remove_count == 0 || remove_count >= net.layers.size())
    throw std::invalid_argument("replace_head: remove_count must be in [1, layers)");
  std::size_t last_dense = new_layers.size();
  for (std::size_t i = 0; i < new_layers.size(); ++i)
    if (new_layers[i].kind == LayerKind::Dense) last_dense = i;
  if (last_dense == new_layers.size())
    throw std::invalid_argument("replace_head: new head needs a dense layer");
  if (new_layers[last_dense].out_features != num_classes)
    throw std::invalid_argument(
        "replace_head: final dense emits " +
        std::to_string(new_layers[last_dense].out_features) + ", expected " +
        std::to_string(num_classes));

  const std::size_t keep = net.layers.size() - remove_count;
  std::vector<LayerSpec> layers(net.layers.begin(),
                                net.layers.begin() + keep);
  for (LayerSpec& l : new_layers) {
    l.head = true;
    l.frozen = false;
    layers.push_back(l);
  }
  if (net.aux_layer >= 0 && static_cast<std::size_t>(net.aux_layer) >= keep)
    throw std::invalid_argument("replace_head: cannot drop the aux layer");

  NetworkSpec out = build_network(std::move(layers), net.in_dims, seed,
                                  net.aux_layer, net.aux_dim);
  for (std::size_t i = 0; i < keep; ++i) {
    out.layers[i] = net.layers[i];
    out.params[i] = net.params[i];      // bitwise identical
    out.velocity[i] = net.velocity[i];
  }
  return out;
}

// Flags every layer whose index satisfies the predicate as frozen.
inline void freeze_layers(NetworkSpec& net,
                          const std::function<bool(std::size_t)>& predicate) {
  for (std::size_t i = 0; i < net.layers.size(); ++i)
    if (predicate(i)) net.layers[i].frozen = true;
}

// ---------------------------------------------------------------------------
// Training

struct TrainingSet {
  std::vector<Tensor> inputs;            // per-sample (c,h,w) or (features)
  std::vector<int> labels;
  std::vector<std::vector<double>> aux;  // optional, per-sample aux features

  std::size_t size() const { return inputs.size(); }
  bool has_aux() const { return !aux.empty(); }
};

struct EpochStats {
  double train_loss = 0.0;
  double val_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
};

struct History {
  std::vector<EpochStats> epochs;
};

inline int argmax_row(const double* p, std::size_t c) {
  int best = 0;
  for (std::size_t i = 1; i < c; ++i)
    if (p[i] > p[best]) best = static_cast<int>(i);
  return best;  // ties resolve to the lowest index
}

namespace detail {

inline Tensor stack_aux(const TrainingSet& set,
                        const std::vector<std::size_t>& idx,
                        std::size_t aux_dim) {
  Tensor aux({idx.size(), aux_dim});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (set.aux[idx[i]].size() != aux_dim)
      throw std::invalid_argument("aux feature length mismatch");
    std::copy_n(set.aux[idx[i]].data(), aux_dim, &aux.v[i * aux_dim]);
  }
  return aux;
}

}  // namespace detail

// Forward pass over a whole set in mini batches; returns (N, classes) probs.
inline Tensor predict_all(const NetworkSpec& net, const TrainingSet& set,
                          std::size_t mini_batch = 32) {
  if (set.size() == 0) throw std::invalid_argument("predict_all: empty set");
  const std::size_t classes = net.num_classes();
  Tensor out({set.size(), classes});
  for (std::size_t start = 0; start < set.size(); start += mini_batch) {
    std::size_t stop = std::min(start + mini_batch, set.size());
    std::vector<const Tensor*> ptrs;
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < stop; ++i) {
      ptrs.push_back(&set.inputs[i]);
      idx.push_back(i);
    }
    Tensor batch = stack(ptrs);
    Tensor probs;
    if (net.aux_layer >= 0) {
      Tensor aux = detail::stack_aux(set, idx, net.aux_dim);
      probs = forward(net, batch, nullptr, &aux);
    } else {
      probs = forward(net, batch, nullptr);
    }
    std::copy(probs.v.begin(), probs.v.end(), out.v.begin() + start * classes);
  }
  return out;
}

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

inline Evaluation evaluate(const NetworkSpec& net, const TrainingSet& set,
                           std::size_t mini_batch = 32) {
  Tensor probs = predict_all(net, set, mini_batch);
  const std::size_t classes = probs.dims[1];
  Evaluation ev;
  ev.loss = cross_entropy(probs, set.labels);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < set.size(); ++i)
    if (argmax_row(&probs.v[i * classes], classes) == set.labels[i])
      ++hits;
  ev.accuracy = static_cast<double>(hits) / static_cast<double>(set.size());
  return ev;
}

// Epoch loop: seeded shuffle, mini-batches, cross-entropy on the softmax
// output, one validation pass per epoch. Deterministic end to end for a
// fixed (network, corpus, config) triple.
inline History train(NetworkSpec& net, const TrainingSet& train_set,
                     const TrainingSet& val_set, const TrainConfig& cfg) {
  if (train_set.size() == 0)
    throw std::invalid_argument("train: empty corpus");
  if (net.layers.empty() || net.layers.back().kind != LayerKind::Softmax)
    throw std::invalid_argument("train: network must end in softmax");
  if (cfg.mini_batch == 0 || cfg.max_epochs == 0)
    throw std::invalid_argument("train: epochs and batch size must be > 0");
  const std::size_t classes = net.num_classes();
  for (int y : train_set.labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw std::invalid_argument("train: label " + std::to_string(y) +
                                  " outside [0, " + std::to_string(classes) +
                                  ")");
  if ((net.aux_layer >= 0) != train_set.has_aux())
    throw std::invalid_argument(
        "train: aux features must be supplied iff the network declares them");

  History history;
  SplitMix64 shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    shuffle(order, shuffle_rng);
    double loss_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < order.size();
         start += cfg.mini_batch) {
      const std::size_t stop = std::min(start + cfg.mini_batch, order.size());
      std::vector<const Tensor*> ptrs;
      std::vector<std::size_t> idx;
      std::vector<int> labels;
      for (std::size_t i = start; i < stop; ++i) {
        ptrs.push_back(&train_set.inputs[order[i]]);
        idx.push_back(order[i]);
        labels.push_back(train_set.labels[order[i]]);
      }
      Tensor batch = stack(ptrs);
      Cache cache;
      Tensor probs;
      Tensor aux;
      if (net.aux_layer >= 0) {
        aux = detail::stack_aux(train_set, idx, net.aux_dim);
        probs = forward(net, batch, &cache, &aux);
      } else {
        probs = forward(net, batch, &cache);
      }
      Tensor dprobs;
      double loss = cross_entropy(probs, labels, &dprobs);
      loss_sum += loss * static_cast<double>(labels.size());
      for (std::size_t i = 0; i < labels.size(); ++i)
        if (argmax_row(&probs.v[i * classes], classes) == labels[i])
          ++hits;
      Gradients grads = backward(net, cache, dprobs);
      sgdm_step(net, grads, cfg);
    }

    EpochStats stats;
    stats.train_loss = loss_sum / static_cast<double>(train_set.size());
    stats.train_acc =
        static_cast<double>(hits) / static_cast<double>(train_set.size());
    if (val_set.size() > 0) {
      Evaluation ev = evaluate(net, val_set, cfg.mini_batch);
      stats.val_loss = ev.loss;
      stats.val_acc = ev.accuracy;
    }
    history.epochs.push_back(stats);
  }
  return history;
}

// ---------------------------------------------------------------------------
// Reference architecture

// Compact CNN used throughout the pipeline:
//   conv3x3x16 relu maxpool2 conv3x3x32 relu maxpool2 flatten dense64 relu
//   dense(classes) softmax
// With aux_dim > 0 the first dense layer also receives aux features
// (probability vectors from an upstream classifier).
inline NetworkSpec make_mininet(std::size_t in_ch, std::size_t in_h,
                                std::size_t in_w, std::size_t num_classes,
                                std::uint64_t seed, std::size_t aux_dim = 0) {
  std::vector<LayerSpec> layers = {
      LayerSpec::conv(16, 3, 1, 1), LayerSpec::relu(),
      LayerSpec::maxpool(2, 2),     LayerSpec::conv(32, 3, 1, 1),
      LayerSpec::relu(),            LayerSpec::maxpool(2, 2),
      LayerSpec::flatten(),         LayerSpec::dense(64),
      LayerSpec::relu(),            LayerSpec::dense(num_classes),
      LayerSpec::softmax(),
  };
  const int aux_layer = aux_dim > 0 ? 7 : -1;  // the dense64 layer
  return build_network(std::move(layers), {in_ch, in_h, in_w}, seed, aux_layer,
                       aux_dim);
}

// ---------------------------------------------------------------------------
// Checkpoints (versioned binary, little-endian, float32 values)

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t x) {
  unsigned char b[4] = {static_cast<unsigned char>(x),
                        static_cast<unsigned char>(x >> 8),
                        static_cast<unsigned char>(x >> 16),
                        static_cast<unsigned char>(x >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t x) {
  put_u32(os, static_cast<std::uint32_t>(x));
  put_u32(os, static_cast<std::uint32_t>(x >> 32));
}

inline void put_f32(std::ostream& os, float f) {
  std::uint32_t x;
  std::memcpy(&x, &f, 4);
  put_u32(os, x);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("checkpoint: unexpected end of file");
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t get_u64(std::istream& is) {
  std::uint64_t lo = get_u32(is);
  std::uint64_t hi = get_u32(is);
  return lo | (hi << 32);
}

inline float get_f32(std::istream& is) {
  std::uint32_t x = get_u32(is);
  float f;
  std::memcpy(&f, &x, 4);
  return f;
}

inline void put_tensor(std::ostream& os, const Tensor& t) {
  put_u32(os, static_cast<std::uint32_t>(t.dims.size()));
  for (std::size_t d : t.dims) put_u64(os, d);
  for (double x : t.v) put_f32(os, static_cast<float>(x));
}

inline Tensor get_tensor(std::istream& is) {
  std::uint32_t nd = get_u32(is);
  if (nd > 8) throw std::runtime_error("checkpoint: corrupt tensor rank");
  std::vector<std::size_t> dims(nd);
  for (auto& d : dims) d = static_cast<std::size_t>(get_u64(is));
  Tensor t(dims);
  for (double& x : t.v) x = static_cast<double>(get_f32(is));
  return t;
}

inline constexpr std::uint32_t kCheckpointMagic = 0x4E4E504D;  // "MPNN"
inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace detail

inline void save_checkpoint(const NetworkSpec& net,
                            const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  detail::put_u32(os, detail::kCheckpointMagic);
  detail::put_u32(os, detail::kCheckpointVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(net.layers.size()));
  detail::put_u32(os, static_cast<std::uint32_t>(net.in_dims.size()));
  for (std::size_t d : net.in_dims) detail::put_u64(os, d);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& l = net.layers[i];
    detail::put_u32(os, static_cast<std::uint32_t>(l.kind));
    detail::put_u32(os, static_cast<std::uint32_t>(l.out_ch));
    detail::put_u32(os, static_cast<std::uint32_t>(l.kernel));
    detail::put_u32(os, static_cast<std::uint32_t>(l.stride));
    detail::put_u32(os, static_cast<std::uint32_t>(l.pad));
    detail::put_u32(os, static_cast<std::uint32_t>(l.out_features));
    detail::put_u32(os, (l.frozen ? 1u : 0u) | (l.head ? 2u : 0u));
    if (l.has_params()) {
      detail::put_u32(os, 2);
      detail::put_tensor(os, net.params[i].w);
      detail::put_tensor(os, net.params[i].b);
    } else {
      detail::put_u32(os, 0);
    }
  }
}

// `aux_layer`/`aux_dim` re-attach concat wiring that lives outside the
// checkpoint (the cascade descriptor stores it).
inline NetworkSpec load_checkpoint(const std::filesystem::path& path,
                                   int aux_layer = -1,
                                   std::size_t aux_dim = 0) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  if (detail::get_u32(is) != detail::kCheckpointMagic)
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  std::uint32_t version = detail::get_u32(is);
  if (version != detail::kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));
  std::uint32_t layer_count = detail::get_u32(is);
  std::uint32_t in_rank = detail::get_u32(is);
  std::vector<std::size_t> in_dims(in_rank);
  for (auto& d : in_dims) d = static_cast<std::size_t>(detail::get_u64(is));

  std::vector<LayerSpec> layers;
  std::vector<ParamSet> params;
  for (std::uint32_t i = 0; i < layer_count; ++i) {
    LayerSpec l;
    l.kind = static_cast<LayerKind>(detail::get_u32(is));
    l.out_ch = detail::get_u32(is);
    l.kernel = detail::get_u32(is);
    l.stride = detail::get_u32(is);
    l.pad = detail::get_u32(is);
    l.out_features = detail::get_u32(is);
    std::uint32_t flags = detail::get_u32(is);
    l.frozen = flags & 1u;
    l.head = flags & 2u;
    std::uint32_t tensors = detail::get_u32(is);
    ParamSet p;
    if (tensors == 2) {
      p.w = detail::get_tensor(is);
      p.b = detail::get_tensor(is);
    } else if (tensors != 0) {
      throw std::runtime_error("checkpoint: corrupt tensor count");
    }
    layers.push_back(l);
    params.push_back(std::move(p));
  }

  // Rebuild through shape inference, then overwrite with stored weights.
  NetworkSpec net = build_network(layers, in_dims, 0, aux_layer, aux_dim);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    net.layers[i] = layers[i];
    if (!params[i].empty()) {
      if (params[i].w.dims != net.params[i].w.dims ||
          params[i].b.dims != net.params[i].b.dims)
        throw std::runtime_error("checkpoint: tensor shapes disagree with "
                                 "layer structure at layer " +
                                 std::to_string(i));
      net.params[i] = std::move(params[i]);
    }
  }
  return net;
}

inline void write_history_csv(const History& history,
                              const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "epoch,train_loss,val_loss,train_acc,val_acc\n";
  char buf[256];
  for (std::size_t e = 0; e < history.epochs.size(); ++e) {
    const EpochStats& s = history.epochs[e];
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", e + 1,
                  s.train_loss, s.val_loss, s.train_acc, s.val_acc);
    os << buf;
  }
}

}  // namespace mammopipe::nn
