#include "dcc/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace dcc::ops {

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

template <typename T>
void require_rank(const Var<T>& v, std::size_t rank, const char* op) {
  if (v.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + " input, got " +
                     shape_str(v.shape()));
  }
}

template <typename T>
void require_same_tape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.tape != b.tape) throw Error(std::string(op) + ": operands live on different tapes");
}

void check_window(const char* op, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw, int stride,
                  int padding) {
  if (kh < 1 || kw < 1) throw HyperparameterError(std::string(op) + ": kernel size must be >= 1");
  if (stride < 1) throw HyperparameterError(std::string(op) + ": stride must be >= 1");
  if (padding < 0) throw HyperparameterError(std::string(op) + ": padding must be >= 0");
  const auto pp = static_cast<std::size_t>(padding);
  if (kh > h + 2 * pp || kw > w + 2 * pp) {
    throw ShapeError(std::string(op) + ": window " + std::to_string(kh) + "x" + std::to_string(kw) +
                     " does not fit padded input " + std::to_string(h) + "x" + std::to_string(w) + " (padding " +
                     std::to_string(padding) + ")");
  }
}

void check_window(const char* op, std::size_t h, std::size_t w, int k, int stride, int padding) {
  if (k < 1) throw HyperparameterError(std::string(op) + ": kernel size must be >= 1");
  check_window(op, h, w, static_cast<std::size_t>(k), static_cast<std::size_t>(k), stride, padding);
}

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, kh, kw, ho, wo, stride, pad;
  std::size_t cols() const { return cin * kh * kw; }
  std::size_t pixels() const { return ho * wo; }
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const auto P = g.pixels();
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        T* row = col + ((c * g.kh + i) * g.kw + j) * P;
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
          const long ih = static_cast<long>(oh * g.stride + i) - static_cast<long>(g.pad);
          for (std::size_t ow = 0; ow < g.wo; ++ow) {
            const long iw = static_cast<long>(ow * g.stride + j) - static_cast<long>(g.pad);
            const bool inside = ih >= 0 && iw >= 0 && ih < static_cast<long>(g.h) && iw < static_cast<long>(g.w);
            row[oh * g.wo + ow] = inside ? x[(c * g.h + ih) * g.w + iw] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* dx) {
  const auto P = g.pixels();
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const T* row = col + ((c * g.kh + i) * g.kw + j) * P;
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
          const long ih = static_cast<long>(oh * g.stride + i) - static_cast<long>(g.pad);
          if (ih < 0 || ih >= static_cast<long>(g.h)) continue;
          for (std::size_t ow = 0; ow < g.wo; ++ow) {
            const long iw = static_cast<long>(ow * g.stride + j) - static_cast<long>(g.pad);
            if (iw < 0 || iw >= static_cast<long>(g.w)) continue;
            dx[(c * g.h + ih) * g.w + iw] += row[oh * g.wo + ow];
          }
        }
      }
    }
  }
}

}  // namespace

std::size_t conv_out_size(std::size_t in, std::size_t k, int stride, int padding) {
  const std::size_t padded = in + 2 * static_cast<std::size_t>(padding);
  if (k > padded) throw ShapeError("window larger than padded input");
  return (padded - k) / static_cast<std::size_t>(stride) + 1;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  const double m = *std::max_element(p.begin(), p.end());
  double z = 0;
  for (auto& v : p) z += (v = std::exp(v - m));
  for (auto& v : p) v /= z;
  return p;
}

// ---------------------------------------------------------------- conv2d

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, std::optional<std::type_identity_t<Var<T>>> b, Conv2dOptions opt) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d weight");
  require_same_tape(x, w, "conv2d");
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs[1] != ws[1]) {
    throw ShapeError("conv2d: input has " + std::to_string(xs[1]) + " channels but weight expects " +
                     std::to_string(ws[1]));
  }
  check_window("conv2d", xs[2], xs[3], ws[2], ws[3], opt.stride, opt.padding);
  if (b) {
    require_same_tape(x, *b, "conv2d");
    if (b->shape() != Shape{ws[0]}) throw ShapeError("conv2d: bias shape must be [Cout]");
  }

  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], 0, 0,
                 static_cast<std::size_t>(opt.stride), static_cast<std::size_t>(opt.padding)};
  g.ho = conv_out_size(g.h, g.kh, opt.stride, opt.padding);
  g.wo = conv_out_size(g.w, g.kw, opt.stride, opt.padding);

  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  Tensor<T> out({g.n, g.cout, g.ho, g.wo});
  std::vector<T> col(g.cols() * g.pixels());
  CMapRM<T> wmat(wv.data().data(), g.cout, g.cols());
  for (std::size_t n = 0; n < g.n; ++n) {
    im2col(xv.data().data() + n * g.cin * g.h * g.w, g, col.data());
    MapRM<T> omat(out.data().data() + n * g.cout * g.pixels(), g.cout, g.pixels());
    omat.noalias() = wmat * CMapRM<T>(col.data(), g.cols(), g.pixels());
    if (b) {
      const auto& bv = b->value();
      for (std::size_t c = 0; c < g.cout; ++c) omat.row(c).array() += bv[c];
    }
  }

  std::vector<std::size_t> inputs{x.id, w.id};
  if (b) inputs.push_back(b->id);
  const bool has_bias = b.has_value();
  return x.tape->record("conv2d", std::move(inputs), std::move(out), [g, has_bias](Tape<T>& tape, std::size_t self) {
    const auto& in = tape.inputs(self);
    const std::size_t xid = in[0], wid = in[1];
    const auto& dy = tape.grad(self);
    const Tensor<T>& xv = tape.value(xid);
    const Tensor<T>& wv = tape.value(wid);
    const bool need_x = tape.requires_grad(xid);
    const bool need_w = tape.requires_grad(wid);
    const bool need_b = has_bias && tape.requires_grad(in[2]);
    std::vector<T> col(g.cols() * g.pixels());
    std::vector<T> dcol(need_x ? col.size() : 0);
    CMapRM<T> wmat(wv.data().data(), g.cout, g.cols());
    T* dw = need_w ? tape.grad_buffer(wid).data() : nullptr;
    T* dx = need_x ? tape.grad_buffer(xid).data() : nullptr;
    T* db = need_b ? tape.grad_buffer(in[2]).data() : nullptr;
    MatRM<T> dw_local;
    if (need_w) dw_local = MatRM<T>::Zero(g.cout, g.cols());
    for (std::size_t n = 0; n < g.n; ++n) {
      CMapRM<T> dymat(dy.data() + n * g.cout * g.pixels(), g.cout, g.pixels());
      if (need_w) {
        im2col(xv.data().data() + n * g.cin * g.h * g.w, g, col.data());
        dw_local.noalias() += dymat * CMapRM<T>(col.data(), g.cols(), g.pixels()).transpose();
      }
      if (need_x) {
        MapRM<T>(dcol.data(), g.cols(), g.pixels()).noalias() = wmat.transpose() * dymat;
        col2im_add(dcol.data(), g, dx + n * g.cin * g.h * g.w);
      }
      if (need_b) {
        for (std::size_t c = 0; c < g.cout; ++c) db[c] += dymat.row(c).sum();
      }
    }
    if (need_w) {
      const T fault = tape.fault() == GradientFault::kConvWeightGrad ? T(1.5) : T(1);
      for (std::size_t i = 0; i < g.cout * g.cols(); ++i) dw[i] += fault * dw_local.data()[i];
    }
  });
}

// ---------------------------------------------------------------- pooling

template <typename T>
Var<T> maxpool2d(Var<T> x, int k, int stride, int padding) {
  require_rank(x, 4, "maxpool2d");
  const Shape& s = x.shape();
  check_window("maxpool2d", s[2], s[3], k, stride, padding);
  const std::size_t N = s[0], C = s[1], H = s[2], W = s[3];
  const std::size_t Ho = conv_out_size(H, k, stride, padding);
  const std::size_t Wo = conv_out_size(W, k, stride, padding);
  const Tensor<T>& xv = x.value();
  Tensor<T> out({N, C, Ho, Wo});
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* plane = xv.data().data() + nc * H * W;
    for (std::size_t oh = 0; oh < Ho; ++oh) {
      for (std::size_t ow = 0; ow < Wo; ++ow) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_idx = 0;
        bool found = false;
        for (int i = 0; i < k; ++i) {
          const long ih = static_cast<long>(oh) * stride + i - padding;
          if (ih < 0 || ih >= static_cast<long>(H)) continue;
          for (int j = 0; j < k; ++j) {
            const long iw = static_cast<long>(ow) * stride + j - padding;
            if (iw < 0 || iw >= static_cast<long>(W)) continue;
            const std::size_t idx = static_cast<std::size_t>(ih) * W + static_cast<std::size_t>(iw);
            if (!found || plane[idx] > best) {
              best = plane[idx];
              best_idx = idx;
              found = true;
            }
          }
        }
        const std::size_t o = (nc * Ho + oh) * Wo + ow;
        out[o] = best;
        argmax[o] = nc * H * W + best_idx;
      }
    }
  }
  return x.tape->record("maxpool2d", {x.id}, std::move(out), [argmax = std::move(argmax)](Tape<T>& tape, std::size_t self) {
    const std::size_t xid = tape.inputs(self)[0];
    const auto& dy = tape.grad(self);
    auto& dx = tape.grad_buffer(xid);
    for (std::size_t o = 0; o < dy.size(); ++o) dx[argmax[o]] += dy[o];
  });
}

template <typename T>
Var<T> avgpool2d(Var<T> x, int k, int stride) {
  require_rank(x, 4, "avgpool2d");
  const Shape& s = x.shape();
  check_window("avgpool2d", s[2], s[3], k, stride, 0);
  const std::size_t N = s[0], C = s[1], H = s[2], W = s[3];
  const std::size_t Ho = conv_out_size(H, k, stride, 0);
  const std::size_t Wo = conv_out_size(W, k, stride, 0);
  const auto K = static_cast<std::size_t>(k), S = static_cast<std::size_t>(stride);
  const T inv = T(1) / static_cast<T>(K * K);
  const Tensor<T>& xv = x.value();
  Tensor<T> out({N, C, Ho, Wo});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* plane = xv.data().data() + nc * H * W;
    for (std::size_t oh = 0; oh < Ho; ++oh) {
      for (std::size_t ow = 0; ow < Wo; ++ow) {
        T acc = 0;
        for (std::size_t i = 0; i < K; ++i) {
          for (std::size_t j = 0; j < K; ++j) acc += plane[(oh * S + i) * W + ow * S + j];
        }
        out[(nc * Ho + oh) * Wo + ow] = acc * inv;
      }
    }
  }
  return x.tape->record("avgpool2d", {x.id}, std::move(out), [=](Tape<T>& tape, std::size_t self) {
    const std::size_t xid = tape.inputs(self)[0];
    const auto& dy = tape.grad(self);
    auto& dx = tape.grad_buffer(xid);
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      for (std::size_t oh = 0; oh < Ho; ++oh) {
        for (std::size_t ow = 0; ow < Wo; ++ow) {
          const T g = dy[(nc * Ho + oh) * Wo + ow] * inv;
          for (std::size_t i = 0; i < K; ++i) {
            for (std::size_t j = 0; j < K; ++j) dx[nc * H * W + (oh * S + i) * W + ow * S + j] += g;
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> global_avg_pool(Var<T> x) {
  require_rank(x, 4, "global_avg_pool");
  const Shape& s = x.shape();
  const std::size_t N = s[0], C = s[1], HW = s[2] * s[3];
  const Tensor<T>& xv = x.value();
  Tensor<T> out({N, C});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    T acc = 0;
    for (std::size_t i = 0; i < HW; ++i) acc += xv[nc * HW + i];
    out[nc] = acc / static_cast<T>(HW);
  }
  return x.tape->record("global_avg_pool", {x.id}, std::move(out), [=](Tape<T>& tape, std::size_t self) {
    const std::size_t xid = tape.inputs(self)[0];
    const auto& dy = tape.grad(self);
    auto& dx = tape.grad_buffer(xid);
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      const T g = dy[nc] / static_cast<T>(HW);
      for (std::size_t i = 0; i < HW; ++i) dx[nc * HW + i] += g;
    }
  });
}

// ---------------------------------------------------------------- batch norm

namespace {

template <typename T>
void check_bn_shapes(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, const Tensor<T>& rm,
                     const Tensor<T>& rv) {
  require_rank(x, 4, "batchnorm2d");
  const Shape c{x.shape()[1]};
  if (gamma.shape() != c || beta.shape() != c || rm.shape() != c || rv.shape() != c) {
    throw ShapeError("batchnorm2d: gamma/beta/running stats must have shape " + shape_str(c));
  }
}

// Shared backward for y = gamma * xhat + beta with xhat saved.
template <typename T>
void bn_affine_backward(Tape<T>& tape, std::size_t self, const std::vector<T>& xhat, const std::vector<T>& invstd,
                        const Shape& s, bool batch_stats) {
  const auto& in = tape.inputs(self);
  const std::size_t xid = in[0], gid = in[1], bid = in[2];
  const std::size_t N = s[0], C = s[1], HW = s[2] * s[3];
  const auto M = static_cast<T>(N * HW);
  const auto& dy = tape.grad(self);
  const Tensor<T>& gamma = tape.value(gid);
  for (std::size_t c = 0; c < C; ++c) {
    T sum_dy = 0, sum_dy_xhat = 0;
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t base = (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        sum_dy += dy[base + i];
        sum_dy_xhat += dy[base + i] * xhat[base + i];
      }
    }
    if (tape.requires_grad(gid)) tape.grad_buffer(gid)[c] += sum_dy_xhat;
    if (tape.requires_grad(bid)) tape.grad_buffer(bid)[c] += sum_dy;
    if (tape.requires_grad(xid)) {
      auto& dx = tape.grad_buffer(xid);
      const T k = gamma[c] * invstd[c];
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t base = (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) {
          if (batch_stats) {
            dx[base + i] += k * (dy[base + i] - sum_dy / M - xhat[base + i] * sum_dy_xhat / M);
          } else {
            dx[base + i] += k * dy[base + i];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Var<T> batchnorm2d_train(Var<T> x, Var<T> gamma, Var<T> beta, Tensor<T>& running_mean, Tensor<T>& running_var,
                         double momentum, double epsilon) {
  check_bn_shapes(x, gamma, beta, running_mean, running_var);
  const Shape s = x.shape();
  const std::size_t N = s[0], C = s[1], HW = s[2] * s[3];
  const std::size_t M = N * HW;
  const Tensor<T>& xv = x.value();
  Tensor<T> out(s);
  std::vector<T> xhat(xv.size());
  std::vector<T> invstd(C);
  for (std::size_t c = 0; c < C; ++c) {
    double mean = 0;
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t i = 0; i < HW; ++i) mean += xv[(n * C + c) * HW + i];
    }
    mean /= static_cast<double>(M);
    double var = 0;
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t i = 0; i < HW; ++i) {
        const double d = xv[(n * C + c) * HW + i] - mean;
        var += d * d;
      }
    }
    var /= static_cast<double>(M);
    if (!std::isfinite(var)) {
      throw NumericError("batchnorm2d: channel " + std::to_string(c) + " has non-finite batch variance");
    }
    invstd[c] = static_cast<T>(1.0 / std::sqrt(var + epsilon));
    const T g = gamma.value()[c], bta = beta.value()[c];
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t i = 0; i < HW; ++i) {
        const std::size_t idx = (n * C + c) * HW + i;
        xhat[idx] = static_cast<T>(xv[idx] - mean) * invstd[c];
        out[idx] = g * xhat[idx] + bta;
      }
    }
    const double unbiased = M > 1 ? var * static_cast<double>(M) / static_cast<double>(M - 1) : var;
    running_mean[c] = static_cast<T>((1.0 - momentum) * running_mean[c] + momentum * mean);
    running_var[c] = static_cast<T>((1.0 - momentum) * running_var[c] + momentum * unbiased);
  }
  return x.tape->record("batchnorm2d_train", {x.id, gamma.id, beta.id}, std::move(out),
                        [xhat = std::move(xhat), invstd = std::move(invstd), s](Tape<T>& tape, std::size_t self) {
                          bn_affine_backward(tape, self, xhat, invstd, s, true);
                        });
}

template <typename T>
Var<T> batchnorm2d_eval(Var<T> x, Var<T> gamma, Var<T> beta, const Tensor<T>& running_mean,
                        const Tensor<T>& running_var, double epsilon) {
  check_bn_shapes(x, gamma, beta, running_mean, running_var);
  const Shape s = x.shape();
  const std::size_t N = s[0], C = s[1], HW = s[2] * s[3];
  const Tensor<T>& xv = x.value();
  Tensor<T> out(s);
  std::vector<T> xhat(xv.size());
  std::vector<T> invstd(C);
  for (std::size_t c = 0; c < C; ++c) {
    invstd[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[c]) + epsilon));
    const T g = gamma.value()[c], bta = beta.value()[c], m = running_mean[c];
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t i = 0; i < HW; ++i) {
        const std::size_t idx = (n * C + c) * HW + i;
        xhat[idx] = (xv[idx] - m) * invstd[c];
        out[idx] = g * xhat[idx] + bta;
      }
    }
  }
  return x.tape->record("batchnorm2d_eval", {x.id, gamma.id, beta.id}, std::move(out),
                        [xhat = std::move(xhat), invstd = std::move(invstd), s](Tape<T>& tape, std::size_t self) {
                          bn_affine_backward(tape, self, xhat, invstd, s, false);
                        });
}

// ---------------------------------------------------------------- elementwise

template <typename T>
Var<T> relu(Var<T> x) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > T(0) ? xv[i] : T(0);
  return x.tape->record("relu", {x.id}, std::move(out), [](Tape<T>& tape, std::size_t self) {
    const std::size_t xid = tape.inputs(self)[0];
    const auto& xv = tape.value(xid);
    const auto& dy = tape.grad(self);
    auto& dx = tape.grad_buffer(xid);
    for (std::size_t i = 0; i < dy.size(); ++i) {
      if (xv[i] > T(0)) dx[i] += dy[i];
    }
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, std::optional<std::type_identity_t<Var<T>>> b) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear weight");
  require_same_tape(x, w, "linear");
  const std::size_t N = x.shape()[0], Din = x.shape()[1], Dout = w.shape()[0];
  if (w.shape()[1] != Din) {
    throw ShapeError("linear: input has " + std::to_string(Din) + " features but weight expects " +
                     std::to_string(w.shape()[1]));
  }
  if (b && b->shape() != Shape{Dout}) throw ShapeError("linear: bias shape must be [Dout]");
  Tensor<T> out({N, Dout});
  MapRM<T>(out.data().data(), N, Dout).noalias() =
      CMapRM<T>(x.value().data().data(), N, Din) * CMapRM<T>(w.value().data().data(), Dout, Din).transpose();
  if (b) {
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t o = 0; o < Dout; ++o) out[n * Dout + o] += b->value()[o];
    }
  }
  std::vector<std::size_t> inputs{x.id, w.id};
  if (b) inputs.push_back(b->id);
  return x.tape->record("linear", std::move(inputs), std::move(out), [=](Tape<T>& tape, std::size_t self) {
    const auto& in = tape.inputs(self);
    CMapRM<T> dy(tape.grad(self).data(), N, Dout);
    if (tape.requires_grad(in[0])) {
      MapRM<T>(tape.grad_buffer(in[0]).data(), N, Din).noalias() +=
          dy * CMapRM<T>(tape.value(in[1]).data().data(), Dout, Din);
    }
    if (tape.requires_grad(in[1])) {
      MapRM<T>(tape.grad_buffer(in[1]).data(), Dout, Din).noalias() +=
          dy.transpose() * CMapRM<T>(tape.value(in[0]).data().data(), N, Din);
    }
    if (in.size() > 2 && tape.requires_grad(in[2])) {
      auto& db = tape.grad_buffer(in[2]);
      for (std::size_t o = 0; o < Dout; ++o) db[o] += dy.col(o).sum();
    }
  });
}

template <typename T>
Var<T> concat_channels(std::span<const Var<T>> xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& s0 = xs[0].shape();
  if (s0.size() != 4) throw ShapeError("concat_channels: inputs must be rank 4");
  std::size_t total = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> channels;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Shape& s = xs[i].shape();
    require_same_tape(xs[0], xs[i], "concat_channels");
    if (s.size() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3]) {
      throw ShapeError("concat_channels: input " + std::to_string(i) + " has shape " + shape_str(s) +
                       ", incompatible with " + shape_str(s0));
    }
    total += s[1];
    ids.push_back(xs[i].id);
    channels.push_back(s[1]);
  }
  const std::size_t N = s0[0], HW = s0[2] * s0[3];
  Tensor<T> out({N, total, s0[2], s0[3]});
  for (std::size_t n = 0; n < N; ++n) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const auto& v = xs[i].value();
      const std::size_t len = channels[i] * HW;
      std::copy_n(v.data().data() + n * len, len, out.data().data() + (n * total + offset) * HW);
      offset += channels[i];
    }
  }
  return xs[0].tape->record("concat_channels", std::move(ids), std::move(out), [=](Tape<T>& tape, std::size_t self) {
    const auto& in = tape.inputs(self);
    const auto& dy = tape.grad(self);
    std::size_t offset = 0;
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (tape.requires_grad(in[i])) {
        auto& dx = tape.grad_buffer(in[i]);
        const std::size_t len = channels[i] * HW;
        for (std::size_t n = 0; n < N; ++n) {
          const T* src = dy.data() + (n * total + offset) * HW;
          for (std::size_t k = 0; k < len; ++k) dx[n * len + k] += src[k];
        }
      }
      offset += channels[i];
    }
  });
}

template <typename T>
Var<T> slice_channels(Var<T> x, std::size_t begin, std::size_t count) {
  require_rank(x, 4, "slice_channels");
  const Shape& s = x.shape();
  if (count == 0 || begin + count > s[1]) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                     ") outside " + std::to_string(s[1]) + " channels");
  }
  const std::size_t N = s[0], C = s[1], HW = s[2] * s[3];
  Tensor<T> out({N, count, s[2], s[3]});
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(x.value().data().data() + (n * C + begin) * HW, count * HW, out.data().data() + n * count * HW);
  }
  return x.tape->record("slice_channels", {x.id}, std::move(out), [=](Tape<T>& tape, std::size_t self) {
    const std::size_t xid = tape.inputs(self)[0];
    const auto& dy = tape.grad(self);
    auto& dx = tape.grad_buffer(xid);
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t k = 0; k < count * HW; ++k) dx[(n * C + begin) * HW + k] += dy[n * count * HW + k];
    }
  });
}

template <typename T>
Var<T> dropout(Var<T> x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw HyperparameterError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::kEval || rate == 0.0) return x;
  const Tensor<T>& xv = x.value();
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(xv.size());
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    mask[i] = rng.uniform() >= rate ? keep_scale : T(0);
    out[i] = xv[i] * mask[i];
  }
  return x.tape->record("dropout", {x.id}, std::move(out), [mask = std::move(mask)](Tape<T>& tape, std::size_t self) {
    const std::size_t xid = tape.inputs(self)[0];
    const auto& dy = tape.grad(self);
    auto& dx = tape.grad_buffer(xid);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * mask[i];
  });
}

template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t N = logits.shape()[0], K = logits.shape()[1];
  if (labels.size() != N) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(N));
  }
  const Tensor<T>& lv = logits.value();
  std::vector<T> probs(N * K);
  double loss = 0;
  for (std::size_t n = 0; n < N; ++n) {
    if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= K) {
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(labels[n]) + " at index " +
                       std::to_string(n) + " outside [0," + std::to_string(K) + ")");
    }
    const T* row = lv.data().data() + n * K;
    const T m = *std::max_element(row, row + K);
    double z = 0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(static_cast<double>(row[k] - m));
    const double lse = std::log(z) + static_cast<double>(m);
    loss += lse - static_cast<double>(row[labels[n]]);
    for (std::size_t k = 0; k < K; ++k) probs[n * K + k] = static_cast<T>(std::exp(static_cast<double>(row[k]) - lse));
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(loss / static_cast<double>(N)));
  std::vector<int> y(labels.begin(), labels.end());
  return logits.tape->record("softmax_cross_entropy", {logits.id}, std::move(out),
                             [probs = std::move(probs), y = std::move(y), N, K](Tape<T>& tape, std::size_t self) {
                               const std::size_t lid = tape.inputs(self)[0];
                               const T g = tape.grad(self)[0] / static_cast<T>(N);
                               auto& dl = tape.grad_buffer(lid);
                               for (std::size_t n = 0; n < N; ++n) {
                                 for (std::size_t k = 0; k < K; ++k) {
                                   const T onehot = static_cast<int>(k) == y[n] ? T(1) : T(0);
                                   dl[n * K + k] += g * (probs[n * K + k] - onehot);
                                 }
                               }
                             });
}

template <typename T>
Var<T> normalize_channels(Var<T> x, std::span<const double> mean, std::span<const double> stddev) {
  require_rank(x, 4, "normalize_channels");
  const Shape& s = x.shape();
  const std::size_t N = s[0], C = s[1], HW = s[2] * s[3];
  if (mean.size() != C || stddev.size() != C) {
    throw ShapeError("normalize_channels: need " + std::to_string(C) + " per-channel statistics");
  }
  std::vector<T> m(C), sd(C);
  for (std::size_t c = 0; c < C; ++c) {
    if (stddev[c] == 0.0) throw HyperparameterError("normalize_channels: zero standard deviation");
    m[c] = static_cast<T>(mean[c]);
    sd[c] = static_cast<T>(stddev[c]);
  }
  const Tensor<T>& xv = x.value();
  Tensor<T> out(s);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t i = 0; i < HW; ++i) {
        const std::size_t idx = (n * C + c) * HW + i;
        out[idx] = (xv[idx] - m[c]) / sd[c];
      }
    }
  }
  return x.tape->record("normalize_channels", {x.id}, std::move(out), [=](Tape<T>& tape, std::size_t self) {
    const std::size_t xid = tape.inputs(self)[0];
    const auto& dy = tape.grad(self);
    auto& dx = tape.grad_buffer(xid);
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < HW; ++i) {
          const std::size_t idx = (n * C + c) * HW + i;
          dx[idx] += dy[idx] / sd[c];
        }
      }
    }
  });
}

template <typename T>
Var<T> log_mean_softmax(std::span<const Var<T>> logits) {
  if (logits.empty()) throw ShapeError("log_mean_softmax: no inputs");
  const Shape s = logits[0].shape();
  if (s.size() != 2) throw ShapeError("log_mean_softmax: inputs must be [N,K]");
  const std::size_t M = logits.size(), N = s[0], K = s[1];
  std::vector<std::size_t> ids;
  // Member log-probabilities, [M][N*K].
  std::vector<std::vector<double>> logp(M, std::vector<double>(N * K));
  for (std::size_t m = 0; m < M; ++m) {
    if (logits[m].shape() != s) throw ShapeError("log_mean_softmax: member shapes differ");
    require_same_tape(logits[0], logits[m], "log_mean_softmax");
    ids.push_back(logits[m].id);
    const auto& lv = logits[m].value();
    for (std::size_t n = 0; n < N; ++n) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < K; ++k) mx = std::max(mx, static_cast<double>(lv[n * K + k]));
      double z = 0;
      for (std::size_t k = 0; k < K; ++k) z += std::exp(static_cast<double>(lv[n * K + k]) - mx);
      const double lse = mx + std::log(z);
      for (std::size_t k = 0; k < K; ++k) logp[m][n * K + k] = static_cast<double>(lv[n * K + k]) - lse;
    }
  }
  Tensor<T> out({N, K});
  std::vector<double> log_mean(N * K);
  for (std::size_t i = 0; i < N * K; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < M; ++m) mx = std::max(mx, logp[m][i]);
    double z = 0;
    for (std::size_t m = 0; m < M; ++m) z += std::exp(logp[m][i] - mx);
    log_mean[i] = mx + std::log(z) - std::log(static_cast<double>(M));
    out[i] = static_cast<T>(log_mean[i]);
  }
  return logits[0].tape->record(
      "log_mean_softmax", std::move(ids), std::move(out),
      [logp = std::move(logp), log_mean = std::move(log_mean), M, N, K](Tape<T>& tape, std::size_t self) {
        const auto& in = tape.inputs(self);
        const auto& dy = tape.grad(self);
        for (std::size_t m = 0; m < M; ++m) {
          if (!tape.requires_grad(in[m])) continue;
          auto& dl = tape.grad_buffer(in[m]);
          for (std::size_t n = 0; n < N; ++n) {
            // d y_j / d l_i = (1/M) p_i (delta_ij - p_j) / P_j with P the mean probability.
            double inner = 0;
            for (std::size_t j = 0; j < K; ++j) {
              const std::size_t idx = n * K + j;
              inner += static_cast<double>(dy[idx]) * std::exp(logp[m][idx] - log_mean[idx]);
            }
            for (std::size_t i = 0; i < K; ++i) {
              const std::size_t idx = n * K + i;
              const double p = std::exp(logp[m][idx]);
              const double ratio = std::exp(logp[m][idx] - log_mean[idx]);
              dl[idx] += static_cast<T>((static_cast<double>(dy[idx]) * ratio - p * inner) / static_cast<double>(M));
            }
          }
        }
      });
}

template <typename T>
Var<T> mean_of(std::span<const Var<T>> xs) {
  if (xs.empty()) throw ShapeError("mean_of: no inputs");
  const Shape s = xs[0].shape();
  std::vector<std::size_t> ids;
  Tensor<T> out(s);
  for (const auto& x : xs) {
    if (x.shape() != s) throw ShapeError("mean_of: shapes differ");
    require_same_tape(xs[0], x, "mean_of");
    ids.push_back(x.id);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += x.value()[i];
  }
  const T inv = T(1) / static_cast<T>(xs.size());
  for (auto& v : out.values()) v *= inv;
  return xs[0].tape->record("mean_of", std::move(ids), std::move(out), [inv](Tape<T>& tape, std::size_t self) {
    const auto& dy = tape.grad(self);
    for (auto id : tape.inputs(self)) {
      if (!tape.requires_grad(id)) continue;
      auto& dx = tape.grad_buffer(id);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * inv;
    }
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_tape(a, b, "add");
  if (a.shape() != b.shape()) throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return a.tape->record("add", {a.id, b.id}, std::move(out), [](Tape<T>& tape, std::size_t self) {
    const auto& dy = tape.grad(self);
    for (auto id : tape.inputs(self)) {
      if (!tape.requires_grad(id)) continue;
      auto& dx = tape.grad_buffer(id);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_tape(a, b, "mul");
  if (a.shape() != b.shape()) throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return a.tape->record("mul", {a.id, b.id}, std::move(out), [](Tape<T>& tape, std::size_t self) {
    const auto& in = tape.inputs(self);
    const auto& dy = tape.grad(self);
    for (std::size_t k = 0; k < 2; ++k) {
      if (!tape.requires_grad(in[k])) continue;
      const auto& other = tape.value(in[1 - k]);
      auto& dx = tape.grad_buffer(in[k]);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * other[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T c) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * c;
  return a.tape->record("scale", {a.id}, std::move(out), [c](Tape<T>& tape, std::size_t self) {
    const std::size_t id = tape.inputs(self)[0];
    const auto& dy = tape.grad(self);
    auto& dx = tape.grad_buffer(id);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * c;
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  T acc = 0;
  for (auto v : a.value().values()) acc += v;
  return a.tape->record("sum", {a.id}, Tensor<T>::scalar(acc), [](Tape<T>& tape, std::size_t self) {
    const std::size_t id = tape.inputs(self)[0];
    const T g = tape.grad(self)[0];
    for (auto& v : tape.grad_buffer(id)) v += g;
  });
}

#define DCC_INSTANTIATE_OPS(T)                                                                                \
  template Var<T> conv2d(Var<T>, Var<T>, std::optional<Var<T>>, Conv2dOptions);                              \
  template Var<T> maxpool2d(Var<T>, int, int, int);                                                          \
  template Var<T> avgpool2d(Var<T>, int, int);                                                               \
  template Var<T> global_avg_pool(Var<T>);                                                                   \
  template Var<T> batchnorm2d_train(Var<T>, Var<T>, Var<T>, Tensor<T>&, Tensor<T>&, double, double);         \
  template Var<T> batchnorm2d_eval(Var<T>, Var<T>, Var<T>, const Tensor<T>&, const Tensor<T>&, double);      \
  template Var<T> relu(Var<T>);                                                                              \
  template Var<T> linear(Var<T>, Var<T>, std::optional<Var<T>>);                                             \
  template Var<T> concat_channels(std::span<const Var<T>>);                                                  \
  template Var<T> slice_channels(Var<T>, std::size_t, std::size_t);                                          \
  template Var<T> dropout(Var<T>, double, Mode, Rng&);                                                       \
  template Var<T> softmax_cross_entropy(Var<T>, std::span<const int>);                                       \
  template Var<T> normalize_channels(Var<T>, std::span<const double>, std::span<const double>);              \
  template Var<T> log_mean_softmax(std::span<const Var<T>>);                                                 \
  template Var<T> mean_of(std::span<const Var<T>>);                                                          \
  template Var<T> add(Var<T>, Var<T>);                                                                       \
  template Var<T> mul(Var<T>, Var<T>);                                                                       \
  template Var<T> scale(Var<T>, T);                                                                          \
  template Var<T> sum(Var<T>);

DCC_INSTANTIATE_OPS(float)
DCC_INSTANTIATE_OPS(double)

#undef DCC_INSTANTIATE_OPS

}  // namespace dcc::ops
