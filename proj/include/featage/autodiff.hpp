#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "featage/tensor.hpp"

namespace featage::num {

// Reverse-mode tape. Ops append a node holding the forward value and a
// closure that scatters the node's gradient back into its inputs. backward()
// replays nodes in exact reverse recording order, seeds d(loss)/d(loss) = 1,
// and leaves the tape consumed; record a fresh tape per step.
//
// Layout conventions:
//   matrices        [rows, cols], row-major
//   images          [n, h, w, c]
//   conv kernels    [kh, kw, c_in, c_out]
//   transpose-conv  [kh, kw, c_out, c_in]  (the op is the exact adjoint of a
//                                           stride-s conv, so the kernel keeps
//                                           the underlying conv's layout)
template <typename S>
class TapeT {
 public:
  using Tensor = TensorT<S>;
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatMap = Eigen::Map<Mat>;
  using ConstMatMap = Eigen::Map<const Mat>;

  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  // ---- recording -------------------------------------------------------

  Var leaf(Tensor value, bool requires_grad = true, std::string name = "leaf") {
    return push(std::move(value), {}, nullptr, std::move(name), requires_grad);
  }

  // out[r,c] = sum_p x[r,p] w[p,c] + b[c]
  Var affine(Var x, Var w, Var b) {
    const Tensor& X = value(x);
    const Tensor& W = value(w);
    const Tensor& B = value(b);
    if (X.ndim() != 2 || W.ndim() != 2 || X.dim(1) != W.dim(0))
      throw std::invalid_argument("affine: input " + X.shape_str() + " incompatible with weights " + W.shape_str());
    if (B.ndim() != 1 || B.dim(0) != W.dim(1))
      throw std::invalid_argument("affine: bias " + B.shape_str() + " incompatible with weights " + W.shape_str());
    const int n = X.dim(0), p = X.dim(1), q = W.dim(1);
    Tensor out({n, q});
    {
      ConstMatMap xm(X.data.data(), n, p), wm(W.data.data(), p, q);
      MatMap om(out.data.data(), n, q);
      om.noalias() = xm * wm;
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < q; ++c) out.at(r, c) += B.at(c);
    }
    auto back = [x, w, b, n, p, q](TapeT& t, int self) {
      const Tensor& g = t.node(self).grad;
      ConstMatMap gm(g.data.data(), n, q);
      if (t.needs_grad(x)) {
        ConstMatMap wm(t.value(w).data.data(), p, q);
        MatMap gx(t.node(x.id).grad.data.data(), n, p);
        gx.noalias() += gm * wm.transpose();
      }
      if (t.needs_grad(w)) {
        ConstMatMap xm(t.value(x).data.data(), n, p);
        MatMap gw(t.node(w.id).grad.data.data(), p, q);
        gw.noalias() += xm.transpose() * gm;
      }
      if (t.needs_grad(b)) {
        Tensor& gb = t.node(b.id).grad;
        for (int r = 0; r < n; ++r)
          for (int c = 0; c < q; ++c) gb.at(c) += g.at(r, c);
      }
    };
    return push(std::move(out), {x, w, b}, back, "affine");
  }

  Var leaky_relu(Var x, S slope) {
    const Tensor& X = value(x);
    if (!X.all_finite()) throw std::invalid_argument("leaky_relu: non-finite input");
    Tensor out = X;
    for (S& v : out.data)
      if (v < S(0)) v *= slope;
    auto back = [x, slope](TapeT& t, int self) {
      if (!t.needs_grad(x)) return;
      const Tensor& g = t.node(self).grad;
      const Tensor& X = t.value(x);
      Tensor& gx = t.node(x.id).grad;
      for (size_t i = 0; i < g.data.size(); ++i)
        gx.data[i] += X.data[i] >= S(0) ? g.data[i] : g.data[i] * slope;
    };
    return push(std::move(out), {x}, back, "leaky_relu");
  }

  // Per-sample, per-channel standardization over the spatial extent with a
  // learned gain/shift per channel. Biased variance, epsilon inside the sqrt.
  Var instance_norm(Var x, Var gain, Var shift, S eps = S(1e-5)) {
    const Tensor& X = value(x);
    if (X.ndim() != 4)
      throw std::invalid_argument("instance_norm: expected [n,h,w,c] input, got " + X.shape_str());
    const int n = X.dim(0), h = X.dim(1), w = X.dim(2), c = X.dim(3);
    const int m = h * w;
    if (m < 2) throw std::invalid_argument("instance_norm: spatial extent must be at least 2, got " +
                                           std::to_string(h) + "x" + std::to_string(w));
    const Tensor& G = value(gain);
    const Tensor& Sh = value(shift);
    if (G.ndim() != 1 || G.dim(0) != c || Sh.ndim() != 1 || Sh.dim(0) != c)
      throw std::invalid_argument("instance_norm: gain/shift must be [" + std::to_string(c) + "]");

    Tensor out(X.shape);
    auto stats = std::make_shared<std::vector<S>>(static_cast<size_t>(n) * c * 2);  // mean, inv per (n,c)
    for (int ni = 0; ni < n; ++ni) {
      for (int ci = 0; ci < c; ++ci) {
        double mu = 0;
        for (int s = 0; s < m; ++s) mu += X.data[(static_cast<size_t>(ni) * m + s) * c + ci];
        mu /= m;
        double var = 0;
        for (int s = 0; s < m; ++s) {
          double d = X.data[(static_cast<size_t>(ni) * m + s) * c + ci] - mu;
          var += d * d;
        }
        var /= m;
        double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
        (*stats)[(static_cast<size_t>(ni) * c + ci) * 2] = static_cast<S>(mu);
        (*stats)[(static_cast<size_t>(ni) * c + ci) * 2 + 1] = static_cast<S>(inv);
        for (int s = 0; s < m; ++s) {
          size_t idx = (static_cast<size_t>(ni) * m + s) * c + ci;
          out.data[idx] = G.at(ci) * static_cast<S>((X.data[idx] - mu) * inv) + Sh.at(ci);
        }
      }
    }
    auto back = [x, gain, shift, n, c, m, stats](TapeT& t, int self) {
      const Tensor& g = t.node(self).grad;
      const Tensor& X = t.value(x);
      const Tensor& G = t.value(gain);
      const bool want_x = t.needs_grad(x);
      const bool want_g = t.needs_grad(gain);
      const bool want_s = t.needs_grad(shift);
      for (int ni = 0; ni < n; ++ni) {
        for (int ci = 0; ci < c; ++ci) {
          const S mu = (*stats)[(static_cast<size_t>(ni) * c + ci) * 2];
          const S inv = (*stats)[(static_cast<size_t>(ni) * c + ci) * 2 + 1];
          double sum_gxh = 0, sum_gxh_xc = 0, sum_g = 0;
          for (int s = 0; s < m; ++s) {
            size_t idx = (static_cast<size_t>(ni) * m + s) * c + ci;
            double gxh = static_cast<double>(g.data[idx]) * G.at(ci);
            double xc = X.data[idx] - mu;
            sum_gxh += gxh;
            sum_gxh_xc += gxh * xc;
            sum_g += g.data[idx];
          }
          if (want_g) {
            double acc = 0;
            for (int s = 0; s < m; ++s) {
              size_t idx = (static_cast<size_t>(ni) * m + s) * c + ci;
              acc += static_cast<double>(g.data[idx]) * (X.data[idx] - mu) * inv;
            }
            t.node(gain.id).grad.at(ci) += static_cast<S>(acc);
          }
          if (want_s) t.node(shift.id).grad.at(ci) += static_cast<S>(sum_g);
          if (want_x) {
            const double gvar = sum_gxh_xc * (-0.5) * inv * inv * inv;
            const double gmu = -static_cast<double>(inv) * sum_gxh;
            Tensor& gx = t.node(x.id).grad;
            for (int s = 0; s < m; ++s) {
              size_t idx = (static_cast<size_t>(ni) * m + s) * c + ci;
              double xc = X.data[idx] - mu;
              gx.data[idx] += static_cast<S>(static_cast<double>(g.data[idx]) * G.at(ci) * inv +
                                            gvar * 2.0 * xc / m + gmu / m);
            }
          }
        }
      }
    };
    return push(std::move(out), {x, gain, shift}, back, "instance_norm");
  }

  // Zero-padded "same" convolution: output spatial extent ceil(in/stride).
  Var conv2d(Var x, Var k, int stride) {
    const Tensor& X = value(x);
    const Tensor& K = value(k);
    check_conv_args("conv2d", X, K, stride);
    const int n = X.dim(0), h = X.dim(1), w = X.dim(2), ci = X.dim(3);
    const int kh = K.dim(0), kw = K.dim(1), co = K.dim(3);
    if (K.dim(2) != ci)
      throw std::invalid_argument("conv2d: kernel " + K.shape_str() + " expects " +
                                  std::to_string(K.dim(2)) + " input channels, input " + X.shape_str());
    ConvGeom geo = same_geometry("conv2d", h, w, kh, kw, stride);
    auto cols = std::make_shared<Mat>();
    im2col(X, kh, kw, stride, geo, *cols);
    Tensor out({n, geo.oh, geo.ow, co});
    {
      ConstMatMap km(K.data.data(), kh * kw * ci, co);
      MatMap om(out.data.data(), static_cast<Eigen::Index>(n) * geo.oh * geo.ow, co);
      om.noalias() = (*cols) * km;
    }
    auto back = [x, k, n, h, w, ci, kh, kw, co, stride, geo, cols](TapeT& t, int self) {
      const Tensor& g = t.node(self).grad;
      ConstMatMap gm(g.data.data(), static_cast<Eigen::Index>(n) * geo.oh * geo.ow, co);
      if (t.needs_grad(k)) {
        MatMap gk(t.node(k.id).grad.data.data(), kh * kw * ci, co);
        gk.noalias() += cols->transpose() * gm;
      }
      if (t.needs_grad(x)) {
        ConstMatMap km(t.value(k).data.data(), kh * kw * ci, co);
        Mat gcols = gm * km.transpose();
        col2im_add(gcols, kh, kw, stride, geo, t.node(x.id).grad);
      }
    };
    return push(std::move(out), {x, k}, back, "conv2d");
  }

  // Exact adjoint of conv2d at the same stride; spatial extent is multiplied
  // by the stride. Kernel is [kh, kw, c_out, c_in].
  Var conv2d_transpose(Var x, Var k, int stride) {
    const Tensor& U = value(x);
    const Tensor& K = value(k);
    check_conv_args("conv2d_transpose", U, K, stride);
    const int n = U.dim(0), h = U.dim(1), w = U.dim(2), cb = U.dim(3);
    const int kh = K.dim(0), kw = K.dim(1), ca = K.dim(2);
    if (K.dim(3) != cb)
      throw std::invalid_argument("conv2d_transpose: kernel " + K.shape_str() + " expects " +
                                  std::to_string(K.dim(3)) + " input channels, input " + U.shape_str());
    const int H = h * stride, W = w * stride;
    ConvGeom geo = same_geometry("conv2d_transpose", H, W, kh, kw, stride);
    // geo maps the [n,H,W,ca] grid down to [n,h,w,cb]; forward here is the adjoint.
    Tensor out({n, H, W, ca});
    {
      ConstMatMap um(U.data.data(), static_cast<Eigen::Index>(n) * h * w, cb);
      ConstMatMap km(K.data.data(), kh * kw * ca, cb);
      Mat cols = um * km.transpose();
      col2im_add(cols, kh, kw, stride, geo, out);
    }
    auto back = [x, k, n, h, w, cb, kh, kw, ca, stride, geo](TapeT& t, int self) {
      const Tensor& g = t.node(self).grad;
      Mat gcols;
      im2col(g, kh, kw, stride, geo, gcols);
      if (t.needs_grad(x)) {
        ConstMatMap km(t.value(k).data.data(), kh * kw * ca, cb);
        MatMap gu(t.node(x.id).grad.data.data(), static_cast<Eigen::Index>(n) * h * w, cb);
        gu.noalias() += gcols * km;
      }
      if (t.needs_grad(k)) {
        ConstMatMap um(t.value(x).data.data(), static_cast<Eigen::Index>(n) * h * w, cb);
        MatMap gk(t.node(k.id).grad.data.data(), kh * kw * ca, cb);
        gk.noalias() += gcols.transpose() * um;
      }
    };
    return push(std::move(out), {x, k}, back, "conv2d_transpose");
  }

  Var bias_add_channels(Var x, Var b) {
    const Tensor& X = value(x);
    const Tensor& B = value(b);
    if (X.ndim() != 4 || B.ndim() != 1 || B.dim(0) != X.dim(3))
      throw std::invalid_argument("bias_add_channels: input " + X.shape_str() + " vs bias " + B.shape_str());
    const int c = X.dim(3);
    Tensor out = X;
    const int64_t pixels = X.numel() / c;
    for (int64_t p = 0; p < pixels; ++p)
      for (int ci = 0; ci < c; ++ci) out.data[p * c + ci] += B.at(ci);
    auto back = [x, b, c, pixels](TapeT& t, int self) {
      const Tensor& g = t.node(self).grad;
      if (t.needs_grad(x)) {
        Tensor& gx = t.node(x.id).grad;
        for (size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i];
      }
      if (t.needs_grad(b)) {
        Tensor& gb = t.node(b.id).grad;
        for (int64_t p = 0; p < pixels; ++p)
          for (int ci = 0; ci < c; ++ci) gb.at(ci) += g.data[p * c + ci];
      }
    };
    return push(std::move(out), {x, b}, back, "bias_add_channels");
  }

  Var concat_cols(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.ndim() != 2 || B.ndim() != 2 || A.dim(0) != B.dim(0))
      throw std::invalid_argument("concat_cols: " + A.shape_str() + " vs " + B.shape_str());
    const int n = A.dim(0), wa = A.dim(1), wb = B.dim(1);
    Tensor out({n, wa + wb});
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < wa; ++c) out.at(r, c) = A.at(r, c);
      for (int c = 0; c < wb; ++c) out.at(r, wa + c) = B.at(r, c);
    }
    auto back = [a, b, n, wa, wb](TapeT& t, int self) {
      const Tensor& g = t.node(self).grad;
      if (t.needs_grad(a)) {
        Tensor& ga = t.node(a.id).grad;
        for (int r = 0; r < n; ++r)
          for (int c = 0; c < wa; ++c) ga.at(r, c) += g.at(r, c);
      }
      if (t.needs_grad(b)) {
        Tensor& gb = t.node(b.id).grad;
        for (int r = 0; r < n; ++r)
          for (int c = 0; c < wb; ++c) gb.at(r, c) += g.at(r, wa + c);
      }
    };
    return push(std::move(out), {a, b}, back, "concat_cols");
  }

  Var add(Var a, Var b) { return elementwise2("add", a, b,
      [](S x, S y) { return x + y; },
      [](S, S, S g) { return std::pair<S, S>(g, g); }); }

  Var sub(Var a, Var b) { return elementwise2("sub", a, b,
      [](S x, S y) { return x - y; },
      [](S, S, S g) { return std::pair<S, S>(g, -g); }); }

  Var mul(Var a, Var b) { return elementwise2("mul", a, b,
      [](S x, S y) { return x * y; },
      [](S x, S y, S g) { return std::pair<S, S>(g * y, g * x); }); }

  Var scale(Var x, S c) {
    Tensor out = value(x);
    for (S& v : out.data) v *= c;
    auto back = [x, c](TapeT& t, int self) {
      if (!t.needs_grad(x)) return;
      const Tensor& g = t.node(self).grad;
      Tensor& gx = t.node(x.id).grad;
      for (size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i] * c;
    };
    return push(std::move(out), {x}, back, "scale");
  }

  Var abs(Var x) {
    Tensor out = value(x);
    for (S& v : out.data) v = v < S(0) ? -v : v;
    auto back = [x](TapeT& t, int self) {
      if (!t.needs_grad(x)) return;
      const Tensor& g = t.node(self).grad;
      const Tensor& X = t.value(x);
      Tensor& gx = t.node(x.id).grad;
      for (size_t i = 0; i < g.data.size(); ++i) {
        if (X.data[i] > S(0)) gx.data[i] += g.data[i];
        else if (X.data[i] < S(0)) gx.data[i] -= g.data[i];
      }
    };
    return push(std::move(out), {x}, back, "abs");
  }

  Var sigmoid(Var x) {
    Tensor out = value(x);
    for (S& v : out.data) v = S(1) / (S(1) + std::exp(-v));
    auto vals = std::make_shared<Tensor>(out);
    auto back = [x, vals](TapeT& t, int self) {
      if (!t.needs_grad(x)) return;
      const Tensor& g = t.node(self).grad;
      Tensor& gx = t.node(x.id).grad;
      for (size_t i = 0; i < g.data.size(); ++i) {
        S y = vals->data[i];
        gx.data[i] += g.data[i] * y * (S(1) - y);
      }
    };
    return push(std::move(out), {x}, back, "sigmoid");
  }

  Var reshape(Var x, std::vector<int> shape) {
    const Tensor& X = value(x);
    if (Tensor::count(shape) != X.numel())
      throw std::invalid_argument("reshape: " + X.shape_str() + " to " + Tensor::shape_str(shape) +
                                  " changes element count");
    Tensor out;
    out.shape = std::move(shape);
    out.data = X.data;
    auto back = [x](TapeT& t, int self) {
      if (!t.needs_grad(x)) return;
      const Tensor& g = t.node(self).grad;
      Tensor& gx = t.node(x.id).grad;
      for (size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i];
    };
    return push(std::move(out), {x}, back, "reshape");
  }

  Var reduce_sum(Var x) {
    const Tensor& X = value(x);
    double acc = 0;
    for (S v : X.data) acc += v;
    Tensor out({1});
    out.at(0) = static_cast<S>(acc);
    auto back = [x](TapeT& t, int self) {
      if (!t.needs_grad(x)) return;
      const S g = t.node(self).grad.at(0);
      Tensor& gx = t.node(x.id).grad;
      for (S& v : gx.data) v += g;
    };
    return push(std::move(out), {x}, back, "reduce_sum");
  }

  // Rows rescaled to unit L2 norm.
  Var l2_normalize_rows(Var x) {
    const Tensor& X = value(x);
    if (X.ndim() != 2) throw std::invalid_argument("l2_normalize_rows: expected matrix, got " + X.shape_str());
    const int n = X.dim(0), d = X.dim(1);
    Tensor out(X.shape);
    auto norms = std::make_shared<std::vector<S>>(n);
    for (int r = 0; r < n; ++r) {
      double s = 0;
      for (int c = 0; c < d; ++c) s += static_cast<double>(X.at(r, c)) * X.at(r, c);
      double nrm = std::sqrt(s);
      if (nrm < 1e-10)
        throw std::invalid_argument("l2_normalize_rows: row " + std::to_string(r) + " has near-zero norm");
      (*norms)[r] = static_cast<S>(nrm);
      for (int c = 0; c < d; ++c) out.at(r, c) = static_cast<S>(X.at(r, c) / nrm);
    }
    auto yvals = std::make_shared<Tensor>(out);
    auto back = [x, n, d, norms, yvals](TapeT& t, int self) {
      if (!t.needs_grad(x)) return;
      const Tensor& g = t.node(self).grad;
      Tensor& gx = t.node(x.id).grad;
      for (int r = 0; r < n; ++r) {
        double dot = 0;
        for (int c = 0; c < d; ++c) dot += static_cast<double>(g.at(r, c)) * yvals->at(r, c);
        for (int c = 0; c < d; ++c)
          gx.at(r, c) += static_cast<S>((g.at(r, c) - dot * yvals->at(r, c)) / (*norms)[r]);
      }
    };
    return push(std::move(out), {x}, back, "l2_normalize_rows");
  }

  // Batch mean of per-image total variation: the sum of squared forward
  // differences over rows and columns, valid offsets only (a border pixel
  // contributes no difference past the edge).
  Var tv_loss(Var x) {
    const Tensor& X = value(x);
    if (X.ndim() != 4) throw std::invalid_argument("tv_loss: expected [n,h,w,c] input, got " + X.shape_str());
    const int n = X.dim(0), h = X.dim(1), w = X.dim(2), c = X.dim(3);
    double acc = 0;
    for (int ni = 0; ni < n; ++ni)
      for (int r = 0; r < h; ++r)
        for (int col = 0; col < w; ++col)
          for (int ch = 0; ch < c; ++ch) {
            const auto& t = X;
            if (r + 1 < h) {
              double d = static_cast<double>(t.at(ni, r + 1, col, ch)) - t.at(ni, r, col, ch);
              acc += d * d;
            }
            if (col + 1 < w) {
              double d = static_cast<double>(t.at(ni, r, col + 1, ch)) - t.at(ni, r, col, ch);
              acc += d * d;
            }
          }
    Tensor out({1});
    out.at(0) = static_cast<S>(acc / n);
    auto back = [x, n, h, w, c](TapeT& t, int self) {
      if (!t.needs_grad(x)) return;
      const S g = t.node(self).grad.at(0);
      const Tensor& X = t.value(x);
      Tensor& gx = t.node(x.id).grad;
      const S f = g * S(2) / static_cast<S>(n);
      for (int ni = 0; ni < n; ++ni)
        for (int r = 0; r < h; ++r)
          for (int col = 0; col < w; ++col)
            for (int ch = 0; ch < c; ++ch) {
              if (r + 1 < h) {
                S d = X.at(ni, r + 1, col, ch) - X.at(ni, r, col, ch);
                gx.at(ni, r + 1, col, ch) += f * d;
                gx.at(ni, r, col, ch) -= f * d;
              }
              if (col + 1 < w) {
                S d = X.at(ni, r, col + 1, ch) - X.at(ni, r, col, ch);
                gx.at(ni, r, col + 1, ch) += f * d;
                gx.at(ni, r, col, ch) -= f * d;
              }
            }
    };
    return push(std::move(out), {x}, back, "tv_loss");
  }

  // Mean cross-entropy of row-wise softmax against integer labels.
  Var softmax_cross_entropy(Var logits, std::vector<int> labels) {
    const Tensor& L = value(logits);
    if (L.ndim() != 2) throw std::invalid_argument("softmax_cross_entropy: expected matrix, got " + L.shape_str());
    const int n = L.dim(0), C = L.dim(1);
    if (static_cast<int>(labels.size()) != n)
      throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(labels.size()) +
                                  " labels for " + std::to_string(n) + " rows");
    for (int lb : labels)
      if (lb < 0 || lb >= C)
        throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(lb) +
                                    " outside [0," + std::to_string(C) + ")");
    auto probs = std::make_shared<Tensor>(L.shape);
    double loss = 0;
    for (int r = 0; r < n; ++r) {
      double mx = L.at(r, 0);
      for (int c = 1; c < C; ++c) mx = std::max(mx, static_cast<double>(L.at(r, c)));
      double z = 0;
      for (int c = 0; c < C; ++c) z += std::exp(static_cast<double>(L.at(r, c)) - mx);
      for (int c = 0; c < C; ++c)
        probs->at(r, c) = static_cast<S>(std::exp(static_cast<double>(L.at(r, c)) - mx) / z);
      loss -= std::log(std::max(static_cast<double>(probs->at(r, labels[r])), 1e-300));
    }
    Tensor out({1});
    out.at(0) = static_cast<S>(loss / n);
    auto lbl = std::make_shared<std::vector<int>>(std::move(labels));
    auto back = [logits, n, C, probs, lbl](TapeT& t, int self) {
      if (!t.needs_grad(logits)) return;
      const S g = t.node(self).grad.at(0);
      Tensor& gx = t.node(logits.id).grad;
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < C; ++c) {
          S p = probs->at(r, c) - (c == (*lbl)[r] ? S(1) : S(0));
          gx.at(r, c) += g * p / static_cast<S>(n);
        }
    };
    return push(std::move(out), {logits}, back, "softmax_cross_entropy");
  }

  // ---- replay ------------------------------------------------------------

  void backward(Var loss) {
    if (consumed_)
      throw std::runtime_error("tape: backward called twice without re-recording");
    if (!loss.valid() || loss.id >= size())
      throw std::invalid_argument("tape: unknown variable passed to backward");
    if (value(loss).numel() != 1)
      throw std::invalid_argument("tape: backward requires a scalar, got " + value(loss).shape_str());
    consumed_ = true;
    trace_.clear();
    nodes_[loss.id].grad.at(0) = S(1);
    nodes_[loss.id].touched = true;
    for (int i = loss.id; i >= 0; --i) {
      Node& nd = nodes_[i];
      if (!nd.touched) continue;
      if (!nd.backprop) continue;
      trace_.push_back(nd.op);
      for (Var in : nd.inputs) nodes_[in.id].touched = true;
      nd.backprop(*this, i);
    }
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const Tensor& grad(Var v) const {
    if (!consumed_) throw std::runtime_error("tape: gradients read before backward");
    return nodes_.at(v.id).grad;
  }

  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }
  int size() const { return static_cast<int>(nodes_.size()); }
  bool consumed() const { return consumed_; }

  // Op names in recording order / in the order backward visited them.
  std::vector<std::string> recorded_ops() const {
    std::vector<std::string> out;
    for (const Node& n : nodes_)
      if (n.backprop) out.push_back(n.op);
    return out;
  }
  const std::vector<std::string>& backward_trace() const { return trace_; }

  void reset() {
    nodes_.clear();
    trace_.clear();
    consumed_ = false;
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<Var> inputs;
    std::function<void(TapeT&, int)> backprop;
    std::string op;
    bool needs_grad = false;
    bool touched = false;
  };

  struct ConvGeom {
    int n, h, w, c;  // padded-side grid
    int oh, ow, pt, pl;
  };

  Node& node(int id) { return nodes_.at(id); }

  Var push(Tensor value, std::vector<Var> inputs, std::function<void(TapeT&, int)> back,
           std::string op, bool leaf_requires_grad = true) {
    if (consumed_)
      throw std::runtime_error("tape: recording on a consumed tape; reset() or build a fresh one");
    Node nd;
    nd.grad = Tensor(value.shape);
    nd.value = std::move(value);
    nd.inputs = std::move(inputs);
    nd.backprop = std::move(back);
    nd.op = std::move(op);
    if (nd.inputs.empty() && !nd.backprop) {
      nd.needs_grad = leaf_requires_grad;
    } else {
      for (Var in : nd.inputs) {
        if (!in.valid() || in.id >= size())
          throw std::invalid_argument(nd.op + ": input variable not on this tape");
        nd.needs_grad = nd.needs_grad || nodes_[in.id].needs_grad;
      }
    }
    nodes_.push_back(std::move(nd));
    return Var{size() - 1};
  }

  static void check_conv_args(const char* op, const Tensor& X, const Tensor& K, int stride) {
    if (X.ndim() != 4)
      throw std::invalid_argument(std::string(op) + ": expected [n,h,w,c] input, got " + X.shape_str());
    if (K.ndim() != 4)
      throw std::invalid_argument(std::string(op) + ": expected 4-d kernel, got " + K.shape_str());
    if (stride < 1) throw std::invalid_argument(std::string(op) + ": stride must be >= 1");
  }

  static ConvGeom same_geometry(const char* op, int h, int w, int kh, int kw, int s) {
    ConvGeom g;
    g.h = h;
    g.w = w;
    g.oh = (h + s - 1) / s;
    g.ow = (w + s - 1) / s;
    int pad_h = std::max((g.oh - 1) * s + kh - h, 0);
    int pad_w = std::max((g.ow - 1) * s + kw - w, 0);
    g.pt = pad_h / 2;
    g.pl = pad_w / 2;
    if (kh > h + pad_h || kw > w + pad_w)
      throw std::invalid_argument(std::string(op) + ": kernel " + std::to_string(kh) + "x" +
                                  std::to_string(kw) + " exceeds padded input");
    return g;
  }

  // Patches of X laid out as [n*oh*ow, kh*kw*c]; zero outside the input.
  static void im2col(const Tensor& X, int kh, int kw, int s, const ConvGeom& geo, Mat& cols) {
    const int n = X.dim(0), h = X.dim(1), w = X.dim(2), c = X.dim(3);
    cols.setZero(static_cast<Eigen::Index>(n) * geo.oh * geo.ow, static_cast<Eigen::Index>(kh) * kw * c);
    for (int ni = 0; ni < n; ++ni)
      for (int oh = 0; oh < geo.oh; ++oh)
        for (int ow = 0; ow < geo.ow; ++ow) {
          Eigen::Index row = (static_cast<Eigen::Index>(ni) * geo.oh + oh) * geo.ow + ow;
          for (int ki = 0; ki < kh; ++ki) {
            int ih = oh * s + ki - geo.pt;
            if (ih < 0 || ih >= h) continue;
            for (int kj = 0; kj < kw; ++kj) {
              int iw = ow * s + kj - geo.pl;
              if (iw < 0 || iw >= w) continue;
              const S* src = &X.data[((static_cast<size_t>(ni) * h + ih) * w + iw) * c];
              S* dst = cols.data() + row * cols.cols() + (static_cast<Eigen::Index>(ki) * kw + kj) * c;
              std::copy(src, src + c, dst);
            }
          }
        }
  }

  // Adjoint of im2col: scatter-add patch values back onto the grid.
  static void col2im_add(const Mat& cols, int kh, int kw, int s, const ConvGeom& geo, Tensor& X) {
    const int n = X.dim(0), h = X.dim(1), w = X.dim(2), c = X.dim(3);
    for (int ni = 0; ni < n; ++ni)
      for (int oh = 0; oh < geo.oh; ++oh)
        for (int ow = 0; ow < geo.ow; ++ow) {
          Eigen::Index row = (static_cast<Eigen::Index>(ni) * geo.oh + oh) * geo.ow + ow;
          for (int ki = 0; ki < kh; ++ki) {
            int ih = oh * s + ki - geo.pt;
            if (ih < 0 || ih >= h) continue;
            for (int kj = 0; kj < kw; ++kj) {
              int iw = ow * s + kj - geo.pl;
              if (iw < 0 || iw >= w) continue;
              S* dst = &X.data[((static_cast<size_t>(ni) * h + ih) * w + iw) * c];
              const S* src = cols.data() + row * cols.cols() + (static_cast<Eigen::Index>(ki) * kw + kj) * c;
              for (int ci = 0; ci < c; ++ci) dst[ci] += src[ci];
            }
          }
        }
  }

  template <typename F, typename B>
  Var elementwise2(const char* op, Var a, Var b, F fwd, B bwd) {
    const Tensor& A = value(a);
    const Tensor& B_ = value(b);
    if (!A.same_shape(B_))
      throw std::invalid_argument(std::string(op) + ": shape mismatch " + A.shape_str() + " vs " + B_.shape_str());
    Tensor out(A.shape);
    for (size_t i = 0; i < A.data.size(); ++i) out.data[i] = fwd(A.data[i], B_.data[i]);
    std::string opname = op;
    auto back = [a, b, bwd](TapeT& t, int self) {
      const Tensor& g = t.node(self).grad;
      const Tensor& A = t.value(a);
      const Tensor& B_ = t.value(b);
      const bool wa = t.needs_grad(a), wb = t.needs_grad(b);
      for (size_t i = 0; i < g.data.size(); ++i) {
        auto [ga, gb] = bwd(A.data[i], B_.data[i], g.data[i]);
        if (wa) t.node(a.id).grad.data[i] += ga;
        if (wb) t.node(b.id).grad.data[i] += gb;
      }
    };
    return push(std::move(out), {a, b}, back, opname);
  }

  std::vector<Node> nodes_;
  std::vector<std::string> trace_;
  bool consumed_ = false;
};

using Tape = TapeT<float>;

}  // namespace featage::num
