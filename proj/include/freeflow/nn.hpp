#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "freeflow/errors.hpp"
#include "freeflow/tensor.hpp"

// Layer primitives behind the model: 3x3 same-padding convolution via im2col
// and a GEMM, 2x2 max pooling, global average pooling, dense layers, softmax
// and cross-entropy. Everything is templated on the scalar so the same code
// runs in float for training and in double for finite-difference checks.
//
// Feature maps are HWC buffers. An HWC buffer viewed column-major is a
// (C x H*W) matrix whose column j is the channel vector at position j, which
// is exactly the shape the im2col GEMM wants.
namespace freeflow::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const Mat<T>>;
template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstRowMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using RowMatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Vector<T, Eigen::Dynamic>>;
template <typename T>
using ConstVecMap = Eigen::Map<const Eigen::Vector<T, Eigen::Dynamic>>;

/// Patch matrix for one 3x3 same-padding convolution: (9*Cin) x (H*W),
/// column j holds the patch around position j, entries ordered (ky, kx, cin).
template <typename T>
void im2col_3x3(const T* in, int h, int w, int cin, Mat<T>& patches) {
  patches.setZero(9 * cin, static_cast<Eigen::Index>(h) * w);
  for (int ky = 0; ky < 3; ++ky) {
    int dy = ky - 1;
    for (int kx = 0; kx < 3; ++kx) {
      int dx = kx - 1;
      int row0 = (ky * 3 + kx) * cin;
      for (int r = 0; r < h; ++r) {
        int sr = r + dy;
        if (sr < 0 || sr >= h) continue;
        int c_lo = std::max(0, -dx);
        int c_hi = std::min(w, w - dx);
        const T* src = in + (static_cast<std::size_t>(sr) * w + (c_lo + dx)) * cin;
        for (int c = c_lo; c < c_hi; ++c) {
          T* dst = patches.data() +
                   (static_cast<std::size_t>(r) * w + c) * (9 * cin) + row0;
          std::copy(src, src + cin, dst);
          src += cin;
        }
      }
    }
  }
}

/// out(h*w*cout) = weight * patches + bias. weight tensor is [Cout,3,3,Cin]
/// row-major, which maps to a (Cout x 9Cin) row-major matrix.
template <typename T>
void conv3x3_forward(const T* in, int h, int w, int cin,
                     const TensorT<T>& weight, const TensorT<T>& bias,
                     Mat<T>& patches, T* out) {
  const int cout = weight.shape[0];
  im2col_3x3(in, h, w, cin, patches);
  ConstRowMatMap<T> wmat(weight.ptr(), cout, 9 * cin);
  MatMap<T> omat(out, cout, static_cast<Eigen::Index>(h) * w);
  omat.noalias() = wmat * patches;
  ConstVecMap<T> b(bias.ptr(), cout);
  omat.colwise() += b;
}

/// Gradients of a 3x3 convolution given the cached patch matrix.
/// Accumulates into dweight/dbias; writes din when non-null.
template <typename T>
void conv3x3_backward(const Mat<T>& patches, int h, int w, int cin,
                      const TensorT<T>& weight, const T* dout,
                      TensorT<T>& dweight, TensorT<T>& dbias, T* din) {
  const int cout = weight.shape[0];
  ConstMatMap<T> dmat(dout, cout, static_cast<Eigen::Index>(h) * w);
  RowMatMap<T> dw(dweight.ptr(), cout, 9 * cin);
  dw.noalias() += dmat * patches.transpose();
  VecMap<T> db(dbias.ptr(), cout);
  db.noalias() += dmat.rowwise().sum();
  if (din == nullptr) return;

  ConstRowMatMap<T> wmat(weight.ptr(), cout, 9 * cin);
  Mat<T> dpatches = wmat.transpose() * dmat;  // (9*Cin) x (H*W)
  std::fill(din, din + static_cast<std::size_t>(h) * w * cin, T(0));
  for (int ky = 0; ky < 3; ++ky) {
    int dy = ky - 1;
    for (int kx = 0; kx < 3; ++kx) {
      int dx = kx - 1;
      int row0 = (ky * 3 + kx) * cin;
      for (int r = 0; r < h; ++r) {
        int sr = r + dy;
        if (sr < 0 || sr >= h) continue;
        int c_lo = std::max(0, -dx);
        int c_hi = std::min(w, w - dx);
        T* dst = din + (static_cast<std::size_t>(sr) * w + (c_lo + dx)) * cin;
        for (int c = c_lo; c < c_hi; ++c) {
          const T* src = dpatches.data() +
                         (static_cast<std::size_t>(r) * w + c) * (9 * cin) + row0;
          for (int ch = 0; ch < cin; ++ch) dst[ch] += src[ch];
          dst += cin;
        }
      }
    }
  }
}

template <typename T>
void relu_inplace(T* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] = x[i] > T(0) ? x[i] : T(0);
}

/// dx = dy where the forward output was positive. `act` is the post-ReLU
/// activation, so act > 0 exactly marks the pass-through entries.
template <typename T>
void relu_backward(const T* act, T* dy, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (!(act[i] > T(0))) dy[i] = T(0);
  }
}

/// 2x2 max pool, stride 2, floor semantics on odd sizes. Records the argmax
/// corner (0..3) per output element for the backward scatter.
template <typename T>
void maxpool2x2_forward(const T* in, int h, int w, int c, T* out,
                        std::uint8_t* idx) {
  const int ho = h / 2;
  const int wo = w / 2;
  for (int r = 0; r < ho; ++r) {
    for (int q = 0; q < wo; ++q) {
      const T* p00 = in + (static_cast<std::size_t>(2 * r) * w + 2 * q) * c;
      const T* p01 = p00 + c;
      const T* p10 = p00 + static_cast<std::size_t>(w) * c;
      const T* p11 = p10 + c;
      T* o = out + (static_cast<std::size_t>(r) * wo + q) * c;
      std::uint8_t* ix = idx + (static_cast<std::size_t>(r) * wo + q) * c;
      for (int ch = 0; ch < c; ++ch) {
        T best = p00[ch];
        std::uint8_t which = 0;
        if (p01[ch] > best) { best = p01[ch]; which = 1; }
        if (p10[ch] > best) { best = p10[ch]; which = 2; }
        if (p11[ch] > best) { best = p11[ch]; which = 3; }
        o[ch] = best;
        ix[ch] = which;
      }
    }
  }
}

template <typename T>
void maxpool2x2_backward(const T* dout, int h, int w, int c,
                         const std::uint8_t* idx, T* din) {
  const int ho = h / 2;
  const int wo = w / 2;
  std::fill(din, din + static_cast<std::size_t>(h) * w * c, T(0));
  for (int r = 0; r < ho; ++r) {
    for (int q = 0; q < wo; ++q) {
      const T* d = dout + (static_cast<std::size_t>(r) * wo + q) * c;
      const std::uint8_t* ix = idx + (static_cast<std::size_t>(r) * wo + q) * c;
      T* base = din + (static_cast<std::size_t>(2 * r) * w + 2 * q) * c;
      for (int ch = 0; ch < c; ++ch) {
        std::size_t off = (ix[ch] & 1 ? c : 0) +
                          (ix[ch] & 2 ? static_cast<std::size_t>(w) * c : 0);
        base[off + ch] += d[ch];
      }
    }
  }
}

/// Per-channel mean over all spatial positions.
template <typename T>
void global_avg_pool(const T* in, int h, int w, int c, T* out) {
  ConstMatMap<T> m(in, c, static_cast<Eigen::Index>(h) * w);
  VecMap<T> v(out, c);
  v = m.rowwise().mean();
}

template <typename T>
void global_avg_pool_backward(const T* dout, int h, int w, int c, T* din) {
  const T scale = T(1) / static_cast<T>(static_cast<std::size_t>(h) * w);
  MatMap<T> m(din, c, static_cast<Eigen::Index>(h) * w);
  ConstVecMap<T> v(dout, c);
  m = (v * scale).replicate(1, static_cast<Eigen::Index>(h) * w);
}

/// y = W x + b with W row-major [out, in].
template <typename T>
void dense_forward(const TensorT<T>& weight, const TensorT<T>& bias,
                   const T* x, T* y) {
  const int out = weight.shape[0];
  const int in = weight.shape[1];
  ConstRowMatMap<T> w(weight.ptr(), out, in);
  ConstVecMap<T> xv(x, in);
  VecMap<T> yv(y, out);
  yv.noalias() = w * xv;
  ConstVecMap<T> b(bias.ptr(), out);
  yv += b;
}

/// Accumulates dW += dy x^T and db += dy; writes dx = W^T dy when non-null.
template <typename T>
void dense_backward(const TensorT<T>& weight, const T* x, const T* dy,
                    TensorT<T>& dweight, TensorT<T>& dbias, T* dx) {
  const int out = weight.shape[0];
  const int in = weight.shape[1];
  ConstVecMap<T> dyv(dy, out);
  ConstVecMap<T> xv(x, in);
  RowMatMap<T> dw(dweight.ptr(), out, in);
  dw.noalias() += dyv * xv.transpose();
  VecMap<T> db(dbias.ptr(), out);
  db += dyv;
  if (dx != nullptr) {
    ConstRowMatMap<T> w(weight.ptr(), out, in);
    VecMap<T> dxv(dx, in);
    dxv.noalias() = w.transpose() * dyv;
  }
}

/// Max-subtracted softmax. Throws on non-finite logits.
template <typename T>
void softmax(const T* logits, int k, T* probs) {
  T mx = logits[0];
  for (int i = 1; i < k; ++i) mx = std::max(mx, logits[i]);
  if (!std::isfinite(static_cast<double>(mx))) {
    throw DomainError("softmax: non-finite logit");
  }
  T sum = T(0);
  for (int i = 0; i < k; ++i) {
    probs[i] = std::exp(logits[i] - mx);
    sum += probs[i];
  }
  for (int i = 0; i < k; ++i) probs[i] /= sum;
}

}  // namespace freeflow::nn
