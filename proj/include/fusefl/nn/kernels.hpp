// Copyright 2026 The FuseFL Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>

#include "fusefl/nn/layers.hpp"
#include "fusefl/nn/tensor.hpp"

// Batched kernels for the fixed layer set. Inputs are assumed to have been
// shape-checked by the caller.
namespace fusefl::kernels {

inline Tensor dense_forward(const Dense& l, const Tensor& w, const Tensor& b, const Tensor& x) {
  const std::size_t batch = x.dim(0);
  Tensor y({batch, l.out});
  const double* wp = w.raw().data();
  for (std::size_t n = 0; n < batch; ++n) {
    const double* xr = x.raw().data() + n * l.in;
    double* yr = y.raw().data() + n * l.out;
    for (std::size_t o = 0; o < l.out; ++o) {
      const double* wr = wp + o * l.in;
      double acc = b[o];
      for (std::size_t i = 0; i < l.in; ++i) acc += wr[i] * xr[i];
      yr[o] = acc;
    }
  }
  return y;
}

inline void dense_backward(const Dense& l, const Tensor& w, const Tensor& x, const Tensor& dy,
                           Tensor* dw, Tensor* db, Tensor* dx) {
  const std::size_t batch = x.dim(0);
  if (dw != nullptr) {
    *dw = Tensor({l.out, l.in});
    *db = Tensor({l.out});
    for (std::size_t n = 0; n < batch; ++n) {
      const double* xr = x.raw().data() + n * l.in;
      const double* dyr = dy.raw().data() + n * l.out;
      for (std::size_t o = 0; o < l.out; ++o) {
        const double g = dyr[o];
        (*db)[o] += g;
        if (g == 0.0) continue;
        double* dwr = dw->raw().data() + o * l.in;
        for (std::size_t i = 0; i < l.in; ++i) dwr[i] += g * xr[i];
      }
    }
  }
  if (dx != nullptr) {
    *dx = Tensor({batch, l.in});
    for (std::size_t n = 0; n < batch; ++n) {
      const double* dyr = dy.raw().data() + n * l.out;
      double* dxr = dx->raw().data() + n * l.in;
      for (std::size_t o = 0; o < l.out; ++o) {
        const double g = dyr[o];
        if (g == 0.0) continue;
        const double* wr = w.raw().data() + o * l.in;
        for (std::size_t i = 0; i < l.in; ++i) dxr[i] += g * wr[i];
      }
    }
  }
}

inline Tensor relu_forward(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.raw()) v = v > 0.0 ? v : 0.0;
  return y;
}

inline Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (!(x[i] > 0.0)) dx[i] = 0.0;
  }
  return dx;
}

inline Tensor conv_forward(const Conv2d& l, const Tensor& w, const Tensor& b, const Tensor& x) {
  const std::size_t batch = x.dim(0), cin = l.in_channels, h = x.dim(2), wd = x.dim(3);
  const std::size_t k = l.kernel, s = l.stride, p = l.padding;
  const std::size_t oh = (h + 2 * p - k) / s + 1, ow = (wd + 2 * p - k) / s + 1;
  Tensor y({batch, l.out_channels, oh, ow});
  for (std::size_t n = 0; n < batch; ++n) {
    const double* xn = x.raw().data() + n * cin * h * wd;
    for (std::size_t o = 0; o < l.out_channels; ++o) {
      double* yo = y.raw().data() + (n * l.out_channels + o) * oh * ow;
      for (std::size_t i = 0; i < oh * ow; ++i) yo[i] = b[o];
      for (std::size_t c = 0; c < cin; ++c) {
        const double* xc = xn + c * h * wd;
        const double* wk = w.raw().data() + (o * cin + c) * k * k;
        for (std::size_t kh = 0; kh < k; ++kh) {
          for (std::size_t kw = 0; kw < k; ++kw) {
            const double wv = wk[kh * k + kw];
            for (std::size_t r = 0; r < oh; ++r) {
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(r * s + kh) -
                                        static_cast<std::ptrdiff_t>(p);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
              const double* xrow = xc + static_cast<std::size_t>(ih) * wd;
              double* yrow = yo + r * ow;
              for (std::size_t q = 0; q < ow; ++q) {
                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(q * s + kw) -
                                          static_cast<std::ptrdiff_t>(p);
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(wd)) continue;
                yrow[q] += wv * xrow[iw];
              }
            }
          }
        }
      }
    }
  }
  return y;
}

inline void conv_backward(const Conv2d& l, const Tensor& w, const Tensor& x, const Tensor& dy,
                          Tensor* dw, Tensor* db, Tensor* dx) {
  const std::size_t batch = x.dim(0), cin = l.in_channels, h = x.dim(2), wd = x.dim(3);
  const std::size_t k = l.kernel, s = l.stride, p = l.padding;
  const std::size_t oh = dy.dim(2), ow = dy.dim(3);
  if (dw != nullptr) {
    *dw = Tensor(weight_shape(l));
    *db = Tensor(bias_shape(l));
  }
  if (dx != nullptr) *dx = Tensor(x.shape());
  for (std::size_t n = 0; n < batch; ++n) {
    const double* xn = x.raw().data() + n * cin * h * wd;
    for (std::size_t o = 0; o < l.out_channels; ++o) {
      const double* dyo = dy.raw().data() + (n * l.out_channels + o) * oh * ow;
      if (db != nullptr) {
        for (std::size_t i = 0; i < oh * ow; ++i) (*db)[o] += dyo[i];
      }
      for (std::size_t c = 0; c < cin; ++c) {
        const double* xc = xn + c * h * wd;
        double* dxc = dx != nullptr ? dx->raw().data() + (n * cin + c) * h * wd : nullptr;
        const std::size_t wbase = (o * cin + c) * k * k;
        for (std::size_t kh = 0; kh < k; ++kh) {
          for (std::size_t kw = 0; kw < k; ++kw) {
            const double wv = w[wbase + kh * k + kw];
            double gw = 0.0;
            for (std::size_t r = 0; r < oh; ++r) {
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(r * s + kh) -
                                        static_cast<std::ptrdiff_t>(p);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
              const std::size_t row = static_cast<std::size_t>(ih) * wd;
              for (std::size_t q = 0; q < ow; ++q) {
                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(q * s + kw) -
                                          static_cast<std::ptrdiff_t>(p);
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(wd)) continue;
                const double g = dyo[r * ow + q];
                gw += g * xc[row + static_cast<std::size_t>(iw)];
                if (dxc != nullptr) dxc[row + static_cast<std::size_t>(iw)] += g * wv;
              }
            }
            if (dw != nullptr) (*dw)[wbase + kh * k + kw] += gw;
          }
        }
      }
    }
  }
}

inline Tensor avgpool_forward(const AvgPool2d& l, const Tensor& x) {
  const std::size_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t win = l.window, oh = h / win, ow = wd / win;
  const double scale = 1.0 / static_cast<double>(win * win);
  Tensor y({batch, ch, oh, ow});
  for (std::size_t nc = 0; nc < batch * ch; ++nc) {
    const double* xc = x.raw().data() + nc * h * wd;
    double* yc = y.raw().data() + nc * oh * ow;
    for (std::size_t r = 0; r < oh; ++r) {
      for (std::size_t q = 0; q < ow; ++q) {
        double acc = 0.0;
        for (std::size_t i = 0; i < win; ++i) {
          for (std::size_t j = 0; j < win; ++j) acc += xc[(r * win + i) * wd + q * win + j];
        }
        yc[r * ow + q] = acc * scale;
      }
    }
  }
  return y;
}

inline Tensor avgpool_backward(const AvgPool2d& l, const Tensor& x, const Tensor& dy) {
  const std::size_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t win = l.window, oh = dy.dim(2), ow = dy.dim(3);
  const double scale = 1.0 / static_cast<double>(win * win);
  Tensor dx(x.shape());
  for (std::size_t nc = 0; nc < batch * ch; ++nc) {
    double* dxc = dx.raw().data() + nc * h * wd;
    const double* dyc = dy.raw().data() + nc * oh * ow;
    for (std::size_t r = 0; r < oh; ++r) {
      for (std::size_t q = 0; q < ow; ++q) {
        const double g = dyc[r * ow + q] * scale;
        for (std::size_t i = 0; i < win; ++i) {
          for (std::size_t j = 0; j < win; ++j) dxc[(r * win + i) * wd + q * win + j] += g;
        }
      }
    }
  }
  return dx;
}

inline Tensor branch_mean_forward(const BranchMean& l, const Tensor& x) {
  Shape out_shape = x.shape();
  out_shape[1] /= l.groups;
  Tensor y(out_shape);
  const std::size_t batch = x.dim(0);
  const std::size_t slice = y.row_size();
  const double inv = static_cast<double>(l.groups);
  for (std::size_t n = 0; n < batch; ++n) {
    const double* xr = x.raw().data() + n * slice * l.groups;
    double* yr = y.raw().data() + n * slice;
    for (std::size_t g = 0; g < l.groups; ++g) {
      for (std::size_t i = 0; i < slice; ++i) yr[i] += xr[g * slice + i];
    }
    for (std::size_t i = 0; i < slice; ++i) yr[i] /= inv;
  }
  return y;
}

inline Tensor branch_mean_backward(const BranchMean& l, const Tensor& x, const Tensor& dy) {
  Tensor dx(x.shape());
  const std::size_t batch = x.dim(0);
  const std::size_t slice = dy.row_size();
  const double inv = static_cast<double>(l.groups);
  for (std::size_t n = 0; n < batch; ++n) {
    const double* dyr = dy.raw().data() + n * slice;
    double* dxr = dx.raw().data() + n * slice * l.groups;
    for (std::size_t g = 0; g < l.groups; ++g) {
      for (std::size_t i = 0; i < slice; ++i) dxr[g * slice + i] = dyr[i] / inv;
    }
  }
  return dx;
}

}  // namespace fusefl::kernels
