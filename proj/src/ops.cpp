#include "rdcr/ops.hpp"

#include <algorithm>
#include <cstring>

namespace rdcr::ops {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;
using MapCM = Eigen::Map<Eigen::MatrixXd>;
using CMapCM = Eigen::Map<const Eigen::MatrixXd>;

namespace detail {

void record(const char* op, std::initializer_list<Tensor> inputs, Tensor& out,
            std::function<void()> bw) {
  Tape* tape = Tape::current();
  if (tape == nullptr) return;
  bool any = false;
  for (const auto& in : inputs)
    if (in.tracked()) { any = true; break; }
  if (!any) return;
  TapeNode node;
  node.op = op;
  for (const auto& in : inputs) node.inputs.push_back(in.impl());
  node.output = out.impl();
  node.backward = std::move(bw);
  int idx = tape->add_node(std::move(node));
  out.impl()->producer = idx;
  out.impl()->tape = tape;
}

}  // namespace detail

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = Tensor::from_array(a.shape(), a.data() + b.data());
  bool ga = a.tracked(), gb = b.tracked();
  detail::record("add", {a, b}, out, [=]() mutable {
    if (ga) a.impl()->grad += out.impl()->grad;
    if (gb) b.impl()->grad += out.impl()->grad;
  });
  return out;
}

Tensor scale(const Tensor& x, double c) {
  Tensor out = Tensor::from_array(x.shape(), x.data() * c);
  bool gx = x.tracked();
  detail::record("scale", {x}, out, [=]() mutable {
    if (gx) x.impl()->grad += out.impl()->grad * c;
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = Tensor::from_array(a.shape(), a.data() * b.data());
  bool ga = a.tracked(), gb = b.tracked();
  detail::record("mul", {a, b}, out, [=]() mutable {
    if (ga) a.impl()->grad += out.impl()->grad * b.data();
    if (gb) b.impl()->grad += out.impl()->grad * a.data();
  });
  return out;
}

Tensor sum(const Tensor& x) {
  Tensor out = Tensor::from_array({1}, Eigen::ArrayXd::Constant(1, x.data().sum()));
  bool gx = x.tracked();
  detail::record("sum", {x}, out, [=]() mutable {
    if (gx) x.impl()->grad += out.impl()->grad[0];
  });
  return out;
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
  if (numel_of(shape) != x.numel())
    throw ShapeError("reshape: element count mismatch");
  Tensor out = Tensor::from_array(std::move(shape), x.data());
  bool gx = x.tracked();
  detail::record("reshape", {x}, out, [=]() mutable {
    if (gx) x.impl()->grad += out.impl()->grad;
  });
  return out;
}

Tensor select_rows(const Tensor& x, const std::vector<int>& rows) {
  const int n = x.dim(0);
  const Eigen::Index rowlen = x.numel() / n;
  std::vector<int> oshape = x.shape();
  oshape[0] = static_cast<int>(rows.size());
  Tensor out = Tensor::zeros(oshape);
  for (size_t i = 0; i < rows.size(); ++i) {
    int r = rows[i];
    if (r < 0 || r >= n) throw ShapeError("select_rows: row index out of range");
    out.data().segment(static_cast<Eigen::Index>(i) * rowlen, rowlen) =
        x.data().segment(static_cast<Eigen::Index>(r) * rowlen, rowlen);
  }
  bool gx = x.tracked();
  std::vector<int> rows_copy = rows;
  detail::record("select_rows", {x}, out, [=]() mutable {
    if (!gx) return;
    for (size_t i = 0; i < rows_copy.size(); ++i)
      x.impl()->grad.segment(static_cast<Eigen::Index>(rows_copy[i]) * rowlen, rowlen) +=
          out.impl()->grad.segment(static_cast<Eigen::Index>(i) * rowlen, rowlen);
  });
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = Tensor::from_array(x.shape(), x.data().max(0.0));
  bool gx = x.tracked();
  detail::record("relu", {x}, out, [=]() mutable {
    if (gx)
      x.impl()->grad += (x.data() > 0.0).cast<double>() * out.impl()->grad;
  });
  return out;
}

Tensor max_pool2d(const Tensor& x, int k, int stride) {
  if (x.rank() != 4) throw ShapeError("max_pool2d: input must be [N,C,H,W]");
  if (k < 1 || stride < 1) throw ShapeError("max_pool2d: bad window");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h < k || w < k) throw ShapeError("max_pool2d: window larger than input");
  const int ho = (h - k) / stride + 1, wo = (w - k) / stride + 1;
  Tensor out = Tensor::zeros({n, c, ho, wo});
  auto argmax = std::make_shared<std::vector<Eigen::Index>>(
      static_cast<size_t>(n) * c * ho * wo);
  const double* xp = x.ptr();
  double* op = out.ptr();
  Eigen::Index oi = 0;
  for (int i = 0; i < n * c; ++i) {
    const double* plane = xp + static_cast<Eigen::Index>(i) * h * w;
    for (int y = 0; y < ho; ++y)
      for (int z = 0; z < wo; ++z) {
        Eigen::Index best = static_cast<Eigen::Index>(y * stride) * w + z * stride;
        double bv = plane[best];
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            Eigen::Index idx = static_cast<Eigen::Index>(y * stride + ky) * w +
                               (z * stride + kx);
            if (plane[idx] > bv) { bv = plane[idx]; best = idx; }
          }
        op[oi] = bv;
        (*argmax)[static_cast<size_t>(oi)] =
            static_cast<Eigen::Index>(i) * h * w + best;
        ++oi;
      }
  }
  bool gx = x.tracked();
  detail::record("max_pool2d", {x}, out, [=]() mutable {
    if (!gx) return;
    const auto& go = out.impl()->grad;
    auto& gi = x.impl()->grad;
    for (Eigen::Index j = 0; j < go.size(); ++j)
      gi[(*argmax)[static_cast<size_t>(j)]] += go[j];
  });
  return out;
}

Tensor global_average_pool(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("global_average_pool: input must be [N,C,H,W]");
  const int n = x.dim(0), c = x.dim(1);
  const Eigen::Index hw = static_cast<Eigen::Index>(x.dim(2)) * x.dim(3);
  Tensor out = Tensor::zeros({n, c});
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n) * c; ++i)
    out.data()[i] = x.data().segment(i * hw, hw).mean();
  bool gx = x.tracked();
  detail::record("global_average_pool", {x}, out, [=]() mutable {
    if (!gx) return;
    const double inv = 1.0 / static_cast<double>(hw);
    for (Eigen::Index i = 0; i < out.impl()->grad.size(); ++i)
      x.impl()->grad.segment(i * hw, hw) += out.impl()->grad[i] * inv;
  });
  return out;
}

Tensor dropout(const Tensor& x, double p, uint64_t rng_key) {
  if (p < 0.0 || p >= 1.0) throw ShapeError("dropout: p must be in [0,1)");
  if (p == 0.0) return x;
  RngStream rng(rng_key);
  auto mask = std::make_shared<Eigen::ArrayXd>(x.numel());
  const double keep = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < x.numel(); ++i)
    (*mask)[i] = rng.uniform() >= p ? keep : 0.0;
  Tensor out = Tensor::from_array(x.shape(), x.data() * (*mask));
  bool gx = x.tracked();
  detail::record("dropout", {x}, out, [=]() mutable {
    if (gx) x.impl()->grad += out.impl()->grad * (*mask);
  });
  return out;
}

// --- conv2d -----------------------------------------------------------------
//
// im2col into a row-major [C*kH*kW, S*Ho*Wo] buffer; viewed column-major it is
// colT [P, CK2], so outT = colT * Wcm lands in [P, O] whose column slices are
// contiguous per (o, sample) and memcpy out to NCHW.

namespace {

void im2col(const double* x, double* col, int s_count, int c, int h, int w,
            int kh, int kw, int stride, int pad, int ho, int wo) {
  const Eigen::Index hwo = static_cast<Eigen::Index>(ho) * wo;
  const Eigen::Index pc = s_count * hwo;
  for (int ch = 0; ch < c; ++ch)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        double* dst = col + (static_cast<Eigen::Index>(ch * kh + ky) * kw + kx) * pc;
        for (int s = 0; s < s_count; ++s) {
          const double* plane = x + (static_cast<Eigen::Index>(s) * c + ch) * h * w;
          for (int y = 0; y < ho; ++y) {
            int hi = y * stride - pad + ky;
            double* d = dst + static_cast<Eigen::Index>(s) * hwo +
                        static_cast<Eigen::Index>(y) * wo;
            if (hi < 0 || hi >= h) {
              std::fill(d, d + wo, 0.0);
              continue;
            }
            const double* srow = plane + static_cast<Eigen::Index>(hi) * w;
            if (stride == 1) {
              int wi0 = kx - pad;
              int lo = std::clamp(-wi0, 0, wo);
              int hi_w = std::clamp(w - wi0, 0, wo);
              std::fill(d, d + lo, 0.0);
              if (hi_w > lo)
                std::memcpy(d + lo, srow + wi0 + lo,
                            static_cast<size_t>(hi_w - lo) * sizeof(double));
              std::fill(d + std::max(hi_w, lo), d + wo, 0.0);
            } else {
              for (int z = 0; z < wo; ++z) {
                int wi = z * stride - pad + kx;
                d[z] = (wi >= 0 && wi < w) ? srow[wi] : 0.0;
              }
            }
          }
        }
      }
}

// Scatter-add the col-layout gradient back onto the input gradient.
void col2im_add(const double* col, double* gx, int s_count, int c, int h, int w,
                int kh, int kw, int stride, int pad, int ho, int wo) {
  const Eigen::Index hwo = static_cast<Eigen::Index>(ho) * wo;
  const Eigen::Index pc = s_count * hwo;
  for (int ch = 0; ch < c; ++ch)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        const double* src = col + (static_cast<Eigen::Index>(ch * kh + ky) * kw + kx) * pc;
        for (int s = 0; s < s_count; ++s) {
          double* plane = gx + (static_cast<Eigen::Index>(s) * c + ch) * h * w;
          for (int y = 0; y < ho; ++y) {
            int hi = y * stride - pad + ky;
            if (hi < 0 || hi >= h) continue;
            const double* srccur = src + static_cast<Eigen::Index>(s) * hwo +
                                   static_cast<Eigen::Index>(y) * wo;
            double* drow = plane + static_cast<Eigen::Index>(hi) * w;
            if (stride == 1) {
              int wi0 = kx - pad;
              int lo = std::clamp(-wi0, 0, wo);
              int hi_w = std::clamp(w - wi0, 0, wo);
              for (int z = lo; z < hi_w; ++z) drow[wi0 + z] += srccur[z];
            } else {
              for (int z = 0; z < wo; ++z) {
                int wi = z * stride - pad + kx;
                if (wi >= 0 && wi < w) drow[wi] += srccur[z];
              }
            }
          }
        }
      }
}

int conv_chunk_samples(int n, Eigen::Index ck2, Eigen::Index hwo) {
  const Eigen::Index budget = 6 * 1024 * 1024 / static_cast<Eigen::Index>(sizeof(double));
  Eigen::Index per_sample = ck2 * hwo;
  int chunk = static_cast<int>(std::max<Eigen::Index>(1, budget / std::max<Eigen::Index>(1, per_sample)));
  return std::min(n, chunk);
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding) {
  if (input.rank() != 4) throw ShapeError("conv2d: input must be [N,C,H,W]");
  if (weight.rank() != 4) throw ShapeError("conv2d: weight must be [O,C,kH,kW]");
  if (bias.rank() != 1 || bias.dim(0) != weight.dim(0))
    throw ShapeError("conv2d: bias must be [O]");
  if (input.dim(1) != weight.dim(1))
    throw ShapeError("conv2d: channel mismatch between input and weight");
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: bad stride/padding");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int o = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (h + 2 * padding < kh || w + 2 * padding < kw)
    throw ShapeError("conv2d: kernel larger than padded input");
  const int ho = (h + 2 * padding - kh) / stride + 1;
  const int wo = (w + 2 * padding - kw) / stride + 1;
  if (!input.all_finite() || !weight.all_finite() || !bias.all_finite())
    throw DivergenceError("conv2d: non-finite input");

  const Eigen::Index ck2 = static_cast<Eigen::Index>(c) * kh * kw;
  const Eigen::Index hwo = static_cast<Eigen::Index>(ho) * wo;
  Tensor out = Tensor::zeros({n, o, ho, wo});
  CMapCM wcm(weight.ptr(), ck2, o);  // flat [O][CK2] row-major == [CK2,O] col-major
  Eigen::Map<const Eigen::VectorXd> bvec(bias.ptr(), o);
  bool gx = input.tracked(), gw = weight.tracked(), gb = bias.tracked();
  const int st = stride, pad = padding;

  const int chunk = conv_chunk_samples(n, ck2, hwo);
  Eigen::ArrayXd colbuf(ck2 * chunk * hwo);
  Eigen::ArrayXd outbuf(static_cast<Eigen::Index>(o) * chunk * hwo);

  for (int n0 = 0; n0 < n; n0 += chunk) {
    const int sc = std::min(chunk, n - n0);
    const Eigen::Index pc = sc * hwo;
    im2col(input.ptr() + static_cast<Eigen::Index>(n0) * c * h * w, colbuf.data(),
           sc, c, h, w, kh, kw, stride, padding, ho, wo);
    CMapCM colT(colbuf.data(), pc, ck2);
    MapCM outT(outbuf.data(), pc, o);
    outT.noalias() = colT * wcm;
    outT.rowwise() += bvec.transpose();
    for (int s = 0; s < sc; ++s)
      for (int oc = 0; oc < o; ++oc)
        std::memcpy(out.ptr() + ((static_cast<Eigen::Index>(n0 + s)) * o + oc) * hwo,
                    outbuf.data() + static_cast<Eigen::Index>(oc) * pc + static_cast<Eigen::Index>(s) * hwo,
                    static_cast<size_t>(hwo) * sizeof(double));
  }

  detail::record("conv2d", {input, weight, bias}, out, [=]() mutable {
    const Eigen::Index hwo2 = hwo;
    const int chunk2 = conv_chunk_samples(n, ck2, hwo2);
    Eigen::ArrayXd cbuf(ck2 * chunk2 * hwo2);
    Eigen::ArrayXd gobuf(static_cast<Eigen::Index>(o) * chunk2 * hwo2);
    CMapCM wcm2(weight.ptr(), ck2, o);
    for (int n0 = 0; n0 < n; n0 += chunk2) {
      const int sc = std::min(chunk2, n - n0);
      const Eigen::Index pc = sc * hwo2;
      for (int s = 0; s < sc; ++s)
        for (int oc = 0; oc < o; ++oc)
          std::memcpy(gobuf.data() + static_cast<Eigen::Index>(oc) * pc + static_cast<Eigen::Index>(s) * hwo2,
                      out.impl()->grad.data() + ((static_cast<Eigen::Index>(n0 + s)) * o + oc) * hwo2,
                      static_cast<size_t>(hwo2) * sizeof(double));
      CMapCM goT(gobuf.data(), pc, o);
      if (gw || gb) {
        im2col(input.ptr() + static_cast<Eigen::Index>(n0) * c * h * w, cbuf.data(),
               sc, c, h, w, kh, kw, st, pad, ho, wo);
        CMapCM colT(cbuf.data(), pc, ck2);
        if (gw) {
          MapCM gwcm(weight.impl()->grad.data(), ck2, o);
          gwcm.noalias() += colT.transpose() * goT;
        }
        if (gb) {
          Eigen::Map<Eigen::VectorXd> gbv(bias.impl()->grad.data(), o);
          gbv.noalias() += goT.colwise().sum().transpose();
        }
      }
      if (gx) {
        MapCM gcolT(cbuf.data(), pc, ck2);
        gcolT.noalias() = goT * wcm2.transpose();
        col2im_add(cbuf.data(), input.impl()->grad.data() + static_cast<Eigen::Index>(n0) * c * h * w,
                   sc, c, h, w, kh, kw, st, pad, ho, wo);
      }
    }
  });
  return out;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (input.rank() != 2 || weight.rank() != 2)
    throw ShapeError("linear: input [N,D] and weight [D,M] required");
  const int n = input.dim(0), d = input.dim(1), m = weight.dim(1);
  if (weight.dim(0) != d) throw ShapeError("linear: inner dimension mismatch");
  if (bias.rank() != 1 || bias.dim(0) != m) throw ShapeError("linear: bias must be [M]");
  Tensor out = Tensor::zeros({n, m});
  CMapRM x(input.ptr(), n, d), wm(weight.ptr(), d, m);
  Eigen::Map<const Eigen::RowVectorXd> bv(bias.ptr(), m);
  MapRM om(out.ptr(), n, m);
  om.noalias() = x * wm;
  om.rowwise() += bv;
  bool gx = input.tracked(), gw = weight.tracked(), gb = bias.tracked();
  detail::record("linear", {input, weight, bias}, out, [=]() mutable {
    CMapRM go(out.impl()->grad.data(), n, m);
    CMapRM x2(input.ptr(), n, d), w2(weight.ptr(), d, m);
    if (gx) {
      MapRM gi(input.impl()->grad.data(), n, d);
      gi.noalias() += go * w2.transpose();
    }
    if (gw) {
      MapRM gwm(weight.impl()->grad.data(), d, m);
      gwm.noalias() += x2.transpose() * go;
    }
    if (gb) {
      Eigen::Map<Eigen::RowVectorXd> gbv(bias.impl()->grad.data(), m);
      gbv.noalias() += go.colwise().sum();
    }
  });
  return out;
}

Eigen::ArrayXd softmax_rows(const Eigen::ArrayXd& logits, int n, int k) {
  Eigen::ArrayXd p(logits.size());
  for (int i = 0; i < n; ++i) {
    auto row = logits.segment(static_cast<Eigen::Index>(i) * k, k);
    double mx = row.maxCoeff();
    Eigen::ArrayXd e = (row - mx).exp();
    p.segment(static_cast<Eigen::Index>(i) * k, k) = e / e.sum();
  }
  return p;
}

Tensor softmax(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("softmax: input must be [N,K]");
  const int n = x.dim(0), k = x.dim(1);
  Tensor out = Tensor::from_array(x.shape(), softmax_rows(x.data(), n, k));
  bool gx = x.tracked();
  detail::record("softmax", {x}, out, [=]() mutable {
    if (!gx) return;
    const auto& p = out.data();
    const auto& go = out.impl()->grad;
    auto& gi = x.impl()->grad;
    for (int i = 0; i < n; ++i) {
      const Eigen::Index off = static_cast<Eigen::Index>(i) * k;
      double dot = (go.segment(off, k) * p.segment(off, k)).sum();
      gi.segment(off, k) += p.segment(off, k) * (go.segment(off, k) - dot);
    }
  });
  return out;
}

Tensor log_softmax(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("log_softmax: input must be [N,K]");
  const int n = x.dim(0), k = x.dim(1);
  Eigen::ArrayXd outv(x.numel());
  for (int i = 0; i < n; ++i) {
    auto row = x.data().segment(static_cast<Eigen::Index>(i) * k, k);
    double mx = row.maxCoeff();
    double lse = std::log((row - mx).exp().sum()) + mx;
    outv.segment(static_cast<Eigen::Index>(i) * k, k) = row - lse;
  }
  Tensor out = Tensor::from_array(x.shape(), std::move(outv));
  bool gx = x.tracked();
  detail::record("log_softmax", {x}, out, [=]() mutable {
    if (!gx) return;
    const auto& go = out.impl()->grad;
    auto& gi = x.impl()->grad;
    for (int i = 0; i < n; ++i) {
      const Eigen::Index off = static_cast<Eigen::Index>(i) * k;
      double gsum = go.segment(off, k).sum();
      gi.segment(off, k) += go.segment(off, k) - out.data().segment(off, k).exp() * gsum;
    }
  });
  return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [N,K]");
  const int n = logits.dim(0), k = logits.dim(1);
  if (static_cast<int>(labels.size()) != n)
    throw ShapeError("cross_entropy: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= k) throw ShapeError("cross_entropy: label out of range");
  auto probs = std::make_shared<Eigen::ArrayXd>(softmax_rows(logits.data(), n, k));
  double loss = 0.0;
  for (int i = 0; i < n; ++i)
    loss -= std::log((*probs)[static_cast<Eigen::Index>(i) * k + labels[static_cast<size_t>(i)]]);
  loss /= n;
  Tensor out = Tensor::from_array({1}, Eigen::ArrayXd::Constant(1, loss));
  bool gx = logits.tracked();
  auto labels_copy = std::make_shared<std::vector<int>>(labels);
  detail::record("cross_entropy", {logits}, out, [=]() mutable {
    if (!gx) return;
    const double g = out.impl()->grad[0] / n;
    auto& gi = logits.impl()->grad;
    for (int i = 0; i < n; ++i) {
      const Eigen::Index off = static_cast<Eigen::Index>(i) * k;
      gi.segment(off, k) += g * probs->segment(off, k);
      gi[off + (*labels_copy)[static_cast<size_t>(i)]] -= g;
    }
  });
  return out;
}

Tensor mse_consistency(const Tensor& student_logits, const Tensor& teacher_probs) {
  check_same_shape(student_logits, teacher_probs, "mse_consistency");
  const int n = student_logits.dim(0), k = student_logits.dim(1);
  auto p = std::make_shared<Eigen::ArrayXd>(softmax_rows(student_logits.data(), n, k));
  // teacher values detached: copied, no gradient path
  auto q = std::make_shared<Eigen::ArrayXd>(teacher_probs.data());
  double loss = ((*p - *q).square()).sum() / (static_cast<double>(n) * k);
  Tensor out = Tensor::from_array({1}, Eigen::ArrayXd::Constant(1, loss));
  bool gx = student_logits.tracked();
  detail::record("mse_consistency", {student_logits}, out, [=]() mutable {
    if (!gx) return;
    const double g = out.impl()->grad[0] * 2.0 / (static_cast<double>(n) * k);
    auto& gi = student_logits.impl()->grad;
    for (int i = 0; i < n; ++i) {
      const Eigen::Index off = static_cast<Eigen::Index>(i) * k;
      Eigen::ArrayXd d = g * (p->segment(off, k) - q->segment(off, k));
      double dot = (d * p->segment(off, k)).sum();
      gi.segment(off, k) += p->segment(off, k) * (d - dot);
    }
  });
  return out;
}

Tensor kl_consistency(const Tensor& student_logits, const Tensor& teacher_probs) {
  check_same_shape(student_logits, teacher_probs, "kl_consistency");
  const int n = student_logits.dim(0), k = student_logits.dim(1);
  if ((teacher_probs.data() < 0.0).any())
    throw ShapeError("kl_consistency: teacher probabilities must be nonnegative");
  auto p = std::make_shared<Eigen::ArrayXd>(softmax_rows(student_logits.data(), n, k));
  auto q = std::make_shared<Eigen::ArrayXd>(teacher_probs.data());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < p->size(); ++i) {
    double qi = (*q)[i];
    if (qi > 0.0) loss += qi * (std::log(qi) - std::log((*p)[i]));
  }
  loss /= n;
  Tensor out = Tensor::from_array({1}, Eigen::ArrayXd::Constant(1, loss));
  bool gx = student_logits.tracked();
  detail::record("kl_consistency", {student_logits}, out, [=]() mutable {
    if (!gx) return;
    const double g = out.impl()->grad[0] / n;
    auto& gi = student_logits.impl()->grad;
    for (int i = 0; i < n; ++i) {
      const Eigen::Index off = static_cast<Eigen::Index>(i) * k;
      double qsum = q->segment(off, k).sum();
      gi.segment(off, k) += g * (p->segment(off, k) * qsum - q->segment(off, k));
    }
  });
  return out;
}

}  // namespace rdcr::ops
