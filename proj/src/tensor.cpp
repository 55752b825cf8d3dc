#include "renas/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace renas {

void Tensor::ensure_grad() {
  if (grad.empty()) grad.assign(values.size(), 0.0);
}

bool Tensor::all_finite() const {
  for (double v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

TensorPtr make_tensor(std::array<int, 4> shape, bool requires_grad) {
  auto t = std::make_shared<Tensor>();
  t->shape = shape;
  t->values.assign(std::size_t(t->numel()), 0.0);
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr make_tensor(std::array<int, 4> shape, std::vector<double> values,
                      bool requires_grad) {
  auto t = std::make_shared<Tensor>();
  t->shape = shape;
  if (std::int64_t(values.size()) != t->numel())
    throw std::invalid_argument("make_tensor: value count " +
                                std::to_string(values.size()) +
                                " does not match shape product " +
                                std::to_string(t->numel()));
  t->values = std::move(values);
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr make_scalar(double v, bool requires_grad) {
  return make_tensor({1, 1, 1, 1}, {v}, requires_grad);
}

void Tape::record(std::vector<TensorPtr> inputs, TensorPtr output,
                  std::function<void()> backward) {
  for (const auto& in : inputs)
    if (in->requires_grad) {
      output->requires_grad = true;
      break;
    }
  nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(backward)});
}

namespace {

std::string shape_str(const std::array<int, 4>& s) {
  std::ostringstream os;
  os << "(" << s[0] << "," << s[1] << "," << s[2] << "," << s[3] << ")";
  return os.str();
}

int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace

TensorPtr conv2d(Tape& tape, const TensorPtr& x, const TensorPtr& w, int stride,
                 int pad) {
  const int B = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
  const int OC = w->shape[0], IC = w->shape[1], KH = w->shape[2], KW = w->shape[3];
  if (IC != C)
    throw std::invalid_argument("conv2d: input channels " + std::to_string(C) +
                                " != kernel in-channels " + std::to_string(IC) +
                                " for x" + shape_str(x->shape) + " w" +
                                shape_str(w->shape));
  if (KH != KW || KH % 2 == 0)
    throw std::invalid_argument("conv2d: kernel must be square and odd, got " +
                                std::to_string(KH) + "x" + std::to_string(KW));
  const int OH = conv_out_dim(H, KH, stride, pad);
  const int OW = conv_out_dim(W, KW, stride, pad);
  if (OH < 1 || OW < 1)
    throw std::invalid_argument("conv2d: output would be empty for input " +
                                shape_str(x->shape) + " kernel " +
                                std::to_string(KH));
  auto out = make_tensor({B, OC, OH, OW});

  const double* xv = x->values.data();
  const double* wv = w->values.data();
  double* ov = out->values.data();
  for (int b = 0; b < B; ++b)
    for (int oc = 0; oc < OC; ++oc)
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow) {
          double acc = 0.0;
          const int ih0 = oh * stride - pad, iw0 = ow * stride - pad;
          for (int ic = 0; ic < C; ++ic)
            for (int kh = 0; kh < KH; ++kh) {
              const int ih = ih0 + kh;
              if (ih < 0 || ih >= H) continue;
              const double* xrow = xv + ((std::int64_t(b) * C + ic) * H + ih) * W;
              const double* wrow =
                  wv + ((std::int64_t(oc) * C + ic) * KH + kh) * KW;
              for (int kw = 0; kw < KW; ++kw) {
                const int iw = iw0 + kw;
                if (iw < 0 || iw >= W) continue;
                acc += xrow[iw] * wrow[kw];
              }
            }
          ov[((std::int64_t(b) * OC + oc) * OH + oh) * OW + ow] = acc;
        }

  tape.record({x, w}, out, [x, w, out, stride, pad, B, C, H, W, OC, KH, KW, OH,
               OW]() {
    const double* gv = out->grad.data();
    const bool need_dx = x->requires_grad;
    const bool need_dw = w->requires_grad;
    if (need_dx) x->ensure_grad();
    if (need_dw) w->ensure_grad();
    const double* xv = x->values.data();
    const double* wv = w->values.data();
    for (int b = 0; b < B; ++b)
      for (int oc = 0; oc < OC; ++oc)
        for (int oh = 0; oh < OH; ++oh)
          for (int ow = 0; ow < OW; ++ow) {
            const double g =
                gv[((std::int64_t(b) * OC + oc) * OH + oh) * OW + ow];
            if (g == 0.0) continue;
            const int ih0 = oh * stride - pad, iw0 = ow * stride - pad;
            for (int ic = 0; ic < C; ++ic)
              for (int kh = 0; kh < KH; ++kh) {
                const int ih = ih0 + kh;
                if (ih < 0 || ih >= H) continue;
                const std::int64_t xoff = ((std::int64_t(b) * C + ic) * H + ih) * W;
                const std::int64_t woff =
                    ((std::int64_t(oc) * C + ic) * KH + kh) * KW;
                for (int kw = 0; kw < KW; ++kw) {
                  const int iw = iw0 + kw;
                  if (iw < 0 || iw >= W) continue;
                  if (need_dx) x->grad[xoff + iw] += g * wv[woff + kw];
                  if (need_dw) w->grad[woff + kw] += g * xv[xoff + iw];
                }
              }
          }
  });
  return out;
}

TensorPtr depthwise_conv2d(Tape& tape, const TensorPtr& x, const TensorPtr& w,
                           int stride, int pad) {
  const int B = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
  const int WC = w->shape[0], KH = w->shape[2], KW = w->shape[3];
  if (WC != C || w->shape[1] != 1)
    throw std::invalid_argument(
        "depthwise_conv2d: kernel " + shape_str(w->shape) +
        " incompatible with input channels " + std::to_string(C));
  if (KH != KW || KH % 2 == 0)
    throw std::invalid_argument("depthwise_conv2d: kernel must be square and odd");
  const int OH = conv_out_dim(H, KH, stride, pad);
  const int OW = conv_out_dim(W, KW, stride, pad);
  if (OH < 1 || OW < 1)
    throw std::invalid_argument("depthwise_conv2d: output would be empty");
  auto out = make_tensor({B, C, OH, OW});

  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow) {
          double acc = 0.0;
          const int ih0 = oh * stride - pad, iw0 = ow * stride - pad;
          for (int kh = 0; kh < KH; ++kh) {
            const int ih = ih0 + kh;
            if (ih < 0 || ih >= H) continue;
            for (int kw = 0; kw < KW; ++kw) {
              const int iw = iw0 + kw;
              if (iw < 0 || iw >= W) continue;
              acc += x->at(b, c, ih, iw) * w->at(c, 0, kh, kw);
            }
          }
          out->at(b, c, oh, ow) = acc;
        }

  tape.record({x, w}, out, [x, w, out, stride, pad, B, C, H, W, KH, KW, OH,
               OW]() {
    const bool need_dx = x->requires_grad;
    const bool need_dw = w->requires_grad;
    if (need_dx) x->ensure_grad();
    if (need_dw) w->ensure_grad();
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int oh = 0; oh < OH; ++oh)
          for (int ow = 0; ow < OW; ++ow) {
            const double g = out->grad[out->index(b, c, oh, ow)];
            if (g == 0.0) continue;
            const int ih0 = oh * stride - pad, iw0 = ow * stride - pad;
            for (int kh = 0; kh < KH; ++kh) {
              const int ih = ih0 + kh;
              if (ih < 0 || ih >= H) continue;
              for (int kw = 0; kw < KW; ++kw) {
                const int iw = iw0 + kw;
                if (iw < 0 || iw >= W) continue;
                if (need_dx)
                  x->grad[x->index(b, c, ih, iw)] += g * w->at(c, 0, kh, kw);
                if (need_dw)
                  w->grad[w->index(c, 0, kh, kw)] += g * x->at(b, c, ih, iw);
              }
            }
          }
  });
  return out;
}

TensorPtr dw_separable_conv(Tape& tape, const TensorPtr& x,
                            const TensorPtr& w_depth, const TensorPtr& w_point,
                            int stride, int pad) {
  if (w_depth->shape[0] != x->shape[1])
    throw std::invalid_argument(
        "dw_separable_conv: depthwise kernel channels " +
        std::to_string(w_depth->shape[0]) + " != input channels " +
        std::to_string(x->shape[1]));
  if (w_point->shape[1] != x->shape[1])
    throw std::invalid_argument(
        "dw_separable_conv: pointwise in-channels " +
        std::to_string(w_point->shape[1]) + " != input channels " +
        std::to_string(x->shape[1]));
  auto mid = depthwise_conv2d(tape, x, w_depth, stride, pad);
  return conv2d(tape, mid, w_point, 1, 0);
}

TensorPtr relu(Tape& tape, const TensorPtr& x) {
  auto out = make_tensor(x->shape);
  const std::size_t n = x->values.size();
  for (std::size_t i = 0; i < n; ++i)
    out->values[i] = x->values[i] > 0.0 ? x->values[i] : 0.0;
  tape.record({x}, out, [x, out, n]() {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (std::size_t i = 0; i < n; ++i)
      if (x->values[i] > 0.0) x->grad[i] += out->grad[i];
  });
  return out;
}

TensorPtr global_avg_pool(Tape& tape, const TensorPtr& x) {
  const int B = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
  auto out = make_tensor({B, C, 1, 1});
  const double inv = 1.0 / (double(H) * W);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) acc += x->at(b, c, h, w);
      out->at(b, c, 0, 0) = acc * inv;
    }
  tape.record({x}, out, [x, out, B, C, H, W, inv]() {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        const double g = out->grad[out->index(b, c, 0, 0)] * inv;
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w) x->grad[x->index(b, c, h, w)] += g;
      }
  });
  return out;
}

TensorPtr linear(Tape& tape, const TensorPtr& x, const TensorPtr& w,
                 const TensorPtr& b) {
  const int B = x->shape[0], F = x->shape[1];
  const int OUT = w->shape[0], WF = w->shape[1];
  if (x->shape[2] != 1 || x->shape[3] != 1)
    throw std::invalid_argument("linear: expected (batch, F, 1, 1) input, got " +
                                shape_str(x->shape));
  if (WF != F)
    throw std::invalid_argument("linear: feature dim " + std::to_string(F) +
                                " != weight columns " + std::to_string(WF));
  if (b->numel() != OUT)
    throw std::invalid_argument("linear: bias length " +
                                std::to_string(b->numel()) + " != rows " +
                                std::to_string(OUT));
  auto out = make_tensor({B, OUT, 1, 1});
  for (int i = 0; i < B; ++i)
    for (int o = 0; o < OUT; ++o) {
      double acc = b->values[o];
      for (int f = 0; f < F; ++f)
        acc += x->values[std::int64_t(i) * F + f] *
               w->values[std::int64_t(o) * F + f];
      out->values[std::int64_t(i) * OUT + o] = acc;
    }
  tape.record({x, w, b}, out, [x, w, b, out, B, F, OUT]() {
    if (x->requires_grad) x->ensure_grad();
    if (w->requires_grad) w->ensure_grad();
    if (b->requires_grad) b->ensure_grad();
    for (int i = 0; i < B; ++i)
      for (int o = 0; o < OUT; ++o) {
        const double g = out->grad[std::int64_t(i) * OUT + o];
        if (g == 0.0) continue;
        if (b->requires_grad) b->grad[o] += g;
        for (int f = 0; f < F; ++f) {
          if (x->requires_grad)
            x->grad[std::int64_t(i) * F + f] +=
                g * w->values[std::int64_t(o) * F + f];
          if (w->requires_grad)
            w->grad[std::int64_t(o) * F + f] +=
                g * x->values[std::int64_t(i) * F + f];
        }
      }
  });
  return out;
}

std::vector<double> softmax_row(const std::vector<double>& logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

TensorPtr cross_entropy(Tape& tape, const TensorPtr& logits,
                        const std::vector<int>& labels) {
  const int B = logits->shape[0], C = logits->shape[1];
  if (int(labels.size()) != B)
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) +
                                " labels for batch " + std::to_string(B));
  for (int i = 0; i < B; ++i)
    if (labels[i] < 0 || labels[i] >= C)
      throw std::invalid_argument("cross_entropy: label " +
                                  std::to_string(labels[i]) +
                                  " out of range [0, " + std::to_string(C) + ")");
  auto probs = std::make_shared<std::vector<double>>(std::size_t(B) * C);
  double total = 0.0;
  for (int i = 0; i < B; ++i) {
    std::vector<double> row(logits->values.begin() + std::int64_t(i) * C,
                            logits->values.begin() + std::int64_t(i + 1) * C);
    auto p = softmax_row(row);
    for (int c = 0; c < C; ++c) (*probs)[std::int64_t(i) * C + c] = p[c];
    total += -std::log(p[labels[i]]);
  }
  auto out = make_scalar(total / B);
  tape.record({logits}, out, [logits, out, probs, labels, B, C]() {
    if (!logits->requires_grad) return;
    logits->ensure_grad();
    const double g = out->grad[0] / B;
    for (int i = 0; i < B; ++i)
      for (int c = 0; c < C; ++c) {
        double d = (*probs)[std::int64_t(i) * C + c];
        if (c == labels[i]) d -= 1.0;
        logits->grad[std::int64_t(i) * C + c] += g * d;
      }
  });
  return out;
}

TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  if (a->shape != b->shape)
    throw std::invalid_argument("add: shape mismatch " + shape_str(a->shape) +
                                " vs " + shape_str(b->shape));
  auto out = make_tensor(a->shape);
  const std::size_t n = a->values.size();
  for (std::size_t i = 0; i < n; ++i)
    out->values[i] = a->values[i] + b->values[i];
  tape.record({a, b}, out, [a, b, out, n]() {
    if (a->requires_grad) {
      a->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) a->grad[i] += out->grad[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) b->grad[i] += out->grad[i];
    }
  });
  return out;
}

TensorPtr scale(Tape& tape, const TensorPtr& x, const TensorPtr& s) {
  if (!s->is_scalar())
    throw std::invalid_argument("scale: scale factor must be scalar, got " +
                                shape_str(s->shape));
  auto out = make_tensor(x->shape);
  const double sv = s->values[0];
  const std::size_t n = x->values.size();
  for (std::size_t i = 0; i < n; ++i) out->values[i] = x->values[i] * sv;
  tape.record({x, s}, out, [x, s, out, n]() {
    if (x->requires_grad) {
      x->ensure_grad();
      const double sv = s->values[0];
      for (std::size_t i = 0; i < n; ++i) x->grad[i] += out->grad[i] * sv;
    }
    if (s->requires_grad) {
      s->ensure_grad();
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += out->grad[i] * x->values[i];
      s->grad[0] += acc;
    }
  });
  return out;
}

TensorPtr slice_channels(Tape& tape, const TensorPtr& x, int c_begin, int c_end) {
  const int B = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
  if (c_begin < 0 || c_end > C || c_begin >= c_end)
    throw std::invalid_argument("slice_channels: range [" +
                                std::to_string(c_begin) + ", " +
                                std::to_string(c_end) + ") invalid for " +
                                std::to_string(C) + " channels");
  const int SC = c_end - c_begin;
  auto out = make_tensor({B, SC, H, W});
  const std::int64_t plane = std::int64_t(H) * W;
  for (int b = 0; b < B; ++b)
    std::memcpy(out->values.data() + std::int64_t(b) * SC * plane,
                x->values.data() + (std::int64_t(b) * C + c_begin) * plane,
                std::size_t(SC) * plane * sizeof(double));
  tape.record({x}, out, [x, out, c_begin, B, C, SC, plane]() {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int b = 0; b < B; ++b) {
      const double* src = out->grad.data() + std::int64_t(b) * SC * plane;
      double* dst = x->grad.data() + (std::int64_t(b) * C + c_begin) * plane;
      for (std::int64_t i = 0; i < SC * plane; ++i) dst[i] += src[i];
    }
  });
  return out;
}

TensorPtr concat_channels(Tape& tape, const std::vector<TensorPtr>& parts) {
  if (parts.empty())
    throw std::invalid_argument("concat_channels: no inputs");
  const int B = parts[0]->shape[0], H = parts[0]->shape[2], W = parts[0]->shape[3];
  int C = 0;
  for (const auto& p : parts) {
    if (p->shape[0] != B || p->shape[2] != H || p->shape[3] != W)
      throw std::invalid_argument("concat_channels: shape mismatch " +
                                  shape_str(p->shape) + " vs " +
                                  shape_str(parts[0]->shape));
    C += p->shape[1];
  }
  auto out = make_tensor({B, C, H, W});
  const std::int64_t plane = std::int64_t(H) * W;
  int coff = 0;
  for (const auto& p : parts) {
    const int PC = p->shape[1];
    for (int b = 0; b < B; ++b)
      std::memcpy(out->values.data() + (std::int64_t(b) * C + coff) * plane,
                  p->values.data() + std::int64_t(b) * PC * plane,
                  std::size_t(PC) * plane * sizeof(double));
    coff += PC;
  }
  tape.record(parts, out, [parts, out, B, C, plane]() {
    int coff = 0;
    for (const auto& p : parts) {
      const int PC = p->shape[1];
      if (p->requires_grad) {
        p->ensure_grad();
        for (int b = 0; b < B; ++b) {
          const double* src =
              out->grad.data() + (std::int64_t(b) * C + coff) * plane;
          double* dst = p->grad.data() + std::int64_t(b) * PC * plane;
          for (std::int64_t i = 0; i < PC * plane; ++i) dst[i] += src[i];
        }
      }
      coff += PC;
    }
  });
  return out;
}

TensorPtr element(Tape& tape, const TensorPtr& t, std::int64_t flat_index) {
  if (flat_index < 0 || flat_index >= t->numel())
    throw std::invalid_argument("element: index " + std::to_string(flat_index) +
                                " out of range for " + std::to_string(t->numel()) +
                                " elements");
  auto out = make_scalar(t->values[std::size_t(flat_index)]);
  tape.record({t}, out, [t, out, flat_index]() {
    if (!t->requires_grad) return;
    t->ensure_grad();
    t->grad[std::size_t(flat_index)] += out->grad[0];
  });
  return out;
}

TensorPtr reduce_sum(Tape& tape, const TensorPtr& x) {
  double acc = 0.0;
  for (double v : x->values) acc += v;
  auto out = make_scalar(acc);
  tape.record({x}, out, [x, out]() {
    if (!x->requires_grad) return;
    x->ensure_grad();
    const double g = out->grad[0];
    for (auto& gv : x->grad) gv += g;
  });
  return out;
}

void backward(Tape& tape, const TensorPtr& loss) {
  if (!loss->is_scalar())
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                shape_str(loss->shape));
  if (tape.consumed())
    throw std::logic_error("backward: tape already consumed");
  tape.mark_consumed();
  loss->ensure_grad();
  loss->grad[0] = 1.0;
  const auto& nodes = tape.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward();
  }
}

double finite_diff_check(
    const std::function<TensorPtr(Tape&, const TensorPtr&)>& f,
    const TensorPtr& x, double eps) {
  x->requires_grad = true;
  x->zero_grad();
  {
    Tape tape;
    auto loss = f(tape, x);
    backward(tape, loss);
  }
  std::vector<double> analytic = x->grad;
  double max_err = 0.0;
  for (std::size_t i = 0; i < x->values.size(); ++i) {
    const double saved = x->values[i];
    x->values[i] = saved + eps;
    Tape tp;
    const double fp = f(tp, x)->values[0];
    x->values[i] = saved - eps;
    Tape tm;
    const double fm = f(tm, x)->values[0];
    x->values[i] = saved;
    const double numeric = (fp - fm) / (2 * eps);
    const double denom =
        std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-8});
    max_err = std::max(max_err, std::fabs(analytic[i] - numeric) / denom);
  }
  return max_err;
}

}  // namespace renas
