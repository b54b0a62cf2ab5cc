#include "tdce/diffcore/tape.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace tdce::diff {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

[[noreturn]] void shape_fail(const char* op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

struct ConvGeom {
  std::size_t cin, h, w, cout, k, ho, wo;
  int stride, pad;
};

ConvGeom conv_geometry(const Shape& x, const Shape& wt, const Shape& b, Conv2dOptions opt) {
  if (x.size() != 3) shape_fail("conv2d", "input must be (C,H,W), got " + to_string(x));
  if (wt.size() != 4 || wt[2] != wt[3])
    shape_fail("conv2d", "weight must be (Cout,Cin,K,K), got " + to_string(wt));
  if (wt[1] != x[0])
    shape_fail("conv2d", "weight expects " + std::to_string(wt[1]) + " input channels, input has " +
                             std::to_string(x[0]) + " (input " + to_string(x) + ")");
  if (b.size() != 1 || b[0] != wt[0]) shape_fail("conv2d", "bias must be (" + std::to_string(wt[0]) + "), got " + to_string(b));
  if (opt.stride < 1) shape_fail("conv2d", "stride must be >= 1");
  ConvGeom g{x[0], x[1], x[2], wt[0], wt[2], 0, 0, opt.stride, 0};
  g.pad = opt.padding == Padding::same ? static_cast<int>(g.k / 2) : 0;
  const long eh = static_cast<long>(g.h) + 2 * g.pad - static_cast<long>(g.k);
  const long ew = static_cast<long>(g.w) + 2 * g.pad - static_cast<long>(g.k);
  if (eh < 0 || ew < 0) shape_fail("conv2d", "kernel " + std::to_string(g.k) + " larger than input " + to_string(x));
  g.ho = static_cast<std::size_t>(eh / g.stride + 1);
  g.wo = static_cast<std::size_t>(ew / g.stride + 1);
  return g;
}

// Output columns [lo, hi) read inside the input row for kernel offset k.
void valid_range(std::size_t k, const ConvGeom& g, std::size_t in_extent, std::size_t out_extent, std::size_t& lo,
                 std::size_t& hi) {
  const long off = static_cast<long>(k) - g.pad;
  long first = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
  long last = (static_cast<long>(in_extent) - 1 - off);
  last = last < 0 ? -1 : last / g.stride;
  first = std::min<long>(first, static_cast<long>(out_extent));
  last = std::min<long>(last, static_cast<long>(out_extent) - 1);
  lo = static_cast<std::size_t>(first);
  hi = last < first ? lo : static_cast<std::size_t>(last + 1);
}

void im2col(const double* x, const ConvGeom& g, double* cols) {
  const std::size_t hw = g.ho * g.wo;
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      std::size_t ylo, yhi;
      valid_range(ky, g, g.h, g.ho, ylo, yhi);
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        std::size_t xlo, xhi;
        valid_range(kx, g, g.w, g.wo, xlo, xhi);
        double* row = cols + ((c * g.k + ky) * g.k + kx) * hw;
        std::fill(row, row + ylo * g.wo, 0.0);
        std::fill(row + yhi * g.wo, row + hw, 0.0);
        for (std::size_t oy = ylo; oy < yhi; ++oy) {
          const std::size_t iy = oy * g.stride + ky - g.pad;
          double* dst = row + oy * g.wo;
          const double* src = x + (c * g.h + iy) * g.w + kx - g.pad;
          std::fill(dst, dst + xlo, 0.0);
          if (g.stride == 1) {
            std::copy(src + xlo, src + xhi, dst + xlo);
          } else {
            for (std::size_t ox = xlo; ox < xhi; ++ox) dst[ox] = src[ox * g.stride];
          }
          std::fill(dst + xhi, dst + g.wo, 0.0);
        }
      }
    }
}

void col2im(const double* cols, const ConvGeom& g, double* dx) {
  const std::size_t hw = g.ho * g.wo;
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      std::size_t ylo, yhi;
      valid_range(ky, g, g.h, g.ho, ylo, yhi);
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        std::size_t xlo, xhi;
        valid_range(kx, g, g.w, g.wo, xlo, xhi);
        const double* row = cols + ((c * g.k + ky) * g.k + kx) * hw;
        for (std::size_t oy = ylo; oy < yhi; ++oy) {
          const std::size_t iy = oy * g.stride + ky - g.pad;
          double* dst = dx + (c * g.h + iy) * g.w + kx - g.pad;
          const double* src = row + oy * g.wo;
          for (std::size_t ox = xlo; ox < xhi; ++ox) dst[ox * g.stride] += src[ox];
        }
      }
    }
}

// Per-thread im2col buffer; contents are fully overwritten before use.
double* scratch(std::size_t n) {
  thread_local std::unique_ptr<double[]> buf;
  thread_local std::size_t cap = 0;
  if (n > cap) {
    buf.reset(new double[n]);
    cap = n;
  }
  return buf.get();
}

bool is_pointwise(const ConvGeom& g) { return g.k == 1 && g.stride == 1 && g.pad == 0; }

double stable_sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

Tape::Tape(const ParamSet& params) : params_(&params) {}

void Tape::check_live(const char* op) const {
  if (consumed_) throw TapeError(std::string(op) + ": tape already consumed by backward()");
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) throw TapeError("unknown variable id " + std::to_string(v.id));
  return nodes_[v.id];
}

const Tensor& Tape::value(Var v) const {
  const Node& n = node(v);
  return n.op == Op::param ? (*params_)[n.param_index].value : n.value;
}

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::input(Tensor value, bool requires_grad) {
  check_live("input");
  Node n{Op::input, {}, std::move(value), {}};
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Var Tape::param(std::string_view name) {
  check_live("param");
  const std::size_t idx = params_->index_of(name);
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].op == Op::param && nodes_[i].param_index == idx) return Var{i};
  Node n{Op::param, {}, Tensor{}, {}};
  n.requires_grad = true;
  n.param_index = idx;
  return push(std::move(n));
}

Var Tape::conv2d(Var x, Var w, Var b, Conv2dOptions opt) {
  check_live("conv2d");
  const Tensor& xv = value(x);
  const Tensor& wv = value(w);
  const ConvGeom g = conv_geometry(xv.shape(), wv.shape(), value(b).shape(), opt);
  const std::size_t hw = g.ho * g.wo;
  const std::size_t kk = g.cin * g.k * g.k;
  Tensor out({g.cout, g.ho, g.wo});
  MapMat o(out.ptr(), static_cast<long>(g.cout), static_cast<long>(hw));
  CMapMat wm(wv.ptr(), static_cast<long>(g.cout), static_cast<long>(kk));
  if (is_pointwise(g)) {
    o.noalias() = wm * CMapMat(xv.ptr(), static_cast<long>(kk), static_cast<long>(hw));
  } else {
    double* cols = scratch(kk * hw);
    im2col(xv.ptr(), g, cols);
    o.noalias() = wm * CMapMat(cols, static_cast<long>(kk), static_cast<long>(hw));
  }
  const double* bias = value(b).ptr();
  for (std::size_t c = 0; c < g.cout; ++c) o.row(static_cast<long>(c)).array() += bias[c];
  Node n{Op::conv2d, {x.id, w.id, b.id}, std::move(out), {}};
  n.conv = opt;
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::relu(Var x) {
  check_live("relu");
  Tensor out = value(x);
  for (double& v : out.storage()) v = v > 0.0 ? v : 0.0;
  Node n{Op::relu, {x.id}, std::move(out), {}};
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

Var Tape::max_pool2(Var x) {
  check_live("max_pool2");
  const Tensor& xv = value(x);
  const Shape& s = xv.shape();
  if (s.size() != 3) shape_fail("max_pool2", "input must be (C,H,W), got " + to_string(s));
  if (s[1] % 2 || s[2] % 2) shape_fail("max_pool2", "spatial dims must be even, got " + to_string(s));
  const std::size_t c = s[0], h = s[1] / 2, w = s[2] / 2;
  Tensor out({c, h, w});
  std::vector<std::uint32_t> arg(out.size());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x0 = 0; x0 < w; ++x0) {
        std::size_t best = (ch * s[1] + 2 * y) * s[2] + 2 * x0;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t i = (ch * s[1] + 2 * y + dy) * s[2] + 2 * x0 + dx;
            if (xv[i] > xv[best]) best = i;
          }
        const std::size_t o = (ch * h + y) * w + x0;
        out[o] = xv[best];
        arg[o] = static_cast<std::uint32_t>(best);
      }
  Node n{Op::max_pool2, {x.id}, std::move(out), {}};
  n.argmax = std::move(arg);
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

Var Tape::upsample2(Var x) {
  check_live("upsample2");
  const Tensor& xv = value(x);
  const Shape& s = xv.shape();
  if (s.size() != 3) shape_fail("upsample2", "input must be (C,H,W), got " + to_string(s));
  const std::size_t c = s[0], h = s[1], w = s[2];
  Tensor out({c, 2 * h, 2 * w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t x0 = 0; x0 < 2 * w; ++x0) out[(ch * 2 * h + y) * 2 * w + x0] = xv[(ch * h + y / 2) * w + x0 / 2];
  Node n{Op::upsample2, {x.id}, std::move(out), {}};
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

Var Tape::global_avg_pool(Var x) {
  check_live("global_avg_pool");
  const Tensor& xv = value(x);
  const Shape& s = xv.shape();
  if (s.size() != 3) shape_fail("global_avg_pool", "input must be (C,H,W), got " + to_string(s));
  const std::size_t hw = s[1] * s[2];
  Tensor out({s[0]});
  for (std::size_t c = 0; c < s[0]; ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < hw; ++i) acc += xv[c * hw + i];
    out[c] = acc / static_cast<double>(hw);
  }
  Node n{Op::gap, {x.id}, std::move(out), {}};
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

Var Tape::dense(Var x, Var w, Var b) {
  check_live("dense");
  const Tensor& xv = value(x);
  const Tensor& wv = value(w);
  const Tensor& bv = value(b);
  if (xv.rank() != 1) shape_fail("dense", "input must be a vector, got " + to_string(xv.shape()));
  if (wv.rank() != 2 || wv.dim(1) != xv.dim(0))
    shape_fail("dense", "weight " + to_string(wv.shape()) + " incompatible with input " + to_string(xv.shape()));
  if (bv.rank() != 1 || bv.dim(0) != wv.dim(0))
    shape_fail("dense", "bias " + to_string(bv.shape()) + " incompatible with weight " + to_string(wv.shape()));
  const std::size_t out_n = wv.dim(0), in_n = wv.dim(1);
  Tensor out({out_n});
  for (std::size_t o = 0; o < out_n; ++o) {
    double acc = bv[o];
    for (std::size_t i = 0; i < in_n; ++i) acc += wv[o * in_n + i] * xv[i];
    out[o] = acc;
  }
  Node n{Op::dense, {x.id, w.id, b.id}, std::move(out), {}};
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::concat(std::span<const Var> xs) {
  check_live("concat");
  if (xs.empty()) shape_fail("concat", "no inputs");
  const Shape& s0 = value(xs[0]).shape();
  if (s0.size() != 3) shape_fail("concat", "inputs must be (C,H,W), got " + to_string(s0));
  std::size_t channels = 0;
  bool rg = false;
  std::vector<std::size_t> ids;
  for (Var v : xs) {
    const Shape& s = value(v).shape();
    if (s.size() != 3 || s[1] != s0[1] || s[2] != s0[2])
      shape_fail("concat", "spatial mismatch " + to_string(s) + " vs " + to_string(s0));
    channels += s[0];
    rg = rg || node(v).requires_grad;
    ids.push_back(v.id);
  }
  Tensor out({channels, s0[1], s0[2]});
  std::size_t off = 0;
  for (Var v : xs) {
    const Tensor& t = value(v);
    std::copy(t.data().begin(), t.data().end(), out.storage().begin() + static_cast<long>(off));
    off += t.size();
  }
  Node n{Op::concat, std::move(ids), std::move(out), {}};
  n.requires_grad = rg;
  return push(std::move(n));
}

Var Tape::sigmoid(Var x) {
  check_live("sigmoid");
  Tensor out = value(x);
  for (double& v : out.storage()) v = stable_sigmoid(v);
  Node n{Op::sigmoid, {x.id}, std::move(out), {}};
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

Var Tape::bce_with_logits(Var logit, double label) {
  check_live("bce_with_logits");
  const Tensor& z = value(logit);
  if (z.size() != 1) shape_fail("bce_with_logits", "logit must be a scalar, got " + to_string(z.shape()));
  if (!(label >= 0.0 && label <= 1.0)) shape_fail("bce_with_logits", "label must be in [0,1]");
  const double zz = z[0];
  const double loss = std::max(zz, 0.0) - zz * label + std::log1p(std::exp(-std::abs(zz)));
  Node n{Op::bce, {logit.id}, Tensor({1}, loss), {}};
  n.scalar = label;
  n.requires_grad = node(logit).requires_grad;
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  check_live("add");
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (av.shape() != bv.shape()) shape_fail("add", to_string(av.shape()) + " vs " + to_string(bv.shape()));
  Tensor out = av;
  out += bv;
  Node n{Op::add, {a.id, b.id}, std::move(out), {}};
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(n));
}

Var Tape::scale(Var x, double s) {
  check_live("scale");
  Tensor out = value(x);
  out *= s;
  Node n{Op::scale, {x.id}, std::move(out), {}};
  n.scalar = s;
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

void Tape::ensure_grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(value(Var{id}).shape(), 0.0);
}

Gradients Tape::backward(Var output) {
  const Tensor& v = value(output);
  return backward(output, Tensor(v.shape(), 1.0));
}

Gradients Tape::backward(Var output, const Tensor& output_grad) {
  Gradients grads = zero_gradients(*params_);
  backward_into(output, output_grad, grads);
  return grads;
}

void Tape::backward_into(Var output, const Tensor& output_grad, Gradients& grads) {
  check_live("backward");
  if (grads.size() != params_->size())
    throw ShapeError("backward: gradient buffer covers " + std::to_string(grads.size()) + " of " +
                     std::to_string(params_->size()) + " parameters");
  if (output.id >= nodes_.size()) throw TapeError("backward: unknown output variable");
  if (output_grad.shape() != value(output).shape())
    throw ShapeError("backward: seed shape " + to_string(output_grad.shape()) + " vs output " +
                     to_string(value(output).shape()));
  consumed_ = true;
  accum_ = &grads;
  if (nodes_[output.id].op == Op::param) {
    grads[nodes_[output.id].param_index] += output_grad;
  } else {
    nodes_[output.id].grad = output_grad;
  }
  for (std::size_t id = output.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.grad.empty() || !n.requires_grad || n.op == Op::param) continue;
    backprop(id);
  }
  accum_ = nullptr;
}

Tensor& Tape::grad_target(std::size_t id) {
  Node& n = nodes_[id];
  if (n.op == Op::param) return (*accum_)[n.param_index];
  ensure_grad(id);
  return n.grad;
}

const Tensor& Tape::grad(Var v) const {
  const Node& n = node(v);
  if (!consumed_) throw TapeError("grad: backward() has not run");
  if (n.grad.empty()) throw TapeError("grad: no gradient reached variable " + std::to_string(v.id));
  return n.grad;
}

void Tape::backprop(std::size_t id) {
  const Op op = nodes_[id].op;
  const std::vector<std::size_t> in = nodes_[id].in;
  auto needs = [&](std::size_t k) { return nodes_[in[k]].requires_grad; };
  const Tensor& dy = nodes_[id].grad;
  const Tensor& y = nodes_[id].value;

  switch (op) {
    case Op::input:
    case Op::param:
      return;
    case Op::conv2d: {
      const Tensor& xv = value(Var{in[0]});
      const Tensor& wv = value(Var{in[1]});
      const ConvGeom g = conv_geometry(xv.shape(), wv.shape(), value(Var{in[2]}).shape(), nodes_[id].conv);
      const long hw = static_cast<long>(g.ho * g.wo);
      const long kk = static_cast<long>(g.cin * g.k * g.k);
      CMapMat d(dy.ptr(), static_cast<long>(g.cout), hw);
      const double* colp = xv.ptr();
      if (!is_pointwise(g)) {
        double* cols = scratch(static_cast<std::size_t>(kk * hw));
        im2col(xv.ptr(), g, cols);
        colp = cols;
      }
      MapMat(grad_target(in[1]).ptr(), static_cast<long>(g.cout), kk).noalias() +=
          d * CMapMat(colp, kk, hw).transpose();
      double* db = grad_target(in[2]).ptr();
      for (long c = 0; c < static_cast<long>(g.cout); ++c) db[c] += d.row(c).sum();
      if (needs(0)) {
        Tensor& dx = grad_target(in[0]);
        CMapMat wm(wv.ptr(), static_cast<long>(g.cout), kk);
        if (is_pointwise(g)) {
          MapMat(dx.ptr(), kk, hw).noalias() += wm.transpose() * d;
        } else {
          double* dcols = scratch(static_cast<std::size_t>(kk * hw));
          MapMat(dcols, kk, hw).noalias() = wm.transpose() * d;
          col2im(dcols, g, dx.ptr());
        }
      }
      return;
    }
    case Op::relu: {
      auto& dx = grad_target(in[0]).storage();
      for (std::size_t i = 0; i < dx.size(); ++i)
        if (y[i] > 0.0) dx[i] += dy[i];
      return;
    }
    case Op::max_pool2: {
      auto& dx = grad_target(in[0]).storage();
      const auto& arg = nodes_[id].argmax;
      for (std::size_t i = 0; i < arg.size(); ++i) dx[arg[i]] += dy[i];
      return;
    }
    case Op::upsample2: {
      Tensor& dxt = grad_target(in[0]);
      const std::size_t c = dxt.dim(0), h = dxt.dim(1), w = dxt.dim(2);
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t yy = 0; yy < 2 * h; ++yy)
          for (std::size_t xx = 0; xx < 2 * w; ++xx) dxt[(ch * h + yy / 2) * w + xx / 2] += dy[(ch * 2 * h + yy) * 2 * w + xx];
      return;
    }
    case Op::gap: {
      Tensor& dxt = grad_target(in[0]);
      const std::size_t c = dxt.dim(0), hw = dxt.dim(1) * dxt.dim(2);
      const double inv = 1.0 / static_cast<double>(hw);
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < hw; ++i) dxt[ch * hw + i] += dy[ch] * inv;
      return;
    }
    case Op::dense: {
      const Tensor& xv = value(Var{in[0]});
      const Tensor& wv = value(Var{in[1]});
      const std::size_t out_n = wv.dim(0), in_n = wv.dim(1);
      Tensor& dw = grad_target(in[1]);
      for (std::size_t o = 0; o < out_n; ++o)
        for (std::size_t i = 0; i < in_n; ++i) dw[o * in_n + i] += dy[o] * xv[i];
      grad_target(in[2]) += dy;
      if (needs(0)) {
        Tensor& dx = grad_target(in[0]);
        for (std::size_t o = 0; o < out_n; ++o)
          for (std::size_t i = 0; i < in_n; ++i) dx[i] += wv[o * in_n + i] * dy[o];
      }
      return;
    }
    case Op::concat: {
      std::size_t off = 0;
      for (std::size_t k = 0; k < in.size(); ++k) {
        const std::size_t n = value(Var{in[k]}).size();
        if (needs(k)) {
          auto& dx = grad_target(in[k]).storage();
          for (std::size_t i = 0; i < n; ++i) dx[i] += dy[off + i];
        }
        off += n;
      }
      return;
    }
    case Op::sigmoid: {
      auto& dx = grad_target(in[0]).storage();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * y[i] * (1.0 - y[i]);
      return;
    }
    case Op::bce: {
      const double z = value(Var{in[0]})[0];
      grad_target(in[0])[0] += dy[0] * (stable_sigmoid(z) - nodes_[id].scalar);
      return;
    }
    case Op::add: {
      for (std::size_t k = 0; k < 2; ++k)
        if (needs(k)) {
          grad_target(in[k]) += dy;
        }
      return;
    }
    case Op::scale: {
      auto& dx = grad_target(in[0]).storage();
      const double s = nodes_[id].scalar;
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += s * dy[i];
      return;
    }
  }
}

}  // namespace tdce::diff
