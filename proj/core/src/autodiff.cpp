#include "freeevent/autodiff.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <unordered_set>

#include "freeevent/errors.hpp"

namespace freeevent::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXd>;
using ConstMapVec = Eigen::Map<const Eigen::VectorXd>;

void require_rank(const Var& v, int rank, const char* op) {
  if (v.value().rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(v.shape()));
}

bool wants(const Node& n, std::size_t parent) { return n.parents[parent]->requires_grad; }
Tensor& pgrad(Node& n, std::size_t parent) { return n.parents[parent]->grad_buffer(); }

// Lays out the k x k receptive fields of one C x H x W sample as columns of a
// (C*k*k) x (Ho*Wo) matrix (stride 1).
void im2col(const double* x, int c, int h, int w, int k, int pad, double* cols) {
  const int ho = h + 2 * pad - k + 1;
  const int wo = w + 2 * pad - k + 1;
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy + ky - pad;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox + kx - pad;
            row[oy * wo + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                    ? x[(static_cast<std::size_t>(ci) * h + iy) * w + ix]
                                    : 0.0;
          }
        }
      }
}

void col2im_add(const double* cols, int c, int h, int w, int k, int pad, double* x) {
  const int ho = h + 2 * pad - k + 1;
  const int wo = w + 2 * pad - k + 1;
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy + ky - pad;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox + kx - pad;
            if (ix < 0 || ix >= w) continue;
            x[(static_cast<std::size_t>(ci) * h + iy) * w + ix] += row[oy * wo + ox];
          }
        }
      }
}

}  // namespace

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Var Var::make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward) {
  Var out(std::move(value));
  bool any = false;
  for (const Var& p : parents) any = any || p.requires_grad();
  if (any) {
    out.node_->requires_grad = true;
    out.node_->parents.reserve(parents.size());
    for (Var& p : parents) out.node_->parents.push_back(p.node_);
    out.node_->backward = std::move(backward);
  }
  return out;
}

void backward(const Var& root) {
  if (root.value().size() != 1) throw ShapeError("backward: root must be a scalar");
  if (!root.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  return Var::make(a.value() + b.value(), {a, b}, [](Node& n) {
    if (wants(n, 0)) pgrad(n, 0) += n.grad;
    if (wants(n, 1)) pgrad(n, 1) += n.grad;
  });
}

Var scale(const Var& a, double s) {
  return Var::make(s * a.value(), {a}, [s](Node& n) {
    Tensor& g = pgrad(n, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * n.grad[i];
  });
}

Var silu(const Var& x) {
  Tensor y(x.shape());
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] / (1.0 + std::exp(-xv[i]));
  return Var::make(std::move(y), {x}, [](Node& n) {
    const Tensor& xv = n.parents[0]->value;
    Tensor& g = pgrad(n, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-xv[i]));
      g[i] += n.grad[i] * s * (1.0 + xv[i] * (1.0 - s));
    }
  });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int padding) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d weight");
  const int n = x.shape()[0], ci = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const int co = weight.shape()[0], k = weight.shape()[2];
  if (weight.shape()[1] != ci || weight.shape()[3] != k)
    throw ShapeError("conv2d: weight " + shape_string(weight.shape()) + " incompatible with input " +
                     shape_string(x.shape()));
  if (bias.value().size() != static_cast<std::size_t>(co)) throw ShapeError("conv2d: bias size");
  const int ho = h + 2 * padding - k + 1, wo = w + 2 * padding - k + 1;
  const int rows = ci * k * k, cols_n = ho * wo;
  const bool pointwise = (k == 1 && padding == 0);

  Tensor y({n, co, ho, wo});
  ConstMapMat wm(weight.value().data(), co, rows);
  ConstMapVec bv(bias.value().data(), co);
  RowMat cols(rows, cols_n);
  for (int s = 0; s < n; ++s) {
    const double* xs = x.value().data() + static_cast<std::size_t>(s) * ci * h * w;
    MapMat ys(y.data() + static_cast<std::size_t>(s) * co * cols_n, co, cols_n);
    if (pointwise) {
      ys.noalias() = wm * ConstMapMat(xs, rows, cols_n);
    } else {
      im2col(xs, ci, h, w, k, padding, cols.data());
      ys.noalias() = wm * cols;
    }
    ys.colwise() += bv;
  }

  return Var::make(std::move(y), {x, weight, bias}, [=](Node& nd) {
    const Tensor& xv = nd.parents[0]->value;
    ConstMapMat wm(nd.parents[1]->value.data(), co, rows);
    RowMat cols(rows, cols_n), dcols(rows, cols_n);
    for (int s = 0; s < n; ++s) {
      const double* xs = xv.data() + static_cast<std::size_t>(s) * ci * h * w;
      ConstMapMat dy(nd.grad.data() + static_cast<std::size_t>(s) * co * cols_n, co, cols_n);
      if (wants(nd, 1) || wants(nd, 2)) {
        if (wants(nd, 1)) {
          MapMat dw(pgrad(nd, 1).data(), co, rows);
          if (pointwise) {
            dw.noalias() += dy * ConstMapMat(xs, rows, cols_n).transpose();
          } else {
            im2col(xs, ci, h, w, k, padding, cols.data());
            dw.noalias() += dy * cols.transpose();
          }
        }
        if (wants(nd, 2)) MapVec(pgrad(nd, 2).data(), co) += dy.rowwise().sum();
      }
      if (wants(nd, 0)) {
        double* dxs = pgrad(nd, 0).data() + static_cast<std::size_t>(s) * ci * h * w;
        if (pointwise) {
          MapMat(dxs, rows, cols_n).noalias() += wm.transpose() * dy;
        } else {
          dcols.noalias() = wm.transpose() * dy;
          col2im_add(dcols.data(), ci, h, w, k, padding, dxs);
        }
      }
    }
  });
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps) {
  require_rank(x, 4, "group_norm");
  const int n = x.shape()[0], c = x.shape()[1];
  const int hw = x.shape()[2] * x.shape()[3];
  if (c % groups != 0) throw ShapeError("group_norm: channels not divisible by groups");
  if (gamma.value().size() != static_cast<std::size_t>(c) || beta.value().size() != static_cast<std::size_t>(c))
    throw ShapeError("group_norm: affine parameter size");
  const int cg = c / groups;
  const std::size_t m = static_cast<std::size_t>(cg) * hw;

  Tensor xhat(x.shape());
  std::vector<double> inv_std(static_cast<std::size_t>(n) * groups);
  Tensor y(x.shape());
  const Tensor& xv = x.value();
  for (int s = 0; s < n; ++s)
    for (int g = 0; g < groups; ++g) {
      const std::size_t base = (static_cast<std::size_t>(s) * c + g * cg) * hw;
      double mean = 0.0;
      for (std::size_t i = 0; i < m; ++i) mean += xv[base + i];
      mean /= static_cast<double>(m);
      double var = 0.0;
      for (std::size_t i = 0; i < m; ++i) var += (xv[base + i] - mean) * (xv[base + i] - mean);
      var /= static_cast<double>(m);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[static_cast<std::size_t>(s) * groups + g] = is;
      for (int cc = 0; cc < cg; ++cc) {
        const int ch = g * cg + cc;
        for (int p = 0; p < hw; ++p) {
          const std::size_t i = base + static_cast<std::size_t>(cc) * hw + p;
          xhat[i] = (xv[i] - mean) * is;
          y[i] = gamma.value()[ch] * xhat[i] + beta.value()[ch];
        }
      }
    }

  return Var::make(std::move(y), {x, gamma, beta},
                   [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& nd) {
    const Tensor& gv = nd.parents[1]->value;
    Tensor* dx = wants(nd, 0) ? &pgrad(nd, 0) : nullptr;
    Tensor* dg = wants(nd, 1) ? &pgrad(nd, 1) : nullptr;
    Tensor* db = wants(nd, 2) ? &pgrad(nd, 2) : nullptr;
    for (int s = 0; s < n; ++s)
      for (int g = 0; g < groups; ++g) {
        const std::size_t base = (static_cast<std::size_t>(s) * c + g * cg) * hw;
        double sum_d = 0.0, sum_dx = 0.0;
        for (int cc = 0; cc < cg; ++cc) {
          const int ch = g * cg + cc;
          for (int p = 0; p < hw; ++p) {
            const std::size_t i = base + static_cast<std::size_t>(cc) * hw + p;
            const double dy = nd.grad[i];
            if (dg) (*dg)[ch] += dy * xhat[i];
            if (db) (*db)[ch] += dy;
            const double dxh = dy * gv[ch];
            sum_d += dxh;
            sum_dx += dxh * xhat[i];
          }
        }
        if (!dx) continue;
        const double is = inv_std[static_cast<std::size_t>(s) * groups + g];
        const double md = static_cast<double>(m);
        for (int cc = 0; cc < cg; ++cc) {
          const int ch = g * cg + cc;
          for (int p = 0; p < hw; ++p) {
            const std::size_t i = base + static_cast<std::size_t>(cc) * hw + p;
            const double dxh = nd.grad[i] * gv[ch];
            (*dx)[i] += is * (dxh - sum_d / md - xhat[i] * sum_dx / md);
          }
        }
      }
  });
}

Var add_channel_bias(const Var& x, const Var& bias_nc) {
  require_rank(x, 4, "add_channel_bias");
  const int n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
  if (bias_nc.shape() != Shape{n, c}) throw ShapeError("add_channel_bias: bias must be N x C");
  Tensor y = x.value();
  for (int s = 0; s < n; ++s)
    for (int ch = 0; ch < c; ++ch) {
      const double b = bias_nc.value()[static_cast<std::size_t>(s) * c + ch];
      double* row = y.data() + (static_cast<std::size_t>(s) * c + ch) * hw;
      for (int p = 0; p < hw; ++p) row[p] += b;
    }
  return Var::make(std::move(y), {x, bias_nc}, [=](Node& nd) {
    if (wants(nd, 0)) pgrad(nd, 0) += nd.grad;
    if (wants(nd, 1)) {
      Tensor& db = pgrad(nd, 1);
      for (int s = 0; s < n; ++s)
        for (int ch = 0; ch < c; ++ch) {
          const double* row = nd.grad.data() + (static_cast<std::size_t>(s) * c + ch) * hw;
          double acc = 0.0;
          for (int p = 0; p < hw; ++p) acc += row[p];
          db[static_cast<std::size_t>(s) * c + ch] += acc;
        }
    }
  });
}

Var avg_pool2(const Var& x) {
  require_rank(x, 4, "avg_pool2");
  const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  if (h % 2 || w % 2) throw ShapeError("avg_pool2: odd spatial size " + shape_string(x.shape()));
  const int ho = h / 2, wo = w / 2;
  Tensor y({n, c, ho, wo});
  const Tensor& xv = x.value();
  for (int sc = 0; sc < n * c; ++sc)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        const std::size_t i0 = (static_cast<std::size_t>(sc) * h + 2 * oy) * w + 2 * ox;
        y[(static_cast<std::size_t>(sc) * ho + oy) * wo + ox] =
            0.25 * (xv[i0] + xv[i0 + 1] + xv[i0 + w] + xv[i0 + w + 1]);
      }
  return Var::make(std::move(y), {x}, [=](Node& nd) {
    Tensor& g = pgrad(nd, 0);
    for (int sc = 0; sc < n * c; ++sc)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          const double d = 0.25 * nd.grad[(static_cast<std::size_t>(sc) * ho + oy) * wo + ox];
          const std::size_t i0 = (static_cast<std::size_t>(sc) * h + 2 * oy) * w + 2 * ox;
          g[i0] += d;
          g[i0 + 1] += d;
          g[i0 + w] += d;
          g[i0 + w + 1] += d;
        }
  });
}

Var upsample2(const Var& x) {
  require_rank(x, 4, "upsample2");
  const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const int ho = 2 * h, wo = 2 * w;
  Tensor y({n, c, ho, wo});
  const Tensor& xv = x.value();
  for (int sc = 0; sc < n * c; ++sc)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox)
        y[(static_cast<std::size_t>(sc) * ho + oy) * wo + ox] =
            xv[(static_cast<std::size_t>(sc) * h + oy / 2) * w + ox / 2];
  return Var::make(std::move(y), {x}, [=](Node& nd) {
    Tensor& g = pgrad(nd, 0);
    for (int sc = 0; sc < n * c; ++sc)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox)
          g[(static_cast<std::size_t>(sc) * h + oy / 2) * w + ox / 2] +=
              nd.grad[(static_cast<std::size_t>(sc) * ho + oy) * wo + ox];
  });
}

Var concat_channels(const Var& a, const Var& b) {
  require_rank(a, 4, "concat_channels");
  require_rank(b, 4, "concat_channels");
  const int n = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
  const int hw = a.shape()[2] * a.shape()[3];
  if (b.shape()[0] != n || b.shape()[2] != a.shape()[2] || b.shape()[3] != a.shape()[3])
    throw ShapeError("concat_channels: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor y({n, ca + cb, a.shape()[2], a.shape()[3]});
  const std::size_t sa = static_cast<std::size_t>(ca) * hw, sb = static_cast<std::size_t>(cb) * hw;
  for (int s = 0; s < n; ++s) {
    std::copy_n(a.value().data() + s * sa, sa, y.data() + s * (sa + sb));
    std::copy_n(b.value().data() + s * sb, sb, y.data() + s * (sa + sb) + sa);
  }
  return Var::make(std::move(y), {a, b}, [=](Node& nd) {
    for (int s = 0; s < n; ++s) {
      const double* gs = nd.grad.data() + s * (sa + sb);
      if (wants(nd, 0)) {
        double* ga = pgrad(nd, 0).data() + s * sa;
        for (std::size_t i = 0; i < sa; ++i) ga[i] += gs[i];
      }
      if (wants(nd, 1)) {
        double* gb = pgrad(nd, 1).data() + s * sb;
        for (std::size_t i = 0; i < sb; ++i) gb[i] += gs[sa + i];
      }
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require_rank(weight, 2, "linear weight");
  const int out = weight.shape()[0], in = weight.shape()[1];
  if (x.shape().empty() || x.shape().back() != in)
    throw ShapeError("linear: input " + shape_string(x.shape()) + " vs weight " + shape_string(weight.shape()));
  const int rows = static_cast<int>(x.value().size() / static_cast<std::size_t>(in));
  Shape out_shape = x.shape();
  out_shape.back() = out;
  Tensor y(out_shape);
  MapMat ym(y.data(), rows, out);
  ConstMapMat xm(x.value().data(), rows, in);
  ConstMapMat wm(weight.value().data(), out, in);
  ym.noalias() = xm * wm.transpose();
  const bool has_bias = bias.defined();
  if (has_bias) ym.rowwise() += ConstMapVec(bias.value().data(), out).transpose();

  std::vector<Var> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return Var::make(std::move(y), std::move(parents), [=](Node& nd) {
    ConstMapMat dy(nd.grad.data(), rows, out);
    if (wants(nd, 0)) {
      ConstMapMat wm(nd.parents[1]->value.data(), out, in);
      MapMat(pgrad(nd, 0).data(), rows, in).noalias() += dy * wm;
    }
    if (wants(nd, 1)) {
      ConstMapMat xm(nd.parents[0]->value.data(), rows, in);
      MapMat(pgrad(nd, 1).data(), out, in).noalias() += dy.transpose() * xm;
    }
    if (has_bias && wants(nd, 2)) MapVec(pgrad(nd, 2).data(), out) += dy.colwise().sum().transpose();
  });
}

Var to_tokens(const Var& x) {
  require_rank(x, 4, "to_tokens");
  const int n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
  Tensor y({n, hw, c});
  for (int s = 0; s < n; ++s)
    MapMat(y.data() + static_cast<std::size_t>(s) * hw * c, hw, c) =
        ConstMapMat(x.value().data() + static_cast<std::size_t>(s) * c * hw, c, hw).transpose();
  return Var::make(std::move(y), {x}, [=](Node& nd) {
    for (int s = 0; s < n; ++s)
      MapMat(pgrad(nd, 0).data() + static_cast<std::size_t>(s) * c * hw, c, hw) +=
          ConstMapMat(nd.grad.data() + static_cast<std::size_t>(s) * hw * c, hw, c).transpose();
  });
}

Var from_tokens(const Var& x, int h, int w) {
  require_rank(x, 3, "from_tokens");
  const int n = x.shape()[0], hw = x.shape()[1], c = x.shape()[2];
  if (hw != h * w) throw ShapeError("from_tokens: token count does not match spatial size");
  Tensor y({n, c, h, w});
  for (int s = 0; s < n; ++s)
    MapMat(y.data() + static_cast<std::size_t>(s) * c * hw, c, hw) =
        ConstMapMat(x.value().data() + static_cast<std::size_t>(s) * hw * c, hw, c).transpose();
  return Var::make(std::move(y), {x}, [=](Node& nd) {
    for (int s = 0; s < n; ++s)
      MapMat(pgrad(nd, 0).data() + static_cast<std::size_t>(s) * hw * c, hw, c) +=
          ConstMapMat(nd.grad.data() + static_cast<std::size_t>(s) * c * hw, c, hw).transpose();
  });
}

Var attention_probs(const Var& q, const Var& k, int heads) {
  require_rank(q, 3, "attention_probs");
  require_rank(k, 3, "attention_probs");
  const int n = q.shape()[0], pq = q.shape()[1], c = q.shape()[2], pk = k.shape()[1];
  if (k.shape()[0] != n || k.shape()[2] != c || c % heads != 0)
    throw ShapeError("attention_probs: q " + shape_string(q.shape()) + " k " + shape_string(k.shape()));
  const int dh = c / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor y({n, heads, pq, pk});
  for (int s = 0; s < n; ++s) {
    ConstMapMat qm(q.value().data() + static_cast<std::size_t>(s) * pq * c, pq, c);
    ConstMapMat km(k.value().data() + static_cast<std::size_t>(s) * pk * c, pk, c);
    for (int hd = 0; hd < heads; ++hd) {
      MapMat pm(y.data() + (static_cast<std::size_t>(s) * heads + hd) * pq * pk, pq, pk);
      pm.noalias() = sc * qm.middleCols(hd * dh, dh) * km.middleCols(hd * dh, dh).transpose();
      for (int r = 0; r < pq; ++r) {
        auto row = pm.row(r);
        row.array() = (row.array() - row.maxCoeff()).exp();
        row /= row.sum();
      }
    }
  }
  return Var::make(std::move(y), {q, k}, [=](Node& nd) {
    RowMat ds(pq, pk);
    for (int s = 0; s < n; ++s) {
      ConstMapMat qm(nd.parents[0]->value.data() + static_cast<std::size_t>(s) * pq * c, pq, c);
      ConstMapMat km(nd.parents[1]->value.data() + static_cast<std::size_t>(s) * pk * c, pk, c);
      for (int hd = 0; hd < heads; ++hd) {
        const std::size_t off = (static_cast<std::size_t>(s) * heads + hd) * pq * pk;
        ConstMapMat pm(nd.value.data() + off, pq, pk);
        ConstMapMat dp(nd.grad.data() + off, pq, pk);
        ds = pm.cwiseProduct(dp);
        const Eigen::VectorXd rs = ds.rowwise().sum();
        ds -= pm.cwiseProduct(rs.replicate(1, pk));
        ds *= sc;
        if (wants(nd, 0))
          MapMat(pgrad(nd, 0).data() + static_cast<std::size_t>(s) * pq * c, pq, c).middleCols(hd * dh, dh).noalias() +=
              ds * km.middleCols(hd * dh, dh);
        if (wants(nd, 1))
          MapMat(pgrad(nd, 1).data() + static_cast<std::size_t>(s) * pk * c, pk, c).middleCols(hd * dh, dh).noalias() +=
              ds.transpose() * qm.middleCols(hd * dh, dh);
      }
    }
  });
}

Var attention_apply(const Var& probs, const Var& v, int heads) {
  require_rank(probs, 4, "attention_apply");
  require_rank(v, 3, "attention_apply");
  const int n = probs.shape()[0], pq = probs.shape()[2], pk = probs.shape()[3], c = v.shape()[2];
  if (probs.shape()[1] != heads || v.shape()[0] != n || v.shape()[1] != pk || c % heads != 0)
    throw ShapeError("attention_apply: probs " + shape_string(probs.shape()) + " v " + shape_string(v.shape()));
  const int dh = c / heads;
  Tensor y({n, pq, c});
  for (int s = 0; s < n; ++s) {
    ConstMapMat vm(v.value().data() + static_cast<std::size_t>(s) * pk * c, pk, c);
    MapMat ym(y.data() + static_cast<std::size_t>(s) * pq * c, pq, c);
    for (int hd = 0; hd < heads; ++hd) {
      ConstMapMat pm(probs.value().data() + (static_cast<std::size_t>(s) * heads + hd) * pq * pk, pq, pk);
      ym.middleCols(hd * dh, dh).noalias() = pm * vm.middleCols(hd * dh, dh);
    }
  }
  return Var::make(std::move(y), {probs, v}, [=](Node& nd) {
    for (int s = 0; s < n; ++s) {
      ConstMapMat vm(nd.parents[1]->value.data() + static_cast<std::size_t>(s) * pk * c, pk, c);
      ConstMapMat dy(nd.grad.data() + static_cast<std::size_t>(s) * pq * c, pq, c);
      for (int hd = 0; hd < heads; ++hd) {
        const std::size_t off = (static_cast<std::size_t>(s) * heads + hd) * pq * pk;
        if (wants(nd, 0))
          MapMat(pgrad(nd, 0).data() + off, pq, pk).noalias() +=
              dy.middleCols(hd * dh, dh) * vm.middleCols(hd * dh, dh).transpose();
        if (wants(nd, 1)) {
          ConstMapMat pm(nd.parents[0]->value.data() + off, pq, pk);
          MapMat(pgrad(nd, 1).data() + static_cast<std::size_t>(s) * pk * c, pk, c).middleCols(hd * dh, dh).noalias() +=
              pm.transpose() * dy.middleCols(hd * dh, dh);
        }
      }
    }
  });
}

Var mse(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mse");
  const std::size_t m = a.value().size();
  double acc = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double d = a.value()[i] - b.value()[i];
    acc += d * d;
  }
  return Var::make(Tensor({1}, acc / static_cast<double>(m)), {a, b}, [m](Node& nd) {
    const double g = nd.grad[0] * 2.0 / static_cast<double>(m);
    const Tensor& av = nd.parents[0]->value;
    const Tensor& bv = nd.parents[1]->value;
    if (wants(nd, 0)) {
      Tensor& ga = pgrad(nd, 0);
      for (std::size_t i = 0; i < m; ++i) ga[i] += g * (av[i] - bv[i]);
    }
    if (wants(nd, 1)) {
      Tensor& gb = pgrad(nd, 1);
      for (std::size_t i = 0; i < m; ++i) gb[i] -= g * (av[i] - bv[i]);
    }
  });
}

Var mean_of(const std::vector<Var>& scalars) {
  if (scalars.empty()) throw ShapeError("mean_of: no inputs");
  double acc = 0.0;
  for (const Var& s : scalars) {
    if (s.value().size() != 1) throw ShapeError("mean_of: inputs must be scalars");
    acc += s.value()[0];
  }
  const double inv = 1.0 / static_cast<double>(scalars.size());
  return Var::make(Tensor({1}, acc * inv), scalars, [inv](Node& nd) {
    for (std::size_t i = 0; i < nd.parents.size(); ++i)
      if (wants(nd, i)) pgrad(nd, i)[0] += inv * nd.grad[0];
  });
}

}  // namespace freeevent::ad
