#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

#include <cmath>
#include <cstring>

#include "plda/autodiff.hpp"
#include "plda/rng.hpp"

namespace plda::ad {

using MatRM = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapCM = Eigen::Map<const MatRM>;

Var Tape::leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->val = std::move(value);
  n->requires_grad = requires_grad;
  if (requires_grad) n->grad = Tensor(n->val.shape);
  order_.push_back(n);
  return n;
}

Var Tape::make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backfn) {
  auto n = std::make_shared<Node>();
  n->val = std::move(value);
  for (const auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) {
    n->grad = Tensor(n->val.shape);
    n->parents = std::move(parents);
    n->backfn = std::move(backfn);
  }
  order_.push_back(n);
  return n;
}

void Tape::backward(const Var& root) {
  check(root->val.numel() == 1, "backward: root must be a scalar");
  check(root->requires_grad, "backward: root does not depend on any parameter");
  root->grad.v[0] = 1.0;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node& n = **it;
    if (n.requires_grad && n.backfn) n.backfn(n);
  }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Var add(Tape& t, const Var& a, const Var& b) {
  check(a->val.same_shape(b->val), "add: shape mismatch " + a->val.shape_str() + " vs " +
                                       b->val.shape_str());
  Tensor out = a->val;
  for (std::int64_t i = 0; i < out.numel(); ++i) out.v[i] += b->val.v[i];
  return t.make(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad)
      for (std::int64_t i = 0; i < n.grad.numel(); ++i) a->grad.v[i] += n.grad.v[i];
    if (b->requires_grad)
      for (std::int64_t i = 0; i < n.grad.numel(); ++i) b->grad.v[i] += n.grad.v[i];
  });
}

Var add_scalar(Tape& t, const Var& a, const Var& b) {
  check(b->val.numel() == 1, "add_scalar: rhs must be scalar");
  Tensor out = a->val;
  for (auto& x : out.v) x += b->val.v[0];
  return t.make(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad)
      for (std::int64_t i = 0; i < n.grad.numel(); ++i) a->grad.v[i] += n.grad.v[i];
    if (b->requires_grad)
      for (std::int64_t i = 0; i < n.grad.numel(); ++i) b->grad.v[0] += n.grad.v[i];
  });
}

Var sub(Tape& t, const Var& a, const Var& b) {
  check(a->val.same_shape(b->val), "sub: shape mismatch");
  Tensor out = a->val;
  for (std::int64_t i = 0; i < out.numel(); ++i) out.v[i] -= b->val.v[i];
  return t.make(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad)
      for (std::int64_t i = 0; i < n.grad.numel(); ++i) a->grad.v[i] += n.grad.v[i];
    if (b->requires_grad)
      for (std::int64_t i = 0; i < n.grad.numel(); ++i) b->grad.v[i] -= n.grad.v[i];
  });
}

Var mul(Tape& t, const Var& a, const Var& b) {
  check(a->val.same_shape(b->val), "mul: shape mismatch");
  Tensor out = a->val;
  for (std::int64_t i = 0; i < out.numel(); ++i) out.v[i] *= b->val.v[i];
  return t.make(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad)
      for (std::int64_t i = 0; i < n.grad.numel(); ++i)
        a->grad.v[i] += n.grad.v[i] * b->val.v[i];
    if (b->requires_grad)
      for (std::int64_t i = 0; i < n.grad.numel(); ++i)
        b->grad.v[i] += n.grad.v[i] * a->val.v[i];
  });
}

Var affine(Tape& t, const Var& a, real k, real c) {
  Tensor out = a->val;
  for (auto& x : out.v) x = k * x + c;
  return t.make(std::move(out), {a}, [a, k](Node& n) {
    for (std::int64_t i = 0; i < n.grad.numel(); ++i) a->grad.v[i] += k * n.grad.v[i];
  });
}

Var mul_mask(Tape& t, const Var& a, const Tensor& mask) {
  check(a->val.same_shape(mask), "mul_mask: shape mismatch");
  Tensor out = a->val;
  for (std::int64_t i = 0; i < out.numel(); ++i) out.v[i] *= mask.v[i];
  Tensor m = mask;
  return t.make(std::move(out), {a}, [a, m = std::move(m)](Node& n) {
    for (std::int64_t i = 0; i < n.grad.numel(); ++i) a->grad.v[i] += n.grad.v[i] * m.v[i];
  });
}

Var pow_scalar(Tape& t, const Var& a, real p) {
  Tensor out = a->val;
  for (auto& x : out.v) x = std::pow(x, p);
  return t.make(std::move(out), {a}, [a, p](Node& n) {
    for (std::int64_t i = 0; i < n.grad.numel(); ++i) {
      real x = a->val.v[i];
      real d = (x == 0 && p < 1) ? 0 : p * std::pow(x, p - 1);
      a->grad.v[i] += n.grad.v[i] * d;
    }
  });
}

Var sum_all(Tape& t, const Var& a) {
  real s = 0;
  for (real x : a->val.v) s += x;
  return t.make(Tensor::scalar(s), {a}, [a](Node& n) {
    for (auto& g : a->grad.v) g += n.grad.v[0];
  });
}

// ---------------------------------------------------------------------------
// shape / gather
// ---------------------------------------------------------------------------

Var concat_ch(Tape& t, const Var& a, const Var& b) {
  check(a->val.rank() == 3 && b->val.rank() == 3 && a->val.dim(1) == b->val.dim(1) &&
            a->val.dim(2) == b->val.dim(2),
        "concat_ch: spatial shape mismatch");
  int ca = a->val.dim(0), cb = b->val.dim(0), h = a->val.dim(1), w = a->val.dim(2);
  Tensor out({ca + cb, h, w});
  std::memcpy(out.v.data(), a->val.v.data(), sizeof(real) * a->val.numel());
  std::memcpy(out.v.data() + a->val.numel(), b->val.v.data(), sizeof(real) * b->val.numel());
  return t.make(std::move(out), {a, b}, [a, b](Node& n) {
    std::int64_t na = a->val.numel();
    if (a->requires_grad)
      for (std::int64_t i = 0; i < na; ++i) a->grad.v[i] += n.grad.v[i];
    if (b->requires_grad)
      for (std::int64_t i = 0; i < b->val.numel(); ++i) b->grad.v[i] += n.grad.v[na + i];
  });
}

Var concat_rows(Tape& t, const Var& a, const Var& b) {
  check(a->val.rank() == 2 && b->val.rank() == 2 && a->val.dim(1) == b->val.dim(1),
        "concat_rows: column count mismatch");
  Tensor out({a->val.dim(0) + b->val.dim(0), a->val.dim(1)});
  std::memcpy(out.v.data(), a->val.v.data(), sizeof(real) * a->val.numel());
  std::memcpy(out.v.data() + a->val.numel(), b->val.v.data(), sizeof(real) * b->val.numel());
  return t.make(std::move(out), {a, b}, [a, b](Node& n) {
    std::int64_t na = a->val.numel();
    if (a->requires_grad)
      for (std::int64_t i = 0; i < na; ++i) a->grad.v[i] += n.grad.v[i];
    if (b->requires_grad)
      for (std::int64_t i = 0; i < b->val.numel(); ++i) b->grad.v[i] += n.grad.v[na + i];
  });
}

Var gather_rows(Tape& t, const Var& z, const std::vector<int>& pix) {
  check(z->val.rank() == 3, "gather_rows: expected [D,h,w]");
  int d = z->val.dim(0);
  int hw = z->val.dim(1) * z->val.dim(2);
  int n_rows = static_cast<int>(pix.size());
  for (int p : pix) check(p >= 0 && p < hw, "gather_rows: pixel index out of range");
  Tensor out({n_rows, d});
  for (int i = 0; i < n_rows; ++i)
    for (int k = 0; k < d; ++k) out.at2(i, k) = z->val.v[static_cast<size_t>(k) * hw + pix[i]];
  auto idx = std::make_shared<std::vector<int>>(pix);
  return t.make(std::move(out), {z}, [z, idx, d, hw](Node& n) {
    for (size_t i = 0; i < idx->size(); ++i)
      for (int k = 0; k < d; ++k)
        z->grad.v[static_cast<size_t>(k) * hw + (*idx)[i]] += n.grad.at2(static_cast<int>(i), k);
  });
}

Var select_head_rows(Tape& t, const Var& logits, const std::vector<int>& cls) {
  check(logits->val.rank() == 3, "select_head_rows: expected [N,C,2]");
  int n_rows = logits->val.dim(0), c = logits->val.dim(1), k = logits->val.dim(2);
  check(static_cast<int>(cls.size()) == n_rows, "select_head_rows: class list size mismatch");
  for (int ci : cls) check(ci >= 0 && ci < c, "select_head_rows: class index out of range");
  Tensor out({n_rows, k});
  for (int i = 0; i < n_rows; ++i)
    for (int j = 0; j < k; ++j)
      out.at2(i, j) = logits->val.v[(static_cast<size_t>(i) * c + cls[i]) * k + j];
  auto idx = std::make_shared<std::vector<int>>(cls);
  return t.make(std::move(out), {logits}, [logits, idx, c, k](Node& n) {
    for (size_t i = 0; i < idx->size(); ++i)
      for (int j = 0; j < k; ++j)
        logits->grad.v[(i * c + (*idx)[i]) * k + j] += n.grad.at2(static_cast<int>(i), j);
  });
}

// ---------------------------------------------------------------------------
// neural net ops
// ---------------------------------------------------------------------------

namespace {

// im2col for 3x3 kernels, pad 1. cols is [Cin*9, Ho*Wo].
void im2col3(const Tensor& x, int stride, MatRM& cols, int ho, int wo) {
  int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  cols.setZero(cin * 9, ho * wo);
  for (int ci = 0; ci < cin; ++ci)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        real* dst = cols.row(ci * 9 + ky * 3 + kx).data();
        for (int oy = 0; oy < ho; ++oy) {
          int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= h) continue;
          const real* src = &x.v[(static_cast<size_t>(ci) * h + iy) * w];
          for (int ox = 0; ox < wo; ++ox) {
            int ix = ox * stride + kx - 1;
            if (ix >= 0 && ix < w) dst[oy * wo + ox] = src[ix];
          }
        }
      }
}

void col2im3(const MatRM& cols, int stride, Tensor& dx, int ho, int wo) {
  int cin = dx.dim(0), h = dx.dim(1), w = dx.dim(2);
  for (int ci = 0; ci < cin; ++ci)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const real* src = cols.row(ci * 9 + ky * 3 + kx).data();
        for (int oy = 0; oy < ho; ++oy) {
          int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= h) continue;
          real* dst = &dx.v[(static_cast<size_t>(ci) * h + iy) * w];
          for (int ox = 0; ox < wo; ++ox) {
            int ix = ox * stride + kx - 1;
            if (ix >= 0 && ix < w) dst[ix] += src[oy * wo + ox];
          }
        }
      }
}

}  // namespace

Var conv2d(Tape& t, const Var& x, const Var& w, const Var& b, int stride) {
  check(x->val.rank() == 3 && w->val.rank() == 4, "conv2d: bad input ranks");
  int cin = x->val.dim(0), h = x->val.dim(1), wd = x->val.dim(2);
  int cout = w->val.dim(0);
  check(w->val.dim(1) == cin && w->val.dim(2) == 3 && w->val.dim(3) == 3,
        "conv2d: weight shape mismatch, got " + w->val.shape_str());
  int ho = (h + 2 - 3) / stride + 1;
  int wo = (wd + 2 - 3) / stride + 1;

  auto cols = std::make_shared<MatRM>();
  im2col3(x->val, stride, *cols, ho, wo);

  Tensor out({cout, ho, wo});
  MapCM wm(w->val.v.data(), cout, cin * 9);
  MapM om(out.v.data(), cout, ho * wo);
  om.noalias() = wm * (*cols);
  if (b) {
    check(b->val.numel() == cout, "conv2d: bias size mismatch");
    for (int co = 0; co < cout; ++co) om.row(co).array() += b->val.v[co];
  }

  std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  return t.make(std::move(out), std::move(parents),
                [x, w, b, cols, stride, cin, cout, ho, wo](Node& n) {
                  MapCM gm(n.grad.v.data(), cout, ho * wo);
                  if (w->requires_grad) {
                    MapM dwm(w->grad.v.data(), cout, cin * 9);
                    dwm.noalias() += gm * cols->transpose();
                  }
                  if (b && b->requires_grad)
                    for (int co = 0; co < cout; ++co) b->grad.v[co] += gm.row(co).sum();
                  if (x->requires_grad) {
                    MapCM wm(w->val.v.data(), cout, cin * 9);
                    MatRM dcols = wm.transpose() * gm;
                    col2im3(dcols, stride, x->grad, ho, wo);
                  }
                });
}

Var conv1x1(Tape& t, const Var& x, const Var& w) {
  check(x->val.rank() == 3 && w->val.rank() == 2, "conv1x1: bad input ranks");
  int cin = x->val.dim(0), hw = x->val.dim(1) * x->val.dim(2);
  int cout = w->val.dim(0);
  check(w->val.dim(1) == cin, "conv1x1: weight/feature dimension mismatch");
  Tensor out({cout, x->val.dim(1), x->val.dim(2)});
  MapCM xm(x->val.v.data(), cin, hw);
  MapCM wm(w->val.v.data(), cout, cin);
  MapM om(out.v.data(), cout, hw);
  om.noalias() = wm * xm;
  return t.make(std::move(out), {x, w}, [x, w, cin, cout, hw](Node& n) {
    MapCM gm(n.grad.v.data(), cout, hw);
    if (w->requires_grad) {
      MapCM xm(x->val.v.data(), cin, hw);
      MapM dwm(w->grad.v.data(), cout, cin);
      dwm.noalias() += gm * xm.transpose();
    }
    if (x->requires_grad) {
      MapCM wm(w->val.v.data(), cout, cin);
      MapM dxm(x->grad.v.data(), cin, hw);
      dxm.noalias() += wm.transpose() * gm;
    }
  });
}

Var linear(Tape& t, const Var& x, const Var& w, const Var& b) {
  check(x->val.rank() == 2 && w->val.rank() == 2, "linear: bad input ranks");
  int n_rows = x->val.dim(0), din = x->val.dim(1), dout = w->val.dim(0);
  check(w->val.dim(1) == din, "linear: weight/feature dimension mismatch (features " +
                                  std::to_string(din) + ", weight expects " +
                                  std::to_string(w->val.dim(1)) + ")");
  Tensor out({n_rows, dout});
  MapCM xm(x->val.v.data(), n_rows, din);
  MapCM wm(w->val.v.data(), dout, din);
  MapM om(out.v.data(), n_rows, dout);
  om.noalias() = xm * wm.transpose();
  if (b) {
    check(b->val.numel() == dout, "linear: bias size mismatch");
    for (int i = 0; i < n_rows; ++i)
      for (int j = 0; j < dout; ++j) om(i, j) += b->val.v[j];
  }
  std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  return t.make(std::move(out), std::move(parents), [x, w, b, n_rows, din, dout](Node& n) {
    MapCM gm(n.grad.v.data(), n_rows, dout);
    if (w->requires_grad) {
      MapCM xm(x->val.v.data(), n_rows, din);
      MapM dwm(w->grad.v.data(), dout, din);
      dwm.noalias() += gm.transpose() * xm;
    }
    if (b && b->requires_grad)
      for (int i = 0; i < n_rows; ++i)
        for (int j = 0; j < dout; ++j) b->grad.v[j] += gm(i, j);
    if (x->requires_grad) {
      MapCM wm(w->val.v.data(), dout, din);
      MapM dxm(x->grad.v.data(), n_rows, din);
      dxm.noalias() += gm * wm;
    }
  });
}

Var pixel_norm(Tape& t, const Var& x, const Var& gamma, const Var& beta, real eps) {
  check(x->val.rank() == 3, "pixel_norm: expected [C,H,W]");
  int c = x->val.dim(0), h = x->val.dim(1), w = x->val.dim(2);
  check(gamma->val.numel() == c && beta->val.numel() == c, "pixel_norm: affine size mismatch");
  std::int64_t hw = static_cast<std::int64_t>(h) * w;

  auto xhat = std::make_shared<Tensor>(x->val.shape);
  auto inv_std = std::make_shared<std::vector<real>>(hw);
  Tensor out(x->val.shape);
  for (std::int64_t p = 0; p < hw; ++p) {
    real mean = 0;
    for (int ci = 0; ci < c; ++ci) mean += x->val.v[ci * hw + p];
    mean /= c;
    real var = 0;
    for (int ci = 0; ci < c; ++ci) {
      real d = x->val.v[ci * hw + p] - mean;
      var += d * d;
    }
    var /= c;
    real is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[p] = is;
    for (int ci = 0; ci < c; ++ci) {
      real xh = (x->val.v[ci * hw + p] - mean) * is;
      xhat->v[ci * hw + p] = xh;
      out.v[ci * hw + p] = gamma->val.v[ci] * xh + beta->val.v[ci];
    }
  }
  return t.make(std::move(out), {x, gamma, beta},
                [x, gamma, beta, xhat, inv_std, c, hw](Node& n) {
                  if (gamma->requires_grad || beta->requires_grad) {
                    for (int ci = 0; ci < c; ++ci)
                      for (std::int64_t p = 0; p < hw; ++p) {
                        real g = n.grad.v[ci * hw + p];
                        if (gamma->requires_grad) gamma->grad.v[ci] += g * xhat->v[ci * hw + p];
                        if (beta->requires_grad) beta->grad.v[ci] += g;
                      }
                  }
                  if (!x->requires_grad) return;
                  for (std::int64_t p = 0; p < hw; ++p) {
                    real sum_gy = 0, sum_gy_xhat = 0;
                    for (int ci = 0; ci < c; ++ci) {
                      real gy = n.grad.v[ci * hw + p] * gamma->val.v[ci];
                      sum_gy += gy;
                      sum_gy_xhat += gy * xhat->v[ci * hw + p];
                    }
                    real mg = sum_gy / c;
                    real mgx = sum_gy_xhat / c;
                    real is = (*inv_std)[p];
                    for (int ci = 0; ci < c; ++ci) {
                      real gy = n.grad.v[ci * hw + p] * gamma->val.v[ci];
                      x->grad.v[ci * hw + p] += is * (gy - mg - xhat->v[ci * hw + p] * mgx);
                    }
                  }
                });
}

Var relu(Tape& t, const Var& x) {
  Tensor out = x->val;
  for (auto& v : out.v) v = v > 0 ? v : 0;
  return t.make(std::move(out), {x}, [x](Node& n) {
    for (std::int64_t i = 0; i < n.grad.numel(); ++i)
      if (x->val.v[i] > 0) x->grad.v[i] += n.grad.v[i];
  });
}

Var dropout(Tape& t, const Var& x, real p, std::uint64_t seed, bool enabled) {
  if (!enabled || p <= 0) return x;
  check(p < 1, "dropout: rate must be < 1");
  Rng rng(seed);
  auto mask = std::make_shared<std::vector<real>>(x->val.numel());
  real keep = 1.0 / (1.0 - p);
  Tensor out = x->val;
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    real m = rng.uniform() >= p ? keep : 0;
    (*mask)[i] = m;
    out.v[i] *= m;
  }
  return t.make(std::move(out), {x}, [x, mask](Node& n) {
    for (std::int64_t i = 0; i < n.grad.numel(); ++i)
      x->grad.v[i] += n.grad.v[i] * (*mask)[i];
  });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Var gap(Tape& t, const Var& x) {
  check(x->val.rank() == 3, "gap: expected [C,h,w]");
  int c = x->val.dim(0);
  std::int64_t hw = static_cast<std::int64_t>(x->val.dim(1)) * x->val.dim(2);
  Tensor out({c});
  for (int ci = 0; ci < c; ++ci) {
    real s = 0;
    for (std::int64_t i = 0; i < hw; ++i) s += x->val.v[ci * hw + i];
    out.v[ci] = s / static_cast<real>(hw);
  }
  return t.make(std::move(out), {x}, [x, c, hw](Node& n) {
    for (int ci = 0; ci < c; ++ci) {
      real g = n.grad.v[ci] / static_cast<real>(hw);
      for (std::int64_t i = 0; i < hw; ++i) x->grad.v[ci * hw + i] += g;
    }
  });
}

Var spatial_max(Tape& t, const Var& x) {
  check(x->val.rank() == 3, "spatial_max: expected [C,h,w]");
  int c = x->val.dim(0);
  std::int64_t hw = static_cast<std::int64_t>(x->val.dim(1)) * x->val.dim(2);
  Tensor out({c});
  auto amax = std::make_shared<std::vector<std::int64_t>>(c);
  for (int ci = 0; ci < c; ++ci) {
    std::int64_t best = 0;
    for (std::int64_t i = 1; i < hw; ++i)
      if (x->val.v[ci * hw + i] > x->val.v[ci * hw + best]) best = i;
    (*amax)[ci] = best;
    out.v[ci] = x->val.v[ci * hw + best];
  }
  return t.make(std::move(out), {x}, [x, amax, c, hw](Node& n) {
    for (int ci = 0; ci < c; ++ci) x->grad.v[ci * hw + (*amax)[ci]] += n.grad.v[ci];
  });
}

Var channel_max(Tape& t, const Var& x) {
  check(x->val.rank() == 3, "channel_max: expected [C,h,w]");
  int c = x->val.dim(0), h = x->val.dim(1), w = x->val.dim(2);
  std::int64_t hw = static_cast<std::int64_t>(h) * w;
  Tensor out({1, h, w});
  auto amax = std::make_shared<std::vector<int>>(hw);
  for (std::int64_t p = 0; p < hw; ++p) {
    int best = 0;
    for (int ci = 1; ci < c; ++ci)
      if (x->val.v[ci * hw + p] > x->val.v[best * hw + p]) best = ci;
    (*amax)[p] = best;
    out.v[p] = x->val.v[best * hw + p];
  }
  return t.make(std::move(out), {x}, [x, amax, hw](Node& n) {
    for (std::int64_t p = 0; p < hw; ++p)
      x->grad.v[(*amax)[p] * hw + p] += n.grad.v[p];
  });
}

Var cam_normalize(Tape& t, const Var& raw) {
  check(raw->val.rank() == 3, "cam_normalize: expected [C,h,w]");
  int c = raw->val.dim(0);
  std::int64_t hw = static_cast<std::int64_t>(raw->val.dim(1)) * raw->val.dim(2);
  Tensor out(raw->val.shape);
  auto amax = std::make_shared<std::vector<std::int64_t>>(c);
  auto maxv = std::make_shared<std::vector<real>>(c);
  for (int ci = 0; ci < c; ++ci) {
    std::int64_t best = 0;
    for (std::int64_t i = 1; i < hw; ++i)
      if (raw->val.v[ci * hw + i] > raw->val.v[ci * hw + best]) best = i;
    real m = raw->val.v[ci * hw + best];
    (*amax)[ci] = best;
    (*maxv)[ci] = m;
    if (m > 0)
      for (std::int64_t i = 0; i < hw; ++i) out.v[ci * hw + i] = raw->val.v[ci * hw + i] / m;
  }
  return t.make(std::move(out), {raw}, [raw, amax, maxv, c, hw](Node& n) {
    for (int ci = 0; ci < c; ++ci) {
      real m = (*maxv)[ci];
      if (m <= 0) continue;
      real dot = 0;
      for (std::int64_t i = 0; i < hw; ++i)
        dot += n.grad.v[ci * hw + i] * n.val.v[ci * hw + i];
      for (std::int64_t i = 0; i < hw; ++i)
        raw->grad.v[ci * hw + i] += n.grad.v[ci * hw + i] / m;
      raw->grad.v[ci * hw + (*amax)[ci]] -= dot / m;
    }
  });
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

Var bce_logits_mean(Tape& t, const Var& scores, const Tensor& label) {
  check(scores->val.numel() == label.numel(), "bce: score/label size mismatch");
  int c = static_cast<int>(scores->val.numel());
  real loss = 0;
  for (int i = 0; i < c; ++i) {
    real s = scores->val.v[i], y = label.v[i];
    loss += std::max(s, real(0)) - s * y + std::log1p(std::exp(-std::abs(s)));
  }
  loss /= static_cast<real>(c);
  Tensor lab = label;
  return t.make(Tensor::scalar(loss), {scores}, [scores, lab = std::move(lab), c](Node& n) {
    real g = n.grad.v[0] / static_cast<real>(c);
    for (int i = 0; i < c; ++i) {
      real s = scores->val.v[i];
      real sig = 1.0 / (1.0 + std::exp(-s));
      scores->grad.v[i] += g * (sig - lab.v[i]);
    }
  });
}

Var ce_rows_sum(Tape& t, const Var& logits, const std::vector<int>& target,
                const std::vector<real>& row_weight) {
  check(logits->val.rank() == 2, "ce_rows_sum: expected [N,K]");
  int n_rows = logits->val.dim(0), k = logits->val.dim(1);
  check(static_cast<int>(target.size()) == n_rows && row_weight.size() == target.size(),
        "ce_rows_sum: target/weight size mismatch");
  real loss = 0;
  for (int i = 0; i < n_rows; ++i) {
    check(target[i] >= 0 && target[i] < k, "ce_rows_sum: target index out of range");
    const real* l = &logits->val.v[static_cast<size_t>(i) * k];
    real mx = l[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, l[j]);
    real se = 0;
    for (int j = 0; j < k; ++j) se += std::exp(l[j] - mx);
    loss += row_weight[i] * (mx + std::log(se) - l[target[i]]);
  }
  auto tgt = std::make_shared<std::vector<int>>(target);
  auto wts = std::make_shared<std::vector<real>>(row_weight);
  return t.make(Tensor::scalar(loss), {logits}, [logits, tgt, wts, n_rows, k](Node& n) {
    real g0 = n.grad.v[0];
    for (int i = 0; i < n_rows; ++i) {
      const real* l = &logits->val.v[static_cast<size_t>(i) * k];
      real* gl = &logits->grad.v[static_cast<size_t>(i) * k];
      real mx = l[0];
      for (int j = 1; j < k; ++j) mx = std::max(mx, l[j]);
      real se = 0;
      for (int j = 0; j < k; ++j) se += std::exp(l[j] - mx);
      real gw = g0 * (*wts)[i];
      for (int j = 0; j < k; ++j) {
        real p = std::exp(l[j] - mx) / se;
        gl[j] += gw * (p - (j == (*tgt)[i] ? 1 : 0));
      }
    }
  });
}

Var grl(Tape& t, const Var& x, real lambda) {
  check(lambda >= 0, "grl: lambda must be nonnegative");
  Tensor out = x->val;
  return t.make(std::move(out), {x}, [x, lambda](Node& n) {
    for (std::int64_t i = 0; i < n.grad.numel(); ++i)
      x->grad.v[i] -= lambda * n.grad.v[i];
  });
}

}  // namespace plda::ad
