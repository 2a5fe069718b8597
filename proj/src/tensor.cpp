/* headsel - learned attention-head sharing for multi-task sequence models.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 */

#include "headsel/tensor.h"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>

#include "headsel/rng.h"

namespace headsel {

namespace {

thread_local Graph* g_recording = nullptr;

int numel(const std::vector<int>& shape) {
  int n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor dimension must be positive");
    n *= d;
  }
  return n;
}

// Marks `out` as a tracked intermediate and records its backward step.
// No-op when nothing upstream requires a gradient or no graph is recording.
void track(Tensor& out, bool any_input_grad, std::function<void()> back) {
  Graph* g = g_recording;
  if (!g || !any_input_grad) return;
  auto impl = out.impl();
  impl->requires_grad = true;
  impl->leaf = false;
  impl->grad.assign(impl->value.size(), 0.0);
  g->record(impl, std::move(back));
}

bool wants(const Tensor& t) { return t.requires_grad(); }

[[noreturn]] void dim_error(const std::string& op, const std::vector<int>& a,
                            const std::vector<int>& b) {
  throw std::invalid_argument(op + ": incompatible shapes " + shape_str(a) + " and " +
                              shape_str(b));
}

}  // namespace

std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
  int n = numel(shape);
  if (n != static_cast<int>(data.size()))
    throw std::invalid_argument("tensor: shape " + shape_str(shape) + " wants " +
                                std::to_string(n) + " values, got " +
                                std::to_string(data.size()));
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->value = std::move(data);
  impl_->requires_grad = requires_grad;
  if (requires_grad) impl_->grad.assign(impl_->value.size(), 0.0);
}

Tensor::Tensor(std::vector<int> shape, double fill, bool requires_grad) {
  int n = numel(shape);
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->value.assign(static_cast<std::size_t>(n), fill);
  impl_->requires_grad = requires_grad;
  if (requires_grad) impl_->grad.assign(impl_->value.size(), 0.0);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor({1}, std::vector<double>{v}, requires_grad);
}

std::vector<double>& Tensor::grad() {
  if (!impl_->requires_grad) throw std::logic_error("tensor has no gradient buffer");
  return impl_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (!impl_->requires_grad) throw std::logic_error("tensor has no gradient buffer");
  return impl_->grad;
}

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item(): tensor is not scalar, shape " +
                                               shape_str(impl_->shape));
  return impl_->value[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
  const auto& sh = impl_->shape;
  if (idx.size() != sh.size()) throw std::invalid_argument("at(): rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (int i : idx) {
    flat = flat * static_cast<std::size_t>(sh[axis]) + static_cast<std::size_t>(i);
    ++axis;
  }
  return impl_->value[flat];
}

void Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  if (on && impl_->grad.size() != impl_->value.size())
    impl_->grad.assign(impl_->value.size(), 0.0);
}

void Tensor::zero_grad() {
  if (impl_->requires_grad) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Graph::record(std::shared_ptr<TensorImpl> out, std::function<void()> back) {
  nodes_.push_back({std::move(out), std::move(back)});
}

void Graph::backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, shape " +
                                shape_str(loss.shape()));
  // non-leaf grads are scratch: reset them, keep leaf accumulation intact
  for (auto& n : nodes_) std::fill(n.out->grad.begin(), n.out->grad.end(), 0.0);
  if (loss.requires_grad()) loss.impl()->grad[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->back();
}

Recording::Recording(Graph& g) : prev_(g_recording) { g_recording = &g; }
Recording::~Recording() { g_recording = prev_; }

Graph* recording_graph() { return g_recording; }

// ---- op helpers -----------------------------------------------------------

namespace {

Tensor raw(std::vector<int> shape) { return Tensor(std::move(shape), 0.0, false); }

void mm_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  // c[m x n] += a[m x k] * b[k x n]
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<std::ptrdiff_t>(i) * k;
    double* ci = c + static_cast<std::ptrdiff_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      double av = ai[kk];
      if (av == 0.0) continue;
      const double* bk = b + static_cast<std::ptrdiff_t>(kk) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bk[j];
    }
  }
}

void mm_nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  // c[m x n] += a[m x k] * b[n x k]^T
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<std::ptrdiff_t>(i) * k;
    double* ci = c + static_cast<std::ptrdiff_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + static_cast<std::ptrdiff_t>(j) * k;
      double s = 0.0;
      for (int kk = 0; kk < k; ++kk) s += ai[kk] * bj[kk];
      ci[j] += s;
    }
  }
}

void mm_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  // c[k x n] += a[m x k]^T * b[m x n]
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<std::ptrdiff_t>(i) * k;
    const double* bi = b + static_cast<std::ptrdiff_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      double av = ai[kk];
      if (av == 0.0) continue;
      double* ck = c + static_cast<std::ptrdiff_t>(kk) * n;
      for (int j = 0; j < n; ++j) ck[j] += av * bi[j];
    }
  }
}

// Resolves the broadcast layout for elementwise binary ops: returns true if
// a is the larger operand. Broadcasting is leading-axes only: the smaller
// operand, after stripping leading 1-dims, must equal a trailing suffix of
// the larger shape (or be scalar).
bool broadcast_layout(const std::string& op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return true;
  const Tensor& big = a.size() >= b.size() ? a : b;
  const Tensor& small = a.size() >= b.size() ? b : a;
  if (small.size() == 1) return a.size() >= b.size();
  const auto& bs = big.shape();
  std::vector<int> ss = small.shape();
  while (!ss.empty() && ss.front() == 1) ss.erase(ss.begin());
  if (ss.size() > bs.size()) dim_error(op, a.shape(), b.shape());
  for (std::size_t i = 0; i < ss.size(); ++i)
    if (ss[i] != bs[bs.size() - ss.size() + i]) dim_error(op, a.shape(), b.shape());
  return a.size() >= b.size();
}

}  // namespace

// ---- ops ------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    dim_error("matmul", a.shape(), b.shape());
  int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = raw({m, n});
  mm_acc(a.value().data(), b.value().data(), out.value().data(), m, k, n);
  track(out, wants(a) || wants(b), [ai = a.impl(), bi = b.impl(), oi = out.impl(), m, k, n] {
    if (ai->requires_grad)
      mm_nt_acc(oi->grad.data(), bi->value.data(), ai->grad.data(), m, n, k);
    if (bi->requires_grad)
      mm_tn_acc(ai->value.data(), oi->grad.data(), bi->grad.data(), m, k, n);
  });
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("transpose: rank-2 only, got " +
                                                 shape_str(a.shape()));
  int m = a.dim(0), n = a.dim(1);
  Tensor out = raw({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.value()[static_cast<std::size_t>(j) * m + i] =
          a.value()[static_cast<std::size_t>(i) * n + j];
  track(out, wants(a), [ai = a.impl(), oi = out.impl(), m, n] {
    if (!ai->requires_grad) return;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        ai->grad[static_cast<std::size_t>(i) * n + j] +=
            oi->grad[static_cast<std::size_t>(j) * m + i];
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  bool a_big = broadcast_layout("add", a, b);
  const Tensor& big = a_big ? a : b;
  const Tensor& small = a_big ? b : a;
  std::size_t bn = big.value().size(), sn = small.value().size();
  Tensor out = raw(big.shape());
  for (std::size_t i = 0; i < bn; ++i)
    out.value()[i] = big.value()[i] + small.value()[i % sn];
  track(out, wants(a) || wants(b), [bi = big.impl(), si = small.impl(), oi = out.impl(), bn, sn] {
    if (bi->requires_grad)
      for (std::size_t i = 0; i < bn; ++i) bi->grad[i] += oi->grad[i];
    if (si->requires_grad)
      for (std::size_t i = 0; i < bn; ++i) si->grad[i % sn] += oi->grad[i];
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  bool a_big = broadcast_layout("mul", a, b);
  const Tensor& big = a_big ? a : b;
  const Tensor& small = a_big ? b : a;
  std::size_t bn = big.value().size(), sn = small.value().size();
  Tensor out = raw(big.shape());
  for (std::size_t i = 0; i < bn; ++i)
    out.value()[i] = big.value()[i] * small.value()[i % sn];
  track(out, wants(a) || wants(b), [bi = big.impl(), si = small.impl(), oi = out.impl(), bn, sn] {
    if (bi->requires_grad)
      for (std::size_t i = 0; i < bn; ++i) bi->grad[i] += oi->grad[i] * si->value[i % sn];
    if (si->requires_grad)
      for (std::size_t i = 0; i < bn; ++i) si->grad[i % sn] += oi->grad[i] * bi->value[i];
  });
  return out;
}

Tensor affine(const Tensor& x, double scale, double shift) {
  Tensor out = raw(x.shape());
  for (std::size_t i = 0; i < x.value().size(); ++i)
    out.value()[i] = scale * x.value()[i] + shift;
  track(out, wants(x), [xi = x.impl(), oi = out.impl(), scale] {
    if (!xi->requires_grad) return;
    for (std::size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += scale * oi->grad[i];
  });
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = raw(x.shape());
  for (std::size_t i = 0; i < x.value().size(); ++i)
    out.value()[i] = x.value()[i] > 0.0 ? x.value()[i] : 0.0;
  track(out, wants(x), [xi = x.impl(), oi = out.impl()] {
    if (!xi->requires_grad) return;
    for (std::size_t i = 0; i < xi->grad.size(); ++i)
      if (xi->value[i] > 0.0) xi->grad[i] += oi->grad[i];
  });
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = raw(x.shape());
  for (std::size_t i = 0; i < x.value().size(); ++i)
    out.value()[i] = 1.0 / (1.0 + std::exp(-x.value()[i]));
  track(out, wants(x), [xi = x.impl(), oi = out.impl()] {
    if (!xi->requires_grad) return;
    for (std::size_t i = 0; i < xi->grad.size(); ++i) {
      double y = oi->value[i];
      xi->grad[i] += oi->grad[i] * y * (1.0 - y);
    }
  });
  return out;
}

Tensor log_elem(const Tensor& x) {
  Tensor out = raw(x.shape());
  for (std::size_t i = 0; i < x.value().size(); ++i) out.value()[i] = std::log(x.value()[i]);
  track(out, wants(x), [xi = x.impl(), oi = out.impl()] {
    if (!xi->requires_grad) return;
    for (std::size_t i = 0; i < xi->grad.size(); ++i)
      xi->grad[i] += oi->grad[i] / xi->value[i];
  });
  return out;
}

Tensor clamp01(const Tensor& x, double eps) {
  Tensor out = raw(x.shape());
  for (std::size_t i = 0; i < x.value().size(); ++i)
    out.value()[i] = std::min(std::max(x.value()[i], eps), 1.0 - eps);
  track(out, wants(x), [xi = x.impl(), oi = out.impl(), eps] {
    if (!xi->requires_grad) return;
    for (std::size_t i = 0; i < xi->grad.size(); ++i)
      if (xi->value[i] > eps && xi->value[i] < 1.0 - eps) xi->grad[i] += oi->grad[i];
  });
  return out;
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no parts");
  const auto& lead = parts[0].shape();
  int last = 0;
  bool any_grad = false;
  for (const auto& p : parts) {
    if (p.rank() != static_cast<int>(lead.size()))
      dim_error("concat", lead, p.shape());
    for (std::size_t ax = 0; ax + 1 < lead.size(); ++ax)
      if (p.shape()[ax] != lead[ax]) dim_error("concat", lead, p.shape());
    last += p.shape().back();
    any_grad = any_grad || wants(p);
  }
  std::vector<int> out_shape = lead;
  out_shape.back() = last;
  Tensor out = raw(out_shape);

  std::size_t rows = 1;
  for (std::size_t ax = 0; ax + 1 < lead.size(); ++ax)
    rows *= static_cast<std::size_t>(lead[ax]);
  std::vector<std::size_t> offsets(parts.size());
  {
    std::size_t off = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      offsets[p] = off;
      off += static_cast<std::size_t>(parts[p].shape().back());
    }
  }
  for (std::size_t p = 0; p < parts.size(); ++p) {
    std::size_t w = static_cast<std::size_t>(parts[p].shape().back());
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(parts[p].value().data() + r * w, w,
                  out.value().data() + r * static_cast<std::size_t>(last) + offsets[p]);
  }
  std::vector<std::shared_ptr<TensorImpl>> impls;
  impls.reserve(parts.size());
  for (const auto& p : parts) impls.push_back(p.impl());
  track(out, any_grad,
        [impls = std::move(impls), oi = out.impl(), offsets, rows, last] {
          for (std::size_t p = 0; p < impls.size(); ++p) {
            if (!impls[p]->requires_grad) continue;
            std::size_t w = impls[p]->grad.size() / rows;
            for (std::size_t r = 0; r < rows; ++r) {
              const double* src =
                  oi->grad.data() + r * static_cast<std::size_t>(last) + offsets[p];
              double* dst = impls[p]->grad.data() + r * w;
              for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
            }
          }
        });
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  int r = x.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw std::invalid_argument("softmax: bad axis");
  int n = x.dim(axis);
  std::size_t inner = 1, outer = 1;
  for (int ax = axis + 1; ax < r; ++ax) inner *= static_cast<std::size_t>(x.dim(ax));
  for (int ax = 0; ax < axis; ++ax) outer *= static_cast<std::size_t>(x.dim(ax));

  Tensor out = raw(x.shape());
  const auto& xv = x.value();
  auto& ov = out.value();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      std::size_t base = o * static_cast<std::size_t>(n) * inner + in;
      double mx = xv[base];
      for (int i = 1; i < n; ++i)
        mx = std::max(mx, xv[base + static_cast<std::size_t>(i) * inner]);
      double z = 0.0;
      for (int i = 0; i < n; ++i) {
        std::size_t k = base + static_cast<std::size_t>(i) * inner;
        ov[k] = std::exp(xv[k] - mx);
        z += ov[k];
      }
      for (int i = 0; i < n; ++i) ov[base + static_cast<std::size_t>(i) * inner] /= z;
    }
  }
  track(out, wants(x), [xi = x.impl(), oi = out.impl(), n, inner, outer] {
    if (!xi->requires_grad) return;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        std::size_t base = o * static_cast<std::size_t>(n) * inner + in;
        double dot = 0.0;
        for (int i = 0; i < n; ++i) {
          std::size_t k = base + static_cast<std::size_t>(i) * inner;
          dot += oi->grad[k] * oi->value[k];
        }
        for (int i = 0; i < n; ++i) {
          std::size_t k = base + static_cast<std::size_t>(i) * inner;
          xi->grad[k] += oi->value[k] * (oi->grad[k] - dot);
        }
      }
    }
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  constexpr double kEps = 1e-5;
  int d = x.shape().back();
  if (gain.size() != d || bias.size() != d)
    dim_error("layer_norm", x.shape(), gain.shape());
  std::size_t rows = x.value().size() / static_cast<std::size_t>(d);
  Tensor out = raw(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.value().data() + r * static_cast<std::size_t>(d);
    double* orow = out.value().data() + r * static_cast<std::size_t>(d);
    double mean = 0.0;
    for (int i = 0; i < d; ++i) mean += xr[i];
    mean /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= d;
    double inv = 1.0 / std::sqrt(var + kEps);
    for (int i = 0; i < d; ++i)
      orow[i] = (xr[i] - mean) * inv * gain.value()[static_cast<std::size_t>(i)] +
                bias.value()[static_cast<std::size_t>(i)];
  }
  track(out, wants(x) || wants(gain) || wants(bias),
        [xi = x.impl(), gi = gain.impl(), bi = bias.impl(), oi = out.impl(), d, rows] {
          for (std::size_t r = 0; r < rows; ++r) {
            const double* xr = xi->value.data() + r * static_cast<std::size_t>(d);
            const double* dy = oi->grad.data() + r * static_cast<std::size_t>(d);
            double mean = 0.0;
            for (int i = 0; i < d; ++i) mean += xr[i];
            mean /= d;
            double var = 0.0;
            for (int i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
            var /= d;
            double inv = 1.0 / std::sqrt(var + kEps);
            // dxhat, plus parameter grads
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (int i = 0; i < d; ++i) {
              double xhat = (xr[i] - mean) * inv;
              double dxhat = dy[i] * gi->value[static_cast<std::size_t>(i)];
              sum_dxhat += dxhat;
              sum_dxhat_xhat += dxhat * xhat;
              if (gi->requires_grad) gi->grad[static_cast<std::size_t>(i)] += dy[i] * xhat;
              if (bi->requires_grad) bi->grad[static_cast<std::size_t>(i)] += dy[i];
            }
            if (xi->requires_grad) {
              double* dx = xi->grad.data() + r * static_cast<std::size_t>(d);
              for (int i = 0; i < d; ++i) {
                double xhat = (xr[i] - mean) * inv;
                double dxhat = dy[i] * gi->value[static_cast<std::size_t>(i)];
                dx[i] += inv * (dxhat - (sum_dxhat + xhat * sum_dxhat_xhat) / d);
              }
            }
          }
        });
  return out;
}

Tensor sum(const Tensor& x) {
  double s = std::accumulate(x.value().begin(), x.value().end(), 0.0);
  Tensor out = Tensor::scalar(s);
  track(out, wants(x), [xi = x.impl(), oi = out.impl()] {
    if (!xi->requires_grad) return;
    double g = oi->grad[0];
    for (std::size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += g;
  });
  return out;
}

Tensor index(const Tensor& x, int flat_index) {
  if (flat_index < 0 || flat_index >= x.size())
    throw std::invalid_argument("index: out of range");
  Tensor out = Tensor::scalar(x.value()[static_cast<std::size_t>(flat_index)]);
  track(out, wants(x), [xi = x.impl(), oi = out.impl(), flat_index] {
    if (xi->requires_grad)
      xi->grad[static_cast<std::size_t>(flat_index)] += oi->grad[0];
  });
  return out;
}

Tensor rows(const Tensor& table, const std::vector<int>& ids) {
  if (table.rank() != 2) throw std::invalid_argument("rows: table must be 2-d");
  int v = table.dim(0), d = table.dim(1);
  for (int id : ids)
    if (id < 0 || id >= v)
      throw std::invalid_argument("rows: id " + std::to_string(id) +
                                  " outside table of " + std::to_string(v));
  Tensor out = raw({static_cast<int>(ids.size()), d});
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table.value().data() + static_cast<std::size_t>(ids[i]) * d, d,
                out.value().data() + i * static_cast<std::size_t>(d));
  track(out, wants(table), [ti = table.impl(), oi = out.impl(), ids, d] {
    if (!ti->requires_grad) return;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const double* src = oi->grad.data() + i * static_cast<std::size_t>(d);
      double* dst = ti->grad.data() + static_cast<std::size_t>(ids[i]) * d;
      for (int j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
  return out;
}

Tensor cross_entropy_sum(const Tensor& logits, const std::vector<int>& targets) {
  if (logits.rank() != 2) throw std::invalid_argument("cross_entropy_sum: logits must be 2-d");
  int m = logits.dim(0), v = logits.dim(1);
  if (static_cast<int>(targets.size()) != m)
    throw std::invalid_argument("cross_entropy_sum: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(m) + " rows");
  for (int t : targets)
    if (t < 0 || t >= v) throw std::invalid_argument("cross_entropy_sum: target id out of range");
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    const double* row = logits.value().data() + static_cast<std::size_t>(i) * v;
    double mx = row[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    total += mx + std::log(z) - row[targets[static_cast<std::size_t>(i)]];
  }
  Tensor out = Tensor::scalar(total);
  track(out, wants(logits), [li = logits.impl(), oi = out.impl(), targets, m, v] {
    if (!li->requires_grad) return;
    double g = oi->grad[0];
    for (int i = 0; i < m; ++i) {
      const double* row = li->value.data() + static_cast<std::size_t>(i) * v;
      double* drow = li->grad.data() + static_cast<std::size_t>(i) * v;
      double mx = row[0];
      for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
      double z = 0.0;
      for (int j = 0; j < v; ++j) z += std::exp(row[j] - mx);
      for (int j = 0; j < v; ++j) {
        double p = std::exp(row[j] - mx) / z;
        drow[j] += g * (p - (j == targets[static_cast<std::size_t>(i)] ? 1.0 : 0.0));
      }
    }
  });
  return out;
}

Tensor straight_through(const Tensor& hard, const Tensor& soft) {
  if (hard.shape() != soft.shape()) dim_error("straight_through", hard.shape(), soft.shape());
  Tensor out = raw(hard.shape());
  out.value() = hard.value();
  track(out, wants(soft), [si = soft.impl(), oi = out.impl()] {
    if (!si->requires_grad) return;
    for (std::size_t i = 0; i < si->grad.size(); ++i) si->grad[i] += oi->grad[i];
  });
  return out;
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (rate == 0.0) return x;
  Tensor out = raw(x.shape());
  std::vector<double> mask(x.value().size());
  double keep = 1.0 - rate;
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) out.value()[i] = x.value()[i] * mask[i];
  track(out, wants(x), [xi = x.impl(), oi = out.impl(), mask = std::move(mask)] {
    if (!xi->requires_grad) return;
    for (std::size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += oi->grad[i] * mask[i];
  });
  return out;
}

double grad_check(const std::function<Tensor(Tensor&)>& f, Tensor& x, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("grad_check: eps must be positive");
  bool had_grad = x.requires_grad();
  x.set_requires_grad(true);
  x.zero_grad();

  std::vector<double> analytic;
  {
    Graph g;
    Recording rec(g);
    Tensor y = f(x);
    if (y.size() != 1)
      throw std::invalid_argument("grad_check: f must return a scalar, got shape " +
                                  shape_str(y.shape()));
    g.backward(y);
    analytic = x.grad();
  }

  double max_err = 0.0;
  for (std::size_t i = 0; i < x.value().size(); ++i) {
    double saved = x.value()[i];
    x.value()[i] = saved + eps;
    double up = f(x).item();
    x.value()[i] = saved - eps;
    double down = f(x).item();
    x.value()[i] = saved;
    double numeric = (up - down) / (2.0 * eps);
    double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-8});
    max_err = std::max(max_err, std::fabs(analytic[i] - numeric) / denom);
  }
  if (!had_grad) x.set_requires_grad(false);
  return max_err;
}

}  // namespace headsel
