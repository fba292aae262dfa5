#include "after/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

#include "after/kernels.hpp"

namespace after {

namespace {

void check_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
  if (a->rows != b->rows || a->cols != b->cols)
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                a->shape_str() + " vs " + b->shape_str());
}

}  // namespace

TensorPtr Graph::new_output(int rows, int cols, bool requires_grad) {
  return make_tensor(rows, cols, requires_grad);
}

void Graph::record(TensorPtr out, std::function<void()> grad_fn) {
  tape_.push_back({std::move(out), std::move(grad_fn)});
}

TensorPtr Graph::matmul(const TensorPtr& a, const TensorPtr& b) {
  if (a->cols != b->rows)
    throw std::invalid_argument("matmul: inner dimensions differ, " +
                                a->shape_str() + " * " + b->shape_str());
  const int m = a->rows, k = a->cols, n = b->cols;
  auto out = new_output(m, n, a->requires_grad || b->requires_grad);
  kernels::matmul_nn(a->data.data(), b->data.data(), out->data.data(), m, k, n);
  record(out, [a, b, out, m, k, n] {
    if (a->requires_grad)
      kernels::matmul_nt_acc(out->grad.data(), b->data.data(), a->grad.data(),
                             m, n, k);
    if (b->requires_grad)
      kernels::matmul_tn_acc(a->data.data(), out->grad.data(), b->grad.data(),
                             m, k, n);
  });
  return out;
}

TensorPtr Graph::add(const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(a, b, "add");
  auto out = new_output(a->rows, a->cols, a->requires_grad || b->requires_grad);
  for (std::size_t i = 0; i < out->size(); ++i)
    out->data[i] = a->data[i] + b->data[i];
  record(out, [a, b, out] {
    if (a->requires_grad)
      for (std::size_t i = 0; i < out->size(); ++i) a->grad[i] += out->grad[i];
    if (b->requires_grad)
      for (std::size_t i = 0; i < out->size(); ++i) b->grad[i] += out->grad[i];
  });
  return out;
}

TensorPtr Graph::scale(const TensorPtr& x, double c) {
  auto out = new_output(x->rows, x->cols, x->requires_grad);
  for (std::size_t i = 0; i < out->size(); ++i) out->data[i] = c * x->data[i];
  record(out, [x, out, c] {
    if (x->requires_grad)
      for (std::size_t i = 0; i < out->size(); ++i)
        x->grad[i] += c * out->grad[i];
  });
  return out;
}

TensorPtr Graph::mul(const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(a, b, "mul");
  auto out = new_output(a->rows, a->cols, a->requires_grad || b->requires_grad);
  for (std::size_t i = 0; i < out->size(); ++i)
    out->data[i] = a->data[i] * b->data[i];
  record(out, [a, b, out] {
    if (a->requires_grad)
      for (std::size_t i = 0; i < out->size(); ++i)
        a->grad[i] += out->grad[i] * b->data[i];
    if (b->requires_grad)
      for (std::size_t i = 0; i < out->size(); ++i)
        b->grad[i] += out->grad[i] * a->data[i];
  });
  return out;
}

TensorPtr Graph::add_bias(const TensorPtr& x, const TensorPtr& bias) {
  if (bias->rows != 1 || bias->cols != x->cols)
    throw std::invalid_argument("add_bias: bias must be 1x" +
                                std::to_string(x->cols) + ", got " +
                                bias->shape_str());
  const int m = x->rows, n = x->cols;
  auto out = new_output(m, n, x->requires_grad || bias->requires_grad);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out->at(i, j) = x->at(i, j) + bias->data[j];
  record(out, [x, bias, out, m, n] {
    if (x->requires_grad)
      for (std::size_t i = 0; i < out->size(); ++i) x->grad[i] += out->grad[i];
    if (bias->requires_grad)
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          bias->grad[j] += out->grad[static_cast<std::size_t>(i) * n + j];
  });
  return out;
}

TensorPtr Graph::gelu(const TensorPtr& x) {
  auto out = new_output(x->rows, x->cols, x->requires_grad);
  kernels::gelu(x->data.data(), out->data.data(), x->size());
  record(out, [x, out] {
    if (x->requires_grad)
      kernels::gelu_backward(x->data.data(), out->grad.data(), x->grad.data(),
                             x->size());
  });
  return out;
}

TensorPtr Graph::layer_norm(const TensorPtr& x, const TensorPtr& gamma,
                            const TensorPtr& beta, double eps) {
  const int m = x->rows, n = x->cols;
  if (n < 2)
    throw std::invalid_argument("layer_norm: need at least 2 columns, got " +
                                x->shape_str());
  if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be > 0");
  if (gamma->rows != 1 || gamma->cols != n || beta->rows != 1 || beta->cols != n)
    throw std::invalid_argument("layer_norm: gamma/beta must be 1x" +
                                std::to_string(n));

  auto out = new_output(
      m, n, x->requires_grad || gamma->requires_grad || beta->requires_grad);
  std::vector<double> xhat(static_cast<std::size_t>(m) * n);
  std::vector<double> inv_std(m);
  for (int i = 0; i < m; ++i) {
    const double* xi = x->data.data() + static_cast<std::size_t>(i) * n;
    double mean = 0.0;
    for (int j = 0; j < n; ++j) mean += xi[j];
    mean /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
      const double d = xi[j] - mean;
      var += d * d;
    }
    var /= n;
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[i] = inv;
    for (int j = 0; j < n; ++j) {
      const double xh = (xi[j] - mean) * inv;
      xhat[static_cast<std::size_t>(i) * n + j] = xh;
      out->at(i, j) = gamma->data[j] * xh + beta->data[j];
    }
  }
  record(out, [x, gamma, beta, out, m, n, xhat = std::move(xhat),
               inv_std = std::move(inv_std)] {
    for (int i = 0; i < m; ++i) {
      const double* dy = out->grad.data() + static_cast<std::size_t>(i) * n;
      const double* xh = xhat.data() + static_cast<std::size_t>(i) * n;
      if (gamma->requires_grad)
        for (int j = 0; j < n; ++j) gamma->grad[j] += dy[j] * xh[j];
      if (beta->requires_grad)
        for (int j = 0; j < n; ++j) beta->grad[j] += dy[j];
      if (x->requires_grad) {
        double m1 = 0.0, m2 = 0.0;
        for (int j = 0; j < n; ++j) {
          const double dxh = dy[j] * gamma->data[j];
          m1 += dxh;
          m2 += dxh * xh[j];
        }
        m1 /= n;
        m2 /= n;
        double* dx = x->grad.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
          const double dxh = dy[j] * gamma->data[j];
          dx[j] += inv_std[i] * (dxh - m1 - xh[j] * m2);
        }
      }
    }
  });
  return out;
}

TensorPtr Graph::softmax_rows(const TensorPtr& x) {
  const int m = x->rows, n = x->cols;
  auto out = new_output(m, n, x->requires_grad);
  kernels::softmax_rows(x->data.data(), out->data.data(), m, n);
  record(out, [x, out, m, n] {
    if (!x->requires_grad) return;
    for (int i = 0; i < m; ++i) {
      const double* y = out->data.data() + static_cast<std::size_t>(i) * n;
      const double* dy = out->grad.data() + static_cast<std::size_t>(i) * n;
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += dy[j] * y[j];
      double* dx = x->grad.data() + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
    }
  });
  return out;
}

TensorPtr Graph::cross_entropy_logits(const TensorPtr& logits,
                                      const std::vector<int>& targets,
                                      const std::vector<std::uint8_t>& row_mask) {
  const int m = logits->rows, c = logits->cols;
  if (static_cast<int>(targets.size()) != m ||
      static_cast<int>(row_mask.size()) != m)
    throw std::invalid_argument(
        "cross_entropy_logits: targets/mask length must equal logits rows");

  int count = 0;
  for (int i = 0; i < m; ++i) {
    if (!row_mask[i]) continue;
    ++count;
    if (targets[i] < 0 || targets[i] >= c)
      throw std::out_of_range("cross_entropy_logits: target " +
                              std::to_string(targets[i]) + " out of [0," +
                              std::to_string(c) + ") at row " +
                              std::to_string(i));
  }
  if (count == 0)
    throw std::runtime_error("cross_entropy_logits: all rows masked");

  auto out = new_output(1, 1, logits->requires_grad);
  std::vector<double> probs(static_cast<std::size_t>(m) * c, 0.0);
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    if (!row_mask[i]) continue;
    const double* xi = logits->data.data() + static_cast<std::size_t>(i) * c;
    double* pi = probs.data() + static_cast<std::size_t>(i) * c;
    double mx = xi[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, xi[j]);
    double sum = 0.0;
    for (int j = 0; j < c; ++j) {
      pi[j] = std::exp(xi[j] - mx);
      sum += pi[j];
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < c; ++j) pi[j] *= inv;
    total += mx + std::log(sum) - xi[targets[i]];
  }
  out->data[0] = total / count;

  record(out, [logits, out, targets, row_mask, probs = std::move(probs), m, c,
               count] {
    if (!logits->requires_grad) return;
    const double scale = out->grad[0] / count;
    for (int i = 0; i < m; ++i) {
      if (!row_mask[i]) continue;
      const double* pi = probs.data() + static_cast<std::size_t>(i) * c;
      double* dx = logits->grad.data() + static_cast<std::size_t>(i) * c;
      for (int j = 0; j < c; ++j) dx[j] += scale * pi[j];
      dx[targets[i]] -= scale;
    }
  });
  return out;
}

TensorPtr Graph::gather_rows(const TensorPtr& table, const std::vector<int>& ids) {
  const int v = table->rows, d = table->cols;
  const int m = static_cast<int>(ids.size());
  for (int id : ids)
    if (id < 0 || id >= v)
      throw std::out_of_range("gather_rows: id " + std::to_string(id) +
                              " out of [0," + std::to_string(v) + ")");
  auto out = new_output(m, d, table->requires_grad);
  for (int i = 0; i < m; ++i)
    std::copy_n(table->data.data() + static_cast<std::size_t>(ids[i]) * d, d,
                out->data.data() + static_cast<std::size_t>(i) * d);
  record(out, [table, out, ids, d, m] {
    if (!table->requires_grad) return;
    for (int i = 0; i < m; ++i) {
      const double* g = out->grad.data() + static_cast<std::size_t>(i) * d;
      double* tg = table->grad.data() + static_cast<std::size_t>(ids[i]) * d;
      for (int j = 0; j < d; ++j) tg[j] += g[j];
    }
  });
  return out;
}

TensorPtr Graph::grad_reverse(const TensorPtr& x) {
  auto out = new_output(x->rows, x->cols, x->requires_grad);
  out->data = x->data;
  record(out, [x, out] {
    if (x->requires_grad)
      for (std::size_t i = 0; i < out->size(); ++i) x->grad[i] -= out->grad[i];
  });
  return out;
}

TensorPtr Graph::dropout(const TensorPtr& x, double p, Rng& rng, bool train_mode) {
  if (p < 0.0 || p >= 1.0)
    throw std::invalid_argument("dropout: p must be in [0,1)");
  if (!train_mode || p == 0.0) return x;
  const double keep = 1.0 - p;
  const double inv = 1.0 / keep;
  auto out = new_output(x->rows, x->cols, x->requires_grad);
  std::vector<double> factor(x->size());
  for (std::size_t i = 0; i < x->size(); ++i) {
    factor[i] = rng.bernoulli(keep) ? inv : 0.0;
    out->data[i] = x->data[i] * factor[i];
  }
  record(out, [x, out, factor = std::move(factor)] {
    if (!x->requires_grad) return;
    for (std::size_t i = 0; i < out->size(); ++i)
      x->grad[i] += out->grad[i] * factor[i];
  });
  return out;
}

TensorPtr Graph::attention(const TensorPtr& q, const TensorPtr& k,
                           const TensorPtr& v, int batch, int seq, int n_heads,
                           const std::vector<std::uint8_t>& key_mask) {
  check_same_shape(q, k, "attention");
  check_same_shape(q, v, "attention");
  const int d = q->cols;
  if (n_heads < 1 || d % n_heads != 0)
    throw std::invalid_argument("attention: d_model " + std::to_string(d) +
                                " not divisible by n_heads " +
                                std::to_string(n_heads));
  if (q->rows != batch * seq)
    throw std::invalid_argument("attention: rows != batch*seq");
  if (static_cast<int>(key_mask.size()) != batch * seq)
    throw std::invalid_argument("attention: key_mask length != batch*seq");

  const int dh = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool rg = q->requires_grad || k->requires_grad || v->requires_grad;
  auto out = new_output(batch * seq, d, rg);

  for (int b = 0; b < batch; ++b) {
    bool any = false;
    for (int j = 0; j < seq; ++j) any = any || key_mask[b * seq + j];
    if (!any)
      throw std::invalid_argument("attention: example " + std::to_string(b) +
                                  " has no unmasked keys");
  }

  // attn_probs[((b*H + h)*S + i)*S + j]; zero where key j is padding
  std::vector<double> attn_probs(
      static_cast<std::size_t>(batch) * n_heads * seq * seq, 0.0);
  std::vector<double> scores(seq);

  for (int b = 0; b < batch; ++b) {
    const int base = b * seq;
    for (int h = 0; h < n_heads; ++h) {
      const int hoff = h * dh;
      for (int i = 0; i < seq; ++i) {
        const double* qi = q->data.data() +
                           static_cast<std::size_t>(base + i) * d + hoff;
        double mx = -1e300;
        for (int j = 0; j < seq; ++j) {
          if (!key_mask[base + j]) continue;
          const double* kj = k->data.data() +
                             static_cast<std::size_t>(base + j) * d + hoff;
          double s = 0.0;
          for (int p = 0; p < dh; ++p) s += qi[p] * kj[p];
          s *= inv_sqrt;
          scores[j] = s;
          mx = std::max(mx, s);
        }
        double sum = 0.0;
        double* prow = attn_probs.data() +
                       ((static_cast<std::size_t>(b) * n_heads + h) * seq + i) *
                           seq;
        for (int j = 0; j < seq; ++j) {
          if (!key_mask[base + j]) continue;
          prow[j] = std::exp(scores[j] - mx);
          sum += prow[j];
        }
        const double inv = 1.0 / sum;
        double* oi = out->data.data() +
                     static_cast<std::size_t>(base + i) * d + hoff;
        std::fill(oi, oi + dh, 0.0);
        for (int j = 0; j < seq; ++j) {
          if (!key_mask[base + j]) continue;
          prow[j] *= inv;
          const double* vj = v->data.data() +
                             static_cast<std::size_t>(base + j) * d + hoff;
          for (int p = 0; p < dh; ++p) oi[p] += prow[j] * vj[p];
        }
      }
    }
  }

  record(out, [q, k, v, out, batch, seq, n_heads, dh, d, inv_sqrt,
               attn_probs = std::move(attn_probs)] {
    if (!out->requires_grad) return;
    std::vector<double> dp(seq), ds(seq);
    for (int b = 0; b < batch; ++b) {
      const int base = b * seq;
      for (int h = 0; h < n_heads; ++h) {
        const int hoff = h * dh;
        for (int i = 0; i < seq; ++i) {
          const double* doi = out->grad.data() +
                              static_cast<std::size_t>(base + i) * d + hoff;
          const double* prow =
              attn_probs.data() +
              ((static_cast<std::size_t>(b) * n_heads + h) * seq + i) * seq;
          // dV and dP
          double rowdot = 0.0;
          for (int j = 0; j < seq; ++j) {
            const double* vj = v->data.data() +
                               static_cast<std::size_t>(base + j) * d + hoff;
            double acc = 0.0;
            for (int p = 0; p < dh; ++p) acc += doi[p] * vj[p];
            dp[j] = acc;
            rowdot += acc * prow[j];
            if (v->requires_grad && prow[j] != 0.0) {
              double* dvj = v->grad.data() +
                            static_cast<std::size_t>(base + j) * d + hoff;
              for (int p = 0; p < dh; ++p) dvj[p] += prow[j] * doi[p];
            }
          }
          // softmax backward, then dQ/dK
          for (int j = 0; j < seq; ++j) ds[j] = prow[j] * (dp[j] - rowdot);
          if (q->requires_grad) {
            double* dqi = q->grad.data() +
                          static_cast<std::size_t>(base + i) * d + hoff;
            for (int j = 0; j < seq; ++j) {
              if (ds[j] == 0.0) continue;
              const double* kj = k->data.data() +
                                 static_cast<std::size_t>(base + j) * d + hoff;
              const double w = ds[j] * inv_sqrt;
              for (int p = 0; p < dh; ++p) dqi[p] += w * kj[p];
            }
          }
          if (k->requires_grad) {
            const double* qi = q->data.data() +
                               static_cast<std::size_t>(base + i) * d + hoff;
            for (int j = 0; j < seq; ++j) {
              if (ds[j] == 0.0) continue;
              double* dkj = k->grad.data() +
                            static_cast<std::size_t>(base + j) * d + hoff;
              const double w = ds[j] * inv_sqrt;
              for (int p = 0; p < dh; ++p) dkj[p] += w * qi[p];
            }
          }
        }
      }
    }
  });
  return out;
}

TensorPtr Graph::sum_all(const TensorPtr& x) {
  auto out = new_output(1, 1, x->requires_grad);
  double s = 0.0;
  for (double e : x->data) s += e;
  out->data[0] = s;
  record(out, [x, out] {
    if (!x->requires_grad) return;
    const double g = out->grad[0];
    for (std::size_t i = 0; i < x->size(); ++i) x->grad[i] += g;
  });
  return out;
}

void Graph::backward(const TensorPtr& loss) {
  if (loss->rows != 1 || loss->cols != 1)
    throw std::invalid_argument("backward: loss must be 1x1, got " +
                                loss->shape_str());
  bool found = false;
  for (const auto& node : tape_)
    if (node.out == loss) {
      found = true;
      break;
    }
  if (!found)
    throw std::invalid_argument("backward: loss is not a node of this graph");

  // Intermediates are re-zeroed per call; leaves keep accumulating.
  for (auto& node : tape_) node.out->zero_grad();
  loss->grad[0] = 1.0;
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it)
    if (it->grad_fn) it->grad_fn();
}

GradCheckReport grad_check(
    const std::function<TensorPtr(Graph&, const TensorPtr&)>& f,
    const TensorPtr& x, double h, double tol) {
  if (h <= 0.0 || tol <= 0.0)
    throw std::invalid_argument("grad_check: h and tol must be > 0");

  auto xw = make_tensor(x->rows, x->cols, x->data, true);
  Graph g;
  auto out = f(g, xw);
  if (out->rows != 1 || out->cols != 1)
    throw std::invalid_argument("grad_check: f must return a 1x1 tensor");
  g.backward(out);
  std::vector<double> analytic = xw->grad;

  GradCheckReport report;
  for (int r = 0; r < x->rows; ++r) {
    for (int c = 0; c < x->cols; ++c) {
      const std::size_t idx = static_cast<std::size_t>(r) * x->cols + c;
      const double saved = xw->data[idx];
      xw->data[idx] = saved + h;
      Graph gp;
      const double fp = f(gp, xw)->data[0];
      xw->data[idx] = saved - h;
      Graph gm;
      const double fm = f(gm, xw)->data[0];
      xw->data[idx] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[idx];
      const double rel =
          std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_row = r;
        report.worst_col = c;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_err <= tol;
  return report;
}

}  // namespace after
