#include "strv/numkit/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "strv/errors.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace strv::numkit {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw ContractViolation(what);
}

Tape& same_tape(Var a, Var b) {
  require(a.tape != nullptr && a.tape == b.tape, "operands recorded on different tapes");
  return *a.tape;
}

void check_labels(std::span<const int> labels, std::size_t rows, std::size_t classes) {
  require(labels.size() == rows, "label count does not match rows");
  for (int y : labels) {
    require(y >= 0 && static_cast<std::size_t>(y) < classes, "label out of range [0, C)");
  }
}

void softmax_row(std::span<const double> in, std::span<double> out) {
  double mx = in[0];
  for (double v : in) mx = std::max(mx, v);
  double sum = 0.0;
  for (std::size_t j = 0; j < in.size(); ++j) {
    out[j] = std::exp(in[j] - mx);
    sum += out[j];
  }
  for (double& v : out) v /= sum;
}

}  // namespace

void zero_grads(std::span<const NamedParameter> params) {
  for (const auto& [name, p] : params) p->zero_grad();
}

Tape::Tape() {
#if defined(__GLIBC__)
  // Tapes allocate and free many mid-sized buffers per step. Keeping them on
  // the heap instead of fresh mmap pages avoids a page-fault storm.
  static const bool tuned = [] {
    mallopt(M_MMAP_THRESHOLD, 64 << 20);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
    return true;
  }();
  (void)tuned;
#endif
}

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::constant(Tensor value) { return push(std::move(value), nullptr); }

Var Tape::parameter(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{this, it->second};
  Var v = push(p.value, nullptr);
  nodes_[v.id].param = &p;
  param_nodes_.emplace(&p, v.id);
  return v;
}

Var Tape::push(Tensor value, BackwardFn backward) {
  nodes_.push_back(Node{std::move(value), Tensor{}, std::move(backward), nullptr});
  return Var{this, nodes_.size() - 1};
}

const Tensor& Tape::grad(Var v) const {
  require(has_grads_, "grad() requested before backward()");
  return nodes_[v.id].grad;
}

void Tape::backward(Var loss) {
  require(loss.tape == this, "loss recorded on another tape");
  require(nodes_[loss.id].value.size() == 1, "backward() requires a scalar loss");
  for (auto& n : nodes_) n.grad = Tensor(n.value.shape(), 0.0);
  has_grads_ = true;
  nodes_[loss.id].grad[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    if (nodes_[i].backward) nodes_[i].backward(*this, i);
  }
  for (auto& n : nodes_) {
    if (n.param == nullptr) continue;
    auto dst = n.param->grad.data();
    auto src = n.grad.data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
}

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require(av.cols() == bv.rows(), "matmul: inner dimensions differ");
  Tensor out = Tensor::matrix(av.rows(), bv.cols());
  matmul_into(av, bv, out);
  const std::size_t ia = a.id, ib = b.id;
  return t.push(std::move(out), [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_mut(self);
    matmul_a_bt_acc(g, tp.value_mut(ib), tp.grad_mut(ia));
    matmul_at_b_acc(tp.value_mut(ia), g, tp.grad_mut(ib));
  });
}

Var add_bias(Var x, Var bias) {
  Tape& t = same_tape(x, bias);
  const Tensor& xv = t.value(x);
  const Tensor& bv = t.value(bias);
  require(bv.rows() == 1 && bv.cols() == xv.cols(), "add_bias: bias must be 1 x cols");
  Tensor out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row_span(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv[c];
  }
  const std::size_t ix = x.id, ibias = bias.id;
  return t.push(std::move(out), [ix, ibias](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_mut(self);
    Tensor& gx = tp.grad_mut(ix);
    Tensor& gb = tp.grad_mut(ibias);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      for (std::size_t c = 0; c < g.cols(); ++c) {
        gx.at(r, c) += g.at(r, c);
        gb[c] += g.at(r, c);
      }
    }
  });
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require(t.value(a).same_shape(t.value(b)), "add: shape mismatch");
  Tensor out = t.value(a);
  auto bd = t.value(b).data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] += bd[i];
  const std::size_t ia = a.id, ib = b.id;
  return t.push(std::move(out), [ia, ib](Tape& tp, std::size_t self) {
    auto g = tp.grad_mut(self).data();
    auto ga = tp.grad_mut(ia).data();
    auto gb = tp.grad_mut(ib).data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] += g[i];
    }
  });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape;
  Tensor out = t.value(a);
  for (double& v : out.data()) v *= s;
  const std::size_t ia = a.id;
  return t.push(std::move(out), [ia, s](Tape& tp, std::size_t self) {
    auto g = tp.grad_mut(self).data();
    auto ga = tp.grad_mut(ia).data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var relu(Var x) {
  Tape& t = *x.tape;
  Tensor out = t.value(x);
  double margin = std::numeric_limits<double>::infinity();
  for (double& v : out.data()) {
    margin = std::min(margin, std::abs(v));
    if (v < 0.0) v = 0.0;
  }
  t.note_relu_margin(margin);
  const std::size_t ix = x.id;
  return t.push(std::move(out), [ix](Tape& tp, std::size_t self) {
    auto g = tp.grad_mut(self).data();
    auto in = tp.value_mut(ix).data();
    auto gx = tp.grad_mut(ix).data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (in[i] > 0.0) gx[i] += g[i];
    }
  });
}

Var softmax(Var x) {
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  if (!xv.all_finite()) throw NumericError("softmax: non-finite input");
  Tensor out(xv.shape(), 0.0);
  for (std::size_t r = 0; r < xv.rows(); ++r) softmax_row(xv.row_span(r), out.row_span(r));
  const std::size_t ix = x.id;
  return t.push(std::move(out), [ix](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_mut(self);
    const Tensor& p = tp.value_mut(self);
    Tensor& gx = tp.grad_mut(ix);
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < p.cols(); ++c) dot += g.at(r, c) * p.at(r, c);
      for (std::size_t c = 0; c < p.cols(); ++c) gx.at(r, c) += p.at(r, c) * (g.at(r, c) - dot);
    }
  });
}

Var cross_entropy(Var probabilities, std::span<const int> labels) {
  Tape& t = *probabilities.tape;
  const Tensor& p = t.value(probabilities);
  check_labels(labels, p.rows(), p.cols());
  double loss = 0.0;
  for (std::size_t r = 0; r < p.rows(); ++r) {
    const double pv = p.at(r, static_cast<std::size_t>(labels[r]));
    if (!(pv > 0.0)) throw NumericError("cross_entropy: zero probability on the true label");
    loss -= std::log(pv);
  }
  const double n = static_cast<double>(p.rows());
  std::vector<int> ys(labels.begin(), labels.end());
  const std::size_t ip = probabilities.id;
  return t.push(Tensor::scalar(loss / n), [ip, ys = std::move(ys), n](Tape& tp, std::size_t self) {
    const double g = tp.grad_mut(self)[0];
    const Tensor& pv = tp.value_mut(ip);
    Tensor& gp = tp.grad_mut(ip);
    for (std::size_t r = 0; r < ys.size(); ++r) {
      const auto c = static_cast<std::size_t>(ys[r]);
      gp.at(r, c) -= g / (n * pv.at(r, c));
    }
  });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  Tape& t = *logits.tape;
  const Tensor& z = t.value(logits);
  if (!z.all_finite()) throw NumericError("softmax_cross_entropy: non-finite logits");
  check_labels(labels, z.rows(), z.cols());
  Tensor probs(z.shape(), 0.0);
  double loss = 0.0;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    auto row = z.row_span(r);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - mx);
    const double log_norm = mx + std::log(sum);
    loss += log_norm - row[static_cast<std::size_t>(labels[r])];
    softmax_row(row, probs.row_span(r));
  }
  const double n = static_cast<double>(z.rows());
  std::vector<int> ys(labels.begin(), labels.end());
  const std::size_t iz = logits.id;
  return t.push(Tensor::scalar(loss / n),
                [iz, ys = std::move(ys), probs = std::move(probs), n](Tape& tp, std::size_t self) {
                  const double g = tp.grad_mut(self)[0];
                  Tensor& gz = tp.grad_mut(iz);
                  for (std::size_t r = 0; r < probs.rows(); ++r) {
                    for (std::size_t c = 0; c < probs.cols(); ++c) {
                      const double onehot = static_cast<int>(c) == ys[r] ? 1.0 : 0.0;
                      gz.at(r, c) += g * (probs.at(r, c) - onehot) / n;
                    }
                  }
                });
}

Var mse(Var pred, Var target) {
  Tape& t = same_tape(pred, target);
  const Tensor& p = t.value(pred);
  const Tensor& y = t.value(target);
  require(p.size() == y.size(), "mse: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - y[i];
    s += d * d;
  }
  const double n = static_cast<double>(p.size());
  const std::size_t ip = pred.id, iy = target.id;
  return t.push(Tensor::scalar(s / n), [ip, iy, n](Tape& tp, std::size_t self) {
    const double g = tp.grad_mut(self)[0];
    const Tensor& pv = tp.value_mut(ip);
    const Tensor& yv = tp.value_mut(iy);
    auto gp = tp.grad_mut(ip).data();
    auto gy = tp.grad_mut(iy).data();
    for (std::size_t i = 0; i < gp.size(); ++i) {
      const double d = 2.0 * (pv[i] - yv[i]) / n * g;
      gp[i] += d;
      gy[i] -= d;
    }
  });
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  require(!rows.empty(), "gather_rows: empty row list");
  Tensor out = Tensor::matrix(rows.size(), xv.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < xv.rows(), "gather_rows: row index out of range");
    auto src = xv.row_span(rows[i]);
    std::copy(src.begin(), src.end(), out.row_span(i).begin());
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  const std::size_t ix = x.id;
  return t.push(std::move(out), [ix, idx = std::move(idx)](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_mut(self);
    Tensor& gx = tp.grad_mut(ix);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto src = g.row_span(i);
      auto dst = gx.row_span(idx[i]);
      for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
    }
  });
}

Var segment_mean(Var x, std::size_t group) {
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  require(group > 0 && xv.rows() % group == 0, "segment_mean: rows not divisible by group");
  const std::size_t n_out = xv.rows() / group, cols = xv.cols();
  const double k = static_cast<double>(group);
  Tensor out = Tensor::matrix(n_out, cols);
  for (std::size_t s = 0; s < n_out; ++s) {
    auto dst = out.row_span(s);
    for (std::size_t r = 0; r < group; ++r) {
      auto src = xv.row_span(s * group + r);
      for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
    }
    for (double& v : dst) v /= k;
  }
  const std::size_t ix = x.id;
  return t.push(std::move(out), [ix, group, k](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_mut(self);
    Tensor& gx = tp.grad_mut(ix);
    for (std::size_t s = 0; s < g.rows(); ++s) {
      auto src = g.row_span(s);
      for (std::size_t r = 0; r < group; ++r) {
        auto dst = gx.row_span(s * group + r);
        for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c] / k;
      }
    }
  });
}

Var concat_cols(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require(av.rows() == bv.rows(), "concat_cols: row counts differ");
  const std::size_t ca = av.cols(), cb = bv.cols();
  Tensor out = Tensor::matrix(av.rows(), ca + cb);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    auto dst = out.row_span(r);
    auto ra = av.row_span(r);
    auto rb = bv.row_span(r);
    std::copy(ra.begin(), ra.end(), dst.begin());
    std::copy(rb.begin(), rb.end(), dst.begin() + static_cast<std::ptrdiff_t>(ca));
  }
  const std::size_t ia = a.id, ib = b.id;
  return t.push(std::move(out), [ia, ib, ca, cb](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_mut(self);
    Tensor& ga = tp.grad_mut(ia);
    Tensor& gb = tp.grad_mut(ib);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      for (std::size_t c = 0; c < ca; ++c) ga.at(r, c) += g.at(r, c);
      for (std::size_t c = 0; c < cb; ++c) gb.at(r, c) += g.at(r, ca + c);
    }
  });
}

}  // namespace strv::numkit
