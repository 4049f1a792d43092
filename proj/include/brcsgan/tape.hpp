#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "brcsgan/param_store.hpp"
#include "brcsgan/tensor.hpp"

namespace brcsgan {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid until the tape is cleared.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
};

// Append-only record of forward operations. Node ids are topologically
// ordered by construction, so one reverse sweep visits each node exactly
// once and gradients accumulate additively at fan-out points.
//
// Every forward op validates shapes and fails hard on a non-finite result,
// naming the producing op; adversarial training is too unstable to let NaNs
// propagate silently.
class Tape {
 public:
  struct Node {
    Tensor value;
    Tensor grad;
    bool grad_set = false;
    std::function<void(Tape&)> backward;
    const char* op = "";
  };

  std::size_t size() const { return nodes_.size(); }
  void clear() {
    nodes_.clear();
    touched_stores_.clear();
  }

  const Tensor& value(Var v) const { return node(v).value; }
  const Tensor& grad(Var v) const {
    const Node& n = node(v);
    if (!n.grad_set) throw std::logic_error("Tape: gradient not computed for this node");
    return n.grad;
  }

  // ---- graph inputs -------------------------------------------------------

  Var constant(Tensor t) { return push("constant", std::move(t)); }

  Var scalar(double v) { return constant(Tensor::scalar(v)); }

  // Leaf over a parameter entry: the forward value is the current parameter
  // value; backward accumulates into the entry's grad in its store.
  Var leaf(ParamStore& store, const std::string& name) {
    ParamEntry& e = store.entry(name);
    Var out = push("leaf", e.value);
    ParamStore* sp = &store;
    ParamEntry* ep = &e;
    int self = out.id;
    nodes_[self].backward = [self, sp, ep](Tape& t) {
      const Tensor& dy = t.nodes_[self].grad;
      for (std::size_t i = 0; i < dy.numel(); ++i) ep->grad[i] += dy[i];
      t.touch(sp);
    };
    return out;
  }

  // ---- elementwise --------------------------------------------------------

  Var add(Var a, Var b) {
    require_same_shape(a, b, "add");
    Tensor out = value(a);
    const Tensor& vb = value(b);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += vb[i];
    Var r = push("add", std::move(out));
    set_backward(r, [ra = a.id, rb = b.id, self = r.id](Tape& t) {
      const Tensor& dy = t.nodes_[self].grad;
      t.acc(ra, dy);
      t.acc(rb, dy);
    });
    return r;
  }

  Var sub(Var a, Var b) {
    require_same_shape(a, b, "sub");
    Tensor out = value(a);
    const Tensor& vb = value(b);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= vb[i];
    Var r = push("sub", std::move(out));
    set_backward(r, [ra = a.id, rb = b.id, self = r.id](Tape& t) {
      const Tensor& dy = t.nodes_[self].grad;
      t.acc(ra, dy);
      Tensor& gb = t.grad_slot(rb);
      for (std::size_t i = 0; i < dy.numel(); ++i) gb[i] -= dy[i];
    });
    return r;
  }

  Var mul(Var a, Var b) {
    require_same_shape(a, b, "mul");
    Tensor out = value(a);
    const Tensor& vb = value(b);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= vb[i];
    Var r = push("mul", std::move(out));
    set_backward(r, [ra = a.id, rb = b.id, self = r.id](Tape& t) {
      const Tensor& dy = t.nodes_[self].grad;
      const Tensor& va = t.nodes_[ra].value;
      const Tensor& vb2 = t.nodes_[rb].value;
      Tensor& ga = t.grad_slot(ra);
      Tensor& gb = t.grad_slot(rb);
      for (std::size_t i = 0; i < dy.numel(); ++i) {
        ga[i] += dy[i] * vb2[i];
        gb[i] += dy[i] * va[i];
      }
    });
    return r;
  }

  Var scale(Var a, double c) {
    Tensor out = value(a);
    for (double& v : out.vec()) v *= c;
    Var r = push("scale", std::move(out));
    set_backward(r, [ra = a.id, c, self = r.id](Tape& t) {
      const Tensor& dy = t.nodes_[self].grad;
      Tensor& ga = t.grad_slot(ra);
      for (std::size_t i = 0; i < dy.numel(); ++i) ga[i] += c * dy[i];
    });
    return r;
  }

  // X (R x C) plus a (1 x C) row vector broadcast over rows.
  Var add_rowvec(Var x, Var v) {
    const Tensor& vx = value(x);
    const Tensor& vv = value(v);
    const std::size_t rows = vx.rows(), cols = vx.cols();
    if (vv.numel() != cols) throw std::invalid_argument("add_rowvec: width mismatch");
    Tensor out = vx;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += vv[c];
    Var r = push("add_rowvec", std::move(out));
    set_backward(r, [rx = x.id, rv = v.id, rows, cols, self = r.id](Tape& t) {
      const Tensor& dy = t.nodes_[self].grad;
      t.acc(rx, dy);
      Tensor& gv = t.grad_slot(rv);
      for (std::size_t rr = 0; rr < rows; ++rr)
        for (std::size_t c = 0; c < cols; ++c) gv[c] += dy[rr * cols + c];
    });
    return r;
  }

  // ---- nonlinearities -----------------------------------------------------

  Var sigmoid(Var a) {
    Tensor out = value(a);
    for (double& v : out.vec()) v = 1.0 / (1.0 + std::exp(-v));
    Var r = push("sigmoid", std::move(out));
    set_backward(r, [ra = a.id, self = r.id](Tape& t) {
      const Tensor& dy = t.nodes_[self].grad;
      const Tensor& y = t.nodes_[self].value;
      Tensor& ga = t.grad_slot(ra);
      for (std::size_t i = 0; i < dy.numel(); ++i) ga[i] += dy[i] * y[i] * (1.0 - y[i]);
    });
    return r;
  }

  Var tanh(Var a) {
    Tensor out = value(a);
    for (double& v : out.vec()) v = std::tanh(v);
    Var r = push("tanh", std::move(out));
    set_backward(r, [ra = a.id, self = r.id](Tape& t) {
      const Tensor& dy = t.nodes_[self].grad;
      const Tensor& y = t.nodes_[self].value;
      Tensor& ga = t.grad_slot(ra);
      for (std::size_t i = 0; i < dy.numel(); ++i) ga[i] += dy[i] * (1.0 - y[i] * y[i]);
    });
    return r;
  }

  Var relu(Var a) {
    Tensor out = value(a);
    for (double& v : out.vec()) v = v > 0.0 ? v : 0.0;
    Var r = push("relu", std::move(out));
    set_backward(r, [ra = a.id, self = r.id](Tape& t) {
      const Tensor& dy = t.nodes_[self].grad;
      const Tensor& x = t.nodes_[ra].value;
      Tensor& ga = t.grad_slot(ra);
      for (std::size_t i = 0; i < dy.numel(); ++i)
        if (x[i] > 0.0) ga[i] += dy[i];
    });
    return r;
  }

  Var log(Var a) {
    Tensor out = value(a);
    for (double& v : out.vec()) v = std::log(v);
    Var r = push("log", std::move(out));
    set_backward(r, [ra = a.id, self = r.id](Tape& t) {
      const Tensor& dy = t.nodes_[self].grad;
      const Tensor& x = t.nodes_[ra].value;
      Tensor& ga = t.grad_slot(ra);
      for (std::size_t i = 0; i < dy.numel(); ++i) ga[i] += dy[i] / x[i];
    });
    return r;
  }

  Var exp(Var a) {
    Tensor out = value(a);
    for (double& v : out.vec()) v = std::exp(v);
    Var r = push("exp", std::move(out));
    set_backward(r, [ra = a.id, self = r.id](Tape& t) {
      const Tensor& dy = t.nodes_[self].grad;
      const Tensor& y = t.nodes_[self].value;
      Tensor& ga = t.grad_slot(ra);
      for (std::size_t i = 0; i < dy.numel(); ++i) ga[i] += dy[i] * y[i];
    });
    return r;
  }

  // Row-wise softmax with max subtraction.
  Var softmax_rows(Var a) {
    const Tensor& vx = value(a);
    const std::size_t rows = vx.rows(), cols = vx.cols();
    Tensor out = vx;
    for (std::size_t r = 0; r < rows; ++r) {
      double* row = out.data() + r * cols;
      double mx = row[0];
      for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
      double sum = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        row[c] = std::exp(row[c] - mx);
        sum += row[c];
      }
      for (std::size_t c = 0; c < cols; ++c) row[c] /= sum;
    }
    Var r = push("softmax", std::move(out));
    set_backward(r, [ra = a.id, rows, cols, self = r.id](Tape& t) {
      const Tensor& dy = t.nodes_[self].grad;
      const Tensor& y = t.nodes_[self].value;
      Tensor& ga = t.grad_slot(ra);
      for (std::size_t rr = 0; rr < rows; ++rr) {
        const double* yrow = y.data() + rr * cols;
        const double* drow = dy.data() + rr * cols;
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += drow[c] * yrow[c];
        double* grow = ga.data() + rr * cols;
        for (std::size_t c = 0; c < cols; ++c) grow[c] += yrow[c] * (drow[c] - dot);
      }
    });
    return r;
  }

  Var log_softmax_rows(Var a) {
    const Tensor& vx = value(a);
    const std::size_t rows = vx.rows(), cols = vx.cols();
    Tensor out = vx;
    for (std::size_t r = 0; r < rows; ++r) {
      double* row = out.data() + r * cols;
      double mx = row[0];
      for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
      double sum = 0.0;
      for (std::size_t c = 0; c < cols; ++c) sum += std::exp(row[c] - mx);
      const double lse = mx + std::log(sum);
      for (std::size_t c = 0; c < cols; ++c) row[c] -= lse;
    }
    Var r = push("log_softmax", std::move(out));
    set_backward(r, [ra = a.id, rows, cols, self = r.id](Tape& t) {
      const Tensor& dy = t.nodes_[self].grad;
      const Tensor& y = t.nodes_[self].value;
      Tensor& ga = t.grad_slot(ra);
      for (std::size_t rr = 0; rr < rows; ++rr) {
        const double* yrow = y.data() + rr * cols;
        const double* drow = dy.data() + rr * cols;
        double dsum = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dsum += drow[c];
        double* grow = ga.data() + rr * cols;
        for (std::size_t c = 0; c < cols; ++c) grow[c] += drow[c] - std::exp(yrow[c]) * dsum;
      }
    });
    return r;
  }

  // ---- linear algebra and layout ------------------------------------------

  Var matmul(Var a, Var b) {
    Tensor out = brcsgan::matmul(value(a), value(b));
    Var r = push("matmul", std::move(out));
    set_backward(r, [ra = a.id, rb = b.id, self = r.id](Tape& t) {
      const Tensor& dy = t.nodes_[self].grad;
      matmul_nt_acc(dy, t.nodes_[rb].value, t.grad_slot(ra));
      matmul_tn_acc(t.nodes_[ra].value, dy, t.grad_slot(rb));
    });
    return r;
  }

  Var concat_cols(Var a, Var b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    const std::size_t rows = va.rows();
    if (vb.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    const std::size_t ca = va.cols(), cb = vb.cols();
    Tensor out({rows, ca + cb});
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(va.data() + r * ca, ca, out.data() + r * (ca + cb));
      std::copy_n(vb.data() + r * cb, cb, out.data() + r * (ca + cb) + ca);
    }
    Var r = push("concat_cols", std::move(out));
    set_backward(r, [ra = a.id, rb = b.id, rows, ca, cb, self = r.id](Tape& t) {
      const Tensor& dy = t.nodes_[self].grad;
      Tensor& ga = t.grad_slot(ra);
      Tensor& gb = t.grad_slot(rb);
      for (std::size_t rr = 0; rr < rows; ++rr) {
        const double* drow = dy.data() + rr * (ca + cb);
        for (std::size_t c = 0; c < ca; ++c) ga[rr * ca + c] += drow[c];
        for (std::size_t c = 0; c < cb; ++c) gb[rr * cb + c] += drow[ca + c];
      }
    });
    return r;
  }

  Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
    const Tensor& va = value(a);
    const std::size_t rows = va.rows(), cols = va.cols();
    if (c0 >= c1 || c1 > cols) throw std::invalid_argument("slice_cols: bad range");
    const std::size_t w = c1 - c0;
    Tensor out({rows, w});
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(va.data() + r * cols + c0, w, out.data() + r * w);
    Var r = push("slice_cols", std::move(out));
    set_backward(r, [ra = a.id, rows, cols, c0, w, self = r.id](Tape& t) {
      const Tensor& dy = t.nodes_[self].grad;
      Tensor& ga = t.grad_slot(ra);
      for (std::size_t rr = 0; rr < rows; ++rr)
        for (std::size_t c = 0; c < w; ++c) ga[rr * cols + c0 + c] += dy[rr * w + c];
    });
    return r;
  }

  Var slice_rows(Var a, std::size_t r0, std::size_t r1) {
    const Tensor& va = value(a);
    const std::size_t rows = va.rows(), cols = va.cols();
    if (r0 >= r1 || r1 > rows) throw std::invalid_argument("slice_rows: bad range");
    Tensor out({r1 - r0, cols});
    std::copy_n(va.data() + r0 * cols, (r1 - r0) * cols, out.data());
    Var r = push("slice_rows", std::move(out));
    set_backward(r, [ra = a.id, r0, cols, self = r.id](Tape& t) {
      const Tensor& dy = t.nodes_[self].grad;
      Tensor& ga = t.grad_slot(ra);
      for (std::size_t i = 0; i < dy.numel(); ++i) ga[r0 * cols + i] += dy[i];
    });
    return r;
  }

  // Vertical concatenation, in input order.
  Var concat_rows(const std::vector<Var>& inputs) {
    if (inputs.empty()) throw std::invalid_argument("concat_rows: no inputs");
    const std::size_t cols = value(inputs[0]).cols();
    std::size_t total = 0;
    std::vector<int> ids;
    std::vector<std::size_t> row_counts;
    for (Var v : inputs) {
      if (value(v).cols() != cols) throw std::invalid_argument("concat_rows: width mismatch");
      ids.push_back(v.id);
      row_counts.push_back(value(v).rows());
      total += value(v).rows();
    }
    Tensor out({total, cols});
    std::size_t at = 0;
    for (Var v : inputs) {
      std::copy_n(value(v).data(), value(v).numel(), out.data() + at * cols);
      at += value(v).rows();
    }
    Var r = push("concat_rows", std::move(out));
    set_backward(r, [ids, row_counts, cols, self = r.id](Tape& t) {
      const Tensor& dy = t.nodes_[self].grad;
      std::size_t at2 = 0;
      for (std::size_t j = 0; j < ids.size(); ++j) {
        Tensor& g = t.grad_slot(ids[j]);
        for (std::size_t i = 0; i < row_counts[j] * cols; ++i) g[i] += dy[at2 * cols + i];
        at2 += row_counts[j];
      }
    });
    return r;
  }

  // Row gather; the embedding lookup. ids may repeat (grads accumulate).
  Var gather_rows(Var table, const std::vector<int>& ids) {
    const Tensor& vt = value(table);
    const std::size_t cols = vt.cols(), nrows = vt.rows();
    Tensor out({ids.size(), cols});
    for (std::size_t r = 0; r < ids.size(); ++r) {
      const int id = ids[r];
      if (id < 0 || static_cast<std::size_t>(id) >= nrows)
        throw std::out_of_range("gather_rows: id out of range");
      std::copy_n(vt.data() + static_cast<std::size_t>(id) * cols, cols, out.data() + r * cols);
    }
    Var r = push("gather_rows", std::move(out));
    set_backward(r, [rt = table.id, ids, cols, self = r.id](Tape& t) {
      const Tensor& dy = t.nodes_[self].grad;
      Tensor& gt = t.grad_slot(rt);
      for (std::size_t rr = 0; rr < ids.size(); ++rr) {
        double* grow = gt.data() + static_cast<std::size_t>(ids[rr]) * cols;
        const double* drow = dy.data() + rr * cols;
        for (std::size_t c = 0; c < cols; ++c) grow[c] += drow[c];
      }
    });
    return r;
  }

  // (B x d) -> (B*m x d); output row b*m+j is input row b.
  Var expand_rows(Var a, std::size_t m) {
    const Tensor& va = value(a);
    const std::size_t b = va.rows(), d = va.cols();
    Tensor out({b * m, d});
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < m; ++j)
        std::copy_n(va.data() + i * d, d, out.data() + (i * m + j) * d);
    Var r = push("expand_rows", std::move(out));
    set_backward(r, [ra = a.id, b, m, d, self = r.id](Tape& t) {
      const Tensor& dy = t.nodes_[self].grad;
      Tensor& ga = t.grad_slot(ra);
      for (std::size_t i = 0; i < b; ++i) {
        double* grow = ga.data() + i * d;
        for (std::size_t j = 0; j < m; ++j) {
          const double* drow = dy.data() + (i * m + j) * d;
          for (std::size_t c = 0; c < d; ++c) grow[c] += drow[c];
        }
      }
    });
    return r;
  }

  // out[b] = sum_j w[b,j] * h[b*m+j]; the attention context reduction.
  Var block_weighted_sum(Var h, Var w) {
    const Tensor& vh = value(h);
    const Tensor& vw = value(w);
    const std::size_t b = vw.rows(), m = vw.cols(), d = vh.cols();
    if (vh.rows() != b * m) throw std::invalid_argument("block_weighted_sum: shape mismatch");
    Tensor out({b, d});
    for (std::size_t i = 0; i < b; ++i) {
      double* orow = out.data() + i * d;
      for (std::size_t j = 0; j < m; ++j) {
        const double wij = vw[i * m + j];
        if (wij == 0.0) continue;
        const double* hrow = vh.data() + (i * m + j) * d;
        for (std::size_t c = 0; c < d; ++c) orow[c] += wij * hrow[c];
      }
    }
    Var r = push("block_weighted_sum", std::move(out));
    set_backward(r, [rh = h.id, rw = w.id, b, m, d, self = r.id](Tape& t) {
      const Tensor& dy = t.nodes_[self].grad;
      const Tensor& vh2 = t.nodes_[rh].value;
      const Tensor& vw2 = t.nodes_[rw].value;
      Tensor& gh = t.grad_slot(rh);
      Tensor& gw = t.grad_slot(rw);
      for (std::size_t i = 0; i < b; ++i) {
        const double* drow = dy.data() + i * d;
        for (std::size_t j = 0; j < m; ++j) {
          const double wij = vw2[i * m + j];
          double* ghrow = gh.data() + (i * m + j) * d;
          const double* hrow = vh2.data() + (i * m + j) * d;
          double dot = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            ghrow[c] += wij * drow[c];
            dot += drow[c] * hrow[c];
          }
          gw[i * m + j] += dot;
        }
      }
    });
    return r;
  }

  // Stack m inputs of shape (B x d) into (B*m x d) with out[b*m+j] = in_j[b].
  Var stack_blocks(const std::vector<Var>& inputs) {
    if (inputs.empty()) throw std::invalid_argument("stack_blocks: no inputs");
    const std::size_t m = inputs.size();
    const Tensor& v0 = value(inputs[0]);
    const std::size_t b = v0.rows(), d = v0.cols();
    Tensor out({b * m, d});
    std::vector<int> ids(m);
    for (std::size_t j = 0; j < m; ++j) {
      const Tensor& vj = value(inputs[j]);
      if (vj.rows() != b || vj.cols() != d) throw std::invalid_argument("stack_blocks: shape mismatch");
      ids[j] = inputs[j].id;
      for (std::size_t i = 0; i < b; ++i)
        std::copy_n(vj.data() + i * d, d, out.data() + (i * m + j) * d);
    }
    Var r = push("stack_blocks", std::move(out));
    set_backward(r, [ids, b, m, d, self = r.id](Tape& t) {
      const Tensor& dy = t.nodes_[self].grad;
      for (std::size_t j = 0; j < m; ++j) {
        Tensor& gj = t.grad_slot(ids[j]);
        for (std::size_t i = 0; i < b; ++i) {
          const double* drow = dy.data() + (i * m + j) * d;
          double* grow = gj.data() + i * d;
          for (std::size_t c = 0; c < d; ++c) grow[c] += drow[c];
        }
      }
    });
    return r;
  }

  // Max over each block of p consecutive rows, per column; ties go to the
  // first (lowest-index) row.
  Var block_max_rows(Var a, std::size_t p) {
    const Tensor& va = value(a);
    const std::size_t total = va.rows(), cols = va.cols();
    if (p == 0 || total % p != 0) throw std::invalid_argument("block_max_rows: bad block size");
    const std::size_t b = total / p;
    Tensor out({b, cols});
    std::vector<std::size_t> arg(b * cols);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t c = 0; c < cols; ++c) {
        double best = va[(i * p) * cols + c];
        std::size_t bestr = 0;
        for (std::size_t j = 1; j < p; ++j) {
          const double v = va[(i * p + j) * cols + c];
          if (v > best) {
            best = v;
            bestr = j;
          }
        }
        out[i * cols + c] = best;
        arg[i * cols + c] = bestr;
      }
    }
    Var r = push("block_max_rows", std::move(out));
    set_backward(r, [ra = a.id, arg = std::move(arg), b, p, cols, self = r.id](Tape& t) {
      const Tensor& dy = t.nodes_[self].grad;
      Tensor& ga = t.grad_slot(ra);
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t c = 0; c < cols; ++c)
          ga[(i * p + arg[i * cols + c]) * cols + c] += dy[i * cols + c];
    });
    return r;
  }

  // Sliding windows of l rows flattened: (T x k) -> (T-l+1 x l*k).
  Var im2row(Var a, std::size_t l) {
    const Tensor& va = value(a);
    const std::size_t rows = va.rows(), k = va.cols();
    if (l == 0 || l > rows) throw std::invalid_argument("im2row: window larger than input");
    const std::size_t n = rows - l + 1;
    Tensor out({n, l * k});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t w = 0; w < l; ++w)
        std::copy_n(va.data() + (i + w) * k, k, out.data() + i * l * k + w * k);
    Var r = push("im2row", std::move(out));
    set_backward(r, [ra = a.id, n, l, k, self = r.id](Tape& t) {
      const Tensor& dy = t.nodes_[self].grad;
      Tensor& ga = t.grad_slot(ra);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t w = 0; w < l; ++w) {
          const double* drow = dy.data() + i * l * k + w * k;
          double* grow = ga.data() + (i + w) * k;
          for (std::size_t c = 0; c < k; ++c) grow[c] += drow[c];
        }
    });
    return r;
  }

  // Batch normalization over rows, per column, using batch statistics
  // (population variance). Optionally reports the batch stats so the caller
  // can maintain running averages.
  Var batchnorm_train(Var x, Var gamma, Var beta, double eps,
                      std::vector<double>* batch_mean = nullptr,
                      std::vector<double>* batch_var = nullptr) {
    const Tensor& vx = value(x);
    const std::size_t rows = vx.rows(), cols = vx.cols();
    if (value(gamma).numel() != cols || value(beta).numel() != cols)
      throw std::invalid_argument("batchnorm: gamma/beta width mismatch");
    std::vector<double> mean(cols, 0.0), var(cols, 0.0), inv(cols);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) mean[c] += vx[r * cols + c];
    for (std::size_t c = 0; c < cols; ++c) mean[c] /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        const double d = vx[r * cols + c] - mean[c];
        var[c] += d * d;
      }
    for (std::size_t c = 0; c < cols; ++c) {
      var[c] /= static_cast<double>(rows);
      inv[c] = 1.0 / std::sqrt(var[c] + eps);
    }
    if (batch_mean) *batch_mean = mean;
    if (batch_var) *batch_var = var;

    Tensor xhat({rows, cols});
    Tensor out({rows, cols});
    const Tensor& vg = value(gamma);
    const Tensor& vb = value(beta);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        const double xh = (vx[r * cols + c] - mean[c]) * inv[c];
        xhat[r * cols + c] = xh;
        out[r * cols + c] = vg[c] * xh + vb[c];
      }
    Var res = push("batchnorm", std::move(out));
    set_backward(res, [rx = x.id, rg = gamma.id, rb = beta.id, xhat = std::move(xhat),
                       inv = std::move(inv), rows, cols, self = res.id](Tape& t) {
      const Tensor& dy = t.nodes_[self].grad;
      const Tensor& vg2 = t.nodes_[rg].value;
      Tensor& gx = t.grad_slot(rx);
      Tensor& gg = t.grad_slot(rg);
      Tensor& gb = t.grad_slot(rb);
      const double n = static_cast<double>(rows);
      for (std::size_t c = 0; c < cols; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t r = 0; r < rows; ++r) {
          const double d = dy[r * cols + c];
          sum_dy += d;
          sum_dy_xhat += d * xhat[r * cols + c];
        }
        gg[c] += sum_dy_xhat;
        gb[c] += sum_dy;
        const double g = vg2[c];
        for (std::size_t r = 0; r < rows; ++r) {
          const double d = dy[r * cols + c];
          gx[r * cols + c] +=
              g * inv[c] / n * (n * d - sum_dy - xhat[r * cols + c] * sum_dy_xhat);
        }
      }
    });
    return res;
  }

  // out[r] = x[r, ids[r]]; used to select target-token log probabilities.
  Var pick_rows(Var x, const std::vector<int>& ids) {
    const Tensor& vx = value(x);
    const std::size_t rows = vx.rows(), cols = vx.cols();
    if (ids.size() != rows) throw std::invalid_argument("pick_rows: id count mismatch");
    Tensor out({rows, 1});
    for (std::size_t r = 0; r < rows; ++r) {
      const int id = ids[r];
      if (id < 0 || static_cast<std::size_t>(id) >= cols)
        throw std::out_of_range("pick_rows: index out of range");
      out[r] = vx[r * cols + static_cast<std::size_t>(id)];
    }
    Var r = push("pick_rows", std::move(out));
    set_backward(r, [rx = x.id, ids, rows, cols, self = r.id](Tape& t) {
      const Tensor& dy = t.nodes_[self].grad;
      Tensor& gx = t.grad_slot(rx);
      for (std::size_t rr = 0; rr < rows; ++rr)
        gx[rr * cols + static_cast<std::size_t>(ids[rr])] += dy[rr];
    });
    return r;
  }

  Var sum_all(Var a) {
    const Tensor& va = value(a);
    double s = 0.0;
    for (double v : va.vec()) s += v;
    Var r = push("sum_all", Tensor::scalar(s));
    set_backward(r, [ra = a.id, self = r.id](Tape& t) {
      const double d = t.nodes_[self].grad[0];
      Tensor& ga = t.grad_slot(ra);
      for (double& v : ga.vec()) v += d;
    });
    return r;
  }

  Var reshape(Var a, std::vector<std::size_t> shape) {
    const Tensor& va = value(a);
    Tensor out(std::move(shape), va.vec());
    Var r = push("reshape", std::move(out));
    set_backward(r, [ra = a.id, self = r.id](Tape& t) {
      const Tensor& dy = t.nodes_[self].grad;
      Tensor& ga = t.grad_slot(ra);
      for (std::size_t i = 0; i < dy.numel(); ++i) ga[i] += dy[i];
    });
    return r;
  }

  // ---- reverse pass -------------------------------------------------------

  // Seeds d(loss)/d(loss) = 1, sweeps the tape once in reverse, accumulates
  // parameter gradients (additively) into their stores, then clears the tape.
  void backward(Var loss) {
    Node& ln = node(loss);
    if (ln.value.numel() != 1) throw std::invalid_argument("backward: loss is not scalar");
    grad_slot(loss.id)[0] += 1.0;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.grad_set && n.backward) n.backward(*this);
    }
    for (ParamStore* s : touched_stores_) s->mark_grads_populated();
    clear();
  }

  Tensor& grad_slot(int id) {
    Node& n = nodes_.at(static_cast<std::size_t>(id));
    if (!n.grad_set) {
      n.grad = Tensor::zeros(n.value.shape());
      n.grad_set = true;
    }
    return n.grad;
  }

 private:
  void require_same_shape(Var a, Var b, const char* op) {
    if (!value(a).same_shape(value(b)))
      throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                  value(a).shape_str() + " vs " + value(b).shape_str());
  }

  Var push(const char* op, Tensor value) {
    if (!value.all_finite())
      throw std::runtime_error(std::string("non-finite value produced by op '") + op + "'");
    Node n;
    n.value = std::move(value);
    n.op = op;
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  void set_backward(Var v, std::function<void(Tape&)> fn) {
    nodes_[static_cast<std::size_t>(v.id)].backward = std::move(fn);
  }

  void acc(int id, const Tensor& dy) {
    Tensor& g = grad_slot(id);
    for (std::size_t i = 0; i < dy.numel(); ++i) g[i] += dy[i];
  }

  const Node& node(Var v) const {
    if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
      throw std::logic_error("Tape: variable does not belong to this tape");
    return nodes_[static_cast<std::size_t>(v.id)];
  }
  Node& node(Var v) { return const_cast<Node&>(static_cast<const Tape*>(this)->node(v)); }

  void touch(ParamStore* s) {
    for (ParamStore* p : touched_stores_)
      if (p == s) return;
    touched_stores_.push_back(s);
  }

  std::vector<Node> nodes_;
  std::vector<ParamStore*> touched_stores_;
};

struct FdReport {
  double max_rel_err = 0.0;
  std::string worst_param;
};

// Central-difference gradient check of a scalar-valued graph builder against
// the tape's reverse pass, over every trainable component of the store.
// The builder must be deterministic; two disagreeing base evaluations are an
// error.
inline FdReport finite_difference_check(ParamStore& store,
                                        const std::function<Var(Tape&)>& build,
                                        double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_difference_check: step must be > 0");
  auto eval = [&]() {
    Tape tape;
    Var loss = build(tape);
    return tape.value(loss).item();
  };
  const double base1 = eval();
  const double base2 = eval();
  if (base1 != base2)
    throw std::runtime_error("finite_difference_check: function is not deterministic");

  store.zero_grads();
  {
    Tape tape;
    Var loss = build(tape);
    tape.backward(loss);
  }

  FdReport report;
  for (auto& e : store.entries()) {
    if (!e.trainable) continue;
    for (std::size_t i = 0; i < e.value.numel(); ++i) {
      const double saved = e.value[i];
      e.value[i] = saved + step;
      const double up = eval();
      e.value[i] = saved - step;
      const double dn = eval();
      e.value[i] = saved;
      const double numeric = (up - dn) / (2.0 * step);
      const double analytic = e.grad[i];
      const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
      const double rel = std::fabs(analytic - numeric) / denom;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = e.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  store.zero_grads();
  return report;
}

}  // namespace brcsgan
