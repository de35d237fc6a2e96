#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "flatner/array.hpp"
#include "flatner/common.hpp"

namespace flatner {

// Handle into a Tape. Plain index; the tape owns everything.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

namespace detail {

// C = op_a(A) * op_b(B) where op transposes when the flag is set.
template <typename T>
Array<T> matmul_plain(const Array<T>& a, const Array<T>& b, bool ta, bool tb) {
  const std::size_t m = ta ? a.cols() : a.rows();
  const std::size_t k = ta ? a.rows() : a.cols();
  const std::size_t kb = tb ? b.cols() : b.rows();
  const std::size_t n = tb ? b.rows() : b.cols();
  require(k == kb, cat("matmul: inner dimensions differ, ", shape_str(a.shape()), (ta ? "^T" : ""),
                       " * ", shape_str(b.shape()), (tb ? "^T" : "")));
  Array<T> c({m, n});
  const T* pa = a.data();
  const T* pb = b.data();
  T* pc = c.data();
  if (!ta && !tb) {
    const std::size_t lda = a.cols(), ldb = b.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const T av = pa[i * lda + p];
        if (av == T(0)) continue;
        const T* brow = pb + p * ldb;
        T* crow = pc + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
  } else if (!ta && tb) {
    const std::size_t lda = a.cols(), ldb = b.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const T* arow = pa + i * lda;
        const T* brow = pb + j * ldb;
        T acc = 0;
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        pc[i * n + j] = acc;
      }
  } else if (ta && !tb) {
    const std::size_t lda = a.cols(), ldb = b.cols();
    for (std::size_t p = 0; p < k; ++p) {
      const T* arow = pa + p * lda;
      const T* brow = pb + p * ldb;
      for (std::size_t i = 0; i < m; ++i) {
        const T av = arow[i];
        if (av == T(0)) continue;
        T* crow = pc + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else {
    const std::size_t lda = a.cols(), ldb = b.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        T acc = 0;
        for (std::size_t p = 0; p < k; ++p) acc += pa[p * lda + i] * pb[j * ldb + p];
        pc[i * n + j] = acc;
      }
  }
  return c;
}

}  // namespace detail

// Reverse-mode tape over dense arrays. Nodes are appended in execution
// order, which is already a topological order, so the backward sweep is a
// single reverse pass that visits each node exactly once. Gradients
// accumulate additively, so a node used twice receives both contributions.
template <typename T>
class Tape {
 public:
  struct Node {
    Array<T> value;
    Array<T> grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::function<void(Tape&, std::size_t self)> backward;
  };

  // When set, every op verifies its output is finite and throws
  // numeric_error naming the op otherwise.
  bool debug_checks = false;

  std::size_t size() const { return nodes_.size(); }

  const Array<T>& val(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  // Gradient of the last backward() call; zeros if the node was never reached.
  Array<T> grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.empty()) return Array<T>(n.value.shape());
    return n.grad;
  }

  Var leaf(Array<T> value, bool requires_grad_flag) {
    return push("leaf", std::move(value), requires_grad_flag, nullptr);
  }

  Var constant(Array<T> value) { return push("constant", std::move(value), false, nullptr); }

  Var add(Var a, Var b) {
    require_same_shape("add", a, b);
    Array<T> out = val(a);
    const Array<T>& vb = val(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += vb[i];
    return binary_elementwise("add", a, b, std::move(out),
                              [](Tape& t, std::size_t self, int pa, int pb) {
                                const Array<T>& g = t.nodes_[self].grad;
                                t.accum(pa, g);
                                t.accum(pb, g);
                              });
  }

  Var sub(Var a, Var b) {
    require_same_shape("sub", a, b);
    Array<T> out = val(a);
    const Array<T>& vb = val(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= vb[i];
    return binary_elementwise("sub", a, b, std::move(out),
                              [](Tape& t, std::size_t self, int pa, int pb) {
                                const Array<T>& g = t.nodes_[self].grad;
                                t.accum(pa, g);
                                t.accum_scaled(pb, g, T(-1));
                              });
  }

  Var mul(Var a, Var b) {
    require_same_shape("mul", a, b);
    Array<T> out = val(a);
    const Array<T>& vb = val(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
    return binary_elementwise("mul", a, b, std::move(out),
                              [](Tape& t, std::size_t self, int pa, int pb) {
                                const Array<T>& g = t.nodes_[self].grad;
                                t.accum_product(pa, g, t.nodes_[pb].value);
                                t.accum_product(pb, g, t.nodes_[pa].value);
                              });
  }

  Var scale(Var a, T c) {
    Array<T> out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
    const int pa = a.id;
    return push("scale", std::move(out), requires_grad(a),
                [pa, c](Tape& t, std::size_t self) {
                  t.accum_scaled(pa, t.nodes_[self].grad, c);
                });
  }

  // m + v broadcast over rows; v is {1, C}.
  Var add_rowvec(Var m, Var v) {
    const Array<T>& vm = val(m);
    const Array<T>& vv = val(v);
    require(vv.rows() == 1 && vv.cols() == vm.cols(),
            cat("add_rowvec: ", shape_str(vm.shape()), " + ", shape_str(vv.shape())));
    Array<T> out = vm;
    for (std::size_t i = 0; i < out.rows(); ++i)
      for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) += vv[j];
    const int pm = m.id, pv = v.id;
    return push("add_rowvec", std::move(out), requires_grad(m) || requires_grad(v),
                [pm, pv](Tape& t, std::size_t self) {
                  const Array<T>& g = t.nodes_[self].grad;
                  t.accum(pm, g);
                  if (t.nodes_[pv].requires_grad) {
                    Array<T> gv({1, g.cols()});
                    for (std::size_t i = 0; i < g.rows(); ++i)
                      for (std::size_t j = 0; j < g.cols(); ++j) gv[j] += g.at(i, j);
                    t.accum(pv, gv);
                  }
                });
  }

  // m + v broadcast over columns; v is {R, 1}.
  Var add_colvec(Var m, Var v) {
    const Array<T>& vm = val(m);
    const Array<T>& vv = val(v);
    require(vv.cols() == 1 && vv.rows() == vm.rows(),
            cat("add_colvec: ", shape_str(vm.shape()), " + ", shape_str(vv.shape())));
    Array<T> out = vm;
    for (std::size_t i = 0; i < out.rows(); ++i)
      for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) += vv[i];
    const int pm = m.id, pv = v.id;
    return push("add_colvec", std::move(out), requires_grad(m) || requires_grad(v),
                [pm, pv](Tape& t, std::size_t self) {
                  const Array<T>& g = t.nodes_[self].grad;
                  t.accum(pm, g);
                  if (t.nodes_[pv].requires_grad) {
                    Array<T> gv({g.rows(), 1});
                    for (std::size_t i = 0; i < g.rows(); ++i)
                      for (std::size_t j = 0; j < g.cols(); ++j) gv[i] += g.at(i, j);
                    t.accum(pv, gv);
                  }
                });
  }

  Var matmul(Var a, Var b, bool ta = false, bool tb = false) {
    require_2d("matmul", a);
    require_2d("matmul", b);
    Array<T> out = detail::matmul_plain(val(a), val(b), ta, tb);
    const int pa = a.id, pb = b.id;
    return push("matmul", std::move(out), requires_grad(a) || requires_grad(b),
                [pa, pb, ta, tb](Tape& t, std::size_t self) {
                  const Array<T>& g = t.nodes_[self].grad;
                  const Array<T>& va = t.nodes_[pa].value;
                  const Array<T>& vb = t.nodes_[pb].value;
                  if (t.nodes_[pa].requires_grad) {
                    Array<T> ga = ta ? (tb ? detail::matmul_plain(vb, g, true, true)
                                           : detail::matmul_plain(vb, g, false, true))
                                     : (tb ? detail::matmul_plain(g, vb, false, false)
                                           : detail::matmul_plain(g, vb, false, true));
                    t.accum(pa, ga);
                  }
                  if (t.nodes_[pb].requires_grad) {
                    Array<T> gb = tb ? (ta ? detail::matmul_plain(g, va, true, true)
                                           : detail::matmul_plain(g, va, true, false))
                                     : (ta ? detail::matmul_plain(va, g, false, false)
                                           : detail::matmul_plain(va, g, true, false));
                    t.accum(pb, gb);
                  }
                });
  }

  // Subgradient at 0 is defined as 0.
  Var relu(Var a) {
    Array<T> out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > T(0) ? out[i] : T(0);
    const int pa = a.id;
    return push("relu", std::move(out), requires_grad(a),
                [pa](Tape& t, std::size_t self) {
                  const Array<T>& g = t.nodes_[self].grad;
                  const Array<T>& x = t.nodes_[pa].value;
                  Array<T> gx(x.shape());
                  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = x[i] > T(0) ? g[i] : T(0);
                  t.accum(pa, gx);
                });
  }

  // Softmax over the last axis. keep is the same shape as logits; entries with
  // keep == 0 produce exactly 0 in the output and receive no gradient. A row
  // with nothing kept signals a masking bug upstream.
  Var softmax_rows(Var logits, const Array<std::uint8_t>& keep) {
    const Array<T>& x = val(logits);
    require(keep.shape() == x.shape(), cat("softmax: mask shape ", shape_str(keep.shape()),
                                           " does not match logits ", shape_str(x.shape())));
    const std::size_t r = x.rows(), c = x.cols();
    Array<T> out({r, c});
    for (std::size_t i = 0; i < r; ++i) {
      T mx = -std::numeric_limits<T>::infinity();
      bool any = false;
      for (std::size_t j = 0; j < c; ++j)
        if (keep.at(i, j)) {
          any = true;
          mx = std::max(mx, x.at(i, j));
        }
      if (!any) throw validation_error(cat("softmax: row ", i, " is fully masked"));
      T denom = 0;
      for (std::size_t j = 0; j < c; ++j)
        if (keep.at(i, j)) denom += std::exp(x.at(i, j) - mx);
      for (std::size_t j = 0; j < c; ++j)
        out.at(i, j) = keep.at(i, j) ? std::exp(x.at(i, j) - mx) / denom : T(0);
    }
    const int pa = logits.id;
    return push("softmax", std::move(out), requires_grad(logits),
                [pa, keep](Tape& t, std::size_t self) {
                  const Array<T>& g = t.nodes_[self].grad;
                  const Array<T>& y = t.nodes_[self].value;
                  Array<T> gx(y.shape());
                  for (std::size_t i = 0; i < y.rows(); ++i) {
                    T dot = 0;
                    for (std::size_t j = 0; j < y.cols(); ++j) dot += g.at(i, j) * y.at(i, j);
                    for (std::size_t j = 0; j < y.cols(); ++j)
                      gx.at(i, j) = keep.at(i, j) ? y.at(i, j) * (g.at(i, j) - dot) : T(0);
                  }
                  t.accum(pa, gx);
                });
  }

  Var concat(const std::vector<Var>& parts, int axis) {
    require(!parts.empty(), "concat: no inputs");
    require(axis == 0 || axis == 1, "concat: axis must be 0 or 1");
    std::size_t rows = val(parts[0]).rows(), cols = val(parts[0]).cols();
    std::size_t total = axis == 0 ? rows : cols;
    bool rg = requires_grad(parts[0]);
    for (std::size_t k = 1; k < parts.size(); ++k) {
      const Array<T>& v = val(parts[k]);
      if (axis == 0) {
        require(v.cols() == cols, cat("concat axis 0: column mismatch ", shape_str(v.shape())));
        total += v.rows();
      } else {
        require(v.rows() == rows, cat("concat axis 1: row mismatch ", shape_str(v.shape())));
        total += v.cols();
      }
      rg = rg || requires_grad(parts[k]);
    }
    Array<T> out(axis == 0 ? Shape{total, cols} : Shape{rows, total});
    std::size_t off = 0;
    for (Var p : parts) {
      const Array<T>& v = val(p);
      if (axis == 0) {
        std::copy(v.data(), v.data() + v.size(), out.data() + off * cols);
        off += v.rows();
      } else {
        for (std::size_t i = 0; i < rows; ++i)
          std::copy(v.data() + i * v.cols(), v.data() + (i + 1) * v.cols(),
                    out.data() + i * total + off);
        off += v.cols();
      }
    }
    std::vector<int> ids(parts.size());
    for (std::size_t k = 0; k < parts.size(); ++k) ids[k] = parts[k].id;
    return push("concat", std::move(out), rg,
                [ids, axis](Tape& t, std::size_t self) {
                  const Array<T>& g = t.nodes_[self].grad;
                  std::size_t off = 0;
                  for (int pid : ids) {
                    const Array<T>& v = t.nodes_[pid].value;
                    if (t.nodes_[pid].requires_grad) {
                      Array<T> gp(v.shape());
                      if (axis == 0) {
                        std::copy(g.data() + off * v.cols(), g.data() + off * v.cols() + v.size(),
                                  gp.data());
                      } else {
                        for (std::size_t i = 0; i < v.rows(); ++i)
                          std::copy(g.data() + i * g.cols() + off,
                                    g.data() + i * g.cols() + off + v.cols(),
                                    gp.data() + i * v.cols());
                      }
                      t.accum(pid, gp);
                    }
                    off += axis == 0 ? v.rows() : v.cols();
                  }
                });
  }

  // Embedding-style row lookup. Repeated ids accumulate their gradients.
  Var gather_rows(Var table, std::vector<int> ids) {
    const Array<T>& tab = val(table);
    require_2d("gather_rows", table);
    Array<T> out({ids.size(), tab.cols()});
    for (std::size_t k = 0; k < ids.size(); ++k) {
      require(ids[k] >= 0 && static_cast<std::size_t>(ids[k]) < tab.rows(),
              cat("gather_rows: id ", ids[k], " outside table ", shape_str(tab.shape())));
      std::copy(tab.data() + ids[k] * tab.cols(), tab.data() + (ids[k] + 1) * tab.cols(),
                out.data() + k * tab.cols());
    }
    const int pt = table.id;
    return push("gather_rows", std::move(out), requires_grad(table),
                [pt, ids = std::move(ids)](Tape& t, std::size_t self) {
                  const Array<T>& g = t.nodes_[self].grad;
                  Array<T> gt(t.nodes_[pt].value.shape());
                  const std::size_t c = gt.cols();
                  for (std::size_t k = 0; k < ids.size(); ++k)
                    for (std::size_t j = 0; j < c; ++j) gt[ids[k] * c + j] += g.at(k, j);
                  t.accum(pt, gt);
                });
  }

  Var slice_rows(Var a, std::size_t start, std::size_t len) {
    const Array<T>& v = val(a);
    require_2d("slice_rows", a);
    require(start + len <= v.rows(),
            cat("slice_rows: [", start, ", ", start + len, ") outside ", shape_str(v.shape())));
    Array<T> out({len, v.cols()});
    std::copy(v.data() + start * v.cols(), v.data() + (start + len) * v.cols(), out.data());
    const int pa = a.id;
    return push("slice_rows", std::move(out), requires_grad(a),
                [pa, start](Tape& t, std::size_t self) {
                  const Array<T>& g = t.nodes_[self].grad;
                  Array<T> gp(t.nodes_[pa].value.shape());
                  std::copy(g.data(), g.data() + g.size(), gp.data() + start * gp.cols());
                  t.accum(pa, gp);
                });
  }

  // Each row repeated `times` times consecutively: out[i*times + j] = a[i].
  Var repeat_rows(Var a, std::size_t times) {
    const Array<T>& v = val(a);
    require_2d("repeat_rows", a);
    Array<T> out({v.rows() * times, v.cols()});
    for (std::size_t i = 0; i < v.rows(); ++i)
      for (std::size_t j = 0; j < times; ++j)
        std::copy(v.data() + i * v.cols(), v.data() + (i + 1) * v.cols(),
                  out.data() + (i * times + j) * v.cols());
    const int pa = a.id;
    return push("repeat_rows", std::move(out), requires_grad(a),
                [pa, times](Tape& t, std::size_t self) {
                  const Array<T>& g = t.nodes_[self].grad;
                  Array<T> gp(t.nodes_[pa].value.shape());
                  const std::size_t c = gp.cols();
                  for (std::size_t i = 0; i < gp.rows(); ++i)
                    for (std::size_t j = 0; j < times; ++j)
                      for (std::size_t k = 0; k < c; ++k)
                        gp.at(i, k) += g[(i * times + j) * c + k];
                  t.accum(pa, gp);
                });
  }

  Var row_sum(Var a) {
    const Array<T>& v = val(a);
    require_2d("row_sum", a);
    Array<T> out({v.rows(), 1});
    for (std::size_t i = 0; i < v.rows(); ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) out[i] += v.at(i, j);
    const int pa = a.id;
    return push("row_sum", std::move(out), requires_grad(a),
                [pa](Tape& t, std::size_t self) {
                  const Array<T>& g = t.nodes_[self].grad;
                  const Array<T>& v2 = t.nodes_[pa].value;
                  Array<T> gp(v2.shape());
                  for (std::size_t i = 0; i < v2.rows(); ++i)
                    for (std::size_t j = 0; j < v2.cols(); ++j) gp.at(i, j) = g[i];
                  t.accum(pa, gp);
                });
  }

  Var sum_all(Var a) {
    const Array<T>& v = val(a);
    Array<T> out({1, 1});
    for (std::size_t i = 0; i < v.size(); ++i) out[0] += v[i];
    const int pa = a.id;
    return push("sum_all", std::move(out), requires_grad(a),
                [pa](Tape& t, std::size_t self) {
                  const T g = t.nodes_[self].grad[0];
                  Array<T> gp(t.nodes_[pa].value.shape(), g);
                  t.accum(pa, gp);
                });
  }

  Var mean_all(Var a) {
    const std::size_t n = val(a).size();
    require(n > 0, "mean_all: empty input");
    return scale(sum_all(a), T(1) / static_cast<T>(n));
  }

  // Per-column log(sum(exp)) collapsing rows: {R, C} -> {1, C}.
  Var logsumexp_over_rows(Var a) {
    const Array<T>& x = val(a);
    require_2d("logsumexp_over_rows", a);
    const std::size_t r = x.rows(), c = x.cols();
    require(r > 0, "logsumexp_over_rows: empty input");
    Array<T> out({1, c});
    for (std::size_t j = 0; j < c; ++j) {
      T mx = x.at(0, j);
      for (std::size_t i = 1; i < r; ++i) mx = std::max(mx, x.at(i, j));
      T s = 0;
      for (std::size_t i = 0; i < r; ++i) s += std::exp(x.at(i, j) - mx);
      out[j] = mx + std::log(s);
    }
    const int pa = a.id;
    return push("logsumexp_over_rows", std::move(out), requires_grad(a),
                [pa](Tape& t, std::size_t self) {
                  const Array<T>& g = t.nodes_[self].grad;
                  const Array<T>& y = t.nodes_[self].value;
                  const Array<T>& x = t.nodes_[pa].value;
                  Array<T> gx(x.shape());
                  for (std::size_t i = 0; i < x.rows(); ++i)
                    for (std::size_t j = 0; j < x.cols(); ++j)
                      gx.at(i, j) = g[j] * std::exp(x.at(i, j) - y[j]);
                  t.accum(pa, gx);
                });
  }

  // Per-row log(sum(exp)) collapsing columns: {R, C} -> {R, 1}.
  Var logsumexp_over_cols(Var a) {
    const Array<T>& x = val(a);
    require_2d("logsumexp_over_cols", a);
    const std::size_t r = x.rows(), c = x.cols();
    require(c > 0, "logsumexp_over_cols: empty input");
    Array<T> out({r, 1});
    for (std::size_t i = 0; i < r; ++i) {
      T mx = x.at(i, 0);
      for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x.at(i, j));
      T s = 0;
      for (std::size_t j = 0; j < c; ++j) s += std::exp(x.at(i, j) - mx);
      out[i] = mx + std::log(s);
    }
    const int pa = a.id;
    return push("logsumexp_over_cols", std::move(out), requires_grad(a),
                [pa](Tape& t, std::size_t self) {
                  const Array<T>& g = t.nodes_[self].grad;
                  const Array<T>& y = t.nodes_[self].value;
                  const Array<T>& x = t.nodes_[pa].value;
                  Array<T> gx(x.shape());
                  for (std::size_t i = 0; i < x.rows(); ++i)
                    for (std::size_t j = 0; j < x.cols(); ++j)
                      gx.at(i, j) = g[i] * std::exp(x.at(i, j) - y[i]);
                  t.accum(pa, gx);
                });
  }

  // Gathers scalar entries by flat (row-major) index: -> {1, N}.
  Var pick(Var a, std::vector<std::size_t> idx) {
    const Array<T>& v = val(a);
    Array<T> out({1, idx.size()});
    for (std::size_t k = 0; k < idx.size(); ++k) {
      require(idx[k] < v.size(), cat("pick: flat index ", idx[k], " outside ", shape_str(v.shape())));
      out[k] = v[idx[k]];
    }
    const int pa = a.id;
    return push("pick", std::move(out), requires_grad(a),
                [pa, idx = std::move(idx)](Tape& t, std::size_t self) {
                  const Array<T>& g = t.nodes_[self].grad;
                  Array<T> gp(t.nodes_[pa].value.shape());
                  for (std::size_t k = 0; k < idx.size(); ++k) gp[idx[k]] += g[k];
                  t.accum(pa, gp);
                });
  }

  // Inverted dropout: kept entries are scaled by 1/(1-rate) at train time so
  // inference needs no rescaling. Identity (no node) when not training.
  Var dropout(Var a, double rate, Rng* rng, bool train) {
    require(rate >= 0.0 && rate < 1.0, cat("dropout: rate ", rate, " outside [0, 1)"));
    if (!train || rate == 0.0) return a;
    require(rng != nullptr, "dropout: training mode needs an rng");
    const Array<T>& v = val(a);
    Array<T> mask(v.shape());
    const T keep_scale = T(1.0 / (1.0 - rate));
    for (std::size_t i = 0; i < mask.size(); ++i)
      mask[i] = rng->uniform01() >= rate ? keep_scale : T(0);
    Array<T> out = v;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    const int pa = a.id;
    return push("dropout", std::move(out), requires_grad(a),
                [pa, mask = std::move(mask)](Tape& t, std::size_t self) {
                  const Array<T>& g = t.nodes_[self].grad;
                  Array<T> gp(g.shape());
                  for (std::size_t i = 0; i < gp.size(); ++i) gp[i] = g[i] * mask[i];
                  t.accum(pa, gp);
                });
  }

  // Row-wise layer normalization with learnable gain/offset ({1, C} each).
  Var layer_norm(Var x, Var gamma, Var beta, T eps) {
    const Array<T>& v = val(x);
    const Array<T>& gm = val(gamma);
    const Array<T>& bt = val(beta);
    require_2d("layer_norm", x);
    require(gm.rows() == 1 && gm.cols() == v.cols() && bt.rows() == 1 && bt.cols() == v.cols(),
            cat("layer_norm: gain/offset must be {1,", v.cols(), "}, got ", shape_str(gm.shape()),
                " and ", shape_str(bt.shape())));
    const std::size_t r = v.rows(), c = v.cols();
    Array<T> out({r, c});
    Array<T> xhat({r, c});
    Array<T> inv_std({r, 1});
    for (std::size_t i = 0; i < r; ++i) {
      T mean = 0;
      for (std::size_t j = 0; j < c; ++j) mean += v.at(i, j);
      mean /= static_cast<T>(c);
      T var = 0;
      for (std::size_t j = 0; j < c; ++j) {
        const T d = v.at(i, j) - mean;
        var += d * d;
      }
      var /= static_cast<T>(c);
      const T is = T(1) / std::sqrt(var + eps);
      inv_std[i] = is;
      for (std::size_t j = 0; j < c; ++j) {
        xhat.at(i, j) = (v.at(i, j) - mean) * is;
        out.at(i, j) = gm[j] * xhat.at(i, j) + bt[j];
      }
    }
    const int px = x.id, pg = gamma.id, pb = beta.id;
    return push(
        "layer_norm", std::move(out),
        requires_grad(x) || requires_grad(gamma) || requires_grad(beta),
        [px, pg, pb, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t,
                                                                           std::size_t self) {
          const Array<T>& g = t.nodes_[self].grad;
          const Array<T>& gm = t.nodes_[pg].value;
          const std::size_t r = g.rows(), c = g.cols();
          if (t.nodes_[pg].requires_grad) {
            Array<T> gg({1, c});
            for (std::size_t i = 0; i < r; ++i)
              for (std::size_t j = 0; j < c; ++j) gg[j] += g.at(i, j) * xhat.at(i, j);
            t.accum(pg, gg);
          }
          if (t.nodes_[pb].requires_grad) {
            Array<T> gb({1, c});
            for (std::size_t i = 0; i < r; ++i)
              for (std::size_t j = 0; j < c; ++j) gb[j] += g.at(i, j);
            t.accum(pb, gb);
          }
          if (t.nodes_[px].requires_grad) {
            Array<T> gx({r, c});
            for (std::size_t i = 0; i < r; ++i) {
              T sum_dxhat = 0, sum_dxhat_xhat = 0;
              for (std::size_t j = 0; j < c; ++j) {
                const T dxh = g.at(i, j) * gm[j];
                sum_dxhat += dxh;
                sum_dxhat_xhat += dxh * xhat.at(i, j);
              }
              const T inv_c = T(1) / static_cast<T>(c);
              for (std::size_t j = 0; j < c; ++j) {
                const T dxh = g.at(i, j) * gm[j];
                gx.at(i, j) =
                    inv_std[i] * (dxh - inv_c * sum_dxhat - xhat.at(i, j) * inv_c * sum_dxhat_xhat);
              }
            }
            t.accum(px, gx);
          }
        });
  }

  Var reshape(Var a, Shape shape) {
    Array<T> out = val(a).reshaped(shape);
    const int pa = a.id;
    return push("reshape", std::move(out), requires_grad(a),
                [pa](Tape& t, std::size_t self) {
                  t.accum(pa, t.nodes_[self].grad.reshaped(t.nodes_[pa].value.shape()));
                });
  }

  // Extension point for ops defined outside the tape. The backward callback
  // receives the output gradient and is responsible for calling accum_grad
  // on the parents it captured.
  Var custom(const std::vector<Var>& parents, Array<T> value,
             std::function<void(Tape&, const Array<T>& out_grad)> back) {
    bool rg = false;
    for (Var p : parents) rg = rg || requires_grad(p);
    return push("custom", std::move(value), rg,
                [back = std::move(back)](Tape& t, std::size_t self) {
                  back(t, t.nodes_[self].grad);
                });
  }

  void accum_grad(Var v, const Array<T>& g) { accum(v.id, g); }

  // Reverse sweep from a scalar loss. Leaves keep their gradients for reading
  // via grad(); calling backward twice accumulates, so use a fresh tape per step.
  void backward(Var loss) {
    const Node& ln = node(loss);
    require(ln.value.size() == 1,
            cat("backward: loss must be scalar, got ", shape_str(ln.value.shape())));
    if (!ln.requires_grad) return;
    accum(loss.id, Array<T>(ln.value.shape(), T(1)));
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.backward && !n.grad.empty()) n.backward(*this, id);
    }
  }

 private:
  const Node& node(Var v) const {
    require(v.id >= 0 && static_cast<std::size_t>(v.id) < nodes_.size(), "invalid tape handle");
    return nodes_[v.id];
  }

  Var push(const char* op, Array<T> value, bool rg,
           std::function<void(Tape&, std::size_t)> backward) {
    if (debug_checks && !value.all_finite())
      throw numeric_error(cat(op, ": non-finite value produced"));
    Node n;
    n.value = std::move(value);
    n.requires_grad = rg;
    if (rg && backward) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  template <typename Back>
  Var binary_elementwise(const char* op, Var a, Var b, Array<T> out, Back back) {
    const int pa = a.id, pb = b.id;
    return push(op, std::move(out), requires_grad(a) || requires_grad(b),
                [pa, pb, back](Tape& t, std::size_t self) { back(t, self, pa, pb); });
  }

  void accum(int id, const Array<T>& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.empty()) n.grad = Array<T>(n.value.shape());
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
  }

  void accum_scaled(int id, const Array<T>& g, T c) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.empty()) n.grad = Array<T>(n.value.shape());
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i] * c;
  }

  void accum_product(int id, const Array<T>& g, const Array<T>& other) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.empty()) n.grad = Array<T>(n.value.shape());
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i] * other[i];
  }

  void require_2d(const char* op, Var v) const {
    require(val(v).ndim() == 2, cat(op, ": expected 2-D array, got ", shape_str(val(v).shape())));
  }

  void require_same_shape(const char* op, Var a, Var b) const {
    require(val(a).same_shape(val(b)), cat(op, ": shape mismatch ", shape_str(val(a).shape()),
                                           " vs ", shape_str(val(b).shape())));
  }

  // Deque keeps references from val() stable while later ops append nodes.
  std::deque<Node> nodes_;
};

}  // namespace flatner
