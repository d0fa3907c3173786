#include "mact/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace mact::ops {

namespace {

Tape& same_tape(DiffArray a, DiffArray b) {
  if (a.tape() != b.tape()) throw validation_error("operands recorded on different tapes");
  return *a.tape();
}

void require_same_shape(DiffArray a, DiffArray b, const char* op) {
  if (a.shape() != b.shape()) {
    throw shape_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                      " vs " + shape_str(b.shape()));
  }
}

bool needs(Tape& t, DiffArray a) { return t.node_needs_grad(a.id()); }

}  // namespace

// --- elementwise -------------------------------------------------------------

DiffArray add(DiffArray a, DiffArray b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a, b, "add");
  std::vector<double> out(a.values().begin(), a.values().end());
  std::span<const double> bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const int aid = a.id(), bid = b.id();
  return t.emit(a.shape(), std::move(out), "add", needs(t, a) || needs(t, b),
                [aid, bid](Tape& tt, int self) {
                  std::span<const double> g = tt.grad_buffer(self);
                  if (tt.node_needs_grad(aid)) {
                    std::span<double> ga = tt.grad_buffer(aid);
                    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                  }
                  if (tt.node_needs_grad(bid)) {
                    std::span<double> gb = tt.grad_buffer(bid);
                    for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                  }
                });
}

DiffArray sub(DiffArray a, DiffArray b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.values().begin(), a.values().end());
  std::span<const double> bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const int aid = a.id(), bid = b.id();
  return t.emit(a.shape(), std::move(out), "sub", needs(t, a) || needs(t, b),
                [aid, bid](Tape& tt, int self) {
                  std::span<const double> g = tt.grad_buffer(self);
                  if (tt.node_needs_grad(aid)) {
                    std::span<double> ga = tt.grad_buffer(aid);
                    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                  }
                  if (tt.node_needs_grad(bid)) {
                    std::span<double> gb = tt.grad_buffer(bid);
                    for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                  }
                });
}

DiffArray mul(DiffArray a, DiffArray b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.values().begin(), a.values().end());
  std::span<const double> bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const int aid = a.id(), bid = b.id();
  return t.emit(a.shape(), std::move(out), "mul", needs(t, a) || needs(t, b),
                [aid, bid](Tape& tt, int self) {
                  std::span<const double> g = tt.grad_buffer(self);
                  std::span<const double> av = tt.value_of(aid);
                  std::span<const double> bv2 = tt.value_of(bid);
                  if (tt.node_needs_grad(aid)) {
                    std::span<double> ga = tt.grad_buffer(aid);
                    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
                  }
                  if (tt.node_needs_grad(bid)) {
                    std::span<double> gb = tt.grad_buffer(bid);
                    for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                  }
                });
}

DiffArray add_scalar(DiffArray a, double c) {
  Tape& t = *a.tape();
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v += c;
  const int aid = a.id();
  return t.emit(a.shape(), std::move(out), "add_scalar", needs(t, a),
                [aid](Tape& tt, int self) {
                  std::span<const double> g = tt.grad_buffer(self);
                  std::span<double> ga = tt.grad_buffer(aid);
                  for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                });
}

DiffArray mul_scalar(DiffArray a, double c) {
  Tape& t = *a.tape();
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v *= c;
  const int aid = a.id();
  return t.emit(a.shape(), std::move(out), "mul_scalar", needs(t, a),
                [aid, c](Tape& tt, int self) {
                  std::span<const double> g = tt.grad_buffer(self);
                  std::span<double> ga = tt.grad_buffer(aid);
                  for (size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
                });
}

DiffArray add_scalar_node(DiffArray a, DiffArray s, double coeff) {
  Tape& t = same_tape(a, s);
  if (s.size() != 1) throw shape_error("add_scalar_node: s must be scalar");
  const double sv = s.values()[0];
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v += coeff * sv;
  const int aid = a.id(), sid = s.id();
  return t.emit(a.shape(), std::move(out), "add_scalar_node", needs(t, a) || needs(t, s),
                [aid, sid, coeff](Tape& tt, int self) {
                  std::span<const double> g = tt.grad_buffer(self);
                  if (tt.node_needs_grad(aid)) {
                    std::span<double> ga = tt.grad_buffer(aid);
                    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                  }
                  if (tt.node_needs_grad(sid)) {
                    double acc = 0.0;
                    for (double gv : g) acc += gv;
                    tt.grad_buffer(sid)[0] += coeff * acc;
                  }
                });
}

DiffArray mul_scalar_node(DiffArray a, DiffArray s) {
  Tape& t = same_tape(a, s);
  if (s.size() != 1) throw shape_error("mul_scalar_node: s must be scalar");
  const double sv = s.values()[0];
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v *= sv;
  const int aid = a.id(), sid = s.id();
  return t.emit(a.shape(), std::move(out), "mul_scalar_node", needs(t, a) || needs(t, s),
                [aid, sid](Tape& tt, int self) {
                  std::span<const double> g = tt.grad_buffer(self);
                  std::span<const double> av = tt.value_of(aid);
                  const double sv2 = tt.value_of(sid)[0];
                  if (tt.node_needs_grad(aid)) {
                    std::span<double> ga = tt.grad_buffer(aid);
                    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sv2;
                  }
                  if (tt.node_needs_grad(sid)) {
                    double acc = 0.0;
                    for (size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
                    tt.grad_buffer(sid)[0] += acc;
                  }
                });
}

namespace {

template <typename Fwd, typename Bwd>
DiffArray unary_op(DiffArray a, const char* name, Fwd fwd, Bwd dydx_from_xy) {
  Tape& t = *a.tape();
  std::span<const double> av = a.values();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  const int aid = a.id();
  return t.emit(a.shape(), std::move(out), name, needs(t, a),
                [aid, dydx_from_xy](Tape& tt, int self) {
                  std::span<const double> g = tt.grad_buffer(self);
                  std::span<const double> x = tt.value_of(aid);
                  std::span<const double> y = tt.value_of(self);
                  std::span<double> ga = tt.grad_buffer(aid);
                  for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dydx_from_xy(x[i], y[i]);
                });
}

}  // namespace

DiffArray relu(DiffArray a) {
  return unary_op(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

DiffArray tanh(DiffArray a) {
  return unary_op(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

DiffArray sigmoid(DiffArray a) {
  return unary_op(
      a, "sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

DiffArray softplus(DiffArray a) {
  return unary_op(
      a, "softplus",
      [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

DiffArray exp(DiffArray a) {
  return unary_op(
      a, "exp", [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

DiffArray log(DiffArray a) {
  return unary_op(
      a, "log", [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

DiffArray smooth_l1(DiffArray a, DiffArray b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a, b, "smooth_l1");
  std::span<const double> av = a.values();
  std::span<const double> bv = b.values();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) {
    const double e = av[i] - bv[i];
    out[i] = std::fabs(e) < 1.0 ? 0.5 * e * e : std::fabs(e) - 0.5;
  }
  const int aid = a.id(), bid = b.id();
  return t.emit(a.shape(), std::move(out), "smooth_l1", needs(t, a) || needs(t, b),
                [aid, bid](Tape& tt, int self) {
                  std::span<const double> g = tt.grad_buffer(self);
                  std::span<const double> av2 = tt.value_of(aid);
                  std::span<const double> bv2 = tt.value_of(bid);
                  const bool na = tt.node_needs_grad(aid);
                  const bool nb = tt.node_needs_grad(bid);
                  std::span<double> ga = na ? tt.grad_buffer(aid) : std::span<double>{};
                  std::span<double> gb = nb ? tt.grad_buffer(bid) : std::span<double>{};
                  for (size_t i = 0; i < g.size(); ++i) {
                    const double e = av2[i] - bv2[i];
                    const double d = std::clamp(e, -1.0, 1.0);
                    if (na) ga[i] += g[i] * d;
                    if (nb) gb[i] -= g[i] * d;
                  }
                });
}

DiffArray mul_const(DiffArray a, std::vector<double> c) {
  Tape& t = *a.tape();
  if (c.size() != static_cast<size_t>(a.size())) {
    throw shape_error("mul_const: constant size mismatch");
  }
  std::span<const double> av = a.values();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c[i];
  const int aid = a.id();
  return t.emit(a.shape(), std::move(out), "mul_const", needs(t, a),
                [aid, c = std::move(c)](Tape& tt, int self) {
                  std::span<const double> g = tt.grad_buffer(self);
                  std::span<double> ga = tt.grad_buffer(aid);
                  for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c[i];
                });
}

// --- linear algebra ------------------------------------------------------------

DiffArray matmul(DiffArray a, DiffArray b) {
  Tape& t = same_tape(a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw shape_error("matmul: incompatible shapes " + shape_str(sa) + " vs " + shape_str(sb));
  }
  const int m = sa[0], k = sa[1], n = sb[1];
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  {
    const double* A = a.values().data();
    const double* B = b.values().data();
    for (int i = 0; i < m; ++i) {
      for (int kk = 0; kk < k; ++kk) {
        const double aik = A[i * k + kk];
        const double* Brow = B + kk * n;
        double* Orow = out.data() + i * n;
        for (int j = 0; j < n; ++j) Orow[j] += aik * Brow[j];
      }
    }
  }
  const int aid = a.id(), bid = b.id();
  return t.emit({m, n}, std::move(out), "matmul", needs(t, a) || needs(t, b),
                [aid, bid, m, k, n](Tape& tt, int self) {
                  const double* G = tt.grad_buffer(self).data();
                  const double* A = tt.value_of(aid).data();
                  const double* B = tt.value_of(bid).data();
                  if (tt.node_needs_grad(aid)) {
                    double* GA = tt.grad_buffer(aid).data();
                    for (int i = 0; i < m; ++i) {
                      for (int j = 0; j < n; ++j) {
                        const double gij = G[i * n + j];
                        const double* Brow = B + 0 * n + j;
                        for (int kk = 0; kk < k; ++kk) GA[i * k + kk] += gij * Brow[kk * n];
                      }
                    }
                  }
                  if (tt.node_needs_grad(bid)) {
                    double* GB = tt.grad_buffer(bid).data();
                    for (int i = 0; i < m; ++i) {
                      for (int kk = 0; kk < k; ++kk) {
                        const double aik = A[i * k + kk];
                        const double* Grow = G + i * n;
                        double* GBrow = GB + kk * n;
                        for (int j = 0; j < n; ++j) GBrow[j] += aik * Grow[j];
                      }
                    }
                  }
                });
}

namespace {

// C[g] += A[g] (m x k) * B[g] (k x n), optionally B transposed (n x k).
void bmm_forward(const double* A, const double* B, double* C, int m, int k, int n,
                 bool b_transposed) {
  if (!b_transposed) {
    for (int i = 0; i < m; ++i) {
      for (int kk = 0; kk < k; ++kk) {
        const double aik = A[i * k + kk];
        const double* Brow = B + kk * n;
        double* Crow = C + i * n;
        for (int j = 0; j < n; ++j) Crow[j] += aik * Brow[j];
      }
    }
  } else {
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        const double* Arow = A + i * k;
        const double* Brow = B + j * k;
        double acc = 0.0;
        for (int kk = 0; kk < k; ++kk) acc += Arow[kk] * Brow[kk];
        C[i * n + j] += acc;
      }
    }
  }
}

}  // namespace

DiffArray bmm(DiffArray a, DiffArray b) {
  Tape& t = same_tape(a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0] || sa[2] != sb[1]) {
    throw shape_error("bmm: incompatible shapes " + shape_str(sa) + " vs " + shape_str(sb));
  }
  const int g = sa[0], m = sa[1], k = sa[2], n = sb[2];
  std::vector<double> out(static_cast<size_t>(g) * m * n, 0.0);
  for (int bi = 0; bi < g; ++bi) {
    bmm_forward(a.values().data() + static_cast<size_t>(bi) * m * k,
                b.values().data() + static_cast<size_t>(bi) * k * n,
                out.data() + static_cast<size_t>(bi) * m * n, m, k, n, false);
  }
  const int aid = a.id(), bid = b.id();
  return t.emit({g, m, n}, std::move(out), "bmm", needs(t, a) || needs(t, b),
                [aid, bid, g, m, k, n](Tape& tt, int self) {
                  const double* G = tt.grad_buffer(self).data();
                  const double* A = tt.value_of(aid).data();
                  const double* B = tt.value_of(bid).data();
                  if (tt.node_needs_grad(aid)) {
                    double* GA = tt.grad_buffer(aid).data();
                    // dA = G * B^T
                    for (int bi = 0; bi < g; ++bi) {
                      bmm_forward(G + static_cast<size_t>(bi) * m * n,
                                  B + static_cast<size_t>(bi) * k * n,
                                  GA + static_cast<size_t>(bi) * m * k, m, n, k, true);
                    }
                  }
                  if (tt.node_needs_grad(bid)) {
                    double* GB = tt.grad_buffer(bid).data();
                    // dB = A^T * G
                    for (int bi = 0; bi < g; ++bi) {
                      const double* Ab = A + static_cast<size_t>(bi) * m * k;
                      const double* Gb = G + static_cast<size_t>(bi) * m * n;
                      double* GBb = GB + static_cast<size_t>(bi) * k * n;
                      for (int i = 0; i < m; ++i) {
                        for (int kk = 0; kk < k; ++kk) {
                          const double aik = Ab[i * k + kk];
                          const double* Grow = Gb + i * n;
                          double* GBrow = GBb + kk * n;
                          for (int j = 0; j < n; ++j) GBrow[j] += aik * Grow[j];
                        }
                      }
                    }
                  }
                });
}

DiffArray bmm_bt(DiffArray a, DiffArray b) {
  Tape& t = same_tape(a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0] || sa[2] != sb[2]) {
    throw shape_error("bmm_bt: incompatible shapes " + shape_str(sa) + " vs " + shape_str(sb));
  }
  const int g = sa[0], m = sa[1], k = sa[2], n = sb[1];
  std::vector<double> out(static_cast<size_t>(g) * m * n, 0.0);
  for (int bi = 0; bi < g; ++bi) {
    bmm_forward(a.values().data() + static_cast<size_t>(bi) * m * k,
                b.values().data() + static_cast<size_t>(bi) * n * k,
                out.data() + static_cast<size_t>(bi) * m * n, m, k, n, true);
  }
  const int aid = a.id(), bid = b.id();
  return t.emit({g, m, n}, std::move(out), "bmm_bt", needs(t, a) || needs(t, b),
                [aid, bid, g, m, k, n](Tape& tt, int self) {
                  const double* G = tt.grad_buffer(self).data();
                  const double* A = tt.value_of(aid).data();
                  const double* B = tt.value_of(bid).data();
                  if (tt.node_needs_grad(aid)) {
                    double* GA = tt.grad_buffer(aid).data();
                    // dA = G * B  ([m x n] @ [n x k])
                    for (int bi = 0; bi < g; ++bi) {
                      bmm_forward(G + static_cast<size_t>(bi) * m * n,
                                  B + static_cast<size_t>(bi) * n * k,
                                  GA + static_cast<size_t>(bi) * m * k, m, n, k, false);
                    }
                  }
                  if (tt.node_needs_grad(bid)) {
                    double* GB = tt.grad_buffer(bid).data();
                    // dB = G^T * A ([n x m] @ [m x k])
                    for (int bi = 0; bi < g; ++bi) {
                      const double* Ab = A + static_cast<size_t>(bi) * m * k;
                      const double* Gb = G + static_cast<size_t>(bi) * m * n;
                      double* GBb = GB + static_cast<size_t>(bi) * n * k;
                      for (int i = 0; i < m; ++i) {
                        for (int j = 0; j < n; ++j) {
                          const double gij = Gb[i * n + j];
                          const double* Arow = Ab + i * k;
                          double* GBrow = GBb + j * k;
                          for (int kk = 0; kk < k; ++kk) GBrow[kk] += gij * Arow[kk];
                        }
                      }
                    }
                  }
                });
}

namespace {

DiffArray linear_impl(DiffArray x, DiffArray w, DiffArray* b) {
  Tape& t = *x.tape();
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.empty() || sw.size() != 2 || sx.back() != sw[0]) {
    throw shape_error("linear: inner dimension mismatch x" + shape_str(sx) + " vs w" +
                      shape_str(sw));
  }
  const int n_in = sw[0], n_out = sw[1];
  const int rows = shape_size(sx) / n_in;
  if (b != nullptr) {
    const Shape& sb = b->shape();
    if (shape_size(sb) != n_out) {
      throw shape_error("linear: bias shape " + shape_str(sb) + " does not match n_out " +
                        std::to_string(n_out));
    }
  }
  std::vector<double> out(static_cast<size_t>(rows) * n_out, 0.0);
  {
    const double* X = x.values().data();
    const double* W = w.values().data();
    for (int r = 0; r < rows; ++r) {
      const double* Xrow = X + static_cast<size_t>(r) * n_in;
      double* Orow = out.data() + static_cast<size_t>(r) * n_out;
      for (int i = 0; i < n_in; ++i) {
        const double xv = Xrow[i];
        const double* Wrow = W + static_cast<size_t>(i) * n_out;
        for (int j = 0; j < n_out; ++j) Orow[j] += xv * Wrow[j];
      }
      if (b != nullptr) {
        const double* B = b->values().data();
        for (int j = 0; j < n_out; ++j) Orow[j] += B[j];
      }
    }
  }
  Shape out_shape(sx.begin(), sx.end() - 1);
  out_shape.push_back(n_out);
  const int xid = x.id(), wid = w.id();
  const int bid = b != nullptr ? b->id() : -1;
  const bool ng = needs(t, x) || needs(t, w) || (b != nullptr && needs(t, *b));
  return t.emit(std::move(out_shape), std::move(out), "linear", ng,
                [xid, wid, bid, rows, n_in, n_out](Tape& tt, int self) {
                  const double* G = tt.grad_buffer(self).data();
                  const double* X = tt.value_of(xid).data();
                  const double* W = tt.value_of(wid).data();
                  if (tt.node_needs_grad(xid)) {
                    double* GX = tt.grad_buffer(xid).data();
                    for (int r = 0; r < rows; ++r) {
                      const double* Grow = G + static_cast<size_t>(r) * n_out;
                      double* GXrow = GX + static_cast<size_t>(r) * n_in;
                      for (int i = 0; i < n_in; ++i) {
                        const double* Wrow = W + static_cast<size_t>(i) * n_out;
                        double acc = 0.0;
                        for (int j = 0; j < n_out; ++j) acc += Grow[j] * Wrow[j];
                        GXrow[i] += acc;
                      }
                    }
                  }
                  if (tt.node_needs_grad(wid)) {
                    double* GW = tt.grad_buffer(wid).data();
                    for (int r = 0; r < rows; ++r) {
                      const double* Xrow = X + static_cast<size_t>(r) * n_in;
                      const double* Grow = G + static_cast<size_t>(r) * n_out;
                      for (int i = 0; i < n_in; ++i) {
                        const double xv = Xrow[i];
                        double* GWrow = GW + static_cast<size_t>(i) * n_out;
                        for (int j = 0; j < n_out; ++j) GWrow[j] += xv * Grow[j];
                      }
                    }
                  }
                  if (bid >= 0 && tt.node_needs_grad(bid)) {
                    double* GB = tt.grad_buffer(bid).data();
                    for (int r = 0; r < rows; ++r) {
                      const double* Grow = G + static_cast<size_t>(r) * n_out;
                      for (int j = 0; j < n_out; ++j) GB[j] += Grow[j];
                    }
                  }
                });
}

}  // namespace

DiffArray linear(DiffArray x, DiffArray w, DiffArray b) { return linear_impl(x, w, &b); }
DiffArray linear_nobias(DiffArray x, DiffArray w) { return linear_impl(x, w, nullptr); }

DiffArray dot(DiffArray a, DiffArray b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a, b, "dot");
  std::span<const double> av = a.values();
  std::span<const double> bv = b.values();
  double acc = 0.0;
  for (size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
  const int aid = a.id(), bid = b.id();
  return t.emit({1}, {acc}, "dot", needs(t, a) || needs(t, b),
                [aid, bid](Tape& tt, int self) {
                  const double g = tt.grad_buffer(self)[0];
                  std::span<const double> av2 = tt.value_of(aid);
                  std::span<const double> bv2 = tt.value_of(bid);
                  if (tt.node_needs_grad(aid)) {
                    std::span<double> ga = tt.grad_buffer(aid);
                    for (size_t i = 0; i < ga.size(); ++i) ga[i] += g * bv2[i];
                  }
                  if (tt.node_needs_grad(bid)) {
                    std::span<double> gb = tt.grad_buffer(bid);
                    for (size_t i = 0; i < gb.size(); ++i) gb[i] += g * av2[i];
                  }
                });
}

// --- neural primitives -----------------------------------------------------------

DiffArray conv1d(DiffArray x, DiffArray kernel) {
  Tape& t = same_tape(x, kernel);
  const Shape& sx = x.shape();
  const Shape& sk = kernel.shape();
  if (sx.size() != 3 || sk.size() != 3) {
    throw shape_error("conv1d: expected x [g x L x c_in], kernel [k x c_in x c_out], got " +
                      shape_str(sx) + " and " + shape_str(sk));
  }
  if (sk[0] % 2 == 0) {
    throw config_error("conv1d: even kernel size " + std::to_string(sk[0]) +
                       " is incompatible with symmetric padding");
  }
  if (sx[2] != sk[1]) {
    throw shape_error("conv1d: channel mismatch x" + shape_str(sx) + " vs kernel" +
                      shape_str(sk));
  }
  const int g = sx[0], L = sx[1], cin = sx[2], kw = sk[0], cout = sk[2];
  const int pad = (kw - 1) / 2;
  std::vector<double> out(static_cast<size_t>(g) * L * cout, 0.0);
  {
    const double* X = x.values().data();
    const double* K = kernel.values().data();
    for (int bi = 0; bi < g; ++bi) {
      const double* Xb = X + static_cast<size_t>(bi) * L * cin;
      double* Ob = out.data() + static_cast<size_t>(bi) * L * cout;
      for (int tpos = 0; tpos < L; ++tpos) {
        double* Orow = Ob + static_cast<size_t>(tpos) * cout;
        for (int dk = 0; dk < kw; ++dk) {
          const int src = tpos + dk - pad;
          if (src < 0 || src >= L) continue;
          const double* Xrow = Xb + static_cast<size_t>(src) * cin;
          const double* Kslice = K + static_cast<size_t>(dk) * cin * cout;
          for (int ci = 0; ci < cin; ++ci) {
            const double xv = Xrow[ci];
            const double* Krow = Kslice + static_cast<size_t>(ci) * cout;
            for (int co = 0; co < cout; ++co) Orow[co] += xv * Krow[co];
          }
        }
      }
    }
  }
  const int xid = x.id(), kid = kernel.id();
  return t.emit({g, L, cout}, std::move(out), "conv1d", needs(t, x) || needs(t, kernel),
                [xid, kid, g, L, cin, kw, cout, pad](Tape& tt, int self) {
                  const double* G = tt.grad_buffer(self).data();
                  const double* X = tt.value_of(xid).data();
                  const double* K = tt.value_of(kid).data();
                  const bool nx = tt.node_needs_grad(xid);
                  const bool nk = tt.node_needs_grad(kid);
                  double* GX = nx ? tt.grad_buffer(xid).data() : nullptr;
                  double* GK = nk ? tt.grad_buffer(kid).data() : nullptr;
                  for (int bi = 0; bi < g; ++bi) {
                    const double* Xb = X + static_cast<size_t>(bi) * L * cin;
                    const double* Gb = G + static_cast<size_t>(bi) * L * cout;
                    double* GXb = nx ? GX + static_cast<size_t>(bi) * L * cin : nullptr;
                    for (int tpos = 0; tpos < L; ++tpos) {
                      const double* Grow = Gb + static_cast<size_t>(tpos) * cout;
                      for (int dk = 0; dk < kw; ++dk) {
                        const int src = tpos + dk - pad;
                        if (src < 0 || src >= L) continue;
                        const double* Xrow = Xb + static_cast<size_t>(src) * cin;
                        const double* Kslice = K + static_cast<size_t>(dk) * cin * cout;
                        double* GKslice = nk ? GK + static_cast<size_t>(dk) * cin * cout : nullptr;
                        for (int ci = 0; ci < cin; ++ci) {
                          const double* Krow = Kslice + static_cast<size_t>(ci) * cout;
                          double acc = 0.0;
                          for (int co = 0; co < cout; ++co) acc += Grow[co] * Krow[co];
                          if (nx) GXb[static_cast<size_t>(src) * cin + ci] += acc;
                          if (nk) {
                            const double xv = Xrow[ci];
                            double* GKrow = GKslice + static_cast<size_t>(ci) * cout;
                            for (int co = 0; co < cout; ++co) GKrow[co] += xv * Grow[co];
                          }
                        }
                      }
                    }
                  }
                });
}

DiffArray lstm_cell_packed(DiffArray x, DiffArray h, DiffArray c, const LstmWeights& w) {
  Tape& t = *x.tape();
  const Shape& sx = x.shape();
  const Shape& sh = h.shape();
  const Shape& sc = c.shape();
  const Shape& swih = w.w_ih.shape();
  const Shape& swhh = w.w_hh.shape();
  if (sx.size() != 2 || sh.size() != 2 || sc.size() != 2) {
    throw shape_error("lstm_cell: inputs must be rank-2 [batch x dim]");
  }
  const int g = sx[0];
  const int hs = sh[1];
  const int in = sx[1];
  if (sh[0] != g || sc[0] != g || sc[1] != hs || swih.size() != 2 || swih[0] != 4 * hs ||
      swih[1] != in || swhh.size() != 2 || swhh[0] != 4 * hs || swhh[1] != hs ||
      shape_size(w.bias.shape()) != 4 * hs) {
    throw shape_error("lstm_cell: inconsistent shapes x" + shape_str(sx) + " h" + shape_str(sh) +
                      " c" + shape_str(sc) + " w_ih" + shape_str(swih) + " w_hh" +
                      shape_str(swhh));
  }

  // Pre-activations z = W_ih x + W_hh h + b, gate order (i, f, g, o).
  std::vector<double> acts(static_cast<size_t>(g) * 4 * hs);  // post-activation gates
  std::vector<double> tanhc(static_cast<size_t>(g) * hs);
  std::vector<double> out(static_cast<size_t>(g) * 2 * hs);
  {
    const double* X = x.values().data();
    const double* H = h.values().data();
    const double* C = c.values().data();
    const double* Wih = w.w_ih.values().data();
    const double* Whh = w.w_hh.values().data();
    const double* B = w.bias.values().data();
    std::vector<double> z(static_cast<size_t>(4) * hs);
    for (int bi = 0; bi < g; ++bi) {
      const double* Xrow = X + static_cast<size_t>(bi) * in;
      const double* Hrow = H + static_cast<size_t>(bi) * hs;
      const double* Crow = C + static_cast<size_t>(bi) * hs;
      for (int r = 0; r < 4 * hs; ++r) {
        const double* WihRow = Wih + static_cast<size_t>(r) * in;
        const double* WhhRow = Whh + static_cast<size_t>(r) * hs;
        double acc = B[r];
        for (int i = 0; i < in; ++i) acc += WihRow[i] * Xrow[i];
        for (int i = 0; i < hs; ++i) acc += WhhRow[i] * Hrow[i];
        z[static_cast<size_t>(r)] = acc;
      }
      double* gate = acts.data() + static_cast<size_t>(bi) * 4 * hs;
      for (int i = 0; i < hs; ++i) {
        gate[i] = 1.0 / (1.0 + std::exp(-z[static_cast<size_t>(i)]));                   // input
        gate[hs + i] = 1.0 / (1.0 + std::exp(-z[static_cast<size_t>(hs + i)]));         // forget
        gate[2 * hs + i] = std::tanh(z[static_cast<size_t>(2 * hs + i)]);               // cand
        gate[3 * hs + i] = 1.0 / (1.0 + std::exp(-z[static_cast<size_t>(3 * hs + i)])); // output
      }
      double* orow = out.data() + static_cast<size_t>(bi) * 2 * hs;
      double* tc = tanhc.data() + static_cast<size_t>(bi) * hs;
      for (int i = 0; i < hs; ++i) {
        const double cn = gate[hs + i] * Crow[i] + gate[i] * gate[2 * hs + i];
        tc[i] = std::tanh(cn);
        orow[i] = gate[3 * hs + i] * tc[i];  // h'
        orow[hs + i] = cn;                   // c'
      }
    }
  }
  const int xid = x.id(), hid = h.id(), cid = c.id();
  const int wih_id = w.w_ih.id(), whh_id = w.w_hh.id(), b_id = w.bias.id();
  const bool ng = needs(t, x) || needs(t, h) || needs(t, c) || needs(t, w.w_ih) ||
                  needs(t, w.w_hh) || needs(t, w.bias);
  return t.emit(
      {g, 2 * hs}, std::move(out), "lstm_cell", ng,
      [xid, hid, cid, wih_id, whh_id, b_id, g, hs, in, acts = std::move(acts),
       tanhc = std::move(tanhc)](Tape& tt, int self) {
        const double* G = tt.grad_buffer(self).data();
        const double* X = tt.value_of(xid).data();
        const double* H = tt.value_of(hid).data();
        const double* C = tt.value_of(cid).data();
        const double* Wih = tt.value_of(wih_id).data();
        const double* Whh = tt.value_of(whh_id).data();
        const bool nx = tt.node_needs_grad(xid);
        const bool nh = tt.node_needs_grad(hid);
        const bool nc = tt.node_needs_grad(cid);
        const bool nwih = tt.node_needs_grad(wih_id);
        const bool nwhh = tt.node_needs_grad(whh_id);
        const bool nb = tt.node_needs_grad(b_id);
        double* GX = nx ? tt.grad_buffer(xid).data() : nullptr;
        double* GH = nh ? tt.grad_buffer(hid).data() : nullptr;
        double* GC = nc ? tt.grad_buffer(cid).data() : nullptr;
        double* GWih = nwih ? tt.grad_buffer(wih_id).data() : nullptr;
        double* GWhh = nwhh ? tt.grad_buffer(whh_id).data() : nullptr;
        double* GB = nb ? tt.grad_buffer(b_id).data() : nullptr;
        std::vector<double> gz(static_cast<size_t>(4) * hs);
        for (int bi = 0; bi < g; ++bi) {
          const double* gate = acts.data() + static_cast<size_t>(bi) * 4 * hs;
          const double* tc = tanhc.data() + static_cast<size_t>(bi) * hs;
          const double* Grow = G + static_cast<size_t>(bi) * 2 * hs;
          const double* Crow = C + static_cast<size_t>(bi) * hs;
          for (int i = 0; i < hs; ++i) {
            const double gh = Grow[i];
            const double gc_out = Grow[hs + i];
            const double go = gh * tc[i];
            const double gc_total = gc_out + gh * gate[3 * hs + i] * (1.0 - tc[i] * tc[i]);
            const double gi = gc_total * gate[2 * hs + i];
            const double gf = gc_total * Crow[i];
            const double gg = gc_total * gate[i];
            gz[static_cast<size_t>(i)] = gi * gate[i] * (1.0 - gate[i]);
            gz[static_cast<size_t>(hs + i)] = gf * gate[hs + i] * (1.0 - gate[hs + i]);
            gz[static_cast<size_t>(2 * hs + i)] =
                gg * (1.0 - gate[2 * hs + i] * gate[2 * hs + i]);
            gz[static_cast<size_t>(3 * hs + i)] = go * gate[3 * hs + i] * (1.0 - gate[3 * hs + i]);
            if (nc) GC[static_cast<size_t>(bi) * hs + i] += gc_total * gate[hs + i];
          }
          const double* Xrow = X + static_cast<size_t>(bi) * in;
          const double* Hrow = H + static_cast<size_t>(bi) * hs;
          for (int r = 0; r < 4 * hs; ++r) {
            const double gzr = gz[static_cast<size_t>(r)];
            if (gzr == 0.0) continue;
            const double* WihRow = Wih + static_cast<size_t>(r) * in;
            const double* WhhRow = Whh + static_cast<size_t>(r) * hs;
            if (nx) {
              double* GXrow = GX + static_cast<size_t>(bi) * in;
              for (int i = 0; i < in; ++i) GXrow[i] += gzr * WihRow[i];
            }
            if (nh) {
              double* GHrow = GH + static_cast<size_t>(bi) * hs;
              for (int i = 0; i < hs; ++i) GHrow[i] += gzr * WhhRow[i];
            }
            if (nwih) {
              double* GWihRow = GWih + static_cast<size_t>(r) * in;
              for (int i = 0; i < in; ++i) GWihRow[i] += gzr * Xrow[i];
            }
            if (nwhh) {
              double* GWhhRow = GWhh + static_cast<size_t>(r) * hs;
              for (int i = 0; i < hs; ++i) GWhhRow[i] += gzr * Hrow[i];
            }
            if (nb) GB[r] += gzr;
          }
        }
      });
}

std::pair<DiffArray, DiffArray> lstm_cell(DiffArray x, DiffArray h, DiffArray c,
                                          const LstmWeights& w) {
  DiffArray packed = lstm_cell_packed(x, h, c, w);
  const int hs = h.shape()[1];
  return {slice_last(packed, 0, hs), slice_last(packed, hs, hs)};
}

namespace {

// Stacks rank-2 arrays [g x c] into [g x L x c].
DiffArray stack_axis1(Tape& t, const std::vector<DiffArray>& parts) {
  const int L = static_cast<int>(parts.size());
  const Shape& s0 = parts.front().shape();
  const int g = s0[0], c = s0[1];
  std::vector<double> out(static_cast<size_t>(g) * L * c);
  std::vector<int> ids(parts.size());
  bool ng = false;
  for (int p = 0; p < L; ++p) {
    if (parts[static_cast<size_t>(p)].shape() != s0) {
      throw shape_error("stack_axis1: inconsistent part shapes");
    }
    ids[static_cast<size_t>(p)] = parts[static_cast<size_t>(p)].id();
    ng = ng || t.node_needs_grad(ids[static_cast<size_t>(p)]);
    std::span<const double> pv = parts[static_cast<size_t>(p)].values();
    for (int bi = 0; bi < g; ++bi) {
      std::memcpy(out.data() + (static_cast<size_t>(bi) * L + p) * c,
                  pv.data() + static_cast<size_t>(bi) * c, sizeof(double) * static_cast<size_t>(c));
    }
  }
  return t.emit({g, L, c}, std::move(out), "stack_axis1", ng,
                [ids = std::move(ids), g, L, c](Tape& tt, int self) {
                  std::span<const double> gr = tt.grad_buffer(self);
                  for (int p = 0; p < L; ++p) {
                    const int pid = ids[static_cast<size_t>(p)];
                    if (!tt.node_needs_grad(pid)) continue;
                    std::span<double> gp = tt.grad_buffer(pid);
                    for (int bi = 0; bi < g; ++bi) {
                      const double* src = gr.data() + (static_cast<size_t>(bi) * L + p) * c;
                      double* dst = gp.data() + static_cast<size_t>(bi) * c;
                      for (int i = 0; i < c; ++i) dst[i] += src[i];
                    }
                  }
                });
}

}  // namespace

DiffArray lstm_sequence(DiffArray xs, const LstmWeights& w) {
  Tape& t = *xs.tape();
  const Shape& s = xs.shape();
  if (s.size() != 3) throw shape_error("lstm_sequence: expected [g x L x in], got " + shape_str(s));
  const int g = s[0], L = s[1];
  const int hs = w.w_hh.shape()[1];
  DiffArray h = t.zeros({g, hs}, "lstm_h0");
  DiffArray c = t.zeros({g, hs}, "lstm_c0");
  std::vector<DiffArray> hstates;
  hstates.reserve(static_cast<size_t>(L));
  for (int step = 0; step < L; ++step) {
    DiffArray x_t = reshape(slice_axis1(xs, step, 1), {g, s[2]});
    auto [hn, cn] = lstm_cell(x_t, h, c, w);
    h = hn;
    c = cn;
    hstates.push_back(hn);
  }
  return stack_axis1(t, hstates);
}

// --- softmax -----------------------------------------------------------------

DiffArray softmax(DiffArray x, int axis, std::span<const std::uint8_t> mask) {
  Tape& t = *x.tape();
  const Shape& s = x.shape();
  const int rank = static_cast<int>(s.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw shape_error("softmax: invalid axis");
  const int n = s[static_cast<size_t>(axis)];
  int outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  for (int i = axis + 1; i < rank; ++i) inner *= s[static_cast<size_t>(i)];

  const bool has_mask = !mask.empty();
  const bool full_mask = has_mask && mask.size() == static_cast<size_t>(x.size());
  if (has_mask && !full_mask && mask.size() != static_cast<size_t>(n)) {
    throw shape_error("softmax: mask must cover the full array or the softmax axis");
  }

  std::span<const double> xv = x.values();
  std::vector<double> out(xv.size(), 0.0);
  for (int o = 0; o < outer; ++o) {
    for (int in = 0; in < inner; ++in) {
      double mx = -std::numeric_limits<double>::infinity();
      int valid = 0;
      for (int i = 0; i < n; ++i) {
        const size_t idx = (static_cast<size_t>(o) * n + i) * inner + in;
        const bool keep = !has_mask || (full_mask ? mask[idx] != 0 : mask[static_cast<size_t>(i)] != 0);
        if (!keep) continue;
        ++valid;
        mx = std::max(mx, xv[idx]);
      }
      if (valid == 0) {
        throw degenerate_error("softmax: all positions masked along axis");
      }
      double sum = 0.0;
      for (int i = 0; i < n; ++i) {
        const size_t idx = (static_cast<size_t>(o) * n + i) * inner + in;
        const bool keep = !has_mask || (full_mask ? mask[idx] != 0 : mask[static_cast<size_t>(i)] != 0);
        if (!keep) continue;
        const double e = std::exp(xv[idx] - mx);
        out[idx] = e;
        sum += e;
      }
      for (int i = 0; i < n; ++i) {
        const size_t idx = (static_cast<size_t>(o) * n + i) * inner + in;
        out[idx] /= sum;
        // Masked entries stayed 0 and remain exactly 0.
      }
    }
  }
  const int xid = x.id();
  return t.emit(s, std::move(out), "softmax", needs(t, x),
                [xid, outer, n, inner](Tape& tt, int self) {
                  std::span<const double> g = tt.grad_buffer(self);
                  std::span<const double> y = tt.value_of(self);
                  std::span<double> gx = tt.grad_buffer(xid);
                  for (int o = 0; o < outer; ++o) {
                    for (int in = 0; in < inner; ++in) {
                      double dotgy = 0.0;
                      for (int i = 0; i < n; ++i) {
                        const size_t idx = (static_cast<size_t>(o) * n + i) * inner + in;
                        dotgy += g[idx] * y[idx];
                      }
                      for (int i = 0; i < n; ++i) {
                        const size_t idx = (static_cast<size_t>(o) * n + i) * inner + in;
                        gx[idx] += y[idx] * (g[idx] - dotgy);
                      }
                    }
                  }
                });
}

DiffArray layer_norm(DiffArray x, DiffArray gain, DiffArray shift) {
  Tape& t = *x.tape();
  const Shape& s = x.shape();
  if (s.empty()) throw shape_error("layer_norm: rank-0 input");
  const int c = s.back();
  if (shape_size(gain.shape()) != c || shape_size(shift.shape()) != c) {
    throw shape_error("layer_norm: gain/shift must have last-axis length " + std::to_string(c));
  }
  const int rows = shape_size(s) / c;
  constexpr double kEps = 1e-5;
  std::span<const double> xv = x.values();
  std::span<const double> gv = gain.values();
  std::span<const double> bv = shift.values();
  std::vector<double> out(xv.size());
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(static_cast<size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    const double* row = xv.data() + static_cast<size_t>(r) * c;
    double mean = 0.0;
    for (int i = 0; i < c; ++i) mean += row[i];
    mean /= c;
    double var = 0.0;
    for (int i = 0; i < c; ++i) var += (row[i] - mean) * (row[i] - mean);
    var /= c;
    const double is = 1.0 / std::sqrt(var + kEps);
    inv_std[static_cast<size_t>(r)] = is;
    for (int i = 0; i < c; ++i) {
      const double xh = (row[i] - mean) * is;
      xhat[static_cast<size_t>(r) * c + i] = xh;
      out[static_cast<size_t>(r) * c + i] = gv[static_cast<size_t>(i)] * xh + bv[static_cast<size_t>(i)];
    }
  }
  const int xid = x.id(), gid = gain.id(), bid = shift.id();
  const bool ng = needs(t, x) || needs(t, gain) || needs(t, shift);
  return t.emit(s, std::move(out), "layer_norm", ng,
                [xid, gid, bid, rows, c, xhat = std::move(xhat),
                 inv_std = std::move(inv_std)](Tape& tt, int self) {
                  std::span<const double> g = tt.grad_buffer(self);
                  std::span<const double> gv2 = tt.value_of(gid);
                  const bool nx = tt.node_needs_grad(xid);
                  const bool ngain = tt.node_needs_grad(gid);
                  const bool nshift = tt.node_needs_grad(bid);
                  std::span<double> gx = nx ? tt.grad_buffer(xid) : std::span<double>{};
                  std::span<double> gg = ngain ? tt.grad_buffer(gid) : std::span<double>{};
                  std::span<double> gb = nshift ? tt.grad_buffer(bid) : std::span<double>{};
                  for (int r = 0; r < rows; ++r) {
                    const double* grow = g.data() + static_cast<size_t>(r) * c;
                    const double* xh = xhat.data() + static_cast<size_t>(r) * c;
                    if (ngain || nshift) {
                      for (int i = 0; i < c; ++i) {
                        if (ngain) gg[static_cast<size_t>(i)] += grow[i] * xh[i];
                        if (nshift) gb[static_cast<size_t>(i)] += grow[i];
                      }
                    }
                    if (nx) {
                      double mean_d = 0.0, mean_dx = 0.0;
                      for (int i = 0; i < c; ++i) {
                        const double dxh = grow[i] * gv2[static_cast<size_t>(i)];
                        mean_d += dxh;
                        mean_dx += dxh * xh[i];
                      }
                      mean_d /= c;
                      mean_dx /= c;
                      const double is = inv_std[static_cast<size_t>(r)];
                      double* gxr = gx.data() + static_cast<size_t>(r) * c;
                      for (int i = 0; i < c; ++i) {
                        const double dxh = grow[i] * gv2[static_cast<size_t>(i)];
                        gxr[i] += is * (dxh - mean_d - xh[i] * mean_dx);
                      }
                    }
                  }
                });
}

DiffArray renorm_heading(DiffArray a) {
  Tape& t = *a.tape();
  const Shape& s = a.shape();
  if (s.empty() || s.back() != 5) {
    throw shape_error("renorm_heading: expected last axis 5, got " + shape_str(s));
  }
  constexpr double kTol = 1e-8;
  const int rows = shape_size(s) / 5;
  std::span<const double> av = a.values();
  std::vector<double> out(av.begin(), av.end());
  for (int r = 0; r < rows; ++r) {
    double& cv = out[static_cast<size_t>(r) * 5 + 2];
    double& sv = out[static_cast<size_t>(r) * 5 + 3];
    const double norm = std::sqrt(cv * cv + sv * sv);
    if (norm < kTol) {
      cv = 1.0;
      sv = 0.0;
    } else {
      cv /= norm;
      sv /= norm;
    }
  }
  const int aid = a.id();
  return t.emit(s, std::move(out), "renorm_heading", needs(t, a),
                [aid, rows](Tape& tt, int self) {
                  std::span<const double> g = tt.grad_buffer(self);
                  std::span<const double> av2 = tt.value_of(aid);
                  std::span<double> ga = tt.grad_buffer(aid);
                  for (int r = 0; r < rows; ++r) {
                    const size_t base = static_cast<size_t>(r) * 5;
                    for (int j : {0, 1, 4}) ga[base + j] += g[base + j];
                    const double c = av2[base + 2], sn = av2[base + 3];
                    const double n2 = c * c + sn * sn;
                    const double norm = std::sqrt(n2);
                    if (norm < kTol) continue;  // flat region, zero gradient
                    const double n3 = n2 * norm;
                    const double gc = g[base + 2], gs = g[base + 3];
                    ga[base + 2] += gc * (sn * sn) / n3 - gs * (c * sn) / n3;
                    ga[base + 3] += -gc * (c * sn) / n3 + gs * (c * c) / n3;
                  }
                });
}

// --- reductions ----------------------------------------------------------------

DiffArray sum_all(DiffArray a) {
  Tape& t = *a.tape();
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  const int aid = a.id();
  return t.emit({1}, {acc}, "sum_all", needs(t, a), [aid](Tape& tt, int self) {
    const double g = tt.grad_buffer(self)[0];
    std::span<double> ga = tt.grad_buffer(aid);
    for (double& v : ga) v += g;
  });
}

DiffArray mean_all(DiffArray a) {
  return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

DiffArray masked_mean_all(DiffArray a, std::span<const std::uint8_t> mask) {
  Tape& t = *a.tape();
  if (mask.size() != static_cast<size_t>(a.size())) {
    throw shape_error("masked_mean_all: mask size mismatch");
  }
  double acc = 0.0;
  std::int64_t count = 0;
  std::span<const double> av = a.values();
  for (size_t i = 0; i < av.size(); ++i) {
    if (mask[i]) {
      acc += av[i];
      ++count;
    }
  }
  if (count == 0) throw degenerate_error("masked_mean_all: no valid entries");
  const double inv = 1.0 / static_cast<double>(count);
  const int aid = a.id();
  std::vector<std::uint8_t> mask_copy(mask.begin(), mask.end());
  return t.emit({1}, {acc * inv}, "masked_mean_all", needs(t, a),
                [aid, inv, mask_copy = std::move(mask_copy)](Tape& tt, int self) {
                  const double g = tt.grad_buffer(self)[0] * inv;
                  std::span<double> ga = tt.grad_buffer(aid);
                  for (size_t i = 0; i < ga.size(); ++i) {
                    if (mask_copy[i]) ga[i] += g;
                  }
                });
}

DiffArray sum_axis1(DiffArray a) {
  Tape& t = *a.tape();
  const Shape& s = a.shape();
  if (s.size() != 2) throw shape_error("sum_axis1: expected rank 2, got " + shape_str(s));
  const int rows = s[0], cols = s[1];
  std::span<const double> av = a.values();
  std::vector<double> out(static_cast<size_t>(rows), 0.0);
  for (int r = 0; r < rows; ++r) {
    for (int i = 0; i < cols; ++i) out[static_cast<size_t>(r)] += av[static_cast<size_t>(r) * cols + i];
  }
  const int aid = a.id();
  return t.emit({rows}, std::move(out), "sum_axis1", needs(t, a),
                [aid, rows, cols](Tape& tt, int self) {
                  std::span<const double> g = tt.grad_buffer(self);
                  std::span<double> ga = tt.grad_buffer(aid);
                  for (int r = 0; r < rows; ++r) {
                    for (int i = 0; i < cols; ++i) ga[static_cast<size_t>(r) * cols + i] += g[static_cast<size_t>(r)];
                  }
                });
}

DiffArray mean_axis0(DiffArray a) {
  Tape& t = *a.tape();
  const Shape& s = a.shape();
  if (s.size() < 2) throw shape_error("mean_axis0: expected rank >= 2");
  const int n = s[0];
  const int rest = shape_size(s) / n;
  std::span<const double> av = a.values();
  std::vector<double> out(static_cast<size_t>(rest), 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < rest; ++j) out[static_cast<size_t>(j)] += av[static_cast<size_t>(i) * rest + j];
  }
  const double inv = 1.0 / n;
  for (double& v : out) v *= inv;
  Shape os(s.begin() + 1, s.end());
  const int aid = a.id();
  return t.emit(std::move(os), std::move(out), "mean_axis0", needs(t, a),
                [aid, n, rest, inv](Tape& tt, int self) {
                  std::span<const double> g = tt.grad_buffer(self);
                  std::span<double> ga = tt.grad_buffer(aid);
                  for (int i = 0; i < n; ++i) {
                    for (int j = 0; j < rest; ++j) ga[static_cast<size_t>(i) * rest + j] += g[static_cast<size_t>(j)] * inv;
                  }
                });
}

DiffArray mean_axis1(DiffArray a) {
  Tape& t = *a.tape();
  const Shape& s = a.shape();
  if (s.size() < 3) throw shape_error("mean_axis1: expected rank >= 3");
  const int A = s[0], B = s[1];
  const int rest = shape_size(s) / (A * B);
  std::span<const double> av = a.values();
  std::vector<double> out(static_cast<size_t>(A) * rest, 0.0);
  for (int i = 0; i < A; ++i) {
    for (int b = 0; b < B; ++b) {
      const double* src = av.data() + (static_cast<size_t>(i) * B + b) * rest;
      double* dst = out.data() + static_cast<size_t>(i) * rest;
      for (int j = 0; j < rest; ++j) dst[j] += src[j];
    }
  }
  const double inv = 1.0 / B;
  for (double& v : out) v *= inv;
  Shape os;
  os.push_back(A);
  for (size_t i = 2; i < s.size(); ++i) os.push_back(s[i]);
  const int aid = a.id();
  return t.emit(std::move(os), std::move(out), "mean_axis1", needs(t, a),
                [aid, A, B, rest, inv](Tape& tt, int self) {
                  std::span<const double> g = tt.grad_buffer(self);
                  std::span<double> ga = tt.grad_buffer(aid);
                  for (int i = 0; i < A; ++i) {
                    const double* grow = g.data() + static_cast<size_t>(i) * rest;
                    for (int b = 0; b < B; ++b) {
                      double* dst = ga.data() + (static_cast<size_t>(i) * B + b) * rest;
                      for (int j = 0; j < rest; ++j) dst[j] += grow[j] * inv;
                    }
                  }
                });
}

DiffArray masked_mean_axis0(DiffArray a, std::span<const std::uint8_t> mask) {
  Tape& t = *a.tape();
  const Shape& s = a.shape();
  if (s.size() < 2) throw shape_error("masked_mean_axis0: expected rank >= 2");
  const int n = s[0];
  if (mask.size() != static_cast<size_t>(n)) {
    throw shape_error("masked_mean_axis0: mask length must equal axis-0 extent");
  }
  const int rest = shape_size(s) / n;
  int valid = 0;
  for (int i = 0; i < n; ++i) valid += mask[static_cast<size_t>(i)] ? 1 : 0;
  if (valid == 0) throw degenerate_error("masked_mean_axis0: no valid slices");
  const double inv = 1.0 / valid;
  std::span<const double> av = a.values();
  std::vector<double> out(static_cast<size_t>(rest), 0.0);
  for (int i = 0; i < n; ++i) {
    if (!mask[static_cast<size_t>(i)]) continue;
    const double* src = av.data() + static_cast<size_t>(i) * rest;
    for (int j = 0; j < rest; ++j) out[static_cast<size_t>(j)] += src[j];
  }
  for (double& v : out) v *= inv;
  Shape os(s.begin() + 1, s.end());
  const int aid = a.id();
  std::vector<std::uint8_t> mask_copy(mask.begin(), mask.end());
  return t.emit(std::move(os), std::move(out), "masked_mean_axis0", needs(t, a),
                [aid, n, rest, inv, mask_copy = std::move(mask_copy)](Tape& tt, int self) {
                  std::span<const double> g = tt.grad_buffer(self);
                  std::span<double> ga = tt.grad_buffer(aid);
                  for (int i = 0; i < n; ++i) {
                    if (!mask_copy[static_cast<size_t>(i)]) continue;
                    double* dst = ga.data() + static_cast<size_t>(i) * rest;
                    for (int j = 0; j < rest; ++j) dst[j] += g[static_cast<size_t>(j)] * inv;
                  }
                });
}

DiffArray logsumexp(DiffArray a) {
  Tape& t = *a.tape();
  std::span<const double> av = a.values();
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : av) mx = std::max(mx, v);
  if (!std::isfinite(mx)) throw degenerate_error("logsumexp: no finite entries");
  double sum = 0.0;
  for (double v : av) sum += std::exp(v - mx);
  const double y = mx + std::log(sum);
  const int aid = a.id();
  return t.emit({1}, {y}, "logsumexp", needs(t, a), [aid](Tape& tt, int self) {
    const double g = tt.grad_buffer(self)[0];
    const double yv = tt.value_of(self)[0];
    std::span<const double> av2 = tt.value_of(aid);
    std::span<double> ga = tt.grad_buffer(aid);
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += g * std::exp(av2[i] - yv);
  });
}

// --- structure ------------------------------------------------------------------

DiffArray reshape(DiffArray a, Shape shape) {
  Tape& t = *a.tape();
  if (shape_size(shape) != a.size()) {
    throw shape_error("reshape: size mismatch " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  const int aid = a.id();
  return t.emit(std::move(shape), std::move(out), "reshape", needs(t, a),
                [aid](Tape& tt, int self) {
                  std::span<const double> g = tt.grad_buffer(self);
                  std::span<double> ga = tt.grad_buffer(aid);
                  for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                });
}

DiffArray slice_last(DiffArray a, int start, int len) {
  Tape& t = *a.tape();
  const Shape& s = a.shape();
  const int c = s.back();
  if (start < 0 || len <= 0 || start + len > c) {
    throw shape_error("slice_last: range [" + std::to_string(start) + ", " +
                      std::to_string(start + len) + ") out of " + std::to_string(c));
  }
  const int rows = shape_size(s) / c;
  std::span<const double> av = a.values();
  std::vector<double> out(static_cast<size_t>(rows) * len);
  for (int r = 0; r < rows; ++r) {
    std::memcpy(out.data() + static_cast<size_t>(r) * len,
                av.data() + static_cast<size_t>(r) * c + start,
                sizeof(double) * static_cast<size_t>(len));
  }
  Shape os(s.begin(), s.end() - 1);
  os.push_back(len);
  const int aid = a.id();
  return t.emit(std::move(os), std::move(out), "slice_last", needs(t, a),
                [aid, rows, c, start, len](Tape& tt, int self) {
                  std::span<const double> g = tt.grad_buffer(self);
                  std::span<double> ga = tt.grad_buffer(aid);
                  for (int r = 0; r < rows; ++r) {
                    const double* src = g.data() + static_cast<size_t>(r) * len;
                    double* dst = ga.data() + static_cast<size_t>(r) * c + start;
                    for (int i = 0; i < len; ++i) dst[i] += src[i];
                  }
                });
}

DiffArray concat_last(const std::vector<DiffArray>& parts) {
  if (parts.empty()) throw shape_error("concat_last: no parts");
  Tape& t = *parts.front().tape();
  const Shape& s0 = parts.front().shape();
  Shape lead(s0.begin(), s0.end() - 1);
  int total_c = 0;
  bool ng = false;
  std::vector<int> ids, widths;
  for (const DiffArray& p : parts) {
    const Shape& sp = p.shape();
    if (Shape(sp.begin(), sp.end() - 1) != lead) {
      throw shape_error("concat_last: leading dims mismatch");
    }
    total_c += sp.back();
    ids.push_back(p.id());
    widths.push_back(sp.back());
    ng = ng || needs(t, p);
  }
  const int rows = shape_size(s0) / s0.back();
  std::vector<double> out(static_cast<size_t>(rows) * total_c);
  int off = 0;
  for (size_t pi = 0; pi < parts.size(); ++pi) {
    const int w = widths[pi];
    std::span<const double> pv = parts[pi].values();
    for (int r = 0; r < rows; ++r) {
      std::memcpy(out.data() + static_cast<size_t>(r) * total_c + off,
                  pv.data() + static_cast<size_t>(r) * w, sizeof(double) * static_cast<size_t>(w));
    }
    off += w;
  }
  Shape os = lead;
  os.push_back(total_c);
  return t.emit(std::move(os), std::move(out), "concat_last", ng,
                [ids = std::move(ids), widths = std::move(widths), rows,
                 total_c](Tape& tt, int self) {
                  std::span<const double> g = tt.grad_buffer(self);
                  int off2 = 0;
                  for (size_t pi = 0; pi < ids.size(); ++pi) {
                    const int w = widths[pi];
                    if (tt.node_needs_grad(ids[pi])) {
                      std::span<double> gp = tt.grad_buffer(ids[pi]);
                      for (int r = 0; r < rows; ++r) {
                        const double* src = g.data() + static_cast<size_t>(r) * total_c + off2;
                        double* dst = gp.data() + static_cast<size_t>(r) * w;
                        for (int i = 0; i < w; ++i) dst[i] += src[i];
                      }
                    }
                    off2 += w;
                  }
                });
}

DiffArray slice_axis0(DiffArray a, int start, int len) {
  Tape& t = *a.tape();
  const Shape& s = a.shape();
  if (start < 0 || len <= 0 || start + len > s[0]) {
    throw shape_error("slice_axis0: range out of bounds");
  }
  const int rest = shape_size(s) / s[0];
  std::span<const double> av = a.values();
  std::vector<double> out(av.begin() + static_cast<size_t>(start) * rest,
                          av.begin() + static_cast<size_t>(start + len) * rest);
  Shape os = s;
  os[0] = len;
  const int aid = a.id();
  return t.emit(std::move(os), std::move(out), "slice_axis0", needs(t, a),
                [aid, start, len, rest](Tape& tt, int self) {
                  std::span<const double> g = tt.grad_buffer(self);
                  std::span<double> ga = tt.grad_buffer(aid);
                  for (size_t i = 0; i < g.size(); ++i) {
                    ga[static_cast<size_t>(start) * rest + i] += g[i];
                  }
                });
}

DiffArray slice_axis1(DiffArray a, int start, int len) {
  Tape& t = *a.tape();
  const Shape& s = a.shape();
  if (s.size() < 2) throw shape_error("slice_axis1: expected rank >= 2");
  if (start < 0 || len <= 0 || start + len > s[1]) {
    throw shape_error("slice_axis1: range out of bounds");
  }
  const int A = s[0], B = s[1];
  const int rest = shape_size(s) / (A * B);
  std::span<const double> av = a.values();
  std::vector<double> out(static_cast<size_t>(A) * len * rest);
  for (int i = 0; i < A; ++i) {
    std::memcpy(out.data() + static_cast<size_t>(i) * len * rest,
                av.data() + (static_cast<size_t>(i) * B + start) * rest,
                sizeof(double) * static_cast<size_t>(len) * rest);
  }
  Shape os = s;
  os[1] = len;
  const int aid = a.id();
  return t.emit(std::move(os), std::move(out), "slice_axis1", needs(t, a),
                [aid, A, B, start, len, rest](Tape& tt, int self) {
                  std::span<const double> g = tt.grad_buffer(self);
                  std::span<double> ga = tt.grad_buffer(aid);
                  for (int i = 0; i < A; ++i) {
                    const double* src = g.data() + static_cast<size_t>(i) * len * rest;
                    double* dst = ga.data() + (static_cast<size_t>(i) * B + start) * rest;
                    for (int j = 0; j < len * rest; ++j) dst[j] += src[j];
                  }
                });
}

DiffArray concat_axis0(const std::vector<DiffArray>& parts) {
  if (parts.empty()) throw shape_error("concat_axis0: no parts");
  Tape& t = *parts.front().tape();
  const Shape& s0 = parts.front().shape();
  Shape tail(s0.begin() + 1, s0.end());
  int total = 0;
  bool ng = false;
  std::vector<int> ids, lens;
  for (const DiffArray& p : parts) {
    const Shape& sp = p.shape();
    if (Shape(sp.begin() + 1, sp.end()) != tail) {
      throw shape_error("concat_axis0: trailing dims mismatch");
    }
    total += sp[0];
    ids.push_back(p.id());
    lens.push_back(p.size());
    ng = ng || needs(t, p);
  }
  std::vector<double> out;
  out.reserve(static_cast<size_t>(total) * (s0.empty() ? 1 : shape_size(tail)));
  for (const DiffArray& p : parts) {
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  Shape os;
  os.push_back(total);
  for (int d : tail) os.push_back(d);
  return t.emit(std::move(os), std::move(out), "concat_axis0", ng,
                [ids = std::move(ids), lens = std::move(lens)](Tape& tt, int self) {
                  std::span<const double> g = tt.grad_buffer(self);
                  size_t off = 0;
                  for (size_t pi = 0; pi < ids.size(); ++pi) {
                    if (tt.node_needs_grad(ids[pi])) {
                      std::span<double> gp = tt.grad_buffer(ids[pi]);
                      for (size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
                    }
                    off += static_cast<size_t>(lens[pi]);
                  }
                });
}

DiffArray select_axis0(DiffArray a, int index) {
  const Shape& s = a.shape();
  if (index < 0 || index >= s[0]) throw shape_error("select_axis0: index out of bounds");
  DiffArray sl = slice_axis0(a, index, 1);
  Shape os(s.begin() + 1, s.end());
  if (os.empty()) os.push_back(1);
  return reshape(sl, os);
}

DiffArray select_element(DiffArray a, int index) {
  Tape& t = *a.tape();
  if (index < 0 || index >= a.size()) throw shape_error("select_element: index out of bounds");
  const int aid = a.id();
  return t.emit({1}, {a.values()[static_cast<size_t>(index)]}, "select_element", needs(t, a),
                [aid, index](Tape& tt, int self) {
                  tt.grad_buffer(aid)[static_cast<size_t>(index)] += tt.grad_buffer(self)[0];
                });
}

DiffArray swap01(DiffArray a) {
  Tape& t = *a.tape();
  const Shape& s = a.shape();
  if (s.size() < 2) throw shape_error("swap01: expected rank >= 2");
  const int A = s[0], B = s[1];
  const int rest = shape_size(s) / (A * B);
  std::span<const double> av = a.values();
  std::vector<double> out(av.size());
  for (int i = 0; i < A; ++i) {
    for (int j = 0; j < B; ++j) {
      std::memcpy(out.data() + (static_cast<size_t>(j) * A + i) * rest,
                  av.data() + (static_cast<size_t>(i) * B + j) * rest,
                  sizeof(double) * static_cast<size_t>(rest));
    }
  }
  Shape os = s;
  std::swap(os[0], os[1]);
  const int aid = a.id();
  return t.emit(std::move(os), std::move(out), "swap01", needs(t, a),
                [aid, A, B, rest](Tape& tt, int self) {
                  std::span<const double> g = tt.grad_buffer(self);
                  std::span<double> ga = tt.grad_buffer(aid);
                  for (int j = 0; j < B; ++j) {
                    for (int i = 0; i < A; ++i) {
                      const double* src = g.data() + (static_cast<size_t>(j) * A + i) * rest;
                      double* dst = ga.data() + (static_cast<size_t>(i) * B + j) * rest;
                      for (int k = 0; k < rest; ++k) dst[k] += src[k];
                    }
                  }
                });
}

DiffArray broadcast0(DiffArray a, int reps) {
  Tape& t = *a.tape();
  const Shape& s = a.shape();
  const int n = a.size();
  std::span<const double> av = a.values();
  std::vector<double> out(static_cast<size_t>(reps) * n);
  for (int r = 0; r < reps; ++r) {
    std::memcpy(out.data() + static_cast<size_t>(r) * n, av.data(), sizeof(double) * static_cast<size_t>(n));
  }
  Shape os;
  os.push_back(reps);
  for (int d : s) os.push_back(d);
  const int aid = a.id();
  return t.emit(std::move(os), std::move(out), "broadcast0", needs(t, a),
                [aid, reps, n](Tape& tt, int self) {
                  std::span<const double> g = tt.grad_buffer(self);
                  std::span<double> ga = tt.grad_buffer(aid);
                  for (int r = 0; r < reps; ++r) {
                    const double* src = g.data() + static_cast<size_t>(r) * n;
                    for (int i = 0; i < n; ++i) ga[static_cast<size_t>(i)] += src[i];
                  }
                });
}

DiffArray tile_axis1(DiffArray a, int reps) {
  Tape& t = *a.tape();
  const Shape& s = a.shape();
  if (s.size() != 2) throw shape_error("tile_axis1: expected rank 2, got " + shape_str(s));
  const int A = s[0], C = s[1];
  std::span<const double> av = a.values();
  std::vector<double> out(static_cast<size_t>(A) * reps * C);
  for (int i = 0; i < A; ++i) {
    for (int r = 0; r < reps; ++r) {
      std::memcpy(out.data() + (static_cast<size_t>(i) * reps + r) * C,
                  av.data() + static_cast<size_t>(i) * C, sizeof(double) * static_cast<size_t>(C));
    }
  }
  const int aid = a.id();
  return t.emit({A, reps, C}, std::move(out), "tile_axis1", needs(t, a),
                [aid, A, reps, C](Tape& tt, int self) {
                  std::span<const double> g = tt.grad_buffer(self);
                  std::span<double> ga = tt.grad_buffer(aid);
                  for (int i = 0; i < A; ++i) {
                    for (int r = 0; r < reps; ++r) {
                      const double* src = g.data() + (static_cast<size_t>(i) * reps + r) * C;
                      double* dst = ga.data() + static_cast<size_t>(i) * C;
                      for (int k = 0; k < C; ++k) dst[k] += src[k];
                    }
                  }
                });
}

DiffArray add_bcast0(DiffArray a, DiffArray b) {
  Tape& t = same_tape(a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || Shape(sa.begin() + 1, sa.end()) != sb) {
    throw shape_error("add_bcast0: b" + shape_str(sb) + " must match a" + shape_str(sa) +
                      " minus axis 0");
  }
  const int reps = sa[0];
  const int n = b.size();
  std::vector<double> out(a.values().begin(), a.values().end());
  std::span<const double> bv = b.values();
  for (int r = 0; r < reps; ++r) {
    double* dst = out.data() + static_cast<size_t>(r) * n;
    for (int i = 0; i < n; ++i) dst[i] += bv[static_cast<size_t>(i)];
  }
  const int aid = a.id(), bid = b.id();
  return t.emit(sa, std::move(out), "add_bcast0", needs(t, a) || needs(t, b),
                [aid, bid, reps, n](Tape& tt, int self) {
                  std::span<const double> g = tt.grad_buffer(self);
                  if (tt.node_needs_grad(aid)) {
                    std::span<double> ga = tt.grad_buffer(aid);
                    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                  }
                  if (tt.node_needs_grad(bid)) {
                    std::span<double> gb = tt.grad_buffer(bid);
                    for (int r = 0; r < reps; ++r) {
                      const double* src = g.data() + static_cast<size_t>(r) * n;
                      for (int i = 0; i < n; ++i) gb[static_cast<size_t>(i)] += src[i];
                    }
                  }
                });
}

DiffArray transpose12(DiffArray a) {
  Tape& t = *a.tape();
  const Shape& s = a.shape();
  if (s.size() != 3) throw shape_error("transpose12: expected rank 3, got " + shape_str(s));
  const int G = s[0], B = s[1], C = s[2];
  std::span<const double> av = a.values();
  std::vector<double> out(av.size());
  for (int g = 0; g < G; ++g) {
    const double* src = av.data() + static_cast<size_t>(g) * B * C;
    double* dst = out.data() + static_cast<size_t>(g) * B * C;
    for (int i = 0; i < B; ++i) {
      for (int j = 0; j < C; ++j) dst[static_cast<size_t>(j) * B + i] = src[static_cast<size_t>(i) * C + j];
    }
  }
  const int aid = a.id();
  return t.emit({G, C, B}, std::move(out), "transpose12", needs(t, a),
                [aid, G, B, C](Tape& tt, int self) {
                  std::span<const double> g = tt.grad_buffer(self);
                  std::span<double> ga = tt.grad_buffer(aid);
                  for (int gi = 0; gi < G; ++gi) {
                    const double* src = g.data() + static_cast<size_t>(gi) * B * C;
                    double* dst = ga.data() + static_cast<size_t>(gi) * B * C;
                    for (int j = 0; j < C; ++j) {
                      for (int i = 0; i < B; ++i) {
                        dst[static_cast<size_t>(i) * C + j] += src[static_cast<size_t>(j) * B + i];
                      }
                    }
                  }
                });
}

DiffArray gather_axis1(DiffArray a, std::vector<int> indices) {
  Tape& t = *a.tape();
  const Shape& s = a.shape();
  if (s.size() != 3) throw shape_error("gather_axis1: expected rank 3, got " + shape_str(s));
  const int G = s[0], L = s[1], C = s[2];
  if (static_cast<int>(indices.size()) != G) {
    throw shape_error("gather_axis1: need one index per axis-0 slice");
  }
  for (int idx : indices) {
    if (idx < 0 || idx >= L) throw shape_error("gather_axis1: index out of range");
  }
  std::span<const double> av = a.values();
  std::vector<double> out(static_cast<size_t>(G) * C);
  for (int g = 0; g < G; ++g) {
    std::memcpy(out.data() + static_cast<size_t>(g) * C,
                av.data() + (static_cast<size_t>(g) * L + indices[static_cast<size_t>(g)]) * C,
                sizeof(double) * static_cast<size_t>(C));
  }
  const int aid = a.id();
  return t.emit({G, C}, std::move(out), "gather_axis1", needs(t, a),
                [aid, G, L, C, indices = std::move(indices)](Tape& tt, int self) {
                  std::span<const double> g = tt.grad_buffer(self);
                  std::span<double> ga = tt.grad_buffer(aid);
                  for (int gi = 0; gi < G; ++gi) {
                    const double* src = g.data() + static_cast<size_t>(gi) * C;
                    double* dst = ga.data() +
                                  (static_cast<size_t>(gi) * L + indices[static_cast<size_t>(gi)]) * C;
                    for (int i = 0; i < C; ++i) dst[i] += src[i];
                  }
                });
}

DiffArray cumsum_axis1(DiffArray a) {
  Tape& t = *a.tape();
  const Shape s = a.shape();
  if (s.size() != 3) throw shape_error("cumsum_axis1: expected rank 3, got " + shape_str(s));
  const int A = s[0], B = s[1], C = s[2];
  std::vector<double> out(a.values().begin(), a.values().end());
  for (int i = 0; i < A; ++i) {
    for (int b = 1; b < B; ++b) {
      double* cur = out.data() + (static_cast<size_t>(i) * B + b) * C;
      const double* prev = out.data() + (static_cast<size_t>(i) * B + b - 1) * C;
      for (int c = 0; c < C; ++c) cur[c] += prev[c];
    }
  }
  const int aid = a.id();
  return t.emit(s, std::move(out), "cumsum_axis1", needs(t, a),
                [aid, A, B, C](Tape& tt, int self) {
                  std::span<const double> g = tt.grad_buffer(self);
                  std::span<double> ga = tt.grad_buffer(aid);
                  // d/da[b] = sum of output grads at steps >= b.
                  for (int i = 0; i < A; ++i) {
                    std::vector<double> suffix(static_cast<size_t>(C), 0.0);
                    for (int b = B - 1; b >= 0; --b) {
                      const double* grow = g.data() + (static_cast<size_t>(i) * B + b) * C;
                      double* dst = ga.data() + (static_cast<size_t>(i) * B + b) * C;
                      for (int c = 0; c < C; ++c) {
                        suffix[static_cast<size_t>(c)] += grow[c];
                        dst[c] += suffix[static_cast<size_t>(c)];
                      }
                    }
                  }
                });
}

DiffArray mul_axis0_scalars(DiffArray a, DiffArray s) {
  Tape& t = same_tape(a, s);
  const Shape& sa = a.shape();
  if (sa.empty() || shape_size(s.shape()) != sa[0]) {
    throw shape_error("mul_axis0_scalars: scalars " + shape_str(s.shape()) +
                      " must match axis-0 extent of " + shape_str(sa));
  }
  const int G = sa[0];
  const int rest = shape_size(sa) / G;
  std::span<const double> av = a.values();
  std::span<const double> sv = s.values();
  std::vector<double> out(av.size());
  for (int g = 0; g < G; ++g) {
    const double m = sv[static_cast<size_t>(g)];
    const double* src = av.data() + static_cast<size_t>(g) * rest;
    double* dst = out.data() + static_cast<size_t>(g) * rest;
    for (int i = 0; i < rest; ++i) dst[i] = src[i] * m;
  }
  const int aid = a.id(), sid = s.id();
  return t.emit(sa, std::move(out), "mul_axis0_scalars", needs(t, a) || needs(t, s),
                [aid, sid, G, rest](Tape& tt, int self) {
                  std::span<const double> g = tt.grad_buffer(self);
                  std::span<const double> av2 = tt.value_of(aid);
                  std::span<const double> sv2 = tt.value_of(sid);
                  if (tt.node_needs_grad(aid)) {
                    std::span<double> ga = tt.grad_buffer(aid);
                    for (int gi = 0; gi < G; ++gi) {
                      const double m = sv2[static_cast<size_t>(gi)];
                      const double* src = g.data() + static_cast<size_t>(gi) * rest;
                      double* dst = ga.data() + static_cast<size_t>(gi) * rest;
                      for (int i = 0; i < rest; ++i) dst[i] += src[i] * m;
                    }
                  }
                  if (tt.node_needs_grad(sid)) {
                    std::span<double> gs = tt.grad_buffer(sid);
                    for (int gi = 0; gi < G; ++gi) {
                      const double* grow = g.data() + static_cast<size_t>(gi) * rest;
                      const double* arow = av2.data() + static_cast<size_t>(gi) * rest;
                      double acc = 0.0;
                      for (int i = 0; i < rest; ++i) acc += grow[i] * arow[i];
                      gs[static_cast<size_t>(gi)] += acc;
                    }
                  }
                });
}

// --- constants -----------------------------------------------------------------

std::vector<double> positional_embedding(int length, int dim) {
  if (dim % 2 != 0) throw config_error("positional_embedding: dim must be even");
  std::vector<double> pe(static_cast<size_t>(length) * dim);
  for (int t = 0; t < length; ++t) {
    for (int i = 0; i < dim / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * i / static_cast<double>(dim));
      pe[static_cast<size_t>(t) * dim + 2 * i] = std::sin(t * freq);
      pe[static_cast<size_t>(t) * dim + 2 * i + 1] = std::cos(t * freq);
    }
  }
  return pe;
}

// --- grad check ----------------------------------------------------------------

double grad_check(
    const std::function<DiffArray(Tape&, const std::vector<DiffArray>&)>& build,
    const std::vector<GradCheckInput>& inputs, double step) {
  auto run = [&](const std::vector<GradCheckInput>& ins, bool want_grads,
                 std::vector<std::vector<double>>* grads) -> double {
    Tape tape(Precision::f64);
    std::vector<DiffArray> leaves;
    leaves.reserve(ins.size());
    for (const GradCheckInput& in : ins) {
      leaves.push_back(tape.leaf(in.shape, {in.values.data(), in.values.size()}, "gc_input"));
    }
    DiffArray y = build(tape, leaves);
    if (y.size() != 1) throw shape_error("grad_check: computation must be scalar-valued");
    const double value = y.values()[0];
    if (!std::isfinite(value)) throw numeric_error("grad_check: non-finite function value");
    if (want_grads) {
      tape.backward(y);
      grads->clear();
      for (const DiffArray& leaf : leaves) {
        std::span<const double> g = leaf.grad();
        if (g.empty()) {
          grads->emplace_back(static_cast<size_t>(leaf.size()), 0.0);
        } else {
          grads->emplace_back(g.begin(), g.end());
        }
      }
    }
    return value;
  };

  std::vector<std::vector<double>> analytic;
  run(inputs, true, &analytic);

  double max_rel = 0.0;
  std::vector<GradCheckInput> work = inputs;
  for (size_t ii = 0; ii < inputs.size(); ++ii) {
    for (size_t j = 0; j < inputs[ii].values.size(); ++j) {
      const double orig = work[ii].values[j];
      work[ii].values[j] = orig + step;
      const double fp = run(work, false, nullptr);
      work[ii].values[j] = orig - step;
      const double fm = run(work, false, nullptr);
      work[ii].values[j] = orig;
      const double numeric = (fp - fm) / (2.0 * step);
      if (!std::isfinite(numeric)) throw numeric_error("grad_check: non-finite finite difference");
      const double rel = std::fabs(analytic[ii][j] - numeric) / std::max(1.0, std::fabs(numeric));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace mact::ops
