#include "facetpath/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <utility>

#include "facetpath/errors.hpp"

namespace facetpath {

namespace {

bool env_finite_checks() {
  const char* v = std::getenv("FACETPATH_CHECK_FINITE");
  return v != nullptr && v[0] == '1';
}

}  // namespace

Tape::Tape() : finite_checks_(env_finite_checks()) {}

void Tape::check_finite(const Tensor& t, const char* op) const {
  if (!finite_checks_) return;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) {
      throw NumericsError(std::string("non-finite value after op ") + op);
    }
  }
}

VarId Tape::push(Tensor value, bool requires_grad, std::function<void(Tape&)> bw) {
  values_.push_back(std::move(value));
  grads_.emplace_back();
  requires_.push_back(requires_grad);
  nodes_.push_back(Node{std::move(bw)});
  return static_cast<VarId>(values_.size() - 1);
}

VarId Tape::leaf(Tensor value, bool requires_grad) {
  check_finite(value, "leaf");
  return push(std::move(value), requires_grad, {});
}

Tensor& Tape::grad_buf(VarId v) {
  if (grads_[v].empty() && !values_[v].empty()) {
    grads_[v] = Tensor(values_[v].rows(), values_[v].cols(), 0.0);
  }
  return grads_[v];
}

const Tensor& Tape::grad(VarId v) const {
  if (grads_[v].empty()) {
    const_cast<Tape*>(this)->grad_buf(v);
  }
  return grads_[v];
}

void Tape::backward(VarId loss) {
  const Tensor& l = values_[loss];
  if (l.rows() != 1 || l.cols() != 1) {
    throw ContractError("backward: loss must be a 1x1 scalar, got " + l.shape_str());
  }
  grad_buf(loss)[0] += 1.0;
  for (VarId v = static_cast<VarId>(nodes_.size()) - 1; v >= 0; --v) {
    if (!requires_[v] || !nodes_[v].backward) continue;
    if (grads_[v].empty()) continue;  // never contributed to the loss
    nodes_[v].backward(*this);
  }
}

VarId Tape::matmul(VarId a, VarId b) {
  const Tensor& A = values_[a];
  const Tensor& B = values_[b];
  if (A.cols() != B.rows()) {
    throw ShapeError("matmul: " + A.shape_str() + " * " + B.shape_str());
  }
  const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
  Tensor out(n, m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = A.data() + i * k;
    double* orow = out.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = arow[p];
      const double* brow = B.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
    }
  }
  check_finite(out, "matmul");
  const bool rg = requires_[a] || requires_[b];
  VarId o = push(std::move(out), rg, {});
  if (rg) {
    nodes_[o].backward = [a, b, o, n, k, m](Tape& t) {
      const Tensor& g = t.grads_[o];
      const Tensor& A2 = t.values_[a];
      const Tensor& B2 = t.values_[b];
      if (t.requires_[a]) {
        // dA += g * B^T
        Tensor& ga = t.grad_buf(a);
        for (std::size_t i = 0; i < n; ++i) {
          const double* grow = g.data() + i * m;
          double* garow = ga.data() + i * k;
          for (std::size_t p = 0; p < k; ++p) {
            const double* brow = B2.data() + p * m;
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
            garow[p] += acc;
          }
        }
      }
      if (t.requires_[b]) {
        // dB += A^T * g
        Tensor& gb = t.grad_buf(b);
        for (std::size_t i = 0; i < n; ++i) {
          const double* arow = A2.data() + i * k;
          const double* grow = g.data() + i * m;
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = arow[p];
            if (aip == 0.0) continue;
            double* gbrow = gb.data() + p * m;
            for (std::size_t j = 0; j < m; ++j) gbrow[j] += aip * grow[j];
          }
        }
      }
    };
  }
  return o;
}

VarId Tape::add(VarId a, VarId b) {
  const Tensor& A = values_[a];
  const Tensor& B = values_[b];
  if (!A.same_shape(B)) {
    throw ShapeError("add: " + A.shape_str() + " vs " + B.shape_str());
  }
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  check_finite(out, "add");
  const bool rg = requires_[a] || requires_[b];
  VarId o = push(std::move(out), rg, {});
  if (rg) {
    nodes_[o].backward = [a, b, o](Tape& t) {
      const Tensor& g = t.grads_[o];
      if (t.requires_[a]) {
        Tensor& ga = t.grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (t.requires_[b]) {
        Tensor& gb = t.grad_buf(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    };
  }
  return o;
}

VarId Tape::scale(VarId a, double s) {
  Tensor out = values_[a];
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
  check_finite(out, "scale");
  const bool rg = requires_[a];
  VarId o = push(std::move(out), rg, {});
  if (rg) {
    nodes_[o].backward = [a, o, s](Tape& t) {
      const Tensor& g = t.grads_[o];
      Tensor& ga = t.grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    };
  }
  return o;
}

VarId Tape::hadamard(VarId a, VarId b) {
  const Tensor& A = values_[a];
  const Tensor& B = values_[b];
  if (!A.same_shape(B)) {
    throw ShapeError("hadamard: " + A.shape_str() + " vs " + B.shape_str());
  }
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  check_finite(out, "hadamard");
  const bool rg = requires_[a] || requires_[b];
  VarId o = push(std::move(out), rg, {});
  if (rg) {
    nodes_[o].backward = [a, b, o](Tape& t) {
      const Tensor& g = t.grads_[o];
      const Tensor& A2 = t.values_[a];
      const Tensor& B2 = t.values_[b];
      if (t.requires_[a]) {
        Tensor& ga = t.grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B2[i];
      }
      if (t.requires_[b]) {
        Tensor& gb = t.grad_buf(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A2[i];
      }
    };
  }
  return o;
}

VarId Tape::row_mean(VarId a) {
  const Tensor& A = values_[a];
  if (A.rows() == 0) throw ShapeError("row_mean: empty input");
  const std::size_t n = A.rows(), d = A.cols();
  Tensor out(1, d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[j] += A.at(i, j);
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t j = 0; j < d; ++j) out[j] *= inv;
  check_finite(out, "row_mean");
  const bool rg = requires_[a];
  VarId o = push(std::move(out), rg, {});
  if (rg) {
    nodes_[o].backward = [a, o, n, d, inv](Tape& t) {
      const Tensor& g = t.grads_[o];
      Tensor& ga = t.grad_buf(a);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) ga.at(i, j) += g[j] * inv;
      }
    };
  }
  return o;
}

VarId Tape::row_sum(VarId a) {
  const Tensor& A = values_[a];
  const std::size_t n = A.rows(), d = A.cols();
  Tensor out(n, 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += A.at(i, j);
    out[i] = acc;
  }
  check_finite(out, "row_sum");
  const bool rg = requires_[a];
  VarId o = push(std::move(out), rg, {});
  if (rg) {
    nodes_[o].backward = [a, o, n, d](Tape& t) {
      const Tensor& g = t.grads_[o];
      Tensor& ga = t.grad_buf(a);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) ga.at(i, j) += g[i];
      }
    };
  }
  return o;
}

VarId Tape::sum_all(VarId a) {
  const Tensor& A = values_[a];
  double acc = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) acc += A[i];
  Tensor out = Tensor::scalar(acc);
  check_finite(out, "sum_all");
  const bool rg = requires_[a];
  VarId o = push(std::move(out), rg, {});
  if (rg) {
    nodes_[o].backward = [a, o](Tape& t) {
      const double g = t.grads_[o][0];
      Tensor& ga = t.grad_buf(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    };
  }
  return o;
}

VarId Tape::transpose(VarId a) {
  const Tensor& A = values_[a];
  const std::size_t n = A.rows(), d = A.cols();
  Tensor out(d, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out.at(j, i) = A.at(i, j);
  }
  const bool rg = requires_[a];
  VarId o = push(std::move(out), rg, {});
  if (rg) {
    nodes_[o].backward = [a, o, n, d](Tape& t) {
      const Tensor& g = t.grads_[o];
      Tensor& ga = t.grad_buf(a);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) ga.at(i, j) += g.at(j, i);
      }
    };
  }
  return o;
}

VarId Tape::concat_rows(const std::vector<VarId>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t d = values_[parts[0]].cols();
  std::size_t total = 0;
  bool rg = false;
  for (VarId p : parts) {
    if (values_[p].cols() != d) {
      throw ShapeError("concat_rows: column mismatch");
    }
    total += values_[p].rows();
    rg = rg || requires_[p];
  }
  Tensor out(total, d);
  std::size_t r = 0;
  for (VarId p : parts) {
    const Tensor& P = values_[p];
    std::copy(P.data(), P.data() + P.size(), out.data() + r * d);
    r += P.rows();
  }
  VarId o = push(std::move(out), rg, {});
  if (rg) {
    std::vector<VarId> ps = parts;
    nodes_[o].backward = [ps, o, d](Tape& t) {
      const Tensor& g = t.grads_[o];
      std::size_t r = 0;
      for (VarId p : ps) {
        const std::size_t pr = t.values_[p].rows();
        if (t.requires_[p]) {
          Tensor& gp = t.grad_buf(p);
          for (std::size_t i = 0; i < pr * d; ++i) gp[i] += g[r * d + i];
        }
        r += pr;
      }
    };
  }
  return o;
}

VarId Tape::concat_cols(const std::vector<VarId>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t n = values_[parts[0]].rows();
  std::size_t total = 0;
  bool rg = false;
  for (VarId p : parts) {
    if (values_[p].rows() != n) {
      throw ShapeError("concat_cols: row mismatch");
    }
    total += values_[p].cols();
    rg = rg || requires_[p];
  }
  Tensor out(n, total);
  std::size_t c = 0;
  for (VarId p : parts) {
    const Tensor& P = values_[p];
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < P.cols(); ++j) out.at(i, c + j) = P.at(i, j);
    }
    c += P.cols();
  }
  VarId o = push(std::move(out), rg, {});
  if (rg) {
    std::vector<VarId> ps = parts;
    nodes_[o].backward = [ps, o, n](Tape& t) {
      const Tensor& g = t.grads_[o];
      std::size_t c = 0;
      for (VarId p : ps) {
        const std::size_t pc = t.values_[p].cols();
        if (t.requires_[p]) {
          Tensor& gp = t.grad_buf(p);
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < pc; ++j) gp.at(i, j) += g.at(i, c + j);
          }
        }
        c += pc;
      }
    };
  }
  return o;
}

VarId Tape::slice_cols(VarId a, std::size_t c0, std::size_t c1) {
  const Tensor& A = values_[a];
  if (c0 >= c1 || c1 > A.cols()) throw ShapeError("slice_cols: bad range");
  const std::size_t n = A.rows(), w = c1 - c0;
  Tensor out(n, w);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < w; ++j) out.at(i, j) = A.at(i, c0 + j);
  }
  const bool rg = requires_[a];
  VarId o = push(std::move(out), rg, {});
  if (rg) {
    nodes_[o].backward = [a, o, c0, n, w](Tape& t) {
      const Tensor& g = t.grads_[o];
      Tensor& ga = t.grad_buf(a);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < w; ++j) ga.at(i, c0 + j) += g.at(i, j);
      }
    };
  }
  return o;
}

VarId Tape::gather_rows(VarId a, std::vector<int> index) {
  const Tensor& A = values_[a];
  const std::size_t d = A.cols();
  Tensor out(index.size(), d);
  for (std::size_t i = 0; i < index.size(); ++i) {
    const int r = index[i];
    if (r < 0 || static_cast<std::size_t>(r) >= A.rows()) {
      throw ShapeError("gather_rows: index out of range");
    }
    std::copy(A.data() + r * d, A.data() + (r + 1) * d, out.data() + i * d);
  }
  const bool rg = requires_[a];
  VarId o = push(std::move(out), rg, {});
  if (rg) {
    nodes_[o].backward = [a, o, idx = std::move(index), d](Tape& t) {
      const Tensor& g = t.grads_[o];
      Tensor& ga = t.grad_buf(a);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        double* row = ga.data() + static_cast<std::size_t>(idx[i]) * d;
        const double* grow = g.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) row[j] += grow[j];
      }
    };
  }
  return o;
}

VarId Tape::scatter_add_rows(VarId a, std::vector<int> index, std::size_t out_rows) {
  const Tensor& A = values_[a];
  if (index.size() != A.rows()) {
    throw ShapeError("scatter_add_rows: index length != rows");
  }
  const std::size_t d = A.cols();
  Tensor out(out_rows, d, 0.0);
  for (std::size_t i = 0; i < index.size(); ++i) {
    const int r = index[i];
    if (r < 0 || static_cast<std::size_t>(r) >= out_rows) {
      throw ShapeError("scatter_add_rows: index out of range");
    }
    double* row = out.data() + static_cast<std::size_t>(r) * d;
    const double* arow = A.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) row[j] += arow[j];
  }
  check_finite(out, "scatter_add_rows");
  const bool rg = requires_[a];
  VarId o = push(std::move(out), rg, {});
  if (rg) {
    nodes_[o].backward = [a, o, idx = std::move(index), d](Tape& t) {
      const Tensor& g = t.grads_[o];
      Tensor& ga = t.grad_buf(a);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const double* grow = g.data() + static_cast<std::size_t>(idx[i]) * d;
        double* garow = ga.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) garow[j] += grow[j];
      }
    };
  }
  return o;
}

VarId Tape::rowwise_scale(VarId a, VarId w) {
  const Tensor& A = values_[a];
  const Tensor& W = values_[w];
  if (W.rows() != A.rows() || W.cols() != 1) {
    throw ShapeError("rowwise_scale: weights must be " + std::to_string(A.rows()) + "x1");
  }
  const std::size_t n = A.rows(), d = A.cols();
  Tensor out(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const double wi = W[i];
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = wi * A.at(i, j);
  }
  check_finite(out, "rowwise_scale");
  const bool rg = requires_[a] || requires_[w];
  VarId o = push(std::move(out), rg, {});
  if (rg) {
    nodes_[o].backward = [a, w, o, n, d](Tape& t) {
      const Tensor& g = t.grads_[o];
      const Tensor& A2 = t.values_[a];
      const Tensor& W2 = t.values_[w];
      if (t.requires_[a]) {
        Tensor& ga = t.grad_buf(a);
        for (std::size_t i = 0; i < n; ++i) {
          const double wi = W2[i];
          for (std::size_t j = 0; j < d; ++j) ga.at(i, j) += wi * g.at(i, j);
        }
      }
      if (t.requires_[w]) {
        Tensor& gw = t.grad_buf(w);
        for (std::size_t i = 0; i < n; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < d; ++j) acc += g.at(i, j) * A2.at(i, j);
          gw[i] += acc;
        }
      }
    };
  }
  return o;
}

VarId Tape::add_row_broadcast(VarId a, VarId b) {
  const Tensor& A = values_[a];
  const Tensor& B = values_[b];
  if (B.rows() != 1 || B.cols() != A.cols()) {
    throw ShapeError("add_row_broadcast: bias must be 1x" + std::to_string(A.cols()));
  }
  const std::size_t n = A.rows(), d = A.cols();
  Tensor out = A;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) += B[j];
  }
  check_finite(out, "add_row_broadcast");
  const bool rg = requires_[a] || requires_[b];
  VarId o = push(std::move(out), rg, {});
  if (rg) {
    nodes_[o].backward = [a, b, o, n, d](Tape& t) {
      const Tensor& g = t.grads_[o];
      if (t.requires_[a]) {
        Tensor& ga = t.grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (t.requires_[b]) {
        Tensor& gb = t.grad_buf(b);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < d; ++j) gb[j] += g.at(i, j);
        }
      }
    };
  }
  return o;
}

VarId Tape::take_per_row(VarId a, std::vector<int> col_index) {
  const Tensor& A = values_[a];
  if (col_index.size() != A.rows()) {
    throw ShapeError("take_per_row: index length != rows");
  }
  Tensor out(A.rows(), 1);
  for (std::size_t i = 0; i < col_index.size(); ++i) {
    const int c = col_index[i];
    if (c < 0 || static_cast<std::size_t>(c) >= A.cols()) {
      throw ShapeError("take_per_row: column out of range");
    }
    out[i] = A.at(i, c);
  }
  const bool rg = requires_[a];
  VarId o = push(std::move(out), rg, {});
  if (rg) {
    nodes_[o].backward = [a, o, idx = std::move(col_index)](Tape& t) {
      const Tensor& g = t.grads_[o];
      Tensor& ga = t.grad_buf(a);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        ga.at(i, static_cast<std::size_t>(idx[i])) += g[i];
      }
    };
  }
  return o;
}

VarId Tape::elu(VarId a) {
  const Tensor& A = values_[a];
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i] <= 0.0) out[i] = std::expm1(out[i]);
  }
  check_finite(out, "elu");
  const bool rg = requires_[a];
  VarId o = push(std::move(out), rg, {});
  if (rg) {
    nodes_[o].backward = [a, o](Tape& t) {
      const Tensor& g = t.grads_[o];
      const Tensor& x = t.values_[a];
      const Tensor& y = t.values_[o];
      Tensor& ga = t.grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * (x[i] > 0.0 ? 1.0 : y[i] + 1.0);
      }
    };
  }
  return o;
}

VarId Tape::sigmoid(VarId a) {
  const Tensor& A = values_[a];
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = out[i];
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                      : std::exp(x) / (1.0 + std::exp(x));
  }
  check_finite(out, "sigmoid");
  const bool rg = requires_[a];
  VarId o = push(std::move(out), rg, {});
  if (rg) {
    nodes_[o].backward = [a, o](Tape& t) {
      const Tensor& g = t.grads_[o];
      const Tensor& y = t.values_[o];
      Tensor& ga = t.grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * y[i] * (1.0 - y[i]);
      }
    };
  }
  return o;
}

VarId Tape::log_clamped(VarId a, double floor) {
  const Tensor& A = values_[a];
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i] < floor) {
      out[i] = floor;
      ++clamp_events_;
    }
    out[i] = std::log(out[i]);
  }
  check_finite(out, "log_clamped");
  const bool rg = requires_[a];
  VarId o = push(std::move(out), rg, {});
  if (rg) {
    nodes_[o].backward = [a, o, floor](Tape& t) {
      const Tensor& g = t.grads_[o];
      const Tensor& x = t.values_[a];
      Tensor& ga = t.grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (x[i] >= floor) ga[i] += g[i] / x[i];
      }
    };
  }
  return o;
}

VarId Tape::log_sigmoid(VarId a) {
  const Tensor& A = values_[a];
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = out[i];
    out[i] = x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
  }
  check_finite(out, "log_sigmoid");
  const bool rg = requires_[a];
  VarId o = push(std::move(out), rg, {});
  if (rg) {
    nodes_[o].backward = [a, o](Tape& t) {
      const Tensor& g = t.grads_[o];
      const Tensor& x = t.values_[a];
      Tensor& ga = t.grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i) {
        // d/dx log sigmoid(x) = sigmoid(-x)
        const double xv = -x[i];
        const double s = xv >= 0.0 ? 1.0 / (1.0 + std::exp(-xv))
                                   : std::exp(xv) / (1.0 + std::exp(xv));
        ga[i] += g[i] * s;
      }
    };
  }
  return o;
}

namespace {

// Row-wise softmax of z into y (same shape).
void softmax_rows_values(const Tensor& z, Tensor& y) {
  const std::size_t n = z.rows(), d = z.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double mx = z.at(i, 0);
    for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, z.at(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double e = std::exp(z.at(i, j) - mx);
      y.at(i, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j < d; ++j) y.at(i, j) /= sum;
  }
}

// dz = y .* (g - rowdot(g, y)); accumulate scaled by inv_tau.
void softmax_rows_backward(const Tensor& y, const Tensor& g, Tensor& dz,
                           double inv_tau) {
  const std::size_t n = y.rows(), d = y.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < d; ++j) dot += g.at(i, j) * y.at(i, j);
    for (std::size_t j = 0; j < d; ++j) {
      dz.at(i, j) += inv_tau * y.at(i, j) * (g.at(i, j) - dot);
    }
  }
}

}  // namespace

VarId Tape::softmax(VarId a, int axis) {
  if (axis != 0 && axis != 1) throw ShapeError("softmax: axis must be 0 or 1");
  if (axis == 0) return transpose(softmax(transpose(a), 1));
  const Tensor& A = values_[a];
  Tensor out(A.rows(), A.cols());
  softmax_rows_values(A, out);
  check_finite(out, "softmax");
  const bool rg = requires_[a];
  VarId o = push(std::move(out), rg, {});
  if (rg) {
    nodes_[o].backward = [a, o](Tape& t) {
      softmax_rows_backward(t.values_[o], t.grads_[o], t.grad_buf(a), 1.0);
    };
  }
  return o;
}

VarId Tape::gumbel_softmax(VarId logits, double tau, Rng* rng, bool noise_on,
                           bool hard) {
  if (tau <= 0.0) throw ConfigError("gumbel_softmax: tau must be > 0");
  const Tensor& L = values_[logits];
  const std::size_t n = L.rows(), d = L.cols();
  Tensor z = L;
  if (noise_on) {
    if (rng == nullptr) throw ContractError("gumbel_softmax: noise_on needs rng");
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += rng->gumbel();
  }
  if (tau != 1.0) {
    for (std::size_t i = 0; i < z.size(); ++i) z[i] /= tau;
  }
  Tensor soft(n, d);
  softmax_rows_values(z, soft);
  Tensor out = soft;
  if (hard) {
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t arg = 0;
      for (std::size_t j = 1; j < d; ++j) {
        if (soft.at(i, j) > soft.at(i, arg)) arg = j;
      }
      for (std::size_t j = 0; j < d; ++j) out.at(i, j) = (j == arg) ? 1.0 : 0.0;
    }
  }
  check_finite(out, "gumbel_softmax");
  const bool rg = requires_[logits];
  VarId o = push(std::move(out), rg, {});
  if (rg) {
    // Straight-through: the backward always uses the soft weights.
    nodes_[o].backward = [logits, o, soft = std::move(soft), tau](Tape& t) {
      softmax_rows_backward(soft, t.grads_[o], t.grad_buf(logits), 1.0 / tau);
    };
  }
  return o;
}

VarId Tape::batch_norm(VarId x, VarId gamma, VarId beta, BatchNormState& state,
                       Mode mode) {
  const Tensor& X = values_[x];
  const std::size_t n = X.rows(), d = X.cols();
  const Tensor& G = values_[gamma];
  const Tensor& B = values_[beta];
  if (G.rows() != 1 || G.cols() != d || B.rows() != 1 || B.cols() != d) {
    throw ShapeError("batch_norm: affine params must be 1x" + std::to_string(d));
  }
  if (state.running_mean.cols() != d) {
    throw ShapeError("batch_norm: state dimension mismatch");
  }

  Tensor xhat(n, d);
  Tensor invstd(1, d);
  if (mode == Mode::Train) {
    if (n < 2) throw NumericsError("batch_norm: train mode needs >= 2 rows");
    Tensor mean(1, d, 0.0), var(1, d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) mean[j] += X.at(i, j);
    }
    for (std::size_t j = 0; j < d; ++j) mean[j] /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        const double c = X.at(i, j) - mean[j];
        var[j] += c * c;
      }
    }
    for (std::size_t j = 0; j < d; ++j) var[j] /= static_cast<double>(n);
    for (std::size_t j = 0; j < d; ++j) {
      invstd[j] = 1.0 / std::sqrt(var[j] + state.eps);
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        xhat.at(i, j) = (X.at(i, j) - mean[j]) * invstd[j];
      }
    }
    const double m = state.momentum;
    for (std::size_t j = 0; j < d; ++j) {
      state.running_mean[j] = (1.0 - m) * state.running_mean[j] + m * mean[j];
      state.running_var[j] = (1.0 - m) * state.running_var[j] + m * var[j];
    }
  } else {
    for (std::size_t j = 0; j < d; ++j) {
      invstd[j] = 1.0 / std::sqrt(state.running_var[j] + state.eps);
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        xhat.at(i, j) = (X.at(i, j) - state.running_mean[j]) * invstd[j];
      }
    }
  }

  Tensor out(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      out.at(i, j) = G[j] * xhat.at(i, j) + B[j];
    }
  }
  check_finite(out, "batch_norm");
  const bool rg = requires_[x] || requires_[gamma] || requires_[beta];
  VarId o = push(std::move(out), rg, {});
  if (rg) {
    const bool train = mode == Mode::Train;
    nodes_[o].backward = [x, gamma, beta, o, n, d, train,
                          xhat = std::move(xhat),
                          invstd = std::move(invstd)](Tape& t) {
      const Tensor& g = t.grads_[o];
      const Tensor& G2 = t.values_[gamma];
      if (t.requires_[beta]) {
        Tensor& gb = t.grad_buf(beta);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < d; ++j) gb[j] += g.at(i, j);
        }
      }
      if (t.requires_[gamma]) {
        Tensor& gg = t.grad_buf(gamma);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < d; ++j) gg[j] += g.at(i, j) * xhat.at(i, j);
        }
      }
      if (t.requires_[x]) {
        Tensor& gx = t.grad_buf(x);
        if (train) {
          // Full Jacobian through the batch statistics.
          Tensor mean_g(1, d, 0.0), mean_gx(1, d, 0.0);
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
              mean_g[j] += g.at(i, j);
              mean_gx[j] += g.at(i, j) * xhat.at(i, j);
            }
          }
          for (std::size_t j = 0; j < d; ++j) {
            mean_g[j] /= static_cast<double>(n);
            mean_gx[j] /= static_cast<double>(n);
          }
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
              gx.at(i, j) += G2[j] * invstd[j] *
                             (g.at(i, j) - mean_g[j] - xhat.at(i, j) * mean_gx[j]);
            }
          }
        } else {
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
              gx.at(i, j) += g.at(i, j) * G2[j] * invstd[j];
            }
          }
        }
      }
    };
  }
  return o;
}

VarId Tape::dropout(VarId a, double rate, Mode mode, Rng* rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must be in [0,1)");
  if (mode == Mode::Eval || rate == 0.0) {
    // Exact identity; keeps the var graph uniform without consuming rng.
    return scale(a, 1.0);
  }
  if (rng == nullptr) throw ContractError("dropout: train mode needs rng");
  const Tensor& A = values_[a];
  const double keep = 1.0 - rate;
  const double inv_keep = 1.0 / keep;
  std::vector<char> mask(A.size());
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng->uniform() < keep ? 1 : 0;
    out[i] = mask[i] ? out[i] * inv_keep : 0.0;
  }
  check_finite(out, "dropout");
  const bool rg = requires_[a];
  VarId o = push(std::move(out), rg, {});
  if (rg) {
    nodes_[o].backward = [a, o, mask = std::move(mask), inv_keep](Tape& t) {
      const Tensor& g = t.grads_[o];
      Tensor& ga = t.grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (mask[i]) ga[i] += g[i] * inv_keep;
      }
    };
  }
  return o;
}

}  // namespace facetpath
