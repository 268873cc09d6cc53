#include "autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace spacap {

namespace {
constexpr double kLnEps = 1e-12;

std::size_t shape_size(const std::vector<std::size_t>& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}
}  // namespace

Tensor::Tensor(std::vector<std::size_t> s, double fill) : shape(std::move(s)) {
  v.assign(shape_size(shape), fill);
}

Tensor Tensor::scalar(double x) {
  Tensor t({1});
  t.v[0] = x;
  return t;
}

Tensor Tensor::row(std::vector<double> data) {
  Tensor t;
  t.shape = {1, data.size()};
  t.v = std::move(data);
  return t;
}

Tensor Tensor::matrix(std::size_t r, std::size_t c, std::vector<double> data) {
  require(data.size() == r * c, "Tensor::matrix: data size mismatch");
  Tensor t;
  t.shape = {r, c};
  t.v = std::move(data);
  return t;
}

bool Tensor::all_finite() const {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

Graph::Id Graph::emit(Tensor value, bool requires_grad, std::function<void(Graph&)> backprop) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size() - 1);
}

void Graph::accum(Id id, const std::vector<double>& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.v.empty()) n.grad = Tensor(n.value.shape);
  for (std::size_t i = 0; i < g.size(); ++i) n.grad.v[i] += g[i];
}

Graph::Id Graph::constant(Tensor t) { return emit(std::move(t), false, nullptr); }

Graph::Id Graph::leaf(Tensor t) { return emit(std::move(t), true, nullptr); }

Graph::Id Graph::param(ParamStore& ps, const std::string& name) {
  Id id = emit(ps.entry(name).value, true, nullptr);
  nodes_[id].sink_store = &ps;
  nodes_[id].sink_name = name;
  return id;
}

void Graph::backward(Id loss) {
  require(nodes_[loss].value.size() == 1, "backward: loss must be scalar");
  for (auto& n : nodes_) n.grad = Tensor{};
  nodes_[loss].grad = Tensor(nodes_[loss].value.shape);
  nodes_[loss].grad.v[0] = 1.0;
  for (Id id = loss; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad.v.empty()) continue;
    if (n.backprop) n.backprop(*this);
    if (n.sink_store) {
      Tensor& sink = n.sink_store->entry(n.sink_name).grad;
      for (std::size_t i = 0; i < n.grad.v.size(); ++i) sink.v[i] += n.grad.v[i];
    }
  }
}

Graph::Id Graph::add(Id a, Id b) {
  require(value(a).size() == value(b).size(), "add: size mismatch");
  Tensor out = value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += value(b).v[i];
  bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  Id id = emit(std::move(out), rg, nullptr);
  nodes_[id].backprop = [a, b, id](Graph& g) {
    g.accum(a, g.grad(id).v);
    g.accum(b, g.grad(id).v);
  };
  return id;
}

Graph::Id Graph::sub(Id a, Id b) {
  require(value(a).size() == value(b).size(), "sub: size mismatch");
  Tensor out = value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] -= value(b).v[i];
  bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  Id id = emit(std::move(out), rg, nullptr);
  nodes_[id].backprop = [a, b, id](Graph& g) {
    g.accum(a, g.grad(id).v);
    std::vector<double> neg = g.grad(id).v;
    for (double& x : neg) x = -x;
    g.accum(b, neg);
  };
  return id;
}

Graph::Id Graph::mul(Id a, Id b) {
  require(value(a).size() == value(b).size(), "mul: size mismatch");
  Tensor out = value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] *= value(b).v[i];
  bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  Id id = emit(std::move(out), rg, nullptr);
  nodes_[id].backprop = [a, b, id](Graph& g) {
    const auto& go = g.grad(id).v;
    std::vector<double> ga(go.size()), gb(go.size());
    for (std::size_t i = 0; i < go.size(); ++i) {
      ga[i] = go[i] * g.value(b).v[i];
      gb[i] = go[i] * g.value(a).v[i];
    }
    g.accum(a, ga);
    g.accum(b, gb);
  };
  return id;
}

Graph::Id Graph::scale(Id a, double s) {
  Tensor out = value(a);
  for (double& x : out.v) x *= s;
  Id id = emit(std::move(out), nodes_[a].requires_grad, nullptr);
  nodes_[id].backprop = [a, s, id](Graph& g) {
    std::vector<double> ga = g.grad(id).v;
    for (double& x : ga) x *= s;
    g.accum(a, ga);
  };
  return id;
}

Graph::Id Graph::add_rowvec(Id m, Id rowv) {
  const Tensor& x = value(m);
  const Tensor& r = value(rowv);
  require(r.size() == x.cols(), "add_rowvec: width mismatch");
  Tensor out = x;
  std::size_t R = x.rows(), C = x.cols();
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j) out.v[i * C + j] += r.v[j];
  bool rg = nodes_[m].requires_grad || nodes_[rowv].requires_grad;
  Id id = emit(std::move(out), rg, nullptr);
  nodes_[id].backprop = [m, rowv, R, C, id](Graph& g) {
    const auto& go = g.grad(id).v;
    g.accum(m, go);
    std::vector<double> gr(C, 0.0);
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t j = 0; j < C; ++j) gr[j] += go[i * C + j];
    g.accum(rowv, gr);
  };
  return id;
}

namespace {
// c(RxK) = a(RxM) * b(MxK) with optional transposes resolved by caller into
// plain row-major views via index lambdas.
void mm(const std::vector<double>& a, bool ta, std::size_t ar, std::size_t ac,
        const std::vector<double>& b, bool tb, std::size_t br, std::size_t bc,
        std::vector<double>& out) {
  // effective dims
  std::size_t R = ta ? ac : ar;
  std::size_t M = ta ? ar : ac;
  std::size_t K = tb ? br : bc;
  auto A = [&](std::size_t i, std::size_t k) { return ta ? a[k * ac + i] : a[i * ac + k]; };
  auto B = [&](std::size_t k, std::size_t j) { return tb ? b[j * bc + k] : b[k * bc + j]; };
  out.assign(R * K, 0.0);
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t k = 0; k < M; ++k) {
      double av = A(i, k);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < K; ++j) out[i * K + j] += av * B(k, j);
    }
}
}  // namespace

Graph::Id Graph::matmul(Id a, Id b, bool trans_a, bool trans_b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  std::size_t ar = A.rows(), ac = A.cols(), br = B.rows(), bc = B.cols();
  std::size_t inner_a = trans_a ? ar : ac;
  std::size_t inner_b = trans_b ? bc : br;
  require(inner_a == inner_b, "matmul: inner dimension mismatch");
  std::size_t R = trans_a ? ac : ar;
  std::size_t K = trans_b ? br : bc;
  Tensor out({R, K});
  mm(A.v, trans_a, ar, ac, B.v, trans_b, br, bc, out.v);
  bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  Id id = emit(std::move(out), rg, nullptr);
  nodes_[id].backprop = [a, b, trans_a, trans_b, ar, ac, br, bc, R, K, id](Graph& g) {
    const auto& go = g.grad(id).v;  // R x K
    const auto& Av = g.value(a).v;
    const auto& Bv = g.value(b).v;
    std::vector<double> ga, gb;
    // dA: no-trans case dA = dC * B^T ; with transposes, adjust.
    if (!trans_a) {
      // dA(ar x ac) = dC(R x K) * B_eff^T(K x M)
      mm(go, false, R, K, Bv, !trans_b, br, bc, ga);
    } else {
      // A used transposed: dA = (B_eff * dC^T)^T -> compute B_eff(M x K)*dC^T(K x R)
      mm(Bv, trans_b, br, bc, go, true, R, K, ga);
    }
    if (!trans_b) {
      // dB(br x bc) = A_eff^T(M x R) * dC(R x K)
      mm(Av, !trans_a, ar, ac, go, false, R, K, gb);
    } else {
      // B used transposed: dB = dC^T * A_eff
      mm(go, true, R, K, Av, trans_a, ar, ac, gb);
    }
    g.accum(a, ga);
    g.accum(b, gb);
  };
  return id;
}

Graph::Id Graph::relu(Id a) {
  Tensor out = value(a);
  for (double& x : out.v) x = x > 0 ? x : 0.0;
  Id id = emit(std::move(out), nodes_[a].requires_grad, nullptr);
  nodes_[id].backprop = [a, id](Graph& g) {
    const auto& go = g.grad(id).v;
    std::vector<double> ga(go.size());
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] = g.value(a).v[i] > 0 ? go[i] : 0.0;
    g.accum(a, ga);
  };
  return id;
}

Graph::Id Graph::softmax_masked(Id logits, const std::vector<std::uint8_t>& mask) {
  const Tensor& x = value(logits);
  std::size_t R = x.rows(), C = x.cols();
  require(mask.empty() || mask.size() == R * C, "softmax_masked: mask size mismatch");
  Tensor out = x;
  for (std::size_t i = 0; i < R; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < C; ++j)
      if (mask.empty() || mask[i * C + j]) mx = std::max(mx, x.v[i * C + j]);
    require(std::isfinite(mx), "softmax_masked: fully masked row");
    double z = 0;
    for (std::size_t j = 0; j < C; ++j) {
      if (mask.empty() || mask[i * C + j]) {
        out.v[i * C + j] = std::exp(x.v[i * C + j] - mx);
        z += out.v[i * C + j];
      } else {
        out.v[i * C + j] = 0.0;
      }
    }
    for (std::size_t j = 0; j < C; ++j) out.v[i * C + j] /= z;
  }
  Id id = emit(std::move(out), nodes_[logits].requires_grad, nullptr);
  nodes_[id].backprop = [logits, R, C, id](Graph& g) {
    const auto& go = g.grad(id).v;
    const auto& y = g.value(id).v;
    std::vector<double> ga(go.size(), 0.0);
    for (std::size_t i = 0; i < R; ++i) {
      double dot = 0;
      for (std::size_t j = 0; j < C; ++j) dot += go[i * C + j] * y[i * C + j];
      for (std::size_t j = 0; j < C; ++j)
        ga[i * C + j] = y[i * C + j] * (go[i * C + j] - dot);
    }
    g.accum(logits, ga);
  };
  return id;
}

Graph::Id Graph::layer_norm(Id xid, Id gamma, Id beta) {
  const Tensor& x = value(xid);
  std::size_t R = x.rows(), C = x.cols();
  require(value(gamma).size() == C && value(beta).size() == C, "layer_norm: affine size");
  const double eps = 1e-5;
  Tensor out = x;
  std::vector<double> means(R), istds(R);
  for (std::size_t i = 0; i < R; ++i) {
    double mean = 0;
    for (std::size_t j = 0; j < C; ++j) mean += x.v[i * C + j];
    mean /= C;
    double var = 0;
    for (std::size_t j = 0; j < C; ++j) {
      double d = x.v[i * C + j] - mean;
      var += d * d;
    }
    var /= C;
    double istd = 1.0 / std::sqrt(var + eps);
    means[i] = mean;
    istds[i] = istd;
    for (std::size_t j = 0; j < C; ++j)
      out.v[i * C + j] =
          (x.v[i * C + j] - mean) * istd * value(gamma).v[j] + value(beta).v[j];
  }
  bool rg = nodes_[xid].requires_grad || nodes_[gamma].requires_grad ||
            nodes_[beta].requires_grad;
  Id id = emit(std::move(out), rg, nullptr);
  nodes_[id].backprop = [xid, gamma, beta, R, C, means, istds, id](Graph& g) {
    const auto& go = g.grad(id).v;
    const auto& x = g.value(xid).v;
    const auto& gam = g.value(gamma).v;
    std::vector<double> gx(R * C, 0.0), gg(C, 0.0), gb(C, 0.0);
    for (std::size_t i = 0; i < R; ++i) {
      double sum_dy = 0, sum_dy_xhat = 0;
      std::vector<double> xhat(C), dy(C);
      for (std::size_t j = 0; j < C; ++j) {
        xhat[j] = (x[i * C + j] - means[i]) * istds[i];
        dy[j] = go[i * C + j] * gam[j];
        sum_dy += dy[j];
        sum_dy_xhat += dy[j] * xhat[j];
        gg[j] += go[i * C + j] * xhat[j];
        gb[j] += go[i * C + j];
      }
      for (std::size_t j = 0; j < C; ++j)
        gx[i * C + j] =
            istds[i] * (dy[j] - sum_dy / C - xhat[j] * sum_dy_xhat / C);
    }
    g.accum(xid, gx);
    g.accum(gamma, gg);
    g.accum(beta, gb);
  };
  return id;
}

Graph::Id Graph::batch_norm(Id xid, Id gamma, Id beta, BatchNormState& state, bool training) {
  const Tensor& x = value(xid);
  std::size_t R = x.rows(), C = x.cols();
  require(value(gamma).size() == C && value(beta).size() == C, "batch_norm: affine size");
  if (!state.initialized) {
    state.running_mean = Tensor({C});
    state.running_var = Tensor({C}, 1.0);
    state.initialized = true;
  }
  const double eps = 1e-5;
  std::vector<double> means(C), istds(C);
  if (training) {
    require(R >= 2, "batch_norm: training mode needs at least 2 rows");
    for (std::size_t j = 0; j < C; ++j) {
      double mean = 0;
      for (std::size_t i = 0; i < R; ++i) mean += x.v[i * C + j];
      mean /= R;
      double var = 0;
      for (std::size_t i = 0; i < R; ++i) {
        double d = x.v[i * C + j] - mean;
        var += d * d;
      }
      var /= R;
      means[j] = mean;
      istds[j] = 1.0 / std::sqrt(var + eps);
      state.running_mean.v[j] =
          (1 - state.momentum) * state.running_mean.v[j] + state.momentum * mean;
      state.running_var.v[j] =
          (1 - state.momentum) * state.running_var.v[j] + state.momentum * var;
    }
  } else {
    for (std::size_t j = 0; j < C; ++j) {
      means[j] = state.running_mean.v[j];
      istds[j] = 1.0 / std::sqrt(state.running_var.v[j] + eps);
    }
  }
  Tensor out = x;
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j)
      out.v[i * C + j] =
          (x.v[i * C + j] - means[j]) * istds[j] * value(gamma).v[j] + value(beta).v[j];
  bool rg = nodes_[xid].requires_grad || nodes_[gamma].requires_grad ||
            nodes_[beta].requires_grad;
  Id id = emit(std::move(out), rg, nullptr);
  nodes_[id].backprop = [xid, gamma, beta, R, C, means, istds, training, id](Graph& g) {
    const auto& go = g.grad(id).v;
    const auto& x = g.value(xid).v;
    const auto& gam = g.value(gamma).v;
    std::vector<double> gx(R * C, 0.0), gg(C, 0.0), gb(C, 0.0);
    for (std::size_t j = 0; j < C; ++j) {
      double sum_dy = 0, sum_dy_xhat = 0;
      for (std::size_t i = 0; i < R; ++i) {
        double xhat = (x[i * C + j] - means[j]) * istds[j];
        double dy = go[i * C + j] * gam[j];
        sum_dy += dy;
        sum_dy_xhat += dy * xhat;
        gg[j] += go[i * C + j] * xhat;
        gb[j] += go[i * C + j];
      }
      for (std::size_t i = 0; i < R; ++i) {
        double xhat = (x[i * C + j] - means[j]) * istds[j];
        double dy = go[i * C + j] * gam[j];
        if (training) {
          gx[i * C + j] =
              istds[j] * (dy - sum_dy / R - xhat * sum_dy_xhat / R);
        } else {
          gx[i * C + j] = istds[j] * dy;
        }
      }
    }
    g.accum(xid, gx);
    g.accum(gamma, gg);
    g.accum(beta, gb);
  };
  return id;
}

Graph::Id Graph::cross_entropy_logits(Id logits, const std::vector<int>& targets,
                                      const std::vector<std::uint8_t>& use_row) {
  const Tensor& x = value(logits);
  std::size_t R = x.rows(), C = x.cols();
  require(targets.size() == R, "cross_entropy_logits: target count mismatch");
  require(use_row.empty() || use_row.size() == R, "cross_entropy_logits: mask size");
  std::size_t used = 0;
  double total = 0;
  std::vector<std::vector<double>> probs(R);
  for (std::size_t i = 0; i < R; ++i) {
    if (!use_row.empty() && !use_row[i]) continue;
    require(targets[i] >= 0 && (std::size_t)targets[i] < C, "cross_entropy_logits: bad target");
    double mx = x.v[i * C];
    for (std::size_t j = 1; j < C; ++j) mx = std::max(mx, x.v[i * C + j]);
    double z = 0;
    probs[i].resize(C);
    for (std::size_t j = 0; j < C; ++j) {
      probs[i][j] = std::exp(x.v[i * C + j] - mx);
      z += probs[i][j];
    }
    for (std::size_t j = 0; j < C; ++j) probs[i][j] /= z;
    total += -std::log(std::max(probs[i][targets[i]], kLnEps));
    ++used;
  }
  require(used > 0, "cross_entropy_logits: no supervised rows");
  Tensor out = Tensor::scalar(total / used);
  Id id = emit(std::move(out), nodes_[logits].requires_grad, nullptr);
  nodes_[id].backprop = [logits, targets, probs, used, R, C, id](Graph& g) {
    double go = g.grad(id).v[0];
    std::vector<double> ga(R * C, 0.0);
    for (std::size_t i = 0; i < R; ++i) {
      if (probs[i].empty()) continue;
      for (std::size_t j = 0; j < C; ++j) {
        double p = probs[i][j];
        double ind = ((std::size_t)targets[i] == j) ? 1.0 : 0.0;
        ga[i * C + j] = go * (p - ind) / used;
      }
    }
    g.accum(logits, ga);
  };
  return id;
}

Graph::Id Graph::slice_cols(Id a, std::size_t start, std::size_t len) {
  const Tensor& x = value(a);
  std::size_t R = x.rows(), C = x.cols();
  require(start + len <= C, "slice_cols: out of range");
  Tensor out({R, len});
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < len; ++j) out.v[i * len + j] = x.v[i * C + start + j];
  Id id = emit(std::move(out), nodes_[a].requires_grad, nullptr);
  nodes_[id].backprop = [a, start, len, R, C, id](Graph& g) {
    const auto& go = g.grad(id).v;
    std::vector<double> ga(R * C, 0.0);
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t j = 0; j < len; ++j) ga[i * C + start + j] = go[i * len + j];
    g.accum(a, ga);
  };
  return id;
}

Graph::Id Graph::slice_rows(Id a, std::size_t start, std::size_t len) {
  const Tensor& x = value(a);
  std::size_t R = x.rows(), C = x.cols();
  require(start + len <= R, "slice_rows: out of range");
  Tensor out({len, C});
  std::copy(x.v.begin() + start * C, x.v.begin() + (start + len) * C, out.v.begin());
  Id id = emit(std::move(out), nodes_[a].requires_grad, nullptr);
  nodes_[id].backprop = [a, start, len, R, C, id](Graph& g) {
    const auto& go = g.grad(id).v;
    std::vector<double> ga(R * C, 0.0);
    std::copy(go.begin(), go.end(), ga.begin() + start * C);
    g.accum(a, ga);
  };
  return id;
}

Graph::Id Graph::concat_cols(const std::vector<Id>& parts) {
  require(!parts.empty(), "concat_cols: empty");
  std::size_t R = value(parts[0]).rows();
  std::size_t C = 0;
  bool rg = false;
  for (Id p : parts) {
    require(value(p).rows() == R, "concat_cols: row mismatch");
    C += value(p).cols();
    rg = rg || nodes_[p].requires_grad;
  }
  Tensor out({R, C});
  std::size_t off = 0;
  for (Id p : parts) {
    std::size_t pc = value(p).cols();
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t j = 0; j < pc; ++j) out.v[i * C + off + j] = value(p).v[i * pc + j];
    off += pc;
  }
  Id id = emit(std::move(out), rg, nullptr);
  nodes_[id].backprop = [parts, R, C, id](Graph& g) {
    const auto& go = g.grad(id).v;
    std::size_t off = 0;
    for (Id p : parts) {
      std::size_t pc = g.value(p).cols();
      std::vector<double> gp(R * pc);
      for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < pc; ++j) gp[i * pc + j] = go[i * C + off + j];
      g.accum(p, gp);
      off += pc;
    }
  };
  return id;
}

Graph::Id Graph::concat_rows(const std::vector<Id>& parts) {
  require(!parts.empty(), "concat_rows: empty");
  std::size_t C = value(parts[0]).cols();
  std::size_t R = 0;
  bool rg = false;
  for (Id p : parts) {
    require(value(p).cols() == C, "concat_rows: col mismatch");
    R += value(p).rows();
    rg = rg || nodes_[p].requires_grad;
  }
  Tensor out({R, C});
  std::size_t off = 0;
  for (Id p : parts) {
    const auto& pv = value(p).v;
    std::copy(pv.begin(), pv.end(), out.v.begin() + off);
    off += pv.size();
  }
  Id id = emit(std::move(out), rg, nullptr);
  nodes_[id].backprop = [parts, id](Graph& g) {
    const auto& go = g.grad(id).v;
    std::size_t off = 0;
    for (Id p : parts) {
      std::size_t n = g.value(p).size();
      std::vector<double> gp(go.begin() + off, go.begin() + off + n);
      g.accum(p, gp);
      off += n;
    }
  };
  return id;
}

Graph::Id Graph::gather_rows(Id a, std::vector<std::size_t> idx) {
  const Tensor& x = value(a);
  std::size_t R = x.rows(), C = x.cols();
  Tensor out({idx.size(), C});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] < R, "gather_rows: index out of range");
    std::copy(x.v.begin() + idx[i] * C, x.v.begin() + (idx[i] + 1) * C, out.v.begin() + i * C);
  }
  Id id = emit(std::move(out), nodes_[a].requires_grad, nullptr);
  nodes_[id].backprop = [a, idx = std::move(idx), R, C, id](Graph& g) {
    const auto& go = g.grad(id).v;
    std::vector<double> ga(R * C, 0.0);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < C; ++j) ga[idx[i] * C + j] += go[i * C + j];
    g.accum(a, ga);
  };
  return id;
}

Graph::Id Graph::pair_scale(Id w, Id val) {
  const Tensor& W = value(w);
  const Tensor& V = value(val);
  std::size_t M = W.rows();
  require(W.cols() == M && V.rows() == M, "pair_scale: shape mismatch");
  std::size_t d = V.cols();
  Tensor out({M * M, d});
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < M; ++j)
      for (std::size_t k = 0; k < d; ++k)
        out.v[(i * M + j) * d + k] = W.v[i * M + j] * V.v[j * d + k];
  bool rg = nodes_[w].requires_grad || nodes_[val].requires_grad;
  Id id = emit(std::move(out), rg, nullptr);
  nodes_[id].backprop = [w, val, M, d, id](Graph& g) {
    const auto& go = g.grad(id).v;
    const auto& W = g.value(w).v;
    const auto& V = g.value(val).v;
    std::vector<double> gw(M * M, 0.0), gv(M * d, 0.0);
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < M; ++j)
        for (std::size_t k = 0; k < d; ++k) {
          double gout = go[(i * M + j) * d + k];
          gw[i * M + j] += gout * V[j * d + k];
          gv[j * d + k] += gout * W[i * M + j];
        }
    g.accum(w, gw);
    g.accum(val, gv);
  };
  return id;
}

Graph::Id Graph::sum(Id a) {
  double s = 0;
  for (double x : value(a).v) s += x;
  Id id = emit(Tensor::scalar(s), nodes_[a].requires_grad, nullptr);
  nodes_[id].backprop = [a, id](Graph& g) {
    std::vector<double> ga(g.value(a).size(), g.grad(id).v[0]);
    g.accum(a, ga);
  };
  return id;
}

Graph::Id Graph::mean(Id a) {
  std::size_t n = value(a).size();
  double s = 0;
  for (double x : value(a).v) s += x;
  Id id = emit(Tensor::scalar(s / n), nodes_[a].requires_grad, nullptr);
  nodes_[id].backprop = [a, n, id](Graph& g) {
    std::vector<double> ga(n, g.grad(id).v[0] / n);
    g.accum(a, ga);
  };
  return id;
}

Graph::Id Graph::smooth_l1(Id a, Id b) {
  require(value(a).size() == value(b).size(), "smooth_l1: size mismatch");
  std::size_t n = value(a).size();
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double d = value(a).v[i] - value(b).v[i];
    double ad = std::abs(d);
    total += ad < 1.0 ? 0.5 * d * d : ad - 0.5;
  }
  bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  Id id = emit(Tensor::scalar(total / n), rg, nullptr);
  nodes_[id].backprop = [a, b, n, id](Graph& g) {
    double go = g.grad(id).v[0] / n;
    std::vector<double> ga(n), gb(n);
    for (std::size_t i = 0; i < n; ++i) {
      double d = g.value(a).v[i] - g.value(b).v[i];
      double grad = std::abs(d) < 1.0 ? d : (d > 0 ? 1.0 : -1.0);
      ga[i] = go * grad;
      gb[i] = -go * grad;
    }
    g.accum(a, ga);
    g.accum(b, gb);
  };
  return id;
}

Tensor& ParamStore::create(const std::string& name, std::vector<std::size_t> shape,
                           const std::function<double()>& init) {
  Entry e;
  e.value = Tensor(shape);
  for (double& x : e.value.v) x = init();
  e.grad = Tensor(shape);
  e.m1 = Tensor(shape);
  e.m2 = Tensor(shape);
  auto [it, inserted] = entries_.emplace(name, std::move(e));
  if (!inserted) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  return it->second.value;
}

ParamStore::Entry& ParamStore::entry(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::invalid_argument("ParamStore: unknown parameter " + name);
  return it->second;
}

const ParamStore::Entry& ParamStore::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::invalid_argument("ParamStore: unknown parameter " + name);
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& [name, e] : entries_) std::fill(e.grad.v.begin(), e.grad.v.end(), 0.0);
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  for (const auto& [name, e] : entries_) out.push_back(name);
  return out;
}

void ParamStore::adam_step(const AdamConfig& cfg) {
  ++step;
  double bc1 = 1.0 - std::pow(cfg.beta1, (double)step);
  double bc2 = 1.0 - std::pow(cfg.beta2, (double)step);
  for (auto& [name, e] : entries_) {
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      double g = e.grad.v[i];
      e.m1.v[i] = cfg.beta1 * e.m1.v[i] + (1 - cfg.beta1) * g;
      e.m2.v[i] = cfg.beta2 * e.m2.v[i] + (1 - cfg.beta2) * g * g;
      double mhat = e.m1.v[i] / bc1;
      double vhat = e.m2.v[i] / bc2;
      e.value.v[i] *= (1.0 - cfg.lr * cfg.weight_decay);
      e.value.v[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

double ParamStore::clip_grad_norm(double max_norm) {
  double sq = 0;
  for (const auto& [name, e] : entries_)
    for (double g : e.grad.v) sq += g * g;
  double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    double s = max_norm / norm;
    for (auto& [name, e] : entries_)
      for (double& g : e.grad.v) g *= s;
  }
  return norm;
}

double grad_check(ParamStore& ps, const std::function<double()>& loss_fn, double step,
                  std::size_t max_coords, std::uint64_t seed) {
  ps.zero_grad();
  loss_fn();
  std::map<std::string, Tensor> analytic;
  for (const auto& name : ps.names()) analytic[name] = ps.entry(name).grad;

  std::uint64_t state = seed * 0x9E3779B97F4A7C15ULL + 0xD1B54A32D192ED03ULL;
  auto next = [&state]() {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  };

  double worst = 0.0;
  for (const auto& name : ps.names()) {
    auto& e = ps.entry(name);
    std::size_t n = e.value.size();
    std::size_t count = std::min(max_coords, n);
    for (std::size_t c = 0; c < count; ++c) {
      std::size_t i = (count == n) ? c : next() % n;
      double orig = e.value.v[i];
      e.value.v[i] = orig + step;
      double lp = loss_fn();
      e.value.v[i] = orig - step;
      double lm = loss_fn();
      e.value.v[i] = orig;
      double fd = (lp - lm) / (2 * step);
      double an = analytic[name].v[i];
      double denom = std::max({1e-8, std::abs(fd), std::abs(an)});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  // restore accumulated analytic grads
  for (const auto& name : ps.names()) ps.entry(name).grad = analytic[name];
  return worst;
}

}  // namespace spacap
