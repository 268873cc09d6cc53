#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace spacap {

// Dense row-major 64-bit float array. The engine treats every tensor as a
// 2D matrix: all leading extents fold into rows, the last extent is cols.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> v;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, double fill = 0.0);
  static Tensor scalar(double x);
  static Tensor row(std::vector<double> data);
  static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> data);

  std::size_t size() const { return v.size(); }
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }
  std::size_t rows() const { return shape.empty() ? 1 : size() / cols(); }
  double& at(std::size_t r, std::size_t c) { return v[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return v[r * cols() + c]; }
  bool all_finite() const;
};

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  bool initialized = false;
};

class ParamStore;

// Reverse-mode tape. Ids are creation-ordered, which is a valid topological
// order for backward traversal.
class Graph {
 public:
  using Id = std::int32_t;

  Id constant(Tensor t);
  Id leaf(Tensor t);
  // Leaf bound to a named parameter: value copied in, gradient accumulated
  // back into the store on backward().
  Id param(ParamStore& ps, const std::string& name);

  const Tensor& value(Id id) const { return nodes_[id].value; }
  const Tensor& grad(Id id) const { return nodes_[id].grad; }

  // loss must be scalar; seeds d(loss)/d(loss)=1 and sweeps the tape.
  void backward(Id loss);

  Id add(Id a, Id b);
  Id sub(Id a, Id b);
  Id mul(Id a, Id b);  // elementwise
  Id scale(Id a, double s);
  Id add_rowvec(Id m, Id row);  // bias broadcast over rows
  Id matmul(Id a, Id b, bool trans_a = false, bool trans_b = false);
  Id relu(Id a);
  // mask: rows x cols bytes, nonzero = attend. Empty mask = no masking.
  // Throws if any row is fully masked.
  Id softmax_masked(Id logits, const std::vector<std::uint8_t>& mask);
  Id layer_norm(Id x, Id gamma, Id beta);
  Id batch_norm(Id x, Id gamma, Id beta, BatchNormState& state, bool training);
  // Mean negative log-softmax over rows with nonzero use_row (empty = all).
  // Throws if no row is used.
  Id cross_entropy_logits(Id logits, const std::vector<int>& targets,
                          const std::vector<std::uint8_t>& use_row = {});
  Id slice_cols(Id a, std::size_t start, std::size_t len);
  Id slice_rows(Id a, std::size_t start, std::size_t len);
  Id concat_cols(const std::vector<Id>& parts);
  Id concat_rows(const std::vector<Id>& parts);
  Id gather_rows(Id a, std::vector<std::size_t> idx);
  // w: MxM weights, val: Mxd. Output (M*M)xd, row i*M+j = w[i][j] * val[j].
  Id pair_scale(Id w, Id val);
  Id sum(Id a);
  Id mean(Id a);
  // Mean elementwise smooth-L1 (Huber, delta=1) between a and b.
  Id smooth_l1(Id a, Id b);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::function<void(Graph&)> backprop;  // accumulates into parents
    ParamStore* sink_store = nullptr;
    std::string sink_name;
  };
  std::vector<Node> nodes_;

  Id emit(Tensor value, bool requires_grad, std::function<void(Graph&)> backprop);
  void accum(Id id, const std::vector<double>& g);
  Node& node(Id id) { return nodes_[id]; }
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
};

// Named parameters with gradient and ADAM moment buffers.
class ParamStore {
 public:
  struct Entry {
    Tensor value;
    Tensor grad;
    Tensor m1;
    Tensor m2;
  };

  Tensor& create(const std::string& name, std::vector<std::size_t> shape,
                 const std::function<double()>& init);
  bool has(const std::string& name) const { return entries_.count(name) != 0; }
  Entry& entry(const std::string& name);
  const Entry& entry(const std::string& name) const;
  void zero_grad();
  std::vector<std::string> names() const;
  std::map<std::string, Entry>& all() { return entries_; }
  const std::map<std::string, Entry>& all() const { return entries_; }

  std::int64_t step = 0;

  // One decoupled-weight-decay ADAM step over every parameter from the
  // accumulated gradients; increments step.
  void adam_step(const AdamConfig& cfg);

  // Scales all gradients down so their global L2 norm is at most max_norm.
  // Returns the pre-clip norm. No-op when max_norm <= 0.
  double clip_grad_norm(double max_norm);

 private:
  std::map<std::string, Entry> entries_;
};

// Central finite differences against the analytic gradients produced by
// loss_fn (which must build a graph over ps, call backward, and return the
// loss value; gradients are read from ps after the call). Samples up to
// max_coords coordinates per parameter; returns the worst relative error.
double grad_check(ParamStore& ps, const std::function<double()>& loss_fn, double step = 1e-5,
                  std::size_t max_coords = 4, std::uint64_t seed = 0);

}  // namespace spacap
