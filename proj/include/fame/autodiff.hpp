#pragma once

#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "fame/params.hpp"

// Reverse-mode differentiation over dense matrices. A Tape records every
// operation of a forward pass; Tape::backward replays them in reverse and
// deposits parameter gradients into a GradStore. Operations are coarse
// (affine maps, attention blocks, Stieltjes steps) so a full model pass
// records a few thousand nodes.
namespace fame::ad {

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape* tape() const noexcept { return tape_; }
  int id() const noexcept { return id_; }
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& out_grad, const Matrix& out_value)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// Leaf bound to a parameter slot; repeated calls return the same node.
  Var parameter(const ParamStore& params, std::size_t slot);
  Var parameter(const ParamStore& params, std::string_view name) {
    return parameter(params, params.slot(name));
  }

  /// Appends an operation node. `backward` is dropped when no input needs a gradient.
  Var record(Matrix value, std::span<const Var> inputs, Backward backward);

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  bool requires_grad(const Var& v) const { return requires_grad(v.id()); }
  /// Gradient accumulator of a node, zero-initialised on first use.
  Matrix& grad(int id);
  Matrix& grad(const Var& v) { return grad(v.id()); }
  /// grad(id) += e, assigning instead on first use so the zero fill is skipped.
  template <typename Expr>
  void accumulate(int id, const Expr& e) {
    Matrix& g = nodes_[static_cast<std::size_t>(id)].grad;
    if (g.size() == 0) {
      g.noalias() = e;
    } else {
      g.noalias() += e;
    }
  }

  /// Propagates `seed` (shaped like output) back through the tape, adding
  /// parameter gradients into `grads`.
  void backward(const Var& output, const Matrix& seed, GradStore& grads);
  /// Scalar output with unit seed.
  void backward(const Var& output, GradStore& grads);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    long param_slot = -1;
    bool requires_grad = false;
  };
  std::deque<Node> nodes_;
  std::vector<int> param_nodes_;  // slot -> node id, -1 when unbound
  const ParamStore* bound_params_ = nullptr;
};

// ---- operations ---------------------------------------------------------

Var matmul(const Var& a, const Var& b);
/// W x + b (bias broadcast over columns); `bias` may be an invalid Var.
Var affine(const Var& w, const Var& x, const Var& bias);
Var tanh(const Var& x);
/// Elementwise product with a constant mask (dropout).
Var mul_const(const Var& x, const Matrix& mask);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// Column-wise softmax of x * inv_temperature, stabilised by the column max.
Var softmax_cols(const Var& x, double inv_temperature = 1.0);
/// Sum_k gates(k, col) * fields[k](:, col).
Var mix(const Var& gates, std::span<const Var> fields);
/// Stieltjes step z + sum_c F[c*h:(c+1)*h, :] .* dX(c, :), h = z.rows().
Var cde_step(const Var& z, const Var& field, const Var& dx);
Var hstack(std::span<const Var> parts);
Var vstack(std::span<const Var> parts);
Var col_block(const Var& x, Eigen::Index start, Eigen::Index count);
Var row_block(const Var& x, Eigen::Index start, Eigen::Index count);
/// Rows of x in the given order (repeats allowed).
Var gather_rows(const Var& x, std::vector<Eigen::Index> rows);
/// Column-major reinterpretation to rows x cols.
Var reshape(const Var& x, Eigen::Index rows, Eigen::Index cols);
Var sum(const Var& x);

/// Columns of the attention operands are partitioned into `count` groups of
/// `length` columns: element i of group g sits at column
/// g * group_step + i * elem_stride.
struct GroupLayout {
  Eigen::Index count = 0;
  Eigen::Index length = 0;
  Eigen::Index group_step = 0;
  Eigen::Index elem_stride = 1;

  Eigen::Index start(Eigen::Index g) const { return g * group_step; }
};

/// Softmax attention inside every group: out_a = sum_b P_ab v_b with
/// P_ab = softmax_b(scale * <q_a, k_b> + log_bias_b). `log_bias` has
/// `length` entries or is empty.
Var grouped_attention(const Var& q, const Var& k, const Var& v, const GroupLayout& layout, double scale,
                      const Vector& log_bias = Vector());

struct InterpEntry {
  Eigen::Index row;
  Eigen::Index col0;
  Eigen::Index col1;
  double weight1;  // (1 - weight1) * x(row, col0) + weight1 * x(row, col1)
};
/// 1 x entries.size() row of linear interpolations between columns.
Var interp_gather(const Var& x, std::vector<InterpEntry> entries);

/// sum_e weights_e (pred_e - target_e)^2 for 1 x E rows; returns 1 x 1.
Var weighted_sse(const Var& pred, const Vector& target, const Vector& weights);

}  // namespace fame::ad
