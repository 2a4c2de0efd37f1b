#include "fame/autodiff.hpp"

#include <cmath>
#include <string>

#include "fame/error.hpp"

namespace fame::ad {

namespace {

Tape& same_tape(std::span<const Var> vars) {
  Tape* t = nullptr;
  for (const auto& v : vars) {
    if (!v.valid()) throw Error(Errc::unsupported_op, "operation on an unrecorded value");
    if (t == nullptr) t = v.tape();
    if (v.tape() != t) throw Error(Errc::unsupported_op, "operands recorded on different tapes");
  }
  if (t == nullptr) throw Error(Errc::unsupported_op, "operation without operands");
  return *t;
}

void require_shape(bool ok, const char* what) {
  if (!ok) throw Error(Errc::dimension, what);
}

}  // namespace

const Matrix& Var::value() const {
  if (!valid()) throw Error(Errc::unsupported_op, "value of an unrecorded variable");
  return tape_->value(id_);
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), nullptr, -1, false});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::parameter(const ParamStore& params, std::size_t slot) {
  if (bound_params_ == nullptr) {
    bound_params_ = &params;
    param_nodes_.assign(params.size(), -1);
  } else if (bound_params_ != &params) {
    throw Error(Errc::unsupported_op, "a tape binds a single parameter store");
  }
  if (slot >= param_nodes_.size()) param_nodes_.resize(params.size(), -1);
  if (param_nodes_[slot] >= 0) return Var(this, param_nodes_[slot]);
  nodes_.push_back(Node{params.value(slot), Matrix(), nullptr, static_cast<long>(slot), true});
  const int id = static_cast<int>(nodes_.size() - 1);
  param_nodes_[slot] = id;
  return Var(this, id);
}

Var Tape::record(Matrix value, std::span<const Var> inputs, Backward backward) {
  bool needs = false;
  for (const auto& v : inputs) {
    if (v.tape() != this) throw Error(Errc::unsupported_op, "operand recorded on a different tape");
    needs = needs || requires_grad(v.id());
  }
  nodes_.push_back(Node{std::move(value), Matrix(), needs ? std::move(backward) : nullptr, -1, needs});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Matrix& Tape::grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(const Var& output, const Matrix& seed, GradStore& grads) {
  if (output.tape() != this) throw Error(Errc::unsupported_op, "backward from a value not recorded on this tape");
  if (seed.rows() != output.rows() || seed.cols() != output.cols()) {
    throw Error(Errc::dimension, "seed gradient shape does not match the output");
  }
  if (!requires_grad(output.id())) return;
  grad(output.id()) += seed;
  for (int id = output.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) continue;
    if (n.param_slot >= 0) {
      grads.grads[static_cast<std::size_t>(n.param_slot)] += n.grad;
    } else if (n.backward) {
      const Matrix g = std::move(n.grad);
      n.grad = Matrix();
      n.backward(*this, g, n.value);
      continue;
    }
    n.grad = Matrix();
  }
}

void Tape::backward(const Var& output, GradStore& grads) {
  backward(output, Matrix::Ones(1, 1), grads);
}

// ---- operations ---------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  const Var in[] = {a, b};
  Tape& t = same_tape(in);
  require_shape(a.cols() == b.rows(), "matmul: inner dimensions differ");
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() * b.value(), in, [ia, ib](Tape& tp, const Matrix& g, const Matrix&) {
    if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
    if (tp.requires_grad(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
  });
}

Var affine(const Var& w, const Var& x, const Var& bias) {
  if (!bias.valid()) return matmul(w, x);
  const Var in[] = {w, x, bias};
  Tape& t = same_tape(in);
  require_shape(w.cols() == x.rows(), "affine: weight/input dimensions differ");
  require_shape(bias.rows() == w.rows() && bias.cols() == 1, "affine: bias must be a column of output size");
  Matrix out = w.value() * x.value();
  out.colwise() += bias.value().col(0);
  const int iw = w.id(), ix = x.id(), ib = bias.id();
  return t.record(std::move(out), in, [iw, ix, ib](Tape& tp, const Matrix& g, const Matrix&) {
    if (tp.requires_grad(iw)) tp.accumulate(iw, g * tp.value(ix).transpose());
    if (tp.requires_grad(ix)) tp.accumulate(ix, tp.value(iw).transpose() * g);
    if (tp.requires_grad(ib)) tp.accumulate(ib, g.rowwise().sum());
  });
}

Var tanh(const Var& x) {
  const Var in[] = {x};
  Tape& t = same_tape(in);
  const int ix = x.id();
  // Eigen's double tanh is scalar; the exp form vectorizes and is accurate to a few ulps.
  const auto a = x.value().array();
  const Eigen::ArrayXXd e = (-2.0 * a.abs()).exp();
  Matrix y = ((1.0 - e) / (1.0 + e) * a.sign()).matrix();
  return t.record(std::move(y), in, [ix](Tape& tp, const Matrix& g, const Matrix& y) {
    tp.accumulate(ix, (g.array() * (1.0 - y.array().square())).matrix());
  });
}

Var mul_const(const Var& x, const Matrix& mask) {
  const Var in[] = {x};
  Tape& t = same_tape(in);
  require_shape(mask.rows() == x.rows() && mask.cols() == x.cols(), "mul_const: mask shape mismatch");
  const int ix = x.id();
  return t.record(x.value().cwiseProduct(mask), in, [ix, mask](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(ix, g.cwiseProduct(mask));
  });
}

Var add(const Var& a, const Var& b) {
  const Var in[] = {a, b};
  Tape& t = same_tape(in);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() + b.value(), in, [ia, ib](Tape& tp, const Matrix& g, const Matrix&) {
    if (tp.requires_grad(ia)) tp.accumulate(ia, g);
    if (tp.requires_grad(ib)) tp.accumulate(ib, g);
  });
}

Var sub(const Var& a, const Var& b) {
  const Var in[] = {a, b};
  Tape& t = same_tape(in);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() - b.value(), in, [ia, ib](Tape& tp, const Matrix& g, const Matrix&) {
    if (tp.requires_grad(ia)) tp.accumulate(ia, g);
    if (tp.requires_grad(ib)) tp.accumulate(ib, -g);
  });
}

Var scale(const Var& a, double s) {
  const Var in[] = {a};
  Tape& t = same_tape(in);
  const int ia = a.id();
  return t.record(a.value() * s, in, [ia, s](Tape& tp, const Matrix& g, const Matrix&) { tp.accumulate(ia, s * g); });
}

Var softmax_cols(const Var& x, double inv_temperature) {
  const Var in[] = {x};
  Tape& t = same_tape(in);
  Matrix out = x.value() * inv_temperature;
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    const double m = out.col(c).maxCoeff();
    out.col(c) = (out.col(c).array() - m).exp().matrix();
    out.col(c) /= out.col(c).sum();
  }
  const int ix = x.id();
  return t.record(std::move(out), in, [ix, inv_temperature](Tape& tp, const Matrix& g, const Matrix& y) {
    const Eigen::RowVectorXd dots = (y.cwiseProduct(g)).colwise().sum();
    Matrix d = g;
    d.rowwise() -= dots;
    tp.accumulate(ix, inv_temperature * y.cwiseProduct(d));
  });
}

Var mix(const Var& gates, std::span<const Var> fields) {
  std::vector<Var> in(fields.begin(), fields.end());
  in.push_back(gates);
  Tape& t = same_tape(in);
  const Eigen::Index k = gates.rows();
  require_shape(static_cast<Eigen::Index>(fields.size()) == k, "mix: one field per gate required");
  const Matrix& pi = gates.value();
  Matrix out = Matrix::Zero(fields[0].rows(), fields[0].cols());
  for (Eigen::Index e = 0; e < k; ++e) {
    const Matrix& f = fields[static_cast<std::size_t>(e)].value();
    require_shape(f.rows() == out.rows() && f.cols() == out.cols() && pi.cols() == f.cols(),
                  "mix: field shapes differ");
    out.noalias() += f * pi.row(e).asDiagonal();
  }
  std::vector<int> ids;
  for (const auto& f : fields) ids.push_back(f.id());
  const int ig = gates.id();
  return t.record(std::move(out), in, [ids, ig](Tape& tp, const Matrix& g, const Matrix&) {
    const Matrix& pi = tp.value(ig);
    for (std::size_t e = 0; e < ids.size(); ++e) {
      if (tp.requires_grad(ids[e])) {
        tp.accumulate(ids[e], g * pi.row(static_cast<Eigen::Index>(e)).asDiagonal());
      }
    }
    if (tp.requires_grad(ig)) {
      Matrix& gg = tp.grad(ig);
      for (std::size_t e = 0; e < ids.size(); ++e) {
        gg.row(static_cast<Eigen::Index>(e)) += (g.cwiseProduct(tp.value(ids[e]))).colwise().sum();
      }
    }
  });
}

Var cde_step(const Var& z, const Var& field, const Var& dx) {
  const Var in[] = {z, field, dx};
  Tape& t = same_tape(in);
  const Eigen::Index h = z.rows();
  const Eigen::Index n = z.cols();
  const Eigen::Index channels = dx.rows();
  require_shape(field.rows() == h * channels && field.cols() == n && dx.cols() == n,
                "cde_step: field must be (state * channels) x columns");
  Matrix out = z.value();
  const Matrix& f = field.value();
  const Matrix& d = dx.value();
  for (Eigen::Index c = 0; c < channels; ++c) {
    out.noalias() += f.middleRows(c * h, h) * d.row(c).asDiagonal();
  }
  const int iz = z.id(), iff = field.id(), id = dx.id();
  return t.record(std::move(out), in, [iz, iff, id, h, channels](Tape& tp, const Matrix& g, const Matrix&) {
    if (tp.requires_grad(iz)) tp.accumulate(iz, g);
    if (tp.requires_grad(iff)) {
      const Matrix& d = tp.value(id);
      Matrix& gf = tp.grad(iff);
      for (Eigen::Index c = 0; c < channels; ++c) gf.middleRows(c * h, h).noalias() += g * d.row(c).asDiagonal();
    }
    if (tp.requires_grad(id)) {
      const Matrix& f = tp.value(iff);
      Matrix& gd = tp.grad(id);
      for (Eigen::Index c = 0; c < channels; ++c) {
        gd.row(c) += (g.cwiseProduct(f.middleRows(c * h, h))).colwise().sum();
      }
    }
  });
}

Var hstack(std::span<const Var> parts) {
  Tape& t = same_tape(parts);
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    require_shape(p.rows() == rows, "hstack: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<int> ids;
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    ids.push_back(p.id());
    offsets.push_back(off);
    off += p.cols();
  }
  return t.record(std::move(out), parts, [ids, offsets](Tape& tp, const Matrix& g, const Matrix&) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (tp.requires_grad(ids[i])) {
        tp.accumulate(ids[i], g.middleCols(offsets[i], tp.value(ids[i]).cols()));
      }
    }
  });
}

Var vstack(std::span<const Var> parts) {
  Tape& t = same_tape(parts);
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    require_shape(p.cols() == cols, "vstack: column counts differ");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<int> ids;
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    ids.push_back(p.id());
    offsets.push_back(off);
    off += p.rows();
  }
  return t.record(std::move(out), parts, [ids, offsets](Tape& tp, const Matrix& g, const Matrix&) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (tp.requires_grad(ids[i])) {
        tp.accumulate(ids[i], g.middleRows(offsets[i], tp.value(ids[i]).rows()));
      }
    }
  });
}

Var col_block(const Var& x, Eigen::Index start, Eigen::Index count) {
  const Var in[] = {x};
  Tape& t = same_tape(in);
  require_shape(start >= 0 && count >= 0 && start + count <= x.cols(), "col_block: range out of bounds");
  const int ix = x.id();
  return t.record(x.value().middleCols(start, count), in, [ix, start, count](Tape& tp, const Matrix& g, const Matrix&) {
    tp.grad(ix).middleCols(start, count) += g;
  });
}

Var row_block(const Var& x, Eigen::Index start, Eigen::Index count) {
  const Var in[] = {x};
  Tape& t = same_tape(in);
  require_shape(start >= 0 && count >= 0 && start + count <= x.rows(), "row_block: range out of bounds");
  const int ix = x.id();
  return t.record(x.value().middleRows(start, count), in, [ix, start, count](Tape& tp, const Matrix& g, const Matrix&) {
    tp.grad(ix).middleRows(start, count) += g;
  });
}

Var gather_rows(const Var& x, std::vector<Eigen::Index> rows) {
  const Var in[] = {x};
  Tape& t = same_tape(in);
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require_shape(rows[i] >= 0 && rows[i] < x.rows(), "gather_rows: row out of bounds");
    out.row(static_cast<Eigen::Index>(i)) = x.value().row(rows[i]);
  }
  const int ix = x.id();
  return t.record(std::move(out), in, [ix, rows = std::move(rows)](Tape& tp, const Matrix& g, const Matrix&) {
    Matrix& gx = tp.grad(ix);
    for (std::size_t i = 0; i < rows.size(); ++i) gx.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

Var reshape(const Var& x, Eigen::Index rows, Eigen::Index cols) {
  const Var in[] = {x};
  Tape& t = same_tape(in);
  require_shape(rows * cols == x.value().size(), "reshape: element count changes");
  Matrix out = Eigen::Map<const Matrix>(x.value().data(), rows, cols);
  const int ix = x.id();
  const Eigen::Index r0 = x.rows(), c0 = x.cols();
  return t.record(std::move(out), in, [ix, r0, c0](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(ix, Eigen::Map<const Matrix>(g.data(), r0, c0));
  });
}

Var sum(const Var& x) {
  const Var in[] = {x};
  Tape& t = same_tape(in);
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  const int ix = x.id();
  return t.record(std::move(out), in, [ix](Tape& tp, const Matrix& g, const Matrix&) { tp.grad(ix).array() += g(0, 0); });
}

Var grouped_attention(const Var& q, const Var& k, const Var& v, const GroupLayout& layout, double scale,
                      const Vector& log_bias) {
  const Var in[] = {q, k, v};
  Tape& t = same_tape(in);
  const Eigen::Index n_cols = layout.count * layout.length;
  require_shape(q.cols() == n_cols && k.cols() == n_cols && v.cols() == n_cols,
                "grouped_attention: operands must cover every group column");
  require_shape(q.rows() == k.rows(), "grouped_attention: query/key widths differ");
  require_shape(log_bias.size() == 0 || log_bias.size() == layout.length,
                "grouped_attention: bias length must match group length");
  const Eigen::Index len = layout.length;
  const Matrix& Q = q.value();
  const Matrix& K = k.value();
  const Matrix& V = v.value();
  Matrix out(V.rows(), V.cols());
  std::vector<Matrix> probs(static_cast<std::size_t>(layout.count));
  for (Eigen::Index g = 0; g < layout.count; ++g) {
    const auto cols = Eigen::seqN(layout.start(g), len, layout.elem_stride);
    const Matrix qg = Q(Eigen::all, cols);
    const Matrix kg = K(Eigen::all, cols);
    Matrix s = scale * (qg.transpose() * kg);
    if (log_bias.size() > 0) s.rowwise() += log_bias.transpose();
    for (Eigen::Index a = 0; a < len; ++a) {
      const double m = s.row(a).maxCoeff();
      s.row(a) = (s.row(a).array() - m).exp().matrix();
      s.row(a) /= s.row(a).sum();
    }
    const Matrix vg = V(Eigen::all, cols);
    out(Eigen::all, cols) = vg * s.transpose();
    probs[static_cast<std::size_t>(g)] = std::move(s);
  }
  const int iq = q.id(), ik = k.id(), iv = v.id();
  return t.record(std::move(out), in,
                  [iq, ik, iv, layout, scale, probs = std::move(probs)](Tape& tp, const Matrix& g, const Matrix&) {
                    const Eigen::Index len = layout.length;
                    const bool gq = tp.requires_grad(iq), gk = tp.requires_grad(ik), gv = tp.requires_grad(iv);
                    for (Eigen::Index grp = 0; grp < layout.count; ++grp) {
                      const auto cols = Eigen::seqN(layout.start(grp), len, layout.elem_stride);
                      const Matrix& p = probs[static_cast<std::size_t>(grp)];
                      const Matrix go = g(Eigen::all, cols);
                      const Matrix vg = tp.value(iv)(Eigen::all, cols);
                      if (gv) tp.grad(iv)(Eigen::all, cols) += go * p;
                      if (!gq && !gk) continue;
                      Matrix dp = go.transpose() * vg;
                      const Eigen::VectorXd rowdot = (p.cwiseProduct(dp)).rowwise().sum();
                      dp.colwise() -= rowdot;
                      const Matrix ds = p.cwiseProduct(dp);
                      if (gq) {
                        const Matrix kg = tp.value(ik)(Eigen::all, cols);
                        tp.grad(iq)(Eigen::all, cols) += scale * (kg * ds.transpose());
                      }
                      if (gk) {
                        const Matrix qg = tp.value(iq)(Eigen::all, cols);
                        tp.grad(ik)(Eigen::all, cols) += scale * (qg * ds);
                      }
                    }
                  });
}

Var interp_gather(const Var& x, std::vector<InterpEntry> entries) {
  const Var in[] = {x};
  Tape& t = same_tape(in);
  const Matrix& X = x.value();
  Matrix out(1, static_cast<Eigen::Index>(entries.size()));
  for (std::size_t e = 0; e < entries.size(); ++e) {
    const auto& en = entries[e];
    require_shape(en.row < X.rows() && en.col0 < X.cols() && en.col1 < X.cols(),
                  "interp_gather: entry out of bounds");
    out(0, static_cast<Eigen::Index>(e)) = (1.0 - en.weight1) * X(en.row, en.col0) + en.weight1 * X(en.row, en.col1);
  }
  const int ix = x.id();
  return t.record(std::move(out), in, [ix, entries = std::move(entries)](Tape& tp, const Matrix& g, const Matrix&) {
    Matrix& gx = tp.grad(ix);
    for (std::size_t e = 0; e < entries.size(); ++e) {
      const auto& en = entries[e];
      const double ge = g(0, static_cast<Eigen::Index>(e));
      gx(en.row, en.col0) += (1.0 - en.weight1) * ge;
      gx(en.row, en.col1) += en.weight1 * ge;
    }
  });
}

Var weighted_sse(const Var& pred, const Vector& target, const Vector& weights) {
  const Var in[] = {pred};
  Tape& t = same_tape(in);
  require_shape(pred.rows() == 1 && pred.cols() == target.size() && target.size() == weights.size(),
                "weighted_sse: prediction/target length mismatch");
  const Eigen::RowVectorXd resid = pred.value().row(0) - target.transpose();
  Matrix out(1, 1);
  out(0, 0) = (resid.array().square() * weights.transpose().array()).sum();
  const int ip = pred.id();
  Eigen::RowVectorXd coeff = 2.0 * resid.cwiseProduct(weights.transpose());
  return t.record(std::move(out), in, [ip, coeff = std::move(coeff)](Tape& tp, const Matrix& g, const Matrix&) {
    tp.grad(ip).row(0) += g(0, 0) * coeff;
  });
}

}  // namespace fame::ad
