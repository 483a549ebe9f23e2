#include "gce/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "gce/error.hpp"

namespace gce {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kConstant: return "constant";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAddBias: return "add_bias";
    case OpKind::kScatterAdd: return "scatter_add";
    case OpKind::kGatherRows: return "gather_rows";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kDiv: return "div";
    case OpKind::kScale: return "scale";
    case OpKind::kRelu: return "relu";
    case OpKind::kTanh: return "tanh";
    case OpKind::kMulRows: return "mul_rows";
    case OpKind::kConcatCols: return "concat_cols";
    case OpKind::kSum: return "sum";
    case OpKind::kRowNorm: return "row_norm";
    case OpKind::kL2Norm: return "l2_norm";
    case OpKind::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
  }
  return "unknown";
}

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("value() on an unbound Var");
  return tape_->value(*this);
}

bool Gradients::has(Var v) const noexcept {
  return v.id() < grads_.size() && grads_[v.id()].has_value();
}

const Tensor& Gradients::operator[](Var v) const {
  if (!has(v)) throw ContractError("no gradient recorded for tape node " + std::to_string(v.id()));
  return *grads_[v.id()];
}

// ---- Tape -------------------------------------------------------------------

const Tensor& Tape::BackwardContext::output() const { return tape_->nodes_[node_].value; }

const Tensor& Tape::BackwardContext::input(std::size_t k) const {
  return tape_->nodes_[tape_->nodes_[node_].inputs[k]].value;
}

bool Tape::BackwardContext::wants(std::size_t k) const {
  return tape_->nodes_[tape_->nodes_[node_].inputs[k]].needs_grad;
}

Tensor& Tape::BackwardContext::grad_input(std::size_t k) {
  const std::size_t id = tape_->nodes_[node_].inputs[k];
  auto& slot = (*grads_)[id];
  if (!slot) slot.emplace(tape_->nodes_[id].value.shape());
  return *slot;
}

void Tape::check_owner(Var v) const {
  if (&v.tape() != this) throw ContractError("Var belongs to a different tape");
  if (v.id() >= nodes_.size()) throw ContractError("Var id out of range");
}

Var Tape::leaf(Tensor value) {
  const bool tracked = value.requires_grad();
  nodes_.push_back(Node{OpKind::kLeaf, {}, std::move(value), tracked, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  value.set_requires_grad(false);
  nodes_.push_back(Node{OpKind::kConstant, {}, std::move(value), false, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(OpKind kind, std::initializer_list<Var> inputs, Tensor value,
                 BackwardFn backward) {
  return record(kind, std::span<const Var>(inputs.begin(), inputs.size()), std::move(value),
                std::move(backward));
}

Var Tape::record(OpKind kind, std::span<const Var> inputs, Tensor value, BackwardFn backward) {
  if (consumed_) throw ContractError("recording on a tape that was already swept");
  Node node{kind, {}, std::move(value), false, std::move(backward)};
  node.inputs.reserve(inputs.size());
  for (Var v : inputs) {
    check_owner(v);
    node.inputs.push_back(v.id());
    node.needs_grad = node.needs_grad || nodes_[v.id()].needs_grad;
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(Var loss) {
  check_owner(loss);
  if (consumed_) throw ContractError("backward called twice on the same tape");
  if (value(loss).size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_to_string(value(loss).shape()));
  }
  consumed_ = true;

  Gradients out;
  out.grads_.resize(nodes_.size());
  out.grads_[loss.id()] = Tensor(value(loss).shape(), 1.0);

  BackwardContext ctx;
  ctx.tape_ = this;
  ctx.grads_ = &out.grads_;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.needs_grad || !node.backward || !out.grads_[id]) continue;
    ctx.node_ = id;
    ctx.grad_out_ = &*out.grads_[id];
    node.backward(ctx);
  }
  // Only leaves that asked for gradients are reported; intermediate buffers
  // are kept too since callers occasionally inspect them in tests.
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    if (!nodes_[id].needs_grad) out.grads_[id].reset();
  }
  return out;
}

// ---- helpers ----------------------------------------------------------------

namespace {

enum class Broadcast { kNone, kLeftScalar, kRightScalar };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (b.size() == 1) return Broadcast::kRightScalar;
  if (a.size() == 1) return Broadcast::kLeftScalar;
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_to_string(a.shape()) +
                       " and " + shape_to_string(b.shape()));
}

template <typename F>
Tensor binary_map(const Tensor& a, const Tensor& b, Broadcast bc, F f) {
  if (bc == Broadcast::kNone) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  if (bc == Broadcast::kRightScalar) {
    const double s = b[0];
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], s);
    return out;
  }
  const double s = a[0];
  Tensor out(b.shape());
  for (std::size_t i = 0; i < b.size(); ++i) out[i] = f(s, b[i]);
  return out;
}

// Accumulates d(out)/d(operand) * grad into the operand's gradient, reducing
// when the operand was broadcast.
template <typename F>
void accumulate_binary(Tape::BackwardContext& ctx, std::size_t k, Broadcast bc, F local) {
  if (!ctx.wants(k)) return;
  const Tensor& g = ctx.grad_output();
  Tensor& dst = ctx.grad_input(k);
  const bool reduced = (k == 0 && bc == Broadcast::kLeftScalar) ||
                       (k == 1 && bc == Broadcast::kRightScalar);
  if (reduced) {
    double acc = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * local(i);
    dst[0] += acc;
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * local(i);
  }
}

double operand_at(const Tensor& t, std::size_t i) { return t.size() == 1 ? t[0] : t[i]; }

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_to_string(t.shape()));
  }
}

}  // namespace

// ---- operations -------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tensor out = kernels::matmul(a.value(), b.value());
  return a.tape().record(OpKind::kMatMul, {a, b}, std::move(out), [](Tape::BackwardContext& ctx) {
    const Tensor& g = ctx.grad_output();
    if (ctx.wants(0)) kernels::add_inplace(ctx.grad_input(0), kernels::matmul_nt(g, ctx.input(1)));
    if (ctx.wants(1)) kernels::add_inplace(ctx.grad_input(1), kernels::matmul_tn(ctx.input(0), g));
  });
}

Var add(Var a, Var b) {
  const Broadcast bc = broadcast_kind(a.value(), b.value(), "add");
  Tensor out = binary_map(a.value(), b.value(), bc, [](double x, double y) { return x + y; });
  return a.tape().record(OpKind::kAdd, {a, b}, std::move(out), [bc](Tape::BackwardContext& ctx) {
    accumulate_binary(ctx, 0, bc, [](std::size_t) { return 1.0; });
    accumulate_binary(ctx, 1, bc, [](std::size_t) { return 1.0; });
  });
}

Var sub(Var a, Var b) {
  const Broadcast bc = broadcast_kind(a.value(), b.value(), "sub");
  Tensor out = binary_map(a.value(), b.value(), bc, [](double x, double y) { return x - y; });
  return a.tape().record(OpKind::kSub, {a, b}, std::move(out), [bc](Tape::BackwardContext& ctx) {
    accumulate_binary(ctx, 0, bc, [](std::size_t) { return 1.0; });
    accumulate_binary(ctx, 1, bc, [](std::size_t) { return -1.0; });
  });
}

Var mul(Var a, Var b) {
  const Broadcast bc = broadcast_kind(a.value(), b.value(), "mul");
  Tensor out = binary_map(a.value(), b.value(), bc, [](double x, double y) { return x * y; });
  return a.tape().record(OpKind::kMul, {a, b}, std::move(out), [bc](Tape::BackwardContext& ctx) {
    const Tensor& x = ctx.input(0);
    const Tensor& y = ctx.input(1);
    accumulate_binary(ctx, 0, bc, [&](std::size_t i) { return operand_at(y, i); });
    accumulate_binary(ctx, 1, bc, [&](std::size_t i) { return operand_at(x, i); });
  });
}

Var div(Var a, Var b) {
  const Broadcast bc = broadcast_kind(a.value(), b.value(), "div");
  Tensor out = binary_map(a.value(), b.value(), bc, [](double x, double y) { return x / y; });
  return a.tape().record(OpKind::kDiv, {a, b}, std::move(out), [bc](Tape::BackwardContext& ctx) {
    const Tensor& x = ctx.input(0);
    const Tensor& y = ctx.input(1);
    accumulate_binary(ctx, 0, bc, [&](std::size_t i) { return 1.0 / operand_at(y, i); });
    accumulate_binary(ctx, 1, bc, [&](std::size_t i) {
      const double yi = operand_at(y, i);
      return -operand_at(x, i) / (yi * yi);
    });
  });
}

Var scale(Var a, double factor) {
  Tensor out(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * factor;
  return a.tape().record(OpKind::kScale, {a}, std::move(out), [factor](Tape::BackwardContext& ctx) {
    if (!ctx.wants(0)) return;
    const Tensor& g = ctx.grad_output();
    Tensor& d = ctx.grad_input(0);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * factor;
  });
}

Var relu(Var a) {
  Tensor out(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] > 0.0 ? a.value()[i] : 0.0;
  return a.tape().record(OpKind::kRelu, {a}, std::move(out), [](Tape::BackwardContext& ctx) {
    if (!ctx.wants(0)) return;
    const Tensor& x = ctx.input(0);
    const Tensor& g = ctx.grad_output();
    Tensor& d = ctx.grad_input(0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0) d[i] += g[i];
    }
  });
}

Var tanh(Var a) {
  Tensor out(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.value()[i]);
  return a.tape().record(OpKind::kTanh, {a}, std::move(out), [](Tape::BackwardContext& ctx) {
    if (!ctx.wants(0)) return;
    const Tensor& y = ctx.output();
    const Tensor& g = ctx.grad_output();
    Tensor& d = ctx.grad_input(0);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var add_bias(Var x, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  require_matrix(xv, "add_bias");
  if (bv.size() != xv.cols()) {
    throw DimensionError("add_bias: bias " + shape_to_string(bv.shape()) + " for input " +
                         shape_to_string(xv.shape()));
  }
  Tensor out = xv;
  const std::size_t n = xv.rows(), h = xv.cols();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < h; ++c) out(r, c) += bv[c];
  }
  return x.tape().record(OpKind::kAddBias, {x, bias}, std::move(out), [](Tape::BackwardContext& ctx) {
    const Tensor& g = ctx.grad_output();
    if (ctx.wants(0)) kernels::add_inplace(ctx.grad_input(0), g);
    if (ctx.wants(1)) {
      Tensor& d = ctx.grad_input(1);
      const std::size_t n = g.rows(), h = g.cols();
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < h; ++c) d[c] += g(r, c);
      }
    }
  });
}

Var mul_rows(Var x, Var gate) {
  const Tensor& xv = x.value();
  const Tensor& gv = gate.value();
  require_matrix(xv, "mul_rows");
  if (gv.size() != xv.rows()) {
    throw DimensionError("mul_rows: gate " + shape_to_string(gv.shape()) + " for input " +
                         shape_to_string(xv.shape()));
  }
  Tensor out = xv;
  const std::size_t n = xv.rows(), h = xv.cols();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < h; ++c) out(r, c) *= gv[r];
  }
  return x.tape().record(OpKind::kMulRows, {x, gate}, std::move(out), [](Tape::BackwardContext& ctx) {
    const Tensor& g = ctx.grad_output();
    const Tensor& xv = ctx.input(0);
    const Tensor& gv = ctx.input(1);
    const std::size_t n = g.rows(), h = g.cols();
    if (ctx.wants(0)) {
      Tensor& d = ctx.grad_input(0);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < h; ++c) d(r, c) += g(r, c) * gv[r];
      }
    }
    if (ctx.wants(1)) {
      Tensor& d = ctx.grad_input(1);
      for (std::size_t r = 0; r < n; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < h; ++c) acc += g(r, c) * xv(r, c);
        d[r] += acc;
      }
    }
  });
}

Var scatter_add(Var src, std::span<const std::size_t> index, std::size_t out_size) {
  const Tensor& sv = src.value();
  require_matrix(sv, "scatter_add");
  if (sv.rows() != index.size()) {
    throw DimensionError("scatter_add: " + std::to_string(sv.rows()) + " source rows but " +
                         std::to_string(index.size()) + " indices");
  }
  const std::size_t d = sv.cols();
  Tensor out = Tensor::zeros(out_size, d);
  for (std::size_t e = 0; e < index.size(); ++e) {
    if (index[e] >= out_size) {
      throw BoundsError("scatter_add: index " + std::to_string(index[e]) + " at position " +
                            std::to_string(e) + " is outside [0, " + std::to_string(out_size) + ")",
                        e);
    }
    auto dst = out.row(index[e]);
    auto s = sv.row(e);
    for (std::size_t c = 0; c < d; ++c) dst[c] += s[c];
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(index.begin(), index.end());
  return src.tape().record(OpKind::kScatterAdd, {src}, std::move(out), [idx](Tape::BackwardContext& ctx) {
    if (!ctx.wants(0)) return;
    const Tensor& g = ctx.grad_output();
    Tensor& dsrc = ctx.grad_input(0);
    const std::size_t d = g.cols();
    for (std::size_t e = 0; e < idx->size(); ++e) {
      auto gr = g.row((*idx)[e]);
      auto dr = dsrc.row(e);
      for (std::size_t c = 0; c < d; ++c) dr[c] += gr[c];
    }
  });
}

Var gather_rows(Var src, std::span<const std::size_t> index) {
  const Tensor& sv = src.value();
  require_matrix(sv, "gather_rows");
  const std::size_t d = sv.cols();
  Tensor out = Tensor::zeros(index.size(), d);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= sv.rows()) {
      throw BoundsError("gather_rows: index " + std::to_string(index[r]) + " at position " +
                            std::to_string(r) + " is outside [0, " + std::to_string(sv.rows()) + ")",
                        r);
    }
    std::copy_n(sv.row(index[r]).begin(), d, out.row(r).begin());
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(index.begin(), index.end());
  return src.tape().record(OpKind::kGatherRows, {src}, std::move(out), [idx](Tape::BackwardContext& ctx) {
    if (!ctx.wants(0)) return;
    const Tensor& g = ctx.grad_output();
    Tensor& dsrc = ctx.grad_input(0);
    const std::size_t d = g.cols();
    for (std::size_t r = 0; r < idx->size(); ++r) {
      auto gr = g.row(r);
      auto dr = dsrc.row((*idx)[r]);
      for (std::size_t c = 0; c < d; ++c) dr[c] += gr[c];
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no operands");
  const std::size_t n = parts[0].value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (Var p : parts) {
    const Tensor& v = p.value();
    require_matrix(v, "concat_cols");
    if (v.rows() != n) {
      throw DimensionError("concat_cols: row counts differ, " + shape_to_string(parts[0].shape()) +
                           " vs " + shape_to_string(v.shape()));
    }
    widths.push_back(v.cols());
    total += v.cols();
  }
  Tensor out = Tensor::zeros(n, total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t r = 0; r < n; ++r) {
      std::copy_n(v.row(r).begin(), widths[k], out.row(r).begin() + offset);
    }
    offset += widths[k];
  }
  return parts[0].tape().record(
      OpKind::kConcatCols, parts, std::move(out), [widths](Tape::BackwardContext& ctx) {
        const Tensor& g = ctx.grad_output();
        const std::size_t n = g.rows();
        std::size_t offset = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
          if (ctx.wants(k)) {
            Tensor& d = ctx.grad_input(k);
            for (std::size_t r = 0; r < n; ++r) {
              auto gr = g.row(r);
              auto dr = d.row(r);
              for (std::size_t c = 0; c < widths[k]; ++c) dr[c] += gr[offset + c];
            }
          }
          offset += widths[k];
        }
      });
}

Var sum(Var a) {
  double acc = 0.0;
  for (double v : a.value().data()) acc += v;
  return a.tape().record(OpKind::kSum, {a}, Tensor::scalar(acc), [](Tape::BackwardContext& ctx) {
    if (!ctx.wants(0)) return;
    const double g = ctx.grad_output()[0];
    Tensor& d = ctx.grad_input(0);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ContractError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var row_norm(Var a, double smoothing) {
  const Tensor& av = a.value();
  require_matrix(av, "row_norm");
  const std::size_t n = av.rows(), h = av.cols();
  Tensor out = Tensor::zeros(n, 1);
  for (std::size_t r = 0; r < n; ++r) {
    double acc = smoothing;
    for (std::size_t c = 0; c < h; ++c) acc += av(r, c) * av(r, c);
    out[r] = std::sqrt(acc);
  }
  return a.tape().record(OpKind::kRowNorm, {a}, std::move(out), [](Tape::BackwardContext& ctx) {
    if (!ctx.wants(0)) return;
    const Tensor& av = ctx.input(0);
    const Tensor& y = ctx.output();
    const Tensor& g = ctx.grad_output();
    Tensor& d = ctx.grad_input(0);
    const std::size_t n = av.rows(), h = av.cols();
    for (std::size_t r = 0; r < n; ++r) {
      if (y[r] == 0.0) continue;
      const double f = g[r] / y[r];
      for (std::size_t c = 0; c < h; ++c) d(r, c) += f * av(r, c);
    }
  });
}

Var l2_norm(Var a) {
  double acc = 0.0;
  for (double v : a.value().data()) acc += v * v;
  return a.tape().record(OpKind::kL2Norm, {a}, Tensor::scalar(std::sqrt(acc)),
                         [](Tape::BackwardContext& ctx) {
                           if (!ctx.wants(0)) return;
                           const double y = ctx.output()[0];
                           if (y == 0.0) return;
                           const double f = ctx.grad_output()[0] / y;
                           const Tensor& av = ctx.input(0);
                           Tensor& d = ctx.grad_input(0);
                           for (std::size_t i = 0; i < d.size(); ++i) d[i] += f * av[i];
                         });
}

Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels) {
  const Tensor& lv = logits.value();
  require_matrix(lv, "softmax_cross_entropy");
  const std::size_t g = lv.rows(), c = lv.cols();
  if (labels.size() != g) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(g) + " rows but " +
                         std::to_string(labels.size()) + " labels");
  }
  if (g == 0) throw ContractError("softmax_cross_entropy: empty batch");
  auto probs = std::make_shared<Tensor>(Tensor::zeros(g, c));
  double loss = 0.0;
  for (std::size_t r = 0; r < g; ++r) {
    if (labels[r] >= c) {
      throw BoundsError("softmax_cross_entropy: label " + std::to_string(labels[r]) +
                            " outside " + std::to_string(c) + " classes",
                        r);
    }
    auto row = lv.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t k = 0; k < c; ++k) z += std::exp(row[k] - mx);
    for (std::size_t k = 0; k < c; ++k) (*probs)(r, k) = std::exp(row[k] - mx) / z;
    loss -= (row[labels[r]] - mx) - std::log(z);
  }
  loss /= static_cast<double>(g);
  auto lab = std::make_shared<std::vector<std::size_t>>(labels.begin(), labels.end());
  return logits.tape().record(OpKind::kSoftmaxCrossEntropy, {logits}, Tensor::scalar(loss),
                              [probs, lab](Tape::BackwardContext& ctx) {
                                if (!ctx.wants(0)) return;
                                const double scale = ctx.grad_output()[0] /
                                                     static_cast<double>(probs->rows());
                                Tensor& d = ctx.grad_input(0);
                                for (std::size_t r = 0; r < probs->rows(); ++r) {
                                  for (std::size_t k = 0; k < probs->cols(); ++k) {
                                    const double target = (*lab)[r] == k ? 1.0 : 0.0;
                                    d(r, k) += scale * ((*probs)(r, k) - target);
                                  }
                                }
                              });
}

// ---- finite differences -----------------------------------------------------

namespace {

double evaluate(const ScalarFunction& f, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Tensor& p : params) vars.push_back(tape.constant(p));
  return f(tape, vars).value().item();
}

}  // namespace

GradientCheck gradient_check(const ScalarFunction& f, std::span<const Tensor> params, double eps) {
  if (!(eps > 0.0)) throw ContractError("finite_difference_check: eps must be positive");
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const GradientCheck broken{kInf, kInf};

  std::vector<Tensor> work(params.begin(), params.end());
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (Tensor p : work) {
      p.set_requires_grad(true);
      vars.push_back(tape.leaf(std::move(p)));
    }
    Var loss = f(tape, vars);
    if (!std::isfinite(loss.value().item())) return broken;
    Gradients grads = tape.backward(loss);
    for (std::size_t k = 0; k < vars.size(); ++k) {
      analytic.push_back(grads.has(vars[k]) ? grads[vars[k]] : Tensor(work[k].shape()));
    }
  }

  GradientCheck out;
  double diff_sq = 0.0, a_sq = 0.0, n_sq = 0.0;
  for (std::size_t k = 0; k < work.size(); ++k) {
    for (std::size_t i = 0; i < work[k].size(); ++i) {
      const double saved = work[k][i];
      work[k][i] = saved + eps;
      const double up = evaluate(f, work);
      work[k][i] = saved - eps;
      const double down = evaluate(f, work);
      work[k][i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) return broken;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
      if (!std::isfinite(err)) return broken;
      out.max_entry_error = std::max(out.max_entry_error, err);
      diff_sq += (a - numeric) * (a - numeric);
      a_sq += a * a;
      n_sq += numeric * numeric;
    }
  }
  out.norm_error = std::sqrt(diff_sq) / (std::sqrt(a_sq) + std::sqrt(n_sq) + 1e-12);
  return out;
}

double finite_difference_check(const ScalarFunction& f, std::span<const Tensor> params, double eps) {
  return gradient_check(f, params, eps).max_entry_error;
}

}  // namespace gce
