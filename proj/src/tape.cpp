// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#include "fluidctl/ad/tape.hpp"

#include <cmath>
#include <cstring>
#include <mutex>
#include <stdexcept>

namespace fluidctl::ad {

const char* prim_name(Prim p) {
  switch (p) {
    case Prim::add: return "add";
    case Prim::sub: return "sub";
    case Prim::mul: return "mul";
    case Prim::matvec: return "matvec";
    case Prim::matmul: return "matmul";
    case Prim::transpose: return "transpose";
    case Prim::relu: return "relu";
    case Prim::tanh: return "tanh";
    case Prim::sum: return "sum";
    case Prim::square: return "square";
    case Prim::recip: return "recip";
    case Prim::concat: return "concat";
    case Prim::slice: return "slice";
    case Prim::rotate2d: return "rotate2d";
  }
  return "?";
}

namespace {

[[noreturn]] void shape_error(Prim p, const std::string& detail) {
  throw std::invalid_argument(std::string("autodiff: ") + prim_name(p) + ": " + detail);
}

bool is_scalar(const Tensor& t) { return t.size() == 1; }

void require(bool cond, Prim p, const char* detail) {
  if (!cond) shape_error(p, detail);
}

// Elementwise binary ops broadcast a one-element operand against any shape.
void check_broadcast(Prim p, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b) && !is_scalar(a) && !is_scalar(b))
    shape_error(p, "operand shapes " + a.shape_str() + " and " + b.shape_str() + " do not match");
}

Tensor binary_eval(Prim p, const Tensor& a, const Tensor& b) {
  check_broadcast(p, a, b);
  const Tensor& big = is_scalar(a) && !is_scalar(b) ? b : a;
  Tensor out(big.shape());
  const int n = out.size();
  const bool sa = is_scalar(a) && n != 1;
  const bool sb = is_scalar(b) && n != 1;
  for (int i = 0; i < n; ++i) {
    const double x = sa ? a[0] : a[i];
    const double y = sb ? b[0] : b[i];
    switch (p) {
      case Prim::add: out[i] = x + y; break;
      case Prim::sub: out[i] = x - y; break;
      case Prim::mul: out[i] = x * y; break;
      default: shape_error(p, "internal: not a binary primitive");
    }
  }
  return out;
}

// Adds g (shaped like the output) into ga which has the operand's shape.
void accumulate_operand(Tensor& ga, const Tensor& g) {
  if (ga.size() == g.size()) {
    for (int i = 0; i < g.size(); ++i) ga[i] += g[i];
  } else {
    // broadcast operand: reduce to one element
    double s = 0.0;
    for (int i = 0; i < g.size(); ++i) s += g[i];
    ga[0] += s;
  }
}

}  // namespace

Tensor prim_eval(Prim p, const std::vector<const Tensor*>& in, int aux0, int aux1) {
  switch (p) {
    case Prim::add:
    case Prim::sub:
    case Prim::mul:
      require(in.size() == 2, p, "expects two operands");
      return binary_eval(p, *in[0], *in[1]);

    case Prim::matvec: {
      require(in.size() == 2, p, "expects matrix and vector");
      const Tensor& w = *in[0];
      const Tensor& x = *in[1];
      require(w.rank() == 2 && x.rank() == 1, p, "expects rank-2 matrix and rank-1 vector");
      if (w.cols() != x.size()) shape_error(p, "matrix " + w.shape_str() + " times vector " + x.shape_str());
      Tensor out({w.rows()});
      for (int r = 0; r < w.rows(); ++r) {
        double s = 0.0;
        for (int c = 0; c < w.cols(); ++c) s += w.at(r, c) * x[c];
        out[r] = s;
      }
      return out;
    }

    case Prim::matmul: {
      require(in.size() == 2, p, "expects two matrices");
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      require(a.rank() == 2 && b.rank() == 2, p, "expects rank-2 operands");
      if (a.cols() != b.rows()) shape_error(p, "shapes " + a.shape_str() + " x " + b.shape_str());
      Tensor out({a.rows(), b.cols()});
      for (int r = 0; r < a.rows(); ++r)
        for (int k = 0; k < a.cols(); ++k) {
          const double av = a.at(r, k);
          if (av == 0.0) continue;
          for (int c = 0; c < b.cols(); ++c) out.at(r, c) += av * b.at(k, c);
        }
      return out;
    }

    case Prim::transpose: {
      require(in.size() == 1 && in[0]->rank() == 2, p, "expects one rank-2 operand");
      const Tensor& a = *in[0];
      Tensor out({a.cols(), a.rows()});
      for (int r = 0; r < a.rows(); ++r)
        for (int c = 0; c < a.cols(); ++c) out.at(c, r) = a.at(r, c);
      return out;
    }

    case Prim::relu: {
      require(in.size() == 1, p, "expects one operand");
      Tensor out(in[0]->shape());
      for (int i = 0; i < out.size(); ++i) out[i] = (*in[0])[i] > 0.0 ? (*in[0])[i] : 0.0;
      return out;
    }

    case Prim::tanh: {
      require(in.size() == 1, p, "expects one operand");
      Tensor out(in[0]->shape());
      for (int i = 0; i < out.size(); ++i) out[i] = std::tanh((*in[0])[i]);
      return out;
    }

    case Prim::sum: {
      require(in.size() == 1, p, "expects one operand");
      double s = 0.0;
      for (int i = 0; i < in[0]->size(); ++i) s += (*in[0])[i];
      return Tensor::scalar(s);
    }

    case Prim::square: {
      require(in.size() == 1, p, "expects one operand");
      Tensor out(in[0]->shape());
      for (int i = 0; i < out.size(); ++i) out[i] = (*in[0])[i] * (*in[0])[i];
      return out;
    }

    case Prim::recip: {
      require(in.size() == 1, p, "expects one operand");
      Tensor out(in[0]->shape());
      for (int i = 0; i < out.size(); ++i) out[i] = 1.0 / (*in[0])[i];
      return out;
    }

    case Prim::concat: {
      require(!in.empty(), p, "expects at least one operand");
      int n = 0;
      for (const Tensor* t : in) {
        require(t->rank() == 1, p, "expects rank-1 operands");
        n += t->size();
      }
      Tensor out({n});
      int at = 0;
      for (const Tensor* t : in)
        for (int i = 0; i < t->size(); ++i) out[at++] = (*t)[i];
      return out;
    }

    case Prim::slice: {
      require(in.size() == 1 && in[0]->rank() == 1, p, "expects one rank-1 operand");
      const int start = aux0, len = aux1;
      if (start < 0 || len < 0 || start + len > in[0]->size())
        shape_error(p, "range [" + std::to_string(start) + "," + std::to_string(start + len) + ") out of bounds for " +
                           in[0]->shape_str());
      Tensor out({len});
      for (int i = 0; i < len; ++i) out[i] = (*in[0])[start + i];
      return out;
    }

    case Prim::rotate2d: {
      require(in.size() == 2, p, "expects vector and angle");
      require(in[0]->size() == 2 && in[1]->size() == 1, p, "expects a 2-vector and a scalar angle");
      const double c = std::cos((*in[1])[0]), s = std::sin((*in[1])[0]);
      const double x = (*in[0])[0], y = (*in[0])[1];
      return Tensor::vec2(c * x - s * y, s * x + c * y);
    }
  }
  throw std::logic_error("autodiff: unknown primitive");
}

namespace {

// Accumulates input cotangents of one primitive application. gin entries are
// null for inputs that do not require gradients.
void prim_backward(Prim p, const std::vector<const Tensor*>& in, const Tensor& out, const Tensor& g, int aux0,
                   int /*aux1*/, std::vector<Tensor*>& gin) {
  switch (p) {
    case Prim::add:
      if (gin[0]) accumulate_operand(*gin[0], g);
      if (gin[1]) accumulate_operand(*gin[1], g);
      return;
    case Prim::sub: {
      if (gin[0]) accumulate_operand(*gin[0], g);
      if (gin[1]) {
        Tensor neg(g.shape());
        for (int i = 0; i < g.size(); ++i) neg[i] = -g[i];
        accumulate_operand(*gin[1], neg);
      }
      return;
    }
    case Prim::mul: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      const int n = g.size();
      if (gin[0]) {
        Tensor t(g.shape());
        for (int i = 0; i < n; ++i) t[i] = g[i] * (b.size() == n ? b[i] : b[0]);
        accumulate_operand(*gin[0], t);
      }
      if (gin[1]) {
        Tensor t(g.shape());
        for (int i = 0; i < n; ++i) t[i] = g[i] * (a.size() == n ? a[i] : a[0]);
        accumulate_operand(*gin[1], t);
      }
      return;
    }
    case Prim::matvec: {
      const Tensor& w = *in[0];
      const Tensor& x = *in[1];
      if (gin[0])
        for (int r = 0; r < w.rows(); ++r)
          for (int c = 0; c < w.cols(); ++c) gin[0]->at(r, c) += g[r] * x[c];
      if (gin[1])
        for (int r = 0; r < w.rows(); ++r)
          for (int c = 0; c < w.cols(); ++c) (*gin[1])[c] += w.at(r, c) * g[r];
      return;
    }
    case Prim::matmul: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      if (gin[0])
        for (int r = 0; r < a.rows(); ++r)
          for (int k = 0; k < a.cols(); ++k) {
            double s = 0.0;
            for (int c = 0; c < b.cols(); ++c) s += g.at(r, c) * b.at(k, c);
            gin[0]->at(r, k) += s;
          }
      if (gin[1])
        for (int k = 0; k < b.rows(); ++k)
          for (int c = 0; c < b.cols(); ++c) {
            double s = 0.0;
            for (int r = 0; r < a.rows(); ++r) s += a.at(r, k) * g.at(r, c);
            gin[1]->at(k, c) += s;
          }
      return;
    }
    case Prim::transpose: {
      if (gin[0])
        for (int r = 0; r < g.rows(); ++r)
          for (int c = 0; c < g.cols(); ++c) gin[0]->at(c, r) += g.at(r, c);
      return;
    }
    case Prim::relu: {
      if (gin[0])
        for (int i = 0; i < g.size(); ++i) (*gin[0])[i] += (*in[0])[i] > 0.0 ? g[i] : 0.0;
      return;
    }
    case Prim::tanh: {
      if (gin[0])
        for (int i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * (1.0 - out[i] * out[i]);
      return;
    }
    case Prim::sum: {
      if (gin[0])
        for (int i = 0; i < gin[0]->size(); ++i) (*gin[0])[i] += g[0];
      return;
    }
    case Prim::square: {
      if (gin[0])
        for (int i = 0; i < g.size(); ++i) (*gin[0])[i] += 2.0 * (*in[0])[i] * g[i];
      return;
    }
    case Prim::recip: {
      if (gin[0])
        for (int i = 0; i < g.size(); ++i) (*gin[0])[i] -= g[i] * out[i] * out[i];
      return;
    }
    case Prim::concat: {
      int at = 0;
      for (size_t k = 0; k < in.size(); ++k) {
        const int n = in[k]->size();
        if (gin[k])
          for (int i = 0; i < n; ++i) (*gin[k])[i] += g[at + i];
        at += n;
      }
      return;
    }
    case Prim::slice: {
      if (gin[0])
        for (int i = 0; i < g.size(); ++i) (*gin[0])[aux0 + i] += g[i];
      return;
    }
    case Prim::rotate2d: {
      const double a = (*in[1])[0];
      const double c = std::cos(a), s = std::sin(a);
      const double x = (*in[0])[0], y = (*in[0])[1];
      if (gin[0]) {
        (*gin[0])[0] += c * g[0] + s * g[1];
        (*gin[0])[1] += -s * g[0] + c * g[1];
      }
      if (gin[1]) {
        // d(out)/da = (-s x - c y, c x - s y)
        (*gin[1])[0] += g[0] * (-s * x - c * y) + g[1] * (c * x - s * y);
      }
      return;
    }
  }
  throw std::logic_error("autodiff: unknown primitive in backward");
}

Tape* common_tape(const std::vector<Value>& inputs, const char* what) {
  Tape* t = nullptr;
  for (const Value& v : inputs) {
    if (!v.valid()) throw std::invalid_argument(std::string("autodiff: ") + what + ": uninitialized input value");
    if (!v.on_tape()) continue;
    if (t == nullptr)
      t = v.tape;
    else if (t != v.tape)
      throw std::invalid_argument(std::string("autodiff: ") + what + ": inputs from different tapes");
  }
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape

void Tape::check_inputs(const std::vector<Value>& inputs, const char* what) const {
  for (const Value& v : inputs) {
    if (v.on_tape() && (v.tape != this || v.node >= static_cast<int>(nodes_.size())))
      throw std::invalid_argument(std::string("autodiff: ") + what + ": input from a different tape");
  }
}

int Tape::append(Node node) {
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size()) - 1;
}

Value Tape::leaf(Tensor t) { return leaf(std::make_shared<const Tensor>(std::move(t))); }

Value Tape::leaf(std::shared_ptr<const Tensor> t) {
  Node n;
  n.is_custom = false;
  n.prim = Prim::add;  // unused; a leaf has no inputs
  n.outputs.push_back(t);
  const int id = append(std::move(n));
  Value v;
  v.data = std::move(t);
  v.tape = this;
  v.node = id;
  v.slot = 0;
  return v;
}

Value Tape::record(Prim p, std::vector<Value> inputs, int aux0, int aux1) {
  check_inputs(inputs, prim_name(p));
  std::vector<const Tensor*> raw;
  raw.reserve(inputs.size());
  for (const Value& v : inputs) raw.push_back(v.data.get());
  auto out = std::make_shared<const Tensor>(prim_eval(p, raw, aux0, aux1));

  Node n;
  n.prim = p;
  n.aux0 = aux0;
  n.aux1 = aux1;
  n.inputs = std::move(inputs);
  n.outputs.push_back(out);
  const int id = append(std::move(n));

  Value v;
  v.data = std::move(out);
  v.tape = this;
  v.node = id;
  v.slot = 0;
  return v;
}

std::vector<Value> Tape::apply(const CustomAdjoint& op, std::shared_ptr<const void> config,
                               std::vector<Value> inputs) {
  check_inputs(inputs, std::string(op.name()).c_str());
  std::vector<const Tensor*> raw;
  raw.reserve(inputs.size());
  for (const Value& v : inputs) raw.push_back(v.data.get());

  std::shared_ptr<void> saved;
  std::vector<Tensor> outs = op.forward(config.get(), raw, &saved);
  if (static_cast<int>(outs.size()) != op.num_outputs())
    throw std::logic_error(std::string("autodiff: ") + std::string(op.name()) + ": wrong output count");

  Node n;
  n.is_custom = true;
  n.op = &op;
  n.config = std::move(config);
  n.saved = std::move(saved);
  n.inputs = std::move(inputs);
  for (Tensor& t : outs) n.outputs.push_back(std::make_shared<const Tensor>(std::move(t)));
  const std::vector<std::shared_ptr<const Tensor>> out_ptrs = n.outputs;
  const int id = append(std::move(n));

  std::vector<Value> result;
  result.reserve(out_ptrs.size());
  for (size_t s = 0; s < out_ptrs.size(); ++s) {
    Value v;
    v.data = out_ptrs[s];
    v.tape = this;
    v.node = id;
    v.slot = static_cast<int>(s);
    result.push_back(std::move(v));
  }
  return result;
}

void Tape::backward(const Value& loss) {
  if (backward_done_) throw std::runtime_error("autodiff: backward already ran on this tape");
  if (!loss.on_tape() || loss.tape != this) throw std::invalid_argument("autodiff: backward: loss is not on this tape");
  if (loss.tensor().size() != 1) throw std::invalid_argument("autodiff: backward: loss must be scalar");
  backward_done_ = true;

  grads_.assign(nodes_.size(), {});
  for (size_t i = 0; i < nodes_.size(); ++i) grads_[i].resize(nodes_[i].outputs.size());
  grads_[loss.node][loss.slot] = Tensor::scalar(1.0);

  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.inputs.empty()) continue;  // leaf

    bool touched = false;
    for (const Tensor& g : grads_[i])
      if (g.size() > 0) {
        touched = true;
        break;
      }
    if (!touched) continue;

    std::vector<const Tensor*> raw;
    raw.reserve(n.inputs.size());
    for (const Value& v : n.inputs) raw.push_back(v.data.get());

    if (n.is_custom) {
      std::vector<const Tensor*> gout(n.outputs.size(), nullptr);
      for (size_t s = 0; s < n.outputs.size(); ++s)
        if (grads_[i][s].size() > 0) gout[s] = &grads_[i][s];
      std::vector<Tensor> gin;
      gin.reserve(n.inputs.size());
      for (const Value& v : n.inputs) gin.emplace_back(v.tensor().shape());
      n.op->backward(n.config.get(), n.saved.get(), raw, gout, gin);
      for (size_t k = 0; k < n.inputs.size(); ++k) {
        const Value& v = n.inputs[k];
        if (!v.on_tape()) continue;
        Tensor& acc = grads_[v.node][v.slot];
        if (acc.size() == 0) acc = Tensor(v.tensor().shape());
        for (int e = 0; e < acc.size(); ++e) acc[e] += gin[k][e];
      }
    } else {
      const Tensor& g = grads_[i][0];
      std::vector<Tensor*> gin(n.inputs.size(), nullptr);
      // Gradients accumulate directly into the input nodes' slots. Aliased
      // inputs (the same value passed twice) share a slot, which is exactly
      // the required sum of both paths.
      for (size_t k = 0; k < n.inputs.size(); ++k) {
        const Value& v = n.inputs[k];
        if (!v.on_tape()) continue;
        Tensor& acc = grads_[v.node][v.slot];
        if (acc.size() == 0) acc = Tensor(v.tensor().shape());
        gin[k] = &acc;
      }
      prim_backward(n.prim, raw, *n.outputs[0], g, n.aux0, n.aux1, gin);
    }
  }
}

const Tensor& Tape::grad(const Value& v) const {
  if (!backward_done_) throw std::runtime_error("autodiff: grad queried before backward");
  if (!v.on_tape() || v.tape != this) throw std::invalid_argument("autodiff: grad: value is not on this tape");
  Tensor& g = const_cast<Tape*>(this)->grads_[v.node][v.slot];
  // Untouched by the reverse sweep: exact zero of the right shape.
  if (g.size() == 0) g = Tensor(v.tensor().shape());
  return g;
}

// ---------------------------------------------------------------------------
// Registry

void AdjointRegistry::add(const CustomAdjoint* op) {
  for (const CustomAdjoint* o : ops_)
    if (o->name() == op->name())
      throw std::invalid_argument("autodiff: duplicate custom adjoint '" + std::string(op->name()) + "'");
  ops_.push_back(op);
}

const CustomAdjoint& AdjointRegistry::lookup(std::string_view name) const {
  for (const CustomAdjoint* o : ops_)
    if (o->name() == name) return *o;
  throw std::invalid_argument("autodiff: no custom adjoint registered under '" + std::string(name) + "'");
}

bool AdjointRegistry::contains(std::string_view name) const {
  for (const CustomAdjoint* o : ops_)
    if (o->name() == name) return true;
  return false;
}

AdjointRegistry& AdjointRegistry::global() {
  static AdjointRegistry reg;
  return reg;
}

// ---------------------------------------------------------------------------
// Functional front end

Value apply_prim(Prim p, std::vector<Value> inputs, int aux0, int aux1) {
  Tape* t = common_tape(inputs, prim_name(p));
  if (t) return t->record(p, std::move(inputs), aux0, aux1);
  std::vector<const Tensor*> raw;
  raw.reserve(inputs.size());
  for (const Value& v : inputs) raw.push_back(v.data.get());
  return Value::constant(prim_eval(p, raw, aux0, aux1));
}

std::vector<Value> apply_custom(const CustomAdjoint& op, std::shared_ptr<const void> config,
                                std::vector<Value> inputs) {
  Tape* t = common_tape(inputs, std::string(op.name()).c_str());
  if (t) return t->apply(op, std::move(config), std::move(inputs));

  std::vector<const Tensor*> raw;
  raw.reserve(inputs.size());
  for (const Value& v : inputs) raw.push_back(v.data.get());
  std::vector<Tensor> outs = op.forward(config.get(), raw, nullptr);
  std::vector<Value> result;
  result.reserve(outs.size());
  for (Tensor& o : outs) result.push_back(Value::constant(std::move(o)));
  return result;
}

std::vector<Value> apply_custom(const AdjointRegistry& reg, std::string_view name, std::shared_ptr<const void> config,
                                std::vector<Value> inputs) {
  return apply_custom(reg.lookup(name), std::move(config), std::move(inputs));
}

Value add(const Value& a, const Value& b) { return apply_prim(Prim::add, {a, b}); }
Value sub(const Value& a, const Value& b) { return apply_prim(Prim::sub, {a, b}); }
Value mul(const Value& a, const Value& b) { return apply_prim(Prim::mul, {a, b}); }
Value matvec(const Value& w, const Value& x) { return apply_prim(Prim::matvec, {w, x}); }
Value matmul(const Value& a, const Value& b) { return apply_prim(Prim::matmul, {a, b}); }
Value transpose(const Value& a) { return apply_prim(Prim::transpose, {a}); }
Value relu(const Value& x) { return apply_prim(Prim::relu, {x}); }
Value tanh(const Value& x) { return apply_prim(Prim::tanh, {x}); }
Value sum(const Value& x) { return apply_prim(Prim::sum, {x}); }
Value square(const Value& x) { return apply_prim(Prim::square, {x}); }
Value recip(const Value& x) { return apply_prim(Prim::recip, {x}); }
Value concat(const std::vector<Value>& parts) { return apply_prim(Prim::concat, parts); }
Value slice(const Value& x, int start, int len) { return apply_prim(Prim::slice, {x}, start, len); }
Value rotate2d(const Value& v, const Value& angle) { return apply_prim(Prim::rotate2d, {v, angle}); }

}  // namespace fluidctl::ad
