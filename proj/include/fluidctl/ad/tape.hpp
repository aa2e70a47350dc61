// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "fluidctl/ad/tensor.hpp"

namespace fluidctl::ad {

class Tape;
class CustomAdjoint;

//! Handle to a tensor that may live on a tape.
//!
//! A detached value (tape == nullptr) is a plain constant: operations on it
//! evaluate immediately and produce detached results. Running the same
//! computation with or without a tape yields bit-identical numbers because
//! both paths execute the same kernels.
struct Value {
  std::shared_ptr<const Tensor> data;
  Tape* tape = nullptr;
  int node = -1;
  int slot = 0;

  Value() = default;

  const Tensor& tensor() const { return *data; }
  bool on_tape() const { return tape != nullptr && node >= 0; }
  bool valid() const { return data != nullptr; }

  static Value constant(Tensor t) {
    Value v;
    v.data = std::make_shared<const Tensor>(std::move(t));
    return v;
  }
  static Value constant(double s) { return constant(Tensor::scalar(s)); }
};

enum class Prim {
  add,
  sub,
  mul,
  matvec,
  matmul,
  transpose,
  relu,
  tanh,
  sum,
  square,
  recip,
  concat,
  slice,
  rotate2d,
};

const char* prim_name(Prim p);

//! Append-only record of a differentiable computation.
//!
//! Nodes reference strictly earlier nodes, so reverse iteration is a valid
//! topological order. backward() may run once per tape; leaves that do not
//! participate in the loss receive exact zero gradients.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  //! Registers an input the caller wants gradients for.
  Value leaf(Tensor t);
  Value leaf(std::shared_ptr<const Tensor> t);

  //! Applies a primitive and records it. Inputs may mix taped and detached
  //! values; all taped inputs must belong to this tape.
  Value record(Prim p, std::vector<Value> inputs, int aux0 = 0, int aux1 = 0);

  //! Applies a registered custom operation with a hand-written adjoint.
  std::vector<Value> apply(const CustomAdjoint& op, std::shared_ptr<const void> config, std::vector<Value> inputs);

  //! Reverse pass seeded with d(loss)/d(loss) = 1. Loss must be scalar.
  void backward(const Value& loss);

  //! Gradient of the last backward() with respect to a value on this tape.
  const Tensor& grad(const Value& v) const;

  size_t num_nodes() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

 private:
  struct Node {
    bool is_custom = false;
    Prim prim = Prim::add;
    const CustomAdjoint* op = nullptr;
    std::shared_ptr<const void> config;
    std::shared_ptr<void> saved;
    int aux0 = 0, aux1 = 0;
    std::vector<Value> inputs;
    std::vector<std::shared_ptr<const Tensor>> outputs;
  };

  int append(Node node);
  void check_inputs(const std::vector<Value>& inputs, const char* what) const;

  std::vector<Node> nodes_;
  // grads_[node][slot]; empty tensor means "not touched yet".
  std::vector<std::vector<Tensor>> grads_;
  bool backward_done_ = false;
};

// ---------------------------------------------------------------------------
// Custom adjoints

//! A forward kernel paired with a hand-written reverse-mode adjoint.
//!
//! Implementations are stateless; per-call constants travel in `config` and
//! intermediates needed by the adjoint in `saved`. When `saved` is null the
//! forward pass must not allocate a context (evaluation without recording).
class CustomAdjoint {
 public:
  virtual ~CustomAdjoint() = default;
  virtual std::string_view name() const = 0;
  virtual int num_outputs() const = 0;

  virtual std::vector<Tensor> forward(const void* config, const std::vector<const Tensor*>& inputs,
                                      std::shared_ptr<void>* saved) const = 0;

  //! Accumulates input cotangents into `gin` (pre-sized, zero-initialized).
  //! Entries of `gout` may be null, meaning a zero cotangent on that output.
  virtual void backward(const void* config, const void* saved, const std::vector<const Tensor*>& inputs,
                        const std::vector<const Tensor*>& gout, std::vector<Tensor>& gin) const = 0;
};

//! Name-keyed table of custom adjoints. Registration of a duplicate name and
//! lookup of a missing name are both errors.
class AdjointRegistry {
 public:
  void add(const CustomAdjoint* op);
  const CustomAdjoint& lookup(std::string_view name) const;
  bool contains(std::string_view name) const;

  static AdjointRegistry& global();

 private:
  std::vector<const CustomAdjoint*> ops_;
};

// ---------------------------------------------------------------------------
// Functional front end. Each helper records on the tape of its taped inputs,
// or evaluates eagerly when every input is detached.

Value apply_prim(Prim p, std::vector<Value> inputs, int aux0 = 0, int aux1 = 0);
std::vector<Value> apply_custom(const CustomAdjoint& op, std::shared_ptr<const void> config,
                                std::vector<Value> inputs);
std::vector<Value> apply_custom(const AdjointRegistry& reg, std::string_view name, std::shared_ptr<const void> config,
                                std::vector<Value> inputs);

Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value matvec(const Value& w, const Value& x);
Value matmul(const Value& a, const Value& b);
Value transpose(const Value& a);
Value relu(const Value& x);
Value tanh(const Value& x);
Value sum(const Value& x);
Value square(const Value& x);
Value recip(const Value& x);
Value concat(const std::vector<Value>& parts);
Value slice(const Value& x, int start, int len);
Value rotate2d(const Value& v, const Value& angle);

//! Plain evaluation of a primitive on tensors (shared by both paths).
Tensor prim_eval(Prim p, const std::vector<const Tensor*>& in, int aux0, int aux1);

}  // namespace fluidctl::ad
