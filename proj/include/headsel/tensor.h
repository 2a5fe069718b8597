/* headsel - learned attention-head sharing for multi-task sequence models.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 */

#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace headsel {

class Rng;

// Dense 64-bit real storage, row-major, with an optional gradient buffer.
// Grad buffers of leaf tensors accumulate across backward calls until
// zero_grad; non-leaf grads are scratch owned by the recording graph.
struct TensorImpl {
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;  // same length as value iff requires_grad
  bool requires_grad = false;
  bool leaf = true;
};

// Value-semantics handle to a TensorImpl. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<int> shape, std::vector<double> data, bool requires_grad = false);
  // filled with a constant
  Tensor(std::vector<int> shape, double fill, bool requires_grad = false);

  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int axis) const { return impl_->shape[static_cast<std::size_t>(axis)]; }
  int size() const { return static_cast<int>(impl_->value.size()); }
  bool requires_grad() const { return impl_->requires_grad; }
  bool leaf() const { return impl_->leaf; }

  std::vector<double>& value() { return impl_->value; }
  const std::vector<double>& value() const { return impl_->value; }
  std::vector<double>& grad();
  const std::vector<double>& grad() const;

  // scalar read; throws unless size() == 1
  double item() const;
  double at(std::initializer_list<int> idx) const;

  void set_requires_grad(bool on);
  void zero_grad();

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Append-only tape. Append order is the topological order of the forward
// pass; backward replays the tape in reverse exactly once per node.
class Graph {
 public:
  // Seeds d(loss)/d(loss) = 1 and propagates through the tape. Leaf grads
  // accumulate; non-leaf grads are reset at the start of each call.
  void backward(const Tensor& loss);
  std::size_t node_count() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  void record(std::shared_ptr<TensorImpl> out, std::function<void()> back);

 private:
  struct Node {
    std::shared_ptr<TensorImpl> out;
    std::function<void()> back;
  };
  std::vector<Node> nodes_;
};

// RAII scope that makes `g` the recording graph on this thread. Ops executed
// outside any Recording run forward-only.
class Recording {
 public:
  explicit Recording(Graph& g);
  ~Recording();
  Recording(const Recording&) = delete;
  Recording& operator=(const Recording&) = delete;

 private:
  Graph* prev_;
};

Graph* recording_graph();

// ---- ops ----------------------------------------------------------------
// Elementwise binary ops broadcast the smaller argument over leading axes
// (its shape must be a trailing suffix of the larger one, or size 1).

Tensor matmul(const Tensor& a, const Tensor& b);  // [m x k] * [k x n]
Tensor transpose(const Tensor& a);                // 2-d
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor affine(const Tensor& x, double scale, double shift);  // scale*x + shift
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log_elem(const Tensor& x);
Tensor clamp01(const Tensor& x, double eps);  // clamp into [eps, 1-eps]
Tensor concat(const std::vector<Tensor>& parts);  // along the last axis
Tensor softmax(const Tensor& x, int axis = -1);   // max-stabilized
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
Tensor sum(const Tensor& x);                       // scalar
Tensor index(const Tensor& x, int flat_index);     // scalar
Tensor rows(const Tensor& table, const std::vector<int>& ids);
// sum over positions of -log softmax(logits)[i, targets[i]]
Tensor cross_entropy_sum(const Tensor& logits, const std::vector<int>& targets);
// forward = hard values; backward routes the full gradient into `soft`
Tensor straight_through(const Tensor& hard, const Tensor& soft);
// inverted dropout; identity when rate == 0
Tensor dropout(const Tensor& x, double rate, Rng& rng);

// Central-difference gradient oracle. Runs one recorded forward/backward to
// get the analytic gradient of f (scalar output) at x, then perturbs each
// coordinate by +-eps. Returns max |analytic - numeric| / max(|analytic|,
// |numeric|, 1e-8). Overwrites x's gradient buffer.
double grad_check(const std::function<Tensor(Tensor&)>& f, Tensor& x, double eps = 1e-4);

std::string shape_str(const std::vector<int>& s);

}  // namespace headsel
