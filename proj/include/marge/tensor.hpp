#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace marge {

// Global autograd mode. While disabled, ops compute values but record nothing.
bool grad_enabled();
void set_grad_enabled(bool on);

struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Thread cap for internal parallelism. Defaults to MARGE_LAB_THREADS (or 1).
int max_threads();
void set_max_threads(int n);

struct Node;

// Dense row-major float64 tensor. Handles share storage; contents are
// immutable after creation except grad buffers and optimizer updates.
struct Tensor {
  std::vector<int> shape;
  std::shared_ptr<std::vector<double>> data;
  std::shared_ptr<std::vector<double>> grad;  // allocated iff requires_grad
  bool requires_grad = false;
  std::shared_ptr<Node> node;  // op record that produced this tensor

  Tensor() = default;

  static Tensor zeros(const std::vector<int>& shape, bool requires_grad = false);
  static Tensor full(const std::vector<int>& shape, double value, bool requires_grad = false);
  static Tensor from(const std::vector<int>& shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  size_t numel() const;
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<size_t>(i)); }
  bool defined() const { return static_cast<bool>(data); }

  double item() const;  // scalar tensors only
  double& at(size_t i) { return (*data)[i]; }
  double at(size_t i) const { return (*data)[i]; }

  void zero_grad();
  // Same storage, detached from the graph and with no grad.
  Tensor detach() const;
  // Deep copy as a fresh leaf.
  Tensor clone(bool requires_grad = false) const;
};

// One taped operation: output's parents plus the closure that routes the
// output grad back into them. The tape forms a DAG; backward() walks it in
// reverse topological order exactly once and then frees it.
struct Node {
  const char* op = "";
  std::vector<Tensor> parents;
  std::function<void(Tensor&)> backward;
};

// Helper for ops: allocate an output and attach a node when grads are needed.
Tensor make_op_output(const char* op, const std::vector<int>& shape,
                      std::initializer_list<Tensor> parents);

// Reverse-mode sweep from a scalar loss. Grad buffers of all reachable
// requires_grad tensors are accumulated into; the tape is freed afterwards.
void backward(Tensor& loss);

std::string shape_str(const std::vector<int>& shape);

struct GradCheckReport {
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  size_t checked = 0;
  bool pass = true;
  std::string worst;  // "tensor#i[j]: analytic=…, numeric=…"
};

// Central finite differences (step 1e-5) against the analytic grads of
// fn(inputs). Checks every coordinate unless sample_per_tensor > 0, in which
// case that many coordinates per input are drawn from the given seed.
GradCheckReport grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                           std::vector<Tensor> inputs, double rel_tol,
                           double abs_tol = 1e-7, int sample_per_tensor = 0,
                           uint64_t seed = 0);

}  // namespace marge
