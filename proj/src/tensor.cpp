#include "marge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "marge/rng.hpp"

namespace marge {

namespace {
thread_local bool g_grad_enabled = true;

int read_thread_env() {
  const char* s = std::getenv("MARGE_LAB_THREADS");
  if (!s) return 1;
  const int n = std::atoi(s);
  return n > 0 ? n : 1;
}

int g_max_threads = read_thread_env();

size_t shape_numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("tensor: negative extent in shape " + shape_str(shape));
    n *= static_cast<size_t>(d);
  }
  return n;
}
}  // namespace

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

int max_threads() { return g_max_threads; }
void set_max_threads(int n) { g_max_threads = n > 0 ? n : 1; }

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(const std::vector<int>& shape, bool requires_grad) {
  Tensor t;
  t.shape = shape;
  t.data = std::make_shared<std::vector<double>>(shape_numel(shape), 0.0);
  t.requires_grad = requires_grad;
  if (requires_grad) t.grad = std::make_shared<std::vector<double>>(t.data->size(), 0.0);
  return t;
}

Tensor Tensor::full(const std::vector<int>& shape, double value, bool requires_grad) {
  Tensor t = zeros(shape, requires_grad);
  std::fill(t.data->begin(), t.data->end(), value);
  return t;
}

Tensor Tensor::from(const std::vector<int>& shape, std::vector<double> values,
                    bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                " values do not fill shape " + shape_str(shape));
  }
  Tensor t;
  t.shape = shape;
  t.data = std::make_shared<std::vector<double>>(std::move(values));
  t.requires_grad = requires_grad;
  if (requires_grad) t.grad = std::make_shared<std::vector<double>>(t.data->size(), 0.0);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

size_t Tensor::numel() const { return data ? data->size() : 0; }

double Tensor::item() const {
  if (numel() != 1) {
    throw std::runtime_error("tensor::item: expected scalar, got shape " + shape_str(shape));
  }
  return (*data)[0];
}

void Tensor::zero_grad() {
  if (grad) std::fill(grad->begin(), grad->end(), 0.0);
}

Tensor Tensor::detach() const {
  Tensor t;
  t.shape = shape;
  t.data = data;
  t.requires_grad = false;
  return t;
}

Tensor Tensor::clone(bool requires_grad) const {
  Tensor t;
  t.shape = shape;
  t.data = std::make_shared<std::vector<double>>(*data);
  t.requires_grad = requires_grad;
  if (requires_grad) t.grad = std::make_shared<std::vector<double>>(t.data->size(), 0.0);
  return t;
}

Tensor make_op_output(const char* op, const std::vector<int>& shape,
                      std::initializer_list<Tensor> parents) {
  bool need = false;
  if (grad_enabled()) {
    for (const Tensor& p : parents) need = need || p.requires_grad;
  }
  Tensor out = Tensor::zeros(shape, need);
  if (need) {
    out.node = std::make_shared<Node>();
    out.node->op = op;
    out.node->parents.assign(parents.begin(), parents.end());
  }
  return out;
}

void backward(Tensor& loss) {
  if (loss.numel() != 1) {
    throw std::runtime_error("backward: loss must be scalar, got shape " + shape_str(loss.shape));
  }
  if (!loss.requires_grad) {
    throw std::runtime_error("backward: loss does not require grad");
  }
  (*loss.grad)[0] += 1.0;
  if (!loss.node) return;

  // Iterative post-order DFS; topo holds each produced tensor once.
  std::vector<Tensor> topo;
  std::unordered_set<Node*> visited;
  struct Frame {
    Tensor t;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  visited.insert(loss.node.get());
  stack.push_back({loss, 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    Node* n = f.t.node.get();
    if (f.next_parent < n->parents.size()) {
      Tensor& p = n->parents[f.next_parent++];
      if (p.node && !visited.count(p.node.get())) {
        visited.insert(p.node.get());
        stack.push_back({p, 0});
      }
    } else {
      topo.push_back(f.t);
      stack.pop_back();
    }
  }

  for (size_t i = topo.size(); i-- > 0;) {
    Tensor& t = topo[i];
    Node* n = t.node.get();
    if (n->backward) n->backward(t);
    // Free the tape as we go: the graph is single-use.
    n->backward = nullptr;
    n->parents.clear();
  }
  loss.node.reset();
}

GradCheckReport grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                           std::vector<Tensor> inputs, double rel_tol, double abs_tol,
                           int sample_per_tensor, uint64_t seed) {
  constexpr double kStep = 1e-5;
  GradCheckReport report;

  for (Tensor& in : inputs) {
    if (!in.requires_grad) {
      throw std::invalid_argument("grad_check: all inputs must require grad");
    }
    in.zero_grad();
  }

  Tensor loss = fn(inputs);
  if (loss.numel() != 1) throw std::runtime_error("grad_check: fn must return a scalar");
  backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (const Tensor& in : inputs) analytic.push_back(*in.grad);

  Rng rng(seed);
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor& in = inputs[ti];
    const size_t n = in.numel();
    std::vector<size_t> coords;
    if (sample_per_tensor > 0 && static_cast<size_t>(sample_per_tensor) < n) {
      for (int k = 0; k < sample_per_tensor; ++k) coords.push_back(rng.below(n));
      std::sort(coords.begin(), coords.end());
      coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    } else {
      coords.resize(n);
      for (size_t i = 0; i < n; ++i) coords[i] = i;
    }

    for (size_t c : coords) {
      const double saved = (*in.data)[c];
      double plus, minus;
      {
        NoGradGuard ng;
        (*in.data)[c] = saved + kStep;
        plus = fn(inputs).item();
        (*in.data)[c] = saved - kStep;
        minus = fn(inputs).item();
        (*in.data)[c] = saved;
      }
      const double numeric = (plus - minus) / (2.0 * kStep);
      const double a = analytic[ti][c];
      const double abs_err = std::abs(a - numeric);
      const double scale = std::max(std::abs(a), std::abs(numeric));
      const double rel_err = scale > 0.0 ? abs_err / scale : 0.0;
      report.checked++;
      if (abs_err > report.max_abs_err) report.max_abs_err = abs_err;
      if (abs_err > abs_tol + rel_tol * scale) {
        report.pass = false;
      }
      if (rel_err > report.max_rel_err) {
        report.max_rel_err = rel_err;
        std::ostringstream os;
        os << "tensor#" << ti << "[" << c << "]: analytic=" << a << " numeric=" << numeric;
        report.worst = os.str();
      }
    }
  }
  return report;
}

}  // namespace marge
