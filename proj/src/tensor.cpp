#include "sam/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace sam {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool has_grad = false;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
  std::uint64_t id = 0;
};

namespace {

thread_local bool grad_enabled = true;

std::uint64_t next_node_id() {
  // Ids only need to be increasing within the thread that builds a graph.
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_size(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_string(shape) + " holds " + std::to_string(shape_size(shape)) +
                         " values, received " + std::to_string(values.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  node->id = next_node_id();
  return node;
}

// Grad-requiring nodes reachable from `root`, sorted so every node precedes
// its inputs.
std::vector<Node*> reverse_topological(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root};
  seen.insert(root);
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) {
        stack.push_back(in.get());
      }
    }
  }
  std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->id > b->id; });
  return order;
}

}  // namespace
}  // namespace detail

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor shape " + shape_string(shape) + " has a zero-length axis");
  }
  return Tensor(detail::new_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return filled(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

detail::Node& Tensor::node() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return node().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(s));
  }
  return s[axis];
}

std::size_t Tensor::size() const { return node().values.size(); }

std::span<const double> Tensor::values() const { return node().values; }

std::span<double> Tensor::mutable_values() {
  if (!is_leaf()) throw ContractError("only leaf tensors may be modified in place");
  return node().values;
}

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  return node().values[0];
}

bool Tensor::requires_grad() const { return node().requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  if (!is_leaf()) throw ContractError("requires_grad can only be changed on leaf tensors");
  node().requires_grad = value;
  return *this;
}

bool Tensor::is_leaf() const { return !node().backward; }

bool Tensor::has_grad() const { return node().has_grad; }

std::span<const double> Tensor::grad() const {
  if (!node().has_grad) throw ContractError("tensor has no gradient");
  return node().grad;
}

void Tensor::clear_grad() {
  node().grad.clear();
  node().has_grad = false;
}

std::uint64_t Tensor::node_id() const { return node().id; }

Tensor make_op(const char* op, Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
               BackwardFn backward_fn) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value in output");
  }
  bool requires_grad = false;
  if (detail::grad_enabled) {
    for (const auto& in : inputs) requires_grad = requires_grad || in.requires_grad();
  }
  auto node = detail::new_node(std::move(shape), std::move(values), requires_grad);
  if (requires_grad) {
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node_);
    node->backward = std::move(backward_fn);
  } else {
    // Constant result: keep it a leaf, but mark it as derived so it cannot
    // be mutated in place through a stale handle.
    node->backward = [](std::span<const double>, std::span<std::vector<double>* const>) {};
  }
  return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
  detail::Node& root = loss.node();
  if (root.values.size() != 1) {
    throw ContractError("backward() needs a scalar loss, received shape " + shape_string(root.shape));
  }
  if (!root.requires_grad) return;

  const auto order = detail::reverse_topological(&root);
  for (detail::Node* n : order) {
    n->grad.assign(n->values.size(), 0.0);
    n->has_grad = true;
  }
  root.grad[0] = 1.0;

  std::vector<std::vector<double>*> in_grads;
  for (detail::Node* n : order) {
    if (n->inputs.empty()) continue;
    in_grads.clear();
    for (const auto& in : n->inputs) in_grads.push_back(in->requires_grad ? &in->grad : nullptr);
    n->backward(n->grad, in_grads);
  }
}

std::vector<double> gradient(const Tensor& output, const Tensor& wrt, std::span<const double> seed) {
  detail::Node& root = output.node();
  detail::Node* target = &wrt.node();
  if (!seed.empty() && seed.size() != root.values.size()) {
    throw DimensionError("gradient seed has " + std::to_string(seed.size()) + " entries, output " +
                         shape_string(root.shape));
  }
  std::vector<double> result(target->values.size(), 0.0);
  if (!root.requires_grad || !target->requires_grad) return result;

  auto order = detail::reverse_topological(&root);
  // Keep only nodes lying on a path from `wrt` to `output`.
  std::unordered_set<detail::Node*> on_path{target};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    for (const auto& in : (*it)->inputs) {
      if (on_path.count(in.get())) {
        on_path.insert(*it);
        break;
      }
    }
  }
  if (!on_path.count(&root)) return result;

  std::unordered_map<detail::Node*, std::vector<double>> scratch;
  for (detail::Node* n : order) {
    if (on_path.count(n)) scratch[n].assign(n->values.size(), 0.0);
  }
  auto& root_grad = scratch[&root];
  if (seed.empty()) {
    std::fill(root_grad.begin(), root_grad.end(), 1.0);
  } else {
    std::copy(seed.begin(), seed.end(), root_grad.begin());
  }

  std::vector<std::vector<double>*> in_grads;
  for (detail::Node* n : order) {
    if (n == target || !on_path.count(n) || n->inputs.empty()) continue;
    in_grads.clear();
    for (const auto& in : n->inputs) {
      in_grads.push_back(on_path.count(in.get()) ? &scratch[in.get()] : nullptr);
    }
    n->backward(scratch[n], in_grads);
  }
  result = std::move(scratch[target]);
  return result;
}

Tensor detach(const Tensor& t) {
  const detail::Node& src = t.node();
  return Tensor(detail::new_node(src.shape, src.values, false));
}

GradMode::GradMode(bool enabled) : previous_(detail::grad_enabled) { detail::grad_enabled = enabled; }

GradMode::~GradMode() { detail::grad_enabled = previous_; }

bool GradMode::enabled() { return detail::grad_enabled; }

}  // namespace sam
