#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sam/errors.hpp"

namespace sam {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {
struct Node;
}

// Receives the gradient of the op's output and accumulates (+=) into the
// gradient buffers of its inputs. A null buffer means that input needs no
// gradient and may be skipped.
using BackwardFn =
    std::function<void(std::span<const double> out_grad, std::span<std::vector<double>* const> in_grads)>;

/// Double-precision N-d array and a handle onto its node in the
/// differentiation graph. Copies of a Tensor share the node; use detach()
/// for an independent value copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> values() const;
  // Only leaves may be mutated in place (parameters, inputs).
  std::span<double> mutable_values();
  double item() const;
  double operator[](std::size_t flat_index) const { return values()[flat_index]; }

  bool requires_grad() const;
  // Toggles gradient tracking on a leaf.
  Tensor& set_requires_grad(bool value);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  void clear_grad();

  std::uint64_t node_id() const;

 private:
  friend Tensor make_op(const char*, Shape, std::vector<double>, std::vector<Tensor>, BackwardFn);
  friend void backward(const Tensor&);
  friend std::vector<double> gradient(const Tensor&, const Tensor&, std::span<const double>);
  friend Tensor detach(const Tensor&);

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  detail::Node& node() const;

  std::shared_ptr<detail::Node> node_;
};

/// Records a new differentiable operation. The output requires grad iff any
/// input does; values are checked for NaN/Inf and a NumericError naming `op`
/// is raised otherwise.
Tensor make_op(const char* op, Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
               BackwardFn backward_fn);

/// Populates grad() of every grad-requiring tensor the scalar `loss` depends
/// on with d(loss)/d(tensor). Existing gradients on those tensors are
/// overwritten.
void backward(const Tensor& loss);

/// Vector-Jacobian product of `output` with `seed` (ones when empty),
/// restricted to `wrt`. Runs in private scratch buffers: grad() of every
/// tensor in the graph is left untouched.
std::vector<double> gradient(const Tensor& output, const Tensor& wrt, std::span<const double> seed = {});

/// Value copy with no graph linkage and requires_grad() == false.
Tensor detach(const Tensor& t);

/// Scoped switch for graph recording on the current thread. While disabled,
/// every op result is a constant.
class GradMode {
 public:
  explicit GradMode(bool enabled);
  ~GradMode();
  GradMode(const GradMode&) = delete;
  GradMode& operator=(const GradMode&) = delete;

  static bool enabled();

 private:
  bool previous_;
};

}  // namespace sam
