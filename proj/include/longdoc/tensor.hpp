#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "longdoc/rng.hpp"

namespace longdoc {

using Shape = std::vector<int>;

std::string format_shape(const Shape& s);

// Autograd record. Each op that produces a grad-requiring output attaches one
// of these to the output; `backward` accumulates into the parents' grad
// buffers (captured by the closure) and `parents` exists only so the tape can
// be walked in reverse topological order.
struct Node {
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward;
};

// Dense FP64 tensor, row-major, value semantics over shared buffers.
class Tensor {
 public:
  Shape shape;
  std::shared_ptr<std::vector<double>> data;
  std::shared_ptr<std::vector<double>> grad;  // same shape as data when present
  bool requires_grad = false;
  std::shared_ptr<Node> node;  // null for leaves and non-grad tensors

  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from_data(const Shape& shape, std::vector<double> values,
                          bool requires_grad = false);
  static Tensor randn(const Shape& shape, Rng& rng, double stddev,
                      bool requires_grad = false);

  bool defined() const { return static_cast<bool>(data); }
  std::size_t numel() const;
  int ndim() const { return static_cast<int>(shape.size()); }
  // Dimension size, negative indices count from the back.
  int dim(int i) const;

  double item() const;  // scalar tensors only

  void ensure_grad();
  void zero_grad();

  // Reverse-mode pass from a scalar. Visits the recorded ops in exact reverse
  // topological order; every contribution accumulates additively.
  void backward();

  // Deep copy of values with no graph attached.
  Tensor detached_copy() const;
};

}  // namespace longdoc
