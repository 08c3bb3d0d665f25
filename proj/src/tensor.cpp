#include "longdoc/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace longdoc {

std::string format_shape(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

static std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape " + format_shape(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  Tensor t;
  t.shape = shape;
  t.data = std::make_shared<std::vector<double>>(shape_numel(shape), 0.0);
  t.requires_grad = requires_grad;
  if (requires_grad) t.ensure_grad();
  return t;
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  Tensor t = zeros(shape, requires_grad);
  std::fill(t.data->begin(), t.data->end(), value);
  return t;
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != shape_numel(shape)) {
    throw std::invalid_argument("from_data: " + std::to_string(values.size()) +
                                " values for shape " + format_shape(shape));
  }
  Tensor t;
  t.shape = shape;
  t.data = std::make_shared<std::vector<double>>(std::move(values));
  t.requires_grad = requires_grad;
  if (requires_grad) t.ensure_grad();
  return t;
}

Tensor Tensor::randn(const Shape& shape, Rng& rng, double stddev, bool requires_grad) {
  Tensor t = zeros(shape, requires_grad);
  for (double& x : *t.data) x = rng.normal(0.0, stddev);
  return t;
}

std::size_t Tensor::numel() const { return data ? data->size() : 0; }

int Tensor::dim(int i) const {
  const int n = ndim();
  if (i < 0) i += n;
  if (i < 0 || i >= n) throw std::out_of_range("dim index out of range");
  return shape[static_cast<std::size_t>(i)];
}

double Tensor::item() const {
  if (numel() != 1) {
    throw std::invalid_argument("item(): tensor has shape " + format_shape(shape));
  }
  return (*data)[0];
}

void Tensor::ensure_grad() {
  if (!grad) grad = std::make_shared<std::vector<double>>(numel(), 0.0);
}

void Tensor::zero_grad() {
  if (grad) std::fill(grad->begin(), grad->end(), 0.0);
}

Tensor Tensor::detached_copy() const {
  Tensor t;
  t.shape = shape;
  t.data = std::make_shared<std::vector<double>>(*data);
  t.requires_grad = false;
  return t;
}

void Tensor::backward() {
  if (numel() != 1) {
    throw std::invalid_argument("backward(): loss must be scalar, got shape " +
                                format_shape(shape));
  }
  if (!requires_grad) return;
  ensure_grad();
  (*grad)[0] = 1.0;
  if (!node) return;

  // Iterative DFS post-order; reversed it yields consumers before producers.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node.get(), 0);
  visited.insert(node.get());
  while (!stack.empty()) {
    auto& [cur, next_child] = stack.back();
    if (next_child < cur->parents.size()) {
      Node* child = cur->parents[next_child].get();
      ++next_child;
      if (child && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(cur);
      stack.pop_back();
    }
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward();
  }
}

}  // namespace longdoc
