#include "promptkd/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "promptkd/errors.hpp"

namespace promptkd {

namespace {

thread_local bool g_grad_enabled = true;
thread_local std::size_t g_live_nodes = 0;

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
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

namespace detail {

Node::~Node() {
  if (recorded) --g_live_nodes;
}

void Node::mark_recorded() {
  if (!recorded) {
    recorded = true;
    ++g_live_nodes;
  }
}

void Node::release_graph() {
  parents.clear();
  backward_fn = nullptr;
  if (recorded) {
    recorded = false;
    --g_live_nodes;
  }
}

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(values.size(), 0.0);
  return grad;
}

}  // namespace detail

namespace {

void check_shape(const Shape& shape, std::size_t n) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor shape has a zero dimension: " + shape_string(shape));
  }
  if (shape_numel(shape) != n) {
    throw DimensionError("shape " + shape_string(shape) + " does not match " +
                         std::to_string(n) + " values");
  }
}

}  // namespace

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape, values.size());
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->values.size(); }

std::size_t Tensor::rows() const {
  const auto& s = shape();
  if (s.size() == 1) return 1;
  if (s.size() != 2) throw DimensionError("expected a 2-d tensor, got " + shape_string(s));
  return s[0];
}

std::size_t Tensor::cols() const {
  const auto& s = shape();
  if (s.size() == 1) return s[0];
  if (s.size() != 2) throw DimensionError("expected a 2-d tensor, got " + shape_string(s));
  return s[1];
}

std::span<const double> Tensor::values() const { return node_->values; }
std::span<double> Tensor::mutable_values() { return node_->values; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return node_->values[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return node_->values[r * cols() + c];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool flag) { node_->requires_grad = flag; }

bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }
void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const {
  return from(node_->shape, node_->values, false);
}

Tensor Tensor::make_result(Shape shape, std::vector<double> values,
                           std::vector<Tensor> parents,
                           std::function<void(detail::Node&)> backward_fn) {
  Tensor out = from(std::move(shape), std::move(values), false);
  if (!g_grad_enabled) return out;
  const bool any = std::any_of(parents.begin(), parents.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  auto& node = *out.node_;
  node.requires_grad = true;
  node.parents.reserve(parents.size());
  for (auto& p : parents) node.parents.push_back(p.node_);
  node.backward_fn = std::move(backward_fn);
  node.mark_recorded();
  return out;
}

void Tensor::backward() const {
  if (!defined() || numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (defined() ? shape_string(shape()) : std::string("<undefined>")));
  }
  if (!node_->requires_grad) {
    throw ContractError("backward() on a tensor that is not on a recorded graph");
  }

  // Iterative post-order DFS gives parents-before-children order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += 1.0;
  // Keep the graph alive while sweeping; release_graph drops parent links.
  std::vector<std::shared_ptr<detail::Node>> keep;
  keep.reserve(order.size());
  for (auto* n : order) {
    for (auto& p : n->parents) keep.push_back(p);
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  for (auto* n : order) {
    if (n->recorded) {
      n->release_graph();
      n->grad.clear();
      n->requires_grad = false;
    }
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::size_t graph_node_count() { return g_live_nodes; }

}  // namespace promptkd
