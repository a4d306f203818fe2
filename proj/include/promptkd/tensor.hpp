#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace promptkd {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;

  // Set only on recorded (non-leaf) nodes. The function reads this node's
  // grad and accumulates into the parents that require grad.
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool recorded = false;

  Node() = default;
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;
  ~Node();

  void mark_recorded();
  void release_graph();
  std::vector<double>& grad_buffer();
};

}  // namespace detail

// Dense row-major double tensor with an optional gradient slot.
//
// Tensor is a cheap shared handle; copies alias the same storage. Values
// are immutable through the public interface except via mutable_values(),
// which exists for optimizers and tests.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const;
  std::size_t numel() const;
  std::size_t dim() const { return shape().size(); }
  // Rows/cols of a 2-d tensor; a 1-d tensor is treated as one row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // New leaf sharing no history (values are copied).
  Tensor detach() const;

  // Reverse-mode sweep from a scalar. Every requires_grad leaf reachable
  // from this tensor accumulates dThis/dLeaf; the recorded graph is freed.
  void backward() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  // Builds an op result. Records the graph when grad mode is on and some
  // parent requires grad; otherwise the result is a plain constant.
  static Tensor make_result(Shape shape, std::vector<double> values,
                            std::vector<Tensor> parents,
                            std::function<void(detail::Node&)> backward_fn);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// Gradient recording is on by default; a guard disables it for the current
// thread for its lifetime.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Number of live recorded graph nodes on this thread.
std::size_t graph_node_count();

}  // namespace promptkd
