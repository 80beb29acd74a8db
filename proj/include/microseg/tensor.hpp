#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace microseg {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

/// Raised when operand shapes are incompatible.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised on misuse of the gradient tape (detached loss, double backward).
class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
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

struct TapeState;

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::weak_ptr<TapeState> producer;
};

}  // namespace detail

/// Dense row-major array of doubles. Copies share storage; use clone() for a
/// deep copy.
class Tensor {
 public:
  Tensor() : node_(std::make_shared<detail::Node>()) {}

  Tensor(Shape shape, std::vector<double> values)
      : node_(std::make_shared<detail::Node>()) {
    if (shape_size(shape) != values.size()) {
      throw DimensionError("tensor data length " +
                           std::to_string(values.size()) +
                           " does not match shape " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(values);
  }

  static Tensor zeros(Shape shape) {
    const auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
  }
  static Tensor full(Shape shape, double value) {
    const auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
  }
  static Tensor scalar(double value) { return Tensor({}, {value}); }

  /// Matrix from nested rows; all rows must be equally long.
  static Tensor matrix(const std::vector<std::vector<double>>& rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.front().size() : 0;
    std::vector<double> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix rows");
      values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(values));
  }

  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->data.size(); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rows() const { return dim(0); }
  std::size_t cols() const { return dim(1); }

  std::span<const double> data() const { return node_->data; }
  /// Direct write access; intended for parameter updates outside a tape.
  std::span<double> mutable_data() { return node_->data; }

  double operator[](std::size_t i) const { return node_->data[i]; }
  double at(std::size_t r, std::size_t c) const {
    return node_->data[r * node_->shape[1] + c];
  }
  double item() const {
    if (size() != 1) {
      throw DimensionError("item() on non-scalar tensor " + shape_str(shape()));
    }
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  Tensor clone() const {
    Tensor copy(node_->shape, node_->data);
    copy.node_->requires_grad = node_->requires_grad;
    return copy;
  }

  /// Identity comparison: true when both handles refer to the same storage.
  bool same_object(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

struct TapeState {
  struct Entry {
    std::shared_ptr<Node> output;
    std::function<void()> rule;
  };
  std::vector<Entry> entries;
  bool consumed = false;
};

inline thread_local std::shared_ptr<TapeState>* active_tape = nullptr;

inline std::span<double> grad_buffer(const Tensor& t) {
  auto& node = *t.node();
  if (node.grad.empty()) node.grad.assign(node.data.size(), 0.0);
  return node.grad;
}

inline void run_backward(TapeState& state, const Tensor& loss) {
  if (loss.size() != 1) {
    throw DimensionError("backward needs a scalar loss, got " +
                         shape_str(loss.shape()));
  }
  if (state.consumed) {
    throw GraphError("backward already ran on this tape; re-record first");
  }
  grad_buffer(loss)[0] += 1.0;
  for (auto it = state.entries.rbegin(); it != state.entries.rend(); ++it) {
    if (!it->output->grad.empty()) it->rule();
  }
  state.consumed = true;
}

}  // namespace detail

/// Ordered record of differentiable operations. Operations executed while a
/// TapeScope is active on the current thread are recorded when any input
/// requires a gradient.
class Tape {
 public:
  Tape() : state_(std::make_shared<detail::TapeState>()) {}

  std::size_t size() const { return state_->entries.size(); }
  bool consumed() const { return state_->consumed; }

  /// Replays recorded rules in reverse order, seeding d(loss)/d(loss) = 1.
  void backward(const Tensor& loss) {
    if (loss.node()->producer.lock() != state_) {
      throw GraphError("loss was not recorded on this tape (detached graph)");
    }
    detail::run_backward(*state_, loss);
  }

  const std::shared_ptr<detail::TapeState>& state() const { return state_; }

 private:
  std::shared_ptr<detail::TapeState> state_;
};

/// Makes `tape` the recording target for the current thread while alive.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape)
      : tape_(tape.state()), previous_(detail::active_tape) {
    detail::active_tape = &tape_;
  }
  ~TapeScope() { detail::active_tape = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  std::shared_ptr<detail::TapeState> tape_;
  std::shared_ptr<detail::TapeState>* previous_;
};

/// Runs backward on the tape that produced `loss`.
inline void backward(const Tensor& loss) {
  auto state = loss.node()->producer.lock();
  if (!state) {
    throw GraphError("loss has no live tape (detached graph)");
  }
  detail::run_backward(*state, loss);
}

namespace detail {

/// Attaches a backward rule to `out` when a tape is active and `needs` is
/// set. The rule is only invoked once `out` has received a gradient.
template <class Rule>
void record_if(bool needs, Tensor& out, Rule&& rule) {
  if (active_tape == nullptr || !needs) return;
  out.set_requires_grad(true);
  out.node()->producer = *active_tape;
  (*active_tape)->entries.push_back({out.node(), std::forward<Rule>(rule)});
}

template <class Rule>
void record(Tensor& out, std::initializer_list<const Tensor*> inputs,
            Rule&& rule) {
  bool needs = false;
  for (const Tensor* in : inputs) needs = needs || in->requires_grad();
  record_if(needs, out, std::forward<Rule>(rule));
}

}  // namespace detail

}  // namespace microseg
