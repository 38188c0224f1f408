#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ifgmi {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Raised by primitives whose operand shapes do not conform.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// 64-byte aligned storage. Vectorised kernels peel loops according to the
/// address, so fixing the alignment keeps results independent of where the
/// allocator happened to place a buffer.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <class T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

template <class T>
class Tape;

template <class T>
struct Node {
  Shape shape;
  Buffer<T> data;
  Buffer<T> grad;  // lazily allocated; empty means "all zeros"
  bool requires_grad = false;

  Buffer<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// Handle to a dense row-major array. Copies share storage, the same way
/// framework tensors do; use clone() for an independent copy.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : node_(std::make_shared<Node<T>>()) {}

  explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<Node<T>>()) {
    for (auto d : shape)
      if (d == 0) throw ShapeError("tensor: zero-sized dimension in " + shape_str(shape));
    node_->data.assign(numel(shape), fill);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<Node<T>>()) {
    if (numel(shape) != values.size())
      throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " +
                       shape_str(shape));
    node_->shape = std::move(shape);
    node_->data.assign(values.begin(), values.end());
  }

  Tensor(Shape shape, std::span<const T> values) : Tensor(std::move(shape), std::vector<T>(values.begin(), values.end())) {}

  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  std::span<T> data_mut() { return node_->data; }
  T item() const {
    if (size() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not scalar");
    return node_->data[0];
  }
  T operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    node_->requires_grad = on;
    return *this;
  }

  /// Gradient accumulated by the last backward pass; zeros when the tensor
  /// did not reach the loss.
  std::vector<T> grad() const {
    if (node_->grad.empty()) return std::vector<T>(size(), T(0));
    return std::vector<T>(node_->grad.begin(), node_->grad.end());
  }
  std::span<T> grad_mut() const { return node_->grad_buffer(); }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  Tensor clone() const {
    Tensor t;
    t.node_->shape = shape();
    t.node_->data = node_->data;
    return t;
  }
  Tensor detach() const { return clone(); }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape(), std::vector<U>(node_->data.begin(), node_->data.end()));
  }

  Node<T>& node() const { return *node_; }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Ordered log of recorded primitives. Entries are appended in execution
/// order, so walking them backwards is a reverse topological traversal.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Node<T>& out)>;

  void record(const Tensor<T>& out, BackwardFn fn) {
    entries_.push_back(Entry{out.node_ptr(), std::move(fn)});
  }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }

  /// Reverse-mode sweep from a scalar loss. Gradients accumulate into
  /// the leaves' grad buffers.
  void backward(const Tensor<T>& loss) {
    if (loss.size() != 1)
      throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    loss.node().grad_buffer()[0] += T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (it->out->grad.empty()) continue;
      it->fn(*it->out);
    }
  }

  /// Visit order used by backward(); exposed for tests.
  std::vector<const Node<T>*> reverse_order() const {
    std::vector<const Node<T>*> order;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) order.push_back(it->out.get());
    return order;
  }

 private:
  struct Entry {
    std::shared_ptr<Node<T>> out;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
};

namespace detail {
template <class T>
inline thread_local Tape<T>* active_tape = nullptr;
}

/// Makes `tape` the recording target for the current thread while alive.
/// Without an active tape primitives run in inference mode.
template <class T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : prev_(detail::active_tape<T>) { detail::active_tape<T> = &tape; }
  ~TapeScope() { detail::active_tape<T> = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* prev_;
};

template <class T>
Tape<T>* active_tape() {
  return detail::active_tape<T>;
}

/// Records `out` if any input participates in differentiation.
template <class T>
bool record(Tensor<T>& out, std::initializer_list<const Tensor<T>*> inputs,
            typename Tape<T>::BackwardFn fn) {
  Tape<T>* tape = active_tape<T>();
  if (!tape) return false;
  bool any = false;
  for (auto* in : inputs) any = any || in->requires_grad();
  if (!any) return false;
  out.set_requires_grad(true);
  tape->record(out, std::move(fn));
  return true;
}

template <class T>
void backward(Tape<T>& tape, const Tensor<T>& loss) {
  tape.backward(loss);
}

}  // namespace ifgmi
