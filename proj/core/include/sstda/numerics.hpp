#pragma once

// Reverse-mode differentiation over row-major sequence matrices.
//
// A Tensor is a handle to a graph node. Operations on tensors that require
// gradients record a backward closure; backward() replays the reachable
// nodes in reverse execution order. Leaf gradients accumulate across calls
// and are reset by the caller (zero_grad).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <vector>

namespace sstda {

/// Dense row-major matrix; rows are frames, columns are channels.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  void fill(double v);
  bool all_finite() const;
  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

namespace detail {

struct Node {
  Matrix value;
  Matrix grad;  // allocated on demand
  bool requires_grad = false;
  std::uint64_t sequence = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Matrix& ensure_grad();
  bool is_leaf() const noexcept { return !backward; }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  /// A leaf that never receives gradients.
  static Tensor constant(Matrix value);
  /// A leaf that accumulates gradients.
  static Tensor parameter(Matrix value);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  const Matrix& value() const { return node_->value; }
  /// Mutable access for optimizers and loaders; do not call while a graph
  /// built from this tensor is still awaiting backward().
  Matrix& mutable_value() { return node_->value; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient; zeros of the value's shape when nothing has accumulated yet.
  Matrix grad() const;
  void zero_grad();
  const char* op() const { return node_->op; }

  detail::Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<detail::Node>& shared() const noexcept { return node_; }

 private:
  friend Tensor make_result(const char*, Matrix, std::vector<Tensor>, std::function<void(detail::Node&)>);
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node> node_;
};

/// Builds an operation node. The backward closure is dropped when no input
/// requires gradients.
Tensor make_result(const char* op, Matrix value, std::vector<Tensor> inputs,
                   std::function<void(detail::Node&)> backward);

/// Operations reachable from a scalar loss, in execution order.
class GradTape {
 public:
  explicit GradTape(const Tensor& loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  /// Operation names in execution order (leaves excluded).
  std::vector<const char*> operations() const;
  /// Resets intermediate gradients, seeds d(loss)=1 and runs every recorded
  /// backward closure once, newest first.
  void backward();

 private:
  Tensor loss_;
  std::vector<detail::Node*> nodes_;  // execution order, requires_grad only
};

/// Accumulates d(loss)/d(leaf) into every reachable parameter.
void backward(const Tensor& loss);

// --- sequence operations ---------------------------------------------------

/// Same-length dilated convolution with zero padding of dilation*(k-1)/2.
/// `weight` is (k*Cin) x Cout with row index tap*Cin + in_channel; tap 0 reads
/// frame t - dilation*(k-1)/2. `bias` is 1 x Cout.
Tensor dilated_conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                      std::size_t kernel, std::size_t dilation);

/// out[t] = x[t] * weight + bias, with weight Cin x Cout and bias 1 x Cout.
Tensor pointwise_conv(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor relu(const Tensor& x);
Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);

/// Per-row entropy of probability rows, T x 1. Zero entries contribute 0.
Tensor row_entropy(const Tensor& probs);

/// Identity forward; multiplies the incoming gradient by -lambda.
Tensor gradient_reverse(const Tensor& x, double lambda);
/// Identity forward; blocks the gradient.
Tensor detach(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double c);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);

/// (1/T) * sum_t weights[t] * x[t]; weights is T x 1, result 1 x C.
Tensor weighted_row_mean(const Tensor& x, const Tensor& weights);

/// Mean over rows with mask[t] of -log_probs[t, labels[t]].
Tensor masked_nll(const Tensor& log_probs, std::span<const int> labels,
                  std::span<const std::uint8_t> mask);

/// Truncated MSE between adjacent rows: mean over (T-1)*C entries of
/// min((x[t,c] - x[t-1,c])^2, tau^2). Zero when T == 1.
Tensor truncated_mse(const Tensor& x, double tau);

/// Natural-log entropy of a probability vector; rejects vectors whose sum
/// deviates from 1 by more than 1e-5 or that hold negative entries.
double entropy(std::span<const double> p);

}  // namespace sstda
