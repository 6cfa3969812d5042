#include "sstda/numerics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>
#include <unordered_set>

#include "sstda/error.hpp"

namespace sstda {

namespace {

std::atomic<std::uint64_t> g_sequence{1};

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

// --- Matrix ---------------------------------------------------------------

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require(data_.size() == rows_ * cols_, "matrix data size does not match shape");
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  Matrix m(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    require(row.size() == c, "ragged matrix literal");
    std::copy(row.begin(), row.end(), m.data_.begin() + static_cast<std::ptrdiff_t>(i * c));
    ++i;
  }
  return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

// --- graph ------------------------------------------------------------------

Matrix& detail::Node::ensure_grad() {
  if (grad.empty() && !value.empty()) grad = Matrix(value.rows(), value.cols());
  return grad;
}

Tensor Tensor::constant(Matrix value) {
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  node->sequence = g_sequence.fetch_add(1, std::memory_order_relaxed);
  return Tensor(std::move(node));
}

Tensor Tensor::parameter(Matrix value) {
  Tensor t = constant(std::move(value));
  t.node_->requires_grad = true;
  return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  Matrix m(1, 1, v);
  return requires_grad ? parameter(std::move(m)) : constant(std::move(m));
}

double Tensor::item() const {
  require(node_->value.size() == 1, "item() on a non-scalar tensor");
  return node_->value.data()[0];
}

Matrix Tensor::grad() const {
  if (node_->grad.empty()) return Matrix(rows(), cols());
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) node_->grad.fill(0.0);
}

Tensor make_result(const char* op, Matrix value, std::vector<Tensor> inputs,
                   std::function<void(detail::Node&)> backward) {
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  node->op = op;
  node->sequence = g_sequence.fetch_add(1, std::memory_order_relaxed);
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (auto& t : inputs) node->parents.push_back(t.shared());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

GradTape::GradTape(const Tensor& loss) : loss_(loss) {
  if (!loss.defined() || loss.value().size() != 1 || loss.rows() != 1) {
    throw ConfigError("backward() requires a 1x1 scalar loss");
  }
  if (!loss.requires_grad()) return;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{loss.node()};
  seen.insert(loss.node());
  while (!stack.empty()) {
    detail::Node* n = stack.back();
    stack.pop_back();
    nodes_.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(nodes_.begin(), nodes_.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->sequence < b->sequence; });
}

std::vector<const char*> GradTape::operations() const {
  std::vector<const char*> ops;
  for (const auto* n : nodes_) {
    if (!n->is_leaf()) ops.push_back(n->op);
  }
  return ops;
}

void GradTape::backward() {
  if (nodes_.empty()) return;
  for (auto* n : nodes_) {
    if (!n->is_leaf()) {
      n->ensure_grad();
      n->grad.fill(0.0);
    }
  }
  loss_.node()->ensure_grad();
  loss_.node()->grad.data()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!(*it)->is_leaf()) (*it)->backward(**it);
  }
}

void backward(const Tensor& loss) { GradTape(loss).backward(); }

// --- operations -------------------------------------------------------------

namespace {

Matrix* grad_of(const std::shared_ptr<detail::Node>& p) {
  return p->requires_grad ? &p->ensure_grad() : nullptr;
}

}  // namespace

Tensor dilated_conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                      std::size_t kernel, std::size_t dilation) {
  require(kernel % 2 == 1, "convolution kernel size must be odd");
  require(dilation >= 1, "dilation must be >= 1");
  const std::size_t T = x.rows();
  const std::size_t cin = x.cols();
  const std::size_t cout = weight.cols();
  require(weight.rows() == kernel * cin,
          "conv weight " + shape_str(weight.value()) + " does not match input channels " +
              std::to_string(cin) + " with kernel " + std::to_string(kernel));
  require(bias.rows() == 1 && bias.cols() == cout, "conv bias shape mismatch");

  const auto half = static_cast<std::ptrdiff_t>((kernel - 1) / 2 * dilation);
  const auto d = static_cast<std::ptrdiff_t>(dilation);
  const auto sT = static_cast<std::ptrdiff_t>(T);
  const Matrix& xv = x.value();
  const Matrix& wv = weight.value();
  const Matrix& bv = bias.value();

  Matrix out(T, cout);
  for (std::ptrdiff_t t = 0; t < sT; ++t) {
    double* o = out.row(static_cast<std::size_t>(t)).data();
    std::copy(bv.data().begin(), bv.data().end(), o);
    for (std::size_t j = 0; j < kernel; ++j) {
      const std::ptrdiff_t src = t - half + static_cast<std::ptrdiff_t>(j) * d;
      if (src < 0 || src >= sT) continue;
      const double* xr = xv.row(static_cast<std::size_t>(src)).data();
      for (std::size_t i = 0; i < cin; ++i) {
        const double xi = xr[i];
        const double* w = wv.row(j * cin + i).data();
        for (std::size_t c = 0; c < cout; ++c) o[c] += xi * w[c];
      }
    }
  }

  return make_result("dilated_conv1d", std::move(out), {x, weight, bias},
                     [kernel, half, d, sT, cin, cout](detail::Node& self) {
                       const auto& px = self.parents[0];
                       const auto& pw = self.parents[1];
                       const auto& pb = self.parents[2];
                       Matrix* gx = grad_of(px);
                       Matrix* gw = grad_of(pw);
                       Matrix* gb = grad_of(pb);
                       const Matrix& g = self.grad;
                       for (std::ptrdiff_t t = 0; t < sT; ++t) {
                         const double* go = g.row(static_cast<std::size_t>(t)).data();
                         if (gb) {
                           double* b = gb->data().data();
                           for (std::size_t c = 0; c < cout; ++c) b[c] += go[c];
                         }
                         for (std::size_t j = 0; j < kernel; ++j) {
                           const std::ptrdiff_t src = t - half + static_cast<std::ptrdiff_t>(j) * d;
                           if (src < 0 || src >= sT) continue;
                           const auto s = static_cast<std::size_t>(src);
                           const double* xr = px->value.row(s).data();
                           for (std::size_t i = 0; i < cin; ++i) {
                             const double* w = pw->value.row(j * cin + i).data();
                             if (gx) {
                               double acc = 0.0;
                               for (std::size_t c = 0; c < cout; ++c) acc += go[c] * w[c];
                               (*gx)(s, i) += acc;
                             }
                             if (gw) {
                               double* gwr = gw->row(j * cin + i).data();
                               const double xi = xr[i];
                               for (std::size_t c = 0; c < cout; ++c) gwr[c] += xi * go[c];
                             }
                           }
                         }
                       }
                     });
}

Tensor pointwise_conv(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const std::size_t T = x.rows();
  const std::size_t cin = x.cols();
  const std::size_t cout = weight.cols();
  require(weight.rows() == cin, "pointwise weight " + shape_str(weight.value()) +
                                    " does not match input channels " + std::to_string(cin));
  require(bias.rows() == 1 && bias.cols() == cout, "pointwise bias shape mismatch");
  const Matrix& xv = x.value();
  const Matrix& wv = weight.value();
  Matrix out(T, cout);
  for (std::size_t t = 0; t < T; ++t) {
    double* o = out.row(t).data();
    std::copy(bias.value().data().begin(), bias.value().data().end(), o);
    const double* xr = xv.row(t).data();
    for (std::size_t i = 0; i < cin; ++i) {
      const double xi = xr[i];
      const double* w = wv.row(i).data();
      for (std::size_t c = 0; c < cout; ++c) o[c] += xi * w[c];
    }
  }
  return make_result("pointwise_conv", std::move(out), {x, weight, bias},
                     [T, cin, cout](detail::Node& self) {
                       const auto& px = self.parents[0];
                       const auto& pw = self.parents[1];
                       Matrix* gx = grad_of(px);
                       Matrix* gw = grad_of(pw);
                       Matrix* gb = grad_of(self.parents[2]);
                       const Matrix& g = self.grad;
                       for (std::size_t t = 0; t < T; ++t) {
                         const double* go = g.row(t).data();
                         const double* xr = px->value.row(t).data();
                         if (gb) {
                           double* b = gb->data().data();
                           for (std::size_t c = 0; c < cout; ++c) b[c] += go[c];
                         }
                         for (std::size_t i = 0; i < cin; ++i) {
                           if (gx) {
                             const double* w = pw->value.row(i).data();
                             double acc = 0.0;
                             for (std::size_t c = 0; c < cout; ++c) acc += go[c] * w[c];
                             (*gx)(t, i) += acc;
                           }
                           if (gw) {
                             double* gwr = gw->row(i).data();
                             const double xi = xr[i];
                             for (std::size_t c = 0; c < cout; ++c) gwr[c] += xi * go[c];
                           }
                         }
                       }
                     });
}

Tensor relu(const Tensor& x) {
  Matrix out = x.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return make_result("relu", std::move(out), {x}, [](detail::Node& self) {
    const auto& p = self.parents[0];
    Matrix& g = p->ensure_grad();
    const auto& in = p->value.data();
    const auto& go = self.grad.data();
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (in[i] > 0.0) g.data()[i] += go[i];
    }
  });
}

Tensor softmax_rows(const Tensor& x) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t t = 0; t < x.rows(); ++t) {
    auto in = x.value().row(t);
    auto o = out.row(t);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp(in[c] - mx);
      z += o[c];
    }
    for (double& v : o) v /= z;
  }
  return make_result("softmax_rows", std::move(out), {x}, [](detail::Node& self) {
    Matrix& g = self.parents[0]->ensure_grad();
    for (std::size_t t = 0; t < self.value.rows(); ++t) {
      auto y = self.value.row(t);
      auto go = self.grad.row(t);
      double dot = 0.0;
      for (std::size_t c = 0; c < y.size(); ++c) dot += go[c] * y[c];
      auto gi = g.row(t);
      for (std::size_t c = 0; c < y.size(); ++c) gi[c] += y[c] * (go[c] - dot);
    }
  });
}

Tensor log_softmax_rows(const Tensor& x) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t t = 0; t < x.rows(); ++t) {
    auto in = x.value().row(t);
    auto o = out.row(t);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (double v : in) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < in.size(); ++c) o[c] = in[c] - lse;
  }
  return make_result("log_softmax_rows", std::move(out), {x}, [](detail::Node& self) {
    Matrix& g = self.parents[0]->ensure_grad();
    for (std::size_t t = 0; t < self.value.rows(); ++t) {
      auto y = self.value.row(t);
      auto go = self.grad.row(t);
      double total = 0.0;
      for (double v : go) total += v;
      auto gi = g.row(t);
      for (std::size_t c = 0; c < y.size(); ++c) gi[c] += go[c] - std::exp(y[c]) * total;
    }
  });
}

Tensor row_entropy(const Tensor& probs) {
  Matrix out(probs.rows(), 1);
  for (std::size_t t = 0; t < probs.rows(); ++t) {
    double h = 0.0;
    for (double p : probs.value().row(t)) {
      if (p > 0.0) h -= p * std::log(p);
    }
    out(t, 0) = h;
  }
  return make_result("row_entropy", std::move(out), {probs}, [](detail::Node& self) {
    const auto& p = self.parents[0];
    Matrix& g = p->ensure_grad();
    for (std::size_t t = 0; t < p->value.rows(); ++t) {
      const double go = self.grad(t, 0);
      auto pr = p->value.row(t);
      auto gi = g.row(t);
      for (std::size_t c = 0; c < pr.size(); ++c) {
        if (pr[c] > 0.0) gi[c] -= go * (std::log(pr[c]) + 1.0);
      }
    }
  });
}

Tensor gradient_reverse(const Tensor& x, double lambda) {
  require(lambda >= 0.0, "gradient reversal lambda must be nonnegative");
  return make_result("gradient_reverse", x.value(), {x}, [lambda](detail::Node& self) {
    Matrix& g = self.parents[0]->ensure_grad();
    const auto& go = self.grad.data();
    for (std::size_t i = 0; i < go.size(); ++i) g.data()[i] += -lambda * go[i];
  });
}

Tensor detach(const Tensor& x) { return Tensor::constant(x.value()); }

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.value().same_shape(b.value()),
          "add shape mismatch " + shape_str(a.value()) + " vs " + shape_str(b.value()));
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.value().data()[i];
  return make_result("add", std::move(out), {a, b}, [](detail::Node& self) {
    for (const auto& p : self.parents) {
      if (!p->requires_grad) continue;
      Matrix& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += self.grad.data()[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.value().same_shape(b.value()),
          "mul shape mismatch " + shape_str(a.value()) + " vs " + shape_str(b.value()));
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= b.value().data()[i];
  return make_result("mul", std::move(out), {a, b}, [](detail::Node& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    const auto& go = self.grad.data();
    if (pa->requires_grad) {
      Matrix& g = pa->ensure_grad();
      for (std::size_t i = 0; i < go.size(); ++i) g.data()[i] += go[i] * pb->value.data()[i];
    }
    if (pb->requires_grad) {
      Matrix& g = pb->ensure_grad();
      for (std::size_t i = 0; i < go.size(); ++i) g.data()[i] += go[i] * pa->value.data()[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  Matrix out = x.value();
  for (double& v : out.data()) v *= factor;
  return make_result("scale", std::move(out), {x}, [factor](detail::Node& self) {
    Matrix& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += factor * self.grad.data()[i];
  });
}

Tensor add_scalar(const Tensor& x, double c) {
  Matrix out = x.value();
  for (double& v : out.data()) v += c;
  return make_result("add_scalar", std::move(out), {x}, [](detail::Node& self) {
    Matrix& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += self.grad.data()[i];
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return make_result("sum", Matrix(1, 1, s), {x}, [](detail::Node& self) {
    Matrix& g = self.parents[0]->ensure_grad();
    const double go = self.grad.data()[0];
    for (double& v : g.data()) v += go;
  });
}

Tensor mean(const Tensor& x) {
  require(x.value().size() > 0, "mean of an empty tensor");
  const double n = static_cast<double>(x.value().size());
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return make_result("mean", Matrix(1, 1, s / n), {x}, [n](detail::Node& self) {
    Matrix& g = self.parents[0]->ensure_grad();
    const double go = self.grad.data()[0] / n;
    for (double& v : g.data()) v += go;
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require(begin < end && end <= x.rows(), "row slice out of range");
  const std::size_t C = x.cols();
  Matrix out(end - begin, C);
  std::copy(x.value().data().begin() + static_cast<std::ptrdiff_t>(begin * C),
            x.value().data().begin() + static_cast<std::ptrdiff_t>(end * C), out.data().begin());
  return make_result("slice_rows", std::move(out), {x}, [begin, C](detail::Node& self) {
    Matrix& g = self.parents[0]->ensure_grad();
    double* dst = g.data().data() + begin * C;
    for (std::size_t i = 0; i < self.grad.size(); ++i) dst[i] += self.grad.data()[i];
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_rows of nothing");
  const std::size_t C = parts[0].cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require(p.cols() == C, "concat_rows column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, C);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.value().size();
  }
  return make_result("concat_rows", std::move(out), {parts.begin(), parts.end()}, [](detail::Node& self) {
    std::size_t offset = 0;
    for (const auto& p : self.parents) {
      const std::size_t n = p->value.size();
      if (p->requires_grad) {
        Matrix& g = p->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) g.data()[i] += self.grad.data()[offset + i];
      }
      offset += n;
    }
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_cols of nothing");
  const std::size_t T = parts[0].rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    require(p.rows() == T, "concat_cols row mismatch");
    cols += p.cols();
  }
  Matrix out(T, cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t t = 0; t < T; ++t) {
      auto src = p.value().row(t);
      std::copy(src.begin(), src.end(), out.row(t).begin() + static_cast<std::ptrdiff_t>(offset));
    }
    offset += p.cols();
  }
  return make_result("concat_cols", std::move(out), {parts.begin(), parts.end()}, [](detail::Node& self) {
    std::size_t offset = 0;
    for (const auto& p : self.parents) {
      const std::size_t c = p->value.cols();
      if (p->requires_grad) {
        Matrix& g = p->ensure_grad();
        for (std::size_t t = 0; t < g.rows(); ++t) {
          for (std::size_t j = 0; j < c; ++j) g(t, j) += self.grad(t, offset + j);
        }
      }
      offset += c;
    }
  });
}

Tensor weighted_row_mean(const Tensor& x, const Tensor& weights) {
  const std::size_t T = x.rows();
  const std::size_t C = x.cols();
  require(weights.rows() == T && weights.cols() == 1,
          "weighted_row_mean expects " + std::to_string(T) + "x1 weights, got " +
              shape_str(weights.value()));
  const double inv = 1.0 / static_cast<double>(T);
  Matrix out(1, C);
  for (std::size_t t = 0; t < T; ++t) {
    const double w = weights.value()(t, 0) * inv;
    auto xr = x.value().row(t);
    for (std::size_t c = 0; c < C; ++c) out(0, c) += w * xr[c];
  }
  return make_result("weighted_row_mean", std::move(out), {x, weights}, [inv](detail::Node& self) {
    const auto& px = self.parents[0];
    const auto& pw = self.parents[1];
    auto go = self.grad.row(0);
    if (px->requires_grad) {
      Matrix& g = px->ensure_grad();
      for (std::size_t t = 0; t < g.rows(); ++t) {
        const double w = pw->value(t, 0) * inv;
        auto gi = g.row(t);
        for (std::size_t c = 0; c < gi.size(); ++c) gi[c] += w * go[c];
      }
    }
    if (pw->requires_grad) {
      Matrix& g = pw->ensure_grad();
      for (std::size_t t = 0; t < g.rows(); ++t) {
        auto xr = px->value.row(t);
        double acc = 0.0;
        for (std::size_t c = 0; c < xr.size(); ++c) acc += xr[c] * go[c];
        g(t, 0) += acc * inv;
      }
    }
  });
}

Tensor masked_nll(const Tensor& log_probs, std::span<const int> labels,
                  std::span<const std::uint8_t> mask) {
  const std::size_t T = log_probs.rows();
  const auto C = static_cast<int>(log_probs.cols());
  require(labels.size() == T, "label count does not match frame count");
  require(mask.empty() || mask.size() == T, "mask length does not match frame count");
  std::vector<std::size_t> kept;
  for (std::size_t t = 0; t < T; ++t) {
    if (!mask.empty() && !mask[t]) continue;
    require(labels[t] >= 0 && labels[t] < C, "label out of range at frame " + std::to_string(t));
    kept.push_back(t);
  }
  require(!kept.empty(), "masked loss over an empty mask");
  double total = 0.0;
  for (std::size_t t : kept) total -= log_probs.value()(t, static_cast<std::size_t>(labels[t]));
  const double inv = 1.0 / static_cast<double>(kept.size());
  std::vector<int> picked(labels.begin(), labels.end());
  return make_result("masked_nll", Matrix(1, 1, total * inv), {log_probs},
                     [kept = std::move(kept), picked = std::move(picked), inv](detail::Node& self) {
                       Matrix& g = self.parents[0]->ensure_grad();
                       const double go = self.grad.data()[0] * inv;
                       for (std::size_t t : kept) g(t, static_cast<std::size_t>(picked[t])) -= go;
                     });
}

Tensor truncated_mse(const Tensor& x, double tau) {
  const std::size_t T = x.rows();
  const std::size_t C = x.cols();
  if (T < 2) return make_result("truncated_mse", Matrix(1, 1, 0.0), {x}, [](detail::Node&) {});
  const double cap = tau * tau;
  const double inv = 1.0 / static_cast<double>((T - 1) * C);
  double total = 0.0;
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t c = 0; c < C; ++c) {
      const double diff = x.value()(t, c) - x.value()(t - 1, c);
      total += std::min(diff * diff, cap);
    }
  }
  return make_result("truncated_mse", Matrix(1, 1, total * inv), {x}, [cap, inv](detail::Node& self) {
    const auto& p = self.parents[0];
    Matrix& g = p->ensure_grad();
    const double go = self.grad.data()[0] * inv;
    for (std::size_t t = 1; t < p->value.rows(); ++t) {
      for (std::size_t c = 0; c < p->value.cols(); ++c) {
        const double diff = p->value(t, c) - p->value(t - 1, c);
        if (diff * diff >= cap) continue;
        g(t, c) += 2.0 * diff * go;
        g(t - 1, c) -= 2.0 * diff * go;
      }
    }
  });
}

double entropy(std::span<const double> p) {
  require(!p.empty(), "entropy of an empty vector");
  double total = 0.0;
  for (double v : p) {
    require(v >= 0.0 && std::isfinite(v), "entropy input has a negative or non-finite entry");
    total += v;
  }
  require(std::abs(total - 1.0) <= 1e-5, "entropy input is not normalized");
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

}  // namespace sstda
