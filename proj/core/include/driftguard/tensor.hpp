#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "driftguard/common.hpp"

namespace driftguard {

// Reverse-mode autodiff over dense row-major tensors of rank 0..2.
// Every primitive records a backward closure on the output node; backward()
// walks the recorded graph once in reverse topological order. The scalar
// type is a template parameter: the production engine runs on float, the
// finite-difference oracle instantiates the same kernels on double.

namespace detail {
inline thread_local bool grad_mode_enabled = true;
}

// Disables graph recording in scope (inference paths).
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_mode_enabled) { detail::grad_mode_enabled = false; }
  ~NoGradGuard() { detail::grad_mode_enabled = prev; }
};

inline bool grad_mode() { return detail::grad_mode_enabled; }

template <typename T>
class TensorT {
 public:
  struct Node {
    std::vector<int> shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated iff requires_grad
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
  };

  TensorT() = default;

  static TensorT from(std::vector<int> shape, std::vector<T> data,
                      bool requires_grad = false) {
    size_t n = 1;
    for (int d : shape) {
      if (d <= 0) fail("tensor dims must be positive");
      n *= static_cast<size_t>(d);
    }
    if (n != data.size()) fail("tensor data length does not match shape");
    TensorT t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(data);
    t.set_requires_grad(requires_grad);
    return t;
  }

  static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    return from(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static TensorT scalar(T v, bool requires_grad = false) {
    return from({}, {v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  size_t rank() const { return node_->shape.size(); }
  size_t size() const { return node_->value.size(); }
  int rows() const { return node_->shape.at(0); }
  int cols() const { return node_->shape.at(1); }

  std::vector<T>& values() { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }
  std::vector<T>& grad() {
    if (!node_->requires_grad) fail("tensor does not track gradients");
    return node_->grad;
  }
  const std::vector<T>& grad() const {
    if (!node_->requires_grad) fail("tensor does not track gradients");
    return node_->grad;
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) {
    node_->requires_grad = rg;
    if (rg)
      node_->grad.assign(node_->value.size(), T(0));
    else
      node_->grad.clear();
  }
  void zero_grad() {
    if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  T item() const {
    if (size() != 1) fail("item() on non-scalar tensor");
    return node_->value[0];
  }

  std::shared_ptr<Node> node() const { return node_; }

  // Reverse accumulation from this scalar. Gradients add into every tracked
  // tensor reachable through the recorded graph.
  void backward() const {
    if (size() != 1) fail("backward() requires a scalar loss");
    if (!node_->requires_grad) fail("backward() on an untracked value");

    // Iterative DFS post-order; reversed it is a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    struct Frame {
      Node* n;
      size_t next;
    };
    std::vector<Frame> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next < f.n->parents.size()) {
        Node* p = f.n->parents[f.next++].get();
        if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(f.n);
        stack.pop_back();
      }
    }
    node_->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
      if ((*it)->backward) (*it)->backward(**it);
  }

 private:
  std::shared_ptr<Node> node_;
};

using Tensor = TensorT<float>;

namespace detail {

template <typename T>
std::string shape_str(const TensorT<T>& t) {
  std::ostringstream ss;
  ss << "[";
  for (size_t i = 0; i < t.shape().size(); ++i)
    ss << (i ? "x" : "") << t.shape()[i];
  ss << "]";
  return ss.str();
}

template <typename T>
TensorT<T> make_result(std::vector<int> shape, std::vector<T> value,
                       std::vector<TensorT<T>> parents,
                       std::function<void(typename TensorT<T>::Node&)> backward) {
  bool rg = false;
  if (grad_mode())
    for (const auto& p : parents) rg = rg || p.requires_grad();
  TensorT<T> out = TensorT<T>::from(std::move(shape), std::move(value), rg);
  if (rg) {
    auto node = out.node();
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
  }
  return out;
}

template <typename T>
void accum(typename TensorT<T>::Node& parent, size_t idx, T v) {
  if (parent.requires_grad) parent.grad[idx] += v;
}

}  // namespace detail

// ---- primitives ------------------------------------------------------------

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    fail("matmul shape mismatch " + detail::shape_str(a) + " x " + detail::shape_str(b));
  const int m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<T> out(static_cast<size_t>(m) * n, T(0));
  const T* A = a.values().data();
  const T* B = b.values().data();
  for (int i = 0; i < m; ++i) {
    T* orow = out.data() + static_cast<size_t>(i) * n;
    const T* arow = A + static_cast<size_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      const T* brow = B + static_cast<size_t>(kk) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return detail::make_result<T>(
      {m, n}, std::move(out), {a, b},
      [m, k, n](typename TensorT<T>::Node& node) {
        auto& pa = *node.parents[0];
        auto& pb = *node.parents[1];
        const T* G = node.grad.data();
        if (pa.requires_grad) {
          // dA = G * B^T
          const T* B = pb.value.data();
          for (int i = 0; i < m; ++i)
            for (int kk = 0; kk < k; ++kk) {
              T s = T(0);
              const T* grow = G + static_cast<size_t>(i) * n;
              const T* brow = B + static_cast<size_t>(kk) * n;
              for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
              pa.grad[static_cast<size_t>(i) * k + kk] += s;
            }
        }
        if (pb.requires_grad) {
          // dB = A^T * G
          const T* A = pa.value.data();
          for (int kk = 0; kk < k; ++kk) {
            T* brow = pb.grad.data() + static_cast<size_t>(kk) * n;
            for (int i = 0; i < m; ++i) {
              const T av = A[static_cast<size_t>(i) * k + kk];
              const T* grow = G + static_cast<size_t>(i) * n;
              for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
            }
          }
        }
      });
}

// v [k] times M [k,n] -> [n]
template <typename T>
TensorT<T> vecmat(const TensorT<T>& v, const TensorT<T>& m) {
  if (v.rank() != 1 || m.rank() != 2 || v.shape()[0] != m.rows())
    fail("vecmat shape mismatch " + detail::shape_str(v) + " x " + detail::shape_str(m));
  const int k = m.rows(), n = m.cols();
  std::vector<T> out(static_cast<size_t>(n), T(0));
  for (int kk = 0; kk < k; ++kk) {
    const T vv = v.values()[kk];
    const T* mrow = m.values().data() + static_cast<size_t>(kk) * n;
    for (int j = 0; j < n; ++j) out[j] += vv * mrow[j];
  }
  return detail::make_result<T>(
      {n}, std::move(out), {v, m},
      [k, n](typename TensorT<T>::Node& node) {
        auto& pv = *node.parents[0];
        auto& pm = *node.parents[1];
        const T* G = node.grad.data();
        if (pv.requires_grad) {
          for (int kk = 0; kk < k; ++kk) {
            T s = T(0);
            const T* mrow = pm.value.data() + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) s += mrow[j] * G[j];
            pv.grad[kk] += s;
          }
        }
        if (pm.requires_grad) {
          for (int kk = 0; kk < k; ++kk) {
            const T vv = pv.value[kk];
            T* mrow = pm.grad.data() + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) mrow[j] += vv * G[j];
          }
        }
      });
}

template <typename T>
TensorT<T> transpose(const TensorT<T>& a) {
  if (a.rank() != 2) fail("transpose expects rank-2, got " + detail::shape_str(a));
  const int m = a.rows(), n = a.cols();
  std::vector<T> out(a.size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(j) * m + i] = a.values()[static_cast<size_t>(i) * n + j];
  return detail::make_result<T>(
      {n, m}, std::move(out), {a},
      [m, n](typename TensorT<T>::Node& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        for (int j = 0; j < n; ++j)
          for (int i = 0; i < m; ++i)
            p.grad[static_cast<size_t>(i) * n + j] +=
                node.grad[static_cast<size_t>(j) * m + i];
      });
}

// Elementwise add; also broadcasts a rank-1 b over the rows of a rank-2 a.
template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  const bool rowcast = a.rank() == 2 && b.rank() == 1 && a.cols() == b.shape()[0];
  if (!rowcast && a.shape() != b.shape())
    fail("add shape mismatch " + detail::shape_str(a) + " vs " + detail::shape_str(b));
  std::vector<T> out(a.values());
  if (rowcast) {
    const int m = a.rows(), n = a.cols();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) out[static_cast<size_t>(i) * n + j] += b.values()[j];
  } else {
    for (size_t i = 0; i < out.size(); ++i) out[i] += b.values()[i];
  }
  return detail::make_result<T>(
      a.shape(), std::move(out), {a, b},
      [rowcast](typename TensorT<T>::Node& node) {
        auto& pa = *node.parents[0];
        auto& pb = *node.parents[1];
        if (pa.requires_grad)
          for (size_t i = 0; i < node.grad.size(); ++i) pa.grad[i] += node.grad[i];
        if (pb.requires_grad) {
          if (rowcast) {
            const size_t n = pb.value.size();
            for (size_t i = 0; i < node.grad.size(); ++i) pb.grad[i % n] += node.grad[i];
          } else {
            for (size_t i = 0; i < node.grad.size(); ++i) pb.grad[i] += node.grad[i];
          }
        }
      });
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape() != b.shape())
    fail("sub shape mismatch " + detail::shape_str(a) + " vs " + detail::shape_str(b));
  std::vector<T> out(a.values());
  for (size_t i = 0; i < out.size(); ++i) out[i] -= b.values()[i];
  return detail::make_result<T>(
      a.shape(), std::move(out), {a, b},
      [](typename TensorT<T>::Node& node) {
        auto& pa = *node.parents[0];
        auto& pb = *node.parents[1];
        for (size_t i = 0; i < node.grad.size(); ++i) {
          detail::accum<T>(pa, i, node.grad[i]);
          detail::accum<T>(pb, i, -node.grad[i]);
        }
      });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape() != b.shape())
    fail("mul shape mismatch " + detail::shape_str(a) + " vs " + detail::shape_str(b));
  std::vector<T> out(a.values());
  for (size_t i = 0; i < out.size(); ++i) out[i] *= b.values()[i];
  return detail::make_result<T>(
      a.shape(), std::move(out), {a, b},
      [](typename TensorT<T>::Node& node) {
        auto& pa = *node.parents[0];
        auto& pb = *node.parents[1];
        for (size_t i = 0; i < node.grad.size(); ++i) {
          detail::accum<T>(pa, i, node.grad[i] * pb.value[i]);
          detail::accum<T>(pb, i, node.grad[i] * pa.value[i]);
        }
      });
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T c) {
  std::vector<T> out(a.values());
  for (T& v : out) v *= c;
  return detail::make_result<T>(
      a.shape(), std::move(out), {a},
      [c](typename TensorT<T>::Node& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        for (size_t i = 0; i < node.grad.size(); ++i) p.grad[i] += c * node.grad[i];
      });
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T c) {
  std::vector<T> out(a.values());
  for (T& v : out) v += c;
  return detail::make_result<T>(
      a.shape(), std::move(out), {a},
      [](typename TensorT<T>::Node& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        for (size_t i = 0; i < node.grad.size(); ++i) p.grad[i] += node.grad[i];
      });
}

template <typename T>
TensorT<T> relu(const TensorT<T>& a) {
  std::vector<T> out(a.values());
  for (T& v : out)
    if (v < T(0)) v = T(0);
  return detail::make_result<T>(
      a.shape(), std::move(out), {a},
      [](typename TensorT<T>::Node& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        for (size_t i = 0; i < node.grad.size(); ++i)
          if (p.value[i] > T(0)) p.grad[i] += node.grad[i];
      });
}

// tanh-approximated gaussian error linear unit (GPT-2 flavor).
template <typename T>
TensorT<T> gelu(const TensorT<T>& a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  std::vector<T> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) {
    const double x = static_cast<double>(a.values()[i]);
    const double u = kC * (x + kA * x * x * x);
    out[i] = static_cast<T>(0.5 * x * (1.0 + std::tanh(u)));
  }
  return detail::make_result<T>(
      a.shape(), std::move(out), {a},
      [](typename TensorT<T>::Node& node) {
        constexpr double kC = 0.7978845608028654;
        constexpr double kA = 0.044715;
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        for (size_t i = 0; i < node.grad.size(); ++i) {
          const double x = static_cast<double>(p.value[i]);
          const double u = kC * (x + kA * x * x * x);
          const double t = std::tanh(u);
          const double du = kC * (1.0 + 3.0 * kA * x * x);
          const double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
          p.grad[i] += static_cast<T>(d) * node.grad[i];
        }
      });
}

template <typename T>
TensorT<T> softmax_rows(const TensorT<T>& a) {
  if (a.rank() != 2) fail("softmax_rows expects rank-2, got " + detail::shape_str(a));
  const int m = a.rows(), n = a.cols();
  std::vector<T> out(a.size());
  for (int i = 0; i < m; ++i) {
    const T* row = a.values().data() + static_cast<size_t>(i) * n;
    T* orow = out.data() + static_cast<size_t>(i) * n;
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max<double>(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      const double e = std::exp(static_cast<double>(row[j]) - mx);
      orow[j] = static_cast<T>(e);
      sum += e;
    }
    for (int j = 0; j < n; ++j) orow[j] = static_cast<T>(orow[j] / sum);
  }
  return detail::make_result<T>(
      a.shape(), std::move(out), {a},
      [m, n](typename TensorT<T>::Node& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        for (int i = 0; i < m; ++i) {
          const T* prow = node.value.data() + static_cast<size_t>(i) * n;
          const T* grow = node.grad.data() + static_cast<size_t>(i) * n;
          double dot = 0.0;
          for (int j = 0; j < n; ++j) dot += static_cast<double>(prow[j]) * grow[j];
          T* out = p.grad.data() + static_cast<size_t>(i) * n;
          for (int j = 0; j < n; ++j)
            out[j] += static_cast<T>(prow[j] * (static_cast<double>(grow[j]) - dot));
        }
      });
}

// Row i is a softmax over columns 0..i; future positions are exactly zero.
template <typename T>
TensorT<T> causal_softmax(const TensorT<T>& scores) {
  if (scores.rank() != 2 || scores.rows() != scores.cols())
    fail("causal_softmax expects square scores, got " + detail::shape_str(scores));
  const int n = scores.rows();
  std::vector<T> out(scores.size(), T(0));
  for (int i = 0; i < n; ++i) {
    const T* row = scores.values().data() + static_cast<size_t>(i) * n;
    T* orow = out.data() + static_cast<size_t>(i) * n;
    double mx = row[0];
    for (int j = 1; j <= i; ++j) mx = std::max<double>(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j <= i; ++j) {
      const double e = std::exp(static_cast<double>(row[j]) - mx);
      orow[j] = static_cast<T>(e);
      sum += e;
    }
    for (int j = 0; j <= i; ++j) orow[j] = static_cast<T>(orow[j] / sum);
  }
  return detail::make_result<T>(
      scores.shape(), std::move(out), {scores},
      [n](typename TensorT<T>::Node& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        for (int i = 0; i < n; ++i) {
          const T* prow = node.value.data() + static_cast<size_t>(i) * n;
          const T* grow = node.grad.data() + static_cast<size_t>(i) * n;
          double dot = 0.0;
          for (int j = 0; j <= i; ++j) dot += static_cast<double>(prow[j]) * grow[j];
          T* out = p.grad.data() + static_cast<size_t>(i) * n;
          for (int j = 0; j <= i; ++j)
            out[j] += static_cast<T>(prow[j] * (static_cast<double>(grow[j]) - dot));
        }
      });
}

// Shift-stable log(sum(exp(.))) over a rank-1 vector, yielding a scalar.
template <typename T>
TensorT<T> logsumexp_vec(const TensorT<T>& a) {
  if (a.rank() != 1) fail("logsumexp_vec expects rank-1, got " + detail::shape_str(a));
  const size_t n = a.size();
  double mx = a.values()[0];
  for (size_t j = 1; j < n; ++j) mx = std::max<double>(mx, a.values()[j]);
  double sum = 0.0;
  for (size_t j = 0; j < n; ++j) sum += std::exp(static_cast<double>(a.values()[j]) - mx);
  const T lse = static_cast<T>(mx + std::log(sum));
  return detail::make_result<T>(
      {}, {lse}, {a},
      [](typename TensorT<T>::Node& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        const size_t n = p.value.size();
        double mx = p.value[0];
        for (size_t j = 1; j < n; ++j) mx = std::max<double>(mx, p.value[j]);
        double sum = 0.0;
        for (size_t j = 0; j < n; ++j) sum += std::exp(static_cast<double>(p.value[j]) - mx);
        const T g = node.grad[0];
        for (size_t j = 0; j < n; ++j)
          p.grad[j] += static_cast<T>(std::exp(static_cast<double>(p.value[j]) - mx) / sum) * g;
      });
}

// Per-row logsumexp of a rank-2 tensor -> rank-1 vector of row lse values.
template <typename T>
TensorT<T> logsumexp_rows(const TensorT<T>& a) {
  if (a.rank() != 2) fail("logsumexp_rows expects rank-2, got " + detail::shape_str(a));
  const int m = a.rows(), n = a.cols();
  std::vector<T> out(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    const T* row = a.values().data() + static_cast<size_t>(i) * n;
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max<double>(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
    out[static_cast<size_t>(i)] = static_cast<T>(mx + std::log(sum));
  }
  return detail::make_result<T>(
      {m}, std::move(out), {a},
      [m, n](typename TensorT<T>::Node& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        for (int i = 0; i < m; ++i) {
          const T* row = p.value.data() + static_cast<size_t>(i) * n;
          double mx = row[0];
          for (int j = 1; j < n; ++j) mx = std::max<double>(mx, row[j]);
          double sum = 0.0;
          for (int j = 0; j < n; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
          const T g = node.grad[static_cast<size_t>(i)];
          T* out = p.grad.data() + static_cast<size_t>(i) * n;
          for (int j = 0; j < n; ++j)
            out[j] += static_cast<T>(std::exp(static_cast<double>(row[j]) - mx) / sum) * g;
        }
      });
}

template <typename T>
TensorT<T> embedding_rows(const TensorT<T>& table, const std::vector<int>& ids) {
  if (table.rank() != 2) fail("embedding_rows expects rank-2 table");
  const int v = table.rows(), d = table.cols();
  for (int id : ids)
    if (id < 0 || id >= v)
      fail("embedding id " + std::to_string(id) + " out of range [0," +
           std::to_string(v) + ")");
  const int n = static_cast<int>(ids.size());
  std::vector<T> out(static_cast<size_t>(n) * d);
  for (int i = 0; i < n; ++i)
    std::copy_n(table.values().data() + static_cast<size_t>(ids[i]) * d, d,
                out.data() + static_cast<size_t>(i) * d);
  return detail::make_result<T>(
      {n, d}, std::move(out), {table},
      [ids, d](typename TensorT<T>::Node& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        for (size_t i = 0; i < ids.size(); ++i) {
          const T* grow = node.grad.data() + i * d;
          T* trow = p.grad.data() + static_cast<size_t>(ids[i]) * d;
          for (int j = 0; j < d; ++j) trow[j] += grow[j];
        }
      });
}

template <typename T>
TensorT<T> select_row(const TensorT<T>& a, int row) {
  if (a.rank() != 2) fail("select_row expects rank-2, got " + detail::shape_str(a));
  if (row < 0 || row >= a.rows()) fail("select_row index out of range");
  const int n = a.cols();
  std::vector<T> out(a.values().begin() + static_cast<size_t>(row) * n,
                     a.values().begin() + static_cast<size_t>(row + 1) * n);
  return detail::make_result<T>(
      {n}, std::move(out), {a},
      [row, n](typename TensorT<T>::Node& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        for (int j = 0; j < n; ++j)
          p.grad[static_cast<size_t>(row) * n + j] += node.grad[j];
      });
}

template <typename T>
TensorT<T> select_element(const TensorT<T>& a, int idx) {
  if (a.rank() != 1) fail("select_element expects rank-1, got " + detail::shape_str(a));
  if (idx < 0 || idx >= static_cast<int>(a.size())) fail("select_element out of range");
  return detail::make_result<T>(
      {}, {a.values()[static_cast<size_t>(idx)]}, {a},
      [idx](typename TensorT<T>::Node& node) {
        detail::accum<T>(*node.parents[0], static_cast<size_t>(idx), node.grad[0]);
      });
}

template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma,
                      const TensorT<T>& beta, T eps = T(1e-5)) {
  if (x.rank() != 2 || gamma.rank() != 1 || beta.rank() != 1 ||
      gamma.shape()[0] != x.cols() || beta.shape()[0] != x.cols())
    fail("layer_norm shape mismatch " + detail::shape_str(x) + " / " +
         detail::shape_str(gamma) + " / " + detail::shape_str(beta));
  const int m = x.rows(), n = x.cols();
  std::vector<T> out(x.size());
  std::vector<T> xhat(x.size());
  std::vector<T> inv_std(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    const T* row = x.values().data() + static_cast<size_t>(i) * n;
    double mean = 0.0;
    for (int j = 0; j < n; ++j) mean += row[j];
    mean /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= n;
    const double s = 1.0 / std::sqrt(var + static_cast<double>(eps));
    inv_std[static_cast<size_t>(i)] = static_cast<T>(s);
    for (int j = 0; j < n; ++j) {
      const T xh = static_cast<T>((row[j] - mean) * s);
      xhat[static_cast<size_t>(i) * n + j] = xh;
      out[static_cast<size_t>(i) * n + j] = gamma.values()[j] * xh + beta.values()[j];
    }
  }
  return detail::make_result<T>(
      x.shape(), std::move(out), {x, gamma, beta},
      [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          typename TensorT<T>::Node& node) {
        auto& px = *node.parents[0];
        auto& pg = *node.parents[1];
        auto& pb = *node.parents[2];
        for (int i = 0; i < m; ++i) {
          const T* grow = node.grad.data() + static_cast<size_t>(i) * n;
          const T* xh = xhat.data() + static_cast<size_t>(i) * n;
          if (pg.requires_grad)
            for (int j = 0; j < n; ++j) pg.grad[j] += grow[j] * xh[j];
          if (pb.requires_grad)
            for (int j = 0; j < n; ++j) pb.grad[j] += grow[j];
          if (px.requires_grad) {
            double m1 = 0.0, m2 = 0.0;
            for (int j = 0; j < n; ++j) {
              const double g = static_cast<double>(pg.value[j]) * grow[j];
              m1 += g;
              m2 += g * xh[j];
            }
            m1 /= n;
            m2 /= n;
            const double s = inv_std[static_cast<size_t>(i)];
            T* out = px.grad.data() + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) {
              const double g = static_cast<double>(pg.value[j]) * grow[j];
              out[j] += static_cast<T>(s * (g - m1 - xh[j] * m2));
            }
          }
        }
      });
}

template <typename T>
TensorT<T> mean_all(const TensorT<T>& a) {
  double sum = 0.0;
  for (T v : a.values()) sum += v;
  const size_t n = a.size();
  return detail::make_result<T>(
      {}, {static_cast<T>(sum / static_cast<double>(n))}, {a},
      [n](typename TensorT<T>::Node& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        const T g = node.grad[0] / static_cast<T>(n);
        for (size_t i = 0; i < n; ++i) p.grad[i] += g;
      });
}

// Mean over rows: [m,n] -> [n].
template <typename T>
TensorT<T> mean_axis0(const TensorT<T>& a) {
  if (a.rank() != 2) fail("mean_axis0 expects rank-2, got " + detail::shape_str(a));
  const int m = a.rows(), n = a.cols();
  std::vector<T> out(static_cast<size_t>(n), T(0));
  for (int j = 0; j < n; ++j) {
    double sum = 0.0;
    for (int i = 0; i < m; ++i) sum += a.values()[static_cast<size_t>(i) * n + j];
    out[static_cast<size_t>(j)] = static_cast<T>(sum / m);
  }
  return detail::make_result<T>(
      {n}, std::move(out), {a},
      [m, n](typename TensorT<T>::Node& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            p.grad[static_cast<size_t>(i) * n + j] += node.grad[j] / static_cast<T>(m);
      });
}

template <typename T>
TensorT<T> slice_cols(const TensorT<T>& a, int start, int len) {
  if (a.rank() != 2) fail("slice_cols expects rank-2, got " + detail::shape_str(a));
  if (start < 0 || len <= 0 || start + len > a.cols()) fail("slice_cols out of range");
  const int m = a.rows(), n = a.cols();
  std::vector<T> out(static_cast<size_t>(m) * len);
  for (int i = 0; i < m; ++i)
    std::copy_n(a.values().data() + static_cast<size_t>(i) * n + start, len,
                out.data() + static_cast<size_t>(i) * len);
  return detail::make_result<T>(
      {m, len}, std::move(out), {a},
      [m, n, start, len](typename TensorT<T>::Node& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < len; ++j)
            p.grad[static_cast<size_t>(i) * n + start + j] +=
                node.grad[static_cast<size_t>(i) * len + j];
      });
}

template <typename T>
TensorT<T> concat_cols(const std::vector<TensorT<T>>& parts) {
  if (parts.empty()) fail("concat_cols: no parts");
  const int m = parts[0].rows();
  int total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.rows() != m) fail("concat_cols: inconsistent row counts");
    total += p.cols();
  }
  std::vector<T> out(static_cast<size_t>(m) * total);
  int off = 0;
  for (const auto& p : parts) {
    const int w = p.cols();
    for (int i = 0; i < m; ++i)
      std::copy_n(p.values().data() + static_cast<size_t>(i) * w, w,
                  out.data() + static_cast<size_t>(i) * total + off);
    off += w;
  }
  std::vector<int> widths;
  for (const auto& p : parts) widths.push_back(p.cols());
  return detail::make_result<T>(
      {m, total}, std::move(out), parts,
      [m, total, widths](typename TensorT<T>::Node& node) {
        int off = 0;
        for (size_t pi = 0; pi < node.parents.size(); ++pi) {
          auto& p = *node.parents[pi];
          const int w = widths[pi];
          if (p.requires_grad)
            for (int i = 0; i < m; ++i)
              for (int j = 0; j < w; ++j)
                p.grad[static_cast<size_t>(i) * w + j] +=
                    node.grad[static_cast<size_t>(i) * total + off + j];
          off += w;
        }
      });
}

// Inverted dropout: kept entries are scaled by 1/(1-rate) so inference needs
// no rescaling. rate = 0 returns the input tensor unchanged (strict identity).
template <typename T>
TensorT<T> dropout(const TensorT<T>& a, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) fail("dropout rate must be in [0,1)");
  if (rate == 0.0) return a;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(a.size());
  for (size_t i = 0; i < mask.size(); ++i)
    mask[i] = rng.uniform() < rate ? T(0) : keep_scale;
  std::vector<T> out(a.values());
  for (size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return detail::make_result<T>(
      a.shape(), std::move(out), {a},
      [mask = std::move(mask)](typename TensorT<T>::Node& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        for (size_t i = 0; i < node.grad.size(); ++i)
          p.grad[i] += node.grad[i] * mask[i];
      });
}

// Mean of a list of scalars (used to average per-example losses).
template <typename T>
TensorT<T> average(const std::vector<TensorT<T>>& scalars) {
  if (scalars.empty()) fail("average: empty list");
  double sum = 0.0;
  for (const auto& s : scalars) sum += s.item();
  const size_t n = scalars.size();
  return detail::make_result<T>(
      {}, {static_cast<T>(sum / static_cast<double>(n))}, scalars,
      [n](typename TensorT<T>::Node& node) {
        const T g = node.grad[0] / static_cast<T>(n);
        for (auto& p : node.parents) detail::accum<T>(*p, 0, g);
      });
}

}  // namespace driftguard
