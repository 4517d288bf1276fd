#include "nsrc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

namespace nsrc::ad {

namespace {

thread_local bool g_grad_enabled = true;

bool any_requires_grad(const std::vector<TensorPtr>& ps) {
  for (const auto& p : ps) {
    if (p->requires_grad) return true;
  }
  return false;
}

// Attaches graph metadata if recording is active; otherwise the result is a
// plain constant.
TensorPtr make_node(std::vector<int> shape, std::vector<double> value,
                    std::vector<TensorPtr> parents,
                    std::function<void(Tensor&)> backprop) {
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->value = std::move(value);
  if (g_grad_enabled && any_requires_grad(parents)) {
    t->requires_grad = true;
    t->parents = std::move(parents);
    t->backprop = std::move(backprop);
  }
  return t;
}

void check_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
  if (a->shape != b->shape) {
    fail(std::string(op) + ": shape mismatch " + shape_str(a->shape) + " vs " +
         shape_str(b->shape));
  }
}

struct Dims5 {
  int b, c, t, y, x;
  std::size_t plane() const { return static_cast<std::size_t>(y) * x; }
  std::size_t vol() const { return static_cast<std::size_t>(t) * y * x; }
};

Dims5 dims5(const TensorPtr& a, const char* op) {
  if (a->shape.size() != 5) {
    fail(std::string(op) + ": expected rank-5 tensor [b,c,t,y,x], got shape " +
         shape_str(a->shape));
  }
  return {a->shape[0], a->shape[1], a->shape[2], a->shape[3], a->shape[4]};
}

// Elementwise loops above this size run on the worker pool; chunks are
// disjoint, so results do not depend on the thread count.
constexpr std::size_t kParallelCutoff = std::size_t{1} << 15;

template <class F>
void ew(std::size_t n, F&& f) {
  if (n >= kParallelCutoff) {
    parallel_for(n, [&](std::size_t b, std::size_t e) { f(b, e); });
  } else {
    f(0, n);
  }
}

// Fixed-order eight-lane reduction: deterministic, and fast despite the
// no-reassociation rule the compiler must obey for plain loops.
inline double dot_span(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  double s4 = 0.0, s5 = 0.0, s6 = 0.0, s7 = 0.0;
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
    s4 += a[i + 4] * b[i + 4];
    s5 += a[i + 5] * b[i + 5];
    s6 += a[i + 6] * b[i + 6];
    s7 += a[i + 7] * b[i + 7];
  }
  double tail = 0.0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return (((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7))) + tail;
}

inline double sum_span(const double* a, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i];
    s1 += a[i + 1];
    s2 += a[i + 2];
    s3 += a[i + 3];
  }
  double tail = 0.0;
  for (; i < n; ++i) tail += a[i];
  return ((s0 + s1) + (s2 + s3)) + tail;
}

}  // namespace

std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    require(d >= 0, "negative dimension in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

std::size_t Tensor::numel() const { return shape_numel(shape); }

void Tensor::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
}

void Tensor::zero_grad() { grad.assign(value.size(), 0.0); }

TensorPtr leaf(std::vector<int> shape, bool requires_grad) {
  auto t = std::make_shared<Tensor>();
  t->value.assign(shape_numel(shape), 0.0);
  t->shape = std::move(shape);
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr leaf(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
  require(shape_numel(shape) == data.size(),
          "leaf: data length does not match shape " + shape_str(shape));
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->value = std::move(data);
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr constant(std::vector<int> shape, std::vector<double> data) {
  return leaf(std::move(shape), std::move(data), false);
}

TensorPtr zeros(std::vector<int> shape, bool requires_grad) {
  return leaf(std::move(shape), requires_grad);
}

TensorPtr scalar(double v, bool requires_grad) {
  return leaf({1}, std::vector<double>{v}, requires_grad);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : saved_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = saved_; }

void backward(const TensorPtr& root) {
  require(root != nullptr, "backward: null root");
  require(root->numel() == 1, "backward: root must be a scalar, got shape " +
                                  shape_str(root->shape));
  // Iterative post-order DFS over the parent DAG.
  std::vector<Tensor*> order;
  std::unordered_set<Tensor*> visited;
  std::vector<std::pair<Tensor*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Tensor* p = node->parents[idx].get();
      ++idx;
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad();
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Tensor* node = *it;
    if (node->backprop) {
      node->ensure_grad();
      node->backprop(*node);
    }
  }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(a, b, "add");
  std::vector<double> v(a->value.size());
  ew(v.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) v[i] = a->value[i] + b->value[i];
  });
  TensorPtr pa = a, pb = b;
  return make_node(a->shape, std::move(v), {a, b}, [pa, pb](Tensor& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      ew(self.grad.size(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) pa->grad[i] += self.grad[i];
      });
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      ew(self.grad.size(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) pb->grad[i] += self.grad[i];
      });
    }
  });
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> v(a->value.size());
  ew(v.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) v[i] = a->value[i] - b->value[i];
  });
  TensorPtr pa = a, pb = b;
  return make_node(a->shape, std::move(v), {a, b}, [pa, pb](Tensor& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      ew(self.grad.size(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) pa->grad[i] += self.grad[i];
      });
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      ew(self.grad.size(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) pb->grad[i] -= self.grad[i];
      });
    }
  });
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> v(a->value.size());
  ew(v.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) v[i] = a->value[i] * b->value[i];
  });
  TensorPtr pa = a, pb = b;
  return make_node(a->shape, std::move(v), {a, b}, [pa, pb](Tensor& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      ew(self.grad.size(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) pa->grad[i] += self.grad[i] * pb->value[i];
      });
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      ew(self.grad.size(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) pb->grad[i] += self.grad[i] * pa->value[i];
      });
    }
  });
}

TensorPtr div(const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(a, b, "div");
  std::vector<double> v(a->value.size());
  ew(v.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) v[i] = a->value[i] / b->value[i];
  });
  TensorPtr pa = a, pb = b;
  return make_node(a->shape, std::move(v), {a, b}, [pa, pb](Tensor& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      ew(self.grad.size(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) pa->grad[i] += self.grad[i] / pb->value[i];
      });
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      ew(self.grad.size(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
          const double bi = pb->value[i];
          pb->grad[i] -= self.grad[i] * pa->value[i] / (bi * bi);
        }
      });
    }
  });
}

TensorPtr neg(const TensorPtr& a) { return mul_scalar(a, -1.0); }

TensorPtr add_scalar(const TensorPtr& a, double s) {
  std::vector<double> v(a->value.size());
  ew(v.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) v[i] = a->value[i] + s;
  });
  TensorPtr pa = a;
  return make_node(a->shape, std::move(v), {a}, [pa](Tensor& self) {
    pa->ensure_grad();
    ew(self.grad.size(), [&](std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i) pa->grad[i] += self.grad[i];
    });
  });
}

TensorPtr mul_scalar(const TensorPtr& a, double s) {
  std::vector<double> v(a->value.size());
  ew(v.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) v[i] = a->value[i] * s;
  });
  TensorPtr pa = a;
  return make_node(a->shape, std::move(v), {a}, [pa, s](Tensor& self) {
    pa->ensure_grad();
    ew(self.grad.size(), [&](std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i) pa->grad[i] += self.grad[i] * s;
    });
  });
}

TensorPtr exp_op(const TensorPtr& a) {
  std::vector<double> v(a->value.size());
  ew(v.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) v[i] = std::exp(a->value[i]);
  });
  TensorPtr pa = a;
  return make_node(a->shape, std::move(v), {a}, [pa](Tensor& self) {
    pa->ensure_grad();
    ew(self.grad.size(), [&](std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i) pa->grad[i] += self.grad[i] * self.value[i];
    });
  });
}

TensorPtr relu(const TensorPtr& a) {
  std::vector<double> v(a->value.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->value[i] > 0.0 ? a->value[i] : 0.0;
  TensorPtr pa = a;
  return make_node(a->shape, std::move(v), {a}, [pa](Tensor& self) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (pa->value[i] > 0.0) pa->grad[i] += self.grad[i];
  });
}

TensorPtr sqrt_eps(const TensorPtr& a, double eps) {
  require(eps >= 0.0, "sqrt_eps: eps must be nonnegative");
  std::vector<double> v(a->value.size());
  ew(v.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) v[i] = std::sqrt(a->value[i] + eps);
  });
  TensorPtr pa = a;
  return make_node(a->shape, std::move(v), {a}, [pa](Tensor& self) {
    pa->ensure_grad();
    ew(self.grad.size(), [&](std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i) {
        const double s = self.value[i];
        if (s > 0.0) pa->grad[i] += self.grad[i] * 0.5 / s;
      }
    });
  });
}

TensorPtr sum(const TensorPtr& a) {
  const double acc = sum_span(a->value.data(), a->value.size());
  TensorPtr pa = a;
  return make_node({1}, {acc}, {a}, [pa](Tensor& self) {
    pa->ensure_grad();
    const double g = self.grad[0];
    ew(pa->grad.size(), [&](std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i) pa->grad[i] += g;
    });
  });
}

TensorPtr mean(const TensorPtr& a) {
  require(a->numel() > 0, "mean: empty tensor");
  return mul_scalar(sum(a), 1.0 / static_cast<double>(a->numel()));
}

TensorPtr sum_abs(const TensorPtr& a) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  const double* p = a->value.data();
  const std::size_t n = a->value.size();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += std::fabs(p[i]);
    s1 += std::fabs(p[i + 1]);
    s2 += std::fabs(p[i + 2]);
    s3 += std::fabs(p[i + 3]);
  }
  double tail = 0.0;
  for (; i < n; ++i) tail += std::fabs(p[i]);
  const double acc = ((s0 + s1) + (s2 + s3)) + tail;
  TensorPtr pa = a;
  return make_node({1}, {acc}, {a}, [pa](Tensor& self) {
    pa->ensure_grad();
    const double g = self.grad[0];
    ew(pa->grad.size(), [&](std::size_t lo, std::size_t hi) {
      for (std::size_t i2 = lo; i2 < hi; ++i2) {
        const double x = pa->value[i2];
        if (x > 0.0)
          pa->grad[i2] += g;
        else if (x < 0.0)
          pa->grad[i2] -= g;
      }
    });
  });
}

TensorPtr activation(const TensorPtr& a, Act kind) {
  std::vector<double> v(a->value.size());
  // For SiLU the sigmoid is cached for the backward pass; the exp is by far
  // the most expensive part of the op.
  std::vector<double> sig;
  if (kind == Act::kSilu) sig.resize(a->value.size());
  switch (kind) {
    case Act::kSilu:
      ew(v.size(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
          const double x = a->value[i];
          const double s = 1.0 / (1.0 + std::exp(-x));
          sig[i] = s;
          v[i] = x * s;
        }
      });
      break;
    case Act::kSigmoid:
      ew(v.size(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) v[i] = 1.0 / (1.0 + std::exp(-a->value[i]));
      });
      break;
    case Act::kTanh:
      ew(v.size(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) v[i] = std::tanh(a->value[i]);
      });
      break;
  }
  TensorPtr pa = a;
  return make_node(a->shape, std::move(v), {a},
                   [pa, kind, sig = std::move(sig)](Tensor& self) {
                     pa->ensure_grad();
                     switch (kind) {
                       case Act::kSilu:
                         ew(self.grad.size(), [&](std::size_t lo, std::size_t hi) {
                           for (std::size_t i = lo; i < hi; ++i) {
                             const double s = sig[i];
                             pa->grad[i] +=
                                 self.grad[i] * (s + pa->value[i] * s * (1.0 - s));
                           }
                         });
                         break;
                       case Act::kSigmoid:
                         ew(self.grad.size(), [&](std::size_t lo, std::size_t hi) {
                           for (std::size_t i = lo; i < hi; ++i) {
                             const double y = self.value[i];
                             pa->grad[i] += self.grad[i] * y * (1.0 - y);
                           }
                         });
                         break;
                       case Act::kTanh:
                         ew(self.grad.size(), [&](std::size_t lo, std::size_t hi) {
                           for (std::size_t i = lo; i < hi; ++i) {
                             const double y = self.value[i];
                             pa->grad[i] += self.grad[i] * (1.0 - y * y);
                           }
                         });
                         break;
                     }
                   });
}

// ---------------------------------------------------------------------------
// structural
// ---------------------------------------------------------------------------

TensorPtr reshape(const TensorPtr& a, std::vector<int> shape) {
  require(shape_numel(shape) == a->numel(),
          "reshape: element count mismatch " + shape_str(a->shape) + " -> " +
              shape_str(shape));
  TensorPtr pa = a;
  return make_node(std::move(shape), a->value, {a}, [pa](Tensor& self) {
    pa->ensure_grad();
    ew(self.grad.size(), [&](std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i) pa->grad[i] += self.grad[i];
    });
  });
}

TensorPtr concat_channels(const std::vector<TensorPtr>& xs) {
  require(!xs.empty(), "concat_channels: empty input list");
  Dims5 d0 = dims5(xs[0], "concat_channels");
  int ctot = 0;
  for (const auto& x : xs) {
    Dims5 d = dims5(x, "concat_channels");
    require(d.b == d0.b && d.t == d0.t && d.y == d0.y && d.x == d0.x,
            "concat_channels: non-channel axes differ: " + shape_str(x->shape) +
                " vs " + shape_str(xs[0]->shape));
    ctot += d.c;
  }
  const std::size_t vol = d0.vol();
  std::vector<double> v(static_cast<std::size_t>(d0.b) * ctot * vol);
  std::vector<int> offsets(xs.size());
  {
    int off = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      offsets[i] = off;
      off += xs[i]->shape[1];
    }
  }
  for (int b = 0; b < d0.b; ++b) {
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const int ci = xs[i]->shape[1];
      const double* src = xs[i]->value.data() + static_cast<std::size_t>(b) * ci * vol;
      double* dst = v.data() + (static_cast<std::size_t>(b) * ctot + offsets[i]) * vol;
      std::copy(src, src + static_cast<std::size_t>(ci) * vol, dst);
    }
  }
  std::vector<TensorPtr> parents = xs;
  return make_node({d0.b, ctot, d0.t, d0.y, d0.x}, std::move(v), parents,
                   [parents, offsets, ctot, vol, nb = d0.b](Tensor& self) {
                     for (std::size_t i = 0; i < parents.size(); ++i) {
                       if (!parents[i]->requires_grad) continue;
                       parents[i]->ensure_grad();
                       const int ci = parents[i]->shape[1];
                       for (int b = 0; b < nb; ++b) {
                         const double* g = self.grad.data() +
                                           (static_cast<std::size_t>(b) * ctot + offsets[i]) * vol;
                         double* dst = parents[i]->grad.data() +
                                       static_cast<std::size_t>(b) * ci * vol;
                         const std::size_t n = static_cast<std::size_t>(ci) * vol;
                         ew(n, [&](std::size_t lo, std::size_t hi) {
                           for (std::size_t k = lo; k < hi; ++k) dst[k] += g[k];
                         });
                       }
                     }
                   });
}

TensorPtr slice_channels(const TensorPtr& a, int c_begin, int c_end) {
  Dims5 d = dims5(a, "slice_channels");
  require(0 <= c_begin && c_begin < c_end && c_end <= d.c,
          "slice_channels: invalid channel range");
  const std::size_t vol = d.vol();
  const int cs = c_end - c_begin;
  std::vector<double> v(static_cast<std::size_t>(d.b) * cs * vol);
  for (int b = 0; b < d.b; ++b) {
    const double* src =
        a->value.data() + (static_cast<std::size_t>(b) * d.c + c_begin) * vol;
    std::copy(src, src + static_cast<std::size_t>(cs) * vol,
              v.data() + static_cast<std::size_t>(b) * cs * vol);
  }
  TensorPtr pa = a;
  return make_node({d.b, cs, d.t, d.y, d.x}, std::move(v), {a},
                   [pa, c_begin, cs, vol, nb = d.b, nc = d.c](Tensor& self) {
                     pa->ensure_grad();
                     for (int b = 0; b < nb; ++b) {
                       const double* g =
                           self.grad.data() + static_cast<std::size_t>(b) * cs * vol;
                       double* dst = pa->grad.data() +
                                     (static_cast<std::size_t>(b) * nc + c_begin) * vol;
                       const std::size_t n = static_cast<std::size_t>(cs) * vol;
                       ew(n, [&](std::size_t lo, std::size_t hi) {
                         for (std::size_t k = lo; k < hi; ++k) dst[k] += g[k];
                       });
                     }
                   });
}

TensorPtr crop_spatial(const TensorPtr& a, int margin) {
  Dims5 d = dims5(a, "crop_spatial");
  require(margin >= 0 && d.y > 2 * margin && d.x > 2 * margin,
          "crop_spatial: margin too large for spatial size");
  const int oy = d.y - 2 * margin, ox = d.x - 2 * margin;
  std::vector<double> v(static_cast<std::size_t>(d.b) * d.c * d.t * oy * ox);
  const std::size_t bct = static_cast<std::size_t>(d.b) * d.c * d.t;
  for (std::size_t s = 0; s < bct; ++s) {
    const double* src = a->value.data() + s * d.plane();
    double* dst = v.data() + s * oy * ox;
    for (int y = 0; y < oy; ++y)
      for (int x = 0; x < ox; ++x)
        dst[y * ox + x] = src[(y + margin) * d.x + (x + margin)];
  }
  TensorPtr pa = a;
  return make_node({d.b, d.c, d.t, oy, ox}, std::move(v), {a},
                   [pa, margin, oy, ox, bct, nx = d.x](Tensor& self) {
                     pa->ensure_grad();
                     for (std::size_t s = 0; s < bct; ++s) {
                       const double* g = self.grad.data() + s * oy * ox;
                       double* dst = pa->grad.data() +
                                     s * static_cast<std::size_t>(pa->shape[3]) * nx;
                       for (int y = 0; y < oy; ++y)
                         for (int x = 0; x < ox; ++x)
                           dst[(y + margin) * nx + (x + margin)] += g[y * ox + x];
                     }
                   });
}

TensorPtr frame_max(const TensorPtr& a) {
  require(a->shape.size() == 3, "frame_max: expected [T,Y,X], got " + shape_str(a->shape));
  const int t = a->shape[0];
  const std::size_t plane = static_cast<std::size_t>(a->shape[1]) * a->shape[2];
  require(plane > 0, "frame_max: empty frame");
  std::vector<double> v(t);
  std::vector<std::size_t> arg(t);
  for (int f = 0; f < t; ++f) {
    const double* p = a->value.data() + f * plane;
    std::size_t best = 0;
    for (std::size_t i = 1; i < plane; ++i)
      if (p[i] > p[best]) best = i;
    v[f] = p[best];
    arg[f] = best;
  }
  TensorPtr pa = a;
  return make_node({t}, std::move(v), {a}, [pa, arg, plane](Tensor& self) {
    pa->ensure_grad();
    for (std::size_t f = 0; f < arg.size(); ++f)
      pa->grad[f * plane + arg[f]] += self.grad[f];
  });
}

// ---------------------------------------------------------------------------
// convolutions
// ---------------------------------------------------------------------------

TensorPtr conv_spatial(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b) {
  Dims5 d = dims5(x, "conv_spatial");
  require(w->shape.size() == 4,
          "conv_spatial: kernel must be [out,in,ky,kx], got " + shape_str(w->shape));
  const int oc = w->shape[0], ic = w->shape[1], kh = w->shape[2], kw = w->shape[3];
  if (ic != d.c)
    fail("conv_spatial: in-channel axis mismatch: input has " + std::to_string(d.c) +
         " channels, kernel expects " + std::to_string(ic));
  require(kh % 2 == 1 && kw % 2 == 1, "conv_spatial: kernel spatial size must be odd");
  require(b->shape.size() == 1 && b->shape[0] == oc,
          "conv_spatial: bias must be [out]=" + std::to_string(oc) + ", got " +
              shape_str(b->shape));

  const int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
  const int T = d.t, Y = d.y, X = d.x, B = d.b;
  const std::size_t plane = d.plane(), vol = d.vol();
  std::vector<double> out(static_cast<std::size_t>(B) * oc * vol);

  const double* xv = x->value.data();
  const double* wv = w->value.data();
  const double* bv = b->value.data();
  parallel_for(static_cast<std::size_t>(B) * oc, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t bo = lo; bo < hi; ++bo) {
      const int bb = static_cast<int>(bo) / oc;
      const int o = static_cast<int>(bo) % oc;
      for (int t = 0; t < T; ++t) {
        double* op = out.data() + (bo * T + t) * plane;
        std::fill(op, op + plane, bv[o]);
        for (int i = 0; i < ic; ++i) {
          const double* xp = xv + ((static_cast<std::size_t>(bb) * ic + i) * T + t) * plane;
          const double* wr = wv + (static_cast<std::size_t>(o) * ic + i) * kh * kw;
          for (int ky = 0; ky < kh; ++ky) {
            const int dy = ky - ph;
            const int y0 = std::max(0, -dy), y1 = std::min(Y, Y - dy);
            for (int kx = 0; kx < kw; ++kx) {
              const double wt = wr[ky * kw + kx];
              const int dx = kx - pw;
              const int x0 = std::max(0, -dx), x1 = std::min(X, X - dx);
              for (int y = y0; y < y1; ++y) {
                const double* src = xp + static_cast<std::size_t>(y + dy) * X + dx;
                double* dst = op + static_cast<std::size_t>(y) * X;
                for (int xx = x0; xx < x1; ++xx) dst[xx] += wt * src[xx];
              }
            }
          }
        }
      }
    }
  });

  TensorPtr px = x, pw_ = w, pb = b;
  return make_node(
      {B, oc, T, Y, X}, std::move(out), {x, w, b},
      [px, pw_, pb, B, oc, ic, kh, kw, ph, pw, T, Y, X, plane, vol](Tensor& self) {
        const double* g = self.grad.data();
        // d/dx: correlate the output gradient with the flipped kernel.
        if (px->requires_grad) {
          px->ensure_grad();
          double* gx = px->grad.data();
          const double* wv = pw_->value.data();
          parallel_for(static_cast<std::size_t>(B) * ic, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t bi = lo; bi < hi; ++bi) {
              const int bb = static_cast<int>(bi) / ic;
              const int i = static_cast<int>(bi) % ic;
              for (int t = 0; t < T; ++t) {
                double* gxp = gx + (bi * T + t) * plane;
                for (int y = 0; y < Y; ++y) {
                  double* dst = gxp + static_cast<std::size_t>(y) * X;
                  for (int o = 0; o < oc; ++o) {
                    const double* gp =
                        g + ((static_cast<std::size_t>(bb) * oc + o) * T + t) * plane;
                    const double* wr = wv + (static_cast<std::size_t>(o) * ic + i) * kh * kw;
                    for (int ky = 0; ky < kh; ++ky) {
                      // gx[y] += g[y - dy] * w  for y - dy in [0, Y)
                      const int ys = y - (ky - ph);
                      if (ys < 0 || ys >= Y) continue;
                      const double* srow = gp + static_cast<std::size_t>(ys) * X;
                      for (int kx = 0; kx < kw; ++kx) {
                        const double wt = wr[ky * kw + kx];
                        const int dx = kx - pw;
                        const int x0 = std::max(0, dx), x1 = std::min(X, X + dx);
                        const double* src = srow - dx;
                        for (int xx = x0; xx < x1; ++xx) dst[xx] += wt * src[xx];
                      }
                    }
                  }
                }
              }
            }
          });
        }
        // d/dw: correlate input with output gradient.
        if (pw_->requires_grad) {
          pw_->ensure_grad();
          double* gw = pw_->grad.data();
          const double* xv = px->value.data();
          parallel_for(static_cast<std::size_t>(oc) * ic, [&](std::size_t lo, std::size_t hi) {
            std::vector<double> acc;
            for (std::size_t oi = lo; oi < hi; ++oi) {
              const int o = static_cast<int>(oi) / ic;
              const int i = static_cast<int>(oi) % ic;
              acc.assign(static_cast<std::size_t>(kh) * kw, 0.0);
              for (int bb = 0; bb < B; ++bb) {
                const double* gbase = g + (static_cast<std::size_t>(bb) * oc + o) * vol;
                const double* xbase = xv + (static_cast<std::size_t>(bb) * ic + i) * vol;
                for (int t = 0; t < T; ++t) {
                  const double* gp = gbase + static_cast<std::size_t>(t) * plane;
                  const double* xp = xbase + static_cast<std::size_t>(t) * plane;
                  for (int y = 0; y < Y; ++y) {
                    const double* grow = gp + static_cast<std::size_t>(y) * X;
                    for (int ky = 0; ky < kh; ++ky) {
                      const int yy = y + ky - ph;
                      if (yy < 0 || yy >= Y) continue;
                      const double* xrow = xp + static_cast<std::size_t>(yy) * X;
                      for (int kx = 0; kx < kw; ++kx) {
                        const int dx = kx - pw;
                        const int x0 = std::max(0, -dx), x1 = std::min(X, X - dx);
                        acc[ky * kw + kx] +=
                            dot_span(grow + x0, xrow + dx + x0,
                                     static_cast<std::size_t>(x1 - x0));
                      }
                    }
                  }
                }
              }
              double* gwr = gw + oi * kh * kw;
              for (int k = 0; k < kh * kw; ++k) gwr[k] += acc[k];
            }
          });
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          double* gb = pb->grad.data();
          for (int o = 0; o < oc; ++o) {
            double acc = 0.0;
            for (int bb = 0; bb < B; ++bb)
              acc += sum_span(g + (static_cast<std::size_t>(bb) * oc + o) * vol, vol);
            gb[o] += acc;
          }
        }
      });
}

TensorPtr conv_temporal(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b) {
  Dims5 d = dims5(x, "conv_temporal");
  require(w->shape.size() == 3,
          "conv_temporal: kernel must be [out,in,kt], got " + shape_str(w->shape));
  const int oc = w->shape[0], ic = w->shape[1], kt = w->shape[2];
  if (ic != d.c)
    fail("conv_temporal: in-channel axis mismatch: input has " + std::to_string(d.c) +
         " channels, kernel expects " + std::to_string(ic));
  require(kt % 2 == 1, "conv_temporal: kernel temporal size must be odd");
  require(b->shape.size() == 1 && b->shape[0] == oc,
          "conv_temporal: bias must be [out]=" + std::to_string(oc) + ", got " +
              shape_str(b->shape));

  const int pt = (kt - 1) / 2;
  const int T = d.t, B = d.b;
  const std::size_t plane = d.plane(), vol = d.vol();
  std::vector<double> out(static_cast<std::size_t>(B) * oc * vol);
  const double* xv = x->value.data();
  const double* wv = w->value.data();
  const double* bv = b->value.data();

  parallel_for(static_cast<std::size_t>(B) * oc, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t bo = lo; bo < hi; ++bo) {
      const int bb = static_cast<int>(bo) / oc;
      const int o = static_cast<int>(bo) % oc;
      double* obase = out.data() + bo * vol;
      std::fill(obase, obase + vol, bv[o]);
      for (int i = 0; i < ic; ++i) {
        const double* xbase = xv + (static_cast<std::size_t>(bb) * ic + i) * vol;
        const double* wr = wv + (static_cast<std::size_t>(o) * ic + i) * kt;
        for (int t = 0; t < T; ++t) {
          double* op = obase + static_cast<std::size_t>(t) * plane;
          for (int k = 0; k < kt; ++k) {
            const int ts = t + k - pt;
            if (ts < 0 || ts >= T) continue;
            const double wt = wr[k];
            const double* xp = xbase + static_cast<std::size_t>(ts) * plane;
            for (std::size_t p = 0; p < plane; ++p) op[p] += wt * xp[p];
          }
        }
      }
    }
  });

  TensorPtr px = x, pw_ = w, pb = b;
  return make_node(
      {B, oc, d.t, d.y, d.x}, std::move(out), {x, w, b},
      [px, pw_, pb, B, oc, ic, kt, pt, T, plane, vol](Tensor& self) {
        const double* g = self.grad.data();
        if (px->requires_grad) {
          px->ensure_grad();
          double* gx = px->grad.data();
          const double* wv = pw_->value.data();
          parallel_for(static_cast<std::size_t>(B) * ic, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t bi = lo; bi < hi; ++bi) {
              const int bb = static_cast<int>(bi) / ic;
              const int i = static_cast<int>(bi) % ic;
              double* gxbase = gx + bi * vol;
              for (int o = 0; o < oc; ++o) {
                const double* gbase = g + (static_cast<std::size_t>(bb) * oc + o) * vol;
                const double* wr = wv + (static_cast<std::size_t>(o) * ic + i) * kt;
                for (int t = 0; t < T; ++t) {
                  for (int k = 0; k < kt; ++k) {
                    const int ts = t + k - pt;
                    if (ts < 0 || ts >= T) continue;
                    const double wt = wr[k];
                    const double* gp = gbase + static_cast<std::size_t>(t) * plane;
                    double* dst = gxbase + static_cast<std::size_t>(ts) * plane;
                    for (std::size_t p = 0; p < plane; ++p) dst[p] += wt * gp[p];
                  }
                }
              }
            }
          });
        }
        if (pw_->requires_grad) {
          pw_->ensure_grad();
          double* gw = pw_->grad.data();
          const double* xv = px->value.data();
          parallel_for(static_cast<std::size_t>(oc) * ic, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t oi = lo; oi < hi; ++oi) {
              const int o = static_cast<int>(oi) / ic;
              const int i = static_cast<int>(oi) % ic;
              double* gwr = gw + oi * kt;
              for (int k = 0; k < kt; ++k) {
                double acc = 0.0;
                for (int bb = 0; bb < B; ++bb) {
                  const double* gbase = g + (static_cast<std::size_t>(bb) * oc + o) * vol;
                  const double* xbase = xv + (static_cast<std::size_t>(bb) * ic + i) * vol;
                  for (int t = 0; t < T; ++t) {
                    const int ts = t + k - pt;
                    if (ts < 0 || ts >= T) continue;
                    acc += dot_span(gbase + static_cast<std::size_t>(t) * plane,
                                    xbase + static_cast<std::size_t>(ts) * plane, plane);
                  }
                }
                gwr[k] += acc;
              }
            }
          });
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          double* gb = pb->grad.data();
          for (int o = 0; o < oc; ++o) {
            double acc = 0.0;
            for (int bb = 0; bb < B; ++bb)
              acc += sum_span(g + (static_cast<std::size_t>(bb) * oc + o) * vol, vol);
            gb[o] += acc;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// normalization / modulation / resampling / linear
// ---------------------------------------------------------------------------

TensorPtr group_norm(const TensorPtr& x, int groups, const TensorPtr& gamma,
                     const TensorPtr& beta, double eps) {
  Dims5 d = dims5(x, "group_norm");
  require(groups >= 1, "group_norm: groups must be >= 1");
  if (d.c % groups != 0)
    fail("group_norm: channel count " + std::to_string(d.c) +
         " not divisible by groups " + std::to_string(groups));
  require(gamma->shape.size() == 1 && gamma->shape[0] == d.c,
          "group_norm: gamma must be [C]");
  require(beta->shape.size() == 1 && beta->shape[0] == d.c, "group_norm: beta must be [C]");

  const int cg = d.c / groups;
  const std::size_t vol = d.vol();
  const std::size_t gsize = static_cast<std::size_t>(cg) * vol;
  const int ng = d.b * groups;

  std::vector<double> mu(ng), inv_s(ng);
  std::vector<double> out(x->value.size());
  const double* xv = x->value.data();
  const double* gl = gamma->value.data();
  const double* bl = beta->value.data();

  parallel_for(ng, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t gidx = lo; gidx < hi; ++gidx) {
      const double* base = xv + gidx * gsize;
      const double m = sum_span(base, gsize) / static_cast<double>(gsize);
      double v0 = 0.0, v1 = 0.0, v2 = 0.0, v3 = 0.0;
      std::size_t k = 0;
      for (; k + 4 <= gsize; k += 4) {
        const double d0 = base[k] - m, d1 = base[k + 1] - m;
        const double d2 = base[k + 2] - m, d3 = base[k + 3] - m;
        v0 += d0 * d0;
        v1 += d1 * d1;
        v2 += d2 * d2;
        v3 += d3 * d3;
      }
      double vt = 0.0;
      for (; k < gsize; ++k) {
        const double dv = base[k] - m;
        vt += dv * dv;
      }
      const double var = (((v0 + v1) + (v2 + v3)) + vt) / static_cast<double>(gsize);
      mu[gidx] = m;
      inv_s[gidx] = 1.0 / std::sqrt(var + eps);
      const int g = static_cast<int>(gidx) % groups;
      double* op = out.data() + gidx * gsize;
      for (int cc = 0; cc < cg; ++cc) {
        const int c = g * cg + cc;
        const double a = gl[c] * inv_s[gidx];
        const double b0 = bl[c] - a * m;
        const double* src = base + static_cast<std::size_t>(cc) * vol;
        double* dst = op + static_cast<std::size_t>(cc) * vol;
        for (std::size_t k2 = 0; k2 < vol; ++k2) dst[k2] = a * src[k2] + b0;
      }
    }
  });

  TensorPtr px = x, pg = gamma, pb = beta;
  return make_node(
      x->shape, std::move(out), {x, gamma, beta},
      [px, pg, pb, groups, cg, vol, gsize, ng, mu, inv_s](Tensor& self) {
        const double* g = self.grad.data();
        const double* xv = px->value.data();
        const double* gl = pg->value.data();
        if (px->requires_grad) {
          px->ensure_grad();
          double* gx = px->grad.data();
          parallel_for(ng, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t gidx = lo; gidx < hi; ++gidx) {
              const int grp = static_cast<int>(gidx) % groups;
              const double m = mu[gidx], is = inv_s[gidx];
              const double* xb = xv + gidx * gsize;
              const double* gb = g + gidx * gsize;
              // sums of dxhat and dxhat*xhat over the group
              double s1 = 0.0, s2 = 0.0;
              for (int cc = 0; cc < cg; ++cc) {
                const double gam = gl[grp * cg + cc];
                const double* xs = xb + static_cast<std::size_t>(cc) * vol;
                const double* gs = gb + static_cast<std::size_t>(cc) * vol;
                double a0 = 0.0, a1 = 0.0;
                for (std::size_t k = 0; k < vol; ++k) {
                  const double dxh = gs[k] * gam;
                  a0 += dxh;
                  a1 += dxh * (xs[k] - m);
                }
                s1 += a0;
                s2 += a1 * is;
              }
              const double inv_m = 1.0 / static_cast<double>(gsize);
              double* gxb = gx + gidx * gsize;
              for (int cc = 0; cc < cg; ++cc) {
                const double gam = gl[grp * cg + cc];
                const double* xs = xb + static_cast<std::size_t>(cc) * vol;
                const double* gs = gb + static_cast<std::size_t>(cc) * vol;
                double* gd = gxb + static_cast<std::size_t>(cc) * vol;
                for (std::size_t k = 0; k < vol; ++k) {
                  const double xhat = (xs[k] - m) * is;
                  const double dxh = gs[k] * gam;
                  gd[k] += (dxh - inv_m * (s1 + xhat * s2)) * is;
                }
              }
            }
          });
        }
        const int C = pg->shape[0];
        const int B = static_cast<int>(ng / groups);
        if (pg->requires_grad || pb->requires_grad) {
          pg->ensure_grad();
          pb->ensure_grad();
          for (int c = 0; c < C; ++c) {
            const int grp = c / cg, cc = c % cg;
            double dg = 0.0, db = 0.0;
            for (int b = 0; b < B; ++b) {
              const std::size_t gidx = static_cast<std::size_t>(b) * groups + grp;
              const double m = mu[gidx], is = inv_s[gidx];
              const double* xs = xv + gidx * gsize + static_cast<std::size_t>(cc) * vol;
              const double* gs = g + gidx * gsize + static_cast<std::size_t>(cc) * vol;
              for (std::size_t k = 0; k < vol; ++k) {
                dg += gs[k] * (xs[k] - m) * is;
                db += gs[k];
              }
            }
            if (pg->requires_grad) pg->grad[c] += dg;
            if (pb->requires_grad) pb->grad[c] += db;
          }
        }
      });
}

TensorPtr film(const TensorPtr& x, const TensorPtr& scale, const TensorPtr& shift) {
  Dims5 d = dims5(x, "film");
  auto check_mod = [&](const TensorPtr& m, const char* what) {
    if (!(m->shape.size() == 2 && m->shape[0] == d.b && m->shape[1] == d.c))
      fail(std::string("film: ") + what + " must be [B,C]=[" + std::to_string(d.b) +
           "," + std::to_string(d.c) + "], got " + shape_str(m->shape));
  };
  check_mod(scale, "scale");
  check_mod(shift, "shift");
  const std::size_t vol = d.vol();
  const int nbc = d.b * d.c;
  std::vector<double> out(x->value.size());
  parallel_for(nbc, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t bc = lo; bc < hi; ++bc) {
      const double s = 1.0 + scale->value[bc];
      const double sh = shift->value[bc];
      const double* src = x->value.data() + bc * vol;
      double* dst = out.data() + bc * vol;
      for (std::size_t k = 0; k < vol; ++k) dst[k] = src[k] * s + sh;
    }
  });
  TensorPtr px = x, ps = scale, pt = shift;
  return make_node(x->shape, std::move(out), {x, scale, shift},
                   [px, ps, pt, nbc, vol](Tensor& self) {
                     const double* g = self.grad.data();
                     if (px->requires_grad) px->ensure_grad();
                     if (ps->requires_grad) ps->ensure_grad();
                     if (pt->requires_grad) pt->ensure_grad();
                     parallel_for(nbc, [&](std::size_t lo, std::size_t hi) {
                       for (std::size_t bc = lo; bc < hi; ++bc) {
                         const std::size_t off = bc * vol;
                         if (px->requires_grad) {
                           const double s = 1.0 + ps->value[bc];
                           for (std::size_t k = 0; k < vol; ++k)
                             px->grad[off + k] += g[off + k] * s;
                         }
                         if (ps->requires_grad)
                           ps->grad[bc] += dot_span(g + off, px->value.data() + off, vol);
                         if (pt->requires_grad) pt->grad[bc] += sum_span(g + off, vol);
                       }
                     });
                   });
}

TensorPtr resample_down(const TensorPtr& x) {
  Dims5 d = dims5(x, "resample_down");
  if (d.y % 2 != 0 || d.x % 2 != 0)
    fail("resample_down: spatial size must be even, got y=" + std::to_string(d.y) +
         " x=" + std::to_string(d.x));
  const int oy = d.y / 2, ox = d.x / 2;
  const std::size_t bct = static_cast<std::size_t>(d.b) * d.c * d.t;
  std::vector<double> out(bct * oy * ox);
  for (std::size_t s = 0; s < bct; ++s) {
    const double* src = x->value.data() + s * d.plane();
    double* dst = out.data() + s * oy * ox;
    for (int y = 0; y < oy; ++y)
      for (int xx = 0; xx < ox; ++xx) {
        const double* p = src + static_cast<std::size_t>(2 * y) * d.x + 2 * xx;
        dst[y * ox + xx] = 0.25 * (p[0] + p[1] + p[d.x] + p[d.x + 1]);
      }
  }
  TensorPtr px = x;
  return make_node({d.b, d.c, d.t, oy, ox}, std::move(out), {x},
                   [px, bct, oy, ox, nx = d.x](Tensor& self) {
                     px->ensure_grad();
                     for (std::size_t s = 0; s < bct; ++s) {
                       const double* g = self.grad.data() + s * oy * ox;
                       double* dst = px->grad.data() + s * static_cast<std::size_t>(2 * oy) * nx;
                       for (int y = 0; y < oy; ++y)
                         for (int xx = 0; xx < ox; ++xx) {
                           const double gv = 0.25 * g[y * ox + xx];
                           double* p = dst + static_cast<std::size_t>(2 * y) * nx + 2 * xx;
                           p[0] += gv;
                           p[1] += gv;
                           p[nx] += gv;
                           p[nx + 1] += gv;
                         }
                     }
                   });
}

TensorPtr resample_up(const TensorPtr& x) {
  Dims5 d = dims5(x, "resample_up");
  const int oy = d.y * 2, ox = d.x * 2;
  const std::size_t bct = static_cast<std::size_t>(d.b) * d.c * d.t;
  std::vector<double> out(bct * oy * ox);
  for (std::size_t s = 0; s < bct; ++s) {
    const double* src = x->value.data() + s * d.plane();
    double* dst = out.data() + s * oy * ox;
    for (int y = 0; y < d.y; ++y)
      for (int xx = 0; xx < d.x; ++xx) {
        const double v = src[y * d.x + xx];
        double* p = dst + static_cast<std::size_t>(2 * y) * ox + 2 * xx;
        p[0] = v;
        p[1] = v;
        p[ox] = v;
        p[ox + 1] = v;
      }
  }
  TensorPtr px = x;
  return make_node({d.b, d.c, d.t, oy, ox}, std::move(out), {x},
                   [px, bct, ny = d.y, nx = d.x, ox](Tensor& self) {
                     px->ensure_grad();
                     for (std::size_t s = 0; s < bct; ++s) {
                       const double* g = self.grad.data() + s * static_cast<std::size_t>(2 * ny) * ox;
                       double* dst = px->grad.data() + s * static_cast<std::size_t>(ny) * nx;
                       for (int y = 0; y < ny; ++y)
                         for (int xx = 0; xx < nx; ++xx) {
                           const double* p = g + static_cast<std::size_t>(2 * y) * ox + 2 * xx;
                           dst[y * nx + xx] += p[0] + p[1] + p[ox] + p[ox + 1];
                         }
                     }
                   });
}

TensorPtr linear(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b) {
  require(x->shape.size() == 2, "linear: input must be [B,in], got " + shape_str(x->shape));
  require(w->shape.size() == 2, "linear: weight must be [out,in], got " + shape_str(w->shape));
  const int B = x->shape[0], in = x->shape[1];
  const int out_dim = w->shape[0];
  if (w->shape[1] != in)
    fail("linear: in-dimension mismatch: input has " + std::to_string(in) +
         ", weight expects " + std::to_string(w->shape[1]));
  require(b->shape.size() == 1 && b->shape[0] == out_dim,
          "linear: bias must be [out]=" + std::to_string(out_dim));
  std::vector<double> out(static_cast<std::size_t>(B) * out_dim);
  for (int bb = 0; bb < B; ++bb) {
    const double* xr = x->value.data() + static_cast<std::size_t>(bb) * in;
    double* orow = out.data() + static_cast<std::size_t>(bb) * out_dim;
    for (int o = 0; o < out_dim; ++o) {
      orow[o] = b->value[o] +
                dot_span(w->value.data() + static_cast<std::size_t>(o) * in, xr, in);
    }
  }
  TensorPtr px = x, pw = w, pb = b;
  return make_node({B, out_dim}, std::move(out), {x, w, b},
                   [px, pw, pb, B, in, out_dim](Tensor& self) {
                     const double* g = self.grad.data();
                     if (px->requires_grad) {
                       px->ensure_grad();
                       for (int bb = 0; bb < B; ++bb)
                         for (int o = 0; o < out_dim; ++o) {
                           const double gv = g[static_cast<std::size_t>(bb) * out_dim + o];
                           const double* wr = pw->value.data() + static_cast<std::size_t>(o) * in;
                           double* gx = px->grad.data() + static_cast<std::size_t>(bb) * in;
                           for (int i = 0; i < in; ++i) gx[i] += gv * wr[i];
                         }
                     }
                     if (pw->requires_grad) {
                       pw->ensure_grad();
                       for (int bb = 0; bb < B; ++bb)
                         for (int o = 0; o < out_dim; ++o) {
                           const double gv = g[static_cast<std::size_t>(bb) * out_dim + o];
                           const double* xr = px->value.data() + static_cast<std::size_t>(bb) * in;
                           double* gw = pw->grad.data() + static_cast<std::size_t>(o) * in;
                           for (int i = 0; i < in; ++i) gw[i] += gv * xr[i];
                         }
                     }
                     if (pb->requires_grad) {
                       pb->ensure_grad();
                       for (int bb = 0; bb < B; ++bb)
                         for (int o = 0; o < out_dim; ++o)
                           pb->grad[o] += g[static_cast<std::size_t>(bb) * out_dim + o];
                     }
                   });
}

TensorPtr coord_augment(const TensorPtr& x) {
  Dims5 d = dims5(x, "coord_augment");
  const std::size_t vol = d.vol(), plane = d.plane();
  std::vector<double> ycoord(plane), xcoord(plane);
  for (int y = 0; y < d.y; ++y) {
    const double yv = d.y > 1 ? -1.0 + 2.0 * y / (d.y - 1) : 0.0;
    for (int xx = 0; xx < d.x; ++xx) {
      const double xv = d.x > 1 ? -1.0 + 2.0 * xx / (d.x - 1) : 0.0;
      ycoord[y * d.x + xx] = yv;
      xcoord[y * d.x + xx] = xv;
    }
  }
  const int oc = d.c + 2;
  std::vector<double> out(static_cast<std::size_t>(d.b) * oc * vol);
  for (int b = 0; b < d.b; ++b) {
    const double* src = x->value.data() + static_cast<std::size_t>(b) * d.c * vol;
    double* dst = out.data() + static_cast<std::size_t>(b) * oc * vol;
    std::copy(src, src + static_cast<std::size_t>(d.c) * vol, dst);
    double* yc = dst + static_cast<std::size_t>(d.c) * vol;
    double* xc = dst + static_cast<std::size_t>(d.c + 1) * vol;
    for (int t = 0; t < d.t; ++t) {
      std::copy(ycoord.begin(), ycoord.end(), yc + static_cast<std::size_t>(t) * plane);
      std::copy(xcoord.begin(), xcoord.end(), xc + static_cast<std::size_t>(t) * plane);
    }
  }
  TensorPtr px = x;
  return make_node({d.b, oc, d.t, d.y, d.x}, std::move(out), {x},
                   [px, nb = d.b, nc = d.c, oc, vol](Tensor& self) {
                     px->ensure_grad();
                     for (int b = 0; b < nb; ++b) {
                       const double* g = self.grad.data() + static_cast<std::size_t>(b) * oc * vol;
                       double* dst = px->grad.data() + static_cast<std::size_t>(b) * nc * vol;
                       const std::size_t n = static_cast<std::size_t>(nc) * vol;
                       ew(n, [&](std::size_t lo, std::size_t hi) {
                         for (std::size_t k = lo; k < hi; ++k) dst[k] += g[k];
                       });
                     }
                   });
}

TensorPtr scale_by_map(const TensorPtr& x, const TensorPtr& m) {
  Dims5 d = dims5(x, "scale_by_map");
  Dims5 dm = dims5(m, "scale_by_map");
  if (!(dm.b == d.b && dm.c == 1 && dm.t == d.t && dm.y == d.y && dm.x == d.x))
    fail("scale_by_map: map must be [B,1,T,Y,X] matching input, got " +
         shape_str(m->shape) + " for input " + shape_str(x->shape));
  const std::size_t vol = d.vol();
  std::vector<double> out(x->value.size());
  for (int b = 0; b < d.b; ++b) {
    const double* mp = m->value.data() + static_cast<std::size_t>(b) * vol;
    for (int c = 0; c < d.c; ++c) {
      const double* src = x->value.data() + (static_cast<std::size_t>(b) * d.c + c) * vol;
      double* dst = out.data() + (static_cast<std::size_t>(b) * d.c + c) * vol;
      for (std::size_t k = 0; k < vol; ++k) dst[k] = src[k] * mp[k];
    }
  }
  TensorPtr px = x, pm = m;
  return make_node(x->shape, std::move(out), {x, m},
                   [px, pm, nb = d.b, nc = d.c, vol](Tensor& self) {
                     const double* g = self.grad.data();
                     if (px->requires_grad) {
                       px->ensure_grad();
                       for (int b = 0; b < nb; ++b) {
                         const double* mp = pm->value.data() + static_cast<std::size_t>(b) * vol;
                         for (int c = 0; c < nc; ++c) {
                           const std::size_t off = (static_cast<std::size_t>(b) * nc + c) * vol;
                           for (std::size_t k = 0; k < vol; ++k)
                             px->grad[off + k] += g[off + k] * mp[k];
                         }
                       }
                     }
                     if (pm->requires_grad) {
                       pm->ensure_grad();
                       for (int b = 0; b < nb; ++b) {
                         double* gm = pm->grad.data() + static_cast<std::size_t>(b) * vol;
                         for (int c = 0; c < nc; ++c) {
                           const std::size_t off = (static_cast<std::size_t>(b) * nc + c) * vol;
                           for (std::size_t k = 0; k < vol; ++k)
                             gm[k] += g[off + k] * px->value[off + k];
                         }
                       }
                     }
                   });
}

TensorPtr rss_channels(const TensorPtr& x) {
  Dims5 d = dims5(x, "rss_channels");
  if (d.c % 2 != 0)
    fail("rss_channels: channel count must be even (re/im pairs), got " +
         std::to_string(d.c));
  const std::size_t vol = d.vol();
  // Tiny smoothing keeps the derivative finite at exact zeros.
  constexpr double kEps = 1e-24;
  std::vector<double> out(static_cast<std::size_t>(d.b) * vol);
  for (int b = 0; b < d.b; ++b) {
    double* dst = out.data() + static_cast<std::size_t>(b) * vol;
    std::fill(dst, dst + vol, kEps);
    for (int c = 0; c < d.c; ++c) {
      const double* src = x->value.data() + (static_cast<std::size_t>(b) * d.c + c) * vol;
      for (std::size_t k = 0; k < vol; ++k) dst[k] += src[k] * src[k];
    }
    for (std::size_t k = 0; k < vol; ++k) dst[k] = std::sqrt(dst[k]);
  }
  TensorPtr px = x;
  return make_node({d.b, 1, d.t, d.y, d.x}, std::move(out), {x},
                   [px, nb = d.b, nc = d.c, vol](Tensor& self) {
                     px->ensure_grad();
                     const double* g = self.grad.data();
                     for (int b = 0; b < nb; ++b) {
                       const double* ov = self.value.data() + static_cast<std::size_t>(b) * vol;
                       const double* gv = g + static_cast<std::size_t>(b) * vol;
                       for (int c = 0; c < nc; ++c) {
                         const std::size_t off = (static_cast<std::size_t>(b) * nc + c) * vol;
                         for (std::size_t k = 0; k < vol; ++k)
                           px->grad[off + k] += gv[k] * px->value[off + k] / ov[k];
                       }
                     }
                   });
}

// ---------------------------------------------------------------------------
// parameters
// ---------------------------------------------------------------------------

TensorPtr ParamRegistry::add(const std::string& name, std::vector<int> shape,
                             std::vector<double> init, bool trainable) {
  for (const auto& p : params_) {
    if (p.name == name) fail("ParamRegistry: duplicate parameter name '" + name + "'");
  }
  auto t = leaf(std::move(shape), std::move(init), trainable);
  params_.push_back(Parameter{name, t, trainable});
  return t;
}

std::int64_t ParamRegistry::trainable_scalar_count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) {
    if (p.trainable) n += static_cast<std::int64_t>(p.tensor->numel());
  }
  return n;
}

void ParamRegistry::zero_grad() {
  for (auto& p : params_) p.tensor->zero_grad();
}

const Parameter* ParamRegistry::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

// ---------------------------------------------------------------------------
// finite differences
// ---------------------------------------------------------------------------

double grad_check(const std::function<TensorPtr(const std::vector<TensorPtr>&)>& f,
                  const std::vector<TensorPtr>& points, double h, int coord_budget,
                  std::uint64_t seed) {
  require(h > 0.0, "grad_check: step must be positive");
  for (const auto& p : points) {
    require(p->requires_grad && p->is_leaf(), "grad_check: points must be grad-enabled leaves");
    p->zero_grad();
  }
  TensorPtr root = f(points);
  require(root->numel() == 1, "grad_check: f must be scalar-valued");
  backward(root);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(points.size());
  for (const auto& p : points) {
    p->ensure_grad();
    analytic.push_back(p->grad);
  }

  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (std::size_t pi = 0; pi < points.size(); ++pi) {
    Tensor& t = *points[pi];
    const std::size_t n = t.value.size();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), 0);
    if (coord_budget > 0 && n > static_cast<std::size_t>(coord_budget)) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(coord_budget);
    }
    NoGradGuard ng;
    for (std::size_t ci : coords) {
      const double saved = t.value[ci];
      t.value[ci] = saved + h;
      const double fp = f(points)->value[0];
      t.value[ci] = saved - h;
      const double fm = f(points)->value[0];
      t.value[ci] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[pi][ci];
      const double err =
          std::fabs(a - numeric) / (std::max(std::fabs(a), std::fabs(numeric)) + 1e-8);
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace nsrc::ad
