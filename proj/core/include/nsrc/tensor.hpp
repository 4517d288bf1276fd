#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "nsrc/common.hpp"

namespace nsrc::ad {

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense real-valued tensor node of a reverse-mode graph. Complex data enters
// as pairs of real channels. Double precision throughout; the verification
// tolerances assume it.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated by backward(), same numel as value
  bool requires_grad = false;

  // Reverse graph. A leaf has no producing operation (parents empty).
  std::vector<TensorPtr> parents;
  std::function<void(Tensor&)> backprop;

  std::size_t numel() const;
  bool is_leaf() const { return parents.empty(); }
  void ensure_grad();
  void zero_grad();
  double* grad_data() { return grad.data(); }
};

std::size_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Leaf/constant construction. A leaf participates in grad accumulation when
// requires_grad is set; a constant never does.
TensorPtr leaf(std::vector<int> shape, bool requires_grad = true);
TensorPtr leaf(std::vector<int> shape, std::vector<double> data, bool requires_grad = true);
TensorPtr constant(std::vector<int> shape, std::vector<double> data);
TensorPtr zeros(std::vector<int> shape, bool requires_grad = false);
TensorPtr scalar(double v, bool requires_grad = false);

// Graph recording switch (thread-local). Inside a NoGradGuard all ops produce
// plain constants; used for inference and numeric differencing.
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

// Reverse pass from a scalar root. Gradients accumulate additively along all
// paths; each node is visited exactly once in reverse topological order.
void backward(const TensorPtr& root);

// ---- elementwise and reductions ----
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr div(const TensorPtr& a, const TensorPtr& b);
TensorPtr neg(const TensorPtr& a);
TensorPtr add_scalar(const TensorPtr& a, double s);
TensorPtr mul_scalar(const TensorPtr& a, double s);
TensorPtr exp_op(const TensorPtr& a);
TensorPtr relu(const TensorPtr& a);  // subgradient 0 at and below the hinge
TensorPtr sqrt_eps(const TensorPtr& a, double eps);
TensorPtr sum(const TensorPtr& a);
TensorPtr mean(const TensorPtr& a);
TensorPtr sum_abs(const TensorPtr& a);  // subgradient 0 at 0

enum class Act { kSilu, kSigmoid, kTanh };
TensorPtr activation(const TensorPtr& a, Act kind);

// ---- structural ----
TensorPtr reshape(const TensorPtr& a, std::vector<int> shape);
TensorPtr concat_channels(const std::vector<TensorPtr>& xs);          // rank-5, axis 1
TensorPtr slice_channels(const TensorPtr& a, int c_begin, int c_end);  // rank-5
TensorPtr crop_spatial(const TensorPtr& a, int margin);                // rank-5, y/x
TensorPtr frame_max(const TensorPtr& a);  // [T,Y,X] -> [T], grad to first argmax

// ---- network building blocks ----
// x: [B,C,T,Y,X]; w: [O,I,KH,KW] odd kernel; "same" zero padding.
TensorPtr conv_spatial(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b);
// w: [O,I,KT] odd kernel, "same" zero padding along t.
TensorPtr conv_temporal(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b);
TensorPtr group_norm(const TensorPtr& x, int groups, const TensorPtr& gamma,
                     const TensorPtr& beta, double eps = 1e-5);
// out = x * (1 + scale) + shift, scale/shift [B,C] broadcast over t,y,x.
TensorPtr film(const TensorPtr& x, const TensorPtr& scale, const TensorPtr& shift);
TensorPtr resample_down(const TensorPtr& x);  // 2x2 spatial average pooling
TensorPtr resample_up(const TensorPtr& x);    // nearest-neighbor doubling
TensorPtr linear(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b);
// Appends two channels holding normalized y/x coordinates in [-1, 1].
TensorPtr coord_augment(const TensorPtr& x);
// out[b,c,...] = x[b,c,...] * m[b,0,...], m broadcast over channels.
TensorPtr scale_by_map(const TensorPtr& x, const TensorPtr& m);
// x: [B,2K,T,Y,X] (re/im channel pairs) -> [B,1,T,Y,X] root-sum-of-squares.
TensorPtr rss_channels(const TensorPtr& x);

// ---- named parameters ----
struct Parameter {
  std::string name;
  TensorPtr tensor;
  bool trainable = true;
};

class ParamRegistry {
 public:
  TensorPtr add(const std::string& name, std::vector<int> shape,
                std::vector<double> init, bool trainable = true);
  const std::vector<Parameter>& params() const { return params_; }
  std::vector<Parameter>& params() { return params_; }
  std::int64_t trainable_scalar_count() const;
  void zero_grad();
  const Parameter* find(const std::string& name) const;

 private:
  std::vector<Parameter> params_;
};

// ---- finite-difference verification ----
// Central differences (f(x+h e_i) - f(x-h e_i)) / (2h) per coordinate of every
// tensor in `points`, compared against backward(). Returns the worst relative
// error, |a - n| / (max(|a|, |n|) + 1e-8). If coord_budget > 0, at most that
// many coordinates per tensor are checked (deterministic subsample by seed).
double grad_check(const std::function<TensorPtr(const std::vector<TensorPtr>&)>& f,
                  const std::vector<TensorPtr>& points, double h = 1e-5,
                  int coord_budget = 0, std::uint64_t seed = 12345);

}  // namespace nsrc::ad
