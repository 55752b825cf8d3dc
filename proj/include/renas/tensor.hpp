#ifndef RENAS_TENSOR_HPP
#define RENAS_TENSOR_HPP

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace renas {

/// Dense rank-4 array (batch, channels, height, width) in 64-bit precision.
/// Gradients live alongside the values; `grad` stays empty until a backward
/// pass touches the tensor.
struct Tensor {
  std::array<int, 4> shape{1, 1, 1, 1};
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<double> grad;
  std::string name;  // set for named parameters only

  std::int64_t numel() const {
    return std::int64_t(shape[0]) * shape[1] * shape[2] * shape[3];
  }
  std::int64_t index(int b, int c, int h, int w) const {
    return ((std::int64_t(b) * shape[1] + c) * shape[2] + h) * shape[3] + w;
  }
  double& at(int b, int c, int h, int w) { return values[index(b, c, h, w)]; }
  double at(int b, int c, int h, int w) const { return values[index(b, c, h, w)]; }
  bool is_scalar() const { return numel() == 1; }

  void ensure_grad();
  void zero_grad() { grad.clear(); }
  bool all_finite() const;
};

using TensorPtr = std::shared_ptr<Tensor>;

TensorPtr make_tensor(std::array<int, 4> shape, bool requires_grad = false);
TensorPtr make_tensor(std::array<int, 4> shape, std::vector<double> values,
                      bool requires_grad = false);
TensorPtr make_scalar(double v, bool requires_grad = false);

/// Records every differentiable operation of one forward pass in topological
/// order. A single backward traversal populates gradients; a tape can be
/// consumed by backward() exactly once.
class Tape {
 public:
  struct Node {
    std::vector<TensorPtr> inputs;
    TensorPtr output;
    std::function<void()> backward;
  };

  void record(std::vector<TensorPtr> inputs, TensorPtr output,
              std::function<void()> backward);
  const std::vector<Node>& nodes() const { return nodes_; }
  bool consumed() const { return consumed_; }
  void mark_consumed() { consumed_ = true; }

 private:
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// -- primitive ops -----------------------------------------------------------

TensorPtr conv2d(Tape& tape, const TensorPtr& x, const TensorPtr& w, int stride,
                 int pad);
TensorPtr depthwise_conv2d(Tape& tape, const TensorPtr& x, const TensorPtr& w,
                           int stride, int pad);
TensorPtr dw_separable_conv(Tape& tape, const TensorPtr& x,
                            const TensorPtr& w_depth, const TensorPtr& w_point,
                            int stride, int pad);
TensorPtr relu(Tape& tape, const TensorPtr& x);
TensorPtr global_avg_pool(Tape& tape, const TensorPtr& x);
TensorPtr linear(Tape& tape, const TensorPtr& x, const TensorPtr& w,
                 const TensorPtr& b);
TensorPtr cross_entropy(Tape& tape, const TensorPtr& logits,
                        const std::vector<int>& labels);

TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(Tape& tape, const TensorPtr& x, const TensorPtr& s);
TensorPtr slice_channels(Tape& tape, const TensorPtr& x, int c_begin, int c_end);
TensorPtr concat_channels(Tape& tape, const std::vector<TensorPtr>& parts);
/// Scalar view of one element of `t`; backward scatters into that element.
TensorPtr element(Tape& tape, const TensorPtr& t, std::int64_t flat_index);
/// Scalar sum of all entries.
TensorPtr reduce_sum(Tape& tape, const TensorPtr& x);

/// Row-wise softmax of a (batch, classes, 1, 1) tensor, no tape involvement.
std::vector<double> softmax_row(const std::vector<double>& logits);

void backward(Tape& tape, const TensorPtr& loss);

/// Central finite differences against the autodiff gradient of f at x.
/// Returns the max relative error with denominator max(|a|, |b|, 1e-8).
/// f must rebuild its graph on the supplied tape at each call.
double finite_diff_check(
    const std::function<TensorPtr(Tape&, const TensorPtr&)>& f,
    const TensorPtr& x, double eps = 1e-5);

}  // namespace renas

#endif
