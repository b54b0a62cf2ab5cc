#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tdce/diffcore/param_set.hpp"
#include "tdce/diffcore/tensor.hpp"

namespace tdce::diff {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

enum class Padding { same, valid };

struct Conv2dOptions {
  int stride = 1;
  Padding padding = Padding::same;
};

// Records a forward computation over (C,H,W) feature maps and vectors and
// replays it in reverse to produce gradients. A tape belongs to one thread
// and may be consumed by backward() exactly once.
//
// Operator shape rules:
//   conv2d   x (Cin,H,W), w (Cout,Cin,K,K), b (Cout) -> (Cout,Ho,Wo); same pads K/2
//   max_pool2 / upsample2  (C,H,W) -> (C,H/2,W/2) / (C,2H,2W); pool needs even H,W
//   global_avg_pool (C,H,W) -> (C)
//   dense    x (In), w (Out,In), b (Out) -> (Out)
//   concat   along channels; all inputs share H,W
//   bce_with_logits  scalar logit (1) -> scalar loss (1)
class Tape {
 public:
  explicit Tape(const ParamSet& params);

  Var input(Tensor value, bool requires_grad = false);
  Var param(std::string_view name);

  Var conv2d(Var x, Var w, Var b, Conv2dOptions opt = {});
  Var relu(Var x);
  Var max_pool2(Var x);
  Var upsample2(Var x);
  Var global_avg_pool(Var x);
  Var dense(Var x, Var w, Var b);
  Var concat(std::span<const Var> xs);
  Var concat(std::initializer_list<Var> xs) { return concat(std::span<const Var>(xs.begin(), xs.size())); }
  Var sigmoid(Var x);
  Var bce_with_logits(Var logit, double label);
  Var add(Var a, Var b);
  Var scale(Var x, double s);

  const Tensor& value(Var v) const;
  std::size_t node_count() const noexcept { return nodes_.size(); }

  // Seeds d(output) with `output_grad` (ones for scalars when omitted) and
  // returns one gradient per parameter of the ParamSet, frozen or not.
  Gradients backward(Var output, const Tensor& output_grad);
  Gradients backward(Var output);
  // Adds the parameter gradients into `grads` (sized like the ParamSet)
  // instead of allocating a fresh set.
  void backward_into(Var output, const Tensor& output_grad, Gradients& grads);

  // Gradient w.r.t. an input created with requires_grad, after backward().
  const Tensor& grad(Var v) const;

 private:
  enum class Op { input, param, conv2d, relu, max_pool2, upsample2, gap, dense, concat, sigmoid, bce, add, scale };

  struct Node {
    Op op;
    std::vector<std::size_t> in{};
    Tensor value{};
    Tensor grad{};
    bool requires_grad = false;
    std::size_t param_index = 0;
    Conv2dOptions conv{};
    double scalar = 0.0;
    std::vector<std::uint32_t> argmax{};
  };

  const Node& node(Var v) const;
  Var push(Node n);
  void check_live(const char* op) const;
  void ensure_grad(std::size_t id);
  Tensor& grad_target(std::size_t id);
  void backprop(std::size_t id);

  const ParamSet* params_;
  std::vector<Node> nodes_;
  bool consumed_ = false;
  Gradients* accum_ = nullptr;
};

}  // namespace tdce::diff
