#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "aoisim/common.hpp"

namespace aoisim {

// Dense row-major 64-bit tensor. Plain value type; autodiff bookkeeping lives
// in Tape, not here.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<int> shape_, std::vector<double> data_);

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double v);
    static Tensor scalar(double v);
    static Tensor row(std::vector<double> v);              // [1, n]
    static Tensor column(std::vector<double> v);           // [n, 1]
    static Tensor matrix(int rows, int cols, std::vector<double> v);

    size_t numel() const { return data.size(); }
    bool empty() const { return data.empty(); }
    int rows() const;
    int cols() const;
    double& at(int r, int c);
    double at(int r, int c) const;
    double item() const;  // requires numel() == 1

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;
};

// Learnable weight plus its optimizer state. grad accumulates across backward
// calls until zero_grad().
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor adam_m;
    Tensor adam_v;
    long step_count = 0;

    Parameter() = default;
    Parameter(std::string name_, Tensor value_);

    void zero_grad();
};

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid as long as the tape lives.
struct Value {
    Tape* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
};

namespace detail {

// Shared numeric kernels. The action sampler reuses these so that the
// log-probabilities it stores are bit-identical to what the tape recomputes.
void softmax_row(std::span<const double> in, std::span<double> out);
void log_softmax_row(std::span<const double> in, std::span<double> out);
void matmul_kernel(const double* a, const double* b, double* c, int m, int k, int n);

}  // namespace detail

// Recorded computation graph. Construct one per forward pass (or per shard of
// a minibatch); a tape and its nodes are confined to one thread.
//
// With recording disabled the ops compute forward values only; backward() is
// then unavailable. Parameters entered via param() are remembered so that
// backward() can route their gradients.
class Tape {
  public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return recording_; }
    size_t size() const { return nodes_.size(); }

    // Leaves.
    Value input(Tensor t);                // constant, no gradient
    Value param(Parameter& p);            // learnable leaf; cached per tape

    // Ops. Shapes are validated; mismatches throw DimensionError.
    Value matmul(Value a, Value b);                       // [m,k]x[k,n] -> [m,n]
    Value transpose(Value a);                             // [m,n] -> [n,m]
    Value add(Value a, Value b);                          // same shape
    Value sub(Value a, Value b);
    Value mul(Value a, Value b);                          // elementwise
    Value add_row_broadcast(Value a, Value row);          // [m,n] + [1,n]
    Value scale(Value a, double c);
    Value add_const(Value a, double c);
    Value relu(Value a);
    Value exp(Value a);
    Value minimum(Value a, Value b);                      // ties route grad to a
    Value clamp(Value a, double lo, double hi);
    Value softmax_rows(Value a);
    Value log_softmax_rows(Value a);
    Value layer_norm(Value x, Value gain, Value bias, double eps);
    Value sum(Value a);                                   // -> [1,1]
    Value mean(Value a);                                  // -> [1,1]
    Value mean_rows(Value a);                             // [m,n] -> [1,n]
    Value row_sum(Value a);                               // [m,n] -> [m,1]
    Value gather_rows(Value a, std::vector<int> col_of_row);  // -> [m,1]
    Value slice_rows(Value a, int r0, int r1);            // rows [r0, r1)
    Value slice_cols(Value a, int c0, int c1);            // cols [c0, c1)
    Value concat_cols(const std::vector<Value>& parts);
    Value stack_scalars(const std::vector<Value>& scalars);  // -> [k,1]

    const Tensor& val(Value v) const;

    // Reverse pass from a scalar loss. Gradients of watched Parameters are
    // accumulated into Parameter::grad (or into `sink` when given, for
    // thread-sharded accumulation). May be called repeatedly; each call adds
    // its contribution, matching the explicit-zeroing contract.
    void backward(Value loss);
    void backward(Value loss, std::unordered_map<Parameter*, Tensor>& sink);

    // Gradient of `wrt` from the most recent backward() call on this tape.
    // Zero tensor if the node was not reached.
    Tensor grad_of(Value wrt) const;

  private:
    struct Node {
        Tensor value;
        bool needs_grad = false;
        std::function<void()> backprop;  // adds into grads_ of its inputs
    };

    int push(Tensor value, bool needs_grad, std::function<void()> backprop);
    Tensor& grad_buf(int id);
    const Node& node(Value v) const;
    void check_same_tape(Value v) const;
    void run_backward(Value loss, const std::function<void(Parameter&, const Tensor&)>& emit);

    bool recording_ = true;
    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    std::vector<std::pair<Parameter*, int>> watched_;
    std::unordered_map<Parameter*, int> param_cache_;
};

// One Adam update with bias correction over every parameter; gradients are
// left untouched.
void adam_step(const std::vector<Parameter*>& params, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

// Global-norm gradient clipping; no-op when max_norm <= 0.
void clip_grad_norm(const std::vector<Parameter*>& params, double max_norm);

double grad_norm(const std::vector<Parameter*>& params);

// Central-difference gradient check. `eval(true)` must run the forward pass
// with recording and call backward so parameter grads are populated;
// `eval(false)` must run the same deterministic forward and only return the
// scalar. Returns max over coordinates of |g_ad - g_fd| / max(1, |g_fd|).
double finite_diff_check(const std::function<double(bool with_grad)>& eval,
                         const std::vector<Parameter*>& params, double h);

}  // namespace aoisim
