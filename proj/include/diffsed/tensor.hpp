#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "diffsed/rng.hpp"

namespace diffsed {

// Reverse-mode autodiff over dense row-major f64 tensors. The op set is
// fixed to what the detector and losses need: matmul, elementwise
// arithmetic, exp/log/sqrt/tanh/sigmoid/relu, softmax, layer_norm,
// reshape/transpose/concat/slice, sum/mean/max reductions, row gather
// (embedding lookup) and dropout.
//
// A Tensor is a shared handle onto a graph node. Forward ops record the
// tape; Tensor::backward() runs reverse accumulation and then frees the
// tape. Leaf gradients can be redirected into a GradSink so independent
// graphs built on different threads never write to shared parameter nodes.

class Tensor;

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

// Collects leaf gradients keyed by node identity.
class GradSink {
public:
    void accumulate(const TensorNode* node, const std::vector<double>& g);
    // Adds every buffer in `other` into this sink.
    void merge(const GradSink& other);
    const std::vector<double>* find(const TensorNode* node) const;
    void clear() { grads_.clear(); }

private:
    std::unordered_map<const TensorNode*, std::vector<double>> grads_;
};

struct TensorNode {
    std::vector<size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;   // sized lazily on first accumulation
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(TensorNode&, GradSink*)> backward_fn;

    size_t numel() const { return data.size(); }
    bool is_leaf() const { return parents.empty(); }
    void ensure_grad();
};

// RAII guard that suspends tape recording on the current thread; forward
// passes made under it produce constant tensors (used for validation and
// inference).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

class Tensor {
public:
    Tensor() = default;
    // Fresh zero tensor of the given shape.
    explicit Tensor(std::vector<size_t> shape);
    Tensor(std::vector<size_t> shape, std::vector<double> data);

    static Tensor zeros(std::vector<size_t> shape);
    static Tensor full(std::vector<size_t> shape, double value);
    static Tensor from_scalar(double value);   // shape {1}
    static Tensor randn(std::vector<size_t> shape, Rng& rng);
    static Tensor rand_uniform(std::vector<size_t> shape, Rng& rng, double lo, double hi);

    bool defined() const { return node_ != nullptr; }
    const std::vector<size_t>& shape() const;
    size_t rank() const { return shape().size(); }
    size_t numel() const;
    size_t rows() const;     // rank-2 helpers
    size_t cols() const;

    const std::vector<double>& data() const;
    std::vector<double>& data();
    double value() const;    // single-element tensors only
    double at(size_t r, size_t c) const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool v);
    const std::vector<double>& grad() const;
    bool has_grad() const;
    void zero_grad();
    // Detached copy of the values (constant, no tape).
    Tensor detach() const;

    // Reverse pass from a single-element root. Leaf gradients go into
    // `sink` when given, otherwise into each leaf's grad buffer. The tape
    // (parent links and backward closures) is freed afterwards.
    void backward(GradSink* sink = nullptr);

    bool all_finite() const;

    TensorNode* node() const { return node_.get(); }
    const NodePtr& node_ptr() const { return node_; }

private:
    friend Tensor make_op(std::vector<size_t> shape, std::vector<double> data,
                          std::vector<Tensor> parents,
                          std::function<void(TensorNode&, GradSink*)> backward);
    NodePtr node_;
};

// --- elementwise arithmetic (same shape, or b spanning the trailing axis) ---
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);

// --- linear algebra ---
Tensor matmul(const Tensor& a, const Tensor& b);   // [m×k]·[k×n]
Tensor transpose(const Tensor& a);                 // rank-2

// --- shape ops ---
Tensor reshape(const Tensor& a, std::vector<size_t> shape);
Tensor concat(const std::vector<Tensor>& parts, size_t axis);   // rank-2, axis 0|1
Tensor slice(const Tensor& a, size_t r0, size_t r1, size_t c0, size_t c1);  // rank-2

// --- softmax / layer norm ---
Tensor softmax(const Tensor& a, size_t axis);      // rank-2
// Normalizes the trailing axis of a rank-2 input, then applies gain/bias
// (each of width cols).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

// --- reductions (to shape {1}) ---
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor max(const Tensor& a);   // subgradient routed to the first max element

// --- gather / dropout ---
// rows[i] = table[ids[i]]; backward scatter-adds into the table.
Tensor gather_rows(const Tensor& table, const std::vector<int64_t>& ids);
// Inverted dropout; identity when !training or rate == 0.
Tensor dropout(const Tensor& a, double rate, Rng& rng, bool training);

// --- compositions (no new primitives) ---
Tensor emin(const Tensor& a, const Tensor& b);   // b - relu(b - a)
Tensor emax(const Tensor& a, const Tensor& b);   // b + relu(a - b)
Tensor abs(const Tensor& a);                     // relu(a) + relu(-a)

// Raw GEMM helpers shared by forward and backward paths. C += op(A)·op(B).
void gemm_nn(size_t m, size_t k, size_t n, const double* a, const double* b, double* c);
void gemm_nt(size_t m, size_t k, size_t n, const double* a, const double* b, double* c);
void gemm_tn(size_t m, size_t k, size_t n, const double* a, const double* b, double* c);

// A named trainable tensor. Names are unique within a ParamStore.
struct Parameter {
    std::string name;
    Tensor tensor;
};

class ParamStore {
public:
    // Registers a fresh parameter; throws on duplicate or empty name.
    Tensor& add(const std::string& name, Tensor init);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool contains(const std::string& name) const;

    size_t size() const { return params_.size(); }
    std::vector<Parameter>& items() { return params_; }
    const std::vector<Parameter>& items() const { return params_; }

    // Moves sink buffers into the parameters' grad fields (adding to any
    // existing grad).
    void apply_sink(const GradSink& sink);
    void zero_grads();
    // Deep copy of all values (used for best-checkpoint snapshots).
    std::vector<std::vector<double>> snapshot_values() const;
    void restore_values(const std::vector<std::vector<double>>& values);

private:
    std::vector<Parameter> params_;
    std::unordered_map<std::string, size_t> index_;
};

}  // namespace diffsed
