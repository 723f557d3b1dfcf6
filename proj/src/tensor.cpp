#include "diffsed/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace diffsed {

namespace {
thread_local int g_no_grad_depth = 0;

size_t shape_numel(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) {
        if (d == 0) throw std::invalid_argument("tensor shape has a zero dimension");
        n *= d;
    }
    return n;
}

void check_rank2(const Tensor& t, const char* what) {
    if (t.rank() != 2) throw std::invalid_argument(std::string(what) + ": rank-2 tensor required");
}

// Gradient accumulation: leaves can be redirected into a sink so shared
// parameter nodes are never written from worker threads.
void accum(const NodePtr& n, GradSink* sink, const std::vector<double>& g) {
    if (!n->requires_grad) return;
    if (sink && n->is_leaf()) {
        sink->accumulate(n.get(), g);
        return;
    }
    n->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) n->grad[i] += g[i];
}
}  // namespace

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

void TensorNode::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void GradSink::accumulate(const TensorNode* node, const std::vector<double>& g) {
    auto& buf = grads_[node];
    if (buf.empty()) buf.assign(g.size(), 0.0);
    for (size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

void GradSink::merge(const GradSink& other) {
    for (const auto& [node, g] : other.grads_) {
        auto& buf = grads_[node];
        if (buf.empty()) buf.assign(g.size(), 0.0);
        for (size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
    }
}

const std::vector<double>* GradSink::find(const TensorNode* node) const {
    auto it = grads_.find(node);
    return it == grads_.end() ? nullptr : &it->second;
}

// --- construction ---

Tensor::Tensor(std::vector<size_t> shape) {
    const size_t n = shape_numel(shape);
    node_ = std::make_shared<TensorNode>();
    node_->shape = std::move(shape);
    node_->data.assign(n, 0.0);
}

Tensor::Tensor(std::vector<size_t> shape, std::vector<double> data) {
    if (shape_numel(shape) != data.size())
        throw std::invalid_argument("tensor data length does not match shape");
    node_ = std::make_shared<TensorNode>();
    node_->shape = std::move(shape);
    node_->data = std::move(data);
}

Tensor Tensor::zeros(std::vector<size_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<size_t> shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data().begin(), t.data().end(), value);
    return t;
}

Tensor Tensor::from_scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::randn(std::vector<size_t> shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& x : t.data()) x = rng.normal();
    return t;
}

Tensor Tensor::rand_uniform(std::vector<size_t> shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    for (auto& x : t.data()) x = rng.uniform(lo, hi);
    return t;
}

const std::vector<size_t>& Tensor::shape() const { return node_->shape; }
size_t Tensor::numel() const { return node_->data.size(); }

size_t Tensor::rows() const {
    check_rank2(*this, "rows");
    return node_->shape[0];
}

size_t Tensor::cols() const {
    check_rank2(*this, "cols");
    return node_->shape[1];
}

const std::vector<double>& Tensor::data() const { return node_->data; }
std::vector<double>& Tensor::data() { return node_->data; }

double Tensor::value() const {
    if (numel() != 1) throw std::invalid_argument("value(): tensor is not a single element");
    return node_->data[0];
}

double Tensor::at(size_t r, size_t c) const {
    check_rank2(*this, "at");
    return node_->data[r * node_->shape[1] + c];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
    node_->requires_grad = v;
    return *this;
}

const std::vector<double>& Tensor::grad() const {
    if (!has_grad()) throw std::runtime_error("grad(): no gradient recorded for this tensor");
    return node_->grad;
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->data.size(); }

void Tensor::zero_grad() {
    if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const {
    return Tensor(node_->shape, node_->data);
}

bool Tensor::all_finite() const {
    for (double x : node_->data)
        if (!std::isfinite(x)) return false;
    return true;
}

// Creates the result node of an op, wiring the tape only if recording is
// enabled and some parent participates in the graph.
Tensor make_op(std::vector<size_t> shape, std::vector<double> data,
               std::vector<Tensor> parents,
               std::function<void(TensorNode&, GradSink*)> backward) {
    Tensor out(std::move(shape), std::move(data));
    bool track = false;
    if (grad_enabled()) {
        for (const auto& p : parents)
            if (p.node()->requires_grad) track = true;
    }
    if (track) {
        out.node()->requires_grad = true;
        for (auto& p : parents) out.node()->parents.push_back(p.node_ptr());
        out.node()->backward_fn = std::move(backward);
    }
    return out;
}

void Tensor::backward(GradSink* sink) {
    if (numel() != 1)
        throw std::invalid_argument("backward(): root must be a single-element tensor");
    if (!node_->requires_grad) return;

    // Iterative post-order topological sort.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            TensorNode* p = n->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->ensure_grad();
    node_->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backward_fn) {
            n->ensure_grad();
            n->backward_fn(*n, sink);
        }
    }
    // Free the tape: forward values stay, graph edges and intermediate
    // grads go away. Leaf grads survive (or live in the sink).
    for (TensorNode* n : order) {
        if (!n->is_leaf()) {
            n->backward_fn = nullptr;
            n->parents.clear();
            n->grad.clear();
        }
    }
}

// --- elementwise binary ---

namespace {
enum class BinKind { Same, TrailingRow };

// b either matches a's shape or spans a's trailing axis.
BinKind bin_kind(const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape()) return BinKind::Same;
    if (b.rank() == 1 && a.rank() == 2 && b.shape()[0] == a.shape()[1]) return BinKind::TrailingRow;
    throw std::invalid_argument("elementwise op: shapes incompatible");
}

template <class Fwd, class Bwd>
Tensor binary_op(const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
    const BinKind kind = bin_kind(a, b);
    const size_t n = a.numel();
    const size_t cols = (kind == BinKind::TrailingRow) ? a.shape()[1] : 0;
    std::vector<double> out(n);
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (size_t i = 0; i < n; ++i) {
        const double bv = (kind == BinKind::Same) ? bd[i] : bd[i % cols];
        out[i] = fwd(ad[i], bv);
    }
    auto an = a.node_ptr();
    auto bn = b.node_ptr();
    return make_op(a.shape(), std::move(out), {a, b},
                   [an, bn, kind, cols, bwd](TensorNode& self, GradSink* sink) {
                       const size_t n = self.numel();
                       std::vector<double> ga(an->data.size(), 0.0);
                       std::vector<double> gb(bn->data.size(), 0.0);
                       for (size_t i = 0; i < n; ++i) {
                           const size_t bi = (kind == BinKind::Same) ? i : (i % cols);
                           double da, db;
                           bwd(an->data[i], bn->data[bi], self.data[i], self.grad[i], da, db);
                           ga[i] += da;
                           gb[bi] += db;
                       }
                       accum(an, sink, ga);
                       accum(bn, sink, gb);
                   });
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, [](double x, double y) { return x + y; },
        [](double, double, double, double g, double& da, double& db) {
            da = g;
            db = g;
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, [](double x, double y) { return x - y; },
        [](double, double, double, double g, double& da, double& db) {
            da = g;
            db = -g;
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, [](double x, double y) { return x * y; },
        [](double x, double y, double, double g, double& da, double& db) {
            da = g * y;
            db = g * x;
        });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, [](double x, double y) { return x / y; },
        [](double x, double y, double, double g, double& da, double& db) {
            da = g / y;
            db = -g * x / (y * y);
        });
}

namespace {
template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& a, Fwd fwd, Bwd bwd) {
    const size_t n = a.numel();
    std::vector<double> out(n);
    const auto& ad = a.data();
    for (size_t i = 0; i < n; ++i) out[i] = fwd(ad[i]);
    auto an = a.node_ptr();
    return make_op(a.shape(), std::move(out), {a}, [an, bwd](TensorNode& self, GradSink* sink) {
        const size_t n = self.numel();
        std::vector<double> ga(n);
        for (size_t i = 0; i < n; ++i) ga[i] = bwd(an->data[i], self.data[i], self.grad[i]);
        accum(an, sink, ga);
    });
}
}  // namespace

Tensor add_scalar(const Tensor& a, double s) {
    return unary_op(
        a, [s](double x) { return x + s; }, [](double, double, double g) { return g; });
}

Tensor mul_scalar(const Tensor& a, double s) {
    return unary_op(
        a, [s](double x) { return x * s; }, [s](double, double, double g) { return g * s; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor exp(const Tensor& a) {
    return unary_op(
        a, [](double x) { return std::exp(x); },
        [](double, double y, double g) { return g * y; });
}

Tensor log(const Tensor& a) {
    return unary_op(
        a, [](double x) { return std::log(x); },
        [](double x, double, double g) { return g / x; });
}

Tensor sqrt(const Tensor& a) {
    return unary_op(
        a, [](double x) { return std::sqrt(x); },
        [](double, double y, double g) { return g * 0.5 / y; });
}

Tensor tanh(const Tensor& a) {
    return unary_op(
        a, [](double x) { return std::tanh(x); },
        [](double, double y, double g) { return g * (1.0 - y * y); });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(
        a,
        [](double x) {
            if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y, double g) { return g * y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
    return unary_op(
        a, [](double x) { return x > 0 ? x : 0.0; },
        [](double x, double, double g) { return x > 0 ? g : 0.0; });
}

// --- GEMM ---

void gemm_nn(size_t m, size_t k, size_t n, const double* a, const double* b, double* c) {
    for (size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            const double* bp = b + p * n;
            for (size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C[m×n] += A[m×k] · B[n×k]^T
void gemm_nt(size_t m, size_t k, size_t n, const double* a, const double* b, double* c) {
    for (size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double s = 0.0;
            for (size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
            ci[j] += s;
        }
    }
}

// C[m×n] += A[k×m]^T · B[k×n]
void gemm_tn(size_t m, size_t k, size_t n, const double* a, const double* b, double* c) {
    for (size_t p = 0; p < k; ++p) {
        const double* ap = a + p * m;
        const double* bp = b + p * n;
        for (size_t i = 0; i < m; ++i) {
            const double av = ap[i];
            if (av == 0.0) continue;
            double* ci = c + i * n;
            for (size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_rank2(a, "matmul lhs");
    check_rank2(b, "matmul rhs");
    const size_t m = a.shape()[0], k = a.shape()[1];
    const size_t k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2) throw std::invalid_argument("matmul: inner dimensions disagree");
    std::vector<double> out(m * n, 0.0);
    gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data());
    auto an = a.node_ptr();
    auto bn = b.node_ptr();
    return make_op({m, n}, std::move(out), {a, b},
                   [an, bn, m, k, n](TensorNode& self, GradSink* sink) {
                       // dA = G·B^T, dB = A^T·G
                       std::vector<double> ga(m * k, 0.0);
                       std::vector<double> gb(k * n, 0.0);
                       gemm_nt(m, n, k, self.grad.data(), bn->data.data(), ga.data());
                       gemm_tn(k, m, n, an->data.data(), self.grad.data(), gb.data());
                       accum(an, sink, ga);
                       accum(bn, sink, gb);
                   });
}

Tensor transpose(const Tensor& a) {
    check_rank2(a, "transpose");
    const size_t r = a.shape()[0], c = a.shape()[1];
    std::vector<double> out(r * c);
    const auto& ad = a.data();
    for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) out[j * r + i] = ad[i * c + j];
    auto an = a.node_ptr();
    return make_op({c, r}, std::move(out), {a}, [an, r, c](TensorNode& self, GradSink* sink) {
        std::vector<double> ga(r * c);
        for (size_t i = 0; i < r; ++i)
            for (size_t j = 0; j < c; ++j) ga[i * c + j] = self.grad[j * r + i];
        accum(an, sink, ga);
    });
}

Tensor reshape(const Tensor& a, std::vector<size_t> shape) {
    if (shape_numel(shape) != a.numel())
        throw std::invalid_argument("reshape: element count mismatch");
    auto an = a.node_ptr();
    return make_op(std::move(shape), a.data(), {a},
                   [an](TensorNode& self, GradSink* sink) { accum(an, sink, self.grad); });
}

Tensor concat(const std::vector<Tensor>& parts, size_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    if (axis > 1) throw std::invalid_argument("concat: axis must be 0 or 1");
    for (const auto& p : parts) check_rank2(p, "concat");
    size_t rows = parts[0].shape()[0], cols = parts[0].shape()[1];
    size_t total = 0;
    for (const auto& p : parts) {
        if (axis == 0) {
            if (p.shape()[1] != cols) throw std::invalid_argument("concat: column mismatch");
            total += p.shape()[0];
        } else {
            if (p.shape()[0] != rows) throw std::invalid_argument("concat: row mismatch");
            total += p.shape()[1];
        }
    }
    std::vector<size_t> oshape = (axis == 0) ? std::vector<size_t>{total, cols}
                                             : std::vector<size_t>{rows, total};
    std::vector<double> out(shape_numel(oshape));
    if (axis == 0) {
        size_t off = 0;
        for (const auto& p : parts) {
            std::copy(p.data().begin(), p.data().end(), out.begin() + off);
            off += p.numel();
        }
    } else {
        size_t coff = 0;
        for (const auto& p : parts) {
            const size_t pc = p.shape()[1];
            for (size_t i = 0; i < rows; ++i)
                std::copy(p.data().begin() + i * pc, p.data().begin() + (i + 1) * pc,
                          out.begin() + i * total + coff);
            coff += pc;
        }
    }
    std::vector<NodePtr> nodes;
    for (const auto& p : parts) nodes.push_back(p.node_ptr());
    return make_op(std::move(oshape), std::move(out), parts,
                   [nodes, axis, rows, total](TensorNode& self, GradSink* sink) {
                       if (axis == 0) {
                           size_t off = 0;
                           for (const auto& n : nodes) {
                               std::vector<double> g(self.grad.begin() + off,
                                                     self.grad.begin() + off + n->data.size());
                               accum(n, sink, g);
                               off += n->data.size();
                           }
                       } else {
                           size_t coff = 0;
                           for (const auto& n : nodes) {
                               const size_t pc = n->shape[1];
                               std::vector<double> g(rows * pc);
                               for (size_t i = 0; i < rows; ++i)
                                   std::copy(self.grad.begin() + i * total + coff,
                                             self.grad.begin() + i * total + coff + pc,
                                             g.begin() + i * pc);
                               accum(n, sink, g);
                               coff += pc;
                           }
                       }
                   });
}

Tensor slice(const Tensor& a, size_t r0, size_t r1, size_t c0, size_t c1) {
    check_rank2(a, "slice");
    const size_t rows = a.shape()[0], cols = a.shape()[1];
    if (r1 > rows || c1 > cols || r0 >= r1 || c0 >= c1)
        throw std::invalid_argument("slice: bounds out of range");
    const size_t or_ = r1 - r0, oc = c1 - c0;
    std::vector<double> out(or_ * oc);
    const auto& ad = a.data();
    for (size_t i = 0; i < or_; ++i)
        std::copy(ad.begin() + (r0 + i) * cols + c0, ad.begin() + (r0 + i) * cols + c1,
                  out.begin() + i * oc);
    auto an = a.node_ptr();
    return make_op({or_, oc}, std::move(out), {a},
                   [an, r0, c0, cols, or_, oc](TensorNode& self, GradSink* sink) {
                       std::vector<double> ga(an->data.size(), 0.0);
                       for (size_t i = 0; i < or_; ++i)
                           for (size_t j = 0; j < oc; ++j)
                               ga[(r0 + i) * cols + c0 + j] += self.grad[i * oc + j];
                       accum(an, sink, ga);
                   });
}

Tensor softmax(const Tensor& a, size_t axis) {
    check_rank2(a, "softmax");
    if (axis > 1) throw std::invalid_argument("softmax: axis out of range");
    const size_t rows = a.shape()[0], cols = a.shape()[1];
    std::vector<double> out(a.numel());
    const auto& ad = a.data();
    const size_t outer = (axis == 1) ? rows : cols;
    const size_t len = (axis == 1) ? cols : rows;
    auto idx = [&](size_t o, size_t i) { return (axis == 1) ? o * cols + i : i * cols + o; };
    for (size_t o = 0; o < outer; ++o) {
        double mx = ad[idx(o, 0)];
        for (size_t i = 1; i < len; ++i) mx = std::max(mx, ad[idx(o, i)]);
        double z = 0.0;
        for (size_t i = 0; i < len; ++i) {
            const double e = std::exp(ad[idx(o, i)] - mx);
            out[idx(o, i)] = e;
            z += e;
        }
        for (size_t i = 0; i < len; ++i) out[idx(o, i)] /= z;
    }
    auto an = a.node_ptr();
    return make_op(a.shape(), std::move(out), {a},
                   [an, axis, rows, cols](TensorNode& self, GradSink* sink) {
                       const size_t outer = (axis == 1) ? rows : cols;
                       const size_t len = (axis == 1) ? cols : rows;
                       auto idx = [&](size_t o, size_t i) {
                           return (axis == 1) ? o * cols + i : i * cols + o;
                       };
                       std::vector<double> ga(self.numel());
                       for (size_t o = 0; o < outer; ++o) {
                           double dot = 0.0;
                           for (size_t i = 0; i < len; ++i)
                               dot += self.grad[idx(o, i)] * self.data[idx(o, i)];
                           for (size_t i = 0; i < len; ++i)
                               ga[idx(o, i)] =
                                   self.data[idx(o, i)] * (self.grad[idx(o, i)] - dot);
                       }
                       accum(an, sink, ga);
                   });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    check_rank2(x, "layer_norm");
    const size_t rows = x.shape()[0], cols = x.shape()[1];
    if (gain.numel() != cols || bias.numel() != cols)
        throw std::invalid_argument("layer_norm: gain/bias width must match the trailing axis");
    std::vector<double> out(x.numel());
    std::vector<double> mean_v(rows), inv_std(rows);
    const auto& xd = x.data();
    const auto& gd = gain.data();
    const auto& bd = bias.data();
    for (size_t i = 0; i < rows; ++i) {
        double m = 0.0;
        for (size_t j = 0; j < cols; ++j) m += xd[i * cols + j];
        m /= static_cast<double>(cols);
        double v = 0.0;
        for (size_t j = 0; j < cols; ++j) {
            const double d = xd[i * cols + j] - m;
            v += d * d;
        }
        v /= static_cast<double>(cols);
        const double is = 1.0 / std::sqrt(v + eps);
        mean_v[i] = m;
        inv_std[i] = is;
        for (size_t j = 0; j < cols; ++j)
            out[i * cols + j] = (xd[i * cols + j] - m) * is * gd[j] + bd[j];
    }
    auto xn = x.node_ptr();
    auto gn = gain.node_ptr();
    auto bn = bias.node_ptr();
    return make_op(
        x.shape(), std::move(out), {x, gain, bias},
        [xn, gn, bn, rows, cols, mean_v, inv_std](TensorNode& self, GradSink* sink) {
            std::vector<double> gx(rows * cols, 0.0), gg(cols, 0.0), gb(cols, 0.0);
            const double n = static_cast<double>(cols);
            for (size_t i = 0; i < rows; ++i) {
                const double m = mean_v[i], is = inv_std[i];
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (size_t j = 0; j < cols; ++j) {
                    const double xhat = (xn->data[i * cols + j] - m) * is;
                    const double g = self.grad[i * cols + j];
                    const double dxhat = g * gn->data[j];
                    gg[j] += g * xhat;
                    gb[j] += g;
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                }
                for (size_t j = 0; j < cols; ++j) {
                    const double xhat = (xn->data[i * cols + j] - m) * is;
                    const double dxhat = self.grad[i * cols + j] * gn->data[j];
                    gx[i * cols + j] =
                        is * (dxhat - sum_dxhat / n - xhat * sum_dxhat_xhat / n);
                }
            }
            accum(xn, sink, gx);
            accum(gn, sink, gg);
            accum(bn, sink, gb);
        });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double x : a.data()) s += x;
    auto an = a.node_ptr();
    return make_op({1}, {s}, {a}, [an](TensorNode& self, GradSink* sink) {
        std::vector<double> ga(an->data.size(), self.grad[0]);
        accum(an, sink, ga);
    });
}

Tensor mean(const Tensor& a) {
    const double n = static_cast<double>(a.numel());
    double s = 0.0;
    for (double x : a.data()) s += x;
    auto an = a.node_ptr();
    return make_op({1}, {s / n}, {a}, [an, n](TensorNode& self, GradSink* sink) {
        std::vector<double> ga(an->data.size(), self.grad[0] / n);
        accum(an, sink, ga);
    });
}

Tensor max(const Tensor& a) {
    const auto& ad = a.data();
    size_t arg = 0;
    for (size_t i = 1; i < ad.size(); ++i)
        if (ad[i] > ad[arg]) arg = i;
    auto an = a.node_ptr();
    return make_op({1}, {ad[arg]}, {a}, [an, arg](TensorNode& self, GradSink* sink) {
        std::vector<double> ga(an->data.size(), 0.0);
        ga[arg] = self.grad[0];
        accum(an, sink, ga);
    });
}

Tensor gather_rows(const Tensor& table, const std::vector<int64_t>& ids) {
    check_rank2(table, "gather_rows");
    const size_t v = table.shape()[0], w = table.shape()[1];
    std::vector<double> out(ids.size() * w);
    const auto& td = table.data();
    for (size_t i = 0; i < ids.size(); ++i) {
        const int64_t id = ids[i];
        if (id < 0 || static_cast<size_t>(id) >= v)
            throw std::invalid_argument("gather_rows: index out of range");
        std::copy(td.begin() + id * w, td.begin() + (id + 1) * w, out.begin() + i * w);
    }
    auto tn = table.node_ptr();
    return make_op({ids.size(), w}, std::move(out), {table},
                   [tn, ids, w](TensorNode& self, GradSink* sink) {
                       std::vector<double> gt(tn->data.size(), 0.0);
                       for (size_t i = 0; i < ids.size(); ++i)
                           for (size_t j = 0; j < w; ++j)
                               gt[ids[i] * w + j] += self.grad[i * w + j];
                       accum(tn, sink, gt);
                   });
}

Tensor dropout(const Tensor& a, double rate, Rng& rng, bool training) {
    if (!training || rate == 0.0) return a;
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
    const double keep = 1.0 - rate;
    std::vector<double> mask(a.numel());
    for (auto& m : mask) m = (rng.uniform() < rate) ? 0.0 : 1.0 / keep;
    std::vector<double> out(a.numel());
    const auto& ad = a.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * mask[i];
    auto an = a.node_ptr();
    return make_op(a.shape(), std::move(out), {a},
                   [an, mask](TensorNode& self, GradSink* sink) {
                       std::vector<double> ga(self.numel());
                       for (size_t i = 0; i < ga.size(); ++i) ga[i] = self.grad[i] * mask[i];
                       accum(an, sink, ga);
                   });
}

Tensor emin(const Tensor& a, const Tensor& b) { return sub(b, relu(sub(b, a))); }
Tensor emax(const Tensor& a, const Tensor& b) { return add(b, relu(sub(a, b))); }
Tensor abs(const Tensor& a) { return add(relu(a), relu(neg(a))); }

// --- ParamStore ---

Tensor& ParamStore::add(const std::string& name, Tensor init) {
    if (name.empty()) throw std::invalid_argument("parameter name must be non-empty");
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    init.set_requires_grad(true);
    index_[name] = params_.size();
    params_.push_back({name, std::move(init)});
    return params_.back().tensor;
}

Tensor& ParamStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return params_[it->second].tensor;
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return params_[it->second].tensor;
}

bool ParamStore::contains(const std::string& name) const { return index_.count(name) > 0; }

void ParamStore::apply_sink(const GradSink& sink) {
    for (auto& p : params_) {
        const auto* g = sink.find(p.tensor.node());
        if (!g) continue;
        p.tensor.node()->ensure_grad();
        auto& dst = p.tensor.node()->grad;
        for (size_t i = 0; i < g->size(); ++i) dst[i] += (*g)[i];
    }
}

void ParamStore::zero_grads() {
    for (auto& p : params_) p.tensor.zero_grad();
}

std::vector<std::vector<double>> ParamStore::snapshot_values() const {
    std::vector<std::vector<double>> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.tensor.data());
    return out;
}

void ParamStore::restore_values(const std::vector<std::vector<double>>& values) {
    if (values.size() != params_.size())
        throw std::invalid_argument("restore_values: parameter count mismatch");
    for (size_t i = 0; i < params_.size(); ++i) {
        if (values[i].size() != params_[i].tensor.numel())
            throw std::invalid_argument("restore_values: size mismatch for " + params_[i].name);
        params_[i].tensor.data() = values[i];
    }
}

}  // namespace diffsed
