#include "aoisim/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace aoisim {

namespace {

size_t shape_numel(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw DimensionError("negative dimension in shape");
        n *= static_cast<size_t>(d);
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

void require_2d(const Tensor& t, const char* what) {
    if (t.shape.size() != 2) throw DimensionError(std::string(what) + " expects a 2-d tensor, got " + shape_str(t.shape));
}

}  // namespace

Tensor::Tensor(std::vector<int> shape_, std::vector<double> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
    if (shape_numel(shape) != data.size())
        throw DimensionError("shape " + shape_str(shape) + " does not match data length " + std::to_string(data.size()));
}

Tensor Tensor::zeros(std::vector<int> shape) {
    size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<int> shape, double v) {
    size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
}

Tensor Tensor::scalar(double v) { return Tensor({1, 1}, {v}); }

Tensor Tensor::row(std::vector<double> v) {
    int n = static_cast<int>(v.size());
    return Tensor({1, n}, std::move(v));
}

Tensor Tensor::column(std::vector<double> v) {
    int n = static_cast<int>(v.size());
    return Tensor({n, 1}, std::move(v));
}

Tensor Tensor::matrix(int rows, int cols, std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
}

int Tensor::rows() const {
    require_2d(*this, "rows()");
    return shape[0];
}

int Tensor::cols() const {
    require_2d(*this, "cols()");
    return shape[1];
}

double& Tensor::at(int r, int c) {
    require_2d(*this, "at()");
    return data[static_cast<size_t>(r) * shape[1] + c];
}

double Tensor::at(int r, int c) const {
    require_2d(*this, "at()");
    return data[static_cast<size_t>(r) * shape[1] + c];
}

double Tensor::item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape));
    return data[0];
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

Parameter::Parameter(std::string name_, Tensor value_)
    : name(std::move(name_)),
      value(std::move(value_)),
      grad(Tensor::zeros(value.shape)),
      adam_m(Tensor::zeros(value.shape)),
      adam_v(Tensor::zeros(value.shape)) {}

void Parameter::zero_grad() {
    std::fill(grad.data.begin(), grad.data.end(), 0.0);
}

namespace detail {

void softmax_row(std::span<const double> in, std::span<double> out) {
    double m = in[0];
    for (double v : in) m = std::max(m, v);
    double s = 0.0;
    for (size_t j = 0; j < in.size(); ++j) {
        out[j] = std::exp(in[j] - m);
        s += out[j];
    }
    for (size_t j = 0; j < in.size(); ++j) out[j] /= s;
}

void log_softmax_row(std::span<const double> in, std::span<double> out) {
    double m = in[0];
    for (double v : in) m = std::max(m, v);
    double s = 0.0;
    for (size_t j = 0; j < in.size(); ++j) s += std::exp(in[j] - m);
    double lse = std::log(s);
    for (size_t j = 0; j < in.size(); ++j) out[j] = in[j] - m - lse;
}

void matmul_kernel(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        double* crow = c + static_cast<size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            double av = arow[kk];
            const double* brow = b + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace detail

int Tape::push(Tensor value, bool needs_grad, std::function<void()> backprop) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = recording_ && needs_grad;
    if (n.needs_grad) n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Tensor& Tape::grad_buf(int id) {
    if (grads_[id].empty()) grads_[id] = Tensor::zeros(nodes_[id].value.shape);
    return grads_[id];
}

const Tape::Node& Tape::node(Value v) const {
    check_same_tape(v);
    return nodes_[v.id];
}

void Tape::check_same_tape(Value v) const {
    if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
        throw ContractError("value does not belong to this tape");
}

const Tensor& Tape::val(Value v) const { return node(v).value; }

Value Tape::input(Tensor t) {
    int id = push(std::move(t), false, nullptr);
    return {this, id};
}

Value Tape::param(Parameter& p) {
    auto it = param_cache_.find(&p);
    if (it != param_cache_.end()) return {this, it->second};
    int id = push(p.value, true, nullptr);
    if (recording_) {
        watched_.emplace_back(&p, id);
        param_cache_.emplace(&p, id);
    }
    return {this, id};
}

Value Tape::matmul(Value a, Value b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    require_2d(ta, "matmul");
    require_2d(tb, "matmul");
    int m = ta.shape[0], k = ta.shape[1], k2 = tb.shape[0], n = tb.shape[1];
    if (k != k2)
        throw DimensionError("matmul inner dimensions differ: " + shape_str(ta.shape) + " x " + shape_str(tb.shape));
    Tensor out = Tensor::zeros({m, n});
    detail::matmul_kernel(ta.data.data(), tb.data.data(), out.data.data(), m, k, n);
    bool needs = node(a).needs_grad || node(b).needs_grad;
    int id = push(std::move(out), needs, nullptr);
    if (nodes_[id].needs_grad) {
        nodes_[id].backprop = [this, a, b, id, m, k, n] {
            const Tensor& g = grads_[id];
            const Tensor& ta2 = nodes_[a.id].value;
            const Tensor& tb2 = nodes_[b.id].value;
            if (nodes_[a.id].needs_grad) {
                // dA += G * B^T, as row dot products so both operands stream
                Tensor& ga = grad_buf(a.id);
                for (int i = 0; i < m; ++i) {
                    const double* grow = g.data.data() + static_cast<size_t>(i) * n;
                    double* garow = ga.data.data() + static_cast<size_t>(i) * k;
                    for (int kk = 0; kk < k; ++kk) {
                        const double* brow = tb2.data.data() + static_cast<size_t>(kk) * n;
                        double s = 0.0;
                        for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
                        garow[kk] += s;
                    }
                }
            }
            if (nodes_[b.id].needs_grad) {
                // dB += A^T * G
                Tensor& gb = grad_buf(b.id);
                for (int kk = 0; kk < k; ++kk)
                    for (int i = 0; i < m; ++i) {
                        double av = ta2.data[static_cast<size_t>(i) * k + kk];
                        if (av == 0.0) continue;
                        const double* grow = g.data.data() + static_cast<size_t>(i) * n;
                        double* gbrow = gb.data.data() + static_cast<size_t>(kk) * n;
                        for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                    }
            }
        };
    }
    return {this, id};
}

Value Tape::transpose(Value a) {
    const Tensor& ta = val(a);
    require_2d(ta, "transpose");
    int m = ta.shape[0], n = ta.shape[1];
    Tensor out = Tensor::zeros({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.data[static_cast<size_t>(j) * m + i] = ta.data[static_cast<size_t>(i) * n + j];
    bool needs = node(a).needs_grad;
    int id = push(std::move(out), needs, nullptr);
    if (nodes_[id].needs_grad) {
        nodes_[id].backprop = [this, a, id, m, n] {
            const Tensor& g = grads_[id];
            Tensor& ga = grad_buf(a.id);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    ga.data[static_cast<size_t>(i) * n + j] += g.data[static_cast<size_t>(j) * m + i];
        };
    }
    return {this, id};
}

Value Tape::add(Value a, Value b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (!ta.same_shape(tb))
        throw DimensionError("add shape mismatch: " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Tensor out = ta;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += tb.data[i];
    bool needs = node(a).needs_grad || node(b).needs_grad;
    int id = push(std::move(out), needs, nullptr);
    if (nodes_[id].needs_grad) {
        nodes_[id].backprop = [this, a, b, id] {
            const Tensor& g = grads_[id];
            if (nodes_[a.id].needs_grad) {
                Tensor& ga = grad_buf(a.id);
                for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
            }
            if (nodes_[b.id].needs_grad) {
                Tensor& gb = grad_buf(b.id);
                for (size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i];
            }
        };
    }
    return {this, id};
}

Value Tape::sub(Value a, Value b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (!ta.same_shape(tb))
        throw DimensionError("sub shape mismatch: " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Tensor out = ta;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= tb.data[i];
    bool needs = node(a).needs_grad || node(b).needs_grad;
    int id = push(std::move(out), needs, nullptr);
    if (nodes_[id].needs_grad) {
        nodes_[id].backprop = [this, a, b, id] {
            const Tensor& g = grads_[id];
            if (nodes_[a.id].needs_grad) {
                Tensor& ga = grad_buf(a.id);
                for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
            }
            if (nodes_[b.id].needs_grad) {
                Tensor& gb = grad_buf(b.id);
                for (size_t i = 0; i < g.data.size(); ++i) gb.data[i] -= g.data[i];
            }
        };
    }
    return {this, id};
}

Value Tape::mul(Value a, Value b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (!ta.same_shape(tb))
        throw DimensionError("mul shape mismatch: " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Tensor out = ta;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= tb.data[i];
    bool needs = node(a).needs_grad || node(b).needs_grad;
    int id = push(std::move(out), needs, nullptr);
    if (nodes_[id].needs_grad) {
        nodes_[id].backprop = [this, a, b, id] {
            const Tensor& g = grads_[id];
            const Tensor& ta2 = nodes_[a.id].value;
            const Tensor& tb2 = nodes_[b.id].value;
            if (nodes_[a.id].needs_grad) {
                Tensor& ga = grad_buf(a.id);
                for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * tb2.data[i];
            }
            if (nodes_[b.id].needs_grad) {
                Tensor& gb = grad_buf(b.id);
                for (size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i] * ta2.data[i];
            }
        };
    }
    return {this, id};
}

Value Tape::add_row_broadcast(Value a, Value row) {
    const Tensor& ta = val(a);
    const Tensor& tr = val(row);
    require_2d(ta, "add_row_broadcast");
    require_2d(tr, "add_row_broadcast");
    int m = ta.shape[0], n = ta.shape[1];
    if (tr.shape[0] != 1 || tr.shape[1] != n)
        throw DimensionError("row broadcast wants [1," + std::to_string(n) + "], got " + shape_str(tr.shape));
    Tensor out = ta;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.data[static_cast<size_t>(i) * n + j] += tr.data[j];
    bool needs = node(a).needs_grad || node(row).needs_grad;
    int id = push(std::move(out), needs, nullptr);
    if (nodes_[id].needs_grad) {
        nodes_[id].backprop = [this, a, row, id, m, n] {
            const Tensor& g = grads_[id];
            if (nodes_[a.id].needs_grad) {
                Tensor& ga = grad_buf(a.id);
                for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
            }
            if (nodes_[row.id].needs_grad) {
                Tensor& gr = grad_buf(row.id);
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) gr.data[j] += g.data[static_cast<size_t>(i) * n + j];
            }
        };
    }
    return {this, id};
}

Value Tape::scale(Value a, double c) {
    Tensor out = val(a);
    for (double& v : out.data) v *= c;
    bool needs = node(a).needs_grad;
    int id = push(std::move(out), needs, nullptr);
    if (nodes_[id].needs_grad) {
        nodes_[id].backprop = [this, a, id, c] {
            const Tensor& g = grads_[id];
            Tensor& ga = grad_buf(a.id);
            for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += c * g.data[i];
        };
    }
    return {this, id};
}

Value Tape::add_const(Value a, double c) {
    Tensor out = val(a);
    for (double& v : out.data) v += c;
    bool needs = node(a).needs_grad;
    int id = push(std::move(out), needs, nullptr);
    if (nodes_[id].needs_grad) {
        nodes_[id].backprop = [this, a, id] {
            const Tensor& g = grads_[id];
            Tensor& ga = grad_buf(a.id);
            for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
        };
    }
    return {this, id};
}

Value Tape::relu(Value a) {
    Tensor out = val(a);
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    bool needs = node(a).needs_grad;
    int id = push(std::move(out), needs, nullptr);
    if (nodes_[id].needs_grad) {
        nodes_[id].backprop = [this, a, id] {
            const Tensor& g = grads_[id];
            const Tensor& x = nodes_[a.id].value;
            Tensor& ga = grad_buf(a.id);
            for (size_t i = 0; i < g.data.size(); ++i)
                if (x.data[i] > 0.0) ga.data[i] += g.data[i];
        };
    }
    return {this, id};
}

Value Tape::exp(Value a) {
    Tensor out = val(a);
    for (double& v : out.data) v = std::exp(v);
    bool needs = node(a).needs_grad;
    int id = push(std::move(out), needs, nullptr);
    if (nodes_[id].needs_grad) {
        nodes_[id].backprop = [this, a, id] {
            const Tensor& g = grads_[id];
            const Tensor& y = nodes_[id].value;
            Tensor& ga = grad_buf(a.id);
            for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * y.data[i];
        };
    }
    return {this, id};
}

Value Tape::minimum(Value a, Value b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (!ta.same_shape(tb))
        throw DimensionError("minimum shape mismatch: " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Tensor out = ta;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::min(ta.data[i], tb.data[i]);
    bool needs = node(a).needs_grad || node(b).needs_grad;
    int id = push(std::move(out), needs, nullptr);
    if (nodes_[id].needs_grad) {
        nodes_[id].backprop = [this, a, b, id] {
            const Tensor& g = grads_[id];
            const Tensor& ta2 = nodes_[a.id].value;
            const Tensor& tb2 = nodes_[b.id].value;
            for (size_t i = 0; i < g.data.size(); ++i) {
                bool pick_a = ta2.data[i] <= tb2.data[i];
                if (pick_a && nodes_[a.id].needs_grad) grad_buf(a.id).data[i] += g.data[i];
                if (!pick_a && nodes_[b.id].needs_grad) grad_buf(b.id).data[i] += g.data[i];
            }
        };
    }
    return {this, id};
}

Value Tape::clamp(Value a, double lo, double hi) {
    Tensor out = val(a);
    for (double& v : out.data) v = std::min(std::max(v, lo), hi);
    bool needs = node(a).needs_grad;
    int id = push(std::move(out), needs, nullptr);
    if (nodes_[id].needs_grad) {
        nodes_[id].backprop = [this, a, id, lo, hi] {
            const Tensor& g = grads_[id];
            const Tensor& x = nodes_[a.id].value;
            Tensor& ga = grad_buf(a.id);
            for (size_t i = 0; i < g.data.size(); ++i)
                if (x.data[i] > lo && x.data[i] < hi) ga.data[i] += g.data[i];
        };
    }
    return {this, id};
}

Value Tape::softmax_rows(Value a) {
    const Tensor& ta = val(a);
    require_2d(ta, "softmax_rows");
    int m = ta.shape[0], n = ta.shape[1];
    Tensor out = Tensor::zeros({m, n});
    for (int i = 0; i < m; ++i)
        detail::softmax_row({ta.data.data() + static_cast<size_t>(i) * n, static_cast<size_t>(n)},
                            {out.data.data() + static_cast<size_t>(i) * n, static_cast<size_t>(n)});
    bool needs = node(a).needs_grad;
    int id = push(std::move(out), needs, nullptr);
    if (nodes_[id].needs_grad) {
        nodes_[id].backprop = [this, a, id, m, n] {
            const Tensor& g = grads_[id];
            const Tensor& s = nodes_[id].value;
            Tensor& ga = grad_buf(a.id);
            for (int i = 0; i < m; ++i) {
                const double* gi = g.data.data() + static_cast<size_t>(i) * n;
                const double* si = s.data.data() + static_cast<size_t>(i) * n;
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += gi[j] * si[j];
                double* gai = ga.data.data() + static_cast<size_t>(i) * n;
                for (int j = 0; j < n; ++j) gai[j] += si[j] * (gi[j] - dot);
            }
        };
    }
    return {this, id};
}

Value Tape::log_softmax_rows(Value a) {
    const Tensor& ta = val(a);
    require_2d(ta, "log_softmax_rows");
    int m = ta.shape[0], n = ta.shape[1];
    Tensor out = Tensor::zeros({m, n});
    for (int i = 0; i < m; ++i)
        detail::log_softmax_row({ta.data.data() + static_cast<size_t>(i) * n, static_cast<size_t>(n)},
                                {out.data.data() + static_cast<size_t>(i) * n, static_cast<size_t>(n)});
    bool needs = node(a).needs_grad;
    int id = push(std::move(out), needs, nullptr);
    if (nodes_[id].needs_grad) {
        nodes_[id].backprop = [this, a, id, m, n] {
            const Tensor& g = grads_[id];
            const Tensor& ls = nodes_[id].value;
            Tensor& ga = grad_buf(a.id);
            for (int i = 0; i < m; ++i) {
                const double* gi = g.data.data() + static_cast<size_t>(i) * n;
                const double* li = ls.data.data() + static_cast<size_t>(i) * n;
                double gsum = 0.0;
                for (int j = 0; j < n; ++j) gsum += gi[j];
                double* gai = ga.data.data() + static_cast<size_t>(i) * n;
                for (int j = 0; j < n; ++j) gai[j] += gi[j] - std::exp(li[j]) * gsum;
            }
        };
    }
    return {this, id};
}

Value Tape::layer_norm(Value x, Value gain, Value bias, double eps) {
    const Tensor& tx = val(x);
    const Tensor& tg = val(gain);
    const Tensor& tb = val(bias);
    require_2d(tx, "layer_norm");
    int m = tx.shape[0], d = tx.shape[1];
    if (tg.numel() != static_cast<size_t>(d) || tb.numel() != static_cast<size_t>(d))
        throw DimensionError("layer_norm gain/bias must have " + std::to_string(d) + " entries");
    if (d < 1) throw DimensionError("layer_norm needs d >= 1");
    Tensor out = Tensor::zeros({m, d});
    Tensor xhat = Tensor::zeros({m, d});
    std::vector<double> inv_std(m);
    for (int i = 0; i < m; ++i) {
        const double* xi = tx.data.data() + static_cast<size_t>(i) * d;
        double mu = 0.0;
        for (int j = 0; j < d; ++j) mu += xi[j];
        mu /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) var += (xi[j] - mu) * (xi[j] - mu);
        var /= d;
        double inv = 1.0 / std::sqrt(var + eps);
        inv_std[i] = inv;
        for (int j = 0; j < d; ++j) {
            double xh = (xi[j] - mu) * inv;
            xhat.data[static_cast<size_t>(i) * d + j] = xh;
            out.data[static_cast<size_t>(i) * d + j] = tg.data[j] * xh + tb.data[j];
        }
    }
    bool needs = node(x).needs_grad || node(gain).needs_grad || node(bias).needs_grad;
    int id = push(std::move(out), needs, nullptr);
    if (nodes_[id].needs_grad) {
        nodes_[id].backprop = [this, x, gain, bias, id, m, d, xhat = std::move(xhat),
                               inv_std = std::move(inv_std)] {
            const Tensor& g = grads_[id];
            const Tensor& tg2 = nodes_[gain.id].value;
            for (int i = 0; i < m; ++i) {
                const double* gi = g.data.data() + static_cast<size_t>(i) * d;
                const double* xh = xhat.data.data() + static_cast<size_t>(i) * d;
                if (nodes_[x.id].needs_grad) {
                    double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                    for (int j = 0; j < d; ++j) {
                        double dxh = gi[j] * tg2.data[j];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh[j];
                    }
                    Tensor& gx = grad_buf(x.id);
                    double* gxi = gx.data.data() + static_cast<size_t>(i) * d;
                    for (int j = 0; j < d; ++j) {
                        double dxh = gi[j] * tg2.data[j];
                        gxi[j] += inv_std[i] * (dxh - sum_dxh / d - xh[j] * sum_dxh_xh / d);
                    }
                }
                if (nodes_[gain.id].needs_grad) {
                    Tensor& gg = grad_buf(gain.id);
                    for (int j = 0; j < d; ++j) gg.data[j] += gi[j] * xh[j];
                }
                if (nodes_[bias.id].needs_grad) {
                    Tensor& gb = grad_buf(bias.id);
                    for (int j = 0; j < d; ++j) gb.data[j] += gi[j];
                }
            }
        };
    }
    return {this, id};
}

Value Tape::sum(Value a) {
    const Tensor& ta = val(a);
    double s = 0.0;
    for (double v : ta.data) s += v;
    bool needs = node(a).needs_grad;
    int id = push(Tensor::scalar(s), needs, nullptr);
    if (nodes_[id].needs_grad) {
        nodes_[id].backprop = [this, a, id] {
            double g = grads_[id].data[0];
            Tensor& ga = grad_buf(a.id);
            for (double& v : ga.data) v += g;
        };
    }
    return {this, id};
}

Value Tape::mean(Value a) {
    const Tensor& ta = val(a);
    double s = 0.0;
    for (double v : ta.data) s += v;
    double inv = 1.0 / static_cast<double>(ta.numel());
    bool needs = node(a).needs_grad;
    int id = push(Tensor::scalar(s * inv), needs, nullptr);
    if (nodes_[id].needs_grad) {
        nodes_[id].backprop = [this, a, id, inv] {
            double g = grads_[id].data[0] * inv;
            Tensor& ga = grad_buf(a.id);
            for (double& v : ga.data) v += g;
        };
    }
    return {this, id};
}

Value Tape::mean_rows(Value a) {
    const Tensor& ta = val(a);
    require_2d(ta, "mean_rows");
    int m = ta.shape[0], n = ta.shape[1];
    Tensor out = Tensor::zeros({1, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.data[j] += ta.data[static_cast<size_t>(i) * n + j];
    for (int j = 0; j < n; ++j) out.data[j] /= m;
    bool needs = node(a).needs_grad;
    int id = push(std::move(out), needs, nullptr);
    if (nodes_[id].needs_grad) {
        nodes_[id].backprop = [this, a, id, m, n] {
            const Tensor& g = grads_[id];
            Tensor& ga = grad_buf(a.id);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) ga.data[static_cast<size_t>(i) * n + j] += g.data[j] / m;
        };
    }
    return {this, id};
}

Value Tape::row_sum(Value a) {
    const Tensor& ta = val(a);
    require_2d(ta, "row_sum");
    int m = ta.shape[0], n = ta.shape[1];
    Tensor out = Tensor::zeros({m, 1});
    for (int i = 0; i < m; ++i) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += ta.data[static_cast<size_t>(i) * n + j];
        out.data[i] = s;
    }
    bool needs = node(a).needs_grad;
    int id = push(std::move(out), needs, nullptr);
    if (nodes_[id].needs_grad) {
        nodes_[id].backprop = [this, a, id, m, n] {
            const Tensor& g = grads_[id];
            Tensor& ga = grad_buf(a.id);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) ga.data[static_cast<size_t>(i) * n + j] += g.data[i];
        };
    }
    return {this, id};
}

Value Tape::gather_rows(Value a, std::vector<int> col_of_row) {
    const Tensor& ta = val(a);
    require_2d(ta, "gather_rows");
    int m = ta.shape[0], n = ta.shape[1];
    if (static_cast<int>(col_of_row.size()) != m)
        throw DimensionError("gather_rows wants one column index per row");
    Tensor out = Tensor::zeros({m, 1});
    for (int i = 0; i < m; ++i) {
        int c = col_of_row[i];
        if (c < 0 || c >= n) throw DimensionError("gather_rows column index out of range");
        out.data[i] = ta.data[static_cast<size_t>(i) * n + c];
    }
    bool needs = node(a).needs_grad;
    int id = push(std::move(out), needs, nullptr);
    if (nodes_[id].needs_grad) {
        nodes_[id].backprop = [this, a, id, n, idx = std::move(col_of_row)] {
            const Tensor& g = grads_[id];
            Tensor& ga = grad_buf(a.id);
            for (size_t i = 0; i < idx.size(); ++i) ga.data[i * n + idx[i]] += g.data[i];
        };
    }
    return {this, id};
}

Value Tape::slice_rows(Value a, int r0, int r1) {
    const Tensor& ta = val(a);
    require_2d(ta, "slice_rows");
    int m = ta.shape[0], n = ta.shape[1];
    if (r0 < 0 || r1 > m || r0 >= r1) throw DimensionError("slice_rows range invalid");
    Tensor out = Tensor::zeros({r1 - r0, n});
    std::copy(ta.data.begin() + static_cast<size_t>(r0) * n, ta.data.begin() + static_cast<size_t>(r1) * n,
              out.data.begin());
    bool needs = node(a).needs_grad;
    int id = push(std::move(out), needs, nullptr);
    if (nodes_[id].needs_grad) {
        nodes_[id].backprop = [this, a, id, r0, n] {
            const Tensor& g = grads_[id];
            Tensor& ga = grad_buf(a.id);
            for (size_t i = 0; i < g.data.size(); ++i) ga.data[static_cast<size_t>(r0) * n + i] += g.data[i];
        };
    }
    return {this, id};
}

Value Tape::slice_cols(Value a, int c0, int c1) {
    const Tensor& ta = val(a);
    require_2d(ta, "slice_cols");
    int m = ta.shape[0], n = ta.shape[1];
    if (c0 < 0 || c1 > n || c0 >= c1) throw DimensionError("slice_cols range invalid");
    int w = c1 - c0;
    Tensor out = Tensor::zeros({m, w});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j)
            out.data[static_cast<size_t>(i) * w + j] = ta.data[static_cast<size_t>(i) * n + c0 + j];
    bool needs = node(a).needs_grad;
    int id = push(std::move(out), needs, nullptr);
    if (nodes_[id].needs_grad) {
        nodes_[id].backprop = [this, a, id, m, n, c0, w] {
            const Tensor& g = grads_[id];
            Tensor& ga = grad_buf(a.id);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < w; ++j)
                    ga.data[static_cast<size_t>(i) * n + c0 + j] += g.data[static_cast<size_t>(i) * w + j];
        };
    }
    return {this, id};
}

Value Tape::concat_cols(const std::vector<Value>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols needs at least one part");
    int m = val(parts[0]).rows();
    int total = 0;
    bool needs = false;
    for (Value p : parts) {
        const Tensor& tp = val(p);
        require_2d(tp, "concat_cols");
        if (tp.shape[0] != m) throw DimensionError("concat_cols row counts differ");
        total += tp.shape[1];
        needs = needs || node(p).needs_grad;
    }
    Tensor out = Tensor::zeros({m, total});
    int off = 0;
    for (Value p : parts) {
        const Tensor& tp = val(p);
        int w = tp.shape[1];
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
                out.data[static_cast<size_t>(i) * total + off + j] = tp.data[static_cast<size_t>(i) * w + j];
        off += w;
    }
    int id = push(std::move(out), needs, nullptr);
    if (nodes_[id].needs_grad) {
        nodes_[id].backprop = [this, id, m, total, parts] {
            const Tensor& g = grads_[id];
            int off2 = 0;
            for (Value p : parts) {
                int w = nodes_[p.id].value.shape[1];
                if (nodes_[p.id].needs_grad) {
                    Tensor& gp = grad_buf(p.id);
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < w; ++j)
                            gp.data[static_cast<size_t>(i) * w + j] += g.data[static_cast<size_t>(i) * total + off2 + j];
                }
                off2 += w;
            }
        };
    }
    return {this, id};
}

Value Tape::stack_scalars(const std::vector<Value>& scalars) {
    if (scalars.empty()) throw DimensionError("stack_scalars needs at least one entry");
    int k = static_cast<int>(scalars.size());
    Tensor out = Tensor::zeros({k, 1});
    bool needs = false;
    for (int i = 0; i < k; ++i) {
        const Tensor& t = val(scalars[i]);
        if (t.numel() != 1) throw DimensionError("stack_scalars entries must be scalars");
        out.data[i] = t.data[0];
        needs = needs || node(scalars[i]).needs_grad;
    }
    int id = push(std::move(out), needs, nullptr);
    if (nodes_[id].needs_grad) {
        nodes_[id].backprop = [this, id, scalars] {
            const Tensor& g = grads_[id];
            for (size_t i = 0; i < scalars.size(); ++i)
                if (nodes_[scalars[i].id].needs_grad) grad_buf(scalars[i].id).data[0] += g.data[i];
        };
    }
    return {this, id};
}

void Tape::run_backward(Value loss, const std::function<void(Parameter&, const Tensor&)>& emit) {
    check_same_tape(loss);
    if (!recording_) throw ContractError("backward on a non-recording tape");
    if (val(loss).numel() != 1) throw ContractError("backward requires a scalar loss");
    grads_.assign(nodes_.size(), Tensor());
    grad_buf(loss.id).data[0] = 1.0;
    for (int id = loss.id; id >= 0; --id) {
        const Node& n = nodes_[id];
        if (!n.needs_grad || grads_[id].empty() || !n.backprop) continue;
        n.backprop();
    }
    for (auto& [p, id] : watched_) {
        if (!grads_[id].empty()) emit(*p, grads_[id]);
    }
}

void Tape::backward(Value loss) {
    run_backward(loss, [](Parameter& p, const Tensor& g) {
        for (size_t i = 0; i < g.data.size(); ++i) p.grad.data[i] += g.data[i];
    });
}

void Tape::backward(Value loss, std::unordered_map<Parameter*, Tensor>& sink) {
    run_backward(loss, [&sink](Parameter& p, const Tensor& g) {
        auto it = sink.find(&p);
        if (it == sink.end()) {
            sink.emplace(&p, g);
        } else {
            for (size_t i = 0; i < g.data.size(); ++i) it->second.data[i] += g.data[i];
        }
    });
}

Tensor Tape::grad_of(Value wrt) const {
    check_same_tape(wrt);
    if (wrt.id < static_cast<int>(grads_.size()) && !grads_[wrt.id].empty()) return grads_[wrt.id];
    return Tensor::zeros(nodes_[wrt.id].value.shape);
}

void adam_step(const std::vector<Parameter*>& params, double lr, double beta1, double beta2,
               double eps) {
    for (Parameter* p : params) {
        p->step_count += 1;
        double bc1 = 1.0 - std::pow(beta1, static_cast<double>(p->step_count));
        double bc2 = 1.0 - std::pow(beta2, static_cast<double>(p->step_count));
        for (size_t i = 0; i < p->value.data.size(); ++i) {
            double g = p->grad.data[i];
            double m = beta1 * p->adam_m.data[i] + (1.0 - beta1) * g;
            double v = beta2 * p->adam_v.data[i] + (1.0 - beta2) * g * g;
            p->adam_m.data[i] = m;
            p->adam_v.data[i] = v;
            p->value.data[i] -= lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
        }
    }
}

double grad_norm(const std::vector<Parameter*>& params) {
    double sq = 0.0;
    for (const Parameter* p : params)
        for (double g : p->grad.data) sq += g * g;
    return std::sqrt(sq);
}

void clip_grad_norm(const std::vector<Parameter*>& params, double max_norm) {
    if (max_norm <= 0.0) return;
    double norm = grad_norm(params);
    if (norm <= max_norm) return;
    double s = max_norm / norm;
    for (Parameter* p : params)
        for (double& g : p->grad.data) g *= s;
}

double finite_diff_check(const std::function<double(bool)>& eval,
                         const std::vector<Parameter*>& params, double h) {
    for (Parameter* p : params) p->zero_grad();
    eval(true);
    std::vector<Tensor> ad_grads;
    ad_grads.reserve(params.size());
    for (Parameter* p : params) ad_grads.push_back(p->grad);

    double worst = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Parameter* p = params[pi];
        for (size_t i = 0; i < p->value.data.size(); ++i) {
            double saved = p->value.data[i];
            p->value.data[i] = saved + h;
            double fp = eval(false);
            p->value.data[i] = saved - h;
            double fm = eval(false);
            p->value.data[i] = saved;
            double g_fd = (fp - fm) / (2.0 * h);
            double g_ad = ad_grads[pi].data[i];
            double err = std::abs(g_ad - g_fd) / std::max(1.0, std::abs(g_fd));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace aoisim
