#include "avnft/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>

namespace avnft {

namespace {

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("tensor: negative dimension in " + shape_str(shape));
        n *= static_cast<std::size_t>(d);
    }
    return shape.empty() ? 0 : n;
}

[[noreturn]] void shape_fail(const char* prim, const std::vector<int>& a, const std::vector<int>& b) {
    throw std::invalid_argument(std::string(prim) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

[[noreturn]] void shape_fail(const char* prim, const std::vector<int>& a) {
    throw std::invalid_argument(std::string(prim) + ": unsupported shape " + shape_str(a));
}

Tape* result_tape(const Tensor& a) { return a.on_tape() ? a.tape() : nullptr; }

Tape* result_tape(const Tensor& a, const Tensor& b) {
    Tape* ta = result_tape(a);
    Tape* tb = result_tape(b);
    if (ta && tb && ta != tb)
        throw std::invalid_argument("tensor op: operands recorded on different tapes");
    return ta ? ta : tb;
}

}  // namespace

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

Tensor make_result(Tape* tape, std::vector<int> shape, std::vector<double> data, int node) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<std::vector<double>>(std::move(data));
    t.tape_ = tape;
    t.node_ = node;
    return t;
}

Tensor Tensor::zeros(std::vector<int> shape) {
    std::size_t n = shape_numel(shape);
    return make_result(nullptr, std::move(shape), std::vector<double>(n, 0.0), -1);
}

Tensor Tensor::full(std::vector<int> shape, double v) {
    std::size_t n = shape_numel(shape);
    return make_result(nullptr, std::move(shape), std::vector<double>(n, v), -1);
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> data) {
    if (shape_numel(shape) != data.size())
        throw std::invalid_argument("tensor: " + shape_str(shape) + " does not hold " +
                                    std::to_string(data.size()) + " elements");
    return make_result(nullptr, std::move(shape), std::move(data), -1);
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

std::size_t Tensor::size() const { return data_ ? data_->size() : 0; }

double Tensor::item() const {
    if (size() != 1) throw std::invalid_argument("tensor: item() on non-scalar " + shape_str(shape_));
    return (*data_)[0];
}

void Tensor::attach(Tape& tape) {
    Tape::Node leaf;
    leaf.op = Tape::Op::kLeaf;
    leaf.shape = shape_;
    leaf.value = data_;
    node_ = tape.add_node(std::move(leaf));
    tape_ = &tape;
}

int Tape::add_node(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::ensure_node(const Tensor& t) {
    if (t.on_tape()) {
        if (t.tape() != this)
            throw std::invalid_argument("tape: tensor belongs to another tape");
        return t.node();
    }
    Node leaf;
    leaf.op = Op::kLeaf;
    leaf.shape = t.shape();
    leaf.value = t.data_ptr();
    return add_node(std::move(leaf));
}

namespace {

// records the op when a tape is involved and stamps the result tensor
Tensor finish(Tape* tape, Tape::Op op, std::vector<int> shape, std::vector<double> out,
              const std::vector<const Tensor*>& ins, double scalar = 0.0,
              std::vector<int> iaux = {}, std::vector<double> daux = {}) {
    Tensor r = make_result(nullptr, std::move(shape), std::move(out), -1);
    if (tape) {
        Tape::Node n;
        n.op = op;
        for (const Tensor* t : ins) n.inputs.push_back(tape->ensure_node(*t));
        n.shape = r.shape();
        n.value = r.data_ptr();
        n.scalar = scalar;
        n.iaux = std::move(iaux);
        n.daux = std::move(daux);
        int id = tape->add_node(std::move(n));
        r = make_result(tape, r.shape(), r.data(), id);
    }
    return r;
}

}  // namespace

// ---- elementwise ---------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_fail("add", a.shape(), b.shape());
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return finish(result_tape(a, b), Tape::Op::kAdd, a.shape(), std::move(out), {&a, &b});
}

Tensor sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_fail("sub", a.shape(), b.shape());
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return finish(result_tape(a, b), Tape::Op::kSub, a.shape(), std::move(out), {&a, &b});
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_fail("mul", a.shape(), b.shape());
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return finish(result_tape(a, b), Tape::Op::kMul, a.shape(), std::move(out), {&a, &b});
}

Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * a.data()[i];
    return finish(result_tape(a), Tape::Op::kScale, a.shape(), std::move(out), {&a}, c);
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
    if (x.rank() != 2 || v.rows() != 1 || v.cols() != x.cols())
        shape_fail("add_rowvec", x.shape(), v.shape());
    int r = x.rows(), c = x.cols();
    std::vector<double> out(x.size());
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            out[static_cast<std::size_t>(i) * c + j] = x.at(i, j) + v.data()[j];
    return finish(result_tape(x, v), Tape::Op::kAddRowVec, x.shape(), std::move(out), {&x, &v});
}

// ---- linear algebra ------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
        shape_fail("matmul", a.shape(), b.shape());
    int m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for (int i = 0; i < m; ++i) {
        double* po = out.data() + static_cast<std::size_t>(i) * n;
        for (int l = 0; l < k; ++l) {
            double av = pa[static_cast<std::size_t>(i) * k + l];
            const double* pr = pb + static_cast<std::size_t>(l) * n;
            for (int j = 0; j < n; ++j) po[j] += av * pr[j];
        }
    }
    return finish(result_tape(a, b), Tape::Op::kMatMul, {m, n}, std::move(out), {&a, &b});
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) shape_fail("transpose", a.shape());
    int r = a.rows(), c = a.cols();
    std::vector<double> out(a.size());
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            out[static_cast<std::size_t>(j) * r + i] = a.at(i, j);
    return finish(result_tape(a), Tape::Op::kTranspose, {c, r}, std::move(out), {&a});
}

// ---- row-wise nonlinearities ---------------------------------------------

Tensor softmax_rows(const Tensor& a) {
    if (a.rank() < 1 || a.rank() > 2 || a.cols() == 0) shape_fail("softmax", a.shape());
    int r = a.rows(), c = a.cols();
    std::vector<double> out(a.size());
    for (int i = 0; i < r; ++i) {
        const double* row = a.data().data() + static_cast<std::size_t>(i) * c;
        double* orow = out.data() + static_cast<std::size_t>(i) * c;
        double mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < c; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        for (int j = 0; j < c; ++j) orow[j] /= sum;
    }
    return finish(result_tape(a), Tape::Op::kSoftmaxRows, a.shape(), std::move(out), {&a});
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
    constexpr double kVarFloor = 1e-8;
    if (x.rank() < 1 || x.rank() > 2) shape_fail("layernorm", x.shape());
    if (gamma.rank() != 1 || gamma.cols() != x.cols()) shape_fail("layernorm", x.shape(), gamma.shape());
    if (beta.shape() != gamma.shape()) shape_fail("layernorm", gamma.shape(), beta.shape());
    int r = x.rows(), c = x.cols();
    std::vector<double> out(x.size());
    std::vector<double> daux;  // per row: mean, inv_std, clamped flag
    daux.reserve(static_cast<std::size_t>(r) * 3);
    for (int i = 0; i < r; ++i) {
        const double* row = x.data().data() + static_cast<std::size_t>(i) * c;
        double* orow = out.data() + static_cast<std::size_t>(i) * c;
        double mean = 0.0;
        for (int j = 0; j < c; ++j) mean += row[j];
        mean /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) {
            double d = row[j] - mean;
            var += d * d;
        }
        var /= c;
        bool clamped = var < kVarFloor;
        double inv = 1.0 / std::sqrt(clamped ? kVarFloor : var);
        for (int j = 0; j < c; ++j)
            orow[j] = (row[j] - mean) * inv * gamma.data()[j] + beta.data()[j];
        daux.push_back(mean);
        daux.push_back(inv);
        daux.push_back(clamped ? 1.0 : 0.0);
    }
    Tape* tape = result_tape(x, gamma);
    Tape* tb = result_tape(beta);
    if (tape && tb && tape != tb)
        throw std::invalid_argument("layernorm: operands recorded on different tapes");
    return finish(tape ? tape : tb, Tape::Op::kLayerNorm, x.shape(), std::move(out),
                  {&x, &gamma, &beta}, 0.0, {}, std::move(daux));
}

Tensor tanh_op(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.data()[i]);
    return finish(result_tape(a), Tape::Op::kTanh, a.shape(), std::move(out), {&a});
}

// ---- reductions ----------------------------------------------------------

Tensor mean_all(const Tensor& a) {
    if (a.size() == 0) shape_fail("mean", a.shape());
    double s = 0.0;
    for (double v : a.data()) s += v;
    return finish(result_tape(a), Tape::Op::kMeanAll, {1}, {s / static_cast<double>(a.size())}, {&a});
}

Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return finish(result_tape(a), Tape::Op::kSumAll, {1}, {s}, {&a});
}

Tensor squared_error(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_fail("squared_error", a.shape(), b.shape());
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a.data()[i] - b.data()[i];
        s += d * d;
    }
    return finish(result_tape(a, b), Tape::Op::kSquaredError, {1}, {s}, {&a, &b});
}

// ---- structure -----------------------------------------------------------

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty input list");
    int c = parts[0].cols();
    int r = 0;
    Tape* tape = nullptr;
    std::vector<int> splits;
    for (const Tensor& p : parts) {
        if (p.rank() != 2 || p.cols() != c) shape_fail("concat_rows", parts[0].shape(), p.shape());
        r += p.rows();
        splits.push_back(p.rows());
        Tape* pt = result_tape(p);
        if (pt) {
            if (tape && tape != pt) throw std::invalid_argument("concat_rows: mixed tapes");
            tape = pt;
        }
    }
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(r) * c);
    for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    std::vector<const Tensor*> ins;
    for (const Tensor& p : parts) ins.push_back(&p);
    return finish(tape, Tape::Op::kConcatRows, {r, c}, std::move(out), ins, 0.0, std::move(splits));
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty input list");
    int r = parts[0].rows();
    int c = 0;
    Tape* tape = nullptr;
    std::vector<int> splits;
    for (const Tensor& p : parts) {
        if (p.rank() != 2 || p.rows() != r) shape_fail("concat_cols", parts[0].shape(), p.shape());
        c += p.cols();
        splits.push_back(p.cols());
        Tape* pt = result_tape(p);
        if (pt) {
            if (tape && tape != pt) throw std::invalid_argument("concat_cols: mixed tapes");
            tape = pt;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(r) * c);
    int off = 0;
    for (const Tensor& p : parts) {
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < p.cols(); ++j)
                out[static_cast<std::size_t>(i) * c + off + j] = p.at(i, j);
        off += p.cols();
    }
    std::vector<const Tensor*> ins;
    for (const Tensor& p : parts) ins.push_back(&p);
    return finish(tape, Tape::Op::kConcatCols, {r, c}, std::move(out), ins, 0.0, std::move(splits));
}

Tensor slice(const Tensor& a, int r0, int r1, int c0, int c1) {
    if (a.rank() != 2) shape_fail("slice", a.shape());
    if (r0 < 0 || r1 > a.rows() || c0 < 0 || c1 > a.cols() || r0 >= r1 || c0 >= c1)
        throw std::invalid_argument("slice: bounds [" + std::to_string(r0) + "," + std::to_string(r1) +
                                    ")x[" + std::to_string(c0) + "," + std::to_string(c1) +
                                    ") invalid for " + shape_str(a.shape()));
    int r = r1 - r0, c = c1 - c0;
    std::vector<double> out(static_cast<std::size_t>(r) * c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            out[static_cast<std::size_t>(i) * c + j] = a.at(r0 + i, c0 + j);
    return finish(result_tape(a), Tape::Op::kSlice, {r, c}, std::move(out), {&a}, 0.0,
                  {r0, r1, c0, c1, a.rows(), a.cols()});
}

Tensor embed_row(const Tensor& table, int row) {
    if (table.rank() != 2) shape_fail("embed", table.shape());
    if (row < 0 || row >= table.rows())
        throw std::invalid_argument("embed: row " + std::to_string(row) + " out of range for " +
                                    shape_str(table.shape()));
    int c = table.cols();
    std::vector<double> out(static_cast<std::size_t>(c));
    for (int j = 0; j < c; ++j) out[j] = table.at(row, j);
    return finish(result_tape(table), Tape::Op::kEmbedRow, {c}, std::move(out), {&table}, 0.0,
                  {row, table.rows()});
}

// ---- gradient surgery primitives -----------------------------------------

Tensor stop_gradient(const Tensor& a) {
    std::vector<double> out = a.data();  // bit-exact copy
    return finish(result_tape(a), Tape::Op::kStopGradient, a.shape(), std::move(out), {&a});
}

Tensor partial_detach(const Tensor& a, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw std::invalid_argument("partial_detach: alpha " + std::to_string(alpha) +
                                    " outside [0,1]");
    std::vector<double> out = a.data();  // bit-exact copy
    return finish(result_tape(a), Tape::Op::kPartialDetach, a.shape(), std::move(out), {&a}, alpha);
}

// ---- backward ------------------------------------------------------------

std::vector<double> Gradients::of(const Tensor& t) const {
    if (t.node() >= 0 && t.tape() == tape_ && t.node() < static_cast<int>(by_node_.size()) &&
        !by_node_[t.node()].empty())
        return by_node_[t.node()];
    return std::vector<double>(t.size(), 0.0);
}

double Gradients::l2_norm(const Tensor& t) const {
    double s = 0.0;
    if (t.node() >= 0 && t.tape() == tape_ && t.node() < static_cast<int>(by_node_.size()))
        for (double g : by_node_[t.node()]) s += g * g;
    return std::sqrt(s);
}

Gradients Tape::backward(const Tensor& loss) const {
    if (loss.size() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
    if (!loss.on_tape() || loss.tape() != this)
        throw std::invalid_argument("backward: loss is not recorded on this tape");

    std::vector<std::vector<double>> grads(nodes_.size());
    grads[loss.node()] = {1.0};
    for (int id = loss.node(); id >= 0; --id) {
        if (grads[id].empty()) continue;
        apply_backward(id, grads);
    }

    Gradients out;
    out.tape_ = this;
    out.by_node_ = std::move(grads);
    return out;
}

namespace {

std::vector<double>& touch(std::vector<std::vector<double>>& grads, int id, std::size_t n) {
    if (grads[id].empty()) grads[id].assign(n, 0.0);
    return grads[id];
}

std::size_t numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

}  // namespace

void Tape::apply_backward(int id, std::vector<std::vector<double>>& grads) const {
    const Node& nd = nodes_[id];
    const std::vector<double>& g = grads[id];
    auto in = [&](int k) -> const Node& { return nodes_[nd.inputs[k]]; };
    auto gin = [&](int k) -> std::vector<double>& {
        return touch(grads, nd.inputs[k], numel(in(k).shape));
    };

    switch (nd.op) {
        case Op::kLeaf:
            break;
        case Op::kAdd: {
            auto& ga = gin(0);
            auto& gb = gin(1);
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i];
                gb[i] += g[i];
            }
            break;
        }
        case Op::kSub: {
            auto& ga = gin(0);
            auto& gb = gin(1);
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i];
                gb[i] -= g[i];
            }
            break;
        }
        case Op::kMul: {
            const auto& av = *in(0).value;
            const auto& bv = *in(1).value;
            auto& ga = gin(0);
            auto& gb = gin(1);
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i] * bv[i];
                gb[i] += g[i] * av[i];
            }
            break;
        }
        case Op::kScale: {
            auto& ga = gin(0);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += nd.scalar * g[i];
            break;
        }
        case Op::kAddRowVec: {
            int r = nd.shape[0], c = nd.shape[1];
            auto& gx = gin(0);
            auto& gv = gin(1);
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) {
                    double gij = g[static_cast<std::size_t>(i) * c + j];
                    gx[static_cast<std::size_t>(i) * c + j] += gij;
                    gv[j] += gij;
                }
            break;
        }
        case Op::kMatMul: {
            const auto& av = *in(0).value;
            const auto& bv = *in(1).value;
            int m = in(0).shape[0], k = in(0).shape[1], n = in(1).shape[1];
            auto& ga = gin(0);
            auto& gb = gin(1);
            // dA = g B^T, dB = A^T g
            for (int i = 0; i < m; ++i)
                for (int l = 0; l < k; ++l) {
                    double s = 0.0;
                    for (int j = 0; j < n; ++j)
                        s += g[static_cast<std::size_t>(i) * n + j] * bv[static_cast<std::size_t>(l) * n + j];
                    ga[static_cast<std::size_t>(i) * k + l] += s;
                }
            for (int l = 0; l < k; ++l)
                for (int j = 0; j < n; ++j) {
                    double s = 0.0;
                    for (int i = 0; i < m; ++i)
                        s += av[static_cast<std::size_t>(i) * k + l] * g[static_cast<std::size_t>(i) * n + j];
                    gb[static_cast<std::size_t>(l) * n + j] += s;
                }
            break;
        }
        case Op::kTranspose: {
            int r = nd.shape[0], c = nd.shape[1];  // result shape
            auto& ga = gin(0);
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j)
                    ga[static_cast<std::size_t>(j) * r + i] += g[static_cast<std::size_t>(i) * c + j];
            break;
        }
        case Op::kSoftmaxRows: {
            const auto& y = *nd.value;
            int c = nd.shape.size() == 2 ? nd.shape[1] : nd.shape[0];
            int r = static_cast<int>(y.size()) / c;
            auto& ga = gin(0);
            for (int i = 0; i < r; ++i) {
                std::size_t off = static_cast<std::size_t>(i) * c;
                double dot = 0.0;
                for (int j = 0; j < c; ++j) dot += g[off + j] * y[off + j];
                for (int j = 0; j < c; ++j) ga[off + j] += y[off + j] * (g[off + j] - dot);
            }
            break;
        }
        case Op::kLayerNorm: {
            const auto& xv = *in(0).value;
            const auto& gammav = *in(1).value;
            int c = nd.shape.size() == 2 ? nd.shape[1] : nd.shape[0];
            int r = static_cast<int>(xv.size()) / c;
            auto& gx = gin(0);
            auto& ggamma = gin(1);
            auto& gbeta = gin(2);
            for (int i = 0; i < r; ++i) {
                std::size_t off = static_cast<std::size_t>(i) * c;
                double mean = nd.daux[static_cast<std::size_t>(i) * 3 + 0];
                double inv = nd.daux[static_cast<std::size_t>(i) * 3 + 1];
                bool clamped = nd.daux[static_cast<std::size_t>(i) * 3 + 2] != 0.0;
                double mean_h = 0.0, mean_hx = 0.0;
                for (int j = 0; j < c; ++j) {
                    double xhat = (xv[off + j] - mean) * inv;
                    double h = g[off + j] * gammav[j];
                    ggamma[j] += g[off + j] * xhat;
                    gbeta[j] += g[off + j];
                    mean_h += h;
                    mean_hx += h * xhat;
                }
                mean_h /= c;
                mean_hx /= c;
                for (int j = 0; j < c; ++j) {
                    double xhat = (xv[off + j] - mean) * inv;
                    double h = g[off + j] * gammav[j];
                    // clamped variance is constant w.r.t. x
                    double d = clamped ? (h - mean_h) : (h - mean_h - xhat * mean_hx);
                    gx[off + j] += inv * d;
                }
            }
            break;
        }
        case Op::kTanh: {
            const auto& y = *nd.value;
            auto& ga = gin(0);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
            break;
        }
        case Op::kMeanAll: {
            auto& ga = gin(0);
            double s = g[0] / static_cast<double>(ga.size());
            for (double& v : ga) v += s;
            break;
        }
        case Op::kSumAll: {
            auto& ga = gin(0);
            for (double& v : ga) v += g[0];
            break;
        }
        case Op::kSquaredError: {
            const auto& av = *in(0).value;
            const auto& bv = *in(1).value;
            auto& ga = gin(0);
            auto& gb = gin(1);
            for (std::size_t i = 0; i < av.size(); ++i) {
                double d = 2.0 * g[0] * (av[i] - bv[i]);
                ga[i] += d;
                gb[i] -= d;
            }
            break;
        }
        case Op::kConcatRows: {
            int c = nd.shape[1];
            int row = 0;
            for (std::size_t k = 0; k < nd.inputs.size(); ++k) {
                int pr = nd.iaux[k];
                auto& gk = gin(static_cast<int>(k));
                for (int i = 0; i < pr; ++i)
                    for (int j = 0; j < c; ++j)
                        gk[static_cast<std::size_t>(i) * c + j] +=
                            g[static_cast<std::size_t>(row + i) * c + j];
                row += pr;
            }
            break;
        }
        case Op::kConcatCols: {
            int r = nd.shape[0], c = nd.shape[1];
            int col = 0;
            for (std::size_t k = 0; k < nd.inputs.size(); ++k) {
                int pc = nd.iaux[k];
                auto& gk = gin(static_cast<int>(k));
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < pc; ++j)
                        gk[static_cast<std::size_t>(i) * pc + j] +=
                            g[static_cast<std::size_t>(i) * c + col + j];
                col += pc;
            }
            break;
        }
        case Op::kSlice: {
            int r0 = nd.iaux[0], c0 = nd.iaux[2];
            int r = nd.shape[0], c = nd.shape[1];
            int in_c = nd.iaux[5];
            auto& ga = gin(0);
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j)
                    ga[static_cast<std::size_t>(r0 + i) * in_c + c0 + j] +=
                        g[static_cast<std::size_t>(i) * c + j];
            break;
        }
        case Op::kEmbedRow: {
            int row = nd.iaux[0];
            int c = nd.shape[0];
            auto& ga = gin(0);
            for (int j = 0; j < c; ++j) ga[static_cast<std::size_t>(row) * c + j] += g[j];
            break;
        }
        case Op::kStopGradient:
            break;
        case Op::kPartialDetach: {
            double keep = 1.0 - nd.scalar;
            auto& ga = gin(0);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += keep * g[i];
            break;
        }
    }
}

}  // namespace avnft
