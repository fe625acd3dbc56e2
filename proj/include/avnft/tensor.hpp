#pragma once

#include <memory>
#include <string>
#include <vector>

namespace avnft {

class Tape;

/// Shape-carrying double tensor, optionally attached to a differentiation
/// tape. Rank 1 ({n}) and rank 2 ({rows, cols}) cover everything the model
/// needs; scalars are {1}. A tensor without a node handle is a plain value
/// and contributes zero gradient to any backward pass.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double v);
    static Tensor from(std::vector<int> shape, std::vector<double> data);
    static Tensor scalar(double v);

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::size_t size() const;
    // row/col view of the last-axis layout: rank 1 is a single row
    int rows() const { return rank() == 2 ? shape_[0] : 1; }
    int cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 0); }

    bool defined() const { return static_cast<bool>(data_); }
    const std::vector<double>& data() const { return *data_; }
    std::vector<double>& mutable_data() { return *data_; }
    std::shared_ptr<const std::vector<double>> data_ptr() const { return data_; }
    double item() const;
    double at(int r, int c) const { return (*data_)[static_cast<std::size_t>(r) * cols() + c]; }

    bool on_tape() const { return node_ >= 0; }
    Tape* tape() const { return tape_; }
    int node() const { return node_; }

    // attach/detach a leaf node (parameters); value buffer is shared
    void attach(Tape& tape);
    void detach() { tape_ = nullptr; node_ = -1; }

private:
    friend class Tape;
    friend Tensor make_result(Tape*, std::vector<int>, std::vector<double>, int);

    std::vector<int> shape_;
    std::shared_ptr<std::vector<double>> data_;
    Tape* tape_ = nullptr;
    int node_ = -1;
};

std::string shape_str(const std::vector<int>& shape);

/// Gradient bundle returned by Tape::backward, keyed by node handle.
/// Tensors that never joined the tape get a zero gradient.
class Gradients {
public:
    std::vector<double> of(const Tensor& t) const;
    double l2_norm(const Tensor& t) const;

private:
    friend class Tape;
    const Tape* tape_ = nullptr;
    std::vector<std::vector<double>> by_node_;
};

/// Reverse-mode tape. Records primitive applications in execution order
/// (which is already a valid topological order) and replays them backward
/// in one fixed-order sweep, so gradients are bitwise reproducible.
class Tape {
public:
    enum class Op {
        kLeaf,
        kAdd,
        kSub,
        kMul,
        kScale,
        kAddRowVec,
        kMatMul,
        kTranspose,
        kSoftmaxRows,
        kLayerNorm,
        kTanh,
        kMeanAll,
        kSumAll,
        kSquaredError,
        kConcatRows,
        kConcatCols,
        kSlice,
        kEmbedRow,
        kStopGradient,
        kPartialDetach,
    };

    struct Node {
        Op op;
        std::vector<int> inputs;
        std::vector<int> shape;
        std::shared_ptr<const std::vector<double>> value;
        double scalar = 0.0;        // scale factor / detach alpha
        std::vector<int> iaux;      // slice bounds, embed row, concat splits
        std::vector<double> daux;   // layernorm per-row (mean, inv_std, clamped)
    };

    std::size_t size() const { return nodes_.size(); }
    const Node& node(int id) const { return nodes_[id]; }
    void clear() { nodes_.clear(); }

    /// Backward pass from a scalar loss node. Each recorded node is visited
    /// at most once, in reverse tape order.
    Gradients backward(const Tensor& loss) const;

    int add_node(Node n);
    // resolve a tensor to a node id, recording a constant leaf if needed
    int ensure_node(const Tensor& t);

private:
    void apply_backward(int id, std::vector<std::vector<double>>& grads) const;
    std::vector<Node> nodes_;
};

// ---- primitive set -------------------------------------------------------
// Forward values follow the mathematical definition; a graph record is
// appended whenever any operand carries a node handle. Shape mismatches
// throw std::invalid_argument naming the primitive and both shapes.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
/// x: [r x c], v: {c} or [1 x c]; adds v to every row of x
Tensor add_rowvec(const Tensor& x, const Tensor& v);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// numerically stabilized softmax over the last axis (row max subtracted)
Tensor softmax_rows(const Tensor& a);
/// row-wise layer normalization with affine terms; variance floored at 1e-8,
/// so a zero-variance row normalizes to zeros
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta);
Tensor tanh_op(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor sum_all(const Tensor& a);
/// scalar sum of squared differences
Tensor squared_error(const Tensor& a, const Tensor& b);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
/// 2-d block slice, rows [r0, r1) and cols [c0, c1)
Tensor slice(const Tensor& a, int r0, int r1, int c0, int c1);
/// row lookup into a [vocab x d] table; returns {d}
Tensor embed_row(const Tensor& table, int row);

/// identity forward, zero gradient through this edge
Tensor stop_gradient(const Tensor& a);
/// alpha * sg(x) + (1 - alpha) * x: identity forward (bit-exact), backward
/// gradient through this edge scaled by (1 - alpha)
Tensor partial_detach(const Tensor& a, double alpha);

}  // namespace avnft
