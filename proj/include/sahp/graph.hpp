#pragma once

#include <functional>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace sahp::ad {

/// Row-major everywhere. The matmul kernels below loop over rows with a fixed
/// accumulation order, so a row of any result depends only on the rows it
/// reads, never on how many other rows the matrix happens to have. That is
/// what makes the causal-prefix equalities hold bit-for-bit.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Graph;

/// Handle to a node in a Graph. Cheap to copy; valid for the graph's lifetime.
struct Var {
    Graph* graph = nullptr;
    int id = -1;

    const Mat& value() const;
    const Mat& grad() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
};

/// Reverse-mode tape over dense double matrices. Each operation records a
/// closure that scatters the output adjoint back to its inputs; backward()
/// replays them newest-first. One graph per objective evaluation; the graph
/// is append-only and must outlive its Vars.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var leaf(Mat value, bool requires_grad = true);
    Var constant(Mat value);

    /// Seeds d(out)/d(out) = 1 (out must be 1x1) and accumulates adjoints
    /// into every node with requires_grad reachable from it.
    void backward(Var out);

    std::size_t size() const { return nodes_.size(); }

    // Internal accessors used by the op implementations.
    const Mat& value_of(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
    const Mat& grad_of(int id);
    void accumulate(int id, const Mat& delta);
    Var make_node(Mat value, const std::vector<int>& parents, std::function<void(Graph&, int)> backprop);

private:
    struct Node {
        Mat value;
        Mat grad;  // allocated on first accumulation
        bool requires_grad = false;
        bool grad_live = false;
        std::function<void(Graph&, int)> backprop;  // empty for leaves/constants
    };
    std::vector<Node> nodes_;
};

// Elementwise (equal shapes).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

Var scale(Var a, double c);
Var add_scalar(Var a, double c);

Var matmul(Var a, Var b);     // a * b
Var matmul_nt(Var a, Var b);  // a * b^T

/// Adds a 1 x F row vector to every row of an R x F matrix.
Var add_rowvec(Var m, Var row);

/// out.row(i) = m.row(rows[i]); duplicate indices scatter-add in backward.
Var gather_rows(Var m, std::vector<int> rows);

Var hconcat(std::span<const Var> parts);

Var exp(Var a);
Var log(Var a);
Var sin(Var a);
Var cos(Var a);
Var neg(Var a);
Var softplus(Var a);
Var gelu(Var a);  // exact erf-based form

/// Row-wise softmax over a leading prefix of columns: row r normalizes over
/// columns [0, valid_counts[r]) and is exactly zero elsewhere. Masked columns
/// never enter the max/sum, so future positions cannot leak into the result.
Var prefix_softmax_rows(Var scores, std::vector<int> valid_counts);

/// Row-wise standardization (zero mean, unit variance, no affine part).
Var layernorm_rows(Var a, double eps = 1e-6);

/// Replicates an L x 1 column n times into L x n.
Var bcast_col(Var v, int n);

Var sum_all(Var a);  // 1x1

// Scalar activation helpers shared with the non-tape code paths.
double softplus_value(double x);
double sigmoid_value(double x);
double gelu_value(double x);

}  // namespace sahp::ad
