#include "sahp/graph.hpp"

#include <cmath>
#include <stdexcept>

namespace sahp::ad {

namespace {

void check_same_graph(Var a, Var b) {
    if (a.graph != b.graph) throw std::logic_error("ad: vars belong to different graphs");
}

void check_same_shape(Var a, Var b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::logic_error("ad: shape mismatch");
}

// out += a * b with accumulation over a's columns in ascending order,
// row by row. The order never depends on the number of rows.
void matmul_acc(const Mat& a, const Mat& b, Mat& out) {
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        for (Eigen::Index k = 0; k < a.cols(); ++k) {
            out.row(r) += a(r, k) * b.row(k);
        }
    }
}

// out(r, c) = a.row(r) . b.row(c)
Mat matmul_nt_value(const Mat& a, const Mat& b) {
    Mat out(a.rows(), b.rows());
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        for (Eigen::Index c = 0; c < b.rows(); ++c) {
            out(r, c) = a.row(r).dot(b.row(c));
        }
    }
    return out;
}

}  // namespace

const Mat& Var::value() const { return graph->value_of(id); }
const Mat& Var::grad() const { return graph->grad_of(id); }

Var Graph::leaf(Mat value, bool requires_grad) {
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::constant(Mat value) { return leaf(std::move(value), false); }

Var Graph::make_node(Mat value, const std::vector<int>& parents, std::function<void(Graph&, int)> backprop) {
    Node node;
    node.value = std::move(value);
    for (int p : parents) node.requires_grad |= nodes_[static_cast<std::size_t>(p)].requires_grad;
    if (node.requires_grad) node.backprop = std::move(backprop);
    nodes_.push_back(std::move(node));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

const Mat& Graph::grad_of(int id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.grad_live) {
        node.grad = Mat::Zero(node.value.rows(), node.value.cols());
        node.grad_live = true;
    }
    return node.grad;
}

void Graph::accumulate(int id, const Mat& delta) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.requires_grad) return;
    if (!node.grad_live) {
        node.grad = Mat::Zero(node.value.rows(), node.value.cols());
        node.grad_live = true;
    }
    node.grad += delta;
}

void Graph::backward(Var out) {
    if (out.graph != this) throw std::logic_error("ad: backward on foreign var");
    if (out.rows() != 1 || out.cols() != 1) throw std::logic_error("ad: backward needs a 1x1 output");
    accumulate(out.id, Mat::Ones(1, 1));
    for (int id = out.id; id >= 0; --id) {
        Node& node = nodes_[static_cast<std::size_t>(id)];
        if (node.grad_live && node.backprop) node.backprop(*this, id);
    }
}

Var add(Var a, Var b) {
    check_same_graph(a, b);
    check_same_shape(a, b);
    const int ia = a.id, ib = b.id;
    return a.graph->make_node(a.value() + b.value(), {ia, ib}, [ia, ib](Graph& g, int self) {
        g.accumulate(ia, g.grad_of(self));
        g.accumulate(ib, g.grad_of(self));
    });
}

Var sub(Var a, Var b) {
    check_same_graph(a, b);
    check_same_shape(a, b);
    const int ia = a.id, ib = b.id;
    return a.graph->make_node(a.value() - b.value(), {ia, ib}, [ia, ib](Graph& g, int self) {
        g.accumulate(ia, g.grad_of(self));
        g.accumulate(ib, -g.grad_of(self));
    });
}

Var mul(Var a, Var b) {
    check_same_graph(a, b);
    check_same_shape(a, b);
    const int ia = a.id, ib = b.id;
    return a.graph->make_node(a.value().cwiseProduct(b.value()), {ia, ib}, [ia, ib](Graph& g, int self) {
        g.accumulate(ia, g.grad_of(self).cwiseProduct(g.value_of(ib)));
        g.accumulate(ib, g.grad_of(self).cwiseProduct(g.value_of(ia)));
    });
}

Var scale(Var a, double c) {
    const int ia = a.id;
    return a.graph->make_node(a.value() * c, {ia},
                              [ia, c](Graph& g, int self) { g.accumulate(ia, g.grad_of(self) * c); });
}

Var add_scalar(Var a, double c) {
    const int ia = a.id;
    Mat out = a.value();
    out.array() += c;
    return a.graph->make_node(std::move(out), {ia},
                              [ia](Graph& g, int self) { g.accumulate(ia, g.grad_of(self)); });
}

Var matmul(Var a, Var b) {
    check_same_graph(a, b);
    if (a.cols() != b.rows()) throw std::logic_error("ad: matmul inner dimension mismatch");
    const int ia = a.id, ib = b.id;
    Mat out = Mat::Zero(a.rows(), b.cols());
    matmul_acc(a.value(), b.value(), out);
    return a.graph->make_node(std::move(out), {ia, ib}, [ia, ib](Graph& g, int self) {
        const Mat& go = g.grad_of(self);
        const Mat& av = g.value_of(ia);
        const Mat& bv = g.value_of(ib);
        if (g.requires_grad(ia)) g.accumulate(ia, matmul_nt_value(go, bv));  // dA = dOut * B^T
        if (g.requires_grad(ib)) {
            Mat db = Mat::Zero(bv.rows(), bv.cols());  // dB = A^T * dOut
            for (Eigen::Index r = 0; r < av.rows(); ++r) {
                for (Eigen::Index k = 0; k < av.cols(); ++k) {
                    db.row(k) += av(r, k) * go.row(r);
                }
            }
            g.accumulate(ib, db);
        }
    });
}

Var matmul_nt(Var a, Var b) {
    check_same_graph(a, b);
    if (a.cols() != b.cols()) throw std::logic_error("ad: matmul_nt inner dimension mismatch");
    const int ia = a.id, ib = b.id;
    return a.graph->make_node(matmul_nt_value(a.value(), b.value()), {ia, ib}, [ia, ib](Graph& g, int self) {
        const Mat& go = g.grad_of(self);
        const Mat& av = g.value_of(ia);
        const Mat& bv = g.value_of(ib);
        if (g.requires_grad(ia)) {
            Mat da = Mat::Zero(av.rows(), av.cols());  // dA = dOut * B
            matmul_acc(go, bv, da);
            g.accumulate(ia, da);
        }
        if (g.requires_grad(ib)) {
            Mat db = Mat::Zero(bv.rows(), bv.cols());  // dB = dOut^T * A
            for (Eigen::Index r = 0; r < go.rows(); ++r) {
                for (Eigen::Index c = 0; c < go.cols(); ++c) {
                    db.row(c) += go(r, c) * av.row(r);
                }
            }
            g.accumulate(ib, db);
        }
    });
}

Var add_rowvec(Var m, Var row) {
    check_same_graph(m, row);
    if (row.rows() != 1 || row.cols() != m.cols()) throw std::logic_error("ad: add_rowvec shape mismatch");
    const int im = m.id, ir = row.id;
    Mat out = m.value();
    out.rowwise() += row.value().row(0);
    return m.graph->make_node(std::move(out), {im, ir}, [im, ir](Graph& g, int self) {
        const Mat& go = g.grad_of(self);
        g.accumulate(im, go);
        g.accumulate(ir, go.colwise().sum());
    });
}

Var gather_rows(Var m, std::vector<int> rows) {
    const int im = m.id;
    Mat out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= m.rows()) throw std::out_of_range("ad: gather_rows index out of range");
        out.row(static_cast<Eigen::Index>(i)) = m.value().row(rows[i]);
    }
    return m.graph->make_node(std::move(out), {im}, [im, rows = std::move(rows)](Graph& g, int self) {
        const Mat& go = g.grad_of(self);
        Mat dm = Mat::Zero(g.value_of(im).rows(), g.value_of(im).cols());
        for (std::size_t i = 0; i < rows.size(); ++i) dm.row(rows[i]) += go.row(static_cast<Eigen::Index>(i));
        g.accumulate(im, dm);
    });
}

Var hconcat(std::span<const Var> parts) {
    if (parts.empty()) throw std::logic_error("ad: hconcat of nothing");
    Graph* graph = parts[0].graph;
    Eigen::Index rows = parts[0].rows(), cols = 0;
    std::vector<int> ids;
    std::vector<Eigen::Index> widths;
    for (const Var& p : parts) {
        if (p.graph != graph || p.rows() != rows) throw std::logic_error("ad: hconcat mismatch");
        ids.push_back(p.id);
        widths.push_back(p.cols());
        cols += p.cols();
    }
    Mat out(rows, cols);
    Eigen::Index at = 0;
    for (const Var& p : parts) {
        out.middleCols(at, p.cols()) = p.value();
        at += p.cols();
    }
    return graph->make_node(std::move(out), ids, [ids, widths = std::move(widths)](Graph& g, int self) {
        const Mat& go = g.grad_of(self);
        Eigen::Index at = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            g.accumulate(ids[k], go.middleCols(at, widths[k]));
            at += widths[k];
        }
    });
}

double softplus_value(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid_value(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

namespace {

double gelu_deriv(double x) {
    const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * phi;
}

Var unary_op(Var a, double (*fwd)(double), double (*deriv)(double)) {
    const int ia = a.id;
    Mat out = a.value().unaryExpr(fwd);
    return a.graph->make_node(std::move(out), {ia}, [ia, deriv](Graph& g, int self) {
        g.accumulate(ia, g.grad_of(self).cwiseProduct(g.value_of(ia).unaryExpr(deriv)));
    });
}

double std_log(double x) { return std::log(x); }
double inv(double x) { return 1.0 / x; }
double std_sin(double x) { return std::sin(x); }
double std_cos(double x) { return std::cos(x); }
double neg_sin(double x) { return -std::sin(x); }

}  // namespace

Var exp(Var a) {
    const int ia = a.id;
    Mat out = a.value().array().exp().matrix();
    return a.graph->make_node(std::move(out), {ia}, [ia](Graph& g, int self) {
        g.accumulate(ia, g.grad_of(self).cwiseProduct(g.value_of(self)));
    });
}

Var log(Var a) { return unary_op(a, &std_log, &inv); }
Var sin(Var a) { return unary_op(a, &std_sin, &std_cos); }
Var cos(Var a) { return unary_op(a, &std_cos, &neg_sin); }
Var neg(Var a) { return scale(a, -1.0); }
Var softplus(Var a) { return unary_op(a, &softplus_value, &sigmoid_value); }
Var gelu(Var a) { return unary_op(a, &gelu_value, &gelu_deriv); }

Var prefix_softmax_rows(Var scores, std::vector<int> valid_counts) {
    if (static_cast<Eigen::Index>(valid_counts.size()) != scores.rows()) {
        throw std::logic_error("ad: prefix_softmax_rows needs one count per row");
    }
    const Mat& s = scores.value();
    Mat out = Mat::Zero(s.rows(), s.cols());
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const int vc = valid_counts[static_cast<std::size_t>(r)];
        if (vc <= 0 || vc > s.cols()) throw std::logic_error("ad: invalid prefix count");
        const double m = s.row(r).head(vc).maxCoeff();
        Eigen::RowVectorXd e = (s.row(r).head(vc).array() - m).exp().matrix();
        out.row(r).head(vc) = e / e.sum();
    }
    const int is = scores.id;
    return scores.graph->make_node(
        std::move(out), {is}, [is, valid_counts = std::move(valid_counts)](Graph& g, int self) {
            const Mat& p = g.value_of(self);
            const Mat& go = g.grad_of(self);
            Mat ds = Mat::Zero(p.rows(), p.cols());
            for (Eigen::Index r = 0; r < p.rows(); ++r) {
                const int vc = valid_counts[static_cast<std::size_t>(r)];
                const double inner = go.row(r).head(vc).dot(p.row(r).head(vc));
                ds.row(r).head(vc) =
                    p.row(r).head(vc).cwiseProduct((go.row(r).head(vc).array() - inner).matrix());
            }
            g.accumulate(is, ds);
        });
}

Var layernorm_rows(Var a, double eps) {
    const Mat& x = a.value();
    const auto f = static_cast<double>(x.cols());
    Eigen::VectorXd sigma(x.rows());
    Mat y(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mean = x.row(r).mean();
        Eigen::RowVectorXd centered = (x.row(r).array() - mean).matrix();
        const double var = centered.squaredNorm() / f;
        sigma(r) = std::sqrt(var + eps);
        y.row(r) = centered / sigma(r);
    }
    const int ia = a.id;
    return a.graph->make_node(std::move(y), {ia}, [ia, sigma = std::move(sigma), f](Graph& g, int self) {
        const Mat& yv = g.value_of(self);
        const Mat& go = g.grad_of(self);
        // dx = (dy - mean(dy) - y * mean(dy .* y)) / sigma, means row-wise.
        Mat dx(yv.rows(), yv.cols());
        for (Eigen::Index r = 0; r < yv.rows(); ++r) {
            const double mean_dy = go.row(r).mean();
            const double mean_dyy = go.row(r).dot(yv.row(r)) / f;
            dx.row(r) = ((go.row(r).array() - mean_dy - yv.row(r).array() * mean_dyy) / sigma(r)).matrix();
        }
        g.accumulate(ia, dx);
    });
}

Var bcast_col(Var v, int n) {
    if (v.cols() != 1) throw std::logic_error("ad: bcast_col needs a column vector");
    const int iv = v.id;
    Mat out = v.value().replicate(1, n);
    return v.graph->make_node(std::move(out), {iv}, [iv](Graph& g, int self) {
        g.accumulate(iv, g.grad_of(self).rowwise().sum());
    });
}

Var sum_all(Var a) {
    const int ia = a.id;
    Mat out(1, 1);
    out(0, 0) = a.value().sum();
    return a.graph->make_node(std::move(out), {ia}, [ia](Graph& g, int self) {
        const double go = g.grad_of(self)(0, 0);
        g.accumulate(ia, Mat::Constant(g.value_of(ia).rows(), g.value_of(ia).cols(), go));
    });
}

}  // namespace sahp::ad
