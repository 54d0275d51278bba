#include "aerosense/autodiff.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <random>

namespace aero {

namespace {

void require(bool ok, const char* msg) {
    if (!ok) throw ShapeMismatch(msg);
}

#ifndef NDEBUG
void debug_check_finite(const Tensor& t) {
    for (double v : t.data) assert(std::isfinite(v));
}
#else
void debug_check_finite(const Tensor&) {}
#endif

} // namespace

Pooling pooling_from_string(const std::string& s) {
    if (s == "sum") return Pooling::sum;
    if (s == "mean") return Pooling::mean;
    if (s == "max") return Pooling::max;
    throw InvalidConfig("unknown pooling mode: " + s);
}

std::string pooling_to_string(Pooling p) {
    switch (p) {
    case Pooling::sum: return "sum";
    case Pooling::mean: return "mean";
    case Pooling::max: return "max";
    }
    return "sum";
}

int Graph::push(Node n) {
    debug_check_finite(n.value);
    n.grad = Tensor::zeros(n.value.shape);
    nodes_.push_back(std::move(n));
    return int(nodes_.size()) - 1;
}

int Graph::leaf(Tensor value) {
    Node n;
    n.op = Op::leaf;
    n.value = std::move(value);
    return push(std::move(n));
}

int Graph::matmul(int a, int b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    require(A.cols() == B.rows(), "matmul: inner dimensions differ");
    Node n;
    n.op = Op::matmul;
    n.inputs = {a, b};
    n.value = Tensor::zeros({A.rows(), B.cols()});
    const int64_t N = A.rows(), K = A.cols(), M = B.cols();
    for (int64_t i = 0; i < N; ++i) {
        for (int64_t k = 0; k < K; ++k) {
            const double aik = A.at(i, k);
            if (aik == 0.0) continue;
            const double* brow = &B.data[size_t(k * M)];
            double* crow = &n.value.data[size_t(i * M)];
            for (int64_t j = 0; j < M; ++j) crow[j] += aik * brow[j];
        }
    }
    return push(std::move(n));
}

int Graph::matmul_nt(int a, int b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    require(A.cols() == B.cols(), "matmul_nt: contraction dimensions differ");
    Node n;
    n.op = Op::matmul_nt;
    n.inputs = {a, b};
    n.value = Tensor::zeros({A.rows(), B.rows()});
    const int64_t N = A.rows(), K = A.cols(), M = B.rows();
    for (int64_t i = 0; i < N; ++i) {
        for (int64_t j = 0; j < M; ++j) {
            double s = 0.0;
            const double* arow = &A.data[size_t(i * K)];
            const double* brow = &B.data[size_t(j * K)];
            for (int64_t k = 0; k < K; ++k) s += arow[k] * brow[k];
            n.value.at(i, j) = s;
        }
    }
    return push(std::move(n));
}

int Graph::attn_apply(int weights, int values, const Tensor& mask) {
    const Tensor& W = value(weights);
    const Tensor& V = value(values);
    require(W.cols() == V.rows(), "attn_apply: weight columns must match value rows");
    require(mask.same_shape(W), "attn_apply: mask shape must match weights");
    Node n;
    n.op = Op::attn_apply;
    n.inputs = {weights, values};
    n.aux0 = mask;
    n.value = Tensor::zeros({W.rows(), V.cols()});
    const int64_t N = W.rows(), S = V.rows(), D = V.cols();
    std::vector<double> scratch(static_cast<size_t>(S));
    for (int64_t i = 0; i < N; ++i) {
        for (int64_t d = 0; d < D; ++d) {
            size_t m = 0;
            for (int64_t j = 0; j < S; ++j) {
                if (is_masked(mask.at(i, j))) continue;
                scratch[m++] = W.at(i, j) * V.at(j, d);
            }
            n.value.at(i, d) = pairwise_sum(std::span<const double>(scratch.data(), m));
        }
    }
    return push(std::move(n));
}

int Graph::add(int a, int b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    require(A.same_shape(B), "add: shapes differ");
    Node n;
    n.op = Op::add;
    n.inputs = {a, b};
    n.value = A;
    for (size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] += B.data[i];
    return push(std::move(n));
}

int Graph::sub(int a, int b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    require(A.same_shape(B), "sub: shapes differ");
    Node n;
    n.op = Op::sub;
    n.inputs = {a, b};
    n.value = A;
    for (size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] -= B.data[i];
    return push(std::move(n));
}

int Graph::add_rowvec(int a, int v) {
    const Tensor& A = value(a);
    const Tensor& V = value(v);
    require(V.rows() == 1 && V.cols() == A.cols(), "add_rowvec: expected [1, cols]");
    Node n;
    n.op = Op::add_rowvec;
    n.inputs = {a, v};
    n.value = A;
    for (int64_t i = 0; i < A.rows(); ++i) {
        for (int64_t j = 0; j < A.cols(); ++j) n.value.at(i, j) += V.at(0, j);
    }
    return push(std::move(n));
}

int Graph::scale(int a, double k) {
    Node n;
    n.op = Op::scale;
    n.inputs = {a};
    n.k = k;
    n.value = value(a);
    for (double& x : n.value.data) x *= k;
    return push(std::move(n));
}

int Graph::relu(int a) {
    Node n;
    n.op = Op::relu;
    n.inputs = {a};
    n.value = value(a);
    for (double& x : n.value.data) x = x > 0.0 ? x : 0.0;
    return push(std::move(n));
}

int Graph::dropout(int a, double p, bool training, uint64_t seed) {
    if (!(p >= 0.0 && p < 1.0)) throw InvalidProbability("dropout probability must be in [0, 1)");
    Node n;
    n.op = Op::dropout;
    n.inputs = {a};
    n.k = p;
    n.flag = training;
    n.value = value(a);
    if (training && p > 0.0) {
        n.aux0 = Tensor::zeros(n.value.shape);
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const double inv_keep = 1.0 / (1.0 - p);
        for (size_t i = 0; i < n.value.data.size(); ++i) {
            const double keep = u(rng) >= p ? inv_keep : 0.0;
            n.aux0.data[i] = keep;
            n.value.data[i] *= keep;
        }
    }
    return push(std::move(n));
}

int Graph::batchnorm(int x, int gamma, int beta, const BatchNormState& state, bool training,
                     const std::vector<double>& row_mask, BatchNormBatchStats* stats_out,
                     double eps) {
    const Tensor& X = value(x);
    const Tensor& G = value(gamma);
    const Tensor& B = value(beta);
    const int64_t N = X.rows(), D = X.cols();
    require(G.rows() == 1 && G.cols() == D, "batchnorm: gamma must be [1, d]");
    require(B.rows() == 1 && B.cols() == D, "batchnorm: beta must be [1, d]");
    require(int64_t(row_mask.size()) == N, "batchnorm: row_mask length must match rows");

    double n_valid = 0.0;
    for (double m : row_mask) n_valid += m;

    Node n;
    n.op = Op::batchnorm;
    n.inputs = {x, gamma, beta};
    n.weights = row_mask;
    n.k = eps;
    n.k2 = n_valid;
    n.flag = training && n_valid > 0.0;

    Tensor mean{1, D}, var{1, D};
    if (n.flag) {
        for (int64_t j = 0; j < D; ++j) {
            double s = 0.0;
            for (int64_t i = 0; i < N; ++i) s += row_mask[size_t(i)] * X.at(i, j);
            mean.at(0, j) = s / n_valid;
        }
        for (int64_t j = 0; j < D; ++j) {
            double s = 0.0;
            for (int64_t i = 0; i < N; ++i) {
                const double d = X.at(i, j) - mean.at(0, j);
                s += row_mask[size_t(i)] * d * d;
            }
            var.at(0, j) = s / n_valid;
        }
        if (stats_out != nullptr) {
            stats_out->mean = mean;
            stats_out->var = var;
            stats_out->n_valid = n_valid;
        }
    } else {
        require(!state.running_mean.data.empty() && state.running_mean.cols() == D,
                "batchnorm: running statistics missing or mismatched");
        mean = state.running_mean;
        var = state.running_var;
    }

    Tensor invstd{1, D};
    for (int64_t j = 0; j < D; ++j) invstd.at(0, j) = 1.0 / std::sqrt(var.at(0, j) + eps);

    n.value = Tensor::zeros({N, D});
    n.aux0 = Tensor::zeros({N, D}); // x-hat
    n.aux1 = invstd;
    for (int64_t i = 0; i < N; ++i) {
        for (int64_t j = 0; j < D; ++j) {
            const double xh = (X.at(i, j) - mean.at(0, j)) * invstd.at(0, j);
            n.aux0.at(i, j) = xh;
            n.value.at(i, j) = G.at(0, j) * xh + B.at(0, j);
        }
    }
    return push(std::move(n));
}

int Graph::masked_softmax(int logits, const Tensor& mask) {
    const Tensor& X = value(logits);
    require(mask.same_shape(X), "masked_softmax: mask shape must match logits");
    Node n;
    n.op = Op::masked_softmax;
    n.inputs = {logits};
    n.aux0 = mask;
    n.value = Tensor::zeros(X.shape);
    const int64_t N = X.rows(), M = X.cols();
    std::vector<double> exps(static_cast<size_t>(M));
    for (int64_t i = 0; i < N; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t j = 0; j < M; ++j) {
            if (!is_masked(mask.at(i, j))) mx = std::max(mx, X.at(i, j) + mask.at(i, j));
        }
        if (!std::isfinite(mx)) continue; // fully masked row stays all-zero
        size_t m = 0;
        for (int64_t j = 0; j < M; ++j) {
            if (is_masked(mask.at(i, j))) continue;
            exps[m++] = std::exp(X.at(i, j) + mask.at(i, j) - mx);
        }
        const double denom = pairwise_sum(std::span<const double>(exps.data(), m));
        m = 0;
        for (int64_t j = 0; j < M; ++j) {
            if (is_masked(mask.at(i, j))) continue;
            n.value.at(i, j) = exps[m++] / denom;
        }
    }
    return push(std::move(n));
}

int Graph::concat_cols(const std::vector<int>& parts) {
    require(!parts.empty(), "concat_cols: no inputs");
    const int64_t N = value(parts[0]).rows();
    int64_t M = 0;
    for (int p : parts) {
        require(value(p).rows() == N, "concat_cols: row counts differ");
        M += value(p).cols();
    }
    Node n;
    n.op = Op::concat_cols;
    n.inputs = parts;
    n.value = Tensor::zeros({N, M});
    int64_t off = 0;
    for (int p : parts) {
        const Tensor& P = value(p);
        for (int64_t i = 0; i < N; ++i) {
            for (int64_t j = 0; j < P.cols(); ++j) n.value.at(i, off + j) = P.at(i, j);
        }
        off += P.cols();
    }
    return push(std::move(n));
}

int Graph::concat_rows(const std::vector<int>& parts) {
    require(!parts.empty(), "concat_rows: no inputs");
    const int64_t M = value(parts[0]).cols();
    int64_t N = 0;
    for (int p : parts) {
        require(value(p).cols() == M, "concat_rows: column counts differ");
        N += value(p).rows();
    }
    Node n;
    n.op = Op::concat_rows;
    n.inputs = parts;
    n.value = Tensor::zeros({N, M});
    int64_t off = 0;
    for (int p : parts) {
        const Tensor& P = value(p);
        std::copy(P.data.begin(), P.data.end(), n.value.data.begin() + off * M);
        off += P.rows();
    }
    return push(std::move(n));
}

int Graph::slice_rows(int a, int64_t begin, int64_t count) {
    const Tensor& A = value(a);
    require(begin >= 0 && count >= 0 && begin + count <= A.rows(), "slice_rows: out of range");
    Node n;
    n.op = Op::slice_rows;
    n.inputs = {a};
    n.begin = begin;
    n.count = count;
    n.value = Tensor::zeros({count, A.cols()});
    std::copy(A.data.begin() + begin * A.cols(), A.data.begin() + (begin + count) * A.cols(),
              n.value.data.begin());
    return push(std::move(n));
}

int Graph::pool_rows(int a, const std::vector<double>& filter, Pooling mode) {
    const Tensor& A = value(a);
    require(int64_t(filter.size()) == A.rows(), "pool_rows: filter length must match rows");
    Node n;
    n.op = Op::pool;
    n.inputs = {a};
    n.weights = filter;
    n.pooling = mode;
    const int64_t N = A.rows(), D = A.cols();
    n.value = Tensor::zeros({1, D});
    double n_valid = 0.0;
    for (double f : filter) n_valid += f;
    n.k2 = n_valid;
    if (mode == Pooling::max) {
        n.aux0 = Tensor::zeros({1, D}); // argmax row indices
        for (int64_t j = 0; j < D; ++j) {
            double best = -std::numeric_limits<double>::infinity();
            int64_t arg = -1;
            for (int64_t i = 0; i < N; ++i) {
                if (filter[size_t(i)] == 0.0) continue;
                if (A.at(i, j) > best) {
                    best = A.at(i, j);
                    arg = i;
                }
            }
            n.value.at(0, j) = arg >= 0 ? best : 0.0;
            n.aux0.at(0, j) = double(arg);
        }
    } else {
        std::vector<double> scratch(static_cast<size_t>(N));
        for (int64_t j = 0; j < D; ++j) {
            size_t m = 0;
            for (int64_t i = 0; i < N; ++i) {
                if (filter[size_t(i)] == 0.0) continue;
                scratch[m++] = A.at(i, j);
            }
            double z = pairwise_sum(std::span<const double>(scratch.data(), m));
            if (mode == Pooling::mean) z /= std::max(n_valid, 1.0);
            n.value.at(0, j) = z;
        }
    }
    return push(std::move(n));
}

int Graph::huber(int a, double delta) {
    require(delta > 0.0, "huber: delta must be positive");
    Node n;
    n.op = Op::huber;
    n.inputs = {a};
    n.k = delta;
    n.value = value(a);
    for (double& x : n.value.data) {
        const double ax = std::abs(x);
        x = ax <= delta ? 0.5 * x * x : delta * (ax - 0.5 * delta);
    }
    return push(std::move(n));
}

int Graph::sum_all(int a) {
    Node n;
    n.op = Op::sum_all;
    n.inputs = {a};
    n.value = Tensor::scalar(pairwise_sum(value(a).data));
    return push(std::move(n));
}

void Graph::backward(int root) {
    Node& r = nodes_[size_t(root)];
    if (r.value.numel() != 1) throw NonScalarRoot("backward root must be a scalar");
    for (Node& n : nodes_) {
        std::fill(n.grad.data.begin(), n.grad.data.end(), 0.0);
    }
    r.grad.data[0] = 1.0;
    for (size_t i = size_t(root) + 1; i-- > 0;) {
        backprop(i);
    }
}

void Graph::backprop(size_t idx) {
    Node& n = nodes_[idx];
    bool any = false;
    for (double g : n.grad.data) {
        if (g != 0.0) {
            any = true;
            break;
        }
    }
    if (!any || n.op == Op::leaf) return;

    const Tensor& dY = n.grad;
    switch (n.op) {
    case Op::leaf: break;
    case Op::matmul: {
        const Tensor& A = value(n.inputs[0]);
        const Tensor& B = value(n.inputs[1]);
        Tensor& dA = nodes_[size_t(n.inputs[0])].grad;
        Tensor& dB = nodes_[size_t(n.inputs[1])].grad;
        const int64_t N = A.rows(), K = A.cols(), M = B.cols();
        for (int64_t i = 0; i < N; ++i) {
            for (int64_t k = 0; k < K; ++k) {
                double s = 0.0;
                const double* dyrow = &dY.data[size_t(i * M)];
                const double* brow = &B.data[size_t(k * M)];
                for (int64_t j = 0; j < M; ++j) s += dyrow[j] * brow[j];
                dA.at(i, k) += s;
            }
        }
        for (int64_t k = 0; k < K; ++k) {
            for (int64_t i = 0; i < N; ++i) {
                const double aik = A.at(i, k);
                if (aik == 0.0) continue;
                const double* dyrow = &dY.data[size_t(i * M)];
                double* dbrow = &dB.data[size_t(k * M)];
                for (int64_t j = 0; j < M; ++j) dbrow[j] += aik * dyrow[j];
            }
        }
        break;
    }
    case Op::matmul_nt: {
        const Tensor& A = value(n.inputs[0]);
        const Tensor& B = value(n.inputs[1]);
        Tensor& dA = nodes_[size_t(n.inputs[0])].grad;
        Tensor& dB = nodes_[size_t(n.inputs[1])].grad;
        const int64_t N = A.rows(), K = A.cols(), M = B.rows();
        // dA = dY * B ; dB = dY^T * A
        for (int64_t i = 0; i < N; ++i) {
            for (int64_t j = 0; j < M; ++j) {
                const double g = dY.at(i, j);
                if (g == 0.0) continue;
                for (int64_t k = 0; k < K; ++k) {
                    dA.at(i, k) += g * B.at(j, k);
                    dB.at(j, k) += g * A.at(i, k);
                }
            }
        }
        break;
    }
    case Op::attn_apply: {
        const Tensor& W = value(n.inputs[0]);
        const Tensor& V = value(n.inputs[1]);
        const Tensor& mask = n.aux0;
        Tensor& dW = nodes_[size_t(n.inputs[0])].grad;
        Tensor& dV = nodes_[size_t(n.inputs[1])].grad;
        const int64_t N = W.rows(), S = V.rows(), D = V.cols();
        for (int64_t i = 0; i < N; ++i) {
            for (int64_t j = 0; j < S; ++j) {
                if (is_masked(mask.at(i, j))) continue;
                const double wij = W.at(i, j);
                double s = 0.0;
                for (int64_t d = 0; d < D; ++d) {
                    const double g = dY.at(i, d);
                    s += g * V.at(j, d);
                    dV.at(j, d) += wij * g;
                }
                dW.at(i, j) += s;
            }
        }
        break;
    }
    case Op::add: {
        for (int in : n.inputs) {
            Tensor& dX = nodes_[size_t(in)].grad;
            for (size_t i = 0; i < dX.data.size(); ++i) dX.data[i] += dY.data[i];
        }
        break;
    }
    case Op::sub: {
        Tensor& dA = nodes_[size_t(n.inputs[0])].grad;
        Tensor& dB = nodes_[size_t(n.inputs[1])].grad;
        for (size_t i = 0; i < dA.data.size(); ++i) {
            dA.data[i] += dY.data[i];
            dB.data[i] -= dY.data[i];
        }
        break;
    }
    case Op::add_rowvec: {
        Tensor& dA = nodes_[size_t(n.inputs[0])].grad;
        Tensor& dV = nodes_[size_t(n.inputs[1])].grad;
        const int64_t N = n.value.rows(), M = n.value.cols();
        for (int64_t i = 0; i < N; ++i) {
            for (int64_t j = 0; j < M; ++j) {
                dA.at(i, j) += dY.at(i, j);
                dV.at(0, j) += dY.at(i, j);
            }
        }
        break;
    }
    case Op::scale: {
        Tensor& dA = nodes_[size_t(n.inputs[0])].grad;
        for (size_t i = 0; i < dA.data.size(); ++i) dA.data[i] += n.k * dY.data[i];
        break;
    }
    case Op::relu: {
        const Tensor& X = value(n.inputs[0]);
        Tensor& dX = nodes_[size_t(n.inputs[0])].grad;
        for (size_t i = 0; i < dX.data.size(); ++i) {
            if (X.data[i] > 0.0) dX.data[i] += dY.data[i];
        }
        break;
    }
    case Op::dropout: {
        Tensor& dX = nodes_[size_t(n.inputs[0])].grad;
        if (n.flag && n.k > 0.0) {
            for (size_t i = 0; i < dX.data.size(); ++i) {
                dX.data[i] += n.aux0.data[i] * dY.data[i];
            }
        } else {
            for (size_t i = 0; i < dX.data.size(); ++i) dX.data[i] += dY.data[i];
        }
        break;
    }
    case Op::batchnorm: {
        const Tensor& G = value(n.inputs[1]);
        Tensor& dX = nodes_[size_t(n.inputs[0])].grad;
        Tensor& dG = nodes_[size_t(n.inputs[1])].grad;
        Tensor& dB = nodes_[size_t(n.inputs[2])].grad;
        const Tensor& xhat = n.aux0;
        const Tensor& invstd = n.aux1;
        const int64_t N = n.value.rows(), D = n.value.cols();
        for (int64_t j = 0; j < D; ++j) {
            double dg = 0.0, db = 0.0;
            for (int64_t i = 0; i < N; ++i) {
                dg += dY.at(i, j) * xhat.at(i, j);
                db += dY.at(i, j);
            }
            dG.at(0, j) += dg;
            dB.at(0, j) += db;
        }
        if (n.flag) {
            const double nv = n.k2;
            for (int64_t j = 0; j < D; ++j) {
                const double is = invstd.at(0, j);
                const double g = G.at(0, j);
                double dvar = 0.0, dmu = 0.0;
                for (int64_t i = 0; i < N; ++i) {
                    const double dxh = dY.at(i, j) * g;
                    dvar += dxh * xhat.at(i, j);
                    dmu += dxh;
                }
                dvar *= -0.5 * is * is;
                dmu *= -is;
                for (int64_t i = 0; i < N; ++i) {
                    const double dxh = dY.at(i, j) * g;
                    double dx = dxh * is;
                    if (n.weights[size_t(i)] != 0.0) {
                        dx += (dvar * 2.0 * xhat.at(i, j) / (is * nv)) + dmu / nv;
                    }
                    dX.at(i, j) += dx;
                }
            }
        } else {
            for (int64_t j = 0; j < D; ++j) {
                const double k = G.at(0, j) * invstd.at(0, j);
                for (int64_t i = 0; i < N; ++i) dX.at(i, j) += dY.at(i, j) * k;
            }
        }
        break;
    }
    case Op::masked_softmax: {
        const Tensor& W = n.value;
        const Tensor& mask = n.aux0;
        Tensor& dX = nodes_[size_t(n.inputs[0])].grad;
        const int64_t N = W.rows(), M = W.cols();
        for (int64_t i = 0; i < N; ++i) {
            double dot = 0.0;
            for (int64_t j = 0; j < M; ++j) dot += dY.at(i, j) * W.at(i, j);
            for (int64_t j = 0; j < M; ++j) {
                if (is_masked(mask.at(i, j))) continue;
                dX.at(i, j) += W.at(i, j) * (dY.at(i, j) - dot);
            }
        }
        break;
    }
    case Op::concat_cols: {
        const int64_t N = n.value.rows();
        int64_t off = 0;
        for (int p : n.inputs) {
            Tensor& dP = nodes_[size_t(p)].grad;
            const int64_t M = dP.cols();
            for (int64_t i = 0; i < N; ++i) {
                for (int64_t j = 0; j < M; ++j) dP.at(i, j) += dY.at(i, off + j);
            }
            off += M;
        }
        break;
    }
    case Op::concat_rows: {
        const int64_t M = n.value.cols();
        int64_t off = 0;
        for (int p : n.inputs) {
            Tensor& dP = nodes_[size_t(p)].grad;
            for (int64_t i = 0; i < dP.rows(); ++i) {
                for (int64_t j = 0; j < M; ++j) dP.at(i, j) += dY.at(off + i, j);
            }
            off += dP.rows();
        }
        break;
    }
    case Op::slice_rows: {
        Tensor& dA = nodes_[size_t(n.inputs[0])].grad;
        const int64_t M = n.value.cols();
        for (int64_t i = 0; i < n.count; ++i) {
            for (int64_t j = 0; j < M; ++j) dA.at(n.begin + i, j) += dY.at(i, j);
        }
        break;
    }
    case Op::pool: {
        const Tensor& A = value(n.inputs[0]);
        Tensor& dA = nodes_[size_t(n.inputs[0])].grad;
        const int64_t N = A.rows(), D = A.cols();
        if (n.pooling == Pooling::max) {
            for (int64_t j = 0; j < D; ++j) {
                const int64_t arg = int64_t(n.aux0.at(0, j));
                if (arg >= 0) dA.at(arg, j) += dY.at(0, j);
            }
        } else {
            const double k = n.pooling == Pooling::mean ? 1.0 / std::max(n.k2, 1.0) : 1.0;
            for (int64_t i = 0; i < N; ++i) {
                if (n.weights[size_t(i)] == 0.0) continue;
                for (int64_t j = 0; j < D; ++j) dA.at(i, j) += k * dY.at(0, j);
            }
        }
        break;
    }
    case Op::huber: {
        const Tensor& X = value(n.inputs[0]);
        Tensor& dX = nodes_[size_t(n.inputs[0])].grad;
        for (size_t i = 0; i < dX.data.size(); ++i) {
            const double x = X.data[i];
            const double d =
                std::abs(x) <= n.k ? x : (x > 0.0 ? n.k : -n.k);
            dX.data[i] += d * dY.data[i];
        }
        break;
    }
    case Op::sum_all: {
        Tensor& dA = nodes_[size_t(n.inputs[0])].grad;
        const double g = dY.data[0];
        for (double& v : dA.data) v += g;
        break;
    }
    }
}

void update_running_stats(BatchNormState& state, const BatchNormBatchStats& batch,
                          double momentum) {
    if (state.running_mean.data.empty()) {
        state.running_mean = Tensor::zeros(batch.mean.shape);
        state.running_var = Tensor::full(batch.var.shape, 1.0);
    }
    for (size_t i = 0; i < state.running_mean.data.size(); ++i) {
        state.running_mean.data[i] =
            (1.0 - momentum) * state.running_mean.data[i] + momentum * batch.mean.data[i];
        state.running_var.data[i] =
            (1.0 - momentum) * state.running_var.data[i] + momentum * batch.var.data[i];
    }
}

void adam_step(std::map<std::string, Tensor>& params, const std::map<std::string, Tensor>& grads,
               AdamState& state, const AdamConfig& cfg) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.step));
    for (auto& [name, p] : params) {
        const auto git = grads.find(name);
        if (git == grads.end()) continue;
        const Tensor& g = git->second;
        if (!g.same_shape(p)) throw ShapeMismatch("adam_step: gradient shape mismatch for " + name);
        Tensor& m = state.m.try_emplace(name, Tensor::zeros(p.shape)).first->second;
        Tensor& v = state.v.try_emplace(name, Tensor::zeros(p.shape)).first->second;
        for (size_t i = 0; i < p.data.size(); ++i) {
            m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * g.data[i];
            v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * g.data[i] * g.data[i];
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            p.data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

} // namespace aero
