#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "aerosense/tensor.hpp"

namespace aero {

// Additive attention-mask sentinel standing in for -inf; exp(x + kMaskNegInf)
// underflows to exactly 0 for any finite logit, and arithmetic stays finite.
inline constexpr double kMaskNegInf = -1e30;

inline bool is_masked(double mask_value) { return mask_value <= kMaskNegInf * 0.5; }

enum class Pooling { sum, mean, max };

Pooling pooling_from_string(const std::string& s);
std::string pooling_to_string(Pooling p);

// Running batchnorm statistics; owned by the model. The batchnorm op is pure:
// train-mode batch statistics are reported through BatchNormBatchStats and
// folded into the running state explicitly by the caller, which keeps
// concurrent forward passes free of shared writes.
struct BatchNormState {
    Tensor running_mean; // [1, d]
    Tensor running_var;  // [1, d]
};

struct BatchNormBatchStats {
    Tensor mean; // [1, d]
    Tensor var;  // [1, d]
    double n_valid = 0.0;
};

// running <- (1 - momentum) * running + momentum * batch
void update_running_stats(BatchNormState& state, const BatchNormBatchStats& batch,
                          double momentum = 0.1);

// Define-by-run reverse-mode tape over dense tensors. Nodes are appended in
// topological order; backward() walks the tape in reverse.
class Graph {
public:
    // Leaves: inputs and parameters. Gradients are accumulated for all nodes.
    int leaf(Tensor value);

    int matmul(int a, int b);    // [n,k] x [k,m] -> [n,m]
    int matmul_nt(int a, int b); // [n,k] x [m,k] -> [n,m], contracting over k

    // Weighted aggregation of value rows, out_i = sum_j w_ij * v_j, reduced
    // pairwise over the unmasked sources only. This makes the aggregation
    // exact under element duplication and bit-identical between padded and
    // sliced computations.
    int attn_apply(int weights, int values, const Tensor& additive_mask);

    int add(int a, int b); // same shape
    int sub(int a, int b);
    int add_rowvec(int a, int v); // [n,m] + [1,m], broadcast over rows
    int scale(int a, double k);
    int relu(int a);

    // Inverted dropout: train-mode scales kept entries by 1/(1-p), eval mode
    // is the identity. Deterministic for a fixed seed.
    int dropout(int a, double p, bool training, uint64_t seed);

    // Statistics over rows with row_mask = 1 only (population variance); all
    // rows are normalized with those statistics. With no valid rows (or in
    // eval mode) the running statistics are used; stats_out is filled only
    // when batch statistics were actually computed.
    int batchnorm(int x, int gamma, int beta, const BatchNormState& state, bool training,
                  const std::vector<double>& row_mask, BatchNormBatchStats* stats_out = nullptr,
                  double eps = 1e-5);

    // Row-wise softmax over unmasked entries; masked entries produce exactly
    // zero weight, fully masked rows produce all-zero output.
    int masked_softmax(int logits, const Tensor& additive_mask);

    int concat_cols(const std::vector<int>& parts);
    int concat_rows(const std::vector<int>& parts);
    int slice_rows(int a, int64_t begin, int64_t count);

    // [n,d] -> [1,d] over rows with filter = 1. sum: pairwise sum; mean:
    // sum / max(N,1); max: per-dimension max (zero vector when N = 0).
    int pool_rows(int a, const std::vector<double>& filter, Pooling mode);

    int huber(int a, double delta); // elementwise
    int sum_all(int a);             // -> [1,1]

    const Tensor& value(int id) const { return nodes_[size_t(id)].value; }
    const Tensor& grad(int id) const { return nodes_[size_t(id)].grad; }

    // Reverse accumulation from a scalar root. Leaves off any path get zero
    // gradient. Throws NonScalarRoot unless the root value is 1x1.
    void backward(int root);

    size_t size() const { return nodes_.size(); }

private:
    enum class Op {
        leaf,
        matmul,
        matmul_nt,
        attn_apply,
        add,
        sub,
        add_rowvec,
        scale,
        relu,
        dropout,
        batchnorm,
        masked_softmax,
        concat_cols,
        concat_rows,
        slice_rows,
        pool,
        huber,
        sum_all,
    };

    struct Node {
        Op op = Op::leaf;
        std::vector<int> inputs;
        Tensor value;
        Tensor grad;
        // op-specific captures
        Tensor aux0, aux1, aux2;
        std::vector<double> weights; // row mask / filter
        double k = 0.0;              // scale factor / delta / p / eps
        double k2 = 0.0;             // batchnorm valid-row count
        int64_t begin = 0, count = 0;
        Pooling pooling = Pooling::sum;
        bool flag = false; // training / stats-from-batch
    };

    int push(Node n);
    void backprop(size_t idx);

    std::vector<Node> nodes_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    int64_t step = 0;
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
};

// One bias-corrected Adam update over a named parameter map. Missing gradient
// entries leave their parameters untouched.
void adam_step(std::map<std::string, Tensor>& params, const std::map<std::string, Tensor>& grads,
               AdamState& state, const AdamConfig& cfg);

} // namespace aero
