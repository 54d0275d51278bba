#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "aerosense/autodiff.hpp"
#include "aerosense/features.hpp"
#include "aerosense/geometry.hpp"
#include "aerosense/tensor.hpp"

namespace aero {

struct ModelConfig {
    int64_t n_max = 120;
    int64_t d_in = 18;
    std::vector<int64_t> encoder_layers = {64, 64}; // last width must equal d_model
    int64_t d_model = 64;
    int64_t attention_heads = 4;
    double dropout_p = 0.1;
    bool residual_attention = true;
    bool attention_enabled = true; // off: encoder feeds pooling directly
    bool decoupled_heads = true;   // off: one shared branch emits both outputs
    Pooling pooling = Pooling::sum;
    int64_t head_hidden = 32;

    void validate() const;
};

// Fixed-capacity container for one situation: valid states occupy the first
// valid_count rows, the rest are zero rows excluded by filter and mask.
struct PaddedBatch {
    Tensor x; // [n_max, d_in]
    int64_t valid_count = 0;
    std::vector<double> filter; // [n_max], 1 for valid rows
    Tensor attention_mask;      // [n_max, n_max]; (i,j) = 0 iff both rows valid
};

// states: [N_t, d_in] normalized feature rows. Throws CapacityExceeded when
// N_t exceeds the container.
PaddedBatch pad_to_container(const Tensor& states, const ModelConfig& config);

Tensor attention_mask_for(int64_t rows, int64_t valid_count);

struct ModelCheckpoint {
    int format_version = 1;
    ModelConfig config;
    FeatureConfig feature_config;
    std::map<std::string, Tensor> params;
    std::map<std::string, BatchNormState> bn; // key: encoder layer name "enc<l>"
    Normalizer normalizer;
    std::string geometry_fingerprint;
};

// Deterministic seeded initialization; running statistics start at (0, 1).
ModelCheckpoint init_checkpoint(const ModelConfig& config, const FeatureConfig& feat,
                                const Normalizer& norm, const std::string& geometry_fp,
                                uint64_t seed);

std::string checkpoint_to_json(const ModelCheckpoint& ckpt);
ModelCheckpoint checkpoint_from_json(const std::string& text);
void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& path);
ModelCheckpoint load_checkpoint(const std::string& path);

// Throws GeometryMismatch unless the checkpoint was trained against this
// geometry definition.
void verify_geometry(const ModelCheckpoint& ckpt, const AirspaceGeometry& geometry);

struct ForwardOptions {
    bool training = false;
    uint64_t dropout_seed = 0;
    // Run at full container width (the padded form). The sliced form over the
    // valid rows only is bit-identical and cheaper; both are exposed so tests
    // can compare them.
    bool container = true;
    bool want_diagnostics = false;
};

// Node handles of one assembled forward pass.
struct ForwardGraph {
    int input = -1;      // leaf holding the (padded or sliced) state rows
    int prediction = -1; // [1, 2]: (y_ap, y_ar)
    int pooled = -1;     // [1, d_model]
    std::vector<int> head_attention; // per-head softmax weight nodes
    int embeddings = -1;             // post-attention rows
    std::vector<double> filter;
    int64_t valid_count = 0;
    // train-mode batch statistics per encoder layer, for running-stat updates
    std::vector<BatchNormBatchStats> bn_stats;
};

// Assembles the model over explicit rows (graph input is created as a leaf).
ForwardGraph build_forward(Graph& g, const Tensor& state_rows, int64_t valid_count,
                           const ModelCheckpoint& ckpt, const ForwardOptions& opts);

// Same, also reporting the leaf node id of every named parameter so a trainer
// can read gradients back per parameter.
ForwardGraph build_forward_traced(Graph& g, const Tensor& state_rows, int64_t valid_count,
                                  const ModelCheckpoint& ckpt, const ForwardOptions& opts,
                                  std::map<std::string, int>* param_ids);

struct ForwardResult {
    double y_ap = 0.0;
    double y_ar = 0.0;
    int64_t valid_count = 0;
    Tensor attention;  // [N_t, N_t] head-averaged weights over valid rows
    Tensor embeddings; // [N_t, d_model] post-attention embeddings
};

// normalize -> pad -> encode -> attend -> pool -> heads for one situation.
ForwardResult forward(const ModelCheckpoint& ckpt, const AirspaceSituation& situation,
                      const ForwardOptions& opts = {});

int64_t parameter_count(const ModelCheckpoint& ckpt);

} // namespace aero
