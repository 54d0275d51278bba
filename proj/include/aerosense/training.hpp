#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "aerosense/model.hpp"
#include "aerosense/trajectory.hpp"

namespace aero {

struct TrainConfig {
    int64_t epochs = 60;
    int64_t batch_size = 32;
    double learning_rate = 1e-3;
    double huber_delta = 1.0;
    int64_t patience = 10; // early-stop after this many epochs without val improvement
    uint64_t seed = 0;
    std::optional<Pooling> pooling_override;
    int64_t horizon_s = 900;
    int threads = 0; // 0 = hardware concurrency (capped)
};

struct EpochLog {
    int64_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    bool is_best = false;
};

struct TrainResult {
    ModelCheckpoint checkpoint; // parameters of the best validation epoch
    std::vector<EpochLog> log;
};

// Mean over the batch of huber(ap residual) + huber(ar residual).
double multitask_loss(std::span<const std::array<double, 2>> predictions,
                      std::span<const std::array<double, 2>> labels, double delta);

// Adam minimization of the multi-task Huber objective over shuffled
// mini-batches; deterministic for a fixed config seed.
TrainResult train(const std::vector<LabeledSample>& train_set,
                  const std::vector<LabeledSample>& val_set, const AirspaceGeometry& geometry,
                  const ModelConfig& model_cfg, const FeatureConfig& feat_cfg,
                  const TrainConfig& train_cfg);

struct AirspaceMetrics {
    double mae = 0.0;
    double rmse = 0.0;
    std::optional<double> r2; // empty when the ground truth has zero variance
    size_t n = 0;
};

// MAE, RMSE and R^2 of one prediction series against its ground truth.
AirspaceMetrics regression_metrics(std::span<const double> predictions,
                                   std::span<const double> truth);

struct MetricsReport {
    AirspaceMetrics ap;
    AirspaceMetrics ar;
    size_t n = 0;
};

// Predictions are real-valued; with round_predictions they are rounded
// half-up and clamped at zero before the metrics.
MetricsReport evaluate(const ModelCheckpoint& ckpt, const std::vector<LabeledSample>& test_set,
                       const AirspaceGeometry& geometry, bool round_predictions = false);

struct DaypartBin {
    int bin = 0; // floor(local_hour / 2), 0..11
    double mae_ap = 0.0;
    double mae_ar = 0.0;
    size_t n = 0;
};

// Per-bin MAE over twelve two-hour local-time intervals; empty bins are
// absent from the result.
std::vector<DaypartBin> dayparting_evaluate(const ModelCheckpoint& ckpt,
                                            const std::vector<LabeledSample>& test_set,
                                            const AirspaceGeometry& geometry, int64_t tz_offset_s,
                                            bool round_predictions = false);

struct ImportanceReport {
    std::vector<std::string> feature; // per input dimension, in layout order
    std::vector<std::string> group;   // location / kinematic / control / boundary / temporal
    std::vector<double> mean_abs_gradient;
    size_t states_counted = 0;
};

// Mean |d(y_ap + y_ar)/dx| per input dimension over all valid aircraft.
ImportanceReport state_importance(const ModelCheckpoint& ckpt,
                                  const std::vector<LabeledSample>& samples,
                                  const AirspaceGeometry& geometry);

struct AttentionExport {
    std::vector<std::string> aircraft_ids;
    std::vector<GeoPoint> positions;
    Tensor matrix;                 // [N_t, N_t] head-averaged, rows = receivers
    std::vector<double> influence; // column mean over receivers, per source
};

AttentionExport export_attention(const ModelCheckpoint& ckpt, const AirspaceSituation& situation);
std::string attention_to_json(const AttentionExport& e);

struct AblationRow {
    std::string variant;
    MetricsReport metrics;
};

// Trains and evaluates the pooling / attention / head / state variants on one
// dataset split.
std::vector<AblationRow> run_ablation(const std::vector<LabeledSample>& train_set,
                                      const std::vector<LabeledSample>& val_set,
                                      const std::vector<LabeledSample>& test_set,
                                      const AirspaceGeometry& geometry,
                                      const ModelConfig& base_model, const FeatureConfig& base_feat,
                                      const TrainConfig& train_cfg);

// File formats used by the command-line tool.
std::string metrics_to_csv(const MetricsReport& report);
std::string dayparting_to_csv(const std::vector<DaypartBin>& bins);
std::string importance_to_csv(const ImportanceReport& report);
std::string ablation_to_csv(const std::vector<AblationRow>& rows);
void write_training_log(const std::string& path, const std::vector<EpochLog>& log);

} // namespace aero
