#include "aerosense/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace aero {

namespace {

double huber_value(double a, double delta) {
    const double ax = std::abs(a);
    return ax <= delta ? 0.5 * a * a : delta * (ax - 0.5 * delta);
}

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

int resolve_threads(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return int(std::clamp(hw, 1u, 8u));
}

// Featurized sample cache: normalized state rows plus the label pair.
struct Prepared {
    Tensor x; // [N_t, d_in]
    std::array<double, 2> y{0.0, 0.0};
    int64_t time = 0;
};

std::vector<Prepared> prepare(const std::vector<LabeledSample>& samples,
                              const AirspaceGeometry& geometry, const FeatureConfig& feat,
                              const Normalizer& norm, int64_t n_max) {
    std::vector<Prepared> out(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) {
        const AirspaceSituation sit = build_situation(samples[i].snapshot, geometry, feat);
        if (int64_t(sit.states.size()) > n_max) {
            throw CapacityExceeded("sample at t=" + std::to_string(sit.time) + " holds " +
                                   std::to_string(sit.states.size()) +
                                   " aircraft, container capacity is " + std::to_string(n_max));
        }
        out[i].x = feature_matrix(sit, norm, feat);
        out[i].y = {double(samples[i].label.y_ap), double(samples[i].label.y_ar)};
        out[i].time = samples[i].label.query_time;
    }
    return out;
}

uint64_t sample_dropout_seed(uint64_t base, int64_t epoch, size_t index) {
    uint64_t h = base ^ 0x9e3779b97f4a7c15ull;
    h ^= uint64_t(epoch) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    h ^= uint64_t(index) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    return h;
}

struct SampleGradients {
    std::map<std::string, Tensor> grads;
    std::vector<BatchNormBatchStats> bn_stats;
    double loss = 0.0;
};

SampleGradients backprop_sample(const ModelCheckpoint& ckpt, const Prepared& sample,
                                double huber_delta, double inv_batch, uint64_t dropout_seed) {
    Graph g;
    std::map<std::string, int> param_ids;
    ForwardOptions opts;
    opts.training = true;
    opts.dropout_seed = dropout_seed;
    ForwardGraph fg = build_forward_traced(g, sample.x, sample.x.rows(), ckpt, opts, &param_ids);

    Tensor label = Tensor::zeros({1, 2});
    label.at(0, 0) = sample.y[0];
    label.at(0, 1) = sample.y[1];
    const int residual = g.sub(fg.prediction, g.leaf(label));
    const int sample_loss = g.sum_all(g.huber(residual, huber_delta));
    const int scaled = g.scale(sample_loss, inv_batch);
    g.backward(scaled);

    SampleGradients out;
    out.loss = g.value(sample_loss).data[0];
    out.bn_stats = std::move(fg.bn_stats);
    for (const auto& [name, id] : param_ids) {
        out.grads[name] = g.grad(id);
    }
    return out;
}

std::array<double, 2> predict_pair(const ModelCheckpoint& ckpt, const Prepared& sample) {
    Graph g;
    ForwardGraph fg = build_forward(g, sample.x, sample.x.rows(), ckpt, {});
    return {g.value(fg.prediction).at(0, 0), g.value(fg.prediction).at(0, 1)};
}

double dataset_loss(const ModelCheckpoint& ckpt, const std::vector<Prepared>& samples,
                    double delta, int threads) {
    std::vector<double> losses(samples.size(), 0.0);
    auto worker = [&](size_t start, size_t stride) {
        for (size_t i = start; i < samples.size(); i += stride) {
            const std::array<double, 2> p = predict_pair(ckpt, samples[i]);
            losses[i] = huber_value(p[0] - samples[i].y[0], delta) +
                        huber_value(p[1] - samples[i].y[1], delta);
        }
    };
    const int t = std::max(1, std::min<int>(threads, int(samples.size())));
    std::vector<std::thread> pool;
    for (int w = 1; w < t; ++w) pool.emplace_back(worker, size_t(w), size_t(t));
    worker(0, size_t(t));
    for (auto& th : pool) th.join();
    double sum = 0.0;
    for (double l : losses) sum += l;
    return samples.empty() ? 0.0 : sum / double(samples.size());
}

} // namespace

double multitask_loss(std::span<const std::array<double, 2>> predictions,
                      std::span<const std::array<double, 2>> labels, double delta) {
    if (predictions.size() != labels.size()) {
        throw ShapeMismatch("multitask_loss: prediction and label counts differ");
    }
    if (predictions.empty()) return 0.0;
    double sum = 0.0;
    for (size_t i = 0; i < predictions.size(); ++i) {
        sum += huber_value(predictions[i][0] - labels[i][0], delta) +
               huber_value(predictions[i][1] - labels[i][1], delta);
    }
    return sum / double(predictions.size());
}

TrainResult train(const std::vector<LabeledSample>& train_set,
                  const std::vector<LabeledSample>& val_set, const AirspaceGeometry& geometry,
                  const ModelConfig& model_cfg, const FeatureConfig& feat_cfg,
                  const TrainConfig& train_cfg) {
    if (train_set.empty()) throw EmptyTrainingSet("training requires at least one sample");
    if (train_cfg.batch_size < 1) throw InvalidConfig("batch_size must be at least 1");
    if (!(train_cfg.huber_delta > 0.0)) throw InvalidConfig("huber_delta must be positive");

    ModelConfig cfg = model_cfg;
    if (train_cfg.pooling_override) cfg.pooling = *train_cfg.pooling_override;
    cfg.d_in = feature_dim(feat_cfg);
    if (!cfg.encoder_layers.empty() && cfg.encoder_layers.back() != cfg.d_model) {
        throw InvalidConfig("last encoder layer width must equal d_model");
    }
    cfg.validate();

    // normalizer fitted on the training set only
    std::vector<AirspaceSituation> train_situations(train_set.size());
    for (size_t i = 0; i < train_set.size(); ++i) {
        train_situations[i] = build_situation(train_set[i].snapshot, geometry, feat_cfg);
    }
    const Normalizer norm = fit_normalizer(train_situations, feat_cfg);

    ModelCheckpoint ckpt = init_checkpoint(cfg, feat_cfg, norm, geometry_fingerprint(geometry),
                                           train_cfg.seed);

    const std::vector<Prepared> train_data = prepare(train_set, geometry, feat_cfg, norm, cfg.n_max);
    const std::vector<Prepared> val_data = prepare(val_set, geometry, feat_cfg, norm, cfg.n_max);

    const int threads = resolve_threads(train_cfg.threads);
    std::mt19937_64 shuffle_rng(train_cfg.seed ^ 0xa5a5a5a5ull);
    std::vector<size_t> order(train_data.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    AdamState adam;
    AdamConfig adam_cfg;
    adam_cfg.lr = train_cfg.learning_rate;

    TrainResult result;
    ModelCheckpoint best = ckpt;
    double best_val = std::numeric_limits<double>::infinity();
    int64_t since_best = 0;

    std::vector<SampleGradients> slot(size_t(train_cfg.batch_size));
    for (int64_t epoch = 0; epoch < train_cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double train_loss_sum = 0.0;

        for (size_t batch_start = 0; batch_start < order.size();
             batch_start += size_t(train_cfg.batch_size)) {
            const size_t batch_n =
                std::min(size_t(train_cfg.batch_size), order.size() - batch_start);
            const double inv_batch = 1.0 / double(batch_n);

            auto worker = [&](size_t start, size_t stride) {
                for (size_t bi = start; bi < batch_n; bi += stride) {
                    const size_t si = order[batch_start + bi];
                    slot[bi] = backprop_sample(ckpt, train_data[si], train_cfg.huber_delta,
                                               inv_batch,
                                               sample_dropout_seed(train_cfg.seed, epoch, si));
                }
            };
            const int t = std::max(1, std::min<int>(threads, int(batch_n)));
            std::vector<std::thread> pool;
            for (int w = 1; w < t; ++w) pool.emplace_back(worker, size_t(w), size_t(t));
            worker(0, size_t(t));
            for (auto& th : pool) th.join();

            // deterministic reduction in batch order
            std::map<std::string, Tensor> grad_sum;
            for (size_t bi = 0; bi < batch_n; ++bi) {
                train_loss_sum += slot[bi].loss;
                for (const auto& [name, g] : slot[bi].grads) {
                    auto it = grad_sum.find(name);
                    if (it == grad_sum.end()) {
                        grad_sum.emplace(name, g);
                    } else {
                        for (size_t k = 0; k < g.data.size(); ++k) it->second.data[k] += g.data[k];
                    }
                }
            }
            adam_step(ckpt.params, grad_sum, adam, adam_cfg);
            for (size_t bi = 0; bi < batch_n; ++bi) {
                for (size_t l = 0; l < slot[bi].bn_stats.size(); ++l) {
                    if (slot[bi].bn_stats[l].mean.data.empty()) continue;
                    update_running_stats(ckpt.bn.at("enc" + std::to_string(l)),
                                         slot[bi].bn_stats[l]);
                }
            }
        }

        const double train_loss = train_loss_sum / double(train_data.size());
        if (!std::isfinite(train_loss)) {
            throw DivergenceDetected("training loss is not finite at epoch " +
                                     std::to_string(epoch));
        }
        const double val_loss = val_data.empty()
                                    ? train_loss
                                    : dataset_loss(ckpt, val_data, train_cfg.huber_delta, threads);

        EpochLog log;
        log.epoch = epoch;
        log.train_loss = train_loss;
        log.val_loss = val_loss;
        if (val_loss < best_val) {
            best_val = val_loss;
            best = ckpt;
            since_best = 0;
            log.is_best = true;
        } else {
            ++since_best;
        }
        result.log.push_back(log);
        if (since_best >= train_cfg.patience) break;
    }

    result.checkpoint = std::move(best);
    return result;
}

namespace {

struct PredictionSet {
    std::vector<std::array<double, 2>> pred;
    std::vector<std::array<double, 2>> truth;
    std::vector<int64_t> times;
};

PredictionSet predict_set(const ModelCheckpoint& ckpt, const std::vector<LabeledSample>& samples,
                          const AirspaceGeometry& geometry, bool round_predictions) {
    verify_geometry(ckpt, geometry);
    PredictionSet out;
    out.pred.resize(samples.size());
    out.truth.resize(samples.size());
    out.times.resize(samples.size());
    const int threads = resolve_threads(0);
    auto worker = [&](size_t start, size_t stride) {
        for (size_t i = start; i < samples.size(); i += stride) {
            const AirspaceSituation sit =
                build_situation(samples[i].snapshot, geometry, ckpt.feature_config);
            const ForwardResult r = forward(ckpt, sit, {.container = false});
            double ap = r.y_ap, ar = r.y_ar;
            if (round_predictions) {
                ap = std::max(0.0, std::floor(ap + 0.5));
                ar = std::max(0.0, std::floor(ar + 0.5));
            }
            out.pred[i] = {ap, ar};
            out.truth[i] = {double(samples[i].label.y_ap), double(samples[i].label.y_ar)};
            out.times[i] = samples[i].label.query_time;
        }
    };
    const int t = std::max(1, std::min<int>(threads, int(samples.size())));
    std::vector<std::thread> pool;
    for (int w = 1; w < t; ++w) pool.emplace_back(worker, size_t(w), size_t(t));
    worker(0, size_t(t));
    for (auto& th : pool) th.join();
    return out;
}

AirspaceMetrics metrics_for(std::span<const std::array<double, 2>> pred,
                            std::span<const std::array<double, 2>> truth, size_t idx) {
    std::vector<double> p(pred.size()), y(truth.size());
    for (size_t i = 0; i < pred.size(); ++i) {
        p[i] = pred[i][idx];
        y[i] = truth[i][idx];
    }
    return regression_metrics(p, y);
}

} // namespace

AirspaceMetrics regression_metrics(std::span<const double> predictions,
                                   std::span<const double> truth) {
    if (predictions.size() != truth.size() || predictions.empty()) {
        throw ShapeMismatch("regression_metrics needs equal-length non-empty series");
    }
    AirspaceMetrics m;
    m.n = predictions.size();
    double abs_sum = 0.0, sq_sum = 0.0, y_sum = 0.0;
    for (size_t i = 0; i < predictions.size(); ++i) {
        const double e = predictions[i] - truth[i];
        abs_sum += std::abs(e);
        sq_sum += e * e;
        y_sum += truth[i];
    }
    const double n = double(predictions.size());
    m.mae = abs_sum / n;
    m.rmse = std::sqrt(sq_sum / n);
    const double y_mean = y_sum / n;
    double var_sum = 0.0;
    for (size_t i = 0; i < truth.size(); ++i) {
        var_sum += (truth[i] - y_mean) * (truth[i] - y_mean);
    }
    if (var_sum > 0.0) {
        m.r2 = 1.0 - sq_sum / var_sum;
    }
    return m;
}

MetricsReport evaluate(const ModelCheckpoint& ckpt, const std::vector<LabeledSample>& test_set,
                       const AirspaceGeometry& geometry, bool round_predictions) {
    if (test_set.empty()) throw EmptyTestSet("evaluate requires at least one sample");
    const PredictionSet p = predict_set(ckpt, test_set, geometry, round_predictions);
    MetricsReport report;
    report.n = test_set.size();
    report.ap = metrics_for(p.pred, p.truth, 0);
    report.ar = metrics_for(p.pred, p.truth, 1);
    return report;
}

std::vector<DaypartBin> dayparting_evaluate(const ModelCheckpoint& ckpt,
                                            const std::vector<LabeledSample>& test_set,
                                            const AirspaceGeometry& geometry, int64_t tz_offset_s,
                                            bool round_predictions) {
    if (test_set.empty()) return {};
    const PredictionSet p = predict_set(ckpt, test_set, geometry, round_predictions);
    std::array<double, 12> ap_sum{}, ar_sum{};
    std::array<size_t, 12> count{};
    for (size_t i = 0; i < test_set.size(); ++i) {
        const int64_t local = p.times[i] + tz_offset_s;
        const int64_t sod = ((local % 86400) + 86400) % 86400;
        const int bin = int(sod / 7200); // two-hour intervals, [start, start+2)
        ap_sum[size_t(bin)] += std::abs(p.pred[i][0] - p.truth[i][0]);
        ar_sum[size_t(bin)] += std::abs(p.pred[i][1] - p.truth[i][1]);
        count[size_t(bin)] += 1;
    }
    std::vector<DaypartBin> bins;
    for (int b = 0; b < 12; ++b) {
        if (count[size_t(b)] == 0) continue; // empty bins are absent, not zero
        DaypartBin out;
        out.bin = b;
        out.n = count[size_t(b)];
        out.mae_ap = ap_sum[size_t(b)] / double(out.n);
        out.mae_ar = ar_sum[size_t(b)] / double(out.n);
        bins.push_back(out);
    }
    return bins;
}

ImportanceReport state_importance(const ModelCheckpoint& ckpt,
                                  const std::vector<LabeledSample>& samples,
                                  const AirspaceGeometry& geometry) {
    if (samples.empty()) throw EmptySampleSet("state_importance requires at least one sample");
    verify_geometry(ckpt, geometry);
    const FeatureConfig& feat = ckpt.feature_config;
    const int64_t dim = feature_dim(feat);

    ImportanceReport report;
    report.feature = feature_names(feat);
    report.group.reserve(size_t(dim));
    for (const std::string& name : report.feature) {
        if (name.find("dialed") == 0) report.group.push_back("control");
        else if (name == "latitude_deg" || name == "longitude_deg" || name == "altitude_m")
            report.group.push_back("location");
        else if (name.find("dist_") == 0 || name.find("approach_") == 0 ||
                 name.find("inside_") == 0)
            report.group.push_back("boundary");
        else if (name.find("hour") != std::string::npos ||
                 name.find("minute") != std::string::npos)
            report.group.push_back("temporal");
        else report.group.push_back("kinematic");
    }
    report.mean_abs_gradient.assign(size_t(dim), 0.0);

    size_t counted = 0;
    for (const LabeledSample& sample : samples) {
        const AirspaceSituation sit = build_situation(sample.snapshot, geometry, feat);
        if (sit.states.empty()) continue;
        const Tensor x = feature_matrix(sit, ckpt.normalizer, feat);
        Graph g;
        const ForwardGraph fg = build_forward(g, x, x.rows(), ckpt, {});
        g.backward(g.sum_all(fg.prediction)); // y_ap + y_ar
        const Tensor& dx = g.grad(fg.input);
        for (int64_t i = 0; i < dx.rows(); ++i) {
            for (int64_t j = 0; j < dim; ++j) {
                report.mean_abs_gradient[size_t(j)] += std::abs(dx.at(i, j));
            }
        }
        counted += size_t(dx.rows());
    }
    if (counted == 0) throw EmptySampleSet("no aircraft states in the supplied samples");
    for (double& v : report.mean_abs_gradient) v /= double(counted);
    report.states_counted = counted;
    return report;
}

AttentionExport export_attention(const ModelCheckpoint& ckpt, const AirspaceSituation& situation) {
    if (situation.states.empty()) {
        throw EmptySituation("attention export requires at least one aircraft");
    }
    ForwardOptions opts;
    opts.want_diagnostics = true;
    const ForwardResult r = forward(ckpt, situation, opts);
    AttentionExport e;
    for (const AircraftState& s : situation.states) {
        e.aircraft_ids.push_back(s.aircraft_id);
        e.positions.push_back({s.latitude_deg, s.longitude_deg, s.altitude_m});
    }
    e.matrix = r.attention;
    const int64_t n = r.attention.rows();
    e.influence.assign(size_t(situation.states.size()), 0.0);
    if (n > 0) {
        for (int64_t j = 0; j < n; ++j) {
            double sum = 0.0;
            for (int64_t i = 0; i < n; ++i) sum += r.attention.at(i, j);
            e.influence[size_t(j)] = sum / double(n);
        }
    }
    return e;
}

std::string attention_to_json(const AttentionExport& e) {
    nlohmann::json j;
    j["aircraft_ids"] = e.aircraft_ids;
    nlohmann::json pos = nlohmann::json::array();
    for (const GeoPoint& p : e.positions) {
        pos.push_back({{"latitude_deg", p.latitude_deg},
                       {"longitude_deg", p.longitude_deg},
                       {"altitude_m", p.altitude_m}});
    }
    j["positions"] = std::move(pos);
    nlohmann::json rows = nlohmann::json::array();
    for (int64_t i = 0; i < e.matrix.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (int64_t k = 0; k < e.matrix.cols(); ++k) row.push_back(e.matrix.at(i, k));
        rows.push_back(std::move(row));
    }
    j["attention"] = std::move(rows);
    j["influence"] = e.influence;
    return j.dump(2);
}

std::vector<AblationRow> run_ablation(const std::vector<LabeledSample>& train_set,
                                      const std::vector<LabeledSample>& val_set,
                                      const std::vector<LabeledSample>& test_set,
                                      const AirspaceGeometry& geometry,
                                      const ModelConfig& base_model, const FeatureConfig& base_feat,
                                      const TrainConfig& train_cfg) {
    struct Variant {
        std::string name;
        ModelConfig model;
        FeatureConfig feat;
    };
    std::vector<Variant> variants;
    {
        Variant v{"full_sum_pooling", base_model, base_feat};
        v.model.pooling = Pooling::sum;
        variants.push_back(v);
    }
    {
        Variant v{"mean_pooling", base_model, base_feat};
        v.model.pooling = Pooling::mean;
        variants.push_back(v);
    }
    {
        Variant v{"max_pooling", base_model, base_feat};
        v.model.pooling = Pooling::max;
        variants.push_back(v);
    }
    {
        Variant v{"no_masked_self_attention", base_model, base_feat};
        v.model.attention_enabled = false;
        variants.push_back(v);
    }
    {
        Variant v{"shared_prediction_head", base_model, base_feat};
        v.model.decoupled_heads = false;
        variants.push_back(v);
    }
    {
        Variant v{"minimal_physical_state", base_model, base_feat};
        v.feat.minimal_state = true;
        variants.push_back(v);
    }

    std::vector<AblationRow> rows;
    for (const Variant& v : variants) {
        TrainConfig cfg = train_cfg;
        cfg.pooling_override.reset();
        const TrainResult r = train(train_set, val_set, geometry, v.model, v.feat, cfg);
        AblationRow row;
        row.variant = v.name;
        row.metrics = evaluate(r.checkpoint, test_set, geometry);
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string metrics_to_csv(const MetricsReport& report) {
    std::ostringstream out;
    out << "airspace,metric,value,n\n";
    auto block = [&](const char* name, const AirspaceMetrics& m) {
        out << name << ",mae," << fmt(m.mae) << "," << m.n << "\n";
        out << name << ",rmse," << fmt(m.rmse) << "," << m.n << "\n";
        out << name << ",r2," << (m.r2 ? fmt(*m.r2) : "undefined") << "," << m.n << "\n";
    };
    block("AP", report.ap);
    block("AR", report.ar);
    return out.str();
}

std::string dayparting_to_csv(const std::vector<DaypartBin>& bins) {
    std::ostringstream out;
    out << "airspace,bin_start_hour,mae,n\n";
    for (const DaypartBin& b : bins) {
        out << "AP," << b.bin * 2 << "," << fmt(b.mae_ap) << "," << b.n << "\n";
    }
    for (const DaypartBin& b : bins) {
        out << "AR," << b.bin * 2 << "," << fmt(b.mae_ar) << "," << b.n << "\n";
    }
    return out.str();
}

std::string importance_to_csv(const ImportanceReport& report) {
    std::ostringstream out;
    out << "group,feature,mean_abs_gradient\n";
    for (size_t i = 0; i < report.feature.size(); ++i) {
        out << report.group[i] << "," << report.feature[i] << ","
            << fmt(report.mean_abs_gradient[i]) << "\n";
    }
    return out.str();
}

std::string ablation_to_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream out;
    out << "variant,ap_mae,ap_rmse,ap_r2,ar_mae,ar_rmse,ar_r2,n\n";
    for (const AblationRow& r : rows) {
        out << r.variant << "," << fmt(r.metrics.ap.mae) << "," << fmt(r.metrics.ap.rmse) << ","
            << (r.metrics.ap.r2 ? fmt(*r.metrics.ap.r2) : "undefined") << ","
            << fmt(r.metrics.ar.mae) << "," << fmt(r.metrics.ar.rmse) << ","
            << (r.metrics.ar.r2 ? fmt(*r.metrics.ar.r2) : "undefined") << "," << r.metrics.n
            << "\n";
    }
    return out.str();
}

void write_training_log(const std::string& path, const std::vector<EpochLog>& log) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidConfig("cannot write training log: " + path);
    for (const EpochLog& e : log) {
        nlohmann::json j{{"epoch", e.epoch},
                         {"train_loss", e.train_loss},
                         {"val_loss", e.val_loss},
                         {"best", e.is_best}};
        out << j.dump() << "\n";
    }
}

} // namespace aero
