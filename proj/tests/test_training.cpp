#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"

#include "aerosense/training.hpp"

using namespace aero;

namespace {

AirspaceGeometry tiny_geometry() {
    AirspaceGeometry g;
    g.origin = {36.0, 120.0, 0.0};
    g.ap.name = "AP";
    g.ap.footprint = {{-20000, -20000}, {20000, -20000}, {20000, 20000}, {-20000, 20000}};
    g.ap.floor_m = 0.0;
    g.ap.ceiling_m = 6000.0;
    g.ar.name = "AR";
    g.ar.footprint = {{-60000, -60000}, {60000, -60000}, {60000, 60000}, {-60000, 60000}};
    g.ar.floor_m = 5500.0;
    g.ar.ceiling_m = 15000.0;
    g.scope_margin_m = 100000.0;
    validate_geometry(g);
    return g;
}

ModelConfig tiny_model() {
    ModelConfig cfg;
    cfg.n_max = 24;
    cfg.encoder_layers = {16, 16};
    cfg.d_model = 16;
    cfg.attention_heads = 2;
    cfg.head_hidden = 8;
    cfg.dropout_p = 0.05;
    return cfg;
}

// snapshot with n aircraft spread inside the scope; labels derived from n so
// the count signal is learnable
LabeledSample synthetic_sample(std::mt19937_64& rng, int64_t time, int n) {
    const AirspaceGeometry g = tiny_geometry();
    LabeledSample s;
    s.snapshot.time = time;
    std::uniform_real_distribution<double> d(-50000.0, 50000.0);
    std::uniform_real_distribution<double> alt(500.0, 12000.0);
    std::uniform_real_distribution<double> gs(80.0, 250.0);
    std::uniform_real_distribution<double> hd(0.0, 359.0);
    for (int i = 0; i < n; ++i) {
        SnapshotEntry e;
        e.record.timestamp = time - int64_t(rng() % 50);
        e.record.aircraft_id = "AC" + std::to_string(i);
        e.record.position = enu_to_geo({d(rng), d(rng), alt(rng)}, g.origin);
        e.record.ground_speed_mps = gs(rng);
        e.record.vertical_speed_mps = 0.0;
        e.record.heading_deg = hd(rng);
        e.record.dialed_speed_mps = e.record.ground_speed_mps;
        e.record.dialed_altitude_m = e.record.position.altitude_m;
        e.age_s = time - e.record.timestamp;
        s.snapshot.aircraft.push_back(std::move(e));
    }
    s.label.query_time = time;
    s.label.horizon_s = 900;
    s.label.y_ap = n;
    s.label.y_ar = 2 * n;
    return s;
}

std::vector<LabeledSample> synthetic_dataset(uint64_t seed, size_t count, int64_t t0 = 1740758400) {
    std::mt19937_64 rng(seed);
    std::vector<LabeledSample> out;
    for (size_t i = 0; i < count; ++i) {
        out.push_back(synthetic_sample(rng, t0 + int64_t(i) * 60, 1 + int(rng() % 8)));
    }
    return out;
}

const TrainResult& overfit_fixture() {
    static const TrainResult result = [] {
        const std::vector<LabeledSample> data = synthetic_dataset(11, 32);
        TrainConfig cfg;
        cfg.epochs = 300;
        cfg.batch_size = 4;
        cfg.learning_rate = 1e-2;
        cfg.patience = 300;
        cfg.seed = 5;
        return train(data, data, tiny_geometry(), tiny_model(), FeatureConfig{}, cfg);
    }();
    return result;
}

} // namespace

TEST_CASE("multitask_loss closed form") {
    using P = std::array<double, 2>;
    std::vector<P> y{{3.0, 5.0}};
    CHECK(multitask_loss(std::vector<P>{{3.0, 5.0}}, y, 1.0) == 0.0);
    CHECK(multitask_loss(std::vector<P>{{3.5, 5.5}}, y, 1.0) == doctest::Approx(0.25));
    CHECK(multitask_loss(std::vector<P>{{5.0, 8.0}}, y, 1.0) == doctest::Approx(4.0));
    CHECK_THROWS_AS(multitask_loss(std::vector<P>{{1.0, 1.0}, {2.0, 2.0}}, y, 1.0), ShapeMismatch);
}

TEST_CASE("regression metrics") {
    SUBCASE("perfect prediction") {
        const std::vector<double> y{1.0, 2.0, 3.0};
        const AirspaceMetrics m = regression_metrics(y, y);
        CHECK(m.mae == 0.0);
        CHECK(m.rmse == 0.0);
        REQUIRE(m.r2.has_value());
        CHECK(*m.r2 == 1.0);
    }
    SUBCASE("mean predictor has R^2 = 0") {
        const std::vector<double> y{1.0, 2.0, 3.0, 6.0};
        const std::vector<double> p(4, 3.0);
        const AirspaceMetrics m = regression_metrics(p, y);
        REQUIRE(m.r2.has_value());
        CHECK(*m.r2 == doctest::Approx(0.0));
    }
    SUBCASE("constant truth yields the undefined sentinel") {
        const std::vector<double> y{0.0, 0.0};
        const std::vector<double> p{1.0, 1.0};
        const AirspaceMetrics m = regression_metrics(p, y);
        CHECK(m.mae == doctest::Approx(1.0));
        CHECK(m.rmse == doctest::Approx(1.0));
        CHECK_FALSE(m.r2.has_value());
    }
    SUBCASE("RMSE >= MAE and the R^2 identity hold on random data") {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> u(-10.0, 10.0);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<double> y(20), p(20);
            for (size_t i = 0; i < y.size(); ++i) {
                y[i] = u(rng);
                p[i] = y[i] + 0.3 * u(rng);
            }
            const AirspaceMetrics m = regression_metrics(p, y);
            CHECK(m.rmse >= m.mae);
            double ybar = 0.0;
            for (double v : y) ybar += v;
            ybar /= double(y.size());
            double ss = 0.0;
            for (double v : y) ss += (v - ybar) * (v - ybar);
            REQUIRE(m.r2.has_value());
            CHECK(std::abs(*m.r2 - (1.0 - (m.rmse * m.rmse * double(y.size())) / ss)) < 1e-9);
        }
    }
}

TEST_CASE("train") {
    SUBCASE("overfits a 32-sample synthetic set") {
        const TrainResult& r = overfit_fixture();
        REQUIRE_FALSE(r.log.empty());
        CHECK(r.log.back().train_loss < 0.05);
        CHECK(r.log.back().train_loss <= r.log.front().train_loss);
    }
    SUBCASE("identical seeds give bit-identical checkpoints") {
        const std::vector<LabeledSample> data = synthetic_dataset(13, 12);
        TrainConfig cfg;
        cfg.epochs = 5;
        cfg.batch_size = 4;
        cfg.seed = 21;
        const TrainResult a = train(data, data, tiny_geometry(), tiny_model(), {}, cfg);
        const TrainResult b = train(data, data, tiny_geometry(), tiny_model(), {}, cfg);
        CHECK(checkpoint_to_json(a.checkpoint) == checkpoint_to_json(b.checkpoint));
        // thread count must not affect the result
        TrainConfig one_thread = cfg;
        one_thread.threads = 1;
        const TrainResult c = train(data, data, tiny_geometry(), tiny_model(), {}, one_thread);
        CHECK(checkpoint_to_json(a.checkpoint) == checkpoint_to_json(c.checkpoint));
    }
    SUBCASE("constant labels converge to a bias-only solution") {
        std::vector<LabeledSample> data = synthetic_dataset(17, 24);
        for (auto& s : data) {
            s.label.y_ap = 3;
            s.label.y_ar = 7;
        }
        TrainConfig cfg;
        cfg.epochs = 300;
        cfg.batch_size = 8;
        cfg.learning_rate = 1e-2;
        cfg.patience = 300;
        cfg.seed = 1;
        const TrainResult r = train(data, data, tiny_geometry(), tiny_model(), {}, cfg);
        const MetricsReport m = evaluate(r.checkpoint, data, tiny_geometry());
        CHECK(m.ap.mae < 0.05);
        CHECK(m.ar.mae < 0.05);
    }
    SUBCASE("early stopping returns the best validation checkpoint") {
        const std::vector<LabeledSample> train_data = synthetic_dataset(19, 24);
        const std::vector<LabeledSample> val_data = synthetic_dataset(23, 8, 1740858400);
        TrainConfig cfg;
        cfg.epochs = 40;
        cfg.batch_size = 8;
        cfg.patience = 5;
        cfg.seed = 3;
        const TrainResult r = train(train_data, val_data, tiny_geometry(), tiny_model(), {}, cfg);
        double best = std::numeric_limits<double>::infinity();
        for (const EpochLog& e : r.log) best = std::min(best, e.val_loss);
        // recompute the returned checkpoint's val loss
        std::vector<std::array<double, 2>> pred, truth;
        for (const auto& s : val_data) {
            const AirspaceSituation sit =
                build_situation(s.snapshot, tiny_geometry(), r.checkpoint.feature_config);
            const ForwardResult f = forward(r.checkpoint, sit, {});
            pred.push_back({f.y_ap, f.y_ar});
            truth.push_back({double(s.label.y_ap), double(s.label.y_ar)});
        }
        CHECK(multitask_loss(pred, truth, cfg.huber_delta) == doctest::Approx(best).epsilon(1e-12));
    }
    SUBCASE("empty training set") {
        CHECK_THROWS_AS(train({}, {}, tiny_geometry(), tiny_model(), {}, {}), EmptyTrainingSet);
    }
}

TEST_CASE("evaluate and dayparting") {
    const TrainResult& fixture = overfit_fixture();
    const std::vector<LabeledSample> data = synthetic_dataset(11, 32);

    SUBCASE("metrics shape and ordering") {
        const MetricsReport m = evaluate(fixture.checkpoint, data, tiny_geometry());
        CHECK(m.n == data.size());
        CHECK(m.ap.rmse >= m.ap.mae);
        CHECK(m.ar.rmse >= m.ar.mae);
        CHECK_THROWS_AS(evaluate(fixture.checkpoint, {}, tiny_geometry()), EmptyTestSet);
    }
    SUBCASE("geometry mismatch is rejected") {
        const AirspaceGeometry other = make_demo_geometry();
        CHECK_THROWS_AS(evaluate(fixture.checkpoint, data, other), GeometryMismatch);
    }
    SUBCASE("bins partition the day and recombine to the global MAE") {
        // spread samples across the day: 32 samples x 45 min apart covers 24 h
        std::mt19937_64 rng(29);
        std::vector<LabeledSample> spread;
        for (size_t i = 0; i < 32; ++i) {
            spread.push_back(synthetic_sample(rng, 1740758400 + int64_t(i) * 2700,
                                              1 + int(rng() % 8)));
        }
        const auto bins =
            dayparting_evaluate(fixture.checkpoint, spread, tiny_geometry(), 28800);
        REQUIRE_FALSE(bins.empty());
        size_t total = 0;
        double weighted_ap = 0.0, weighted_ar = 0.0;
        for (const DaypartBin& b : bins) {
            total += b.n;
            weighted_ap += b.mae_ap * double(b.n);
            weighted_ar += b.mae_ar * double(b.n);
        }
        CHECK(total == spread.size());
        const MetricsReport global = evaluate(fixture.checkpoint, spread, tiny_geometry());
        CHECK(std::abs(weighted_ap / double(total) - global.ap.mae) < 1e-9);
        CHECK(std::abs(weighted_ar / double(total) - global.ar.mae) < 1e-9);
    }
    SUBCASE("bin assignment uses half-open two-hour windows") {
        std::mt19937_64 rng(31);
        // 09:00 local -> bin 4; 10:00 local exactly -> bin 5
        const int64_t nine_local = 1740758400 + 9 * 3600;
        const int64_t ten_local = 1740758400 + 10 * 3600;
        std::vector<LabeledSample> at_nine{synthetic_sample(rng, nine_local, 3)};
        auto bins = dayparting_evaluate(fixture.checkpoint, at_nine, tiny_geometry(), 28800);
        REQUIRE(bins.size() == 1);
        CHECK(bins[0].bin == 4);
        std::vector<LabeledSample> at_ten{synthetic_sample(rng, ten_local, 3)};
        bins = dayparting_evaluate(fixture.checkpoint, at_ten, tiny_geometry(), 28800);
        REQUIRE(bins.size() == 1);
        CHECK(bins[0].bin == 5);
    }
}

TEST_CASE("state importance") {
    const AirspaceGeometry g = tiny_geometry();

    SUBCASE("all-zero first layer gives all-zero importances") {
        const std::vector<LabeledSample> data = synthetic_dataset(37, 4);
        TrainConfig cfg;
        cfg.epochs = 1;
        cfg.seed = 2;
        TrainResult r = train(data, data, g, tiny_model(), {}, cfg);
        r.checkpoint.params["enc0.w"] =
            Tensor::zeros(r.checkpoint.params["enc0.w"].shape);
        const ImportanceReport rep = state_importance(r.checkpoint, data, g);
        for (double v : rep.mean_abs_gradient) CHECK(v == 0.0);
    }
    SUBCASE("hand-built linear model recovers |w| per dimension") {
        ModelConfig cfg;
        cfg.n_max = 24;
        cfg.encoder_layers = {4};
        cfg.d_model = 4;
        cfg.attention_heads = 1;
        cfg.attention_enabled = false;
        cfg.dropout_p = 0.0;
        cfg.head_hidden = 2;
        Normalizer ident;
        ident.mean.assign(8, 0.0);
        ident.stddev.assign(8, 1.0);
        ModelCheckpoint ckpt =
            init_checkpoint(cfg, FeatureConfig{}, ident, geometry_fingerprint(g), 9);
        // encoder: out = W x + 1000 with BN neutralized and ReLU kept active
        std::mt19937_64 rng(41);
        std::uniform_real_distribution<double> u(-1e-4, 1e-4);
        Tensor w = Tensor::zeros({18, 4});
        for (double& v : w.data) v = u(rng);
        ckpt.params["enc0.w"] = w;
        ckpt.params["enc0.b"] = Tensor::full({1, 4}, 1000.0);
        ckpt.params["enc0.bn_gamma"] = Tensor::full({1, 4}, std::sqrt(1.0 + 1e-5));
        ckpt.bn["enc0"].running_mean = Tensor::zeros({1, 4});
        ckpt.bn["enc0"].running_var = Tensor::full({1, 4}, 1.0);
        // heads select z components with an always-active hidden layer
        auto head = [&](const char* name, int64_t column) {
            Tensor w1 = Tensor::zeros({4, 2});
            w1.at(column, 0) = 1.0;
            ckpt.params[std::string(name) + ".w1"] = w1;
            ckpt.params[std::string(name) + ".b1"] = Tensor::full({1, 2}, 1000.0);
            Tensor w2 = Tensor::zeros({2, 1});
            w2.at(0, 0) = 1.0;
            ckpt.params[std::string(name) + ".w2"] = w2;
            ckpt.params[std::string(name) + ".b2"] = Tensor::zeros({1, 1});
        };
        head("head_ap", 0);
        head("head_ar", 1);

        const std::vector<LabeledSample> data = synthetic_dataset(43, 6);
        const ImportanceReport rep = state_importance(ckpt, data, g);
        for (int64_t j = 0; j < 18; ++j) {
            const double want = std::abs(w.at(j, 0) + w.at(j, 1));
            CHECK(rep.mean_abs_gradient[size_t(j)] == doctest::Approx(want).epsilon(1e-9));
        }
    }
    SUBCASE("padded rows receive exactly zero gradient") {
        const TrainResult& fixture = overfit_fixture();
        std::mt19937_64 rng(47);
        const LabeledSample sample = synthetic_sample(rng, 1740758400, 5);
        const AirspaceSituation sit =
            build_situation(sample.snapshot, g, fixture.checkpoint.feature_config);
        const Tensor x =
            feature_matrix(sit, fixture.checkpoint.normalizer, fixture.checkpoint.feature_config);
        const PaddedBatch batch = pad_to_container(x, fixture.checkpoint.config);
        Graph gr;
        const ForwardGraph fg =
            build_forward(gr, batch.x, batch.valid_count, fixture.checkpoint, {});
        gr.backward(gr.sum_all(fg.prediction));
        const Tensor& dx = gr.grad(fg.input);
        for (int64_t i = batch.valid_count; i < dx.rows(); ++i) {
            for (int64_t j = 0; j < dx.cols(); ++j) CHECK(dx.at(i, j) == 0.0);
        }
    }
    SUBCASE("empty sample set") {
        const TrainResult& fixture = overfit_fixture();
        CHECK_THROWS_AS(state_importance(fixture.checkpoint, {}, g), EmptySampleSet);
    }
}

TEST_CASE("attention export") {
    const TrainResult& fixture = overfit_fixture();
    const AirspaceGeometry g = tiny_geometry();
    std::mt19937_64 rng(53);

    SUBCASE("rows sum to one over valid sources") {
        const LabeledSample sample = synthetic_sample(rng, 1740758400, 7);
        const AirspaceSituation sit =
            build_situation(sample.snapshot, g, fixture.checkpoint.feature_config);
        const AttentionExport e = export_attention(fixture.checkpoint, sit);
        REQUIRE(e.matrix.rows() == int64_t(sit.states.size()));
        for (int64_t i = 0; i < e.matrix.rows(); ++i) {
            double sum = 0.0;
            for (int64_t j = 0; j < e.matrix.cols(); ++j) sum += e.matrix.at(i, j);
            CHECK(std::abs(sum - 1.0) < 1e-9);
        }
        CHECK(e.aircraft_ids.size() == sit.states.size());
        CHECK(e.influence.size() == sit.states.size());
    }
    SUBCASE("single aircraft exports [[1]]") {
        const LabeledSample sample = synthetic_sample(rng, 1740758400, 1);
        const AirspaceSituation sit =
            build_situation(sample.snapshot, g, fixture.checkpoint.feature_config);
        const AttentionExport e = export_attention(fixture.checkpoint, sit);
        REQUIRE(e.matrix.rows() == 1);
        CHECK(e.matrix.at(0, 0) == 1.0);
        CHECK(e.influence[0] == 1.0);
    }
    SUBCASE("matches forward diagnostics bit-exactly") {
        const LabeledSample sample = synthetic_sample(rng, 1740758400, 6);
        const AirspaceSituation sit =
            build_situation(sample.snapshot, g, fixture.checkpoint.feature_config);
        const AttentionExport e = export_attention(fixture.checkpoint, sit);
        const ForwardResult r =
            forward(fixture.checkpoint, sit, {.want_diagnostics = true});
        CHECK(e.matrix.data == r.attention.data);
    }
    SUBCASE("empty situation is rejected") {
        AirspaceSituation empty;
        CHECK_THROWS_AS(export_attention(fixture.checkpoint, empty), EmptySituation);
    }
}

TEST_CASE("ablation driver") {
    const std::vector<LabeledSample> train_data = synthetic_dataset(59, 16);
    const std::vector<LabeledSample> test_data = synthetic_dataset(61, 8, 1740958400);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.seed = 7;
    const auto rows =
        run_ablation(train_data, train_data, test_data, tiny_geometry(), tiny_model(), {}, cfg);
    REQUIRE(rows.size() == 6);
    CHECK(rows[0].variant == "full_sum_pooling");
    CHECK(rows[1].variant == "mean_pooling");
    CHECK(rows[2].variant == "max_pooling");
    CHECK(rows[3].variant == "no_masked_self_attention");
    CHECK(rows[4].variant == "shared_prediction_head");
    CHECK(rows[5].variant == "minimal_physical_state");

    const std::string csv = ablation_to_csv(rows);
    CHECK(csv.find("variant,ap_mae,ap_rmse,ap_r2,ar_mae,ar_rmse,ar_r2,n") == 0);

    // determinism: the same seed reproduces the same table
    const auto again =
        run_ablation(train_data, train_data, test_data, tiny_geometry(), tiny_model(), {}, cfg);
    CHECK(ablation_to_csv(again) == csv);
}
