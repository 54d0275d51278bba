#include <cmath>
#include <random>

#include "doctest.h"

#include "aerosense/features.hpp"

using namespace aero;

namespace {

// simple nested prisms around the tangent origin, in exact ENU meters
AirspaceGeometry fixture_geometry() {
    AirspaceGeometry g;
    g.origin = {36.0, 120.0, 0.0};
    g.ap.name = "AP";
    g.ap.footprint = {{-1000, -1000}, {1000, -1000}, {1000, 1000}, {-1000, 1000}};
    g.ap.floor_m = 0.0;
    g.ap.ceiling_m = 1000.0;
    g.ar.name = "AR";
    g.ar.footprint = {{-5000, -5000}, {5000, -5000}, {5000, 5000}, {-5000, 5000}};
    g.ar.floor_m = 2000.0;
    g.ar.ceiling_m = 4000.0;
    g.scope_margin_m = 100000.0;
    validate_geometry(g);
    return g;
}

TrajectoryRecord record_at(const GeoPoint& pos, double gs, double heading, double vs) {
    TrajectoryRecord r;
    r.timestamp = 1740758400; // local midnight for tz +8
    r.aircraft_id = "AC1";
    r.position = pos;
    r.ground_speed_mps = gs;
    r.heading_deg = heading;
    r.vertical_speed_mps = vs;
    r.dialed_speed_mps = std::numeric_limits<double>::quiet_NaN();
    r.dialed_altitude_m = std::numeric_limits<double>::quiet_NaN();
    return r;
}

} // namespace

TEST_CASE("velocity_vector") {
    const EnuPoint east = velocity_vector(100.0, 90.0, 0.0);
    CHECK(east.east == doctest::Approx(100.0));
    CHECK(east.north == doctest::Approx(0.0));
    CHECK(east.up == 0.0);

    const EnuPoint north_desc = velocity_vector(100.0, 0.0, -5.0);
    CHECK(north_desc.east == doctest::Approx(0.0));
    CHECK(north_desc.north == doctest::Approx(100.0));
    CHECK(north_desc.up == -5.0);

    const EnuPoint still = velocity_vector(0.0, 123.0, 0.0);
    CHECK(still.east == 0.0);
    CHECK(still.north == 0.0);
}

TEST_CASE("temporal_state") {
    SUBCASE("local midnight") {
        const auto ft = temporal_state(1740758400, 28800); // 2025-03-01 00:00 UTC+8
        CHECK(ft[0] == doctest::Approx(0.0));
        CHECK(ft[1] == doctest::Approx(1.0));
        CHECK(ft[2] == doctest::Approx(0.0));
        CHECK(ft[3] == doctest::Approx(1.0));
    }
    SUBCASE("quarter-cycle points at 06:15") {
        const auto ft = temporal_state(1740758400 + 6 * 3600 + 15 * 60, 28800);
        CHECK(std::abs(ft[0] - 1.0) < 1e-9);
        CHECK(std::abs(ft[1]) < 1e-9);
        CHECK(std::abs(ft[2] - 1.0) < 1e-9);
        CHECK(std::abs(ft[3]) < 1e-9);
    }
    SUBCASE("half-cycle points at 12:30") {
        const auto ft = temporal_state(1740758400 + 12 * 3600 + 30 * 60, 28800);
        CHECK(std::abs(ft[0]) < 1e-9);
        CHECK(std::abs(ft[1] + 1.0) < 1e-9);
        CHECK(std::abs(ft[2]) < 1e-9);
        CHECK(std::abs(ft[3] + 1.0) < 1e-9);
    }
    SUBCASE("minute phase is continuous within the hour") {
        const auto a = temporal_state(1740758400 + 90, 28800); // 00:01:30
        const double m = 1.5;
        CHECK(a[2] == doctest::Approx(std::sin(2.0 * std::acos(-1.0) * m / 60.0)));
    }
    SUBCASE("sin^2 + cos^2 = 1") {
        std::mt19937_64 rng(5);
        for (int i = 0; i < 200; ++i) {
            const auto ft = temporal_state(int64_t(rng() % 10000000000ull), 28800);
            CHECK(std::abs(ft[0] * ft[0] + ft[1] * ft[1] - 1.0) < 1e-9);
            CHECK(std::abs(ft[2] * ft[2] + ft[3] * ft[3] - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("build_state") {
    const AirspaceGeometry g = fixture_geometry();

    SUBCASE("hand-computed reference at the tangent origin") {
        // aircraft at ENU (0,0,500): inside AP, 1500 m below the AR floor,
        // heading north and climbing at 50 m/s
        const TrajectoryRecord r = record_at({36.0, 120.0, 500.0}, 100.0, 0.0, 50.0);
        const AircraftState s = build_state(r, r.timestamp, g, {});
        CHECK(s.latitude_deg == 36.0);
        CHECK(s.longitude_deg == 120.0);
        CHECK(s.altitude_m == 500.0);
        CHECK(s.ground_speed_mps == 100.0);
        CHECK(s.vertical_speed_mps == 50.0);
        CHECK(s.heading_deg == 0.0);
        CHECK(s.dialed_speed_mps == 100.0);  // missing dialed speed holds current
        CHECK(s.dialed_altitude_m == 500.0); // missing dialed altitude holds current
        CHECK(s.dist_ap_m == doctest::Approx(500.0)); // floor/ceiling tie at 500
        CHECK(s.dist_ar_m == doctest::Approx(1500.0));
        CHECK(s.inside_ap == 1.0);
        CHECK(s.inside_ar == 0.0);
        // AP center coincides with the aircraft: epsilon-regularized zero
        CHECK(s.approach_ap == doctest::Approx(0.0));
        // v = (0,100,50), r_c = (0,0,2500): cos = 125000 / (111.8034 * 2500)
        CHECK(s.approach_ar == doctest::Approx(1.0 / std::sqrt(5.0)).epsilon(1e-9));
        CHECK(s.sin_hour == doctest::Approx(0.0));
        CHECK(s.cos_hour == doctest::Approx(1.0));
    }
    SUBCASE("outside both regions, flying at the AR center") {
        // place the aircraft 10 km east at AR mid altitude, heading west
        const GeoPoint pos = enu_to_geo({10000.0, 0.0, 3000.0}, g.origin);
        const TrajectoryRecord r = record_at(pos, 200.0, 270.0, 0.0);
        const AircraftState s = build_state(r, r.timestamp, g, {});
        CHECK(s.inside_ap == 0.0);
        CHECK(s.inside_ar == 0.0);
        CHECK(s.approach_ar == doctest::Approx(1.0).epsilon(1e-6));
    }
    SUBCASE("interior-zero distance flag") {
        const TrajectoryRecord r = record_at({36.0, 120.0, 500.0}, 100.0, 0.0, 0.0);
        FeatureConfig cfg;
        cfg.interior_zero_distance = true;
        const AircraftState s = build_state(r, r.timestamp, g, cfg);
        CHECK(s.dist_ap_m == 0.0);
        CHECK(s.dist_ar_m == doctest::Approx(1500.0));
    }
}

TEST_CASE("feature layout") {
    CHECK(feature_dim({}) == 18);
    CHECK(normalized_dim({}) == 8);
    const std::vector<std::string> names = feature_names({});
    REQUIRE(names.size() == 18);
    const std::vector<std::string> expect{
        "latitude_deg", "longitude_deg", "altitude_m",  "ground_speed_mps",
        "vertical_speed_mps", "heading_deg", "dialed_speed_mps", "dialed_altitude_m",
        "dist_ap_m",    "dist_ar_m",     "approach_ap", "approach_ar",
        "inside_ap",    "inside_ar",     "sin_hour",    "cos_hour",
        "sin_minute",   "cos_minute"};
    CHECK(names == expect);

    FeatureConfig minimal;
    minimal.minimal_state = true;
    CHECK(feature_dim(minimal) == 6);
    CHECK(normalized_dim(minimal) == 6);

    FeatureConfig circular;
    circular.circular_heading = true;
    CHECK(feature_dim(circular) == 19);
    CHECK(normalized_dim(circular) == 9);
}

TEST_CASE("build_situation") {
    const AirspaceGeometry g = fixture_geometry();
    SUBCASE("empty snapshot") {
        Snapshot snap;
        snap.time = 1740758400;
        const AirspaceSituation sit = build_situation(snap, g, {});
        CHECK(sit.states.empty());
        CHECK(sit.time == snap.time);
    }
    SUBCASE("out-of-scope aircraft dropped") {
        Snapshot snap;
        snap.time = 1740758400;
        for (double east : {0.0, 3000.0, 150000.0}) {
            SnapshotEntry e;
            e.record = record_at(enu_to_geo({east, 0.0, 3000.0}, g.origin), 100, 0, 0);
            e.record.aircraft_id = "AC" + std::to_string(int(east));
            snap.aircraft.push_back(e);
        }
        const AirspaceSituation sit = build_situation(snap, g, {});
        CHECK(sit.states.size() == 2);
    }
    SUBCASE("membership matches the per-aircraft filter") {
        std::mt19937_64 rng(9);
        std::uniform_real_distribution<double> d(-120000.0, 120000.0);
        std::uniform_real_distribution<double> up(0.0, 12000.0);
        Snapshot snap;
        snap.time = 1740758400;
        for (int i = 0; i < 50; ++i) {
            SnapshotEntry e;
            e.record = record_at(enu_to_geo({d(rng), d(rng), up(rng)}, g.origin), 100, 0, 0);
            e.record.aircraft_id = "AC" + std::to_string(i);
            snap.aircraft.push_back(e);
        }
        const AirspaceSituation sit = build_situation(snap, g, {});
        size_t expected = 0;
        for (const auto& e : snap.aircraft) {
            if (in_combined_scope(g, geo_to_enu(e.record.position, g.origin))) ++expected;
        }
        CHECK(sit.states.size() == expected);
    }
}

TEST_CASE("normalizer") {
    const FeatureConfig cfg;
    const AirspaceGeometry g = fixture_geometry();

    auto situation_from_values = [&](const std::vector<double>& altitudes) {
        AirspaceSituation sit;
        sit.time = 1740758400;
        for (double alt : altitudes) {
            const TrajectoryRecord r = record_at({36.0, 120.0, alt}, 100.0, 0.0, 0.0);
            sit.states.push_back(build_state(r, r.timestamp, g, cfg));
        }
        return sit;
    };

    SUBCASE("single state degenerates to std_floor and a zero vector") {
        const AirspaceSituation sit = situation_from_values({500.0});
        const Normalizer norm = fit_normalizer(std::span(&sit, 1), cfg);
        CHECK(norm.mean[2] == 500.0);
        CHECK(norm.stddev[2] == norm.std_floor);
        const std::vector<double> out = apply_normalizer(norm, sit.states[0], cfg);
        for (int j = 0; j < 8; ++j) CHECK(out[size_t(j)] == 0.0);
    }
    SUBCASE("values 0 and 2 normalize to -1 and +1 (population std)") {
        AirspaceSituation sit = situation_from_values({0.0, 2.0});
        const Normalizer norm = fit_normalizer(std::span(&sit, 1), cfg);
        CHECK(norm.mean[2] == doctest::Approx(1.0));
        CHECK(norm.stddev[2] == doctest::Approx(1.0));
        CHECK(apply_normalizer(norm, sit.states[0], cfg)[2] == doctest::Approx(-1.0));
        CHECK(apply_normalizer(norm, sit.states[1], cfg)[2] == doctest::Approx(1.0));
    }
    SUBCASE("agrees with an independent two-pass computation") {
        std::mt19937_64 rng(21);
        std::uniform_real_distribution<double> alt(0.0, 10000.0);
        std::uniform_real_distribution<double> gs(0.0, 300.0);
        std::vector<AirspaceSituation> sits;
        std::vector<std::vector<double>> flats;
        for (int k = 0; k < 100; ++k) {
            AirspaceSituation sit;
            sit.time = 1740758400;
            for (int i = 0; i < 100; ++i) {
                TrajectoryRecord r = record_at({36.0, 120.0, alt(rng)}, gs(rng), 0.0, 0.0);
                r.dialed_speed_mps = gs(rng);
                sit.states.push_back(build_state(r, r.timestamp, g, cfg));
                std::vector<double> flat(18);
                flatten_state(sit.states.back(), cfg, flat);
                flats.push_back(flat);
            }
            sits.push_back(std::move(sit));
        }
        const Normalizer norm = fit_normalizer(sits, cfg);
        for (int64_t j = 0; j < 8; ++j) {
            double mean = 0.0;
            for (const auto& f : flats) mean += f[size_t(j)];
            mean /= double(flats.size());
            double var = 0.0;
            for (const auto& f : flats) var += (f[size_t(j)] - mean) * (f[size_t(j)] - mean);
            var /= double(flats.size());
            CHECK(std::abs(norm.mean[size_t(j)] - mean) < 1e-9);
            CHECK(std::abs(norm.stddev[size_t(j)] - std::max(std::sqrt(var), norm.std_floor)) <
                  1e-9);
        }
        SUBCASE("normalized corpus has zero mean and unit variance") {
            for (int64_t j = 0; j < 8; ++j) {
                double mean = 0.0, var = 0.0;
                std::vector<double> normed;
                for (const auto& sit : sits) {
                    for (const auto& s : sit.states) {
                        normed.push_back(apply_normalizer(norm, s, cfg)[size_t(j)]);
                    }
                }
                for (double v : normed) mean += v;
                mean /= double(normed.size());
                for (double v : normed) var += (v - mean) * (v - mean);
                var /= double(normed.size());
                CHECK(std::abs(mean) < 1e-6);
                if (norm.stddev[size_t(j)] > norm.std_floor) {
                    CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-6);
                }
            }
        }
    }
    SUBCASE("pass-through dims are bit-identical and the prefix round-trips") {
        const AirspaceSituation sit = situation_from_values({100.0, 900.0, 400.0});
        const Normalizer norm = fit_normalizer(std::span(&sit, 1), cfg);
        std::vector<double> raw(18);
        flatten_state(sit.states[1], cfg, raw);
        const std::vector<double> out = apply_normalizer(norm, sit.states[1], cfg);
        for (size_t j = 8; j < 18; ++j) CHECK(out[j] == raw[j]);
        for (size_t j = 0; j < 8; ++j) {
            CHECK(out[j] * norm.stddev[j] + norm.mean[j] == doctest::Approx(raw[j]).epsilon(1e-9));
        }
    }
    SUBCASE("empty training set") {
        CHECK_THROWS_AS(fit_normalizer({}, cfg), EmptyTrainingSet);
    }
}
