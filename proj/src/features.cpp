#include "aerosense/features.hpp"

#include <cmath>
#include <numbers>

#include "json.hpp"

namespace aero {

EnuPoint velocity_vector(double ground_speed_mps, double heading_deg, double vertical_speed_mps) {
    const double rad = heading_deg * std::numbers::pi / 180.0;
    return {ground_speed_mps * std::sin(rad), ground_speed_mps * std::cos(rad),
            vertical_speed_mps};
}

std::array<double, 4> temporal_state(int64_t t, int64_t tz_offset_s) {
    const int64_t local = t + tz_offset_s;
    const int64_t sod = ((local % 86400) + 86400) % 86400;
    const double hour = double(sod / 3600);             // hour of day, [0, 24)
    const double minute = double(sod % 3600) / 60.0;    // minute of hour, continuous
    const double wh = 2.0 * std::numbers::pi * hour / 24.0;
    const double wm = 2.0 * std::numbers::pi * minute / 60.0;
    return {std::sin(wh), std::cos(wh), std::sin(wm), std::cos(wm)};
}

AircraftState build_state(const TrajectoryRecord& record, int64_t t,
                          const AirspaceGeometry& geometry, const FeatureConfig& config) {
    AircraftState s;
    s.aircraft_id = record.aircraft_id;
    s.latitude_deg = record.position.latitude_deg;
    s.longitude_deg = record.position.longitude_deg;
    s.altitude_m = record.position.altitude_m;
    s.ground_speed_mps = record.ground_speed_mps;
    s.vertical_speed_mps = record.vertical_speed_mps;
    s.heading_deg = record.heading_deg;
    // "maintain current state" when the dialed settings are absent
    s.dialed_speed_mps =
        std::isnan(record.dialed_speed_mps) ? record.ground_speed_mps : record.dialed_speed_mps;
    s.dialed_altitude_m =
        std::isnan(record.dialed_altitude_m) ? record.position.altitude_m : record.dialed_altitude_m;

    const EnuPoint p = geo_to_enu(record.position, geometry.origin);
    const EnuPoint v =
        velocity_vector(record.ground_speed_mps, record.heading_deg, record.vertical_speed_mps);
    const bool in_ap = contains(geometry.ap, p);
    const bool in_ar = contains(geometry.ar, p);
    if (config.interior_zero_distance) {
        s.dist_ap_m = in_ap ? 0.0 : boundary_distance(geometry.ap, p);
        s.dist_ar_m = in_ar ? 0.0 : boundary_distance(geometry.ar, p);
    } else {
        s.dist_ap_m = boundary_distance(geometry.ap, p);
        s.dist_ar_m = boundary_distance(geometry.ar, p);
    }
    s.approach_ap = approach_factor(p, v, geometry.ap);
    s.approach_ar = approach_factor(p, v, geometry.ar);
    s.inside_ap = in_ap ? 1.0 : 0.0;
    s.inside_ar = in_ar ? 1.0 : 0.0;

    const std::array<double, 4> ft = temporal_state(t, config.tz_offset_s);
    s.sin_hour = ft[0];
    s.cos_hour = ft[1];
    s.sin_minute = ft[2];
    s.cos_minute = ft[3];
    return s;
}

AirspaceSituation build_situation(const Snapshot& snapshot, const AirspaceGeometry& geometry,
                                  const FeatureConfig& config) {
    AirspaceSituation out;
    out.time = snapshot.time;
    for (const SnapshotEntry& e : snapshot.aircraft) {
        const EnuPoint p = geo_to_enu(e.record.position, geometry.origin);
        if (!in_combined_scope(geometry, p)) continue;
        out.states.push_back(build_state(e.record, snapshot.time, geometry, config));
    }
    return out;
}

int64_t normalized_dim(const FeatureConfig& config) {
    const int64_t fk = config.circular_heading ? 4 : 3;
    return config.minimal_state ? 3 + fk : 3 + fk + 2;
}

int64_t feature_dim(const FeatureConfig& config) {
    return normalized_dim(config) + (config.minimal_state ? 0 : 10);
}

std::vector<std::string> feature_names(const FeatureConfig& config) {
    std::vector<std::string> names{"latitude_deg", "longitude_deg", "altitude_m",
                                   "ground_speed_mps", "vertical_speed_mps"};
    if (config.circular_heading) {
        names.push_back("sin_heading");
        names.push_back("cos_heading");
    } else {
        names.push_back("heading_deg");
    }
    if (!config.minimal_state) {
        names.insert(names.end(), {"dialed_speed_mps", "dialed_altitude_m", "dist_ap_m",
                                   "dist_ar_m", "approach_ap", "approach_ar", "inside_ap",
                                   "inside_ar", "sin_hour", "cos_hour", "sin_minute",
                                   "cos_minute"});
    }
    return names;
}

void flatten_state(const AircraftState& s, const FeatureConfig& config, std::span<double> out) {
    if (int64_t(out.size()) != feature_dim(config)) {
        throw ShapeMismatch("flatten_state: output span has the wrong length");
    }
    size_t i = 0;
    out[i++] = s.latitude_deg;
    out[i++] = s.longitude_deg;
    out[i++] = s.altitude_m;
    out[i++] = s.ground_speed_mps;
    out[i++] = s.vertical_speed_mps;
    if (config.circular_heading) {
        const double rad = s.heading_deg * std::numbers::pi / 180.0;
        out[i++] = std::sin(rad);
        out[i++] = std::cos(rad);
    } else {
        out[i++] = s.heading_deg;
    }
    if (config.minimal_state) return;
    out[i++] = s.dialed_speed_mps;
    out[i++] = s.dialed_altitude_m;
    out[i++] = s.dist_ap_m;
    out[i++] = s.dist_ar_m;
    out[i++] = s.approach_ap;
    out[i++] = s.approach_ar;
    out[i++] = s.inside_ap;
    out[i++] = s.inside_ar;
    out[i++] = s.sin_hour;
    out[i++] = s.cos_hour;
    out[i++] = s.sin_minute;
    out[i++] = s.cos_minute;
}

Normalizer fit_normalizer(std::span<const AirspaceSituation> training,
                          const FeatureConfig& config) {
    const int64_t nd = normalized_dim(config);
    const int64_t fd = feature_dim(config);
    Normalizer norm;
    norm.mean.assign(size_t(nd), 0.0);
    norm.stddev.assign(size_t(nd), 0.0);

    // Welford accumulation over all aircraft states in all situations
    std::vector<double> m2(size_t(nd), 0.0);
    std::vector<double> flat(static_cast<size_t>(fd));
    long long count = 0;
    for (const AirspaceSituation& sit : training) {
        for (const AircraftState& s : sit.states) {
            flatten_state(s, config, flat);
            ++count;
            for (int64_t j = 0; j < nd; ++j) {
                const double x = flat[size_t(j)];
                const double d = x - norm.mean[size_t(j)];
                norm.mean[size_t(j)] += d / double(count);
                m2[size_t(j)] += d * (x - norm.mean[size_t(j)]);
            }
        }
    }
    if (count == 0) {
        throw EmptyTrainingSet("fit_normalizer needs at least one aircraft state");
    }
    for (int64_t j = 0; j < nd; ++j) {
        const double var = m2[size_t(j)] / double(count); // population convention
        norm.stddev[size_t(j)] = std::max(std::sqrt(var), norm.std_floor);
    }
    return norm;
}

std::vector<double> apply_normalizer(const Normalizer& norm, const AircraftState& s,
                                     const FeatureConfig& config) {
    const int64_t nd = normalized_dim(config);
    if (int64_t(norm.mean.size()) != nd) {
        throw ShapeMismatch("normalizer statistics do not match the feature config");
    }
    std::vector<double> flat(static_cast<size_t>(feature_dim(config)));
    flatten_state(s, config, flat);
    for (int64_t j = 0; j < nd; ++j) {
        flat[size_t(j)] = (flat[size_t(j)] - norm.mean[size_t(j)]) / norm.stddev[size_t(j)];
    }
    return flat;
}

Tensor feature_matrix(const AirspaceSituation& situation, const Normalizer& norm,
                      const FeatureConfig& config) {
    const int64_t fd = feature_dim(config);
    Tensor x = Tensor::zeros({int64_t(situation.states.size()), fd});
    for (size_t i = 0; i < situation.states.size(); ++i) {
        const std::vector<double> row = apply_normalizer(norm, situation.states[i], config);
        std::copy(row.begin(), row.end(), x.data.begin() + int64_t(i) * fd);
    }
    return x;
}

std::string normalizer_to_json(const Normalizer& norm) {
    nlohmann::json j;
    j["mean"] = norm.mean;
    j["stddev"] = norm.stddev;
    j["std_floor"] = norm.std_floor;
    return j.dump(2);
}

Normalizer normalizer_from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    Normalizer norm;
    norm.mean = j.at("mean").get<std::vector<double>>();
    norm.stddev = j.at("stddev").get<std::vector<double>>();
    norm.std_floor = j.value("std_floor", 1e-8);
    return norm;
}

} // namespace aero
