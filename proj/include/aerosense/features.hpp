#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "aerosense/geometry.hpp"
#include "aerosense/tensor.hpp"
#include "aerosense/trajectory.hpp"

namespace aero {

struct FeatureConfig {
    // Dayparting and temporal context are in local operational time.
    int64_t tz_offset_s = 28800;
    // Ablation variant: location + kinematics only (6 input dims).
    bool minimal_state = false;
    // Encode heading as sin/cos instead of raw degrees (widens f_k by one).
    bool circular_heading = false;
    // Distance to a region reported as 0 for aircraft inside it, instead of
    // distance to the surface.
    bool interior_zero_distance = false;
};

// Raw (unnormalized) per-aircraft state; groups in flattening order.
struct AircraftState {
    std::string aircraft_id;
    // location f_l
    double latitude_deg = 0.0;
    double longitude_deg = 0.0;
    double altitude_m = 0.0;
    // kinematics f_k
    double ground_speed_mps = 0.0;
    double vertical_speed_mps = 0.0;
    double heading_deg = 0.0;
    // control intent f_c (missing dialed values filled with the current state)
    double dialed_speed_mps = 0.0;
    double dialed_altitude_m = 0.0;
    // boundary interactions f_b
    double dist_ap_m = 0.0;
    double dist_ar_m = 0.0;
    double approach_ap = 0.0;
    double approach_ar = 0.0;
    double inside_ap = 0.0;
    double inside_ar = 0.0;
    // temporal context f_t
    double sin_hour = 0.0;
    double cos_hour = 1.0;
    double sin_minute = 0.0;
    double cos_minute = 1.0;
};

struct AirspaceSituation {
    int64_t time = 0;
    std::vector<AircraftState> states; // aircraft inside the combined scope
};

// ENU velocity from aviation-convention speed/heading (0 = north, 90 = east).
EnuPoint velocity_vector(double ground_speed_mps, double heading_deg, double vertical_speed_mps);

// [sin(2*pi*h/24), cos(2*pi*h/24), sin(2*pi*m/60), cos(2*pi*m/60)] with h the
// local hour of day and m the minute of hour (continuous within the hour).
std::array<double, 4> temporal_state(int64_t t, int64_t tz_offset_s);

AircraftState build_state(const TrajectoryRecord& record, int64_t t,
                          const AirspaceGeometry& geometry, const FeatureConfig& config = {});

AirspaceSituation build_situation(const Snapshot& snapshot, const AirspaceGeometry& geometry,
                                  const FeatureConfig& config = {});

// Model input layout under a config: z-scored prefix (f_l, f_k, f_c) followed
// by f_b and f_t verbatim.
int64_t feature_dim(const FeatureConfig& config);
int64_t normalized_dim(const FeatureConfig& config);
std::vector<std::string> feature_names(const FeatureConfig& config);
void flatten_state(const AircraftState& s, const FeatureConfig& config, std::span<double> out);

// Per-dimension z-score statistics for the normalized prefix.
struct Normalizer {
    std::vector<double> mean;
    std::vector<double> stddev; // clamped from below by std_floor
    double std_floor = 1e-8;
};

// Population statistics over every aircraft state in the training situations.
Normalizer fit_normalizer(std::span<const AirspaceSituation> training,
                          const FeatureConfig& config);

// Flattened feature vector with the first normalized_dim() entries z-scored;
// the remaining dims are bit-identical to the raw state.
std::vector<double> apply_normalizer(const Normalizer& norm, const AircraftState& s,
                                     const FeatureConfig& config);

// [N_t, feature_dim] matrix of normalized states.
Tensor feature_matrix(const AirspaceSituation& situation, const Normalizer& norm,
                      const FeatureConfig& config);

std::string normalizer_to_json(const Normalizer& norm);
Normalizer normalizer_from_json(const std::string& text);

} // namespace aero
