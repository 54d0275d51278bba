#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "aerosense/geometry.hpp"

namespace aero {

// One timestamped surveillance observation of one aircraft.
struct TrajectoryRecord {
    int64_t timestamp = 0; // Unix seconds, UTC; strictly positive
    std::string aircraft_id;
    GeoPoint position;
    double ground_speed_mps = 0.0;   // >= 0
    double vertical_speed_mps = 0.0; // signed, up positive
    double heading_deg = 0.0;        // [0, 360), 0 = north, 90 = east
    double dialed_speed_mps = std::numeric_limits<double>::quiet_NaN();  // NaN when absent
    double dialed_altitude_m = std::numeric_limits<double>::quiet_NaN(); // NaN when absent
    std::string origin;
    std::string destination;
};

inline constexpr const char* kTrajectoryCsvHeader =
    "timestamp,aircraft_id,latitude,longitude,altitude_m,ground_speed_mps,vertical_speed_mps,"
    "heading_deg,dialed_speed_mps,dialed_altitude_m,origin,destination";

// Per-row diagnostic; rows that fail validation are recorded, not kept.
struct RowParseError {
    size_t row = 0; // 1-based data row index (header not counted)
    std::string column;
    std::string reason;
};

struct ParseReport {
    std::vector<TrajectoryRecord> records; // sorted by (timestamp, aircraft_id)
    std::vector<RowParseError> row_errors;
    size_t total_rows = 0;
};

// RFC-4180 CSV with the exact header above. Throws MalformedHeader, and
// ErrorBudgetExceeded when more than `error_budget` of the data rows fail.
ParseReport parse_trajectory_stream(std::istream& in, double error_budget = 0.001);
ParseReport parse_trajectory_file(const std::string& path, double error_budget = 0.001);

// Doubles are written with 17 significant digits so parse(write(x)) == x.
void write_trajectory_csv(std::ostream& out, std::span<const TrajectoryRecord> records);

struct SnapshotEntry {
    TrajectoryRecord record;
    int64_t age_s = 0; // snapshot time minus record timestamp
};

// Forward-filled view of the traffic at one instant.
struct Snapshot {
    int64_t time = 0;
    std::vector<SnapshotEntry> aircraft; // unique ids, sorted by aircraft_id
};

// Latest record per aircraft with timestamp <= t and age <= staleness_limit_s.
// Aircraft whose newest record is older than the limit are treated as departed.
Snapshot build_snapshot(std::span<const TrajectoryRecord> records, int64_t t,
                        int64_t staleness_limit_s);

// Single forward sweep for monotone snapshot times; equivalent to
// build_snapshot at every queried t.
class SnapshotCursor {
public:
    explicit SnapshotCursor(std::span<const TrajectoryRecord> records);
    Snapshot advance_to(int64_t t, int64_t staleness_limit_s);

private:
    std::span<const TrajectoryRecord> records_;
    size_t next_ = 0;
    int64_t last_t_ = std::numeric_limits<int64_t>::min();
    std::unordered_map<std::string, const TrajectoryRecord*> latest_;
};

struct FlowLabel {
    int64_t query_time = 0;
    int64_t horizon_s = 0;
    int y_ap = 0;
    int y_ar = 0;
};

// Distinct aircraft observed inside each region during (t, t + horizon].
// An aircraft crossing a region repeatedly counts once; an aircraft seen in
// both regions contributes to both counts.
FlowLabel label_flow(std::span<const TrajectoryRecord> records, const AirspaceGeometry& geometry,
                     int64_t t, int64_t horizon_s);

struct LabeledSample {
    Snapshot snapshot;
    FlowLabel label;
};

struct SplitRatios {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

struct DatasetSplit {
    std::vector<LabeledSample> train;
    std::vector<LabeledSample> val;
    std::vector<LabeledSample> test;
};

// Contiguous chronological prefixes: floor(train*N), floor(val*N), remainder.
DatasetSplit chronological_split(std::vector<LabeledSample> samples, const SplitRatios& ratios);

// Arithmetic grid t_start, t_start + interval, ... <= t_end - horizon.
std::vector<int64_t> enumerate_sample_times(int64_t interval_s, int64_t t_start, int64_t t_end,
                                            int64_t horizon_s);

// JSONL: one {"time", "aircraft": [...], "label": {...}} object per line.
std::string labeled_sample_to_json(const LabeledSample& sample);
LabeledSample labeled_sample_from_json(const std::string& line);
void write_labeled_samples(std::ostream& out, std::span<const LabeledSample> samples);
std::vector<LabeledSample> read_labeled_samples(std::istream& in);
std::vector<LabeledSample> read_labeled_samples_file(const std::string& path);
void write_labeled_samples_file(const std::string& path, std::span<const LabeledSample> samples);

} // namespace aero
