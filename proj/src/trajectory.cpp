#include "aerosense/trajectory.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

namespace aero {

namespace {

// RFC-4180 row reader: handles quoted fields, embedded commas/quotes/newlines.
bool read_csv_row(std::istream& in, std::vector<std::string>& fields) {
    fields.clear();
    std::string field;
    bool in_quotes = false;
    bool any = false;
    int c;
    while ((c = in.get()) != EOF) {
        any = true;
        if (in_quotes) {
            if (c == '"') {
                if (in.peek() == '"') {
                    field.push_back('"');
                    in.get();
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(char(c));
            }
        } else if (c == '"') {
            in_quotes = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else if (c == '\n') {
            break;
        } else if (c == '\r') {
            if (in.peek() == '\n') in.get();
            break;
        } else {
            field.push_back(char(c));
        }
    }
    if (!any) return false;
    fields.push_back(std::move(field));
    return true;
}

bool parse_double(const std::string& s, double& out) {
    const char* b = s.data();
    const char* e = b + s.size();
    const auto r = std::from_chars(b, e, out);
    return r.ec == std::errc() && r.ptr == e && std::isfinite(out);
}

bool parse_int64(const std::string& s, int64_t& out) {
    const char* b = s.data();
    const char* e = b + s.size();
    const auto r = std::from_chars(b, e, out);
    return r.ec == std::errc() && r.ptr == e;
}

constexpr size_t kColumnCount = 12;

const char* const kColumnNames[kColumnCount] = {
    "timestamp",        "aircraft_id",       "latitude",           "longitude",
    "altitude_m",       "ground_speed_mps",  "vertical_speed_mps", "heading_deg",
    "dialed_speed_mps", "dialed_altitude_m", "origin",             "destination"};

std::string fmt_double(double v) {
    if (std::isnan(v)) return "";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

bool needs_quoting(const std::string& s) {
    return s.find_first_of(",\"\r\n") != std::string::npos;
}

void write_field(std::ostream& out, const std::string& s) {
    if (!needs_quoting(s)) {
        out << s;
        return;
    }
    out << '"';
    for (char c : s) {
        if (c == '"') out << "\"\"";
        else out << c;
    }
    out << '"';
}

} // namespace

ParseReport parse_trajectory_stream(std::istream& in, double error_budget) {
    ParseReport report;
    std::vector<std::string> fields;
    if (!read_csv_row(in, fields)) {
        throw MalformedHeader("empty input, expected trajectory CSV header");
    }
    {
        std::vector<std::string> expected;
        for (const char* c : kColumnNames) expected.emplace_back(c);
        if (fields != expected) {
            throw MalformedHeader("header mismatch; expected: " +
                                  std::string(kTrajectoryCsvHeader));
        }
    }

    size_t row_index = 0;
    while (read_csv_row(in, fields)) {
        ++row_index;
        if (fields.size() == 1 && fields[0].empty()) {
            --row_index; // trailing blank line
            continue;
        }
        ++report.total_rows;
        auto fail = [&](const char* column, std::string reason) {
            report.row_errors.push_back({row_index, column, std::move(reason)});
        };
        if (fields.size() != kColumnCount) {
            fail("", "expected 12 fields, got " + std::to_string(fields.size()));
            continue;
        }
        TrajectoryRecord rec;
        if (!parse_int64(fields[0], rec.timestamp) || rec.timestamp <= 0) {
            fail("timestamp", "not a positive integer: '" + fields[0] + "'");
            continue;
        }
        rec.aircraft_id = fields[1];
        if (rec.aircraft_id.empty()) {
            fail("aircraft_id", "empty");
            continue;
        }
        double lat, lon, alt;
        if (!parse_double(fields[2], lat)) {
            fail("latitude", "not a number: '" + fields[2] + "'");
            continue;
        }
        if (!parse_double(fields[3], lon)) {
            fail("longitude", "not a number: '" + fields[3] + "'");
            continue;
        }
        if (!parse_double(fields[4], alt)) {
            fail("altitude_m", "not a number: '" + fields[4] + "'");
            continue;
        }
        rec.position = {lat, lon, alt};
        if (!rec.position.valid()) {
            fail("latitude", "position out of range");
            continue;
        }
        if (!parse_double(fields[5], rec.ground_speed_mps) || rec.ground_speed_mps < 0.0) {
            fail("ground_speed_mps", "must be a non-negative number: '" + fields[5] + "'");
            continue;
        }
        if (!parse_double(fields[6], rec.vertical_speed_mps)) {
            fail("vertical_speed_mps", "not a number: '" + fields[6] + "'");
            continue;
        }
        if (!parse_double(fields[7], rec.heading_deg) || rec.heading_deg < 0.0 ||
            rec.heading_deg >= 360.0) {
            fail("heading_deg", "must be in [0, 360): '" + fields[7] + "'");
            continue;
        }
        if (!fields[8].empty() && !parse_double(fields[8], rec.dialed_speed_mps)) {
            fail("dialed_speed_mps", "not a number: '" + fields[8] + "'");
            continue;
        }
        if (!fields[9].empty() && !parse_double(fields[9], rec.dialed_altitude_m)) {
            fail("dialed_altitude_m", "not a number: '" + fields[9] + "'");
            continue;
        }
        rec.origin = fields[10];
        rec.destination = fields[11];
        report.records.push_back(std::move(rec));
    }

    if (report.total_rows > 0 &&
        double(report.row_errors.size()) > error_budget * double(report.total_rows)) {
        std::string msg = std::to_string(report.row_errors.size()) + " of " +
                          std::to_string(report.total_rows) + " rows malformed (budget " +
                          std::to_string(error_budget * 100.0) + "%); first: row " +
                          std::to_string(report.row_errors.front().row) + " column '" +
                          report.row_errors.front().column + "': " +
                          report.row_errors.front().reason;
        throw ErrorBudgetExceeded(msg);
    }

    std::stable_sort(report.records.begin(), report.records.end(),
                     [](const TrajectoryRecord& a, const TrajectoryRecord& b) {
                         if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
                         return a.aircraft_id < b.aircraft_id;
                     });
    return report;
}

ParseReport parse_trajectory_file(const std::string& path, double error_budget) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidConfig("cannot open trajectory file: " + path);
    return parse_trajectory_stream(in, error_budget);
}

void write_trajectory_csv(std::ostream& out, std::span<const TrajectoryRecord> records) {
    out << kTrajectoryCsvHeader << "\n";
    for (const TrajectoryRecord& r : records) {
        out << r.timestamp << ',';
        write_field(out, r.aircraft_id);
        out << ',' << fmt_double(r.position.latitude_deg) << ','
            << fmt_double(r.position.longitude_deg) << ',' << fmt_double(r.position.altitude_m)
            << ',' << fmt_double(r.ground_speed_mps) << ',' << fmt_double(r.vertical_speed_mps)
            << ',' << fmt_double(r.heading_deg) << ',' << fmt_double(r.dialed_speed_mps) << ','
            << fmt_double(r.dialed_altitude_m) << ',';
        write_field(out, r.origin);
        out << ',';
        write_field(out, r.destination);
        out << '\n';
    }
}

Snapshot build_snapshot(std::span<const TrajectoryRecord> records, int64_t t,
                        int64_t staleness_limit_s) {
    SnapshotCursor cursor(records);
    return cursor.advance_to(t, staleness_limit_s);
}

SnapshotCursor::SnapshotCursor(std::span<const TrajectoryRecord> records) : records_(records) {}

Snapshot SnapshotCursor::advance_to(int64_t t, int64_t staleness_limit_s) {
    if (t < last_t_) {
        throw InvalidRange("SnapshotCursor times must be non-decreasing");
    }
    last_t_ = t;
    while (next_ < records_.size() && records_[next_].timestamp <= t) {
        const TrajectoryRecord& r = records_[next_];
        latest_[r.aircraft_id] = &r; // records sorted, so this is the newest so far
        ++next_;
    }
    Snapshot snap;
    snap.time = t;
    for (const auto& [id, rec] : latest_) {
        const int64_t age = t - rec->timestamp;
        if (age <= staleness_limit_s) {
            snap.aircraft.push_back({*rec, age});
        }
    }
    std::sort(snap.aircraft.begin(), snap.aircraft.end(),
              [](const SnapshotEntry& a, const SnapshotEntry& b) {
                  return a.record.aircraft_id < b.record.aircraft_id;
              });
    return snap;
}

FlowLabel label_flow(std::span<const TrajectoryRecord> records, const AirspaceGeometry& geometry,
                     int64_t t, int64_t horizon_s) {
    if (horizon_s <= 0) throw InvalidRange("label horizon must be positive");
    const auto first = std::partition_point(records.begin(), records.end(),
                                            [&](const TrajectoryRecord& r) {
                                                return r.timestamp <= t;
                                            });
    const auto last = std::partition_point(records.begin(), records.end(),
                                           [&](const TrajectoryRecord& r) {
                                               return r.timestamp <= t + horizon_s;
                                           });
    if (first == last && last != records.end()) {
        throw InsufficientCoverage("no records in (" + std::to_string(t) + ", " +
                                   std::to_string(t + horizon_s) +
                                   "] but later records exist; trajectory stream has a gap");
    }
    std::unordered_set<std::string_view> in_ap, in_ar;
    for (auto it = first; it != last; ++it) {
        const bool need_ap = !in_ap.contains(it->aircraft_id);
        const bool need_ar = !in_ar.contains(it->aircraft_id);
        if (!need_ap && !need_ar) continue;
        const EnuPoint p = geo_to_enu(it->position, geometry.origin);
        if (need_ap && contains(geometry.ap, p)) in_ap.insert(it->aircraft_id);
        if (need_ar && contains(geometry.ar, p)) in_ar.insert(it->aircraft_id);
    }
    FlowLabel label;
    label.query_time = t;
    label.horizon_s = horizon_s;
    label.y_ap = int(in_ap.size());
    label.y_ar = int(in_ar.size());
    return label;
}

DatasetSplit chronological_split(std::vector<LabeledSample> samples, const SplitRatios& ratios) {
    if (samples.empty()) throw EmptyDataset("chronological_split needs at least one sample");
    if (!(ratios.train > 0.0) || !(ratios.val > 0.0) || !(ratios.test > 0.0)) {
        throw InvalidRange("split ratios must be positive");
    }
    if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
        throw InvalidRange("split ratios must sum to 1");
    }
    for (size_t i = 1; i < samples.size(); ++i) {
        if (samples[i].label.query_time < samples[i - 1].label.query_time) {
            throw InvalidRange("samples must be sorted by query_time");
        }
    }
    const size_t n = samples.size();
    const size_t n_train = size_t(std::floor(ratios.train * double(n)));
    const size_t n_val = size_t(std::floor(ratios.val * double(n)));
    DatasetSplit split;
    split.train.assign(std::make_move_iterator(samples.begin()),
                       std::make_move_iterator(samples.begin() + n_train));
    split.val.assign(std::make_move_iterator(samples.begin() + n_train),
                     std::make_move_iterator(samples.begin() + n_train + n_val));
    split.test.assign(std::make_move_iterator(samples.begin() + n_train + n_val),
                      std::make_move_iterator(samples.end()));
    return split;
}

std::vector<int64_t> enumerate_sample_times(int64_t interval_s, int64_t t_start, int64_t t_end,
                                            int64_t horizon_s) {
    if (interval_s <= 0) throw InvalidRange("sample interval must be positive");
    if (t_start >= t_end) throw InvalidRange("t_start must be before t_end");
    if (horizon_s < 0) throw InvalidRange("horizon must be non-negative");
    std::vector<int64_t> times;
    for (int64_t t = t_start; t <= t_end - horizon_s; t += interval_s) {
        times.push_back(t);
    }
    return times;
}

namespace {

nlohmann::json record_to_json(const TrajectoryRecord& r) {
    nlohmann::json j;
    j["timestamp"] = r.timestamp;
    j["aircraft_id"] = r.aircraft_id;
    j["latitude"] = r.position.latitude_deg;
    j["longitude"] = r.position.longitude_deg;
    j["altitude_m"] = r.position.altitude_m;
    j["ground_speed_mps"] = r.ground_speed_mps;
    j["vertical_speed_mps"] = r.vertical_speed_mps;
    j["heading_deg"] = r.heading_deg;
    if (!std::isnan(r.dialed_speed_mps)) j["dialed_speed_mps"] = r.dialed_speed_mps;
    if (!std::isnan(r.dialed_altitude_m)) j["dialed_altitude_m"] = r.dialed_altitude_m;
    j["origin"] = r.origin;
    j["destination"] = r.destination;
    return j;
}

TrajectoryRecord record_from_json(const nlohmann::json& j) {
    TrajectoryRecord r;
    r.timestamp = j.at("timestamp").get<int64_t>();
    r.aircraft_id = j.at("aircraft_id").get<std::string>();
    r.position = {j.at("latitude").get<double>(), j.at("longitude").get<double>(),
                  j.at("altitude_m").get<double>()};
    r.ground_speed_mps = j.at("ground_speed_mps").get<double>();
    r.vertical_speed_mps = j.at("vertical_speed_mps").get<double>();
    r.heading_deg = j.at("heading_deg").get<double>();
    r.dialed_speed_mps = j.value("dialed_speed_mps", std::numeric_limits<double>::quiet_NaN());
    r.dialed_altitude_m = j.value("dialed_altitude_m", std::numeric_limits<double>::quiet_NaN());
    r.origin = j.value("origin", "");
    r.destination = j.value("destination", "");
    return r;
}

} // namespace

std::string labeled_sample_to_json(const LabeledSample& sample) {
    nlohmann::json j;
    j["time"] = sample.snapshot.time;
    nlohmann::json aircraft = nlohmann::json::array();
    for (const SnapshotEntry& e : sample.snapshot.aircraft) {
        nlohmann::json a = record_to_json(e.record);
        a["age_s"] = e.age_s;
        aircraft.push_back(std::move(a));
    }
    j["aircraft"] = std::move(aircraft);
    j["label"] = {{"horizon_s", sample.label.horizon_s},
                  {"y_ap", sample.label.y_ap},
                  {"y_ar", sample.label.y_ar}};
    return j.dump();
}

LabeledSample labeled_sample_from_json(const std::string& line) {
    nlohmann::json j = nlohmann::json::parse(line);
    LabeledSample s;
    s.snapshot.time = j.at("time").get<int64_t>();
    for (const auto& a : j.at("aircraft")) {
        SnapshotEntry e;
        e.record = record_from_json(a);
        e.age_s = a.at("age_s").get<int64_t>();
        s.snapshot.aircraft.push_back(std::move(e));
    }
    s.label.query_time = s.snapshot.time;
    s.label.horizon_s = j.at("label").at("horizon_s").get<int64_t>();
    s.label.y_ap = j.at("label").at("y_ap").get<int>();
    s.label.y_ar = j.at("label").at("y_ar").get<int>();
    return s;
}

void write_labeled_samples(std::ostream& out, std::span<const LabeledSample> samples) {
    for (const LabeledSample& s : samples) {
        out << labeled_sample_to_json(s) << "\n";
    }
}

std::vector<LabeledSample> read_labeled_samples(std::istream& in) {
    std::vector<LabeledSample> samples;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        samples.push_back(labeled_sample_from_json(line));
    }
    return samples;
}

std::vector<LabeledSample> read_labeled_samples_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidConfig("cannot open sample file: " + path);
    return read_labeled_samples(in);
}

void write_labeled_samples_file(const std::string& path, std::span<const LabeledSample> samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidConfig("cannot write sample file: " + path);
    write_labeled_samples(out, samples);
}

} // namespace aero
