#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aerosense/error.hpp"

namespace aero {

inline constexpr double kEarthRadiusM = 6371000.0;

struct GeoPoint {
    double latitude_deg = 0.0;
    double longitude_deg = 0.0;
    double altitude_m = 0.0;

    bool valid() const {
        return latitude_deg >= -90.0 && latitude_deg <= 90.0 && longitude_deg >= -180.0 &&
               longitude_deg <= 180.0 && altitude_m >= -500.0;
    }
};

// Local tangent-plane frame: x=east, y=north, z=up, meters.
struct EnuPoint {
    double east = 0.0;
    double north = 0.0;
    double up = 0.0;
};

inline EnuPoint operator+(const EnuPoint& a, const EnuPoint& b) {
    return {a.east + b.east, a.north + b.north, a.up + b.up};
}
inline EnuPoint operator-(const EnuPoint& a, const EnuPoint& b) {
    return {a.east - b.east, a.north - b.north, a.up - b.up};
}
inline EnuPoint operator*(double k, const EnuPoint& a) {
    return {k * a.east, k * a.north, k * a.up};
}
double dot(const EnuPoint& a, const EnuPoint& b);
double norm(const EnuPoint& a);

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

// Polygonal prism: simple CCW footprint in ENU meters extruded over [floor_m, ceiling_m].
struct Region {
    std::string name;
    std::vector<Vec2> footprint;
    double floor_m = 0.0;
    double ceiling_m = 0.0;
};

struct AirspaceGeometry {
    GeoPoint origin;
    Region ap;
    Region ar;
    double scope_margin_m = 100000.0;
};

// Equirectangular projection about `origin`. Adequate below ~300 km from the
// anchor, which covers a terminal area plus its scope margin.
EnuPoint geo_to_enu(const GeoPoint& p, const GeoPoint& origin);
GeoPoint enu_to_geo(const EnuPoint& e, const GeoPoint& origin);

// Prism membership; points on the surface count as inside.
bool contains(const Region& region, const EnuPoint& p);

// Minimum 3-D Euclidean distance from p to the prism surface (walls, floor, ceiling).
double boundary_distance(const Region& region, const EnuPoint& p);

// Signed distance to the boundary of AP union AR: negative inside, positive outside.
// The union boundary is taken as each prism's surface minus the parts that lie
// strictly inside the other prism.
double signed_distance(const AirspaceGeometry& geometry, const EnuPoint& p);

// True iff signed_distance(p) <= scope_margin_m (inside points always qualify).
bool in_combined_scope(const AirspaceGeometry& geometry, const EnuPoint& p);

// Area-weighted footprint centroid at mid-band altitude.
EnuPoint region_center(const Region& region);

// Cosine between velocity and the vector toward the region center, in [-1, 1].
// eps regularizes zero velocity / zero offset.
double approach_factor(const EnuPoint& p, const EnuPoint& velocity, const Region& region,
                       double eps = 1e-8);

// Normalizes footprint orientation to CCW and checks:
// simple polygons, floor < ceiling, AP/AR footprints disjoint or nested.
void validate_geometry(AirspaceGeometry& g);

// Geometry JSON (schema "geometry_version": 1; footprints in degrees, converted
// to ENU at load). Throws GeometryError on schema or validity problems.
AirspaceGeometry load_geometry(const std::string& path);
std::string geometry_to_json(const AirspaceGeometry& g);
AirspaceGeometry geometry_from_json(const std::string& text);
void save_geometry(const AirspaceGeometry& g, const std::string& path);

// Stable hash of the geometry definition, stored in checkpoints to detect
// train/serve skew.
std::string geometry_fingerprint(const AirspaceGeometry& g);

// Built-in terminal-area geometry used by the simulator defaults and examples.
AirspaceGeometry make_demo_geometry();

namespace poly {
// 2-D helpers shared by geometry and the simulator.
double signed_area(const std::vector<Vec2>& pts);
bool point_in_polygon(const std::vector<Vec2>& pts, const Vec2& q); // boundary-inclusive
double distance_to_boundary(const std::vector<Vec2>& pts, const Vec2& q);
Vec2 centroid(const std::vector<Vec2>& pts);
bool is_simple(const std::vector<Vec2>& pts);
} // namespace poly

} // namespace aero
