#include "aerosense/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "json.hpp"

namespace aero {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kOnBoundaryTolM = 1e-9;
constexpr double kInteriorTolM = 1e-6;

double seg_distance2(const Vec2& a, const Vec2& b, const Vec2& q) {
    const double vx = b.x - a.x, vy = b.y - a.y;
    const double wx = q.x - a.x, wy = q.y - a.y;
    const double vv = vx * vx + vy * vy;
    double t = vv > 0.0 ? (wx * vx + wy * vy) / vv : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = wx - t * vx, dy = wy - t * vy;
    return dx * dx + dy * dy;
}

int orientation(const Vec2& a, const Vec2& b, const Vec2& c) {
    const double v = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    if (v > 0) return 1;
    if (v < 0) return -1;
    return 0;
}

bool on_segment(const Vec2& a, const Vec2& b, const Vec2& q) {
    return std::min(a.x, b.x) <= q.x && q.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= q.y &&
           q.y <= std::max(a.y, b.y);
}

bool segments_intersect(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d) {
    const int o1 = orientation(a, b, c);
    const int o2 = orientation(a, b, d);
    const int o3 = orientation(c, d, a);
    const int o4 = orientation(c, d, b);
    if (o1 != o2 && o3 != o4) return true;
    if (o1 == 0 && on_segment(a, b, c)) return true;
    if (o2 == 0 && on_segment(a, b, d)) return true;
    if (o3 == 0 && on_segment(c, d, a)) return true;
    if (o4 == 0 && on_segment(c, d, b)) return true;
    return false;
}

bool strictly_interior(const Region& r, const EnuPoint& p) {
    return contains(r, p) && boundary_distance(r, p) > kInteriorTolM;
}

// One planar patch of a prism surface: a wall rectangle or a horizontal face.
struct Piece {
    enum class Kind { wall, face } kind;
    // wall: segment a->b extruded over [zlo, zhi]
    Vec2 a, b;
    double zlo = 0.0, zhi = 0.0;
    // face: polygon at height z with bounding box [lo, hi]
    const std::vector<Vec2>* footprint = nullptr;
    double z = 0.0;
    Vec2 lo, hi;
};

std::vector<Piece> surface_pieces(const Region& r) {
    std::vector<Piece> out;
    const size_t n = r.footprint.size();
    Vec2 lo{std::numeric_limits<double>::max(), std::numeric_limits<double>::max()};
    Vec2 hi{std::numeric_limits<double>::lowest(), std::numeric_limits<double>::lowest()};
    for (size_t i = 0; i < n; ++i) {
        Piece w;
        w.kind = Piece::Kind::wall;
        w.a = r.footprint[i];
        w.b = r.footprint[(i + 1) % n];
        w.zlo = r.floor_m;
        w.zhi = r.ceiling_m;
        out.push_back(w);
        lo.x = std::min(lo.x, w.a.x);
        lo.y = std::min(lo.y, w.a.y);
        hi.x = std::max(hi.x, w.a.x);
        hi.y = std::max(hi.y, w.a.y);
    }
    for (double z : {r.floor_m, r.ceiling_m}) {
        Piece f;
        f.kind = Piece::Kind::face;
        f.footprint = &r.footprint;
        f.z = z;
        f.lo = lo;
        f.hi = hi;
        out.push_back(f);
    }
    return out;
}

EnuPoint piece_point(const Piece& pc, double u, double v) {
    if (pc.kind == Piece::Kind::wall) {
        return {pc.a.x + u * (pc.b.x - pc.a.x), pc.a.y + u * (pc.b.y - pc.a.y),
                pc.zlo + v * (pc.zhi - pc.zlo)};
    }
    return {pc.lo.x + u * (pc.hi.x - pc.lo.x), pc.lo.y + u * (pc.hi.y - pc.lo.y), pc.z};
}

bool piece_point_valid(const Piece& pc, const EnuPoint& q, const Region& other) {
    if (pc.kind == Piece::Kind::face &&
        !poly::point_in_polygon(*pc.footprint, {q.east, q.north})) {
        return false;
    }
    return !strictly_interior(other, q);
}

EnuPoint nearest_on_piece(const Piece& pc, const EnuPoint& p) {
    if (pc.kind == Piece::Kind::wall) {
        const Vec2 q2{p.east, p.north};
        const double vx = pc.b.x - pc.a.x, vy = pc.b.y - pc.a.y;
        const double vv = vx * vx + vy * vy;
        double t = vv > 0.0 ? ((q2.x - pc.a.x) * vx + (q2.y - pc.a.y) * vy) / vv : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        return {pc.a.x + t * vx, pc.a.y + t * vy, std::clamp(p.up, pc.zlo, pc.zhi)};
    }
    const Vec2 q2{p.east, p.north};
    if (poly::point_in_polygon(*pc.footprint, q2)) return {p.east, p.north, pc.z};
    const auto& pts = *pc.footprint;
    double best = std::numeric_limits<double>::max();
    Vec2 bq{};
    for (size_t i = 0; i < pts.size(); ++i) {
        const Vec2& a = pts[i];
        const Vec2& b = pts[(i + 1) % pts.size()];
        const double vx = b.x - a.x, vy = b.y - a.y;
        const double vv = vx * vx + vy * vy;
        double t = vv > 0.0 ? ((q2.x - a.x) * vx + (q2.y - a.y) * vy) / vv : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const Vec2 c{a.x + t * vx, a.y + t * vy};
        const double d2 = (c.x - q2.x) * (c.x - q2.x) + (c.y - q2.y) * (c.y - q2.y);
        if (d2 < best) {
            best = d2;
            bq = c;
        }
    }
    return {bq.x, bq.y, pc.z};
}

// Multi-start shrinking grid search over the piece parameter square, keeping
// only points outside the interior of `other`. Used when the unconstrained
// nearest point is swallowed by the other prism.
double constrained_piece_distance(const Piece& pc, const EnuPoint& p, const Region& other) {
    constexpr int kGrid = 33;
    constexpr int kRounds = 36;
    double ulo = 0.0, uhi = 1.0, vlo = 0.0, vhi = 1.0;
    double best = std::numeric_limits<double>::max();
    double bu = -1.0, bv = -1.0;
    for (int round = 0; round < kRounds; ++round) {
        double round_best = std::numeric_limits<double>::max();
        double ru = bu, rv = bv;
        for (int i = 0; i < kGrid; ++i) {
            for (int j = 0; j < kGrid; ++j) {
                const double u = ulo + (uhi - ulo) * i / (kGrid - 1);
                const double v = vlo + (vhi - vlo) * j / (kGrid - 1);
                const EnuPoint q = piece_point(pc, u, v);
                if (!piece_point_valid(pc, q, other)) continue;
                const double d = norm(q - p);
                if (d < round_best) {
                    round_best = d;
                    ru = u;
                    rv = v;
                }
            }
        }
        if (round_best == std::numeric_limits<double>::max()) {
            return best; // whole window excluded
        }
        if (round_best < best) {
            best = round_best;
            bu = ru;
            bv = rv;
        }
        const double du = (uhi - ulo) * 2.0 / (kGrid - 1);
        const double dv = (vhi - vlo) * 2.0 / (kGrid - 1);
        ulo = std::max(0.0, bu - du);
        uhi = std::min(1.0, bu + du);
        vlo = std::max(0.0, bv - dv);
        vhi = std::min(1.0, bv + dv);
        if (du < 1e-12 && dv < 1e-12) break;
    }
    return best;
}

// Distance from p to the surface of `a` restricted to points not strictly
// interior to `b`.
double restricted_surface_distance(const Region& a, const Region& b, const EnuPoint& p) {
    double best = std::numeric_limits<double>::max();
    for (const Piece& pc : surface_pieces(a)) {
        const EnuPoint q = nearest_on_piece(pc, p);
        if (!strictly_interior(b, q)) {
            best = std::min(best, norm(q - p));
        } else {
            best = std::min(best, constrained_piece_distance(pc, p, b));
        }
    }
    return best;
}

} // namespace

double dot(const EnuPoint& a, const EnuPoint& b) {
    return a.east * b.east + a.north * b.north + a.up * b.up;
}

double norm(const EnuPoint& a) { return std::sqrt(dot(a, a)); }

EnuPoint geo_to_enu(const GeoPoint& p, const GeoPoint& origin) {
    const double dlat = (p.latitude_deg - origin.latitude_deg) * kDegToRad;
    const double dlon = (p.longitude_deg - origin.longitude_deg) * kDegToRad;
    return {kEarthRadiusM * std::cos(origin.latitude_deg * kDegToRad) * dlon,
            kEarthRadiusM * dlat, p.altitude_m - origin.altitude_m};
}

GeoPoint enu_to_geo(const EnuPoint& e, const GeoPoint& origin) {
    GeoPoint p;
    p.latitude_deg = origin.latitude_deg + e.north / kEarthRadiusM / kDegToRad;
    p.longitude_deg = origin.longitude_deg +
                      e.east / (kEarthRadiusM * std::cos(origin.latitude_deg * kDegToRad)) / kDegToRad;
    p.altitude_m = origin.altitude_m + e.up;
    return p;
}

bool contains(const Region& region, const EnuPoint& p) {
    if (p.up < region.floor_m || p.up > region.ceiling_m) return false;
    return poly::point_in_polygon(region.footprint, {p.east, p.north});
}

double boundary_distance(const Region& region, const EnuPoint& p) {
    const Vec2 q{p.east, p.north};
    const double dpoly = poly::distance_to_boundary(region.footprint, q);
    const bool inside2d = poly::point_in_polygon(region.footprint, q);
    if (inside2d && p.up >= region.floor_m && p.up <= region.ceiling_m) {
        return std::min({dpoly, p.up - region.floor_m, region.ceiling_m - p.up});
    }
    const double dxy = inside2d ? 0.0 : dpoly;
    double dz = 0.0;
    if (p.up > region.ceiling_m) dz = p.up - region.ceiling_m;
    else if (p.up < region.floor_m) dz = region.floor_m - p.up;
    return std::hypot(dxy, dz);
}

double signed_distance(const AirspaceGeometry& geometry, const EnuPoint& p) {
    const bool inside = contains(geometry.ap, p) || contains(geometry.ar, p);
    const double d = std::min(restricted_surface_distance(geometry.ap, geometry.ar, p),
                              restricted_surface_distance(geometry.ar, geometry.ap, p));
    return inside ? -d : d;
}

bool in_combined_scope(const AirspaceGeometry& geometry, const EnuPoint& p) {
    if (contains(geometry.ap, p) || contains(geometry.ar, p)) return true;
    // Outside the union the restricted and plain surface distances coincide.
    const double d = std::min(boundary_distance(geometry.ap, p), boundary_distance(geometry.ar, p));
    return d <= geometry.scope_margin_m;
}

EnuPoint region_center(const Region& region) {
    const Vec2 c = poly::centroid(region.footprint);
    return {c.x, c.y, 0.5 * (region.floor_m + region.ceiling_m)};
}

double approach_factor(const EnuPoint& p, const EnuPoint& velocity, const Region& region,
                       double eps) {
    const EnuPoint rc = region_center(region) - p;
    return dot(velocity, rc) / (norm(velocity) * norm(rc) + eps);
}

namespace poly {

double signed_area(const std::vector<Vec2>& pts) {
    double s = 0.0;
    for (size_t i = 0; i < pts.size(); ++i) {
        const Vec2& a = pts[i];
        const Vec2& b = pts[(i + 1) % pts.size()];
        s += a.x * b.y - b.x * a.y;
    }
    return 0.5 * s;
}

bool point_in_polygon(const std::vector<Vec2>& pts, const Vec2& q) {
    const size_t n = pts.size();
    // Boundary points count as inside.
    for (size_t i = 0; i < n; ++i) {
        if (seg_distance2(pts[i], pts[(i + 1) % n], q) <= kOnBoundaryTolM * kOnBoundaryTolM) {
            return true;
        }
    }
    bool inside = false;
    for (size_t i = 0, j = n - 1; i < n; j = i++) {
        const Vec2& a = pts[i];
        const Vec2& b = pts[j];
        if ((a.y > q.y) != (b.y > q.y)) {
            const double x = a.x + (q.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if (q.x < x) inside = !inside;
        }
    }
    return inside;
}

double distance_to_boundary(const std::vector<Vec2>& pts, const Vec2& q) {
    double best = std::numeric_limits<double>::max();
    for (size_t i = 0; i < pts.size(); ++i) {
        best = std::min(best, seg_distance2(pts[i], pts[(i + 1) % pts.size()], q));
    }
    return std::sqrt(best);
}

Vec2 centroid(const std::vector<Vec2>& pts) {
    double a = 0.0, cx = 0.0, cy = 0.0;
    for (size_t i = 0; i < pts.size(); ++i) {
        const Vec2& p = pts[i];
        const Vec2& r = pts[(i + 1) % pts.size()];
        const double cross = p.x * r.y - r.x * p.y;
        a += cross;
        cx += (p.x + r.x) * cross;
        cy += (p.y + r.y) * cross;
    }
    if (std::abs(a) < 1e-12) { // degenerate: fall back to vertex mean
        Vec2 m{};
        for (const Vec2& p : pts) {
            m.x += p.x;
            m.y += p.y;
        }
        m.x /= double(pts.size());
        m.y /= double(pts.size());
        return m;
    }
    return {cx / (3.0 * a), cy / (3.0 * a)};
}

bool is_simple(const std::vector<Vec2>& pts) {
    const size_t n = pts.size();
    if (n < 3) return false;
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i + 1; j < n; ++j) {
            // skip segments sharing an endpoint
            if (j == i || (j + 1) % n == i || (i + 1) % n == j) continue;
            if (segments_intersect(pts[i], pts[(i + 1) % n], pts[j], pts[(j + 1) % n])) {
                return false;
            }
        }
    }
    return true;
}

} // namespace poly

namespace {

void validate_region(Region& r) {
    if (r.footprint.size() < 3) {
        throw GeometryError("region '" + r.name + "' needs at least 3 footprint vertices");
    }
    if (!(r.floor_m < r.ceiling_m)) {
        throw GeometryError("region '" + r.name + "' requires floor < ceiling");
    }
    if (!poly::is_simple(r.footprint)) {
        throw GeometryError("region '" + r.name + "' footprint is self-intersecting");
    }
    if (poly::signed_area(r.footprint) < 0.0) {
        std::reverse(r.footprint.begin(), r.footprint.end());
    }
}

bool footprint_inside(const std::vector<Vec2>& inner, const std::vector<Vec2>& outer) {
    for (const Vec2& v : inner) {
        if (!poly::point_in_polygon(outer, v)) return false;
    }
    return true;
}

bool footprint_outside(const std::vector<Vec2>& a, const std::vector<Vec2>& b) {
    for (const Vec2& v : a) {
        if (poly::point_in_polygon(b, v)) return false;
    }
    return true;
}

} // namespace

void validate_geometry(AirspaceGeometry& g) {
    validate_region(g.ap);
    validate_region(g.ar);
    if (!(g.scope_margin_m > 0.0)) {
        throw GeometryError("scope_margin_m must be positive");
    }
    if (!g.origin.valid()) {
        throw GeometryError("origin is not a valid geographic point");
    }
    const auto& fa = g.ap.footprint;
    const auto& fb = g.ar.footprint;
    for (size_t i = 0; i < fa.size(); ++i) {
        for (size_t j = 0; j < fb.size(); ++j) {
            if (segments_intersect(fa[i], fa[(i + 1) % fa.size()], fb[j],
                                   fb[(j + 1) % fb.size()])) {
                throw GeometryError("AP and AR footprint edges intersect; footprints must be "
                                    "disjoint or nested");
            }
        }
    }
    const bool nested = footprint_inside(fa, fb) || footprint_inside(fb, fa);
    const bool disjoint = footprint_outside(fa, fb) && footprint_outside(fb, fa);
    if (!nested && !disjoint) {
        throw GeometryError("AP and AR footprints must be disjoint or nested");
    }
}

namespace {

nlohmann::json region_to_json(const Region& r, const GeoPoint& origin) {
    nlohmann::json j;
    nlohmann::json verts = nlohmann::json::array();
    for (const Vec2& v : r.footprint) {
        const GeoPoint g = enu_to_geo({v.x, v.y, 0.0}, origin);
        verts.push_back({g.latitude_deg, g.longitude_deg});
    }
    j["footprint_deg"] = verts;
    j["floor_m"] = r.floor_m;
    j["ceiling_m"] = r.ceiling_m;
    return j;
}

Region region_from_json(const nlohmann::json& j, const std::string& name, const GeoPoint& origin) {
    Region r;
    r.name = name;
    for (const auto& v : j.at("footprint_deg")) {
        if (!v.is_array() || v.size() != 2) {
            throw GeometryError("footprint vertices must be [latitude_deg, longitude_deg] pairs");
        }
        const GeoPoint g{v[0].get<double>(), v[1].get<double>(), 0.0};
        if (!g.valid()) throw GeometryError("footprint vertex out of geographic range");
        const EnuPoint e = geo_to_enu(g, origin);
        r.footprint.push_back({e.east, e.north});
    }
    r.floor_m = j.at("floor_m").get<double>();
    r.ceiling_m = j.at("ceiling_m").get<double>();
    return r;
}

} // namespace

std::string geometry_to_json(const AirspaceGeometry& g) {
    nlohmann::json j;
    j["geometry_version"] = 1;
    j["origin"] = {{"latitude_deg", g.origin.latitude_deg},
                   {"longitude_deg", g.origin.longitude_deg},
                   {"altitude_m", g.origin.altitude_m}};
    j["scope_margin_m"] = g.scope_margin_m;
    j["ap"] = region_to_json(g.ap, g.origin);
    j["ar"] = region_to_json(g.ar, g.origin);
    return j.dump(2);
}

AirspaceGeometry geometry_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw GeometryError(std::string("geometry JSON parse failure: ") + e.what());
    }
    try {
        if (j.at("geometry_version").get<int>() != 1) {
            throw GeometryError("unsupported geometry_version");
        }
        AirspaceGeometry g;
        const auto& o = j.at("origin");
        g.origin = {o.at("latitude_deg").get<double>(), o.at("longitude_deg").get<double>(),
                    o.value("altitude_m", 0.0)};
        g.scope_margin_m = j.value("scope_margin_m", 100000.0);
        g.ap = region_from_json(j.at("ap"), "AP", g.origin);
        g.ar = region_from_json(j.at("ar"), "AR", g.origin);
        validate_geometry(g);
        return g;
    } catch (const nlohmann::json::exception& e) {
        throw GeometryError(std::string("geometry JSON schema failure: ") + e.what());
    }
}

AirspaceGeometry load_geometry(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw GeometryError("cannot open geometry file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return geometry_from_json(ss.str());
}

void save_geometry(const AirspaceGeometry& g, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw GeometryError("cannot write geometry file: " + path);
    out << geometry_to_json(g) << "\n";
}

std::string geometry_fingerprint(const AirspaceGeometry& g) {
    std::string canon;
    char buf[64];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g,", v);
        canon += buf;
    };
    put(g.origin.latitude_deg);
    put(g.origin.longitude_deg);
    put(g.origin.altitude_m);
    put(g.scope_margin_m);
    for (const Region* r : {&g.ap, &g.ar}) {
        put(r->floor_m);
        put(r->ceiling_m);
        for (const Vec2& v : r->footprint) {
            put(v.x);
            put(v.y);
        }
        canon += ";";
    }
    // FNV-1a 64-bit
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : canon) {
        h ^= c;
        h *= 1099511628211ull;
    }
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

AirspaceGeometry make_demo_geometry() {
    AirspaceGeometry g;
    g.origin = {36.0, 120.0, 0.0};
    g.scope_margin_m = 100000.0;

    auto ring = [](double radius_m, int sides, double phase) {
        std::vector<Vec2> pts;
        for (int i = 0; i < sides; ++i) {
            const double a = phase + 2.0 * std::numbers::pi * i / sides;
            pts.push_back({radius_m * std::cos(a), radius_m * std::sin(a)});
        }
        return pts;
    };

    g.ap.name = "AP";
    g.ap.footprint = ring(25000.0, 6, 0.0);
    g.ap.floor_m = 0.0;
    g.ap.ceiling_m = 6000.0;

    g.ar.name = "AR";
    g.ar.footprint = ring(70000.0, 8, std::numbers::pi / 8.0);
    // AR reaches below the AP ceiling so the two prisms overlap rather than
    // meeting at a shared plane, which keeps the union boundary well defined.
    g.ar.floor_m = 5500.0;
    g.ar.ceiling_m = 15000.0;

    validate_geometry(g);
    return g;
}

} // namespace aero
