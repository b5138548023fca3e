#pragma once

#include <algorithm>
#include <cmath>

#include "tbev/world/types.hpp"

// 2-d geometry against oriented footprint rectangles, in double precision.

namespace tbev {

struct OrientedRect {
    double cx, cy, heading, half_len, half_wid;
};

inline OrientedRect footprint_rect(const Vehicle& v, const VehiclePose& p) {
    return {double(p.x), double(p.y), double(p.heading), double(v.length) / 2.0,
            double(v.width) / 2.0};
}

inline bool point_in_rect(double px, double py, const OrientedRect& r) {
    const double dx = px - r.cx, dy = py - r.cy;
    const double c = std::cos(r.heading), s = std::sin(r.heading);
    const double u = dx * c + dy * s;
    const double v = -dx * s + dy * c;
    return std::abs(u) <= r.half_len && std::abs(v) <= r.half_wid;
}

// Solid segment-vs-rectangle test (touching counts): Liang-Barsky clip of
// the segment against the rectangle's own frame.
inline bool segment_intersects_rect(double x0, double y0, double x1, double y1,
                                    const OrientedRect& r) {
    const double c = std::cos(r.heading), s = std::sin(r.heading);
    auto to_local_u = [&](double x, double y) { return (x - r.cx) * c + (y - r.cy) * s; };
    auto to_local_v = [&](double x, double y) { return -(x - r.cx) * s + (y - r.cy) * c; };
    const double u0 = to_local_u(x0, y0), v0 = to_local_v(x0, y0);
    const double u1 = to_local_u(x1, y1), v1 = to_local_v(x1, y1);

    double t0 = 0.0, t1 = 1.0;
    const double du = u1 - u0, dv = v1 - v0;
    const double p[4] = {-du, du, -dv, dv};
    const double q[4] = {u0 + r.half_len, r.half_len - u0, v0 + r.half_wid, r.half_wid - v0};
    for (int i = 0; i < 4; ++i) {
        if (p[i] == 0.0) {
            if (q[i] < 0.0) return false;  // parallel and outside
        } else {
            const double t = q[i] / p[i];
            if (p[i] < 0.0)
                t0 = std::max(t0, t);
            else
                t1 = std::min(t1, t);
            if (t0 > t1) return false;
        }
    }
    return true;
}

// Separating-axis overlap test for two oriented rectangles.
inline bool rects_overlap(const OrientedRect& a, const OrientedRect& b) {
    auto corners = [](const OrientedRect& r, double out[4][2]) {
        const double c = std::cos(r.heading), s = std::sin(r.heading);
        const double ux = c * r.half_len, uy = s * r.half_len;
        const double vx = -s * r.half_wid, vy = c * r.half_wid;
        out[0][0] = r.cx + ux + vx;
        out[0][1] = r.cy + uy + vy;
        out[1][0] = r.cx + ux - vx;
        out[1][1] = r.cy + uy - vy;
        out[2][0] = r.cx - ux - vx;
        out[2][1] = r.cy - uy - vy;
        out[3][0] = r.cx - ux + vx;
        out[3][1] = r.cy - uy + vy;
    };
    double ca[4][2], cb[4][2];
    corners(a, ca);
    corners(b, cb);
    const OrientedRect* rects[2] = {&a, &b};
    for (const OrientedRect* r : rects) {
        const double c = std::cos(r->heading), s = std::sin(r->heading);
        const double axes[2][2] = {{c, s}, {-s, c}};
        for (const auto& ax : axes) {
            double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
            for (int i = 0; i < 4; ++i) {
                const double pa = ca[i][0] * ax[0] + ca[i][1] * ax[1];
                const double pb = cb[i][0] * ax[0] + cb[i][1] * ax[1];
                amin = std::min(amin, pa);
                amax = std::max(amax, pa);
                bmin = std::min(bmin, pb);
                bmax = std::max(bmax, pb);
            }
            if (amax < bmin || bmax < amin) return false;
        }
    }
    return true;
}

inline double dist2(double ax, double ay, double bx, double by) {
    return (ax - bx) * (ax - bx) + (ay - by) * (ay - by);
}

}  // namespace tbev
