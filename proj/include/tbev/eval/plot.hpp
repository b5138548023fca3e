#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tbev/core/serialize.hpp"
#include "tbev/eval/report.hpp"

// Static SVG rendering of IoU-versus-offset curves. Temporal variants draw
// solid, baselines dashed.

namespace tbev {

struct PlotSeries {
    std::vector<double> iou_by_offset;
    bool dashed = false;
};

inline std::string render_curves_svg(const std::map<std::string, PlotSeries>& series,
                                     const std::string& title) {
    const double width = 640, height = 440;
    const double ml = 60, mr = 170, mt = 40, mb = 50;
    const double pw = width - ml - mr, ph = height - mt - mb;
    int horizon = 1;
    for (const auto& [name, s] : series)
        horizon = std::max(horizon, int(s.iou_by_offset.size()) - 1);

    auto sx = [&](double offset) { return ml + pw * offset / double(horizon); };
    auto sy = [&](double iou) { return mt + ph * (1.0 - iou); };

    static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
    std::ostringstream svg;
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
        << "' viewBox='0 0 " << width << " " << height << "'>\n";
    svg << "<rect width='100%' height='100%' fill='white'/>\n";
    svg << "<text x='" << ml << "' y='24' font-family='sans-serif' font-size='15'>" << title
        << "</text>\n";

    // Axes and grid.
    for (int g = 0; g <= 10; ++g) {
        const double y = sy(g / 10.0);
        svg << "<line x1='" << ml << "' y1='" << y << "' x2='" << ml + pw << "' y2='" << y
            << "' stroke='#dddddd'/>\n";
        svg << "<text x='" << ml - 8 << "' y='" << y + 4
            << "' text-anchor='end' font-family='sans-serif' font-size='11'>" << g / 10.0
            << "</text>\n";
    }
    for (int o = 0; o <= horizon; ++o) {
        const double x = sx(o);
        svg << "<line x1='" << x << "' y1='" << mt << "' x2='" << x << "' y2='" << mt + ph
            << "' stroke='#eeeeee'/>\n";
        svg << "<text x='" << x << "' y='" << mt + ph + 18
            << "' text-anchor='middle' font-family='sans-serif' font-size='12'>"
            << (o == 0 ? "t" : "t+" + std::to_string(o)) << "</text>\n";
    }
    svg << "<text x='" << ml + pw / 2 << "' y='" << height - 12
        << "' text-anchor='middle' font-family='sans-serif' font-size='12'>time step</text>\n";
    svg << "<text x='18' y='" << mt + ph / 2
        << "' font-family='sans-serif' font-size='12' transform='rotate(-90 18 " << mt + ph / 2
        << ")'>IoU</text>\n";

    int idx = 0;
    double legend_y = mt + 10;
    for (const auto& [name, s] : series) {
        const char* color = kColors[idx % 8];
        std::ostringstream pts;
        for (std::size_t k = 0; k < s.iou_by_offset.size(); ++k)
            pts << (k ? " " : "") << sx(double(k)) << "," << sy(s.iou_by_offset[k]);
        svg << "<polyline fill='none' stroke='" << color << "' stroke-width='2'"
            << (s.dashed ? " stroke-dasharray='7,5'" : "") << " points='" << pts.str() << "'/>\n";
        for (std::size_t k = 0; k < s.iou_by_offset.size(); ++k)
            svg << "<circle cx='" << sx(double(k)) << "' cy='" << sy(s.iou_by_offset[k])
                << "' r='3' fill='" << color << "'/>\n";
        svg << "<line x1='" << ml + pw + 12 << "' y1='" << legend_y << "' x2='" << ml + pw + 40
            << "' y2='" << legend_y << "' stroke='" << color << "' stroke-width='2'"
            << (s.dashed ? " stroke-dasharray='7,5'" : "") << "/>\n";
        svg << "<text x='" << ml + pw + 46 << "' y='" << legend_y + 4
            << "' font-family='sans-serif' font-size='11'>" << name << "</text>\n";
        legend_y += 18;
        ++idx;
    }
    svg << "</svg>\n";
    return svg.str();
}

// Rebuilds the curve plot from report rows: offset-indexed variants become
// series; `_stream` summary rows are skipped.
inline void plot_report(const std::filesystem::path& svg_path, const std::vector<ReportRow>& rows,
                        const std::string& title) {
    std::map<std::string, PlotSeries> series;
    for (const auto& r : rows) {
        if (r.variant.size() > 7 && r.variant.substr(r.variant.size() - 7) == "_stream") continue;
        auto& s = series[r.variant];
        if (int(s.iou_by_offset.size()) <= r.offset) s.iou_by_offset.resize(std::size_t(r.offset) + 1);
        s.iou_by_offset[std::size_t(r.offset)] = r.iou;
        s.dashed = r.variant == "base" || r.variant.find("baseline") != std::string::npos;
    }
    atomic_write_file(svg_path, render_curves_svg(series, title));
}

}  // namespace tbev
