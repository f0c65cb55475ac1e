#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "lamcast/common.hpp"

namespace lamcast {

struct PlotSeries {
    std::string label;
    std::vector<double> x, y;
};

namespace detail {

inline std::string fmt(const char* pattern, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), pattern, v);
    return buf;
}

// Largest "nice" step (1, 2 or 5 times a power of ten) giving <= max_ticks
// intervals over the span.
inline double nice_step(double span, int max_ticks) {
    require(span > 0 && max_ticks > 0, "nice_step: bad arguments");
    const double raw = span / double(max_ticks);
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    for (double m : {1.0, 2.0, 5.0, 10.0})
        if (mag * m >= raw) return mag * m;
    return mag * 10.0;
}

inline std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '&') out += "&amp;";
        else if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else out += c;
    }
    return out;
}

}  // namespace detail

// Minimal deterministic SVG line plot: fixed size, fixed palette, fixed
// number formatting, no timestamps or generator metadata, so identical
// inputs render byte-identical files.
inline std::string render_line_plot(const std::string& title, const std::string& xlabel,
                                    const std::string& ylabel,
                                    const std::vector<PlotSeries>& series) {
    require(!series.empty(), "render_line_plot: no series");
    const int W = 720, H = 460;
    const int ml = 70, mr = 180, mt = 48, mb = 56;  // margins; legend lives right
    const double pw = W - ml - mr, ph = H - mt - mb;

    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series) {
        require(s.x.size() == s.y.size() && !s.x.empty(),
                "render_line_plot: series '" + s.label + "' malformed");
        for (double v : s.x) xmin = std::min(xmin, v), xmax = std::max(xmax, v);
        for (double v : s.y) {
            require(is_finite_value(v), "render_line_plot: non-finite value in '" + s.label + "'");
            ymin = std::min(ymin, v), ymax = std::max(ymax, v);
        }
    }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + (ymin == 0 ? 1 : std::abs(ymin) * 0.1);
    const double ypad = 0.06 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;

    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
    auto py = [&](double y) { return mt + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

    static const char* palette[] = {"#1f6fb4", "#d1495b", "#3a9d5d", "#8f5aa8",
                                    "#c78a2d", "#4f4f4f"};
    const size_t ncolors = sizeof(palette) / sizeof(palette[0]);

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(W) +
           "\" height=\"" + std::to_string(H) + "\" viewBox=\"0 0 " + std::to_string(W) + " " +
           std::to_string(H) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<text x=\"" + std::to_string(ml) + "\" y=\"26\" font-family=\"monospace\" "
           "font-size=\"15\" fill=\"#222\">" + detail::xml_escape(title) + "</text>\n";

    // Gridlines and ticks.
    const double xstep = detail::nice_step(xmax - xmin, 8);
    const double ystep = detail::nice_step(ymax - ymin, 6);
    for (double t = std::ceil(xmin / xstep) * xstep; t <= xmax + 1e-9 * xstep; t += xstep) {
        const std::string x = detail::fmt("%.2f", px(t));
        svg += "<line x1=\"" + x + "\" y1=\"" + std::to_string(mt) + "\" x2=\"" + x +
               "\" y2=\"" + std::to_string(mt + int(ph)) +
               "\" stroke=\"#e5e5e5\" stroke-width=\"1\"/>\n";
        svg += "<text x=\"" + x + "\" y=\"" + std::to_string(mt + int(ph) + 18) +
               "\" font-family=\"monospace\" font-size=\"11\" fill=\"#444\" "
               "text-anchor=\"middle\">" + detail::fmt("%g", t) + "</text>\n";
    }
    for (double t = std::ceil(ymin / ystep) * ystep; t <= ymax + 1e-9 * ystep; t += ystep) {
        const std::string y = detail::fmt("%.2f", py(t));
        svg += "<line x1=\"" + std::to_string(ml) + "\" y1=\"" + y + "\" x2=\"" +
               std::to_string(ml + int(pw)) + "\" y2=\"" + y +
               "\" stroke=\"#e5e5e5\" stroke-width=\"1\"/>\n";
        svg += "<text x=\"" + std::to_string(ml - 8) + "\" y=\"" + y +
               "\" font-family=\"monospace\" font-size=\"11\" fill=\"#444\" "
               "text-anchor=\"end\" dominant-baseline=\"middle\">" + detail::fmt("%.4g", t) +
               "</text>\n";
    }

    // Axes frame and labels.
    svg += "<rect x=\"" + std::to_string(ml) + "\" y=\"" + std::to_string(mt) + "\" width=\"" +
           detail::fmt("%.2f", pw) + "\" height=\"" + detail::fmt("%.2f", ph) +
           "\" fill=\"none\" stroke=\"#222\" stroke-width=\"1\"/>\n";
    svg += "<text x=\"" + detail::fmt("%.2f", ml + pw / 2) + "\" y=\"" +
           std::to_string(H - 14) + "\" font-family=\"monospace\" font-size=\"13\" "
           "fill=\"#222\" text-anchor=\"middle\">" + detail::xml_escape(xlabel) + "</text>\n";
    svg += "<text x=\"20\" y=\"" + detail::fmt("%.2f", mt + ph / 2) +
           "\" font-family=\"monospace\" font-size=\"13\" fill=\"#222\" "
           "text-anchor=\"middle\" transform=\"rotate(-90 20 " +
           detail::fmt("%.2f", mt + ph / 2) + ")\">" + detail::xml_escape(ylabel) +
           "</text>\n";

    // Data polylines and legend.
    for (size_t i = 0; i < series.size(); ++i) {
        const char* color = palette[i % ncolors];
        std::string pts;
        for (size_t k = 0; k < series[i].x.size(); ++k) {
            pts += detail::fmt("%.2f", px(series[i].x[k])) + "," +
                   detail::fmt("%.2f", py(series[i].y[k]));
            if (k + 1 < series[i].x.size()) pts += " ";
        }
        svg += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + color +
               "\" stroke-width=\"1.8\"/>\n";
        const int ly = mt + 14 + int(i) * 18;
        svg += "<line x1=\"" + std::to_string(W - mr + 12) + "\" y1=\"" + std::to_string(ly) +
               "\" x2=\"" + std::to_string(W - mr + 34) + "\" y2=\"" + std::to_string(ly) +
               "\" stroke=\"" + color + "\" stroke-width=\"1.8\"/>\n";
        svg += "<text x=\"" + std::to_string(W - mr + 40) + "\" y=\"" + std::to_string(ly + 4) +
               "\" font-family=\"monospace\" font-size=\"11\" fill=\"#222\">" +
               detail::xml_escape(series[i].label) + "</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

}  // namespace lamcast
