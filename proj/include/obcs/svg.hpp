#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "obcs/kvtext.hpp"

namespace obcs {

struct SvgSeries {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

// Minimal self-contained line chart: linear axes, ticks, one polyline per
// series, legend in the top-right corner.
inline std::string render_line_chart(const std::string& title, const std::string& x_label,
                                     const std::string& y_label,
                                     const std::vector<SvgSeries>& series) {
    const double width = 640.0;
    const double height = 480.0;
    const double ml = 70.0, mr = 20.0, mt = 40.0, mb = 55.0;
    const double plot_w = width - ml - mr;
    const double plot_h = height - mt - mb;

    double xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;
    bool first = true;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (first) {
                xmin = xmax = s.x[i];
                ymin = ymax = s.y[i];
                first = false;
            }
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    if (xmax == xmin) xmax = xmin + 1.0;
    if (ymax == ymin) ymax = ymin + 1.0;
    ymin = std::min(ymin, 0.0);  // anchor the error axis at zero

    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * plot_w; };
    auto py = [&](double y) { return mt + (1.0 - (y - ymin) / (ymax - ymin)) * plot_h; };
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%g", v);
        return std::string(buf);
    };

    const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" "
           "viewBox=\"0 0 640 480\">\n";
    svg += "<rect width=\"640\" height=\"480\" fill=\"white\"/>\n";
    svg += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"16\">" + title + "</text>\n";

    // axes
    svg += "<line x1=\"" + num(ml) + "\" y1=\"" + num(mt) + "\" x2=\"" + num(ml) + "\" y2=\"" +
           num(mt + plot_h) + "\" stroke=\"black\"/>\n";
    svg += "<line x1=\"" + num(ml) + "\" y1=\"" + num(mt + plot_h) + "\" x2=\"" +
           num(ml + plot_w) + "\" y2=\"" + num(mt + plot_h) + "\" stroke=\"black\"/>\n";

    const int ticks = 5;
    for (int t = 0; t <= ticks; ++t) {
        const double fx = xmin + (xmax - xmin) * t / ticks;
        const double fy = ymin + (ymax - ymin) * t / ticks;
        svg += "<line x1=\"" + num(px(fx)) + "\" y1=\"" + num(mt + plot_h) + "\" x2=\"" +
               num(px(fx)) + "\" y2=\"" + num(mt + plot_h + 5) + "\" stroke=\"black\"/>\n";
        svg += "<text x=\"" + num(px(fx)) + "\" y=\"" + num(mt + plot_h + 20) +
               "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + num(fx) +
               "</text>\n";
        svg += "<line x1=\"" + num(ml - 5) + "\" y1=\"" + num(py(fy)) + "\" x2=\"" + num(ml) +
               "\" y2=\"" + num(py(fy)) + "\" stroke=\"black\"/>\n";
        svg += "<text x=\"" + num(ml - 9) + "\" y=\"" + num(py(fy) + 4) +
               "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + num(fy) +
               "</text>\n";
    }
    svg += "<text x=\"" + num(ml + plot_w / 2) + "\" y=\"" + num(height - 12) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" + x_label +
           "</text>\n";
    svg += "<text x=\"18\" y=\"" + num(mt + plot_h / 2) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
           "transform=\"rotate(-90 18 " + num(mt + plot_h / 2) + ")\">" + y_label + "</text>\n";

    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* color = colors[s % 5];
        std::string pts;
        for (std::size_t i = 0; i < series[s].x.size(); ++i) {
            if (i) pts += ' ';
            pts += num(px(series[s].x[i])) + "," + num(py(series[s].y[i]));
        }
        svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
               "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
        const double ly = mt + 16.0 + 18.0 * static_cast<double>(s);
        svg += "<line x1=\"" + num(ml + plot_w - 130) + "\" y1=\"" + num(ly - 4) + "\" x2=\"" +
               num(ml + plot_w - 105) + "\" y2=\"" + num(ly - 4) + "\" stroke=\"" + color +
               "\" stroke-width=\"2\"/>\n";
        svg += "<text x=\"" + num(ml + plot_w - 100) + "\" y=\"" + num(ly) +
               "\" font-family=\"sans-serif\" font-size=\"12\">" + series[s].name + "</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

}  // namespace obcs
