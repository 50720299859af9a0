#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace umbra {

/// A learning-curve series: mean line plus an optional +-band (same length).
struct PlotSeries {
    std::vector<double> x;
    std::vector<double> mean;
    std::vector<double> band;  // one-sided half width; empty = no band
};

/// Writes a self-contained SVG line plot (no external assets). Throws on
/// empty input before creating the file.
inline void write_svg_plot(const std::string& path, const PlotSeries& series,
                           const std::string& title, const std::string& xlabel,
                           const std::string& ylabel) {
    if (series.x.empty() || series.x.size() != series.mean.size())
        throw std::invalid_argument("plot: empty or inconsistent series");
    if (!series.band.empty() && series.band.size() != series.x.size())
        throw std::invalid_argument("plot: band length does not match series");

    const int width = 760, height = 460;
    const int ml = 70, mr = 20, mt = 40, mb = 55;  // margins
    double xmin = series.x.front(), xmax = series.x.back();
    double ymin = 1e300, ymax = -1e300;
    for (std::size_t i = 0; i < series.x.size(); ++i) {
        const double b = series.band.empty() ? 0.0 : series.band[i];
        ymin = std::min(ymin, series.mean[i] - b);
        ymax = std::max(ymax, series.mean[i] + b);
    }
    if (xmin == xmax) xmax = xmin + 1;
    if (ymin == ymax) {
        ymin -= 1;
        ymax += 1;
    }
    const double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;

    auto px = [&](double x) {
        return ml + (x - xmin) / (xmax - xmin) * (width - ml - mr);
    };
    auto py = [&](double y) {
        return height - mb - (y - ymin) / (ymax - ymin) * (height - mt - mb);
    };
    auto fmt = [](double v) {
        std::ostringstream os;
        os.precision(6);
        os << v;
        return os.str();
    };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"16\">" << title << "</text>\n";

    // band
    if (!series.band.empty()) {
        svg << "<path d=\"M";
        for (std::size_t i = 0; i < series.x.size(); ++i)
            svg << px(series.x[i]) << ' ' << py(series.mean[i] + series.band[i]) << " L";
        for (std::size_t i = series.x.size(); i-- > 0;)
            svg << px(series.x[i]) << ' ' << py(series.mean[i] - series.band[i])
                << (i == 0 ? "" : " L");
        svg << " Z\" fill=\"#4878cf\" fill-opacity=\"0.25\" stroke=\"none\"/>\n";
    }

    // mean line
    svg << "<polyline fill=\"none\" stroke=\"#4878cf\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < series.x.size(); ++i)
        svg << px(series.x[i]) << ',' << py(series.mean[i]) << ' ';
    svg << "\"/>\n";

    // axes
    svg << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\"" << width - mr
        << "\" y2=\"" << height - mb << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
        << height - mb << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double xv = xmin + (xmax - xmin) * i / 5.0;
        const double yv = ymin + (ymax - ymin) * i / 5.0;
        svg << "<text x=\"" << px(xv) << "\" y=\"" << height - mb + 18
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
            << fmt(xv) << "</text>\n";
        svg << "<text x=\"" << ml - 8 << "\" y=\"" << py(yv) + 4
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt(yv)
            << "</text>\n";
        svg << "<line x1=\"" << px(xv) << "\" y1=\"" << height - mb << "\" x2=\"" << px(xv)
            << "\" y2=\"" << height - mb + 4 << "\" stroke=\"black\"/>\n";
        svg << "<line x1=\"" << ml - 4 << "\" y1=\"" << py(yv) << "\" x2=\"" << ml << "\" y2=\""
            << py(yv) << "\" stroke=\"black\"/>\n";
    }
    svg << "<text x=\"" << (ml + width - mr) / 2 << "\" y=\"" << height - 12
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" << xlabel
        << "</text>\n";
    svg << "<text x=\"18\" y=\"" << (mt + height - mb) / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
        << "transform=\"rotate(-90 18 " << (mt + height - mb) / 2 << ")\">" << ylabel
        << "</text>\n";
    svg << "</svg>\n";

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("plot: cannot open '" + path + "' for writing");
    os << svg.str();
}

}  // namespace umbra
