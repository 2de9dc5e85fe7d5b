#include "recrl/report.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace recrl {

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 400;
constexpr int kMarginLeft = 60;
constexpr int kMarginRight = 20;
constexpr int kMarginTop = 40;
constexpr int kMarginBottom = 50;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

struct Range {
    double lo = 0.0;
    double hi = 1.0;
};

Range series_range(const std::vector<ChartSeries>& series, bool use_y) {
    Range r{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const auto& s : series) {
        const auto& v = use_y ? s.y : s.x;
        for (double x : v) {
            r.lo = std::min(r.lo, x);
            r.hi = std::max(r.hi, x);
        }
    }
    if (!std::isfinite(r.lo) || !std::isfinite(r.hi)) return {0.0, 1.0};
    if (r.lo == r.hi) {
        r.lo -= 0.5;
        r.hi += 0.5;
    }
    return r;
}

double map_x(double x, const Range& r) {
    return kMarginLeft + (x - r.lo) / (r.hi - r.lo) * (kWidth - kMarginLeft - kMarginRight);
}

double map_y(double y, const Range& r) {
    return kHeight - kMarginBottom -
           (y - r.lo) / (r.hi - r.lo) * (kHeight - kMarginTop - kMarginBottom);
}

void chart_frame(std::ostringstream& svg, const std::string& title,
                 const std::string& x_label, const std::string& y_label) {
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << kWidth << "' height='"
        << kHeight << "' viewBox='0 0 " << kWidth << ' ' << kHeight << "'>\n";
    svg << "<rect width='" << kWidth << "' height='" << kHeight << "' fill='white'/>\n";
    svg << "<text x='" << kWidth / 2 << "' y='24' text-anchor='middle' font-size='16' "
        << "font-family='sans-serif'>" << title << "</text>\n";
    svg << "<line x1='" << kMarginLeft << "' y1='" << kHeight - kMarginBottom << "' x2='"
        << kWidth - kMarginRight << "' y2='" << kHeight - kMarginBottom
        << "' stroke='black'/>\n";
    svg << "<line x1='" << kMarginLeft << "' y1='" << kMarginTop << "' x2='" << kMarginLeft
        << "' y2='" << kHeight - kMarginBottom << "' stroke='black'/>\n";
    svg << "<text x='" << kWidth / 2 << "' y='" << kHeight - 12
        << "' text-anchor='middle' font-size='12' font-family='sans-serif'>" << x_label
        << "</text>\n";
    svg << "<text x='16' y='" << kHeight / 2
        << "' text-anchor='middle' font-size='12' font-family='sans-serif' "
        << "transform='rotate(-90 16 " << kHeight / 2 << ")'>" << y_label << "</text>\n";
}

}  // namespace

std::string render_line_chart(const std::string& title,
                              const std::vector<ChartSeries>& series,
                              const std::string& x_label,
                              const std::string& y_label) {
    std::ostringstream svg;
    chart_frame(svg, title, x_label, y_label);
    const Range rx = series_range(series, false);
    const Range ry = series_range(series, true);

    // Axis extremes.
    svg << "<text x='" << kMarginLeft << "' y='" << kHeight - kMarginBottom + 16
        << "' font-size='10' font-family='sans-serif'>" << format_double(rx.lo) << "</text>\n";
    svg << "<text x='" << kWidth - kMarginRight << "' y='" << kHeight - kMarginBottom + 16
        << "' text-anchor='end' font-size='10' font-family='sans-serif'>"
        << format_double(rx.hi) << "</text>\n";
    svg << "<text x='" << kMarginLeft - 6 << "' y='" << kHeight - kMarginBottom
        << "' text-anchor='end' font-size='10' font-family='sans-serif'>"
        << format_double(ry.lo) << "</text>\n";
    svg << "<text x='" << kMarginLeft - 6 << "' y='" << kMarginTop + 4
        << "' text-anchor='end' font-size='10' font-family='sans-serif'>"
        << format_double(ry.hi) << "</text>\n";

    for (std::size_t s = 0; s < series.size(); ++s) {
        const auto& sr = series[s];
        const char* color = kPalette[s % (sizeof(kPalette) / sizeof(kPalette[0]))];
        svg << "<polyline fill='none' stroke='" << color << "' stroke-width='1.5' points='";
        for (std::size_t i = 0; i < sr.x.size(); ++i) {
            svg << map_x(sr.x[i], rx) << ',' << map_y(sr.y[i], ry) << ' ';
        }
        svg << "'/>\n";
        svg << "<text x='" << kWidth - kMarginRight - 8 << "' y='"
            << kMarginTop + 16 * static_cast<int>(s)
            << "' text-anchor='end' font-size='11' font-family='sans-serif' fill='" << color
            << "'>" << sr.name << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

std::string render_bar_chart(const std::string& title,
                             const std::vector<std::string>& labels,
                             const std::vector<double>& values,
                             const std::string& y_label) {
    std::ostringstream svg;
    chart_frame(svg, title, "", y_label);
    double hi = 0.0;
    for (double v : values) hi = std::max(hi, v);
    if (hi == 0.0) hi = 1.0;
    const Range ry{0.0, hi * 1.05};
    const double span = kWidth - kMarginLeft - kMarginRight;
    const double slot = span / static_cast<double>(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double x = kMarginLeft + slot * static_cast<double>(i) + slot * 0.15;
        const double y = map_y(values[i], ry);
        const double h = (kHeight - kMarginBottom) - y;
        svg << "<rect x='" << x << "' y='" << y << "' width='" << slot * 0.7 << "' height='"
            << h << "' fill='" << kPalette[0] << "'/>\n";
        svg << "<text x='" << x + slot * 0.35 << "' y='" << kHeight - kMarginBottom + 16
            << "' text-anchor='middle' font-size='11' font-family='sans-serif'>" << labels[i]
            << "</text>\n";
        svg << "<text x='" << x + slot * 0.35 << "' y='" << y - 4
            << "' text-anchor='middle' font-size='10' font-family='sans-serif'>"
            << format_double(values[i]) << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

namespace {

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path);
    out << content;
}

std::vector<double> normalized(const std::vector<double>& v) {
    double lo = *std::min_element(v.begin(), v.end());
    double hi = *std::max_element(v.begin(), v.end());
    std::vector<double> out(v.size(), 0.0);
    if (hi == lo) return out;
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - lo) / (hi - lo);
    return out;
}

}  // namespace

void write_run_report(const std::string& run_dir, const std::string& out_dir) {
    namespace fs = std::filesystem;
    const std::string metrics_path = (fs::path(run_dir) / "metrics.csv").string();
    MetricSeries series = MetricSeries::load_csv(metrics_path);
    fs::create_directories(out_dir);

    MonitorResult monitor = hacking_monitor(series);  // throws on missing series
    std::vector<double> xs(monitor.iterations.begin(), monitor.iterations.end());
    ChartSeries reward{"mean reward (normalized)", xs, normalized(monitor.reward)};
    ChartSeries ndcg{"NDCG@10 (normalized)", xs, normalized(monitor.ndcg10)};
    std::string caption = "reward slope " + format_double(monitor.summary.reward_slope) +
                          ", NDCG@10 slope " + format_double(monitor.summary.ndcg_slope) +
                          (monitor.summary.misaligned ? " [misaligned]" : "");
    write_text((fs::path(out_dir) / "reward_vs_ndcg.svg").string(),
               render_line_chart(caption, {reward, ndcg}, "iteration", "normalized value"));
    monitor.save_csv((fs::path(out_dir) / "reward_vs_ndcg.csv").string());

    ChartSeries div;
    div.name = "group diversity";
    for (const auto& row : series.rows) {
        if (std::isnan(row.diversity_mean)) continue;
        div.x.push_back(row.iteration);
        div.y.push_back(row.diversity_mean);
    }
    if (!div.x.empty()) {
        write_text((fs::path(out_dir) / "diversity.svg").string(),
                   render_line_chart("Generation diversity", {div}, "iteration", "unique fraction"));
    }
}

void write_sweep_report(const std::string& sweep_dir, const std::string& out_dir) {
    namespace fs = std::filesystem;
    const std::string table_path = (fs::path(sweep_dir) / "sweep_table.csv").string();
    std::ifstream in(table_path);
    if (!in) throw DataError("cannot open sweep table: " + table_path);
    fs::create_directories(out_dir);

    std::string line;
    std::getline(in, line);  // header
    std::string axis;
    std::vector<std::string> labels;
    std::vector<double> ndcg10;
    std::vector<std::string> run_dirs;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() < 11 || cells[2] != "ok") continue;
        axis = cells[0];
        labels.push_back(cells[1]);
        ndcg10.push_back(std::stod(cells[8]));
        run_dirs.push_back(cells[10]);
    }
    if (labels.empty()) throw DataError("missing series: sweep table has no successful runs");

    write_text((fs::path(out_dir) / ("ndcg10_by_" + axis + ".svg")).string(),
               render_bar_chart("NDCG@10 by " + axis, labels, ndcg10, "NDCG@10"));

    if (axis == "sampling") {
        std::vector<ChartSeries> curves;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            MetricSeries run = MetricSeries::load_csv(
                (fs::path(run_dirs[i]) / "metrics.csv").string());
            ChartSeries s;
            s.name = labels[i];
            for (const auto& row : run.rows) {
                if (std::isnan(row.diversity_mean)) continue;
                s.x.push_back(row.iteration);
                s.y.push_back(row.diversity_mean);
            }
            curves.push_back(std::move(s));
        }
        write_text((fs::path(out_dir) / "diversity_by_sampling.svg").string(),
                   render_line_chart("Diversity by sampling strategy", curves, "iteration",
                                     "unique fraction"));
    }
}

}  // namespace recrl
