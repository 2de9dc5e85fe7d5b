#pragma once

#include <string>
#include <vector>

#include "recrl/eval.hpp"

namespace recrl {

struct ChartSeries {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

// Minimal static SVG renderers; no external tooling.
std::string render_line_chart(const std::string& title,
                              const std::vector<ChartSeries>& series,
                              const std::string& x_label,
                              const std::string& y_label);

std::string render_bar_chart(const std::string& title,
                             const std::vector<std::string>& labels,
                             const std::vector<double>& values,
                             const std::string& y_label);

// Renders a training run's metrics.csv into SVG charts under out_dir:
// reward_vs_ndcg.svg (both series over iterations, each min-max normalized)
// and diversity.svg. A run without an NDCG@10 series is a DataError.
void write_run_report(const std::string& run_dir, const std::string& out_dir);

// Renders a sweep directory's table into an NDCG@10 bar chart plus, for the
// sampling axis, per-strategy diversity curves.
void write_sweep_report(const std::string& sweep_dir, const std::string& out_dir);

}  // namespace recrl
