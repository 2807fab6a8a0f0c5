#pragma once

#include <string>
#include <vector>

#include "rlvr/trainer.hpp"

namespace rlvr {

// Renders metric columns as stacked line charts in a self-contained SVG with
// the source rows embedded as a CSV data table. Output bytes are a pure
// function of the inputs.
std::string render_metrics_svg(const std::vector<MetricsRow>& rows,
                               const std::vector<std::string>& columns);

double metrics_column(const MetricsRow& row, const std::string& column);
std::vector<std::string> metrics_column_names();

}  // namespace rlvr
