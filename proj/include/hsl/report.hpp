#pragma once

#include <string>
#include <vector>

#include "hsl/trainer.hpp"

namespace hsl {

// Parses the epoch-log CSV written during training (metric columns only;
// counts are not logged per epoch).
std::vector<EpochRecord> parse_epoch_log_csv(const std::string& text);

// Self-contained SVG with two panels: training loss per epoch and validation
// pixel IoU per epoch, one polyline per stage.
std::string render_curves_svg(const std::vector<EpochRecord>& log);

// Plain-text summary: best epoch per stage with its validation metrics.
std::string summary_table(const std::vector<EpochRecord>& log);

}  // namespace hsl
